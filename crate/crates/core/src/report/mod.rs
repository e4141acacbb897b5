//! Deterministic referral reports from lesion findings and a DR grade, with
//! optional free-text enrichment by an external generator.

mod external;
mod template;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use external::{build_prompt, enrich_via_external, EchoGenerator, HttpGenerator, HttpGeneratorConfig, TextGenerator};
pub use template::{Templates, DEFAULT_TEMPLATES};

/// Fraction of foreground pixels at or above which a lesion counts as present.
pub const DEFAULT_PRESENCE_THRESHOLD: f64 = 0.001;

pub const NOTE_ENRICHMENT_EMPTY: &str = "external enrichment empty";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Lesion {
    BloodVesselAbnormal,
    Haemorrhage,
    HardExudate,
    Microaneurysm,
    SoftExudate,
    OpticDiscFlag,
}

impl Lesion {
    pub const ALL: [Lesion; 6] = [
        Lesion::BloodVesselAbnormal,
        Lesion::Haemorrhage,
        Lesion::HardExudate,
        Lesion::Microaneurysm,
        Lesion::SoftExudate,
        Lesion::OpticDiscFlag,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Lesion::BloodVesselAbnormal => "blood_vessel_abnormal",
            Lesion::Haemorrhage => "haemorrhage",
            Lesion::HardExudate => "hard_exudate",
            Lesion::Microaneurysm => "microaneurysm",
            Lesion::SoftExudate => "soft_exudate",
            Lesion::OpticDiscFlag => "optic_disc_flag",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Lesion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Lesion::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .ok_or_else(|| Error::invalid("lesion", format!("unknown lesion {s:?}")))
    }
}

impl fmt::Display for Lesion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LesionState {
    Present,
    Absent,
    /// No mask was supplied for this lesion.
    Unknown,
}

impl LesionState {
    pub const ALL: [LesionState; 3] = [LesionState::Present, LesionState::Absent, LesionState::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            LesionState::Present => "present",
            LesionState::Absent => "absent",
            LesionState::Unknown => "unknown",
        }
    }
}

impl FromStr for LesionState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LesionState::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::invalid("lesion state", format!("expected present/absent/unknown, got {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LesionFinding {
    pub state: LesionState,
    /// Foreground pixel fraction when a mask was measured.
    pub fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Findings {
    pub grade: u8,
    pub presence_threshold: f64,
    /// Indexed in `Lesion::ALL` order.
    pub lesions: [LesionFinding; 6],
}

fn check_grade(grade: u8) -> Result<()> {
    if grade > 4 {
        return Err(Error::invalid("findings", format!("grade {grade} outside 0..=4")));
    }
    Ok(())
}

impl Findings {
    /// Findings from explicit states, without measured fractions.
    pub fn from_states(grade: u8, states: [LesionState; 6]) -> Result<Self> {
        check_grade(grade)?;
        Ok(Findings {
            grade,
            presence_threshold: DEFAULT_PRESENCE_THRESHOLD,
            lesions: states.map(|state| LesionFinding { state, fraction: None }),
        })
    }

    pub fn get(&self, lesion: Lesion) -> LesionFinding {
        self.lesions[lesion.index()]
    }

    pub fn present(&self, lesion: Lesion) -> bool {
        self.get(lesion).state == LesionState::Present
    }

    pub fn validate(&self) -> Result<()> {
        check_grade(self.grade)?;
        if !(0.0..=1.0).contains(&self.presence_threshold) {
            return Err(Error::invalid("findings", "presence threshold outside [0, 1]"));
        }
        for (l, f) in Lesion::ALL.iter().zip(&self.lesions) {
            if let Some(fr) = f.fraction {
                if !(0.0..=1.0).contains(&fr) {
                    return Err(Error::invalid("findings", format!("{l} fraction {fr} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

/// Lesions missing from `masks` become [`LesionState::Unknown`].
pub fn findings_from_masks(masks: &BTreeMap<Lesion, Tensor<f32>>, presence_threshold: f64, grade: u8) -> Result<Findings> {
    check_grade(grade)?;
    if !(0.0..=1.0).contains(&presence_threshold) {
        return Err(Error::invalid("findings_from_masks", format!("threshold {presence_threshold} outside [0, 1]")));
    }
    let mut lesions = [LesionFinding {
        state: LesionState::Unknown,
        fraction: None,
    }; 6];
    for (&lesion, mask) in masks {
        if mask.is_empty() {
            return Err(Error::invalid("findings_from_masks", format!("{lesion} mask is empty")));
        }
        if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("findings_from_masks", format!("{lesion} mask is not binary ({v})")));
        }
        let fraction = mask.sum() as f64 / mask.len() as f64;
        lesions[lesion.index()] = LesionFinding {
            state: if fraction >= presence_threshold {
                LesionState::Present
            } else {
                LesionState::Absent
            },
            fraction: Some(fraction),
        };
    }
    Ok(Findings {
        grade,
        presence_threshold,
        lesions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Urgency {
    Routine,
    Soon,
    Urgent,
    Immediate,
}

impl Urgency {
    pub const ALL: [Urgency; 4] = [Urgency::Routine, Urgency::Soon, Urgency::Urgent, Urgency::Immediate];

    pub fn for_grade(grade: u8) -> Self {
        match grade {
            0 | 1 => Urgency::Routine,
            2 => Urgency::Soon,
            3 => Urgency::Urgent,
            _ => Urgency::Immediate,
        }
    }

    pub fn raised(self) -> Self {
        match self {
            Urgency::Routine => Urgency::Soon,
            Urgency::Soon => Urgency::Urgent,
            _ => Urgency::Immediate,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Urgency::Routine => "routine",
            Urgency::Soon => "soon",
            Urgency::Urgent => "urgent",
            Urgency::Immediate => "immediate",
        }
    }
}

impl FromStr for Urgency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Urgency::ALL
            .into_iter()
            .find(|u| u.as_str() == s)
            .ok_or_else(|| Error::invalid("urgency", format!("unknown tier {s:?}")))
    }
}

impl fmt::Display for Urgency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn grade_label(grade: u8) -> &'static str {
    match grade {
        0 => "no diabetic retinopathy",
        1 => "mild non-proliferative retinopathy",
        2 => "moderate non-proliferative retinopathy",
        3 => "severe non-proliferative retinopathy",
        _ => "proliferative diabetic retinopathy",
    }
}

/// Haemorrhage with grade 0 or 1 raises urgency one tier.
pub fn urgency_for(f: &Findings) -> Urgency {
    let base = Urgency::for_grade(f.grade);
    if f.present(Lesion::Haemorrhage) && f.grade <= 1 {
        base.raised()
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub grade: u8,
    pub grade_label: String,
    pub urgency: Urgency,
    pub lesion_lines: Vec<String>,
    pub recommendation: String,
    pub notes: Vec<String>,
    /// Free text from an external generator, if one supplied any.
    pub narrative: Option<String>,
    pub findings: Findings,
}

pub fn compose_report(f: &Findings, templates: &Templates) -> Result<Report> {
    f.validate()?;
    let urgency = urgency_for(f);
    let mut lesion_lines = Vec::new();
    let mut sentences = vec![templates.grade_phrase(f.grade).to_string()];
    let mut notes = Vec::new();
    for lesion in Lesion::ALL {
        let lf = f.get(lesion);
        let line = match (lf.state, lf.fraction) {
            (LesionState::Unknown, _) => {
                notes.push(format!("{lesion}: no mask supplied; excluded from findings"));
                format!("{lesion}: unknown")
            }
            (s, Some(fr)) => format!("{lesion}: {} ({:.4}% of pixels)", s.as_str(), fr * 100.0),
            (s, None) => format!("{lesion}: {}", s.as_str()),
        };
        lesion_lines.push(line);
        if lf.state == LesionState::Present {
            sentences.push(templates.lesion_phrase(f.grade, lesion).to_string());
        }
    }
    if !Lesion::ALL.iter().any(|&l| f.present(l)) {
        sentences.push(templates.get("none").to_string());
    }
    if urgency != Urgency::for_grade(f.grade) {
        notes.push(templates.get("discordance").to_string());
    }
    sentences.push(templates.urgency_phrase(urgency).to_string());
    Ok(Report {
        grade: f.grade,
        grade_label: grade_label(f.grade).to_string(),
        urgency,
        lesion_lines,
        recommendation: sentences.join(" "),
        notes,
        narrative: None,
        findings: f.clone(),
    })
}

impl Report {
    /// The fenced `findings` block: one `key=value` per line.
    pub fn structured_block(&self) -> String {
        let f = &self.findings;
        let mut s = String::from("```findings\n");
        s += &format!("grade={}\n", f.grade);
        s += &format!("urgency={}\n", self.urgency);
        s += &format!("presence_threshold={}\n", f.presence_threshold);
        for l in Lesion::ALL {
            let lf = f.get(l);
            s += &format!("{l}={}\n", lf.state.as_str());
            match lf.fraction {
                Some(fr) => s += &format!("{l}.fraction={fr}\n"),
                None => s += &format!("{l}.fraction=none\n"),
            }
        }
        s += "```\n";
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::from("Diabetic retinopathy referral report\n");
        s += &format!("Grade: {} ({})\n", self.grade, self.grade_label);
        s += &format!("Urgency: {}\n\nLesions:\n", self.urgency);
        for line in &self.lesion_lines {
            s += &format!("  - {line}\n");
        }
        s += &format!("\nRecommendation:\n  {}\n", self.recommendation);
        if let Some(n) = &self.narrative {
            s += &format!("\nNarrative:\n  {}\n", n.trim().replace('\n', "\n  "));
        }
        if !self.notes.is_empty() {
            s += "\nNotes:\n";
            for n in &self.notes {
                s += &format!("  - {n}\n");
            }
        }
        s += "\n";
        s += &self.structured_block();
        s
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Parses the first ```findings block in `text`.
pub fn parse_structured_block(text: &str) -> Result<(Findings, Urgency)> {
    const OP: &str = "parse_structured_block";
    let start = text
        .find("```findings\n")
        .ok_or_else(|| Error::invalid(OP, "no ```findings block"))?
        + "```findings\n".len();
    let body_len = text[start..]
        .find("```")
        .ok_or_else(|| Error::invalid(OP, "unterminated findings block"))?;
    let mut kv = BTreeMap::new();
    for line in text[start..start + body_len].lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::invalid(OP, format!("line without '=': {line:?}")))?;
        if kv.insert(k.trim(), v.trim()).is_some() {
            return Err(Error::invalid(OP, format!("duplicate key {k}")));
        }
    }
    let mut take = |k: &str| kv.remove(k).ok_or_else(|| Error::invalid(OP, format!("missing key {k}")));
    let number = |k: &str, v: &str| v.parse::<f64>().map_err(|_| Error::invalid(OP, format!("{k}: bad number {v:?}")));
    let grade_s = take("grade")?;
    let grade: u8 = grade_s
        .parse()
        .map_err(|_| Error::invalid(OP, format!("grade: bad integer {grade_s:?}")))?;
    let urgency: Urgency = take("urgency")?.parse()?;
    let presence_threshold = number("presence_threshold", take("presence_threshold")?)?;
    let mut lesions = [LesionFinding {
        state: LesionState::Unknown,
        fraction: None,
    }; 6];
    for l in Lesion::ALL {
        let state: LesionState = take(l.key())?.parse()?;
        let fk = format!("{l}.fraction");
        let fraction = match take(&fk)? {
            "none" => None,
            v => Some(number(&fk, v)?),
        };
        lesions[l.index()] = LesionFinding { state, fraction };
    }
    if let Some(k) = kv.keys().next() {
        return Err(Error::invalid(OP, format!("unknown key {k}")));
    }
    let f = Findings {
        grade,
        presence_threshold,
        lesions,
    };
    f.validate()?;
    Ok((f, urgency))
}
