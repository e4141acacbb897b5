use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Lesion, Urgency};

/// Built-in phrase table. Override any entry with a file of the same
/// `key=value` form; `grade.<g>.<lesion>` keys replace a lesion phrase for
/// a single grade.
pub const DEFAULT_TEMPLATES: &str = "\
# stage sentence that opens every recommendation
grade.0=No diabetic retinopathy was graded on this image.
grade.1=The grade is mild non-proliferative retinopathy, the stage defined by the occurrence of microaneurysms.
grade.2=The grade is moderate non-proliferative retinopathy, where swollen and distorted vessels start to limit perfusion.
grade.3=The grade is severe non-proliferative retinopathy with widespread loss of retinal blood supply.
grade.4=The grade is proliferative diabetic retinopathy, with new vessel growth expected.

# one sentence per detected lesion
lesion.blood_vessel_abnormal=The vessel map is abnormal; fluorescein angiography would confirm non-perfused areas.
lesion.haemorrhage=Haemorrhages were segmented; check for vitreous involvement on examination.
lesion.hard_exudate=Hard exudates were segmented; macular OCT is suggested to rule out oedema.
lesion.microaneurysm=Microaneurysms were segmented; record their extent as a baseline for follow-up.
lesion.soft_exudate=Soft exudates were segmented; review blood pressure and glycaemic control.
lesion.optic_disc_flag=The optic disc region was flagged; examine the disc for new vessels.
grade.4.blood_vessel_abnormal=The vessel map is abnormal, in keeping with neovascularisation; treatment planning should include panretinal photocoagulation or anti-VEGF review.

# closing sentence per urgency tier
urgency.routine=Continue routine screening.
urgency.soon=Book an ophthalmology review at the next available clinic.
urgency.urgent=Refer to an ophthalmologist urgently.
urgency.immediate=Arrange same-day assessment by retinal services.

none=No lesions were detected in the supplied masks.
discordance=A haemorrhage was found although the grade is 0 or 1; urgency raised one tier and manual regrading requested.
";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    phrases: BTreeMap<String, String>,
}

fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("{origin}:{}: expected key=value", i + 1)))
        })
        .collect()
}

fn known_key(k: &str) -> bool {
    let lesion = |s: &str| s.parse::<Lesion>().is_ok();
    let grade = |s: &str| matches!(s, "0" | "1" | "2" | "3" | "4");
    match k.split('.').collect::<Vec<_>>().as_slice() {
        ["none"] | ["discordance"] => true,
        ["grade", g] => grade(g),
        ["grade", g, l] => grade(g) && lesion(l),
        ["lesion", l] => lesion(l),
        ["urgency", u] => u.parse::<Urgency>().is_ok(),
        _ => false,
    }
}

impl Default for Templates {
    fn default() -> Self {
        let phrases = parse_pairs(DEFAULT_TEMPLATES, "built-in templates")
            .expect("built-in templates parse")
            .into_iter()
            .collect();
        Templates { phrases }
    }
}

impl Templates {
    /// Defaults overridden by `text`; unknown keys are rejected.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut t = Templates::default();
        for (k, v) in parse_pairs(text, origin)? {
            if !known_key(&k) {
                return Err(Error::Config(format!("{origin}: unknown template key {k:?}")));
            }
            t.phrases.insert(k, v);
        }
        Ok(t)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Templates::parse(&text, &path.display().to_string())
    }

    pub fn get(&self, key: &str) -> &str {
        self.phrases.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn grade_phrase(&self, grade: u8) -> &str {
        self.get(&format!("grade.{grade}"))
    }

    pub fn lesion_phrase(&self, grade: u8, lesion: Lesion) -> &str {
        self.phrases
            .get(&format!("grade.{grade}.{lesion}"))
            .map(String::as_str)
            .unwrap_or_else(|| self.get(&format!("lesion.{lesion}")))
    }

    pub fn urgency_phrase(&self, u: Urgency) -> &str {
        self.get(&format!("urgency.{u}"))
    }
}
