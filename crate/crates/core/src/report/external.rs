use std::time::Duration;

use serde_json::{json, Value};

use crate::error::{Error, Result};

use super::{Findings, Report, NOTE_ENRICHMENT_EMPTY};

/// Prompt in, text out, within `timeout`.
pub trait TextGenerator {
    fn generate(&self, prompt: &str, timeout: Duration) -> Result<String>;
}

/// Returns the prompt unchanged. Deterministic stand-in for tests and demos.
#[derive(Debug, Clone, Copy, Default)]
pub struct EchoGenerator;

impl TextGenerator for EchoGenerator {
    fn generate(&self, prompt: &str, _timeout: Duration) -> Result<String> {
        Ok(prompt.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HttpGeneratorConfig {
    /// Full URL of a chat-completions style endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; unset means no auth header.
    pub token_env: String,
}

impl Default for HttpGeneratorConfig {
    fn default() -> Self {
        HttpGeneratorConfig {
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model: "default".into(),
            token_env: "DRSEG_LLM_TOKEN".into(),
        }
    }
}

/// Posts `{"model", "messages": [system, user]}` and reads
/// `choices[0].message.content` from the JSON reply.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    pub config: HttpGeneratorConfig,
}

impl HttpGenerator {
    pub fn new(config: HttpGeneratorConfig) -> Self {
        HttpGenerator { config }
    }
}

impl TextGenerator for HttpGenerator {
    fn generate(&self, prompt: &str, timeout: Duration) -> Result<String> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let mut req = agent.post(&self.config.endpoint);
        if let Ok(token) = std::env::var(&self.config.token_env) {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": "You write concise referral notes for diabetic retinopathy screening. Do not change the urgency tier."},
                {"role": "user", "content": prompt},
            ],
        });
        let reply: Value = req
            .send_json(body)
            .map_err(|e| Error::External(e.to_string()))?
            .into_json()
            .map_err(|e| Error::External(format!("reply is not JSON: {e}")))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::External("reply lacks choices[0].message.content".into()))
    }
}

/// Serialized findings plus the deterministic recommendation.
pub fn build_prompt(f: &Findings, base: &Report) -> String {
    let mut s = format!(
        "Screening result: grade {} ({}), urgency {}.\n",
        f.grade, base.grade_label, base.urgency
    );
    s += "Lesion findings:\n";
    for line in &base.lesion_lines {
        s += &format!("- {line}\n");
    }
    s += &format!("Draft recommendation: {}\n", base.recommendation);
    s += "Structured findings:\n";
    s += &base.structured_block();
    s += "Rewrite the draft as a short note for the referring clinician, listing suggested tests and treatment.\n";
    s
}

/// Adds generator text to `base` as a narrative. Never fails: without a
/// client the base report is returned unchanged, and any error or empty
/// reply only adds a note. Urgency and findings are never touched.
pub fn enrich_via_external(f: &Findings, base: &Report, client: Option<&dyn TextGenerator>, timeout: Duration) -> Report {
    let Some(client) = client else {
        return base.clone();
    };
    let mut out = base.clone();
    match client.generate(&build_prompt(f, base), timeout) {
        Ok(text) if text.trim().is_empty() => out.notes.push(NOTE_ENRICHMENT_EMPTY.to_string()),
        Ok(text) => {
            out.narrative = Some(text.trim().to_string());
            out.notes.push("narrative supplied by external generator".to_string());
        }
        Err(e) => {
            log::warn!("external enrichment failed: {e}");
            out.notes.push(format!("external enrichment unavailable ({e}); deterministic report kept"));
        }
    }
    out
}
