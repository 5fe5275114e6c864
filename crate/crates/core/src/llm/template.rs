//! The four prompt templates used by the synthesis workflow.
//!
//! Bodies live in `templates/*.txt` and are embedded at compile time.
//! Placeholders are written `{name}` with `name` in `[a-z_]+`; literal braces
//! elsewhere (the JSON example in the instruction prompt) never match that
//! pattern.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TEMPLATE_VERSION: &str = "v1";

pub const TASK_TYPES: [&str; 2] = ["task", "question"];
pub const EDUCATION_LEVELS: [&str; 3] = ["high school", "college", "PhD"];
pub const REASONING_TYPES: [&str; 3] = ["mathematical", "logical", "common sense"];
pub const ANSWER_WORD_LIMITS: [u32; 4] = [200, 300, 400, 500];
pub const BACKTRANSLATION_WORD_BUDGETS: [u32; 4] = [20, 50, 100, 200];
pub const QFS_WORD_CAP: usize = 300;
pub const NO_RELEVANT_INFO: &str = "No relevant information found.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    InstructionGeneration,
    Qfs,
    AnswerGeneration,
    Backtranslation,
}

impl TemplateName {
    pub const ALL: [TemplateName; 4] = [
        TemplateName::InstructionGeneration,
        TemplateName::Qfs,
        TemplateName::AnswerGeneration,
        TemplateName::Backtranslation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::InstructionGeneration => "instruction_generation",
            TemplateName::Qfs => "qfs",
            TemplateName::AnswerGeneration => "answer_generation",
            TemplateName::Backtranslation => "backtranslation",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template}: missing binding for placeholder {{{placeholder}}}")]
    Missing { template: TemplateName, placeholder: String },
    #[error("template {template}: binding {placeholder:?} has no placeholder")]
    Extra { template: TemplateName, placeholder: String },
    #[error("template {template}: text does not match the template")]
    NoMatch { template: TemplateName },
    #[error("template {template}: placeholder {{{placeholder}}} bound to different values")]
    Inconsistent { template: TemplateName, placeholder: String },
}

#[derive(Debug)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: &'static str,
}

static INSTRUCTION_GENERATION: PromptTemplate = PromptTemplate {
    name: TemplateName::InstructionGeneration,
    body: include_str!("../../templates/instruction_generation.txt"),
};
static QFS: PromptTemplate = PromptTemplate { name: TemplateName::Qfs, body: include_str!("../../templates/qfs.txt") };
static ANSWER_GENERATION: PromptTemplate = PromptTemplate {
    name: TemplateName::AnswerGeneration,
    body: include_str!("../../templates/answer_generation.txt"),
};
static BACKTRANSLATION: PromptTemplate =
    PromptTemplate { name: TemplateName::Backtranslation, body: include_str!("../../templates/backtranslation.txt") };

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

pub type Bindings = BTreeMap<String, String>;

/// Convenience constructor for bindings from `(&str, impl ToString)` pairs.
pub fn bindings<I, K, V>(pairs: I) -> Bindings
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: ToString,
{
    pairs.into_iter().map(|(k, v)| (k.into(), v.to_string())).collect()
}

impl PromptTemplate {
    pub fn get(name: TemplateName) -> &'static PromptTemplate {
        match name {
            TemplateName::InstructionGeneration => &INSTRUCTION_GENERATION,
            TemplateName::Qfs => &QFS,
            TemplateName::AnswerGeneration => &ANSWER_GENERATION,
            TemplateName::Backtranslation => &BACKTRANSLATION,
        }
    }

    pub fn placeholders(&self) -> BTreeSet<&'static str> {
        placeholder_re().captures_iter(self.body).map(|c| c.get(1).expect("group").as_str()).collect()
    }

    /// Substitutes every placeholder. Values are inserted verbatim and are
    /// never re-scanned, so bound text may itself contain braces.
    pub fn render(&self, bindings: &Bindings) -> Result<String, TemplateError> {
        let names = self.placeholders();
        if let Some(extra) = bindings.keys().find(|k| !names.contains(k.as_str())) {
            return Err(TemplateError::Extra { template: self.name, placeholder: extra.clone() });
        }
        if let Some(missing) = names.iter().find(|n| !bindings.contains_key(**n)) {
            return Err(TemplateError::Missing { template: self.name, placeholder: (*missing).to_owned() });
        }
        let mut out = String::with_capacity(self.body.len() + bindings.values().map(String::len).sum::<usize>());
        let mut last = 0;
        for m in placeholder_re().captures_iter(self.body) {
            let whole = m.get(0).expect("match");
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(&bindings[m.get(1).expect("group").as_str()]);
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }

    /// Inverse of [`render`](Self::render): recovers the bound values from a
    /// rendered prompt. Values are matched lazily between literal segments,
    /// so recovery is exact whenever no bound value contains the literal text
    /// that follows its placeholder.
    pub fn extract_bindings(&self, rendered: &str) -> Result<Bindings, TemplateError> {
        let mut pattern = String::from(r"(?s)\A");
        let mut order = Vec::new();
        let mut last = 0;
        for m in placeholder_re().captures_iter(self.body) {
            let whole = m.get(0).expect("match");
            pattern.push_str(&regex::escape(&self.body[last..whole.start()]));
            pattern.push_str("(.*?)");
            order.push(m.get(1).expect("group").as_str());
            last = whole.end();
        }
        pattern.push_str(&regex::escape(&self.body[last..]));
        pattern.push_str(r"\z");
        let re = Regex::new(&pattern).expect("escaped template pattern");
        let caps = re.captures(rendered).ok_or(TemplateError::NoMatch { template: self.name })?;
        let mut out = Bindings::new();
        for (i, name) in order.iter().enumerate() {
            let value = caps.get(i + 1).expect("group").as_str();
            match out.get(*name) {
                Some(prev) if prev != value => {
                    return Err(TemplateError::Inconsistent { template: self.name, placeholder: (*name).to_owned() })
                }
                _ => {
                    out.insert((*name).to_owned(), value.to_owned());
                }
            }
        }
        Ok(out)
    }
}

pub fn render_prompt(name: TemplateName, bindings: &Bindings) -> Result<String, TemplateError> {
    PromptTemplate::get(name).render(bindings)
}
