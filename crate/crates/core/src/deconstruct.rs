//! Query deconstruction: turning a raw query into a [`CapabilityProfile`].
//!
//! Two backends are provided. [`ChatDeconstructor`] renders the
//! decomposition prompt, sends it through any [`ChatCompletion`] client and
//! parses the strict JSON reply, retrying on broken output.
//! [`KeywordRules`] is a deterministic substring rule table for offline use.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::backend::{strip_code_fence, BackendError, ChatCompletion};
use crate::model::{
    label_set, parse_difficulty, CapabilityProfile, DifficultyLevel, LabelSet, ModelError,
};

pub const DECONSTRUCTION_SYSTEM_PROMPT: &str = "You are a Capability Decomposition Engine. \
Your task is to decompose the user query into its capability-space representation \
C(q) = {S, K, D}. Follow all rules strictly and output JSON only.";

/// User-turn template; `${query}` is replaced verbatim.
pub const DECONSTRUCTION_TEMPLATE: &str = r#"Instruction:
${query}

Decomposition Rules:
1. Skill Set (S): Identify required skills (e.g., reasoning, coding). Output as a list and provide "S_reason".
2. Knowledge Domain (K): Identify domains (e.g., law, finance). If none, output "none". Output as a list and provide "K_reason".
3. Difficulty (D): Choose exactly one from {D0, D1, D2, D3} based on complexity. Provide "D_reason".

Important Rules:
- Output MUST be valid pure JSON.
- Do NOT include markdown code.

Output Format (STRICT):
{
  "S": [...], "S_reason": "...",
  "K": [...], "K_reason": "...",
  "D": "...", "D_reason": "..."
}"#;

const QUERY_PLACEHOLDER: &str = "${query}";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProfileParseError {
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` has the wrong type")]
    WrongType(&'static str),
    #[error("invalid difficulty `{0}`")]
    InvalidDifficulty(String),
    #[error("empty label")]
    EmptyLabel,
    #[error("{0} set must not be empty")]
    EmptySet(&'static str),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeconstructError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("deconstructor backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("deconstruction failed after {attempts} attempt(s): {last_error}")]
    DeconstructionFailed { attempts: usize, last_error: String },
}

/// Renders the decomposition prompt for `query`.
pub fn render_deconstruction_prompt(query: &str) -> Result<String, DeconstructError> {
    if query.trim().is_empty() {
        return Err(DeconstructError::EmptyQuery);
    }
    Ok(DECONSTRUCTION_TEMPLATE.replacen(QUERY_PLACEHOLDER, query, 1))
}

/// Serializes a profile to its canonical JSON object form.
pub fn profile_to_json(profile: &CapabilityProfile) -> String {
    serde_json::to_string(profile).expect("profile serialization is infallible")
}

/// Parses the strict `{S, S_reason, K, K_reason, D, D_reason}` object.
///
/// A payload wrapped in a markdown code fence is unwrapped once and retried.
pub fn parse_profile_json(text: &str) -> Result<CapabilityProfile, ProfileParseError> {
    let value: Value = match serde_json::from_str(text.trim()) {
        Ok(v) => v,
        Err(err) => match strip_code_fence(text) {
            Some(inner) => serde_json::from_str(inner)
                .map_err(|e| ProfileParseError::MalformedJson(e.to_string()))?,
            None => return Err(ProfileParseError::MalformedJson(err.to_string())),
        },
    };
    let obj = value
        .as_object()
        .ok_or_else(|| ProfileParseError::MalformedJson("expected a JSON object".into()))?;

    let skills = labels_field(obj, "S")?;
    let skills_reason = string_field(obj, "S_reason")?;
    let mut knowledge = labels_field(obj, "K")?;
    let knowledge_reason = string_field(obj, "K_reason")?;
    let difficulty_text = string_field(obj, "D")?;
    let difficulty_reason = string_field(obj, "D_reason")?;

    let difficulty = parse_difficulty(&difficulty_text)
        .map_err(|_| ProfileParseError::InvalidDifficulty(difficulty_text))?;

    // "none" alongside real domains carries no information
    if knowledge.len() > 1 {
        knowledge.retain(|l| !l.is_none_marker());
    }

    CapabilityProfile::new(
        skills,
        skills_reason,
        knowledge,
        knowledge_reason,
        difficulty,
        difficulty_reason,
    )
    .map_err(|e| match e {
        ModelError::EmptySet(which) => ProfileParseError::EmptySet(which),
        _ => ProfileParseError::EmptyLabel,
    })
}

fn field<'a>(obj: &'a Map<String, Value>, name: &'static str) -> Result<&'a Value, ProfileParseError> {
    obj.get(name).ok_or(ProfileParseError::MissingField(name))
}

fn string_field(obj: &Map<String, Value>, name: &'static str) -> Result<String, ProfileParseError> {
    field(obj, name)?
        .as_str()
        .map(ToString::to_string)
        .ok_or(ProfileParseError::WrongType(name))
}

fn labels_field(obj: &Map<String, Value>, name: &'static str) -> Result<LabelSet, ProfileParseError> {
    let raw: Vec<&str> = match field(obj, name)? {
        // a bare string such as "none" is accepted as a singleton list
        Value::String(s) => alloc::vec![s.as_str()],
        Value::Array(items) => items
            .iter()
            .map(|v| v.as_str().ok_or(ProfileParseError::WrongType(name)))
            .collect::<Result<_, _>>()?,
        _ => return Err(ProfileParseError::WrongType(name)),
    };
    let set = label_set(raw).map_err(|_| ProfileParseError::EmptyLabel)?;
    if set.is_empty() {
        return Err(ProfileParseError::EmptySet(if name == "S" {
            "skills"
        } else {
            "knowledge"
        }));
    }
    Ok(set)
}

/// Anything able to produce a capability profile for a query.
pub trait Deconstructor: Send + Sync {
    fn deconstruct(&self, query: &str) -> Result<CapabilityProfile, DeconstructError>;

    fn probe(&self) -> bool {
        true
    }
}

/// LLM-backed deconstructor speaking the decomposition prompt.
#[derive(Debug, Clone)]
pub struct ChatDeconstructor<C> {
    client: C,
    retries: usize,
}

impl<C: ChatCompletion> ChatDeconstructor<C> {
    pub const DEFAULT_RETRIES: usize = 2;

    pub fn new(client: C) -> Self {
        Self::with_retries(client, Self::DEFAULT_RETRIES)
    }

    /// `retries` extra attempts after the first one.
    pub fn with_retries(client: C, retries: usize) -> Self {
        Self { client, retries }
    }
}

impl<C: ChatCompletion> Deconstructor for ChatDeconstructor<C> {
    fn deconstruct(&self, query: &str) -> Result<CapabilityProfile, DeconstructError> {
        let prompt = render_deconstruction_prompt(query)?;
        let attempts = self.retries + 1;
        let mut last: Option<DeconstructError> = None;
        for _ in 0..attempts {
            match self.client.complete(DECONSTRUCTION_SYSTEM_PROMPT, &prompt) {
                Ok(reply) => match parse_profile_json(&reply) {
                    Ok(profile) => return Ok(profile),
                    Err(e) => {
                        last = Some(DeconstructError::DeconstructionFailed {
                            attempts,
                            last_error: e.to_string(),
                        })
                    }
                },
                Err(BackendError::Unavailable(msg)) => {
                    last = Some(DeconstructError::BackendUnavailable(msg))
                }
                Err(e @ BackendError::InvalidResponse(_)) => {
                    last = Some(DeconstructError::DeconstructionFailed {
                        attempts,
                        last_error: e.to_string(),
                    })
                }
            }
        }
        Err(last.expect("at least one attempt is made"))
    }

    fn probe(&self) -> bool {
        self.client.probe()
    }
}

/// Labels and difficulty a keyword rule assigns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileTemplate {
    pub skills: Vec<String>,
    pub knowledge: Vec<String>,
    pub difficulty: DifficultyLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRule {
    /// Case-insensitive substring to look for in the query.
    pub pattern: String,
    #[serde(flatten)]
    pub profile: ProfileTemplate,
}

/// Serialized form of a rule table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordRulesSpec {
    pub rules: Vec<KeywordRule>,
    pub default: ProfileTemplate,
}

struct CompiledRule {
    pattern: String,
    skills: LabelSet,
    knowledge: LabelSet,
    difficulty: DifficultyLevel,
}

/// Deterministic substring rule table with a catch-all default.
///
/// The longest matching pattern wins; equal lengths go to the earlier rule.
pub struct KeywordRules {
    rules: Vec<CompiledRule>,
    default: CompiledRule,
    spec: KeywordRulesSpec,
}

impl KeywordRules {
    pub fn new(spec: KeywordRulesSpec) -> Result<Self, ModelError> {
        let compile = |pattern: String, t: &ProfileTemplate| -> Result<CompiledRule, ModelError> {
            let rule = CompiledRule {
                pattern,
                skills: label_set(&t.skills)?,
                knowledge: label_set(&t.knowledge)?,
                difficulty: t.difficulty,
            };
            // reject templates that could never form a valid profile
            CapabilityProfile::new(
                rule.skills.clone(),
                "",
                rule.knowledge.clone(),
                "",
                rule.difficulty,
                "",
            )?;
            Ok(rule)
        };
        let rules = spec
            .rules
            .iter()
            .map(|r| {
                let pattern = r.pattern.to_lowercase();
                if pattern.trim().is_empty() {
                    return Err(ModelError::InvalidField("pattern"));
                }
                compile(pattern, &r.profile)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let default = compile(String::new(), &spec.default)?;
        Ok(Self {
            rules,
            default,
            spec,
        })
    }

    pub fn spec(&self) -> &KeywordRulesSpec {
        &self.spec
    }

    fn matching_rule(&self, query: &str) -> Option<&CompiledRule> {
        let haystack = query.to_lowercase();
        let mut best: Option<&CompiledRule> = None;
        for rule in &self.rules {
            if haystack.contains(rule.pattern.as_str())
                && best.is_none_or(|b| rule.pattern.len() > b.pattern.len())
            {
                best = Some(rule);
            }
        }
        best
    }
}

impl Deconstructor for KeywordRules {
    fn deconstruct(&self, query: &str) -> Result<CapabilityProfile, DeconstructError> {
        if query.trim().is_empty() {
            return Err(DeconstructError::EmptyQuery);
        }
        let (rule, reason) = match self.matching_rule(query) {
            Some(rule) => (rule, format!("matched keyword rule `{}`", rule.pattern)),
            None => (&self.default, "no keyword rule matched; default profile".to_string()),
        };
        CapabilityProfile::new(
            rule.skills.clone(),
            reason.clone(),
            rule.knowledge.clone(),
            reason.clone(),
            rule.difficulty,
            reason,
        )
        .map_err(|e| DeconstructError::DeconstructionFailed {
            attempts: 1,
            last_error: e.to_string(),
        })
    }
}

/// Convenience for building a rule table in code.
pub fn keyword_rule(pattern: &str, skills: &[&str], knowledge: &[&str], difficulty: DifficultyLevel) -> KeywordRule {
    KeywordRule {
        pattern: pattern.into(),
        profile: ProfileTemplate {
            skills: skills.iter().map(|s| s.to_string()).collect(),
            knowledge: knowledge.iter().map(|s| s.to_string()).collect(),
            difficulty,
        },
    }
}
