//! Stage C: judging which Top-k logs validly represent the user query.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde_json::Value;
use thiserror::Error;

use crate::backend::{strip_code_fence, BackendError, ChatCompletion};
use crate::model::{CapabilityProfile, HistoryEntry, LabelSet};

/// Candidates are labelled `A`..`Z`.
pub const MAX_EVALUATOR_CANDIDATES: usize = 26;

pub const EVALUATOR_SYSTEM_PROMPT: &str = "You are a Query Similarity Judge. \
Your task is to determine which historical queries can represent the user's query \
in terms of capability requirements.";

const EVALUATOR_CRITERIA: &str = "Judgment Criteria:
1. Skills (S): Historical query skills should cover user query skills (semantic similarity allowed).
2. Knowledge (K): Historical query domains should cover user query domains.
3. Difficulty (D): Historical difficulty must be >= User difficulty (D0 < D1 < D2 < D3).";

const EVALUATOR_OUTPUT_FORMAT: &str = r#"Output Format (STRICT JSON):
{
  "thinking": "Brief justification (max 150 words).",
  "valid_representatives": ["A", "B"]
}"#;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvaluateError {
    #[error("at least one candidate is required")]
    NoCandidates,
    #[error("{0} candidates exceed the A-Z label range")]
    TooManyCandidates(usize),
    #[error("malformed JSON: {0}")]
    MalformedJson(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("unknown candidate label `{0}`")]
    UnknownLabel(String),
    #[error("evaluator backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("evaluation failed after {attempts} attempt(s): {last_error}")]
    EvaluationFailed { attempts: usize, last_error: String },
}

/// Evaluator output: reasoning text plus the positions (into Top-k) judged valid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub thought: String,
    pub valid: BTreeSet<usize>,
}

pub fn candidate_label(position: usize) -> char {
    debug_assert!(position < MAX_EVALUATOR_CANDIDATES);
    (b'A' + position as u8) as char
}

fn bracketed(set: &LabelSet) -> String {
    let items: Vec<&str> = set.iter().map(|l| l.as_str()).collect();
    format!("[{}]", items.join(", "))
}

fn decomposition_line(p: &CapabilityProfile) -> String {
    format!(
        "S: {}, K: {}, D: {}",
        bracketed(p.skills()),
        bracketed(p.knowledge()),
        p.difficulty()
    )
}

fn check_candidate_count(n: usize) -> Result<(), EvaluateError> {
    match n {
        0 => Err(EvaluateError::NoCandidates),
        n if n > MAX_EVALUATOR_CANDIDATES => Err(EvaluateError::TooManyCandidates(n)),
        _ => Ok(()),
    }
}

/// Renders the judge prompt: user query and decomposition followed by each
/// historical entry, labelled `A`, `B`, ... in Top-k order.
pub fn render_evaluator_prompt(
    user_query: &str,
    user: &CapabilityProfile,
    top: &[&HistoryEntry],
) -> Result<String, EvaluateError> {
    check_candidate_count(top.len())?;
    let labels: Vec<String> = (0..top.len()).map(|i| candidate_label(i).to_string()).collect();

    let mut out = String::new();
    out.push_str(EVALUATOR_CRITERIA);
    out.push_str("\n\nUser Query & Historical Pool:\n");
    let _ = writeln!(out, "User Query: {user_query}");
    let _ = writeln!(out, "Decomposition: {}", decomposition_line(user));
    out.push_str("Historical Queries:\n");
    for (label, entry) in labels.iter().zip(top) {
        let _ = writeln!(out, "{label}. {}", entry.query);
        let _ = writeln!(out, "   Decomposition: {}", decomposition_line(&entry.profile));
    }
    out.push_str("\nInstructions:\n1. Analyze User Query requirements.\n");
    let _ = writeln!(
        out,
        "2. Compare each historical query ({}) against the User Query based on S, K, and D.",
        labels.join(", ")
    );
    out.push_str("3. Determine which queries are valid representatives.\n\n");
    out.push_str(EVALUATOR_OUTPUT_FORMAT);
    Ok(out)
}

/// Parses `{"thinking": ..., "valid_representatives": [...]}`, mapping
/// letters to Top-k positions (`A` → 0).
pub fn parse_evaluator_output(text: &str, num_candidates: usize) -> Result<Verdict, EvaluateError> {
    check_candidate_count(num_candidates)?;
    let value: Value = match serde_json::from_str(text.trim()) {
        Ok(v) => v,
        Err(err) => match strip_code_fence(text) {
            Some(inner) => serde_json::from_str(inner)
                .map_err(|e| EvaluateError::MalformedJson(e.to_string()))?,
            None => return Err(EvaluateError::MalformedJson(err.to_string())),
        },
    };
    let obj = value
        .as_object()
        .ok_or_else(|| EvaluateError::MalformedJson("expected a JSON object".into()))?;
    let thought = obj
        .get("thinking")
        .ok_or(EvaluateError::MissingField("thinking"))?
        .as_str()
        .ok_or_else(|| EvaluateError::MalformedJson("`thinking` must be a string".into()))?
        .to_string();
    let labels = obj
        .get("valid_representatives")
        .ok_or(EvaluateError::MissingField("valid_representatives"))?
        .as_array()
        .ok_or_else(|| {
            EvaluateError::MalformedJson("`valid_representatives` must be an array".into())
        })?;

    let mut valid = BTreeSet::new();
    for label in labels {
        let raw = label
            .as_str()
            .ok_or_else(|| EvaluateError::UnknownLabel(label.to_string()))?;
        let mut chars = raw.trim().chars();
        let position = match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_alphabetic() => {
                (c.to_ascii_uppercase() as u8 - b'A') as usize
            }
            _ => return Err(EvaluateError::UnknownLabel(raw.to_string())),
        };
        if position >= num_candidates {
            return Err(EvaluateError::UnknownLabel(raw.to_string()));
        }
        valid.insert(position);
    }
    Ok(Verdict { thought, valid })
}

/// Judges which Top-k entries represent the user query.
pub trait Evaluator: Send + Sync {
    fn evaluate(
        &self,
        user_query: &str,
        user: &CapabilityProfile,
        top: &[&HistoryEntry],
    ) -> Result<Verdict, EvaluateError>;

    fn probe(&self) -> bool {
        true
    }
}

/// Deterministic stand-in for the LLM judge using exact label coverage:
/// an entry is valid when its skills contain the user's, its knowledge
/// contains the user's (or the user needs none), and it is at least as hard.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoverageOracle;

impl CoverageOracle {
    pub fn covers(user: &CapabilityProfile, historical: &CapabilityProfile) -> bool {
        user.skills().is_subset(historical.skills())
            && (user.needs_no_knowledge() || user.knowledge().is_subset(historical.knowledge()))
            && historical.difficulty() >= user.difficulty()
    }

    pub fn evaluate_positions(user: &CapabilityProfile, top: &[&HistoryEntry]) -> BTreeSet<usize> {
        top.iter()
            .enumerate()
            .filter(|(_, e)| Self::covers(user, &e.profile))
            .map(|(i, _)| i)
            .collect()
    }
}

impl Evaluator for CoverageOracle {
    fn evaluate(
        &self,
        _user_query: &str,
        user: &CapabilityProfile,
        top: &[&HistoryEntry],
    ) -> Result<Verdict, EvaluateError> {
        check_candidate_count(top.len())?;
        let mut notes = Vec::with_capacity(top.len());
        for (i, entry) in top.iter().enumerate() {
            let h = &entry.profile;
            let mut gaps = Vec::new();
            let missing_skills: Vec<&str> =
                user.skills().difference(h.skills()).map(|l| l.as_str()).collect();
            if !missing_skills.is_empty() {
                gaps.push(format!("lacks skills [{}]", missing_skills.join(", ")));
            }
            if !user.needs_no_knowledge() {
                let missing: Vec<&str> = user
                    .knowledge()
                    .difference(h.knowledge())
                    .map(|l| l.as_str())
                    .collect();
                if !missing.is_empty() {
                    gaps.push(format!("lacks knowledge [{}]", missing.join(", ")));
                }
            }
            if h.difficulty() < user.difficulty() {
                gaps.push(format!(
                    "difficulty {} is below {}",
                    h.difficulty(),
                    user.difficulty()
                ));
            }
            let label = candidate_label(i);
            if gaps.is_empty() {
                notes.push(format!("{label} covers all requirements."));
            } else {
                notes.push(format!("{label} {}.", gaps.join("; ")));
            }
        }
        Ok(Verdict {
            thought: notes.join(" "),
            valid: Self::evaluate_positions(user, top),
        })
    }
}

/// LLM-backed evaluator speaking the judge prompt.
#[derive(Debug, Clone)]
pub struct ChatEvaluator<C> {
    client: C,
    retries: usize,
}

impl<C: ChatCompletion> ChatEvaluator<C> {
    pub const DEFAULT_RETRIES: usize = 2;

    pub fn new(client: C) -> Self {
        Self::with_retries(client, Self::DEFAULT_RETRIES)
    }

    pub fn with_retries(client: C, retries: usize) -> Self {
        Self { client, retries }
    }
}

impl<C: ChatCompletion> Evaluator for ChatEvaluator<C> {
    fn evaluate(
        &self,
        user_query: &str,
        user: &CapabilityProfile,
        top: &[&HistoryEntry],
    ) -> Result<Verdict, EvaluateError> {
        let prompt = render_evaluator_prompt(user_query, user, top)?;
        let attempts = self.retries + 1;
        let mut last = None;
        for _ in 0..attempts {
            match self.client.complete(EVALUATOR_SYSTEM_PROMPT, &prompt) {
                Ok(reply) => match parse_evaluator_output(&reply, top.len()) {
                    Ok(verdict) => return Ok(verdict),
                    Err(e) => {
                        last = Some(EvaluateError::EvaluationFailed {
                            attempts,
                            last_error: e.to_string(),
                        })
                    }
                },
                Err(BackendError::Unavailable(m)) => last = Some(EvaluateError::BackendUnavailable(m)),
                Err(e @ BackendError::InvalidResponse(_)) => {
                    last = Some(EvaluateError::EvaluationFailed {
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
