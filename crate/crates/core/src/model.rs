//! Shared domain types: difficulty levels, normalized labels, capability
//! profiles, execution records, history entries and the routing config.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Knowledge label meaning "no specialized domain required".
pub const NONE_LABEL: &str = "none";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("unknown difficulty `{0}` (expected one of D0, D1, D2, D3)")]
    UnknownDifficulty(String),
    #[error("label is empty after normalization")]
    EmptyLabel,
    #[error("{0} set must not be empty")]
    EmptySet(&'static str),
    #[error("`none` must be the only knowledge label")]
    NoneNotAlone,
    #[error("invalid value for `{0}`")]
    InvalidField(&'static str),
    #[error("duplicate model `{0}` within one entry")]
    DuplicateModel(String),
    #[error("invalid routing config: {0}")]
    InvalidConfig(&'static str),
}

/// Cognitive-load level, `D0` (trivial) through `D3` (deep reasoning).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DifficultyLevel {
    D0,
    D1,
    D2,
    D3,
}

impl DifficultyLevel {
    pub const ALL: [DifficultyLevel; 4] = [Self::D0, Self::D1, Self::D2, Self::D3];

    pub fn from_level(level: u8) -> Option<Self> {
        Self::ALL.get(level as usize).copied()
    }

    pub fn level(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::D0 => "D0",
            Self::D1 => "D1",
            Self::D2 => "D2",
            Self::D3 => "D3",
        }
    }
}

impl fmt::Display for DifficultyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DifficultyLevel {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_difficulty(s)
    }
}

impl Serialize for DifficultyLevel {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for DifficultyLevel {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_difficulty(&text).map_err(serde::de::Error::custom)
    }
}

/// Parses `D0`..`D3`, case-insensitively after trimming.
pub fn parse_difficulty(text: &str) -> Result<DifficultyLevel, ModelError> {
    let trimmed = text.trim();
    DifficultyLevel::ALL
        .into_iter()
        .find(|d| d.as_str().eq_ignore_ascii_case(trimmed))
        .ok_or_else(|| ModelError::UnknownDifficulty(text.to_owned()))
}

/// Lowercases, trims and collapses internal whitespace runs to one space.
pub fn normalize_label(text: &str) -> Result<String, ModelError> {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    if out.is_empty() {
        return Err(ModelError::EmptyLabel);
    }
    Ok(out)
}

/// A normalized skill or knowledge label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Label(String);

impl Label {
    pub fn new(text: &str) -> Result<Self, ModelError> {
        normalize_label(text).map(Label)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_none_marker(&self) -> bool {
        self.0 == NONE_LABEL
    }
}

impl TryFrom<String> for Label {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Label::new(&value)
    }
}

impl From<Label> for String {
    fn from(label: Label) -> Self {
        label.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type LabelSet = BTreeSet<Label>;

/// Normalizes every label and collects them into a set.
pub fn label_set<I, S>(labels: I) -> Result<LabelSet, ModelError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    labels.into_iter().map(|l| Label::new(l.as_ref())).collect()
}

/// The `{S, K, D}` capability triple with its rationale texts.
///
/// Construction validates the invariants: both label sets are non-empty and
/// `none` can only appear as the sole knowledge label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ProfileWire", into = "ProfileWire")]
pub struct CapabilityProfile {
    skills: LabelSet,
    skills_reason: String,
    knowledge: LabelSet,
    knowledge_reason: String,
    difficulty: DifficultyLevel,
    difficulty_reason: String,
}

impl CapabilityProfile {
    pub fn new(
        skills: LabelSet,
        skills_reason: impl Into<String>,
        knowledge: LabelSet,
        knowledge_reason: impl Into<String>,
        difficulty: DifficultyLevel,
        difficulty_reason: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if skills.is_empty() {
            return Err(ModelError::EmptySet("skills"));
        }
        if knowledge.is_empty() {
            return Err(ModelError::EmptySet("knowledge"));
        }
        if knowledge.len() > 1 && knowledge.iter().any(Label::is_none_marker) {
            return Err(ModelError::NoneNotAlone);
        }
        Ok(Self {
            skills,
            skills_reason: skills_reason.into(),
            knowledge,
            knowledge_reason: knowledge_reason.into(),
            difficulty,
            difficulty_reason: difficulty_reason.into(),
        })
    }

    /// Builds a profile from raw label strings with empty reasons.
    pub fn from_labels<S: AsRef<str>, K: AsRef<str>>(
        skills: &[S],
        knowledge: &[K],
        difficulty: DifficultyLevel,
    ) -> Result<Self, ModelError> {
        Self::new(
            label_set(skills)?,
            "",
            label_set(knowledge)?,
            "",
            difficulty,
            "",
        )
    }

    pub fn skills(&self) -> &LabelSet {
        &self.skills
    }

    pub fn knowledge(&self) -> &LabelSet {
        &self.knowledge
    }

    pub fn difficulty(&self) -> DifficultyLevel {
        self.difficulty
    }

    pub fn skills_reason(&self) -> &str {
        &self.skills_reason
    }

    pub fn knowledge_reason(&self) -> &str {
        &self.knowledge_reason
    }

    pub fn difficulty_reason(&self) -> &str {
        &self.difficulty_reason
    }

    /// True when the knowledge set is the singleton `{"none"}`.
    pub fn needs_no_knowledge(&self) -> bool {
        self.knowledge.len() == 1 && self.knowledge.iter().all(Label::is_none_marker)
    }
}

/// Canonical JSON object form of a profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileWire {
    #[serde(rename = "S")]
    pub skills: Vec<String>,
    #[serde(rename = "S_reason")]
    pub skills_reason: String,
    #[serde(rename = "K")]
    pub knowledge: Vec<String>,
    #[serde(rename = "K_reason")]
    pub knowledge_reason: String,
    #[serde(rename = "D")]
    pub difficulty: String,
    #[serde(rename = "D_reason")]
    pub difficulty_reason: String,
}

impl TryFrom<ProfileWire> for CapabilityProfile {
    type Error = ModelError;

    fn try_from(w: ProfileWire) -> Result<Self, Self::Error> {
        CapabilityProfile::new(
            label_set(&w.skills)?,
            w.skills_reason,
            label_set(&w.knowledge)?,
            w.knowledge_reason,
            parse_difficulty(&w.difficulty)?,
            w.difficulty_reason,
        )
    }
}

impl From<CapabilityProfile> for ProfileWire {
    fn from(p: CapabilityProfile) -> Self {
        ProfileWire {
            skills: p.skills.into_iter().map(String::from).collect(),
            skills_reason: p.skills_reason,
            knowledge: p.knowledge.into_iter().map(String::from).collect(),
            knowledge_reason: p.knowledge_reason,
            difficulty: p.difficulty.as_str().to_string(),
            difficulty_reason: p.difficulty_reason,
        }
    }
}

/// One model's outcome on one historical query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub model: String,
    /// Task performance normalized to `[0, 1]`.
    pub score: f64,
    /// Abstract non-negative cost units, consistent within a store.
    pub cost: f64,
}

impl ExecutionRecord {
    pub fn new(model: impl Into<String>, score: f64, cost: f64) -> Result<Self, ModelError> {
        let record = Self {
            model: model.into(),
            score,
            cost,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.model.trim().is_empty() {
            return Err(ModelError::InvalidField("model"));
        }
        if !self.score.is_finite() || !(0.0..=1.0).contains(&self.score) {
            return Err(ModelError::InvalidField("score"));
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(ModelError::InvalidField("cost"));
        }
        Ok(())
    }
}

/// Checks a record list: non-empty, each record valid, model ids unique.
pub fn validate_records(records: &[ExecutionRecord]) -> Result<(), ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptySet("records"));
    }
    let mut seen = BTreeSet::new();
    for record in records {
        record.validate()?;
        if !seen.insert(record.model.as_str()) {
            return Err(ModelError::DuplicateModel(record.model.clone()));
        }
    }
    Ok(())
}

/// A historical query with its capability profile and per-model outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub id: String,
    pub query: String,
    pub profile: CapabilityProfile,
    pub records: Vec<ExecutionRecord>,
}

impl HistoryEntry {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.id.is_empty() {
            return Err(ModelError::InvalidField("id"));
        }
        validate_records(&self.records)
    }

    pub fn record_for(&self, model: &str) -> Option<&ExecutionRecord> {
        self.records.iter().find(|r| r.model == model)
    }
}

/// What to do when a backend fails after exhausting its retries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Route to the fallback model and flag the failure in the trace.
    #[default]
    Fallback,
    /// Surface the error to the caller.
    Surface,
}

fn default_tau() -> f64 {
    0.5
}

fn default_top_k() -> usize {
    3
}

fn default_lambda() -> f64 {
    0.5
}

fn default_epsilon() -> f64 {
    1e-9
}

/// Every routing tunable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingConfig {
    /// Stage A threshold on the raw `[0, 2]` score scale.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Performance weight of the utility; `1 - lambda` weighs cost.
    #[serde(rename = "lambda", alias = "lambda_", default = "default_lambda")]
    pub lambda_: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    pub fallback_model: String,
    pub candidate_models: Vec<String>,
    #[serde(default)]
    pub failure_policy: FailurePolicy,
}

impl RoutingConfig {
    pub const DEFAULT_TAU: f64 = 0.5;
    pub const DEFAULT_TOP_K: usize = 3;
    pub const DEFAULT_LAMBDA: f64 = 0.5;
    pub const DEFAULT_EPSILON: f64 = 1e-9;

    /// Config with default hyperparameters for the given pool.
    pub fn new(candidate_models: Vec<String>, fallback_model: impl Into<String>) -> Self {
        Self {
            tau: Self::DEFAULT_TAU,
            top_k: Self::DEFAULT_TOP_K,
            lambda_: Self::DEFAULT_LAMBDA,
            epsilon: Self::DEFAULT_EPSILON,
            fallback_model: fallback_model.into(),
            candidate_models,
            failure_policy: FailurePolicy::Fallback,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.tau > 0.0 && self.tau <= 2.0) {
            return Err(ModelError::InvalidConfig("tau must lie in (0, 2]"));
        }
        if self.top_k == 0 || self.top_k > 26 {
            return Err(ModelError::InvalidConfig("top_k must lie in [1, 26]"));
        }
        if !(0.0..=1.0).contains(&self.lambda_) {
            return Err(ModelError::InvalidConfig("lambda must lie in [0, 1]"));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(ModelError::InvalidConfig("epsilon must be positive"));
        }
        if self.candidate_models.is_empty() {
            return Err(ModelError::InvalidConfig("candidate_models must not be empty"));
        }
        let unique: BTreeSet<&str> = self.candidate_models.iter().map(String::as_str).collect();
        if unique.len() != self.candidate_models.len() {
            return Err(ModelError::InvalidConfig("candidate_models must be unique"));
        }
        if !unique.contains(self.fallback_model.as_str()) {
            return Err(ModelError::InvalidConfig(
                "fallback_model must be one of candidate_models",
            ));
        }
        Ok(())
    }

    /// Applies per-request overrides, validating the result.
    pub fn with_overrides(&self, overrides: &ConfigOverrides) -> Result<Self, ModelError> {
        let mut cfg = self.clone();
        if let Some(tau) = overrides.tau {
            cfg.tau = tau;
        }
        if let Some(top_k) = overrides.top_k {
            cfg.top_k = top_k;
        }
        if let Some(lambda) = overrides.lambda_ {
            cfg.lambda_ = lambda;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Subset of [`RoutingConfig`] that a single request may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigOverrides {
    #[serde(rename = "lambda", alias = "lambda_", default, skip_serializing_if = "Option::is_none")]
    pub lambda_: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}
