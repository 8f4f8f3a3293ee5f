//! Service configuration file: routing tunables plus backend descriptors.

use std::path::Path;

use caproute_core::deconstruct::KeywordRulesSpec;
use caproute_core::sifting::ChatEvaluator;
use caproute_core::{
    ChatDeconstructor, CoverageOracle, Deconstructor, Embedder, Evaluator, KeywordRules, Library, ModelError,
    RouteError, Router, RoutingConfig, TokenHashEmbedder,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::remote::{HttpChatClient, HttpEmbedder, RemoteEndpoint};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("backend setup failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Route(#[from] RouteError),
}

fn default_retries() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteChatSpec {
    #[serde(flatten)]
    pub endpoint: RemoteEndpoint,
    /// Extra attempts after the first malformed or failed response.
    #[serde(default = "default_retries")]
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeconstructorSpec {
    KeywordRules(KeywordRulesSpec),
    RemoteChat(RemoteChatSpec),
}

fn default_dim() -> usize {
    TokenHashEmbedder::DEFAULT_DIM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EmbedderSpec {
    TokenHash {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    RemoteEmbedding {
        #[serde(flatten)]
        endpoint: RemoteEndpoint,
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EvaluatorSpec {
    CoverageOracle,
    RemoteChat(RemoteChatSpec),
}

fn default_max_concurrency() -> usize {
    16
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

/// Everything needed to stand up a router or the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    #[serde(flatten)]
    pub routing: RoutingConfig,
    pub deconstructor: DeconstructorSpec,
    pub embedder: EmbedderSpec,
    pub evaluator: EvaluatorSpec,
    /// Upper bound on routing pipelines running at once.
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_bind")]
    pub bind: String,
}

impl ServiceConfig {
    /// Deterministic in-process backends with default tunables.
    pub fn deterministic(routing: RoutingConfig, rules: KeywordRulesSpec) -> Self {
        Self {
            routing,
            deconstructor: DeconstructorSpec::KeywordRules(rules),
            embedder: EmbedderSpec::TokenHash { dim: default_dim() },
            evaluator: EvaluatorSpec::CoverageOracle,
            max_concurrency: default_max_concurrency(),
            bind: default_bind(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    /// Pretty JSON with a trailing newline; stable across load/save.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.routing.validate()?;
        if self.max_concurrency == 0 {
            return Err(ModelError::InvalidConfig("max_concurrency must be positive").into());
        }
        if matches!(self.embedder, EmbedderSpec::TokenHash { dim: 0 } | EmbedderSpec::RemoteEmbedding { dim: 0, .. }) {
            return Err(ModelError::InvalidConfig("embedder dim must be positive").into());
        }
        Ok(())
    }

    pub fn build_deconstructor(&self) -> Result<Box<dyn Deconstructor>, ConfigError> {
        Ok(match &self.deconstructor {
            DeconstructorSpec::KeywordRules(spec) => Box::new(KeywordRules::new(spec.clone())?),
            DeconstructorSpec::RemoteChat(s) => {
                let client = HttpChatClient::new(s.endpoint.clone()).map_err(ConfigError::Backend)?;
                Box::new(ChatDeconstructor::with_retries(client, s.retries))
            }
        })
    }

    pub fn build_embedder(&self) -> Result<Box<dyn Embedder>, ConfigError> {
        Ok(match &self.embedder {
            EmbedderSpec::TokenHash { dim } => Box::new(TokenHashEmbedder::new(*dim)),
            EmbedderSpec::RemoteEmbedding { endpoint, dim } => {
                Box::new(HttpEmbedder::new(endpoint.clone(), *dim).map_err(ConfigError::Backend)?)
            }
        })
    }

    pub fn build_evaluator(&self) -> Result<Box<dyn Evaluator>, ConfigError> {
        Ok(match &self.evaluator {
            EvaluatorSpec::CoverageOracle => Box::new(CoverageOracle),
            EvaluatorSpec::RemoteChat(s) => {
                let client = HttpChatClient::new(s.endpoint.clone()).map_err(ConfigError::Backend)?;
                Box::new(ChatEvaluator::with_retries(client, s.retries))
            }
        })
    }

    pub fn build_router(&self, library: Library) -> Result<Router, ConfigError> {
        Ok(Router::new(
            library,
            self.routing.clone(),
            self.build_deconstructor()?,
            self.build_embedder()?,
            self.build_evaluator()?,
        )?)
    }
}
