//! End-to-end routing: deconstruct → sift → decide.

use alloc::boxed::Box;
use alloc::string::ToString;

use thiserror::Error;

use crate::decision::{decide, FallbackReason, RoutingDecision};
use crate::deconstruct::{DeconstructError, Deconstructor};
use crate::model::{FailurePolicy, ModelError, RoutingConfig};
use crate::sifting::{sift, EmbedError, Embedder, Evaluator, Library, SiftBackends, SiftError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouteError {
    #[error("query is empty")]
    EmptyQuery,
    #[error(transparent)]
    InvalidConfig(#[from] ModelError),
    #[error(transparent)]
    Deconstruct(DeconstructError),
    #[error(transparent)]
    Sift(SiftError),
}

/// Pipeline stage boundaries reported to an observer while routing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Deconstructed,
    Sifted,
    Decided,
}

/// Immutable routing engine over one library snapshot.
pub struct Router {
    library: Library,
    config: RoutingConfig,
    deconstructor: Box<dyn Deconstructor>,
    embedder: Box<dyn Embedder>,
    evaluator: Box<dyn Evaluator>,
}

impl Router {
    pub fn new(
        library: Library,
        config: RoutingConfig,
        deconstructor: Box<dyn Deconstructor>,
        embedder: Box<dyn Embedder>,
        evaluator: Box<dyn Evaluator>,
    ) -> Result<Self, RouteError> {
        config.validate()?;
        Ok(Self {
            library,
            config,
            deconstructor,
            embedder,
            evaluator,
        })
    }

    pub fn config(&self) -> &RoutingConfig {
        &self.config
    }

    pub fn library(&self) -> &Library {
        &self.library
    }

    pub fn deconstructor(&self) -> &dyn Deconstructor {
        self.deconstructor.as_ref()
    }

    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn evaluator(&self) -> &dyn Evaluator {
        self.evaluator.as_ref()
    }

    pub fn route(&self, query: &str) -> Result<RoutingDecision, RouteError> {
        self.route_with(query, &self.config, |_| {})
    }

    /// Routes with an explicit config (e.g. per-request overrides), calling
    /// `observe` at each stage boundary.
    pub fn route_with(
        &self,
        query: &str,
        cfg: &RoutingConfig,
        mut observe: impl FnMut(Stage),
    ) -> Result<RoutingDecision, RouteError> {
        if query.trim().is_empty() {
            return Err(RouteError::EmptyQuery);
        }
        cfg.validate()?;
        let surface = cfg.failure_policy == FailurePolicy::Surface;

        let profile = match self.deconstructor.deconstruct(query) {
            Ok(p) => p,
            Err(DeconstructError::EmptyQuery) => return Err(RouteError::EmptyQuery),
            Err(e) if surface => return Err(RouteError::Deconstruct(e)),
            Err(e) => {
                observe(Stage::Deconstructed);
                let d = RoutingDecision::fallback(
                    cfg,
                    FallbackReason::DeconstructionFailed,
                    Some(e.to_string()),
                );
                observe(Stage::Sifted);
                observe(Stage::Decided);
                return Ok(d);
            }
        };
        observe(Stage::Deconstructed);

        let backends = SiftBackends {
            embedder: self.embedder.as_ref(),
            evaluator: self.evaluator.as_ref(),
        };
        let outcome = match sift(query, &profile, &self.library, cfg, backends) {
            Ok(o) => o,
            Err(SiftError::Embed(EmbedError::EmptyQuery)) => return Err(RouteError::EmptyQuery),
            Err(e) if surface => return Err(RouteError::Sift(e)),
            Err(e) => {
                observe(Stage::Sifted);
                let mut d = RoutingDecision::fallback(
                    cfg,
                    FallbackReason::EmbeddingFailed,
                    Some(e.to_string()),
                );
                d.trace.profile = Some(profile);
                observe(Stage::Decided);
                return Ok(d);
            }
        };
        observe(Stage::Sifted);

        let mut decision = decide(outcome, self.library.index(), cfg);
        decision.trace.profile = Some(profile);
        observe(Stage::Decided);
        Ok(decision)
    }
}
