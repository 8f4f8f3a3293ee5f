//! Abstract contracts for remote model backends.

use alloc::string::String;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend returned an unusable response: {0}")]
    InvalidResponse(String),
}

/// Single-turn chat completion: system text and user text in, assistant
/// text out. Implementations must accept concurrent in-flight calls.
pub trait ChatCompletion: Send + Sync {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError>;

    /// Cheap reachability check used by health reporting.
    fn probe(&self) -> bool {
        true
    }
}

impl<C: ChatCompletion + ?Sized> ChatCompletion for alloc::boxed::Box<C> {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        (**self).complete(system, user)
    }

    fn probe(&self) -> bool {
        (**self).probe()
    }
}

impl<C: ChatCompletion + ?Sized> ChatCompletion for alloc::sync::Arc<C> {
    fn complete(&self, system: &str, user: &str) -> Result<String, BackendError> {
        (**self).complete(system, user)
    }

    fn probe(&self) -> bool {
        (**self).probe()
    }
}

/// Strips one surrounding markdown code fence (```` ```json ... ``` ````), if present.
pub(crate) fn strip_code_fence(text: &str) -> Option<&str> {
    let trimmed = text.trim();
    let rest = trimmed.strip_prefix("```")?;
    let body_start = rest.find('\n')?;
    let body = rest[body_start + 1..].trim_end();
    let body = body.strip_suffix("```")?;
    Some(body.trim())
}
