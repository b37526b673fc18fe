//! Uniform text-generation interface for curation and evaluation.
//!
//! Two real implementations: [`toy::ToyBackend`] wraps the in-repo policy,
//! [`http::HttpBackend`] speaks JSON-over-HTTP to chat-completion servers.
//! [`mock::MockBackend`] is a deterministic test double used by the
//! statistical curation tests.
//!
//! A backend answers one [`GenRequest`] with exactly `n` completions.
//! Implementations must be shareable across concurrent curation workers
//! (`Send + Sync`), and deterministic ones must derive all randomness from
//! the request seed so results do not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod http;
pub mod mock;
pub mod toy;

/// One generation request: a prompt pair plus sampling parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    /// Number of completions requested.
    pub n: usize,
    pub max_tokens: usize,
    /// Non-negative; 0 means greedy decoding.
    pub temperature: f64,
    /// Seed for deterministic backends; remote servers may ignore it.
    pub seed: Option<u64>,
}

impl GenRequest {
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Config("generation request needs n >= 1".to_string()));
        }
        if self.max_tokens < 1 {
            return Err(Error::Config("generation request needs max_tokens >= 1".to_string()));
        }
        if !(self.temperature >= 0.0) {
            return Err(Error::Config(format!(
                "generation temperature must be non-negative, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Why a completion ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    /// Natural end of generation.
    Stop,
    /// Truncated at the token cap.
    Length,
}

/// The n completions for one request, in sampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResponse {
    pub texts: Vec<String>,
    pub finish_reasons: Vec<FinishReason>,
}

impl GenResponse {
    /// Checks the cardinality contract against the originating request.
    pub fn validate_against(&self, request: &GenRequest) -> Result<()> {
        if self.texts.len() != request.n || self.finish_reasons.len() != request.n {
            return Err(Error::ContractViolation(format!(
                "backend returned {} texts and {} finish reasons for n={}",
                self.texts.len(),
                self.finish_reasons.len(),
                request.n
            )));
        }
        Ok(())
    }
}

/// A text-generation service.
pub trait Backend: Send + Sync {
    /// Produces exactly `request.n` completions or an error. Implementations
    /// validate the request and their own response cardinality.
    fn generate(&self, request: &GenRequest) -> Result<GenResponse>;

    /// Identity string recorded in curation output headers, e.g. the model
    /// name or checkpoint path.
    fn name(&self) -> &str;

    /// Upper bound on concurrent in-flight requests this backend tolerates.
    /// Callers cap their worker pools at this value.
    fn max_in_flight(&self) -> usize {
        usize::MAX
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation_rejects_bad_fields() {
        let ok = GenRequest {
            system_prompt: String::new(),
            user_prompt: "q".to_string(),
            n: 1,
            max_tokens: 8,
            temperature: 0.0,
            seed: None,
        };
        assert!(ok.validate().is_ok());
        assert!(GenRequest { n: 0, ..ok.clone() }.validate().is_err());
        assert!(GenRequest { max_tokens: 0, ..ok.clone() }.validate().is_err());
        assert!(GenRequest { temperature: -0.1, ..ok.clone() }.validate().is_err());
        assert!(GenRequest { temperature: f64::NAN, ..ok }.validate().is_err());
    }

    #[test]
    fn cardinality_contract_is_checked() {
        let req = GenRequest {
            system_prompt: String::new(),
            user_prompt: "q".to_string(),
            n: 2,
            max_tokens: 8,
            temperature: 1.0,
            seed: Some(0),
        };
        let good = GenResponse {
            texts: vec!["a".into(), "b".into()],
            finish_reasons: vec![FinishReason::Stop, FinishReason::Length],
        };
        assert!(good.validate_against(&req).is_ok());
        let bad = GenResponse { texts: vec!["a".into()], finish_reasons: vec![FinishReason::Stop] };
        assert!(bad.validate_against(&req).is_err());
    }
}
