//! Backend adapter over the in-repo toy policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::policy::{derive_seed, PolicyParams, SampleFinish};

use super::{Backend, FinishReason, GenRequest, GenResponse};

/// Serves generation requests from an immutable snapshot of policy
/// parameters taken at construction time.
///
/// The policy conditions on the user prompt only through its hashed prompt
/// key; the system prompt is accepted for interface compatibility and does
/// not influence toy generation. Sample i of a request draws from an RNG
/// seeded with `derive_seed(request seed, i)`, so results are reproducible
/// and independent of request scheduling. A request without a seed gets a
/// fresh OS-entropy seed.
pub struct ToyBackend {
    params: PolicyParams,
    name: String,
}

impl ToyBackend {
    pub fn new(params: PolicyParams, name: impl Into<String>) -> Self {
        ToyBackend { params, name: name.into() }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

impl Backend for ToyBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        request.validate()?;
        let key = self.params.prompt_key(&request.user_prompt);
        let base = request.seed.unwrap_or_else(rand::random);
        let mut texts = Vec::with_capacity(request.n);
        let mut finish_reasons = Vec::with_capacity(request.n);
        for i in 0..request.n {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, i as u64));
            let s = self.params.sample(key, request.max_tokens, request.temperature, &mut rng);
            texts.push(self.params.vocab().decode(&s.tokens));
            finish_reasons.push(match s.finish {
                SampleFinish::Stop => FinishReason::Stop,
                SampleFinish::Length => FinishReason::Length,
            });
        }
        let response = GenResponse { texts, finish_reasons };
        response.validate_against(request)?;
        Ok(response)
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicyConfig, Vocab};

    fn backend() -> ToyBackend {
        ToyBackend::new(
            PolicyParams::new_zeroed(Vocab::standard(), PolicyConfig::default()),
            "toy:zero",
        )
    }

    fn request(n: usize, max_tokens: usize, temperature: f64, seed: Option<u64>) -> GenRequest {
        GenRequest {
            system_prompt: "sys".to_string(),
            user_prompt: "compute 3+4".to_string(),
            n,
            max_tokens,
            temperature,
            seed,
        }
    }

    #[test]
    fn returns_exactly_n_completions() {
        let r = backend().generate(&request(16, 8, 1.0, Some(7))).unwrap();
        assert_eq!(r.texts.len(), 16);
        assert_eq!(r.finish_reasons.len(), 16);
    }

    #[test]
    fn fixed_seed_is_bit_reproducible() {
        let b = backend();
        let a = b.generate(&request(5, 16, 1.0, Some(42))).unwrap();
        let c = b.generate(&request(5, 16, 1.0, Some(42))).unwrap();
        assert_eq!(a, c);
        let d = b.generate(&request(5, 16, 1.0, Some(43))).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn samples_within_a_request_are_independent() {
        // With a zero policy the samples are iid uniform; two samples being
        // identical 16-token strings would be astronomically unlikely.
        let r = backend().generate(&request(2, 16, 1.0, Some(1))).unwrap();
        assert_ne!(r.texts[0], r.texts[1]);
    }

    #[test]
    fn max_tokens_one_is_length_unless_stop() {
        let r = backend().generate(&request(64, 1, 1.0, Some(3))).unwrap();
        for (text, finish) in r.texts.iter().zip(&r.finish_reasons) {
            if *finish == FinishReason::Stop {
                assert!(text.is_empty(), "stop after one token means the stop token itself");
            } else {
                assert_eq!(*finish, FinishReason::Length);
            }
        }
        // Uniform policy: an immediate stop has probability 1/45 per sample,
        // so 64 samples contain both finish kinds with near certainty.
        assert!(r.finish_reasons.contains(&FinishReason::Length));
    }

    #[test]
    fn temperature_zero_gives_identical_greedy_texts() {
        let r = backend().generate(&request(3, 8, 0.0, Some(9))).unwrap();
        assert_eq!(r.texts[0], r.texts[1]);
        assert_eq!(r.texts[1], r.texts[2]);
        // Zero weights tie-break to the stop token, so greedy text is empty.
        assert_eq!(r.texts[0], "");
        assert!(r.finish_reasons.iter().all(|f| *f == FinishReason::Stop));
    }

    #[test]
    fn rejects_invalid_requests() {
        assert!(backend().generate(&request(0, 8, 1.0, Some(0))).is_err());
    }
}
