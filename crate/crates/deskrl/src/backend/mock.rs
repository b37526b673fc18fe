//! Deterministic backend double for curation and evaluation tests.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::policy::derive_seed;

use super::{Backend, FinishReason, GenRequest, GenResponse};

/// What the mock emits for each sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MockBehavior {
    /// Every sample is a correct boxed answer.
    AlwaysGold,
    /// No sample ever contains a boxed answer.
    NeverBox,
    /// Each sample is independently correct with this probability,
    /// driven by the request seed.
    GoldWithProbability(f64),
}

/// Scripted backend: knows the gold answer for each prompt and emits
/// correct or incorrect responses per [`MockBehavior`]. Fully deterministic
/// given the request seed (falling back to a base seed from construction).
pub struct MockBackend {
    golds: BTreeMap<String, String>,
    behavior: MockBehavior,
    base_seed: u64,
}

impl MockBackend {
    pub fn new(
        golds: impl IntoIterator<Item = (String, String)>,
        behavior: MockBehavior,
        base_seed: u64,
    ) -> Self {
        if let MockBehavior::GoldWithProbability(p) = behavior {
            assert!((0.0..=1.0).contains(&p), "probability must be in [0, 1]");
        }
        MockBackend { golds: golds.into_iter().collect(), behavior, base_seed }
    }

    fn gold_for(&self, prompt: &str) -> Result<&str> {
        self.golds
            .get(prompt)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidData(format!("mock backend has no gold for prompt {prompt:?}")))
    }
}

impl Backend for MockBackend {
    fn generate(&self, request: &GenRequest) -> Result<GenResponse> {
        request.validate()?;
        let correct = |gold: &str| format!("the answer is \\boxed{{{gold}}}");
        const WRONG: &str = "this response never commits to an answer";
        let texts: Vec<String> = match self.behavior {
            MockBehavior::AlwaysGold => {
                let gold = self.gold_for(&request.user_prompt)?;
                vec![correct(gold); request.n]
            }
            MockBehavior::NeverBox => vec![WRONG.to_string(); request.n],
            MockBehavior::GoldWithProbability(p) => {
                let gold = self.gold_for(&request.user_prompt)?;
                let base = request.seed.unwrap_or(self.base_seed);
                (0..request.n)
                    .map(|i| {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(base, i as u64));
                        if rng.gen::<f64>() < p {
                            correct(gold)
                        } else {
                            WRONG.to_string()
                        }
                    })
                    .collect()
            }
        };
        let finish_reasons = vec![FinishReason::Stop; request.n];
        Ok(GenResponse { texts, finish_reasons })
    }

    fn name(&self) -> &str {
        "mock"
    }
}
