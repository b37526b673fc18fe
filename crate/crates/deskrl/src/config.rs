//! One serializable record holding every training knob, with the toy-scale
//! defaults used by the CLI and the full-scale reference settings.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grpo::GrpoConfig;
use crate::sft::SftConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Rollouts per prompt (G) in the RL stage.
    pub group_size: usize,
    /// Prompts per RL batch.
    pub prompts_per_batch: usize,
    pub grpo_steps: usize,
    pub sft_batch_size: usize,
    pub sft_steps: usize,
    /// Prompt + response token budget for an SFT example.
    pub sft_max_seq_len: usize,
    /// Generation cap for RL rollouts and evaluation.
    pub max_gen_len: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub sft_learning_rate: f64,
    pub grpo_learning_rate: f64,
    pub advantage_epsilon: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults sized for the toy arithmetic task.
    pub fn toy() -> Self {
        TrainConfig {
            group_size: 4,
            prompts_per_batch: 14,
            grpo_steps: 300,
            sft_batch_size: 16,
            sft_steps: 2000,
            sft_max_seq_len: 128,
            max_gen_len: 64,
            eps_low: 0.2,
            eps_high: 0.28,
            sft_learning_rate: 0.1,
            grpo_learning_rate: 0.05,
            advantage_epsilon: 1e-8,
            seed: 0,
        }
    }

    /// Full-scale settings for the smaller reference model: 4 rollouts per
    /// prompt, batch 14, 300 RL steps, SFT batch 128 at a 32,768-token
    /// window, 8,192-token generation cap. Learning rates and SFT step
    /// counts are not published for this configuration and keep the
    /// defaults.
    pub fn reference_3b() -> Self {
        TrainConfig {
            group_size: 4,
            prompts_per_batch: 14,
            grpo_steps: 300,
            sft_batch_size: 128,
            sft_max_seq_len: 32_768,
            max_gen_len: 8_192,
            ..TrainConfig::toy()
        }
    }

    /// Full-scale settings for the larger reference model: 14 rollouts per
    /// prompt, batch 48, 40 RL steps.
    pub fn reference_7b() -> Self {
        TrainConfig {
            group_size: 14,
            prompts_per_batch: 48,
            grpo_steps: 40,
            ..TrainConfig::reference_3b()
        }
    }

    pub fn sft_config(&self) -> SftConfig {
        SftConfig::new(self.sft_batch_size, self.sft_steps, self.sft_learning_rate, self.seed)
    }

    pub fn grpo_config(&self) -> GrpoConfig {
        GrpoConfig {
            group_size: self.group_size,
            prompts_per_batch: self.prompts_per_batch,
            steps: self.grpo_steps,
            learning_rate: self.grpo_learning_rate,
            eps_low: self.eps_low,
            eps_high: self.eps_high,
            max_gen_len: self.max_gen_len,
            advantage_epsilon: self.advantage_epsilon,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sft_config().validate()?;
        self.grpo_config().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_carry_published_numbers() {
        for cfg in [TrainConfig::toy(), TrainConfig::reference_3b(), TrainConfig::reference_7b()] {
            cfg.validate().unwrap();
            assert_eq!(cfg.eps_low, 0.2);
            assert_eq!(cfg.eps_high, 0.28);
        }
        let small = TrainConfig::reference_3b();
        assert_eq!(small.group_size, 4);
        assert_eq!(small.prompts_per_batch, 14);
        assert_eq!(small.grpo_steps, 300);
        assert_eq!(small.sft_batch_size, 128);
        assert_eq!(small.sft_max_seq_len, 32_768);
        assert_eq!(small.max_gen_len, 8_192);
        let large = TrainConfig::reference_7b();
        assert_eq!(large.group_size, 14);
        assert_eq!(large.prompts_per_batch, 48);
        assert_eq!(large.grpo_steps, 40);
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = TrainConfig::toy();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn conversions_carry_shared_fields() {
        let cfg = TrainConfig::toy();
        let sft = cfg.sft_config();
        assert_eq!(sft.batch_size, 16);
        assert_eq!(sft.learning_rate, 0.1);
        let grpo = cfg.grpo_config();
        assert_eq!(grpo.group_size, 4);
        assert_eq!(grpo.eps_high, 0.28);
        assert_eq!(grpo.seed, cfg.seed);
    }
}
