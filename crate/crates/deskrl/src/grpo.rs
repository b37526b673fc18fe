//! Group-relative policy optimization with verifiable binary rewards.
//!
//! Stage 2 of the pipeline. Each step samples G rollouts per prompt at
//! temperature 1, scores each rollout 0/1 with the verifier, normalizes
//! rewards within each group,
//!
//!   A_i = (r_i - mean(r)) / (population_std(r) + advantage_epsilon)
//!
//! (exactly zero for a group whose rewards are all equal), and performs one
//! gradient update on the asymmetric clipped token-level surrogate
//!
//!   term(i, t) = min(rho * A_i, clip(rho, 1 - eps_low, 1 + eps_high) * A_i)
//!   loss = -(sum of term over included tokens) / (included token count)
//!
//! where rho = exp(new_logprob - old_logprob). There is no KL term and no
//! reference policy. Training is strictly on-policy: the "old" logprobs are
//! the pre-update parameters', so rho = 1 at every update and clipping only
//! engages on synthetic or stale ratios (it is implemented and tested for
//! them). Responses truncated at the generation cap are excluded from the
//! loss and gradient but still count in the group reward statistics: a
//! truncated response earned its 0 legitimately, and removing it would bias
//! the surviving advantages.
//!
//! The eps_high > eps_low asymmetry keeps gradient flow for up-weighting a
//! positive-advantage token until rho = 1 + eps_high, while a
//! negative-advantage token loses flow below rho = 1 - eps_low.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curator::{label_for, CuratedRecord, Problem};
use crate::error::{Error, Result};
use crate::policy::{derive_seed, PolicyParams, SampleFinish, TokenId, STOP_TOKEN};
use crate::verifier;

/// One sampled response with the logprobs recorded at sampling time.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub tokens: Vec<TokenId>,
    /// ln pi_old(token | state), one per token, from the sampling policy.
    pub old_logprobs: Vec<f64>,
    /// True iff the generation cap was hit before a stop token.
    pub truncated: bool,
}

/// G rollouts for one prompt with their rewards and normalized advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt_key: usize,
    pub rollouts: Vec<Rollout>,
    /// Verifier outcomes, each exactly 0.0 or 1.0.
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// True iff every reward in the group is equal; such a group carries no
    /// learning signal and contributes exactly zero gradient.
    pub fn is_degenerate(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }

    fn check(&self) {
        debug_assert!(self.rollouts.len() >= 2, "group size must be at least 2");
        debug_assert_eq!(self.rollouts.len(), self.rewards.len());
        debug_assert_eq!(self.rollouts.len(), self.advantages.len());
        for r in &self.rollouts {
            debug_assert_eq!(r.tokens.len(), r.old_logprobs.len());
        }
    }
}

/// Trainer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoConfig {
    /// Rollouts per prompt (G).
    pub group_size: usize,
    pub prompts_per_batch: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Lower clip bound offset: ratios below 1 - eps_low are clipped.
    pub eps_low: f64,
    /// Upper clip bound offset; eps_high >= eps_low is the asymmetry.
    pub eps_high: f64,
    pub max_gen_len: usize,
    /// Added to the standard deviation in advantage normalization.
    pub advantage_epsilon: f64,
    pub seed: u64,
}

impl GrpoConfig {
    pub fn new(group_size: usize, prompts_per_batch: usize, steps: usize, learning_rate: f64, seed: u64) -> Self {
        GrpoConfig {
            group_size,
            prompts_per_batch,
            steps,
            learning_rate,
            eps_low: 0.2,
            eps_high: 0.28,
            max_gen_len: 64,
            advantage_epsilon: 1e-8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be at least 2".to_string()));
        }
        if self.prompts_per_batch < 1 {
            return Err(Error::Config("prompts_per_batch must be at least 1".to_string()));
        }
        if !(self.eps_low > 0.0) || self.eps_high < self.eps_low {
            return Err(Error::Config(format!(
                "clip bounds need eps_high >= eps_low > 0, got eps_low={} eps_high={}",
                self.eps_low, self.eps_high
            )));
        }
        if self.max_gen_len < 1 {
            return Err(Error::Config("max_gen_len must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".to_string()));
        }
        if !(self.advantage_epsilon >= 0.0) {
            return Err(Error::Config("advantage_epsilon must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// Per-step diagnostics, one CSV row each.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// Mean verifier reward over every rollout in the batch.
    pub mean_reward: f64,
    /// Surrogate loss at the pre-update parameters.
    pub loss: f64,
    /// Fraction of rollouts truncated at the generation cap.
    pub frac_truncated: f64,
    /// Fraction of groups with all-equal rewards.
    pub frac_degenerate: f64,
}

/// Group-relative advantages: (r_i - mean) / (population_std + epsilon).
/// A group with all-equal rewards gets exact zeros, bypassing the division.
pub fn compute_advantages(rewards: &[f64], advantage_epsilon: f64) -> Vec<f64> {
    assert!(rewards.len() >= 2, "advantage normalization needs a group of at least 2");
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + advantage_epsilon)).collect()
}

/// Per-rollout inclusion mask: a rollout enters the loss iff it was not
/// truncated. Excluded rollouts still participated in the reward statistics
/// when the group's advantages were computed.
pub fn overlong_mask(group: &RolloutGroup) -> Vec<bool> {
    group.rollouts.iter().map(|r| !r.truncated).collect()
}

/// Clipped token-level surrogate over a batch of groups, with its exact
/// gradient with respect to `params` (the "new" policy).
///
/// Per included token: rho = exp(new - old),
/// term = min(rho * A, clamp(rho, 1 - eps_low, 1 + eps_high) * A), and
/// loss = -(sum of terms) / T where T is the included token count across the
/// whole batch. Gradient flow per token: A > 0 flows iff rho <= 1+eps_high,
/// A < 0 flows iff rho >= 1-eps_low, A = 0 never flows; a flowing token
/// contributes -(A * rho / T) * grad(ln pi). A fully-excluded batch returns
/// (0, zeros).
pub fn surrogate_loss(groups: &[RolloutGroup], params: &PolicyParams, config: &GrpoConfig) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; params.num_params()];
    let total_tokens: usize = groups
        .iter()
        .flat_map(|g| g.rollouts.iter().filter(|r| !r.truncated))
        .map(|r| r.tokens.len())
        .sum();
    if total_tokens == 0 {
        return (0.0, grad);
    }
    let t_inv = 1.0 / total_tokens as f64;
    let mut term_sum = 0.0;
    let mut coeff: Vec<f64> = Vec::new();
    for group in groups {
        group.check();
        let mask = overlong_mask(group);
        for (i, rollout) in group.rollouts.iter().enumerate() {
            if !mask[i] {
                continue;
            }
            let a = group.advantages[i];
            let new_logprobs = params.token_logprobs(group.prompt_key, &rollout.tokens);
            coeff.clear();
            for (new_lp, old_lp) in new_logprobs.iter().zip(&rollout.old_logprobs) {
                let rho = (new_lp - old_lp).exp();
                let clipped = rho.clamp(1.0 - config.eps_low, 1.0 + config.eps_high);
                term_sum += (rho * a).min(clipped * a);
                let flows = (a > 0.0 && rho <= 1.0 + config.eps_high)
                    || (a < 0.0 && rho >= 1.0 - config.eps_low);
                coeff.push(if flows { -a * rho * t_inv } else { 0.0 });
            }
            params.accumulate_logprob_grad(group.prompt_key, &rollout.tokens, &coeff, &mut grad);
        }
    }
    (-term_sum * t_inv, grad)
}

/// Independently coded REINFORCE gradient of
/// loss = -(1/T) * sum over included rollouts of A_i * ln pi(rollout), used
/// to pin the on-policy (rho = 1) identity of [`surrogate_loss`]. This
/// deliberately re-derives feature rows and softmax straight from the weight
/// table instead of calling the policy's gradient path.
pub fn reference_policy_gradient(groups: &[RolloutGroup], params: &PolicyParams) -> Vec<f64> {
    let v = params.vocab().size();
    let cfg = *params.config();
    let w = params.weights();
    let mut grad = vec![0.0; w.len()];
    let total_tokens: usize = groups
        .iter()
        .flat_map(|g| g.rollouts.iter().filter(|r| !r.truncated))
        .map(|r| r.tokens.len())
        .sum();
    if total_tokens == 0 {
        return grad;
    }
    let t_inv = 1.0 / total_tokens as f64;
    for group in groups {
        for (i, rollout) in group.rollouts.iter().enumerate() {
            if rollout.truncated {
                continue;
            }
            let a = group.advantages[i];
            let mut prev = STOP_TOKEN;
            for (pos, &tok) in rollout.tokens.iter().enumerate() {
                let bucket = (pos / cfg.position_bucket_width).min(cfg.position_buckets - 1);
                let rows = [prev, v + bucket, v + cfg.position_buckets + group.prompt_key];
                let mut logits = vec![0.0; v];
                for r in rows {
                    for (z, wv) in logits.iter_mut().zip(&w[r * v..(r + 1) * v]) {
                        *z += wv;
                    }
                }
                let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut probs: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
                let sum: f64 = probs.iter().sum();
                for p in probs.iter_mut() {
                    *p /= sum;
                }
                let c = -a * t_inv;
                for r in rows {
                    let row = &mut grad[r * v..(r + 1) * v];
                    for (gv, &p) in row.iter_mut().zip(&probs) {
                        *gv -= c * p;
                    }
                    row[tok] += c;
                }
                prev = tok;
            }
        }
    }
    grad
}

/// Samples one group for a prompt: G rollouts at temperature 1, rewarded by
/// the verifier, advantages normalized within the group.
pub fn sample_group(
    params: &PolicyParams,
    problem: &Problem,
    config: &GrpoConfig,
    group_seed: u64,
) -> RolloutGroup {
    let key = params.prompt_key(&problem.prompt);
    let mut rollouts = Vec::with_capacity(config.group_size);
    let mut rewards = Vec::with_capacity(config.group_size);
    for g in 0..config.group_size {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(group_seed, g as u64));
        let s = params.sample(key, config.max_gen_len, 1.0, &mut rng);
        let text = params.vocab().decode(&s.tokens);
        rewards.push(verifier::reward(&text, &problem.gold).reward);
        rollouts.push(Rollout {
            tokens: s.tokens,
            old_logprobs: s.logprobs,
            truncated: s.finish == SampleFinish::Length,
        });
    }
    let advantages = compute_advantages(&rewards, config.advantage_epsilon);
    RolloutGroup { prompt_key: key, rollouts, rewards, advantages }
}

/// One training step: fresh rollouts for each prompt in the batch, one
/// gradient update. Strictly on-policy; the returned loss is evaluated at
/// the pre-update parameters.
pub fn grpo_step(
    params: &mut PolicyParams,
    batch: &[&Problem],
    config: &GrpoConfig,
    step_index: usize,
) -> StepMetrics {
    let step_seed = derive_seed(config.seed, step_index as u64);
    let groups: Vec<RolloutGroup> = batch
        .iter()
        .enumerate()
        .map(|(slot, problem)| sample_group(params, problem, config, derive_seed(step_seed, slot as u64)))
        .collect();

    let n_rollouts = (groups.len() * config.group_size) as f64;
    let mean_reward = groups.iter().flat_map(|g| g.rewards.iter()).sum::<f64>() / n_rollouts;
    let frac_truncated =
        groups.iter().flat_map(|g| g.rollouts.iter()).filter(|r| r.truncated).count() as f64 / n_rollouts;
    let frac_degenerate =
        groups.iter().filter(|g| g.is_degenerate()).count() as f64 / groups.len() as f64;

    let (loss, grad) = surrogate_loss(&groups, params, config);
    params.add_scaled(&grad, -config.learning_rate);

    StepMetrics { step: step_index, mean_reward, loss, frac_truncated, frac_degenerate }
}

/// Validates a curated dataset for RL consumption.
fn validate_dataset(dataset: &[CuratedRecord]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::InvalidData(
            "curated dataset is empty; run `curate` on a problem file first".to_string(),
        ));
    }
    for record in dataset {
        record.validate()?;
        label_for(&record.attempt_record)?;
        if verifier::parse_answer(&record.problem.gold).is_err() {
            return Err(Error::InvalidData(format!(
                "problem {}: gold answer {:?} does not parse",
                record.problem.id, record.problem.gold
            )));
        }
    }
    Ok(())
}

/// Full training loop over shuffled prompt batches. `on_step` runs after
/// every update with the step metrics and current parameters (for CSV rows
/// and periodic checkpoints); an error from it aborts training.
pub fn grpo_train<F>(
    mut params: PolicyParams,
    dataset: &[CuratedRecord],
    config: &GrpoConfig,
    mut on_step: F,
) -> Result<(PolicyParams, Vec<StepMetrics>)>
where
    F: FnMut(&StepMetrics, &PolicyParams) -> Result<()>,
{
    config.validate()?;
    validate_dataset(dataset)?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, u64::from(u32::MAX)));
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut offset = 0usize;
    let mut history = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        if offset >= order.len() {
            order.shuffle(&mut rng);
            offset = 0;
        }
        let end = (offset + config.prompts_per_batch).min(order.len());
        let batch: Vec<&Problem> = order[offset..end].iter().map(|&i| &dataset[i].problem).collect();
        offset = end;
        let metrics = grpo_step(&mut params, &batch, config, step);
        on_step(&metrics, &params)?;
        history.push(metrics);
    }
    Ok((params, history))
}

/// Writes the metrics CSV: `step,mean_reward,loss,frac_truncated,frac_degenerate`.
pub fn write_metrics_csv(path: &Path, metrics: &[StepMetrics]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "step,mean_reward,loss,frac_truncated,frac_degenerate")?;
    for m in metrics {
        writeln!(w, "{},{},{},{},{}", m.step, m.mean_reward, m.loss, m.frac_truncated, m.frac_degenerate)?;
    }
    Ok(())
}
