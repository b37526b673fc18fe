//! Supervised fine-tuning on chain-of-thought traces.
//!
//! Stage 1 of the pipeline: masked token-level cross-entropy over reference
//! traces. The loss is the mean over all response tokens in a batch of
//! -ln pi(token | state); prompt tokens carry no loss by default (masking is
//! the `prompt_loss_weight` toggle). Response tokens are scored in exactly
//! the state layout generation uses (previous response token, response
//! -internal position bucket, prompt key), so what SFT teaches is what
//! sampling reproduces.
//!
//! The optimizer is plain SGD over shuffled epochs: no momentum, no
//! schedule, bit-reproducible under a seed.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, TokenId, Vocab, STOP_TOKEN};

/// One training example: a tokenized prompt/response pair.
///
/// `response_tokens` is nonempty and ends with the stop token, so the policy
/// learns to terminate. `prompt_tokens` enter the loss only through the
/// optional prompt-loss term; the response is conditioned on the prompt via
/// `prompt_key` alone, matching generation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftExample {
    pub prompt_key: usize,
    pub prompt_tokens: Vec<TokenId>,
    pub response_tokens: Vec<TokenId>,
}

/// Loaded dataset plus the number of over-length examples dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftDataset {
    pub examples: Vec<SftExample>,
    pub dropped_over_length: usize,
}

/// Training settings for [`sft_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct SftConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// 0 masks prompt tokens out of the loss (default). A positive weight
    /// adds weighted NLL over prompt tokens, scored as their own sequence.
    pub prompt_loss_weight: f64,
}

impl SftConfig {
    pub fn new(batch_size: usize, steps: usize, learning_rate: f64, seed: u64) -> Self {
        SftConfig { batch_size, steps, learning_rate, seed, prompt_loss_weight: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("sft batch_size must be at least 1".to_string()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("sft learning_rate must be positive".to_string()));
        }
        if !(self.prompt_loss_weight >= 0.0) {
            return Err(Error::Config("prompt_loss_weight must be non-negative".to_string()));
        }
        Ok(())
    }
}

/// Builds one example from prompt and trace text. Returns `None` when the
/// combined token length exceeds `max_seq_len` (over-length traces are
/// dropped, not truncated: a truncated trace loses its boxed answer and
/// would teach truncation).
pub fn build_example(
    vocab: &Vocab,
    key_buckets: usize,
    prompt: &str,
    trace: &str,
    max_seq_len: usize,
) -> Result<Option<SftExample>> {
    let prompt_tokens = vocab.encode(prompt)?;
    let mut response_tokens = vocab.encode(trace)?;
    response_tokens.push(STOP_TOKEN);
    if prompt_tokens.len() + response_tokens.len() > max_seq_len {
        return Ok(None);
    }
    Ok(Some(SftExample {
        prompt_key: crate::policy::prompt_key(prompt, key_buckets),
        prompt_tokens,
        response_tokens,
    }))
}

#[derive(Deserialize)]
struct TraceRecord {
    #[serde(default)]
    id: String,
    prompt: String,
    trace: String,
}

/// Loads a JSONL file of `{prompt, trace, ...}` records into tokenized
/// examples, dropping (and counting) over-length ones.
pub fn load_dataset(
    path: &Path,
    vocab: &Vocab,
    key_buckets: usize,
    max_seq_len: usize,
) -> Result<SftDataset> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open sft data {}: {e}", path.display())))?;
    let mut examples = Vec::new();
    let mut dropped = 0usize;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TraceRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        match build_example(vocab, key_buckets, &record.prompt, &record.trace, max_seq_len) {
            Ok(Some(example)) => examples.push(example),
            Ok(None) => {
                dropped += 1;
                log::warn!("dropping over-length example {} at {}:{}", record.id, path.display(), lineno + 1);
            }
            Err(e) => {
                return Err(Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1)));
            }
        }
    }
    Ok(SftDataset { examples, dropped_over_length: dropped })
}

/// Token-mean negative log-likelihood over a batch, with its exact gradient.
///
/// loss = (sum over response tokens of -ln pi(token | state)) / (number of
/// response tokens in the batch), plus the optional weighted prompt term.
/// At zero initialization the policy is uniform, so the loss is exactly
/// ln(V) regardless of the batch.
pub fn sft_loss(params: &PolicyParams, batch: &[SftExample], prompt_loss_weight: f64) -> (f64, Vec<f64>) {
    assert!(!batch.is_empty(), "sft batch must be nonempty");
    let total_tokens: usize = batch.iter().map(|e| e.response_tokens.len()).sum();
    let scale = -1.0 / total_tokens as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.num_params()];
    for example in batch {
        debug_assert_eq!(example.response_tokens.last(), Some(&STOP_TOKEN));
        let logprobs = params.token_logprobs(example.prompt_key, &example.response_tokens);
        loss -= logprobs.iter().sum::<f64>() / total_tokens as f64;
        let coeff = vec![scale; example.response_tokens.len()];
        params.accumulate_logprob_grad(example.prompt_key, &example.response_tokens, &coeff, &mut grad);
    }
    if prompt_loss_weight > 0.0 {
        let prompt_total: usize = batch.iter().map(|e| e.prompt_tokens.len()).sum();
        if prompt_total > 0 {
            let pscale = -prompt_loss_weight / prompt_total as f64;
            for example in batch {
                if example.prompt_tokens.is_empty() {
                    continue;
                }
                let logprobs = params.token_logprobs(example.prompt_key, &example.prompt_tokens);
                loss -= prompt_loss_weight * logprobs.iter().sum::<f64>() / prompt_total as f64;
                let coeff = vec![pscale; example.prompt_tokens.len()];
                params.accumulate_logprob_grad(example.prompt_key, &example.prompt_tokens, &coeff, &mut grad);
            }
        }
    }
    (loss, grad)
}

/// Plain SGD over shuffled epochs. Returns the trained parameters and the
/// loss measured at each step (before that step's update). Deterministic:
/// identical (dataset, config) inputs give bit-identical outputs.
pub fn sft_train(
    mut params: PolicyParams,
    examples: &[SftExample],
    config: &SftConfig,
) -> Result<(PolicyParams, Vec<f64>)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidData("sft dataset is empty".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut offset = 0usize;
    let mut losses = Vec::with_capacity(config.steps);
    let mut batch: Vec<SftExample> = Vec::with_capacity(config.batch_size);
    for _ in 0..config.steps {
        if offset >= order.len() {
            order.shuffle(&mut rng);
            offset = 0;
        }
        let end = (offset + config.batch_size).min(order.len());
        batch.clear();
        batch.extend(order[offset..end].iter().map(|&i| examples[i].clone()));
        offset = end;
        let (loss, grad) = sft_loss(&params, &batch, config.prompt_loss_weight);
        params.add_scaled(&grad, -config.learning_rate);
        losses.push(loss);
    }
    Ok((params, losses))
}

/// Appends a `step,loss` CSV to `path`.
pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "step,loss")?;
    for (step, loss) in losses.iter().enumerate() {
        writeln!(w, "{step},{loss}")?;
    }
    Ok(())
}
