//! Toy autoregressive policy: a linear-softmax next-token model.
//!
//! The model is small enough to train on a laptop CPU in seconds yet shares
//! the interface of a real language model policy: it conditions on a prompt,
//! emits response tokens one at a time until a stop token or a length cap,
//! and exposes exact per-token log-probabilities and their gradients.
//!
//! State features are a concatenation of three one-hot blocks:
//!
//!   x(state) = onehot(prev_token) ++ onehot(position_bucket) ++ onehot(prompt_key)
//!
//! with logits z = W^T x, i.e. the sum of three rows of the weight matrix W
//! of shape (V + B + K) x V. The prompt enters only through `prompt_key`, a
//! 64-bit FNV-1a hash of the prompt text reduced mod K, so the model can
//! memorize per-prompt behavior without any prompt tokenization. Positions
//! are response-internal (the first generated token is position 0) and are
//! bucketed in fixed-width ranges with the last bucket open-ended.
//!
//! Log-probabilities use ln softmax(z) with max subtraction; gradients of
//! ln p(y | state) with respect to W are exact in closed form:
//!
//!   d ln p(y) / d W[r, v] = (1[v == y] - p(v))   for each active row r
//!
//! which keeps finite-difference checks tight (relative error near 1e-9).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub mod toy;

/// Token identifier: an index into the vocabulary.
pub type TokenId = usize;

/// The stop token. Also used as the synthetic "previous token" for the first
/// response position, so a fresh sequence starts from a well-defined state.
pub const STOP_TOKEN: TokenId = 0;

pub const DEFAULT_PROMPT_KEY_BUCKETS: usize = 512;
pub const DEFAULT_POSITION_BUCKETS: usize = 5;
pub const DEFAULT_POSITION_BUCKET_WIDTH: usize = 4;

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

/// Fixed character-level vocabulary: stop marker, space, digits, lowercase
/// letters, and the symbols needed to write arithmetic and a boxed answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    by_char: BTreeMap<char, TokenId>,
}

const STOP_TOKEN_TEXT: &str = "<stop>";
const VOCAB_SYMBOLS: [char; 7] = ['+', '-', '×', '=', '\\', '{', '}'];

impl Vocab {
    /// The standard 45-token vocabulary:
    /// `<stop>`, space, `0`..`9`, `a`..`z`, `+ - × = \ { }`.
    pub fn standard() -> Self {
        let mut tokens = vec![STOP_TOKEN_TEXT.to_string(), " ".to_string()];
        tokens.extend(('0'..='9').map(String::from));
        tokens.extend(('a'..='z').map(String::from));
        tokens.extend(VOCAB_SYMBOLS.iter().map(|&c| String::from(c)));
        let by_char = tokens
            .iter()
            .enumerate()
            .skip(1)
            .map(|(id, t)| (t.chars().next().expect("non-empty"), id))
            .collect();
        Vocab { tokens, by_char }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token_text(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    /// Tokenizes response text; every character must be in the vocabulary.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .map(|c| {
                self.by_char.get(&c).copied().ok_or_else(|| {
                    Error::InvalidData(format!("character {c:?} is not in the vocabulary"))
                })
            })
            .collect()
    }

    /// Renders tokens back to text. Stop tokens render as nothing, so a
    /// terminated sequence decodes to exactly the text that was generated.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .filter(|&&t| t != STOP_TOKEN)
            .map(|&t| self.tokens[t].as_str())
            .collect()
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::standard()
    }
}

// ---------------------------------------------------------------------------
// Hashing utilities
// ---------------------------------------------------------------------------

/// 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Prompt feature index: FNV-1a of the prompt text reduced mod `buckets`.
pub fn prompt_key(prompt: &str, buckets: usize) -> usize {
    debug_assert!(buckets > 0);
    (fnv1a64(prompt.as_bytes()) % buckets as u64) as usize
}

/// Derives an independent child seed from a base seed and a stream index
/// (splitmix64 finalizer on base + stream * golden gamma). Used to give each
/// sampling request its own RNG so concurrency and retries cannot perturb
/// other requests' randomness.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Structural hyperparameters of the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub prompt_key_buckets: usize,
    pub position_buckets: usize,
    pub position_bucket_width: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            prompt_key_buckets: DEFAULT_PROMPT_KEY_BUCKETS,
            position_buckets: DEFAULT_POSITION_BUCKETS,
            position_bucket_width: DEFAULT_POSITION_BUCKET_WIDTH,
        }
    }
}

/// Maps a response-internal position to its bucket index. Buckets are
/// `width`-wide; everything past the last boundary lands in the final bucket.
pub fn position_bucket(pos: usize, width: usize, buckets: usize) -> usize {
    (pos / width).min(buckets - 1)
}

/// How a sampled sequence ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFinish {
    /// The stop token was generated (and is included in `tokens`).
    Stop,
    /// The length cap was hit before a stop token; the sequence is truncated.
    Length,
}

/// One sampled response with its per-token log-probabilities.
///
/// `logprobs[t]` is ln p(tokens[t] | state_t) at temperature 1 under the
/// parameters that generated the sample, regardless of the sampling
/// temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub tokens: Vec<TokenId>,
    pub logprobs: Vec<f64>,
    pub finish: SampleFinish,
}

/// Weights of the linear-softmax policy, row-major with rows indexed by
/// feature (prev-token block, then position-bucket block, then prompt-key
/// block) and columns by output token.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    vocab: Vocab,
    config: PolicyConfig,
    weights: Vec<f64>,
}

/// On-disk checkpoint layout. Field order is the serialization order.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    vocab: Vec<String>,
    prompt_key_buckets: usize,
    position_buckets: usize,
    position_bucket_width: usize,
    weights: Vec<f64>,
}

const CHECKPOINT_FORMAT_VERSION: u32 = 1;

impl PolicyParams {
    /// Fresh zero-initialized parameters: the policy starts exactly uniform
    /// over the vocabulary in every state.
    pub fn new_zeroed(vocab: Vocab, config: PolicyConfig) -> Self {
        let rows = vocab.size() + config.position_buckets + config.prompt_key_buckets;
        let weights = vec![0.0; rows * vocab.size()];
        PolicyParams { vocab, config, weights }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// w += scale * direction. The optimizer passes scale = -learning_rate to
    /// descend a loss gradient.
    pub fn add_scaled(&mut self, direction: &[f64], scale: f64) {
        assert_eq!(direction.len(), self.weights.len(), "gradient shape mismatch");
        for (w, d) in self.weights.iter_mut().zip(direction) {
            *w += scale * d;
        }
    }

    pub fn prompt_key(&self, prompt: &str) -> usize {
        prompt_key(prompt, self.config.prompt_key_buckets)
    }

    /// The three active weight-matrix rows for a state.
    fn state_rows(&self, key: usize, prev: TokenId, pos: usize) -> [usize; 3] {
        let v = self.vocab.size();
        debug_assert!(prev < v && key < self.config.prompt_key_buckets);
        let bucket = position_bucket(pos, self.config.position_bucket_width, self.config.position_buckets);
        [prev, v + bucket, v + self.config.position_buckets + key]
    }

    /// Writes z = sum of the three active rows into `out` (length V).
    fn logits_into(&self, rows: [usize; 3], out: &mut [f64]) {
        let v = self.vocab.size();
        out.fill(0.0);
        for r in rows {
            let row = &self.weights[r * v..(r + 1) * v];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w;
            }
        }
    }

    /// ln p(token | state) for each response token in order. `tokens` is the
    /// full response including a terminal stop token when one was generated;
    /// position t is scored with prev = tokens[t-1] (stop for t = 0).
    pub fn token_logprobs(&self, key: usize, tokens: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.size();
        let mut logits = vec![0.0; v];
        let mut prev = STOP_TOKEN;
        let mut out = Vec::with_capacity(tokens.len());
        for (pos, &tok) in tokens.iter().enumerate() {
            debug_assert!(tok < v);
            self.logits_into(self.state_rows(key, prev, pos), &mut logits);
            out.push(log_softmax_at(&logits, tok));
            prev = tok;
        }
        out
    }

    /// ln p(tokens | prompt key) = sum of per-token log-probabilities.
    pub fn sequence_logprob(&self, key: usize, tokens: &[TokenId]) -> f64 {
        self.token_logprobs(key, tokens).iter().sum()
    }

    /// Accumulates sum_t coeff[t] * d ln p(tokens[t] | state_t) / dW into
    /// `grad` (same shape as the weights). The softmax gradient is exact:
    /// each of the three active rows receives coeff * (onehot(y) - p).
    pub fn accumulate_logprob_grad(
        &self,
        key: usize,
        tokens: &[TokenId],
        coeff: &[f64],
        grad: &mut [f64],
    ) {
        assert_eq!(tokens.len(), coeff.len(), "one coefficient per token");
        assert_eq!(grad.len(), self.weights.len(), "gradient shape mismatch");
        let v = self.vocab.size();
        let mut logits = vec![0.0; v];
        let mut probs = vec![0.0; v];
        let mut prev = STOP_TOKEN;
        for (pos, (&tok, &c)) in tokens.iter().zip(coeff).enumerate() {
            let rows = self.state_rows(key, prev, pos);
            if c != 0.0 {
                self.logits_into(rows, &mut logits);
                softmax_into(&logits, &mut probs);
                for r in rows {
                    let row = &mut grad[r * v..(r + 1) * v];
                    for (g, &p) in row.iter_mut().zip(&probs) {
                        *g -= c * p;
                    }
                    row[tok] += c;
                }
            }
            prev = tok;
        }
    }

    /// Samples a response. Tokens are drawn from softmax(z / temperature),
    /// with temperature 0 meaning greedy argmax (lowest index on ties, no
    /// randomness consumed); the recorded log-probabilities are always at
    /// temperature 1. A generated stop token ends the sequence and is
    /// included in it; hitting `max_len` first yields a truncated sequence.
    pub fn sample<R: Rng>(&self, key: usize, max_len: usize, temperature: f64, rng: &mut R) -> SampledSequence {
        assert!(temperature >= 0.0, "sampling temperature must be non-negative");
        let v = self.vocab.size();
        let mut logits = vec![0.0; v];
        let mut probs = vec![0.0; v];
        let mut tokens = Vec::new();
        let mut logprobs = Vec::new();
        let mut prev = STOP_TOKEN;
        for pos in 0..max_len {
            self.logits_into(self.state_rows(key, prev, pos), &mut logits);
            let tok = if temperature == 0.0 {
                argmax_lowest(&logits)
            } else {
                if temperature == 1.0 {
                    softmax_into(&logits, &mut probs);
                } else {
                    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
                    softmax_into(&scaled, &mut probs);
                }
                categorical(&probs, rng.gen::<f64>())
            };
            tokens.push(tok);
            logprobs.push(log_softmax_at(&logits, tok));
            if tok == STOP_TOKEN {
                return SampledSequence { tokens, logprobs, finish: SampleFinish::Stop };
            }
            prev = tok;
        }
        SampledSequence { tokens, logprobs, finish: SampleFinish::Length }
    }

    /// Greedy decode: argmax over logits at each step, ties broken toward
    /// the lowest token index. Deterministic in the parameters; equivalent
    /// to sampling at temperature 0.
    pub fn greedy(&self, key: usize, max_len: usize) -> SampledSequence {
        let mut unused = rand::rngs::mock::StepRng::new(0, 0);
        self.sample(key, max_len, 0.0, &mut unused)
    }

    /// Serializes to a single JSON checkpoint file. Output bytes are a pure
    /// function of the parameters (floats use shortest round-trip encoding).
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(bad) = self.weights.iter().find(|w| !w.is_finite()) {
            return Err(Error::ContractViolation(format!(
                "refusing to save checkpoint with non-finite weight {bad}"
            )));
        }
        let file = CheckpointFile {
            format_version: CHECKPOINT_FORMAT_VERSION,
            vocab: self.vocab.tokens.clone(),
            prompt_key_buckets: self.config.prompt_key_buckets,
            position_buckets: self.config.position_buckets,
            position_bucket_width: self.config.position_bucket_width,
            weights: self.weights.clone(),
        };
        let mut out = serde_json::to_vec(&file)?;
        out.push(b'\n');
        let mut f = fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    /// Loads and validates a checkpoint written by [`PolicyParams::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        let file: CheckpointFile = serde_json::from_slice(&bytes)?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported checkpoint format version {}",
                file.format_version
            )));
        }
        let vocab = Vocab::standard();
        if file.vocab != vocab.tokens {
            return Err(Error::InvalidData(
                "checkpoint vocabulary does not match this build".to_string(),
            ));
        }
        if file.position_buckets == 0 || file.position_bucket_width == 0 || file.prompt_key_buckets == 0 {
            return Err(Error::InvalidData("checkpoint has a zero-sized feature block".to_string()));
        }
        let config = PolicyConfig {
            prompt_key_buckets: file.prompt_key_buckets,
            position_buckets: file.position_buckets,
            position_bucket_width: file.position_bucket_width,
        };
        let rows = vocab.size() + config.position_buckets + config.prompt_key_buckets;
        if file.weights.len() != rows * vocab.size() {
            return Err(Error::InvalidData(format!(
                "checkpoint has {} weights, expected {}",
                file.weights.len(),
                rows * vocab.size()
            )));
        }
        if file.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidData("checkpoint contains non-finite weights".to_string()));
        }
        Ok(PolicyParams { vocab, config, weights: file.weights })
    }
}

// ---------------------------------------------------------------------------
// Numerics
// ---------------------------------------------------------------------------

/// ln softmax(logits)[index], max-subtracted for stability.
fn log_softmax_at(logits: &[f64], index: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[index] - m - lse
}

/// Writes softmax(logits) into `out`.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, z) in out.iter_mut().zip(logits) {
        *o = (z - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Inverse-CDF draw from a categorical distribution given u in [0, 1).
/// Rounding slack falls to the last index so the draw is always valid.
fn categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    probs.len() - 1
}

/// Argmax with ties broken toward the lowest index.
fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
