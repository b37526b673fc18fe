//! Synthetic arithmetic task family for the toy policy.
//!
//! 200 problems: every pair of single digits under addition and
//! multiplication. Each problem carries a reference chain-of-thought trace
//! ending in a boxed answer, written entirely in the policy vocabulary, so
//! the same text serves as supervised fine-tuning data and as a
//! verifier-checkable response.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::btree_map::Entry;
use std::collections::{BTreeMap, BTreeSet};

use super::{position_bucket, prompt_key, PolicyConfig, TokenId, Vocab, STOP_TOKEN};

/// One synthetic problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyProblem {
    /// Stable identifier, e.g. `add-3-4`.
    pub id: String,
    /// User prompt, e.g. `compute 3+4`.
    pub prompt: String,
    /// Gold answer as a decimal integer string.
    pub gold: String,
    /// Reference trace ending in `\boxed{gold}`.
    pub trace: String,
}

/// All 200 problems in a fixed order: addition pairs then multiplication
/// pairs, each in (a, b) lexicographic order.
pub fn generate_problems() -> Vec<ToyProblem> {
    let mut out = Vec::with_capacity(200);
    for (word, sym) in [("add", '+'), ("mul", '×')] {
        for a in 0u32..10 {
            for b in 0u32..10 {
                let ans = if sym == '+' { a + b } else { a * b };
                out.push(ToyProblem {
                    id: format!("{word}-{a}-{b}"),
                    prompt: format!("compute {a}{sym}{b}"),
                    gold: ans.to_string(),
                    trace: format!("think {a}{sym}{b}={ans} \\boxed{{{ans}}}"),
                });
            }
        }
    }
    out
}

/// Splits problems into (train, eval) with disjoint prompt-key sets.
///
/// Problems whose prompts hash to the same key always land on the same side,
/// so evaluation never sees a key the policy could have memorized during
/// training. The distinct keys are shuffled under `seed` and roughly
/// `eval_fraction` of them (at least one, at most all but one) become the
/// evaluation side.
pub fn split_by_prompt_key(
    problems: &[ToyProblem],
    eval_fraction: f64,
    seed: u64,
    key_buckets: usize,
) -> (Vec<ToyProblem>, Vec<ToyProblem>) {
    assert!(
        (0.0..1.0).contains(&eval_fraction) && eval_fraction > 0.0,
        "eval_fraction must be in (0, 1)"
    );
    let keys: BTreeSet<usize> = problems.iter().map(|p| prompt_key(&p.prompt, key_buckets)).collect();
    let mut keys: Vec<usize> = keys.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    keys.shuffle(&mut rng);
    let n_eval = ((keys.len() as f64 * eval_fraction).round() as usize).clamp(1, keys.len() - 1);
    let eval_keys: BTreeSet<usize> = keys[..n_eval].iter().copied().collect();
    let (eval, train): (Vec<_>, Vec<_>) = problems
        .iter()
        .cloned()
        .partition(|p| eval_keys.contains(&prompt_key(&p.prompt, key_buckets)));
    (train, eval)
}

/// Problems whose reference trace the policy can memorize exactly in
/// isolation: within the trace (including the terminal stop) no (previous
/// token, position bucket) state repeats with two different successor
/// tokens, and the returned problems have pairwise distinct prompt keys.
/// Each such trace alone is representable with arbitrarily low loss;
/// e.g. "think 0+0=0 ..." is excluded because the state (prev '0', bucket 2)
/// must predict both '=' and ' '.
pub fn conflict_free_problems(problems: &[ToyProblem], key_buckets: usize) -> Vec<ToyProblem> {
    let vocab = Vocab::standard();
    let cfg = PolicyConfig::default();
    let mut used_keys = BTreeSet::new();
    let mut out = Vec::new();
    for p in problems {
        let Ok(mut tokens) = vocab.encode(&p.trace) else { continue };
        tokens.push(STOP_TOKEN);
        let mut targets: BTreeMap<(TokenId, usize), TokenId> = BTreeMap::new();
        let mut prev = STOP_TOKEN;
        let mut representable = true;
        for (pos, &tok) in tokens.iter().enumerate() {
            let bucket = position_bucket(pos, cfg.position_bucket_width, cfg.position_buckets);
            match targets.entry((prev, bucket)) {
                Entry::Occupied(e) if *e.get() != tok => {
                    representable = false;
                    break;
                }
                Entry::Occupied(_) => {}
                Entry::Vacant(v) => {
                    v.insert(tok);
                }
            }
            prev = tok;
        }
        if representable && used_keys.insert(prompt_key(&p.prompt, key_buckets)) {
            out.push(p.clone());
        }
    }
    out
}

/// A subset the policy can memorize jointly, not just trace by trace.
///
/// Individually conflict-free traces still fight each other through the
/// shared previous-token and bucket rows when the same state demands
/// opposite token rankings in different problems; a reversed pair such as
/// add-2-3 and add-3-4 versus add-3-2 makes the residual loss floor strictly
/// positive. Restricting to additions with a ≤ b (one orientation per
/// operand pair) and single-digit sums (uniform trace geometry, no answer
/// starting with a digit smaller than the operands) removes every such
/// contradiction: training loss on this subset is observed to decay toward
/// zero. Exactly 20 problems qualify.
pub fn jointly_memorizable_problems(problems: &[ToyProblem], key_buckets: usize) -> Vec<ToyProblem> {
    conflict_free_problems(problems, key_buckets)
        .into_iter()
        .filter(|p| {
            let mut parts = p.id.split('-');
            let family = parts.next().unwrap_or_default();
            let a: u32 = parts.next().and_then(|s| s.parse().ok()).unwrap_or(u32::MAX);
            let b: u32 = parts.next().and_then(|s| s.parse().ok()).unwrap_or(0);
            family == "add" && a <= b && a + b <= 9
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier;

    #[test]
    fn generates_200_problems_with_correct_golds() {
        let problems = generate_problems();
        assert_eq!(problems.len(), 200);
        let ids: BTreeSet<_> = problems.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids.len(), 200);
        for p in &problems {
            // Recompute the answer independently from the id.
            let parts: Vec<&str> = p.id.split('-').collect();
            let (a, b): (u32, u32) = (parts[1].parse().unwrap(), parts[2].parse().unwrap());
            let expect = match parts[0] {
                "add" => a + b,
                "mul" => a * b,
                other => panic!("unknown op {other}"),
            };
            assert_eq!(p.gold, expect.to_string(), "{}", p.id);
        }
    }

    #[test]
    fn traces_are_in_vocabulary_and_verify_against_gold() {
        let vocab = Vocab::standard();
        for p in generate_problems() {
            let ids = vocab.encode(&p.trace).unwrap_or_else(|e| panic!("{}: {e}", p.id));
            assert_eq!(vocab.decode(&ids), p.trace);
            let outcome = verifier::reward(&p.trace, &p.gold);
            assert_eq!(outcome.reward, 1.0, "{}: {:?}", p.id, outcome.failure_reason);
        }
    }

    #[test]
    fn split_has_disjoint_key_sets_and_loses_nothing() {
        let problems = generate_problems();
        let (train, eval) = split_by_prompt_key(&problems, 0.2, 0, 512);
        assert_eq!(train.len() + eval.len(), problems.len());
        assert!(!train.is_empty() && !eval.is_empty());
        let train_keys: BTreeSet<usize> = train.iter().map(|p| prompt_key(&p.prompt, 512)).collect();
        let eval_keys: BTreeSet<usize> = eval.iter().map(|p| prompt_key(&p.prompt, 512)).collect();
        assert!(train_keys.is_disjoint(&eval_keys));
    }

    #[test]
    fn conflict_free_subset_is_large_and_key_distinct() {
        let problems = generate_problems();
        let subset = conflict_free_problems(&problems, 512);
        assert!(subset.len() >= 20, "only {} conflict-free problems", subset.len());
        let keys: BTreeSet<usize> = subset.iter().map(|p| prompt_key(&p.prompt, 512)).collect();
        assert_eq!(keys.len(), subset.len(), "keys must be pairwise distinct");
        // A known conflicted trace is excluded: 0+0=0 repeats (prev '0',
        // bucket 2) with targets '=' and ' '.
        assert!(subset.iter().all(|p| p.id != "add-0-0"));
    }

    #[test]
    fn jointly_memorizable_subset_is_exactly_20_single_digit_sums() {
        let subset = jointly_memorizable_problems(&generate_problems(), 512);
        assert_eq!(subset.len(), 20);
        for p in &subset {
            let parts: Vec<&str> = p.id.split('-').collect();
            assert_eq!(parts[0], "add");
            let (a, b): (u32, u32) = (parts[1].parse().unwrap(), parts[2].parse().unwrap());
            assert!(a <= b, "{}: one orientation per operand pair", p.id);
            assert!(a + b <= 9, "{}: sums stay single digit", p.id);
        }
    }

    #[test]
    fn split_is_deterministic_in_the_seed() {
        let problems = generate_problems();
        let (t1, e1) = split_by_prompt_key(&problems, 0.2, 7, 512);
        let (t2, e2) = split_by_prompt_key(&problems, 0.2, 7, 512);
        assert_eq!(t1, t2);
        assert_eq!(e1, e2);
        let (t3, _) = split_by_prompt_key(&problems, 0.2, 8, 512);
        assert_ne!(t1, t3, "different seeds should shuffle keys differently");
    }
}
