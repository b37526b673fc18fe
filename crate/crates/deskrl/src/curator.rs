//! Difficulty curation by repeated sampling.
//!
//! Each problem is scored by sampling N attempts (default 16) from a scoring
//! backend and counting verified-correct answers. Problems every attempt
//! solves (comfort zone) or no attempt solves (frustration zone) are dropped;
//! survivors carry their success count as a difficulty tier in [1, N-1] and
//! fall into one of three named bins:
//!
//!   Hard   tiers 1..=5
//!   Medium tiers 6..=11
//!   Easy   tiers 12..=15
//!
//! Scoring fans out across a bounded worker pool. Output is written strictly
//! in input order through a reorder buffer, flushed record by record, so a
//! crashed or aborted run leaves a valid prefix that `--resume` can extend.
//! Per-problem seeds derive from the problem id, making record content
//! independent of worker scheduling and of which problems a resumed run
//! still has to score.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenRequest};
use crate::error::{Error, Result};
use crate::policy::{derive_seed, fnv1a64};
use crate::verifier;

/// Default attempt count per problem.
pub const DEFAULT_N_ATTEMPTS: usize = 16;

/// One task instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub prompt: String,
    /// Must parse in the verifier grammar; validated at load time.
    pub gold: String,
    /// Opaque pass-through reference to an attached image, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Dataset tag, e.g. `toy`.
    #[serde(default)]
    pub source: String,
}

/// Result of scoring one problem with N attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub problem_id: String,
    pub n_attempts: usize,
    /// Per-attempt verifier outcome, in sampling order.
    pub correctness: Vec<bool>,
    /// Number of set bits in `correctness`.
    pub success_count: usize,
    /// Raw response texts, retained only when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub responses: Option<Vec<String>>,
}

impl AttemptRecord {
    /// Checks the internal consistency invariants. Curation files may be
    /// hand-edited, so success_count is always recomputed from the bits.
    pub fn validate(&self) -> Result<()> {
        if self.n_attempts == 0 {
            return Err(Error::InvalidData(format!("record {}: n_attempts must be positive", self.problem_id)));
        }
        if self.correctness.len() != self.n_attempts {
            return Err(Error::InvalidData(format!(
                "record {}: {} correctness bits for n_attempts={}",
                self.problem_id,
                self.correctness.len(),
                self.n_attempts
            )));
        }
        let recount = self.correctness.iter().filter(|&&b| b).count();
        if recount != self.success_count {
            return Err(Error::InvalidData(format!(
                "record {}: success_count {} disagrees with correctness bits ({recount} set)",
                self.problem_id, self.success_count
            )));
        }
        if let Some(r) = &self.responses {
            if r.len() != self.n_attempts {
                return Err(Error::InvalidData(format!(
                    "record {}: {} responses for n_attempts={}",
                    self.problem_id,
                    r.len(),
                    self.n_attempts
                )));
            }
        }
        Ok(())
    }
}

/// Named difficulty bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Bin {
    Hard,
    Medium,
    Easy,
}

impl Bin {
    pub fn as_str(&self) -> &'static str {
        match self {
            Bin::Hard => "Hard",
            Bin::Medium => "Medium",
            Bin::Easy => "Easy",
        }
    }
}

/// Tier plus bin for one surviving record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyLabel {
    /// Equals the record's success count; in [1, 15].
    pub tier: u8,
    pub bin: Bin,
}

/// Bin for a tier. The boundaries are fixed for the 16-attempt protocol:
/// 1-5 Hard, 6-11 Medium, 12-15 Easy.
pub fn bin_for_tier(tier: u8) -> Result<Bin> {
    match tier {
        1..=5 => Ok(Bin::Hard),
        6..=11 => Ok(Bin::Medium),
        12..=15 => Ok(Bin::Easy),
        _ => Err(Error::ContractViolation(format!("tier {tier} outside [1, 15]"))),
    }
}

/// Label for a zone-filtered record.
pub fn label_for(record: &AttemptRecord) -> Result<DifficultyLabel> {
    if record.success_count == 0 || record.success_count >= record.n_attempts {
        return Err(Error::ContractViolation(format!(
            "record {} with success_count {}/{} reached stratification; zone_filter was skipped",
            record.problem_id, record.success_count, record.n_attempts
        )));
    }
    let tier = u8::try_from(record.success_count)
        .map_err(|_| Error::ContractViolation(format!("success_count {} too large", record.success_count)))?;
    Ok(DifficultyLabel { tier, bin: bin_for_tier(tier)? })
}

/// Generation parameters for scoring attempts.
#[derive(Debug, Clone, PartialEq)]
pub struct GenParams {
    pub system_prompt: String,
    pub temperature: f64,
    pub max_tokens: usize,
    /// Base seed; each problem derives its own from this and its id.
    pub seed: u64,
    pub keep_responses: bool,
}

/// Seed for one problem's scoring request: stable under reordering and
/// resumption because it depends only on the base seed and the problem id.
pub fn problem_seed(base: u64, problem_id: &str) -> u64 {
    derive_seed(base, fnv1a64(problem_id.as_bytes()))
}

/// Samples n attempts for one problem and tallies verified successes.
pub fn score_problem(
    problem: &Problem,
    backend: &dyn Backend,
    n: usize,
    params: &GenParams,
) -> Result<AttemptRecord> {
    if n < 1 {
        return Err(Error::Config("attempt count must be at least 1".to_string()));
    }
    let request = GenRequest {
        system_prompt: params.system_prompt.clone(),
        user_prompt: problem.prompt.clone(),
        n,
        max_tokens: params.max_tokens,
        temperature: params.temperature,
        seed: Some(problem_seed(params.seed, &problem.id)),
    };
    let response = backend.generate(&request)?;
    response.validate_against(&request)?;
    let correctness: Vec<bool> =
        response.texts.iter().map(|t| verifier::reward(t, &problem.gold).reward == 1.0).collect();
    let success_count = correctness.iter().filter(|&&b| b).count();
    Ok(AttemptRecord {
        problem_id: problem.id.clone(),
        n_attempts: n,
        correctness,
        success_count,
        responses: params.keep_responses.then(|| response.texts),
    })
}

/// Keeps records with 1 <= success_count <= n_attempts - 1, preserving
/// order. Idempotent.
pub fn zone_filter(records: Vec<AttemptRecord>) -> Vec<AttemptRecord> {
    records
        .into_iter()
        .filter(|r| r.success_count >= 1 && r.success_count + 1 <= r.n_attempts)
        .collect()
}

/// Stratification result: a label per input record plus a tier index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StratifiedIndex {
    /// Parallel to the input records.
    pub labels: Vec<DifficultyLabel>,
    /// tier -> problem ids, in input order. The lists partition the input.
    pub tiers: BTreeMap<u8, Vec<String>>,
}

impl StratifiedIndex {
    /// Problem ids in a bin, in tier-then-input order.
    pub fn bin_ids(&self, bin: Bin) -> Vec<String> {
        self.tiers
            .iter()
            .filter(|(&tier, _)| bin_for_tier(tier).map(|b| b == bin).unwrap_or(false))
            .flat_map(|(_, ids)| ids.iter().cloned())
            .collect()
    }
}

/// Assigns tiers and bins to zone-filtered records.
pub fn stratify(records: &[AttemptRecord]) -> Result<StratifiedIndex> {
    let mut labels = Vec::with_capacity(records.len());
    let mut tiers: BTreeMap<u8, Vec<String>> = BTreeMap::new();
    for record in records {
        record.validate()?;
        let label = label_for(record)?;
        labels.push(label);
        tiers.entry(label.tier).or_default().push(record.problem_id.clone());
    }
    Ok(StratifiedIndex { labels, tiers })
}

/// Samples k problem ids uniformly without replacement from a bin,
/// deterministic under seed. Returns the whole bin with a warning when it
/// holds fewer than k ids; an empty bin is an error.
pub fn sample_bin(index: &StratifiedIndex, bin: Bin, k: usize, seed: u64) -> Result<Vec<String>> {
    if k < 1 {
        return Err(Error::Config("sample size must be at least 1".to_string()));
    }
    let mut ids = index.bin_ids(bin);
    if ids.is_empty() {
        return Err(Error::EmptyBin(format!("bin {} holds no problems", bin.as_str())));
    }
    if ids.len() < k {
        log::warn!("bin {} holds {} problems, fewer than the {k} requested; returning all", bin.as_str(), ids.len());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);
    ids.truncate(k.min(ids.len()));
    Ok(ids)
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// First line of a curated JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedHeader {
    pub file_kind: String,
    /// Identity of the scoring backend.
    pub scorer: String,
    pub n_attempts: usize,
    pub temperature: f64,
    /// Unix seconds at curation start.
    pub timestamp: u64,
}

pub const CURATED_FILE_KIND: &str = "deskrl.curated.v1";

/// One surviving problem with its attempt record and difficulty label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CuratedRecord {
    pub problem: Problem,
    pub attempt_record: AttemptRecord,
    pub difficulty_label: DifficultyLabel,
}

impl CuratedRecord {
    pub fn validate(&self) -> Result<()> {
        self.attempt_record.validate()?;
        if self.attempt_record.problem_id != self.problem.id {
            return Err(Error::InvalidData(format!(
                "curated record {}: attempt record belongs to {}",
                self.problem.id, self.attempt_record.problem_id
            )));
        }
        let expect = label_for(&self.attempt_record)?;
        if expect != self.difficulty_label {
            return Err(Error::InvalidData(format!(
                "curated record {}: label {:?} disagrees with success count {}",
                self.problem.id, self.difficulty_label, self.attempt_record.success_count
            )));
        }
        Ok(())
    }
}

/// Reads a problem JSONL file, rejecting duplicate ids and unparseable gold
/// answers. Unknown fields (e.g. a reference trace) are ignored.
pub fn read_problems(path: &Path) -> Result<Vec<Problem>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open problem file {}: {e}", path.display())))?;
    let mut problems = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let problem: Problem = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if problem.id.is_empty() {
            return Err(Error::InvalidData(format!("{}:{}: empty problem id", path.display(), lineno + 1)));
        }
        if !seen.insert(problem.id.clone()) {
            return Err(Error::InvalidData(format!("duplicate problem id {}", problem.id)));
        }
        if verifier::parse_answer(&problem.gold).is_err() {
            return Err(Error::InvalidData(format!("problem {}: gold answer {:?} does not parse", problem.id, problem.gold)));
        }
        problems.push(problem);
    }
    Ok(problems)
}

/// Reads and fully validates a curated JSONL file (header plus records).
/// Files without the curated header are rejected with a pointer to `curate`.
pub fn read_curated(path: &Path) -> Result<(CuratedHeader, Vec<CuratedRecord>)> {
    let file = fs::File::open(path)
        .map_err(|e| Error::InvalidData(format!("cannot open curated file {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::InvalidData(format!("{} is empty; run `curate` to produce it", path.display())))?;
    let header: CuratedHeader = serde_json::from_str(&header_line).map_err(|_| {
        Error::InvalidData(format!(
            "{} does not start with a curation header; run `curate` to produce a labeled dataset",
            path.display()
        ))
    })?;
    if header.file_kind != CURATED_FILE_KIND {
        return Err(Error::InvalidData(format!(
            "{}: unknown file kind {:?}; run `curate` to produce a labeled dataset",
            path.display(),
            header.file_kind
        )));
    }
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CuratedRecord = serde_json::from_str(&line)
            .map_err(|e| Error::InvalidData(format!("{}:{}: {e}", path.display(), lineno + 2)))?;
        record.validate()?;
        if !seen.insert(record.problem.id.clone()) {
            return Err(Error::InvalidData(format!("duplicate curated problem id {}", record.problem.id)));
        }
        records.push(record);
    }
    Ok((header, records))
}

// ---------------------------------------------------------------------------
// Curation pipeline
// ---------------------------------------------------------------------------

/// Settings for a curation run.
#[derive(Debug, Clone)]
pub struct CurationConfig {
    pub n_attempts: usize,
    pub gen: GenParams,
    /// Worker pool size; additionally capped by the backend's
    /// `max_in_flight` hint.
    pub workers: usize,
}

/// Outcome counts of a curation run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CurationSummary {
    pub scored: usize,
    pub skipped_resume: usize,
    pub dropped_frustration: usize,
    pub dropped_comfort: usize,
    pub written: usize,
}

/// Scores `problems`, zone-filters, labels, and writes survivors to `out` as
/// JSONL (header first). Output order equals input order regardless of
/// worker scheduling. On backend failure the completed in-order prefix is
/// flushed before the error propagates; `resume` then skips problems whose
/// records are already in the file.
pub fn curate_problems(
    problems: &[Problem],
    backend: &dyn Backend,
    config: &CurationConfig,
    out: &Path,
    resume: bool,
) -> Result<CurationSummary> {
    if config.n_attempts < 1 {
        return Err(Error::Config("n_attempts must be at least 1".to_string()));
    }
    let mut summary = CurationSummary::default();

    let mut done: BTreeSet<String> = BTreeSet::new();
    let mut writer = if resume && out.exists() {
        let (header, records) = read_curated(out)?;
        if header.scorer != backend.name()
            || header.n_attempts != config.n_attempts
            || header.temperature != config.gen.temperature
        {
            return Err(Error::Config(format!(
                "resume mismatch: {} was curated with scorer {:?}, n={}, temperature={}",
                out.display(),
                header.scorer,
                header.n_attempts,
                header.temperature
            )));
        }
        done.extend(records.into_iter().map(|r| r.problem.id));
        BufWriter::new(fs::OpenOptions::new().append(true).open(out)?)
    } else {
        let header = CuratedHeader {
            file_kind: CURATED_FILE_KIND.to_string(),
            scorer: backend.name().to_string(),
            n_attempts: config.n_attempts,
            temperature: config.gen.temperature,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        };
        let mut w = BufWriter::new(fs::File::create(out)?);
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        w.flush()?;
        w
    };

    let todo: Vec<&Problem> = problems.iter().filter(|p| !done.contains(&p.id)).collect();
    summary.skipped_resume = problems.len() - todo.len();

    let workers = config.workers.clamp(1, backend.max_in_flight()).min(todo.len().max(1));
    let cursor = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let (tx, rx) = mpsc::channel::<(usize, Result<AttemptRecord>)>();

    let mut first_error: Option<(usize, Error)> = None;
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let cursor = &cursor;
            let stop = &stop;
            let todo = &todo;
            scope.spawn(move || loop {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
                let i = cursor.fetch_add(1, Ordering::Relaxed);
                if i >= todo.len() {
                    break;
                }
                let result = score_problem(todo[i], backend, config.n_attempts, &config.gen);
                if result.is_err() {
                    stop.store(true, Ordering::Relaxed);
                }
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: emit strictly in input order, flushing as we go.
        let mut pending: BTreeMap<usize, AttemptRecord> = BTreeMap::new();
        let mut next = 0usize;
        while let Ok((i, result)) = rx.recv() {
            match result {
                Ok(record) => {
                    pending.insert(i, record);
                }
                Err(e) => {
                    if first_error.as_ref().map(|(j, _)| i < *j).unwrap_or(true) {
                        first_error = Some((i, e));
                    }
                    continue;
                }
            }
            while let Some(record) = pending.remove(&next) {
                if let Err(e) = write_survivor(&mut writer, todo[next], record, &mut summary) {
                    if first_error.as_ref().map(|(j, _)| next < *j).unwrap_or(true) {
                        first_error = Some((next, e));
                    }
                    stop.store(true, Ordering::Relaxed);
                    break;
                }
                next += 1;
            }
        }
        // Workers have exited. Emit any records contiguous with the prefix;
        // everything after the first failure index stays unwritten.
        if let Some((failed, _)) = &first_error {
            while next < *failed {
                match pending.remove(&next) {
                    Some(record) => {
                        if write_survivor(&mut writer, todo[next], record, &mut summary).is_err() {
                            break;
                        }
                        next += 1;
                    }
                    None => break,
                }
            }
        }
    });

    writer.flush()?;
    if let Some((_, e)) = first_error {
        return Err(e);
    }
    Ok(summary)
}

fn write_survivor(
    writer: &mut BufWriter<fs::File>,
    problem: &Problem,
    record: AttemptRecord,
    summary: &mut CurationSummary,
) -> Result<()> {
    summary.scored += 1;
    if record.success_count == 0 {
        summary.dropped_frustration += 1;
        return Ok(());
    }
    if record.success_count >= record.n_attempts {
        summary.dropped_comfort += 1;
        return Ok(());
    }
    let label = label_for(&record)?;
    let curated = CuratedRecord {
        problem: problem.clone(),
        attempt_record: record,
        difficulty_label: label,
    };
    serde_json::to_writer(&mut *writer, &curated)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    summary.written += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockBehavior};

    fn record(id: &str, success: usize, n: usize) -> AttemptRecord {
        let mut correctness = vec![false; n];
        for bit in correctness.iter_mut().take(success) {
            *bit = true;
        }
        AttemptRecord {
            problem_id: id.to_string(),
            n_attempts: n,
            correctness,
            success_count: success,
            responses: None,
        }
    }

    fn problem(id: &str, prompt: &str, gold: &str) -> Problem {
        Problem {
            id: id.to_string(),
            prompt: prompt.to_string(),
            gold: gold.to_string(),
            image_ref: None,
            source: "test".to_string(),
        }
    }

    fn gen_params(seed: u64) -> GenParams {
        GenParams {
            system_prompt: String::new(),
            temperature: 1.0,
            max_tokens: 64,
            seed,
            keep_responses: false,
        }
    }

    #[test]
    fn bin_table_matches_all_15_tiers() {
        for tier in 1u8..=5 {
            assert_eq!(bin_for_tier(tier).unwrap(), Bin::Hard, "tier {tier}");
        }
        for tier in 6u8..=11 {
            assert_eq!(bin_for_tier(tier).unwrap(), Bin::Medium, "tier {tier}");
        }
        for tier in 12u8..=15 {
            assert_eq!(bin_for_tier(tier).unwrap(), Bin::Easy, "tier {tier}");
        }
        assert!(bin_for_tier(0).is_err());
        assert!(bin_for_tier(16).is_err());
    }

    #[test]
    fn bins_partition_the_tier_range() {
        // {1..5} ∪ {6..11} ∪ {12..15} = {1..15}, pairwise disjoint.
        let mut seen = BTreeMap::new();
        for tier in 1u8..=15 {
            let bin = bin_for_tier(tier).unwrap();
            assert!(seen.insert(tier, bin).is_none());
        }
        assert_eq!(seen.len(), 15);
        assert_eq!(seen.values().filter(|b| **b == Bin::Hard).count(), 5);
        assert_eq!(seen.values().filter(|b| **b == Bin::Medium).count(), 6);
        assert_eq!(seen.values().filter(|b| **b == Bin::Easy).count(), 4);
    }

    #[test]
    fn zone_filter_keeps_only_learnable_records() {
        let records = vec![record("a", 0, 16), record("b", 7, 16), record("c", 16, 16), record("d", 1, 16), record("e", 15, 16)];
        let kept = zone_filter(records);
        let ids: Vec<&str> = kept.iter().map(|r| r.problem_id.as_str()).collect();
        assert_eq!(ids, ["b", "d", "e"]);
        // Idempotent.
        let again = zone_filter(kept.clone());
        assert_eq!(again, kept);
    }

    #[test]
    fn stratify_partitions_and_labels() {
        let records = vec![record("a", 5, 16), record("b", 6, 16), record("c", 15, 16), record("d", 5, 16)];
        let index = stratify(&records).unwrap();
        assert_eq!(index.labels[0], DifficultyLabel { tier: 5, bin: Bin::Hard });
        assert_eq!(index.labels[1], DifficultyLabel { tier: 6, bin: Bin::Medium });
        assert_eq!(index.labels[2], DifficultyLabel { tier: 15, bin: Bin::Easy });
        let total: usize = index.tiers.values().map(Vec::len).sum();
        assert_eq!(total, records.len());
        assert_eq!(index.tiers[&5], vec!["a".to_string(), "d".to_string()]);
        assert_eq!(index.bin_ids(Bin::Hard), vec!["a".to_string(), "d".to_string()]);
    }

    #[test]
    fn stratify_rejects_unfiltered_records() {
        assert!(stratify(&[record("a", 0, 16)]).is_err());
        assert!(stratify(&[record("a", 16, 16)]).is_err());
        // tier above 15 (n_attempts > 16) violates the bin table
        assert!(stratify(&[record("a", 17, 32)]).is_err());
    }

    #[test]
    fn sample_bin_is_deterministic_and_caps_at_bin_size() {
        let records: Vec<AttemptRecord> = (0..20).map(|i| record(&format!("p{i}"), 3, 16)).collect();
        let index = stratify(&records).unwrap();
        let a = sample_bin(&index, Bin::Hard, 5, 7).unwrap();
        let b = sample_bin(&index, Bin::Hard, 5, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        let all = sample_bin(&index, Bin::Hard, 500, 7).unwrap();
        assert_eq!(all.len(), 20);
        assert!(sample_bin(&index, Bin::Easy, 1, 7).is_err(), "empty bin");
        // Without replacement: no duplicates.
        let set: BTreeSet<&String> = a.iter().collect();
        assert_eq!(set.len(), a.len());
    }

    #[test]
    fn score_problem_tallies_verifier_outcomes() {
        let p = problem("q1", "question one", "7");
        let golds = [("question one".to_string(), "7".to_string())];
        let all = MockBackend::new(golds.clone(), MockBehavior::AlwaysGold, 0);
        let rec = score_problem(&p, &all, 16, &gen_params(0)).unwrap();
        assert_eq!(rec.success_count, 16);
        assert_eq!(rec.correctness.len(), 16);

        let none = MockBackend::new(golds, MockBehavior::NeverBox, 0);
        let rec = score_problem(&p, &none, 16, &gen_params(0)).unwrap();
        assert_eq!(rec.success_count, 0);
    }

    #[test]
    fn success_counts_match_binomial_mean_at_half() {
        // 2000 problems, 16 attempts each, p = 0.5: the mean success count
        // estimates Binomial(16, 0.5)'s mean of 8. The band [7.8, 8.2] is
        // about 4.5 sigma of the sample mean; the seed is frozen.
        let problems: Vec<Problem> = (0..2000).map(|i| problem(&format!("p{i}"), &format!("prompt {i}"), "1")).collect();
        let golds: Vec<(String, String)> = problems.iter().map(|p| (p.prompt.clone(), p.gold.clone())).collect();
        let backend = MockBackend::new(golds, MockBehavior::GoldWithProbability(0.5), 0);
        let params = gen_params(12345);
        let mean = problems
            .iter()
            .map(|p| score_problem(p, &backend, 16, &params).unwrap().success_count as f64)
            .sum::<f64>()
            / problems.len() as f64;
        assert!((7.8..=8.2).contains(&mean), "mean={mean}");
    }

    #[test]
    fn curate_writes_header_and_ordered_survivors() {
        let problems: Vec<Problem> = (0..30).map(|i| problem(&format!("p{i:02}"), &format!("prompt {i}"), "1")).collect();
        let golds: Vec<(String, String)> = problems.iter().map(|p| (p.prompt.clone(), p.gold.clone())).collect();
        let backend = MockBackend::new(golds, MockBehavior::GoldWithProbability(0.5), 0);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("curated.jsonl");
        let config = CurationConfig { n_attempts: 16, gen: gen_params(5), workers: 4 };
        let summary = curate_problems(&problems, &backend, &config, &out, false).unwrap();
        assert_eq!(summary.scored, 30);
        assert_eq!(summary.written + summary.dropped_comfort + summary.dropped_frustration, 30);

        let (header, records) = read_curated(&out).unwrap();
        assert_eq!(header.scorer, "mock");
        assert_eq!(header.n_attempts, 16);
        assert_eq!(records.len(), summary.written);
        // Input order is preserved despite concurrent workers.
        let ids: Vec<&str> = records.iter().map(|r| r.problem.id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        assert_eq!(ids, sorted, "p00..p29 sort lexicographically, so order must match input");

        // Re-running with the same seed reproduces identical records.
        let out2 = dir.path().join("curated2.jsonl");
        curate_problems(&problems, &backend, &config, &out2, false).unwrap();
        let (_, records2) = read_curated(&out2).unwrap();
        assert_eq!(records, records2);
    }

    #[test]
    fn curate_flushes_prefix_on_failure_and_resumes() {
        let problems: Vec<Problem> = (0..10).map(|i| problem(&format!("p{i}"), &format!("prompt {i}"), "1")).collect();
        // The backend knows golds for all but the last problem, so scoring
        // the last one errors after the others complete.
        let golds: Vec<(String, String)> = problems[..9].iter().map(|p| (p.prompt.clone(), p.gold.clone())).collect();
        let failing = MockBackend::new(golds, MockBehavior::GoldWithProbability(0.5), 0);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("curated.jsonl");
        let config = CurationConfig { n_attempts: 16, gen: gen_params(5), workers: 3 };
        let err = curate_problems(&problems, &failing, &config, &out, false);
        assert!(err.is_err());
        let (_, partial) = read_curated(&out).unwrap();
        let done_before: BTreeSet<String> = partial.iter().map(|r| r.problem.id.clone()).collect();
        assert!(!done_before.contains("p9"));

        // Fix the backend and resume: already-written ids are skipped.
        let golds: Vec<(String, String)> = problems.iter().map(|p| (p.prompt.clone(), p.gold.clone())).collect();
        let fixed = MockBackend::new(golds, MockBehavior::GoldWithProbability(0.5), 0);
        let summary = curate_problems(&problems, &fixed, &config, &out, true).unwrap();
        assert_eq!(summary.skipped_resume, done_before.len());
        let (_, full) = read_curated(&out).unwrap();
        // Records for previously-written ids are untouched.
        for r in &partial {
            assert!(full.contains(r));
        }
        // Content equals a clean single run, because per-problem seeds
        // depend only on the base seed and the problem id.
        let clean_out = dir.path().join("clean.jsonl");
        curate_problems(&problems, &fixed, &config, &clean_out, false).unwrap();
        let (_, clean) = read_curated(&clean_out).unwrap();
        let full_sorted: BTreeMap<String, CuratedRecord> = full.into_iter().map(|r| (r.problem.id.clone(), r)).collect();
        let clean_sorted: BTreeMap<String, CuratedRecord> = clean.into_iter().map(|r| (r.problem.id.clone(), r)).collect();
        assert_eq!(full_sorted, clean_sorted);
    }

    #[test]
    fn resume_rejects_mismatched_settings() {
        let problems = vec![problem("a", "q", "1")];
        let backend = MockBackend::new([("q".to_string(), "1".to_string())], MockBehavior::GoldWithProbability(0.5), 0);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("curated.jsonl");
        let config = CurationConfig { n_attempts: 16, gen: gen_params(5), workers: 1 };
        curate_problems(&problems, &backend, &config, &out, false).unwrap();
        let mut other = config.clone();
        other.n_attempts = 8;
        assert!(curate_problems(&problems, &backend, &other, &out, true).is_err());
    }

    #[test]
    fn read_problems_validates_ids_and_golds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("problems.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"id":"a","prompt":"q1","gold":"7","source":"t"}"#, "\n",
                r#"{"id":"b","prompt":"q2","gold":"1/2","source":"t","trace":"ignored extra field"}"#, "\n",
            ),
        )
        .unwrap();
        let problems = read_problems(&path).unwrap();
        assert_eq!(problems.len(), 2);

        std::fs::write(&path, concat!(r#"{"id":"a","prompt":"q","gold":"7"}"#, "\n", r#"{"id":"a","prompt":"q","gold":"8"}"#, "\n")).unwrap();
        assert!(read_problems(&path).is_err(), "duplicate id");

        std::fs::write(&path, concat!(r#"{"id":"a","prompt":"q","gold":"1/0"}"#, "\n")).unwrap();
        assert!(read_problems(&path).is_err(), "unparseable gold");
    }

    #[test]
    fn read_curated_rejects_unlabeled_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.jsonl");
        std::fs::write(&path, concat!(r#"{"id":"a","prompt":"q","gold":"7"}"#, "\n")).unwrap();
        let err = read_curated(&path).unwrap_err().to_string();
        assert!(err.contains("curate"), "error should direct to `curate`: {err}");
    }

    #[test]
    fn read_curated_rejects_tampered_success_counts() {
        let problems = vec![problem("a", "q", "1")];
        let backend = MockBackend::new([("q".to_string(), "1".to_string())], MockBehavior::GoldWithProbability(0.5), 3);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("curated.jsonl");
        let config = CurationConfig { n_attempts: 16, gen: gen_params(3), workers: 1 };
        curate_problems(&problems, &backend, &config, &out, false).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        let (_, rec) = read_curated(&out).unwrap();
        let true_count = rec[0].attempt_record.success_count;
        let tampered = text.replace(
            &format!("\"success_count\":{true_count}"),
            &format!("\"success_count\":{}", true_count + 1),
        );
        std::fs::write(&out, tampered).unwrap();
        assert!(read_curated(&out).is_err());
    }
}
