//! Greedy evaluation with the unified prompt and per-difficulty breakdown.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backend::{Backend, GenRequest};
use crate::curator::{read_curated, read_problems, DifficultyLabel, Problem, CURATED_FILE_KIND};
use crate::error::{Error, Result};
use crate::policy::fnv1a64;
use crate::verifier;

/// The system prompt used everywhere: curation attempts, RL-style sampling
/// against remote backends, and evaluation. Must stay byte-identical to the
/// golden copy under tests/golden/.
pub const SYSTEM_PROMPT: &str = "You FIRST think about the reasoning process as an internal monologue step by step and then provide the final answer.\nThe reasoning process MUST BE enclosed within <think></think> tags.\nThe final answer MUST BE put in \\boxed{}.";

/// Builds the (system, user) message pair for a problem. The user message is
/// the problem prompt unmodified.
pub fn build_prompt(problem: &Problem) -> (String, String) {
    (SYSTEM_PROMPT.to_string(), problem.prompt.clone())
}

/// A problem to evaluate, with its difficulty label when the data came from
/// a curated file.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub problem: Problem,
    pub label: Option<DifficultyLabel>,
}

/// Loads evaluation data from either a curated file (header line present,
/// labels carried through) or a plain problem JSONL file.
pub fn read_eval_data(path: &Path) -> Result<Vec<EvalItem>> {
    let first_line = {
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        line
    };
    if first_line.contains(CURATED_FILE_KIND) {
        let (_, records) = read_curated(path)?;
        return Ok(records
            .into_iter()
            .map(|r| EvalItem { label: Some(r.difficulty_label), problem: r.problem })
            .collect());
    }
    Ok(read_problems(path)?
        .into_iter()
        .map(|problem| EvalItem { problem, label: None })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// Identifier echoed into the report, normally the checkpoint path.
    pub checkpoint: String,
    pub max_gen_len: usize,
    pub seed: u64,
}

/// One cell of the per-tier or per-bin breakdown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellCount {
    pub n: usize,
    pub correct: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_problems: usize,
    pub n_correct: usize,
    pub accuracy: f64,
    /// Keyed by tier (1..=15); empty when the data carried no labels.
    pub per_tier: BTreeMap<u8, CellCount>,
    /// Keyed by bin name; empty when the data carried no labels.
    pub per_bin: BTreeMap<String, CellCount>,
    pub checkpoint: String,
    pub max_gen_len: usize,
    pub seed: u64,
    /// True iff a backend failure aborted the run early; counts above cover
    /// only the problems scored before the failure.
    pub incomplete: bool,
}

/// Scores every problem with one greedy (temperature 0) sample and folds the
/// outcomes in problem-id order. A backend failure stops the fold and flags
/// the partial report incomplete.
pub fn evaluate(backend: &dyn Backend, items: &[EvalItem], config: &EvalConfig) -> EvalReport {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].problem.id.cmp(&items[b].problem.id));

    let mut report = EvalReport {
        n_problems: 0,
        n_correct: 0,
        accuracy: 0.0,
        per_tier: BTreeMap::new(),
        per_bin: BTreeMap::new(),
        checkpoint: config.checkpoint.clone(),
        max_gen_len: config.max_gen_len,
        seed: config.seed,
        incomplete: false,
    };
    for &i in &order {
        let item = &items[i];
        let (system_prompt, user_prompt) = build_prompt(&item.problem);
        let request = GenRequest {
            system_prompt,
            user_prompt,
            n: 1,
            max_tokens: config.max_gen_len,
            temperature: 0.0,
            seed: Some(crate::policy::derive_seed(config.seed, fnv1a64(item.problem.id.as_bytes()))),
        };
        let response = match backend.generate(&request) {
            Ok(r) => r,
            Err(e) => {
                log::error!("evaluation aborted at problem {}: {e}", item.problem.id);
                report.incomplete = true;
                break;
            }
        };
        let correct = verifier::reward(&response.texts[0], &item.problem.gold).reward == 1.0;
        report.n_problems += 1;
        report.n_correct += usize::from(correct);
        if let Some(label) = &item.label {
            let tier = report.per_tier.entry(label.tier).or_default();
            tier.n += 1;
            tier.correct += usize::from(correct);
            let bin = report.per_bin.entry(label.bin.as_str().to_string()).or_default();
            bin.n += 1;
            bin.correct += usize::from(correct);
        }
    }
    if report.n_problems > 0 {
        report.accuracy = report.n_correct as f64 / report.n_problems as f64;
    }
    report
}

/// Renders the report as a Markdown table over difficulty bins plus an
/// overall row.
pub fn render_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("# Evaluation report\n\n");
    out.push_str(&format!("- checkpoint: `{}`\n", report.checkpoint));
    out.push_str(&format!("- max_gen_len: {}\n", report.max_gen_len));
    out.push_str(&format!("- seed: {}\n", report.seed));
    if report.incomplete {
        out.push_str("- **incomplete**: a backend failure aborted the run early\n");
    }
    out.push_str("\n| Difficulty | Problems | Accuracy |\n|---|---|---|\n");
    for bin in ["Hard", "Medium", "Easy"] {
        if let Some(cell) = report.per_bin.get(bin) {
            out.push_str(&format!(
                "| {bin} | {} | {:.3} |\n",
                cell.n,
                cell.correct as f64 / cell.n as f64
            ));
        }
    }
    out.push_str(&format!(
        "| Overall | {} | {:.3} |\n",
        report.n_problems, report.accuracy
    ));
    out
}

/// Writes the JSON report (compact, trailing newline) and its Markdown
/// rendering next to it with an .md extension.
pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    let mut json = serde_json::to_string(report)?;
    json.push('\n');
    fs::write(path, json)?;
    fs::write(path.with_extension("md"), render_markdown(report))?;
    Ok(())
}

/// Parses a report back; used by determinism checks and tests.
pub fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(Error::from)
}
