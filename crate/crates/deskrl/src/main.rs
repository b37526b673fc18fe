use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use deskrl::backend::http::{HttpBackend, HttpBackendConfig, DEFAULT_API_KEY_ENV};
use deskrl::backend::toy::ToyBackend;
use deskrl::backend::Backend;
use deskrl::curator::{curate_problems, read_curated, read_problems, CurationConfig, GenParams};
use deskrl::eval::{evaluate, read_eval_data, write_report, EvalConfig, SYSTEM_PROMPT};
use deskrl::grpo::{grpo_train, write_metrics_csv, GrpoConfig};
use deskrl::policy::toy::{generate_problems, split_by_prompt_key};
use deskrl::policy::{PolicyConfig, PolicyParams, Vocab};
use deskrl::sft::{load_dataset, sft_train, write_loss_csv, SftConfig};
use deskrl::{Error, Result};

#[derive(Parser)]
#[command(name = "deskrl", about = "Difficulty-stratified curation, SFT, and GRPO at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score JSONL records {"response", "gold"} with the boxed-answer verifier.
    Verify {
        /// Input JSONL path; stdin when omitted.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        /// Output JSONL path; stdout when omitted.
        #[arg(long = "out")]
        output: Option<PathBuf>,
    },
    /// Generate the synthetic arithmetic dataset as train/eval JSONL splits.
    Toygen {
        #[arg(long)]
        out_train: PathBuf,
        #[arg(long)]
        out_eval: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        eval_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Write a freshly initialized (all-zero) policy checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
    },
    /// Supervised fine-tuning on {"prompt", "trace"} JSONL records.
    Sft {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Starting checkpoint; zero-initialized when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 128)]
        max_seq_len: usize,
        #[arg(long, default_value_t = 0.0)]
        prompt_loss_weight: f64,
        /// Loss history CSV; defaults to <out>.loss.csv.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
    },
    /// Repeated-sampling difficulty curation over a problem JSONL file.
    #[command(group(ArgGroup::new("scorer").required(true).args(["ckpt", "base_url"])))]
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        /// Attempts per problem.
        #[arg(long, default_value_t = 16)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Keep raw response texts in the attempt records.
        #[arg(long)]
        keep_responses: bool,
        /// Skip problems already present in the output file.
        #[arg(long)]
        resume: bool,
        /// Score with a local toy-policy checkpoint.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Score with a remote chat-completion endpoint.
        #[arg(long, requires = "model")]
        base_url: Option<String>,
        #[arg(long, requires = "base_url")]
        model: Option<String>,
        #[arg(long, default_value = "/v1/chat/completions")]
        path: String,
        #[arg(long, default_value = DEFAULT_API_KEY_ENV)]
        api_key_env: String,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
        #[arg(long, default_value_t = 3)]
        max_retries: u32,
        #[arg(long, default_value_t = 8)]
        workers: usize,
        #[arg(long, default_value_t = 64)]
        max_gen_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Group-relative policy optimization over a curated JSONL file.
    Grpo {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        g: usize,
        #[arg(long, default_value_t = 14)]
        prompts_per_batch: usize,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.2)]
        eps_low: f64,
        #[arg(long, default_value_t = 0.28)]
        eps_high: f64,
        #[arg(long, default_value_t = 64)]
        max_gen_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        advantage_epsilon: f64,
        /// Metrics CSV; defaults to <out>.metrics.csv.
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
        /// Also save a snapshot checkpoint every K steps.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Greedy evaluation of a checkpoint over a problem or curated file.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        max_gen_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Deserialize)]
struct VerifyIn {
    response: String,
    gold: String,
}

#[derive(Serialize)]
struct VerifyOut<'a> {
    reward: u8,
    extracted: Option<String>,
    failure_reason: Option<&'a str>,
}

fn run_verify(input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let stdin = io::stdin();
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p)?)),
        None => Box::new(stdin.lock()),
    };
    let mut writer: Box<dyn Write> = match output {
        Some(p) => Box::new(BufWriter::new(fs::File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let out = match serde_json::from_str::<VerifyIn>(&line) {
            Ok(record) => {
                let outcome = deskrl::verifier::reward(&record.response, &record.gold);
                VerifyOut {
                    reward: if outcome.reward == 1.0 { 1 } else { 0 },
                    extracted: outcome.extracted,
                    failure_reason: outcome.failure_reason.map(|f| f.as_str()),
                }
            }
            Err(_) => VerifyOut { reward: 0, extracted: None, failure_reason: Some("unparseable") },
        };
        serde_json::to_writer(&mut writer, &out)?;
        writeln!(writer)?;
    }
    writer.flush()?;
    Ok(())
}

/// Toy dataset line: consumable as a Problem (gold) and as an SFT trace.
#[derive(Serialize)]
struct ToyLine<'a> {
    id: &'a str,
    prompt: &'a str,
    gold: &'a str,
    trace: &'a str,
    source: &'a str,
}

fn run_toygen(out_train: &Path, out_eval: &Path, eval_fraction: f64, split_seed: u64) -> Result<()> {
    let problems = generate_problems();
    let config = PolicyConfig::default();
    let (train, eval) = split_by_prompt_key(&problems, eval_fraction, split_seed, config.prompt_key_buckets);
    for (path, split) in [(out_train, &train), (out_eval, &eval)] {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for p in split {
            let line = ToyLine { id: &p.id, prompt: &p.prompt, gold: &p.gold, trace: &p.trace, source: "toy" };
            serde_json::to_writer(&mut w, &line)?;
            writeln!(w)?;
        }
        w.flush()?;
    }
    println!("wrote {} train and {} eval problems", train.len(), eval.len());
    Ok(())
}

fn load_or_init(init: Option<&Path>) -> Result<PolicyParams> {
    match init {
        Some(p) => PolicyParams::load(p),
        None => Ok(PolicyParams::new_zeroed(Vocab::standard(), PolicyConfig::default())),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_sft(
    data: &Path,
    out: &Path,
    init: Option<&Path>,
    batch: usize,
    steps: usize,
    lr: f64,
    seed: u64,
    max_seq_len: usize,
    prompt_loss_weight: f64,
    loss_csv: Option<PathBuf>,
) -> Result<()> {
    let params = load_or_init(init)?;
    let dataset = load_dataset(data, params.vocab(), params.config().prompt_key_buckets, max_seq_len)?;
    let mut config = SftConfig::new(batch, steps, lr, seed);
    config.prompt_loss_weight = prompt_loss_weight;
    let (trained, losses) = sft_train(params, &dataset.examples, &config)?;
    trained.save(out)?;
    let csv = loss_csv.unwrap_or_else(|| suffixed(out, ".loss.csv"));
    write_loss_csv(&csv, &losses)?;
    println!(
        "trained on {} examples ({} over-length dropped); final loss {:.4}; checkpoint {}",
        dataset.examples.len(),
        dataset.dropped_over_length,
        losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

#[allow(clippy::too_many_arguments)]
fn run_curate(
    input: &Path,
    output: &Path,
    n: usize,
    temperature: f64,
    keep_responses: bool,
    resume: bool,
    backend: Box<dyn Backend>,
    workers: usize,
    max_gen_len: usize,
    seed: u64,
) -> Result<()> {
    let problems = read_problems(input)?;
    let config = CurationConfig {
        n_attempts: n,
        gen: GenParams {
            system_prompt: SYSTEM_PROMPT.to_string(),
            temperature,
            max_tokens: max_gen_len,
            seed,
            keep_responses,
        },
        workers,
    };
    let summary = curate_problems(&problems, backend.as_ref(), &config, output, resume)?;
    println!(
        "scored {} problems ({} resumed): kept {}, dropped {} never-solved and {} always-solved",
        summary.scored, summary.skipped_resume, summary.written, summary.dropped_frustration, summary.dropped_comfort
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_grpo(
    data: &Path,
    init: &Path,
    out: &Path,
    config: GrpoConfig,
    metrics_csv: Option<PathBuf>,
    checkpoint_every: Option<usize>,
) -> Result<()> {
    let params = PolicyParams::load(init)?;
    let (_, dataset) = read_curated(data)?;
    let (trained, history) = grpo_train(params, &dataset, &config, |metrics, snapshot| {
        if let Some(every) = checkpoint_every {
            if every > 0 && (metrics.step + 1) % every == 0 {
                snapshot.save(&suffixed(out, &format!(".step{}", metrics.step + 1)))?;
            }
        }
        Ok(())
    })?;
    trained.save(out)?;
    let csv = metrics_csv.unwrap_or_else(|| suffixed(out, ".metrics.csv"));
    write_metrics_csv(&csv, &history)?;
    let final_reward = history.last().map(|m| m.mean_reward).unwrap_or(f64::NAN);
    println!(
        "{} steps over {} curated problems; final mean reward {final_reward:.3}; checkpoint {}",
        history.len(),
        dataset.len(),
        out.display()
    );
    Ok(())
}

fn run_eval(data: &Path, ckpt: &Path, out: &Path, max_gen_len: usize, seed: u64) -> Result<()> {
    let items = read_eval_data(data)?;
    let params = PolicyParams::load(ckpt)?;
    let backend = ToyBackend::new(params, format!("toy:{}", ckpt.display()));
    let config = EvalConfig { checkpoint: ckpt.display().to_string(), max_gen_len, seed };
    let report = evaluate(&backend, &items, &config);
    write_report(out, &report)?;
    println!(
        "accuracy {:.3} ({}/{}); report {}",
        report.accuracy,
        report.n_correct,
        report.n_problems,
        out.display()
    );
    if report.incomplete {
        return Err(Error::BackendUnavailable("evaluation aborted early; report flagged incomplete".to_string()));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Verify { input, output } => run_verify(input.as_deref(), output.as_deref()),
        Command::Toygen { out_train, out_eval, eval_fraction, split_seed } => {
            run_toygen(&out_train, &out_eval, eval_fraction, split_seed)
        }
        Command::Init { out } => {
            PolicyParams::new_zeroed(Vocab::standard(), PolicyConfig::default()).save(&out)?;
            println!("wrote zero-initialized checkpoint {}", out.display());
            Ok(())
        }
        Command::Sft {
            data,
            out,
            init,
            batch,
            steps,
            lr,
            seed,
            max_seq_len,
            prompt_loss_weight,
            loss_csv,
        } => run_sft(
            &data,
            &out,
            init.as_deref(),
            batch,
            steps,
            lr,
            seed,
            max_seq_len,
            prompt_loss_weight,
            loss_csv,
        ),
        Command::Curate {
            input,
            output,
            n,
            temperature,
            keep_responses,
            resume,
            ckpt,
            base_url,
            model,
            path,
            api_key_env,
            timeout_secs,
            max_retries,
            workers,
            max_gen_len,
            seed,
        } => {
            let backend: Box<dyn Backend> = match (ckpt, base_url) {
                (Some(ckpt), None) => {
                    let params = PolicyParams::load(&ckpt)?;
                    Box::new(ToyBackend::new(params, format!("toy:{}", ckpt.display())))
                }
                (None, Some(base_url)) => {
                    let mut cfg = HttpBackendConfig::new(base_url, model.expect("clap enforces --model"));
                    cfg.path = path;
                    cfg.api_key_env = api_key_env;
                    cfg.timeout_secs = timeout_secs;
                    cfg.max_retries = max_retries;
                    Box::new(HttpBackend::new(cfg)?)
                }
                _ => unreachable!("clap enforces exactly one scorer"),
            };
            run_curate(
                &input,
                &output,
                n,
                temperature,
                keep_responses,
                resume,
                backend,
                workers,
                max_gen_len,
                seed,
            )
        }
        Command::Grpo {
            data,
            init,
            out,
            g,
            prompts_per_batch,
            steps,
            lr,
            eps_low,
            eps_high,
            max_gen_len,
            seed,
            advantage_epsilon,
            metrics_csv,
            checkpoint_every,
        } => {
            let config = GrpoConfig {
                group_size: g,
                prompts_per_batch,
                steps,
                learning_rate: lr,
                eps_low,
                eps_high,
                max_gen_len,
                advantage_epsilon,
                seed,
            };
            run_grpo(&data, &init, &out, config, metrics_csv, checkpoint_every)
        }
        Command::Eval { data, ckpt, out, max_gen_len, seed } => run_eval(&data, &ckpt, &out, max_gen_len, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
