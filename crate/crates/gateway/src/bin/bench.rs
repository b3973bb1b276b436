//! Benchmark runner: scores a command suite against a fresh simulator.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use plcagent::agent::{AgentConfig, HttpSettings, DEFAULT_MAX_TOOL_ROUNDS};
use plcagent::bench::faults::{scripted_transcript, FaultPlan};
use plcagent::bench::generate::random_suite;
use plcagent::bench::{load_suite_file, run_suite_in_memory, BenchReport, BenchmarkSuite};
use plcagent::{load_machine_spec_file, MachineSpec};
use plcagent_gateway::config::DEFAULT_KEY_ENV;
use plcagent_gateway::{build_backend, BackendSettings};

#[derive(Debug, Parser)]
#[command(name = "bench", about = "Command-suite benchmark for the PLC agent")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a suite and write the report.
    Run {
        #[arg(long)]
        suite: PathBuf,
        /// Machine configuration; defaults to the suite's `machine` entry.
        #[arg(long)]
        machine: Option<PathBuf>,
        /// `oracle`, `scripted:<file>` or `http`.
        #[arg(long, default_value = "oracle")]
        backend: String,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_TOOL_ROUNDS)]
        max_tool_rounds: usize,
        /// Chat-completions base URL for the http backend, e.g. https://host/v1.
        #[arg(long, env = "PLCAGENT_BASE_URL")]
        base_url: Option<String>,
        #[arg(long, env = "PLCAGENT_MODEL")]
        model: Option<String>,
        /// Environment variable holding the API key.
        #[arg(long, default_value = DEFAULT_KEY_ENV)]
        key_env: String,
        /// Per-request timeout in seconds for the http backend.
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
    },
    /// Write a scripted transcript replaying the oracle with planned faults.
    Script {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        machine: Option<PathBuf>,
        /// JSON object mapping command index to fault; omit for a clean run.
        #[arg(long)]
        faults: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a seeded random suite.
    Generate {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        len: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn machine_path(suite: &Path, machine: Option<PathBuf>) -> anyhow::Result<PathBuf> {
    if let Some(path) = machine {
        return Ok(path);
    }
    let text = std::fs::read_to_string(suite).with_context(|| format!("reading {}", suite.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", suite.display()))?;
    match doc.get("machine").and_then(|m| m.as_str()) {
        Some(rel) => Ok(suite.parent().unwrap_or(Path::new(".")).join(rel)),
        None => bail!("{} names no machine; pass --machine", suite.display()),
    }
}

fn load(suite: &Path, machine: Option<PathBuf>) -> anyhow::Result<(Arc<MachineSpec>, BenchmarkSuite)> {
    let machine = machine_path(suite, machine)?;
    let spec = load_machine_spec_file(&machine).with_context(|| format!("loading {}", machine.display()))?;
    let suite = load_suite_file(suite, &spec).with_context(|| format!("loading {}", suite.display()))?;
    Ok((Arc::new(spec), suite))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_summary(report: &BenchReport, elapsed: Duration) {
    println!(
        "backend {}: {}/{} correct, accuracy {:.3} ({:.2} s)",
        report.backend,
        report.correct,
        report.total,
        report.accuracy,
        elapsed.as_secs_f64()
    );
    for (level, stats) in &report.per_level {
        println!("  level {level}: {}/{}", stats.correct, stats.total);
    }
    for v in report.verdicts.iter().filter(|v| !v.correct) {
        let category = v.category.map(|c| format!("{c:?}")).unwrap_or_default();
        println!("  command {} incorrect [{category}]: {}", v.index, v.text);
    }
}

fn main() -> anyhow::Result<()> {
    plcagent_gateway::init_tracing();
    match Args::parse().command {
        Command::Run {
            suite,
            machine,
            backend,
            report,
            max_tool_rounds,
            base_url,
            model,
            key_env,
            timeout_secs,
        } => {
            let (spec, suite) = load(&suite, machine)?;
            let settings = match backend.as_str() {
                "oracle" => BackendSettings::Oracle,
                "http" => {
                    let base_url = base_url.context("the http backend needs --base-url")?;
                    let model = model.context("the http backend needs --model")?;
                    let key = std::env::var(&key_env)
                        .with_context(|| format!("environment variable {key_env} holding the key is not set"))?;
                    let mut http = HttpSettings::new(base_url, model);
                    http.api_key = Some(key);
                    http.timeout = Duration::from_secs(timeout_secs);
                    BackendSettings::Http(http)
                }
                other => match other.strip_prefix("scripted:") {
                    Some(file) => BackendSettings::Scripted { script: file.into() },
                    None => bail!("unknown backend {other:?}; use oracle, scripted:<file> or http"),
                },
            };
            let config = AgentConfig::new(max_tool_rounds).context("--max-tool-rounds must be at least 1")?;
            let mut llm = build_backend(&settings, &spec)?;
            let started = Instant::now();
            let result = run_suite_in_memory(&config, llm.as_mut(), &settings.label(), spec, &suite)?;
            print_summary(&result, started.elapsed());
            if let Some(path) = report {
                write_json(&path, &result)?;
            }
        }
        Command::Script { suite, machine, faults, out } => {
            let (spec, suite) = load(&suite, machine)?;
            let plan: FaultPlan = match faults {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                None => FaultPlan::new(),
            };
            let transcript = scripted_transcript(&suite, &spec, &plan)?;
            write_json(&out, &transcript)?;
            println!("wrote {} replies to {}", transcript.len(), out.display());
        }
        Command::Generate { machine, seed, len, out } => {
            let spec = load_machine_spec_file(&machine).with_context(|| format!("loading {}", machine.display()))?;
            write_json(&out, &random_suite(&spec, seed, len)?)?;
            println!("wrote {len} commands to {}", out.display());
        }
    }
    Ok(())
}
