use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use humaine::error::{Error, Result};
use humaine::formats::{
    load_distribution_table, load_experiment_config, load_metrics, read_cohort, read_jsonl, render_jsonl,
    render_snapshot, render_training_log, write_text, ModelSnapshot, Networks,
};
use humaine::report::{render_report, ReportFormat};
use humaine::runner::{default_threads, load_report, run_experiment, write_run};
use humaine::service::{serve, AppState, ServiceConfig};
use humaine_core::experiment::{build_corpus, config_hash, pretrain, ExperimentConfig};
use humaine_core::metrics::MetricsConfig;
use humaine_core::persona::{diversity_index, generate_personas_with, DistributionTable};
use humaine_core::profiler::{train_supervised, LabeledExample, TrainConfig};

#[derive(Parser)]
#[command(name = "humaine", version, about = "Personalised conversation experiments and service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic persona cohort as JSONL.
    Personas {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Demographic distribution table (TOML); the built-in one otherwise.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Simulate a cohort's sessions and write labelled training examples.
    Corpus {
        #[arg(long)]
        personas: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the profiler on a labelled corpus.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-epoch loss and accuracy (TSV).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Pre-train profiler and policy from a seed, as the service loads them.
    Pretrain {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the A/B experiment and write outcomes, event logs and reports.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the config's master seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render a stored report.
    Report {
        /// Run directory or report.json.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Start the HTTP service (configured through HUMAINE_* variables).
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

fn metrics_from(path: Option<&PathBuf>) -> Result<MetricsConfig> {
    match path {
        Some(p) => load_metrics(p),
        None => Ok(MetricsConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Personas { n, seed, out, table } => {
            let table = match table {
                Some(p) => load_distribution_table(&p)?,
                None => DistributionTable::default(),
            };
            let cohort = generate_personas_with(n, seed, &table)?;
            write_text(&out, &render_jsonl(&cohort))?;
            match diversity_index(&cohort) {
                Ok(d) => println!("{} personas, diversity index {d:.3} -> {}", cohort.len(), out.display()),
                Err(_) => println!("{} persona -> {}", cohort.len(), out.display()),
            }
        }
        Command::Corpus { personas, seed, out } => {
            let cohort = read_cohort(&personas)?;
            let exp = ExperimentConfig::default();
            let corpus = build_corpus(
                &cohort,
                &exp.topics,
                exp.pretraining.sessions_per_persona,
                exp.turns_per_session,
                seed,
                &exp.sim,
                &MetricsConfig::default(),
            )?;
            write_text(&out, &render_jsonl(&corpus))?;
            println!("{} examples -> {}", corpus.len(), out.display());
        }
        Command::Train { corpus, out, seed, log } => {
            let examples: Vec<LabeledExample> = read_jsonl(&corpus)?;
            let cfg = TrainConfig { seed, ..TrainConfig::default() };
            let (model, training_log) = train_supervised(&examples, &cfg)?;
            let hash = humaine_core::experiment::sha256_hex(&serde_json::to_vec(&cfg).expect("config serialises"));
            let snapshot = ModelSnapshot::new(hash, Networks { profiler: model, policy: None, value: None });
            write_text(&out, &render_snapshot(&snapshot))?;
            if let Some(path) = log {
                write_text(&path, &render_training_log(&training_log))?;
            }
            println!("trained on {} examples -> {}", examples.len(), out.display());
        }
        Command::Pretrain { seed, out } => {
            let exp = ExperimentConfig { master_seed: seed, ..ExperimentConfig::default() };
            let metrics = MetricsConfig::default();
            let models = pretrain(&exp, &metrics)?;
            let networks = Networks {
                profiler: models.profiler,
                policy: Some(models.learner.policy),
                value: Some(models.learner.value),
            };
            write_text(&out, &render_snapshot(&ModelSnapshot::new(config_hash(&exp, &metrics), networks)))?;
            println!("pre-trained on {} examples -> {}", models.corpus_size, out.display());
        }
        Command::Experiment { config, seed, out, metrics, threads } => {
            let mut cfg = match &config {
                Some(p) => load_experiment_config(p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let metrics = metrics_from(metrics.as_ref())?;
            let started = Instant::now();
            let run = run_experiment(&cfg, &metrics, threads.unwrap_or_else(default_threads))?;
            let files = write_run(&out, &cfg, &run)?;
            let r = &run.report;
            println!(
                "{} sessions in {:.1} s: control {:.3}, experimental {:.3}, t = {:.3}, p = {:.2e}, d = {}",
                r.total_sessions,
                started.elapsed().as_secs_f64(),
                r.control.mean,
                r.experimental.mean,
                r.welch.t,
                r.welch.p,
                r.cohens_d.map_or_else(|| "n/a".to_string(), |d| format!("{d:.3}"))
            );
            println!("report -> {}", files.report_text.display());
        }
        Command::Report { input, format } => {
            let report = load_report(&input)?;
            print!("{}", render_report(&report, format)?);
        }
        Command::Serve { addr } => {
            let cfg = ServiceConfig::from_env()?;
            let state = Arc::new(AppState::new(cfg)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Io { path: PathBuf::from("<runtime>"), source: e })?;
            eprintln!("listening on http://{addr} (config {})", state.config_hash());
            rt.block_on(serve(state, addr)).map_err(|e| Error::Io { path: PathBuf::from(addr.to_string()), source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
