use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use freezekit::agents::{simulate_cohort, AgentKind, AgentParams};
use freezekit::fitting::{
    compare_group_params, fit_sessions, recover_parameters, recovery_config, write_fits_csv, FitOptions, ParamSampler,
};
use freezekit::inference::{model_ladder, observations_from_logs};
use freezekit::log::{read_jsonl_file, write_jsonl, SessionLog};
use freezekit::protocol::TaskConfig;
use freezekit::report::{analyze, AnalysisOptions, IndexReport};
use freezekit::Error as CoreError;
use freezekit_platform::api;
use freezekit_platform::service::SessionService;
use freezekit_platform::store::Store;
use freezekit_platform::{PlatformError, Result};

#[derive(Parser)]
#[command(name = "freezekit", version, about = "Reversal-learning bandit simulation, analysis and session server")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Rw,
    Observer,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Json,
    Csv,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum LadderFormat {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a cohort of agents and write their logs as JSONL.
    Simulate {
        /// Agent parameter preset, e.g. high_e1.
        #[arg(long)]
        preset: String,
        /// Task preset; defaults to exp1_high or exp1_normal after the agent preset's prefix.
        #[arg(long)]
        task: Option<String>,
        #[arg(long, value_enum, default_value = "rw")]
        kind: Kind,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Session id prefix; defaults to the preset name.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute behavioural indices and group comparisons.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        /// Confidence drop used for the between-group freeze comparison.
        #[arg(long, default_value_t = 2)]
        delta: u8,
        #[arg(long, default_value_t = 2000)]
        n_boot: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the RW + stickiness model to every session.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Leave practice choices out of the likelihood.
        #[arg(long)]
        exclude_practice: bool,
    },
    /// Parameter recovery on simulated agents.
    Recover {
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 60)]
        trials: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Nested logistic models of switching.
    Ladder {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: LadderFormat,
    },
    /// Run the HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long)]
        store: PathBuf,
    },
    /// Render a saved analysis report.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: ReportFormat,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_logs(path: &Path) -> Result<Vec<SessionLog>> {
    let logs = read_jsonl_file(path)?;
    for l in &logs {
        l.validate()?;
    }
    Ok(logs)
}

fn default_task(preset: &str) -> Result<&'static str> {
    if preset.starts_with("high") {
        Ok("exp1_high")
    } else if preset.starts_with("normal") {
        Ok("exp1_normal")
    } else {
        Err(PlatformError::BadRequest(format!("no default task for `{preset}`; pass --task")))
    }
}

fn unknown(name: &str, presets: Vec<&'static str>) -> PlatformError {
    PlatformError::UnknownPreset {
        name: name.into(),
        presets: presets.into_iter().map(String::from).collect(),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            preset,
            task,
            kind,
            n,
            seed,
            label,
            out,
        } => {
            if n == 0 {
                return Err(CoreError::config("n", "must be at least 1").into());
            }
            let params = AgentParams::preset(&preset).ok_or_else(|| unknown(&preset, AgentParams::preset_names()))?;
            let task_name = match task {
                Some(t) => t,
                None => default_task(&preset)?.to_string(),
            };
            let config =
                TaskConfig::preset(&task_name).ok_or_else(|| unknown(&task_name, TaskConfig::preset_names()))?;
            let kind = match kind {
                Kind::Rw => AgentKind::RwStickiness,
                Kind::Observer => AgentKind::IdealObserver,
            };
            let logs = simulate_cohort(label.as_deref().unwrap_or(&preset), kind, &params, &config, n, seed)?;
            let mut w = output(out.as_deref())?;
            write_jsonl(&logs, &mut w)?;
            w.flush()?;
        }
        Command::Analyze {
            input,
            delta,
            n_boot,
            seed,
            out,
        } => {
            let logs = read_logs(&input)?;
            let mut opts = AnalysisOptions {
                primary_delta: delta,
                n_boot,
                seed,
                ..AnalysisOptions::default()
            };
            if !opts.deltas.contains(&delta) {
                opts.deltas.push(delta);
                opts.deltas.sort_unstable();
            }
            let report = analyze(&logs, &opts)?;
            let mut w = output(out.as_deref())?;
            w.write_all(report.to_json().as_bytes())?;
            w.flush()?;
        }
        Command::Fit {
            input,
            out,
            exclude_practice,
        } => {
            let logs = read_logs(&input)?;
            let opts = FitOptions {
                include_practice: !exclude_practice,
                ..FitOptions::default()
            };
            let fits = fit_sessions(&logs, &opts)?;
            let mut w = output(out.as_deref())?;
            write_fits_csv(&fits, &mut w)?;
            w.flush()?;
            if out.is_some() {
                if let Ok(cmp) = compare_group_params(&fits) {
                    println!("{} (n = {}) vs {} (n = {})", cmp.label_a, cmp.n_a, cmp.label_b, cmp.n_b);
                    for (name, t) in [("alpha", &cmp.alpha), ("beta", &cmp.beta), ("phi", &cmp.phi)] {
                        println!("  {name:<5} {}", t.to_text());
                    }
                }
            }
        }
        Command::Recover { n, trials, seed, out } => {
            let config = recovery_config(trials, seed)?;
            let report = recover_parameters(n, &ParamSampler::default(), &config, seed, &FitOptions::default())?;
            let mut w = output(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report).map_err(|e| CoreError::Input(e.to_string()))?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        Command::Ladder { input, format } => {
            let logs = read_logs(&input)?;
            let ladder = model_ladder(&observations_from_logs(&logs)?)?;
            match format {
                LadderFormat::Text => print!("{}", ladder.to_text()),
                LadderFormat::Json => {
                    let text = serde_json::to_string_pretty(&ladder).map_err(|e| CoreError::Input(e.to_string()))?;
                    println!("{text}");
                }
            }
        }
        Command::Serve { port, host, store } => {
            let service = Arc::new(SessionService::open(Store::open(store)?)?);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(api::serve(service, SocketAddr::new(host, port)))?;
        }
        Command::Report { input, format } => {
            let report = IndexReport::from_json(&std::fs::read_to_string(&input)?)?;
            let mut w = output(None)?;
            match format {
                ReportFormat::Json => w.write_all(report.to_json().as_bytes())?,
                ReportFormat::Csv => report.write_csv(&mut w)?,
                ReportFormat::Text => w.write_all(report.to_text().as_bytes())?,
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = serde_json::to_string(&e.body()).unwrap_or_else(|_| format!("{{\"message\":{:?}}}", e.to_string()));
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
