use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use fairfolio::audit::audit_function;
use fairfolio::domain::{Dataset, GroundTruthEntry, Instance};
use fairfolio::enhance::enhance;
use fairfolio::harness::io::{load_dataset, read_dataset, sidecar_path, write_dataset, DatasetMeta};
use fairfolio::harness::{replay_file, run, FunctionSpec, RunConfig};
use fairfolio::scenario::{generate_population, training_history, ScenarioConfig};
use fairfolio::Error;

#[derive(Parser)]
#[command(name = "fairfolio", version, about = "Fair online selection over a portfolio of decision functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Labels {
    /// Ground-truth labels and losses.
    Truth,
    /// Biased historical labels, for training learned functions.
    History,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hiring dataset (CSV plus `.meta.json` sidecar).
    Generate {
        /// Scenario TOML; every field is optional.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        population: Option<usize>,
        #[arg(long, value_enum, default_value = "truth")]
        labels: Labels,
    },
    /// Run the online loop; writes report.json, metrics.csv and events.json.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Audit one function over a dataset; prints the report as JSON.
    Audit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Function spec (TOML, or JSON by extension).
        #[arg(long)]
        function: PathBuf,
        /// Labeled CSV for learned functions; defaults to `--data`.
        #[arg(long)]
        training: Option<PathBuf>,
        /// Run config whose `[audit]` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Audit and enhance one function; prints the outcome as JSON.
    Enhance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        function: PathBuf,
        #[arg(long)]
        training: Option<PathBuf>,
        /// Run config whose `[audit]` and `[enhancement]` sections are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a report's configuration and check it reproduces exactly.
    Replay {
        #[arg(long)]
        report: PathBuf,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Divergence { .. }) => 3,
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn emit_json(value: &impl serde::Serialize, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => {
            // a closed pipe (e.g. `| head`) is not an error
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{text}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                r => r.context("writing stdout")?,
            }
        }
    }
    Ok(())
}

struct Loaded {
    data: Dataset,
    function: fairfolio::function::DecisionFunction,
}

fn load_function(data: &Path, meta: Option<&Path>, function: &Path, training: Option<&Path>) -> anyhow::Result<Loaded> {
    let data = load_dataset(data, meta)?;
    let spec = FunctionSpec::load(function)?;
    let schema = data.schema().clone();
    let training = if spec.needs_training() {
        Some(Arc::new(match training {
            Some(t) => read_dataset(t, schema.clone())?,
            None => data.clone(),
        }))
    } else {
        None
    };
    let function = spec.build(&schema, training.as_ref())?;
    Ok(Loaded { data, function })
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Generate {
            config,
            out,
            seed,
            population,
            labels,
        } => {
            let mut cfg: ScenarioConfig = match &config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                        path: p.clone(),
                        source: e,
                    })?;
                    toml::from_str(&text).map_err(|e| Error::Parse {
                        path: p.clone(),
                        message: e.to_string(),
                    })?
                }
                None => ScenarioConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = population {
                cfg.population = n;
            }
            cfg.validate()?;
            let data = match labels {
                Labels::Truth => generate_population(&cfg)?.truth,
                Labels::History => training_history(&ScenarioConfig {
                    history_size: cfg.population,
                    ..cfg.clone()
                })?,
            };
            write_dataset(&out, &data)?;
            DatasetMeta::for_scenario(&cfg).save(&sidecar_path(&out))?;
            eprintln!("wrote {} rows to {}", data.len(), out.display());
        }
        Command::Run { config, out, seed, steps } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(n) = steps {
                cfg.steps = n;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            let report = run(&cfg)?;
            report.write_outputs(&cfg.output_dir)?;
            let last = report.last_metrics();
            eprintln!(
                "{} steps{}; framework loss {:.3}; final portfolio {:?}",
                report.steps_executed,
                if report.truncated { " (truncated)" } else { "" },
                last.map_or(0.0, |m| m.framework_loss),
                report.final_portfolio.entries.iter().map(|(id, _)| id).collect::<Vec<_>>()
            );
            for (col, g) in report.gap_columns.iter().zip(last.map(|m| m.gaps.clone()).unwrap_or_default()) {
                eprintln!("{col}: {}", g.map_or("n/a".into(), |v| format!("{v:.4}")));
            }
        }
        Command::Audit {
            data,
            meta,
            function,
            training,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let l = load_function(&data, meta.as_deref(), &function, training.as_deref())?;
            let report = audit_function(&l.function, l.data.instances(), &cfg.audit)?;
            emit_json(&report, out.as_deref())?;
        }
        Command::Enhance {
            data,
            meta,
            function,
            training,
            config,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let l = load_function(&data, meta.as_deref(), &function, training.as_deref())?;
            let mistakes: Vec<(Instance, GroundTruthEntry)> = l
                .data
                .labeled()
                .filter(|(i, t)| l.function.evaluate(i).is_ok_and(|y| y != t.desired))
                .map(|(i, t)| (i.clone(), *t))
                .collect();
            let outcome = enhance(
                &l.function,
                &mistakes,
                l.data.instances(),
                &l.data,
                &cfg.audit,
                &cfg.enhancement,
            )?;
            emit_json(&outcome, out.as_deref())?;
        }
        Command::Replay { report } => {
            let fresh = replay_file(&report)?;
            eprintln!("replay identical over {} steps", fresh.steps_executed);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
