//! Command-line front end. Exit codes: 0 success, 2 configuration error,
//! 3 diverged run, 1 any other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use openset3cm::data::{generate_corpus, write_corpus};
use openset3cm::harness::{
    evaluate, export_curves, prepare_dataset, run_openset, sweep_beta, sweep_lambda, train_initial,
    RunConfig, RunRecord, RunStatus, Runner,
};
use openset3cm::metrics::IoUReport;
use openset3cm::model::ModelParams;
use openset3cm::Error;

#[derive(Parser)]
#[command(
    name = "openset3cm",
    version,
    about = "Open-set part segmentation with a conditional mutual information regularizer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lambda=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> openset3cm::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            cfg.set(k, v)?;
        }
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus as point-cloud files plus a manifest.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Initial phase only; writes a checkpoint and its evaluation.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full open-set protocol; writes the run record and reports.
    Openset {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// λ ablation.
    SweepLambda {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// β ablation.
    SweepBeta {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.9,0.99,0.995,0.999")]
        grid: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the initial-phase loss curve of a saved run record.
    ExportCurves {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Outcome {
    Ok,
    Diverged,
}

fn mkdir(dir: &Path) -> openset3cm::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_report(report: &IoUReport, dir: &Path, stem: &str) -> openset3cm::Result<()> {
    report.write_csv(dir.join(format!("{stem}.csv")))?;
    report.write_summary(dir.join(format!("{stem}_summary.json")))
}

fn execute(cmd: Command) -> openset3cm::Result<Outcome> {
    match cmd {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let manifest = write_corpus(&generate_corpus(&cfg.corpus())?, &out)?;
            println!("{}", manifest.display());
        }
        Command::Train { cfg, out } => {
            let cfg = cfg.resolve()?;
            let (ds, params, log) = train_initial(&cfg)?;
            mkdir(&out)?;
            if let Some(d) = log.diverged {
                eprintln!("diverged at step {} (total loss {})", d.step, d.total);
                return Ok(Outcome::Diverged);
            }
            params.save(out.join("checkpoint.txt"))?;
            write_report(&evaluate(&params, &ds)?, &out, "report")?;
            std::fs::write(out.join("config.txt"), cfg.to_kv_string()).map_err(|e| Error::Io {
                path: out.join("config.txt"),
                source: e,
            })?;
        }
        Command::Openset { cfg, out } => {
            let cfg = cfg.resolve()?;
            let rec = run_openset(&cfg)?;
            mkdir(&out)?;
            rec.save(out.join("record.json"))?;
            export_curves(&rec, out.join("curves.csv"))?;
            if let Some(r) = &rec.pre_surgery {
                write_report(r, &out, "pre_surgery")?;
            }
            if let Some(r) = &rec.post_surgery {
                write_report(r, &out, "post_surgery")?;
            }
            match &rec.status {
                RunStatus::Diverged { phase, step, total } => {
                    eprintln!("diverged in {phase:?} phase at step {step} (total loss {total})");
                    return Ok(Outcome::Diverged);
                }
                RunStatus::Degraded { reason } => eprintln!("degraded: {reason}"),
                RunStatus::Completed => {}
            }
            let (known, unknown) = rec.headline();
            println!("known_miou={known:?} unknown_miou={unknown:?}");
        }
        Command::SweepLambda {
            cfg,
            grid,
            seeds,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let mut runner = Runner::new().with_progress(|c, r| {
                eprintln!("lambda={} seed={} {}", c.lambda, c.seed, r.status.label())
            });
            let table = sweep_lambda(&mut runner, &grid, &cfg, &seeds)?;
            table.write_csv(&out)?;
            print!("{}", table.to_csv());
        }
        Command::SweepBeta {
            cfg,
            grid,
            seeds,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let mut runner = Runner::new().with_progress(|c, r| {
                eprintln!("beta={} seed={} {}", c.beta, c.seed, r.status.label())
            });
            let table = sweep_beta(&mut runner, &grid, &cfg, &seeds)?;
            table.write_csv(&out)?;
            print!("{}", table.to_csv());
        }
        Command::Eval {
            cfg,
            checkpoint,
            out,
        } => {
            let cfg = cfg.resolve()?;
            let ds = prepare_dataset(&cfg)?;
            let params = ModelParams::load(&checkpoint)?;
            mkdir(&out)?;
            let report = evaluate(&params, &ds)?;
            write_report(&report, &out, "report")?;
            println!("{}", report.summary_json());
        }
        Command::ExportCurves { record, out } => {
            export_curves(&RunRecord::load(&record)?, &out)?;
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => ExitCode::from(3),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
