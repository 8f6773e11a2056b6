//! One open-set run: initial training with the regularizer, head surgery,
//! fine-tuning, evaluation.
//!
//! ```text
//! cargo run --release --example openset_run -- lambda=0.5 seed=3
//! ```
//!
//! Any `key=value` argument overrides the default configuration;
//! `--curves=<path>` also writes the initial-phase loss curve as CSV.

use openset3cm::harness::{decile_variances, export_curves, run_openset, Phase, RunConfig};

fn main() -> openset3cm::Result<()> {
    let mut cfg = RunConfig::default();
    let mut curves = None;
    for arg in std::env::args().skip(1) {
        if let Some(path) = arg.strip_prefix("--curves=") {
            curves = Some(path.to_string());
            continue;
        }
        let (k, v) = arg
            .split_once('=')
            .ok_or_else(|| openset3cm::Error::Config(format!("expected key=value, got `{arg}`")))?;
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    let rec = run_openset(&cfg)?;
    if let Some(path) = &curves {
        export_curves(&rec, path)?;
    }
    let pre = rec.pre_surgery.as_ref().map(|r| r.summary.clone());
    let (known, unknown) = rec.headline();
    println!("status         {}", rec.status.label());
    if let openset3cm::harness::RunStatus::Degraded { reason } = &rec.status {
        println!("reason         {reason}");
    }
    println!("steps          {}", rec.steps.len());
    if let Some(p) = pre {
        println!("pre  known     {:?}", p.known_miou);
        println!("pre  unknown   {:?}", p.unknown_miou);
    }
    println!("post known     {known:?}");
    println!("post unknown   {unknown:?}");
    for e in &rec.epochs {
        println!(
            "{:?} epoch {:3}  ce {:.4}  l3cm {:.4}  acc {:.3}",
            e.phase, e.epoch, e.mean_ce, e.mean_l3cm, e.point_accuracy
        );
    }
    let l3cm: Vec<f64> = rec.phase_steps(Phase::Initial).map(|s| s.l3cm).collect();
    if let Some((first, last)) = decile_variances(&l3cm) {
        println!("l3cm decile variance  first {first:.3e}  last {last:.3e}");
    }
    println!("wall clock     {:.1}s", rec.wall_clock_secs);
    Ok(())
}
