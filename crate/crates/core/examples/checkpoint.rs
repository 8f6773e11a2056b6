//! Trains the initial phase briefly, saves the parameters as text, reloads
//! them and evaluates both copies on the test split.

use openset3cm::harness::{evaluate, train_initial, RunConfig};
use openset3cm::model::ModelParams;

fn main() -> openset3cm::Result<()> {
    let cfg = RunConfig {
        epochs_phase1: 20,
        ..RunConfig::default()
    };
    let (ds, params, log) = train_initial(&cfg)?;
    println!(
        "trained {} steps, last ce {:.4}",
        log.steps.len(),
        log.steps.last().map_or(f64::NAN, |s| s.ce)
    );
    let path = std::env::temp_dir().join("openset3cm_checkpoint.txt");
    params.save(&path)?;
    let back = ModelParams::load(&path)?;
    println!("reloaded bit-identical: {}", back == params);
    let a = evaluate(&params, &ds)?;
    let b = evaluate(&back, &ds)?;
    println!(
        "known mIoU {:?} / {:?}",
        a.summary.known_miou, b.summary.known_miou
    );
    Ok(())
}
