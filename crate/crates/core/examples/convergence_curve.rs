//! Trains one regularized run, writes its loss curve, reads it back, and
//! compares the regularizer's spread in the first and last tenth of training.

use openset3cm::harness::{decile_variances, export_curves, read_curves, run_openset, RunConfig};

fn main() -> openset3cm::Result<()> {
    let cfg = RunConfig {
        epochs_phase2: 1,
        ..RunConfig::default()
    };
    let rec = run_openset(&cfg)?;
    let path = std::env::temp_dir().join("openset3cm_curves.csv");
    export_curves(&rec, &path)?;
    let curve = read_curves(&path)?;
    println!("{} steps written to {}", curve.len(), path.display());
    let l3cm: Vec<f64> = curve.iter().map(|c| c.l3cm).collect();
    if let Some((first, last)) = decile_variances(&l3cm) {
        println!("regularizer variance: first tenth {first:.3e}, last tenth {last:.3e}");
    }
    println!("status: {}", rec.status.label());
    Ok(())
}
