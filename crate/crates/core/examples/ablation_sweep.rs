//! A miniature λ sweep and β sweep sharing one run cache. The grids are the
//! full ones; the corpus and epochs are shrunk so this finishes in under a minute.

use openset3cm::harness::{sweep_beta, sweep_lambda, RunConfig, Runner};

fn main() -> openset3cm::Result<()> {
    let base = RunConfig {
        shapes_per_category: 20,
        n_points: 64,
        epochs_phase1: 30,
        epochs_phase2: 5,
        ..RunConfig::default()
    };
    let seeds = [0, 1];
    let mut runner = Runner::new().with_progress(|c, r| {
        eprintln!(
            "lambda={} beta={} seed={} {}",
            c.lambda,
            c.beta,
            c.seed,
            r.status.label()
        )
    });
    let lambda = sweep_lambda(&mut runner, &[0.0, 0.1, 0.3, 0.5, 0.7], &base, &seeds)?;
    print!("{}", lambda.to_csv());
    let beta = sweep_beta(&mut runner, &[0.0, 0.9, 0.99, 0.995, 0.999], &base, &seeds)?;
    print!("{}", beta.to_csv());
    println!("distinct runs: {}", runner.len());
    Ok(())
}
