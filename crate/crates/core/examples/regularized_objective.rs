//! One optimizer step on a single cloud with the regularized objective,
//! followed by the aggregate update. Prints each term before and after.

use openset3cm::autodiff::{Matrix, Tape};
use openset3cm::data::{generate_shape, ShapeCategory};
use openset3cm::loss::{total_objective, EmaAggregate, SignMode, TrainConfig};
use openset3cm::model::{forward, ModelParams, DEFAULT_INIT_STD, DEFAULT_MLP_DIMS};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> openset3cm::Result<()> {
    let cloud = generate_shape(ShapeCategory::Rocket, 128, 5)?;
    // Pretend the rocket's fins belong to the merged unknown cluster (label 2).
    let fins = *ShapeCategory::Rocket.part_labels().last().unwrap();
    let labels: Vec<usize> = cloud
        .part_labels
        .iter()
        .map(|&l| if l == fins { 2 } else { l % 2 })
        .collect();
    let mut params = ModelParams::init(
        &DEFAULT_MLP_DIMS,
        3,
        DEFAULT_INIT_STD,
        &mut ChaCha8Rng::seed_from_u64(0),
    )?;
    let mut agg = EmaAggregate::uniform(3, 0.9)?;

    for mode in [SignMode::MaximizeCmi, SignMode::MinimizeKl] {
        let cfg = TrainConfig {
            lambda: 0.5,
            sign_mode: mode,
            unknown_label: Some(2),
            lr: 0.1,
            ..TrainConfig::default()
        };
        for step in 0..3 {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let x = tape.constant(Matrix::new(
                cloud.len(),
                3,
                cloud.points.iter().flatten().copied().collect(),
            )?);
            let out = forward(&mut tape, x, &bound)?;
            let obj = total_objective(&mut tape, out.seg_logits, &labels, &agg, &cfg)?;
            println!(
                "{:<13} step {step}: ce {:.4}  l3cm {:.4}  total {:.4}  ({} unknown points)",
                mode.as_str(),
                tape.scalar(obj.ce),
                obj.l3cm.map_or(0.0, |v| tape.scalar(v)),
                tape.scalar(obj.total),
                obj.unknown_rows.len()
            );
            tape.backward(obj.total)?;
            params.sgd_step(&tape, &bound, cfg.lr);
            agg.update(&obj.unknown_probs(&tape)?)?;
        }
    }
    println!("q_hat = {:?}", agg.q_hat().as_slice());
    Ok(())
}
