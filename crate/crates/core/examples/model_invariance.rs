//! Shows that the encoder ignores point order, that per-point logits follow
//! it, and that head surgery leaves retained logits untouched.

use openset3cm::model::{
    classify_logits, expand_head, segment_logits, ModelParams, DEFAULT_INIT_STD, DEFAULT_MLP_DIMS,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> openset3cm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = ModelParams::init(&DEFAULT_MLP_DIMS, 5, DEFAULT_INIT_STD, &mut rng)?;
    let cloud =
        openset3cm::data::generate_shape(openset3cm::data::ShapeCategory::Mug, 128, 3)?.points;

    let mut order: Vec<usize> = (0..cloud.len()).collect();
    order.shuffle(&mut rng);
    let shuffled: Vec<[f64; 3]> = order.iter().map(|&i| cloud[i]).collect();
    let same = classify_logits(&cloud, &params)? == classify_logits(&shuffled, &params)?;
    println!("classification logits identical after shuffling: {same}");

    let seg = segment_logits(&cloud, &params)?;
    let seg_shuffled = segment_logits(&shuffled, &params)?;
    let follows = order
        .iter()
        .enumerate()
        .all(|(k, &i)| seg.row(i) == seg_shuffled.row(k));
    println!("segmentation rows move with their points: {follows}");

    let expanded = expand_head(&params, 4, 3, DEFAULT_INIT_STD, &mut rng)?;
    let after = segment_logits(&cloud, &expanded)?;
    let mut diff = 0.0f64;
    for (a, b) in seg.iter_rows().zip(after.iter_rows()) {
        for k in 0..4 {
            diff = diff.max((a[k] - b[k]).abs());
        }
    }
    println!(
        "head 5 -> {} columns, retained logits max |diff| = {diff}",
        expanded.num_classes()
    );
    println!("parameters: {}", expanded.num_params());
    Ok(())
}
