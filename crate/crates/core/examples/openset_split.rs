//! Merges four categories into one unknown cluster and shows the label
//! bookkeeping used before and after head surgery.

use std::collections::BTreeSet;

use openset3cm::data::{build_openset_split, generate_corpus, CorpusConfig, ShapeCategory};

fn main() -> openset3cm::Result<()> {
    let corpus = generate_corpus(&CorpusConfig {
        shapes_per_category: 5,
        n_points: 64,
        ..CorpusConfig::default()
    })?;
    let unknown: BTreeSet<usize> = [
        ShapeCategory::Rocket,
        ShapeCategory::Airplane,
        ShapeCategory::Mushroom,
        ShapeCategory::Guitar,
    ]
    .iter()
    .flat_map(|c| c.part_labels())
    .collect();
    let ds = build_openset_split(&corpus, &unknown)?;
    println!("original labels     {}", corpus.num_labels);
    println!(
        "training classes    {} (unknown = {})",
        ds.num_train_classes(),
        ds.unknown_label
    );
    for (orig, train) in &ds.label_map {
        let cat = ShapeCategory::of_label(*orig).expect("known label");
        println!(
            "  {:>2} {:<9} {:<9} -> {}",
            orig,
            cat.name(),
            cat.part_names()[orig - cat.label_offset()],
            train
        );
    }
    println!(
        "columns after surgery (original label per column): {:?}",
        ds.column_manifest()
    );
    println!(
        "train clouds {}, test clouds {}",
        ds.train.len(),
        ds.test.len()
    );
    Ok(())
}
