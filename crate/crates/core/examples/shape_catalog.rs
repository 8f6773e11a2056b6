//! Samples one shape per built-in category, prints its part statistics and
//! writes it in the text point-cloud format.
//!
//! ```text
//! cargo run --example shape_catalog -- out/shapes
//! ```

use std::collections::BTreeMap;

use openset3cm::data::{generate_shape, num_part_labels, read_cloud, write_cloud, ShapeCategory};

fn main() -> openset3cm::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("openset3cm_shapes"));
    std::fs::create_dir_all(&dir).map_err(|e| openset3cm::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    for cat in ShapeCategory::ALL {
        let cloud = generate_shape(cat, 256, 7)?;
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &cloud.part_labels {
            *counts.entry(l).or_default() += 1;
        }
        let parts: Vec<String> = counts
            .iter()
            .map(|(l, n)| format!("{}={n}", cat.part_names()[l - cat.label_offset()]))
            .collect();
        let path = dir.join(format!("{}.pcd", cat.name()));
        write_cloud(&cloud, &path)?;
        assert_eq!(read_cloud(&path, num_part_labels())?, cloud);
        println!(
            "{:<9} {}  -> {}",
            cat.name(),
            parts.join(" "),
            path.display()
        );
    }
    Ok(())
}
