//! Part IoU with the empty-part rule, shape and category mIoU, grouped
//! accuracy, and the CSV/JSON report.

use std::collections::BTreeSet;

use openset3cm::data::ShapeCategory;
use openset3cm::metrics::{category_miou, grouped_accuracy, part_iou, shape_miou, IoUReport};

fn main() -> openset3cm::Result<()> {
    let (a, b) = (0, 1);
    let gt = [a, a, b, b];
    let pred = [a, b, b, b];
    println!("IoU(A) = {}", part_iou(&pred, &gt, a)?);
    println!("IoU(B) = {:.4}", part_iou(&pred, &gt, b)?);
    println!("IoU of a part in neither = {}", part_iou(&pred, &gt, 9)?);
    let parts = BTreeSet::from([a, b]);
    let s = shape_miou(&pred, &gt, &parts)?;
    println!("shape mIoU = {s:.4}");
    println!(
        "category mIoU of {{{s:.4}, 1, 0.25}} = {:.4}",
        category_miou(&[s, 1.0, 0.25])?
    );
    let seen = BTreeSet::from([0, 1]);
    println!(
        "grouped accuracy = {:?}",
        grouped_accuracy(&[0, 1, 0, 0, 2, 0], &[0, 1, 0, 1, 2, 3], &seen)?
    );

    let lamp = ShapeCategory::Lamp;
    let guitar = ShapeCategory::Guitar;
    let (l0, l1) = (lamp.label_offset(), lamp.label_offset() + 1);
    let g0 = guitar.label_offset();
    let gt_lamp = vec![l0, l0, l1, l1];
    let gt_guitar = vec![g0, g0 + 1, g0 + 2, g0 + 2];
    let preds = vec![vec![l0, l1, l1, l1], vec![g0, g0 + 1, g0 + 1, g0 + 2]];
    let report = IoUReport::evaluate(
        &preds,
        &[(lamp.id(), &gt_lamp), (guitar.id(), &gt_guitar)],
        &BTreeSet::from([guitar.id()]),
    )?;
    print!("{}", report.to_csv());
    println!("{}", report.summary_json());
    Ok(())
}
