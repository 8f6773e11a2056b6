//! Part IoU, shape and category mIoU, and grouped accuracy.
//!
//! A part that appears in neither prediction nor ground truth scores 1.
//! Means are taken over values sorted by `total_cmp`, so every reported
//! number is independent of the order in which shapes are supplied.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ShapeCategory;
use crate::error::{Error, Result};

fn check_lengths(pred: &[usize], gt: &[usize]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::invalid(format!(
            "prediction has {} labels but ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Order-independent arithmetic mean.
pub fn stable_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

pub fn part_iou(pred: &[usize], gt: &[usize], part: usize) -> Result<f64> {
    check_lengths(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (p == part, g == part);
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Mean part IoU over every part of the category, including parts this
/// shape does not contain.
pub fn shape_miou(pred: &[usize], gt: &[usize], parts: &BTreeSet<usize>) -> Result<f64> {
    check_lengths(pred, gt)?;
    if parts.is_empty() {
        return Err(Error::invalid("category has no parts"));
    }
    let ious = parts
        .iter()
        .map(|&p| part_iou(pred, gt, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(stable_mean(&ious).expect("nonempty"))
}

pub fn category_miou(shape_mious: &[f64]) -> Result<f64> {
    stable_mean(shape_mious).ok_or_else(|| Error::invalid("category has no shapes"))
}

/// Accuracy on samples whose true label is in `seen`, then on the rest.
/// A group with no samples yields `None`.
pub fn grouped_accuracy(
    pred: &[usize],
    gt: &[usize],
    seen: &BTreeSet<usize>,
) -> Result<(Option<f64>, Option<f64>)> {
    check_lengths(pred, gt)?;
    if seen.is_empty() {
        return Err(Error::invalid("seen label set is empty"));
    }
    let mut hits = [0usize; 2];
    let mut counts = [0usize; 2];
    for (&p, &g) in pred.iter().zip(gt) {
        let k = usize::from(!seen.contains(&g));
        counts[k] += 1;
        hits[k] += usize::from(p == g);
    }
    let acc = |k: usize| (counts[k] > 0).then(|| hits[k] as f64 / counts[k] as f64);
    Ok((acc(0), acc(1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Known,
    Unknown,
}

impl Group {
    pub fn as_str(self) -> &'static str {
        match self {
            Group::Known => "known",
            Group::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeScore {
    pub category: usize,
    pub miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub category: usize,
    pub n_shapes: usize,
    pub miou: f64,
    pub group: Group,
}

/// The four headline means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean category mIoU over known categories.
    pub known_miou: Option<f64>,
    /// Mean category mIoU over unknown categories.
    pub unknown_miou: Option<f64>,
    /// Mean over all categories.
    pub category_miou: f64,
    /// Mean over all shapes.
    pub instance_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub shapes: Vec<ShapeScore>,
    pub categories: Vec<CategoryScore>,
    pub summary: Summary,
}

impl IoUReport {
    /// Scores predicted original part labels against ground truth, one
    /// entry per cloud. Categories in `unknown_categories` form the
    /// unknown group.
    pub fn evaluate(
        predictions: &[Vec<usize>],
        ground_truth: &[(usize, &[usize])],
        unknown_categories: &BTreeSet<usize>,
    ) -> Result<Self> {
        if predictions.len() != ground_truth.len() {
            return Err(Error::invalid(format!(
                "{} predictions for {} clouds",
                predictions.len(),
                ground_truth.len()
            )));
        }
        if predictions.is_empty() {
            return Err(Error::invalid("nothing to evaluate"));
        }
        let mut shapes = Vec::with_capacity(predictions.len());
        let mut by_cat: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (pred, &(category, gt)) in predictions.iter().zip(ground_truth) {
            let parts = ShapeCategory::from_id(category)?.part_labels();
            let miou = shape_miou(pred, gt, &parts)?;
            shapes.push(ShapeScore { category, miou });
            by_cat.entry(category).or_default().push(miou);
        }
        let categories: Vec<CategoryScore> = by_cat
            .iter()
            .map(|(&category, scores)| CategoryScore {
                category,
                n_shapes: scores.len(),
                miou: category_miou(scores).expect("nonempty"),
                group: if unknown_categories.contains(&category) {
                    Group::Unknown
                } else {
                    Group::Known
                },
            })
            .collect();
        let group_mean = |g: Group| {
            let v: Vec<f64> = categories
                .iter()
                .filter(|c| c.group == g)
                .map(|c| c.miou)
                .collect();
            stable_mean(&v)
        };
        let all_cats: Vec<f64> = categories.iter().map(|c| c.miou).collect();
        let all_shapes: Vec<f64> = shapes.iter().map(|s| s.miou).collect();
        let summary = Summary {
            known_miou: group_mean(Group::Known),
            unknown_miou: group_mean(Group::Unknown),
            category_miou: stable_mean(&all_cats).expect("nonempty"),
            instance_miou: stable_mean(&all_shapes).expect("nonempty"),
        };
        Ok(IoUReport {
            shapes,
            categories,
            summary,
        })
    }

    /// `category,n_shapes,miou,group`, one row per category.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("category,n_shapes,miou,group\n");
        for c in &self.categories {
            let name = ShapeCategory::from_id(c.category).map_or("?", |k| k.name());
            writeln!(s, "{name},{},{},{}", c.n_shapes, c.miou, c.group.as_str()).unwrap();
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.summary_json()).map_err(|e| Error::io(path, e))
    }
}
