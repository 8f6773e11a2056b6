//! Procedural part-labeled point clouds and the open-set label protocol.
//!
//! Every shape category is a composite of parametric primitives (sphere
//! caps, cylinders, boxes, planes); each primitive group carries one part
//! label. Part labels are global across categories, as in ShapeNet Part.
//! The up axis is `y`.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviation of the per-point Gaussian jitter.
pub const JITTER_STD: f64 = 0.02;

/// Smallest cloud accepted by [`generate_shape`].
pub const MIN_POINTS: usize = 8;

/// Built-in shape categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeCategory {
    Lamp,
    Table,
    Mug,
    Chair,
    Rocket,
    Airplane,
    Mushroom,
    Guitar,
}

impl ShapeCategory {
    pub const ALL: [ShapeCategory; 8] = [
        ShapeCategory::Lamp,
        ShapeCategory::Table,
        ShapeCategory::Mug,
        ShapeCategory::Chair,
        ShapeCategory::Rocket,
        ShapeCategory::Airplane,
        ShapeCategory::Mushroom,
        ShapeCategory::Guitar,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::invalid(format!("unknown shape category id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeCategory::Lamp => "lamp",
            ShapeCategory::Table => "table",
            ShapeCategory::Mug => "mug",
            ShapeCategory::Chair => "chair",
            ShapeCategory::Rocket => "rocket",
            ShapeCategory::Airplane => "airplane",
            ShapeCategory::Mushroom => "mushroom",
            ShapeCategory::Guitar => "guitar",
        }
    }

    /// Part names in local label order.
    pub fn part_names(self) -> &'static [&'static str] {
        match self {
            ShapeCategory::Lamp => &["pole", "shade"],
            ShapeCategory::Table => &["top", "legs"],
            ShapeCategory::Mug => &["body", "handle"],
            ShapeCategory::Chair => &["seat", "back", "legs", "arms"],
            ShapeCategory::Rocket => &["body", "nose", "fins"],
            ShapeCategory::Airplane => &["fuselage", "wings", "tail"],
            ShapeCategory::Mushroom => &["stem", "cap"],
            ShapeCategory::Guitar => &["body", "neck", "head"],
        }
    }

    pub fn num_parts(self) -> usize {
        self.part_names().len()
    }

    /// First global part label of this category.
    pub fn label_offset(self) -> usize {
        Self::ALL[..self.id()].iter().map(|c| c.num_parts()).sum()
    }

    /// Global part labels of this category.
    pub fn part_labels(self) -> BTreeSet<usize> {
        let o = self.label_offset();
        (o..o + self.num_parts()).collect()
    }

    /// Category owning a global part label.
    pub fn of_label(label: usize) -> Option<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.part_labels().contains(&label))
    }
}

impl std::str::FromStr for ShapeCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(id) = s.parse::<usize>() {
            return Self::from_id(id);
        }
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape category `{s}`")))
    }
}

/// Total number of global part labels across the built-in categories.
pub fn num_part_labels() -> usize {
    ShapeCategory::ALL.iter().map(|c| c.num_parts()).sum()
}

/// A point cloud with one part label per point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCloud {
    pub points: Vec<[f64; 3]>,
    pub part_labels: Vec<usize>,
    pub category: usize,
    pub seed: u64,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn distinct_labels(&self) -> BTreeSet<usize> {
        self.part_labels.iter().copied().collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Dir {
    X,
    Y,
}

/// Surface primitives. All sampling is area-uniform except for scaled caps.
#[derive(Debug, Clone)]
enum Primitive {
    /// Lateral surface of a cylinder along `axis` from `start` to `end`.
    Cylinder {
        center: [f64; 3],
        axis: Dir,
        radius: f64,
        start: f64,
        end: f64,
    },
    /// Cap of an axis-scaled sphere around `+y` (or `−y` when `down`),
    /// covering directions whose vertical component is at least `min_cos`.
    SphereCap {
        center: [f64; 3],
        radius: f64,
        scale: [f64; 3],
        min_cos: f64,
        down: bool,
    },
    Box {
        center: [f64; 3],
        half: [f64; 3],
    },
    /// Parallelogram `center + a·u + b·v`, `a, b ∈ [−1, 1]`.
    Plane {
        center: [f64; 3],
        u: [f64; 3],
        v: [f64; 3],
    },
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl Primitive {
    fn area(&self) -> f64 {
        match *self {
            Primitive::Cylinder {
                radius, start, end, ..
            } => 2.0 * PI * radius * (end - start).abs(),
            Primitive::SphereCap {
                radius,
                scale,
                min_cos,
                ..
            } => {
                let s = (scale[0] * scale[2]).sqrt().max(scale[1] * 0.5);
                2.0 * PI * radius * radius * (1.0 - min_cos) * s
            }
            Primitive::Box {
                half: [a, b, c], ..
            } => 8.0 * (a * b + b * c + c * a),
            Primitive::Plane { u, v, .. } => 4.0 * norm(cross(u, v)),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        match *self {
            Primitive::Cylinder {
                center,
                axis,
                radius,
                start,
                end,
            } => {
                let t = rng.random_range(0.0..2.0 * PI);
                let h = rng.random_range(start..end);
                let (a, b) = (radius * t.cos(), radius * t.sin());
                let local = match axis {
                    Dir::X => [h, a, b],
                    Dir::Y => [a, h, b],
                };
                [
                    center[0] + local[0],
                    center[1] + local[1],
                    center[2] + local[2],
                ]
            }
            Primitive::SphereCap {
                center,
                radius,
                scale,
                min_cos,
                down,
            } => {
                let y = rng.random_range(min_cos..=1.0);
                let r = (1.0 - y * y).max(0.0).sqrt();
                let phi = rng.random_range(0.0..2.0 * PI);
                let y = if down { -y } else { y };
                [
                    center[0] + radius * scale[0] * r * phi.cos(),
                    center[1] + radius * scale[1] * y,
                    center[2] + radius * scale[2] * r * phi.sin(),
                ]
            }
            Primitive::Box { center, half } => {
                let [a, b, c] = half;
                // Faces normal to x, y, z weighted by area.
                let w = [b * c, a * c, a * b];
                let pick = rng.random_range(0.0..w[0] + w[1] + w[2]);
                let face = if pick < w[0] {
                    0
                } else if pick < w[0] + w[1] {
                    1
                } else {
                    2
                };
                let mut p = [
                    rng.random_range(-a..=a),
                    rng.random_range(-b..=b),
                    rng.random_range(-c..=c),
                ];
                p[face] = if rng.random_bool(0.5) {
                    half[face]
                } else {
                    -half[face]
                };
                [center[0] + p[0], center[1] + p[1], center[2] + p[2]]
            }
            Primitive::Plane { center, u, v } => {
                let a = rng.random_range(-1.0..=1.0);
                let b = rng.random_range(-1.0..=1.0);
                [
                    center[0] + a * u[0] + b * v[0],
                    center[1] + a * u[1] + b * v[1],
                    center[2] + a * u[2] + b * v[2],
                ]
            }
        }
    }
}

/// One labeled part: a union of primitives.
struct Part {
    local_label: usize,
    pieces: Vec<Primitive>,
}

impl Part {
    fn one(local_label: usize, p: Primitive) -> Self {
        Part {
            local_label,
            pieces: vec![p],
        }
    }

    fn area(&self) -> f64 {
        self.pieces.iter().map(Primitive::area).sum()
    }

    fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        let total = self.area();
        let mut pick = rng.random_range(0.0..total);
        for p in &self.pieces {
            let a = p.area();
            if pick < a {
                return p.sample(rng);
            }
            pick -= a;
        }
        self.pieces.last().expect("nonempty part").sample(rng)
    }
}

fn cyl_y(x: f64, z: f64, radius: f64, y0: f64, y1: f64) -> Primitive {
    Primitive::Cylinder {
        center: [x, 0.0, z],
        axis: Dir::Y,
        radius,
        start: y0,
        end: y1,
    }
}

fn four_legs(w: f64, d: f64, r: f64, h: f64) -> Vec<Primitive> {
    [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)]
        .into_iter()
        .map(|(sx, sz)| cyl_y(sx * w, sz * d, r, 0.0, h))
        .collect()
}

fn build_parts(category: ShapeCategory, rng: &mut impl Rng) -> Vec<Part> {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    match category {
        ShapeCategory::Lamp => {
            let h = u(0.8, 1.2);
            let r = u(0.03, 0.06);
            let shade = u(0.3, 0.45);
            vec![
                Part::one(0, cyl_y(0.0, 0.0, r, 0.0, h)),
                Part::one(
                    1,
                    Primitive::SphereCap {
                        center: [0.0, h - 0.3 * shade, 0.0],
                        radius: shade,
                        scale: [1.0, u(0.7, 1.0), 1.0],
                        min_cos: u(0.1, 0.35),
                        down: false,
                    },
                ),
            ]
        }
        ShapeCategory::Table => {
            let (w, d, h) = (u(0.5, 0.8), u(0.3, 0.6), u(0.5, 0.8));
            let r = u(0.03, 0.05);
            vec![
                Part::one(
                    0,
                    Primitive::Box {
                        center: [0.0, h, 0.0],
                        half: [w, 0.03, d],
                    },
                ),
                Part {
                    local_label: 1,
                    pieces: four_legs(0.9 * w, 0.9 * d, r, h - 0.03),
                },
            ]
        }
        ShapeCategory::Mug => {
            let (r, h) = (u(0.3, 0.4), u(0.6, 0.9));
            vec![
                Part::one(0, cyl_y(0.0, 0.0, r, 0.0, h)),
                Part::one(
                    1,
                    Primitive::Box {
                        center: [r + u(0.08, 0.14), 0.5 * h, 0.0],
                        half: [u(0.05, 0.09), u(0.2, 0.33) * h, 0.04],
                    },
                ),
            ]
        }
        ShapeCategory::Chair => {
            let (w, d, h) = (u(0.35, 0.5), u(0.35, 0.5), u(0.4, 0.6));
            let back = u(0.35, 0.55);
            let r = u(0.025, 0.04);
            vec![
                Part::one(
                    0,
                    Primitive::Box {
                        center: [0.0, h, 0.0],
                        half: [w, 0.04, d],
                    },
                ),
                Part::one(
                    1,
                    Primitive::Box {
                        center: [0.0, h + back, -d],
                        half: [w, back, 0.04],
                    },
                ),
                Part {
                    local_label: 2,
                    pieces: four_legs(0.9 * w, 0.9 * d, r, h - 0.04),
                },
                Part {
                    local_label: 3,
                    pieces: [-1.0, 1.0]
                        .into_iter()
                        .map(|s| Primitive::Box {
                            center: [s * w, h + 0.22, 0.0],
                            half: [0.03, 0.03, 0.8 * d],
                        })
                        .collect(),
                },
            ]
        }
        ShapeCategory::Rocket => {
            let (r, len) = (u(0.12, 0.2), u(1.0, 1.5));
            let fin = u(0.15, 0.3);
            let fins = (0..4)
                .map(|k| {
                    let a = k as f64 * PI / 2.0;
                    let (c, s) = (a.cos(), a.sin());
                    Primitive::Plane {
                        center: [c * (r + 0.5 * fin), 0.15, s * (r + 0.5 * fin)],
                        u: [c * 0.5 * fin, 0.0, s * 0.5 * fin],
                        v: [0.0, 0.15, 0.0],
                    }
                })
                .collect();
            vec![
                Part::one(0, cyl_y(0.0, 0.0, r, 0.0, len)),
                Part::one(
                    1,
                    Primitive::SphereCap {
                        center: [0.0, len, 0.0],
                        radius: r,
                        scale: [1.0, u(1.8, 2.8), 1.0],
                        min_cos: 0.0,
                        down: false,
                    },
                ),
                Part {
                    local_label: 2,
                    pieces: fins,
                },
            ]
        }
        ShapeCategory::Airplane => {
            let (len, r) = (u(1.2, 1.6), u(0.07, 0.11));
            let span = u(0.6, 0.9);
            let chord = u(0.12, 0.2);
            let tail_x = -0.5 * len + 0.08;
            vec![
                Part::one(
                    0,
                    Primitive::Cylinder {
                        center: [0.0, 0.0, 0.0],
                        axis: Dir::X,
                        radius: r,
                        start: -0.5 * len,
                        end: 0.5 * len,
                    },
                ),
                Part::one(
                    1,
                    Primitive::Plane {
                        center: [u(-0.05, 0.1), 0.0, 0.0],
                        u: [chord, 0.0, 0.0],
                        v: [0.0, 0.0, span],
                    },
                ),
                Part {
                    local_label: 2,
                    pieces: vec![
                        Primitive::Plane {
                            center: [tail_x, r + 0.12, 0.0],
                            u: [0.08, 0.0, 0.0],
                            v: [0.0, 0.12, 0.0],
                        },
                        Primitive::Plane {
                            center: [tail_x, r, 0.0],
                            u: [0.06, 0.0, 0.0],
                            v: [0.0, 0.0, 0.25 * span],
                        },
                    ],
                },
            ]
        }
        ShapeCategory::Mushroom => {
            let (h, r) = (u(0.4, 0.7), u(0.08, 0.15));
            let cap = u(0.35, 0.55);
            vec![
                Part::one(0, cyl_y(0.0, 0.0, r, 0.0, h)),
                Part::one(
                    1,
                    Primitive::SphereCap {
                        center: [0.0, h - 0.1, 0.0],
                        radius: cap,
                        scale: [1.0, u(0.5, 0.8), 1.0],
                        min_cos: u(0.0, 0.3),
                        down: false,
                    },
                ),
            ]
        }
        ShapeCategory::Guitar => {
            let body = u(0.25, 0.35);
            let neck = u(0.5, 0.8);
            let top = 2.0 * body;
            vec![
                Part::one(
                    0,
                    Primitive::SphereCap {
                        center: [0.0, body, 0.0],
                        radius: body,
                        scale: [1.0, u(1.1, 1.4), 0.3],
                        min_cos: -1.0,
                        down: false,
                    },
                ),
                Part::one(
                    1,
                    Primitive::Box {
                        center: [0.0, top + 0.5 * neck, 0.0],
                        half: [0.04, 0.5 * neck, 0.02],
                    },
                ),
                Part::one(
                    2,
                    Primitive::Box {
                        center: [0.0, top + neck + 0.08, 0.0],
                        half: [u(0.06, 0.09), 0.08, 0.025],
                    },
                ),
            ]
        }
    }
}

/// Splits `n` points across parts in proportion to area, at least two per
/// part, by largest remainder.
fn allocate(n: usize, areas: &[f64]) -> Vec<usize> {
    let k = areas.len();
    let floor = 2usize;
    let spare = n - floor * k;
    let total: f64 = areas.iter().sum();
    let exact: Vec<f64> = areas.iter().map(|a| spare as f64 * a / total).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = spare - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts.iter().map(|c| c + floor).collect()
}

/// Samples one shape. Deterministic in `(category, n_points, seed)`.
///
/// Points are drawn per part in proportion to surface area, jittered with
/// `N(0, JITTER_STD²)` per coordinate, then centered on their centroid and
/// scaled so the farthest point has norm 1.
pub fn generate_shape(category: ShapeCategory, n_points: usize, seed: u64) -> Result<LabeledCloud> {
    if n_points < MIN_POINTS {
        return Err(Error::invalid(format!(
            "need at least {MIN_POINTS} points, got {n_points}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let parts = build_parts(category, &mut rng);
    let counts = allocate(n_points, &parts.iter().map(Part::area).collect::<Vec<_>>());
    let jitter = Normal::new(0.0, JITTER_STD).expect("valid std");
    let offset = category.label_offset();

    let mut points = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for (part, &count) in parts.iter().zip(&counts) {
        for _ in 0..count {
            let p = part.sample(&mut rng);
            points.push([
                p[0] + jitter.sample(&mut rng),
                p[1] + jitter.sample(&mut rng),
                p[2] + jitter.sample(&mut rng),
            ]);
            labels.push(offset + part.local_label);
        }
    }
    normalize_to_unit_sphere(&mut points);
    Ok(LabeledCloud {
        points,
        part_labels: labels,
        category: category.id(),
        seed,
    })
}

fn normalize_to_unit_sphere(points: &mut [[f64; 3]]) {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points.iter() {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    c.iter_mut().for_each(|v| *v /= n);
    let mut max = 0.0f64;
    for p in points.iter_mut() {
        for k in 0..3 {
            p[k] -= c[k];
        }
        max = max.max(norm(*p));
    }
    if max > 0.0 {
        for p in points.iter_mut() {
            p.iter_mut().for_each(|v| *v /= max);
        }
    }
}

/// Training-time augmentation: a uniform rotation about the up axis
/// followed by Gaussian jitter.
pub fn augment(points: &[[f64; 3]], jitter_std: f64, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let theta = rng.random_range(0.0..2.0 * PI);
    let (s, c) = theta.sin_cos();
    let jitter = Normal::new(0.0, jitter_std).expect("valid std");
    points
        .iter()
        .map(|p| {
            [
                c * p[0] + s * p[2] + jitter.sample(rng),
                p[1] + jitter.sample(rng),
                -s * p[0] + c * p[2] + jitter.sample(rng),
            ]
        })
        .collect()
}

/// Size of the synthetic corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub categories: Vec<ShapeCategory>,
    pub shapes_per_category: usize,
    pub n_points: usize,
    /// Fraction of each category's shapes used for training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            categories: ShapeCategory::ALL.to_vec(),
            shapes_per_category: 40,
            n_points: 128,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Train and test clouds with original part labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub train: Vec<LabeledCloud>,
    pub test: Vec<LabeledCloud>,
    pub num_labels: usize,
}

impl Corpus {
    pub fn all_labels(&self) -> BTreeSet<usize> {
        self.train
            .iter()
            .chain(&self.test)
            .flat_map(|c| c.part_labels.iter().copied())
            .collect()
    }
}

fn mix_seed(base: u64, category: usize, index: usize) -> u64 {
    // splitmix64 finalizer over a packed key
    let mut z = base
        ^ (category as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.categories.is_empty() || cfg.shapes_per_category == 0 {
        return Err(Error::invalid(
            "corpus needs at least one category and one shape",
        ));
    }
    if !(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0) {
        return Err(Error::invalid(
            "train fraction must lie strictly between 0 and 1",
        ));
    }
    let n_train = ((cfg.shapes_per_category as f64 * cfg.train_fraction).round() as usize)
        .clamp(1, cfg.shapes_per_category.saturating_sub(1).max(1));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for &cat in &cfg.categories {
        for i in 0..cfg.shapes_per_category {
            let cloud = generate_shape(cat, cfg.n_points, mix_seed(cfg.seed, cat.id(), i))?;
            if i < n_train {
                train.push(cloud);
            } else {
                test.push(cloud);
            }
        }
    }
    Ok(Corpus {
        train,
        test,
        num_labels: num_part_labels(),
    })
}

/// Corpus relabeled for open-set training: every label in
/// `unknown_source_classes` becomes `unknown_label`, known labels are
/// compacted to `0..unknown_label` in ascending original order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSetDataset {
    pub train: Vec<LabeledCloud>,
    pub test: Vec<LabeledCloud>,
    /// The same clouds with original labels.
    pub source: Corpus,
    pub known_classes: BTreeSet<usize>,
    pub unknown_source_classes: BTreeSet<usize>,
    /// Original label → training label.
    pub label_map: BTreeMap<usize, usize>,
    pub unknown_label: usize,
}

impl OpenSetDataset {
    /// Outputs of the phase-one head: known classes plus the unknown cluster.
    pub fn num_train_classes(&self) -> usize {
        self.unknown_label + 1
    }

    /// Training label → original label for known classes.
    pub fn known_inverse(&self) -> Vec<usize> {
        self.known_classes.iter().copied().collect()
    }

    /// Original label for each output column after head surgery: known
    /// columns first, then one column per merged source label in ascending
    /// order.
    pub fn column_manifest(&self) -> Vec<usize> {
        self.known_classes
            .iter()
            .chain(&self.unknown_source_classes)
            .copied()
            .collect()
    }

    /// Original label → output column after head surgery.
    pub fn expanded_label_map(&self) -> BTreeMap<usize, usize> {
        self.column_manifest()
            .into_iter()
            .enumerate()
            .map(|(col, orig)| (orig, col))
            .collect()
    }

    /// Categories whose parts are all merged into the unknown cluster.
    pub fn unknown_categories(&self) -> BTreeSet<usize> {
        ShapeCategory::ALL
            .into_iter()
            .filter(|c| c.part_labels().is_subset(&self.unknown_source_classes))
            .map(ShapeCategory::id)
            .collect()
    }
}

pub fn build_openset_split(
    corpus: &Corpus,
    unknown_source_classes: &BTreeSet<usize>,
) -> Result<OpenSetDataset> {
    let all: BTreeSet<usize> = (0..corpus.num_labels).collect();
    if unknown_source_classes.is_empty() {
        return Err(Error::invalid(
            "no classes selected for the unknown cluster",
        ));
    }
    if !unknown_source_classes.is_subset(&all) {
        return Err(Error::invalid("unknown classes outside the label range"));
    }
    if unknown_source_classes.len() == all.len() {
        return Err(Error::invalid(
            "the unknown cluster cannot cover every label",
        ));
    }
    let known: BTreeSet<usize> = all.difference(unknown_source_classes).copied().collect();
    let unknown_label = known.len();
    let mut label_map: BTreeMap<usize, usize> =
        known.iter().enumerate().map(|(i, &o)| (o, i)).collect();
    for &u in unknown_source_classes {
        label_map.insert(u, unknown_label);
    }
    let remap = |clouds: &[LabeledCloud]| -> Vec<LabeledCloud> {
        clouds
            .iter()
            .map(|c| LabeledCloud {
                part_labels: c.part_labels.iter().map(|l| label_map[l]).collect(),
                ..c.clone()
            })
            .collect()
    };
    Ok(OpenSetDataset {
        train: remap(&corpus.train),
        test: remap(&corpus.test),
        source: corpus.clone(),
        known_classes: known,
        unknown_source_classes: unknown_source_classes.clone(),
        label_map,
        unknown_label,
    })
}

/// Serializes a cloud in the `#pcd v1` text format.
pub fn cloud_to_string(cloud: &LabeledCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 80);
    writeln!(
        s,
        "#pcd v1 n={} category={} seed={}",
        cloud.len(),
        cloud.category,
        cloud.seed
    )
    .unwrap();
    for (p, l) in cloud.points.iter().zip(&cloud.part_labels) {
        writeln!(s, "{:.16e} {:.16e} {:.16e} {l}", p[0], p[1], p[2]).unwrap();
    }
    s
}

/// Parses the `#pcd v1` format; labels must be below `num_labels`.
pub fn parse_cloud(text: &str, num_labels: usize, origin: &str) -> Result<LabeledCloud> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| perr(1, "missing header".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("#pcd") || tokens.next() != Some("v1") {
        return Err(perr(1, "expected `#pcd v1` header".into()));
    }
    let (mut n, mut category, mut seed) = (None, None, 0u64);
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| perr(1, format!("bad header field `{tok}`")))?;
        let bad = |e: std::num::ParseIntError| perr(1, format!("bad `{k}`: {e}"));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(bad)?),
            "category" => category = Some(v.parse::<usize>().map_err(bad)?),
            "seed" => seed = v.parse::<u64>().map_err(bad)?,
            _ => return Err(perr(1, format!("unknown header field `{k}`"))),
        }
    }
    let n = n.ok_or_else(|| perr(1, "header lacks n=".into()))?;
    let category = category.ok_or_else(|| perr(1, "header lacks category=".into()))?;
    if n == 0 {
        return Err(perr(1, "cloud has no points".into()));
    }
    ShapeCategory::from_id(category).map_err(|e| perr(1, e.to_string()))?;

    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(perr(
                lineno,
                format!("expected `x y z part_label`, got {} fields", fields.len()),
            ));
        }
        let mut xyz = [0.0; 3];
        for k in 0..3 {
            xyz[k] = fields[k]
                .parse::<f64>()
                .map_err(|e| perr(lineno, format!("bad coordinate `{}`: {e}", fields[k])))?;
            if !xyz[k].is_finite() {
                return Err(perr(lineno, "non-finite coordinate".into()));
            }
        }
        let label = fields[3]
            .parse::<usize>()
            .map_err(|e| perr(lineno, format!("bad label `{}`: {e}", fields[3])))?;
        if label >= num_labels {
            return Err(perr(
                lineno,
                format!("label {label} out of range for {num_labels} labels"),
            ));
        }
        points.push(xyz);
        labels.push(label);
    }
    if points.len() != n {
        return Err(perr(
            1,
            format!("header says n={n} but {} points follow", points.len()),
        ));
    }
    Ok(LabeledCloud {
        points,
        part_labels: labels,
        category,
        seed,
    })
}

pub fn write_cloud(cloud: &LabeledCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cloud_to_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read_cloud(path: impl AsRef<Path>, num_labels: usize) -> Result<LabeledCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cloud(&text, num_labels, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One manifest line: `<path> <category> <split>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub category: usize,
    pub split: Split,
}

/// Writes every cloud of `corpus` under `dir` and a `manifest.txt` listing
/// them with paths relative to `dir`.
pub fn write_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (split, clouds) in [(Split::Train, &corpus.train), (Split::Test, &corpus.test)] {
        let tag = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        for (i, c) in clouds.iter().enumerate() {
            let name = format!("{tag}_{i:05}.pcd");
            write_cloud(c, dir.join(&name))?;
            writeln!(manifest, "{name} {} {tag}", c.category).unwrap();
        }
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let origin = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let perr = |message: String| Error::Parse {
            path: origin.clone(),
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        let [p, cat, split] = f[..] else {
            return Err(perr(format!(
                "expected `path category split`, got {} fields",
                f.len()
            )));
        };
        let category = cat
            .parse::<usize>()
            .map_err(|e| perr(format!("bad category: {e}")))?;
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(perr(format!("split must be train or test, got `{other}`"))),
        };
        out.push(ManifestEntry {
            path: base.join(p),
            category,
            split,
        });
    }
    Ok(out)
}

/// Loads a corpus written by [`write_corpus`].
pub fn read_corpus(manifest: impl AsRef<Path>) -> Result<Corpus> {
    let num_labels = num_part_labels();
    let mut corpus = Corpus {
        train: Vec::new(),
        test: Vec::new(),
        num_labels,
    };
    for e in read_manifest(manifest)? {
        let cloud = read_cloud(&e.path, num_labels)?;
        match e.split {
            Split::Train => corpus.train.push(cloud),
            Split::Test => corpus.test.push(cloud),
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        for cat in ShapeCategory::ALL {
            let a = generate_shape(cat, 64, 9).unwrap();
            let b = generate_shape(cat, 64, 9).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, generate_shape(cat, 64, 10).unwrap());
        }
    }

    #[test]
    fn lamp_has_exactly_two_part_labels() {
        let c = generate_shape(ShapeCategory::Lamp, 256, 1).unwrap();
        assert_eq!(c.len(), 256);
        assert_eq!(c.distinct_labels(), ShapeCategory::Lamp.part_labels());
        assert_eq!(c.distinct_labels().len(), 2);
    }

    #[test]
    fn clouds_lie_in_unit_sphere_and_use_every_part() {
        for cat in ShapeCategory::ALL {
            for seed in 0..20 {
                let c = generate_shape(cat, 8.max(cat.num_parts() * 2), seed).unwrap();
                assert!(c.points.iter().all(|p| norm(*p) <= 1.0 + 1e-9));
                assert_eq!(c.distinct_labels(), cat.part_labels());
            }
        }
    }

    #[test]
    fn too_few_points_or_bad_category_fail() {
        assert!(generate_shape(ShapeCategory::Mug, 7, 0).is_err());
        assert!(ShapeCategory::from_id(8).is_err());
        assert!("teapot".parse::<ShapeCategory>().is_err());
        assert_eq!(
            "rocket".parse::<ShapeCategory>().unwrap(),
            ShapeCategory::Rocket
        );
        assert_eq!("2".parse::<ShapeCategory>().unwrap(), ShapeCategory::Mug);
    }

    #[test]
    fn labels_are_global_and_disjoint() {
        assert_eq!(num_part_labels(), 21);
        let mut seen = BTreeSet::new();
        for cat in ShapeCategory::ALL {
            for l in cat.part_labels() {
                assert!(seen.insert(l));
                assert_eq!(ShapeCategory::of_label(l), Some(cat));
            }
        }
    }

    #[test]
    fn allocation_respects_floor_and_total() {
        let c = allocate(8, &[100.0, 0.01, 0.01, 0.01]);
        assert_eq!(c, vec![2, 2, 2, 2]);
        let c = allocate(256, &[3.0, 1.0]);
        assert_eq!(c.iter().sum::<usize>(), 256);
        assert_eq!(c, vec![191, 65]);
    }

    fn synthetic_corpus(num_labels: usize) -> Corpus {
        // One cloud per label, plus one mixing two labels.
        let mk = |labels: Vec<usize>| LabeledCloud {
            points: labels
                .iter()
                .map(|&l| [l as f64 * 0.01, 0.0, 0.0])
                .collect(),
            part_labels: labels,
            category: 0,
            seed: 0,
        };
        Corpus {
            train: (0..num_labels).map(|l| mk(vec![l, l])).collect(),
            test: vec![mk(vec![0, num_labels - 1])],
            num_labels,
        }
    }

    #[test]
    fn sixteen_labels_eight_merged() {
        let corpus = synthetic_corpus(16);
        let unknown: BTreeSet<usize> = (8..16).collect();
        let ds = build_openset_split(&corpus, &unknown).unwrap();
        assert_eq!(ds.num_train_classes(), 9);
        assert_eq!(ds.unknown_label, 8);
        assert_eq!(ds.column_manifest().len(), 16);
        assert_eq!(ds.test[0].part_labels, vec![0, 8]);
    }

    #[test]
    fn single_merged_class_only_renames() {
        let corpus = synthetic_corpus(6);
        let ds = build_openset_split(&corpus, &BTreeSet::from([2])).unwrap();
        assert_eq!(ds.num_train_classes(), 6);
        assert_eq!(ds.label_map[&2], 5);
        assert_eq!(ds.label_map[&5], 4);
    }

    #[test]
    fn label_map_inverse_is_identity_on_known() {
        let corpus = synthetic_corpus(12);
        let ds = build_openset_split(&corpus, &BTreeSet::from([1, 4, 5, 11])).unwrap();
        let inv = ds.known_inverse();
        for &k in &ds.known_classes {
            assert_eq!(inv[ds.label_map[&k]], k);
        }
        for (t, &o) in inv.iter().enumerate() {
            assert_eq!(ds.label_map[&o], t);
        }
        let manifest = ds.column_manifest();
        for (orig, col) in ds.expanded_label_map() {
            assert_eq!(manifest[col], orig);
        }
    }

    #[test]
    fn split_rejects_degenerate_sets() {
        let corpus = synthetic_corpus(4);
        assert!(build_openset_split(&corpus, &BTreeSet::new()).is_err());
        assert!(build_openset_split(&corpus, &(0..4).collect()).is_err());
        assert!(build_openset_split(&corpus, &BTreeSet::from([9])).is_err());
    }

    #[test]
    fn split_changes_only_labels() {
        let corpus = generate_corpus(&CorpusConfig {
            shapes_per_category: 3,
            n_points: 32,
            ..CorpusConfig::default()
        })
        .unwrap();
        let unknown: BTreeSet<usize> = [ShapeCategory::Rocket, ShapeCategory::Guitar]
            .iter()
            .flat_map(|c| c.part_labels())
            .collect();
        let ds = build_openset_split(&corpus, &unknown).unwrap();
        for (a, b) in ds.train.iter().zip(&corpus.train) {
            assert_eq!(a.points, b.points);
            assert_eq!(a.len(), b.len());
        }
        assert_eq!(
            ds.unknown_categories(),
            BTreeSet::from([ShapeCategory::Rocket.id(), ShapeCategory::Guitar.id()])
        );
    }

    #[test]
    fn corpus_split_sizes() {
        let corpus = generate_corpus(&CorpusConfig {
            shapes_per_category: 5,
            n_points: 16,
            ..CorpusConfig::default()
        })
        .unwrap();
        assert_eq!(corpus.train.len(), 8 * 4);
        assert_eq!(corpus.test.len(), 8);
        assert!(corpus
            .train
            .iter()
            .chain(&corpus.test)
            .all(|c| c.distinct_labels().len() >= 2));
    }

    #[test]
    fn text_round_trip_is_exact() {
        let c = generate_shape(ShapeCategory::Airplane, 64, 3).unwrap();
        let back = parse_cloud(&cloud_to_string(&c), num_part_labels(), "mem").unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn parse_errors_name_the_line() {
        assert!(parse_cloud("#pcd v1 n=0 category=0\n", 4, "f").is_err());
        let bad = "#pcd v1 n=2 category=0\n0 0 0 1\n0.5 0 0 4\n";
        match parse_cloud(bad, 4, "f") {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("label 4"));
            }
            other => panic!("{other:?}"),
        }
        match parse_cloud("#pcd v1 n=1 category=0\n0 zero 0 1\n", 4, "f") {
            Err(Error::Parse { line: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(parse_cloud("#pcd v1 n=3 category=0\n0 0 0 1\n", 4, "f").is_err());
    }

    #[test]
    fn corpus_directory_round_trip() {
        let corpus = generate_corpus(&CorpusConfig {
            shapes_per_category: 2,
            n_points: 12,
            ..CorpusConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_corpus(&corpus, dir.path()).unwrap();
        assert_eq!(read_corpus(&manifest).unwrap(), corpus);
    }

    #[test]
    fn augmentation_preserves_height_without_jitter() {
        let c = generate_shape(ShapeCategory::Chair, 32, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = augment(&c.points, 0.0, &mut rng);
        for (p, q) in c.points.iter().zip(&a) {
            assert_eq!(p[1], q[1]);
            assert!((norm(*p) - norm(*q)).abs() < 1e-12);
        }
    }
}
