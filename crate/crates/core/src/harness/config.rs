//! Flat `key = value` run configuration.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{CorpusConfig, ShapeCategory};
use crate::error::{Error, Result};
use crate::loss::{SignMode, TrainConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "OPENSET3CM_SEED";

/// Everything needed to reproduce one open-set run.
///
/// The text form is one `key = value` pair per line; `#` starts a comment.
/// Every key is optional and unknown keys are rejected.
///
/// | key | meaning |
/// |-----|---------|
/// | `lambda` | weight of the CMI regularizer |
/// | `beta` | EMA factor of the unknown-cluster aggregate |
/// | `sign_mode` | `maximize_cmi` or `minimize_kl` |
/// | `lr` | SGD step size, both phases |
/// | `epochs_phase1`, `epochs_phase2` | epochs before and after head surgery |
/// | `batch` | clouds per step |
/// | `seed` | initialization, shuffling, augmentation, surgery |
/// | `n_points` | points per cloud |
/// | `unknown_classes` | comma-separated categories merged into the unknown cluster |
/// | `shapes_per_category`, `train_fraction`, `data_seed` | corpus dimensions |
/// | `data_dir` | load the corpus from `<data_dir>/manifest.txt` instead of generating it |
/// | `augment` | rotation about the up axis plus jitter during training |
/// | `init_std`, `head_init_std` | Gaussian init scale of the network and of new head columns |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lambda: f64,
    pub beta: f64,
    pub sign_mode: SignMode,
    pub lr: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub batch: usize,
    pub seed: u64,
    pub n_points: usize,
    pub unknown_classes: Vec<ShapeCategory>,
    pub shapes_per_category: usize,
    pub train_fraction: f64,
    pub data_seed: u64,
    pub data_dir: Option<PathBuf>,
    pub augment: bool,
    pub init_std: f64,
    pub head_init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            lambda: 0.5,
            beta: 0.995,
            sign_mode: SignMode::MaximizeCmi,
            lr: 0.4,
            epochs_phase1: 60,
            epochs_phase2: 15,
            batch: 32,
            seed: 0,
            n_points: 128,
            unknown_classes: vec![
                ShapeCategory::Rocket,
                ShapeCategory::Airplane,
                ShapeCategory::Mushroom,
                ShapeCategory::Guitar,
            ],
            shapes_per_category: 40,
            train_fraction: 0.8,
            data_seed: 0,
            data_dir: None,
            augment: true,
            init_std: crate::model::DEFAULT_INIT_STD,
            head_init_std: crate::model::DEFAULT_INIT_STD,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key}`: expected a boolean, got `{v}`"
        ))),
    }
}

impl RunConfig {
    /// Applies one `key`/`value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "lambda" => self.lambda = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "sign_mode" => self.sign_mode = v.parse()?,
            "lr" => self.lr = parse_num(key, v)?,
            "epochs_phase1" => self.epochs_phase1 = parse_num(key, v)?,
            "epochs_phase2" => self.epochs_phase2 = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "n_points" => self.n_points = parse_num(key, v)?,
            "unknown_classes" => {
                self.unknown_classes = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<ShapeCategory>()
                            .map_err(|e| Error::Config(e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "shapes_per_category" => self.shapes_per_category = parse_num(key, v)?,
            "train_fraction" => self.train_fraction = parse_num(key, v)?,
            "data_seed" => self.data_seed = parse_num(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "augment" => self.augment = parse_bool(key, v)?,
            "init_std" => self.init_std = parse_num(key, v)?,
            "head_init_std" => self.head_init_std = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses the text form on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Replaces the seed with `OPENSET3CM_SEED` when that variable is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = parse_num(SEED_ENV, v.trim())?;
        }
        Ok(())
    }

    /// Text form; parsing it yields an identical config.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("lambda", format!("{:?}", self.lambda));
        put("beta", format!("{:?}", self.beta));
        put("sign_mode", self.sign_mode.as_str().to_string());
        put("lr", format!("{:?}", self.lr));
        put("epochs_phase1", self.epochs_phase1.to_string());
        put("epochs_phase2", self.epochs_phase2.to_string());
        put("batch", self.batch.to_string());
        put("seed", self.seed.to_string());
        put("n_points", self.n_points.to_string());
        put(
            "unknown_classes",
            self.unknown_classes
                .iter()
                .map(|c| c.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        put("shapes_per_category", self.shapes_per_category.to_string());
        put("train_fraction", format!("{:?}", self.train_fraction));
        put("data_seed", self.data_seed.to_string());
        if let Some(d) = &self.data_dir {
            put("data_dir", d.display().to_string());
        }
        put("augment", self.augment.to_string());
        put("init_std", format!("{:?}", self.init_std));
        put("head_init_std", format!("{:?}", self.head_init_std));
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.phase1().validate()?;
        if self.unknown_classes.is_empty() {
            return Err(Error::Config(
                "unknown_classes must name at least one category".into(),
            ));
        }
        let distinct: BTreeSet<_> = self.unknown_classes.iter().collect();
        if distinct.len() != self.unknown_classes.len() {
            return Err(Error::Config(
                "unknown_classes lists a category twice".into(),
            ));
        }
        if distinct.len() >= ShapeCategory::ALL.len() {
            return Err(Error::Config(
                "at least one category must stay known".into(),
            ));
        }
        if self.n_points < crate::data::MIN_POINTS {
            return Err(Error::Config(format!(
                "n_points must be >= {}",
                crate::data::MIN_POINTS
            )));
        }
        if self.shapes_per_category < 2 {
            return Err(Error::Config("shapes_per_category must be >= 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        for (k, v) in [
            ("init_std", self.init_std),
            ("head_init_std", self.head_init_std),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{k} must be > 0")));
            }
        }
        Ok(())
    }

    /// Optimization settings before head surgery.
    pub fn phase1(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            beta: self.beta,
            sign_mode: self.sign_mode,
            lr: self.lr,
            epochs: self.epochs_phase1,
            batch_size: self.batch,
            seed: self.seed,
            unknown_label: None,
        }
    }

    /// Fine-tuning after surgery: plain cross-entropy, no merged label.
    pub fn phase2(&self) -> TrainConfig {
        TrainConfig {
            lambda: 0.0,
            epochs: self.epochs_phase2,
            unknown_label: None,
            ..self.phase1()
        }
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            categories: ShapeCategory::ALL.to_vec(),
            shapes_per_category: self.shapes_per_category,
            n_points: self.n_points,
            train_fraction: self.train_fraction,
            seed: self.data_seed,
        }
    }

    /// Part labels merged into the unknown cluster.
    pub fn unknown_labels(&self) -> BTreeSet<usize> {
        self.unknown_classes
            .iter()
            .flat_map(|c| c.part_labels())
            .collect()
    }
}
