use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{RunConfig, RunStatus, Runner};
use crate::error::{Error, Result};
use crate::metrics::stable_mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Beta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Beta => "beta",
        }
    }

    fn check(self, v: f64) -> Result<()> {
        let ok = match self {
            SweepParam::Lambda => v.is_finite() && v >= 0.0,
            SweepParam::Beta => (0.0..=1.0).contains(&v),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "{} grid value {v} out of range",
                self.name()
            )))
        }
    }

    fn apply(self, cfg: &mut RunConfig, v: f64) {
        match self {
            SweepParam::Lambda => cfg.lambda = v,
            SweepParam::Beta => cfg.beta = v,
        }
    }
}

/// One seed of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: RunStatus,
    pub seen_miou: Option<f64>,
    pub unseen_miou: Option<f64>,
}

/// One grid cell. Means run over seeds that did not diverge and are `None`
/// when every seed diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub seen_miou: Option<f64>,
    pub unseen_miou: Option<f64>,
    pub completed: usize,
    pub degraded: usize,
    pub diverged: usize,
    pub seeds: Vec<SeedResult>,
}

impl SweepRow {
    /// `ok`, or the nonzero counts of degraded and diverged seeds.
    pub fn status(&self) -> String {
        let mut parts = Vec::new();
        if self.degraded > 0 {
            parts.push(format!("degraded={}", self.degraded));
        }
        if self.diverged > 0 {
            parts.push(format!("diverged={}", self.diverged));
        }
        if parts.is_empty() {
            "ok".into()
        } else {
            parts.join(";")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub parameter: SweepParam,
    /// Sorted by `value`.
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, value: f64) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }

    /// `<param>,seen_miou,unseen_miou,completed,degraded,diverged,status`;
    /// missing means print as `NA`.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "{},seen_miou,unseen_miou,completed,degraded,diverged,status\n",
            self.parameter.name()
        );
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"));
        for r in &self.rows {
            writeln!(
                s,
                "{:?},{},{},{},{},{},{}",
                r.value,
                fmt(r.seen_miou),
                fmt(r.unseen_miou),
                r.completed,
                r.degraded,
                r.diverged,
                r.status()
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// One open-set run per (grid value, seed). Divergent cells are recorded,
/// never fatal.
pub fn sweep(
    runner: &mut Runner,
    parameter: SweepParam,
    grid: &[f64],
    base: &RunConfig,
    seeds: &[u64],
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    for &v in grid {
        parameter.check(v)?;
    }
    let mut values = grid.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut rows = Vec::with_capacity(values.len());
    for value in values {
        let mut results = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = base.clone();
            parameter.apply(&mut cfg, value);
            cfg.seed = seed;
            let rec = runner.run(&cfg)?;
            let (seen, unseen) = rec.headline();
            results.push(SeedResult {
                seed,
                status: rec.status.clone(),
                seen_miou: seen,
                unseen_miou: unseen,
            });
        }
        let alive: Vec<&SeedResult> = results.iter().filter(|r| !r.status.is_diverged()).collect();
        let mean_of = |f: fn(&SeedResult) -> Option<f64>| {
            let v: Vec<f64> = alive.iter().filter_map(|r| f(r)).collect();
            stable_mean(&v)
        };
        let count = |label: &str| results.iter().filter(|r| r.status.label() == label).count();
        rows.push(SweepRow {
            value,
            seen_miou: mean_of(|r| r.seen_miou),
            unseen_miou: mean_of(|r| r.unseen_miou),
            completed: count("completed"),
            degraded: count("degraded"),
            diverged: count("diverged"),
            seeds: results,
        });
    }
    Ok(SweepTable { parameter, rows })
}

pub fn sweep_lambda(
    runner: &mut Runner,
    grid: &[f64],
    base: &RunConfig,
    seeds: &[u64],
) -> Result<SweepTable> {
    sweep(runner, SweepParam::Lambda, grid, base, seeds)
}

pub fn sweep_beta(
    runner: &mut Runner,
    grid: &[f64],
    base: &RunConfig,
    seeds: &[u64],
) -> Result<SweepTable> {
    sweep(runner, SweepParam::Beta, grid, base, seeds)
}
