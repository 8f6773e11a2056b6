//! Two-phase open-set protocol, ablation sweeps and curve export.
//!
//! A run trains the network on known classes plus one merged unknown
//! cluster, swaps the unknown output column for one column per merged
//! source label, fine-tunes with those labels revealed, and evaluates part
//! mIoU on the held-out shapes against original labels.

mod config;
mod sweep;
mod train;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{RunConfig, SEED_ENV};
pub use sweep::{sweep, sweep_beta, sweep_lambda, SeedResult, SweepParam, SweepRow, SweepTable};
pub use train::{
    predict_columns, train_phase, Divergence, EpochRecord, Phase, PhaseLog, QSnapshot, StepRecord,
    DIVERGENCE_THRESHOLD,
};

use crate::data::{
    build_openset_split, generate_corpus, read_corpus, LabeledCloud, OpenSetDataset,
};
use crate::error::{Error, Result};
use crate::loss::EmaAggregate;
use crate::metrics::IoUReport;
use crate::model::{expand_head, segment_logits, ModelParams, DEFAULT_MLP_DIMS};

/// Predicted label for points assigned to the merged unknown column before
/// surgery. It matches no original part label.
pub const UNASSIGNED: usize = usize::MAX;

/// Outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Finished, but the training curves fail the convergence check.
    Degraded {
        reason: String,
    },
    /// Stopped early on a non-finite or exploding loss.
    Diverged {
        phase: Phase,
        step: usize,
        total: f64,
    },
}

impl RunStatus {
    pub fn label(&self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Degraded { .. } => "degraded",
            RunStatus::Diverged { .. } => "diverged",
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, RunStatus::Diverged { .. })
    }
}

/// Everything a run produced. Two runs of the same config agree on every
/// field except `wall_clock_secs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub seed: u64,
    pub status: RunStatus,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub q_hat_trajectory: Vec<QSnapshot>,
    /// Original label of each output column after surgery.
    pub column_manifest: Vec<usize>,
    pub pre_surgery: Option<IoUReport>,
    pub post_surgery: Option<IoUReport>,
    /// Largest change in any retained-class test logit across the surgery.
    pub surgery_retained_max_abs_diff: Option<f64>,
    pub wall_clock_secs: f64,
}

impl RunRecord {
    pub fn phase_steps(&self, phase: Phase) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.phase == phase)
    }

    /// Post-surgery (known, unknown) category-mean mIoU.
    pub fn headline(&self) -> (Option<f64>, Option<f64>) {
        self.post_surgery.as_ref().map_or((None, None), |r| {
            (r.summary.known_miou, r.summary.unknown_miou)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes")
    }

    /// Serialization with the wall-clock field zeroed, for byte comparison.
    pub fn to_json_canonical(&self) -> String {
        RunRecord {
            wall_clock_secs: 0.0,
            ..self.clone()
        }
        .to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generated or loaded corpus, split into known classes and the unknown
/// cluster.
pub fn prepare_dataset(cfg: &RunConfig) -> Result<OpenSetDataset> {
    cfg.validate()?;
    let corpus = match &cfg.data_dir {
        Some(dir) => read_corpus(dir.join("manifest.txt"))?,
        None => generate_corpus(&cfg.corpus())?,
    };
    build_openset_split(&corpus, &cfg.unknown_labels())
}

/// Relabels the original corpus into post-surgery column space.
fn finetune_clouds(ds: &OpenSetDataset, clouds: &[LabeledCloud]) -> Vec<LabeledCloud> {
    let cols = ds.expanded_label_map();
    clouds
        .iter()
        .map(|c| LabeledCloud {
            part_labels: c.part_labels.iter().map(|l| cols[l]).collect(),
            ..c.clone()
        })
        .collect()
}

/// Scores `params` on the test split. The head width decides the column
/// mapping: `known + 1` columns are read as pre-surgery outputs, one column
/// per original label as post-surgery outputs.
pub fn evaluate(params: &ModelParams, ds: &OpenSetDataset) -> Result<IoUReport> {
    let classes = params.num_classes();
    let columns: Vec<usize> = if classes == ds.num_train_classes() {
        let mut m = ds.known_inverse();
        m.push(UNASSIGNED);
        m
    } else if classes == ds.column_manifest().len() {
        ds.column_manifest()
    } else {
        return Err(Error::invalid(format!(
            "model has {classes} outputs; expected {} (before surgery) or {} (after)",
            ds.num_train_classes(),
            ds.column_manifest().len()
        )));
    };
    let mut preds = Vec::with_capacity(ds.source.test.len());
    for c in &ds.source.test {
        preds.push(
            predict_columns(params, &c.points)?
                .into_iter()
                .map(|k| columns[k])
                .collect(),
        );
    }
    let gts: Vec<(usize, &[usize])> = ds
        .source
        .test
        .iter()
        .map(|c| (c.category, c.part_labels.as_slice()))
        .collect();
    IoUReport::evaluate(&preds, &gts, &ds.unknown_categories())
}

/// Variances of the first and last tenth of a series.
pub fn decile_variances(series: &[f64]) -> Option<(f64, f64)> {
    let k = series.len() / 10;
    if k < 2 {
        return None;
    }
    let var = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / s.len() as f64
    };
    Some((var(&series[..k]), var(&series[series.len() - k..])))
}

/// Convergence check on the initial phase. A run is degraded when its
/// regularizer series is no calmer at the end than at the start, or when
/// cross-entropy did not go down.
pub fn assess_convergence(steps: &[StepRecord], regularized: bool) -> Option<String> {
    let ce: Vec<f64> = steps.iter().map(|s| s.ce).collect();
    let k = ce.len() / 10;
    if k >= 1 {
        let head = ce[..k].iter().sum::<f64>() / k as f64;
        let tail = ce[ce.len() - k..].iter().sum::<f64>() / k as f64;
        if tail >= head {
            return Some(format!(
                "cross-entropy did not decrease ({head:.4} -> {tail:.4})"
            ));
        }
    }
    if regularized {
        let l: Vec<f64> = steps.iter().map(|s| s.l3cm).collect();
        if let Some((first, last)) = decile_variances(&l) {
            if last >= first {
                return Some(format!(
                    "regularizer did not settle (first-decile variance {first:.3e}, last {last:.3e})"
                ));
            }
        }
    }
    None
}

/// Trains before surgery only. Returns the dataset, parameters and log.
pub fn train_initial(cfg: &RunConfig) -> Result<(OpenSetDataset, ModelParams, PhaseLog)> {
    let ds = prepare_dataset(cfg)?;
    let mut init_rng = rng_stream(cfg.seed, 1);
    let mut train_rng = rng_stream(cfg.seed, 2);
    let mut params = ModelParams::init(
        &DEFAULT_MLP_DIMS,
        ds.num_train_classes(),
        cfg.init_std,
        &mut init_rng,
    )?;
    let mut phase1 = cfg.phase1();
    phase1.unknown_label = Some(ds.unknown_label);
    let mut agg = EmaAggregate::uniform(ds.num_train_classes(), cfg.beta)?;
    let log = train_phase(
        &mut params,
        &ds.train,
        &phase1,
        &mut agg,
        Phase::Initial,
        cfg.augment,
        &mut train_rng,
    )?;
    Ok((ds, params, log))
}

/// Full protocol: initial training, head surgery, fine-tuning, evaluation.
/// Divergence ends the run early with a structured status.
pub fn run_openset(cfg: &RunConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let (ds, mut params, log1) = train_initial(cfg)?;
    let mut record = RunRecord {
        config: cfg.clone(),
        seed: cfg.seed,
        status: RunStatus::Completed,
        steps: log1.steps,
        epochs: log1.epochs,
        q_hat_trajectory: log1.q_hat,
        column_manifest: ds.column_manifest(),
        pre_surgery: None,
        post_surgery: None,
        surgery_retained_max_abs_diff: None,
        wall_clock_secs: 0.0,
    };
    let finish = |mut r: RunRecord| {
        r.wall_clock_secs = start.elapsed().as_secs_f64();
        r
    };
    if let Some(d) = log1.diverged {
        record.status = RunStatus::Diverged {
            phase: d.phase,
            step: d.step,
            total: d.total,
        };
        return Ok(finish(record));
    }
    record.pre_surgery = Some(evaluate(&params, &ds)?);

    let mut surgery_rng = rng_stream(cfg.seed, 3);
    let expanded = expand_head(
        &params,
        ds.unknown_label,
        ds.unknown_source_classes.len(),
        cfg.head_init_std,
        &mut surgery_rng,
    )?;
    let probe = &ds.test[0].points;
    let (before, after) = (
        segment_logits(probe, &params)?,
        segment_logits(probe, &expanded)?,
    );
    let mut diff = 0.0f64;
    for (b, a) in before.iter_rows().zip(after.iter_rows()) {
        for k in 0..ds.unknown_label {
            diff = diff.max((b[k] - a[k]).abs());
        }
    }
    record.surgery_retained_max_abs_diff = Some(diff);
    params = expanded;

    let phase2 = cfg.phase2();
    let mut agg = EmaAggregate::uniform(params.num_classes(), cfg.beta)?;
    let mut train_rng = rng_stream(cfg.seed, 4);
    let log2 = train_phase(
        &mut params,
        &finetune_clouds(&ds, &ds.source.train),
        &phase2,
        &mut agg,
        Phase::Finetune,
        cfg.augment,
        &mut train_rng,
    )?;
    record.steps.extend(log2.steps);
    record.epochs.extend(log2.epochs);
    if let Some(d) = log2.diverged {
        record.status = RunStatus::Diverged {
            phase: d.phase,
            step: d.step,
            total: d.total,
        };
        return Ok(finish(record));
    }
    record.post_surgery = Some(evaluate(&params, &ds)?);
    let initial: Vec<StepRecord> = record.phase_steps(Phase::Initial).cloned().collect();
    if let Some(reason) = assess_convergence(&initial, cfg.lambda > 0.0) {
        record.status = RunStatus::Degraded { reason };
    }
    Ok(finish(record))
}

type Progress = Box<dyn FnMut(&RunConfig, &RunRecord)>;

/// Memoizes runs by their serialized config, so experiments that share a
/// cell (say λ = 0.5 with β = 0.995) train it once.
#[derive(Default)]
pub struct Runner {
    cache: BTreeMap<String, Arc<RunRecord>>,
    progress: Option<Progress>,
}

impl Runner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Calls `f` after every freshly computed run.
    pub fn with_progress(mut self, f: impl FnMut(&RunConfig, &RunRecord) + 'static) -> Self {
        self.progress = Some(Box::new(f));
        self
    }

    pub fn run(&mut self, cfg: &RunConfig) -> Result<Arc<RunRecord>> {
        let key = cfg.to_kv_string();
        if let Some(r) = self.cache.get(&key) {
            return Ok(Arc::clone(r));
        }
        let record = Arc::new(run_openset(cfg)?);
        if let Some(f) = self.progress.as_mut() {
            f(cfg, &record);
        }
        self.cache.insert(key, Arc::clone(&record));
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}

/// Initial-phase loss curve as CSV: `step,ce,l3cm,total`.
pub fn curves_csv(record: &RunRecord) -> String {
    let mut s = String::from("step,ce,l3cm,total\n");
    for (i, st) in record.phase_steps(Phase::Initial).enumerate() {
        writeln!(s, "{i},{:?},{:?},{:?}", st.ce, st.l3cm, st.total).unwrap();
    }
    s
}

pub fn export_curves(record: &RunRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, curves_csv(record)).map_err(|e| Error::io(path, e))
}

/// One row of an exported curve file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub ce: f64,
    pub l3cm: f64,
    pub total: f64,
}

pub fn parse_curves(text: &str, origin: &str) -> Result<Vec<CurvePoint>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: origin.to_string(),
        line,
        message,
    };
    let mut lines = text.lines();
    if lines.next() != Some("step,ce,l3cm,total") {
        return Err(perr(1, "expected header `step,ce,l3cm,total`".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(perr(i + 2, format!("expected 4 fields, got {}", f.len())));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| perr(i + 2, format!("`{s}`: {e}")))
            };
            Ok(CurvePoint {
                step: f[0]
                    .parse()
                    .map_err(|e| perr(i + 2, format!("step: {e}")))?,
                ce: num(f[1])?,
                l3cm: num(f[2])?,
                total: num(f[3])?,
            })
        })
        .collect()
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_curves(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests;
