//! PointNet-style encoder with per-point segmentation and per-cloud
//! classification heads.
//!
//! A shared MLP (linear + relu per layer) maps every point to a feature
//! vector; the global feature is the elementwise max over points. The
//! segmentation head sees `[per_point ‖ global]` for each point, the
//! classification head only the global feature.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// Standard deviation of the Gaussian weight initialization.
pub const DEFAULT_INIT_STD: f64 = 0.1;

/// Layer widths of the shared per-point MLP, input first.
pub const DEFAULT_MLP_DIMS: [usize; 3] = [3, 32, 64];

const CHECKPOINT_MAGIC: &str = "#3cm-params v1";

/// A linear layer `x · weight + bias` with `weight` of shape `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn gaussian(inputs: usize, outputs: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Dense {
            weight: gaussian_matrix(inputs, outputs, std, rng)?,
            bias: Matrix::zeros(1, outputs),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }

    /// Drops column `remove` and appends `add` fresh columns.
    fn replace_column(
        &self,
        remove: usize,
        add: usize,
        std: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let keep: Vec<usize> = (0..self.outputs()).filter(|&c| c != remove).collect();
        let fresh = gaussian_matrix(self.inputs(), add, std, rng)?;
        Ok(Dense {
            weight: self.weight.select_cols(&keep).hstack(&fresh)?,
            bias: self
                .bias
                .select_cols(&keep)
                .hstack(&Matrix::zeros(1, add))?,
        })
    }
}

fn gaussian_matrix(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Result<Matrix> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::invalid(format!(
            "initialization std must be >= 0, got {std}"
        )));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(rng)).collect(),
    )
}

/// Encoder and head weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub mlp: Vec<Dense>,
    pub seg_head: Dense,
    pub cls_head: Dense,
}

impl ModelParams {
    /// Seeded Gaussian weights with zero biases. `mlp_dims` lists the layer
    /// widths starting with the input dimension, e.g. `[3, 32, 64]`.
    pub fn init(mlp_dims: &[usize], classes: usize, std: f64, rng: &mut impl Rng) -> Result<Self> {
        if mlp_dims.len() < 2 || mlp_dims.contains(&0) {
            return Err(Error::invalid(format!("invalid MLP dims {mlp_dims:?}")));
        }
        if classes < 2 {
            return Err(Error::invalid("a head needs at least two classes"));
        }
        let mlp = mlp_dims
            .windows(2)
            .map(|w| Dense::gaussian(w[0], w[1], std, rng))
            .collect::<Result<Vec<_>>>()?;
        let feat = *mlp_dims.last().unwrap();
        let params = ModelParams {
            mlp,
            seg_head: Dense::gaussian(2 * feat, classes, std, rng)?,
            cls_head: Dense::gaussian(feat, classes, std, rng)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .mlp
            .first()
            .ok_or_else(|| Error::invalid("empty MLP"))?;
        if first.inputs() != 3 {
            return Err(Error::invalid(
                "the first MLP layer must take 3 coordinates",
            ));
        }
        for (i, pair) in self.mlp.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::invalid(format!(
                    "MLP layers {i} and {} do not chain",
                    i + 1
                )));
            }
        }
        let feat = self.feature_dim();
        let mut dense: Vec<&Dense> = self.mlp.iter().collect();
        dense.push(&self.seg_head);
        dense.push(&self.cls_head);
        if dense.iter().any(|d| d.bias.shape() != (1, d.outputs())) {
            return Err(Error::invalid("bias shape does not match layer width"));
        }
        if self.seg_head.inputs() != 2 * feat || self.cls_head.inputs() != feat {
            return Err(Error::invalid("head input widths do not match the encoder"));
        }
        if self.seg_head.outputs() != self.cls_head.outputs() {
            return Err(Error::invalid("heads disagree on the class count"));
        }
        if dense
            .iter()
            .any(|d| !d.weight.is_finite() || !d.bias.is_finite())
        {
            return Err(Error::invalid("non-finite parameter"));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.mlp.last().map_or(0, Dense::outputs)
    }

    pub fn num_classes(&self) -> usize {
        self.seg_head.outputs()
    }

    /// Layer widths starting with the input dimension.
    pub fn mlp_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.mlp[0].inputs()];
        dims.extend(self.mlp.iter().map(Dense::outputs));
        dims
    }

    fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for d in self.mlp.iter().chain([&self.seg_head, &self.cls_head]) {
            out.push(&d.weight);
            out.push(&d.bias);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for d in self
            .mlp
            .iter_mut()
            .chain([&mut self.seg_head, &mut self.cls_head])
        {
            out.push(&mut d.weight);
            out.push(&mut d.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    /// All parameters in binding order.
    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    /// Same architecture as `self` with values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for m in out.tensors_mut() {
            let n = m.len();
            m.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// Records every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, true)
    }

    /// Records every tensor as a constant, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape) -> BoundParams {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, grad: bool) -> BoundParams {
        let mut put = |d: &Dense| {
            let (w, b) = (d.weight.clone(), d.bias.clone());
            if grad {
                (tape.leaf(w), tape.leaf(b))
            } else {
                (tape.constant(w), tape.constant(b))
            }
        };
        BoundParams {
            mlp: self.mlp.iter().map(&mut put).collect(),
            seg: put(&self.seg_head),
            cls: put(&self.cls_head),
        }
    }

    /// Plain SGD: `θ ← θ − lr · ∇θ` using gradients from the last backward.
    pub fn sgd_step(&mut self, tape: &Tape, bound: &BoundParams, lr: f64) {
        for (m, v) in self.tensors_mut().into_iter().zip(bound.leaves()) {
            for (p, g) in m.as_mut_slice().iter_mut().zip(tape.grad(v)) {
                *p -= lr * g;
            }
        }
    }

    /// Text checkpoint: magic line, `dims` line, `classes` line, then one
    /// `tensor <rows> <cols>` header per tensor followed by its rows. Values
    /// use the shortest representation that parses back to the same bits.
    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{CHECKPOINT_MAGIC}").unwrap();
        let dims: Vec<String> = self.mlp_dims().iter().map(usize::to_string).collect();
        writeln!(s, "dims {}", dims.join(" ")).unwrap();
        writeln!(s, "classes {}", self.num_classes()).unwrap();
        for m in self.tensors() {
            writeln!(s, "tensor {} {}", m.rows(), m.cols()).unwrap();
            for row in m.iter_rows() {
                let vals: Vec<String> = row.iter().map(f64::to_string).collect();
                writeln!(s, "{}", vals.join(" ")).unwrap();
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, origin: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| perr(0, format!("unexpected end of file, expected {what}")))
        };

        let (n, magic) = next("header")?;
        if magic.trim() != CHECKPOINT_MAGIC {
            return Err(perr(n, format!("expected `{CHECKPOINT_MAGIC}`")));
        }
        let (n, dims_line) = next("dims")?;
        let dims = keyed_numbers(dims_line, "dims").map_err(|m| perr(n, m))?;
        let (n, cls_line) = next("classes")?;
        let classes = keyed_numbers(cls_line, "classes").map_err(|m| perr(n, m))?;
        let [classes] = classes[..] else {
            return Err(perr(n, "expected a single class count".into()));
        };

        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut params =
            ModelParams::init(&dims, classes, 0.0, &mut rng).map_err(|e| perr(n, e.to_string()))?;
        for m in params.tensors_mut() {
            let (n, header) = next("tensor header")?;
            let shape = keyed_numbers(header, "tensor").map_err(|msg| perr(n, msg))?;
            if shape != [m.rows(), m.cols()] {
                return Err(perr(
                    n,
                    format!(
                        "tensor shape {shape:?} does not match architecture {:?}",
                        m.shape()
                    ),
                ));
            }
            for r in 0..m.rows() {
                let (n, row) = next("tensor row")?;
                let vals = row
                    .split_whitespace()
                    .map(str::parse::<f64>)
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| perr(n, format!("bad number: {e}")))?;
                if vals.len() != m.cols() {
                    return Err(perr(
                        n,
                        format!("expected {} values, got {}", m.cols(), vals.len()),
                    ));
                }
                m.row_mut(r).copy_from_slice(&vals);
            }
        }
        params.validate()?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_str(&text, &path.display().to_string())
    }
}

fn keyed_numbers(line: &str, key: &str) -> std::result::Result<Vec<usize>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(format!("expected a `{key}` line"));
    }
    parts
        .map(|p| {
            p.parse::<usize>()
                .map_err(|e| format!("bad integer `{p}`: {e}"))
        })
        .collect()
}

/// Parameter tensors recorded on a tape, as `(weight, bias)` pairs.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub mlp: Vec<(Var, Var)>,
    pub seg: (Var, Var),
    pub cls: (Var, Var),
}

impl BoundParams {
    /// Leaves in the same order as [`ModelParams::to_flat`].
    pub fn leaves(&self) -> Vec<Var> {
        self.mlp
            .iter()
            .chain([&self.seg, &self.cls])
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

fn dense(tape: &mut Tape, x: Var, (w, b): (Var, Var), ones: Var) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let bias = tape.matmul(ones, b)?;
    tape.add(xw, bias)
}

fn check_cloud(tape: &Tape, cloud: Var) -> Result<usize> {
    let (n, d) = tape.shape(cloud);
    if d != 3 {
        return Err(Error::invalid(format!(
            "clouds have 3 coordinates per point, got {d}"
        )));
    }
    if !tape.value(cloud).is_finite() {
        return Err(Error::invalid("cloud has non-finite coordinates"));
    }
    Ok(n)
}

/// Forward pass on a tape; see [`ModelOutputs`].
pub fn forward(tape: &mut Tape, cloud: Var, params: &BoundParams) -> Result<ModelOutputs> {
    let n = check_cloud(tape, cloud)?;
    let ones = tape.constant(Matrix::filled(n, 1, 1.0));
    let mut h = cloud;
    for &layer in &params.mlp {
        let z = dense(tape, h, layer, ones)?;
        h = tape.relu(z);
    }
    let per_point = h;
    let global = tape.max_reduce(per_point, Axis::Rows);
    let tiled = tape.matmul(ones, global)?;
    let joined = tape.concat(&[per_point, tiled], Axis::Cols)?;
    let seg_logits = dense(tape, joined, params.seg, ones)?;
    let one = tape.constant(Matrix::scalar(1.0));
    let cls_logits = dense(tape, global, params.cls, one)?;
    Ok(ModelOutputs {
        per_point,
        global,
        seg_logits,
        cls_logits,
    })
}

/// Nodes produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct ModelOutputs {
    /// `N × F` per-point features.
    pub per_point: Var,
    /// `1 × F` max-pooled feature.
    pub global: Var,
    /// `N × C` segmentation logits.
    pub seg_logits: Var,
    /// `1 × C` classification logits.
    pub cls_logits: Var,
}

fn cloud_matrix(cloud: &[[f64; 3]]) -> Result<Matrix> {
    if cloud.is_empty() {
        return Err(Error::invalid("empty point cloud"));
    }
    Matrix::new(cloud.len(), 3, cloud.iter().flatten().copied().collect())
}

fn infer(cloud: &[[f64; 3]], params: &ModelParams) -> Result<(Tape, ModelOutputs)> {
    let mut tape = Tape::new();
    let x = tape.constant(cloud_matrix(cloud)?);
    let bound = params.bind_frozen(&mut tape);
    let out = forward(&mut tape, x, &bound)?;
    Ok((tape, out))
}

/// Per-point features (`N × F`) and the global feature (`1 × F`).
pub fn encode(cloud: &[[f64; 3]], params: &ModelParams) -> Result<(Matrix, Matrix)> {
    let (tape, out) = infer(cloud, params)?;
    Ok((
        tape.value(out.per_point).clone(),
        tape.value(out.global).clone(),
    ))
}

/// `N × C` segmentation logits.
pub fn segment_logits(cloud: &[[f64; 3]], params: &ModelParams) -> Result<Matrix> {
    let (tape, out) = infer(cloud, params)?;
    Ok(tape.value(out.seg_logits).clone())
}

/// `1 × C` classification logits.
pub fn classify_logits(cloud: &[[f64; 3]], params: &ModelParams) -> Result<Matrix> {
    let (tape, out) = infer(cloud, params)?;
    Ok(tape.value(out.cls_logits).clone())
}

/// Removes output column `remove_col` from both heads and appends `add_k`
/// Gaussian-initialized columns (std `init_scale`, zero bias). Retained
/// columns keep their exact values and order.
pub fn expand_head(
    params: &ModelParams,
    remove_col: usize,
    add_k: usize,
    init_scale: f64,
    rng: &mut impl Rng,
) -> Result<ModelParams> {
    if remove_col >= params.num_classes() {
        return Err(Error::invalid(format!(
            "column {remove_col} out of range for {} classes",
            params.num_classes()
        )));
    }
    if add_k == 0 {
        return Err(Error::invalid(
            "head expansion must add at least one column",
        ));
    }
    if params.num_classes() - 1 + add_k < 2 {
        return Err(Error::invalid(
            "expanded head would have fewer than two classes",
        ));
    }
    let out = ModelParams {
        mlp: params.mlp.clone(),
        seg_head: params
            .seg_head
            .replace_column(remove_col, add_k, init_scale, rng)?,
        cls_head: params
            .cls_head
            .replace_column(remove_col, add_k, init_scale, rng)?,
    };
    out.validate()?;
    Ok(out)
}
