use rand_distr::{Distribution, Normal};

use super::Matrix;
use crate::error::{Error, Result};
use crate::rng;

/// Layer sizes `[d, h_1, ..., h_L, c]` of a ReLU network with an affine
/// output layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    layer_sizes: Vec<usize>,
}

impl MlpSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidSpec(format!("layer {pos} has size 0")));
        }
        Ok(Self { layer_sizes })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.fan_out * (l.fan_in + 1)).sum()
    }

    /// Same input/output sizes with every hidden layer set to `width`.
    pub fn with_hidden_width(&self, width: usize) -> Result<Self> {
        let n = self.layer_sizes.len();
        let sizes = self
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(i, &s)| if i == 0 || i == n - 1 { s } else { width })
            .collect();
        Self::new(sizes)
    }

    pub(crate) fn layers(&self) -> impl Iterator<Item = LayerSlot> + '_ {
        let mut offset = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let slot = LayerSlot {
                fan_in: w[0],
                fan_out: w[1],
                weights: offset,
                biases: offset + w[0] * w[1],
            };
            offset = slot.biases + w[1];
            slot
        })
    }
}

/// Where one layer's parameters live inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerSlot {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: usize,
    pub biases: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: MlpSpec,
    theta: Vec<f64>,
}

impl Model {
    pub fn new(spec: MlpSpec, theta: Vec<f64>) -> Result<Self> {
        check_len("theta", spec.param_count(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("theta must be finite".into()));
        }
        Ok(Self { spec, theta })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub(crate) fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Parameters shifted by `delta`, as a new vector.
    pub fn shifted_theta(&self, delta: &[f64]) -> Result<Vec<f64>> {
        check_len("update", self.theta.len(), delta.len())?;
        Ok(self.theta.iter().zip(delta).map(|(t, d)| t + d).collect())
    }
}

/// A minibatch: inputs `x` (m × d) and target distributions `t` (m × c).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub x: Matrix,
    pub t: Matrix,
}

impl Batch {
    /// Builds a batch whose targets are one-hot rows.
    pub fn new(x: Matrix, t: Matrix) -> Result<Self> {
        check_len("batch rows", x.rows(), t.rows())?;
        for row in t.iter_rows() {
            if !is_one_hot(row) {
                return Err(Error::NotOneHot);
            }
        }
        Ok(Self { x, t })
    }

    /// Builds a batch with arbitrary probability-vector targets. Training in
    /// this crate always uses one-hot labels; soft targets exist for
    /// gradient checks.
    pub fn soft(x: Matrix, t: Matrix) -> Result<Self> {
        check_len("batch rows", x.rows(), t.rows())?;
        for row in t.iter_rows() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| v < 0.0) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument("soft target rows must lie on the simplex".into()));
            }
        }
        Ok(Self { x, t })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

pub(crate) fn is_one_hot(row: &[f64]) -> bool {
    row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().filter(|&&v| v == 1.0).count() == 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub values: Vec<f64>,
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, got })
    }
}

/// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
pub fn init_model(spec: &MlpSpec, seed: u64) -> Model {
    let mut rng = rng::seeded(seed);
    let mut theta = vec![0.0; spec.param_count()];
    for slot in spec.layers() {
        let std = (2.0 / slot.fan_in as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut theta[slot.weights..slot.biases] {
            *w = normal.sample(&mut rng);
        }
    }
    Model { spec: spec.clone(), theta }
}

pub fn forward_logits(model: &Model, x: &Matrix) -> Result<Matrix> {
    forward_logits_with(&model.spec, &model.theta, x)
}

/// Forward pass with an explicit parameter vector laid out for `spec`.
pub fn forward_logits_with(spec: &MlpSpec, theta: &[f64], x: &Matrix) -> Result<Matrix> {
    check_len("theta", spec.param_count(), theta.len())?;
    check_len("input columns", spec.input_dim(), x.cols())?;
    Ok(forward_all(spec, theta, x).pop().unwrap())
}

/// Returns the pre-activation of every layer (the last one is the logits).
fn forward_all(spec: &MlpSpec, theta: &[f64], x: &Matrix) -> Vec<Matrix> {
    let n_layers = spec.layer_sizes.len() - 1;
    let mut pre: Vec<Matrix> = Vec::with_capacity(n_layers);
    for (l, slot) in spec.layers().enumerate() {
        let w = &theta[slot.weights..slot.biases];
        let b = &theta[slot.biases..slot.biases + slot.fan_out];
        let mut z = Matrix::zeros(x.rows(), slot.fan_out);
        for r in 0..x.rows() {
            let input: &[f64] = if l == 0 { x.row(r) } else { pre[l - 1].row(r) };
            let out = z.row_mut(r);
            for (o, out_v) in out.iter_mut().enumerate() {
                let w_row = &w[o * slot.fan_in..(o + 1) * slot.fan_in];
                let mut acc = b[o];
                for (wi, &a) in w_row.iter().zip(input) {
                    // hidden inputs go through the rectifier
                    let a = if l == 0 { a } else { a.max(0.0) };
                    acc += wi * a;
                }
                *out_v = acc;
            }
        }
        pre.push(z);
    }
    pre
}

/// Vector-Jacobian product: `Σ_r seeds[r] · ∂logits[r]/∂θ` over the rows of `x`.
pub fn vjp_logits(spec: &MlpSpec, theta: &[f64], x: &Matrix, seeds: &Matrix) -> Result<Vec<f64>> {
    check_len("theta", spec.param_count(), theta.len())?;
    check_len("input columns", spec.input_dim(), x.cols())?;
    check_len("seed rows", x.rows(), seeds.rows())?;
    check_len("seed columns", spec.class_count(), seeds.cols())?;

    let pre = forward_all(spec, theta, x);
    let slots: Vec<LayerSlot> = spec.layers().collect();
    let mut grad = vec![0.0; theta.len()];
    let mut delta = seeds.clone();

    for l in (0..slots.len()).rev() {
        let slot = slots[l];
        let (gw, gb) = grad[slot.weights..slot.biases + slot.fan_out].split_at_mut(slot.fan_in * slot.fan_out);
        for r in 0..x.rows() {
            let d = delta.row(r);
            let input: &[f64] = if l == 0 { x.row(r) } else { pre[l - 1].row(r) };
            for (o, &dv) in d.iter().enumerate() {
                gb[o] += dv;
                let g_row = &mut gw[o * slot.fan_in..(o + 1) * slot.fan_in];
                for (g, &a) in g_row.iter_mut().zip(input) {
                    let a = if l == 0 { a } else { a.max(0.0) };
                    *g += dv * a;
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = &theta[slot.weights..slot.biases];
        let mut prev = Matrix::zeros(x.rows(), slot.fan_in);
        for r in 0..x.rows() {
            let d = delta.row(r);
            let z_prev = pre[l - 1].row(r);
            let out = prev.row_mut(r);
            for (o, &dv) in d.iter().enumerate() {
                let w_row = &w[o * slot.fan_in..(o + 1) * slot.fan_in];
                for (p, &wi) in out.iter_mut().zip(w_row) {
                    *p += wi * dv;
                }
            }
            for (p, &z) in out.iter_mut().zip(z_prev) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
        }
        delta = prev;
    }
    Ok(grad)
}

/// Numerically stable softmax of one row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax(logits: &Matrix) -> Matrix {
    let data = logits.iter_rows().flat_map(softmax_row).collect();
    Matrix::from_vec(logits.rows(), logits.cols(), data).expect("softmax preserves shape")
}

fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

fn check_batch(model: &Model, batch: &Batch) -> Result<()> {
    check_len("batch input columns", model.spec.input_dim(), batch.x.cols())?;
    check_len("batch target columns", model.spec.class_count(), batch.t.cols())?;
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    Ok(())
}

/// Mean softmax cross-entropy `-(1/m) Σ_r Σ_k t_rk log p_rk` over the batch.
pub fn mean_ce_loss(model: &Model, batch: &Batch) -> Result<f64> {
    check_batch(model, batch)?;
    let logits = forward_logits(model, &batch.x)?;
    let mut total = 0.0;
    for (z, t) in logits.iter_rows().zip(batch.t.iter_rows()) {
        let lp = log_softmax_row(z);
        total -= t
            .iter()
            .zip(&lp)
            .map(|(ti, li)| if *ti == 0.0 { 0.0 } else { ti * li })
            .sum::<f64>();
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of [`mean_ce_loss`] with respect to theta.
pub fn ce_grad(model: &Model, batch: &Batch) -> Result<Gradient> {
    check_batch(model, batch)?;
    let logits = forward_logits(model, &batch.x)?;
    let m = batch.len() as f64;
    let mut seeds = softmax(&logits);
    for r in 0..seeds.rows() {
        let t = batch.t.row(r);
        for (s, ti) in seeds.row_mut(r).iter_mut().zip(t) {
            *s = (*s - ti) / m;
        }
    }
    let values = vjp_logits(&model.spec, &model.theta, &batch.x, &seeds)?;
    Ok(Gradient { values })
}

/// Central-difference estimate of the CE gradient, one coordinate at a time.
pub fn finite_diff_grad(model: &Model, batch: &Batch, h: f64) -> Result<Gradient> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidArgument(format!("step h must be > 0, got {h}")));
    }
    check_batch(model, batch)?;
    let mut probe = model.clone();
    let mut values = Vec::with_capacity(model.param_count());
    for i in 0..model.param_count() {
        let orig = probe.theta[i];
        probe.theta[i] = orig + h;
        let up = mean_ce_loss(&probe, batch)?;
        probe.theta[i] = orig - h;
        let down = mean_ce_loss(&probe, batch)?;
        probe.theta[i] = orig;
        values.push((up - down) / (2.0 * h));
    }
    Ok(Gradient { values })
}
