//! Optimization variance (OV).
//!
//! For an input `x`, parameters `θ` and candidate updates `g_b` computed by
//! the optimizer from independent training batches,
//!
//! ```text
//! OV(x) = E_b ‖f(x; θ + g_b) − E_b f(x; θ + g_b)‖² / E_b ‖f(x; θ + g_b)‖²
//! ```
//!
//! where `f` are the logits. Only training data enters the computation. The
//! module also provides the gradient variance `V_g = E_b ‖g_b − E_b g_b‖²`
//! and the first-order estimate `E_b ‖Jᵀ g̃_b‖² / ‖f(x; θ)‖²` that links the
//! two through the logit Jacobian `J`.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::nn::{ce_grad, forward_logits, forward_logits_with, vjp_logits, Batch, Matrix, Model, OptimizerState, Update};
use crate::rng;

/// Mean squared logit norms below this make OV undefined.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-24;

/// Default parameter cap for [`logit_jacobian`].
pub const DEFAULT_JACOBIAN_CAP: usize = 20_000;

/// Shuffles the training rows once and cuts the prefix into `n_batches`
/// disjoint batches of `m` rows.
pub fn draw_ov_batches(x: &Matrix, t: &Matrix, m: usize, n_batches: usize, seed: u64) -> Result<Vec<Batch>> {
    if n_batches < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 OV batches, got {n_batches}")));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("OV batch size must be >= 1".into()));
    }
    let n = x.rows();
    let needed = m * n_batches;
    if needed > n {
        return Err(Error::InsufficientData { needed, available: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    idx[..needed]
        .chunks_exact(m)
        .map(|chunk| Batch::new(x.select_rows(chunk), t.select_rows(chunk)))
        .collect()
}

/// Hypothetical updates, one per batch, from the same frozen optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateUpdateSet {
    pub updates: Vec<Update>,
    pub source_batch_size: usize,
    pub optimizer_descriptor: String,
}

impl CandidateUpdateSet {
    pub fn len(&self) -> usize {
        self.updates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.updates.is_empty()
    }

    /// Every update multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> Self {
        let updates = self
            .updates
            .iter()
            .map(|u| Update {
                delta: u.delta.iter().map(|d| d * alpha).collect(),
            })
            .collect();
        Self {
            updates,
            source_batch_size: self.source_batch_size,
            optimizer_descriptor: format!("{} x{alpha}", self.optimizer_descriptor),
        }
    }
}

pub fn candidate_updates(model: &Model, opt: &OptimizerState, batches: &[Batch]) -> Result<CandidateUpdateSet> {
    if batches.is_empty() {
        return Err(Error::Empty("OV batch list"));
    }
    let updates = batches
        .iter()
        .map(|b| opt.preview_update(&ce_grad(model, b)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(CandidateUpdateSet {
        updates,
        source_batch_size: batches[0].len(),
        optimizer_descriptor: opt.to_string(),
    })
}

fn check_candidates(model: &Model, cand: &CandidateUpdateSet) -> Result<()> {
    if cand.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 candidate updates, got {}",
            cand.len()
        )));
    }
    for u in &cand.updates {
        if u.delta.len() != model.param_count() {
            return Err(Error::DimensionMismatch {
                context: "candidate update",
                expected: model.param_count(),
                got: u.delta.len(),
            });
        }
    }
    Ok(())
}

/// Logits of every candidate model on `xs`, one matrix per candidate.
fn candidate_logits(model: &Model, cand: &CandidateUpdateSet, xs: &Matrix) -> Result<Vec<Matrix>> {
    cand.updates
        .iter()
        .map(|u| forward_logits_with(model.spec(), &model.shifted_theta(&u.delta)?, xs))
        .collect()
}

/// `(E_b ‖l_b − l̄‖², E_b ‖l_b‖²)` for row `i` of every candidate's logits.
fn spread_terms(logits: &[Matrix], i: usize) -> (f64, f64) {
    let b = logits.len() as f64;
    let c = logits[0].cols();
    let mut mean = vec![0.0; c];
    for l in logits {
        for (m, v) in mean.iter_mut().zip(l.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b);
    let mut num = 0.0;
    let mut den = 0.0;
    for l in logits {
        for (v, m) in l.row(i).iter().zip(&mean) {
            num += (v - m) * (v - m);
            den += v * v;
        }
    }
    (num / b, den / b)
}

/// OV of one input from candidate logit vectors given directly. Exposed for
/// checking the ratio on hand-built logits.
pub fn ov_from_logits(logits: &[Vec<f64>]) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument("need at least 2 candidate logit vectors".into()));
    }
    let mats = logits
        .iter()
        .map(|l| Matrix::from_vec(1, l.len(), l.clone()))
        .collect::<Result<Vec<_>>>()?;
    let c = mats[0].cols();
    if let Some(bad) = mats.iter().find(|m| m.cols() != c) {
        return Err(Error::DimensionMismatch {
            context: "candidate logits",
            expected: c,
            got: bad.cols(),
        });
    }
    let (num, den) = spread_terms(&mats, 0);
    ratio(num, den)
}

fn ratio(num: f64, den: f64) -> Result<f64> {
    if den <= DEGENERATE_DENOMINATOR {
        Err(Error::DegenerateDenominator(den))
    } else {
        Ok(num / den)
    }
}

/// OV at a single input.
pub fn ov_point(model: &Model, cand: &CandidateUpdateSet, x: &[f64]) -> Result<f64> {
    check_candidates(model, cand)?;
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let logits = candidate_logits(model, cand, &xs)?;
    let (num, den) = spread_terms(&logits, 0);
    ratio(num, den)
}

/// `E_x[OV(x)]` over a sample set, with bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OvEstimate {
    /// Mean of the per-input ratios.
    pub value: f64,
    /// Mean numerator over the inputs that were kept.
    pub numerator_mean: f64,
    /// Mean denominator over the inputs that were kept.
    pub denominator_mean: f64,
    pub n_batches: usize,
    /// Inputs that contributed to `value`.
    pub n_samples: usize,
    /// Inputs dropped because their denominator was degenerate.
    pub n_excluded: usize,
    pub epoch: usize,
}

impl OvEstimate {
    pub fn at_epoch(mut self, epoch: usize) -> Self {
        self.epoch = epoch;
        self
    }
}

/// Sum in ascending order, so the result does not depend on input order.
fn canonical_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Mean of [`ov_point`] over the rows of `xs`. Rows with a degenerate
/// denominator are skipped and counted in `n_excluded`.
pub fn ov_mean(model: &Model, cand: &CandidateUpdateSet, xs: &Matrix) -> Result<OvEstimate> {
    check_candidates(model, cand)?;
    if xs.rows() == 0 {
        return Err(Error::Empty("OV sample set"));
    }
    let logits = candidate_logits(model, cand, xs)?;
    let mut ratios = Vec::with_capacity(xs.rows());
    let mut nums = Vec::with_capacity(xs.rows());
    let mut dens = Vec::with_capacity(xs.rows());
    for i in 0..xs.rows() {
        let (num, den) = spread_terms(&logits, i);
        if let Ok(r) = ratio(num, den) {
            ratios.push(r);
            nums.push(num);
            dens.push(den);
        }
    }
    let kept = ratios.len();
    if kept == 0 {
        return Err(Error::AllSamplesDegenerate(xs.rows()));
    }
    let k = kept as f64;
    Ok(OvEstimate {
        value: canonical_sum(ratios) / k,
        numerator_mean: canonical_sum(nums) / k,
        denominator_mean: canonical_sum(dens) / k,
        n_batches: cand.len(),
        n_samples: kept,
        n_excluded: xs.rows() - kept,
        epoch: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradVarEstimate {
    /// `E_b ‖g_b − E_b g_b‖²`
    pub v_g: f64,
    /// `E_b ‖g_b‖²`
    pub mean_update_norm_sq: f64,
    /// `‖E_b g_b‖²`
    pub norm_sq_of_mean_update: f64,
}

fn mean_update(cand: &CandidateUpdateSet) -> Vec<f64> {
    let p = cand.updates[0].delta.len();
    let b = cand.len() as f64;
    let mut mean = vec![0.0; p];
    for u in &cand.updates {
        for (m, d) in mean.iter_mut().zip(&u.delta) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b);
    mean
}

pub fn grad_variance(cand: &CandidateUpdateSet) -> Result<GradVarEstimate> {
    if cand.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 updates, got {}", cand.len())));
    }
    let p = cand.updates[0].delta.len();
    if let Some(u) = cand.updates.iter().find(|u| u.delta.len() != p) {
        return Err(Error::DimensionMismatch {
            context: "candidate update",
            expected: p,
            got: u.delta.len(),
        });
    }
    let b = cand.len() as f64;
    let mean = mean_update(cand);
    let mut v_g = 0.0;
    let mut norm_sq = 0.0;
    for u in &cand.updates {
        for (d, m) in u.delta.iter().zip(&mean) {
            v_g += (d - m) * (d - m);
            norm_sq += d * d;
        }
    }
    Ok(GradVarEstimate {
        v_g: v_g / b,
        mean_update_norm_sq: norm_sq / b,
        norm_sq_of_mean_update: mean.iter().map(|m| m * m).sum(),
    })
}

/// `|θ| × c` Jacobian of the logits at one input, stored by column.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    columns: Vec<Vec<f64>>,
}

impl Jacobian {
    /// `∇_θ f_j(x; θ)`.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, param: usize, logit: usize) -> f64 {
        self.columns[logit][param]
    }

    /// `Jᵀ v`: the first-order change of the logits under parameter step `v`.
    pub fn transpose_mul(&self, v: &[f64]) -> Vec<f64> {
        self.columns.iter().map(|col| col.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
    }
}

pub fn logit_jacobian(model: &Model, x: &[f64]) -> Result<Jacobian> {
    logit_jacobian_capped(model, x, DEFAULT_JACOBIAN_CAP)
}

/// One backward pass per logit, seeded with the corresponding basis vector.
pub fn logit_jacobian_capped(model: &Model, x: &[f64], cap: usize) -> Result<Jacobian> {
    if model.param_count() > cap {
        return Err(Error::CapExceeded {
            params: model.param_count(),
            cap,
        });
    }
    let xs = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let c = model.spec().class_count();
    let columns = (0..c)
        .map(|j| {
            let mut seed = Matrix::zeros(1, c);
            seed.row_mut(0)[j] = 1.0;
            vjp_logits(model.spec(), model.theta(), &xs, &seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Jacobian { columns })
}

/// First-order OV estimate `E_b ‖Jᵀ g̃_b‖² / ‖f(x; θ)‖²`, `g̃_b = g_b − E g`.
pub fn ov_first_order(model: &Model, cand: &CandidateUpdateSet, x: &[f64]) -> Result<f64> {
    check_candidates(model, cand)?;
    let jac = logit_jacobian(model, x)?;
    let logits = forward_logits(model, &Matrix::from_vec(1, x.len(), x.to_vec())?)?;
    let f_sq: f64 = logits.row(0).iter().map(|v| v * v).sum();
    let mean = mean_update(cand);
    let mut acc = 0.0;
    for u in &cand.updates {
        let centered: Vec<f64> = u.delta.iter().zip(&mean).map(|(d, m)| d - m).collect();
        acc += jac.transpose_mul(&centered).iter().map(|v| v * v).sum::<f64>();
    }
    ratio(acc / cand.len() as f64, f_sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_model, MlpSpec};

    fn cand(updates: Vec<Vec<f64>>) -> CandidateUpdateSet {
        CandidateUpdateSet {
            updates: updates.into_iter().map(|delta| Update { delta }).collect(),
            source_batch_size: 1,
            optimizer_descriptor: "test".into(),
        }
    }

    fn toy_data(n: usize, d: usize, c: usize) -> (Matrix, Matrix) {
        let x = Matrix::from_vec(n, d, (0..n * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let mut t = Matrix::zeros(n, c);
        for r in 0..n {
            t.row_mut(r)[r % c] = 1.0;
        }
        (x, t)
    }

    #[test]
    fn batches_are_disjoint_and_seeded() {
        let (x, t) = toy_data(1000, 1, 2);
        let batches = draw_ov_batches(&x, &t, 100, 10, 3).unwrap();
        assert_eq!(batches.len(), 10);
        // x values are distinct per row, so they identify the rows
        let mut seen: Vec<u64> = batches.iter().flat_map(|b| b.x.data().iter().map(|v| v.to_bits())).collect();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 1000);
        assert_eq!(batches, draw_ov_batches(&x, &t, 100, 10, 3).unwrap());
        assert_ne!(batches, draw_ov_batches(&x, &t, 100, 10, 4).unwrap());
    }

    #[test]
    fn batches_need_enough_rows() {
        let (x, t) = toy_data(128, 2, 2);
        assert!(matches!(
            draw_ov_batches(&x, &t, 128, 2, 0),
            Err(Error::InsufficientData {
                needed: 256,
                available: 128
            })
        ));
        assert!(draw_ov_batches(&x, &t, 8, 1, 0).is_err());
    }

    #[test]
    fn hand_examples() {
        assert!((ov_from_logits(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap() - 0.5).abs() < 1e-12);
        assert!((ov_from_logits(&[vec![3.0, 0.0], vec![1.0, 0.0]]).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(ov_from_logits(&[vec![2.0, -1.0], vec![2.0, -1.0]]).unwrap(), 0.0);
        assert!(matches!(
            ov_from_logits(&[vec![0.0, 0.0], vec![0.0, 0.0]]),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn candidate_updates_shape_and_lr_zero() {
        let spec = MlpSpec::new(vec![2, 4, 2]).unwrap();
        let model = init_model(&spec, 1);
        let (x, t) = toy_data(40, 2, 2);
        let batches = draw_ov_batches(&x, &t, 10, 4, 0).unwrap();
        let opt = OptimizerState::sgd(0.1, 0.0, model.param_count()).unwrap();
        let c = candidate_updates(&model, &opt, &batches).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.updates.iter().all(|u| u.delta.len() == model.param_count()));

        let same = candidate_updates(&model, &opt, &[batches[0].clone(), batches[0].clone()]).unwrap();
        assert_eq!(same.updates[0], same.updates[1]);
        assert_eq!(ov_point(&model, &same, x.row(0)).unwrap(), 0.0);

        let frozen = OptimizerState::sgd(0.0, 0.0, model.param_count()).unwrap();
        let z = candidate_updates(&model, &frozen, &batches).unwrap();
        assert!(z.updates.iter().all(|u| u.delta.iter().all(|&d| d == 0.0)));
    }

    #[test]
    fn grad_variance_cases() {
        let g = grad_variance(&cand(vec![vec![1.0, 0.0], vec![0.0, 1.0]])).unwrap();
        assert!((g.v_g - 0.5).abs() < 1e-15);
        assert!((g.v_g - (g.mean_update_norm_sq - g.norm_sq_of_mean_update)).abs() < 1e-12);
        assert_eq!(grad_variance(&cand(vec![vec![2.0, 3.0]; 3])).unwrap().v_g, 0.0);
        assert!(grad_variance(&cand(vec![vec![1.0]])).is_err());
    }

    #[test]
    fn jacobian_of_scalar_linear_model() {
        // [1,1]: f = w x + b, theta = (w, b)
        let model = Model::new(MlpSpec::new(vec![1, 1]).unwrap(), vec![0.7, -0.3]).unwrap();
        let j = logit_jacobian(&model, &[2.0]).unwrap();
        assert_eq!(j.column(0), &[2.0, 1.0]);
    }

    #[test]
    fn jacobian_zero_input_single_layer() {
        let spec = MlpSpec::new(vec![3, 2]).unwrap();
        let model = init_model(&spec, 5);
        let j = logit_jacobian(&model, &[0.0; 3]).unwrap();
        assert_eq!(j.rows(), 8);
        for logit in 0..2 {
            assert!(j.column(logit)[..6].iter().all(|&v| v == 0.0));
            for b in 0..2 {
                assert_eq!(j.get(6 + b, logit), if b == logit { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn jacobian_cap() {
        let spec = MlpSpec::new(vec![3, 4, 2]).unwrap();
        let model = init_model(&spec, 0);
        assert!(matches!(
            logit_jacobian_capped(&model, &[0.0; 3], 10),
            Err(Error::CapExceeded { params: 26, cap: 10 })
        ));
    }

    #[test]
    fn first_order_is_quadratic_in_update_scale() {
        let spec = MlpSpec::new(vec![2, 4, 2]).unwrap();
        let model = init_model(&spec, 2);
        let p = model.param_count();
        let c = cand(
            (0..3)
                .map(|b| (0..p).map(|i| ((i * 7 + b * 3) as f64).cos() * 0.01).collect())
                .collect(),
        );
        let x = [0.4, -1.2];
        let base = ov_first_order(&model, &c, &x).unwrap();
        let scaled = ov_first_order(&model, &c.scaled(3.0), &x).unwrap();
        assert!((scaled / base - 9.0).abs() < 1e-12);
        let same = cand(vec![c.updates[0].delta.clone(); 3]);
        // the centered updates are zero up to rounding of the mean
        assert!(ov_first_order(&model, &same, &x).unwrap() < 1e-30);
    }

    #[test]
    fn ov_mean_permutation_invariant() {
        let spec = MlpSpec::new(vec![2, 6, 3]).unwrap();
        let model = init_model(&spec, 8);
        let (x, t) = toy_data(60, 2, 3);
        let batches = draw_ov_batches(&x, &t, 10, 3, 1).unwrap();
        let opt = OptimizerState::sgd(0.05, 0.0, model.param_count()).unwrap();
        let c = candidate_updates(&model, &opt, &batches).unwrap();
        let est = ov_mean(&model, &c, &x).unwrap();
        let mut order: Vec<usize> = (0..60).collect();
        order.reverse();
        order.swap(3, 40);
        let permuted = ov_mean(&model, &c, &x.select_rows(&order)).unwrap();
        assert_eq!(est.value.to_bits(), permuted.value.to_bits());
        let single = ov_mean(&model, &c, &x.select_rows(&[5])).unwrap();
        assert_eq!(single.value, ov_point(&model, &c, x.row(5)).unwrap());
        assert_eq!(est.n_batches, 3);
        assert_eq!(est.n_samples + est.n_excluded, 60);
    }
}
