//! Unified bias-variance decomposition for MSE, cross-entropy and zero-one
//! losses.
//!
//! For an ensemble `{y_j}` of probability outputs and a target `t`,
//!
//! ```text
//! E_j L(t, y_j) = L(t, ȳ) + β · E_j L(ȳ, y_j)
//!                 (bias)        (variance)
//! ```
//!
//! where `ȳ` minimizes the variance term over the simplex: the mean for MSE,
//! the normalized geometric mean for CE and the majority vote for ZO. β is 1
//! for MSE and CE. For ZO it is 1 when the vote is correct and otherwise
//! minus the fraction of dissenting models (those disagreeing with the vote)
//! that predict the true class.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Exp1};

use crate::error::{Error, Result};
use crate::nn::{argmax, is_one_hot, Matrix};
use crate::rng;

/// Lower clamp applied to probabilities before taking logarithms.
pub const CE_PROB_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Mse,
    Ce,
    Zo,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Mse, LossKind::Ce, LossKind::Zo];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Ce => "ce",
            LossKind::Zo => "zo",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "ce" => Ok(LossKind::Ce),
            "zo" | "zero-one" => Ok(LossKind::Zo),
            other => Err(Error::InvalidArgument(format!("unknown loss kind `{other}`"))),
        }
    }
}

/// One-hot vector with a 1 at the (first) maximum of `v`.
pub fn hardmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Empty("hardmax input"));
    }
    let mut out = vec![0.0; v.len()];
    out[argmax(v)] = 1.0;
    Ok(out)
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: "probability vector",
            expected,
            got,
        })
    }
}

/// `L(t, y)` for the given loss.
///
/// - MSE: `‖t − y‖²`
/// - CE: `Σ_k t_k log(t_k / y_k)`, with `0 · log 0 = 0` and `y` clamped to
///   `[1e-12, 1]`
/// - ZO: `1` if `hardmax(t) ≠ hardmax(y)`, else `0`
pub fn eval_loss(kind: LossKind, t: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(t.len(), y.len())?;
    if t.is_empty() {
        return Err(Error::Empty("probability vector"));
    }
    Ok(match kind {
        LossKind::Mse => t.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        LossKind::Ce => t
            .iter()
            .zip(y)
            .map(|(&tk, &yk)| {
                if tk <= 0.0 {
                    0.0
                } else {
                    tk * (tk.ln() - yk.clamp(CE_PROB_FLOOR, 1.0).ln())
                }
            })
            .sum(),
        LossKind::Zo => f64::from(argmax(t) != argmax(y)),
    })
}

/// The outputs of K models for a single sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutputs {
    outputs: Vec<Vec<f64>>,
}

impl EnsembleOutputs {
    /// Each output must be a probability vector of the same dimension.
    pub fn new(outputs: Vec<Vec<f64>>) -> Result<Self> {
        let c = outputs.first().ok_or(Error::Empty("ensemble"))?.len();
        if c == 0 {
            return Err(Error::Empty("probability vector"));
        }
        for y in &outputs {
            check_dims(c, y.len())?;
            check_simplex(y)?;
        }
        Ok(Self { outputs })
    }

    /// Row `i` of each of the K matrices, for per-sample decomposition of
    /// model outputs over a test set.
    pub fn from_rows(per_model: &[Matrix], i: usize) -> Result<Self> {
        Self::new(per_model.iter().map(|m| m.row(i).to_vec()).collect())
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn k(&self) -> usize {
        self.outputs.len()
    }

    pub fn class_count(&self) -> usize {
        self.outputs[0].len()
    }
}

fn check_simplex(y: &[f64]) -> Result<()> {
    let sum: f64 = y.iter().sum();
    if y.iter().any(|&v| v.is_nan() || v < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidArgument(format!("not a probability vector: {y:?}")));
    }
    Ok(())
}

fn vote_counts(ens: &EnsembleOutputs) -> Vec<usize> {
    let mut counts = vec![0usize; ens.class_count()];
    for y in &ens.outputs {
        counts[argmax(y)] += 1;
    }
    counts
}

/// The expected output ȳ minimizing `E_j L(ȳ, y_j)`.
pub fn expected_output(kind: LossKind, ens: &EnsembleOutputs) -> Vec<f64> {
    let c = ens.class_count();
    let k = ens.k() as f64;
    match kind {
        LossKind::Mse => {
            let mut mean = vec![0.0; c];
            for y in &ens.outputs {
                for (m, v) in mean.iter_mut().zip(y) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= k);
            mean
        }
        LossKind::Ce => {
            let mut log_mean = vec![0.0; c];
            for y in &ens.outputs {
                for (m, v) in log_mean.iter_mut().zip(y) {
                    *m += v.clamp(CE_PROB_FLOOR, 1.0).ln();
                }
            }
            let geo: Vec<f64> = log_mean.iter().map(|m| (m / k).exp()).collect();
            let z: f64 = geo.iter().sum();
            geo.into_iter().map(|g| g / z).collect()
        }
        LossKind::Zo => {
            let counts: Vec<f64> = vote_counts(ens).into_iter().map(|n| n as f64).collect();
            hardmax(&counts).expect("non-empty")
        }
    }
}

/// One sample's decomposition. `expected_loss = bias + beta · variance`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompResult {
    pub expected_loss: f64,
    pub bias: f64,
    pub variance: f64,
    pub beta: f64,
}

pub fn decompose(kind: LossKind, t: &[f64], ens: &EnsembleOutputs) -> Result<DecompResult> {
    check_dims(ens.class_count(), t.len())?;
    match kind {
        LossKind::Mse => check_simplex(t)?,
        LossKind::Ce | LossKind::Zo => {
            if !is_one_hot(t) {
                return Err(Error::NotOneHot);
            }
        }
    }
    let k = ens.k() as f64;
    let y_bar = expected_output(kind, ens);

    let mut expected_loss = 0.0;
    let mut variance = 0.0;
    for y in &ens.outputs {
        expected_loss += eval_loss(kind, t, y)?;
        variance += eval_loss(kind, &y_bar, y)?;
    }
    expected_loss /= k;
    variance /= k;
    let bias = eval_loss(kind, t, &y_bar)?;

    let beta = match kind {
        LossKind::Mse | LossKind::Ce => 1.0,
        LossKind::Zo => {
            let truth = argmax(t);
            let vote = argmax(&y_bar);
            if vote == truth {
                1.0
            } else {
                let preds: Vec<usize> = ens.outputs.iter().map(|y| argmax(y)).collect();
                let dissent = preds.iter().filter(|&&p| p != vote).count();
                let correct_dissent = preds.iter().filter(|&&p| p != vote && p == truth).count();
                if dissent == 0 {
                    0.0
                } else {
                    -(correct_dissent as f64) / dissent as f64
                }
            }
        }
    };

    Ok(DecompResult {
        expected_loss,
        bias,
        variance,
        beta,
    })
}

/// Test-set averages of the per-sample bias, variance and expected loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleDecomp {
    pub bias: f64,
    pub variance: f64,
    pub expected_loss: f64,
}

/// Averages [`decompose`] over samples: `B = mean bias`, `V = mean variance`.
pub fn ensemble_bias_variance(kind: LossKind, per_sample: &[(Vec<f64>, EnsembleOutputs)]) -> Result<EnsembleDecomp> {
    let (first_t, first_ens) = per_sample.first().ok_or(Error::Empty("sample list"))?;
    let (c, k) = (first_t.len(), first_ens.k());
    let mut acc = EnsembleDecomp {
        bias: 0.0,
        variance: 0.0,
        expected_loss: 0.0,
    };
    for (t, ens) in per_sample {
        check_dims(c, t.len())?;
        if ens.k() != k {
            return Err(Error::DimensionMismatch {
                context: "ensemble size",
                expected: k,
                got: ens.k(),
            });
        }
        let d = decompose(kind, t, ens)?;
        acc.bias += d.bias;
        acc.variance += d.variance;
        acc.expected_loss += d.expected_loss;
    }
    let n = per_sample.len() as f64;
    acc.bias /= n;
    acc.variance /= n;
    acc.expected_loss /= n;
    Ok(acc)
}

fn mean_loss_from(kind: LossKind, center: &[f64], ens: &EnsembleOutputs) -> f64 {
    ens.outputs
        .iter()
        .map(|y| eval_loss(kind, center, y).expect("dimensions checked"))
        .sum::<f64>()
        / ens.k() as f64
}

/// Checks that ȳ minimizes the variance term.
///
/// MSE and CE: ȳ must beat `trials` uniformly drawn simplex points (up to
/// 1e-9). ZO: every one-hot candidate is enumerated and the vote must attain
/// the minimum.
pub fn argmin_check(kind: LossKind, ens: &EnsembleOutputs, trials: usize, seed: u64) -> bool {
    let y_bar = expected_output(kind, ens);
    let best = mean_loss_from(kind, &y_bar, ens);
    let c = ens.class_count();
    match kind {
        LossKind::Zo => (0..c).all(|k| {
            let mut cand = vec![0.0; c];
            cand[k] = 1.0;
            mean_loss_from(kind, &cand, ens) >= best
        }),
        LossKind::Mse | LossKind::Ce => {
            let mut r = rng::seeded(seed);
            (0..trials.max(1)).all(|_| {
                let probe = random_simplex_point(c, &mut r);
                mean_loss_from(kind, &probe, ens) >= best - 1e-9
            })
        }
    }
}

/// Uniform draw from the probability simplex (flat Dirichlet).
pub fn random_simplex_point(c: usize, r: &mut rng::Rng) -> Vec<f64> {
    let e: Vec<f64> = (0..c).map(|_| Exp1.sample(r)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v: f64| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens(v: &[&[f64]]) -> EnsembleOutputs {
        EnsembleOutputs::new(v.iter().map(|y| y.to_vec()).collect()).unwrap()
    }

    fn one_hot(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; c];
        v[k] = 1.0;
        v
    }

    /// A probability vector whose argmax is `k`.
    fn leaning(k: usize, c: usize) -> Vec<f64> {
        let mut v = vec![0.5 / (c as f64 - 1.0); c];
        v[k] = 0.5;
        v[k] += 0.01;
        let s: f64 = v.iter().sum();
        v.iter().map(|x| x / s).collect()
    }

    #[test]
    fn hardmax_cases() {
        assert_eq!(hardmax(&[0.2, 0.5, 0.3]).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(hardmax(&[0.5, 0.5]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(hardmax(&[0.0, 0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert!(hardmax(&[]).is_err());
    }

    #[test]
    fn loss_values() {
        assert!((eval_loss(LossKind::Mse, &[1.0, 0.0], &[0.6, 0.4]).unwrap() - 0.32).abs() < 1e-15);
        assert!((eval_loss(LossKind::Ce, &[1.0, 0.0], &[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(eval_loss(LossKind::Zo, &[1.0, 0.0], &[0.7, 0.3]).unwrap(), 0.0);
        assert_eq!(eval_loss(LossKind::Zo, &[1.0, 0.0], &[0.3, 0.7]).unwrap(), 1.0);
        assert!(eval_loss(LossKind::Mse, &[1.0, 0.0], &[1.0]).is_err());
    }

    #[test]
    fn ce_clamps_zero_probability() {
        let l = eval_loss(LossKind::Ce, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((l + CE_PROB_FLOOR.ln()).abs() < 1e-12);
    }

    #[test]
    fn expected_outputs() {
        let e = ens(&[&[0.8, 0.2], &[0.2, 0.8]]);
        assert_eq!(expected_output(LossKind::Mse, &e), vec![0.5, 0.5]);
        let ce = expected_output(LossKind::Ce, &e);
        assert!((ce[0] - 0.5).abs() < 1e-15 && (ce[1] - 0.5).abs() < 1e-15);
        let votes = ens(&[&leaning(0, 3), &leaning(0, 3), &leaning(2, 3)]);
        assert_eq!(expected_output(LossKind::Zo, &votes), one_hot(0, 3));
    }

    #[test]
    fn zo_vote_tie_goes_to_lowest_class() {
        let e = ens(&[&leaning(2, 3), &leaning(1, 3)]);
        assert_eq!(expected_output(LossKind::Zo, &e), one_hot(1, 3));
    }

    #[test]
    fn zo_hand_example() {
        let e = ens(&[&leaning(0, 3), &leaning(0, 3), &leaning(1, 3)]);
        let d = decompose(LossKind::Zo, &one_hot(1, 3), &e).unwrap();
        assert_eq!(d.bias, 1.0);
        assert_eq!(d.beta, -1.0);
        assert!((d.expected_loss - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.variance - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn zo_unanimous_correct() {
        let e = ens(&[&leaning(2, 3), &leaning(2, 3)]);
        let d = decompose(LossKind::Zo, &one_hot(2, 3), &e).unwrap();
        assert_eq!((d.expected_loss, d.bias, d.variance, d.beta), (0.0, 0.0, 0.0, 1.0));
    }

    #[test]
    fn zo_unanimous_wrong_has_zero_beta() {
        let e = ens(&[&leaning(0, 3), &leaning(0, 3)]);
        let d = decompose(LossKind::Zo, &one_hot(2, 3), &e).unwrap();
        assert_eq!((d.expected_loss, d.bias, d.variance, d.beta), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn single_model_mse() {
        let e = ens(&[&[0.3, 0.7]]);
        let d = decompose(LossKind::Mse, &[1.0, 0.0], &e).unwrap();
        assert_eq!(d.variance, 0.0);
        assert_eq!(d.beta, 1.0);
        assert!((d.bias - d.expected_loss).abs() < 1e-15);
    }

    #[test]
    fn ce_bias_is_negative_log_of_true_class() {
        let e = ens(&[&[0.7, 0.2, 0.1], &[0.3, 0.3, 0.4]]);
        let t = one_hot(0, 3);
        let d = decompose(LossKind::Ce, &t, &e).unwrap();
        let y_bar = expected_output(LossKind::Ce, &e);
        assert!((d.bias + y_bar[0].ln()).abs() < 1e-14);
        assert!((d.expected_loss - (d.bias + d.variance)).abs() < 1e-12);
    }

    #[test]
    fn non_one_hot_target_rejected_for_zo_and_ce() {
        let e = ens(&[&[0.5, 0.5]]);
        assert!(matches!(decompose(LossKind::Zo, &[0.5, 0.5], &e), Err(Error::NotOneHot)));
        assert!(matches!(decompose(LossKind::Ce, &[0.5, 0.5], &e), Err(Error::NotOneHot)));
        assert!(decompose(LossKind::Mse, &[0.5, 0.5], &e).is_ok());
    }

    #[test]
    fn ensemble_aggregation() {
        let t1 = one_hot(1, 3);
        let unanimous = ens(&[&leaning(1, 3), &leaning(1, 3), &leaning(1, 3)]);
        let split = ens(&[&leaning(0, 3), &leaning(0, 3), &leaning(1, 3)]);
        let single = ensemble_bias_variance(LossKind::Zo, &[(t1.clone(), split.clone())]).unwrap();
        let d = decompose(LossKind::Zo, &t1, &split).unwrap();
        assert_eq!((single.bias, single.variance), (d.bias, d.variance));

        let both = ensemble_bias_variance(LossKind::Zo, &[(t1.clone(), unanimous), (t1, split)]).unwrap();
        assert!((both.bias - 0.5).abs() < 1e-15);
        assert!((both.variance - 1.0 / 6.0).abs() < 1e-15);
        assert!(ensemble_bias_variance(LossKind::Zo, &[]).is_err());
    }

    #[test]
    fn identical_models_have_zero_variance() {
        let y = [0.2, 0.5, 0.3];
        let e = ens(&[&y, &y, &y]);
        for kind in LossKind::ALL {
            let r = ensemble_bias_variance(kind, &[(one_hot(0, 3), e.clone()), (one_hot(2, 3), e.clone())]).unwrap();
            assert!(r.variance.abs() < 1e-15, "{kind}");
        }
    }

    #[test]
    fn argmin_examples() {
        let votes = ens(&[&leaning(0, 3), &leaning(0, 3), &leaning(2, 3)]);
        assert!(argmin_check(LossKind::Zo, &votes, 1, 0));
        assert!(argmin_check(LossKind::Mse, &ens(&[&[0.1, 0.9]]), 100, 1));
        assert!(argmin_check(LossKind::Ce, &ens(&[&[0.8, 0.2], &[0.2, 0.8]]), 1000, 2));
    }

    #[test]
    fn loss_kind_parses() {
        assert_eq!("ZO".parse::<LossKind>().unwrap(), LossKind::Zo);
        assert!("hinge".parse::<LossKind>().is_err());
        for k in LossKind::ALL {
            assert_eq!(k.to_string().parse::<LossKind>().unwrap(), k);
        }
    }
}
