use std::fmt;

use super::mlp::check_len;
use super::{Gradient, Model};
use crate::error::{Error, Result};

/// A parameter update `g(T_B)`: the vector an optimizer adds to theta.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn sgd(momentum: f64) -> Self {
        Self::Sgd { momentum }
    }

    /// Adam with beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8.
    pub fn adam() -> Self {
        Self::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// SGD(+momentum) or Adam state.
///
/// [`preview_update`](Self::preview_update) returns the update the next
/// [`step`](Self::step) would apply without touching the state, which is
/// what optimization variance needs: many hypothetical updates from the
/// same frozen optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u64,
    /// SGD velocity, or Adam first moment.
    first: Vec<f64>,
    /// Adam second moment; empty for SGD.
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, learning_rate: f64, param_count: usize) -> Result<Self> {
        if !learning_rate.is_finite() || learning_rate < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and >= 0, got {learning_rate}"
            )));
        }
        let in_unit = |v: f64| (0.0..1.0).contains(&v);
        match kind {
            OptimizerKind::Sgd { momentum } if !in_unit(momentum) => {
                return Err(Error::InvalidArgument(format!("momentum must be in [0,1), got {momentum}")));
            }
            OptimizerKind::Adam { beta1, beta2, epsilon } if !in_unit(beta1) || !in_unit(beta2) || epsilon.is_nan() || epsilon <= 0.0 => {
                return Err(Error::InvalidArgument("adam needs beta1, beta2 in [0,1) and epsilon > 0".into()));
            }
            _ => {}
        }
        let second = match kind {
            OptimizerKind::Sgd { .. } => Vec::new(),
            OptimizerKind::Adam { .. } => vec![0.0; param_count],
        };
        Ok(Self {
            kind,
            learning_rate,
            step_count: 0,
            first: vec![0.0; param_count],
            second,
        })
    }

    pub fn sgd(learning_rate: f64, momentum: f64, param_count: usize) -> Result<Self> {
        Self::new(OptimizerKind::sgd(momentum), learning_rate, param_count)
    }

    pub fn adam(learning_rate: f64, param_count: usize) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, param_count)
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn param_count(&self) -> usize {
        self.first.len()
    }

    /// The update [`step`](Self::step) would apply for `grad`, computed
    /// against the current (unchanged) state.
    pub fn preview_update(&self, grad: &Gradient) -> Result<Update> {
        check_len("gradient", self.first.len(), grad.values.len())?;
        let lr = self.learning_rate;
        let delta = match self.kind {
            OptimizerKind::Sgd { momentum } => self.first.iter().zip(&grad.values).map(|(v, g)| -lr * (momentum * v + g)).collect(),
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                let t = (self.step_count + 1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                self.first
                    .iter()
                    .zip(&self.second)
                    .zip(&grad.values)
                    .map(|((m, v), g)| {
                        let m = beta1 * m + (1.0 - beta1) * g;
                        let v = beta2 * v + (1.0 - beta2) * g * g;
                        -lr * (m / c1) / ((v / c2).sqrt() + epsilon)
                    })
                    .collect()
            }
        };
        Ok(Update { delta })
    }

    /// Applies one optimizer step to `model` and returns the update used.
    pub fn step(&mut self, model: &mut Model, grad: &Gradient) -> Result<Update> {
        check_len("model parameters", self.first.len(), model.param_count())?;
        let update = self.preview_update(grad)?;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for (v, g) in self.first.iter_mut().zip(&grad.values) {
                    *v = momentum * *v + g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, .. } => {
                for ((m, v), g) in self.first.iter_mut().zip(&mut self.second).zip(&grad.values) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                }
            }
        }
        self.step_count += 1;
        for (t, d) in model.theta_mut().iter_mut().zip(&update.delta) {
            *t += d;
        }
        Ok(update)
    }
}

impl fmt::Display for OptimizerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            OptimizerKind::Sgd { momentum } => write!(f, "sgd(lr={}, momentum={})", self.learning_rate, momentum),
            OptimizerKind::Adam { beta1, beta2, epsilon } => write!(
                f,
                "adam(lr={}, beta1={beta1}, beta2={beta2}, eps={epsilon}, step={})",
                self.learning_rate, self.step_count
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::MlpSpec;

    fn grad(v: &[f64]) -> Gradient {
        Gradient { values: v.to_vec() }
    }

    fn model(n: usize) -> Model {
        // [1, n] spec has 2n parameters; only the length matters here
        let spec = MlpSpec::new(vec![1, n]).unwrap();
        Model::new(spec, vec![0.0; 2 * n]).unwrap()
    }

    #[test]
    fn sgd_preview_plain() {
        let opt = OptimizerState::sgd(0.1, 0.0, 2).unwrap();
        let u = opt.preview_update(&grad(&[1.0, -2.0])).unwrap();
        assert!((u.delta[0] + 0.1).abs() < 1e-15 && (u.delta[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let opt = OptimizerState::adam(0.001, 2).unwrap();
        let u = opt.preview_update(&grad(&[1.0, -2.0])).unwrap();
        assert!((u.delta[0] + 0.001).abs() < 1e-10);
        assert!((u.delta[1] - 0.001).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_zero_update() {
        for opt in [OptimizerState::sgd(0.1, 0.9, 3).unwrap(), OptimizerState::adam(0.1, 3).unwrap()] {
            assert!(opt.preview_update(&grad(&[0.0; 3])).unwrap().delta.iter().all(|&d| d == 0.0));
        }
    }

    #[test]
    fn momentum_recursion() {
        let mut opt = OptimizerState::sgd(0.1, 0.9, 2).unwrap();
        let mut m = model(1);
        let g = grad(&[1.0, 0.0]);
        let d1 = opt.step(&mut m, &g).unwrap().delta[0];
        let d2 = opt.step(&mut m, &g).unwrap().delta[0];
        assert!((d1 + 0.1).abs() < 1e-15);
        assert!((d2 + 0.19).abs() < 1e-15);
    }

    #[test]
    fn step_applies_exactly_the_preview() {
        for mut opt in [OptimizerState::sgd(0.05, 0.9, 4).unwrap(), OptimizerState::adam(0.01, 4).unwrap()] {
            let mut m = model(2);
            for i in 0..5 {
                let g = grad(&[1.0 + i as f64, -0.5, 0.25 * i as f64, 3.0]);
                let preview = opt.preview_update(&g).unwrap();
                let before = m.theta().to_vec();
                let count = opt.step_count();
                let applied = opt.step(&mut m, &g).unwrap();
                assert_eq!(preview, applied);
                assert_eq!(opt.step_count(), count + 1);
                for ((a, b), d) in m.theta().iter().zip(&before).zip(&preview.delta) {
                    assert_eq!(*a, b + d);
                }
            }
        }
    }

    #[test]
    fn preview_leaves_state_untouched() {
        let mut opt = OptimizerState::adam(0.01, 2).unwrap();
        let mut m = model(1);
        opt.step(&mut m, &grad(&[0.3, -0.1])).unwrap();
        let snapshot = opt.clone();
        opt.preview_update(&grad(&[5.0, 5.0])).unwrap();
        assert_eq!(snapshot, opt);
    }

    #[test]
    fn length_mismatch_rejected() {
        let opt = OptimizerState::sgd(0.1, 0.0, 3).unwrap();
        assert!(opt.preview_update(&grad(&[1.0])).is_err());
    }

    #[test]
    fn invalid_hyperparameters_rejected() {
        assert!(OptimizerState::sgd(0.1, 1.0, 1).is_err());
        assert!(OptimizerState::sgd(-0.1, 0.0, 1).is_err());
    }
}
