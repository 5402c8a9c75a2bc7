use rand::seq::{index, SliceRandom};

use super::early_stop::{find_stop_epoch, EarlyStopConfig, StopMode, StopPoint};
use super::noise::{inject_label_noise, subsample_train_sets, NoiseSpec};
use super::stats::pearson_r;
use super::trace::{Trace, TraceRow};
use super::Dataset;
use crate::decomp::{ensemble_bias_variance, eval_loss, EnsembleOutputs, LossKind};
use crate::error::{Error, Result};
use crate::nn::{ce_grad, forward_logits, init_model, mean_ce_loss, softmax, Batch, Matrix, MlpSpec, Model, OptimizerKind, OptimizerState};
use crate::ov::{candidate_updates, draw_ov_batches, grad_variance, ov_mean, GradVarEstimate, OvEstimate};
use crate::rng::{self, derive_seed};

// seed-derivation tags, one independent stream per purpose
const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;
const TAG_OV_SAMPLES: u64 = 3;
const TAG_OV_BATCHES: u64 = 4;
const TAG_MEMBER: u64 = 5;
const TAG_SUBSETS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::adam(),
            learning_rate,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::sgd(momentum),
            learning_rate,
        }
    }

    pub fn build(&self, param_count: usize) -> Result<OptimizerState> {
        OptimizerState::new(self.kind, self.learning_rate, param_count)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub arch: MlpSpec,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub label_noise: NoiseSpec,
    /// Number of disjoint batches per OV measurement.
    pub ov_batches: usize,
    /// Rows per OV batch; `None` means `batch_size`.
    pub ov_batch_size: Option<usize>,
    /// Training inputs OV is averaged over (capped at the training-set size).
    pub ov_samples: usize,
    /// When set, candidate updates come from plain SGD with this learning
    /// rate instead of a frozen copy of the training optimizer.
    pub ov_probe_lr: Option<f64>,
    pub seed: u64,
}

impl RunConfig {
    pub fn new(arch: MlpSpec, optimizer: OptimizerConfig, epochs: usize, seed: u64) -> Self {
        Self {
            arch,
            optimizer,
            epochs,
            batch_size: 128,
            label_noise: NoiseSpec::none(),
            ov_batches: 10,
            ov_batch_size: None,
            ov_samples: 1000,
            ov_probe_lr: None,
            seed,
        }
    }

    pub fn ov_batch_size(&self) -> usize {
        self.ov_batch_size.unwrap_or(self.batch_size)
    }

    fn validate(&self, data: &Dataset) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.ov_samples == 0 {
            return Err(Error::InvalidArgument("OV sample count must be >= 1".into()));
        }
        let expect = |context, expected, got| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { context, expected, got })
            }
        };
        expect("architecture input size", data.input_dim(), self.arch.input_dim())?;
        expect("architecture class count", data.class_count, self.arch.class_count())?;
        Ok(())
    }
}

/// One model being trained on one training set. Holds no test data, so
/// everything computed from a `Learner` (OV, V_g, train loss) is
/// validation-free.
struct Learner {
    model: Model,
    opt: OptimizerState,
    shuffle: rng::Rng,
    x: Matrix,
    t: Matrix,
    ov_xs: Matrix,
    seed: u64,
}

impl Learner {
    fn new(cfg: &RunConfig, x: Matrix, t: Matrix, seed: u64) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Empty("training set"));
        }
        let model = init_model(&cfg.arch, derive_seed(seed, &[TAG_INIT]));
        let opt = cfg.optimizer.build(model.param_count())?;
        let n_ov = cfg.ov_samples.min(x.rows());
        let mut pick = index::sample(&mut rng::seeded(derive_seed(seed, &[TAG_OV_SAMPLES])), x.rows(), n_ov).into_vec();
        pick.sort_unstable();
        let ov_xs = x.select_rows(&pick);
        Ok(Self {
            model,
            opt,
            shuffle: rng::seeded(derive_seed(seed, &[TAG_SHUFFLE])),
            x,
            t,
            ov_xs,
            seed,
        })
    }

    fn train_epoch(&mut self, batch_size: usize) -> Result<()> {
        let mut order: Vec<usize> = (0..self.x.rows()).collect();
        order.shuffle(&mut self.shuffle);
        for chunk in order.chunks(batch_size) {
            let batch = Batch::new(self.x.select_rows(chunk), self.t.select_rows(chunk))?;
            let grad = ce_grad(&self.model, &batch)?;
            self.opt.step(&mut self.model, &grad)?;
        }
        Ok(())
    }

    fn train_ce(&self) -> Result<f64> {
        mean_ce_loss(&self.model, &Batch::new(self.x.clone(), self.t.clone())?)
    }

    /// OV and V_g from freshly drawn training batches.
    fn measure_ov(&self, cfg: &RunConfig, epoch: usize) -> Result<(OvEstimate, GradVarEstimate)> {
        self.measure_ov_with(cfg, cfg.ov_batches, epoch)
    }

    fn measure_ov_with(&self, cfg: &RunConfig, n_batches: usize, epoch: usize) -> Result<(OvEstimate, GradVarEstimate)> {
        let seed = derive_seed(self.seed, &[TAG_OV_BATCHES, epoch as u64]);
        let batches = draw_ov_batches(&self.x, &self.t, cfg.ov_batch_size(), n_batches, seed)?;
        let cand = match cfg.ov_probe_lr {
            Some(lr) => candidate_updates(&self.model, &OptimizerState::sgd(lr, 0.0, self.model.param_count())?, &batches)?,
            None => candidate_updates(&self.model, &self.opt, &batches)?,
        };
        Ok((ov_mean(&self.model, &cand, &self.ov_xs)?.at_epoch(epoch), grad_variance(&cand)?))
    }
}

struct TestLosses {
    ce: f64,
    mse: f64,
    zo: f64,
}

fn test_probs(model: &Model, x: &Matrix) -> Result<Matrix> {
    Ok(softmax(&forward_logits(model, x)?))
}

fn test_losses(probs: &Matrix, t: &Matrix) -> Result<TestLosses> {
    if t.rows() == 0 {
        return Ok(TestLosses {
            ce: f64::NAN,
            mse: f64::NAN,
            zo: f64::NAN,
        });
    }
    let (mut ce, mut mse, mut zo) = (0.0, 0.0, 0.0);
    for (y, tr) in probs.iter_rows().zip(t.iter_rows()) {
        ce += eval_loss(LossKind::Ce, tr, y)?;
        mse += eval_loss(LossKind::Mse, tr, y)?;
        zo += eval_loss(LossKind::Zo, tr, y)?;
    }
    let n = t.rows() as f64;
    Ok(TestLosses {
        ce: ce / n,
        mse: mse / n,
        zo: zo / n,
    })
}

fn noisy_train_labels(data: &Dataset, cfg: &RunConfig) -> Result<Matrix> {
    inject_label_noise(&data.train_t, &cfg.label_noise)
}

/// Trains one model on the (optionally label-noised) training split. After
/// every epoch it records train CE, test CE/MSE/ZO and OV/V_g measured on
/// freshly drawn training batches. With an empty test split the test
/// columns are NaN.
pub fn train_with_trace(data: &Dataset, cfg: &RunConfig) -> Result<Trace> {
    cfg.validate(data)?;
    let t = noisy_train_labels(data, cfg)?;
    let mut learner = Learner::new(cfg, data.train_x.clone(), t, cfg.seed)?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        learner.train_epoch(cfg.batch_size)?;
        let (ov, gv) = learner.measure_ov(cfg, epoch)?;
        let probs = test_probs(&learner.model, &data.test_x)?;
        let losses = test_losses(&probs, &data.test_t)?;
        rows.push(TraceRow {
            epoch,
            train_ce: learner.train_ce()?,
            test_ce: losses.ce,
            test_mse: losses.mse,
            test_zo: losses.zo,
            test_acc: 1.0 - losses.zo,
            ov: ov.value,
            v_g: gv.v_g,
            bias: None,
            variance: None,
        });
    }
    Ok(Trace { rows })
}

/// OV series measured with several batch counts along one training run. The
/// OV batches are drawn from their own seeded stream, so the trajectory is
/// the same as in [`train_with_trace`] with the same config; the
/// `n_batches` values only change how many candidate updates are used.
pub fn ov_series_by_batch_count(data: &Dataset, cfg: &RunConfig, batch_counts: &[usize]) -> Result<Vec<Vec<f64>>> {
    cfg.validate(data)?;
    let t = noisy_train_labels(data, cfg)?;
    let mut learner = Learner::new(cfg, data.train_x.clone(), t, cfg.seed)?;
    let mut out = vec![Vec::with_capacity(cfg.epochs); batch_counts.len()];
    for epoch in 1..=cfg.epochs {
        learner.train_epoch(cfg.batch_size)?;
        for (series, &b) in out.iter_mut().zip(batch_counts) {
            series.push(learner.measure_ov_with(cfg, b, epoch)?.0.value);
        }
    }
    Ok(out)
}

/// Training subset and seed of one ensemble member.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub indices: Vec<usize>,
    pub seed: u64,
}

/// Trains `k` models on random `frac`-sized subsets of the (label-noised)
/// training split and traces bias/variance of `kind` on the test split.
///
/// The loss columns of each row are averages over members, so the column of
/// `kind` is the expected loss `E_j L(t, y_j)`. `ov` and `v_g` are member
/// averages as well.
pub fn ensemble_trace(data: &Dataset, cfg: &RunConfig, k: usize, frac: f64, kind: LossKind) -> Result<Trace> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("ensemble needs K >= 2, got {k}")));
    }
    let subsets = subsample_train_sets(data.train_x.rows(), k, frac, derive_seed(cfg.seed, &[TAG_SUBSETS]))?;
    let members: Vec<EnsembleMember> = subsets
        .into_iter()
        .enumerate()
        .map(|(j, indices)| EnsembleMember {
            indices,
            seed: derive_seed(cfg.seed, &[TAG_MEMBER, j as u64]),
        })
        .collect();
    ensemble_trace_with_members(data, cfg, &members, kind)
}

pub fn ensemble_trace_with_members(data: &Dataset, cfg: &RunConfig, members: &[EnsembleMember], kind: LossKind) -> Result<Trace> {
    cfg.validate(data)?;
    if members.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    if !data.has_test() {
        return Err(Error::Empty("test split"));
    }
    let noisy = noisy_train_labels(data, cfg)?;
    let mut learners = members
        .iter()
        .map(|m| Learner::new(cfg, data.train_x.select_rows(&m.indices), noisy.select_rows(&m.indices), m.seed))
        .collect::<Result<Vec<_>>>()?;
    let k = learners.len() as f64;
    let targets: Vec<Vec<f64>> = data.test_t.iter_rows().map(<[f64]>::to_vec).collect();

    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut row = TraceRow {
            epoch,
            train_ce: 0.0,
            test_ce: 0.0,
            test_mse: 0.0,
            test_zo: 0.0,
            test_acc: 0.0,
            ov: 0.0,
            v_g: 0.0,
            bias: None,
            variance: None,
        };
        let mut probs = Vec::with_capacity(learners.len());
        for learner in &mut learners {
            learner.train_epoch(cfg.batch_size)?;
            let (ov, gv) = learner.measure_ov(cfg, epoch)?;
            let p = test_probs(&learner.model, &data.test_x)?;
            let losses = test_losses(&p, &data.test_t)?;
            row.train_ce += learner.train_ce()? / k;
            row.test_ce += losses.ce / k;
            row.test_mse += losses.mse / k;
            row.test_zo += losses.zo / k;
            row.ov += ov.value / k;
            row.v_g += gv.v_g / k;
            probs.push(p);
        }
        row.test_acc = 1.0 - row.test_zo;
        let per_sample = (0..data.test_x.rows())
            .map(|i| Ok((targets[i].clone(), EnsembleOutputs::from_rows(&probs, i)?)))
            .collect::<Result<Vec<_>>>()?;
        let bv = ensemble_bias_variance(kind, &per_sample)?;
        row.bias = Some(bv.bias);
        row.variance = Some(bv.variance);
        rows.push(row);
    }
    Ok(Trace { rows })
}

/// Early stopping on smoothed OV, plus the test-accuracy reference when the
/// trace has test columns. Epochs in the report are trace epoch numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopReport {
    pub config: EarlyStopConfig,
    pub best_epoch: usize,
    pub stop_epoch: usize,
    pub test_error_at_best: Option<f64>,
    /// Stop point from patience on the raw test accuracy (verification only).
    pub reference: Option<(usize, usize)>,
    pub reference_test_error: Option<f64>,
}

pub fn early_stop_report(trace: &Trace, cfg: &EarlyStopConfig) -> Result<EarlyStopReport> {
    if trace.is_empty() {
        return Err(Error::Empty("trace"));
    }
    let ov_cfg = EarlyStopConfig {
        mode: StopMode::Minimize,
        ..*cfg
    };
    let found: StopPoint = find_stop_epoch(&trace.column(|r| r.ov), &ov_cfg)?;
    let has_test = trace.rows.iter().all(|r| r.test_acc.is_finite());
    let (reference, reference_test_error, test_error_at_best) = if has_test {
        let ref_cfg = EarlyStopConfig {
            window: 1,
            patience: cfg.patience,
            mode: StopMode::Maximize,
        };
        let truth = find_stop_epoch(&trace.column(|r| r.test_acc), &ref_cfg)?;
        (
            Some((trace.rows[truth.best_epoch].epoch, trace.rows[truth.stop_epoch].epoch)),
            Some(trace.rows[truth.best_epoch].test_zo),
            Some(trace.rows[found.best_epoch].test_zo),
        )
    } else {
        (None, None, None)
    };
    Ok(EarlyStopReport {
        config: ov_cfg,
        best_epoch: trace.rows[found.best_epoch].epoch,
        stop_epoch: trace.rows[found.stop_epoch].epoch,
        test_error_at_best,
        reference,
        reference_test_error,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub width: usize,
    pub final_test_acc: f64,
    pub final_ov: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Pearson correlation between final OV and final test accuracy.
    pub r: f64,
}

/// Probe learning rate used by [`width_sweep`] when the config has none.
pub const DEFAULT_PROBE_LR: f64 = 0.001;

/// One run per hidden width, OV measured with a plain-SGD probe.
pub fn width_sweep(data: &Dataset, base: &RunConfig, widths: &[usize]) -> Result<SweepResult> {
    if widths.is_empty() {
        return Err(Error::Empty("width list"));
    }
    let rows = widths
        .iter()
        .map(|&width| {
            let cfg = RunConfig {
                arch: base.arch.with_hidden_width(width)?,
                ov_probe_lr: Some(base.ov_probe_lr.unwrap_or(DEFAULT_PROBE_LR)),
                ..base.clone()
            };
            let trace = train_with_trace(data, &cfg)?;
            let last = trace.rows.last().expect("epochs >= 1");
            Ok(SweepRow {
                width,
                final_test_acc: last.test_acc,
                final_ov: last.ov,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ov: Vec<f64> = rows.iter().map(|r| r.final_ov).collect();
    let acc: Vec<f64> = rows.iter().map(|r| r.final_test_acc).collect();
    if rows.len() < 2 {
        return Err(Error::ZeroVariance("width sweep with a single width"));
    }
    let r = pearson_r(&ov, &acc)?;
    Ok(SweepResult { rows, r })
}
