use std::fmt::Write as _;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::discretize::DiscreteTimeMap;
use super::loss::{
    batch_loss_and_grad, cifs_from_hazards, loss_nll, loss_ranking, reference_hazards, total_loss,
    CifTensor, HazardTensor,
};
use crate::embedding::{EmbeddingConfig, Mlp};
use crate::error::{DkajError, Result};
use crate::metrics::{
    build_eval_grid, censoring_survival, concordance_td, integrated_brier_score, EvalGrid,
    LinearInterpolated,
};
use crate::scalar::Scalar;
use crate::survival::{CifSet, Cohort, EventTimeGrid, PreprocessedCohort, StepCurve, TimeLabel};

/// Validation quantity watched for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EarlyStopCriterion {
    /// Training loss evaluated on the validation set (lower is better).
    Objective,
    /// Integrated Brier score averaged over events (lower is better).
    #[default]
    Ibs,
    /// Time-dependent concordance averaged over events (higher is better).
    Ctd,
}

impl EarlyStopCriterion {
    pub fn improves(self, candidate: f64, best: f64) -> bool {
        if candidate.is_nan() {
            return false;
        }
        if best.is_nan() {
            return true;
        }
        match self {
            EarlyStopCriterion::Ctd => candidate > best,
            _ => candidate < best,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    /// Gradient descent, optionally with heavy-ball momentum.
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.0 }
    }
}

/// Parameter-update state for one flat parameter vector.
pub(crate) struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, lr: f64, len: usize) -> Self {
        Self {
            kind,
            lr,
            first: vec![0.0; len],
            second: vec![0.0; len],
            step: 0,
        }
    }

    pub(crate) fn apply<T: Scalar>(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd { momentum } => {
                for ((p, &g), v) in params.iter_mut().zip(grad).zip(self.first.iter_mut()) {
                    *v = momentum * *v + g.as_f64();
                    *p -= T::of(self.lr * *v);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, &g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(self.first.iter_mut())
                    .zip(self.second.iter_mut())
                {
                    let g = g.as_f64();
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= T::of(self.lr * (*m / c1) / ((*v / c2).sqrt() + eps));
                }
            }
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the likelihood term; `1 - alpha` weights the ranking term.
    pub alpha: f64,
    /// Scale of the ranking loss exponent.
    pub sigma: f64,
    /// Number of time bins; 0 uses every observed event time (at most 512).
    pub num_time_steps: usize,
    pub early_stop_criterion: EarlyStopCriterion,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 1024,
            max_epochs: 1000,
            patience: 10,
            alpha: 1.0,
            sigma: 1.0,
            num_time_steps: 0,
            early_stop_criterion: EarlyStopCriterion::Ibs,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DkajError::InvalidConfig(
                "batch_size must be at least 2".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(DkajError::InvalidConfig("sigma must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DkajError::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(DkajError::InvalidConfig(
                "learning_rate must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_criterion: f64,
    pub is_best: bool,
}

/// Per-epoch history. Epoch 0 is the initialization, evaluated before any
/// update; `valid_criterion` is exactly the value used for stopping.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub criterion: EarlyStopCriterion,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn best_criterion(&self) -> f64 {
        self.records[self.best_epoch].valid_criterion
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,valid_criterion,is_best\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                r.epoch, r.train_loss, r.valid_criterion, r.is_best
            );
        }
        out
    }
}

/// Converts a CIF tensor into per-row step curves on `grid`.
pub(crate) fn tensor_to_cifsets<T: Scalar>(
    tensor: &CifTensor<T>,
    grid: &EventTimeGrid<T>,
) -> Vec<CifSet<T>> {
    let nb = tensor.num_bins();
    let knots = grid.times()[..nb].to_vec();
    (0..tensor.rows())
        .map(|i| CifSet {
            survival: StepCurve::new(
                knots.clone(),
                (1..=nb).map(|l| tensor.survival(i, l)).collect(),
                T::one(),
            )
            .expect("grid knots"),
            cif: (1..=tensor.num_events())
                .map(|d| {
                    StepCurve::new(
                        knots.clone(),
                        (1..=nb).map(|l| tensor.cif(i, d, l)).collect(),
                        T::zero(),
                    )
                    .expect("grid knots")
                })
                .collect(),
        })
        .collect()
}

/// Validation criterion for a frozen network: predictions for `valid` come
/// from kernel-weighted estimates over every training subject.
#[allow(clippy::too_many_arguments)]
pub fn validation_criterion<T: Scalar>(
    mlp: &Mlp<T>,
    train_features: &[T],
    train_labels: &[TimeLabel],
    valid: &Cohort<T>,
    dtm: &DiscreteTimeMap<T>,
    criterion: EarlyStopCriterion,
    alpha: T,
    sigma: T,
    eval_grid: &EvalGrid<T>,
) -> Result<f64> {
    let dim = mlp.embed_dim();
    let train_emb = mlp.embed_batch(train_features)?;
    let valid_emb = mlp.embed_batch(&valid.feature_matrix())?;
    let hz = reference_hazards(
        &valid_emb,
        &train_emb,
        dim,
        train_labels,
        dtm.num_bins(),
        valid.num_events(),
    );
    criterion_from_hazards(&hz, valid, dtm, criterion, alpha, sigma, eval_grid)
}

/// Validation criterion of predicted hazards, one row per subject of `valid`.
pub(crate) fn criterion_from_hazards<T: Scalar>(
    hz: &HazardTensor<T>,
    valid: &Cohort<T>,
    dtm: &DiscreteTimeMap<T>,
    criterion: EarlyStopCriterion,
    alpha: T,
    sigma: T,
    eval_grid: &EvalGrid<T>,
) -> Result<f64> {
    let m = valid.num_events();
    let cifs = cifs_from_hazards(hz);
    match criterion {
        EarlyStopCriterion::Objective => {
            let labels: Vec<TimeLabel> = valid
                .records()
                .iter()
                .map(|r| dtm.label(r.time, r.event))
                .collect();
            let nll = loss_nll(hz, &labels);
            let rank = if alpha < T::one() {
                loss_ranking(&cifs, &labels, sigma)
            } else {
                T::zero()
            };
            Ok(total_loss(alpha, nll, rank).as_f64())
        }
        EarlyStopCriterion::Ibs => {
            let sets = tensor_to_cifsets(&cifs, dtm.grid());
            let preds = LinearInterpolated(&sets);
            let censor = censoring_survival(valid);
            let mut total = 0.0;
            for event in 1..=m {
                total += integrated_brier_score(&preds, valid, event, &eval_grid.times, &censor)?
                    .as_f64();
            }
            Ok(total / m as f64)
        }
        EarlyStopCriterion::Ctd => {
            let sets = tensor_to_cifsets(&cifs, dtm.grid());
            let preds = LinearInterpolated(&sets);
            let horizon = eval_grid.times.last().copied();
            let mut total = 0.0;
            let mut counted = 0;
            for event in 1..=m {
                if let Ok(c) = concordance_td(&preds, valid, event, horizon) {
                    total += c.as_f64();
                    counted += 1;
                }
            }
            Ok(if counted > 0 {
                total / counted as f64
            } else {
                f64::NAN
            })
        }
    }
}

/// Evaluation grid built from the event times of the given cohorts: 100
/// quantiles up to the 90th percentile, or the full range if that collapses.
pub fn eval_grid_for<T: Scalar>(cohorts: &[&Cohort<T>]) -> Result<EvalGrid<T>> {
    let times: Vec<T> = cohorts
        .iter()
        .flat_map(|c| {
            c.records()
                .iter()
                .filter(|r| !r.is_censored())
                .map(|r| r.time)
        })
        .collect();
    let grid = build_eval_grid(&times, 100, 90.0)?;
    if grid.times.len() >= 2 {
        return Ok(grid);
    }
    // fall back to the full range when the truncated grid collapses
    build_eval_grid(&times, 100, 100.0)
}

/// Minibatch training of the embedding network on the leave-one-out loss,
/// with per-epoch validation and patience-based early stopping. Returns the
/// best checkpoint and the history.
pub fn train_embedding<T: Scalar>(
    train: &Cohort<T>,
    valid: &Cohort<T>,
    dtm: &DiscreteTimeMap<T>,
    ecfg: &EmbeddingConfig,
    tcfg: &TrainConfig,
) -> Result<(Mlp<T>, TrainingLog)> {
    ecfg.validate()?;
    tcfg.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(DkajError::EmptyCohort);
    }
    if train.records().iter().all(|r| r.is_censored()) {
        return Err(DkajError::NoEvents);
    }
    let pre: PreprocessedCohort<T> = dtm.preprocess(train);
    let labels = &pre.labels;
    let features = train.feature_matrix();
    let p = train.num_features();
    let m = train.num_events();
    let nb = dtm.num_bins();
    let alpha = T::of(tcfg.alpha);
    let sigma = T::of(tcfg.sigma);
    let eval_grid = eval_grid_for(&[train, valid])?;

    let mut mlp = Mlp::<T>::init(ecfg, p, ecfg.seed);
    let dim = mlp.embed_dim();
    let mut opt = OptimizerState::new(tcfg.optimizer, tcfg.learning_rate, mlp.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let criterion_of = |net: &Mlp<T>| {
        validation_criterion(
            net,
            &features,
            labels,
            valid,
            dtm,
            tcfg.early_stop_criterion,
            alpha,
            sigma,
            &eval_grid,
        )
    };

    let init_value = criterion_of(&mlp)?;
    let mut log = TrainingLog {
        criterion: tcfg.early_stop_criterion,
        records: vec![EpochRecord {
            epoch: 0,
            train_loss: f64::NAN,
            valid_criterion: init_value,
            is_best: true,
        }],
        best_epoch: 0,
    };
    let mut best = mlp.clone();
    let mut best_value = init_value;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batches = batch_bounds(train.len(), tcfg.batch_size);

    for epoch in 1..=tcfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &(start, end) in &batches {
            let idx = &order[start..end];
            let mut xb = Vec::with_capacity(idx.len() * p);
            for &i in idx {
                xb.extend_from_slice(&features[i * p..(i + 1) * p]);
            }
            let lb: Vec<TimeLabel> = idx.iter().map(|&i| labels[i]).collect();
            let cache = mlp.forward(&xb)?;
            let (loss, gemb) = batch_loss_and_grad(cache.output(), dim, &lb, nb, m, alpha, sigma);
            loss_sum += loss.total.as_f64() * idx.len() as f64;
            let grad = mlp.backward(&cache, &gemb).flat();
            let mut theta = mlp.flat();
            opt.apply(&mut theta, &grad);
            mlp.set_flat(&theta);
        }
        let value = criterion_of(&mlp)?;
        let is_best = tcfg.early_stop_criterion.improves(value, best_value);
        let train_loss = loss_sum / train.len() as f64;
        debug!(
            "epoch {epoch}: train loss {train_loss:.6}, validation {value:.6}{}",
            if is_best { " *" } else { "" }
        );
        log.records.push(EpochRecord {
            epoch,
            train_loss,
            valid_criterion: value,
            is_best,
        });
        if is_best {
            best = mlp.clone();
            best_value = value;
            log.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                break;
            }
        }
    }
    Ok((best, log))
}

/// Contiguous batch ranges; a trailing batch of one row is merged into the previous.
pub(crate) fn batch_bounds(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push((start, end));
        start = end;
    }
    if out.len() > 1 && out[out.len() - 1].1 - out[out.len() - 1].0 < 2 {
        let last = out.pop().expect("nonempty");
        out.last_mut().expect("nonempty").1 = last.1;
    }
    out
}
