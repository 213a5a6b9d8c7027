//! Summary fine-tuning: the cluster event and censoring counts become
//! exponentiated free parameters and are refit by minibatch descent on the
//! kernel-weighted likelihood with the embedding frozen.
//!
//! A cluster's tables are parameterized only on its support, the bins where it
//! had mass at risk. Beyond the support the tables stay exactly zero, so the
//! fine-tuned model reproduces the original trailing zero-hazard bins.

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::error::{DkajError, Result};
use crate::metrics::EvalGrid;
use crate::predict::{SftStatus, TrainedDkaj};
use crate::scalar::Scalar;
use crate::survival::{Cohort, EventTable, TimeLabel};
use crate::train::loss::{
    cifs_from_hazards, loss_nll, loss_ranking, nll_hazard_grad, ranking_loss_and_hazard_grad,
    total_loss, HazardTensor,
};
use crate::train::{batch_bounds, EarlyStopCriterion, Optimizer, OptimizerState};

/// Floor applied to counts before taking logarithms at initialization, and
/// the initial value of every baseline pseudo-count.
pub const SFT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftConfig {
    pub enabled: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Weight of the likelihood term; values below 1 add the ranking loss.
    pub alpha: f64,
    pub sigma: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            learning_rate: 0.01,
            batch_size: 1024,
            max_epochs: 100,
            patience: 10,
            alpha: 1.0,
            sigma: 1.0,
            optimizer: Optimizer::default(),
            seed: 0,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(DkajError::InvalidConfig(
                "sft.batch_size must be at least 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DkajError::InvalidConfig(
                "sft.alpha must lie in [0, 1]".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(DkajError::InvalidConfig(
                "sft.sigma must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(DkajError::InvalidConfig(
                "sft.learning_rate must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Log pseudo-counts. `gamma` is `Q x L x m`, `gamma_base` `L x m`, `omega`
/// `Q x L`, `omega_base` `L`; `support[q]` is the number of leading bins
/// where cluster `q` is parameterized.
#[derive(Debug, Clone, PartialEq)]
pub struct SftParams<T> {
    pub num_clusters: usize,
    pub num_bins: usize,
    pub num_events: usize,
    pub support: Vec<usize>,
    pub gamma: Vec<T>,
    pub gamma_base: Vec<T>,
    pub omega: Vec<T>,
    pub omega_base: Vec<T>,
}

impl<T: Scalar> SftParams<T> {
    /// Logs of the cluster counts and of the censoring counts
    /// `c_l = n_l - n_{l+1} - sum_delta d_{delta,l}`, floored at [`SFT_FLOOR`].
    pub fn init(tables: &[EventTable<T>]) -> Self {
        let num_clusters = tables.len();
        let (nb, m) = tables
            .first()
            .map_or((0, 0), |t| (t.num_bins(), t.num_events()));
        let floor = T::of(SFT_FLOOR);
        let mut gamma = Vec::with_capacity(num_clusters * nb * m);
        let mut omega = Vec::with_capacity(num_clusters * nb);
        let mut support = Vec::with_capacity(num_clusters);
        for t in tables {
            support.push((1..=nb).take_while(|&l| t.n(l) > T::zero()).count());
            gamma.extend(t.events_raw().iter().map(|&d| d.max(floor).ln()));
            for l in 1..=nb {
                let next = if l < nb { t.n(l + 1) } else { T::zero() };
                let c = t.n(l) - next - t.d_total(l);
                omega.push(c.max(floor).ln());
            }
        }
        Self {
            num_clusters,
            num_bins: nb,
            num_events: m,
            support,
            gamma,
            gamma_base: vec![floor.ln(); nb * m],
            omega,
            omega_base: vec![floor.ln(); nb],
        }
    }

    pub fn num_params(&self) -> usize {
        self.gamma.len() + self.gamma_base.len() + self.omega.len() + self.omega_base.len()
    }

    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(&self.gamma);
        out.extend_from_slice(&self.gamma_base);
        out.extend_from_slice(&self.omega);
        out.extend_from_slice(&self.omega_base);
        out
    }

    pub fn set_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.num_params());
        let (a, rest) = flat.split_at(self.gamma.len());
        let (b, rest) = rest.split_at(self.gamma_base.len());
        let (c, d) = rest.split_at(self.omega.len());
        self.gamma.copy_from_slice(a);
        self.gamma_base.copy_from_slice(b);
        self.omega.copy_from_slice(c);
        self.omega_base.copy_from_slice(d);
    }
}

/// Cluster tables implied by the parameters:
/// `d' = exp(gamma) + exp(gamma_base)`, `c' = exp(omega) + exp(omega_base)`,
/// `n'_l = sum_delta d'_l + c'_l + n'_{l+1}` on each cluster's support.
pub fn sft_counts<T: Scalar>(params: &SftParams<T>) -> Vec<EventTable<T>> {
    let (nb, m) = (params.num_bins, params.num_events);
    (0..params.num_clusters)
        .map(|q| {
            let s = params.support[q];
            let mut events = vec![T::zero(); nb * m];
            let mut at_risk = vec![T::zero(); nb];
            let mut running = T::zero();
            for l in (1..=s).rev() {
                let mut mass = params.omega[q * nb + l - 1].exp() + params.omega_base[l - 1].exp();
                for delta in 0..m {
                    let k = (l - 1) * m + delta;
                    let d = params.gamma[q * nb * m + k].exp() + params.gamma_base[k].exp();
                    events[k] = d;
                    mass += d;
                }
                running += mass;
                at_risk[l - 1] = running;
            }
            EventTable::from_parts(nb, m, events, at_risk).expect("consistent shapes")
        })
        .collect()
}

/// Frozen inputs of the fine-tuning loss: per training subject, the
/// contributing clusters with their kernel weights, and the subject's label.
/// Subjects without any contributing cluster are left out.
#[derive(Debug, Clone)]
pub struct SftObjective<T> {
    pub neighborhoods: Vec<Vec<(usize, T)>>,
    pub labels: Vec<TimeLabel>,
    pub alpha: T,
    pub sigma: T,
}

impl<T: Scalar> SftObjective<T> {
    /// Neighborhoods of every training subject under `model`.
    pub fn from_model(
        model: &TrainedDkaj<T>,
        train: &Cohort<T>,
        alpha: T,
        sigma: T,
    ) -> Result<Self> {
        let pre = model.time_map.preprocess(train);
        let emb = model.mlp.embed_batch(&train.feature_matrix())?;
        let dim = model.clusters.dim.max(1);
        let mut neighborhoods = Vec::new();
        let mut labels = Vec::new();
        for (e, &lab) in emb.chunks(dim).zip(&pre.labels) {
            let summary = model.weighted_summaries_embedded(e);
            if !summary.is_empty() {
                neighborhoods.push(summary.contributors);
                labels.push(lab);
            }
        }
        Ok(Self {
            neighborhoods,
            labels,
            alpha,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn hazards(&self, tables: &[EventTable<T>], rows: &[usize]) -> HazardTensor<T> {
        let (nb, m) = (tables[0].num_bins(), tables[0].num_events());
        let mut psi = vec![T::zero(); rows.len() * nb * m];
        let mut den = vec![T::zero(); rows.len() * nb];
        for (r, &i) in rows.iter().enumerate() {
            let mut table = EventTable::zeros(nb, m);
            for &(q, k) in &self.neighborhoods[i] {
                table.add_scaled(&tables[q], k);
            }
            den[r * nb..(r + 1) * nb].copy_from_slice(table.at_risk_raw());
            for l in 1..=nb {
                let n = table.n(l);
                if n > T::zero() {
                    for delta in 1..=m {
                        psi[(r * nb + l - 1) * m + delta - 1] = table.d(l, delta) / n;
                    }
                }
            }
        }
        HazardTensor::from_parts(rows.len(), nb, m, psi, den)
    }

    fn batch_labels(&self, rows: &[usize]) -> Vec<TimeLabel> {
        rows.iter().map(|&i| self.labels[i]).collect()
    }

    /// Loss over the subjects `rows`.
    pub fn loss(&self, params: &SftParams<T>, rows: &[usize]) -> T {
        let tables = sft_counts(params);
        let hz = self.hazards(&tables, rows);
        let labels = self.batch_labels(rows);
        let nll = loss_nll(&hz, &labels);
        let ranking = if self.alpha < T::one() {
            loss_ranking(&cifs_from_hazards(&hz), &labels, self.sigma)
        } else {
            T::zero()
        };
        total_loss(self.alpha, nll, ranking)
    }

    /// Loss over `rows` and its gradient with respect to [`SftParams::flat`].
    pub fn loss_and_grad(&self, params: &SftParams<T>, rows: &[usize]) -> (T, Vec<T>) {
        let (nb, m, nq) = (params.num_bins, params.num_events, params.num_clusters);
        let tables = sft_counts(params);
        let hz = self.hazards(&tables, rows);
        let labels = self.batch_labels(rows);
        let nll = loss_nll(&hz, &labels);
        let mut gpsi = vec![T::zero(); rows.len() * nb * m];
        if self.alpha > T::zero() {
            nll_hazard_grad(&hz, &labels, self.alpha, &mut gpsi);
        }
        let ranking = if self.alpha < T::one() {
            ranking_loss_and_hazard_grad(&hz, &labels, self.sigma, T::one() - self.alpha, &mut gpsi)
        } else {
            T::zero()
        };

        // through psi = D / N into the weighted cluster tables
        let mut gd = vec![T::zero(); nq * nb * m];
        let mut gn = vec![T::zero(); nq * nb];
        let mut g_row_d = vec![T::zero(); nb * m];
        let mut g_row_n = vec![T::zero(); nb];
        for (r, &i) in rows.iter().enumerate() {
            for l in 1..=nb {
                let n = hz.at_risk(r, l);
                let mut acc = T::zero();
                for delta in 1..=m {
                    let k = (l - 1) * m + delta - 1;
                    let g = gpsi[r * nb * m + k];
                    if n > T::zero() {
                        g_row_d[k] = g / n;
                        acc += g * hz.psi(r, l, delta) / n;
                    } else {
                        g_row_d[k] = T::zero();
                    }
                }
                g_row_n[l - 1] = -acc;
            }
            for &(q, w) in &self.neighborhoods[i] {
                for (a, &b) in gd[q * nb * m..(q + 1) * nb * m].iter_mut().zip(&g_row_d) {
                    *a += w * b;
                }
                for (a, &b) in gn[q * nb..(q + 1) * nb].iter_mut().zip(&g_row_n) {
                    *a += w * b;
                }
            }
        }

        // through the at-risk recurrence and the exponentials
        let mut g_gamma = vec![T::zero(); nq * nb * m];
        let mut g_gamma_base = vec![T::zero(); nb * m];
        let mut g_omega = vec![T::zero(); nq * nb];
        let mut g_omega_base = vec![T::zero(); nb];
        for q in 0..nq {
            let mut prefix = T::zero();
            for l in 1..=params.support[q] {
                prefix += gn[q * nb + l - 1];
                for delta in 0..m {
                    let k = (l - 1) * m + delta;
                    let g = gd[q * nb * m + k] + prefix;
                    g_gamma[q * nb * m + k] = g * params.gamma[q * nb * m + k].exp();
                    g_gamma_base[k] += g * params.gamma_base[k].exp();
                }
                g_omega[q * nb + l - 1] = prefix * params.omega[q * nb + l - 1].exp();
                g_omega_base[l - 1] += prefix * params.omega_base[l - 1].exp();
            }
        }
        let mut grad = g_gamma;
        grad.extend(g_gamma_base);
        grad.extend(g_omega);
        grad.extend(g_omega_base);
        (total_loss(self.alpha, nll, ranking), grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SftEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_criterion: f64,
}

/// What fine-tuning did: the pre-fine-tuning validation value, the best
/// value reached, and the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct SftReport {
    pub baseline: f64,
    pub best: f64,
    pub records: Vec<SftEpoch>,
    pub status: SftStatus,
}

/// Relative margin a fine-tuned model must beat the original by; smaller
/// differences are rounding noise from the floored initialization.
pub const SFT_ACCEPT_MARGIN: f64 = 1e-9;

/// Fine-tunes the cluster tables of `model`. The result carries the tuned
/// tables only if they improve the validation criterion on `valid`;
/// otherwise it is the original model marked as rejected.
pub fn fine_tune_summaries<T: Scalar>(
    model: &TrainedDkaj<T>,
    train: &Cohort<T>,
    valid: &Cohort<T>,
    cfg: &SftConfig,
    criterion: EarlyStopCriterion,
    eval_grid: &EvalGrid<T>,
) -> Result<(TrainedDkaj<T>, SftReport)> {
    cfg.validate()?;
    let alpha = T::of(cfg.alpha);
    let sigma = T::of(cfg.sigma);
    let evaluate =
        |m: &TrainedDkaj<T>| m.validation_criterion(valid, criterion, alpha, sigma, eval_grid);
    let baseline = evaluate(model)?;
    let objective = SftObjective::from_model(model, train, alpha, sigma)?;
    let mut report = SftReport {
        baseline,
        best: baseline,
        records: Vec::new(),
        status: SftStatus::Rejected,
    };
    if objective.len() < 2 || model.clusters.num_clusters() == 0 {
        let mut out = model.clone();
        out.sft = SftStatus::Rejected;
        return Ok((out, report));
    }

    let mut params = SftParams::init(&model.clusters.tables);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.learning_rate, params.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..objective.len()).collect();
    let batches = batch_bounds(order.len(), cfg.batch_size);
    let with_tables = |p: &SftParams<T>| {
        let mut m = model.clone();
        m.clusters = ClusterModel {
            tables: sft_counts(p),
            ..model.clusters.clone()
        };
        m
    };
    let mut best: Option<TrainedDkaj<T>> = None;
    let mut best_value = baseline;
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &(start, end) in &batches {
            let rows = &order[start..end];
            let (loss, grad) = objective.loss_and_grad(&params, rows);
            loss_sum += loss.as_f64() * rows.len() as f64;
            let mut theta = params.flat();
            opt.apply(&mut theta, &grad);
            params.set_flat(&theta);
        }
        let candidate = with_tables(&params);
        let value = evaluate(&candidate)?;
        let train_loss = loss_sum / order.len() as f64;
        debug!("sft epoch {epoch}: loss {train_loss:.6}, validation {value:.6}");
        report.records.push(SftEpoch {
            epoch,
            train_loss,
            valid_criterion: value,
        });
        let margin = SFT_ACCEPT_MARGIN * best_value.abs().max(1.0);
        let shifted = match criterion {
            EarlyStopCriterion::Ctd => value - margin,
            _ => value + margin,
        };
        if criterion.improves(shifted, best_value) {
            best_value = value;
            best = Some(candidate);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    report.best = best_value;
    Ok(match best {
        Some(mut tuned) => {
            tuned.sft = SftStatus::Accepted;
            report.status = SftStatus::Accepted;
            (tuned, report)
        }
        None => {
            let mut out = model.clone();
            out.sft = SftStatus::Rejected;
            (out, report)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predict::tests::random_model;
    use crate::survival::test_support::d0;
    use crate::survival::{breslow_preprocess, build_event_grid, risk_event_counts};
    use crate::train::eval_grid_for;
    use rand::Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    #[test]
    fn init_reproduces_counts() {
        let t = EventTable::from_parts(2, 1, vec![3.0, 0.0], vec![4.0, 1.0]).unwrap();
        let p = SftParams::init(std::slice::from_ref(&t));
        assert!((p.gamma[0] - 3f64.ln()).abs() < 1e-15);
        assert!((p.gamma[1] - 1e-12f64.ln()).abs() < 1e-12);
        let c = sft_counts(&p);
        assert!((c[0].d(1, 1) - (3.0 + 1e-12)).abs() < 1e-15);
        assert!((c[0].d(2, 1) - 2e-12).abs() < 1e-20);
        for l in 1..=2 {
            assert!(rel(c[0].n(l), t.n(l)) < 1e-6);
        }
    }

    #[test]
    fn d0_single_cluster_recurrence() {
        let cohort = d0();
        let grid = build_event_grid(&cohort).unwrap();
        let pre = breslow_preprocess(&cohort, &grid);
        let pop = risk_event_counts(&pre);
        let c = sft_counts(&SftParams::init(&[pop]));
        assert!((c[0].n(1) - 3.0).abs() < 1e-9);
        assert!((c[0].n(2) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn floor_parameters_telescope() {
        let t = EventTable::from_parts(3, 2, vec![1.0; 6], vec![9.0, 6.0, 3.0]).unwrap();
        let mut p = SftParams::init(&[t]);
        let floor = 1e-12f64.ln();
        p.gamma.iter_mut().for_each(|v| *v = floor);
        p.omega.iter_mut().for_each(|v| *v = floor);
        let c = sft_counts(&p);
        for (l, expected) in [(1, 18e-12), (2, 12e-12), (3, 6e-12)] {
            assert!(rel(c[0].n(l), expected) < 1e-9);
        }
        assert!(c[0].at_risk_raw().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn support_keeps_trailing_zeros() {
        let t = EventTable::from_parts(3, 1, vec![1.0, 0.0, 0.0], vec![2.0, 1.0, 0.0]).unwrap();
        let p = SftParams::init(std::slice::from_ref(&t));
        assert_eq!(p.support, vec![2]);
        let c = sft_counts(&p);
        assert_eq!(c[0].n(3), 0.0);
        assert_eq!(c[0].d(3, 1), 0.0);
    }

    #[test]
    fn init_predictions_match() {
        for seed in 0..10 {
            let (_, model) = random_model(seed, 40, 2, 0.4, 1.5);
            let tuned = TrainedDkaj {
                clusters: ClusterModel {
                    tables: sft_counts(&SftParams::init(&model.clusters.tables)),
                    ..model.clusters.clone()
                },
                ..model.clone()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..20 {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a = model.predict_curves(&x).unwrap();
                let b = tuned.predict_curves(&x).unwrap();
                for (ca, cb) in a.cif.iter().zip(&b.cif) {
                    for (u, v) in ca.values().iter().zip(cb.values()) {
                        // relative, with values below 1e-3 compared at that scale
                        assert!(
                            (u - v).abs() <= 1e-6 * u.abs().max(v.abs()).max(1e-3),
                            "{u} vs {v}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn single_subject_hand_case() {
        // one cluster holding one event at bin 1 of 1; the subject is its own neighbor with K = 1
        let t = EventTable::from_parts(1, 1, vec![1.0], vec![1.0]).unwrap();
        let p = SftParams::init(&[t]);
        let obj = SftObjective {
            neighborhoods: vec![vec![(0, 1.0)]],
            labels: vec![TimeLabel { kappa: 1, event: 1 }],
            alpha: 1.0,
            sigma: 1.0,
        };
        let d: f64 = 1.0 + 1e-12;
        let n = d + 2e-12;
        let expected = -((d / n).ln() - d / n);
        assert!((obj.loss(&p, &[0]) - expected).abs() < 1e-12);
    }

    pub(crate) fn sft_fd_check(seed: u64, alpha: f64) {
        let (cohort, model) = random_model(seed, 12, 1 + (seed as usize % 3), 0.3, 2.0);
        let obj = SftObjective::from_model(&model, &cohort, alpha, 0.5).unwrap();
        let mut params = SftParams::init(&model.clusters.tables);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let theta: Vec<f64> = (0..params.num_params())
            .map(|_| rng.random_range(-2.0..1.0))
            .collect();
        params.set_flat(&theta);
        let rows: Vec<usize> = (0..obj.len()).collect();
        let (_, grad) = obj.loss_and_grad(&params, &rows);
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut p = params.clone();
            let mut t = theta.clone();
            t[k] += h;
            p.set_flat(&t);
            let up = obj.loss(&p, &rows);
            t[k] -= 2.0 * h;
            p.set_flat(&t);
            let down = obj.loss(&p, &rows);
            let numeric = (up - down) / (2.0 * h);
            let scale = numeric.abs().max(grad[k].abs()).max(1e-7);
            assert!(
                (numeric - grad[k]).abs() / scale <= 1e-4 || (numeric - grad[k]).abs() < 1e-9,
                "seed {seed} alpha {alpha} coord {k}: numeric {numeric} analytic {}",
                grad[k]
            );
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..8 {
            for alpha in [0.0, 0.5, 1.0] {
                sft_fd_check(seed, alpha);
            }
        }
    }

    #[test]
    fn zero_learning_rate_backtracks() {
        let (cohort, model) = random_model(11, 60, 2, 0.3, 2.0);
        let train = cohort.subset(&(0..40).collect::<Vec<_>>()).unwrap();
        let valid = cohort.subset(&(40..60).collect::<Vec<_>>()).unwrap();
        let grid = eval_grid_for(&[&train, &valid]).unwrap();
        let cfg = SftConfig {
            enabled: true,
            learning_rate: 0.0,
            max_epochs: 3,
            batch_size: 16,
            ..Default::default()
        };
        let (out, report) = fine_tune_summaries(
            &model,
            &cohort,
            &valid,
            &cfg,
            EarlyStopCriterion::Ibs,
            &grid,
        )
        .unwrap();
        assert_eq!(report.status, SftStatus::Rejected);
        assert_eq!(out.clusters, model.clusters);
        assert_eq!(out.sft, SftStatus::Rejected);
    }

    #[test]
    fn improvement_is_accepted() {
        let (cohort, model) = random_model(13, 60, 2, 0.3, f64::INFINITY);
        let grid = eval_grid_for(&[&cohort]).unwrap();
        let cfg = SftConfig {
            enabled: true,
            learning_rate: 0.05,
            max_epochs: 30,
            batch_size: 60,
            ..Default::default()
        };
        let (out, report) = fine_tune_summaries(
            &model,
            &cohort,
            &cohort,
            &cfg,
            EarlyStopCriterion::Objective,
            &grid,
        )
        .unwrap();
        assert_eq!(report.status, SftStatus::Accepted);
        assert_eq!(out.sft, SftStatus::Accepted);
        assert!(report.best < report.baseline);
    }

    #[test]
    fn tuning_never_worsens_validation_and_is_deterministic() {
        let (cohort, model) = random_model(12, 80, 2, 0.3, 2.0);
        let valid = cohort.subset(&(50..80).collect::<Vec<_>>()).unwrap();
        let grid = eval_grid_for(&[&cohort, &valid]).unwrap();
        let cfg = SftConfig {
            enabled: true,
            learning_rate: 0.05,
            max_epochs: 20,
            batch_size: 32,
            ..Default::default()
        };
        for criterion in [
            EarlyStopCriterion::Ibs,
            EarlyStopCriterion::Objective,
            EarlyStopCriterion::Ctd,
        ] {
            let (out, report) =
                fine_tune_summaries(&model, &cohort, &valid, &cfg, criterion, &grid).unwrap();
            let after = out
                .validation_criterion(&valid, criterion, 1.0, 1.0, &grid)
                .unwrap();
            assert!(
                !criterion.improves(report.baseline, after),
                "{criterion:?}: {} -> {after}",
                report.baseline
            );
            let (again, report2) =
                fine_tune_summaries(&model, &cohort, &valid, &cfg, criterion, &grid).unwrap();
            assert_eq!(out, again);
            assert_eq!(report, report2);
        }
    }
}
