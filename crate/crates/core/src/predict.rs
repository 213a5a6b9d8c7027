//! Test-time prediction from a trained embedding plus cluster tables, and the
//! per-subject interpretation quantities derived from a prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterModel;
use crate::embedding::Mlp;
use crate::error::{DkajError, Result};
use crate::metrics::EvalGrid;
use crate::scalar::Scalar;
use crate::survival::{product_limit, CifSet, Cohort, EventTable, EventTimeGrid};
use crate::train::loss::HazardTensor;
use crate::train::{criterion_from_hazards, DiscreteTimeMap, EarlyStopCriterion};

/// Outcome of summary fine-tuning for a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftStatus {
    #[default]
    NotRun,
    Accepted,
    Rejected,
}

/// Kernel-weighted event and at-risk tables for one query, and the clusters
/// that contributed (position, kernel weight), ordered by cluster position.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSummary<T> {
    pub table: EventTable<T>,
    pub contributors: Vec<(usize, T)>,
}

impl<T> WeightedSummary<T> {
    /// True when no exemplar lies within `tau` with positive weight.
    pub fn is_empty(&self) -> bool {
        self.contributors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedDkaj<T> {
    pub mlp: Mlp<T>,
    pub clusters: ClusterModel<T>,
    pub time_map: DiscreteTimeMap<T>,
    pub population: EventTable<T>,
    pub population_cifs: CifSet<T>,
    pub sft: SftStatus,
}

impl<T: Scalar> TrainedDkaj<T> {
    pub fn new(
        mlp: Mlp<T>,
        clusters: ClusterModel<T>,
        time_map: DiscreteTimeMap<T>,
        population: EventTable<T>,
    ) -> Result<Self> {
        if population.num_bins() != time_map.num_bins() {
            return Err(DkajError::ShapeMismatch {
                expected: time_map.num_bins(),
                got: population.num_bins(),
            });
        }
        if mlp.embed_dim() != clusters.dim {
            return Err(DkajError::ShapeMismatch {
                expected: clusters.dim,
                got: mlp.embed_dim(),
            });
        }
        if let Some(t) = clusters.tables.iter().find(|t| {
            t.num_bins() != population.num_bins() || t.num_events() != population.num_events()
        }) {
            return Err(DkajError::ShapeMismatch {
                expected: population.num_bins(),
                got: t.num_bins(),
            });
        }
        let population_cifs = product_limit(&population, time_map.grid());
        Ok(Self {
            mlp,
            clusters,
            time_map,
            population,
            population_cifs,
            sft: SftStatus::NotRun,
        })
    }

    pub fn grid(&self) -> &EventTimeGrid<T> {
        self.time_map.grid()
    }

    pub fn num_events(&self) -> usize {
        self.population.num_events()
    }

    pub fn num_features(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn embed(&self, x: &[T]) -> Result<Vec<T>> {
        self.mlp.embed(x)
    }

    /// Weighted summaries for an already embedded query.
    pub fn weighted_summaries_embedded(&self, e: &[T]) -> WeightedSummary<T> {
        let mut table = EventTable::zeros(self.population.num_bins(), self.num_events());
        let mut contributors = Vec::new();
        for (q, d2) in self.clusters.neighbors_within_tau(e) {
            let k = (-d2).exp();
            if k > T::zero() {
                table.add_scaled(&self.clusters.tables[q], k);
                contributors.push((q, k));
            }
        }
        WeightedSummary {
            table,
            contributors,
        }
    }

    pub fn weighted_summaries(&self, x: &[T]) -> Result<WeightedSummary<T>> {
        Ok(self.weighted_summaries_embedded(&self.embed(x)?))
    }

    /// Prediction for an embedded query; the population estimate when no
    /// cluster contributes.
    pub fn predict_embedded(&self, e: &[T]) -> CifSet<T> {
        let summary = self.weighted_summaries_embedded(e);
        if summary.is_empty() {
            self.population_cifs.clone()
        } else {
            product_limit(&summary.table, self.grid())
        }
    }

    pub fn predict_curves(&self, x: &[T]) -> Result<CifSet<T>> {
        Ok(self.predict_embedded(&self.embed(x)?))
    }

    /// Predictions for a row-major `rows x p` feature matrix.
    pub fn predict_batch(&self, x: &[T]) -> Result<Vec<CifSet<T>>> {
        let emb = self.mlp.embed_batch(x)?;
        let d = self.clusters.dim;
        Ok(emb
            .par_chunks(d)
            .map(|e| self.predict_embedded(e))
            .collect())
    }

    /// Contributing clusters with kernel weights normalized to sum to one.
    pub fn cluster_weight_decomposition(&self, x: &[T]) -> Result<Vec<(usize, T)>> {
        normalize(self.weighted_summaries(x)?.contributors)
    }

    pub fn explain(&self, x: &[T]) -> Result<Explanation<T>> {
        let summary = self.weighted_summaries(x)?;
        let fallback = summary.is_empty();
        let cifs = if fallback {
            self.population_cifs.clone()
        } else {
            product_limit(&summary.table, self.grid())
        };
        let weights = if fallback {
            Vec::new()
        } else {
            normalize(summary.contributors)?
        };
        let event_probabilities = event_probability(&cifs).ok();
        let conditional_medians = (1..=self.num_events())
            .map(|delta| conditional_median(&cifs, delta).ok())
            .collect();
        Ok(Explanation {
            exemplar_ids: weights
                .iter()
                .map(|&(q, _)| self.clusters.exemplar_ids[q])
                .collect(),
            clusters: weights.iter().map(|&(q, _)| q).collect(),
            weights: weights.into_iter().map(|(_, w)| w).collect(),
            event_probabilities,
            conditional_medians,
            fallback,
            cifs,
        })
    }

    /// Hazards `d / n` of the weighted summaries for `rows x dim` embeddings,
    /// with the population table standing in for empty neighborhoods.
    pub fn hazards_embedded(&self, emb: &[T]) -> HazardTensor<T> {
        let d = self.clusters.dim.max(1);
        let rows = emb.len() / d;
        let (nb, m) = (self.population.num_bins(), self.num_events());
        let parts: Vec<(Vec<T>, Vec<T>)> = emb
            .par_chunks(d)
            .map(|e| {
                let summary = self.weighted_summaries_embedded(e);
                let table = if summary.is_empty() {
                    &self.population
                } else {
                    &summary.table
                };
                let mut psi = vec![T::zero(); nb * m];
                for l in 1..=nb {
                    let n = table.n(l);
                    if n > T::zero() {
                        for delta in 1..=m {
                            psi[(l - 1) * m + delta - 1] = table.d(l, delta) / n;
                        }
                    }
                }
                (psi, table.at_risk_raw().to_vec())
            })
            .collect();
        let mut psi = Vec::with_capacity(rows * nb * m);
        let mut den = Vec::with_capacity(rows * nb);
        for (p, n) in parts {
            psi.extend(p);
            den.extend(n);
        }
        HazardTensor::from_parts(rows, nb, m, psi, den)
    }

    /// Early-stopping criterion of this model's predictions on `valid`.
    pub fn validation_criterion(
        &self,
        valid: &Cohort<T>,
        criterion: EarlyStopCriterion,
        alpha: T,
        sigma: T,
        eval_grid: &EvalGrid<T>,
    ) -> Result<f64> {
        let emb = self.mlp.embed_batch(&valid.feature_matrix())?;
        let hz = self.hazards_embedded(&emb);
        criterion_from_hazards(
            &hz,
            valid,
            &self.time_map,
            criterion,
            alpha,
            sigma,
            eval_grid,
        )
    }

    /// Aalen-Johansen curves of each cluster on its own.
    pub fn cluster_curves(&self) -> Vec<CifSet<T>> {
        self.clusters
            .tables
            .iter()
            .map(|t| product_limit(t, self.grid()))
            .collect()
    }
}

fn normalize<T: Scalar>(contributors: Vec<(usize, T)>) -> Result<Vec<(usize, T)>> {
    let total: T = contributors.iter().map(|c| c.1).sum();
    if contributors.is_empty() || !(total > T::zero()) {
        return Err(DkajError::EmptyNeighborhood);
    }
    Ok(contributors
        .into_iter()
        .map(|(q, k)| (q, k / total))
        .collect())
}

/// Interpretation of one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation<T> {
    /// Training indices of the contributing exemplars.
    pub exemplar_ids: Vec<usize>,
    /// Cluster positions of the contributing exemplars.
    pub clusters: Vec<usize>,
    pub weights: Vec<T>,
    /// `None` when every CIF is zero at the last grid time.
    pub event_probabilities: Option<Vec<T>>,
    pub conditional_medians: Vec<Option<T>>,
    /// True when no exemplar was in range and the population estimate was used.
    pub fallback: bool,
    pub cifs: CifSet<T>,
}

/// Probability that each event type happens first: CIFs at the last grid
/// time renormalized to sum to one.
pub fn event_probability<T: Scalar>(cifs: &CifSet<T>) -> Result<Vec<T>> {
    let ends: Vec<T> = cifs.cif.iter().map(|c| c.last_value()).collect();
    let total: T = ends.iter().copied().sum();
    if !(total > T::zero()) {
        return Err(DkajError::NoRisk);
    }
    Ok(ends.into_iter().map(|f| f / total).collect())
}

/// Median time to event `delta` given that it happens first: the first knot
/// where `F(t) / F(t_max) >= 1/2`.
pub fn conditional_median<T: Scalar>(cifs: &CifSet<T>, delta: usize) -> Result<T> {
    let curve = cifs.event(delta);
    let end = curve.last_value();
    if !(end > T::zero()) {
        return Err(DkajError::UndefinedMedian(delta));
    }
    let half = T::of(0.5);
    curve
        .knots()
        .iter()
        .zip(curve.values())
        .find(|&(_, &v)| v / end >= half)
        .map(|(&t, _)| t)
        .ok_or(DkajError::UndefinedMedian(delta))
}
