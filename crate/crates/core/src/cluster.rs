//! Greedy epsilon-net exemplar clustering in embedding space and the
//! per-cluster event / at-risk summary tables.

use crate::embedding::squared_distance;
use crate::error::{DkajError, Result};
use crate::scalar::Scalar;
use crate::survival::{EventTable, PreprocessedCohort};

/// Result of the greedy pass: exemplar indices (into the input rows) and,
/// per input row, the position of its exemplar within `exemplars`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub exemplars: Vec<usize>,
    pub assignments: Vec<usize>,
}

/// Epsilon-net clustering of `rows x dim` embeddings, visiting rows in input order.
pub fn epsilon_net_cluster<T: Scalar>(emb: &[T], dim: usize, epsilon: T) -> Clustering {
    let n = emb.len() / dim.max(1);
    let order: Vec<usize> = (0..n).collect();
    epsilon_net_cluster_ordered(emb, dim, epsilon, &order)
}

/// Epsilon-net clustering visiting rows in `order`.
///
/// The first visited row becomes an exemplar. Each later row joins its
/// nearest exemplar (lowest exemplar position on ties) when within
/// `epsilon`, and otherwise becomes a new exemplar.
pub fn epsilon_net_cluster_ordered<T: Scalar>(
    emb: &[T],
    dim: usize,
    epsilon: T,
    order: &[usize],
) -> Clustering {
    let n = emb.len() / dim.max(1);
    let row = |i: usize| &emb[i * dim..(i + 1) * dim];
    let eps_sq = epsilon * epsilon;
    let mut exemplars: Vec<usize> = Vec::new();
    let mut assignments = vec![usize::MAX; n];
    for &i in order {
        let nearest = exemplars
            .iter()
            .enumerate()
            .map(|(q, &e)| (q, squared_distance(row(i), row(e))))
            .fold(None, |best: Option<(usize, T)>, (q, d)| match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((q, d)),
            });
        match nearest {
            Some((q, d)) if d <= eps_sq => assignments[i] = q,
            _ => {
                assignments[i] = exemplars.len();
                exemplars.push(i);
            }
        }
    }
    Clustering {
        exemplars,
        assignments,
    }
}

/// Per-cluster event counts `d^cluster(q)` and at-risk counts `n^cluster(q)`.
pub fn summarize_clusters<T: Scalar>(
    pre: &PreprocessedCohort<T>,
    assignments: &[usize],
    num_clusters: usize,
) -> Vec<EventTable<T>> {
    let mut members: Vec<Vec<_>> = vec![Vec::new(); num_clusters];
    for (j, &q) in assignments.iter().enumerate() {
        members[q].push(pre.labels[j]);
    }
    members
        .iter()
        .map(|labels| EventTable::from_labels(labels, None, pre.num_bins, pre.cohort.num_events()))
        .collect()
}

/// Exemplar embeddings with their cluster tables and the two radii: `epsilon`
/// used to build the clusters and `tau` bounding which exemplars contribute
/// to a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel<T> {
    pub exemplar_ids: Vec<usize>,
    pub exemplar_embeddings: Vec<T>,
    pub dim: usize,
    pub assignments: Vec<usize>,
    pub tables: Vec<EventTable<T>>,
    pub epsilon: f64,
    pub tau: f64,
}

impl<T: Scalar> ClusterModel<T> {
    /// Clusters training embeddings and tabulates every cluster.
    pub fn build(
        emb: &[T],
        dim: usize,
        pre: &PreprocessedCohort<T>,
        epsilon: f64,
        tau: f64,
        order: Option<&[usize]>,
    ) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(DkajError::InvalidConfig(
                "epsilon must be nonnegative".into(),
            ));
        }
        if !(tau > 0.0) {
            return Err(DkajError::InvalidConfig("tau must be positive".into()));
        }
        let n = pre.labels.len();
        if emb.len() != n * dim {
            return Err(DkajError::ShapeMismatch {
                expected: n * dim,
                got: emb.len(),
            });
        }
        let eps = if epsilon.is_infinite() {
            T::infinity()
        } else {
            T::of(epsilon)
        };
        let clustering = match order {
            Some(o) => epsilon_net_cluster_ordered(emb, dim, eps, o),
            None => epsilon_net_cluster(emb, dim, eps),
        };
        let tables = summarize_clusters(pre, &clustering.assignments, clustering.exemplars.len());
        let exemplar_embeddings = clustering
            .exemplars
            .iter()
            .flat_map(|&e| emb[e * dim..(e + 1) * dim].iter().copied())
            .collect();
        Ok(Self {
            exemplar_ids: clustering.exemplars,
            exemplar_embeddings,
            dim,
            assignments: clustering.assignments,
            tables,
            epsilon,
            tau,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.exemplar_ids.len()
    }

    pub fn exemplar_embedding(&self, q: usize) -> &[T] {
        &self.exemplar_embeddings[q * self.dim..(q + 1) * self.dim]
    }

    /// Number of training points in each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters()];
        for &q in &self.assignments {
            sizes[q] += 1;
        }
        sizes
    }

    /// Exemplar positions within distance `tau` of `query`, with squared distances.
    pub fn neighbors_within_tau(&self, query: &[T]) -> Vec<(usize, T)> {
        let tau_sq = if self.tau.is_infinite() {
            T::infinity()
        } else {
            T::of(self.tau * self.tau)
        };
        (0..self.num_clusters())
            .filter_map(|q| {
                let d = squared_distance(query, self.exemplar_embedding(q));
                (d <= tau_sq).then_some((q, d))
            })
            .collect()
    }
}

/// Cluster radius from a squared-radius setting.
pub fn epsilon_from_squared_radius(squared_radius: f64) -> f64 {
    squared_radius.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::test_support::{d0, random_cohort};
    use crate::survival::{breslow_preprocess, build_event_grid, risk_event_counts};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_trace_in_one_dimension() {
        let c = epsilon_net_cluster(&[0.0, 0.5, 2.0], 1, 1.0);
        assert_eq!(c.exemplars, vec![0, 2]);
        assert_eq!(c.assignments, vec![0, 0, 1]);
    }

    #[test]
    fn zero_and_infinite_radius() {
        let emb = [0.0, 0.5, 2.0, 2.0];
        let c = epsilon_net_cluster(&emb, 1, 0.0);
        // the duplicate at 2.0 is within distance 0 of its twin
        assert_eq!(c.exemplars, vec![0, 1, 2]);
        let distinct = [0.0, 0.5, 2.0, 3.0];
        assert_eq!(
            epsilon_net_cluster(&distinct, 1, 0.0).exemplars,
            vec![0, 1, 2, 3]
        );
        let all = epsilon_net_cluster(&distinct, 1, f64::INFINITY);
        assert_eq!(all.exemplars, vec![0]);
        assert!(all.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn ties_go_to_lowest_exemplar() {
        let c = epsilon_net_cluster(&[0.0, 2.0, 1.0], 1, 1.0);
        assert_eq!(c.exemplars, vec![0, 1]);
        assert_eq!(c.assignments[2], 0);
    }

    #[test]
    fn cluster_tables() {
        let cohort = d0();
        let grid = build_event_grid(&cohort).unwrap();
        let pre = breslow_preprocess(&cohort, &grid);
        let pop = risk_event_counts(&pre);
        let single = summarize_clusters(&pre, &[0, 0, 0], 1);
        assert_eq!(single[0], pop);
        let own = summarize_clusters(&pre, &[0, 1, 2], 3);
        assert_eq!(own[0].events_raw(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(own[0].at_risk_raw(), &[1.0, 0.0]);
        assert_eq!(own[1].events_raw(), &[0.0; 4]);
        assert_eq!(own[1].at_risk_raw(), &[1.0, 0.0]);
        assert_eq!(own[2].events_raw(), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(own[2].at_risk_raw(), &[1.0, 1.0]);
    }

    #[test]
    fn neighbor_queries() {
        let cohort = d0();
        let grid = build_event_grid(&cohort).unwrap();
        let pre = breslow_preprocess(&cohort, &grid);
        let emb = [0.0, 5.0, 10.0];
        let model = ClusterModel::build(&emb, 1, &pre, 0.0, f64::INFINITY, None).unwrap();
        assert_eq!(model.neighbors_within_tau(&[4.0]).len(), 3);
        let tight = ClusterModel { tau: 0.5, ..model };
        let hits = tight.neighbors_within_tau(&[5.0]);
        assert_eq!(hits, vec![(1, 0.0)]);
        assert!(ClusterModel::build(&emb, 1, &pre, 0.0, 0.0, None).is_err());
        assert!((epsilon_from_squared_radius(0.1) - 0.31622776601683794).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn net_and_partition_properties(seed in any::<u64>(), n in 1usize..40, eps in 0.0f64..1.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cohort = random_cohort(&mut rng, n, 2);
            let emb: Vec<f64> = (0..n * 2).map(|i| ((i as u64 * 7919 + seed) % 97) as f64 / 30.0).collect();
            let grid = build_event_grid(&cohort).unwrap();
            let pre = breslow_preprocess(&cohort, &grid);
            let model = ClusterModel::build(&emb, 2, &pre, eps, 1.0, None).unwrap();
            let row = |i: usize| &emb[i * 2..i * 2 + 2];
            for (a, &ea) in model.exemplar_ids.iter().enumerate() {
                prop_assert_eq!(model.assignments[ea], a);
                for &eb in &model.exemplar_ids[a + 1..] {
                    prop_assert!(squared_distance(row(ea), row(eb)).sqrt() > eps);
                }
            }
            for (i, &q) in model.assignments.iter().enumerate() {
                prop_assert!(squared_distance(row(i), row(model.exemplar_ids[q])).sqrt() <= eps + 1e-12);
            }
            let pop = risk_event_counts(&pre);
            let mut total = EventTable::zeros(grid.len(), 2);
            for t in &model.tables {
                total.add_scaled(t, 1.0);
                prop_assert!(t.at_risk_raw().windows(2).all(|w| w[1] <= w[0]));
            }
            prop_assert_eq!(total, pop);
        }
    }
}
