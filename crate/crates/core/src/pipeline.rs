//! End-to-end fitting: discretize, train the embedding, cluster the training
//! embeddings, tabulate clusters, and optionally fine-tune the tables.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cluster::ClusterModel;
use crate::embedding::{tau_from_min_kernel_weight, EmbeddingConfig};
use crate::error::{DkajError, Result};
use crate::metrics::EvalGrid;
use crate::predict::TrainedDkaj;
use crate::scalar::Scalar;
use crate::sft::{fine_tune_summaries, SftConfig, SftReport};
use crate::survival::{risk_event_counts, Cohort};
use crate::train::{eval_grid_for, train_embedding, DiscreteTimeMap, TrainConfig, TrainingLog};

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub embedding: EmbeddingConfig,
    pub train: TrainConfig,
    /// Cluster radius; `f64::INFINITY` puts every training point in one cluster.
    pub epsilon: f64,
    /// Smallest kernel weight an exemplar may have and still contribute.
    pub min_kernel_weight: f64,
    /// Seed for shuffling the clustering order; input order when `None`.
    pub cluster_shuffle_seed: Option<u64>,
    pub sft: SftConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            train: TrainConfig::default(),
            epsilon: 0.0,
            min_kernel_weight: 0.01,
            cluster_shuffle_seed: None,
            sft: SftConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.train.validate()?;
        if self.sft.enabled {
            self.sft.validate()?;
        }
        if !(self.epsilon >= 0.0) {
            return Err(DkajError::InvalidConfig(
                "epsilon must be nonnegative".into(),
            ));
        }
        if !(self.min_kernel_weight >= 0.0 && self.min_kernel_weight < 1.0) {
            return Err(DkajError::InvalidConfig(
                "min_kernel_weight must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        tau_from_min_kernel_weight(self.min_kernel_weight)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput<T> {
    pub model: TrainedDkaj<T>,
    pub log: TrainingLog,
    pub sft: Option<SftReport>,
    pub eval_grid: EvalGrid<T>,
}

pub fn fit_dkaj<T: Scalar>(
    train: &Cohort<T>,
    valid: &Cohort<T>,
    cfg: &FitConfig,
) -> Result<FitOutput<T>> {
    cfg.validate()?;
    if train.num_events() != valid.num_events() || train.num_features() != valid.num_features() {
        return Err(DkajError::SchemaMismatch(
            "training and validation cohorts differ in shape".into(),
        ));
    }
    let dtm = DiscreteTimeMap::fit(train, cfg.train.num_time_steps)?;
    info!(
        "training on {} subjects with {} time bins",
        train.len(),
        dtm.num_bins()
    );
    let (mlp, log) = train_embedding(train, valid, &dtm, &cfg.embedding, &cfg.train)?;
    info!(
        "best epoch {} with validation criterion {:.6}",
        log.best_epoch,
        log.best_criterion()
    );

    let pre = dtm.preprocess(train);
    let emb = mlp.embed_batch(&train.feature_matrix())?;
    let order = cfg.cluster_shuffle_seed.map(|seed| {
        let mut o: Vec<usize> = (0..train.len()).collect();
        o.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        o
    });
    let clusters = ClusterModel::build(
        &emb,
        mlp.embed_dim(),
        &pre,
        cfg.epsilon,
        cfg.tau(),
        order.as_deref(),
    )?;
    info!("{} clusters", clusters.num_clusters());
    let population = risk_event_counts(&pre);
    let mut model = TrainedDkaj::new(mlp, clusters, dtm, population)?;
    let eval_grid = eval_grid_for(&[train, valid])?;

    let mut report = None;
    if cfg.sft.enabled {
        let (tuned, r) = fine_tune_summaries(
            &model,
            train,
            valid,
            &cfg.sft,
            cfg.train.early_stop_criterion,
            &eval_grid,
        )?;
        info!(
            "summary fine-tuning {:?}: {:.6} -> {:.6}",
            r.status, r.baseline, r.best
        );
        model = tuned;
        report = Some(r);
    }
    Ok(FitOutput {
        model,
        log,
        sft: report,
        eval_grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, split_train_valid_test, SynthConfig};
    use crate::predict::SftStatus;

    fn small() -> FitConfig {
        FitConfig {
            embedding: EmbeddingConfig {
                num_layers: 1,
                hidden_units: 8,
                embed_dim: 2,
                ..Default::default()
            },
            train: TrainConfig {
                batch_size: 64,
                max_epochs: 5,
                num_time_steps: 20,
                ..Default::default()
            },
            epsilon: 0.3,
            ..Default::default()
        }
    }

    #[test]
    fn fits_end_to_end_and_is_deterministic() {
        let cohort = generate_synthetic(&SynthConfig {
            n: 300,
            p: 3,
            weights: vec![vec![1.0, 0.0, -0.5], vec![-1.0, 0.5, 0.0]],
            censoring_rate: 0.3,
            seed: 1,
        })
        .unwrap();
        let (train, valid, _) = split_train_valid_test(&cohort, 0).unwrap();
        let mut cfg = small();
        cfg.sft.enabled = true;
        cfg.sft.max_epochs = 3;
        let a = fit_dkaj(&train, &valid, &cfg).unwrap();
        let b = fit_dkaj(&train, &valid, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_ne!(a.model.sft, SftStatus::NotRun);
        assert_eq!(a.model.clusters.assignments.len(), train.len());
        let shuffled = fit_dkaj(
            &train,
            &valid,
            &FitConfig {
                cluster_shuffle_seed: Some(3),
                ..small()
            },
        )
        .unwrap();
        assert_eq!(shuffled.model.clusters.assignments.len(), train.len());
        assert!(fit_dkaj(
            &train,
            &valid,
            &FitConfig {
                min_kernel_weight: 1.0,
                ..small()
            }
        )
        .is_err());
    }
}

#[cfg(test)]
mod replay {
    use super::*;
    use crate::data::{generate_synthetic, split_train_valid_test, SynthConfig};

    #[test]
    fn fitted_model_replays_logged_criterion() {
        let cohort = generate_synthetic(&SynthConfig {
            n: 300,
            p: 3,
            weights: vec![vec![1.0, 0.0, -0.5], vec![-1.0, 0.5, 0.0]],
            censoring_rate: 0.3,
            seed: 1,
        })
        .unwrap();
        let (train, valid, _) = split_train_valid_test(&cohort, 0).unwrap();
        let cfg = FitConfig {
            embedding: EmbeddingConfig {
                num_layers: 1,
                hidden_units: 8,
                embed_dim: 2,
                ..Default::default()
            },
            train: TrainConfig {
                batch_size: 64,
                max_epochs: 4,
                num_time_steps: 16,
                ..Default::default()
            },
            epsilon: 0.0,
            min_kernel_weight: 0.0,
            ..Default::default()
        };
        let out = fit_dkaj(&train, &valid, &cfg).unwrap();
        let t = &cfg.train;
        let replay = out
            .model
            .validation_criterion(
                &valid,
                t.early_stop_criterion,
                t.alpha,
                t.sigma,
                &out.eval_grid,
            )
            .unwrap();
        assert!(
            (replay - out.log.best_criterion()).abs() < 1e-9,
            "{replay} vs {}",
            out.log.best_criterion()
        );
    }
}
