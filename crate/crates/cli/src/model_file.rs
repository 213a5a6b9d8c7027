//! The self-contained, versioned JSON model file.
//!
//! Numeric arrays are packed as base64 little-endian words so that a saved
//! model loads back bit for bit.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use dkaj::cluster::ClusterModel;
use dkaj::data::{ColumnSpec, DataSpec, FeatureSchema};
use dkaj::embedding::{Activation, EmbeddingConfig, Mlp};
use dkaj::metrics::EvalGrid;
use dkaj::predict::{SftStatus, TrainedDkaj};
use dkaj::sft::SftConfig;
use dkaj::survival::{EventTable, EventTimeGrid};
use dkaj::train::{DiscreteTimeMap, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::encoding::{ExtF64, F64Array, U64Array};

pub const FORMAT: &str = "dkaj-model";
pub const VERSION: u32 = 1;

/// Hyperparameters the model was fitted with. Paths are left out so that the
/// file depends only on the data and settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparameters {
    pub embedding: EmbeddingConfig,
    pub train: TrainConfig,
    pub epsilon: ExtF64,
    pub min_kernel_weight: f64,
    pub tau: ExtF64,
    pub cluster_shuffle_seed: Option<u64>,
    pub sft: SftConfig,
    pub seed: u64,
}

impl Hyperparameters {
    pub fn from_run(cfg: &RunConfig) -> Self {
        let fit = cfg.fit_config();
        Self {
            embedding: fit.embedding.clone(),
            train: fit.train.clone(),
            epsilon: ExtF64(fit.epsilon),
            min_kernel_weight: fit.min_kernel_weight,
            tau: ExtF64(fit.tau()),
            cluster_shuffle_seed: fit.cluster_shuffle_seed,
            sft: fit.sft.clone(),
            seed: cfg.seed,
        }
    }
}

/// A fitted model with everything needed to preprocess new rows and report on it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    /// Exemplar ids are 0-based data rows of the training file.
    pub model: TrainedDkaj<f64>,
    pub columns: DataSpec,
    pub schema: FeatureSchema,
    pub hyperparameters: Hyperparameters,
    pub eval_grid: EvalGrid<f64>,
    /// Mean encoded feature vector of each cluster's training members, row-major `Q x p`.
    pub cluster_feature_means: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRepr {
    events: F64Array,
    at_risk: F64Array,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRepr {
    activation: Activation,
    sizes: Vec<usize>,
    weights: Vec<F64Array>,
    biases: Vec<F64Array>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClustersRepr {
    epsilon: ExtF64,
    tau: ExtF64,
    dim: usize,
    exemplar_ids: U64Array,
    exemplar_embeddings: F64Array,
    assignments: U64Array,
    /// Per-cluster tables, concatenated.
    events: F64Array,
    at_risk: F64Array,
    feature_means: F64Array,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalGridRepr {
    times: F64Array,
    num_quantiles: usize,
    truncate_pct: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    columns: DataSpec,
    schema: FeatureSchema,
    hyperparameters: Hyperparameters,
    num_events: usize,
    grid: F64Array,
    eval_grid: EvalGridRepr,
    network: NetworkRepr,
    clusters: ClustersRepr,
    population: TableRepr,
    sft: SftStatus,
}

fn ids(v: &[usize]) -> U64Array {
    U64Array(v.iter().map(|&i| i as u64).collect())
}

fn unids(v: U64Array) -> Result<Vec<usize>> {
    v.0.into_iter()
        .map(|i| usize::try_from(i).context("index does not fit this platform"))
        .collect()
}

impl ModelBundle {
    /// The data spec with the feature list made explicit from the fitted schema.
    pub fn explicit_columns(spec: &DataSpec, schema: &FeatureSchema) -> DataSpec {
        DataSpec {
            features: schema
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.name().to_string(),
                    kind: c.kind(),
                })
                .collect(),
            ..spec.clone()
        }
    }

    fn to_file(&self) -> ModelFile {
        let m = &self.model;
        let c = &m.clusters;
        let (mut events, mut at_risk) = (Vec::new(), Vec::new());
        for t in &c.tables {
            events.extend_from_slice(t.events_raw());
            at_risk.extend_from_slice(t.at_risk_raw());
        }
        ModelFile {
            format: FORMAT.into(),
            version: VERSION,
            columns: self.columns.clone(),
            schema: self.schema.clone(),
            hyperparameters: self.hyperparameters.clone(),
            num_events: m.num_events(),
            grid: F64Array(m.grid().times().to_vec()),
            eval_grid: EvalGridRepr {
                times: F64Array(self.eval_grid.times.clone()),
                num_quantiles: self.eval_grid.num_quantiles,
                truncate_pct: self.eval_grid.truncate_pct,
            },
            network: NetworkRepr {
                activation: m.mlp.activation(),
                sizes: m.mlp.sizes().to_vec(),
                weights: m
                    .mlp
                    .weights()
                    .iter()
                    .map(|w| F64Array(w.clone()))
                    .collect(),
                biases: m.mlp.biases().iter().map(|b| F64Array(b.clone())).collect(),
            },
            clusters: ClustersRepr {
                epsilon: ExtF64(c.epsilon),
                tau: ExtF64(c.tau),
                dim: c.dim,
                exemplar_ids: ids(&c.exemplar_ids),
                exemplar_embeddings: F64Array(c.exemplar_embeddings.clone()),
                assignments: ids(&c.assignments),
                events: F64Array(events),
                at_risk: F64Array(at_risk),
                feature_means: F64Array(self.cluster_feature_means.clone()),
            },
            population: TableRepr {
                events: F64Array(m.population.events_raw().to_vec()),
                at_risk: F64Array(m.population.at_risk_raw().to_vec()),
            },
            sft: m.sft,
        }
    }

    fn from_file(f: ModelFile) -> Result<Self> {
        if f.format != FORMAT {
            bail!("not a model file: format is `{}`", f.format);
        }
        if f.version != VERSION {
            bail!(
                "unsupported model file version {} (expected {VERSION})",
                f.version
            );
        }
        let grid = EventTimeGrid::new(f.grid.0)?;
        let (l, m) = (grid.len(), f.num_events);
        let time_map = DiscreteTimeMap::from_grid(grid)?;
        let mlp = Mlp::from_parts(
            f.network.sizes,
            f.network.weights.into_iter().map(|w| w.0).collect(),
            f.network.biases.into_iter().map(|b| b.0).collect(),
            f.network.activation,
        )?;
        let c = f.clusters;
        let exemplar_ids = unids(c.exemplar_ids)?;
        let q = exemplar_ids.len();
        let (ev_len, nr_len) = (l * m, l);
        ensure!(
            c.events.0.len() == q * ev_len && c.at_risk.0.len() == q * nr_len,
            "cluster tables do not match {q} clusters on {l} time bins"
        );
        let tables = c
            .events
            .0
            .chunks(ev_len.max(1))
            .zip(c.at_risk.0.chunks(nr_len))
            .map(|(e, n)| EventTable::from_parts(l, m, e.to_vec(), n.to_vec()))
            .collect::<dkaj::Result<Vec<_>>>()?;
        let p = f.schema.output_dim();
        ensure!(
            c.feature_means.0.len() == q * p,
            "cluster feature summaries have the wrong length"
        );
        let clusters = ClusterModel {
            exemplar_ids,
            exemplar_embeddings: c.exemplar_embeddings.0,
            dim: c.dim,
            assignments: unids(c.assignments)?,
            tables,
            epsilon: c.epsilon.0,
            tau: c.tau.0,
        };
        let population =
            EventTable::from_parts(l, m, f.population.events.0, f.population.at_risk.0)?;
        let mut model = TrainedDkaj::new(mlp, clusters, time_map, population)?;
        model.sft = f.sft;
        ensure!(
            model.num_features() == p,
            "network input width differs from the feature schema"
        );
        Ok(Self {
            model,
            columns: f.columns,
            schema: f.schema,
            hyperparameters: f.hyperparameters,
            eval_grid: EvalGrid {
                times: f.eval_grid.times.0,
                num_quantiles: f.eval_grid.num_quantiles,
                truncate_pct: f.eval_grid.truncate_pct,
            },
            cluster_feature_means: c.feature_means.0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")
            .with_context(|| format!("cannot write `{}`", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read model `{}`", path.display()))?;
        Self::from_json(&text).with_context(|| format!("invalid model file `{}`", path.display()))
    }
}
