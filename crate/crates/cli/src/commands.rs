//! The four subcommands as library functions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dkaj::data::{
    generate_synthetic, load_cohort, split_train_valid_indices, write_cohort_csv, ColumnKind,
    FeatureSchema, FittedColumn, SynthConfig,
};
use dkaj::embedding::kernel;
use dkaj::metrics::{evaluate_predictor, Constant, LinearInterpolated};
use dkaj::pipeline::fit_dkaj;
use dkaj::predict::Explanation;
use dkaj::sft::SftReport;
use dkaj::{CifSet, Cohort};
use log::info;
use serde::Serialize;

use crate::config::RunConfig;
use crate::model_file::{Hyperparameters, ModelBundle};

pub const MODEL_FILE: &str = "model.json";
pub const TRAINING_LOG: &str = "training_log.csv";
pub const SFT_LOG: &str = "sft_log.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const CLUSTER_CIFS_FILE: &str = "cluster_cifs.csv";
pub const CLUSTER_FEATURES_FILE: &str = "cluster_features.csv";
pub const KERNEL_MATRIX_FILE: &str = "kernel_matrix.csv";
pub const EXPLANATIONS_FILE: &str = "explanations.json";

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| {
        format!("cannot create `{}`", path.display())
    })?))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create directory `{}`", dir.display()))
}

/// Mean encoded features of each cluster's training members.
fn cluster_feature_means(train: &Cohort, assignments: &[usize], num_clusters: usize) -> Vec<f64> {
    let p = train.num_features();
    let mut sums = vec![0.0; num_clusters * p];
    let mut counts = vec![0usize; num_clusters];
    for (r, &q) in train.records().iter().zip(assignments) {
        counts[q] += 1;
        for (s, v) in sums[q * p..(q + 1) * p].iter_mut().zip(&r.features) {
            *s += v;
        }
    }
    for (q, &c) in counts.iter().enumerate() {
        for s in &mut sums[q * p..(q + 1) * p] {
            *s /= c.max(1) as f64;
        }
    }
    sums
}

fn sft_log_csv(report: &SftReport) -> String {
    let mut out = format!("epoch,train_loss,valid_criterion\n0,,{}\n", report.baseline);
    for r in &report.records {
        out.push_str(&format!(
            "{},{},{}\n",
            r.epoch, r.train_loss, r.valid_criterion
        ));
    }
    out
}

/// Fits a model from a run config and returns the bundle without writing it.
pub fn fit_bundle(cfg: &RunConfig) -> Result<(ModelBundle, dkaj::pipeline::FitOutput<f64>)> {
    let spec = &cfg.data.columns;
    let raw = load_cohort(&cfg.data.train, spec).context("data.train")?;
    // rows of the training file that went into training, in training order
    let (raw_train, raw_valid, train_rows) = match &cfg.data.valid {
        Some(path) => {
            let rows = (0..raw.len()).collect();
            (raw, load_cohort(path, spec).context("data.valid")?, rows)
        }
        None => {
            let (tr, va) = split_train_valid_indices(raw.len(), cfg.seed).context("data.train")?;
            (raw.subset(&tr), raw.subset(&va), tr)
        }
    };
    let (schema, train, mut rest) = FeatureSchema::fit_apply(&raw_train, &[&raw_valid])?;
    let valid = rest.pop().expect("one validation table");
    info!(
        "{} training and {} validation rows, {} features",
        train.len(),
        valid.len(),
        train.num_features()
    );
    let out = fit_dkaj(&train, &valid, &cfg.fit_config())?;
    let clusters = &out.model.clusters;
    let mut model = out.model.clone();
    for id in &mut model.clusters.exemplar_ids {
        *id = train_rows[*id];
    }
    let bundle = ModelBundle {
        model,
        columns: ModelBundle::explicit_columns(spec, &schema),
        cluster_feature_means: cluster_feature_means(
            &train,
            &clusters.assignments,
            clusters.num_clusters(),
        ),
        schema,
        hyperparameters: Hyperparameters::from_run(cfg),
        eval_grid: out.eval_grid.clone(),
    };
    Ok((bundle, out))
}

/// `fit`: writes the model file and training logs into the output directory.
pub fn fit(config: &Path) -> Result<PathBuf> {
    let cfg = RunConfig::load(config)?;
    let (bundle, out) = fit_bundle(&cfg)?;
    create_dir(&cfg.output_dir)?;
    let model_path = cfg.output_dir.join(MODEL_FILE);
    bundle.save(&model_path)?;
    std::fs::write(cfg.output_dir.join(TRAINING_LOG), out.log.to_csv())?;
    if let Some(report) = &out.sft {
        std::fs::write(cfg.output_dir.join(SFT_LOG), sft_log_csv(report))?;
    }
    Ok(model_path)
}

/// Reads a CSV in the model's training layout and encodes it.
pub fn load_encoded(bundle: &ModelBundle, data: &Path) -> Result<Cohort> {
    let raw = load_cohort(data, &bundle.columns)
        .with_context(|| format!("cannot load `{}`", data.display()))?;
    Ok(bundle.schema.transform(&raw)?)
}

/// `evaluate`: per-event `C^td` and IBS of the model and of the population
/// estimate, plus the model's early-stopping criterion on these rows.
pub fn evaluate(model: &Path, data: &Path, out_dir: &Path) -> Result<PathBuf> {
    let bundle = ModelBundle::load(model)?;
    let cohort = load_encoded(&bundle, data)?;
    let m = &bundle.model;
    let preds = m.predict_batch(&cohort.feature_matrix())?;
    let grid = &bundle.eval_grid;
    let mut rows = evaluate_predictor("dkaj", &LinearInterpolated(&preds), &cohort, grid)?;
    rows.extend(evaluate_predictor(
        "population_aj",
        &Constant(&m.population_cifs),
        &cohort,
        grid,
    )?);
    let hp = &bundle.hyperparameters.train;
    let criterion =
        m.validation_criterion(&cohort, hp.early_stop_criterion, hp.alpha, hp.sigma, grid)?;

    create_dir(out_dir)?;
    let path = out_dir.join(METRICS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    w.write_record(["model", "event", "metric", "value"])?;
    for r in &rows {
        w.write_record([
            r.model.clone(),
            r.event.to_string(),
            r.metric.clone(),
            r.value.to_string(),
        ])?;
    }
    let name = serde_json::to_value(hp.early_stop_criterion)?;
    let name = name.as_str().unwrap_or("criterion").to_string();
    w.write_record([
        "dkaj".to_string(),
        "all".into(),
        format!("criterion_{name}"),
        criterion.to_string(),
    ])?;
    w.flush()?;
    Ok(path)
}

#[derive(Serialize)]
struct CurveSamples {
    times: Vec<f64>,
    survival: Vec<f64>,
    cif: Vec<Vec<f64>>,
}

impl CurveSamples {
    fn new(cifs: &CifSet, times: &[f64]) -> Self {
        Self {
            times: times.to_vec(),
            survival: times.iter().map(|&t| cifs.survival.eval(t)).collect(),
            cif: cifs
                .cif
                .iter()
                .map(|c| times.iter().map(|&t| c.eval(t)).collect())
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct SubjectReport {
    row: usize,
    fallback: bool,
    exemplar_ids: Vec<usize>,
    clusters: Vec<usize>,
    weights: Vec<f64>,
    event_probabilities: Option<Vec<f64>>,
    conditional_medians: Vec<Option<f64>>,
    curves: CurveSamples,
}

impl SubjectReport {
    fn new(row: usize, e: Explanation<f64>, times: &[f64]) -> Self {
        Self {
            row: row + 1,
            fallback: e.fallback,
            curves: CurveSamples::new(&e.cifs, times),
            exemplar_ids: e.exemplar_ids,
            clusters: e.clusters,
            weights: e.weights,
            event_probabilities: e.event_probabilities,
            conditional_medians: e.conditional_medians,
        }
    }
}

/// `explain --data`: one record per row, as a JSON array.
pub fn explain_subjects(model: &Path, data: &Path, out_dir: &Path) -> Result<PathBuf> {
    use rayon::prelude::*;
    let bundle = ModelBundle::load(model)?;
    let cohort = load_encoded(&bundle, data)?;
    let times = bundle.model.grid().times().to_vec();
    let reports = cohort
        .records()
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(SubjectReport::new(
                i,
                bundle.model.explain(&r.features)?,
                &times,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(out_dir)?;
    let path = out_dir.join(EXPLANATIONS_FILE);
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &reports)?;
    writeln!(w)?;
    w.flush()?;
    Ok(path)
}

/// Cluster positions ordered by decreasing event-1 incidence at the last grid
/// time; ties keep cluster order.
pub fn risk_order(curves: &[CifSet]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..curves.len()).collect();
    order.sort_by(|&a, &b| {
        curves[b]
            .event(1)
            .last_value()
            .total_cmp(&curves[a].event(1).last_value())
    });
    order
}

/// `explain --clusters`: cluster table, per-cluster curves, feature summaries
/// and the exemplar kernel matrix of the largest `max_kernel` clusters.
pub fn explain_clusters(model: &Path, out_dir: &Path, max_kernel: usize) -> Result<Vec<PathBuf>> {
    let bundle = ModelBundle::load(model)?;
    let m = &bundle.model;
    let c = &m.clusters;
    let curves = m.cluster_curves();
    let sizes = c.cluster_sizes();
    let order = risk_order(&curves);
    let num_events = m.num_events();
    create_dir(out_dir)?;
    let mut written = Vec::new();

    let path = out_dir.join(CLUSTERS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec![
        "rank".to_string(),
        "cluster".into(),
        "exemplar_id".into(),
        "size".into(),
    ];
    header.extend((1..=num_events).map(|d| format!("risk_event_{d}")));
    w.write_record(&header)?;
    for (rank, &q) in order.iter().enumerate() {
        let mut row = vec![
            rank.to_string(),
            q.to_string(),
            c.exemplar_ids[q].to_string(),
            sizes[q].to_string(),
        ];
        row.extend(curves[q].cif.iter().map(|f| f.last_value().to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join(CLUSTER_CIFS_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["cluster".to_string(), "time".into(), "survival".into()];
    header.extend((1..=num_events).map(|d| format!("cif_event_{d}")));
    w.write_record(&header)?;
    for &q in &order {
        for &t in m.grid().times() {
            let mut row = vec![
                q.to_string(),
                t.to_string(),
                curves[q].survival.eval(t).to_string(),
            ];
            row.extend(curves[q].cif.iter().map(|f| f.eval(t).to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    written.push(path);

    // continuous columns are reported in original units, binary and one-hot
    // columns as the fraction of members equal to one
    let path = out_dir.join(CLUSTER_FEATURES_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let names = bundle.schema.output_names();
    let p = names.len();
    let mut header = vec!["cluster".to_string(), "size".into()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for &q in &order {
        let means = &bundle.cluster_feature_means[q * p..(q + 1) * p];
        let mut row = vec![q.to_string(), sizes[q].to_string()];
        for (col, (_, kind, range)) in bundle
            .schema
            .columns
            .iter()
            .zip(bundle.schema.output_groups())
        {
            for &v in &means[range] {
                let shown = match (kind, col) {
                    (ColumnKind::Continuous, FittedColumn::Continuous { mean, std, .. }) => {
                        v * std + mean
                    }
                    _ => v,
                };
                row.push(shown.to_string());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);

    let mut largest: Vec<usize> = (0..c.num_clusters()).collect();
    largest.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    largest.truncate(max_kernel);
    let path = out_dir.join(KERNEL_MATRIX_FILE);
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["cluster".to_string()];
    header.extend(largest.iter().map(|q| q.to_string()));
    w.write_record(&header)?;
    for &a in &largest {
        let mut row = vec![a.to_string()];
        for &b in &largest {
            row.push(kernel(c.exemplar_embedding(a), c.exemplar_embedding(b))?.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    written.push(path);
    Ok(written)
}

/// Path of the configuration copy written next to simulated data.
pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.json");
    PathBuf::from(s)
}

/// `simulate`: draws a synthetic cohort and writes it with a copy of its config.
pub fn simulate(config: &Path, out: &Path) -> Result<PathBuf> {
    let text = std::fs::read_to_string(config)
        .with_context(|| format!("cannot read config `{}`", config.display()))?;
    let cfg: SynthConfig = serde_json::from_str(&text)
        .with_context(|| format!("invalid config `{}`", config.display()))?;
    let cohort = generate_synthetic(&cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let names: Vec<String> = (1..=cfg.p).map(|j| format!("x{j}")).collect();
    let mut w = create(out)?;
    write_cohort_csv(&mut w, &cohort, &names)?;
    w.flush()?;
    let sidecar = sidecar_path(out);
    std::fs::write(&sidecar, serde_json::to_string_pretty(&cfg)? + "\n")?;
    Ok(sidecar)
}
