use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::load::{CellValue, ColumnKind, RawTable};
use crate::error::{DkajError, Result};
use crate::survival::{Cohort, SubjectRecord};

/// A feature column with statistics fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FittedColumn {
    /// Standardized with the training mean and population standard deviation;
    /// missing values take the training mean.
    Continuous { name: String, mean: f64, std: f64 },
    /// Passed through; missing values take the training mode.
    Binary { name: String, mode: f64 },
    /// One-hot over the sorted training categories; missing values take the
    /// training mode and unseen categories encode as all zeros.
    Categorical {
        name: String,
        categories: Vec<String>,
        mode: String,
    },
}

impl FittedColumn {
    pub fn name(&self) -> &str {
        match self {
            FittedColumn::Continuous { name, .. }
            | FittedColumn::Binary { name, .. }
            | FittedColumn::Categorical { name, .. } => name,
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            FittedColumn::Continuous { .. } => ColumnKind::Continuous,
            FittedColumn::Binary { .. } => ColumnKind::Binary,
            FittedColumn::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    pub fn width(&self) -> usize {
        match self {
            FittedColumn::Categorical { categories, .. } => categories.len(),
            _ => 1,
        }
    }
}

/// Training-fitted preprocessing for every feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSchema {
    pub columns: Vec<FittedColumn>,
    pub num_events: usize,
}

fn most_frequent<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> Option<K> {
    // first maximal key in sorted order
    let mut best: Option<(&K, usize)> = None;
    for (k, &c) in counts {
        if best.is_none_or(|(_, b)| c > b) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k.clone())
}

impl FeatureSchema {
    /// Fits column statistics on `train`. The number of event types is the
    /// largest event code in `train` (at least 1).
    pub fn fit(train: &RawTable) -> Result<Self> {
        if train.is_empty() {
            return Err(DkajError::EmptyCohort);
        }
        let mut columns = Vec::with_capacity(train.columns.len());
        for (j, spec) in train.columns.iter().enumerate() {
            let name = spec.name.clone();
            let numbers: Vec<f64> = train
                .cells
                .iter()
                .filter_map(|row| match &row[j] {
                    CellValue::Number(v) => Some(*v),
                    _ => None,
                })
                .collect();
            let fitted = match spec.kind {
                ColumnKind::Continuous => {
                    if numbers.is_empty() {
                        warn!("column `{name}` has no observed values; using mean 0 and scale 1");
                        FittedColumn::Continuous {
                            name,
                            mean: 0.0,
                            std: 1.0,
                        }
                    } else {
                        let n = numbers.len() as f64;
                        let mean = numbers.iter().sum::<f64>() / n;
                        let var = numbers.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let mut std = var.sqrt();
                        if !(std > 0.0) {
                            warn!("column `{name}` has zero variance on the training rows; scale set to 1");
                            std = 1.0;
                        }
                        FittedColumn::Continuous { name, mean, std }
                    }
                }
                ColumnKind::Binary => {
                    let mut sorted = numbers.clone();
                    sorted.sort_by(f64::total_cmp);
                    let mut mode = 0.0;
                    let mut best = 0;
                    for run in sorted.chunk_by(|a, b| a == b) {
                        if run.len() > best {
                            best = run.len();
                            mode = run[0];
                        }
                    }
                    FittedColumn::Binary { name, mode }
                }
                ColumnKind::Categorical => {
                    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                    for row in &train.cells {
                        match &row[j] {
                            CellValue::Text(s) => *counts.entry(s.clone()).or_default() += 1,
                            CellValue::Number(v) => *counts.entry(v.to_string()).or_default() += 1,
                            CellValue::Missing => {}
                        }
                    }
                    let mode = most_frequent(&counts).unwrap_or_default();
                    FittedColumn::Categorical {
                        name,
                        categories: counts.into_keys().collect(),
                        mode,
                    }
                }
            };
            columns.push(fitted);
        }
        Ok(Self {
            columns,
            num_events: train.max_event().max(1),
        })
    }

    pub fn output_dim(&self) -> usize {
        self.columns.iter().map(FittedColumn::width).sum()
    }

    /// Names of the encoded features; one-hot columns are `name=category`.
    pub fn output_names(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.output_dim());
        for c in &self.columns {
            match c {
                FittedColumn::Categorical {
                    name, categories, ..
                } => {
                    out.extend(categories.iter().map(|k| format!("{name}={k}")));
                }
                other => out.push(other.name().to_string()),
            }
        }
        out
    }

    /// Encoded feature ranges per input column, in order.
    pub fn output_groups(&self) -> Vec<(String, ColumnKind, std::ops::Range<usize>)> {
        let mut start = 0;
        self.columns
            .iter()
            .map(|c| {
                let r = start..start + c.width();
                start = r.end;
                (c.name().to_string(), c.kind(), r)
            })
            .collect()
    }

    fn check(&self, table: &RawTable) -> Result<()> {
        if table.columns.len() != self.columns.len() {
            return Err(DkajError::SchemaMismatch(format!(
                "expected {} feature columns, got {}",
                self.columns.len(),
                table.columns.len()
            )));
        }
        for (c, s) in self.columns.iter().zip(&table.columns) {
            if c.name() != s.name || c.kind() != s.kind {
                return Err(DkajError::SchemaMismatch(format!(
                    "expected column `{}` ({:?}), got `{}` ({:?})",
                    c.name(),
                    c.kind(),
                    s.name,
                    s.kind
                )));
            }
        }
        if let Some(i) = table.events.iter().position(|&e| e > self.num_events) {
            return Err(DkajError::SchemaMismatch(format!(
                "row {} has event code {} but the model knows {} event types",
                i + 1,
                table.events[i],
                self.num_events
            )));
        }
        Ok(())
    }

    /// Encodes one row of cells.
    pub fn encode_row(&self, cells: &[CellValue]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim());
        for (c, cell) in self.columns.iter().zip(cells) {
            match c {
                FittedColumn::Continuous { mean, std, .. } => {
                    let v = match cell {
                        CellValue::Number(v) => *v,
                        _ => *mean,
                    };
                    out.push((v - mean) / std);
                }
                FittedColumn::Binary { mode, .. } => out.push(match cell {
                    CellValue::Number(v) => *v,
                    _ => *mode,
                }),
                FittedColumn::Categorical {
                    categories, mode, ..
                } => {
                    let key = match cell {
                        CellValue::Text(s) => s.clone(),
                        CellValue::Number(v) => v.to_string(),
                        CellValue::Missing => mode.clone(),
                    };
                    out.extend(categories.iter().map(|k| if *k == key { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }

    /// Encodes a table with the fitted statistics.
    pub fn transform(&self, table: &RawTable) -> Result<Cohort<f64>> {
        self.check(table)?;
        let records = table
            .cells
            .iter()
            .zip(table.times.iter().zip(&table.events))
            .map(|(cells, (&t, &e))| SubjectRecord::new(self.encode_row(cells), t, e))
            .collect();
        Cohort::new(records, self.num_events)
    }

    /// Fits on `train` and applies the result to `train` and every other table.
    pub fn fit_apply(
        train: &RawTable,
        others: &[&RawTable],
    ) -> Result<(Self, Cohort<f64>, Vec<Cohort<f64>>)> {
        let mut schema = Self::fit(train)?;
        schema.num_events = others
            .iter()
            .map(|t| t.max_event())
            .fold(schema.num_events, usize::max);
        let train_cohort = schema.transform(train)?;
        let rest = others
            .iter()
            .map(|t| schema.transform(t))
            .collect::<Result<Vec<_>>>()?;
        Ok((schema, train_cohort, rest))
    }
}

#[cfg(test)]
mod tests {
    use super::super::load::{read_table, ColumnSpec, DataSpec};
    use super::*;

    fn spec() -> DataSpec {
        DataSpec {
            features: vec![
                ColumnSpec {
                    name: "x".into(),
                    kind: ColumnKind::Continuous,
                },
                ColumnSpec {
                    name: "b".into(),
                    kind: ColumnKind::Binary,
                },
                ColumnSpec {
                    name: "c".into(),
                    kind: ColumnKind::Categorical,
                },
            ],
            ..Default::default()
        }
    }

    fn table(csv: &str) -> RawTable {
        read_table(csv.as_bytes(), &spec()).unwrap()
    }

    #[test]
    fn standardizes_with_population_std() {
        let t = table("x,b,c,time,event\n1,0,u,1,1\n2,1,v,2,0\n3,1,v,3,1\n");
        let (schema, cohort, _) = FeatureSchema::fit_apply(&t, &[]).unwrap();
        let xs: Vec<f64> = cohort.records().iter().map(|r| r.features[0]).collect();
        let s = (2.0f64 / 3.0).sqrt();
        assert_eq!(xs, vec![-1.0 / s, 0.0, 1.0 / s]);
        let mean = xs.iter().sum::<f64>() / 3.0;
        let var = xs.iter().map(|v| v * v).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-15 && (var - 1.0).abs() < 1e-12);
        assert_eq!(schema.output_names(), vec!["x", "b", "c=u", "c=v"]);
        assert_eq!(schema.num_events, 1);
    }

    #[test]
    fn imputes_with_training_statistics() {
        let train = table("x,b,c,time,event\n1,1,u,1,1\n3,1,v,2,0\n,0,v,3,2\n");
        let test = table("x,b,c,time,event\n,,NA,1,0\n5,0,w,2,1\n");
        let (schema, _, rest) = FeatureSchema::fit_apply(&train, &[&test]).unwrap();
        let r = &rest[0].records();
        // missing continuous takes the mean, which standardizes to 0
        assert_eq!(r[0].features, vec![0.0, 1.0, 0.0, 1.0]);
        // unseen category encodes as zeros
        assert_eq!(&r[1].features[2..], &[0.0, 0.0]);
        assert_eq!(schema.num_events, 2);
    }

    #[test]
    fn zero_variance_column_keeps_unit_scale() {
        let t = table("x,b,c,time,event\n4,0,u,1,1\n4,0,u,2,0\n");
        let schema = FeatureSchema::fit(&t).unwrap();
        assert_eq!(
            schema.columns[0],
            FittedColumn::Continuous {
                name: "x".into(),
                mean: 4.0,
                std: 1.0
            }
        );
    }

    #[test]
    fn mismatched_columns_are_rejected() {
        let t = table("x,b,c,time,event\n4,0,u,1,1\n");
        let schema = FeatureSchema::fit(&t).unwrap();
        let other = read_table("y,time,event\n1,1,1\n".as_bytes(), &DataSpec::default()).unwrap();
        assert!(matches!(
            schema.transform(&other),
            Err(DkajError::SchemaMismatch(_))
        ));
        let more_events = table("x,b,c,time,event\n4,0,u,1,3\n");
        assert!(matches!(
            schema.transform(&more_events),
            Err(DkajError::SchemaMismatch(_))
        ));
    }

    #[test]
    fn serde_round_trip() {
        let t = table("x,b,c,time,event\n1,0,u,1,1\n2,1,v,2,0\n");
        let schema = FeatureSchema::fit(&t).unwrap();
        let back: FeatureSchema =
            serde_json::from_str(&serde_json::to_string(&schema).unwrap()).unwrap();
        assert_eq!(back, schema);
    }
}
