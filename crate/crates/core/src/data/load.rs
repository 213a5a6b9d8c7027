use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DkajError, Result};
use crate::survival::Cohort;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Categorical,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

fn default_time() -> String {
    "time".into()
}

fn default_event() -> String {
    "event".into()
}

/// Which CSV columns hold the outcome and which hold features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    #[serde(default = "default_time")]
    pub time_column: String,
    #[serde(default = "default_event")]
    pub event_column: String,
    /// Feature columns in order; empty means every other column, read as continuous.
    #[serde(default)]
    pub features: Vec<ColumnSpec>,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            time_column: default_time(),
            event_column: default_event(),
            features: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Missing,
    Number(f64),
    Text(String),
}

/// Parsed rows before preprocessing. Feature cells keep missing markers;
/// outcomes are always present.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub columns: Vec<ColumnSpec>,
    pub cells: Vec<Vec<CellValue>>,
    pub times: Vec<f64>,
    pub events: Vec<usize>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest event code present.
    pub fn max_event(&self) -> usize {
        self.events.iter().copied().max().unwrap_or(0)
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            columns: self.columns.clone(),
            cells: indices.iter().map(|&i| self.cells[i].clone()).collect(),
            times: indices.iter().map(|&i| self.times[i]).collect(),
            events: indices.iter().map(|&i| self.events[i]).collect(),
        }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

/// Reads a headed, comma-separated table. Empty cells and `NA` are missing.
/// Parse errors report the 1-based data row (the header is row 0).
pub fn read_table<R: Read>(reader: R, spec: &DataSpec) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DkajError::MissingColumn(name.to_string()))
    };
    let time_idx = position(&spec.time_column)?;
    let event_idx = position(&spec.event_column)?;
    let columns: Vec<ColumnSpec> = if spec.features.is_empty() {
        header
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != time_idx && i != event_idx)
            .map(|(_, h)| ColumnSpec {
                name: h.clone(),
                kind: ColumnKind::Continuous,
            })
            .collect()
    } else {
        spec.features.clone()
    };
    let feature_idx = columns
        .iter()
        .map(|c| position(&c.name))
        .collect::<Result<Vec<_>>>()?;

    let mut table = RawTable {
        columns,
        cells: Vec::new(),
        times: Vec::new(),
        events: Vec::new(),
    };
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        let err = |column: &str, message: String| DkajError::Parse {
            row,
            column: column.to_string(),
            message,
        };
        let t_raw = field(time_idx).trim();
        let time: f64 = t_raw
            .parse()
            .map_err(|_| err(&spec.time_column, format!("`{t_raw}` is not a number")))?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(err(
                &spec.time_column,
                format!("time {time} must be finite and nonnegative"),
            ));
        }
        let e_raw = field(event_idx).trim();
        let event = e_raw
            .parse::<f64>()
            .ok()
            .filter(|v| *v >= 0.0 && v.fract() == 0.0 && *v < 1e6)
            .ok_or_else(|| {
                err(
                    &spec.event_column,
                    format!("`{e_raw}` is not a nonnegative integer event code"),
                )
            })? as usize;
        let mut cells = Vec::with_capacity(feature_idx.len());
        for (c, &i) in table.columns.iter().zip(&feature_idx) {
            let raw = field(i);
            let cell = if is_missing(raw) {
                CellValue::Missing
            } else {
                match c.kind {
                    ColumnKind::Categorical => CellValue::Text(raw.trim().to_string()),
                    ColumnKind::Continuous | ColumnKind::Binary => {
                        let v: f64 = raw.trim().parse().map_err(|_| {
                            err(&c.name, format!("`{}` is not a number", raw.trim()))
                        })?;
                        if !v.is_finite() {
                            return Err(err(&c.name, "value is not finite".into()));
                        }
                        CellValue::Number(v)
                    }
                }
            };
            cells.push(cell);
        }
        table.cells.push(cells);
        table.times.push(time);
        table.events.push(event);
    }
    Ok(table)
}

/// Reads a cohort CSV file into a [`RawTable`].
pub fn load_cohort(path: impl AsRef<Path>, spec: &DataSpec) -> Result<RawTable> {
    let file = std::fs::File::open(path)?;
    read_table(std::io::BufReader::new(file), spec)
}

/// Writes numeric features followed by `time,event`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_cohort_csv<W: Write>(
    writer: W,
    cohort: &Cohort<f64>,
    feature_names: &[String],
) -> Result<()> {
    if feature_names.len() != cohort.num_features() {
        return Err(DkajError::ShapeMismatch {
            expected: cohort.num_features(),
            got: feature_names.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.extend(["time", "event"]);
    w.write_record(&header)?;
    for r in cohort.records() {
        let mut row: Vec<String> = r.features.iter().map(|v| v.to_string()).collect();
        row.push(r.time.to_string());
        row.push(r.event.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survival::SubjectRecord;

    fn spec_with(features: &[(&str, ColumnKind)]) -> DataSpec {
        DataSpec {
            features: features
                .iter()
                .map(|&(n, kind)| ColumnSpec {
                    name: n.into(),
                    kind,
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn reads_well_formed_rows() {
        let csv = "age,sex,stage,time,event\n50,1,a,3.5,1\n61,,NA,2,0\n,0,b,7,2\n";
        let spec = spec_with(&[
            ("age", ColumnKind::Continuous),
            ("sex", ColumnKind::Binary),
            ("stage", ColumnKind::Categorical),
        ]);
        let t = read_table(csv.as_bytes(), &spec).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.times, vec![3.5, 2.0, 7.0]);
        assert_eq!(t.events, vec![1, 0, 2]);
        assert_eq!(
            t.cells[1],
            vec![
                CellValue::Number(61.0),
                CellValue::Missing,
                CellValue::Missing
            ]
        );
        assert_eq!(t.cells[2][2], CellValue::Text("b".into()));
        assert_eq!(t.max_event(), 2);
    }

    #[test]
    fn default_features_are_other_columns() {
        let t = read_table(
            "x1,time,x2,event\n1,2,3,0\n".as_bytes(),
            &DataSpec::default(),
        )
        .unwrap();
        let names: Vec<_> = t.columns.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["x1", "x2"]);
        assert_eq!(
            t.cells[0],
            vec![CellValue::Number(1.0), CellValue::Number(3.0)]
        );
    }

    #[test]
    fn missing_event_column() {
        let err = read_table("x,time\n1,2\n".as_bytes(), &DataSpec::default()).unwrap_err();
        assert!(matches!(err, DkajError::MissingColumn(c) if c == "event"));
    }

    #[test]
    fn bad_time_cell_is_located() {
        let err = read_table(
            "x,time,event\n1,2,0\n1,soon,1\n".as_bytes(),
            &DataSpec::default(),
        )
        .unwrap_err();
        match err {
            DkajError::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "time");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(read_table("x,time,event\n1,2,1.5\n".as_bytes(), &DataSpec::default()).is_err());
        assert!(read_table("x,time,event\n1,-2,1\n".as_bytes(), &DataSpec::default()).is_err());
    }

    #[test]
    fn write_then_read_round_trip() {
        let c = Cohort::new(
            vec![
                SubjectRecord::new(vec![0.1 + 0.2, -1e-300], 1.0 / 3.0, 1),
                SubjectRecord::new(vec![2.0, 3.5], 2.0, 0),
            ],
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&mut buf, &c, &["a".into(), "b".into()]).unwrap();
        let t = read_table(buf.as_slice(), &DataSpec::default()).unwrap();
        assert_eq!(t.times, vec![1.0 / 3.0, 2.0]);
        assert_eq!(
            t.cells[0],
            vec![CellValue::Number(0.1 + 0.2), CellValue::Number(-1e-300)]
        );
    }
}
