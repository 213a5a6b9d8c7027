//! CSV ingestion, train-fitted feature preprocessing, dataset splitting and a
//! synthetic competing-risks generator with a closed-form CIF oracle.
//!
//! The data layer works in `f64`.

mod load;
mod schema;
mod split;
mod synth;

pub use load::{
    load_cohort, read_table, write_cohort_csv, CellValue, ColumnKind, ColumnSpec, DataSpec,
    RawTable,
};
pub use schema::{FeatureSchema, FittedColumn};
pub use split::{split_indices, split_train_valid_indices, split_train_valid_test, SplitSizes};
pub use synth::{generate_synthetic, oracle_cif, SynthConfig};
