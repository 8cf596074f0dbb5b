//! Categorical cross-entropy training with Adam, validation accuracy and
//! the hyperparameter grid search.

pub mod adam;
pub mod grid;
pub mod train;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use grid::{grid_search, rank, report_lines, timing_lines, GridResult, GridSpace, NEAR_TIE};
pub use train::{train, validation_accuracy, EpochRecord, TrainConfig, TrainReport, TrainRow, ValPair};

use crate::data::Dataset;
use crate::embeddings::Resolver;
use crate::error::Result;

/// One-hot rows for every item of `ds`, embedding each caption.
pub fn rows_from_dataset(ds: &Dataset, resolver: &Resolver) -> Result<Vec<TrainRow>> {
    let texts: Vec<&str> = ds.items.iter().map(|i| i.caption.as_str()).collect();
    let embs = resolver.resolve_all(&texts)?;
    Ok(ds
        .items
        .iter()
        .zip(embs)
        .map(|(item, embedding)| TrainRow {
            embedding,
            target: item.image.one_hot(),
        })
        .collect())
}

/// Validation pairs for every item of `ds`.
pub fn val_from_dataset(ds: &Dataset, resolver: &Resolver) -> Result<Vec<ValPair>> {
    let texts: Vec<&str> = ds.items.iter().map(|i| i.caption.as_str()).collect();
    let embs = resolver.resolve_all(&texts)?;
    Ok(ds
        .items
        .iter()
        .zip(embs)
        .map(|(item, embedding)| ValPair {
            embedding,
            image: item.image.clone(),
        })
        .collect())
}
