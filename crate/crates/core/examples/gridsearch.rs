//! Architecture search: train every cell, rank by validation accuracy,
//! preferring the smaller model on a near tie.

mod shared;

use fivedollar::model::Conditioning;
use fivedollar::training::{grid_search, rows_from_dataset, val_from_dataset, GridSpace, TrainConfig};

fn main() -> fivedollar::Result<()> {
    let (ds, resolver) = shared::maps();
    let rows = rows_from_dataset(&ds, &resolver)?;
    let val = val_from_dataset(&ds, &resolver)?;
    let space = GridSpace {
        noise_dim: vec![2],
        filters: vec![8, 16],
        kernel: vec![3],
        res_blocks: vec![1],
        conditioning: vec![Conditioning::Standard, Conditioning::Cin, Conditioning::Film],
    };
    let cfg = TrainConfig {
        batch_size: 12,
        max_epochs: 10,
        early_stop_patience: 0,
        ..TrainConfig::default()
    };
    let results = grid_search(&space, 10, &rows, &val, &cfg, |r, _| {
        println!("trained {:<8} f={:<3} acc {:.3}", r.config.conditioning, r.config.filters, r.val_accuracy.unwrap_or(0.0));
        Ok(())
    })?;
    println!("ranking:");
    for (i, r) in results.iter().enumerate() {
        println!("{:>2}. {:<8} f={:<3} acc {:.3} ({} params)", i + 1, r.config.conditioning, r.config.filters, r.val_accuracy.unwrap_or(0.0), r.param_count);
    }
    Ok(())
}
