//! The CLI's training pipeline from a TOML run config: dataset and
//! embeddings files in, checkpoint and report out.

mod shared;

use fivedollar::fixtures::hash_embeddings;
use fivedollar::run::{run_training, RunConfig};

fn main() -> fivedollar::Result<()> {
    let dir = shared::out_dir("pipeline");
    let (ds, _) = shared::maps();
    ds.save(&dir.join("maps.json"))?;
    hash_embeddings(&ds.all_texts()).save(&dir.join("embeddings.json"))?;

    let toml = r#"
domain = "maps"
dataset = "maps.json"
embeddings = "embeddings.json"
output_dir = "out"

[model]
noise_dim = 2
filters = 16
kernel = 3
res_blocks = 1
conditioning = "film"
output_size = 10

[train]
batch_size = 16
max_epochs = 15
early_stop_patience = 5
"#;
    let cfg = RunConfig::from_toml(toml, &dir)?;
    cfg.validate()?;
    let outcome = run_training(&cfg)?;
    println!("checkpoint {}", outcome.checkpoint.display());
    println!(
        "{} train rows, {} val pairs, best val acc {:.3}",
        outcome.report.train_rows, outcome.report.val_pairs, outcome.report.train.best_val_accuracy
    );
    println!("report and config echo in {}", cfg.output_dir.display());
    Ok(())
}
