//! Train a generator on captioned maps, save it, reload it and sample.

mod shared;

use fivedollar::augment::{prepare_training_data, AugmentPlan};
use fivedollar::data::Domain;
use fivedollar::model::{load_checkpoint, save_checkpoint, Conditioning, Generator, ModelConfig};
use fivedollar::training::{train, validation_accuracy, TrainConfig};

fn main() -> fivedollar::Result<()> {
    let dir = shared::out_dir("train");
    let (ds, resolver) = shared::maps();
    let plan = AugmentPlan::for_domain(Domain::Maps, ds.len(), true);
    let data = prepare_training_data(&ds, &resolver, &plan, 0.2, 0, false)?;
    println!("{} training rows, {} held-out captions", data.rows.len(), data.val.len());

    let mut model = Generator::build(ModelConfig::new(2, 16, 3, 1, Conditioning::Cin, 10), 0)?;
    println!("untrained accuracy {:.3}", validation_accuracy(&model, &data.val)?);
    let cfg = TrainConfig {
        batch_size: 16,
        max_epochs: 25,
        early_stop_patience: 10,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data.rows, &data.val, &cfg)?;
    for r in report.history.iter().step_by(5) {
        println!("epoch {:>3}  loss {:.4}  val acc {:.3}", r.epoch, r.train_loss, r.val_accuracy);
    }
    println!("best epoch {} at {:.3}, {} params", report.best_epoch, report.best_val_accuracy, report.param_count);

    let path = dir.join("maps.ckpt");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    let e = resolver.resolve("lava with walls")?;
    let img = back.generate_image(&e, &back.zero_noise())?;
    println!("\"lava with walls\":");
    for row in img.to_hex_rows() {
        println!("  {row}");
    }
    Ok(())
}
