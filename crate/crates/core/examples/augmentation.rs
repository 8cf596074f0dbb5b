//! Training-table augmentation and the validation split that keeps
//! augmented copies of held-out captions out of training.

use fivedollar::augment::{build_augmented_dataset, embed_captions, prepare_training_data, AugmentPlan, RowSource};
use fivedollar::data::Domain;
use fivedollar::embeddings::Resolver;
use fivedollar::fixtures::{hash_embeddings, synthetic_dataset};

fn main() -> fivedollar::Result<()> {
    let ds = synthetic_dataset(Domain::Maps, 40, 0)?;
    let resolver = Resolver::new(Some(hash_embeddings(&ds.all_texts())), None);

    for (name, plan) in [
        ("none", AugmentPlan::none()),
        ("noise x3", AugmentPlan::default()),
        ("maps defaults", AugmentPlan::for_domain(Domain::Maps, ds.len(), true)),
    ] {
        let caps = embed_captions(&ds, &resolver, plan.use_alt_labels)?;
        let table = build_augmented_dataset(&ds, &caps, &plan)?;
        let mixed = table.sources.iter().filter(|s| matches!(s, RowSource::Mixup { .. })).count();
        println!("{name:>14}: {} rows from {} items ({mixed} MixUp)", table.len(), ds.len());
    }

    let plan = AugmentPlan::for_domain(Domain::Maps, ds.len(), true);
    for leaky in [false, true] {
        let data = prepare_training_data(&ds, &resolver, &plan, 0.2, 0, leaky)?;
        let shared = data.train_items.iter().filter(|i| data.val_items.contains(i)).count();
        println!(
            "leaky={leaky}: {} train rows, {} val pairs, {shared} items on both sides",
            data.rows.len(),
            data.val.len()
        );
    }
    Ok(())
}
