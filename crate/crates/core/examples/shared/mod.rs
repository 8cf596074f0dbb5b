//! A small maps model trained in a few seconds, shared by the examples.
#![allow(dead_code)]

use std::path::PathBuf;

use fivedollar::data::{Dataset, Domain};
use fivedollar::embeddings::Resolver;
use fivedollar::fixtures::{hash_embeddings, synthetic_dataset};
use fivedollar::data::{Palette, TileAtlas};
use fivedollar::model::{Conditioning, Generator, ModelConfig, ModelMeta};
use fivedollar::training::{rows_from_dataset, train, val_from_dataset, TrainConfig};

pub fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("fivedollar-examples").join(name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

pub fn maps() -> (Dataset, Resolver) {
    let ds = synthetic_dataset(Domain::Maps, 36, 0).unwrap();
    let mut texts: Vec<String> = ds.all_texts().iter().map(|s| s.to_string()).collect();
    texts.extend(["grass", "lava", "river", "walls"].map(String::from));
    (ds, Resolver::new(Some(hash_embeddings(&texts)), None))
}

pub fn trained_model() -> (Generator, Resolver) {
    let (ds, resolver) = maps();
    let rows = rows_from_dataset(&ds, &resolver).unwrap();
    let val = val_from_dataset(&ds, &resolver).unwrap();
    let mut m = Generator::build(ModelConfig::new(2, 16, 3, 1, Conditioning::Cin, 10), 0).unwrap();
    let cfg = TrainConfig {
        batch_size: 12,
        max_epochs: 40,
        early_stop_patience: 0,
        ..TrainConfig::default()
    };
    train(&mut m, &rows, &val, &cfg).unwrap();
    m.set_meta(ModelMeta {
        domain: Some(Domain::Maps),
        palette: None,
        atlas: Some(TileAtlas::solid(&Palette::PICO8)),
    });
    (m, resolver)
}
