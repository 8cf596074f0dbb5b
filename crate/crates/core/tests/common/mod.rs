#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Output;

use fivedollar::data::Domain;
use fivedollar::fixtures::{hash_embeddings, synthetic_dataset};

pub const UNSEEN: &str = "a flower garden by the beach";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: PathBuf,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// A small maps dataset, embeddings for every caption plus [`UNSEEN`], and a
/// run config training a tiny model for a few epochs. `extra` is appended to
/// the config.
pub fn fixture(model_section: &str, extra: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic_dataset(Domain::Maps, 24, 3).unwrap();
    ds.save(&dir.path().join("maps.json")).unwrap();
    let mut texts: Vec<&str> = ds.all_texts();
    texts.extend([UNSEEN, "grass", "lava", "river"]);
    hash_embeddings(&texts).save(&dir.path().join("embeddings.json")).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            r#"domain = "maps"
dataset = "maps.json"
embeddings = "embeddings.json"
output_dir = "out"

[model]
{model_section}

[train]
batch_size = 8
max_epochs = 3
early_stop_patience = 0
val_fraction = 0.2
{extra}"#
        ),
    )
    .unwrap();
    Fixture { dir, config }
}

pub const TINY_MODEL: &str = r#"noise_dim = 2
filters = 8
kernel = 3
res_blocks = 1
conditioning = "cin"
output_size = 10"#;

pub fn cli(args: &[&str]) -> Output {
    std::process::Command::new(env!("CARGO_BIN_EXE_fivedollar"))
        .args(args)
        .env_remove("FIVEDOLLAR_BRIDGE_URL")
        .output()
        .unwrap()
}

pub fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Trains the fixture and returns the checkpoint path.
pub fn trained(f: &Fixture) -> PathBuf {
    ok(&["train", "--config", s(&f.config)]);
    checkpoint_in(&f.path("out"))
}

pub fn checkpoint_in(dir: &Path) -> PathBuf {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    assert_eq!(found.len(), 1, "{found:?}");
    found.pop().unwrap()
}

/// Every file under `dir` with its bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p, bytes));
            }
        }
    }
    out.sort();
    out
}
