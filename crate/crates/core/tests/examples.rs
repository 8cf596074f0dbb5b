//! Every example runs to completion and prints something.

use std::path::PathBuf;
use std::process::Command;

const EXAMPLES: &[&str] = &[
    "autodiff",
    "datasets",
    "emoji_preprocess",
    "embeddings",
    "augmentation",
    "gradient_check",
    "train",
    "gridsearch",
    "latent_walk",
    "latent_arithmetic",
    "serve",
    "pipeline",
];

fn example_bin(name: &str) -> PathBuf {
    // target/<profile>/deps/examples-<hash> -> target/<profile>/examples/<name>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().join("examples").join(name)
}

#[test]
fn examples_run() {
    let listed: Vec<String> = std::fs::read_dir(concat!(env!("CARGO_MANIFEST_DIR"), "/examples"))
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "rs").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    for name in &listed {
        assert!(EXAMPLES.contains(&name.as_str()), "example {name} is not exercised here");
    }
    for name in EXAMPLES {
        let dir = tempfile::tempdir().unwrap();
        let out = Command::new(example_bin(name))
            .arg(dir.path())
            .env_remove("FIVEDOLLAR_BRIDGE_URL")
            .output()
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(out.status.success(), "{name} failed:\n{}", String::from_utf8_lossy(&out.stderr));
        assert!(!out.stdout.is_empty(), "{name} printed nothing");
    }
}
