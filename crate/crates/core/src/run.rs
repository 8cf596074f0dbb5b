//! Run configuration files and the end-to-end training pipeline:
//! embed captions, split, augment, train, then write the checkpoint, the
//! report and an echo of the effective configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::{prepare_training_data, AugmentPlan, PreparedData};
use crate::data::{Dataset, Domain, StyleRef, TileAtlas};
use crate::embeddings::{BridgeClient, EmbeddingsFile, Resolver};
use crate::error::{Error, Result};
use crate::model::{save_checkpoint, Generator, ModelConfig, ModelMeta};
use crate::training::{grid_search, rank, report_lines, train, GridResult, GridSpace, TrainConfig, TrainReport};

pub const ECHO_FILE: &str = "config.toml";
pub const REPORT_FILE: &str = "report.json";
pub const GRID_REPORT_FILE: &str = "grid_report.jsonl";
pub const LOCK_SUFFIX: &str = ".serving.lock";

/// One experiment. Relative paths are taken relative to the file they were
/// read from; the echoed copy stores them absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Domain,
    pub dataset: PathBuf,
    pub embeddings: PathBuf,
    pub output_dir: PathBuf,
    /// Augment the whole dataset before splitting, as the original pipeline did.
    #[serde(default)]
    pub paper_leaky_split: bool,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Domain defaults when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpace>,
}

fn toml_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Config {
        field: path.display().to_string(),
        reason: e.to_string().trim_end().to_owned(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| toml_error(base, e))?;
        for p in [&mut cfg.dataset, &mut cfg.embeddings, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = dir_of(path);
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    /// Field-level checks plus existence of every input path.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        if let Some(g) = &self.grid {
            g.configs(self.model.output_size)?;
        }
        for (field, p) in [("dataset", &self.dataset), ("embeddings", &self.embeddings)] {
            if !p.is_file() {
                return Err(Error::config(field, format!("file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Checkpoint file name: domain, conditioning and a digest of this config.
    pub fn checkpoint_name(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        Ok(format!("{}-{}-{hex}.ckpt", self.domain, self.model.conditioning))
    }

    pub fn checkpoint_path(&self) -> Result<PathBuf> {
        Ok(self.output_dir.join(self.checkpoint_name()?))
    }
}

/// Path of the marker a server holds while it serves `checkpoint`.
/// Directory containing `p`; `.` for a bare file name.
pub fn dir_of(p: &Path) -> &Path {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    }
}

pub fn lock_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(LOCK_SUFFIX);
    PathBuf::from(s)
}

/// What a trained model should carry for rendering: its domain and the
/// dataset's palette or tile atlas.
pub fn meta_for(ds: &Dataset, dataset_path: &Path) -> Result<ModelMeta> {
    let mut meta = ModelMeta {
        domain: Some(ds.domain),
        ..Default::default()
    };
    match &ds.style {
        Some(StyleRef::Palette(p)) => meta.palette = Some(*p),
        Some(StyleRef::Atlas(rel)) => {
            let base = dataset_path.parent().unwrap_or(Path::new("."));
            meta.atlas = Some(TileAtlas::load(&base.join(rel))?);
        }
        None => {}
    }
    Ok(meta)
}

/// Everything a run needs after its inputs are loaded.
pub struct Inputs {
    pub dataset: Dataset,
    pub resolver: Resolver,
    pub plan: AugmentPlan,
    pub data: PreparedData,
    pub meta: ModelMeta,
}

pub fn load_inputs(cfg: &RunConfig) -> Result<Inputs> {
    cfg.validate()?;
    let dataset = Dataset::load(&cfg.dataset)?;
    if dataset.domain != cfg.domain {
        return Err(Error::config(
            "domain",
            format!("is {} but the dataset holds {}", cfg.domain, dataset.domain),
        ));
    }
    if let Some((w, h)) = dataset.dims() {
        if w != cfg.model.output_size || h != cfg.model.output_size {
            return Err(Error::config(
                "model.output_size",
                format!("is {} but dataset images are {w}x{h}", cfg.model.output_size),
            ));
        }
    }
    let resolver = Resolver::new(Some(EmbeddingsFile::load(&cfg.embeddings)?), BridgeClient::from_env());
    let plan = cfg
        .augment
        .clone()
        .unwrap_or_else(|| AugmentPlan::for_domain(dataset.domain, dataset.len(), dataset.has_alt_captions()));
    let data = prepare_training_data(
        &dataset,
        &resolver,
        &plan,
        cfg.train.val_fraction,
        cfg.train.seed,
        cfg.paper_leaky_split,
    )?;
    let meta = meta_for(&dataset, &cfg.dataset)?;
    Ok(Inputs {
        dataset,
        resolver,
        plan,
        data,
        meta,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub checkpoint: String,
    pub domain: Domain,
    pub model: ModelConfig,
    pub augment: AugmentPlan,
    pub leaky_split: bool,
    pub train_rows: usize,
    pub val_pairs: usize,
    pub warnings: Vec<String>,
    pub train: TrainReport,
}

pub struct RunOutcome {
    pub checkpoint: PathBuf,
    pub report: RunReport,
    pub model: Generator,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Trains one model and writes `config.toml`, `report.json` and the
/// checkpoint into the output directory. Refuses to overwrite a
/// checkpoint that a server is currently serving.
pub fn run_training(cfg: &RunConfig) -> Result<RunOutcome> {
    let inputs = load_inputs(cfg)?;
    let ckpt = cfg.checkpoint_path()?;
    let lock = lock_path(&ckpt);
    if lock.exists() {
        return Err(Error::Usage(format!(
            "{} is being served (lock file {} exists); stop the server first",
            ckpt.display(),
            lock.display()
        )));
    }
    ensure_dir(&cfg.output_dir)?;
    write(&cfg.output_dir.join(ECHO_FILE), &cfg.to_toml()?)?;

    let mut model = Generator::build(cfg.model.clone(), cfg.train.seed)?;
    model.set_meta(inputs.meta);
    let report = train(&mut model, &inputs.data.rows, &inputs.data.val, &cfg.train)?;
    save_checkpoint(&model, &ckpt)?;

    let report = RunReport {
        checkpoint: cfg.checkpoint_name()?,
        domain: cfg.domain,
        model: cfg.model.clone(),
        augment: inputs.plan,
        leaky_split: inputs.data.leaky_split,
        train_rows: inputs.data.rows.len(),
        val_pairs: inputs.data.val.len(),
        warnings: inputs.data.warnings,
        train: report,
    };
    write(&cfg.output_dir.join(REPORT_FILE), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    Ok(RunOutcome {
        checkpoint: ckpt,
        report,
        model,
    })
}

/// Trains every cell of the config's `[grid]` on one shared split. Each
/// successful cell's checkpoint goes to `grid/cell-NNN.ckpt`; the ranked
/// JSONL report lists them best first. Returns the ranked results and the
/// winner's checkpoint.
pub fn run_grid(cfg: &RunConfig) -> Result<(Vec<GridResult>, Option<PathBuf>)> {
    let space = cfg
        .grid
        .clone()
        .ok_or_else(|| Error::config("grid", "is required for a grid search"))?;
    let inputs = load_inputs(cfg)?;
    let cell_dir = cfg.output_dir.join("grid");
    ensure_dir(&cell_dir)?;
    write(&cfg.output_dir.join(ECHO_FILE), &cfg.to_toml()?)?;

    let mut saved: Vec<(ModelConfig, PathBuf)> = Vec::new();
    let mut cell = 0;
    let mut results = grid_search(
        &space,
        cfg.model.output_size,
        &inputs.data.rows,
        &inputs.data.val,
        &cfg.train,
        |r, m| {
            cell += 1;
            if r.val_accuracy.is_some() {
                let mut m = m.clone();
                m.set_meta(inputs.meta.clone());
                let path = cell_dir.join(format!("cell-{:03}.ckpt", cell - 1));
                save_checkpoint(&m, &path)?;
                saved.push((r.config.clone(), path));
            }
            Ok(())
        },
    )?;
    rank(&mut results);
    write(&cfg.output_dir.join(GRID_REPORT_FILE), &report_lines(&results)?)?;
    let winner = results
        .first()
        .filter(|r| r.val_accuracy.is_some())
        .and_then(|top| saved.iter().find(|(c, _)| c == &top.config))
        .map(|(_, p)| p.clone());
    Ok((results, winner))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
domain = "sprites"
dataset = "data/sprites.json"
embeddings = "emb.json"
output_dir = "out"

[model]
noise_dim = 2
filters = 8
kernel = 3
res_blocks = 1
conditioning = "film"
output_size = 8
"#;

    #[test]
    fn relative_paths_resolve_against_the_config_dir() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/exp")).unwrap();
        assert_eq!(cfg.dataset, Path::new("/exp/data/sprites.json"));
        assert_eq!(cfg.output_dir, Path::new("/exp/out"));
        assert_eq!(cfg.train, TrainConfig::default());
        assert!(cfg.augment.is_none() && !cfg.paper_leaky_split);
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/exp")).unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml().unwrap(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.checkpoint_name().unwrap(), cfg.checkpoint_name().unwrap());
        assert!(cfg.checkpoint_name().unwrap().starts_with("sprites-film-"));
    }

    #[test]
    fn unknown_keys_and_bad_values_name_the_field() {
        let err = RunConfig::from_toml(&MINIMAL.replace("kernel = 3", "kernal = 3"), Path::new("/")).unwrap_err();
        assert!(err.to_string().contains("kernal"), "{err}");
        let cfg = RunConfig::from_toml(&MINIMAL.replace("kernel = 3", "kernel = 4"), Path::new("/")).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.is_usage() && err.to_string().contains("kernel"), "{err}");
    }

    #[test]
    fn missing_inputs_are_reported_before_running() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new("/nonexistent")).unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("dataset"));
    }

    #[test]
    fn lock_sits_beside_the_checkpoint() {
        assert_eq!(lock_path(Path::new("/o/m.ckpt")), Path::new("/o/m.ckpt.serving.lock"));
    }
}
