//! The `fivedollar` command line. Every artifact-producing command writes an
//! `invocation.toml` beside its outputs; `fivedollar rerun` replays it.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{contact_sheet, random_baseline, render_png, render_rgb, CategoricalImage, Dataset, Domain, Item, RgbImage, StyleRef};
use crate::embeddings::{BridgeClient, EmbeddingsFile, Resolver};
use crate::error::{Error, Result};
use crate::latent::{apply_expr, parse_expr, walk};
use crate::model::{load_checkpoint, Generator};
use crate::run::{run_grid, run_training, RunConfig, ECHO_FILE};

pub const INVOCATION_FILE: &str = "invocation.toml";

#[derive(Debug, Parser)]
#[command(name = "fivedollar", version, about = "Text-conditioned generator for tiny categorical images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Train one model from a run config.
    Train(TrainArgs),
    /// Generate images for a prompt.
    Generate(GenerateArgs),
    /// Walk the embedding line between two prompts.
    Interpolate(InterpolateArgs),
    /// Generate from an embedding arithmetic expression.
    Arith(ArithArgs),
    /// Train every cell of the config's [grid] and rank them.
    Gridsearch(TrainArgs),
    /// Turn a directory of 32x32 emoji PNGs into a 16-color dataset.
    PreprocessEmoji(PreprocessArgs),
    /// Pair a dataset's captions with uniformly random images.
    MakeRandomBaseline(BaselineArgs),
    /// Serve checkpoints over HTTP.
    Serve(ServeArgs),
    /// Replay an `invocation.toml` or a run config.
    Rerun(RerunArgs),
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Augment before splitting, letting caption derivatives cross the split.
    #[arg(long)]
    #[serde(default)]
    pub paper_leaky_split: bool,
    /// Overrides `train.seed`.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Embeddings file consulted before the bridge.
    #[arg(long)]
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Noise seed. `generate` defaults to 0; the latent-lab commands use
    /// zero noise unless a seed is given.
    #[arg(long)]
    #[serde(default)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Nearest-neighbor upscaling factor for PNGs.
    #[arg(long, default_value_t = 1)]
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ModelArgs,
    #[arg(long)]
    pub prompt: String,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ModelArgs,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArithArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: ModelArgs,
    /// e.g. `"angry face" - "neutral face" + "cat face"`
    #[arg(long)]
    pub expr: String,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessArgs {
    /// Directory of PNGs; each caption is the file stem with `_` and `-` as spaces.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to the reference dataset's size.
    #[arg(long)]
    #[serde(default)]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeArgs {
    /// Checkpoint to serve; repeat for several. The id is the file stem.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

#[derive(Clone, Debug, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RerunArgs {
    pub file: PathBuf,
}

/// Lowercase ASCII words joined by `-`, at most 60 characters.
pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.is_empty() && !out.ends_with('-') {
            out.push('-');
        }
    }
    let mut s: String = out.trim_end_matches('-').chars().take(60).collect();
    while s.ends_with('-') {
        s.pop();
    }
    if s.is_empty() {
        "prompt".into()
    } else {
        s
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn echo(dir: &Path, command: &Command) -> Result<()> {
    ensure_dir(dir)?;
    let text = toml::to_string(command).map_err(|e| Error::config("invocation", e.to_string()))?;
    write_bytes(&dir.join(INVOCATION_FILE), text.as_bytes())
}

impl ModelArgs {
    fn absolutize(&mut self) -> Result<()> {
        self.model = absolute(&self.model)?;
        self.out = absolute(&self.out)?;
        if let Some(e) = &mut self.embeddings {
            *e = absolute(e)?;
        }
        if self.scale == 0 {
            return Err(Error::config("scale", "must be at least 1"));
        }
        Ok(())
    }

    fn open(&self) -> Result<(Generator, Resolver)> {
        let model = load_checkpoint(&self.model)?;
        let file = self.embeddings.as_deref().map(EmbeddingsFile::load).transpose()?;
        Ok((model, Resolver::new(file, BridgeClient::from_env())))
    }
}

fn save_image(model: &Generator, img: &CategoricalImage, scale: usize, path: &Path) -> Result<()> {
    write_bytes(path, &render_png(img, &model.meta().render_style(scale))?)
}

fn absolute_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.paper_leaky_split |= args.paper_leaky_split;
    Ok(cfg)
}

/// Replayable form of a train or grid command: points at the echoed config,
/// which already has the flag overrides applied.
fn echo_train(cfg: &RunConfig, grid: bool) -> Result<()> {
    let args = TrainArgs {
        config: cfg.output_dir.join(ECHO_FILE),
        paper_leaky_split: false,
        seed: None,
    };
    echo(&cfg.output_dir, &if grid { Command::Gridsearch(args) } else { Command::Train(args) })
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = absolute_config(args)?;
    let t = Instant::now();
    let out = run_training(&cfg)?;
    echo_train(&cfg, false)?;
    let r = &out.report.train;
    println!(
        "trained {} params for {} steps ({} epochs) in {:.1}s; best val accuracy {:.4} at epoch {}",
        r.param_count,
        r.steps,
        r.history.len(),
        t.elapsed().as_secs_f64(),
        r.best_val_accuracy,
        r.best_epoch
    );
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    println!("checkpoint: {}", out.checkpoint.display());
    Ok(())
}

fn cmd_grid(args: &TrainArgs) -> Result<()> {
    let cfg = absolute_config(args)?;
    let (results, winner) = run_grid(&cfg)?;
    echo_train(&cfg, true)?;
    for r in &results {
        match (r.val_accuracy, &r.error) {
            (Some(acc), _) => println!(
                "{:<8} nd={} f={} k={} r={} acc={acc:.4} params={} ({:.1}s)",
                r.config.conditioning.as_str(),
                r.config.noise_dim,
                r.config.filters,
                r.config.kernel,
                r.config.res_blocks,
                r.param_count,
                r.seconds
            ),
            (None, e) => println!("failed: {:?}: {}", r.config, e.as_deref().unwrap_or("")),
        }
    }
    if let Some(w) = winner {
        println!("best checkpoint: {}", w.display());
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    if args.count == 0 {
        return Err(Error::config("count", "must be at least 1"));
    }
    let (model, resolver) = args.common.open()?;
    let emb = resolver.resolve(&args.prompt)?;
    ensure_dir(&args.common.out)?;
    let name = slug(&args.prompt);
    for (i, z) in model.sample_noise(args.common.seed.unwrap_or(0), args.count).iter().enumerate() {
        let t = Instant::now();
        let img = model.generate_image(&emb, z)?;
        let ms = t.elapsed().as_secs_f64() * 1e3;
        save_image(&model, &img, args.common.scale, &args.common.out.join(format!("{name}-{i}.png")))?;
        let grid = img.to_hex_rows().join("\n") + "\n";
        write_bytes(&args.common.out.join(format!("{name}-{i}.txt")), grid.as_bytes())?;
        println!("{name}-{i}: {ms:.2} ms\n{grid}");
    }
    Ok(())
}

fn cmd_interpolate(args: &InterpolateArgs) -> Result<()> {
    let (model, resolver) = args.common.open()?;
    let e = resolver.resolve_all(&[&args.from, &args.to])?;
    let noise = model.lab_noise(args.common.seed);
    let frames = walk(&model, &e[0], &e[1], args.steps, &noise)?;
    ensure_dir(&args.common.out)?;
    let style = model.meta().render_style(args.common.scale);
    let mut rendered = Vec::with_capacity(frames.len());
    for (k, img) in frames.iter().enumerate() {
        save_image(&model, img, args.common.scale, &args.common.out.join(format!("interp-{k}.png")))?;
        rendered.push(render_rgb(img, &style)?);
    }
    let sheet = contact_sheet(&rendered)?;
    sheet.save_png(&args.common.out.join("interp-sheet.png"))?;
    println!("{} frames written to {}", frames.len(), args.common.out.display());
    Ok(())
}

fn cmd_arith(args: &ArithArgs) -> Result<()> {
    let (model, resolver) = args.common.open()?;
    let expr = parse_expr(&args.expr)?.resolve(&resolver)?;
    let noise = model.lab_noise(args.common.seed);
    let img = apply_expr(&expr, &model, &noise)?;
    ensure_dir(&args.common.out)?;
    save_image(&model, &img, args.common.scale, &args.common.out.join("arith.png"))?;
    println!("{img}");
    Ok(())
}

fn caption_from_stem(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let words: Vec<&str> = stem.split(['_', '-', ' ']).filter(|w| !w.is_empty()).collect();
    (!words.is_empty()).then(|| words.join(" "))
}

fn cmd_preprocess(args: &PreprocessArgs) -> Result<()> {
    let entries = std::fs::read_dir(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Usage(format!("no PNG files in {}", args.input.display())));
    }
    let mut images = Vec::with_capacity(paths.len());
    let mut captions = Vec::with_capacity(paths.len());
    for p in &paths {
        images.push(RgbImage::load_png(p)?);
        captions.push(
            caption_from_stem(p).ok_or_else(|| Error::Validation(format!("{}: no caption in file name", p.display())))?,
        );
    }
    let (palette, quantized) = crate::data::preprocess_emojis(&images, args.seed)?;
    let items = captions
        .into_iter()
        .zip(quantized)
        .map(|(caption, image)| Item {
            caption,
            alt_caption: None,
            image,
        })
        .collect();
    Dataset::new(Domain::Emojis, Some(StyleRef::Palette(palette)), items)?.save(&args.out)?;
    println!("{} emojis written to {}", paths.len(), args.out.display());
    Ok(())
}

fn cmd_baseline(args: &BaselineArgs) -> Result<()> {
    let reference = Dataset::load(&args.dataset)?;
    let count = args.count.unwrap_or(reference.len());
    random_baseline(&reference, count, args.seed)?.save(&args.out)?;
    println!("{count} random images written to {}", args.out.display());
    Ok(())
}

fn parent_dir(p: &Path) -> PathBuf {
    crate::run::dir_of(p).to_path_buf()
}

/// Runs one command, echoing its effective arguments first.
pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Gridsearch(a) => cmd_grid(&a),
        Command::Generate(mut a) => {
            a.common.absolutize()?;
            echo(&a.common.out, &Command::Generate(a.clone()))?;
            cmd_generate(&a)
        }
        Command::Interpolate(mut a) => {
            a.common.absolutize()?;
            echo(&a.common.out, &Command::Interpolate(a.clone()))?;
            cmd_interpolate(&a)
        }
        Command::Arith(mut a) => {
            a.common.absolutize()?;
            echo(&a.common.out, &Command::Arith(a.clone()))?;
            cmd_arith(&a)
        }
        Command::PreprocessEmoji(mut a) => {
            a.input = absolute(&a.input)?;
            a.out = absolute(&a.out)?;
            echo(&parent_dir(&a.out), &Command::PreprocessEmoji(a.clone()))?;
            cmd_preprocess(&a)
        }
        Command::MakeRandomBaseline(mut a) => {
            a.dataset = absolute(&a.dataset)?;
            a.out = absolute(&a.out)?;
            echo(&parent_dir(&a.out), &Command::MakeRandomBaseline(a.clone()))?;
            cmd_baseline(&a)
        }
        Command::Serve(a) => crate::server::serve_blocking(&a.models, a.embeddings.as_deref(), &a.addr),
        Command::Rerun(a) => rerun(&a.file),
    }
}

/// Replays an `invocation.toml`; a file without a `command` key is treated
/// as a run config to train.
pub fn rerun(file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(file.display().to_string(), e.to_string()))?;
    if !table.contains_key("command") {
        return cmd_train(&TrainArgs {
            config: file.to_path_buf(),
            paper_leaky_split: false,
            seed: None,
        });
    }
    let command: Command =
        toml::from_str(&text).map_err(|e| Error::config(file.display().to_string(), e.to_string()))?;
    if matches!(command, Command::Rerun(_)) {
        return Err(Error::Usage("an invocation cannot rerun another invocation".into()));
    }
    execute(command)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 ok, 1 usage or configuration error, 2 runtime failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                1
            } else {
                2
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slugs_are_filesystem_safe() {
        assert_eq!(slug("A flower garden, by the beach!"), "a-flower-garden-by-the-beach");
        assert_eq!(slug("???"), "prompt");
        assert!(slug(&"word ".repeat(40)).len() <= 60);
        assert!(!slug(&"ab ".repeat(40)).ends_with('-'));
    }

    #[test]
    fn captions_come_from_file_stems() {
        assert_eq!(caption_from_stem(Path::new("/x/grinning_cat-face.png")).unwrap(), "grinning cat face");
        assert!(caption_from_stem(Path::new("/x/__.png")).is_none());
    }

    #[test]
    fn invocations_round_trip_through_toml() {
        let cmd = Command::Generate(GenerateArgs {
            common: ModelArgs {
                model: "/m.ckpt".into(),
                embeddings: Some("/e.json".into()),
                seed: Some(7),
                out: "/o".into(),
                scale: 4,
            },
            prompt: "a \"quoted\" prompt".into(),
            count: 3,
        });
        let text = toml::to_string(&cmd).unwrap();
        assert!(text.starts_with("command = \"generate\""), "{text}");
        assert_eq!(toml::from_str::<Command>(&text).unwrap(), cmd);
    }
}
