use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{CategoricalImage, NUM_CLASSES};
use super::palette::Palette;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Maps,
    Sprites,
    Emojis,
    Custom,
}

impl Domain {
    /// Side length of the stock images for this domain.
    pub fn image_size(self) -> Option<usize> {
        match self {
            Domain::Maps => Some(10),
            Domain::Sprites => Some(8),
            Domain::Emojis => Some(16),
            Domain::Custom => None,
        }
    }

    /// Prefix prepended to captions before CLIP scoring.
    pub fn clip_preprompt(self) -> &'static str {
        match self {
            Domain::Maps => "a frame from a pixel game map of ",
            Domain::Emojis => "a pixelated emoji of ",
            Domain::Sprites => "a pixel art style sprite of ",
            Domain::Custom => "",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Maps => "maps",
            Domain::Sprites => "sprites",
            Domain::Emojis => "emojis",
            Domain::Custom => "custom",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How a dataset's categories are drawn: flat colors or tile bitmaps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StyleRef {
    Palette(Palette),
    /// Path to a 32x32 tile sheet, relative to the dataset file.
    Atlas(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Item {
    pub caption: String,
    pub alt_caption: Option<String>,
    pub image: CategoricalImage,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub domain: Domain,
    pub style: Option<StyleRef>,
    pub items: Vec<Item>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RowRepr {
    Hex(String),
    Cells(Vec<u32>),
}

#[derive(Serialize, Deserialize)]
struct ItemRepr {
    caption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alt_caption: Option<String>,
    grid: Vec<RowRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetRepr {
    format_version: u32,
    domain: Domain,
    width: usize,
    height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    style: Option<StyleRef>,
    items: Vec<ItemRepr>,
}

fn decode_item(idx: usize, repr: ItemRepr, width: usize, height: usize) -> Result<Item> {
    let fail = |msg: String| Error::Validation(format!("item {idx}: {msg}"));
    if repr.caption.trim().is_empty() {
        return Err(fail("caption is empty".into()));
    }
    if repr.grid.len() != height {
        return Err(fail(format!("grid has {} rows, expected {height}", repr.grid.len())));
    }
    let mut cells = Vec::with_capacity(width * height);
    for (r, row) in repr.grid.iter().enumerate() {
        let before = cells.len();
        match row {
            RowRepr::Hex(s) => {
                for ch in s.chars() {
                    let v = ch
                        .to_digit(16)
                        .ok_or_else(|| fail(format!("row {r}: invalid cell {ch:?}, must be a hex digit 0-f")))?;
                    cells.push(v as u8);
                }
            }
            RowRepr::Cells(vals) => {
                for &v in vals {
                    if v as usize >= NUM_CLASSES {
                        return Err(fail(format!("row {r}: cell value {v} is out of range 0..16")));
                    }
                    cells.push(v as u8);
                }
            }
        }
        if cells.len() - before != width {
            return Err(fail(format!("row {r} has {} cells, expected {width}", cells.len() - before)));
        }
    }
    let image = CategoricalImage::new(width, height, cells).map_err(|e| fail(e.to_string()))?;
    Ok(Item {
        caption: repr.caption,
        alt_caption: repr.alt_caption.filter(|s| !s.trim().is_empty()),
        image,
    })
}

impl Dataset {
    pub fn new(domain: Domain, style: Option<StyleRef>, items: Vec<Item>) -> Result<Self> {
        let ds = Dataset { domain, style, items };
        ds.validate()?;
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `(width, height)` shared by every image, or `None` when empty.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.items.first().map(|i| (i.image.width(), i.image.height()))
    }

    pub fn validate(&self) -> Result<()> {
        let Some((w, h)) = self.dims() else {
            return Ok(());
        };
        if let Some(n) = self.domain.image_size() {
            if (w, h) != (n, n) {
                return Err(Error::Validation(format!(
                    "{} images must be {n}x{n}, got {w}x{h}",
                    self.domain
                )));
            }
        }
        for (i, item) in self.items.iter().enumerate() {
            if item.caption.trim().is_empty() {
                return Err(Error::Validation(format!("item {i}: caption is empty")));
            }
            if (item.image.width(), item.image.height()) != (w, h) {
                return Err(Error::Validation(format!(
                    "item {i}: image is {}x{}, dataset images are {w}x{h}",
                    item.image.width(),
                    item.image.height()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: DatasetRepr = serde_json::from_str(text)?;
        if repr.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "unsupported dataset format_version {}, expected {DATASET_FORMAT_VERSION}",
                repr.format_version
            )));
        }
        let (w, h) = (repr.width, repr.height);
        if w == 0 || h == 0 {
            return Err(Error::Validation(format!("dataset dimensions must be positive, got {w}x{h}")));
        }
        let items = repr
            .items
            .into_iter()
            .enumerate()
            .map(|(i, it)| decode_item(i, it, w, h))
            .collect::<Result<Vec<_>>>()?;
        let ds = Dataset {
            domain: repr.domain,
            style: repr.style,
            items,
        };
        if let Some(n) = ds.domain.image_size() {
            if (w, h) != (n, n) {
                return Err(Error::Validation(format!("{} images must be {n}x{n}, got {w}x{h}", ds.domain)));
            }
        }
        ds.validate()?;
        Ok(ds)
    }

    pub fn to_json(&self) -> Result<String> {
        let (width, height) = self
            .dims()
            .or_else(|| self.domain.image_size().map(|n| (n, n)))
            .unwrap_or((1, 1));
        let repr = DatasetRepr {
            format_version: DATASET_FORMAT_VERSION,
            domain: self.domain,
            width,
            height,
            style: self.style.clone(),
            items: self
                .items
                .iter()
                .map(|it| ItemRepr {
                    caption: it.caption.clone(),
                    alt_caption: it.alt_caption.clone(),
                    grid: it.image.to_hex_rows().into_iter().map(RowRepr::Hex).collect(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&repr)?;
        text.push('\n');
        Ok(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            domain: self.domain,
            style: self.style.clone(),
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
        }
    }

    pub fn has_alt_captions(&self) -> bool {
        self.items.iter().any(|i| i.alt_caption.is_some())
    }

    /// Every caption and alt caption, in item order.
    pub fn all_texts(&self) -> Vec<&str> {
        self.items
            .iter()
            .flat_map(|i| std::iter::once(i.caption.as_str()).chain(i.alt_caption.as_deref()))
            .collect()
    }
}

/// Seeded shuffle of `0..n` split into `(train, val)`; the validation side
/// gets `round(n * fraction)` indices.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Usage(format!("validation fraction must be in (0, 1), got {fraction}")));
    }
    let n_val = (n as f64 * fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Usage(format!(
            "splitting {n} items with fraction {fraction} leaves an empty side"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val = order.split_off(n - n_val);
    Ok((order, val))
}

/// Splits original (unaugmented) items into disjoint train and validation sets.
pub fn split_train_val(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds.len(), fraction, seed)?;
    Ok((ds.subset(&train), ds.subset(&val)))
}

/// Uniformly random images paired with the reference dataset's real
/// captions in a seeded shuffled order.
pub fn random_baseline(reference: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::Usage("random baseline count must be at least 1".into()));
    }
    let (w, h) = reference
        .dims()
        .or_else(|| reference.domain.image_size().map(|n| (n, n)))
        .ok_or_else(|| Error::Usage("reference dataset has no images and no stock size".into()))?;
    if reference.is_empty() {
        return Err(Error::Usage("reference dataset has no captions to pair with".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..reference.len()).collect();
    order.shuffle(&mut rng);
    let items = (0..count)
        .map(|i| {
            let src = &reference.items[order[i % order.len()]];
            let cells = (0..w * h).map(|_| rng.gen_range(0..NUM_CLASSES as u8)).collect();
            Item {
                caption: src.caption.clone(),
                alt_caption: src.alt_caption.clone(),
                image: CategoricalImage::new(w, h, cells).expect("in range"),
            }
        })
        .collect();
    Dataset::new(reference.domain, reference.style.clone(), items)
}
