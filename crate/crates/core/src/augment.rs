//! Embedding-space augmentation: multiplicative Gaussian noise, random
//! MixUp with soft targets, and interpolation toward alternate captions.
//! Also the split policy that decides whether augmentation sees the
//! validation items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{split_indices, CategoricalImage, Dataset, Domain};
use crate::embeddings::Resolver;
use crate::error::{Error, Result};
use crate::model::EMBED_DIM;
use crate::tensor::Tensor;
use crate::training::{TrainRow, ValPair};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedCaption {
    pub caption: String,
    pub embedding: Vec<f32>,
    pub alt_embedding: Option<Vec<f32>>,
    /// Index of the item in its dataset.
    pub image_ref: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPlan {
    pub noisy_copies: usize,
    pub noise_sigma: f64,
    pub use_alt_labels: bool,
    pub alt_interp_n: usize,
    pub random_mixup_count: usize,
    pub mixup_lambda: f64,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        AugmentPlan {
            noisy_copies: 3,
            noise_sigma: 0.15,
            use_alt_labels: false,
            alt_interp_n: 2,
            random_mixup_count: 0,
            mixup_lambda: 0.5,
            seed: 0,
        }
    }
}

impl AugmentPlan {
    /// No augmentation at all: the table is the originals.
    pub fn none() -> Self {
        AugmentPlan {
            noisy_copies: 0,
            noise_sigma: 0.0,
            use_alt_labels: false,
            alt_interp_n: 0,
            random_mixup_count: 0,
            mixup_lambda: 0.5,
            seed: 0,
        }
    }

    /// Per-domain defaults. Random MixUp is only on for maps, with one mixed
    /// row per original; alternate captions are used whenever present.
    pub fn for_domain(domain: Domain, originals: usize, has_alts: bool) -> Self {
        AugmentPlan {
            use_alt_labels: has_alts,
            random_mixup_count: if domain == Domain::Maps { originals } else { 0 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mixup_lambda) {
            return Err(Error::config("mixup_lambda", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// `e * n` elementwise with `n ~ Normal(1, sigma)`.
pub fn noise_augment_with(e: &[f32], sigma: f64, rng: &mut impl Rng) -> Vec<f32> {
    if sigma == 0.0 {
        return e.to_vec();
    }
    let dist = Normal::new(1.0, sigma).expect("sigma is finite and non-negative");
    e.iter().map(|&v| (v as f64 * dist.sample(rng)) as f32).collect()
}

pub fn noise_augment(e: &[f32], sigma: f64, seed: u64) -> Vec<f32> {
    noise_augment_with(e, sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Convex combination of two (embedding, target) pairs.
pub fn mixup_random(a: (&[f32], &Tensor), b: (&[f32], &Tensor), lambda: f64) -> Result<(Vec<f32>, Tensor)> {
    if a.0.len() != b.0.len() {
        return Err(Error::dim("mixup embedding", &[a.0.len()], &[b.0.len()]));
    }
    if a.1.shape() != b.1.shape() {
        return Err(Error::dim("mixup target", a.1.shape(), b.1.shape()));
    }
    let mix = |x: f32, y: f32| (lambda * x as f64 + (1.0 - lambda) * y as f64) as f32;
    let emb = a.0.iter().zip(b.0).map(|(&x, &y)| mix(x, y)).collect();
    let tgt = a.1.data().iter().zip(b.1.data()).map(|(&x, &y)| mix(x, y)).collect();
    Ok((emb, Tensor::new(a.1.shape().to_vec(), tgt)?))
}

/// The `n` interior points `e + t (alt - e)`, `t = k / (n + 1)`.
pub fn alt_label_interpolate(e: &[f32], alt: &[f32], n: usize) -> Result<Vec<Vec<f32>>> {
    if e.len() != alt.len() {
        return Err(Error::dim("alt interpolation", &[e.len()], &[alt.len()]));
    }
    Ok((1..=n)
        .map(|k| {
            let t = k as f64 / (n + 1) as f64;
            e.iter()
                .zip(alt)
                .map(|(&a, &b)| (a as f64 + t * (b as f64 - a as f64)) as f32)
                .collect()
        })
        .collect())
}

/// Where an augmented row came from. Item indices refer to the dataset
/// passed to [`build_augmented_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowSource {
    Original { item: usize },
    AltLabel { item: usize },
    Noisy { item: usize, alt: bool, copy: usize },
    AltInterp { item: usize, k: usize },
    Mixup { a: usize, b: usize, lambda: f64 },
}

impl RowSource {
    pub fn items(&self) -> Vec<usize> {
        match *self {
            RowSource::Original { item }
            | RowSource::AltLabel { item }
            | RowSource::Noisy { item, .. }
            | RowSource::AltInterp { item, .. } => vec![item],
            RowSource::Mixup { a, b, .. } => vec![a, b],
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AugmentedTable {
    pub rows: Vec<TrainRow>,
    pub sources: Vec<RowSource>,
    /// Items skipped by alt-label steps because they have no alt embedding.
    pub warnings: Vec<String>,
}

impl AugmentedTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Embeds every caption (and alt caption when `with_alts`).
pub fn embed_captions(ds: &Dataset, resolver: &Resolver, with_alts: bool) -> Result<Vec<EmbeddedCaption>> {
    let caps: Vec<&str> = ds.items.iter().map(|i| i.caption.as_str()).collect();
    let embs = resolver.resolve_all(&caps)?;
    let alt_texts: Vec<&str> = if with_alts {
        ds.items.iter().filter_map(|i| i.alt_caption.as_deref()).collect()
    } else {
        Vec::new()
    };
    let mut alt_embs = resolver.resolve_all(&alt_texts)?.into_iter();
    Ok(ds
        .items
        .iter()
        .zip(embs)
        .enumerate()
        .map(|(idx, (item, embedding))| EmbeddedCaption {
            caption: item.caption.clone(),
            embedding,
            alt_embedding: if with_alts && item.alt_caption.is_some() { alt_embs.next() } else { None },
            image_ref: idx,
        })
        .collect())
}

/// Builds the training table. Rows come in this order: originals, alt
/// captions, noisy copies of both, alt interpolations, MixUp rows.
pub fn build_augmented_dataset(ds: &Dataset, captions: &[EmbeddedCaption], plan: &AugmentPlan) -> Result<AugmentedTable> {
    plan.validate()?;
    for c in captions {
        if c.image_ref >= ds.len() {
            return Err(Error::Validation(format!("caption {:?} refers to missing item {}", c.caption, c.image_ref)));
        }
        if c.embedding.len() != EMBED_DIM || c.alt_embedding.as_ref().is_some_and(|a| a.len() != EMBED_DIM) {
            return Err(Error::Validation(format!("embedding for {:?} must have {EMBED_DIM} values", c.caption)));
        }
    }
    let with_alts = captions.iter().filter(|c| c.alt_embedding.is_some()).count();
    if plan.use_alt_labels && with_alts == 0 {
        return Err(Error::config("use_alt_labels", "is set but no caption has an alternate embedding"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut t = AugmentedTable::default();
    let targets: Vec<Tensor> = captions.iter().map(|c| ds.items[c.image_ref].image.one_hot()).collect();

    // Base label rows: every original, then every alt caption.
    let mut base: Vec<(usize, bool, &[f32])> = captions.iter().enumerate().map(|(i, c)| (i, false, c.embedding.as_slice())).collect();
    if plan.use_alt_labels {
        for (i, c) in captions.iter().enumerate() {
            match &c.alt_embedding {
                Some(a) => base.push((i, true, a.as_slice())),
                None => t.warnings.push(format!("no alternate caption for {:?}; alt rows skipped", c.caption)),
            }
        }
    }
    for &(i, alt, e) in &base {
        let item = captions[i].image_ref;
        t.rows.push(TrainRow {
            embedding: e.to_vec(),
            target: targets[i].clone(),
        });
        t.sources.push(if alt { RowSource::AltLabel { item } } else { RowSource::Original { item } });
    }
    for copy in 0..plan.noisy_copies {
        for &(i, alt, e) in &base {
            t.rows.push(TrainRow {
                embedding: noise_augment_with(e, plan.noise_sigma, &mut rng),
                target: targets[i].clone(),
            });
            t.sources.push(RowSource::Noisy {
                item: captions[i].image_ref,
                alt,
                copy,
            });
        }
    }
    if plan.use_alt_labels {
        for (i, c) in captions.iter().enumerate() {
            let Some(alt) = &c.alt_embedding else { continue };
            for (k, e) in alt_label_interpolate(&c.embedding, alt, plan.alt_interp_n)?.into_iter().enumerate() {
                t.rows.push(TrainRow {
                    embedding: e,
                    target: targets[i].clone(),
                });
                t.sources.push(RowSource::AltInterp { item: c.image_ref, k: k + 1 });
            }
        }
    }
    if plan.random_mixup_count > 0 && !captions.is_empty() {
        let n = captions.len();
        for _ in 0..plan.random_mixup_count {
            let a = rng.gen_range(0..n);
            // Partner drawn with replacement, distinct from `a` when possible.
            let b = if n > 1 { (a + rng.gen_range(1..n)) % n } else { a };
            let (emb, target) = mixup_random(
                (&captions[a].embedding, &targets[a]),
                (&captions[b].embedding, &targets[b]),
                plan.mixup_lambda,
            )?;
            t.rows.push(TrainRow { embedding: emb, target });
            t.sources.push(RowSource::Mixup {
                a: captions[a].image_ref,
                b: captions[b].image_ref,
                lambda: plan.mixup_lambda,
            });
        }
    }
    Ok(t)
}

/// Training rows and validation pairs ready for [`crate::training::train`].
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub rows: Vec<TrainRow>,
    pub sources: Vec<RowSource>,
    pub val: Vec<ValPair>,
    pub val_sources: Vec<RowSource>,
    /// Dataset items behind any validation pair.
    pub val_items: Vec<usize>,
    pub train_items: Vec<usize>,
    pub leaky_split: bool,
    pub warnings: Vec<String>,
}

/// Splits then augments only the training items. With `leaky` the whole
/// dataset is augmented first and the augmented rows are split, so
/// derivatives of one caption can land on both sides.
pub fn prepare_training_data(
    ds: &Dataset,
    resolver: &Resolver,
    plan: &AugmentPlan,
    val_fraction: f64,
    split_seed: u64,
    leaky: bool,
) -> Result<PreparedData> {
    let captions = embed_captions(ds, resolver, plan.use_alt_labels)?;
    if !leaky {
        let (train_idx, val_idx) = split_indices(ds.len(), val_fraction, split_seed)?;
        let train_ds = ds.subset(&train_idx);
        let train_caps: Vec<EmbeddedCaption> = train_idx
            .iter()
            .enumerate()
            .map(|(j, &i)| EmbeddedCaption {
                image_ref: j,
                ..captions[i].clone()
            })
            .collect();
        let table = build_augmented_dataset(&train_ds, &train_caps, plan)?;
        let remap = |s: RowSource| match s {
            RowSource::Original { item } => RowSource::Original { item: train_idx[item] },
            RowSource::AltLabel { item } => RowSource::AltLabel { item: train_idx[item] },
            RowSource::Noisy { item, alt, copy } => RowSource::Noisy { item: train_idx[item], alt, copy },
            RowSource::AltInterp { item, k } => RowSource::AltInterp { item: train_idx[item], k },
            RowSource::Mixup { a, b, lambda } => RowSource::Mixup { a: train_idx[a], b: train_idx[b], lambda },
        };
        let val = val_idx
            .iter()
            .map(|&i| ValPair {
                embedding: captions[i].embedding.clone(),
                image: ds.items[i].image.clone(),
            })
            .collect();
        return Ok(PreparedData {
            rows: table.rows,
            sources: table.sources.into_iter().map(remap).collect(),
            val,
            val_sources: val_idx.iter().map(|&item| RowSource::Original { item }).collect(),
            val_items: val_idx,
            train_items: train_idx,
            leaky_split: false,
            warnings: table.warnings,
        });
    }

    let table = build_augmented_dataset(ds, &captions, plan)?;
    let (train_rows, val_rows) = split_indices(table.len(), val_fraction, split_seed)?;
    let val = val_rows
        .iter()
        .map(|&r| {
            Ok(ValPair {
                embedding: table.rows[r].embedding.clone(),
                image: CategoricalImage::decode(&table.rows[r].target)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedData {
        rows: train_rows.iter().map(|&r| table.rows[r].clone()).collect(),
        sources: train_rows.iter().map(|&r| table.sources[r].clone()).collect(),
        val,
        val_sources: val_rows.iter().map(|&r| table.sources[r].clone()).collect(),
        val_items: {
            let mut items: Vec<usize> = val_rows.iter().flat_map(|&r| table.sources[r].items()).collect();
            items.sort_unstable();
            items.dedup();
            items
        },
        train_items: (0..ds.len()).collect(),
        leaky_split: true,
        warnings: table.warnings,
    })
}
