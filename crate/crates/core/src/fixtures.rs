//! Synthetic datasets and a deterministic stand-in text encoder, for
//! examples and tests that must run without external models or data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::data::{CategoricalImage, Dataset, Domain, Item, StyleRef, Palette};
use crate::embeddings::EmbeddingsFile;
use crate::error::Result;
use crate::model::EMBED_DIM;

/// Bag-of-words hashing encoder: each lowercase word maps to a fixed random
/// direction, the text embedding is their normalized sum. Shared words give
/// similar embeddings, which is enough structure for latent-space demos.
pub fn hash_embed(text: &str) -> Vec<f32> {
    let mut acc = vec![0f64; EMBED_DIM];
    let words = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase);
    for w in words {
        let digest = Sha256::digest(w.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(digest.into());
        for a in acc.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *a += z;
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; EMBED_DIM];
    }
    acc.iter().map(|v| (v / norm) as f32).collect()
}

/// Embeddings file covering `texts`, built with [`hash_embed`].
pub fn hash_embeddings<S: AsRef<str>>(texts: &[S]) -> EmbeddingsFile {
    let mut file = EmbeddingsFile::new("hash-bow-fixture");
    for t in texts {
        file.insert(t.as_ref(), hash_embed(t.as_ref())).expect("fixture embeddings have the right width");
    }
    file
}

const GROUNDS: [(&str, u8); 4] = [("grass", 3), ("sand", 15), ("snow", 7), ("lava", 8)];
const FEATURES: [(&str, u8); 6] = [
    ("river", 12),
    ("road", 5),
    ("rocks", 6),
    ("trees", 11),
    ("flowers", 14),
    ("walls", 4),
];

fn draw(feature: usize, color: u8, size: usize, cells: &mut [u8], rng: &mut ChaCha8Rng) {
    let off = rng.gen_range(0..size / 2);
    for r in 0..size {
        for c in 0..size {
            let hit = match feature {
                0 => c == (off + r / 3) % size || c == (off + 1 + r / 3) % size,
                1 => r == off + size / 4,
                2 => (r * 7 + c * 3 + off) % 5 == 0,
                3 => r % 3 == 0 && (c + off) % 3 == 0,
                4 => (r + c + off) % 4 == 0,
                _ => r == 0 || c == 0 || r == size - 1 || c == size - 1,
            };
            if hit {
                cells[r * size + c] = color;
            }
        }
    }
}

/// `count` captioned grids for `domain`, each a ground color plus one
/// feature pattern whose placement varies with the seed. Captions read like
/// "grass with a river"; alt captions rephrase them.
pub fn synthetic_dataset(domain: Domain, count: usize, seed: u64) -> Result<Dataset> {
    let size = domain.image_size().unwrap_or(8);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count)
        .map(|i| {
            let (g, gc) = GROUNDS[i % GROUNDS.len()];
            let f = (i / GROUNDS.len()) % FEATURES.len();
            let (fname, fc) = FEATURES[f];
            let mut cells = vec![gc; size * size];
            draw(f, fc, size, &mut cells, &mut rng);
            let round = i / (GROUNDS.len() * FEATURES.len());
            let suffix = if round == 0 { String::new() } else { format!(" variant {round}") };
            Ok(Item {
                caption: format!("{g} with {fname}{suffix}"),
                alt_caption: Some(format!("{fname} on {g} ground{suffix}")),
                image: CategoricalImage::new(size, size, cells)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(domain, Some(StyleRef::Palette(Palette::PICO8)), items)
}

/// `count` pairs of uniformly random `size x size` grids with unique captions.
pub fn random_pairs(count: usize, size: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..count)
        .map(|i| {
            let cells = (0..size * size).map(|_| rng.gen_range(0..16u8)).collect();
            Ok(Item {
                caption: format!("random pattern number {i}"),
                alt_caption: None,
                image: CategoricalImage::new(size, size, cells)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(Domain::Custom, None, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f32], b: &[f32]) -> f32 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn hash_embed_is_unit_and_deterministic() {
        let a = hash_embed("a flower garden by the beach");
        assert_eq!(a.len(), EMBED_DIM);
        assert_eq!(a, hash_embed("a flower garden by the beach"));
        assert!((cos(&a, &a) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn shared_words_mean_closer_embeddings() {
        let base = hash_embed("grass with trees");
        let near = hash_embed("grass with rocks");
        let far = hash_embed("lava moat castle");
        assert!(cos(&base, &near) > cos(&base, &far));
    }

    #[test]
    fn synthetic_dataset_is_valid_and_seeded() {
        for d in [Domain::Maps, Domain::Sprites, Domain::Emojis] {
            let ds = synthetic_dataset(d, 30, 1).unwrap();
            assert_eq!(ds.len(), 30);
            assert_eq!(ds, synthetic_dataset(d, 30, 1).unwrap());
            let mut caps: Vec<_> = ds.items.iter().map(|i| &i.caption).collect();
            caps.sort();
            caps.dedup();
            assert_eq!(caps.len(), 30);
        }
    }
}
