//! Emoji preparation: 2x inter-area downscale, a 16-color K-means palette
//! fitted across the whole image set, and nearest-color quantization.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{CategoricalImage, NUM_CLASSES};
use super::palette::{luminance, Palette, Rgb};
use super::rgb::RgbImage;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 300;

/// Halves both dimensions; each output pixel is the mean of its 2x2 source
/// block per channel, rounded half-up.
pub fn downscale_inter_area(img: &RgbImage) -> Result<RgbImage> {
    let (w, h) = (img.width(), img.height());
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(Error::Usage(format!("downscale needs even dimensions, got {w}x{h}")));
    }
    let mut out = RgbImage::filled(w / 2, h / 2, [0, 0, 0]);
    for y in 0..h / 2 {
        for x in 0..w / 2 {
            let block = [
                img.get(2 * x, 2 * y),
                img.get(2 * x + 1, 2 * y),
                img.get(2 * x, 2 * y + 1),
                img.get(2 * x + 1, 2 * y + 1),
            ];
            let mut px = [0u8; 3];
            for (ch, v) in px.iter_mut().enumerate() {
                let sum: u32 = block.iter().map(|p| p[ch] as u32).sum();
                *v = ((sum + 2) / 4) as u8;
            }
            out.set(x, y, px);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct KMeansResult {
    /// Rounded centroids, sorted by luminance then RGB.
    pub centroids: Vec<Rgb>,
    /// Total within-cluster squared distance after every Lloyd update.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: &[f64; 3], b: Rgb) -> f64 {
    (0..3).map(|i| (a[i] - b[i] as f64).powi(2)).sum()
}

/// Lloyd's algorithm with k-means++ seeding over RGB values. Stops when no
/// assignment changes or after [`KMEANS_MAX_ITERS`] iterations.
pub fn kmeans(pixels: &[Rgb], k: usize, seed: u64) -> Result<KMeansResult> {
    let mut counts: BTreeMap<Rgb, u64> = BTreeMap::new();
    for &p in pixels {
        *counts.entry(p).or_default() += 1;
    }
    if k == 0 || counts.len() < k {
        return Err(Error::Validation(format!(
            "k-means needs at least {k} distinct colors, found {}",
            counts.len()
        )));
    }
    let colors: Vec<Rgb> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts.values().map(|&c| c as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let pick = |rng: &mut ChaCha8Rng, w: &[f64]| -> usize {
        let total: f64 = w.iter().sum();
        let mut r = rng.gen::<f64>() * total;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 && r < wi {
                return i;
            }
            r -= wi;
        }
        w.iter().rposition(|&wi| wi > 0.0).unwrap_or(0)
    };

    let as_f = |c: Rgb| [c[0] as f64, c[1] as f64, c[2] as f64];
    let mut centroids = vec![as_f(colors[pick(&mut rng, &weights)])];
    let mut nearest: Vec<f64> = colors.iter().map(|&c| dist2(&centroids[0], c)).collect();
    while centroids.len() < k {
        let w: Vec<f64> = nearest.iter().zip(&weights).map(|(d, n)| d * n).collect();
        let next = as_f(colors[pick(&mut rng, &w)]);
        for (d, &c) in nearest.iter_mut().zip(&colors) {
            *d = d.min(dist2(&next, c));
        }
        centroids.push(next);
    }

    let mut assign = vec![usize::MAX; colors.len()];
    let mut history = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITERS {
        let mut changed = false;
        for (i, &c) in colors.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (j, cent) in centroids.iter().enumerate() {
                let d = dist2(cent, c);
                if d < best.0 {
                    best = (d, j);
                }
            }
            if assign[i] != best.1 {
                assign[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        iterations += 1;

        let mut sums = vec![[0f64; 3]; k];
        let mut mass = vec![0f64; k];
        for (i, &c) in colors.iter().enumerate() {
            let j = assign[i];
            for ch in 0..3 {
                sums[j][ch] += c[ch] as f64 * weights[i];
            }
            mass[j] += weights[i];
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                centroids[j] = [sums[j][0] / mass[j], sums[j][1] / mass[j], sums[j][2] / mass[j]];
            }
        }
        // An empty cluster takes over the color worst served by its centroid.
        for j in 0..k {
            if mass[j] == 0.0 {
                let (far, _) = colors
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| (i, dist2(&centroids[assign[i]], c)))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
                centroids[j] = as_f(colors[far]);
                assign[far] = j;
            }
        }
        let objective = colors
            .iter()
            .enumerate()
            .map(|(i, &c)| weights[i] * dist2(&centroids[assign[i]], c))
            .sum();
        history.push(objective);
    }

    let mut rounded: Vec<Rgb> = centroids
        .iter()
        .map(|c| c.map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8))
        .collect();
    rounded.sort_by(|a, b| luminance(*a).total_cmp(&luminance(*b)).then(a.cmp(b)));
    Ok(KMeansResult {
        centroids: rounded,
        objective_history: history,
        iterations,
    })
}

/// Sixteen-color palette fitted to `pixels`. With sixteen or fewer distinct
/// colors the palette is exactly those colors (sorted by luminance), padded
/// by repeating the last one; the padding classes are never assigned.
pub fn kmeans_palette(pixels: &[Rgb], seed: u64) -> Result<Palette> {
    let distinct: BTreeSet<Rgb> = pixels.iter().copied().collect();
    if distinct.is_empty() {
        return Err(Error::Validation("no pixels to fit a palette to".into()));
    }
    if distinct.len() <= NUM_CLASSES {
        let mut colors: Vec<Rgb> = distinct.into_iter().collect();
        colors.sort_by(|a, b| luminance(*a).total_cmp(&luminance(*b)).then(a.cmp(b)));
        let last = *colors.last().expect("non-empty");
        colors.resize(NUM_CLASSES, last);
        return Palette::from_slice(&colors);
    }
    Palette::from_slice(&kmeans(pixels, NUM_CLASSES, seed)?.centroids)
}

pub fn quantize(img: &RgbImage, palette: &Palette) -> CategoricalImage {
    let cells = img.pixels().iter().map(|&p| palette.nearest(p)).collect();
    CategoricalImage::new(img.width(), img.height(), cells).expect("palette indices are in range")
}

/// Downscales every image, fits one shared palette and quantizes.
pub fn preprocess_emojis(images: &[RgbImage], seed: u64) -> Result<(Palette, Vec<CategoricalImage>)> {
    let small = images.iter().map(downscale_inter_area).collect::<Result<Vec<_>>>()?;
    let all: Vec<Rgb> = small.iter().flat_map(|i| i.pixels().iter().copied()).collect();
    let palette = kmeans_palette(&all, seed)?;
    let quantized = small.iter().map(|i| quantize(i, &palette)).collect();
    Ok((palette, quantized))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::Rng;

    use super::*;

    #[test]
    fn few_colors_map_exactly() {
        let px = [[0, 0, 0], [250, 250, 250], [200, 10, 10], [0, 0, 0]];
        let p = kmeans_palette(&px, 0).unwrap();
        assert_eq!(&p.colors()[..3], &[[0, 0, 0], [200, 10, 10], [250, 250, 250]]);
        assert!(p.colors()[3..].iter().all(|&c| c == [250, 250, 250]));
        let img = RgbImage::new(2, 2, px.to_vec()).unwrap();
        assert_eq!(quantize(&img, &p).cells(), &[0, 2, 1, 0]);
        assert!(kmeans_palette(&[], 0).is_err());
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RgbImage::filled(32, 32, [12, 200, 7]);
        let small = downscale_inter_area(&img).unwrap();
        assert_eq!((small.width(), small.height()), (16, 16));
        assert!(small.pixels().iter().all(|&p| p == [12, 200, 7]));
    }

    #[test]
    fn block_mean_rounds_half_up() {
        let img = RgbImage::new(2, 2, vec![[0, 0, 0], [0, 0, 0], [0, 0, 0], [255, 0, 0]]).unwrap();
        assert_eq!(downscale_inter_area(&img).unwrap().get(0, 0), [64, 0, 0]);
        let check = RgbImage::new(
            4,
            2,
            (0..8)
                .map(|i| if (i % 4 + i / 4) % 2 == 0 { [0; 3] } else { [255; 3] })
                .collect(),
        )
        .unwrap();
        assert!(downscale_inter_area(&check).unwrap().pixels().iter().all(|&p| p == [128; 3]));
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(downscale_inter_area(&RgbImage::filled(3, 4, [0; 3])).is_err());
    }

    fn sixteen_colors() -> Vec<Rgb> {
        (0..16u32).map(|i| [(i * 16) as u8, (255 - i * 15) as u8, ((i * 37) % 251) as u8]).collect()
    }

    #[test]
    fn sixteen_distinct_colors_are_a_fixed_point() {
        let colors = sixteen_colors();
        let pixels: Vec<Rgb> = colors.iter().flat_map(|&c| std::iter::repeat_n(c, 5)).collect();
        let palette = kmeans_palette(&pixels, 3).unwrap();
        let mut expect = colors.clone();
        expect.sort_by(|a, b| luminance(*a).total_cmp(&luminance(*b)).then(a.cmp(b)));
        assert_eq!(palette.colors().to_vec(), expect);
    }

    #[test]
    fn two_clusters_converge_to_their_means() {
        let pixels = vec![[8, 10, 12], [12, 10, 8], [10, 9, 10], [10, 11, 10], [200, 100, 50], [202, 98, 54]];
        let res = kmeans(&pixels, 2, 7).unwrap();
        assert_eq!(res.centroids, vec![[10, 10, 10], [201, 99, 52]]);
    }

    #[test]
    fn too_few_colors_is_an_error_for_raw_kmeans() {
        assert!(matches!(kmeans(&[[1, 2, 3]; 100], 2, 0), Err(Error::Validation(_))));
    }

    #[test]
    fn kmeans_is_deterministic_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pixels: Vec<Rgb> = (0..2000).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let a = kmeans(&pixels, 16, 42).unwrap();
        let b = kmeans(&pixels, 16, 42).unwrap();
        assert_eq!(a.centroids, b.centroids);
        assert!(a.iterations <= KMEANS_MAX_ITERS);
        for w in a.objective_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn quantize_exact_and_tie_rule() {
        let palette = Palette::PICO8;
        let img = RgbImage::new(4, 1, palette.colors()[..4].to_vec()).unwrap();
        assert_eq!(quantize(&img, &palette).cells(), &[0, 1, 2, 3]);

        let mut colors = [[250u8, 250, 250]; 16];
        colors[3] = [0, 0, 0];
        colors[7] = [0, 0, 10];
        let img = RgbImage::new(1, 1, vec![[0, 0, 5]]).unwrap();
        assert_eq!(quantize(&img, &Palette(colors)).cells(), &[3]);
    }

    proptest! {
        #[test]
        fn quantize_inverts_palette_rendering(cells in prop::collection::vec(0u8..16, 64)) {
            let img = CategoricalImage::new(8, 8, cells).unwrap();
            let rgb = RgbImage::new(8, 8, img.cells().iter().map(|&c| Palette::PICO8.colors()[c as usize]).collect()).unwrap();
            prop_assert_eq!(quantize(&rgb, &Palette::PICO8), img);
        }
    }
}
