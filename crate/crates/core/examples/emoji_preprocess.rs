//! Downscale RGB art to 16x16, fit a shared 16-color palette and quantize.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fivedollar::data::{preprocess_emojis, render_rgb, RenderStyle, RgbImage};

fn blob(rng: &mut ChaCha8Rng, color: [u8; 3]) -> RgbImage {
    let (cx, cy, r) = (rng.gen_range(20.0..44.0), rng.gen_range(20.0..44.0), rng.gen_range(10.0..18.0));
    let px = (0..64 * 64)
        .map(|i| {
            let (x, y) = ((i % 64) as f64, (i / 64) as f64);
            if (x - cx).powi(2) + (y - cy).powi(2) < r * r {
                color
            } else {
                [255, 255, 255]
            }
        })
        .collect();
    RgbImage::new(64, 64, px).unwrap()
}

fn main() -> fivedollar::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let colors = [[230, 40, 40], [40, 160, 60], [40, 80, 220], [250, 200, 30], [120, 60, 30], [20, 20, 20]];
    let images: Vec<RgbImage> = (0..24).map(|i| blob(&mut rng, colors[i % colors.len()])).collect();

    let (palette, grids) = preprocess_emojis(&images, 0)?;
    println!("palette (darkest first): {:?}", palette.colors());
    println!("first emoji as 16x16 indices:");
    for row in grids[0].to_hex_rows() {
        println!("  {row}");
    }
    let back = render_rgb(&grids[0], &RenderStyle::palette(palette))?;
    println!("re-rendered to {}x{}", back.width(), back.height());
    Ok(())
}
