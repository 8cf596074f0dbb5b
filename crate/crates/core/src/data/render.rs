use super::image::CategoricalImage;
use super::palette::{Palette, TileAtlas, TILE_SIZE};
use super::rgb::RgbImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RenderStyle {
    /// One cell becomes one `scale x scale` block of a flat color.
    Palette { palette: Palette, scale: usize },
    /// One cell becomes its 8x8 tile, repeated `scale` times per pixel.
    Atlas { atlas: TileAtlas, scale: usize },
}

impl RenderStyle {
    pub fn palette(palette: Palette) -> Self {
        RenderStyle::Palette { palette, scale: 1 }
    }

    pub fn atlas(atlas: TileAtlas) -> Self {
        RenderStyle::Atlas { atlas, scale: 1 }
    }

    pub fn with_scale(self, scale: usize) -> Self {
        match self {
            RenderStyle::Palette { palette, .. } => RenderStyle::Palette { palette, scale },
            RenderStyle::Atlas { atlas, .. } => RenderStyle::Atlas { atlas, scale },
        }
    }
}

pub fn render_rgb(img: &CategoricalImage, style: &RenderStyle) -> Result<RgbImage> {
    let (cell, scale) = match style {
        RenderStyle::Palette { scale, .. } => (1, *scale),
        RenderStyle::Atlas { scale, .. } => (TILE_SIZE, *scale),
    };
    if scale == 0 {
        return Err(Error::Usage("render scale must be at least 1".into()));
    }
    let px = cell * scale;
    let mut out = RgbImage::filled(img.width() * px, img.height() * px, [0, 0, 0]);
    for r in 0..img.height() {
        for c in 0..img.width() {
            let id = img.get(r, c);
            for y in 0..px {
                for x in 0..px {
                    let color = match style {
                        RenderStyle::Palette { palette, .. } => palette.colors()[id as usize],
                        RenderStyle::Atlas { atlas, .. } => {
                            atlas.tile(id)[(y / scale) * TILE_SIZE + x / scale]
                        }
                    };
                    out.set(c * px + x, r * px + y, color);
                }
            }
        }
    }
    Ok(out)
}

/// Renders to 8-bit RGB PNG bytes.
pub fn render_png(img: &CategoricalImage, style: &RenderStyle) -> Result<Vec<u8>> {
    render_rgb(img, style)?.encode_png()
}

/// Lays equally sized images out left to right with a 1-pixel gap.
pub fn contact_sheet(images: &[RgbImage]) -> Result<RgbImage> {
    let first = images
        .first()
        .ok_or_else(|| Error::Usage("contact sheet needs at least one image".into()))?;
    let (w, h) = (first.width(), first.height());
    let gap = 1;
    let mut out = RgbImage::filled(images.len() * (w + gap) - gap, h, [255, 255, 255]);
    for (i, img) in images.iter().enumerate() {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::dim("contact_sheet", &[w, h], &[img.width(), img.height()]));
        }
        for y in 0..h {
            for x in 0..w {
                out.set(i * (w + gap) + x, y, img.get(x, y));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::emoji::quantize;

    #[test]
    fn single_red_pixel() {
        let mut colors = Palette::PICO8.0;
        colors[0] = [255, 0, 0];
        let img = CategoricalImage::new(1, 1, vec![0]).unwrap();
        let bytes = render_png(&img, &RenderStyle::palette(Palette(colors))).unwrap();
        let back = RgbImage::decode_png(&bytes).unwrap();
        assert_eq!((back.width(), back.height()), (1, 1));
        assert_eq!(back.get(0, 0), [255, 0, 0]);
    }

    #[test]
    fn map_with_atlas_is_80px() {
        let img = CategoricalImage::filled(10, 10, 3).unwrap();
        let rgb = render_rgb(&img, &RenderStyle::atlas(TileAtlas::solid(&Palette::PICO8))).unwrap();
        assert_eq!((rgb.width(), rgb.height()), (80, 80));
        let scaled = render_rgb(&img, &RenderStyle::palette(Palette::PICO8).with_scale(4)).unwrap();
        assert_eq!((scaled.width(), scaled.height()), (40, 40));
    }

    #[test]
    fn rendering_is_deterministic() {
        let img = CategoricalImage::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        let style = RenderStyle::palette(Palette::PICO8).with_scale(3);
        assert_eq!(render_png(&img, &style).unwrap(), render_png(&img, &style).unwrap());
    }

    proptest! {
        #[test]
        fn render_then_quantize_is_identity(cells in prop::collection::vec(0u8..16, 100), scale in 1usize..3) {
            let img = CategoricalImage::new(10, 10, cells).unwrap();
            let png = render_png(&img, &RenderStyle::palette(Palette::PICO8).with_scale(scale)).unwrap();
            let rgb = RgbImage::decode_png(&png).unwrap();
            let q = quantize(&rgb, &Palette::PICO8);
            for r in 0..10 {
                for c in 0..10 {
                    prop_assert_eq!(q.get(r * scale, c * scale), img.get(r, c));
                }
            }
        }
    }
}
