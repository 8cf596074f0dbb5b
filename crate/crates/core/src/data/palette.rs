use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::NUM_CLASSES;
use super::rgb::RgbImage;
use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

/// Sixteen RGB colors indexed by category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette(pub [Rgb; NUM_CLASSES]);

impl Palette {
    /// The fixed palette of the PICO-8 fantasy console.
    pub const PICO8: Palette = Palette([
        [0x00, 0x00, 0x00],
        [0x1d, 0x2b, 0x53],
        [0x7e, 0x25, 0x53],
        [0x00, 0x87, 0x51],
        [0xab, 0x52, 0x36],
        [0x5f, 0x57, 0x4f],
        [0xc2, 0xc3, 0xc7],
        [0xff, 0xf1, 0xe8],
        [0xff, 0x00, 0x4d],
        [0xff, 0xa3, 0x00],
        [0xff, 0xec, 0x27],
        [0x00, 0xe4, 0x36],
        [0x29, 0xad, 0xff],
        [0x83, 0x76, 0x9c],
        [0xff, 0x77, 0xa8],
        [0xff, 0xcc, 0xaa],
    ]);

    pub fn from_slice(colors: &[Rgb]) -> Result<Self> {
        let arr: [Rgb; NUM_CLASSES] = colors.try_into().map_err(|_| {
            Error::Validation(format!("palette needs exactly {NUM_CLASSES} colors, got {}", colors.len()))
        })?;
        Ok(Palette(arr))
    }

    pub fn colors(&self) -> &[Rgb; NUM_CLASSES] {
        &self.0
    }

    /// Index of the nearest entry by squared RGB distance; ties go to the
    /// lowest index.
    pub fn nearest(&self, px: Rgb) -> u8 {
        let mut best = (u32::MAX, 0u8);
        for (i, c) in self.0.iter().enumerate() {
            let d = sq_dist(*c, px);
            if d < best.0 {
                best = (d, i as u8);
            }
        }
        best.1
    }
}

pub(crate) fn sq_dist(a: Rgb, b: Rgb) -> u32 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| {
            let d = x as i32 - y as i32;
            (d * d) as u32
        })
        .sum()
}

/// Rec. 601 luma, used to give palettes a stable order.
pub fn luminance(c: Rgb) -> f64 {
    0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64
}

pub const TILE_SIZE: usize = 8;

/// Sixteen 8x8 RGB tile bitmaps indexed by tile id. Serializes as sixteen
/// lists of 64 row-major RGB triples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<Rgb>>", into = "Vec<Vec<Rgb>>")]
pub struct TileAtlas {
    tiles: Vec<[Rgb; TILE_SIZE * TILE_SIZE]>,
}

impl TryFrom<Vec<Vec<Rgb>>> for TileAtlas {
    type Error = Error;

    fn try_from(tiles: Vec<Vec<Rgb>>) -> Result<Self> {
        if tiles.len() != NUM_CLASSES {
            return Err(Error::Validation(format!("tile atlas needs {NUM_CLASSES} tiles, got {}", tiles.len())));
        }
        let tiles = tiles
            .into_iter()
            .map(|t| {
                <[Rgb; TILE_SIZE * TILE_SIZE]>::try_from(t.as_slice())
                    .map_err(|_| Error::Validation(format!("tile must have {} pixels, got {}", TILE_SIZE * TILE_SIZE, t.len())))
            })
            .collect::<Result<_>>()?;
        Ok(TileAtlas { tiles })
    }
}

impl From<TileAtlas> for Vec<Vec<Rgb>> {
    fn from(a: TileAtlas) -> Self {
        a.tiles.iter().map(|t| t.to_vec()).collect()
    }
}

impl TileAtlas {
    /// Splits a 32x32 sheet into a 4x4 grid of tiles, ids row-major.
    pub fn from_sheet(sheet: &RgbImage) -> Result<Self> {
        let side = 4 * TILE_SIZE;
        if sheet.width() != side || sheet.height() != side {
            return Err(Error::Validation(format!(
                "tile atlas must be {side}x{side}, got {}x{}",
                sheet.width(),
                sheet.height()
            )));
        }
        let mut tiles = Vec::with_capacity(NUM_CLASSES);
        for id in 0..NUM_CLASSES {
            let (ty, tx) = (id / 4 * TILE_SIZE, id % 4 * TILE_SIZE);
            let mut tile = [[0u8; 3]; TILE_SIZE * TILE_SIZE];
            for y in 0..TILE_SIZE {
                for x in 0..TILE_SIZE {
                    tile[y * TILE_SIZE + x] = sheet.get(tx + x, ty + y);
                }
            }
            tiles.push(tile);
        }
        Ok(TileAtlas { tiles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_sheet(&RgbImage::load_png(path)?)
    }

    /// Flat single-color tiles, one per palette entry.
    pub fn solid(palette: &Palette) -> Self {
        TileAtlas {
            tiles: palette.0.iter().map(|&c| [c; TILE_SIZE * TILE_SIZE]).collect(),
        }
    }

    pub fn tile(&self, id: u8) -> &[Rgb; TILE_SIZE * TILE_SIZE] {
        &self.tiles[id as usize]
    }

    /// The 32x32 sheet layout accepted by [`TileAtlas::from_sheet`].
    pub fn to_sheet(&self) -> RgbImage {
        let side = 4 * TILE_SIZE;
        let mut sheet = RgbImage::filled(side, side, [0, 0, 0]);
        for (id, tile) in self.tiles.iter().enumerate() {
            let (ty, tx) = (id / 4 * TILE_SIZE, id % 4 * TILE_SIZE);
            for y in 0..TILE_SIZE {
                for x in 0..TILE_SIZE {
                    sheet.set(tx + x, ty + y, tile[y * TILE_SIZE + x]);
                }
            }
        }
        sheet
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_breaks_ties_low() {
        let mut colors = [[200u8, 200, 200]; 16];
        colors[3] = [10, 0, 0];
        colors[7] = [30, 0, 0];
        let p = Palette(colors);
        assert_eq!(p.nearest([20, 0, 0]), 3);
        assert_eq!(p.nearest([29, 0, 0]), 7);
    }

    #[test]
    fn atlas_sheet_round_trip() {
        let atlas = TileAtlas::solid(&Palette::PICO8);
        let again = TileAtlas::from_sheet(&atlas.to_sheet()).unwrap();
        assert_eq!(atlas, again);
        assert_eq!(again.tile(8)[0], [0xff, 0x00, 0x4d]);
    }

    #[test]
    fn palette_needs_sixteen_colors() {
        assert!(Palette::from_slice(&[[0, 0, 0]; 15]).is_err());
        assert!(Palette::from_slice(&[[0, 0, 0]; 16]).is_ok());
    }
}
