use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Number of tile/color categories in every categorical image.
pub const NUM_CLASSES: usize = 16;

/// A grid of tile or color indices, each in `0..16`, stored row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CategoricalImage {
    width: usize,
    height: usize,
    cells: Vec<u8>,
}

impl CategoricalImage {
    pub fn new(width: usize, height: usize, cells: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Validation(format!("image must be non-empty, got {width}x{height}")));
        }
        if cells.len() != width * height {
            return Err(Error::Validation(format!(
                "expected {} cells for {width}x{height}, got {}",
                width * height,
                cells.len()
            )));
        }
        if let Some((i, &c)) = cells.iter().enumerate().find(|(_, &c)| c as usize >= NUM_CLASSES) {
            return Err(Error::Validation(format!(
                "cell {i} has index {c}, must be below {NUM_CLASSES}"
            )));
        }
        Ok(CategoricalImage { width, height, cells })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.width + col]
    }

    /// `[H, W, 16]` tensor with a single 1 per pixel.
    pub fn one_hot<T: Scalar>(&self) -> Tensor<T> {
        let mut t = Tensor::zeros(vec![self.height, self.width, NUM_CLASSES]);
        let data = t.data_mut();
        for (p, &c) in self.cells.iter().enumerate() {
            data[p * NUM_CLASSES + c as usize] = T::one();
        }
        t
    }

    /// Per-pixel argmax of a `[H, W, 16]` (or `[1, H, W, 16]`) probability
    /// tensor. Ties go to the lowest channel.
    pub fn decode<T: Scalar>(probs: &Tensor<T>) -> Result<Self> {
        let (h, w) = match probs.shape() {
            &[h, w, c] | &[1, h, w, c] if c == NUM_CLASSES => (h, w),
            s => return Err(Error::dim("decode", s, &[0, 0, NUM_CLASSES])),
        };
        let cells = probs
            .data()
            .chunks(NUM_CLASSES)
            .map(|px| {
                let mut best = 0;
                for (c, &v) in px.iter().enumerate().skip(1) {
                    if v > px[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        Self::new(w, h, cells)
    }

    /// Fraction of cells equal to `other`'s.
    pub fn pixel_accuracy(&self, other: &CategoricalImage) -> f64 {
        let same = self.cells.iter().zip(&other.cells).filter(|(a, b)| a == b).count();
        same as f64 / self.cells.len() as f64
    }

    /// Rows as lowercase hex digit strings, one character per cell.
    pub fn to_hex_rows(&self) -> Vec<String> {
        self.cells
            .chunks(self.width)
            .map(|row| row.iter().map(|&c| char::from_digit(c as u32, 16).unwrap()).collect())
            .collect()
    }

    pub fn from_hex_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map(|r| r.as_ref().chars().count()).unwrap_or(0);
        let mut cells = Vec::with_capacity(width * height);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.chars().count() != width {
                return Err(Error::Validation(format!(
                    "row {r} has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            for ch in row.chars() {
                let v = ch.to_digit(16).ok_or_else(|| {
                    Error::Validation(format!("row {r}: invalid cell {ch:?}, must be a hex digit 0-f"))
                })?;
                cells.push(v as u8);
            }
        }
        Self::new(width, height, cells)
    }
}

impl std::fmt::Display for CategoricalImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in self.to_hex_rows() {
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}
