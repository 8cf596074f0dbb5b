//! Categorical image datasets: file format, palettes and tile atlases,
//! emoji preprocessing, rendering and random baselines.

pub mod dataset;
pub mod emoji;
pub mod image;
pub mod palette;
pub mod render;
pub mod rgb;

pub use dataset::{random_baseline, split_indices, split_train_val, Dataset, Domain, Item, StyleRef};
pub use emoji::{downscale_inter_area, kmeans, kmeans_palette, preprocess_emojis, quantize};
pub use image::{CategoricalImage, NUM_CLASSES};
pub use palette::{Palette, Rgb, TileAtlas};
pub use render::{contact_sheet, render_png, render_rgb, RenderStyle};
pub use rgb::RgbImage;
