//! Dataset files: build, save, reload, render and a random baseline.

use std::path::PathBuf;

use fivedollar::data::{contact_sheet, random_baseline, render_rgb, Dataset, Domain, RenderStyle};
use fivedollar::fixtures::synthetic_dataset;

fn out_dir(name: &str) -> PathBuf {
    let dir = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("fivedollar-examples").join(name));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn main() -> fivedollar::Result<()> {
    let dir = out_dir("datasets");
    for domain in [Domain::Maps, Domain::Sprites, Domain::Emojis] {
        let ds = synthetic_dataset(domain, 12, 1)?;
        let path = dir.join(format!("{domain}.json"));
        ds.save(&path)?;
        let back = Dataset::load(&path)?;
        assert_eq!(back, ds);

        let first = &back.items[0];
        println!("{domain}: {} items of {:?}, first caption {:?}", back.len(), back.dims().unwrap(), first.caption);
        for row in first.image.to_hex_rows() {
            println!("  {row}");
        }

        let style = RenderStyle::palette(fivedollar::data::Palette::PICO8).with_scale(4);
        let tiles = back.items.iter().map(|i| render_rgb(&i.image, &style)).collect::<fivedollar::Result<Vec<_>>>()?;
        contact_sheet(&tiles)?.save_png(&dir.join(format!("{domain}.png")))?;
    }

    // Uniform noise under real captions: the floor a trained model must beat.
    let maps = Dataset::load(&dir.join("maps.json"))?;
    let noise = random_baseline(&maps, 5, 0)?;
    noise.save(&dir.join("maps-random.json"))?;
    println!("random baseline: {} items, captions reused from the reference", noise.len());
    println!("wrote {}", dir.display());
    Ok(())
}
