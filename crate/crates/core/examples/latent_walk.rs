//! Walk the embedding space between two prompts and save the frames.

mod shared;

use fivedollar::data::{contact_sheet, render_rgb};
use fivedollar::latent::walk;

fn main() -> fivedollar::Result<()> {
    let dir = shared::out_dir("latent_walk");
    let (model, resolver) = shared::trained_model();
    let (a, b) = (resolver.resolve("grass with river")?, resolver.resolve("lava with walls")?);
    let style = model.meta().render_style(4);

    let frames = walk(&model, &a, &b, 8, &model.zero_noise())?;
    for pair in frames.windows(2) {
        print!("{:.2} ", 1.0 - pair[0].pixel_accuracy(&pair[1]));
    }
    println!("<- fraction of pixels changing per step");
    let tiles = frames.iter().map(|f| render_rgb(f, &style)).collect::<fivedollar::Result<Vec<_>>>()?;
    contact_sheet(&tiles)?.save_png(&dir.join("walk.png"))?;
    println!("wrote {}", dir.join("walk.png").display());
    Ok(())
}
