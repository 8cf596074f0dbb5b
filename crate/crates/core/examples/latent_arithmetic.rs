//! Prompt arithmetic: parse an expression, resolve its prompts and render.

mod shared;

use fivedollar::data::render_rgb;
use fivedollar::latent::{apply_expr, feature_vector, parse_expr, ArithmeticExpr};

fn main() -> fivedollar::Result<()> {
    let dir = shared::out_dir("latent_arithmetic");
    let (model, resolver) = shared::trained_model();
    let z = model.zero_noise();

    let expr = parse_expr("\"grass with river\" - \"grass\" + \"lava\"")?;
    println!("prompts: {:?}", expr.prompts());
    let img = apply_expr(&expr.resolve(&resolver)?, &model, &z)?;
    for row in img.to_hex_rows() {
        println!("  {row}");
    }
    render_rgb(&img, &model.meta().render_style(4))?.save_png(&dir.join("arith.png"))?;

    // A feature vector is a difference of embeddings, added back with a weight.
    let (lava, grass) = (resolver.resolve("lava")?, resolver.resolve("grass")?);
    let fv = feature_vector(&lava, &grass)?;
    println!("|lava - grass| = {:.3}", fv.iter().map(|x| x * x).sum::<f64>().sqrt());
    let base = resolver.resolve("grass with river")?;
    for w in [0.0, 0.5, 1.0] {
        let e = ArithmeticExpr::new(base.clone()).add(lava.clone(), w).add(grass.clone(), -w);
        let out = apply_expr(&e, &model, &z)?;
        println!("weight {w}: {:.2} of pixels match the base prompt", out.pixel_accuracy(&model.generate_image(&base, &z)?));
    }
    Ok(())
}
