//! Tissue masking: Otsu's threshold on the saturation channel followed by
//! morphological cleanup.
//!
//! ```sh
//! cargo run -p histograph --example mask_tissue
//! ```

use histograph::raster::RgbImage;
use histograph::tissue::{segment_tissue, MaskParams};

fn main() -> histograph::Result<()> {
    // A pink tissue-like disk on a white background, plus a small speck that
    // the component filter removes.
    let mut img = RgbImage::filled(96, 96, [252, 252, 252]);
    for y in 0..96u32 {
        for x in 0..96u32 {
            let (dx, dy) = (x as f64 - 48.0, y as f64 - 48.0);
            if dx * dx + dy * dy <= 30.0 * 30.0 {
                img.set_pixel(x, y, [214, 130, 168]);
            }
        }
    }
    for (x, y) in [(90, 90), (91, 90), (90, 91)] {
        img.set_pixel(x, y, [214, 130, 168]);
    }

    let params = MaskParams::default();
    let mask = segment_tissue(&img, &params)?;
    println!(
        "foreground: {} of {} pixels (expected ~{:.0} for the disk)",
        mask.area(),
        96 * 96,
        std::f64::consts::PI * 30.0 * 30.0
    );
    println!("speck at (90, 90) removed: {}", !mask.get(90, 90));

    let out = std::env::temp_dir().join("histograph-example-mask.png");
    mask.save_png(&out)?;
    println!("mask written to {}", out.display());
    Ok(())
}
