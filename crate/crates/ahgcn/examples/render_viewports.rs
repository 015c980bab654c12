//! Render the 20 default viewports of an equirectangular panorama.
//!
//! Usage: cargo run --example render_viewports [IMAGE] [OUT_DIR]
//!
//! Without arguments a synthetic panorama is generated, so the example is
//! self-contained.

use std::path::PathBuf;

use ahgcn::sphere::{
    default_viewport_centers, render_viewport, viewport_to_png, EquirectImage, ViewportSpec,
};

fn synthetic_panorama(width: usize) -> EquirectImage {
    let height = width / 2;
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            // A lon/lat checker with a gradient so every viewport differs.
            let checker = ((x / 16 + y / 16) % 2) as f64;
            let r = 0.2 + 0.6 * checker;
            let g = x as f64 / width as f64;
            let b = y as f64 / height as f64;
            data.extend_from_slice(&[r, g, b]);
        }
    }
    EquirectImage::new(width, height, data).unwrap()
}

fn main() -> ahgcn::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out: PathBuf = args
        .get(2)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("target/example-out/viewports"));
    std::fs::create_dir_all(&out).expect("create output directory");

    let image = match args.get(1) {
        Some(path) => EquirectImage::load(std::path::Path::new(path))?,
        None => synthetic_panorama(512),
    };
    println!(
        "panorama {}x{}, rendering 20 viewports (90 deg fov, 256 px)",
        image.width(),
        image.height()
    );

    let centers = default_viewport_centers(20)?;
    for (i, &center) in centers.iter().enumerate() {
        let spec = ViewportSpec::new(center, 90.0, 256)?;
        let viewport = render_viewport(&image, &spec);
        let png = viewport_to_png(&viewport)?;
        let path = out.join(format!("vp_{i:02}.png"));
        ahgcn::util::write_atomic(&path, &png)?;
        println!(
            "  vp_{i:02}  lon {:7.2}  lat {:7.2}  -> {}",
            center.lon_deg(),
            center.lat_deg(),
            path.display()
        );
    }
    Ok(())
}
