//! Compact a multi-level feature pyramid into the 1024-dim hierarchical
//! viewport descriptor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ahgcn::descriptor::{
    forward, DescriptorParams, FeaturePyramid, PyramidProfile, FEATURE_DIM,
};

fn main() -> ahgcn::Result<()> {
    let profile = PyramidProfile::default_resnet18();
    println!("pyramid profile (channels, height, width):");
    for (j, l) in profile.levels.iter().enumerate() {
        println!("  level {j}: ({}, {}, {})", l.channels, l.height, l.width);
    }

    let pyramids: Vec<FeaturePyramid> = (0..3)
        .map(|v| FeaturePyramid::synthesize(100 + v, &profile))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = DescriptorParams::init(&profile, &mut rng);

    let (features, _) = forward(&pyramids, &params, false)?;
    println!(
        "compacted {} viewports into a {}x{FEATURE_DIM} feature matrix",
        pyramids.len(),
        features.nrows()
    );
    for v in 0..features.nrows() {
        let row = features.row(v);
        let norm = row.dot(&row).sqrt();
        println!(
            "  viewport {v}: |x| = {norm:.4}, first level segment mean {:+.5}",
            row.slice(ndarray::s![..256]).mean().unwrap()
        );
    }
    Ok(())
}
