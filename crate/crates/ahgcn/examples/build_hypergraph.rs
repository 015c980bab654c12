//! Build the adaptive hypergraph for one set of viewports: location
//! hyperedges from angular distance, content hyperedges from feature
//! similarity, then the normalized propagation operator.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ahgcn::hypergraph::{
    build_content_hyperedges, build_location_hyperedges, concat_hypergraphs, normalize,
};
use ahgcn::sphere::default_viewport_centers;

fn main() -> ahgcn::Result<()> {
    let centers = default_viewport_centers(20)?;
    let delta = 45.0_f64.to_radians();
    let location = build_location_hyperedges(&centers, delta)?;
    println!(
        "location hyperedges: {} (threshold 45 deg), member counts {:?}",
        location.n_edges(),
        (0..location.n_edges())
            .map(|j| location.members(j).len())
            .collect::<Vec<_>>()
    );

    // Stand-in viewport features; in the full pipeline these come from the
    // descriptor.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let features = Array2::from_shape_fn((20, 1024), |_| rng.random_range(-1.0..1.0));
    for k in [5usize, 0] {
        let content = build_content_hyperedges(&features, k)?;
        let combined = concat_hypergraphs(&[location.clone(), content])?;
        let operator = normalize(&combined)?;
        println!(
            "k = {k}: incidence {}x{}, operator {}x{}",
            combined.n_nodes(),
            combined.n_edges(),
            operator.n_nodes(),
            operator.n_nodes()
        );
        let m = operator.matrix();
        let mut asym: f64 = 0.0;
        for i in 0..20 {
            for j in 0..20 {
                asym = asym.max((m[[i, j]] - m[[j, i]]).abs());
            }
        }
        println!(
            "  diagonal range [{:.4}, {:.4}], max asymmetry {asym:.1e}",
            (0..20).map(|i| m[[i, i]]).fold(f64::INFINITY, f64::min),
            (0..20).map(|i| m[[i, i]]).fold(f64::NEG_INFINITY, f64::max),
        );
    }
    Ok(())
}
