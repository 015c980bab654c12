//! End-to-end acceptance suite. Each test prints one PASS/FAIL line
//! (visible with `cargo test --test acceptance -- --nocapture`) and checks
//! one pinned criterion at its stated tolerance.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ahgcn::descriptor::{PyramidProfile, FEATURE_DIM};
use ahgcn::gradcheck::{run_gradcheck, REL_ERR_THRESHOLD};
use ahgcn::hgcn::{predict, PredictorConfig};
use ahgcn::hypergraph::{
    build_content_hyperedges, build_location_hyperedges, concat_hypergraphs, normalize, EdgeKind,
    IncidenceMatrix,
};
use ahgcn::metrics::{krasula_analysis, plcc, rmse, srocc};
use ahgcn::sphere::{
    angular_distance, default_viewport_centers, render_viewport, EquirectImage, SphereCoord,
    ViewportSpec,
};
use ahgcn::training::{
    evaluate, lr_at_epoch, synthetic_dataset, train, TrainConfig,
};

fn criterion(name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("[{status}] {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

// --- test-local oracles ----------------------------------------------------

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                if a[[p, q]].abs() < 1e-18 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

fn random_sphere_point(rng: &mut ChaCha8Rng) -> SphereCoord {
    let lon = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let lat = rng.random_range(-1.0..1.0f64).asin();
    SphereCoord::new(lon, lat).unwrap()
}

fn random_hypergraph(rng: &mut ChaCha8Rng, n: usize) -> IncidenceMatrix {
    let centers: Vec<SphereCoord> = (0..n).map(|_| random_sphere_point(rng)).collect();
    let delta = rng.random_range(0.05..std::f64::consts::PI);
    let loc = build_location_hyperedges(&centers, delta).unwrap();
    let k = rng.random_range(0..=n.saturating_sub(1).min(6));
    let features = Array2::from_shape_fn((n, 16), |_| rng.random_range(-1.0..1.0));
    let con = build_content_hyperedges(&features, k).unwrap();
    concat_hypergraphs(&[loc, con]).unwrap()
}

/// Pearson correlation via raw moments (independent route).
fn plcc_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Average ranks by counting (independent of the sort-based route).
fn ranks_oracle(values: &[f64]) -> Vec<f64> {
    values
        .iter()
        .map(|&v| {
            let less = values.iter().filter(|&&o| o < v).count() as f64;
            let equal = values.iter().filter(|&&o| o == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// ROC area by exhaustive pair enumeration.
fn auc_oracle(pos: &[f64], neg: &[f64]) -> f64 {
    let mut score = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (pos.len() as f64 * neg.len() as f64)
}

// --- criteria ---------------------------------------------------------------

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let report = run_gradcheck(0, false);
    let elapsed = t0.elapsed().as_secs_f64();
    criterion(
        "criterion 1 (gradients)",
        report.passed() && elapsed < 30.0,
        &format!(
            "max relative error {:.3e} (< {REL_ERR_THRESHOLD:.0e}), {elapsed:.1}s (< 30s)",
            report.max_rel_err()
        ),
    );
}

#[test]
fn criterion_2_spectral_invariants() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst_asym: f64 = 0.0;
    let mut worst_eig: f64 = f64::INFINITY;
    let mut worst_fixed: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..=20);
        let inc = random_hypergraph(&mut rng, n);
        let op = normalize(&inc).unwrap();
        let m = op.matrix();
        for i in 0..n {
            for j in 0..n {
                worst_asym = worst_asym.max((m[[i, j]] - m[[j, i]]).abs());
            }
        }
        let min_eig = symmetric_eigenvalues(m)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        worst_eig = worst_eig.min(min_eig);
        let w: Array1<f64> = op.node_degrees().mapv(f64::sqrt);
        let got = m.dot(&w);
        for (a, b) in got.iter().zip(w.iter()) {
            worst_fixed = worst_fixed.max((a - b).abs());
        }
    }
    let elapsed = t0.elapsed().as_secs_f64();
    criterion(
        "criterion 2 (spectral invariants)",
        worst_asym <= 1e-12 && worst_eig >= -1e-9 && worst_fixed <= 1e-9 && elapsed < 10.0,
        &format!(
            "asym {worst_asym:.1e} (<=1e-12), min eig {worst_eig:.1e} (>=-1e-9), \
             fixed-vector dev {worst_fixed:.1e} (<=1e-9), {elapsed:.1}s (< 10s)"
        ),
    );
}

#[test]
fn criterion_3_hand_oracle_equivalence() {
    let pair = IncidenceMatrix::new(
        Array2::from_elem((2, 1), 1.0),
        vec![EdgeKind::Location],
    )
    .unwrap();
    let op = normalize(&pair).unwrap();
    let exact_half = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .all(|(i, j)| op.matrix()[[i, j] ] == 0.5);

    let ident = IncidenceMatrix::new(Array2::eye(5), vec![EdgeKind::Location; 5]).unwrap();
    let op_i = normalize(&ident).unwrap();
    let exact_identity = op_i.matrix() == &Array2::<f64>::eye(5);
    criterion(
        "criterion 3 (hand oracles)",
        exact_half && exact_identity,
        &format!("two-node operator exact-half {exact_half}, identity incidence {exact_identity}"),
    );
}

#[test]
fn criterion_4_structure_contract() {
    let centers = default_viewport_centers(20).unwrap();
    let loc = build_location_hyperedges(&centers, 45.0_f64.to_radians()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features = Array2::from_shape_fn((20, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));

    let with_content = concat_hypergraphs(&[
        loc.clone(),
        build_content_hyperedges(&features, 5).unwrap(),
    ])
    .unwrap();
    let without_content = concat_hypergraphs(&[
        loc,
        build_content_hyperedges(&features, 0).unwrap(),
    ])
    .unwrap();
    let ok = with_content.entries().dim() == (20, 40)
        && without_content.entries().dim() == (20, 20);
    criterion(
        "criterion 4 (structure contract)",
        ok,
        &format!(
            "k=5 incidence {:?} (want (20, 40)), k=0 incidence {:?} (want (20, 20))",
            with_content.entries().dim(),
            without_content.entries().dim()
        ),
    );
}

#[test]
fn criterion_5_overfit_run() {
    let t0 = Instant::now();
    let profile = PyramidProfile::compact(4);
    let centers = default_viewport_centers(20).unwrap()[..8].to_vec();
    let dataset = synthetic_dataset(16, centers, &profile, (1.0, 10.0), 42);
    let config = TrainConfig {
        batch_size: 16,
        epochs: 500,
        lr_predictor: 0.12,
        lr_decay: 0.5,
        dropout: 0.0,
        seed: 42,
        k: 5,
        layer_dims: vec![1024, 32, 8, 1],
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &config).unwrap();
    let final_mse = outcome.log.last().unwrap().train_mse;
    let preds = evaluate(&dataset, &outcome.params, &config).unwrap();
    let mos: Vec<f64> = dataset.samples.iter().map(|s| s.mos).collect();
    let train_srocc = srocc(&preds, &mos).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();

    // Loss is non-increasing across 50-epoch windows (window minima).
    let mins: Vec<f64> = outcome
        .log
        .chunks(50)
        .map(|w| w.iter().map(|e| e.train_mse).fold(f64::INFINITY, f64::min))
        .collect();
    let windows_ok = mins.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-9));

    criterion(
        "criterion 5 (overfit run)",
        final_mse < 1e-2 && train_srocc > 0.99 && elapsed < 300.0 && windows_ok,
        &format!(
            "final mse {final_mse:.5} (< 1e-2), srocc {train_srocc:.4} (> 0.99), \
             {elapsed:.0}s (< 300s), 50-epoch windows non-increasing: {windows_ok}"
        ),
    );
}

#[test]
fn criterion_6_permutation_equivariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(3..=10);
        let d0 = 6;
        let inc = random_hypergraph(&mut rng, n);
        let op = normalize(&inc).unwrap();
        let x = Array2::from_shape_fn((n, d0), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![d0, 4, 1],
            dropout_rate: 0.0,
        };
        let mut layers = config.init_layers(&mut rng);
        for l in &mut layers {
            l.bn_running_mean.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            l.bn_running_var.mapv_inplace(|_| rng.random_range(0.5..2.0));
        }
        let (q, _) = predict(&op, &x, &layers, &config).unwrap();

        // Permute node rows of the incidence structure and the features.
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut pe = Array2::zeros(inc.entries().raw_dim());
        let mut px = Array2::zeros((n, d0));
        for (dst, &src) in perm.iter().enumerate() {
            pe.row_mut(dst).assign(&inc.entries().row(src));
            px.row_mut(dst).assign(&x.row(src));
        }
        let pinc = IncidenceMatrix::new(pe, inc.kinds().to_vec()).unwrap();
        let pop = normalize(&pinc).unwrap();
        let (pq, _) = predict(&pop, &px, &layers, &config).unwrap();
        worst = worst.max((q - pq).abs());
    }
    criterion(
        "criterion 6 (permutation equivariance)",
        worst <= 1e-9,
        &format!("max |Q - Q_permuted| = {worst:.2e} over 200 instances (<= 1e-9)"),
    );
}

#[test]
fn criterion_7_metrics_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let n = 10;
        // Quantized values so rank and pair ties actually occur.
        let preds: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(0.0..8.0f64) * 2.0).round() / 2.0)
            .collect();
        let mos: Vec<f64> = (0..n)
            .map(|_| (rng.random_range(1.0..10.0f64) * 2.0).round() / 2.0)
            .collect();
        if preds.iter().all(|&p| p == preds[0]) || mos.iter().all(|&m| m == mos[0]) {
            continue;
        }
        let threshold = 1.0;

        worst = worst.max((plcc(&preds, &mos).unwrap() - plcc_oracle(&preds, &mos)).abs());
        let sr = srocc(&preds, &mos).unwrap();
        let sr_oracle = plcc_oracle(&ranks_oracle(&preds), &ranks_oracle(&mos));
        worst = worst.max((sr - sr_oracle).abs());
        let rm = rmse(&preds, &mos).unwrap();
        let rm_oracle = (preds
            .iter()
            .zip(&mos)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        worst = worst.max((rm - rm_oracle).abs());

        // Krasula oracle: rebuild the pair sets and enumerate.
        let report = krasula_analysis(&preds, &mos, None, threshold).unwrap();
        let mut ds_pos = Vec::new();
        let mut ds_neg = Vec::new();
        let mut bw_pos = Vec::new();
        let mut c0_num = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let dm = mos[i] - mos[j];
                let dp = preds[i] - preds[j];
                if dm.abs() > threshold {
                    ds_pos.push(dp.abs());
                    let oriented = if dm > 0.0 { dp } else { -dp };
                    bw_pos.push(oriented);
                    if oriented > 0.0 {
                        c0_num += 1.0;
                    }
                } else {
                    ds_neg.push(dp.abs());
                }
            }
        }
        if !ds_pos.is_empty() && !ds_neg.is_empty() {
            worst = worst.max((report.auc_ds.unwrap() - auc_oracle(&ds_pos, &ds_neg)).abs());
        }
        if !bw_pos.is_empty() {
            let bw_neg: Vec<f64> = bw_pos.iter().map(|&v| -v).collect();
            worst = worst.max((report.auc_bw.unwrap() - auc_oracle(&bw_pos, &bw_neg)).abs());
            worst = worst.max((report.c0.unwrap() - c0_num / bw_pos.len() as f64).abs());
        }
    }
    criterion(
        "criterion 7 (metrics oracles)",
        worst <= 1e-12,
        &format!("max |metric - oracle| = {worst:.2e} over 50 instances (<= 1e-12)"),
    );
}

#[test]
fn criterion_8_schedule_and_determinism() {
    let config = TrainConfig::default();
    let expected = [1e-3, 2.5e-4, 6.25e-5, 1.5625e-5];
    let schedule_ok = (0..=120).all(|e| lr_at_epoch(&config, e) == expected[e / 40]);

    let profile = PyramidProfile::compact(2);
    let centers = default_viewport_centers(20).unwrap()[..4].to_vec();
    let dataset = synthetic_dataset(4, centers, &profile, (1.0, 10.0), 8);
    let small = TrainConfig {
        batch_size: 2,
        epochs: 6,
        dropout: 0.5,
        seed: 3,
        k: 2,
        layer_dims: vec![1024, 8, 1],
        ..TrainConfig::default()
    };
    let a = train(&dataset, &small).unwrap();
    let b = train(&dataset, &small).unwrap();
    let bitwise = a.log.len() == b.log.len()
        && a
            .log
            .iter()
            .zip(&b.log)
            .all(|(x, y)| {
                x.train_mse.to_bits() == y.train_mse.to_bits() && x.lr.to_bits() == y.lr.to_bits()
            });
    criterion(
        "criterion 8 (schedule and determinism)",
        schedule_ok && bitwise,
        &format!("lr schedule exact over [0,120]: {schedule_ok}, seeded logs bitwise equal: {bitwise}"),
    );
}

#[test]
fn criterion_9_geometry() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let a = random_sphere_point(&mut rng);
        let b = random_sphere_point(&mut rng);
        let va = a.to_unit_vector();
        let vb = b.to_unit_vector();
        let dot: f64 = (0..3).map(|k| va[k] * vb[k]).sum();
        let oracle = dot.clamp(-1.0, 1.0).acos();
        worst = worst.max((angular_distance(a, b) - oracle).abs());
    }

    // Longitudinal equivariance of the renderer.
    let (w, h) = (64usize, 32usize);
    let data: Vec<f64> = (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect();
    let img = EquirectImage::new(w, h, data).unwrap();
    let shift = 9usize;
    let mut shifted = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            shifted.extend_from_slice(&img.pixel((x + shift) % w, y));
        }
    }
    let shifted = EquirectImage::new(w, h, shifted).unwrap();
    let dlon = std::f64::consts::TAU * shift as f64 / w as f64;
    let center = SphereCoord::from_degrees(-15.0, 25.0).unwrap();
    let moved = SphereCoord::new(center.lon() + dlon, center.lat()).unwrap();
    let base_spec = ViewportSpec::new(center, 90.0, 33).unwrap();
    let moved_spec = ViewportSpec::new(moved, 90.0, 33).unwrap();
    let va = render_viewport(&shifted, &base_spec);
    let vb = render_viewport(&img, &moved_spec);
    let mut render_worst: f64 = 0.0;
    for (x, y) in va.iter().zip(vb.iter()) {
        render_worst = render_worst.max((x - y).abs());
    }
    criterion(
        "criterion 9 (geometry)",
        worst <= 1e-12 && render_worst <= 1e-6,
        &format!(
            "angular distance vs 3D oracle {worst:.2e} (<= 1e-12) over 1e4 pairs, \
             longitudinal equivariance {render_worst:.2e} (<= 1e-6)"
        ),
    );
}
