//! Finite-difference verification of every analytic gradient: descriptor,
//! batch normalization, the HGCN stack (with and without dropout), and the
//! MSE loss. Central differences with step 1e-3 on f64; a tensor passes
//! when its worst relative error stays below 1e-4.

use std::fmt;

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{self, DescriptorParams, FeaturePyramid, PyramidProfile, FEATURE_DIM};
use crate::hgcn::{self, HgcnLayerParams, PredictorConfig};
use crate::hypergraph::build_location_hyperedges;
use crate::sphere::SphereCoord;
use crate::training::mse_loss;

pub const FD_STEP: f64 = 1e-3;
pub const REL_ERR_THRESHOLD: f64 = 1e-4;
/// Coordinates sampled per large tensor.
const COORDS_PER_TENSOR: usize = 12;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: String,
    pub tensors: Vec<TensorCheck>,
}

impl BlockReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_err)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.max_rel_err() < REL_ERR_THRESHOLD)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_rel_err()).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for block in &self.blocks {
            let status = if block.max_rel_err() < REL_ERR_THRESHOLD {
                "PASS"
            } else {
                "FAIL"
            };
            writeln!(
                f,
                "[{status}] {}: max relative error {:.3e}",
                block.name,
                block.max_rel_err()
            )?;
            for t in &block.tensors {
                writeln!(f, "         {:<28} {:.3e}", t.name, t.max_rel_err)?;
            }
        }
        writeln!(
            f,
            "overall max relative error {:.3e} (threshold {REL_ERR_THRESHOLD:.0e})",
            self.max_rel_err()
        )
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central-difference check of sampled coordinates of one flat tensor.
/// `loss` must re-run the forward pass against the mutated parameter value.
fn check_tensor_sampled(
    name: &str,
    len: usize,
    analytic: &dyn Fn(usize) -> f64,
    eval_at: &mut dyn FnMut(usize, f64) -> f64,
    current: &dyn Fn(usize) -> f64,
    rng: &mut ChaCha8Rng,
) -> TensorCheck {
    let coords: Vec<usize> = if len <= COORDS_PER_TENSOR {
        (0..len).collect()
    } else {
        (0..COORDS_PER_TENSOR)
            .map(|_| rng.random_range(0..len))
            .collect()
    };
    let mut worst: f64 = 0.0;
    for i in coords {
        let base = current(i);
        let up = eval_at(i, base + FD_STEP);
        let down = eval_at(i, base - FD_STEP);
        eval_at(i, base); // restore
        let fd = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic(i), fd));
    }
    TensorCheck {
        name: name.to_string(),
        max_rel_err: worst,
    }
}

fn descriptor_block(seed: u64) -> BlockReport {
    let profile = PyramidProfile::compact(2);
    let pyramids: Vec<FeaturePyramid> = (0..2)
        .map(|i| FeaturePyramid::synthesize(seed.wrapping_add(i), &profile))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD15C);
    let params = DescriptorParams::init(&profile, &mut rng);
    let proj = Array2::from_shape_fn((2, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));

    let loss = |pyrs: &[FeaturePyramid], p: &DescriptorParams| -> f64 {
        let (x, _) = descriptor::forward(pyrs, p, false).unwrap();
        (&x * &proj).sum()
    };
    let (_, tape) = descriptor::forward(&pyramids, &params, true).unwrap();
    let (grads, input_grads) =
        descriptor::backward(&pyramids, &params, &tape.unwrap(), &proj, true).unwrap();
    let input_grads = input_grads.unwrap();

    let mut tensors = Vec::new();
    let mut p = params.clone();
    for j in 0..grads.levels.len() {
        let fields: [(&str, fn(&descriptor::LevelParams) -> &[f64]); 4] = [
            ("reduce_w", |l| l.reduce_w.as_slice().unwrap()),
            ("reduce_b", |l| l.reduce_b.as_slice().unwrap()),
            ("fc_w", |l| l.fc_w.as_slice().unwrap()),
            ("fc_b", |l| l.fc_b.as_slice().unwrap()),
        ];
        for (fname, getter) in fields {
            let len = getter(&params.levels[j]).len();
            let set = |p: &mut DescriptorParams, i: usize, v: f64| {
                let l = &mut p.levels[j];
                let slice = match fname {
                    "reduce_w" => l.reduce_w.as_slice_mut().unwrap(),
                    "reduce_b" => l.reduce_b.as_slice_mut().unwrap(),
                    "fc_w" => l.fc_w.as_slice_mut().unwrap(),
                    _ => l.fc_b.as_slice_mut().unwrap(),
                };
                slice[i] = v;
            };
            let check = check_tensor_sampled(
                &format!("compaction.{j}.{fname}"),
                len,
                &|i| getter(&grads.levels[j])[i],
                &mut |i, v| {
                    set(&mut p, i, v);
                    loss(&pyramids, &p)
                },
                &|i| getter(&params.levels[j])[i],
                &mut rng,
            );
            tensors.push(check);
        }
    }

    // Input-map gradients, sampled on the first viewport's first level.
    let mut pyrs = pyramids.clone();
    let len = pyramids[0].levels()[0].len();
    let check = check_tensor_sampled(
        "input.level0",
        len,
        &|i| input_grads[0][0].as_slice().unwrap()[i],
        &mut |i, v| {
            let mut levels: Vec<_> = pyrs[0].levels().to_vec();
            levels[0].as_slice_mut().unwrap()[i] = v;
            pyrs[0] = FeaturePyramid::new(levels).unwrap();
            loss(&pyrs, &params)
        },
        &|i| pyramids[0].levels()[0].as_slice().unwrap()[i],
        &mut rng,
    );
    tensors.push(check);

    BlockReport {
        name: "descriptor".to_string(),
        tensors,
    }
}

fn batchnorm_block(seed: u64) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB4);
    let h = Array2::from_shape_fn((6, 4), |_| rng.random_range(-2.0..2.0));
    let mut params = HgcnLayerParams::zeros(4, 4);
    params.bn_gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
    params.bn_beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let proj = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.0..1.0));

    let loss = |h: &Array2<f64>, p: &HgcnLayerParams| -> f64 {
        let mut p = p.clone();
        let (out, _) = hgcn::bn_train(h, &mut p, false).unwrap();
        (&out * &proj).sum()
    };
    let (_, rec) = hgcn::bn_train(&h, &mut params.clone(), true).unwrap();
    let (dx, dgamma, dbeta) = hgcn::bn_backward(&proj, &rec.unwrap(), &params.bn_gamma);

    let mut tensors = Vec::new();
    let mut p = params.clone();
    tensors.push(check_tensor_sampled(
        "bn_gamma",
        4,
        &|i| dgamma[i],
        &mut |i, v| {
            p.bn_gamma[i] = v;
            loss(&h, &p)
        },
        &|i| params.bn_gamma[i],
        &mut rng,
    ));
    tensors.push(check_tensor_sampled(
        "bn_beta",
        4,
        &|i| dbeta[i],
        &mut |i, v| {
            p.bn_beta[i] = v;
            loss(&h, &p)
        },
        &|i| params.bn_beta[i],
        &mut rng,
    ));
    let mut hm = h.clone();
    tensors.push(check_tensor_sampled(
        "input",
        h.len(),
        &|i| dx.as_slice().unwrap()[i],
        &mut |i, v| {
            hm.as_slice_mut().unwrap()[i] = v;
            loss(&hm, &params)
        },
        &|i| h.as_slice().unwrap()[i],
        &mut rng,
    ));
    BlockReport {
        name: "batchnorm".to_string(),
        tensors,
    }
}

fn hgcn_block(seed: u64, dropout: f64, corrupt: bool) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x46C);
    let n = 4;
    let centers: Vec<SphereCoord> = (0..n)
        .map(|i| SphereCoord::from_degrees(i as f64 * 90.0, 5.0).unwrap())
        .collect();
    let inc = build_location_hyperedges(&centers, 1.7).unwrap();
    let op = crate::hypergraph::normalize(&inc).unwrap();
    let x = Array2::from_shape_fn((n, 8), |_| rng.random_range(-1.0..1.0));
    let config = PredictorConfig {
        layer_dims: vec![8, 4, 1],
        dropout_rate: dropout,
    };
    let layers = config.init_layers(&mut rng);
    let coeff = 2.5;

    // The dropout RNG is re-seeded per evaluation so every finite-difference
    // probe sees identical masks.
    let loss = |ls: &[HgcnLayerParams], x: &Array2<f64>| -> f64 {
        let mut ls = ls.to_vec();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDD);
        let (q, _) =
            hgcn::forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut drop_rng).unwrap();
        coeff * q[0]
    };
    let (mut grads, dx) = {
        let mut ls = layers.clone();
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xDD);
        let (_, tape) =
            hgcn::forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut drop_rng).unwrap();
        hgcn::backward(&[&op], &layers, &tape, &[coeff]).unwrap()
    };
    if corrupt {
        grads[0].w1[[0, 0]] += 0.05;
    }

    let mut tensors = Vec::new();
    let mut p = layers.clone();
    for t in 0..layers.len() {
        let fields: [(&str, fn(&HgcnLayerParams) -> &[f64], fn(&hgcn::HgcnLayerGrads) -> &[f64]); 4] = [
            ("w1", |l| l.w1.as_slice().unwrap(), |g| g.w1.as_slice().unwrap()),
            ("w2", |l| l.w2.as_slice().unwrap(), |g| g.w2.as_slice().unwrap()),
            (
                "bn_gamma",
                |l| l.bn_gamma.as_slice().unwrap(),
                |g| g.bn_gamma.as_slice().unwrap(),
            ),
            (
                "bn_beta",
                |l| l.bn_beta.as_slice().unwrap(),
                |g| g.bn_beta.as_slice().unwrap(),
            ),
        ];
        for (fname, pget, gget) in fields {
            let len = pget(&layers[t]).len();
            let check = check_tensor_sampled(
                &format!("layer.{t}.{fname}"),
                len,
                &|i| gget(&grads[t])[i],
                &mut |i, v| {
                    {
                        let l = &mut p[t];
                        let slice = match fname {
                            "w1" => l.w1.as_slice_mut().unwrap(),
                            "w2" => l.w2.as_slice_mut().unwrap(),
                            "bn_gamma" => l.bn_gamma.as_slice_mut().unwrap(),
                            _ => l.bn_beta.as_slice_mut().unwrap(),
                        };
                        slice[i] = v;
                    }
                    loss(&p, &x)
                },
                &|i| pget(&layers[t])[i],
                &mut rng,
            );
            tensors.push(check);
        }
    }
    let mut xm = x.clone();
    tensors.push(check_tensor_sampled(
        "input",
        x.len(),
        &|i| dx[0].as_slice().unwrap()[i],
        &mut |i, v| {
            xm.as_slice_mut().unwrap()[i] = v;
            loss(&layers, &xm)
        },
        &|i| x.as_slice().unwrap()[i],
        &mut rng,
    ));
    BlockReport {
        name: if dropout > 0.0 {
            "hgcn+dropout".to_string()
        } else {
            "hgcn".to_string()
        },
        tensors,
    }
}

fn mse_block(seed: u64) -> BlockReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x357);
    let preds: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let targets: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let (_, grad) = mse_loss(&preds, &targets).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..preds.len() {
        let mut up = preds.clone();
        let mut down = preds.clone();
        up[i] += FD_STEP;
        down[i] -= FD_STEP;
        let fd = (mse_loss(&up, &targets).unwrap().0 - mse_loss(&down, &targets).unwrap().0)
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(grad[i], fd));
    }
    BlockReport {
        name: "mse".to_string(),
        tensors: vec![TensorCheck {
            name: "predictions".to_string(),
            max_rel_err: worst,
        }],
    }
}

/// Run every gradient-check block. `corrupt` perturbs one analytic gradient
/// to exercise the failure path.
pub fn run_gradcheck(seed: u64, corrupt: bool) -> GradCheckReport {
    GradCheckReport {
        blocks: vec![
            descriptor_block(seed),
            batchnorm_block(seed),
            hgcn_block(seed, 0.0, corrupt),
            hgcn_block(seed, 0.5, false),
            mse_block(seed),
        ],
    }
}
