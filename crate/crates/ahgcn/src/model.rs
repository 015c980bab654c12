//! The assembled quality model: compaction weights plus the predictor
//! stack, the end-to-end forward/backward over a batch of samples, and
//! checkpoint persistence.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{self, DescriptorGrads, DescriptorParams, FeaturePyramid, PyramidProfile};
use crate::error::{Error, Result};
use crate::hgcn::{self, HgcnLayerGrads, HgcnLayerParams, PredictorConfig};
use crate::hypergraph::{build_content_hyperedges, concat_hypergraphs, normalize, IncidenceMatrix};

/// Every trainable tensor of the pipeline plus batch-norm running state.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub descriptor: DescriptorParams,
    pub layers: Vec<HgcnLayerParams>,
}

/// Gradients mirroring the trainable tensors of [`ModelParams`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub descriptor: DescriptorGrads,
    pub layers: Vec<HgcnLayerGrads>,
}

impl ModelParams {
    pub fn init(seed: u64, profile: &PyramidProfile, predictor: &PredictorConfig) -> Result<Self> {
        predictor.validate()?;
        if predictor.layer_dims[0] != descriptor::FEATURE_DIM {
            return Err(Error::Config(format!(
                "predictor input width {} does not match the descriptor output {}",
                predictor.layer_dims[0],
                descriptor::FEATURE_DIM
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(ModelParams {
            descriptor: DescriptorParams::init(profile, &mut rng),
            layers: predictor.init_layers(&mut rng),
        })
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().map(|l| l.d_in()).collect();
        if let Some(last) = self.layers.last() {
            dims.push(last.d_out());
        }
        dims
    }

    pub fn channel_profile(&self) -> Vec<usize> {
        self.descriptor.channel_profile()
    }

    /// Visit each trainable tensor as a named flat slice, in a stable order.
    pub fn visit_trainable_mut(&mut self, f: &mut impl FnMut(&str, &mut [f64])) {
        for (j, l) in self.descriptor.levels.iter_mut().enumerate() {
            f(
                &format!("compaction.{j}.reduce_w"),
                l.reduce_w.as_slice_mut().unwrap(),
            );
            f(
                &format!("compaction.{j}.reduce_b"),
                l.reduce_b.as_slice_mut().unwrap(),
            );
            f(&format!("compaction.{j}.fc_w"), l.fc_w.as_slice_mut().unwrap());
            f(&format!("compaction.{j}.fc_b"), l.fc_b.as_slice_mut().unwrap());
        }
        for (t, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layer.{t}.w1"), l.w1.as_slice_mut().unwrap());
            f(&format!("layer.{t}.w2"), l.w2.as_slice_mut().unwrap());
            f(
                &format!("layer.{t}.bn_gamma"),
                l.bn_gamma.as_slice_mut().unwrap(),
            );
            f(
                &format!("layer.{t}.bn_beta"),
                l.bn_beta.as_slice_mut().unwrap(),
            );
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for j in 0..self.descriptor.levels.len() {
            for t in ["reduce_w", "reduce_b", "fc_w", "fc_b"] {
                names.push(format!("compaction.{j}.{t}"));
            }
        }
        for t in 0..self.layers.len() {
            for n in ["w1", "w2", "bn_gamma", "bn_beta"] {
                names.push(format!("layer.{t}.{n}"));
            }
        }
        names
    }
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        ModelGrads {
            descriptor: DescriptorParams::zeros(&PyramidProfile {
                levels: params
                    .descriptor
                    .levels
                    .iter()
                    .map(|l| crate::descriptor::LevelShape {
                        channels: l.reduce_w.nrows(),
                        height: crate::descriptor::POOL_GRID,
                        width: crate::descriptor::POOL_GRID,
                    })
                    .collect(),
            }),
            layers: params
                .layers
                .iter()
                .map(|l| HgcnLayerGrads {
                    w1: Array2::zeros((l.d_in(), l.d_out())),
                    w2: Array2::zeros((l.d_in(), l.d_out())),
                    bn_gamma: Array1::zeros(l.d_out()),
                    bn_beta: Array1::zeros(l.d_out()),
                })
                .collect(),
        }
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &[f64])) {
        for (j, l) in self.descriptor.levels.iter().enumerate() {
            f(
                &format!("compaction.{j}.reduce_w"),
                l.reduce_w.as_slice().unwrap(),
            );
            f(
                &format!("compaction.{j}.reduce_b"),
                l.reduce_b.as_slice().unwrap(),
            );
            f(&format!("compaction.{j}.fc_w"), l.fc_w.as_slice().unwrap());
            f(&format!("compaction.{j}.fc_b"), l.fc_b.as_slice().unwrap());
        }
        for (t, l) in self.layers.iter().enumerate() {
            f(&format!("layer.{t}.w1"), l.w1.as_slice().unwrap());
            f(&format!("layer.{t}.w2"), l.w2.as_slice().unwrap());
            f(&format!("layer.{t}.bn_gamma"), l.bn_gamma.as_slice().unwrap());
            f(&format!("layer.{t}.bn_beta"), l.bn_beta.as_slice().unwrap());
        }
    }
}

/// Hypergraph construction shared by training and inference: location
/// hyperedges are precomputed by the caller, content hyperedges are rebuilt
/// from the current features.
pub fn build_operator(
    location: &IncidenceMatrix,
    features: &Array2<f64>,
    k: usize,
) -> Result<crate::hypergraph::NormalizedOperator> {
    let content = build_content_hyperedges(features, k)?;
    let e = concat_hypergraphs(&[location.clone(), content])?;
    normalize(&e)
}

/// Recorded state of one train-mode batch forward.
pub struct BatchTape {
    descriptor_tapes: Vec<descriptor::DescriptorTape>,
    predictor_tape: hgcn::ForwardTape,
    operators: Vec<crate::hypergraph::NormalizedOperator>,
}

/// Train-mode pipeline over a batch: descriptor, per-sample hypergraph,
/// predictor with joint batch normalization. Returns per-sample scores.
pub fn forward_batch_train(
    samples: &[&[FeaturePyramid]],
    location: &IncidenceMatrix,
    k: usize,
    params: &mut ModelParams,
    predictor: &PredictorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, BatchTape)> {
    let mut features = Vec::with_capacity(samples.len());
    let mut tapes = Vec::with_capacity(samples.len());
    let mut operators = Vec::with_capacity(samples.len());
    for pyramids in samples {
        let (x, tape) = descriptor::forward(pyramids, &params.descriptor, true)?;
        operators.push(build_operator(location, &x, k)?);
        features.push(x);
        tapes.push(tape.unwrap());
    }
    let graph_refs: Vec<&crate::hypergraph::NormalizedOperator> = operators.iter().collect();
    let (scores, predictor_tape) =
        hgcn::forward_train(&graph_refs, &features, &mut params.layers, predictor, rng)?;
    Ok((
        scores,
        BatchTape {
            descriptor_tapes: tapes,
            predictor_tape,
            operators,
        },
    ))
}

/// Backward for [`forward_batch_train`]. Gradients stop at the discrete
/// kNN selection inside the content hyperedges; they flow through the
/// descriptor via the predictor's input-feature gradients.
pub fn backward_batch(
    samples: &[&[FeaturePyramid]],
    params: &ModelParams,
    tape: &BatchTape,
    grad_scores: &[f64],
) -> Result<ModelGrads> {
    let graph_refs: Vec<&crate::hypergraph::NormalizedOperator> = tape.operators.iter().collect();
    let (layer_grads, feature_grads) = hgcn::backward(
        &graph_refs,
        &params.layers,
        &tape.predictor_tape,
        grad_scores,
    )?;
    let mut grads = ModelGrads::zeros_like(params);
    grads.layers = layer_grads;
    descriptor::backward_batch(
        samples,
        &params.descriptor,
        &tape.descriptor_tapes,
        &feature_grads,
        &mut grads.descriptor,
    )?;
    Ok(grads)
}

/// Eval-mode pipeline for one sample.
pub fn predict_sample(
    pyramids: &[FeaturePyramid],
    location: &IncidenceMatrix,
    k: usize,
    params: &ModelParams,
    predictor: &PredictorConfig,
) -> Result<(f64, Array1<f64>)> {
    let (x, _) = descriptor::forward(pyramids, &params.descriptor, false)?;
    let op = build_operator(location, &x, k)?;
    hgcn::predict(&op, &x, &params.layers, predictor)
}

// ---------------------------------------------------------------------------
// Checkpoint format (AHGC)
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"AHGC";
const CHECKPOINT_VERSION: u16 = 1;

/// Optimizer state stored alongside parameters when a checkpoint is written
/// mid-training. Moments are kept per trainable tensor, in visitation order.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    /// (tensor name, first moment, second moment)
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

fn write_tensor(w: &mut impl Write, name: &str, dims: &[usize], data: &[f64]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dims.len() as u8])?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_buf<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("checkpoint truncated: {e}")))?;
    Ok(buf)
}

fn read_tensor(r: &mut impl Read) -> Result<Option<(String, Vec<usize>, Vec<f64>)>> {
    let mut len_buf = [0u8; 2];
    match r.read_exact(&mut len_buf) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(Error::Format(format!("checkpoint tensor header: {e}"))),
    }
    let name_len = u16::from_le_bytes(len_buf) as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|e| Error::Format(format!("tensor name: {e}")))?;
    let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name not UTF-8".into()))?;
    let rank = read_exact_buf::<1>(r)?[0] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u32::from_le_bytes(read_exact_buf::<4>(r)?) as usize);
    }
    let count: usize = dims.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(f32::from_le_bytes(read_exact_buf::<4>(r)?) as f64);
    }
    Ok(Some((name, dims, data)))
}

/// Write a checkpoint; pass the optimizer state to make the file resumable.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParams,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.push(params.layers.len() as u8);
    for (j, l) in params.descriptor.levels.iter().enumerate() {
        let p = format!("compaction.{j}");
        let (c, r) = (l.reduce_w.nrows(), l.reduce_w.ncols());
        write_tensor(&mut bytes, &format!("{p}.reduce_w"), &[c, r], l.reduce_w.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.reduce_b"), &[r], l.reduce_b.as_slice().unwrap()).unwrap();
        let (fi, fo) = (l.fc_w.nrows(), l.fc_w.ncols());
        write_tensor(&mut bytes, &format!("{p}.fc_w"), &[fi, fo], l.fc_w.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.fc_b"), &[fo], l.fc_b.as_slice().unwrap()).unwrap();
    }
    for (t, l) in params.layers.iter().enumerate() {
        let p = format!("layer.{t}");
        let (din, dout) = (l.d_in(), l.d_out());
        write_tensor(&mut bytes, &format!("{p}.w1"), &[din, dout], l.w1.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.w2"), &[din, dout], l.w2.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.bn_gamma"), &[dout], l.bn_gamma.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.bn_beta"), &[dout], l.bn_beta.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.bn_running_mean"), &[dout], l.bn_running_mean.as_slice().unwrap()).unwrap();
        write_tensor(&mut bytes, &format!("{p}.bn_running_var"), &[dout], l.bn_running_var.as_slice().unwrap()).unwrap();
    }
    if let Some(opt) = optimizer {
        write_tensor(&mut bytes, "opt.step", &[1], &[opt.step as f64]).unwrap();
        for (name, m, v) in &opt.moments {
            write_tensor(&mut bytes, &format!("opt.{name}.m"), &[m.len()], m).unwrap();
            write_tensor(&mut bytes, &format!("opt.{name}.v"), &[v.len()], v).unwrap();
        }
    }
    crate::util::write_atomic(path, &bytes)
}

fn take(
    tensors: &mut BTreeMap<String, (Vec<usize>, Vec<f64>)>,
    name: &str,
) -> Result<(Vec<usize>, Vec<f64>)> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Format(format!("checkpoint is missing tensor {name}")))
}

/// Read a checkpoint back into parameters and optional optimizer state.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<OptimizerState>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    let magic = read_exact_buf::<4>(&mut r)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad magic, expected AHGC".into()));
    }
    let version = u16::from_le_bytes(read_exact_buf::<2>(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported AHGC version {version}")));
    }
    let n_layers = read_exact_buf::<1>(&mut r)?[0] as usize;
    let mut tensors = BTreeMap::new();
    while let Some((name, dims, data)) = read_tensor(&mut r)? {
        tensors.insert(name, (dims, data));
    }

    let mut levels = Vec::new();
    for j in 0.. {
        if !tensors.contains_key(&format!("compaction.{j}.reduce_w")) {
            break;
        }
        let (dims, data) = take(&mut tensors, &format!("compaction.{j}.reduce_w"))?;
        let reduce_w = Array2::from_shape_vec((dims[0], dims[1]), data)
            .map_err(|e| Error::Format(format!("reduce_w shape: {e}")))?;
        let (_, data) = take(&mut tensors, &format!("compaction.{j}.reduce_b"))?;
        let reduce_b = Array1::from_vec(data);
        let (dims, data) = take(&mut tensors, &format!("compaction.{j}.fc_w"))?;
        let fc_w = Array2::from_shape_vec((dims[0], dims[1]), data)
            .map_err(|e| Error::Format(format!("fc_w shape: {e}")))?;
        let (_, data) = take(&mut tensors, &format!("compaction.{j}.fc_b"))?;
        levels.push(crate::descriptor::LevelParams {
            reduce_w,
            reduce_b,
            fc_w,
            fc_b: Array1::from_vec(data),
        });
    }
    if levels.is_empty() {
        return Err(Error::Format("checkpoint holds no compaction tensors".into()));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for t in 0..n_layers {
        let p = format!("layer.{t}");
        let (dims, data) = take(&mut tensors, &format!("{p}.w1"))?;
        let w1 = Array2::from_shape_vec((dims[0], dims[1]), data)
            .map_err(|e| Error::Format(format!("w1 shape: {e}")))?;
        let (dims, data) = take(&mut tensors, &format!("{p}.w2"))?;
        let w2 = Array2::from_shape_vec((dims[0], dims[1]), data)
            .map_err(|e| Error::Format(format!("w2 shape: {e}")))?;
        let (_, gamma) = take(&mut tensors, &format!("{p}.bn_gamma"))?;
        let (_, beta) = take(&mut tensors, &format!("{p}.bn_beta"))?;
        let (_, rmean) = take(&mut tensors, &format!("{p}.bn_running_mean"))?;
        let (_, rvar) = take(&mut tensors, &format!("{p}.bn_running_var"))?;
        layers.push(HgcnLayerParams {
            w1,
            w2,
            bn_gamma: Array1::from_vec(gamma),
            bn_beta: Array1::from_vec(beta),
            bn_running_mean: Array1::from_vec(rmean),
            bn_running_var: Array1::from_vec(rvar),
            bn_momentum: crate::hgcn::BN_MOMENTUM_DEFAULT,
            bn_epsilon: crate::hgcn::BN_EPSILON_DEFAULT,
        });
    }

    let params = ModelParams {
        descriptor: DescriptorParams { levels },
        layers,
    };

    let optimizer = if tensors.contains_key("opt.step") {
        let (_, step) = take(&mut tensors, "opt.step")?;
        let mut moments = Vec::new();
        for name in params.trainable_names() {
            let (_, m) = take(&mut tensors, &format!("opt.{name}.m"))?;
            let (_, v) = take(&mut tensors, &format!("opt.{name}.v"))?;
            moments.push((name, m, v));
        }
        Some(OptimizerState {
            step: step[0] as u64,
            moments,
        })
    } else {
        None
    };
    Ok((params, optimizer))
}
