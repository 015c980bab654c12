//! MSE objective, Adam optimization with the step-decay schedule, and the
//! train/eval loops.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{FeaturePyramid, PyramidProfile, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::hgcn::PredictorConfig;
use crate::hypergraph::build_location_hyperedges;
use crate::model::{self, ModelGrads, ModelParams, OptimizerState};
use crate::sphere::SphereCoord;

/// Training hyperparameters. The learning rate follows
/// `lr_predictor * lr_decay^(epoch / lr_decay_every)`.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_predictor: f64,
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Content-hyperedge neighbor count; 0 disables content hyperedges.
    pub k: usize,
    /// Location-hyperedge angular threshold, radians.
    pub delta: f64,
    pub layer_dims: Vec<usize>,
    /// Multiplier applied to MOS targets before the MSE; 1.0 trains on raw
    /// MOS values.
    pub mos_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            epochs: 40,
            lr_predictor: 1e-3,
            lr_decay: 0.25,
            lr_decay_every: 40,
            dropout: 0.5,
            seed: 0,
            k: 5,
            delta: 45.0_f64.to_radians(),
            layer_dims: vec![FEATURE_DIM, 256, 128, 64, 32, 1],
            mos_scale: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.lr_predictor > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!(
                "lr_decay must lie in (0, 1], got {}",
                self.lr_decay
            )));
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Config("lr_decay_every must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be positive".into()));
        }
        if !(self.mos_scale > 0.0) {
            return Err(Error::Config("mos_scale must be positive".into()));
        }
        self.predictor_config().validate()
    }

    pub fn predictor_config(&self) -> PredictorConfig {
        PredictorConfig {
            layer_dims: self.layer_dims.clone(),
            dropout_rate: self.dropout,
        }
    }
}

/// One training sample: the viewports of a distorted 360-degree image and
/// its ground-truth MOS.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub pyramids: Vec<FeaturePyramid>,
    pub mos: f64,
}

/// A loaded dataset. All samples share the viewport centers.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub centers: Vec<SphereCoord>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::InvalidArgument("dataset holds no samples".into()));
        }
        let n = self.centers.len();
        let profile = self.samples[0].pyramids[0].profile();
        for s in &self.samples {
            if s.pyramids.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "sample {} has {} viewports, expected {n}",
                    s.id,
                    s.pyramids.len()
                )));
            }
            if !s.mos.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "sample {} has non-finite MOS",
                    s.id
                )));
            }
            for p in &s.pyramids {
                if p.profile() != profile {
                    return Err(Error::Shape(format!(
                        "sample {} mixes pyramid shapes",
                        s.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn profile(&self) -> PyramidProfile {
        self.samples[0].pyramids[0].profile()
    }
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "{} predictions against {} targets",
            pred.len(),
            target.len()
        )));
    }
    let b = pred.len() as f64;
    let loss = pred
        .iter()
        .zip(target)
        .map(|(q, g)| (q - g) * (q - g))
        .sum::<f64>()
        / b;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(q, g)| 2.0 * (q - g) / b)
        .collect();
    Ok((loss, grad))
}

/// Learning rate at an epoch under the step-decay schedule.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr_predictor * config.lr_decay.powi((epoch / config.lr_decay_every) as i32)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Adam moments for every trainable tensor, in visitation order.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub moments: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut moments = Vec::new();
        let mut p = params.clone();
        p.visit_trainable_mut(&mut |name, slice| {
            moments.push((name.to_string(), vec![0.0; slice.len()], vec![0.0; slice.len()]));
        });
        AdamState { step: 0, moments }
    }

    pub fn to_optimizer_state(&self) -> OptimizerState {
        OptimizerState {
            step: self.step,
            moments: self.moments.clone(),
        }
    }

    pub fn from_optimizer_state(state: OptimizerState) -> Self {
        AdamState {
            step: state.step,
            moments: state.moments,
        }
    }
}

/// Bias-corrected Adam update of one tensor.
pub fn adam_update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
) {
    let bc1 = 1.0 - ADAM_BETA1.powi(step as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(step as i32);
    for i in 0..params.len() {
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * grads[i];
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

fn grad_slices(grads: &ModelGrads) -> Vec<&[f64]> {
    let mut out = Vec::new();
    for l in &grads.descriptor.levels {
        out.push(l.reduce_w.as_slice().unwrap());
        out.push(l.reduce_b.as_slice().unwrap());
        out.push(l.fc_w.as_slice().unwrap());
        out.push(l.fc_b.as_slice().unwrap());
    }
    for l in &grads.layers {
        out.push(l.w1.as_slice().unwrap());
        out.push(l.w2.as_slice().unwrap());
        out.push(l.bn_gamma.as_slice().unwrap());
        out.push(l.bn_beta.as_slice().unwrap());
    }
    out
}

/// One Adam step over every trainable tensor.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelGrads,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    state.step += 1;
    let step = state.step;
    let gslices = grad_slices(grads);
    let mut idx = 0;
    let mut err = None;
    let moments = &mut state.moments;
    params.visit_trainable_mut(&mut |name, pslice| {
        if err.is_some() {
            return;
        }
        let g = gslices[idx];
        let (mname, m, v) = &mut moments[idx];
        if mname != name || g.len() != pslice.len() || m.len() != pslice.len() {
            err = Some(Error::Shape(format!(
                "optimizer state misaligned at tensor {name}"
            )));
            return;
        }
        adam_update_slice(pslice, g, m, v, step, lr);
        idx += 1;
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Per-epoch log record, mirrored to `loss.csv` by the CLI.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    pub log: Vec<EpochLog>,
}

/// Train the full pipeline. Location hyperedges are built once from the
/// dataset centers; content hyperedges are rebuilt from the current
/// features on every forward pass. Deterministic for a fixed seed.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    dataset.validate()?;
    let n_viewports = dataset.centers.len();
    if config.k + 1 > n_viewports {
        return Err(Error::Config(format!(
            "k = {} needs at least k+1 viewports, dataset has {n_viewports}",
            config.k
        )));
    }
    let location = build_location_hyperedges(&dataset.centers, config.delta)?;
    let predictor = config.predictor_config();
    let mut params = ModelParams::init(config.seed, &dataset.profile(), &predictor)?;
    let mut adam = AdamState::new(&params);
    // Separate stream from parameter init so dynamics and init decouple.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let n = dataset.samples.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(config, epoch);
        order.shuffle(&mut rng);
        let mut weighted_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let samples: Vec<&[FeaturePyramid]> = batch
                .iter()
                .map(|&i| dataset.samples[i].pyramids.as_slice())
                .collect();
            let targets: Vec<f64> = batch
                .iter()
                .map(|&i| dataset.samples[i].mos * config.mos_scale)
                .collect();
            let (scores, tape) = model::forward_batch_train(
                &samples,
                &location,
                config.k,
                &mut params,
                &predictor,
                &mut rng,
            )?;
            let (loss, grad) = mse_loss(&scores, &targets)?;
            let grads = model::backward_batch(&samples, &params, &tape, &grad)?;
            adam_step(&mut params, &grads, &mut adam, lr)?;
            weighted_loss += loss * batch.len() as f64;
        }
        log.push(EpochLog {
            epoch,
            lr,
            train_mse: weighted_loss / n as f64,
        });
    }
    Ok(TrainOutcome {
        params,
        optimizer: adam,
        log,
    })
}

/// Eval-mode predictions for every sample, in dataset order.
pub fn evaluate(dataset: &Dataset, params: &ModelParams, config: &TrainConfig) -> Result<Vec<f64>> {
    dataset.validate()?;
    if params.layer_dims() != config.layer_dims {
        return Err(Error::Config(format!(
            "checkpoint layer dims {:?} do not match configured dims {:?}",
            params.layer_dims(),
            config.layer_dims
        )));
    }
    let location = build_location_hyperedges(&dataset.centers, config.delta)?;
    let predictor = config.predictor_config();
    let mut out = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let (q, _) = model::predict_sample(&s.pyramids, &location, config.k, params, &predictor)?;
        out.push(q);
    }
    Ok(out)
}

/// A fully synthetic dataset: seeded pyramids and uniform MOS values.
pub fn synthetic_dataset(
    n_samples: usize,
    centers: Vec<SphereCoord>,
    profile: &PyramidProfile,
    mos_range: (f64, f64),
    seed: u64,
) -> Dataset {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_viewports = centers.len();
    let samples = (0..n_samples)
        .map(|i| {
            let pyramids = (0..n_viewports)
                .map(|v| {
                    FeaturePyramid::synthesize(
                        seed ^ (i as u64).wrapping_mul(1_000_003) ^ (v as u64).wrapping_mul(7919),
                        profile,
                    )
                })
                .collect();
            Sample {
                id: format!("synthetic_{i:03}"),
                pyramids,
                mos: rng.random_range(mos_range.0..=mos_range.1),
            }
        })
        .collect();
    Dataset { centers, samples }
}
