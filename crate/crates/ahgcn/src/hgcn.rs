//! Viewport quality predictor: stacked hypergraph convolution layers with
//! batch normalization, Softplus and dropout, pooled to a scalar score.
//!
//! Each layer computes `softplus(BN(E_hat * H * W1 + H * W2))`. Training
//! support is hand-written reverse mode: the forward pass records a tape and
//! [`backward`] replays it exactly, including the batch-statistics path of
//! batch normalization and the dropout masks.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hypergraph::NormalizedOperator;

pub const BN_MOMENTUM_DEFAULT: f64 = 0.1;
pub const BN_EPSILON_DEFAULT: f64 = 1e-5;

/// Numerically stable `log(1 + exp(x))`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Stable logistic sigmoid; the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Weights and batch-norm state of one hypergraph convolution layer.
#[derive(Debug, Clone)]
pub struct HgcnLayerParams {
    /// (d_in, d_out), applied to the aggregated branch.
    pub w1: Array2<f64>,
    /// (d_in, d_out), applied to the identity branch.
    pub w2: Array2<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
    pub bn_running_mean: Array1<f64>,
    pub bn_running_var: Array1<f64>,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
}

impl HgcnLayerParams {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        HgcnLayerParams {
            w1: Array2::zeros((d_in, d_out)),
            w2: Array2::zeros((d_in, d_out)),
            bn_gamma: Array1::ones(d_out),
            bn_beta: Array1::zeros(d_out),
            bn_running_mean: Array1::zeros(d_out),
            bn_running_var: Array1::ones(d_out),
            bn_momentum: BN_MOMENTUM_DEFAULT,
            bn_epsilon: BN_EPSILON_DEFAULT,
        }
    }

    /// Weights uniform in `[-1/sqrt(d_in), 1/sqrt(d_in)]`, unit gamma.
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = HgcnLayerParams::zeros(d_in, d_out);
        let r = 1.0 / (d_in as f64).sqrt();
        p.w1.mapv_inplace(|_| rng.random_range(-r..=r));
        p.w2.mapv_inplace(|_| rng.random_range(-r..=r));
        p
    }

    pub fn d_in(&self) -> usize {
        self.w1.nrows()
    }

    pub fn d_out(&self) -> usize {
        self.w1.ncols()
    }
}

/// Gradients for the trainable tensors of one layer.
#[derive(Debug, Clone)]
pub struct HgcnLayerGrads {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub bn_gamma: Array1<f64>,
    pub bn_beta: Array1<f64>,
}

impl HgcnLayerGrads {
    fn zeros(d_in: usize, d_out: usize) -> Self {
        HgcnLayerGrads {
            w1: Array2::zeros((d_in, d_out)),
            w2: Array2::zeros((d_in, d_out)),
            bn_gamma: Array1::zeros(d_out),
            bn_beta: Array1::zeros(d_out),
        }
    }
}

/// Layer widths and dropout for the predictor stack.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    /// Feature widths including the input, e.g. `[1024, 256, 128, 64, 32, 1]`.
    pub layer_dims: Vec<usize>,
    pub dropout_rate: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            layer_dims: vec![1024, 256, 128, 64, 32, 1],
            dropout_rate: 0.5,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config(
                "layer_dims needs an input and an output width".into(),
            ));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if *self.layer_dims.last().unwrap() != 1 {
            return Err(Error::Config(format!(
                "final layer width must be 1, got {}",
                self.layer_dims.last().unwrap()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn init_layers(&self, rng: &mut ChaCha8Rng) -> Vec<HgcnLayerParams> {
        self.layer_dims
            .windows(2)
            .map(|w| HgcnLayerParams::init(w[0], w[1], rng))
            .collect()
    }
}

/// Batch statistics recorded by a train-mode batch-norm application.
#[derive(Debug, Clone)]
pub struct BnRecord {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

pub(crate) fn bn_train(
    h: &Array2<f64>,
    params: &mut HgcnLayerParams,
    record: bool,
) -> Result<(Array2<f64>, Option<BnRecord>)> {
    let rows = h.nrows();
    if rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "train-mode batch normalization needs at least 2 rows, got {rows}"
        )));
    }
    if h.ncols() != params.bn_gamma.len() {
        return Err(Error::Shape(format!(
            "batch norm over {} features, parameters sized {}",
            h.ncols(),
            params.bn_gamma.len()
        )));
    }
    let mean = h.mean_axis(Axis(0)).unwrap();
    let var = h.map_axis(Axis(0), |col| {
        let m = col.sum() / rows as f64;
        col.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / rows as f64
    });
    let mom = params.bn_momentum;
    params.bn_running_mean.zip_mut_with(&mean, |r, &b| {
        *r = (1.0 - mom) * *r + mom * b;
    });
    params.bn_running_var.zip_mut_with(&var, |r, &b| {
        *r = (1.0 - mom) * *r + mom * b;
    });
    let inv_std = var.mapv(|v| 1.0 / (v + params.bn_epsilon).sqrt());
    let mut xhat = h.clone();
    for (mut col, (&m, &s)) in xhat
        .columns_mut()
        .into_iter()
        .zip(mean.iter().zip(inv_std.iter()))
    {
        col.mapv_inplace(|v| (v - m) * s);
    }
    let mut out = xhat.clone();
    for (mut col, (&g, &b)) in out
        .columns_mut()
        .into_iter()
        .zip(params.bn_gamma.iter().zip(params.bn_beta.iter()))
    {
        col.mapv_inplace(|v| g * v + b);
    }
    Ok((out, record.then_some(BnRecord { xhat, inv_std })))
}

fn bn_eval(h: &Array2<f64>, params: &HgcnLayerParams) -> Result<Array2<f64>> {
    if h.ncols() != params.bn_gamma.len() {
        return Err(Error::Shape(format!(
            "batch norm over {} features, parameters sized {}",
            h.ncols(),
            params.bn_gamma.len()
        )));
    }
    let mut out = h.clone();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let scale = params.bn_gamma[j] / (params.bn_running_var[j] + params.bn_epsilon).sqrt();
        let shift = params.bn_beta[j] - params.bn_running_mean[j] * scale;
        col.mapv_inplace(|v| v * scale + shift);
    }
    Ok(out)
}

/// Batch normalization over all rows. Train mode normalizes with the batch
/// statistics (biased variance) and advances the running estimates; eval
/// mode uses the running estimates.
pub fn batchnorm_forward(
    h: &Array2<f64>,
    params: &mut HgcnLayerParams,
    mode: Mode,
) -> Result<Array2<f64>> {
    match mode {
        Mode::Train => bn_train(h, params, false).map(|(out, _)| out),
        Mode::Eval => bn_eval(h, params),
    }
}

pub(crate) fn bn_backward(
    dy: &Array2<f64>,
    rec: &BnRecord,
    gamma: &Array1<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let rows = dy.nrows() as f64;
    let dbeta = dy.sum_axis(Axis(0));
    let dgamma = (dy * &rec.xhat).sum_axis(Axis(0));
    let mut dx = Array2::zeros(dy.raw_dim());
    for j in 0..dy.ncols() {
        let dyj = dy.column(j);
        let xj = rec.xhat.column(j);
        let sum_dy = dyj.sum();
        let sum_dy_x = dyj.dot(&xj);
        let scale = gamma[j] * rec.inv_std[j];
        let mut out = dx.column_mut(j);
        for (o, (&d, &x)) in out.iter_mut().zip(dyj.iter().zip(xj.iter())) {
            *o = scale * (d - sum_dy / rows - x * sum_dy_x / rows);
        }
    }
    (dx, dgamma, dbeta)
}

/// Per-layer intermediates captured by a recorded train-mode forward.
#[derive(Debug, Clone)]
struct LayerTape {
    /// Scaled dropout mask, when dropout was applied to this layer's input.
    mask: Option<Array2<f64>>,
    /// Layer input after dropout.
    input: Array2<f64>,
    /// Per-sample aggregation `E_hat * input`.
    aggregated: Array2<f64>,
    bn: BnRecord,
    /// Batch-norm output (the Softplus input).
    preact: Array2<f64>,
}

/// Everything [`backward`] needs from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTape {
    layers: Vec<LayerTape>,
    /// Per-sample row ranges in the stacked batch matrix.
    blocks: Vec<(usize, usize)>,
}

fn stack_features(features: &[Array2<f64>]) -> (Array2<f64>, Vec<(usize, usize)>) {
    let d = features[0].ncols();
    let total: usize = features.iter().map(|f| f.nrows()).sum();
    let mut stacked = Array2::zeros((total, d));
    let mut blocks = Vec::with_capacity(features.len());
    let mut at = 0;
    for f in features {
        let n = f.nrows();
        stacked.slice_mut(ndarray::s![at..at + n, ..]).assign(f);
        blocks.push((at, n));
        at += n;
    }
    (stacked, blocks)
}

fn check_batch(graphs: &[&NormalizedOperator], features: &[Array2<f64>], d0: usize) -> Result<()> {
    if graphs.is_empty() || graphs.len() != features.len() {
        return Err(Error::Shape(format!(
            "batch holds {} graphs and {} feature matrices",
            graphs.len(),
            features.len()
        )));
    }
    for (g, f) in graphs.iter().zip(features) {
        if g.n_nodes() != f.nrows() {
            return Err(Error::Shape(format!(
                "operator on {} nodes paired with {} feature rows",
                g.n_nodes(),
                f.nrows()
            )));
        }
        if f.ncols() != d0 {
            return Err(Error::Shape(format!(
                "features have width {}, predictor expects {d0}",
                f.ncols()
            )));
        }
    }
    Ok(())
}

/// Per-sample aggregation `E_hat * H` on the stacked representation.
fn aggregate(
    graphs: &[&NormalizedOperator],
    h: &Array2<f64>,
    blocks: &[(usize, usize)],
) -> Array2<f64> {
    let mut out = Array2::zeros(h.raw_dim());
    for (g, &(at, n)) in graphs.iter().zip(blocks) {
        let block = h.slice(ndarray::s![at..at + n, ..]);
        out.slice_mut(ndarray::s![at..at + n, ..])
            .assign(&g.matrix().dot(&block));
    }
    out
}

fn pool_blocks(h: &Array2<f64>, blocks: &[(usize, usize)]) -> Vec<f64> {
    blocks
        .iter()
        .map(|&(at, n)| h.slice(ndarray::s![at..at + n, 0]).sum() / n as f64)
        .collect()
}

/// Train-mode forward over a batch of samples. Batch-norm statistics are
/// shared across all rows of the batch; dropout (when configured) applies
/// to every layer input except the final layer's. Returns per-sample
/// scores and the tape for [`backward`].
pub fn forward_train(
    graphs: &[&NormalizedOperator],
    features: &[Array2<f64>],
    layers: &mut [HgcnLayerParams],
    config: &PredictorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, ForwardTape)> {
    config.validate()?;
    check_batch(graphs, features, config.layer_dims[0])?;
    let n_layers = layers.len();
    let (mut h, blocks) = stack_features(features);
    let mut tapes = Vec::with_capacity(n_layers);
    let keep = 1.0 - config.dropout_rate;
    for (t, layer) in layers.iter_mut().enumerate() {
        let mask = (config.dropout_rate > 0.0 && t + 1 < n_layers).then(|| {
            Array2::from_shape_simple_fn(h.raw_dim(), || {
                if rng.random_bool(keep) {
                    1.0 / keep
                } else {
                    0.0
                }
            })
        });
        let input = match &mask {
            Some(m) => &h * m,
            None => h.clone(),
        };
        let aggregated = aggregate(graphs, &input, &blocks);
        let pre_bn = aggregated.dot(&layer.w1) + input.dot(&layer.w2);
        let (preact, bn) = bn_train(&pre_bn, layer, true)?;
        h = preact.mapv(softplus);
        tapes.push(LayerTape {
            mask,
            input,
            aggregated,
            bn: bn.unwrap(),
            preact,
        });
    }
    Ok((pool_blocks(&h, &blocks), ForwardTape {
        layers: tapes,
        blocks,
    }))
}

/// Eval-mode forward over a batch: running statistics, no dropout,
/// deterministic. Returns per-sample scores and per-viewport scores.
pub fn forward_eval(
    graphs: &[&NormalizedOperator],
    features: &[Array2<f64>],
    layers: &[HgcnLayerParams],
    config: &PredictorConfig,
) -> Result<(Vec<f64>, Vec<Array1<f64>>)> {
    config.validate()?;
    check_batch(graphs, features, config.layer_dims[0])?;
    let (mut h, blocks) = stack_features(features);
    for layer in layers {
        let aggregated = aggregate(graphs, &h, &blocks);
        let pre_bn = aggregated.dot(&layer.w1) + h.dot(&layer.w2);
        h = bn_eval(&pre_bn, layer)?.mapv(softplus);
    }
    let per_viewport = blocks
        .iter()
        .map(|&(at, n)| h.slice(ndarray::s![at..at + n, 0]).to_owned())
        .collect();
    Ok((pool_blocks(&h, &blocks), per_viewport))
}

/// Eval-mode prediction for a single sample: the pooled quality score and
/// the per-viewport scores it averages.
pub fn predict(
    graph: &NormalizedOperator,
    features: &Array2<f64>,
    layers: &[HgcnLayerParams],
    config: &PredictorConfig,
) -> Result<(f64, Array1<f64>)> {
    let (q, mut per_viewport) =
        forward_eval(&[graph], std::slice::from_ref(features), layers, config)?;
    Ok((q[0], per_viewport.remove(0)))
}

/// Reverse-mode gradients for a recorded train-mode forward pass: exact
/// backward through mean pooling, Softplus, batch normalization (batch
/// statistics included), dropout masks, and both matrix branches. Returns
/// per-layer gradients and the gradient of each sample's input features.
pub fn backward(
    graphs: &[&NormalizedOperator],
    layers: &[HgcnLayerParams],
    tape: &ForwardTape,
    grad_q: &[f64],
) -> Result<(Vec<HgcnLayerGrads>, Vec<Array2<f64>>)> {
    if grad_q.len() != tape.blocks.len() || graphs.len() != tape.blocks.len() {
        return Err(Error::Shape(format!(
            "tape covers {} samples, got {} gradients and {} graphs",
            tape.blocks.len(),
            grad_q.len(),
            graphs.len()
        )));
    }
    if tape.layers.len() != layers.len() {
        return Err(Error::Shape(format!(
            "tape records {} layers, parameters hold {}",
            tape.layers.len(),
            layers.len()
        )));
    }
    let rows = tape.blocks.iter().map(|&(_, n)| n).sum::<usize>();
    let mut dh = Array2::zeros((rows, 1));
    for (&(at, n), &gq) in tape.blocks.iter().zip(grad_q) {
        dh.slice_mut(ndarray::s![at..at + n, ..]).fill(gq / n as f64);
    }

    let mut grads: Vec<HgcnLayerGrads> = layers
        .iter()
        .map(|l| HgcnLayerGrads::zeros(l.d_in(), l.d_out()))
        .collect();
    for (t, layer) in layers.iter().enumerate().rev() {
        let rec = &tape.layers[t];
        let dz = &dh * &rec.preact.mapv(sigmoid);
        let (dp, dgamma, dbeta) = bn_backward(&dz, &rec.bn, &layer.bn_gamma);
        let g = &mut grads[t];
        g.bn_gamma = dgamma;
        g.bn_beta = dbeta;
        g.w1 = rec.aggregated.t().dot(&dp);
        g.w2 = rec.input.t().dot(&dp);
        let d_agg = dp.dot(&layer.w1.t());
        let mut d_input = dp.dot(&layer.w2.t());
        for (graph, &(at, n)) in graphs.iter().zip(&tape.blocks) {
            let block = d_agg.slice(ndarray::s![at..at + n, ..]);
            let back = graph.matrix().t().dot(&block);
            d_input
                .slice_mut(ndarray::s![at..at + n, ..])
                .zip_mut_with(&back, |a, &b| *a += b);
        }
        dh = match &rec.mask {
            Some(m) => &d_input * m,
            None => d_input,
        };
    }
    let d_features = tape
        .blocks
        .iter()
        .map(|&(at, n)| dh.slice(ndarray::s![at..at + n, ..]).to_owned())
        .collect();
    Ok((grads, d_features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypergraph::{build_location_hyperedges, normalize, EdgeKind, IncidenceMatrix};
    use crate::sphere::SphereCoord;
    use ndarray::array;
    use rand::SeedableRng;

    fn ring_operator(n: usize) -> NormalizedOperator {
        let centers: Vec<SphereCoord> = (0..n)
            .map(|i| SphereCoord::from_degrees(i as f64 * 360.0 / n as f64, 0.0).unwrap())
            .collect();
        let inc = build_location_hyperedges(&centers, (360.0 / n as f64 + 1.0).to_radians())
            .unwrap();
        normalize(&inc).unwrap()
    }

    fn identity_operator(n: usize) -> NormalizedOperator {
        let inc =
            IncidenceMatrix::new(Array2::eye(n), vec![EdgeKind::Location; n]).unwrap();
        normalize(&inc).unwrap()
    }

    #[test]
    fn softplus_reference_values() {
        assert!((softplus(0.0) - 2.0_f64.ln()).abs() < 1e-15);
        assert!((softplus(50.0) - 50.0).abs() < 1e-9);
        assert!(softplus(-50.0).abs() < 1e-9);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn train_batchnorm_standardizes_each_feature() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // Input variance well above bn_epsilon so the output variance sits
        // within 1e-6 of one.
        let h = Array2::from_shape_fn((12, 3), |_| rng.random_range(-8.0..8.0));
        let mut params = HgcnLayerParams::zeros(3, 3);
        let out = batchnorm_forward(&h, &mut params, Mode::Train).unwrap();
        for j in 0..3 {
            let col = out.column(j);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-6, "variance {var}");
        }
        // Running stats moved toward the batch stats by the momentum.
        assert!(params.bn_running_mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn constant_column_normalizes_to_beta() {
        let h = Array2::from_elem((6, 2), 3.25);
        let mut params = HgcnLayerParams::zeros(2, 2);
        params.bn_beta.fill(0.7);
        let out = batchnorm_forward(&h, &mut params, Mode::Train).unwrap();
        for &v in out.iter() {
            assert!((v - 0.7).abs() < 1e-9);
        }
    }

    #[test]
    fn eval_batchnorm_uses_running_stats() {
        let h = Array2::from_elem((1, 1), 3.0);
        let mut params = HgcnLayerParams::zeros(1, 1);
        params.bn_gamma.fill(2.0);
        params.bn_beta.fill(1.0);
        let out = batchnorm_forward(&h, &mut params, Mode::Eval).unwrap();
        let expected = 2.0 * 3.0 / (1.0 + BN_EPSILON_DEFAULT).sqrt() + 1.0;
        assert!((out[[0, 0]] - expected).abs() < 1e-12);
        assert!((out[[0, 0]] - 6.99997).abs() < 1e-4);
    }

    #[test]
    fn train_batchnorm_needs_two_rows() {
        let h = Array2::zeros((1, 2));
        let mut params = HgcnLayerParams::zeros(2, 2);
        assert!(batchnorm_forward(&h, &mut params, Mode::Train).is_err());
    }

    #[test]
    fn zero_weights_give_ln2_everywhere_in_eval() {
        let op = ring_operator(5);
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i + j) as f64 * 0.1);
        let config = PredictorConfig {
            layer_dims: vec![4, 3, 1],
            dropout_rate: 0.0,
        };
        let layers = vec![HgcnLayerParams::zeros(4, 3), HgcnLayerParams::zeros(3, 1)];
        let (q, scores) = predict(&op, &x, &layers, &config).unwrap();
        for &s in scores.iter() {
            assert!((s - 2.0_f64.ln()).abs() < 1e-12);
        }
        assert!((q - 2.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn identity_operator_collapses_branches() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = identity_operator(4);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let mut layer = HgcnLayerParams::init(3, 1, &mut rng);
        layer.w2 = layer.w1.clone();
        let config = PredictorConfig {
            layer_dims: vec![3, 1],
            dropout_rate: 0.0,
        };
        let (q, _) = predict(&op, &x, std::slice::from_ref(&layer), &config).unwrap();
        // Same thing computed as softplus(BN(2 H W1)).
        let pre = x.dot(&layer.w1.mapv(|v| 2.0 * v));
        let bn = bn_eval(&pre, &layer).unwrap().mapv(softplus);
        let want = bn.column(0).sum() / 4.0;
        assert!((q - want).abs() < 1e-12);
    }

    #[test]
    fn mean_pool_examples() {
        let h = array![[1.0], [2.0], [3.0]];
        let q = pool_blocks(&h, &[(0, 3)]);
        assert_eq!(q[0], 2.0);
        let single = array![[0.37]];
        assert_eq!(pool_blocks(&single, &[(0, 1)])[0], 0.37);
    }

    #[test]
    fn eval_is_deterministic_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let op = ring_operator(6);
        let x = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![5, 4, 1],
            dropout_rate: 0.5,
        };
        let layers = config.init_layers(&mut rng);
        let (q1, _) = predict(&op, &x, &layers, &config).unwrap();
        let (q2, _) = predict(&op, &x, &layers, &config).unwrap();
        assert_eq!(q1.to_bits(), q2.to_bits());
    }

    #[test]
    fn train_forward_is_reproducible_with_fixed_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let op = ring_operator(5);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![4, 3, 1],
            dropout_rate: 0.5,
        };
        let layers = config.init_layers(&mut rng);
        let run = |seed: u64| {
            let mut l = layers.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(seed);
            let (q, _) =
                forward_train(&[&op], &[x.clone()], &mut l, &config, &mut drop_rng).unwrap();
            q[0]
        };
        assert_eq!(run(3).to_bits(), run(3).to_bits());
        assert_ne!(run(3).to_bits(), run(4).to_bits());
    }

    #[test]
    fn permuting_nodes_permutes_scores_and_keeps_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 7;
        let op = ring_operator(n);
        let x = Array2::from_shape_fn((n, 6), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![6, 4, 1],
            dropout_rate: 0.0,
        };
        let mut layers = config.init_layers(&mut rng);
        for l in &mut layers {
            l.bn_running_mean.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            l.bn_running_var.mapv_inplace(|_| rng.random_range(0.5..1.5));
        }
        let (q, scores) = predict(&op, &x, &layers, &config).unwrap();

        let perm: Vec<usize> = vec![3, 0, 6, 2, 5, 1, 4];
        let mut pm = Array2::zeros((n, n));
        let mut px = Array2::zeros((n, 6));
        for (dst, &src) in perm.iter().enumerate() {
            px.row_mut(dst).assign(&x.row(src));
            for (dst2, &src2) in perm.iter().enumerate() {
                pm[[dst, dst2]] = op.matrix()[[src, src2]];
            }
        }
        // Rebuild a NormalizedOperator via a permuted incidence structure.
        let centers: Vec<SphereCoord> = (0..n)
            .map(|i| SphereCoord::from_degrees(i as f64 * 360.0 / n as f64, 0.0).unwrap())
            .collect();
        let pcenters: Vec<SphereCoord> = perm.iter().map(|&s| centers[s]).collect();
        let pinc = build_location_hyperedges(&pcenters, (360.0 / n as f64 + 1.0).to_radians())
            .unwrap();
        let pop = normalize(&pinc).unwrap();
        for i in 0..n {
            for j in 0..n {
                assert!((pop.matrix()[[i, j]] - pm[[i, j]]).abs() < 1e-12);
            }
        }
        let (pq, pscores) = predict(&pop, &px, &layers, &config).unwrap();
        assert!((q - pq).abs() < 1e-9);
        for (dst, &src) in perm.iter().enumerate() {
            assert!((pscores[dst] - scores[src]).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicated_node_keeps_pooled_score_consistent() {
        // Nodes 1 and 2 share features and hyperedge memberships; swapping
        // them relabels nothing observable.
        let entries = array![[1.0, 1.0], [1.0, 1.0], [1.0, 1.0]];
        let inc = IncidenceMatrix::new(entries, vec![EdgeKind::Location; 2]).unwrap();
        let op = normalize(&inc).unwrap();
        let x = array![[0.4, -0.2], [0.9, 0.3], [0.9, 0.3]];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = PredictorConfig {
            layer_dims: vec![2, 2, 1],
            dropout_rate: 0.0,
        };
        let layers = config.init_layers(&mut rng);
        let (q, scores) = predict(&op, &x, &layers, &config).unwrap();
        let swapped = array![[0.4, -0.2], [0.9, 0.3], [0.9, 0.3]];
        let (q2, scores2) = predict(&op, &swapped, &layers, &config).unwrap();
        assert_eq!(q.to_bits(), q2.to_bits());
        assert!((scores[1] - scores[2]).abs() < 1e-12);
        assert!((scores2[1] - scores2[2]).abs() < 1e-12);
    }

    #[test]
    fn zero_upstream_gradient_zeroes_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let op = ring_operator(4);
        let x = Array2::from_shape_fn((4, 3), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![3, 2, 1],
            dropout_rate: 0.0,
        };
        let mut layers = config.init_layers(&mut rng);
        let (_, tape) =
            forward_train(&[&op], &[x], &mut layers, &config, &mut rng).unwrap();
        let (grads, dx) = backward(&[&op], &layers, &tape, &[0.0]).unwrap();
        for g in &grads {
            assert!(g.w1.iter().all(|&v| v == 0.0));
            assert!(g.w2.iter().all(|&v| v == 0.0));
            assert!(g.bn_gamma.iter().all(|&v| v == 0.0));
            assert!(g.bn_beta.iter().all(|&v| v == 0.0));
        }
        assert!(dx[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 4;
        let op = ring_operator(n);
        let x = Array2::from_shape_fn((n, 8), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![8, 4, 1],
            dropout_rate: 0.0,
        };
        let layers = config.init_layers(&mut rng);

        let loss = |ls: &[HgcnLayerParams]| -> f64 {
            let mut ls = ls.to_vec();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (q, _) = forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut r).unwrap();
            3.0 * q[0]
        };
        let (grads, _) = {
            let mut ls = layers.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (_, tape) =
                forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut r).unwrap();
            backward(&[&op], &layers, &tape, &[3.0]).unwrap()
        };

        let step = 1e-3;
        let mut max_rel: f64 = 0.0;
        for t in 0..2 {
            let tensors: Vec<(&str, Vec<(usize, usize)>)> = vec![
                ("w1", (0..layers[t].w1.len()).map(|i| (i / layers[t].w1.ncols(), i % layers[t].w1.ncols())).collect()),
                ("w2", (0..layers[t].w2.len()).map(|i| (i / layers[t].w2.ncols(), i % layers[t].w2.ncols())).collect()),
            ];
            for (name, coords) in tensors {
                for (r, c) in coords {
                    let mut up = layers.clone();
                    let mut down = layers.clone();
                    match name {
                        "w1" => {
                            up[t].w1[[r, c]] += step;
                            down[t].w1[[r, c]] -= step;
                        }
                        _ => {
                            up[t].w2[[r, c]] += step;
                            down[t].w2[[r, c]] -= step;
                        }
                    }
                    let fd = (loss(&up) - loss(&down)) / (2.0 * step);
                    let a = match name {
                        "w1" => grads[t].w1[[r, c]],
                        _ => grads[t].w2[[r, c]],
                    };
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    max_rel = max_rel.max(rel);
                }
            }
            for j in 0..layers[t].bn_gamma.len() {
                for which in 0..2 {
                    let mut up = layers.clone();
                    let mut down = layers.clone();
                    if which == 0 {
                        up[t].bn_gamma[j] += step;
                        down[t].bn_gamma[j] -= step;
                    } else {
                        up[t].bn_beta[j] += step;
                        down[t].bn_beta[j] -= step;
                    }
                    let fd = (loss(&up) - loss(&down)) / (2.0 * step);
                    let a = if which == 0 {
                        grads[t].bn_gamma[j]
                    } else {
                        grads[t].bn_beta[j]
                    };
                    let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let n = 3;
        let op = ring_operator(n);
        let x = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
        let config = PredictorConfig {
            layer_dims: vec![5, 3, 1],
            dropout_rate: 0.0,
        };
        let layers = config.init_layers(&mut rng);
        let loss = |x: &Array2<f64>| -> f64 {
            let mut ls = layers.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (q, _) = forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut r).unwrap();
            q[0]
        };
        let (_, dx) = {
            let mut ls = layers.clone();
            let mut r = ChaCha8Rng::seed_from_u64(0);
            let (_, tape) =
                forward_train(&[&op], &[x.clone()], &mut ls, &config, &mut r).unwrap();
            backward(&[&op], &layers, &tape, &[1.0]).unwrap()
        };
        let step = 1e-3;
        for i in 0..n {
            for j in 0..5 {
                let mut up = x.clone();
                let mut down = x.clone();
                up[[i, j]] += step;
                down[[i, j]] -= step;
                let fd = (loss(&up) - loss(&down)) / (2.0 * step);
                let a = dx[0][[i, j]];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
                assert!(rel < 1e-4, "input grad ({i},{j}): {a} vs {fd}");
            }
        }
    }
}
