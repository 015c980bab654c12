//! Multi-level viewport descriptor: each backbone feature map is compacted
//! by reduce-pool-flatten-transform and the per-level vectors are
//! concatenated into one hierarchical feature.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Feature maps per pyramid.
pub const NUM_LEVELS: usize = 4;
/// Channels after the 1x1 reduction.
pub const REDUCED_CHANNELS: usize = 16;
/// Max-pool output grid is POOL_GRID x POOL_GRID.
pub const POOL_GRID: usize = 8;
/// Flattened size of one reduced-and-pooled map.
pub const FLAT_DIM: usize = REDUCED_CHANNELS * POOL_GRID * POOL_GRID;
/// Output size of each level's affine transform.
pub const LEVEL_DIM: usize = 256;
/// Dimension of the concatenated hierarchical feature.
pub const FEATURE_DIM: usize = NUM_LEVELS * LEVEL_DIM;

/// Per-level map shape: (channels, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Shapes of the four pyramid levels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PyramidProfile {
    pub levels: Vec<LevelShape>,
}

impl PyramidProfile {
    pub fn new(levels: Vec<LevelShape>) -> Result<Self> {
        if levels.len() != NUM_LEVELS {
            return Err(Error::Shape(format!(
                "pyramid profile needs {NUM_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for (j, l) in levels.iter().enumerate() {
            if l.channels == 0 || l.height < POOL_GRID || l.width < POOL_GRID {
                return Err(Error::Shape(format!(
                    "level {j} shape {}x{}x{} invalid (spatial sides must be >= {POOL_GRID})",
                    l.channels, l.height, l.width
                )));
            }
        }
        Ok(PyramidProfile { levels })
    }

    /// ResNet-18 feature shapes for a 256x256 viewport.
    pub fn default_resnet18() -> Self {
        let dims = [(64, 64), (128, 32), (256, 16), (512, 8)];
        PyramidProfile {
            levels: dims
                .iter()
                .map(|&(c, s)| LevelShape {
                    channels: c,
                    height: s,
                    width: s,
                })
                .collect(),
        }
    }

    /// A small profile for desk-scale runs and tests.
    pub fn compact(channels: usize) -> Self {
        PyramidProfile {
            levels: (0..NUM_LEVELS)
                .map(|_| LevelShape {
                    channels,
                    height: POOL_GRID,
                    width: POOL_GRID,
                })
                .collect(),
        }
    }
}

/// The four per-level feature maps of one viewport, each `(C, H, W)`.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    levels: Vec<Array3<f64>>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Array3<f64>>) -> Result<Self> {
        if levels.len() != NUM_LEVELS {
            return Err(Error::Shape(format!(
                "feature pyramid needs {NUM_LEVELS} levels, got {}",
                levels.len()
            )));
        }
        for (j, l) in levels.iter().enumerate() {
            let (_, h, w) = l.dim();
            if h < POOL_GRID || w < POOL_GRID {
                return Err(Error::Shape(format!(
                    "level {j} spatial size {h}x{w} below the {POOL_GRID}x{POOL_GRID} pool grid"
                )));
            }
            if l.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "level {j} contains non-finite values"
                )));
            }
        }
        Ok(FeaturePyramid { levels })
    }

    pub fn levels(&self) -> &[Array3<f64>] {
        &self.levels
    }

    pub fn profile(&self) -> PyramidProfile {
        PyramidProfile {
            levels: self
                .levels
                .iter()
                .map(|l| {
                    let (c, h, w) = l.dim();
                    LevelShape {
                        channels: c,
                        height: h,
                        width: w,
                    }
                })
                .collect(),
        }
    }

    /// Deterministic pseudo-random pyramid with values in `[-1, 1]`; the
    /// same seed always produces the same bits.
    pub fn synthesize(seed: u64, profile: &PyramidProfile) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let levels = profile
            .levels
            .iter()
            .map(|l| {
                Array3::from_shape_simple_fn((l.channels, l.height, l.width), || {
                    rng.random_range(-1.0..=1.0)
                })
            })
            .collect();
        FeaturePyramid { levels }
    }

    /// Serialize in the `AHGF` little-endian layout.
    pub fn write(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(b"AHGF")?;
        w.write_all(&1u16.to_le_bytes())?;
        w.write_all(&[self.levels.len() as u8])?;
        for l in &self.levels {
            let (c, h, wd) = l.dim();
            w.write_all(&(c as u32).to_le_bytes())?;
            w.write_all(&(h as u32).to_le_bytes())?;
            w.write_all(&(wd as u32).to_le_bytes())?;
            for &v in l.iter() {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        self.write(&mut bytes).expect("vec write is infallible");
        crate::util::write_atomic(path, &bytes)
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("pyramid header: {e}")))?;
        if &magic != b"AHGF" {
            return Err(Error::Format("bad magic, expected AHGF".into()));
        }
        let mut buf2 = [0u8; 2];
        r.read_exact(&mut buf2)
            .map_err(|e| Error::Format(format!("pyramid version: {e}")))?;
        let version = u16::from_le_bytes(buf2);
        if version != 1 {
            return Err(Error::Format(format!("unsupported AHGF version {version}")));
        }
        let mut count = [0u8; 1];
        r.read_exact(&mut count)
            .map_err(|e| Error::Format(format!("level count: {e}")))?;
        let mut levels = Vec::with_capacity(count[0] as usize);
        for _ in 0..count[0] {
            let mut dims = [0u32; 3];
            for d in dims.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)
                    .map_err(|e| Error::Format(format!("level dims: {e}")))?;
                *d = u32::from_le_bytes(b);
            }
            let (c, h, w) = (dims[0] as usize, dims[1] as usize, dims[2] as usize);
            let mut data = vec![0.0f64; c * h * w];
            let mut b = [0u8; 4];
            for v in data.iter_mut() {
                r.read_exact(&mut b)
                    .map_err(|e| Error::Format(format!("level data: {e}")))?;
                *v = f32::from_le_bytes(b) as f64;
            }
            levels.push(
                Array3::from_shape_vec((c, h, w), data).expect("shape follows vector length"),
            );
        }
        FeaturePyramid::new(levels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        FeaturePyramid::read(&mut bytes.as_slice())
    }
}

/// Compaction weights for one pyramid level: the 1x1 channel reduction and
/// the post-flatten affine transform.
#[derive(Debug, Clone)]
pub struct LevelParams {
    /// (channels, 16)
    pub reduce_w: Array2<f64>,
    /// (16,)
    pub reduce_b: Array1<f64>,
    /// (1024, 256)
    pub fc_w: Array2<f64>,
    /// (256,)
    pub fc_b: Array1<f64>,
}

impl LevelParams {
    pub fn zeros(channels: usize) -> Self {
        LevelParams {
            reduce_w: Array2::zeros((channels, REDUCED_CHANNELS)),
            reduce_b: Array1::zeros(REDUCED_CHANNELS),
            fc_w: Array2::zeros((FLAT_DIM, LEVEL_DIM)),
            fc_b: Array1::zeros(LEVEL_DIM),
        }
    }

    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut p = LevelParams::zeros(channels);
        let r = 1.0 / (channels as f64).sqrt();
        p.reduce_w.mapv_inplace(|_| rng.random_range(-r..=r));
        let r = 1.0 / (FLAT_DIM as f64).sqrt();
        p.fc_w.mapv_inplace(|_| rng.random_range(-r..=r));
        p
    }
}

/// All compaction weights, one [`LevelParams`] per pyramid level.
#[derive(Debug, Clone)]
pub struct DescriptorParams {
    pub levels: Vec<LevelParams>,
}

impl DescriptorParams {
    pub fn zeros(profile: &PyramidProfile) -> Self {
        DescriptorParams {
            levels: profile
                .levels
                .iter()
                .map(|l| LevelParams::zeros(l.channels))
                .collect(),
        }
    }

    pub fn init(profile: &PyramidProfile, rng: &mut ChaCha8Rng) -> Self {
        DescriptorParams {
            levels: profile
                .levels
                .iter()
                .map(|l| LevelParams::init(l.channels, rng))
                .collect(),
        }
    }

    pub fn channel_profile(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.reduce_w.nrows()).collect()
    }
}

/// Gradients mirroring [`DescriptorParams`].
pub type DescriptorGrads = DescriptorParams;

/// Intermediates recorded by one level's forward pass.
#[derive(Debug, Clone)]
pub struct LevelRecord {
    /// Flat spatial index (row * W + col) of each pooled maximum, per
    /// reduced channel and pool cell, in flatten order.
    argmax: Vec<u32>,
    /// Flattened pooled vector, before the affine transform.
    flat: Array1<f64>,
}

#[derive(Debug, Clone)]
struct LevelTape {
    /// Pooled argmax indices per viewport.
    argmax: Vec<Vec<u32>>,
    /// Flattened pooled vectors, one row per viewport.
    flats: Array2<f64>,
}

/// Recorded intermediates for a whole multi-viewport forward pass.
#[derive(Debug, Clone)]
pub struct DescriptorTape {
    levels: Vec<LevelTape>,
    n_viewports: usize,
}

fn pool_windows(size: usize) -> Result<Vec<(usize, usize)>> {
    let win = size.div_ceil(POOL_GRID);
    if size.div_ceil(win) != POOL_GRID {
        return Err(Error::Shape(format!(
            "spatial side {size} does not divide into an {POOL_GRID}-cell pool grid \
             (window {win} yields {} cells)",
            size.div_ceil(win)
        )));
    }
    Ok((0..POOL_GRID)
        .map(|g| (g * win, ((g + 1) * win).min(size)))
        .collect())
}

fn reduce_map(map: &Array3<f64>, params: &LevelParams) -> Result<Array2<f64>> {
    let (c, h, w) = map.dim();
    if c != params.reduce_w.nrows() {
        return Err(Error::Shape(format!(
            "map has {c} channels but reduction expects {}",
            params.reduce_w.nrows()
        )));
    }
    let flat_map = map.view().into_shape_with_order((c, h * w)).unwrap();
    // (16, C) x (C, HW) + bias per output channel
    let mut reduced = params.reduce_w.t().dot(&flat_map);
    for (mut row, &b) in reduced.rows_mut().into_iter().zip(params.reduce_b.iter()) {
        row.mapv_inplace(|v| v + b);
    }
    Ok(reduced)
}

fn pool_and_flatten(reduced: &Array2<f64>, h: usize, w: usize) -> Result<(Array1<f64>, Vec<u32>)> {
    let rows = pool_windows(h)?;
    let cols = pool_windows(w)?;
    let mut flat = Array1::zeros(FLAT_DIM);
    let mut argmax = vec![0u32; FLAT_DIM];
    for c in 0..REDUCED_CHANNELS {
        let channel = reduced.row(c);
        for (gi, &(r0, r1)) in rows.iter().enumerate() {
            for (gj, &(c0, c1)) in cols.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for r in r0..r1 {
                    for cc in c0..c1 {
                        let v = channel[r * w + cc];
                        // Strict comparison keeps the first occurrence on ties.
                        if v > best {
                            best = v;
                            best_idx = r * w + cc;
                        }
                    }
                }
                let out = c * POOL_GRID * POOL_GRID + gi * POOL_GRID + gj;
                flat[out] = best;
                argmax[out] = best_idx as u32;
            }
        }
    }
    Ok((flat, argmax))
}

/// Compact one feature map into a 256-vector; optionally records the
/// intermediates needed by the backward pass.
pub fn compact_level(
    map: &Array3<f64>,
    params: &LevelParams,
    record: bool,
) -> Result<(Array1<f64>, Option<LevelRecord>)> {
    let (_, h, w) = map.dim();
    let reduced = reduce_map(map, params)?;
    let (flat, argmax) = pool_and_flatten(&reduced, h, w)?;
    // One-row matrix product keeps the transform on the gemm path.
    let flat_row = flat.view().insert_axis(Axis(0));
    let out = flat_row.dot(&params.fc_w).row(0).to_owned() + &params.fc_b;
    let rec = record.then(|| LevelRecord { argmax, flat });
    Ok((out, rec))
}

/// Concatenate four level vectors, in level order, into one feature.
pub fn concat_levels(compacted: &[Array1<f64>]) -> Result<Array1<f64>> {
    if compacted.len() != NUM_LEVELS {
        return Err(Error::Shape(format!(
            "expected {NUM_LEVELS} level vectors, got {}",
            compacted.len()
        )));
    }
    let mut out = Array1::zeros(FEATURE_DIM);
    for (j, v) in compacted.iter().enumerate() {
        if v.len() != LEVEL_DIM {
            return Err(Error::Shape(format!(
                "level {j} vector has length {}, expected {LEVEL_DIM}",
                v.len()
            )));
        }
        out.slice_mut(ndarray::s![j * LEVEL_DIM..(j + 1) * LEVEL_DIM])
            .assign(v);
    }
    Ok(out)
}

/// Run the descriptor over all viewports of one sample. Returns the
/// hierarchical feature matrix `(N, 1024)` and, when requested, the tape
/// for [`backward`]. The affine transform runs batched over viewports.
pub fn forward(
    pyramids: &[FeaturePyramid],
    params: &DescriptorParams,
    record: bool,
) -> Result<(Array2<f64>, Option<DescriptorTape>)> {
    let n = pyramids.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no viewports given".into()));
    }
    if params.levels.len() != NUM_LEVELS {
        return Err(Error::Shape(format!(
            "descriptor holds {} levels, expected {NUM_LEVELS}",
            params.levels.len()
        )));
    }
    let mut features = Array2::zeros((n, FEATURE_DIM));
    let mut tapes = Vec::with_capacity(NUM_LEVELS);
    for (j, lp) in params.levels.iter().enumerate() {
        let mut flats = Array2::zeros((n, FLAT_DIM));
        let mut argmax = Vec::with_capacity(if record { n } else { 0 });
        for (v, pyr) in pyramids.iter().enumerate() {
            let map = &pyr.levels()[j];
            let (_, h, w) = map.dim();
            let reduced = reduce_map(map, lp)?;
            let (flat, arg) = pool_and_flatten(&reduced, h, w)?;
            flats.row_mut(v).assign(&flat);
            if record {
                argmax.push(arg);
            }
        }
        let mut out = flats.dot(&lp.fc_w);
        for mut row in out.rows_mut() {
            row += &lp.fc_b;
        }
        features
            .slice_mut(ndarray::s![.., j * LEVEL_DIM..(j + 1) * LEVEL_DIM])
            .assign(&out);
        if record {
            tapes.push(LevelTape { argmax, flats });
        }
    }
    Ok((
        features,
        record.then_some(DescriptorTape {
            levels: tapes,
            n_viewports: n,
        }),
    ))
}

/// Reverse-mode gradients of the descriptor. Max-pool routes each pooled
/// cell's gradient to its recorded argmax position. Returns parameter
/// gradients and, when requested, gradients with respect to the input maps.
pub fn backward(
    pyramids: &[FeaturePyramid],
    params: &DescriptorParams,
    tape: &DescriptorTape,
    grad_features: &Array2<f64>,
    want_input_grads: bool,
) -> Result<(DescriptorGrads, Option<Vec<Vec<Array3<f64>>>>)> {
    let n = pyramids.len();
    if tape.n_viewports != n || grad_features.nrows() != n {
        return Err(Error::Shape(
            "tape/gradient viewport count does not match the forward pass".into(),
        ));
    }
    if grad_features.ncols() != FEATURE_DIM {
        return Err(Error::Shape(format!(
            "upstream gradient has {} columns, expected {FEATURE_DIM}",
            grad_features.ncols()
        )));
    }
    let mut grads = DescriptorGrads {
        levels: params
            .levels
            .iter()
            .map(|l| LevelParams::zeros(l.reduce_w.nrows()))
            .collect(),
    };
    let mut input_grads: Option<Vec<Vec<Array3<f64>>>> = want_input_grads.then(|| {
        pyramids
            .iter()
            .map(|p| p.levels().iter().map(|l| Array3::zeros(l.dim())).collect())
            .collect()
    });

    for (j, lp) in params.levels.iter().enumerate() {
        let rec = &tape.levels[j];
        let g = &mut grads.levels[j];
        let dy = grad_features.slice(ndarray::s![.., j * LEVEL_DIM..(j + 1) * LEVEL_DIM]);

        // Affine transform backward, batched over viewports.
        general_mat_mul(1.0, &rec.flats.t(), &dy, 1.0, &mut g.fc_w);
        g.fc_b += &dy.sum_axis(Axis(0));
        let dflats = dy.dot(&lp.fc_w.t()); // (N, 1024)

        for (v, pyr) in pyramids.iter().enumerate() {
            let map = &pyr.levels()[j];
            let (c, h, w) = map.dim();

            // Un-pool: scatter into the reduced map at the argmax positions.
            let mut dreduced = Array2::zeros((REDUCED_CHANNELS, h * w));
            let dflat = dflats.row(v);
            for (out, &src) in rec.argmax[v].iter().enumerate() {
                let ch = out / (POOL_GRID * POOL_GRID);
                dreduced[[ch, src as usize]] += dflat[out];
            }

            // 1x1 reduction backward.
            let flat_map = map.view().into_shape_with_order((c, h * w)).unwrap();
            general_mat_mul(1.0, &flat_map, &dreduced.t(), 1.0, &mut g.reduce_w);
            g.reduce_b += &dreduced.sum_axis(Axis(1));
            if let Some(inputs) = input_grads.as_mut() {
                let dmap = lp.reduce_w.dot(&dreduced); // (C, HW)
                inputs[v][j] += &dmap.into_shape_with_order((c, h, w)).unwrap();
            }
        }
    }
    Ok((grads, input_grads))
}

/// Backward over a whole batch of samples, accumulating into `grads`.
/// The affine-transform gradients run as single stacked matrix products
/// across every viewport of every sample.
pub fn backward_batch(
    samples: &[&[FeaturePyramid]],
    params: &DescriptorParams,
    tapes: &[DescriptorTape],
    grads_per_sample: &[Array2<f64>],
    grads: &mut DescriptorGrads,
) -> Result<()> {
    if samples.len() != tapes.len() || samples.len() != grads_per_sample.len() {
        return Err(Error::Shape(
            "sample/tape/gradient counts do not match".into(),
        ));
    }
    for ((pyramids, tape), dg) in samples.iter().zip(tapes).zip(grads_per_sample) {
        if tape.n_viewports != pyramids.len() || dg.nrows() != pyramids.len() {
            return Err(Error::Shape(
                "tape/gradient viewport count does not match the forward pass".into(),
            ));
        }
        if dg.ncols() != FEATURE_DIM {
            return Err(Error::Shape(format!(
                "upstream gradient has {} columns, expected {FEATURE_DIM}",
                dg.ncols()
            )));
        }
    }
    let total_rows: usize = samples.iter().map(|s| s.len()).sum();
    for (j, lp) in params.levels.iter().enumerate() {
        let g = &mut grads.levels[j];
        let mut flats_all = Array2::zeros((total_rows, FLAT_DIM));
        let mut dy_all = Array2::zeros((total_rows, LEVEL_DIM));
        let mut at = 0;
        for (tape, dg) in tapes.iter().zip(grads_per_sample) {
            let n = tape.n_viewports;
            flats_all
                .slice_mut(ndarray::s![at..at + n, ..])
                .assign(&tape.levels[j].flats);
            dy_all
                .slice_mut(ndarray::s![at..at + n, ..])
                .assign(&dg.slice(ndarray::s![.., j * LEVEL_DIM..(j + 1) * LEVEL_DIM]));
            at += n;
        }
        general_mat_mul(1.0, &flats_all.t(), &dy_all, 1.0, &mut g.fc_w);
        g.fc_b += &dy_all.sum_axis(Axis(0));
        let dflats_all = dy_all.dot(&lp.fc_w.t()); // (R, 1024)

        let mut at = 0;
        for (pyramids, tape) in samples.iter().zip(tapes) {
            for (v, pyr) in pyramids.iter().enumerate() {
                let map = &pyr.levels()[j];
                let (c, h, w) = map.dim();
                let mut dreduced = Array2::zeros((REDUCED_CHANNELS, h * w));
                let dflat = dflats_all.row(at + v);
                for (out, &src) in tape.levels[j].argmax[v].iter().enumerate() {
                    let ch = out / (POOL_GRID * POOL_GRID);
                    dreduced[[ch, src as usize]] += dflat[out];
                }
                let flat_map = map.view().into_shape_with_order((c, h * w)).unwrap();
                general_mat_mul(1.0, &flat_map, &dreduced.t(), 1.0, &mut g.reduce_w);
                g.reduce_b += &dreduced.sum_axis(Axis(1));
            }
            at += pyramids.len();
        }
    }
    Ok(())
}
