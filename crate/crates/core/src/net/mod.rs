//! Factorized TDNN acoustic models: forward inference, exact backpropagation,
//! parameter accounting, and context bookkeeping.
//!
//! All layers run at the 10 ms input frame rate; the output layer is
//! evaluated once every [`SUBSAMPLE`] frames. Context outside the utterance
//! is satisfied by replicating the first/last frame (clamped indexing), which
//! keeps chunked streaming inference identical to batch inference. Arithmetic
//! is 64-bit in memory; checkpoints store 32-bit tensors.

pub mod checkpoint;
pub mod configs;
pub mod semiorth;
pub mod train;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::numerator::SUBSAMPLE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    /// Affine over spliced input, ReLU, learnable scale+offset.
    Tdnn,
    /// Semi-orthogonal bottleneck factor, affine, ReLU, scale+offset, and a
    /// scaled skip connection from the layer input when dimensions match.
    TdnnF,
    /// Tdnn with a single tap at offset 0.
    Relu,
    /// Plain linear projection (no bias, no activation).
    Linear,
    /// Affine at subsampled frames followed by log-softmax.
    Output,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Input taps relative to the current frame, sorted ascending.
    pub offsets: Vec<i32>,
    pub out_dim: usize,
    /// TdnnF only.
    pub bottleneck_dim: usize,
    /// Skip-connection scale (TdnnF); 0 disables.
    pub skip_scale: f64,
}

impl LayerSpec {
    pub fn tdnn(offsets: Vec<i32>, out_dim: usize) -> Self {
        Self { kind: LayerKind::Tdnn, offsets, out_dim, bottleneck_dim: 0, skip_scale: 0.0 }
    }

    pub fn tdnnf(offsets: Vec<i32>, out_dim: usize, bottleneck_dim: usize, skip: bool) -> Self {
        Self {
            kind: LayerKind::TdnnF,
            offsets,
            out_dim,
            bottleneck_dim,
            skip_scale: if skip { 0.66 } else { 0.0 },
        }
    }

    pub fn relu(out_dim: usize) -> Self {
        Self { kind: LayerKind::Relu, offsets: vec![0], out_dim, bottleneck_dim: 0, skip_scale: 0.0 }
    }

    pub fn linear(out_dim: usize) -> Self {
        Self { kind: LayerKind::Linear, offsets: vec![0], out_dim, bottleneck_dim: 0, skip_scale: 0.0 }
    }

    pub fn output(out_dim: usize) -> Self {
        Self { kind: LayerKind::Output, offsets: vec![0], out_dim, bottleneck_dim: 0, skip_scale: 0.0 }
    }

    pub fn left(&self) -> usize {
        (-*self.offsets.first().unwrap_or(&0)).max(0) as usize
    }

    pub fn right(&self) -> usize {
        (*self.offsets.last().unwrap_or(&0)).max(0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub name: String,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    /// Number of network outputs (pdf-ids or senones).
    pub pdf_count: usize,
    /// Layer whose subsampled activation is the distillation representation.
    pub bottleneck_tap: Option<usize>,
}

impl NetworkConfig {
    /// Total context in input frames: (left, right).
    pub fn context(&self) -> (usize, usize) {
        let mut left = 0;
        let mut right = 0;
        for l in &self.layers {
            left += l.left();
            right += l.right();
        }
        (left, right)
    }

    pub fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.layers[layer - 1].out_dim
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(self.input_dim)
    }

    pub fn has_output_layer(&self) -> bool {
        matches!(self.layers.last().map(|l| l.kind), Some(LayerKind::Output))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::BadNetworkConfig("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.offsets.is_empty() || l.offsets.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::BadNetworkConfig(format!("layer {i}: offsets must be sorted")));
            }
            match l.kind {
                LayerKind::TdnnF => {
                    if l.bottleneck_dim == 0 {
                        return Err(Error::BadNetworkConfig(format!("layer {i}: missing bottleneck")));
                    }
                    if l.skip_scale != 0.0 && self.in_dim(i) != l.out_dim {
                        return Err(Error::BadNetworkConfig(format!(
                            "layer {i}: skip connection needs matching dims"
                        )));
                    }
                }
                LayerKind::Relu | LayerKind::Linear | LayerKind::Output => {
                    if l.offsets != vec![0] {
                        return Err(Error::BadNetworkConfig(format!("layer {i}: expects offsets [0]")));
                    }
                }
                LayerKind::Tdnn => {}
            }
            if l.kind == LayerKind::Output {
                if i + 1 != self.layers.len() {
                    return Err(Error::BadNetworkConfig("output layer must be last".into()));
                }
                if l.out_dim != self.pdf_count {
                    return Err(Error::BadNetworkConfig("output dim must equal pdf_count".into()));
                }
            }
        }
        Ok(())
    }
}

/// Trainable tensors of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Affine { w: Array2<f64>, b: Array1<f64>, scale: Array1<f64>, offset: Array1<f64> },
    Factored {
        /// Semi-orthogonal bottleneck factor, `bottleneck x (in * taps)`.
        factor: Array2<f64>,
        w: Array2<f64>,
        b: Array1<f64>,
        scale: Array1<f64>,
        offset: Array1<f64>,
    },
    Linear { w: Array2<f64> },
    Output { w: Array2<f64>, b: Array1<f64> },
}

impl LayerParams {
    /// Tensors in declaration order (checkpoint layout).
    pub fn tensors(&self) -> Vec<(&str, Vec<usize>, Vec<f64>)> {
        fn t2(a: &Array2<f64>) -> (Vec<usize>, Vec<f64>) {
            (a.shape().to_vec(), a.iter().copied().collect())
        }
        fn t1(a: &Array1<f64>) -> (Vec<usize>, Vec<f64>) {
            (a.shape().to_vec(), a.iter().copied().collect())
        }
        match self {
            LayerParams::Affine { w, b, scale, offset } => {
                let (ws, wd) = t2(w);
                let (bs, bd) = t1(b);
                let (ss, sd) = t1(scale);
                let (os, od) = t1(offset);
                vec![("w", ws, wd), ("b", bs, bd), ("scale", ss, sd), ("offset", os, od)]
            }
            LayerParams::Factored { factor, w, b, scale, offset } => {
                let (fs, fd) = t2(factor);
                let (ws, wd) = t2(w);
                let (bs, bd) = t1(b);
                let (ss, sd) = t1(scale);
                let (os, od) = t1(offset);
                vec![
                    ("factor", fs, fd),
                    ("w", ws, wd),
                    ("b", bs, bd),
                    ("scale", ss, sd),
                    ("offset", os, od),
                ]
            }
            LayerParams::Linear { w } => {
                let (ws, wd) = t2(w);
                vec![("w", ws, wd)]
            }
            LayerParams::Output { w, b } => {
                let (ws, wd) = t2(w);
                let (bs, bd) = t1(b);
                vec![("w", ws, wd), ("b", bs, bd)]
            }
        }
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }
}

/// Model parameters plus training bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub layers: Vec<LayerParams>,
    /// Layers below this index receive no gradients or updates.
    pub frozen_below: usize,
    pub step: u64,
}

impl Parameters {
    /// Seeded initialization: weights at 1/sqrt(fan_in), unit scales.
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(cfg.layers.len());
        for (i, spec) in cfg.layers.iter().enumerate() {
            let in_dim = cfg.in_dim(i) * spec.offsets.len();
            let gauss = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64| {
                Array2::from_shape_fn((rows, cols), |_| {
                    let u: f64 = rng.sample(rand_distr::StandardNormal);
                    u * std
                })
            };
            let lp = match spec.kind {
                LayerKind::Tdnn | LayerKind::Relu => LayerParams::Affine {
                    w: gauss(&mut rng, spec.out_dim, in_dim, 1.0 / (in_dim as f64).sqrt()),
                    b: Array1::zeros(spec.out_dim),
                    scale: Array1::ones(spec.out_dim),
                    offset: Array1::zeros(spec.out_dim),
                },
                LayerKind::TdnnF => LayerParams::Factored {
                    factor: gauss(
                        &mut rng,
                        spec.bottleneck_dim,
                        in_dim,
                        1.0 / (in_dim as f64).sqrt(),
                    ),
                    w: gauss(
                        &mut rng,
                        spec.out_dim,
                        spec.bottleneck_dim,
                        1.0 / (spec.bottleneck_dim as f64).sqrt(),
                    ),
                    b: Array1::zeros(spec.out_dim),
                    scale: Array1::ones(spec.out_dim),
                    offset: Array1::zeros(spec.out_dim),
                },
                LayerKind::Linear => LayerParams::Linear {
                    w: gauss(&mut rng, spec.out_dim, in_dim, 1.0 / (in_dim as f64).sqrt()),
                },
                LayerKind::Output => LayerParams::Output {
                    w: gauss(&mut rng, spec.out_dim, in_dim, 0.05 / (in_dim as f64).sqrt()),
                    b: Array1::zeros(spec.out_dim),
                },
            };
            layers.push(lp);
        }
        Ok(Self { layers, frozen_below: 0, step: 0 })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }
}

/// Exact number of scalar weights and biases a config will allocate.
pub fn count_params(cfg: &NetworkConfig) -> usize {
    let mut total = 0usize;
    for (i, spec) in cfg.layers.iter().enumerate() {
        let in_dim = cfg.in_dim(i) * spec.offsets.len();
        total += match spec.kind {
            LayerKind::Tdnn | LayerKind::Relu => spec.out_dim * in_dim + 3 * spec.out_dim,
            LayerKind::TdnnF => {
                spec.bottleneck_dim * in_dim
                    + spec.out_dim * spec.bottleneck_dim
                    + 3 * spec.out_dim
            }
            LayerKind::Linear => spec.out_dim * in_dim,
            LayerKind::Output => spec.out_dim * in_dim + spec.out_dim,
        };
    }
    total
}

/// Gather `x[t + offset]` rows (edge-replicated) into a `t x (d*taps)` matrix.
fn splice(x: &Array2<f64>, offsets: &[i32]) -> Array2<f64> {
    let (t, d) = x.dim();
    let k = offsets.len();
    let mut out = Array2::zeros((t, d * k));
    for (oi, &off) in offsets.iter().enumerate() {
        for row in 0..t {
            let src = (row as i64 + off as i64).clamp(0, t as i64 - 1) as usize;
            out.row_mut(row)
                .slice_mut(ndarray::s![oi * d..(oi + 1) * d])
                .assign(&x.row(src));
        }
    }
    out
}

/// Scatter-add the transpose of [`splice`]: gradients flow back to clamped rows.
fn unsplice(g: &Array2<f64>, offsets: &[i32], t: usize, d: usize) -> Array2<f64> {
    let mut out = Array2::zeros((t, d));
    for (oi, &off) in offsets.iter().enumerate() {
        for row in 0..g.nrows() {
            let src = (row as i64 + off as i64).clamp(0, t as i64 - 1) as usize;
            let garr = g.row(row);
            let mut orow = out.row_mut(src);
            for c in 0..d {
                orow[c] += garr[oi * d + c];
            }
        }
    }
    out
}

/// Output-frame count for an input frame count.
pub fn output_rows(t_in: usize) -> usize {
    t_in.div_ceil(SUBSAMPLE)
}

struct LayerTrace {
    input: Array2<f64>,
    bottleneck: Option<Array2<f64>>,
    postact: Option<Array2<f64>>,
}

/// Result of a forward pass.
pub struct Forward {
    /// `T_out x out_dim`: log-softmax rows when the network ends in an output
    /// layer, otherwise the subsampled final activation.
    pub output: Array2<f64>,
    /// Subsampled activation at the configured bottleneck tap.
    pub tap: Option<Array2<f64>>,
    trace: Option<Vec<LayerTrace>>,
    t_in: usize,
}

fn subsample_rows(x: &Array2<f64>) -> Array2<f64> {
    let t_out = output_rows(x.nrows());
    let mut out = Array2::zeros((t_out, x.ncols()));
    for r in 0..t_out {
        out.row_mut(r).assign(&x.row(r * SUBSAMPLE));
    }
    out
}

/// Run the network over an utterance.
pub fn forward(
    cfg: &NetworkConfig,
    params: &Parameters,
    feats: &FeatureMatrix,
    keep_trace: bool,
) -> Result<Forward> {
    if feats.dim() != cfg.input_dim {
        return Err(Error::FeatureDim { got: feats.dim(), expected: cfg.input_dim });
    }
    let t_in = feats.num_frames();
    let mut x = feats.frames.clone();
    let mut traces = Vec::new();
    let mut tap = None;
    let mut final_out: Option<Array2<f64>> = None;

    for (i, spec) in cfg.layers.iter().enumerate() {
        let lp = &params.layers[i];
        match (spec.kind, lp) {
            (LayerKind::Tdnn | LayerKind::Relu, LayerParams::Affine { w, b, scale, offset }) => {
                let spliced = splice(&x, &spec.offsets);
                let mut v = spliced.dot(&w.t());
                v += b;
                v.mapv_inplace(|z| z.max(0.0));
                let postact = if keep_trace { Some(v.clone()) } else { None };
                let mut y = v;
                y *= scale;
                y += offset;
                if keep_trace {
                    traces.push(LayerTrace { input: x.clone(), bottleneck: None, postact });
                }
                x = y;
            }
            (LayerKind::TdnnF, LayerParams::Factored { factor, w, b, scale, offset }) => {
                let spliced = splice(&x, &spec.offsets);
                let u = spliced.dot(&factor.t());
                let mut v = u.dot(&w.t());
                v += b;
                v.mapv_inplace(|z| z.max(0.0));
                let postact = if keep_trace { Some(v.clone()) } else { None };
                let mut y = v;
                y *= scale;
                y += offset;
                if spec.skip_scale != 0.0 {
                    y.scaled_add(spec.skip_scale, &x);
                }
                if keep_trace {
                    traces.push(LayerTrace {
                        input: x.clone(),
                        bottleneck: Some(u),
                        postact,
                    });
                }
                x = y;
            }
            (LayerKind::Linear, LayerParams::Linear { w }) => {
                let y = x.dot(&w.t());
                if keep_trace {
                    traces.push(LayerTrace { input: x.clone(), bottleneck: None, postact: None });
                }
                x = y;
            }
            (LayerKind::Output, LayerParams::Output { w, b }) => {
                let sub = subsample_rows(&x);
                let mut logits = sub.dot(&w.t());
                logits += b;
                // log-softmax per row
                for mut row in logits.rows_mut() {
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
                    row.mapv_inplace(|z| z - lse);
                }
                if keep_trace {
                    traces.push(LayerTrace { input: sub, bottleneck: None, postact: None });
                }
                final_out = Some(logits);
            }
            _ => return Err(Error::BadNetworkConfig(format!("layer {i}: spec/params mismatch"))),
        }
        if cfg.bottleneck_tap == Some(i) {
            tap = Some(subsample_rows(&x));
        }
        if let Some(out) = final_out {
            return Ok(Forward {
                output: out,
                tap,
                trace: keep_trace.then_some(traces),
                t_in,
            });
        }
    }
    // No output layer: the product is the subsampled final activation.
    let output = subsample_rows(&x);
    if keep_trace {
        // keep the final activation around for the output-side gradient
        traces.push(LayerTrace { input: x, bottleneck: None, postact: None });
    }
    Ok(Forward { output, tap, trace: keep_trace.then_some(traces), t_in })
}

/// Per-tensor gradients, same layout as [`Parameters::layers`]; frozen layers
/// carry `None`.
pub struct ParamGrads {
    pub layers: Vec<Option<LayerParams>>,
}

impl ParamGrads {
    fn zeros_like(params: &Parameters) -> Self {
        Self { layers: params.layers.iter().map(|_| None).collect() }
    }
}

fn scatter_subsampled(g_sub: &Array2<f64>, t_in: usize, dim: usize) -> Array2<f64> {
    let mut g = Array2::zeros((t_in, dim));
    for r in 0..g_sub.nrows() {
        g.row_mut(r * SUBSAMPLE).assign(&g_sub.row(r));
    }
    g
}

/// Backpropagate `d(loss)/d(output)` through the traced forward pass.
/// Returns gradients for every trainable layer; layers below the freeze
/// boundary get none and the pass stops early once all remaining layers are
/// frozen.
pub fn backward(
    cfg: &NetworkConfig,
    params: &Parameters,
    fwd: &Forward,
    g_output: &Array2<f64>,
) -> Result<ParamGrads> {
    let traces = fwd
        .trace
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("backward requires a traced forward pass".into()))?;
    if g_output.dim() != fwd.output.dim() {
        return Err(Error::ShapeMismatch(format!(
            "output gradient {:?} vs output {:?}",
            g_output.dim(),
            fwd.output.dim()
        )));
    }
    let mut grads = ParamGrads::zeros_like(params);
    let n = cfg.layers.len();

    // Seed the full-rate gradient from the output side.
    let mut gi; // gradient w.r.t. the input of the layer being processed
    let mut next_layer; // index of that layer
    if cfg.has_output_layer() {
        
        let LayerParams::Output { w, .. } = &params.layers[n - 1] else {
            return Err(Error::BadNetworkConfig("output layer params mismatch".into()));
        };
        // logp = logits - lse: d logits = g - softmax * rowsum(g)
        let probs = fwd.output.mapv(f64::exp);
        let mut g_logits = g_output.clone();
        for (mut grow, prow) in g_logits.rows_mut().into_iter().zip(probs.rows()) {
            let s: f64 = grow.sum();
            for (g, &p) in grow.iter_mut().zip(prow) {
                *g -= p * s;
            }
        }
        let x_sub = &traces[n - 1].input;
        if n - 1 >= params.frozen_below {
            grads.layers[n - 1] = Some(LayerParams::Output {
                w: g_logits.t().dot(x_sub),
                b: g_logits.sum_axis(ndarray::Axis(0)),
            });
        }
        let g_sub = g_logits.dot(w);
        gi = scatter_subsampled(&g_sub, fwd.t_in, cfg.in_dim(n - 1));
        next_layer = n - 1; // process layers below the output layer
    } else {
        gi = scatter_subsampled(g_output, fwd.t_in, cfg.out_dim());
        next_layer = n;
    }

    while next_layer > 0 {
        let i = next_layer - 1;
        if i < params.frozen_below {
            break; // everything below is frozen
        }
        let spec = &cfg.layers[i];
        let tr = &traces[i];
        let t = tr.input.nrows();
        let d_in = cfg.in_dim(i);
        match (spec.kind, &params.layers[i]) {
            (LayerKind::Tdnn | LayerKind::Relu, LayerParams::Affine { w, scale, .. }) => {
                let y = tr.postact.as_ref().unwrap();
                let g_scale = (&gi * y).sum_axis(ndarray::Axis(0));
                let g_offset = gi.sum_axis(ndarray::Axis(0));
                let mut g_v = &gi * scale;
                g_v.zip_mut_with(y, |g, &yv| {
                    if yv <= 0.0 {
                        *g = 0.0;
                    }
                });
                let spliced = splice(&tr.input, &spec.offsets);
                let g_w = g_v.t().dot(&spliced);
                let g_b = g_v.sum_axis(ndarray::Axis(0));
                let g_spliced = g_v.dot(w);
                gi = unsplice(&g_spliced, &spec.offsets, t, d_in);
                grads.layers[i] =
                    Some(LayerParams::Affine { w: g_w, b: g_b, scale: g_scale, offset: g_offset });
            }
            (LayerKind::TdnnF, LayerParams::Factored { factor, w, scale, .. }) => {
                let y = tr.postact.as_ref().unwrap();
                let u = tr.bottleneck.as_ref().unwrap();
                let g_scale = (&gi * y).sum_axis(ndarray::Axis(0));
                let g_offset = gi.sum_axis(ndarray::Axis(0));
                let mut g_v = &gi * scale;
                g_v.zip_mut_with(y, |g, &yv| {
                    if yv <= 0.0 {
                        *g = 0.0;
                    }
                });
                let g_w = g_v.t().dot(u);
                let g_b = g_v.sum_axis(ndarray::Axis(0));
                let g_u = g_v.dot(w);
                let spliced = splice(&tr.input, &spec.offsets);
                let g_factor = g_u.t().dot(&spliced);
                let g_spliced = g_u.dot(factor);
                let mut g_x = unsplice(&g_spliced, &spec.offsets, t, d_in);
                if spec.skip_scale != 0.0 {
                    g_x.scaled_add(spec.skip_scale, &gi);
                }
                gi = g_x;
                grads.layers[i] = Some(LayerParams::Factored {
                    factor: g_factor,
                    w: g_w,
                    b: g_b,
                    scale: g_scale,
                    offset: g_offset,
                });
            }
            (LayerKind::Linear, LayerParams::Linear { w }) => {
                let g_w = gi.t().dot(&tr.input);
                gi = gi.dot(w);
                grads.layers[i] = Some(LayerParams::Linear { w: g_w });
            }
            (LayerKind::Output, _) => unreachable!("output layer handled above"),
            _ => return Err(Error::BadNetworkConfig(format!("layer {i}: spec/params mismatch"))),
        }
        next_layer = i;
    }
    Ok(grads)
}
