//! Incremental network evaluation for streaming decoding.
//!
//! Each layer keeps a ring buffer of recent output frames and advances as far
//! as its look-ahead allows; the tail flushes at end of stream with the same
//! edge replication batch inference uses. Chunk boundaries therefore never
//! change the produced rows, which makes event lists invariant to chunking.

use ndarray::Array1;

use crate::decoder::{DecoderConfig, DecoderState, DetectionEvent};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::grammar::DecodingGraph;
use crate::net::{LayerKind, LayerParams, NetworkConfig, Parameters};
use crate::numerator::SUBSAMPLE;

struct Ring {
    rows: std::collections::VecDeque<Vec<f64>>,
    /// Absolute index of `rows[0]`.
    first: usize,
}

impl Ring {
    fn new() -> Self {
        Self { rows: std::collections::VecDeque::new(), first: 0 }
    }

    fn len_abs(&self) -> usize {
        self.first + self.rows.len()
    }

    fn push(&mut self, row: Vec<f64>) {
        self.rows.push_back(row);
    }

    fn get_clamped(&self, idx: i64, last: Option<usize>) -> &[f64] {
        let hi = last.unwrap_or(self.len_abs().saturating_sub(1)) as i64;
        let i = idx.clamp(0, hi) as usize;
        debug_assert!(i >= self.first, "row {i} already dropped (first {})", self.first);
        &self.rows[i - self.first]
    }

    fn drop_below(&mut self, keep_from: usize) {
        while self.first < keep_from && !self.rows.is_empty() {
            self.rows.pop_front();
            self.first += 1;
        }
    }
}

/// Streaming evaluator producing subsampled log-prob rows from feature rows.
pub struct StreamingNet<'a> {
    cfg: &'a NetworkConfig,
    params: &'a Parameters,
    /// `bufs[l]` holds the input rows of layer `l`; the last entry holds the
    /// final hidden activation consumed by the output layer.
    bufs: Vec<Ring>,
    /// Frames each layer has produced so far.
    produced: Vec<usize>,
    frames_in: usize,
    emitted: usize,
    finished: bool,
}

impl<'a> StreamingNet<'a> {
    pub fn new(cfg: &'a NetworkConfig, params: &'a Parameters) -> Result<Self> {
        cfg.validate()?;
        if !cfg.has_output_layer() {
            return Err(Error::BadNetworkConfig("streaming needs an output layer".into()));
        }
        let n = cfg.layers.len();
        let bufs = (0..n).map(|_| Ring::new()).collect();
        Ok(Self { cfg, params, bufs, produced: vec![0; n], frames_in: 0, emitted: 0, finished: false })
    }

    /// Feed feature rows; returns any newly available log-prob rows.
    pub fn push(&mut self, rows: &[Vec<f64>]) -> Result<Vec<Array1<f64>>> {
        debug_assert!(!self.finished);
        for r in rows {
            if r.len() != self.cfg.input_dim {
                return Err(Error::FeatureDim { got: r.len(), expected: self.cfg.input_dim });
            }
            self.bufs[0].push(r.clone());
            self.frames_in += 1;
        }
        self.advance(None)
    }

    /// End of stream: flush remaining rows with edge replication.
    pub fn finish(&mut self) -> Result<Vec<Array1<f64>>> {
        self.finished = true;
        let last = self.frames_in.saturating_sub(1);
        self.advance(Some(last))
    }

    pub fn total_output_rows(&self) -> usize {
        self.frames_in.div_ceil(SUBSAMPLE)
    }

    fn advance(&mut self, last: Option<usize>) -> Result<Vec<Array1<f64>>> {
        let n_hidden = self.cfg.layers.len() - 1; // all but the output layer
        for l in 0..n_hidden {
            let spec = &self.cfg.layers[l];
            let max_off = *spec.offsets.last().unwrap() as i64;
            loop {
                let t = self.produced[l];
                if last.is_none() {
                    // wait until the look-ahead is available
                    let need = t as i64 + max_off;
                    if need >= self.bufs[l].len_abs() as i64 {
                        break;
                    }
                } else if t >= self.frames_in {
                    break;
                }
                if last.is_some() && t >= self.frames_in {
                    break;
                }
                let row = self.eval_row(l, t, last)?;
                self.bufs[l + 1].push(row);
                self.produced[l] = t + 1;
            }
            // retention: the next layer still needs rows from produced[l+1] + min_off
            let consumer_min = if l + 1 < n_hidden {
                *self.cfg.layers[l + 1].offsets.first().unwrap() as i64
            } else {
                0
            };
            let keep_from = (self.produced[l + 1] as i64 + consumer_min).max(0) as usize;
            self.bufs[l + 1].drop_below(keep_from);
            let my_min = *spec.offsets.first().unwrap() as i64;
            let keep_in = (self.produced[l] as i64 + my_min).max(0) as usize;
            self.bufs[l].drop_below(keep_in);
        }

        // output layer over subsampled final-activation rows
        let mut out = Vec::new();
        let top = n_hidden;
        let LayerParams::Output { w, b } = &self.params.layers[top] else {
            return Err(Error::BadNetworkConfig("last layer params are not an output".into()));
        };
        let total = self.total_output_rows();
        loop {
            let k = self.emitted;
            if last.is_some() && k >= total {
                break;
            }
            let need = k * SUBSAMPLE;
            if need >= self.produced[top - 1] {
                break; // hidden row not computed yet
            }
            let x = Array1::from_vec(self.bufs[top].get_clamped(need as i64, None).to_vec());
            let mut logits = w.dot(&x) + b;
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + logits.iter().map(|&v| (v - m).exp()).sum::<f64>().ln();
            logits.mapv_inplace(|v| v - lse);
            out.push(logits);
            self.emitted += 1;
            let keep_from = ((self.emitted * SUBSAMPLE) as i64).max(0) as usize;
            self.bufs[top].drop_below(keep_from);
        }
        Ok(out)
    }

    fn eval_row(&self, l: usize, t: usize, last: Option<usize>) -> Result<Vec<f64>> {
        let spec = &self.cfg.layers[l];
        let buf = &self.bufs[l];
        let d_in = self.cfg.in_dim(l);
        let gather = |offsets: &[i32]| -> Array1<f64> {
            let mut v = Vec::with_capacity(d_in * offsets.len());
            for &off in offsets {
                v.extend_from_slice(buf.get_clamped(t as i64 + off as i64, last));
            }
            Array1::from_vec(v)
        };
        let row = match (&spec.kind, &self.params.layers[l]) {
            (LayerKind::Tdnn | LayerKind::Relu, LayerParams::Affine { w, b, scale, offset }) => {
                let x = gather(&spec.offsets);
                let mut v = w.dot(&x) + b;
                v.mapv_inplace(|z| z.max(0.0));
                v = &v * scale + offset;
                v.to_vec()
            }
            (LayerKind::TdnnF, LayerParams::Factored { factor, w, b, scale, offset }) => {
                let x = gather(&spec.offsets);
                let u = factor.dot(&x);
                let mut v = w.dot(&u) + b;
                v.mapv_inplace(|z| z.max(0.0));
                let mut y = &v * scale + offset;
                if spec.skip_scale != 0.0 {
                    let own = Array1::from_vec(buf.get_clamped(t as i64, last).to_vec());
                    y.scaled_add(spec.skip_scale, &own);
                }
                y.to_vec()
            }
            (LayerKind::Linear, LayerParams::Linear { w }) => {
                let x = Array1::from_vec(buf.get_clamped(t as i64, last).to_vec());
                w.dot(&x).to_vec()
            }
            _ => return Err(Error::BadNetworkConfig(format!("layer {l}: unsupported in streaming"))),
        };
        Ok(row)
    }
}

/// Decode a feature stream in chunks, returning the event list.
pub fn decode_stream(
    cfg: &NetworkConfig,
    params: &Parameters,
    graph: &DecodingGraph,
    feats: &FeatureMatrix,
    dec_cfg: &DecoderConfig,
    chunk_frames: usize,
) -> Result<Vec<DetectionEvent>> {
    let chunk = chunk_frames.max(1);
    let mut net = StreamingNet::new(cfg, params)?;
    let mut state = DecoderState::new(graph, dec_cfg.clone())?;
    let t = feats.num_frames();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(t);
    for r in feats.frames.rows() {
        rows.push(r.to_vec());
    }
    let mut fed = 0usize;
    while fed < t {
        let hi = (fed + chunk).min(t);
        let logps = net.push(&rows[fed..hi])?;
        for lp in &logps {
            state.push_frame(lp.as_slice().unwrap())?;
        }
        fed = hi;
    }
    for lp in net.finish()? {
        state.push_frame(lp.as_slice().unwrap())?;
    }
    state.finish();
    Ok(state.events().to_vec())
}

/// Whole-stream decode; identical to chunked pushes of any size.
pub fn decode_offline(
    cfg: &NetworkConfig,
    params: &Parameters,
    graph: &DecodingGraph,
    feats: &FeatureMatrix,
    dec_cfg: &DecoderConfig,
) -> Result<Vec<DetectionEvent>> {
    if feats.num_frames() == 0 {
        return Ok(Vec::new());
    }
    decode_stream(cfg, params, graph, feats, dec_cfg, usize::MAX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{forward, LayerSpec};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn test_cfg(pdf: usize) -> NetworkConfig {
        NetworkConfig {
            name: "stream-test".into(),
            input_dim: 8,
            layers: vec![
                LayerSpec::tdnn(vec![-2, -1, 0, 1, 2], 12),
                LayerSpec::tdnnf(vec![-6, 0, 2], 12, 6, true),
                LayerSpec::tdnnf(vec![-9, -3, 0], 12, 6, true),
                LayerSpec::linear(10),
                LayerSpec::output(pdf),
            ],
            pdf_count: pdf,
            bottleneck_tap: None,
        }
    }

    #[test]
    fn streaming_rows_match_batch_forward_bit_exactly_per_chunking() {
        let cfg = test_cfg(6);
        let params = Parameters::init(&cfg, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = 47;
        let feats = FeatureMatrix {
            frames: Array2::from_shape_fn((t, 8), |_| rng.gen_range(-1.0..1.0)),
            frame_shift_ms: 10,
            window_ms: 23,
        };
        let collect = |chunk: usize| -> Vec<Vec<f64>> {
            let mut net = StreamingNet::new(&cfg, &params).unwrap();
            let rows: Vec<Vec<f64>> = feats.frames.rows().into_iter().map(|r| r.to_vec()).collect();
            let mut out = Vec::new();
            let mut fed = 0;
            while fed < t {
                let hi = (fed + chunk).min(t);
                for lp in net.push(&rows[fed..hi]).unwrap() {
                    out.push(lp.to_vec());
                }
                fed = hi;
            }
            for lp in net.finish().unwrap() {
                out.push(lp.to_vec());
            }
            out
        };
        let whole = collect(t);
        assert_eq!(whole.len(), t.div_ceil(3));
        for chunk in [1usize, 7, 32] {
            let got = collect(chunk);
            assert_eq!(got, whole, "chunk {chunk} differs");
        }
        // and the streaming path agrees closely with batch inference
        let batch = forward(&cfg, &params, &feats, false).unwrap().output;
        for (k, row) in whole.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((v - batch[[k, c]]).abs() < 1e-9, "row {k} col {c}");
            }
        }
    }

    #[test]
    fn empty_stream_yields_no_events() {
        use crate::grammar::build_decoding;
        use crate::topology::{build_topology, DatasetKind};
        let topo = build_topology(DatasetKind::Snips);
        let dec = build_decoding(DatasetKind::Snips, &topo).unwrap();
        let cfg = test_cfg(topo.pdf_count);
        let params = Parameters::init(&cfg, 1).unwrap();
        let feats = FeatureMatrix {
            frames: Array2::zeros((0, 8)),
            frame_shift_ms: 10,
            window_ms: 23,
        };
        let events =
            decode_offline(&cfg, &params, &dec, &feats, &DecoderConfig::default()).unwrap();
        assert!(events.is_empty());
    }

    #[test]
    fn event_lists_invariant_to_chunk_size() {
        use crate::grammar::build_decoding;
        use crate::topology::{build_topology, DatasetKind};
        let topo = build_topology(DatasetKind::Snips);
        let dec = build_decoding(DatasetKind::Snips, &topo).unwrap();
        let cfg = test_cfg(topo.pdf_count);
        let params = Parameters::init(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = FeatureMatrix {
            frames: Array2::from_shape_fn((160, 8), |_| rng.gen_range(-1.0..1.0)),
            frame_shift_ms: 10,
            window_ms: 23,
        };
        let dec_cfg = DecoderConfig { threshold: 0.0, beam: f64::INFINITY, ..Default::default() };
        let whole = decode_offline(&cfg, &params, &dec, &feats, &dec_cfg).unwrap();
        for chunk in [1usize, 7, 32, 160] {
            let got = decode_stream(&cfg, &params, &dec, &feats, &dec_cfg, chunk).unwrap();
            assert_eq!(got, whole, "chunk {chunk}");
        }
    }
}
