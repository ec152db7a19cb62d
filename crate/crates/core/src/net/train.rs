//! Minibatch SGD with momentum, exponential learning-rate decay, and periodic
//! application of the semi-orthogonal constraint.
//!
//! The per-utterance loss is pluggable: training materializes one example at
//! a time (features plus a loss closure over the network output), so the same
//! loop drives sequence training, frame cross-entropy, and representation
//! regression. Gradients are reduced in example order, which keeps runs
//! bit-identical for a fixed seed at any worker count.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::net::{
    backward, forward, semiorth::semiorth_step, LayerParams, NetworkConfig, ParamGrads, Parameters,
};

/// Loss evaluated on the network output (`T_out x dim`): returns the scalar
/// to minimize and its gradient with respect to that output.
pub type LossFn = Box<dyn FnOnce(&Array2<f64>) -> Result<(f64, Array2<f64>)> + Send>;

pub struct TrainExample {
    pub features: FeatureMatrix,
    pub loss: LossFn,
}

/// Deterministic example factory. `round` is the epoch index, so sources may
/// re-augment per epoch.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn example(&self, index: usize, round: usize) -> Result<TrainExample>;
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainOpts {
    pub steps: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lr_final: f64,
    pub momentum: f64,
    pub semiorth_interval: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainOpts {
    fn default() -> Self {
        Self {
            steps: 400,
            batch: 8,
            lr0: 3e-3,
            lr_final: 3e-4,
            momentum: 0.9,
            semiorth_interval: 4,
            seed: 0,
            log_every: 50,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    /// Mean loss per epoch (one pass over the shuffled corpus).
    pub epoch_loss: Vec<f64>,
    /// Mean loss per logging interval.
    pub interval_loss: Vec<f64>,
    pub steps_run: usize,
}

struct Momentum {
    layers: Vec<Option<LayerParams>>,
}

impl Momentum {
    /// Buffers exist only for trainable layers.
    fn new(params: &Parameters) -> Self {
        let layers = params
            .layers
            .iter()
            .enumerate()
            .map(|(i, lp)| {
                if i < params.frozen_below {
                    return None;
                }
                Some(zero_like(lp))
            })
            .collect();
        Self { layers }
    }
}

fn zero_like(lp: &LayerParams) -> LayerParams {
    use ndarray::{Array1, Array2};
    match lp {
        LayerParams::Affine { w, b, scale, offset } => LayerParams::Affine {
            w: Array2::zeros(w.dim()),
            b: Array1::zeros(b.len()),
            scale: Array1::zeros(scale.len()),
            offset: Array1::zeros(offset.len()),
        },
        LayerParams::Factored { factor, w, b, scale, offset } => LayerParams::Factored {
            factor: Array2::zeros(factor.dim()),
            w: Array2::zeros(w.dim()),
            b: Array1::zeros(b.len()),
            scale: Array1::zeros(scale.len()),
            offset: Array1::zeros(offset.len()),
        },
        LayerParams::Linear { w } => LayerParams::Linear { w: Array2::zeros(w.dim()) },
        LayerParams::Output { w, b } => {
            LayerParams::Output { w: Array2::zeros(w.dim()), b: Array1::zeros(b.len()) }
        }
    }
}

fn for_each_tensor(
    a: &mut LayerParams,
    b: &LayerParams,
    mut f: impl FnMut(&mut f64, &f64),
) {
    let (av, bv): (Vec<&mut f64>, Vec<&f64>) = match (a, b) {
        (
            LayerParams::Affine { w, b: bb, scale, offset },
            LayerParams::Affine { w: w2, b: b2, scale: s2, offset: o2 },
        ) => (
            w.iter_mut().chain(bb.iter_mut()).chain(scale.iter_mut()).chain(offset.iter_mut()).collect(),
            w2.iter().chain(b2.iter()).chain(s2.iter()).chain(o2.iter()).collect(),
        ),
        (
            LayerParams::Factored { factor, w, b: bb, scale, offset },
            LayerParams::Factored { factor: f2, w: w2, b: b2, scale: s2, offset: o2 },
        ) => (
            factor
                .iter_mut()
                .chain(w.iter_mut())
                .chain(bb.iter_mut())
                .chain(scale.iter_mut())
                .chain(offset.iter_mut())
                .collect(),
            f2.iter().chain(w2.iter()).chain(b2.iter()).chain(s2.iter()).chain(o2.iter()).collect(),
        ),
        (LayerParams::Linear { w }, LayerParams::Linear { w: w2 }) => {
            (w.iter_mut().collect(), w2.iter().collect())
        }
        (LayerParams::Output { w, b: bb }, LayerParams::Output { w: w2, b: b2 }) => (
            w.iter_mut().chain(bb.iter_mut()).collect(),
            w2.iter().chain(b2.iter()).collect(),
        ),
        _ => panic!("mismatched layer param kinds"),
    };
    for (x, y) in av.into_iter().zip(bv) {
        f(x, y);
    }
}

/// Run the training loop. Returns the per-epoch log; `params` is updated in
/// place. A NaN/inf loss aborts with a diagnostic.
pub fn train(
    cfg: &NetworkConfig,
    params: &mut Parameters,
    source: &dyn ExampleSource,
    opts: &TrainOpts,
) -> Result<TrainLog> {
    if source.is_empty() {
        return Err(Error::ShapeMismatch("training corpus is empty".into()));
    }
    cfg.validate()?;
    let mut momentum = Momentum::new(params);
    let mut log = TrainLog::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let n = source.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch = 0usize;
    let mut cursor = n; // force an initial shuffle
    let mut epoch_acc = 0.0;
    let mut epoch_count = 0usize;
    let mut interval_acc = 0.0;
    let mut interval_count = 0usize;

    for step in 0..opts.steps {
        // Draw the next batch from the shuffled corpus, reshuffling per epoch.
        let mut batch_ids = Vec::with_capacity(opts.batch);
        for _ in 0..opts.batch {
            if cursor >= n {
                if epoch_count > 0 {
                    log.epoch_loss.push(epoch_acc / epoch_count as f64);
                }
                epoch_acc = 0.0;
                epoch_count = 0;
                order.shuffle(&mut rng);
                cursor = 0;
                epoch += 1;
            }
            batch_ids.push(order[cursor]);
            cursor += 1;
        }

        let lr = if opts.steps <= 1 || opts.lr0 <= 0.0 || opts.lr_final <= 0.0 {
            opts.lr0.max(0.0)
        } else {
            let t = step as f64 / (opts.steps - 1) as f64;
            opts.lr0 * (opts.lr_final / opts.lr0).powf(t)
        };

        // Forward/backward per example in parallel; results keep batch order.
        let results: Vec<Result<(f64, ParamGrads)>> = batch_ids
            .par_iter()
            .map(|&i| {
                let ex = source.example(i, epoch)?;
                let fwd = forward(cfg, params, &ex.features, true)?;
                let (loss, g_out) = (ex.loss)(&fwd.output)?;
                let grads = backward(cfg, params, &fwd, &g_out)?;
                Ok((loss, grads))
            })
            .collect();

        let mut batch_grads: Vec<Option<LayerParams>> = params.layers.iter().map(|_| None).collect();
        let mut batch_loss = 0.0;
        for r in results {
            let (loss, grads) = r?;
            batch_loss += loss;
            for (slot, g) in batch_grads.iter_mut().zip(grads.layers) {
                match (slot.as_mut(), g) {
                    (_, None) => {}
                    (None, Some(g)) => *slot = Some(g),
                    (Some(acc), Some(g)) => for_each_tensor(acc, &g, |a, b| *a += b),
                }
            }
        }
        batch_loss /= opts.batch as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Diverged { step, what: format!("loss {batch_loss}") });
        }
        epoch_acc += batch_loss;
        epoch_count += 1;
        interval_acc += batch_loss;
        interval_count += 1;

        // SGD with momentum on the trainable layers.
        let inv_batch = 1.0 / opts.batch as f64;
        for (i, g) in batch_grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            let Some(m) = momentum.layers[i].as_mut() else { continue };
            for_each_tensor(m, &g, |mv, gv| *mv = opts.momentum * *mv + gv * inv_batch);
            let mv = m.clone();
            for_each_tensor(&mut params.layers[i], &mv, |pv, mv| *pv -= lr * mv);
        }
        params.step += 1;

        // Constraint pass; skipped entirely when the model is not moving.
        if lr > 0.0
            && opts.semiorth_interval > 0
            && params.step % opts.semiorth_interval as u64 == 0
        {
            for (i, layer) in params.layers.iter_mut().enumerate() {
                if i < params.frozen_below {
                    continue;
                }
                if let LayerParams::Factored { factor, .. } = layer {
                    semiorth_step(factor)?;
                }
            }
        }

        if opts.log_every > 0 && (step + 1) % opts.log_every == 0 {
            log.interval_loss.push(interval_acc / interval_count as f64);
            log::debug!("step {}: loss {:.6} lr {:.2e}", step + 1, interval_acc / interval_count as f64, lr);
            interval_acc = 0.0;
            interval_count = 0;
        }
        log.steps_run = step + 1;
    }
    if epoch_count > 0 {
        log.epoch_loss.push(epoch_acc / epoch_count as f64);
    }
    if interval_count > 0 {
        log.interval_loss.push(interval_acc / interval_count as f64);
    }
    Ok(log)
}
