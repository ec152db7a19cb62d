//! Multi-stage pretraining: acoustic-model pretraining on frame senone
//! targets, transfer of the lower stack into a student, and teacher-student
//! bottleneck regression.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::net::train::LossFn;
use crate::net::{NetworkConfig, Parameters};

/// Frame cross-entropy loss against senone labels at the output frame rate.
/// The network output must be log-softmax rows.
pub fn senone_loss(labels: Vec<u32>, inventory: usize) -> LossFn {
    Box::new(move |logp: &Array2<f64>| {
        let t = logp.nrows();
        if labels.len() != t {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {t} output frames",
                labels.len()
            )));
        }
        let mut loss = 0.0;
        let mut grad = Array2::zeros(logp.dim());
        let scale = 1.0 / t as f64;
        for (k, &lab) in labels.iter().enumerate() {
            let lab = lab as usize;
            if lab >= inventory || lab >= logp.ncols() {
                return Err(Error::LabelOutOfRange { label: lab, inventory });
            }
            loss -= logp[[k, lab]] * scale;
            grad[[k, lab]] = -scale;
        }
        Ok((loss, grad))
    })
}

/// Frame accuracy of log-prob rows against labels.
pub fn frame_accuracy(logp: &Array2<f64>, labels: &[u32]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for (k, &lab) in labels.iter().enumerate() {
        let best = logp
            .row(k)
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        if best == lab as usize {
            hits += 1;
        }
    }
    hits as f64 / labels.len() as f64
}

/// Mean squared error between a representation and its target, averaged over
/// all `T_out x dim` elements, with its gradient.
pub fn repr_mse(output: &Array2<f64>, target: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
    if output.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "representation {:?} vs target {:?} (teacher/student frame counts must match)",
            output.dim(),
            target.dim()
        )));
    }
    let n = output.len() as f64;
    let diff = output - target;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

/// Regression loss toward a fixed teacher representation.
pub fn distill_loss(target: Array2<f64>) -> LossFn {
    Box::new(move |output: &Array2<f64>| repr_mse(output, &target))
}

/// Copy the first `n_layers` of a pretrained acoustic model into a freshly
/// initialized student and freeze them. The layer specs must match exactly.
pub fn transfer_init(
    am_cfg: &NetworkConfig,
    am_params: &Parameters,
    student_cfg: &NetworkConfig,
    n_layers: usize,
    init_seed: u64,
) -> Result<Parameters> {
    if n_layers > am_cfg.layers.len() {
        return Err(Error::ArchMismatch(format!(
            "transfer of {n_layers} layers from a {}-layer acoustic model",
            am_cfg.layers.len()
        )));
    }
    if n_layers > student_cfg.layers.len() {
        return Err(Error::ArchMismatch(format!(
            "student has only {} layers",
            student_cfg.layers.len()
        )));
    }
    for i in 0..n_layers {
        if am_cfg.layers[i] != student_cfg.layers[i] {
            return Err(Error::ArchMismatch(format!(
                "layer {i} differs between acoustic model and student"
            )));
        }
    }
    if am_cfg.input_dim != student_cfg.input_dim {
        return Err(Error::ArchMismatch("input dimension differs".into()));
    }
    let mut params = Parameters::init(student_cfg, init_seed)?;
    params.layers[..n_layers].clone_from_slice(&am_params.layers[..n_layers]);
    params.frozen_below = n_layers;
    Ok(params)
}

/// Attach a trained lower stack (kept frozen) to a freshly initialized full
/// student. `lower_layers` counts layers from the bottom.
pub fn attach_lower_stack(
    student_cfg: &NetworkConfig,
    lower_cfg: &NetworkConfig,
    lower_params: &Parameters,
    lower_layers: usize,
    init_seed: u64,
) -> Result<Parameters> {
    for i in 0..lower_layers {
        if student_cfg.layers[i] != lower_cfg.layers[i] {
            return Err(Error::ArchMismatch(format!("lower layer {i} differs from student plan")));
        }
    }
    let mut params = Parameters::init(student_cfg, init_seed)?;
    params.layers[..lower_layers].clone_from_slice(&lower_params.layers[..lower_layers]);
    params.frozen_below = lower_layers;
    Ok(params)
}

const BNCK_MAGIC: &[u8; 8] = b"WFBNCK01";

/// Write one utterance's teacher bottleneck representation:
/// magic, u32 T_out, u32 dim, then f32 LE row-major.
pub fn write_bottleneck(path: &Path, repr: &Array2<f64>) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(BNCK_MAGIC).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(repr.nrows() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(repr.ncols() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    let mut buf = Vec::with_capacity(repr.len() * 4);
    for &v in repr.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn read_bottleneck(path: &Path) -> Result<Array2<f64>> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;
    let bad = |what: &str| Error::BadFormat { path: p.clone(), what: what.to_string() };
    if bytes.len() < 16 || &bytes[0..8] != BNCK_MAGIC {
        return Err(bad("bad magic"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + t * d * 4 {
        return Err(bad("payload size mismatch"));
    }
    let mut out = Array2::zeros((t, d));
    for i in 0..t * d {
        let o = 16 + i * 4;
        out[[i / d, i % d]] = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    }
    Ok(out)
}
