//! Sequence-discriminative objective and its exact gradient.
//!
//! The objective for one utterance is the log-probability mass of the
//! numerator graph minus that of the denominator graph, both computed by a
//! log-semiring forward-backward pass over the trellis unrolled to the output
//! frame count. The gradient with respect to the network log-outputs is the
//! difference of the two occupancy matrices. All trellis arithmetic is in
//! 64-bit floats with max-shifted log-sum-exp.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerator::NumeratorLattice;

/// Log-domain network outputs, one row per output frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbMatrix(pub Array2<f64>);

impl LogProbMatrix {
    pub fn num_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn pdf_count(&self) -> usize {
        self.0.ncols()
    }

    /// Check log-softmax shape: finite entries, each row log-sums to 0.
    pub fn validate(&self) -> Result<()> {
        for row in self.0.rows() {
            let mut m = f64::NEG_INFINITY;
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::ShapeMismatch("non-finite log-probability".into()));
                }
                m = m.max(v);
            }
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            let lse = m + s.ln();
            if lse.abs() > 1e-5 {
                return Err(Error::ShapeMismatch(format!("row log-sum-exp {lse} != 0")));
            }
        }
        Ok(())
    }
}

/// Objective value and gradient for one utterance.
#[derive(Debug, Clone)]
pub struct LossResult {
    /// Numerator mass minus denominator mass, in log domain.
    pub objective: f64,
    /// d(objective) / d(log-output), one row per output frame.
    pub grad: Array2<f64>,
}

#[inline]
fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Forward-backward over the trellis of `graph` unrolled across the frames of
/// `logp`. Returns the total log mass and the per-frame pdf occupancies.
///
/// Works for acyclic lattices and cyclic graphs alike: a state at step `t`
/// expands through its arcs to step `t+1`. The graph must be epsilon-free.
pub fn forward_backward(graph: &Graph, logp: &LogProbMatrix) -> Result<(f64, Array2<f64>)> {
    if graph.has_epsilon() {
        return Err(Error::ShapeMismatch("forward-backward requires an epsilon-free graph".into()));
    }
    let t_out = logp.num_frames();
    let n = graph.num_states as usize;
    let pdfs = logp.pdf_count();
    if graph.pdf_count > pdfs {
        return Err(Error::ShapeMismatch(format!(
            "graph pdf_count {} exceeds log-prob dim {pdfs}",
            graph.pdf_count
        )));
    }

    let neg_inf = f64::NEG_INFINITY;
    let mut alpha = Array2::from_elem((t_out + 1, n), neg_inf);
    alpha[[0, graph.start as usize]] = 0.0;
    for t in 0..t_out {
        let row = logp.0.row(t);
        for a in &graph.arcs {
            let src = alpha[[t, a.src as usize]];
            if src == neg_inf {
                continue;
            }
            let score = src + a.log_weight + row[a.label as usize];
            let cell = &mut alpha[[t + 1, a.dst as usize]];
            *cell = logaddexp(*cell, score);
        }
    }
    let mut log_z = neg_inf;
    for &(s, w) in &graph.finals {
        log_z = logaddexp(log_z, alpha[[t_out, s as usize]] + w);
    }
    if log_z == neg_inf {
        return Err(Error::NoPath(t_out));
    }

    let mut beta = Array2::from_elem((t_out + 1, n), neg_inf);
    for &(s, w) in &graph.finals {
        beta[[t_out, s as usize]] = w;
    }
    let mut occupancy = Array2::zeros((t_out, pdfs));
    for t in (0..t_out).rev() {
        let row = logp.0.row(t);
        for a in &graph.arcs {
            let down = beta[[t + 1, a.dst as usize]];
            if down == neg_inf {
                continue;
            }
            let emit = a.log_weight + row[a.label as usize];
            let cell = &mut beta[[t, a.src as usize]];
            *cell = logaddexp(*cell, emit + down);
            let src = alpha[[t, a.src as usize]];
            if src != neg_inf {
                let post = (src + emit + down - log_z).exp();
                occupancy[[t, a.label as usize]] += post;
            }
        }
    }
    Ok((log_z, occupancy))
}

/// Objective and gradient of one summand of the training criterion.
pub fn lfmmi(num: &NumeratorLattice, den: &Graph, logp: &LogProbMatrix) -> Result<LossResult> {
    if num.t_out as usize != logp.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "numerator covers {} frames, log-probs {}",
            num.t_out,
            logp.num_frames()
        )));
    }
    lfmmi_graphs(&num.graph, den, logp)
}

/// As [`lfmmi`] but over any epsilon-free numerator graph (the alignment-free
/// variant keeps self-loops and has no fixed frame count).
pub fn lfmmi_graphs(num: &Graph, den: &Graph, logp: &LogProbMatrix) -> Result<LossResult> {
    let (num_z, num_occ) = match forward_backward(num, logp) {
        Err(Error::NoPath(_)) => return Err(Error::EmptyNumerator),
        r => r?,
    };
    let (den_z, den_occ) = match forward_backward(den, logp) {
        Err(Error::NoPath(_)) => return Err(Error::EmptyDenominator),
        r => r?,
    };
    Ok(LossResult { objective: num_z - den_z, grad: num_occ - den_occ })
}
