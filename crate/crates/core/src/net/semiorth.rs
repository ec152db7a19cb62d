//! Semi-orthogonal constraint for the bottleneck factors of TdnnF layers.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Frobenius norm of `M Mᵀ - I`.
pub fn orthonormality_error(m: &Array2<f64>) -> f64 {
    let p = m.dot(&m.t());
    let r = p.nrows();
    let mut acc = 0.0;
    for i in 0..r {
        for j in 0..r {
            let e = p[[i, j]] - if i == j { 1.0 } else { 0.0 };
            acc += e * e;
        }
    }
    acc.sqrt()
}

/// One constraint application: trace-normalize the rows, then move against the
/// orthonormality residual with a norm-scaled step `M <- M - a (MMT - I) M`.
/// A wide matrix (rows < cols) with orthonormal rows is a fixed point.
pub fn semiorth_step(m: &mut Array2<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::ShapeMismatch("semi-orthogonal factor has non-finite entries".into()));
    }
    let rows = m.nrows();
    let mut p = m.dot(&m.t());
    let trace: f64 = (0..rows).map(|i| p[[i, i]]).sum();
    if trace <= f64::MIN_POSITIVE {
        return Ok(()); // zero matrix: nothing to constrain
    }
    let scale2 = rows as f64 / trace;
    let scale = scale2.sqrt();
    if (scale - 1.0).abs() > 1e-12 {
        m.mapv_inplace(|v| v * scale);
        p.mapv_inplace(|v| v * scale2);
    }
    for i in 0..rows {
        p[[i, i]] -= 1.0;
    }
    let err = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if err < 1e-12 {
        return Ok(());
    }
    let alpha = 0.5 * (1.0f64).min(1.0 / err);
    let update = p.dot(m);
    m.scaled_add(-alpha, &update);
    Ok(())
}
