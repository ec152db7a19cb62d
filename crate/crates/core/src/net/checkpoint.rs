//! Versioned checkpoint files: JSON metadata plus raw little-endian f32
//! tensors in declaration order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{LayerKind, LayerParams, NetworkConfig, Parameters};
use crate::topology::HmmTopology;

const CKPT_MAGIC: &[u8; 8] = b"WFCKPT01";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: NetworkConfig,
    pub topology: Option<HmmTopology>,
    pub step: u64,
    pub seed: u64,
    pub frozen_below: usize,
}

pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Parameters,
}

pub fn save(
    path: &Path,
    cfg: &NetworkConfig,
    params: &Parameters,
    topology: Option<&HmmTopology>,
    seed: u64,
) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let meta = CheckpointMeta {
        config: cfg.clone(),
        topology: topology.cloned(),
        step: params.step,
        seed,
        frozen_below: params.frozen_below,
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(CKPT_MAGIC).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    w.write_all(&json).map_err(|e| Error::io(&p, e))?;
    let mut buf = Vec::new();
    for layer in &params.layers {
        for (_, _, data) in layer.tensors() {
            for v in data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;
    let bad = |what: &str| Error::BadFormat { path: p.clone(), what: what.to_string() };
    if bytes.len() < 12 || &bytes[0..8] != CKPT_MAGIC {
        return Err(bad("bad magic"));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + json_len {
        return Err(bad("truncated metadata"));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[12..12 + json_len])?;
    meta.config.validate()?;
    let mut off = 12 + json_len;
    let mut take = |n: usize| -> Result<Vec<f64>> {
        if bytes.len() < off + n * 4 {
            return Err(Error::BadFormat { path: p.clone(), what: "truncated tensors".into() });
        }
        let mut v = Vec::with_capacity(n);
        for i in 0..n {
            let o = off + i * 4;
            v.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
        }
        off += n * 4;
        Ok(v)
    };

    let cfg = &meta.config;
    let mut layers = Vec::with_capacity(cfg.layers.len());
    for (i, spec) in cfg.layers.iter().enumerate() {
        let in_dim = cfg.in_dim(i) * spec.offsets.len();
        let a2 = |rows: usize, cols: usize, data: Vec<f64>| {
            Array2::from_shape_vec((rows, cols), data).expect("shape checked")
        };
        let lp = match spec.kind {
            LayerKind::Tdnn | LayerKind::Relu => LayerParams::Affine {
                w: a2(spec.out_dim, in_dim, take(spec.out_dim * in_dim)?),
                b: Array1::from_vec(take(spec.out_dim)?),
                scale: Array1::from_vec(take(spec.out_dim)?),
                offset: Array1::from_vec(take(spec.out_dim)?),
            },
            LayerKind::TdnnF => LayerParams::Factored {
                factor: a2(spec.bottleneck_dim, in_dim, take(spec.bottleneck_dim * in_dim)?),
                w: a2(spec.out_dim, spec.bottleneck_dim, take(spec.out_dim * spec.bottleneck_dim)?),
                b: Array1::from_vec(take(spec.out_dim)?),
                scale: Array1::from_vec(take(spec.out_dim)?),
                offset: Array1::from_vec(take(spec.out_dim)?),
            },
            LayerKind::Linear => LayerParams::Linear {
                w: a2(spec.out_dim, in_dim, take(spec.out_dim * in_dim)?),
            },
            LayerKind::Output => LayerParams::Output {
                w: a2(spec.out_dim, in_dim, take(spec.out_dim * in_dim)?),
                b: Array1::from_vec(take(spec.out_dim)?),
            },
        };
        layers.push(lp);
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes after tensors"));
    }
    let params = Parameters { layers, frozen_below: meta.frozen_below, step: meta.step };
    Ok(Checkpoint { meta, params })
}

/// f32-quantized copy of the parameters, as a round trip through a checkpoint
/// would produce. Keeps in-memory state bit-comparable with saved artifacts.
pub fn quantize(params: &Parameters) -> Parameters {
    let mut out = params.clone();
    for layer in &mut out.layers {
        let q = |a: &mut Array2<f64>| a.mapv_inplace(|v| v as f32 as f64);
        let q1 = |a: &mut Array1<f64>| a.mapv_inplace(|v| v as f32 as f64);
        match layer {
            LayerParams::Affine { w, b, scale, offset } => {
                q(w);
                q1(b);
                q1(scale);
                q1(offset);
            }
            LayerParams::Factored { factor, w, b, scale, offset } => {
                q(factor);
                q(w);
                q1(b);
                q1(scale);
                q1(offset);
            }
            LayerParams::Linear { w } => q(w),
            LayerParams::Output { w, b } => {
                q(w);
                q1(b);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LayerSpec;
    use crate::topology::{build_topology, DatasetKind};

    #[test]
    fn round_trip_preserves_f32_tensors_and_meta() {
        let cfg = NetworkConfig {
            name: "ck".into(),
            input_dim: 6,
            layers: vec![
                LayerSpec::tdnn(vec![-1, 0, 1], 8),
                LayerSpec::tdnnf(vec![-2, 0], 8, 4, true),
                LayerSpec::linear(5),
                LayerSpec::output(4),
            ],
            pdf_count: 4,
            bottleneck_tap: Some(2),
        };
        let mut params = Parameters::init(&cfg, 77).unwrap();
        params.step = 123;
        params.frozen_below = 1;
        let topo = build_topology(DatasetKind::Snips);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&path, &cfg, &params, Some(&topo), 77).unwrap();
        let ck = load(&path).unwrap();
        assert_eq!(ck.meta.step, 123);
        assert_eq!(ck.meta.seed, 77);
        assert_eq!(ck.meta.config, cfg);
        assert_eq!(ck.meta.topology.as_ref().unwrap().pdf_count, topo.pdf_count);
        assert_eq!(ck.params.frozen_below, 1);
        let expect = quantize(&params);
        assert_eq!(ck.params.layers, expect.layers);
    }

    #[test]
    fn double_round_trip_is_bit_stable() {
        let cfg = NetworkConfig {
            name: "ck2".into(),
            input_dim: 4,
            layers: vec![LayerSpec::tdnnf(vec![-1, 0], 4, 2, true), LayerSpec::output(3)],
            pdf_count: 3,
            bottleneck_tap: None,
        };
        let params = Parameters::init(&cfg, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save(&p1, &cfg, &params, None, 5).unwrap();
        let ck1 = load(&p1).unwrap();
        save(&p2, &cfg, &ck1.params, None, 5).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        assert_eq!(b1, b2);
    }
}
