//! Log-Mel filterbank front end: 64 bands, 23 ms Hamming window, 10 ms shift.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const NUM_BANDS: usize = 64;
pub const WINDOW_SAMPLES: usize = 368; // 23 ms at 16 kHz
pub const SHIFT_SAMPLES: usize = 160; // 10 ms at 16 kHz
pub const FRAME_SHIFT_MS: u32 = 10;
pub const WINDOW_MS: u32 = 23;
const FFT_SIZE: usize = 512;
const MEL_LOW_HZ: f64 = 20.0;
const MEL_HIGH_HZ: f64 = 7600.0;
/// Energies are floored before the log so silence stays finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// T x 64 matrix of log-Mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub frames: Array2<f64>,
    pub frame_shift_ms: u32,
    pub window_ms: u32,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Frames obtainable from `num_samples` of 16 kHz audio.
pub fn frame_count(num_samples: usize) -> usize {
    if num_samples < WINDOW_SAMPLES {
        0
    } else {
        1 + (num_samples - WINDOW_SAMPLES) / SHIFT_SAMPLES
    }
}

pub(crate) fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub(crate) fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filterbank over FFT bins, rows = bands.
fn mel_filterbank() -> Array2<f64> {
    let num_bins = FFT_SIZE / 2 + 1;
    let mut bank = Array2::zeros((NUM_BANDS, num_bins));
    let mel_lo = hz_to_mel(MEL_LOW_HZ);
    let mel_hi = hz_to_mel(MEL_HIGH_HZ);
    let centers: Vec<f64> = (0..NUM_BANDS + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (NUM_BANDS + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    for b in 0..NUM_BANDS {
        let (left, center, right) = (centers[b], centers[b + 1], centers[b + 2]);
        for k in 0..num_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                bank[[b, k]] = w;
            }
        }
    }
    bank
}

/// Nonzero support of each band's filter, for the per-frame inner loop.
fn band_support(bank: &Array2<f64>) -> Vec<(usize, Vec<f64>)> {
    (0..bank.nrows())
        .map(|b| {
            let row = bank.row(b);
            let lo = row.iter().position(|&w| w > 0.0).unwrap_or(0);
            let hi = row.iter().rposition(|&w| w > 0.0).map(|i| i + 1).unwrap_or(lo);
            (lo, row.slice(ndarray::s![lo..hi]).to_vec())
        })
        .collect()
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Log-Mel extractor with a cached FFT plan and filterbank.
pub struct LogMelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    bands: Vec<(usize, Vec<f64>)>,
    /// Seeded uniform dither amplitude; `None` disables (the default).
    pub dither: Option<(f64, u64)>,
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl LogMelExtractor {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fft: planner.plan_fft_forward(FFT_SIZE),
            window: hamming(WINDOW_SAMPLES),
            bands: band_support(&mel_filterbank()),
            dither: None,
        }
    }

    pub fn with_dither(seed: u64) -> Self {
        let mut ex = Self::new();
        ex.dither = Some((1e-5, seed));
        ex
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        audio.validate()?;
        if audio.len() < WINDOW_SAMPLES {
            return Err(Error::AudioTooShort { got: audio.len(), need: WINDOW_SAMPLES });
        }
        let samples: Vec<f64> = match self.dither {
            None => audio.samples.clone(),
            Some((amp, seed)) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                audio.samples.iter().map(|&s| s + rng.gen_range(-amp..amp)).collect()
            }
        };
        let t = frame_count(samples.len());
        let mut frames = Array2::zeros((t, NUM_BANDS));
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        let num_bins = FFT_SIZE / 2 + 1;
        let mut power = vec![0.0f64; num_bins];
        for fi in 0..t {
            let off = fi * SHIFT_SAMPLES;
            for i in 0..FFT_SIZE {
                let v = if i < WINDOW_SAMPLES { samples[off + i] * self.window[i] } else { 0.0 };
                buf[i] = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, p) in power.iter_mut().enumerate() {
                *p = buf[k].norm_sqr();
            }
            for (b, (lo, weights)) in self.bands.iter().enumerate() {
                let e: f64 =
                    weights.iter().zip(&power[*lo..]).map(|(w, p)| w * p).sum();
                frames[[fi, b]] = e.max(LOG_FLOOR).ln();
            }
        }
        Ok(FeatureMatrix { frames, frame_shift_ms: FRAME_SHIFT_MS, window_ms: WINDOW_MS })
    }
}

/// Process-wide extractor without dither (FFT plan and filterbank are
/// immutable and shareable across threads).
pub fn shared_extractor() -> &'static LogMelExtractor {
    static SHARED: std::sync::OnceLock<LogMelExtractor> = std::sync::OnceLock::new();
    SHARED.get_or_init(LogMelExtractor::new)
}

/// Convenience wrapper using the shared extractor.
pub fn compute_logmel(audio: &AudioBuffer) -> Result<FeatureMatrix> {
    shared_extractor().compute(audio)
}

const FEAT_MAGIC: &[u8; 8] = b"WFFEAT01";

/// Write one utterance's features: magic, u32 T, u32 dim, row-major f32 LE.
pub fn write_features(path: &Path, feats: &FeatureMatrix) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(FEAT_MAGIC).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(feats.num_frames() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(feats.dim() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    let mut buf = Vec::with_capacity(feats.frames.len() * 4);
    for &v in feats.frames.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;
    let bad = |what: &str| Error::BadFormat { path: p.clone(), what: what.to_string() };
    if bytes.len() < 16 || &bytes[0..8] != FEAT_MAGIC {
        return Err(bad("bad magic"));
    }
    let t = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if dim != NUM_BANDS {
        return Err(bad("unexpected feature dimension"));
    }
    if bytes.len() != 16 + t * dim * 4 {
        return Err(bad("payload size mismatch"));
    }
    let mut frames = Array2::zeros((t, dim));
    for i in 0..t * dim {
        let o = 16 + i * 4;
        let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        frames[[i / dim, i % dim]] = v as f64;
    }
    Ok(FeatureMatrix { frames, frame_shift_ms: FRAME_SHIFT_MS, window_ms: WINDOW_MS })
}
