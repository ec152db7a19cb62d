//! Seeded data augmentation: speed perturbation, synthetic reverberation, additive noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::seeds;

/// One augmentation recipe. The identity spec leaves audio bit-untouched.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentSpec {
    /// One of 0.9, 1.0, 1.1.
    pub speed_factor: f64,
    /// Additive white Gaussian noise at this SNR (dB over the whole utterance).
    pub noise_snr_db: Option<f64>,
    /// Synthetic impulse-response decay time in seconds, (0, 1.0].
    pub reverb_decay_s: Option<f64>,
    pub seed: u64,
}

impl AugmentSpec {
    pub fn identity() -> Self {
        Self { speed_factor: 1.0, noise_snr_db: None, reverb_decay_s: None, seed: 0 }
    }

    pub fn is_identity(&self) -> bool {
        self.speed_factor == 1.0 && self.noise_snr_db.is_none() && self.reverb_decay_s.is_none()
    }

    pub fn validate(&self) -> Result<()> {
        if ![0.9, 1.0, 1.1].contains(&self.speed_factor) {
            return Err(Error::BadAugmentSpec(format!(
                "speed_factor {} not in {{0.9, 1.0, 1.1}}",
                self.speed_factor
            )));
        }
        if let Some(snr) = self.noise_snr_db {
            if !(0.0..=40.0).contains(&snr) {
                return Err(Error::BadAugmentSpec(format!("noise_snr_db {snr} outside [0, 40]")));
            }
        }
        if let Some(d) = self.reverb_decay_s {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::BadAugmentSpec(format!("reverb decay {d} outside (0, 1.0]")));
            }
        }
        Ok(())
    }
}

/// Resample by linear interpolation; duration scales by 1/speed.
fn speed_perturb(samples: &[f64], speed: f64) -> Vec<f64> {
    let n = samples.len();
    let out_len = ((n - 1) as f64 / speed).floor() as usize + 1;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let src = i as f64 * speed;
        let lo = src.floor() as usize;
        let frac = src - lo as f64;
        let a = samples[lo.min(n - 1)];
        let b = samples[(lo + 1).min(n - 1)];
        out.push(a + (b - a) * frac);
    }
    out
}

/// Exponentially decaying noise tail with a unit direct path; energy-normalized tail.
fn synth_rir(decay_s: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand::Rng;
    let len = ((decay_s * SAMPLE_RATE as f64) as usize).max(2);
    let mut h = vec![0.0; len];
    h[0] = 1.0;
    // -60 dB at the decay time
    let alpha = 6.907755278982137 / len as f64;
    let mut tail_energy = 0.0;
    for (i, v) in h.iter_mut().enumerate().skip(1) {
        let g: f64 = rng.gen_range(-1.0..1.0);
        *v = g * (-alpha * i as f64).exp();
        tail_energy += *v * *v;
    }
    if tail_energy > 0.0 {
        // Keep the tail at -6 dB relative to the direct path.
        let scale = (0.25 / tail_energy).sqrt();
        for v in h.iter_mut().skip(1) {
            *v *= scale;
        }
    }
    h
}

fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len(); // causal; tail past the end is dropped
    let size = (x.len() + h.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut xa: Vec<Complex<f64>> =
        x.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    let mut ha: Vec<Complex<f64>> =
        h.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    fft.process(&mut xa);
    fft.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(&ha) {
        *a *= *b;
    }
    ifft.process(&mut xa);
    let norm = 1.0 / size as f64;
    xa[..out_len].iter().map(|c| c.re * norm).collect()
}

fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|&s| s * s).sum::<f64>() / samples.len() as f64
}

/// Apply an augmentation spec. Deterministic for a fixed seed; the identity
/// spec returns the input bit-exactly.
pub fn augment(audio: &AudioBuffer, spec: &AugmentSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    audio.validate()?;
    if spec.is_identity() {
        return Ok(audio.clone());
    }
    let mut samples = audio.samples.clone();
    if spec.speed_factor != 1.0 {
        samples = speed_perturb(&samples, spec.speed_factor);
    }
    if let Some(decay) = spec.reverb_decay_s {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, "reverb", 0));
        let h = synth_rir(decay, &mut rng);
        samples = fft_convolve(&samples, &h);
    }
    if let Some(snr_db) = spec.noise_snr_db {
        use rand_distr::{Distribution, StandardNormal};
        let sig_power = power(&samples);
        let noise_power = sig_power / 10f64.powf(snr_db / 10.0);
        let sigma = noise_power.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, "noise", 0));
        for s in samples.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *s += sigma * g;
        }
    }
    // Rescaling preserves the SNR while keeping samples in range.
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 1.0 {
        let inv = 1.0 / peak;
        for s in samples.iter_mut() {
            *s *= inv;
        }
    }
    Ok(AudioBuffer::new(samples))
}
