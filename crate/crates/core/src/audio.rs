//! Audio buffers and WAV I/O (PCM 16-bit little-endian, mono, 16 kHz).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed engine sample rate.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio at 16 kHz, samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples, sample_rate: SAMPLE_RATE }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Index of the first non-finite sample, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.samples.iter().position(|s| !s.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::BadSampleRate(self.sample_rate));
        }
        if let Some(index) = self.first_non_finite() {
            return Err(Error::NonFiniteAudio { index });
        }
        Ok(())
    }
}

/// Write mono 16 kHz PCM16 WAV.
pub fn write_wav(path: &Path, audio: &AudioBuffer) -> Result<()> {
    audio.validate()?;
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    let n = audio.samples.len() as u32;
    let data_bytes = n * 2;
    let sr = audio.sample_rate;
    let byte_rate = sr * 2;

    let mut hdr = Vec::with_capacity(44);
    hdr.extend_from_slice(b"RIFF");
    hdr.extend_from_slice(&(36 + data_bytes).to_le_bytes());
    hdr.extend_from_slice(b"WAVE");
    hdr.extend_from_slice(b"fmt ");
    hdr.extend_from_slice(&16u32.to_le_bytes());
    hdr.extend_from_slice(&1u16.to_le_bytes()); // PCM
    hdr.extend_from_slice(&1u16.to_le_bytes()); // mono
    hdr.extend_from_slice(&sr.to_le_bytes());
    hdr.extend_from_slice(&byte_rate.to_le_bytes());
    hdr.extend_from_slice(&2u16.to_le_bytes()); // block align
    hdr.extend_from_slice(&16u16.to_le_bytes()); // bits
    hdr.extend_from_slice(b"data");
    hdr.extend_from_slice(&data_bytes.to_le_bytes());
    w.write_all(&hdr).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut buf = Vec::with_capacity(audio.samples.len() * 2);
    for &s in &audio.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Read mono 16 kHz PCM16 WAV written by [`write_wav`] (minimal RIFF parser).
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;

    let bad = |what: &str| Error::BadFormat { path: p.clone(), what: what.to_string() };
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);

    // Walk chunks; accept fmt then data.
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<(usize, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(bad("truncated chunk"));
        }
        if id == b"fmt " {
            if size < 16 {
                return Err(bad("fmt chunk too small"));
            }
            fmt = Some((u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14)));
        } else if id == b"data" {
            data = Some((body, size));
        }
        pos = body + size + (size & 1);
    }
    let (codec, channels, rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    if codec != 1 || channels != 1 || bits != 16 {
        return Err(bad("expected PCM 16-bit mono"));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::BadSampleRate(rate));
    }
    let (off, size) = data.ok_or_else(|| bad("missing data chunk"))?;
    let n = size / 2;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let v = i16::from_le_bytes([bytes[off + 2 * i], bytes[off + 2 * i + 1]]);
        samples.push(v as f64 / 32767.0);
    }
    Ok(AudioBuffer::new(samples))
}
