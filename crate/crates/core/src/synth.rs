//! Synthetic corpus generator with exact ground-truth alignments.
//!
//! Utterances are built from a bank of 63 "phones" plus silence. Each phone is
//! a two-tone complex whose component frequencies come from a fixed 12-point
//! Mel-spaced grid, so phones stay spectrally separated even under per-speaker
//! pitch offsets. A wake word is a fixed sequence of distinct phones, one per
//! wake-word HMM state; generic speech is a random phone sequence. Alignments
//! are exact by construction and every draw is seeded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioBuffer, SAMPLE_RATE};
use crate::features;
use crate::seeds;
use crate::topology::DatasetKind;

/// Samples per 10 ms alignment frame.
pub const FRAME_SAMPLES: usize = 160;
/// Extra samples appended so the audio yields exactly as many feature frames
/// as alignment frames (window 368 = 160 + 208).
const WINDOW_TAIL: usize = 208;

/// Silence unit id; phones are 1..=63.
pub const SILENCE_ID: u32 = 0;
/// Number of distinct phones in the bank.
pub const NUM_PHONES: u32 = 63;
/// Senone inventory for the acoustic-model task: silence + phones.
pub const SENONE_COUNT: usize = (NUM_PHONES + 1) as usize;

/// Fixed wake-word phone sequences, one phone per wake-word HMM state.
pub fn wake_word_phones(kind: DatasetKind) -> &'static [u32] {
    match kind {
        DatasetKind::Snips => &[5, 23, 41, 58],
        DatasetKind::Fluency => &[5, 23, 41, 58, 14],
    }
}

/// One aligned segment at the 10 ms frame rate; `unit` 0 is silence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AlignSeg {
    pub unit: u32,
    pub start_frame: u32,
    pub end_frame: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UttKind {
    Pos,
    Neg,
}

/// A generated utterance with its ground-truth alignment.
#[derive(Debug, Clone)]
pub struct SynthUtterance {
    pub id: String,
    pub audio: AudioBuffer,
    pub kind: UttKind,
    /// Contiguous, non-overlapping segments tiling `[0, T)` feature frames.
    pub alignment: Vec<AlignSeg>,
    pub speaker_id: u32,
    /// End of the wake word in seconds (positives only).
    pub ww_end_s: Option<f64>,
}

impl SynthUtterance {
    pub fn num_frames(&self) -> usize {
        self.alignment.last().map(|s| s.end_frame as usize).unwrap_or(0)
    }
}

/// Corpus recipe; all sizes are desk-scale knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CorpusSpec {
    pub kind: DatasetKind,
    pub num_positives: usize,
    pub negative_hours: f64,
    /// Speaker ids are `speaker_base .. speaker_base + num_speakers`.
    pub num_speakers: u32,
    pub speaker_base: u32,
    pub seed: u64,
    /// Fraction of negatives that embed near-wake-word phone patterns.
    pub confusable_rate: f64,
    /// Positives per speaker before moving to the next speaker.
    pub positives_per_speaker: usize,
    /// Trailing silence after the wake word, in 10 ms frames (min, max).
    pub trailing_silence_frames: (u32, u32),
}

impl CorpusSpec {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self {
            kind,
            num_positives: 0,
            negative_hours: 0.0,
            num_speakers: 20,
            speaker_base: 0,
            seed,
            confusable_rate: 0.35,
            positives_per_speaker: 5,
            trailing_silence_frames: (90, 120),
        }
    }
}

/// Per-speaker pitch factor in [0.92, 1.08], a function of the id alone.
pub fn speaker_pitch(speaker_id: u32) -> f64 {
    let h = seeds::derive(0x57414b45, "speaker-pitch", speaker_id as u64);
    0.92 + 0.16 * (h % 10_000) as f64 / 9_999.0
}

/// Component frequencies (Hz) of a phone before the speaker pitch factor.
fn phone_components(phone: u32) -> (f64, f64) {
    debug_assert!((1..=NUM_PHONES).contains(&phone));
    // 12-point Mel-spaced grid, 300..5200 Hz.
    let grid: Vec<f64> = {
        let lo = features::hz_to_mel(300.0);
        let hi = features::hz_to_mel(5200.0);
        (0..12).map(|i| features::mel_to_hz(lo + (hi - lo) * i as f64 / 11.0)).collect()
    };
    // Pair (i, j), i < j, in lexicographic order; ids start at 1.
    let mut idx = phone - 1;
    for i in 0..12u32 {
        let row = 11 - i;
        if idx < row {
            return (grid[i as usize], grid[(i + 1 + idx) as usize]);
        }
        idx -= row;
    }
    unreachable!("phone id out of range")
}

struct SegmentPlan {
    unit: u32,
    frames: u32,
}

/// Render planned segments to audio and an exact alignment.
fn render(
    plan: &[SegmentPlan],
    speaker_id: u32,
    amp: f64,
    rng: &mut ChaCha8Rng,
) -> (AudioBuffer, Vec<AlignSeg>) {
    let pitch = speaker_pitch(speaker_id);
    let total_frames: u32 = plan.iter().map(|s| s.frames).sum();
    let total_samples = total_frames as usize * FRAME_SAMPLES + WINDOW_TAIL;
    let mut samples = vec![0.0f64; total_samples];
    let mut alignment = Vec::with_capacity(plan.len());
    let mut frame = 0u32;
    for seg in plan {
        let start = frame as usize * FRAME_SAMPLES;
        let end_frame = frame + seg.frames;
        // The final segment also fills the window tail.
        let end = if end_frame == total_frames {
            total_samples
        } else {
            end_frame as usize * FRAME_SAMPLES
        };
        render_segment(&mut samples[start..end], seg.unit, pitch, amp, rng);
        alignment.push(AlignSeg { unit: seg.unit, start_frame: frame, end_frame });
        frame = end_frame;
    }
    (AudioBuffer::new(samples), alignment)
}

fn render_segment(out: &mut [f64], unit: u32, pitch: f64, amp: f64, rng: &mut ChaCha8Rng) {
    if unit == SILENCE_ID {
        for s in out.iter_mut() {
            *s = 5e-4 * gauss(rng);
        }
        return;
    }
    let (f1, f2) = phone_components(unit);
    let (f1, f2) = (f1 * pitch, f2 * pitch);
    let p1: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let p2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let n = out.len();
    let ramp = (FRAME_SAMPLES).min(n / 4).max(1);
    let w1 = std::f64::consts::TAU * f1 / SAMPLE_RATE as f64;
    let w2 = std::f64::consts::TAU * f2 / SAMPLE_RATE as f64;
    for (i, s) in out.iter_mut().enumerate() {
        let env = if i < ramp {
            0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos()
        } else if i >= n - ramp {
            0.5 - 0.5 * (std::f64::consts::PI * (n - 1 - i) as f64 / ramp as f64).cos()
        } else {
            1.0
        };
        *s = amp * env * ((w1 * i as f64 + p1).sin() + (w2 * i as f64 + p2).sin());
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

fn plan_positive(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> (Vec<SegmentPlan>, usize) {
    let ww = wake_word_phones(spec.kind);
    let mut plan = Vec::new();
    plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(25..=45) });
    for &p in ww {
        plan.push(SegmentPlan { unit: p, frames: rng.gen_range(10..=15) });
    }
    let ww_last = plan.len() - 1;
    match spec.kind {
        DatasetKind::Snips => {
            let (lo, hi) = spec.trailing_silence_frames;
            plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(lo..=hi) });
        }
        DatasetKind::Fluency => {
            // Short pause fully absorbed by the final wake-word state, then a request.
            plan.push(SegmentPlan { unit: SILENCE_ID, frames: 12 });
            let n_req = rng.gen_range(4..=8);
            for _ in 0..n_req {
                plan.push(SegmentPlan { unit: random_speech_phone(rng), frames: rng.gen_range(8..=18) });
            }
            let (lo, hi) = spec.trailing_silence_frames;
            plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(lo.min(60)..=hi.min(100)) });
        }
    }
    (plan, ww_last)
}

fn random_speech_phone(rng: &mut ChaCha8Rng) -> u32 {
    rng.gen_range(1..=NUM_PHONES)
}

fn plan_negative(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Vec<SegmentPlan> {
    let ww = wake_word_phones(spec.kind);
    let n_speech = rng.gen_range(6..=13);
    let mut phones: Vec<u32> = (0..n_speech).map(|_| random_speech_phone(rng)).collect();
    if rng.gen_bool(spec.confusable_rate) {
        // Embed a near-miss. The end-positioned prefixes (wake-word start
        // followed directly by silence) are the hard negatives that teach the
        // denominator to demand the complete phone sequence.
        let (insert, at_end): (Vec<u32>, bool) = match rng.gen_range(0..6) {
            0 => (ww[..2].to_vec(), false),
            1 => (ww[..ww.len() - 1].to_vec(), false),
            2 | 3 => (ww[..ww.len() - rng.gen_range(1..=2)].to_vec(), true),
            4 => (ww[ww.len() - 2..].to_vec(), false),
            _ => {
                let mut v = ww.to_vec();
                v.swap(0, ww.len() - 1);
                (v, false)
            }
        };
        let at = if at_end { phones.len() } else { rng.gen_range(0..phones.len()) };
        for (k, &p) in insert.iter().enumerate() {
            phones.insert(at + k, p);
        }
    }
    scrub_wake_word(&mut phones, ww, rng);

    let mut plan = Vec::new();
    plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(20..=40) });
    let internal_sil = spec.kind == DatasetKind::Fluency && rng.gen_bool(0.3);
    let split = if internal_sil { phones.len() / 2 } else { usize::MAX };
    for (i, &p) in phones.iter().enumerate() {
        if i == split && i > 0 {
            plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(15..=30) });
        }
        plan.push(SegmentPlan { unit: p, frames: rng.gen_range(8..=20) });
    }
    plan.push(SegmentPlan { unit: SILENCE_ID, frames: rng.gen_range(30..=60) });
    plan
}

/// Negatives must never contain the full wake-word sequence consecutively.
fn scrub_wake_word(phones: &mut [u32], ww: &[u32], rng: &mut ChaCha8Rng) {
    loop {
        let hit = phones.windows(ww.len()).position(|w| w == ww);
        match hit {
            None => return,
            Some(at) => {
                let mut replacement = random_speech_phone(rng);
                while replacement == ww[1] {
                    replacement = random_speech_phone(rng);
                }
                phones[at + 1] = replacement;
            }
        }
    }
}

/// Generate a corpus: `num_positives` wake-word utterances followed by enough
/// negatives to cover `negative_hours`. Deterministic for a fixed spec.
pub fn synth_corpus(spec: &CorpusSpec) -> Vec<SynthUtterance> {
    let mut out = Vec::new();
    let speakers: Vec<u32> =
        (spec.speaker_base..spec.speaker_base + spec.num_speakers).collect();
    assert!(!speakers.is_empty(), "corpus needs at least one speaker");

    for i in 0..spec.num_positives {
        let speaker = speakers[(i / spec.positives_per_speaker.max(1)) % speakers.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, "pos", i as u64));
        let (plan, ww_last) = plan_positive(spec, &mut rng);
        let amp = 0.22 * rng.gen_range(0.85..1.15);
        let (audio, alignment) = render(&plan, speaker, amp, &mut rng);
        let ww_end_s = alignment[ww_last].end_frame as f64 * FRAME_SAMPLES as f64
            / SAMPLE_RATE as f64;
        out.push(SynthUtterance {
            id: format!("pos_{i:06}"),
            audio,
            kind: UttKind::Pos,
            alignment,
            speaker_id: speaker,
            ww_end_s: Some(ww_end_s),
        });
    }

    let target_s = spec.negative_hours * 3600.0;
    let mut banked_s = 0.0;
    let mut i = 0usize;
    while banked_s < target_s {
        let speaker = speakers[i % speakers.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, "neg", i as u64));
        let plan = plan_negative(spec, &mut rng);
        let amp = 0.22 * rng.gen_range(0.85..1.15);
        let (audio, alignment) = render(&plan, speaker, amp, &mut rng);
        banked_s += audio.duration_s();
        out.push(SynthUtterance {
            id: format!("neg_{i:06}"),
            audio,
            kind: UttKind::Neg,
            alignment,
            speaker_id: speaker,
            ww_end_s: None,
        });
        i += 1;
    }
    out
}

/// Per-frame senone labels (unit ids) for the acoustic-model task.
pub fn frame_senones(utt: &SynthUtterance) -> Vec<u32> {
    let t = utt.num_frames();
    let mut labels = vec![SILENCE_ID; t];
    for seg in &utt.alignment {
        for f in seg.start_frame..seg.end_frame {
            labels[f as usize] = seg.unit;
        }
    }
    labels
}
