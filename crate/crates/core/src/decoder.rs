//! Streaming Viterbi wake-word detection over the cyclic decoding graph.
//!
//! Token passing runs once per output frame. Each token tracks the most
//! recent frame at which its best path crossed a wake-word completion arc.
//! An event fires at the first frame where the best token with a fresh
//! completion beats the best token without one by at least the threshold
//! margin; a refractory window then suppresses duplicates and completion
//! bookkeeping resets. Scores are renormalized by the frame maximum so
//! unbounded streams stay finite.
//!
//! A recording mode never emits: it logs the margin trajectory of every
//! completion episode, which the evaluation harness sweeps to tune the
//! operating point and to reconstruct events at any threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::DecodingGraph;
use crate::numerator::POST_WW_OUT_FRAMES;

/// Seconds covered by one output frame (3 input frames at 10 ms).
pub const OUT_FRAME_S: f64 = 0.03;

/// Margins stay finite even with an infinite beam.
pub const MARGIN_CAP: f64 = 1e9;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecoderConfig {
    /// Margin threshold for triggering.
    pub threshold: f64,
    /// Beam width in log units relative to the frame best; `inf` disables.
    pub beam: f64,
    /// Feature frames per push in chunked decoding.
    pub chunk_frames: usize,
    /// Post-trigger suppression window; also the completion validity window.
    /// Must cover the post-wake-word silence span.
    pub refractory_frames: u32,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self { threshold: 4.0, beam: 14.0, chunk_frames: 32, refractory_frames: 33 }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam <= 0.0 {
            return Err(Error::ShapeMismatch("beam must be positive".into()));
        }
        if self.refractory_frames < POST_WW_OUT_FRAMES {
            return Err(Error::ShapeMismatch(
                "refractory window must cover the post-wake-word silence span".into(),
            ));
        }
        Ok(())
    }
}

/// One wake-word trigger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub trigger_time_s: f64,
    pub score_margin: f64,
    pub ww_end_estimate_s: f64,
    /// Output frame index at which the trigger fired.
    pub trigger_frame: u32,
}

/// Margin trajectory of one completion episode (recording mode).
#[derive(Debug, Clone)]
pub struct Episode {
    pub completion_frame: u32,
    pub peak_margin: f64,
    /// `(frame, margin)` samples at frames where this episode led.
    pub samples: Vec<(u32, f64)>,
}

impl Episode {
    pub fn ww_end_estimate_s(&self) -> f64 {
        (self.completion_frame.saturating_sub(POST_WW_OUT_FRAMES)) as f64 * OUT_FRAME_S
    }
}

/// Per-state tokens are kept in two classes so the non-completing background
/// survives recombination against a stronger completing hypothesis: Viterbi
/// over a single token per state would let one wake-word claim annex every
/// good state and leave no meaningful competitor to measure the margin
/// against.
#[derive(Debug, Clone, Copy, Default)]
struct StateTokens {
    /// Best path whose most recent wake-word completion is still fresh,
    /// with the completion frame.
    completing: Option<(f64, u32)>,
    /// Best path with no fresh completion claim.
    background: Option<f64>,
}

/// Streaming decoder state over log-prob frames.
pub struct DecoderState<'a> {
    graph: &'a DecodingGraph,
    cfg: DecoderConfig,
    tokens: Vec<StateTokens>,
    next: Vec<StateTokens>,
    pub frames_consumed: u32,
    last_emit: Option<u32>,
    events: Vec<DetectionEvent>,
    /// When recording, margins are logged instead of emitting events.
    recording: bool,
    episodes: Vec<Episode>,
    episode_index: std::collections::HashMap<u32, usize>,
    finished: bool,
}

impl<'a> DecoderState<'a> {
    pub fn new(graph: &'a DecodingGraph, cfg: DecoderConfig) -> Result<Self> {
        cfg.validate()?;
        let n = graph.graph.num_states as usize;
        let mut tokens = vec![StateTokens::default(); n];
        tokens[graph.graph.start as usize].background = Some(0.0);
        Ok(Self {
            graph,
            cfg,
            tokens,
            next: vec![StateTokens::default(); n],
            frames_consumed: 0,
            last_emit: None,
            events: Vec::new(),
            recording: false,
            episodes: Vec::new(),
            episode_index: std::collections::HashMap::new(),
            finished: false,
        })
    }

    pub fn recording(graph: &'a DecodingGraph, mut cfg: DecoderConfig) -> Result<Self> {
        cfg.threshold = f64::INFINITY;
        let mut s = Self::new(graph, cfg)?;
        s.recording = true;
        Ok(s)
    }

    pub fn events(&self) -> &[DetectionEvent] {
        &self.events
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    /// Consume one output frame of log-probabilities.
    pub fn push_frame(&mut self, logp_row: &[f64]) -> Result<()> {
        debug_assert!(!self.finished, "push after finish");
        let t = self.frames_consumed;
        let arcs = &self.graph.graph.arcs;
        for slot in self.next.iter_mut() {
            *slot = StateTokens::default();
        }
        let mut relax_completing = |slot: &mut StateTokens, score: f64, c: u32| {
            if slot.completing.map(|(s, _)| score > s).unwrap_or(true) {
                slot.completing = Some((score, c));
            }
        };
        for (i, arc) in arcs.iter().enumerate() {
            let src = &self.tokens[arc.src as usize];
            let pdf = arc.label as usize;
            if pdf >= logp_row.len() {
                return Err(Error::ShapeMismatch(format!(
                    "pdf {pdf} outside log-prob row of {}",
                    logp_row.len()
                )));
            }
            let step = arc.log_weight + logp_row[pdf];
            let is_completion = self.graph.completion[i];
            let is_ww_entry = self.graph.ww_entry[i];
            if let Some((s, c)) = src.completing {
                let score = s + step;
                let slot = &mut self.next[arc.dst as usize];
                if is_completion {
                    relax_completing(slot, score, t);
                } else if is_ww_entry {
                    // starting a new wake word drops the stale claim
                    slot.background = Some(slot.background.map_or(score, |b| b.max(score)));
                } else if t.saturating_sub(c) < self.cfg.refractory_frames {
                    relax_completing(slot, score, c);
                } else {
                    // claim expired mid-stream
                    slot.background = Some(slot.background.map_or(score, |b| b.max(score)));
                }
            }
            if let Some(s) = src.background {
                let score = s + step;
                let slot = &mut self.next[arc.dst as usize];
                if is_completion {
                    relax_completing(slot, score, t);
                } else {
                    slot.background = Some(slot.background.map_or(score, |b| b.max(score)));
                }
            }
        }
        // renormalize by the global best and prune within each class
        let mut best = f64::NEG_INFINITY;
        for st in &self.next {
            if let Some((s, _)) = st.completing {
                best = best.max(s);
            }
            if let Some(s) = st.background {
                best = best.max(s);
            }
        }
        if best == f64::NEG_INFINITY {
            return Err(Error::NoPath(self.frames_consumed as usize + 1));
        }
        for st in self.next.iter_mut() {
            if let Some((s, c)) = st.completing {
                let s = s - best;
                st.completing = (s >= -self.cfg.beam).then_some((s, c));
            }
            if let Some(s) = st.background {
                let s = s - best;
                st.background = (s >= -self.cfg.beam).then_some(s);
            }
        }
        std::mem::swap(&mut self.tokens, &mut self.next);
        self.frames_consumed += 1;
        self.evaluate_margin(false);
        Ok(())
    }

    /// Margin between the best completing token and the best background
    /// token. Background tokens inside wake-word states are "wake word in
    /// progress", not competing background, and do not count. `final_only`
    /// restricts both sides to final states.
    fn margin(&self, _now: u32, final_only: bool) -> Option<(f64, u32)> {
        let mut best_completing: Option<(f64, u32)> = None;
        let mut best_other = f64::NEG_INFINITY;
        for (state, st) in self.tokens.iter().enumerate() {
            let final_w = match (final_only, self.graph.graph.is_final(state as u32)) {
                (false, _) => 0.0,
                (true, Some(w)) => w,
                (true, None) => continue,
            };
            if let Some((s, c)) = st.completing {
                let score = s + final_w;
                if best_completing.map(|(b, _)| score > b).unwrap_or(true) {
                    best_completing = Some((score, c));
                }
            }
            if let Some(s) = st.background {
                if !self.graph.ww_state[state] {
                    best_other = best_other.max(s + final_w);
                }
            }
        }
        best_completing.map(|(s, c)| ((s - best_other).min(MARGIN_CAP), c))
    }

    fn evaluate_margin(&mut self, final_only: bool) {
        let now = self.frames_consumed - 1; // frame just consumed
        let Some((margin, completion_frame)) = self.margin(now, final_only) else {
            return;
        };
        if self.recording {
            match self.episode_index.get(&completion_frame) {
                Some(&i) => {
                    let ep = &mut self.episodes[i];
                    ep.peak_margin = ep.peak_margin.max(margin);
                    ep.samples.push((now, margin));
                }
                None => {
                    self.episode_index.insert(completion_frame, self.episodes.len());
                    self.episodes.push(Episode {
                        completion_frame,
                        peak_margin: margin,
                        samples: vec![(now, margin)],
                    });
                }
            }
            return;
        }
        let suppressed = self
            .last_emit
            .map(|t| now < t + self.cfg.refractory_frames)
            .unwrap_or(false);
        if margin >= self.cfg.threshold && !suppressed {
            self.events.push(DetectionEvent {
                trigger_time_s: now as f64 * OUT_FRAME_S,
                score_margin: margin,
                ww_end_estimate_s: (completion_frame.saturating_sub(POST_WW_OUT_FRAMES)) as f64
                    * OUT_FRAME_S,
                trigger_frame: now,
            });
            self.last_emit = Some(now);
            // the completion claims are consumed; the paths remain
            for st in self.tokens.iter_mut() {
                if let Some((s, _)) = st.completing.take() {
                    st.background = Some(st.background.map_or(s, |b| b.max(s)));
                }
            }
        }
    }

    /// End of stream: one more margin evaluation restricted to final states.
    pub fn finish(&mut self) {
        if self.finished || self.frames_consumed == 0 {
            self.finished = true;
            return;
        }
        self.finished = true;
        self.evaluate_margin(true);
    }

    /// Best path score over final states relative to the running best (the
    /// renormalization offset cancels), for comparison against exhaustive
    /// search in tests.
    pub fn best_final_relative_score(&self) -> Option<f64> {
        self.tokens
            .iter()
            .enumerate()
            .filter_map(|(s, st)| {
                let w = self.graph.graph.is_final(s as u32)?;
                let best = match (st.completing, st.background) {
                    (Some((a, _)), Some(b)) => a.max(b),
                    (Some((a, _)), None) => a,
                    (None, Some(b)) => b,
                    (None, None) => return None,
                };
                Some(best + w)
            })
            .fold(None, |acc: Option<f64>, s| Some(acc.map_or(s, |a| a.max(s))))
    }
}

/// Reconstruct the event list a live decode at `threshold` would produce from
/// recorded episodes: each episode triggers at its first sample reaching the
/// threshold, subject to the refractory spacing.
pub fn events_from_episodes(
    episodes: &[Episode],
    threshold: f64,
    refractory_frames: u32,
) -> Vec<DetectionEvent> {
    let mut candidates: Vec<(u32, f64, &Episode)> = episodes
        .iter()
        .filter_map(|ep| {
            ep.samples
                .iter()
                .find(|(_, m)| *m >= threshold)
                .map(|&(frame, margin)| (frame, margin, ep))
        })
        .collect();
    candidates.sort_by_key(|(frame, _, ep)| (*frame, ep.completion_frame));
    let mut events = Vec::new();
    let mut last_emit: Option<u32> = None;
    for (frame, margin, ep) in candidates {
        if let Some(t) = last_emit {
            if frame < t + refractory_frames {
                continue;
            }
        }
        events.push(DetectionEvent {
            trigger_time_s: frame as f64 * OUT_FRAME_S,
            score_margin: margin,
            ww_end_estimate_s: ep.ww_end_estimate_s(),
            trigger_frame: frame,
        });
        last_emit = Some(frame);
    }
    events
}

/// Latency of matched events against a reference wake-word end, plus the
/// look-ahead term from future input frames, reported separately.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Latency {
    pub decode_s: f64,
    pub lookahead_s: f64,
}

impl Latency {
    /// Table-style rendering: `0.13+0.10 s`.
    pub fn render(&self) -> String {
        format!("{:.2}+{:.2} s", self.decode_s, self.lookahead_s)
    }
}

/// Signed trigger delay of an event against the true wake-word end.
pub fn measure_latency(event: &DetectionEvent, ref_ww_end_s: f64, right_context: usize) -> Latency {
    Latency {
        decode_s: event.trigger_time_s - ref_ww_end_s,
        lookahead_s: right_context as f64 * 0.01,
    }
}

/// Nearest-rank percentile (p in [0, 100]) of unsorted values.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}
