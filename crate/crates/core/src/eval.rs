//! Operating-point tuning at a fixed false-positive rate, FNR scoring, DET
//! sweeps, dataset subsetting, and eval-concat construction.

use serde::{Deserialize, Serialize};

use crate::decoder::{events_from_episodes, percentile_nearest_rank, DetectionEvent, Episode};
use crate::error::{Error, Result};
use crate::manifest::ManifestRecord;
use crate::synth::{AlignSeg, SynthUtterance};

/// Detection matching window: an event counts for a positive when its
/// wake-word end estimate lands within this many seconds of the reference.
pub const MATCH_WINDOW_S: f64 = 0.5;

/// Recorded decode of one positive stream.
#[derive(Debug, Clone)]
pub struct PosStream {
    pub episodes: Vec<Episode>,
    pub ref_ww_end_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// False negative rate (percent) at the tuned threshold.
    pub fnr_percent: f64,
    /// `(fp_per_hour, fnr_percent)` pairs, increasing in fp/h.
    pub det_points: Vec<(f64, f64)>,
    pub latency_p90_s: Option<f64>,
    pub lookahead_s: f64,
    pub threshold: f64,
    /// Training-set size this model was built on.
    pub dataset_size: usize,
    pub num_positives: usize,
    pub num_detected: usize,
}

/// Result of threshold tuning.
#[derive(Debug, Clone, Copy)]
pub struct TunedThreshold {
    pub threshold: f64,
    pub allowed_fp: usize,
    /// Set when the dev negatives produced no completion episodes at all.
    pub degenerate: bool,
}

fn count_events_at(
    neg_streams: &[Vec<Episode>],
    threshold: f64,
    refractory_frames: u32,
) -> usize {
    neg_streams
        .iter()
        .map(|eps| events_from_episodes(eps, threshold, refractory_frames).len())
        .sum()
}

/// Smallest threshold keeping the event count on the negative dev audio at or
/// below `floor(hours * target_fph)`, found by sweeping recorded margins.
pub fn tune_threshold(
    neg_streams: &[Vec<Episode>],
    hours: f64,
    target_fph: f64,
    refractory_frames: u32,
) -> Result<TunedThreshold> {
    if hours <= 0.0 {
        return Err(Error::NoDevAudio);
    }
    let allowed = (hours * target_fph).floor() as usize;
    let mut margins: Vec<f64> = neg_streams
        .iter()
        .flatten()
        .flat_map(|e| e.samples.iter().map(|&(_, m)| m))
        .filter(|m| m.is_finite())
        .collect();
    if margins.is_empty() {
        log::warn!("dev negatives produced no completion episodes; threshold is -inf");
        return Ok(TunedThreshold { threshold: f64::NEG_INFINITY, allowed_fp: allowed, degenerate: true });
    }
    margins.sort_by(|a, b| a.partial_cmp(b).unwrap());
    margins.dedup();
    if count_events_at(neg_streams, f64::NEG_INFINITY, refractory_frames) <= allowed {
        return Ok(TunedThreshold { threshold: f64::NEG_INFINITY, allowed_fp: allowed, degenerate: false });
    }
    // Candidates: each observed margin and the value just above it.
    for &m in &margins {
        if count_events_at(neg_streams, m, refractory_frames) <= allowed {
            return Ok(TunedThreshold { threshold: m, allowed_fp: allowed, degenerate: false });
        }
        let up = next_after(m);
        if count_events_at(neg_streams, up, refractory_frames) <= allowed {
            return Ok(TunedThreshold { threshold: up, allowed_fp: allowed, degenerate: false });
        }
    }
    unreachable!("a threshold above every margin admits no events");
}

fn next_after(v: f64) -> f64 {
    let bits = v.to_bits();
    if v >= 0.0 {
        f64::from_bits(bits + 1)
    } else {
        f64::from_bits(bits - 1)
    }
}

/// Events a positive stream yields at a threshold, filtered to those matching
/// the reference wake-word end.
pub fn matched_events(
    stream: &PosStream,
    threshold: f64,
    refractory_frames: u32,
) -> Vec<DetectionEvent> {
    events_from_episodes(&stream.episodes, threshold, refractory_frames)
        .into_iter()
        .filter(|e| (e.ww_end_estimate_s - stream.ref_ww_end_s).abs() <= MATCH_WINDOW_S)
        .collect()
}

/// Highest margin at which this positive would still be detected (its
/// "detection margin"): the best sample among match-eligible episodes.
fn detection_margin(stream: &PosStream) -> Option<f64> {
    stream
        .episodes
        .iter()
        .filter(|e| (e.ww_end_estimate_s() - stream.ref_ww_end_s).abs() <= MATCH_WINDOW_S)
        .map(|e| e.peak_margin)
        .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |a| a.max(m))))
}

/// Score positives at a tuned threshold; optionally sweep a DET curve against
/// recorded negative episodes.
pub fn score(
    positives: &[PosStream],
    threshold: f64,
    refractory_frames: u32,
    right_context: usize,
    negatives: Option<(&[Vec<Episode>], f64)>,
    dataset_size: usize,
) -> Result<EvalReport> {
    if positives.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    let mut detected = 0usize;
    let mut latencies = Vec::new();
    for p in positives {
        let events = matched_events(p, threshold, refractory_frames);
        if let Some(first) = events.first() {
            detected += 1;
            latencies.push(first.trigger_time_s - p.ref_ww_end_s);
        }
    }
    let total = positives.len();
    let fnr_percent = 100.0 * (total - detected) as f64 / total as f64;

    // DET sweep from one sorted margin list per side.
    let mut det_points = Vec::new();
    if let Some((neg_streams, hours)) = negatives {
        let det_margins: Vec<Option<f64>> = positives.iter().map(detection_margin).collect();
        let mut grid: Vec<f64> = neg_streams
            .iter()
            .flatten()
            .map(|e| e.peak_margin)
            .chain(det_margins.iter().flatten().copied())
            .chain([threshold])
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        grid.dedup();
        for &th in grid.iter().rev() {
            let fp: usize = neg_streams
                .iter()
                .map(|eps| eps.iter().filter(|e| e.peak_margin >= th).count())
                .sum();
            let miss = det_margins.iter().filter(|m| m.map(|v| v < th).unwrap_or(true)).count();
            det_points.push((fp as f64 / hours, 100.0 * miss as f64 / total as f64));
        }
        // increasing fp/h; fnr non-increasing by construction
        det_points.dedup();
    }

    Ok(EvalReport {
        fnr_percent,
        det_points,
        latency_p90_s: percentile_nearest_rank(&latencies, 90.0),
        lookahead_s: right_context as f64 * 0.01,
        threshold,
        dataset_size,
        num_positives: total,
        num_detected: detected,
    })
}

/// FNR (percent) computed from the DET margin list at a threshold; used for
/// internal consistency checks against the event-based scalar.
pub fn fnr_from_margins(positives: &[PosStream], threshold: f64) -> f64 {
    let total = positives.len();
    let miss = positives
        .iter()
        .filter(|p| detection_margin(p).map(|m| m < threshold).unwrap_or(true))
        .count();
    100.0 * miss as f64 / total as f64
}

/// Training subsets: the first `k` positives in stable order plus every
/// negative record.
pub fn make_subsets(
    records: &[ManifestRecord],
    sizes: &[usize],
) -> Result<Vec<Vec<ManifestRecord>>> {
    let positives: Vec<&ManifestRecord> = records.iter().filter(|r| r.is_positive()).collect();
    let negatives: Vec<&ManifestRecord> = records.iter().filter(|r| !r.is_positive()).collect();
    let mut out = Vec::with_capacity(sizes.len());
    for &k in sizes {
        if k > positives.len() {
            return Err(Error::SubsetTooLarge { requested: k, available: positives.len() });
        }
        let mut subset: Vec<ManifestRecord> =
            positives[..k].iter().map(|r| (*r).clone()).collect();
        subset.extend(negatives.iter().map(|r| (*r).clone()));
        out.push(subset);
    }
    Ok(out)
}

/// Concatenate a positive with a same-speaker negative; the reference
/// wake-word end is unchanged.
pub fn concat_utterances(pos: &SynthUtterance, neg: &SynthUtterance) -> SynthUtterance {
    let mut samples = pos.audio.samples.clone();
    samples.extend_from_slice(&neg.audio.samples);
    let offset = pos.num_frames() as u32;
    let mut alignment = pos.alignment.clone();
    // the positive's window tail overlaps the negative's first frames; keep
    // segment bookkeeping contiguous by shifting the negative's segments
    alignment.extend(neg.alignment.iter().map(|s| AlignSeg {
        unit: s.unit,
        start_frame: s.start_frame + offset,
        end_frame: s.end_frame + offset,
    }));
    SynthUtterance {
        id: format!("{}+{}", pos.id, neg.id),
        audio: crate::audio::AudioBuffer::new(samples),
        kind: pos.kind,
        alignment,
        speaker_id: pos.speaker_id,
        ww_end_s: pos.ww_end_s,
    }
}

/// Pair each positive with a same-speaker negative, cycling per speaker.
/// Positives whose speaker has no negatives are skipped with a warning.
pub fn make_eval_concat(
    positives: &[SynthUtterance],
    negatives: &[SynthUtterance],
) -> (Vec<SynthUtterance>, usize) {
    use std::collections::HashMap;
    let mut by_speaker: HashMap<u32, Vec<&SynthUtterance>> = HashMap::new();
    for n in negatives {
        by_speaker.entry(n.speaker_id).or_default().push(n);
    }
    let mut used: HashMap<u32, usize> = HashMap::new();
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for p in positives {
        match by_speaker.get(&p.speaker_id) {
            Some(negs) if !negs.is_empty() => {
                let idx = used.entry(p.speaker_id).or_insert(0);
                let neg = negs[*idx % negs.len()];
                *idx += 1;
                out.push(concat_utterances(p, neg));
            }
            _ => {
                skipped += 1;
                log::warn!("speaker {} has no negatives; skipping {}", p.speaker_id, p.id);
            }
        }
    }
    (out, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::UttKind;

    fn ep(completion: u32, peak: f64) -> Episode {
        Episode { completion_frame: completion, peak_margin: peak, samples: vec![(completion + 1, peak)] }
    }

    #[test]
    fn ten_hours_allows_one_false_positive() {
        let streams = vec![vec![ep(10, 5.0)], vec![ep(20, 3.0)], vec![ep(30, 1.0)]];
        let tuned = tune_threshold(&streams, 10.0, 0.1, 33).unwrap();
        assert_eq!(tuned.allowed_fp, 1);
        // keep only the strongest episode
        let count = count_events_at(&streams, tuned.threshold, 33);
        assert!(count <= 1);
        assert!(tuned.threshold > 3.0 && tuned.threshold <= 5.0);
    }

    #[test]
    fn snips_eval_hours_allow_two() {
        let streams = vec![vec![ep(10, 5.0), ep(200, 4.0)], vec![ep(20, 3.0)]];
        let tuned = tune_threshold(&streams, 23.19, 0.1, 33).unwrap();
        assert_eq!(tuned.allowed_fp, 2);
        assert!(count_events_at(&streams, tuned.threshold, 33) <= 2);
        // two allowed: the pair of strongest margins survives
        assert!(tuned.threshold <= 4.0);
    }

    #[test]
    fn zero_hours_errors_and_zero_episodes_warn() {
        assert!(matches!(tune_threshold(&[], 0.0, 0.1, 33), Err(Error::NoDevAudio)));
        let tuned = tune_threshold(&[vec![], vec![]], 5.0, 0.1, 33).unwrap();
        assert_eq!(tuned.threshold, f64::NEG_INFINITY);
        assert!(tuned.degenerate);
    }

    fn pos(peak: f64, est_err_s: f64) -> PosStream {
        // completion frame 50 -> estimate at (50-4)*0.03; shift the reference
        let e = ep(50, peak);
        let est = e.ww_end_estimate_s();
        PosStream { episodes: vec![e], ref_ww_end_s: est - est_err_s }
    }

    #[test]
    fn fnr_arithmetic() {
        let mut streams: Vec<PosStream> = (0..97).map(|_| pos(8.0, 0.0)).collect();
        streams.extend((0..3).map(|_| pos(1.0, 0.0))); // below threshold
        let report = score(&streams, 4.0, 33, 10, None, 100).unwrap();
        assert!((report.fnr_percent - 3.0).abs() < 1e-12);
        assert_eq!(report.num_detected, 97);
        assert!((report.lookahead_s - 0.10).abs() < 1e-12);
    }

    #[test]
    fn perfect_model_scores_zero_fnr() {
        let streams: Vec<PosStream> = (0..10).map(|_| pos(9.0, 0.1)).collect();
        let report = score(&streams, 4.0, 33, 10, None, 10).unwrap();
        assert_eq!(report.fnr_percent, 0.0);
    }

    #[test]
    fn mismatched_estimate_counts_as_miss() {
        let streams = vec![pos(9.0, 0.8)]; // estimate off by 0.8 s > window
        let report = score(&streams, 4.0, 33, 10, None, 1).unwrap();
        assert_eq!(report.fnr_percent, 100.0);
    }

    #[test]
    fn det_is_monotone_and_consistent_at_threshold() {
        let positives: Vec<PosStream> =
            (0..20).map(|i| pos(if i < 15 { 6.0 + i as f64 * 0.1 } else { 1.0 }, 0.0)).collect();
        let negatives: Vec<Vec<Episode>> =
            (0..30).map(|i| vec![ep(10, -1.0 + 0.2 * (i % 10) as f64)]).collect();
        let th = 2.5;
        let report = score(&positives, th, 33, 10, Some((&negatives, 12.0)), 20).unwrap();
        assert!(!report.det_points.is_empty());
        for w in report.det_points.windows(2) {
            assert!(w[1].0 >= w[0].0, "fp/h not increasing: {:?}", w);
            assert!(w[1].1 <= w[0].1, "fnr increases with fp/h: {:?}", w);
        }
        // the scalar matches the margin-list FNR at the tuned threshold
        assert_eq!(report.fnr_percent, fnr_from_margins(&positives, th));
        let pt = report
            .det_points
            .iter()
            .find(|(_, _)| true)
            .map(|_| {
                report
                    .det_points
                    .iter()
                    .map(|&(f, n)| (f, n))
                    .find(|&(_, n)| (n - report.fnr_percent).abs() < 1e-9)
            })
            .flatten();
        assert!(pt.is_some(), "no DET point matches the scalar FNR");
    }

    fn rec(id: &str, kind: UttKind, speaker: u32) -> ManifestRecord {
        ManifestRecord {
            id: id.into(),
            wav: format!("{id}.wav"),
            kind,
            speaker,
            align: None,
            ww_end_s: (kind == UttKind::Pos).then_some(1.0),
        }
    }

    #[test]
    fn subsets_are_nested_prefixes_with_all_negatives() {
        let mut records: Vec<ManifestRecord> =
            (0..50).map(|i| rec(&format!("p{i}"), UttKind::Pos, i)).collect();
        records.extend((0..20).map(|i| rec(&format!("n{i}"), UttKind::Neg, i)));
        let subsets = make_subsets(&records, &[10, 30]).unwrap();
        assert_eq!(subsets[0].iter().filter(|r| r.is_positive()).count(), 10);
        assert_eq!(subsets[1].iter().filter(|r| r.is_positive()).count(), 30);
        // nested prefix
        let ids0: Vec<&str> =
            subsets[0].iter().filter(|r| r.is_positive()).map(|r| r.id.as_str()).collect();
        let ids1: Vec<&str> =
            subsets[1].iter().filter(|r| r.is_positive()).map(|r| r.id.as_str()).collect();
        assert_eq!(&ids1[..10], &ids0[..]);
        // negatives identical
        for s in &subsets {
            assert_eq!(s.iter().filter(|r| !r.is_positive()).count(), 20);
        }
        assert!(matches!(
            make_subsets(&records, &[99]),
            Err(Error::SubsetTooLarge { requested: 99, available: 50 })
        ));
    }

    #[test]
    fn concat_preserves_ww_end_and_speaker() {
        use crate::synth::{synth_corpus, CorpusSpec};
        use crate::topology::DatasetKind;
        let mut spec = CorpusSpec::new(DatasetKind::Snips, 5);
        spec.num_positives = 4;
        spec.negative_hours = 0.004;
        spec.num_speakers = 2;
        spec.positives_per_speaker = 2;
        let corpus = synth_corpus(&spec);
        let positives: Vec<SynthUtterance> =
            corpus.iter().filter(|u| u.kind == UttKind::Pos).cloned().collect();
        let negatives: Vec<SynthUtterance> =
            corpus.iter().filter(|u| u.kind == UttKind::Neg).cloned().collect();
        let (concat, skipped) = make_eval_concat(&positives, &negatives);
        assert_eq!(skipped, 0);
        assert_eq!(concat.len(), positives.len());
        for (c, p) in concat.iter().zip(&positives) {
            assert_eq!(c.ww_end_s, p.ww_end_s);
            assert_eq!(c.speaker_id, p.speaker_id);
            assert!(c.audio.len() > p.audio.len());
            // duration adds up
            let neg_len = c.audio.len() - p.audio.len();
            assert!(negatives.iter().any(|n| n.audio.len() == neg_len && n.speaker_id == p.speaker_id));
        }
    }

    #[test]
    fn concat_skips_speakers_without_negatives() {
        use crate::synth::{synth_corpus, CorpusSpec};
        use crate::topology::DatasetKind;
        let mut spec = CorpusSpec::new(DatasetKind::Snips, 6);
        spec.num_positives = 2;
        spec.num_speakers = 1;
        let positives = synth_corpus(&spec);
        let (concat, skipped) = make_eval_concat(&positives, &[]);
        assert!(concat.is_empty());
        assert_eq!(skipped, 2);
    }
}
