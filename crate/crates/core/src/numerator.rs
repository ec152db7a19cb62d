//! Numerator graphs: alignment-free transcript chains and frame-synchronous
//! aligned lattices at the subsampled output rate.

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::grammar::{expand_grammar, Grammar};
use crate::synth::{AlignSeg, SILENCE_ID};
use crate::topology::{DatasetKind, HmmTopology, UnitKind, TRANSITION_LOGP};

/// Network outputs are evaluated once every three input frames.
pub const SUBSAMPLE: usize = 3;
/// The final wake-word state also covers the first 10 input frames of
/// post-wake-word silence: ceil(10/3) output frames.
pub const POST_WW_OUT_FRAMES: u32 = 4;
/// Default slack around aligned state boundaries, in output frames.
pub const DEFAULT_TOLERANCE: u32 = 2;

/// Output frames produced for `t_in` input frames.
pub fn output_frames(t_in: usize) -> usize {
    t_in.div_ceil(SUBSAMPLE)
}

/// Alignment-free numerator: the transcript's unit HMMs chained left-to-right
/// with self-loops kept and skippable silence at the utterance edges.
pub fn build_numerator_free(transcript: &str, topology: &HmmTopology) -> Result<Graph> {
    let units: Vec<UnitKind> = transcript
        .split_whitespace()
        .map(|tok| match tok {
            "WakeWord" => Ok(UnitKind::WakeWord),
            "Speech" => Ok(UnitKind::Speech),
            other => Err(Error::UnknownTranscript(other.to_string())),
        })
        .collect::<Result<_>>()?;
    if units.is_empty() {
        return Err(Error::UnknownTranscript(transcript.to_string()));
    }

    let mut g = Grammar {
        num_nodes: 0,
        start: 0,
        finals: Vec::new(),
        arcs: Vec::new(),
        eps: Vec::new(),
    };
    let mut node = || {
        g.num_nodes += 1;
        g.num_nodes - 1
    };
    let n0 = node();
    let n1 = node();
    g.start = n0;
    g.arcs.push((n0, n1, UnitKind::Silence));
    g.eps.push((n0, n1));
    let mut prev = n1;
    for &u in &units {
        let nx = node();
        g.arcs.push((prev, nx, u));
        prev = nx;
    }
    let nf = node();
    g.arcs.push((prev, nf, UnitKind::Silence));
    g.eps.push((prev, nf));
    g.finals.push(nf);

    let (graph, _) = expand_grammar(&g, topology)?;
    Ok(graph)
}

/// Transcript for an utterance kind under a dataset's convention.
pub fn transcript_for(kind: DatasetKind, positive: bool) -> &'static str {
    match (kind, positive) {
        (DatasetKind::Snips, true) => "WakeWord",
        (DatasetKind::Fluency, true) => "WakeWord Speech",
        (_, false) => "Speech",
    }
}

/// Unit spans at the output frame rate, tiling `[0, t_out)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentSpec {
    pub spans: Vec<(UnitKind, u32, u32)>,
    pub t_out: u32,
}

impl AlignmentSpec {
    pub fn validate(&self) -> Result<()> {
        let mut at = 0u32;
        for &(_, s, e) in &self.spans {
            if s != at || e <= s {
                return Err(Error::BadAlignment(format!(
                    "spans must tile [0, {}): found [{s}, {e}) at {at}",
                    self.t_out
                )));
            }
            at = e;
        }
        if at != self.t_out {
            return Err(Error::BadAlignment(format!("spans end at {at}, expected {}", self.t_out)));
        }
        Ok(())
    }

    /// End of the wake-word span, if present.
    pub fn ww_end(&self) -> Option<u32> {
        self.spans.iter().find(|(u, _, _)| *u == UnitKind::WakeWord).map(|&(_, _, e)| e)
    }
}

/// Collapse a phone-level alignment into unit spans at the input frame rate.
/// Consecutive wake-word phones in order become one WakeWord span; any other
/// phone run becomes Speech; unit 0 is Silence.
pub fn unit_spans_from_alignment(
    alignment: &[AlignSeg],
    ww_phones: &[u32],
) -> Vec<(UnitKind, u32, u32)> {
    let mut spans: Vec<(UnitKind, u32, u32)> = Vec::new();
    let mut i = 0;
    while i < alignment.len() {
        let seg = alignment[i];
        if seg.unit == SILENCE_ID {
            spans.push((UnitKind::Silence, seg.start_frame, seg.end_frame));
            i += 1;
            continue;
        }
        // Wake-word run?
        let is_ww = i + ww_phones.len() <= alignment.len()
            && alignment[i..i + ww_phones.len()]
                .iter()
                .zip(ww_phones)
                .all(|(s, &p)| s.unit == p);
        if is_ww {
            let end = alignment[i + ww_phones.len() - 1].end_frame;
            spans.push((UnitKind::WakeWord, seg.start_frame, end));
            i += ww_phones.len();
        } else {
            // Merge the maximal run of generic phones.
            let start = seg.start_frame;
            let mut end = seg.end_frame;
            i += 1;
            while i < alignment.len() && alignment[i].unit != SILENCE_ID {
                let again_ww = i + ww_phones.len() <= alignment.len()
                    && alignment[i..i + ww_phones.len()]
                        .iter()
                        .zip(ww_phones)
                        .all(|(s, &p)| s.unit == p);
                if again_ww {
                    break;
                }
                end = alignment[i].end_frame;
                i += 1;
            }
            spans.push((UnitKind::Speech, start, end));
        }
    }
    // Merge adjacent spans of the same unit kind.
    let mut merged: Vec<(UnitKind, u32, u32)> = Vec::new();
    for span in spans {
        match merged.last_mut() {
            Some(last) if last.0 == span.0 && last.2 == span.1 => last.2 = span.2,
            _ => merged.push(span),
        }
    }
    merged
}

/// Convert input-rate unit spans to the output rate. Output frame `k` reads
/// input frame `3k`, so a span `[a, b)` maps to `[ceil(a/3), ceil(b/3))`.
/// Spans that collapse to zero output frames are absorbed by their successor.
pub fn to_output_spans(spans: &[(UnitKind, u32, u32)], t_in: usize) -> Result<AlignmentSpec> {
    let t_out = output_frames(t_in) as u32;
    let up = |x: u32| x.div_ceil(SUBSAMPLE as u32);
    let mut out: Vec<(UnitKind, u32, u32)> = Vec::new();
    for &(u, a, b) in spans {
        let (oa, ob) = (up(a), up(b).min(t_out));
        if ob <= oa {
            continue;
        }
        match out.last_mut() {
            Some(last) if last.0 == u && last.2 == oa => last.2 = ob,
            _ => out.push((u, oa, ob)),
        }
    }
    if let Some(last) = out.last_mut() {
        last.2 = t_out;
    }
    let spec = AlignmentSpec { spans: out, t_out };
    spec.validate()?;
    Ok(spec)
}

/// A frame-synchronous acyclic numerator: every accepted path emits exactly
/// one pdf per output frame.
#[derive(Debug, Clone)]
pub struct NumeratorLattice {
    pub graph: Graph,
    pub t_out: u32,
}

#[derive(Debug, Clone, Copy)]
struct Element {
    unit: usize,
    state: usize,
    start: u32,
    end: u32, // exclusive
}

/// Build the aligned numerator lattice.
///
/// Wake-word and speech states spread equally over their unit's span; the
/// final wake-word state is extended over the first [`POST_WW_OUT_FRAMES`]
/// output frames past the wake-word end (consuming following silence). Each
/// state may shift its boundaries by up to `tolerance` output frames.
pub fn build_numerator_aligned(
    align: &AlignmentSpec,
    topology: &HmmTopology,
    tolerance: u32,
) -> Result<NumeratorLattice> {
    align.validate()?;
    let t_out = align.t_out;

    // Lay out the element sequence with nominal spans.
    let mut elements: Vec<Element> = Vec::new();
    let mut pending_silence_skip = 0u32; // silence frames consumed by the wake-word extension
    for (idx, &(unit_kind, start, end)) in align.spans.iter().enumerate() {
        let start = start + pending_silence_skip;
        pending_silence_skip = 0;
        if start >= end {
            continue; // silence fully absorbed by the extension
        }
        let unit_idx = match unit_kind {
            UnitKind::WakeWord => crate::topology::WAKE_WORD_UNIT,
            UnitKind::Speech => crate::topology::SPEECH_UNIT,
            UnitKind::Silence => crate::topology::SILENCE_UNIT,
        };
        let k = topology.units[unit_idx].num_states();
        let len = end - start;
        if (len as usize) < k {
            return Err(Error::SpanTooShort { frames: len as usize, states: k });
        }
        match unit_kind {
            UnitKind::Silence => {
                elements.push(Element { unit: unit_idx, state: 0, start, end });
            }
            UnitKind::Speech | UnitKind::WakeWord => {
                let base = len / k as u32;
                let rem = len % k as u32;
                let mut at = start;
                for s in 0..k {
                    let mut span = base + if (s as u32) < rem { 1 } else { 0 };
                    let is_last_ww = unit_kind == UnitKind::WakeWord && s == k - 1;
                    if is_last_ww {
                        // extend over post-wake-word silence
                        let next_is_silence = align
                            .spans
                            .get(idx + 1)
                            .map(|&(u, _, _)| u == UnitKind::Silence)
                            .unwrap_or(false);
                        let available = if next_is_silence {
                            align.spans[idx + 1].2 - align.spans[idx + 1].1
                        } else if idx + 1 == align.spans.len() {
                            0
                        } else {
                            return Err(Error::BadAlignment(
                                "wake word must be followed by silence or end the utterance".into(),
                            ));
                        };
                        let ext = POST_WW_OUT_FRAMES.min(available);
                        span += ext;
                        pending_silence_skip = ext;
                    }
                    elements.push(Element { unit: unit_idx, state: s, start: at, end: at + span });
                    at += span;
                }
            }
        }
    }

    let ne = elements.len() as u32;
    if ne > t_out {
        return Err(Error::SpanTooShort { frames: t_out as usize, states: ne as usize });
    }

    // allowed(t, e): frame t may be assigned element e.
    let allowed = |t: u32, e: u32| -> bool {
        let el = &elements[e as usize];
        let lo = el.start.saturating_sub(tolerance);
        let hi = el.end - 1 + tolerance;
        t >= lo && t <= hi && e <= t && (ne - 1 - e) <= (t_out - 1 - t)
    };

    // Forward pass over the layered trellis of (frame, element) pairs.
    let mut ids: Vec<Vec<Option<u32>>> = vec![vec![None; ne as usize]; t_out as usize];
    let mut graph = Graph::new(topology.pdf_count);
    let start_state = graph.add_state();
    graph.start = start_state;

    let pdf = |e: u32, selfloop: bool| -> i32 {
        let el = &elements[e as usize];
        let s = &topology.units[el.unit].states[el.state];
        (if selfloop { s.selfloop } else { s.forward }) as i32
    };

    if !allowed(0, 0) {
        return Err(Error::EmptyNumerator);
    }
    ids[0][0] = Some(graph.add_state());
    graph.add_arc(start_state, ids[0][0].unwrap(), pdf(0, false), TRANSITION_LOGP);
    for t in 1..t_out {
        for e in 0..ne {
            if !allowed(t, e) {
                continue;
            }
            let stay = ids[t as usize - 1][e as usize];
            let advance = if e > 0 { ids[t as usize - 1][e as usize - 1] } else { None };
            if stay.is_none() && advance.is_none() {
                continue;
            }
            let id = graph.add_state();
            ids[t as usize][e as usize] = Some(id);
            if let Some(prev) = stay {
                graph.add_arc(prev, id, pdf(e, true), TRANSITION_LOGP);
            }
            if let Some(prev) = advance {
                graph.add_arc(prev, id, pdf(e, false), TRANSITION_LOGP);
            }
        }
    }
    let last = ids[t_out as usize - 1][ne as usize - 1].ok_or(Error::EmptyNumerator)?;
    graph.set_final(last, 0.0);

    // Drop states that cannot reach the final state.
    let graph = prune(graph)?;
    Ok(NumeratorLattice { graph, t_out })
}

fn prune(graph: Graph) -> Result<Graph> {
    let fwd = graph.reachable_from_start();
    let bwd = graph.coreachable_to_final();
    let keep: Vec<bool> = fwd.iter().zip(&bwd).map(|(a, b)| *a && *b).collect();
    if !keep[graph.start as usize] {
        return Err(Error::EmptyNumerator);
    }
    let mut remap = vec![u32::MAX; graph.num_states as usize];
    let mut next = 0u32;
    for (s, &k) in keep.iter().enumerate() {
        if k {
            remap[s] = next;
            next += 1;
        }
    }
    let mut out = Graph::new(graph.pdf_count);
    out.num_states = next;
    out.start = remap[graph.start as usize];
    for (s, w) in graph.finals {
        if keep[s as usize] {
            out.set_final(remap[s as usize], w);
        }
    }
    for a in graph.arcs {
        if keep[a.src as usize] && keep[a.dst as usize] {
            out.add_arc(remap[a.src as usize], remap[a.dst as usize], a.label, a.log_weight);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_topology;

    /// All pdf-label sequences accepted by an acyclic graph (test oracle).
    fn all_paths(g: &Graph) -> Vec<Vec<i32>> {
        let mut out = Vec::new();
        let mut stack = vec![(g.start, Vec::new())];
        while let Some((s, prefix)) = stack.pop() {
            if g.is_final(s).is_some() {
                out.push(prefix.clone());
            }
            for a in g.arcs.iter().filter(|a| a.src == s) {
                let mut next = prefix.clone();
                next.push(a.label);
                stack.push((a.dst, next));
            }
        }
        out.sort();
        out
    }

    #[test]
    fn free_wake_word_numerator_keeps_selfloops() {
        let topo = build_topology(DatasetKind::Snips);
        let g = build_numerator_free("WakeWord", &topo).unwrap();
        assert!(g.has_selfloop());
        assert!(!g.has_epsilon());
        g.validate().unwrap();
    }

    /// Does the graph accept this exact pdf sequence (DFS oracle)?
    fn accepts(g: &Graph, seq: &[i32]) -> bool {
        fn rec(g: &Graph, s: u32, seq: &[i32]) -> bool {
            if seq.is_empty() {
                return g.is_final(s).is_some();
            }
            g.arcs
                .iter()
                .filter(|a| a.src == s && a.label == seq[0])
                .any(|a| rec(g, a.dst, &seq[1..]))
        }
        rec(g, g.start, seq)
    }

    #[test]
    fn free_speech_numerator_accepts_expected_sequence() {
        let topo = build_topology(DatasetKind::Snips);
        let g = build_numerator_free("Speech", &topo).unwrap();
        let sp = topo.unit(UnitKind::Speech);
        let seq = vec![
            sp.states[0].forward as i32,
            sp.states[0].selfloop as i32,
            sp.states[1].forward as i32,
            sp.states[2].forward as i32,
            sp.states[3].forward as i32,
        ];
        assert!(accepts(&g, &seq));
        // but not with a missing state
        let bad = vec![
            sp.states[0].forward as i32,
            sp.states[1].forward as i32,
            sp.states[3].forward as i32,
        ];
        assert!(!accepts(&g, &bad));
    }

    #[test]
    fn fluency_free_numerator_shortest_path_is_ten() {
        let topo = build_topology(DatasetKind::Fluency);
        let g = build_numerator_free("WakeWord Speech", &topo).unwrap();
        // BFS over (state, depth) to the first final.
        let mut depth = vec![usize::MAX; g.num_states as usize];
        let mut queue = std::collections::VecDeque::from([(g.start, 0usize)]);
        let mut best = usize::MAX;
        while let Some((s, d)) = queue.pop_front() {
            if d >= depth[s as usize] {
                continue;
            }
            depth[s as usize] = d;
            if g.is_final(s).is_some() {
                best = best.min(d);
            }
            for a in g.arcs.iter().filter(|a| a.src == s) {
                queue.push_back((a.dst, d + 1));
            }
        }
        assert_eq!(best, 10);
    }

    #[test]
    fn unknown_transcript_token_errors() {
        let topo = build_topology(DatasetKind::Snips);
        assert!(matches!(
            build_numerator_free("Wake", &topo),
            Err(Error::UnknownTranscript(_))
        ));
    }

    #[test]
    fn aligned_example_matches_hand_construction() {
        // 12 output frames: wake word on [0, 8) with 4 states, then silence.
        // With zero tolerance each state covers 2 frames and the last state
        // extends over frames 8..11, leaving nothing for the silence unit.
        let topo = build_topology(DatasetKind::Snips);
        let align = AlignmentSpec {
            spans: vec![(UnitKind::WakeWord, 0, 8), (UnitKind::Silence, 8, 12)],
            t_out: 12,
        };
        let lat = build_numerator_aligned(&align, &topo, 0).unwrap();
        let ww = topo.unit(UnitKind::WakeWord);
        let f = |s: usize| ww.states[s].forward as i32;
        let l = |s: usize| ww.states[s].selfloop as i32;
        let expect = vec![
            f(0), l(0), f(1), l(1), f(2), l(2), f(3),
            l(3), l(3), l(3), l(3), l(3),
        ];
        let paths = all_paths(&lat.graph);
        assert_eq!(paths, vec![expect]);
    }

    #[test]
    fn aligned_negative_spreads_states_equally() {
        let topo = build_topology(DatasetKind::Snips);
        let align = AlignmentSpec { spans: vec![(UnitKind::Speech, 0, 8)], t_out: 8 };
        let lat = build_numerator_aligned(&align, &topo, 0).unwrap();
        let sp = topo.unit(UnitKind::Speech);
        let f = |s: usize| sp.states[s].forward as i32;
        let l = |s: usize| sp.states[s].selfloop as i32;
        let expect = vec![f(0), l(0), f(1), l(1), f(2), l(2), f(3), l(3)];
        assert_eq!(all_paths(&lat.graph), vec![expect]);
    }

    #[test]
    fn aligned_paths_have_exactly_t_out_arcs() {
        let topo = build_topology(DatasetKind::Snips);
        let align = AlignmentSpec {
            spans: vec![
                (UnitKind::Silence, 0, 5),
                (UnitKind::WakeWord, 5, 13),
                (UnitKind::Silence, 13, 24),
            ],
            t_out: 24,
        };
        for tol in [0u32, 1, 2] {
            let lat = build_numerator_aligned(&align, &topo, tol).unwrap();
            let paths = all_paths(&lat.graph);
            assert!(!paths.is_empty());
            for p in &paths {
                assert_eq!(p.len(), 24);
            }
        }
    }

    #[test]
    fn tolerance_grows_the_path_set() {
        let topo = build_topology(DatasetKind::Snips);
        let align = AlignmentSpec {
            spans: vec![
                (UnitKind::Silence, 0, 6),
                (UnitKind::WakeWord, 6, 14),
                (UnitKind::Silence, 14, 26),
            ],
            t_out: 26,
        };
        let p0 = all_paths(&build_numerator_aligned(&align, &topo, 0).unwrap().graph);
        let p2 = all_paths(&build_numerator_aligned(&align, &topo, 2).unwrap().graph);
        assert!(p2.len() > p0.len());
        for p in &p0 {
            assert!(p2.contains(p));
        }
    }

    #[test]
    fn span_too_short_is_rejected() {
        let topo = build_topology(DatasetKind::Snips);
        let align = AlignmentSpec {
            spans: vec![(UnitKind::Speech, 0, 3), (UnitKind::Silence, 3, 6)],
            t_out: 6,
        };
        assert!(matches!(
            build_numerator_aligned(&align, &topo, 0),
            Err(Error::SpanTooShort { .. })
        ));
    }

    #[test]
    fn output_span_conversion_tiles() {
        let spans = vec![
            (UnitKind::Silence, 0u32, 25u32),
            (UnitKind::WakeWord, 25, 73),
            (UnitKind::Silence, 73, 160),
        ];
        let spec = to_output_spans(&spans, 160).unwrap();
        assert_eq!(spec.t_out, 54); // ceil(160/3)
        spec.validate().unwrap();
        assert_eq!(spec.ww_end(), Some(25u32.div_ceil(3) + (73u32.div_ceil(3) - 25u32.div_ceil(3))));
    }
}
