//! Unit-level grammars and their expansion into epsilon-free pdf graphs.
//!
//! The denominator grammar comprises paths with and without the wake word;
//! the decoding grammar is its cyclic counterpart for continuous streams.
//! Expansion replaces each grammar arc with its unit's left-to-right HMM
//! (self-loops included) and wires unit boundaries directly, so the expanded
//! graph has no epsilon arcs. Every emission arc carries the same transition
//! weight, which makes numerator/denominator path weights agree whenever the
//! pdf sequences agree.

use crate::error::Result;
use crate::graph::Graph;
use crate::topology::{DatasetKind, HmmTopology, UnitKind, TRANSITION_LOGP};

/// A unit-level grammar: nodes, unit-labeled arcs, and epsilon node links
/// (used for skippable silence in alignment-free numerators).
#[derive(Debug, Clone)]
pub struct Grammar {
    pub num_nodes: u32,
    pub start: u32,
    pub finals: Vec<u32>,
    pub arcs: Vec<(u32, u32, UnitKind)>,
    pub eps: Vec<(u32, u32)>,
}

impl Grammar {
    fn new() -> Self {
        Self { num_nodes: 0, start: 0, finals: Vec::new(), arcs: Vec::new(), eps: Vec::new() }
    }

    fn node(&mut self) -> u32 {
        self.num_nodes += 1;
        self.num_nodes - 1
    }

    /// Nodes reachable from `from` through epsilon links (inclusive).
    fn eps_closure(&self, from: u32) -> Vec<u32> {
        let mut seen = vec![false; self.num_nodes as usize];
        let mut stack = vec![from];
        seen[from as usize] = true;
        while let Some(n) = stack.pop() {
            for &(a, b) in &self.eps {
                if a == n && !seen[b as usize] {
                    seen[b as usize] = true;
                    stack.push(b);
                }
            }
        }
        (0..self.num_nodes).filter(|&n| seen[n as usize]).collect()
    }

    fn is_final_via_eps(&self, node: u32) -> bool {
        self.eps_closure(node).iter().any(|n| self.finals.contains(n))
    }

    /// Enumerate unit-label routes from start to a final, up to `max_len`
    /// units per route and `cap` routes total.
    pub fn routes(&self, max_len: usize, cap: usize) -> Vec<Vec<UnitKind>> {
        let mut out = Vec::new();
        let mut stack: Vec<(u32, Vec<UnitKind>)> = vec![(self.start, Vec::new())];
        while let Some((node, prefix)) = stack.pop() {
            if out.len() >= cap {
                break;
            }
            if self.is_final_via_eps(node) && !prefix.is_empty() {
                out.push(prefix.clone());
            }
            if prefix.len() >= max_len {
                continue;
            }
            for n in self.eps_closure(node) {
                for &(src, dst, unit) in &self.arcs {
                    if src == n {
                        let mut next = prefix.clone();
                        next.push(unit);
                        stack.push((dst, next));
                    }
                }
            }
        }
        out.sort();
        out.dedup();
        out
    }
}

/// Denominator grammar: silence-bracketed paths with and without the wake word.
///
/// Snips has three routes (wake word, speech, silence only). Fluency allows a
/// request after the wake word and speech resumed after silence, i.e. the
/// speech/silence pair may cycle.
pub fn denominator_grammar(kind: DatasetKind) -> Grammar {
    let mut g = Grammar::new();
    match kind {
        DatasetKind::Snips => {
            let n0 = g.node();
            let n1 = g.node();
            let n2 = g.node();
            let n3 = g.node();
            let nf = g.node();
            g.start = n0;
            g.finals.push(nf);
            g.arcs.push((n0, n1, UnitKind::Silence));
            g.arcs.push((n1, n2, UnitKind::WakeWord));
            g.arcs.push((n2, nf, UnitKind::Silence));
            g.arcs.push((n1, n3, UnitKind::Speech));
            g.arcs.push((n3, nf, UnitKind::Silence));
            g.arcs.push((n0, nf, UnitKind::Silence));
        }
        DatasetKind::Fluency => {
            let n0 = g.node();
            let n1 = g.node();
            let n2 = g.node();
            let n3 = g.node();
            let nf = g.node();
            g.start = n0;
            g.finals.push(nf);
            g.arcs.push((n0, n1, UnitKind::Silence));
            g.arcs.push((n1, n2, UnitKind::WakeWord));
            g.arcs.push((n2, n3, UnitKind::Speech));
            g.arcs.push((n3, nf, UnitKind::Silence));
            g.arcs.push((n3, n2, UnitKind::Silence)); // speech resumes after a pause
            g.arcs.push((n0, n2, UnitKind::Silence)); // no wake word
            g.arcs.push((n0, nf, UnitKind::Silence));
        }
    }
    g
}

/// Decoding grammar: unbounded alternation of silence, speech, and wake words.
pub fn decoding_grammar(kind: DatasetKind) -> Grammar {
    let mut g = Grammar::new();
    match kind {
        DatasetKind::Snips => {
            let d0 = g.node();
            let d1 = g.node();
            let d2 = g.node();
            let d3 = g.node();
            g.start = d0;
            g.finals.push(d1);
            g.arcs.push((d0, d1, UnitKind::Silence));
            g.arcs.push((d1, d2, UnitKind::WakeWord));
            g.arcs.push((d1, d3, UnitKind::Speech));
            g.arcs.push((d2, d1, UnitKind::Silence)); // post-wake-word silence, may re-enter
            g.arcs.push((d3, d1, UnitKind::Silence));
        }
        DatasetKind::Fluency => {
            let f0 = g.node();
            let f1 = g.node();
            let f2 = g.node();
            let f3 = g.node();
            g.start = f0;
            g.finals.push(f1);
            g.arcs.push((f0, f1, UnitKind::Silence));
            g.arcs.push((f1, f2, UnitKind::WakeWord));
            g.arcs.push((f2, f3, UnitKind::Speech));
            g.arcs.push((f1, f3, UnitKind::Speech)); // speech without a wake word
            g.arcs.push((f3, f1, UnitKind::Silence));
        }
    }
    g
}

/// Arc roles relevant to detection bookkeeping.
#[derive(Debug, Clone)]
pub struct ArcFlags {
    /// Arcs leaving the final wake-word state into the next unit.
    pub completion: Vec<bool>,
    /// Arcs entering the first wake-word state (a hypothesis starting a new
    /// wake word stops claiming any earlier completion).
    pub ww_entry: Vec<bool>,
    /// Per graph state: whether it belongs to a wake-word unit expansion.
    pub ww_state: Vec<bool>,
}

/// Expand a grammar into an epsilon-free pdf graph plus per-arc flags.
pub fn expand_grammar(grammar: &Grammar, topology: &HmmTopology) -> Result<(Graph, ArcFlags)> {
    let mut graph = Graph::new(topology.pdf_count);
    let start = graph.add_state();
    graph.start = start;

    // One chain of graph states per grammar arc.
    let mut chain: Vec<Vec<u32>> = Vec::with_capacity(grammar.arcs.len());
    let mut ww_state = vec![false];
    for &(_, _, unit) in &grammar.arcs {
        let k = topology.unit(unit).num_states();
        let is_ww = unit == UnitKind::WakeWord;
        chain.push(
            (0..k)
                .map(|_| {
                    ww_state.push(is_ww);
                    graph.add_state()
                })
                .collect(),
        );
    }

    let mut flags = ArcFlags { completion: Vec::new(), ww_entry: Vec::new(), ww_state };
    let push = |graph: &mut Graph,
                flags: &mut ArcFlags,
                src,
                dst,
                label,
                is_completion: bool,
                is_ww_entry: bool| {
        graph.add_arc(src, dst, label as i32, TRANSITION_LOGP);
        flags.completion.push(is_completion);
        flags.ww_entry.push(is_ww_entry);
    };

    for (ai, &(_, dst_node, unit)) in grammar.arcs.iter().enumerate() {
        let u = topology.unit(unit);
        let states = &chain[ai];
        let k = states.len();
        for (si, &gs) in states.iter().enumerate() {
            push(&mut graph, &mut flags, gs, gs, u.states[si].selfloop, false, false);
            if si + 1 < k {
                push(&mut graph, &mut flags, gs, states[si + 1], u.states[si + 1].forward, false, false);
            }
        }
        let exit_state = states[k - 1];
        let exits_wake_word = unit == UnitKind::WakeWord;
        // Wire the unit exit to every successor arc's first state.
        for n in grammar.eps_closure(dst_node) {
            for (bi, &(b_src, _, b_unit)) in grammar.arcs.iter().enumerate() {
                if b_src == n {
                    let first = topology.unit(b_unit).states[0].forward;
                    let enters_ww = b_unit == UnitKind::WakeWord;
                    push(&mut graph, &mut flags, exit_state, chain[bi][0], first, exits_wake_word, enters_ww);
                }
            }
        }
        if grammar.is_final_via_eps(dst_node) {
            graph.set_final(exit_state, 0.0);
        }
    }

    // Entry arcs from the graph start into every arc leaving the grammar start.
    for n in grammar.eps_closure(grammar.start) {
        for (bi, &(b_src, _, b_unit)) in grammar.arcs.iter().enumerate() {
            if b_src == n {
                let first = topology.unit(b_unit).states[0].forward;
                let enters_ww = b_unit == UnitKind::WakeWord;
                push(&mut graph, &mut flags, start, chain[bi][0], first, false, enters_ww);
            }
        }
    }

    graph.validate()?;
    Ok((graph, flags))
}

/// Build the denominator graph for a dataset kind.
pub fn build_denominator(kind: DatasetKind, topology: &HmmTopology) -> Result<Graph> {
    let (graph, _) = expand_grammar(&denominator_grammar(kind), topology)?;
    Ok(graph)
}

/// A decoding graph bundled with its detection arc flags.
#[derive(Debug, Clone)]
pub struct DecodingGraph {
    pub graph: Graph,
    /// Wake-word completion arcs, aligned with `graph.arcs`.
    pub completion: Vec<bool>,
    /// Wake-word entry arcs, aligned with `graph.arcs`.
    pub ww_entry: Vec<bool>,
    /// Wake-word unit states, aligned with graph states. Tokens here are
    /// "wake word in progress", not background, for margin purposes.
    pub ww_state: Vec<bool>,
}

/// Build the cyclic decoding graph for continuous streams.
pub fn build_decoding(kind: DatasetKind, topology: &HmmTopology) -> Result<DecodingGraph> {
    let (graph, flags) = expand_grammar(&decoding_grammar(kind), topology)?;
    Ok(DecodingGraph {
        graph,
        completion: flags.completion,
        ww_entry: flags.ww_entry,
        ww_state: flags.ww_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_topology;

    #[test]
    fn snips_denominator_has_three_routes() {
        let g = denominator_grammar(DatasetKind::Snips);
        let routes = g.routes(4, 100);
        assert_eq!(routes.len(), 3);
        use UnitKind::*;
        assert!(routes.contains(&vec![Silence]));
        assert!(routes.contains(&vec![Silence, WakeWord, Silence]));
        assert!(routes.contains(&vec![Silence, Speech, Silence]));
    }

    #[test]
    fn fluency_denominator_cycles_speech_through_silence() {
        let g = denominator_grammar(DatasetKind::Fluency);
        use UnitKind::*;
        let routes = g.routes(8, 10_000);
        assert!(routes.contains(&vec![Silence, WakeWord, Speech, Silence]));
        assert!(routes.contains(&vec![Silence, Speech, Silence, Speech, Silence]));
        assert!(routes.contains(&vec![Silence, WakeWord, Speech, Silence, Speech, Silence]));
        assert!(routes.contains(&vec![Silence]));
        // and the expanded graph is genuinely cyclic beyond self-loops
        let topo = build_topology(DatasetKind::Fluency);
        let g = build_denominator(DatasetKind::Fluency, &topo).unwrap();
        let non_loop_cycle = {
            // DFS cycle check ignoring self-loops
            let n = g.num_states as usize;
            let mut color = vec![0u8; n];
            fn dfs(s: usize, g: &Graph, color: &mut [u8]) -> bool {
                color[s] = 1;
                for a in g.arcs.iter().filter(|a| a.src as usize == s && a.dst != a.src) {
                    match color[a.dst as usize] {
                        1 => return true,
                        0 => {
                            if dfs(a.dst as usize, g, color) {
                                return true;
                            }
                        }
                        _ => {}
                    }
                }
                color[s] = 2;
                false
            }
            dfs(g.start as usize, &g, &mut color)
        };
        assert!(non_loop_cycle);
    }

    #[test]
    fn snips_denominator_is_acyclic_apart_from_selfloops() {
        let topo = build_topology(DatasetKind::Snips);
        let g = build_denominator(DatasetKind::Snips, &topo).unwrap();
        g.validate().unwrap();
        assert!(!g.has_epsilon());
        assert!(g.has_selfloop());
    }

    #[test]
    fn decoding_completion_arcs_leave_last_wake_word_state() {
        for kind in [DatasetKind::Snips, DatasetKind::Fluency] {
            let topo = build_topology(kind);
            let dec = build_decoding(kind, &topo).unwrap();
            assert_eq!(dec.completion.len(), dec.graph.arcs.len());
            let marked: Vec<_> = dec
                .graph
                .arcs
                .iter()
                .zip(&dec.completion)
                .filter(|(_, &c)| c)
                .map(|(a, _)| a)
                .collect();
            assert!(!marked.is_empty());
            // Every completion arc's source has a self-loop labeled with the
            // last wake-word state's self-loop pdf.
            let ww = topo.unit(UnitKind::WakeWord);
            let last_loop = ww.states[ww.num_states() - 1].selfloop as i32;
            for arc in marked {
                let has_loop = dec
                    .graph
                    .arcs
                    .iter()
                    .any(|b| b.src == arc.src && b.dst == arc.src && b.label == last_loop);
                assert!(has_loop, "completion arc does not leave the last wake-word state");
            }
        }
    }

    #[test]
    fn snips_decoding_allows_wake_word_reentry_at_grammar_level() {
        let g = decoding_grammar(DatasetKind::Snips);
        use UnitKind::*;
        let routes = g.routes(7, 100_000);
        assert!(routes
            .contains(&vec![Silence, WakeWord, Silence, WakeWord, Silence]));
    }

    #[test]
    fn decoding_accepts_all_denominator_routes() {
        for kind in [DatasetKind::Snips, DatasetKind::Fluency] {
            let den = denominator_grammar(kind).routes(8, 100_000);
            let dec = decoding_grammar(kind).routes(8, 1_000_000);
            for r in &den {
                assert!(dec.contains(r), "{kind} decoding misses denominator route {r:?}");
            }
        }
    }
}
