//! Weighted labeled directed graphs over pdf-id arcs.
//!
//! Graphs carry the hypothesis spaces: numerator lattices and chains, the
//! denominator grammar, and the cyclic decoding graph. All builders emit
//! epsilon-free graphs (every arc is a pdf emission).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Arc label for epsilon in the on-disk format.
pub const EPSILON: i32 = -1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphArc {
    pub src: u32,
    pub dst: u32,
    /// pdf-id, or [`EPSILON`].
    pub label: i32,
    pub log_weight: f64,
}

impl GraphArc {
    pub fn pdf(&self) -> Option<usize> {
        (self.label >= 0).then_some(self.label as usize)
    }
}

/// Role tag stored in graph files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphRole {
    NumeratorFree,
    NumeratorAligned,
    Denominator,
    Decoding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub num_states: u32,
    pub start: u32,
    /// `(state, final log-weight)` pairs.
    pub finals: Vec<(u32, f64)>,
    pub arcs: Vec<GraphArc>,
    pub pdf_count: usize,
}

impl Graph {
    pub fn new(pdf_count: usize) -> Self {
        Self { num_states: 0, start: 0, finals: Vec::new(), arcs: Vec::new(), pdf_count }
    }

    pub fn add_state(&mut self) -> u32 {
        self.num_states += 1;
        self.num_states - 1
    }

    pub fn add_arc(&mut self, src: u32, dst: u32, label: i32, log_weight: f64) {
        debug_assert!(src < self.num_states && dst < self.num_states);
        debug_assert!(label == EPSILON || (label as usize) < self.pdf_count);
        self.arcs.push(GraphArc { src, dst, label, log_weight });
    }

    pub fn set_final(&mut self, state: u32, log_weight: f64) {
        self.finals.push((state, log_weight));
    }

    pub fn is_final(&self, state: u32) -> Option<f64> {
        self.finals.iter().find(|(s, _)| *s == state).map(|(_, w)| *w)
    }

    pub fn has_epsilon(&self) -> bool {
        self.arcs.iter().any(|a| a.label == EPSILON)
    }

    pub fn has_selfloop(&self) -> bool {
        self.arcs.iter().any(|a| a.src == a.dst)
    }

    /// Structural checks: valid endpoints and labels, reachability from the
    /// start, and co-reachability to a final state.
    pub fn validate(&self) -> Result<()> {
        if self.start >= self.num_states {
            return Err(Error::ShapeMismatch("start state out of range".into()));
        }
        for a in &self.arcs {
            if a.src >= self.num_states || a.dst >= self.num_states {
                return Err(Error::ShapeMismatch("arc endpoint out of range".into()));
            }
            if a.label != EPSILON && a.label as usize >= self.pdf_count {
                return Err(Error::ShapeMismatch(format!(
                    "arc label {} exceeds pdf_count {}",
                    a.label, self.pdf_count
                )));
            }
        }
        let fwd = self.reachable_from_start();
        let bwd = self.coreachable_to_final();
        for s in 0..self.num_states {
            if !fwd[s as usize] || !bwd[s as usize] {
                return Err(Error::ShapeMismatch(format!("state {s} is not connected")));
            }
        }
        Ok(())
    }

    pub fn reachable_from_start(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states as usize];
        let mut stack = vec![self.start];
        seen[self.start as usize] = true;
        while let Some(s) = stack.pop() {
            for a in self.arcs.iter().filter(|a| a.src == s) {
                if !seen[a.dst as usize] {
                    seen[a.dst as usize] = true;
                    stack.push(a.dst);
                }
            }
        }
        seen
    }

    pub fn coreachable_to_final(&self) -> Vec<bool> {
        let mut seen = vec![false; self.num_states as usize];
        let mut stack: Vec<u32> = self.finals.iter().map(|(s, _)| *s).collect();
        for &s in &stack {
            seen[s as usize] = true;
        }
        while let Some(s) = stack.pop() {
            for a in self.arcs.iter().filter(|a| a.dst == s) {
                if !seen[a.src as usize] {
                    seen[a.src as usize] = true;
                    stack.push(a.src);
                }
            }
        }
        seen
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphHeader {
    pdf_count: usize,
    kind: String,
    role: GraphRole,
    num_states: u32,
    start: u32,
    finals: Vec<(u32, f64)>,
    num_arcs: u64,
}

const GRAPH_MAGIC: &[u8; 8] = b"WFGRAPH1";

/// Write a graph: magic, u32 JSON header length, header, then arcs as binary
/// quadruples (u32 src, u32 dst, i32 label with -1 = epsilon, f32 log weight).
pub fn write_graph(path: &Path, graph: &Graph, kind: &str, role: GraphRole) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    let header = GraphHeader {
        pdf_count: graph.pdf_count,
        kind: kind.to_string(),
        role,
        num_states: graph.num_states,
        start: graph.start,
        finals: graph.finals.clone(),
        num_arcs: graph.arcs.len() as u64,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(GRAPH_MAGIC).map_err(|e| Error::io(&p, e))?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(|e| Error::io(&p, e))?;
    w.write_all(&json).map_err(|e| Error::io(&p, e))?;
    let mut buf = Vec::with_capacity(graph.arcs.len() * 16);
    for a in &graph.arcs {
        buf.extend_from_slice(&a.src.to_le_bytes());
        buf.extend_from_slice(&a.dst.to_le_bytes());
        buf.extend_from_slice(&a.label.to_le_bytes());
        buf.extend_from_slice(&(a.log_weight as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(|e| Error::io(&p, e))?;
    Ok(())
}

pub fn read_graph(path: &Path) -> Result<(Graph, String, GraphRole)> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(&p, e))?;
    let bad = |what: &str| Error::BadFormat { path: p.clone(), what: what.to_string() };
    if bytes.len() < 12 || &bytes[0..8] != GRAPH_MAGIC {
        return Err(bad("bad magic"));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + json_len {
        return Err(bad("truncated header"));
    }
    let header: GraphHeader = serde_json::from_slice(&bytes[12..12 + json_len])?;
    let mut off = 12 + json_len;
    if bytes.len() != off + header.num_arcs as usize * 16 {
        return Err(bad("arc payload size mismatch"));
    }
    let mut arcs = Vec::with_capacity(header.num_arcs as usize);
    for _ in 0..header.num_arcs {
        let src = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
        let dst = u32::from_le_bytes(bytes[off + 4..off + 8].try_into().unwrap());
        let label = i32::from_le_bytes(bytes[off + 8..off + 12].try_into().unwrap());
        let w = f32::from_le_bytes(bytes[off + 12..off + 16].try_into().unwrap());
        arcs.push(GraphArc { src, dst, label, log_weight: w as f64 });
        off += 16;
    }
    let graph = Graph {
        num_states: header.num_states,
        start: header.start,
        finals: header.finals,
        arcs,
        pdf_count: header.pdf_count,
    };
    Ok((graph, header.kind, header.role))
}
