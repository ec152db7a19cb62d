//! Wake-word, speech, and silence HMM topologies and the pdf-id table.
//!
//! Every HMM state owns two network outputs: one for the transition into the
//! state and one for its self-loop. Wake-word and speech units are strictly
//! left-to-right; silence is a single state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Isolated wake word; 4 wake-word states.
    Snips,
    /// Wake word followed by a request; 5 wake-word states.
    Fluency,
}

impl DatasetKind {
    pub fn wake_word_states(self) -> usize {
        match self {
            DatasetKind::Snips => 4,
            DatasetKind::Fluency => 5,
        }
    }

    /// Whether positive utterances carry trailing request speech.
    pub fn positives_have_request(self) -> bool {
        matches!(self, DatasetKind::Fluency)
    }
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DatasetKind::Snips => write!(f, "snips"),
            DatasetKind::Fluency => write!(f, "fluency"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnitKind {
    WakeWord,
    Speech,
    Silence,
}

/// One HMM state's output pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatePdfs {
    pub forward: u32,
    pub selfloop: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDef {
    pub kind: UnitKind,
    pub states: Vec<StatePdfs>,
    pub label: String,
    pub state_labels: Vec<String>,
}

impl UnitDef {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }
}

/// Both transition choices carry the same probability; see `TRANSITION_LOGP`.
pub const TRANSITION_LOGP: f64 = -std::f64::consts::LN_2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmTopology {
    pub kind: DatasetKind,
    pub units: Vec<UnitDef>,
    pub pdf_count: usize,
}

/// Indices of the units inside [`HmmTopology::units`].
pub const WAKE_WORD_UNIT: usize = 0;
pub const SPEECH_UNIT: usize = 1;
pub const SILENCE_UNIT: usize = 2;

/// Build the topology for a dataset kind: wake word, speech (same state count),
/// and a 1-state silence unit. Snips yields 18 pdf-ids, Fluency 22.
pub fn build_topology(kind: DatasetKind) -> HmmTopology {
    let ww_states = kind.wake_word_states();
    let ww_labels: Vec<String> = match kind {
        DatasetKind::Snips => ["hey", "sni", "ps", "sil"].iter().map(|s| s.to_string()).collect(),
        DatasetKind::Fluency => {
            ["okay-hey", "flu", "en", "cy", "sil"].iter().map(|s| s.to_string()).collect()
        }
    };
    let mut next_pdf = 0u32;
    let mut alloc = |n: usize| -> Vec<StatePdfs> {
        (0..n)
            .map(|_| {
                let p = StatePdfs { forward: next_pdf, selfloop: next_pdf + 1 };
                next_pdf += 2;
                p
            })
            .collect()
    };
    let units = vec![
        UnitDef {
            kind: UnitKind::WakeWord,
            states: alloc(ww_states),
            label: "WakeWord".into(),
            state_labels: ww_labels,
        },
        UnitDef {
            kind: UnitKind::Speech,
            states: alloc(ww_states),
            label: "Speech".into(),
            state_labels: (1..=ww_states).map(|i| format!("sp{i}")).collect(),
        },
        UnitDef {
            kind: UnitKind::Silence,
            states: alloc(1),
            label: "Silence".into(),
            state_labels: vec!["sil".into()],
        },
    ];
    HmmTopology { kind, units, pdf_count: next_pdf as usize }
}

impl HmmTopology {
    pub fn unit(&self, kind: UnitKind) -> &UnitDef {
        match kind {
            UnitKind::WakeWord => &self.units[WAKE_WORD_UNIT],
            UnitKind::Speech => &self.units[SPEECH_UNIT],
            UnitKind::Silence => &self.units[SILENCE_UNIT],
        }
    }

    /// pdf-id of `(unit, state)`, self-loop or forward flavor.
    pub fn pdf_of(&self, unit: usize, state: usize, is_selfloop: bool) -> Result<u32> {
        let u = self
            .units
            .get(unit)
            .ok_or_else(|| Error::TopologyIndex(format!("unit {unit} of {}", self.units.len())))?;
        let s = u.states.get(state).ok_or_else(|| {
            Error::TopologyIndex(format!("state {state} of unit {} ({} states)", u.label, u.states.len()))
        })?;
        Ok(if is_selfloop { s.selfloop } else { s.forward })
    }

    /// Reverse lookup: pdf-id back to `(unit, state, is_selfloop)`.
    pub fn lookup_pdf(&self, pdf: u32) -> Option<(usize, usize, bool)> {
        for (ui, u) in self.units.iter().enumerate() {
            for (si, s) in u.states.iter().enumerate() {
                if s.forward == pdf {
                    return Some((ui, si, false));
                }
                if s.selfloop == pdf {
                    return Some((ui, si, true));
                }
            }
        }
        None
    }

    pub fn total_states(&self) -> usize {
        self.units.iter().map(|u| u.states.len()).sum()
    }
}
