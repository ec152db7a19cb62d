//! Utterance manifests: one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{AlignSeg, SynthUtterance, UttKind};

/// One manifest line: `{id, wav, kind, speaker, align?, ww_end_s?}` with
/// alignment entries as `[unit, start_frame, end_frame]` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub wav: String,
    pub kind: UttKind,
    pub speaker: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<Vec<(u32, u32, u32)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ww_end_s: Option<f64>,
}

impl ManifestRecord {
    pub fn from_utterance(utt: &SynthUtterance, wav: String) -> Self {
        Self {
            id: utt.id.clone(),
            wav,
            kind: utt.kind,
            speaker: utt.speaker_id,
            align: Some(utt.alignment.iter().map(|s| (s.unit, s.start_frame, s.end_frame)).collect()),
            ww_end_s: utt.ww_end_s,
        }
    }

    pub fn alignment(&self) -> Option<Vec<AlignSeg>> {
        self.align.as_ref().map(|v| {
            v.iter()
                .map(|&(unit, start_frame, end_frame)| AlignSeg { unit, start_frame, end_frame })
                .collect()
        })
    }

    pub fn is_positive(&self) -> bool {
        self.kind == UttKind::Pos
    }
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let p = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&p, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r)?;
        writeln!(w, "{line}").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&p, e))?;
    let mut out: Vec<ManifestRecord> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&p, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    let mut seen = std::collections::HashSet::new();
    for r in &out {
        if !seen.insert(r.id.clone()) {
            return Err(Error::BadFormat { path: p, what: format!("duplicate id {}", r.id) });
        }
    }
    Ok(out)
}
