use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Frame, RoleLabel, RoleParser, SrlError, SrlParse};
use crate::corpus::{pair_id, Sentence};
use crate::jsonl::{read_records, write_records, Malformed, ReadMode};

/// One line of the external-parse exchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExternalRecord {
    /// Pair id of the normalized sentence text.
    pub sentence_id: String,
    pub frames: Vec<FrameRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FrameRecord {
    pub verb_index: usize,
    /// Token index (as a string key) to role label. PropBank spellings such
    /// as `ARGM-TMP` are accepted and collapsed.
    pub assignments: BTreeMap<String, String>,
}

impl FrameRecord {
    fn to_frame(&self) -> Result<Frame, String> {
        let mut assignments = BTreeMap::new();
        for (idx, role) in &self.assignments {
            let idx: usize = idx.parse().map_err(|_| format!("token index `{idx}` is not a number"))?;
            let role = RoleLabel::from_propbank(role).ok_or_else(|| format!("unknown role `{role}`"))?;
            assignments.insert(idx, role);
        }
        assignments.entry(self.verb_index).or_insert(RoleLabel::V);
        Ok(Frame { verb_index: self.verb_index, assignments })
    }

    pub fn from_frame(frame: &Frame) -> FrameRecord {
        FrameRecord {
            verb_index: frame.verb_index,
            assignments: frame.assignments.iter().map(|(i, r)| (i.to_string(), r.to_string())).collect(),
        }
    }
}

/// Parses supplied by an outside labeler, keyed by sentence id.
#[derive(Debug, Clone, Default)]
pub struct ExternalParses {
    parses: HashMap<String, SrlParse>,
}

impl ExternalParses {
    pub fn from_records(records: &[ExternalRecord]) -> Result<ExternalParses, SrlError> {
        let mut parses = HashMap::new();
        for record in records {
            let frames = record
                .frames
                .iter()
                .map(FrameRecord::to_frame)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|reason| SrlError::InvalidParse { id: record.sentence_id.clone(), reason })?;
            parses.insert(record.sentence_id.clone(), SrlParse { frames });
        }
        Ok(ExternalParses { parses })
    }

    pub fn load(path: &Path, mode: ReadMode) -> Result<(ExternalParses, Vec<Malformed>), SrlError> {
        let (records, skipped) = read_records(path, mode, |r: &ExternalRecord| r.frames.iter().try_for_each(|f| f.to_frame().map(drop)))?;
        Ok((ExternalParses::from_records(&records)?, skipped))
    }

    pub fn save(records: &[ExternalRecord], path: &Path) -> std::io::Result<()> {
        write_records(path, records)
    }

    pub fn insert(&mut self, sentence_id: impl Into<String>, parse: SrlParse) {
        self.parses.insert(sentence_id.into(), parse);
    }

    pub fn len(&self) -> usize {
        self.parses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parses.is_empty()
    }
}

impl RoleParser for ExternalParses {
    fn parse(&self, sentence: &Sentence) -> Result<SrlParse, SrlError> {
        let id = pair_id(&sentence.text());
        let parse = self.parses.get(&id).ok_or_else(|| SrlError::MissingParse(id.clone()))?;
        parse.validate(sentence.tokens.len()).map_err(|reason| SrlError::InvalidParse { id, reason })?;
        Ok(parse.clone())
    }
}
