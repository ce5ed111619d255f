//! CSV tables: model confidences, participant responses, embeddings and the
//! spelling dictionary.
//!
//! Lines starting with `#` are treated as comments so that artifacts written
//! by this toolkit (which carry a provenance header) can be read back.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::tree::NodeId;

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DatasetError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| table_err(path, &e))
}

fn table_err(path: &Path, e: &csv::Error) -> DatasetError {
    let line = e.position().map_or(0, |p| p.line());
    DatasetError::Table {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn check_header(
    path: &Path,
    rdr: &mut csv::Reader<std::fs::File>,
    expected: &[&str],
) -> Result<(), DatasetError> {
    let header = rdr.headers().map_err(|e| table_err(path, &e))?;
    let got: Vec<&str> = header.iter().collect();
    if got.len() < expected.len() || got[..expected.len()] != *expected {
        return Err(DatasetError::Table {
            path: path.to_path_buf(),
            line: 1,
            message: format!(
                "expected header `{}`, got `{}`",
                expected.join(","),
                got.join(",")
            ),
        });
    }
    Ok(())
}

/// Normalizes text used as an embedding key: lowercase, single spaces.
pub fn normalize_key(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Softmax output of the model for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRecord {
    pub node_id: NodeId,
    /// `(label, confidence)` in file order. A label is a verb, optionally
    /// followed by `:noun`.
    pub entries: Vec<(String, f64)>,
    /// Sum of the entries whose verb matches the ground truth verb.
    pub gt_verb_confidence: f64,
}

impl ConfidenceRecord {
    fn verb_of(label: &str) -> &str {
        label.split(':').next().unwrap_or(label)
    }

    pub fn verb_confidence(&self, verb: &str) -> f64 {
        self.entries
            .iter()
            .filter(|(label, _)| Self::verb_of(label) == verb)
            .map(|(_, c)| c)
            .sum()
    }

    /// Verb with the highest aggregated confidence. Ties go to the verb
    /// that appears first in the file.
    pub fn predicted_verb(&self) -> Option<&str> {
        let mut order: Vec<&str> = Vec::new();
        let mut totals: HashMap<&str, f64> = HashMap::new();
        for (label, c) in &self.entries {
            let verb = Self::verb_of(label);
            if !totals.contains_key(verb) {
                order.push(verb);
            }
            *totals.entry(verb).or_insert(0.0) += c;
        }
        let mut best: Option<(&str, f64)> = None;
        for verb in order {
            let total = totals[verb];
            if best.is_none_or(|(_, b)| total > b) {
                best = Some((verb, total));
            }
        }
        best.map(|(v, _)| v)
    }
}

/// Confidence records keyed by node. Nodes absent from the table have no
/// model confidence (which is distinct from a confidence of 0).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceTable {
    pub records: BTreeMap<NodeId, ConfidenceRecord>,
}

impl ConfidenceTable {
    pub fn get(&self, id: &NodeId) -> Option<&ConfidenceRecord> {
        self.records.get(id)
    }
}

/// Loads `node_id,verb,confidence`. `gt_verb` maps a node to its clip's
/// ground-truth verb.
pub fn load_confidences(
    path: &Path,
    gt_verb: impl Fn(&NodeId) -> Option<String>,
) -> Result<ConfidenceTable, DatasetError> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, &["node_id", "verb", "confidence"])?;
    let mut grouped: BTreeMap<NodeId, Vec<(String, f64)>> = BTreeMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| table_err(path, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| DatasetError::Table {
            path: path.to_path_buf(),
            line,
            message,
        };
        let conf: f64 = row[2]
            .parse()
            .map_err(|_| err(format!("confidence `{}` is not a number", &row[2])))?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(err(format!("confidence {conf} outside [0, 1]")));
        }
        grouped
            .entry(NodeId::from(&row[0]))
            .or_default()
            .push((row[1].to_string(), conf));
    }
    let mut records = BTreeMap::new();
    for (node_id, entries) in grouped {
        let total: f64 = entries.iter().map(|(_, c)| c).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(DatasetError::Integrity(format!(
                "confidences for {node_id} sum to {total}, expected 1"
            )));
        }
        let verb = gt_verb(&node_id).ok_or_else(|| {
            DatasetError::Integrity(format!("confidence row for unknown node {node_id}"))
        })?;
        let mut record = ConfidenceRecord {
            node_id: node_id.clone(),
            entries,
            gt_verb_confidence: 0.0,
        };
        record.gt_verb_confidence = record.verb_confidence(&verb);
        records.insert(node_id, record);
    }
    Ok(ConfidenceTable { records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    Practice,
    Catch,
    Main,
}

impl fmt::Display for TrialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialKind::Practice => "practice",
            TrialKind::Catch => "catch",
            TrialKind::Main => "main",
        })
    }
}

impl FromStr for TrialKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "practice" => Ok(TrialKind::Practice),
            "catch" => Ok(TrialKind::Catch),
            "main" => Ok(TrialKind::Main),
            other => Err(format!("unknown trial kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub node_id: NodeId,
    pub trial_kind: TrialKind,
    pub response_time_ms: u64,
    pub raw_text: String,
}

/// Loads `participant_id,node_id,trial_kind,response_time_ms,raw_text`.
pub fn load_responses(path: &Path) -> Result<Vec<ResponseRecord>, DatasetError> {
    let mut rdr = reader(path)?;
    check_header(
        path,
        &mut rdr,
        &[
            "participant_id",
            "node_id",
            "trial_kind",
            "response_time_ms",
            "raw_text",
        ],
    )?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| table_err(path, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let err = |message: String| DatasetError::Table {
            path: path.to_path_buf(),
            line,
            message,
        };
        if row.len() < 5 {
            return Err(err(format!("expected 5 columns, got {}", row.len())));
        }
        out.push(ResponseRecord {
            participant_id: row[0].to_string(),
            node_id: NodeId::from(&row[1]),
            trial_kind: row[2].parse().map_err(err)?,
            response_time_ms: row[3]
                .parse()
                .map_err(|_| err(format!("response time `{}` is not an integer", &row[3])))?,
            raw_text: row[4].to_string(),
        });
    }
    Ok(out)
}

/// Text to vector lookup; all vectors share one dimension and none is zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, text: &str, vector: Vec<f64>) -> Result<(), DatasetError> {
        if vector.len() != self.dim {
            return Err(DatasetError::Integrity(format!(
                "embedding for `{text}` has dimension {}, table uses {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().all(|v| *v == 0.0) {
            return Err(DatasetError::Integrity(format!(
                "embedding for `{text}` is the zero vector"
            )));
        }
        self.vectors.insert(normalize_key(text), vector);
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[f64]> {
        self.vectors.get(&normalize_key(text)).map(Vec::as_slice)
    }
}

/// Loads `text,dim0..dimN`.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable, DatasetError> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| table_err(path, &e))?.clone();
    if header.len() < 2 || &header[0] != "text" {
        return Err(DatasetError::Table {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header `text,dim0,...`".into(),
        });
    }
    let mut table = EmbeddingTable::new(header.len() - 1);
    for row in rdr.records() {
        let row = row.map_err(|e| table_err(path, &e))?;
        let line = row.position().map_or(0, |p| p.line());
        let vector = row
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::Table {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
        table
            .insert(&row[0], vector)
            .map_err(|e| DatasetError::Table {
                path: path.to_path_buf(),
                line,
                message: e.to_string(),
            })?;
    }
    Ok(table)
}

/// Loads a word frequency dictionary: one `word count` (or `word,count`)
/// pair per line.
pub fn load_dictionary(path: &Path) -> Result<BTreeMap<String, u64>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let mut words = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty());
        let (Some(word), Some(count)) = (parts.next(), parts.next()) else {
            return Err(DatasetError::Table {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: "expected `word count`".into(),
            });
        };
        let count: u64 = count.parse().map_err(|_| DatasetError::Table {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: format!("count `{count}` is not an integer"),
        })?;
        words.insert(word.to_lowercase(), count);
    }
    Ok(words)
}
