//! Recognition gap and reduction rate over parent/child pairs.
//!
//! All values are fractions internally; reports multiply by 100.

pub mod arr;
pub mod gap;

pub use arr::{
    bin_index, histogram_edges, reduction_rate, LevelRate, ReductionRateReport, HISTOGRAM_BINS,
};
pub use gap::{
    ai_recognition_gap, calibrate_threshold, class_operating_points, gap_statistics,
    human_recognition_gap, mirc_records, render_gap_table, ClassGap, ClassOperatingPoint,
    GapReport, MircRecord,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::{MircRole, NodeId, QuadrantNode, ReductionTree};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no confidences for class {0}; cannot calibrate an operating point")]
    NoOperatingPoint(String),
    #[error("target fraction {0} must lie in [0, 1]")]
    Fraction(f64),
    #[error("no pairs to summarize")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PairKind {
    AnyParentChild,
    MircSubMirc,
    SpatiotemporalMircSubMirc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    HumanAccuracy,
    ModelConfidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub parent_node_id: NodeId,
    pub child_node_id: NodeId,
    pub clip_id: String,
    pub verb_class: String,
    pub a_parent: f64,
    pub a_child: f64,
    /// `a_parent - a_child`; positive means the child is harder.
    pub delta: f64,
    /// Level of the child.
    pub level: u8,
    pub pair_kind: PairKind,
    pub measure_kind: MeasureKind,
}

impl PairRecord {
    pub fn new(
        parent: &QuadrantNode,
        child: &QuadrantNode,
        verb_class: &str,
        a_parent: f64,
        a_child: f64,
        pair_kind: PairKind,
        measure_kind: MeasureKind,
    ) -> Self {
        Self {
            parent_node_id: parent.node_id.clone(),
            child_node_id: child.node_id.clone(),
            clip_id: parent.clip_id.clone(),
            verb_class: verb_class.to_string(),
            a_parent,
            a_child,
            delta: a_parent - a_child,
            level: child.level,
            pair_kind,
            measure_kind,
        }
    }
}

fn measure(node: &QuadrantNode, kind: MeasureKind) -> Option<f64> {
    match kind {
        MeasureKind::HumanAccuracy => node.human_accuracy,
        MeasureKind::ModelConfidence => node.model_confidence,
    }
}

/// Pairs of `kind` in one tree where both ends carry `measure`.
pub fn extract_pairs(
    tree: &ReductionTree,
    kind: PairKind,
    measure_kind: MeasureKind,
) -> Vec<PairRecord> {
    let mut out = Vec::new();
    for child in tree.nodes.values() {
        let Some(parent_id) = &child.parent else {
            continue;
        };
        let Some(parent) = tree.nodes.get(parent_id) else {
            continue;
        };
        let keep = match kind {
            PairKind::AnyParentChild => !child.is_scrambled() && child.is_tested(),
            PairKind::MircSubMirc => {
                parent.mirc_role.is_mirc() && child.mirc_role == MircRole::SubMirc
            }
            PairKind::SpatiotemporalMircSubMirc => {
                parent.mirc_role == MircRole::SpatiotemporalMirc
                    && child.mirc_role == MircRole::SpatiotemporalSubMirc
            }
        };
        if !keep {
            continue;
        }
        if let (Some(a), Some(b)) = (measure(parent, measure_kind), measure(child, measure_kind)) {
            out.push(PairRecord::new(
                parent,
                child,
                &tree.verb_class,
                a,
                b,
                kind,
                measure_kind,
            ));
        }
    }
    out
}

pub fn extract_all_pairs(
    trees: &[ReductionTree],
    kind: PairKind,
    measure_kind: MeasureKind,
) -> Vec<PairRecord> {
    trees
        .iter()
        .flat_map(|t| extract_pairs(t, kind, measure_kind))
        .collect()
}
