//! Feature retention, prediction transitions and temporal-category analysis.
//!
//! The retention ratio of a feature in a quadrant is `p = s_q / s_f`, where
//! `s_q` sums the feature volume over the quadrant's pixels across all frames
//! and `s_f` sums it over the whole unscrambled clip. A pixel belongs to a
//! quadrant iff its integer coordinates lie inside the rectangle.

pub mod temporal;
pub mod transitions;

pub use temporal::{
    temporal_category_stats, CategoryCounts, ClassifierTemporalStats, TemporalCategory,
    TemporalCategoryTable, TemporalReport,
};
pub use transitions::{
    correlation_matrix, detect_transitions, human_correctness, model_correctness,
    transition_delta_stats, transition_records, Classifier, CorrelationMatrix, CorrelationMethod,
    DeltaStats, Direction, FeatureDelta, Transition, TransitionRecord,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ConspicuityMapSet, Feature, MaskSet, Volume};
use crate::geometry::CropRect;
use crate::tree::{NodeId, QuadrantNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("{what} has dimensions {got:?}, expected {expected:?}")]
    DimensionMismatch {
        what: String,
        got: (u32, u32, usize),
        expected: (u32, u32, usize),
    },
    #[error("scrambled node {0} needs its own conspicuity maps; intact maps are not reused")]
    MissingScrambledMaps(NodeId),
    #[error("{0} transition(s) in this direction; at least 2 are needed for correlation")]
    TooFewTransitions(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionRatio {
    pub node_id: NodeId,
    pub feature: Feature,
    pub s_q: f64,
    pub s_f: f64,
    /// `None` when the feature is absent from the clip (`s_f = 0`).
    pub p: Option<f64>,
}

/// Ratio for one volume. `quadrant` optionally replaces the in-quadrant values;
/// it may be frame-sized (then cropped to `rect`) or already rect-sized.
pub fn ratio(
    full: &Volume,
    rect: &CropRect,
    quadrant: Option<&Volume>,
) -> Result<(f64, f64, Option<f64>), FeatureError> {
    let s_f = full.sum_all();
    let s_q = match quadrant {
        None => full.sum_rect(rect),
        Some(q) if q.dims() == full.dims() => q.sum_rect(rect),
        Some(q)
            if (q.width(), q.height()) == (rect.w, rect.h)
                && q.frame_count() == full.frame_count() =>
        {
            q.sum_all()
        }
        Some(q) => {
            return Err(FeatureError::DimensionMismatch {
                what: "quadrant map".into(),
                got: q.dims(),
                expected: full.dims(),
            })
        }
    };
    Ok((s_q, s_f, (s_f != 0.0).then(|| s_q / s_f)))
}

/// Retention ratios of every available feature for one node.
///
/// Object masks are order-independent sums, so scrambled nodes reuse them.
/// Channel maps of scrambled nodes must come from `scrambled_maps`, which
/// hold the maps recomputed on the shuffled clip; `s_f` always comes from the
/// intact maps.
pub fn node_ratios(
    node: &QuadrantNode,
    masks: Option<&MaskSet>,
    maps: Option<&ConspicuityMapSet>,
    scrambled_maps: Option<&ConspicuityMapSet>,
) -> Result<Vec<RetentionRatio>, FeatureError> {
    let mut out = Vec::new();
    let mut push = |feature: Feature, (s_q, s_f, p): (f64, f64, Option<f64>)| {
        out.push(RetentionRatio {
            node_id: node.node_id.clone(),
            feature,
            s_q,
            s_f,
            p,
        })
    };
    if let Some(m) = masks {
        for f in &Feature::ALL[..4] {
            let v = m.feature(*f).expect("object feature");
            push(*f, ratio(&v, &node.rect, None)?);
        }
    }
    if let Some(maps) = maps {
        let quad = if node.is_scrambled() {
            Some(
                scrambled_maps
                    .ok_or_else(|| FeatureError::MissingScrambledMaps(node.node_id.clone()))?,
            )
        } else {
            None
        };
        for f in &Feature::ALL[4..] {
            let ch = f.channel().expect("channel feature");
            let Some(full) = maps.get(ch) else { continue };
            let q = match quad {
                Some(qs) => Some(
                    qs.get(ch)
                        .ok_or_else(|| FeatureError::MissingScrambledMaps(node.node_id.clone()))?,
                ),
                None => None,
            };
            push(*f, ratio(full, &node.rect, q)?);
        }
    }
    Ok(out)
}

/// Ratios keyed by node and feature.
pub type RatioTable = BTreeMap<(NodeId, Feature), RetentionRatio>;

pub fn ratio_table(ratios: impl IntoIterator<Item = RetentionRatio>) -> RatioTable {
    ratios
        .into_iter()
        .map(|r| ((r.node_id.clone(), r.feature), r))
        .collect()
}
