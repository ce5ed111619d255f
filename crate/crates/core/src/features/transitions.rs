use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeatureError, RatioTable};
use crate::dataset::{ConfidenceTable, Feature};
use crate::stats;
use crate::tree::{NodeId, ReductionTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Correct parent, incorrect child.
    Failure,
    /// Incorrect parent, correct child.
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Classifier {
    Human,
    Ai,
}

/// Verb-level correctness per node.
pub type Correctness = BTreeMap<NodeId, bool>;

/// Human correctness: accuracy at or above `threshold`.
pub fn human_correctness(tree: &ReductionTree, threshold: f64) -> Correctness {
    tree.nodes
        .values()
        .filter(|n| n.is_tested())
        .filter_map(|n| {
            n.human_accuracy
                .map(|a| (n.node_id.clone(), a >= threshold))
        })
        .collect()
}

/// Model correctness: the arg-max verb equals the clip's verb class.
pub fn model_correctness(tree: &ReductionTree, confidences: &ConfidenceTable) -> Correctness {
    tree.nodes
        .keys()
        .filter_map(|id| {
            let rec = confidences.get(id)?;
            Some((id.clone(), rec.predicted_verb()? == tree.verb_class))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub parent_node_id: NodeId,
    pub child_node_id: NodeId,
    pub clip_id: String,
    pub verb_class: String,
    pub level: u8,
    pub direction: Direction,
    pub classifier: Classifier,
}

/// Intact parent/child edges whose verb correctness flips. For humans, edges
/// below an incorrect parent are skipped since such children are not tested.
pub fn detect_transitions(
    tree: &ReductionTree,
    correctness: &Correctness,
    classifier: Classifier,
) -> Vec<Transition> {
    let mut out = Vec::new();
    for child in tree.nodes.values().filter(|n| !n.is_scrambled()) {
        let Some(pid) = &child.parent else { continue };
        let (Some(&pc), Some(&cc)) = (correctness.get(pid), correctness.get(&child.node_id)) else {
            continue;
        };
        if classifier == Classifier::Human && !pc {
            continue;
        }
        let direction = match (pc, cc) {
            (true, false) => Direction::Failure,
            (false, true) => Direction::Recovery,
            _ => continue,
        };
        out.push(Transition {
            parent_node_id: pid.clone(),
            child_node_id: child.node_id.clone(),
            clip_id: tree.clip_id.clone(),
            verb_class: tree.verb_class.clone(),
            level: child.level,
            direction,
            classifier,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    #[serde(flatten)]
    pub transition: Transition,
    /// `p_child - p_parent` in feature order; `None` where either ratio is
    /// undefined or missing.
    pub deltas: Vec<Option<f64>>,
}

pub fn transition_records(
    transitions: &[Transition],
    ratios: &RatioTable,
) -> Vec<TransitionRecord> {
    transitions
        .iter()
        .map(|t| TransitionRecord {
            transition: t.clone(),
            deltas: Feature::ALL
                .iter()
                .map(|f| {
                    let pc = ratios.get(&(t.child_node_id.clone(), *f))?.p?;
                    let pp = ratios.get(&(t.parent_node_id.clone(), *f))?.p?;
                    Some(pc - pp)
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDelta {
    pub feature: Feature,
    pub n: usize,
    /// `None` when every transition was excluded.
    pub mean: Option<f64>,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub classifier: Classifier,
    pub direction: Direction,
    pub transitions: usize,
    pub features: Vec<FeatureDelta>,
}

/// Mean delta per feature for every (classifier, direction) present.
pub fn transition_delta_stats(records: &[TransitionRecord]) -> Vec<DeltaStats> {
    let mut groups: BTreeMap<(Classifier, Direction), Vec<&TransitionRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.transition.classifier, r.transition.direction))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((classifier, direction), rs)| DeltaStats {
            classifier,
            direction,
            transitions: rs.len(),
            features: Feature::ALL
                .iter()
                .map(|f| {
                    let vals: Vec<f64> = rs.iter().filter_map(|r| r.deltas[f.index()]).collect();
                    FeatureDelta {
                        feature: *f,
                        n: vals.len(),
                        mean: stats::mean(&vals),
                        excluded: rs.len() - vals.len(),
                    }
                })
                .collect(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub method: CorrelationMethod,
    pub transitions: usize,
    pub features: Vec<Feature>,
    /// Symmetric; `None` for pairs with fewer than two complete observations
    /// or zero variance.
    pub r: Vec<Vec<Option<f64>>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: Feature, b: Feature) -> Option<f64> {
        self.r[a.index()][b.index()]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature");
        for f in &self.features {
            out.push(',');
            out.push_str(f.name());
        }
        out.push('\n');
        for (i, f) in self.features.iter().enumerate() {
            out.push_str(f.name());
            for v in &self.r[i] {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Feature-by-feature correlation of transition deltas, using the
/// transitions where both features are defined.
pub fn correlation_matrix(
    records: &[&TransitionRecord],
    method: CorrelationMethod,
) -> Result<CorrelationMatrix, FeatureError> {
    if records.len() < 2 {
        return Err(FeatureError::TooFewTransitions(records.len()));
    }
    let n = Feature::ALL.len();
    let mut r = vec![vec![None; n]; n];
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        for j in i..n {
            let (xs, ys): (Vec<f64>, Vec<f64>) = records
                .iter()
                .filter_map(|t| Some((t.deltas[i]?, t.deltas[j]?)))
                .unzip();
            let v = match method {
                CorrelationMethod::Pearson => stats::pearson(&xs, &ys),
                CorrelationMethod::Spearman => stats::spearman(&xs, &ys),
            };
            let v = if i == j { v.map(|_| 1.0) } else { v };
            r[i][j] = v;
            r[j][i] = v;
        }
    }
    Ok(CorrelationMatrix {
        method,
        transitions: records.len(),
        features: Feature::ALL.to_vec(),
        r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Clip, Split};
    use crate::geometry::Corner;
    use crate::reduction::full_expansion;

    fn tree() -> ReductionTree {
        let clip = Clip {
            clip_id: "c".into(),
            split: Split::Easy,
            verb_class: "open".into(),
            gt_label: "open door".into(),
            frame_dir: "f".into(),
            frames: vec![],
            frame_count: 10,
            frame_size: (100, 100),
            fps: 30.0,
        };
        full_expansion(&clip, 0.8, 1).unwrap()
    }

    fn ids(t: &ReductionTree) -> (NodeId, Vec<NodeId>) {
        (
            t.root_id(),
            Corner::ALL
                .iter()
                .map(|c| NodeId::intact("c", &[*c]))
                .collect(),
        )
    }

    #[test]
    fn uniform_correctness_has_no_flips() {
        let t = tree();
        let c: Correctness = t.nodes.keys().map(|k| (k.clone(), true)).collect();
        assert!(detect_transitions(&t, &c, Classifier::Ai).is_empty());
    }

    #[test]
    fn flips_by_classifier() {
        let t = tree();
        let (root, kids) = ids(&t);
        let mut c = Correctness::new();
        c.insert(root.clone(), false);
        c.insert(kids[0].clone(), true);
        c.insert(kids[1].clone(), false);
        let ai = detect_transitions(&t, &c, Classifier::Ai);
        assert_eq!(ai.len(), 1);
        assert_eq!(ai[0].direction, Direction::Recovery);
        assert!(detect_transitions(&t, &c, Classifier::Human).is_empty());
        c.insert(root, true);
        let h = detect_transitions(&t, &c, Classifier::Human);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].direction, Direction::Failure);
    }

    fn rec(d: Vec<Option<f64>>) -> TransitionRecord {
        TransitionRecord {
            transition: Transition {
                parent_node_id: NodeId::from("p"),
                child_node_id: NodeId::from("c"),
                clip_id: "c".into(),
                verb_class: "open".into(),
                level: 1,
                direction: Direction::Failure,
                classifier: Classifier::Ai,
            },
            deltas: d,
        }
    }

    #[test]
    fn correlation_shape() {
        let rs: Vec<TransitionRecord> = (0..5)
            .map(|i| {
                let x = i as f64;
                let mut d = vec![Some(x); 11];
                d[1] = Some(-x);
                d[2] = Some(0.0);
                rec(d)
            })
            .collect();
        let refs: Vec<&TransitionRecord> = rs.iter().collect();
        let m = correlation_matrix(&refs, CorrelationMethod::Pearson).unwrap();
        assert!((m.get(Feature::ActiveHand, Feature::Motion).unwrap() - 1.0).abs() < 1e-12);
        assert!((m.get(Feature::ActiveHand, Feature::ActiveObject).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(
            m.get(Feature::ContextualObjects, Feature::ContextualObjects),
            None
        );
        assert!(correlation_matrix(&refs[..1], CorrelationMethod::Pearson).is_err());
    }

    #[test]
    fn identity_deltas_average_zero() {
        let rs = vec![rec(vec![Some(0.0); 11]), rec(vec![None; 11])];
        let s = transition_delta_stats(&rs);
        assert_eq!(s[0].features[0].mean, Some(0.0));
        assert_eq!(s[0].features[0].excluded, 1);
    }
}
