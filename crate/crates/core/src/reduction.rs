//! Hierarchical corner-crop reduction: candidate generation, overlap-based
//! selection and MIRC labeling.
//!
//! A level is expanded in four steps once every selected node at that level
//! has a human accuracy:
//!
//! 1. children are generated only under parents recognised at or above the
//!    recognition threshold;
//! 2. a child fully contained in any unrecognised node is presumed
//!    unrecognisable and pruned;
//! 3. children whose pairwise IoU reaches `cluster_overlap` are clustered and
//!    only the representative with the smallest corner path is kept;
//! 4. the survivors are ranked, first those sharing at least
//!    `containment_share` of their own area with an unrecognised node, then by
//!    descending cumulative intersection area with the other survivors, and
//!    the ranking is cut at `max_quadrants_per_level`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Clip;
use crate::geometry::{child_rect, overlap, CropRect, GeometryError};
use crate::tree::{
    MircRole, NodeId, NodeStatus, QuadrantNode, ReductionTree, Selection, Temporal, TreeError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReductionError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("invalid reduction config: {0}")]
    Config(String),
    #[error(
        "level {level} is not ready: {pending} selected node(s) lack an accuracy (first: {first})"
    )]
    LevelNotReady {
        level: u8,
        pending: usize,
        first: NodeId,
    },
    #[error("node {node} is at level {actual}, not {expected}")]
    WrongLevel {
        node: NodeId,
        expected: u8,
        actual: u8,
    },
    #[error("level {0} was already expanded")]
    AlreadyExpanded(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionConfig {
    /// Fraction of the parent's width and height kept by each child.
    pub scale_factor: f64,
    pub max_level: u8,
    pub recognition_threshold: f64,
    pub cluster_overlap: f64,
    pub containment_share: f64,
    pub max_quadrants_per_level: usize,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self {
            scale_factor: 0.8,
            max_level: 7,
            recognition_threshold: 0.5,
            cluster_overlap: 0.95,
            containment_share: 0.65,
            max_quadrants_per_level: 16,
        }
    }
}

impl ReductionConfig {
    /// Checks ranges. Returns warnings for settings that are legal but make
    /// some selection rules vacuous.
    pub fn validate(&self) -> Result<Vec<String>, ReductionError> {
        let mut warnings = Vec::new();
        let s = self.scale_factor;
        if !(0.5..1.0).contains(&s) {
            return Err(ReductionError::Config(format!(
                "scale_factor {s} must lie in [0.5, 1)"
            )));
        }
        if s == 0.5 {
            warnings.push(
                "scale_factor 0.5 yields disjoint quadrants; overlap pruning rules never fire"
                    .to_string(),
            );
        }
        for (name, v) in [
            ("recognition_threshold", self.recognition_threshold),
            ("cluster_overlap", self.cluster_overlap),
            ("containment_share", self.containment_share),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(ReductionError::Config(format!(
                    "{name} {v} must lie in (0, 1]"
                )));
            }
        }
        if self.max_quadrants_per_level == 0 {
            return Err(ReductionError::Config(
                "max_quadrants_per_level must be positive".into(),
            ));
        }
        Ok(warnings)
    }
}

/// A generated child before selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub node: QuadrantNode,
}

/// Outcome of the selection rules for one level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelSelection {
    /// Nodes to test at the next level, in ranking order.
    pub selected: Vec<QuadrantNode>,
    pub pruned: Vec<NodeId>,
    pub clustered: Vec<NodeId>,
    pub over_budget: Vec<NodeId>,
}

impl LevelSelection {
    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }
}

fn new_child(
    parent: &QuadrantNode,
    corner: crate::geometry::Corner,
    scale: f64,
) -> Result<QuadrantNode, GeometryError> {
    let rect = child_rect(&parent.rect, corner, scale)?;
    let mut path = parent.corner_path.clone();
    path.push(corner);
    Ok(QuadrantNode {
        node_id: NodeId::intact(&parent.clip_id, &path),
        clip_id: parent.clip_id.clone(),
        parent: Some(parent.node_id.clone()),
        level: parent.level + 1,
        corner_path: path,
        rect,
        temporal: Temporal::Intact,
        status: NodeStatus::Untested,
        selection: Selection::Selected,
        human_accuracy: None,
        model_confidence: None,
        mirc_role: MircRole::None,
    })
}

/// Applies the containment, clustering and ranking rules to a set of
/// candidates. `unrecognised` holds every node tested below threshold so far.
///
/// Candidates come back with their `selection` and `status` filled in; the
/// returned vector keeps the input order.
pub fn select_candidates(
    mut candidates: Vec<QuadrantNode>,
    unrecognised: &[(NodeId, CropRect)],
    config: &ReductionConfig,
) -> (Vec<QuadrantNode>, LevelSelection) {
    let mut report = LevelSelection::default();

    // containment in an unrecognised node
    for c in &mut candidates {
        if let Some((container, _)) = unrecognised.iter().find(|(_, r)| r.contains(&c.rect)) {
            c.status = NodeStatus::PrunedPresumedUnrecognisable;
            c.selection = Selection::Pruned {
                container: container.clone(),
            };
            report.pruned.push(c.node_id.clone());
        }
    }

    // IoU clusters over the survivors (single linkage)
    let alive: Vec<usize> = (0..candidates.len())
        .filter(|&i| candidates[i].selection == Selection::Selected)
        .collect();
    let mut cluster_of: Vec<usize> = (0..candidates.len()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for (ai, &a) in alive.iter().enumerate() {
        for &b in &alive[ai + 1..] {
            if overlap(&candidates[a].rect, &candidates[b].rect).iou >= config.cluster_overlap {
                let (ra, rb) = (find(&mut cluster_of, a), find(&mut cluster_of, b));
                if ra != rb {
                    cluster_of[ra.max(rb)] = ra.min(rb);
                }
            }
        }
    }
    let mut clusters: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &i in &alive {
        let root = find(&mut cluster_of, i);
        clusters.entry(root).or_default().push(i);
    }
    let mut reps = Vec::new();
    for members in clusters.values() {
        let rep = *members
            .iter()
            .min_by(|&&a, &&b| {
                candidates[a]
                    .corner_path
                    .cmp(&candidates[b].corner_path)
                    .then_with(|| candidates[a].clip_id.cmp(&candidates[b].clip_id))
            })
            .expect("clusters are non-empty");
        let rep_id = candidates[rep].node_id.clone();
        for &m in members {
            if m != rep {
                candidates[m].selection = Selection::ClusterMember {
                    representative: rep_id.clone(),
                };
                report.clustered.push(candidates[m].node_id.clone());
            }
        }
        reps.push(rep);
    }

    // ranking
    let likely_unrecognised: Vec<bool> = reps
        .iter()
        .map(|&i| {
            unrecognised.iter().any(|(_, r)| {
                overlap(&candidates[i].rect, r).share_of_first >= config.containment_share
            })
        })
        .collect();
    let cumulative: Vec<u64> = reps
        .iter()
        .map(|&i| {
            reps.iter()
                .filter(|&&j| j != i)
                .map(|&j| overlap(&candidates[i].rect, &candidates[j].rect).intersection_area)
                .sum()
        })
        .collect();
    let mut order: Vec<usize> = (0..reps.len()).collect();
    order.sort_by(|&a, &b| {
        likely_unrecognised[b]
            .cmp(&likely_unrecognised[a])
            .then_with(|| cumulative[b].cmp(&cumulative[a]))
            .then_with(|| {
                candidates[reps[a]]
                    .corner_path
                    .cmp(&candidates[reps[b]].corner_path)
            })
            .then_with(|| {
                candidates[reps[a]]
                    .clip_id
                    .cmp(&candidates[reps[b]].clip_id)
            })
    });
    for (rank, &o) in order.iter().enumerate() {
        let i = reps[o];
        if rank < config.max_quadrants_per_level {
            report.selected.push(candidates[i].clone());
        } else {
            candidates[i].selection = Selection::OverBudget;
            report.over_budget.push(candidates[i].node_id.clone());
        }
    }
    (candidates, report)
}

/// Attaches accuracies for `level`, then generates and selects the children
/// to test at `level + 1`. All candidates are inserted into the tree; the
/// selected ones are returned.
pub fn expand_level(
    tree: &mut ReductionTree,
    level: u8,
    accuracies: &BTreeMap<NodeId, f64>,
    config: &ReductionConfig,
) -> Result<LevelSelection, ReductionError> {
    config.validate()?;
    for (id, acc) in accuracies {
        let node = tree.node(id)?;
        if node.level != level || node.is_scrambled() {
            return Err(ReductionError::WrongLevel {
                node: id.clone(),
                expected: level,
                actual: node.level,
            });
        }
        tree.set_accuracy(id, *acc)?;
    }

    let pending: Vec<NodeId> = tree
        .level_nodes(level)
        .filter(|n| n.selection == Selection::Selected && n.status == NodeStatus::Untested)
        .map(|n| n.node_id.clone())
        .collect();
    if let Some(first) = pending.first() {
        return Err(ReductionError::LevelNotReady {
            level,
            pending: pending.len(),
            first: first.clone(),
        });
    }
    if level >= config.max_level {
        return Ok(LevelSelection::default());
    }
    if tree.level_nodes(level + 1).next().is_some() {
        return Err(ReductionError::AlreadyExpanded(level));
    }

    let threshold = config.recognition_threshold;
    let mut parents: Vec<&QuadrantNode> = tree
        .level_nodes(level)
        .filter(|n| n.is_tested() && n.human_accuracy.is_some_and(|a| a >= threshold))
        .collect();
    parents.sort_by(|a, b| a.corner_path.cmp(&b.corner_path));

    let mut candidates = Vec::with_capacity(parents.len() * 4);
    for parent in &parents {
        for corner in crate::geometry::Corner::ALL {
            candidates.push(new_child(parent, corner, config.scale_factor)?);
        }
    }
    let unrecognised: Vec<(NodeId, CropRect)> = tree
        .nodes
        .values()
        .filter(|n| {
            !n.is_scrambled()
                && n.level <= level
                && n.is_tested()
                && n.human_accuracy.is_some_and(|a| a < threshold)
        })
        .map(|n| (n.node_id.clone(), n.rect))
        .collect();

    let (candidates, report) = select_candidates(candidates, &unrecognised, config);
    for c in candidates {
        tree.insert(c)?;
    }
    Ok(report)
}

/// Every corner crop down to `max_level` with no selection applied.
pub fn full_expansion(
    clip: &Clip,
    scale: f64,
    max_level: u8,
) -> Result<ReductionTree, ReductionError> {
    let mut tree = ReductionTree::new(clip);
    let mut frontier = vec![tree.node(&tree.root_id())?.clone()];
    for _ in 0..max_level {
        let mut next = Vec::with_capacity(frontier.len() * 4);
        for parent in &frontier {
            for corner in crate::geometry::Corner::ALL {
                next.push(new_child(parent, corner, scale)?);
            }
        }
        for n in &next {
            tree.insert(n.clone())?;
        }
        frontier = next;
    }
    Ok(tree)
}

/// Selected intact nodes still waiting for an accuracy.
pub fn frontier(tree: &ReductionTree) -> Vec<&QuadrantNode> {
    tree.nodes
        .values()
        .filter(|n| n.selection == Selection::Selected && n.status == NodeStatus::Untested)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub mircs: Vec<NodeId>,
    pub sub_mircs: Vec<NodeId>,
    pub spatiotemporal_sub_mircs: Vec<NodeId>,
    /// Recognised nodes with no evaluated children; they cannot be confirmed
    /// as MIRCs.
    pub unresolved: Vec<NodeId>,
}

/// Assigns MIRC roles from the attached human accuracies.
///
/// A tested node at or above `threshold` is a MIRC when it has at least one
/// evaluated child and every evaluated child is below threshold, where pruned
/// children count as below threshold. Its tested children are its sub-MIRCs.
/// A MIRC whose scrambled variant was tested becomes a spatiotemporal MIRC and
/// the variant a spatiotemporal sub-MIRC.
pub fn label_mircs(
    tree: &mut ReductionTree,
    threshold: f64,
) -> Result<LabelReport, ReductionError> {
    let mut report = LabelReport::default();
    for node in tree.nodes.values_mut() {
        node.mirc_role = MircRole::None;
        if node.is_tested() && node.human_accuracy.is_none() {
            return Err(TreeError::Invariant {
                node: node.node_id.clone(),
                reason: "tested without accuracy".into(),
            }
            .into());
        }
    }

    let recognised: Vec<NodeId> = tree
        .nodes
        .values()
        .filter(|n| {
            !n.is_scrambled() && n.is_tested() && n.human_accuracy.is_some_and(|a| a >= threshold)
        })
        .map(|n| n.node_id.clone())
        .collect();

    let mut assignments: Vec<(NodeId, MircRole)> = Vec::new();
    for id in recognised {
        let evaluated: Vec<&QuadrantNode> = tree
            .children(&id)
            .filter(|c| c.status != NodeStatus::Untested)
            .collect();
        if evaluated.is_empty() {
            report.unresolved.push(id);
            continue;
        }
        let all_below = evaluated.iter().all(|c| match c.status {
            NodeStatus::PrunedPresumedUnrecognisable => true,
            _ => c.human_accuracy.is_some_and(|a| a < threshold),
        });
        if !all_below {
            continue;
        }
        let scrambled: Vec<NodeId> = tree
            .scrambled_variants(&id)
            .filter(|v| v.is_tested())
            .map(|v| v.node_id.clone())
            .collect();
        for c in evaluated.iter().filter(|c| c.is_tested()) {
            assignments.push((c.node_id.clone(), MircRole::SubMirc));
            report.sub_mircs.push(c.node_id.clone());
        }
        if scrambled.is_empty() {
            assignments.push((id.clone(), MircRole::Mirc));
        } else {
            assignments.push((id.clone(), MircRole::SpatiotemporalMirc));
            for s in scrambled {
                assignments.push((s.clone(), MircRole::SpatiotemporalSubMirc));
                report.spatiotemporal_sub_mircs.push(s);
            }
        }
        report.mircs.push(id);
    }
    for (id, role) in assignments {
        tree.node_mut(&id)?.mirc_role = role;
    }
    Ok(report)
}
