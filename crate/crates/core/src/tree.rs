//! Quadrant nodes and the per-clip reduction tree.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Clip, Split};
use crate::geometry::{Corner, CropRect};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} already exists")]
    DuplicateNode(NodeId),
    #[error("node {node}: {reason}")]
    Invariant { node: NodeId, reason: String },
    #[error("accuracy {value} for node {node} is outside [0, 1]")]
    AccuracyOutOfRange { node: NodeId, value: f64 },
}

/// Node identifier: `clip/L{level}/{corner_path}[/scr{seed}]`.
///
/// The corner path is written as corners joined by `-`, or `root` at Level 0.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn intact(clip_id: &str, path: &[Corner]) -> Self {
        NodeId(format!("{clip_id}/L{}/{}", path.len(), path_string(path)))
    }

    pub fn scrambled(source: &NodeId, seed: u64) -> Self {
        NodeId(format!("{}/scr{seed}", source.0))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Clip component of the id.
    pub fn clip_id(&self) -> &str {
        self.0.split('/').next().unwrap_or("")
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn path_string(path: &[Corner]) -> String {
    if path.is_empty() {
        "root".to_string()
    } else {
        path.iter()
            .map(Corner::as_str)
            .collect::<Vec<_>>()
            .join("-")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Temporal {
    Intact,
    /// Block order in output position order, 1-based block numbers.
    Scrambled {
        seed: u64,
        permutation: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Untested,
    Tested,
    PrunedPresumedUnrecognisable,
}

/// How a candidate fared in the per-level selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    Selected,
    /// Fully contained in an unrecognised node.
    Pruned {
        container: NodeId,
    },
    /// Shares a >= cluster_overlap IoU cluster with the representative.
    ClusterMember {
        representative: NodeId,
    },
    /// Cut by the per-level testing budget.
    OverBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MircRole {
    None,
    Mirc,
    SubMirc,
    /// A MIRC whose scrambled variant was tested.
    SpatiotemporalMirc,
    SpatiotemporalSubMirc,
}

impl MircRole {
    pub fn is_mirc(&self) -> bool {
        matches!(self, MircRole::Mirc | MircRole::SpatiotemporalMirc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantNode {
    pub node_id: NodeId,
    pub clip_id: String,
    pub parent: Option<NodeId>,
    pub level: u8,
    pub corner_path: Vec<Corner>,
    pub rect: CropRect,
    pub temporal: Temporal,
    pub status: NodeStatus,
    pub selection: Selection,
    pub human_accuracy: Option<f64>,
    pub model_confidence: Option<f64>,
    pub mirc_role: MircRole,
}

impl QuadrantNode {
    pub fn is_scrambled(&self) -> bool {
        matches!(self.temporal, Temporal::Scrambled { .. })
    }

    pub fn is_tested(&self) -> bool {
        self.status == NodeStatus::Tested
    }
}

/// All quadrants generated for one clip, keyed by node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionTree {
    pub clip_id: String,
    pub split: Split,
    pub verb_class: String,
    pub frame_width: u32,
    pub frame_height: u32,
    pub nodes: BTreeMap<NodeId, QuadrantNode>,
}

impl ReductionTree {
    /// A tree holding only the untested Level-0 node covering the full frame.
    pub fn new(clip: &Clip) -> Self {
        let (w, h) = clip.frame_size;
        let root_id = NodeId::intact(&clip.clip_id, &[]);
        let root = QuadrantNode {
            node_id: root_id.clone(),
            clip_id: clip.clip_id.clone(),
            parent: None,
            level: 0,
            corner_path: Vec::new(),
            rect: CropRect::full(w, h),
            temporal: Temporal::Intact,
            status: NodeStatus::Untested,
            selection: Selection::Selected,
            human_accuracy: None,
            model_confidence: None,
            mirc_role: MircRole::None,
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(root_id, root);
        Self {
            clip_id: clip.clip_id.clone(),
            split: clip.split,
            verb_class: clip.verb_class.clone(),
            frame_width: w,
            frame_height: h,
            nodes,
        }
    }

    pub fn root_id(&self) -> NodeId {
        NodeId::intact(&self.clip_id, &[])
    }

    pub fn node(&self, id: &NodeId) -> Result<&QuadrantNode, TreeError> {
        self.nodes
            .get(id)
            .ok_or_else(|| TreeError::UnknownNode(id.clone()))
    }

    pub fn node_mut(&mut self, id: &NodeId) -> Result<&mut QuadrantNode, TreeError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| TreeError::UnknownNode(id.clone()))
    }

    pub fn insert(&mut self, node: QuadrantNode) -> Result<(), TreeError> {
        if self.nodes.contains_key(&node.node_id) {
            return Err(TreeError::DuplicateNode(node.node_id));
        }
        self.nodes.insert(node.node_id.clone(), node);
        Ok(())
    }

    /// Intact children of `id`, in corner order.
    pub fn children<'a>(&'a self, id: &'a NodeId) -> impl Iterator<Item = &'a QuadrantNode> + 'a {
        let mut v: Vec<_> = self
            .nodes
            .values()
            .filter(move |n| n.parent.as_ref() == Some(id) && !n.is_scrambled())
            .collect();
        v.sort_by(|a, b| a.corner_path.cmp(&b.corner_path));
        v.into_iter()
    }

    pub fn scrambled_variants<'a>(
        &'a self,
        id: &'a NodeId,
    ) -> impl Iterator<Item = &'a QuadrantNode> + 'a {
        self.nodes
            .values()
            .filter(move |n| n.parent.as_ref() == Some(id) && n.is_scrambled())
    }

    /// Intact nodes at `level`.
    pub fn level_nodes(&self, level: u8) -> impl Iterator<Item = &QuadrantNode> {
        self.nodes
            .values()
            .filter(move |n| n.level == level && !n.is_scrambled())
    }

    pub fn max_level(&self) -> u8 {
        self.nodes.values().map(|n| n.level).max().unwrap_or(0)
    }

    /// Records a human accuracy and marks the node as tested.
    pub fn set_accuracy(&mut self, id: &NodeId, accuracy: f64) -> Result<(), TreeError> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(TreeError::AccuracyOutOfRange {
                node: id.clone(),
                value: accuracy,
            });
        }
        let node = self.node_mut(id)?;
        node.human_accuracy = Some(accuracy);
        node.status = NodeStatus::Tested;
        Ok(())
    }

    pub fn set_model_confidence(&mut self, id: &NodeId, confidence: f64) -> Result<(), TreeError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(TreeError::AccuracyOutOfRange {
                node: id.clone(),
                value: confidence,
            });
        }
        self.node_mut(id)?.model_confidence = Some(confidence);
        Ok(())
    }

    /// Checks the structural invariants of every node.
    pub fn validate(&self) -> Result<(), TreeError> {
        let bad = |node: &QuadrantNode, reason: String| TreeError::Invariant {
            node: node.node_id.clone(),
            reason,
        };
        for node in self.nodes.values() {
            if usize::from(node.level) != node.corner_path.len() {
                return Err(bad(node, "level differs from corner path length".into()));
            }
            if node
                .rect
                .validate(self.frame_width, self.frame_height)
                .is_err()
            {
                return Err(bad(node, format!("rect {} outside the frame", node.rect)));
            }
            if node.human_accuracy.is_some() != (node.status == NodeStatus::Tested) {
                return Err(bad(
                    node,
                    "human accuracy must be present exactly when tested".into(),
                ));
            }
            if let Some(parent_id) = &node.parent {
                let parent = self
                    .nodes
                    .get(parent_id)
                    .ok_or_else(|| bad(node, format!("missing parent {parent_id}")))?;
                if !parent.rect.contains(&node.rect) {
                    return Err(bad(
                        node,
                        format!("rect not contained in parent {parent_id}"),
                    ));
                }
                if node.is_scrambled() && parent.rect != node.rect {
                    return Err(bad(
                        node,
                        "scrambled node must share its source rect".into(),
                    ));
                }
            } else if node.level != 0 {
                return Err(bad(node, "non-root node without parent".into()));
            }
        }
        Ok(())
    }
}

/// Serialized collection of trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSet {
    pub seed: u64,
    pub trees: Vec<ReductionTree>,
}

impl TreeSet {
    pub fn tree(&self, clip_id: &str) -> Option<&ReductionTree> {
        self.trees.iter().find(|t| t.clip_id == clip_id)
    }

    pub fn tree_mut(&mut self, clip_id: &str) -> Option<&mut ReductionTree> {
        self.trees.iter_mut().find(|t| t.clip_id == clip_id)
    }

    pub fn find_node(&self, id: &NodeId) -> Option<&QuadrantNode> {
        self.tree(id.clip_id()).and_then(|t| t.nodes.get(id))
    }
}
