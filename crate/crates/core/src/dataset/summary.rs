use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, Split};
use crate::tree::{MircRole, NodeStatus, ReductionTree};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelTally {
    pub generated: usize,
    pub tested: usize,
    pub pruned: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub videos: usize,
    /// Tested quadrant videos, intact and scrambled, including Level 0.
    pub samples: usize,
    pub mircs: usize,
    pub spatial_sub_mircs: usize,
    pub spatiotemporal_quadrants: usize,
    /// Scrambled quadrants whose human accuracy fell below the threshold.
    pub spatiotemporal_unrecognisable: usize,
    pub verb_classes: BTreeSet<String>,
    pub per_level: BTreeMap<u8, LevelTally>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub splits: BTreeMap<Split, SplitSummary>,
    pub spatiotemporal_tested: usize,
    pub spatiotemporal_unrecognisable: usize,
    pub spatiotemporal_recognised: usize,
    /// Unrecognisable share of the tested scrambled quadrants; `None` when
    /// nothing was tested.
    pub unrecognisable_fraction: Option<f64>,
}

impl DatasetSummary {
    pub fn split(&self, split: Split) -> &SplitSummary {
        &self.splits[&split]
    }

    /// Rows in the layout of the dataset table.
    pub fn render_table(&self) -> String {
        let mut out = String::from("Category | Videos | Samples | MIRCs | Spatial sub-MIRCs | Spatiotemporal quadrants | Verb classes\n");
        for (split, s) in &self.splits {
            out.push_str(&format!(
                "{split} | {} | {} | {} | {} | {} ({}) | {}\n",
                s.videos,
                s.samples,
                s.mircs,
                s.spatial_sub_mircs,
                s.spatiotemporal_quadrants,
                s.spatiotemporal_unrecognisable,
                s.verb_classes
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            ));
        }
        if let Some(frac) = self.unrecognisable_fraction {
            out.push_str(&format!(
                "spatiotemporal unrecognisable: {}/{} = {:.2}%\n",
                self.spatiotemporal_unrecognisable,
                self.spatiotemporal_tested,
                frac * 100.0
            ));
        }
        out
    }
}

/// Tallies per-split counts over labeled trees.
///
/// Counts are exact tallies of node roles; nothing is inferred from ratios.
pub fn summarize(
    manifest: &DatasetManifest,
    trees: &[ReductionTree],
    threshold: f64,
) -> DatasetSummary {
    let mut splits: BTreeMap<Split, SplitSummary> = BTreeMap::new();
    splits.insert(Split::Easy, SplitSummary::default());
    splits.insert(Split::Hard, SplitSummary::default());

    for clip in &manifest.clips {
        let s = splits.get_mut(&clip.split).expect("both splits present");
        s.videos += 1;
        s.verb_classes.insert(clip.verb_class.clone());
    }

    for tree in trees {
        let split = manifest.clip(&tree.clip_id).map_or(tree.split, |c| c.split);
        let s = splits.get_mut(&split).expect("both splits present");
        for node in tree.nodes.values() {
            let tested = node.status == NodeStatus::Tested;
            if tested {
                s.samples += 1;
            }
            if node.is_scrambled() {
                if tested {
                    s.spatiotemporal_quadrants += 1;
                    if node.human_accuracy.is_some_and(|a| a < threshold) {
                        s.spatiotemporal_unrecognisable += 1;
                    }
                }
                continue;
            }
            let tally = s.per_level.entry(node.level).or_default();
            tally.generated += 1;
            match node.status {
                NodeStatus::Tested => tally.tested += 1,
                NodeStatus::PrunedPresumedUnrecognisable => tally.pruned += 1,
                NodeStatus::Untested => {}
            }
            if node.mirc_role.is_mirc() {
                s.mircs += 1;
            }
            if node.mirc_role == MircRole::SubMirc {
                s.spatial_sub_mircs += 1;
            }
        }
    }

    let tested: usize = splits.values().map(|s| s.spatiotemporal_quadrants).sum();
    let unrec: usize = splits
        .values()
        .map(|s| s.spatiotemporal_unrecognisable)
        .sum();
    DatasetSummary {
        splits,
        spatiotemporal_tested: tested,
        spatiotemporal_unrecognisable: unrec,
        spatiotemporal_recognised: tested - unrec,
        unrecognisable_fraction: (tested > 0).then(|| unrec as f64 / tested as f64),
    }
}
