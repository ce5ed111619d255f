use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::VERB_CLASSES;
use crate::metrics::{MeasureKind, PairRecord};
use crate::stats::{self, TTest};

/// Low temporal actions can be recognised from a static snapshot; high
/// temporal actions depend on the order of events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemporalCategory {
    Lta,
    Hta,
}

impl TemporalCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            TemporalCategory::Lta => "LTA",
            TemporalCategory::Hta => "HTA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalCategoryTable {
    pub categories: BTreeMap<String, TemporalCategory>,
}

impl Default for TemporalCategoryTable {
    fn default() -> Self {
        let categories = VERB_CLASSES
            .iter()
            .map(|v| {
                let c = if matches!(*v, "wash" | "cut" | "peel") {
                    TemporalCategory::Lta
                } else {
                    TemporalCategory::Hta
                };
                (v.to_string(), c)
            })
            .collect();
        Self { categories }
    }
}

impl TemporalCategoryTable {
    pub fn category(&self, verb: &str) -> Option<TemporalCategory> {
        self.categories.get(verb).copied()
    }

    /// Verbs of `vocabulary` the table does not cover.
    pub fn uncovered<'a>(&self, vocabulary: &'a [String]) -> Vec<&'a str> {
        vocabulary
            .iter()
            .filter(|v| !self.categories.contains_key(*v))
            .map(String::as_str)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub pairs: usize,
    /// Pairs whose scrambled variant scored higher than the intact MIRC.
    pub improved: usize,
    /// `improved / pairs * 100`, absent for an empty category.
    pub improved_percent: Option<f64>,
}

impl CategoryCounts {
    pub fn new(pairs: usize, improved: usize) -> Self {
        Self {
            pairs,
            improved,
            improved_percent: (pairs > 0).then(|| improved as f64 / pairs as f64 * 100.0),
        }
    }

    /// Two-decimal rendering as in the published table.
    pub fn percent_string(&self) -> String {
        self.improved_percent
            .map_or_else(|| "-".to_string(), |p| format!("{p:.2}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTemporalStats {
    pub measure: MeasureKind,
    pub categories: BTreeMap<TemporalCategory, CategoryCounts>,
    /// LTA versus HTA on per-pair gaps.
    pub welch: Option<TTest>,
    pub student: Option<TTest>,
    /// Same tests after averaging gaps per source clip.
    pub welch_per_video: Option<TTest>,
    pub student_per_video: Option<TTest>,
    pub videos: BTreeMap<TemporalCategory, usize>,
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TemporalReport {
    pub by_measure: BTreeMap<MeasureKind, ClassifierTemporalStats>,
    /// Verbs found in pairs but missing from the category table.
    pub uncategorised: Vec<String>,
}

impl TemporalReport {
    pub fn render_table(&self) -> String {
        let mut out = String::from("Category | Pairs | Human improved (%) | AI improved (%)\n");
        for cat in [TemporalCategory::Hta, TemporalCategory::Lta] {
            let cell = |m: MeasureKind| {
                self.by_measure
                    .get(&m)
                    .and_then(|s| s.categories.get(&cat))
                    .map_or("-".to_string(), |c| {
                        format!("{} ({})", c.improved, c.percent_string())
                    })
            };
            let pairs = self
                .by_measure
                .values()
                .find_map(|s| s.categories.get(&cat))
                .map_or(0, |c| c.pairs);
            out.push_str(&format!(
                "{} | {pairs} | {} | {}\n",
                cat.as_str(),
                cell(MeasureKind::HumanAccuracy),
                cell(MeasureKind::ModelConfidence)
            ));
        }
        out
    }
}

/// Improvement counts and LTA/HTA tests over MIRC / scrambled-variant pairs.
/// Improvement means `delta < 0`, i.e. the scrambled clip scored higher.
pub fn temporal_category_stats(
    pairs: &[PairRecord],
    table: &TemporalCategoryTable,
) -> TemporalReport {
    let mut report = TemporalReport::default();
    let mut grouped: BTreeMap<MeasureKind, BTreeMap<TemporalCategory, Vec<&PairRecord>>> =
        BTreeMap::new();
    for p in pairs {
        match table.category(&p.verb_class) {
            Some(c) => grouped
                .entry(p.measure_kind)
                .or_default()
                .entry(c)
                .or_default()
                .push(p),
            None => {
                if !report.uncategorised.contains(&p.verb_class) {
                    report.uncategorised.push(p.verb_class.clone());
                }
            }
        }
    }
    for (measure, cats) in grouped {
        let mut notices = Vec::new();
        let mut categories = BTreeMap::new();
        let mut gaps: BTreeMap<TemporalCategory, Vec<f64>> = BTreeMap::new();
        let mut per_video: BTreeMap<TemporalCategory, Vec<f64>> = BTreeMap::new();
        let mut videos = BTreeMap::new();
        for cat in [TemporalCategory::Hta, TemporalCategory::Lta] {
            let ps = cats.get(&cat).map(Vec::as_slice).unwrap_or(&[]);
            if ps.is_empty() {
                notices.push(format!("{} has no pairs; tests skipped", cat.as_str()));
            }
            let improved = ps.iter().filter(|p| p.delta < 0.0).count();
            categories.insert(cat, CategoryCounts::new(ps.len(), improved));
            gaps.insert(cat, ps.iter().map(|p| p.delta).collect());
            let mut by_clip: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for p in ps {
                by_clip.entry(&p.clip_id).or_default().push(p.delta);
            }
            videos.insert(cat, by_clip.len());
            per_video.insert(
                cat,
                by_clip.values().filter_map(|v| stats::mean(v)).collect(),
            );
        }
        let (l, h) = (TemporalCategory::Lta, TemporalCategory::Hta);
        report.by_measure.insert(
            measure,
            ClassifierTemporalStats {
                measure,
                categories,
                welch: stats::welch_t_test(&gaps[&l], &gaps[&h]),
                student: stats::student_t_test(&gaps[&l], &gaps[&h]),
                welch_per_video: stats::welch_t_test(&per_video[&l], &per_video[&h]),
                student_per_video: stats::student_t_test(&per_video[&l], &per_video[&h]),
                videos,
                notices,
            },
        );
    }
    report
}
