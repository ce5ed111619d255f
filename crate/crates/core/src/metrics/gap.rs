use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricsError, PairRecord};
use crate::stats::{self, Summary};
use crate::tree::{NodeId, ReductionTree};

/// A MIRC with whatever measures are attached to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MircRecord {
    pub node_id: NodeId,
    pub clip_id: String,
    pub verb_class: String,
    pub human_accuracy: Option<f64>,
    pub model_confidence: Option<f64>,
}

pub fn mirc_records(trees: &[ReductionTree]) -> Vec<MircRecord> {
    trees
        .iter()
        .flat_map(|t| {
            t.nodes
                .values()
                .filter(|n| !n.is_scrambled() && n.mirc_role.is_mirc())
                .map(|n| MircRecord {
                    node_id: n.node_id.clone(),
                    clip_id: n.clip_id.clone(),
                    verb_class: t.verb_class.clone(),
                    human_accuracy: n.human_accuracy,
                    model_confidence: n.model_confidence,
                })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOperatingPoint {
    pub verb_class: String,
    /// Target fraction: mean human accuracy over the class MIRCs.
    pub x: f64,
    pub tl: f64,
    pub n: usize,
    /// `round(x * n)`.
    pub k: usize,
    pub qualifying_mirc_ids: Vec<NodeId>,
    pub achieved_fraction: f64,
    /// `achieved_fraction - x`; exceeds `1/n` only when ties at `tl` pull in
    /// extra MIRCs.
    pub deviation: f64,
}

/// Model threshold at which the share of MIRCs with confidence `>= tl`
/// matches `x`: the `k`-th largest confidence, `k = round(x * n)`. With
/// `k = 0` the threshold sits just above the maximum.
pub fn calibrate_threshold(
    verb_class: &str,
    confidences: &[(NodeId, f64)],
    x: f64,
) -> Result<ClassOperatingPoint, MetricsError> {
    if confidences.is_empty() {
        return Err(MetricsError::NoOperatingPoint(verb_class.to_string()));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(MetricsError::Fraction(x));
    }
    let n = confidences.len();
    let mut sorted: Vec<f64> = confidences.iter().map(|(_, c)| *c).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let k = (x * n as f64).round() as usize;
    let tl = if k == 0 {
        sorted[0].next_up()
    } else {
        sorted[k - 1]
    };
    let qualifying_mirc_ids: Vec<NodeId> = confidences
        .iter()
        .filter(|(_, c)| *c >= tl)
        .map(|(id, _)| id.clone())
        .collect();
    let achieved_fraction = qualifying_mirc_ids.len() as f64 / n as f64;
    Ok(ClassOperatingPoint {
        verb_class: verb_class.to_string(),
        x,
        tl,
        n,
        k,
        achieved_fraction,
        deviation: achieved_fraction - x,
        qualifying_mirc_ids,
    })
}

/// One operating point per class from MIRC records. Classes without model
/// confidences or human accuracies yield an error entry.
pub fn class_operating_points(
    records: &[MircRecord],
) -> BTreeMap<String, Result<ClassOperatingPoint, MetricsError>> {
    let mut by_class: BTreeMap<&str, Vec<&MircRecord>> = BTreeMap::new();
    for r in records {
        by_class.entry(&r.verb_class).or_default().push(r);
    }
    by_class
        .into_iter()
        .map(|(class, recs)| {
            let accs: Vec<f64> = recs.iter().filter_map(|r| r.human_accuracy).collect();
            let confs: Vec<(NodeId, f64)> = recs
                .iter()
                .filter_map(|r| r.model_confidence.map(|c| (r.node_id.clone(), c)))
                .collect();
            let op = match stats::mean(&accs) {
                Some(x) => calibrate_threshold(class, &confs, x),
                None => Err(MetricsError::NoOperatingPoint(class.to_string())),
            };
            (class.to_string(), op)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGap {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl ClassGap {
    fn of(gaps: &[f64]) -> Option<Self> {
        Some(Self {
            n: gaps.len(),
            mean: stats::mean(gaps)?,
            std: stats::population_std(gaps)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `None` marks a class whose qualifying set is empty.
    pub classes: BTreeMap<String, Option<ClassGap>>,
    /// Classes requested but without any pairs or operating point.
    pub omitted: Vec<String>,
}

fn gaps_by_class<'a>(
    pairs: impl IntoIterator<Item = &'a PairRecord>,
) -> BTreeMap<String, Vec<f64>> {
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in pairs {
        m.entry(p.verb_class.clone()).or_default().push(p.delta);
    }
    m
}

/// Mean and std of `a_parent - a_child` per class. Classes listed in
/// `classes` that have no pairs are reported as omitted.
pub fn human_recognition_gap(pairs: &[PairRecord], classes: &[String]) -> GapReport {
    let by_class = gaps_by_class(pairs);
    let mut report = GapReport::default();
    for c in classes {
        if !by_class.contains_key(c) {
            log::warn!("class {c} has no pairs; omitted from the recognition gap");
            report.omitted.push(c.clone());
        }
    }
    for (c, gaps) in by_class {
        report.classes.insert(c, ClassGap::of(&gaps));
    }
    report
}

/// Per-class gap over pairs whose MIRC confidence reaches the class threshold.
pub fn ai_recognition_gap(
    pairs: &[PairRecord],
    operating_points: &BTreeMap<String, Result<ClassOperatingPoint, MetricsError>>,
) -> GapReport {
    let mut report = GapReport::default();
    for (class, op) in operating_points {
        let Ok(op) = op else {
            log::warn!("class {class} has no operating point; omitted from the AI gap");
            report.omitted.push(class.clone());
            continue;
        };
        let gaps: Vec<f64> = pairs
            .iter()
            .filter(|p| &p.verb_class == class && p.a_parent >= op.tl)
            .map(|p| p.delta)
            .collect();
        report.classes.insert(class.clone(), ClassGap::of(&gaps));
    }
    report
}

pub fn gap_statistics(gaps: &[f64]) -> Result<Summary, MetricsError> {
    stats::summary(gaps).ok_or(MetricsError::Empty)
}

fn cell(g: Option<&Option<ClassGap>>) -> String {
    match g {
        Some(Some(g)) => format!("{:+.2} ({:.2})", g.mean * 100.0, g.std * 100.0),
        Some(None) => "undefined".to_string(),
        None => "-".to_string(),
    }
}

/// Per-class rows, values in percent.
pub fn render_gap_table(human: &GapReport, ai: &GapReport) -> String {
    let mut classes: Vec<&String> = human.classes.keys().chain(ai.classes.keys()).collect();
    classes.sort();
    classes.dedup();
    let mut out = String::from("Verb | Human RG % (std) | AI RG % (std)\n");
    for c in classes {
        out.push_str(&format!(
            "{c} | {} | {}\n",
            cell(human.classes.get(c)),
            cell(ai.classes.get(c))
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{MeasureKind, PairKind};
    use approx::assert_abs_diff_eq;

    fn confs(vals: &[f64]) -> Vec<(NodeId, f64)> {
        vals.iter()
            .enumerate()
            .map(|(i, v)| (NodeId::from(format!("m{i}")), *v))
            .collect()
    }

    #[test]
    fn quantile_examples() {
        let op = calibrate_threshold("c", &confs(&[0.2, 0.5, 0.9]), 1.0).unwrap();
        assert_eq!(op.tl, 0.2);
        assert_eq!(op.qualifying_mirc_ids.len(), 3);
        let op = calibrate_threshold("c", &confs(&[0.1, 0.4, 0.6, 0.9]), 0.5).unwrap();
        assert_eq!((op.k, op.tl), (2, 0.6));
        assert_eq!(
            op.qualifying_mirc_ids,
            vec![NodeId::from("m2"), NodeId::from("m3")]
        );
        let op = calibrate_threshold("c", &confs(&[0.1, 0.4]), 0.0).unwrap();
        assert!(op.qualifying_mirc_ids.is_empty());
        assert!(calibrate_threshold("c", &[], 0.5).is_err());
    }

    #[test]
    fn ties_are_included_and_reported() {
        let op = calibrate_threshold("c", &confs(&[0.5, 0.5, 0.5, 0.1]), 0.25).unwrap();
        assert_eq!(op.qualifying_mirc_ids.len(), 3);
        assert_abs_diff_eq!(op.deviation, 0.5);
    }

    fn pair(class: &str, a: f64, b: f64) -> PairRecord {
        PairRecord {
            parent_node_id: NodeId::from("p"),
            child_node_id: NodeId::from("c"),
            clip_id: "x".into(),
            verb_class: class.into(),
            a_parent: a,
            a_child: b,
            delta: a - b,
            level: 2,
            pair_kind: PairKind::MircSubMirc,
            measure_kind: MeasureKind::HumanAccuracy,
        }
    }

    #[test]
    fn human_gap_and_omission() {
        let r = human_recognition_gap(
            &[pair("close", 0.65, 0.40)],
            &["close".into(), "wash".into()],
        );
        assert_abs_diff_eq!(
            r.classes["close"].as_ref().unwrap().mean,
            0.25,
            epsilon = 1e-15
        );
        assert_eq!(r.omitted, vec!["wash".to_string()]);
        let r = human_recognition_gap(&[pair("close", 0.5, 0.5)], &[]);
        assert_eq!(r.classes["close"].as_ref().unwrap().mean, 0.0);
    }

    #[test]
    fn ai_gap_filters_by_threshold() {
        let mut ops = BTreeMap::new();
        ops.insert(
            "put".to_string(),
            calibrate_threshold("put", &confs(&[0.1, 0.4, 0.6, 0.9]), 0.5),
        );
        let pairs = [
            pair("put", 0.9, 0.8),
            pair("put", 0.6, 0.7),
            pair("put", 0.4, 0.0),
        ];
        let r = ai_recognition_gap(&pairs, &ops);
        assert_abs_diff_eq!(
            r.classes["put"].as_ref().unwrap().mean,
            0.0,
            epsilon = 1e-15
        );
        let r = ai_recognition_gap(&[pair("put", 0.1, 0.0)], &ops);
        assert_eq!(r.classes["put"], None);
    }

    #[test]
    fn singleton_statistics() {
        let s = gap_statistics(&[0.3]).unwrap();
        assert_eq!((s.min, s.max, s.mean, s.std), (0.3, 0.3, 0.3, 0.0));
    }
}
