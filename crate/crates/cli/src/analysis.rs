//! Analysis steps over labeled trees: pairs, metrics, features and counts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{Context as _, Result};
use serde::Serialize;

use mirc_lab_core::dataset::{
    load_conspicuity_map, summarize as summarize_dataset, ConspicuityMapSet, DatasetManifest,
    MaskSet, ObjectCategory,
};
use mirc_lab_core::features::temporal::temporal_category_stats;
use mirc_lab_core::features::transitions::{
    correlation_matrix, detect_transitions, human_correctness, model_correctness,
    transition_delta_stats, transition_records, Classifier, CorrelationMethod, Direction,
    TransitionRecord,
};
use mirc_lab_core::features::{node_ratios, ratio_table, RatioTable, RetentionRatio};
use mirc_lab_core::metrics::arr::reduction_rate as arr_report;
use mirc_lab_core::metrics::gap::{
    ai_recognition_gap, class_operating_points, human_recognition_gap, mirc_records,
    render_gap_table, ClassOperatingPoint, GapReport,
};
use mirc_lab_core::metrics::{extract_all_pairs, MeasureKind, PairKind, PairRecord};
use mirc_lab_core::tree::{NodeId, ReductionTree};

use crate::context::{fmt_f64, fmt_opt, Context};
use crate::{MeasureArg, MethodArg, PairKindArg};

const LABELED: &str = "labeled_trees.json";

fn pair_kind(k: PairKindArg) -> (PairKind, &'static str) {
    match k {
        PairKindArg::Any => (PairKind::AnyParentChild, "any"),
        PairKindArg::Mirc => (PairKind::MircSubMirc, "mirc"),
        PairKindArg::Spatiotemporal => (PairKind::SpatiotemporalMircSubMirc, "spatiotemporal"),
    }
}

fn measure(m: MeasureArg) -> (MeasureKind, &'static str) {
    match m {
        MeasureArg::Human => (MeasureKind::HumanAccuracy, "human"),
        MeasureArg::Model => (MeasureKind::ModelConfidence, "model"),
    }
}

pub fn pairs(
    ctx: &Context,
    trees: Option<PathBuf>,
    kind: PairKindArg,
    m: MeasureArg,
) -> Result<()> {
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let ((kind, kname), (mk, mname)) = (pair_kind(kind), measure(m));
    let pairs = extract_all_pairs(&trees, kind, mk);
    let rows: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| {
            vec![
                p.parent_node_id.to_string(),
                p.child_node_id.to_string(),
                p.clip_id.clone(),
                p.verb_class.clone(),
                fmt_f64(p.a_parent),
                fmt_f64(p.a_child),
                fmt_f64(p.delta),
                p.level.to_string(),
            ]
        })
        .collect();
    ctx.write_csv(
        &format!("pairs_{kname}_{mname}.csv"),
        "pairs",
        &[
            "parent_node_id",
            "child_node_id",
            "clip_id",
            "verb_class",
            "a_parent",
            "a_child",
            "delta",
            "level",
        ],
        &rows,
    )?;
    println!("{} {kname} pairs with {mname} measures", pairs.len());
    Ok(())
}

pub fn reduction_rate(
    ctx: &Context,
    trees: Option<PathBuf>,
    kind: PairKindArg,
    m: MeasureArg,
) -> Result<()> {
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let ((kind, kname), (mk, mname)) = (pair_kind(kind), measure(m));
    let report = arr_report(&extract_all_pairs(&trees, kind, mk));
    println!(
        "{kname}/{mname}: {} of {} pairs reduced (ARR {}), mean delta {}",
        report.positive_count,
        report.pair_count,
        report
            .arr
            .map_or("undefined".into(), |a| format!("{:.4}", a)),
        report
            .mean_delta
            .map_or("undefined".into(), |a| format!("{:.4}", a)),
    );
    ctx.write_json(
        &format!("arr_{kname}_{mname}.json"),
        "reduction_rate",
        &report,
    )?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct GapPair {
    human: GapReport,
    ai: GapReport,
}

#[derive(Debug, Serialize)]
struct GapArtifact {
    operating_points: BTreeMap<String, ClassOperatingPoint>,
    unavailable_operating_points: BTreeMap<String, String>,
    spatial: GapPair,
    spatiotemporal: GapPair,
}

pub fn recognition_gap(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let classes: Vec<String> = trees
        .iter()
        .map(|t| t.verb_class.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let ops = class_operating_points(&mirc_records(&trees));
    let gap = |kind: PairKind| GapPair {
        human: human_recognition_gap(
            &extract_all_pairs(&trees, kind, MeasureKind::HumanAccuracy),
            &classes,
        ),
        ai: ai_recognition_gap(
            &extract_all_pairs(&trees, kind, MeasureKind::ModelConfidence),
            &ops,
        ),
    };
    let artifact = GapArtifact {
        spatial: gap(PairKind::MircSubMirc),
        spatiotemporal: gap(PairKind::SpatiotemporalMircSubMirc),
        operating_points: ops
            .iter()
            .filter_map(|(c, op)| op.as_ref().ok().map(|op| (c.clone(), op.clone())))
            .collect(),
        unavailable_operating_points: ops
            .iter()
            .filter_map(|(c, op)| op.as_ref().err().map(|e| (c.clone(), e.to_string())))
            .collect(),
    };
    println!("Spatial");
    print!(
        "{}",
        render_gap_table(&artifact.spatial.human, &artifact.spatial.ai)
    );
    println!("Spatiotemporal");
    print!(
        "{}",
        render_gap_table(&artifact.spatiotemporal.human, &artifact.spatiotemporal.ai)
    );
    ctx.write_json("recognition_gap.json", "recognition_gap", &artifact)?;
    Ok(())
}

/// Masks and maps of one clip, plus maps recomputed for scrambled nodes.
struct ClipFeatures {
    masks: Option<MaskSet>,
    maps: Option<ConspicuityMapSet>,
    scrambled_maps: BTreeMap<String, ConspicuityMapSet>,
}

fn load_clip_features(manifest: &DatasetManifest, clip_id: &str) -> Result<ClipFeatures> {
    let clip = manifest
        .clip(clip_id)
        .with_context(|| format!("unknown clip {clip_id}"))?;
    let dirs: Vec<_> = ObjectCategory::ALL
        .iter()
        .filter_map(|c| manifest.mask_dir(clip_id, *c))
        .collect();
    let masks = match dirs.len() {
        3 => Some(
            MaskSet::load([dirs[0], dirs[1], dirs[2]], clip.frame_size)
                .with_context(|| format!("masks of {clip_id}"))?,
        ),
        0 => None,
        n => {
            log::warn!("clip {clip_id} has {n} of 3 mask categories; object features skipped");
            None
        }
    };
    let mut maps: Option<ConspicuityMapSet> = None;
    let mut scrambled_maps: BTreeMap<String, ConspicuityMapSet> = BTreeMap::new();
    for m in manifest.maps.iter().filter(|m| m.clip_id == clip_id) {
        let (_, vol) =
            load_conspicuity_map(&m.path).with_context(|| format!("map {}", m.path.display()))?;
        let set = match &m.node_id {
            None => maps.get_or_insert_with(ConspicuityMapSet::default),
            Some(n) => scrambled_maps.entry(n.clone()).or_default(),
        };
        set.insert(m.channel, vol)?;
    }
    Ok(ClipFeatures {
        masks,
        maps,
        scrambled_maps,
    })
}

/// Ratios for every tested node. Scrambled nodes without their own maps get
/// object features only; they are returned in the second list.
fn compute_ratios(
    manifest: &DatasetManifest,
    trees: &[ReductionTree],
) -> Result<(Vec<RetentionRatio>, Vec<NodeId>)> {
    let mut out = Vec::new();
    let mut omitted = Vec::new();
    for tree in trees {
        let f = load_clip_features(manifest, &tree.clip_id)?;
        for node in tree.nodes.values().filter(|n| n.is_tested()) {
            let own = f.scrambled_maps.get(node.node_id.as_str());
            let maps = if node.is_scrambled() && own.is_none() {
                if f.maps.is_some() {
                    omitted.push(node.node_id.clone());
                }
                None
            } else {
                f.maps.as_ref()
            };
            out.extend(node_ratios(node, f.masks.as_ref(), maps, own)?);
        }
    }
    Ok((out, omitted))
}

pub fn ratios(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let manifest = ctx.manifest()?;
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let (ratios, omitted) = compute_ratios(&manifest, &trees)?;
    let rows: Vec<Vec<String>> = ratios
        .iter()
        .map(|r| {
            vec![
                r.node_id.to_string(),
                r.feature.name().to_string(),
                fmt_f64(r.s_q),
                fmt_f64(r.s_f),
                fmt_opt(r.p),
            ]
        })
        .collect();
    ctx.write_csv(
        "retention_ratios.csv",
        "retention_ratios",
        &["node_id", "feature", "s_q", "s_f", "p"],
        &rows,
    )?;
    println!("{} ratios over {} trees", ratios.len(), trees.len());
    if !omitted.is_empty() {
        println!(
            "channel features omitted for {} scrambled nodes without their own maps: {}",
            omitted.len(),
            omitted
                .iter()
                .map(NodeId::as_str)
                .collect::<Vec<_>>()
                .join(", ")
        );
    }
    ctx.write_json("retention_omissions.json", "retention_omissions", &omitted)?;
    Ok(())
}

fn transition_set(ctx: &Context, trees: Option<PathBuf>) -> Result<Vec<TransitionRecord>> {
    let manifest = ctx.manifest()?;
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let (ratios, _) = compute_ratios(&manifest, &trees)?;
    let table: RatioTable = ratio_table(ratios);
    let confidences = ctx.confidences(&manifest, None)?;
    if confidences.is_none() {
        log::warn!("no model confidences; model transitions skipped");
    }
    let mut transitions = Vec::new();
    for tree in &trees {
        let human = human_correctness(tree, ctx.cfg.reduction.recognition_threshold);
        transitions.extend(detect_transitions(tree, &human, Classifier::Human));
        if let Some(conf) = &confidences {
            let model = model_correctness(tree, conf);
            transitions.extend(detect_transitions(tree, &model, Classifier::Ai));
        }
    }
    Ok(transition_records(&transitions, &table))
}

pub fn transitions(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let records = transition_set(ctx, trees)?;
    let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &records {
        *counts
            .entry((
                format!("{:?}", r.transition.classifier),
                format!("{:?}", r.transition.direction),
            ))
            .or_default() += 1;
    }
    for ((c, d), n) in &counts {
        println!("{c} {d}: {n}");
    }
    ctx.write_json("transitions.json", "transitions", &records)?;
    Ok(())
}

pub fn deltas(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let records = transition_set(ctx, trees)?;
    let stats = transition_delta_stats(&records);
    for s in &stats {
        println!(
            "{:?} {:?} ({} transitions)",
            s.classifier, s.direction, s.transitions
        );
        for f in &s.features {
            println!(
                "  {:<20} {:>10} (n={}, excluded={})",
                f.feature.name(),
                f.mean.map_or("-".into(), |m| format!("{m:+.4}")),
                f.n,
                f.excluded
            );
        }
    }
    ctx.write_json("feature_deltas.json", "feature_deltas", &stats)?;
    Ok(())
}

pub fn correlate(ctx: &Context, trees: Option<PathBuf>, method: MethodArg) -> Result<()> {
    let records = transition_set(ctx, trees)?;
    let (method, mname) = match method {
        MethodArg::Pearson => (CorrelationMethod::Pearson, "pearson"),
        MethodArg::Spearman => (CorrelationMethod::Spearman, "spearman"),
    };
    for classifier in [Classifier::Human, Classifier::Ai] {
        for direction in [Direction::Failure, Direction::Recovery] {
            let group: Vec<&TransitionRecord> = records
                .iter()
                .filter(|r| {
                    r.transition.classifier == classifier && r.transition.direction == direction
                })
                .collect();
            let name = format!(
                "correlation_{}_{}_{mname}.csv",
                format!("{classifier:?}").to_lowercase(),
                format!("{direction:?}").to_lowercase()
            );
            match correlation_matrix(&group, method) {
                Ok(m) => {
                    let mut text = mirc_lab_core::artifact::csv_header("correlation", ctx.seed);
                    text.push_str(&m.to_csv());
                    ctx.write_text(&name, &text)?;
                    println!("{name}: {} transitions", m.transitions);
                }
                Err(e) => println!("{classifier:?} {direction:?}: skipped ({e})"),
            }
        }
    }
    Ok(())
}

pub fn temporal(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let trees = ctx.read_trees(&ctx.input(trees, LABELED))?;
    let table = ctx.cfg.temporal_categories.clone().unwrap_or_default();
    let mut pairs: Vec<PairRecord> = extract_all_pairs(
        &trees,
        PairKind::SpatiotemporalMircSubMirc,
        MeasureKind::HumanAccuracy,
    );
    pairs.extend(extract_all_pairs(
        &trees,
        PairKind::SpatiotemporalMircSubMirc,
        MeasureKind::ModelConfidence,
    ));
    let report = temporal_category_stats(&pairs, &table);
    print!("{}", report.render_table());
    for stats in report.by_measure.values() {
        for n in &stats.notices {
            println!("{:?}: {n}", stats.measure);
        }
    }
    ctx.write_json("temporal_categories.json", "temporal_categories", &report)?;
    Ok(())
}

pub fn summarize(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let manifest = ctx.manifest()?;
    let trees = match trees {
        Some(p) => ctx.read_trees(&p)?,
        None => {
            let p = ctx.out.join(LABELED);
            if p.exists() {
                ctx.read_trees(&p)?
            } else {
                Vec::new()
            }
        }
    };
    let summary = summarize_dataset(&manifest, &trees, ctx.cfg.reduction.recognition_threshold);
    print!("{}", summary.render_table());
    ctx.write_json("summary.json", "summary", &summary)?;
    Ok(())
}
