//! Stimulus-side steps: scoring, reduction, scrambling and labeling.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use serde::{Deserialize, Serialize};

use mirc_lab_core::dataset::{load_dictionary, load_embeddings, load_responses, TrialKind};
use mirc_lab_core::reduction::{expand_level, full_expansion, label_mircs, LabelReport};
use mirc_lab_core::scoring::{accuracies_by_node, score_all, Embeddings, NodeAccuracy, Scorer};
use mirc_lab_core::scramble::{add_scrambled_variant, materialize, ScramblePlan, Scrambler};
use mirc_lab_core::seed::derive_seed;
use mirc_lab_core::tree::{NodeId, ReductionTree, Selection};
use mirc_lab_service::CatchRule;

use crate::context::{fmt_opt, Context, ACCURACIES_KIND, TREES_KIND};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Unscorable {
    pub participant_id: String,
    pub node_id: NodeId,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyArtifact {
    pub accuracies: BTreeMap<NodeId, NodeAccuracy>,
    pub excluded_participants: Vec<String>,
    pub unscorable: Vec<Unscorable>,
}

pub fn score(ctx: &Context, responses: Option<PathBuf>) -> Result<()> {
    let manifest = ctx.manifest()?;
    let path = responses
        .or_else(|| manifest.responses.clone())
        .context("no response table; pass --responses or set `responses` in the manifest")?;
    let records = load_responses(&path).with_context(|| format!("loading {}", path.display()))?;
    let (Some(s), Some(w)) = (&manifest.embeddings.sentence, &manifest.embeddings.word) else {
        bail!("the manifest lists no sentence and word embeddings");
    };
    let emb = Embeddings {
        sentence: load_embeddings(s)?,
        word: load_embeddings(w)?,
    };
    let dictionary = manifest
        .dictionary
        .as_deref()
        .map(load_dictionary)
        .transpose()?;
    let scorer = Scorer::new(ctx.cfg.scoring()?.clone(), dictionary.as_ref())?;
    let batch = score_all(
        &scorer,
        &records,
        |id| manifest.clip(id.clip_id()).map(|c| c.gt_label.clone()),
        &emb,
    );

    // Catch check per participant over the catch responses that could be scored.
    let mut catch: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
    for r in &batch.scored {
        if r.trial_kind == TrialKind::Catch {
            catch.entry(&r.participant_id).or_default().push(r.correct);
        }
    }
    let excluded: BTreeSet<String> = catch
        .iter()
        .filter(|(_, c)| match ctx.cfg.catch_rule {
            CatchRule::Both => !c.iter().all(|x| *x),
            CatchRule::AtLeastOne => !c.iter().any(|x| *x),
        })
        .map(|(p, _)| p.to_string())
        .collect();
    let accuracies = accuracies_by_node(&batch.scored, &excluded);

    let rows: Vec<Vec<String>> = batch
        .scored
        .iter()
        .map(|r| {
            vec![
                r.participant_id.clone(),
                r.node_id.to_string(),
                r.trial_kind.to_string(),
                r.cleaned_text.clone(),
                fmt_opt(r.cs),
                fmt_opt(r.cs_a),
                fmt_opt(r.cs_o),
                fmt_opt(r.s_sim),
                r.correct.to_string(),
                r.flags
                    .iter()
                    .map(|f| f.as_str())
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        })
        .collect();
    ctx.write_csv(
        "scored_responses.csv",
        "scored_responses",
        &[
            "participant_id",
            "node_id",
            "trial_kind",
            "cleaned_text",
            "cs",
            "cs_a",
            "cs_o",
            "s_sim",
            "correct",
            "flags",
        ],
        &rows,
    )?;
    let unscorable: Vec<Unscorable> = batch
        .excluded
        .iter()
        .map(|(r, e)| Unscorable {
            participant_id: r.participant_id.clone(),
            node_id: r.node_id.clone(),
            reason: e.to_string(),
        })
        .collect();
    for u in &unscorable {
        log::warn!(
            "unscorable response {} / {}: {}",
            u.participant_id,
            u.node_id,
            u.reason
        );
    }
    println!(
        "scored {} responses ({} unscorable); {} participants excluded by catch trials; {} nodes with accuracies",
        batch.scored.len(),
        unscorable.len(),
        excluded.len(),
        accuracies.len()
    );
    ctx.write_json(
        "node_accuracies.json",
        ACCURACIES_KIND,
        AccuracyArtifact {
            accuracies,
            excluded_participants: excluded.into_iter().collect(),
            unscorable,
        },
    )?;
    Ok(())
}

/// Replays the level-by-level search, reading each tested node's accuracy
/// from the table.
pub fn reduce_clip(
    tree: &mut ReductionTree,
    table: &BTreeMap<NodeId, NodeAccuracy>,
    ctx: &Context,
) -> Result<Vec<usize>> {
    let mut selected_per_level = Vec::new();
    let mut level = 0u8;
    loop {
        let ids: Vec<NodeId> = tree
            .level_nodes(level)
            .filter(|n| n.selection == Selection::Selected)
            .map(|n| n.node_id.clone())
            .collect();
        selected_per_level.push(ids.len());
        let mut accs = BTreeMap::new();
        for id in ids {
            let a = table.get(&id).with_context(|| {
                format!("node {id} was selected for testing but has no accuracy")
            })?;
            accs.insert(id, a.accuracy);
        }
        let sel = expand_level(tree, level, &accs, &ctx.cfg.reduction)?;
        if sel.is_empty() {
            return Ok(selected_per_level);
        }
        level += 1;
    }
}

pub fn reduce(ctx: &Context, accuracies: Option<PathBuf>, full: bool) -> Result<()> {
    let manifest = ctx.manifest()?;
    let cfg = &ctx.cfg.reduction;
    let mut trees = Vec::with_capacity(manifest.clips.len());
    if full {
        for clip in &manifest.clips {
            trees.push(full_expansion(clip, cfg.scale_factor, cfg.max_level)?);
        }
        println!(
            "generated {} nodes over {} clips",
            trees.iter().map(|t| t.nodes.len()).sum::<usize>(),
            trees.len()
        );
    } else {
        let path = ctx.input(accuracies, "node_accuracies.json");
        let table = ctx.read_accuracies(&path)?;
        println!("clip | tested per level");
        for clip in &manifest.clips {
            let mut tree = ReductionTree::new(clip);
            let counts = reduce_clip(&mut tree, &table, ctx)
                .with_context(|| format!("reducing clip {}", clip.clip_id))?;
            println!("{} | {:?}", clip.clip_id, counts);
            trees.push(tree);
        }
    }
    ctx.write_json("trees.json", TREES_KIND, trees)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlannedVariant {
    pub source: NodeId,
    pub node_id: NodeId,
    pub plan: ScramblePlan,
    pub frame_order: Vec<usize>,
}

pub fn scramble(ctx: &Context, trees: Option<PathBuf>) -> Result<()> {
    let manifest = ctx.manifest()?;
    let mut trees = ctx.read_trees(&ctx.input(trees, "trees.json"))?;
    let scrambler = Scrambler::new(ctx.cfg.scramble_blocks)?;
    let seed = derive_seed(ctx.seed, "scramble");
    let mut plans = Vec::new();
    for tree in &mut trees {
        let clip = manifest
            .clip(&tree.clip_id)
            .with_context(|| format!("tree for unknown clip {}", tree.clip_id))?;
        let labels = label_mircs(tree, ctx.cfg.reduction.recognition_threshold)?;
        for m in labels.mircs {
            if tree.scrambled_variants(&m).next().is_some() {
                continue;
            }
            let plan = scrambler.sample(m.as_str(), clip.frame_count, seed)?;
            let frame_order = materialize(clip.frame_count, &plan)?;
            let node_id = add_scrambled_variant(tree, &m, &plan)?;
            plans.push(PlannedVariant {
                source: m,
                node_id,
                plan,
                frame_order,
            });
        }
    }
    println!("{} scrambled variants planned", plans.len());
    for p in &plans {
        println!("{} -> {:?}", p.node_id, p.plan.permutation);
    }
    ctx.write_json("scramble_plans.json", "scramble_plans", &plans)?;
    ctx.write_json("trees_scrambled.json", TREES_KIND, trees)?;
    Ok(())
}

pub fn mirc_label(
    ctx: &Context,
    trees: Option<PathBuf>,
    accuracies: Option<PathBuf>,
    confidences: Option<PathBuf>,
) -> Result<()> {
    let manifest = ctx.manifest()?;
    let mut trees = ctx.read_trees(&ctx.input(trees, "trees_scrambled.json"))?;
    let table = ctx.read_accuracies(&ctx.input(accuracies, "node_accuracies.json"))?;
    let confidences = ctx.confidences(&manifest, confidences)?;
    let mut reports: BTreeMap<String, LabelReport> = BTreeMap::new();
    let mut missing_conf = 0usize;
    for tree in &mut trees {
        let scrambled: Vec<NodeId> = tree
            .nodes
            .values()
            .filter(|n| n.is_scrambled())
            .map(|n| n.node_id.clone())
            .collect();
        for id in scrambled {
            match table.get(&id) {
                Some(a) => tree.set_accuracy(&id, a.accuracy)?,
                None => log::warn!("scrambled node {id} has no accuracy; left untested"),
            }
        }
        if let Some(conf) = &confidences {
            let tested: Vec<NodeId> = tree
                .nodes
                .values()
                .filter(|n| n.is_tested())
                .map(|n| n.node_id.clone())
                .collect();
            for id in tested {
                match conf.get(&id) {
                    Some(r) => tree.set_model_confidence(&id, r.gt_verb_confidence)?,
                    None => missing_conf += 1,
                }
            }
        }
        tree.validate()?;
        let r = label_mircs(tree, ctx.cfg.reduction.recognition_threshold)?;
        reports.insert(tree.clip_id.clone(), r);
    }
    if missing_conf > 0 {
        log::warn!("{missing_conf} tested nodes have no model confidence");
    }
    println!("clip | MIRCs | sub-MIRCs | spatiotemporal sub-MIRCs | unresolved");
    for (clip, r) in &reports {
        println!(
            "{clip} | {} | {} | {} | {}",
            r.mircs.len(),
            r.sub_mircs.len(),
            r.spatiotemporal_sub_mircs.len(),
            r.unresolved.len()
        );
    }
    ctx.write_json("mirc_labels.json", "mirc_labels", &reports)?;
    ctx.write_json("labeled_trees.json", TREES_KIND, trees)?;
    Ok(())
}
