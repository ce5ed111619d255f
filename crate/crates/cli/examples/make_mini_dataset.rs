//! Writes the scripted mini dataset used by the end-to-end tests: three
//! clips, masks, three conspicuity channels, one-hot embeddings, model
//! confidences and responses for every node down to level 3.
//!
//! Usage: `cargo run -p mirc-lab --example make_mini_dataset -- <dir>`

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::json;

use mirc_lab_core::dataset::{load_manifest, Channel, ObjectCategory, Volume};
use mirc_lab_core::reduction::full_expansion;
use mirc_lab_core::seed::derive_seed;
use mirc_lab_core::tree::NodeId;

const WIDTH: u32 = 32;
const HEIGHT: u32 = 24;
const FRAMES: usize = 10;
const MAX_LEVEL: u8 = 3;
/// Root seed of the run config; scrambled node ids depend on it.
const RUN_SEED: u64 = 7;
const PARTICIPANTS: usize = 5;

struct ClipSpec {
    id: &'static str,
    split: &'static str,
    verb: &'static str,
    label: &'static str,
}

const CLIPS: [ClipSpec; 3] = [
    ClipSpec {
        id: "c01",
        split: "Easy",
        verb: "open",
        label: "open door",
    },
    ClipSpec {
        id: "c02",
        split: "Hard",
        verb: "wash",
        label: "wash cup",
    },
    ClipSpec {
        id: "c03",
        split: "Easy",
        verb: "put",
        label: "put plate",
    },
];

fn hash(key: &str) -> u64 {
    derive_seed(0, key)
}

/// Deterministic volume with values on a 1/16 grid.
fn pattern(key: &str, sparse: bool) -> Volume {
    let mut v = Volume::filled(WIDTH, HEIGHT, FRAMES, 0.0);
    for f in 0..FRAMES {
        for y in 0..HEIGHT {
            for x in 0..WIDTH {
                let h = hash(&format!("{key}:{f}:{x}:{y}"));
                let value = if sparse {
                    if h.is_multiple_of(4) {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    (h % 17) as f32 / 16.0
                };
                v.set(f, x, y, value);
            }
        }
    }
    v
}

/// Number of the scripted participants who name the action correctly. The
/// deepest level is mostly unrecognised so most clips end with MIRCs.
fn correct_count(id: &NodeId, level: u8) -> usize {
    let h = hash(id.as_str());
    match level {
        0 => PARTICIPANTS,
        MAX_LEVEL => (h % 4) as usize,
        _ => (h % (PARTICIPANTS as u64 + 1)) as usize,
    }
}

fn main() -> Result<()> {
    let dir = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "crates/cli/fixtures/mini".into()),
    );
    fs::create_dir_all(&dir)?;
    write_media(&dir)?;
    write_tables(&dir)?;
    let manifest_path = dir.join("manifest.json");
    let manifest = json!({
        "verb_classes": ["open", "wash", "put"],
        "clips": CLIPS.iter().map(|c| json!({
            "clip_id": c.id, "split": c.split, "verb_class": c.verb, "gt_label": c.label,
            "frame_dir": format!("frames/{}", c.id), "fps": 10.0, "width": WIDTH, "height": HEIGHT,
        })).collect::<Vec<_>>(),
        "masks": CLIPS.iter().flat_map(|c| ObjectCategory::ALL.map(|cat| json!({
            "clip_id": c.id, "category": cat, "dir": format!("masks/{}/{:?}", c.id, cat),
        }))).collect::<Vec<_>>(),
        "maps": CLIPS.iter().flat_map(|c| CHANNELS.map(|ch| json!({
            "clip_id": c.id, "channel": ch, "path": format!("maps/{}/{:?}.f32", c.id, ch),
        }))).collect::<Vec<_>>(),
        "confidences": "confidences.csv",
        "responses": "responses.csv",
        "embeddings": { "sentence": "sentence.csv", "word": "word.csv" },
        "dictionary": "dictionary.txt",
    });
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    write_trials(&dir, &manifest_path)?;
    println!("wrote {}", dir.display());
    Ok(())
}

const CHANNELS: [Channel; 3] = [Channel::Intensity, Channel::Flicker, Channel::Motion];

fn write_media(dir: &Path) -> Result<()> {
    for c in &CLIPS {
        pattern(&format!("{}:frames", c.id), false)
            .write_mask_pngs(&dir.join("frames").join(c.id))?;
        for cat in ObjectCategory::ALL {
            pattern(&format!("{}:{cat:?}", c.id), true)
                .write_mask_pngs(&dir.join(format!("masks/{}/{cat:?}", c.id)))?;
        }
        fs::create_dir_all(dir.join("maps").join(c.id))?;
        for ch in CHANNELS {
            pattern(&format!("{}:{ch:?}", c.id), false)
                .write_raw(&dir.join(format!("maps/{}/{ch:?}.f32", c.id)), ch)?;
        }
    }
    Ok(())
}

fn write_tables(dir: &Path) -> Result<()> {
    let words = ["open", "door", "wash", "cup", "put", "plate"];
    let mut sentence = String::from("text,d0,d1,d2\n");
    for (i, c) in CLIPS.iter().enumerate() {
        let mut v = [0; 3];
        v[i] = 1;
        writeln!(sentence, "{},{},{},{}", c.label, v[0], v[1], v[2])?;
    }
    let mut word = String::from("text,d0,d1,d2\n");
    for (i, w) in words.iter().enumerate() {
        let mut v = [0; 3];
        v[i / 2] = 1;
        writeln!(word, "{w},{},{},{}", v[0], v[1], v[2])?;
    }
    fs::write(dir.join("sentence.csv"), sentence)?;
    fs::write(dir.join("word.csv"), word)?;
    let dict: String = words.iter().map(|w| format!("{w} 100\n")).collect();
    fs::write(dir.join("dictionary.txt"), dict)?;
    Ok(())
}

fn write_trials(dir: &Path, manifest_path: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path).context("reloading the written manifest")?;
    let scramble_seed = derive_seed(RUN_SEED, "scramble");
    let mut responses =
        String::from("participant_id,node_id,trial_kind,response_time_ms,raw_text\n");
    let mut confidences = String::from("node_id,verb,confidence\n");
    for (ci, spec) in CLIPS.iter().enumerate() {
        let clip = manifest
            .clip(spec.id)
            .context("clip missing from manifest")?;
        let wrong = CLIPS[(ci + 1) % CLIPS.len()].label;
        let root = NodeId::from(format!("{}/L0/root", spec.id).as_str());
        // Catch trials: p6 misses both and is excluded.
        for p in 1..=PARTICIPANTS + 1 {
            for t in 0..2 {
                let text = if p == PARTICIPANTS + 1 {
                    wrong
                } else {
                    spec.label
                };
                writeln!(responses, "p{p},{root},catch,{},{text}", 1500 + 10 * t)?;
            }
        }
        let tree = full_expansion(clip, 0.8, MAX_LEVEL)?;
        for node in tree.nodes.values() {
            let scrambled = NodeId::scrambled(&node.node_id, scramble_seed);
            for (id, k) in [
                (&node.node_id, correct_count(&node.node_id, node.level)),
                (&scrambled, correct_count(&scrambled, 1)),
            ] {
                for p in 1..=PARTICIPANTS {
                    let text = match (p <= k, p) {
                        // A misspelling the dictionary repairs.
                        (true, 1) if spec.verb == "open" => "opne door",
                        (true, _) => spec.label,
                        (false, _) => wrong,
                    };
                    let rt = 900 + (hash(&format!("{id}:{p}")) % 2000);
                    writeln!(responses, "p{p},{id},main,{rt},{text}")?;
                }
                // The excluded participant answers everything correctly.
                writeln!(
                    responses,
                    "p{},{id},main,1000,{}",
                    PARTICIPANTS + 1,
                    spec.label
                )?;
                let g = 1 + hash(&format!("conf:{id}")) % 6;
                let rest = (8 - g) as f64 / 16.0;
                writeln!(confidences, "{id},{},{}", spec.verb, g as f64 / 8.0)?;
                for other in CLIPS.iter().filter(|o| o.verb != spec.verb) {
                    writeln!(confidences, "{id},{},{rest}", other.verb)?;
                }
            }
        }
    }
    fs::write(dir.join("responses.csv"), responses)?;
    fs::write(dir.join("confidences.csv"), confidences)?;
    Ok(())
}
