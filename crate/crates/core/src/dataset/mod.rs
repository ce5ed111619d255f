//! Shared data model and ingestion of dataset manifests.
//!
//! A manifest is a JSON document whose paths are resolved relative to the
//! manifest's own directory. Loading never drops a reference silently: any
//! frame directory, mask, map or table that cannot be found is listed in
//! [`DatasetManifest::unresolved`].

mod summary;
mod tables;
mod volume;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use summary::{summarize, DatasetSummary, LevelTally, SplitSummary};
pub use tables::{
    load_confidences, load_dictionary, load_embeddings, load_responses, normalize_key,
    ConfidenceRecord, ConfidenceTable, EmbeddingTable, ResponseRecord, TrialKind,
};
pub use volume::{
    load_conspicuity_map, load_mask_volume, ConspicuityMapSet, MapSidecar, MaskSet, Volume,
};

/// Verb classes of the released dataset.
pub const VERB_CLASSES: [&str; 14] = [
    "close", "cut", "hang", "insert", "open", "peel", "pour", "put", "remove", "serve", "take",
    "turn-off", "turn-on", "wash",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: field `{field}`: {message}")]
    Parse {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("duplicate clip_id `{0}`")]
    DuplicateClip(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("{path}, line {line}: {message}")]
    Table {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("missing artifact: {0}")]
    Missing(String),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Easy,
    Hard,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Easy => "Easy",
            Split::Hard => "Hard",
        })
    }
}

/// Segmented object categories with stored masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ObjectCategory {
    ActiveHand,
    ActiveObject,
    ContextualObjects,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 3] = [
        ObjectCategory::ActiveHand,
        ObjectCategory::ActiveObject,
        ObjectCategory::ContextualObjects,
    ];
}

/// Mid-level conspicuity channels, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    DKLColour,
    Intensity,
    Orientation,
    Colour,
    Flicker,
    Contrast,
    Motion,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::DKLColour,
        Channel::Intensity,
        Channel::Orientation,
        Channel::Colour,
        Channel::Flicker,
        Channel::Contrast,
        Channel::Motion,
    ];

    /// Channels whose values depend on frame order and therefore change
    /// under temporal scrambling.
    pub fn is_temporal(&self) -> bool {
        matches!(self, Channel::Flicker | Channel::Motion)
    }
}

/// The eleven retention features: four object categories then seven channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Feature {
    ActiveHand,
    ActiveObject,
    ContextualObjects,
    Background,
    DKLColour,
    Intensity,
    Orientation,
    Colour,
    Flicker,
    Contrast,
    Motion,
}

impl Feature {
    pub const ALL: [Feature; 11] = [
        Feature::ActiveHand,
        Feature::ActiveObject,
        Feature::ContextualObjects,
        Feature::Background,
        Feature::DKLColour,
        Feature::Intensity,
        Feature::Orientation,
        Feature::Colour,
        Feature::Flicker,
        Feature::Contrast,
        Feature::Motion,
    ];

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn name(&self) -> &'static str {
        match self {
            Feature::ActiveHand => "ActiveHand",
            Feature::ActiveObject => "ActiveObject",
            Feature::ContextualObjects => "ContextualObjects",
            Feature::Background => "Background",
            Feature::DKLColour => "DKLColour",
            Feature::Intensity => "Intensity",
            Feature::Orientation => "Orientation",
            Feature::Colour => "Colour",
            Feature::Flicker => "Flicker",
            Feature::Contrast => "Contrast",
            Feature::Motion => "Motion",
        }
    }

    pub fn channel(&self) -> Option<Channel> {
        Some(match self {
            Feature::DKLColour => Channel::DKLColour,
            Feature::Intensity => Channel::Intensity,
            Feature::Orientation => Channel::Orientation,
            Feature::Colour => Channel::Colour,
            Feature::Flicker => Channel::Flicker,
            Feature::Contrast => Channel::Contrast,
            Feature::Motion => Channel::Motion,
            _ => return None,
        })
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

impl From<Channel> for Feature {
    fn from(c: Channel) -> Self {
        match c {
            Channel::DKLColour => Feature::DKLColour,
            Channel::Intensity => Feature::Intensity,
            Channel::Orientation => Feature::Orientation,
            Channel::Colour => Feature::Colour,
            Channel::Flicker => Feature::Flicker,
            Channel::Contrast => Feature::Contrast,
            Channel::Motion => Feature::Motion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub split: Split,
    pub verb_class: String,
    pub gt_label: String,
    pub frame_dir: PathBuf,
    /// Frame files in presentation order. Empty when the directory is unresolved.
    pub frames: Vec<PathBuf>,
    pub frame_count: usize,
    pub frame_size: (u32, u32),
    pub fps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRef {
    pub clip_id: String,
    pub category: ObjectCategory,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRef {
    pub clip_id: String,
    pub channel: Channel,
    pub path: PathBuf,
    /// Set for maps recomputed on a scrambled node's own frame order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRefs {
    #[serde(default)]
    pub sentence: Option<PathBuf>,
    #[serde(default)]
    pub word: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnresolvedRef {
    pub kind: String,
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    clip_id: String,
    split: Split,
    verb_class: String,
    gt_label: String,
    frame_dir: PathBuf,
    fps: f64,
    width: u32,
    height: u32,
    #[serde(default)]
    frame_count: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    verb_classes: Option<Vec<String>>,
    clips: Vec<RawClip>,
    #[serde(default)]
    masks: Vec<MaskRef>,
    #[serde(default)]
    maps: Vec<MapRef>,
    #[serde(default)]
    confidences: Option<PathBuf>,
    #[serde(default)]
    responses: Option<PathBuf>,
    #[serde(default)]
    embeddings: EmbeddingRefs,
    #[serde(default)]
    dictionary: Option<PathBuf>,
}

/// A loaded manifest. All paths are absolute or relative to the working
/// directory (already joined with the manifest directory).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub verb_classes: Vec<String>,
    pub clips: Vec<Clip>,
    pub masks: Vec<MaskRef>,
    pub maps: Vec<MapRef>,
    pub confidences: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub embeddings: EmbeddingRefs,
    pub dictionary: Option<PathBuf>,
    pub unresolved: Vec<UnresolvedRef>,
}

impl DatasetManifest {
    pub fn clip(&self, clip_id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn split_counts(&self) -> (usize, usize) {
        let easy = self.clips.iter().filter(|c| c.split == Split::Easy).count();
        (easy, self.clips.len() - easy)
    }

    pub fn mask_dir(&self, clip_id: &str, category: ObjectCategory) -> Option<&Path> {
        self.masks
            .iter()
            .find(|m| m.clip_id == clip_id && m.category == category)
            .map(|m| m.dir.as_path())
    }

    /// Map file for a channel. `node_id` selects a scrambled node's own map.
    pub fn map_path(
        &self,
        clip_id: &str,
        channel: Channel,
        node_id: Option<&str>,
    ) -> Option<&Path> {
        self.maps
            .iter()
            .find(|m| {
                m.clip_id == clip_id && m.channel == channel && m.node_id.as_deref() == node_id
            })
            .map(|m| m.path.as_path())
    }
}

/// Frame files in a directory: numeric stems, ordered by value.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| DatasetError::io(dir, e))? {
        let path = entry.map_err(|e| DatasetError::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        if !stem.is_empty() && stem.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(n) = stem.parse::<u64>() {
                frames.push((n, path));
            }
        }
    }
    frames.sort();
    Ok(frames.into_iter().map(|(_, p)| p).collect())
}

fn resolve(root: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Parses a manifest from text. `root` is the directory paths are relative to.
pub fn parse_manifest(
    text: &str,
    root: &Path,
    source: &Path,
) -> Result<DatasetManifest, DatasetError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawManifest =
        serde_path_to_error::deserialize(de).map_err(|e| DatasetError::Parse {
            path: source.to_path_buf(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })?;

    let verb_classes = raw
        .verb_classes
        .unwrap_or_else(|| VERB_CLASSES.iter().map(|s| s.to_string()).collect());
    let vocab: BTreeSet<&str> = verb_classes.iter().map(String::as_str).collect();

    let mut unresolved = Vec::new();
    let mut seen = BTreeSet::new();
    let mut clips = Vec::with_capacity(raw.clips.len());
    for (i, rc) in raw.clips.into_iter().enumerate() {
        let field = |f: &str| format!("clips[{i}].{f}");
        if rc.clip_id.is_empty() || rc.clip_id.contains('/') {
            return Err(DatasetError::Parse {
                path: source.to_path_buf(),
                field: field("clip_id"),
                message: format!(
                    "clip id `{}` must be non-empty and contain no `/`",
                    rc.clip_id
                ),
            });
        }
        if !seen.insert(rc.clip_id.clone()) {
            return Err(DatasetError::DuplicateClip(rc.clip_id));
        }
        if !vocab.contains(rc.verb_class.as_str()) {
            return Err(DatasetError::Parse {
                path: source.to_path_buf(),
                field: field("verb_class"),
                message: format!("`{}` is not in the verb class vocabulary", rc.verb_class),
            });
        }
        if rc.width == 0
            || rc.height == 0
            || rc.fps.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        {
            return Err(DatasetError::Parse {
                path: source.to_path_buf(),
                field: field("width/height/fps"),
                message: "frame size and fps must be positive".into(),
            });
        }
        let frame_dir = resolve(root, &rc.frame_dir);
        let frames = if frame_dir.is_dir() {
            let frames = list_frames(&frame_dir)?;
            if frames.is_empty() {
                unresolved.push(UnresolvedRef {
                    kind: "frames".into(),
                    path: frame_dir.clone(),
                    reason: "directory holds no numbered frame files".into(),
                });
            }
            frames
        } else {
            unresolved.push(UnresolvedRef {
                kind: "frames".into(),
                path: frame_dir.clone(),
                reason: "directory not found".into(),
            });
            Vec::new()
        };
        let frame_count = match (rc.frame_count, frames.len()) {
            (Some(declared), n) if n > 0 && declared != n => {
                return Err(DatasetError::Integrity(format!(
                    "clip {}: declared {declared} frames but {n} found in {}",
                    rc.clip_id,
                    frame_dir.display()
                )))
            }
            (Some(declared), _) => declared,
            (None, n) => n,
        };
        clips.push(Clip {
            clip_id: rc.clip_id,
            split: rc.split,
            verb_class: rc.verb_class,
            gt_label: rc.gt_label,
            frame_dir,
            frames,
            frame_count,
            frame_size: (rc.width, rc.height),
            fps: rc.fps,
        });
    }

    let mut check = |kind: &str, p: &Path| {
        if !p.exists() {
            unresolved.push(UnresolvedRef {
                kind: kind.into(),
                path: p.to_path_buf(),
                reason: "not found".into(),
            });
        }
    };

    let mut masks = raw.masks;
    for m in &mut masks {
        m.dir = resolve(root, &m.dir);
        check("mask", &m.dir);
    }
    let mut maps = raw.maps;
    for m in &mut maps {
        m.path = resolve(root, &m.path);
        check("map", &m.path);
    }
    let confidences = raw.confidences.map(|p| resolve(root, &p));
    let responses = raw.responses.map(|p| resolve(root, &p));
    let dictionary = raw.dictionary.map(|p| resolve(root, &p));
    let embeddings = EmbeddingRefs {
        sentence: raw.embeddings.sentence.map(|p| resolve(root, &p)),
        word: raw.embeddings.word.map(|p| resolve(root, &p)),
    };
    for (kind, p) in [
        ("confidences", &confidences),
        ("responses", &responses),
        ("dictionary", &dictionary),
        ("sentence_embeddings", &embeddings.sentence),
        ("word_embeddings", &embeddings.word),
    ] {
        if let Some(p) = p {
            check(kind, p);
        }
    }
    for (kind, ids) in [
        ("mask", masks.iter().map(|m| &m.clip_id).collect::<Vec<_>>()),
        ("map", maps.iter().map(|m| &m.clip_id).collect::<Vec<_>>()),
    ] {
        if let Some(id) = ids.into_iter().find(|id| !seen.contains(id.as_str())) {
            return Err(DatasetError::Integrity(format!(
                "{kind} references unknown clip `{id}`"
            )));
        }
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        verb_classes,
        clips,
        masks,
        maps,
        confidences,
        responses,
        embeddings,
        dictionary,
        unresolved,
    })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = parse_manifest(&text, &root, path)?;
    for u in &manifest.unresolved {
        log::warn!(
            "unresolved {} reference {}: {}",
            u.kind,
            u.path.display(),
            u.reason
        );
    }
    Ok(manifest)
}
