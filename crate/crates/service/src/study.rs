//! Study state and the protocol rules, free of any transport or storage.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mirc_lab_core::dataset::{
    load_dictionary, load_embeddings, load_manifest, Clip, DatasetManifest, ResponseRecord, Split,
    TrialKind,
};
use mirc_lab_core::reduction::{expand_level, label_mircs, ReductionConfig};
use mirc_lab_core::scoring::{Embeddings, Scorer, ScoringConfig, ScoringError};
use mirc_lab_core::scramble::{
    add_scrambled_variant, materialize, partition_blocks, ScramblePlan, Scrambler,
};
use mirc_lab_core::seed;
use mirc_lab_core::tree::{MircRole, NodeId, ReductionTree, Temporal};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StudyError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("study setup: {0}")]
    Setup(String),
    #[error("response for {node} was already recorded")]
    Duplicate { node: NodeId },
    #[error("expected a response for {expected}, got {got}")]
    Sequencing { expected: String, got: NodeId },
    #[error("session is excluded")]
    Excluded,
    #[error("session is complete")]
    Complete,
    #[error("not ready: {0}")]
    NotReady(String),
    #[error("no stimulus set needs more participants")]
    NoWork,
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CatchRule {
    /// Every scorable catch response must be correct.
    #[default]
    Both,
    /// At least one scorable catch response must be correct.
    AtLeastOne,
}

fn d_set_size() -> usize {
    36
}
fn d_quota() -> usize {
    20
}
fn d_practice() -> usize {
    5
}
fn d_catch() -> usize {
    2
}
fn d_fixation() -> u64 {
    500
}
fn d_prompt() -> u64 {
    4000
}
fn d_true() -> bool {
    true
}
fn d_blocks() -> usize {
    mirc_lab_core::scramble::DEFAULT_BLOCKS
}
fn d_max_words() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default)]
    pub seed: u64,
    /// Largest number of main trials in one stimulus set.
    #[serde(default = "d_set_size")]
    pub set_size: usize,
    /// Main responses needed per node from participants who passed the catch
    /// check.
    #[serde(default = "d_quota")]
    pub quota: usize,
    #[serde(default = "d_practice")]
    pub practice_count: usize,
    #[serde(default = "d_catch")]
    pub catch_count: usize,
    #[serde(default)]
    pub catch_rule: CatchRule,
    #[serde(default = "d_fixation")]
    pub fixation_ms: u64,
    #[serde(default = "d_prompt")]
    pub prompt_delay_ms: u64,
    #[serde(default = "d_true")]
    pub loop_video: bool,
    #[serde(default = "d_max_words")]
    pub max_words: usize,
    #[serde(default = "d_blocks")]
    pub scramble_blocks: usize,
    #[serde(default)]
    pub reduction: ReductionConfig,
    pub scoring: ScoringConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateStudy {
    pub manifest: PathBuf,
    pub practice_clips: Vec<String>,
    pub catch_clips: Vec<String>,
    /// Defaults to every manifest clip not used for practice or catch trials.
    #[serde(default)]
    pub test_clips: Option<Vec<String>>,
    pub config: StudyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Spatial,
    Spatiotemporal,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipState {
    pub split: Split,
    pub verb_class: String,
    pub phase: Phase,
    pub level: u8,
    pub active: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub node_id: NodeId,
    pub clip_id: String,
    pub kind: TrialKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchOutcome {
    pub node_id: NodeId,
    /// `None` when the response could not be scored.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub participant_id: String,
    pub round: u32,
    pub set_index: usize,
    pub trials: Vec<Trial>,
    pub cursor: usize,
    pub excluded: bool,
    pub catch_checked: bool,
    pub catch_outcomes: Vec<CatchOutcome>,
    pub flags: BTreeSet<String>,
    /// Idempotency key of each answered trial.
    pub keys: Vec<Option<String>>,
}

impl Session {
    pub fn is_complete(&self) -> bool {
        self.cursor >= self.trials.len()
    }

    /// Counts toward node quotas.
    pub fn is_valid(&self) -> bool {
        !self.excluded && self.catch_checked
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub node_id: NodeId,
    pub raw_text: String,
    /// Measured from prompt appearance.
    pub response_time_ms: u64,
    /// Measured from stimulus onset; responses before the prompt are flagged.
    #[serde(default)]
    pub onset_to_response_ms: Option<u64>,
    #[serde(default)]
    pub idempotency_key: Option<String>,
    /// The client could not play the media; the trial is skipped and flagged.
    #[serde(default)]
    pub media_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResponse {
    pub session_id: String,
    pub participant_id: String,
    pub node_id: NodeId,
    pub trial_kind: TrialKind,
    pub raw_text: String,
    pub response_time_ms: u64,
    pub early: bool,
    /// Skipped after a media failure; never scored.
    #[serde(default)]
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub cursor: usize,
    pub total: usize,
    pub complete: bool,
    pub excluded: bool,
    pub early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub fixation_ms: u64,
    pub prompt_delay_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextTrial {
    Trial {
        trial_index: usize,
        total_trials: usize,
        node_id: NodeId,
        kind: TrialKind,
        media_url: String,
        timing: Timing,
        loop_video: bool,
        max_words: usize,
    },
    Done,
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaBundle {
    pub node_id: NodeId,
    pub fps: f64,
    pub frame_size: (u32, u32),
    /// Crop to apply to every frame: x, y, w, h.
    pub crop: (u32, u32, u32, u32),
    /// Frame URLs in playback order.
    pub frames: Vec<String>,
    pub loop_video: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipAdvance {
    pub clip_id: String,
    pub accuracies: BTreeMap<NodeId, f64>,
    pub activated: Vec<NodeId>,
    pub pruned: Vec<NodeId>,
    pub mircs: Vec<NodeId>,
    pub scrambled: Vec<NodeId>,
    pub phase: Phase,
    pub excluded_responses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProgress {
    pub node_id: NodeId,
    pub valid_responses: usize,
    pub quota: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipProgress {
    pub clip_id: String,
    pub phase: Phase,
    pub level: u8,
    pub nodes: Vec<NodeProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub study_id: String,
    pub round: u32,
    pub stimulus_sets: Vec<Vec<NodeId>>,
    pub sessions: usize,
    pub complete_sessions: usize,
    pub excluded_sessions: usize,
    pub clips: Vec<ClipProgress>,
    pub ready: bool,
}

/// Loaded inputs that are rebuilt from the request after recovery.
pub struct Runtime {
    pub manifest: DatasetManifest,
    pub scorer: Scorer,
    pub embeddings: Option<Embeddings>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime")
            .field("manifest", &self.manifest.root)
            .finish()
    }
}

impl Runtime {
    fn load(req: &CreateStudy) -> Result<Self, StudyError> {
        let manifest =
            load_manifest(&req.manifest).map_err(|e| StudyError::Setup(e.to_string()))?;
        let dictionary = match &manifest.dictionary {
            Some(p) => Some(load_dictionary(p).map_err(|e| StudyError::Setup(e.to_string()))?),
            None => None,
        };
        let scorer = Scorer::new(req.config.scoring.clone(), dictionary.as_ref())
            .map_err(|e| StudyError::Setup(e.to_string()))?;
        let embeddings = match (&manifest.embeddings.sentence, &manifest.embeddings.word) {
            (Some(s), Some(w)) => Some(Embeddings {
                sentence: load_embeddings(s).map_err(|e| StudyError::Setup(e.to_string()))?,
                word: load_embeddings(w).map_err(|e| StudyError::Setup(e.to_string()))?,
            }),
            _ => None,
        };
        Ok(Self {
            manifest,
            scorer,
            embeddings,
        })
    }

    fn clip(&self, clip_id: &str) -> Result<&Clip, StudyError> {
        self.manifest
            .clip(clip_id)
            .ok_or_else(|| StudyError::NotFound(format!("clip {clip_id}")))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Study {
    pub study_id: String,
    pub request: CreateStudy,
    pub trees: BTreeMap<String, ReductionTree>,
    pub clips: BTreeMap<String, ClipState>,
    pub round: u32,
    pub stimulus_sets: Vec<Vec<NodeId>>,
    pub sessions: BTreeMap<String, Session>,
    /// Session ids in creation order.
    pub session_order: Vec<String>,
    pub responses: Vec<StoredResponse>,
    pub advances: Vec<Vec<ClipAdvance>>,
    #[serde(skip)]
    runtime: OnceLock<Arc<Runtime>>,
}

impl PartialEq for Study {
    fn eq(&self, other: &Self) -> bool {
        self.study_id == other.study_id
            && self.request == other.request
            && self.trees == other.trees
            && self.clips == other.clips
            && self.round == other.round
            && self.stimulus_sets == other.stimulus_sets
            && self.sessions == other.sessions
            && self.session_order == other.session_order
            && self.responses == other.responses
            && self.advances == other.advances
    }
}

fn root_node(clip_id: &str) -> NodeId {
    NodeId::intact(clip_id, &[])
}

impl Study {
    pub fn create(study_id: &str, request: CreateStudy) -> Result<Self, StudyError> {
        let runtime = Runtime::load(&request)?;
        let cfg = &request.config;
        cfg.reduction
            .validate()
            .map_err(|e| StudyError::Setup(e.to_string()))?;
        if cfg.quota == 0 || cfg.set_size == 0 {
            return Err(StudyError::Setup(
                "quota and set_size must be positive".into(),
            ));
        }
        if request.practice_clips.len() < cfg.practice_count {
            return Err(StudyError::Setup(format!(
                "{} practice clips given, {} required",
                request.practice_clips.len(),
                cfg.practice_count
            )));
        }
        if request.catch_clips.len() < cfg.catch_count {
            return Err(StudyError::Setup(format!(
                "{} catch clips given, {} required",
                request.catch_clips.len(),
                cfg.catch_count
            )));
        }
        let reserved: BTreeSet<&String> = request
            .practice_clips
            .iter()
            .chain(&request.catch_clips)
            .collect();
        if reserved.len() != request.practice_clips.len() + request.catch_clips.len() {
            return Err(StudyError::Setup(
                "practice and catch clips must be distinct".into(),
            ));
        }
        for c in &reserved {
            runtime
                .clip(c)
                .map_err(|_| StudyError::Setup(format!("unknown clip {c}")))?;
        }
        let test_clips: Vec<String> = match &request.test_clips {
            Some(t) => t.clone(),
            None => runtime
                .manifest
                .clips
                .iter()
                .map(|c| c.clip_id.clone())
                .filter(|c| !reserved.contains(c))
                .collect(),
        };
        if test_clips.is_empty() {
            return Err(StudyError::Setup("no test clips".into()));
        }
        let mut trees = BTreeMap::new();
        let mut clips = BTreeMap::new();
        for id in &test_clips {
            if reserved.contains(id) {
                return Err(StudyError::Setup(format!(
                    "clip {id} is both a test clip and a practice/catch clip"
                )));
            }
            let clip = runtime
                .clip(id)
                .map_err(|_| StudyError::Setup(format!("unknown clip {id}")))?;
            let tree = ReductionTree::new(clip);
            clips.insert(
                id.clone(),
                ClipState {
                    split: clip.split,
                    verb_class: clip.verb_class.clone(),
                    phase: Phase::Spatial,
                    level: 0,
                    active: vec![tree.root_id()],
                },
            );
            trees.insert(id.clone(), tree);
        }
        let mut study = Self {
            study_id: study_id.to_string(),
            request,
            trees,
            clips,
            round: 0,
            stimulus_sets: Vec::new(),
            sessions: BTreeMap::new(),
            session_order: Vec::new(),
            responses: Vec::new(),
            advances: Vec::new(),
            runtime: OnceLock::new(),
        };
        let _ = study.runtime.set(Arc::new(runtime));
        study.stimulus_sets = study.build_sets();
        Ok(study)
    }

    pub fn config(&self) -> &StudyConfig {
        &self.request.config
    }

    pub fn runtime(&self) -> Result<Arc<Runtime>, StudyError> {
        if let Some(rt) = self.runtime.get() {
            return Ok(rt.clone());
        }
        let rt = Arc::new(Runtime::load(&self.request)?);
        Ok(self.runtime.get_or_init(|| rt).clone())
    }

    fn active_nodes(&self) -> Vec<(NodeId, &ClipState)> {
        self.clips
            .values()
            .flat_map(|c| c.active.iter().map(move |n| (n.clone(), c)))
            .collect()
    }

    /// Greedy partition of the active nodes: at most one node per clip per
    /// set, sets no larger than `set_size`, each node placed in the set with
    /// the fewest nodes of the same split, then the fewest of the same verb,
    /// then the fewest nodes overall.
    pub fn build_sets(&self) -> Vec<Vec<NodeId>> {
        let mut nodes = self.active_nodes();
        if nodes.is_empty() {
            return Vec::new();
        }
        nodes.sort_by(|a, b| {
            (a.1.split, &a.1.verb_class, a.0.clip_id(), &a.0).cmp(&(
                b.1.split,
                &b.1.verb_class,
                b.0.clip_id(),
                &b.0,
            ))
        });
        let per_clip_max = self
            .clips
            .values()
            .map(|c| c.active.len())
            .max()
            .unwrap_or(0);
        let n_sets = per_clip_max
            .max(nodes.len().div_ceil(self.config().set_size))
            .max(1);
        let mut sets: Vec<Vec<(NodeId, Split, String)>> = vec![Vec::new(); n_sets];
        for (node, clip) in nodes {
            let candidate = (0..sets.len())
                .filter(|&i| {
                    sets[i].len() < self.config().set_size
                        && !sets[i]
                            .iter()
                            .any(|(n, _, _)| n.clip_id() == node.clip_id())
                })
                .min_by_key(|&i| {
                    let same_split = sets[i].iter().filter(|(_, s, _)| *s == clip.split).count();
                    let same_verb = sets[i]
                        .iter()
                        .filter(|(_, _, v)| *v == clip.verb_class)
                        .count();
                    (same_split, same_verb, sets[i].len(), i)
                });
            let i = match candidate {
                Some(i) => i,
                None => {
                    sets.push(Vec::new());
                    sets.len() - 1
                }
            };
            sets[i].push((node, clip.split, clip.verb_class.clone()));
        }
        sets.into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.into_iter().map(|(n, _, _)| n).collect())
            .collect()
    }

    fn valid_counts(&self) -> BTreeMap<&NodeId, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.responses {
            if r.trial_kind == TrialKind::Main
                && !r.skipped
                && self
                    .sessions
                    .get(&r.session_id)
                    .is_some_and(Session::is_valid)
            {
                *counts.entry(&r.node_id).or_default() += 1;
            }
        }
        counts
    }

    /// Creates a session for a new participant on the least-covered set.
    pub fn add_participant(
        &mut self,
        participant_id: Option<String>,
    ) -> Result<&Session, StudyError> {
        let index = self.session_order.len();
        let cfg = self.config().clone();
        let load: Vec<usize> = (0..self.stimulus_sets.len())
            .map(|i| {
                self.sessions
                    .values()
                    .filter(|s| s.round == self.round && s.set_index == i && !s.excluded)
                    .count()
            })
            .collect();
        let set_index = (0..self.stimulus_sets.len())
            .filter(|&i| load[i] < cfg.quota)
            .min_by_key(|&i| (load[i], i))
            .ok_or(StudyError::NoWork)?;
        let participant_id = participant_id.unwrap_or_else(|| format!("p{:04}", index + 1));
        if self
            .sessions
            .values()
            .any(|s| s.participant_id == participant_id)
        {
            return Err(StudyError::Setup(format!(
                "participant {participant_id} already has a session"
            )));
        }
        let session_seed =
            seed::derive_seed(cfg.seed, &format!("session:{}:{index}", self.study_id));
        let session_id = format!("s{session_seed:016x}");
        let mut rng = seed::rng(session_seed);

        let mut practice: Vec<Trial> = self.request.practice_clips[..cfg.practice_count]
            .iter()
            .map(|c| Trial {
                node_id: root_node(c),
                clip_id: c.clone(),
                kind: TrialKind::Practice,
            })
            .collect();
        seed::shuffle(&mut rng, &mut practice);
        let mut main: Vec<Trial> = self.stimulus_sets[set_index]
            .iter()
            .map(|n| Trial {
                node_id: n.clone(),
                clip_id: n.clip_id().to_string(),
                kind: TrialKind::Main,
            })
            .collect();
        seed::shuffle(&mut rng, &mut main);
        for c in &self.request.catch_clips[..cfg.catch_count] {
            let pos = seed::uniform_index(&mut rng, main.len() + 1);
            main.insert(
                pos,
                Trial {
                    node_id: root_node(c),
                    clip_id: c.clone(),
                    kind: TrialKind::Catch,
                },
            );
        }
        practice.extend(main);
        let session = Session {
            session_id: session_id.clone(),
            participant_id,
            round: self.round,
            set_index,
            trials: practice,
            cursor: 0,
            excluded: false,
            catch_checked: cfg.catch_count == 0,
            catch_outcomes: Vec::new(),
            flags: BTreeSet::new(),
            keys: Vec::new(),
        };
        self.session_order.push(session_id.clone());
        self.sessions.insert(session_id.clone(), session);
        Ok(&self.sessions[&session_id])
    }

    pub fn session(&self, session_id: &str) -> Result<&Session, StudyError> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| StudyError::NotFound(format!("session {session_id}")))
    }

    pub fn next_trial(&self, session_id: &str) -> Result<NextTrial, StudyError> {
        let s = self.session(session_id)?;
        if s.excluded {
            return Ok(NextTrial::Excluded);
        }
        let Some(t) = s.trials.get(s.cursor) else {
            return Ok(NextTrial::Done);
        };
        let cfg = self.config();
        Ok(NextTrial::Trial {
            trial_index: s.cursor,
            total_trials: s.trials.len(),
            node_id: t.node_id.clone(),
            kind: t.kind,
            media_url: format!("/v1/sessions/{session_id}/media?trial={}", s.cursor),
            timing: Timing {
                fixation_ms: cfg.fixation_ms,
                prompt_delay_ms: cfg.prompt_delay_ms,
            },
            loop_video: cfg.loop_video,
            max_words: cfg.max_words,
        })
    }

    pub fn submit(&mut self, session_id: &str, sub: Submission) -> Result<Ack, StudyError> {
        let prompt_delay = self.config().prompt_delay_ms;
        let s = self.session(session_id)?;
        if s.excluded {
            return Err(StudyError::Excluded);
        }
        let answered = &s.trials[..s.cursor];
        if let Some(pos) = answered.iter().rposition(|t| t.node_id == sub.node_id) {
            let same_key =
                sub.idempotency_key.is_some() && s.keys.get(pos) == Some(&sub.idempotency_key);
            if same_key {
                let r = self
                    .responses
                    .iter()
                    .rev()
                    .find(|r| r.session_id == session_id && r.node_id == sub.node_id)
                    .expect("answered trial has a response");
                return Ok(Ack {
                    cursor: s.cursor,
                    total: s.trials.len(),
                    complete: s.is_complete(),
                    excluded: s.excluded,
                    early: r.early,
                });
            }
            return Err(StudyError::Duplicate { node: sub.node_id });
        }
        let Some(current) = s.trials.get(s.cursor) else {
            return Err(StudyError::Complete);
        };
        if current.node_id != sub.node_id {
            return Err(StudyError::Sequencing {
                expected: current.node_id.to_string(),
                got: sub.node_id,
            });
        }
        let early = sub.onset_to_response_ms.is_some_and(|t| t < prompt_delay);
        let kind = current.kind;
        self.responses.push(StoredResponse {
            session_id: session_id.to_string(),
            participant_id: s.participant_id.clone(),
            node_id: sub.node_id.clone(),
            trial_kind: kind,
            raw_text: sub.raw_text.clone(),
            response_time_ms: sub.response_time_ms,
            early,
            skipped: sub.media_failed,
        });
        let catch_outcome = if kind == TrialKind::Catch && sub.media_failed {
            Some(CatchOutcome {
                node_id: sub.node_id.clone(),
                correct: None,
            })
        } else if kind == TrialKind::Catch {
            Some(self.score_catch(&sub)?)
        } else {
            None
        };
        let catch_count = self.config().catch_count;
        let rule = self.config().catch_rule;
        let s = self.sessions.get_mut(session_id).expect("checked above");
        s.cursor += 1;
        s.keys.push(sub.idempotency_key);
        if early {
            s.flags.insert("early_response".into());
        }
        if sub.media_failed {
            s.flags.insert("media_failure".into());
        }
        if let Some(o) = catch_outcome {
            if o.correct.is_none() {
                s.flags.insert("catch_unscorable".into());
            }
            s.catch_outcomes.push(o);
            if s.catch_outcomes.len() == catch_count {
                let scored: Vec<bool> = s.catch_outcomes.iter().filter_map(|o| o.correct).collect();
                let pass = match rule {
                    CatchRule::Both => scored.iter().all(|c| *c),
                    CatchRule::AtLeastOne => scored.is_empty() || scored.iter().any(|c| *c),
                };
                s.catch_checked = true;
                s.excluded = !pass;
                if !pass {
                    log::info!(
                        "participant {} excluded after catch trials",
                        s.participant_id
                    );
                }
            }
        }
        Ok(Ack {
            cursor: s.cursor,
            total: s.trials.len(),
            complete: s.is_complete(),
            excluded: s.excluded,
            early,
        })
    }

    fn score_catch(&self, sub: &Submission) -> Result<CatchOutcome, StudyError> {
        let rt = self.runtime()?;
        let clip = rt.clip(sub.node_id.clip_id())?;
        let correct = match &rt.embeddings {
            None => None,
            Some(emb) => {
                let rec = ResponseRecord {
                    participant_id: String::new(),
                    node_id: sub.node_id.clone(),
                    trial_kind: TrialKind::Catch,
                    response_time_ms: sub.response_time_ms,
                    raw_text: sub.raw_text.clone(),
                };
                match rt.scorer.score(&rec, &clip.gt_label, emb) {
                    Ok(s) => Some(s.correct),
                    Err(ScoringError::MissingEmbedding { .. }) => None,
                    Err(e) => return Err(StudyError::Data(e.to_string())),
                }
            }
        };
        Ok(CatchOutcome {
            node_id: sub.node_id.clone(),
            correct,
        })
    }

    /// Media description for the trial at `trial` in a session.
    pub fn media(&self, session_id: &str, trial: usize) -> Result<MediaBundle, StudyError> {
        let s = self.session(session_id)?;
        let t = s
            .trials
            .get(trial)
            .ok_or_else(|| StudyError::NotFound(format!("trial {trial}")))?;
        if trial > s.cursor {
            return Err(StudyError::Sequencing {
                expected: format!("trial {}", s.cursor),
                got: t.node_id.clone(),
            });
        }
        let rt = self.runtime()?;
        let clip = rt.clip(&t.clip_id)?;
        let (rect, temporal) = match self
            .trees
            .get(&t.clip_id)
            .and_then(|tr| tr.nodes.get(&t.node_id))
        {
            Some(n) => (n.rect, n.temporal.clone()),
            None => (
                mirc_lab_core::geometry::CropRect::full(clip.frame_size.0, clip.frame_size.1),
                Temporal::Intact,
            ),
        };
        let order: Vec<usize> = match temporal {
            Temporal::Intact => (0..clip.frame_count).collect(),
            Temporal::Scrambled { seed, permutation } => {
                let plan = ScramblePlan {
                    n_blocks: permutation.len(),
                    block_bounds: partition_blocks(clip.frame_count, permutation.len())
                        .map_err(|e| StudyError::Data(e.to_string()))?,
                    permutation,
                    seed,
                };
                materialize(clip.frame_count, &plan).map_err(|e| StudyError::Data(e.to_string()))?
            }
        };
        Ok(MediaBundle {
            node_id: t.node_id.clone(),
            fps: clip.fps,
            frame_size: clip.frame_size,
            crop: (rect.x, rect.y, rect.w, rect.h),
            frames: order
                .into_iter()
                .map(|i| format!("/v1/sessions/{session_id}/frames/{}/{i}", t.clip_id))
                .collect(),
            loop_video: self.config().loop_video,
        })
    }

    /// Frame file of a clip the session is allowed to see.
    pub fn frame_path(
        &self,
        session_id: &str,
        clip_id: &str,
        index: usize,
    ) -> Result<PathBuf, StudyError> {
        let s = self.session(session_id)?;
        if !s.trials[..(s.cursor + 1).min(s.trials.len())]
            .iter()
            .any(|t| t.clip_id == clip_id)
        {
            return Err(StudyError::NotFound(format!("clip {clip_id} in session")));
        }
        let rt = self.runtime()?;
        rt.clip(clip_id)?
            .frames
            .get(index)
            .cloned()
            .ok_or_else(|| StudyError::NotFound(format!("frame {index} of {clip_id}")))
    }

    fn pending(&self, clip_ids: &[String]) -> Vec<String> {
        let counts = self.valid_counts();
        let quota = self.config().quota;
        clip_ids
            .iter()
            .flat_map(|c| self.clips[c].active.iter())
            .filter(|n| counts.get(n).copied().unwrap_or(0) < quota)
            .map(|n| format!("{n} ({}/{quota})", counts.get(n).copied().unwrap_or(0)))
            .collect()
    }

    /// Scores the active nodes of the chosen clips (all unfinished clips when
    /// `clip` is `None`) and moves each clip to its next level or phase.
    pub fn advance(&mut self, clip: Option<&str>) -> Result<Vec<ClipAdvance>, StudyError> {
        let targets: Vec<String> = match clip {
            Some(c) => {
                let st = self
                    .clips
                    .get(c)
                    .ok_or_else(|| StudyError::NotFound(format!("clip {c}")))?;
                if st.phase == Phase::Done {
                    return Err(StudyError::NotReady(format!("clip {c} is finished")));
                }
                vec![c.to_string()]
            }
            None => self
                .clips
                .iter()
                .filter(|(_, s)| s.phase != Phase::Done)
                .map(|(c, _)| c.clone())
                .collect(),
        };
        if targets.is_empty() {
            return Err(StudyError::NotReady("every clip is finished".into()));
        }
        let pending = self.pending(&targets);
        if !pending.is_empty() {
            return Err(StudyError::NotReady(format!(
                "below quota: {}",
                pending.join(", ")
            )));
        }

        let rt = self.runtime()?;
        let emb = rt.embeddings.as_ref().ok_or_else(|| {
            StudyError::Data("manifest has no embeddings; responses cannot be scored".into())
        })?;
        let cfg = self.config().clone();
        let scrambler =
            Scrambler::new(cfg.scramble_blocks).map_err(|e| StudyError::Data(e.to_string()))?;
        let scramble_seed = seed::derive_seed(cfg.seed, "scramble");

        let mut outcomes = Vec::new();
        let mut next_trees = self.trees.clone();
        let mut next_clips = self.clips.clone();
        for clip_id in &targets {
            let clip = rt.clip(clip_id)?;
            let state = next_clips.get_mut(clip_id).expect("target exists");
            let tree = next_trees.get_mut(clip_id).expect("tree exists");
            let mut accuracies = BTreeMap::new();
            let mut excluded = 0;
            for node in &state.active {
                let (mut correct, mut total) = (0usize, 0usize);
                for r in self.responses.iter().filter(|r| {
                    &r.node_id == node
                        && r.trial_kind == TrialKind::Main
                        && !r.skipped
                        && self
                            .sessions
                            .get(&r.session_id)
                            .is_some_and(Session::is_valid)
                }) {
                    let rec = ResponseRecord {
                        participant_id: r.participant_id.clone(),
                        node_id: r.node_id.clone(),
                        trial_kind: r.trial_kind,
                        response_time_ms: r.response_time_ms,
                        raw_text: r.raw_text.clone(),
                    };
                    match rt.scorer.score(&rec, &clip.gt_label, emb) {
                        Ok(s) => {
                            total += 1;
                            correct += usize::from(s.correct);
                        }
                        Err(e) => {
                            log::warn!("response to {node} excluded: {e}");
                            excluded += 1;
                        }
                    }
                }
                if total == 0 {
                    return Err(StudyError::Data(format!(
                        "node {node} has no scorable responses"
                    )));
                }
                accuracies.insert(node.clone(), correct as f64 / total as f64);
            }
            let mut out = ClipAdvance {
                clip_id: clip_id.clone(),
                accuracies: accuracies.clone(),
                activated: Vec::new(),
                pruned: Vec::new(),
                mircs: Vec::new(),
                scrambled: Vec::new(),
                phase: state.phase,
                excluded_responses: excluded,
            };
            match state.phase {
                Phase::Spatial => {
                    let sel = expand_level(tree, state.level, &accuracies, &cfg.reduction)
                        .map_err(|e| StudyError::Data(e.to_string()))?;
                    out.pruned = sel.pruned.clone();
                    if !sel.is_empty() {
                        state.level += 1;
                        state.active = sel.selected.iter().map(|n| n.node_id.clone()).collect();
                        out.activated = state.active.clone();
                    } else {
                        let labels = label_mircs(tree, cfg.reduction.recognition_threshold)
                            .map_err(|e| StudyError::Data(e.to_string()))?;
                        out.mircs = labels.mircs.clone();
                        state.active.clear();
                        for m in &labels.mircs {
                            let plan = scrambler
                                .sample(m.as_str(), clip.frame_count, scramble_seed)
                                .map_err(|e| StudyError::Data(e.to_string()))?;
                            let id = add_scrambled_variant(tree, m, &plan)
                                .map_err(|e| StudyError::Data(e.to_string()))?;
                            state.active.push(id);
                        }
                        out.scrambled = state.active.clone();
                        out.activated = state.active.clone();
                        state.phase = if state.active.is_empty() {
                            Phase::Done
                        } else {
                            Phase::Spatiotemporal
                        };
                    }
                }
                Phase::Spatiotemporal => {
                    for (id, a) in &accuracies {
                        tree.set_accuracy(id, *a)
                            .map_err(|e| StudyError::Data(e.to_string()))?;
                    }
                    let labels = label_mircs(tree, cfg.reduction.recognition_threshold)
                        .map_err(|e| StudyError::Data(e.to_string()))?;
                    out.mircs = labels.mircs;
                    state.active.clear();
                    state.phase = Phase::Done;
                }
                Phase::Done => unreachable!("finished clips are not targeted"),
            }
            out.phase = state.phase;
            outcomes.push(out);
        }
        self.trees = next_trees;
        self.clips = next_clips;
        self.round += 1;
        self.stimulus_sets = self.build_sets();
        self.advances.push(outcomes.clone());
        Ok(outcomes)
    }

    pub fn progress(&self) -> Progress {
        let counts = self.valid_counts();
        let quota = self.config().quota;
        let clips: Vec<ClipProgress> = self
            .clips
            .iter()
            .map(|(id, c)| ClipProgress {
                clip_id: id.clone(),
                phase: c.phase,
                level: c.level,
                nodes: c
                    .active
                    .iter()
                    .map(|n| NodeProgress {
                        node_id: n.clone(),
                        valid_responses: counts.get(n).copied().unwrap_or(0),
                        quota,
                    })
                    .collect(),
            })
            .collect();
        let ready = clips.iter().any(|c| c.phase != Phase::Done)
            && clips
                .iter()
                .filter(|c| c.phase != Phase::Done)
                .all(|c| c.nodes.iter().all(|n| n.valid_responses >= quota));
        Progress {
            study_id: self.study_id.clone(),
            round: self.round,
            stimulus_sets: self.stimulus_sets.clone(),
            sessions: self.sessions.len(),
            complete_sessions: self.sessions.values().filter(|s| s.is_complete()).count(),
            excluded_sessions: self.sessions.values().filter(|s| s.excluded).count(),
            clips,
            ready,
        }
    }

    pub fn mirc_nodes(&self) -> Vec<NodeId> {
        self.trees
            .values()
            .flat_map(|t| {
                t.nodes
                    .values()
                    .filter(|n| n.mirc_role != MircRole::None)
                    .map(|n| n.node_id.clone())
            })
            .collect()
    }
}
