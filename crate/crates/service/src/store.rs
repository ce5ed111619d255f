//! Append-only command log with periodic snapshots.
//!
//! Every accepted command is appended to `events.jsonl` before the new state
//! becomes visible. Every `snapshot_every` events the whole state is written
//! to `snapshot.json` through a temporary file and a rename. Startup loads the
//! snapshot and replays the log entries it does not cover.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use mirc_lab_core::artifact::write_atomic;

use crate::study::{Ack, ClipAdvance, CreateStudy, Session, Study, StudyError, Submission};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store at {path} line {line}: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("replaying event {seq}: {source}")]
    Replay {
        seq: u64,
        #[source]
        source: StudyError,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A state-changing request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    CreateStudy {
        study_id: String,
        request: Box<CreateStudy>,
    },
    AddParticipant {
        study_id: String,
        participant_id: Option<String>,
    },
    SubmitResponse {
        session_id: String,
        submission: Submission,
    },
    Advance {
        study_id: String,
        clip: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Created { study_id: String },
    Participant { session: Box<Session> },
    Ack(Ack),
    Advanced { clips: Vec<ClipAdvance> },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct State {
    pub studies: BTreeMap<String, Arc<Study>>,
    /// Number of log entries reflected in this state.
    pub applied: u64,
}

impl State {
    pub fn study(&self, id: &str) -> Result<&Study, StudyError> {
        self.studies
            .get(id)
            .map(Arc::as_ref)
            .ok_or_else(|| StudyError::NotFound(format!("study {id}")))
    }

    pub fn study_of_session(&self, session_id: &str) -> Result<&Study, StudyError> {
        self.studies
            .values()
            .find(|s| s.sessions.contains_key(session_id))
            .map(Arc::as_ref)
            .ok_or_else(|| StudyError::NotFound(format!("session {session_id}")))
    }

    fn study_mut(&mut self, id: &str) -> Result<&mut Study, StudyError> {
        self.studies
            .get_mut(id)
            .map(Arc::make_mut)
            .ok_or_else(|| StudyError::NotFound(format!("study {id}")))
    }

    /// Applies a command in place. Only the touched study is copied.
    pub fn apply(&mut self, cmd: &Command) -> Result<Outcome, StudyError> {
        let out = match cmd {
            Command::CreateStudy { study_id, request } => {
                if self.studies.contains_key(study_id) {
                    return Err(StudyError::Setup(format!(
                        "study {study_id} already exists"
                    )));
                }
                let study = Study::create(study_id, (**request).clone())?;
                self.studies.insert(study_id.clone(), Arc::new(study));
                Outcome::Created {
                    study_id: study_id.clone(),
                }
            }
            Command::AddParticipant {
                study_id,
                participant_id,
            } => {
                let session = self
                    .study_mut(study_id)?
                    .add_participant(participant_id.clone())?;
                Outcome::Participant {
                    session: Box::new(session.clone()),
                }
            }
            Command::SubmitResponse {
                session_id,
                submission,
            } => {
                let id = self.study_of_session(session_id)?.study_id.clone();
                Outcome::Ack(
                    self.study_mut(&id)?
                        .submit(session_id, submission.clone())?,
                )
            }
            Command::Advance { study_id, clip } => Outcome::Advanced {
                clips: self.study_mut(study_id)?.advance(clip.as_deref())?,
            },
        };
        self.applied += 1;
        Ok(out)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LogEntry {
    seq: u64,
    #[serde(flatten)]
    command: Command,
}

/// Durable storage for one service instance.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    snapshot_every: u64,
}

impl Store {
    pub const LOG: &'static str = "events.jsonl";
    pub const SNAPSHOT: &'static str = "snapshot.json";

    /// Opens or creates the store and rebuilds the state it holds.
    pub fn open(dir: impl AsRef<Path>, snapshot_every: u64) -> Result<(Self, State), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let snap_path = dir.join(Self::SNAPSHOT);
        let mut state = if snap_path.exists() {
            let text = fs::read_to_string(&snap_path).map_err(io_err(&snap_path))?;
            serde_json::from_str(&text).map_err(|e| StoreError::Corrupt {
                path: snap_path.clone(),
                line: e.line(),
                message: e.to_string(),
            })?
        } else {
            State::default()
        };
        let log_path = dir.join(Self::LOG);
        if log_path.exists() {
            let text = fs::read_to_string(&log_path).map_err(io_err(&log_path))?;
            let mut good_len = 0;
            let mut torn = false;
            for (i, line) in text.split_inclusive('\n').enumerate() {
                let complete = line.ends_with('\n');
                if line.trim().is_empty() {
                    good_len += line.len();
                    continue;
                }
                let entry: LogEntry = match serde_json::from_str(line) {
                    Ok(e) if complete => e,
                    // A torn final line from a crash mid-append is dropped.
                    Ok(_) | Err(_) if !complete => {
                        log::warn!("dropping incomplete final log line {}", i + 1);
                        torn = true;
                        break;
                    }
                    Ok(_) => unreachable!("complete lines are handled above"),
                    Err(e) => {
                        return Err(StoreError::Corrupt {
                            path: log_path.clone(),
                            line: i + 1,
                            message: e.to_string(),
                        })
                    }
                };
                good_len += line.len();
                if entry.seq < state.applied {
                    continue;
                }
                if entry.seq != state.applied {
                    return Err(StoreError::Corrupt {
                        path: log_path.clone(),
                        line: i + 1,
                        message: format!("expected seq {}, found {}", state.applied, entry.seq),
                    });
                }
                state
                    .apply(&entry.command)
                    .map_err(|source| StoreError::Replay {
                        seq: entry.seq,
                        source,
                    })?;
            }
            if torn {
                let f = OpenOptions::new()
                    .write(true)
                    .open(&log_path)
                    .map_err(io_err(&log_path))?;
                f.set_len(good_len as u64).map_err(io_err(&log_path))?;
                f.sync_all().map_err(io_err(&log_path))?;
            }
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        Ok((
            Self {
                dir,
                log,
                snapshot_every: snapshot_every.max(1),
            },
            state,
        ))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Appends the command that produced `state` (whose `applied` already
    /// counts it) and snapshots when due.
    pub fn record(&mut self, cmd: &Command, state: &State) -> Result<(), StoreError> {
        let log_path = self.dir.join(Self::LOG);
        let entry = LogEntry {
            seq: state.applied - 1,
            command: cmd.clone(),
        };
        let mut line = serde_json::to_string(&entry).expect("log entries serialize");
        line.push('\n');
        self.log
            .write_all(line.as_bytes())
            .map_err(io_err(&log_path))?;
        self.log.sync_data().map_err(io_err(&log_path))?;
        if state.applied.is_multiple_of(self.snapshot_every) {
            self.snapshot(state)?;
        }
        Ok(())
    }

    pub fn snapshot(&self, state: &State) -> Result<(), StoreError> {
        let path = self.dir.join(Self::SNAPSHOT);
        let text = serde_json::to_string(state).expect("state serializes");
        write_atomic(&path, text.as_bytes()).map_err(|e| StoreError::Corrupt {
            path: path.clone(),
            line: 0,
            message: e.to_string(),
        })
    }
}
