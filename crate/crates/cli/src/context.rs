//! Resolved settings and artifact I/O shared by the subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context as _, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use mirc_lab_core::artifact::{self, Artifact};
use mirc_lab_core::dataset::{load_confidences, load_manifest, ConfidenceTable, DatasetManifest};
use mirc_lab_core::scoring::NodeAccuracy;
use mirc_lab_core::tree::{NodeId, ReductionTree};

use crate::config::{resolve_seed, RunConfig, SEED_ENV};

pub const TREES_KIND: &str = "trees";
pub const ACCURACIES_KIND: &str = "node_accuracies";

pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
    manifest_path: Option<PathBuf>,
}

impl Context {
    pub fn new(
        config: Option<&Path>,
        seed: Option<u64>,
        manifest: Option<PathBuf>,
        out: Option<PathBuf>,
    ) -> Result<Self> {
        let cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let env = std::env::var(SEED_ENV).ok();
        let seed = resolve_seed(seed, env.as_deref(), cfg.seed)?;
        let out = out
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        let manifest_path = manifest.or_else(|| cfg.manifest.clone());
        for w in cfg
            .reduction
            .validate()
            .context("invalid [reduction] settings")?
        {
            log::warn!("{w}");
        }
        Ok(Self {
            cfg,
            seed,
            out,
            manifest_path,
        })
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        let path = self
            .manifest_path
            .as_ref()
            .context("no manifest given; pass --manifest or set `manifest` in the config")?;
        load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))
    }

    /// `explicit` or the named file in the output directory.
    pub fn input(&self, explicit: Option<PathBuf>, default_name: &str) -> PathBuf {
        explicit.unwrap_or_else(|| self.out.join(default_name))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, kind: &str, data: T) -> Result<PathBuf> {
        let path = self.out.join(name);
        artifact::write_json(&path, &Artifact::new(kind, self.seed, data))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    /// CSV with a provenance comment line before the header.
    pub fn write_csv(
        &self,
        name: &str,
        kind: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<PathBuf> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let mut bytes = artifact::csv_header(kind, self.seed).into_bytes();
        bytes.extend(w.into_inner().context("flushing csv")?);
        let path = self.out.join(name);
        artifact::write_atomic(&path, &bytes)?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.out.join(name);
        artifact::write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn read<T: DeserializeOwned>(&self, path: &Path, kind: &str) -> Result<T> {
        let a: Artifact<T> = artifact::read_json(path, kind)?;
        if a.seed != self.seed {
            log::warn!(
                "{} was produced with seed {}, current seed is {}",
                path.display(),
                a.seed,
                self.seed
            );
        }
        Ok(a.data)
    }

    pub fn read_trees(&self, path: &Path) -> Result<Vec<ReductionTree>> {
        self.read(path, TREES_KIND)
    }

    pub fn read_accuracies(&self, path: &Path) -> Result<BTreeMap<NodeId, NodeAccuracy>> {
        let a: crate::pipeline::AccuracyArtifact = self.read(path, ACCURACIES_KIND)?;
        Ok(a.accuracies)
    }

    pub fn confidences(
        &self,
        manifest: &DatasetManifest,
        explicit: Option<PathBuf>,
    ) -> Result<Option<ConfidenceTable>> {
        let Some(path) = explicit.or_else(|| manifest.confidences.clone()) else {
            return Ok(None);
        };
        let table = load_confidences(&path, |id| {
            manifest.clip(id.clip_id()).map(|c| c.verb_class.clone())
        })
        .with_context(|| format!("loading confidences {}", path.display()))?;
        Ok(Some(table))
    }
}

/// Shortest round-trip float text, stable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
