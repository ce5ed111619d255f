//! Shared run configuration: one file for every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use mirc_lab_core::features::temporal::TemporalCategoryTable;
use mirc_lab_core::reduction::ReductionConfig;
use mirc_lab_core::scoring::ScoringConfig;
use mirc_lab_core::scramble::DEFAULT_BLOCKS;
use mirc_lab_service::CatchRule;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "MIRC_LAB_SEED";

fn default_blocks() -> usize {
    DEFAULT_BLOCKS
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_blocks")]
    pub scramble_blocks: usize,
    #[serde(default)]
    pub catch_rule: CatchRule,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub scoring: Option<ScoringConfig>,
    #[serde(default)]
    pub temporal_categories: Option<TemporalCategoryTable>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            output_dir: None,
            seed: None,
            scramble_blocks: DEFAULT_BLOCKS,
            catch_rule: CatchRule::default(),
            reduction: ReductionConfig::default(),
            scoring: None,
            temporal_categories: None,
        }
    }
}

impl RunConfig {
    /// Reads TOML or JSON by extension. Relative paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => {
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            Some("json") => serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?,
            _ => bail!("config {} must end in .toml or .json", path.display()),
        };
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.manifest, &mut cfg.output_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn scoring(&self) -> Result<&ScoringConfig> {
        self.scoring
            .as_ref()
            .context("a [scoring] section with p_pen, b_bon and theta is required")
    }
}

/// Flag over environment over file over zero.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = env {
        return v
            .trim()
            .parse()
            .with_context(|| format!("{SEED_ENV}=`{v}` is not an unsigned integer"));
    }
    Ok(file.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), Some(3)).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), Some(3)).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some(3)).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), 0);
        assert!(resolve_seed(None, Some("x"), None).is_err());
    }

    #[test]
    fn toml_and_json_agree() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(
            &t,
            "manifest = \"m.json\"\nseed = 7\n[scoring]\np_pen = 0.5\nb_bon = 0.5\ntheta = 0.8\n[reduction]\nmax_level = 3\n",
        )
        .unwrap();
        let j = dir.path().join("c.json");
        std::fs::write(
            &j,
            r#"{"manifest":"m.json","seed":7,"scoring":{"p_pen":0.5,"b_bon":0.5,"theta":0.8},"reduction":{"max_level":3}}"#,
        )
        .unwrap();
        let a = RunConfig::load(&t).unwrap();
        assert_eq!(a, RunConfig::load(&j).unwrap());
        assert_eq!(a.manifest.unwrap(), dir.path().join("m.json"));
        assert_eq!(a.reduction.max_level, 3);
        assert_eq!(a.reduction.scale_factor, 0.8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let t = dir.path().join("c.toml");
        std::fs::write(&t, "sed = 7\n").unwrap();
        assert!(RunConfig::load(&t).is_err());
    }
}
