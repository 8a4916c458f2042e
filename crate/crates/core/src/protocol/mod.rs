//! Leave-one-morph-tool-out (LOO) cross-morphing experiment.
//!
//! A round holds one morph tool out of training. The remaining tools and
//! the bona fide pool are split 70/30 with the round seed; a forest is
//! trained per feature on the 70% part and every test set of the round is
//! scored against the reserved bona fide samples.

mod run;
mod summary;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use run::{
    run_loo, run_plan, write_run_dir, CellRecord, CellStatus, FeatureCache, LooReport, RoundSplit,
    RunOptions,
};
pub use summary::{summarize, BestCell, FailedCell, FeatureBar, Summary};

use crate::classifier::ForestParams;
use crate::dataset::{MissingFilePolicy, Tool};
use crate::features::{FeatureSettings, VectorTag};
use crate::{DatasetManifest, Error, FeatureMethodId, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub held_out: Tool,
    pub train_tools: Vec<Tool>,
    pub test_sets: Vec<Tool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratio: 0.7,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooPlan {
    pub rounds: Vec<Round>,
    pub features: Vec<VectorTag>,
    pub split: SplitSpec,
    pub forest: ForestParams,
}

impl LooPlan {
    pub fn validate(&self) -> Result<()> {
        if self.rounds.is_empty() {
            return Err(Error::Protocol("plan has no rounds".into()));
        }
        if self.features.is_empty() {
            return Err(Error::Protocol("plan has no features".into()));
        }
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            return Err(Error::Protocol(format!(
                "split ratio {} not in (0, 1)",
                self.split.ratio
            )));
        }
        for r in &self.rounds {
            if r.train_tools.contains(&r.held_out) {
                return Err(Error::Protocol(format!(
                    "round `{}` trains on its held-out tool",
                    r.held_out
                )));
            }
            if r.train_tools.is_empty() {
                return Err(Error::Protocol(format!(
                    "round `{}` has no training tools",
                    r.held_out
                )));
            }
            if r.test_sets.is_empty() {
                return Err(Error::Protocol(format!(
                    "round `{}` has no test sets",
                    r.held_out
                )));
            }
        }
        self.forest.validate()
    }
}

/// One round per morph tool; each trains on every other tool and tests on
/// each of them separately.
pub fn build_default_plan(
    manifest: &DatasetManifest,
    features: Vec<VectorTag>,
    split: SplitSpec,
    forest: ForestParams,
) -> Result<LooPlan> {
    let tools = manifest.morph_tools();
    if tools.len() < 2 {
        return Err(Error::Protocol(format!(
            "LOO needs at least 2 morph tools, manifest has {}",
            tools.len()
        )));
    }
    let rounds = tools
        .iter()
        .map(|held| {
            let others: Vec<Tool> = tools.iter().filter(|t| *t != held).cloned().collect();
            Round {
                held_out: held.clone(),
                train_tools: others.clone(),
                test_sets: others,
            }
        })
        .collect();
    let plan = LooPlan {
        rounds,
        features,
        split,
        forest,
    };
    plan.validate()?;
    Ok(plan)
}

fn all_methods() -> Vec<VectorTag> {
    FeatureMethodId::ALL
        .iter()
        .map(|&m| VectorTag::Single(m))
        .collect()
}

fn default_true() -> bool {
    true
}

/// LOO run configuration file (JSON).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Feature columns; single methods or `A+B` fusions. All 14 methods
    /// when omitted.
    #[serde(default = "all_methods")]
    pub features: Vec<VectorTag>,
    #[serde(default)]
    pub feature_settings: FeatureSettings,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub forest: ForestParams,
    /// Explicit rounds; derived from the manifest when omitted.
    #[serde(default)]
    pub rounds: Option<Vec<Round>>,
    #[serde(default = "default_true")]
    pub cache: bool,
    #[serde(default)]
    pub missing_files: MissingFilePolicy,
}

impl RunConfig {
    pub fn new(manifest: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            manifest: manifest.into(),
            output_dir: output_dir.into(),
            features: all_methods(),
            feature_settings: FeatureSettings::default(),
            split: SplitSpec::default(),
            forest: ForestParams::default(),
            rounds: None,
            cache: true,
            missing_files: MissingFilePolicy::default(),
        }
    }

    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.manifest, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn plan(&self, manifest: &DatasetManifest) -> Result<LooPlan> {
        match &self.rounds {
            Some(rounds) => {
                let plan = LooPlan {
                    rounds: rounds.clone(),
                    features: self.features.clone(),
                    split: self.split,
                    forest: self.forest.clone(),
                };
                plan.validate()?;
                Ok(plan)
            }
            None => build_default_plan(
                manifest,
                self.features.clone(),
                self.split,
                self.forest.clone(),
            ),
        }
    }
}

pub(crate) fn derive_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Seed of the bona fide / morph split of a round.
pub fn round_seed(base: u64, held_out: &Tool) -> u64 {
    derive_seed(&[b"round", &base.to_le_bytes(), held_out.as_str().as_bytes()])
}

/// Forest seed of a (round, feature) cell.
pub fn cell_seed(base: u64, held_out: &Tool, feature: &VectorTag) -> u64 {
    derive_seed(&[
        b"cell",
        held_out.as_str().as_bytes(),
        feature.to_string().as_bytes(),
        &base.to_le_bytes(),
    ])
}
