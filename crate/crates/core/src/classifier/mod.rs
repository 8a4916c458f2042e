//! Random forest detector for bona fide vs. morph classification.
//!
//! Training is canonicalised by sorting samples by id, so the model does
//! not depend on input order. Each tree draws its bootstrap sample and
//! feature subsets from its own ChaCha8 stream seeded from the forest seed.

mod tree;

use std::collections::HashSet;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use tree::{Node, Tree};

use crate::features::{FeatureSettings, VectorTag};
use crate::metrics::OperatingPoints;
use crate::{Error, FeatureVector, Label, Result};

/// Current model file format.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Number of features evaluated per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeaturesPerSplit {
    Sqrt,
    Log2,
    All,
    Fixed(usize),
}

impl FeaturesPerSplit {
    pub fn resolve(self, dim: usize) -> usize {
        let k = match self {
            FeaturesPerSplit::Sqrt => (dim as f64).sqrt().round() as usize,
            FeaturesPerSplit::Log2 => (dim as f64).log2().round() as usize,
            FeaturesPerSplit::All => dim,
            FeaturesPerSplit::Fixed(k) => k,
        };
        k.clamp(1, dim.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeight {
    #[default]
    None,
    /// Weights inversely proportional to class frequency.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure.
    pub max_depth: Option<usize>,
    pub min_samples_leaf: usize,
    pub features_per_split: FeaturesPerSplit,
    pub bootstrap: bool,
    pub seed: u64,
    pub class_weight: ClassWeight,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: None,
            min_samples_leaf: 1,
            features_per_split: FeaturesPerSplit::Sqrt,
            bootstrap: true,
            seed: 0,
            class_weight: ClassWeight::None,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParam("n_trees must be at least 1".into()));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::InvalidParam(
                "min_samples_leaf must be at least 1".into(),
            ));
        }
        if self.max_depth == Some(0) {
            return Err(Error::InvalidParam("max_depth must be at least 1".into()));
        }
        if self.features_per_split == FeaturesPerSplit::Fixed(0) {
            return Err(Error::InvalidParam(
                "features_per_split must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Labelled training rows keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
    pub tag: Option<VectorTag>,
}

impl TrainingSet {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<Label>) -> Self {
        Self {
            ids,
            rows,
            labels,
            tag: None,
        }
    }

    pub fn from_vectors(ids: Vec<String>, vectors: Vec<FeatureVector>, labels: Vec<Label>) -> Self {
        let tag = vectors.first().map(|v| v.tag.clone());
        let rows = vectors.into_iter().map(|v| v.values).collect();
        Self {
            ids,
            rows,
            labels,
            tag,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn validate(&self) -> Result<usize> {
        let n = self.rows.len();
        if self.ids.len() != n || self.labels.len() != n {
            return Err(Error::Training(format!(
                "{} ids, {} rows and {} labels",
                self.ids.len(),
                n,
                self.labels.len()
            )));
        }
        if n < 2 {
            return Err(Error::Training("need at least 2 samples".into()));
        }
        if !self.labels.contains(&Label::Bonafide) || !self.labels.contains(&Label::Morph) {
            return Err(Error::Training("both classes must be present".into()));
        }
        let dim = self.rows[0].len();
        if dim == 0 {
            return Err(Error::Training("empty feature vectors".into()));
        }
        if let Some(row) = self.rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: row.len(),
            });
        }
        if self.rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite feature value".into()));
        }
        let mut seen = HashSet::with_capacity(n);
        for id in &self.ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        Ok(dim)
    }
}

/// SHA-256 over the sorted training ids, newline separated.
pub fn training_digest<S: AsRef<str>>(ids: &[S]) -> String {
    let mut sorted: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Morph probability for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub id: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestModel {
    pub format_version: u32,
    pub feature_dim: usize,
    pub method: Option<VectorTag>,
    pub params: ForestParams,
    pub training_digest: String,
    /// Extractor settings used to build the training vectors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_settings: Option<FeatureSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operating_points: Option<OperatingPoints>,
    pub trees: Vec<Tree>,
}

pub fn train_forest(set: &TrainingSet, params: &ForestParams) -> Result<ForestModel> {
    params.validate()?;
    let dim = set.validate()?;
    let n = set.len();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| set.ids[a].cmp(&set.ids[b]));
    let cols: Vec<Vec<f64>> = (0..dim)
        .map(|f| order.iter().map(|&i| set.rows[i][f]).collect())
        .collect();
    let is_morph: Vec<bool> = order
        .iter()
        .map(|&i| set.labels[i] == Label::Morph)
        .collect();

    let class_weight = match params.class_weight {
        ClassWeight::None => [1.0, 1.0],
        ClassWeight::Balanced => {
            let n_m = is_morph.iter().filter(|&&m| m).count() as f64;
            let n_bf = n as f64 - n_m;
            [n as f64 / (2.0 * n_bf), n as f64 / (2.0 * n_m)]
        }
    };
    let grow = tree::GrowParams {
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: params.features_per_split.resolve(dim),
        class_weight,
    };
    let data = tree::Columns {
        cols: &cols,
        is_morph: &is_morph,
    };

    let mut seeder = ChaCha8Rng::seed_from_u64(params.seed);
    let seeds: Vec<u64> = (0..params.n_trees).map(|_| seeder.random()).collect();
    let trees = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let counts = if params.bootstrap {
                let mut c = vec![0usize; n];
                for _ in 0..n {
                    c[rng.random_range(0..n)] += 1;
                }
                c
            } else {
                vec![1usize; n]
            };
            tree::grow(&data, &grow, &counts, &mut rng)
        })
        .collect();

    Ok(ForestModel {
        format_version: MODEL_FORMAT_VERSION,
        feature_dim: dim,
        method: set.tag.clone(),
        params: params.clone(),
        training_digest: training_digest(&set.ids),
        feature_settings: None,
        operating_points: None,
        trees,
    })
}

impl ForestModel {
    /// Mean leaf `P(morph)` over all trees.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.feature_dim {
            return Err(Error::DimMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((sum / self.trees.len() as f64).clamp(0.0, 1.0))
    }

    /// Per-tree leaf `P(morph)`.
    pub fn tree_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.feature_dim {
            return Err(Error::DimMismatch {
                expected: self.feature_dim,
                actual: x.len(),
            });
        }
        Ok(self.trees.iter().map(|t| t.predict(x)).collect())
    }

    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec(self)?)
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            format_version: u32,
        }
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| Error::ModelFormat(format!("unreadable header: {e}")))?;
        if header.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "format version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                header.format_version
            )));
        }
        let model: ForestModel =
            serde_json::from_slice(bytes).map_err(|e| Error::ModelFormat(e.to_string()))?;
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ModelFormat(m));
        if self.trees.is_empty() {
            return bad("no trees".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim is 0".into());
        }
        for (t, tree) in self.trees.iter().enumerate() {
            if tree.nodes.is_empty() {
                return bad(format!("tree {t} is empty"));
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                match node {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let n = tree.nodes.len();
                        if *feature >= self.feature_dim
                            || !threshold.is_finite()
                            || *left <= i
                            || *right <= i
                            || *left >= n
                            || *right >= n
                        {
                            return bad(format!("tree {t} node {i} is invalid"));
                        }
                    }
                    Node::Leaf(p) => {
                        if p.iter().any(|v| !(0.0..=1.0).contains(v))
                            || (p[0] + p[1] - 1.0).abs() > 1e-9
                        {
                            return bad(format!("tree {t} leaf {i} probabilities invalid"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn predict_score(model: &ForestModel, id: &str, x: &FeatureVector) -> Result<Score> {
    Ok(Score {
        id: id.to_string(),
        value: model.predict(&x.values)?,
    })
}

pub fn save_model(model: &ForestModel, path: &Path) -> Result<()> {
    let bytes = model.to_json_bytes()?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<ForestModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ForestModel::from_json_bytes(&bytes)
}
