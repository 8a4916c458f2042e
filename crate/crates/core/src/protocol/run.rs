//! Cell execution, feature caching and run-directory output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cell_seed, round_seed, summarize, LooPlan, Round, RunConfig};
use crate::classifier::{train_forest, ForestParams, TrainingSet};
use crate::dataset::{load_face, load_manifest, split_train_test, LoadOptions, Preprocessed, Tool};
use crate::features::{extract_preprocessed, FeatureSettings, VectorTag};
use crate::metrics::{evaluate_with_curve, DetCurve, LabeledScore, MetricsReport, ScoreSet};
use crate::{DatasetManifest, Error, FeatureConfig, FeatureMethodId, Label, Result, SplitPair};

/// Report format identifier.
pub const REPORT_FORMAT: &str = "loo/1";

type CacheMap = HashMap<(String, String), Arc<Vec<f64>>>;

/// Thread-safe feature store keyed by (content hash, extractor key).
#[derive(Debug, Default)]
pub struct FeatureCache {
    enabled: bool,
    entries: RwLock<CacheMap>,
}

impl FeatureCache {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            entries: RwLock::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_compute(
        &self,
        content: &str,
        key: &str,
        compute: impl FnOnce() -> Result<Vec<f64>>,
    ) -> Result<Arc<Vec<f64>>> {
        if !self.enabled {
            return compute().map(Arc::new);
        }
        let k = (content.to_string(), key.to_string());
        if let Some(v) = self.entries.read().expect("cache lock").get(&k) {
            return Ok(Arc::clone(v));
        }
        let value = Arc::new(compute()?);
        let mut w = self.entries.write().expect("cache lock");
        Ok(Arc::clone(w.entry(k).or_insert(value)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub cache: bool,
}

/// The train/test ids of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSplit {
    pub held_out: Tool,
    pub split: Option<SplitPair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CellStatus {
    Ok {
        metrics: MetricsReport,
        n_train: usize,
        training_digest: String,
    },
    Failed {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub round: Tool,
    pub test_set: Tool,
    pub feature: VectorTag,
    #[serde(flatten)]
    pub status: CellStatus,
    #[serde(skip)]
    pub scores: Vec<LabeledScore>,
    #[serde(skip)]
    pub det: Option<DetCurve>,
}

impl CellRecord {
    pub fn metrics(&self) -> Option<&MetricsReport> {
        match &self.status {
            CellStatus::Ok { metrics, .. } => Some(metrics),
            CellStatus::Failed { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAverage {
    pub round: Tool,
    pub feature: VectorTag,
    pub mean_eer: Option<f64>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAverage {
    pub round: Tool,
    pub mean_eer: Option<f64>,
    pub n_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub format: String,
    pub plan: LooPlan,
    pub feature_settings: FeatureSettings,
    pub rounds: Vec<RoundSplit>,
    pub cells: Vec<CellRecord>,
    pub averages: Vec<FeatureAverage>,
    pub round_means: Vec<RoundAverage>,
}

impl LooReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn cell(&self, round: &str, test_set: &str, feature: &str) -> Option<&CellRecord> {
        self.cells.iter().find(|c| {
            c.round.as_str() == round
                && c.test_set.as_str() == test_set
                && c.feature.to_string() == feature
        })
    }
}

struct LoadedFace {
    input: Preprocessed,
    content: String,
}

fn content_hash(p: &Preprocessed) -> String {
    let mut h = Sha256::new();
    h.update(p.face.pixels());
    let (w, ht) = p.original.dimensions();
    h.update(w.to_le_bytes());
    h.update(ht.to_le_bytes());
    h.update(p.original.as_raw());
    hex::encode(h.finalize())
}

struct Context<'a> {
    manifest: &'a DatasetManifest,
    labels: HashMap<&'a str, (Label, &'a Tool)>,
    faces: HashMap<&'a str, std::result::Result<LoadedFace, String>>,
    config: &'a FeatureConfig,
    cache: FeatureCache,
}

impl Context<'_> {
    fn method_vector(&self, id: &str, method: FeatureMethodId) -> Result<Arc<Vec<f64>>> {
        let face = match self.faces.get(id) {
            Some(Ok(f)) => f,
            Some(Err(e)) => return Err(Error::Protocol(format!("sample `{id}`: {e}"))),
            None => return Err(Error::Protocol(format!("unknown sample `{id}`"))),
        };
        self.cache
            .get_or_compute(&face.content, &self.config.cache_key(method), || {
                Ok(extract_preprocessed(&face.input, method, self.config)?
                    .vector
                    .values)
            })
    }

    fn vector(&self, id: &str, tag: &VectorTag) -> Result<Vec<f64>> {
        let methods: &[FeatureMethodId] = match tag {
            VectorTag::Single(m) => std::slice::from_ref(m),
            VectorTag::Fused(ms) => ms,
        };
        let mut out = Vec::new();
        for &m in methods {
            out.extend_from_slice(&self.method_vector(id, m)?);
        }
        Ok(out)
    }

    fn vectors(&self, ids: &[String], tag: &VectorTag) -> Result<Vec<Vec<f64>>> {
        ids.par_iter().map(|id| self.vector(id, tag)).collect()
    }
}

fn round_split(manifest: &DatasetManifest, round: &Round, plan: &LooPlan) -> Result<SplitPair> {
    let pool =
        manifest.filter(|r| r.label == Label::Bonafide || round.train_tools.contains(&r.tool));
    split_train_test(
        &pool,
        plan.split.ratio,
        round_seed(plan.split.seed, &round.held_out),
    )
}

struct CellJob<'a> {
    round: &'a Round,
    split: &'a std::result::Result<SplitPair, String>,
    feature: &'a VectorTag,
}

fn run_cell(ctx: &Context<'_>, plan: &LooPlan, job: &CellJob<'_>) -> Vec<CellRecord> {
    let failed_all = |reason: String| {
        job.round
            .test_sets
            .iter()
            .map(|t| CellRecord {
                round: job.round.held_out.clone(),
                test_set: t.clone(),
                feature: job.feature.clone(),
                status: CellStatus::Failed {
                    reason: reason.clone(),
                },
                scores: Vec::new(),
                det: None,
            })
            .collect::<Vec<_>>()
    };
    let split = match job.split {
        Ok(s) => s,
        Err(e) => return failed_all(format!("round split failed: {e}")),
    };
    let model = match train_cell(ctx, plan, job, split) {
        Ok(m) => m,
        Err(e) => return failed_all(e.to_string()),
    };
    let train_ids: BTreeSet<&str> = split.train.iter().map(String::as_str).collect();
    job.round
        .test_sets
        .iter()
        .map(|t| {
            let (status, scores, det) = match score_test_set(ctx, job, split, &train_ids, t, &model)
            {
                Ok((metrics, scores, det)) => (
                    CellStatus::Ok {
                        metrics,
                        n_train: split.train.len(),
                        training_digest: model.training_digest.clone(),
                    },
                    scores,
                    Some(det),
                ),
                Err(e) => (
                    CellStatus::Failed {
                        reason: e.to_string(),
                    },
                    Vec::new(),
                    None,
                ),
            };
            CellRecord {
                round: job.round.held_out.clone(),
                test_set: t.clone(),
                feature: job.feature.clone(),
                status,
                scores,
                det,
            }
        })
        .collect()
}

fn train_cell(
    ctx: &Context<'_>,
    plan: &LooPlan,
    job: &CellJob<'_>,
    split: &SplitPair,
) -> Result<crate::classifier::ForestModel> {
    let mut labels = Vec::with_capacity(split.train.len());
    for id in &split.train {
        let (label, tool) = ctx.labels[id.as_str()];
        if *tool == job.round.held_out {
            return Err(Error::Protocol(format!(
                "held-out tool sample `{id}` in training pool"
            )));
        }
        labels.push(label);
    }
    let rows = ctx.vectors(&split.train, job.feature)?;
    let mut set = TrainingSet::new(split.train.clone(), rows, labels);
    set.tag = Some(job.feature.clone());
    let params = ForestParams {
        seed: cell_seed(plan.forest.seed, &job.round.held_out, job.feature),
        ..plan.forest.clone()
    };
    train_forest(&set, &params)
}

type Scored = (MetricsReport, Vec<LabeledScore>, DetCurve);

fn score_test_set(
    ctx: &Context<'_>,
    job: &CellJob<'_>,
    split: &SplitPair,
    train_ids: &BTreeSet<&str>,
    test_tool: &Tool,
    model: &crate::classifier::ForestModel,
) -> Result<Scored> {
    // A tool used for training contributes its reserved test part; any
    // other tool contributes all of its samples.
    let trained_on = job.round.train_tools.contains(test_tool);
    let test_part: BTreeSet<&str> = split.test.iter().map(String::as_str).collect();
    let mut ids: Vec<&str> = Vec::new();
    let mut n_morph = 0;
    for r in &ctx.manifest.records {
        let take = match r.label {
            Label::Bonafide => test_part.contains(r.id.as_str()),
            Label::Morph if r.tool == *test_tool => {
                !trained_on || test_part.contains(r.id.as_str())
            }
            Label::Morph => false,
        };
        if take {
            n_morph += r.label.is_morph() as usize;
            ids.push(&r.id);
        }
    }
    if n_morph == 0 {
        return Err(Error::Protocol(format!(
            "empty test stratum for `{test_tool}`"
        )));
    }
    if let Some(id) = ids.iter().find(|id| train_ids.contains(*id)) {
        return Err(Error::Protocol(format!(
            "identity leakage: `{id}` in train and test"
        )));
    }
    ids.sort_unstable();
    let owned: Vec<String> = ids.iter().map(|s| s.to_string()).collect();
    let rows = ctx.vectors(&owned, job.feature)?;
    let mut scores = Vec::with_capacity(ids.len());
    for (id, x) in owned.into_iter().zip(rows) {
        let score = model.predict(&x)?;
        let label = ctx.labels[id.as_str()].0;
        scores.push(LabeledScore { id, label, score });
    }
    let (det, metrics) = evaluate_with_curve(&ScoreSet::from_labeled(&scores))?;
    Ok((metrics, scores, det))
}

fn averages(plan: &LooPlan, cells: &[CellRecord]) -> (Vec<FeatureAverage>, Vec<RoundAverage>) {
    let mut per_feature = Vec::new();
    let mut per_round = Vec::new();
    for round in &plan.rounds {
        let in_round: Vec<&CellRecord> =
            cells.iter().filter(|c| c.round == round.held_out).collect();
        for f in &plan.features {
            let eers: Vec<f64> = in_round
                .iter()
                .filter(|c| &c.feature == f)
                .filter_map(|c| c.metrics().map(|m| m.eer))
                .collect();
            per_feature.push(FeatureAverage {
                round: round.held_out.clone(),
                feature: f.clone(),
                mean_eer: mean(&eers),
                n_cells: eers.len(),
            });
        }
        let eers: Vec<f64> = in_round
            .iter()
            .filter_map(|c| c.metrics().map(|m| m.eer))
            .collect();
        per_round.push(RoundAverage {
            round: round.held_out.clone(),
            mean_eer: mean(&eers),
            n_cells: eers.len(),
        });
    }
    (per_feature, per_round)
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every (round, feature) cell of `plan`. Cell failures are recorded
/// in the report; only an invalid plan is an error.
pub fn run_plan(
    manifest: &DatasetManifest,
    plan: &LooPlan,
    config: &FeatureConfig,
    options: RunOptions,
) -> Result<LooReport> {
    plan.validate()?;
    let labels = manifest
        .records
        .iter()
        .map(|r| (r.id.as_str(), (r.label, &r.tool)))
        .collect();
    let faces = manifest
        .records
        .par_iter()
        .map(|r| {
            let loaded = load_face(r)
                .map(|input| LoadedFace {
                    content: content_hash(&input),
                    input,
                })
                .map_err(|e| e.to_string());
            (r.id.as_str(), loaded)
        })
        .collect();
    let ctx = Context {
        manifest,
        labels,
        faces,
        config,
        cache: FeatureCache::new(options.cache),
    };

    let splits: Vec<std::result::Result<SplitPair, String>> = plan
        .rounds
        .iter()
        .map(|r| round_split(manifest, r, plan).map_err(|e| e.to_string()))
        .collect();
    let jobs: Vec<CellJob<'_>> = plan
        .rounds
        .iter()
        .zip(&splits)
        .flat_map(|(round, split)| {
            plan.features.iter().map(move |feature| CellJob {
                round,
                split,
                feature,
            })
        })
        .collect();
    let cells: Vec<CellRecord> = jobs
        .par_iter()
        .map(|job| run_cell(&ctx, plan, job))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    let (averages, round_means) = averages(plan, &cells);
    let rounds = plan
        .rounds
        .iter()
        .zip(splits)
        .map(|(r, s)| match s {
            Ok(split) => RoundSplit {
                held_out: r.held_out.clone(),
                split: Some(split),
                error: None,
            },
            Err(e) => RoundSplit {
                held_out: r.held_out.clone(),
                split: None,
                error: Some(e),
            },
        })
        .collect();
    Ok(LooReport {
        format: REPORT_FORMAT.to_string(),
        plan: plan.clone(),
        feature_settings: config.settings.clone(),
        rounds,
        cells,
        averages,
        round_means,
    })
}

/// Loads the manifest, runs the plan and writes the run directory.
pub fn run_loo(config: &RunConfig) -> Result<LooReport> {
    let manifest = load_manifest(
        &config.manifest,
        &LoadOptions {
            missing_files: config.missing_files,
        },
    )?;
    let features = FeatureConfig::from_settings(config.feature_settings.clone())?;
    let plan = config.plan(&manifest)?;
    let report = run_plan(
        &manifest,
        &plan,
        &features,
        RunOptions {
            cache: config.cache,
        },
    )?;
    write_run_dir(&report, &config.output_dir)?;
    Ok(report)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Relative directory of a cell's artefacts.
pub fn cell_dir(cell: &CellRecord) -> std::path::PathBuf {
    Path::new("cells")
        .join(cell.round.as_str())
        .join(cell.test_set.as_str())
        .join(cell.feature.to_string())
}

/// Writes `report.json`, per-cell `scores.csv` / `det.csv` /
/// `metrics.json`, `summary.csv`, `summary.json` and `eer_matrix.csv`.
pub fn write_run_dir(report: &LooReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("report.json"), report.to_json()?.as_bytes())?;

    for cell in &report.cells {
        let Some(metrics) = cell.metrics() else {
            continue;
        };
        let base = dir.join(cell_dir(cell));
        let mut buf = Vec::new();
        crate::metrics::write_scores_csv(&cell.scores, &mut buf)?;
        write(&base.join("scores.csv"), &buf)?;
        if let Some(det) = &cell.det {
            let mut buf = Vec::new();
            det.write_csv(&mut buf)?;
            write(&base.join("det.csv"), &buf)?;
        }
        let mut json = serde_json::to_string_pretty(metrics)?;
        json.push('\n');
        write(&base.join("metrics.json"), json.as_bytes())?;
    }

    let summary = summarize(report);
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    write(&dir.join("summary.json"), json.as_bytes())?;
    write(&dir.join("summary.csv"), &summary.bars_csv()?)?;
    write(&dir.join("eer_matrix.csv"), &eer_matrix_csv(report)?)?;
    Ok(())
}

/// Matrix of EERs: one row per (round, test set), one column per feature.
pub fn eer_matrix_csv(report: &LooReport) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["round".to_string(), "test_set".to_string()];
    header.extend(report.plan.features.iter().map(|f| f.to_string()));
    w.write_record(&header)?;
    let mut rows: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    for (ri, round) in report.plan.rounds.iter().enumerate() {
        for (ti, test) in round.test_sets.iter().enumerate() {
            let mut row = vec![round.held_out.to_string(), test.to_string()];
            for f in &report.plan.features {
                let cell = report
                    .cell(round.held_out.as_str(), test.as_str(), &f.to_string())
                    .and_then(|c| c.metrics().map(|m| m.eer.to_string()));
                row.push(cell.unwrap_or_else(|| "failed".into()));
            }
            rows.insert((ri, ti), row);
        }
    }
    for row in rows.values() {
        w.write_record(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<matrix>", e.into_error()))
}
