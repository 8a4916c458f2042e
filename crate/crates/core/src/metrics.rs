//! Presentation-attack detection metrics (ISO/IEC 30107-3).
//!
//! Decision convention: a sample is classified as an attack (morph) iff its
//! score is `>= threshold`.
//!
//! * APCER: fraction of morphs classified bona fide (`score < t`).
//! * BPCER: fraction of bona fide samples classified attack (`score >= t`).

use std::io::{Read, Write};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::Label;
use crate::{Error, Result};

/// APCER operating point for BPCER10.
pub const APCER_10: f64 = 0.10;
/// APCER operating point for BPCER20.
pub const APCER_20: f64 = 0.05;

/// Scores split by ground-truth class.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreSet {
    pub bonafide: Vec<f64>,
    pub morph: Vec<f64>,
}

impl ScoreSet {
    pub fn new(bonafide: Vec<f64>, morph: Vec<f64>) -> Self {
        Self { bonafide, morph }
    }

    pub fn from_labeled(samples: &[LabeledScore]) -> Self {
        let mut set = ScoreSet::default();
        for s in samples {
            match s.label {
                Label::Bonafide => set.bonafide.push(s.score),
                Label::Morph => set.morph.push(s.score),
            }
        }
        set
    }

    fn check(&self) -> Result<()> {
        if self.bonafide.is_empty() {
            return Err(Error::Metrics("no bona fide scores".into()));
        }
        if self.morph.is_empty() {
            return Err(Error::Metrics("no morph scores".into()));
        }
        if self.bonafide.iter().chain(&self.morph).any(|s| s.is_nan()) {
            return Err(Error::Metrics("NaN score".into()));
        }
        Ok(())
    }
}

/// Fraction of morph scores below `threshold` (attacks not detected).
pub fn apcer(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.morph.is_empty() {
        return Err(Error::Metrics("no morph scores".into()));
    }
    let missed = scores.morph.iter().filter(|&&s| s < threshold).count();
    Ok(missed as f64 / scores.morph.len() as f64)
}

/// Fraction of bona fide scores at or above `threshold`.
pub fn bpcer(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.bonafide.is_empty() {
        return Err(Error::Metrics("no bona fide scores".into()));
    }
    let rejected = scores.bonafide.iter().filter(|&&s| s >= threshold).count();
    Ok(rejected as f64 / scores.bonafide.len() as f64)
}

fn ser_threshold<S: Serializer>(t: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if t.is_finite() {
        s.serialize_f64(*t)
    } else if *t > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn de_threshold<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) => match s.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            other => Err(serde::de::Error::custom(format!("bad threshold `{other}`"))),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub threshold: f64,
    pub apcer: f64,
    pub bpcer: f64,
}

/// Operating points at every distinct score plus the `-inf` and `+inf`
/// sentinels, thresholds strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve> {
    scores.check()?;
    let mut bf = scores.bonafide.clone();
    let mut morph = scores.morph.clone();
    bf.sort_by(f64::total_cmp);
    morph.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = bf.iter().chain(&morph).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let (n_bf, n_m) = (bf.len() as f64, morph.len() as f64);
    let mut points = Vec::with_capacity(thresholds.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        apcer: 0.0,
        bpcer: 1.0,
    });
    for t in thresholds {
        if !t.is_finite() {
            continue;
        }
        let below_m = morph.partition_point(|&s| s < t);
        let below_bf = bf.partition_point(|&s| s < t);
        points.push(DetPoint {
            threshold: t,
            apcer: below_m as f64 / n_m,
            bpcer: (bf.len() - below_bf) as f64 / n_bf,
        });
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        apcer: 1.0,
        bpcer: 0.0,
    });
    Ok(DetCurve { points })
}

impl DetCurve {
    fn check(&self) -> Result<()> {
        if self.points.len() < 2 {
            return Err(Error::Metrics("degenerate DET curve".into()));
        }
        Ok(())
    }

    /// CSV `threshold,apcer,bpcer`; sentinels are written as `-inf`/`inf`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["threshold", "apcer", "bpcer"])?;
        for p in &self.points {
            let t = if p.threshold.is_finite() {
                p.threshold.to_string()
            } else if p.threshold > 0.0 {
                "inf".to_string()
            } else {
                "-inf".to_string()
            };
            w.write_record([t, p.apcer.to_string(), p.bpcer.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<det>", e))?;
        Ok(())
    }
}

/// Equal error rate by linear interpolation between the two adjacent curve
/// points where `apcer - bpcer` changes sign. Returns `(rate, threshold)`.
pub fn eer(curve: &DetCurve) -> Result<(f64, f64)> {
    curve.check()?;
    let pts = &curve.points;
    let diff = |p: &DetPoint| p.apcer - p.bpcer;
    let j = pts
        .iter()
        .position(|p| diff(p) >= 0.0)
        .ok_or_else(|| Error::Metrics("APCER never reaches BPCER".into()))?;
    let pj = pts[j];
    if diff(&pj) == 0.0 || j == 0 {
        return Ok((pj.apcer, pj.threshold));
    }
    let pi = pts[j - 1];
    let (di, dj) = (diff(&pi), diff(&pj));
    let alpha = -di / (dj - di);
    let rate = pi.apcer + alpha * (pj.apcer - pi.apcer);
    let threshold = match (pi.threshold.is_finite(), pj.threshold.is_finite()) {
        (true, true) => pi.threshold + alpha * (pj.threshold - pi.threshold),
        (true, false) => pi.threshold,
        (false, true) => pj.threshold,
        (false, false) => 0.0,
    };
    Ok((rate, threshold))
}

fn check_target(target: f64) -> Result<()> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Metrics(format!(
            "APCER target {target} not in (0, 1)"
        )));
    }
    Ok(())
}

/// Index of the last curve point with `apcer <= target` (lowest BPCER among
/// them).
fn last_within(curve: &DetCurve, target: f64) -> Result<usize> {
    curve.check()?;
    check_target(target)?;
    curve
        .points
        .iter()
        .rposition(|p| p.apcer <= target)
        .ok_or_else(|| Error::Metrics("no operating point within APCER target".into()))
}

/// BPCER at a fixed APCER: the smallest BPCER among points with
/// `apcer <= target`, interpolated towards the next point when that point
/// lies beyond the target.
pub fn bpcer_at_apcer(curve: &DetCurve, apcer_target: f64) -> Result<f64> {
    let i = last_within(curve, apcer_target)?;
    let p = curve.points[i];
    match curve.points.get(i + 1) {
        Some(q) if q.apcer > p.apcer => {
            let alpha = (apcer_target - p.apcer) / (q.apcer - p.apcer);
            Ok(p.bpcer + alpha * (q.bpcer - p.bpcer))
        }
        _ => Ok(p.bpcer),
    }
}

/// Decision threshold of the operating point used by [`bpcer_at_apcer`]
/// (before interpolation).
pub fn threshold_at_apcer(curve: &DetCurve, apcer_target: f64) -> Result<f64> {
    Ok(curve.points[last_within(curve, apcer_target)?].threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eer: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub eer_threshold: f64,
    pub bpcer10: f64,
    pub bpcer20: f64,
    pub n_bf: usize,
    pub n_pais: usize,
}

/// EER, BPCER10 and BPCER20 of a score set.
pub fn evaluate(scores: &ScoreSet) -> Result<MetricsReport> {
    let curve = det_curve(scores)?;
    Ok(report_from_curve(&curve, scores))
}

fn report_from_curve(curve: &DetCurve, scores: &ScoreSet) -> MetricsReport {
    let (eer_rate, eer_threshold) = eer(curve).expect("validated curve has a crossing");
    MetricsReport {
        eer: eer_rate,
        eer_threshold,
        bpcer10: bpcer_at_apcer(curve, APCER_10).expect("valid target"),
        bpcer20: bpcer_at_apcer(curve, APCER_20).expect("valid target"),
        n_bf: scores.bonafide.len(),
        n_pais: scores.morph.len(),
    }
}

/// Curve and report in one pass.
pub fn evaluate_with_curve(scores: &ScoreSet) -> Result<(DetCurve, MetricsReport)> {
    let curve = det_curve(scores)?;
    let report = report_from_curve(&curve, scores);
    Ok((curve, report))
}

/// Decision thresholds for the three operating points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoints {
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub eer_threshold: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub bpcer10_threshold: f64,
    #[serde(serialize_with = "ser_threshold", deserialize_with = "de_threshold")]
    pub bpcer20_threshold: f64,
}

pub fn operating_points(scores: &ScoreSet) -> Result<OperatingPoints> {
    let curve = det_curve(scores)?;
    Ok(OperatingPoints {
        eer_threshold: eer(&curve)?.1,
        bpcer10_threshold: threshold_at_apcer(&curve, APCER_10)?,
        bpcer20_threshold: threshold_at_apcer(&curve, APCER_20)?,
    })
}

/// One row of a scores CSV (`id,label,score`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub id: String,
    pub label: Label,
    pub score: f64,
}

pub fn write_scores_csv<W: Write>(rows: &[LabeledScore], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(reader: R) -> Result<Vec<LabeledScore>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: LabeledScore = row?;
        if !row.score.is_finite() {
            return Err(Error::Metrics(format!("non-finite score for `{}`", row.id)));
        }
        out.push(row);
    }
    Ok(out)
}
