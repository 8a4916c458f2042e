//! Plot-ready summaries of a LOO report.

use serde::{Deserialize, Serialize};

use super::run::{CellStatus, LooReport, RoundAverage};
use crate::dataset::Tool;
use crate::features::VectorTag;
use crate::{Error, Result};

/// Mean EER of one feature over the test sets of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBar {
    pub round: Tool,
    pub feature: VectorTag,
    pub mean_eer: f64,
    pub n_cells: usize,
}

/// Lowest EER of a (round, test set) row; all tied features are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCell {
    pub round: Tool,
    pub test_set: Tool,
    pub features: Vec<VectorTag>,
    pub eer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedCell {
    pub round: Tool,
    pub test_set: Tool,
    pub feature: VectorTag,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub bars: Vec<FeatureBar>,
    /// Per-round mean over all successful cells.
    pub average_lines: Vec<RoundAverage>,
    pub best_cells: Vec<BestCell>,
    pub failures: Vec<FailedCell>,
}

pub fn summarize(report: &LooReport) -> Summary {
    let bars = report
        .averages
        .iter()
        .filter_map(|a| {
            a.mean_eer.map(|mean_eer| FeatureBar {
                round: a.round.clone(),
                feature: a.feature.clone(),
                mean_eer,
                n_cells: a.n_cells,
            })
        })
        .collect();
    let average_lines = report
        .round_means
        .iter()
        .filter(|r| r.mean_eer.is_some())
        .cloned()
        .collect();

    let mut best_cells = Vec::new();
    for round in &report.plan.rounds {
        for test in &round.test_sets {
            let row: Vec<(&VectorTag, f64)> = report
                .cells
                .iter()
                .filter(|c| c.round == round.held_out && &c.test_set == test)
                .filter_map(|c| c.metrics().map(|m| (&c.feature, m.eer)))
                .collect();
            let Some(best) = row.iter().map(|r| r.1).min_by(f64::total_cmp) else {
                continue;
            };
            best_cells.push(BestCell {
                round: round.held_out.clone(),
                test_set: test.clone(),
                features: row
                    .iter()
                    .filter(|r| r.1 == best)
                    .map(|r| r.0.clone())
                    .collect(),
                eer: best,
            });
        }
    }

    let failures = report
        .cells
        .iter()
        .filter_map(|c| match &c.status {
            CellStatus::Failed { reason } => Some(FailedCell {
                round: c.round.clone(),
                test_set: c.test_set.clone(),
                feature: c.feature.clone(),
                reason: reason.clone(),
            }),
            CellStatus::Ok { .. } => None,
        })
        .collect();

    Summary {
        bars,
        average_lines,
        best_cells,
        failures,
    }
}

impl Summary {
    /// CSV `round,feature,mean_eer,n_cells`.
    pub fn bars_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for b in &self.bars {
            w.serialize(b)?;
        }
        w.into_inner()
            .map_err(|e| Error::io("<summary>", e.into_error()))
    }
}
