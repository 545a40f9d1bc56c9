//! Labeling-function statistics, pairwise diversity, classification
//! metrics and calibration deltas. Everything here needs gold labels.
//!
//! "Accuracy" of a labeling function always means accuracy on the examples
//! it covers.

mod delta;
mod diversity;
mod heatmap;
mod metrics;
mod stats;

use serde::{Deserialize, Serialize};

use std::fs;
use std::path::Path;

use crate::data::{ClassSpace, Split, VoteMatrix};
use crate::{Error, Result};

pub use delta::{calibration_delta_report, CalibrationDelta, ClassDelta};
pub use diversity::{
    diversity, diversity_counts, diversity_report, Diversity, DiversityCounts, DiversityReport,
};
pub use heatmap::{render_heatmap_ppm, write_heatmap_csv};

pub use metrics::{metrics, ConfusionCounts, MetricsReport};
pub use stats::{lf_stats, ClassStats, LfStats, LOW_COVERAGE};

/// Gold labels of `split`, checked against the matrix row order.
pub fn aligned_gold(matrix: &VoteMatrix, split: &Split) -> Result<Vec<usize>> {
    if matrix.example_ids.len() != split.len()
        || matrix
            .example_ids
            .iter()
            .zip(&split.examples)
            .any(|(id, e)| *id != e.id)
    {
        return Err(Error::Contract(format!(
            "vote matrix rows do not match split `{}`",
            split.name
        )));
    }
    split.require_gold()
}

/// Everything the console shows for one run and split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub split: String,
    pub n: usize,
    pub lf_stats: Vec<LfStats>,
    pub diversity: DiversityReport,
    #[serde(default)]
    pub calibration: Option<Vec<CalibrationDelta>>,
}

pub const DIVERSITY_MEASURES: [&str; 4] = [
    "agreement",
    "disagreement",
    "double_fault",
    "double_correct",
];

impl Report {
    /// Statistics and diversity for `matrix` on a gold-bearing split, plus
    /// calibration deltas when the uncalibrated view is supplied.
    pub fn build(
        matrix: &VoteMatrix,
        uncalibrated: Option<&VoteMatrix>,
        split: &Split,
        classes: &ClassSpace,
    ) -> Result<Self> {
        let gold = aligned_gold(matrix, split)?;
        Ok(Self {
            split: split.name.clone(),
            n: matrix.n(),
            lf_stats: lf_stats(matrix, &gold, classes)?,
            diversity: diversity_report(matrix, &gold)?,
            calibration: uncalibrated
                .map(|u| calibration_delta_report(u, matrix, &gold, classes))
                .transpose()?,
        })
    }

    /// Writes `report.json`, `stats.csv`, one CSV and PPM per diversity
    /// measure and, when present, `calibration.csv`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("report.json"),
            serde_json::to_string_pretty(self)? + "\n",
        )?;

        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        let mut w = csv::Writer::from_path(dir.join("stats.csv"))?;
        w.write_record([
            "lf",
            "coverage",
            "accuracy_on_covered",
            "polarity",
            "low_coverage",
        ])?;
        for s in &self.lf_stats {
            w.write_record([
                s.lf_name.clone(),
                s.coverage.to_string(),
                opt(s.accuracy),
                s.polarity.join("|"),
                s.low_coverage.to_string(),
            ])?;
        }
        w.flush()?;

        for name in DIVERSITY_MEASURES {
            let grid = self.diversity.measure(name).expect("known measure");
            write_heatmap_csv(
                &self.diversity.lf_names,
                grid,
                dir.join(format!("{name}.csv")),
            )?;
            heatmap::write_heatmap_ppm(grid, dir.join(format!("{name}.ppm")))?;
        }

        if let Some(deltas) = &self.calibration {
            let mut w = csv::Writer::from_path(dir.join("calibration.csv"))?;
            w.write_record(["lf", "class", "delta_coverage", "delta_accuracy"])?;
            for d in deltas {
                w.write_record([
                    d.lf_name.clone(),
                    String::new(),
                    d.delta_coverage.to_string(),
                    opt(d.delta_accuracy),
                ])?;
                for (class, c) in &d.per_class {
                    w.write_record([
                        d.lf_name.clone(),
                        class.clone(),
                        c.delta_coverage.to_string(),
                        opt(c.delta_accuracy),
                    ])?;
                }
            }
            w.flush()?;
        }
        Ok(())
    }
}
