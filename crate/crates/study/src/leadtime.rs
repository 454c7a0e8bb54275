//! Lead time of detected prediagnostic cases: days from the prediagnostic
//! scan to the clinical diagnosis.

use chrono::NaiveDate;
use panscreen_core::cascade::CaseResult;
use panscreen_core::phantom::Setting;
use panscreen_core::quantile::median;
use serde::{Deserialize, Serialize};

use crate::manifest::{Manifest, MAX_LEAD_DAYS, MIN_LEAD_DAYS};

/// Histogram bin edges in days: 3, 6, 12, 18, 24, 30 and 36 months.
pub const BIN_EDGES_DAYS: [i64; 7] = [MIN_LEAD_DAYS, 180, 365, 545, 730, 910, MAX_LEAD_DAYS + 1];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeadTimeCase {
    pub case_id: String,
    pub days: i64,
}

/// Half-open bin `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: i64,
    pub hi: i64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeadTimeSummary {
    /// Detected prediagnostic cases, sorted by id.
    pub cases: Vec<LeadTimeCase>,
    /// Prediagnostic cases in the results, detected or not.
    pub n_prediagnostic: usize,
    pub median_days: Option<f64>,
    pub histogram: Vec<HistogramBin>,
}

/// Exact civil-day difference `dx - scan`.
pub fn lead_time_days(scan: NaiveDate, dx: NaiveDate) -> i64 {
    (dx - scan).num_days()
}

/// Lead times of prediagnostic cases with `patient_detected`. No detected
/// cases gives an empty summary.
pub fn lead_time_summary(results: &[CaseResult], manifest: &Manifest) -> LeadTimeSummary {
    let mut cases = Vec::new();
    let mut n_prediagnostic = 0;
    for r in results {
        let Some(row) = manifest.row(&r.case_id) else { continue };
        let c = &row.covariates;
        if c.setting != Setting::Prediagnostic {
            continue;
        }
        n_prediagnostic += 1;
        if let (true, Some(scan), Some(dx)) = (r.patient_detected, c.scan_date, c.dx_date) {
            cases.push(LeadTimeCase { case_id: r.case_id.clone(), days: lead_time_days(scan, dx) });
        }
    }
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let days: Vec<f64> = cases.iter().map(|c| c.days as f64).collect();
    let histogram = BIN_EDGES_DAYS
        .windows(2)
        .map(|w| HistogramBin { lo: w[0], hi: w[1], count: cases.iter().filter(|c| c.days >= w[0] && c.days < w[1]).count() })
        .collect();
    LeadTimeSummary { median_days: median(&days), cases, n_prediagnostic, histogram }
}
