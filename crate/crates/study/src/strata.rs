//! Stratified detection metrics for the PDAC-vs-normal task, plus the
//! stage-3 confusion table that also covers non-PDAC cases.

use std::collections::{BTreeMap, HashMap};

use panscreen_core::cascade::CaseResult;
use panscreen_core::phantom::{CaseCovariates, CaseLabel, TStage};
use panscreen_core::quantile::median;
use panscreen_core::rng;
use panscreen_core::stats::{
    binary_rates, bootstrap_ci, roc_auc, wilson_ci, ConfusionMatrix, RocPoint, StatConfig, StatsError,
};
use serde::{Deserialize, Serialize};

use crate::manifest::Manifest;
use crate::StudyError;

/// Boundary between the small and large size strata.
pub const SMALL_DIAMETER_MM: f64 = 20.0;

pub const AXES: [&str; 5] = ["overall", "size", "t_stage", "site", "setting"];

/// Point estimate with an optional interval. `value` is `None` when the
/// metric is undefined for the stratum (for example no positives).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: Option<f64>,
    pub ci_lo: Option<f64>,
    pub ci_hi: Option<f64>,
    pub n: u64,
}

impl Estimate {
    pub const UNDEFINED: Estimate = Estimate { value: None, ci_lo: None, ci_hi: None, n: 0 };

    pub fn wilson(k: u64, n: u64, z: f64) -> Result<Self, StatsError> {
        if n == 0 {
            return Ok(Self::UNDEFINED);
        }
        let (lo, hi) = wilson_ci(k, n, z)?;
        Ok(Self { value: Some(k as f64 / n as f64), ci_lo: Some(lo), ci_hi: Some(hi), n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub axis: String,
    pub stratum: String,
    pub n: usize,
    pub n_pdac: usize,
    pub n_normal: usize,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub auc: Estimate,
    pub localization: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub confusion: ConfusionMatrix,
    pub sensitivity: Estimate,
    pub specificity: Estimate,
    pub ppv: Estimate,
    pub accuracy: Estimate,
    pub balanced_accuracy: Estimate,
    pub f1: Estimate,
    pub auc: Estimate,
    /// Lesions overlapped by the predicted mask, over all PDAC lesions with
    /// ground-truth masks.
    pub localization_overlap: Estimate,
    /// Winning-component segment equals the reported segment, over PDAC
    /// cases that report one.
    pub localization_segment: Estimate,
    pub hd95_median_mm: Option<f64>,
    pub hd95_count: usize,
}

/// Rows: truth, columns: predicted class, both in pdac / non_pdac / normal
/// order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage3Confusion {
    pub classes: [CaseLabel; 3],
    pub counts: [[u64; 3]; 3],
}

pub const CLASS_ORDER: [CaseLabel; 3] = [CaseLabel::Pdac, CaseLabel::NonPdac, CaseLabel::Normal];

fn class_index(c: CaseLabel) -> usize {
    CLASS_ORDER.iter().position(|&x| x == c).unwrap_or(2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedReport {
    pub n_cases: usize,
    pub n_pdac: usize,
    pub n_normal: usize,
    pub n_nonpdac: usize,
    pub overall: OverallMetrics,
    pub rows: Vec<MetricRow>,
    /// Site by size (small, large) rows, always two per site.
    pub site_size: Vec<MetricRow>,
    pub roc: Vec<RocPoint>,
    pub stage3: Stage3Confusion,
    /// Fraction of non-PDAC cases flagged by the patient-level rule.
    pub nonpdac_flagged: Estimate,
}

impl StratifiedReport {
    pub fn axis(&self, axis: &str) -> impl Iterator<Item = &MetricRow> {
        let axis = axis.to_string();
        self.rows.iter().filter(move |r| r.axis == axis)
    }
}

pub fn size_stratum(c: &CaseCovariates) -> &'static str {
    match c.tumor_diameter_mm {
        Some(d) if d <= SMALL_DIAMETER_MM => "small",
        Some(_) => "large",
        None => "unknown",
    }
}

pub fn t_stratum(c: &CaseCovariates) -> &'static str {
    match c.t_stage {
        Some(TStage::T1) => "T1",
        Some(TStage::T2) => "T2",
        Some(TStage::T3 | TStage::T4) => "T3-4",
        None => "unknown",
    }
}

/// Per-case localization outcome under the overlap regime (one entry per
/// ground-truth lesion) or, without lesion masks, the segment regime.
fn localization_hits(r: &CaseResult) -> Vec<bool> {
    if !r.lesions.is_empty() {
        r.lesions.iter().map(|l| l.overlap).collect()
    } else {
        r.segment_match.into_iter().collect()
    }
}

struct Entry<'a> {
    result: &'a CaseResult,
    cov: &'a CaseCovariates,
}

fn count_hits(hits: impl Iterator<Item = bool>) -> (u64, u64) {
    hits.fold((0, 0), |(k, n), h| (k + h as u64, n + 1))
}

fn stratum_seed(cfg: &StatConfig, key: &str) -> StatConfig {
    StatConfig { bootstrap_seed: rng::derive(cfg.bootstrap_seed, rng::fnv1a(key)), ..cfg.clone() }
}

/// AUC with a case-resampling bootstrap interval. Degenerate resampling
/// leaves the interval undefined.
fn auc_estimate(scores: &[f64], labels: &[bool], cfg: &StatConfig) -> Result<Estimate, StatsError> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Ok(Estimate::UNDEFINED);
    }
    let auc = roc_auc(scores, labels)?.auc;
    let stat = |idx: &[usize]| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        roc_auc(&s, &l).ok().map(|c| c.auc)
    };
    let (lo, hi) = match bootstrap_ci(labels.len(), stat, cfg) {
        Ok((lo, hi)) => (Some(lo), Some(hi)),
        Err(StatsError::Degenerate { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(Estimate { value: Some(auc), ci_lo: lo, ci_hi: hi, n: labels.len() as u64 })
}

fn bootstrap_estimate(
    n: usize,
    value: Option<f64>,
    stat: impl Fn(&[usize]) -> Option<f64> + Sync,
    cfg: &StatConfig,
) -> Result<Estimate, StatsError> {
    let Some(v) = value else { return Ok(Estimate::UNDEFINED) };
    let (lo, hi) = match bootstrap_ci(n, stat, cfg) {
        Ok((lo, hi)) => (Some(lo), Some(hi)),
        Err(StatsError::Degenerate { .. }) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(Estimate { value: Some(v), ci_lo: lo, ci_hi: hi, n: n as u64 })
}

fn metric_row(axis: &str, stratum: &str, members: &[&Entry], all_normals: &[&Entry], cfg: &StatConfig) -> Result<MetricRow, StatsError> {
    let pdac: Vec<&Entry> = members.iter().copied().filter(|e| e.cov.label == CaseLabel::Pdac).collect();
    let normal: Vec<&Entry> = members.iter().copied().filter(|e| e.cov.label == CaseLabel::Normal).collect();
    let (tp, np) = count_hits(pdac.iter().map(|e| e.result.patient_detected));
    let (tn, nn) = count_hits(normal.iter().map(|e| !e.result.patient_detected));
    let (lk, ln) = count_hits(pdac.iter().flat_map(|e| localization_hits(e.result)));

    // Strata without normals are scored against every normal in the cohort.
    let negatives = if normal.is_empty() { all_normals } else { &normal[..] };
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for e in pdac.iter().chain(negatives.iter()) {
        scores.push(e.result.patient_score);
        labels.push(e.cov.label == CaseLabel::Pdac);
    }
    let auc_cfg = stratum_seed(cfg, &format!("{axis}/{stratum}"));
    Ok(MetricRow {
        axis: axis.to_string(),
        stratum: stratum.to_string(),
        n: members.len(),
        n_pdac: pdac.len(),
        n_normal: normal.len(),
        sensitivity: Estimate::wilson(tp, np, cfg.z)?,
        specificity: Estimate::wilson(tn, nn, cfg.z)?,
        auc: auc_estimate(&scores, &labels, &auc_cfg)?,
        localization: Estimate::wilson(lk, ln, cfg.z)?,
    })
}

fn group<'a, 'b>(entries: &'b [&'a Entry<'a>], key: impl Fn(&Entry) -> String) -> BTreeMap<String, Vec<&'b Entry<'a>>> {
    let mut out: BTreeMap<String, Vec<&Entry>> = BTreeMap::new();
    for &e in entries {
        out.entry(key(e)).or_default().push(e);
    }
    out
}

/// Build the stratified report. Results whose id is missing from the
/// manifest are an error.
pub fn stratified_report(manifest: &Manifest, results: &[CaseResult], cfg: &StatConfig) -> Result<StratifiedReport, StudyError> {
    cfg.validate()?;
    let by_id: HashMap<&str, &CaseCovariates> = manifest.rows.iter().map(|r| (r.id.as_str(), &r.covariates)).collect();
    let mut sorted: Vec<&CaseResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let mut entries = Vec::with_capacity(sorted.len());
    for r in sorted {
        let cov = by_id
            .get(r.case_id.as_str())
            .ok_or_else(|| StudyError::Format(format!("result for unknown case '{}'", r.case_id)))?;
        entries.push(Entry { result: r, cov });
    }

    let mut stage3 = [[0u64; 3]; 3];
    for e in &entries {
        stage3[class_index(e.cov.label)][class_index(e.result.predicted_class)] += 1;
    }
    let (nk, nn) = count_hits(entries.iter().filter(|e| e.cov.label == CaseLabel::NonPdac).map(|e| e.result.patient_detected));
    let n_nonpdac = nn as usize;

    let primary: Vec<&Entry> = entries.iter().filter(|e| e.cov.label != CaseLabel::NonPdac).collect();
    let pdac: Vec<&Entry> = primary.iter().copied().filter(|e| e.cov.label == CaseLabel::Pdac).collect();
    let normals: Vec<&Entry> = primary.iter().copied().filter(|e| e.cov.label == CaseLabel::Normal).collect();

    let mut rows = vec![metric_row("overall", "all", &primary, &normals, cfg)?];
    let axes: [(&str, &[&Entry], fn(&Entry) -> String); 4] = [
        ("size", &pdac, |e| size_stratum(e.cov).to_string()),
        ("t_stage", &pdac, |e| t_stratum(e.cov).to_string()),
        ("site", &primary, |e| e.cov.site.clone()),
        ("setting", &primary, |e| e.cov.setting.as_str().to_string()),
    ];
    for (axis, members, key) in axes {
        for (stratum, group) in group(members, key) {
            rows.push(metric_row(axis, &stratum, &group, &normals, cfg)?);
        }
    }

    let mut site_size = Vec::new();
    for (site, members) in group(&primary, |e| e.cov.site.clone()) {
        let site_normals: Vec<&Entry> = members.iter().copied().filter(|e| e.cov.label == CaseLabel::Normal).collect();
        let reference = if site_normals.is_empty() { &normals[..] } else { &site_normals[..] };
        for size in ["small", "large"] {
            let group: Vec<&Entry> = members
                .iter()
                .copied()
                .filter(|e| e.cov.label == CaseLabel::Pdac && size_stratum(e.cov) == size)
                .collect();
            let mut row = metric_row("site_size", &format!("{site}/{size}"), &group, reference, cfg)?;
            // Specificity is per site, shared by both size rows.
            let (tn, n) = count_hits(site_normals.iter().map(|e| !e.result.patient_detected));
            row.specificity = Estimate::wilson(tn, n, cfg.z)?;
            site_size.push(row);
        }
    }

    let overall = overall_metrics(&primary, cfg)?;
    let roc = if pdac.is_empty() || normals.is_empty() {
        Vec::new()
    } else {
        let scores: Vec<f64> = primary.iter().map(|e| e.result.patient_score).collect();
        let labels: Vec<bool> = primary.iter().map(|e| e.cov.label == CaseLabel::Pdac).collect();
        roc_auc(&scores, &labels)?.points
    };

    Ok(StratifiedReport {
        n_cases: entries.len(),
        n_pdac: pdac.len(),
        n_normal: normals.len(),
        n_nonpdac,
        overall,
        rows,
        site_size,
        roc,
        stage3: Stage3Confusion { classes: CLASS_ORDER, counts: stage3 },
        nonpdac_flagged: Estimate::wilson(nk, nn, cfg.z)?,
    })
}

fn overall_metrics(primary: &[&Entry], cfg: &StatConfig) -> Result<OverallMetrics, StatsError> {
    let pairs: Vec<(bool, bool)> = primary.iter().map(|e| (e.cov.label == CaseLabel::Pdac, e.result.patient_detected)).collect();
    let cm = ConfusionMatrix::from_pairs(pairs.iter().copied());
    let rates = binary_rates(&cm);
    let z = cfg.z;

    let n = pairs.len();
    let resampled = |idx: &[usize]| ConfusionMatrix::from_pairs(idx.iter().map(|&i| pairs[i]));
    let ba = bootstrap_estimate(n, rates.balanced_accuracy, |idx| binary_rates(&resampled(idx)).balanced_accuracy, &stratum_seed(cfg, "overall/ba"))?;
    let f1 = bootstrap_estimate(n, rates.f1, |idx| binary_rates(&resampled(idx)).f1, &stratum_seed(cfg, "overall/f1"))?;

    let scores: Vec<f64> = primary.iter().map(|e| e.result.patient_score).collect();
    let labels: Vec<bool> = pairs.iter().map(|p| p.0).collect();
    let auc = auc_estimate(&scores, &labels, &stratum_seed(cfg, "overall/all"))?;

    let pdac = primary.iter().filter(|e| e.cov.label == CaseLabel::Pdac);
    let (ok, on) = count_hits(pdac.clone().flat_map(|e| e.result.lesions.iter().map(|l| l.overlap)));
    let (sk, sn) = count_hits(pdac.clone().filter_map(|e| e.result.segment_match));
    let hd: Vec<f64> = pdac.flat_map(|e| e.result.lesions.iter().filter_map(|l| l.hd95_mm)).collect();

    Ok(OverallMetrics {
        confusion: cm,
        sensitivity: Estimate::wilson(cm.tp, cm.positives(), z)?,
        specificity: Estimate::wilson(cm.tn, cm.negatives(), z)?,
        ppv: Estimate::wilson(cm.tp, cm.tp + cm.fp, z)?,
        accuracy: Estimate::wilson(cm.tp + cm.tn, cm.total(), z)?,
        balanced_accuracy: ba,
        f1,
        auc,
        localization_overlap: Estimate::wilson(ok, on, z)?,
        localization_segment: Estimate::wilson(sk, sn, z)?,
        hd95_median_mm: median(&hd),
        hd95_count: hd.len(),
    })
}

