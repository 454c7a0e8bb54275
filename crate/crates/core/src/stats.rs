//! Screening statistics: confusion-matrix rates, Wilson intervals, ROC/AUC,
//! percentile bootstrap and prevalence-adjusted PPV projections.
//!
//! Undefined quantities (zero denominators) are `None`, never NaN or 0.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quantile::percentile;
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid statistics config: {0}")]
    Config(String),
    #[error("k = {k} is not within 0..={n}, or n = 0")]
    Domain { k: u64, n: u64 },
    #[error("AUC is undefined without both classes (positives {positives}, negatives {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    Length { scores: usize, labels: usize },
    #[error("score {0} is not finite")]
    NonFinite(f64),
    #[error("bootstrap needs at least two observations, got {0}")]
    TooFewObservations(usize),
    #[error("bootstrap statistic undefined on too many resamples ({attempts} attempts for {resamples} resamples)")]
    Degenerate { attempts: usize, resamples: usize },
    #[error("invalid screening scenario: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatConfig {
    pub z: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Lower and upper percentiles (0–100) of the bootstrap interval.
    pub ci_percentiles: [f64; 2],
    pub hd95_percentile: f64,
}

impl Default for StatConfig {
    fn default() -> Self {
        Self { z: 1.96, bootstrap_resamples: 1000, bootstrap_seed: 0, ci_percentiles: [2.5, 97.5], hd95_percentile: 95.0 }
    }
}

impl StatConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if !(self.z.is_finite() && self.z > 0.0) {
            return Err(StatsError::Config(format!("z must be positive, got {}", self.z)));
        }
        if self.bootstrap_resamples == 0 {
            return Err(StatsError::Config("bootstrap_resamples must be >= 1".into()));
        }
        let [lo, hi] = self.ci_percentiles;
        if !(lo > 0.0 && lo < hi && hi < 100.0) {
            return Err(StatsError::Config(format!("ci_percentiles {:?} must be ordered within (0, 100)", self.ci_percentiles)));
        }
        if !(self.hd95_percentile > 0.0 && self.hd95_percentile < 100.0) {
            return Err(StatsError::Config(format!("hd95_percentile {} outside (0, 100)", self.hd95_percentile)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Tally (truth, prediction) pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut cm = Self::default();
        for (truth, pred) in pairs {
            match (truth, pred) {
                (true, true) => cm.tp += 1,
                (true, false) => cm.fn_ += 1,
                (false, true) => cm.fp += 1,
                (false, false) => cm.tn += 1,
            }
        }
        cm
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> u64 {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> u64 {
        self.tn + self.fp
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryRates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub accuracy: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub f1: Option<f64>,
}

pub fn binary_rates(cm: &ConfusionMatrix) -> BinaryRates {
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    BinaryRates {
        sensitivity,
        specificity,
        ppv: ratio(cm.tp, cm.tp + cm.fp),
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        balanced_accuracy: sensitivity.zip(specificity).map(|(s, c)| (s + c) / 2.0),
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
    }
}

/// Wilson score interval for `k` successes in `n` trials, clamped to [0, 1].
/// The endpoints at `k = 0` and `k = n` are exactly 0 and 1.
pub fn wilson_ci(k: u64, n: u64, z: f64) -> Result<(f64, f64), StatsError> {
    if n == 0 || k > n {
        return Err(StatsError::Domain { k, n });
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).clamp(0.0, p) };
    let hi = if k == n { 1.0 } else { (center + half).clamp(p, 1.0) };
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores at or above this value are called positive. The first point
    /// uses +inf.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auc: f64,
    pub points: Vec<RocPoint>,
}

/// ROC curve and AUC. The AUC is the Mann-Whitney statistic with half credit
/// for ties, accumulated in integers so it is exact.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve, StatsError> {
    if scores.len() != labels.len() {
        return Err(StatsError::Length { scores: scores.len(), labels: labels.len() });
    }
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(StatsError::NonFinite(bad));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(StatsError::SingleClass { positives, negatives });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as u64, negatives as u64);
    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // Twice the number of correctly ordered pairs, plus tied pairs.
    let mut twice = 0u64;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut dp, mut dn) = (0u64, 0u64);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                dp += 1;
            } else {
                dn += 1;
            }
            k += 1;
        }
        twice += 2 * tp * dn + dp * dn;
        tp += dp;
        fp += dn;
        points.push(RocPoint { threshold: s, fpr: fp as f64 / n as f64, tpr: tp as f64 / p as f64 });
    }
    Ok(RocCurve { auc: twice as f64 / (2 * p * n) as f64, points })
}

/// Percentile bootstrap interval of `statistic` over index resamples of
/// `0..n`. Resample `b` draws from its own stream, so the result does not
/// depend on evaluation order. Resamples where the statistic is undefined are
/// redrawn; more than `10 * B` attempts in total is an error.
pub fn bootstrap_ci<F>(n: usize, statistic: F, cfg: &StatConfig) -> Result<(f64, f64), StatsError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    cfg.validate()?;
    if n < 2 {
        return Err(StatsError::TooFewObservations(n));
    }
    let b_total = cfg.bootstrap_resamples;
    let cap = 10 * b_total;
    let draws: Vec<(Option<f64>, usize)> = (0..b_total)
        .into_par_iter()
        .map(|b| {
            let mut idx = vec![0usize; n];
            for attempt in 0..cap {
                let mut r = rng::rng(rng::derive2(cfg.bootstrap_seed, b as u64, attempt as u64));
                for slot in idx.iter_mut() {
                    *slot = r.random_range(0..n);
                }
                if let Some(v) = statistic(&idx) {
                    return (Some(v), attempt + 1);
                }
            }
            (None, cap)
        })
        .collect();
    let attempts: usize = draws.iter().map(|d| d.1).sum();
    if attempts > cap || draws.iter().any(|d| d.0.is_none()) {
        return Err(StatsError::Degenerate { attempts, resamples: b_total });
    }
    let mut values: Vec<f64> = draws.into_iter().filter_map(|d| d.0).collect();
    values.sort_by(f64::total_cmp);
    Ok((percentile(&values, cfg.ci_percentiles[0]), percentile(&values, cfg.ci_percentiles[1])))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningScenario {
    pub sensitivity: f64,
    pub specificity: f64,
    pub prevalence: f64,
    pub population: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningYield {
    pub true_positives: f64,
    pub false_positives: f64,
    pub flagged: f64,
    pub ppv: Option<f64>,
}

/// Round half away from zero (the behaviour of `f64::round`).
pub fn round_count(x: f64) -> i64 {
    x.round() as i64
}

/// Percentage with one decimal, rounded half away from zero.
pub fn round_percent(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

impl ScreeningYield {
    pub fn display_true_positives(&self) -> i64 {
        round_count(self.true_positives)
    }

    /// Flagged count as displayed: rounded true positives plus rounded false
    /// positives, so the displayed parts add up.
    pub fn display_flagged(&self) -> i64 {
        round_count(self.true_positives) + round_count(self.false_positives)
    }

    pub fn display_ppv_percent(&self) -> Option<f64> {
        self.ppv.map(round_percent)
    }
}

pub fn ppv_projection(sc: &ScreeningScenario) -> Result<ScreeningYield, StatsError> {
    for (name, v) in [("sensitivity", sc.sensitivity), ("specificity", sc.specificity), ("prevalence", sc.prevalence)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(StatsError::Scenario(format!("{name} {v} outside [0, 1]")));
        }
    }
    if sc.population == 0 {
        return Err(StatsError::Scenario("population must be positive".into()));
    }
    let n = sc.population as f64;
    let true_positives = sc.sensitivity * sc.prevalence * n;
    let false_positives = (1.0 - sc.specificity) * (1.0 - sc.prevalence) * n;
    let flagged = true_positives + false_positives;
    let ppv = (flagged > 0.0).then(|| true_positives / flagged);
    Ok(ScreeningYield { true_positives, false_positives, flagged, ppv })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_basic() {
        let r = binary_rates(&ConfusionMatrix::new(9, 1, 9, 1));
        assert_eq!(r.sensitivity, Some(0.9));
        assert_eq!(r.specificity, Some(0.9));
        assert_eq!(r.f1, Some(0.9));
        let perfect = binary_rates(&ConfusionMatrix::new(5, 0, 7, 0));
        for v in [perfect.sensitivity, perfect.specificity, perfect.ppv, perfect.accuracy, perfect.balanced_accuracy, perfect.f1] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn undefined_rates_are_none() {
        let r = binary_rates(&ConfusionMatrix::new(0, 0, 4, 0));
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.ppv, None);
        assert_eq!(r.balanced_accuracy, None);
        assert_eq!(r.specificity, Some(1.0));
    }

    #[test]
    fn internal_test_rates_round_as_reported() {
        let r = binary_rates(&ConfusionMatrix::new(271, 4, 299, 8));
        assert_eq!(round_percent(r.sensitivity.unwrap()), 97.1);
        assert_eq!(round_percent(r.specificity.unwrap()), 98.7);
    }

    #[test]
    fn wilson_endpoints() {
        let (lo, hi) = wilson_ci(10, 10, 1.96).unwrap();
        assert!((lo - 0.7225).abs() < 1e-4 && hi == 1.0);
        let (lo, hi) = wilson_ci(0, 10, 1.96).unwrap();
        assert!(lo == 0.0 && (hi - 0.2775).abs() < 1e-4);
        let (lo, hi) = wilson_ci(5, 10, 1.96).unwrap();
        assert!(((0.5 - lo) - (hi - 0.5)).abs() < 1e-12);
        assert!(wilson_ci(3, 2, 1.96).is_err());
        assert!(wilson_ci(0, 0, 1.96).is_err());
    }

    #[test]
    fn auc_examples() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &[true, false, true, false]).unwrap().auc, 0.5);
        assert_eq!(roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap().auc, 0.75);
        assert!(matches!(roc_auc(&[0.1, 0.2], &[true, true]), Err(StatsError::SingleClass { .. })));
    }

    #[test]
    fn roc_curve_anchors() {
        let c = roc_auc(&[0.8, 0.4, 0.6, 0.2], &[true, true, false, false]).unwrap();
        let first = c.points.first().unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(c.points.len(), 5);
    }

    #[test]
    fn bootstrap_constant_and_deterministic() {
        let cfg = StatConfig { bootstrap_resamples: 200, bootstrap_seed: 4, ..Default::default() };
        let (lo, hi) = bootstrap_ci(30, |_| Some(3.0), &cfg).unwrap();
        assert_eq!((lo, hi), (3.0, 3.0));
        let data: Vec<f64> = (0..50).map(|i| (i * 7 % 13) as f64).collect();
        let mean = |idx: &[usize]| Some(idx.iter().map(|&i| data[i]).sum::<f64>() / idx.len() as f64);
        assert_eq!(bootstrap_ci(50, mean, &cfg).unwrap(), bootstrap_ci(50, mean, &cfg).unwrap());
    }

    #[test]
    fn bootstrap_cap() {
        let cfg = StatConfig { bootstrap_resamples: 20, ..Default::default() };
        assert!(matches!(bootstrap_ci(10, |_| None, &cfg), Err(StatsError::Degenerate { .. })));
        assert!(matches!(bootstrap_ci(1, |_| Some(1.0), &cfg), Err(StatsError::TooFewObservations(1))));
    }

    #[test]
    fn ppv_lower_corner() {
        let y = ppv_projection(&ScreeningScenario { sensitivity: 0.944, specificity: 0.966, prevalence: 0.036, population: 100_000 })
            .unwrap();
        assert_eq!(y.display_true_positives(), 3398);
        assert_eq!(y.display_flagged(), 6676);
        assert_eq!(y.display_ppv_percent(), Some(50.9));
    }

    #[test]
    fn ppv_undefined_when_nothing_flagged() {
        let y = ppv_projection(&ScreeningScenario { sensitivity: 0.0, specificity: 1.0, prevalence: 0.1, population: 10 }).unwrap();
        assert_eq!(y.ppv, None);
    }
}
