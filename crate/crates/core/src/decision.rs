//! Patient-level detection and lesion-level localization rules.
//!
//! A patient is flagged when the largest candidate region lying inside the
//! pancreas has a maximum voxel probability above `tau`. Candidates are the
//! connected components of `{p >= candidate_threshold}`; a candidate counts as
//! inside when at least `inside_fraction` of its voxels fall in the pancreas
//! dilated by `pancreas_dilation` voxels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{
    connected_components, dilate, overlap_count, BinaryMask, Component, Connectivity, LabelVolume,
    ProbabilityMap, Segment, VolumeError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecisionError {
    #[error("invalid decision config: {0}")]
    Config(String),
    #[error("ground-truth mask is empty")]
    EmptyGroundTruth,
    #[error("localization accuracy of an empty lesion list is undefined")]
    NoLesions,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecisionConfig {
    pub tau: f64,
    pub candidate_threshold: f64,
    pub inside_fraction: f64,
    pub pancreas_dilation: u32,
    pub connectivity: Connectivity,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            tau: 0.5,
            candidate_threshold: 0.5,
            inside_fraction: 0.5,
            pancreas_dilation: 2,
            connectivity: Connectivity::TwentySix,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<(), DecisionError> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(DecisionError::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.candidate_threshold) {
            return Err(DecisionError::Config(format!("candidate_threshold {} outside [0, 1]", self.candidate_threshold)));
        }
        if !(self.inside_fraction > 0.0 && self.inside_fraction <= 1.0) {
            return Err(DecisionError::Config(format!("inside_fraction {} outside (0, 1]", self.inside_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub component: Component,
    pub max_probability: f64,
    /// Fraction of voxels inside the dilated pancreas.
    pub inside_fraction: f64,
    pub inside: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub patient_score: f64,
    /// Index into `candidates`.
    pub winner: Option<usize>,
    pub candidates: Vec<Candidate>,
}

impl DetectionResult {
    pub fn winning(&self) -> Option<&Candidate> {
        self.winner.map(|k| &self.candidates[k])
    }
}

/// Apply the detection rule. `pancreas` is the raw gland mask; it is dilated
/// here.
pub fn patient_detection(
    prob: &ProbabilityMap,
    pancreas: &BinaryMask,
    cfg: &DecisionConfig,
) -> Result<DetectionResult, DecisionError> {
    prob.geometry().ensure_aligned(pancreas.geometry())?;
    let region = dilate(pancreas, cfg.pancreas_dilation);
    detect_in_region(prob, &region, cfg)
}

/// Same as [`patient_detection`] with the dilated pancreas supplied by the
/// caller, so it can be reused across runs.
pub fn detect_in_region(
    prob: &ProbabilityMap,
    region: &BinaryMask,
    cfg: &DecisionConfig,
) -> Result<DetectionResult, DecisionError> {
    cfg.validate()?;
    prob.geometry().ensure_aligned(region.geometry())?;
    let mask = prob.threshold(cfg.candidate_threshold as f32);
    let set = connected_components(&mask, cfg.connectivity);

    let candidates: Vec<Candidate> = set
        .into_components()
        .into_iter()
        .map(|c| {
            let max_probability = c.voxels().iter().map(|&v| prob.get(v) as f64).fold(0.0, f64::max);
            let n_in = c.voxels().iter().filter(|&&v| region.get(v)).count();
            let inside_fraction = n_in as f64 / c.len() as f64;
            Candidate { inside: inside_fraction >= cfg.inside_fraction, component: c, max_probability, inside_fraction }
        })
        .collect();

    // Largest inside candidate; ties by higher max probability, then lower
    // minimum voxel index.
    let winner = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| c.inside)
        .min_by(|(_, a), (_, b)| {
            b.component
                .len()
                .cmp(&a.component.len())
                .then(b.max_probability.total_cmp(&a.max_probability))
                .then(a.component.min_index().cmp(&b.component.min_index()))
        })
        .map(|(k, _)| k);

    let patient_score = winner.map_or(0.0, |k| candidates[k].max_probability);
    Ok(DetectionResult { detected: patient_score > cfg.tau, patient_score, winner, candidates })
}

/// A lesion is localized when the predicted mask shares at least one voxel
/// with it.
pub fn localize_by_overlap(pred: &BinaryMask, gt: &BinaryMask) -> Result<bool, DecisionError> {
    localize_by_overlap_fraction(pred, gt, 0.0)
}

/// Overlap rule with a minimum fraction of ground-truth voxels covered. A
/// fraction of 0 reduces to the one-voxel rule.
pub fn localize_by_overlap_fraction(pred: &BinaryMask, gt: &BinaryMask, min_fraction: f64) -> Result<bool, DecisionError> {
    pred.geometry().ensure_aligned(gt.geometry())?;
    let n = gt.popcount();
    if n == 0 {
        return Err(DecisionError::EmptyGroundTruth);
    }
    let shared = overlap_count(pred, gt)?;
    Ok(shared >= 1 && shared as f64 >= min_fraction * n as f64)
}

/// Majority segment among the component's in-pancreas voxels. Ties go to the
/// first segment in head, body, tail order.
pub fn majority_segment(comp: &Component, segments: &LabelVolume) -> Option<Segment> {
    let mut votes = [0usize; 3];
    for &v in comp.voxels() {
        if let Some(s) = segments.get(v).segment() {
            votes[s.ordinal()] += 1;
        }
    }
    let best = (0..3).max_by(|&a, &b| votes[a].cmp(&votes[b]).then(b.cmp(&a)))?;
    (votes[best] > 0).then_some(Segment::ALL[best])
}

/// Report-style localization: the component's majority segment matches the
/// reported one. A component with no pancreas voxels never matches.
pub fn localize_by_segment(comp: &Component, segments: &LabelVolume, reported: Segment) -> bool {
    majority_segment(comp, segments) == Some(reported)
}

pub fn localization_accuracy(matched: &[bool]) -> Result<f64, DecisionError> {
    if matched.is_empty() {
        return Err(DecisionError::NoLesions);
    }
    Ok(matched.iter().filter(|&&m| m).count() as f64 / matched.len() as f64)
}
