//! Three-stage detection cascade: anatomy (stage 1), lesion probability map
//! (stage 2), per-candidate classification (stage 3), followed by the
//! patient-level decision rule. Stages 1 and 2 are oracles built from the
//! phantom ground truth with configurable corruption.

mod classifier;
mod features;
mod oracle;
mod stage1;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decision::{detect_in_region, majority_segment, DecisionConfig, DecisionError, DetectionResult};
use crate::phantom::{Case, CaseLabel};
use crate::rng;
use crate::volume::{connected_components, hd95, BinaryMask, Component, Connectivity, ProbabilityMap, Segment, VolumeError};

pub use classifier::{argmax, objective, Classifier, ComponentClass, TrainConfig, N_CLASSES};
pub use features::{extract_features, sphericity, FeatureVector, FEATURE_DIM, FEATURE_NAMES, SHELL_RADIUS};
pub use oracle::{stage2_localize, stage2_localize_in, OracleConfig, ProbLaw, Stage2Output};
pub use stage1::{max_inscribed_radius_mm, stage1_segment, Stage1Config, Stage1Output};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error("invalid cascade config: {0}")]
    Config(String),
    #[error("feature vector has {got} entries, model expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot train classifier: {0}")]
    DegenerateTraining(String),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
}

/// Ablations. `no_stage1_context`: stage 2 ignores the pancreas (blobs land
/// anywhere, nothing is clipped) and the decision rule treats every
/// candidate as inside. `image_level`: no candidates; the whole pancreas is
/// classified as one unit and its PDAC probability is the patient score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    pub no_stage1_context: bool,
    pub image_level: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub stage1: Stage1Config,
    pub oracle: OracleConfig,
    pub decision: DecisionConfig,
    pub ablation: Ablation,
    pub train: TrainConfig,
    /// Blob rate used when generating training candidates, so the spurious
    /// class is represented.
    pub training_blob_rate: f64,
    pub compute_hd95: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stage1: Stage1Config::default(),
            oracle: OracleConfig::default(),
            decision: DecisionConfig::default(),
            ablation: Ablation::default(),
            train: TrainConfig::default(),
            training_blob_rate: 2.0,
            compute_hd95: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CascadeError> {
        self.stage1.validate()?;
        self.oracle.validate()?;
        self.decision.validate()?;
        if !(self.training_blob_rate.is_finite() && self.training_blob_rate >= 0.0) {
            return Err(CascadeError::Config("training_blob_rate must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentResult {
    pub voxel_count: usize,
    pub centroid_mm: [f64; 3],
    pub max_probability: f64,
    pub inside_fraction: f64,
    pub inside: bool,
    pub segment: Option<Segment>,
    pub features: Vec<f64>,
    pub class_probabilities: [f64; N_CLASSES],
    pub predicted: ComponentClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionLocalization {
    pub voxel_count: usize,
    pub emitted: bool,
    /// Predicted mask shares at least one voxel with the lesion.
    pub overlap: bool,
    pub hd95_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub truth: CaseLabel,
    pub seed: u64,
    pub ablation: Ablation,
    pub duct_dilated: bool,
    pub duct_radius_mm: f64,
    pub blob_count: usize,
    pub patient_score: f64,
    pub patient_detected: bool,
    pub winner: Option<usize>,
    pub predicted_class: CaseLabel,
    pub predicted_segment: Option<Segment>,
    pub components: Vec<ComponentResult>,
    pub lesions: Vec<LesionLocalization>,
    /// Winning component's majority segment equals the reported segment;
    /// `None` when the case reports no segment.
    pub segment_match: Option<bool>,
}

/// In-memory result, including the volumes behind the JSON summary.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub result: CaseResult,
    pub prob: ProbabilityMap,
    pub detection: Option<DetectionResult>,
    /// Union of inside candidates whose max probability exceeds tau.
    pub predicted_mask: Vec<usize>,
}

impl CascadeOutput {
    pub fn predicted_mask(&self) -> BinaryMask {
        BinaryMask::from_indices(*self.prob.geometry(), self.predicted_mask.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub classifier: Classifier,
}

/// A case with its stage-1 output and derived regions, reusable across
/// several stage-2 seeds.
pub struct PreparedCase<'a> {
    pub case: &'a Case,
    pub stage1: Stage1Output,
    /// Stage-2 clipping region (`None` without stage-1 context).
    pub context: Option<BinaryMask>,
    /// Region used for the inside-pancreas test.
    pub decision_region: BinaryMask,
    lesions: Vec<Component>,
}

impl<'a> PreparedCase<'a> {
    pub fn new(case: &'a Case, config: &PipelineConfig, seed: u64) -> Result<Self, CascadeError> {
        config.validate()?;
        let stage1 = stage1_segment(case, &config.stage1, rng::derive(seed, 1))?;
        let g = *case.geometry();
        let (context, decision_region) = if config.ablation.no_stage1_context {
            (None, BinaryMask::from_fn(g, |_, _, _| true))
        } else {
            let context = stage1.context_region(config.oracle.context_radius);
            let region = if config.decision.pancreas_dilation == config.oracle.context_radius {
                context.clone()
            } else {
                stage1.context_region(config.decision.pancreas_dilation)
            };
            (Some(context), region)
        };
        let lesions = connected_components(&case.gt_lesion_mask, Connectivity::TwentySix).into_components();
        Ok(Self { case, stage1, context, decision_region, lesions })
    }
}

fn case_class(class: ComponentClass) -> CaseLabel {
    match class {
        ComponentClass::Pdac => CaseLabel::Pdac,
        ComponentClass::NonPdac => CaseLabel::NonPdac,
        ComponentClass::Spurious => CaseLabel::Normal,
    }
}

fn sorted_overlap(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

impl Pipeline {
    pub fn new(config: PipelineConfig, classifier: Classifier) -> Result<Self, CascadeError> {
        config.validate()?;
        if classifier.dim() != FEATURE_DIM {
            return Err(CascadeError::Dimension { expected: FEATURE_DIM, got: classifier.dim() });
        }
        Ok(Self { config, classifier })
    }

    pub fn run(&self, case: &Case, seed: u64) -> Result<CascadeOutput, CascadeError> {
        let prepared = PreparedCase::new(case, &self.config, seed)?;
        self.run_prepared(&prepared, seed)
    }

    pub fn run_prepared(&self, p: &PreparedCase<'_>, seed: u64) -> Result<CascadeOutput, CascadeError> {
        let cfg = &self.config;
        let case = p.case;
        let s2 = stage2_localize_in(case, &p.stage1, &cfg.oracle, p.context.as_ref(), rng::derive(seed, 2))?;

        let mut result = CaseResult {
            case_id: case.id.clone(),
            truth: case.covariates.label,
            seed,
            ablation: cfg.ablation,
            duct_dilated: p.stage1.duct_dilated,
            duct_radius_mm: p.stage1.duct_radius_mm,
            blob_count: s2.blob_count,
            patient_score: 0.0,
            patient_detected: false,
            winner: None,
            predicted_class: CaseLabel::Normal,
            predicted_segment: None,
            components: Vec::new(),
            lesions: Vec::new(),
            segment_match: None,
        };

        if cfg.ablation.image_level {
            let unit = Component::from_voxels(case.geometry(), p.stage1.pancreas_voxels().to_vec());
            if unit.is_empty() {
                return Err(CascadeError::Config(format!("case {} has no pancreas for the image-level baseline", case.id)));
            }
            let fv = extract_features(&unit, case, &p.stage1)?;
            let probs = self.classifier.predict_proba(fv.as_slice())?;
            let predicted = ComponentClass::ALL[argmax(&probs)];
            let score = probs[ComponentClass::Pdac.index()];
            result.patient_score = score;
            result.patient_detected = score > cfg.decision.tau;
            result.winner = Some(0);
            result.predicted_class = if result.patient_detected { case_class(predicted) } else { CaseLabel::Normal };
            result.components.push(ComponentResult {
                voxel_count: unit.len(),
                centroid_mm: unit.centroid_mm(),
                max_probability: score,
                inside_fraction: 1.0,
                inside: true,
                segment: None,
                features: fv.0.to_vec(),
                class_probabilities: probs,
                predicted,
            });
            let predicted_mask = if result.patient_detected { unit.voxels().to_vec() } else { Vec::new() };
            result.lesions = p
                .lesions
                .iter()
                .zip(&s2.lesions_emitted)
                .map(|(l, &emitted)| LesionLocalization {
                    voxel_count: l.len(),
                    emitted,
                    overlap: sorted_overlap(&predicted_mask, l.voxels()),
                    hd95_mm: None,
                })
                .collect();
            result.segment_match = case.covariates.segment.map(|_| false);
            return Ok(CascadeOutput { result, prob: s2.prob, detection: None, predicted_mask });
        }

        let detection = detect_in_region(&s2.prob, &p.decision_region, &cfg.decision)?;
        for cand in &detection.candidates {
            let fv = extract_features(&cand.component, case, &p.stage1)?;
            let probs = self.classifier.predict_proba(fv.as_slice())?;
            result.components.push(ComponentResult {
                voxel_count: cand.component.len(),
                centroid_mm: cand.component.centroid_mm(),
                max_probability: cand.max_probability,
                inside_fraction: cand.inside_fraction,
                inside: cand.inside,
                segment: majority_segment(&cand.component, &p.stage1.anatomy),
                features: fv.0.to_vec(),
                class_probabilities: probs,
                predicted: ComponentClass::ALL[argmax(&probs)],
            });
        }
        result.patient_score = detection.patient_score;
        result.patient_detected = detection.detected;
        result.winner = detection.winner;
        if detection.detected {
            let w = detection.winner.expect("detected implies a winner");
            result.predicted_class = case_class(result.components[w].predicted);
            result.predicted_segment = result.components[w].segment;
        }

        let mut predicted_mask: Vec<usize> = detection
            .candidates
            .iter()
            .filter(|c| c.inside && c.max_probability > cfg.decision.tau)
            .flat_map(|c| c.component.voxels().iter().copied())
            .collect();
        predicted_mask.sort_unstable();

        let g = *case.geometry();
        for (lesion, &emitted) in p.lesions.iter().zip(&s2.lesions_emitted) {
            let overlap = sorted_overlap(&predicted_mask, lesion.voxels());
            let hd = if overlap && cfg.compute_hd95 {
                let touching: Vec<usize> = detection
                    .candidates
                    .iter()
                    .filter(|c| c.inside && c.max_probability > cfg.decision.tau && sorted_overlap(c.component.voxels(), lesion.voxels()))
                    .flat_map(|c| c.component.voxels().iter().copied())
                    .collect();
                Some(hd95(&BinaryMask::from_indices(g, touching), &lesion.to_mask(&g))?)
            } else {
                None
            };
            result.lesions.push(LesionLocalization { voxel_count: lesion.len(), emitted, overlap, hd95_mm: hd });
        }
        result.segment_match = case.covariates.segment.map(|reported| {
            detection.detected && detection.winning().is_some_and(|w| majority_segment(&w.component, &p.stage1.anatomy) == Some(reported))
        });

        Ok(CascadeOutput { result, prob: s2.prob, detection: Some(detection), predicted_mask })
    }
}

/// Run the full cascade on one case.
pub fn run_cascade(case: &Case, pipeline: &Pipeline, seed: u64) -> Result<CascadeOutput, CascadeError> {
    pipeline.run(case, seed)
}

/// Stage-3 class probabilities for one feature vector.
pub fn stage3_classify(model: &Classifier, fv: &[f64]) -> Result<[f64; N_CLASSES], CascadeError> {
    model.predict_proba(fv)
}

/// Labeled candidates from one case: stage-2 candidates overlapping a
/// ground-truth lesion take the case's lesion class, all others are spurious.
pub fn training_examples(case: &Case, config: &PipelineConfig, seed: u64) -> Result<Vec<(FeatureVector, ComponentClass)>, CascadeError> {
    let mut cfg = config.clone();
    cfg.ablation = Ablation::default();
    cfg.oracle.blob_rate = cfg.training_blob_rate;
    let prepared = PreparedCase::new(case, &cfg, seed)?;
    let s2 = stage2_localize_in(case, &prepared.stage1, &cfg.oracle, prepared.context.as_ref(), rng::derive(seed, 2))?;
    let detection = detect_in_region(&s2.prob, &prepared.decision_region, &cfg.decision)?;
    let lesion_class = match case.covariates.label {
        CaseLabel::Pdac => ComponentClass::Pdac,
        CaseLabel::NonPdac => ComponentClass::NonPdac,
        CaseLabel::Normal => ComponentClass::Spurious,
    };
    let gt: Vec<usize> = case.gt_lesion_mask.indices();
    let mut out = Vec::new();
    for cand in detection.candidates.iter().filter(|c| c.inside) {
        let fv = extract_features(&cand.component, case, &prepared.stage1)?;
        let class = if sorted_overlap(cand.component.voxels(), &gt) { lesion_class } else { ComponentClass::Spurious };
        out.push((fv, class));
    }
    Ok(out)
}

/// Train the stage-3 classifier on candidates harvested from `cases`.
pub fn train_on_cases<'a>(
    cases: impl IntoIterator<Item = &'a Case>,
    config: &PipelineConfig,
    seed: u64,
) -> Result<Classifier, CascadeError> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, case) in cases.into_iter().enumerate() {
        for (fv, class) in training_examples(case, config, rng::derive2(seed, k as u64, rng::fnv1a(&case.id)))? {
            xs.push(fv.0.to_vec());
            ys.push(class);
        }
    }
    let train = TrainConfig { seed: rng::derive(seed, config.train.seed), ..config.train.clone() };
    Classifier::train(&xs, &ys, &train)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, inject_lesion, LesionClass, LesionSpec, PhantomConfig};

    fn lesioned(dilate_duct: bool) -> Case {
        let base = generate_phantom(7, &PhantomConfig::small()).unwrap();
        let spec = LesionSpec {
            segment: Segment::Body,
            diameter_mm: 12.0,
            contrast: -30.0,
            irregularity: 0.4,
            induces_duct_dilation: dilate_duct,
            class: LesionClass::Pdac,
        };
        inject_lesion(&base, &spec, 4).unwrap()
    }

    fn perfect() -> Pipeline {
        let config = PipelineConfig { oracle: OracleConfig::perfect(), ..Default::default() };
        Pipeline::new(config, Classifier::zeros(FEATURE_DIM)).unwrap()
    }

    #[test]
    fn perfect_oracle_detects_and_localizes() {
        let case = lesioned(false);
        let out = run_cascade(&case, &perfect(), 1).unwrap();
        assert!(out.result.patient_detected);
        assert_eq!(out.result.predicted_segment, Some(Segment::Body));
        assert_eq!(out.result.segment_match, Some(true));
        assert!(out.result.lesions.iter().all(|l| l.overlap));
        assert_eq!(out.result.lesions[0].hd95_mm, Some(0.0));
    }

    #[test]
    fn normal_case_without_blobs_is_negative() {
        let case = generate_phantom(8, &PhantomConfig::small()).unwrap();
        let out = run_cascade(&case, &perfect(), 2).unwrap();
        assert!(!out.result.patient_detected);
        assert_eq!(out.result.predicted_class, CaseLabel::Normal);
    }

    #[test]
    fn image_level_ablation_has_one_unit() {
        let mut p = perfect();
        p.config.ablation.image_level = true;
        for case in [lesioned(false), generate_phantom(9, &PhantomConfig::small()).unwrap()] {
            assert_eq!(run_cascade(&case, &p, 3).unwrap().result.components.len(), 1);
        }
    }

    #[test]
    fn duct_flag_follows_lesion_spec() {
        let cfg = Stage1Config::default();
        assert!(stage1_segment(&lesioned(true), &cfg, 0).unwrap().duct_dilated);
        assert!(!stage1_segment(&lesioned(false), &cfg, 0).unwrap().duct_dilated);
        let normal = generate_phantom(1, &PhantomConfig::default()).unwrap();
        assert!(!stage1_segment(&normal, &cfg, 0).unwrap().duct_dilated);
    }

    #[test]
    fn results_are_deterministic() {
        let case = lesioned(true);
        let config = PipelineConfig {
            oracle: OracleConfig { blob_rate: 2.0, jitter_voxels: 1, miss_probability: 0.2, ..Default::default() },
            ..Default::default()
        };
        let p = Pipeline::new(config, Classifier::zeros(FEATURE_DIM)).unwrap();
        let a = serde_json::to_string(&run_cascade(&case, &p, 5).unwrap().result).unwrap();
        let b = serde_json::to_string(&run_cascade(&case, &p, 5).unwrap().result).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_harvests_all_classes() {
        let cfg = PipelineConfig { training_blob_rate: 3.0, ..Default::default() };
        let cases = [lesioned(false), generate_phantom(3, &PhantomConfig::small()).unwrap()];
        let model = train_on_cases(cases.iter(), &cfg, 1).unwrap();
        assert_eq!(model.dim(), FEATURE_DIM);
    }
}
