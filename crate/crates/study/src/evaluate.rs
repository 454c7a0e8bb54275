//! Parallel cohort evaluation. Per-case work fans out over a bounded pool;
//! results are merged in sorted id order so the output does not depend on
//! scheduling.

use std::path::Path;

use panscreen_core::cascade::{train_on_cases, CaseResult, Classifier, Pipeline, PipelineConfig};
use panscreen_core::phantom::{plan_cohort, realize_case, CohortConfig};
use panscreen_core::rng;
use panscreen_core::stats::StatConfig;
use panscreen_core::volume::nifti;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{load_case, CohortMeta};
use crate::config::TrainingConfig;
use crate::manifest::Manifest;
use crate::strata::{stratified_report, StratifiedReport};
use crate::StudyError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseFailure {
    pub case_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub results: Vec<CaseResult>,
    pub failures: Vec<CaseFailure>,
    pub report: StratifiedReport,
}

/// Cascade seed for one case; independent of cohort order.
pub fn case_seed(seed: u64, id: &str) -> u64 {
    rng::derive(seed, rng::fnv1a(id))
}

/// Pipeline config adjusted to the cohort on disk: the stage-1 duct
/// baseline comes from the generation config when `cohort.json` exists.
pub fn config_for_manifest(config: &PipelineConfig, manifest: &Manifest) -> Result<PipelineConfig, StudyError> {
    let mut out = config.clone();
    if let Some(meta) = CohortMeta::find(manifest)? {
        out.stage1.baseline_duct_radius_mm = meta.config.phantom.duct_radius_mm;
    }
    Ok(out)
}

/// Fit the stage-3 classifier on a fresh in-memory cohort drawn with the
/// evaluation cohort's settings.
pub fn train_classifier(
    cohort: &CohortConfig,
    training: &TrainingConfig,
    pipeline: &PipelineConfig,
    seed: u64,
    threads: usize,
) -> Result<Classifier, StudyError> {
    let cfg = CohortConfig {
        n_pdac: training.n_pdac,
        n_nonpdac: training.n_nonpdac,
        n_normal: training.n_normal,
        ..cohort.clone()
    };
    let plans = plan_cohort(&cfg, rng::derive(seed, 0x7EA1))?;
    let pool = crate::thread_pool(threads)?;
    let cases = pool.install(|| plans.par_iter().map(|p| realize_case(p, &cfg.phantom)).collect::<Result<Vec<_>, _>>())?;
    Ok(train_on_cases(&cases, pipeline, rng::derive(seed, 0x7EA2))?)
}

/// Run the cascade on every manifest case. Failed cases are listed in
/// `failures` and left out of the metrics. When `mask_dir` is given, each
/// predicted lesion mask is written to `<mask_dir>/<id>_pred.nii`.
pub fn evaluate_cohort(
    manifest: &Manifest,
    pipeline: &Pipeline,
    stats: &StatConfig,
    seed: u64,
    threads: usize,
    mask_dir: Option<&Path>,
) -> Result<Evaluation, StudyError> {
    stats.validate()?;
    if let Some(dir) = mask_dir {
        std::fs::create_dir_all(dir).map_err(|e| StudyError::io(dir, e))?;
    }
    let pool = crate::thread_pool(threads)?;
    let outcomes: Vec<(String, Result<CaseResult, StudyError>)> = pool.install(|| {
        manifest
            .rows
            .par_iter()
            .map(|row| {
                let run = || -> Result<CaseResult, StudyError> {
                    let case = load_case(manifest, row)?;
                    let out = pipeline.run(&case, case_seed(seed, &row.id))?;
                    if let Some(dir) = mask_dir {
                        let p = dir.join(format!("{}_pred.nii", row.id));
                        nifti::write_mask(&p, &out.predicted_mask()).map_err(|e| StudyError::nifti(&p, e))?;
                    }
                    Ok(out.result)
                };
                (row.id.clone(), run())
            })
            .collect()
    });
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (case_id, outcome) in outcomes {
        match outcome {
            Ok(r) => results.push(r),
            Err(e) => failures.push(CaseFailure { case_id, error: e.to_string() }),
        }
    }
    results.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    failures.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let report = stratified_report(manifest, &results, stats)?;
    Ok(Evaluation { results, failures, report })
}
