//! Cohort generation to disk and case loading from a manifest.

use std::path::Path;

use panscreen_core::phantom::{plan_cohort, realize_case, Case, CohortConfig};
use panscreen_core::volume::nifti;
use panscreen_core::volume::BinaryMask;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifest::{Manifest, ManifestRow};
use crate::StudyError;

pub const COHORT_META: &str = "cohort.json";

/// Generation parameters stored next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMeta {
    pub seed: u64,
    pub config: CohortConfig,
}

impl CohortMeta {
    /// Reads `cohort.json` beside the manifest, if present.
    pub fn find(manifest: &Manifest) -> Result<Option<Self>, StudyError> {
        let path = manifest.base_dir.join(COHORT_META);
        if path.is_file() {
            crate::read_json(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn case_paths(id: &str, has_lesion: bool) -> (String, String, Option<String>) {
    (
        format!("cases/{id}_ct.nii"),
        format!("cases/{id}_anatomy.nii"),
        has_lesion.then(|| format!("cases/{id}_lesion.nii")),
    )
}

/// Write one case's volumes under `out_dir` and return its manifest row.
pub fn write_case(case: &Case, out_dir: &Path) -> Result<ManifestRow, StudyError> {
    let has_lesion = !case.gt_lesion_mask.is_empty();
    let (scalar_path, anatomy_path, lesion_path) = case_paths(&case.id, has_lesion);
    let dir = out_dir.join("cases");
    std::fs::create_dir_all(&dir).map_err(|e| StudyError::io(&dir, e))?;
    let p = out_dir.join(&scalar_path);
    nifti::write_scalar(&p, &case.scalar).map_err(|e| StudyError::nifti(&p, e))?;
    let p = out_dir.join(&anatomy_path);
    nifti::write_labels(&p, &case.anatomy).map_err(|e| StudyError::nifti(&p, e))?;
    if let Some(rel) = &lesion_path {
        let p = out_dir.join(rel);
        nifti::write_mask(&p, &case.gt_lesion_mask).map_err(|e| StudyError::nifti(&p, e))?;
    }
    Ok(ManifestRow { id: case.id.clone(), covariates: case.covariates.clone(), scalar_path, anatomy_path, lesion_path })
}

/// Plan and realize a cohort, writing volumes, `manifest.csv`,
/// `manifest.json` and `cohort.json` into `out_dir`.
pub fn generate_cohort(cfg: &CohortConfig, seed: u64, out_dir: &Path, threads: usize) -> Result<Manifest, StudyError> {
    let plans = plan_cohort(cfg, seed)?;
    let pool = crate::thread_pool(threads)?;
    let rows: Vec<Result<ManifestRow, StudyError>> = pool.install(|| {
        plans
            .par_iter()
            .map(|plan| {
                let case = realize_case(plan, &cfg.phantom)?;
                write_case(&case, out_dir)
            })
            .collect()
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>, _>>()?;
    let manifest = Manifest::new(rows, out_dir);
    manifest.write(out_dir)?;
    crate::write_json(&out_dir.join(COHORT_META), &CohortMeta { seed, config: cfg.clone() })?;
    Ok(manifest)
}

/// Read a case's volumes. Cases without a lesion file get an empty
/// ground-truth mask.
pub fn load_case(manifest: &Manifest, row: &ManifestRow) -> Result<Case, StudyError> {
    let p = manifest.resolve(&row.scalar_path);
    let scalar = nifti::read_scalar(&p).map_err(|e| StudyError::nifti(&p, e))?;
    let p = manifest.resolve(&row.anatomy_path);
    let anatomy = nifti::read_labels(&p).map_err(|e| StudyError::nifti(&p, e))?;
    let gt = match &row.lesion_path {
        Some(rel) => {
            let p = manifest.resolve(rel);
            nifti::read_mask(&p).map_err(|e| StudyError::nifti(&p, e))?
        }
        None => BinaryMask::empty(*scalar.geometry()),
    };
    Ok(Case::new(row.id.clone(), scalar, anatomy, gt, row.covariates.clone())?)
}
