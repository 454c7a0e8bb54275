#![allow(dead_code)]

use std::path::Path;

use chrono::NaiveDate;
use panscreen_core::cascade::{Ablation, CaseResult, Classifier, OracleConfig, Pipeline, PipelineConfig, FEATURE_DIM};
use panscreen_core::phantom::{CaseCovariates, CaseLabel, CohortConfig, PhantomConfig, Setting, TStage};
use panscreen_core::volume::Segment;
use panscreen_study::evaluate::config_for_manifest;
use panscreen_study::reader::{LesionPresent, Location, Suspicion};
use panscreen_study::{generate_cohort, Manifest, ManifestRow, ReaderResponse};

pub fn small_cohort_config(n_pdac: usize, n_nonpdac: usize, n_normal: usize) -> CohortConfig {
    CohortConfig { phantom: PhantomConfig::small(), n_pdac, n_nonpdac, n_normal, ..CohortConfig::default() }
}

pub fn small_cohort(dir: &Path, n_pdac: usize, n_nonpdac: usize, n_normal: usize, seed: u64) -> Manifest {
    generate_cohort(&small_cohort_config(n_pdac, n_nonpdac, n_normal), seed, dir, 1).unwrap();
    Manifest::load(&dir.join("manifest.csv")).unwrap()
}

/// Perfect oracle with an untrained stage-3 model.
pub fn perfect_pipeline(manifest: &Manifest) -> Pipeline {
    let cfg = PipelineConfig { oracle: OracleConfig::perfect(), ..PipelineConfig::default() };
    Pipeline::new(config_for_manifest(&cfg, manifest).unwrap(), Classifier::zeros(FEATURE_DIM)).unwrap()
}

pub fn result(id: &str, truth: CaseLabel, detected: bool) -> CaseResult {
    CaseResult {
        case_id: id.into(),
        truth,
        seed: 0,
        ablation: Ablation::default(),
        duct_dilated: false,
        duct_radius_mm: 0.0,
        blob_count: 0,
        patient_score: if detected { 0.9 } else { 0.0 },
        patient_detected: detected,
        winner: None,
        predicted_class: if detected { CaseLabel::Pdac } else { CaseLabel::Normal },
        predicted_segment: None,
        components: vec![],
        lesions: vec![],
        segment_match: None,
    }
}

/// Ten cases: c000..c002 diagnostic PDAC, c003..c004 prediagnostic PDAC,
/// c005..c009 normal. Paths are not checked.
pub fn manifest10() -> Manifest {
    let rows = (0..10)
        .map(|k| {
            let mut cov = CaseCovariates::normal("site-a");
            if k < 5 {
                cov.label = CaseLabel::Pdac;
                cov.tumor_diameter_mm = Some(15.0);
                cov.t_stage = Some(TStage::T1);
                cov.segment = Some(Segment::Head);
                cov.setting = if k < 3 { Setting::Diagnostic } else { Setting::Prediagnostic };
                if k >= 3 {
                    let scan = NaiveDate::from_ymd_opt(2019, 1, 1).unwrap();
                    cov.scan_date = Some(scan);
                    cov.dx_date = Some(scan + chrono::Duration::days(347));
                }
            }
            ManifestRow {
                id: format!("c{k:03}"),
                covariates: cov,
                scalar_path: "ct.nii".into(),
                anatomy_path: "anatomy.nii".into(),
                lesion_path: None,
            }
        })
        .collect();
    Manifest::new(rows, ".")
}

pub fn response(reader: &str, case: usize, session: u8, positive: bool, suspicion: Suspicion) -> ReaderResponse {
    let (lp, loc, s) = if positive {
        (LesionPresent::Yes, Location::Head, suspicion)
    } else {
        (LesionPresent::No, Location::None, Suspicion::None)
    };
    ReaderResponse {
        reader_id: reader.into(),
        case_id: format!("c{case:03}"),
        session,
        lesion_present: lp,
        location: loc,
        suspicion: s,
        timestamp: format!("2024-05-01T10:{:02}:00.000Z", case),
    }
}

/// AI results on every manifest case; `detected` indexes into the rows.
pub fn ai_results(m: &Manifest, detected: &[usize]) -> Vec<CaseResult> {
    m.rows.iter().enumerate().map(|(k, r)| result(&r.id, r.covariates.label, detected.contains(&k))).collect()
}
