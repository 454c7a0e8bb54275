//! Cohort planning. A plan fixes every random choice of a case (class,
//! lesion spec, dates, site, seeds) so the manifest can be written without
//! realizing any volume, and each case can be realized independently.

use chrono::{Days, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{
    generate_phantom, inject_lesion, Case, CaseCovariates, CaseLabel, LesionClass, LesionSpec, PancreasShape, Phase,
    PhantomConfig, PhantomError, Setting, TStage,
};
use crate::rng;
use crate::volume::Segment;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub phantom: PhantomConfig,
    pub n_pdac: usize,
    pub n_nonpdac: usize,
    pub n_normal: usize,
    /// Fraction of PDAC lesions at or below 2 cm.
    pub small_fraction: f64,
    pub small_diameter_mm: [f64; 2],
    pub large_diameter_mm: [f64; 2],
    /// Relative weights for head, body, tail.
    pub segment_weights: [f64; 3],
    /// Fraction of PDAC cases imaged before diagnosis.
    pub prediagnostic_fraction: f64,
    pub prediagnostic_max_diameter_mm: f64,
    pub prediagnostic_contrast: f64,
    /// Inclusive bounds on diagnosis minus scan date for prediagnostic cases.
    pub lead_days: [u32; 2],
    pub pdac_contrast: f64,
    pub nonpdac_contrast: f64,
    pub pdac_irregularity: f64,
    pub nonpdac_irregularity: f64,
    pub pdac_duct_dilation_probability: f64,
    pub nonpdac_duct_dilation_probability: f64,
    pub sites: Vec<String>,
    pub arterial_fraction: f64,
    pub start_date: NaiveDate,
    pub date_span_days: u32,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            n_pdac: 10,
            n_nonpdac: 5,
            n_normal: 10,
            small_fraction: 0.5,
            small_diameter_mm: [5.0, 20.0],
            large_diameter_mm: [21.0, 26.0],
            segment_weights: [0.6, 0.25, 0.15],
            prediagnostic_fraction: 0.2,
            prediagnostic_max_diameter_mm: 12.0,
            prediagnostic_contrast: -12.0,
            lead_days: [90, 1095],
            pdac_contrast: -30.0,
            nonpdac_contrast: 25.0,
            pdac_irregularity: 0.6,
            nonpdac_irregularity: 0.15,
            pdac_duct_dilation_probability: 0.5,
            nonpdac_duct_dilation_probability: 0.1,
            sites: vec!["site-a".into(), "site-b".into(), "site-c".into()],
            arterial_fraction: 0.5,
            start_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
            date_span_days: 1800,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), PhantomError> {
        self.phantom.validate()?;
        let unit = [
            ("small_fraction", self.small_fraction),
            ("prediagnostic_fraction", self.prediagnostic_fraction),
            ("pdac_irregularity", self.pdac_irregularity),
            ("nonpdac_irregularity", self.nonpdac_irregularity),
            ("pdac_duct_dilation_probability", self.pdac_duct_dilation_probability),
            ("nonpdac_duct_dilation_probability", self.nonpdac_duct_dilation_probability),
            ("arterial_fraction", self.arterial_fraction),
        ];
        for (name, v) in unit {
            if !(0.0..=1.0).contains(&v) {
                return Err(PhantomError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.segment_weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) || self.segment_weights.iter().sum::<f64>() <= 0.0 {
            return Err(PhantomError::Config("segment_weights must be non-negative with a positive sum".into()));
        }
        for (name, r) in [("small_diameter_mm", self.small_diameter_mm), ("large_diameter_mm", self.large_diameter_mm)] {
            if !(r[0] > 0.0 && r[0] <= r[1]) {
                return Err(PhantomError::Config(format!("{name} {r:?} is not an ordered positive range")));
            }
        }
        if self.small_diameter_mm[1] > 20.0 || self.large_diameter_mm[0] <= 20.0 {
            return Err(PhantomError::Config("small lesions must be <= 20 mm and large ones > 20 mm".into()));
        }
        if self.lead_days[0] > self.lead_days[1] {
            return Err(PhantomError::Config(format!("lead_days {:?} unordered", self.lead_days)));
        }
        if self.sites.is_empty() {
            return Err(PhantomError::Config("at least one site is required".into()));
        }
        Ok(())
    }
}

/// Everything needed to realize one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CasePlan {
    pub id: String,
    pub covariates: CaseCovariates,
    pub lesion: Option<LesionSpec>,
    pub phantom_seed: u64,
    pub lesion_seed: u64,
}

fn pick_segment(weights: &[f64; 3], r: &mut rng::Rng) -> Segment {
    let total: f64 = weights.iter().sum();
    let mut u = r.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return Segment::ALL[k];
        }
        u -= w;
    }
    Segment::Tail
}

fn uniform(range: [f64; 2], r: &mut rng::Rng) -> f64 {
    range[0] + (range[1] - range[0]) * r.random::<f64>()
}

/// Plan a cohort. Deterministic in `(cfg, seed)`; case ids are assigned
/// after shuffling so they carry no class information.
pub fn plan_cohort(cfg: &CohortConfig, seed: u64) -> Result<Vec<CasePlan>, PhantomError> {
    cfg.validate()?;
    let mut r = rng::stream(seed, 0xC0407);
    let shape = PancreasShape::new(&cfg.phantom);

    let mut classes: Vec<CaseLabel> = std::iter::repeat_n(CaseLabel::Pdac, cfg.n_pdac)
        .chain(std::iter::repeat_n(CaseLabel::NonPdac, cfg.n_nonpdac))
        .chain(std::iter::repeat_n(CaseLabel::Normal, cfg.n_normal))
        .collect();
    classes.shuffle(&mut r);
    let width = classes.len().max(1).to_string().len().max(4);

    let mut plans = Vec::with_capacity(classes.len());
    for (k, label) in classes.into_iter().enumerate() {
        let id = format!("case-{:0width$}", k + 1, width = width);
        let site = cfg.sites[r.random_range(0..cfg.sites.len())].clone();
        let phase = if r.random::<f64>() < cfg.arterial_fraction { Phase::Arterial } else { Phase::PortalVenous };
        let scan = cfg.start_date + Days::new(r.random_range(0..=cfg.date_span_days) as u64);
        let phantom_seed = rng::derive(seed, 2 * k as u64 + 1);
        let lesion_seed = rng::derive(seed, 2 * k as u64 + 2);

        let (covariates, lesion) = match label {
            CaseLabel::Normal => {
                let mut c = CaseCovariates::normal(site);
                c.phase = phase;
                c.scan_date = Some(scan);
                (c, None)
            }
            CaseLabel::Pdac | CaseLabel::NonPdac => {
                let class = if label == CaseLabel::Pdac { LesionClass::Pdac } else { LesionClass::NonPdac };
                let prediagnostic = class == LesionClass::Pdac && r.random::<f64>() < cfg.prediagnostic_fraction;
                let small = prediagnostic || r.random::<f64>() < cfg.small_fraction;
                let mut segment = pick_segment(&cfg.segment_weights, &mut r);
                // Lesions are seeded near the segment center and must not
                // exceed the local gland thickness.
                let fits = |s: Segment, d: f64| d <= 0.9 * shape.thickness(PancreasShape::segment_center(s) - 0.05);
                let mut range = if small { cfg.small_diameter_mm } else { cfg.large_diameter_mm };
                if prediagnostic {
                    range[1] = range[1].min(cfg.prediagnostic_max_diameter_mm);
                    range[0] = range[0].min(range[1]);
                }
                if !fits(segment, range[0]) {
                    segment = Segment::Head;
                }
                let cap = 0.9 * shape.thickness(PancreasShape::segment_center(segment) - 0.05);
                let hi = range[1].min(cap);
                if hi < range[0] {
                    return Err(PhantomError::Case {
                        id,
                        source: Box::new(PhantomError::LesionSpec(format!(
                            "diameter range {range:?} does not fit segment {segment} (cap {cap:.1} mm)"
                        ))),
                    });
                }
                let diameter = (uniform([range[0], hi], &mut r) * 10.0).round() / 10.0;
                let (contrast, irregularity, p_dilate) = match class {
                    LesionClass::Pdac if prediagnostic => (cfg.prediagnostic_contrast, cfg.pdac_irregularity, cfg.pdac_duct_dilation_probability),
                    LesionClass::Pdac => (cfg.pdac_contrast, cfg.pdac_irregularity, cfg.pdac_duct_dilation_probability),
                    LesionClass::NonPdac => (cfg.nonpdac_contrast, cfg.nonpdac_irregularity, cfg.nonpdac_duct_dilation_probability),
                };
                let spec = LesionSpec {
                    segment,
                    diameter_mm: diameter,
                    contrast,
                    irregularity,
                    induces_duct_dilation: r.random::<f64>() < p_dilate,
                    class,
                };
                let (setting, dx) = if prediagnostic {
                    let lead = r.random_range(cfg.lead_days[0]..=cfg.lead_days[1]);
                    (Setting::Prediagnostic, scan + Days::new(lead as u64))
                } else {
                    (Setting::Diagnostic, scan)
                };
                let c = CaseCovariates {
                    label,
                    tumor_diameter_mm: Some(diameter),
                    t_stage: (class == LesionClass::Pdac).then(|| TStage::from_diameter(diameter)),
                    site,
                    scan_date: Some(scan),
                    dx_date: Some(dx),
                    phase,
                    setting,
                    segment: Some(segment),
                };
                (c, Some(spec))
            }
        };
        plans.push(CasePlan { id, covariates, lesion, phantom_seed, lesion_seed });
    }
    Ok(plans)
}

/// Build the volumes of a planned case.
pub fn realize_case(plan: &CasePlan, phantom: &PhantomConfig) -> Result<Case, PhantomError> {
    let wrap = |e: PhantomError| PhantomError::Case { id: plan.id.clone(), source: Box::new(e) };
    let mut case = generate_phantom(plan.phantom_seed, phantom).map_err(wrap)?;
    if let Some(spec) = &plan.lesion {
        case = inject_lesion(&case, spec, plan.lesion_seed).map_err(wrap)?;
    }
    case.id = plan.id.clone();
    case.covariates = plan.covariates.clone();
    Ok(case)
}
