//! Procedural abdominal phantoms: a curved tubular pancreas split into
//! head/body/tail, a main duct, an artery and a vein, with per-tissue
//! intensity bands, plus lesion injection and cohort planning.

mod cohort;
mod lesion;
mod segments;

use std::sync::Arc;

use chrono::NaiveDate;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::volume::{
    AnatomyLabel, BinaryMask, LabelVolume, ScalarVolume, Segment, VolumeError, VolumeGeometry,
};

pub use cohort::{plan_cohort, realize_case, CasePlan, CohortConfig};
pub use lesion::{inject_lesion, LesionClass, LesionSpec};
pub use segments::{fit_centerline, partition_segments, Centerline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhantomError {
    #[error("invalid phantom config: {0}")]
    Config(String),
    #[error("invalid lesion spec: {0}")]
    LesionSpec(String),
    #[error("lesion placement failed: {0}")]
    Placement(String),
    #[error("cannot partition an empty pancreas mask")]
    EmptyPancreas,
    #[error("case {id}: {source}")]
    Case {
        id: String,
        #[source]
        source: Box<PhantomError>,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Closed intensity interval for one tissue class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn sample(&self, rng: &mut rng::Rng) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntensityBands {
    pub background: Band,
    pub parenchyma: Band,
    pub duct: Band,
    pub vessel: Band,
}

impl Default for IntensityBands {
    fn default() -> Self {
        Self {
            background: Band::new(20.0, 60.0),
            parenchyma: Band::new(85.0, 110.0),
            duct: Band::new(0.0, 20.0),
            vessel: Band::new(150.0, 220.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Pancreas length as a fraction of the x extent.
    pub pancreas_length_fraction: f64,
    pub curvature_amplitude_mm: f64,
    pub head_radius_mm: f64,
    pub tail_radius_mm: f64,
    pub duct_radius_mm: f64,
    pub artery_radius_mm: f64,
    pub vein_radius_mm: f64,
    pub bands: IntensityBands,
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 96],
            spacing: [1.5; 3],
            pancreas_length_fraction: 0.6,
            curvature_amplitude_mm: 12.0,
            head_radius_mm: 16.0,
            tail_radius_mm: 8.0,
            duct_radius_mm: 2.0,
            artery_radius_mm: 4.0,
            vein_radius_mm: 5.0,
            bands: IntensityBands::default(),
            noise_std: 5.0,
        }
    }
}

/// Voxels of clearance required between the pancreas and the grid border.
pub const PANCREAS_MARGIN_VOXELS: f64 = 4.0;

impl PhantomConfig {
    /// A reduced-resolution configuration with the same anatomy layout,
    /// handy for fast tests.
    pub fn small() -> Self {
        Self { dims: [64, 64, 48], spacing: [3.0; 3], duct_radius_mm: 3.0, ..Self::default() }
    }

    pub fn geometry(&self) -> Result<VolumeGeometry, PhantomError> {
        VolumeGeometry::new(self.dims, self.spacing).map_err(|e| PhantomError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let g = self.geometry()?;
        let positive = [
            ("pancreas_length_fraction", self.pancreas_length_fraction),
            ("head_radius_mm", self.head_radius_mm),
            ("tail_radius_mm", self.tail_radius_mm),
            ("duct_radius_mm", self.duct_radius_mm),
            ("artery_radius_mm", self.artery_radius_mm),
            ("vein_radius_mm", self.vein_radius_mm),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhantomError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.pancreas_length_fraction > 1.0 {
            return Err(PhantomError::Config("pancreas_length_fraction must be <= 1".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(PhantomError::Config(format!("noise_std must be >= 0, got {}", self.noise_std)));
        }
        if !self.curvature_amplitude_mm.is_finite() {
            return Err(PhantomError::Config("curvature_amplitude_mm must be finite".into()));
        }
        let b = &self.bands;
        for (name, band) in [("background", b.background), ("parenchyma", b.parenchyma), ("duct", b.duct), ("vessel", b.vessel)] {
            if !(band.lo.is_finite() && band.hi.is_finite() && band.lo <= band.hi) {
                return Err(PhantomError::Config(format!("{name} band [{}, {}] is not a finite interval", band.lo, band.hi)));
            }
        }
        if self.duct_radius_mm * 2.0 >= self.tail_radius_mm {
            return Err(PhantomError::Config("duct (even when dilated) must fit inside the tail".into()));
        }

        let shape = PancreasShape::new(self);
        let sp = g.spacing();
        let dims = g.dims();
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let c = shape.center(t);
            let r = shape.radius(t);
            for a in 0..3 {
                let lo = PANCREAS_MARGIN_VOXELS * sp[a];
                let hi = (dims[a] as f64 - 1.0 - PANCREAS_MARGIN_VOXELS) * sp[a];
                if c[a] - r < lo || c[a] + r > hi {
                    return Err(PhantomError::Config(format!(
                        "pancreas does not fit in {:?} voxels at {:?} mm with a {PANCREAS_MARGIN_VOXELS}-voxel margin",
                        dims, sp
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Analytic pancreas centerline and radius profile. `t = 0` is the tail tip
/// (low x), `t = 1` the head (high x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PancreasShape {
    start: [f64; 3],
    length: f64,
    amplitude: f64,
    tilt: f64,
    head_radius: f64,
    tail_radius: f64,
}

impl PancreasShape {
    pub fn new(cfg: &PhantomConfig) -> Self {
        let extent = [
            (cfg.dims[0] as f64 - 1.0) * cfg.spacing[0],
            (cfg.dims[1] as f64 - 1.0) * cfg.spacing[1],
            (cfg.dims[2] as f64 - 1.0) * cfg.spacing[2],
        ];
        let length = cfg.pancreas_length_fraction * extent[0];
        let start = [0.5 * (extent[0] - length), 0.5 * extent[1] - 0.5 * cfg.curvature_amplitude_mm, 0.5 * extent[2]];
        Self {
            start,
            length,
            amplitude: cfg.curvature_amplitude_mm,
            tilt: 0.15 * cfg.curvature_amplitude_mm,
            head_radius: cfg.head_radius_mm,
            tail_radius: cfg.tail_radius_mm,
        }
    }

    pub fn center(&self, t: f64) -> [f64; 3] {
        [
            self.start[0] + self.length * t,
            self.start[1] + self.amplitude * (std::f64::consts::PI * t).sin(),
            self.start[2] + self.tilt * (t - 0.5),
        ]
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.tail_radius + (self.head_radius - self.tail_radius) * t
    }

    /// Local gland thickness (diameter) at `t`.
    pub fn thickness(&self, t: f64) -> f64 {
        2.0 * self.radius(t)
    }

    /// Segment-center parameter, used when planning lesion sizes.
    pub fn segment_center(segment: Segment) -> f64 {
        match segment {
            Segment::Tail => 1.0 / 6.0,
            Segment::Body => 0.5,
            Segment::Head => 5.0 / 6.0,
        }
    }

    /// Parameter step giving roughly `step_mm` of arc length per sample.
    fn dt(&self, step_mm: f64) -> f64 {
        let approx_len = self.length + 2.0 * self.amplitude;
        (step_mm / approx_len).min(0.01)
    }

    /// Nearest sampled parameter to a physical point.
    pub fn nearest_t(&self, p: [f64; 3]) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let n = 400;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let c = self.center(t);
            let d = dist2(c, p);
            if d < best.0 {
                best = (d, t);
            }
        }
        best.1
    }
}

pub(crate) fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Call `f` for every voxel whose center lies within `radius` mm of `center`.
pub(crate) fn for_each_in_ball(g: &VolumeGeometry, center: [f64; 3], radius: f64, mut f: impl FnMut(usize)) {
    let sp = g.spacing();
    let dims = g.dims();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = ((center[a] - radius) / sp[a]).ceil().max(0.0);
        let h = ((center[a] + radius) / sp[a]).floor().min(dims[a] as f64 - 1.0);
        if h < l {
            return;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    let r2 = radius * radius;
    for z in lo[2]..=hi[2] {
        let dz = z as f64 * sp[2] - center[2];
        for y in lo[1]..=hi[1] {
            let dy = y as f64 * sp[1] - center[1];
            for x in lo[0]..=hi[0] {
                let dx = x as f64 * sp[0] - center[0];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    f(g.index(x, y, z));
                }
            }
        }
    }
}

/// Sweep a ball of varying radius along a parametric curve.
pub(crate) fn sweep_tube(
    g: &VolumeGeometry,
    t_range: (f64, f64),
    dt: f64,
    center: impl Fn(f64) -> [f64; 3],
    radius: impl Fn(f64) -> f64,
    mut mark: impl FnMut(usize),
) {
    let (t0, t1) = t_range;
    let steps = ((t1 - t0) / dt).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = t0 + (t1 - t0) * k as f64 / steps as f64;
        for_each_in_ball(g, center(t), radius(t), &mut mark);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseLabel {
    Pdac,
    NonPdac,
    Normal,
}

impl CaseLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CaseLabel::Pdac => "pdac",
            CaseLabel::NonPdac => "non_pdac",
            CaseLabel::Normal => "normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TStage {
    T1,
    T2,
    T3,
    T4,
}

impl TStage {
    /// Size-only staging: ≤ 2 cm is T1, ≤ 4 cm T2, larger T3.
    pub fn from_diameter(d_mm: f64) -> Self {
        if d_mm <= 20.0 {
            TStage::T1
        } else if d_mm <= 40.0 {
            TStage::T2
        } else {
            TStage::T3
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TStage::T1 => "T1",
            TStage::T2 => "T2",
            TStage::T3 => "T3",
            TStage::T4 => "T4",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Arterial,
    PortalVenous,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Arterial => "arterial",
            Phase::PortalVenous => "portal_venous",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Diagnostic,
    Prediagnostic,
    Normal,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Diagnostic => "diagnostic",
            Setting::Prediagnostic => "prediagnostic",
            Setting::Normal => "normal",
        }
    }
}

/// Per-case clinical covariates, mirroring a cohort manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseCovariates {
    pub label: CaseLabel,
    pub tumor_diameter_mm: Option<f64>,
    pub t_stage: Option<TStage>,
    pub site: String,
    pub scan_date: Option<NaiveDate>,
    pub dx_date: Option<NaiveDate>,
    pub phase: Phase,
    pub setting: Setting,
    /// Reported lesion segment (the radiology-report location).
    pub segment: Option<Segment>,
}

impl CaseCovariates {
    pub fn normal(site: impl Into<String>) -> Self {
        Self {
            label: CaseLabel::Normal,
            tumor_diameter_mm: None,
            t_stage: None,
            site: site.into(),
            scan_date: None,
            dx_date: None,
            phase: Phase::PortalVenous,
            setting: Setting::Normal,
            segment: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.label == CaseLabel::Normal {
            if self.tumor_diameter_mm.is_some() || self.t_stage.is_some() || self.segment.is_some() {
                return Err("normal case carries tumor fields".into());
            }
            if self.setting != Setting::Normal {
                return Err(format!("normal case has setting {}", self.setting.as_str()));
            }
        } else if self.setting == Setting::Normal {
            return Err(format!("{} case has setting normal", self.label.as_str()));
        }
        if self.setting == Setting::Prediagnostic {
            match (self.scan_date, self.dx_date) {
                (Some(s), Some(d)) if s < d => {}
                _ => return Err("prediagnostic case needs scan_date < dx_date".into()),
            }
        }
        Ok(())
    }
}

/// Generation-time geometry kept with a case so lesions can be placed and
/// ducts dilated consistently.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTrace {
    pub config: PhantomConfig,
    pub shape: PancreasShape,
    /// Duct runs along the centerline over this parameter interval.
    pub duct_range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub id: String,
    pub scalar: ScalarVolume,
    pub anatomy: LabelVolume,
    pub gt_lesion_mask: BinaryMask,
    pub covariates: CaseCovariates,
    pub trace: Option<Arc<PhantomTrace>>,
}

impl Case {
    pub fn new(
        id: impl Into<String>,
        scalar: ScalarVolume,
        anatomy: LabelVolume,
        gt_lesion_mask: BinaryMask,
        covariates: CaseCovariates,
    ) -> Result<Self, PhantomError> {
        scalar.geometry().ensure_aligned(anatomy.geometry())?;
        scalar.geometry().ensure_aligned(gt_lesion_mask.geometry())?;
        Ok(Self { id: id.into(), scalar, anatomy, gt_lesion_mask, covariates, trace: None })
    }

    pub fn geometry(&self) -> &VolumeGeometry {
        self.scalar.geometry()
    }

    pub fn pancreas_mask(&self) -> BinaryMask {
        self.anatomy.pancreas_mask()
    }
}

fn draw_intensity(band: &Band, noise_std: f64, rng: &mut rng::Rng) -> f32 {
    let base = band.sample(rng);
    let noise: f64 = if noise_std > 0.0 { noise_std * rng::normal(rng) } else { 0.0 };
    (base + noise) as f32
}

pub(crate) fn band_for(label: AnatomyLabel, bands: &IntensityBands) -> &Band {
    match label {
        AnatomyLabel::Background => &bands.background,
        AnatomyLabel::PancreasHead | AnatomyLabel::PancreasBody | AnatomyLabel::PancreasTail | AnatomyLabel::Lesion => {
            &bands.parenchyma
        }
        AnatomyLabel::Duct => &bands.duct,
        AnatomyLabel::Artery | AnatomyLabel::Vein => &bands.vessel,
    }
}

/// Generate a lesion-free phantom. Pure in `(seed, cfg)`.
pub fn generate_phantom(seed: u64, cfg: &PhantomConfig) -> Result<Case, PhantomError> {
    cfg.validate()?;
    let g = cfg.geometry()?;
    let shape = PancreasShape::new(cfg);
    let step = g.spacing().iter().cloned().fold(f64::INFINITY, f64::min) * 0.25;
    let dt = shape.dt(step);
    let mut labels = vec![AnatomyLabel::Background; g.len()];

    // Artery: vertical tube beside the neck of the gland.
    let t_artery = 0.62;
    let ca = shape.center(t_artery);
    let offset_a = shape.radius(t_artery) + cfg.artery_radius_mm + 4.0;
    let extent_z = (g.dims()[2] as f64 - 1.0) * g.spacing()[2];
    sweep_tube(
        &g,
        (0.0, 1.0),
        step / extent_z.max(1.0),
        |s| [ca[0], ca[1] - offset_a, s * extent_z],
        |_| cfg.artery_radius_mm,
        |i| labels[i] = AnatomyLabel::Artery,
    );

    // Vein: runs along the dorsal side of tail and body.
    sweep_tube(
        &g,
        (0.05, 0.75),
        dt,
        |t| {
            let c = shape.center(t);
            [c[0], c[1], c[2] + shape.radius(t) + cfg.vein_radius_mm + 3.0]
        },
        |_| cfg.vein_radius_mm,
        |i| {
            if labels[i] == AnatomyLabel::Background {
                labels[i] = AnatomyLabel::Vein;
            }
        },
    );

    let mut gland = vec![false; g.len()];
    sweep_tube(&g, (0.0, 1.0), dt, |t| shape.center(t), |t| shape.radius(t), |i| {
        if labels[i] == AnatomyLabel::Background {
            gland[i] = true;
        }
    });

    let duct_range = (0.03, 0.97);
    let mut duct = vec![false; g.len()];
    sweep_tube(&g, duct_range, dt, |t| shape.center(t), |_| cfg.duct_radius_mm, |i| {
        if gland[i] {
            duct[i] = true;
        }
    });

    let parenchyma = BinaryMask::new(g, gland.iter().zip(&duct).map(|(&p, &d)| p && !d).collect())?;
    let segments = partition_segments(&parenchyma)?;
    for i in 0..g.len() {
        if duct[i] {
            labels[i] = AnatomyLabel::Duct;
        } else if gland[i] {
            labels[i] = segments.get(i);
        }
    }
    let anatomy = LabelVolume::new(g, labels)?;

    let mut r = rng::stream(seed, 0x5CA1A5);
    let values: Vec<f32> = anatomy
        .labels()
        .iter()
        .map(|&l| draw_intensity(band_for(l, &cfg.bands), cfg.noise_std, &mut r))
        .collect();
    let scalar = ScalarVolume::new(g, values)?;

    Ok(Case {
        id: format!("phantom-{seed:016x}"),
        scalar,
        anatomy,
        gt_lesion_mask: BinaryMask::empty(g),
        covariates: CaseCovariates::normal("synthetic"),
        trace: Some(Arc::new(PhantomTrace { config: cfg.clone(), shape, duct_range })),
    })
}
