//! Lesion injection by stochastic boundary accretion.
//!
//! A lesion starts as one voxel near the centerline of the target segment
//! and grows in rounds: every face-adjacent voxel of the same segment is a
//! candidate and is accepted with a probability that, for irregular lesions,
//! favours one random growth axis. Growth stops as soon as the
//! center-to-center diameter reaches the target within half a voxel; since a
//! face-adjacent addition moves the diameter by at most one voxel, the final
//! diameter is within one voxel of the target.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{band_for, dist2, sweep_tube, Case, CaseLabel, PhantomError, Setting, TStage};
use crate::rng;
use crate::volume::{AnatomyLabel, Segment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LesionClass {
    Pdac,
    NonPdac,
}

impl LesionClass {
    pub fn case_label(self) -> CaseLabel {
        match self {
            LesionClass::Pdac => CaseLabel::Pdac,
            LesionClass::NonPdac => CaseLabel::NonPdac,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LesionSpec {
    pub segment: Segment,
    pub diameter_mm: f64,
    /// Mean intensity offset from parenchyma; negative is hypodense.
    pub contrast: f64,
    /// 0 grows isotropically, 1 grows strongly along one random axis.
    pub irregularity: f64,
    pub induces_duct_dilation: bool,
    pub class: LesionClass,
}

impl LesionSpec {
    /// Small lesions are those at or below 2 cm.
    pub fn is_small(&self) -> bool {
        self.diameter_mm <= 20.0
    }

    fn validate(&self) -> Result<(), PhantomError> {
        if !(self.diameter_mm.is_finite() && self.diameter_mm > 0.0) {
            return Err(PhantomError::LesionSpec(format!("diameter {} must be > 0", self.diameter_mm)));
        }
        if !(0.0..=1.0).contains(&self.irregularity) {
            return Err(PhantomError::LesionSpec(format!("irregularity {} outside [0, 1]", self.irregularity)));
        }
        if !self.contrast.is_finite() {
            return Err(PhantomError::LesionSpec("contrast must be finite".into()));
        }
        Ok(())
    }
}

const MAX_ROUNDS: usize = 10_000;

/// Grow a lesion into `case` and update its ground truth, intensities,
/// duct and covariates.
pub fn inject_lesion(case: &Case, spec: &LesionSpec, seed: u64) -> Result<Case, PhantomError> {
    spec.validate()?;
    let trace = case
        .trace
        .clone()
        .ok_or_else(|| PhantomError::Placement("case carries no phantom geometry".into()))?;
    let g = *case.geometry();
    let sp = g.spacing();
    let min_sp = sp.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut r = rng::stream(seed, 0x1E51);

    let target_label = spec.segment.label();
    let allowed = |i: usize, lesion: &[bool]| case.anatomy.get(i) == target_label && !case.gt_lesion_mask.get(i) && !lesion[i];

    // Seed: a point near the centerline in the middle of the segment's span.
    let seg_voxels = case.anatomy.mask_of(target_label).indices();
    if seg_voxels.is_empty() {
        return Err(PhantomError::Placement(format!("segment {} is empty", spec.segment)));
    }
    let (t_lo, t_hi) = seg_voxels
        .iter()
        .step_by(7)
        .map(|&i| trace.shape.nearest_t(g.center_mm(i)))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), t| (a.min(t), b.max(t)));
    let t_mid = 0.5 * (t_lo + t_hi);
    let t_half = 0.5 * (t_hi - t_lo);
    let t_seed = t_mid + t_half * 0.4 * (2.0 * r.random::<f64>() - 1.0);
    let thickness = trace.shape.thickness(t_seed);
    if spec.diameter_mm > thickness {
        return Err(PhantomError::LesionSpec(format!(
            "diameter {:.1} mm exceeds local gland thickness {:.1} mm",
            spec.diameter_mm, thickness
        )));
    }
    let slack = (trace.shape.radius(t_seed) - 0.5 * spec.diameter_mm).max(0.0) * 0.5;
    let jitter: [f64; 3] = UnitSphere.sample(&mut r);
    let mag = slack * r.random::<f64>();
    let c = trace.shape.center(t_seed);
    let anchor = [c[0] + jitter[0] * mag, c[1] + jitter[1] * mag, c[2] + jitter[2] * mag];
    let empty = vec![false; g.len()];
    let seed_voxel = seg_voxels
        .iter()
        .copied()
        .filter(|&i| allowed(i, &empty))
        .min_by(|&a, &b| dist2(g.center_mm(a), anchor).total_cmp(&dist2(g.center_mm(b), anchor)).then(a.cmp(&b)))
        .ok_or_else(|| PhantomError::Placement(format!("no free voxel in segment {}", spec.segment)))?;

    let axis: [f64; 3] = UnitSphere.sample(&mut r);
    let origin = g.center_mm(seed_voxel);
    let accept_p = |i: usize| {
        let p = g.center_mm(i);
        let d = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        let cos2 = if n > 0.0 { ((d[0] * axis[0] + d[1] * axis[1] + d[2] * axis[2]) / n).powi(2) } else { 1.0 };
        0.9 - 0.85 * spec.irregularity * (1.0 - cos2)
    };

    let stop_at = spec.diameter_mm - 0.5 * min_sp;
    let mut in_lesion = vec![false; g.len()];
    let mut voxels = vec![seed_voxel];
    in_lesion[seed_voxel] = true;
    let mut diameter2 = 0.0f64;
    let faces: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

    let mut done = stop_at <= 0.0;
    let mut rounds = 0;
    while !done {
        rounds += 1;
        if rounds > MAX_ROUNDS {
            return Err(PhantomError::Placement("accretion did not converge".into()));
        }
        let mut frontier: Vec<usize> = Vec::new();
        for &v in &voxels {
            let [x, y, z] = g.coords(v);
            for d in &faces {
                if let Some(j) = g.checked_index(x as i64 + d[0], y as i64 + d[1], z as i64 + d[2]) {
                    if allowed(j, &in_lesion) {
                        frontier.push(j);
                    }
                }
            }
        }
        frontier.sort_unstable();
        frontier.dedup();
        if frontier.is_empty() {
            return Err(PhantomError::Placement(format!(
                "segment {} exhausted at diameter {:.1} mm (target {:.1} mm)",
                spec.segment,
                diameter2.sqrt(),
                spec.diameter_mm
            )));
        }
        frontier.shuffle(&mut r);
        for j in frontier {
            if r.random::<f64>() >= accept_p(j) {
                continue;
            }
            let p = g.center_mm(j);
            for &v in &voxels {
                diameter2 = diameter2.max(dist2(p, g.center_mm(v)));
            }
            in_lesion[j] = true;
            voxels.push(j);
            if diameter2.sqrt() >= stop_at {
                done = true;
                break;
            }
        }
    }

    let mut out = case.clone();
    let cfg = &trace.config;
    for &v in &voxels {
        out.gt_lesion_mask.set(v, true);
        let base = cfg.bands.parenchyma.lo + (cfg.bands.parenchyma.hi - cfg.bands.parenchyma.lo) * r.random::<f64>();
        let noise: f64 = if cfg.noise_std > 0.0 { cfg.noise_std * rng::normal(&mut r) } else { 0.0 };
        out.scalar.values_mut()[v] = (base + spec.contrast + noise) as f32;
    }

    if spec.induces_duct_dilation {
        // The duct drains towards the head, so "upstream" is the tail side.
        let centroid = {
            let mut s = [0.0; 3];
            for &v in &voxels {
                let p = g.center_mm(v);
                (0..3).for_each(|a| s[a] += p[a]);
            }
            s.map(|x| x / voxels.len() as f64)
        };
        let t_lesion = trace.shape.nearest_t(centroid);
        let t0 = trace.duct_range.0;
        let t1 = t_lesion.min(trace.duct_range.1);
        if t1 > t0 {
            let duct_band = *band_for(AnatomyLabel::Duct, &cfg.bands);
            let mut newly = Vec::new();
            sweep_tube(&g, (t0, t1), 0.002, |t| trace.shape.center(t), |_| 2.0 * cfg.duct_radius_mm, |i| {
                if out.anatomy.get(i).is_pancreas() && !out.gt_lesion_mask.get(i) {
                    out.anatomy.set(i, AnatomyLabel::Duct);
                    newly.push(i);
                }
            });
            for i in newly {
                let base = duct_band.lo + (duct_band.hi - duct_band.lo) * r.random::<f64>();
                let noise: f64 = if cfg.noise_std > 0.0 { cfg.noise_std * rng::normal(&mut r) } else { 0.0 };
                out.scalar.values_mut()[i] = (base + noise) as f32;
            }
        }
    }

    let cov = &mut out.covariates;
    cov.label = spec.class.case_label();
    cov.tumor_diameter_mm = Some(cov.tumor_diameter_mm.map_or(spec.diameter_mm, |d| d.max(spec.diameter_mm)));
    cov.t_stage = match spec.class {
        LesionClass::Pdac => Some(TStage::from_diameter(cov.tumor_diameter_mm.unwrap())),
        LesionClass::NonPdac => None,
    };
    if cov.segment.is_none() {
        cov.segment = Some(spec.segment);
    }
    if cov.setting == Setting::Normal {
        cov.setting = Setting::Diagnostic;
    }
    Ok(out)
}
