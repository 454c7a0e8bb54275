//! Radiomics-lite features of a candidate region.

use serde::{Deserialize, Serialize};

use super::stage1::Stage1Output;
use super::CascadeError;
use crate::decision::majority_segment;
use crate::phantom::{dist2, Case};
use crate::volume::{ball_offsets, component_stats, Component, Segment, VolumeError};

pub const FEATURE_DIM: usize = 12;

pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "volume_mm3",
    "max_diameter_mm",
    "sphericity",
    "mean_intensity",
    "std_intensity",
    "skew_intensity",
    "contrast",
    "segment_head",
    "segment_body",
    "segment_tail",
    "duct_dilated",
    "duct_distance_mm",
];

/// Shell thickness, in voxels, for the contrast feature.
pub const SHELL_RADIUS: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn sphericity(&self) -> f64 {
        self.0[2]
    }

    pub fn segment_one_hot(&self) -> [f64; 3] {
        [self.0[7], self.0[8], self.0[9]]
    }
}

/// `pi^(1/3) (6V)^(2/3) / A`.
pub fn sphericity(volume_mm3: f64, area_mm2: f64) -> f64 {
    std::f64::consts::PI.cbrt() * (6.0 * volume_mm3).powf(2.0 / 3.0) / area_mm2
}

pub fn extract_features(comp: &Component, case: &Case, stage1: &Stage1Output) -> Result<FeatureVector, CascadeError> {
    if comp.is_empty() {
        return Err(VolumeError::EmptyComponent.into());
    }
    let g = *case.geometry();
    g.ensure_aligned(stage1.anatomy.geometry())?;
    let stats = component_stats(comp, &case.scalar)?;

    let member = |j: usize| comp.voxels().binary_search(&j).is_ok();
    let mut shell = Vec::new();
    let offsets = ball_offsets(SHELL_RADIUS);
    for &v in comp.voxels() {
        let [x, y, z] = g.coords(v);
        for &[dx, dy, dz] in &offsets {
            if let Some(j) = g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
                if !member(j) && stage1.anatomy.get(j).is_pancreas() {
                    shell.push(j);
                }
            }
        }
    }
    shell.sort_unstable();
    shell.dedup();
    let contrast = if shell.is_empty() {
        0.0
    } else {
        stats.mean - shell.iter().map(|&j| case.scalar.get(j) as f64).sum::<f64>() / shell.len() as f64
    };

    let mut one_hot = [0.0; 3];
    if let Some(s) = majority_segment(comp, &stage1.anatomy) {
        one_hot[s.ordinal()] = 1.0;
    }

    let duct_distance = stage1
        .duct_voxels()
        .iter()
        .map(|&d| dist2(g.center_mm(d), stats.centroid_mm))
        .fold(f64::INFINITY, f64::min);
    let duct_distance = if duct_distance.is_finite() { duct_distance.sqrt() } else { 0.0 };

    Ok(FeatureVector([
        stats.volume_mm3,
        stats.max_diameter_mm,
        sphericity(stats.volume_mm3, stats.surface_area_mm2),
        stats.mean,
        stats.std,
        stats.skewness,
        contrast,
        one_hot[Segment::Head.ordinal()],
        one_hot[Segment::Body.ordinal()],
        one_hot[Segment::Tail.ordinal()],
        if stage1.duct_dilated { 1.0 } else { 0.0 },
        duct_distance,
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::CaseCovariates;
    use crate::volume::{AnatomyLabel, BinaryMask, LabelVolume, ScalarVolume, VolumeGeometry};

    fn case_with(g: VolumeGeometry, anatomy: LabelVolume) -> (Case, Stage1Output) {
        let case = Case::new("t", ScalarVolume::filled(g, 50.0), anatomy.clone(), BinaryMask::empty(g), CaseCovariates::normal("s"))
            .unwrap();
        (case, Stage1Output::new(anatomy, 2.0, 1.5))
    }

    #[test]
    fn cube_sphericity() {
        let g = VolumeGeometry::cube(12);
        let (case, s1) = case_with(g, LabelVolume::background(g));
        let voxels = (0..g.len()).filter(|&i| g.coords(i).iter().all(|&c| (3..8).contains(&c))).collect();
        let fv = extract_features(&Component::from_voxels(&g, voxels), &case, &s1).unwrap();
        assert!((fv.sphericity() - (std::f64::consts::PI / 6.0).cbrt()).abs() < 0.02);
    }

    #[test]
    fn head_component_one_hot() {
        let g = VolumeGeometry::cube(12);
        let mut a = LabelVolume::background(g);
        for i in 0..g.len() {
            a.set(i, AnatomyLabel::PancreasHead);
        }
        let (case, s1) = case_with(g, a);
        let fv = extract_features(&Component::from_voxels(&g, vec![g.index(5, 5, 5)]), &case, &s1).unwrap();
        assert_eq!(fv.segment_one_hot(), [1.0, 0.0, 0.0]);
        assert_eq!(fv.0[6], 0.0);
    }

    #[test]
    fn empty_component_rejected() {
        let g = VolumeGeometry::cube(4);
        let (case, s1) = case_with(g, LabelVolume::background(g));
        assert!(extract_features(&Component::from_voxels(&g, vec![]), &case, &s1).is_err());
    }
}
