//! Stage 1: anatomy. The oracle returns the phantom labels, optionally with
//! label noise, and estimates whether the main duct is dilated.

use serde::{Deserialize, Serialize};

use super::CascadeError;
use crate::phantom::Case;
use crate::rng;
use crate::volume::{dilate, squared_edt_in_place, AnatomyLabel, BinaryMask, LabelVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    /// Per-voxel probability of copying a random face neighbour's label.
    pub label_noise: f64,
    /// Duct counts as dilated above this multiple of the baseline radius.
    pub dilation_factor: f64,
    /// Baseline duct radius for cases without generation metadata.
    pub baseline_duct_radius_mm: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self { label_noise: 0.0, dilation_factor: 1.5, baseline_duct_radius_mm: 2.0 }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<(), CascadeError> {
        if !(0.0..=1.0).contains(&self.label_noise) {
            return Err(CascadeError::Config(format!("label_noise {} outside [0, 1]", self.label_noise)));
        }
        if !(self.dilation_factor > 0.0 && self.baseline_duct_radius_mm > 0.0) {
            return Err(CascadeError::Config("dilation_factor and baseline_duct_radius_mm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Output {
    pub anatomy: LabelVolume,
    pub duct_dilated: bool,
    /// Largest inscribed-ball radius of the duct.
    pub duct_radius_mm: f64,
    pub duct_threshold_mm: f64,
    pancreas: BinaryMask,
    pancreas_voxels: Vec<usize>,
    duct_voxels: Vec<usize>,
}

impl Stage1Output {
    pub fn new(anatomy: LabelVolume, baseline_duct_radius_mm: f64, dilation_factor: f64) -> Self {
        let duct = anatomy.mask_of(AnatomyLabel::Duct);
        let duct_radius_mm = max_inscribed_radius_mm(&duct);
        let duct_threshold_mm = dilation_factor * baseline_duct_radius_mm;
        let pancreas = anatomy.pancreas_mask();
        Self {
            pancreas_voxels: pancreas.indices(),
            pancreas,
            duct_voxels: duct.indices(),
            anatomy,
            duct_dilated: duct_radius_mm > duct_threshold_mm,
            duct_radius_mm,
            duct_threshold_mm,
        }
    }

    /// Head ∪ body ∪ tail.
    pub fn pancreas(&self) -> &BinaryMask {
        &self.pancreas
    }

    pub fn pancreas_voxels(&self) -> &[usize] {
        &self.pancreas_voxels
    }

    pub fn duct_voxels(&self) -> &[usize] {
        &self.duct_voxels
    }

    /// Pancreas dilated by `radius` voxels.
    pub fn context_region(&self, radius: u32) -> BinaryMask {
        dilate(&self.pancreas, radius)
    }
}

/// Inscribed-ball radius estimate: the largest distance from a mask voxel
/// center to the nearest outside voxel center. Zero for an empty mask.
pub fn max_inscribed_radius_mm(mask: &BinaryMask) -> f64 {
    let g = *mask.geometry();
    let idx = mask.indices();
    if idx.is_empty() {
        return 0.0;
    }
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    for &i in &idx {
        let c = g.coords(i);
        for a in 0..3 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    // One voxel of padding on every side guarantees an outside voxel even
    // when the mask touches the grid border.
    let dims = [hi[0] - lo[0] + 3, hi[1] - lo[1] + 3, hi[2] - lo[2] + 3];
    let mut f = vec![0.0; dims[0] * dims[1] * dims[2]];
    for &i in &idx {
        let c = g.coords(i);
        let l = (c[0] - lo[0] + 1) + dims[0] * ((c[1] - lo[1] + 1) + dims[1] * (c[2] - lo[2] + 1));
        f[l] = f64::INFINITY;
    }
    let sp = g.spacing();
    squared_edt_in_place(&mut f, dims, sp);
    f.iter().cloned().fold(0.0, f64::max).sqrt()
}

fn apply_label_noise(anatomy: &LabelVolume, rate: f64, seed: u64) -> LabelVolume {
    let g = *anatomy.geometry();
    let faces: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    let pick = rng::derive(seed, 1);
    let which = rng::derive(seed, 2);
    let mut out = anatomy.clone();
    for i in 0..g.len() {
        if rng::unit_from_counter(pick, i as u64) >= rate {
            continue;
        }
        let k = (rng::unit_from_counter(which, i as u64) * 6.0) as usize;
        let [x, y, z] = g.coords(i);
        let [dx, dy, dz] = faces[k.min(5)];
        if let Some(j) = g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
            out.set(i, anatomy.get(j));
        }
    }
    out
}

/// Oracle anatomy segmentation.
pub fn stage1_segment(case: &Case, cfg: &Stage1Config, seed: u64) -> Result<Stage1Output, CascadeError> {
    cfg.validate()?;
    case.geometry().ensure_aligned(case.anatomy.geometry())?;
    let anatomy = if cfg.label_noise > 0.0 {
        apply_label_noise(&case.anatomy, cfg.label_noise, seed)
    } else {
        case.anatomy.clone()
    };
    let baseline = case.trace.as_ref().map_or(cfg.baseline_duct_radius_mm, |t| t.config.duct_radius_mm);
    Ok(Stage1Output::new(anatomy, baseline, cfg.dilation_factor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    #[test]
    fn inscribed_radius_of_a_ball() {
        let g = VolumeGeometry::cube(21);
        let ball = BinaryMask::from_fn(g, |x, y, z| {
            let d2 = (x as i64 - 10).pow(2) + (y as i64 - 10).pow(2) + (z as i64 - 10).pow(2);
            d2 <= 25
        });
        // Nearest outside center to (10,10,10) is at distance sqrt(26).
        let r = max_inscribed_radius_mm(&ball);
        assert!((r - 26f64.sqrt()).abs() < 1e-12, "{r}");
    }

    #[test]
    fn border_touching_mask_has_finite_radius() {
        let g = VolumeGeometry::cube(3);
        let full = BinaryMask::from_fn(g, |_, _, _| true);
        assert!((max_inscribed_radius_mm(&full) - 2.0).abs() < 1e-12);
        assert_eq!(max_inscribed_radius_mm(&BinaryMask::empty(g)), 0.0);
    }

    #[test]
    fn label_noise_changes_some_boundaries_only() {
        let g = VolumeGeometry::cube(12);
        let mut a = LabelVolume::background(g);
        for i in 0..g.len() {
            if g.coords(i)[0] < 6 {
                a.set(i, AnatomyLabel::PancreasHead);
            }
        }
        let noisy = apply_label_noise(&a, 0.5, 9);
        let mut changed = 0;
        for i in 0..g.len() {
            if noisy.get(i) != a.get(i) {
                changed += 1;
                let x = g.coords(i)[0];
                assert!(x == 5 || x == 6);
            }
        }
        assert!(changed > 0);
    }
}
