//! Stage 2: a corrupted oracle standing in for the lesion localizer. Each
//! ground-truth lesion is either missed or emitted with a jittered boundary;
//! Poisson-many false blobs are added; everything else gets low background
//! probability.

use rand::Rng as _;
use rand_distr::{Beta, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::stage1::Stage1Output;
use super::CascadeError;
use crate::phantom::{for_each_in_ball, Case};
use crate::rng;
use crate::volume::{
    ball_offsets, connected_components, BinaryMask, Component, Connectivity, ProbabilityMap, VolumeGeometry,
};

/// Distribution of the probability assigned to each emitted voxel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProbLaw {
    Constant { value: f64 },
    /// `min + (1 - min) * Beta(alpha, beta)`.
    Beta { alpha: f64, beta: f64, min: f64 },
}

impl ProbLaw {
    fn validate(&self, name: &str) -> Result<(), CascadeError> {
        let ok = match *self {
            ProbLaw::Constant { value } => (0.0..=1.0).contains(&value),
            ProbLaw::Beta { alpha, beta, min } => alpha > 0.0 && beta > 0.0 && (0.0..=1.0).contains(&min),
        };
        if ok {
            Ok(())
        } else {
            Err(CascadeError::Config(format!("{name} law {self:?} out of range")))
        }
    }

    /// Smallest value the law can produce.
    pub fn lower_bound(&self) -> f64 {
        match *self {
            ProbLaw::Constant { value } => value,
            ProbLaw::Beta { min, .. } => min,
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            ProbLaw::Constant { value } => Sampler::Constant(value),
            ProbLaw::Beta { alpha, beta, min } => Sampler::Beta(Beta::new(alpha, beta).expect("validated"), min),
        }
    }
}

enum Sampler {
    Constant(f64),
    Beta(Beta<f64>, f64),
}

impl Sampler {
    fn sample(&self, r: &mut rng::Rng) -> f32 {
        match self {
            Sampler::Constant(v) => *v as f32,
            Sampler::Beta(b, min) => (min + (1.0 - min) * b.sample(r)) as f32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    pub miss_probability: f64,
    /// Per-lesion erosion or dilation by a radius drawn from `0..=jitter`.
    pub jitter_voxels: u32,
    /// Expected false blobs per volume.
    pub blob_rate: f64,
    pub blob_diameter_mm: [f64; 2],
    pub lesion_law: ProbLaw,
    pub blob_law: ProbLaw,
    /// Background voxels draw uniformly from `[0, background_ceiling)`.
    pub background_ceiling: f64,
    /// Emissions are clipped to the pancreas dilated by this many voxels
    /// when stage-1 context is used.
    pub context_radius: u32,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            miss_probability: 0.0,
            jitter_voxels: 0,
            blob_rate: 0.0,
            blob_diameter_mm: [4.0, 10.0],
            lesion_law: ProbLaw::Beta { alpha: 5.0, beta: 2.0, min: 0.5 },
            blob_law: ProbLaw::Beta { alpha: 2.0, beta: 5.0, min: 0.5 },
            background_ceiling: 0.1,
            context_radius: 2,
        }
    }
}

impl OracleConfig {
    /// No misses, no jitter, no blobs, constant probability.
    pub fn perfect() -> Self {
        Self { lesion_law: ProbLaw::Constant { value: 0.9 }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CascadeError> {
        if !(0.0..=1.0).contains(&self.miss_probability) {
            return Err(CascadeError::Config(format!("miss_probability {} outside [0, 1]", self.miss_probability)));
        }
        if !(self.blob_rate.is_finite() && self.blob_rate >= 0.0) {
            return Err(CascadeError::Config(format!("blob_rate {} must be >= 0", self.blob_rate)));
        }
        let [lo, hi] = self.blob_diameter_mm;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(CascadeError::Config(format!("blob_diameter_mm {:?} is not an ordered positive range", self.blob_diameter_mm)));
        }
        if !(0.0..=1.0).contains(&self.background_ceiling) {
            return Err(CascadeError::Config(format!("background_ceiling {} outside [0, 1]", self.background_ceiling)));
        }
        self.lesion_law.validate("lesion")?;
        self.blob_law.validate("blob")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Output {
    pub prob: ProbabilityMap,
    pub blob_count: usize,
    /// One flag per ground-truth lesion (26-connected components of the
    /// lesion mask, in component order).
    pub lesions_emitted: Vec<bool>,
}

/// Stage 2 with stage-1 context: emissions stay inside the pancreas dilated
/// by `cfg.context_radius`.
pub fn stage2_localize(case: &Case, stage1: &Stage1Output, cfg: &OracleConfig, seed: u64) -> Result<Stage2Output, CascadeError> {
    let region = stage1.context_region(cfg.context_radius);
    stage2_localize_in(case, stage1, cfg, Some(&region), seed)
}

/// Stage 2 with an explicit context region, or none (blobs anywhere).
pub fn stage2_localize_in(
    case: &Case,
    stage1: &Stage1Output,
    cfg: &OracleConfig,
    context: Option<&BinaryMask>,
    seed: u64,
) -> Result<Stage2Output, CascadeError> {
    cfg.validate()?;
    let g = *case.geometry();
    g.ensure_aligned(case.gt_lesion_mask.geometry())?;
    g.ensure_aligned(stage1.anatomy.geometry())?;
    if let Some(c) = context {
        g.ensure_aligned(c.geometry())?;
    }
    let inside = |i: usize| context.is_none_or(|c| c.get(i));

    let bg_seed = rng::derive(seed, 0xB6);
    let ceiling = cfg.background_ceiling;
    let values: Vec<f32> = (0..g.len()).map(|i| (ceiling * rng::unit_from_counter(bg_seed, i as u64)) as f32).collect();
    let mut prob = ProbabilityMap::new(g, values)?;

    let mut r = rng::stream(seed, 0x0AC1E);
    let lesion_law = cfg.lesion_law.sampler();
    let lesions = connected_components(&case.gt_lesion_mask, Connectivity::TwentySix);
    let mut lesions_emitted = Vec::with_capacity(lesions.len());
    for lesion in lesions.components() {
        if r.random::<f64>() < cfg.miss_probability {
            lesions_emitted.push(false);
            continue;
        }
        let radius = r.random_range(0..=cfg.jitter_voxels);
        let grow = r.random::<bool>();
        let mut voxels = jitter(&g, lesion, radius, grow);
        voxels.retain(|&i| inside(i));
        if voxels.is_empty() {
            voxels = lesion.voxels().iter().copied().filter(|&i| inside(i)).collect();
        }
        for &i in &voxels {
            prob.raise(i, lesion_law.sample(&mut r));
        }
        lesions_emitted.push(!voxels.is_empty());
    }

    let blob_count = if cfg.blob_rate > 0.0 {
        let n: f64 = Poisson::new(cfg.blob_rate).map_err(|e| CascadeError::Config(e.to_string()))?.sample(&mut r);
        n as usize
    } else {
        0
    };
    let centers: Option<&[usize]> = context.map(|_| stage1.pancreas_voxels());
    let blob_law = cfg.blob_law.sampler();
    for _ in 0..blob_count {
        let center = match centers {
            Some(c) if !c.is_empty() => c[r.random_range(0..c.len())],
            Some(_) => continue,
            None => r.random_range(0..g.len()),
        };
        let [lo, hi] = cfg.blob_diameter_mm;
        let d = lo + (hi - lo) * r.random::<f64>();
        let mut voxels = Vec::new();
        for_each_in_ball(&g, g.center_mm(center), 0.5 * d, |i| voxels.push(i));
        if !voxels.contains(&center) {
            voxels.push(center);
        }
        for i in voxels {
            if inside(i) {
                prob.raise(i, blob_law.sample(&mut r));
            }
        }
    }

    Ok(Stage2Output { prob, blob_count, lesions_emitted })
}

/// Dilate (`grow`) or erode a component by a voxel-space ball, working in a
/// padded local box. Erosion keeps the largest 26-connected piece and may
/// return nothing.
fn jitter(g: &VolumeGeometry, comp: &Component, radius: u32, grow: bool) -> Vec<usize> {
    if radius == 0 {
        return comp.voxels().to_vec();
    }
    let offsets = ball_offsets(radius);
    if grow {
        let mut out = Vec::with_capacity(comp.len() * 2);
        for &v in comp.voxels() {
            let [x, y, z] = g.coords(v);
            for &[dx, dy, dz] in &offsets {
                if let Some(j) = g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
                    out.push(j);
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        return out;
    }
    let member = |j: usize| comp.voxels().binary_search(&j).is_ok();
    let kept: Vec<usize> = comp
        .voxels()
        .iter()
        .copied()
        .filter(|&v| {
            let [x, y, z] = g.coords(v);
            offsets.iter().all(|&[dx, dy, dz]| {
                g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz).is_some_and(member)
            })
        })
        .collect();
    if kept.is_empty() {
        return kept;
    }
    let mask = BinaryMask::from_indices(*g, kept);
    connected_components(&mask, Connectivity::TwentySix)
        .into_components()
        .into_iter()
        .next()
        .map(|c| c.voxels().to_vec())
        .unwrap_or_default()
}
