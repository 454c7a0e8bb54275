use serde::{Deserialize, Serialize};

use super::{Component, ScalarVolume, VolumeError, VolumeGeometry};

/// Components up to this size get an exact pairwise diameter over their
/// surface voxels; larger ones use the voxels touching their bounding-box
/// faces.
pub const EXACT_DIAMETER_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub voxel_count: usize,
    pub volume_mm3: f64,
    pub centroid_mm: [f64; 3],
    pub max_diameter_mm: f64,
    pub surface_area_mm2: f64,
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
}

/// Dense occupancy of a component inside its bounding box (plus a one-voxel
/// pad so face lookups never need bounds checks).
struct LocalGrid {
    origin: [i64; 3],
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl LocalGrid {
    fn new(g: &VolumeGeometry, comp: &Component) -> Self {
        let (lo, hi) = comp.bbox();
        let origin = [lo[0] as i64 - 1, lo[1] as i64 - 1, lo[2] as i64 - 1];
        let dims = [hi[0] - lo[0] + 3, hi[1] - lo[1] + 3, hi[2] - lo[2] + 3];
        let mut bits = vec![false; dims[0] * dims[1] * dims[2]];
        for &v in comp.voxels() {
            let c = g.coords(v);
            let l = Self::offset(dims, origin, [c[0] as i64, c[1] as i64, c[2] as i64]);
            bits[l] = true;
        }
        Self { origin, dims, bits }
    }

    fn offset(dims: [usize; 3], origin: [i64; 3], c: [i64; 3]) -> usize {
        let x = (c[0] - origin[0]) as usize;
        let y = (c[1] - origin[1]) as usize;
        let z = (c[2] - origin[2]) as usize;
        x + dims[0] * (y + dims[1] * z)
    }

    fn contains(&self, c: [i64; 3]) -> bool {
        self.bits[Self::offset(self.dims, self.origin, c)]
    }
}

const FACES: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

fn signed(c: [usize; 3]) -> [i64; 3] {
    [c[0] as i64, c[1] as i64, c[2] as i64]
}

/// Shape and intensity statistics of one component.
pub fn component_stats(comp: &Component, intensities: &ScalarVolume) -> Result<ComponentStats, VolumeError> {
    if comp.is_empty() {
        return Err(VolumeError::EmptyComponent);
    }
    let g = intensities.geometry();
    let len = g.len();
    if let Some(&bad) = comp.voxels().iter().find(|&&v| v >= len) {
        return Err(VolumeError::OutOfBounds { index: bad, len });
    }

    let n = comp.len() as f64;
    let mean = comp.voxels().iter().map(|&v| intensities.get(v) as f64).sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &v in comp.voxels() {
        let d = intensities.get(v) as f64 - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let std = m2.sqrt();
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };

    Ok(ComponentStats {
        voxel_count: comp.len(),
        volume_mm3: n * g.voxel_volume(),
        centroid_mm: comp.centroid_mm(),
        max_diameter_mm: max_diameter_mm(g, comp),
        surface_area_mm2: surface_area_mm2(g, comp),
        mean,
        std,
        skewness,
    })
}

/// Exposed voxel faces times the physical area of each face.
pub(crate) fn surface_area_mm2(g: &VolumeGeometry, comp: &Component) -> f64 {
    let grid = LocalGrid::new(g, comp);
    let [sx, sy, sz] = g.spacing();
    let face_area = [sy * sz, sx * sz, sx * sy];
    let mut area = 0.0;
    for &v in comp.voxels() {
        let c = signed(g.coords(v));
        for (k, d) in FACES.iter().enumerate() {
            if !grid.contains([c[0] + d[0], c[1] + d[1], c[2] + d[2]]) {
                area += face_area[k / 2];
            }
        }
    }
    area
}

/// Largest center-to-center distance between two voxels of the component.
pub fn max_diameter_mm(g: &VolumeGeometry, comp: &Component) -> f64 {
    let candidates: Vec<[f64; 3]> = if comp.len() <= EXACT_DIAMETER_LIMIT {
        // The farthest pair lies on the convex hull, and every hull vertex
        // has an exposed face.
        let grid = LocalGrid::new(g, comp);
        comp.voxels()
            .iter()
            .filter(|&&v| {
                let c = signed(g.coords(v));
                FACES.iter().any(|d| !grid.contains([c[0] + d[0], c[1] + d[1], c[2] + d[2]]))
            })
            .map(|&v| g.center_mm(v))
            .collect()
    } else {
        let (lo, hi) = comp.bbox();
        comp.voxels()
            .iter()
            .filter(|&&v| {
                let c = g.coords(v);
                (0..3).any(|a| c[a] == lo[a] || c[a] == hi[a])
            })
            .map(|&v| g.center_mm(v))
            .collect()
    };
    let mut best = 0.0f64;
    for (i, p) in candidates.iter().enumerate() {
        for q in &candidates[i + 1..] {
            let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
            best = best.max(d);
        }
    }
    best.sqrt()
}
