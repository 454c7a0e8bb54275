use serde::{Deserialize, Serialize};

use super::{BinaryMask, VolumeGeometry};

/// Voxel adjacency used for region labeling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face and edge neighbours.
    Eighteen,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::TwentySix
    }
}

impl TryFrom<u8> for Connectivity {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        match value {
            6 => Ok(Connectivity::Six),
            18 => Ok(Connectivity::Eighteen),
            26 => Ok(Connectivity::TwentySix),
            other => Err(format!("connectivity must be 6, 18 or 26, got {other}")),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Six => 6,
            Connectivity::Eighteen => 18,
            Connectivity::TwentySix => 26,
        }
    }
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_l1 = match self {
            Connectivity::Six => 1,
            Connectivity::Eighteen => 2,
            Connectivity::TwentySix => 3,
        };
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    if l1 > 0 && l1 <= max_l1 {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// One connected region. Voxel indices are kept in ascending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    voxels: Vec<usize>,
    centroid_mm: [f64; 3],
    bbox_min: [usize; 3],
    bbox_max: [usize; 3],
}

impl Component {
    /// Build a component from arbitrary voxel indices (duplicates are removed).
    /// Connectivity is not checked; callers that need it use
    /// [`connected_components`].
    pub fn from_voxels(geometry: &VolumeGeometry, mut voxels: Vec<usize>) -> Self {
        voxels.sort_unstable();
        voxels.dedup();
        let mut sum = [0.0f64; 3];
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for &v in &voxels {
            let c = geometry.coords(v);
            let p = geometry.center_mm(v);
            for a in 0..3 {
                sum[a] += p[a];
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        let n = voxels.len().max(1) as f64;
        if voxels.is_empty() {
            lo = [0; 3];
        }
        Self {
            voxels,
            centroid_mm: [sum[0] / n, sum[1] / n, sum[2] / n],
            bbox_min: lo,
            bbox_max: hi,
        }
    }

    pub fn voxels(&self) -> &[usize] {
        &self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn centroid_mm(&self) -> [f64; 3] {
        self.centroid_mm
    }

    /// Inclusive voxel-space bounding box.
    pub fn bbox(&self) -> ([usize; 3], [usize; 3]) {
        (self.bbox_min, self.bbox_max)
    }

    pub fn min_index(&self) -> Option<usize> {
        self.voxels.first().copied()
    }

    pub fn to_mask(&self, geometry: &VolumeGeometry) -> BinaryMask {
        BinaryMask::from_indices(*geometry, self.voxels.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet {
    geometry: VolumeGeometry,
    connectivity: Connectivity,
    components: Vec<Component>,
}

impl ComponentSet {
    pub fn geometry(&self) -> &VolumeGeometry {
        &self.geometry
    }

    pub fn connectivity(&self) -> Connectivity {
        self.connectivity
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Component> {
        self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn largest(&self) -> Option<&Component> {
        self.components.first()
    }
}

/// Label the foreground of `mask` into connected regions.
///
/// Components come back sorted by voxel count (descending); equal sizes keep
/// the order of their smallest voxel index.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let geometry = *mask.geometry();
    let [nx, ny, nz] = geometry.dims();
    let offsets = connectivity.offsets();
    let bits = mask.bits();
    let mut visited = vec![false; bits.len()];
    let mut stack = Vec::new();
    let mut components = Vec::new();

    for start in 0..bits.len() {
        if !bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut voxels = Vec::new();
        while let Some(v) = stack.pop() {
            voxels.push(v);
            let [x, y, z] = geometry.coords(v);
            for &[dx, dy, dz] in &offsets {
                let (xx, yy, zz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                if xx < 0 || yy < 0 || zz < 0 || xx >= nx as i64 || yy >= ny as i64 || zz >= nz as i64 {
                    continue;
                }
                let j = geometry.index(xx as usize, yy as usize, zz as usize);
                if bits[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
        components.push(Component::from_voxels(&geometry, voxels));
    }

    // Stable sort: components were discovered in order of their minimum index.
    components.sort_by(|a, b| b.len().cmp(&a.len()));
    ComponentSet { geometry, connectivity, components }
}
