//! Surface distances and the percentile Hausdorff distance.
//!
//! Directed distances are read off an exact anisotropic Euclidean distance
//! transform (lower envelope of parabolas, one pass per axis) computed over
//! the bounding box of both surfaces.

use super::morphology::surface_voxels;
use super::{BinaryMask, VolumeError, VolumeGeometry};
use crate::quantile::percentile;

/// 95th-percentile symmetric Hausdorff distance in millimetres.
pub fn hd95(a: &BinaryMask, b: &BinaryMask) -> Result<f64, VolumeError> {
    hausdorff_percentile(a, b, 95.0)
}

/// Percentile of the pooled directed surface distances (a→b and b→a).
pub fn hausdorff_percentile(a: &BinaryMask, b: &BinaryMask, q: f64) -> Result<f64, VolumeError> {
    let mut pooled = surface_distances(a, b)?;
    pooled.sort_by(f64::total_cmp);
    Ok(percentile(&pooled, q))
}

/// Pooled list: for each surface voxel of `a` its distance to the nearest
/// surface voxel of `b`, followed by the same for `b` against `a`.
pub fn surface_distances(a: &BinaryMask, b: &BinaryMask) -> Result<Vec<f64>, VolumeError> {
    a.geometry().ensure_aligned(b.geometry())?;
    let sa = surface_voxels(a);
    let sb = surface_voxels(b);
    if sa.is_empty() || sb.is_empty() {
        return Err(VolumeError::EmptyMask);
    }
    let g = *a.geometry();
    let bbox = SubGrid::covering(&g, sa.iter().chain(&sb).copied());
    let dt_b = bbox.squared_edt(&g, &sb);
    let dt_a = bbox.squared_edt(&g, &sa);
    let mut out = Vec::with_capacity(sa.len() + sb.len());
    out.extend(sa.iter().map(|&i| dt_b[bbox.local(&g, i)].sqrt()));
    out.extend(sb.iter().map(|&i| dt_a[bbox.local(&g, i)].sqrt()));
    Ok(out)
}

/// Axis-aligned window into a larger grid.
struct SubGrid {
    origin: [usize; 3],
    dims: [usize; 3],
}

impl SubGrid {
    fn covering(g: &VolumeGeometry, voxels: impl Iterator<Item = usize>) -> Self {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        for v in voxels {
            let c = g.coords(v);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
        }
        Self { origin: lo, dims: [hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1] }
    }

    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn local(&self, g: &VolumeGeometry, i: usize) -> usize {
        let c = g.coords(i);
        let (x, y, z) = (c[0] - self.origin[0], c[1] - self.origin[1], c[2] - self.origin[2]);
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    fn squared_edt(&self, g: &VolumeGeometry, sites: &[usize]) -> Vec<f64> {
        let mut f = vec![f64::INFINITY; self.len()];
        for &s in sites {
            f[self.local(g, s)] = 0.0;
        }
        squared_edt_in_place(&mut f, self.dims, g.spacing());
        f
    }
}

/// Squared Euclidean distance (mm²) from every voxel to the nearest zero of
/// `f`; non-zero entries must be `+inf` on input.
pub(crate) fn squared_edt_in_place(f: &mut [f64], dims: [usize; 3], spacing: [f64; 3]) {
    let [nx, ny, nz] = dims;
    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut scratch = Envelope::with_capacity(longest);

    for z in 0..nz {
        for y in 0..ny {
            let base = nx * (y + ny * z);
            line[..nx].copy_from_slice(&f[base..base + nx]);
            scratch.transform(&line[..nx], spacing[0], &mut out[..nx]);
            f[base..base + nx].copy_from_slice(&out[..nx]);
        }
    }
    for z in 0..nz {
        for x in 0..nx {
            for y in 0..ny {
                line[y] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..ny], spacing[1], &mut out[..ny]);
            for y in 0..ny {
                f[x + nx * (y + ny * z)] = out[y];
            }
        }
    }
    for y in 0..ny {
        for x in 0..nx {
            for z in 0..nz {
                line[z] = f[x + nx * (y + ny * z)];
            }
            scratch.transform(&line[..nz], spacing[2], &mut out[..nz]);
            for z in 0..nz {
                f[x + nx * (y + ny * z)] = out[z];
            }
        }
    }
}

struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self { sites: Vec::with_capacity(n), bounds: Vec::with_capacity(n + 1) }
    }

    /// 1D squared distance transform with sample spacing `w`.
    fn transform(&mut self, f: &[f64], w: f64, out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        let pos = |q: usize| q as f64 * w;
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            if self.sites.is_empty() {
                self.sites.push(q);
                self.bounds.push(f64::NEG_INFINITY);
                continue;
            }
            loop {
                let v = *self.sites.last().unwrap();
                let s = ((fq + pos(q) * pos(q)) - (f[v] + pos(v) * pos(v))) / (2.0 * (pos(q) - pos(v)));
                if s <= *self.bounds.last().unwrap() {
                    self.sites.pop();
                    self.bounds.pop();
                    if self.sites.is_empty() {
                        self.sites.push(q);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                } else {
                    self.sites.push(q);
                    self.bounds.push(s);
                    break;
                }
            }
        }
        if self.sites.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (i, o) in out.iter_mut().enumerate() {
            let x = pos(i);
            while k + 1 < self.sites.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let v = self.sites[k];
            let d = x - pos(v);
            *o = d * d + f[v];
        }
    }
}
