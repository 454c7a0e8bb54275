use super::{BinaryMask, VolumeError};

/// Offsets of the voxel-space Euclidean ball `dx² + dy² + dz² <= r²`.
pub fn ball_offsets(radius: u32) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r2 {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Binary dilation by a voxel-space ball. Radius 0 is the identity.
pub fn dilate(mask: &BinaryMask, radius_voxels: u32) -> BinaryMask {
    if radius_voxels == 0 {
        return mask.clone();
    }
    let g = *mask.geometry();
    let offsets = ball_offsets(radius_voxels);
    let mut out = mask.clone();
    for i in mask.indices() {
        let [x, y, z] = g.coords(i);
        for &[dx, dy, dz] in &offsets {
            if let Some(j) = g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz) {
                out.set(j, true);
            }
        }
    }
    out
}

/// Binary erosion by a voxel-space ball; voxels outside the grid count as
/// background.
pub fn erode(mask: &BinaryMask, radius_voxels: u32) -> BinaryMask {
    if radius_voxels == 0 {
        return mask.clone();
    }
    let g = *mask.geometry();
    let offsets = ball_offsets(radius_voxels);
    let mut out = BinaryMask::empty(g);
    for i in mask.indices() {
        let [x, y, z] = g.coords(i);
        let interior = offsets.iter().all(|&[dx, dy, dz]| {
            g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz)
                .is_some_and(|j| mask.get(j))
        });
        if interior {
            out.set(i, true);
        }
    }
    out
}

/// `|a ∩ b|` in voxels.
pub fn overlap_count(a: &BinaryMask, b: &BinaryMask) -> Result<usize, VolumeError> {
    a.geometry().ensure_aligned(b.geometry())?;
    Ok(a.bits().iter().zip(b.bits()).filter(|(&x, &y)| x && y).count())
}

/// Foreground voxels with at least one face neighbour that is background or
/// outside the grid. Returned in ascending index order.
pub fn surface_voxels(mask: &BinaryMask) -> Vec<usize> {
    let g = *mask.geometry();
    let faces: [[i64; 3]; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];
    mask.indices()
        .into_iter()
        .filter(|&i| {
            let [x, y, z] = g.coords(i);
            faces.iter().any(|&[dx, dy, dz]| {
                g.checked_index(x as i64 + dx, y as i64 + dy, z as i64 + dz)
                    .is_none_or(|j| !mask.get(j))
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeGeometry;

    #[test]
    fn ball_sizes() {
        assert_eq!(ball_offsets(0).len(), 1);
        assert_eq!(ball_offsets(1).len(), 7);
        assert_eq!(ball_offsets(2).len(), 33);
    }

    #[test]
    fn radius_zero_is_identity() {
        let g = VolumeGeometry::cube(6);
        let m = BinaryMask::from_indices(g, [3, 50, 100]);
        assert_eq!(dilate(&m, 0), m);
        assert_eq!(erode(&m, 0), m);
    }

    #[test]
    fn single_voxel_radius_one_gives_seven() {
        let g = VolumeGeometry::cube(7);
        let m = BinaryMask::from_indices(g, [g.index(3, 3, 3)]);
        assert_eq!(dilate(&m, 1).popcount(), 7);
    }

    #[test]
    fn dilation_clips_at_border() {
        let g = VolumeGeometry::cube(4);
        let m = BinaryMask::from_indices(g, [g.index(0, 0, 0)]);
        assert_eq!(dilate(&m, 1).popcount(), 4);
    }

    #[test]
    fn erosion_treats_outside_as_background() {
        let g = VolumeGeometry::cube(3);
        let full = BinaryMask::from_fn(g, |_, _, _| true);
        let e = erode(&full, 1);
        assert_eq!(e.indices(), vec![g.index(1, 1, 1)]);
    }

    #[test]
    fn overlap_of_shifted_cubes() {
        let g = VolumeGeometry::cube(8);
        let a = BinaryMask::from_fn(g, |x, y, z| (2..5).contains(&x) && (2..5).contains(&y) && (2..5).contains(&z));
        let b = a.translated([1, 0, 0]);
        assert_eq!(overlap_count(&a, &b).unwrap(), 18);
        assert_eq!(overlap_count(&a, &a).unwrap(), 27);
    }

    #[test]
    fn overlap_rejects_misaligned() {
        let a = BinaryMask::empty(VolumeGeometry::cube(4));
        let b = BinaryMask::empty(VolumeGeometry::cube(5));
        assert!(matches!(overlap_count(&a, &b), Err(VolumeError::Misaligned { .. })));
    }

    #[test]
    fn cube_surface_excludes_interior() {
        let g = VolumeGeometry::cube(5);
        let m = BinaryMask::from_fn(g, |x, y, z| (1..4).contains(&x) && (1..4).contains(&y) && (1..4).contains(&z));
        assert_eq!(surface_voxels(&m).len(), 26);
        let full = BinaryMask::from_fn(g, |_, _, _| true);
        assert_eq!(surface_voxels(&full).len(), 125 - 27);
    }
}
