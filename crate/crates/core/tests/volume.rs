use panscreen_core::volume::{
    connected_components, dilate, hd95, overlap_count, BinaryMask, Connectivity, VolumeGeometry,
};
use proptest::prelude::*;

fn arb_mask(max_dim: usize, density: f64) -> impl Strategy<Value = BinaryMask> {
    (3..=max_dim, 3..=max_dim, 3..=max_dim).prop_flat_map(move |(x, y, z)| {
        prop::collection::vec(prop::bool::weighted(density), x * y * z)
            .prop_map(move |bits| BinaryMask::new(VolumeGeometry::new([x, y, z], [1.0, 1.0, 1.0]).unwrap(), bits).unwrap())
    })
}

fn arb_pair(max_dim: usize) -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (3..=max_dim, 3..=max_dim, 3..=max_dim, 0.5f64..2.0).prop_flat_map(|(x, y, z, sz)| {
        let n = x * y * z;
        let g = VolumeGeometry::new([x, y, z], [1.0, 1.0, sz]).unwrap();
        (prop::collection::vec(prop::bool::weighted(0.3), n), prop::collection::vec(prop::bool::weighted(0.3), n))
            .prop_map(move |(a, b)| (BinaryMask::new(g, a).unwrap(), BinaryMask::new(g, b).unwrap()))
    })
}

fn connectivity() -> impl Strategy<Value = Connectivity> {
    prop_oneof![Just(Connectivity::Six), Just(Connectivity::Eighteen), Just(Connectivity::TwentySix)]
}

/// Pad a mask with `pad` empty voxels on every side so that translations by
/// up to `pad` stay in bounds.
fn padded(m: &BinaryMask, pad: usize) -> BinaryMask {
    let [x, y, z] = m.geometry().dims();
    let g = VolumeGeometry::new([x + 2 * pad, y + 2 * pad, z + 2 * pad], m.geometry().spacing()).unwrap();
    BinaryMask::from_fn(g, |i, j, k| {
        i >= pad && j >= pad && k >= pad && i < x + pad && j < y + pad && k < z + pad && m.get(m.geometry().index(i - pad, j - pad, k - pad))
    })
}

proptest! {
    #[test]
    fn components_partition_foreground(m in arb_mask(10, 0.35), c in connectivity()) {
        let set = connected_components(&m, c);
        let mut seen = vec![false; m.geometry().len()];
        let mut total = 0;
        for comp in set.components() {
            for &v in comp.voxels() {
                prop_assert!(m.get(v));
                prop_assert!(!seen[v]);
                seen[v] = true;
            }
            total += comp.len();
        }
        prop_assert_eq!(total, m.popcount());
    }

    #[test]
    fn hd95_symmetric((a, b) in arb_pair(8)) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        prop_assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
    }

    #[test]
    fn hd95_self_is_zero(m in arb_mask(8, 0.3)) {
        prop_assume!(!m.is_empty());
        prop_assert_eq!(hd95(&m, &m).unwrap(), 0.0);
    }

    #[test]
    fn hd95_translation_covariant((a, b) in arb_pair(7), dx in -2i64..=2, dy in -2i64..=2, dz in -2i64..=2) {
        prop_assume!(!a.is_empty() && !b.is_empty());
        let (pa, pb) = (padded(&a, 2), padded(&b, 2));
        let base = hd95(&pa, &pb).unwrap();
        let moved = hd95(&pa.translated([dx, dy, dz]), &pb.translated([dx, dy, dz])).unwrap();
        prop_assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
    }

    #[test]
    fn dilation_is_monotone(m in arb_mask(9, 0.08), r in 0u32..3) {
        let d0 = dilate(&m, r);
        let d1 = dilate(&m, r + 1);
        prop_assert!(m.is_subset_of(&d0).unwrap());
        prop_assert!(d0.is_subset_of(&d1).unwrap());
    }

    #[test]
    fn overlap_symmetric_and_bounded((a, b) in arb_pair(9)) {
        let ab = overlap_count(&a, &b).unwrap();
        prop_assert_eq!(ab, overlap_count(&b, &a).unwrap());
        prop_assert!(ab <= a.popcount().min(b.popcount()));
    }
}
