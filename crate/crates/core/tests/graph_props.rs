use mgff_core::graphs::{build_adjacency_set, build_inter_block, build_intra_block};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn adjacency_invariants(t in 2usize..=64, ks in prop::collection::btree_set(1usize..=5, 1..=5)) {
        let ks: Vec<usize> = ks.into_iter().collect();
        let set = build_adjacency_set(t, &ks).unwrap();
        prop_assert_eq!(set.len(), ks.len());
        for (a, &k) in set.matrices().iter().zip(&ks) {
            prop_assert_eq!(a.shape(), (2 * t, 2 * t));
            prop_assert_eq!(&a.transpose(), a.as_ref());
            prop_assert!(a.as_slice().iter().all(|v| *v == 0.0 || *v == 1.0));
            for i in 0..t {
                prop_assert_eq!(a.get(i, i), 1.0);
                prop_assert_eq!(a.get(t + i, t + i), 1.0);
                prop_assert_eq!(a.get(i, t + i), 1.0);
                for j in 0..t {
                    prop_assert_eq!(a.get(i, j), a.get(t + i, t + j));
                    prop_assert_eq!(a.get(i, t + j), a.get(t + j, i));
                    prop_assert_eq!(a.get(i, j) == 1.0, i.abs_diff(j) <= k);
                    prop_assert_eq!(a.get(i, t + j) == 1.0, i % k == j % k);
                }
            }
        }
    }

    #[test]
    fn bands_nest_and_strides_thin(t in 1usize..=40, k in 1usize..=6) {
        let (i1, ik) = (build_intra_block(t, 1).unwrap(), build_intra_block(t, k).unwrap());
        let (x1, xk) = (build_inter_block(t, 1).unwrap(), build_inter_block(t, k).unwrap());
        for (a, b) in i1.as_slice().iter().zip(ik.as_slice()) {
            prop_assert!(a <= b);
        }
        for (a, b) in xk.as_slice().iter().zip(x1.as_slice()) {
            prop_assert!(a <= b);
        }
    }
}
