//! Property-based invariants over the aggregation hierarchy, the quadrature
//! grid, and the change-of-support integrals.

use proptest::prelude::*;

use cosbin_core::{
    aggregate_to_type_c, build_partition, degrade, precompute_nodes, region_integrals,
    AggregatedData, CovariateField, DataKind, ModelParams, Point, PointPattern, StudyWindow,
};

fn type_c_strategy() -> impl Strategy<Value = AggregatedData> {
    prop::collection::vec((0u64..40, 0u64..40), 1..50).prop_map(|cells| {
        let (n1, n0) = cells.into_iter().unzip();
        AggregatedData::TypeC { n1, n0 }
    })
}

proptest! {
    /// Degrading C->D->E matches the direct C->E path, and the intermediate
    /// Type D respects its invariants.
    #[test]
    fn degrade_paths_commute(data in type_c_strategy()) {
        let d = degrade(&data, DataKind::TypeD).unwrap();
        let e_via_d = degrade(&d, DataKind::TypeE).unwrap();
        let e_direct = degrade(&data, DataKind::TypeE).unwrap();
        prop_assert_eq!(&e_via_d, &e_direct);

        let (AggregatedData::TypeC { n1, n0 }, AggregatedData::TypeD { n, v }) = (&data, &d)
        else { unreachable!() };
        for j in 0..n.len() {
            prop_assert_eq!(n[j], n1[j] + n0[j]);
            prop_assert_eq!(v[j], u8::from(n1[j] > 0));
            if v[j] == 1 {
                prop_assert!(n[j] >= 1);
            }
        }
    }

    /// Upgrades are rejected for every strictly poorer source kind.
    #[test]
    fn degrade_rejects_upgrades(data in type_c_strategy()) {
        let d = degrade(&data, DataKind::TypeD).unwrap();
        let e = degrade(&data, DataKind::TypeE).unwrap();
        prop_assert!(degrade(&d, DataKind::TypeC).is_err());
        prop_assert!(degrade(&e, DataKind::TypeC).is_err());
        prop_assert!(degrade(&e, DataKind::TypeD).is_err());
    }

    /// Aggregation preserves every point: region totals match a brute-force
    /// recount and sum to the pattern size.
    #[test]
    fn aggregate_matches_brute_force_recount(
        raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0u8..2), 0..300),
        nx in 1usize..7,
        ny in 1usize..7,
    ) {
        let window = StudyWindow::unit_square();
        let partition = build_partition(window, nx, ny, 1).unwrap();
        let pts: Vec<(Point, u8)> =
            raw.iter().map(|&(x, y, m)| (Point::new(x, y), m)).collect();
        let pattern = PointPattern::new(window, pts).unwrap();
        let agg = aggregate_to_type_c(&pattern, &partition).unwrap();
        let AggregatedData::TypeC { n1, n0 } = &agg else { unreachable!() };

        let mut expect1 = vec![0u64; partition.n_regions()];
        let mut expect0 = vec![0u64; partition.n_regions()];
        for &(p, m) in pattern.points() {
            let j = partition.region_of(p).unwrap();
            if m == 1 { expect1[j] += 1 } else { expect0[j] += 1 }
        }
        prop_assert_eq!(n1, &expect1);
        prop_assert_eq!(n0, &expect0);
        let total: u64 = n1.iter().sum::<u64>() + n0.iter().sum::<u64>();
        prop_assert_eq!(total as usize, pattern.len());
    }

    /// Quadrature weights tile each subregion exactly: per-region weights sum
    /// to the region area, and all weights sum to the window area.
    #[test]
    fn quadrature_weights_tile_the_window(
        nx in 1usize..8,
        ny in 1usize..8,
        quad in 1usize..5,
    ) {
        let window = StudyWindow::unit_square();
        let partition = build_partition(window, nx, ny, quad).unwrap();
        let mut total = 0.0;
        for j in 0..partition.n_regions() {
            let region_sum: f64 = partition.region_nodes(j).iter().map(|n| n.weight).sum();
            prop_assert!((region_sum - partition.region_area()).abs() < 1e-12);
            total += region_sum;
        }
        prop_assert!((total - window.area()).abs() < 1e-10);
    }

    /// For any parameters and constant fields, 0 < Mj <= Lj and the implied
    /// within-region probability stays in (0, 1).
    #[test]
    fn integrals_keep_m_between_zero_and_l(
        alpha0 in -3.0f64..3.0,
        alpha1 in -2.0f64..2.0,
        beta0 in -6.0f64..6.0,
        beta1 in -2.0f64..2.0,
        zv in -2.0f64..2.0,
        xv in -2.0f64..2.0,
    ) {
        let window = StudyWindow::unit_square();
        let partition = build_partition(window, 4, 4, 2).unwrap();
        let z = [CovariateField::constant(window, zv)];
        let x = [CovariateField::constant(window, xv)];
        let table = precompute_nodes(&partition, &z, &x).unwrap();
        let params = ModelParams::new(alpha0, vec![alpha1], beta0, vec![beta1]);
        let ints = region_integrals(&params, &table).unwrap();
        for j in 0..ints.l.len() {
            prop_assert!(ints.l[j] > 0.0);
            prop_assert!(ints.m[j] > 0.0);
            prop_assert!(ints.m[j] <= ints.l[j]);
            let p = ints.p_tilde(j);
            prop_assert!(p > 0.0 && p < 1.0, "p_tilde = {}", p);
        }
    }
}
