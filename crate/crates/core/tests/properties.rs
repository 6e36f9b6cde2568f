use ipdnet_core::geometry::{
    angular_error, distance, make_grid, tdoa_between, AngleMetric, ArrayGeometry, Direction, GridKind,
};
use proptest::prelude::*;

fn arb_positions() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.2f64..0.2), 2..6).prop_filter("distinct", |p| {
        (0..p.len()).all(|i| (i + 1..p.len()).all(|j| distance(&p[i], &p[j]) > 1e-3))
    })
}

fn arb_dir() -> impl Strategy<Value = Direction> {
    (0.0f64..360.0, -90.0f64..90.0).prop_map(|(a, e)| Direction::new(a, e))
}

proptest! {
    #[test]
    fn tdoa_antisymmetric_and_bounded(p in arb_positions(), d in arb_dir()) {
        let g = ArrayGeometry::new(p.clone(), 0, 343.0).unwrap();
        for a in 0..p.len() {
            for b in 0..p.len() {
                let t = tdoa_between(&g, a, b, &d);
                prop_assert!((t + tdoa_between(&g, b, a, &d)).abs() < 1e-18);
                prop_assert!(t.abs() <= distance(&p[a], &p[b]) / 343.0 + 1e-15);
            }
        }
    }

    #[test]
    fn tdoa_translation_invariant(p in arb_positions(), d in arb_dir(), off in prop::array::uniform3(-5.0f64..5.0)) {
        let g = ArrayGeometry::new(p.clone(), 0, 343.0).unwrap();
        let moved: Vec<[f64; 3]> = p.iter().map(|q| [q[0] + off[0], q[1] + off[1], q[2] + off[2]]).collect();
        let h = ArrayGeometry::new(moved, 0, 343.0).unwrap();
        for m in 1..p.len() {
            let (a, b) = (tdoa_between(&g, 0, m, &d), tdoa_between(&h, 0, m, &d));
            prop_assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn angular_error_symmetric(a in arb_dir(), b in arb_dir()) {
        for m in [AngleMetric::Azimuth, AngleMetric::GreatCircle] {
            prop_assert_eq!(angular_error(&a, &b, m), angular_error(&b, &a, m));
            prop_assert!(angular_error(&a, &b, m) >= 0.0);
        }
    }

    #[test]
    fn triangle_inequality_on_grid(i in 0usize..2664, j in 0usize..2664, k in 0usize..2664) {
        let grid = make_grid(GridKind::Joint, 5.0).unwrap();
        let (a, b, c) = (&grid.directions[i], &grid.directions[j], &grid.directions[k]);
        let m = AngleMetric::GreatCircle;
        prop_assert!(angular_error(a, c, m) <= angular_error(a, b, m) + angular_error(b, c, m) + 1e-9);
        let az = make_grid(GridKind::FullAzimuth, 1.0).unwrap();
        let (a, b, c) = (&az.directions[i % 360], &az.directions[j % 360], &az.directions[k % 360]);
        let m = AngleMetric::Azimuth;
        prop_assert!(angular_error(a, c, m) <= angular_error(a, b, m) + angular_error(b, c, m) + 1e-9);
    }
}
