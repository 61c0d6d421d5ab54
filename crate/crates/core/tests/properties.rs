mod common;

use heatsdf::field::ScalarField;
use heatsdf::metrics::ReferenceMesh;
use heatsdf::orientation::{build_region_mask, CellLabel, RegionMask};
use heatsdf::surface::{csg_combine, marching_cubes, CsgOp};
use heatsdf::{AnalyticShape, PointCloud, TriMesh, Vec3};
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(vec3(1.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn weights_sum_to_one_and_match_brute_force(points in cloud(20..120), eps in 0.05f64..0.6) {
        let pc = PointCloud::new(points).unwrap();
        let fast = pc.compute_adaptive_weights(eps).unwrap();
        let slow = pc.compute_adaptive_weights_brute_force(eps);
        prop_assert!((fast.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in fast.weights.iter().zip(&slow.weights) {
            prop_assert!((a - b).abs() <= 1e-12 * b.max(1e-300));
        }
    }

    #[test]
    fn weights_follow_permutations(points in cloud(20..80), eps in 0.1f64..0.5, shift in 1usize..19) {
        let pc = PointCloud::new(points.clone()).unwrap().compute_adaptive_weights(eps).unwrap();
        let mut rotated = points;
        rotated.rotate_left(shift);
        let rc = PointCloud::new(rotated).unwrap().compute_adaptive_weights(eps).unwrap();
        let n = pc.len();
        for i in 0..n {
            let a = rc.weights[i];
            let b = pc.weights[(i + shift) % n];
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn duplication_preserves_mass(points in cloud(20..80), eps in 0.1f64..0.5) {
        let pc = PointCloud::new(points.clone()).unwrap().compute_adaptive_weights(eps).unwrap();
        let mut doubled = points.clone();
        doubled.extend(points);
        let dc = PointCloud::new(doubled).unwrap().compute_adaptive_weights(eps).unwrap();
        let n = pc.len();
        for i in 0..n {
            let pair = dc.weights[i] + dc.weights[n + i];
            prop_assert!((pair - pc.weights[i]).abs() <= 1e-9 * pc.weights[i]);
        }
    }
}

fn occupancy() -> impl Strategy<Value = ([usize; 3], Vec<bool>)> {
    ([3usize..=32, 3usize..=32, 3usize..=32], 0.05f64..0.6).prop_flat_map(|(dims, p)| {
        let n = dims[0] * dims[1] * dims[2];
        (Just(dims), prop::collection::vec(prop::bool::weighted(p), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn flood_fill_matches_brute_force((dims, occupied) in occupancy()) {
        let expected = common::brute_force_outside(dims, &occupied);
        match RegionMask::from_occupancy(Vec3::zeros(), 0.1, dims, &occupied) {
            Ok(mask) => {
                for (i, l) in mask.labels.iter().enumerate() {
                    let want = if occupied[i] {
                        CellLabel::Interfacial
                    } else if expected[i] {
                        CellLabel::Outside
                    } else {
                        CellLabel::Inside
                    };
                    prop_assert_eq!(*l, want);
                }
            }
            Err(heatsdf::Error::NoOutsideSeed) => prop_assert!(!expected.iter().any(|&o| o)),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn labels_are_monotone_in_the_cloud(base in cloud(50..400), extra in cloud(1..100)) {
        let a = build_region_mask(&base, 16).unwrap();
        let mut more = base.clone();
        more.extend(extra);
        let b = build_region_mask(&more, 16).unwrap();
        for (la, lb) in a.labels.iter().zip(&b.labels) {
            if *la == CellLabel::Interfacial {
                prop_assert_eq!(*lb, CellLabel::Interfacial);
            }
            if *lb == CellLabel::Outside {
                prop_assert_eq!(*la, CellLabel::Outside);
            }
        }
    }

    #[test]
    fn labelled_cells_hold_no_points(points in cloud(10..300), dims in 4usize..24) {
        let mask = build_region_mask(&points, dims).unwrap();
        for p in &points {
            let c: Vec<usize> = (0..3)
                .map(|a| (((p[a] - mask.grid_origin[a]) / mask.h).floor() as usize).min(dims - 1))
                .collect();
            prop_assert_eq!(mask.label([c[0], c[1], c[2]]), CellLabel::Interfacial);
        }
    }

    #[test]
    fn csg_indicators_agree(
        ca in vec3(0.5), ra in 0.1f64..0.6, cb in vec3(0.5), rb in 0.1f64..0.6, x in prop::collection::vec(vec3(1.2), 2000)
    ) {
        let a = AnalyticShape::Sphere { center: ca.into(), radius: ra };
        let b = AnalyticShape::Sphere { center: cb.into(), radius: rb };
        let union = csg_combine(&a, &b, CsgOp::Union);
        let inter = csg_combine(&a, &b, CsgOp::Intersection);
        for p in &x {
            let (ia, ib) = (a.value(p) < 0.0, b.value(p) < 0.0);
            prop_assert_eq!(union.value(p) < 0.0, ia || ib);
            prop_assert_eq!(inter.value(p) < 0.0, ia && ib);
        }
    }

    #[test]
    fn hashed_distance_matches_brute_force(p in vec3(1.2)) {
        let mesh = ReferenceMesh::new(TriMesh::icosphere(Vec3::new(0.1, 0.0, -0.1), 0.45, 2)).unwrap();
        let fast = mesh.distance(&p);
        let slow = mesh.distance_brute_force(&p);
        prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
    }
}

#[test]
fn signed_distance_signs_on_box_and_sphere() {
    let points = common::random_points(100_000, 11, 1.2);
    let lo = Vec3::new(-0.4, -0.3, -0.5);
    let hi = Vec3::new(0.5, 0.3, 0.2);
    let cuboid = ReferenceMesh::new(TriMesh::cuboid(lo, hi)).unwrap();
    let c = (lo + hi) / 2.0;
    let box_shape = AnalyticShape::Box {
        center: c.into(),
        half_extents: ((hi - lo) / 2.0).into(),
    };
    let sd = cuboid.signed_distances(&points).unwrap();
    for (p, d) in points.iter().zip(&sd) {
        let truth = box_shape.sdf(p);
        assert!((d - truth).abs() < 1e-9, "box at {p:?}: {d} vs {truth}");
    }
    // the level-4 icosphere lies within 1e-3 of the round sphere
    let sphere = ReferenceMesh::new(TriMesh::icosphere(Vec3::zeros(), 0.5, 4)).unwrap();
    let sd = sphere.signed_distances(&points).unwrap();
    for (p, d) in points.iter().zip(&sd) {
        let r = p.norm() - 0.5;
        if r.abs() > 2e-3 {
            assert_eq!(d.signum(), r.signum(), "sphere at {p:?}");
        }
    }
}

#[test]
fn extracted_vertices_lie_on_analytic_surfaces() {
    for shape in [AnalyticShape::sphere(), AnalyticShape::torus()] {
        let mesh = marching_cubes(&shape, 96, 0.0).unwrap();
        let h = 2.4 / 96.0;
        let worst = mesh.vertices.iter().map(|v| shape.sdf(v).abs()).fold(0.0, f64::max);
        assert!(worst < 0.1 * h, "{}: {worst}", shape.name());
    }
}
