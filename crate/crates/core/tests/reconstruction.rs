use primitect_core::contour::{morphological_ground_filter, rasterize_dsm, trace_contours};
use primitect_core::deform::{build_graph, solve_lm, EnergyWeights};
use primitect_core::geometry::{Mat3, Point2, Point3};
use primitect_core::lm::LmSettings;
use primitect_core::model::{evaluate_accuracy, loft_contours, mesh_accuracy, BuildingModel, ModelPrimitive};
use primitect_core::pipeline::{data_kinds, reconstruct_cluster, ReconstructSettings};
use primitect_core::primitives::{
    build_distance_field, fit_primitive, FitSettings, MeshResolution, PosedPrimitive, PrimitiveKind,
    PrimitiveParams,
};
use primitect_core::synth::{building_from_units, compose_scene, cone_sphere_cone, SynthConfig};
use primitect_core::topology::{build_nesting_forest, extract_buildings, segment_all, AttributeThresholds};

#[test]
fn cone_sphere_cone_scene_gives_three_simple_primitives() {
    let b = building_from_units(cone_sphere_cone().unwrap(), &SynthConfig::default(), 1).unwrap();
    let scene = compose_scene(vec![b], vec![Point2::new(3.0, -2.0)], 6.0, 8.0, 2).unwrap();
    let above = morphological_ground_filter(&scene.points, 1.0, 31, 0.05).unwrap();
    let dsm = rasterize_dsm(&scene.points, 0.5).unwrap();
    let cs = trace_contours(&dsm, 1.0, 0.0).unwrap();
    let forest = build_nesting_forest(&cs).unwrap();
    let mut clusters = extract_buildings(&forest, &AttributeThresholds::default());
    assert_eq!(clusters.len(), 1);
    let seg = segment_all(&above, &clusters);
    clusters[0].points = seg[0].clone();
    let r = reconstruct_cluster(0, &clusters[0], 0.0, &ReconstructSettings::default()).unwrap();
    let kinds: Vec<PrimitiveKind> = r.model.primitives.iter().map(|p| p.primitive.kind()).collect();
    assert_eq!(kinds.len(), 3, "{:?}", r.fits);
    assert!(kinds.iter().all(|k| k.is_round()), "{kinds:?} {:?}", r.fits);
    assert_eq!(kinds[1], PrimitiveKind::Hemisphere, "{:?}", r.fits);
    for rf in &r.refines {
        assert!(rf.rms_after <= rf.rms_before + 1e-9, "{rf:?}");
    }
    let acc = evaluate_accuracy(&r.model, &clusters[0].points, MeshResolution::default(), 25.0).unwrap();
    assert!(acc < 0.15, "mean distance {acc}");
}

/// Points on a cylinder whose axis bends as `x = c·z²`.
fn bent_cylinder(c: f64) -> Vec<Point3> {
    let mut pts = Vec::new();
    for k in 0..=80 {
        let z = k as f64 * 0.1;
        for j in 0..96 {
            let t = std::f64::consts::TAU * j as f64 / 96.0;
            pts.push(Point3::new(3.0 * t.cos() + c * z * z, 3.0 * t.sin(), z));
        }
    }
    pts
}

#[test]
fn refinement_halves_the_error_on_a_bent_cylinder() {
    let pts = bent_cylinder(0.02);
    let field = build_distance_field(&pts, 0.2, 1.0).unwrap();
    let fit = fit_primitive(&pts, PrimitiveKind::Cylinder, &field, &FitSettings::default()).unwrap();
    let res = MeshResolution::new(40, 20);
    let rigid = BuildingModel {
        id: 0,
        primitives: vec![ModelPrimitive::rigid(fit.primitive.clone())],
    };
    let before = evaluate_accuracy(&rigid, &pts, res, 50.0).unwrap();

    let mesh = fit.primitive.mesh(res).unwrap();
    let data = mesh.select(&data_kinds(true));
    let g = build_graph(&mesh.vertices, 150, 4).unwrap();
    let lm = LmSettings {
        max_iter: 40,
        ..LmSettings::default()
    };
    let (g, report) = solve_lm(&g, &field, Some(&data), EnergyWeights::default(), &lm).unwrap();
    assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
    let refined = BuildingModel {
        id: 0,
        primitives: vec![ModelPrimitive::from_graph(fit.primitive, &g)],
    };
    let after = evaluate_accuracy(&refined, &pts, res, 50.0).unwrap();
    assert!(after <= 0.5 * before, "before {before}, after {after}");
}

#[test]
fn free_form_and_primitive_accuracy_stay_within_a_factor_two() {
    let pts = bent_cylinder(0.01);
    let contours: Vec<primitect_core::Polygon> = (1..8)
        .map(|z| {
            let z = z as f64;
            let ring: Vec<Point2> = (0..96)
                .map(|j| {
                    let t = std::f64::consts::TAU * j as f64 / 96.0;
                    Point2::new(3.0 * t.cos() + 0.01 * z * z, 3.0 * t.sin())
                })
                .collect();
            primitect_core::Polygon::new(ring, z).unwrap()
        })
        .collect();
    let loft = loft_contours(&contours, 0.0, 96).unwrap();
    let free = mesh_accuracy(&loft, &pts, 50.0).unwrap();
    let field = build_distance_field(&pts, 0.2, 1.0).unwrap();
    let fit = fit_primitive(&pts, PrimitiveKind::Cylinder, &field, &FitSettings::default()).unwrap();
    let prim = mesh_accuracy(&fit.primitive.mesh(MeshResolution::default()).unwrap(), &pts, 50.0).unwrap();
    let (lo, hi) = (free.min(prim), free.max(prim));
    assert!(hi <= 2.0 * lo.max(0.05), "free-form {free}, primitive {prim}");
}

#[test]
fn accuracy_is_invariant_under_rigid_motion() {
    let p = PosedPrimitive::new(
        PrimitiveParams::Cylinder {
            radius: 3.0,
            height: 6.0,
        },
        Mat3::IDENTITY,
        Point3::new(0.0, 0.0, 0.0),
    )
    .unwrap();
    let pts = bent_cylinder(0.01);
    let m = BuildingModel {
        id: 0,
        primitives: vec![ModelPrimitive::rigid(p.clone())],
    };
    let r = Mat3::from_axis_angle(Point3::new(0.2, -0.3, 1.0), 0.7);
    let t = Point3::new(5.0, -2.0, 1.5);
    let moved_p = PosedPrimitive::new(p.params.clone(), r, r.mul_vec(p.translation) + t).unwrap();
    let moved = BuildingModel {
        id: 0,
        primitives: vec![ModelPrimitive::rigid(moved_p)],
    };
    let moved_pts: Vec<Point3> = pts.iter().map(|q| r.mul_vec(*q) + t).collect();
    let a = evaluate_accuracy(&m, &pts, MeshResolution::default(), 20.0).unwrap();
    let b = evaluate_accuracy(&moved, &moved_pts, MeshResolution::default(), 20.0).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}
