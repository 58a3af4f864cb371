use primitect_core::geometry::{Mat3, Point2, Point3, Polygon};
use primitect_core::primitives::{
    build_distance_field, fit_primitive, select_primitive, FitSettings, MeshResolution,
    PosedPrimitive, PrimitiveKind, PrimitiveParams, SelectSettings, VertexKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn surface_points(p: &PosedPrimitive, density: f64) -> Vec<Point3> {
    let mesh = p.mesh(MeshResolution::new(48, 24)).unwrap();
    let side = mesh.select(&[VertexKind::Side, VertexKind::TopCap]);
    let mut keep = vec![false; mesh.vertices.len()];
    side.iter().for_each(|&i| keep[i] = true);
    let mut sub = mesh.clone();
    sub.faces.retain(|f| f.iter().all(|&v| keep[v]));
    sub.sample_surface(density)
}

fn cone() -> PrimitiveParams {
    PrimitiveParams::Cone {
        base_radius: 4.0,
        a: -1.0,
        height: 6.0,
    }
}

fn shape_of(p: &PrimitiveParams) -> Vec<f64> {
    match p {
        PrimitiveParams::Cone { base_radius, a, .. } => vec![*base_radius, 1.0 / a],
        PrimitiveParams::Cylinder { radius, .. } => vec![*radius],
        PrimitiveParams::Hemisphere {
            radius, center_z, ..
        } => vec![*radius, *center_z],
        PrimitiveParams::Polyhedron { .. } => vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Moving the cloud rigidly (upright) moves the fit with it and leaves
    /// the shape alone.
    #[test]
    fn fit_follows_rigid_motion(yaw in -3.0f64..3.0, tx in -20.0f64..20.0, ty in -20.0f64..20.0, tz in -5.0f64..5.0) {
        let truth = PosedPrimitive::new(cone(), Mat3::IDENTITY, Point3::new(0.3, -0.2, 0.0)).unwrap();
        let pts = surface_points(&truth, 6.0);
        let r = Mat3::rot_z(yaw);
        let t = Point3::new(tx, ty, tz);
        let moved: Vec<Point3> = pts.iter().map(|p| r.mul_vec(*p) + t).collect();
        let s = FitSettings::default();
        let fa = build_distance_field(&pts, 0.25, 1.0).unwrap();
        let fb = build_distance_field(&moved, 0.25, 1.0).unwrap();
        let a = fit_primitive(&pts, PrimitiveKind::Cone, &fa, &s).unwrap();
        let b = fit_primitive(&moved, PrimitiveKind::Cone, &fb, &s).unwrap();
        for (x, y) in shape_of(&a.primitive.params).iter().zip(shape_of(&b.primitive.params)) {
            prop_assert!((x - y).abs() < 0.02 * x.abs().max(1.0), "{x} vs {y}");
        }
        let axis_a = r.mul_vec(a.primitive.translation) + t;
        prop_assert!(axis_a.distance(b.primitive.translation) < 0.02, "{axis_a:?} vs {:?}", b.primitive.translation);
        prop_assert!((a.rms - b.rms).abs() < 0.02);
    }
}

#[test]
fn noiseless_cone_is_recovered() {
    let truth = PosedPrimitive::new(cone(), Mat3::IDENTITY, Point3::new(1.0, 2.0, 0.0)).unwrap();
    let pts = surface_points(&truth, 25.0);
    let f = build_distance_field(&pts, 0.1, 0.5).unwrap();
    let fit = fit_primitive(&pts, PrimitiveKind::Cone, &f, &FitSettings::default()).unwrap();
    let s = shape_of(&fit.primitive.params);
    assert!((s[0] - 4.0).abs() < 0.05, "{s:?}");
    assert!((s[1] + 1.0).abs() < 0.1, "{s:?}");
    assert!(fit.primitive.translation.xy().distance(Point2::new(1.0, 2.0)) < 0.05);
}

#[test]
fn free_form_blob_falls_back_to_polyhedron() {
    // a lumpy, leaning extrusion no revolve surface follows
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lobes: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..6.28)).collect();
    let radius = |t: f64, z: f64| {
        4.0 + 1.5 * (3.0 * t + lobes[0]).sin() + 0.8 * (2.0 * t + lobes[1] + 0.4 * z).cos()
    };
    let mut pts = Vec::new();
    let mut contours = Vec::new();
    for k in 0..=60 {
        let z = k as f64 * 0.1;
        let ring: Vec<Point2> = (0..160)
            .map(|j| {
                let t = std::f64::consts::TAU * j as f64 / 160.0;
                let r = radius(t, z);
                Point2::new(r * t.cos() + 0.3 * z, r * t.sin())
            })
            .collect();
        pts.extend(ring.iter().map(|p| p.extend(z)));
        if k % 10 == 5 {
            contours.push(Polygon::new(ring, z).unwrap());
        }
    }
    let f = build_distance_field(&pts, 0.25, 1.0).unwrap();
    let sel = select_primitive(&pts, &f, &contours, (0.0, 6.0), &SelectSettings::default()).unwrap();
    assert!(sel.fallback, "{:?}", sel.candidates);
    assert_eq!(sel.primitive.kind(), PrimitiveKind::Polyhedron);
    for (_, rms) in &sel.candidates {
        assert!(*rms > sel.rms);
    }
}
