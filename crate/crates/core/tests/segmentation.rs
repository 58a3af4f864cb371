use primitect_core::contour::{classify_ground, rasterize_dsm, trace_contours};
use primitect_core::synth::{compose_scene, generate_building, Scene, SynthConfig};
use primitect_core::topology::{build_nesting_forest, extract_buildings, segment_all, AttributeThresholds};
use primitect_core::Point2;

fn three_buildings() -> Scene {
    let cfg = SynthConfig::default();
    let buildings = (0..3).map(|s| generate_building(&cfg, 40 + s).unwrap()).collect();
    let offsets = vec![Point2::new(0.0, 0.0), Point2::new(25.0, 3.0), Point2::new(8.0, 24.0)];
    compose_scene(buildings, offsets, 6.0, 6.0, 1).unwrap()
}

#[test]
fn three_buildings_are_found_and_segmented() {
    let scene = three_buildings();
    let dsm = rasterize_dsm(&scene.points, 0.5).unwrap();
    let cs = trace_contours(&dsm, 1.0, 0.0).unwrap();
    let forest = build_nesting_forest(&cs).unwrap();
    let clusters = extract_buildings(&forest, &AttributeThresholds::default());
    assert_eq!(clusters.len(), 3);

    // match clusters to buildings by which offset their root contains
    let owner: Vec<usize> = clusters
        .iter()
        .map(|c| {
            let hits: Vec<usize> = scene
                .offsets
                .iter()
                .enumerate()
                .filter(|(_, o)| primitect_core::geometry::point_in_polygon(**o, c.root()))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(hits.len(), 1);
            hits[0]
        })
        .collect();

    let segments = segment_all(&scene.points, &clusters);
    for (ci, seg) in segments.iter().enumerate() {
        assert!(!seg.is_empty());
        let root_z = clusters[ci].root().elevation;
        for p in seg {
            let i = scene.points.iter().position(|q| q == p).unwrap();
            assert_eq!(scene.labels[i], Some(owner[ci]), "point {p:?}");
            assert!(p.z >= root_z);
        }
        // every building point above the root contour is claimed
        let expected = scene
            .points
            .iter()
            .zip(&scene.labels)
            .filter(|(p, l)| **l == Some(owner[ci]) && p.z >= root_z + 0.5)
            .count();
        let claimed = seg.iter().filter(|p| p.z >= root_z + 0.5).count();
        assert!(claimed as f64 >= 0.98 * expected as f64, "{claimed} of {expected}");
    }
}

#[test]
fn ground_filter_separates_ground_from_buildings() {
    let scene = three_buildings();
    let ground = classify_ground(&scene.points, 1.0, 31, 0.05).unwrap();
    let mut wrong = 0;
    let mut high = 0;
    for ((p, l), g) in scene.points.iter().zip(&scene.labels).zip(&ground) {
        match l {
            None => wrong += usize::from(!g),
            Some(_) if p.z > 2.0 => {
                high += 1;
                wrong += usize::from(*g);
            }
            Some(_) => {}
        }
    }
    assert_eq!(wrong, 0, "{wrong} misclassified of {high} high building points");
}
