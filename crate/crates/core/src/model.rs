//! The compact model (posed primitives plus deformation nodes), the meshes
//! it expands to, and accuracy evaluation against a point cloud.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::deform::{EdGraph, EdNode, DEFAULT_NEIGHBORS};
use crate::geometry::{resample_closed, Point3, PointCloud, Polygon};
use crate::kdtree::KdTree;
use crate::primitives::{Mesh, MeshResolution, PosedPrimitive, VertexKind};
use crate::{Error, Result};

/// Largest deformation graph a model may carry per primitive.
pub const MAX_ED_NODES: usize = 2000;
/// Default surface sampling density for accuracy evaluation, points/m².
pub const DEFAULT_EVAL_DENSITY: f64 = 100.0;

/// One posed primitive and the nodes of its deformation graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelPrimitive {
    pub primitive: PosedPrimitive,
    /// Neighbours each vertex binds to.
    pub k: usize,
    /// May be empty: the primitive is then used undeformed.
    pub nodes: Vec<EdNode>,
}

impl ModelPrimitive {
    pub fn rigid(primitive: PosedPrimitive) -> Self {
        Self {
            primitive,
            k: DEFAULT_NEIGHBORS,
            nodes: Vec::new(),
        }
    }

    pub fn from_graph(primitive: PosedPrimitive, graph: &EdGraph) -> Self {
        Self {
            primitive,
            k: graph.k,
            nodes: graph.nodes.clone(),
        }
    }

    /// Graph over the current nodes bound to `vertices`.
    pub fn graph_for(&self, vertices: &[Point3]) -> Result<Option<EdGraph>> {
        if self.nodes.is_empty() {
            return Ok(None);
        }
        let positions: Vec<Point3> = self.nodes.iter().map(|n| n.b).collect();
        let mut g = EdGraph::from_nodes(&positions, vertices, self.k)?;
        for (dst, src) in g.nodes.iter_mut().zip(&self.nodes) {
            dst.a = src.a;
            dst.t = src.t;
        }
        Ok(Some(g))
    }

    /// Posed mesh pushed through the deformation graph.
    pub fn warped_mesh(&self, res: MeshResolution) -> Result<Mesh> {
        let mut mesh = self.primitive.mesh(res)?;
        if let Some(g) = self.graph_for(&mesh.vertices)? {
            mesh.vertices = g.warped_vertices();
        }
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        self.primitive.params.validate()?;
        if self.nodes.len() > MAX_ED_NODES {
            return Err(Error::invalid(format!(
                "{} deformation nodes exceed the limit of {MAX_ED_NODES}",
                self.nodes.len()
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("neighbour count must be positive"));
        }
        let finite = |p: Point3| p.is_finite();
        if self
            .nodes
            .iter()
            .any(|n| !finite(n.b) || !finite(n.t) || n.a.0.iter().flatten().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid("non-finite deformation node"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildingModel {
    pub id: usize,
    pub primitives: Vec<ModelPrimitive>,
}

impl BuildingModel {
    /// All warped primitive meshes merged into one.
    pub fn mesh(&self, res: MeshResolution) -> Result<Mesh> {
        let mut out = Mesh::default();
        for p in &self.primitives {
            append_mesh(&mut out, &p.warped_mesh(res)?);
        }
        Ok(out)
    }
}

/// Appends `src` to `dst`, reindexing its faces.
pub fn append_mesh(dst: &mut Mesh, src: &Mesh) {
    let off = dst.vertices.len();
    dst.vertices.extend_from_slice(&src.vertices);
    dst.kinds.extend_from_slice(&src.kinds);
    dst.faces
        .extend(src.faces.iter().map(|f| [f[0] + off, f[1] + off, f[2] + off]));
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub units: String,
    pub contour_interval: f64,
    /// Hash of the configuration that produced the model.
    pub config_hash: String,
}

impl Default for ModelMeta {
    fn default() -> Self {
        Self {
            units: String::from("m"),
            contour_interval: 1.0,
            config_hash: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompactModel {
    pub meta: ModelMeta,
    pub buildings: Vec<BuildingModel>,
}

impl CompactModel {
    pub fn validate(&self) -> Result<()> {
        for b in &self.buildings {
            for p in &b.primitives {
                p.validate()?;
            }
        }
        Ok(())
    }

    pub fn primitive_count(&self) -> usize {
        self.buildings.iter().map(|b| b.primitives.len()).sum()
    }

    pub fn node_count(&self) -> usize {
        self.buildings
            .iter()
            .flat_map(|b| &b.primitives)
            .map(|p| p.nodes.len())
            .sum()
    }
}

/// Mean distance from every input point to a dense sample of `mesh`.
///
/// The samples are nested across densities, so raising `density` never
/// raises the result.
pub fn mesh_accuracy(mesh: &Mesh, pc: &[Point3], density: f64) -> Result<f64> {
    if pc.is_empty() {
        return Err(Error::empty("no points to evaluate"));
    }
    if !(density > 0.0) {
        return Err(Error::invalid("sampling density must be positive"));
    }
    let mut samples = mesh.sample_surface(density);
    samples.extend_from_slice(&mesh.vertices);
    if samples.is_empty() {
        return Err(Error::empty("model has no surface"));
    }
    let tree = KdTree::new(samples);
    let total: f64 = pc
        .iter()
        .map(|p| tree.nearest(*p).expect("non-empty").distance())
        .sum();
    Ok(total / pc.len() as f64)
}

/// Mean point-to-model distance of a building's segmented points.
pub fn evaluate_accuracy(
    b: &BuildingModel,
    pc: &[Point3],
    res: MeshResolution,
    density: f64,
) -> Result<f64> {
    mesh_accuracy(&b.mesh(res)?, pc, density)
}

/// Free-form baseline: a closed tube lofted through a building's contours.
///
/// Each contour is resampled to `n` points (same start rule for all), the
/// rings are stacked at their elevations with an extra copy of the lowest
/// ring at `base_z`, and both ends are closed with a fan.
pub fn loft_contours(chain: &[Polygon], base_z: f64, n: usize) -> Result<Mesh> {
    if chain.is_empty() {
        return Err(Error::empty("no contours to loft"));
    }
    let mut sorted: Vec<&Polygon> = chain.iter().collect();
    sorted.sort_by(|a, b| a.elevation.total_cmp(&b.elevation));
    let mut rings: Vec<(Vec<crate::Point2>, f64)> = Vec::new();
    let first = resample_closed(sorted[0], n)?.into_vertices();
    if base_z < sorted[0].elevation {
        rings.push((first, base_z));
    }
    for p in &sorted {
        rings.push((resample_closed(p, n)?.into_vertices(), p.elevation));
    }
    let mut mesh = Mesh::default();
    for (ring, z) in &rings {
        for q in ring {
            mesh.vertices.push(q.extend(*z));
            mesh.kinds.push(VertexKind::Side);
        }
    }
    for r in 0..rings.len() - 1 {
        let (a, b) = (r * n, (r + 1) * n);
        for j in 0..n {
            let j1 = (j + 1) % n;
            mesh.faces.push([a + j, a + j1, b + j1]);
            mesh.faces.push([a + j, b + j1, b + j]);
        }
    }
    let centre = |ring: &[crate::Point2]| {
        ring.iter().fold(crate::Point2::ZERO, |s, p| s + *p) / ring.len() as f64
    };
    let bottom = mesh.vertices.len();
    mesh.vertices.push(centre(&rings[0].0).extend(rings[0].1));
    mesh.kinds.push(VertexKind::BottomCap);
    let top = mesh.vertices.len();
    let last = rings.len() - 1;
    mesh.vertices.push(centre(&rings[last].0).extend(rings[last].1));
    mesh.kinds.push(VertexKind::TopCap);
    for j in 0..n {
        let j1 = (j + 1) % n;
        mesh.faces.push([bottom, j1, j]);
        mesh.faces.push([last * n + j, last * n + j1, top]);
    }
    Ok(mesh)
}

/// Samples of a merged point cloud for convenience in tests and tools.
pub fn model_samples(m: &CompactModel, res: MeshResolution, density: f64) -> Result<PointCloud> {
    let mut out = Vec::new();
    for b in &m.buildings {
        out.extend(b.mesh(res)?.sample_surface(density));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use crate::primitives::PrimitiveParams;
    use crate::Point2;
    use core::f64::consts::PI;
    use std::vec;

    fn cylinder(r: f64, h: f64, at: Point3) -> PosedPrimitive {
        PosedPrimitive::new(
            PrimitiveParams::Cylinder { radius: r, height: h },
            Mat3::IDENTITY,
            at,
        )
        .unwrap()
    }

    #[test]
    fn rigid_model_mesh_is_posed_mesh() {
        let p = ModelPrimitive::rigid(cylinder(2.0, 3.0, Point3::new(1.0, 2.0, 0.0)));
        let res = MeshResolution::new(12, 6);
        assert_eq!(p.warped_mesh(res).unwrap(), p.primitive.mesh(res).unwrap());
    }

    #[test]
    fn identity_nodes_do_not_move_vertices() {
        let prim = cylinder(2.0, 3.0, Point3::ZERO);
        let res = MeshResolution::new(16, 8);
        let verts = prim.mesh(res).unwrap().vertices;
        let g = crate::deform::build_graph(&verts, 20, 4).unwrap();
        let p = ModelPrimitive::from_graph(prim, &g);
        let m = p.warped_mesh(res).unwrap();
        for (a, b) in m.vertices.iter().zip(&verts) {
            assert!(a.distance(*b) < 1e-12);
        }
    }

    #[test]
    fn translated_nodes_translate_mesh() {
        let prim = cylinder(2.0, 3.0, Point3::ZERO);
        let res = MeshResolution::new(16, 8);
        let verts = prim.mesh(res).unwrap().vertices;
        let mut g = crate::deform::build_graph(&verts, 20, 4).unwrap();
        for n in &mut g.nodes {
            n.t = Point3::new(0.5, -1.0, 0.0);
        }
        let m = ModelPrimitive::from_graph(prim, &g).warped_mesh(res).unwrap();
        for (a, b) in m.vertices.iter().zip(&verts) {
            assert!(a.distance(*b + Point3::new(0.5, -1.0, 0.0)) < 1e-12);
        }
    }

    #[test]
    fn too_many_nodes_rejected() {
        let mut p = ModelPrimitive::rigid(cylinder(1.0, 1.0, Point3::ZERO));
        p.nodes = vec![EdNode::at(Point3::ZERO); MAX_ED_NODES + 1];
        assert!(p.validate().is_err());
    }

    #[test]
    fn self_sampled_accuracy_is_small() {
        let b = BuildingModel {
            id: 0,
            primitives: vec![ModelPrimitive::rigid(cylinder(3.0, 5.0, Point3::ZERO))],
        };
        let res = MeshResolution::new(32, 16);
        let pts = b.mesh(res).unwrap().sample_surface(4.0);
        let d = evaluate_accuracy(&b, &pts, res, 4.0).unwrap();
        assert!(d <= 0.5, "{d}");
        assert!(d < 1e-9);
    }

    #[test]
    fn denser_sampling_never_worse() {
        let b = BuildingModel {
            id: 0,
            primitives: vec![ModelPrimitive::rigid(cylinder(3.0, 5.0, Point3::ZERO))],
        };
        let res = MeshResolution::new(24, 12);
        let pts: Vec<Point3> = (0..200)
            .map(|i| {
                let t = i as f64 * 0.37;
                Point3::new(3.2 * libm::cos(t), 3.2 * libm::sin(t), (i % 50) as f64 * 0.1)
            })
            .collect();
        let mut prev = f64::INFINITY;
        for density in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0] {
            let d = evaluate_accuracy(&b, &pts, res, density).unwrap();
            assert!(d <= prev + 1e-12, "{density}: {d} > {prev}");
            prev = d;
        }
    }

    #[test]
    fn accuracy_is_rigid_invariant() {
        let b = BuildingModel {
            id: 0,
            primitives: vec![ModelPrimitive::rigid(cylinder(3.0, 5.0, Point3::ZERO))],
        };
        let res = MeshResolution::new(24, 12);
        let pts: Vec<Point3> = (0..100)
            .map(|i| Point3::new(3.5 * libm::cos(i as f64), 3.5 * libm::sin(i as f64), 2.0))
            .collect();
        let d0 = evaluate_accuracy(&b, &pts, res, 10.0).unwrap();
        let rot = Mat3::rot_z(0.8);
        let shift = Point3::new(10.0, -4.0, 3.0);
        let moved = BuildingModel {
            id: 0,
            primitives: vec![ModelPrimitive::rigid(
                PosedPrimitive::new(
                    PrimitiveParams::Cylinder {
                        radius: 3.0,
                        height: 5.0,
                    },
                    rot,
                    shift,
                )
                .unwrap(),
            )],
        };
        let pts2: Vec<Point3> = pts.iter().map(|p| rot.mul_vec(*p) + shift).collect();
        let d1 = evaluate_accuracy(&moved, &pts2, res, 10.0).unwrap();
        assert!((d0 - d1).abs() < 1e-6);
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let b = BuildingModel {
            id: 0,
            primitives: vec![ModelPrimitive::rigid(cylinder(3.0, 5.0, Point3::ZERO))],
        };
        assert!(evaluate_accuracy(&b, &[], MeshResolution::default(), 10.0).is_err());
    }

    #[test]
    fn loft_is_closed_and_tracks_contours() {
        let circle = |r: f64, z: f64| {
            Polygon::new(
                (0..40)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / 40.0;
                        Point2::new(r * libm::cos(t), r * libm::sin(t))
                    })
                    .collect(),
                z,
            )
            .unwrap()
        };
        let chain: Vec<Polygon> = (1..6).map(|z| circle(4.0 - 0.3 * z as f64, z as f64)).collect();
        let m = loft_contours(&chain, 0.0, 32).unwrap();
        assert!(m.is_watertight());
        assert_eq!(m.vertices.len(), 6 * 32 + 2);
    }
}
