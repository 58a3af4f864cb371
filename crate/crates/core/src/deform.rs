//! Embedded deformation: a sparse graph of affine nodes that warps a
//! primitive mesh towards the observed points.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{bounds3, Mat3, Point3};
use crate::kdtree::KdTree;
use crate::lm::{minimize, Jacobian, LmReport, LmSettings, Problem};
use crate::primitives::DistanceField;
use crate::{Error, Result};

pub const DEFAULT_NEIGHBORS: usize = 4;
/// Unknowns per node: the nine entries of `A` (row-major) then `t`.
pub const NODE_PARAMS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdNode {
    pub b: Point3,
    pub a: Mat3,
    pub t: Point3,
}

impl EdNode {
    pub fn at(b: Point3) -> Self {
        Self {
            b,
            a: Mat3::IDENTITY,
            t: Point3::ZERO,
        }
    }

    /// `A(v − b) + b + t`.
    pub fn apply(&self, v: Point3) -> Point3 {
        self.a.mul_vec(v - self.b) + self.b + self.t
    }
}

/// The nodes influencing one vertex and their normalized weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Binding {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdGraph {
    pub nodes: Vec<EdNode>,
    pub k: usize,
    /// Symmetrized k-nearest node neighbourhoods, sorted.
    pub neighbors: Vec<Vec<usize>>,
    /// Rest positions of the bound model vertices.
    pub vertices: Vec<Point3>,
    pub bindings: Vec<Binding>,
    /// Averaging voxel used to place the nodes (0 for hand-built graphs).
    pub voxel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyWeights {
    pub rot: f64,
    pub reg: f64,
    pub data: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        Self {
            rot: 1.0,
            reg: 10.0,
            data: 100.0,
        }
    }
}

impl EnergyWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("rot", self.rot), ("reg", self.reg), ("data", self.data)] {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("energy weight {name} must be positive")));
            }
        }
        Ok(())
    }
}

fn voxel_key(v: Point3, origin: Point3, s: f64) -> (i64, i64, i64) {
    let u = (v - origin) / s;
    (
        libm::floor(u.x) as i64,
        libm::floor(u.y) as i64,
        libm::floor(u.z) as i64,
    )
}

/// Averages the points falling in each cubic voxel of side `s`, the grid
/// anchored at `origin`. Output is ordered by voxel index.
pub fn voxel_average(points: &[Point3], origin: Point3, s: f64) -> Vec<Point3> {
    let mut cells: BTreeMap<(i64, i64, i64), (Point3, usize)> = BTreeMap::new();
    for p in points {
        let e = cells.entry(voxel_key(*p, origin, s)).or_insert((Point3::ZERO, 0));
        e.0 = e.0 + *p;
        e.1 += 1;
    }
    cells.values().map(|(sum, n)| *sum / *n as f64).collect()
}

/// Picks a voxel size by bisection so voxel averaging yields about
/// `node_count` nodes (within 10% when the count sequence allows it).
fn downsample(vertices: &[Point3], node_count: usize) -> (Vec<Point3>, f64) {
    let (lo_b, hi_b) = bounds3(vertices).expect("non-empty");
    let diag = lo_b.distance(hi_b).max(1e-9);
    let tol = (node_count as f64 * 0.1).max(0.5);
    let (mut lo, mut hi) = (diag * 1e-6, diag * 2.0);
    let mut best = (voxel_average(vertices, lo_b, hi), hi);
    let score = |n: usize| (n as f64 - node_count as f64).abs();
    for _ in 0..80 {
        let mid = libm::sqrt(lo * hi);
        let nodes = voxel_average(vertices, lo_b, mid);
        let n = nodes.len();
        if score(n) < score(best.0.len()) {
            best = (nodes, mid);
        }
        if score(n) <= tol {
            break;
        }
        if n > node_count {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-12 {
            break;
        }
    }
    best
}

impl EdGraph {
    /// Graph over explicit node positions; every node starts at identity.
    pub fn from_nodes(positions: &[Point3], vertices: &[Point3], k: usize) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::empty("graph has no nodes"));
        }
        if k == 0 {
            return Err(Error::invalid("neighbour count must be positive"));
        }
        let k = k.min(positions.len());
        let tree = KdTree::from_slice(positions);
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); positions.len()];
        for (i, p) in positions.iter().enumerate() {
            for n in tree.k_nearest(*p, k + 1) {
                if n.index != i && neighbors[i].len() < k {
                    neighbors[i].push(n.index);
                }
            }
        }
        let directed = neighbors.clone();
        for (i, list) in directed.iter().enumerate() {
            for &j in list {
                neighbors[j].push(i);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        let mut g = Self {
            nodes: positions.iter().map(|b| EdNode::at(*b)).collect(),
            k,
            neighbors,
            vertices: vertices.to_vec(),
            bindings: Vec::with_capacity(vertices.len()),
            voxel: 0.0,
        };
        g.bindings = vertices.iter().map(|v| g.bind_with(&tree, *v)).collect();
        Ok(g)
    }

    fn bind_with(&self, tree: &KdTree, v: Point3) -> Binding {
        let near = tree.k_nearest(v, self.k + 1);
        let bound = &near[..self.k.min(near.len())];
        let d_max = if near.len() > self.k {
            near[self.k].distance()
        } else {
            bound.last().map_or(0.0, |n| n.distance()) * (1.0 + 1e-9)
        };
        let mut weights: Vec<f64> = bound
            .iter()
            .map(|n| {
                if d_max > 0.0 {
                    (1.0 - n.distance() / d_max).max(0.0)
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            let u = 1.0 / weights.len() as f64;
            weights.iter_mut().for_each(|w| *w = u);
        }
        let mut pairs: Vec<(usize, f64)> = bound.iter().map(|n| n.index).zip(weights).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        Binding {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    /// Binding of an arbitrary point against the rest node positions.
    pub fn bind(&self, v: Point3) -> Binding {
        let positions: Vec<Point3> = self.nodes.iter().map(|n| n.b).collect();
        self.bind_with(&KdTree::new(positions), v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn warp_with(&self, v: Point3, b: &Binding) -> Point3 {
        b.nodes
            .iter()
            .zip(&b.weights)
            .fold(Point3::ZERO, |acc, (&j, &w)| acc + self.nodes[j].apply(v) * w)
    }

    /// Deformed position of bound model vertex `i`.
    pub fn warp_vertex(&self, i: usize) -> Result<Point3> {
        let b = self
            .bindings
            .get(i)
            .ok_or_else(|| Error::invalid(format!("vertex {i} is not bound")))?;
        Ok(self.warp_with(self.vertices[i], b))
    }

    /// Deformed positions of all bound vertices.
    pub fn warped_vertices(&self) -> Vec<Point3> {
        self.vertices
            .iter()
            .zip(&self.bindings)
            .map(|(v, b)| self.warp_with(*v, b))
            .collect()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.nodes.len() * NODE_PARAMS);
        for n in &self.nodes {
            x.extend(n.a.to_row_major());
            x.extend(n.t.to_array());
        }
        x
    }

    pub fn set_params(&mut self, x: &[f64]) {
        for (n, p) in self.nodes.iter_mut().zip(x.chunks_exact(NODE_PARAMS)) {
            n.a = Mat3::from_row_major(p[..9].try_into().unwrap());
            n.t = Point3::new(p[9], p[10], p[11]);
        }
    }

    pub fn reset(&mut self) {
        for n in &mut self.nodes {
            n.a = Mat3::IDENTITY;
            n.t = Point3::ZERO;
        }
    }
}

/// Downsamples the model vertices into about `node_count` nodes and binds
/// every vertex to its `k` nearest nodes.
pub fn build_graph(vertices: &[Point3], node_count: usize, k: usize) -> Result<EdGraph> {
    if node_count < 8 {
        return Err(Error::invalid(format!("node count {node_count} below 8")));
    }
    if vertices.len() < node_count {
        return Err(Error::invalid(format!(
            "{} vertices cannot provide {node_count} nodes",
            vertices.len()
        )));
    }
    if vertices.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite vertex"));
    }
    let (nodes, voxel) = downsample(vertices, node_count);
    let mut g = EdGraph::from_nodes(&nodes, vertices, k)?;
    g.voxel = voxel;
    Ok(g)
}

/// Six orthogonality residuals of `A`'s columns.
fn rot_terms(a: &Mat3) -> [f64; 6] {
    let (c1, c2, c3) = (a.col(0), a.col(1), a.col(2));
    [
        c1.dot(c2),
        c1.dot(c3),
        c2.dot(c3),
        c1.dot(c1) - 1.0,
        c2.dot(c2) - 1.0,
        c3.dot(c3) - 1.0,
    ]
}

pub fn energy_rot(g: &EdGraph) -> f64 {
    g.nodes
        .iter()
        .map(|n| rot_terms(&n.a).iter().map(|r| r * r).sum::<f64>())
        .sum()
}

fn reg_term(g: &EdGraph, i: usize, j: usize) -> Point3 {
    let (ni, nj) = (&g.nodes[i], &g.nodes[j]);
    // A d + b_j + t_j - (b_i + t_i) with the positions cancelled first, so
    // the identity gives exactly zero
    let d = ni.b - nj.b;
    nj.a.mul_vec(d) - d + nj.t - ni.t
}

/// Neighbour consistency with unit pair weights; node positions stand in
/// for the sample positions.
pub fn energy_reg(g: &EdGraph) -> f64 {
    (0..g.nodes.len())
        .flat_map(|i| g.neighbors[i].iter().map(move |&j| (i, j)))
        .map(|(i, j)| reg_term(g, i, j).norm_sq())
        .sum()
}

/// Squared field value at every warped vertex listed in `data` (all bound
/// vertices when `None`).
pub fn energy_data(g: &EdGraph, field: &DistanceField, data: Option<&[usize]>) -> f64 {
    let all: Vec<usize>;
    let idx = match data {
        Some(d) => d,
        None => {
            all = (0..g.vertices.len()).collect();
            &all
        }
    };
    idx.iter()
        .map(|&i| {
            let v = field.sample(g.warp_with(g.vertices[i], &g.bindings[i])).value;
            v * v
        })
        .sum()
}

pub fn total_energy(
    g: &EdGraph,
    field: &DistanceField,
    data: Option<&[usize]>,
    w: &EnergyWeights,
) -> f64 {
    w.rot * energy_rot(g) + w.reg * energy_reg(g) + w.data * energy_data(g, field, data)
}

/// The weighted sum of the three energies as a least-squares problem over
/// all node parameters.
pub struct EdProblem<'a> {
    template: EdGraph,
    field: &'a DistanceField,
    data: Vec<usize>,
    weights: EnergyWeights,
}

impl<'a> EdProblem<'a> {
    pub fn new(
        graph: &EdGraph,
        field: &'a DistanceField,
        data: Option<&[usize]>,
        weights: EnergyWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let data = match data {
            Some(d) => {
                if let Some(&bad) = d.iter().find(|&&i| i >= graph.vertices.len()) {
                    return Err(Error::invalid(format!("data vertex {bad} is not bound")));
                }
                d.to_vec()
            }
            None => (0..graph.vertices.len()).collect(),
        };
        Ok(Self {
            template: graph.clone(),
            field,
            data,
            weights,
        })
    }

    fn graph_at(&self, x: &[f64]) -> EdGraph {
        let mut g = self.template.clone();
        g.set_params(x);
        g
    }
}

impl Problem for EdProblem<'_> {
    fn num_params(&self) -> usize {
        self.template.nodes.len() * NODE_PARAMS
    }

    fn block_size(&self) -> usize {
        NODE_PARAMS
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.jacobian_impl(x, false).residuals
    }

    fn jacobian(&self, x: &[f64]) -> Jacobian {
        self.jacobian_impl(x, true)
    }

    /// Rejects steps that turn any node into a reflection.
    fn admissible(&self, x: &[f64]) -> bool {
        x.chunks_exact(NODE_PARAMS).all(|p| {
            p.iter().all(|v| v.is_finite())
                && Mat3::from_row_major(p[..9].try_into().unwrap()).det() > 0.0
        })
    }
}

impl EdProblem<'_> {
    fn jacobian_impl(&self, x: &[f64], with_entries: bool) -> Jacobian {
        let g = self.graph_at(x);
        let mut jac = Jacobian::new();
        let push = |jac: &mut Jacobian, r: f64, mut e: Vec<(usize, f64)>| {
            if with_entries {
                e.sort_unstable_by_key(|p| p.0);
                jac.push_row(r, e);
            } else {
                jac.push_row(r, core::iter::empty());
            }
        };

        let sr = libm::sqrt(self.weights.rot);
        for (j, n) in g.nodes.iter().enumerate() {
            let a = &n.a.0;
            let base = j * NODE_PARAMS;
            let terms = rot_terms(&n.a);
            let pairs = [(0, 1), (0, 2), (1, 2)];
            for (t, &(p, q)) in pairs.iter().enumerate() {
                let mut e = Vec::with_capacity(6);
                for r in 0..3 {
                    e.push((base + 3 * r + p, sr * a[r][q]));
                    e.push((base + 3 * r + q, sr * a[r][p]));
                }
                push(&mut jac, sr * terms[t], e);
            }
            for c in 0..3 {
                let e = (0..3).map(|r| (base + 3 * r + c, sr * 2.0 * a[r][c])).collect();
                push(&mut jac, sr * terms[3 + c], e);
            }
        }

        let sg = libm::sqrt(self.weights.reg);
        for i in 0..g.nodes.len() {
            for &j in &g.neighbors[i] {
                let e = reg_term(&g, i, j);
                let d = g.nodes[i].b - g.nodes[j].b;
                let (bi, bj) = (i * NODE_PARAMS, j * NODE_PARAMS);
                for r in 0..3 {
                    let mut ent = Vec::with_capacity(5);
                    for c in 0..3 {
                        ent.push((bj + 3 * r + c, sg * d.component(c)));
                    }
                    ent.push((bj + 9 + r, sg));
                    ent.push((bi + 9 + r, -sg));
                    push(&mut jac, sg * e.component(r), ent);
                }
            }
        }

        let sd = libm::sqrt(self.weights.data);
        for &vi in &self.data {
            let v = g.vertices[vi];
            let b = &g.bindings[vi];
            let s = self.field.sample(g.warp_with(v, b));
            let mut ent = Vec::with_capacity(b.nodes.len() * NODE_PARAMS);
            if with_entries {
                for (&j, &w) in b.nodes.iter().zip(&b.weights) {
                    let base = j * NODE_PARAMS;
                    let d = v - g.nodes[j].b;
                    for r in 0..3 {
                        let gr = s.gradient.component(r);
                        for c in 0..3 {
                            ent.push((base + 3 * r + c, sd * w * gr * d.component(c)));
                        }
                    }
                    for r in 0..3 {
                        ent.push((base + 9 + r, sd * w * s.gradient.component(r)));
                    }
                }
            }
            push(&mut jac, sd * s.value, ent);
        }
        jac
    }
}

/// Optimizes all node transforms with Levenberg-Marquardt, starting from the
/// graph's current parameters.
pub fn solve_lm(
    graph: &EdGraph,
    field: &DistanceField,
    data: Option<&[usize]>,
    weights: EnergyWeights,
    settings: &LmSettings,
) -> Result<(EdGraph, LmReport)> {
    settings.validate()?;
    let problem = EdProblem::new(graph, field, data, weights)?;
    let mut x = graph.params();
    let report = minimize(&problem, &mut x, settings);
    let mut out = graph.clone();
    out.set_params(&x);
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::numeric_gradient;
    use crate::primitives::{build_distance_field, discretize, MeshResolution, PrimitiveParams, VertexKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mat(rng: &mut ChaCha8Rng, spread: f64) -> Mat3 {
        let mut m = Mat3::IDENTITY;
        for r in 0..3 {
            for c in 0..3 {
                m.0[r][c] += rng.random_range(-spread..spread);
            }
        }
        m
    }

    fn random_point(rng: &mut ChaCha8Rng, s: f64) -> Point3 {
        Point3::new(
            rng.random_range(-s..s),
            rng.random_range(-s..s),
            rng.random_range(-s..s),
        )
    }

    fn randomize(g: &mut EdGraph, seed: u64, spread: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for n in &mut g.nodes {
            n.a = random_mat(&mut rng, spread);
            n.t = random_point(&mut rng, spread);
        }
    }

    fn cone_mesh() -> Vec<Point3> {
        let p = PrimitiveParams::Cone {
            base_radius: 6.0,
            a: -0.4,
            height: 10.0,
        };
        discretize(&p, MeshResolution::default()).unwrap().vertices
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random_point(&mut rng, 5.0)).collect()
    }

    #[test]
    fn eighty_node_cone_graph() {
        let g = build_graph(&cone_mesh(), 80, 4).unwrap();
        assert!((72..=88).contains(&g.len()), "{} nodes", g.len());
        for b in &g.bindings {
            assert_eq!(b.nodes.len(), 4);
            assert!((b.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(b.weights.iter().all(|w| *w >= 0.0));
        }
        for (i, list) in g.neighbors.iter().enumerate() {
            for &j in list {
                assert!(g.neighbors[j].contains(&i));
            }
        }
    }

    #[test]
    fn too_few_vertices_is_an_error() {
        assert!(build_graph(&cloud(20, 1), 40, 4).is_err());
        assert!(build_graph(&cloud(20, 1), 4, 4).is_err());
    }

    #[test]
    fn coincident_vertex_weighs_its_node_most() {
        let nodes = cloud(12, 2);
        let g = EdGraph::from_nodes(&nodes, &nodes, 4).unwrap();
        for (i, b) in g.bindings.iter().enumerate() {
            let own = b.nodes.iter().position(|&j| j == i).unwrap();
            let max = b.weights.iter().cloned().fold(0.0, f64::max);
            assert_eq!(b.weights[own], max);
        }
    }

    #[test]
    fn nodes_match_voxel_average_oracle() {
        let mut pts = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                for k in 0..12 {
                    pts.push(Point3::new(i as f64, j as f64, k as f64) * (10.0 / 11.0));
                }
            }
        }
        let g = build_graph(&pts, 64, 4).unwrap();
        let origin = bounds3(&pts).unwrap().0;
        let s = g.voxel;
        let mut cells: Vec<((i64, i64, i64), Point3, f64)> = Vec::new();
        for p in &pts {
            let key = (
                ((p.x - origin.x) / s).floor() as i64,
                ((p.y - origin.y) / s).floor() as i64,
                ((p.z - origin.z) / s).floor() as i64,
            );
            match cells.iter_mut().find(|c| c.0 == key) {
                Some(c) => {
                    c.1 = c.1 + *p;
                    c.2 += 1.0;
                }
                None => cells.push((key, *p, 1.0)),
            }
        }
        cells.sort_by_key(|c| c.0);
        assert_eq!(cells.len(), g.len());
        for (c, n) in cells.iter().zip(&g.nodes) {
            assert!((c.1 / c.2).distance(n.b) < 1e-9);
        }
    }

    #[test]
    fn identity_graph_is_identity_warp() {
        let v = cone_mesh();
        let g = build_graph(&v, 60, 4).unwrap();
        for (i, p) in v.iter().enumerate() {
            assert!(g.warp_vertex(i).unwrap().distance(*p) < 1e-12);
        }
        assert!(g.warp_vertex(v.len()).is_err());
    }

    #[test]
    fn single_node_is_rigid() {
        let b = Point3::new(1.0, 2.0, 3.0);
        let v = Point3::new(4.0, -1.0, 0.5);
        let mut g = EdGraph::from_nodes(&[b], &[v], 1).unwrap();
        let r = Mat3::from_axis_angle(Point3::new(1.0, 1.0, 0.0), 0.7);
        let t = Point3::new(0.5, 0.0, -2.0);
        g.nodes[0].a = r;
        g.nodes[0].t = t;
        let expect = r.mul_vec(v - b) + b + t;
        assert!(g.warp_vertex(0).unwrap().distance(expect) < 1e-12);
    }

    #[test]
    fn warp_matches_direct_sum() {
        let v = cone_mesh();
        let mut g = build_graph(&v, 40, 4).unwrap();
        randomize(&mut g, 3, 0.3);
        for (i, p) in v.iter().enumerate().step_by(7) {
            let b = &g.bindings[i];
            let mut s = [0.0; 3];
            for (idx, &j) in b.nodes.iter().enumerate() {
                let n = &g.nodes[j];
                let d = [p.x - n.b.x, p.y - n.b.y, p.z - n.b.z];
                let bt = [n.b.x + n.t.x, n.b.y + n.t.y, n.b.z + n.t.z];
                for r in 0..3 {
                    let ad = n.a.0[r][0] * d[0] + n.a.0[r][1] * d[1] + n.a.0[r][2] * d[2];
                    s[r] += b.weights[idx] * (ad + bt[r]);
                }
            }
            assert!(g.warp_vertex(i).unwrap().distance(Point3::from_array(s)) < 1e-12);
        }
    }

    #[test]
    fn rotation_energy_cases() {
        let pts = cloud(10, 4);
        let mut g = EdGraph::from_nodes(&pts, &pts, 4).unwrap();
        assert_eq!(energy_rot(&g), 0.0);
        g.nodes[3].a = Mat3([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]);
        assert!((energy_rot(&g) - 27.0).abs() < 1e-12);
        g.nodes[3].a = Mat3::from_axis_angle(Point3::new(0.3, -1.0, 2.0), 1.1);
        assert!(energy_rot(&g) < 1e-24);
        randomize(&mut g, 5, 0.5);
        let mut expect = 0.0;
        for n in &g.nodes {
            let a = n.a.0;
            let c = |j: usize| [a[0][j], a[1][j], a[2][j]];
            let dot = |p: [f64; 3], q: [f64; 3]| p[0] * q[0] + p[1] * q[1] + p[2] * q[2];
            let (c1, c2, c3) = (c(0), c(1), c(2));
            expect += dot(c1, c2).powi(2) + dot(c1, c3).powi(2) + dot(c2, c3).powi(2);
            expect += (dot(c1, c1) - 1.0).powi(2) + (dot(c2, c2) - 1.0).powi(2) + (dot(c3, c3) - 1.0).powi(2);
        }
        assert!((energy_rot(&g) - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn shear_is_penalized() {
        let pts = cloud(10, 6);
        let mut g = EdGraph::from_nodes(&pts, &pts, 4).unwrap();
        g.nodes[0].a = Mat3([[1.0, 0.2, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(energy_rot(&g) > 0.0);
    }

    #[test]
    fn regularization_cases() {
        let pts = cloud(15, 7);
        let mut g = EdGraph::from_nodes(&pts, &pts, 4).unwrap();
        assert!(energy_reg(&g) < 1e-24);
        for n in &mut g.nodes {
            n.t = Point3::new(1.5, -2.0, 0.25);
        }
        assert!(energy_reg(&g) < 1e-24);
        randomize(&mut g, 8, 0.4);
        let mut expect = 0.0;
        for i in 0..g.len() {
            for &j in &g.neighbors[i] {
                let (ni, nj) = (g.nodes[i], g.nodes[j]);
                for r in 0..3 {
                    let mut v = nj.b.component(r) + nj.t.component(r) - ni.b.component(r) - ni.t.component(r);
                    for c in 0..3 {
                        v += nj.a.0[r][c] * (ni.b.component(c) - nj.b.component(c));
                    }
                    expect += v * v;
                }
            }
        }
        assert!((energy_reg(&g) - expect).abs() < 1e-12 * expect.max(1.0));
    }

    #[test]
    fn data_energy_cases() {
        let pts = cloud(200, 9);
        let f = build_distance_field(&pts, 0.25, 2.0).unwrap();
        let g = EdGraph::from_nodes(&pts[..20], &pts, 4).unwrap();
        let e = energy_data(&g, &f, None);
        assert!(e / (pts.len() as f64) < (0.25f64 * 3f64.sqrt()).powi(2));

        let single = [Point3::ZERO];
        let f1 = build_distance_field(&single, 0.1, 4.0).unwrap();
        let model: Vec<Point3> = (0..12)
            .map(|i| Point3::new(1.0, 0.0, 0.0) + Point3::new(0.0, 0.0, 0.0) * i as f64)
            .collect();
        let g1 = EdGraph::from_nodes(&model[..1], &model, 1).unwrap();
        let e1 = energy_data(&g1, &f1, None);
        assert!((e1 - 12.0).abs() < 12.0 * 0.02, "{e1}");

        let mut g2 = EdGraph::from_nodes(&pts[..20], &pts, 4).unwrap();
        randomize(&mut g2, 10, 0.2);
        let naive: f64 = (0..pts.len())
            .map(|i| {
                let b = &g2.bindings[i];
                let mut w = Point3::ZERO;
                for (idx, &j) in b.nodes.iter().enumerate() {
                    let n = &g2.nodes[j];
                    w = w + (n.a.mul_vec(pts[i] - n.b) + n.b + n.t) * b.weights[idx];
                }
                f.sample(w).value.powi(2)
            })
            .sum();
        assert!((energy_data(&g2, &f, None) - naive).abs() < 1e-9 * naive.max(1.0));
    }

    #[test]
    fn cost_matches_weighted_energies_and_gradient() {
        let pts = cloud(120, 11);
        let f = build_distance_field(&pts, 0.5, 2.0).unwrap();
        let model: Vec<Point3> = cloud(60, 12).iter().map(|p| *p * 0.9).collect();
        let mut g = EdGraph::from_nodes(&model[..10], &model, 4).unwrap();
        randomize(&mut g, 13, 0.1);
        let w = EnergyWeights::default();
        let p = EdProblem::new(&g, &f, None, w).unwrap();
        let x = g.params();
        let total = total_energy(&g, &f, None, &w);
        assert!((p.cost(&x) - total).abs() < 1e-9 * total);
        let analytic = p.jacobian(&x).gradient(x.len());
        let numeric = numeric_gradient(&p, &x, 1e-5);
        for (a, n) in analytic.iter().zip(&numeric) {
            assert!((a - n).abs() <= 1e-3 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
        }
    }

    #[test]
    fn matching_model_converges_immediately() {
        let mesh = discretize(
            &PrimitiveParams::Cylinder {
                radius: 3.0,
                height: 6.0,
            },
            MeshResolution::new(24, 12),
        )
        .unwrap();
        let f = build_distance_field(&mesh.vertices, 0.25, 2.0).unwrap();
        let g = build_graph(&mesh.vertices, 30, 4).unwrap();
        let (out, report) =
            solve_lm(&g, &f, None, EnergyWeights::default(), &LmSettings::default()).unwrap();
        assert!(report.iterations <= 2, "{report:?}");
        for n in &out.nodes {
            assert!(n.a.max_abs_diff(&Mat3::IDENTITY) < 1e-2);
            assert!(n.t.norm() < 1e-2);
        }
    }

    fn mean_distance(cloud: &[Point3], model: &[Point3]) -> f64 {
        let tree = KdTree::from_slice(model);
        cloud
            .iter()
            .map(|p| tree.nearest(*p).unwrap().distance())
            .sum::<f64>()
            / cloud.len() as f64
    }

    #[test]
    fn bent_cylinder_is_followed() {
        let cyl = PrimitiveParams::Cylinder {
            radius: 3.0,
            height: 12.0,
        };
        let fine = discretize(&cyl, MeshResolution::new(64, 48)).unwrap();
        let bend = |p: Point3| Point3::new(p.x + 0.02 * p.z * p.z, p.y, p.z);
        let obs: Vec<Point3> = fine
            .select(&[VertexKind::Side, VertexKind::TopCap])
            .iter()
            .map(|&i| bend(fine.vertices[i]))
            .collect();
        let f = build_distance_field(&obs, 0.5, 2.0).unwrap();
        let model = discretize(&cyl, MeshResolution::new(40, 20)).unwrap();
        let g = build_graph(&model.vertices, 60, 4).unwrap();
        let data = model.select(&[VertexKind::Side, VertexKind::TopCap]);
        let before = mean_distance(&obs, &model.vertices);
        let (out, report) = solve_lm(
            &g,
            &f,
            Some(&data),
            EnergyWeights::default(),
            &LmSettings::default(),
        )
        .unwrap();
        let after = mean_distance(&obs, &out.warped_vertices());
        assert!(after < 0.5 * before, "before {before} after {after}");
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
        assert!(out.nodes.iter().all(|n| n.a.det() > 0.0));
    }

    #[test]
    fn reflections_are_inadmissible() {
        let pts = cloud(20, 14);
        let f = build_distance_field(&pts, 0.5, 1.0).unwrap();
        let g = EdGraph::from_nodes(&pts[..8], &pts, 4).unwrap();
        let p = EdProblem::new(&g, &f, None, EnergyWeights::default()).unwrap();
        let mut x = g.params();
        assert!(p.admissible(&x));
        x[0] = -1.0;
        assert!(!p.admissible(&x));
    }

    #[test]
    fn solve_is_deterministic() {
        let pts = cloud(150, 15);
        let f = build_distance_field(&pts, 0.5, 2.0).unwrap();
        let model: Vec<Point3> = pts.iter().map(|p| *p * 0.95).collect();
        let g = build_graph(&model, 12, 4).unwrap();
        let s = LmSettings {
            max_iter: 5,
            ..LmSettings::default()
        };
        let a = solve_lm(&g, &f, None, EnergyWeights::default(), &s).unwrap();
        let b = solve_lm(&g, &f, None, EnergyWeights::default(), &s).unwrap();
        assert_eq!(a.0.params(), b.0.params());
    }
}
