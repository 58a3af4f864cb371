//! Canonical primitives, their triangulation, the volumetric distance field
//! and the rigid fit of a primitive against it.
//!
//! Every primitive lives in a canonical frame with +z up and its base at
//! `z = 0`; revolve surfaces are centred on the z axis. A [`PosedPrimitive`]
//! places it in the world with `x ↦ R·x + T`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::geometry::{
    bounds3, douglas_peucker_closed, point_in_polygon, resample_closed, signed_area, AffinePose2,
    Mat3, Point2, Point3, PointCloud, Polygon,
};
use crate::kdtree::KdTree;
use crate::lm::{cholesky_solve, minimize, Jacobian, LmReport, LmSettings, Problem};
use crate::procrustes::{solve_mpa, Correspondence};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PrimitiveKind {
    Cone,
    Hemisphere,
    Cylinder,
    Polyhedron,
}

impl PrimitiveKind {
    /// Kinds tried by [`select_primitive`], in tie-break order.
    pub const SIMPLE: [PrimitiveKind; 3] = [
        PrimitiveKind::Cone,
        PrimitiveKind::Hemisphere,
        PrimitiveKind::Cylinder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Cone => "cone",
            PrimitiveKind::Hemisphere => "hemisphere",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Polyhedron => "polyhedron",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "cone" => Some(PrimitiveKind::Cone),
            "hemisphere" => Some(PrimitiveKind::Hemisphere),
            "cylinder" => Some(PrimitiveKind::Cylinder),
            "polyhedron" => Some(PrimitiveKind::Polyhedron),
            _ => None,
        }
    }

    pub fn is_round(self) -> bool {
        self != PrimitiveKind::Polyhedron
    }
}

/// Canonical primitive parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveParams {
    /// Zone of a sphere centred on the z axis at height `center_z`, clipped
    /// to `0 ≤ z ≤ height`. `center_z = 0, height = radius` is the plain
    /// hemisphere; other values cover domes on drums and spheres sandwiched
    /// between other units.
    Hemisphere {
        radius: f64,
        center_z: f64,
        height: f64,
    },
    /// Facade `z = a(x² + y²) + b` with `b = −a·base_radius²`, so the base
    /// circle sits at `z = 0`; clipped at `height`. `a < 0` tapers upward.
    Cone { base_radius: f64, a: f64, height: f64 },
    Cylinder { radius: f64, height: f64 },
    /// Prism between two equally long counter-clockwise chains at `z = 0`
    /// and `z = height`.
    Polyhedron {
        bottom: Vec<Point2>,
        top: Vec<Point2>,
        height: f64,
    },
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive, got {v}")))
    }
}

const SLACK: f64 = 1e-9;

impl PrimitiveParams {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            PrimitiveParams::Hemisphere { .. } => PrimitiveKind::Hemisphere,
            PrimitiveParams::Cone { .. } => PrimitiveKind::Cone,
            PrimitiveParams::Cylinder { .. } => PrimitiveKind::Cylinder,
            PrimitiveParams::Polyhedron { .. } => PrimitiveKind::Polyhedron,
        }
    }

    pub fn height(&self) -> f64 {
        match self {
            PrimitiveParams::Hemisphere { height, .. }
            | PrimitiveParams::Cone { height, .. }
            | PrimitiveParams::Cylinder { height, .. }
            | PrimitiveParams::Polyhedron { height, .. } => *height,
        }
    }

    /// `b` of the cone facade equation.
    pub fn cone_b(&self) -> Option<f64> {
        match self {
            PrimitiveParams::Cone { base_radius, a, .. } => Some(-a * base_radius * base_radius),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PrimitiveParams::Hemisphere {
                radius,
                center_z,
                height,
            } => {
                positive("radius", *radius)?;
                positive("height", *height)?;
                if !center_z.is_finite() {
                    return Err(Error::invalid("sphere centre must be finite"));
                }
                let tol = SLACK * radius.max(1.0);
                if center_z - radius > tol || center_z + radius < height - tol {
                    return Err(Error::invalid(format!(
                        "sphere (r {radius}, centre {center_z}) does not span 0..{height}"
                    )));
                }
            }
            PrimitiveParams::Cone {
                base_radius,
                a,
                height,
            } => {
                positive("base radius", *base_radius)?;
                positive("height", *height)?;
                if !(a.is_finite() && *a != 0.0) {
                    return Err(Error::invalid("cone coefficient a must be finite and non-zero"));
                }
                let top_sq = base_radius * base_radius + height / a;
                if top_sq < -SLACK * base_radius * base_radius {
                    return Err(Error::invalid("cone apex lies below its height"));
                }
            }
            PrimitiveParams::Cylinder { radius, height } => {
                positive("radius", *radius)?;
                positive("height", *height)?;
            }
            PrimitiveParams::Polyhedron {
                bottom,
                top,
                height,
            } => {
                positive("height", *height)?;
                if bottom.len() != top.len() {
                    return Err(Error::invalid("polyhedron chains differ in length"));
                }
                for chain in [bottom, top] {
                    let p = Polygon::new(chain.clone(), 0.0)?;
                    if !p.is_ccw() {
                        return Err(Error::invalid("polyhedron chains must be counter-clockwise"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Radius of a revolve surface at canonical height `z`.
    pub fn radius_at(&self, z: f64) -> Option<f64> {
        match self {
            PrimitiveParams::Hemisphere {
                radius, center_z, ..
            } => Some(libm::sqrt((radius * radius - (z - center_z) * (z - center_z)).max(0.0))),
            PrimitiveParams::Cone { base_radius, a, .. } => {
                Some(libm::sqrt((base_radius * base_radius + z / a).max(0.0)))
            }
            PrimitiveParams::Cylinder { radius, .. } => Some(*radius),
            PrimitiveParams::Polyhedron { .. } => None,
        }
    }

    /// The same revolve surface continued `dz` further down, so the base
    /// moves to canonical `z = −dz`. `None` for polyhedra and for cones that
    /// close before reaching the new base.
    pub fn extended_down(&self, dz: f64) -> Option<Self> {
        if !(dz >= 0.0) {
            return None;
        }
        let p = match self {
            PrimitiveParams::Hemisphere {
                radius,
                center_z,
                height,
            } => PrimitiveParams::Hemisphere {
                radius: *radius,
                center_z: center_z + dz,
                height: height + dz,
            },
            PrimitiveParams::Cone { base_radius, a, height } => {
                let q = base_radius * base_radius - dz / a;
                if !(q > 0.0) {
                    return None;
                }
                PrimitiveParams::Cone {
                    base_radius: libm::sqrt(q),
                    a: *a,
                    height: height + dz,
                }
            }
            PrimitiveParams::Cylinder { radius, height } => PrimitiveParams::Cylinder {
                radius: *radius,
                height: height + dz,
            },
            PrimitiveParams::Polyhedron { .. } => return None,
        };
        p.validate().ok().map(|_| p)
    }

    /// The same revolve surface continued `dz` further up.
    pub fn extended_up(&self, dz: f64) -> Option<Self> {
        if !(dz >= 0.0) {
            return None;
        }
        let mut p = self.clone();
        match &mut p {
            PrimitiveParams::Hemisphere { height, .. }
            | PrimitiveParams::Cone { height, .. }
            | PrimitiveParams::Cylinder { height, .. } => *height += dz,
            PrimitiveParams::Polyhedron { .. } => return None,
        }
        p.validate().ok().map(|_| p)
    }

    /// Side profile `(radius, z)` from bottom to top with `levels + 1`
    /// samples. Spheres are sampled uniformly in latitude.
    fn side_profile(&self, levels: usize) -> Vec<(f64, f64)> {
        let h = self.height();
        (0..=levels)
            .map(|k| {
                let t = k as f64 / levels as f64;
                match self {
                    PrimitiveParams::Hemisphere {
                        radius, center_z, ..
                    } => {
                        let lat = |z: f64| libm::asin(((z - center_z) / radius).clamp(-1.0, 1.0));
                        let (p0, p1) = (lat(0.0), lat(h));
                        let phi = p0 + (p1 - p0) * t;
                        let z = if k == 0 {
                            0.0
                        } else if k == levels {
                            h
                        } else {
                            center_z + radius * libm::sin(phi)
                        };
                        (radius * libm::cos(phi).max(0.0), z)
                    }
                    _ => {
                        let z = h * t;
                        (self.radius_at(z).unwrap_or(0.0), z)
                    }
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeshResolution {
    /// Vertices around a revolve surface.
    pub segments: usize,
    /// Vertical subdivisions of the side wall.
    pub levels: usize,
}

impl Default for MeshResolution {
    fn default() -> Self {
        Self {
            segments: 40,
            levels: 20,
        }
    }
}

impl MeshResolution {
    pub const fn new(segments: usize, levels: usize) -> Self {
        Self { segments, levels }
    }

    /// Concentric rings on each cap of a revolve surface.
    pub fn cap_rings(&self) -> usize {
        (self.levels / 4).max(1)
    }

    fn validate(&self) -> Result<()> {
        if self.segments < 3 || self.levels < 1 {
            return Err(Error::invalid(format!(
                "mesh resolution {}x{} too coarse",
                self.segments, self.levels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Side,
    TopCap,
    BottomCap,
}

/// Indexed triangle mesh with outward (counter-clockwise) faces.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mesh {
    pub vertices: Vec<Point3>,
    pub faces: Vec<[usize; 3]>,
    pub kinds: Vec<VertexKind>,
}

impl Mesh {
    pub fn transformed(&self, rotation: &Mat3, translation: Point3) -> Mesh {
        Mesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| rotation.mul_vec(*v) + translation)
                .collect(),
            faces: self.faces.clone(),
            kinds: self.kinds.clone(),
        }
    }

    pub fn triangle(&self, f: usize) -> [Point3; 3] {
        self.faces[f].map(|i| self.vertices[i])
    }

    /// Every undirected edge is used by exactly two faces, once in each
    /// direction.
    pub fn is_watertight(&self) -> bool {
        let mut directed = alloc::collections::BTreeMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_insert(0usize) += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| {
                let [a, b, c] = self.triangle(f);
                0.5 * (b - a).cross(c - a).norm()
            })
            .sum()
    }

    /// Indices of vertices of the given kinds.
    pub fn select(&self, kinds: &[VertexKind]) -> Vec<usize> {
        (0..self.vertices.len())
            .filter(|&i| kinds.contains(&self.kinds[i]))
            .collect()
    }

    /// Deterministic surface samples: each triangle gets the barycentric
    /// lattice with the smallest power-of-two subdivision whose spacing
    /// reaches `1/√density`. Lattices at higher density contain the lower
    /// ones, so denser sampling never moves a sample away.
    pub fn sample_surface(&self, density: f64) -> PointCloud {
        let spacing = 1.0 / libm::sqrt(density.max(1e-12));
        let mut out = Vec::new();
        for f in 0..self.faces.len() {
            let [a, b, c] = self.triangle(f);
            let longest = a.distance(b).max(b.distance(c)).max(c.distance(a));
            let mut l = 1usize;
            while (longest / l as f64) > spacing && l < (1 << 12) {
                l *= 2;
            }
            for i in 0..=l {
                for j in 0..=l - i {
                    let (u, v) = (i as f64 / l as f64, j as f64 / l as f64);
                    out.push(a + (b - a) * u + (c - a) * v);
                }
            }
        }
        out
    }
}

enum Ring {
    Loop(usize),
}

/// Joins consecutive vertex loops of `m` vertices into quads (two
/// triangles each), lower loop first.
fn stitch(faces: &mut Vec<[usize; 3]>, rings: &[Ring], m: usize) {
    for w in rings.windows(2) {
        let (Ring::Loop(a), Ring::Loop(b)) = (&w[0], &w[1]);
        for j in 0..m {
            let j1 = (j + 1) % m;
            faces.push([a + j, a + j1, b + j1]);
            faces.push([a + j, b + j1, b + j]);
        }
    }
}

/// Triangulates the canonical primitive.
///
/// Revolve surfaces are one closed tube: bottom centre, bottom cap rings,
/// `levels + 1` side rings, top cap rings, top centre. The layout depends
/// only on the kind and resolution; rings that collapse to a pole simply
/// produce zero-area triangles. Polyhedra are prisms with ear-clipped caps.
pub fn discretize(p: &PrimitiveParams, res: MeshResolution) -> Result<Mesh> {
    p.validate()?;
    res.validate()?;
    let mut mesh = Mesh::default();
    match p {
        PrimitiveParams::Polyhedron {
            bottom,
            top,
            height,
        } => {
            let m = bottom.len();
            let mut rings = Vec::new();
            for k in 0..=res.levels {
                let t = k as f64 / res.levels as f64;
                rings.push(Ring::Loop(mesh.vertices.len()));
                for (b, u) in bottom.iter().zip(top) {
                    mesh.vertices.push(b.lerp(*u, t).extend(height * t));
                    mesh.kinds.push(VertexKind::Side);
                }
            }
            stitch(&mut mesh.faces, &rings, m);
            let top_start = res.levels * m;
            for [a, b, c] in ear_clip(bottom)? {
                mesh.faces.push([a, c, b]);
            }
            for [a, b, c] in ear_clip(top)? {
                mesh.faces.push([top_start + a, top_start + b, top_start + c]);
            }
        }
        _ => {
            let m = res.segments;
            let side = p.side_profile(res.levels);
            let cr = res.cap_rings();
            let (r0, rh) = (side[0].0, side[res.levels].0);
            let h = p.height();
            let mut profile: Vec<(f64, f64, VertexKind)> = Vec::new();
            for k in 1..cr {
                profile.push((r0 * k as f64 / cr as f64, 0.0, VertexKind::BottomCap));
            }
            profile.extend(side.iter().map(|&(r, z)| (r, z, VertexKind::Side)));
            for k in (1..cr).rev() {
                profile.push((rh * k as f64 / cr as f64, h, VertexKind::TopCap));
            }
            let mut rings = Vec::new();
            for (r, z, kind) in &profile {
                rings.push(Ring::Loop(mesh.vertices.len()));
                for j in 0..m {
                    let phi = 2.0 * PI * j as f64 / m as f64;
                    mesh.vertices.push(Point3::new(r * libm::cos(phi), r * libm::sin(phi), *z));
                    mesh.kinds.push(*kind);
                }
            }
            stitch(&mut mesh.faces, &rings, m);
            let bottom_centre = mesh.vertices.len();
            mesh.vertices.push(Point3::ZERO);
            mesh.kinds.push(VertexKind::BottomCap);
            let top_centre = mesh.vertices.len();
            mesh.vertices.push(Point3::new(0.0, 0.0, h));
            mesh.kinds.push(VertexKind::TopCap);
            let first = 0;
            let last = (profile.len() - 1) * m;
            for j in 0..m {
                let j1 = (j + 1) % m;
                mesh.faces.push([bottom_centre, first + j1, first + j]);
                mesh.faces.push([last + j, last + j1, top_centre]);
            }
        }
    }
    Ok(mesh)
}

/// Ear clipping of a simple counter-clockwise polygon.
pub fn ear_clip(poly: &[Point2]) -> Result<Vec<[usize; 3]>> {
    let n = poly.len();
    if n < 3 {
        return Err(Error::invalid("cannot triangulate fewer than three vertices"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n - 2);
    let mut guard = 0;
    while idx.len() > 3 {
        let m = idx.len();
        let mut clipped = false;
        for i in 0..m {
            let (a, b, c) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
            let (pa, pb, pc) = (poly[a], poly[b], poly[c]);
            if (pb - pa).cross(pc - pb) <= 0.0 {
                continue;
            }
            let tri = Polygon::raw(vec![pa, pb, pc], 0.0);
            let blocked = idx
                .iter()
                .any(|&k| k != a && k != b && k != c && point_in_polygon(poly[k], &tri));
            if blocked {
                continue;
            }
            out.push([a, b, c]);
            idx.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            guard += 1;
            // collinear leftovers: drop the flattest vertex
            let m = idx.len();
            let i = (0..m)
                .min_by(|&i, &j| {
                    let f = |i: usize| {
                        let (a, b, c) = (idx[(i + m - 1) % m], idx[i], idx[(i + 1) % m]);
                        libm::fabs((poly[b] - poly[a]).cross(poly[c] - poly[b]))
                    };
                    f(i).total_cmp(&f(j))
                })
                .unwrap();
            idx.remove(i);
            if guard > n {
                return Err(Error::degenerate("polygon cannot be triangulated"));
            }
        }
    }
    out.push([idx[0], idx[1], idx[2]]);
    Ok(out)
}

/// A canonical primitive placed in the world by `x ↦ R·x + T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosedPrimitive {
    pub params: PrimitiveParams,
    pub rotation: Mat3,
    pub translation: Point3,
}

impl PosedPrimitive {
    pub fn new(params: PrimitiveParams, rotation: Mat3, translation: Point3) -> Result<Self> {
        params.validate()?;
        if !rotation.is_rotation(1e-9) {
            return Err(Error::invalid("pose rotation is not a proper rotation"));
        }
        if !translation.is_finite() {
            return Err(Error::invalid("pose translation must be finite"));
        }
        Ok(Self {
            params,
            rotation,
            translation,
        })
    }

    pub fn kind(&self) -> PrimitiveKind {
        self.params.kind()
    }

    pub fn mesh(&self, res: MeshResolution) -> Result<Mesh> {
        Ok(discretize(&self.params, res)?.transformed(&self.rotation, self.translation))
    }

    /// See [`PrimitiveParams::extended_down`]; the world surface above the
    /// old base is unchanged.
    pub fn extended_down(&self, dz: f64) -> Option<Self> {
        let params = self.params.extended_down(dz)?;
        let translation = self.translation - self.rotation.mul_vec(Point3::new(0.0, 0.0, dz));
        Some(Self {
            params,
            rotation: self.rotation,
            translation,
        })
    }
}

/// Unsigned distance to the nearest input point, sampled at voxel centres.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceField {
    /// Centre of voxel `(0, 0, 0)`.
    pub origin: Point3,
    pub voxel: f64,
    pub dims: [usize; 3],
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub value: f64,
    pub gradient: Point3,
    /// The query lay outside the grid; the value was extended by the
    /// distance to the grid box.
    pub clamped: bool,
}

/// Exact nearest-point distances on a grid covering the cloud's bounding
/// box grown by `pad` on every side.
pub fn build_distance_field(pc: &[Point3], voxel: f64, pad: f64) -> Result<DistanceField> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::invalid("voxel size must be positive"));
    }
    if !(pad >= 0.0) {
        return Err(Error::invalid("padding must be non-negative"));
    }
    let (lo, hi) = bounds3(pc).ok_or_else(|| Error::empty("point cloud is empty"))?;
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid("point cloud has non-finite coordinates"));
    }
    let origin = lo - Point3::new(pad, pad, pad);
    let ext = hi - lo;
    let dim = |e: f64| (libm::ceil((e + 2.0 * pad) / voxel - 1e-9) as usize + 1).max(2);
    let dims = [dim(ext.x), dim(ext.y), dim(ext.z)];
    let tree = KdTree::from_slice(pc);
    let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let c = origin + Point3::new(i as f64, j as f64, k as f64) * voxel;
                values.push(tree.nearest(c).expect("non-empty tree").distance());
            }
        }
    }
    Ok(DistanceField {
        origin,
        voxel,
        dims,
        values,
    })
}

impl DistanceField {
    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(k * self.dims[1] + j) * self.dims[0] + i]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3 {
        self.origin + Point3::new(i as f64, j as f64, k as f64) * self.voxel
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Upper corner of the sampled box (last voxel centre).
    pub fn max_corner(&self) -> Point3 {
        self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    /// Trilinear interpolation with the exact gradient of the interpolant.
    /// Queries outside the grid are clamped to it and the straight-line
    /// distance to the box is added.
    pub fn sample(&self, q: Point3) -> FieldSample {
        let hi = self.max_corner();
        let clampq = Point3::new(
            q.x.clamp(self.origin.x, hi.x),
            q.y.clamp(self.origin.y, hi.y),
            q.z.clamp(self.origin.z, hi.z),
        );
        let u = (clampq - self.origin) / self.voxel;
        let cell = |u: f64, d: usize| {
            let i = (libm::floor(u) as usize).min(d - 2);
            (i, (u - i as f64).clamp(0.0, 1.0))
        };
        let (i, fx) = cell(u.x, self.dims[0]);
        let (j, fy) = cell(u.y, self.dims[1]);
        let (k, fz) = cell(u.z, self.dims[2]);
        let c = |di: usize, dj: usize, dk: usize| self.value_at(i + di, j + dj, k + dk);
        let (c000, c100, c010, c110) = (c(0, 0, 0), c(1, 0, 0), c(0, 1, 0), c(1, 1, 0));
        let (c001, c101, c011, c111) = (c(0, 0, 1), c(1, 0, 1), c(0, 1, 1), c(1, 1, 1));
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let x00 = lerp(c000, c100, fx);
        let x10 = lerp(c010, c110, fx);
        let x01 = lerp(c001, c101, fx);
        let x11 = lerp(c011, c111, fx);
        let y0 = lerp(x00, x10, fy);
        let y1 = lerp(x01, x11, fy);
        let value = lerp(y0, y1, fz);
        let dx = lerp(
            lerp(c100 - c000, c110 - c010, fy),
            lerp(c101 - c001, c111 - c011, fy),
            fz,
        );
        let dy = lerp(lerp(x10 - x00, 0.0, 0.0), x11 - x01, fz);
        let dz = y1 - y0;
        let mut gradient = Point3::new(dx, dy, dz) / self.voxel;
        let out = q - clampq;
        let clamped = out.norm_sq() > 0.0;
        let mut value = value;
        if clamped {
            let d = out.norm();
            value += d;
            let axis = [out.x != 0.0, out.y != 0.0, out.z != 0.0];
            gradient = Point3::new(
                if axis[0] { 0.0 } else { gradient.x },
                if axis[1] { 0.0 } else { gradient.y },
                if axis[2] { 0.0 } else { gradient.z },
            ) + out / d;
        }
        FieldSample {
            value,
            gradient,
            clamped,
        }
    }
}

/// Mean distance from each point to its nearest other point.
pub fn mean_spacing(pc: &[Point3]) -> Option<f64> {
    if pc.len() < 2 {
        return None;
    }
    let tree = KdTree::from_slice(pc);
    let total: f64 = pc
        .iter()
        .enumerate()
        .map(|(i, p)| {
            tree.k_nearest(*p, 2)
                .iter()
                .find(|n| n.index != i)
                .map(|n| n.distance())
                .unwrap_or(0.0)
        })
        .sum();
    Some(total / pc.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    /// Mesh resolution whose vertices are pushed into the field.
    pub res: MeshResolution,
    pub lm: LmSettings,
    /// Whether the top cap was observed (topmost unit of a building).
    pub top_observed: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            res: MeshResolution::new(32, 16),
            lm: LmSettings {
                max_iter: 60,
                ..LmSettings::default()
            },
            top_observed: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub primitive: PosedPrimitive,
    /// Root-mean-square field value over the fitted vertices, metres.
    pub rms: f64,
    pub converged: bool,
    pub report: LmReport,
}

/// Shape parameters handed to the optimiser. Cones use `β = 1/a` (the
/// slope of r² in z), which stays finite for near-vertical walls.
fn shape_vector(p: &PrimitiveParams) -> Vec<f64> {
    match p {
        PrimitiveParams::Hemisphere {
            radius, center_z, ..
        } => vec![*radius, *center_z],
        PrimitiveParams::Cone { base_radius, a, .. } => vec![*base_radius, 1.0 / a],
        PrimitiveParams::Cylinder { radius, .. } => vec![*radius],
        PrimitiveParams::Polyhedron { .. } => Vec::new(),
    }
}

fn params_from(kind: PrimitiveKind, s: &[f64], height: f64) -> PrimitiveParams {
    match kind {
        PrimitiveKind::Hemisphere => PrimitiveParams::Hemisphere {
            radius: s[0],
            center_z: s[1],
            height,
        },
        PrimitiveKind::Cone => PrimitiveParams::Cone {
            base_radius: s[0],
            a: 1.0 / s[1],
            height,
        },
        PrimitiveKind::Cylinder => PrimitiveParams::Cylinder {
            radius: s[0],
            height,
        },
        PrimitiveKind::Polyhedron => unreachable!("polyhedra are not fitted"),
    }
}

struct FitProblem<'a> {
    kind: PrimitiveKind,
    field: &'a DistanceField,
    res: MeshResolution,
    height: f64,
    z0: f64,
    samples: Vec<usize>,
}

const POSE_PARAMS: usize = 3;

impl FitProblem<'_> {
    fn canonical(&self, shape: &[f64]) -> Option<Vec<Point3>> {
        let p = params_from(self.kind, shape, self.height);
        let mesh = discretize(&p, self.res).ok()?;
        Some(self.samples.iter().map(|&i| mesh.vertices[i]).collect())
    }

    fn pose(&self, x: &[f64]) -> (Mat3, Point3) {
        (Mat3::rot_z(x[2]), Point3::new(x[0], x[1], self.z0))
    }
}

impl Problem for FitProblem<'_> {
    fn num_params(&self) -> usize {
        POSE_PARAMS + shape_vector(&params_from(self.kind, &[1.0, 1.0], 1.0)).len()
    }

    fn residuals(&self, x: &[f64]) -> Vec<f64> {
        let Some(v) = self.canonical(&x[POSE_PARAMS..]) else {
            return vec![f64::INFINITY; self.samples.len()];
        };
        let (r, t) = self.pose(x);
        v.iter()
            .map(|p| self.field.sample(r.mul_vec(*p) + t).value)
            .collect()
    }

    fn admissible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite())
            && params_from(self.kind, &x[POSE_PARAMS..], self.height)
                .validate()
                .is_ok()
    }

    fn jacobian(&self, x: &[f64]) -> Jacobian {
        let shape = &x[POSE_PARAMS..];
        let base = self.canonical(shape).expect("admissible point");
        let (r, t) = self.pose(x);
        let (sy, cy) = (libm::sin(x[2]), libm::cos(x[2]));
        // vertex derivatives per shape parameter, by central differences
        let mut dshape: Vec<Vec<Point3>> = Vec::new();
        for i in 0..shape.len() {
            let h = 1e-6 * shape[i].abs().max(1.0);
            let mut sp = shape.to_vec();
            let mut sm = shape.to_vec();
            sp[i] += h;
            sm[i] -= h;
            let d = match (self.canonical(&sp), self.canonical(&sm)) {
                (Some(a), Some(b)) => a.iter().zip(&b).map(|(p, q)| (*p - *q) / (2.0 * h)).collect(),
                (Some(a), None) => a.iter().zip(&base).map(|(p, q)| (*p - *q) / h).collect(),
                (None, Some(b)) => base.iter().zip(&b).map(|(p, q)| (*p - *q) / h).collect(),
                (None, None) => vec![Point3::ZERO; base.len()],
            };
            dshape.push(d);
        }
        let mut jac = Jacobian::new();
        for (vi, v) in base.iter().enumerate() {
            let s = self.field.sample(r.mul_vec(*v) + t);
            let g = s.gradient;
            let dyaw = Point3::new(-sy * v.x - cy * v.y, cy * v.x - sy * v.y, 0.0);
            let mut row = vec![(0, g.x), (1, g.y), (2, g.dot(dyaw))];
            for (i, d) in dshape.iter().enumerate() {
                row.push((POSE_PARAMS + i, g.dot(r.mul_vec(d[vi]))));
            }
            jac.push_row(s.value, row);
        }
        jac
    }
}

/// Axis and radius statistics used to seed a revolve fit.
struct AxisStats {
    center: Point2,
    /// `(height above band bottom, radial distance)` per point.
    samples: Vec<(f64, f64)>,
}

fn axis_stats(pc: &[Point3], z0: f64) -> AxisStats {
    // x²+y² = 2ax + 2by + c0 + c1 z + c2 z²: a circle whose radius varies
    // quadratically with height
    let mut ata = vec![0.0; 25];
    let mut atb = vec![0.0; 5];
    for p in pc {
        let z = p.z - z0;
        let row = [2.0 * p.x, 2.0 * p.y, 1.0, z, z * z];
        let rhs = p.x * p.x + p.y * p.y;
        for i in 0..5 {
            atb[i] += row[i] * rhs;
            for j in 0..5 {
                ata[i * 5 + j] += row[i] * row[j];
            }
        }
    }
    let mean = pc.iter().fold(Point2::ZERO, |a, p| a + p.xy()) / pc.len() as f64;
    let center = cholesky_solve(&mut ata, 5, &atb)
        .map(|s| Point2::new(s[0], s[1]))
        .filter(|c| c.is_finite())
        .unwrap_or(mean);
    AxisStats {
        center,
        samples: pc
            .iter()
            .map(|p| (p.z - z0, p.xy().distance(center)))
            .collect(),
    }
}

/// Least-squares line `y = α + β x`.
fn line_fit(xy: impl Iterator<Item = (f64, f64)>) -> Option<(f64, f64)> {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (x, y) in xy {
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let det = n * sxx - sx * sx;
    if !(det.abs() > 1e-12 * (1.0 + sxx * n)) {
        return None;
    }
    let beta = (n * sxy - sx * sy) / det;
    Some(((sy - beta * sx) / n, beta))
}

fn initial_shape(kind: PrimitiveKind, st: &AxisStats, height: f64) -> Vec<f64> {
    let n = st.samples.len() as f64;
    let mean_r = st.samples.iter().map(|s| s.1).sum::<f64>() / n;
    let mean_r = mean_r.max(1e-3);
    match kind {
        PrimitiveKind::Cylinder => vec![mean_r],
        PrimitiveKind::Cone => {
            let (alpha, beta) = line_fit(st.samples.iter().map(|&(z, r)| (z, r * r)))
                .unwrap_or((mean_r * mean_r, 0.0));
            let r0 = libm::sqrt(alpha.max(0.01 * mean_r * mean_r));
            let mut beta = if beta.abs() < 1e-6 { -1e-3 * r0 * r0 / height } else { beta };
            // keep the apex at or above the band top
            if r0 * r0 + beta * height < 0.0 {
                beta = -0.999 * r0 * r0 / height;
            }
            vec![r0, beta]
        }
        PrimitiveKind::Hemisphere => {
            // r² + z² = k + 2cz
            let (k, two_c) = line_fit(st.samples.iter().map(|&(z, r)| (z, r * r + z * z)))
                .unwrap_or((mean_r * mean_r, 0.0));
            let c = 0.5 * two_c;
            let mut radius = libm::sqrt((k + c * c).max(mean_r * mean_r));
            radius = radius.max(c.abs()).max(height - c) * (1.0 + 1e-6);
            vec![radius, c]
        }
        PrimitiveKind::Polyhedron => Vec::new(),
    }
}

/// Fits a revolve primitive to a unit's points: the vertical band
/// `[z_lo, z_hi]` is fixed, the axis position, yaw and shape are optimised so
/// the mesh vertices land where the distance field vanishes.
pub fn fit_primitive_in_band(
    pc: &[Point3],
    kind: PrimitiveKind,
    field: &DistanceField,
    band: (f64, f64),
    s: &FitSettings,
) -> Result<FitResult> {
    if !kind.is_round() {
        return Err(Error::invalid("polyhedra are built from contours, not fitted"));
    }
    if pc.len() < 3 {
        return Err(Error::empty("too few points to fit a primitive"));
    }
    let (z0, z1) = band;
    let height = z1 - z0;
    positive("band height", height)?;
    let st = axis_stats(pc, z0);
    let mut x = vec![st.center.x, st.center.y, 0.0];
    x.extend(initial_shape(kind, &st, height));
    let mut kinds = vec![VertexKind::Side];
    if s.top_observed {
        kinds.push(VertexKind::TopCap);
    }
    let template = discretize(&params_from(kind, &x[POSE_PARAMS..], height), s.res)?;
    let problem = FitProblem {
        kind,
        field,
        res: s.res,
        height,
        z0,
        samples: template.select(&kinds),
    };
    let report = minimize(&problem, &mut x, &s.lm);
    let rms = libm::sqrt(report.final_cost() / problem.samples.len() as f64);
    let (rotation, translation) = problem.pose(&x);
    let primitive = PosedPrimitive::new(
        params_from(kind, &x[POSE_PARAMS..], height),
        rotation,
        translation,
    )?;
    Ok(FitResult {
        primitive,
        rms,
        converged: report.converged,
        report,
    })
}

/// [`fit_primitive_in_band`] over the z-extent of the points.
pub fn fit_primitive(
    pc: &[Point3],
    kind: PrimitiveKind,
    field: &DistanceField,
    s: &FitSettings,
) -> Result<FitResult> {
    let (lo, hi) = bounds3(pc).ok_or_else(|| Error::empty("point cloud is empty"))?;
    fit_primitive_in_band(pc, kind, field, (lo.z, hi.z), s)
}

/// Root-mean-square field value over the selected vertices of a posed mesh.
pub fn field_rms(mesh: &Mesh, field: &DistanceField, kinds: &[VertexKind]) -> f64 {
    let idx = mesh.select(kinds);
    if idx.is_empty() {
        return 0.0;
    }
    let s: f64 = idx
        .iter()
        .map(|&i| {
            let v = field.sample(mesh.vertices[i]).value;
            v * v
        })
        .sum();
    libm::sqrt(s / idx.len() as f64)
}

pub const DEFAULT_MAX_CORNERS: usize = 20;

/// Douglas-Peucker outline of the group's lowest contour, ruled along the
/// band.
///
/// The tolerance is the smallest (found by bisection) that leaves at most
/// `max_corners` corners. With two or more contours the outline is carried
/// up by the affine map that best takes the lowest contour onto the highest,
/// interpolated linearly in z and extrapolated to the band ends; otherwise
/// (or if that turns a chain over) the top chain repeats the bottom one.
pub fn polyhedron_fallback(
    group: &[Polygon],
    band: (f64, f64),
    max_corners: usize,
) -> Result<(PosedPrimitive, f64)> {
    let by_z = |a: &&Polygon, b: &&Polygon| a.elevation.total_cmp(&b.elevation);
    let bottom = group
        .iter()
        .min_by(by_z)
        .ok_or_else(|| Error::empty("empty contour group"))?;
    let highest = group.iter().max_by(by_z).expect("non-empty group");
    let height = band.1 - band.0;
    positive("band height", height)?;
    let (chain, tol) = simplify_outline(bottom, max_corners.max(3))?;
    let (lower, upper) = match contour_affine(bottom, highest) {
        Some(m) => {
            let span = highest.elevation - bottom.elevation;
            let at = |z: f64| -> Vec<Point2> {
                let s = (z - bottom.elevation) / span;
                chain.iter().map(|p| p.lerp(m.apply(*p), s)).collect()
            };
            let (lo, hi) = (at(band.0), at(band.1));
            if signed_area(&lo) > 0.0 && signed_area(&hi) > 0.0 {
                (lo, hi)
            } else {
                (chain.clone(), chain.clone())
            }
        }
        None => (chain.clone(), chain.clone()),
    };
    let corner = lower[0];
    let params = PrimitiveParams::Polyhedron {
        bottom: lower.iter().map(|p| *p - corner).collect(),
        top: upper.iter().map(|p| *p - corner).collect(),
        height,
    };
    let prim = PosedPrimitive::new(params, Mat3::IDENTITY, corner.extend(band.0))?;
    Ok((prim, tol))
}

/// Affine map taking `a` onto `b`, if the two lie at different elevations.
/// The resampled correspondence uses the cyclic shift that moves the
/// centred points least, so the map carries no spurious rotation.
fn contour_affine(a: &Polygon, b: &Polygon) -> Option<AffinePose2> {
    if !(b.elevation - a.elevation > 0.0) {
        return None;
    }
    const N: usize = 64;
    let ra = resample_closed(a, N).ok()?.into_vertices();
    let mut rb = resample_closed(b, N).ok()?.into_vertices();
    let centroid = |v: &[Point2]| v.iter().fold(Point2::ZERO, |s, p| s + *p) / v.len() as f64;
    let (ca, cb) = (centroid(&ra), centroid(&rb));
    let shift = (0..N)
        .map(|k| {
            let d: f64 = (0..N).map(|i| ((ra[i] - ca) - (rb[(i + k) % N] - cb)).norm_sq()).sum();
            (k, d)
        })
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(k, _)| k)?;
    rb.rotate_left(shift);
    let m = solve_mpa(&Correspondence::new(ra, rb).ok()?).ok()?;
    (m.pose.matrix.det() > 0.0).then_some(m.pose)
}

/// Douglas-Peucker with the smallest tolerance giving at most `max_corners`
/// corners. Returns the counter-clockwise outline and the tolerance used.
pub fn simplify_outline(p: &Polygon, max_corners: usize) -> Result<(Vec<Point2>, f64)> {
    let ring = p.to_ccw().into_vertices();
    let valid = |v: &Vec<Point2>| v.len() >= 3 && v.len() <= max_corners && signed_area(v) > 0.0;
    let exact = douglas_peucker_closed(&ring, 0.0);
    if valid(&exact) {
        return Ok((exact, 0.0));
    }
    let (lo_b, hi_b) = p.bounds();
    let mut hi = lo_b.distance(hi_b);
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if douglas_peucker_closed(&ring, mid).len() <= max_corners {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let best = douglas_peucker_closed(&ring, hi);
    if !valid(&best) {
        return Err(Error::degenerate("outline collapses under simplification"));
    }
    Ok((best, hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectSettings {
    pub fit: FitSettings,
    /// Largest acceptable fit rms; `None` uses twice the mean point
    /// spacing.
    pub accept_rms: Option<f64>,
    /// Relative amount by which a simple fit may score worse than the
    /// extruded outline and still be preferred.
    pub simple_slack: f64,
    /// A cylinder within this relative rms of the best simple fit wins over
    /// it; a cone with almost no taper is a cylinder.
    pub parsimony: f64,
    pub max_corners: usize,
}

impl Default for SelectSettings {
    fn default() -> Self {
        Self {
            fit: FitSettings::default(),
            accept_rms: None,
            simple_slack: 0.1,
            parsimony: 0.05,
            max_corners: DEFAULT_MAX_CORNERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub primitive: PosedPrimitive,
    pub rms: f64,
    pub accept_rms: f64,
    /// `(kind, rms)` of every simple fit that succeeded.
    pub candidates: Vec<(PrimitiveKind, f64)>,
    pub converged: bool,
    pub fallback: bool,
    pub note: Option<String>,
}

/// Fits every simple kind and keeps the best if it is within `accept_rms`
/// and not clearly worse than the extruded outline; otherwise extrudes the
/// unit's outline into a polyhedron.
///
/// The field measures distance to the nearest sample, so even a perfect fit
/// scores about one point spacing; the comparison with the outline is what
/// tells a prism from a revolve surface.
pub fn select_primitive(
    pc: &[Point3],
    field: &DistanceField,
    group: &[Polygon],
    band: (f64, f64),
    s: &SelectSettings,
) -> Result<Selection> {
    let spacing = mean_spacing(pc);
    let accept = match s.accept_rms {
        Some(a) => a,
        None => 2.0 * spacing.ok_or_else(|| Error::empty("too few points"))?,
    };
    let mut best: Option<FitResult> = None;
    let mut cylinder: Option<FitResult> = None;
    let mut candidates = Vec::new();
    for kind in PrimitiveKind::SIMPLE {
        let Ok(fit) = fit_primitive_in_band(pc, kind, field, band, &s.fit) else {
            continue;
        };
        candidates.push((kind, fit.rms));
        if kind == PrimitiveKind::Cylinder {
            cylinder = Some(fit.clone());
        }
        if best.as_ref().is_none_or(|b| fit.rms < b.rms) {
            best = Some(fit);
        }
    }
    if let (Some(c), Some(b)) = (&cylinder, &best) {
        if c.rms <= b.rms * (1.0 + s.parsimony) {
            best = cylinder;
        }
    }
    let mut kinds = vec![VertexKind::Side];
    if s.fit.top_observed {
        kinds.push(VertexKind::TopCap);
    }
    let fallback = match polyhedron_fallback(group, band, s.max_corners) {
        Ok((primitive, tol)) => {
            let rms = field_rms(&primitive.mesh(s.fit.res)?, field, &kinds);
            Some((primitive, tol, rms))
        }
        Err(e) if best.is_none() => return Err(e),
        Err(_) => None,
    };
    let outline_rms = fallback.as_ref().map_or(f64::INFINITY, |f| f.2);
    if let Some(b) = best.filter(|b| b.rms <= accept && b.rms <= outline_rms * (1.0 + s.simple_slack)) {
        return Ok(Selection {
            primitive: b.primitive,
            rms: b.rms,
            accept_rms: accept,
            candidates,
            converged: b.converged,
            fallback: false,
            note: None,
        });
    }
    let (primitive, tol, rms) = fallback.ok_or_else(|| Error::degenerate("no usable primitive"))?;
    Ok(Selection {
        primitive,
        rms,
        accept_rms: accept,
        candidates,
        converged: true,
        fallback: true,
        note: Some(format!("outline simplified with tolerance {tol:.4} m")),
    })
}
