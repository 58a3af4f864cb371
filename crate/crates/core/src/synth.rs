//! Synthetic stacked buildings with ground-truth unit labels, and the
//! PA-vs-MPA contour division study run on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::deform::{EdGraph, EdNode, DEFAULT_NEIGHBORS};
use crate::geometry::{point_in_polygon, Mat3, Point2, Point3, PointCloud, Polygon};
use crate::primitives::{MeshResolution, PosedPrimitive, PrimitiveKind, PrimitiveParams, VertexKind};
use crate::procrustes::{divide_into_primitives, DivisionSettings, Metric};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeformationLevel {
    None,
    Small,
    Medium,
    Heavy,
}

impl DeformationLevel {
    pub const SWEPT: [DeformationLevel; 3] = [
        DeformationLevel::Small,
        DeformationLevel::Medium,
        DeformationLevel::Heavy,
    ];

    /// Largest node displacement, metres.
    pub fn max_translation(self) -> f64 {
        match self {
            DeformationLevel::None => 0.0,
            DeformationLevel::Small => 0.2,
            DeformationLevel::Medium => 0.6,
            DeformationLevel::Heavy => 1.2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DeformationLevel::None => "none",
            DeformationLevel::Small => "small",
            DeformationLevel::Medium => "medium",
            DeformationLevel::Heavy => "heavy",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [
            DeformationLevel::None,
            DeformationLevel::Small,
            DeformationLevel::Medium,
            DeformationLevel::Heavy,
        ]
        .into_iter()
        .find(|d| d.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    /// Standard deviation of the horizontal noise on contour vertices, m.
    pub sigma: f64,
    pub deformation: DeformationLevel,
    pub contour_interval: f64,
    /// Spacing of contour vertices along the outline, m.
    pub vertex_spacing: f64,
    /// Vertical spacing of the generator deformation nodes, m.
    pub node_spacing: f64,
    /// Displacement of the footprint edge due to the linear part of each
    /// generator node, as a fraction of the level's translation.
    pub shear_scale: f64,
    pub min_height: f64,
    pub max_height: f64,
    /// Half-width of the square footprint bound, m.
    pub half_extent: f64,
    pub min_units: usize,
    pub max_units: usize,
    /// Shortest unit, m.
    pub min_unit_height: f64,
    /// Smallest base radius of an upper unit, m.
    pub min_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            deformation: DeformationLevel::None,
            contour_interval: 1.0,
            vertex_spacing: 0.5,
            node_spacing: 3.0,
            shear_scale: 0.35,
            min_height: 20.0,
            max_height: 30.0,
            half_extent: 5.0,
            min_units: 2,
            max_units: 4,
            min_unit_height: 4.0,
            min_radius: 3.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        for (name, v) in [
            ("contour interval", self.contour_interval),
            ("vertex spacing", self.vertex_spacing),
            ("node spacing", self.node_spacing),
            ("shear scale", self.shear_scale),
            ("half extent", self.half_extent),
            ("unit height", self.min_unit_height),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.min_height > 0.0 && self.min_height <= self.max_height) {
            return Err(Error::invalid("height range is empty"));
        }
        if self.min_units == 0 || self.min_units > self.max_units {
            return Err(Error::invalid("unit count range is empty"));
        }
        if self.min_units as f64 * self.min_unit_height > self.min_height {
            return Err(Error::invalid("units do not fit in the building height"));
        }
        Ok(())
    }
}

/// One unit of the stack: canonical primitive posed at `(offset, z0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticUnit {
    pub primitive: PosedPrimitive,
    pub z0: f64,
    pub z1: f64,
}

impl SyntheticUnit {
    pub fn kind(&self) -> PrimitiveKind {
        self.primitive.kind()
    }

    /// Undeformed cross-section at world height `z` with vertices roughly
    /// `spacing` apart.
    pub fn cross_section(&self, z: f64, spacing: f64) -> Vec<Point2> {
        let t = self.primitive.translation.xy();
        match &self.primitive.params {
            PrimitiveParams::Polyhedron { bottom, .. } => densify(bottom, spacing)
                .into_iter()
                .map(|p| self.primitive.rotation.mul_vec(p.extend(0.0)).xy() + t)
                .collect(),
            p => {
                let r = p.radius_at(z - self.z0).unwrap_or(0.0);
                let n = (libm::ceil(2.0 * PI * r / spacing) as usize).max(12);
                (0..n)
                    .map(|k| {
                        let a = 2.0 * PI * k as f64 / n as f64;
                        t + Point2::new(r * libm::cos(a), r * libm::sin(a))
                    })
                    .collect()
            }
        }
    }
}

fn densify(ring: &[Point2], spacing: f64) -> Vec<Point2> {
    let mut out = Vec::new();
    for i in 0..ring.len() {
        let (a, b) = (ring[i], ring[(i + 1) % ring.len()]);
        let n = (libm::ceil(a.distance(b) / spacing) as usize).max(1);
        for k in 0..n {
            out.push(a.lerp(b, k as f64 / n as f64));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBuilding {
    /// Units from the ground up.
    pub units: Vec<SyntheticUnit>,
    /// Generator deformation nodes (horizontal affine parts); no vertices
    /// are bound.
    pub deformation: Vec<EdNode>,
    pub height: f64,
    /// Deformed, noisy contours, ascending in elevation.
    pub contours: Vec<Polygon>,
    /// Index of the unit each contour belongs to.
    pub labels: Vec<usize>,
    /// Largest horizontal displacement applied to any contour vertex by the
    /// deformation (before noise).
    pub max_displacement: f64,
}

impl SyntheticBuilding {
    /// Generator graph bound to `points`.
    pub fn deformation_graph(&self, points: &[Point3]) -> Result<EdGraph> {
        let pos: Vec<Point3> = self.deformation.iter().map(|n| n.b).collect();
        let mut g = EdGraph::from_nodes(&pos, points, DEFAULT_NEIGHBORS)?;
        for (d, s) in g.nodes.iter_mut().zip(&self.deformation) {
            d.a = s.a;
            d.t = s.t;
        }
        Ok(g)
    }

    /// Applies the generator deformation to arbitrary points.
    pub fn deform(&self, points: &[Point3]) -> Result<Vec<Point3>> {
        Ok(self.deformation_graph(points)?.warped_vertices())
    }

    /// Label runs as index ranges, for comparison with a division.
    /// Deformed outline of the lowest unit at ground level.
    pub fn footprint(&self) -> Result<Polygon> {
        let u = &self.units[0];
        let pts: Vec<Point3> = u.cross_section(u.z0, 0.25).iter().map(|p| p.extend(0.0)).collect();
        Ok(Polygon::raw(self.deform(&pts)?.iter().map(|p| p.xy()).collect(), 0.0))
    }

    pub fn label_groups(&self) -> Vec<core::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.labels.len() {
            if i == self.labels.len() || self.labels[i] != self.labels[start] {
                out.push(start..i);
                start = i;
            }
        }
        out
    }
}

fn random_round(rng: &mut ChaCha8Rng, limit: f64, h: f64) -> PrimitiveParams {
    let choice = rng.random_range(0..3);
    if choice == 2 {
        // sphere of radius `limit` whose zone ends at a random latitude
        // above the equator; too tall a zone would need a bigger sphere
        let s = rng.random_range(0.5..0.75);
        if h <= limit * (1.0 + s) {
            return PrimitiveParams::Hemisphere {
                radius: limit,
                center_z: h - limit * s,
                height: h,
            };
        }
    }
    if choice == 0 {
        PrimitiveParams::Cylinder {
            radius: limit,
            height: h,
        }
    } else {
        let r1 = limit * rng.random_range(0.65..0.9);
        // r² = r0² + z/a reaches r1² at z = h
        PrimitiveParams::Cone {
            base_radius: limit,
            a: h / (r1 * r1 - limit * limit),
            height: h,
        }
    }
}

/// Sphere zone through the base circle `r0` at 0 and `r1` at `h`.
pub fn sphere_zone(r0: f64, r1: f64, h: f64) -> PrimitiveParams {
    let c = (h * h - r0 * r0 + r1 * r1) / (2.0 * h);
    PrimitiveParams::Hemisphere {
        radius: libm::sqrt(r0 * r0 + c * c),
        center_z: c,
        height: h,
    }
}

fn random_polygon(rng: &mut ChaCha8Rng, rc: f64) -> Vec<Point2> {
    let m = rng.random_range(3..=5);
    let phase = rng.random_range(0.0..2.0 * PI);
    let step = 2.0 * PI / m as f64;
    (0..m)
        .map(|k| {
            let a = phase + step * (k as f64 + rng.random_range(-0.25..0.25));
            let r = rc * rng.random_range(0.85..1.0);
            Point2::new(r * libm::cos(a), r * libm::sin(a))
        })
        .collect()
}

fn top_radius(p: &PrimitiveParams) -> f64 {
    p.radius_at(p.height()).unwrap_or(0.0)
}

/// Random stack of alternating round and polyhedral units.
///
/// Two round units are never adjacent: circles at any scale are similar
/// under both alignment models, so such a junction carries no contour
/// evidence.
pub fn generate_units(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(Vec<SyntheticUnit>, f64)> {
    cfg.validate()?;
    let height = rng.random_range(cfg.min_height..=cfg.max_height);
    let u = rng.random_range(cfg.min_units..=cfg.max_units);
    // unit boundaries on half-contour heights, every unit at least
    // min_unit_height tall
    let step = cfg.contour_interval;
    let bounds = loop {
        let mut cuts: Vec<f64> = (0..u - 1)
            .map(|_| {
                let z = rng.random_range(cfg.min_unit_height..height - cfg.min_unit_height);
                (libm::floor(z / step) + 0.5) * step
            })
            .collect();
        cuts.sort_by(f64::total_cmp);
        let mut b = vec![0.0];
        b.extend(cuts);
        b.push(height);
        if b.windows(2).all(|w| w[1] - w[0] >= cfg.min_unit_height - step) {
            break b;
        }
    };
    let mut round = rng.random_bool(0.5);
    let mut units = Vec::with_capacity(u);
    let mut limit = cfg.half_extent * rng.random_range(0.8..1.0);
    for i in 0..u {
        let (z0, z1) = (bounds[i], bounds[i + 1]);
        let h = z1 - z0;
        let params = if round {
            random_round(rng, limit, h)
        } else {
            let poly = random_polygon(rng, limit);
            PrimitiveParams::Polyhedron {
                bottom: poly.clone(),
                top: poly,
                height: h,
            }
        };
        limit = match &params {
            PrimitiveParams::Polyhedron { bottom, .. } => {
                bottom.iter().map(|p| p.norm()).fold(f64::MAX, f64::min) * rng.random_range(0.9..1.0)
            }
            p => top_radius(p).min(limit).max(0.5 * limit),
        }
        .max(cfg.min_radius);
        let primitive = PosedPrimitive::new(params, Mat3::IDENTITY, Point3::new(0.0, 0.0, z0))?;
        units.push(SyntheticUnit { primitive, z0, z1 });
        round = !round;
    }
    Ok((units, height))
}

/// Nodes stacked on the building axis. Each carries a random horizontal
/// translation of at most the level's displacement and a random horizontal
/// linear part whose effect at the footprint edge is of the same size.
fn generator_nodes(cfg: &SynthConfig, height: f64, rng: &mut ChaCha8Rng) -> Vec<EdNode> {
    let nz = (libm::ceil(height / cfg.node_spacing) as usize).max(1) + 1;
    let max_t = cfg.deformation.max_translation();
    let eps = cfg.shear_scale * max_t / cfg.half_extent;
    (0..nz)
        .map(|k| {
            let mut n = EdNode::at(Point3::new(0.0, 0.0, height * k as f64 / (nz - 1) as f64));
            let r = max_t * libm::sqrt(rng.random_range(0.0..1.0));
            let a = rng.random_range(0.0..2.0 * PI);
            n.t = Point3::new(r * libm::cos(a), r * libm::sin(a), 0.0);
            if eps > 0.0 {
                for i in 0..2 {
                    for j in 0..2 {
                        n.a.0[i][j] += rng.random_range(-eps..eps);
                    }
                }
            }
            n
        })
        .collect()
}

/// A random labelled building and its deformed, noisy contours.
pub fn generate_building(cfg: &SynthConfig, seed: u64) -> Result<SyntheticBuilding> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (units, height) = generate_units(cfg, &mut rng)?;
    assemble(units, height, cfg, &mut rng)
}

/// Deforms, contours and perturbs a fixed unit stack. Uses the
/// deformation level, noise and contour settings of `cfg`.
pub fn building_from_units(
    units: Vec<SyntheticUnit>,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<SyntheticBuilding> {
    cfg.validate()?;
    if units.is_empty() {
        return Err(Error::empty("no units"));
    }
    for w in units.windows(2) {
        if (w[0].z1 - w[1].z0).abs() > 1e-9 {
            return Err(Error::invalid("units must be stacked without gaps"));
        }
    }
    let height = units[units.len() - 1].z1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    assemble(units, height, cfg, &mut rng)
}

fn assemble(
    units: Vec<SyntheticUnit>,
    height: f64,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SyntheticBuilding> {
    let deformation = generator_nodes(cfg, height, rng);
    let mut building = SyntheticBuilding {
        units,
        deformation,
        height,
        contours: Vec::new(),
        labels: Vec::new(),
        max_displacement: 0.0,
    };
    let mut rings: Vec<(Vec<Point3>, usize)> = Vec::new();
    let mut k = 1;
    loop {
        let z = k as f64 * cfg.contour_interval;
        if z >= height {
            break;
        }
        let Some(u) = building.units.iter().position(|u| z >= u.z0 && z < u.z1) else {
            break;
        };
        let ring = building.units[u].cross_section(z, cfg.vertex_spacing);
        rings.push((ring.iter().map(|p| p.extend(z)).collect(), u));
        k += 1;
    }
    let all: Vec<Point3> = rings.iter().flat_map(|r| r.0.iter().copied()).collect();
    let warped = building.deform(&all)?;
    let noise = Normal::new(0.0, cfg.sigma.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut at = 0;
    for (ring, label) in rings {
        let z = ring[0].z;
        let mut pts = Vec::with_capacity(ring.len());
        for p in &ring {
            let w = warped[at];
            at += 1;
            building.max_displacement = building.max_displacement.max(w.xy().distance(p.xy()));
            let mut q = w.xy();
            if cfg.sigma > 0.0 {
                q = q + Point2::new(noise.sample(rng), noise.sample(rng));
            }
            pts.push(q);
        }
        building.contours.push(Polygon::new(pts, z)?);
        building.labels.push(label);
    }
    Ok(building)
}

/// Points on the deformed building surface plus a flat ground patch.
///
/// Sides and exposed roofs are sampled area-uniformly at `density`
/// points/m²; roof points hidden under the next unit are dropped. No noise
/// is added.
pub fn sample_building_cloud(
    b: &SyntheticBuilding,
    density: f64,
    ground_margin: f64,
    seed: u64,
) -> Result<PointCloud> {
    if !(density > 0.0) {
        return Err(Error::invalid("density must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::new();
    let res = MeshResolution::new(64, 32);
    for (i, u) in b.units.iter().enumerate() {
        let mesh = u.primitive.mesh(res)?;
        let upper: Option<Polygon> = b.units.get(i + 1).map(|n| {
            Polygon::raw(n.cross_section(n.z0, 0.25), n.z0)
        });
        for f in 0..mesh.faces.len() {
            let kinds = mesh.faces[f].map(|v| mesh.kinds[v]);
            if kinds.iter().all(|k| *k == VertexKind::BottomCap) {
                continue;
            }
            let is_roof = kinds.iter().all(|k| *k == VertexKind::TopCap)
                || (u.kind() == PrimitiveKind::Polyhedron
                    && mesh.faces[f].iter().all(|&v| (mesh.vertices[v].z - u.z1).abs() < 1e-9));
            let is_floor = u.kind() == PrimitiveKind::Polyhedron
                && mesh.faces[f].iter().all(|&v| (mesh.vertices[v].z - u.z0).abs() < 1e-9);
            if is_floor {
                continue;
            }
            let [a, bb, c] = mesh.triangle(f);
            let area = 0.5 * (bb - a).cross(c - a).norm();
            let expect = area * density;
            let mut n = libm::floor(expect) as usize;
            if rng.random_range(0.0..1.0) < expect - n as f64 {
                n += 1;
            }
            for _ in 0..n {
                let (mut s, mut t) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
                if s + t > 1.0 {
                    s = 1.0 - s;
                    t = 1.0 - t;
                }
                let p = a + (bb - a) * s + (c - a) * t;
                if is_roof {
                    if let Some(up) = &upper {
                        if point_in_polygon(p.xy(), up) {
                            continue;
                        }
                    }
                }
                pts.push(p);
            }
        }
    }
    let mut cloud = b.deform(&pts)?;
    cloud.iter_mut().zip(&pts).for_each(|(w, p)| w.z = p.z);
    let e = b.units.iter().fold(0.0f64, |m, u| {
        let r = match &u.primitive.params {
            PrimitiveParams::Polyhedron { bottom, .. } => bottom.iter().map(|p| p.norm()).fold(0.0, f64::max),
            p => p.radius_at(0.0).unwrap_or(0.0).max(top_radius(p)),
        };
        m.max(r)
    }) + ground_margin;
    let spacing = 1.0 / libm::sqrt(density);
    let n = libm::ceil(2.0 * e / spacing) as usize;
    let fp = b.footprint()?;
    for j in 0..=n {
        for i in 0..=n {
            let q = Point2::new(-e + i as f64 * spacing, -e + j as f64 * spacing);
            if !point_in_polygon(q, &fp) {
                cloud.push(q.extend(0.0));
            }
        }
    }
    Ok(cloud)
}

/// Outcome of one labelled division trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialOutcome {
    pub pa_correct: bool,
    pub mpa_correct: bool,
}

/// Divides the building's contours with both metrics and checks each
/// against the labels. A trial is correct only if every contour lands in
/// its unit's group.
pub fn run_trial(cfg: &SynthConfig, division: &DivisionSettings, seed: u64) -> Result<TrialOutcome> {
    let b = generate_building(cfg, seed)?;
    let truth = b.label_groups();
    let check = |metric: Metric| -> Result<bool> {
        let s = DivisionSettings { metric, ..*division };
        Ok(divide_into_primitives(&b.contours, &s)?.groups == truth)
    };
    Ok(TrialOutcome {
        pa_correct: check(Metric::Pa)?,
        mpa_correct: check(Metric::Mpa)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub sigma: f64,
    pub deformation: DeformationLevel,
    pub trials: usize,
    pub seed: u64,
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) {
            return Err(Error::invalid("sigma must be non-negative"));
        }
        if self.trials == 0 {
            return Err(Error::invalid("at least one trial is required"));
        }
        Ok(())
    }

    /// Independent seed of trial `i`.
    pub fn trial_seed(&self, i: usize) -> u64 {
        mix_seed(self.seed, &[
            self.sigma.to_bits(),
            self.deformation as u64,
            i as u64,
        ])
    }

    pub fn synth(&self, base: &SynthConfig) -> SynthConfig {
        SynthConfig {
            sigma: self.sigma,
            deformation: self.deformation,
            ..*base
        }
    }
}

/// SplitMix64 fold of `parts` into `seed`.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for p in parts {
        z = z.wrapping_add(p.wrapping_add(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellResult {
    pub sigma: f64,
    pub deformation: DeformationLevel,
    pub trials: usize,
    pub pa_correct: usize,
    pub mpa_correct: usize,
}

impl CellResult {
    pub fn from_outcomes(tc: &TrialConfig, outcomes: &[TrialOutcome]) -> Self {
        Self {
            sigma: tc.sigma,
            deformation: tc.deformation,
            trials: outcomes.len(),
            pa_correct: outcomes.iter().filter(|o| o.pa_correct).count(),
            mpa_correct: outcomes.iter().filter(|o| o.mpa_correct).count(),
        }
    }

    pub fn pa_percent(&self) -> f64 {
        100.0 * self.pa_correct as f64 / self.trials.max(1) as f64
    }

    pub fn mpa_percent(&self) -> f64 {
        100.0 * self.mpa_correct as f64 / self.trials.max(1) as f64
    }
}

fn stacked(params: Vec<PrimitiveParams>) -> Result<Vec<SyntheticUnit>> {
    let mut z = 0.0;
    let mut out = Vec::with_capacity(params.len());
    for p in params {
        let h = p.height();
        out.push(SyntheticUnit {
            primitive: PosedPrimitive::new(p, Mat3::IDENTITY, Point3::new(0.0, 0.0, z))?,
            z0: z,
            z1: z + h,
        });
        z += h;
    }
    Ok(out)
}

/// Cone `r: r0 → r1` over `h`.
fn tapered(r0: f64, r1: f64, h: f64) -> PrimitiveParams {
    PrimitiveParams::Cone {
        base_radius: r0,
        a: h / (r1 * r1 - r0 * r0),
        height: h,
    }
}

/// Tapering cone, spherical dome section, tapering spire, each set back
/// from the one below. Radii never grow with height, so the whole stack is
/// visible from above.
pub fn cone_sphere_cone() -> Result<Vec<SyntheticUnit>> {
    stacked(vec![
        tapered(6.0, 4.5, 8.0),
        PrimitiveParams::Hemisphere {
            radius: 4.0,
            center_z: 0.0,
            height: 3.0,
        },
        tapered(2.2, 0.6, 6.0),
    ])
}

/// Hemispherical dome on a cylindrical drum.
pub fn dome_on_drum() -> Result<Vec<SyntheticUnit>> {
    stacked(vec![
        PrimitiveParams::Cylinder {
            radius: 6.0,
            height: 10.0,
        },
        PrimitiveParams::Hemisphere {
            radius: 6.0,
            center_z: 0.0,
            height: 6.0,
        },
    ])
}

/// Two tapering cones with a setback between them.
pub fn cone_stack() -> Result<Vec<SyntheticUnit>> {
    stacked(vec![tapered(6.0, 4.5, 8.0), tapered(4.0, 1.5, 8.0)])
}

/// Pentagonal prism tower of height 20 m (deform it through the config).
pub fn polygon_tower() -> Result<Vec<SyntheticUnit>> {
    let ring: Vec<Point2> = (0..5)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 5.0;
            Point2::new(5.0 * libm::cos(t), 5.0 * libm::sin(t))
        })
        .collect();
    stacked(vec![PrimitiveParams::Polyhedron {
        bottom: ring.clone(),
        top: ring,
        height: 20.0,
    }])
}

/// Several buildings on one flat ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub points: PointCloud,
    /// Building index of every point; `None` for ground.
    pub labels: Vec<Option<usize>>,
    pub buildings: Vec<SyntheticBuilding>,
    pub offsets: Vec<Point2>,
}

/// Samples every building at `offset`, then covers the bounding square
/// (grown by `margin`) with ground points outside all footprints.
pub fn compose_scene(
    buildings: Vec<SyntheticBuilding>,
    offsets: Vec<Point2>,
    density: f64,
    margin: f64,
    seed: u64,
) -> Result<Scene> {
    if buildings.len() != offsets.len() {
        return Err(Error::invalid("one offset per building is required"));
    }
    if buildings.is_empty() {
        return Err(Error::empty("scene has no buildings"));
    }
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut footprints = Vec::new();
    let (mut lo, mut hi) = (Point2::new(f64::INFINITY, f64::INFINITY), Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for (i, (b, off)) in buildings.iter().zip(&offsets).enumerate() {
        let cloud = sample_building_cloud(b, density, 0.0, mix_seed(seed, &[i as u64]))?;
        for p in cloud.into_iter().filter(|p| p.z > 0.0) {
            let q = Point3::new(p.x + off.x, p.y + off.y, p.z);
            lo = Point2::new(lo.x.min(q.x), lo.y.min(q.y));
            hi = Point2::new(hi.x.max(q.x), hi.y.max(q.y));
            points.push(q);
            labels.push(Some(i));
        }
        footprints.push(b.footprint()?.map(|p| p + *off));
    }
    let spacing = 1.0 / libm::sqrt(density);
    let (lo, hi) = (lo - Point2::new(margin, margin), hi + Point2::new(margin, margin));
    let nx = libm::ceil((hi.x - lo.x) / spacing) as usize;
    let ny = libm::ceil((hi.y - lo.y) / spacing) as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let q = Point2::new(lo.x + i as f64 * spacing, lo.y + j as f64 * spacing);
            if footprints.iter().all(|f| !point_in_polygon(q, f)) {
                points.push(q.extend(0.0));
                labels.push(None);
            }
        }
    }
    Ok(Scene {
        points,
        labels,
        buildings,
        offsets,
    })
}

/// Per-vertex noise of grid row `k` is `k * SIGMA_UNIT` metres.
pub const SIGMA_UNIT: f64 = 0.005;

/// Noise rows of the benchmark grid.
pub const SIGMA_STEPS: [u32; 5] = [1, 2, 3, 4, 5];

/// Trial configurations of the full benchmark grid, row-major in σ.
pub fn benchmark_grid(trials: usize, seed: u64) -> Vec<TrialConfig> {
    let mut out = Vec::new();
    for k in SIGMA_STEPS {
        for deformation in DeformationLevel::SWEPT {
            out.push(TrialConfig {
                sigma: k as f64 * SIGMA_UNIT,
                deformation,
                trials,
                seed,
            });
        }
    }
    out
}

/// Sequential Monte Carlo over one (σ, deformation) cell.
pub fn run_monte_carlo(
    tc: &TrialConfig,
    base: &SynthConfig,
    division: &DivisionSettings,
) -> Result<CellResult> {
    tc.validate()?;
    let cfg = tc.synth(base);
    let outcomes = (0..tc.trials)
        .map(|i| run_trial(&cfg, division, tc.trial_seed(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CellResult::from_outcomes(tc, &outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_area;

    #[test]
    fn generated_buildings_respect_bounds() {
        for seed in 0..40 {
            let b = generate_building(&SynthConfig::default(), seed).unwrap();
            assert!((20.0..=30.0).contains(&b.height));
            assert!((2..=4).contains(&b.units.len()));
            assert_eq!(b.labels.len(), b.contours.len());
            for c in &b.contours {
                let (lo, hi) = c.bounds();
                assert!(lo.x >= -5.0 && lo.y >= -5.0 && hi.x <= 5.0 && hi.y <= 5.0);
            }
            // labels are contiguous ascending runs
            assert!(b.labels.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            assert_eq!(*b.labels.last().unwrap(), b.units.len() - 1);
            for w in b.units.windows(2) {
                assert!(w[0].kind().is_round() != w[1].kind().is_round());
            }
        }
    }

    #[test]
    fn clean_contours_match_level_sets() {
        let b = generate_building(&SynthConfig::default(), 3).unwrap();
        for (c, &l) in b.contours.iter().zip(&b.labels) {
            let u = &b.units[l];
            let z = c.elevation - u.z0;
            match &u.primitive.params {
                PrimitiveParams::Polyhedron { bottom, .. } => {
                    assert!((polygon_area(c).unwrap() - polygon_area(&Polygon::raw(bottom.clone(), 0.0)).unwrap()).abs() < 1e-9);
                }
                p => {
                    let r = p.radius_at(z).unwrap();
                    for v in c.vertices() {
                        assert!((v.norm() - r).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SynthConfig {
            sigma: 0.3,
            deformation: DeformationLevel::Heavy,
            ..SynthConfig::default()
        };
        assert_eq!(generate_building(&cfg, 11).unwrap(), generate_building(&cfg, 11).unwrap());
        assert_ne!(generate_building(&cfg, 11).unwrap(), generate_building(&cfg, 12).unwrap());
    }

    #[test]
    fn heavier_deformation_moves_more() {
        let mean = |level| {
            let cfg = SynthConfig {
                deformation: level,
                ..SynthConfig::default()
            };
            (0..10)
                .map(|s| generate_building(&cfg, s).unwrap().max_displacement)
                .sum::<f64>()
        };
        let (small, heavy) = (mean(DeformationLevel::Small), mean(DeformationLevel::Heavy));
        assert!(heavy > small, "{heavy} <= {small}");
        for s in 0..10 {
            let cfg = SynthConfig {
                deformation: DeformationLevel::Small,
                ..SynthConfig::default()
            };
            assert!(generate_building(&cfg, s).unwrap().max_displacement <= 3.0 * 0.2);
        }
    }

    #[test]
    fn clean_trials_are_all_correct() {
        let tc = TrialConfig {
            sigma: 0.0,
            deformation: DeformationLevel::None,
            trials: 10,
            seed: 5,
        };
        let r = run_monte_carlo(&tc, &SynthConfig::default(), &DivisionSettings::default()).unwrap();
        assert_eq!(r.pa_correct, 10);
        assert_eq!(r.mpa_correct, 10);
    }

    #[test]
    fn cloud_covers_building_and_ground() {
        let b = generate_building(&SynthConfig::default(), 2).unwrap();
        let pc = sample_building_cloud(&b, 4.0, 5.0, 1).unwrap();
        assert!(pc.iter().any(|p| p.z > b.height - 1e-6 - 0.5));
        assert!(pc.iter().filter(|p| p.z == 0.0).count() > 100);
        assert!(pc.iter().all(|p| p.z <= b.height + 1e-9));
    }

    #[test]
    fn seeds_are_mixed() {
        assert_ne!(mix_seed(1, &[0]), mix_seed(1, &[1]));
        assert_ne!(mix_seed(1, &[0, 1]), mix_seed(1, &[1, 0]));
    }
}
