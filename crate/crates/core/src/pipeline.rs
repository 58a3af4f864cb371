//! Per-building reconstruction: contour chain → primitive units → fitted
//! primitives → deformation-refined model.
//!
//! Each step takes plain values and returns plain values so the caller can
//! persist the intermediate results between steps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::deform::{build_graph, solve_lm, EnergyWeights, DEFAULT_NEIGHBORS};
use crate::geometry::{point_in_polygon, Point3, PointCloud, Polygon};
use crate::lm::LmSettings;
use crate::model::{BuildingModel, ModelPrimitive};
use crate::primitives::{
    build_distance_field, field_rms, polyhedron_fallback, select_primitive, DistanceField,
    MeshResolution, PosedPrimitive, PrimitiveKind, SelectSettings, Selection, VertexKind,
};
use crate::procrustes::{
    divide_into_primitives, sort_chain, DivisionSettings, PrimitiveDivision, ProfileSplit,
};
use crate::topology::BuildingCluster;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSettings {
    pub voxel: f64,
    pub pad: f64,
}

impl Default for FieldSettings {
    fn default() -> Self {
        Self { voxel: 0.25, pad: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineSettings {
    pub enabled: bool,
    /// Target node count per primitive.
    pub node_count: usize,
    pub k: usize,
    /// Mesh whose vertices carry the data term.
    pub res: MeshResolution,
    pub weights: EnergyWeights,
    pub lm: LmSettings,
}

impl Default for RefineSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            node_count: 120,
            k: DEFAULT_NEIGHBORS,
            res: MeshResolution::new(32, 16),
            weights: EnergyWeights::default(),
            lm: LmSettings {
                max_iter: 30,
                rel_tol: 1e-3,
                ..LmSettings::default()
            },
        }
    }
}

/// One vertical chain of a building, ready for division.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainInput {
    /// Contours in ascending elevation.
    pub contours: Vec<Polygon>,
    /// Elevation the lowest unit starts from.
    pub base_z: f64,
    pub points: PointCloud,
}

/// Splits a cluster into its chains. The trunk starts at `ground_z`; a
/// branch starts halfway between its parent contour and its first contour
/// and only keeps the points above its first contour's footprint.
pub fn cluster_chains(b: &BuildingCluster, ground_z: f64) -> Vec<ChainInput> {
    let mut out = Vec::new();
    for chain in b.chains() {
        let contours = sort_chain(&b.chain_contours(&chain));
        let first = chain[0];
        let (base_z, points) = match b.parent[first] {
            None => (ground_z.min(contours[0].elevation), b.points.clone()),
            Some(p) => {
                let base = 0.5 * (b.contours[p].elevation + contours[0].elevation);
                let foot = &contours[0];
                let pts = b
                    .points
                    .iter()
                    .filter(|q| q.z >= base && point_in_polygon(q.xy(), foot))
                    .copied()
                    .collect();
                (base, pts)
            }
        };
        out.push(ChainInput {
            contours,
            base_z,
            points,
        });
    }
    out
}

/// Division of a chain. Chains of a single contour form one unit.
pub fn divide_chain(contours: &[Polygon], s: &DivisionSettings) -> Result<PrimitiveDivision> {
    if contours.len() == 1 {
        return Ok(PrimitiveDivision {
            groups: vec![0..1],
            distances: Vec::new(),
            elevations: vec![contours[0].elevation],
        });
    }
    divide_into_primitives(contours, s)
}

/// Vertical extent of every unit: the lowest starts at `base_z`, the top
/// one ends at the highest point above its band, inner cuts lie halfway
/// between contours.
pub fn unit_bands(d: &PrimitiveDivision, base_z: f64, points: &[Point3]) -> Vec<(f64, f64)> {
    let n = d.groups.len();
    (0..n)
        .map(|g| {
            let (mut lo, mut hi) = d.band(g);
            if g == 0 {
                lo = base_z;
            }
            if g + 1 == n {
                let top = d.elevations[d.groups[g].end - 1];
                hi = points
                    .iter()
                    .filter(|p| p.z >= lo)
                    .map(|p| p.z)
                    .fold(top, f64::max);
            }
            (lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitFit {
    pub kind: PrimitiveKind,
    pub band: (f64, f64),
    pub contours: usize,
    pub points: usize,
    pub rms: f64,
    pub accept_rms: f64,
    pub converged: bool,
    pub fallback: bool,
    /// `(kind, rms)` of every simple fit tried.
    pub candidates: Vec<(PrimitiveKind, f64)>,
    pub note: Option<String>,
}

/// Thinnest z-range of points a fit is run on, m.
const MIN_BAND: f64 = 0.5;

/// Fits one primitive per unit of every chain. The result is a rigid model
/// (no deformation nodes yet).
pub fn fit_units(
    id: usize,
    chains: &[(ChainInput, PrimitiveDivision)],
    field: &FieldSettings,
    select: &SelectSettings,
) -> Result<(BuildingModel, Vec<UnitFit>)> {
    let mut model = BuildingModel {
        id,
        primitives: Vec::new(),
    };
    let mut fits = Vec::new();
    for (chain, division) in chains {
        if chain.points.len() < 3 {
            return Err(Error::empty(format!("building {id}: chain has too few points")));
        }
        let f = build_distance_field(&chain.points, field.voxel, field.pad)?;
        let bands = unit_bands(division, chain.base_z, &chain.points);
        for (g, range) in division.groups.iter().enumerate() {
            let band = bands[g];
            let unit_pts: PointCloud = chain
                .points
                .iter()
                .filter(|p| p.z >= band.0 && p.z <= band.1)
                .copied()
                .collect();
            let mut s = *select;
            s.fit.top_observed = g + 1 == division.groups.len();
            let group = &chain.contours[range.clone()];
            let sel = if unit_pts.len() >= 3 {
                // fit between the unit's own contours, where neither the
                // neighbours' walls nor unseen ground sit in the band, then
                // continue the surface out to the band edges
                let last = g + 1 == division.groups.len();
                let seen = unit_pts.iter().map(|p| p.z).fold(band.1, f64::min);
                let lo = if g == 0 { seen.max(band.0) } else { group[0].elevation };
                let hi = if last { band.1 } else { group[group.len() - 1].elevation };
                let (lo, hi) = if hi - lo >= MIN_BAND { (lo, hi) } else { band };
                let mut sel = select_primitive(&unit_pts, &f, group, (lo, hi), &s)?;
                if sel.fallback {
                    sel.primitive = polyhedron_fallback(group, band, s.max_corners)?.0;
                } else {
                    let p = &sel.primitive;
                    let grown = p
                        .extended_down(lo - band.0)
                        .and_then(|p| Some(PosedPrimitive { params: p.params.extended_up(band.1 - hi)?, ..p }));
                    match grown {
                        Some(p) => sel.primitive = p,
                        None => sel.note = Some(format!("kept the fitted band {lo:.2}..{hi:.2} m")),
                    }
                }
                sel
            } else {
                // no points to fit: the outline is all there is
                let (primitive, _) =
                    polyhedron_fallback(group, band, s.max_corners)?;
                Selection {
                    primitive,
                    rms: 0.0,
                    accept_rms: 0.0,
                    candidates: Vec::new(),
                    converged: true,
                    fallback: true,
                    note: Some(String::from("no points in band")),
                }
            };
            fits.push(UnitFit {
                kind: sel.primitive.kind(),
                band,
                contours: range.len(),
                points: unit_pts.len(),
                rms: sel.rms,
                accept_rms: sel.accept_rms,
                converged: sel.converged,
                fallback: sel.fallback,
                candidates: sel.candidates,
                note: sel.note,
            });
            model.primitives.push(ModelPrimitive::rigid(sel.primitive));
        }
    }
    Ok((model, fits))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitRefine {
    pub nodes: usize,
    /// Root-mean-square field value of the data vertices before and after.
    pub rms_before: f64,
    pub rms_after: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Vertices that carry the data term: the sides, plus the top cap when it
/// is exposed.
pub fn data_kinds(top_exposed: bool) -> Vec<VertexKind> {
    let mut k = vec![VertexKind::Side];
    if top_exposed {
        k.push(VertexKind::TopCap);
    }
    k
}

/// Builds and optimises a deformation graph for every primitive of a rigid
/// model. The top cap of a primitive is only matched when no other
/// primitive of the building starts above it.
pub fn refine_model(
    model: &BuildingModel,
    points: &[Point3],
    field: &FieldSettings,
    s: &RefineSettings,
) -> Result<(BuildingModel, Vec<UnitRefine>)> {
    let mut out = model.clone();
    let mut reports = Vec::new();
    if !s.enabled || model.primitives.is_empty() {
        return Ok((out, reports));
    }
    let f = build_distance_field(points, field.voxel, field.pad)?;
    let tops: Vec<f64> = model
        .primitives
        .iter()
        .map(|p| p.primitive.translation.z + p.primitive.params.height())
        .collect();
    for (i, mp) in out.primitives.iter_mut().enumerate() {
        let covered = tops
            .iter()
            .zip(&model.primitives)
            .enumerate()
            .any(|(j, (_, q))| j != i && (q.primitive.translation.z - tops[i]).abs() < 1e-6);
        let rep = refine_primitive(mp, &f, !covered, s)?;
        reports.push(rep);
    }
    Ok((out, reports))
}

fn refine_primitive(
    mp: &mut ModelPrimitive,
    f: &DistanceField,
    top_exposed: bool,
    s: &RefineSettings,
) -> Result<UnitRefine> {
    let mesh = mp.primitive.mesh(s.res)?;
    let kinds = data_kinds(top_exposed);
    let data = mesh.select(&kinds);
    let before = field_rms(&mesh, f, &kinds);
    let nodes = s.node_count.min(mesh.vertices.len() / 2);
    if nodes < 8 || data.is_empty() {
        *mp = ModelPrimitive::rigid(mp.primitive.clone());
        return Ok(UnitRefine {
            nodes: 0,
            rms_before: before,
            rms_after: before,
            iterations: 0,
            converged: true,
        });
    }
    let g = build_graph(&mesh.vertices, nodes, s.k)?;
    let (g, report) = solve_lm(&g, f, Some(&data), s.weights, &s.lm)?;
    let warped = g.warped_vertices();
    let after = if data.is_empty() {
        0.0
    } else {
        libm::sqrt(
            data.iter()
                .map(|&i| {
                    let v = f.sample(warped[i]).value;
                    v * v
                })
                .sum::<f64>()
                / data.len() as f64,
        )
    };
    *mp = ModelPrimitive::from_graph(mp.primitive.clone(), &g);
    Ok(UnitRefine {
        nodes: g.nodes.len(),
        rms_before: before,
        rms_after: after,
        iterations: report.iterations,
        converged: report.converged,
    })
}

/// Cut threshold for contours traced from a raster, 1/m. Raster contours
/// carry cell-sized jitter, so small ones score far above clean outlines.
pub const PIPELINE_MAX_DISTANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructSettings {
    pub division: DivisionSettings,
    pub field: FieldSettings,
    pub select: SelectSettings,
    pub refine: RefineSettings,
}

impl Default for ReconstructSettings {
    fn default() -> Self {
        Self {
            division: DivisionSettings {
                max_distance: PIPELINE_MAX_DISTANCE,
                profile: Some(ProfileSplit {
                    min_circularity: 0.6,
                    tolerance: 0.05,
                    ..ProfileSplit::default()
                }),
                min_cut_area: 6.0,
                ..DivisionSettings::default()
            },
            field: FieldSettings::default(),
            select: SelectSettings::default(),
            refine: RefineSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub model: BuildingModel,
    pub divisions: Vec<PrimitiveDivision>,
    pub fits: Vec<UnitFit>,
    pub refines: Vec<UnitRefine>,
}

/// All steps for one segmented cluster, in memory.
pub fn reconstruct_cluster(
    id: usize,
    cluster: &BuildingCluster,
    ground_z: f64,
    s: &ReconstructSettings,
) -> Result<Reconstruction> {
    let chains = cluster_chains(cluster, ground_z);
    let mut divided = Vec::with_capacity(chains.len());
    for c in chains {
        let d = divide_chain(&c.contours, &s.division)?;
        divided.push((c, d));
    }
    let (rigid, fits) = fit_units(id, &divided, &s.field, &s.select)?;
    let (model, refines) = refine_model(&rigid, &cluster.points, &s.field, &s.refine)?;
    Ok(Reconstruction {
        model,
        divisions: divided.into_iter().map(|(_, d)| d).collect(),
        fits,
        refines,
    })
}
