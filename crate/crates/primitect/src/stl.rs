//! ASCII stereolithography export of the warped model.

use std::fmt::Write as _;

use primitect_core::model::{BuildingModel, CompactModel};
use primitect_core::primitives::{Mesh, MeshResolution};
use primitect_core::Point3;

use crate::error::{Failure, Result};

/// Triangles shorter than this in twice-area are not written.
const MIN_DOUBLE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct StlExport {
    pub text: String,
    pub facets: usize,
    /// Degenerate triangles left out.
    pub skipped: usize,
}

fn facets(out: &mut String, mesh: &Mesh) -> (usize, usize) {
    let (mut written, mut skipped) = (0, 0);
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let n = (b - a).cross(c - a);
        let len = n.norm();
        if !(len > MIN_DOUBLE_AREA) {
            skipped += 1;
            continue;
        }
        let n = n / len;
        let _ = writeln!(out, "  facet normal {:.6} {:.6} {:.6}", n.x, n.y, n.z);
        out.push_str("    outer loop\n");
        for v in [a, b, c] {
            let _ = writeln!(out, "      vertex {:.6} {:.6} {:.6}", v.x, v.y, v.z);
        }
        out.push_str("    endloop\n  endfacet\n");
        written += 1;
    }
    (written, skipped)
}

fn solid(name: &str, meshes: &[Mesh]) -> StlExport {
    let mut text = format!("solid {name}\n");
    let (mut n, mut skipped) = (0, 0);
    for m in meshes {
        let (a, b) = facets(&mut text, m);
        n += a;
        skipped += b;
    }
    let _ = writeln!(text, "endsolid {name}");
    StlExport {
        text,
        facets: n,
        skipped,
    }
}

fn solid_name(hash: &str) -> String {
    if hash.is_empty() {
        String::from("primitect")
    } else {
        format!("primitect-{hash}")
    }
}

/// Every primitive meshed at `res`, pushed through its deformation graph.
pub fn export_mesh(m: &CompactModel, res: MeshResolution) -> Result<StlExport> {
    let meshes = m
        .buildings
        .iter()
        .flat_map(|b| &b.primitives)
        .map(|p| p.warped_mesh(res))
        .collect::<primitect_core::Result<Vec<_>>>()?;
    Ok(solid(&solid_name(&m.meta.config_hash), &meshes))
}

/// One building on its own, for per-building storage accounting.
pub fn export_building(b: &BuildingModel, res: MeshResolution, hash: &str) -> Result<StlExport> {
    let meshes = b
        .primitives
        .iter()
        .map(|p| p.warped_mesh(res))
        .collect::<primitect_core::Result<Vec<_>>>()?;
    Ok(solid(&solid_name(hash), &meshes))
}

/// Reads the triangles of an ASCII file back; normals are ignored.
pub fn parse_stl(text: &str) -> Result<Vec<[Point3; 3]>> {
    let err = |n: usize, msg: &str| Failure::format(format!("stl line {}: {msg}", n + 1));
    let mut lines = text.lines().enumerate().map(|(i, l)| (i, l.trim()));
    match lines.next() {
        Some((_, l)) if l.starts_with("solid") => {}
        _ => return Err(err(0, "missing `solid` header")),
    }
    let mut tris = Vec::new();
    let mut cur: Vec<Point3> = Vec::with_capacity(3);
    let mut ended = false;
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        if ended {
            return Err(err(i, "content after endsolid"));
        }
        let mut it = l.split_whitespace();
        match it.next() {
            Some("facet") | Some("outer") => {}
            Some("vertex") => {
                let v: Vec<f64> = it
                    .map(|t| t.parse::<f64>().map_err(|_| err(i, "bad vertex coordinate")))
                    .collect::<Result<_>>()?;
                if v.len() != 3 {
                    return Err(err(i, "vertex needs three coordinates"));
                }
                cur.push(Point3::new(v[0], v[1], v[2]));
            }
            Some("endloop") => {
                let tri: [Point3; 3] = cur
                    .as_slice()
                    .try_into()
                    .map_err(|_| err(i, "loop without exactly three vertices"))?;
                tris.push(tri);
                cur.clear();
            }
            Some("endfacet") => {}
            Some("endsolid") => ended = true,
            _ => return Err(err(i, "unexpected line")),
        }
    }
    if !ended {
        return Err(Failure::format("stl: missing endsolid"));
    }
    Ok(tris)
}
