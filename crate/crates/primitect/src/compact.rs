//! The compact model file.
//!
//! ```text
//! primitect-model 1
//! [meta]
//! units m
//! contour_interval 1.0000
//! config_hash 3f2a...
//! buildings 1
//! [building 0]
//! primitives 1
//! [primitive 0]
//! type cone
//! params 6.0000 -0.5000 8.0000
//! rotation 1.0000 0.0000 0.0000 0.0000 1.0000 0.0000 0.0000 0.0000 1.0000
//! translation 3.0000 -2.0000 0.0000
//! [edgraph 0]
//! k 4
//! nodes 2
//! b_x b_y b_z A_11 .. A_33 t_x t_y t_z
//! ...
//! ```
//!
//! Every number is written with four decimals. Polyhedron params are
//! `height n` followed by the `n` bottom and then the `n` top corners as
//! `x y` pairs. Writing quantises the model first, so parsing a written file
//! and writing it again reproduces it byte for byte.

use std::fmt::Write as _;

use primitect_core::deform::EdNode;
use primitect_core::model::{BuildingModel, CompactModel, ModelMeta, ModelPrimitive, MAX_ED_NODES};
use primitect_core::primitives::{PosedPrimitive, PrimitiveKind, PrimitiveParams};
use primitect_core::{Mat3, Point2, Point3};

use crate::error::{Failure, Result};

const MAGIC: &str = "primitect-model";
const VERSION: u32 = 1;
const STEP: f64 = 1e-4;

fn q(x: f64) -> f64 {
    // integer / 1e4 is the correctly rounded decimal, same as parsing it
    let r = (x / STEP).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn q3(p: Point3) -> Point3 {
    Point3::new(q(p.x), q(p.y), q(p.z))
}

fn q_mat(m: &Mat3) -> Mat3 {
    Mat3(m.0.map(|row| row.map(q)))
}

fn q_params(p: &PrimitiveParams) -> Result<PrimitiveParams> {
    let mut out = match p {
        PrimitiveParams::Hemisphere {
            radius,
            center_z,
            height,
        } => PrimitiveParams::Hemisphere {
            radius: q(*radius),
            center_z: q(*center_z),
            height: q(*height),
        },
        PrimitiveParams::Cone { base_radius, a, height } => PrimitiveParams::Cone {
            base_radius: q(*base_radius),
            a: q(*a),
            height: q(*height),
        },
        PrimitiveParams::Cylinder { radius, height } => PrimitiveParams::Cylinder {
            radius: q(*radius),
            height: q(*height),
        },
        PrimitiveParams::Polyhedron { bottom, top, height } => {
            let qc = |c: &Vec<Point2>| c.iter().map(|p| Point2::new(q(p.x), q(p.y))).collect();
            PrimitiveParams::Polyhedron {
                bottom: qc(bottom),
                top: qc(top),
                height: q(*height),
            }
        }
    };
    // rounding can push a sphere zone or a cone apex just past its limit;
    // nudge by whole steps until it is valid again
    for _ in 0..10 {
        if out.validate().is_ok() {
            return Ok(out);
        }
        match &mut out {
            PrimitiveParams::Hemisphere { radius, .. } => *radius = q(*radius + STEP),
            PrimitiveParams::Cone { height, .. } => *height = q(*height - STEP),
            _ => break,
        }
    }
    out.validate()?;
    Ok(out)
}

/// The model as it reads back from its compact file.
pub fn quantize_model(m: &CompactModel) -> Result<CompactModel> {
    let mut out = CompactModel {
        meta: ModelMeta {
            contour_interval: q(m.meta.contour_interval),
            ..m.meta.clone()
        },
        buildings: Vec::with_capacity(m.buildings.len()),
    };
    for b in &m.buildings {
        let mut prims = Vec::with_capacity(b.primitives.len());
        for p in &b.primitives {
            p.validate()?;
            prims.push(ModelPrimitive {
                primitive: PosedPrimitive {
                    params: q_params(&p.primitive.params)?,
                    rotation: q_mat(&p.primitive.rotation),
                    translation: q3(p.primitive.translation),
                },
                k: p.k,
                nodes: p
                    .nodes
                    .iter()
                    .map(|n| EdNode {
                        b: q3(n.b),
                        a: q_mat(&n.a),
                        t: q3(n.t),
                    })
                    .collect(),
            });
        }
        out.buildings.push(BuildingModel {
            id: b.id,
            primitives: prims,
        });
    }
    Ok(out)
}

fn num(s: &mut String, x: f64) {
    if !s.is_empty() && !s.ends_with(' ') && !s.ends_with('\n') {
        s.push(' ');
    }
    let _ = write!(s, "{x:.4}");
}

fn params_line(p: &PrimitiveParams) -> String {
    let mut s = String::new();
    match p {
        PrimitiveParams::Hemisphere {
            radius,
            center_z,
            height,
        } => [*radius, *center_z, *height].iter().for_each(|v| num(&mut s, *v)),
        PrimitiveParams::Cone { base_radius, a, height } => {
            [*base_radius, *a, *height].iter().for_each(|v| num(&mut s, *v))
        }
        PrimitiveParams::Cylinder { radius, height } => {
            [*radius, *height].iter().for_each(|v| num(&mut s, *v))
        }
        PrimitiveParams::Polyhedron { bottom, top, height } => {
            num(&mut s, *height);
            let _ = write!(s, " {}", bottom.len());
            for c in bottom.iter().chain(top) {
                num(&mut s, c.x);
                num(&mut s, c.y);
            }
        }
    }
    s
}

fn building_text(out: &mut String, b: &BuildingModel) {
    let _ = writeln!(out, "[building {}]", b.id);
    let _ = writeln!(out, "primitives {}", b.primitives.len());
    for (j, p) in b.primitives.iter().enumerate() {
        let pp = &p.primitive;
        let _ = writeln!(out, "[primitive {j}]");
        let _ = writeln!(out, "type {}", pp.kind().name());
        let _ = writeln!(out, "params {}", params_line(&pp.params));
        let mut r = String::new();
        pp.rotation.to_row_major().iter().for_each(|v| num(&mut r, *v));
        let _ = writeln!(out, "rotation {r}");
        let mut t = String::new();
        pp.translation.to_array().iter().for_each(|v| num(&mut t, *v));
        let _ = writeln!(out, "translation {t}");
        let _ = writeln!(out, "[edgraph {j}]");
        let _ = writeln!(out, "k {}", p.k);
        let _ = writeln!(out, "nodes {}", p.nodes.len());
        for n in &p.nodes {
            let mut line = String::new();
            n.b.to_array().iter().for_each(|v| num(&mut line, *v));
            n.a.to_row_major().iter().for_each(|v| num(&mut line, *v));
            n.t.to_array().iter().for_each(|v| num(&mut line, *v));
            out.push_str(&line);
            out.push('\n');
        }
    }
}

/// Writes the model. Fails on an invalid model or a graph above the node cap.
pub fn serialize_model(m: &CompactModel) -> Result<String> {
    let m = quantize_model(m)?;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC} {VERSION}");
    let _ = writeln!(out, "[meta]");
    let _ = writeln!(out, "units {}", m.meta.units);
    let _ = writeln!(out, "contour_interval {:.4}", m.meta.contour_interval);
    let _ = writeln!(out, "config_hash {}", m.meta.config_hash);
    let _ = writeln!(out, "buildings {}", m.buildings.len());
    for b in &m.buildings {
        building_text(&mut out, b);
    }
    Ok(out)
}

/// Bytes one building adds to a compact file.
pub fn building_bytes(b: &BuildingModel) -> Result<usize> {
    let m = quantize_model(&CompactModel {
        meta: ModelMeta::default(),
        buildings: vec![b.clone()],
    })?;
    let mut s = String::new();
    building_text(&mut s, &m.buildings[0]);
    Ok(s.len())
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Failure {
        Failure::format(format!("compact model line {}: {msg}", self.line))
    }

    fn next(&mut self) -> Result<&'a str> {
        match self.it.next() {
            Some((i, l)) => {
                self.line = i + 1;
                Ok(l)
            }
            None => Err(Failure::format("compact model ends early")),
        }
    }

    /// Next line, which must read `key rest`; returns `rest`.
    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let l = self.next()?;
        match l.split_once(' ') {
            Some((k, rest)) if k == key => Ok(rest),
            _ if l == key => Ok(""),
            _ => Err(self.err(format!("expected `{key}`, got {l:?}"))),
        }
    }

    fn section(&mut self, name: &str, index: Option<usize>) -> Result<usize> {
        let l = self.next()?;
        let inner = l
            .strip_prefix('[')
            .and_then(|s| s.strip_suffix(']'))
            .ok_or_else(|| self.err(format!("expected [{name}], got {l:?}")))?;
        let mut parts = inner.split(' ');
        if parts.next() != Some(name) {
            return Err(self.err(format!("expected [{name}], got {l:?}")));
        }
        match (parts.next(), index) {
            (None, None) => Ok(0),
            (Some(i), _) => {
                let i: usize = i.parse().map_err(|_| self.err(format!("bad index in {l:?}")))?;
                if index.is_some_and(|want| want != i) {
                    return Err(self.err(format!("expected [{name} {}], got {l:?}", index.unwrap())));
                }
                Ok(i)
            }
            (None, Some(_)) => Err(self.err(format!("missing index in {l:?}"))),
        }
    }

    fn count(&mut self, key: &str) -> Result<usize> {
        let v = self.keyed(key)?;
        v.parse().map_err(|_| self.err(format!("bad count {v:?}")))
    }

    fn numbers(&self, s: &str) -> Result<Vec<f64>> {
        s.split(' ')
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| self.err(format!("bad number {t:?}")))
            })
            .collect()
    }

    fn fixed(&self, s: &str, n: usize) -> Result<Vec<f64>> {
        let v = self.numbers(s)?;
        if v.len() != n {
            return Err(self.err(format!("expected {n} numbers, got {}", v.len())));
        }
        Ok(v)
    }
}

fn parse_params(l: &Lines, kind: PrimitiveKind, s: &str) -> Result<PrimitiveParams> {
    let p = match kind {
        PrimitiveKind::Hemisphere => {
            let v = l.fixed(s, 3)?;
            PrimitiveParams::Hemisphere {
                radius: v[0],
                center_z: v[1],
                height: v[2],
            }
        }
        PrimitiveKind::Cone => {
            let v = l.fixed(s, 3)?;
            PrimitiveParams::Cone {
                base_radius: v[0],
                a: v[1],
                height: v[2],
            }
        }
        PrimitiveKind::Cylinder => {
            let v = l.fixed(s, 2)?;
            PrimitiveParams::Cylinder {
                radius: v[0],
                height: v[1],
            }
        }
        PrimitiveKind::Polyhedron => {
            let (h, rest) = s.split_once(' ').ok_or_else(|| l.err("polyhedron params too short"))?;
            let (n, rest) = rest.split_once(' ').ok_or_else(|| l.err("polyhedron params too short"))?;
            let height = l.fixed(h, 1)?[0];
            let n: usize = n.parse().map_err(|_| l.err(format!("bad corner count {n:?}")))?;
            let v = l.fixed(rest, 4 * n)?;
            let pts: Vec<Point2> = v.chunks(2).map(|c| Point2::new(c[0], c[1])).collect();
            PrimitiveParams::Polyhedron {
                bottom: pts[..n].to_vec(),
                top: pts[n..].to_vec(),
                height,
            }
        }
    };
    p.validate().map_err(|e| l.err(e))?;
    Ok(p)
}

fn mat(v: &[f64]) -> Mat3 {
    Mat3::from_row_major(&[v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]])
}

pub fn parse_model(text: &str) -> Result<CompactModel> {
    let mut l = Lines {
        it: text.lines().enumerate(),
        line: 0,
    };
    let head = l.next()?;
    if head != format!("{MAGIC} {VERSION}") {
        return Err(l.err(format!("unsupported header {head:?}")));
    }
    l.section("meta", None)?;
    let units = l.keyed("units")?.to_string();
    let ci = l.keyed("contour_interval")?;
    let contour_interval = l.fixed(ci, 1)?[0];
    let config_hash = l.keyed("config_hash")?.to_string();
    let nb = l.count("buildings")?;
    let mut buildings = Vec::with_capacity(nb);
    for _ in 0..nb {
        let id = l.section("building", None)?;
        let np = l.count("primitives")?;
        let mut primitives = Vec::with_capacity(np);
        for j in 0..np {
            l.section("primitive", Some(j))?;
            let t = l.keyed("type")?;
            let kind = PrimitiveKind::from_name(t).ok_or_else(|| l.err(format!("unknown type {t:?}")))?;
            let ps = l.keyed("params")?;
            let params = parse_params(&l, kind, ps)?;
            let r = l.keyed("rotation")?;
            let rotation = mat(&l.fixed(r, 9)?);
            // four decimals keep a rotation proper to about 1e-4
            if !rotation.is_rotation(1e-3) {
                return Err(l.err("rotation is not a proper rotation"));
            }
            let t = l.keyed("translation")?;
            let t = l.fixed(t, 3)?;
            l.section("edgraph", Some(j))?;
            let k = l.count("k")?;
            if k == 0 {
                return Err(l.err("neighbour count must be positive"));
            }
            let nn = l.count("nodes")?;
            if nn > MAX_ED_NODES {
                return Err(l.err(format!("{nn} nodes exceed the limit of {MAX_ED_NODES}")));
            }
            let mut nodes = Vec::with_capacity(nn);
            for _ in 0..nn {
                let line = l.next()?;
                let v = l.fixed(line, 15)?;
                nodes.push(EdNode {
                    b: Point3::new(v[0], v[1], v[2]),
                    a: mat(&v[3..12]),
                    t: Point3::new(v[12], v[13], v[14]),
                });
            }
            primitives.push(ModelPrimitive {
                primitive: PosedPrimitive {
                    params,
                    rotation,
                    translation: Point3::new(t[0], t[1], t[2]),
                },
                k,
                nodes,
            });
        }
        buildings.push(BuildingModel { id, primitives });
    }
    if let Some((i, extra)) = l.it.find(|(_, s)| !s.trim().is_empty()) {
        return Err(Failure::format(format!(
            "compact model line {}: unexpected trailing content {extra:?}",
            i + 1
        )));
    }
    Ok(CompactModel {
        meta: ModelMeta {
            units,
            contour_interval,
            config_hash,
        },
        buildings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model() -> CompactModel {
        let cone = PosedPrimitive::new(
            PrimitiveParams::Cone {
                base_radius: 6.0,
                a: -0.5,
                height: 8.0,
            },
            Mat3::rot_z(0.3),
            Point3::new(3.0, -2.0, 0.0),
        )
        .unwrap();
        let poly = PosedPrimitive::new(
            PrimitiveParams::Polyhedron {
                bottom: vec![Point2::new(0.0, 0.0), Point2::new(4.0, 0.0), Point2::new(0.0, 3.0)],
                top: vec![Point2::new(0.5, 0.2), Point2::new(3.5, 0.2), Point2::new(0.5, 2.5)],
                height: 5.0,
            },
            Mat3::IDENTITY,
            Point3::new(10.0, 1.0, 0.0),
        )
        .unwrap();
        let mut node = EdNode::at(Point3::new(1.0, 2.0, 3.0));
        node.t = Point3::new(0.1, -0.2, 0.0);
        node.a.0[0][1] = 0.05;
        CompactModel {
            meta: ModelMeta {
                config_hash: String::from("abc123"),
                ..ModelMeta::default()
            },
            buildings: vec![
                BuildingModel {
                    id: 0,
                    primitives: vec![
                        ModelPrimitive {
                            primitive: cone,
                            k: 4,
                            nodes: vec![node, EdNode::at(Point3::new(0.0, 0.0, 1.0 / 3.0))],
                        },
                        ModelPrimitive::rigid(poly),
                    ],
                },
                BuildingModel {
                    id: 3,
                    primitives: Vec::new(),
                },
            ],
        }
    }

    #[test]
    fn empty_model_is_header_only() {
        let s = serialize_model(&CompactModel::default()).unwrap();
        assert_eq!(s.lines().count(), 6);
        assert_eq!(parse_model(&s).unwrap(), CompactModel::default());
    }

    #[test]
    fn written_model_parses_to_its_quantised_self() {
        let m = sample_model();
        let s = serialize_model(&m).unwrap();
        let back = parse_model(&s).unwrap();
        assert_eq!(back, quantize_model(&m).unwrap());
        assert_eq!(serialize_model(&back).unwrap(), s);
        assert!(s.contains("[edgraph 1]\nk 4\nnodes 0\n"));
    }

    #[test]
    fn node_lines_carry_fifteen_numbers() {
        let s = serialize_model(&sample_model()).unwrap();
        let line = s.lines().find(|l| l.starts_with("1.0000 2.0000 3.0000")).unwrap();
        assert_eq!(line.split(' ').count(), 15);
    }

    #[test]
    fn oversized_graph_is_refused() {
        let mut m = sample_model();
        m.buildings[0].primitives[0].nodes = vec![EdNode::at(Point3::ZERO); MAX_ED_NODES + 1];
        assert!(serialize_model(&m).is_err());
    }

    #[test]
    fn malformed_files_are_rejected() {
        let s = serialize_model(&sample_model()).unwrap();
        assert!(parse_model(&s.replace("type cone", "type torus")).is_err());
        assert!(parse_model(&s.replace("primitect-model 1", "primitect-model 2")).is_err());
        assert!(parse_model(&s.replace("nodes 2", "nodes 3")).is_err());
        assert!(parse_model(&format!("{s}junk\n")).is_err());
        let cut: String = s.lines().take(12).map(|l| format!("{l}\n")).collect();
        assert!(parse_model(&cut).is_err());
    }

    #[test]
    fn sphere_zone_at_its_limit_survives_rounding() {
        // centre + radius == height exactly before rounding
        let m = CompactModel {
            meta: ModelMeta::default(),
            buildings: vec![BuildingModel {
                id: 0,
                primitives: vec![ModelPrimitive::rigid(
                    PosedPrimitive::new(
                        PrimitiveParams::Hemisphere {
                            radius: 3.00004,
                            center_z: 0.00004,
                            height: 3.00008,
                        },
                        Mat3::IDENTITY,
                        Point3::ZERO,
                    )
                    .unwrap(),
                )],
            }],
        };
        let s = serialize_model(&m).unwrap();
        let back = parse_model(&s).unwrap();
        assert_eq!(serialize_model(&back).unwrap(), s);
    }

    fn arb_primitive() -> impl Strategy<Value = ModelPrimitive> {
        (
            0usize..3,
            1.0f64..10.0,
            0.1f64..1.0,
            1.0f64..10.0,
            -3.0f64..3.0,
            prop::array::uniform3(-100.0f64..100.0),
            prop::collection::vec(prop::array::uniform3(-50.0f64..50.0), 0..6),
        )
            .prop_map(|(kind, r, frac, h, yaw, t, nodes)| {
                let params = match kind {
                    0 => PrimitiveParams::Cylinder { radius: r, height: h },
                    1 => PrimitiveParams::Cone {
                        base_radius: r,
                        a: -h / (r * r * frac),
                        height: h,
                    },
                    _ => PrimitiveParams::Hemisphere {
                        radius: r,
                        center_z: 0.0,
                        height: r * frac,
                    },
                };
                let p = PosedPrimitive::new(params, Mat3::rot_z(yaw), Point3::from_array(t)).unwrap();
                ModelPrimitive {
                    primitive: p,
                    k: 4,
                    nodes: nodes
                        .into_iter()
                        .map(|b| {
                            let mut n = EdNode::at(Point3::from_array(b));
                            n.t = Point3::from_array(b) * 0.01;
                            n.a.0[1][2] = b[0] * 1e-3;
                            n
                        })
                        .collect(),
                }
            })
    }

    proptest! {
        #[test]
        fn serialize_parse_serialize_is_a_fixed_point(prims in prop::collection::vec(arb_primitive(), 0..4)) {
            let m = CompactModel {
                meta: ModelMeta::default(),
                buildings: vec![BuildingModel { id: 0, primitives: prims }],
            };
            let s = serialize_model(&m).unwrap();
            let back = parse_model(&s).unwrap();
            prop_assert_eq!(serialize_model(&back).unwrap(), s);
        }
    }
}
