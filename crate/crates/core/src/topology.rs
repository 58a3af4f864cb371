//! Inner-nested clustering of contours into buildings and point segmentation.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::contour::{sort_contours, ContourSet};
use crate::geometry::{
    circularity, point_in_polygon, polygon_area, polygon_centroid, segments_intersect, Point2,
    Point3, PointCloud, Polygon,
};
use crate::{Error, Result};

/// Contours linked to the smallest contour one level down that contains
/// their centroid.
///
/// Only counter-clockwise contours (closed around higher ground) take part;
/// clockwise ones bound depressions such as courtyards and are kept aside in
/// `holes`.
#[derive(Debug, Clone, PartialEq)]
pub struct NestingForest {
    pub contours: Vec<Polygon>,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub areas: Vec<f64>,
    /// Contours whose own centroid falls outside them (crescents).
    pub flagged: Vec<usize>,
    pub holes: Vec<Polygon>,
    pub interval: f64,
    pub base: f64,
}

impl NestingForest {
    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    pub fn roots(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.parent[i].is_none()).collect()
    }

    /// All nodes of the tree under `root`, breadth first.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let mut out = vec![root];
        let mut i = 0;
        while i < out.len() {
            out.extend(self.children[out[i]].iter().copied());
            i += 1;
        }
        out
    }

    /// Longest root-to-leaf path length, in contours.
    pub fn depth(&self, root: usize) -> usize {
        1 + self.children[root]
            .iter()
            .map(|&c| self.depth(c))
            .max()
            .unwrap_or(0)
    }
}

fn bbox_overlap(a: &(Point2, Point2), b: &(Point2, Point2)) -> bool {
    a.0.x <= b.1.x && b.0.x <= a.1.x && a.0.y <= b.1.y && b.0.y <= a.1.y
}

fn crosses(a: &Polygon, b: &Polygon) -> bool {
    let bb: Vec<(Point2, Point2)> = b.edges().collect();
    a.edges().any(|(p, q)| {
        let (lo, hi) = (
            Point2::new(p.x.min(q.x), p.y.min(q.y)),
            Point2::new(p.x.max(q.x), p.y.max(q.y)),
        );
        bb.iter().any(|(r, s)| {
            let (lo2, hi2) = (
                Point2::new(r.x.min(s.x), r.y.min(s.y)),
                Point2::new(r.x.max(s.x), r.y.max(s.y)),
            );
            bbox_overlap(&(lo, hi), &(lo2, hi2)) && segments_intersect(p, q, *r, *s)
        })
    })
}

/// Builds the nesting forest. Input order does not matter: contours are put
/// in canonical order (elevation, centroid) first.
pub fn build_nesting_forest(cs: &ContourSet) -> Result<NestingForest> {
    if !(cs.interval > 0.0) {
        return Err(Error::invalid("contour interval must be positive"));
    }
    let mut all = cs.contours.clone();
    sort_contours(&mut all);
    let (contours, holes): (Vec<Polygon>, Vec<Polygon>) = all.into_iter().partition(|p| p.is_ccw());

    let n = contours.len();
    let mut areas = Vec::with_capacity(n);
    let mut centroids = Vec::with_capacity(n);
    let mut flagged = Vec::new();
    for (i, c) in contours.iter().enumerate() {
        areas.push(polygon_area(c)?);
        let ctr = polygon_centroid(c)?;
        if !point_in_polygon(ctr, c) {
            flagged.push(i);
        }
        centroids.push(ctr);
    }
    let boxes: Vec<(Point2, Point2)> = contours.iter().map(|c| c.bounds()).collect();

    let mut by_level: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, c) in contours.iter().enumerate() {
        by_level.entry(cs.level_of(c.elevation)).or_default().push(i);
    }

    for members in by_level.values() {
        for (a_pos, &a) in members.iter().enumerate() {
            for &b in &members[a_pos + 1..] {
                if bbox_overlap(&boxes[a], &boxes[b]) && crosses(&contours[a], &contours[b]) {
                    return Err(Error::Topology(format!(
                        "contours {a} and {b} cross at elevation {}",
                        contours[a].elevation
                    )));
                }
            }
        }
    }

    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    for (&level, members) in &by_level {
        let Some(below) = by_level.get(&(level - 1)) else {
            continue;
        };
        for &c in members {
            let ctr = centroids[c];
            let best = below
                .iter()
                .copied()
                .filter(|&p| {
                    let (lo, hi) = boxes[p];
                    ctr.x >= lo.x
                        && ctr.x <= hi.x
                        && ctr.y >= lo.y
                        && ctr.y <= hi.y
                        && point_in_polygon(ctr, &contours[p])
                })
                .min_by(|&a, &b| areas[a].total_cmp(&areas[b]).then(a.cmp(&b)));
            if let Some(p) = best {
                parent[c] = Some(p);
                children[p].push(c);
            }
        }
    }
    Ok(NestingForest {
        contours,
        parent,
        children,
        areas,
        flagged,
        holes,
        interval: cs.interval,
        base: cs.base,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeThresholds {
    pub min_area: f64,
    pub max_area: f64,
    pub min_height: f64,
    pub min_circularity: f64,
}

impl Default for AttributeThresholds {
    fn default() -> Self {
        Self {
            min_area: 20.0,
            max_area: 50_000.0,
            min_height: 2.5,
            min_circularity: 0.25,
        }
    }
}

/// One building: a tree of nested contours and, once segmented, its points.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildingCluster {
    /// Member contours; index 0 is the root (lowest, largest).
    pub contours: Vec<Polygon>,
    /// Parent of each member, as an index into `contours`.
    pub parent: Vec<Option<usize>>,
    pub footprint_area: f64,
    pub height: f64,
    /// Mean circularity of the member contours.
    pub circularity: f64,
    /// Members whose centroid lies outside themselves.
    pub flagged: Vec<usize>,
    pub points: PointCloud,
}

impl BuildingCluster {
    pub fn root(&self) -> &Polygon {
        &self.contours[0]
    }

    fn children(&self, i: usize) -> Vec<usize> {
        (0..self.contours.len())
            .filter(|&c| self.parent[c] == Some(i))
            .collect()
    }

    /// Decomposes the tree into vertical chains. A chain runs upward while a
    /// contour has exactly one child; at a branch every child opens a new
    /// chain.
    pub fn chains(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut starts = vec![0usize];
        while let Some(s) = starts.pop() {
            let mut chain = vec![s];
            let mut cur = s;
            loop {
                let ch = self.children(cur);
                match ch.len() {
                    0 => break,
                    1 => {
                        cur = ch[0];
                        chain.push(cur);
                    }
                    _ => {
                        starts.extend(ch.into_iter().rev());
                        break;
                    }
                }
            }
            out.push(chain);
        }
        out
    }

    /// Member contours of a chain, in elevation order.
    pub fn chain_contours(&self, chain: &[usize]) -> Vec<Polygon> {
        chain.iter().map(|&i| self.contours[i].clone()).collect()
    }
}

/// Keeps the trees whose attributes look like a building.
pub fn extract_buildings(f: &NestingForest, t: &AttributeThresholds) -> Vec<BuildingCluster> {
    let mut out = Vec::new();
    for root in f.roots() {
        let members = f.subtree(root);
        if members.len() < 2 {
            continue;
        }
        let area = f.areas[root];
        let (lo, hi) = members.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &m| {
            let e = f.contours[m].elevation;
            (lo.min(e), hi.max(e))
        });
        let height = hi - lo;
        let circ = members
            .iter()
            .map(|&m| circularity(&f.contours[m]).unwrap_or(0.0))
            .sum::<f64>()
            / members.len() as f64;
        if area < t.min_area || area > t.max_area || height < t.min_height || circ < t.min_circularity {
            continue;
        }
        let local: BTreeMap<usize, usize> = members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        out.push(BuildingCluster {
            contours: members.iter().map(|&m| f.contours[m].clone()).collect(),
            parent: members
                .iter()
                .map(|&m| f.parent[m].and_then(|p| local.get(&p).copied()))
                .collect(),
            footprint_area: area,
            height,
            circularity: circ,
            flagged: members
                .iter()
                .enumerate()
                .filter(|(_, m)| f.flagged.contains(m))
                .map(|(i, _)| i)
                .collect(),
            points: Vec::new(),
        });
    }
    out
}

fn in_footprint(p: &Point3, root: &Polygon, bounds: &(Point2, Point2)) -> bool {
    let q = p.xy();
    p.z >= root.elevation
        && q.x >= bounds.0.x
        && q.x <= bounds.1.x
        && q.y >= bounds.0.y
        && q.y <= bounds.1.y
        && point_in_polygon(q, root)
}

/// Points inside the building's root contour (boundary included) and at or
/// above its elevation.
pub fn segment_points(pc: &[Point3], b: &BuildingCluster) -> Result<PointCloud> {
    let root = b.root();
    let bounds = root.bounds();
    let out: PointCloud = pc
        .iter()
        .filter(|p| in_footprint(p, root, &bounds))
        .copied()
        .collect();
    if out.is_empty() {
        return Err(Error::empty("building segment has no points"));
    }
    Ok(out)
}

/// Segments every building; a point goes to the first building that claims
/// it, so segments are disjoint. Buildings without points get an empty
/// cloud.
pub fn segment_all(pc: &[Point3], buildings: &[BuildingCluster]) -> Vec<PointCloud> {
    let bounds: Vec<(Point2, Point2)> = buildings.iter().map(|b| b.root().bounds()).collect();
    let mut out = vec![Vec::new(); buildings.len()];
    for p in pc {
        if let Some(i) = (0..buildings.len()).find(|&i| in_footprint(p, buildings[i].root(), &bounds[i])) {
            out[i].push(*p);
        }
    }
    out
}
