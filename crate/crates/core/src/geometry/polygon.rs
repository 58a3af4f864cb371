use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::Point2;
use crate::{Error, Result};

/// Closed planar polygon at a fixed elevation. The last vertex connects back
/// to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point2>,
    pub elevation: f64,
}

impl Polygon {
    /// Validating constructor: at least three finite vertices, no repeated
    /// consecutive vertex, non-zero signed area.
    pub fn new(vertices: Vec<Point2>, elevation: f64) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if !elevation.is_finite() || vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("polygon has non-finite coordinates"));
        }
        let n = vertices.len();
        if (0..n).any(|i| vertices[i] == vertices[(i + 1) % n]) {
            return Err(Error::invalid("polygon has repeated consecutive vertices"));
        }
        if signed_area(&vertices) == 0.0 {
            return Err(Error::degenerate("polygon has zero area"));
        }
        Ok(Self {
            vertices,
            elevation,
        })
    }

    /// Builds a polygon without validation; operations re-check what they need.
    pub fn raw(vertices: Vec<Point2>, elevation: f64) -> Self {
        Self {
            vertices,
            elevation,
        }
    }

    #[inline]
    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn into_vertices(self) -> Vec<Point2> {
        self.vertices
    }

    /// Edges as `(start, end)` pairs, closing edge included.
    pub fn edges(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn is_ccw(&self) -> bool {
        signed_area(&self.vertices) > 0.0
    }

    /// Same polygon with counter-clockwise winding.
    pub fn to_ccw(&self) -> Polygon {
        let mut out = self.clone();
        if !self.is_ccw() {
            out.vertices.reverse();
        }
        out
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Point2, Point2) {
        let first = self.vertices.first().copied().unwrap_or_default();
        self.vertices.iter().fold((first, first), |(lo, hi), p| {
            (
                Point2::new(lo.x.min(p.x), lo.y.min(p.y)),
                Point2::new(hi.x.max(p.x), hi.y.max(p.y)),
            )
        })
    }

    pub fn map(&self, f: impl Fn(Point2) -> Point2) -> Polygon {
        Polygon::raw(self.vertices.iter().map(|p| f(*p)).collect(), self.elevation)
    }
}

fn check_len(p: &Polygon) -> Result<()> {
    if p.len() < 3 {
        Err(Error::invalid(format!(
            "polygon needs at least 3 vertices, got {}",
            p.len()
        )))
    } else {
        Ok(())
    }
}

/// Shoelace signed area (positive for counter-clockwise winding).
///
/// Coordinates are taken relative to the vertex mean so the result does not
/// depend on which vertex the list starts at beyond summation order.
pub fn signed_area(vertices: &[Point2]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let origin = vertices.iter().fold(Point2::ZERO, |a, p| a + *p) / n as f64;
    let mut twice = 0.0;
    for i in 0..n {
        let a = vertices[i] - origin;
        let b = vertices[(i + 1) % n] - origin;
        twice += a.cross(b);
    }
    0.5 * twice
}

pub fn polygon_area(p: &Polygon) -> Result<f64> {
    check_len(p)?;
    Ok(libm::fabs(signed_area(p.vertices())))
}

/// Signed-area weighted centroid; correct for concave polygons.
pub fn polygon_centroid(p: &Polygon) -> Result<Point2> {
    check_len(p)?;
    let v = p.vertices();
    let n = v.len();
    let origin = v.iter().fold(Point2::ZERO, |a, q| a + *q) / n as f64;
    let mut twice_area = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = v[i] - origin;
        let b = v[(i + 1) % n] - origin;
        let w = a.cross(b);
        twice_area += w;
        cx += (a.x + b.x) * w;
        cy += (a.y + b.y) * w;
    }
    let scale = v
        .iter()
        .map(|q| (*q - origin).norm_sq())
        .fold(0.0, f64::max);
    if libm::fabs(twice_area) <= 1e-14 * scale {
        return Err(Error::degenerate("centroid of a zero-area polygon"));
    }
    Ok(origin + Point2::new(cx, cy) / (3.0 * twice_area))
}

pub fn point_segment_distance(q: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len_sq = ab.norm_sq();
    if len_sq == 0.0 {
        return q.distance(a);
    }
    let s = ((q - a).dot(ab) / len_sq).clamp(0.0, 1.0);
    q.distance(a + ab * s)
}

const BOUNDARY_EPS: f64 = 1e-9;

/// Even-odd containment; points on the boundary count as inside.
pub fn point_in_polygon(q: Point2, p: &Polygon) -> bool {
    let v = p.vertices();
    let n = v.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = v[i];
        let b = v[j];
        if point_segment_distance(q, a, b) <= BOUNDARY_EPS {
            return true;
        }
        if (a.y > q.y) != (b.y > q.y) {
            let x_cross = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if q.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn perimeter(p: &Polygon) -> f64 {
    p.edges().map(|(a, b)| a.distance(b)).sum()
}

/// `4π·area / perimeter²`; 1 for a circle, smaller for anything else.
pub fn circularity(p: &Polygon) -> Result<f64> {
    let area = polygon_area(p)?;
    let per = perimeter(p);
    if area == 0.0 || per == 0.0 {
        return Err(Error::degenerate("circularity of a zero-area polygon"));
    }
    Ok(4.0 * PI * area / (per * per))
}

/// Resamples the boundary to `n` points at equal arc-length spacing.
///
/// The output is counter-clockwise and starts at the boundary point furthest
/// along +x from the centroid (lowest y on ties), which is always a vertex of
/// the input. That makes correspondences between contours reproducible.
pub fn resample_closed(p: &Polygon, n: usize) -> Result<Polygon> {
    if n < 3 {
        return Err(Error::invalid(format!("resample count {n} < 3")));
    }
    check_len(p)?;
    let ccw = p.to_ccw();
    let mut verts: Vec<Point2> = Vec::with_capacity(ccw.len());
    for v in ccw.vertices() {
        if verts.last() != Some(v) {
            verts.push(*v);
        }
    }
    while verts.len() > 1 && verts.first() == verts.last() {
        verts.pop();
    }
    if verts.len() < 3 || signed_area(&verts) == 0.0 {
        return Err(Error::degenerate("cannot resample a zero-area polygon"));
    }
    let start = verts
        .iter()
        .enumerate()
        .fold(0usize, |best, (i, v)| {
            let b = verts[best];
            if v.x > b.x || (v.x == b.x && v.y < b.y) {
                i
            } else {
                best
            }
        });
    verts.rotate_left(start);

    let m = verts.len();
    let mut cumulative = Vec::with_capacity(m + 1);
    cumulative.push(0.0);
    for i in 0..m {
        let len = verts[i].distance(verts[(i + 1) % m]);
        cumulative.push(cumulative[i] + len);
    }
    let total = cumulative[m];

    let mut out = Vec::with_capacity(n);
    let mut seg = 0usize;
    for k in 0..n {
        let s = total * k as f64 / n as f64;
        while seg + 1 < m && cumulative[seg + 1] <= s {
            seg += 1;
        }
        let len = cumulative[seg + 1] - cumulative[seg];
        let t = if len > 0.0 {
            ((s - cumulative[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        out.push(verts[seg].lerp(verts[(seg + 1) % m], t));
    }
    Ok(Polygon::raw(out, p.elevation))
}

/// Proper or touching intersection test between segments `ab` and `cd`.
pub fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    fn orient(p: Point2, q: Point2, r: Point2) -> f64 {
        (q - p).cross(r - p)
    }
    fn on_segment(p: Point2, q: Point2, r: Point2) -> bool {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    }
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn dp_open(points: &[Point2], tol: f64, keep: &mut [bool], lo: usize, hi: usize) {
    if hi <= lo + 1 {
        return;
    }
    let (mut worst, mut worst_d) = (lo, -1.0);
    for i in lo + 1..hi {
        let d = point_segment_distance(points[i], points[lo], points[hi]);
        if d > worst_d {
            worst = i;
            worst_d = d;
        }
    }
    if worst_d > tol {
        keep[worst] = true;
        dp_open(points, tol, keep, lo, worst);
        dp_open(points, tol, keep, worst, hi);
    }
}

/// Douglas-Peucker on a closed ring. The ring is split at vertex 0 and the
/// vertex furthest from it; both halves are simplified independently.
pub fn douglas_peucker_closed(ring: &[Point2], tol: f64) -> Vec<Point2> {
    let n = ring.len();
    if n <= 3 {
        return ring.to_vec();
    }
    let far = (1..n)
        .max_by(|&i, &j| {
            ring[i]
                .distance(ring[0])
                .total_cmp(&ring[j].distance(ring[0]))
                .then(j.cmp(&i))
        })
        .unwrap_or(n / 2);
    let mut closed: Vec<Point2> = ring.to_vec();
    closed.push(ring[0]);
    let mut keep = alloc::vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    dp_open(&closed, tol, &mut keep, 0, far);
    dp_open(&closed, tol, &mut keep, far, n);
    (0..n).filter(|&i| keep[i]).map(|i| ring[i]).collect()
}

/// Symmetric Hausdorff distance between two closed polylines, evaluated on
/// boundary samples spaced at most `step` apart.
pub fn hausdorff_closed(a: &[Point2], b: &[Point2], step: f64) -> f64 {
    fn densify(ring: &[Point2], step: f64) -> Vec<Point2> {
        let n = ring.len();
        let mut out = Vec::new();
        for i in 0..n {
            let p = ring[i];
            let q = ring[(i + 1) % n];
            let k = libm::ceil(p.distance(q) / step).max(1.0) as usize;
            for s in 0..k {
                out.push(p.lerp(q, s as f64 / k as f64));
            }
        }
        out
    }
    fn directed(from: &[Point2], to: &[Point2]) -> f64 {
        let n = to.len();
        from.iter()
            .map(|p| {
                (0..n)
                    .map(|i| point_segment_distance(*p, to[i], to[(i + 1) % n]))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
    let da = densify(a, step);
    let db = densify(b, step);
    directed(&da, b).max(directed(&db, a))
}
