//! Ground filtering, max-z gridding and contour tracing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::geometry::{bounds3, polygon_centroid, Point2, Point3, PointCloud, Polygon};
use crate::{Error, Result};

/// Gridded digital surface model. Samples sit at cell centres; `NaN` marks an
/// empty cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterDsm {
    pub origin: Point2,
    pub cell_size: f64,
    pub width: usize,
    pub height: usize,
    z: Vec<f64>,
}

impl RasterDsm {
    pub fn from_values(
        origin: Point2,
        cell_size: f64,
        width: usize,
        height: usize,
        z: Vec<f64>,
    ) -> Result<Self> {
        if cell_size <= 0.0 || !cell_size.is_finite() {
            return Err(Error::invalid("cell size must be positive"));
        }
        if z.len() != width * height {
            return Err(Error::invalid(format!(
                "raster of {width}x{height} needs {} values, got {}",
                width * height,
                z.len()
            )));
        }
        if z.iter().any(|v| v.is_infinite()) {
            return Err(Error::invalid("raster values must be finite or empty"));
        }
        Ok(Self {
            origin,
            cell_size,
            width,
            height,
            z,
        })
    }

    /// Elevation of cell `(ix, iy)`, `None` when empty or out of range.
    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        if ix >= self.width || iy >= self.height {
            return None;
        }
        let v = self.z[iy * self.width + ix];
        (!v.is_nan()).then_some(v)
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point2 {
        Point2::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn cell_of(&self, p: Point2) -> Option<(usize, usize)> {
        let fx = libm::floor((p.x - self.origin.x) / self.cell_size);
        let fy = libm::floor((p.y - self.origin.y) / self.cell_size);
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn max_value(&self) -> Option<f64> {
        self.z
            .iter()
            .filter(|v| !v.is_nan())
            .copied()
            .reduce(f64::max)
    }

    pub fn min_value(&self) -> Option<f64> {
        self.z
            .iter()
            .filter(|v| !v.is_nan())
            .copied()
            .reduce(f64::min)
    }
}

/// Closed contours traced at `base + k·interval`, `k ≥ 1`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContourSet {
    pub contours: Vec<Polygon>,
    pub interval: f64,
    pub base: f64,
}

impl ContourSet {
    pub fn len(&self) -> usize {
        self.contours.len()
    }

    pub fn is_empty(&self) -> bool {
        self.contours.is_empty()
    }

    /// Integer level index of an elevation.
    pub fn level_of(&self, elevation: f64) -> i64 {
        libm::round((elevation - self.base) / self.interval) as i64
    }
}

struct Grid {
    origin: Point2,
    cell: f64,
    w: usize,
    h: usize,
}

impl Grid {
    fn covering(pc: &[Point3], cell: f64) -> Result<Self> {
        if !(cell > 0.0 && cell.is_finite()) {
            return Err(Error::invalid("cell size must be positive"));
        }
        let (lo, hi) = bounds3(pc).ok_or_else(|| Error::empty("point cloud is empty"))?;
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("point cloud has non-finite coordinates"));
        }
        let w = libm::floor((hi.x - lo.x) / cell) as usize + 1;
        let h = libm::floor((hi.y - lo.y) / cell) as usize + 1;
        Ok(Self {
            origin: lo.xy(),
            cell,
            w,
            h,
        })
    }

    fn index(&self, p: Point3) -> usize {
        let ix = (libm::floor((p.x - self.origin.x) / self.cell) as usize).min(self.w - 1);
        let iy = (libm::floor((p.y - self.origin.y) / self.cell) as usize).min(self.h - 1);
        iy * self.w + ix
    }
}

/// Separable square-window min (`take_min`) or max filter.
fn window_filter(values: &[f64], w: usize, h: usize, radius: usize, take_min: bool) -> Vec<f64> {
    let pick = |a: f64, b: f64| if take_min { a.min(b) } else { a.max(b) };
    let init = if take_min {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    let mut rows = vec![init; values.len()];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = (lo..=hi).fold(init, |acc, xx| pick(acc, values[y * w + xx]));
        }
    }
    let mut out = vec![init; values.len()];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).fold(init, |acc, yy| pick(acc, rows[yy * w + x]));
        }
    }
    out
}

/// Per-point ground flag from a single-window morphological opening of the
/// minimum-z surface. A point is off-ground when it rises more than
/// `slope_tol · window · cell` above the opened surface.
pub fn classify_ground(
    pc: &[Point3],
    cell: f64,
    window: usize,
    slope_tol: f64,
) -> Result<Vec<bool>> {
    if pc.is_empty() {
        return Err(Error::empty("point cloud is empty"));
    }
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!(
            "filter window must be odd and >= 3, got {window}"
        )));
    }
    if !(slope_tol >= 0.0) {
        return Err(Error::invalid("slope tolerance must be non-negative"));
    }
    let grid = Grid::covering(pc, cell)?;
    let mut min_z = vec![f64::INFINITY; grid.w * grid.h];
    for p in pc {
        let i = grid.index(*p);
        min_z[i] = min_z[i].min(p.z);
    }
    let radius = window / 2;
    let mut eroded = window_filter(&min_z, grid.w, grid.h, radius, true);
    for v in eroded.iter_mut() {
        if v.is_infinite() {
            *v = f64::NEG_INFINITY;
        }
    }
    let opened = window_filter(&eroded, grid.w, grid.h, radius, false);
    let threshold = slope_tol * window as f64 * cell;
    Ok(pc
        .iter()
        .map(|p| p.z - opened[grid.index(*p)] <= threshold)
        .collect())
}

/// Removes ground points; returns the off-ground remainder in input order.
pub fn morphological_ground_filter(
    pc: &[Point3],
    cell: f64,
    window: usize,
    slope_tol: f64,
) -> Result<PointCloud> {
    let ground = classify_ground(pc, cell, window, slope_tol)?;
    Ok(pc
        .iter()
        .zip(ground)
        .filter(|(_, g)| !g)
        .map(|(p, _)| *p)
        .collect())
}

const FILL_RADIUS: isize = 3;

/// Max-z gridding. Empty cells take the value of the nearest occupied cell
/// within three cells (by centre distance, scan order on ties), else stay
/// empty.
pub fn rasterize_dsm(pc: &[Point3], cell: f64) -> Result<RasterDsm> {
    let grid = Grid::covering(pc, cell)?;
    let mut z = vec![f64::NAN; grid.w * grid.h];
    for p in pc {
        let i = grid.index(*p);
        if z[i].is_nan() || p.z > z[i] {
            z[i] = p.z;
        }
    }
    let (w, h) = (grid.w as isize, grid.h as isize);
    let mut filled = z.clone();
    for iy in 0..h {
        for ix in 0..w {
            if !z[(iy * w + ix) as usize].is_nan() {
                continue;
            }
            let mut best: Option<(isize, f64)> = None;
            for dy in -FILL_RADIUS..=FILL_RADIUS {
                for dx in -FILL_RADIUS..=FILL_RADIUS {
                    let (x, y) = (ix + dx, iy + dy);
                    if x < 0 || y < 0 || x >= w || y >= h {
                        continue;
                    }
                    let v = z[(y * w + x) as usize];
                    if v.is_nan() {
                        continue;
                    }
                    let d = dx * dx + dy * dy;
                    if best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, v));
                    }
                }
            }
            if let Some((_, v)) = best {
                filled[(iy * w + ix) as usize] = v;
            }
        }
    }
    RasterDsm::from_values(grid.origin, cell, grid.w, grid.h, filled)
}

/// Grid-edge identifier: horizontal edges `(i,j)-(i+1,j)` are even,
/// vertical edges `(i,j)-(i,j+1)` are odd.
type EdgeId = usize;

/// Traces closed iso-contours at `base + k·interval` for every `k ≥ 1` up to
/// the raster maximum.
///
/// Marching squares runs on the cell-centre lattice with the asymptotic
/// centre-average rule for saddles. Segments are oriented with the higher
/// side on the left, so contours around peaks come out counter-clockwise.
/// Chains that run into the raster border never close and are dropped, which
/// also drops partially observed objects.
pub fn trace_contours(dsm: &RasterDsm, interval: f64, base: f64) -> Result<ContourSet> {
    if !(interval > 0.0 && interval.is_finite()) {
        return Err(Error::invalid("contour interval must be positive"));
    }
    if !base.is_finite() {
        return Err(Error::invalid("contour base must be finite"));
    }
    let mut set = ContourSet {
        contours: Vec::new(),
        interval,
        base,
    };
    let Some(max_z) = dsm.max_value() else {
        return Ok(set);
    };
    let min_z = dsm.min_value().unwrap_or(base);
    let floor = min_z.min(base) - interval;
    let samples: Vec<f64> = dsm
        .values()
        .iter()
        .map(|v| if v.is_nan() { floor } else { *v })
        .collect();

    let mut k = 1i64;
    loop {
        let level = base + k as f64 * interval;
        if level > max_z {
            break;
        }
        for ring in trace_level(dsm, &samples, level) {
            let ring = merge_collinear(ring);
            if let Ok(poly) = Polygon::new(ring, level) {
                set.contours.push(poly);
            }
        }
        k += 1;
    }
    sort_contours(&mut set.contours);
    Ok(set)
}

/// Deterministic order: elevation, then centroid x, then centroid y.
pub fn sort_contours(contours: &mut [Polygon]) {
    let key = |p: &Polygon| {
        let c = polygon_centroid(p).unwrap_or_default();
        (p.elevation, c.x, c.y)
    };
    contours.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0)
            .then(ka.1.total_cmp(&kb.1))
            .then(ka.2.total_cmp(&kb.2))
    });
}

fn trace_level(dsm: &RasterDsm, samples: &[f64], level: f64) -> Vec<Vec<Point2>> {
    let (w, h) = (dsm.width, dsm.height);
    if w < 2 || h < 2 {
        return Vec::new();
    }
    let val = |i: usize, j: usize| samples[j * w + i];
    let inside = |i: usize, j: usize| val(i, j) >= level;
    let h_edge = |i: usize, j: usize| 2 * (j * w + i);
    let v_edge = |i: usize, j: usize| 2 * (j * w + i) + 1;

    // crossing point on the edge between lattice nodes p and q (p before q)
    let crossing = |pi: (usize, usize), qi: (usize, usize)| {
        let (vp, vq) = (val(pi.0, pi.1), val(qi.0, qi.1));
        let t = ((level - vp) / (vq - vp)).clamp(0.0, 1.0);
        dsm.cell_center(pi.0, pi.1).lerp(dsm.cell_center(qi.0, qi.1), t)
    };

    let mut next: BTreeMap<EdgeId, EdgeId> = BTreeMap::new();
    let mut points: BTreeMap<EdgeId, Point2> = BTreeMap::new();

    for j in 0..h - 1 {
        for i in 0..w - 1 {
            // corners counter-clockwise: a(i,j) b(i+1,j) c(i+1,j+1) d(i,j+1)
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let ins = corners.map(|(x, y)| inside(x, y));
            if ins.iter().all(|&b| b) || ins.iter().all(|&b| !b) {
                continue;
            }
            // edges e_k joins corner k to corner k+1; ids and canonical ends
            let edges = [
                (h_edge(i, j), corners[0], corners[1]),
                (v_edge(i + 1, j), corners[1], corners[2]),
                (h_edge(i, j + 1), corners[3], corners[2]),
                (v_edge(i, j), corners[0], corners[3]),
            ];
            let mut outs = [false; 4];
            let mut ins_e = [false; 4];
            for e in 0..4 {
                let (a, b) = (ins[e], ins[(e + 1) % 4]);
                outs[e] = a && !b;
                ins_e[e] = !a && b;
                if a != b {
                    let (id, p, q) = edges[e];
                    points.entry(id).or_insert_with(|| crossing(p, q));
                }
            }
            let saddle = ins == [true, false, true, false] || ins == [false, true, false, true];
            let centre_inside = (val(i, j) + val(i + 1, j) + val(i + 1, j + 1) + val(i, j + 1))
                / 4.0
                >= level;
            for e in 0..4 {
                if !outs[e] {
                    continue;
                }
                let partner = if saddle {
                    if centre_inside {
                        (e + 1) % 4
                    } else {
                        (e + 3) % 4
                    }
                } else {
                    (0..4).find(|&k| ins_e[k]).unwrap_or(e)
                };
                debug_assert!(ins_e[partner]);
                next.insert(edges[e].0, edges[partner].0);
            }
        }
    }

    let mut visited: BTreeMap<EdgeId, bool> = BTreeMap::new();
    let mut rings = Vec::new();
    let starts: Vec<EdgeId> = next.keys().copied().collect();
    for start in starts {
        if visited.contains_key(&start) {
            continue;
        }
        let mut chain = Vec::new();
        let mut cur = start;
        let closed = loop {
            if visited.insert(cur, true).is_some() {
                break false;
            }
            chain.push(points[&cur]);
            match next.get(&cur) {
                Some(&n) if n == start => break true,
                Some(&n) => cur = n,
                None => break false,
            }
        };
        if closed {
            rings.push(chain);
        }
    }
    rings
}

fn merge_collinear(mut ring: Vec<Point2>) -> Vec<Point2> {
    ring.dedup();
    while ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    loop {
        let n = ring.len();
        if n <= 3 {
            return ring;
        }
        let mut keep = vec![true; n];
        let mut removed = false;
        let mut i = 0;
        while i < n {
            let prev = ring[(i + n - 1) % n];
            let cur = ring[i];
            let nxt = ring[(i + 1) % n];
            let (u, v) = (cur - prev, nxt - cur);
            let scale = u.norm() * v.norm();
            if scale == 0.0 || (libm::fabs(u.cross(v)) <= 1e-9 * scale && u.dot(v) > 0.0) {
                keep[i] = false;
                removed = true;
                // never drop two neighbours in the same pass
                i += 2;
                continue;
            }
            i += 1;
        }
        if !removed {
            return ring;
        }
        let mut j = 0;
        ring.retain(|_| {
            let k = keep[j];
            j += 1;
            k
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{point_in_polygon, polygon_area};
    use approx::assert_relative_eq;
    use core::f64::consts::PI;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane(extent: f64, step: f64, z: impl Fn(f64, f64) -> f64) -> PointCloud {
        let n = (extent / step) as usize;
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                let (x, y) = (i as f64 * step, j as f64 * step);
                out.push(Point3::new(x, y, z(x, y)));
            }
        }
        out
    }

    fn boxed(cx: f64, cy: f64, half: f64, height: f64, step: f64) -> PointCloud {
        let n = (2.0 * half / step) as usize;
        let mut out = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                out.push(Point3::new(
                    cx - half + i as f64 * step,
                    cy - half + j as f64 * step,
                    height,
                ));
            }
        }
        out
    }

    #[test]
    fn flat_plane_with_box_keeps_only_box() {
        let mut pc = plane(40.0, 0.5, |_, _| 0.0);
        let ground_n = pc.len();
        pc.extend(boxed(20.0, 20.0, 2.0, 10.0, 0.5));
        let kept = morphological_ground_filter(&pc, 1.0, 9, 0.3).unwrap();
        assert_eq!(kept.len(), pc.len() - ground_n);
        assert!(kept.iter().all(|p| p.z == 10.0));
    }

    #[test]
    fn flat_plane_alone_is_all_ground() {
        let pc = plane(30.0, 0.5, |_, _| 3.0);
        assert!(morphological_ground_filter(&pc, 1.0, 9, 0.3)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn sloped_plane_with_box_matches_labels() {
        let slope = |x: f64, _y: f64| 0.05 * x;
        let mut pc = plane(50.0, 0.5, slope);
        let ground_n = pc.len();
        pc.extend(
            boxed(25.0, 25.0, 2.0, 0.0, 0.5)
                .into_iter()
                .map(|p| Point3::new(p.x, p.y, slope(p.x, p.y) + 10.0)),
        );
        let ground = classify_ground(&pc, 1.0, 9, 0.3).unwrap();
        for (i, g) in ground.iter().enumerate() {
            assert_eq!(*g, i < ground_n, "point {i} misclassified");
        }
    }

    #[test]
    fn filter_rejects_bad_arguments() {
        assert!(morphological_ground_filter(&[], 1.0, 9, 0.3).is_err());
        let pc = [Point3::ZERO];
        assert!(morphological_ground_filter(&pc, 1.0, 4, 0.3).is_err());
        assert!(morphological_ground_filter(&pc, 1.0, 1, 0.3).is_err());
    }

    #[test]
    fn single_point_raster() {
        let d = rasterize_dsm(&[Point3::new(0.0, 0.0, 5.0)], 1.0).unwrap();
        assert_eq!((d.width, d.height), (1, 1));
        assert_eq!(d.get(0, 0), Some(5.0));
    }

    #[test]
    fn raster_keeps_max() {
        let d = rasterize_dsm(
            &[Point3::new(0.1, 0.1, 3.0), Point3::new(0.2, 0.3, 7.0)],
            1.0,
        )
        .unwrap();
        assert_eq!(d.get(0, 0), Some(7.0));
    }

    #[test]
    fn raster_fills_small_holes_only() {
        let mut pc = Vec::new();
        pc.push(Point3::new(0.5, 0.5, 1.0));
        pc.push(Point3::new(9.5, 0.5, 2.0));
        let d = rasterize_dsm(&pc, 1.0).unwrap();
        assert_eq!(d.get(2, 0), Some(1.0));
        assert_eq!(d.get(7, 0), Some(2.0));
        assert_eq!(d.get(4, 0), None);
    }

    fn hemisphere_cloud(r: f64, step: f64) -> PointCloud {
        let n = (3.0 * r / step) as i64;
        let mut out = Vec::new();
        for i in -n..=n {
            for j in -n..=n {
                let (x, y) = (i as f64 * step, j as f64 * step);
                let rr = x * x + y * y;
                let z = if rr < r * r { libm::sqrt(r * r - rr) } else { 0.0 };
                out.push(Point3::new(x, y, z));
            }
        }
        out
    }

    #[test]
    fn hemisphere_raster_close_to_surface() {
        let r = 10.0;
        let d = rasterize_dsm(&hemisphere_cloud(r, 0.25), 1.0).unwrap();
        for iy in 0..d.height {
            for ix in 0..d.width {
                let c = d.cell_center(ix, iy);
                if c.norm() > 0.8 * r {
                    continue;
                }
                let truth = libm::sqrt(r * r - c.norm_sq());
                assert!((d.get(ix, iy).unwrap() - truth).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn hemisphere_level_set_is_a_circle() {
        let d = rasterize_dsm(&hemisphere_cloud(10.0, 0.25), 0.5).unwrap();
        let cs = trace_contours(&d, 5.0, 0.0).unwrap();
        let at5: Vec<&Polygon> = cs.contours.iter().filter(|c| c.elevation == 5.0).collect();
        assert_eq!(at5.len(), 1);
        let expected = libm::sqrt(75.0);
        let c = polygon_centroid(at5[0]).unwrap();
        for v in at5[0].vertices() {
            assert!((v.distance(c) - expected).abs() <= 0.5);
        }
        assert!(at5[0].is_ccw());
        let eq_r = libm::sqrt(polygon_area(at5[0]).unwrap() / PI);
        assert_relative_eq!(eq_r, expected, epsilon = 0.5);
    }

    #[test]
    fn ramp_has_no_closed_contours() {
        let pc = plane(20.0, 0.5, |x, _| x);
        let d = rasterize_dsm(&pc, 1.0).unwrap();
        assert!(trace_contours(&d, 1.0, 0.0).unwrap().is_empty());
    }

    #[test]
    fn bad_interval_is_rejected() {
        let d = rasterize_dsm(&[Point3::ZERO], 1.0).unwrap();
        assert!(trace_contours(&d, 0.0, 0.0).is_err());
    }

    fn cylinder_scene() -> PointCloud {
        let mut pc = plane(60.0, 0.5, |_, _| 0.0);
        pc.retain(|p| {
            Point2::new(p.x - 15.0, p.y - 30.0).norm() > 6.0
                && Point2::new(p.x - 42.0, p.y - 28.0).norm() > 8.0
        });
        for (cx, cy, r, h) in [(15.0, 30.0, 6.0, 12.0), (42.0, 28.0, 8.0, 9.0)] {
            let n = (r / 0.25) as i64;
            for i in -n..=n {
                for j in -n..=n {
                    let (x, y) = (i as f64 * 0.25, j as f64 * 0.25);
                    if x * x + y * y <= r * r {
                        pc.push(Point3::new(cx + x, cy + y, h));
                    }
                }
            }
        }
        pc
    }

    /// 4-connected components of cells with value >= level.
    fn flood_fill_components(d: &RasterDsm, level: f64) -> usize {
        let mut seen = vec![false; d.width * d.height];
        let mut count = 0;
        for start in 0..d.width * d.height {
            let (sx, sy) = (start % d.width, start / d.width);
            if seen[start] || d.get(sx, sy).is_none_or(|v| v < level) {
                continue;
            }
            count += 1;
            let mut stack = vec![(sx, sy)];
            seen[start] = true;
            while let Some((x, y)) = stack.pop() {
                let mut nb = Vec::new();
                if x > 0 {
                    nb.push((x - 1, y));
                }
                if y > 0 {
                    nb.push((x, y - 1));
                }
                nb.push((x + 1, y));
                nb.push((x, y + 1));
                for (nx, ny) in nb {
                    if nx >= d.width || ny >= d.height {
                        continue;
                    }
                    let k = ny * d.width + nx;
                    if !seen[k] && d.get(nx, ny).is_some_and(|v| v >= level) {
                        seen[k] = true;
                        stack.push((nx, ny));
                    }
                }
            }
        }
        count
    }

    #[test]
    fn two_cylinders_give_two_contours_per_level() {
        let d = rasterize_dsm(&cylinder_scene(), 1.0).unwrap();
        let cs = trace_contours(&d, 1.0, 0.0).unwrap();
        for k in 1..=12 {
            let level = k as f64;
            let n = cs.contours.iter().filter(|c| c.elevation == level).count();
            assert_eq!(n, flood_fill_components(&d, level), "level {level}");
            assert_eq!(n, if k <= 9 { 2 } else { 1 }, "level {level}");
        }
    }

    #[test]
    fn same_level_contours_are_disjoint_or_nested() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pc = plane(60.0, 0.5, |_, _| 0.0);
        for _ in 0..6 {
            let (cx, cy) = (rng.random_range(10.0..50.0), rng.random_range(10.0..50.0));
            let (r, h) = (rng.random_range(2.0..7.0), rng.random_range(3.0..15.0));
            for p in pc.iter_mut() {
                let d = Point2::new(p.x - cx, p.y - cy).norm();
                if d < r {
                    p.z = p.z.max(h * (1.0 - d / r) + 1.0);
                }
            }
        }
        let d = rasterize_dsm(&pc, 1.0).unwrap();
        let cs = trace_contours(&d, 1.0, 0.0).unwrap();
        for a in &cs.contours {
            for b in &cs.contours {
                if core::ptr::eq(a, b) || a.elevation != b.elevation {
                    continue;
                }
                for (p, q) in a.edges() {
                    for (r, s) in b.edges() {
                        assert!(!crate::geometry::segments_intersect(p, q, r, s));
                    }
                }
                let nested = point_in_polygon(a.vertices()[0], b)
                    == a.vertices().iter().all(|v| point_in_polygon(*v, b));
                assert!(nested);
            }
        }
    }
}
