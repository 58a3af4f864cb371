//! Similarity (PA) and affine (MPA) Procrustes alignment of 2D point sets,
//! and the contour-similarity cut of a contour chain into primitive units.

use alloc::format;
use alloc::vec::Vec;
use core::ops::Range;

use crate::geometry::{
    circularity, polygon_area, resample_closed, signed_area, AffinePose2, Mat2, Point2, Point3, PointCloud, Polygon,
    SimilarityPose2,
};
use crate::lm::cholesky_solve;
use crate::{Error, Result};
use core::f64::consts::PI;

pub const MIN_CORRESPONDENCES: usize = 8;

/// Two equally long point lists, `source[i]` paired with `target[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    source: Vec<Point2>,
    target: Vec<Point2>,
}

impl Correspondence {
    pub fn new(source: Vec<Point2>, target: Vec<Point2>) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::invalid(format!(
                "correspondence lengths differ: {} vs {}",
                source.len(),
                target.len()
            )));
        }
        if source.len() < MIN_CORRESPONDENCES {
            return Err(Error::invalid(format!(
                "need at least {MIN_CORRESPONDENCES} correspondences, got {}",
                source.len()
            )));
        }
        if source.iter().chain(&target).any(|p| !p.is_finite()) {
            return Err(Error::invalid("correspondence has non-finite points"));
        }
        Ok(Self { source, target })
    }

    pub fn source(&self) -> &[Point2] {
        &self.source
    }

    pub fn target(&self) -> &[Point2] {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaResult {
    pub pose: SimilarityPose2,
    /// Root-mean-square point distance after alignment, metres.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpaResult {
    pub pose: AffinePose2,
    /// Root-mean-square point distance after alignment, metres.
    pub residual: f64,
    /// `residual / area(target)`, 1/m.
    pub normalized: f64,
}

/// Centred coordinates plus the two means.
struct Centred {
    p: Vec<Point2>,
    q: Vec<Point2>,
    mu_p: Point2,
    mu_q: Point2,
}

fn mean(v: &[Point2]) -> Point2 {
    let s = v.iter().fold(Point2::ZERO, |a, b| a + *b);
    s / v.len() as f64
}

fn centre(c: &Correspondence) -> Centred {
    let (mu_p, mu_q) = (mean(&c.source), mean(&c.target));
    Centred {
        p: c.source.iter().map(|v| *v - mu_p).collect(),
        q: c.target.iter().map(|v| *v - mu_q).collect(),
        mu_p,
        mu_q,
    }
}

/// Second-moment matrix `Σ p pᵀ` of centred points.
fn scatter(p: &[Point2]) -> Mat2 {
    let mut m = [[0.0; 2]; 2];
    for v in p {
        m[0][0] += v.x * v.x;
        m[0][1] += v.x * v.y;
        m[1][1] += v.y * v.y;
    }
    m[1][0] = m[0][1];
    Mat2(m)
}

fn is_collinear(m: &Mat2) -> bool {
    let tr = m[(0, 0)] + m[(1, 1)];
    tr == 0.0 || m.det() <= 1e-12 * tr * tr
}

fn rms(c: &Correspondence, f: impl Fn(Point2) -> Point2) -> f64 {
    let s: f64 = c
        .source
        .iter()
        .zip(&c.target)
        .map(|(p, q)| (f(*p) - *q).norm_sq())
        .sum();
    libm::sqrt(s / c.len() as f64)
}

/// Closed-form similarity alignment of `source` onto `target` minimising
/// `Σ‖c·R·p + t − q‖²`.
pub fn solve_pa(c: &Correspondence) -> Result<PaResult> {
    let k = centre(c);
    if is_collinear(&scatter(&k.p)) {
        return Err(Error::degenerate("source points are collinear"));
    }
    let (mut a, mut b, mut pp) = (0.0, 0.0, 0.0);
    for (p, q) in k.p.iter().zip(&k.q) {
        a += p.dot(*q);
        b += p.cross(*q);
        pp += p.norm_sq();
    }
    let theta = libm::atan2(b, a);
    let scale = libm::sqrt(a * a + b * b) / pp;
    let rotation = Mat2::rotation(theta);
    let translation = k.mu_q - rotation.mul_vec(k.mu_p) * scale;
    let pose = SimilarityPose2 {
        rotation,
        translation,
        scale,
    };
    if !(scale > 0.0) {
        return Err(Error::degenerate("target collapses to a point"));
    }
    let residual = rms(c, |p| pose.apply(p));
    Ok(PaResult { pose, residual })
}

/// Closed-form affine alignment minimising `Σ‖S·p + t − q‖²`; `S` may be any
/// 2×2 matrix, reflections included.
pub fn solve_mpa(c: &Correspondence) -> Result<MpaResult> {
    let k = centre(c);
    let m = scatter(&k.p);
    if is_collinear(&m) {
        return Err(Error::degenerate("singular normal matrix (collinear source)"));
    }
    // cross moments Σ q pᵀ
    let mut x = [[0.0; 2]; 2];
    for (p, q) in k.p.iter().zip(&k.q) {
        x[0][0] += q.x * p.x;
        x[0][1] += q.x * p.y;
        x[1][0] += q.y * p.x;
        x[1][1] += q.y * p.y;
    }
    let det = m.det();
    let inv = Mat2([
        [m[(1, 1)] / det, -m[(0, 1)] / det],
        [-m[(1, 0)] / det, m[(0, 0)] / det],
    ]);
    let matrix = Mat2(x).mul(&inv);
    let translation = k.mu_q - matrix.mul_vec(k.mu_p);
    let pose = AffinePose2 {
        matrix,
        translation,
    };
    let residual = rms(c, |p| pose.apply(p));
    let area = libm::fabs(signed_area(&c.target));
    if !(area > 0.0) {
        return Err(Error::degenerate("target outline has zero area"));
    }
    Ok(MpaResult {
        pose,
        residual,
        normalized: residual / area,
    })
}

/// Alignment model used to compare contours.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Metric {
    /// Rotation, uniform scale and translation.
    Pa,
    /// Full 2×2 linear map and translation.
    #[default]
    Mpa,
}

/// Best alignment of `source` onto `target` over cyclic shifts of the
/// resampled source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourAlignment {
    pub shift: usize,
    pub residual: f64,
    /// `residual / area(target)`, 1/m.
    pub normalized: f64,
}

fn residual_of(metric: Metric, c: &Correspondence) -> Result<f64> {
    match metric {
        Metric::Pa => solve_pa(c).map(|r| r.residual),
        Metric::Mpa => solve_mpa(c).map(|r| r.residual),
    }
}

/// Resamples both contours to `n` points and aligns `source` to `target`,
/// keeping the cyclic shift with the smallest residual (first on ties).
pub fn align_contours(
    source: &Polygon,
    target: &Polygon,
    n: usize,
    metric: Metric,
) -> Result<ContourAlignment> {
    let s = resample_closed(source, n)?.into_vertices();
    let t = resample_closed(target, n)?.into_vertices();
    align_resampled(&s, &t, metric)
}

fn align_resampled(s: &[Point2], t: &[Point2], metric: Metric) -> Result<ContourAlignment> {
    let area = libm::fabs(signed_area(t));
    if !(area > 0.0) {
        return Err(Error::degenerate("target outline has zero area"));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut shifted = s.to_vec();
    for shift in 0..s.len() {
        let c = Correspondence::new(shifted.clone(), t.to_vec())?;
        let r = residual_of(metric, &c)?;
        if best.is_none_or(|(_, b)| r < b) {
            best = Some((shift, r));
        }
        shifted.rotate_left(1);
    }
    let (shift, residual) = best.expect("non-empty correspondence");
    Ok(ContourAlignment {
        shift,
        residual,
        normalized: residual / area,
    })
}

/// Direction-free contour distance: the larger of the two normalised
/// residuals, so swapping the contours never changes the answer.
pub fn contour_distance(a: &Polygon, b: &Polygon, n: usize, metric: Metric) -> Result<f64> {
    let ra = resample_closed(a, n)?.into_vertices();
    let rb = resample_closed(b, n)?.into_vertices();
    let ab = align_resampled(&ra, &rb, metric)?;
    let ba = align_resampled(&rb, &ra, metric)?;
    Ok(ab.normalized.max(ba.normalized))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivisionSettings {
    pub n_resample: usize,
    /// Cut threshold on the normalised distance, 1/m.
    pub max_distance: f64,
    pub metric: Metric,
    /// Optional second pass that splits runs of round contours by their
    /// radius profile; similarity alone cannot tell two circles apart.
    pub profile: Option<ProfileSplit>,
    /// Contours smaller than this, m², never start a new group; apex slivers
    /// are too coarse to compare.
    pub min_cut_area: f64,
}

impl Default for DivisionSettings {
    fn default() -> Self {
        Self {
            n_resample: 128,
            max_distance: DEFAULT_MAX_DISTANCE,
            metric: Metric::Mpa,
            profile: None,
            min_cut_area: 0.0,
        }
    }
}

/// Splits a run of round contours where the squared equivalent radius
/// stops following one quadratic in z (cylinders are constant in r², cones
/// at most quadratic, sphere zones quadratic).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSplit {
    /// Contours at or above this circularity count as round.
    pub min_circularity: f64,
    /// Expected equivalent-radius noise, m; sets the price of a cut.
    pub tolerance: f64,
    /// Fewest contours in a piece.
    pub min_run: usize,
}

impl Default for ProfileSplit {
    fn default() -> Self {
        Self {
            min_circularity: 0.8,
            tolerance: 0.1,
            min_run: 3,
        }
    }
}

/// Default cut threshold, calibrated on the synthetic stacks.
pub const DEFAULT_MAX_DISTANCE: f64 = 0.004;

/// Partition of an elevation-sorted contour chain into contiguous runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrimitiveDivision {
    /// Index ranges into the sorted chain.
    pub groups: Vec<Range<usize>>,
    /// Distance between contour `i` and `i + 1`.
    pub distances: Vec<f64>,
    /// Contour elevations, ascending.
    pub elevations: Vec<f64>,
}

impl PrimitiveDivision {
    /// Group index of every contour.
    pub fn labels(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (g, r) in self.groups.iter().enumerate() {
            out.extend(r.clone().map(|_| g));
        }
        out
    }

    /// Elevation band `[lo, hi)` of a group: halfway to the neighbouring
    /// groups' contours, unbounded at the ends.
    pub fn band(&self, group: usize) -> (f64, f64) {
        let r = &self.groups[group];
        let lo = if group == 0 {
            f64::NEG_INFINITY
        } else {
            0.5 * (self.elevations[r.start - 1] + self.elevations[r.start])
        };
        let hi = if group + 1 == self.groups.len() {
            f64::INFINITY
        } else {
            0.5 * (self.elevations[r.end - 1] + self.elevations[r.end])
        };
        (lo, hi)
    }

    /// Splits points into one cloud per group by elevation band.
    pub fn split_points(&self, points: &[Point3]) -> Vec<PointCloud> {
        let bands: Vec<(f64, f64)> = (0..self.groups.len()).map(|g| self.band(g)).collect();
        let mut out: Vec<PointCloud> = bands.iter().map(|_| Vec::new()).collect();
        for p in points {
            if let Some(g) = bands.iter().position(|(lo, hi)| p.z >= *lo && p.z < *hi) {
                out[g].push(*p);
            }
        }
        out
    }
}

/// Sorts a contour chain by elevation (stable).
pub fn sort_chain(chain: &[Polygon]) -> Vec<Polygon> {
    let mut v = chain.to_vec();
    v.sort_by(|a, b| a.elevation.total_cmp(&b.elevation));
    v
}

/// Cuts a contour chain wherever consecutive contours are further apart than
/// `max_distance`. The chain is sorted by elevation first, so the input order
/// does not matter.
pub fn divide_into_primitives(chain: &[Polygon], s: &DivisionSettings) -> Result<PrimitiveDivision> {
    if chain.len() < 2 {
        return Err(Error::invalid("need at least two contours to divide"));
    }
    if !(s.max_distance >= 0.0) {
        return Err(Error::invalid("division threshold must be non-negative"));
    }
    let sorted = sort_chain(chain);
    let mut distances = Vec::with_capacity(sorted.len() - 1);
    for w in sorted.windows(2) {
        distances.push(contour_distance(&w[0], &w[1], s.n_resample, s.metric)?);
    }
    let small: Vec<bool> = sorted
        .iter()
        .map(|p| polygon_area(p).map(|a| a < s.min_cut_area))
        .collect::<Result<_>>()?;
    let mut groups = Vec::new();
    let mut start = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d > s.max_distance && !small[i + 1] {
            groups.push(start..i + 1);
            start = i + 1;
        }
    }
    groups.push(start..sorted.len());
    if let Some(ps) = &s.profile {
        groups = split_round_runs(&sorted, &small, groups, ps)?;
    }
    Ok(PrimitiveDivision {
        groups,
        distances,
        elevations: sorted.iter().map(|p| p.elevation).collect(),
    })
}

fn split_round_runs(
    sorted: &[Polygon],
    small: &[bool],
    groups: Vec<Range<usize>>,
    ps: &ProfileSplit,
) -> Result<Vec<Range<usize>>> {
    let mut round = Vec::with_capacity(sorted.len());
    let mut z = Vec::with_capacity(sorted.len());
    let mut q = Vec::with_capacity(sorted.len());
    for p in sorted {
        let a = polygon_area(p)?;
        round.push(a > 0.0 && circularity(p)? >= ps.min_circularity);
        z.push(p.elevation);
        q.push(a / PI);
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        // trailing slivers ride along with the piece below them
        let mut end = g.end;
        while end > g.start && small[end - 1] {
            end -= 1;
        }
        if end > g.start && round[g.start..end].iter().all(|&r| r) {
            split_profile(&z, &q, g.start..end, ps, &mut out);
            let last = out.len() - 1;
            out[last].end = g.end;
        } else {
            out.push(g);
        }
    }
    Ok(out)
}

/// Least-squares segmentation of a round run into pieces of at least
/// `min_run` contours, each following one quadratic in z. Every extra piece
/// costs `3·ln(n)·tolerance²` of squared radius misfit, so noise at the
/// tolerance level never pays for a cut while a change of profile does.
fn split_profile(z: &[f64], q: &[f64], r: Range<usize>, ps: &ProfileSplit, out: &mut Vec<Range<usize>>) {
    let min_run = ps.min_run.max(1);
    let n = r.len();
    if n < 2 * min_run {
        out.push(r);
        return;
    }
    let penalty = 3.0 * libm::log(n as f64) * ps.tolerance * ps.tolerance;
    // best[j]: (cost, previous cut) for the first j contours
    let mut best: Vec<Option<(f64, usize)>> = alloc::vec![None; n + 1];
    best[0] = Some((0.0, 0));
    for j in min_run..=n {
        for i in 0..=j - min_run {
            let Some((cost, _)) = best[i] else { continue };
            let e = profile_sse(&z[r.start + i..r.start + j], &q[r.start + i..r.start + j]);
            let cand = cost + e + penalty;
            if best[j].is_none_or(|(c, _)| cand < c) {
                best[j] = Some((cand, i));
            }
        }
    }
    let mut pieces = Vec::new();
    let mut j = n;
    while j > 0 {
        let (_, i) = best[j].expect("every prefix of length >= min_run is reachable");
        pieces.push(r.start + i..r.start + j);
        j = i;
    }
    out.extend(pieces.into_iter().rev());
}

/// Squared equivalent-radius misfit of the least-squares quadratic fit of
/// `q = r²` against `z`.
fn profile_sse(z: &[f64], q: &[f64]) -> f64 {
    let n = z.len();
    let deg = n.min(3);
    let z0 = z.iter().sum::<f64>() / n as f64;
    let scale = z.iter().map(|v| (v - z0).abs()).fold(0.0, f64::max).max(1e-9);
    let basis = |v: f64| {
        let t = (v - z0) / scale;
        [1.0, t, t * t]
    };
    let mut m = [0.0; 9];
    let mut b = [0.0; 3];
    for (&zi, &qi) in z.iter().zip(q) {
        let f = basis(zi);
        for i in 0..deg {
            b[i] += f[i] * qi;
            for j in 0..deg {
                m[i * deg + j] += f[i] * f[j];
            }
        }
    }
    let Some(coef) = cholesky_solve(&mut m[..deg * deg], deg, &b[..deg]) else {
        return 0.0;
    };
    z.iter()
        .zip(q)
        .map(|(&zi, &qi)| {
            let f = basis(zi);
            let fit: f64 = (0..deg).map(|i| coef[i] * f[i]).sum();
            let e = libm::sqrt(fit.max(0.0)) - libm::sqrt(qi);
            e * e
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};
    use std::vec;

    fn random_shape(rng: &mut ChaCha8Rng, n: usize) -> Vec<Point2> {
        (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                let r = rng.random_range(1.0..3.0);
                Point2::new(r * libm::cos(t), r * libm::sin(t))
            })
            .collect()
    }

    fn apply_affine(pts: &[Point2], m: Mat2, t: Point2) -> Vec<Point2> {
        pts.iter().map(|p| m.mul_vec(*p) + t).collect()
    }

    #[test]
    fn pa_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let src = random_shape(&mut rng, 32);
        let rot = Mat2::rotation(PI / 2.0);
        let tgt = apply_affine(&src, rot.scale(2.0), Point2::new(1.0, 1.0));
        let r = solve_pa(&Correspondence::new(src, tgt).unwrap()).unwrap();
        assert!((r.pose.scale - 2.0).abs() < 1e-12);
        assert!(r.pose.rotation.max_abs_diff(&rot) < 1e-12);
        assert!(r.pose.translation.distance(Point2::new(1.0, 1.0)) < 1e-12);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn pa_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let src = random_shape(&mut rng, 16);
        let r = solve_pa(&Correspondence::new(src.clone(), src).unwrap()).unwrap();
        assert!(r.pose.rotation.max_abs_diff(&Mat2::IDENTITY) < 1e-12);
        assert!((r.pose.scale - 1.0).abs() < 1e-12);
        assert!(r.residual < 1e-12);
    }

    #[test]
    fn collinear_source_is_degenerate() {
        let src: Vec<Point2> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        let tgt = src.clone();
        let c = Correspondence::new(src, tgt).unwrap();
        assert!(matches!(solve_pa(&c), Err(Error::DegenerateGeometry(_))));
        assert!(matches!(solve_mpa(&c), Err(Error::DegenerateGeometry(_))));
    }

    #[test]
    fn correspondence_validation() {
        let a = vec![Point2::ZERO; 8];
        assert!(Correspondence::new(a.clone(), vec![Point2::ZERO; 9]).is_err());
        assert!(Correspondence::new(vec![Point2::ZERO; 7], vec![Point2::ZERO; 7]).is_err());
        assert!(Correspondence::new(a.clone(), a).is_ok());
    }

    /// Grid over angle and scale; the optimal translation for a fixed
    /// (angle, scale) is the difference of means.
    fn grid_search_pa(c: &Correspondence) -> f64 {
        let (mp, mq) = (mean(c.source()), mean(c.target()));
        let mut best = f64::INFINITY;
        let (na, ns) = (1440, 400);
        for ia in 0..na {
            let rot = Mat2::rotation(2.0 * PI * ia as f64 / na as f64);
            for is in 0..ns {
                let s = 0.25 + 3.75 * is as f64 / ns as f64;
                let m = rot.scale(s);
                let t = mq - m.mul_vec(mp);
                best = best.min(rms(c, |p| m.mul_vec(p) + t));
            }
        }
        best
    }

    #[test]
    fn pa_matches_grid_search_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, 0.1).unwrap();
        for _ in 0..4 {
            let src = random_shape(&mut rng, 24);
            let m = Mat2::rotation(rng.random_range(0.0..2.0 * PI)).scale(rng.random_range(0.5..2.0));
            let t = Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let tgt: Vec<Point2> = apply_affine(&src, m, t)
                .into_iter()
                .map(|p| p + Point2::new(noise.sample(&mut rng), noise.sample(&mut rng)))
                .collect();
            let c = Correspondence::new(src, tgt).unwrap();
            let pa = solve_pa(&c).unwrap().residual;
            let grid = grid_search_pa(&c);
            assert!(pa <= grid + 1e-12);
            assert!((grid - pa) <= 0.02 * pa, "pa {pa} grid {grid}");
        }
    }

    #[test]
    fn mpa_recovers_shear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_shape(&mut rng, 20);
        let s = Mat2([[1.0, 0.5], [0.0, 1.0]]);
        let t = Point2::new(-2.0, 0.5);
        let tgt = apply_affine(&src, s, t);
        let c = Correspondence::new(src, tgt).unwrap();
        let r = solve_mpa(&c).unwrap();
        assert!(r.pose.matrix.max_abs_diff(&s) < 1e-12);
        assert!(r.pose.translation.distance(t) < 1e-12);
        assert!(r.residual < 1e-12);
        assert!(solve_pa(&c).unwrap().residual > 1e-3);
    }

    /// Independent 6-unknown least squares via nalgebra's SVD.
    fn lstsq_affine(c: &Correspondence) -> [f64; 6] {
        let n = c.len();
        let mut a = DMatrix::<f64>::zeros(2 * n, 6);
        let mut b = DVector::<f64>::zeros(2 * n);
        for (i, (p, q)) in c.source().iter().zip(c.target()).enumerate() {
            a[(2 * i, 0)] = p.x;
            a[(2 * i, 1)] = p.y;
            a[(2 * i, 4)] = 1.0;
            a[(2 * i + 1, 2)] = p.x;
            a[(2 * i + 1, 3)] = p.y;
            a[(2 * i + 1, 5)] = 1.0;
            b[2 * i] = q.x;
            b[2 * i + 1] = q.y;
        }
        let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
        [x[0], x[1], x[2], x[3], x[4], x[5]]
    }

    #[test]
    fn mpa_matches_least_squares_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(8..40);
            let src: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let tgt: Vec<Point2> = (0..n)
                .map(|_| Point2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)))
                .collect();
            let c = Correspondence::new(src, tgt).unwrap();
            let r = solve_mpa(&c).unwrap();
            let o = lstsq_affine(&c);
            let m = r.pose.matrix;
            let got = [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)], r.pose.translation.x, r.pose.translation.y];
            for (g, w) in got.iter().zip(&o) {
                assert!((g - w).abs() < 1e-9, "{got:?} vs {o:?}");
            }
            assert!(r.residual <= solve_pa(&c).unwrap().residual + 1e-9);
        }
    }

    #[test]
    fn mpa_residual_ignores_common_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = random_shape(&mut rng, 30);
        let tgt = random_shape(&mut rng, 30);
        let base = solve_mpa(&Correspondence::new(src.clone(), tgt.clone()).unwrap()).unwrap();
        let rot = Mat2::rotation(0.7);
        let t = Point2::new(12.0, -3.0);
        let moved = solve_mpa(
            &Correspondence::new(apply_affine(&src, rot, t), apply_affine(&tgt, rot, t)).unwrap(),
        )
        .unwrap();
        assert!((base.residual - moved.residual).abs() < 1e-9);
    }

    #[test]
    fn pa_scale_divides() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let src = random_shape(&mut rng, 30);
        let tgt = random_shape(&mut rng, 30);
        let c1 = solve_pa(&Correspondence::new(src.clone(), tgt.clone()).unwrap()).unwrap();
        let k = 3.5;
        let scaled: Vec<Point2> = src.iter().map(|p| *p * k).collect();
        let c2 = solve_pa(&Correspondence::new(scaled, tgt).unwrap()).unwrap();
        assert!((c2.pose.scale - c1.pose.scale / k).abs() < 1e-9);
    }

    fn circle(r: f64, n: usize, z: f64, center: Point2) -> Polygon {
        let pts = (0..n)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / n as f64;
                center + Point2::new(r * libm::cos(t), r * libm::sin(t))
            })
            .collect();
        Polygon::new(pts, z).unwrap()
    }

    fn square(half: f64, z: f64) -> Polygon {
        Polygon::new(
            vec![
                Point2::new(-half, -half),
                Point2::new(half, -half),
                Point2::new(half, half),
                Point2::new(-half, half),
            ],
            z,
        )
        .unwrap()
    }

    #[test]
    fn shifted_resampling_is_found() {
        let a = circle(3.0, 64, 0.0, Point2::ZERO);
        let b = a.map(|p| Mat2::rotation(0.3).mul_vec(p));
        let al = align_contours(&a, &b, 64, Metric::Mpa).unwrap();
        assert!(al.residual < 0.05, "{al:?}");
    }

    #[test]
    fn prism_under_cone_splits_at_the_junction() {
        let mut chain = Vec::new();
        for z in 1..=8 {
            chain.push(square(4.0, z as f64));
        }
        for z in 9..=16 {
            let r = 4.0 * (1.0 - (z - 8) as f64 / 9.0);
            chain.push(circle(r, 96, z as f64, Point2::ZERO));
        }
        let d = divide_into_primitives(&chain, &DivisionSettings::default()).unwrap();
        assert_eq!(d.groups, vec![0..8, 8..16]);
        let mut rev = chain.clone();
        rev.reverse();
        assert_eq!(divide_into_primitives(&rev, &DivisionSettings::default()).unwrap(), d);
    }

    #[test]
    fn deformed_cylinder_is_one_group() {
        let chain: Vec<Polygon> = (1..=12)
            .map(|z| {
                let c = circle(4.0, 96, z as f64, Point2::new(0.1 * z as f64, 0.0));
                let s = 1.0 + 0.02 * z as f64;
                c.map(|p| Point2::new(p.x * s, p.y))
            })
            .collect();
        let d = divide_into_primitives(&chain, &DivisionSettings::default()).unwrap();
        assert_eq!(d.groups, vec![0..12]);
    }

    #[test]
    fn circle_stack_cannot_be_separated() {
        // any two circles are similar: a cylinder under a cone reads as one unit
        let mut chain: Vec<Polygon> = (1..=6).map(|z| circle(4.0, 96, z as f64, Point2::ZERO)).collect();
        chain.extend((7..=12).map(|z| circle(4.0 - 0.5 * (z - 6) as f64, 96, z as f64, Point2::ZERO)));
        let d = divide_into_primitives(&chain, &DivisionSettings::default()).unwrap();
        assert_eq!(d.groups.len(), 1);
    }

    fn with_profile() -> DivisionSettings {
        DivisionSettings {
            profile: Some(ProfileSplit::default()),
            ..DivisionSettings::default()
        }
    }

    #[test]
    fn profile_split_separates_cylinder_from_cone() {
        let mut chain: Vec<Polygon> = (1..=6).map(|z| circle(4.0, 96, z as f64, Point2::ZERO)).collect();
        chain.extend((7..=12).map(|z| circle(3.0 - 0.4 * (z - 7) as f64, 96, z as f64, Point2::ZERO)));
        let d = divide_into_primitives(&chain, &with_profile()).unwrap();
        assert_eq!(d.groups, vec![0..6, 6..12]);
    }

    #[test]
    fn cone_sphere_cone_gives_three_units() {
        let mut chain = Vec::new();
        for k in 0..8 {
            let z = k as f64 + 0.5;
            chain.push(circle(5.0 - 0.2 * z, 128, z, Point2::ZERO));
        }
        for k in 8..14 {
            let z = k as f64 + 0.5;
            chain.push(circle(libm::sqrt(4.5 * 4.5 - (z - 11.0) * (z - 11.0)), 128, z, Point2::ZERO));
        }
        for k in 14..22 {
            let z = k as f64 + 0.5;
            chain.push(circle(3.0 - 0.3 * (z - 14.0), 128, z, Point2::ZERO));
        }
        assert_eq!(divide_into_primitives(&chain, &DivisionSettings::default()).unwrap().groups.len(), 1);
        let d = divide_into_primitives(&chain, &with_profile()).unwrap();
        assert_eq!(d.groups, vec![0..8, 8..14, 14..22]);
    }

    #[test]
    fn single_round_units_are_not_split() {
        let cone: Vec<Polygon> = (0..10).map(|k| circle(5.0 - 0.4 * k as f64, 96, k as f64, Point2::ZERO)).collect();
        let dome: Vec<Polygon> = (0..8)
            .map(|k| circle(libm::sqrt(64.0 - (k * k) as f64), 96, k as f64, Point2::ZERO))
            .collect();
        for chain in [cone, dome] {
            assert_eq!(divide_into_primitives(&chain, &with_profile()).unwrap().groups.len(), 1);
        }
        let prisms: Vec<Polygon> = (0..6).map(|k| square(4.0 - 0.5 * k as f64, k as f64)).collect();
        assert_eq!(divide_into_primitives(&prisms, &with_profile()).unwrap().groups.len(), 1);
    }

    #[test]
    fn division_needs_two_contours() {
        assert!(divide_into_primitives(&[square(1.0, 0.0)], &DivisionSettings::default()).is_err());
    }

    #[test]
    fn split_points_by_band() {
        let d = PrimitiveDivision {
            groups: vec![0..2, 2..4],
            distances: vec![0.0; 3],
            elevations: vec![1.0, 2.0, 3.0, 4.0],
        };
        let pts = [Point3::new(0.0, 0.0, 0.2), Point3::new(0.0, 0.0, 2.6), Point3::new(0.0, 0.0, 9.0)];
        let s = d.split_points(&pts);
        assert_eq!(s[0].len(), 1);
        assert_eq!(s[1].len(), 2);
        assert_eq!(d.labels(), vec![0, 0, 1, 1]);
    }
}
