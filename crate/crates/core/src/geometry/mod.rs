//! Shared geometric types: points, small matrices, poses and polygons.

use core::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use alloc::vec::Vec;

mod polygon;

pub use polygon::{
    circularity, douglas_peucker_closed, hausdorff_closed, perimeter, point_in_polygon,
    point_segment_distance, polygon_area, polygon_centroid, resample_closed, segments_intersect,
    signed_area, Polygon,
};

/// Unordered set of points in metres.
pub type PointCloud = Vec<Point3>;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ZERO: Point2 = Point2 { x: 0.0, y: 0.0 };

    #[inline]
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    #[inline]
    pub fn cross(self, o: Self) -> f64 {
        self.x * o.y - self.y * o.x
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    #[inline]
    pub fn distance(self, o: Self) -> f64 {
        (self - o).norm()
    }

    #[inline]
    pub fn lerp(self, o: Self, s: f64) -> Self {
        Point2::new(self.x + (o.x - self.x) * s, self.y + (o.y - self.y) * s)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    #[inline]
    pub fn extend(self, z: f64) -> Point3 {
        Point3::new(self.x, self.y, z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ZERO: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        libm::sqrt(self.norm_sq())
    }

    #[inline]
    pub fn distance_sq(self, o: Self) -> f64 {
        let dx = self.x - o.x;
        let dy = self.y - o.y;
        let dz = self.z - o.z;
        dx * dx + dy * dy + dz * dz
    }

    #[inline]
    pub fn distance(self, o: Self) -> f64 {
        libm::sqrt(self.distance_sq(o))
    }

    #[inline]
    pub fn xy(self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    #[inline]
    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

macro_rules! impl_vec_ops {
    ($t:ident { $($f:ident),+ }) => {
        impl Add for $t {
            type Output = $t;
            #[inline]
            fn add(self, o: $t) -> $t { $t { $($f: self.$f + o.$f),+ } }
        }
        impl Sub for $t {
            type Output = $t;
            #[inline]
            fn sub(self, o: $t) -> $t { $t { $($f: self.$f - o.$f),+ } }
        }
        impl Mul<f64> for $t {
            type Output = $t;
            #[inline]
            fn mul(self, s: f64) -> $t { $t { $($f: self.$f * s),+ } }
        }
        impl Mul<$t> for f64 {
            type Output = $t;
            #[inline]
            fn mul(self, v: $t) -> $t { v * self }
        }
        impl Div<f64> for $t {
            type Output = $t;
            #[inline]
            fn div(self, s: f64) -> $t { $t { $($f: self.$f / s),+ } }
        }
        impl Neg for $t {
            type Output = $t;
            #[inline]
            fn neg(self) -> $t { $t { $($f: -self.$f),+ } }
        }
        impl AddAssign for $t {
            #[inline]
            fn add_assign(&mut self, o: $t) { $(self.$f += o.$f;)+ }
        }
        impl SubAssign for $t {
            #[inline]
            fn sub_assign(&mut self, o: $t) { $(self.$f -= o.$f;)+ }
        }
    };
}

impl_vec_ops!(Point2 { x, y });
impl_vec_ops!(Point3 { x, y, z });

/// Row-major 2x2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat2(pub [[f64; 2]; 2]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn rotation(theta: f64) -> Self {
        let (s, c) = libm::sincos(theta);
        Mat2([[c, -s], [s, c]])
    }

    #[inline]
    pub fn mul_vec(&self, v: Point2) -> Point2 {
        let m = &self.0;
        Point2::new(m[0][0] * v.x + m[0][1] * v.y, m[1][0] * v.x + m[1][1] * v.y)
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let mut out = [[0.0; 2]; 2];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        Mat2(out)
    }

    pub fn transpose(&self) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0], m[1][0]], [m[0][1], m[1][1]]])
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let m = &self.0;
        Mat2([[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]])
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, o: &Mat2) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max(libm::fabs(self.0[i][j] - o.0[i][j]));
            }
        }
        d
    }
}

impl Index<(usize, usize)> for Mat2 {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.0[i][j]
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Default for Mat3 {
    fn default() -> Self {
        Mat3::IDENTITY
    }
}

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    /// Rotation about +z.
    pub fn rot_z(yaw: f64) -> Self {
        let (s, c) = libm::sincos(yaw);
        Mat3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation about an arbitrary unit axis (Rodrigues).
    pub fn from_axis_angle(axis: Point3, angle: f64) -> Self {
        let n = axis / axis.norm();
        let (s, c) = libm::sincos(angle);
        let t = 1.0 - c;
        Mat3([
            [t * n.x * n.x + c, t * n.x * n.y - s * n.z, t * n.x * n.z + s * n.y],
            [t * n.x * n.y + s * n.z, t * n.y * n.y + c, t * n.y * n.z - s * n.x],
            [t * n.x * n.z - s * n.y, t * n.y * n.z + s * n.x, t * n.z * n.z + c],
        ])
    }

    #[inline]
    pub fn mul_vec(&self, v: Point3) -> Point3 {
        let m = &self.0;
        Point3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn transpose(&self) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = self.0[j][i];
            }
        }
        Mat3(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    #[inline]
    pub fn col(&self, j: usize) -> Point3 {
        Point3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    /// Row-major flattening, the order used by the compact model format.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn from_row_major(a: &[f64; 9]) -> Mat3 {
        Mat3([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                d = d.max(libm::fabs(self.0[i][j] - o.0[i][j]));
            }
        }
        d
    }

    /// `true` when `RᵀR = I` within `tol` and `det R > 0`.
    pub fn is_rotation(&self, tol: f64) -> bool {
        self.transpose().mul(self).max_abs_diff(&Mat3::IDENTITY) <= tol && self.det() > 0.0
    }
}

/// Similarity transform `x ↦ c·R·x + t` in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityPose2 {
    pub rotation: Mat2,
    pub translation: Point2,
    pub scale: f64,
}

impl SimilarityPose2 {
    pub const IDENTITY: SimilarityPose2 = SimilarityPose2 {
        rotation: Mat2::IDENTITY,
        translation: Point2::ZERO,
        scale: 1.0,
    };

    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        self.rotation.mul_vec(p) * self.scale + self.translation
    }
}

/// General affine transform `x ↦ S·x + t` in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinePose2 {
    pub matrix: Mat2,
    pub translation: Point2,
}

impl AffinePose2 {
    #[inline]
    pub fn apply(&self, p: Point2) -> Point2 {
        self.matrix.mul_vec(p) + self.translation
    }
}

/// Axis-aligned bounds of a non-empty point set.
pub fn bounds3(points: &[Point3]) -> Option<(Point3, Point3)> {
    let first = *points.first()?;
    Some(points.iter().fold((first, first), |(lo, hi), p| {
        (
            Point3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z)),
            Point3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z)),
        )
    }))
}

pub fn centroid3(points: &[Point3]) -> Option<Point3> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Point3::ZERO, |acc, p| acc + *p);
    Some(sum / points.len() as f64)
}

/// Applies a rigid transform `x ↦ R·x + T` to every point.
pub fn transform_points(points: &[Point3], rotation: &Mat3, translation: Point3) -> PointCloud {
    points
        .iter()
        .map(|p| rotation.mul_vec(*p) + translation)
        .collect()
}
