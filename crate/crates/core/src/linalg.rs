//! Small dense helpers for 2D geometry and symmetric 2x2 tensors.

use serde::{Deserialize, Serialize};

/// A point or vector in the plane.
pub type Point = [f64; 2];

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Counter-clockwise perpendicular.
#[inline]
pub fn perp(a: Point) -> Point {
    [-a[1], a[0]]
}

/// Signed area of the triangle `(a, b, c)`, positive when counter-clockwise.
#[inline]
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * cross(sub(b, a), sub(c, a))
}

/// Symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

/// Eigen-decomposition of a [`Sym2`]: `values[0] >= values[1]`, and
/// `vectors[i]` is the unit eigenvector of `values[i]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen2 {
    pub values: [f64; 2],
    pub vectors: [Point; 2],
}

impl Sym2 {
    pub const ZERO: Sym2 = Sym2 { xx: 0.0, xy: 0.0, yy: 0.0 };

    pub fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 1.0)
    }

    /// `v v^T`.
    pub fn outer(v: Point) -> Self {
        Self::new(v[0] * v[0], v[0] * v[1], v[1] * v[1])
    }

    /// `l0 v0 v0^T + l1 v1 v1^T` with `v1 = perp(v0)`.
    pub fn from_eigen(l0: f64, l1: f64, v0: Point) -> Self {
        let v1 = perp(v0);
        Self::outer(v0).scaled(l0).plus(&Self::outer(v1).scaled(l1))
    }

    pub fn plus(&self, o: &Sym2) -> Self {
        Self::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::new(self.xx * s, self.xy * s, self.yy * s)
    }

    pub fn trace(&self) -> f64 {
        self.xx + self.yy
    }

    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `v^T A v`.
    pub fn quad(&self, v: Point) -> f64 {
        self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
    }

    pub fn apply(&self, v: Point) -> Point {
        [self.xx * v[0] + self.xy * v[1], self.xy * v[0] + self.yy * v[1]]
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(Self::new(self.yy / d, -self.xy / d, self.xx / d))
    }

    pub fn is_finite(&self) -> bool {
        self.xx.is_finite() && self.xy.is_finite() && self.yy.is_finite()
    }

    /// Closed-form eigen-decomposition.
    pub fn eigen(&self) -> SymEigen2 {
        let mean = 0.5 * (self.xx + self.yy);
        let half_diff = 0.5 * (self.xx - self.yy);
        let radius = half_diff.hypot(self.xy);
        let theta = 0.5 * self.xy.atan2(half_diff);
        let v0 = [theta.cos(), theta.sin()];
        SymEigen2 {
            values: [mean + radius, mean - radius],
            vectors: [v0, perp(v0)],
        }
    }

    /// Rotates the tensor by `phi`: `R A R^T`.
    pub fn rotated(&self, phi: f64) -> Self {
        let (s, c) = phi.sin_cos();
        let e = self.eigen();
        let v = e.vectors[0];
        Self::from_eigen(
            e.values[0],
            e.values[1],
            [c * v[0] - s * v[1], s * v[0] + c * v[1]],
        )
    }
}

/// Signed angle between two unit directions modulo pi (directions are
/// sign-ambiguous), in `(-pi/2, pi/2]`.
pub fn direction_angle(a: Point, b: Point) -> f64 {
    let ang = cross(a, b).atan2(dot(a, b));
    let mut d = ang;
    while d > std::f64::consts::FRAC_PI_2 {
        d -= std::f64::consts::PI;
    }
    while d <= -std::f64::consts::FRAC_PI_2 {
        d += std::f64::consts::PI;
    }
    d
}
