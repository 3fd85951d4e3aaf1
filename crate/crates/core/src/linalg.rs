//! Fixed-size 2-vectors and 2x2 matrices for the per-node filter state.
//!
//! Inverses use the closed-form adjugate so results are deterministic and
//! independent of any pivoting strategy.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Outer product `a * b^T`.
    pub fn outer(self, other: Vec2) -> Mat2 {
        Mat2::new(
            self.x * other.x,
            self.x * other.y,
            self.y * other.x,
            self.y * other.y,
        )
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

/// Row-major 2x2 matrix `[[a, b], [c, d]]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2 {
        a: 0.0,
        b: 0.0,
        c: 0.0,
        d: 0.0,
    };
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub const fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Self { a, b, c, d }
    }

    pub const fn diag(x: f64, y: f64) -> Self {
        Self::new(x, 0.0, 0.0, y)
    }

    pub fn transpose(self) -> Mat2 {
        Mat2::new(self.a, self.c, self.b, self.d)
    }

    pub fn trace(self) -> f64 {
        self.a + self.d
    }

    pub fn det(self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// `(M + M^T) / 2`.
    pub fn symmetrize(self) -> Mat2 {
        let off = 0.5 * (self.b + self.c);
        Mat2::new(self.a, off, off, self.d)
    }

    /// Inverse via the adjugate. `None` when the determinant is zero or
    /// negligible relative to the entry scale.
    pub fn inverse(self) -> Option<Mat2> {
        let det = self.det();
        let scale = (self.a.abs() + self.b.abs()).max(self.c.abs() + self.d.abs());
        if !det.is_finite() || det == 0.0 || det.abs() <= 1e-15 * scale * scale {
            return None;
        }
        let inv = 1.0 / det;
        Some(Mat2::new(
            self.d * inv,
            -self.b * inv,
            -self.c * inv,
            self.a * inv,
        ))
    }

    pub fn mul_vec(self, v: Vec2) -> Vec2 {
        Vec2::new(self.a * v.x + self.b * v.y, self.c * v.x + self.d * v.y)
    }

    pub fn max_abs(self) -> f64 {
        self.a
            .abs()
            .max(self.b.abs())
            .max(self.c.abs())
            .max(self.d.abs())
    }

    pub fn is_finite(self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }

    /// Eigenvalues of a symmetric matrix, ascending.
    pub fn sym_eigenvalues(self) -> (f64, f64) {
        let s = self.symmetrize();
        let mean = 0.5 * (s.a + s.d);
        let half_diff = 0.5 * (s.a - s.d);
        let r = half_diff.hypot(s.b);
        (mean - r, mean + r)
    }

    /// Projects a symmetric matrix onto the PSD cone by clipping negative
    /// eigenvalues to zero.
    pub fn clip_psd(self) -> Mat2 {
        let s = self.symmetrize();
        let (l1, l2) = s.sym_eigenvalues();
        if l1 >= 0.0 {
            return s;
        }
        if l2 <= 0.0 {
            return Mat2::ZERO;
        }
        // Rank-one remainder along the eigenvector of l2.
        let (vx, vy) = if s.b.abs() > 0.0 {
            (s.b, l2 - s.a)
        } else if s.a >= s.d {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        };
        let norm = vx.hypot(vy);
        let v = Vec2::new(vx / norm, vy / norm);
        v.outer(v) * l2
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a + o.a, self.b + o.b, self.c + o.c, self.d + o.d)
    }
}

impl AddAssign for Mat2 {
    fn add_assign(&mut self, o: Mat2) {
        *self = *self + o;
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a - o.a, self.b - o.b, self.c - o.c, self.d - o.d)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        Mat2::new(-self.a, -self.b, -self.c, -self.d)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a * o.a + self.b * o.c,
            self.a * o.b + self.b * o.d,
            self.c * o.a + self.d * o.c,
            self.c * o.b + self.d * o.d,
        )
    }
}

impl Mul<f64> for Mat2 {
    type Output = Mat2;
    fn mul(self, s: f64) -> Mat2 {
        Mat2::new(self.a * s, self.b * s, self.c * s, self.d * s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_roundtrip() {
        let m = Mat2::new(4.0, 1.0, 2.0, 3.0);
        let p = m * m.inverse().unwrap();
        assert!((p - Mat2::IDENTITY).max_abs() < 1e-15);
    }

    #[test]
    fn singular_has_no_inverse() {
        assert!(Mat2::new(1.0, 2.0, 2.0, 4.0).inverse().is_none());
        assert!(Mat2::ZERO.inverse().is_none());
    }

    #[test]
    fn clip_psd_drops_negative_part() {
        let m = Mat2::new(1.0, 2.0, 2.0, 1.0); // eigenvalues -1, 3
        let c = m.clip_psd();
        let (l1, l2) = c.sym_eigenvalues();
        assert!(l1.abs() < 1e-12);
        assert!((l2 - 3.0).abs() < 1e-12);
        assert!((c - Mat2::new(1.5, 1.5, 1.5, 1.5)).max_abs() < 1e-12);
    }

    #[test]
    fn clip_psd_keeps_psd_input() {
        let m = Mat2::new(2.0, 0.5, 0.5, 1.0);
        assert_eq!(m.clip_psd(), m);
    }
}
