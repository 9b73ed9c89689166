//! Closed-form geometry of the upper half-plane, computed through the
//! hyperboloid model where geodesics are planar hyperbolas.

use crate::scalar::Real;

/// Point of the hyperboloid `-X0² + X1² + X2² = -1`, `X0 > 0`.
pub type Hyperboloid<T> = [T; 3];

pub fn to_hyperboloid<T: Real>(x: T, y: T) -> Hyperboloid<T> {
    let two_y = y + y;
    let r2 = x * x + y * y;
    [(r2 + T::one()) / two_y, (r2 - T::one()) / two_y, x / y]
}

pub fn from_hyperboloid<T: Real>(p: &Hyperboloid<T>) -> (T, T) {
    // Renormalize to absorb rounding before inverting the chart.
    let n = (p[0] * p[0] - p[1] * p[1] - p[2] * p[2]).sqrt();
    let q = [p[0] / n, p[1] / n, p[2] / n];
    let y = T::one() / (q[0] - q[1]);
    (q[2] * y, y)
}

fn minkowski<T: Real>(a: &Hyperboloid<T>, b: &Hyperboloid<T>) -> T {
    -a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Hyperbolic distance between `(x1, y1)` and `(x2, y2)`.
pub fn distance<T: Real>(x1: T, y1: T, x2: T, y2: T) -> T {
    let dx = x1 - x2;
    let dy = y1 - y2;
    let chord = (dx * dx + dy * dy).sqrt();
    T::lit(2.0) * (chord / (T::lit(2.0) * (y1 * y2).sqrt())).asinh()
}

/// Point at fraction `s ∈ [0, 1]` of the geodesic from `p` to `q`.
pub fn geodesic_point<T: Real>(p: (T, T), q: (T, T), s: T) -> (T, T) {
    let d = distance(p.0, p.1, q.0, q.1);
    if d == T::zero() {
        return p;
    }
    if s == T::zero() {
        return p;
    }
    if s == T::one() {
        return q;
    }
    let a = to_hyperboloid(p.0, p.1);
    let b = to_hyperboloid(q.0, q.1);
    let (wa, wb) = if d < T::lit(1e-4) {
        // sinh(kd)/sinh(d) with its small-d expansion.
        let d2 = d * d;
        let six = T::lit(6.0);
        let f = |k: T| k * (T::one() + (k * k - T::one()) * d2 / six);
        (f(T::one() - s), f(s))
    } else {
        let sh = d.sinh();
        (((T::one() - s) * d).sinh() / sh, (s * d).sinh() / sh)
    };
    let m = [
        wa * a[0] + wb * b[0],
        wa * a[1] + wb * b[1],
        wa * a[2] + wb * b[2],
    ];
    from_hyperboloid(&m)
}

pub fn midpoint<T: Real>(p: (T, T), q: (T, T)) -> (T, T) {
    geodesic_point(p, q, T::lit(0.5))
}

/// Chart Jacobian `∂X/∂(x, y)` as two ambient column vectors.
fn jacobian<T: Real>(x: T, y: T) -> (Hyperboloid<T>, Hyperboloid<T>) {
    let y2 = y * y;
    let two_y2 = y2 + y2;
    let dx = [x / y, x / y, T::one() / y];
    let dy = [
        (y2 - x * x - T::one()) / two_y2,
        (y2 - x * x + T::one()) / two_y2,
        -x / y2,
    ];
    (dx, dy)
}

/// Follows the geodesic with chart velocity `v` at `p` for unit time.
pub fn exp_map<T: Real>(p: (T, T), v: (T, T)) -> (T, T) {
    let speed = (v.0 * v.0 + v.1 * v.1).sqrt() / p.1;
    if speed == T::zero() {
        return p;
    }
    let a = to_hyperboloid(p.0, p.1);
    let (jx, jy) = jacobian(p.0, p.1);
    let dir = [
        (jx[0] * v.0 + jy[0] * v.1) / speed,
        (jx[1] * v.0 + jy[1] * v.1) / speed,
        (jx[2] * v.0 + jy[2] * v.1) / speed,
    ];
    let (c, s) = (speed.cosh(), speed.sinh());
    from_hyperboloid(&[c * a[0] + s * dir[0], c * a[1] + s * dir[1], c * a[2] + s * dir[2]])
}

/// Chart velocity at `p` of the geodesic reaching `q` at unit time.
pub fn log_map<T: Real>(p: (T, T), q: (T, T)) -> (T, T) {
    let d = distance(p.0, p.1, q.0, q.1);
    if d == T::zero() {
        return (T::zero(), T::zero());
    }
    let a = to_hyperboloid(p.0, p.1);
    let b = to_hyperboloid(q.0, q.1);
    let ch = -minkowski(&a, &b);
    let u = [b[0] - ch * a[0], b[1] - ch * a[1], b[2] - ch * a[2]];
    let un = minkowski(&u, &u).max(T::zero()).sqrt();
    let w = if un > T::zero() {
        [u[0] * d / un, u[1] * d / un, u[2] * d / un]
    } else {
        [T::zero(); 3]
    };
    // v = g⁻¹ Jᵀ η w with g = I / y².
    let (jx, jy) = jacobian(p.0, p.1);
    let y2 = p.1 * p.1;
    (y2 * minkowski(&jx, &w), y2 * minkowski(&jy, &w))
}

/// Real Möbius map `z ↦ (az + b)/(cz + d)` normalized to determinant one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mobius<T> {
    pub a: T,
    pub b: T,
    pub c: T,
    pub d: T,
}

impl<T: Real> Mobius<T> {
    /// Returns `None` unless `ad − bc > 0`.
    pub fn new(a: T, b: T, c: T, d: T) -> Option<Self> {
        let det = a * d - b * c;
        if !(det > T::zero()) || !det.is_finite() {
            return None;
        }
        let r = det.sqrt();
        Some(Mobius { a: a / r, b: b / r, c: c / r, d: d / r })
    }

    pub fn identity() -> Self {
        Mobius { a: T::one(), b: T::zero(), c: T::zero(), d: T::one() }
    }

    pub fn apply(&self, x: T, y: T) -> (T, T) {
        let re = self.c * x + self.d;
        let im = self.c * y;
        let den = re * re + im * im;
        let nx = ((self.a * x + self.b) * re + self.a * self.c * y * y) / den;
        (nx, y / den)
    }

    pub fn compose(&self, o: &Self) -> Self {
        Mobius {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    pub fn inverse(&self) -> Self {
        Mobius { a: self.d, b: -self.b, c: -self.c, d: self.a }
    }

    pub fn trace(&self) -> T {
        self.a + self.d
    }

    /// `2 arccosh(|tr|/2)` for hyperbolic elements, zero otherwise.
    pub fn translation_length(&self) -> T {
        let h = self.trace().abs() / T::lit(2.0);
        if h > T::one() {
            T::lit(2.0) * h.acosh()
        } else {
            T::zero()
        }
    }

    /// Fixed points on `ℝ ∪ {∞}` of a hyperbolic element, repelling first.
    /// `None` entries stand for `∞`.
    pub fn fixed_points(&self) -> Option<(Option<T>, Option<T>)> {
        let tr = self.trace();
        if tr.abs() <= T::lit(2.0) {
            return None;
        }
        if self.c == T::zero() {
            // z ↦ (a z + b)/d: attracting at ∞ when |a| > |d|.
            let fin = self.b / (self.d - self.a);
            return Some(if self.a.abs() > self.d.abs() { (Some(fin), None) } else { (None, Some(fin)) });
        }
        let disc = (tr * tr - T::lit(4.0)).sqrt();
        let z1 = (self.a - self.d + disc) / (self.c + self.c);
        let z2 = (self.a - self.d - disc) / (self.c + self.c);
        // Derivative 1/(cz+d)² < 1 marks the attracting point.
        let dz = |z: T| {
            let w = self.c * z + self.d;
            T::one() / (w * w)
        };
        Some(if dz(z1) < T::one() { (Some(z2), Some(z1)) } else { (Some(z1), Some(z2)) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertical_distance_is_log_ratio() {
        assert!((distance(0.0, 1.0, 0.0, 4.0) - 4f64.ln()).abs() < 1e-15);
        let d32 = distance(0.0f32, 1.0, 0.0, 4.0);
        assert!((d32 - 4f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn hyperboloid_round_trip() {
        for &(x, y) in &[(0.0f64, 1.0f64), (-3.0, 0.01), (5.0, 40.0)] {
            let (u, v) = from_hyperboloid(&to_hyperboloid(x, y));
            assert!((u - x).abs() < 1e-10 * (1.0 + x.abs()) && (v - y).abs() < 1e-10 * y);
        }
    }

    #[test]
    fn midpoint_on_vertical_line() {
        let (x, y) = midpoint((0.0f64, 1.0), (0.0, 4.0));
        assert!(x.abs() < 1e-14 && (y - 2.0).abs() < 1e-13);
    }

    #[test]
    fn geodesic_fractions_split_distance() {
        let p = (-1.0, 0.5);
        let q = (2.0, 3.0);
        let d = distance(p.0, p.1, q.0, q.1);
        for k in 1..10 {
            let s = k as f64 / 10.0;
            let m = geodesic_point(p, q, s);
            assert!((distance(p.0, p.1, m.0, m.1) - s * d).abs() < 1e-12);
            assert!((distance(m.0, m.1, q.0, q.1) - (1.0 - s) * d).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_inverts_log() {
        let p = (0.3f64, 0.7);
        let q = (-2.0, 1.9);
        let v = log_map(p, q);
        let r = exp_map(p, v);
        assert!((r.0 - q.0).abs() < 1e-12 && (r.1 - q.1).abs() < 1e-12);
        let speed = (v.0 * v.0 + v.1 * v.1).sqrt() / p.1;
        assert!((speed - distance(p.0, p.1, q.0, q.1)).abs() < 1e-12);
    }

    #[test]
    fn vertical_exp() {
        let (x, y) = exp_map((0.0f64, 1.0), (0.0, 2f64.ln()));
        assert!(x.abs() < 1e-15 && (y - 2.0).abs() < 1e-14);
    }

    #[test]
    fn mobius_is_isometry_and_has_expected_length() {
        let g = Mobius::new(2.0f64, 0.0, 0.0, 0.5).unwrap();
        assert!((g.translation_length() - 4f64.ln()).abs() < 1e-14);
        let h = Mobius::new(5.0f64, 3.0, 3.0, 2.0).unwrap();
        let (p, q) = ((0.2f64, 0.9f64), (-1.0f64, 2.5f64));
        let d0 = distance(p.0, p.1, q.0, q.1);
        let gp = h.apply(p.0, p.1);
        let gq = h.apply(q.0, q.1);
        assert!((distance(gp.0, gp.1, gq.0, gq.1) - d0).abs() < 1e-12);
        let id = h.compose(&h.inverse());
        assert!((id.a - 1.0).abs() < 1e-14 && id.b.abs() < 1e-14);
    }

    #[test]
    fn fixed_points_of_pair() {
        let g = Mobius::new(4.0f64, 0.0, 0.0, 1.0).unwrap();
        assert_eq!(g.fixed_points(), Some((Some(0.0), None)));
        let h = Mobius::new(5.0f64, 3.0, 3.0, 2.0).unwrap();
        let (r, a) = h.fixed_points().unwrap();
        let (r, a) = (r.unwrap(), a.unwrap());
        assert!((a - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12, "{a}");
        assert!((r - (1.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12, "{r}");
    }
}
