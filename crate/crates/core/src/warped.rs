//! Exact geodesics of rotationally symmetric horn metrics
//! `A(ξ)dξ² + W(ξ)dθ²` with `A = 4B(1 + a4ξ⁴)` and `W = Bξ⁶(1 + c6ξ⁶)`.
//!
//! Geodesics conserve the Clairaut quantity `c = W θ'`. A geodesic between
//! interior points either climbs monotonically from the lower endpoint or
//! first dips to a turning radius `ξ*` with `W(ξ*) = c²`. Both families are
//! parameterized by `ξ*`, and the endpoint angle difference is matched with
//! Brent's method on `ln ξ*`.

use crate::optimize::brent_root;
use crate::quadrature::{gl20_f64, GaussLegendre};
use crate::scalar::Real;
use crate::space::{HornBlock, XI_SNAP};

/// Coefficients of a horn-type warped metric. The plain horn is `B = 1`,
/// `a4 = c6 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warped<T> {
    pub b: T,
    pub a4: T,
    pub c6: T,
}

/// `Σ_{k<n} x^k y^{n-1-k}`, i.e. `(xⁿ − yⁿ)/(x − y)` without cancellation.
fn power_quotient<T: Real>(x: T, y: T, n: usize) -> T {
    let (big, small) = if x >= y { (x, y) } else { (y, x) };
    if big == T::zero() {
        return T::zero();
    }
    let r = small / big;
    let mut sum = T::zero();
    let mut rp = T::one();
    for _ in 0..n {
        sum += rp;
        rp *= r;
    }
    big.powi(n as i32 - 1) * sum
}

impl<T: Real> Warped<T> {
    pub fn horn() -> Self {
        Warped { b: T::one(), a4: T::zero(), c6: T::zero() }
    }

    fn is_plain(&self) -> bool {
        self.b == T::one() && self.a4 == T::zero()
    }

    pub fn a(&self, xi: T) -> T {
        T::lit(4.0) * self.b * (T::one() + self.a4 * xi.powi(4))
    }

    pub fn w(&self, xi: T) -> T {
        let x6 = xi.powi(6);
        self.b * x6 * (T::one() + self.c6 * x6)
    }

    /// `(W(ξ) − W(ξs))/(ξ − ξs)`.
    fn w_quotient(&self, xi: T, xs: T) -> T {
        self.b * (power_quotient(xi, xs, 6) + self.c6 * power_quotient(xi, xs, 12))
    }

    /// Radial length `∫ √A dξ` between two radii.
    pub fn radial_length(&self, x0: T, x1: T) -> T {
        let (lo, hi) = if x0 <= x1 { (x0, x1) } else { (x1, x0) };
        if self.is_plain() {
            return T::lit(2.0) * (hi - lo);
        }
        if self.a4 == T::zero() {
            return T::lit(2.0) * self.b.sqrt() * (hi - lo);
        }
        let gl = GaussLegendre::<T>::gl20();
        let panels = 4;
        let h = (hi - lo) / T::from_usize_lossy(panels);
        (0..panels)
            .map(|k| {
                let a = lo + h * T::from_usize_lossy(k);
                gl.integrate(a, a + h, |x| self.a(x).sqrt())
            })
            .sum()
    }

    /// Radius at radial distance `s` above `x0` (or below when `s < 0`).
    fn radius_at(&self, x0: T, s: T) -> T {
        if self.is_plain() {
            return (x0 + s / T::lit(2.0)).max(T::zero());
        }
        if self.a4 == T::zero() {
            return (x0 + s / (T::lit(2.0) * self.b.sqrt())).max(T::zero());
        }
        let guess_hi = x0 + s.abs() / (T::lit(2.0) * self.b.sqrt()) + T::one();
        let f = |x: T| {
            let r = self.radial_length(x0, x);
            if x >= x0 {
                r - s
            } else {
                -r - s
            }
        };
        let (a, b) = if s >= T::zero() { (x0, guess_hi) } else { (T::zero(), x0) };
        brent_root(f, a, b, T::epsilon() * T::lit(4.0), 200).unwrap_or(x0)
    }

    /// Turning-point integrals `(Θ, Λ)` over `from ≤ ξ ≤ to` for the
    /// geodesic with turning radius `xs ≤ from` (so `c² = W(xs)`):
    /// `Θ = ∫ c√A/(√W√(W−c²)) dξ`, `Λ = ∫ √A√W/√(W−c²) dξ`.
    ///
    /// Substituting `ξ = xs + v²` removes the inverse square root at `xs`.
    pub fn integrals(&self, xs: T, from: T, to: T) -> (T, T) {
        if to <= from {
            return (T::zero(), T::zero());
        }
        self.integrals_v(xs, (from - xs).max(T::zero()).sqrt(), (to - xs).max(T::zero()).sqrt())
    }

    /// [`Warped::integrals`] between `ξ = xs + va²` and `ξ = xs + vb²`, for
    /// offsets too small to survive adding them to `xs`.
    pub fn integrals_v(&self, xs: T, va: T, vb: T) -> (T, T) {
        if vb <= va {
            return (T::zero(), T::zero());
        }
        let c = self.w(xs).sqrt();
        let sigma = xs.sqrt();
        // Panels uniform in ln(v + σ) resolve both the turning region and
        // the power-law tail.
        let la = (va + sigma).ln();
        let lb = (vb + sigma).ln();
        let panels = (((lb - la) / T::lit(0.35)).ceil().to_usize().unwrap_or(1)).max(2);
        let gl = gl20_f64();
        let h = (lb - la) / T::from_usize_lossy(panels);
        let two = T::lit(2.0);
        let half = h / two;
        let mut theta = T::zero();
        let mut len = T::zero();
        for k in 0..panels {
            let mid = la + h * T::from_usize_lossy(k) + half;
            for (node, weight) in gl.nodes.iter().zip(&gl.weights) {
                let l = mid + half * T::lit(*node);
                let e = l.exp();
                let v = e - sigma;
                let jac = half * T::lit(*weight) * e;
                let xi = xs + v * v;
                let sa = self.a(xi).sqrt();
                let sw = self.w(xi).sqrt();
                let sd = self.w_quotient(xi, xs).sqrt();
                theta += jac * two * c * sa / (sw * sd);
                len += jac * two * sa * sw / sd;
            }
        }
        (theta, len)
    }

    /// Finds the geodesic between two completion blocks.
    pub fn connect(&self, p: HornBlock<T>, q: HornBlock<T>) -> HornGeodesic<T> {
        let p = p.canonical();
        let q = q.canonical();
        let (tp, xp, tq, xq) = match (p, q) {
            (HornBlock::Boundary, HornBlock::Boundary) => {
                return HornGeodesic { metric: *self, length: T::zero(), kind: HornKind::Constant(p) };
            }
            (HornBlock::Boundary, HornBlock::Interior { theta, xi }) => {
                return HornGeodesic {
                    metric: *self,
                    length: self.radial_length(T::zero(), xi),
                    kind: HornKind::Radial { theta, from: T::zero(), to: xi },
                };
            }
            (HornBlock::Interior { theta, xi }, HornBlock::Boundary) => {
                return HornGeodesic {
                    metric: *self,
                    length: self.radial_length(T::zero(), xi),
                    kind: HornKind::Radial { theta, from: xi, to: T::zero() },
                };
            }
            (
                HornBlock::Interior { theta: t1, xi: x1 },
                HornBlock::Interior { theta: t2, xi: x2 },
            ) => (t1, x1, t2, x2),
        };
        let dtheta = (tq - tp).abs();
        if dtheta == T::zero() {
            return HornGeodesic {
                metric: *self,
                length: self.radial_length(xp, xq),
                kind: if xp == xq { HornKind::Constant(p) } else { HornKind::Radial { theta: tp, from: xp, to: xq } },
            };
        }
        let xm = (xp + xq) / T::lit(2.0);
        let dxi = xq - xp;
        let chord = (self.a(xm) * dxi * dxi + self.w(xm) * dtheta * dtheta).sqrt();
        if chord <= T::lit(1e-9) * xp.min(xq) {
            return HornGeodesic { metric: *self, length: chord, kind: HornKind::Chord { from: (tp, xp), to: (tq, xq) } };
        }
        let reversed = xq < xp;
        let (lo, hi) = if reversed { ((tq, xq), (tp, xp)) } else { ((tp, xp), (tq, xq)) };
        let sign = if hi.0 > lo.0 { T::one() } else { -T::one() };
        let snap = T::lit(XI_SNAP);
        let rise = hi.1 - lo.1;
        let half = lo.1 / T::lit(2.0);

        // Δθ for turning radius `xs = ξ_lo − δ`. The monotone family is
        // increasing in ξ*, the turning family decreasing.
        let dtheta_at = |xs: T, delta: T, turning: bool| {
            let vlo = delta.sqrt();
            let climb = self.integrals_v(xs, vlo, (rise + delta).sqrt()).0;
            if turning {
                climb + T::lit(2.0) * self.integrals_v(xs, T::zero(), vlo).0
            } else {
                climb
            }
        };
        // Radii near ξ_lo are searched through ln δ, the rest through ln ξ*,
        // so both ξ* and δ keep full relative precision.
        let by_xs = |u: T, turning: bool| {
            let xs = u.exp();
            dtheta_at(xs, lo.1 - xs, turning)
        };
        let by_delta = |u: T, turning: bool| {
            let d = u.exp();
            dtheta_at(lo.1 - d, d, turning)
        };
        let ulo = lo.1.ln();
        let uhalf = half.ln();
        let udmin = ulo - T::lit(690.0);
        let utol = T::lit(1e-15);
        let switch = dtheta_at(lo.1, T::zero(), false);
        let at_half = |turning| dtheta_at(half, half, turning);
        let through = || {
            let length = self.radial_length(T::zero(), xp) + self.radial_length(T::zero(), xq);
            HornGeodesic {
                metric: *self,
                length,
                kind: HornKind::Through { from: (tp, xp), to: (tq, xq) },
            }
        };
        let (xs, delta, turning) = if dtheta <= switch {
            let umin = ulo - T::lit(60.0);
            if dtheta <= by_xs(umin, false) {
                return HornGeodesic {
                    metric: *self,
                    length: self.radial_length(xp, xq),
                    kind: HornKind::Radial { theta: tp, from: xp, to: xq },
                };
            }
            if dtheta <= at_half(false) {
                let u = brent_root(|u| by_xs(u, false) - dtheta, umin, uhalf, utol, 300).unwrap_or(uhalf);
                let xs = u.exp();
                (xs, lo.1 - xs, false)
            } else {
                let u = brent_root(|u| by_delta(u, false) - dtheta, udmin, uhalf, utol, 300).unwrap_or(udmin);
                let d = u.exp();
                (lo.1 - d, d, false)
            }
        } else {
            let umin = snap.ln();
            if umin >= ulo || dtheta >= by_xs(umin, true) {
                return through();
            }
            if umin < uhalf && dtheta >= at_half(true) {
                let u = brent_root(|u| by_xs(u, true) - dtheta, umin, uhalf, utol, 300).unwrap_or(umin);
                let xs = u.exp();
                (xs, lo.1 - xs, true)
            } else {
                let top = (lo.1 - snap).min(half).ln();
                let u = brent_root(|u| by_delta(u, true) - dtheta, udmin, top, utol, 300).unwrap_or(top);
                let d = u.exp();
                (lo.1 - d, d, true)
            }
        };
        let vlo = delta.sqrt();
        let (t_up, l_up) = self.integrals_v(xs, vlo, (rise + delta).sqrt());
        let (t_dip, l_dip) = if turning { self.integrals_v(xs, T::zero(), vlo) } else { (T::zero(), T::zero()) };
        let length = if turning { T::lit(2.0) * l_dip + l_up } else { l_up };
        let kind = HornKind::Clairaut(Clairaut {
            lo,
            hi,
            reversed,
            xs,
            delta,
            sign,
            turning,
            dip: (t_dip, l_dip),
            climb: (t_up, l_up),
        });
        HornGeodesic { metric: *self, length, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clairaut<T> {
    /// Endpoint with the smaller ξ, as `(θ, ξ)`.
    pub lo: (T, T),
    pub hi: (T, T),
    /// True when the segment runs from `hi` to `lo`.
    pub reversed: bool,
    /// Turning radius `ξ*`, with Clairaut constant `√W(ξ*)`.
    pub xs: T,
    /// `ξ_lo − ξ*`, kept separately since it can be far below the spacing
    /// of floats near `ξ_lo`.
    pub delta: T,
    /// Direction of θ travel from `lo` to `hi`.
    pub sign: T,
    pub turning: bool,
    /// `(Θ, Λ)` over `[ξ*, ξ_lo]` (turning family only).
    pub dip: (T, T),
    /// `(Θ, Λ)` over `[ξ_lo, ξ_hi]`.
    pub climb: (T, T),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HornKind<T> {
    Constant(HornBlock<T>),
    /// Fixed θ, ξ moving linearly in radial distance. `0` stands for the boundary.
    Radial { theta: T, from: T, to: T },
    /// Down to the boundary point and back up.
    Through { from: (T, T), to: (T, T) },
    Clairaut(Clairaut<T>),
    /// Chart-straight chord between points closer than the root search can
    /// resolve; its length error is relative O((ℓ/ξ)²).
    Chord { from: (T, T), to: (T, T) },
}

/// Geodesic of a single horn factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HornGeodesic<T> {
    pub metric: Warped<T>,
    pub length: T,
    pub kind: HornKind<T>,
}

fn block<T: Real>(theta: T, xi: T) -> HornBlock<T> {
    if xi <= T::zero() {
        HornBlock::Boundary
    } else {
        HornBlock::Interior { theta, xi }.canonical()
    }
}

impl<T: Real> HornGeodesic<T> {
    /// Point at fraction `f ∈ [0, 1]` of the arclength.
    pub fn point_at(&self, f: T) -> HornBlock<T> {
        let m = &self.metric;
        match self.kind {
            HornKind::Constant(b) => b,
            HornKind::Radial { theta, from, to } => {
                if f <= T::zero() {
                    return block(theta, from);
                }
                if f >= T::one() {
                    return block(theta, to);
                }
                let s = f * self.length;
                let xi = if to >= from { m.radius_at(from, s) } else { m.radius_at(from, -s) };
                block(theta, xi)
            }
            HornKind::Through { from, to } => {
                let d0 = m.radial_length(T::zero(), from.1);
                let s = f * self.length;
                if f <= T::zero() {
                    block(from.0, from.1)
                } else if f >= T::one() {
                    block(to.0, to.1)
                } else if s <= d0 {
                    block(from.0, m.radius_at(from.1, -s))
                } else {
                    block(to.0, m.radius_at(T::zero(), s - d0))
                }
            }
            HornKind::Clairaut(ref g) => {
                if f <= T::zero() {
                    let e = if g.reversed { g.hi } else { g.lo };
                    return block(e.0, e.1);
                }
                if f >= T::one() {
                    let e = if g.reversed { g.lo } else { g.hi };
                    return block(e.0, e.1);
                }
                let s = if g.reversed { (T::one() - f) * self.length } else { f * self.length };
                let (theta, xi) = g.point_from_lo(m, s);
                block(theta, xi)
            }
            HornKind::Chord { from, to } => {
                let f = f.max(T::zero()).min(T::one());
                block(from.0 + f * (to.0 - from.0), from.1 + f * (to.1 - from.1))
            }
        }
    }

    /// Unit-speed chart velocity `(θ', ξ')` at the start; `None` when the
    /// segment starts at the boundary point or is constant.
    pub fn initial_velocity(&self) -> Option<(T, T)> {
        let m = &self.metric;
        match self.kind {
            HornKind::Constant(_) => None,
            HornKind::Radial { from, to, .. } => {
                if from <= T::zero() {
                    return None;
                }
                let r = T::one() / m.a(from).sqrt();
                Some((T::zero(), if to > from { r } else { -r }))
            }
            HornKind::Through { from, .. } => Some((T::zero(), -T::one() / m.a(from.1).sqrt())),
            HornKind::Clairaut(ref g) => {
                let c = m.w(g.xs).sqrt();
                let (end, up) = if g.reversed { (g.hi, false) } else { (g.lo, !g.turning) };
                let xi = end.1;
                let w = m.w(xi);
                let gap = if g.reversed { g.hi.1 - g.lo.1 + g.delta } else { g.delta };
                let frac = m.w_quotient(xi, g.xs) * gap / w;
                let rad = (frac.max(T::zero()) / m.a(xi)).sqrt();
                let dtheta = if g.reversed { -g.sign * c / w } else { g.sign * c / w };
                Some((dtheta, if up { rad } else { -rad }))
            }
            HornKind::Chord { from, to } => {
                let (dt, dx) = (to.0 - from.0, to.1 - from.1);
                let n = (m.a(from.1) * dx * dx + m.w(from.1) * dt * dt).sqrt();
                Some((dt / n, dx / n))
            }
        }
    }
}

impl<T: Real> Clairaut<T> {
    /// `(θ, ξ)` at arclength `s` measured from the lower endpoint.
    fn point_from_lo(&self, m: &Warped<T>, s: T) -> (T, T) {
        let theta0 = self.lo.0;
        let vlo = self.delta.sqrt();
        let (t, v) = if self.turning {
            let l1 = self.dip.1;
            if s <= l1 {
                // Descending: Λ over [v, v_lo] equals s.
                let v = self.invert(m, vlo, s, false);
                (m.integrals_v(self.xs, v, vlo).0, v)
            } else {
                let v = self.invert(m, T::zero(), s - l1, true);
                (self.dip.0 + m.integrals_v(self.xs, T::zero(), v).0, v)
            }
        } else {
            let v = self.invert(m, vlo, s, true);
            (m.integrals_v(self.xs, vlo, v).0, v)
        };
        (theta0 + self.sign * t, self.xs + v * v)
    }

    /// Offset `v` (with `ξ = ξ* + v²`) at arclength `s` from `vbase`.
    fn invert(&self, m: &Warped<T>, vbase: T, s: T, up: bool) -> T {
        if s <= T::zero() {
            return vbase;
        }
        let xs = self.xs;
        let target = |v: T| {
            if up {
                m.integrals_v(xs, vbase, v).1 - s
            } else {
                m.integrals_v(xs, v, vbase).1 - s
            }
        };
        if up {
            let mut vhi = (self.hi.1 - self.lo.1 + self.delta).sqrt();
            while target(vhi) < T::zero() && vhi < T::lit(1e6) {
                vhi = vhi * T::lit(2.0);
            }
            brent_root(target, vbase, vhi, T::epsilon() * vhi * T::lit(4.0), 300).unwrap_or(vhi)
        } else {
            brent_root(target, T::zero(), vbase, T::epsilon() * vbase * T::lit(4.0), 300).unwrap_or(T::zero())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interior(theta: f64, xi: f64) -> HornBlock<f64> {
        HornBlock::Interior { theta, xi }
    }

    #[test]
    fn power_quotient_matches_difference() {
        let (x, y) = (0.7f64, 0.3);
        assert!((power_quotient(x, y, 6) - (x.powi(6) - y.powi(6)) / (x - y)).abs() < 1e-14);
        assert!((power_quotient(x, 0.0, 6) - x.powi(5)).abs() < 1e-15);
    }

    #[test]
    fn boundary_to_interior_is_radial() {
        let h = Warped::horn();
        let g = h.connect(HornBlock::Boundary, interior(2.0, 0.5));
        assert!((g.length - 1.0).abs() < 1e-15);
        match g.point_at(0.5) {
            HornBlock::Interior { theta, xi } => {
                assert_eq!(theta, 2.0);
                assert!((xi - 0.25).abs() < 1e-15);
            }
            _ => panic!("expected interior midpoint"),
        }
    }

    #[test]
    fn turning_integrals_match_direct_quadrature() {
        // Away from ξ* the plain integrand is smooth; compare with a fine
        // midpoint rule on [0.5, 0.9] for ξ* = 0.3.
        let h = Warped::<f64>::horn();
        let xs = 0.3f64;
        let c = xs.powi(3);
        let (t, l) = h.integrals(xs, 0.5, 0.9);
        let n = 200_000;
        let dx = 0.4 / n as f64;
        let (mut tr, mut lr) = (0.0, 0.0);
        for k in 0..n {
            let x = 0.5 + (k as f64 + 0.5) * dx;
            let w = x.powi(6);
            tr += c * 2.0 / (w.sqrt() * (w - c * c).sqrt()) * dx;
            lr += 2.0 * w.sqrt() / (w - c * c).sqrt() * dx;
        }
        assert!((t - tr).abs() < 1e-9 * tr, "{t} {tr}");
        assert!((l - lr).abs() < 1e-9 * lr, "{l} {lr}");
    }

    #[test]
    fn matches_angle_and_endpoints() {
        let h = Warped::horn();
        for &(p, q) in &[
            (interior(0.0, 0.5), interior(1.0, 0.6)),
            (interior(0.0, 0.1), interior(1.0, 0.1)),
            (interior(3.0, 0.9), interior(-2.0, 0.2)),
            (interior(0.0, 0.8), interior(0.01, 1.5)),
        ] {
            let g = h.connect(p, q);
            let end = g.point_at(1.0);
            assert_eq!(end, q);
            // Interior sample recovered by reconstruction matches the endpoint.
            let near = g.point_at(1.0 - 1e-9);
            assert!((near.xi() - q.xi()).abs() < 1e-6);
            assert!(g.length > 0.0 && g.length < h.radial_length(0.0, p.xi()) + h.radial_length(0.0, q.xi()));
        }
    }

    #[test]
    fn split_lengths_are_additive() {
        let h = Warped::horn();
        let p = interior(0.0, 0.3);
        let q = interior(2.0, 0.7);
        let g = h.connect(p, q);
        for &f in &[0.2, 0.5, 0.8] {
            let m = g.point_at(f);
            let a = h.connect(p, m).length;
            let b = h.connect(m, q).length;
            assert!((a - f * g.length).abs() < 1e-9, "{f}: {a} vs {}", f * g.length);
            assert!((b - (1.0 - f) * g.length).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbed_radial_length() {
        let m = Warped { b: 2.0, a4: 0.5, c6: 0.1 };
        // ∫₀¹ 2√2 √(1 + ξ⁴/2) dξ by a fine midpoint rule.
        let n = 100_000;
        let r: f64 = (0..n)
            .map(|k| {
                let x = (k as f64 + 0.5) / n as f64;
                2.0 * 2f64.sqrt() * (1.0 + 0.5 * x.powi(4)).sqrt() / n as f64
            })
            .sum();
        assert!((m.radial_length(0.0, 1.0) - r).abs() < 1e-9);
        assert!((m.radius_at(0.0, m.radial_length(0.0, 1.0)) - 1.0).abs() < 1e-12);
    }
}
