//! Geodesics of product model spaces and their completion.
//!
//! Product spaces (no active `b3` coupling) are solved factor by factor:
//! a product geodesic moves every factor along its own geodesic at a speed
//! proportional to the factor distance. Horn factors use the exact Clairaut
//! solver, the hyperbolic plane its closed form. Coupled spaces fall back to
//! shooting on the full connection and then to discrete curve shortening.

use serde::Serialize;

use crate::error::{GeometryError, Result};
use crate::hyperbolic;
use crate::linalg;
use crate::metric::{christoffel_chart, metric_chart, metric_chart_unchecked, metric_derivative};
use crate::ode::{dopri5, Control, OdeOptions, OdeOutcome};
use crate::optimize::lbfgs;
use crate::scalar::Real;
use crate::space::{Block, CompletionPoint, FactorSpec, HornBlock, SpaceSpec, TangentVector, XI_SNAP};
use crate::warped::{HornGeodesic, Warped};

/// Number of samples stored by [`geodesic_connect`].
pub const CONNECT_SAMPLES: usize = 33;

fn warped_of<T: Real>(f: &FactorSpec<T>) -> Option<Warped<T>> {
    match f {
        FactorSpec::Horn => Some(Warped::horn()),
        FactorSpec::PerturbedHorn { b, a4, c6, .. } => Some(Warped { b: *b, a4: *a4, c6: *c6 }),
        _ => None,
    }
}

/// Geodesic of one factor.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorPath<T> {
    Horn(HornGeodesic<T>),
    Hyperbolic { p: (T, T), q: (T, T), length: T },
    Euclidean { p: Vec<T>, q: Vec<T>, length: T },
}

impl<T: Real> FactorPath<T> {
    pub fn length(&self) -> T {
        match self {
            FactorPath::Horn(g) => g.length,
            FactorPath::Hyperbolic { length, .. } | FactorPath::Euclidean { length, .. } => *length,
        }
    }

    pub fn point_at(&self, f: T) -> Block<T> {
        match self {
            FactorPath::Horn(g) => Block::Horn(g.point_at(f)),
            FactorPath::Hyperbolic { p, q, .. } => {
                let (x, y) = hyperbolic::geodesic_point(*p, *q, f);
                Block::coords(vec![x, y])
            }
            FactorPath::Euclidean { p, q, .. } => {
                if f >= T::one() {
                    return Block::coords(q.clone());
                }
                Block::coords(p.iter().zip(q).map(|(a, b)| *a + f * (*b - *a)).collect())
            }
        }
    }

    /// Chart velocity at the start for traversal in unit time.
    fn initial_velocity(&self) -> Option<Vec<T>> {
        match self {
            FactorPath::Horn(g) => {
                if g.length == T::zero() {
                    return Some(vec![T::zero(), T::zero()]);
                }
                g.initial_velocity().map(|(a, b)| vec![a * g.length, b * g.length])
            }
            FactorPath::Hyperbolic { p, q, .. } => {
                let v = hyperbolic::log_map(*p, *q);
                Some(vec![v.0, v.1])
            }
            FactorPath::Euclidean { p, q, .. } => Some(q.iter().zip(p).map(|(a, b)| *a - *b).collect()),
        }
    }
}

/// Exact per-factor geodesics of a product space.
pub fn factor_paths<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
) -> Result<Vec<FactorPath<T>>> {
    let p = p.validated(space)?;
    let q = q.validated(space)?;
    Ok(space
        .factors
        .iter()
        .zip(p.blocks.iter().zip(&q.blocks))
        .map(|(f, (a, b))| match (f, a, b) {
            (FactorSpec::HyperbolicPlane, Block::Coords { coords: u }, Block::Coords { coords: v }) => {
                FactorPath::Hyperbolic {
                    p: (u[0], u[1]),
                    q: (v[0], v[1]),
                    length: hyperbolic::distance(u[0], u[1], v[0], v[1]),
                }
            }
            (FactorSpec::Euclidean { .. }, Block::Coords { coords: u }, Block::Coords { coords: v }) => {
                let length = u.iter().zip(v).map(|(a, b)| (*a - *b) * (*a - *b)).sum::<T>().sqrt();
                FactorPath::Euclidean { p: u.clone(), q: v.clone(), length }
            }
            (f, Block::Horn(a), Block::Horn(b)) => {
                FactorPath::Horn(warped_of(f).expect("validated horn factor").connect(*a, *b))
            }
            _ => unreachable!("points were validated against the space"),
        })
        .collect())
}

fn combine<T: Real>(lengths: impl Iterator<Item = T>) -> T {
    lengths.map(|l| l * l).sum::<T>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
enum Repr<T> {
    Factors(Vec<FactorPath<T>>),
    /// Chart nodes at uniform parameter; horn blocks with `ξ ≤ ξ_snap` are
    /// read as boundary points.
    Polyline(Vec<Vec<T>>),
}

/// One sample of a geodesic: arclength from the start and the point there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeodesicSample<T> {
    pub arclength: T,
    pub point: CompletionPoint<T>,
}

/// A constant-speed geodesic segment.
#[derive(Debug, Clone, PartialEq)]
pub struct GeodesicSegment<T> {
    pub space: SpaceSpec<T>,
    pub start: CompletionPoint<T>,
    pub end: CompletionPoint<T>,
    /// Unit-speed chart velocity at the start; absent when the start lies on
    /// a stratum or the segment is constant.
    pub velocity: Option<TangentVector<T>>,
    pub length: T,
    pub samples: Vec<GeodesicSample<T>>,
    /// The segment ended on a stratum.
    pub hit_stratum: bool,
    /// Conserved-quantity drift along an integrated (shot) segment.
    pub drift: Option<ShootDrift>,
    repr: Repr<T>,
}

/// Largest deviations of conserved quantities over the accepted steps of a
/// shoot: speed relative to its mean, and the Clairaut constant `g_θθ θ′` of
/// each uncoupled horn factor (absolute).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootDrift {
    pub speed: f64,
    pub clairaut: f64,
}

impl<T: Real> GeodesicSegment<T> {
    /// Point at fraction `f ∈ [0, 1]` of the arclength.
    pub fn point_at(&self, f: T) -> CompletionPoint<T> {
        let f = f.max(T::zero()).min(T::one());
        match &self.repr {
            Repr::Factors(paths) => {
                CompletionPoint::new(paths.iter().map(|fp| fp.point_at(f)).collect())
            }
            Repr::Polyline(nodes) => {
                let m = nodes.len() - 1;
                let s = f * T::from_usize_lossy(m);
                let k = s.floor().to_usize().unwrap_or(0).min(m.saturating_sub(1));
                let w = s - T::from_usize_lossy(k);
                let x: Vec<T> = nodes[k]
                    .iter()
                    .zip(&nodes[(k + 1).min(m)])
                    .map(|(a, b)| *a + w * (*b - *a))
                    .collect();
                if f == T::zero() {
                    self.start.clone()
                } else if f == T::one() {
                    self.end.clone()
                } else {
                    chart_point(&self.space, &x)
                }
            }
        }
    }

    fn fill_samples(&mut self, count: usize) {
        let m = count.max(2) - 1;
        self.samples = (0..=m)
            .map(|k| {
                let f = T::from_usize_lossy(k) / T::from_usize_lossy(m);
                GeodesicSample { arclength: f * self.length, point: self.point_at(f) }
            })
            .collect();
    }
}

/// Chart coordinates to a completion point, snapping horn blocks at or below
/// the threshold to the boundary.
fn chart_point<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> CompletionPoint<T> {
    let mut p = CompletionPoint::from_chart(space, x);
    for b in &mut p.blocks {
        if let Block::Horn(HornBlock::Interior { xi, .. }) = b {
            if *xi <= T::lit(XI_SNAP) {
                *b = Block::boundary();
            }
        }
    }
    p
}

/// Distance from `p` to `q`.
pub fn distance<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>, q: &CompletionPoint<T>) -> Result<T> {
    if space.is_product() {
        let paths = factor_paths(space, p, q)?;
        return Ok(combine(paths.iter().map(FactorPath::length)));
    }
    Ok(geodesic_connect(space, p, q)?.length)
}

/// Point at fraction `f` of the geodesic from `p` to `q`.
pub fn geodesic_point<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
    f: T,
) -> Result<CompletionPoint<T>> {
    if space.is_product() {
        let paths = factor_paths(space, p, q)?;
        return Ok(CompletionPoint::new(paths.iter().map(|fp| fp.point_at(f)).collect()));
    }
    Ok(geodesic_connect(space, p, q)?.point_at(f))
}

pub fn midpoint<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>, q: &CompletionPoint<T>) -> Result<CompletionPoint<T>> {
    geodesic_point(space, p, q, T::lit(0.5))
}

/// Distance from `p` to the face of the completion where the given horn
/// factors have collapsed, in a product space.
pub fn distance_to_face<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>, horns: &[usize]) -> Result<T> {
    let p = p.validated(space)?;
    let mut acc = T::zero();
    for &h in horns {
        let w = warped_of(&space.factors[h])
            .ok_or_else(|| GeometryError::InvalidSpace(format!("factor {h} is not a horn")))?;
        let r = w.radial_length(T::zero(), p.blocks[h].as_horn().expect("horn block").xi());
        acc += r * r;
    }
    Ok(acc.sqrt())
}

/// Solves the geodesic boundary-value problem between `p` and `q`.
pub fn geodesic_connect<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
) -> Result<GeodesicSegment<T>> {
    space.validate()?;
    let p = p.validated(space)?;
    let q = q.validated(space)?;
    if space.is_product() {
        let paths = factor_paths(space, &p, &q)?;
        let length = combine(paths.iter().map(FactorPath::length));
        let velocity = if length > T::zero() && p.is_interior() {
            let mut v = Vec::with_capacity(space.dim());
            let mut ok = true;
            for fp in &paths {
                match fp.initial_velocity() {
                    Some(c) => v.extend(c.into_iter().map(|c| c / length)),
                    None => ok = false,
                }
            }
            ok.then(|| TangentVector::new(v))
        } else {
            None
        };
        let hit_stratum = !q.is_interior();
        let mut seg = GeodesicSegment {
            space: space.clone(),
            start: p,
            end: q,
            velocity,
            length,
            samples: Vec::new(),
            hit_stratum,
            drift: None,
            repr: Repr::Factors(paths),
        };
        seg.fill_samples(CONNECT_SAMPLES);
        return Ok(seg);
    }
    coupled_connect(space, &p, &q)
}

/// Largest step allowed near horn factors: a quarter of the smallest ξ.
fn horn_ceiling<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> T {
    let off = space.offsets();
    space
        .factors
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_horn())
        .map(|(i, _)| x[off[i] + 1] / T::lit(4.0))
        .fold(T::infinity(), T::min)
}

fn min_horn_xi<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Option<(usize, T)> {
    let off = space.offsets();
    space
        .factors
        .iter()
        .enumerate()
        .filter(|(_, f)| f.is_horn())
        .map(|(i, _)| (i, x[off[i] + 1]))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
}

/// Geodesic right-hand side on the state `(x, ẋ)`.
fn geodesic_rhs<T: Real>(space: &SpaceSpec<T>, y: &[T]) -> Option<Vec<T>> {
    let n = space.dim();
    let (x, v) = y.split_at(n);
    let gamma = christoffel_chart(space, x).ok()?;
    let mut out = Vec::with_capacity(2 * n);
    out.extend_from_slice(v);
    for i in 0..n {
        let mut a = T::zero();
        for j in 0..n {
            if v[j] == T::zero() {
                continue;
            }
            for k in 0..n {
                a += gamma[i * n * n + j * n + k] * v[j] * v[k];
            }
        }
        out.push(-a);
    }
    Some(out)
}

/// Options for [`geodesic_shoot`].
#[derive(Debug, Clone)]
pub struct ShootOptions<T> {
    pub ode: OdeOptions<T>,
}

impl<T: Real> Default for ShootOptions<T> {
    fn default() -> Self {
        ShootOptions { ode: OdeOptions { h_max: T::lit(0.02), ..OdeOptions::default() } }
    }
}

/// Integrates the geodesic from `p` with initial direction `v` for arclength `s`.
pub fn geodesic_shoot<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    v: &TangentVector<T>,
    s: T,
) -> Result<GeodesicSegment<T>> {
    geodesic_shoot_with(space, p, v, s, &ShootOptions::default())
}

pub fn geodesic_shoot_with<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    v: &TangentVector<T>,
    s: T,
    opts: &ShootOptions<T>,
) -> Result<GeodesicSegment<T>> {
    space.validate()?;
    let p = p.validated(space)?;
    if let Some(&fi) = p.stratum().iter().next() {
        return Err(GeometryError::SingularAtStratum { factor: fi });
    }
    let n = space.dim();
    if v.components.len() != n {
        return Err(GeometryError::InvalidPoint(format!(
            "tangent vector has {} components, space dimension is {n}",
            v.components.len()
        )));
    }
    if v.is_zero() {
        return Err(GeometryError::InvalidPoint("zero initial velocity".into()));
    }
    let x0 = p.chart();
    let g = metric_chart(space, &x0)?;
    let speed = linalg::bilinear(&g, &v.components, &v.components).sqrt();
    let unit = v.scaled(T::one() / speed);
    let mut y0 = x0.clone();
    y0.extend_from_slice(&unit.components);

    let snap = T::lit(XI_SNAP);
    let mut samples = vec![GeodesicSample { arclength: T::zero(), point: p.clone() }];
    let mut hit: Option<(T, Vec<T>)> = None;
    let off = space.offsets();
    let clairaut_of = |y: &[T]| -> Vec<f64> {
        if space.coupling().is_some() {
            return Vec::new();
        }
        let g = metric_chart_unchecked(space, &y[..n]);
        space
            .factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_horn())
            .map(|(i, _)| (g[off[i] * n + off[i]] * y[n + off[i]]).to_f64_lossy())
            .collect()
    };
    let c0 = clairaut_of(&y0);
    let mut speeds = vec![1.0f64];
    let mut clairaut = 0.0f64;
    let (y, outcome) = dopri5(
        |_, y| geodesic_rhs(space, y),
        T::zero(),
        &y0,
        s,
        &opts.ode,
        |y| horn_ceiling(space, &y[..n]),
        |t, y| {
            if let Some((_, xi)) = min_horn_xi(space, &y[..n]) {
                if xi < snap {
                    hit = Some((t, y.to_vec()));
                    return Control::Stop;
                }
            }
            samples.push(GeodesicSample { arclength: t, point: chart_point(space, &y[..n]) });
            speeds.push(v_norm(space, y).to_f64_lossy());
            for (a, b) in clairaut_of(y).iter().zip(&c0) {
                clairaut = clairaut.max((a - b).abs());
            }
            Control::Continue
        },
    );
    let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
    let drift = ShootDrift {
        speed: speeds.iter().map(|v| (v - mean).abs() / mean).fold(0.0, f64::max),
        clairaut,
    };
    let (end, length, hit_stratum) = match outcome {
        OdeOutcome::Finished => (chart_point(space, &y[..n]), s, false),
        OdeOutcome::Stopped(t) => {
            let (_, state) = hit.expect("stop only on stratum hit");
            // Exact radial residual from ξ < ξ_snap down to the boundary point.
            let (fi, xi) = min_horn_xi(space, &state[..n]).expect("horn present");
            let residual = warped_of(&space.factors[fi]).expect("horn").radial_length(T::zero(), xi);
            let mut x = state[..n].to_vec();
            let off = space.offsets();
            for (i, f) in space.factors.iter().enumerate() {
                if f.is_horn() && x[off[i] + 1] < snap {
                    x[off[i] + 1] = T::zero();
                }
            }
            let end = chart_point(space, &x);
            (end, t + residual, true)
        }
        OdeOutcome::Failed { t, steps, reason } => {
            return Err(GeometryError::IntegrationFailure {
                steps,
                arclength: t.to_f64_lossy(),
                reason,
                last_state: y.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
    };
    if hit_stratum {
        samples.push(GeodesicSample { arclength: length, point: end.clone() });
    }
    let nodes = samples.iter().map(|s| s.point.chart()).collect();
    Ok(GeodesicSegment {
        space: space.clone(),
        start: p,
        end,
        velocity: Some(unit),
        length,
        samples,
        hit_stratum,
        drift: Some(drift),
        repr: Repr::Polyline(nodes),
    })
}

/// Options for the coupled-space boundary-value solver.
#[derive(Debug, Clone)]
pub struct BvpOptions<T> {
    pub shoot_guesses: usize,
    pub max_spread_deg: T,
    pub newton_iters: usize,
    pub residual_tol: T,
    pub min_level: u32,
    pub max_level: u32,
    pub length_rtol: T,
}

impl<T: Real> Default for BvpOptions<T> {
    fn default() -> Self {
        BvpOptions {
            shoot_guesses: 8,
            max_spread_deg: T::lit(30.0),
            newton_iters: 30,
            residual_tol: T::lit(1e-10),
            min_level: 4,
            max_level: 12,
            length_rtol: T::lit(1e-6),
        }
    }
}

fn coupled_connect<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
) -> Result<GeodesicSegment<T>> {
    let opts = BvpOptions::default();
    if p == q {
        return Ok(GeodesicSegment {
            space: space.clone(),
            start: p.clone(),
            end: q.clone(),
            velocity: None,
            length: T::zero(),
            samples: vec![GeodesicSample { arclength: T::zero(), point: p.clone() }; 2],
            hit_stratum: !q.is_interior(),
            drift: None,
            repr: Repr::Polyline(vec![p.chart(), q.chart()]),
        });
    }
    if p.is_interior() && q.is_interior() {
        if let Some(seg) = shoot_connect(space, p, q, &opts) {
            return Ok(seg);
        }
    }
    curve_shorten(space, p, q, &opts)
}

/// Endpoint of the unit-time geodesic with initial chart velocity `v`, and
/// optionally its samples at `m` uniform times.
fn shoot_unit_time<T: Real>(space: &SpaceSpec<T>, x0: &[T], v: &[T], m: usize) -> Option<Vec<Vec<T>>> {
    let n = space.dim();
    let mut y = x0.to_vec();
    y.extend_from_slice(v);
    let opts = OdeOptions { h_max: T::lit(0.02), rtol: T::lit(1e-12), ..OdeOptions::default() };
    let mut nodes = vec![x0.to_vec()];
    for k in 0..m {
        let t0 = T::from_usize_lossy(k) / T::from_usize_lossy(m);
        let t1 = T::from_usize_lossy(k + 1) / T::from_usize_lossy(m);
        let (yn, out) = dopri5(
            |_, y| geodesic_rhs(space, y),
            t0,
            &y,
            t1,
            &opts,
            |y| {
                // Step ceiling scaled by speed: ξ/4 in arclength.
                let speed = v_norm(space, y).max(T::lit(1e-300));
                horn_ceiling(space, &y[..n]) / speed
            },
            |_, y| match min_horn_xi(space, &y[..n]) {
                Some((_, xi)) if xi < T::lit(XI_SNAP) => Control::Stop,
                _ => Control::Continue,
            },
        );
        if out != OdeOutcome::Finished {
            return None;
        }
        y = yn;
        nodes.push(y[..n].to_vec());
    }
    Some(nodes)
}

fn v_norm<T: Real>(space: &SpaceSpec<T>, y: &[T]) -> T {
    let n = space.dim();
    let g = metric_chart_unchecked(space, &y[..n]);
    linalg::bilinear(&g, &y[n..], &y[n..]).max(T::zero()).sqrt()
}

fn shoot_connect<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
    opts: &BvpOptions<T>,
) -> Option<GeodesicSegment<T>> {
    let n = space.dim();
    let x0 = p.chart();
    let x1 = q.chart();
    let chord: Vec<T> = x1.iter().zip(&x0).map(|(a, b)| *a - *b).collect();
    let cn = linalg::norm(&chord);
    if cn == T::zero() {
        return None;
    }
    // A unit vector orthogonal to the chord spans the perturbation plane.
    let axis = (0..n)
        .min_by(|&a, &b| chord[a].abs().partial_cmp(&chord[b].abs()).unwrap())
        .unwrap_or(0);
    let mut perp = vec![T::zero(); n];
    perp[axis] = T::one();
    let proj = chord[axis] / (cn * cn);
    for i in 0..n {
        perp[i] -= proj * chord[i];
    }
    let pn = linalg::norm(&perp);
    if pn > T::zero() {
        for c in &mut perp {
            *c = *c * cn / pn;
        }
    }
    let mut angles = vec![T::zero()];
    let steps = (opts.shoot_guesses.saturating_sub(1)).div_ceil(2).max(1);
    for k in 1..=steps {
        let a = opts.max_spread_deg * T::from_usize_lossy(k) / T::from_usize_lossy(steps);
        angles.push(a);
        angles.push(-a);
    }
    angles.truncate(opts.shoot_guesses.max(1));

    let residual = |v: &[T]| -> Option<Vec<T>> {
        let nodes = shoot_unit_time(space, &x0, v, 1)?;
        Some(nodes[1].iter().zip(&x1).map(|(a, b)| *a - *b).collect())
    };
    let scale = T::one() + linalg::norm(&x1);
    let mut best: Option<(T, Vec<T>)> = None;
    for a in angles {
        let rad = a * T::PI() / T::lit(180.0);
        let mut v: Vec<T> = chord.iter().zip(&perp).map(|(c, p)| *c * rad.cos() + *p * rad.sin()).collect();
        let Some(mut r) = residual(&v) else { continue };
        let mut rn = linalg::norm(&r);
        for _ in 0..opts.newton_iters {
            if rn <= opts.residual_tol * scale {
                break;
            }
            let mut jac = vec![T::zero(); n * n];
            let mut ok = true;
            for j in 0..n {
                let h = T::lit(1e-7) * (T::one() + v[j].abs());
                let mut vp = v.clone();
                vp[j] += h;
                match residual(&vp) {
                    Some(rp) => {
                        for i in 0..n {
                            jac[i * n + j] = (rp[i] - r[i]) / h;
                        }
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                break;
            }
            let Some(step) = linalg::solve(&jac, &r) else { break };
            let mut lambda = T::one();
            let mut improved = false;
            for _ in 0..20 {
                let vn: Vec<T> = v.iter().zip(&step).map(|(a, d)| *a - lambda * *d).collect();
                if let Some(rnew) = residual(&vn) {
                    let nn = linalg::norm(&rnew);
                    if nn < rn {
                        v = vn;
                        r = rnew;
                        rn = nn;
                        improved = true;
                        break;
                    }
                }
                lambda = lambda * T::lit(0.5);
            }
            if !improved {
                break;
            }
        }
        if rn <= opts.residual_tol * scale {
            let g = metric_chart(space, &x0).ok()?;
            let len = linalg::bilinear(&g, &v, &v).sqrt();
            if best.as_ref().map_or(true, |(l, _)| len < *l) {
                best = Some((len, v));
            }
        }
    }
    let (length, v) = best?;
    let nodes = shoot_unit_time(space, &x0, &v, CONNECT_SAMPLES - 1)?;
    let mut seg = GeodesicSegment {
        space: space.clone(),
        start: p.clone(),
        end: q.clone(),
        velocity: Some(TangentVector::new(v.iter().map(|c| *c / length).collect())),
        length,
        samples: Vec::new(),
        hit_stratum: false,
        drift: None,
        repr: Repr::Polyline(nodes),
    };
    seg.fill_samples(CONNECT_SAMPLES);
    Some(seg)
}

/// Discrete energy `N Σ Δᵀ g(mid) Δ` of a chart polyline and its gradient.
fn polyline_energy<T: Real>(space: &SpaceSpec<T>, nodes: &[Vec<T>]) -> Option<(T, Vec<Vec<T>>)> {
    let n = space.dim();
    let nn = n * n;
    let segs = nodes.len() - 1;
    let nf = T::from_usize_lossy(segs);
    let mut e = T::zero();
    let mut grad = vec![vec![T::zero(); n]; nodes.len()];
    let half = T::lit(0.5);
    for i in 0..segs {
        let mid: Vec<T> = nodes[i].iter().zip(&nodes[i + 1]).map(|(a, b)| (*a + *b) * half).collect();
        let g = metric_chart(space, &mid).ok()?;
        let d: Vec<T> = nodes[i + 1].iter().zip(&nodes[i]).map(|(a, b)| *a - *b).collect();
        let gd = linalg::mat_vec(&g, &d);
        e += nf * linalg::dot(&d, &gd);
        let dg = metric_derivative(space, &mid);
        for k in 0..n {
            let mut q = T::zero();
            for a in 0..n {
                for b in 0..n {
                    q += d[a] * dg[k * nn + a * n + b] * d[b];
                }
            }
            let two_gd = gd[k] + gd[k];
            grad[i + 1][k] += nf * (two_gd + half * q);
            grad[i][k] += nf * (-two_gd + half * q);
        }
    }
    Some((e, grad))
}

fn polyline_length<T: Real>(space: &SpaceSpec<T>, nodes: &[Vec<T>]) -> T {
    let half = T::lit(0.5);
    nodes
        .windows(2)
        .map(|w| {
            let mid: Vec<T> = w[0].iter().zip(&w[1]).map(|(a, b)| (*a + *b) * half).collect();
            let g = metric_chart_unchecked(space, &mid);
            let d: Vec<T> = w[1].iter().zip(&w[0]).map(|(a, b)| *a - *b).collect();
            linalg::bilinear(&g, &d, &d).max(T::zero()).sqrt()
        })
        .sum()
}

/// Discrete curve shortening with dyadic refinement. Boundary endpoints are
/// replaced by a free-angle node at `ξ = ξ_snap`, and the exact radial
/// residual below it is added to the length.
fn curve_shorten<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
    opts: &BvpOptions<T>,
) -> Result<GeodesicSegment<T>> {
    let n = space.dim();
    let snap = T::lit(XI_SNAP);
    let off = space.offsets();
    let lift = |pt: &CompletionPoint<T>, other: &CompletionPoint<T>| -> (Vec<T>, Vec<usize>, T) {
        let mut x = pt.chart();
        let mut free = Vec::new();
        let mut residual = T::zero();
        for (fi, f) in space.factors.iter().enumerate() {
            if f.is_horn() && pt.blocks[fi].as_horn().map_or(false, HornBlock::is_boundary) {
                let o = off[fi];
                // Start the free angle at the other endpoint's angle.
                x[o] = match other.blocks[fi].as_horn() {
                    Some(HornBlock::Interior { theta, .. }) => *theta,
                    _ => T::zero(),
                };
                x[o + 1] = snap;
                free.push(o);
                let r = warped_of(f).expect("horn").radial_length(T::zero(), snap);
                residual += r * r;
            }
        }
        (x, free, residual.sqrt())
    };
    let (xa, free_a, res_a) = lift(p, q);
    let (xb, free_b, res_b) = lift(q, p);
    let residual = res_a + res_b;

    let mut nodes: Vec<Vec<T>> = {
        let m = 1usize << opts.min_level;
        (0..=m)
            .map(|k| {
                let f = T::from_usize_lossy(k) / T::from_usize_lossy(m);
                xa.iter().zip(&xb).map(|(a, b)| *a + f * (*b - *a)).collect()
            })
            .collect()
    };
    let mut prev: Option<T> = None;
    let mut last_len = T::infinity();
    for level in opts.min_level..=opts.max_level {
        let m = nodes.len() - 1;
        // Unknowns: interior nodes plus free endpoint angles.
        let pack = |nodes: &[Vec<T>]| -> Vec<T> {
            let mut z: Vec<T> = nodes[1..m].iter().flatten().copied().collect();
            z.extend(free_a.iter().map(|&o| nodes[0][o]));
            z.extend(free_b.iter().map(|&o| nodes[m][o]));
            z
        };
        let unpack = |z: &[T], base: &[Vec<T>]| -> Vec<Vec<T>> {
            let mut out = base.to_vec();
            for i in 1..m {
                out[i].copy_from_slice(&z[(i - 1) * n..i * n]);
            }
            let mut k = (m - 1) * n;
            for &o in &free_a {
                out[0][o] = z[k];
                k += 1;
            }
            for &o in &free_b {
                out[m][o] = z[k];
                k += 1;
            }
            out
        };
        let base = nodes.clone();
        let fg = |z: &[T]| -> (T, Vec<T>) {
            let pts = unpack(z, &base);
            match polyline_energy(space, &pts) {
                Some((e, g)) => {
                    let mut grad: Vec<T> = g[1..m].iter().flatten().copied().collect();
                    grad.extend(free_a.iter().map(|&o| g[0][o]));
                    grad.extend(free_b.iter().map(|&o| g[m][o]));
                    (e, grad)
                }
                None => (T::infinity(), vec![T::zero(); z.len()]),
            }
        };
        let z0 = pack(&nodes);
        let min = lbfgs(fg, &z0, T::lit(1e-11), 5000);
        nodes = unpack(&min.x, &base);
        let len = polyline_length(space, &nodes) + residual;
        last_len = len;
        if let Some(pl) = prev {
            if (len - pl).abs() <= opts.length_rtol * len {
                return Ok(polyline_segment(space, p, q, nodes, len));
            }
        }
        prev = Some(len);
        if level < opts.max_level {
            let mut refined = Vec::with_capacity(2 * m + 1);
            for i in 0..m {
                refined.push(nodes[i].clone());
                refined.push(nodes[i].iter().zip(&nodes[i + 1]).map(|(a, b)| (*a + *b) / T::lit(2.0)).collect());
            }
            refined.push(nodes[m].clone());
            nodes = refined;
        }
    }
    let gap = prev.map_or(T::zero(), |pl| (last_len - pl).abs());
    Err(GeometryError::NoConvergence {
        best_length: last_len.to_f64_lossy(),
        lower_bound: (last_len - gap - gap).max(T::zero()).to_f64_lossy(),
        best_path: nodes.iter().map(|x| x.iter().map(|v| v.to_f64_lossy()).collect()).collect(),
    })
}

fn polyline_segment<T: Real>(
    space: &SpaceSpec<T>,
    p: &CompletionPoint<T>,
    q: &CompletionPoint<T>,
    mut nodes: Vec<Vec<T>>,
    length: T,
) -> GeodesicSegment<T> {
    // Reproduce the endpoints exactly.
    let m = nodes.len() - 1;
    if p.is_interior() {
        nodes[0] = p.chart();
    }
    if q.is_interior() {
        nodes[m] = q.chart();
    }
    let velocity = if p.is_interior() && length > T::zero() {
        let n = space.dim();
        let d: Vec<T> = (0..n).map(|i| (nodes[1][i] - nodes[0][i]) * T::from_usize_lossy(m)).collect();
        let s = crate::metric::norm_at(space, &nodes[0], &d).unwrap_or(T::one());
        Some(TangentVector::new(d.iter().map(|c| *c / s).collect()))
    } else {
        None
    };
    let mut seg = GeodesicSegment {
        space: space.clone(),
        start: p.clone(),
        end: q.clone(),
        velocity,
        length,
        samples: Vec::new(),
        hit_stratum: !q.is_interior(),
        drift: None,
        repr: Repr::Polyline(nodes),
    };
    seg.fill_samples(CONNECT_SAMPLES);
    seg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horn(theta: f64, xi: f64) -> Block<f64> {
        Block::interior(theta, xi)
    }

    #[test]
    fn boundary_to_horn_point() {
        let s = SpaceSpec::horn();
        let p = CompletionPoint::new(vec![Block::boundary()]);
        let q = CompletionPoint::new(vec![horn(2.0, 0.5)]);
        let g = geodesic_connect(&s, &p, &q).unwrap();
        assert!((g.length - 1.0).abs() < 1e-15);
        for smp in &g.samples[1..] {
            match smp.point.blocks[0] {
                Block::Horn(HornBlock::Interior { theta, xi }) => {
                    assert_eq!(theta, 2.0);
                    assert!((xi - smp.arclength / 2.0).abs() < 1e-15);
                }
                _ => panic!("interior expected"),
            }
        }
        let m = midpoint(&s, &p, &q).unwrap();
        assert_eq!(m, CompletionPoint::new(vec![horn(2.0, 0.25)]));
    }

    #[test]
    fn corner_example() {
        let s = SpaceSpec::new(vec![FactorSpec::Horn, FactorSpec::Horn]).unwrap();
        let p = CompletionPoint::new(vec![horn(0.0, 0.3), Block::boundary()]);
        let q = CompletionPoint::new(vec![Block::boundary(), horn(1.0, 0.4)]);
        let g = geodesic_connect(&s, &p, &q).unwrap();
        assert!((g.length - 1.0).abs() < 1e-14);
        for smp in &g.samples[1..CONNECT_SAMPLES - 1] {
            assert!(smp.point.is_interior());
        }
    }

    #[test]
    fn hyperbolic_and_flat_distances() {
        let h = SpaceSpec::hyperbolic();
        let a = CompletionPoint::new(vec![Block::coords(vec![0.0, 1.0])]);
        let b = CompletionPoint::new(vec![Block::coords(vec![0.0, 4.0])]);
        assert!((distance(&h, &a, &b).unwrap() - 4f64.ln()).abs() < 1e-14);
        let e = SpaceSpec::euclidean(2);
        let a = CompletionPoint::new(vec![Block::coords(vec![0.0, 0.0])]);
        let b = CompletionPoint::new(vec![Block::coords(vec![3.0, 4.0])]);
        assert_eq!(distance(&e, &a, &b).unwrap(), 5.0);
        assert_eq!(distance(&e, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn radial_shoot_hits_boundary() {
        let s = SpaceSpec::horn();
        let p = CompletionPoint::new(vec![horn(0.7, 1.0)]);
        let g = geodesic_shoot(&s, &p, &TangentVector::new(vec![0.0, -1.0]), 2.0).unwrap();
        assert!(g.hit_stratum);
        assert_eq!(g.end.blocks[0], Block::boundary());
        assert!((g.length - 2.0).abs() < 1e-9, "{}", g.length);
        for smp in &g.samples {
            if let Block::Horn(HornBlock::Interior { theta, .. }) = smp.point.blocks[0] {
                assert_eq!(theta, 0.7);
            }
        }
    }

    #[test]
    fn vertical_hyperbolic_shoot() {
        let s = SpaceSpec::hyperbolic();
        let p = CompletionPoint::new(vec![Block::coords(vec![0.0, 1.0])]);
        let g = geodesic_shoot(&s, &p, &TangentVector::new(vec![0.0, 1.0]), 2f64.ln()).unwrap();
        let c = g.end.blocks[0].as_coords().unwrap();
        assert!(c[0].abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn shoot_reproduces_connect() {
        let s = SpaceSpec::horn();
        let p = CompletionPoint::new(vec![horn(0.0, 0.5)]);
        let q = CompletionPoint::new(vec![horn(1.0, 0.6)]);
        let g = geodesic_connect(&s, &p, &q).unwrap();
        let v = g.velocity.clone().unwrap();
        let shot = geodesic_shoot(&s, &p, &v, g.length).unwrap();
        let end = shot.end.chart();
        assert!((end[0] - 1.0).abs() < 1e-7 && (end[1] - 0.6).abs() < 1e-7, "{end:?}");
    }

    #[test]
    fn coupled_space_solvers_agree_with_product_limit() {
        let weak = SpaceSpec::new(vec![
            FactorSpec::PerturbedHorn { b: 1.0, a4: 0.1, b3: 1e-9, c6: 0.05 },
            FactorSpec::Euclidean { dim: 1 },
        ])
        .unwrap();
        let product = SpaceSpec::new(vec![
            FactorSpec::PerturbedHorn { b: 1.0, a4: 0.1, b3: 0.0, c6: 0.05 },
            FactorSpec::Euclidean { dim: 1 },
        ])
        .unwrap();
        let p = CompletionPoint::new(vec![horn(0.0, 0.6), Block::coords(vec![0.0])]);
        let q = CompletionPoint::new(vec![horn(0.8, 0.7), Block::coords(vec![0.3])]);
        let exact = distance(&product, &p, &q).unwrap();
        let shot = geodesic_connect(&weak, &p, &q).unwrap();
        assert!((shot.length - exact).abs() < 1e-6 * exact, "{} {}", shot.length, exact);
        let cs = curve_shorten(&weak, &p, &q, &BvpOptions::default()).unwrap();
        assert!((cs.length - exact).abs() < 1e-5 * exact, "{} {}", cs.length, exact);
    }
}
