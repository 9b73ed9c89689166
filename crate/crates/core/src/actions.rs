//! Displacement and translation length of isometries, the four-cell
//! classification, equivariant axes, and divergence and properness probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeometryError, Result};
use crate::geodesic::{distance, geodesic_point, geodesic_shoot, GeodesicSegment};
use crate::hyperbolic::{self, Mobius};
use crate::isometry::{FactorAction, Isometry};
use crate::metric::norm_at;
use crate::optimize::{golden_min, nelder_mead, NelderMeadOptions};
use crate::paths::{heat_flow, heat_flow_observed, path_length, DiscretePath, FlowOptions, FlowReport};
use crate::scalar::Real;
use crate::space::{Block, CompletionPoint, FactorSpec, HornBlock, SpaceSpec, TangentVector, XI_SNAP};

/// Translation lengths below this count as zero.
pub const L_TOL: f64 = 1e-6;

/// `d(p, γ·p)`.
pub fn displacement<T: Real>(space: &SpaceSpec<T>, iso: &Isometry<T>, p: &CompletionPoint<T>) -> Result<T> {
    distance(space, p, &iso.apply(p))
}

/// Search effort for [`translation_length`].
#[derive(Debug, Clone)]
pub struct SearchBudget {
    pub seed: u64,
    /// Boxes `[−2^j, 2^j]` for `j = 1..=levels`.
    pub levels: u32,
    /// Multi-starts spread over all levels.
    pub starts: usize,
    pub max_evals: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget { seed: 0, levels: 10, starts: 32, max_evals: 1500 }
    }
}

/// Best displacement found inside one search box.
#[derive(Debug, Clone, Serialize)]
pub struct EscapeStep {
    pub level: u32,
    pub displacement: f64,
    pub min_xi: Option<f64>,
    pub max_abs_coord: f64,
    pub on_box_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// Interior minimizer with a local certificate.
    Attained,
    /// Minimizing sequence runs into a stratum or off to infinity.
    Escaping,
    Inconclusive,
}

/// Translation length of one group of factors that the isometry does not mix
/// with the others.
#[derive(Debug, Clone, Serialize)]
pub struct ComponentReport {
    pub factors: Vec<usize>,
    pub l_estimate: f64,
    pub status: SearchStatus,
    pub levels: Vec<EscapeStep>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TranslationLength<T> {
    pub l_estimate: T,
    pub attained: bool,
    pub inconclusive: bool,
    /// Minimizer when attained, otherwise the last point of the escaping
    /// sequence.
    pub witness: CompletionPoint<T>,
    pub components: Vec<ComponentReport>,
}

/// Groups of factor indices closed under the permutation. A coupled space is
/// one group.
pub fn independent_components<T: Real>(space: &SpaceSpec<T>, iso: &Isometry<T>) -> Vec<Vec<usize>> {
    let k = space.factors.len();
    if !space.is_product() {
        return vec![(0..k).collect()];
    }
    let perm = iso.permutation.clone().unwrap_or_else(|| (0..k).collect());
    let mut seen = vec![false; k];
    let mut out = Vec::new();
    for i in 0..k {
        if seen[i] {
            continue;
        }
        let mut cyc = Vec::new();
        let mut j = i;
        while !seen[j] {
            seen[j] = true;
            cyc.push(j);
            j = perm[j];
        }
        cyc.sort_unstable();
        out.push(cyc);
    }
    out
}

/// Restriction of `iso` to a permutation-closed set of factors.
fn restrict<T: Real>(space: &SpaceSpec<T>, iso: &Isometry<T>, comp: &[usize]) -> (SpaceSpec<T>, Isometry<T>) {
    if comp.len() == space.factors.len() {
        return (space.clone(), iso.clone());
    }
    let pos = |i: usize| comp.iter().position(|&c| c == i).expect("closed under permutation");
    let sub_space = SpaceSpec { factors: comp.iter().map(|&i| space.factors[i].clone()).collect() };
    let actions = comp.iter().map(|&i| iso.factor_actions[i].clone()).collect();
    let perm = iso.permutation.as_ref().map(|p| comp.iter().map(|&i| pos(p[i])).collect::<Vec<_>>());
    let sub = Isometry { factor_actions: actions, permutation: perm.filter(|p| p.iter().enumerate().any(|(i, &j)| i != j)) };
    (sub_space, sub)
}

/// Search coordinates: `(θ, ln ξ)` on horns, `(x, ln y)` on the hyperbolic
/// plane, raw coordinates on Euclidean factors.
fn to_params<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>) -> Vec<T> {
    let mut u = Vec::with_capacity(space.dim());
    for (f, b) in space.factors.iter().zip(&p.blocks) {
        match (f, b) {
            (FactorSpec::HyperbolicPlane, Block::Coords { coords }) => {
                u.push(coords[0]);
                u.push(coords[1].ln());
            }
            (_, Block::Coords { coords }) => u.extend_from_slice(coords),
            (_, Block::Horn(HornBlock::Interior { theta, xi })) => {
                u.push(*theta);
                u.push(xi.ln());
            }
            (_, Block::Horn(HornBlock::Boundary)) => {
                u.push(T::zero());
                u.push(T::lit(XI_SNAP).ln());
            }
        }
    }
    u
}

fn from_params<T: Real>(space: &SpaceSpec<T>, u: &[T]) -> CompletionPoint<T> {
    let mut k = 0;
    let mut blocks = Vec::with_capacity(space.factors.len());
    for f in &space.factors {
        match f {
            FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => {
                blocks.push(Block::interior(u[k], u[k + 1].exp()));
                k += 2;
            }
            FactorSpec::HyperbolicPlane => {
                blocks.push(Block::coords(vec![u[k], u[k + 1].exp()]));
                k += 2;
            }
            FactorSpec::Euclidean { dim } => {
                blocks.push(Block::coords(u[k..k + dim].to_vec()));
                k += dim;
            }
        }
    }
    CompletionPoint::new(blocks)
}

/// Search box of level `j`: ξ ≥ max(10 ξ_snap, 4^{−j}), |ln y| ≤ min(2^j, 300),
/// every other coordinate within `[−2^j, 2^j]`.
fn level_box<T: Real>(space: &SpaceSpec<T>, j: u32) -> Vec<(T, T)> {
    let w = T::lit(2f64.powi(j as i32));
    let mut b = Vec::new();
    for f in &space.factors {
        match f {
            FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => {
                b.push((-w, w));
                let lo = (10.0 * XI_SNAP).max(4f64.powi(-(j as i32))).ln();
                b.push((T::lit(lo), T::lit(j as f64 * std::f64::consts::LN_2)));
            }
            FactorSpec::HyperbolicPlane => {
                b.push((-w, w));
                let c = w.min(T::lit(300.0));
                b.push((-c, c));
            }
            FactorSpec::Euclidean { dim } => b.extend(std::iter::repeat((-w, w)).take(*dim)),
        }
    }
    b
}

fn clamp_box<T: Real>(u: &[T], bx: &[(T, T)]) -> (Vec<T>, T) {
    let mut out = Vec::with_capacity(u.len());
    let mut excess = T::zero();
    for (x, (lo, hi)) in u.iter().zip(bx) {
        let c = x.max(*lo).min(*hi);
        excess += (*x - c).abs();
        out.push(c);
    }
    (out, excess)
}

fn on_boundary<T: Real>(u: &[T], bx: &[(T, T)]) -> bool {
    u.iter().zip(bx).any(|(x, (lo, hi))| {
        let tol = T::lit(1e-6) * (T::one() + lo.abs().max(hi.abs()));
        (*x - *lo).abs() <= tol || (*hi - *x).abs() <= tol
    })
}

fn lex_cmp<T: Real>(a: &(T, Vec<T>), b: &(T, Vec<T>)) -> std::cmp::Ordering {
    let key = |v: T| v.to_f64_lossy();
    key(a.0).total_cmp(&key(b.0)).then_with(|| {
        a.1.iter()
            .zip(&b.1)
            .map(|(x, y)| key(*x).total_cmp(&key(*y)))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    })
}

/// Multi-start minimization of `f` over a box; returns (value, params) of the
/// best start, ties broken lexicographically.
fn box_minimize<T, F>(f: &F, bx: &[(T, T)], starts: &[Vec<T>], max_evals: usize) -> (T, Vec<T>)
where
    T: Real,
    F: Fn(&[T]) -> T + Sync,
{
    let penalty = T::lit(1e-6);
    let opts = NelderMeadOptions { initial_step: T::lit(0.5), max_evals, ..NelderMeadOptions::default() };
    let mut results: Vec<(T, Vec<T>)> = starts
        .par_iter()
        .map(|s| {
            let m = nelder_mead(
                |u: &[T]| {
                    let (c, ex) = clamp_box(u, bx);
                    f(&c) + penalty * ex
                },
                s,
                &opts,
            );
            let (c, _) = clamp_box(&m.x, bx);
            (f(&c), c)
        })
        .collect();
    results.sort_by(lex_cmp);
    results.swap_remove(0)
}

fn random_in_box<T: Real>(rng: &mut ChaCha8Rng, bx: &[(T, T)]) -> Vec<T> {
    bx.iter()
        .map(|(lo, hi)| {
            let (l, h) = (lo.to_f64_lossy(), hi.to_f64_lossy());
            T::lit(rng.gen_range(l..=h))
        })
        .collect()
}

fn step_summary<T: Real>(space: &SpaceSpec<T>, level: u32, value: T, u: &[T], bx: &[(T, T)]) -> EscapeStep {
    let p = from_params(space, u);
    EscapeStep {
        level,
        displacement: value.to_f64_lossy(),
        min_xi: p.min_xi().map(Real::to_f64_lossy),
        max_abs_coord: u.iter().map(|x| x.abs().to_f64_lossy()).fold(0.0, f64::max),
        on_box_boundary: on_boundary(u, bx),
    }
}

/// Squared chart discrepancy between `p` and `γ·p` in search coordinates;
/// zero exactly at fixed points.
fn chart_discrepancy<T: Real>(space: &SpaceSpec<T>, iso: &Isometry<T>, u: &[T]) -> T {
    let p = from_params(space, u);
    let q = to_params(space, &iso.apply(&p));
    u.iter().zip(&q).map(|(a, b)| (*a - *b) * (*a - *b)).sum()
}

struct ComponentSearch<T> {
    report: ComponentReport,
    value: T,
    point: CompletionPoint<T>,
}

fn search_component<T: Real>(
    space: &SpaceSpec<T>,
    iso: &Isometry<T>,
    factors: Vec<usize>,
    budget: &SearchBudget,
    salt: u64,
) -> ComponentSearch<T> {
    let f = |u: &[T]| -> T {
        match displacement(space, iso, &from_params(space, u)) {
            Ok(v) if v.is_finite() => v,
            _ => T::infinity(),
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let levels = budget.levels.max(2);
    // Two more starts on the first two levels, the rest spread evenly.
    let mut per_level = vec![budget.starts / levels as usize; levels as usize];
    let mut extra = budget.starts - per_level.iter().sum::<usize>();
    let mut i = 0;
    while extra > 0 {
        per_level[i % levels as usize] += 1;
        extra -= 1;
        i += 1;
    }

    let mut steps = Vec::new();
    let mut best: Option<(T, Vec<T>)> = None;
    let mut first_value = T::zero();
    let mut bx = level_box(space, 1);
    for j in 1..=levels {
        bx = level_box(space, j);
        let mut starts: Vec<Vec<T>> = (0..per_level[j as usize - 1]).map(|_| random_in_box(&mut rng, &bx)).collect();
        if let Some((_, u)) = &best {
            starts.push(clamp_box(u, &bx).0);
        } else {
            starts.push(clamp_box(&to_params(space, &default_base(space)), &bx).0);
        }
        let (v, u) = box_minimize(&f, &bx, &starts, budget.max_evals);
        if j == 1 {
            first_value = v;
        }
        steps.push(step_summary(space, j, v, &u, &bx));
        best = Some((v, u));
    }
    let (mut value, mut u) = best.expect("at least one level");
    let l_tol = T::lit(L_TOL);
    let n = steps.len();
    let boundary_tail = steps[n - 1].on_box_boundary && steps[n - 2].on_box_boundary;
    let decreased = first_value - value > T::lit(1e-9) * first_value.abs().max(T::lit(1e-30));

    let mut note = None;
    let status = if !value.is_finite() {
        note = Some("displacement could not be evaluated".to_string());
        SearchStatus::Inconclusive
    } else if value < l_tol {
        // Zero translation length: attained exactly when γ has a fixed point.
        let g = |w: &[T]| chart_discrepancy(space, iso, w);
        let mut fstarts: Vec<Vec<T>> = (0..8).map(|_| random_in_box(&mut rng, &bx)).collect();
        fstarts.push(u.clone());
        let (dv, du) = box_minimize(&g, &bx, &fstarts, budget.max_evals * 2);
        if dv <= T::lit(1e-14) {
            value = f(&du);
            u = du;
            SearchStatus::Attained
        } else if boundary_tail && decreased {
            SearchStatus::Escaping
        } else {
            note = Some(format!("no fixed point found (discrepancy {dv}) and no escape detected"));
            SearchStatus::Inconclusive
        }
    } else if boundary_tail && decreased {
        SearchStatus::Escaping
    } else {
        // Local certificate: no probe within 1e-3 improves by more than 1e-8.
        let mut certified = false;
        for _ in 0..3 {
            let mut improved = None;
            for k in 0..u.len() {
                for s in [-1.0, 1.0] {
                    let mut w = u.clone();
                    w[k] += T::lit(1e-3 * s);
                    let (w, _) = clamp_box(&w, &bx);
                    let fv = f(&w);
                    if fv < value - T::lit(1e-8) && improved.as_ref().map_or(true, |(b, _): &(T, Vec<T>)| fv < *b) {
                        improved = Some((fv, w));
                    }
                }
            }
            match improved {
                None => {
                    certified = true;
                    break;
                }
                Some((_, w)) => {
                    let (v2, u2) = box_minimize(&f, &bx, &[w], budget.max_evals);
                    value = v2;
                    u = u2;
                }
            }
        }
        if certified {
            SearchStatus::Attained
        } else {
            note = Some("local certificate failed".into());
            SearchStatus::Inconclusive
        }
    };
    ComponentSearch {
        report: ComponentReport { factors, l_estimate: value.to_f64_lossy(), status, levels: steps, note },
        value,
        point: from_params(space, &u),
    }
}

/// Point with horns at `(0, 1)`, hyperbolic factors at `i` and Euclidean
/// factors at the origin.
pub fn default_base<T: Real>(space: &SpaceSpec<T>) -> CompletionPoint<T> {
    CompletionPoint::new(
        space
            .factors
            .iter()
            .map(|f| match f {
                FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => Block::interior(T::zero(), T::one()),
                FactorSpec::HyperbolicPlane => Block::coords(vec![T::zero(), T::one()]),
                FactorSpec::Euclidean { dim } => Block::coords(vec![T::zero(); *dim]),
            })
            .collect(),
    )
}

/// `inf_p d(p, γ·p)` by multi-start minimization over growing boxes. Factor
/// groups the isometry does not mix are searched separately and combined as
/// `L² = Σ L_c²`.
pub fn translation_length<T: Real>(
    space: &SpaceSpec<T>,
    iso: &Isometry<T>,
    budget: &SearchBudget,
) -> Result<TranslationLength<T>> {
    space.validate()?;
    iso.validate(space)?;
    let comps = independent_components(space, iso);
    let searches: Vec<ComponentSearch<T>> = comps
        .into_iter()
        .enumerate()
        .map(|(ci, c)| {
            let (s, g) = restrict(space, iso, &c);
            search_component(&s, &g, c, budget, ci as u64 + 1)
        })
        .collect();
    let mut blocks = vec![Block::boundary(); space.factors.len()];
    let mut l2 = T::zero();
    for s in &searches {
        l2 += s.value * s.value;
        for (k, &fi) in s.report.factors.iter().enumerate() {
            blocks[fi] = s.point.blocks[k].clone();
        }
    }
    Ok(TranslationLength {
        l_estimate: l2.sqrt(),
        attained: searches.iter().all(|s| s.report.status == SearchStatus::Attained),
        inconclusive: searches.iter().any(|s| s.report.status == SearchStatus::Inconclusive),
        witness: CompletionPoint::new(blocks),
        components: searches.into_iter().map(|s| s.report).collect(),
    })
}

/// The four cells of the classification, plus a refusal to decide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IsometryClass {
    #[serde(rename = "periodic-analog")]
    Periodic,
    #[serde(rename = "strictly-pseudoperiodic-analog")]
    StrictlyPseudoperiodic,
    #[serde(rename = "pseudoAnosov-analog")]
    PseudoAnosov,
    #[serde(rename = "reducible-not-pseudoperiodic-analog")]
    ReducibleNotPseudoperiodic,
    #[serde(rename = "inconclusive")]
    Inconclusive,
}

impl IsometryClass {
    /// Cell for a translation length and attainment flag.
    pub fn from_cell(l: f64, attained: bool) -> Self {
        match (l < L_TOL, attained) {
            (true, true) => IsometryClass::Periodic,
            (true, false) => IsometryClass::StrictlyPseudoperiodic,
            (false, true) => IsometryClass::PseudoAnosov,
            (false, false) => IsometryClass::ReducibleNotPseudoperiodic,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IsometryClass::Periodic => "periodic-analog",
            IsometryClass::StrictlyPseudoperiodic => "strictly-pseudoperiodic-analog",
            IsometryClass::PseudoAnosov => "pseudoAnosov-analog",
            IsometryClass::ReducibleNotPseudoperiodic => "reducible-not-pseudoperiodic-analog",
            IsometryClass::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationResult<T> {
    pub class: IsometryClass,
    pub l_estimate: T,
    pub attained: bool,
    pub witness: CompletionPoint<T>,
    /// Per-level minima of the escaping factor groups.
    pub escaping_sequence: Vec<EscapeStep>,
    pub components: Vec<ComponentReport>,
}

pub fn classify<T: Real>(space: &SpaceSpec<T>, iso: &Isometry<T>, budget: &SearchBudget) -> Result<ClassificationResult<T>> {
    let tl = translation_length(space, iso, budget)?;
    let class = if tl.inconclusive {
        IsometryClass::Inconclusive
    } else {
        IsometryClass::from_cell(tl.l_estimate.to_f64_lossy(), tl.attained)
    };
    let escaping_sequence = tl
        .components
        .iter()
        .filter(|c| c.status == SearchStatus::Escaping)
        .flat_map(|c| c.levels.iter().cloned())
        .collect();
    Ok(ClassificationResult {
        class,
        l_estimate: tl.l_estimate,
        attained: tl.attained,
        witness: tl.witness,
        escaping_sequence,
        components: tl.components,
    })
}

/// Sup-distance to the limit recorded after every heat-flow sweep.
#[derive(Debug, Clone, Serialize)]
pub struct HartmanCheck {
    pub distances: Vec<f64>,
    pub monotone: bool,
    pub max_increase: f64,
}

/// A converged equivariant path.
#[derive(Debug, Clone)]
pub struct Axis<T> {
    pub path: DiscretePath<T>,
    pub shift: Isometry<T>,
    pub period_length: T,
    pub report: FlowReport,
    pub hartman: Option<HartmanCheck>,
}

#[derive(Debug, Clone)]
pub struct AxisOptions<T> {
    pub flow: FlowOptions<T>,
    /// Stop refining once the length changes by less than this.
    pub length_tol: T,
    pub max_nodes: usize,
    /// Expected period length; the converged length must match within `tol`.
    pub l_estimate: Option<T>,
    pub tol: T,
    pub check_hartman: bool,
}

impl<T: Real> Default for AxisOptions<T> {
    fn default() -> Self {
        AxisOptions {
            flow: FlowOptions::default(),
            length_tol: T::lit(1e-6),
            max_nodes: 256,
            l_estimate: None,
            tol: T::lit(1e-4),
            check_hartman: false,
        }
    }
}

/// Flows an equivariant seed path to the axis of its shift, doubling the
/// node count until the period length settles.
pub fn axis<T: Real>(seed: &DiscretePath<T>, opts: &AxisOptions<T>) -> Result<Axis<T>> {
    let shift = seed
        .periodic_shift
        .clone()
        .ok_or_else(|| GeometryError::Precondition("axis needs an equivariant seed path".into()))?;
    let mut start = seed.clone();
    let mut prev: Option<T> = None;
    let mut hartman = None;
    loop {
        let (out, report) = heat_flow(&start, &opts.flow)?;
        if report.escaped {
            return Err(GeometryError::BasinViolation(
                report.escape_reason.unwrap_or_else(|| "path escaped toward a stratum".into()),
            ));
        }
        // Checked on the seed's own grid, where the flow does its real work.
        if opts.check_hartman && prev.is_none() {
            hartman = Some(hartman_check(&start, &out, &opts.flow)?);
        }
        let len = path_length(&out)?;
        let settled = prev.map_or(false, |p| (p - len).abs() < opts.length_tol);
        if settled || 2 * out.n() > opts.max_nodes {
            if let Some(l) = opts.l_estimate {
                if (len - l).abs() > opts.tol {
                    return Err(GeometryError::Precondition(format!(
                        "axis length {len} differs from the translation length {l}"
                    )));
                }
            }
            return Ok(Axis { period_length: len, path: out, shift, report, hartman });
        }
        prev = Some(len);
        start = out.refined()?;
    }
}

/// Reruns the flow from `start` and records `sup_i d(u_t(i), A(i))` against
/// the limit `limit`.
fn hartman_check<T: Real>(start: &DiscretePath<T>, limit: &DiscretePath<T>, opts: &FlowOptions<T>) -> Result<HartmanCheck> {
    let space = &start.space;
    let sup = |p: &DiscretePath<T>| -> f64 {
        p.nodes
            .iter()
            .zip(&limit.nodes)
            .map(|(a, b)| distance(space, a, b).map(|d| d.to_f64_lossy()).unwrap_or(f64::INFINITY))
            .fold(0.0, f64::max)
    };
    let mut distances = vec![sup(start)];
    heat_flow_observed(start, opts, |_, p| distances.push(sup(p)))?;
    let max_increase = distances.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(HartmanCheck { monotone: max_increase <= 1e-12, max_increase, distances })
}

/// A complete curve parameterized by arclength.
pub trait Curve<T: Real>: Sync {
    fn space(&self) -> &SpaceSpec<T>;
    fn at(&self, t: T) -> Result<CompletionPoint<T>>;
}

impl<T: Real> Curve<T> for Axis<T> {
    fn space(&self) -> &SpaceSpec<T> {
        &self.path.space
    }

    /// `γ^k` applied to the point at arclength `t − k·L` of the fundamental
    /// domain.
    fn at(&self, t: T) -> Result<CompletionPoint<T>> {
        let l = self.period_length;
        let k = (t / l).floor();
        let mut s = t - k * l;
        let seg = self.path.segment_lengths()?;
        let mut p = self.path.nodes[self.path.n()].clone();
        for (i, d) in seg.iter().enumerate() {
            if s <= *d || i + 1 == seg.len() {
                let f = if *d > T::zero() { (s / *d).min(T::one()) } else { T::zero() };
                p = geodesic_point(&self.path.space, &self.path.nodes[i], &self.path.nodes[i + 1], f)?;
                break;
            }
            s -= *d;
        }
        Ok(self.shift.power(k.to_i64().unwrap_or(0)).apply(&p))
    }
}

/// Complete geodesic of a product of hyperbolic and Euclidean factors,
/// followed exactly factor by factor.
#[derive(Debug, Clone)]
pub struct GeodesicLine<T> {
    pub space: SpaceSpec<T>,
    pub base: CompletionPoint<T>,
    /// Unit-speed chart velocity at `base`.
    pub velocity: Vec<T>,
}

impl<T: Real> GeodesicLine<T> {
    pub fn new(space: SpaceSpec<T>, base: CompletionPoint<T>, v: Vec<T>) -> Result<Self> {
        if space.factors.iter().any(FactorSpec::is_horn) {
            return Err(GeometryError::InvalidSpace("geodesic lines are only closed-form off horn factors".into()));
        }
        let speed = norm_at(&space, &base.chart(), &v)?;
        if speed == T::zero() {
            return Err(GeometryError::InvalidPoint("zero direction".into()));
        }
        let velocity = v.iter().map(|c| *c / speed).collect();
        Ok(GeodesicLine { space, base, velocity })
    }

    /// Axis of a hyperbolic Möbius map, oriented toward its attracting fixed
    /// point and based at the top of the semicircle.
    pub fn mobius_axis(m: &Mobius<T>) -> Option<Self> {
        let (rep, att) = m.fixed_points()?;
        let space = SpaceSpec::hyperbolic();
        let (base, v) = match (rep, att) {
            (Some(x), None) => ((x, T::one()), vec![T::zero(), T::one()]),
            (None, Some(x)) => ((x, T::one()), vec![T::zero(), -T::one()]),
            (Some(a), Some(b)) => {
                let r = (b - a).abs() / T::lit(2.0);
                (((a + b) / T::lit(2.0), r), vec![r * (b - a).signum(), T::zero()])
            }
            (None, None) => return None,
        };
        GeodesicLine::new(space, CompletionPoint::new(vec![Block::coords(vec![base.0, base.1])]), v).ok()
    }
}

impl<T: Real> Curve<T> for GeodesicLine<T> {
    fn space(&self) -> &SpaceSpec<T> {
        &self.space
    }

    fn at(&self, t: T) -> Result<CompletionPoint<T>> {
        let off = self.space.offsets();
        let blocks = self
            .space
            .factors
            .iter()
            .zip(&self.base.blocks)
            .enumerate()
            .map(|(i, (f, b))| {
                let c = b.as_coords().expect("coordinate block");
                let v = &self.velocity[off[i]..off[i] + f.dim()];
                match f {
                    FactorSpec::HyperbolicPlane => {
                        let (x, y) = hyperbolic::exp_map((c[0], c[1]), (v[0] * t, v[1] * t));
                        Block::coords(vec![x, y])
                    }
                    _ => Block::coords(c.iter().zip(v).map(|(a, w)| *a + *w * t).collect()),
                }
            })
            .collect();
        Ok(CompletionPoint::new(blocks))
    }
}

/// One row of [`displacement_growth`].
#[derive(Debug, Clone, Serialize)]
pub struct GrowthRow {
    pub d: f64,
    pub f: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub rows: Vec<GrowthRow>,
    pub increasing: bool,
    pub convex: bool,
    /// Slope of the last chord of the grid.
    pub epsilon: f64,
    /// Smallest `t₀` with `f(D) ≥ ε (D − t₀)` on the whole grid.
    pub t0: f64,
}

/// Smallest displacement at distance `D` from the axis, over perpendicular
/// geodesics leaving node 0 of the axis in every normal chart direction.
pub fn displacement_growth<T: Real>(ax: &Axis<T>, d_grid: &[T]) -> Result<GrowthReport> {
    let space = &ax.path.space;
    let p = ax.path.nodes[0].clone();
    let q = ax.path.nodes[1].clone();
    let x = p.chart();
    let n = x.len();
    let g = crate::metric::metric_chart(space, &x)?;
    let inner = |a: &[T], b: &[T]| crate::linalg::bilinear(&g, a, b);
    // Tangent from a short chord, then Gram–Schmidt on the chart basis.
    let h = T::lit(1e-4);
    let near = geodesic_point(space, &p, &q, h)?.chart();
    let tan: Vec<T> = near.iter().zip(&x).map(|(a, b)| *a - *b).collect();
    let tn = inner(&tan, &tan).sqrt();
    let mut basis: Vec<Vec<T>> = vec![tan.iter().map(|c| *c / tn).collect()];
    for k in 0..n {
        let mut e = vec![T::zero(); n];
        e[k] = T::one();
        for b in &basis {
            let c = inner(&e, b);
            for (ei, bi) in e.iter_mut().zip(b) {
                *ei -= c * *bi;
            }
        }
        let en = inner(&e, &e).sqrt();
        if en > T::lit(1e-8) {
            basis.push(e.iter().map(|c| *c / en).collect());
        }
    }
    let normals: Vec<Vec<T>> = basis[1..]
        .iter()
        .flat_map(|b| [b.clone(), b.iter().map(|c| -*c).collect()])
        .collect();
    let rows = d_grid
        .iter()
        .map(|&d| {
            let mut best = T::infinity();
            for v in &normals {
                let pt = if d == T::zero() {
                    p.clone()
                } else {
                    let seg: GeodesicSegment<T> = geodesic_shoot(space, &p, &TangentVector::new(v.clone()), d)?;
                    seg.end
                };
                best = best.min(displacement(space, &ax.shift, &pt)?);
            }
            Ok(GrowthRow { d: d.to_f64_lossy(), f: best.to_f64_lossy() })
        })
        .collect::<Result<Vec<_>>>()?;
    let increasing = rows.windows(2).all(|w| w[1].f >= w[0].f - 1e-9);
    let slopes: Vec<f64> = rows.windows(2).map(|w| (w[1].f - w[0].f) / (w[1].d - w[0].d)).collect();
    let convex = slopes.windows(2).all(|s| s[1] >= s[0] - 1e-7);
    let epsilon = slopes.last().copied().unwrap_or(0.0);
    let t0 = if epsilon > 0.0 {
        rows.iter().map(|r| r.d - r.f / epsilon).fold(f64::NEG_INFINITY, f64::max)
    } else {
        f64::NAN
    };
    Ok(GrowthReport { rows, increasing, convex, epsilon, t0 })
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceRow {
    pub r: f64,
    pub m: f64,
    pub t: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceProfile {
    pub rows: Vec<DivergenceRow>,
    /// Smallest grid radius from which `m(R)` is strictly increasing.
    pub increasing_from: Option<f64>,
}

const DIAMOND_SAMPLES: usize = 400;

/// `m(R) = min_{|t|+|s|=R} d(A₁(t), A₂(s))` by a grid over the diamond and a
/// golden-section refinement around the best sample.
pub fn divergence_profile<T: Real>(a1: &dyn Curve<T>, a2: &dyn Curve<T>, r_grid: &[T]) -> Result<DivergenceProfile> {
    let space = a1.space();
    let rows = r_grid
        .iter()
        .map(|&r| {
            // τ ∈ [0, 4): unit-speed walk around the diamond.
            let ts = |tau: T| -> (T, T) {
                let q = tau.floor().to_usize().unwrap_or(0).min(3);
                let w = tau - T::from_usize_lossy(q);
                let (t, s) = match q {
                    0 => (T::one() - w, w),
                    1 => (-w, T::one() - w),
                    2 => (w - T::one(), -w),
                    _ => (w, w - T::one()),
                };
                (t * r, s * r)
            };
            let dist = |tau: T| -> T {
                let (t, s) = ts(tau);
                match (a1.at(t), a2.at(s)) {
                    (Ok(p), Ok(q)) => distance(space, &p, &q).unwrap_or(T::infinity()),
                    _ => T::infinity(),
                }
            };
            let m = DIAMOND_SAMPLES;
            let vals: Vec<T> = (0..m)
                .into_par_iter()
                .map(|k| dist(T::lit(4.0 * k as f64 / m as f64)))
                .collect();
            let (k, _) = vals
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.to_f64_lossy().total_cmp(&b.1.to_f64_lossy()))
                .expect("samples");
            let h = T::lit(4.0 / m as f64);
            let c = T::lit(4.0 * k as f64 / m as f64);
            let wrap = |x: T| {
                let four = T::lit(4.0);
                ((x % four) + four) % four
            };
            let (xm, vm) = golden_min(|x| dist(wrap(x)), c - h, c + h, T::lit(1e-10));
            let (tau, v) = if vm < vals[k] { (wrap(xm), vm) } else { (c, vals[k]) };
            let (t, s) = ts(tau);
            Ok(DivergenceRow { r: r.to_f64_lossy(), m: v.to_f64_lossy(), t: t.to_f64_lossy(), s: s.to_f64_lossy() })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut from = None;
    for i in (0..rows.len().saturating_sub(1)).rev() {
        if rows[i + 1].m > rows[i].m + 1e-12 {
            from = Some(rows[i].r);
        } else {
            break;
        }
    }
    Ok(DivergenceProfile { rows, increasing_from: from })
}

#[derive(Debug, Clone)]
pub struct ProperOptions<T> {
    pub base: Option<CompletionPoint<T>>,
    pub random_rays: usize,
    /// Rays still inside the sublevel at this distance count as unbounded.
    pub r_cap: T,
    pub seed: u64,
}

impl<T: Real> Default for ProperOptions<T> {
    fn default() -> Self {
        ProperOptions { base: None, random_rays: 64, r_cap: T::lit(50.0), seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProperRow {
    pub m: f64,
    /// Largest distance from the base point found inside the sublevel.
    pub radius: Option<f64>,
    pub empty: bool,
    pub unbounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProperReport {
    pub min_delta: f64,
    pub rows: Vec<ProperRow>,
    pub unbounded_evidence: bool,
}

/// `δ(p) = max_i d(p, g_i·p)`.
pub fn max_displacement<T: Real>(space: &SpaceSpec<T>, gens: &[Isometry<T>], p: &CompletionPoint<T>) -> Result<T> {
    let mut m = T::zero();
    for g in gens {
        m = m.max(displacement(space, g, p)?);
    }
    Ok(m)
}

/// Geodesic ray from `q` with unit chart velocity `v`, sampled once.
struct Ray<T> {
    /// A single shot through a coupled space, or one part per factor.
    whole: Option<GeodesicSegment<T>>,
    parts: Vec<RayPart<T>>,
}

enum RayPart<T> {
    Hyperbolic((T, T), (T, T)),
    Flat(Vec<T>, Vec<T>),
    /// Shot horn factor and the share of the unit speed it carries.
    Shot(GeodesicSegment<T>, T),
    Fixed(Block<T>),
}

fn fraction<T: Real>(seg: &GeodesicSegment<T>, arclength: T) -> T {
    if seg.length > T::zero() {
        (arclength / seg.length).min(T::one())
    } else {
        T::zero()
    }
}

impl<T: Real> Ray<T> {
    fn new(space: &SpaceSpec<T>, q: &CompletionPoint<T>, v: &[T], r_cap: T) -> Result<Self> {
        if !space.is_product() {
            let seg = geodesic_shoot(space, q, &TangentVector::new(v.to_vec()), r_cap)?;
            return Ok(Ray { whole: Some(seg), parts: Vec::new() });
        }
        let off = space.offsets();
        let mut parts = Vec::new();
        for (i, (f, b)) in space.factors.iter().zip(&q.blocks).enumerate() {
            let w = &v[off[i]..off[i] + f.dim()];
            let part = match (f, b) {
                (FactorSpec::HyperbolicPlane, Block::Coords { coords }) => {
                    RayPart::Hyperbolic((coords[0], coords[1]), (w[0], w[1]))
                }
                (_, Block::Coords { coords }) => RayPart::Flat(coords.clone(), w.to_vec()),
                (_, Block::Horn(_)) => {
                    let sub = SpaceSpec { factors: vec![f.clone()] };
                    let pt = CompletionPoint::new(vec![b.clone()]);
                    let tv = TangentVector::new(w.to_vec());
                    if tv.is_zero() {
                        RayPart::Fixed(b.clone())
                    } else {
                        let speed = norm_at(&sub, &pt.chart(), w)?;
                        RayPart::Shot(geodesic_shoot(&sub, &pt, &tv, speed * r_cap)?, speed)
                    }
                }
            };
            parts.push(part);
        }
        Ok(Ray { whole: None, parts })
    }

    fn at(&self, r: T) -> CompletionPoint<T> {
        if let Some(seg) = &self.whole {
            return seg.point_at(fraction(seg, r));
        }
        let blocks = self
            .parts
            .iter()
            .map(|p| match p {
                RayPart::Hyperbolic(c, w) => {
                    let (x, y) = hyperbolic::exp_map(*c, (w.0 * r, w.1 * r));
                    Block::coords(vec![x, y])
                }
                RayPart::Flat(c, w) => Block::coords(c.iter().zip(w).map(|(a, b)| *a + *b * r).collect()),
                RayPart::Shot(seg, speed) => seg.point_at(fraction(seg, *speed * r)).blocks[0].clone(),
                RayPart::Fixed(b) => b.clone(),
            })
            .collect();
        CompletionPoint::new(blocks)
    }
}

/// Searches each sublevel `{δ ≤ M}` along geodesic rays from a point of
/// minimal `δ` and reports the farthest point found from the base point.
pub fn properness_probe<T: Real>(
    space: &SpaceSpec<T>,
    gens: &[Isometry<T>],
    m_grid: &[T],
    opts: &ProperOptions<T>,
) -> Result<ProperReport> {
    if gens.is_empty() {
        return Err(GeometryError::Precondition("properness probe needs a generator".into()));
    }
    for g in gens {
        g.validate(space)?;
    }
    let base = opts.base.clone().unwrap_or_else(|| default_base(space));
    let delta = |u: &[T]| -> T {
        max_displacement(space, gens, &from_params(space, u)).unwrap_or(T::infinity())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let bx = level_box(space, 4);
    let mut starts: Vec<Vec<T>> = (0..8).map(|_| random_in_box(&mut rng, &bx)).collect();
    starts.push(clamp_box(&to_params(space, &base), &bx).0);
    let (dmin, umin) = box_minimize(&delta, &bx, &starts, 3000);
    let q = from_params(space, &umin);

    // Boundary-biased directions first, then random ones.
    let n = space.dim();
    let mut dirs: Vec<Vec<T>> = Vec::new();
    for k in 0..n {
        for s in [-1.0, 1.0] {
            let mut e = vec![T::zero(); n];
            e[k] = T::lit(s);
            dirs.push(e);
        }
    }
    for _ in 0..opts.random_rays {
        dirs.push((0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect());
    }
    let x = q.chart();
    let rays: Vec<Ray<T>> = dirs
        .par_iter()
        .filter_map(|v| {
            let s = norm_at(space, &x, v).ok()?;
            if !(s > T::zero()) {
                return None;
            }
            let unit: Vec<T> = v.iter().map(|c| *c / s).collect();
            Ray::new(space, &q, &unit, opts.r_cap).ok()
        })
        .collect();

    let slack = |m: T| m + T::lit(1e-9) * (T::one() + m.abs());
    let rows = m_grid
        .iter()
        .map(|&m| {
            if dmin > slack(m) {
                return Ok(ProperRow { m: m.to_f64_lossy(), radius: None, empty: true, unbounded: false });
            }
            let ends: Vec<(T, bool)> = rays
                .par_iter()
                .map(|ray| {
                    let inside = |r: T| max_displacement(space, gens, &ray.at(r)).map_or(false, |d| d <= slack(m));
                    if inside(opts.r_cap) {
                        let d = distance(space, &base, &ray.at(opts.r_cap)).unwrap_or(T::infinity());
                        return (d, true);
                    }
                    // δ is convex along the ray, so the sublevel is an interval.
                    let (mut lo, mut hi) = (T::zero(), opts.r_cap);
                    for _ in 0..60 {
                        let mid = (lo + hi) / T::lit(2.0);
                        if inside(mid) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                        if hi - lo < T::lit(1e-9) {
                            break;
                        }
                    }
                    (distance(space, &base, &ray.at(lo)).unwrap_or(T::infinity()), false)
                })
                .collect();
            let unbounded = ends.iter().any(|e| e.1);
            let radius = ends.iter().map(|e| e.0.to_f64_lossy()).fold(0.0, f64::max);
            Ok(ProperRow { m: m.to_f64_lossy(), radius: Some(radius), empty: false, unbounded })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProperReport {
        min_delta: dmin.to_f64_lossy(),
        unbounded_evidence: rows.iter().any(|r| r.unbounded),
        rows,
    })
}

/// Euclidean action with identity rotation.
pub fn euclid_translation<T: Real>(t: Vec<T>) -> FactorAction<T> {
    let d = t.len();
    let q = (0..d).map(|i| (0..d).map(|j| if i == j { T::one() } else { T::zero() }).collect()).collect();
    FactorAction::Euclid { q, t }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mobius(a: f64, b: f64, c: f64, d: f64) -> FactorAction<f64> {
        FactorAction::Mobius { m: [[a, b], [c, d]] }
    }

    #[test]
    fn displacement_examples() {
        let e = SpaceSpec::<f64>::euclidean(2);
        let t = Isometry::new(vec![euclid_translation(vec![3.0, 4.0])]);
        let p = CompletionPoint::new(vec![Block::coords(vec![-1.0, 7.0])]);
        assert!((displacement(&e, &t, &p).unwrap() - 5.0).abs() < 1e-12);

        let h = SpaceSpec::hyperbolic();
        let g = Isometry::new(vec![mobius(2.0, 0.0, 0.0, 0.5)]);
        let p = CompletionPoint::new(vec![Block::coords(vec![0.0, 1.0])]);
        assert!((displacement(&h, &g, &p).unwrap() - 4f64.ln()).abs() < 1e-12);

        let horn = SpaceSpec::horn();
        let g = Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }]);
        let d = displacement(&horn, &g, &CompletionPoint::new(vec![Block::interior(0.0, 0.1)])).unwrap();
        assert!(d > 0.0 && d <= 1e-3);
    }

    #[test]
    fn four_cells() {
        let b = SearchBudget::default();
        let rot = Isometry::new(vec![FactorAction::Euclid { q: vec![vec![0.0, -1.0], vec![1.0, 0.0]], t: vec![0.0, 0.0] }]);
        let c = classify(&SpaceSpec::euclidean(2), &rot, &b).unwrap();
        assert_eq!(c.class, IsometryClass::Periodic);

        let c = classify(&SpaceSpec::horn(), &Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }]), &b).unwrap();
        assert_eq!(c.class, IsometryClass::StrictlyPseudoperiodic, "{c:?}");

        let c = classify(&SpaceSpec::hyperbolic(), &Isometry::new(vec![mobius(2.0, 0.0, 0.0, 0.5)]), &b).unwrap();
        assert_eq!(c.class, IsometryClass::PseudoAnosov);
        assert!((c.l_estimate - 4f64.ln()).abs() < 1e-6);

        let sp = SpaceSpec::<f64>::new(vec![FactorSpec::Horn, FactorSpec::Euclidean { dim: 1 }]).unwrap();
        let g = Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }, euclid_translation(vec![2.0])]);
        let c = classify(&sp, &g, &b).unwrap();
        assert_eq!(c.class, IsometryClass::ReducibleNotPseudoperiodic);
        assert!((c.l_estimate - 2.0).abs() < 1e-6);
    }
}
