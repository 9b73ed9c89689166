//! Discrete paths, their length and energy, and discrete heat flow by
//! midpoint smoothing.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{GeometryError, Result};
use crate::geodesic::{distance, midpoint};
use crate::isometry::Isometry;
use crate::scalar::Real;
use crate::space::{Block, CompletionPoint, FactorSpec, HornBlock, SpaceSpec};

/// Tolerance on the gluing `node_N = γ·node_0` of equivariant paths.
pub const GLUE_TOL: f64 = 1e-9;

/// Nodes `u(i/N)`, `i = 0..=N`. With a periodic shift `γ`, the path is the
/// fundamental domain of a `γ`-equivariant path and `node_N = γ·node_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath<T> {
    pub space: SpaceSpec<T>,
    pub nodes: Vec<CompletionPoint<T>>,
    pub periodic_shift: Option<Isometry<T>>,
}

impl<T: Real> DiscretePath<T> {
    pub fn new(space: SpaceSpec<T>, nodes: Vec<CompletionPoint<T>>) -> Result<Self> {
        Self::build(space, nodes, None)
    }

    /// Equivariant path from the nodes `0..N−1`; node `N` is set to `γ·node_0`.
    pub fn equivariant(space: SpaceSpec<T>, mut nodes: Vec<CompletionPoint<T>>, gamma: Isometry<T>) -> Result<Self> {
        gamma.validate(&space)?;
        let first = nodes
            .first()
            .ok_or_else(|| GeometryError::InvalidPath("no nodes".into()))?
            .clone();
        nodes.push(gamma.apply(&first));
        Self::build(space, nodes, Some(gamma))
    }

    fn build(space: SpaceSpec<T>, nodes: Vec<CompletionPoint<T>>, shift: Option<Isometry<T>>) -> Result<Self> {
        space.validate()?;
        if nodes.len() < 2 {
            return Err(GeometryError::InvalidPath("a path needs at least two nodes".into()));
        }
        let nodes = nodes.iter().map(|p| p.validated(&space)).collect::<Result<Vec<_>>>()?;
        let path = DiscretePath { space, nodes, periodic_shift: shift };
        path.check_glue()?;
        Ok(path)
    }

    fn check_glue(&self) -> Result<()> {
        if let Some(g) = &self.periodic_shift {
            let d = distance(&self.space, &self.nodes[self.n()], &g.apply(&self.nodes[0]))?;
            if d > T::lit(GLUE_TOL) {
                return Err(GeometryError::InvalidPath(format!(
                    "last node is {d} away from the shifted first node"
                )));
            }
        }
        Ok(())
    }

    /// Number of segments `N`.
    pub fn n(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn segment_lengths(&self) -> Result<Vec<T>> {
        self.nodes
            .par_windows(2)
            .map(|w| distance(&self.space, &w[0], &w[1]))
            .collect()
    }

    /// Same nodes at twice the resolution, new nodes at geodesic midpoints.
    pub fn refined(&self) -> Result<Self> {
        let mids = self
            .nodes
            .par_windows(2)
            .map(|w| midpoint(&self.space, &w[0], &w[1]))
            .collect::<Result<Vec<_>>>()?;
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for (p, m) in self.nodes.iter().zip(mids) {
            nodes.push(p.clone());
            nodes.push(m);
        }
        nodes.push(self.nodes[self.n()].clone());
        Ok(DiscretePath { space: self.space.clone(), nodes, periodic_shift: self.periodic_shift.clone() })
    }

    /// Horn coordinates of every node scaled by `lambda` (toward the strata
    /// when `lambda < 1`). Horn actions never move ξ, so equivariance is kept.
    pub fn scaled_toward_strata(&self, lambda: T) -> Self {
        let nodes = self
            .nodes
            .iter()
            .map(|p| {
                CompletionPoint::new(
                    p.blocks
                        .iter()
                        .map(|b| match b {
                            Block::Horn(HornBlock::Interior { theta, xi }) => Block::interior(*theta, *xi * lambda),
                            other => other.clone(),
                        })
                        .collect(),
                )
            })
            .collect();
        DiscretePath { space: self.space.clone(), nodes, periodic_shift: self.periodic_shift.clone() }
    }

    /// Smallest horn coordinate over all nodes.
    pub fn min_xi(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(CompletionPoint::min_xi)
            .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.min(x))))
    }
}

/// `Σ d(node_i, node_{i+1})`.
pub fn path_length<T: Real>(path: &DiscretePath<T>) -> Result<T> {
    Ok(path.segment_lengths()?.into_iter().sum())
}

/// `N Σ d(node_i, node_{i+1})²`, the Riemann sum of `∫‖u̇‖²`.
pub fn path_energy<T: Real>(path: &DiscretePath<T>) -> Result<T> {
    let n = T::from_usize_lossy(path.n());
    Ok(path.segment_lengths()?.into_iter().map(|d| n * d * d).sum())
}

/// Update rule of the discrete heat flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `x_i ← mid(x_{i−1}, x_{i+1})`.
    Jacobi,
    /// `x_i ← mid(x_i, mid(x_{i−1}, x_{i+1}))`. The plain update does not
    /// damp the alternating mode of a periodic grid; this one does.
    DampedJacobi,
}

#[derive(Debug, Clone)]
pub struct FlowOptions<T> {
    pub max_iter: usize,
    /// Stop once the largest node displacement of a sweep is below this.
    pub tol: T,
    /// Defaults to Jacobi for fixed endpoints and damped Jacobi for
    /// equivariant paths.
    pub scheme: Option<Scheme>,
    /// Iterations between drift checkpoints used to detect escape toward a
    /// stratum.
    pub checkpoint_every: usize,
}

impl<T: Real> Default for FlowOptions<T> {
    fn default() -> Self {
        FlowOptions { max_iter: 1_000_000, tol: T::lit(1e-10), scheme: None, checkpoint_every: 200 }
    }
}

/// Summary of a heat-flow run.
#[derive(Debug, Clone, Serialize)]
pub struct FlowReport {
    pub iterations: usize,
    pub final_length: f64,
    pub final_energy: f64,
    /// Energy before the first sweep and after every sweep.
    pub energy: Vec<f64>,
    pub converged: bool,
    /// Some node approached a stratum that no endpoint lies on.
    pub escaped: bool,
    pub escape_reason: Option<String>,
    pub last_displacement: f64,
    pub min_xi: Option<f64>,
}

/// Runs the discrete heat flow until the sweep displacement drops below
/// `tol`, `max_iter` sweeps pass, or the path escapes toward a stratum.
pub fn heat_flow<T: Real>(path: &DiscretePath<T>, opts: &FlowOptions<T>) -> Result<(DiscretePath<T>, FlowReport)> {
    heat_flow_observed(path, opts, |_, _| {})
}

/// [`heat_flow`] calling `observe(iteration, path)` after every sweep.
pub fn heat_flow_observed<T, F>(
    path: &DiscretePath<T>,
    opts: &FlowOptions<T>,
    mut observe: F,
) -> Result<(DiscretePath<T>, FlowReport)>
where
    T: Real,
    F: FnMut(usize, &DiscretePath<T>),
{
    let n = path.n();
    if n < 2 {
        return Err(GeometryError::InvalidPath("heat flow needs an interior node (N ≥ 2)".into()));
    }
    let periodic = path.periodic_shift.is_some();
    let scheme = opts.scheme.unwrap_or(if periodic { Scheme::DampedJacobi } else { Scheme::Jacobi });
    let space = &path.space;
    let gamma_inv = path.periodic_shift.as_ref().map(Isometry::inverse);
    let allowed: std::collections::BTreeSet<usize> = if periodic {
        Default::default()
    } else {
        path.nodes[0].stratum().union(&path.nodes[n].stratum()).copied().collect()
    };
    for p in &path.nodes[1..n] {
        if !p.stratum().is_subset(&allowed) {
            return Err(GeometryError::InvalidPath("interior nodes must avoid strata".into()));
        }
    }

    let mut cur = path.clone();
    let mut energy = vec![path_energy(&cur)?.to_f64_lossy()];
    let mut checkpoints: Vec<(T, T)> = Vec::new();
    let mut converged = false;
    let mut escape_reason = None;
    let mut last_disp = T::infinity();
    let mut iterations = 0;
    let first = usize::from(!periodic);
    while iterations < opts.max_iter {
        let old = &cur.nodes;
        let updated = (first..n)
            .into_par_iter()
            .map(|i| {
                let prev = if i == 0 {
                    gamma_inv.as_ref().expect("periodic").apply(&old[n - 1])
                } else {
                    old[i - 1].clone()
                };
                let avg = midpoint(space, &prev, &old[i + 1])?;
                let new = match scheme {
                    Scheme::Jacobi => avg,
                    Scheme::DampedJacobi => midpoint(space, &old[i], &avg)?,
                };
                let d = distance(space, &old[i], &new)?;
                Ok((new, d))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut nodes = old.clone();
        let mut disp = T::zero();
        for (k, (p, d)) in updated.into_iter().enumerate() {
            nodes[first + k] = p;
            disp = disp.max(d);
        }
        if let Some(g) = &cur.periodic_shift {
            nodes[n] = g.apply(&nodes[0]);
        }
        cur = DiscretePath { space: space.clone(), nodes, periodic_shift: cur.periodic_shift.clone() };
        iterations += 1;
        last_disp = disp;
        energy.push(path_energy(&cur)?.to_f64_lossy());
        observe(iterations, &cur);

        if let Some(i) = (1..n).find(|&i| !cur.nodes[i].stratum().is_subset(&allowed)) {
            escape_reason = Some(format!("node {i} reached a stratum at iteration {iterations}"));
            break;
        }
        if periodic && !cur.nodes[0].is_interior() {
            escape_reason = Some(format!("node 0 reached a stratum at iteration {iterations}"));
            break;
        }
        if disp < opts.tol {
            converged = true;
            break;
        }
        if periodic && opts.checkpoint_every > 0 && iterations % opts.checkpoint_every == 0 {
            if let Some(xi) = cur.min_xi() {
                checkpoints.push((xi, disp));
                if let Some(reason) = drift_toward_strata(&cur, &checkpoints)? {
                    escape_reason = Some(reason);
                    break;
                }
            }
        }
    }
    let final_length = path_length(&cur)?.to_f64_lossy();
    let report = FlowReport {
        iterations,
        final_length,
        final_energy: *energy.last().expect("initial energy"),
        energy,
        converged,
        escaped: escape_reason.is_some(),
        escape_reason,
        last_displacement: last_disp.to_f64_lossy(),
        min_xi: cur.min_xi().map(Real::to_f64_lossy),
    };
    Ok((cur, report))
}

/// An equivariant flow is drifting to a stratum when its smallest horn
/// coordinate decreased across the last three checkpoints and pushing every
/// node further toward the strata lowers the energy.
fn drift_toward_strata<T: Real>(path: &DiscretePath<T>, checkpoints: &[(T, T)]) -> Result<Option<String>> {
    if checkpoints.len() < 3 {
        return Ok(None);
    }
    let k = checkpoints.len();
    let (a, b, c) = (checkpoints[k - 3].0, checkpoints[k - 2].0, checkpoints[k - 1].0);
    if !(b < a && c < b) {
        return Ok(None);
    }
    let e0 = path_energy(path)?;
    let e1 = path_energy(&path.scaled_toward_strata(T::lit(0.5)))?;
    if e1 < e0 {
        Ok(Some(format!(
            "min xi decreasing ({} -> {} -> {}) and halving every xi lowers the energy ({} -> {})",
            a, b, c, e0, e1
        )))
    } else {
        Ok(None)
    }
}

/// Outcome of the midpoint competitor inequality
/// `2E(ŵ) ≤ E(u) + E(w) − ½ Σ N (d(u_i,w_i) − d(u_{i+1},w_{i+1}))²`.
#[derive(Debug, Clone, Serialize)]
pub struct CompetitorReport {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`; nonnegative when the inequality holds.
    pub slack: f64,
}

pub fn midpoint_competitor_test<T: Real>(u: &DiscretePath<T>, w: &DiscretePath<T>) -> Result<CompetitorReport> {
    if u.space != w.space || u.n() != w.n() || u.periodic_shift != w.periodic_shift {
        return Err(GeometryError::InvalidPath("competitor paths must share space, grid and shift".into()));
    }
    let space = &u.space;
    let mids = u
        .nodes
        .par_iter()
        .zip(w.nodes.par_iter())
        .map(|(a, b)| midpoint(space, a, b))
        .collect::<Result<Vec<_>>>()?;
    let mut hat = DiscretePath { space: space.clone(), nodes: mids, periodic_shift: u.periodic_shift.clone() };
    if let Some(g) = &u.periodic_shift {
        let m = hat.n();
        hat.nodes[m] = g.apply(&hat.nodes[0]);
    }
    let gaps = u
        .nodes
        .par_iter()
        .zip(w.nodes.par_iter())
        .map(|(a, b)| distance(space, a, b))
        .collect::<Result<Vec<_>>>()?;
    let nf = T::from_usize_lossy(u.n());
    let correction: T = gaps.windows(2).map(|g| nf * (g[0] - g[1]) * (g[0] - g[1])).sum();
    let lhs = T::lit(2.0) * path_energy(&hat)?;
    let rhs = path_energy(u)? + path_energy(w)? - T::lit(0.5) * correction;
    Ok(CompetitorReport { lhs: lhs.to_f64_lossy(), rhs: rhs.to_f64_lossy(), slack: (rhs - lhs).to_f64_lossy() })
}

fn csv_header<T: Real>(space: &SpaceSpec<T>) -> Vec<String> {
    let mut h = vec!["x".to_string()];
    for (i, f) in space.factors.iter().enumerate() {
        match f {
            FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => {
                h.push(format!("theta_{i}"));
                h.push(format!("xi_{i}"));
                h.push(format!("boundary_{i}"));
            }
            FactorSpec::HyperbolicPlane => {
                h.push(format!("x_{i}"));
                h.push(format!("y_{i}"));
            }
            FactorSpec::Euclidean { dim } => {
                for k in 0..*dim {
                    h.push(format!("e{k}_{i}"));
                }
            }
        }
    }
    h
}

/// Writes the nodes as CSV: `x`, then per-block coordinates with a
/// `boundary_i` indicator for every horn factor.
pub fn write_path_csv<T: Real, W: Write>(path: &DiscretePath<T>, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(csv_header(&path.space))?;
    let n = path.n();
    for (k, p) in path.nodes.iter().enumerate() {
        let mut rec = vec![(k as f64 / n as f64).to_string()];
        for b in &p.blocks {
            match b {
                Block::Horn(HornBlock::Interior { theta, xi }) => {
                    rec.push(theta.to_f64_lossy().to_string());
                    rec.push(xi.to_f64_lossy().to_string());
                    rec.push("0".into());
                }
                Block::Horn(HornBlock::Boundary) => {
                    rec.push(String::new());
                    rec.push("0".into());
                    rec.push("1".into());
                }
                Block::Coords { coords } => rec.extend(coords.iter().map(|c| c.to_f64_lossy().to_string())),
            }
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| GeometryError::Serialization(e.to_string()))?;
    Ok(())
}

/// Reads nodes written by [`write_path_csv`].
pub fn read_path_csv<T: Real, R: Read>(space: &SpaceSpec<T>, input: R) -> Result<Vec<CompletionPoint<T>>> {
    let mut r = csv::Reader::from_reader(input);
    let want = csv_header(space);
    let headers: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if headers != want {
        return Err(GeometryError::Serialization(format!("expected columns {want:?}, found {headers:?}")));
    }
    let num = |s: &str| -> Result<T> {
        s.parse::<f64>()
            .map(T::lit)
            .map_err(|e| GeometryError::Serialization(format!("bad number {s:?}: {e}")))
    };
    let mut nodes = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut k = 1;
        let mut blocks = Vec::new();
        for f in &space.factors {
            match f {
                FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => {
                    if &rec[k + 2] == "1" {
                        blocks.push(Block::boundary());
                    } else {
                        blocks.push(Block::interior(num(&rec[k])?, num(&rec[k + 1])?));
                    }
                    k += 3;
                }
                _ => {
                    let d = f.dim();
                    let c = (k..k + d).map(|j| num(&rec[j])).collect::<Result<Vec<_>>>()?;
                    blocks.push(Block::coords(c));
                    k += d;
                }
            }
        }
        nodes.push(CompletionPoint::new(blocks));
    }
    Ok(nodes)
}
