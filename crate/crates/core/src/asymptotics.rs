//! Hyperbolic annulus metric near a node, grafting, and the quadrature of
//! quadratic-differential pairings against the collar density.
//!
//! Everything here is f64: the oracles are closed-form logarithmic
//! integrals that need the full double range of `|t|`.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};

/// `Θ²/sin²Θ`, with series at both ends of `[0, π]`.
fn theta_factor(theta: f64, pi_minus_theta: f64) -> f64 {
    if theta.abs() < 1e-4 {
        let q = theta * theta;
        // (Θ/sinΘ)² = 1 + Θ²/3 + Θ⁴/15 + ...
        return 1.0 + q / 3.0 + q * q / 15.0;
    }
    let s = if pi_minus_theta.abs() < 1e-8 {
        pi_minus_theta
    } else {
        pi_minus_theta.sin()
    };
    let r = theta / s;
    r * r
}

fn check_t(t: Complex64) -> Result<f64> {
    let a = t.norm();
    if !(a > 0.0 && a < 1.0) {
        return Err(GeometryError::OutOfDomain(format!("need 0 < |t| < 1, got {a}")));
    }
    Ok(a)
}

/// Density ρ of the complete hyperbolic metric ρ|dz|² on `|t| < |z| < 1`.
/// Infinite on both boundary circles.
pub fn annulus_density(z: Complex64, t: Complex64) -> Result<f64> {
    let ta = check_t(t)?;
    let r = z.norm();
    if !(r >= ta && r <= 1.0) {
        return Err(GeometryError::OutOfDomain(format!(
            "|z| = {r} outside [{ta}, 1]"
        )));
    }
    if r == 1.0 || r == ta {
        return Ok(f64::INFINITY);
    }
    let (lr, lt) = (r.ln(), ta.ln());
    let theta = PI * lr / lt;
    let rest = PI * (lt - lr) / lt;
    let base = 1.0 / (r * lr).powi(2);
    Ok(base * theta_factor(theta, rest))
}

/// Cusp density `(|z| log|z|)⁻²` of the punctured disc.
pub fn cusp_density(z: Complex64) -> f64 {
    let r = z.norm();
    1.0 / (r * r.ln()).powi(2)
}

pub const GRAFT_INNER: f64 = 0.5;
pub const GRAFT_OUTER: f64 = 1.0;

/// C² quintic step, 0 at 0 and 1 at 1.
fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Ratio cusp density / grafted density on the band `0.5 ≤ |z| ≤ 1`.
/// The grafted metric is the annulus metric at the inner circle and the
/// cusp metric at `|z| = 1`, blended in between; the ratio is exactly 1 at
/// the outer edge.
pub fn grafted_ratio(z: Complex64, t: Complex64) -> Result<f64> {
    let ta = check_t(t)?;
    let r = z.norm();
    if !(GRAFT_INNER..=GRAFT_OUTER).contains(&r) {
        return Err(GeometryError::OutOfDomain(format!(
            "|z| = {r} outside the grafting band [{GRAFT_INNER}, {GRAFT_OUTER}]"
        )));
    }
    if ta >= GRAFT_INNER {
        return Err(GeometryError::OutOfDomain(format!("|t| = {ta} reaches the band")));
    }
    let chi = smoothstep((GRAFT_OUTER - r) / (GRAFT_OUTER - GRAFT_INNER));
    if chi == 0.0 {
        return Ok(1.0);
    }
    let (lr, lt) = (r.ln(), ta.ln());
    let f = theta_factor(PI * lr / lt, PI * (lt - lr) / lt);
    Ok(1.0 / (chi * f + 1.0 - chi))
}

/// sup over the band of `|ratio − 1| / Θ²`, sampled on `samples` radii.
pub fn graft_constant(t: Complex64, samples: usize) -> Result<f64> {
    let lt = check_t(t)?.ln();
    let mut sup = 0.0f64;
    for k in 0..samples.max(2) {
        let r = GRAFT_INNER + (GRAFT_OUTER - GRAFT_INNER) * k as f64 / (samples.max(2) - 1) as f64;
        if r >= GRAFT_OUTER {
            continue;
        }
        let theta = PI * r.ln() / lt;
        let q = grafted_ratio(Complex64::new(r, 0.0), t)?;
        sup = sup.max((q - 1.0).abs() / (theta * theta));
    }
    Ok(sup)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnulusSpec {
    pub t: Complex64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "default_n")]
    pub n_r: usize,
    #[serde(default = "default_n")]
    pub n_phi: usize,
}

fn one() -> f64 {
    1.0
}
fn default_n() -> usize {
    64
}

impl AnnulusSpec {
    pub fn new(t: f64) -> Self {
        AnnulusSpec { t: Complex64::new(t, 0.0), c: 1.0, n_r: 64, n_phi: 64 }
    }

    fn validate(&self) -> Result<()> {
        let ta = self.t.norm();
        if !(ta > 0.0 && ta < self.c && self.c <= 1.0) {
            return Err(GeometryError::OutOfDomain(format!(
                "need 0 < |t| < c ≤ 1, got |t| = {ta}, c = {}",
                self.c
            )));
        }
        if self.n_r < 16 || self.n_phi < 16 {
            return Err(GeometryError::OutOfDomain("n_r and n_phi must be at least 16".into()));
        }
        Ok(())
    }
}

/// Model holomorphic quadratic differentials on the collar, as functions
/// multiplying dz².
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferentialModel {
    /// t/z², dual to the pinching direction.
    Normal,
    /// 1/z
    Tangential,
    /// 1/z + t/z³
    TangentialDeformed,
    /// 1
    Regular,
}

impl DifferentialModel {
    pub fn eval(self, z: Complex64, t: Complex64) -> Complex64 {
        match self {
            DifferentialModel::Normal => t / (z * z),
            DifferentialModel::Tangential => z.inv(),
            DifferentialModel::TangentialDeformed => z.inv() + t / (z * z * z),
            DifferentialModel::Regular => Complex64::new(1.0, 0.0),
        }
    }
}

pub const PAIRING_REL_TOL: f64 = 1e-6;
const MAX_DOUBLINGS: usize = 8;

#[derive(Clone, Debug, Serialize)]
pub struct Pairing {
    pub value: Complex64,
    /// Modulus integral of the same pair, the scale for the error check.
    pub envelope: f64,
    /// Change of the extrapolated value under the last grid doubling,
    /// relative to the envelope.
    pub rel_change: f64,
    pub n_r: usize,
    pub n_phi: usize,
}

/// Product rule on the collar: composite Simpson in s = log|z| with `n_r`
/// intervals, trapezoid in the angle with `n_phi` points. Returns the complex
/// pairing and the modulus integral.
fn product_rule(
    spec: &AnnulusSpec,
    a: DifferentialModel,
    b: DifferentialModel,
    n_r: usize,
    n_phi: usize,
) -> (Complex64, f64) {
    let n_r = n_r + n_r % 2;
    let (s0, s1) = (spec.t.norm().ln(), spec.c.ln());
    let h = (s1 - s0) / n_r as f64;
    let wphi = 2.0 * PI / n_phi as f64;
    let rows: Vec<(Complex64, f64)> = (0..=n_r)
        .into_par_iter()
        .map(|i| {
            let s = s0 + h * i as f64;
            let r = s.exp();
            let w = if i == 0 || i == n_r {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            } * h / 3.0;
            // 1/ρ₀ = r² s², area element r² ds dφ
            let weight = w * wphi * r.powi(4) * s * s;
            let mut acc = Complex64::new(0.0, 0.0);
            let mut abs = 0.0;
            for k in 0..n_phi {
                let z = Complex64::from_polar(r, wphi * k as f64);
                let v = a.eval(z, spec.t) * b.eval(z, spec.t).conj();
                acc += v;
                abs += v.norm();
            }
            (acc * weight, abs * weight)
        })
        .collect();
    rows.iter()
        .fold((Complex64::new(0.0, 0.0), 0.0), |(c, m), (x, y)| (c + x, m + y))
}

fn richardson(spec: &AnnulusSpec, a: DifferentialModel, b: DifferentialModel, n_r: usize, n_phi: usize) -> (Complex64, f64) {
    let (c1, m1) = product_rule(spec, a, b, n_r, n_phi);
    let (c2, m2) = product_rule(spec, a, b, 2 * n_r, 2 * n_phi);
    (c2 + (c2 - c1) / 15.0, m2 + (m2 - m1) / 15.0)
}

fn converge(spec: &AnnulusSpec, a: DifferentialModel, b: DifferentialModel) -> Result<Pairing> {
    spec.validate()?;
    let (mut n_r, mut n_phi) = (spec.n_r, spec.n_phi);
    let mut prev = richardson(spec, a, b, n_r, n_phi);
    for _ in 0..MAX_DOUBLINGS {
        n_r *= 2;
        n_phi *= 2;
        let next = richardson(spec, a, b, n_r, n_phi);
        let scale = next.1.max(f64::MIN_POSITIVE);
        let rel = ((next.0 - prev.0).norm() / scale).max((next.1 - prev.1).abs() / scale);
        if rel <= PAIRING_REL_TOL {
            return Ok(Pairing { value: next.0, envelope: next.1, rel_change: rel, n_r, n_phi });
        }
        prev = next;
    }
    Err(GeometryError::QuadratureNotConverged { coarse: prev.1, fine: prev.1 })
}

/// Hermitian pairing ∫ φ_a φ̄_b / ρ₀ over `|t| ≤ |z| ≤ c`.
pub fn masur_pairing(spec: &AnnulusSpec, a: DifferentialModel, b: DifferentialModel) -> Result<Pairing> {
    converge(spec, a, b)
}

/// Modulus integral ∫ |φ_a φ̄_b| / ρ₀, the quantity the collar bounds control.
pub fn masur_envelope(spec: &AnnulusSpec, a: DifferentialModel, b: DifferentialModel) -> Result<f64> {
    Ok(converge(spec, a, b)?.envelope)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScalingOptions {
    /// Known additive constant (compact-part contribution) removed before
    /// fitting.
    #[serde(default)]
    pub offset: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub alpha: f64,
    pub beta: f64,
    pub constant: f64,
    pub rms_residual: f64,
    pub points: usize,
    pub decades: f64,
}

/// Least squares fit of `log v = α log|t| + β log(−log|t|) + const`.
pub fn scaling_fit(series: &[(f64, f64)], opts: &ScalingOptions) -> Result<ScalingReport> {
    if series.len() < 6 {
        return Err(GeometryError::DegenerateFit(format!(
            "need at least 6 points, got {}",
            series.len()
        )));
    }
    let mut rows = Vec::with_capacity(series.len());
    for &(t, v) in series {
        let v = v - opts.offset;
        if !(t > 0.0 && t < 1.0) || !(v > 0.0) || !v.is_finite() {
            return Err(GeometryError::DegenerateFit(format!("bad sample (t={t}, v={v})")));
        }
        rows.push(([t.ln(), (-t.ln()).ln(), 1.0], v.ln()));
    }
    let lo = series.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = series.iter().map(|p| p.0).fold(0.0, f64::max);
    let decades = (hi / lo).log10();
    if decades < 5.0 - 1e-9 {
        return Err(GeometryError::DegenerateFit(format!(
            "samples span {decades:.2} decades, need 5"
        )));
    }
    let coef = least_squares(&rows)?;
    let ss: f64 = rows
        .iter()
        .map(|(x, y)| (y - (coef[0] * x[0] + coef[1] * x[1] + coef[2])).powi(2))
        .sum();
    Ok(ScalingReport {
        alpha: coef[0],
        beta: coef[1],
        constant: coef[2],
        rms_residual: (ss / rows.len() as f64).sqrt(),
        points: rows.len(),
        decades,
    })
}

/// Three-column least squares by modified Gram–Schmidt.
fn least_squares(rows: &[([f64; 3], f64)]) -> Result<[f64; 3]> {
    let m = rows.len();
    let mut q: Vec<Vec<f64>> = (0..3).map(|j| rows.iter().map(|r| r.0[j]).collect()).collect();
    let mut r = [[0.0; 3]; 3];
    for j in 0..3 {
        let n0 = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..j {
            let d: f64 = (0..m).map(|k| q[i][k] * q[j][k]).sum();
            r[i][j] = d;
            for k in 0..m {
                q[j][k] -= d * q[i][k];
            }
        }
        let n = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n > 1e-10 * n0) {
            return Err(GeometryError::DegenerateFit("design matrix is rank deficient".into()));
        }
        r[j][j] = n;
        q[j].iter_mut().for_each(|v| *v /= n);
    }
    let qty: Vec<f64> = (0..3).map(|j| (0..m).map(|k| q[j][k] * rows[k].1).sum()).collect();
    let mut x = [0.0; 3];
    for j in (0..3).rev() {
        let s: f64 = (j + 1..3).map(|i| r[j][i] * x[i]).sum();
        x[j] = (qty[j] - s) / r[j][j];
    }
    Ok(x)
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricRow {
    pub t: f64,
    /// Pairing matrix on span{normal, tangential}.
    pub p_nn: f64,
    pub p_tt: f64,
    pub p_nt: Complex64,
    /// Modulus envelope of the cross term, the largest it can be.
    pub p_nt_envelope: f64,
    /// Cofactor inverse entries.
    pub g_nn: f64,
    pub g_tt: f64,
    pub g_nt: Complex64,
    /// envelope² / (p_nn p_tt): bound on the relative cofactor correction
    /// to g_nn ≈ 1/p_nn.
    pub correction_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub g_nn_fit: ScalingReport,
}

/// Inverts the Hermitian pairing matrix on span{normal, tangential} by 2×2
/// cofactors for each `|t|` and fits the scaling of the normal entry.
pub fn metric_from_pairings(t_grid: &[f64]) -> Result<MetricReport> {
    use DifferentialModel::*;
    let rows = t_grid
        .iter()
        .map(|&t| {
            let spec = AnnulusSpec::new(t);
            let p_nn = masur_pairing(&spec, Normal, Normal)?.value.re;
            let p_tt = masur_pairing(&spec, Tangential, Tangential)?.value.re;
            let cross = masur_pairing(&spec, Normal, Tangential)?;
            let p_nt = cross.value;
            let det = p_nn * p_tt - p_nt.norm_sqr();
            if !(det > 1e-14 * p_nn * p_tt) {
                return Err(GeometryError::DegenerateFit(format!(
                    "singular pairing matrix at t = {t}"
                )));
            }
            Ok(MetricRow {
                t,
                p_nn,
                p_tt,
                p_nt,
                p_nt_envelope: cross.envelope,
                g_nn: p_tt / det,
                g_tt: p_nn / det,
                g_nt: -p_nt / det,
                correction_bound: cross.envelope.powi(2) / (p_nn * p_tt),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.g_nn)).collect();
    let g_nn_fit = scaling_fit(&series, &ScalingOptions::default())?;
    Ok(MetricReport { rows, g_nn_fit })
}

#[derive(Clone, Debug, Serialize)]
pub struct SubstitutionRow {
    pub t: f64,
    pub xi: f64,
    /// Coefficients of dξ² and dθ² in the pulled-back metric.
    pub g_xixi: f64,
    pub g_thth: f64,
    /// g_ξξ/(4C) − 1 and g_θθ/(Cξ⁶) − 1.
    pub dev_xixi: f64,
    pub dev_thth: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SubstitutionReport {
    pub c: f64,
    pub rows: Vec<SubstitutionRow>,
    /// Slope of log max-deviation against log ξ, when the deviations are
    /// resolvable.
    pub rate: Option<f64>,
}

/// ξ = (−log|t|)^(−1/2).
pub fn xi_of_t(t: f64) -> f64 {
    (-t.ln()).powf(-0.5)
}

/// Pulls `G(|t|) |dt|²` back under ξ = (−log|t|)^(−1/2). With t = e^(−s+iθ),
/// |dt|² = |t|²(ds² + dθ²); ds/dξ is taken by central differences.
/// `c` is the leading constant of G ~ C|t|⁻²(−log|t|)⁻³; when absent it is
/// read off at the smallest |t| in the grid.
pub fn substitution_check(
    g: impl Fn(f64) -> Result<f64>,
    t_grid: &[f64],
    c: Option<f64>,
) -> Result<SubstitutionReport> {
    if t_grid.is_empty() {
        return Err(GeometryError::OutOfDomain("empty t grid".into()));
    }
    let s_of = |xi: f64| xi.powi(-2);
    let mut pts = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > 0.0 && t < 1.0) {
            return Err(GeometryError::OutOfDomain(format!("t = {t} not in (0, 1)")));
        }
        pts.push((t, g(t)?));
    }
    let c = match c {
        Some(c) => c,
        None => {
            let &(t, gv) = pts.iter().min_by(|a, b| a.0.total_cmp(&b.0)).unwrap();
            gv * t * t * (-t.ln()).powi(3)
        }
    };
    let rows: Vec<SubstitutionRow> = pts
        .iter()
        .map(|&(t, gv)| {
            let xi = xi_of_t(t);
            let h = 1e-5 * xi;
            let ds = (s_of(xi + h) - s_of(xi - h)) / (2.0 * h);
            let conf = gv * t * t;
            let g_xixi = conf * ds * ds;
            let g_thth = conf;
            SubstitutionRow {
                t,
                xi,
                g_xixi,
                g_thth,
                dev_xixi: g_xixi / (4.0 * c) - 1.0,
                dev_thth: g_thth / (c * xi.powi(6)) - 1.0,
            }
        })
        .collect();
    let fit: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r.xi.ln(), r.dev_xixi.abs().max(r.dev_thth.abs())))
        .filter(|p| p.1 > 1e-9)
        .map(|(x, d)| (x, d.ln()))
        .collect();
    let rate = if fit.len() >= 2 {
        let n = fit.len() as f64;
        let mx = fit.iter().map(|p| p.0).sum::<f64>() / n;
        let my = fit.iter().map(|p| p.1).sum::<f64>() / n;
        let sxx: f64 = fit.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = fit.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    Ok(SubstitutionReport { c, rows, rate })
}

/// Log-spaced grid of `n` values from `hi` down to `lo`.
pub fn log_grid(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    let (a, b) = (hi.ln(), lo.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n.max(2) - 1) as f64).exp())
        .collect()
}

/// One row per |t|: the pairings of `pairs` (complex value and envelope).
pub fn write_pairings_csv<W: Write>(
    t_grid: &[f64],
    pairs: &[(DifferentialModel, DifferentialModel)],
    w: W,
) -> Result<()> {
    let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
    let name = |m: DifferentialModel| serde_json::to_value(m).unwrap().as_str().unwrap().to_string();
    let mut header = vec!["t".to_string()];
    for &(a, b) in pairs {
        let p = format!("{}_{}", name(a), name(b));
        header.push(format!("{p}_re"));
        header.push(format!("{p}_im"));
        header.push(format!("{p}_env"));
    }
    out.write_record(&header).map_err(ser)?;
    for &t in t_grid {
        let spec = AnnulusSpec::new(t);
        let mut rec = vec![format!("{t:e}")];
        for &(a, b) in pairs {
            let p = masur_pairing(&spec, a, b)?;
            rec.push(format!("{:e}", p.value.re));
            rec.push(format!("{:e}", p.value.im));
            rec.push(format!("{:e}", p.envelope));
        }
        out.write_record(&rec).map_err(ser)?;
    }
    out.flush().map_err(|e| GeometryError::Serialization(e.to_string()))?;
    Ok(())
}

fn ser(e: csv::Error) -> GeometryError {
    GeometryError::Serialization(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use DifferentialModel::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn density_core_and_symmetry() {
        let t = c(1e-4);
        let core = annulus_density(c(1e-2), t).unwrap();
        // Θ = π/2 at the core: ρ = (π/log|t|)² / |z|²
        let want = (PI / 1e-4f64.ln()).powi(2) / 1e-4;
        assert!((core / want - 1.0).abs() < 1e-12);
        assert!((core - 1163.4518).abs() < 1e-3, "{core}");
        // z ↦ t/z is an isometry: ρ(z)|z|² is symmetric
        for &r in &[2e-4, 1e-3, 0.05, 0.3] {
            let a = annulus_density(c(r), t).unwrap() * r * r;
            let b = annulus_density(c(1e-4 / r), t).unwrap() * (1e-4 / r).powi(2);
            assert!((a / b - 1.0).abs() < 1e-10);
        }
        // near |z| = 1 the density approaches the cusp density
        let z = c(1.0 - 1e-9);
        assert!((annulus_density(z, t).unwrap() / cusp_density(z) - 1.0).abs() < 1e-12);
        assert!(annulus_density(c(2.0), t).is_err());
    }

    #[test]
    fn grafting_band() {
        let t = c(1e-6);
        assert_eq!(grafted_ratio(c(1.0), t).unwrap(), 1.0);
        assert!(grafted_ratio(c(0.4), t).is_err());
        let k: Vec<f64> = [1e-3, 1e-6, 1e-9, 1e-12]
            .iter()
            .map(|&t| graft_constant(c(t), 101).unwrap())
            .collect();
        let (lo, hi) = k.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
        assert!(hi / lo < 2.0, "{k:?}");
    }

    #[test]
    fn normal_pairings_match_closed_forms() {
        let spec = AnnulusSpec::new(1e-3);
        let l = -(1e-3f64).ln();
        let p = masur_pairing(&spec, Normal, Normal).unwrap();
        let want = 2.0 * PI / 3.0 * 1e-6 * l.powi(3);
        assert!((p.value.re / want - 1.0).abs() < 1e-6 && p.value.im.abs() < 1e-12 * want);
        assert!(p.rel_change <= PAIRING_REL_TOL);
        assert!((want - 6.903e-4).abs() < 5e-7);

        let env = masur_envelope(&spec, Normal, Tangential).unwrap();
        let t = 1e-3;
        let want = 2.0 * PI * t * (2.0 - t * (l * l + 2.0 * l + 2.0));
        assert!((env / want - 1.0).abs() < 1e-6, "{env} {want}");
        assert!((env - 1.2167e-2).abs() < 1e-6);

        let cross = masur_pairing(&spec, Normal, Tangential).unwrap();
        assert!(cross.value.norm() < 1e-9 * cross.envelope);
    }

    #[test]
    fn diagonal_pairings_positive_and_monotone() {
        let grid = log_grid((-3.0f64).exp(), 1e-8, 9);
        for m in [Normal, Tangential, TangentialDeformed, Regular] {
            for &t in &grid {
                let p = masur_pairing(&AnnulusSpec::new(t), m, m).unwrap();
                assert!(p.value.re > 0.0 && p.value.im.abs() <= 1e-12 * p.value.re);
            }
        }
        let v: Vec<f64> = grid
            .iter()
            .map(|&t| masur_pairing(&AnnulusSpec::new(t), Normal, Normal).unwrap().value.re)
            .collect();
        assert!(v.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn pairing_is_hermitian() {
        let spec = AnnulusSpec { t: Complex64::from_polar(1e-3, 0.7), c: 1.0, n_r: 32, n_phi: 32 };
        let a = masur_pairing(&spec, TangentialDeformed, Tangential).unwrap().value;
        let b = masur_pairing(&spec, Tangential, TangentialDeformed).unwrap().value;
        assert!((a - b.conj()).norm() < 1e-9 * a.norm().max(1e-30));
    }

    #[test]
    fn fit_recovers_exponents() {
        let grid = log_grid(1e-2, 1e-8, 13);
        let series: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| (t, masur_pairing(&AnnulusSpec::new(t), Normal, Normal).unwrap().value.re))
            .collect();
        let f = scaling_fit(&series, &ScalingOptions::default()).unwrap();
        assert!((f.alpha - 2.0).abs() < 0.02 && (f.beta - 3.0).abs() < 0.15, "{f:?}");
        assert!((f.constant / (2.0 * PI / 3.0).ln() - 1.0).abs() < 0.02);

        let series: Vec<(f64, f64)> = grid
            .iter()
            .map(|&t| (t, masur_envelope(&AnnulusSpec::new(t), Normal, Regular).unwrap()))
            .collect();
        let f = scaling_fit(&series, &ScalingOptions::default()).unwrap();
        assert!((f.alpha - 1.0).abs() < 0.02, "{f:?}");

        assert!(scaling_fit(&series[..5], &ScalingOptions::default()).is_err());
        let narrow: Vec<(f64, f64)> = log_grid(1e-2, 1e-5, 8).iter().map(|&t| (t, t)).collect();
        assert!(scaling_fit(&narrow, &ScalingOptions::default()).is_err());
    }

    #[test]
    fn cofactor_metric_exponents() {
        let r = metric_from_pairings(&log_grid(1e-2, 1e-8, 7)).unwrap();
        assert!((r.g_nn_fit.alpha + 2.0).abs() < 0.02, "{:?}", r.g_nn_fit);
        assert!((r.g_nn_fit.beta + 3.0).abs() < 0.15, "{:?}", r.g_nn_fit);
        assert!(r.rows.windows(2).all(|w| w[1].correction_bound < w[0].correction_bound));
        // one decade down: ×100 times the ratio of log-cubes
        let (a, b) = (&r.rows[2], &r.rows[3]);
        let want = (a.t / b.t).powi(2) * (a.t.ln() / b.t.ln()).powi(3);
        assert!((b.g_nn / a.g_nn / want - 1.0).abs() < 1e-6);
    }

    #[test]
    fn substitution_recovers_horn() {
        assert!((xi_of_t(1e-3) - 0.380480).abs() < 1e-6);
        let exact = |t: f64| Ok(1.0 / (t * t * (-t.ln()).powi(3)));
        let grid: Vec<f64> = [0.2f64, 0.15, 0.1].iter().map(|xi| (-xi.powi(-2)).exp()).collect();
        let r = substitution_check(exact, &grid, Some(1.0)).unwrap();
        for row in &r.rows {
            assert!(row.dev_xixi.abs() < 1e-6 && row.dev_thth.abs() < 1e-12);
        }
    }
}
