//! Metric tensor, Levi-Civita connection and factor curvature in chart
//! coordinates. Matrices are row-major `n × n`; connection coefficients are
//! stored as `gamma[i*n*n + j*n + k] = Γ^i_{jk}`.

use crate::error::{GeometryError, Result};
use crate::linalg;
use crate::scalar::Real;
use crate::space::{CompletionPoint, FactorSpec, SpaceSpec};

/// Finite-difference step for the perturbed-horn connection.
pub const FD_STEP: f64 = 1e-6;

fn check_chart<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Result<()> {
    let off = space.offsets();
    for (fi, f) in space.factors.iter().enumerate() {
        match f {
            FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => {
                if !(x[off[fi] + 1] > T::zero()) {
                    return Err(GeometryError::SingularAtStratum { factor: fi });
                }
            }
            FactorSpec::HyperbolicPlane => {
                if !(x[off[fi] + 1] > T::zero()) {
                    return Err(GeometryError::InvalidPoint(format!(
                        "block {fi}: hyperbolic chart needs y > 0"
                    )));
                }
            }
            FactorSpec::Euclidean { .. } => {}
        }
    }
    Ok(())
}

/// Metric tensor at flat chart coordinates `x` without validity checks.
pub(crate) fn metric_chart_unchecked<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Vec<T> {
    let n = space.dim();
    let mut g = vec![T::zero(); n * n];
    let off = space.offsets();
    let four = T::lit(4.0);
    for (fi, f) in space.factors.iter().enumerate() {
        let o = off[fi];
        match f {
            FactorSpec::Horn => {
                let xi = x[o + 1];
                g[o * n + o] = xi.powi(6);
                g[(o + 1) * n + o + 1] = four;
            }
            FactorSpec::PerturbedHorn { b, a4, c6, .. } => {
                let xi = x[o + 1];
                let x6 = xi.powi(6);
                g[o * n + o] = *b * x6 * (T::one() + *c6 * x6);
                g[(o + 1) * n + o + 1] = four * *b * (T::one() + *a4 * xi.powi(4));
            }
            FactorSpec::HyperbolicPlane => {
                let y = x[o + 1];
                let inv = T::one() / (y * y);
                g[o * n + o] = inv;
                g[(o + 1) * n + o + 1] = inv;
            }
            FactorSpec::Euclidean { dim } => {
                for k in 0..*dim {
                    g[(o + k) * n + o + k] = T::one();
                }
            }
        }
    }
    if let Some(c) = space.coupling() {
        let e = off[c.euclid_factor];
        for (h, b3) in c.horns {
            let r = off[h] + 1;
            let cross = b3 * x[r].powi(3);
            g[r * n + e] = cross;
            g[e * n + r] = cross;
        }
    }
    g
}

/// Metric tensor at flat chart coordinates.
pub fn metric_chart<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Result<Vec<T>> {
    check_chart(space, x)?;
    let g = metric_chart_unchecked(space, x);
    if !space.is_product() {
        let n = space.dim();
        let s: Vec<T> = (0..n).map(|i| T::one() / g[i * n + i].sqrt()).collect();
        let scaled: Vec<T> = (0..n * n).map(|k| g[k] * s[k / n] * s[k % n]).collect();
        if linalg::cholesky(&scaled, n).is_none() {
            return Err(GeometryError::NotPositiveDefinite);
        }
    }
    Ok(g)
}

/// Metric tensor at a completion point; singular on any stratum.
pub fn metric_tensor<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>) -> Result<Vec<T>> {
    let p = p.validated(space)?;
    if let Some(&fi) = p.stratum().iter().next() {
        return Err(GeometryError::SingularAtStratum { factor: fi });
    }
    metric_chart(space, &p.chart())
}

/// `dg[k*n*n + i*n + j] = ∂_k g_ij`.
pub fn metric_derivative<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Vec<T> {
    let n = space.dim();
    let nn = n * n;
    let mut dg = vec![T::zero(); n * nn];
    let off = space.offsets();
    for (fi, f) in space.factors.iter().enumerate() {
        let o = off[fi];
        match f {
            FactorSpec::Horn => {
                let xi = x[o + 1];
                dg[(o + 1) * nn + o * n + o] = T::lit(6.0) * xi.powi(5);
            }
            FactorSpec::HyperbolicPlane => {
                let y = x[o + 1];
                let d = T::lit(-2.0) / (y * y * y);
                dg[(o + 1) * nn + o * n + o] = d;
                dg[(o + 1) * nn + (o + 1) * n + o + 1] = d;
            }
            FactorSpec::Euclidean { .. } => {}
            FactorSpec::PerturbedHorn { .. } => {
                // Central differences in ξ with one Richardson step. The
                // metric depends on this coordinate only through the factor
                // block and the coupling row, so the full tensor is
                // differenced.
                let k = o + 1;
                let xi = x[k];
                let h = T::lit(FD_STEP).min(xi / T::lit(4.0));
                let central = |h: T| {
                    let mut xp = x.to_vec();
                    let mut xm = x.to_vec();
                    xp[k] += h;
                    xm[k] -= h;
                    let gp = metric_chart_unchecked(space, &xp);
                    let gm = metric_chart_unchecked(space, &xm);
                    gp.iter().zip(&gm).map(|(a, b)| (*a - *b) / (h + h)).collect::<Vec<T>>()
                };
                let d1 = central(h);
                let d2 = central(h / T::lit(2.0));
                for idx in 0..nn {
                    dg[k * nn + idx] = (T::lit(4.0) * d2[idx] - d1[idx]) / T::lit(3.0);
                }
            }
        }
    }
    dg
}

/// Inverse of a metric tensor. The horn entry `ξ⁶` makes the tensor badly
/// scaled near strata, so the inverse is taken after symmetric diagonal
/// scaling.
pub fn inverse_metric<T: Real>(g: &[T], n: usize) -> Result<Vec<T>> {
    let d: Vec<T> = (0..n).map(|i| g[i * n + i]).collect();
    if d.iter().any(|v| !(*v > T::zero())) {
        return Err(GeometryError::NotPositiveDefinite);
    }
    let s: Vec<T> = d.iter().map(|v| T::one() / v.sqrt()).collect();
    let scaled: Vec<T> = (0..n * n).map(|k| g[k] * s[k / n] * s[k % n]).collect();
    let inv = linalg::inverse(&scaled, n).ok_or(GeometryError::NotPositiveDefinite)?;
    Ok((0..n * n).map(|k| inv[k] * s[k / n] * s[k % n]).collect())
}

/// Connection coefficients at flat chart coordinates.
pub fn christoffel_chart<T: Real>(space: &SpaceSpec<T>, x: &[T]) -> Result<Vec<T>> {
    let g = metric_chart(space, x)?;
    let n = space.dim();
    let nn = n * n;
    let ginv = inverse_metric(&g, n)?;
    let dg = metric_derivative(space, x);
    let mut gamma = vec![T::zero(); n * nn];
    let half = T::lit(0.5);
    for i in 0..n {
        for j in 0..n {
            for k in j..n {
                let mut s = T::zero();
                for l in 0..n {
                    let gil = ginv[i * n + l];
                    if gil == T::zero() {
                        continue;
                    }
                    s += gil * (dg[j * nn + l * n + k] + dg[k * nn + l * n + j] - dg[l * nn + j * n + k]);
                }
                gamma[i * nn + j * n + k] = half * s;
                gamma[i * nn + k * n + j] = half * s;
            }
        }
    }
    Ok(gamma)
}

pub fn christoffel<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>) -> Result<Vec<T>> {
    let p = p.validated(space)?;
    if let Some(&fi) = p.stratum().iter().next() {
        return Err(GeometryError::SingularAtStratum { factor: fi });
    }
    christoffel_chart(space, &p.chart())
}

/// Gaussian curvature of factor `fi` at chart coordinates.
pub fn factor_curvature<T: Real>(space: &SpaceSpec<T>, x: &[T], fi: usize) -> Result<T> {
    check_chart(space, x)?;
    let o = space.offsets()[fi];
    match &space.factors[fi] {
        FactorSpec::Horn => {
            let xi = x[o + 1];
            Ok(T::lit(-1.5) / (xi * xi))
        }
        FactorSpec::HyperbolicPlane => Ok(-T::one()),
        FactorSpec::Euclidean { dim: 2 } => Ok(T::zero()),
        FactorSpec::Euclidean { dim } => Err(GeometryError::CurvatureUndefined {
            factor: fi,
            reason: format!("euclidean factor of dimension {dim} is not a surface"),
        }),
        FactorSpec::PerturbedHorn { b, a4, c6, .. } => {
            // K = −(√W)''/(A√W) + (√W)'(√A)'/(A√A√W) for A dξ² + W dθ².
            let xi = x[o + 1];
            let (b, a4, c6) = (*b, *a4, *c6);
            let x4 = xi.powi(4);
            let x6 = xi.powi(6);
            let a = T::lit(4.0) * b * (T::one() + a4 * x4);
            let da = T::lit(16.0) * b * a4 * xi.powi(3);
            let w = b * x6 * (T::one() + c6 * x6);
            let dw = b * (T::lit(6.0) * xi.powi(5) + T::lit(12.0) * c6 * xi.powi(11));
            let ddw = b * (T::lit(30.0) * x4 + T::lit(132.0) * c6 * xi.powi(10));
            let sw = w.sqrt();
            let sa = a.sqrt();
            let dsw = dw / (T::lit(2.0) * sw);
            let ddsw = ddw / (T::lit(2.0) * sw) - dw * dw / (T::lit(4.0) * w * sw);
            let dsa = da / (T::lit(2.0) * sa);
            Ok(-ddsw / (a * sw) + dsw * dsa / (a * sa * sw))
        }
    }
}

/// Curvature of every factor; fails on the first factor that is not a surface.
pub fn curvature<T: Real>(space: &SpaceSpec<T>, p: &CompletionPoint<T>) -> Result<Vec<T>> {
    let p = p.validated(space)?;
    if let Some(&fi) = p.stratum().iter().next() {
        return Err(GeometryError::SingularAtStratum { factor: fi });
    }
    let x = p.chart();
    (0..space.factors.len()).map(|fi| factor_curvature(space, &x, fi)).collect()
}

/// `√(vᵀ g v)` at chart coordinates.
pub fn norm_at<T: Real>(space: &SpaceSpec<T>, x: &[T], v: &[T]) -> Result<T> {
    let g = metric_chart(space, x)?;
    Ok(linalg::bilinear(&g, v, v).max(T::zero()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Block;

    fn horn_point(theta: f64, xi: f64) -> CompletionPoint<f64> {
        CompletionPoint::new(vec![Block::interior(theta, xi)])
    }

    #[test]
    fn horn_tensor_values() {
        let s = SpaceSpec::horn();
        assert_eq!(metric_tensor(&s, &horn_point(0.0, 1.0)).unwrap(), vec![1.0, 0.0, 0.0, 4.0]);
        assert_eq!(metric_tensor(&s, &horn_point(2.0, 0.5)).unwrap(), vec![0.015625, 0.0, 0.0, 4.0]);
        let b = CompletionPoint::new(vec![Block::boundary()]);
        assert_eq!(metric_tensor(&s, &b), Err(GeometryError::SingularAtStratum { factor: 0 }));
    }

    #[test]
    fn f32_horn_tensor() {
        let s = SpaceSpec::<f32>::horn();
        let p = CompletionPoint::new(vec![Block::interior(2.0f32, 0.5)]);
        assert_eq!(metric_tensor(&s, &p).unwrap(), vec![0.015625f32, 0.0, 0.0, 4.0]);
        let k = curvature(&s, &p).unwrap();
        assert!((k[0] + 6.0).abs() < 1e-5);
    }

    #[test]
    fn perturbed_curvature_reduces_to_horn() {
        let ph = SpaceSpec::<f64>::new(vec![FactorSpec::PerturbedHorn { b: 1.0, a4: 0.0, b3: 0.0, c6: 0.0 }]).unwrap();
        for &xi in &[0.1, 0.5, 2.0] {
            let k = factor_curvature(&ph, &[0.0, xi], 0).unwrap();
            assert!((k + 1.5 / (xi * xi)).abs() < 1e-10 * k.abs());
        }
    }

    #[test]
    fn perturbed_connection_matches_horn_limit() {
        let ph = SpaceSpec::<f64>::new(vec![FactorSpec::PerturbedHorn { b: 1.0, a4: 0.0, b3: 0.0, c6: 0.0 }]).unwrap();
        let g = christoffel_chart(&ph, &[0.0, 0.5]).unwrap();
        // Γ^θ_{θξ} = 3/ξ, Γ^ξ_{θθ} = −¾ξ⁵.
        assert!((g[1] - 6.0).abs() < 1e-8, "{}", g[1]);
        assert!((g[4] + 0.75 * 0.5f64.powi(5)).abs() < 1e-9);
    }

    #[test]
    fn coupled_metric_rejects_indefinite_points() {
        let s = SpaceSpec::new(vec![
            FactorSpec::PerturbedHorn { b: 1.0, a4: 0.0, b3: 1.0, c6: 0.0 },
            FactorSpec::Euclidean { dim: 1 },
        ])
        .unwrap();
        assert!(metric_chart(&s, &[0.0, 0.5, 0.0]).is_ok());
        // 4·1 − ξ⁶ < 0 once ξ > 4^{1/6}.
        assert_eq!(metric_chart(&s, &[0.0, 1.5, 0.0]), Err(GeometryError::NotPositiveDefinite));
    }
}
