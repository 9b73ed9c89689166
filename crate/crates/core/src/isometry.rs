//! Isometries of product model spaces: per-factor actions plus a
//! permutation of mutually isomorphic factors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::geodesic::distance;
use crate::hyperbolic::Mobius;
use crate::linalg;
use crate::metric::metric_chart;
use crate::scalar::Real;
use crate::space::{Block, CompletionPoint, FactorSpec, HornBlock, SpaceSpec, TangentVector};

/// Action of an isometry on one factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorAction<T> {
    Identity,
    /// `θ ↦ θ + a`.
    HornTranslate { a: T },
    /// `θ ↦ a − θ`.
    HornReflect { a: T },
    /// Real 2×2 matrix of positive determinant acting by Möbius transformation.
    Mobius { m: [[T; 2]; 2] },
    /// `x ↦ Q x + t` with `Q` orthogonal.
    Euclid {
        #[serde(rename = "Q")]
        q: Vec<Vec<T>>,
        t: Vec<T>,
    },
}

impl<T: Real> FactorAction<T> {
    fn mobius(&self) -> Option<Mobius<T>> {
        match self {
            FactorAction::Mobius { m } => Mobius::new(m[0][0], m[0][1], m[1][0], m[1][1]),
            _ => None,
        }
    }

    fn horn_affine(&self) -> Option<(T, T)> {
        match self {
            FactorAction::Identity => Some((T::one(), T::zero())),
            FactorAction::HornTranslate { a } => Some((T::one(), *a)),
            FactorAction::HornReflect { a } => Some((-T::one(), *a)),
            _ => None,
        }
    }

    fn from_horn_affine(s: T, a: T) -> Self {
        if s > T::zero() {
            if a == T::zero() {
                FactorAction::Identity
            } else {
                FactorAction::HornTranslate { a }
            }
        } else {
            FactorAction::HornReflect { a }
        }
    }

    fn validate(&self, f: &FactorSpec<T>, index: usize) -> Result<()> {
        let bad = |msg: &str| Err(GeometryError::InvalidIsometry(format!("factor action {index}: {msg}")));
        match (self, f) {
            (FactorAction::Identity, _) => Ok(()),
            (FactorAction::HornTranslate { a } | FactorAction::HornReflect { a }, f) if f.is_horn() => {
                if a.is_finite() {
                    Ok(())
                } else {
                    bad("non-finite shift")
                }
            }
            (FactorAction::Mobius { m }, FactorSpec::HyperbolicPlane) => {
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("non-finite matrix");
                }
                if self.mobius().is_none() {
                    return bad("Möbius matrix needs positive determinant");
                }
                Ok(())
            }
            (FactorAction::Euclid { q, t }, FactorSpec::Euclidean { dim }) => {
                let d = *dim;
                if q.len() != d || q.iter().any(|r| r.len() != d) || t.len() != d {
                    return bad("orthogonal matrix and translation must match the factor dimension");
                }
                for i in 0..d {
                    for j in 0..d {
                        let dot: T = (0..d).map(|k| q[k][i] * q[k][j]).sum();
                        let want = if i == j { T::one() } else { T::zero() };
                        if (dot - want).abs() > T::lit(1e-9) {
                            return bad("Q is not orthogonal");
                        }
                    }
                }
                Ok(())
            }
            _ => bad("action does not match factor kind"),
        }
    }

    fn apply(&self, b: &Block<T>) -> Block<T> {
        match (self, b) {
            (FactorAction::Identity, _) => b.clone(),
            (_, Block::Horn(HornBlock::Boundary)) => b.clone(),
            (FactorAction::HornTranslate { a }, Block::Horn(HornBlock::Interior { theta, xi })) => {
                Block::Horn(HornBlock::Interior { theta: *theta + *a, xi: *xi })
            }
            (FactorAction::HornReflect { a }, Block::Horn(HornBlock::Interior { theta, xi })) => {
                Block::Horn(HornBlock::Interior { theta: *a - *theta, xi: *xi })
            }
            (FactorAction::Mobius { .. }, Block::Coords { coords }) => {
                let m = self.mobius().expect("validated Möbius action");
                let (x, y) = m.apply(coords[0], coords[1]);
                Block::coords(vec![x, y])
            }
            (FactorAction::Euclid { q, t }, Block::Coords { coords }) => {
                Block::coords(q.iter().zip(t).map(|(row, ti)| linalg::dot(row, coords) + *ti).collect())
            }
            _ => b.clone(),
        }
    }

    /// Differential at a block applied to the block's chart velocity.
    fn push(&self, b: &Block<T>, v: &[T]) -> Vec<T> {
        match (self, b) {
            (FactorAction::HornReflect { .. }, _) => vec![-v[0], v[1]],
            (FactorAction::Mobius { .. }, Block::Coords { coords }) => {
                // w' = z' / (cz + d)² as complex numbers.
                let m = self.mobius().expect("validated Möbius action");
                let re = m.c * coords[0] + m.d;
                let im = m.c * coords[1];
                let den2 = re * re - im * im;
                let dim = T::lit(2.0) * re * im;
                let mod2 = den2 * den2 + dim * dim;
                let (ir, ii) = (den2 / mod2, -dim / mod2);
                vec![v[0] * ir - v[1] * ii, v[0] * ii + v[1] * ir]
            }
            (FactorAction::Euclid { q, .. }, _) => q.iter().map(|row| linalg::dot(row, v)).collect(),
            _ => v.to_vec(),
        }
    }

    fn compose(&self, inner: &Self) -> Self {
        if let FactorAction::Identity = self {
            return inner.clone();
        }
        if let FactorAction::Identity = inner {
            return self.clone();
        }
        if let (Some((s1, a1)), Some((s2, a2))) = (self.horn_affine(), inner.horn_affine()) {
            return Self::from_horn_affine(s1 * s2, s1 * a2 + a1);
        }
        if let (Some(m1), Some(m2)) = (self.mobius(), inner.mobius()) {
            let m = m1.compose(&m2);
            return FactorAction::Mobius { m: [[m.a, m.b], [m.c, m.d]] };
        }
        if let (FactorAction::Euclid { q: q1, t: t1 }, FactorAction::Euclid { q: q2, t: t2 }) = (self, inner) {
            let d = q1.len();
            let q: Vec<Vec<T>> = (0..d)
                .map(|i| (0..d).map(|j| (0..d).map(|k| q1[i][k] * q2[k][j]).sum()).collect())
                .collect();
            let t: Vec<T> = (0..d).map(|i| linalg::dot(&q1[i], t2) + t1[i]).collect();
            return FactorAction::Euclid { q, t };
        }
        panic!("composing actions of different factor kinds")
    }

    fn inverse(&self) -> Self {
        match self {
            FactorAction::Identity => FactorAction::Identity,
            FactorAction::HornTranslate { a } => FactorAction::HornTranslate { a: -*a },
            FactorAction::HornReflect { a } => FactorAction::HornReflect { a: *a },
            FactorAction::Mobius { .. } => {
                let m = self.mobius().expect("validated Möbius action").inverse();
                FactorAction::Mobius { m: [[m.a, m.b], [m.c, m.d]] }
            }
            FactorAction::Euclid { q, t } => {
                let d = q.len();
                let qt: Vec<Vec<T>> = (0..d).map(|i| (0..d).map(|j| q[j][i]).collect()).collect();
                let ti: Vec<T> = (0..d).map(|i| -linalg::dot(&qt[i], t)).collect();
                FactorAction::Euclid { q: qt, t: ti }
            }
        }
    }
}

/// Isometry of a product space. Block `i` of a point is acted on by
/// `factor_actions[i]` and lands in slot `permutation[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Isometry<T> {
    pub factor_actions: Vec<FactorAction<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

impl<T: Real> Isometry<T> {
    pub fn new(factor_actions: Vec<FactorAction<T>>) -> Self {
        Isometry { factor_actions, permutation: None }
    }

    pub fn identity(space: &SpaceSpec<T>) -> Self {
        Isometry::new(vec![FactorAction::Identity; space.factors.len()])
    }

    pub fn with_permutation(mut self, perm: Vec<usize>) -> Self {
        self.permutation = Some(perm);
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("isometry serializes")
    }

    fn perm(&self) -> Vec<usize> {
        self.permutation.clone().unwrap_or_else(|| (0..self.factor_actions.len()).collect())
    }

    pub fn validate(&self, space: &SpaceSpec<T>) -> Result<()> {
        let k = space.factors.len();
        if self.factor_actions.len() != k {
            return Err(GeometryError::InvalidIsometry(format!(
                "{} factor actions for {k} factors",
                self.factor_actions.len()
            )));
        }
        let perm = self.perm();
        let mut seen = vec![false; k];
        if perm.len() != k {
            return Err(GeometryError::InvalidIsometry("permutation has wrong length".into()));
        }
        for (i, &j) in perm.iter().enumerate() {
            if j >= k || seen[j] {
                return Err(GeometryError::InvalidIsometry("permutation is not a bijection".into()));
            }
            seen[j] = true;
            if space.factors[i] != space.factors[j] {
                return Err(GeometryError::InvalidIsometry(format!(
                    "permutation maps factor {i} to non-isomorphic factor {j}"
                )));
            }
        }
        for (i, (a, f)) in self.factor_actions.iter().zip(&space.factors).enumerate() {
            a.validate(f, i)?;
        }
        if !space.is_product() {
            // The b3 cross term ties a horn's ξ to the first Euclidean
            // coordinate; only actions fixing that coordinate's line survive.
            if let Some(c) = space.coupling() {
                if let FactorAction::Euclid { q, t } = &self.factor_actions[c.euclid_factor] {
                    let d = q.len();
                    let fixes = (q[0][0] - T::one()).abs() <= T::lit(1e-12)
                        && (1..d).all(|j| q[0][j].abs() <= T::lit(1e-12))
                        && t[0] == T::zero();
                    if !fixes {
                        return Err(GeometryError::InvalidIsometry(
                            "euclidean action must fix the coordinate coupled to a horn".into(),
                        ));
                    }
                }
                if perm.iter().enumerate().any(|(i, &j)| i != j) {
                    return Err(GeometryError::InvalidIsometry(
                        "permutations are not supported on coupled spaces".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn apply(&self, p: &CompletionPoint<T>) -> CompletionPoint<T> {
        let perm = self.perm();
        let mut out = p.blocks.clone();
        for (i, (a, b)) in self.factor_actions.iter().zip(&p.blocks).enumerate() {
            out[perm[i]] = a.apply(b);
        }
        CompletionPoint::new(out)
    }

    /// Pushes a chart tangent vector at `p` forward to `self.apply(p)`.
    pub fn push(&self, space: &SpaceSpec<T>, p: &CompletionPoint<T>, v: &TangentVector<T>) -> TangentVector<T> {
        let perm = self.perm();
        let off = space.offsets();
        let mut out = vec![T::zero(); v.components.len()];
        for (i, (a, b)) in self.factor_actions.iter().zip(&p.blocks).enumerate() {
            let d = space.factors[i].dim();
            let w = a.push(b, &v.components[off[i]..off[i] + d]);
            let o = off[perm[i]];
            out[o..o + d].copy_from_slice(&w);
        }
        TangentVector::new(out)
    }

    /// `self ∘ inner`.
    pub fn compose(&self, inner: &Self) -> Self {
        let p1 = self.perm();
        let p2 = inner.perm();
        let k = p1.len();
        let mut actions = Vec::with_capacity(k);
        let mut perm = Vec::with_capacity(k);
        for i in 0..k {
            actions.push(self.factor_actions[p2[i]].compose(&inner.factor_actions[i]));
            perm.push(p1[p2[i]]);
        }
        let identity_perm = perm.iter().enumerate().all(|(i, &j)| i == j);
        Isometry { factor_actions: actions, permutation: (!identity_perm).then_some(perm) }
    }

    pub fn inverse(&self) -> Self {
        let p = self.perm();
        let k = p.len();
        let mut pinv = vec![0; k];
        for (i, &j) in p.iter().enumerate() {
            pinv[j] = i;
        }
        let actions = (0..k).map(|j| self.factor_actions[pinv[j]].inverse()).collect();
        let identity_perm = pinv.iter().enumerate().all(|(i, &j)| i == j);
        Isometry { factor_actions: actions, permutation: (!identity_perm).then_some(pinv) }
    }

    /// `self^k` for `k ≥ 0`, or the inverse power for `k < 0`.
    pub fn power(&self, k: i64) -> Self {
        let base = if k < 0 { self.inverse() } else { self.clone() };
        let mut out = Isometry {
            factor_actions: vec![FactorAction::Identity; self.factor_actions.len()],
            permutation: None,
        };
        for _ in 0..k.unsigned_abs() {
            out = base.compose(&out);
        }
        out
    }
}

/// Largest deviation found between the metric and its pullback, and between
/// distances before and after the action, over random samples.
#[derive(Debug, Clone, Serialize)]
pub struct IsometryCheck {
    pub max_metric_error: f64,
    pub max_distance_error: f64,
    pub samples: usize,
}

/// Samples interior points of a space around the chart origin.
pub fn random_point<T: Real, R: Rng>(space: &SpaceSpec<T>, rng: &mut R, spread: f64) -> CompletionPoint<T> {
    let blocks = space
        .factors
        .iter()
        .map(|f| match f {
            FactorSpec::Horn | FactorSpec::PerturbedHorn { .. } => Block::interior(
                T::lit(rng.gen_range(-spread..spread)),
                T::lit(rng.gen_range(0.05..1.0)),
            ),
            FactorSpec::HyperbolicPlane => Block::coords(vec![
                T::lit(rng.gen_range(-spread..spread)),
                T::lit((rng.gen_range(-1.0..1.0) * spread.min(2.0)).exp()),
            ]),
            FactorSpec::Euclidean { dim } => {
                Block::coords((0..*dim).map(|_| T::lit(rng.gen_range(-spread..spread))).collect())
            }
        })
        .collect();
    CompletionPoint::new(blocks)
}

/// Checks that `iso` preserves the metric tensor and distances.
pub fn check_isometry<T: Real, R: Rng>(
    space: &SpaceSpec<T>,
    iso: &Isometry<T>,
    samples: usize,
    rng: &mut R,
) -> Result<IsometryCheck> {
    iso.validate(space)?;
    let n = space.dim();
    let mut max_metric = 0.0f64;
    let mut max_dist = 0.0f64;
    for _ in 0..samples {
        let p = random_point(space, rng, 2.0);
        let q = random_point(space, rng, 2.0);
        let gp = iso.apply(&p);
        let u = TangentVector::new((0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect());
        let w = TangentVector::new((0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect());
        let g0 = metric_chart(space, &p.chart())?;
        let g1 = metric_chart(space, &gp.chart())?;
        let before = linalg::bilinear(&g0, &u.components, &w.components);
        let pu = iso.push(space, &p, &u);
        let pw = iso.push(space, &p, &w);
        let after = linalg::bilinear(&g1, &pu.components, &pw.components);
        let scale = T::one().max(before.abs());
        max_metric = max_metric.max(((after - before).abs() / scale).to_f64_lossy());
        let d0 = distance(space, &p, &q)?;
        let d1 = distance(space, &gp, &iso.apply(&q))?;
        max_dist = max_dist.max((d1 - d0).abs().to_f64_lossy());
    }
    Ok(IsometryCheck { max_metric_error: max_metric, max_distance_error: max_dist, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn json_layout() {
        let json = r#"{"factor_actions":[{"kind":"horn_translate","a":1.0},{"kind":"mobius","m":[[2.0,0.0],[0.0,0.5]]},{"kind":"euclid","Q":[[0.0,-1.0],[1.0,0.0]],"t":[3.0,0.0]}],"permutation":[0,1,2]}"#;
        let iso = Isometry::<f64>::from_json(json).unwrap();
        assert_eq!(iso.factor_actions.len(), 3);
        let space = SpaceSpec::new(vec![
            FactorSpec::Horn,
            FactorSpec::HyperbolicPlane,
            FactorSpec::Euclidean { dim: 2 },
        ])
        .unwrap();
        iso.validate(&space).unwrap();
        assert_eq!(iso.to_json(), json);
    }

    #[test]
    fn boundary_maps_to_boundary() {
        let iso = Isometry::new(vec![FactorAction::HornTranslate { a: 2.0f64 }]);
        let b = CompletionPoint::new(vec![Block::boundary()]);
        assert_eq!(iso.apply(&b), b);
    }

    #[test]
    fn compose_and_inverse_with_permutation() {
        let space = SpaceSpec::new(vec![FactorSpec::Horn, FactorSpec::Horn, FactorSpec::HyperbolicPlane]).unwrap();
        let g = Isometry::new(vec![
            FactorAction::HornTranslate { a: 1.0f64 },
            FactorAction::HornReflect { a: 0.5 },
            FactorAction::Mobius { m: [[5.0, 3.0], [3.0, 2.0]] },
        ])
        .with_permutation(vec![1, 0, 2]);
        g.validate(&space).unwrap();
        let p = CompletionPoint::new(vec![
            Block::interior(0.3, 0.2),
            Block::interior(-1.0, 0.7),
            Block::coords(vec![0.4, 1.3]),
        ]);
        let back = g.inverse().apply(&g.apply(&p));
        for (a, b) in back.chart().iter().zip(p.chart()) {
            assert!((a - b).abs() < 1e-12);
        }
        let gg = g.compose(&g);
        let direct = g.apply(&g.apply(&p));
        for (a, b) in gg.apply(&p).chart().iter().zip(direct.chart()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(g.power(2).apply(&p).chart(), gg.apply(&p).chart());
    }

    #[test]
    fn rejects_bad_actions() {
        let space = SpaceSpec::<f64>::new(vec![FactorSpec::Horn, FactorSpec::Euclidean { dim: 2 }]).unwrap();
        let wrong_kind = Isometry::new(vec![FactorAction::Mobius { m: [[1.0, 0.0], [0.0, 1.0]] }, FactorAction::Identity]);
        assert!(wrong_kind.validate(&space).is_err());
        let not_orth = Isometry::new(vec![
            FactorAction::Identity,
            FactorAction::Euclid { q: vec![vec![2.0, 0.0], vec![0.0, 1.0]], t: vec![0.0, 0.0] },
        ]);
        assert!(not_orth.validate(&space).is_err());
        let swap = Isometry::new(vec![FactorAction::Identity, FactorAction::Identity]).with_permutation(vec![1, 0]);
        assert!(swap.validate(&space).is_err());
    }

    #[test]
    fn metric_is_preserved() {
        let space = SpaceSpec::new(vec![FactorSpec::Horn, FactorSpec::HyperbolicPlane, FactorSpec::Euclidean { dim: 2 }]).unwrap();
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let iso = Isometry::new(vec![
            FactorAction::HornReflect { a: 0.3 },
            FactorAction::Mobius { m: [[5.0, 3.0], [3.0, 2.0]] },
            FactorAction::Euclid { q: vec![vec![c, -c], vec![c, c]], t: vec![1.0, -2.0] },
        ]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chk = check_isometry(&space, &iso, 50, &mut rng).unwrap();
        assert!(chk.max_metric_error < 1e-9, "{chk:?}");
        assert!(chk.max_distance_error < 1e-8, "{chk:?}");
    }
}
