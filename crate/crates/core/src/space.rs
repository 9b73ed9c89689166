//! Product model spaces and points of their metric completion.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::scalar::Real;

/// Below this value a horn coordinate ξ is identified with the boundary point.
pub const XI_SNAP: f64 = 1e-7;

/// One factor of a product model space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactorSpec<T> {
    /// Half-plane `ξ > 0` with `4dξ² + ξ⁶dθ²`, completed by one boundary point.
    Horn,
    /// Upper half-plane `(x, y)`, `y > 0`, curvature −1.
    #[serde(rename = "hyperbolic")]
    HyperbolicPlane,
    Euclidean { dim: usize },
    /// Diagonal horn with leading coefficient `B` and higher-order amplitudes.
    PerturbedHorn {
        #[serde(rename = "B")]
        b: T,
        a4: T,
        b3: T,
        c6: T,
    },
}

impl<T: Real> FactorSpec<T> {
    /// Chart dimension of the factor.
    pub fn dim(&self) -> usize {
        match self {
            FactorSpec::Euclidean { dim } => *dim,
            _ => 2,
        }
    }

    /// Horn-type factors carry a boundary point.
    pub fn is_horn(&self) -> bool {
        matches!(self, FactorSpec::Horn | FactorSpec::PerturbedHorn { .. })
    }

    fn validate(&self, index: usize) -> Result<()> {
        match self {
            FactorSpec::Euclidean { dim } if *dim == 0 => Err(GeometryError::InvalidSpace(format!(
                "factor {index}: euclidean dimension must be positive"
            ))),
            FactorSpec::PerturbedHorn { b, a4, b3, c6 } => {
                if !(b.is_finite() && a4.is_finite() && b3.is_finite() && c6.is_finite()) {
                    return Err(GeometryError::InvalidSpace(format!(
                        "factor {index}: perturbed horn coefficients must be finite"
                    )));
                }
                if *b <= T::zero() {
                    return Err(GeometryError::InvalidSpace(format!(
                        "factor {index}: B must be positive"
                    )));
                }
                if *a4 < T::zero() || *b3 < T::zero() || *c6 < T::zero() {
                    return Err(GeometryError::InvalidSpace(format!(
                        "factor {index}: perturbation amplitudes must be nonnegative"
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Ordered list of factors defining `H̄^k × (flat and hyperbolic factors)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec<T> {
    pub factors: Vec<FactorSpec<T>>,
}

impl<T: Real> SpaceSpec<T> {
    pub fn new(factors: Vec<FactorSpec<T>>) -> Result<Self> {
        let space = SpaceSpec { factors };
        space.validate()?;
        Ok(space)
    }

    pub fn horn() -> Self {
        SpaceSpec { factors: vec![FactorSpec::Horn] }
    }

    pub fn hyperbolic() -> Self {
        SpaceSpec { factors: vec![FactorSpec::HyperbolicPlane] }
    }

    pub fn euclidean(dim: usize) -> Self {
        SpaceSpec { factors: vec![FactorSpec::Euclidean { dim }] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.is_empty() {
            return Err(GeometryError::InvalidSpace("at least one factor is required".into()));
        }
        for (i, f) in self.factors.iter().enumerate() {
            f.validate(i)?;
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let space: Self = serde_json::from_str(s)?;
        space.validate()?;
        Ok(space)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("space serializes")
    }

    /// Total chart dimension.
    pub fn dim(&self) -> usize {
        self.factors.iter().map(FactorSpec::dim).sum()
    }

    /// Chart coordinate offset of each factor.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = Vec::with_capacity(self.factors.len());
        let mut acc = 0;
        for f in &self.factors {
            off.push(acc);
            acc += f.dim();
        }
        off
    }

    pub fn horn_indices(&self) -> Vec<usize> {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| f.is_horn())
            .map(|(i, _)| i)
            .collect()
    }

    /// The perturbed-horn `b3` amplitude couples ξ with the first coordinate of
    /// the first Euclidean factor; when any such coupling is active the metric
    /// is no longer a Riemannian product.
    pub fn coupling(&self) -> Option<Coupling<T>> {
        let euclid = self
            .factors
            .iter()
            .position(|f| matches!(f, FactorSpec::Euclidean { .. }))?;
        let pairs: Vec<(usize, T)> = self
            .factors
            .iter()
            .enumerate()
            .filter_map(|(i, f)| match f {
                FactorSpec::PerturbedHorn { b3, .. } if *b3 > T::zero() => Some((i, *b3)),
                _ => None,
            })
            .collect();
        if pairs.is_empty() {
            None
        } else {
            Some(Coupling { euclid_factor: euclid, horns: pairs })
        }
    }

    pub fn is_product(&self) -> bool {
        self.coupling().is_none()
    }
}

/// Active `b3` cross terms of a space.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    pub euclid_factor: usize,
    /// `(perturbed horn factor index, b3)`.
    pub horns: Vec<(usize, T)>,
}

/// State of a horn factor in the completion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HornBlock<T> {
    Interior { theta: T, xi: T },
    Boundary,
}

impl<T: Real> HornBlock<T> {
    /// Snaps tiny ξ to the boundary point.
    pub fn canonical(self) -> Self {
        match self {
            HornBlock::Interior { xi, .. } if xi < T::lit(XI_SNAP) => HornBlock::Boundary,
            other => other,
        }
    }

    pub fn xi(&self) -> T {
        match self {
            HornBlock::Interior { xi, .. } => *xi,
            HornBlock::Boundary => T::zero(),
        }
    }

    pub fn is_boundary(&self) -> bool {
        matches!(self, HornBlock::Boundary)
    }
}

/// Per-factor coordinates of a completion point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Block<T> {
    Horn(HornBlock<T>),
    Coords { coords: Vec<T> },
}

impl<T: Real> Block<T> {
    pub fn interior(theta: T, xi: T) -> Self {
        Block::Horn(HornBlock::Interior { theta, xi }.canonical())
    }

    pub fn boundary() -> Self {
        Block::Horn(HornBlock::Boundary)
    }

    pub fn coords(c: Vec<T>) -> Self {
        Block::Coords { coords: c }
    }

    pub fn as_horn(&self) -> Option<&HornBlock<T>> {
        match self {
            Block::Horn(h) => Some(h),
            _ => None,
        }
    }

    pub fn as_coords(&self) -> Option<&[T]> {
        match self {
            Block::Coords { coords } => Some(coords),
            _ => None,
        }
    }
}

/// A point of the completed product space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionPoint<T> {
    pub blocks: Vec<Block<T>>,
}

impl<T: Real> CompletionPoint<T> {
    pub fn new(blocks: Vec<Block<T>>) -> Self {
        CompletionPoint { blocks }.canonical()
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        Ok(p.canonical())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("point serializes")
    }

    /// Canonical representative: horn blocks below the snap threshold become
    /// the boundary point.
    pub fn canonical(mut self) -> Self {
        for b in &mut self.blocks {
            if let Block::Horn(h) = b {
                *h = h.canonical();
            }
        }
        self
    }

    /// Horn factor indices in the boundary state. Its size `k` labels the
    /// stratum `Δ̇_k` containing the point.
    pub fn stratum(&self) -> BTreeSet<usize> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, Block::Horn(HornBlock::Boundary)))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_interior(&self) -> bool {
        self.stratum().is_empty()
    }

    /// Checks the point against a space and returns its canonical form.
    pub fn validated(&self, space: &SpaceSpec<T>) -> Result<Self> {
        if self.blocks.len() != space.factors.len() {
            return Err(GeometryError::InvalidPoint(format!(
                "{} blocks for {} factors",
                self.blocks.len(),
                space.factors.len()
            )));
        }
        for (i, (b, f)) in self.blocks.iter().zip(&space.factors).enumerate() {
            match (f, b) {
                (FactorSpec::Horn | FactorSpec::PerturbedHorn { .. }, Block::Horn(h)) => {
                    if let HornBlock::Interior { theta, xi } = h {
                        if !theta.is_finite() || !xi.is_finite() {
                            return Err(GeometryError::InvalidPoint(format!(
                                "block {i}: non-finite horn coordinates"
                            )));
                        }
                        if *xi <= T::zero() {
                            return Err(GeometryError::InvalidPoint(format!(
                                "block {i}: interior horn block needs xi > 0"
                            )));
                        }
                    }
                }
                (FactorSpec::HyperbolicPlane, Block::Coords { coords }) => {
                    if coords.len() != 2 {
                        return Err(GeometryError::InvalidPoint(format!(
                            "block {i}: hyperbolic block needs 2 coordinates"
                        )));
                    }
                    if !(coords[1] > T::zero()) || !coords[0].is_finite() || !coords[1].is_finite() {
                        return Err(GeometryError::InvalidPoint(format!(
                            "block {i}: hyperbolic block needs finite x and y > 0"
                        )));
                    }
                }
                (FactorSpec::Euclidean { dim }, Block::Coords { coords }) => {
                    if coords.len() != *dim {
                        return Err(GeometryError::InvalidPoint(format!(
                            "block {i}: euclidean block needs {dim} coordinates"
                        )));
                    }
                    if coords.iter().any(|c| !c.is_finite()) {
                        return Err(GeometryError::InvalidPoint(format!(
                            "block {i}: non-finite coordinates"
                        )));
                    }
                }
                _ => {
                    return Err(GeometryError::InvalidPoint(format!(
                        "block {i} does not match factor kind"
                    )))
                }
            }
        }
        Ok(self.clone().canonical())
    }

    /// Flat chart coordinates; boundary horn blocks report `(0, 0)`.
    pub fn chart(&self) -> Vec<T> {
        let mut out = Vec::new();
        for b in &self.blocks {
            match b {
                Block::Horn(HornBlock::Interior { theta, xi }) => {
                    out.push(*theta);
                    out.push(*xi);
                }
                Block::Horn(HornBlock::Boundary) => {
                    out.push(T::zero());
                    out.push(T::zero());
                }
                Block::Coords { coords } => out.extend_from_slice(coords),
            }
        }
        out
    }

    /// Rebuilds a point from flat chart coordinates.
    pub fn from_chart(space: &SpaceSpec<T>, x: &[T]) -> Self {
        let mut blocks = Vec::with_capacity(space.factors.len());
        let mut k = 0;
        for f in &space.factors {
            let d = f.dim();
            let c = &x[k..k + d];
            blocks.push(if f.is_horn() {
                Block::interior(c[0], c[1])
            } else {
                Block::coords(c.to_vec())
            });
            k += d;
        }
        CompletionPoint { blocks }
    }

    /// Minimum ξ over horn factors, `None` if the space has no horn.
    pub fn min_xi(&self) -> Option<T> {
        self.blocks
            .iter()
            .filter_map(|b| b.as_horn().map(HornBlock::xi))
            .fold(None, |acc: Option<T>, x| Some(acc.map_or(x, |a| a.min(x))))
    }
}

/// Velocity in the flat chart coordinates of a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentVector<T> {
    pub components: Vec<T>,
}

impl<T: Real> TangentVector<T> {
    pub fn new(components: Vec<T>) -> Self {
        TangentVector { components }
    }

    pub fn scaled(&self, s: T) -> Self {
        TangentVector { components: self.components.iter().map(|c| *c * s).collect() }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| *c == T::zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn space_json_round_trip_matches_documented_layout() {
        let json = r#"{"factors":[{"kind":"horn"},{"kind":"hyperbolic"},{"kind":"euclidean","dim":2},{"kind":"perturbed_horn","B":1.0,"a4":0.1,"b3":0.0,"c6":0.05}]}"#;
        let space = SpaceSpec::<f64>::from_json(json).unwrap();
        assert_eq!(space.factors.len(), 4);
        assert_eq!(space.dim(), 8);
        assert_eq!(space.offsets(), vec![0, 2, 4, 6]);
        assert_eq!(space.to_json(), json);
        assert!(space.is_product());
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(SpaceSpec::<f64>::new(vec![]).is_err());
        assert!(SpaceSpec::<f64>::new(vec![FactorSpec::Euclidean { dim: 0 }]).is_err());
        let bad_b = FactorSpec::PerturbedHorn { b: 0.0, a4: 0.0, b3: 0.0, c6: 0.0 };
        assert!(SpaceSpec::<f64>::new(vec![bad_b]).is_err());
        let nan = FactorSpec::PerturbedHorn { b: 1.0, a4: f64::NAN, b3: 0.0, c6: 0.0 };
        assert!(SpaceSpec::<f64>::new(vec![nan]).is_err());
    }

    #[test]
    fn point_json_and_stratum() {
        let json = r#"{"blocks":[{"kind":"interior","theta":2.0,"xi":0.5},{"kind":"boundary"},{"coords":[1.0,2.0]}]}"#;
        let p = CompletionPoint::<f64>::from_json(json).unwrap();
        assert_eq!(p.stratum(), BTreeSet::from([1]));
        assert_eq!(p.to_json(), json);
        let space = SpaceSpec::new(vec![
            FactorSpec::Horn,
            FactorSpec::Horn,
            FactorSpec::Euclidean { dim: 2 },
        ])
        .unwrap();
        assert!(p.validated(&space).is_ok());
        assert!(p.validated(&SpaceSpec::horn()).is_err());
    }

    #[test]
    fn tiny_xi_snaps_to_boundary() {
        let p = CompletionPoint::new(vec![Block::interior(3.0, 1e-9)]);
        assert_eq!(p.blocks[0], Block::boundary());
        assert_eq!(p.stratum().len(), 1);
        let q = CompletionPoint::new(vec![Block::interior(3.0, 2e-7)]);
        assert!(q.is_interior());
    }

    #[test]
    fn hyperbolic_point_needs_positive_y() {
        let space = SpaceSpec::<f64>::hyperbolic();
        let p = CompletionPoint::new(vec![Block::coords(vec![0.0, -1.0])]);
        assert!(p.validated(&space).is_err());
    }

    #[test]
    fn coupling_detected_only_with_euclidean_factor() {
        let ph = FactorSpec::PerturbedHorn { b: 1.0, a4: 0.0, b3: 0.2, c6: 0.0 };
        let alone = SpaceSpec::new(vec![ph.clone()]).unwrap();
        assert!(alone.is_product());
        let coupled = SpaceSpec::new(vec![ph, FactorSpec::Euclidean { dim: 1 }]).unwrap();
        let c = coupled.coupling().unwrap();
        assert_eq!(c.euclid_factor, 1);
        assert_eq!(c.horns, vec![(0, 0.2)]);
    }
}
