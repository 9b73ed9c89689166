use hornlab::actions::*;
use hornlab::geodesic::distance;
use hornlab::hyperbolic::Mobius;
use hornlab::isometry::{random_point, FactorAction, Isometry};
use hornlab::paths::{DiscretePath, FlowOptions};
use hornlab::{Block, CompletionPoint, FactorSpec, SpaceSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mobius(a: f64, b: f64, c: f64, d: f64) -> FactorAction<f64> {
    FactorAction::Mobius { m: [[a, b], [c, d]] }
}

fn z4() -> Isometry<f64> {
    Isometry::new(vec![mobius(2.0, 0.0, 0.0, 0.5)])
}

fn partner() -> Isometry<f64> {
    Isometry::new(vec![mobius(5.0, 3.0, 3.0, 2.0)])
}

fn hpt(x: f64, y: f64) -> CompletionPoint {
    CompletionPoint::new(vec![Block::coords(vec![x, y])])
}

/// Equivariant seed under z ↦ 4z at hyperbolic distance `r` from the
/// imaginary axis, starting at height `y0`.
fn seed(r: f64, y0: f64, n: usize) -> DiscretePath<f64> {
    let nodes = (0..n)
        .map(|k| {
            let y = y0 * 4f64.powf(k as f64 / n as f64);
            hpt(r.sinh() * y, y)
        })
        .collect();
    DiscretePath::equivariant(SpaceSpec::hyperbolic(), nodes, z4()).unwrap()
}

/// Closed-form displacement of z ↦ e^L z at distance D from its axis.
fn growth_oracle(l: f64, d: f64) -> f64 {
    2.0 * (d.cosh() * (l / 2.0).sinh()).asinh()
}

#[test]
fn conjugation_invariance() {
    let h = partner();
    let g = z4();
    let c = h.compose(&g).compose(&h.inverse());
    let space = SpaceSpec::hyperbolic();
    let b = SearchBudget::default();
    let (lg, lc) = (translation_length(&space, &g, &b).unwrap(), translation_length(&space, &c, &b).unwrap());
    assert!((lg.l_estimate - lc.l_estimate).abs() <= 1e-6, "{} {}", lg.l_estimate, lc.l_estimate);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let p = random_point(&space, &mut rng, 1.0);
        let a = displacement(&space, &g, &p).unwrap();
        let z = displacement(&space, &c, &h.apply(&p)).unwrap();
        assert!((a - z).abs() <= 1e-9 * a.max(1.0), "{a} {z}");
    }

    let space = SpaceSpec::new(vec![FactorSpec::Horn, FactorSpec::Euclidean { dim: 2 }]).unwrap();
    let g = Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }, euclid_translation(vec![2.0, 0.0])]);
    let h = Isometry::new(vec![
        FactorAction::HornReflect { a: 0.3 },
        FactorAction::Euclid { q: vec![vec![0.6, -0.8], vec![0.8, 0.6]], t: vec![1.0, 1.0] },
    ]);
    let c = h.compose(&g).compose(&h.inverse());
    let (lg, lc) = (translation_length(&space, &g, &b).unwrap(), translation_length(&space, &c, &b).unwrap());
    assert!((lg.l_estimate - lc.l_estimate).abs() <= 1e-6);
    for _ in 0..50 {
        let p = random_point(&space, &mut rng, 1.0);
        let a = displacement(&space, &g, &p).unwrap();
        let z = displacement(&space, &c, &h.apply(&p)).unwrap();
        assert!((a - z).abs() <= 1e-9 * a.max(1.0));
    }
}

#[test]
fn classification_witnesses() {
    let b = SearchBudget::default();
    let c = classify(&SpaceSpec::horn(), &Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }]), &b).unwrap();
    assert_eq!(c.class, IsometryClass::StrictlyPseudoperiodic);
    assert!(c.l_estimate < L_TOL && !c.attained);
    let esc = &c.escaping_sequence;
    assert!(!esc.is_empty());
    let last = esc.last().unwrap();
    assert!(last.min_xi.unwrap() < esc[0].min_xi.unwrap());

    let c = classify(&SpaceSpec::hyperbolic(), &z4(), &b).unwrap();
    assert_eq!(c.class, IsometryClass::PseudoAnosov);
    let w = c.witness.chart();
    assert!((w[0] / w[1]).abs() < 1e-4, "witness {w:?} off the imaginary axis");
}

#[test]
fn axis_of_z4_is_unique_modulo_shift() {
    let opts = AxisOptions { l_estimate: Some(4f64.ln()), check_hartman: true, ..Default::default() };
    let a = axis(&seed(0.5, 1.0, 16), &opts).unwrap();
    let b = axis(&seed(-0.5, 1.7, 16), &opts).unwrap();
    for ax in [&a, &b] {
        assert!((ax.period_length - 4f64.ln()).abs() <= 1e-4);
        assert!(ax.hartman.as_ref().unwrap().monotone);
        // the true axis is the imaginary axis
        for p in &ax.path.nodes {
            let c = p.chart();
            assert!((c[0] / c[1]).asinh().abs() <= 1e-6, "{c:?}");
        }
    }
    // compare b with a reparameterized by the best shift along the axis
    let l = a.period_length;
    let s0 = hornlab::optimize::golden_min(|s| distance(&a.path.space, &a.at(s).unwrap(), &b.path.nodes[0]).unwrap(), -l, l, 1e-12).0;
    let n = b.path.n();
    let sup = (0..=n)
        .map(|i| {
            let t = s0 + l * i as f64 / n as f64;
            distance(&a.path.space, &a.at(t).unwrap(), &b.path.nodes[i]).unwrap()
        })
        .fold(0.0, f64::max);
    assert!(sup <= 1e-5, "sup distance {sup}");
}

#[test]
fn axis_is_invariant_under_its_shift() {
    let a = axis(&seed(0.5, 1.0, 16), &AxisOptions::default()).unwrap();
    let g = &a.shift;
    let n = a.path.n();
    let l = a.period_length;
    for i in 0..=n {
        let t = l * i as f64 / n as f64;
        let moved = g.apply(&a.path.nodes[i]);
        let d = distance(&a.path.space, &moved, &a.at(t + l).unwrap()).unwrap();
        assert!(d <= 1e-8, "{i}: {d}");
    }
}

#[test]
fn axis_seeded_on_axis_needs_no_work() {
    let a = axis(&seed(0.0, 1.0, 16), &AxisOptions::default()).unwrap();
    assert!(a.report.iterations <= 2, "{}", a.report.iterations);
    assert!((a.period_length - 4f64.ln()).abs() <= 1e-12);
}

#[test]
fn product_axis_length() {
    let space = SpaceSpec::new(vec![FactorSpec::HyperbolicPlane, FactorSpec::Euclidean { dim: 1 }]).unwrap();
    let g = Isometry::new(vec![mobius(2.0, 0.0, 0.0, 0.5), euclid_translation(vec![3.0])]);
    let nodes = (0..8)
        .map(|k| {
            let f = k as f64 / 8.0;
            let y = 4f64.powf(f);
            CompletionPoint::new(vec![Block::coords(vec![0.3 * y, y]), Block::coords(vec![3.0 * f + 0.2 * (k % 2) as f64])])
        })
        .collect();
    let seed = DiscretePath::equivariant(space, nodes, g).unwrap();
    let a = axis(&seed, &AxisOptions { flow: FlowOptions::default(), ..Default::default() }).unwrap();
    let want = (4f64.ln().powi(2) + 9.0).sqrt();
    assert!((a.period_length - want).abs() <= 1e-4, "{} {want}", a.period_length);
}

#[test]
fn displacement_grows_like_the_hyperbolic_identity() {
    let a = axis(&seed(0.5, 1.0, 16), &AxisOptions::default()).unwrap();
    let grid: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    let r = displacement_growth(&a, &grid).unwrap();
    let l = 4f64.ln();
    for row in &r.rows {
        assert!((row.f - growth_oracle(l, row.d)).abs() <= 1e-3, "{row:?}");
    }
    assert!((r.rows[3].f - 5.438300).abs() <= 1e-3);
    assert!(r.increasing && r.convex);
    let r = displacement_growth(&a, &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    assert!(r.epsilon >= 1.9, "{r:?}");
    for row in &r.rows {
        assert!(row.f >= r.epsilon * (row.d - r.t0) - 1e-12);
    }
}

/// Brute-force m(R) over |t| + |s| = R with closed-form hyperbolic distance.
fn brute_divergence(a: &GeodesicLine<f64>, b: &GeodesicLine<f64>, r: f64) -> f64 {
    let k = 20_000;
    let mut best = f64::INFINITY;
    for i in 0..=k {
        let t = -r + 2.0 * r * i as f64 / k as f64;
        for s in [r - t.abs(), -(r - t.abs())] {
            let p = a.at(t).unwrap().chart();
            let q = b.at(s).unwrap().chart();
            best = best.min(hornlab::hyperbolic::distance(p[0], p[1], q[0], q[1]));
        }
    }
    best
}

#[test]
fn independent_axes_diverge() {
    let a1 = GeodesicLine::mobius_axis(&Mobius::new(2.0, 0.0, 0.0, 0.5).unwrap()).unwrap();
    let a2 = GeodesicLine::mobius_axis(&Mobius::new(5.0, 3.0, 3.0, 2.0).unwrap()).unwrap();
    let grid: Vec<f64> = (2..=10).map(f64::from).collect();
    let p = divergence_profile(&a1, &a2, &grid).unwrap();
    for w in p.rows.windows(2) {
        assert!(w[1].m > w[0].m, "{:?}", p.rows);
    }
    assert!(p.rows.last().unwrap().m > p.rows[0].m + 1.0);
    assert!(p.rows.iter().find(|r| r.r == 6.0).unwrap().m > 1.0);
    for row in &p.rows {
        let oracle = brute_divergence(&a1, &a2, row.r);
        assert!(row.m <= oracle + 1e-9 && oracle - row.m <= 1e-3, "R={} m={} oracle={oracle}", row.r, row.m);
    }

    let same = divergence_profile(&a1, &a1, &grid).unwrap();
    assert!(same.rows.iter().all(|r| r.m <= 1e-9));
}

#[test]
fn crossing_lines_diverge_linearly() {
    let space = SpaceSpec::euclidean(2);
    let origin = CompletionPoint::new(vec![Block::coords(vec![0.0, 0.0])]);
    let phi: f64 = 0.7;
    let l1 = GeodesicLine::new(space.clone(), origin.clone(), vec![1.0, 0.0]).unwrap();
    let l2 = GeodesicLine::new(space, origin, vec![phi.cos(), phi.sin()]).unwrap();
    let p = divergence_profile(&l1, &l2, &[1.0, 2.0, 4.0, 8.0]).unwrap();
    // min of |t u − s v| on |t| + |s| = R: R·|u − v|/2 at t = s = R/2, or
    // R·|u + v|/2 for opposite signs
    let c = ((1.0 - phi.cos()) / 2.0).sqrt().min(((1.0 + phi.cos()) / 2.0).sqrt());
    for row in &p.rows {
        assert!((row.m - c * row.r).abs() <= 1e-6, "{row:?} {}", c * row.r);
    }
}

#[test]
fn properness_of_generator_sets() {
    let h = SpaceSpec::hyperbolic();
    let m_grid = [2.0, 3.0, 4.0];
    let r = properness_probe(&h, &[z4(), partner()], &m_grid, &ProperOptions::default()).unwrap();
    assert!(!r.unbounded_evidence, "{r:?}");
    for row in &r.rows {
        assert!(!row.unbounded && (row.empty || row.radius.unwrap() < 50.0), "{row:?}");
    }
    let radii: Vec<f64> = r.rows.iter().filter_map(|row| row.radius).collect();
    assert!(radii.windows(2).all(|w| w[1] >= w[0]));

    let r = properness_probe(&h, &[z4()], &m_grid, &ProperOptions::default()).unwrap();
    assert!(r.unbounded_evidence);
    assert!((r.min_delta - 4f64.ln()).abs() <= 1e-6);

    let e = SpaceSpec::euclidean(2);
    let r = properness_probe(&e, &[Isometry::new(vec![euclid_translation(vec![3.0, 4.0])])], &[5.0], &ProperOptions::default())
        .unwrap();
    assert!(r.unbounded_evidence);
    assert!(properness_probe(&e, &[], &[5.0], &ProperOptions::default()).is_err());
}

#[test]
fn horn_times_hyperbolic_classification() {
    let space = SpaceSpec::new(vec![FactorSpec::Horn, FactorSpec::HyperbolicPlane]).unwrap();
    let g = Isometry::new(vec![FactorAction::HornTranslate { a: 1.0 }, mobius(2.0, 0.0, 0.0, 0.5)]);
    let c = classify(&space, &g, &SearchBudget::default()).unwrap();
    assert_eq!(c.class, IsometryClass::ReducibleNotPseudoperiodic, "{c:?}");
    assert!((c.l_estimate - 4f64.ln()).abs() <= 1e-6);
}
