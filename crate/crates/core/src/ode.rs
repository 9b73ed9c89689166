//! Dormand–Prince 5(4) embedded Runge–Kutta integration.

use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct OdeOptions<T> {
    pub atol: T,
    pub rtol: T,
    pub h_max: T,
    pub h_min: T,
    pub max_steps: usize,
}

impl<T: Real> Default for OdeOptions<T> {
    fn default() -> Self {
        OdeOptions {
            atol: T::lit(1e-10),
            rtol: T::lit(1e-12),
            h_max: T::lit(0.05),
            h_min: T::lit(1e-14),
            max_steps: 1_000_000,
        }
    }
}

/// What the observer wants after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeOutcome<T> {
    /// Reached the requested end time.
    Finished,
    /// The observer stopped the integration at time `t`.
    Stopped(T),
    /// Step size fell below `h_min` or the budget ran out.
    Failed { t: T, steps: usize, reason: String },
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`.
///
/// `ceiling(y)` caps the step size from the current state and `observe`
/// sees every accepted `(t, y)`. A right-hand side returning non-finite
/// values rejects the step.
pub fn dopri5<T, F, H, O>(
    mut f: F,
    t0: T,
    y0: &[T],
    t1: T,
    opts: &OdeOptions<T>,
    mut ceiling: H,
    mut observe: O,
) -> (Vec<T>, OdeOutcome<T>)
where
    T: Real,
    F: FnMut(T, &[T]) -> Option<Vec<T>>,
    H: FnMut(&[T]) -> T,
    O: FnMut(T, &[T]) -> Control,
{
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut h = opts.h_max.min(ceiling(&y)).min(t1 - t0);
    let mut steps = 0usize;
    let Some(first) = f(t, &y) else {
        return (y, OdeOutcome::Failed { t, steps, reason: "right-hand side undefined at start".into() });
    };
    let mut k: Vec<Vec<T>> = vec![first];
    let lit = |v: f64| T::lit(v);
    while t < t1 {
        if steps >= opts.max_steps {
            return (y, OdeOutcome::Failed { t, steps, reason: "step budget exhausted".into() });
        }
        let cap = opts.h_max.min(ceiling(&y));
        h = h.min(cap).min(t1 - t);
        if h < opts.h_min {
            return (y, OdeOutcome::Failed { t, steps, reason: format!("step size underflow (h = {h:e})") });
        }
        k.truncate(1);
        let mut ok = true;
        for s in 1..7 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = lit(A[s][j]);
                if a != T::zero() {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            match f(t + lit(C[s]) * h, &ys) {
                Some(ks) if ks.iter().all(|v| v.is_finite()) => k.push(ks),
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            h = h * lit(0.25);
            continue;
        }
        let mut y5 = y.clone();
        let mut err = T::zero();
        for i in 0..n {
            let mut d5 = T::zero();
            let mut d4 = T::zero();
            for s in 0..7 {
                d5 += lit(B5[s]) * k[s][i];
                d4 += lit(B4[s]) * k[s][i];
            }
            y5[i] += h * d5;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            let e = h * (d5 - d4) / sc;
            err += e * e;
        }
        err = (err / T::from_usize_lossy(n)).sqrt();
        if err <= T::one() {
            t += h;
            y = y5;
            steps += 1;
            // First-same-as-last: stage 7 is f at the new point.
            let last = k.pop().expect("seven stages");
            k.clear();
            k.push(last);
            let fac = if err == T::zero() { lit(5.0) } else { (lit(0.9) * err.powf(lit(-0.2))).min(lit(5.0)) };
            h = h * fac;
            if observe(t, &y) == Control::Stop {
                return (y, OdeOutcome::Stopped(t));
            }
        } else {
            let fac = (lit(0.9) * err.powf(lit(-0.2))).max(lit(0.1));
            h = h * fac;
        }
    }
    (y, OdeOutcome::Finished)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_oscillator_energy() {
        let opts = OdeOptions::<f64>::default();
        let (y, out) = dopri5(
            |_, y| Some(vec![y[1], -y[0]]),
            0.0,
            &[1.0, 0.0],
            10.0,
            &opts,
            |_| f64::INFINITY,
            |_, _| Control::Continue,
        );
        assert_eq!(out, OdeOutcome::Finished);
        assert!((y[0] - 10f64.cos()).abs() < 1e-9);
        assert!((y[1] + 10f64.sin()).abs() < 1e-9);
    }

    #[test]
    fn observer_can_stop() {
        let opts = OdeOptions::<f64>::default();
        let (y, out) = dopri5(
            |_, _| Some(vec![-1.0]),
            0.0,
            &[1.0],
            5.0,
            &opts,
            |_| 0.01,
            |_, y| if y[0] < 0.5 { Control::Stop } else { Control::Continue },
        );
        assert!(matches!(out, OdeOutcome::Stopped(_)));
        assert!(y[0] < 0.5 && y[0] > 0.48);
    }
}
