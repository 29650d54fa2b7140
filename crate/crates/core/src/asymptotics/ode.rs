//! Dormand–Prince 5(4) integrator for autonomous systems with a norm-based
//! blow-up event.

use crate::{Error, Result};

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Blow-up is declared once the monitored norm reaches this value.
    pub blowup_threshold: f64,
    pub max_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeOutcome {
    Completed { state: Vec<f64> },
    /// The monitored norm crossed the threshold at `x`.
    BlowUp { x: f64, state: Vec<f64> },
}

/// Summary of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeRun {
    pub outcome: OdeOutcome,
    /// Largest monitored norm at accepted step ends.
    pub sup_norm: f64,
    pub steps: usize,
}

fn step(
    f: &dyn Fn(&[f64], &mut [f64]),
    y: &[f64],
    h: f64,
    k: &mut [Vec<f64>; 7],
    tmp: &mut [f64],
    y5: &mut [f64],
    err: &mut [f64],
) {
    let n = y.len();
    f(y, &mut k[0]);
    for s in 1..7 {
        let (done, rest) = k.split_at_mut(s);
        for i in 0..n {
            tmp[i] = y[i] + h * done.iter().zip(A[s]).map(|(kj, a)| a * kj[i]).sum::<f64>();
        }
        f(tmp, &mut rest[0]);
    }
    for i in 0..n {
        let a5: f64 = (0..7).map(|s| B5[s] * k[s][i]).sum();
        let a4: f64 = (0..7).map(|s| B4[s] * k[s][i]).sum();
        y5[i] = y[i] + h * a5;
        err[i] = h * (a5 - a4);
    }
}

fn scaled_error(y: &[f64], y5: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let mut e = 0.0f64;
    for i in 0..y.len() {
        if !y5[i].is_finite() {
            return f64::INFINITY;
        }
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y5[i].abs());
        e = e.max((err[i] / sc).abs());
    }
    e
}

/// Integrates `y' = f(y)` from `x0` to `x1` (either direction).
///
/// `norm(y)` is monitored; when it reaches `opts.blowup_threshold` (or the
/// state becomes non-finite) the crossing is located by bisecting the size
/// of the last step.
pub fn integrate(
    f: &dyn Fn(&[f64], &mut [f64]),
    norm: &dyn Fn(&[f64]) -> f64,
    x0: f64,
    x1: f64,
    y0: &[f64],
    opts: &OdeOptions,
) -> Result<OdeRun> {
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut sup = norm(&y);
    if x0 == x1 {
        return Ok(OdeRun {
            outcome: OdeOutcome::Completed { state: y },
            sup_norm: sup,
            steps: 0,
        });
    }
    let dir = (x1 - x0).signum();
    let span = (x1 - x0).abs();
    let mut k: [Vec<f64>; 7] = std::array::from_fn(|_| vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    let mut y5 = vec![0.0; n];
    let mut err = vec![0.0; n];
    let mut x = x0;
    let mut h = (span * 1e-3).min(1e-2);
    let min_h = span * 1e-14;
    let mut steps = 0;
    loop {
        if steps >= opts.max_steps {
            return Err(Error::IntegrationFailure {
                tau: x,
                reason: format!("exceeded {} steps", opts.max_steps),
                last_state: y,
            });
        }
        let remaining = (x1 - x).abs();
        let last = h >= remaining;
        let hh = if last { remaining } else { h };
        step(f, &y, dir * hh, &mut k, &mut tmp, &mut y5, &mut err);
        let e = scaled_error(&y, &y5, &err, opts);
        if e <= 1.0 && norm(&y5) >= opts.blowup_threshold {
            // Largest sub-step that stays below the threshold.
            let (mut lo, mut hi) = (0.0, hh);
            while hi - lo > 1e-15 * (1.0 + x.abs()) {
                let mid = 0.5 * (lo + hi);
                step(f, &y, dir * mid, &mut k, &mut tmp, &mut y5, &mut err);
                if y5.iter().all(|v| v.is_finite()) && norm(&y5) < opts.blowup_threshold {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            step(f, &y, dir * hi, &mut k, &mut tmp, &mut y5, &mut err);
            return Ok(OdeRun {
                outcome: OdeOutcome::BlowUp {
                    x: x + dir * hi,
                    state: y5,
                },
                sup_norm: opts.blowup_threshold,
                steps,
            });
        }
        if e <= 1.0 {
            x = if last { x1 } else { x + dir * hh };
            y.copy_from_slice(&y5);
            sup = sup.max(norm(&y));
            steps += 1;
            if last {
                return Ok(OdeRun {
                    outcome: OdeOutcome::Completed { state: y },
                    sup_norm: sup,
                    steps,
                });
            }
        }
        let fac = if e == 0.0 { 5.0 } else { (0.9 * e.powf(-0.2)).clamp(0.2, 5.0) };
        h = hh * fac;
        if h < min_h {
            if norm(&y) >= 1e-3 * opts.blowup_threshold {
                return Ok(OdeRun {
                    outcome: OdeOutcome::BlowUp { x, state: y },
                    sup_norm: sup,
                    steps,
                });
            }
            return Err(Error::IntegrationFailure {
                tau: x,
                reason: format!("step size underflow (h = {h:e})"),
                last_state: y,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OdeOptions {
        OdeOptions {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            blowup_threshold: 1e8,
            max_steps: 100_000,
        }
    }

    fn l2(y: &[f64]) -> f64 {
        y.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[test]
    fn exponential_decay() {
        let f = |y: &[f64], d: &mut [f64]| d[0] = -y[0];
        let r = integrate(&f, &l2, 0.0, 3.0, &[1.0], &opts()).unwrap();
        match r.outcome {
            OdeOutcome::Completed { state } => assert!((state[0] - (-3f64).exp()).abs() < 1e-10),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn backward_harmonic_oscillator() {
        let f = |y: &[f64], d: &mut [f64]| {
            d[0] = y[1];
            d[1] = -y[0];
        };
        let r = integrate(&f, &l2, 0.0, -5.0, &[1.0, 0.0], &opts()).unwrap();
        match r.outcome {
            OdeOutcome::Completed { state } => {
                assert!((state[0] - 5f64.cos()).abs() < 1e-9);
                assert!((state[1] - 5f64.sin()).abs() < 1e-9);
            }
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn riccati_blowup_is_bracketed() {
        // y' = y², y(0) = 1 blows up at x = 1.
        let f = |y: &[f64], d: &mut [f64]| d[0] = y[0] * y[0];
        let r = integrate(&f, &l2, 0.0, 2.0, &[1.0], &opts()).unwrap();
        match r.outcome {
            OdeOutcome::BlowUp { x, .. } => assert!((x - 1.0).abs() < 1e-7, "{x}"),
            o => panic!("{o:?}"),
        }
    }

    #[test]
    fn step_limit_is_reported() {
        let f = |y: &[f64], d: &mut [f64]| d[0] = -y[0];
        let o = OdeOptions { max_steps: 2, ..opts() };
        assert!(matches!(
            integrate(&f, &l2, 0.0, 100.0, &[1.0], &o),
            Err(Error::IntegrationFailure { .. })
        ));
    }
}
