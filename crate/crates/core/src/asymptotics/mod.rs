//! The asymptotic ODE `∂_τ ξ = Q(ξ)`, `Q^K = −2 c^K_{IJ} ξ^I ξ^J`, in the time
//! `τ = ½ ln(t/(2−t))`, its flow, variational equations and the bounded weak
//! null classifier.

mod classify;
pub mod ode;

pub use classify::{
    check_bounded_weak_null, AnalyzerOptions, Classification, FlowReport, FlowSample,
    SampleOutcome,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::{bbar_at, AngularPoint, CartesianCoefficients, FieldTensor};
use crate::geometry::RadialChart;
use crate::{Error, Result};
use ode::{integrate, OdeOptions, OdeOutcome};

/// `c^K_{IJ} = χ(ρ) ρ^m b̄^K_{IJ}(θ, φ)` at one spatial point.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCoefficient(pub FieldTensor);

impl EffectiveCoefficient {
    pub fn at(c: &CartesianCoefficients, chart: &RadialChart, rho: f64, p: AngularPoint) -> Self {
        Self(bbar_at(c, p).scaled(chart.effective_radius(rho)))
    }

    /// Scalar coefficient for a single field.
    pub fn scalar(c: f64) -> Self {
        let mut t = FieldTensor::zeros(1);
        t.set(0, 0, 0, c);
        Self(t)
    }

    pub fn n_fields(&self) -> usize {
        self.0.n_fields()
    }

    pub fn is_zero(&self) -> bool {
        self.0.max_abs() == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Integration horizon in `τ`.
    pub tau_min: f64,
    pub blowup_threshold: f64,
    pub max_steps: usize,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-12,
            abs_tol: 1e-14,
            tau_min: -10.0,
            blowup_threshold: 1e6,
            max_steps: 1_000_000,
        }
    }
}

impl FlowOptions {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        for (name, v) in [("rel_tol", self.rel_tol), ("abs_tol", self.abs_tol)] {
            if !(v > 0.0 && v <= 1e-2) {
                errs.push(format!("{name} must lie in (0, 1e-2], got {v}"));
            }
        }
        if !(self.tau_min < 0.0) {
            errs.push(format!("tau_min must be negative, got {}", self.tau_min));
        }
        if !(self.blowup_threshold >= 1e3) {
            errs.push(format!(
                "blowup_threshold must be >= 1e3, got {}",
                self.blowup_threshold
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn ode(&self) -> OdeOptions {
        OdeOptions {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            blowup_threshold: self.blowup_threshold,
            max_steps: self.max_steps,
        }
    }
}

/// `Q^K = −2 c^K_{IJ} ξ^I ξ^J`.
pub fn q_map(c: &EffectiveCoefficient, xi: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; xi.len()];
    q_into(c, xi, &mut out);
    out
}

fn q_into(c: &EffectiveCoefficient, xi: &[f64], out: &mut [f64]) {
    let n = xi.len();
    let v = c.0.values();
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += v[(k * n + i) * n + j] * xi[i] * xi[j];
            }
        }
        out[k] = -2.0 * acc;
    }
}

/// Jacobian `∂Q^K/∂ξ^L = −2 (c^K_{LJ} + c^K_{JL}) ξ^J`.
pub fn dq(c: &EffectiveCoefficient, xi: &[f64]) -> DMatrix<f64> {
    let n = xi.len();
    let v = c.0.values();
    DMatrix::from_fn(n, n, |k, l| {
        let mut acc = 0.0;
        for j in 0..n {
            acc += (v[(k * n + l) * n + j] + v[(k * n + j) * n + l]) * xi[j];
        }
        -2.0 * acc
    })
}

/// `τ = ½ ln(t/(2−t))`.
pub fn tau_of_t(t: f64) -> Result<f64> {
    if !(t > 0.0 && t < 2.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 2)")));
    }
    Ok(0.5 * (t / (2.0 - t)).ln())
}

/// `t = 2e^{2τ}/(1 + e^{2τ})`.
pub fn t_of_tau(tau: f64) -> f64 {
    // 2/(1 + e^{−2τ}) avoids overflow for large positive τ.
    2.0 / (1.0 + (-2.0 * tau).exp())
}

fn l2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Result of a flow evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum FlowResult {
    Completed {
        state: Vec<f64>,
        /// Largest `|ξ|` at accepted steps.
        sup_norm: f64,
    },
    /// `|ξ|` reached the blow-up threshold at `t`.
    BlowUp { t: f64, tau: f64 },
}

impl FlowResult {
    pub fn state(&self) -> Option<&[f64]> {
        match self {
            FlowResult::Completed { state, .. } => Some(state),
            FlowResult::BlowUp { .. } => None,
        }
    }
}

/// Flow from `τ0` to `τ1`.
pub fn flow_tau(
    tau1: f64,
    tau0: f64,
    c: &EffectiveCoefficient,
    xi0: &[f64],
    opts: &FlowOptions,
) -> Result<FlowResult> {
    check_dims(c, xi0)?;
    if tau0 == tau1 || c.is_zero() {
        return Ok(FlowResult::Completed {
            state: xi0.to_vec(),
            sup_norm: l2(xi0),
        });
    }
    let f = |y: &[f64], d: &mut [f64]| q_into(c, y, d);
    let run = integrate(&f, &l2, tau0, tau1, xi0, &opts.ode())?;
    Ok(match run.outcome {
        OdeOutcome::Completed { state } => FlowResult::Completed {
            state,
            sup_norm: run.sup_norm,
        },
        OdeOutcome::BlowUp { x, .. } => FlowResult::BlowUp {
            t: t_of_tau(x),
            tau: x,
        },
    })
}

/// `𝓕(t, t0, y, ξ0)`: the solution at `t` of the asymptotic equation with `ξ(t0) = ξ0`.
pub fn flow(
    t: f64,
    t0: f64,
    c: &EffectiveCoefficient,
    xi0: &[f64],
    opts: &FlowOptions,
) -> Result<FlowResult> {
    flow_tau(tau_of_t(t)?, tau_of_t(t0)?, c, xi0, opts)
}

fn check_dims(c: &EffectiveCoefficient, xi: &[f64]) -> Result<()> {
    if c.n_fields() != xi.len() {
        return Err(Error::validation(format!(
            "state has {} components, coefficients have {} fields",
            xi.len(),
            c.n_fields()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("initial state must be finite"));
    }
    Ok(())
}

/// Condition number above which the variational matrix is not inverted.
pub const MAX_CONDITION: f64 = 1e12;

/// `D_ξ𝓕(t, t0, y, ξ0)` and its inverse.
///
/// The variational matrix `M' = DQ(ξ) M`, `M(τ0) = I` is integrated with the
/// base flow; the inverse is taken from its singular value decomposition.
pub fn dflow(
    t: f64,
    t0: f64,
    c: &EffectiveCoefficient,
    xi0: &[f64],
    opts: &FlowOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(c, xi0)?;
    let n = xi0.len();
    let (tau1, tau0) = (tau_of_t(t)?, tau_of_t(t0)?);
    if tau0 == tau1 || c.is_zero() {
        return Ok((DMatrix::identity(n, n), DMatrix::identity(n, n)));
    }
    let mut y0 = xi0.to_vec();
    y0.extend(DMatrix::<f64>::identity(n, n).iter());
    let f = |y: &[f64], d: &mut [f64]| {
        let (xi, m) = y.split_at(n);
        q_into(c, xi, &mut d[..n]);
        let j = dq(c, xi);
        let m = DMatrix::from_column_slice(n, n, m);
        d[n..].copy_from_slice((j * m).as_slice());
    };
    let norm = |y: &[f64]| l2(&y[..n]);
    let run = integrate(&f, &norm, tau0, tau1, &y0, &opts.ode())?;
    let state = match run.outcome {
        OdeOutcome::Completed { state } => state,
        OdeOutcome::BlowUp { x, .. } => return Err(Error::BlowUp { t: t_of_tau(x) }),
    };
    let m = DMatrix::from_column_slice(n, n, &state[n..]);
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let inv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Domain(e.to_string()))?;
    Ok((m, inv))
}

/// `𝓛 = (D_ξ𝓕(t, 1, y, Y))⁻¹`.
pub fn lmap(
    t: f64,
    c: &EffectiveCoefficient,
    y_state: &[f64],
    opts: &FlowOptions,
) -> Result<DMatrix<f64>> {
    dflow(t, 1.0, c, y_state, opts).map(|(_, inv)| inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn riccati(t: f64, c: f64, xi0: f64) -> f64 {
        xi0 / (1.0 + c * xi0 * (t / (2.0 - t)).ln())
    }

    fn opts() -> FlowOptions {
        FlowOptions::default()
    }

    fn random_coeff(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> EffectiveCoefficient {
        let mut t = FieldTensor::zeros(n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    t.set(k, i, j, scale * rng.gen_range(-1.0..1.0));
                }
            }
        }
        EffectiveCoefficient(t)
    }

    #[test]
    fn q_map_examples() {
        let c = EffectiveCoefficient::scalar(1.0);
        assert_eq!(q_map(&c, &[0.0]), vec![0.0]);
        assert_eq!(q_map(&c, &[3.0]), vec![-18.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = random_coeff(3, 1.0, &mut rng);
        let xi = [0.3, -0.7, 1.1];
        let a = q_map(&c, &xi);
        let b = q_map(&c, &xi.map(|x| 2.0 * x));
        for k in 0..3 {
            assert_relative_eq!(b[k], 4.0 * a[k], epsilon = 1e-14);
        }
    }

    #[test]
    fn tau_examples() {
        assert_eq!(tau_of_t(1.0).unwrap(), 0.0);
        for t in [1e-4, 0.3, 1.0] {
            assert!((t_of_tau(tau_of_t(t).unwrap()) - t).abs() < 1e-14);
        }
        let t = 2.0 / (1.0 + std::f64::consts::E);
        assert_relative_eq!(tau_of_t(t).unwrap(), -0.5, epsilon = 1e-15);
        assert!(tau_of_t(0.0).is_err());
    }

    #[test]
    fn flow_identity_at_coincident_times() {
        let c = EffectiveCoefficient::scalar(1.0);
        let r = flow(0.7, 0.7, &c, &[0.4], &opts()).unwrap();
        assert_eq!(r.state().unwrap(), &[0.4]);
    }

    #[test]
    fn riccati_decaying_branch() {
        let c = EffectiveCoefficient::scalar(1.0);
        let r = flow(0.5, 1.0, &c, &[-1.0], &opts()).unwrap();
        assert!((r.state().unwrap()[0] - (-0.4765054)).abs() < 1e-6);
        assert!((r.state().unwrap()[0] - riccati(0.5, 1.0, -1.0)).abs() < 1e-8);
    }

    #[test]
    fn riccati_blowup_time() {
        let c = EffectiveCoefficient::scalar(1.0);
        match flow(1e-4, 1.0, &c, &[1.0], &opts()).unwrap() {
            FlowResult::BlowUp { t, .. } => {
                assert!((t - 2.0 / (1.0 + std::f64::consts::E)).abs() < 1e-4, "{t}")
            }
            r => panic!("{r:?}"),
        }
    }

    #[test]
    fn dflow_examples() {
        let z = EffectiveCoefficient::scalar(0.0);
        let (m, inv) = dflow(0.3, 1.0, &z, &[0.5], &opts()).unwrap();
        assert_eq!((m[(0, 0)], inv[(0, 0)]), (1.0, 1.0));
        let c = EffectiveCoefficient::scalar(1.0);
        let (m, inv) = dflow(0.5, 1.0, &c, &[-1.0], &opts()).unwrap();
        let l = (1.0f64 / 3.0).ln();
        assert_relative_eq!(m[(0, 0)], 1.0 / (1.0 - l).powi(2), epsilon = 1e-9);
        assert!((m[(0, 0)] - 0.2270574).abs() < 1e-6);
        assert!((lmap(0.5, &c, &[-1.0], &opts()).unwrap()[(0, 0)] - 4.404174).abs() < 1e-5);
        assert_relative_eq!(inv[(0, 0)] * m[(0, 0)], 1.0, epsilon = 1e-12);
        assert!(matches!(dflow(0.1, 1.0, &c, &[1.0], &opts()), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn lmap_trivial_cases() {
        let c = EffectiveCoefficient::scalar(1.0);
        let l = lmap(1.0, &c, &[0.3], &opts()).unwrap();
        assert_eq!(l[(0, 0)], 1.0);
        let z = EffectiveCoefficient(FieldTensor::zeros(2));
        assert_eq!(lmap(0.2, &z, &[0.3, 0.1], &opts()).unwrap(), DMatrix::identity(2, 2));
    }

    #[test]
    fn dflow_matches_finite_differences_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let c = random_coeff(3, 0.3, &mut rng);
            let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.3..0.3)).collect();
            let t = rng.gen_range(0.1..0.9);
            let (m, inv) = dflow(t, 1.0, &c, &xi, &opts()).unwrap();
            let prod = &m * &inv;
            assert!((prod - DMatrix::identity(3, 3)).abs().max() < 1e-9);
            let h = 1e-5;
            for l in 0..3 {
                let mut a = xi.clone();
                let mut b = xi.clone();
                a[l] += h;
                b[l] -= h;
                let fa = flow(t, 1.0, &c, &a, &opts()).unwrap();
                let fb = flow(t, 1.0, &c, &b, &opts()).unwrap();
                for k in 0..3 {
                    let fd = (fa.state().unwrap()[k] - fb.state().unwrap()[k]) / (2.0 * h);
                    assert!((fd - m[(k, l)]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn inverse_matches_transposed_equation() {
        // N' = −N DQ(ξ) integrated directly gives (D𝓕)⁻¹.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 2;
        let c = random_coeff(n, 0.4, &mut rng);
        let xi0 = vec![0.2, -0.15];
        let t = 0.2;
        let (_, inv) = dflow(t, 1.0, &c, &xi0, &opts()).unwrap();
        let mut y0 = xi0.clone();
        y0.extend(DMatrix::<f64>::identity(n, n).iter());
        let f = |y: &[f64], d: &mut [f64]| {
            let (xi, m) = y.split_at(n);
            q_into(&c, xi, &mut d[..n]);
            let nm = DMatrix::from_column_slice(n, n, m);
            d[n..].copy_from_slice((-(nm * dq(&c, xi))).as_slice());
        };
        let norm = |y: &[f64]| l2(&y[..n]);
        let run = integrate(&f, &norm, 0.0, tau_of_t(t).unwrap(), &y0, &opts().ode()).unwrap();
        let OdeOutcome::Completed { state } = run.outcome else { panic!() };
        let direct = DMatrix::from_column_slice(n, n, &state[n..]);
        assert!((direct - inv).abs().max() < 1e-9);
    }

    #[test]
    fn condition_h_flow_conserves_norm() {
        let mut t = FieldTensor::zeros(2);
        t.set(0, 1, 0, 1.0);
        t.set(1, 0, 0, -1.0);
        let c = EffectiveCoefficient(t);
        let xi0 = [0.3, -0.4];
        let r = flow_tau(-10.0, 0.0, &c, &xi0, &opts()).unwrap();
        let s = r.state().unwrap();
        assert!((l2(s) - 0.5).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn group_law(seed in 0u64..1000, t0 in 0.6f64..1.0, f1 in 0.3f64..0.9, f2 in 0.3f64..0.9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coeff(2, 0.5, &mut rng);
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let t1 = (t0 * f1).max(0.05);
            let t2 = (t1 * f2).max(0.05 * f2);
            let o = opts();
            let a = flow(t1, t0, &c, &xi, &o).unwrap();
            let b = flow(t2, t1, &c, a.state().unwrap(), &o).unwrap();
            let d = flow(t2, t0, &c, &xi, &o).unwrap();
            for k in 0..2 {
                prop_assert!((b.state().unwrap()[k] - d.state().unwrap()[k]).abs() < 1e-8);
            }
        }

        #[test]
        fn quadratic_scaling(seed in 0u64..1000, frac in 0.05f64..1.0, tau in -4.0f64..-0.1) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_coeff(2, 0.5, &mut rng);
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.2..0.2)).collect();
            let o = opts();
            let scaled: Vec<f64> = xi.iter().map(|x| frac * x).collect();
            let a = flow_tau(tau, 0.0, &c, &scaled, &o).unwrap();
            let b = flow_tau(frac * tau, 0.0, &c, &xi, &o).unwrap();
            for k in 0..2 {
                prop_assert!((a.state().unwrap()[k] - frac * b.state().unwrap()[k]).abs() < 1e-8);
            }
        }
    }
}
