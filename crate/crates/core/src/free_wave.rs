//! Exact spherically symmetric solutions `ū = (F(r̄ − t̄) + G(r̄ + t̄))/r̄` of the
//! flat wave equation, expressed in every variable the solver uses.
//!
//! With `x = 1/(r(2−t)) = r̄ − t̄` and `y = 1/(rt) = r̄ + t̄` the conformal field
//! is `u = F(x) + G(y)`, and
//! `V₀ = 2xF′(x)/(2−t)`, `V₁ = −2√t yG′(y)`, `V₄ = √t (F(x) + G(y))`.

use std::sync::Arc;

use crate::coefficients::AngularPoint;
use crate::geometry::{InitialDataFunctions, Profile, RadialChart};
use crate::grid::{Fiber, GridField, V0, V1, V4};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeWave {
    /// Outgoing profile `F`.
    pub outgoing: Profile,
    /// Incoming profile `G`.
    pub incoming: Profile,
}

impl FreeWave {
    pub fn outgoing(f: Profile) -> Self {
        Self {
            outgoing: f,
            incoming: Profile::Zero,
        }
    }

    pub fn ubar(&self, tbar: f64, rbar: f64) -> f64 {
        (self.outgoing.value(rbar - tbar) + self.incoming.value(rbar + tbar)) / rbar
    }

    /// `(v̄, w̄) = (ū, ∂_t̄ ū)` at `t̄ = 0`.
    pub fn initial_data(&self) -> InitialDataFunctions {
        let (f, g) = (self.outgoing, self.incoming);
        let zero: Arc<dyn Fn(f64, AngularPoint) -> f64 + Send + Sync> = Arc::new(|_, _| 0.0);
        InitialDataFunctions {
            vbar: Arc::new(move |r, _| (f.value(r) + g.value(r)) / r),
            wbar: Arc::new(move |r, _| (-f.derivative(r) + g.derivative(r)) / r),
            dr_vbar: Arc::new(move |r, _| {
                (f.derivative(r) + g.derivative(r)) / r - (f.value(r) + g.value(r)) / (r * r)
            }),
            dtheta_vbar: Some(zero.clone()),
            dphi_vbar: Some(zero),
        }
    }

    /// Exact first-order state at `(t, r)`.
    pub fn fiber(&self, t: f64, r: f64) -> Fiber {
        let (f, g) = (self.outgoing, self.incoming);
        let x = 1.0 / (r * (2.0 - t));
        let y = 1.0 / (r * t);
        let st = t.sqrt();
        let mut v = [0.0; 5];
        v[V0] = 2.0 * x * f.derivative(x) / (2.0 - t);
        v[V1] = -2.0 * st * y * g.derivative(y);
        v[V4] = st * (f.value(x) + g.value(y));
        v
    }

    /// Exact `∂_t` of [`FreeWave::fiber`].
    pub fn dt_fiber(&self, t: f64, r: f64) -> Fiber {
        let (f, g) = (self.outgoing, self.incoming);
        let s = 2.0 - t;
        let x = 1.0 / (r * s);
        let y = 1.0 / (r * t);
        let st = t.sqrt();
        let (f1, f2) = (f.derivative(x), f.second_derivative(x));
        let (g1, g2) = (g.derivative(y), g.second_derivative(y));
        let mut d = [0.0; 5];
        d[V0] = 2.0 * (f2 * x * x + 2.0 * f1 * x) / (s * s);
        d[V1] = (2.0 * g2 * y * y + g1 * y) / st;
        d[V4] = (f.value(x) + g.value(y)) / (2.0 * st) + st * (f1 * x / s - g1 * y / t);
        d
    }

    /// Exact state on the grid nodes with `0 < ρ < ρ₀` (other nodes are zero).
    pub fn band_field(&self, chart: &RadialChart, n_rho: usize, t: f64) -> GridField {
        let mut g = GridField::zeros(t, n_rho, 1);
        for j in 0..n_rho {
            let rho = chart.node(n_rho, j);
            if rho > 0.0 && rho < chart.rho0 {
                g.set_fibers_at(j, &[self.fiber(t, chart.rho_pow(rho))]);
            }
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::initial_data_transform;
    use approx::assert_relative_eq;

    fn wave() -> FreeWave {
        FreeWave {
            outgoing: Profile::GaussianInInverseR { amplitude: 1.0, center: 2.0, width: 1.0 },
            incoming: Profile::GaussianInInverseR { amplitude: 0.3, center: 3.0, width: 0.7 },
        }
    }

    #[test]
    fn matches_transformed_initial_data() {
        let chart = RadialChart::new(2, 1.0).unwrap();
        let w = wave();
        for rho in [0.3, 0.6, 0.9] {
            let a = initial_data_transform(&w.initial_data(), &chart, rho, AngularPoint::equator())
                .unwrap();
            let b = w.fiber(1.0, chart.rho_pow(rho));
            for c in 0..5 {
                assert_relative_eq!(a[c], b[c], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn time_derivative_matches_differences() {
        let w = wave();
        let h = 1e-5;
        for (t, r) in [(0.3, 0.5), (0.8, 1.2), (0.05, 0.7)] {
            let d = w.dt_fiber(t, r);
            let (a, b) = (w.fiber(t + h, r), w.fiber(t - h, r));
            for c in 0..5 {
                assert_relative_eq!(d[c], (a[c] - b[c]) / (2.0 * h), epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn ubar_is_consistent_with_v4() {
        let w = wave();
        let (t, r) = (0.4, 0.8);
        let s = r * t * (2.0 - t);
        let rbar = 1.0 / s;
        let tbar = (1.0 - t) / s;
        let v4 = w.fiber(t, r)[V4];
        assert_relative_eq!(w.ubar(tbar, rbar), r * t.sqrt() * (2.0 - t) * v4, epsilon = 1e-13);
    }
}
