//! Method-of-lines evolution of the extended system in the rotationally
//! invariant sector, from `t = 1` toward `t_min`.
//!
//! Time stepping is classical RK4 with uniform steps in `τ = ½ ln(t/(2−t))`,
//! where `∂_τ = t(2−t)∂_t` turns every `1/t` term into a bounded one. Radial
//! derivatives are Fourier pseudospectral on the torus.

use serde::{Deserialize, Serialize};

use crate::asymptotics::{t_of_tau, tau_of_t};
use crate::coefficients::{atilde_components, bbar_at, AngularPoint, CartesianCoefficients};
use crate::geometry::RadialChart;
use crate::grid::{GridField, V0, V1, V4, VPH, VTH};
use crate::par::{map_indexed, Execution};
use crate::spectral::Spectral;
use crate::system::{c_angular, null_covector, qtt, quadratic_contraction};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub n_rho: usize,
    pub t_min: f64,
    pub delta_tau: f64,
    pub cfl: f64,
    pub dealias: bool,
    /// Store every `snapshot_stride`-th step (the first and last are always stored).
    pub snapshot_stride: usize,
    pub blowup_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_rho: 128,
            t_min: 0.25,
            delta_tau: 1e-3,
            cfl: 0.5,
            dealias: false,
            snapshot_stride: 10,
            blowup_threshold: 1e8,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.n_rho < 16 || !self.n_rho.is_power_of_two() {
            errs.push(format!("n_rho must be a power of two >= 16, got {}", self.n_rho));
        }
        if !(self.t_min >= 1e-4 && self.t_min < 1.0) {
            errs.push(format!("t_min must lie in [1e-4, 1), got {}", self.t_min));
        }
        if !(self.delta_tau > 0.0) {
            errs.push("delta_tau must be positive".into());
        }
        if !(self.cfl > 0.0) {
            errs.push("cfl must be positive".into());
        }
        if self.snapshot_stride == 0 {
            errs.push("snapshot_stride must be positive".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

/// Accepts couplings with `â^{0i} = â^{i0} = 0` and `â^{ij} = b δ^{ij}`.
pub fn validate_reduced(c: &CartesianCoefficients) -> Result<()> {
    let n = c.n_fields();
    let mut errs = Vec::new();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let a = c.matrix(k, i, j);
                for s in 1..4 {
                    if a[(0, s)] != 0.0 || a[(s, 0)] != 0.0 {
                        errs.push(format!("a_hat[{k}][{i}][{j}] mixes time and space at index {s}"));
                    }
                    for l in 1..4 {
                        let want = if s == l { a[(1, 1)] } else { 0.0 };
                        if a[(s, l)] != want {
                            errs.push(format!(
                                "a_hat[{k}][{i}][{j}][{s}][{l}] = {} breaks rotational invariance",
                                a[(s, l)]
                            ));
                        }
                    }
                }
            }
        }
    }
    errs.dedup();
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

/// Largest `|ã^{0Λ}|, |ã^{1Λ}|` and their transposes at sampled points; zero in the reduced sector.
pub fn angular_mixing(c: &CartesianCoefficients) -> Result<f64> {
    let mut m = 0.0f64;
    for (t, r) in [(0.2, 0.5), (0.7, 1.3), (1.0, 0.9)] {
        for (th, ph) in [(0.4, 0.3), (1.2, 2.5), (2.8, 5.0)] {
            let s = atilde_components(c, t, r, AngularPoint { theta: th, phi: ph })?;
            let n = c.n_fields();
            for k in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        let a = s.get(k, i, j);
                        for l in 2..4 {
                            for x in [a[(0, l)], a[(l, 0)], a[(1, l)], a[(l, 1)]] {
                                m = m.max(x.abs());
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Precomputed grid data for right-hand-side evaluation.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub coeffs: CartesianCoefficients,
    pub chart: RadialChart,
    pub config: SolverConfig,
    pub spectral: Spectral,
    pub exec: Execution,
    rho: Vec<f64>,
    /// `χρ/m` at each node.
    speed: Vec<f64>,
    /// `χρ^m` at each node.
    reff: Vec<f64>,
    source_free: bool,
}

/// Output of [`Evolution::evolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolveResult {
    /// Snapshots ordered by decreasing `t`.
    pub history: Vec<GridField>,
    pub steps: usize,
    pub delta_tau: f64,
    /// Time at which the state became non-finite or exceeded the threshold.
    pub blowup_t: Option<f64>,
}

impl EvolveResult {
    pub fn last(&self) -> &GridField {
        self.history.last().expect("history always holds the initial state")
    }
}

impl Evolution {
    pub fn new(
        coeffs: CartesianCoefficients,
        chart: RadialChart,
        config: SolverConfig,
        exec: Execution,
    ) -> Result<Self> {
        config.validate()?;
        validate_reduced(&coeffs)?;
        let n = config.n_rho;
        let spectral = Spectral::new(n, chart.period());
        let rho = chart.nodes(n);
        let speed = rho
            .iter()
            .map(|&r| chart.chi(r) * r / chart.m as f64)
            .collect();
        let reff = rho.iter().map(|&r| chart.effective_radius(r)).collect();
        let source_free = coeffs.is_zero();
        Ok(Self {
            coeffs,
            chart,
            config,
            spectral,
            exec,
            rho,
            speed,
            reff,
            source_free,
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.rho
    }

    /// Largest stable `Δτ` from the radial speeds `(χρ/m)·{t, 2−t, (2−t)|q|}`.
    pub fn cfl_cap(&self) -> f64 {
        let smax = self.speed.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if smax == 0.0 {
            return f64::INFINITY;
        }
        self.config.cfl * self.chart.spacing(self.config.n_rho) / (2.0 * smax)
    }

    /// `t·F^K` components 0 and 1 divided by the source profile: returns `S^K` per node.
    fn source_profile(&self, field: &GridField, t: f64) -> Vec<Vec<f64>> {
        let n = field.n_fields;
        let p = AngularPoint::equator();
        let per_node: Vec<Vec<f64>> = map_indexed(self.exec, field.n_rho, |j| {
            if self.reff[j] == 0.0 {
                return vec![0.0; n];
            }
            let fibers = field.fibers_at(j);
            let ks: Vec<[f64; 4]> = fibers.iter().map(|v| null_covector(t, p, v)).collect();
            quadratic_contraction(&self.coeffs, &ks)
                .into_iter()
                .map(|s| self.reff[j] * s)
                .collect()
        });
        let mut out: Vec<Vec<f64>> = (0..n).map(|k| per_node.iter().map(|v| v[k]).collect()).collect();
        if self.config.dealias {
            for ch in out.iter_mut() {
                *ch = self.spectral.dealias(ch);
            }
        }
        out
    }

    /// `∂_τ V` at the time stored in `field`.
    pub fn rhs(&self, field: &GridField) -> GridField {
        let t = field.t;
        let n = field.n_rho;
        let s = 2.0 - t;
        let q = qtt(t);
        let ca = c_angular(t);
        let st = t.sqrt();
        let derivs: Vec<Vec<f64>> = map_indexed(self.exec, field.n_channels(), |ch| {
            if ch % 5 == V4 {
                Vec::new()
            } else {
                self.spectral.derivative(field.channel_by_index(ch), 1)
            }
        });
        let src = if self.source_free {
            None
        } else {
            Some(self.source_profile(field, t))
        };
        let mut out = GridField::zeros(t, n, field.n_fields);
        for k in 0..field.n_fields {
            let d = |c: usize| &derivs[5 * k + c];
            let v = |c: usize| field.channel(k, c);
            for j in 0..n {
                let sp = self.speed[j];
                let (v0, v1, v4) = (v(V0)[j], v(V1)[j], v(V4)[j]);
                let srcj = src.as_ref().map_or(0.0, |s| s[k][j]);
                out.set(j, k, V0, -t * sp * d(V0)[j] + t * v0 - srcj / s);
                out.set(j, k, V1, sp * s * d(V1)[j] + 0.5 * s * v1 - st * srcj);
                for c in [VTH, VPH] {
                    out.set(
                        j,
                        k,
                        c,
                        -sp * s * q * d(c)[j] + 0.5 * s * v(c)[j] + t * ca * v(c)[j],
                    );
                }
                out.set(j, k, V4, s * 0.5 * (v1 + v4) + 0.5 * t * st * s * v0);
            }
        }
        out
    }

    fn axpy(base: &GridField, h: f64, k: &GridField, tau: f64) -> GridField {
        let mut out = base.clone();
        for (o, d) in out.values.iter_mut().zip(&k.values) {
            *o += h * d;
        }
        out.t = t_of_tau(tau);
        out
    }

    /// Uniform `Δτ` and step count reaching `t_min` exactly.
    pub fn step_plan(&self) -> (usize, f64) {
        let tau_end = tau_of_t(self.config.t_min).expect("validated t_min");
        let h = self.config.delta_tau.min(self.cfl_cap());
        let n = (tau_end.abs() / h).ceil().max(1.0) as usize;
        (n, tau_end / n as f64)
    }

    /// Evolves `initial` (at `t = 1`) to `t_min`.
    pub fn evolve(&self, initial: &GridField) -> Result<EvolveResult> {
        if initial.n_rho != self.config.n_rho || initial.n_fields != self.coeffs.n_fields() {
            return Err(Error::validation("initial field does not match the solver grid"));
        }
        if !initial.is_finite() {
            return Err(Error::validation("initial data must be finite"));
        }
        let (n_steps, h) = self.step_plan();
        let mut state = initial.clone();
        state.t = 1.0;
        let mut history = vec![state.clone()];
        let mut tau = 0.0;
        for step in 1..=n_steps {
            let k1 = self.rhs(&state);
            let k2 = self.rhs(&Self::axpy(&state, 0.5 * h, &k1, tau + 0.5 * h));
            let k3 = self.rhs(&Self::axpy(&state, 0.5 * h, &k2, tau + 0.5 * h));
            let tau_next = if step == n_steps {
                tau_of_t(self.config.t_min)?
            } else {
                tau + h
            };
            let k4 = self.rhs(&Self::axpy(&state, h, &k3, tau_next));
            for i in 0..state.values.len() {
                state.values[i] +=
                    h / 6.0 * (k1.values[i] + 2.0 * k2.values[i] + 2.0 * k3.values[i] + k4.values[i]);
            }
            tau = tau_next;
            state.t = if step == n_steps {
                self.config.t_min
            } else {
                t_of_tau(tau)
            };
            if !state.is_finite() || state.max_abs() > self.config.blowup_threshold {
                let t = state.t;
                history.push(state);
                return Ok(EvolveResult {
                    history,
                    steps: step,
                    delta_tau: h,
                    blowup_t: Some(t),
                });
            }
            if step % self.config.snapshot_stride == 0 || step == n_steps {
                history.push(state.clone());
            }
        }
        Ok(EvolveResult {
            history,
            steps: n_steps,
            delta_tau: h,
            blowup_t: None,
        })
    }
}

/// `b̄` of reduced couplings, constant on the sphere; used by diagnostics.
pub fn reduced_bbar(c: &CartesianCoefficients) -> crate::coefficients::FieldTensor {
    bbar_at(c, AngularPoint::equator())
}
