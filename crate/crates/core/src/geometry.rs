//! Cylinder-at-spatial-infinity maps, the radial chart and cutoff, initial
//! data transforms, constraints and reconstruction of the physical solution.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::AngularPoint;
use crate::grid::{Fiber, GridField, V0, V1, V4, VPH, VTH};
use crate::spectral::Spectral;
use crate::system::ptt;
use crate::{Error, Result};

/// Fraction of `ρ₀` at which the cutoff and the data taper reach zero.
pub const CUTOFF_END: f64 = 1.9;

/// Minkowski point `(t̄, r̄, θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalPoint {
    pub tbar: f64,
    pub rbar: f64,
    pub angular: AngularPoint,
}

/// Compactified point `(t, r, θ, φ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactPoint {
    pub t: f64,
    pub r: f64,
    pub angular: AngularPoint,
}

/// `ψ(t̄, r̄) = (1 − t̄/r̄, r̄/(r̄² − t̄²))`.
pub fn psi(p: PhysicalPoint) -> Result<CompactPoint> {
    let d = p.rbar * p.rbar - p.tbar * p.tbar;
    if !(p.rbar > 0.0) || !(d > 0.0) {
        return Err(Error::Domain(format!(
            "(tbar, rbar) = ({}, {}) is not inside rbar^2 > tbar^2",
            p.tbar, p.rbar
        )));
    }
    Ok(CompactPoint {
        t: 1.0 - p.tbar / p.rbar,
        r: p.rbar / d,
        angular: p.angular,
    })
}

/// `ψ⁻¹(t, r) = ((1 − t)/(r t (2 − t)), 1/(r t (2 − t)))`.
pub fn psi_inverse(q: CompactPoint) -> Result<PhysicalPoint> {
    if !(q.t > 0.0 && q.t < 2.0) || !(q.r > 0.0) {
        return Err(Error::Domain(format!(
            "(t, r) = ({}, {}) requires 0 < t < 2 and r > 0",
            q.t, q.r
        )));
    }
    let s = q.r * q.t * (2.0 - q.t);
    Ok(PhysicalPoint {
        tbar: (1.0 - q.t) / s,
        rbar: 1.0 / s,
        angular: q.angular,
    })
}

/// `Ω = 1/(r (2 − t) t)`.
pub fn conformal_factor(q: CompactPoint) -> Result<f64> {
    psi_inverse(q).map(|p| p.rbar)
}

/// `s ↦ e^{−1/s}/(e^{−1/s} + e^{−1/(1−s)})`, clamped to 0 below 0 and 1 above 1.
pub fn smooth_step(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        let a = (-1.0 / s).exp();
        let b = (-1.0 / (1.0 - s)).exp();
        a / (a + b)
    }
}

/// Radial coordinate `ρ` with `r = ρ^m` on the torus `[−3ρ₀, 3ρ₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialChart {
    pub m: u32,
    pub rho0: f64,
}

impl RadialChart {
    pub fn new(m: u32, rho0: f64) -> Result<Self> {
        let mut errs = Vec::new();
        if m < 1 {
            errs.push("chart.m must be >= 1".to_string());
        }
        if !(rho0 > 0.0 && rho0.is_finite()) {
            errs.push("chart.rho0 must be positive".to_string());
        }
        if errs.is_empty() {
            Ok(Self { m, rho0 })
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Chart whose `ρ₀` is scaled so that `sup χ(ρ)|ρ|^m = 1`.
    pub fn with_unit_peak(m: u32) -> Result<Self> {
        let probe = Self::new(m, 1.0)?;
        let (_, peak) = probe.peak_coupling();
        Self::new(m, peak.powf(-1.0 / m as f64))
    }

    pub fn period(&self) -> f64 {
        6.0 * self.rho0
    }

    /// Maps `ρ` into `[−3ρ₀, 3ρ₀)`.
    pub fn wrap(&self, rho: f64) -> f64 {
        let half = 3.0 * self.rho0;
        if (-half..half).contains(&rho) {
            return rho;
        }
        (rho + half).rem_euclid(self.period()) - half
    }

    /// Node `j` of an `n`-point grid.
    pub fn node(&self, n: usize, j: usize) -> f64 {
        -3.0 * self.rho0 + j as f64 * self.period() / n as f64
    }

    pub fn nodes(&self, n: usize) -> Vec<f64> {
        (0..n).map(|j| self.node(n, j)).collect()
    }

    pub fn spacing(&self, n: usize) -> f64 {
        self.period() / n as f64
    }

    /// Smooth cutoff: `1` on `[−ρ₀, ρ₀]`, zero outside `(−1.9ρ₀, 1.9ρ₀)`.
    pub fn chi(&self, rho: f64) -> f64 {
        let a = self.wrap(rho).abs();
        let end = CUTOFF_END * self.rho0;
        if a <= self.rho0 {
            1.0
        } else if a >= end {
            0.0
        } else {
            smooth_step((end - a) / (end - self.rho0))
        }
    }

    /// `ρ^m` with the sign of `ρ` for odd `m`.
    pub fn rho_pow(&self, rho: f64) -> f64 {
        rho.powi(self.m as i32)
    }

    /// Effective radius `χ(ρ) ρ^m` that multiplies every coefficient of the extended system.
    pub fn effective_radius(&self, rho: f64) -> f64 {
        let w = self.wrap(rho);
        self.chi(w) * self.rho_pow(w)
    }

    /// Argmax and value of `χ(ρ)|ρ|^m` over `ρ ≥ 0`.
    pub fn peak_coupling(&self) -> (f64, f64) {
        let f = |rho: f64| self.chi(rho) * rho.abs().powi(self.m as i32);
        let (lo, hi) = (self.rho0, CUTOFF_END * self.rho0);
        let n = 2000;
        let mut best = (lo, f(lo));
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(x);
            if v > best.1 {
                best = (x, v);
            }
        }
        let h = (hi - lo) / n as f64;
        let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
        let g = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..100 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let x = 0.5 * (a + b);
        (x, f(x))
    }

    /// `ρ` of the outgoing boundary `Γ⁺` at time `t`: `ρ₀ (2 − t)^{−1/m}`.
    pub fn gamma_plus_rho(&self, t: f64) -> f64 {
        self.rho0 * (2.0 - t).powf(-1.0 / self.m as f64)
    }

    /// Membership in `M_{r₀}` (closed at `t = 1`): `0 < ρ < ρ₀` and `t > 2 − (ρ₀/ρ)^m`.
    pub fn in_domain(&self, t: f64, rho: f64) -> bool {
        rho > 0.0
            && rho < self.rho0
            && t > 0.0
            && t <= 1.0
            && t > 2.0 - (self.rho0 / rho).powi(self.m as i32)
    }

    /// Membership of a physical point in `M̄_{r₀}`: `0 ≤ t̄ < r̄ − 1/r₀`.
    pub fn in_physical_domain(&self, tbar: f64, rbar: f64) -> bool {
        let r0 = self.rho0.powi(self.m as i32);
        tbar >= 0.0 && rbar > 1.0 / r0 && tbar < rbar - 1.0 / r0
    }
}

/// Real function of `(r̄, θ, φ)`.
pub type ScalarFn = Arc<dyn Fn(f64, AngularPoint) -> f64 + Send + Sync>;

/// Named analytic radial profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Zero,
    /// `A e^{−(r̄−c)²/w²}`.
    GaussianInInverseR {
        amplitude: f64,
        center: f64,
        width: f64,
    },
    /// `A r̄^{−p}`.
    PowerTail { amplitude: f64, p_tail: f64 },
    /// `A e^{−(y−c)²/w²}` with `y = r̄^{−1/k}`; for `k = m` this is a Gaussian in `ρ`
    /// at `t = 1`, which keeps free waves resolved as they move toward `ρ = 0`.
    GaussianInRootR {
        amplitude: f64,
        center: f64,
        width: f64,
        root: u32,
    },
}

impl Profile {
    pub fn value(&self, rbar: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::GaussianInInverseR {
                amplitude,
                center,
                width,
            } => amplitude * (-((rbar - center) / width).powi(2)).exp(),
            Profile::PowerTail { amplitude, p_tail } => amplitude * rbar.powf(-p_tail),
            Profile::GaussianInRootR {
                amplitude,
                center,
                width,
                root,
            } => {
                let y = rbar.powf(-1.0 / root as f64);
                amplitude * (-((y - center) / width).powi(2)).exp()
            }
        }
    }

    /// `(y, g(y), g′(y))` for the root Gaussian, where `F′ = F g` and `dy/dr̄ = −y^{k+1}/k`.
    fn root_gaussian_parts(rbar: f64, center: f64, width: f64, root: u32) -> (f64, f64, f64) {
        let k = root as f64;
        let y = rbar.powf(-1.0 / k);
        let w2 = width * width;
        let yk = y.powi(root as i32);
        let g = 2.0 * (y - center) * yk * y / (k * w2);
        let dg = 2.0 * (yk * y + (y - center) * (k + 1.0) * yk) / (k * w2);
        (y, g, dg)
    }

    pub fn derivative(&self, rbar: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::GaussianInInverseR { center, width, .. } => {
                -2.0 * (rbar - center) / (width * width) * self.value(rbar)
            }
            Profile::PowerTail { amplitude, p_tail } => {
                -p_tail * amplitude * rbar.powf(-p_tail - 1.0)
            }
            Profile::GaussianInRootR {
                center,
                width,
                root,
                ..
            } => Self::root_gaussian_parts(rbar, center, width, root).1 * self.value(rbar),
        }
    }

    pub fn second_derivative(&self, rbar: f64) -> f64 {
        match *self {
            Profile::Zero => 0.0,
            Profile::GaussianInInverseR { center, width, .. } => {
                let w2 = width * width;
                let d = rbar - center;
                (4.0 * d * d / (w2 * w2) - 2.0 / w2) * self.value(rbar)
            }
            Profile::PowerTail { amplitude, p_tail } => {
                p_tail * (p_tail + 1.0) * amplitude * rbar.powf(-p_tail - 2.0)
            }
            Profile::GaussianInRootR {
                center,
                width,
                root,
                ..
            } => {
                let (y, g, dg) = Self::root_gaussian_parts(rbar, center, width, root);
                let dy = -y.powi(root as i32 + 1) / root as f64;
                (g * g + dg * dy) * self.value(rbar)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Profile::GaussianInInverseR { width, .. } if !(width > 0.0) => {
                Err(Error::validation("gaussian width must be positive"))
            }
            Profile::PowerTail { p_tail, .. } if !(p_tail > 0.0) => {
                Err(Error::validation("p_tail must be positive"))
            }
            Profile::GaussianInRootR { width, root, .. } if !(width > 0.0) || root == 0 => {
                Err(Error::validation("gaussian width and root must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Initial data `(v̄, w̄)` of one field with `∂_{r̄} v̄` and optional angular derivatives.
#[derive(Clone)]
pub struct InitialDataFunctions {
    pub vbar: ScalarFn,
    pub wbar: ScalarFn,
    pub dr_vbar: ScalarFn,
    pub dtheta_vbar: Option<ScalarFn>,
    pub dphi_vbar: Option<ScalarFn>,
}

impl std::fmt::Debug for InitialDataFunctions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("InitialDataFunctions { .. }")
    }
}

impl InitialDataFunctions {
    pub fn zero() -> Self {
        Self::radial(Profile::Zero, Profile::Zero, 1.0)
    }

    /// Angle-independent data `v̄ = s·v(r̄)`, `w̄ = s·w(r̄)`.
    pub fn radial(v: Profile, w: Profile, scale: f64) -> Self {
        let zero: ScalarFn = Arc::new(|_, _| 0.0);
        Self {
            vbar: Arc::new(move |r, _| scale * v.value(r)),
            wbar: Arc::new(move |r, _| scale * w.value(r)),
            dr_vbar: Arc::new(move |r, _| scale * v.derivative(r)),
            dtheta_vbar: Some(zero.clone()),
            dphi_vbar: Some(zero),
        }
    }
}

const ANGULAR_FD_STEP: f64 = 1e-6;

/// First-order data at `t = 1` for one field at `(ρ, θ, φ)` with `r̄ = ρ^{−m}`.
///
/// Angular components are returned in the orthonormal frame.
pub fn initial_data_transform(
    data: &InitialDataFunctions,
    chart: &RadialChart,
    rho: f64,
    p: AngularPoint,
) -> Result<Fiber> {
    if !(rho > 0.0) {
        return Err(Error::Domain(format!("rho = {rho} must be positive")));
    }
    let r = chart.rho_pow(rho);
    let rbar = 1.0 / r;
    let v = (data.vbar)(rbar, p);
    let dv = (data.dr_vbar)(rbar, p);
    let w = (data.wbar)(rbar, p);
    let fd = |f: &ScalarFn, dth: f64, dph: f64| {
        let a = AngularPoint {
            theta: p.theta + dth,
            phi: p.phi + dph,
        };
        let b = AngularPoint {
            theta: p.theta - dth,
            phi: p.phi - dph,
        };
        (f(rbar, a) - f(rbar, b)) / (2.0 * (dth + dph))
    };
    let dth = match &data.dtheta_vbar {
        Some(f) => f(rbar, p),
        None => fd(&data.vbar, ANGULAR_FD_STEP, 0.0),
    };
    let dph = match &data.dphi_vbar {
        Some(f) => f(rbar, p),
        None => fd(&data.vbar, 0.0, ANGULAR_FD_STEP),
    };
    let st = p.theta.sin();
    let v_phi = if dph == 0.0 { 0.0 } else { SQRT_2 / r * dph / st };
    let mut out = [0.0; 5];
    out[V0] = (rbar * dv + v - rbar * w) / r;
    out[V1] = -(rbar * dv + v + rbar * w) / r;
    out[VTH] = SQRT_2 / r * dth;
    out[VPH] = v_phi;
    out[V4] = v / r;
    Ok(out)
}

/// Taper that equals one on `(0, ρ₀]` and falls smoothly to zero at `1.9ρ₀`.
pub fn extension_taper(chart: &RadialChart, rho: f64) -> f64 {
    let end = CUTOFF_END * chart.rho0;
    if rho <= 0.0 || rho >= end {
        0.0
    } else if rho <= chart.rho0 {
        1.0
    } else {
        smooth_step((end - rho) / (end - chart.rho0))
    }
}

/// Builds the periodic `t = 1` field from band data.
///
/// `band(ρ)` must be defined for `0 < ρ < 1.9ρ₀`; it is kept unchanged on
/// `(0, ρ₀]`, tapered on `(ρ₀, 1.9ρ₀)` and set to zero on the rest of the
/// torus (including `ρ ≤ 0`, so the data should vanish to all orders at `ρ = 0`).
pub fn extend_to_s(
    band: &dyn Fn(f64) -> Vec<Fiber>,
    chart: &RadialChart,
    n_rho: usize,
    n_fields: usize,
) -> GridField {
    let mut g = GridField::zeros(1.0, n_rho, n_fields);
    for j in 0..n_rho {
        let rho = chart.node(n_rho, j);
        let eta = extension_taper(chart, rho);
        if eta == 0.0 {
            continue;
        }
        let fibers = band(rho);
        let scaled: Vec<Fiber> = fibers.iter().map(|f| f.map(|x| x * eta)).collect();
        g.set_fibers_at(j, &scaled);
    }
    g
}

/// Initial field for a set of per-field data on the equatorial angle.
pub fn initial_field(
    data: &[InitialDataFunctions],
    chart: &RadialChart,
    n_rho: usize,
) -> Result<GridField> {
    let p = AngularPoint::equator();
    // Validate once inside the band so errors surface before tapering.
    for d in data {
        initial_data_transform(d, chart, 0.5 * chart.rho0, p)?;
    }
    let band = |rho: f64| {
        data.iter()
            .map(|d| initial_data_transform(d, chart, rho, p).unwrap_or([0.0; 5]))
            .collect::<Vec<_>>()
    };
    Ok(extend_to_s(&band, chart, n_rho, data.len()))
}

/// Pointwise constraint residual, maximised over fields:
/// `(ρ/m)∂_ρV₄ − ½(V₁ − (2−t)√t V₀)` and, in the reduced sector, `V_Λ/p(t)`.
pub fn constraint_residual(
    field: &GridField,
    t: f64,
    chart: &RadialChart,
    spectral: &Spectral,
) -> Vec<f64> {
    let n = field.n_rho;
    let p = ptt(t);
    let st = t.sqrt();
    let mut out = vec![0.0f64; n];
    for k in 0..field.n_fields {
        let d4 = spectral.derivative(field.channel(k, V4), 1);
        for j in 0..n {
            let rho = chart.node(n, j);
            let c1 = rho / chart.m as f64 * d4[j]
                - 0.5 * (field.get(j, k, V1) - (2.0 - t) * st * field.get(j, k, V0));
            let ca = (field.get(j, k, VTH).powi(2) + field.get(j, k, VPH).powi(2)).sqrt() / p;
            out[j] = out[j].max((c1 * c1 + ca * ca).sqrt());
        }
    }
    out
}

/// Reconstructs `ū^K` at a physical point from a stored history.
///
/// `history` must be ordered by decreasing `t`. `V₄` is interpolated
/// spectrally in `ρ` and linearly in `t`.
pub fn reconstruct_ubar(
    history: &[GridField],
    chart: &RadialChart,
    spectral: &Spectral,
    p: PhysicalPoint,
) -> Result<Vec<f64>> {
    let q = psi(p)?;
    let rho = q.r.powf(1.0 / chart.m as f64);
    if !chart.in_domain(q.t, rho) {
        return Err(Error::OutOfDomain(format!(
            "(t, rho) = ({}, {rho}) is outside M_r0",
            q.t
        )));
    }
    let first = history
        .first()
        .ok_or_else(|| Error::Insufficient("empty history".into()))?;
    let last = history.last().unwrap();
    if q.t > first.t + 1e-14 || q.t < last.t - 1e-14 {
        return Err(Error::OutOfDomain(format!(
            "t = {} outside evolved range [{}, {}]",
            q.t, last.t, first.t
        )));
    }
    let idx = history
        .windows(2)
        .position(|w| q.t <= w[0].t && q.t >= w[1].t)
        .unwrap_or(0);
    let (a, b) = if history.len() == 1 {
        (&history[0], &history[0])
    } else {
        (&history[idx], &history[idx + 1])
    };
    let x0 = chart.node(a.n_rho, 0);
    let lam = if a.t == b.t { 0.0 } else { (a.t - q.t) / (a.t - b.t) };
    let ratio = p.rbar / (p.rbar * p.rbar - p.tbar * p.tbar);
    let x = p.tbar / p.rbar;
    let pref = ratio * (1.0 - x).sqrt() * (1.0 + x);
    Ok((0..a.n_fields)
        .map(|k| {
            let va = spectral.interpolate(&spectral.coefficients(a.channel(k, V4)), x0, rho);
            let vb = spectral.interpolate(&spectral.coefficients(b.channel(k, V4)), x0, rho);
            pref * ((1.0 - lam) * va + lam * vb)
        })
        .collect())
}
