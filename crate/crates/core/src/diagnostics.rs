//! Fuchsian variables, norms, residuals, decay fits and bound verdicts for
//! evolved solutions.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::asymptotics::{
    dflow, flow, flow_tau, tau_of_t, EffectiveCoefficient, FlowOptions, FlowResult,
};
use crate::coefficients::{AngularPoint, CartesianCoefficients};
use crate::geometry::{RadialChart, CUTOFF_END};
use crate::grid::{GridField, V0, V4};
use crate::par::{map_indexed, Execution};
use crate::solver::reduced_bbar;
use crate::spectral::Spectral;
use crate::system::{source_f, BlockOperators, FuchsianParameters, OperatorSet};
use crate::{Error, Result};

/// `W = t^κ ∂_ρV`, `X = t^{−ν}ℙV` and `Y = 𝓕(1, t, y, V₀)` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct FuchsianSnapshot {
    pub t: f64,
    pub w: GridField,
    pub x: GridField,
    /// `Y^K` at node `j` is stored at `y[K * n_rho + j]`; failed nodes hold NaN.
    pub y: Vec<f64>,
    pub y_failed: Vec<usize>,
}

fn effective_coefficients(c: &CartesianCoefficients, chart: &RadialChart, n: usize) -> Vec<EffectiveCoefficient> {
    let b = reduced_bbar(c);
    (0..n)
        .map(|j| EffectiveCoefficient(b.scaled(chart.effective_radius(chart.node(n, j)))))
        .collect()
}

/// Builds the Fuchsian variables of `field`.
pub fn fuchsian_variables(
    field: &GridField,
    params: &FuchsianParameters,
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    spectral: &Spectral,
    flow_opts: &FlowOptions,
    exec: Execution,
) -> Result<FuchsianSnapshot> {
    let t = field.t;
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 1]")));
    }
    let n = field.n_rho;
    let nf = field.n_fields;
    let mut w = GridField::zeros(t, n, nf);
    let mut x = GridField::zeros(t, n, nf);
    let (tk, tn) = (t.powf(params.kappa), t.powf(-params.nu));
    for k in 0..nf {
        for c in 0..5 {
            let d = spectral.derivative(field.channel(k, c), 1);
            for (o, v) in w.channel_mut(k, c).iter_mut().zip(d) {
                *o = tk * v;
            }
            if c != V0 {
                for (o, v) in x.channel_mut(k, c).iter_mut().zip(field.channel(k, c)) {
                    *o = tn * v;
                }
            }
        }
    }
    let ceff = effective_coefficients(coeffs, chart, n);
    let per_node: Vec<Option<Vec<f64>>> = map_indexed(exec, n, |j| {
        let v0: Vec<f64> = (0..nf).map(|k| field.get(j, k, V0)).collect();
        match flow(1.0, t, &ceff[j], &v0, flow_opts) {
            Ok(FlowResult::Completed { state, .. }) => Some(state),
            _ => None,
        }
    });
    let mut y = vec![f64::NAN; nf * n];
    let mut y_failed = Vec::new();
    for (j, s) in per_node.into_iter().enumerate() {
        match s {
            Some(s) => {
                for k in 0..nf {
                    y[k * n + j] = s[k];
                }
            }
            None => y_failed.push(j),
        }
    }
    Ok(FuchsianSnapshot { t, w, x, y, y_failed })
}

/// `max_j |𝓕(t, 1, y_j, Y_j) − V₀(t, y_j)|` over the nodes where `Y` exists.
pub fn y_roundtrip_error(
    snap: &FuchsianSnapshot,
    field: &GridField,
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    flow_opts: &FlowOptions,
    exec: Execution,
) -> Result<f64> {
    let n = field.n_rho;
    let nf = field.n_fields;
    let ceff = effective_coefficients(coeffs, chart, n);
    let errs: Vec<Result<f64>> = map_indexed(exec, n, |j| {
        if snap.y_failed.contains(&j) {
            return Ok(0.0);
        }
        let y: Vec<f64> = (0..nf).map(|k| snap.y[k * n + j]).collect();
        match flow(snap.t, 1.0, &ceff[j], &y, flow_opts)? {
            FlowResult::Completed { state, .. } => Ok((0..nf)
                .map(|k| (state[k] - field.get(j, k, V0)).abs())
                .fold(0.0, f64::max)),
            FlowResult::BlowUp { t, .. } => Err(Error::BlowUp { t }),
        }
    });
    errs.into_iter().try_fold(0.0f64, |m, e| Ok(m.max(e?)))
}

/// `𝓠^K = −2 t^κ χρ^m b̄^K_{IJ} ∂_ρ(V₀^I V₀^J)`, the `e₀` entry of the W block, per field.
pub fn q_source(
    field: &GridField,
    params: &FuchsianParameters,
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    spectral: &Spectral,
) -> Vec<Vec<f64>> {
    let n = field.n_rho;
    let nf = field.n_fields;
    let b = reduced_bbar(coeffs);
    let tk = field.t.powf(params.kappa);
    let mut products = vec![vec![Vec::new(); nf]; nf];
    for i in 0..nf {
        for j in i..nf {
            let p: Vec<f64> = field
                .channel(i, V0)
                .iter()
                .zip(field.channel(j, V0))
                .map(|(a, b)| a * b)
                .collect();
            let d = spectral.derivative(&p, 1);
            products[i][j] = d.clone();
            products[j][i] = d;
        }
    }
    (0..nf)
        .map(|k| {
            (0..n)
                .map(|node| {
                    let reff = chart.effective_radius(chart.node(n, node));
                    let mut acc = 0.0;
                    for i in 0..nf {
                        for j in 0..nf {
                            acc += b.get(k, i, j) * products[i][j][node];
                        }
                    }
                    -2.0 * tk * reff * acc
                })
                .collect()
        })
        .collect()
}

/// `max |Π𝓠 − 𝓠|` over nodes, with `𝓠` embedded in the stacked `Z` vector.
pub fn q_projection_defect(q: &[Vec<f64>], t: f64, params: &FuchsianParameters) -> f64 {
    let nf = q.len();
    let ops = OperatorSet::new(t);
    let blocks = BlockOperators::new(&ops, nf, 1, params.kappa, params.nu);
    let mut worst = 0.0f64;
    let n = q.first().map_or(0, |v| v.len());
    for node in 0..n {
        let mut z = nalgebra::DVector::zeros(blocks.dim());
        for (k, qk) in q.iter().enumerate() {
            z[5 * k] = qk[node];
        }
        let d = &blocks.pi * &z - &z;
        worst = worst.max(d.amax());
    }
    worst
}

fn l2(f: &[f64], dx: f64) -> f64 {
    (f.iter().map(|v| v * v).sum::<f64>() * dx).sqrt()
}

/// Discrete `H^k` norm `(Σ_{j≤k} ‖∂_ρ^j f‖²)^{1/2}`.
pub fn hk_norm(spectral: &Spectral, f: &[f64], k: u32) -> f64 {
    let dx = spectral.length() / f.len() as f64;
    let mut acc = l2(f, dx).powi(2);
    for j in 1..=k {
        acc += l2(&spectral.derivative(f, j), dx).powi(2);
    }
    acc.sqrt()
}

/// Norms of a set of channels combined with the Euclidean fiber product.
fn channel_norms(
    spectral: &Spectral,
    chans: &[&[f64]],
    k: u32,
) -> (f64, f64, f64) {
    let dx = spectral.length() / spectral.n() as f64;
    let l = chans.iter().map(|c| l2(c, dx).powi(2)).sum::<f64>().sqrt();
    let sup = chans
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let h = chans.iter().map(|c| hk_norm(spectral, c, k).powi(2)).sum::<f64>().sqrt();
    (l, sup, h)
}

/// One row of [`DiagnosticsSeries`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: f64,
    pub v0_l2: f64,
    pub v0_sup: f64,
    pub v0_hk: f64,
    pub pv_l2: f64,
    pub pv_sup: f64,
    pub pv_hk: f64,
    pub dv_l2: f64,
    pub dv_hk: f64,
    pub w_l2: f64,
    pub x_l2: f64,
    pub y_l2: f64,
    pub y_sup: f64,
    /// `‖ΠZ‖ = (‖W‖² + ‖X‖²)^{1/2}`.
    pub pi_z: f64,
    pub q_l2: f64,
    pub q_projection_defect: f64,
    pub energy: f64,
    /// Largest `(2−t)|V₄|t^{z−½}` on grid nodes inside `M_{r₀}`.
    pub ubar_ratio: f64,
    pub y_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsOptions {
    pub hk_order: u32,
    pub flow: FlowOptions,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            hk_order: 2,
            flow: FlowOptions::default(),
        }
    }
}

/// Norms of every stored snapshot plus the `Y` fields needed for the Cauchy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub rows: Vec<SeriesRow>,
    /// `Y` per snapshot, laid out as in [`FuchsianSnapshot::y`].
    pub y_fields: Vec<Vec<f64>>,
    pub dx: f64,
}

impl DiagnosticsSeries {
    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn column(&self, f: impl Fn(&SeriesRow) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }
}

/// Computes a [`DiagnosticsSeries`] over a history ordered by decreasing `t`.
#[allow(clippy::too_many_arguments)]
pub fn diagnostics_series(
    history: &[GridField],
    params: &FuchsianParameters,
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    spectral: &Spectral,
    opts: &DiagnosticsOptions,
    exec: Execution,
) -> Result<DiagnosticsSeries> {
    if history.is_empty() {
        return Err(Error::Insufficient("empty history".into()));
    }
    let n = history[0].n_rho;
    let dx = chart.spacing(n);
    let k = opts.hk_order;
    // Snapshots are processed in parallel; the flow inversion inside runs sequentially.
    let rows: Vec<Result<(SeriesRow, Vec<f64>)>> = map_indexed(exec, history.len(), |i| {
        let g = &history[i];
        let t = g.t;
        let snap = fuchsian_variables(g, params, coeffs, chart, spectral, &opts.flow, Execution::Sequential)?;
        let nf = g.n_fields;
        let v0: Vec<&[f64]> = (0..nf).map(|k| g.channel(k, V0)).collect();
        let pv: Vec<&[f64]> = (0..nf).flat_map(|k| (1..5).map(move |c| (k, c))).map(|(k, c)| g.channel(k, c)).collect();
        let (v0_l2, v0_sup, v0_hk) = channel_norms(spectral, &v0, k);
        let (pv_l2, pv_sup, pv_hk) = channel_norms(spectral, &pv, k);
        let dv: Vec<Vec<f64>> = (0..g.n_channels())
            .map(|ch| spectral.derivative(g.channel_by_index(ch), 1))
            .collect();
        let dv_refs: Vec<&[f64]> = dv.iter().map(|v| v.as_slice()).collect();
        let (dv_l2, _, dv_hk) = channel_norms(spectral, &dv_refs, k);
        let wl = l2(&snap.w.values, dx);
        let xl = l2(&snap.x.values, dx);
        let yfin: Vec<f64> = snap.y.iter().map(|v| if v.is_finite() { *v } else { 0.0 }).collect();
        let y_l2 = l2(&yfin, dx);
        let y_sup = yfin.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let q = q_source(g, params, coeffs, chart, spectral);
        let q_l2 = q.iter().map(|c| l2(c, dx).powi(2)).sum::<f64>().sqrt();
        let qd = q_projection_defect(&q, t, params);
        let ops = OperatorSet::new(t);
        let mut energy = 0.0;
        for node in 0..n {
            for kk in 0..nf {
                let wf = fiber(&snap.w, node, kk);
                let xf = fiber(&snap.x, node, kk);
                energy += (wf.transpose() * ops.b0 * wf)[(0, 0)] + (xf.transpose() * ops.b0 * xf)[(0, 0)];
                energy += (2.0 - t) * yfin[kk * n + node].powi(2);
            }
        }
        energy *= dx;
        let ubar_ratio = ubar_ratio(g, chart, params.z);
        Ok((
            SeriesRow {
                t,
                v0_l2,
                v0_sup,
                v0_hk,
                pv_l2,
                pv_sup,
                pv_hk,
                dv_l2,
                dv_hk,
                w_l2: wl,
                x_l2: xl,
                y_l2,
                y_sup,
                pi_z: (wl * wl + xl * xl).sqrt(),
                q_l2,
                q_projection_defect: qd,
                energy,
                ubar_ratio,
                y_failures: snap.y_failed.len(),
            },
            snap.y,
        ))
    });
    let mut out = DiagnosticsSeries {
        rows: Vec::with_capacity(history.len()),
        y_fields: Vec::with_capacity(history.len()),
        dx,
    };
    for r in rows {
        let (row, y) = r?;
        out.rows.push(row);
        out.y_fields.push(y);
    }
    Ok(out)
}

fn fiber(g: &GridField, node: usize, k: usize) -> nalgebra::Vector5<f64> {
    nalgebra::Vector5::from_fn(|c, _| g.get(node, k, c))
}

/// Largest `(2−t)|V₄|t^{z−½}` over nodes in `M_{r₀}`, i.e. `|ū|/(r t^{1−z})`.
pub fn ubar_ratio(g: &GridField, chart: &RadialChart, z: f64) -> f64 {
    let t = g.t;
    let fac = (2.0 - t) * t.powf(z - 0.5);
    let mut m = 0.0f64;
    for j in 0..g.n_rho {
        if chart.in_domain(t, chart.node(g.n_rho, j)) {
            for k in 0..g.n_fields {
                m = m.max(fac * g.get(j, k, V4).abs());
            }
        }
    }
    m
}

/// Least-squares fit of `log q = a log t + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% confidence interval of the exponent.
    pub ci95: (f64, f64),
    pub samples: usize,
}

pub fn decay_fit(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    if times.len() != values.len() {
        return Err(Error::validation("times and values differ in length"));
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 8 {
        return Err(Error::Insufficient(format!(
            "{} samples in window [{}, {}], at least 8 are needed",
            pts.len(),
            window.0,
            window.1
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::validation(format!("nonpositive value {v} at t = {t}")));
    }
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::validation("all samples share one time"));
    }
    let a = sxy / sxx;
    let b = my - a * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - a * x - b).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let q = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| Error::Domain(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(DecayFit {
        exponent: a,
        intercept: b,
        r_squared: r2,
        ci95: (a - q * se, a + q * se),
        samples: pts.len(),
    })
}

/// Verdict on one bound: the smallest constant that makes it hold over the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundVerdict {
    pub name: String,
    pub statement: String,
    pub constant: f64,
    pub ceiling: f64,
    pub passed: bool,
}

fn verdict(name: &str, statement: String, constant: f64, reference: f64, factor: f64) -> BoundVerdict {
    let ceiling = factor * reference;
    BoundVerdict {
        name: name.into(),
        statement,
        constant,
        ceiling,
        passed: constant.is_finite() && constant <= ceiling,
    }
}

/// Best constants for the solution bounds; each ceiling is `factor` times the
/// value of the same normalised quantity at the first (`t = 1`) row.
pub fn bound_check(
    series: &DiagnosticsSeries,
    params: &FuchsianParameters,
    factor: f64,
) -> Vec<BoundVerdict> {
    let rows = &series.rows;
    let first = &rows[0];
    let best = |f: &dyn Fn(&SeriesRow) -> f64| rows.iter().map(f).fold(0.0f64, f64::max);
    let (eps, kappa, nu, z) = (params.epsilon, params.kappa, params.nu, params.z);
    let mut out = vec![
        verdict(
            "v0_sup_bounded",
            "|V0|_inf <= C".into(),
            best(&|r| r.v0_sup),
            first.v0_sup,
            factor,
        ),
        verdict(
            "v0_hk_growth",
            format!("|V0|_Hk <= C t^-{eps:.4}"),
            best(&|r| r.v0_hk * r.t.powf(eps)),
            first.v0_hk,
            factor,
        ),
        verdict(
            "pv_hk_decay",
            format!("|PV|_Hk <= C t^{nu:.4}"),
            best(&|r| r.pv_hk * r.t.powf(-nu)),
            first.pv_hk,
            factor,
        ),
        verdict(
            "dv_hk_growth",
            format!("|DV|_Hk <= C t^-{kappa:.4}"),
            best(&|r| r.dv_hk * r.t.powf(kappa)),
            first.dv_hk,
            factor,
        ),
        verdict(
            "pi_z_decay",
            format!("|Pi Z| <= C t^{:.4}", kappa - z),
            best(&|r| r.pi_z * r.t.powf(z - kappa)),
            first.pi_z,
            factor,
        ),
    ];
    // Cauchy property of Π⊥Z = Y: sup_{t<s} |Y(t) − Y(s)| ≤ C s^{κ−z}.
    let mut cauchy = 0.0f64;
    for (i, ys) in series.y_fields.iter().enumerate() {
        let s = rows[i].t;
        for yt in &series.y_fields[i + 1..] {
            let d: f64 = ys
                .iter()
                .zip(yt)
                .map(|(a, b)| if a.is_finite() && b.is_finite() { (a - b).powi(2) } else { 0.0 })
                .sum::<f64>()
                * series.dx;
            cauchy = cauchy.max(d.sqrt() * s.powf(z - kappa));
        }
    }
    out.push(verdict(
        "y_cauchy",
        format!("|Y(t) - Y(s)| <= C s^{:.4} for t < s", kappa - z),
        cauchy,
        first.y_l2,
        factor,
    ));
    out.push(verdict(
        "ubar_pointwise",
        format!("|ubar| <= C rbar/(rbar^2 - tbar^2) (1 - tbar/rbar)^{:.4}", 1.0 - z),
        best(&|r| r.ubar_ratio),
        first.ubar_ratio,
        factor,
    ));
    out
}

/// Smallest `C ≥ 0` with `𝓔(t) ≤ e^{C(1−t)} 𝓔(1)` over the series.
pub fn energy_growth_constant(series: &DiagnosticsSeries) -> f64 {
    let e1 = series.rows[0].energy;
    let mut c = 0.0f64;
    for r in &series.rows[1..] {
        if r.t < 1.0 {
            if !r.energy.is_finite() {
                return f64::INFINITY;
            }
            if e1 > 0.0 && r.energy > 0.0 {
                c = c.max((r.energy / e1).ln() / (1.0 - r.t));
            } else if e1 == 0.0 && r.energy > 0.0 {
                return f64::INFINITY;
            }
        }
    }
    c
}

/// Pointwise residual of the conformal wave equation at a stored snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveResidual {
    pub t: f64,
    /// Nodes inside `M_{r₀}` (where `χ = 1`) at which the residual is evaluated.
    pub mask: Vec<bool>,
    /// Residual per field and node (zero where `mask` is false).
    pub values: Vec<Vec<f64>>,
}

impl WaveResidual {
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter().zip(&self.mask).filter(|(_, m)| **m).map(|(x, _)| x.abs()))
            .fold(0.0, f64::max)
    }
}

/// Evaluates `(t−2)t∂_t²u + r²∂_r²u + 2r(1−t)∂_r∂_tu + 2(t−1)∂_tu − f` with
/// `u = t^{−1/2}V₄` at the stored snapshot nearest `t_check`.
///
/// Time derivatives are centered differences in `τ` over the neighbouring
/// snapshots, which must be equally spaced in `τ`.
pub fn wave_residual(
    history: &[GridField],
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    spectral: &Spectral,
    t_check: f64,
) -> Result<WaveResidual> {
    if history.len() < 3 {
        return Err(Error::Insufficient("at least three snapshots are needed".into()));
    }
    let i = (1..history.len() - 1)
        .min_by(|&a, &b| {
            (history[a].t - t_check)
                .abs()
                .total_cmp(&(history[b].t - t_check).abs())
        })
        .unwrap();
    let (gm, g, gp) = (&history[i - 1], &history[i], &history[i + 1]);
    let (tm, t, tp) = (tau_of_t(gm.t)?, tau_of_t(g.t)?, tau_of_t(gp.t)?);
    let h = t - tp;
    if !((tm - t) - h).abs().le(&(1e-8 * h.abs())) || h == 0.0 {
        return Err(Error::Insufficient(format!(
            "snapshots around t = {} are not equally spaced in tau",
            g.t
        )));
    }
    let n = g.n_rho;
    let nf = g.n_fields;
    let tt = g.t;
    let alpha = 1.0 / (tt * (2.0 - tt));
    let dalpha = -(2.0 - 2.0 * tt) * alpha * alpha;
    let mask: Vec<bool> = (0..n)
        .map(|j| {
            let rho = chart.node(n, j);
            chart.in_domain(tt, rho) && chart.chi(rho) == 1.0
        })
        .collect();
    let rho: Vec<f64> = chart.nodes(n);
    let m = chart.m as f64;
    let euler = |f: &[f64]| -> Vec<f64> {
        spectral
            .derivative(f, 1)
            .iter()
            .zip(&rho)
            .map(|(d, r)| r / m * d)
            .collect()
    };
    let u_of = |gg: &GridField, k: usize| -> Vec<f64> {
        let s = gg.t.sqrt();
        gg.channel(k, V4).iter().map(|v| v / s).collect()
    };
    let p = AngularPoint::equator();
    let mut values = vec![vec![0.0; n]; nf];
    for k in 0..nf {
        let (um, u, up) = (u_of(gm, k), u_of(g, k), u_of(gp, k));
        let du: Vec<f64> = (0..n).map(|j| (um[j] - up[j]) / (2.0 * h)).collect();
        let ddu: Vec<f64> = (0..n).map(|j| (um[j] - 2.0 * u[j] + up[j]) / (h * h)).collect();
        let d1 = euler(&u);
        let d2 = euler(&d1);
        let d_du = euler(&du);
        for j in 0..n {
            if !mask[j] {
                continue;
            }
            let ut = alpha * du[j];
            let utt = alpha * alpha * ddu[j] + dalpha * du[j];
            let lhs = (tt - 2.0) * tt * utt
                + (d2[j] - d1[j])
                + 2.0 * (1.0 - tt) * alpha * d_du[j]
                + 2.0 * (tt - 1.0) * ut;
            values[k][j] = lhs;
        }
    }
    if !coeffs.is_zero() {
        for j in (0..n).filter(|&j| mask[j]) {
            let r = chart.rho_pow(rho[j]);
            let f = source_f(coeffs, tt, r, p, &g.fibers_at(j))?;
            for k in 0..nf {
                values[k][j] -= f[k];
            }
        }
    }
    Ok(WaveResidual { t: tt, mask, values })
}

/// One row of [`FlowProbe`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub radius: f64,
    /// `ω(R) = sup |𝓕|`.
    pub sup_flow: f64,
    pub sup_dflow_weighted: f64,
    pub sup_inverse_weighted: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProbe {
    pub rows: Vec<ProbeRow>,
    /// Whether `ω(R)` decreases strictly along the (decreasing) radius sequence.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeOptions {
    pub radii: Vec<f64>,
    pub n_t: usize,
    pub t_min: f64,
    pub n_rho: usize,
    /// Initial directions; random unit vectors from `seed` when empty.
    pub directions: Vec<Vec<f64>>,
    pub n_directions: usize,
    pub seed: u64,
    pub flow: FlowOptions,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            radii: vec![0.4, 0.2, 0.1],
            n_t: 12,
            t_min: 1e-3,
            n_rho: 7,
            directions: Vec::new(),
            n_directions: 6,
            seed: 0,
            flow: FlowOptions::default(),
        }
    }
}

/// Measures the constants of the flow assumptions over sampled `(t, ρ, ξ)`.
pub fn flow_assumption_probe(
    coeffs: &CartesianCoefficients,
    chart: &RadialChart,
    epsilon: f64,
    opts: &ProbeOptions,
    exec: Execution,
) -> Result<FlowProbe> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    if opts.radii.is_empty() || opts.n_t < 2 || !(opts.t_min > 0.0 && opts.t_min < 1.0) {
        return Err(Error::validation("probe needs radii, n_t >= 2 and t_min in (0, 1)"));
    }
    let nf = coeffs.n_fields();
    let dirs: Vec<Vec<f64>> = if opts.directions.is_empty() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        (0..opts.n_directions)
            .map(|_| {
                let v: Vec<f64> = (0..nf).map(|_| StandardNormal.sample(&mut rng)).collect();
                let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / s).collect()
            })
            .collect()
    } else {
        opts.directions.clone()
    };
    if dirs.iter().any(|d| d.len() != nf) {
        return Err(Error::validation("direction length does not match the number of fields"));
    }
    let b = reduced_bbar(coeffs);
    let end = CUTOFF_END * chart.rho0;
    let rhos: Vec<f64> = (0..opts.n_rho)
        .map(|i| -end + 2.0 * end * (i as f64 + 0.5) / opts.n_rho as f64)
        .chain(std::iter::once(chart.peak_coupling().0))
        .collect();
    let times: Vec<f64> = (0..opts.n_t)
        .map(|i| opts.t_min.powf(i as f64 / (opts.n_t - 1) as f64))
        .collect();
    let mut rows = Vec::new();
    for &radius in &opts.radii {
        let cases: Vec<(f64, &Vec<f64>)> = rhos.iter().flat_map(|&r| dirs.iter().map(move |d| (r, d))).collect();
        let per: Vec<(f64, f64, f64, usize)> = map_indexed(exec, cases.len(), |idx| {
            let (rho, d) = cases[idx];
            let c = EffectiveCoefficient(b.scaled(chart.effective_radius(rho)));
            let xi: Vec<f64> = d.iter().map(|x| radius * x).collect();
            let (mut sf, mut sd, mut si, mut fail) = (0.0f64, 0.0f64, 0.0f64, 0usize);
            for &t in &times {
                let tw = t.powf(epsilon);
                match flow_tau(tau_of_t(t).unwrap_or(f64::NEG_INFINITY), 0.0, &c, &xi, &opts.flow) {
                    Ok(FlowResult::Completed { state, .. }) => {
                        sf = sf.max(state.iter().map(|x| x * x).sum::<f64>().sqrt());
                    }
                    _ => {
                        fail += 1;
                        continue;
                    }
                }
                match dflow(t, 1.0, &c, &xi, &opts.flow) {
                    Ok((m, inv)) => {
                        sd = sd.max(tw * m.norm());
                        si = si.max(tw * inv.norm());
                    }
                    Err(_) => fail += 1,
                }
            }
            (sf, sd, si, fail)
        });
        rows.push(per.iter().fold(
            ProbeRow {
                radius,
                sup_flow: 0.0,
                sup_dflow_weighted: 0.0,
                sup_inverse_weighted: 0.0,
                failures: 0,
            },
            |mut acc, p| {
                acc.sup_flow = acc.sup_flow.max(p.0);
                acc.sup_dflow_weighted = acc.sup_dflow_weighted.max(p.1);
                acc.sup_inverse_weighted = acc.sup_inverse_weighted.max(p.2);
                acc.failures += p.3;
                acc
            },
        ));
    }
    let monotone = rows.windows(2).all(|w| {
        (w[1].radius < w[0].radius) == (w[1].sup_flow < w[0].sup_flow) && w[1].failures == 0
    });
    Ok(FlowProbe { rows, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::model_condition_h;
    use crate::free_wave::FreeWave;
    use crate::geometry::{initial_field, Profile};
    use crate::solver::{Evolution, SolverConfig};
    use crate::system::DEFAULT_EPSILON;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn params() -> FuchsianParameters {
        crate::system::select_parameters(DEFAULT_EPSILON, Some(0.1)).unwrap()
    }

    fn condition_h() -> CartesianCoefficients {
        model_condition_h(&DMatrix::identity(2, 2), &[0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0]).unwrap()
    }

    fn scalar() -> CartesianCoefficients {
        let mut c = CartesianCoefficients::zeros(1);
        c.set(0, 0, 0, 0, 0, 1.0);
        c
    }

    #[test]
    fn zero_field_gives_zero_variables() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let sp = Spectral::new(32, chart.period());
        let g = GridField::zeros(0.4, 32, 2);
        let s = fuchsian_variables(&g, &params(), &condition_h(), &chart, &sp, &FlowOptions::default(), Execution::Sequential)
            .unwrap();
        assert!(s.w.values.iter().chain(&s.x.values).chain(&s.y).all(|v| *v == 0.0));
        assert!(s.y_failed.is_empty());
    }

    #[test]
    fn y_equals_v0_without_null_coefficients() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let sp = Spectral::new(32, chart.period());
        let mut g = GridField::zeros(0.3, 32, 1);
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = (0.2 * i as f64).cos());
        let s = fuchsian_variables(&g, &params(), &CartesianCoefficients::zeros(1), &chart, &sp, &FlowOptions::default(), Execution::Sequential)
            .unwrap();
        assert_eq!(&s.y[..], g.channel(0, V0));
    }

    #[test]
    fn y_roundtrip_for_scalar_riccati() {
        let chart = RadialChart::with_unit_peak(1).unwrap();
        let n = 32;
        let sp = Spectral::new(n, chart.period());
        let mut g = GridField::zeros(0.6, n, 1);
        for j in 0..n {
            g.set(j, 0, V0, -0.3 * (1.0 + (0.4 * j as f64).sin()));
        }
        let o = FlowOptions::default();
        let s = fuchsian_variables(&g, &params(), &scalar(), &chart, &sp, &o, Execution::Parallel).unwrap();
        assert!(s.y_failed.is_empty());
        // Closed form: Y = V₀ / (1 − c V₀ ln(t/(2−t))).
        let l = (0.6f64 / 1.4).ln();
        for j in 0..n {
            let c = chart.effective_radius(chart.node(n, j));
            let v = g.get(j, 0, V0);
            assert_relative_eq!(s.y[j], v / (1.0 - c * v * l), epsilon = 1e-10);
        }
        assert!(y_roundtrip_error(&s, &g, &scalar(), &chart, &o, Execution::Sequential).unwrap() < 1e-10);
    }

    #[test]
    fn q_source_projection_and_null_form() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let n = 32;
        let sp = Spectral::new(n, chart.period());
        let mut g = GridField::zeros(0.5, n, 2);
        g.values.iter_mut().enumerate().for_each(|(i, v)| *v = (0.1 * i as f64).sin());
        let q = q_source(&g, &params(), &condition_h(), &chart, &sp);
        assert!(q.iter().flatten().any(|v| *v != 0.0));
        assert_eq!(q_projection_defect(&q, 0.5, &params()), 0.0);
        let mut null = CartesianCoefficients::zeros(2);
        null.set_matrix(0, 0, 1, &nalgebra::Matrix4::from_diagonal(&[-1.0, 1.0, 1.0, 1.0].into()));
        assert!(q_source(&g, &params(), &null, &chart, &sp).iter().flatten().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn hk_norm_of_a_sine() {
        let sp = Spectral::new(64, 2.0 * std::f64::consts::PI);
        let f: Vec<f64> = (0..64).map(|j| (3.0 * j as f64 * 2.0 * std::f64::consts::PI / 64.0).sin()).collect();
        let pi = std::f64::consts::PI;
        assert_relative_eq!(hk_norm(&sp, &f, 0), pi.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(hk_norm(&sp, &f, 2), (pi * (1.0 + 9.0 + 81.0)).sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn decay_fit_examples() {
        let ts: Vec<f64> = (0..20).map(|i| 0.02 + 0.48 * i as f64 / 19.0).collect();
        let v: Vec<f64> = ts.iter().map(|t| t.sqrt()).collect();
        let f = decay_fit(&ts, &v, (0.02, 0.5)).unwrap();
        assert!((f.exponent - 0.5).abs() < 1e-12);
        let v: Vec<f64> = ts.iter().map(|t| 3.0 * t.powf(0.45)).collect();
        let f = decay_fit(&ts, &v, (0.0, 1.0)).unwrap();
        assert_relative_eq!(f.exponent, 0.45, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
        assert!(f.ci95.0 <= f.exponent && f.exponent <= f.ci95.1);
        let mut bad = v.clone();
        bad[3] = 0.0;
        assert!(decay_fit(&ts, &bad, (0.0, 1.0)).is_err());
        assert!(matches!(decay_fit(&ts[..5], &v[..5], (0.0, 1.0)), Err(Error::Insufficient(_))));
    }

    #[test]
    fn decay_fit_interval_coverage_is_nominal() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let ts: Vec<f64> = (0..40).map(|i| 0.01 + 0.5 * i as f64 / 39.0).collect();
        let trials = 400;
        let mut hits = 0;
        for _ in 0..trials {
            let v: Vec<f64> = ts
                .iter()
                .map(|t| t.powf(0.3) * (0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal)).exp())
                .collect();
            let f = decay_fit(&ts, &v, (0.0, 1.0)).unwrap();
            assert!(f.r_squared > 0.99);
            hits += usize::from(f.ci95.0 < 0.3 && 0.3 < f.ci95.1);
        }
        let coverage = hits as f64 / trials as f64;
        assert!((0.92..=0.98).contains(&coverage), "{coverage}");
    }

    fn wave_setup(n: usize, stride: usize, t_min: f64) -> (RadialChart, Spectral, Vec<GridField>, FreeWave) {
        let chart = RadialChart::new(4, 1.0).unwrap();
        let w = FreeWave::outgoing(Profile::GaussianInRootR { amplitude: 1.0, center: 0.7, width: 0.14, root: 4 });
        let cfg = SolverConfig { n_rho: n, t_min, delta_tau: 1e-3, snapshot_stride: stride, ..Default::default() };
        let ev = Evolution::new(CartesianCoefficients::zeros(1), chart, cfg, Execution::Parallel).unwrap();
        let g = initial_field(&[w.initial_data()], &chart, n).unwrap();
        let h = ev.evolve(&g).unwrap().history;
        (chart, Spectral::new(n, chart.period()), h, w)
    }

    #[test]
    fn zero_solution_passes_all_bounds() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let sp = Spectral::new(32, chart.period());
        let hist: Vec<GridField> = (0..10).map(|i| GridField::zeros(1.0 - 0.09 * i as f64, 32, 2)).collect();
        let s = diagnostics_series(&hist, &params(), &condition_h(), &chart, &sp, &DiagnosticsOptions::default(), Execution::Parallel)
            .unwrap();
        let v = bound_check(&s, &params(), 100.0);
        assert_eq!(v.len(), 7);
        assert!(v.iter().all(|b| b.passed && b.constant == 0.0), "{v:?}");
        assert_eq!(energy_growth_constant(&s), 0.0);
    }

    #[test]
    fn free_wave_residual_and_sensitivity() {
        let (chart, sp, hist, _) = wave_setup(128, 1, 0.8);
        let c = CartesianCoefficients::zeros(1);
        let r = wave_residual(&hist, &c, &chart, &sp, 0.85).unwrap();
        assert!(r.mask.iter().any(|m| *m));
        let floor = r.max_abs();
        assert!(floor < 1e-4, "{floor}");
        let i = hist.iter().position(|g| g.t == r.t).unwrap();
        let mut bad = hist.clone();
        bad[i].channel_mut(0, V4).iter_mut().for_each(|v| *v *= 1.01);
        let rb = wave_residual(&bad, &c, &chart, &sp, 0.85).unwrap();
        assert!(rb.max_abs() > 100.0 * floor, "{} vs {floor}", rb.max_abs());
        let zero: Vec<GridField> = hist.iter().map(|g| GridField::zeros(g.t, g.n_rho, 1)).collect();
        assert_eq!(wave_residual(&zero, &c, &chart, &sp, 0.85).unwrap().max_abs(), 0.0);
        assert!(wave_residual(&hist[..2], &c, &chart, &sp, 0.9).is_err());
    }

    #[test]
    fn free_wave_v0_bound_passes() {
        let (chart, sp, hist, _) = wave_setup(64, 20, 0.3);
        let p = params();
        let s = diagnostics_series(&hist, &p, &CartesianCoefficients::zeros(1), &chart, &sp, &DiagnosticsOptions::default(), Execution::Parallel)
            .unwrap();
        let v = bound_check(&s, &p, 100.0);
        let b = v.iter().find(|b| b.name == "v0_sup_bounded").unwrap();
        assert!(b.passed && b.constant.is_finite() && b.constant > 0.0);
        assert!(s.rows.iter().all(|r| r.q_l2 == 0.0 && r.y_failures == 0));
    }

    #[test]
    fn probe_examples() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let o = ProbeOptions { n_t: 5, n_rho: 3, n_directions: 3, ..Default::default() };
        let z = flow_assumption_probe(&CartesianCoefficients::zeros(2), &chart, 0.09, &o, Execution::Parallel).unwrap();
        for r in &z.rows {
            assert_relative_eq!(r.sup_flow, r.radius, epsilon = 1e-14);
        }
        assert!(z.monotone);
        let h = flow_assumption_probe(&condition_h(), &chart, 0.09, &o, Execution::Parallel).unwrap();
        let ratios: Vec<f64> = h.rows.iter().map(|r| r.sup_flow / r.radius).collect();
        for r in &ratios {
            assert!((r / ratios[0] - 1.0).abs() < 0.1, "{ratios:?}");
        }
        // An even chart power keeps the coefficient nonnegative, so ξ < 0 decays.
        let neg = ProbeOptions { directions: vec![vec![-1.0]], ..o };
        let s = flow_assumption_probe(&scalar(), &RadialChart::with_unit_peak(2).unwrap(), 0.09, &neg, Execution::Sequential)
            .unwrap();
        for r in &s.rows {
            assert!(r.sup_flow <= r.radius + 1e-12 && r.failures == 0, "{r:?}");
        }
    }
}
