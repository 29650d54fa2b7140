//! Sampling classifier for the bounded weak null condition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{flow_tau, t_of_tau, EffectiveCoefficient, FlowOptions, FlowResult};
use crate::coefficients::{bbar_at, AngularPoint, CartesianCoefficients};
use crate::geometry::{RadialChart, CUTOFF_END};
use crate::par::{map_indexed, Execution};
use crate::{Error, Result};

/// Below this `max|b̄|` the system is treated as satisfying the null condition.
pub const NULL_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Null,
    Bounded,
    BlowUp,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzerOptions {
    /// Largest initial radius `R`; spheres of radius `R/3`, `2R/3`, `R` are sampled.
    pub radius: f64,
    /// Initial directions per spatial point (ignored for one field, which uses `±1`).
    pub n_xi: usize,
    /// Points per spatial axis `(ρ, θ, φ)`.
    pub n_y: usize,
    pub seed: u64,
    #[serde(flatten)]
    pub flow: FlowOptions,
}

impl Default for AnalyzerOptions {
    fn default() -> Self {
        Self {
            radius: 0.5,
            n_xi: 8,
            n_y: 6,
            seed: 0,
            flow: FlowOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleOutcome {
    Bounded,
    BlowUp,
    Failed,
}

/// One integrated trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub rho: f64,
    pub theta: f64,
    pub phi: f64,
    pub xi0: Vec<f64>,
    pub outcome: SampleOutcome,
    pub sup_norm: Option<f64>,
    pub blowup_t: Option<f64>,
    /// `| |ξ(τ_min)|² − |ξ0|² | / |ξ0|²`.
    pub norm_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub classification: Classification,
    pub sup_bound: Option<f64>,
    /// Largest blow-up time over the samples, i.e. the first one reached when
    /// evolving from `t = 1` toward `t = 0`.
    pub earliest_blowup_t: Option<f64>,
    pub max_bbar: f64,
    pub samples: usize,
    pub records: Vec<FlowSample>,
}

struct SpatialSample {
    rho: f64,
    angular: AngularPoint,
    coeff: EffectiveCoefficient,
}

fn spatial_samples(c: &CartesianCoefficients, chart: &RadialChart, n_y: usize) -> Vec<SpatialSample> {
    let end = CUTOFF_END * chart.rho0;
    let (peak, _) = chart.peak_coupling();
    let mut rhos: Vec<f64> = (0..n_y)
        .map(|i| -end + 2.0 * end * (i as f64 + 0.5) / n_y as f64)
        .collect();
    rhos.push(peak);
    rhos.push(-peak);
    let thetas: Vec<f64> = (0..n_y).map(|j| PI * (j as f64 + 0.5) / n_y as f64).collect();
    let phis: Vec<f64> = (0..n_y).map(|k| 2.0 * PI * k as f64 / n_y as f64).collect();
    let mut out = Vec::new();
    for &rho in &rhos {
        for &theta in &thetas {
            for &phi in &phis {
                let angular = AngularPoint { theta, phi };
                out.push(SpatialSample {
                    rho,
                    angular,
                    coeff: EffectiveCoefficient::at(c, chart, rho, angular),
                });
            }
        }
    }
    out
}

fn directions(n: usize, n_xi: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    (0..n_xi)
        .map(|_| loop {
            let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-8 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Largest `|b̄^K_{IJ}|` over a fixed angular grid.
pub fn max_bbar(c: &CartesianCoefficients) -> f64 {
    let mut m = 0.0f64;
    for j in 0..13 {
        for k in 0..16 {
            let p = AngularPoint {
                theta: PI * j as f64 / 12.0,
                phi: 2.0 * PI * k as f64 / 16.0,
            };
            m = m.max(bbar_at(c, p).max_abs());
        }
    }
    m
}

/// Samples the asymptotic flow over spatial points in the cutoff support and
/// initial data in the ball of radius `R`, integrating each trajectory from
/// `τ = 0` to `τ_min`.
pub fn check_bounded_weak_null(
    c: &CartesianCoefficients,
    chart: &RadialChart,
    opts: &AnalyzerOptions,
    exec: Execution,
) -> Result<FlowReport> {
    opts.flow.validate()?;
    if opts.n_xi == 0 || opts.n_y == 0 || !(opts.radius > 0.0) {
        return Err(Error::validation("n_xi, n_y and radius must be positive"));
    }
    let bmax = max_bbar(c);
    let n = c.n_fields();
    if bmax < NULL_TOLERANCE {
        return Ok(FlowReport {
            classification: Classification::Null,
            sup_bound: Some(opts.radius),
            earliest_blowup_t: None,
            max_bbar: bmax,
            samples: 0,
            records: Vec::new(),
        });
    }
    let spatial = spatial_samples(c, chart, opts.n_y);
    let radii: Vec<f64> = (1..=3).map(|k| opts.radius * k as f64 / 3.0).collect();
    let per_point: Vec<Vec<FlowSample>> = map_indexed(exec, spatial.len(), |idx| {
        let s = &spatial[idx];
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ idx as u64);
        let dirs = directions(n, opts.n_xi, &mut rng);
        let mut recs = Vec::with_capacity(dirs.len() * radii.len());
        for d in &dirs {
            for &r in &radii {
                let xi0: Vec<f64> = d.iter().map(|x| r * x).collect();
                recs.push(run_sample(s, xi0, &opts.flow));
            }
        }
        recs
    });
    let records: Vec<FlowSample> = per_point.into_iter().flatten().collect();
    let mut blow: Option<f64> = None;
    let mut failed = false;
    let mut sup = 0.0f64;
    for r in &records {
        match r.outcome {
            SampleOutcome::BlowUp => {
                let t = r.blowup_t.unwrap_or(0.0);
                blow = Some(blow.map_or(t, |b: f64| b.max(t)));
            }
            SampleOutcome::Failed => failed = true,
            SampleOutcome::Bounded => sup = sup.max(r.sup_norm.unwrap_or(0.0)),
        }
    }
    let classification = if blow.is_some() {
        Classification::BlowUp
    } else if failed {
        Classification::Inconclusive
    } else {
        Classification::Bounded
    };
    Ok(FlowReport {
        classification,
        sup_bound: (classification == Classification::Bounded).then_some(sup),
        earliest_blowup_t: blow,
        max_bbar: bmax,
        samples: records.len(),
        records,
    })
}

fn run_sample(s: &SpatialSample, xi0: Vec<f64>, opts: &FlowOptions) -> FlowSample {
    let n0: f64 = xi0.iter().map(|x| x * x).sum();
    let mut rec = FlowSample {
        rho: s.rho,
        theta: s.angular.theta,
        phi: s.angular.phi,
        xi0: xi0.clone(),
        outcome: SampleOutcome::Failed,
        sup_norm: None,
        blowup_t: None,
        norm_drift: None,
    };
    match flow_tau(opts.tau_min, 0.0, &s.coeff, &xi0, opts) {
        Ok(FlowResult::Completed { state, sup_norm }) => {
            let n1: f64 = state.iter().map(|x| x * x).sum();
            rec.outcome = SampleOutcome::Bounded;
            rec.sup_norm = Some(sup_norm);
            rec.norm_drift = Some(if n0 > 0.0 { (n1 - n0).abs() / n0 } else { 0.0 });
        }
        Ok(FlowResult::BlowUp { tau, .. }) => {
            rec.outcome = SampleOutcome::BlowUp;
            rec.blowup_t = Some(t_of_tau(tau));
        }
        Err(_) => {}
    }
    rec
}
