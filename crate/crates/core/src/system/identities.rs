//! Randomised and worst-case checks of the algebraic structure of the
//! first-order and block operators.

use nalgebra::{DMatrix, DVector, Matrix5, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{boundary_symbol, BlockOperators, Boundary, OperatorSet};
use crate::geometry::RadialChart;

/// Deliberate corruption of the operators, used to check that the suite
/// detects a broken `𝓑`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Flips the sign of the `(0, 0)` entry of `𝓑`.
    FlipBcalSign,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentitySuiteOptions {
    pub seed: u64,
    pub n_vectors: usize,
    pub n_times: usize,
    pub n_kappa_nu: usize,
    pub n_boundary_times: usize,
    pub tolerance: f64,
    pub fault: Option<Fault>,
}

impl Default for IdentitySuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            n_vectors: 200,
            n_times: 50,
            n_kappa_nu: 20,
            n_boundary_times: 100,
            tolerance: 1e-12,
            fault: None,
        }
    }
}

/// Outcome of one identity or inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub description: String,
    pub passed: bool,
    /// Largest violation found: entrywise error for identities, scaled
    /// shortfall for inequalities.
    pub max_violation: f64,
    pub tolerance: f64,
}

fn operators(t: f64, fault: Option<Fault>) -> OperatorSet {
    let mut o = OperatorSet::new(t);
    if fault == Some(Fault::FlipBcalSign) {
        o.bcal[(0, 0)] = -o.bcal[(0, 0)];
    }
    o
}

fn max_abs5(m: &Matrix5<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Tracks the worst shortfall of `yᵀ L y ≤ yᵀ R y` over random vectors and
/// over the extremal eigenvector of `sym(R − L)`.
struct QuadraticBound {
    worst: f64,
}

impl QuadraticBound {
    fn new() -> Self {
        Self { worst: 0.0 }
    }

    fn check(&mut self, lhs: &DMatrix<f64>, rhs: &DMatrix<f64>, samples: &[DVector<f64>]) {
        let mut eval = |y: &DVector<f64>| {
            let l = y.dot(&(lhs * y));
            let r = y.dot(&(rhs * y));
            let short = (l - r) / r.abs().max(1.0);
            self.worst = self.worst.max(short);
        };
        for y in samples {
            eval(y);
        }
        let d = rhs - lhs;
        let sym = (&d + d.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let (imin, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, &v)| if v < b.1 { (i, v) } else { b });
        eval(&eig.eigenvectors.column(imin).into_owned());
    }
}

fn to_d(m: &Matrix5<f64>) -> DMatrix<f64> {
    DMatrix::from_iterator(5, 5, m.iter().copied())
}

fn random_vectors(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|_| DVector::from_fn(dim, |_, _| StandardNormal.sample(rng)))
        .collect()
}

/// Deterministic `(κ, ν)` samples with `κ, ν ≥ 0` and `κ + ν ≤ sum_max`,
/// including points on the line `κ + ν = sum_max`.
pub fn kappa_nu_samples(n: usize, sum_max: f64) -> Vec<(f64, f64)> {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    (0..n)
        .map(|i| {
            let s = sum_max * (i + 1) as f64 / n as f64;
            let frac = (i as f64 * g).fract();
            (s * frac, s * (1.0 - frac))
        })
        .collect()
}

fn result(name: &str, description: &str, worst: f64, tol: f64) -> IdentityCheck {
    IdentityCheck {
        name: name.to_string(),
        description: description.to_string(),
        passed: worst <= tol,
        max_violation: worst,
        tolerance: tol,
    }
}

/// Runs every identity and inequality check.
///
/// Two inequalities are reported twice: with the constants as stated
/// (`h(Y,B⁰Y) ≤ 2h(Y,𝓑Y)` and `κ + ν ≤ ½`) and with the sharp constants
/// (`4` and `¼`). The stated versions fail at `t = 1`.
pub fn run_identity_suite(opts: &IdentitySuiteOptions) -> Vec<IdentityCheck> {
    let tol = opts.tolerance;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let times: Vec<f64> = (1..=opts.n_times)
        .map(|i| i as f64 / opts.n_times as f64)
        .collect();
    let n_fields = 2;
    let n_w = 1;
    let eta_dirs = [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]];

    let mut proj_idem = 0.0f64;
    let mut proj_sym = 0.0f64;
    let mut commute = 0.0f64;
    let mut hsym = 0.0f64;
    let mut lower = QuadraticBound::new();
    let mut bcal_stated = QuadraticBound::new();
    let mut bcal_sharp = QuadraticBound::new();
    let mut pi_idem = 0.0f64;
    let mut pi_comm = 0.0f64;
    let mut pi_range = 0.0f64;
    let mut pi_perp = 0.0f64;
    let mut block_sym = 0.0f64;
    let mut a0_lower = QuadraticBound::new();
    let mut kappa_stated = QuadraticBound::new();
    let mut kappa_sharp = QuadraticBound::new();

    let kn_stated = kappa_nu_samples(opts.n_kappa_nu, 0.5);
    let kn_sharp = kappa_nu_samples(opts.n_kappa_nu, 0.25);

    for &t in &times {
        let o = operators(t, opts.fault);
        let p = o.proj;
        proj_idem = proj_idem.max(max_abs5(&(p * p - p)));
        proj_sym = proj_sym.max(max_abs5(&(p.transpose() - p)));
        for b in [o.b0, o.b1, o.bcal] {
            commute = commute.max(max_abs5(&(b * p - p * b)));
        }
        let mut sym_list = vec![o.b0, o.b1];
        sym_list.extend(eta_dirs.iter().map(|&e| o.b_sigma(e)));
        for m in sym_list {
            hsym = hsym.max(max_abs5(&(m - m.transpose())));
        }

        let ys = random_vectors(&mut rng, opts.n_vectors, 5);
        let (id5, b0, bc) = (DMatrix::identity(5, 5), to_d(&o.b0), to_d(&o.bcal));
        lower.check(&id5, &b0, &ys);
        bcal_stated.check(&b0, &(&bc * 2.0), &ys);
        bcal_sharp.check(&b0, &(&bc * 4.0), &ys);

        let base = BlockOperators::new(&o, n_fields, n_w, 0.0, 0.0);
        let dim = base.dim();
        let pi = &base.pi;
        let perp = base.pi_perp();
        pi_idem = pi_idem.max(max_abs(&(pi * pi - pi))).max(max_abs(&(pi.transpose() - pi)));
        pi_comm = pi_comm.max(max_abs(&(&base.a0 * pi - pi * &base.a0)));
        let mut mats = vec![base.a1.clone()];
        mats.extend(eta_dirs.iter().map(|&e| base.a_sigma(&o, e)));
        for m in &mats {
            pi_range = pi_range
                .max(max_abs(&(pi * m - m)))
                .max(max_abs(&(m * pi - m)));
            pi_perp = pi_perp.max(max_abs(&(&perp * m))).max(max_abs(&(m * &perp)));
            block_sym = block_sym.max(max_abs(&(m - m.transpose())));
        }
        block_sym = block_sym.max(max_abs(&(&base.a0 - base.a0.transpose())));

        let zs = random_vectors(&mut rng, opts.n_vectors, dim);
        a0_lower.check(&DMatrix::identity(dim, dim), &base.a0, &zs);
        let zs_small = &zs[..opts.n_vectors.min(20)];
        for (set, bound) in [(&kn_stated, &mut kappa_stated), (&kn_sharp, &mut kappa_sharp)] {
            for &(k, nu) in set {
                let b = BlockOperators::new(&o, n_fields, n_w, k, nu);
                pi_comm = pi_comm.max(max_abs(&(&b.acal * &b.pi - &b.pi * &b.acal)));
                bound.check(&(&b.a0 * k), &b.acal, zs_small);
            }
        }
    }

    let mut inc = 0.0f64;
    let mut out_worst = f64::NEG_INFINITY;
    for i in 0..opts.n_boundary_times {
        let t = (i as f64 + 0.5) / opts.n_boundary_times as f64;
        inc = inc.max(max_abs5(&boundary_symbol(t, Boundary::Incoming)));
        let m = boundary_symbol(t, Boundary::Outgoing);
        let sym = (m + m.transpose()) * 0.5;
        let emax = SymmetricEigen::new(sym)
            .eigenvalues
            .iter()
            .fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        out_worst = out_worst.max(emax);
    }

    let a1_ratio = radial_speed_scaling_ratio();
    let a1_violation = ((a1_ratio - 2.0).abs() / 2.0 - 0.2).max(0.0);

    vec![
        result("projection_idempotent", "P^2 = P", proj_idem, tol),
        result("projection_symmetric", "P^T = P in h", proj_sym, tol),
        result("projection_commutes", "[B0,P] = [B1,P] = [Bcal,P] = 0", commute, tol),
        result("operators_symmetric", "B0, B1, Bsigma.eta symmetric in h", hsym, tol),
        result("b0_lower_bound", "h(Y,Y) <= h(Y,B0 Y)", lower.worst, tol),
        result(
            "b0_bcal_bound_stated",
            "h(Y,B0 Y) <= 2 h(Y,Bcal Y)",
            bcal_stated.worst,
            tol,
        ),
        result(
            "b0_bcal_bound_sharp",
            "h(Y,B0 Y) <= 4 h(Y,Bcal Y)",
            bcal_sharp.worst,
            tol,
        ),
        result("block_projection", "Pi^2 = Pi, Pi symmetric", pi_idem, tol),
        result("block_projection_commutes", "[A0,Pi] = [Acal,Pi] = 0", pi_comm, tol),
        result(
            "block_projection_range",
            "Pi A1 = A1 Pi = A1, Pi Asigma = Asigma Pi = Asigma",
            pi_range,
            tol,
        ),
        result(
            "block_projection_complement",
            "Pi_perp A1 = A1 Pi_perp = Pi_perp Asigma = Asigma Pi_perp = 0",
            pi_perp,
            tol,
        ),
        result("block_operators_symmetric", "A0, A1, Asigma.eta symmetric", block_sym, tol),
        result("block_a0_lower_bound", "hcal(Z,Z) <= hcal(Z,A0 Z)", a0_lower.worst, tol),
        result(
            "block_kappa_bound_stated",
            "kappa hcal(Z,A0 Z) <= hcal(Z,Acal Z) for kappa + nu <= 1/2",
            kappa_stated.worst,
            tol,
        ),
        result(
            "block_kappa_bound_sharp",
            "kappa hcal(Z,A0 Z) <= hcal(Z,Acal Z) for kappa + nu <= 1/4",
            kappa_sharp.worst,
            tol,
        ),
        result("boundary_incoming_zero", "incoming boundary symbol = 0", inc, tol),
        result(
            "boundary_outgoing_nonpositive",
            "outgoing boundary symbol negative semidefinite",
            out_worst.max(0.0),
            tol,
        ),
        result(
            "radial_speed_scaling",
            "sup |d/drho (chi rho/m) B1| halves when m doubles (within 20%)",
            a1_violation,
            0.0,
        ),
    ]
}

/// Ratio of `sup|∂_ρ((χρ/m)B¹)|` at `m = 1` to that at `m = 2`, measured by
/// central differences on a fine grid.
pub fn radial_speed_scaling_ratio() -> f64 {
    let sup = |m: u32| {
        let chart = RadialChart::new(m, 1.0).unwrap();
        let n = 4096;
        let h = chart.spacing(n);
        let b1max = (0..=100)
            .map(|i| {
                let b1 = OperatorSet::new(i as f64 / 100.0).b1;
                max_abs5(&b1)
            })
            .fold(0.0f64, f64::max);
        let g = |x: f64| chart.chi(x) * x / m as f64;
        (0..n)
            .map(|j| {
                let x = chart.node(n, j);
                ((g(x + h) - g(x - h)) / (2.0 * h)).abs() * b1max
            })
            .fold(0.0f64, f64::max)
    };
    sup(1) / sup(2)
}
