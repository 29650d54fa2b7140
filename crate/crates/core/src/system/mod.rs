//! First-order operators of the compactified wave system, the stacked
//! Fuchsian block operators, the quadratic source and the parameter set.
//!
//! Angular components are kept in the orthonormal frame of the round sphere,
//! so the fiber inner product `h` is the Euclidean product on `R⁵`.

mod identities;

pub use identities::{run_identity_suite, Fault, IdentityCheck, IdentitySuiteOptions};

use nalgebra::{DMatrix, Matrix5};
use serde::{Deserialize, Serialize};

use crate::coefficients::{bbar_at, AngularPoint, CartesianCoefficients};
use crate::geometry::RadialChart;
use crate::grid::{Fiber, V0, V1, V4, VPH, VTH};
use crate::{Error, Result};

/// `q(t) = (−1 + 2t² − t³)/(1 + 4t − 4t² + t³)`.
pub fn qtt(t: f64) -> f64 {
    let den = 1.0 + 4.0 * t - 4.0 * t * t + t * t * t;
    debug_assert!(den > 0.0);
    (-1.0 + 2.0 * t * t - t * t * t) / den
}

/// `p(t) = √((1 + 4t − 4t² + t³)/(2 − t))`.
pub fn ptt(t: f64) -> f64 {
    ((1.0 + 4.0 * t - 4.0 * t * t + t * t * t) / (2.0 - t)).sqrt()
}

/// Angular diagonal entry of `𝓒`.
pub fn c_angular(t: f64) -> f64 {
    let (t2, t3) = (t * t, t * t * t);
    (9.0 - 16.0 * t + 10.0 * t2 - 2.0 * t3) / (2.0 * (1.0 + 4.0 * t - 4.0 * t2 + t3))
}

/// The 5×5 operators of the first-order system at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSet {
    pub t: f64,
    pub b0: Matrix5<f64>,
    pub b1: Matrix5<f64>,
    pub bcal: Matrix5<f64>,
    pub ccal: Matrix5<f64>,
    pub proj: Matrix5<f64>,
}

impl OperatorSet {
    pub fn new(t: f64) -> Self {
        let s = 2.0 - t;
        let q = qtt(t);
        let b0 = Matrix5::from_diagonal(&[s, s, s, s, 1.0].into());
        let b1 = Matrix5::from_diagonal(&[t, -s, s * q, s * q, 0.0].into());
        let mut bcal = Matrix5::from_diagonal(&[2.0, s / 2.0, s / 2.0, s / 2.0, 0.5].into());
        bcal[(V4, V1)] = 0.5;
        let ca = c_angular(t);
        let mut ccal = Matrix5::from_diagonal(&[1.0, 0.0, ca, ca, 0.0].into());
        ccal[(V4, V0)] = 0.5 * t.sqrt();
        let proj = Matrix5::from_diagonal(&[0.0, 1.0, 1.0, 1.0, 1.0].into());
        Self {
            t,
            b0,
            b1,
            bcal,
            ccal,
            proj,
        }
    }

    /// `B^Σ η_Σ` for a frame covector `η = (η_θ, η_φ)`.
    pub fn b_sigma(&self, eta: [f64; 2]) -> Matrix5<f64> {
        let t = self.t;
        let p = ptt(t);
        let a = -1.0 / p;
        let b = -(2.0 - t) * t.sqrt() / p;
        let mut m = Matrix5::zeros();
        for (l, e) in [(VTH, eta[0]), (VPH, eta[1])] {
            m[(V0, l)] = a * e;
            m[(V1, l)] = b * e;
            m[(l, V0)] = a * e;
            m[(l, V1)] = b * e;
        }
        m
    }

    pub fn proj_perp(&self) -> Matrix5<f64> {
        Matrix5::identity() - self.proj
    }
}

/// Fuchsian parameters `(ε, κ, ν, z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuchsianParameters {
    pub epsilon: f64,
    pub kappa: f64,
    pub nu: f64,
    pub z: f64,
}

impl FuchsianParameters {
    /// Validates every inequality and returns the set, or the list of failed ones.
    pub fn new(epsilon: f64, kappa: f64, nu: f64, z: f64) -> Result<Self> {
        let p = Self {
            epsilon,
            kappa,
            nu,
            z,
        };
        let failed = p.violations();
        if failed.is_empty() {
            Ok(p)
        } else {
            Err(Error::Validation(failed))
        }
    }

    /// Names of the violated inequalities.
    pub fn violations(&self) -> Vec<String> {
        let Self {
            epsilon: e,
            kappa: k,
            nu: n,
            z,
        } = *self;
        let mut out = Vec::new();
        let mut check = |ok: bool, s: &str| {
            if !ok {
                out.push(format!("{s} (epsilon={e}, kappa={k}, nu={n}, z={z})"));
            }
        };
        check(e > 0.0 && e < 0.1, "0 < epsilon < 1/10");
        check(2.0 * e < k, "2 epsilon < kappa");
        check(k < 1.0 - e, "kappa < 1 - epsilon");
        check(k + n < 0.5 - e, "kappa + nu < 1/2 - epsilon");
        check(e < 2.0 * n, "epsilon < 2 nu");
        check(k <= 1.0 / 3.0, "kappa <= 1/3");
        check(z > 0.0 && z < k, "0 < z < kappa");
        out
    }
}

/// The worked choice `κ = 5/22`, `ν = 1/11` for `ε = 1/11`.
pub const DEFAULT_EPSILON: f64 = 1.0 / 11.0;

/// `z = ζ`, `ν = ½ − 5ζ`, `κ = 3ζ` with `ζ = z` if given and `ε` otherwise.
pub fn recipe_parameters(epsilon: f64, z: Option<f64>) -> Result<FuchsianParameters> {
    let zeta = z.unwrap_or(epsilon);
    FuchsianParameters::new(epsilon, 3.0 * zeta, 0.5 - 5.0 * zeta, zeta)
}

/// Parameters for a given `ε`: the worked choice at `ε = 1/11`, the
/// general recipe otherwise. `z` defaults to `ε`.
pub fn select_parameters(epsilon: f64, z: Option<f64>) -> Result<FuchsianParameters> {
    if !(epsilon > 0.0 && epsilon < 0.1) {
        return Err(Error::Validation(vec![format!(
            "0 < epsilon < 1/10 (epsilon={epsilon})"
        )]));
    }
    // Values typed as decimals land within a few ulps of 1/11.
    if (epsilon - DEFAULT_EPSILON).abs() <= 1e-12 {
        FuchsianParameters::new(DEFAULT_EPSILON, 5.0 / 22.0, 1.0 / 11.0, z.unwrap_or(DEFAULT_EPSILON))
    } else {
        recipe_parameters(epsilon, z)
    }
}

/// Which boundary of the physical region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Boundary {
    /// The surface `ρ = 0`, where the radial speed `χρ/m` vanishes.
    Incoming,
    /// The outgoing characteristic surface `ρ^m (2 − t) = ρ₀^m`.
    Outgoing,
}

/// Principal symbol contracted with the outward co-normal of a boundary.
///
/// On the outgoing boundary the co-normal `(−1, 2 − t)` (in `dt`, `(m/(χρ)) dρ`)
/// gives `−B⁰ + (2 − t)B¹`. The incoming co-normal is `dρ` and the radial
/// speed vanishes there, so its symbol is zero.
pub fn boundary_symbol(t: f64, which: Boundary) -> Matrix5<f64> {
    match which {
        Boundary::Incoming => Matrix5::zeros(),
        Boundary::Outgoing => {
            let ops = OperatorSet::new(t);
            -ops.b0 + (2.0 - t) * ops.b1
        }
    }
}

/// Stacked operators acting on `Z = (W¹..W^{N·n_w}, X¹..X^N, Y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperators {
    pub n_fields: usize,
    pub n_w: usize,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    pub acal: DMatrix<f64>,
    pub pi: DMatrix<f64>,
}

impl BlockOperators {
    /// `n_w` is the number of derivative directions per field (1 in the reduced sector).
    pub fn new(ops: &OperatorSet, n_fields: usize, n_w: usize, kappa: f64, nu: f64) -> Self {
        let nw = 5 * n_fields * n_w;
        let nx = 5 * n_fields;
        let dim = nw + nx + n_fields;
        let t = ops.t;
        let mut a0 = DMatrix::zeros(dim, dim);
        let mut a1 = DMatrix::zeros(dim, dim);
        let mut acal = DMatrix::zeros(dim, dim);
        let mut pi = DMatrix::zeros(dim, dim);
        let w_block = ops.bcal * ops.proj + kappa * ops.b0;
        let x_block = ops.bcal - nu * ops.b0;
        for b in 0..(n_fields * n_w + n_fields) {
            let o = 5 * b;
            let is_w = o < nw;
            for i in 0..5 {
                for j in 0..5 {
                    a0[(o + i, o + j)] = ops.b0[(i, j)];
                    a1[(o + i, o + j)] = ops.b1[(i, j)];
                    acal[(o + i, o + j)] = if is_w { w_block[(i, j)] } else { x_block[(i, j)] };
                }
                pi[(o + i, o + i)] = 1.0;
            }
        }
        for k in 0..n_fields {
            let o = nw + nx + k;
            a0[(o, o)] = 2.0 - t;
            acal[(o, o)] = 2.0;
        }
        Self {
            n_fields,
            n_w,
            a0,
            a1,
            acal,
            pi,
        }
    }

    pub fn dim(&self) -> usize {
        self.a0.nrows()
    }

    /// `A^Σ η_Σ`, block-diagonal copies of `B^Σ η_Σ` on the W and X blocks.
    pub fn a_sigma(&self, ops: &OperatorSet, eta: [f64; 2]) -> DMatrix<f64> {
        let bs = ops.b_sigma(eta);
        let dim = self.dim();
        let mut m = DMatrix::zeros(dim, dim);
        for b in 0..(self.n_fields * self.n_w + self.n_fields) {
            let o = 5 * b;
            for i in 0..5 {
                for j in 0..5 {
                    m[(o + i, o + j)] = bs[(i, j)];
                }
            }
        }
        m
    }

    pub fn pi_perp(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) - &self.pi
    }
}

/// Cartesian covector `k^K_μ` with `f^K = r/(t(2−t)) â^{Kμν}_{IJ} k^I_μ k^J_ν`.
///
/// Built from `Ω⁻¹`-weighted derivatives of `u` pulled back to Cartesian
/// coordinates; every entry is bounded as `t → 0`.
pub fn null_covector(t: f64, p: AngularPoint, v: &Fiber) -> [f64; 4] {
    let st = t.sqrt();
    let s = 2.0 - t;
    let k0 = -0.5 * s * (st + 2.0 * (1.0 - t)) * v[V0] - 0.5 * st * v[V1];
    let g1 = 0.5 * s * (t * t - 2.0 * t + 2.0 + st * (1.0 - t)) * v[V0] - 0.5 * st * v[V1]
        - st * s * v[V4];
    let ang = st * s / ptt(t);
    let n = p.normal();
    let et = p.e_theta();
    let ep = p.e_phi();
    let mut k = [k0, 0.0, 0.0, 0.0];
    for i in 0..3 {
        k[i + 1] = g1 * n[i] + ang * (v[VTH] * et[i] + v[VPH] * ep[i]);
    }
    k
}

/// `S^K = â^{Kμν}_{IJ} k^I_μ k^J_ν`.
pub fn quadratic_contraction(c: &CartesianCoefficients, ks: &[[f64; 4]]) -> Vec<f64> {
    let n = c.n_fields();
    assert_eq!(ks.len(), n);
    let vals = c.values();
    (0..n)
        .map(|k| {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let base = ((k * n + i) * n + j) * 16;
                    let a = &vals[base..base + 16];
                    for mu in 0..4 {
                        let kim = ks[i][mu];
                        if kim == 0.0 {
                            continue;
                        }
                        for nu in 0..4 {
                            acc += a[mu * 4 + nu] * kim * ks[j][nu];
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// Semilinear source `f^K` of the conformal wave equations at `(t, r, θ, φ)`.
pub fn source_f(
    c: &CartesianCoefficients,
    t: f64,
    r: f64,
    p: AngularPoint,
    v: &[Fiber],
) -> Result<Vec<f64>> {
    if !(t > 0.0 && t <= 1.0) || !(r > 0.0) {
        return Err(Error::Domain(format!(
            "(t, r) = ({t}, {r}) requires 0 < t <= 1 and r > 0"
        )));
    }
    if v.len() != c.n_fields() {
        return Err(Error::validation("one fiber per field is required"));
    }
    let ks: Vec<[f64; 4]> = v.iter().map(|vk| null_covector(t, p, vk)).collect();
    let pref = r / (t * (2.0 - t));
    Ok(quadratic_contraction(c, &ks)
        .into_iter()
        .map(|s| pref * s)
        .collect())
}

/// `F^K = (−f, −(2−t)√t f, 0, 0, 0)`.
pub fn source_fiber(t: f64, f: f64) -> Fiber {
    [-f, -(2.0 - t) * t.sqrt() * f, 0.0, 0.0, 0.0]
}

/// Split of the extended source at `(t, ρ, θ, φ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSource {
    /// `Q^K = −2 b̄^K_{IJ} χ ρ^m V₀^I V₀^J`.
    pub q: Vec<f64>,
    /// `G^K = 𝓕^K − (1/t) Q^K e₀`.
    pub g: Vec<Fiber>,
}

/// Source of the extended system, with every `ρ^m` replaced by `χ(ρ)ρ^m`.
pub fn source_extended(
    c: &CartesianCoefficients,
    chart: &RadialChart,
    t: f64,
    rho: f64,
    p: AngularPoint,
    v: &[Fiber],
) -> Result<ExtendedSource> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 1]")));
    }
    let n = c.n_fields();
    if v.len() != n {
        return Err(Error::validation("one fiber per field is required"));
    }
    let reff = chart.effective_radius(rho);
    let ks: Vec<[f64; 4]> = v.iter().map(|vk| null_covector(t, p, vk)).collect();
    let s = quadratic_contraction(c, &ks);
    let b = bbar_at(c, p);
    let mut q = vec![0.0; n];
    for (k, qk) in q.iter_mut().enumerate() {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += b.get(k, i, j) * v[i][V0] * v[j][V0];
            }
        }
        *qk = -2.0 * reff * acc;
    }
    let g = (0..n)
        .map(|k| {
            let f = reff * s[k] / (t * (2.0 - t));
            let mut fib = source_fiber(t, f);
            fib[V0] -= q[k] / t;
            fib
        })
        .collect();
    Ok(ExtendedSource { q, g })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn q_and_p_values() {
        assert_eq!(qtt(1.0), 0.0);
        assert_relative_eq!(ptt(1.0), 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(qtt(0.0), -1.0);
        assert_relative_eq!(ptt(0.0), 0.5f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(qtt(0.5), -5.0 / 17.0, epsilon = 1e-15);
        assert_relative_eq!(ptt(0.5), (17.0f64 / 12.0).sqrt(), epsilon = 1e-15);
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            assert!(ptt(t) > 0.0 && qtt(t).is_finite());
        }
    }

    #[test]
    fn operator_examples() {
        let o = OperatorSet::new(1.0);
        assert_eq!(o.b0, Matrix5::identity());
        let o = OperatorSet::new(0.5);
        assert_eq!(o.proj, Matrix5::from_diagonal(&[0.0, 1.0, 1.0, 1.0, 1.0].into()));
        let q = -5.0 / 17.0;
        let expect = [0.5, -1.5, 1.5 * q, 1.5 * q, 0.0];
        for i in 0..5 {
            assert_relative_eq!(o.b1[(i, i)], expect[i], epsilon = 1e-15);
        }
        assert_eq!(o.bcal[(V4, V1)], 0.5);
        assert_eq!(o.bcal[(V1, V4)], 0.0);
    }

    #[test]
    fn parameter_selection() {
        let p = select_parameters(1.0 / 11.0, None).unwrap();
        assert_eq!((p.kappa, p.nu), (5.0 / 22.0, 1.0 / 11.0));
        for e in [1.0 / 12.0, 1.0 / 20.0, 1.0 / 50.0] {
            let p = select_parameters(e, None).unwrap();
            assert_eq!((p.z, p.kappa, p.nu), (e, 3.0 * e, 0.5 - 5.0 * e));
        }
        assert!(select_parameters(0.2, None).is_err());
        assert!(select_parameters(0.0, None).is_err());
        match recipe_parameters(1.0 / 11.0, None) {
            Err(Error::Validation(v)) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("epsilon < 2 nu"));
            }
            other => panic!("{other:?}"),
        }
        assert!(FuchsianParameters::new(0.05, 0.2, 0.1, 0.3).is_err());
    }

    #[test]
    fn outgoing_boundary_values() {
        let m = boundary_symbol(0.5, Boundary::Outgoing);
        let q = qtt(0.5);
        assert_relative_eq!(m[(0, 0)], -0.75, epsilon = 1e-15);
        assert_relative_eq!(m[(1, 1)], -3.75, epsilon = 1e-15);
        assert_relative_eq!(m[(2, 2)], -1.5 * (1.0 - 1.5 * q), epsilon = 1e-15);
        assert_eq!(m[(4, 4)], -1.0);
        assert_eq!(boundary_symbol(0.3, Boundary::Incoming), Matrix5::zeros());
    }

    fn random_fibers(n: usize, rng: &mut ChaCha8Rng) -> Vec<Fiber> {
        (0..n)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn source_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = AngularPoint::new(1.1, 0.3).unwrap();
        let v = random_fibers(2, &mut rng);
        let z = source_f(&CartesianCoefficients::zeros(2), 0.4, 1.2, p, &v).unwrap();
        assert!(z.iter().all(|x| *x == 0.0));
        let mut c = CartesianCoefficients::zeros(2);
        c.set(0, 1, 0, 2, 3, 0.7);
        let z = source_f(&c, 0.4, 1.2, p, &[[0.0; 5]; 2]).unwrap();
        assert!(z.iter().all(|x| *x == 0.0));
        assert!(source_f(&c, 0.0, 1.0, p, &v).is_err());
    }

    #[test]
    fn extended_source_null_form_and_leading_term() {
        let chart = RadialChart::new(1, 1.0).unwrap();
        let p = AngularPoint::new(0.8, 2.0).unwrap();
        let mut null = CartesianCoefficients::zeros(1);
        null.set_matrix(0, 0, 0, &nalgebra::Matrix4::from_diagonal(&[-1.0, 1.0, 1.0, 1.0].into()));
        let v = [[0.3, -0.2, 0.1, 0.05, 0.4]];
        let s = source_extended(&null, &chart, 0.3, 0.7, p, &v).unwrap();
        assert!(s.q[0].abs() < 1e-15);
        let f = source_f(&null, 0.3, 0.7, p, &v).unwrap()[0];
        let full = source_fiber(0.3, f);
        for c in 0..5 {
            assert_relative_eq!(s.g[0][c], full[c], epsilon = 1e-14);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vals = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = CartesianCoefficients::from_values(1, vals).unwrap();
        // Corrections to the leading term are O(√t).
        let mut rel = Vec::new();
        for t in [1e-6, 1e-8, 1e-10] {
            let s = source_extended(&c, &chart, t, 0.7, p, &v).unwrap();
            let f = source_f(&c, t, 0.7, p, &v).unwrap()[0];
            rel.push(((-t * f - s.q[0]) / s.q[0]).abs());
        }
        assert!(rel[0] < 20.0 * 1e-3, "{rel:?}");
        assert!((rel[0] / rel[1] - 10.0).abs() < 0.5 && (rel[1] / rel[2] - 10.0).abs() < 0.5, "{rel:?}");

        let out = source_extended(&c, &chart, 0.5, 2.5, p, &v).unwrap();
        assert_eq!(out.q[0], 0.0);
        assert!(out.g[0].iter().all(|x| *x == 0.0));
    }
}
