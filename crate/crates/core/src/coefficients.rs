//! Constant Cartesian couplings `â^{Kμν}_{IJ}` and the point-dependent objects
//! derived from them: spherical components `ā`, the null contraction `b̄`, its
//! large-radius block `c̄`, and the compactified components `ã`.

use nalgebra::{DMatrix, Matrix4};
use serde::{Deserialize, Serialize};

use crate::geometry::{psi_inverse, CompactPoint};
use crate::{Error, Result};

/// `â^{Kμν}_{IJ}` stored densely as `[K][I][J][μ][ν]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CartesianCoefficients {
    n: usize,
    values: Vec<f64>,
}

impl CartesianCoefficients {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "at least one field is required");
        Self {
            n,
            values: vec![0.0; n * n * n * 16],
        }
    }

    /// Builds from a flat `[K][I][J][μ][ν]` array.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::validation("n_fields must be positive"));
        }
        if values.len() != n * n * n * 16 {
            return Err(Error::validation(format!(
                "expected {} entries for N = {n}, got {}",
                n * n * n * 16,
                values.len()
            )));
        }
        let bad: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_finite())
            .map(|(i, _)| format!("entry {i} is not finite"))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        Ok(Self { n, values })
    }

    pub fn n_fields(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn offset(&self, k: usize, i: usize, j: usize) -> usize {
        ((k * self.n + i) * self.n + j) * 16
    }

    pub fn get(&self, k: usize, i: usize, j: usize, mu: usize, nu: usize) -> f64 {
        self.values[self.offset(k, i, j) + mu * 4 + nu]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, mu: usize, nu: usize, v: f64) {
        let o = self.offset(k, i, j);
        self.values[o + mu * 4 + nu] = v;
    }

    /// The 4×4 block for a fixed `(K, I, J)`.
    pub fn matrix(&self, k: usize, i: usize, j: usize) -> Matrix4<f64> {
        let o = self.offset(k, i, j);
        Matrix4::from_row_slice(&self.values[o..o + 16])
    }

    pub fn set_matrix(&mut self, k: usize, i: usize, j: usize, m: &Matrix4<f64>) {
        for mu in 0..4 {
            for nu in 0..4 {
                self.set(k, i, j, mu, nu, m[(mu, nu)]);
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }
}

/// A point `(θ, φ)` on the unit sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularPoint {
    pub theta: f64,
    pub phi: f64,
}

impl AngularPoint {
    pub fn new(theta: f64, phi: f64) -> Result<Self> {
        if !(0.0..=std::f64::consts::PI).contains(&theta) {
            return Err(Error::Domain(format!("theta = {theta} outside [0, pi]")));
        }
        if !(0.0..2.0 * std::f64::consts::PI).contains(&phi) {
            return Err(Error::Domain(format!("phi = {phi} outside [0, 2pi)")));
        }
        Ok(Self { theta, phi })
    }

    /// The equatorial point `θ = π/2, φ = 0`.
    pub fn equator() -> Self {
        Self {
            theta: std::f64::consts::FRAC_PI_2,
            phi: 0.0,
        }
    }

    /// Outward unit normal `n̂`.
    pub fn normal(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Orthonormal frame vector along `∂_θ`.
    pub fn e_theta(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [ct * cp, ct * sp, -st]
    }

    /// Orthonormal frame vector along `∂_φ`.
    pub fn e_phi(&self) -> [f64; 3] {
        let (sp, cp) = self.phi.sin_cos();
        [-sp, cp, 0.0]
    }

    fn check_off_pole(&self) -> Result<()> {
        if self.theta.sin().abs() < 1e-14 {
            return Err(Error::Domain(format!(
                "sin(theta) = 0 at theta = {}: angular Jacobian rows 2 and 3 contain csc(theta)",
                self.theta
            )));
        }
        Ok(())
    }
}

/// One 4×4 matrix per `(K, I, J)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrixSet {
    n: usize,
    mats: Vec<Matrix4<f64>>,
}

impl CoefficientMatrixSet {
    pub fn n_fields(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> &Matrix4<f64> {
        &self.mats[(k * self.n + i) * self.n + j]
    }

    fn from_fn(n: usize, mut f: impl FnMut(usize, usize, usize) -> Matrix4<f64>) -> Self {
        let mut mats = Vec::with_capacity(n * n * n);
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    mats.push(f(k, i, j));
                }
            }
        }
        Self { n, mats }
    }
}

/// `[K][I][J]` real array.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor {
    n: usize,
    values: Vec<f64>,
}

impl FieldTensor {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n * n],
        }
    }

    pub fn n_fields(&self) -> usize {
        self.n
    }

    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.values[(k * self.n + i) * self.n + j]
    }

    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        self.values[(k * self.n + i) * self.n + j] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Jacobian `J̄^α_μ = ∂x̄^α/∂x̂^μ` from Cartesian to spherical coordinates.
pub fn jacobian(rbar: f64, p: AngularPoint) -> Result<Matrix4<f64>> {
    if !(rbar > 0.0) {
        return Err(Error::Domain(format!("rbar = {rbar} must be positive")));
    }
    p.check_off_pole()?;
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    let csc = 1.0 / st;
    #[rustfmt::skip]
    let j = Matrix4::new(
        1.0, 0.0, 0.0, 0.0,
        0.0, st * cp, st * sp, ct,
        0.0, ct * cp / rbar, ct * sp / rbar, -st / rbar,
        0.0, -csc * sp / rbar, csc * cp / rbar, 0.0,
    );
    Ok(j)
}

/// `ā^{αβ} = J̄^α_μ â^{μν} J̄^β_ν` for every `(K, I, J)`.
pub fn spherical_components(
    c: &CartesianCoefficients,
    rbar: f64,
    p: AngularPoint,
) -> Result<CoefficientMatrixSet> {
    let j = jacobian(rbar, p)?;
    let jt = j.transpose();
    Ok(CoefficientMatrixSet::from_fn(c.n, |k, i, jj| {
        j * c.matrix(k, i, jj) * jt
    }))
}

/// Null contraction `b̄^K_{IJ}(θ, φ)` in closed trigonometric form.
pub fn bbar_at(c: &CartesianCoefficients, p: AngularPoint) -> FieldTensor {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    let n = c.n;
    let mut out = FieldTensor::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let a = |mu: usize, nu: usize| c.get(k, i, j, mu, nu);
                let v = a(0, 0)
                    - st * (a(0, 1) * cp + a(0, 2) * sp)
                    - a(0, 3) * ct
                    - st * (a(1, 0) * cp + a(2, 0) * sp)
                    + st * st * (a(1, 1) * cp * cp + (a(1, 2) + a(2, 1)) * sp * cp + a(2, 2) * sp * sp)
                    + st * ct * ((a(1, 3) + a(3, 1)) * cp + (a(2, 3) + a(3, 2)) * sp)
                    - a(3, 0) * ct
                    + a(3, 3) * ct * ct;
                out.set(k, i, j, v);
            }
        }
    }
    out
}

/// Large-radius `{0,1}×{0,1}` block `c̄^{𝓅𝓆}`, returned as `[K][I][J] -> [[c00, c01], [c10, c11]]`.
pub fn cbar_at(c: &CartesianCoefficients, p: AngularPoint) -> Vec<[[f64; 2]; 2]> {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    let n = c.n;
    let mut out = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let a = |mu: usize, nu: usize| c.get(k, i, j, mu, nu);
                let c00 = a(0, 0);
                let c01 = st * (a(0, 1) * cp + a(0, 2) * sp) + a(0, 3) * ct;
                let c10 = st * (a(1, 0) * cp + a(2, 0) * sp) + a(3, 0) * ct;
                let c11 = st * st
                    * (a(1, 1) * cp * cp + (a(1, 2) + a(2, 1)) * sp * cp + a(2, 2) * sp * sp)
                    + st * ct * ((a(1, 3) + a(3, 1)) * cp + (a(2, 3) + a(3, 2)) * sp)
                    + a(3, 3) * ct * ct;
                out.push([[c00, c01], [c10, c11]]);
            }
        }
    }
    out
}

/// Components `ã^{αβ}` of the couplings in the compactified coordinates `(t, r, θ, φ)`.
///
/// `ā∘ψ⁻¹` is obtained by evaluating [`spherical_components`] at the radius
/// `r̄ = 1/(t r (2−t))`; `ā` does not depend on `t̄` because `â` is constant.
pub fn atilde_components(
    c: &CartesianCoefficients,
    t: f64,
    r: f64,
    p: AngularPoint,
) -> Result<CoefficientMatrixSet> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!("t = {t} outside (0, 1]")));
    }
    let phys = psi_inverse(CompactPoint { t, r, angular: p })?;
    let abar = spherical_components(c, phys.rbar, p)?;
    let (t2, t3) = (t * t, t * t * t);
    let (r2, r3, r4) = (r * r, r * r * r, r * r * r * r);
    Ok(CoefficientMatrixSet::from_fn(c.n, |k, i, j| {
        let a = abar.get(k, i, j);
        let (a00, a01, a10, a11) = (a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]);
        let bt = a00 - a01 - a10 + a11;
        let ct00 = -4.0 * (a00 - 2.0 * a01 - 2.0 * a10 + 3.0 * a11)
            + t * (a00 - 5.0 * a01 - 5.0 * a10 + 13.0 * a11)
            + t2 * (a01 + a10 - 6.0 * a11)
            + t3 * a11;
        let ct01 = 2.0 * (3.0 * a00 - 3.0 * a01 - 5.0 * a10 + 5.0 * a11)
            - 2.0 * t * (a00 - 2.0 * a01 - 4.0 * a10 + 5.0 * a11)
            - t2 * (a01 + 2.0 * a10 - 5.0 * a11)
            - t3 * a11;
        let ct10 = 2.0 * (3.0 * a00 - 5.0 * a01 - 3.0 * a10 + 5.0 * a11)
            - 2.0 * t * (a00 - 4.0 * a01 - 2.0 * a10 + 5.0 * a11)
            - t2 * (2.0 * a01 + a10 - 5.0 * a11)
            - t3 * a11;
        let ct11 = 2.0 * (2.0 * a00 - 3.0 * a01 - 3.0 * a10 + 4.0 * a11)
            + 2.0 * t * (a01 + a10 - 2.0 * a11)
            + t2 * a11;
        let mut m = Matrix4::zeros();
        m[(0, 0)] = 4.0 * t2 * r2 * bt + t3 * r2 * ct00;
        m[(0, 1)] = -4.0 * t * r3 * bt + t2 * r3 * ct01;
        m[(1, 0)] = -4.0 * t * r3 * bt + t2 * r3 * ct10;
        m[(1, 1)] = 4.0 * r4 * (1.0 - 2.0 * t) * bt + t2 * r4 * ct11;
        for l in 2..4 {
            let (a0l, a1l) = (a[(0, l)], a[(1, l)]);
            m[(0, l)] = -2.0 * t * r * (a0l - a1l) + t2 * r * (a0l - 3.0 * a1l) + t3 * r * a1l;
            m[(1, l)] = 2.0 * r2 * (a0l - a1l) - 2.0 * t * r2 * (a0l - a1l) - t2 * r2 * a1l;
            let (al0, al1) = (a[(l, 0)], a[(l, 1)]);
            m[(l, 0)] = -2.0 * t * r * (al0 - al1) + t2 * r * (al0 - 3.0 * al1) + t3 * r * al1;
            m[(l, 1)] = 2.0 * r2 * (al0 - al1) - 2.0 * t * r2 * (al0 - al1) - t2 * r2 * al1;
            for s in 2..4 {
                m[(l, s)] = a[(l, s)];
            }
        }
        m
    }))
}

/// Condition-H model `â^{Kμν}_{IJ} = Ī^{KL} C̄_{LIJ} δ^μ_0 δ^ν_0`.
///
/// `cbar` is flat `[L][I][J]`; `ibar` must be symmetric positive definite and
/// `C̄_{LIJ} = −C̄_{ILJ}` must hold exactly.
pub fn model_condition_h(ibar: &DMatrix<f64>, cbar: &[f64]) -> Result<CartesianCoefficients> {
    let n = ibar.nrows();
    let mut errs = Vec::new();
    if n == 0 || ibar.ncols() != n {
        return Err(Error::validation("I_bar must be a non-empty square matrix"));
    }
    if cbar.len() != n * n * n {
        return Err(Error::validation(format!(
            "C_bar must have {} entries, got {}",
            n * n * n,
            cbar.len()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            if ibar[(i, j)] != ibar[(j, i)] {
                errs.push(format!("I_bar[{i}][{j}] != I_bar[{j}][{i}]"));
            }
        }
    }
    if errs.is_empty() && ibar.clone().cholesky().is_none() {
        errs.push("I_bar is not positive definite".to_string());
    }
    let cidx = |l: usize, i: usize, j: usize| (l * n + i) * n + j;
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                if cbar[cidx(l, i, j)] != -cbar[cidx(i, l, j)] {
                    errs.push(format!("C_bar[{l}][{i}][{j}] != -C_bar[{i}][{l}][{j}]"));
                }
            }
        }
    }
    if !errs.is_empty() {
        errs.dedup();
        return Err(Error::Validation(errs));
    }
    let mut out = CartesianCoefficients::zeros(n);
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|l| ibar[(k, l)] * cbar[cidx(l, i, j)]).sum();
                out.set(k, i, j, 0, 0, v);
            }
        }
    }
    Ok(out)
}
