//! Fiber states and fields sampled on the periodic radial grid.

use serde::{Deserialize, Serialize};

/// Index of `V₀` in a fiber.
pub const V0: usize = 0;
/// Index of `V₁` in a fiber.
pub const V1: usize = 1;
/// Index of the `θ` orthonormal-frame component of `V_Λ`.
pub const VTH: usize = 2;
/// Index of the `φ` orthonormal-frame component of `V_Λ`.
pub const VPH: usize = 3;
/// Index of `V₄` in a fiber.
pub const V4: usize = 4;

/// The five first-order variables `(V₀, V₁, V_θ, V_φ, V₄)` of one field at one point.
pub type Fiber = [f64; 5];

/// A state for `N` fields on the uniform periodic grid over `[−3ρ₀, 3ρ₀)`.
///
/// Values are stored channel-major: channel `5K + c` holds component `c` of
/// field `K` at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub t: f64,
    pub n_rho: usize,
    pub n_fields: usize,
    pub values: Vec<f64>,
}

impl GridField {
    pub fn zeros(t: f64, n_rho: usize, n_fields: usize) -> Self {
        Self {
            t,
            n_rho,
            n_fields,
            values: vec![0.0; 5 * n_fields * n_rho],
        }
    }

    pub fn n_channels(&self) -> usize {
        5 * self.n_fields
    }

    pub fn channel(&self, k: usize, c: usize) -> &[f64] {
        let o = (5 * k + c) * self.n_rho;
        &self.values[o..o + self.n_rho]
    }

    pub fn channel_mut(&mut self, k: usize, c: usize) -> &mut [f64] {
        let o = (5 * k + c) * self.n_rho;
        &mut self.values[o..o + self.n_rho]
    }

    pub fn channel_by_index(&self, ch: usize) -> &[f64] {
        &self.values[ch * self.n_rho..(ch + 1) * self.n_rho]
    }

    pub fn get(&self, node: usize, k: usize, c: usize) -> f64 {
        self.values[(5 * k + c) * self.n_rho + node]
    }

    pub fn set(&mut self, node: usize, k: usize, c: usize, v: f64) {
        self.values[(5 * k + c) * self.n_rho + node] = v;
    }

    /// The fibers of every field at `node`.
    pub fn fibers_at(&self, node: usize) -> Vec<Fiber> {
        (0..self.n_fields)
            .map(|k| std::array::from_fn(|c| self.get(node, k, c)))
            .collect()
    }

    pub fn set_fibers_at(&mut self, node: usize, fibers: &[Fiber]) {
        for (k, f) in fibers.iter().enumerate() {
            for (c, &v) in f.iter().enumerate() {
                self.set(node, k, c, v);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}
