//! Iterated difference operators `D^γ` and the higher-order perturbation data.
//!
//! The state is extended by zero outside the interior nodes, and `D^γ` is the
//! composition of backward differences `(∇u)_j = (u_j − u_{j−1})/h` along each
//! axis. The result lives on a box that is `γ_a` nodes longer than the
//! interior along axis `a`, so every `D^γ` is injective and the discrete
//! `H^m_0` norm built from them is positive definite.

use serde::{Deserialize, Serialize};

use super::grid::Grid;
use crate::error::{Error, Result};

/// `q = max{2, p, 2p(p−1), p/(p−1)}`.
pub fn q_of_p(p: f64) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("p", format!("must exceed 1, got {p}")));
    }
    Ok(2f64.max(p).max(2.0 * p * (p - 1.0)).max(p / (p - 1.0)))
}

/// Smallest derivative order for which the discrete `H^m_0` norm controls
/// `‖u‖_∞ + ‖∇u‖_{2p}` uniformly in `h` (d ≤ 2).
pub const EMBEDDING_ORDER: usize = 2;

/// The `(1/n)`-weighted perturbation `j(u, v) = (u, v)_{H^m_0} + Σ_{|γ|≤m} ∫ |D^γu|^{q−2} D^γu D^γv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HigherOrderPerturbation {
    pub m: usize,
    pub q: f64,
    /// Prefactor in front of `j`; `1/n` in the approximating equation, 0 when disabled.
    pub strength: f64,
}

impl HigherOrderPerturbation {
    /// Perturbation of order `m` for exponent `p` at regularization level `n`.
    pub fn new(m: usize, p: f64, n: u32) -> Result<Self> {
        if m == 0 {
            return Err(Error::invalid("perturbation.m", "must be at least 1"));
        }
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        Ok(Self {
            m,
            q: q_of_p(p)?,
            strength: 1.0 / n as f64,
        })
    }

    /// Same `m` and `q` but with the perturbation switched off; norms stay available.
    pub fn disabled(m: usize, p: f64) -> Result<Self> {
        let mut s = Self::new(m, p, 1)?;
        s.strength = 0.0;
        Ok(s)
    }

    pub fn is_active(&self) -> bool {
        self.strength > 0.0
    }

    pub fn satisfies_embedding(&self) -> bool {
        self.m >= EMBEDDING_ORDER
    }
}

#[derive(Clone, Debug)]
struct Stencil {
    gamma: [usize; 2],
    nx: usize,
    ny: usize,
    // (offset x, offset y, coefficient)
    taps: Vec<(usize, usize, f64)>,
}

/// All `D^γ` with `|γ| ≤ m` on a grid.
#[derive(Clone, Debug)]
pub struct DifferenceOps {
    grid: Grid,
    m: usize,
    stencils: Vec<Stencil>,
}

fn binomial(k: usize, s: usize) -> f64 {
    (0..s).fold(1.0, |acc, i| acc * (k - i) as f64 / (i + 1) as f64)
}

fn axis_taps(k: usize, h: f64) -> Vec<(usize, f64)> {
    let scale = h.powi(-(k as i32));
    (0..=k)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            (s, sign * binomial(k, s) * scale)
        })
        .collect()
}

impl DifferenceOps {
    pub fn new(grid: Grid, m: usize) -> Result<Self> {
        let n = grid.n_interior();
        if n < m {
            return Err(Error::GridTooCoarse { n_interior: n, m });
        }
        let h = grid.h();
        let mut stencils = Vec::new();
        let max_y = if grid.dim() == 2 { m } else { 0 };
        for order in 0..=m {
            for gy in 0..=order.min(max_y) {
                let gx = order - gy;
                let tx = axis_taps(gx, h);
                let ty = axis_taps(gy, h);
                let mut taps = Vec::with_capacity(tx.len() * ty.len());
                for &(sy, cy) in &ty {
                    for &(sx, cx) in &tx {
                        taps.push((sx, sy, cx * cy));
                    }
                }
                stencils.push(Stencil {
                    gamma: [gx, gy],
                    nx: n + gx,
                    ny: grid.ny() + gy,
                    taps,
                });
            }
        }
        Ok(Self { grid, m, stencils })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn order(&self) -> usize {
        self.m
    }

    /// Number of multi-indices `γ` with `|γ| ≤ m`.
    pub fn count(&self) -> usize {
        self.stencils.len()
    }

    pub fn gamma(&self, k: usize) -> [usize; 2] {
        self.stencils[k].gamma
    }

    pub fn output_len(&self, k: usize) -> usize {
        self.stencils[k].nx * self.stencils[k].ny
    }

    /// Largest index distance between two nodes coupled by some `(D^γ)ᵀ D^γ`.
    pub fn coupling_width(&self) -> usize {
        let n = self.grid.n_interior();
        self.stencils
            .iter()
            .map(|s| s.gamma[0] + s.gamma[1] * n)
            .max()
            .unwrap_or(0)
    }

    /// Writes `D^γ u` into `out` (resized to the output box).
    pub fn apply(&self, k: usize, u: &[f64], out: &mut Vec<f64>) {
        let st = &self.stencils[k];
        out.clear();
        out.resize(st.nx * st.ny, 0.0);
        let n = self.grid.n_interior();
        for (idx, &val) in u.iter().enumerate() {
            if val == 0.0 {
                continue;
            }
            let (ix, iy) = (idx % n, idx / n);
            for &(sx, sy, c) in &st.taps {
                out[(iy + sy) * st.nx + ix + sx] += c * val;
            }
        }
    }

    /// Adds `(D^γ)ᵀ z` to `out`.
    pub fn apply_transpose_add(&self, k: usize, z: &[f64], out: &mut [f64]) {
        let st = &self.stencils[k];
        let n = self.grid.n_interior();
        for (idx, o) in out.iter_mut().enumerate() {
            let (ix, iy) = (idx % n, idx / n);
            let mut acc = 0.0;
            for &(sx, sy, c) in &st.taps {
                acc += c * z[(iy + sy) * st.nx + ix + sx];
            }
            *o += acc;
        }
    }

    /// Calls `visit(i, j, c_i c_j, o)` for every pair of nodes `i, j` that
    /// contribute to the same output entry `o` of `D^γ`.
    pub(crate) fn for_each_pair(&self, k: usize, mut visit: impl FnMut(usize, usize, f64, usize)) {
        let st = &self.stencils[k];
        let n = self.grid.n_interior() as isize;
        let ny = self.grid.ny() as isize;
        for oy in 0..st.ny {
            for ox in 0..st.nx {
                let o = oy * st.nx + ox;
                for &(sx1, sy1, c1) in &st.taps {
                    let (x1, y1) = (ox as isize - sx1 as isize, oy as isize - sy1 as isize);
                    if x1 < 0 || x1 >= n || y1 < 0 || y1 >= ny {
                        continue;
                    }
                    let i = (y1 * n + x1) as usize;
                    for &(sx2, sy2, c2) in &st.taps {
                        let (x2, y2) = (ox as isize - sx2 as isize, oy as isize - sy2 as isize);
                        if x2 < 0 || x2 >= n || y2 < 0 || y2 >= ny {
                            continue;
                        }
                        visit(i, (y2 * n + x2) as usize, c1 * c2, o);
                    }
                }
            }
        }
    }
}
