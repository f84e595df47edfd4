//! Assembled spatial operator `Aₙ(u) = −div_h a(x, u, ∇_h u) + (1/n) J'(u) + f(u)`.
//!
//! The divergence part is defined through its weak form: the domain is split
//! into elements (the `n+1` intervals between neighbouring nodes in 1D, two
//! right triangles per cell in 2D), each carrying an exact linear gradient
//! `ξ_e(u)` and a node-averaged state `λ_e(u)`. Then
//!
//! ```text
//! ⟨−div_h a(u), v⟩_h = Σ_e |e| a(x_e, λ_e(u), ξ_e(u)) · ξ_e(v)
//! ```
//!
//! holds by construction, which makes the discrete operator monotone whenever
//! `a` is. In 1D the elements are exactly the cell faces, with `λ` the mean of
//! the two adjacent nodes and `ξ` their difference quotient; for `p = 2` the 2D
//! triangulation reproduces the five-point Laplacian.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::coeff::{DriftSpec, LerayLionsCoeff};
use super::grid::{Grid, GridFunction};
use super::stencil::{DifferenceOps, HigherOrderPerturbation};
use crate::banded::BandMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
struct Element {
    nodes: [usize; 3],
    grad: [[f64; 2]; 3],
    count: usize,
    lambda_weight: f64,
    center: [f64; 2],
    measure: f64,
}

impl Element {
    #[inline]
    fn state(&self, u: &[f64]) -> (f64, [f64; 2]) {
        let mut lambda = 0.0;
        let mut xi = [0.0; 2];
        for k in 0..self.count {
            let v = u[self.nodes[k]];
            lambda += v;
            xi[0] += self.grad[k][0] * v;
            xi[1] += self.grad[k][1] * v;
        }
        (lambda * self.lambda_weight, xi)
    }
}

fn build_elements(grid: &Grid) -> Vec<Element> {
    let n = grid.n_interior() as isize;
    let h = grid.h();
    let mut out = Vec::new();
    let mut push = |corners: &[((isize, isize), [f64; 2])], center: [f64; 2], measure: f64| {
        let mut e = Element {
            nodes: [0; 3],
            grad: [[0.0; 2]; 3],
            count: 0,
            lambda_weight: 1.0 / corners.len() as f64,
            center,
            measure,
        };
        for &((ix, iy), g) in corners {
            if let Some(idx) = grid.node_at(ix, iy) {
                e.nodes[e.count] = idx;
                e.grad[e.count] = g;
                e.count += 1;
            }
        }
        if e.count > 0 {
            out.push(e);
        }
    };
    let inv = 1.0 / h;
    if grid.dim() == 1 {
        for i in -1..n {
            let center = [(i as f64 + 1.5) * h, 0.0];
            push(&[((i, 0), [-inv, 0.0]), ((i + 1, 0), [inv, 0.0])], center, h);
        }
    } else {
        let area = 0.5 * h * h;
        for j in -1..n {
            for i in -1..n {
                let x0 = (i as f64 + 1.0) * h;
                let y0 = (j as f64 + 1.0) * h;
                push(
                    &[
                        ((i, j), [-inv, -inv]),
                        ((i + 1, j), [inv, 0.0]),
                        ((i, j + 1), [0.0, inv]),
                    ],
                    [x0 + h / 3.0, y0 + h / 3.0],
                    area,
                );
                push(
                    &[
                        ((i + 1, j + 1), [inv, inv]),
                        ((i, j + 1), [-inv, 0.0]),
                        ((i + 1, j), [0.0, -inv]),
                    ],
                    [x0 + 2.0 * h / 3.0, y0 + 2.0 * h / 3.0],
                    area,
                );
            }
        }
    }
    out
}

/// Energy integrands recorded along trajectories.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Energies {
    /// `‖u‖₂²`
    pub l2_sq: f64,
    /// `‖∇u‖_p^p`
    pub grad_lp_p: f64,
    /// `‖u‖²_{H^m_0}`
    pub hm0_sq: f64,
    /// `‖u‖^q_{W^{m,q}_0}`
    pub wmq_q: f64,
}

/// Discrete norms. With midpoint quadrature `‖1‖₁ = N h = 1 − h` in 1D.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub lp: f64,
    pub w1p_seminorm: f64,
    pub hm0: f64,
    pub wmq: f64,
}

/// The spatial part of the approximating equation on a fixed grid.
#[derive(Clone, Debug)]
pub struct SpatialOperator {
    grid: Grid,
    coeff: LerayLionsCoeff,
    drift: DriftSpec,
    pert: HigherOrderPerturbation,
    diff: DifferenceOps,
    elements: Vec<Element>,
    bandwidth: usize,
}

impl SpatialOperator {
    pub fn new(grid: Grid, coeff: LerayLionsCoeff, drift: DriftSpec, pert: HigherOrderPerturbation) -> Result<Self> {
        coeff.validate()?;
        let diff = DifferenceOps::new(grid, pert.m)?;
        let elements = build_elements(&grid);
        let element_width = if grid.dim() == 1 { 1 } else { grid.n_interior() + 1 };
        let bandwidth = element_width.max(diff.coupling_width());
        Ok(Self {
            grid,
            coeff,
            drift,
            pert,
            diff,
            elements,
            bandwidth,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeff(&self) -> &LerayLionsCoeff {
        &self.coeff
    }

    pub fn drift(&self) -> &DriftSpec {
        &self.drift
    }

    pub fn perturbation(&self) -> &HigherOrderPerturbation {
        &self.pert
    }

    pub fn differences(&self) -> &DifferenceOps {
        &self.diff
    }

    /// Half-bandwidth of the Jacobian.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::GridMismatch {
                expected: self.grid.len(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// `−div_h a(x, u, ∇_h u)` written into `out`.
    pub fn divergence(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let inv_vol = 1.0 / self.grid.cell_volume();
        for e in &self.elements {
            let (lambda, xi) = e.state(u);
            let a = self.coeff.eval(e.center, lambda, xi);
            let w = e.measure * inv_vol;
            for k in 0..e.count {
                out[e.nodes[k]] += w * (a[0] * e.grad[k][0] + a[1] * e.grad[k][1]);
            }
        }
    }

    /// Riesz representative of `v ↦ j(u, v)` (without the `1/n` prefactor).
    pub fn j_operator(&self, u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        self.add_j_operator(u, 1.0, out);
    }

    fn add_j_operator(&self, u: &[f64], scale: f64, out: &mut [f64]) {
        let q = self.pert.q;
        let mut z = Vec::new();
        for k in 0..self.diff.count() {
            self.diff.apply(k, u, &mut z);
            for v in z.iter_mut() {
                *v = scale * (*v + v.abs().powf(q - 2.0) * *v);
            }
            self.diff.apply_transpose_add(k, &z, out);
        }
    }

    /// Discrete `Aₙ(u)`: divergence part, `(1/n)` times the `j`-operator, plus `f(u)`.
    pub fn apply_a_n(&self, u: &[f64], out: &mut [f64]) {
        self.divergence(u, out);
        if self.pert.is_active() {
            self.add_j_operator(u, self.pert.strength, out);
        }
        if !self.drift.is_zero() {
            for (o, &v) in out.iter_mut().zip(u) {
                *o += self.drift.eval(v);
            }
        }
    }

    pub fn apply(&self, u: &GridFunction) -> Result<GridFunction> {
        self.check_len(u.values())?;
        let mut out = vec![0.0; u.len()];
        self.apply_a_n(u.values(), &mut out);
        GridFunction::new(self.grid, out).map_err(|_| Error::NonFinite {
            context: "operator output".into(),
        })
    }

    /// Adds `d Aₙ / du` at `u` to `mat`.
    pub fn add_jacobian(&self, u: &[f64], scale: f64, mat: &mut BandMatrix) {
        let inv_vol = 1.0 / self.grid.cell_volume();
        for e in &self.elements {
            let (lambda, xi) = e.state(u);
            let (da, dl) = self.coeff.flux.jacobian(e.center, lambda, xi);
            let w = scale * e.measure * inv_vol;
            for i in 0..e.count {
                let gi = e.grad[i];
                // gᵢᵀ ∂a/∂ξ and gᵢᵀ ∂a/∂λ
                let row = [gi[0] * da[0][0] + gi[1] * da[1][0], gi[0] * da[0][1] + gi[1] * da[1][1]];
                let lam = (gi[0] * dl[0] + gi[1] * dl[1]) * e.lambda_weight;
                for j in 0..e.count {
                    let gj = e.grad[j];
                    let v = row[0] * gj[0] + row[1] * gj[1] + lam;
                    if v != 0.0 {
                        mat.add(e.nodes[i], e.nodes[j], w * v);
                    }
                }
            }
        }
        if self.pert.is_active() {
            let q = self.pert.q;
            let s = scale * self.pert.strength;
            let mut z = Vec::new();
            for k in 0..self.diff.count() {
                self.diff.apply(k, u, &mut z);
                self.diff.for_each_pair(k, |i, j, c, o| {
                    let d = 1.0 + (q - 1.0) * z[o].abs().powf(q - 2.0);
                    mat.add(i, j, s * c * d);
                });
            }
        }
        if !self.drift.is_zero() {
            for (i, &v) in u.iter().enumerate() {
                mat.add(i, i, scale * self.drift.derivative(v));
            }
        }
    }

    /// `j(u, v) = (u, v)_{H^m_0} + Σ_{|γ|≤m} h^d Σ |D^γu|^{q−2} D^γu D^γv`.
    pub fn j_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let q = self.pert.q;
        let (mut zu, mut zv) = (Vec::new(), Vec::new());
        let mut total = 0.0;
        for k in 0..self.diff.count() {
            self.diff.apply(k, u, &mut zu);
            self.diff.apply(k, v, &mut zv);
            total += zu
                .iter()
                .zip(&zv)
                .map(|(a, b)| (a + a.abs().powf(q - 2.0) * a) * b)
                .sum::<f64>();
        }
        total * self.grid.cell_volume()
    }

    /// `⟨Aₙ(u), v⟩` evaluated from the weak form rather than the assembled vector.
    pub fn weak_form(&self, u: &[f64], v: &[f64]) -> f64 {
        let flux: f64 = self
            .elements
            .iter()
            .map(|e| {
                let (lambda, xi) = e.state(u);
                let (_, xv) = e.state(v);
                let a = self.coeff.eval(e.center, lambda, xi);
                e.measure * (a[0] * xv[0] + a[1] * xv[1])
            })
            .sum();
        let pert = if self.pert.is_active() {
            self.pert.strength * self.j_form(u, v)
        } else {
            0.0
        };
        let drift: f64 = u.iter().zip(v).map(|(a, b)| self.drift.eval(*a) * b).sum();
        flux + pert + self.grid.cell_volume() * drift
    }

    /// `Σ_e |e| |ξ_e(u)|^r`, the discrete `‖∇u‖_r^r`.
    pub fn grad_lr_r(&self, u: &[f64], r: f64) -> f64 {
        self.elements
            .iter()
            .map(|e| {
                let (_, xi) = e.state(u);
                e.measure * (xi[0] * xi[0] + xi[1] * xi[1]).powf(0.5 * r)
            })
            .sum()
    }

    fn derivative_sums(&self, u: &[f64]) -> (f64, f64) {
        let q = self.pert.q;
        let mut z = Vec::new();
        let (mut sq, mut sqq) = (0.0, 0.0);
        for k in 0..self.diff.count() {
            self.diff.apply(k, u, &mut z);
            for v in &z {
                sq += v * v;
                sqq += v.abs().powf(q);
            }
        }
        let vol = self.grid.cell_volume();
        (vol * sq, vol * sqq)
    }

    pub fn energies(&self, u: &[f64]) -> Energies {
        let (hm0_sq, wmq_q) = self.derivative_sums(u);
        Energies {
            l2_sq: self.grid.cell_volume() * u.iter().map(|v| v * v).sum::<f64>(),
            grad_lp_p: self.grad_lr_r(u, self.coeff.p),
            hm0_sq,
            wmq_q,
        }
    }

    pub fn norms(&self, u: &[f64]) -> Norms {
        let p = self.coeff.p;
        let vol = self.grid.cell_volume();
        let e = self.energies(u);
        Norms {
            l1: vol * u.iter().map(|v| v.abs()).sum::<f64>(),
            l2: e.l2_sq.sqrt(),
            lp: (vol * u.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p),
            w1p_seminorm: e.grad_lp_p.powf(1.0 / p),
            hm0: e.hm0_sq.sqrt(),
            wmq: e.wmq_q.powf(1.0 / self.pert.q),
        }
    }

    /// Sampled estimate of the embedding constant in
    /// `‖u‖_∞ + ‖∇u‖_{2p} ≤ C_E ‖u‖_{H^m_0}`: the largest ratio over the first
    /// sine modes and a fixed set of random states.
    pub fn embedding_constant(&self) -> f64 {
        let p = self.coeff.p;
        let ratio = |u: &[f64]| {
            let hm = self.derivative_sums(u).0.sqrt();
            if hm == 0.0 {
                return 0.0;
            }
            let sup = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            (sup + self.grad_lr_r(u, 2.0 * p).powf(1.0 / (2.0 * p))) / hm
        };
        let mut best = 0.0_f64;
        let n = self.grid.n_interior();
        for mode in 1..=n.min(16) {
            let u = super::grid::Profile::Sine { amplitude: 1.0, mode }
                .sample(self.grid)
                .expect("sine profile");
            best = best.max(ratio(u.values()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..32 {
            let u: Vec<f64> = (0..self.grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            best = best.max(ratio(&u));
        }
        best
    }
}

/// Smallest eigenvalue `d (4/h²) sin²(πh/2)` of the discrete Dirichlet Laplacian.
pub fn laplacian_min_eigenvalue(grid: &Grid) -> f64 {
    let h = grid.h();
    let s = (std::f64::consts::PI * h / 2.0).sin();
    grid.dim() as f64 * 4.0 / (h * h) * s * s
}

/// Discrete Poincaré constant `‖u‖₂ ≤ C_P ‖∇u‖₂`.
pub fn poincare_constant(grid: &Grid) -> f64 {
    1.0 / laplacian_min_eigenvalue(grid).sqrt()
}

/// Threshold `N₀ = max{⌈√C_σ⌉, (2^{q−1} C₂ C_E^{2ν} C_P^ν)^{−1}}`.
///
/// When `C₂ = 0` the coercivity estimate needs no absorption and the second
/// entry is dropped.
pub fn n0_threshold(c_sigma: f64, q: f64, c2: f64, c_e: f64, nu: f64, c_p: f64) -> u32 {
    let first = crate::holder_reg::n0(c_sigma);
    if c2 <= 0.0 {
        return first;
    }
    let second = 1.0 / (2f64.powf(q - 1.0) * c2 * c_e.powf(2.0 * nu) * c_p.powf(nu));
    let second = if second.is_finite() && second < u32::MAX as f64 {
        second.ceil() as u32
    } else {
        u32::MAX
    };
    first.max(second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::stencil::q_of_p;

    fn op(
        dim: usize,
        n: usize,
        coeff: LerayLionsCoeff,
        drift: DriftSpec,
        pert: HigherOrderPerturbation,
    ) -> SpatialOperator {
        SpatialOperator::new(Grid::new(dim, n).unwrap(), coeff, drift, pert).unwrap()
    }

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_state_maps_to_zero() {
        let o = op(
            1,
            16,
            LerayLionsCoeff::p_laplace(2.5).unwrap(),
            DriftSpec::sine(1.0).unwrap(),
            HigherOrderPerturbation::new(2, 2.5, 4).unwrap(),
        );
        let mut out = vec![1.0; 16];
        o.apply_a_n(&[0.0; 16], &mut out);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_is_discrete_eigenfunction() {
        for dim in [1, 2] {
            let n = if dim == 1 { 64 } else { 24 };
            let o = op(
                dim,
                n,
                LerayLionsCoeff::p_laplace(2.0).unwrap(),
                DriftSpec::zero(),
                HigherOrderPerturbation::disabled(2, 2.0).unwrap(),
            );
            let g = *o.grid();
            let u = crate::spatial::Profile::Sine {
                amplitude: 1.0,
                mode: 1,
            }
            .sample(g)
            .unwrap();
            let mut out = vec![0.0; g.len()];
            o.divergence(u.values(), &mut out);
            let mu = laplacian_min_eigenvalue(&g);
            for (a, b) in out.iter().zip(u.values()) {
                assert!((a - mu * b).abs() < 1e-9 * mu, "dim={dim}");
            }
        }
    }

    #[test]
    fn convective_flux_matches_independent_assembly() {
        let n = 20;
        let (p, b) = (2.5, 0.8);
        let o = op(
            1,
            n,
            LerayLionsCoeff::convective(p, [b, 0.0]).unwrap(),
            DriftSpec::zero(),
            HigherOrderPerturbation::disabled(2, p).unwrap(),
        );
        let u = random_vec(n, 11);
        let h = o.grid().h();
        // −Δ_p,h u + div_h F(u) with F(λ) = b sin λ on faces, zero ghost values
        let at = |i: isize| if i < 0 || i >= n as isize { 0.0 } else { u[i as usize] };
        let face = |i: isize| {
            let xi = (at(i + 1) - at(i)) / h;
            let lam = 0.5 * (at(i) + at(i + 1));
            (xi.abs().powf(p - 2.0) * xi, b * lam.sin())
        };
        let mut out = vec![0.0; n];
        o.divergence(&u, &mut out);
        for i in 0..n as isize {
            let (ar, fr) = face(i);
            let (al, fl) = face(i - 1);
            let expected = -(ar - al) / h + (fr - fl) / h;
            assert!((out[i as usize] - expected).abs() < 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn duality_with_independent_weak_form() {
        for dim in [1, 2] {
            let n = if dim == 1 { 24 } else { 8 };
            let p = 2.5;
            let o = op(
                dim,
                n,
                LerayLionsCoeff::convective(p, [0.5, -0.2]).unwrap(),
                DriftSpec::sine(-1.0).unwrap(),
                HigherOrderPerturbation::new(2, p, 3).unwrap(),
            );
            let len = o.grid().len();
            for seed in 0..5 {
                let u = random_vec(len, seed);
                let v = random_vec(len, seed + 100);
                let mut au = vec![0.0; len];
                o.apply_a_n(&u, &mut au);
                let lhs = o.grid().cell_volume() * au.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
                let rhs = o.weak_form(&u, &v);
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0),
                    "dim={dim}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn one_dimensional_weak_form_by_hand() {
        // ⟨−div_h a, v⟩ = Σ_faces h a(ξ_f(u)) ξ_f(v), assembled independently
        let n = 9;
        let p = 3.0;
        let o = op(
            1,
            n,
            LerayLionsCoeff::p_laplace(p).unwrap(),
            DriftSpec::zero(),
            HigherOrderPerturbation::disabled(2, p).unwrap(),
        );
        let h = o.grid().h();
        let u = random_vec(n, 5);
        let v = random_vec(n, 6);
        let ext = |w: &[f64], i: isize| if i < 0 || i >= n as isize { 0.0 } else { w[i as usize] };
        let expected: f64 = (-1..n as isize)
            .map(|i| {
                let xu = (ext(&u, i + 1) - ext(&u, i)) / h;
                let xv = (ext(&v, i + 1) - ext(&v, i)) / h;
                h * xu.abs().powf(p - 2.0) * xu * xv
            })
            .sum();
        let mut out = vec![0.0; n];
        o.divergence(&u, &mut out);
        let got = h * out.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        assert!((got - expected).abs() < 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn j_form_minimal_grid() {
        // N = 1, h = 1/2, m = 1, q = 4: D⁰u = u, ∇u = (2u, −2u)
        let g = Grid::new(1, 1).unwrap();
        let pert = HigherOrderPerturbation {
            m: 1,
            q: 4.0,
            strength: 1.0,
        };
        let o = SpatialOperator::new(g, LerayLionsCoeff::p_laplace(2.0).unwrap(), DriftSpec::zero(), pert).unwrap();
        for &u in &[0.0f64, 0.3, -1.7] {
            let expected = 0.5 * (u * u + u.powi(4) + 2.0 * (2.0 * u).powi(2) + 2.0 * (2.0 * u).powi(4));
            assert!((o.j_form(&[u], &[u]) - expected).abs() < 1e-12 * expected.max(1.0));
        }
        assert_eq!(o.j_form(&[0.0], &[0.7]), 0.0);
    }

    #[test]
    fn j_form_dominates_hm0() {
        let o = op(
            1,
            12,
            LerayLionsCoeff::p_laplace(2.5).unwrap(),
            DriftSpec::zero(),
            HigherOrderPerturbation::new(2, 2.5, 1).unwrap(),
        );
        for seed in 0..10 {
            let u = random_vec(12, seed);
            let e = o.energies(&u);
            assert!(o.j_form(&u, &u) >= e.hm0_sq);
            assert!((o.j_form(&u, &u) - e.hm0_sq - e.wmq_q).abs() < 1e-9 * e.wmq_q.max(1.0));
        }
    }

    #[test]
    fn a_n_scales_perturbation_by_one_over_n() {
        let base = |n| {
            op(
                1,
                10,
                LerayLionsCoeff::p_laplace(2.5).unwrap(),
                DriftSpec::sine(0.5).unwrap(),
                HigherOrderPerturbation::new(2, 2.5, n).unwrap(),
            )
        };
        let u = random_vec(10, 3);
        let (o1, o4) = (base(1), base(4));
        let (mut a1, mut a4, mut j) = (vec![0.0; 10], vec![0.0; 10], vec![0.0; 10]);
        o1.apply_a_n(&u, &mut a1);
        o4.apply_a_n(&u, &mut a4);
        o1.j_operator(&u, &mut j);
        for i in 0..10 {
            assert!((a1[i] - a4[i] - 0.75 * j[i]).abs() < 1e-9 * j[i].abs().max(1.0));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for dim in [1, 2] {
            let n = if dim == 1 { 10 } else { 5 };
            let o = op(
                dim,
                n,
                LerayLionsCoeff::convective(2.5, [0.3, 0.6]).unwrap(),
                DriftSpec::sine(-0.7).unwrap(),
                HigherOrderPerturbation::new(2, 2.5, 2).unwrap(),
            );
            let len = o.grid().len();
            // small states keep |D^γu|^{q-2} moderate so differences stay well conditioned
            let u: Vec<f64> = random_vec(len, 9).iter().map(|v| 0.05 * v).collect();
            let mut jac = BandMatrix::zeros(len, o.bandwidth());
            o.add_jacobian(&u, 1.0, &mut jac);
            let scale = (0..len).map(|i| jac.get(i, i).abs()).fold(0.0, f64::max);
            let (mut fp, mut fm) = (vec![0.0; len], vec![0.0; len]);
            for j in 0..len {
                let step = 1e-6;
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += step;
                um[j] -= step;
                o.apply_a_n(&up, &mut fp);
                o.apply_a_n(&um, &mut fm);
                for i in 0..len {
                    let fd = (fp[i] - fm[i]) / (2.0 * step);
                    let an = jac.get(i, j);
                    assert!((fd - an).abs() <= 1e-6 * scale, "dim={dim} ({i},{j}): {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn monotone_up_to_drift() {
        let lf = 0.8;
        let o = op(
            1,
            16,
            LerayLionsCoeff::p_laplace(2.5).unwrap(),
            DriftSpec::sine(-lf).unwrap(),
            HigherOrderPerturbation::new(2, 2.5, 4).unwrap(),
        );
        for seed in 0..20 {
            let u = random_vec(16, seed);
            let v = random_vec(16, seed + 50);
            let (mut au, mut av) = (vec![0.0; 16], vec![0.0; 16]);
            o.apply_a_n(&u, &mut au);
            o.apply_a_n(&v, &mut av);
            let vol = o.grid().cell_volume();
            let lhs: f64 = vol * (0..16).map(|i| (au[i] - av[i]) * (u[i] - v[i])).sum::<f64>();
            let d2: f64 = vol * (0..16).map(|i| (u[i] - v[i]).powi(2)).sum::<f64>();
            assert!(lhs >= -lf * d2 - 1e-12);
        }
    }

    #[test]
    fn norms_examples() {
        let o = op(
            1,
            9,
            LerayLionsCoeff::p_laplace(3.0).unwrap(),
            DriftSpec::zero(),
            HigherOrderPerturbation::disabled(2, 3.0).unwrap(),
        );
        let zero = o.norms(&[0.0; 9]);
        assert_eq!(
            zero.l1 + zero.l2 + zero.lp + zero.w1p_seminorm + zero.hm0 + zero.wmq,
            0.0
        );
        let ones = o.norms(&[1.0; 9]);
        // midpoint convention: N h = 1 − h
        assert!((ones.l1 - 0.9).abs() < 1e-14);
        assert!((ones.l2 - 0.9f64.sqrt()).abs() < 1e-14);
        let u = random_vec(9, 4);
        let c = -2.5;
        let cu: Vec<f64> = u.iter().map(|v| c * v).collect();
        let (a, b) = (o.norms(&u), o.norms(&cu));
        for (x, y) in [
            (a.l1, b.l1),
            (a.l2, b.l2),
            (a.lp, b.lp),
            (a.w1p_seminorm, b.w1p_seminorm),
            (a.hm0, b.hm0),
        ] {
            assert!((y - c.abs() * x).abs() < 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn constants() {
        let g = Grid::new(1, 31).unwrap();
        let cp = poincare_constant(&g);
        assert!((cp - 1.0 / std::f64::consts::PI).abs() < 1e-3);
        let o = op(
            1,
            31,
            LerayLionsCoeff::p_laplace(2.0).unwrap(),
            DriftSpec::zero(),
            HigherOrderPerturbation::disabled(2, 2.0).unwrap(),
        );
        let ce = o.embedding_constant();
        assert!(ce.is_finite() && ce > 0.0);
        assert_eq!(n0_threshold(4.0, q_of_p(2.0).unwrap(), 0.0, ce, 1.0, cp), 2);
        assert!(n0_threshold(1.0, 4.0, 1e-6, 1.0, 1.0, 1.0) > 1000);
    }
}
