//! Multiplicative noise `B(t, v)φ(x) = σ(t, v(x)) ∫_D k(x, y) φ(y) dy` and
//! truncated Q-Wiener increments.
//!
//! All integrals use the midpoint rule on the interior nodes (weight `h^d`),
//! so the Hilbert–Schmidt norm of the discrete operator is exactly
//! `h^d Σ_i σ(t, v_i)² · h^d Σ_j k_ij²`.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::holder_reg::{HolderSpec, RegularizedSigma, TabulatedSigma};
use crate::spatial::{Grid, GridFunction};

/// Symmetric kernel sampled on the interior nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    grid: Grid,
    values: Vec<f64>,
    row_norms_sq: Vec<f64>,
    c_k: f64,
    l2_norm_sq: f64,
}

impl Kernel {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if values.len() != m * m {
            return Err(Error::GridMismatch {
                expected: m * m,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel values".into(),
            });
        }
        let scale = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        for i in 0..m {
            for j in i + 1..m {
                if (values[i * m + j] - values[j * m + i]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("kernel", format!("not symmetric at ({i}, {j})")));
                }
            }
        }
        let vol = grid.cell_volume();
        let row_norms_sq: Vec<f64> = values
            .chunks(m)
            .map(|row| vol * row.iter().map(|k| k * k).sum::<f64>())
            .collect();
        let c_k = row_norms_sq.iter().fold(0.0_f64, |a, &b| a.max(b));
        let l2_norm_sq = vol * row_norms_sq.iter().sum::<f64>();
        Ok(Self {
            grid,
            values,
            row_norms_sq,
            c_k,
            l2_norm_sq,
        })
    }

    pub fn from_fn(grid: Grid, k: impl Fn([f64; 2], [f64; 2]) -> f64) -> Result<Self> {
        let pts = grid.points();
        let values = pts
            .iter()
            .flat_map(|&x| pts.iter().map(move |&y| (x, y)))
            .map(|(x, y)| k(x, y))
            .collect();
        Self::from_values(grid, values)
    }

    /// `k(x, y) = a exp(−|x − y|² / (2ℓ²))`.
    pub fn gaussian(grid: Grid, amplitude: f64, length: f64) -> Result<Self> {
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::invalid("kernel.length", "must be positive"));
        }
        Self::from_fn(grid, |x, y| {
            let d2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            amplitude * (-d2 / (2.0 * length * length)).exp()
        })
    }

    /// `k(x, y) = φ(x) φ(y)`.
    pub fn rank_one(grid: Grid, phi: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        Self::from_fn(grid, |x, y| phi(x) * phi(y))
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::from_fn(grid, |_, _| c)
    }

    /// Reads a row-major matrix whose first line holds the number of interior nodes.
    pub fn from_csv(grid: Grid, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::Config(format!("{}: empty kernel file", path.display())))?;
        let size: usize = header
            .trim()
            .trim_matches(',')
            .parse()
            .map_err(|_| Error::Config(format!("{}: header must be the node count", path.display())))?;
        if size != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                found: size,
            });
        }
        let rest: String = lines.collect::<Vec<_>>().join("\n");
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(rest.as_bytes());
        let mut values = Vec::with_capacity(size * size);
        for record in reader.records() {
            for field in record?.iter() {
                values.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                );
            }
        }
        Self::from_values(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `max_i ‖k(x_i, ·)‖₂²`.
    pub fn c_k(&self) -> f64 {
        self.c_k
    }

    /// Discrete `‖k‖²_{L²(D×D)}`.
    pub fn l2_norm_sq(&self) -> f64 {
        self.l2_norm_sq
    }

    /// `‖k(x_i, ·)‖₂²` for every node.
    pub fn row_norms_sq(&self) -> &[f64] {
        &self.row_norms_sq
    }

    /// `(Kφ)(x_i) = h^d Σ_j k_ij φ_j`.
    pub fn apply(&self, phi: &[f64], out: &mut [f64]) {
        let m = self.grid.len();
        let vol = self.grid.cell_volume();
        for (o, row) in out.iter_mut().zip(self.values.chunks(m)) {
            *o = vol * crate::spatial::grid::dot(row, phi);
        }
    }
}

/// The pointwise factor `σ` of the noise operator.
#[derive(Clone, Debug)]
pub enum NoiseCoefficient {
    /// The Hölder coefficient itself.
    Original(HolderSpec),
    /// Its n-Lipschitz regularization, evaluated directly.
    Regularized(RegularizedSigma),
    /// The regularization read from a precomputed table.
    Tabulated(Arc<TabulatedSigma>),
}

impl NoiseCoefficient {
    #[inline]
    pub fn eval(&self, t: f64, lambda: f64) -> f64 {
        match self {
            NoiseCoefficient::Original(s) => s.eval(t, lambda),
            NoiseCoefficient::Regularized(r) => r.value(t, lambda),
            NoiseCoefficient::Tabulated(tab) => tab.eval(lambda),
        }
    }

    pub fn base(&self) -> &HolderSpec {
        match self {
            NoiseCoefficient::Original(s) => s,
            NoiseCoefficient::Regularized(r) => r.base(),
            NoiseCoefficient::Tabulated(tab) => tab.source().base(),
        }
    }

    /// `(α, L)` with `|σ(λ) − σ(μ)| ≤ L|λ − μ|^α`.
    pub fn modulus(&self) -> (f64, f64) {
        match self {
            NoiseCoefficient::Original(s) => (s.alpha(), s.l_alpha()),
            NoiseCoefficient::Regularized(r) => regularized_modulus(r),
            NoiseCoefficient::Tabulated(tab) => regularized_modulus(tab.source()),
        }
    }
}

fn regularized_modulus(r: &RegularizedSigma) -> (f64, f64) {
    if r.is_identity() {
        (1.0, r.base().l_alpha())
    } else {
        (1.0, r.n() as f64)
    }
}

/// Report of [`NoiseOperator::holder_modulus_check`].
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct HolderModulusReport {
    /// `‖B(t,v) − B(t,w)‖²_HS`
    pub lhs: f64,
    /// `C_k L² ‖v − w‖_{2α}^{2α}`
    pub bound: f64,
    /// `C_k L² |D|^{1−α} ‖v − w‖₂^{2α}` with the discrete measure `|D| = h^d N^d`
    pub bound_l2: f64,
    pub pass: bool,
}

/// `B(t, v)φ = σ(t, v) · Kφ`.
#[derive(Clone, Debug)]
pub struct NoiseOperator {
    sigma: NoiseCoefficient,
    kernel: Arc<Kernel>,
}

impl NoiseOperator {
    pub fn new(sigma: NoiseCoefficient, kernel: Arc<Kernel>) -> Self {
        Self { sigma, kernel }
    }

    pub fn sigma(&self) -> &NoiseCoefficient {
        &self.sigma
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    fn check(&self, v: &GridFunction) -> Result<()> {
        if *v.grid() != self.kernel.grid {
            return Err(Error::GridMismatch {
                expected: self.kernel.grid.len(),
                found: v.len(),
            });
        }
        Ok(())
    }

    pub fn apply_b(&self, t: f64, v: &GridFunction, phi: &GridFunction) -> Result<GridFunction> {
        self.check(v)?;
        self.check(phi)?;
        let mut out = vec![0.0; v.len()];
        self.kernel.apply(phi.values(), &mut out);
        for (o, &vi) in out.iter_mut().zip(v.values()) {
            *o *= self.sigma.eval(t, vi);
        }
        GridFunction::new(*v.grid(), out)
    }

    /// `‖B(t, v)‖²_HS = h^d Σ_i σ(t, v_i)² ‖k(x_i, ·)‖₂²`.
    pub fn hs_norm_sq(&self, t: f64, v: &GridFunction) -> Result<f64> {
        self.check(v)?;
        let vol = self.kernel.grid.cell_volume();
        Ok(vol
            * v.values()
                .iter()
                .zip(&self.kernel.row_norms_sq)
                .map(|(&vi, r)| {
                    let s = self.sigma.eval(t, vi);
                    s * s * r
                })
                .sum::<f64>())
    }

    /// `Σ_j ‖B(t, v) e_j‖₂²` over the discrete sine basis, an orthonormal basis
    /// of the grid functions.
    pub fn hs_norm_sq_parseval_oracle(&self, t: f64, v: &GridFunction) -> Result<f64> {
        self.check(v)?;
        let grid = self.kernel.grid;
        let basis = sine_basis(&grid);
        let mut total = 0.0;
        for (_, e) in basis {
            let e = GridFunction::new(grid, e)?;
            let be = self.apply_b(t, v, &e)?;
            total += be.dot(&be);
        }
        Ok(total)
    }

    /// Compares `‖B(t,v) − B(t,w)‖²_HS` with `C_k L² ‖v − w‖_{2α}^{2α}`.
    pub fn holder_modulus_check(&self, t: f64, v: &GridFunction, w: &GridFunction) -> Result<HolderModulusReport> {
        self.check(v)?;
        self.check(w)?;
        let grid = self.kernel.grid;
        let vol = grid.cell_volume();
        let (alpha, l) = self.sigma.modulus();
        let mut lhs = 0.0;
        let mut pow_sum = 0.0;
        let mut sq_sum = 0.0;
        for ((&a, &b), r) in v.values().iter().zip(w.values()).zip(&self.kernel.row_norms_sq) {
            let ds = self.sigma.eval(t, a) - self.sigma.eval(t, b);
            lhs += ds * ds * r;
            let d = (a - b).abs();
            pow_sum += d.powf(2.0 * alpha);
            sq_sum += d * d;
        }
        lhs *= vol;
        let c = self.kernel.c_k * l * l;
        let bound = c * vol * pow_sum;
        let measure = vol * grid.len() as f64;
        let bound_l2 = c * measure.powf(1.0 - alpha) * (vol * sq_sum).powf(alpha);
        let pass = lhs <= bound * (1.0 + 1e-10) + 1e-300 && bound <= bound_l2 * (1.0 + 1e-10) + 1e-300;
        Ok(HolderModulusReport {
            lhs,
            bound,
            bound_l2,
            pass,
        })
    }
}

/// Discrete sine basis `√2 sin(jπx)` (tensor products in 2D), orthonormal in
/// the `h^d`-weighted pairing. Returns `(mode index product, values)`.
pub fn sine_basis(grid: &Grid) -> Vec<(usize, Vec<f64>)> {
    let n = grid.n_interior();
    let h = grid.h();
    let pi = std::f64::consts::PI;
    let axis = |j: usize| -> Vec<f64> {
        (1..=n)
            .map(|i| 2f64.sqrt() * (j as f64 * pi * i as f64 * h).sin())
            .collect()
    };
    let axes: Vec<Vec<f64>> = (1..=n).map(axis).collect();
    if grid.dim() == 1 {
        axes.into_iter().enumerate().map(|(j, e)| (j + 1, e)).collect()
    } else {
        let mut out = Vec::with_capacity(n * n);
        for (j1, ex) in axes.iter().enumerate() {
            for (j2, ey) in axes.iter().enumerate() {
                let vals = (0..n * n).map(|idx| ex[idx % n] * ey[idx / n]).collect();
                out.push(((j1 + 1) * (j2 + 1), vals));
            }
        }
        out
    }
}

/// Covariance `Q` given by eigenpairs `(q_j, e_j)` on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct QSpectrum {
    grid: Grid,
    eigenvalues: Vec<f64>,
    basis: Vec<Vec<f64>>,
}

impl QSpectrum {
    /// Sine eigenfunctions with `q_j = j^{−decay}` (`(j₁j₂)^{−decay}` in 2D),
    /// keeping at most `num_modes` of them (all by default).
    pub fn sine(grid: Grid, decay: f64, num_modes: Option<usize>) -> Result<Self> {
        if !(decay > 0.0 && decay.is_finite()) {
            return Err(Error::invalid("noise.decay", "must be positive"));
        }
        let mut modes = sine_basis(&grid);
        if let Some(j) = num_modes {
            if j == 0 {
                return Err(Error::invalid("noise.num_modes", "must be at least 1"));
            }
            modes.sort_by_key(|(k, _)| *k);
            modes.truncate(j);
        }
        let eigenvalues = modes.iter().map(|(k, _)| (*k as f64).powf(-decay)).collect();
        let basis = modes.into_iter().map(|(_, e)| e).collect();
        Ok(Self {
            grid,
            eigenvalues,
            basis,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenfunction(&self, j: usize) -> &[f64] {
        &self.basis[j]
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }
}

/// Position of a sampler in its random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub path_index: u64,
    pub counter: u64,
}

/// Draws `ΔW = Σ_j √(q_j dt) ξ_j e_j` with `ξ_j` standard normal.
///
/// Each `(seed, path_index)` selects an independent ChaCha stream, so the
/// increments of a path do not depend on how many other paths are simulated.
#[derive(Clone, Debug)]
pub struct QWienerSampler {
    spectrum: Arc<QSpectrum>,
    seed: u64,
    path_index: u64,
    rng: ChaCha8Rng,
}

impl QWienerSampler {
    pub fn new(spectrum: Arc<QSpectrum>, seed: u64, path_index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_index);
        Self {
            spectrum,
            seed,
            path_index,
            rng,
        }
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            seed: self.seed,
            path_index: self.path_index,
            counter: self.rng.get_word_pos() as u64,
        }
    }

    pub fn spectrum(&self) -> &QSpectrum {
        &self.spectrum
    }

    /// Writes an increment over a step of length `dt` into `out`. A zero step
    /// yields zero without consuming random numbers.
    pub fn sample_into(&mut self, dt: f64, out: &mut [f64]) -> Result<()> {
        if !(dt >= 0.0 && dt.is_finite()) {
            return Err(Error::invalid("dt", format!("must be non-negative, got {dt}")));
        }
        if out.len() != self.spectrum.grid.len() {
            return Err(Error::GridMismatch {
                expected: self.spectrum.grid.len(),
                found: out.len(),
            });
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        if dt == 0.0 {
            return Ok(());
        }
        for (q, e) in self.spectrum.eigenvalues.iter().zip(&self.spectrum.basis) {
            let xi: f64 = StandardNormal.sample(&mut self.rng);
            let c = (q * dt).sqrt() * xi;
            for (o, &ev) in out.iter_mut().zip(e) {
                *o += c * ev;
            }
        }
        Ok(())
    }

    pub fn sample_increment(&mut self, dt: f64) -> Result<GridFunction> {
        let mut out = vec![0.0; self.spectrum.grid.len()];
        self.sample_into(dt, &mut out)?;
        GridFunction::new(self.spectrum.grid, out)
    }
}
