//! Time stepping for `du + Aₙ(u) dt = Bₙ(t, u) dW`.
//!
//! Both schemes evaluate the noise at the left endpoint (Itô form):
//!
//! * explicit: `u⁺ = u − dt Aₙ(u) + σₙ(t, u)·(K ΔW)`
//! * semi-implicit: `u⁺ + dt Aₙ(u⁺) = u + σₙ(t, u)·(K ΔW)`, solved by damped Newton.
//!
//! No convergence rate in `dt` or `h` is claimed; the tests check structural
//! properties (determinism, exact linear cases, the discrete energy identity).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::banded::BandMatrix;
use crate::error::{Error, Result};
use crate::holder_reg::{n0, HolderSpec, RegularizedSigma, TableResolution, TabulatedSigma};
use crate::noise::{Kernel, NoiseCoefficient, NoiseOperator, QSpectrum, QWienerSampler};
use crate::spatial::{
    n0_threshold, poincare_constant, DriftSpec, Energies, Grid, GridFunction, HigherOrderPerturbation, LerayLionsCoeff,
    SpatialOperator,
};

/// States with `‖u‖₂` above this are treated as blown up.
pub const BLOW_UP_NORM: f64 = 1e12;

const ARMIJO: f64 = 1e-4;
const MIN_DAMPING: f64 = 1.0 / (1u64 << 20) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    SemiImplicit,
}

/// Which coefficient multiplies the noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseChoice {
    /// `σₙ`, as in the approximating equation.
    Regularized,
    /// `σ` itself, for comparisons with the limit equation.
    Original,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Regularization index.
    pub n: u32,
    /// Whether the `(1/n) j` term is included.
    pub perturbation: bool,
    pub noise_coefficient: NoiseChoice,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub seed: u64,
    pub record_every: usize,
    /// A failed Newton solve is retried with the step split into `2, 4, …`
    /// sub-steps (sharing the same Wiener increment) up to this many times.
    pub max_dt_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: 8,
            perturbation: true,
            noise_coefficient: NoiseChoice::Regularized,
            dt: 2e-3,
            t_end: 0.5,
            scheme: Scheme::SemiImplicit,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            seed: 0,
            record_every: 1,
            max_dt_halvings: 4,
        }
    }
}

impl SolverConfig {
    /// Number of steps `T / dt`; rejects step sizes that do not divide the horizon.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(
                "solver.dt",
                format!("must be positive, got {}", self.dt),
            ));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("solver.t_end", "must be non-negative"));
        }
        let steps = (self.t_end / self.dt).round();
        if (steps * self.dt - self.t_end).abs() > 1e-9 * self.t_end.max(1.0) {
            return Err(Error::invalid(
                "solver.dt",
                format!("{} does not divide t_end = {}", self.dt, self.t_end),
            ));
        }
        Ok(steps as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.steps()?;
        if self.n == 0 {
            return Err(Error::invalid("solver.n", "must be at least 1"));
        }
        if !(self.newton_tol > 0.0) {
            return Err(Error::invalid("solver.newton_tol", "must be positive"));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::invalid("solver.newton_max_iter", "must be at least 1"));
        }
        if self.record_every == 0 {
            return Err(Error::invalid("solver.record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// How `σₙ` is evaluated inside the time loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaEvaluation {
    pub grid_points: usize,
    /// Cache `σₙ` in a table (autonomous coefficients only).
    pub table: Option<TableResolution>,
}

impl Default for SigmaEvaluation {
    fn default() -> Self {
        Self {
            grid_points: crate::holder_reg::DEFAULT_GRID_POINTS,
            table: Some(TableResolution::default()),
        }
    }
}

/// Everything about the equation that does not depend on `n` or the time grid.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: Grid,
    pub coeff: LerayLionsCoeff,
    pub drift: DriftSpec,
    pub sigma: HolderSpec,
    pub kernel: Arc<Kernel>,
    pub spectrum: Arc<QSpectrum>,
    /// Order `m` of the perturbation and of the `H^m_0`, `W^{m,q}_0` energies.
    pub m: usize,
    pub sigma_evaluation: SigmaEvaluation,
}

impl Model {
    /// The coefficient multiplying the noise for index `n`.
    pub fn noise_coefficient(&self, choice: NoiseChoice, n: u32) -> Result<NoiseCoefficient> {
        if choice == NoiseChoice::Original {
            return Ok(NoiseCoefficient::Original(self.sigma.clone()));
        }
        let reg = RegularizedSigma::new(self.sigma.clone(), n)?.with_grid_points(self.sigma_evaluation.grid_points)?;
        Ok(match self.sigma_evaluation.table {
            _ if reg.is_identity() => NoiseCoefficient::Original(self.sigma.clone()),
            Some(res) if self.sigma.is_autonomous() => {
                NoiseCoefficient::Tabulated(Arc::new(TabulatedSigma::build(reg, res)?))
            }
            _ => NoiseCoefficient::Regularized(reg),
        })
    }

    /// `N₀` for this model, using the discrete Poincaré constant and a sampled
    /// embedding constant.
    pub fn n0_threshold(&self) -> Result<u32> {
        let q = crate::spatial::q_of_p(self.coeff.p)?;
        if self.coeff.c2 <= 0.0 {
            return Ok(n0(self.sigma.c_sigma()));
        }
        let op = SpatialOperator::new(
            self.grid,
            self.coeff.clone(),
            self.drift.clone(),
            HigherOrderPerturbation::disabled(self.m, self.coeff.p)?,
        )?;
        Ok(n0_threshold(
            self.sigma.c_sigma(),
            q,
            self.coeff.c2,
            op.embedding_constant(),
            self.coeff.nu,
            poincare_constant(&self.grid),
        ))
    }
}

/// Accumulated terms of the discrete identity
/// `‖u^K‖² − ‖u⁰‖² = Σ (drift work + noise work + Itô term + cross terms)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub initial_l2_sq: f64,
    pub final_l2_sq: f64,
    /// `−2 dt ⟨uᵏ, Aₙ(ũ)⟩` with `ũ` the point where the drift was evaluated.
    pub drift_work: f64,
    /// `2 ⟨uᵏ, ξᵏ⟩` with `ξᵏ = σₙ(uᵏ) K ΔWᵏ`.
    pub noise_work: f64,
    /// `‖ξᵏ‖²`
    pub ito_correction: f64,
    /// `‖dt Aₙ(ũ)‖² − 2 dt ⟨Aₙ(ũ), ξᵏ⟩`
    pub cross_terms: f64,
}

impl EnergyLedger {
    pub fn mismatch(&self) -> f64 {
        (self.final_l2_sq - self.initial_l2_sq)
            - (self.drift_work + self.noise_work + self.ito_correction + self.cross_terms)
    }
}

/// Time integrals accumulated by the left-endpoint rule over every step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyIntegrals {
    pub grad_lp_p: f64,
    pub hm0_sq: f64,
    pub wmq_q: f64,
    /// `∫ ‖u‖₂² dt`
    pub l2_sq: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub n: u32,
    pub dt: f64,
    pub times: Vec<f64>,
    pub energies: Vec<Energies>,
    pub newton_iters: Vec<usize>,
    pub states: Vec<GridFunction>,
    pub integrals: EnergyIntegrals,
    pub sup_l2_sq: f64,
    pub ledger: EnergyLedger,
    /// FNV-1a hash of every Wiener increment consumed.
    pub noise_digest: u64,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> &GridFunction {
        self.states.last().expect("record holds the initial state")
    }
}

struct Workspace {
    increment: Vec<f64>,
    noise: Vec<f64>,
    drift: Vec<f64>,
    rhs: Vec<f64>,
    residual: Vec<f64>,
    delta: Vec<f64>,
    trial: Vec<f64>,
    scratch: Vec<f64>,
    jacobian: BandMatrix,
}

impl Workspace {
    fn new(len: usize, bw: usize) -> Self {
        Self {
            increment: vec![0.0; len],
            noise: vec![0.0; len],
            drift: vec![0.0; len],
            rhs: vec![0.0; len],
            residual: vec![0.0; len],
            delta: vec![0.0; len],
            trial: vec![0.0; len],
            scratch: vec![0.0; len],
            jacobian: BandMatrix::zeros(len, bw),
        }
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    fn write(&mut self, values: &[f64]) {
        for v in values {
            for b in v.to_bits().to_le_bytes() {
                self.0 ^= b as u64;
                self.0 = self.0.wrapping_mul(0x100000001b3);
            }
        }
    }
}

/// One trajectory in progress.
struct PathState {
    u: Vec<f64>,
    energy: Energies,
    record: TrajectoryRecord,
    digest: Fnv,
    ws: Workspace,
}

fn check_index(model: &Model, n: u32) -> Result<()> {
    let min_n = n0(model.sigma.c_sigma());
    if n < min_n {
        return Err(Error::invalid(
            "solver.n",
            format!("regularization index {n} is below n0 = {min_n}"),
        ));
    }
    Ok(())
}

/// A solver for one regularization index on one time grid.
#[derive(Clone, Debug)]
pub struct Solver {
    config: SolverConfig,
    steps: usize,
    op: SpatialOperator,
    noise: NoiseOperator,
    spectrum: Arc<QSpectrum>,
}

impl Solver {
    pub fn new(model: &Model, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        check_index(model, config.n)?;
        let sigma = model.noise_coefficient(config.noise_coefficient, config.n)?;
        Self::with_noise_coefficient(model, config, sigma)
    }

    /// Like [`Solver::new`] but with a prebuilt noise coefficient, so several
    /// solvers can share one `σₙ` table.
    pub fn with_noise_coefficient(model: &Model, config: SolverConfig, sigma: NoiseCoefficient) -> Result<Self> {
        config.validate()?;
        let steps = config.steps()?;
        if model.kernel.grid() != &model.grid || model.spectrum.grid() != &model.grid {
            return Err(Error::GridMismatch {
                expected: model.grid.len(),
                found: model.kernel.grid().len(),
            });
        }
        check_index(model, config.n)?;
        let pert = if config.perturbation {
            HigherOrderPerturbation::new(model.m, model.coeff.p, config.n)?
        } else {
            HigherOrderPerturbation::disabled(model.m, model.coeff.p)?
        };
        let op = SpatialOperator::new(model.grid, model.coeff.clone(), model.drift.clone(), pert)?;
        Ok(Self {
            config,
            steps,
            op,
            noise: NoiseOperator::new(sigma, model.kernel.clone()),
            spectrum: model.spectrum.clone(),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn operator(&self) -> &SpatialOperator {
        &self.op
    }

    pub fn noise(&self) -> &NoiseOperator {
        &self.noise
    }

    pub fn grid(&self) -> &Grid {
        self.op.grid()
    }

    /// A sampler on this solver's spectrum for the given path.
    pub fn sampler(&self, path_index: u64) -> QWienerSampler {
        QWienerSampler::new(self.spectrum.clone(), self.config.seed, path_index)
    }

    /// Gershgorin bound `2 / max_i Σ_j |∂Aₙ/∂u|_ij` at `u`; explicit steps
    /// above it are expected to be unstable.
    pub fn explicit_stability_limit(&self, u: &GridFunction) -> f64 {
        let len = u.len();
        let mut jac = BandMatrix::zeros(len, self.op.bandwidth());
        self.op.add_jacobian(u.values(), 1.0, &mut jac);
        let bw = self.op.bandwidth();
        let radius = (0..len)
            .map(|i| {
                (i.saturating_sub(bw)..=(i + bw).min(len - 1))
                    .map(|j| jac.get(i, j).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max);
        if radius > 0.0 {
            2.0 / radius
        } else {
            f64::INFINITY
        }
    }

    fn l2_sq(&self, v: &[f64]) -> f64 {
        self.grid().cell_volume() * v.iter().map(|x| x * x).sum::<f64>()
    }

    fn pair(&self, a: &[f64], b: &[f64]) -> f64 {
        self.grid().cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    /// Noise term `σₙ(t, uᵢ)(K ΔW)ᵢ` for a given increment.
    pub fn noise_term(&self, t: f64, u: &[f64], increment: &[f64], out: &mut [f64]) {
        self.noise.kernel().apply(increment, out);
        let sigma = self.noise.sigma();
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = if *o == 0.0 { 0.0 } else { sigma.eval(t, ui) * *o };
        }
    }

    /// One explicit Euler–Maruyama step with a given noise term `σₙ(u) K ΔW`.
    pub fn step_explicit(&self, u: &GridFunction, noise: &GridFunction) -> Result<GridFunction> {
        u.check_same_grid(noise)?;
        let mut drift = vec![0.0; u.len()];
        self.op.apply_a_n(u.values(), &mut drift);
        let out = u
            .values()
            .iter()
            .zip(&drift)
            .zip(noise.values())
            .map(|((x, a), r)| x - self.config.dt * a + r)
            .collect();
        GridFunction::new(*u.grid(), out).map_err(|_| Error::BlowUp {
            step: 0,
            time: 0.0,
            reason: "non-finite state after explicit step".into(),
        })
    }

    /// One drift-implicit step `u⁺ + dt Aₙ(u⁺) = u + noise`. Returns the new
    /// state and the number of Newton iterations.
    pub fn step_semi_implicit(&self, u: &GridFunction, noise: &GridFunction) -> Result<(GridFunction, usize)> {
        u.check_same_grid(noise)?;
        let mut ws = Workspace::new(u.len(), self.op.bandwidth());
        let mut x = u.values().to_vec();
        let iters = self.implicit_solve(&mut x, noise.values(), &mut ws)?;
        Ok((GridFunction::new(*u.grid(), x)?, iters))
    }

    /// Solves `x⁺ + dt Aₙ(x⁺) = x + r` in place, splitting the step on failure.
    fn implicit_solve(&self, x: &mut [f64], r: &[f64], ws: &mut Workspace) -> Result<usize> {
        let start = x.to_vec();
        let mut last_err = None;
        for halving in 0..=self.config.max_dt_halvings {
            let parts = 1usize << halving;
            let h = self.config.dt / parts as f64;
            x.copy_from_slice(&start);
            let mut total = 0;
            let mut failed = false;
            for _ in 0..parts {
                for ((rhs, &xi), &ri) in ws.rhs.iter_mut().zip(x.iter()).zip(r) {
                    *rhs = xi + ri / parts as f64;
                }
                match self.newton(x, h, ws) {
                    Ok(it) => total += it,
                    Err(e) => {
                        last_err = Some(e);
                        failed = true;
                        break;
                    }
                }
            }
            if !failed {
                return Ok(total);
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn residual(&self, x: &[f64], h: f64, rhs: &[f64], scratch: &mut [f64], out: &mut [f64]) -> f64 {
        self.op.apply_a_n(x, scratch);
        for i in 0..x.len() {
            out[i] = x[i] + h * scratch[i] - rhs[i];
        }
        self.l2_sq(out).sqrt()
    }

    /// Damped Newton for `x + h Aₙ(x) = ws.rhs`, starting from `ws.rhs`.
    fn newton(&self, x: &mut [f64], h: f64, ws: &mut Workspace) -> Result<usize> {
        x.copy_from_slice(&ws.rhs);
        let scale = self.l2_sq(&ws.rhs).sqrt().max(1.0);
        let tol = self.config.newton_tol * scale;
        let mut norm = self.residual(x, h, &ws.rhs, &mut ws.scratch, &mut ws.residual);
        for it in 0..self.config.newton_max_iter {
            if norm <= tol {
                return Ok(it);
            }
            if !norm.is_finite() {
                break;
            }
            ws.jacobian.fill_zero();
            self.op.add_jacobian(x, h, &mut ws.jacobian);
            for i in 0..x.len() {
                ws.jacobian.add(i, i, 1.0);
            }
            ws.jacobian.factorize()?;
            for (d, g) in ws.delta.iter_mut().zip(&ws.residual) {
                *d = -g;
            }
            ws.jacobian.solve_factored(&mut ws.delta);
            let mut damping = 1.0;
            loop {
                for i in 0..x.len() {
                    ws.trial[i] = x[i] + damping * ws.delta[i];
                }
                let trial_norm = self.residual(&ws.trial, h, &ws.rhs, &mut ws.scratch, &mut ws.drift);
                if trial_norm <= (1.0 - ARMIJO * damping) * norm || damping <= MIN_DAMPING {
                    x.copy_from_slice(&ws.trial);
                    ws.residual.copy_from_slice(&ws.drift);
                    norm = trial_norm;
                    break;
                }
                damping *= 0.5;
            }
        }
        if norm <= tol {
            return Ok(self.config.newton_max_iter);
        }
        Err(Error::NewtonDiverged {
            iterations: self.config.newton_max_iter,
            residual: norm,
        })
    }

    fn start(&self, u0: &GridFunction) -> Result<PathState> {
        if u0.grid() != self.grid() {
            return Err(Error::GridMismatch {
                expected: self.grid().len(),
                found: u0.len(),
            });
        }
        if !u0.is_finite() {
            return Err(Error::NonFinite {
                context: "initial state".into(),
            });
        }
        let e0 = self.op.energies(u0.values());
        let record = TrajectoryRecord {
            n: self.config.n,
            dt: self.config.dt,
            times: vec![0.0],
            energies: vec![e0],
            newton_iters: vec![0],
            states: vec![u0.clone()],
            integrals: EnergyIntegrals::default(),
            sup_l2_sq: e0.l2_sq,
            ledger: EnergyLedger {
                initial_l2_sq: e0.l2_sq,
                final_l2_sq: e0.l2_sq,
                ..Default::default()
            },
            noise_digest: 0,
        };
        Ok(PathState {
            u: u0.values().to_vec(),
            energy: e0,
            record,
            digest: Fnv::new(),
            ws: Workspace::new(u0.len(), self.op.bandwidth()),
        })
    }

    /// Advances one path by one step; the increment is taken from `ws.increment`.
    fn advance(&self, path: &mut PathState, k: usize) -> Result<()> {
        let dt = self.config.dt;
        let t = k as f64 * dt;
        let PathState {
            u,
            energy,
            record,
            digest,
            ws,
        } = path;
        digest.write(&ws.increment);

        let current = *energy;
        record.integrals.grad_lp_p += dt * current.grad_lp_p;
        record.integrals.hm0_sq += dt * current.hm0_sq;
        record.integrals.wmq_q += dt * current.wmq_q;
        record.integrals.l2_sq += dt * current.l2_sq;

        let inc = std::mem::take(&mut ws.increment);
        let mut noise = std::mem::take(&mut ws.noise);
        self.noise_term(t, u, &inc, &mut noise);
        ws.increment = inc;

        let before = u.clone();
        let iters = match self.config.scheme {
            Scheme::Explicit => {
                self.op.apply_a_n(u, &mut ws.drift);
                for i in 0..u.len() {
                    u[i] += -dt * ws.drift[i] + noise[i];
                }
                0
            }
            Scheme::SemiImplicit => self.implicit_solve(u, &noise, ws).map_err(|err| Error::BlowUp {
                step: k + 1,
                time: t + dt,
                reason: err.to_string(),
            })?,
        };
        let norm_sq = self.l2_sq(u);
        if !u.iter().all(|v| v.is_finite()) || !norm_sq.is_finite() {
            return Err(Error::BlowUp {
                step: k + 1,
                time: t + dt,
                reason: "non-finite state".into(),
            });
        }
        if norm_sq.sqrt() > BLOW_UP_NORM {
            return Err(Error::BlowUp {
                step: k + 1,
                time: t + dt,
                reason: format!("L2 norm {:.3e} exceeds {BLOW_UP_NORM:.0e}", norm_sq.sqrt()),
            });
        }

        // energy identity with the drift evaluated where the scheme used it
        let drift_point: &[f64] = match self.config.scheme {
            Scheme::Explicit => &before,
            Scheme::SemiImplicit => u,
        };
        self.op.apply_a_n(drift_point, &mut ws.drift);
        let l = &mut record.ledger;
        l.drift_work += -2.0 * dt * self.pair(&before, &ws.drift);
        l.noise_work += 2.0 * self.pair(&before, &noise);
        l.ito_correction += self.l2_sq(&noise);
        l.cross_terms += dt * dt * self.l2_sq(&ws.drift) - 2.0 * dt * self.pair(&ws.drift, &noise);
        l.final_l2_sq = norm_sq;
        ws.noise = noise;

        record.sup_l2_sq = record.sup_l2_sq.max(norm_sq);
        *energy = self.op.energies(u);
        let step = k + 1;
        if step.is_multiple_of(self.config.record_every) || step == self.steps {
            record.times.push(step as f64 * dt);
            record.energies.push(*energy);
            record.newton_iters.push(iters);
            record.states.push(GridFunction::new(*self.grid(), u.clone())?);
        }
        Ok(())
    }

    fn finish(&self, mut path: PathState) -> TrajectoryRecord {
        path.record.noise_digest = path.digest.0;
        path.record
    }

    /// Integrates one path from `u0` over `[0, T]`.
    pub fn simulate_path(&self, u0: &GridFunction, sampler: &mut QWienerSampler) -> Result<TrajectoryRecord> {
        let mut path = self.start(u0)?;
        for k in 0..self.steps {
            sampler.sample_into(self.config.dt, &mut path.ws.increment)?;
            self.advance(&mut path, k)?;
        }
        Ok(self.finish(path))
    }

    /// Integrates two initial states on the same Wiener increments.
    pub fn simulate_coupled_pair(
        &self,
        u0_a: &GridFunction,
        u0_b: &GridFunction,
        sampler: &mut QWienerSampler,
    ) -> Result<(TrajectoryRecord, TrajectoryRecord)> {
        u0_a.check_same_grid(u0_b)?;
        let mut a = self.start(u0_a)?;
        let mut b = self.start(u0_b)?;
        for k in 0..self.steps {
            sampler.sample_into(self.config.dt, &mut a.ws.increment)?;
            b.ws.increment.copy_from_slice(&a.ws.increment);
            self.advance(&mut a, k)?;
            self.advance(&mut b, k)?;
        }
        Ok((self.finish(a), self.finish(b)))
    }
}
