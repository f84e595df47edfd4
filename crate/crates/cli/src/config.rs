//! Run configuration, read from TOML. Every section is optional and falls back
//! to the defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use hspde::evolution::{Model, SigmaEvaluation, SolverConfig};
use hspde::holder_reg::{HolderSpec, TableResolution};
use hspde::noise::{Kernel, QSpectrum};
use hspde::spatial::{DriftSpec, Grid, GridFunction, LerayLionsCoeff, Profile};
use hspde::verify::{ExperimentPlan, HeatOracleConfig, RegularizationStudy, Tolerances};
use hspde::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n_interior: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { dim: 1, n_interior: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientConfig {
    /// `a(ξ) = |ξ|^{p−2} ξ`
    PLaplace { p: f64 },
    /// `a(λ, ξ) = |ξ|^{p−2} ξ − b sin λ`
    Convective { p: f64, b: [f64; 2] },
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig::PLaplace { p: 2.5 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    #[default]
    Zero,
    /// `f(λ) = amplitude · sin λ`
    Sine { amplitude: f64 },
}

impl DriftConfig {
    pub fn build(&self) -> Result<DriftSpec> {
        match self {
            DriftConfig::Zero => Ok(DriftSpec::zero()),
            DriftConfig::Sine { amplitude } if *amplitude == 0.0 => Ok(DriftSpec::zero()),
            DriftConfig::Sine { amplitude } => DriftSpec::sine(*amplitude),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaConfig {
    /// `L |λ|^α`
    Power {
        alpha: f64,
        l_alpha: f64,
    },
    /// `L sign(λ) |λ|^α`
    SignedPower {
        alpha: f64,
        l_alpha: f64,
    },
    Linear {
        slope: f64,
    },
    Zero,
}

impl Default for SigmaConfig {
    fn default() -> Self {
        SigmaConfig::Power {
            alpha: 0.75,
            l_alpha: 1.0,
        }
    }
}

impl SigmaConfig {
    pub fn build(&self) -> Result<HolderSpec> {
        match *self {
            SigmaConfig::Power { alpha, l_alpha } => HolderSpec::power(l_alpha, alpha),
            SigmaConfig::SignedPower { alpha, l_alpha } => HolderSpec::signed_power(l_alpha, alpha),
            SigmaConfig::Linear { slope } => HolderSpec::linear(slope),
            SigmaConfig::Zero => Ok(HolderSpec::zero()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    /// `a exp(−|x−y|²/(2ℓ²))`
    Gaussian {
        amplitude: f64,
        length: f64,
    },
    Constant {
        value: f64,
    },
    /// Square matrix, first line holding the node count.
    Csv {
        path: String,
    },
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig::Gaussian {
            amplitude: 1.0,
            length: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Eigenvalues of `Q` are `j^{−decay}` on the sine basis.
    pub decay: f64,
    /// Number of retained modes; all grid modes when absent.
    pub modes: Option<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            decay: 2.0,
            modes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerturbationConfig {
    /// Highest derivative order in the `(1/n) j` term.
    pub m: usize,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self { m: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigmaEvaluationConfig {
    pub grid_points: usize,
    /// Cache `σₙ` in a table for autonomous coefficients.
    pub table: bool,
    pub table_resolution: TableResolution,
}

impl Default for SigmaEvaluationConfig {
    fn default() -> Self {
        Self {
            grid_points: 1025,
            table: true,
            table_resolution: TableResolution {
                ratio: 1.0 + 1.0 / 128.0,
                ..TableResolution::default()
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContractionConfig {
    /// One coupled-pair experiment per drift amplitude `c` in `f = c sin`.
    pub drift_amplitudes: Vec<f64>,
    /// Added to the initial state to obtain the second initial state.
    pub offset: Profile,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        Self {
            drift_amplitudes: vec![0.0, -1.0],
            offset: Profile::Bump {
                amplitude: 0.3,
                center: [0.3, 0.5],
                width: 0.2,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Heat,
    Energy,
    Contraction,
    Cauchy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n_list: Vec<u32>,
    pub paths: usize,
    pub seed: u64,
    /// 0 uses every available core.
    pub workers: usize,
    pub run: Vec<Experiment>,
    pub tolerances: Tolerances,
    pub contraction: ContractionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_list: vec![4, 8, 16, 32],
            paths: 64,
            seed: 20240601,
            workers: 0,
            run: vec![
                Experiment::Heat,
                Experiment::Energy,
                Experiment::Contraction,
                Experiment::Cauchy,
            ],
            tolerances: Tolerances::default(),
            contraction: ContractionConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub grid: GridConfig,
    pub coefficient: CoefficientConfig,
    pub drift: DriftConfig,
    pub sigma: SigmaConfig,
    pub kernel: KernelConfig,
    pub noise: NoiseConfig,
    pub perturbation: PerturbationConfig,
    pub sigma_evaluation: SigmaEvaluationConfig,
    pub solver: SolverConfig,
    pub initial: Profile,
    pub experiment: ExperimentConfig,
    pub regcheck: RegularizationStudy,
    pub heat: HeatOracleConfig,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML file, or the configuration embedded in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: crate::manifest::RunManifest =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            return Ok(m.config);
        }
        let mut cfg = Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        cfg.resolve_paths(path);
        Ok(cfg)
    }

    /// Makes CSV paths relative to the config file absolute-or-cwd-relative.
    fn resolve_paths(&mut self, config_path: &Path) {
        let fix = |p: &mut String| *p = resolve_relative(config_path, p).to_string_lossy().into_owned();
        if let KernelConfig::Csv { path } = &mut self.kernel {
            fix(path);
        }
        if let Profile::Csv { path } = &mut self.initial {
            fix(path);
        }
        if let Profile::Csv { path } = &mut self.experiment.contraction.offset {
            fix(path);
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.grid.dim, self.grid.n_interior)
    }

    pub fn model(&self) -> Result<Model> {
        self.model_with_drift(self.drift.build()?)
    }

    pub fn model_with_drift(&self, drift: DriftSpec) -> Result<Model> {
        let grid = self.grid()?;
        let coeff = match self.coefficient {
            CoefficientConfig::PLaplace { p } => LerayLionsCoeff::p_laplace(p)?,
            CoefficientConfig::Convective { p, b } => LerayLionsCoeff::convective(p, b)?,
        };
        let kernel = match &self.kernel {
            KernelConfig::Gaussian { amplitude, length } => Kernel::gaussian(grid, *amplitude, *length)?,
            KernelConfig::Constant { value } => Kernel::constant(grid, *value)?,
            KernelConfig::Csv { path } => Kernel::from_csv(grid, Path::new(path))?,
        };
        let se = &self.sigma_evaluation;
        Ok(Model {
            grid,
            coeff,
            drift,
            sigma: self.sigma.build()?,
            kernel: Arc::new(kernel),
            spectrum: Arc::new(QSpectrum::sine(grid, self.noise.decay, self.noise.modes)?),
            m: self.perturbation.m,
            sigma_evaluation: SigmaEvaluation {
                grid_points: se.grid_points,
                table: se.table.then_some(se.table_resolution),
            },
        })
    }

    pub fn initial_state(&self) -> Result<GridFunction> {
        self.initial.sample(self.grid()?)
    }

    pub fn plan(&self, model: Model) -> ExperimentPlan {
        let e = &self.experiment;
        ExperimentPlan {
            model,
            base: self.solver.clone(),
            n_list: e.n_list.clone(),
            num_paths: e.paths,
            master_seed: e.seed,
            tolerances: e.tolerances,
            workers: e.workers,
        }
    }

    /// Checks everything that can be checked without running a simulation.
    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.initial_state()?;
        self.solver.validate()?;
        for &c in &self.experiment.contraction.drift_amplitudes {
            DriftConfig::Sine { amplitude: c }.build()?;
        }
        self.experiment.contraction.offset.sample(self.grid()?)?;
        Ok(())
    }
}

/// Resolves a path given in a config file relative to that file.
fn resolve_relative(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}
