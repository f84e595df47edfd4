use std::sync::Arc;

use proptest::prelude::*;

use hspde::evolution::{Model, NoiseChoice, SigmaEvaluation, Solver, SolverConfig};
use hspde::holder_reg::{gap_bound, HolderSpec, RegularizedSigma, TableResolution};
use hspde::noise::{Kernel, QSpectrum};
use hspde::spatial::{DriftSpec, Grid, LerayLionsCoeff, Profile};
use hspde::verify::run_paths;

fn model(sigma: HolderSpec) -> Model {
    let grid = Grid::new(1, 24).unwrap();
    Model {
        grid,
        coeff: LerayLionsCoeff::p_laplace(2.5).unwrap(),
        drift: DriftSpec::zero(),
        sigma,
        kernel: Arc::new(Kernel::gaussian(grid, 1.0, 0.1).unwrap()),
        spectrum: Arc::new(QSpectrum::sine(grid, 2.0, None).unwrap()),
        m: 2,
        sigma_evaluation: SigmaEvaluation {
            grid_points: 257,
            table: Some(TableResolution {
                ratio: 1.0 + 1.0 / 64.0,
                ..TableResolution::default()
            }),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn regularized_sigma_is_below_lipschitz_and_close(
        alpha in 0.2..0.95_f64,
        l in 0.5..2.0_f64,
        n in 2u32..64,
        a in -3.0..3.0_f64,
        b in -3.0..3.0_f64,
    ) {
        let base = HolderSpec::power(l, alpha).unwrap();
        let reg = RegularizedSigma::new(base.clone(), n).unwrap().with_grid_points(257).unwrap();
        let finer = RegularizedSigma::new(base.clone(), 2 * n).unwrap().with_grid_points(257).unwrap();
        let (sa, sb) = (reg.eval(0.0, a).unwrap(), reg.eval(0.0, b).unwrap());
        prop_assert!(sa <= base.eval(0.0, a) + 1e-12);
        prop_assert!((sa - sb).abs() <= n as f64 * (a - b).abs() * (1.0 + 1e-6) + 1e-12);
        prop_assert!(base.eval(0.0, a) - sa <= gap_bound(alpha, l, n).unwrap() * (1.0 + 1e-6));
        // inf-convolutions increase with the penalty weight
        prop_assert!(sa <= finer.eval(0.0, a).unwrap() + 1e-12);
    }
}

#[test]
fn deterministic_flow_dissipates_l2_energy() {
    let m = model(HolderSpec::zero());
    let cfg = SolverConfig {
        n: 8,
        dt: 1e-3,
        t_end: 0.05,
        ..SolverConfig::default()
    };
    let solver = Solver::new(&m, cfg).unwrap();
    let u0 = Profile::Random {
        amplitude: 0.5,
        seed: 11,
    }
    .sample(m.grid)
    .unwrap();
    let rec = solver.simulate_path(&u0, &mut solver.sampler(0)).unwrap();
    for w in rec.energies.windows(2) {
        assert!(
            w[1].l2_sq <= w[0].l2_sq * (1.0 + 1e-12),
            "{} > {}",
            w[1].l2_sq,
            w[0].l2_sq
        );
    }
    assert!(rec.energies.last().unwrap().l2_sq < rec.energies[0].l2_sq);
}

#[test]
fn paths_do_not_depend_on_worker_count() {
    let m = model(HolderSpec::power(1.0, 0.75).unwrap());
    let cfg = SolverConfig {
        n: 8,
        dt: 2e-3,
        t_end: 0.02,
        seed: 5,
        ..SolverConfig::default()
    };
    let solver = Solver::new(&m, cfg).unwrap();
    let u0 = Profile::default().sample(m.grid).unwrap();
    let run = |workers| run_paths(workers, 4, |k| solver.simulate_path(&u0, &mut solver.sampler(k))).unwrap();
    let (serial, pooled) = (run(1), run(3));
    for (a, b) in serial.iter().zip(&pooled) {
        assert_eq!(a.noise_digest, b.noise_digest);
        assert_eq!(a.final_state().values(), b.final_state().values());
    }
    assert_ne!(serial[0].noise_digest, serial[1].noise_digest);
}

#[test]
fn original_and_regularized_noise_agree_for_large_n() {
    let m = model(HolderSpec::power(1.0, 0.75).unwrap());
    let u0 = Profile::default().sample(m.grid).unwrap();
    let final_state = |choice| {
        let cfg = SolverConfig {
            n: 4096,
            dt: 2e-3,
            t_end: 0.02,
            perturbation: false,
            noise_coefficient: choice,
            ..SolverConfig::default()
        };
        let solver = Solver::new(&m, cfg).unwrap();
        solver
            .simulate_path(&u0, &mut solver.sampler(2))
            .unwrap()
            .final_state()
            .clone()
    };
    let a = final_state(NoiseChoice::Original);
    let b = final_state(NoiseChoice::Regularized);
    let diff = a.sub(&b).values().iter().map(|v| v.abs()).fold(0.0, f64::max);
    assert!(diff < 1e-3, "{diff}");
}
