use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use sde_opinf::bench::experiment::*;
use sde_opinf::bench::heat1d::{build_heat1d_fom, Heat1dSpec};
use sde_opinf::bench::heat2d::{build_heat2d_fom, Heat2dSpec, TARGET_UNKNOWNS};
use sde_opinf::bench::metrics::*;
use sde_opinf::moments::{integrate_moments, MomentSource, MomentTrajectory, DEFAULT_SUBSTEPS};
use sde_opinf::{ControlSignal, TimeGrid};

#[test]
fn noise_free_heat1d_decays_without_input() {
    let mut sys = build_heat1d_fom(&Heat1dSpec::default()).unwrap();
    sys.diffusion = DMatrix::zeros(sys.state_dim, 2);
    let x0 = DVector::from_fn(sys.state_dim, |i, _| ((i * 7) as f64).sin());
    let sys = sys.with_initial_mean(x0.clone());
    let grid = TimeGrid::new(100, 1e-3).unwrap();
    let m = integrate_moments(&sys, &ControlSignal::constant(0.0), &grid, 4).unwrap();
    for w in m.means.windows(2) {
        assert!(w[1].norm() < w[0].norm());
    }
    assert!(m.means[grid.steps].norm() < x0.norm());
}

#[test]
fn heat2d_input_and_noise_profiles_coincide() {
    let fom = build_heat2d_fom(&Heat2dSpec::default()).unwrap();
    let b: Vec<u64> = fom.system.drift_input.iter().map(|v| v.to_bits()).collect();
    let m: Vec<u64> = fom.system.diffusion.iter().map(|v| v.to_bits()).collect();
    assert_eq!(b, m);
    assert!(fom.unknowns().abs_diff(TARGET_UNKNOWNS) <= 1);
}

fn trajectory(seed: &[f64], n: usize, len: usize) -> MomentTrajectory {
    let at = |k: usize| seed[k % seed.len()];
    MomentTrajectory {
        means: (0..len).map(|i| DVector::from_fn(n, |j, _| at(i * n + j))).collect(),
        covariances: (0..len)
            .map(|i| {
                let g = DMatrix::from_fn(n, n, |a, b| at(3 + i + a * n + b));
                &g * g.transpose()
            })
            .collect(),
        grid: TimeGrid::new(len - 1, 0.1).unwrap(),
        source: MomentSource::ExactOde,
    }
}

proptest! {
    #[test]
    fn relative_errors_are_scale_invariant(
        a in prop::collection::vec(-1.0f64..1.0, 37),
        b in prop::collection::vec(-1.0f64..1.0, 23),
        c in prop::sample::select(vec![-1e3, -2.5, 0.01, 1.0, 7.0, 1e4]),
    ) {
        let fom = trajectory(&a, 4, 6);
        let rom = trajectory(&b, 2, 6);
        let v = DMatrix::from_fn(4, 2, |i, j| ((i + 3 * j) as f64).cos()).qr().q();
        let (e0, c0) = relative_errors(&fom, &rom, &v).unwrap();
        let (e1, c1) = relative_errors(&scale_moments(&fom, c), &scale_moments(&rom, c), &v).unwrap();
        prop_assert!((e0.unwrap() - e1.unwrap()).abs() <= 1e-12 * (1.0 + e0.unwrap()));
        prop_assert!((c0.unwrap() - c1.unwrap()).abs() <= 1e-12 * (1.0 + c0.unwrap()));
    }
}

#[test]
fn zero_mean_cells_are_undefined() {
    let z = MomentTrajectory {
        means: vec![DVector::zeros(2); 3],
        covariances: vec![DMatrix::identity(2, 2); 3],
        grid: TimeGrid::new(2, 0.5).unwrap(),
        source: MomentSource::ExactOde,
    };
    let v = DMatrix::identity(2, 2);
    let (e, c) = relative_errors(&z, &z, &v).unwrap();
    assert_eq!(e, None);
    assert_eq!(c, Some(0.0));
}

#[test]
fn pod_error_shrinks_with_dimension_on_heat1d() {
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Heat1d);
    cfg.subspace.paths = 200;
    let fom = build_fom(&cfg.benchmark).unwrap();
    let subspace = subspace_stage(&fom, &cfg).unwrap();
    let grid = cfg.benchmark.grid().unwrap();
    let u = ControlSignal::cosine(1.0, 5.0, grid.horizon());
    let full = integrate_moments(&fom.system, &u, &grid, DEFAULT_SUBSTEPS).unwrap();
    let error = |r: usize| {
        let rom = pod_rom(&fom, &subspace.basis, r).unwrap();
        let m = integrate_moments(&rom, &u, &grid, DEFAULT_SUBSTEPS).unwrap();
        relative_errors(&full, &m, &subspace.basis.truncate(r).unwrap().basis)
            .unwrap()
            .0
            .unwrap()
    };
    assert!(error(10) <= error(2));
}

#[test]
fn configuration_is_validated() {
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Ou);
    cfg.training.paths = vec![1];
    assert!(cfg.validate().unwrap_err().to_string().contains("training.paths"));
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Heat1d);
    cfg.evaluation.dims = vec![0];
    assert!(cfg.validate().is_err());
}

#[test]
fn training_pairs_follow_the_protocol() {
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Ou);
    cfg.training.inputs = 4;
    cfg.subspace.paths = 20;
    cfg.evaluation.dims = vec![1];
    let fom = build_fom(&cfg.benchmark).unwrap();
    let data = subspace_stage(&fom, &cfg).unwrap();
    let pairs = training_pairs(&fom, &data.basis, &cfg);
    assert_eq!(pairs.len(), 5);
    let inputs: Vec<f64> = pairs[..4].iter().map(|(_, u, _)| u.eval(0.0)[0]).collect();
    assert_eq!(inputs, vec![-1.0, 0.0, 1.0, 2.0]);
    assert!(pairs[..4].iter().all(|(_, _, x0)| x0.norm() == 0.0));
    let (kind, u, x0) = &pairs[4];
    assert_eq!(*kind, RunKind::Initial(1));
    assert_eq!(u.eval(0.3)[0], 0.0);
    assert_eq!(x0, &data.basis.basis.column(0).into_owned());
}

#[test]
fn ou_experiment_runs_end_to_end() {
    let mut cfg = ExperimentConfig::new(BenchmarkKind::Ou);
    cfg.subspace.paths = 100;
    cfg.training.paths = vec![50, 400];
    cfg.training.inputs = 3;
    cfg.evaluation.dims = vec![1];
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.report.methods, vec!["POD", "OpInf_L50", "OpInf_L400"]);
    let pod = out.report.e_mean[0][0].unwrap();
    assert!(pod < 1e-12, "POD with the full basis is exact, got {pod}");
    let fine = out.report.e_mean[0][2].unwrap();
    assert!(fine < 0.2, "OpInf mean error {fine}");
    assert_eq!(out.report.noise_dims[0][2], Some(1));
}
