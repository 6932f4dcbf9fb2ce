//! Drift-implicit Euler–Maruyama sampling with reproducible noise streams.
//!
//! Each step solves
//!
//! ```text
//! (I - h Psi(t_{k+1})) x_{k+1} = x_k + h B u(t_{k+1}) + M dW_k,
//! ```
//!
//! with `dW_k = sqrt(h) G z_k`, `G G^T = K` and `z_k` standard normal. Path `j`
//! of run `rho` draws from a ChaCha20 stream keyed by `(base_seed, rho, j)`,
//! so a path's trajectory does not depend on the ensemble size or on how the
//! paths are scheduled across threads.
//!
//! Ensembles are advanced step-major: all paths are held as the columns of an
//! `n x L` matrix, the step matrix is factored once per time step (or once in
//! total when `Psi` is constant) and a [`StepObserver`] sees the full state
//! matrix after every step, which lets moment estimators run without storing
//! trajectories.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{self, LinearSolver};
use crate::model::{BilinearSdeSystem, ControlSignal, TimeGrid, PSD_TOLERANCE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPolicy {
    pub base_seed: u64,
}

impl SeedPolicy {
    pub fn new(base_seed: u64) -> Self {
        SeedPolicy { base_seed }
    }

    /// 256-bit ChaCha key `base_seed || run || path || 0`.
    pub fn stream_seed(&self, run: u64, path: u64) -> [u8; 32] {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.base_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&run.to_le_bytes());
        seed[16..24].copy_from_slice(&path.to_le_bytes());
        seed
    }

    pub fn stream(&self, run: u64, path: u64) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.stream_seed(run, path))
    }
}

/// Provenance of a sampled ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub base_seed: u64,
    pub run_id: u64,
}

/// `sqrt(h) G` with `G G^T = K`.
#[derive(Debug, Clone)]
pub struct NoiseFactor {
    scaled: DMatrix<f64>,
}

impl NoiseFactor {
    pub fn new(k: &DMatrix<f64>, h: f64) -> Result<Self> {
        let g = linalg::psd_factor(k, PSD_TOLERANCE)?;
        Ok(NoiseFactor { scaled: g * h.sqrt() })
    }

    pub fn dim(&self) -> usize {
        self.scaled.nrows()
    }

    /// Writes `sqrt(h) G z` into `out`.
    fn apply(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim();
        for (a, o) in out.iter_mut().enumerate().take(d) {
            let mut acc = 0.0;
            for (b, zb) in z.iter().enumerate() {
                acc += self.scaled[(a, b)] * zb;
            }
            *o = acc;
        }
    }

    fn draw<R: rand::Rng>(&self, rng: &mut R, z: &mut [f64], out: &mut [f64]) {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        self.apply(z, out);
    }
}

/// `s x d` Wiener increments with rows distributed as `N(0, h K)`.
pub fn sample_wiener_increments<R: rand::Rng>(k: &DMatrix<f64>, grid: &TimeGrid, rng: &mut R) -> Result<DMatrix<f64>> {
    let factor = NoiseFactor::new(k, grid.step_size)?;
    let d = factor.dim();
    let mut out = DMatrix::zeros(grid.steps, d);
    let mut z = vec![0.0; d];
    let mut dw = vec![0.0; d];
    for step in 0..grid.steps {
        factor.draw(rng, &mut z, &mut dw);
        for a in 0..d {
            out[(step, a)] = dw[a];
        }
    }
    Ok(out)
}

/// Per-step linear systems `(I - h Psi(t)) y = rhs`.
struct Stepper<'a> {
    sys: &'a BilinearSdeSystem,
    control: &'a ControlSignal,
    grid: TimeGrid,
    constant: Option<LinearSolver>,
    per_step: bool,
}

impl<'a> Stepper<'a> {
    fn new(sys: &'a BilinearSdeSystem, control: &'a ControlSignal, grid: TimeGrid, per_step: bool) -> Result<Self> {
        let invariant = control.is_time_invariant() || !sys.has_bilinear_terms();
        let mut stepper = Stepper {
            sys,
            control,
            grid,
            constant: None,
            per_step,
        };
        if invariant && !per_step {
            stepper.constant = Some(stepper.factor(1)?);
        }
        Ok(stepper)
    }

    fn factor(&self, k: usize) -> Result<LinearSolver> {
        let n = self.sys.state_dim;
        let u = self.control.eval(self.grid.time(k));
        let psi = self.sys.drift_matrix(&u);
        let step = DMatrix::identity(n, n) - psi * self.grid.step_size;
        LinearSolver::factor(&step).ok_or(Error::SingularStep { step: k - 1 })
    }

    /// Solver and `h B u(t_k)` for the step that lands on grid index `k`.
    fn prepare(&self, k: usize) -> Result<(std::borrow::Cow<'_, LinearSolver>, DVector<f64>)> {
        let u = self.control.eval(self.grid.time(k));
        let forcing = &self.sys.drift_input * u * self.grid.step_size;
        let solver = match (&self.constant, self.per_step) {
            (Some(s), false) => std::borrow::Cow::Borrowed(s),
            _ => std::borrow::Cow::Owned(self.factor(k)?),
        };
        Ok((solver, forcing))
    }
}

/// Paths advanced together so that one solve serves a block of right-hand sides.
const PATH_BLOCK: usize = 16;

/// One drift-implicit step for a single path, in place.
fn advance(x: &mut [f64], forcing: &DVector<f64>, diffusion: &DMatrix<f64>, dw: &[f64], solver: &LinearSolver) {
    add_increment(x, forcing, diffusion, dw);
    solver.solve_in_place(x);
}

/// `x + h B u + M dW`, in place.
fn add_increment(x: &mut [f64], forcing: &DVector<f64>, diffusion: &DMatrix<f64>, dw: &[f64]) {
    for (xi, f) in x.iter_mut().zip(forcing.iter()) {
        *xi += f;
    }
    for (col, dwa) in diffusion.column_iter().zip(dw) {
        for (xi, m) in x.iter_mut().zip(col.iter()) {
            *xi += m * dwa;
        }
    }
}

fn check_inputs(sys: &BilinearSdeSystem, control: &ControlSignal) -> Result<()> {
    if control.dim() != sys.input_dim {
        return Err(dim_err("control", sys.input_dim, control.dim()));
    }
    sys.validate().into_result()
}

/// Integrates one path from `x0` with prescribed `s x d` increments and returns
/// the `n x (s + 1)` trajectory.
pub fn simulate_path(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    x0: &DVector<f64>,
    increments: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_inputs(sys, control)?;
    let n = sys.state_dim;
    if x0.len() != n {
        return Err(dim_err("simulate_path initial state", n, x0.len()));
    }
    if increments.shape() != (grid.steps, sys.noise_dim) {
        return Err(dim_err(
            "simulate_path increments",
            format!("{}x{}", grid.steps, sys.noise_dim),
            format!("{}x{}", increments.nrows(), increments.ncols()),
        ));
    }
    let stepper = Stepper::new(sys, control, *grid, false)?;
    let mut out = DMatrix::zeros(n, grid.len());
    out.set_column(0, x0);
    let mut x: Vec<f64> = x0.iter().cloned().collect();
    let mut dw = vec![0.0; sys.noise_dim];
    for k in 1..=grid.steps {
        let (solver, forcing) = stepper.prepare(k)?;
        for (a, v) in dw.iter_mut().enumerate() {
            *v = increments[(k - 1, a)];
        }
        advance(&mut x, &forcing, &sys.diffusion, &dw, &solver);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { path: 0, step: k });
        }
        out.column_mut(k).copy_from_slice(&x);
    }
    Ok(out)
}

/// Receives the `n x L` state matrix at every grid index `0..=s`.
pub trait StepObserver {
    fn observe(&mut self, index: usize, states: &DMatrix<f64>) -> Result<()>;
}

impl<F: FnMut(usize, &DMatrix<f64>) -> Result<()>> StepObserver for F {
    fn observe(&mut self, index: usize, states: &DMatrix<f64>) -> Result<()> {
        self(index, states)
    }
}

/// Fans one ensemble out to several observers.
pub struct Observers<'a>(pub Vec<&'a mut dyn StepObserver>);

impl StepObserver for Observers<'_> {
    fn observe(&mut self, index: usize, states: &DMatrix<f64>) -> Result<()> {
        for o in self.0.iter_mut() {
            o.observe(index, states)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Refactor the step matrix every step even when `Psi` is constant.
    pub force_per_step_factorization: bool,
}

/// Parameters of one ensemble run.
#[derive(Debug, Clone, Copy)]
pub struct EnsembleSpec<'a> {
    pub sys: &'a BilinearSdeSystem,
    pub control: &'a ControlSignal,
    pub grid: TimeGrid,
    pub paths: usize,
    pub policy: SeedPolicy,
    pub run_id: u64,
}

/// Advances `spec.paths` paths step-major and feeds every grid index to `observer`.
pub fn run_ensemble<O: StepObserver + ?Sized>(
    spec: &EnsembleSpec<'_>,
    options: SimOptions,
    observer: &mut O,
) -> Result<()> {
    let sys = spec.sys;
    check_inputs(sys, spec.control)?;
    if spec.paths == 0 {
        return Err(Error::InvalidArgument("ensemble size must be at least 1".into()));
    }
    let n = sys.state_dim;
    let l = spec.paths;
    let grid = spec.grid;
    let noise = NoiseFactor::new(&sys.noise_correlation, grid.step_size)?;
    let d = noise.dim();

    let mut rngs: Vec<ChaCha20Rng> = (0..l).map(|j| spec.policy.stream(spec.run_id, j as u64)).collect();
    let mut states = DMatrix::zeros(n, l);
    if sys.has_deterministic_initial_condition() {
        for mut col in states.column_iter_mut() {
            col.copy_from(&sys.initial_mean);
        }
    } else {
        let factor = linalg::psd_factor(&sys.initial_covariance, PSD_TOLERANCE)?;
        states
            .as_mut_slice()
            .par_chunks_mut(n)
            .zip(rngs.par_iter_mut())
            .for_each(|(col, rng)| {
                let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
                for (i, ci) in col.iter_mut().enumerate() {
                    let mut acc = sys.initial_mean[i];
                    for (b, zb) in z.iter().enumerate() {
                        acc += factor[(i, b)] * zb;
                    }
                    *ci = acc;
                }
            });
    }
    observer.observe(0, &states)?;

    let stepper = Stepper::new(sys, spec.control, grid, options.force_per_step_factorization)?;
    for k in 1..=grid.steps {
        let (solver, forcing) = stepper.prepare(k)?;
        let solver: &LinearSolver = &solver;
        let step_block = |(z, dw, scratch): &mut (Vec<f64>, Vec<f64>, Vec<f64>),
                          (block, (cols, rngs)): (usize, (&mut [f64], &mut [ChaCha20Rng]))| {
            for (col, rng) in cols.chunks_exact_mut(n).zip(rngs.iter_mut()) {
                if d > 0 {
                    noise.draw(rng, z, dw);
                }
                add_increment(col, &forcing, &sys.diffusion, dw);
            }
            solver.solve_columns_in_place(n, cols, scratch);
            cols.chunks_exact(n)
                .position(|col| col.iter().any(|v| !v.is_finite()))
                .map(|j| block * PATH_BLOCK + j)
        };
        let init = || (vec![0.0; d], vec![0.0; d], Vec::new());
        let bad = if rayon::current_num_threads() > 1 {
            states
                .as_mut_slice()
                .par_chunks_mut(n * PATH_BLOCK)
                .zip(rngs.par_chunks_mut(PATH_BLOCK))
                .enumerate()
                .map_init(init, step_block)
                .filter_map(|x| x)
                .min()
        } else {
            let mut buffers = init();
            states
                .as_mut_slice()
                .chunks_mut(n * PATH_BLOCK)
                .zip(rngs.chunks_mut(PATH_BLOCK))
                .enumerate()
                .filter_map(|item| step_block(&mut buffers, item))
                .min()
        };
        if let Some(path) = bad {
            return Err(Error::NonFinite { path, step: k });
        }
        observer.observe(k, &states)?;
    }
    Ok(())
}

/// Stored trajectories of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotEnsemble {
    /// One `n x (s + 1)` matrix per path.
    pub paths: Vec<DMatrix<f64>>,
    pub grid: TimeGrid,
    pub input_id: String,
    pub seed_info: SeedInfo,
}

impl SnapshotEnsemble {
    pub fn state_dim(&self) -> usize {
        self.paths.first().map_or(0, |p| p.nrows())
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// `n x L` matrix of all path states at grid index `i`.
    pub fn states_at(&self, i: usize) -> DMatrix<f64> {
        let n = self.state_dim();
        let mut out = DMatrix::zeros(n, self.len());
        for (j, p) in self.paths.iter().enumerate() {
            out.set_column(j, &p.column(i));
        }
        out
    }
}

/// Records every path; memory grows as `n L (s + 1)`.
pub struct PathRecorder {
    paths: Vec<DMatrix<f64>>,
}

impl PathRecorder {
    pub fn new(n: usize, paths: usize, grid: &TimeGrid) -> Self {
        PathRecorder {
            paths: (0..paths).map(|_| DMatrix::zeros(n, grid.len())).collect(),
        }
    }

    pub fn into_paths(self) -> Vec<DMatrix<f64>> {
        self.paths
    }
}

impl StepObserver for PathRecorder {
    fn observe(&mut self, index: usize, states: &DMatrix<f64>) -> Result<()> {
        for (j, p) in self.paths.iter_mut().enumerate() {
            p.set_column(index, &states.column(j));
        }
        Ok(())
    }
}

/// Keeps a copy of the state matrix at one grid index.
pub struct StateCapture {
    pub index: usize,
    pub states: Option<DMatrix<f64>>,
}

impl StateCapture {
    pub fn at(index: usize) -> Self {
        StateCapture { index, states: None }
    }
}

impl StepObserver for StateCapture {
    fn observe(&mut self, index: usize, states: &DMatrix<f64>) -> Result<()> {
        if index == self.index {
            self.states = Some(states.clone());
        }
        Ok(())
    }
}

pub fn sample_ensemble(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    paths: usize,
    policy: SeedPolicy,
    run_id: u64,
) -> Result<SnapshotEnsemble> {
    sample_ensemble_with(sys, control, grid, paths, policy, run_id, SimOptions::default())
}

pub fn sample_ensemble_with(
    sys: &BilinearSdeSystem,
    control: &ControlSignal,
    grid: &TimeGrid,
    paths: usize,
    policy: SeedPolicy,
    run_id: u64,
    options: SimOptions,
) -> Result<SnapshotEnsemble> {
    let spec = EnsembleSpec {
        sys,
        control,
        grid: *grid,
        paths,
        policy,
        run_id,
    };
    let mut recorder = PathRecorder::new(sys.state_dim, paths, grid);
    run_ensemble(&spec, options, &mut recorder)?;
    Ok(SnapshotEnsemble {
        paths: recorder.into_paths(),
        grid: *grid,
        input_id: control.label(),
        seed_info: SeedInfo {
            base_seed: policy.base_seed,
            run_id,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, m: f64) -> BilinearSdeSystem {
        BilinearSdeSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::zeros(1, 1),
            vec![DMatrix::zeros(1, 1)],
            DMatrix::from_element(1, 1, m),
            DMatrix::identity(1, 1),
        )
    }

    #[test]
    fn one_implicit_step() {
        let sys = scalar(-1.0, 0.0).with_initial_mean(DVector::from_element(1, 1.0));
        let grid = TimeGrid::new(1, 0.1).unwrap();
        let x0 = DVector::from_element(1, 1.0);
        let path = simulate_path(&sys, &ControlSignal::zero(1), &grid, &x0, &DMatrix::zeros(1, 1)).unwrap();
        assert!((path[(0, 1)] - 1.0 / 1.1).abs() < 1e-15);

        let sys = scalar(-1.0, 1.0);
        let inc = DMatrix::from_element(1, 1, 0.05);
        let path = simulate_path(&sys, &ControlSignal::zero(1), &grid, &x0, &inc).unwrap();
        assert!((path[(0, 1)] - 1.05 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn frozen_dynamics() {
        let sys = scalar(0.0, 0.0);
        let grid = TimeGrid::new(5, 0.1).unwrap();
        let x0 = DVector::from_element(1, 3.0);
        let path = simulate_path(&sys, &ControlSignal::zero(1), &grid, &x0, &DMatrix::zeros(5, 1)).unwrap();
        assert!(path.iter().all(|v| *v == 3.0));
    }

    #[test]
    fn zero_correlation_gives_zero_increments() {
        let grid = TimeGrid::new(50, 0.01).unwrap();
        let mut rng = SeedPolicy::new(1).stream(0, 0);
        let inc = sample_wiener_increments(&DMatrix::zeros(2, 2), &grid, &mut rng).unwrap();
        assert!(inc.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn indefinite_correlation_fails() {
        let grid = TimeGrid::new(5, 0.01).unwrap();
        let mut rng = SeedPolicy::new(1).stream(0, 0);
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            sample_wiener_increments(&k, &grid, &mut rng),
            Err(Error::IndefiniteCorrelation { .. })
        ));
    }

    #[test]
    fn stream_seeds_are_distinct() {
        let p = SeedPolicy::new(7);
        assert_ne!(p.stream_seed(0, 1), p.stream_seed(1, 0));
        assert_ne!(p.stream_seed(0, 0), SeedPolicy::new(8).stream_seed(0, 0));
    }

    #[test]
    fn singular_step_reports_index() {
        let sys = scalar(10.0, 0.0);
        let grid = TimeGrid::new(3, 0.1).unwrap();
        let err = simulate_path(
            &sys,
            &ControlSignal::zero(1),
            &grid,
            &DVector::zeros(1),
            &DMatrix::zeros(3, 1),
        );
        assert!(matches!(err, Err(Error::SingularStep { step: 0 })));
    }

    #[test]
    fn blow_up_is_reported() {
        let sys = scalar(9.0, 0.0).with_initial_mean(DVector::from_element(1, 1e300));
        let grid = TimeGrid::new(20, 0.1).unwrap();
        let r = sample_ensemble(&sys, &ControlSignal::zero(1), &grid, 3, SeedPolicy::new(0), 0);
        assert!(matches!(r, Err(Error::NonFinite { path: 0, step: 9 })));
    }
}
