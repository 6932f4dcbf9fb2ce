//! Training and testing protocol for the heat benchmarks.
//!
//! 1. Subspace data: one ensemble at zero initial condition with
//!    `u = cos(2 pi t / T)`; the POD basis comes from its state Gram matrix.
//! 2. Training data: `k` constant inputs `-2 + 4 i / k` at zero initial
//!    condition plus one run per basis vector `v_j` as initial condition with
//!    zero control. Every pair is simulated once with the largest ensemble
//!    size; smaller ensembles are its leading paths (the noise streams are
//!    keyed by pair and path) and smaller `r` use the leading rows of the
//!    projected moments.
//! 3. Inference per `(r, L)` and intrusive projection per `r`.
//! 4. Testing with `u = cos(5 pi t / T)` at zero initial condition, using the
//!    moment equations or Monte Carlo ensembles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bench::heat1d::{build_heat1d_fom, Heat1dSpec};
use crate::bench::heat2d::{build_heat2d_fom, Heat2dSpec};
use crate::bench::metrics::{self, ErrorReport, Metric};
use crate::error::{Error, Result};
use crate::inference::{infer_from_moments, InferenceConfig, InferredRom, TrainingRun};
use crate::model::{project_onto, BilinearSdeSystem, ControlSignal, TimeGrid};
use crate::moments::{self, MomentAccumulator, MomentSource, MomentTrajectory};
use crate::sim::{run_ensemble, EnsembleSpec, Observers, SeedPolicy, SimOptions, StateCapture, StepObserver};
use crate::subspace::{basis_from_gram, BasisSource, ReductionBasis};

pub const SUBSPACE_RUN: u64 = 0;
pub const INPUT_RUN_BASE: u64 = 100;
pub const INITIAL_RUN_BASE: u64 = 200;
pub const EVALUATION_RUN: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Heat1d,
    Heat2d,
    /// Scalar Ornstein–Uhlenbeck process with a bilinear input term.
    Ou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub name: BenchmarkKind,
    pub steps: Option<usize>,
    pub step_size: Option<f64>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Interior nodes of the 1d grid.
    pub n: Option<usize>,
    /// Node counts of the 2d grid; calibrated when absent.
    pub nx: Option<usize>,
    pub ny: Option<usize>,
}

fn default_seed() -> u64 {
    20240601
}

impl BenchmarkConfig {
    pub fn new(name: BenchmarkKind) -> Self {
        BenchmarkConfig {
            name,
            steps: None,
            step_size: None,
            seed: default_seed(),
            n: None,
            nx: None,
            ny: None,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let (s, h) = match self.name {
            BenchmarkKind::Heat1d => (1000, 1e-3),
            BenchmarkKind::Heat2d => (100, 1e-2),
            BenchmarkKind::Ou => (100, 1e-2),
        };
        TimeGrid::new(self.steps.unwrap_or(s), self.step_size.unwrap_or(h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubspaceConfig {
    pub paths: usize,
    pub amplitude: f64,
    /// `q` in `cos(q pi t / T)`.
    pub multiplier: f64,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        SubspaceConfig {
            paths: 10_000,
            amplitude: 1.0,
            multiplier: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Ensemble sizes; each must be at least 2.
    pub paths: Vec<usize>,
    /// Number `k` of constant inputs.
    pub inputs: usize,
    pub input_low: f64,
    pub input_span: f64,
    /// Also store full trajectories of every training ensemble.
    pub persist_ensembles: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            paths: vec![10, 100, 10_000],
            inputs: 21,
            input_low: -2.0,
            input_span: 4.0,
            persist_ensembles: false,
        }
    }
}

impl TrainingConfig {
    /// `input_low + input_span i / k` for `i = 1..=k`.
    pub fn input_values(&self) -> Vec<f64> {
        (1..=self.inputs)
            .map(|i| self.input_low + self.input_span * i as f64 / self.inputs as f64)
            .collect()
    }

    pub fn max_paths(&self) -> usize {
        self.paths.iter().cloned().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluationMode {
    Oracle,
    Montecarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub dims: Vec<usize>,
    pub mode: EvaluationMode,
    /// Ensemble size in Monte Carlo mode.
    pub paths: usize,
    pub amplitude: f64,
    pub multiplier: f64,
    pub substeps: usize,
    /// Seed of the testing ensembles; defaults to the benchmark seed plus one.
    pub seed: Option<u64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            dims: (1..=10).collect(),
            mode: EvaluationMode::Oracle,
            paths: 1000,
            amplitude: 1.0,
            multiplier: 5.0,
            substeps: moments::DEFAULT_SUBSTEPS,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkConfig,
    #[serde(default)]
    pub subspace: SubspaceConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
}

impl ExperimentConfig {
    pub fn new(name: BenchmarkKind) -> Self {
        ExperimentConfig {
            benchmark: BenchmarkConfig::new(name),
            subspace: SubspaceConfig::default(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
            evaluation: EvaluationConfig::default(),
        }
    }

    pub fn max_dim(&self) -> usize {
        self.evaluation.dims.iter().cloned().max().unwrap_or(0)
    }

    pub fn evaluation_seed(&self) -> u64 {
        self.evaluation.seed.unwrap_or(self.benchmark.seed.wrapping_add(1))
    }

    /// Field-level checks; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if let Some(0) = self.benchmark.steps {
            return bad("benchmark.steps", "must be at least 1");
        }
        if let Some(h) = self.benchmark.step_size {
            if !(h > 0.0 && h.is_finite()) {
                return bad("benchmark.step_size", "must be positive");
            }
        }
        if self.benchmark.grid()?.steps < 2 {
            return bad("benchmark.steps", "must be at least 2 for finite differences");
        }
        if self.subspace.paths < 2 {
            return bad("subspace.paths", "must be at least 2");
        }
        if self.training.paths.is_empty() {
            return bad("training.paths", "must list at least one ensemble size");
        }
        if self.training.paths.iter().any(|l| *l < 2) {
            return bad("training.paths", "every ensemble size must be at least 2");
        }
        if self.evaluation.dims.is_empty() || self.evaluation.dims.contains(&0) {
            return bad("evaluation.dims", "must be a nonempty list of positive dimensions");
        }
        if self.evaluation.substeps == 0 {
            return bad("evaluation.substeps", "must be at least 1");
        }
        if self.evaluation.mode == EvaluationMode::Montecarlo && self.evaluation.paths < 2 {
            return bad("evaluation.paths", "must be at least 2");
        }
        self.inference.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fom {
    pub system: BilinearSdeSystem,
    pub label: String,
    pub notes: Vec<String>,
}

pub fn build_ou() -> BilinearSdeSystem {
    BilinearSdeSystem::new(
        DMatrix::from_element(1, 1, -1.0),
        DMatrix::from_element(1, 1, 1.0),
        vec![DMatrix::from_element(1, 1, 0.2)],
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::identity(1, 1),
    )
}

pub fn build_fom(cfg: &BenchmarkConfig) -> Result<Fom> {
    match cfg.name {
        BenchmarkKind::Heat1d => {
            let spec = Heat1dSpec {
                n: cfg.n.unwrap_or(100),
                ..Heat1dSpec::default()
            };
            Ok(Fom {
                system: build_heat1d_fom(&spec)?,
                label: format!("heat1d(n={})", spec.n),
                notes: vec!["advection: central stencil, boundary terms in B".into()],
            })
        }
        BenchmarkKind::Heat2d => {
            let mut spec = Heat2dSpec::default();
            if let (Some(nx), Some(ny)) = (cfg.nx, cfg.ny) {
                spec.nx = nx;
                spec.ny = ny;
            }
            let fom = build_heat2d_fom(&spec)?;
            Ok(Fom {
                label: format!("heat2d({}x{}, n={})", spec.nx, spec.ny, fom.unknowns()),
                system: fom.system,
                notes: fom.flags,
            })
        }
        BenchmarkKind::Ou => Ok(Fom {
            system: build_ou(),
            label: "ou".into(),
            notes: Vec::new(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceData {
    pub basis: ReductionBasis,
    pub mean_norm: f64,
    pub cov_norm: f64,
    pub snr: Vec<Option<f64>>,
}

/// Simulates the subspace ensemble and returns a basis of dimension `r_max`.
pub fn subspace_stage(fom: &Fom, cfg: &ExperimentConfig) -> Result<SubspaceData> {
    let grid = cfg.benchmark.grid()?;
    let control = ControlSignal::cosine(cfg.subspace.amplitude, cfg.subspace.multiplier, grid.horizon());
    let spec = EnsembleSpec {
        sys: &fom.system,
        control: &control,
        grid,
        paths: cfg.subspace.paths,
        policy: SeedPolicy::new(cfg.benchmark.seed),
        run_id: SUBSPACE_RUN,
    };
    let mut acc = MomentAccumulator::new().storing(false).with_state_gram(true);
    run_ensemble(&spec, SimOptions::default(), &mut acc)?;
    let (_, stats) = acc.into_parts(grid);
    let gram = stats.state_gram.as_ref().expect("state gram requested");
    let r = cfg.max_dim().min(fom.system.state_dim);
    let basis = basis_from_gram(gram, r, BasisSource::StateSnapshots)?;
    Ok(SubspaceData {
        basis,
        mean_norm: stats.mean_matrix_norm(),
        cov_norm: stats.covariance_matrix_norm(),
        snr: stats.snr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    /// Constant input number `i` (1-based).
    Input(usize),
    /// Initial condition `v_j` (1-based).
    Initial(usize),
}

impl RunKind {
    pub fn run_id(&self) -> u64 {
        match self {
            RunKind::Input(i) => INPUT_RUN_BASE + *i as u64,
            RunKind::Initial(j) => INITIAL_RUN_BASE + *j as u64,
        }
    }

    pub fn label(&self) -> String {
        match self {
            RunKind::Input(i) => format!("input{i}"),
            RunKind::Initial(j) => format!("initial{j}"),
        }
    }
}

/// Projected training moments for one ensemble size, in `r_max` coordinates.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub paths: usize,
    pub runs: Vec<(RunKind, TrainingRun)>,
}

impl TrainingSet {
    /// Runs used for dimension `r`: all input runs and the first `r` initial
    /// conditions, with moments truncated to the leading `r` coordinates.
    pub fn slice(&self, r: usize) -> Vec<TrainingRun> {
        self.runs
            .iter()
            .filter(|(k, _)| match k {
                RunKind::Input(_) => true,
                RunKind::Initial(j) => *j <= r,
            })
            .map(|(_, run)| TrainingRun {
                moments: truncate_moments(&run.moments, r),
                control: run.control.clone(),
            })
            .collect()
    }
}

pub fn truncate_moments(m: &MomentTrajectory, r: usize) -> MomentTrajectory {
    MomentTrajectory {
        means: m.means.iter().map(|e| e.rows(0, r).into_owned()).collect(),
        covariances: m
            .covariances
            .iter()
            .map(|c| c.view((0, 0), (r, r)).into_owned())
            .collect(),
        grid: m.grid,
        source: m.source,
    }
}

/// Training pairs `(kind, control, initial mean)`.
pub fn training_pairs(
    fom: &Fom,
    basis: &ReductionBasis,
    cfg: &ExperimentConfig,
) -> Vec<(RunKind, ControlSignal, DVector<f64>)> {
    let n = fom.system.state_dim;
    let m = fom.system.input_dim;
    let mut pairs = Vec::new();
    for (i, c) in cfg.training.input_values().into_iter().enumerate() {
        pairs.push((
            RunKind::Input(i + 1),
            ControlSignal::Constant { value: vec![c; m] },
            DVector::zeros(n),
        ));
    }
    for j in 0..basis.dim() {
        pairs.push((
            RunKind::Initial(j + 1),
            ControlSignal::zero(m),
            basis.basis.column(j).into_owned(),
        ));
    }
    pairs
}

pub fn training_stage(fom: &Fom, basis: &ReductionBasis, cfg: &ExperimentConfig) -> Result<Vec<TrainingSet>> {
    let grid = cfg.benchmark.grid()?;
    let sizes = training_sizes(cfg);
    let lmax = *sizes.last().expect("validated");
    let mut sets: Vec<TrainingSet> = sizes
        .iter()
        .map(|&l| TrainingSet {
            paths: l,
            runs: Vec::new(),
        })
        .collect();
    let policy = SeedPolicy::new(cfg.benchmark.seed);
    for (kind, control, x0) in training_pairs(fom, basis, cfg) {
        log::info!("training run {} with {lmax} paths", kind.label());
        let sys = fom.system.clone().with_initial_mean(x0);
        let spec = EnsembleSpec {
            sys: &sys,
            control: &control,
            grid,
            paths: lmax,
            policy,
            run_id: kind.run_id(),
        };
        let mut accs: Vec<MomentAccumulator> = sizes
            .iter()
            .map(|&l| MomentAccumulator::new().projected(&basis.basis).prefix(l))
            .collect();
        {
            let mut obs = Observers(accs.iter_mut().map(|a| a as &mut dyn StepObserver).collect());
            run_ensemble(&spec, SimOptions::default(), &mut obs)?;
        }
        for (set, acc) in sets.iter_mut().zip(accs) {
            set.runs.push((
                kind,
                TrainingRun {
                    moments: acc.into_trajectory(grid)?,
                    control: control.clone(),
                },
            ));
        }
    }
    Ok(sets)
}

pub fn pod_rom(fom: &Fom, basis: &ReductionBasis, r: usize) -> Result<BilinearSdeSystem> {
    project_onto(&fom.system, &basis.truncate(r)?.basis)
}

/// Inferred models keyed by `(r, L)`.
#[derive(Debug)]
pub struct InferredModels {
    pub entries: Vec<(usize, usize, Result<InferredRom>)>,
}

impl InferredModels {
    pub fn get(&self, r: usize, paths: usize) -> Option<&Result<InferredRom>> {
        self.entries
            .iter()
            .find(|(rr, l, _)| *rr == r && *l == paths)
            .map(|(_, _, rom)| rom)
    }
}

pub fn inference_stage(sets: &[TrainingSet], cfg: &ExperimentConfig) -> InferredModels {
    let mut entries = Vec::new();
    for &r in &cfg.evaluation.dims {
        for set in sets {
            let max_r = set.runs.first().map_or(0, |(_, run)| run.moments.state_dim());
            let rom = if r > max_r {
                Err(Error::InvalidArgument(format!(
                    "r = {r} exceeds basis dimension {max_r}"
                )))
            } else {
                infer_from_moments(&set.slice(r), &cfg.inference)
            };
            if let Err(e) = &rom {
                log::warn!("inference failed for r = {r}, L = {}: {e}", set.paths);
            }
            entries.push((r, set.paths, rom));
        }
    }
    InferredModels { entries }
}

/// Moments of a model under the test control; exact or sampled.
fn test_moments(
    sys: &BilinearSdeSystem,
    cfg: &ExperimentConfig,
    grid: &TimeGrid,
    control: &ControlSignal,
) -> Result<(MomentTrajectory, Option<DMatrix<f64>>)> {
    match cfg.evaluation.mode {
        EvaluationMode::Oracle => Ok((
            moments::integrate_moments(sys, control, grid, cfg.evaluation.substeps)?,
            None,
        )),
        EvaluationMode::Montecarlo => {
            let spec = EnsembleSpec {
                sys,
                control,
                grid: *grid,
                paths: cfg.evaluation.paths,
                policy: SeedPolicy::new(cfg.evaluation_seed()),
                run_id: EVALUATION_RUN,
            };
            let mut acc = MomentAccumulator::new();
            let mut cap = StateCapture::at(grid.steps);
            {
                let mut obs = Observers(vec![&mut acc, &mut cap]);
                run_ensemble(&spec, SimOptions::default(), &mut obs)?;
            }
            Ok((acc.into_trajectory(*grid)?, cap.states))
        }
    }
}

fn cell_errors(
    fom: &(MomentTrajectory, Option<DMatrix<f64>>),
    rom: &Result<(MomentTrajectory, Option<DMatrix<f64>>)>,
    v: &DMatrix<f64>,
) -> Result<[Metric; 4]> {
    let (rm, rstates) = match rom {
        Ok(x) => x,
        Err(e) => {
            log::warn!("reduced model could not be evaluated: {e}");
            return Ok([None; 4]);
        }
    };
    let (fm, fstates) = fom;
    let (e_e, e_c) = metrics::relative_errors(fm, rm, v)?;
    let (p1, p2) = match (fstates, rstates) {
        (Some(fs), Some(rs)) => metrics::weak_errors_monte_carlo(fs, rs, v),
        _ => metrics::weak_errors(fm, rm, v, fm.means.len() - 1)?,
    };
    Ok([e_e, e_c, p1, p2])
}

/// Reduced models of one table column, one entry per row of `evaluation.dims`.
#[derive(Debug, Clone)]
pub struct MethodColumn {
    pub name: String,
    /// Model and, for inferred models, the identified noise dimension.
    pub models: Vec<Option<(BilinearSdeSystem, Option<usize>)>>,
}

/// Ensemble sizes of the training stage in ascending order without repeats.
pub fn training_sizes(cfg: &ExperimentConfig) -> Vec<usize> {
    let mut sizes = cfg.training.paths.clone();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
}

pub fn method_name(paths: usize) -> String {
    format!("OpInf_L{paths}")
}

/// POD column followed by one column per training ensemble size.
pub fn standard_columns(
    fom: &Fom,
    basis: &ReductionBasis,
    models: &InferredModels,
    cfg: &ExperimentConfig,
) -> Result<Vec<MethodColumn>> {
    let dims = &cfg.evaluation.dims;
    let mut pod = Vec::with_capacity(dims.len());
    for &r in dims {
        pod.push(if r <= basis.dim() {
            Some((pod_rom(fom, basis, r)?, None))
        } else {
            None
        });
    }
    let mut cols = vec![MethodColumn {
        name: "POD".into(),
        models: pod,
    }];
    for l in training_sizes(cfg) {
        cols.push(MethodColumn {
            name: method_name(l),
            models: dims
                .iter()
                .map(|&r| match models.get(r, l) {
                    Some(Ok(rom)) => Some((rom.to_system(), Some(rom.noise_dim))),
                    _ => None,
                })
                .collect(),
        });
    }
    Ok(cols)
}

/// Error tables of the given columns against the full model under the test control.
pub fn evaluate_columns(
    fom: &Fom,
    subspace: &SubspaceData,
    columns: &[MethodColumn],
    cfg: &ExperimentConfig,
) -> Result<ErrorReport> {
    let grid = cfg.benchmark.grid()?;
    let control = ControlSignal::cosine(cfg.evaluation.amplitude, cfg.evaluation.multiplier, grid.horizon());
    let fom_m = test_moments(&fom.system, cfg, &grid, &control)?;
    let dims = cfg.evaluation.dims.clone();
    let ncols = columns.len();
    let blank = || vec![vec![None; ncols]; dims.len()];
    let mut report = ErrorReport {
        dims: dims.clone(),
        methods: columns.iter().map(|c| c.name.clone()).collect(),
        e_mean: blank(),
        e_cov: blank(),
        e_phi1: blank(),
        e_phi2: blank(),
        noise_dims: vec![vec![None; ncols]; dims.len()],
        snr: subspace.snr.clone(),
        times: (0..grid.len()).map(|i| grid.time(i)).collect(),
        subspace_mean_norm: subspace.mean_norm,
        subspace_cov_norm: subspace.cov_norm,
    };
    for (row, &r) in dims.iter().enumerate() {
        if r > subspace.basis.dim() {
            log::warn!("r = {r} exceeds the basis dimension; row left undefined");
            continue;
        }
        let v = subspace.basis.truncate(r)?.basis;
        for (col, column) in columns.iter().enumerate() {
            let Some(Some((sys, d))) = column.models.get(row) else {
                continue;
            };
            if sys.state_dim != r {
                return Err(Error::InvalidArgument(format!(
                    "{} model for r = {r} has dimension {}",
                    column.name, sys.state_dim
                )));
            }
            let vals = cell_errors(&fom_m, &test_moments(sys, cfg, &grid, &control), &v)?;
            report.e_mean[row][col] = vals[0];
            report.e_cov[row][col] = vals[1];
            report.e_phi1[row][col] = vals[2];
            report.e_phi2[row][col] = vals[3];
            report.noise_dims[row][col] = *d;
        }
    }
    Ok(report)
}

pub fn evaluation_stage(
    fom: &Fom,
    subspace: &SubspaceData,
    models: &InferredModels,
    cfg: &ExperimentConfig,
) -> Result<ErrorReport> {
    let columns = standard_columns(fom, &subspace.basis, models, cfg)?;
    evaluate_columns(fom, subspace, &columns, cfg)
}

/// Everything produced by [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutput {
    pub fom: Fom,
    pub subspace: SubspaceData,
    pub training: Vec<TrainingSet>,
    pub models: InferredModels,
    pub report: ErrorReport,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let fom = build_fom(&cfg.benchmark)?;
    log::info!("full model {}", fom.label);
    let subspace = subspace_stage(&fom, cfg)?;
    let training = training_stage(&fom, &subspace.basis, cfg)?;
    let models = inference_stage(&training, cfg);
    let report = evaluation_stage(&fom, &subspace, &models, cfg)?;
    Ok(ExperimentOutput {
        fom,
        subspace,
        training,
        models,
        report,
    })
}

/// `true` when `m` came from sampling.
pub fn is_empirical(m: &MomentTrajectory) -> bool {
    matches!(m.source, MomentSource::Empirical { .. })
}
