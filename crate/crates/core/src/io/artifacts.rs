use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::inference::{InferredRom, RomDiagnostics};
use crate::io::MatrixContainer;
use crate::model::{BilinearSdeSystem, TimeGrid};
use crate::moments::{MomentSource, MomentTrajectory};
use crate::sim::{SeedInfo, SnapshotEnsemble};
use crate::subspace::{BasisSource, ReductionBasis};

fn expect_kind(c: &MatrixContainer, kind: &str) -> Result<()> {
    match c.meta("kind") {
        Some(k) if k == kind => Ok(()),
        other => Err(Error::Format(format!(
            "expected a {kind} container, found kind {other:?}"
        ))),
    }
}

fn shape_check(c: &MatrixContainer, name: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let m = c.require(name)?;
    if m.shape() != (rows, cols) {
        return Err(Error::Format(format!(
            "entry {name:?} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.clone())
}

fn column(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

fn grid_meta(c: &mut MatrixContainer, grid: &TimeGrid) -> Result<()> {
    c.set_meta("s", grid.steps)?;
    c.set_meta("h", format!("{:e}", grid.step_size))
}

fn read_grid(c: &MatrixContainer) -> Result<TimeGrid> {
    TimeGrid::new(c.parse_meta("s")?, c.parse_meta("h")?)
}

fn put_coefficients(
    c: &mut MatrixContainer,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    n: &[DMatrix<f64>],
    m: &DMatrix<f64>,
) -> Result<()> {
    c.insert("A", a.clone())?;
    c.insert("B", b.clone())?;
    for (i, ni) in n.iter().enumerate() {
        c.insert(format!("N{}", i + 1), ni.clone())?;
    }
    c.insert("M", m.clone())
}

type Coefficients = (DMatrix<f64>, DMatrix<f64>, Vec<DMatrix<f64>>, DMatrix<f64>);

fn read_coefficients(c: &MatrixContainer, n: usize, m: usize, d: usize) -> Result<Coefficients> {
    let a = shape_check(c, "A", n, n)?;
    let b = shape_check(c, "B", n, m)?;
    let bil = (1..=m)
        .map(|i| shape_check(c, &format!("N{i}"), n, n))
        .collect::<Result<Vec<_>>>()?;
    let diff = shape_check(c, "M", n, d)?;
    Ok((a, b, bil, diff))
}

/// Coefficients `A, B, N1..Nm, M, K, x0, C0` and metadata `n, m, d` and, when given, `T`.
pub fn system_to_container(sys: &BilinearSdeSystem, horizon: Option<f64>) -> Result<MatrixContainer> {
    let mut c = MatrixContainer::new();
    c.set_meta("kind", "system")?;
    c.set_meta("n", sys.state_dim)?;
    c.set_meta("m", sys.input_dim)?;
    c.set_meta("d", sys.noise_dim)?;
    if let Some(t) = horizon {
        c.set_meta("T", format!("{t:e}"))?;
    }
    put_coefficients(
        &mut c,
        &sys.drift_linear,
        &sys.drift_input,
        &sys.drift_bilinear,
        &sys.diffusion,
    )?;
    c.insert("K", sys.noise_correlation.clone())?;
    c.insert("x0", column(sys.initial_mean.as_slice()))?;
    c.insert("C0", sys.initial_covariance.clone())?;
    Ok(c)
}

pub fn system_from_container(c: &MatrixContainer) -> Result<BilinearSdeSystem> {
    expect_kind(c, "system")?;
    let (n, m, d): (usize, usize, usize) = (c.parse_meta("n")?, c.parse_meta("m")?, c.parse_meta("d")?);
    let (a, b, bil, diff) = read_coefficients(c, n, m, d)?;
    let k = shape_check(c, "K", d, d)?;
    let x0 = shape_check(c, "x0", n, 1)?;
    let c0 = shape_check(c, "C0", n, n)?;
    Ok(BilinearSdeSystem::new(a, b, bil, diff, k)
        .with_initial_mean(DVector::from_column_slice(x0.as_slice()))
        .with_initial_covariance(c0))
}

/// Packed `n x L (s + 1)` matrix `states` with path `l` in columns `l (s + 1) .. (l + 1)(s + 1)`.
pub fn ensemble_to_container(ens: &SnapshotEnsemble) -> Result<MatrixContainer> {
    let n = ens.state_dim();
    let cols = ens.grid.len();
    let mut packed = DMatrix::zeros(n, ens.len() * cols);
    for (l, p) in ens.paths.iter().enumerate() {
        packed.columns_mut(l * cols, cols).copy_from(p);
    }
    let mut c = MatrixContainer::new();
    c.set_meta("kind", "ensemble")?;
    c.set_meta("L", ens.len())?;
    grid_meta(&mut c, &ens.grid)?;
    c.set_meta("seed", ens.seed_info.base_seed)?;
    c.set_meta("run_id", ens.seed_info.run_id)?;
    c.set_meta("input_id", &ens.input_id)?;
    c.insert("states", packed)?;
    Ok(c)
}

pub fn ensemble_from_container(c: &MatrixContainer) -> Result<SnapshotEnsemble> {
    expect_kind(c, "ensemble")?;
    let grid = read_grid(c)?;
    let l: usize = c.parse_meta("L")?;
    let packed = c.require("states")?;
    let cols = grid.len();
    if packed.ncols() != l * cols {
        return Err(Error::Format(format!(
            "states has {} columns, expected L (s + 1) = {}",
            packed.ncols(),
            l * cols
        )));
    }
    Ok(SnapshotEnsemble {
        paths: (0..l).map(|p| packed.columns(p * cols, cols).into_owned()).collect(),
        grid,
        input_id: c.require_meta("input_id")?.to_string(),
        seed_info: SeedInfo {
            base_seed: c.parse_meta("seed")?,
            run_id: c.parse_meta("run_id")?,
        },
    })
}

/// `means` as `n x (s + 1)` and `covariances` as the `n x n (s + 1)` block row.
pub fn moments_to_container(traj: &MomentTrajectory) -> Result<MatrixContainer> {
    let n = traj.state_dim();
    let len = traj.means.len();
    let mut means = DMatrix::zeros(n, len);
    let mut covs = DMatrix::zeros(n, n * len);
    for i in 0..len {
        means.set_column(i, &traj.means[i]);
        covs.columns_mut(i * n, n).copy_from(&traj.covariances[i]);
    }
    let mut c = MatrixContainer::new();
    c.set_meta("kind", "moments")?;
    grid_meta(&mut c, &traj.grid)?;
    match traj.source {
        MomentSource::Empirical { paths } => {
            c.set_meta("source", "empirical")?;
            c.set_meta("L", paths)?;
        }
        MomentSource::ExactOde => c.set_meta("source", "ode")?,
    }
    c.insert("means", means)?;
    c.insert("covariances", covs)?;
    Ok(c)
}

pub fn moments_from_container(c: &MatrixContainer) -> Result<MomentTrajectory> {
    expect_kind(c, "moments")?;
    let grid = read_grid(c)?;
    let len = grid.len();
    let means = c.require("means")?;
    let n = means.nrows();
    let means = shape_check(c, "means", n, len)?;
    let covs = shape_check(c, "covariances", n, n * len)?;
    let source = match c.require_meta("source")? {
        "empirical" => MomentSource::Empirical {
            paths: c.parse_meta("L")?,
        },
        "ode" => MomentSource::ExactOde,
        other => return Err(Error::Format(format!("unknown moment source {other:?}"))),
    };
    Ok(MomentTrajectory {
        means: (0..len).map(|i| means.column(i).into_owned()).collect(),
        covariances: (0..len).map(|i| covs.columns(i * n, n).into_owned()).collect(),
        grid,
        source,
    })
}

fn source_name(s: BasisSource) -> &'static str {
    match s {
        BasisSource::StateSnapshots => "state",
        BasisSource::MomentSnapshots => "moment",
        BasisSource::Given => "given",
    }
}

/// `basis` (`n x r`) and `singular_values` (column).
pub fn basis_to_container(b: &ReductionBasis) -> Result<MatrixContainer> {
    let mut c = MatrixContainer::new();
    c.set_meta("kind", "basis")?;
    c.set_meta("r", b.dim())?;
    c.set_meta("source", source_name(b.source))?;
    c.set_meta("rank_deficient", b.rank_deficient)?;
    c.insert("basis", b.basis.clone())?;
    c.insert("singular_values", column(&b.singular_values))?;
    Ok(c)
}

pub fn basis_from_container(c: &MatrixContainer) -> Result<ReductionBasis> {
    expect_kind(c, "basis")?;
    let source = match c.require_meta("source")? {
        "state" => BasisSource::StateSnapshots,
        "moment" => BasisSource::MomentSnapshots,
        "given" => BasisSource::Given,
        other => return Err(Error::Format(format!("unknown basis source {other:?}"))),
    };
    let basis = c.require("basis")?.clone();
    if basis.ncols() != c.parse_meta::<usize>("r")? {
        return Err(Error::Format("basis column count differs from r".into()));
    }
    Ok(ReductionBasis {
        basis,
        singular_values: c.require("singular_values")?.iter().cloned().collect(),
        source,
        rank_deficient: c.parse_meta("rank_deficient")?,
    })
}

/// Coefficients `A, B, N1..Nm, M`, eigenvalue columns and the diagnostics as metadata.
pub fn rom_to_container(rom: &InferredRom) -> Result<MatrixContainer> {
    let d = &rom.diagnostics;
    let mut c = MatrixContainer::new();
    c.set_meta("kind", "rom")?;
    c.set_meta("r", rom.state_dim())?;
    c.set_meta("m", rom.b.ncols())?;
    c.set_meta("d_r", rom.noise_dim)?;
    c.set_meta("drift_residual", format!("{:e}", d.drift_residual))?;
    c.set_meta("diffusion_residual", format!("{:e}", d.diffusion_residual))?;
    c.set_meta("condition_number", format!("{:e}", d.condition_number))?;
    c.set_meta("rank_deficient", d.rank_deficient)?;
    c.set_meta("gamma_linear", format!("{:e}", d.gamma_linear))?;
    c.set_meta("gamma_bilinear", format!("{:e}", d.gamma_bilinear))?;
    c.set_meta("deterministic", d.deterministic)?;
    c.set_meta("regression_columns", d.regression_columns)?;
    put_coefficients(&mut c, &rom.a, &rom.b, &rom.n, &rom.m)?;
    c.insert("eigenvalues", column(&d.eigenvalues))?;
    c.insert("truncated_eigenvalues", column(&d.truncated_eigenvalues))?;
    Ok(c)
}

pub fn rom_from_container(c: &MatrixContainer) -> Result<InferredRom> {
    expect_kind(c, "rom")?;
    let (r, m, d): (usize, usize, usize) = (c.parse_meta("r")?, c.parse_meta("m")?, c.parse_meta("d_r")?);
    let (a, b, n, diff) = read_coefficients(c, r, m, d)?;
    let values = |name: &str| -> Result<Vec<f64>> { Ok(c.require(name)?.iter().cloned().collect()) };
    Ok(InferredRom {
        a,
        b,
        n,
        m: diff,
        noise_dim: d,
        diagnostics: RomDiagnostics {
            drift_residual: c.parse_meta("drift_residual")?,
            diffusion_residual: c.parse_meta("diffusion_residual")?,
            condition_number: c.parse_meta("condition_number")?,
            rank_deficient: c.parse_meta("rank_deficient")?,
            eigenvalues: values("eigenvalues")?,
            truncated_eigenvalues: values("truncated_eigenvalues")?,
            gamma_linear: c.parse_meta("gamma_linear")?,
            gamma_bilinear: c.parse_meta("gamma_bilinear")?,
            deterministic: c.parse_meta("deterministic")?,
            regression_columns: c.parse_meta("regression_columns")?,
        },
    })
}
