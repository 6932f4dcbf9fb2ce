//! Snapshot matrices, POD bases and span-containment checks.

use nalgebra::{DMatrix, SVD};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::model::orthonormality_defect;
use crate::moments::MomentTrajectory;
use crate::sim::SnapshotEnsemble;

/// Relative threshold on `sigma / sigma_max` defining the numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSource {
    StateSnapshots,
    MomentSnapshots,
    Given,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionBasis {
    /// `V_r`, `n x r` with orthonormal columns.
    pub basis: DMatrix<f64>,
    /// Full descending singular-value sequence of the source matrix.
    pub singular_values: Vec<f64>,
    pub source: BasisSource,
    /// Set when `r` exceeds the numerical rank of the source.
    pub rank_deficient: bool,
}

impl ReductionBasis {
    pub fn from_matrix(basis: DMatrix<f64>, source: BasisSource) -> Self {
        ReductionBasis {
            basis,
            singular_values: Vec::new(),
            source,
            rank_deficient: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Leading `r` columns.
    pub fn truncate(&self, r: usize) -> Result<ReductionBasis> {
        if r == 0 || r > self.dim() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-dimensional basis to r = {r}",
                self.dim()
            )));
        }
        Ok(ReductionBasis {
            basis: self.basis.columns(0, r).into_owned(),
            singular_values: self.singular_values.clone(),
            source: self.source,
            rank_deficient: r > numerical_rank(&self.singular_values, RANK_TOLERANCE),
        })
    }

    pub fn orthonormality_defect(&self) -> f64 {
        orthonormality_defect(&self.basis)
    }

    /// Fraction of `sum sigma_i^2` captured by the leading `r` directions.
    pub fn energy(&self, r: usize) -> f64 {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        if total == 0.0 {
            return 0.0;
        }
        self.singular_values.iter().take(r).map(|s| s * s).sum::<f64>() / total
    }
}

/// Number of singular values above `rank_tol * sigma_max`.
pub fn numerical_rank(singular_values: &[f64], rank_tol: f64) -> usize {
    let max = singular_values.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    singular_values.iter().filter(|s| **s > rank_tol * max).count()
}

/// Columns ordered by ensemble, then time index, then path.
pub fn build_state_snapshot_matrix(ensembles: &[SnapshotEnsemble]) -> Result<DMatrix<f64>> {
    let n = ensembles.first().map_or(0, |e| e.state_dim());
    let mut cols = 0;
    for e in ensembles {
        if e.state_dim() != n {
            return Err(dim_err("state snapshot matrix", n, e.state_dim()));
        }
        cols += e.len() * e.grid.len();
    }
    let mut out = DMatrix::zeros(n, cols);
    let mut c = 0;
    for e in ensembles {
        for i in 0..e.grid.len() {
            for p in &e.paths {
                out.set_column(c, &p.column(i));
                c += 1;
            }
        }
    }
    Ok(out)
}

/// Per trajectory: `[E_0, ..., E_s, C_0, ..., C_s]`.
pub fn build_moment_snapshot_matrix(moments: &[MomentTrajectory]) -> Result<DMatrix<f64>> {
    let n = moments.first().map_or(0, |m| m.state_dim());
    let mut cols = 0;
    for m in moments {
        if m.state_dim() != n || m.covariances.iter().any(|c| c.shape() != (n, n)) {
            return Err(dim_err("moment snapshot matrix", n, m.state_dim()));
        }
        cols += m.means.len() + n * m.covariances.len();
    }
    let mut out = DMatrix::zeros(n, cols);
    let mut c = 0;
    for m in moments {
        for e in &m.means {
            out.set_column(c, e);
            c += 1;
        }
        for cov in &m.covariances {
            out.columns_mut(c, n).copy_from(cov);
            c += n;
        }
    }
    Ok(out)
}

/// `[E_0, ..., E_s]` of one trajectory.
pub fn mean_snapshot_matrix(m: &MomentTrajectory) -> DMatrix<f64> {
    DMatrix::from_columns(&m.means)
}

/// `[C_0, ..., C_s]` of one trajectory.
pub fn covariance_snapshot_matrix(m: &MomentTrajectory) -> DMatrix<f64> {
    let n = m.state_dim();
    let mut out = DMatrix::zeros(n, n * m.covariances.len());
    for (i, c) in m.covariances.iter().enumerate() {
        out.columns_mut(i * n, n).copy_from(c);
    }
    out
}

/// Scale applied to the columns `start..start + len` before decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnBlock {
    pub start: usize,
    pub len: usize,
    pub scale: f64,
}

/// Left singular vectors and all singular values of `m`, descending.
///
/// Wide matrices are first reduced by a QR factorization of `m^T`, which
/// leaves the left singular vectors unchanged.
pub fn left_singular_vectors(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(rows, 0), Vec::new());
    }
    let svd = if cols > rows {
        let r = m.transpose().qr().r();
        SVD::new(r.transpose(), true, false)
    } else {
        SVD::new(m.clone(), true, false)
    };
    let u = svd.u.expect("left singular vectors requested");
    (u, svd.singular_values.iter().cloned().collect())
}

pub fn compute_basis(m: &DMatrix<f64>, r: usize, weighting: Option<&[ColumnBlock]>) -> Result<ReductionBasis> {
    compute_basis_from(m, r, weighting, BasisSource::StateSnapshots)
}

pub fn compute_basis_from(
    m: &DMatrix<f64>,
    r: usize,
    weighting: Option<&[ColumnBlock]>,
    source: BasisSource,
) -> Result<ReductionBasis> {
    let (rows, cols) = m.shape();
    if r == 0 || r > rows.min(cols) {
        return Err(Error::InvalidArgument(format!(
            "basis dimension r = {r} outside 1..={}",
            rows.min(cols)
        )));
    }
    let weighted;
    let src = match weighting {
        Some(blocks) => {
            let mut w = m.clone();
            for b in blocks {
                if b.start + b.len > cols {
                    return Err(dim_err(
                        "basis weighting",
                        format!("columns <= {cols}"),
                        b.start + b.len,
                    ));
                }
                w.columns_mut(b.start, b.len).scale_mut(b.scale);
            }
            weighted = w;
            &weighted
        }
        None => m,
    };
    let (u, sigma) = left_singular_vectors(src);
    Ok(finish_basis(u.columns(0, r).into_owned(), sigma, source))
}

fn finish_basis(mut v: DMatrix<f64>, singular_values: Vec<f64>, source: BasisSource) -> ReductionBasis {
    linalg::normalize_column_signs(&mut v);
    let rank = numerical_rank(&singular_values, RANK_TOLERANCE);
    let rank_deficient = v.ncols() > rank;
    if rank_deficient {
        log::warn!(
            "basis dimension {} exceeds numerical rank {rank}; trailing directions are arbitrary",
            v.ncols()
        );
    }
    ReductionBasis {
        basis: v,
        singular_values,
        source,
        rank_deficient,
    }
}

/// POD basis from an accumulated Gram matrix `M M^T`; singular values are
/// `sqrt(max(lambda, 0))`.
pub fn basis_from_gram(gram: &DMatrix<f64>, r: usize, source: BasisSource) -> Result<ReductionBasis> {
    let n = gram.nrows();
    if !gram.is_square() {
        return Err(dim_err(
            "gram basis",
            "square matrix",
            format!("{}x{}", n, gram.ncols()),
        ));
    }
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!(
            "basis dimension r = {r} outside 1..={n}"
        )));
    }
    let (vals, vecs) = linalg::sym_eig_desc(gram);
    let sigma = vals.iter().map(|l| l.max(0.0).sqrt()).collect();
    Ok(finish_basis(vecs.columns(0, r).into_owned(), sigma, source))
}

/// All left singular vectors with `sigma > rank_tol * sigma_max`.
pub fn range_basis(m: &DMatrix<f64>, rank_tol: f64, source: BasisSource) -> ReductionBasis {
    let (u, sigma) = left_singular_vectors(m);
    let k = numerical_rank(&sigma, rank_tol);
    let mut v = u.columns(0, k).into_owned();
    linalg::normalize_column_signs(&mut v);
    ReductionBasis {
        basis: v,
        singular_values: sigma,
        source,
        rank_deficient: false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContainmentReport {
    /// `||(I - V V^T) v||_2` per inner column.
    pub residuals: Vec<f64>,
    pub outer_rank: usize,
    pub tol: f64,
}

impl ContainmentReport {
    pub fn holds(&self) -> bool {
        self.residuals.iter().all(|r| *r <= self.tol)
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().cloned().fold(0.0, f64::max)
    }
}

/// Residuals of the inner basis columns against the outer span, the outer
/// basis truncated at its numerical rank when singular values are known.
pub fn check_span_containment(inner: &ReductionBasis, outer: &ReductionBasis, tol: f64) -> Result<ContainmentReport> {
    if inner.state_dim() != outer.state_dim() {
        return Err(dim_err("span containment", outer.state_dim(), inner.state_dim()));
    }
    let k = if outer.singular_values.is_empty() {
        outer.dim()
    } else {
        numerical_rank(&outer.singular_values, RANK_TOLERANCE).min(outer.dim())
    };
    let v = outer.basis.columns(0, k);
    let residuals = inner
        .basis
        .column_iter()
        .map(|c| {
            let coeff = v.transpose() * c;
            (c - v * coeff).norm()
        })
        .collect();
    Ok(ContainmentReport {
        residuals,
        outer_rank: k,
        tol,
    })
}
