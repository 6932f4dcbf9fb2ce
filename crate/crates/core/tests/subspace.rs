use nalgebra::DMatrix;
use proptest::prelude::*;
use sde_opinf::bench::heat1d::{build_heat1d_fom, Heat1dSpec};
use sde_opinf::moments::empirical_moments;
use sde_opinf::sim::{sample_ensemble, SeedPolicy};
use sde_opinf::subspace::*;
use sde_opinf::{ControlSignal, TimeGrid};

/// `U diag(sigma) W^T` with orthogonal factors built from `entries`.
fn with_spectrum(entries: &[f64], rows: usize, cols: usize, sigma: &[f64]) -> DMatrix<f64> {
    let u = DMatrix::from_fn(rows, rows, |i, j| entries[(i * rows + j) % entries.len()])
        .qr()
        .q();
    let w = DMatrix::from_fn(cols, cols, |i, j| entries[(7 + i * cols + j) % entries.len()])
        .qr()
        .q();
    let mut s = DMatrix::zeros(rows, cols);
    for (k, v) in sigma.iter().enumerate() {
        s[(k, k)] = *v;
    }
    u * s * w.transpose()
}

fn projector(v: &DMatrix<f64>) -> DMatrix<f64> {
    v * v.transpose()
}

const SPECTRUM: [f64; 5] = [9.0, 4.0, 2.0, 0.7, 0.1];

proptest! {
    #[test]
    fn truncation_error_is_the_tail_energy(entries in prop::collection::vec(-1.0f64..1.0, 64), r in 1usize..5) {
        let m = with_spectrum(&entries, 6, 9, &SPECTRUM);
        let b = compute_basis(&m, r, None).unwrap();
        let v = &b.basis;
        let err = (&m - v * (v.transpose() * &m)).norm_squared();
        let tail: f64 = SPECTRUM[r..].iter().map(|s| s * s).sum();
        prop_assert!((err - tail).abs() <= 1e-9 * tail.max(1.0));
        // Any other r-dimensional subspace does no better.
        let other = DMatrix::from_fn(6, r, |i, j| entries[(3 * i + 5 * j) % 64] + 0.1).qr().q();
        let other_err = (&m - &other * (other.transpose() * &m)).norm_squared();
        prop_assert!(other_err >= err - 1e-9);
    }

    #[test]
    fn energy_identity(entries in prop::collection::vec(-3.0f64..3.0, 40)) {
        let m = DMatrix::from_row_slice(5, 8, &entries);
        let (_, sigma) = left_singular_vectors(&m);
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        prop_assert!((total - m.norm_squared()).abs() <= 1e-9 * m.norm_squared());
    }

    #[test]
    fn column_permutations_leave_the_projector_unchanged(entries in prop::collection::vec(-1.0f64..1.0, 64), r in 1usize..5) {
        let m = with_spectrum(&entries, 6, 9, &SPECTRUM);
        let perm: Vec<usize> = (0..9).map(|j| (j * 4 + 3) % 9).collect();
        let p = DMatrix::from_fn(6, 9, |i, j| m[(i, perm[j])]);
        let a = compute_basis(&m, r, None).unwrap();
        let b = compute_basis(&p, r, None).unwrap();
        prop_assert!((projector(&a.basis) - projector(&b.basis)).norm() <= 1e-10);
        // Largest-magnitude entry of every column is positive.
        for col in a.basis.column_iter() {
            let imax = col.iamax();
            prop_assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn gram_route_matches_direct_svd(entries in prop::collection::vec(-1.0f64..1.0, 64), r in 1usize..5) {
        let m = with_spectrum(&entries, 6, 9, &SPECTRUM);
        let direct = compute_basis(&m, r, None).unwrap();
        let gram = basis_from_gram(&(&m * m.transpose()), r, BasisSource::StateSnapshots).unwrap();
        prop_assert!((projector(&direct.basis) - projector(&gram.basis)).norm() <= 1e-9);
        // Squared singular values agree to rounding of the Gram matrix.
        for (a, b) in direct.singular_values.iter().zip(&gram.singular_values) {
            prop_assert!((a * a - b * b).abs() <= 1e-12 * SPECTRUM[0] * SPECTRUM[0]);
        }
    }
}

#[test]
fn basis_is_orthonormal_and_flags_excess_dimension() {
    let m = with_spectrum(&[0.3, -0.7, 0.2, 0.9, -0.1, 0.5, 0.8], 5, 7, &[3.0, 1.0]);
    let b = compute_basis(&m, 2, None).unwrap();
    assert!(b.orthonormality_defect() < 1e-12);
    assert!(!b.rank_deficient);
    assert!(compute_basis(&m, 4, None).unwrap().rank_deficient);
    assert!(compute_basis(&m, 0, None).is_err());
    assert!((b.energy(1) - 0.9).abs() < 1e-12);
}

#[test]
fn column_weighting_scales_block_contributions() {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
    let plain = compute_basis(&m, 1, None).unwrap();
    assert!((plain.basis[(1, 0)].abs() - 1.0).abs() < 1e-12);
    let blocks = [ColumnBlock {
        start: 0,
        len: 1,
        scale: 5.0,
    }];
    let weighted = compute_basis(&m, 1, Some(&blocks)).unwrap();
    assert!((weighted.basis[(0, 0)].abs() - 1.0).abs() < 1e-12);
}

#[test]
fn moment_spans_lie_in_the_state_span() {
    let sys = build_heat1d_fom(&Heat1dSpec {
        n: 20,
        ..Default::default()
    })
    .unwrap();
    let grid = TimeGrid::new(30, 1e-2).unwrap();
    let ens = sample_ensemble(
        &sys,
        &ControlSignal::cosine(1.0, 2.0, 0.3),
        &grid,
        6,
        SeedPolicy::new(3),
        0,
    )
    .unwrap();
    let state = range_basis(
        &build_state_snapshot_matrix(std::slice::from_ref(&ens)).unwrap(),
        RANK_TOLERANCE,
        BasisSource::StateSnapshots,
    );
    let moments = empirical_moments(&ens, None).unwrap();
    for m in [
        mean_snapshot_matrix(&moments),
        covariance_snapshot_matrix(&moments),
        build_moment_snapshot_matrix(std::slice::from_ref(&moments)).unwrap(),
    ] {
        let inner = range_basis(&m, RANK_TOLERANCE, BasisSource::MomentSnapshots);
        let rep = check_span_containment(&inner, &state, 1e-8).unwrap();
        assert!(rep.holds(), "max residual {}", rep.max_residual());
    }
}

#[test]
fn containment_detects_a_foreign_direction() {
    let outer = ReductionBasis::from_matrix(DMatrix::identity(3, 3).columns(0, 2).into_owned(), BasisSource::Given);
    let inner = ReductionBasis::from_matrix(DMatrix::from_column_slice(3, 1, &[0.0, 0.6, 0.8]), BasisSource::Given);
    let rep = check_span_containment(&inner, &outer, 1e-8).unwrap();
    assert!(!rep.holds());
    assert!((rep.max_residual() - 0.8).abs() < 1e-12);
}
