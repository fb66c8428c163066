use crate::tol;

use super::matrix::{vec_dot, Matrix};
use super::NumError;

/// Outcome of the positive-semidefinite check. `NotPsd` carries a witness
/// vector `v` with `v^T m v < 0`.
#[derive(Debug, Clone, PartialEq)]
pub enum PsdOutcome {
    Psd,
    NotPsd { witness: Vec<f64> },
}

struct LuFactors {
    lu: Matrix,
    perm: Vec<usize>,
}

fn lu_factor(a: &Matrix, pivot_tol: f64) -> Result<LuFactors, NumError> {
    let n = a.rows();
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let threshold = pivot_tol * a.inf_norm();
    for k in 0..n {
        let (pivot_row, pivot_val) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if pivot_val <= threshold {
            return Err(NumError::SingularMatrix);
        }
        if pivot_row != k {
            for j in 0..n {
                let tmp = lu[(k, j)];
                lu[(k, j)] = lu[(pivot_row, j)];
                lu[(pivot_row, j)] = tmp;
            }
            perm.swap(k, pivot_row);
        }
        let d = lu[(k, k)];
        for i in (k + 1)..n {
            let m = lu[(i, k)] / d;
            lu[(i, k)] = m;
            for j in (k + 1)..n {
                lu[(i, j)] -= m * lu[(k, j)];
            }
        }
    }
    Ok(LuFactors { lu, perm })
}

impl LuFactors {
    #[allow(clippy::needless_range_loop)] // triangular index ranges
    fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let n = self.lu.rows();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[self.perm[i]];
            for j in 0..i {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= self.lu[(i, j)] * y[j];
            }
            y[i] = s / self.lu[(i, i)];
        }
        y
    }
}

/// Solve `a X = b` with partial pivoting. Fails with `SingularMatrix` when a
/// pivot falls below `1e-12 * ||a||_inf`.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, NumError> {
    lu_solve_with(a, b, tol::scaled(tol::LU_PIVOT_REL))
}

/// As [`lu_solve`] with an explicit relative pivot tolerance.
pub fn lu_solve_with(a: &Matrix, b: &Matrix, pivot_tol: f64) -> Result<Matrix, NumError> {
    if !a.is_square() {
        return Err(NumError::DimensionMismatch(format!(
            "lu_solve needs a square system, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if a.rows() != b.rows() {
        return Err(NumError::DimensionMismatch(format!(
            "system is {}x{} but rhs has {} rows",
            a.rows(),
            a.cols(),
            b.rows()
        )));
    }
    let f = lu_factor(a, pivot_tol)?;
    let n = a.rows();
    let mut x = Matrix::zeros(n, b.cols());
    let mut col = vec![0.0; n];
    for j in 0..b.cols() {
        for i in 0..n {
            col[i] = b[(i, j)];
        }
        let xj = f.solve_vec(&col);
        for i in 0..n {
            x[(i, j)] = xj[i];
        }
    }
    Ok(x)
}

fn check_symmetry(m: &Matrix) -> Result<Matrix, NumError> {
    if !m.is_square() {
        return Err(NumError::DimensionMismatch(format!(
            "expected a square symmetric matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let limit = tol::scaled(tol::SYMMETRY_REL) * m.inf_norm();
    let asym = m.asymmetry();
    if asym > limit && asym > 0.0 {
        return Err(NumError::NotSymmetric {
            asymmetry: asym,
            limit,
        });
    }
    Ok(m.symmetrize())
}

/// Lower-triangular `L` with `L L^T = m`. `NotPositiveDefinite` is a signal:
/// a refuted certificate, not a numeric failure.
pub fn cholesky(m: &Matrix) -> Result<Matrix, NumError> {
    let s = check_symmetry(m)?;
    let n = s.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = s[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(NumError::NotPositiveDefinite);
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Positive-semidefinite test by diagonally pivoted LDL^T elimination.
///
/// PSD iff no pivot falls below `-tol * (1 + ||m||_inf)`; otherwise returns a
/// witness `v` with `v^T m v < 0` built from the exact Schur-complement
/// identity on the offending index set.
pub fn semidefinite_check(m: &Matrix, tol: f64) -> Result<PsdOutcome, NumError> {
    let sym = check_symmetry(m)?;
    let n = sym.rows();
    let threshold = tol * (1.0 + sym.inf_norm());

    // Working Schur complement over the still-active index set.
    let mut s = sym.clone();
    let mut active: Vec<usize> = (0..n).collect();
    let mut eliminated: Vec<usize> = Vec::new();

    loop {
        if active.is_empty() {
            return Ok(PsdOutcome::Psd);
        }
        // Most positive remaining diagonal first: stable elimination order.
        let (best_pos, best_val) = active
            .iter()
            .enumerate()
            .map(|(pos, &idx)| (pos, s[(idx, idx)]))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();

        if best_val > threshold {
            let p = active[best_pos];
            let d = s[(p, p)];
            for &i in &active {
                if i == p {
                    continue;
                }
                let li = s[(i, p)] / d;
                for &j in &active {
                    if j == p {
                        continue;
                    }
                    let v = s[(i, j)] - li * s[(p, j)];
                    s[(i, j)] = v;
                }
            }
            eliminated.push(p);
            active.remove(best_pos);
            continue;
        }

        // All remaining diagonals are at or below the tolerance band.
        let (worst_pos, worst_val) = active
            .iter()
            .enumerate()
            .map(|(pos, &idx)| (pos, s[(idx, idx)]))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if worst_val < -threshold {
            let j = active[worst_pos];
            if let Some(w) = schur_witness(&sym, &eliminated, &[(j, 1.0)]) {
                return Ok(PsdOutcome::NotPsd { witness: w });
            }
            return Ok(PsdOutcome::Psd);
        }

        // Diagonals negligible; a large off-diagonal still means indefinite
        // (the 2x2 [[~0, b],[b, ~0]] has an eigenvalue near -|b|).
        let mut off: Option<(usize, usize, f64)> = None;
        for (ai, &i) in active.iter().enumerate() {
            for &j in active.iter().skip(ai + 1) {
                let v = s[(i, j)];
                if off.is_none_or(|(_, _, b)| v.abs() > b.abs()) {
                    off = Some((i, j, v));
                }
            }
        }
        match off {
            Some((i, j, b)) if b.abs() > threshold => {
                let sign = if b > 0.0 { -1.0 } else { 1.0 };
                if let Some(w) = schur_witness(&sym, &eliminated, &[(i, 1.0), (j, sign)]) {
                    return Ok(PsdOutcome::NotPsd { witness: w });
                }
                return Ok(PsdOutcome::Psd);
            }
            _ => return Ok(PsdOutcome::Psd),
        }
    }
}

/// Build `v` with `v^T m v = `direction' Schur complement value: unit weights
/// on `dirs`, and on the eliminated set the exact minimizer
/// `-m[E,E]^{-1} m[E, dirs]`. Returns None if the verification `v^T m v < 0`
/// fails (marginal case swallowed by the tolerance).
fn schur_witness(m: &Matrix, eliminated: &[usize], dirs: &[(usize, f64)]) -> Option<Vec<f64>> {
    let n = m.rows();
    let mut v = vec![0.0; n];
    for &(j, w) in dirs {
        v[j] = w;
    }
    if !eliminated.is_empty() {
        let k = eliminated.len();
        let mut mee = Matrix::zeros(k, k);
        let mut rhs = Matrix::zeros(k, 1);
        for (a, &i) in eliminated.iter().enumerate() {
            for (b, &j) in eliminated.iter().enumerate() {
                mee[(a, b)] = m[(i, j)];
            }
            rhs[(a, 0)] = dirs.iter().map(|&(j, w)| w * m[(i, j)]).sum();
        }
        let z = lu_solve(&mee, &rhs).ok()?;
        for (a, &i) in eliminated.iter().enumerate() {
            v[i] = -z[(a, 0)];
        }
    }
    if m.quad_form(&v) < 0.0 {
        Some(v)
    } else {
        None
    }
}

/// Smallest eigenvalue of a symmetric positive definite matrix via inverse
/// power iteration (repeated `lu_solve`). Positive definiteness is checked
/// with `cholesky` first.
pub fn min_eig_symmetric(m: &Matrix) -> Result<f64, NumError> {
    min_eig_pair(m).map(|(lambda, _)| lambda)
}

/// As `min_eig_symmetric`, also returning the eigenvector.
pub fn min_eig_pair(m: &Matrix) -> Result<(f64, Vec<f64>), NumError> {
    let s = check_symmetry(m)?;
    cholesky(&s)?;
    let n = s.rows();
    let f = lu_factor(&s, tol::scaled(tol::LU_PIVOT_REL))?;

    // Deterministic start with components along every axis.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64) * 0.25).collect();
    normalize(&mut v);
    let mut lambda;
    let rel = tol::scaled(tol::MIN_EIG_REL);
    let norm = s.inf_norm();
    for _ in 0..tol::MIN_EIG_MAX_ITERS {
        let mut w = f.solve_vec(&v);
        normalize(&mut w);
        lambda = s.quad_form(&w);
        v = w;
        // The eigenpair residual drives the stop: lambda stagnates two
        // iterations before the vector does.
        let mv = s.matvec(&v);
        let resid = mv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - lambda * b).abs())
            .fold(0.0f64, f64::max);
        if resid <= rel * norm {
            return Ok((lambda, v));
        }
    }
    Err(NumError::NoConvergence(tol::MIN_EIG_MAX_ITERS))
}

fn normalize(v: &mut [f64]) {
    let norm = vec_dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

#[allow(unused)]
pub(crate) fn vec_norm2(v: &[f64]) -> f64 {
    vec_dot(v, v).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::{matmul, vec_inf_norm};

    #[test]
    fn solve_identity_returns_rhs() {
        let b = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let x = lu_solve(&Matrix::identity(2), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn solve_scalar() {
        let a = Matrix::from_rows(&[vec![2.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![6.0]]).unwrap();
        assert_eq!(lu_solve(&a, &b).unwrap()[(0, 0)], 3.0);
    }

    #[test]
    fn rank_deficient_is_singular() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(lu_solve(&a, &b).unwrap_err(), NumError::SingularMatrix);
    }

    #[test]
    fn solve_residual_small() {
        let a = Matrix::from_rows(&[
            vec![4.0, 1.0, -1.0],
            vec![1.0, 3.0, 2.0],
            vec![-1.0, 2.0, 5.0],
        ])
        .unwrap();
        let b = Matrix::from_rows(&[vec![3.0], vec![-2.0], vec![7.0]]).unwrap();
        let x = lu_solve(&a, &b).unwrap();
        let r = matmul(&a, &x).unwrap().sub(&b).unwrap();
        assert!(r.max_abs() <= 1e-10 * (1.0 + b.inf_norm()));
    }

    #[test]
    fn cholesky_scalar() {
        let l = cholesky(&Matrix::from_rows(&[vec![4.0]]).unwrap()).unwrap();
        assert_eq!(l[(0, 0)], 2.0);
    }

    #[test]
    fn cholesky_hand_expansion() {
        let m = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 5.0]]).unwrap();
        let l = cholesky(&m).unwrap();
        let expect = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2.0]]).unwrap();
        assert!(l.sub(&expect).unwrap().max_abs() < 1e-14);
        let llt = matmul(&l, &l.transpose()).unwrap();
        assert!(llt.sub(&m).unwrap().max_abs() <= 1e-9 * m.inf_norm());
    }

    #[test]
    fn cholesky_indefinite_signals() {
        let m = Matrix::diag(&[1.0, -1.0]);
        assert_eq!(cholesky(&m).unwrap_err(), NumError::NotPositiveDefinite);
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(cholesky(&m), Err(NumError::NotSymmetric { .. })));
    }

    #[test]
    fn psd_zero_matrix() {
        let m = Matrix::zeros(3, 3);
        assert_eq!(semidefinite_check(&m, 1e-8).unwrap(), PsdOutcome::Psd);
    }

    #[test]
    fn psd_singular_but_semidefinite() {
        let m = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert_eq!(semidefinite_check(&m, 1e-8).unwrap(), PsdOutcome::Psd);
    }

    #[test]
    fn not_psd_with_witness() {
        let m = Matrix::diag(&[1.0, -0.5]);
        match semidefinite_check(&m, 1e-8).unwrap() {
            PsdOutcome::NotPsd { witness } => {
                assert!(m.quad_form(&witness) < 0.0);
                // witness is along e2
                assert!(witness[0].abs() < 1e-12 && witness[1].abs() > 0.0);
            }
            PsdOutcome::Psd => panic!("diag(1,-0.5) declared PSD"),
        }
    }

    #[test]
    fn not_psd_zero_diag_large_offdiag() {
        let m = Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        match semidefinite_check(&m, 1e-8).unwrap() {
            PsdOutcome::NotPsd { witness } => assert!(m.quad_form(&witness) < 0.0),
            PsdOutcome::Psd => panic!("indefinite matrix declared PSD"),
        }
    }

    #[test]
    fn min_eig_identity() {
        let (l, _) = min_eig_pair(&Matrix::identity(2)).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
    }

    #[test]
    fn min_eig_diag() {
        assert!((min_eig_symmetric(&Matrix::diag(&[3.0, 0.25])).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn min_eig_coupled() {
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let (l, v) = min_eig_pair(&m).unwrap();
        assert!((l - 1.0).abs() < 1e-8);
        let mv = m.matvec(&v);
        let resid: Vec<f64> = mv.iter().zip(&v).map(|(a, b)| a - l * b).collect();
        assert!(vec_inf_norm(&resid) <= 1e-7 * m.inf_norm());
    }

    #[test]
    fn min_eig_rejects_indefinite() {
        let m = Matrix::diag(&[1.0, -1.0]);
        assert_eq!(
            min_eig_symmetric(&m).unwrap_err(),
            NumError::NotPositiveDefinite
        );
    }
}
