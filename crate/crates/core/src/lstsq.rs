//! Minimum-norm least squares with relative singular-value truncation.
//!
//! The thin singular value decomposition comes from `faer`. nalgebra's SVD
//! was tried first and returned factors that do not reproduce the input on
//! exactly rank-deficient matrices, which is the case that matters here.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{BlockLabel, RowRange};
use crate::error::{Error, Result};

pub const DEFAULT_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstsqResult {
    pub coeffs: Vec<f64>,
    pub total_residual: f64,
    pub per_block_residual: BTreeMap<BlockLabel, f64>,
    pub rank_estimate: usize,
    /// Largest over smallest retained singular value.
    pub condition_estimate: f64,
    pub rcond: f64,
    pub singular_values: Vec<f64>,
}

impl LstsqResult {
    /// Splits the residual by the row provenance of a stacked system.
    pub fn with_blocks(mut self, matrix: &DMatrix<f64>, rhs: &DVector<f64>, ranges: &[RowRange]) -> Result<Self> {
        let r = residual(matrix, rhs, &self.coeffs);
        self.per_block_residual.clear();
        for range in ranges {
            if range.end > r.len() || range.start > range.end {
                return Err(Error::invalid(format!(
                    "row range {}..{} outside {} rows",
                    range.start,
                    range.end,
                    r.len()
                )));
            }
            let sq: f64 = r.rows(range.start, range.end - range.start).norm_squared();
            *self.per_block_residual.entry(range.label).or_insert(0.0) += sq;
        }
        for v in self.per_block_residual.values_mut() {
            *v = v.sqrt();
        }
        Ok(self)
    }
}

fn residual(matrix: &DMatrix<f64>, rhs: &DVector<f64>, x: &[f64]) -> DVector<f64> {
    matrix * DVector::from_column_slice(x) - rhs
}

/// Solves `min ‖Mx - b‖₂`, dropping singular values below `rcond · σ_max`.
pub fn solve_lstsq(matrix: &DMatrix<f64>, rhs: &DVector<f64>, rcond: f64) -> Result<LstsqResult> {
    let (m, n) = matrix.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid(format!("empty least-squares system ({m}x{n})")));
    }
    if rhs.len() != m {
        return Err(Error::Dimension {
            expected: m,
            got: rhs.len(),
        });
    }
    if !(0.0..1.0).contains(&rcond) {
        return Err(Error::invalid(format!("rcond must lie in [0, 1), got {rcond}")));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares matrix"));
    }
    if rhs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares right-hand side"));
    }

    let svd = faer::Mat::from_fn(m, n, |i, j| matrix[(i, j)])
        .thin_svd()
        .map_err(|e| Error::invalid(format!("singular value decomposition failed: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    let sigma: Vec<f64> = svd.S().column_vector().iter().copied().collect();
    let smax = sigma.iter().copied().fold(0.0, f64::max);
    let cutoff = rcond * smax;
    let mut x = DVector::zeros(n);
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    for (i, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            smin = smin.min(s);
            let utb: f64 = (0..m).map(|r| u[(r, i)] * rhs[r]).sum();
            let scale = utb / s;
            for j in 0..n {
                x[j] += scale * v[(j, i)];
            }
        }
    }
    let mut singular_values = sigma;
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let coeffs: Vec<f64> = x.iter().copied().collect();
    if coeffs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("least-squares solution"));
    }
    let total_residual = residual(matrix, rhs, &coeffs).norm();
    Ok(LstsqResult {
        coeffs,
        total_residual,
        per_block_residual: BTreeMap::new(),
        rank_estimate: rank,
        condition_estimate: if rank == 0 { f64::INFINITY } else { smax / smin },
        rcond,
        singular_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn random_matrix(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 99);
        DMatrix::from_fn(m, n, |_, _| rng::uniform(&mut r, -1.0, 1.0))
    }

    #[test]
    fn identity_returns_rhs() {
        let b = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        let res = solve_lstsq(&DMatrix::identity(3, 3), &b, DEFAULT_RCOND).unwrap();
        for (x, y) in res.coeffs.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(res.total_residual < 1e-15);
        assert_eq!(res.rank_estimate, 3);
        assert!((res.condition_estimate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_equations_give_the_mean() {
        let m = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 2.0]);
        let res = solve_lstsq(&m, &b, DEFAULT_RCOND).unwrap();
        assert!((res.coeffs[0] - 1.0).abs() < 1e-15);
        assert!((res.total_residual - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn duplicated_column_drops_rank_and_splits_evenly() {
        let mut m = random_matrix(30, 4, 2);
        let col = m.column(1).into_owned();
        m.set_column(3, &col);
        let b = &m * DVector::from_vec(vec![1.0, 2.0, -1.0, 0.0]);
        for rcond in [1e-12, 1e-10, 1e-6] {
            let res = solve_lstsq(&m, &b, rcond).unwrap();
            assert_eq!(res.rank_estimate, 3);
            // minimum norm spreads the shared weight over both copies
            assert!((res.coeffs[1] - 1.0).abs() < 1e-10 && (res.coeffs[3] - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn duplicated_blocks_split_evenly() {
        for seed in 0..40 {
            let a = random_matrix(30, 5, seed);
            let b = DVector::from_fn(30, |i, _| (i as f64 + seed as f64).sin());
            let base = solve_lstsq(&a, &b, DEFAULT_RCOND).unwrap();
            let mut twice = DMatrix::zeros(30, 10);
            twice.columns_mut(0, 5).copy_from(&a);
            twice.columns_mut(5, 5).copy_from(&a);
            let res = solve_lstsq(&twice, &b, DEFAULT_RCOND).unwrap();
            assert_eq!(res.rank_estimate, 5);
            for j in 0..10 {
                assert!((res.coeffs[j] - 0.5 * base.coeffs[j % 5]).abs() < 1e-12, "seed {seed}");
            }
        }
    }

    #[test]
    fn wide_system_takes_minimum_norm() {
        let m = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        let b = DVector::from_vec(vec![5.0]);
        let res = solve_lstsq(&m, &b, DEFAULT_RCOND).unwrap();
        assert!((res.coeffs[0] - 0.6).abs() < 1e-15 && (res.coeffs[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn bad_inputs() {
        let m = DMatrix::<f64>::zeros(0, 3);
        assert!(solve_lstsq(&m, &DVector::zeros(0), 1e-12).is_err());
        let mut m = DMatrix::identity(2, 2);
        assert!(solve_lstsq(&m, &DVector::zeros(2), 1.0).is_err());
        assert!(solve_lstsq(&m, &DVector::zeros(3), 0.0).is_err());
        m[(0, 1)] = f64::NAN;
        assert!(solve_lstsq(&m, &DVector::zeros(2), 0.0).is_err());
    }

    #[test]
    fn block_residuals_add_up() {
        let m = random_matrix(40, 6, 5);
        let b = DVector::from_fn(40, |i, _| (i as f64).sin());
        let ranges = [
            RowRange {
                label: BlockLabel::WeakForm,
                start: 0,
                end: 25,
            },
            RowRange {
                label: BlockLabel::Dirichlet,
                start: 25,
                end: 40,
            },
        ];
        let res = solve_lstsq(&m, &b, DEFAULT_RCOND)
            .unwrap()
            .with_blocks(&m, &b, &ranges)
            .unwrap();
        let sum: f64 = res.per_block_residual.values().map(|r| r * r).sum();
        assert!((sum - res.total_residual.powi(2)).abs() <= 1e-10 * sum);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_is_optimal_and_scale_free(seed in 0u64..1000, m in 12usize..40, n in 2usize..10) {
            let a = random_matrix(m, n, seed);
            let b = DVector::from_fn(m, |i, _| ((i as u64 * 7 + seed) as f64).cos());
            let res = solve_lstsq(&a, &b, DEFAULT_RCOND).unwrap();
            let x = DVector::from_column_slice(&res.coeffs);
            let r = &a * &x - &b;
            prop_assert!((a.transpose() * &r).norm() <= 1e-8 * a.norm() * b.norm());
            let mut g = rng::stream(seed, 7);
            for _ in 0..20 {
                let mut d = DVector::from_fn(n, |_, _| rng::uniform(&mut g, -1.0, 1.0));
                d *= 1e-3 * x.norm() / d.norm();
                prop_assert!((&a * (&x + d) - &b).norm() >= res.total_residual - 1e-12);
            }
            for c in [1e-3, 1e3] {
                let scaled = solve_lstsq(&(&a * c), &(&b * c), DEFAULT_RCOND).unwrap();
                let y = DVector::from_column_slice(&scaled.coeffs);
                prop_assert!((&y - &x).norm() <= 1e-12 * x.norm());
            }
        }
    }
}
