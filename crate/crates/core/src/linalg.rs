//! Thin sparse and dense linear algebra layer.
//!
//! Assembled operators are kept as COO blocks; the global Newton matrix is
//! handed to a faer sparse LU. Dense helpers back the small eigenvalue
//! probes for coercivity and inf-sup constants.

use faer::linalg::solvers::Solve;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("singular system: {0}")]
    Singular(String),
    #[error("eigen solve failed: {0}")]
    Eigen(String),
}

/// Sparse matrix in triplet form. Duplicate entries are additive.
#[derive(Debug, Clone)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// y += alpha * A x
    pub fn matvec_add(&self, x: &[f64], y: &mut [f64], alpha: f64) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for &(i, j, v) in &self.entries {
            y[i] += alpha * v * x[j];
        }
    }

    /// y += alpha * A^T x
    pub fn matvec_transpose_add(&self, x: &[f64], y: &mut [f64], alpha: f64) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for &(i, j, v) in &self.entries {
            y[j] += alpha * v * x[i];
        }
    }

    /// Bilinear pairing x^T A y.
    pub fn pairing(&self, x: &[f64], y: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, j, v)| x[i] * v * y[j]).sum()
    }

    /// Duplicate-merged entries in column-major order.
    pub fn merged(&self) -> Vec<(usize, usize, f64)> {
        let mut entries = self.entries.clone();
        entries.sort_unstable_by_key(|&(i, j, _)| (j, i));
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match out.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => out.push((i, j, v)),
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            dense[(i, j)] += v;
        }
        dense
    }

    /// max_ij |A - A^T| over the merged entries.
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut map = std::collections::HashMap::new();
        for &(i, j, v) in &self.entries {
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        let mut worst: f64 = 0.0;
        for (&(i, j), &v) in &map {
            let vt = map.get(&(j, i)).copied().unwrap_or(0.0);
            worst = worst.max((v - vt).abs());
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.merged().iter().map(|&(_, _, v)| v.abs()).fold(0.0, f64::max)
    }

    /// Append this block into a global triplet list with row/column offsets
    /// and a scalar factor.
    pub fn add_to(&self, out: &mut Vec<(usize, usize, f64)>, row0: usize, col0: usize, factor: f64) {
        out.extend(self.entries.iter().map(|&(i, j, v)| (row0 + i, col0 + j, factor * v)));
    }

    /// Transposed variant of `add_to`.
    pub fn add_transpose_to(
        &self,
        out: &mut Vec<(usize, usize, f64)>,
        row0: usize,
        col0: usize,
        factor: f64,
    ) {
        out.extend(self.entries.iter().map(|&(i, j, v)| (row0 + j, col0 + i, factor * v)));
    }

    /// MatrixMarket coordinate format, for external inspection.
    pub fn write_matrix_market(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        let merged = self.merged();
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, merged.len())?;
        for (i, j, v) in merged {
            writeln!(out, "{} {} {:e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// LU factorization of a square sparse system.
pub struct SparseLu {
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    n: usize,
}

impl SparseLu {
    pub fn factor(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, LinalgError> {
        let faer_trips: Vec<faer::sparse::Triplet<usize, usize, f64>> = {
            let coo = Coo { nrows: n, ncols: n, entries: triplets.to_vec() };
            coo.merged()
                .into_iter()
                .map(|(i, j, v)| faer::sparse::Triplet::new(i, j, v))
                .collect()
        };
        let mat = faer::sparse::SparseColMat::try_new_from_triplets(n, n, &faer_trips)
            .map_err(|e| LinalgError::Singular(format!("matrix creation failed: {e:?}")))?;
        let lu = mat
            .sp_lu()
            .map_err(|e| LinalgError::Singular(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { lu, n })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        assert_eq!(rhs.len(), self.n);
        let b = faer::Mat::from_fn(self.n, 1, |i, _| rhs[i]);
        let x = self.lu.solve(&b);
        (0..self.n).map(|i| x[(i, 0)]).collect()
    }
}

/// Orthonormal basis of the orthogonal complement of `v`, as columns.
fn complement_basis(v: &DVector<f64>) -> DMatrix<f64> {
    let n = v.len();
    let norm = v.norm();
    assert!(norm > 0.0);
    // Householder reflector mapping v to ||v|| e_sign; its trailing columns
    // span the complement.
    let mut u = v.clone();
    u[0] += norm.copysign(v[0]);
    let uu = u.norm_squared();
    let mut h = DMatrix::identity(n, n);
    for i in 0..n {
        for j in 0..n {
            h[(i, j)] -= 2.0 * u[i] * u[j] / uu;
        }
    }
    h.columns(1, n - 1).into_owned()
}

/// Smallest eigenvalue of the pencil (A, G), both symmetric with G definite
/// on the admissible subspace. When `constraint` is given, the pencil is
/// restricted to the orthogonal complement of that vector.
pub fn min_generalized_eigenvalue(
    a: &DMatrix<f64>,
    g: &DMatrix<f64>,
    constraint: Option<&DVector<f64>>,
) -> Result<f64, LinalgError> {
    let (a_r, g_r) = match constraint {
        Some(v) => {
            let z = complement_basis(v);
            (z.transpose() * a * &z, z.transpose() * g * &z)
        }
        None => (a.clone(), g.clone()),
    };
    let chol = nalgebra::Cholesky::new(g_r)
        .ok_or_else(|| LinalgError::Eigen("norm Gram matrix is not positive definite".into()))?;
    // S = L^-1 A L^-T, symmetric; symmetrize against roundoff.
    let l = chol.l();
    let tmp = l
        .solve_lower_triangular(&a_r)
        .ok_or_else(|| LinalgError::Eigen("triangular solve failed".into()))?;
    let s_t = l
        .solve_lower_triangular(&tmp.transpose())
        .ok_or_else(|| LinalgError::Eigen("triangular solve failed".into()))?;
    let s = (&s_t + s_t.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(s);
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}
