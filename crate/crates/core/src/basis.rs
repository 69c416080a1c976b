//! Modal basis on the reference triangle.
//!
//! Monomials are orthonormalized against the exact reference L2 inner
//! product, so element mass matrices become the identity after the
//! per-element 1/sqrt(2|E|) scaling applied by the spaces.

use nalgebra::DMatrix;

use crate::quadrature::ref_monomial_integral;

/// Orthonormal polynomial basis of total degree <= `degree` on the
/// reference triangle.
#[derive(Debug, Clone)]
pub struct ReferenceBasis {
    pub degree: usize,
    pub ndof: usize,
    /// Monomial exponents (a, b) for xi^a eta^b, graded lexicographic.
    exponents: Vec<(u32, u32)>,
    /// Row i holds the monomial coefficients of basis function i.
    coeffs: DMatrix<f64>,
}

impl ReferenceBasis {
    pub fn new(degree: usize) -> Self {
        let mut exponents = Vec::new();
        for total in 0..=degree as u32 {
            for b in 0..=total {
                exponents.push((total - b, b));
            }
        }
        let ndof = exponents.len();
        let mut gram = DMatrix::zeros(ndof, ndof);
        for i in 0..ndof {
            for j in 0..ndof {
                let (ai, bi) = exponents[i];
                let (aj, bj) = exponents[j];
                gram[(i, j)] = ref_monomial_integral(ai + aj, bi + bj);
            }
        }
        let chol = nalgebra::Cholesky::new(gram).expect("monomial Gram matrix is SPD");
        let coeffs = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(ndof, ndof))
            .expect("triangular solve");
        Self { degree, ndof, exponents, coeffs }
    }

    /// Values of all basis functions at a reference point.
    pub fn eval(&self, xi: f64, eta: f64) -> Vec<f64> {
        let monos = self.monomials(xi, eta);
        (0..self.ndof)
            .map(|i| (0..self.ndof).map(|m| self.coeffs[(i, m)] * monos[m]).sum())
            .collect()
    }

    /// Reference gradients (d/dxi, d/deta) of all basis functions.
    pub fn eval_grad(&self, xi: f64, eta: f64) -> Vec<[f64; 2]> {
        let (dx, dy) = self.monomial_grads(xi, eta);
        (0..self.ndof)
            .map(|i| {
                let mut g = [0.0; 2];
                for m in 0..self.ndof {
                    g[0] += self.coeffs[(i, m)] * dx[m];
                    g[1] += self.coeffs[(i, m)] * dy[m];
                }
                g
            })
            .collect()
    }

    /// Value table at a list of reference points, one row per point.
    pub fn tabulate(&self, points: &[[f64; 2]]) -> DMatrix<f64> {
        let mut table = DMatrix::zeros(points.len(), self.ndof);
        for (k, p) in points.iter().enumerate() {
            for (i, v) in self.eval(p[0], p[1]).into_iter().enumerate() {
                table[(k, i)] = v;
            }
        }
        table
    }

    /// Gradient tables (d/dxi and d/deta) at a list of reference points.
    pub fn tabulate_grad(&self, points: &[[f64; 2]]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut gx = DMatrix::zeros(points.len(), self.ndof);
        let mut gy = DMatrix::zeros(points.len(), self.ndof);
        for (k, p) in points.iter().enumerate() {
            for (i, g) in self.eval_grad(p[0], p[1]).into_iter().enumerate() {
                gx[(k, i)] = g[0];
                gy[(k, i)] = g[1];
            }
        }
        (gx, gy)
    }

    /// Monomial coefficients of basis function i (exponent order as
    /// `exponents`). Used by tests that re-expand fields independently.
    pub fn monomial_coefficients(&self, i: usize) -> Vec<(u32, u32, f64)> {
        (0..self.ndof)
            .map(|m| {
                let (a, b) = self.exponents[m];
                (a, b, self.coeffs[(i, m)])
            })
            .collect()
    }

    fn monomials(&self, xi: f64, eta: f64) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|&(a, b)| xi.powi(a as i32) * eta.powi(b as i32))
            .collect()
    }

    fn monomial_grads(&self, xi: f64, eta: f64) -> (Vec<f64>, Vec<f64>) {
        let dx = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                if a == 0 {
                    0.0
                } else {
                    a as f64 * xi.powi(a as i32 - 1) * eta.powi(b as i32)
                }
            })
            .collect();
        let dy = self
            .exponents
            .iter()
            .map(|&(a, b)| {
                if b == 0 {
                    0.0
                } else {
                    b as f64 * xi.powi(a as i32) * eta.powi(b as i32 - 1)
                }
            })
            .collect();
        (dx, dy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::TriangleRule;

    #[test]
    fn basis_is_orthonormal_under_quadrature() {
        for degree in 0..=3 {
            let basis = ReferenceBasis::new(degree);
            let rule = TriangleRule::with_degree(2 * degree.max(1));
            let points: Vec<[f64; 2]> = (0..rule.len()).map(|k| rule.ref_point(k)).collect();
            let table = basis.tabulate(&points);
            for i in 0..basis.ndof {
                for j in 0..basis.ndof {
                    let ip: f64 = (0..rule.len())
                        .map(|k| rule.weights[k] * table[(k, i)] * table[(k, j)])
                        .sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - expected).abs() <= 1e-13, "deg {degree} ({i},{j}): {ip}");
                }
            }
        }
    }

    #[test]
    fn vandermonde_on_distinct_points_is_invertible() {
        // The basis spans P_q exactly iff its Vandermonde on ndof generic
        // points is invertible.
        for degree in 1..=3 {
            let basis = ReferenceBasis::new(degree);
            // Principal lattice of order `degree`: exactly ndof points and
            // unisolvent for P_degree.
            let mut points = Vec::new();
            for i in 0..=degree {
                for j in 0..=(degree - i) {
                    points.push([
                        i as f64 / degree as f64 * 0.95 + 0.01,
                        j as f64 / degree as f64 * 0.95 + 0.01,
                    ]);
                }
            }
            assert_eq!(points.len(), basis.ndof);
            let v = basis.tabulate(&points);
            assert!(v.lu().is_invertible(), "degree {degree}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let basis = ReferenceBasis::new(3);
        let h = 1e-6;
        for &(xi, eta) in &[(0.2, 0.3), (0.1, 0.05), (0.4, 0.55)] {
            let grads = basis.eval_grad(xi, eta);
            let fx1 = basis.eval(xi + h, eta);
            let fx0 = basis.eval(xi - h, eta);
            let fy1 = basis.eval(xi, eta + h);
            let fy0 = basis.eval(xi, eta - h);
            for i in 0..basis.ndof {
                assert!((grads[i][0] - (fx1[i] - fx0[i]) / (2.0 * h)).abs() < 1e-7);
                assert!((grads[i][1] - (fy1[i] - fy0[i]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }
}
