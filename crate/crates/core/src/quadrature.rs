//! Quadrature rules on the reference triangle and the reference edge.
//!
//! Volume rules are conical products of a Gauss-Legendre rule with a
//! Gauss-Jacobi(1,0) rule, so any requested polynomial exactness degree is
//! available with positive weights. Edge rules are plain Gauss-Legendre on
//! the unit interval.

use nalgebra::{DMatrix, SymmetricEigen};

/// Quadrature rule on the reference triangle (0,0)-(1,0)-(0,1).
///
/// Points are stored in barycentric coordinates; weights sum to the
/// reference area 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Smallest conical product rule exact for total degree `degree`.
    pub fn with_degree(degree: usize) -> Self {
        let m = degree / 2 + 1;
        let (gx, gw) = gauss_legendre_01(m);
        let (jx, jw) = gauss_jacobi10_01(m);
        let mut points = Vec::with_capacity(m * m);
        let mut weights = Vec::with_capacity(m * m);
        for (y, wy) in jx.iter().zip(&jw) {
            for (x, wx) in gx.iter().zip(&gw) {
                let xi = (1.0 - y) * x;
                let eta = *y;
                points.push([1.0 - xi - eta, xi, eta]);
                weights.push(wx * wy);
            }
        }
        Self { points, weights, degree }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Point in reference coordinates (xi, eta).
    pub fn ref_point(&self, k: usize) -> [f64; 2] {
        [self.points[k][1], self.points[k][2]]
    }
}

/// Gauss-Legendre rule on the reference edge [0,1]; weights sum to 1.
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl EdgeRule {
    pub fn with_degree(degree: usize) -> Self {
        let m = degree / 2 + 1;
        let (points, weights) = gauss_legendre_01(m);
        Self { points, weights, degree }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
}

/// Nodes and weights of the m-point Gauss rule for the weight function `w`
/// on [-1,1], from the symmetric tridiagonal Jacobi matrix (Golub-Welsch).
fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> (Vec<f64>, Vec<f64>) {
    let m = diag.len();
    let mut jacobi = DMatrix::zeros(m, m);
    for i in 0..m {
        jacobi[(i, i)] = diag[i];
    }
    for i in 0..m - 1 {
        jacobi[(i, i + 1)] = offdiag[i];
        jacobi[(i + 1, i)] = offdiag[i];
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..m)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// m-point Gauss-Legendre rule on [0,1] (unit weight; weights sum to 1).
pub fn gauss_legendre_01(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let diag = vec![0.0; m];
    let offdiag: Vec<f64> = (1..m)
        .map(|k| {
            let k = k as f64;
            k / ((2.0 * k - 1.0) * (2.0 * k + 1.0)).sqrt()
        })
        .collect();
    let (t, w) = golub_welsch(&diag, &offdiag, 2.0);
    (
        t.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|w| 0.5 * w).collect(),
    )
}

/// m-point Gauss-Jacobi rule for the weight (1-y) on [0,1].
fn gauss_jacobi10_01(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let diag: Vec<f64> = (0..m)
        .map(|k| {
            let k = k as f64;
            -1.0 / ((2.0 * k + 1.0) * (2.0 * k + 3.0))
        })
        .collect();
    let offdiag: Vec<f64> = (1..m)
        .map(|k| {
            let k = k as f64;
            (k * (k + 1.0)).sqrt() / (2.0 * k + 1.0)
        })
        .collect();
    let (t, w) = golub_welsch(&diag, &offdiag, 2.0);
    (
        t.iter().map(|t| 0.5 * (t + 1.0)).collect(),
        w.iter().map(|w| 0.25 * w).collect(),
    )
}

/// Exact integral of xi^a eta^b over the reference triangle.
pub fn ref_monomial_integral(a: u32, b: u32) -> f64 {
    // a! b! / (a+b+2)!
    let mut value = 1.0;
    for k in 1..=a {
        value *= k as f64;
    }
    for k in 1..=b {
        value *= k as f64;
    }
    for k in 1..=(a + b + 2) {
        value /= k as f64;
    }
    value
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_rule_integrates_monomials() {
        for degree in [1, 3, 4, 6, 7, 9, 12] {
            let rule = TriangleRule::with_degree(degree);
            for a in 0..=degree as u32 {
                for b in 0..=(degree as u32 - a) {
                    let approx: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[1].powi(a as i32) * p[2].powi(b as i32))
                        .sum();
                    let exact = ref_monomial_integral(a, b);
                    assert!(
                        (approx - exact).abs() <= 1e-13 * exact.abs().max(1.0),
                        "degree {degree}, monomial ({a},{b}): {approx} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_weights_positive_and_sum_to_area() {
        for degree in [1, 4, 9] {
            let rule = TriangleRule::with_degree(degree);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() <= 1e-14);
        }
    }

    #[test]
    fn edge_rule_integrates_monomials() {
        for degree in [1, 4, 7, 10] {
            let rule = EdgeRule::with_degree(degree);
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for k in 0..=degree as u32 {
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(s, w)| w * s.powi(k as i32))
                    .sum();
                let exact = 1.0 / (k as f64 + 1.0);
                assert!((approx - exact).abs() <= 1e-13, "degree {degree}, s^{k}");
            }
        }
    }
}
