//! Reproducible initial conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded smooth random field built from a truncated cosine series, plus its
/// gradient. Every mode has vanishing normal derivative on the boundary of
/// the unit square, so the field is compatible with the natural boundary
/// conditions; the (0,0) mode is skipped to keep the mean at zero.
pub fn smooth_cosine_field(
    seed: u64,
    amplitude: f64,
    modes: usize,
) -> (
    impl Fn([f64; 2]) -> f64 + Sync + Clone,
    impl Fn([f64; 2]) -> [f64; 2] + Sync + Clone,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coeffs = Vec::new();
    for k in 0..=modes {
        for l in 0..=modes {
            if k == 0 && l == 0 {
                continue;
            }
            coeffs.push((k as f64, l as f64, amplitude * rng.random_range(-1.0..1.0)));
        }
    }
    let pi = std::f64::consts::PI;
    let c2 = coeffs.clone();
    let value = move |x: [f64; 2]| {
        coeffs
            .iter()
            .map(|&(k, l, a)| a * (k * pi * x[0]).cos() * (l * pi * x[1]).cos())
            .sum::<f64>()
    };
    let grad = move |x: [f64; 2]| {
        let mut g = [0.0; 2];
        for &(k, l, a) in &c2 {
            g[0] -= a * k * pi * (k * pi * x[0]).sin() * (l * pi * x[1]).cos();
            g[1] -= a * l * pi * (k * pi * x[0]).cos() * (l * pi * x[1]).sin();
        }
        g
    };
    (value, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_equal_seeds() {
        let (f1, _) = smooth_cosine_field(42, 0.01, 4);
        let (f2, _) = smooth_cosine_field(42, 0.01, 4);
        let (f3, _) = smooth_cosine_field(43, 0.01, 4);
        let p = [0.37, 0.81];
        assert_eq!(f1(p), f2(p));
        assert!(f1(p) != f3(p));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (f, g) = smooth_cosine_field(7, 0.5, 3);
        let h = 1e-6;
        for &p in &[[0.3, 0.4], [0.9, 0.1]] {
            let gr = g(p);
            let fx = (f([p[0] + h, p[1]]) - f([p[0] - h, p[1]])) / (2.0 * h);
            let fy = (f([p[0], p[1] + h]) - f([p[0], p[1] - h])) / (2.0 * h);
            assert!((gr[0] - fx).abs() <= 1e-6);
            assert!((gr[1] - fy).abs() <= 1e-6);
        }
    }

    #[test]
    fn normal_derivative_vanishes_on_boundary() {
        let (_, g) = smooth_cosine_field(5, 1.0, 4);
        for t in [0.0, 0.3, 0.77, 1.0] {
            assert!(g([0.0, t])[0].abs() <= 1e-12);
            assert!(g([1.0, t])[0].abs() <= 1e-12);
            assert!(g([t, 0.0])[1].abs() <= 1e-12);
            assert!(g([t, 1.0])[1].abs() <= 1e-12);
        }
    }
}
