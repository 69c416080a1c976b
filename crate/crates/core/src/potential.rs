//! Chemical energy densities and their convex-concave splits.
//!
//! Both variants expose the split Phi = Phi_plus + Phi_minus with Phi_plus
//! convex and Phi_minus concave. The logarithmic potential is replaced
//! outside [-1+delta, 1-delta] by the second-order Taylor polynomial of its
//! convex part about the joint, which keeps it C^2 with a globally bounded
//! second derivative. The double well can optionally be truncated the same
//! way at |c| = R when a globally Lipschitz first derivative is required.

/// Chemical energy density with convex-concave decomposition.
#[derive(Debug, Clone)]
pub enum Potential {
    /// Phi(c) = 1/4 (1+c)^2 (1-c)^2, split as 1/4(1+c^4) - 1/2 c^2.
    GinzburgLandau {
        /// Optional truncation radius for the convex part (off by default).
        trunc_radius: Option<f64>,
    },
    /// Phi(c) = theta/2 [(1+c)ln((1+c)/2) + (1-c)ln((1-c)/2)]
    ///        + theta_c/2 (1-c^2), truncated at |c| = 1-delta.
    Logarithmic { theta: f64, theta_c: f64, delta: f64 },
}

impl Potential {
    pub fn ginzburg_landau() -> Self {
        Potential::GinzburgLandau { trunc_radius: None }
    }

    pub fn logarithmic(theta: f64, theta_c: f64, delta: f64) -> Self {
        assert!(theta > 0.0 && theta_c > 0.0, "theta and theta_c must be positive");
        assert!(delta > 0.0 && delta < 1.0, "delta must lie in (0,1)");
        Potential::Logarithmic { theta, theta_c, delta }
    }

    pub fn phi(&self, c: f64) -> f64 {
        self.phi_plus(c) + self.phi_minus(c)
    }

    pub fn dphi(&self, c: f64) -> f64 {
        self.dphi_plus(c) + self.dphi_minus(c)
    }

    pub fn phi_plus(&self, c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { trunc_radius } => {
                truncated(c, trunc_radius, |c| 0.25 * (1.0 + c.powi(4)), |c| c.powi(3), |c| 3.0 * c * c)
                    .0
            }
            Potential::Logarithmic { theta, delta, .. } => {
                truncated(c, Some(1.0 - delta), |c| log_plus(theta, c), |c| dlog_plus(theta, c), |c| {
                    d2log_plus(theta, c)
                })
                .0
            }
        }
    }

    pub fn dphi_plus(&self, c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { trunc_radius } => {
                truncated(c, trunc_radius, |c| 0.25 * (1.0 + c.powi(4)), |c| c.powi(3), |c| 3.0 * c * c)
                    .1
            }
            Potential::Logarithmic { theta, delta, .. } => {
                truncated(c, Some(1.0 - delta), |c| log_plus(theta, c), |c| dlog_plus(theta, c), |c| {
                    d2log_plus(theta, c)
                })
                .1
            }
        }
    }

    pub fn d2phi_plus(&self, c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { trunc_radius } => {
                truncated(c, trunc_radius, |c| 0.25 * (1.0 + c.powi(4)), |c| c.powi(3), |c| 3.0 * c * c)
                    .2
            }
            Potential::Logarithmic { theta, delta, .. } => {
                truncated(c, Some(1.0 - delta), |c| log_plus(theta, c), |c| dlog_plus(theta, c), |c| {
                    d2log_plus(theta, c)
                })
                .2
            }
        }
    }

    pub fn phi_minus(&self, c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { .. } => -0.5 * c * c,
            Potential::Logarithmic { theta_c, .. } => 0.5 * theta_c * (1.0 - c * c),
        }
    }

    pub fn dphi_minus(&self, c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { .. } => -c,
            Potential::Logarithmic { theta_c, .. } => -theta_c * c,
        }
    }

    pub fn d2phi_minus(&self, _c: f64) -> f64 {
        match *self {
            Potential::GinzburgLandau { .. } => -1.0,
            Potential::Logarithmic { theta_c, .. } => -theta_c,
        }
    }
}

/// Evaluate (f, f', f'') with the quadratic C^2 extension outside [-r, r].
fn truncated(
    c: f64,
    radius: Option<f64>,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    d2f: impl Fn(f64) -> f64,
) -> (f64, f64, f64) {
    match radius {
        Some(r) if c.abs() > r => {
            let a = r.copysign(c);
            let d = c - a;
            (f(a) + df(a) * d + 0.5 * d2f(a) * d * d, df(a) + d2f(a) * d, d2f(a))
        }
        _ => (f(c), df(c), d2f(c)),
    }
}

fn log_plus(theta: f64, c: f64) -> f64 {
    0.5 * theta * ((1.0 + c) * ((1.0 + c) / 2.0).ln() + (1.0 - c) * ((1.0 - c) / 2.0).ln())
}

fn dlog_plus(theta: f64, c: f64) -> f64 {
    0.5 * theta * (((1.0 + c) / 2.0).ln() - ((1.0 - c) / 2.0).ln())
}

fn d2log_plus(theta: f64, c: f64) -> f64 {
    theta / (1.0 - c * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_default() -> Potential {
        Potential::logarithmic(1.0, 2.0, 0.05)
    }

    #[test]
    fn double_well_values() {
        let p = Potential::ginzburg_landau();
        assert!((p.phi(1.0) - 0.0).abs() <= 1e-15);
        assert!((p.phi(-1.0) - 0.0).abs() <= 1e-15);
        assert!((p.phi(0.0) - 0.25).abs() <= 1e-15);
    }

    #[test]
    fn double_well_split_identity() {
        let p = Potential::ginzburg_landau();
        assert!((p.phi_plus(0.5) - 0.25 * (1.0 + 0.5f64.powi(4))).abs() <= 1e-15);
        assert!((p.phi_minus(0.5) - (-0.125)).abs() <= 1e-15);
        assert!((p.phi_plus(0.5) + p.phi_minus(0.5) - 9.0 / 64.0).abs() <= 1e-15);
    }

    #[test]
    fn logarithmic_value_at_zero() {
        let p = log_default();
        assert!((p.phi(0.0) - (1.0 - 2f64.ln())).abs() <= 1e-12);
    }

    #[test]
    fn split_sums_to_phi_everywhere() {
        for p in [Potential::ginzburg_landau(), log_default()] {
            for k in -300..=300 {
                let c = k as f64 / 100.0;
                assert!((p.phi_plus(c) + p.phi_minus(c) - p.phi(c)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn curvature_signs() {
        for p in [Potential::ginzburg_landau(), log_default()] {
            for k in -300..=300 {
                let c = k as f64 / 100.0;
                assert!(p.d2phi_plus(c) >= 0.0, "convex part at {c}");
                assert!(p.d2phi_minus(c) <= 0.0, "concave part at {c}");
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let h = 1e-5;
        for p in [
            Potential::ginzburg_landau(),
            Potential::GinzburgLandau { trunc_radius: Some(0.8) },
            log_default(),
        ] {
            for _ in 0..100 {
                let c: f64 = rng.random_range(-0.95..0.95);
                let fd_plus = (p.phi_plus(c + h) - p.phi_plus(c - h)) / (2.0 * h);
                let fd_minus = (p.phi_minus(c + h) - p.phi_minus(c - h)) / (2.0 * h);
                assert!((p.dphi_plus(c) - fd_plus).abs() <= 1e-6, "plus at {c}");
                assert!((p.dphi_minus(c) - fd_minus).abs() <= 1e-6, "minus at {c}");
            }
        }
    }

    #[test]
    fn convex_derivative_is_monotone() {
        for p in [Potential::ginzburg_landau(), log_default()] {
            let mut prev = f64::NEG_INFINITY;
            let mut c = -3.0;
            while c <= 3.0 {
                let d = p.dphi_plus(c);
                assert!(d >= prev - 1e-12, "dphi_plus decreases at {c}");
                prev = d;
                c += 1e-3;
            }
        }
    }

    #[test]
    fn concave_second_and_third_derivatives_bounded() {
        // Phi_minus is quadratic for both variants, so the second derivative
        // is constant and the third vanishes.
        for p in [Potential::ginzburg_landau(), log_default()] {
            let d2_left = p.d2phi_minus(-3.0);
            for k in -30..=30 {
                let c = k as f64 / 10.0;
                assert!((p.d2phi_minus(c) - d2_left).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn truncation_joints_are_c2() {
        let p = log_default();
        let joint = 0.95;
        for sign in [-1.0, 1.0] {
            let a = sign * joint;
            let eps = 1e-12;
            let inner = a - sign * eps;
            let outer = a + sign * eps;
            assert!((p.phi_plus(inner) - p.phi_plus(outer)).abs() <= 1e-10);
            assert!((p.dphi_plus(inner) - p.dphi_plus(outer)).abs() <= 1e-10);
            assert!((p.d2phi_plus(inner) - p.d2phi_plus(outer)).abs() <= 1e-8);
        }
        // Finite everywhere, including far outside the physical range.
        assert!(p.phi(5.0).is_finite() && p.dphi(5.0).is_finite());
    }
}
