//! Elliptic projection for scalar initial data and mean utilities.
//!
//! The projection matches the diffusion-form action of the target and its
//! mean; the mean constraint is imposed through a single bordered Lagrange
//! multiplier so the diffusion matrix itself stays untouched.

use std::sync::Arc;

use thiserror::Error;

use crate::forms::{assemble_a_d, basis_integrals};
use crate::linalg::{Coo, LinalgError, SparseLu};
use crate::space::{DgScalarSpace, ScalarField};

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("projection system is singular (penalty too small or broken mesh): {0}")]
    Singular(#[from] LinalgError),
}

pub struct EllipticProjector {
    space: Arc<DgScalarSpace>,
    a_d: Coo,
    lu: SparseLu,
    means: Vec<f64>,
}

impl EllipticProjector {
    pub fn new(space: &Arc<DgScalarSpace>, sigma: f64) -> Result<Self, ProjectionError> {
        let a_d = assemble_a_d(space, sigma);
        let means = basis_integrals(space);
        let n = space.total_dofs();
        let mut triplets = Vec::with_capacity(a_d.entries.len() + 2 * n);
        a_d.add_to(&mut triplets, 0, 0, 1.0);
        for (i, &m) in means.iter().enumerate() {
            triplets.push((i, n, m));
            triplets.push((n, i, m));
        }
        let lu = SparseLu::factor(n + 1, &triplets)?;
        Ok(Self { space: space.clone(), a_d, lu, means })
    }

    /// Project an analytic function given together with its gradient.
    pub fn project_function(
        &self,
        f: impl Fn([f64; 2]) -> f64 + Sync,
        grad_f: impl Fn([f64; 2]) -> [f64; 2] + Sync,
    ) -> ScalarField {
        let space = &self.space;
        let mesh = &space.mesh;
        let ndof = space.ndof_element();
        let rule = &space.rules.volume_elevated;
        // The mean constraint transfers the target's integral onto the
        // projection verbatim, so it gets a much sharper rule than the
        // residual terms; smooth data then keeps its mean to roundoff.
        let mean_rule = crate::quadrature::TriangleRule::with_degree(21);
        let n = space.total_dofs();
        let mut rhs = vec![0.0; n + 1];

        // Volume part of a_D(f, phi_i): gradients against basis gradients.
        let blocks = crate::parallel::map_indices(mesh.n_elements(), |k| {
            let geo = &mesh.geometry[k];
            let scale = space.scale(k);
            let it = &geo.inv_jac_t;
            let mut local = vec![0.0; ndof];
            for q in 0..rule.len() {
                let p = rule.ref_point(q);
                let x = mesh.map_to_physical(k, p[0], p[1]);
                let g = grad_f(x);
                let w = rule.weights[q] * geo.det_jac;
                for i in 0..ndof {
                    let gx = space.elev_dpsi_xi[(q, i)];
                    let gy = space.elev_dpsi_eta[(q, i)];
                    let pg = [
                        (it[0][0] * gx + it[0][1] * gy) * scale,
                        (it[1][0] * gx + it[1][1] * gy) * scale,
                    ];
                    local[i] += w * (g[0] * pg[0] + g[1] * pg[1]);
                }
            }
            let mut mean = 0.0;
            for q in 0..mean_rule.len() {
                let p = mean_rule.ref_point(q);
                let x = mesh.map_to_physical(k, p[0], p[1]);
                mean += mean_rule.weights[q] * geo.det_jac * f(x);
            }
            (local, mean)
        });
        let mut total_mean = 0.0;
        for (k, (local, mean)) in blocks.into_iter().enumerate() {
            rhs[space.element_dofs(k)].copy_from_slice(&local);
            total_mean += mean;
        }

        // Face part: a smooth target has no jumps, so only the consistency
        // term with the basis jump survives: -int {grad f . n} [phi_i].
        let face_rule = &space.rules.face_elevated;
        for face in &mesh.interior_faces {
            for (side, sign) in [(face.minus, 1.0), (face.plus, -1.0)] {
                let forward = mesh.side_runs_forward(side, face.vertices);
                let dir = usize::from(!forward);
                let tab = &space.face_tab_elevated.psi[side.local_edge][dir];
                let scale = space.scale(side.element);
                let dofs = space.element_dofs(side.element);
                for q in 0..face_rule.len() {
                    let s = face_rule.points[q];
                    let t = if forward { s } else { 1.0 - s };
                    let p = crate::mesh::Mesh::edge_ref_point(side.local_edge, t);
                    let x = mesh.map_to_physical(side.element, p[0], p[1]);
                    let g = grad_f(x);
                    let gn = g[0] * face.normal[0] + g[1] * face.normal[1];
                    let w = face_rule.weights[q] * face.h_e;
                    for (i, dof) in dofs.clone().enumerate() {
                        rhs[dof] -= w * gn * sign * tab[(q, i)] * scale;
                    }
                }
            }
        }

        rhs[n] = total_mean;
        let solution = self.lu.solve(&rhs);
        ScalarField::new(space.clone(), solution[..n].to_vec())
    }

    /// Project a field that already lives in a discrete space on the same
    /// mesh (identity when the space matches).
    pub fn project_field(&self, f: &ScalarField) -> ScalarField {
        let n = self.space.total_dofs();
        let mut rhs = vec![0.0; n + 1];
        self.a_d.matvec_add(&f.coeffs, &mut rhs[..n], 1.0);
        rhs[n] = f.coeffs.iter().zip(&self.means).map(|(c, m)| c * m).sum();
        let solution = self.lu.solve(&rhs);
        ScalarField::new(self.space.clone(), solution[..n].to_vec())
    }
}

/// Mean value of a field over the mesh (not divided by the area).
pub fn integral(f: &ScalarField) -> f64 {
    let means = basis_integrals(&f.space);
    f.coeffs.iter().zip(&means).map(|(c, m)| c * m).sum()
}

/// Subtract the mean so the result integrates to zero.
pub fn remove_mean(f: &ScalarField) -> ScalarField {
    let means = basis_integrals(&f.space);
    let area = f.space.mesh.area();
    let mean: f64 = f.coeffs.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>() / area;
    // The coefficient vector of the constant 1 is exactly the means vector
    // for an orthonormal basis.
    let coeffs = f
        .coeffs
        .iter()
        .zip(&means)
        .map(|(c, m)| c - mean * m)
        .collect();
    ScalarField::new(f.space.clone(), coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::default_sigma;
    use crate::mesh::Mesh;
    use crate::space::{l2_project, DgScalarSpace, RuleSet};

    fn space(n: usize, q: usize) -> Arc<DgScalarSpace> {
        DgScalarSpace::new(Mesh::structured_unit_square(n), q, RuleSet::for_degree(q))
    }

    #[test]
    fn reproduces_space_members() {
        let sp = space(2, 2);
        let proj = EllipticProjector::new(&sp, default_sigma(2)).unwrap();
        let f = l2_project(&sp, |x| x[0] * x[0] - 0.3 * x[1] + 0.1).unwrap();
        let pf = proj.project_field(&f);
        for (a, b) in pf.coeffs.iter().zip(&f.coeffs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mean_is_preserved() {
        let sp = space(4, 1);
        let proj = EllipticProjector::new(&sp, default_sigma(1)).unwrap();
        let pi = std::f64::consts::PI;
        let f = proj.project_function(
            |x| (pi * x[0]).cos() * (pi * x[1]).cos() + 0.25,
            |x| {
                [
                    -pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
                    -pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
                ]
            },
        );
        // The analytic mean of the target over the unit square is 0.25.
        assert!((integral(&f) - 0.25).abs() <= 1e-12, "mean {}", integral(&f));
    }

    #[test]
    fn dg_error_decays_first_order_for_p1() {
        let pi = std::f64::consts::PI;
        let exact = move |x: [f64; 2]| (pi * x[0]).cos() * (pi * x[1]).cos();
        let grad = move |x: [f64; 2]| {
            [
                -pi * (pi * x[0]).sin() * (pi * x[1]).cos(),
                -pi * (pi * x[0]).cos() * (pi * x[1]).sin(),
            ]
        };
        let mut errors = Vec::new();
        for n in [4, 8, 16] {
            let sp = space(n, 1);
            let proj = EllipticProjector::new(&sp, default_sigma(1)).unwrap();
            let ph = proj.project_function(exact, grad);
            // DG-seminorm error via elevated quadrature; the target is
            // smooth so only the basis side carries jumps.
            let mut err2 = 0.0;
            let rule = &sp.rules.volume_elevated;
            for k in 0..sp.mesh.n_elements() {
                let det = sp.mesh.geometry[k].det_jac;
                for q in 0..rule.len() {
                    let p = rule.ref_point(q);
                    let x = sp.mesh.map_to_physical(k, p[0], p[1]);
                    let gh = ph.eval_grad(k, p[0], p[1]);
                    let ge = grad(x);
                    err2 += rule.weights[q]
                        * det
                        * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
                }
            }
            let face_rule = &sp.rules.face_elevated;
            let sigma = default_sigma(1);
            for (f, face) in sp.mesh.interior_faces.iter().enumerate() {
                for q in 0..face_rule.len() {
                    let s = face_rule.points[q];
                    let (jump, _) = ph.jump_average(f, s);
                    err2 += face_rule.weights[q] * face.h_e * sigma / face.h_e * jump * jump;
                }
            }
            errors.push(err2.sqrt());
        }
        let rate1 = (errors[0] / errors[1]).log2();
        let rate2 = (errors[1] / errors[2]).log2();
        assert!((rate1 - 1.0).abs() <= 0.2, "rate {rate1}");
        assert!((rate2 - 1.0).abs() <= 0.2, "rate {rate2}");
    }

    #[test]
    fn remove_mean_of_constant_is_zero() {
        let sp = space(2, 1);
        let f = l2_project(&sp, |_| 5.0).unwrap();
        let g = remove_mean(&f);
        assert!(g.coeffs.iter().all(|c| c.abs() <= 1e-12));
    }

    #[test]
    fn remove_mean_is_idempotent() {
        let sp = space(2, 2);
        let f = l2_project(&sp, |x| x[0] * x[1] - 0.7).unwrap();
        let g = remove_mean(&f);
        assert!(integral(&g).abs() <= 1e-13);
        let h = remove_mean(&g);
        for (a, b) in g.coeffs.iter().zip(&h.coeffs) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn remove_mean_of_x_is_x_minus_half() {
        let sp = space(2, 1);
        let f = l2_project(&sp, |x| x[0]).unwrap();
        let g = remove_mean(&f);
        for k in 0..sp.mesh.n_elements() {
            let x = sp.mesh.map_to_physical(k, 0.25, 0.25);
            assert!((g.eval(k, 0.25, 0.25) - (x[0] - 0.5)).abs() <= 1e-12);
        }
    }

    #[test]
    fn projection_commutes_with_constant_shift() {
        let sp = space(2, 1);
        let proj = EllipticProjector::new(&sp, default_sigma(1)).unwrap();
        let base = proj.project_function(|x| x[0] * x[1], |x| [x[1], x[0]]);
        let shifted = proj.project_function(|x| x[0] * x[1] + 3.0, |x| [x[1], x[0]]);
        let one = l2_project(&sp, |_| 1.0).unwrap();
        for i in 0..base.coeffs.len() {
            assert!((shifted.coeffs[i] - base.coeffs[i] - 3.0 * one.coeffs[i]).abs() <= 1e-11);
        }
    }
}
