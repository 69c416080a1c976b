//! DG norms, discrete energy, mass functionals, and numerical probes for
//! the coercivity and inf-sup constants.

use nalgebra::DVector;

use crate::forms::{basis_integrals, eval_a_d, StaticForms};
use crate::linalg::{min_generalized_eigenvalue, Coo, LinalgError};
use crate::potential::Potential;
use crate::space::{ScalarField, VectorField};

/// Discrete energy split into its three contributions.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    pub kinetic: f64,
    pub chemical: f64,
    pub interfacial: f64,
    pub total: f64,
}

/// Scalar DG seminorm: element gradients plus sigma/h_e-weighted interior
/// jumps. Vanishes exactly on constants.
pub fn dg_norm_scalar(f: &ScalarField, sigma: f64) -> f64 {
    let space = &f.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume;
    let face_rule = &space.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let g = f.eval_grad(k, xi, eta);
            acc += rule.weights[q] * det * (g[0] * g[0] + g[1] * g[1]);
        }
    }
    for (fi, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let (jump, _) = f.jump_average(fi, face_rule.points[q]);
            acc += face_rule.weights[q] * face.h_e * sigma / face.h_e * jump * jump;
        }
    }
    acc.sqrt()
}

/// Vector DG norm: boundary jumps included, so this is a norm on the whole
/// velocity space.
pub fn dg_norm_velocity(v: &VectorField, sigma: f64) -> f64 {
    let vsp = &v.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume;
    let face_rule = &vsp.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let g = v.eval_grad(k, xi, eta);
            for comp in 0..2 {
                acc += rule.weights[q] * det * (g[comp][0] * g[comp][0] + g[comp][1] * g[comp][1]);
            }
        }
    }
    for fi in 0..mesh.interior_faces.len() {
        for q in 0..face_rule.len() {
            let (jump, _) = v.jump_average(fi, face_rule.points[q]);
            acc += face_rule.weights[q] * sigma * (jump[0] * jump[0] + jump[1] * jump[1]);
        }
    }
    for face in &mesh.boundary_faces {
        for q in 0..face_rule.len() {
            let t = v.trace(face.side, face.vertices, face_rule.points[q]);
            acc += face_rule.weights[q] * sigma * (t[0] * t[0] + t[1] * t[1]);
        }
    }
    acc.sqrt()
}

/// L2 norm of a vector field.
pub fn l2_norm_velocity(v: &VectorField) -> f64 {
    let vsp = &v.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let val = v.eval(k, xi, eta);
            acc += rule.weights[q] * det * (val[0] * val[0] + val[1] * val[1]);
        }
    }
    acc.sqrt()
}

/// Total amount of the order parameter, (c, 1).
pub fn total_mass(c: &ScalarField) -> f64 {
    crate::projections::integral(c)
}

/// Discrete energy; the chemical part uses the elevated rule shared with
/// the stepper's potential terms, the quadratic parts go through the
/// assembled operators.
pub fn discrete_energy(
    c: &ScalarField,
    v: &VectorField,
    forms: &StaticForms,
    potential: &Potential,
    kappa: f64,
) -> EnergyReport {
    let kinetic = 0.5 * forms.mass_velocity.pairing(&v.coeffs, &v.coeffs);
    let interfacial = 0.5 * kappa * forms.a_d.pairing(&c.coeffs, &c.coeffs);
    let chemical = integrate_potential(c, potential);
    EnergyReport { kinetic, chemical, interfacial, total: kinetic + chemical + interfacial }
}

/// (Phi(c), 1) with the elevated volume rule.
pub fn integrate_potential(c: &ScalarField, potential: &Potential) -> f64 {
    let space = &c.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume_elevated;
    let ndof = space.ndof_element();
    let parts = crate::parallel::map_indices(mesh.n_elements(), |k| {
        let det = mesh.geometry[k].det_jac;
        let scale = space.scale(k);
        let dofs = &c.coeffs[space.element_dofs(k)];
        let mut acc = 0.0;
        for q in 0..rule.len() {
            let cval: f64 = (0..ndof).map(|i| dofs[i] * space.elev_psi[(q, i)]).sum::<f64>() * scale;
            acc += rule.weights[q] * det * potential.phi(cval);
        }
        acc
    });
    parts.into_iter().sum()
}

/// Slow recomputation of the full energy by pointwise quadrature, as an
/// independent check of `discrete_energy`.
pub fn discrete_energy_direct(
    c: &ScalarField,
    v: &VectorField,
    potential: &Potential,
    kappa: f64,
    sigma: f64,
) -> EnergyReport {
    let mesh = &c.space.mesh;
    let rule = &c.space.rules.volume_elevated;
    let mut kinetic = 0.0;
    let mut chemical = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let w = rule.weights[q] * det;
            let vv = v.eval(k, xi, eta);
            kinetic += 0.5 * w * (vv[0] * vv[0] + vv[1] * vv[1]);
            chemical += w * potential.phi(c.eval(k, xi, eta));
        }
    }
    let interfacial = 0.5 * kappa * eval_a_d(c, c, sigma);
    EnergyReport { kinetic, chemical, interfacial, total: kinetic + chemical + interfacial }
}

/// Measured coercivity constant: smallest generalized eigenvalue of the
/// operator against the norm Gram matrix, optionally restricted to the
/// complement of a kernel direction (the constants, for scalar fields).
pub fn estimate_coercivity(
    op: &Coo,
    gram: &Coo,
    constraint: Option<&[f64]>,
) -> Result<f64, LinalgError> {
    let a = op.to_dense();
    let a = (&a + a.transpose()) * 0.5;
    let g = gram.to_dense();
    let g = (&g + g.transpose()) * 0.5;
    let c = constraint.map(|v| DVector::from_column_slice(v));
    min_generalized_eigenvalue(&a, &g, c.as_ref())
}

/// Measured inf-sup constant of the pressure form: the smallest singular
/// value of B scaled by the velocity DG norm and the pressure L2 norm,
/// restricted to zero-mean pressures.
pub fn estimate_inf_sup(
    b_p: &Coo,
    gram_velocity: &Coo,
    mass_pressure: &Coo,
    pressure_means: &[f64],
) -> Result<f64, LinalgError> {
    let b = b_p.to_dense();
    let g = gram_velocity.to_dense();
    let g = (&g + g.transpose()) * 0.5;
    let chol = nalgebra::Cholesky::new(g)
        .ok_or_else(|| LinalgError::Eigen("velocity Gram is not positive definite".into()))?;
    // K = B G^-1 B^T via a triangular solve against B^T.
    let bt = b.transpose();
    let ginv_bt = chol.solve(&bt);
    let k = &b * ginv_bt;
    let k = (&k + k.transpose()) * 0.5;
    let m = mass_pressure.to_dense();
    let m = (&m + m.transpose()) * 0.5;
    let means = DVector::from_column_slice(pressure_means);
    let lambda = min_generalized_eigenvalue(&k, &m, Some(&means))?;
    Ok(lambda.max(0.0).sqrt())
}

/// Per-element mass balance residuals of one accepted time step.
///
/// For every element with no boundary face, the rate of change of the
/// element mass must equal the diffusive flux minus the advective flux
/// through the element boundary, up to the penalty contribution (the
/// "artificial mass"). Boundary-adjacent elements report `None`.
pub fn elementwise_mass_balance(
    c_new: &ScalarField,
    c_old: &ScalarField,
    c_lagged: &ScalarField,
    mu: &ScalarField,
    v: &VectorField,
    sigma: f64,
    tau: f64,
) -> Vec<Option<f64>> {
    let space = &c_new.space;
    let mesh = &space.mesh;
    let means = basis_integrals(space);
    let face_rule = &space.rules.face;

    let mut interior = vec![true; mesh.n_elements()];
    for face in &mesh.boundary_faces {
        interior[face.side.element] = false;
    }

    // Rate of change of element mass.
    let ndof = space.ndof_element();
    let mut residual: Vec<f64> = (0..mesh.n_elements())
        .map(|k| {
            space
                .element_dofs(k)
                .map(|dof| (c_new.coeffs[dof] - c_old.coeffs[dof]) * means[dof])
                .sum::<f64>()
                / tau
        })
        .collect();
    let _ = ndof;

    // Face fluxes, accumulated with the sign of the element-outward normal.
    for (fi, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let gm = {
                let g = mu_grad_side(mu, face.minus, face.vertices, s);
                g[0] * face.normal[0] + g[1] * face.normal[1]
            };
            let gp = {
                let g = mu_grad_side(mu, face.plus, face.vertices, s);
                g[0] * face.normal[0] + g[1] * face.normal[1]
            };
            let diff_flux = 0.5 * (gm + gp);
            let (_, cavg) = c_lagged.jump_average(fi, s);
            let (_, vavg) = v.jump_average(fi, s);
            let adv_flux = cavg * (vavg[0] * face.normal[0] + vavg[1] * face.normal[1]);
            let (jmu, _) = mu.jump_average(fi, s);
            let penalty = sigma / face.h_e * jmu;
            // Signed for the minus element; flip for the plus element.
            let balance = -diff_flux + adv_flux + penalty;
            residual[face.minus.element] += w * balance;
            residual[face.plus.element] -= w * balance;
        }
    }

    residual
        .into_iter()
        .enumerate()
        .map(|(k, r)| if interior[k] { Some(r) } else { None })
        .collect()
}

fn mu_grad_side(
    mu: &ScalarField,
    side: crate::mesh::FaceSide,
    verts: [usize; 2],
    s: f64,
) -> [f64; 2] {
    let forward = mu.space.mesh.side_runs_forward(side, verts);
    let t = if forward { s } else { 1.0 - s };
    let p = crate::mesh::Mesh::edge_ref_point(side.local_edge, t);
    mu.eval_grad(side.element, p[0], p[1])
}
