//! Assembly and direct evaluation of the DG forms.
//!
//! Six forms drive the scheme: the advection form (order parameter times
//! velocity against a scalar test function), the upwinded convection form,
//! the scalar and vector interior penalty diffusion forms, the pressure
//! form, and the interface form. The interface form is the advection form
//! with its second and third arguments exchanged, so its matrix is exactly
//! the transpose of the advection matrix and the two share assembly.
//!
//! Base quadrature is exact for every pairing of discrete fields that
//! appears here, which is what makes the discrete conservation and
//! dissipation identities hold to solver tolerance. Each form also has a
//! direct evaluator that bypasses the assembled matrices; tests use those
//! as an independent route.

use std::sync::Arc;

use crate::linalg::Coo;
use crate::mesh::FaceSide;
use crate::parallel::map_indices;
use crate::space::{DgScalarSpace, DgVectorSpace, ScalarField, VectorField};

/// Penalty default: 10 q^2 satisfies the coercivity probes on all shipped
/// meshes.
pub fn default_sigma(q: usize) -> f64 {
    10.0 * (q * q) as f64
}

/// Time-independent operators of one discretization.
pub struct StaticForms {
    pub scalar: Arc<DgScalarSpace>,
    pub velocity: Arc<DgVectorSpace>,
    pub pressure: Arc<DgScalarSpace>,
    pub sigma: f64,
    pub mass_scalar: Coo,
    pub mass_velocity: Coo,
    pub mass_pressure: Coo,
    pub a_d: Coo,
    pub a_eps: Coo,
    pub b_p: Coo,
    /// Integral of each pressure basis function, i.e. the coefficient
    /// vector of the zero-mean constraint.
    pub pressure_means: Vec<f64>,
}

impl StaticForms {
    pub fn assemble(
        scalar: &Arc<DgScalarSpace>,
        velocity: &Arc<DgVectorSpace>,
        pressure: &Arc<DgScalarSpace>,
        sigma: f64,
    ) -> Self {
        assert!(sigma > 0.0, "penalty parameter must be positive");
        Self {
            scalar: scalar.clone(),
            velocity: velocity.clone(),
            pressure: pressure.clone(),
            sigma,
            mass_scalar: assemble_mass(scalar),
            mass_velocity: expand_to_vector(&assemble_mass(&velocity.component), velocity),
            mass_pressure: assemble_mass(pressure),
            a_d: assemble_a_d(scalar, sigma),
            a_eps: assemble_a_eps(velocity, sigma),
            b_p: assemble_b_p(pressure, velocity),
            pressure_means: basis_integrals(pressure),
        }
    }
}

/// Operators that depend on the lagged fields; rebuilt every time step.
pub struct LaggedForms {
    /// Advection operator for frozen order parameter: rows test the scalar
    /// space, columns are velocity dofs. Its transpose is the interface
    /// operator.
    pub a_a: Coo,
    /// Convection operator for frozen transport velocity, on the velocity
    /// space.
    pub a_c: Coo,
}

impl LaggedForms {
    pub fn assemble(c_prev: &ScalarField, v_prev: &VectorField) -> Self {
        Self {
            a_a: assemble_a_a(c_prev, &v_prev.space),
            a_c: assemble_a_c(v_prev),
        }
    }
}

/// Integral of every basis function of a scalar space.
pub fn basis_integrals(space: &Arc<DgScalarSpace>) -> Vec<f64> {
    let rule = &space.rules.volume;
    let ndof = space.ndof_element();
    let mut out = vec![0.0; space.total_dofs()];
    for k in 0..space.mesh.n_elements() {
        let geo = &space.mesh.geometry[k];
        let scale = space.scale(k);
        for q in 0..rule.len() {
            let w = rule.weights[q] * geo.det_jac * scale;
            for i in 0..ndof {
                out[k * ndof + i] += w * space.vol_psi[(q, i)];
            }
        }
    }
    out
}

/// Scalar mass matrix (identity up to roundoff for the orthonormal basis,
/// but assembled honestly so the tests mean something).
pub fn assemble_mass(space: &Arc<DgScalarSpace>) -> Coo {
    let n = space.total_dofs();
    let ndof = space.ndof_element();
    let rule = &space.rules.volume;
    let blocks = map_indices(space.mesh.n_elements(), |k| {
        let geo = &space.mesh.geometry[k];
        let scale = space.scale(k);
        let mut local = vec![0.0; ndof * ndof];
        for q in 0..rule.len() {
            let w = rule.weights[q] * geo.det_jac * scale * scale;
            for i in 0..ndof {
                let wi = w * space.vol_psi[(q, i)];
                for j in 0..ndof {
                    local[i * ndof + j] += wi * space.vol_psi[(q, j)];
                }
            }
        }
        local
    });
    let mut coo = Coo::new(n, n);
    for (k, local) in blocks.into_iter().enumerate() {
        let base = k * ndof;
        for i in 0..ndof {
            for j in 0..ndof {
                coo.push(base + i, base + j, local[i * ndof + j]);
            }
        }
    }
    coo
}

/// Map a scalar-space operator to the block-diagonal vector-space operator
/// acting identically on both components.
pub fn expand_to_vector(scalar_op: &Coo, vspace: &Arc<DgVectorSpace>) -> Coo {
    let n = vspace.component.ndof_element();
    let mut coo = Coo::new(vspace.total_dofs(), vspace.total_dofs());
    for &(i, j, v) in &scalar_op.entries {
        let (ki, li) = (i / n, i % n);
        let (kj, lj) = (j / n, j % n);
        for comp in 0..2 {
            coo.push(vspace.dof(ki, comp, li), vspace.dof(kj, comp, lj), v);
        }
    }
    coo
}

/// Interior penalty diffusion form on the scalar space (interior faces
/// only, matching the natural boundary conditions for the order parameter
/// and chemical potential).
pub fn assemble_a_d(space: &Arc<DgScalarSpace>, sigma: f64) -> Coo {
    assemble_sipg_scalar(space, sigma, false, true)
}

/// Vector interior penalty diffusion form; boundary faces enforce the
/// no-slip condition weakly.
pub fn assemble_a_eps(vspace: &Arc<DgVectorSpace>, sigma: f64) -> Coo {
    expand_to_vector(&assemble_sipg_scalar(&vspace.component, sigma, true, true), vspace)
}

/// Gram matrix of the scalar DG seminorm (gradients plus penalty jumps).
pub fn assemble_dg_gram_scalar(space: &Arc<DgScalarSpace>, sigma: f64) -> Coo {
    assemble_sipg_scalar(space, sigma, false, false)
}

/// Gram matrix of the vector DG norm (boundary jumps included).
pub fn assemble_dg_gram_velocity(vspace: &Arc<DgVectorSpace>, sigma: f64) -> Coo {
    expand_to_vector(&assemble_sipg_scalar(&vspace.component, sigma, true, false), vspace)
}

/// Per-side trace data at the nodes of the face rule.
struct SideTrace<'a> {
    psi: &'a nalgebra::DMatrix<f64>,
    gxi: &'a nalgebra::DMatrix<f64>,
    geta: &'a nalgebra::DMatrix<f64>,
    scale: f64,
    inv_jac_t: [[f64; 2]; 2],
}

impl<'a> SideTrace<'a> {
    fn new(space: &'a DgScalarSpace, side: FaceSide, verts: [usize; 2]) -> Self {
        let forward = space.mesh.side_runs_forward(side, verts);
        let dir = usize::from(!forward);
        SideTrace {
            psi: &space.face_tab.psi[side.local_edge][dir],
            gxi: &space.face_tab.dpsi_xi[side.local_edge][dir],
            geta: &space.face_tab.dpsi_eta[side.local_edge][dir],
            scale: space.scale(side.element),
            inv_jac_t: space.mesh.geometry[side.element].inv_jac_t,
        }
    }

    fn value(&self, q: usize, i: usize) -> f64 {
        self.psi[(q, i)] * self.scale
    }

    /// Physical gradient dotted with a given unit vector.
    fn grad_dot(&self, q: usize, i: usize, n: [f64; 2]) -> f64 {
        let gx = self.gxi[(q, i)];
        let gy = self.geta[(q, i)];
        let it = &self.inv_jac_t;
        let px = it[0][0] * gx + it[0][1] * gy;
        let py = it[1][0] * gx + it[1][1] * gy;
        (px * n[0] + py * n[1]) * self.scale
    }
}

fn assemble_sipg_scalar(
    space: &Arc<DgScalarSpace>,
    sigma: f64,
    include_boundary: bool,
    include_consistency: bool,
) -> Coo {
    let mesh = &space.mesh;
    let ndof = space.ndof_element();
    let rule = &space.rules.volume;
    let face_rule = &space.rules.face;
    let n = space.total_dofs();

    let volume_blocks = map_indices(mesh.n_elements(), |k| {
        let geo = &mesh.geometry[k];
        let scale = space.scale(k);
        let it = &geo.inv_jac_t;
        let mut local = vec![0.0; ndof * ndof];
        for q in 0..rule.len() {
            let w = rule.weights[q] * geo.det_jac * scale * scale;
            let mut grads = Vec::with_capacity(ndof);
            for i in 0..ndof {
                let gx = space.vol_dpsi_xi[(q, i)];
                let gy = space.vol_dpsi_eta[(q, i)];
                grads.push([it[0][0] * gx + it[0][1] * gy, it[1][0] * gx + it[1][1] * gy]);
            }
            for i in 0..ndof {
                for j in 0..ndof {
                    local[i * ndof + j] += w * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                }
            }
        }
        local
    });

    let interior_blocks = map_indices(mesh.interior_faces.len(), |f| {
        let face = &mesh.interior_faces[f];
        let sides = [
            SideTrace::new(space, face.minus, face.vertices),
            SideTrace::new(space, face.plus, face.vertices),
        ];
        let signs = [1.0, -1.0];
        let penalty = sigma / face.h_e;
        // 2x2 blocks of side pairs, each ndof x ndof.
        let mut local = vec![0.0; 4 * ndof * ndof];
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.h_e;
            for (a, sa) in sides.iter().enumerate() {
                for (b, sb) in sides.iter().enumerate() {
                    let block = &mut local[(a * 2 + b) * ndof * ndof..(a * 2 + b + 1) * ndof * ndof];
                    for i in 0..ndof {
                        let jump_i = signs[a] * sa.value(q, i);
                        let avg_gn_i = 0.5 * sa.grad_dot(q, i, face.normal);
                        for j in 0..ndof {
                            let jump_j = signs[b] * sb.value(q, j);
                            let avg_gn_j = 0.5 * sb.grad_dot(q, j, face.normal);
                            let mut val = penalty * jump_i * jump_j;
                            if include_consistency {
                                val -= avg_gn_j * jump_i + avg_gn_i * jump_j;
                            }
                            block[i * ndof + j] += w * val;
                        }
                    }
                }
            }
        }
        (f, local)
    });

    let boundary_blocks = if include_boundary {
        map_indices(mesh.boundary_faces.len(), |f| {
            let face = &mesh.boundary_faces[f];
            let side = SideTrace::new(space, face.side, face.vertices);
            let penalty = sigma / face.h_e;
            let mut local = vec![0.0; ndof * ndof];
            for q in 0..face_rule.len() {
                let w = face_rule.weights[q] * face.h_e;
                for i in 0..ndof {
                    let vi = side.value(q, i);
                    let gi = side.grad_dot(q, i, face.normal);
                    for j in 0..ndof {
                        let vj = side.value(q, j);
                        let gj = side.grad_dot(q, j, face.normal);
                        let mut val = penalty * vi * vj;
                        if include_consistency {
                            val -= gj * vi + gi * vj;
                        }
                        local[i * ndof + j] += w * val;
                    }
                }
            }
            (face.side.element, local)
        })
    } else {
        Vec::new()
    };

    let mut coo = Coo::new(n, n);
    for (k, local) in volume_blocks.into_iter().enumerate() {
        let base = k * ndof;
        for i in 0..ndof {
            for j in 0..ndof {
                coo.push(base + i, base + j, local[i * ndof + j]);
            }
        }
    }
    for (f, local) in interior_blocks {
        let face = &mesh.interior_faces[f];
        let bases = [face.minus.element * ndof, face.plus.element * ndof];
        for a in 0..2 {
            for b in 0..2 {
                let block = &local[(a * 2 + b) * ndof * ndof..(a * 2 + b + 1) * ndof * ndof];
                for i in 0..ndof {
                    for j in 0..ndof {
                        coo.push(bases[a] + i, bases[b] + j, block[i * ndof + j]);
                    }
                }
            }
        }
    }
    for (k, local) in boundary_blocks {
        let base = k * ndof;
        for i in 0..ndof {
            for j in 0..ndof {
                coo.push(base + i, base + j, local[i * ndof + j]);
            }
        }
    }
    coo
}

/// Pressure form: rows are pressure dofs, columns velocity dofs.
pub fn assemble_b_p(pressure: &Arc<DgScalarSpace>, velocity: &Arc<DgVectorSpace>) -> Coo {
    let mesh = &pressure.mesh;
    let vsp = &velocity.component;
    let np = pressure.ndof_element();
    let nv = vsp.ndof_element();
    let rule = &pressure.rules.volume;
    let face_rule = &pressure.rules.face;

    let volume_blocks = map_indices(mesh.n_elements(), |k| {
        let geo = &mesh.geometry[k];
        let ps = pressure.scale(k);
        let vs = vsp.scale(k);
        let it = &geo.inv_jac_t;
        let mut local = vec![0.0; np * nv * 2];
        for q in 0..rule.len() {
            let w = rule.weights[q] * geo.det_jac;
            for j in 0..nv {
                let gx = vsp.vol_dpsi_xi[(q, j)];
                let gy = vsp.vol_dpsi_eta[(q, j)];
                let grad = [
                    (it[0][0] * gx + it[0][1] * gy) * vs,
                    (it[1][0] * gx + it[1][1] * gy) * vs,
                ];
                for comp in 0..2 {
                    for i in 0..np {
                        let pv = pressure.vol_psi[(q, i)] * ps;
                        local[(comp * np + i) * nv + j] -= w * pv * grad[comp];
                    }
                }
            }
        }
        local
    });

    let interior_blocks = map_indices(mesh.interior_faces.len(), |f| {
        let face = &mesh.interior_faces[f];
        let p_sides = [
            SideTrace::new(pressure, face.minus, face.vertices),
            SideTrace::new(pressure, face.plus, face.vertices),
        ];
        let v_sides = [
            SideTrace::new(vsp, face.minus, face.vertices),
            SideTrace::new(vsp, face.plus, face.vertices),
        ];
        let signs = [1.0, -1.0];
        let mut local = vec![0.0; 4 * np * nv * 2];
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.h_e;
            for (a, pa) in p_sides.iter().enumerate() {
                for (b, vb) in v_sides.iter().enumerate() {
                    let block =
                        &mut local[(a * 2 + b) * np * nv * 2..(a * 2 + b + 1) * np * nv * 2];
                    for i in 0..np {
                        let pavg = 0.5 * pa.value(q, i);
                        for comp in 0..2 {
                            let nc = face.normal[comp];
                            for j in 0..nv {
                                let vjump = signs[b] * vb.value(q, j) * nc;
                                block[(comp * np + i) * nv + j] += w * pavg * vjump;
                            }
                        }
                    }
                }
            }
        }
        (f, local)
    });

    let boundary_blocks = map_indices(mesh.boundary_faces.len(), |f| {
        let face = &mesh.boundary_faces[f];
        let pa = SideTrace::new(pressure, face.side, face.vertices);
        let vb = SideTrace::new(vsp, face.side, face.vertices);
        let mut local = vec![0.0; np * nv * 2];
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.h_e;
            for i in 0..np {
                let pv = pa.value(q, i);
                for comp in 0..2 {
                    let nc = face.normal[comp];
                    for j in 0..nv {
                        local[(comp * np + i) * nv + j] += w * pv * vb.value(q, j) * nc;
                    }
                }
            }
        }
        (face.side.element, local)
    });

    let mut coo = Coo::new(pressure.total_dofs(), velocity.total_dofs());
    let mut scatter = |kp: usize, kv: usize, local: &[f64]| {
        for comp in 0..2 {
            for i in 0..np {
                for j in 0..nv {
                    coo.push(
                        kp * np + i,
                        velocity.dof(kv, comp, j),
                        local[(comp * np + i) * nv + j],
                    );
                }
            }
        }
    };
    for (k, local) in volume_blocks.into_iter().enumerate() {
        scatter(k, k, &local);
    }
    for (f, local) in interior_blocks {
        let face = &mesh.interior_faces[f];
        let elems = [face.minus.element, face.plus.element];
        for a in 0..2 {
            for b in 0..2 {
                let block = &local[(a * 2 + b) * np * nv * 2..(a * 2 + b + 1) * np * nv * 2];
                scatter(elems[a], elems[b], block);
            }
        }
    }
    for (k, local) in boundary_blocks {
        scatter(k, k, &local);
    }
    coo
}

/// Advection operator for a frozen order parameter: rows test the scalar
/// space, columns are velocity dofs. Face terms run over interior faces
/// only.
pub fn assemble_a_a(c_prev: &ScalarField, velocity: &Arc<DgVectorSpace>) -> Coo {
    let space = &c_prev.space;
    let vsp = &velocity.component;
    let mesh = &space.mesh;
    let ns = space.ndof_element();
    let nv = vsp.ndof_element();
    let rule = &space.rules.volume;
    let face_rule = &space.rules.face;

    let volume_blocks = map_indices(mesh.n_elements(), |k| {
        let geo = &mesh.geometry[k];
        let ss = space.scale(k);
        let vs = vsp.scale(k);
        let it = &geo.inv_jac_t;
        let cdofs = &c_prev.coeffs[space.element_dofs(k)];
        let mut local = vec![0.0; ns * nv * 2];
        for q in 0..rule.len() {
            let cval: f64 =
                (0..ns).map(|i| cdofs[i] * space.vol_psi[(q, i)]).sum::<f64>() * ss;
            let w = rule.weights[q] * geo.det_jac * cval;
            for i in 0..ns {
                let gx = space.vol_dpsi_xi[(q, i)];
                let gy = space.vol_dpsi_eta[(q, i)];
                let grad = [
                    (it[0][0] * gx + it[0][1] * gy) * ss,
                    (it[1][0] * gx + it[1][1] * gy) * ss,
                ];
                for comp in 0..2 {
                    for j in 0..nv {
                        local[(comp * ns + i) * nv + j] -=
                            w * vsp.vol_psi[(q, j)] * vs * grad[comp];
                    }
                }
            }
        }
        local
    });

    let interior_blocks = map_indices(mesh.interior_faces.len(), |f| {
        let face = &mesh.interior_faces[f];
        let s_sides = [
            SideTrace::new(space, face.minus, face.vertices),
            SideTrace::new(space, face.plus, face.vertices),
        ];
        let v_sides = [
            SideTrace::new(vsp, face.minus, face.vertices),
            SideTrace::new(vsp, face.plus, face.vertices),
        ];
        let signs = [1.0, -1.0];
        let cdofs = [
            &c_prev.coeffs[space.element_dofs(face.minus.element)],
            &c_prev.coeffs[space.element_dofs(face.plus.element)],
        ];
        let mut local = vec![0.0; 4 * ns * nv * 2];
        for q in 0..face_rule.len() {
            let c_avg = 0.5
                * ((0..ns).map(|i| cdofs[0][i] * s_sides[0].value(q, i)).sum::<f64>()
                    + (0..ns).map(|i| cdofs[1][i] * s_sides[1].value(q, i)).sum::<f64>());
            let w = face_rule.weights[q] * face.h_e * c_avg;
            for (a, sa) in s_sides.iter().enumerate() {
                for (b, vb) in v_sides.iter().enumerate() {
                    let block =
                        &mut local[(a * 2 + b) * ns * nv * 2..(a * 2 + b + 1) * ns * nv * 2];
                    for i in 0..ns {
                        let jump_chi = signs[a] * sa.value(q, i);
                        for comp in 0..2 {
                            let nc = face.normal[comp];
                            for j in 0..nv {
                                // {v . n} picks up 1/2 from the side average.
                                block[(comp * ns + i) * nv + j] +=
                                    w * jump_chi * 0.5 * vb.value(q, j) * nc;
                            }
                        }
                    }
                }
            }
        }
        (f, local)
    });

    let mut coo = Coo::new(space.total_dofs(), velocity.total_dofs());
    let mut scatter = |ks: usize, kv: usize, local: &[f64]| {
        for comp in 0..2 {
            for i in 0..ns {
                for j in 0..nv {
                    coo.push(
                        ks * ns + i,
                        velocity.dof(kv, comp, j),
                        local[(comp * ns + i) * nv + j],
                    );
                }
            }
        }
    };
    for (k, local) in volume_blocks.into_iter().enumerate() {
        scatter(k, k, &local);
    }
    for (f, local) in interior_blocks {
        let face = &mesh.interior_faces[f];
        let elems = [face.minus.element, face.plus.element];
        for a in 0..2 {
            for b in 0..2 {
                let block = &local[(a * 2 + b) * ns * nv * 2..(a * 2 + b + 1) * ns * nv * 2];
                scatter(elems[a], elems[b], block);
            }
        }
    }
    coo
}

/// Convection operator with both transport arguments frozen to `v_prev`.
/// The upwind part decides the inflow side pointwise at the quadrature
/// nodes; exterior traces vanish on the boundary.
pub fn assemble_a_c(v_prev: &VectorField) -> Coo {
    let velocity = &v_prev.space;
    let vsp = &velocity.component;
    let mesh = &vsp.mesh;
    let n = vsp.ndof_element();
    let rule = &vsp.rules.volume;
    let face_rule = &vsp.rules.face;

    let vector_dofs = |k: usize, comp: usize| -> Vec<f64> {
        (0..n).map(|i| v_prev.coeffs[velocity.dof(k, comp, i)]).collect()
    };

    let volume_blocks = map_indices(mesh.n_elements(), |k| {
        let geo = &mesh.geometry[k];
        let s = vsp.scale(k);
        let it = &geo.inv_jac_t;
        let vd = [vector_dofs(k, 0), vector_dofs(k, 1)];
        let mut local = vec![0.0; n * n];
        for q in 0..rule.len() {
            let mut vval = [0.0; 2];
            let mut vgrad = [[0.0; 2]; 2];
            for i in 0..n {
                let psi = vsp.vol_psi[(q, i)];
                let gx = vsp.vol_dpsi_xi[(q, i)];
                let gy = vsp.vol_dpsi_eta[(q, i)];
                let grad = [it[0][0] * gx + it[0][1] * gy, it[1][0] * gx + it[1][1] * gy];
                for comp in 0..2 {
                    vval[comp] += vd[comp][i] * psi;
                    vgrad[comp][0] += vd[comp][i] * grad[0];
                    vgrad[comp][1] += vd[comp][i] * grad[1];
                }
            }
            for comp in 0..2 {
                vval[comp] *= s;
                vgrad[comp][0] *= s;
                vgrad[comp][1] *= s;
            }
            let div = vgrad[0][0] + vgrad[1][1];
            let w = rule.weights[q] * geo.det_jac * s * s;
            for i in 0..n {
                let psi_i = vsp.vol_psi[(q, i)];
                for j in 0..n {
                    let gx = vsp.vol_dpsi_xi[(q, j)];
                    let gy = vsp.vol_dpsi_eta[(q, j)];
                    let grad_j = [it[0][0] * gx + it[0][1] * gy, it[1][0] * gx + it[1][1] * gy];
                    let conv = vval[0] * grad_j[0] + vval[1] * grad_j[1];
                    local[i * n + j] += w * (conv + 0.5 * div * vsp.vol_psi[(q, j)]) * psi_i;
                }
            }
        }
        local
    });

    struct FaceBlock {
        /// (row element, col element, component-replicated n x n block)
        parts: Vec<(usize, usize, Vec<f64>)>,
    }

    let interior_blocks = map_indices(mesh.interior_faces.len(), |f| {
        let face = &mesh.interior_faces[f];
        let sides = [
            SideTrace::new(vsp, face.minus, face.vertices),
            SideTrace::new(vsp, face.plus, face.vertices),
        ];
        let elems = [face.minus.element, face.plus.element];
        let vdofs = [
            [vector_dofs(elems[0], 0), vector_dofs(elems[0], 1)],
            [vector_dofs(elems[1], 0), vector_dofs(elems[1], 1)],
        ];
        let mut blocks: Vec<Vec<f64>> = (0..4).map(|_| vec![0.0; n * n]).collect();
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.h_e;
            let mut traces = [[0.0; 2]; 2];
            for (a, sa) in sides.iter().enumerate() {
                for comp in 0..2 {
                    traces[a][comp] =
                        (0..n).map(|i| vdofs[a][comp][i] * sa.value(q, i)).sum::<f64>();
                }
            }
            let avg = [
                0.5 * (traces[0][0] + traces[1][0]),
                0.5 * (traces[0][1] + traces[1][1]),
            ];
            let jump_n = (traces[0][0] - traces[1][0]) * face.normal[0]
                + (traces[0][1] - traces[1][1]) * face.normal[1];
            // Upwind: element side with {v} . n_E < 0 integrates
            // |{v} . n_E| (z_int - z_ext) . theta_int.
            for a in 0..2 {
                let n_e_sign = if a == 0 { 1.0 } else { -1.0 };
                let m = n_e_sign * (avg[0] * face.normal[0] + avg[1] * face.normal[1]);
                if m < 0.0 {
                    let b = 1 - a;
                    for i in 0..n {
                        let ti = sides[a].value(q, i);
                        for j in 0..n {
                            blocks[a * 2 + a][i * n + j] += w * (-m) * ti * sides[a].value(q, j);
                            blocks[a * 2 + b][i * n + j] -= w * (-m) * ti * sides[b].value(q, j);
                        }
                    }
                }
            }
            // -1/2 [v . n] {z . theta}: diagonal side blocks only.
            for a in 0..2 {
                for i in 0..n {
                    let ti = sides[a].value(q, i);
                    for j in 0..n {
                        blocks[a * 2 + a][i * n + j] -=
                            0.25 * w * jump_n * ti * sides[a].value(q, j);
                    }
                }
            }
        }
        FaceBlock {
            parts: (0..4)
                .map(|idx| (elems[idx / 2], elems[idx % 2], std::mem::take(&mut blocks[idx])))
                .collect(),
        }
    });

    let boundary_blocks = map_indices(mesh.boundary_faces.len(), |f| {
        let face = &mesh.boundary_faces[f];
        let side = SideTrace::new(vsp, face.side, face.vertices);
        let k = face.side.element;
        let vd = [vector_dofs(k, 0), vector_dofs(k, 1)];
        let mut local = vec![0.0; n * n];
        for q in 0..face_rule.len() {
            let w = face_rule.weights[q] * face.h_e;
            let mut trace = [0.0; 2];
            for comp in 0..2 {
                trace[comp] = (0..n).map(|i| vd[comp][i] * side.value(q, i)).sum::<f64>();
            }
            let vn = trace[0] * face.normal[0] + trace[1] * face.normal[1];
            // Upwind with zero exterior trace, plus the jump stabilization
            // where jump and average both reduce to the trace.
            let upwind = if vn < 0.0 { -vn } else { 0.0 };
            for i in 0..n {
                let ti = side.value(q, i);
                for j in 0..n {
                    local[i * n + j] += w * (upwind - 0.5 * vn) * ti * side.value(q, j);
                }
            }
        }
        (k, local)
    });

    let mut coo = Coo::new(velocity.total_dofs(), velocity.total_dofs());
    let mut scatter = |krow: usize, kcol: usize, local: &[f64]| {
        for comp in 0..2 {
            for i in 0..n {
                for j in 0..n {
                    coo.push(
                        velocity.dof(krow, comp, i),
                        velocity.dof(kcol, comp, j),
                        local[i * n + j],
                    );
                }
            }
        }
    };
    for (k, local) in volume_blocks.into_iter().enumerate() {
        scatter(k, k, &local);
    }
    for fb in interior_blocks {
        for (krow, kcol, block) in fb.parts {
            scatter(krow, kcol, &block);
        }
    }
    for (k, local) in boundary_blocks {
        scatter(k, k, &local);
    }
    coo
}

// ---------------------------------------------------------------------------
// Direct evaluators. These integrate the forms from field evaluations alone
// and never touch the assembled matrices; property tests and the elementwise
// balance use them as the second route.
// ---------------------------------------------------------------------------

/// a_D(c, chi) by direct quadrature.
pub fn eval_a_d(c: &ScalarField, chi: &ScalarField, sigma: f64) -> f64 {
    let space = &c.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume;
    let face_rule = &space.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let gc = c.eval_grad(k, xi, eta);
            let gx = chi.eval_grad(k, xi, eta);
            acc += rule.weights[q] * det * (gc[0] * gx[0] + gc[1] * gx[1]);
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let (jump_c, _) = c.jump_average(f, s);
            let (jump_chi, _) = chi.jump_average(f, s);
            let avg_gc = avg_grad_dot(c, face, s);
            let avg_gchi = avg_grad_dot(chi, face, s);
            acc += w
                * (-avg_gc * jump_chi - avg_gchi * jump_c + sigma / face.h_e * jump_c * jump_chi);
        }
    }
    acc
}

fn avg_grad_dot(field: &ScalarField, face: &crate::mesh::InteriorFace, s: f64) -> f64 {
    let gm = grad_on_side(field, face.minus, face.vertices, s);
    let gp = grad_on_side(field, face.plus, face.vertices, s);
    0.5 * ((gm[0] + gp[0]) * face.normal[0] + (gm[1] + gp[1]) * face.normal[1])
}

fn grad_on_side(field: &ScalarField, side: FaceSide, verts: [usize; 2], s: f64) -> [f64; 2] {
    let forward = field.space.mesh.side_runs_forward(side, verts);
    let t = if forward { s } else { 1.0 - s };
    let p = crate::mesh::Mesh::edge_ref_point(side.local_edge, t);
    field.eval_grad(side.element, p[0], p[1])
}

fn vgrad_on_side(field: &VectorField, side: FaceSide, verts: [usize; 2], s: f64) -> [[f64; 2]; 2] {
    let forward = field.space.component.mesh.side_runs_forward(side, verts);
    let t = if forward { s } else { 1.0 - s };
    let p = crate::mesh::Mesh::edge_ref_point(side.local_edge, t);
    field.eval_grad(side.element, p[0], p[1])
}

/// a_eps(v, theta) by direct quadrature (boundary faces included).
pub fn eval_a_eps(v: &VectorField, theta: &VectorField, sigma: f64) -> f64 {
    let vsp = &v.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume;
    let face_rule = &vsp.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let gv = v.eval_grad(k, xi, eta);
            let gt = theta.eval_grad(k, xi, eta);
            let mut frob = 0.0;
            for comp in 0..2 {
                frob += gv[comp][0] * gt[comp][0] + gv[comp][1] * gt[comp][1];
            }
            acc += rule.weights[q] * det * frob;
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let (jv, _) = v.jump_average(f, s);
            let (jt, _) = theta.jump_average(f, s);
            let gv = avg_vgrad_dot(v, face, s);
            let gt = avg_vgrad_dot(theta, face, s);
            let mut val = 0.0;
            for comp in 0..2 {
                val += -gv[comp] * jt[comp] - gt[comp] * jv[comp]
                    + sigma / face.h_e * jv[comp] * jt[comp];
            }
            acc += w * val;
        }
    }
    for face in &mesh.boundary_faces {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let tv = v.trace(face.side, face.vertices, s);
            let tt = theta.trace(face.side, face.vertices, s);
            let gv = vgrad_on_side(v, face.side, face.vertices, s);
            let gt = vgrad_on_side(theta, face.side, face.vertices, s);
            let mut val = 0.0;
            for comp in 0..2 {
                let gvn = gv[comp][0] * face.normal[0] + gv[comp][1] * face.normal[1];
                let gtn = gt[comp][0] * face.normal[0] + gt[comp][1] * face.normal[1];
                val += -gvn * tt[comp] - gtn * tv[comp] + sigma / face.h_e * tv[comp] * tt[comp];
            }
            acc += w * val;
        }
    }
    acc
}

fn avg_vgrad_dot(field: &VectorField, face: &crate::mesh::InteriorFace, s: f64) -> [f64; 2] {
    let gm = vgrad_on_side(field, face.minus, face.vertices, s);
    let gp = vgrad_on_side(field, face.plus, face.vertices, s);
    let mut out = [0.0; 2];
    for comp in 0..2 {
        out[comp] = 0.5
            * ((gm[comp][0] + gp[comp][0]) * face.normal[0]
                + (gm[comp][1] + gp[comp][1]) * face.normal[1]);
    }
    out
}

/// b_P(p, theta) by direct quadrature.
pub fn eval_b_p(p: &ScalarField, theta: &VectorField) -> f64 {
    let mesh = &p.space.mesh;
    let rule = &p.space.rules.volume;
    let face_rule = &p.space.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let g = theta.eval_grad(k, xi, eta);
            acc -= rule.weights[q] * det * p.eval(k, xi, eta) * (g[0][0] + g[1][1]);
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let (_, pavg) = p.jump_average(f, s);
            let (jt, _) = theta.jump_average(f, s);
            acc += w * pavg * (jt[0] * face.normal[0] + jt[1] * face.normal[1]);
        }
    }
    for face in &mesh.boundary_faces {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let pv = p.trace(face.side, face.vertices, s);
            let tv = theta.trace(face.side, face.vertices, s);
            acc += w * pv * (tv[0] * face.normal[0] + tv[1] * face.normal[1]);
        }
    }
    acc
}

/// a_A(c, v, chi) by direct quadrature with a discrete velocity.
pub fn eval_a_a(c: &ScalarField, v: &VectorField, chi: &ScalarField) -> f64 {
    eval_a_a_analytic(c, |k, xi, eta, _| v.eval(k, xi, eta), |side, verts, s| {
        v.trace(side, verts, s)
    }, chi)
}

/// a_A with an analytic velocity `v(x)`; useful for fields outside the
/// discrete space.
pub fn eval_a_a_with(
    c: &ScalarField,
    v: impl Fn([f64; 2]) -> [f64; 2],
    chi: &ScalarField,
) -> f64 {
    let mesh = c.space.mesh.clone();
    let mesh2 = mesh.clone();
    let v = &v;
    eval_a_a_analytic(
        c,
        move |k, xi, eta, _| {
            let x = mesh.map_to_physical(k, xi, eta);
            v(x)
        },
        move |side, verts, s| {
            let forward = mesh2.side_runs_forward(side, verts);
            let t = if forward { s } else { 1.0 - s };
            let p = crate::mesh::Mesh::edge_ref_point(side.local_edge, t);
            let x = mesh2.map_to_physical(side.element, p[0], p[1]);
            v(x)
        },
        chi,
    )
}

fn eval_a_a_analytic(
    c: &ScalarField,
    v_vol: impl Fn(usize, f64, f64, [f64; 2]) -> [f64; 2],
    v_face: impl Fn(FaceSide, [usize; 2], f64) -> [f64; 2],
    chi: &ScalarField,
) -> f64 {
    let space = &c.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume_elevated;
    let face_rule = &space.rules.face_elevated;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let x = mesh.map_to_physical(k, xi, eta);
            let vv = v_vol(k, xi, eta, x);
            let g = chi.eval_grad(k, xi, eta);
            acc -= rule.weights[q] * det * c.eval(k, xi, eta) * (vv[0] * g[0] + vv[1] * g[1]);
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let (_, cavg) = c.jump_average(f, s);
            let (jchi, _) = chi.jump_average(f, s);
            let vm = v_face(face.minus, face.vertices, s);
            let vp = v_face(face.plus, face.vertices, s);
            let vn_avg = 0.5
                * ((vm[0] + vp[0]) * face.normal[0] + (vm[1] + vp[1]) * face.normal[1]);
            acc += w * cavg * vn_avg * jchi;
        }
    }
    acc
}

/// b_I(c, mu, theta) by direct quadrature.
pub fn eval_b_i(c: &ScalarField, mu: &ScalarField, theta: &VectorField) -> f64 {
    let space = &c.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume_elevated;
    let face_rule = &space.rules.face_elevated;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let g = mu.eval_grad(k, xi, eta);
            let tv = theta.eval(k, xi, eta);
            acc -= rule.weights[q] * det * c.eval(k, xi, eta) * (g[0] * tv[0] + g[1] * tv[1]);
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let w = face_rule.weights[q] * face.h_e;
            let (_, cavg) = c.jump_average(f, s);
            let (jmu, _) = mu.jump_average(f, s);
            let (_, tavg) = theta.jump_average(f, s);
            acc += w * cavg * jmu * (tavg[0] * face.normal[0] + tavg[1] * face.normal[1]);
        }
    }
    acc
}

/// a_C(w, v, z, theta) by direct quadrature; the inflow set is decided by
/// the sign of {w} . n_E at each quadrature node.
pub fn eval_a_c(w: &VectorField, v: &VectorField, z: &VectorField, theta: &VectorField) -> f64 {
    let vsp = &w.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume;
    let face_rule = &vsp.rules.face;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let [xi, eta] = rule.ref_point(q);
            let vv = v.eval(k, xi, eta);
            let gz = z.eval_grad(k, xi, eta);
            let gv = v.eval_grad(k, xi, eta);
            let zt = z.eval(k, xi, eta);
            let tt = theta.eval(k, xi, eta);
            let mut conv = 0.0;
            for comp in 0..2 {
                conv += (vv[0] * gz[comp][0] + vv[1] * gz[comp][1]) * tt[comp];
            }
            let div = gv[0][0] + gv[1][1];
            acc += rule.weights[q]
                * det
                * (conv + 0.5 * div * (zt[0] * tt[0] + zt[1] * tt[1]));
        }
    }
    for (f, face) in mesh.interior_faces.iter().enumerate() {
        let sides = [face.minus, face.plus];
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let wgt = face_rule.weights[q] * face.h_e;
            let (_, wavg) = w.jump_average(f, s);
            let (_, vavg) = v.jump_average(f, s);
            let traces_z = [
                z.trace(sides[0], face.vertices, s),
                z.trace(sides[1], face.vertices, s),
            ];
            let traces_t = [
                theta.trace(sides[0], face.vertices, s),
                theta.trace(sides[1], face.vertices, s),
            ];
            for a in 0..2 {
                let sign = if a == 0 { 1.0 } else { -1.0 };
                let m_w = sign * (wavg[0] * face.normal[0] + wavg[1] * face.normal[1]);
                if m_w < 0.0 {
                    let m_v =
                        (sign * (vavg[0] * face.normal[0] + vavg[1] * face.normal[1])).abs();
                    let b = 1 - a;
                    let mut val = 0.0;
                    for comp in 0..2 {
                        val += (traces_z[a][comp] - traces_z[b][comp]) * traces_t[a][comp];
                    }
                    acc += wgt * m_v * val;
                }
            }
            let (jvn, _) = v.jump_average(f, s);
            let jn = jvn[0] * face.normal[0] + jvn[1] * face.normal[1];
            let mut zdot = 0.0;
            for a in 0..2 {
                for comp in 0..2 {
                    zdot += 0.5 * traces_z[a][comp] * traces_t[a][comp];
                }
            }
            acc -= 0.5 * wgt * jn * zdot;
        }
    }
    for face in &mesh.boundary_faces {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let wgt = face_rule.weights[q] * face.h_e;
            let wt = w.trace(face.side, face.vertices, s);
            let vt = v.trace(face.side, face.vertices, s);
            let zt = z.trace(face.side, face.vertices, s);
            let tt = theta.trace(face.side, face.vertices, s);
            let m_w = wt[0] * face.normal[0] + wt[1] * face.normal[1];
            let m_v = (vt[0] * face.normal[0] + vt[1] * face.normal[1]).abs();
            if m_w < 0.0 {
                acc += wgt * m_v * (zt[0] * tt[0] + zt[1] * tt[1]);
            }
            let jn = vt[0] * face.normal[0] + vt[1] * face.normal[1];
            acc -= 0.5 * wgt * jn * (zt[0] * tt[0] + zt[1] * tt[1]);
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use crate::space::{l2_project, l2_project_vector, DgScalarSpace, RuleSet};
    use rand::{Rng, SeedableRng};

    struct Setup {
        scalar: Arc<DgScalarSpace>,
        velocity: Arc<DgVectorSpace>,
        pressure: Arc<DgScalarSpace>,
    }

    fn setup(n: usize, q: usize) -> Setup {
        let mesh = Mesh::structured_unit_square(n);
        let rules = RuleSet::for_degree(q);
        let scalar = DgScalarSpace::new(mesh.clone(), q, rules.clone());
        let velocity = DgVectorSpace::new(scalar.clone());
        let pressure = DgScalarSpace::new(mesh, q - 1, rules);
        Setup { scalar, velocity, pressure }
    }

    fn random_scalar(space: &Arc<DgScalarSpace>, rng: &mut impl Rng) -> ScalarField {
        ScalarField::new(
            space.clone(),
            (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    fn random_vector(space: &Arc<DgVectorSpace>, rng: &mut impl Rng) -> VectorField {
        VectorField::new(
            space.clone(),
            (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn a_d_kills_constants() {
        let s = setup(2, 1);
        let sigma = default_sigma(1);
        let a_d = assemble_a_d(&s.scalar, sigma);
        let one = l2_project(&s.scalar, |_| 1.0).unwrap();
        let mut row = vec![0.0; s.scalar.total_dofs()];
        a_d.matvec_add(&one.coeffs, &mut row, 1.0);
        assert!(row.iter().all(|v| v.abs() <= 1e-12));
        let mut col = vec![0.0; s.scalar.total_dofs()];
        a_d.matvec_transpose_add(&one.coeffs, &mut col, 1.0);
        assert!(col.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn a_d_on_single_element_is_the_gradient_integral() {
        // One right triangle, no interior faces: a_D(x, x) = area = 1/2.
        let mesh =
            Mesh::from_cells(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let space = DgScalarSpace::new(mesh, 1, RuleSet::for_degree(1));
        let a_d = assemble_a_d(&space, default_sigma(1));
        let x_field = l2_project(&space, |x| x[0]).unwrap();
        let value = a_d.pairing(&x_field.coeffs, &x_field.coeffs);
        assert!((value - 0.5).abs() <= 1e-13, "got {value}");
    }

    #[test]
    fn diffusion_matrices_are_symmetric() {
        let s = setup(2, 2);
        let a_d = assemble_a_d(&s.scalar, default_sigma(2));
        assert!(a_d.asymmetry() <= 1e-12 * a_d.max_abs());
        let a_eps = assemble_a_eps(&s.velocity, default_sigma(2));
        assert!(a_eps.asymmetry() <= 1e-12 * a_eps.max_abs());
    }

    #[test]
    fn a_eps_sees_constants_through_the_boundary() {
        let s = setup(2, 1);
        let sigma = default_sigma(1);
        let a_eps = assemble_a_eps(&s.velocity, sigma);
        let v = l2_project_vector(&s.velocity, |_| [1.0, 0.0]).unwrap();
        let value = a_eps.pairing(&v.coeffs, &v.coeffs);
        // No volume or consistency contribution; the boundary penalty sums
        // sigma |e| / h_e over the 8 boundary faces.
        assert!((value - 8.0 * sigma).abs() <= 1e-10, "got {value}");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let v = random_vector(&s.velocity, &mut rng);
            assert!(a_eps.pairing(&v.coeffs, &v.coeffs) > 0.0);
        }
    }

    #[test]
    fn b_p_vanishes_on_constant_pressures() {
        let s = setup(2, 2);
        let b_p = assemble_b_p(&s.pressure, &s.velocity);
        let one = l2_project(&s.pressure, |_| 1.0).unwrap();
        let mut out = vec![0.0; s.velocity.total_dofs()];
        b_p.matvec_transpose_add(&one.coeffs, &mut out, 1.0);
        assert!(out.iter().all(|v| v.abs() <= 1e-12));
        // Zero velocity trivially annihilates the form.
        let zero = VectorField::zeros(s.velocity.clone());
        let mut rows = vec![0.0; s.pressure.total_dofs()];
        b_p.matvec_add(&zero.coeffs, &mut rows, 1.0);
        assert!(rows.iter().all(|v| v.abs() == 0.0));
    }

    #[test]
    fn b_p_vanishes_on_continuous_divergence_free_velocity() {
        // curl of the bubble stream function x(1-x)y(1-y): degree 3, inside
        // the discrete space for q = 3, divergence-free with zero normal
        // trace on the boundary.
        let s = setup(2, 3);
        let b_p = assemble_b_p(&s.pressure, &s.velocity);
        let stream_curl = |x: [f64; 2]| {
            let (u, w) = (x[0], x[1]);
            [
                u * (1.0 - u) * (1.0 - 2.0 * w),
                -(1.0 - 2.0 * u) * w * (1.0 - w),
            ]
        };
        let v = l2_project_vector(&s.velocity, stream_curl).unwrap();
        let mut rows = vec![0.0; s.pressure.total_dofs()];
        b_p.matvec_add(&v.coeffs, &mut rows, 1.0);
        assert!(rows.iter().all(|r| r.abs() <= 1e-10));
    }

    #[test]
    fn a_a_vanishes_against_constant_test_functions() {
        let s = setup(2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let c = random_scalar(&s.scalar, &mut rng);
        let a_a = assemble_a_a(&c, &s.velocity);
        let one = l2_project(&s.scalar, |_| 1.0).unwrap();
        let mut out = vec![0.0; s.velocity.total_dofs()];
        a_a.matvec_transpose_add(&one.coeffs, &mut out, 1.0);
        assert!(out.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn a_a_vanishes_for_unit_c_and_divergence_free_velocity() {
        // With c = 1 the form telescopes by elementwise integration by
        // parts whenever the velocity is continuous, divergence-free, and
        // tangential on the boundary.
        let s = setup(2, 2);
        let one = l2_project(&s.scalar, |_| 1.0).unwrap();
        let bubble_curl = |x: [f64; 2]| {
            let (u, w) = (x[0], x[1]);
            let bu = u * u * (1.0 - u) * (1.0 - u);
            let bw = w * w * (1.0 - w) * (1.0 - w);
            let dbu = 2.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
            let dbw = 2.0 * w * (1.0 - w) * (1.0 - 2.0 * w);
            [bu * dbw, -dbu * bw]
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..4 {
            let chi = random_scalar(&s.scalar, &mut rng);
            let value = eval_a_a_with(&one, bubble_curl, &chi);
            assert!(value.abs() <= 1e-10, "got {value}");
        }
    }

    #[test]
    fn advection_and_interface_forms_are_adjoint() {
        // Same value through the evaluators and through the assembled
        // matrix used with transposed roles.
        let s = setup(2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let c = random_scalar(&s.scalar, &mut rng);
            let mu = random_scalar(&s.scalar, &mut rng);
            let v = random_vector(&s.velocity, &mut rng);
            let a_val = eval_a_a(&c, &v, &mu);
            let b_val = eval_b_i(&c, &mu, &v);
            assert!((a_val - b_val).abs() <= 1e-12, "{a_val} vs {b_val}");
            let a_a = assemble_a_a(&c, &s.velocity);
            let mut av = vec![0.0; s.scalar.total_dofs()];
            a_a.matvec_add(&v.coeffs, &mut av, 1.0);
            let matrix_val: f64 = mu.coeffs.iter().zip(&av).map(|(a, b)| a * b).sum();
            assert!((a_val - matrix_val).abs() <= 1e-11, "{a_val} vs {matrix_val}");
        }
    }

    #[test]
    fn zero_order_parameter_gives_zero_interface_operator() {
        let s = setup(2, 1);
        let zero = ScalarField::zeros(s.scalar.clone());
        let a_a = assemble_a_a(&zero, &s.velocity);
        assert!(a_a.max_abs() == 0.0);
    }

    #[test]
    fn constant_chemical_potential_is_in_the_interface_kernel() {
        let s = setup(2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let c = random_scalar(&s.scalar, &mut rng);
        let a_a = assemble_a_a(&c, &s.velocity);
        let mu_const = l2_project(&s.scalar, |_| 2.5).unwrap();
        // b_I(c, const, theta) = a_A(c, theta, const) = 0 for all theta.
        let mut out = vec![0.0; s.velocity.total_dofs()];
        a_a.matvec_transpose_add(&mu_const.coeffs, &mut out, 1.0);
        assert!(out.iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn convection_operator_is_positive_semidefinite() {
        let s = setup(2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let v = random_vector(&s.velocity, &mut rng);
            let z = random_vector(&s.velocity, &mut rng);
            let a_c = assemble_a_c(&v);
            let quad = a_c.pairing(&z.coeffs, &z.coeffs);
            assert!(quad >= -1e-12, "got {quad}");
        }
    }

    #[test]
    fn zero_velocity_gives_zero_convection_operator() {
        let s = setup(2, 1);
        let zero = VectorField::zeros(s.velocity.clone());
        let a_c = assemble_a_c(&zero);
        assert!(a_c.max_abs() == 0.0);
    }

    #[test]
    fn convection_vanishes_on_divergence_free_velocity_and_constant_field() {
        let s = setup(2, 3);
        let stream_curl = |x: [f64; 2]| {
            let (u, w) = (x[0], x[1]);
            [
                u * (1.0 - u) * (1.0 - 2.0 * w),
                -(1.0 - 2.0 * u) * w * (1.0 - w),
            ]
        };
        let v = l2_project_vector(&s.velocity, stream_curl).unwrap();
        let z = l2_project_vector(&s.velocity, |_| [0.3, -0.7]).unwrap();
        let a_c = assemble_a_c(&v);
        let value = a_c.pairing(&z.coeffs, &z.coeffs);
        assert!(value.abs() <= 1e-10, "got {value}");
    }

    #[test]
    fn convection_evaluator_matches_matrix() {
        let s = setup(2, 1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..5 {
            let v = random_vector(&s.velocity, &mut rng);
            let z = random_vector(&s.velocity, &mut rng);
            let th = random_vector(&s.velocity, &mut rng);
            let a_c = assemble_a_c(&v);
            let matrix_val = a_c.pairing(&th.coeffs, &z.coeffs);
            let eval_val = eval_a_c(&v, &v, &z, &th);
            assert!(
                (matrix_val - eval_val).abs() <= 1e-11 * matrix_val.abs().max(1.0),
                "{matrix_val} vs {eval_val}"
            );
        }
    }

    #[test]
    fn sipg_evaluators_match_matrices() {
        let s = setup(2, 2);
        let sigma = default_sigma(2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = random_scalar(&s.scalar, &mut rng);
        let b = random_scalar(&s.scalar, &mut rng);
        let a_d = assemble_a_d(&s.scalar, sigma);
        assert!(
            (a_d.pairing(&a.coeffs, &b.coeffs) - eval_a_d(&a, &b, sigma)).abs() <= 1e-10
        );
        let v = random_vector(&s.velocity, &mut rng);
        let th = random_vector(&s.velocity, &mut rng);
        let a_eps = assemble_a_eps(&s.velocity, sigma);
        assert!(
            (a_eps.pairing(&th.coeffs, &v.coeffs) - eval_a_eps(&v, &th, sigma)).abs() <= 1e-10
        );
        let p = random_scalar(&s.pressure, &mut rng);
        let b_p = assemble_b_p(&s.pressure, &s.velocity);
        let mut rows = vec![0.0; s.pressure.total_dofs()];
        b_p.matvec_add(&v.coeffs, &mut rows, 1.0);
        let matrix_val: f64 = p.coeffs.iter().zip(&rows).map(|(x, y)| x * y).sum();
        assert!((matrix_val - eval_b_p(&p, &v)).abs() <= 1e-10);
    }

    #[test]
    fn mass_matrix_is_identity_and_measures_the_domain() {
        let s = setup(2, 1);
        let m = assemble_mass(&s.scalar);
        let one = l2_project(&s.scalar, |_| 1.0).unwrap();
        let area = m.pairing(&one.coeffs, &one.coeffs);
        assert!((area - 1.0).abs() <= 1e-12);
        // Orthonormal basis: the mass matrix is the identity.
        for (i, j, v) in m.merged() {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((v - expected).abs() <= 1e-13);
        }
    }
}
