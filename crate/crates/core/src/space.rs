//! Broken polynomial spaces, field coefficients, traces, and L2 projection.
//!
//! Every element carries the same orthonormal reference basis scaled by
//! 1/sqrt(2|E|), so local mass matrices are the identity up to roundoff.
//! Basis values and reference gradients are tabulated once per space at the
//! volume and face quadrature nodes; faces index the tables through
//! (local edge, direction) so both sides of a face see the same physical
//! points.

use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::basis::ReferenceBasis;
use crate::mesh::{FaceSide, Mesh};
use crate::quadrature::{EdgeRule, TriangleRule};

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("singular local mass matrix on element {0}")]
    SingularLocalMass(usize),
}

/// Volume and face rules shared by all spaces of one discretization.
///
/// The base rules are exact for the trilinear form pairings of degree-q
/// spaces; the elevated rules handle non-polynomial integrands (potentials,
/// manufactured forcings, error norms).
#[derive(Debug)]
pub struct RuleSet {
    pub volume: TriangleRule,
    pub volume_elevated: TriangleRule,
    pub face: EdgeRule,
    pub face_elevated: EdgeRule,
}

impl RuleSet {
    pub fn for_degree(q: usize) -> Arc<Self> {
        Arc::new(Self {
            volume: TriangleRule::with_degree(3 * q + 1),
            volume_elevated: TriangleRule::with_degree(3 * q + 3),
            face: EdgeRule::with_degree(3 * q + 1),
            face_elevated: EdgeRule::with_degree(3 * q + 3),
        })
    }
}

/// Basis tables at the nodes of one face rule: `[local_edge][direction]`,
/// direction 0 runs with the face parameter, direction 1 against it.
pub struct FaceTables {
    pub psi: [[DMatrix<f64>; 2]; 3],
    pub dpsi_xi: [[DMatrix<f64>; 2]; 3],
    pub dpsi_eta: [[DMatrix<f64>; 2]; 3],
}

fn face_tables(basis: &ReferenceBasis, rule: &EdgeRule) -> FaceTables {
    let tab = |le: usize, reversed: bool| {
        let points: Vec<[f64; 2]> = rule
            .points
            .iter()
            .map(|&s| Mesh::edge_ref_point(le, if reversed { 1.0 - s } else { s }))
            .collect();
        let psi = basis.tabulate(&points);
        let (gx, gy) = basis.tabulate_grad(&points);
        (psi, gx, gy)
    };
    let mut psi = Vec::new();
    let mut gx = Vec::new();
    let mut gy = Vec::new();
    for le in 0..3 {
        let (p0, x0, y0) = tab(le, false);
        let (p1, x1, y1) = tab(le, true);
        psi.push([p0, p1]);
        gx.push([x0, x1]);
        gy.push([y0, y1]);
    }
    FaceTables {
        psi: psi.try_into().unwrap(),
        dpsi_xi: gx.try_into().unwrap(),
        dpsi_eta: gy.try_into().unwrap(),
    }
}

/// Scalar broken polynomial space of a fixed degree on a mesh.
pub struct DgScalarSpace {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    pub basis: ReferenceBasis,
    pub rules: Arc<RuleSet>,
    /// Basis values at base volume nodes (row per node).
    pub vol_psi: DMatrix<f64>,
    pub vol_dpsi_xi: DMatrix<f64>,
    pub vol_dpsi_eta: DMatrix<f64>,
    pub elev_psi: DMatrix<f64>,
    pub elev_dpsi_xi: DMatrix<f64>,
    pub elev_dpsi_eta: DMatrix<f64>,
    pub face_tab: FaceTables,
    pub face_tab_elevated: FaceTables,
}

impl DgScalarSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize, rules: Arc<RuleSet>) -> Arc<Self> {
        let basis = ReferenceBasis::new(degree);
        let vol_points: Vec<[f64; 2]> =
            (0..rules.volume.len()).map(|k| rules.volume.ref_point(k)).collect();
        let elev_points: Vec<[f64; 2]> =
            (0..rules.volume_elevated.len()).map(|k| rules.volume_elevated.ref_point(k)).collect();
        let vol_psi = basis.tabulate(&vol_points);
        let (vol_dpsi_xi, vol_dpsi_eta) = basis.tabulate_grad(&vol_points);
        let elev_psi = basis.tabulate(&elev_points);
        let (elev_dpsi_xi, elev_dpsi_eta) = basis.tabulate_grad(&elev_points);
        let face_tab = face_tables(&basis, &rules.face);
        let face_tab_elevated = face_tables(&basis, &rules.face_elevated);
        Arc::new(Self {
            mesh,
            degree,
            basis,
            rules,
            vol_psi,
            vol_dpsi_xi,
            vol_dpsi_eta,
            elev_psi,
            elev_dpsi_xi,
            elev_dpsi_eta,
            face_tab,
            face_tab_elevated,
        })
    }

    pub fn ndof_element(&self) -> usize {
        self.basis.ndof
    }

    pub fn total_dofs(&self) -> usize {
        self.basis.ndof * self.mesh.n_elements()
    }

    pub fn element_dofs(&self, element: usize) -> std::ops::Range<usize> {
        let n = self.basis.ndof;
        element * n..(element + 1) * n
    }

    /// 1/sqrt(det J) scaling turning reference basis values into physical
    /// basis values on an element.
    pub fn scale(&self, element: usize) -> f64 {
        1.0 / self.mesh.geometry[element].det_jac.sqrt()
    }
}

impl std::fmt::Debug for DgScalarSpace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DgScalarSpace")
            .field("degree", &self.degree)
            .field("elements", &self.mesh.n_elements())
            .field("total_dofs", &self.total_dofs())
            .finish()
    }
}

/// Velocity space: two scalar components of the same degree.
///
/// Coefficients are stored element-major, each element block holding the
/// first component's dofs followed by the second component's.
#[derive(Debug, Clone)]
pub struct DgVectorSpace {
    pub component: Arc<DgScalarSpace>,
}

impl DgVectorSpace {
    pub fn new(component: Arc<DgScalarSpace>) -> Arc<Self> {
        Arc::new(Self { component })
    }

    pub fn total_dofs(&self) -> usize {
        2 * self.component.total_dofs()
    }

    pub fn ndof_element(&self) -> usize {
        2 * self.component.ndof_element()
    }

    /// Dof index of component `comp`, local basis function `i`, element `k`.
    pub fn dof(&self, element: usize, comp: usize, i: usize) -> usize {
        let n = self.component.ndof_element();
        element * 2 * n + comp * n + i
    }
}

/// Coefficients of a scalar broken-polynomial field.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub space: Arc<DgScalarSpace>,
    pub coeffs: Vec<f64>,
}

impl ScalarField {
    pub fn new(space: Arc<DgScalarSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.total_dofs());
        Self { space, coeffs }
    }

    pub fn zeros(space: Arc<DgScalarSpace>) -> Self {
        let n = space.total_dofs();
        Self::new(space, vec![0.0; n])
    }

    /// Value at a reference point of an element.
    pub fn eval(&self, element: usize, xi: f64, eta: f64) -> f64 {
        assert!(element < self.space.mesh.n_elements(), "element index out of range");
        let psi = self.space.basis.eval(xi, eta);
        let dofs = self.space.element_dofs(element);
        let scale = self.space.scale(element);
        psi.iter().zip(&self.coeffs[dofs]).map(|(p, c)| p * c).sum::<f64>() * scale
    }

    /// Physical gradient at a reference point of an element.
    pub fn eval_grad(&self, element: usize, xi: f64, eta: f64) -> [f64; 2] {
        let grads = self.space.basis.eval_grad(xi, eta);
        let dofs = self.space.element_dofs(element);
        let scale = self.space.scale(element);
        let it = &self.space.mesh.geometry[element].inv_jac_t;
        let mut gref = [0.0; 2];
        for (g, c) in grads.iter().zip(&self.coeffs[dofs]) {
            gref[0] += g[0] * c;
            gref[1] += g[1] * c;
        }
        [
            (it[0][0] * gref[0] + it[0][1] * gref[1]) * scale,
            (it[1][0] * gref[0] + it[1][1] * gref[1]) * scale,
        ]
    }

    /// Trace at parameter `s` along an interior or boundary face, taken from
    /// the given side.
    pub fn trace(&self, side: FaceSide, face_vertices: [usize; 2], s: f64) -> f64 {
        let forward = self.space.mesh.side_runs_forward(side, face_vertices);
        let t = if forward { s } else { 1.0 - s };
        let p = Mesh::edge_ref_point(side.local_edge, t);
        self.eval(side.element, p[0], p[1])
    }

    /// Jump and average at parameter `s` of interior face `face`; on a
    /// boundary face both coincide with the trace, see `boundary_trace`.
    pub fn jump_average(&self, face: usize, s: f64) -> (f64, f64) {
        let f = &self.space.mesh.interior_faces[face];
        let minus = self.trace(f.minus, f.vertices, s);
        let plus = self.trace(f.plus, f.vertices, s);
        (minus - plus, 0.5 * (minus + plus))
    }

    pub fn boundary_trace(&self, face: usize, s: f64) -> f64 {
        let f = &self.space.mesh.boundary_faces[face];
        self.trace(f.side, f.vertices, s)
    }
}

/// Coefficients of a vector field over a `DgVectorSpace`.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub space: Arc<DgVectorSpace>,
    pub coeffs: Vec<f64>,
}

impl VectorField {
    pub fn new(space: Arc<DgVectorSpace>, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), space.total_dofs());
        Self { space, coeffs }
    }

    pub fn zeros(space: Arc<DgVectorSpace>) -> Self {
        let n = space.total_dofs();
        Self::new(space, vec![0.0; n])
    }

    pub fn eval(&self, element: usize, xi: f64, eta: f64) -> [f64; 2] {
        let scalar = &self.space.component;
        let psi = scalar.basis.eval(xi, eta);
        let scale = scalar.scale(element);
        let mut out = [0.0; 2];
        for comp in 0..2 {
            for (i, p) in psi.iter().enumerate() {
                out[comp] += p * self.coeffs[self.space.dof(element, comp, i)];
            }
            out[comp] *= scale;
        }
        out
    }

    /// Physical gradient: `out[comp][d]` = d v_comp / d x_d.
    pub fn eval_grad(&self, element: usize, xi: f64, eta: f64) -> [[f64; 2]; 2] {
        let scalar = &self.space.component;
        let grads = scalar.basis.eval_grad(xi, eta);
        let scale = scalar.scale(element);
        let it = &scalar.mesh.geometry[element].inv_jac_t;
        let mut out = [[0.0; 2]; 2];
        for comp in 0..2 {
            let mut gref = [0.0; 2];
            for (i, g) in grads.iter().enumerate() {
                let c = self.coeffs[self.space.dof(element, comp, i)];
                gref[0] += g[0] * c;
                gref[1] += g[1] * c;
            }
            out[comp] = [
                (it[0][0] * gref[0] + it[0][1] * gref[1]) * scale,
                (it[1][0] * gref[0] + it[1][1] * gref[1]) * scale,
            ];
        }
        out
    }

    pub fn trace(&self, side: FaceSide, face_vertices: [usize; 2], s: f64) -> [f64; 2] {
        let forward = self.space.component.mesh.side_runs_forward(side, face_vertices);
        let t = if forward { s } else { 1.0 - s };
        let p = Mesh::edge_ref_point(side.local_edge, t);
        self.eval(side.element, p[0], p[1])
    }

    pub fn jump_average(&self, face: usize, s: f64) -> ([f64; 2], [f64; 2]) {
        let f = &self.space.component.mesh.interior_faces[face];
        let minus = self.trace(f.minus, f.vertices, s);
        let plus = self.trace(f.plus, f.vertices, s);
        (
            [minus[0] - plus[0], minus[1] - plus[1]],
            [0.5 * (minus[0] + plus[0]), 0.5 * (minus[1] + plus[1])],
        )
    }
}

/// L2 projection of an analytic function onto a scalar space, one local
/// mass solve per element. The right-hand side uses the elevated rule.
pub fn l2_project(
    space: &Arc<DgScalarSpace>,
    f: impl Fn([f64; 2]) -> f64 + Sync,
) -> Result<ScalarField, SpaceError> {
    let mesh = &space.mesh;
    let ndof = space.ndof_element();
    let rule = &space.rules.volume_elevated;
    let base = &space.rules.volume;

    let blocks = crate::parallel::map_indices(mesh.n_elements(), |k| {
        let geo = &mesh.geometry[k];
        let scale = space.scale(k);
        // Local mass matrix from the base rule.
        let mut mass = DMatrix::zeros(ndof, ndof);
        for q in 0..base.len() {
            let w = base.weights[q] * geo.det_jac * scale * scale;
            for i in 0..ndof {
                let pi = space.vol_psi[(q, i)];
                for j in 0..ndof {
                    mass[(i, j)] += w * pi * space.vol_psi[(q, j)];
                }
            }
        }
        let mut rhs = nalgebra::DVector::zeros(ndof);
        for q in 0..rule.len() {
            let p = rule.ref_point(q);
            let x = mesh.map_to_physical(k, p[0], p[1]);
            let w = rule.weights[q] * geo.det_jac * f(x) * scale;
            for i in 0..ndof {
                rhs[i] += w * space.elev_psi[(q, i)];
            }
        }
        nalgebra::Cholesky::new(mass).map(|ch| ch.solve(&rhs))
    });

    let mut coeffs = vec![0.0; space.total_dofs()];
    for (k, block) in blocks.into_iter().enumerate() {
        let block = block.ok_or(SpaceError::SingularLocalMass(k))?;
        coeffs[space.element_dofs(k)].copy_from_slice(block.as_slice());
    }
    Ok(ScalarField::new(space.clone(), coeffs))
}

/// Componentwise L2 projection of an analytic vector field.
pub fn l2_project_vector(
    space: &Arc<DgVectorSpace>,
    f: impl Fn([f64; 2]) -> [f64; 2] + Sync,
) -> Result<VectorField, SpaceError> {
    let c0 = l2_project(&space.component, |x| f(x)[0])?;
    let c1 = l2_project(&space.component, |x| f(x)[1])?;
    let scalar_n = space.component.ndof_element();
    let mut coeffs = vec![0.0; space.total_dofs()];
    for k in 0..space.component.mesh.n_elements() {
        for i in 0..scalar_n {
            coeffs[space.dof(k, 0, i)] = c0.coeffs[k * scalar_n + i];
            coeffs[space.dof(k, 1, i)] = c1.coeffs[k * scalar_n + i];
        }
    }
    Ok(VectorField::new(space.clone(), coeffs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn setup(n: usize, q: usize) -> Arc<DgScalarSpace> {
        let mesh = Mesh::structured_unit_square(n);
        DgScalarSpace::new(mesh, q, RuleSet::for_degree(q.max(1)))
    }

    #[test]
    fn total_dofs_count() {
        let space = setup(2, 2);
        assert_eq!(space.ndof_element(), 6);
        assert_eq!(space.total_dofs(), 8 * 6);
    }

    #[test]
    fn constant_field_reproduced() {
        let space = setup(2, 1);
        let f = l2_project(&space, |_| 1.0).unwrap();
        for k in 0..space.mesh.n_elements() {
            for &(xi, eta) in &[(0.2, 0.3), (0.0, 0.0), (1.0 / 3.0, 1.0 / 3.0)] {
                assert!((f.eval(k, xi, eta) - 1.0).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn linear_interpolant_at_centroid() {
        let space = setup(2, 1);
        let f = l2_project(&space, |x| x[0]).unwrap();
        for k in 0..space.mesh.n_elements() {
            let x = space.mesh.map_to_physical(k, 1.0 / 3.0, 1.0 / 3.0);
            assert!((f.eval(k, 1.0 / 3.0, 1.0 / 3.0) - x[0]).abs() <= 1e-13);
        }
    }

    #[test]
    fn zero_projects_to_zero_coefficients() {
        let space = setup(3, 2);
        let f = l2_project(&space, |_| 0.0).unwrap();
        assert!(f.coeffs.iter().all(|c| c.abs() <= 1e-14));
    }

    #[test]
    fn projection_reproduces_space_members() {
        // Project a broken polynomial that is already in the space and
        // compare coefficient vectors.
        let space = setup(2, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let coeffs: Vec<f64> = (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = ScalarField::new(space.clone(), coeffs.clone());
        // Evaluate g via closure per element; the projection is elementwise,
        // so find the containing element from the physical point.
        // Instead project elementwise using eval on the owning element:
        let proj = {
            let mesh = &space.mesh;
            let ndof = space.ndof_element();
            let rule = &space.rules.volume_elevated;
            let mut coeffs_out = vec![0.0; space.total_dofs()];
            for k in 0..mesh.n_elements() {
                let geo = &mesh.geometry[k];
                let scale = space.scale(k);
                for i in 0..ndof {
                    let mut acc = 0.0;
                    for q in 0..rule.len() {
                        let p = rule.ref_point(q);
                        acc += rule.weights[q]
                            * geo.det_jac
                            * g.eval(k, p[0], p[1])
                            * space.elev_psi[(q, i)]
                            * scale;
                    }
                    coeffs_out[k * ndof + i] = acc;
                }
            }
            coeffs_out
        };
        for (a, b) in proj.iter().zip(&coeffs) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn l2_projection_error_decays_second_order_for_p1() {
        let err = |n: usize| {
            let space = setup(n, 1);
            let f = l2_project(&space, |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
            let rule = &space.rules.volume_elevated;
            let mut e2 = 0.0;
            for k in 0..space.mesh.n_elements() {
                let geo = &space.mesh.geometry[k];
                for q in 0..rule.len() {
                    let p = rule.ref_point(q);
                    let x = space.mesh.map_to_physical(k, p[0], p[1]);
                    let d = f.eval(k, p[0], p[1]) - (std::f64::consts::PI * x[0]).sin();
                    e2 += rule.weights[q] * geo.det_jac * d * d;
                }
            }
            e2.sqrt()
        };
        let ratio = err(4) / err(8);
        assert!((3.0..5.0).contains(&ratio), "L2 error ratio {ratio}");
    }

    #[test]
    fn eval_matches_monomial_expansion() {
        // Independent evaluation path: expand each basis function into
        // monomials and evaluate by powers.
        let space = setup(2, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let coeffs: Vec<f64> = (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ScalarField::new(space.clone(), coeffs.clone());
        let rule = &space.rules.volume;
        for k in 0..space.mesh.n_elements() {
            let scale = space.scale(k);
            for q in 0..rule.len() {
                let [xi, eta] = rule.ref_point(q);
                let mut expansion = 0.0;
                for (i, dof) in space.element_dofs(k).enumerate() {
                    for (a, b, coef) in space.basis.monomial_coefficients(i) {
                        expansion +=
                            coeffs[dof] * coef * xi.powi(a as i32) * eta.powi(b as i32) * scale;
                    }
                }
                assert!((f.eval(k, xi, eta) - expansion).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn continuous_field_has_zero_jump() {
        let space = setup(2, 2);
        let f = l2_project(&space, |x| x[0] * x[0] + 0.5 * x[1]).unwrap();
        for face in 0..space.mesh.interior_faces.len() {
            for &s in &[0.0, 0.25, 0.7, 1.0] {
                let (jump, avg) = f.jump_average(face, s);
                assert!(jump.abs() <= 1e-12);
                // Average equals the trace of the continuous function.
                let fc = &space.mesh.interior_faces[face];
                let minus = f.trace(fc.minus, fc.vertices, s);
                assert!((avg - minus).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn indicator_field_jump_is_one_average_half() {
        let space = setup(1, 1);
        let face = &space.mesh.interior_faces[0];
        // 1 on the minus element, 0 on the plus element.
        let mut coeffs = vec![0.0; space.total_dofs()];
        let det = space.mesh.geometry[face.minus.element].det_jac;
        // Constant 1 has coefficient sqrt(det)/sqrt(2) on the first mode.
        coeffs[space.element_dofs(face.minus.element).start] = (det / 2.0).sqrt();
        let f = ScalarField::new(space.clone(), coeffs);
        let (jump, avg) = f.jump_average(0, 0.5);
        assert!((jump - 1.0).abs() <= 1e-13);
        assert!((avg - 0.5).abs() <= 1e-13);
    }

    #[test]
    fn boundary_jump_and_average_coincide_with_trace() {
        let space = setup(2, 1);
        let f = l2_project(&space, |x| 2.0 * x[0] - x[1]).unwrap();
        for bf in 0..space.mesh.boundary_faces.len() {
            let face = &space.mesh.boundary_faces[bf];
            let tr = f.trace(face.side, face.vertices, 0.3);
            assert!((f.boundary_trace(bf, 0.3) - tr).abs() <= 1e-14);
        }
    }

    #[test]
    fn face_tables_agree_with_direct_evaluation() {
        let space = setup(2, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let coeffs: Vec<f64> = (0..space.total_dofs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = ScalarField::new(space.clone(), coeffs.clone());
        let rule = &space.rules.face;
        for face in &space.mesh.interior_faces {
            for side in [face.minus, face.plus] {
                let forward = space.mesh.side_runs_forward(side, face.vertices);
                let dir = if forward { 0 } else { 1 };
                let table = &space.face_tab.psi[side.local_edge][dir];
                let scale = space.scale(side.element);
                for (q, &s) in rule.points.iter().enumerate() {
                    let via_table: f64 = space
                        .element_dofs(side.element)
                        .enumerate()
                        .map(|(i, dof)| coeffs[dof] * table[(q, i)] * scale)
                        .sum();
                    let direct = f.trace(side, face.vertices, s);
                    assert!((via_table - direct).abs() <= 1e-13);
                }
            }
        }
    }

    #[test]
    fn local_mass_matrices_are_identity() {
        let space = setup(2, 2);
        let base = &space.rules.volume;
        for k in 0..space.mesh.n_elements() {
            let geo = &space.mesh.geometry[k];
            let s = space.scale(k);
            for i in 0..space.ndof_element() {
                for j in 0..space.ndof_element() {
                    let m: f64 = (0..base.len())
                        .map(|q| {
                            base.weights[q] * geo.det_jac * s * s
                                * space.vol_psi[(q, i)]
                                * space.vol_psi[(q, j)]
                        })
                        .sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    assert!((m - expected).abs() <= 1e-13);
                }
            }
        }
    }
}
