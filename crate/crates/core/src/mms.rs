//! Manufactured-solution verification driver.
//!
//! A closed-form exact solution compatible with all boundary conditions
//! induces forcing terms in the mass and momentum equations (the chemical
//! potential is constructed consistently, so its equation stays
//! forcing-free). Running the scheme against such a case at a sequence of
//! resolutions yields the observed convergence orders.

use std::sync::Arc;

use crate::diagnostics::total_mass;
use crate::forms::default_sigma;
use crate::mesh::Mesh;
use crate::potential::Potential;
use crate::space::{ScalarField, VectorField};
use crate::stepper::{SchemeParams, SourceTerms, StepError, Stepper};

type ScalarFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn([f64; 2], f64) -> [f64; 2] + Send + Sync>;
type MatrixFn = Arc<dyn Fn([f64; 2], f64) -> [[f64; 2]; 2] + Send + Sync>;

/// Exact solution with induced forcings.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub kappa: f64,
    pub mu_s: f64,
    pub c: ScalarFn,
    pub grad_c: VectorFn,
    pub v: VectorFn,
    pub grad_v: MatrixFn,
    pub p: ScalarFn,
    pub mu: ScalarFn,
    pub grad_mu: VectorFn,
    pub f_c: ScalarFn,
    pub f_v: VectorFn,
}

impl ManufacturedCase {
    pub fn div_v(&self, x: [f64; 2], t: f64) -> f64 {
        let g = (self.grad_v)(x, t);
        g[0][0] + g[1][1]
    }

    pub fn sources(&self) -> SourceTerms {
        let f_c = self.f_c.clone();
        let f_v = self.f_v.clone();
        SourceTerms {
            f_c: Box::new(move |x, t| f_c(x, t)),
            f_v: Box::new(move |x, t| f_v(x, t)),
            // Every case here has a mass source with vanishing integral.
            zero_mean_f_c: true,
        }
    }
}

/// Default case on the unit square with the double-well potential:
/// decaying cosine order parameter, a divergence-free stream-function
/// velocity with zero boundary trace, and a zero-mean cosine pressure. All
/// forcing terms are hand-derived closed forms.
pub fn builtin_case(kappa: f64, mu_s: f64) -> ManufacturedCase {
    let pi = std::f64::consts::PI;
    // Decay rate of all fields; fast enough that the temporal error is
    // visible above the spatial floor on the study meshes.
    let gamma = 3.0;
    let et = move |t: f64| (-gamma * t).exp();
    // Stream function building blocks: s2(u) = sin^2(pi u) and its chain of
    // derivatives d(u) = pi sin(2 pi u), dp(u) = 2 pi^2 cos(2 pi u).
    let s2 = move |u: f64| (pi * u).sin().powi(2);
    let d = move |u: f64| pi * (2.0 * pi * u).sin();
    let dp = move |u: f64| 2.0 * pi * pi * (2.0 * pi * u).cos();

    let c = move |x: [f64; 2], t: f64| et(t) * (pi * x[0]).cos() * (pi * x[1]).cos();
    let grad_c = move |x: [f64; 2], t: f64| {
        let e = et(t);
        [
            -pi * e * (pi * x[0]).sin() * (pi * x[1]).cos(),
            -pi * e * (pi * x[0]).cos() * (pi * x[1]).sin(),
        ]
    };
    let v = move |x: [f64; 2], t: f64| {
        let e = et(t);
        [e * s2(x[0]) * d(x[1]), -e * d(x[0]) * s2(x[1])]
    };
    let grad_v = move |x: [f64; 2], t: f64| {
        let e = et(t);
        [
            [e * d(x[0]) * d(x[1]), e * s2(x[0]) * dp(x[1])],
            [-e * dp(x[0]) * s2(x[1]), -e * d(x[0]) * d(x[1])],
        ]
    };
    let laplace_v = move |x: [f64; 2], t: f64| {
        let e = et(t);
        [
            e * d(x[1]) * (dp(x[0]) - 4.0 * pi * pi * s2(x[0])),
            -e * d(x[0]) * (dp(x[1]) - 4.0 * pi * pi * s2(x[1])),
        ]
    };
    let p = move |x: [f64; 2], t: f64| et(t) * (pi * x[0]).cos();
    let grad_p = move |x: [f64; 2], t: f64| [-pi * et(t) * (pi * x[0]).sin(), 0.0];

    // mu = Phi'(c) - kappa lap(c) = c^3 + a c with a = 2 kappa pi^2 - 1.
    let a = 2.0 * kappa * pi * pi - 1.0;
    let mu = move |x: [f64; 2], t: f64| {
        let cv = c(x, t);
        cv * cv * cv + a * cv
    };
    let grad_mu = move |x: [f64; 2], t: f64| {
        let cv = c(x, t);
        let g = grad_c(x, t);
        let dmu = 3.0 * cv * cv + a;
        [dmu * g[0], dmu * g[1]]
    };

    // f_c = dc/dt - lap(mu) + div(c v), with
    // lap(mu) = 6 c |grad c|^2 + (3 c^2 + a) lap(c) and lap(c) = -2 pi^2 c.
    let f_c = move |x: [f64; 2], t: f64| {
        let cv = c(x, t);
        let g = grad_c(x, t);
        let vv = v(x, t);
        let grad_c_sq = g[0] * g[0] + g[1] * g[1];
        let lap_mu = 6.0 * cv * grad_c_sq - 2.0 * pi * pi * cv * (3.0 * cv * cv + a);
        -gamma * cv - lap_mu + (g[0] * vv[0] + g[1] * vv[1])
    };

    // f_v = dv/dt + (v . grad) v - mu_s lap(v) + grad p + c grad mu.
    let f_v = move |x: [f64; 2], t: f64| {
        let vv = v(x, t);
        let gv = grad_v(x, t);
        let lv = laplace_v(x, t);
        let gp = grad_p(x, t);
        let cv = c(x, t);
        let gmu = grad_mu(x, t);
        let mut out = [0.0; 2];
        for comp in 0..2 {
            let convection = vv[0] * gv[comp][0] + vv[1] * gv[comp][1];
            out[comp] =
                -gamma * vv[comp] + convection - mu_s * lv[comp] + gp[comp] + cv * gmu[comp];
        }
        out
    };

    ManufacturedCase {
        kappa,
        mu_s,
        c: Arc::new(c),
        grad_c: Arc::new(grad_c),
        v: Arc::new(v),
        grad_v: Arc::new(grad_v),
        p: Arc::new(p),
        mu: Arc::new(mu),
        grad_mu: Arc::new(grad_mu),
        f_c: Arc::new(f_c),
        f_v: Arc::new(f_v),
    }
}

/// Spatially constant stationary solution; all forcings vanish, so the
/// scheme must reproduce it to roundoff.
pub fn stationary_case(cbar: f64, kappa: f64, mu_s: f64) -> ManufacturedCase {
    let pot = Potential::ginzburg_landau();
    let mu_val = pot.dphi(cbar);
    ManufacturedCase {
        kappa,
        mu_s,
        c: Arc::new(move |_, _| cbar),
        grad_c: Arc::new(|_, _| [0.0, 0.0]),
        v: Arc::new(|_, _| [0.0, 0.0]),
        grad_v: Arc::new(|_, _| [[0.0, 0.0], [0.0, 0.0]]),
        p: Arc::new(|_, _| 0.0),
        mu: Arc::new(move |_, _| mu_val),
        grad_mu: Arc::new(|_, _| [0.0, 0.0]),
        f_c: Arc::new(|_, _| 0.0),
        f_v: Arc::new(|_, _| [0.0, 0.0]),
    }
}

/// DG-seminorm error of a scalar field against a smooth exact solution
/// (elevated quadrature; the exact field carries no jumps).
pub fn dg_error_scalar(
    fh: &ScalarField,
    exact_grad: impl Fn([f64; 2]) -> [f64; 2],
    sigma: f64,
) -> f64 {
    let space = &fh.space;
    let mesh = &space.mesh;
    let rule = &space.rules.volume_elevated;
    let face_rule = &space.rules.face_elevated;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let p = rule.ref_point(q);
            let x = mesh.map_to_physical(k, p[0], p[1]);
            let gh = fh.eval_grad(k, p[0], p[1]);
            let ge = exact_grad(x);
            acc += rule.weights[q] * det * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
        }
    }
    for fi in 0..mesh.interior_faces.len() {
        for q in 0..face_rule.len() {
            let (jump, _) = fh.jump_average(fi, face_rule.points[q]);
            acc += face_rule.weights[q] * sigma * jump * jump;
        }
    }
    acc.sqrt()
}

/// L2 error of a vector field against the exact velocity.
pub fn l2_error_velocity(vh: &VectorField, exact: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let vsp = &vh.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume_elevated;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let p = rule.ref_point(q);
            let x = mesh.map_to_physical(k, p[0], p[1]);
            let val = vh.eval(k, p[0], p[1]);
            let ex = exact(x);
            acc += rule.weights[q] * det * ((val[0] - ex[0]).powi(2) + (val[1] - ex[1]).powi(2));
        }
    }
    acc.sqrt()
}

/// DG-norm error of the velocity (interior jumps of the discrete field,
/// boundary misfit against the exact trace).
pub fn dg_error_velocity(
    vh: &VectorField,
    exact: impl Fn([f64; 2]) -> [f64; 2],
    exact_grad: impl Fn([f64; 2]) -> [[f64; 2]; 2],
    sigma: f64,
) -> f64 {
    let vsp = &vh.space.component;
    let mesh = &vsp.mesh;
    let rule = &vsp.rules.volume_elevated;
    let face_rule = &vsp.rules.face_elevated;
    let mut acc = 0.0;
    for k in 0..mesh.n_elements() {
        let det = mesh.geometry[k].det_jac;
        for q in 0..rule.len() {
            let p = rule.ref_point(q);
            let x = mesh.map_to_physical(k, p[0], p[1]);
            let gh = vh.eval_grad(k, p[0], p[1]);
            let ge = exact_grad(x);
            for comp in 0..2 {
                acc += rule.weights[q]
                    * det
                    * ((gh[comp][0] - ge[comp][0]).powi(2) + (gh[comp][1] - ge[comp][1]).powi(2));
            }
        }
    }
    for fi in 0..mesh.interior_faces.len() {
        for q in 0..face_rule.len() {
            let (jump, _) = vh.jump_average(fi, face_rule.points[q]);
            acc += face_rule.weights[q] * sigma * (jump[0] * jump[0] + jump[1] * jump[1]);
        }
    }
    for face in &mesh.boundary_faces {
        for q in 0..face_rule.len() {
            let s = face_rule.points[q];
            let t = vh.trace(face.side, face.vertices, s);
            let forward = mesh.side_runs_forward(face.side, face.vertices);
            let tt = if forward { s } else { 1.0 - s };
            let rp = Mesh::edge_ref_point(face.side.local_edge, tt);
            let x = mesh.map_to_physical(face.side.element, rp[0], rp[1]);
            let ex = exact(x);
            acc += face_rule.weights[q]
                * sigma
                * ((t[0] - ex[0]).powi(2) + (t[1] - ex[1]).powi(2));
        }
    }
    acc.sqrt()
}

/// Which refinement parameter a study varies; sets the denominator of the
/// observed-order computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyAxis {
    MeshWidth,
    TimeStep,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub err_c_dg: f64,
    pub err_v_l2: f64,
    pub err_v_dg_acc: f64,
    pub err_mu_dg_acc: f64,
    pub max_mass_drift: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceTable {
    pub axis: StudyAxis,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    fn columns(row: &ConvergenceRow) -> [f64; 4] {
        [row.err_c_dg, row.err_v_l2, row.err_v_dg_acc, row.err_mu_dg_acc]
    }

    /// Observed orders between consecutive rows; `None` when undefined
    /// (first row, roundoff-level errors, or a non-refining parameter).
    pub fn eoc(&self) -> Vec<[Option<f64>; 4]> {
        let param = |row: &ConvergenceRow| match self.axis {
            StudyAxis::MeshWidth => row.h,
            StudyAxis::TimeStep => row.tau,
        };
        let mut out = vec![[None; 4]];
        for pair in self.rows.windows(2) {
            let ratio = param(&pair[0]) / param(&pair[1]);
            let mut row_eoc = [None; 4];
            if ratio > 1.0 {
                let coarse = Self::columns(&pair[0]);
                let fine = Self::columns(&pair[1]);
                for k in 0..4 {
                    if coarse[k] > 1e-13 && fine[k] > 1e-13 {
                        row_eoc[k] = Some((coarse[k] / fine[k]).ln() / ratio.ln());
                    }
                }
            }
            out.push(row_eoc);
        }
        out
    }

    pub fn write_csv(&self, mut out: impl std::io::Write) -> std::io::Result<()> {
        writeln!(
            out,
            "n,h,tau,err_c_dg,err_v_l2,err_v_dg_acc,err_mu_dg_acc,eoc_c_dg,eoc_v_l2,eoc_v_dg_acc,eoc_mu_dg_acc"
        )?;
        let eoc = self.eoc();
        for (row, eoc_row) in self.rows.iter().zip(eoc) {
            let fmt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                row.n,
                row.h,
                row.tau,
                row.err_c_dg,
                row.err_v_l2,
                row.err_v_dg_acc,
                row.err_mu_dg_acc,
                fmt(eoc_row[0]),
                fmt(eoc_row[1]),
                fmt(eoc_row[2]),
                fmt(eoc_row[3])
            )?;
        }
        Ok(())
    }
}

/// Run the scheme against a manufactured case on a list of (mesh size,
/// step count) configurations and collect the error table.
pub fn run_convergence(
    case: &ManufacturedCase,
    q: usize,
    configs: &[(usize, usize)],
    t_final: f64,
    axis: StudyAxis,
) -> Result<ConvergenceTable, StepError> {
    let runs = crate::parallel::map_indices(configs.len(), |idx| {
        let (n, steps) = configs[idx];
        single_run(case, q, n, steps, t_final)
    });
    let mut rows = Vec::new();
    for run in runs {
        rows.push(run?);
    }
    Ok(ConvergenceTable { axis, rows })
}

fn single_run(
    case: &ManufacturedCase,
    q: usize,
    n: usize,
    steps: usize,
    t_final: f64,
) -> Result<ConvergenceRow, StepError> {
    let tau = t_final / steps as f64;
    let mesh = Mesh::structured_unit_square(n);
    let h = mesh.h_max;
    let sigma = default_sigma(q);
    let params = SchemeParams::new(tau, case.kappa, case.mu_s, sigma, Potential::ginzburg_landau());
    let stepper = Stepper::new(mesh, q, params)?.with_sources(case.sources());

    let c0 = case.c.clone();
    let gc0 = case.grad_c.clone();
    let v0 = case.v.clone();
    let mut state =
        stepper.initialize(move |x| c0(x, 0.0), move |x| gc0(x, 0.0), move |x| v0(x, 0.0))?;
    let mass0 = total_mass(&state.c);

    let mut err_c_dg: f64 = 0.0;
    let mut err_v_l2: f64 = 0.0;
    let mut acc_v_dg = 0.0;
    let mut acc_mu_dg = 0.0;
    let mut max_mass_drift: f64 = 0.0;
    for _ in 0..steps {
        state = stepper.step(&state)?;
        let t = state.time;
        let gc = case.grad_c.clone();
        err_c_dg = err_c_dg.max(dg_error_scalar(&state.c, |x| gc(x, t), sigma));
        let ve = case.v.clone();
        err_v_l2 = err_v_l2.max(l2_error_velocity(&state.v, |x| ve(x, t)));
        let ve = case.v.clone();
        let gve = case.grad_v.clone();
        let e_v_dg = dg_error_velocity(&state.v, |x| ve(x, t), |x| gve(x, t), sigma);
        acc_v_dg += tau * e_v_dg * e_v_dg;
        let gmu = case.grad_mu.clone();
        let mu_h = state.mu.as_ref().expect("stepped state has mu");
        let e_mu = dg_error_scalar(mu_h, |x| gmu(x, t), sigma);
        acc_mu_dg += tau * e_mu * e_mu;
        max_mass_drift = max_mass_drift.max((total_mass(&state.c) - mass0).abs());
    }
    Ok(ConvergenceRow {
        n,
        h,
        tau,
        err_c_dg,
        err_v_l2,
        err_v_dg_acc: acc_v_dg.sqrt(),
        err_mu_dg_acc: acc_mu_dg.sqrt(),
        max_mass_drift,
    })
}
