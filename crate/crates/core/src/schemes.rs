//! Backward Euler time stepping: the semi-implicit scheme (weight and
//! lower-order coefficient lagged, one linear solve per step) and the fully
//! implicit scheme solved by Kacanov or damped Newton iteration.

use crate::assembly::P1Space;
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::linalg::{norm2, EnvelopeCholesky, LinearSolver, SymSparse};
use crate::lower_order::{LowerOrderCoeff, SchemeKind};
use crate::mesh::{FemFunction, TriMesh};
use crate::orlicz::RegularizedDensity;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

pub const DEFAULT_TOL_RES: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NonlinearSolver {
    Kacanov { tol_res: f64, max_iter: usize },
    NewtonDamped { tol_res: f64, max_iter: usize },
}

impl Default for NonlinearSolver {
    fn default() -> Self {
        NonlinearSolver::Kacanov {
            tol_res: DEFAULT_TOL_RES,
            max_iter: 200,
        }
    }
}

impl NonlinearSolver {
    pub fn tol_res(&self) -> f64 {
        match *self {
            NonlinearSolver::Kacanov { tol_res, .. } | NonlinearSolver::NewtonDamped { tol_res, .. } => tol_res,
        }
    }

    fn validate(&self) -> Result<()> {
        let (tol, max_iter) = match *self {
            NonlinearSolver::Kacanov { tol_res, max_iter }
            | NonlinearSolver::NewtonDamped { tol_res, max_iter } => (tol_res, max_iter),
        };
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::param("tol_res", format!("must be > 0, got {tol}")));
        }
        if max_iter == 0 {
            return Err(Error::param("max_iter", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub density: RegularizedDensity,
    pub final_time: f64,
    pub steps: usize,
    pub coeff: LowerOrderCoeff,
    pub scheme: SchemeKind,
    pub source: ScalarField,
    #[serde(default)]
    pub linear_solver: LinearSolver,
    #[serde(default)]
    pub nonlinear: NonlinearSolver,
}

impl SchemeConfig {
    /// Semi-implicit pure gradient flow with direct solves.
    pub fn new(density: RegularizedDensity, final_time: f64, steps: usize) -> Self {
        SchemeConfig {
            density,
            final_time,
            steps,
            coeff: LowerOrderCoeff::Zero,
            scheme: SchemeKind::SemiImplicit,
            source: ScalarField::Zero,
            linear_solver: LinearSolver::Cholesky,
            nonlinear: NonlinearSolver::default(),
        }
    }

    pub fn with_scheme(mut self, scheme: SchemeKind) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_coeff(mut self, coeff: LowerOrderCoeff) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn with_source(mut self, source: ScalarField) -> Self {
        self.source = source;
        self
    }

    pub fn with_nonlinear(mut self, nonlinear: NonlinearSolver) -> Self {
        self.nonlinear = nonlinear;
        self
    }

    pub fn with_linear_solver(mut self, linear_solver: LinearSolver) -> Self {
        self.linear_solver = linear_solver;
        self
    }

    /// `τ = T / K`; zero for `K = 0`.
    pub fn tau(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.final_time / self.steps as f64
        }
    }

    pub fn eps(&self) -> f64 {
        self.density.eps
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.final_time
        } else {
            k as f64 * self.tau()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let eps = self.density.eps;
        match self.scheme {
            SchemeKind::SemiImplicit => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(Error::param(
                        "eps",
                        format!("semi-implicit scheme requires eps in (0, 1), got {eps}"),
                    ));
                }
            }
            SchemeKind::Implicit => {
                if !(0.0..1.0).contains(&eps) {
                    return Err(Error::param(
                        "eps",
                        format!("implicit scheme requires eps in [0, 1), got {eps}"),
                    ));
                }
                if !self.density.is_nondegenerate() {
                    return Err(Error::param(
                        "eps",
                        "eps = 0 needs delta > 0 (or p = 2) for the implicit solvers",
                    ));
                }
            }
        }
        if !(self.final_time.is_finite() && self.final_time >= 0.0) {
            return Err(Error::param("T", format!("must be finite and >= 0, got {}", self.final_time)));
        }
        if self.steps > 0 && self.final_time <= 0.0 {
            return Err(Error::param("T", "must be > 0 when K > 0"));
        }
        self.coeff.validate()?;
        self.linear_solver.validate()?;
        self.nonlinear.validate()
    }
}

/// Solver statistics of one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Linear solves (semi-implicit: 1; Kacanov: iterations; Newton: steps).
    pub iterations: usize,
    /// Euclidean norm of the final discrete residual on the free nodes.
    pub residual: f64,
    /// Tolerance the residual was tested against.
    pub tolerance: f64,
}

/// Time stepper bound to one space and configuration.
#[derive(Debug)]
pub struct Stepper {
    space: Arc<P1Space>,
    cfg: SchemeConfig,
    /// Factorization of `M/τ + K`, reused when the system does not depend on
    /// the lag (p = 2, no lower-order term).
    frozen: OnceLock<std::result::Result<EnvelopeCholesky, String>>,
}

impl Stepper {
    pub fn new(space: Arc<P1Space>, cfg: SchemeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Stepper {
            space,
            cfg,
            frozen: OnceLock::new(),
        })
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    fn is_linear(&self) -> bool {
        self.cfg.density.p() == 2.0 && self.cfg.coeff.is_zero()
    }

    /// `M/τ + K_w(v) + M_d(v)`.
    pub fn lagged_matrix(&self, v: &FemFunction) -> Result<SymSparse> {
        let tau = self.cfg.tau();
        let mut a = self.space.weighted_stiffness(v, &self.cfg.density)?;
        a.add_scaled(1.0 / tau, self.space.mass_matrix());
        if !self.cfg.coeff.is_zero() {
            a.add_scaled(1.0, &self.space.weighted_mass(v, &self.cfg.coeff)?);
        }
        Ok(a)
    }

    /// `M u_prev / τ + F(t_k)`.
    fn rhs(&self, u_prev: &FemFunction, k: usize) -> Vec<f64> {
        let tau = self.cfg.tau();
        let mut b = self.space.mass_matrix().matvec(u_prev.coeffs());
        b.iter_mut().for_each(|v| *v /= tau);
        if !self.cfg.source.is_zero() {
            let f = self.space.load_vector(&self.cfg.source, self.cfg.time(k));
            b.iter_mut().zip(f).for_each(|(v, f)| *v += f);
        }
        b
    }

    fn solve(&self, a: &SymSparse, b: &[f64]) -> Result<(Vec<f64>, f64)> {
        if self.is_linear() && self.cfg.linear_solver == LinearSolver::Cholesky {
            let f = self
                .frozen
                .get_or_init(|| EnvelopeCholesky::factor(a).map_err(|e| e.to_string()));
            if let Ok(f) = f {
                let x = f.solve(b);
                let r = crate::linalg::residual_norm(a, &x, b);
                return Ok((x, r));
            }
        }
        match self.cfg.linear_solver.solve(a, b) {
            Ok(s) => Ok((s.x, s.residual)),
            Err(e) => {
                if self.cfg.coeff.c7() > 0.0 {
                    log::warn!(
                        "linear solve failed with c7 = {} > 0: M/τ + M_d may be indefinite for tau = {}",
                        self.cfg.coeff.c7(),
                        self.cfg.tau()
                    );
                }
                Err(e)
            }
        }
    }

    /// Solves the linear system lagged at `v` with data `u_prev`, `t_k`.
    fn lagged_solve(&self, v: &FemFunction, u_prev: &FemFunction, k: usize) -> Result<(FemFunction, f64)> {
        let a = self.lagged_matrix(v)?;
        let b = self.rhs(u_prev, k);
        let (x, r) = self.solve(&a, &b)?;
        Ok((FemFunction::from_coeffs(self.space.mesh(), x)?, r))
    }

    pub fn semi_implicit_step(&self, u_prev: &FemFunction, k: usize) -> Result<(FemFunction, StepStats)> {
        u_prev.check_mesh(self.space.mesh())?;
        let (u, r) = self.lagged_solve(u_prev, u_prev, k)?;
        let tolerance = match self.cfg.linear_solver {
            LinearSolver::Cholesky => f64::NAN,
            LinearSolver::Cg { tol_rel, .. } => tol_rel,
        };
        Ok((
            u,
            StepStats {
                iterations: 1,
                residual: r,
                tolerance,
            },
        ))
    }

    /// Residual of the implicit equation at `v`:
    /// `M(v - u_prev)/τ + K_w(v)v + M_d(v)v - F(t_k)`.
    pub fn implicit_residual(&self, v: &FemFunction, u_prev: &FemFunction, f: &[f64]) -> Vec<f64> {
        let tau = self.cfg.tau();
        let diff = v.axpby(1.0, u_prev, -1.0);
        let mut r = self.space.mass_matrix().matvec(diff.coeffs());
        let flux = self.space.flux_vector(v, &self.cfg.density);
        let low = self.space.lower_order_vector(v, &self.cfg.coeff);
        for i in 0..r.len() {
            r[i] = r[i] / tau + flux[i] + low[i] - f[i];
        }
        r
    }

    /// First Kacanov iterate `v₁` from `v₀ = u_prev`.
    pub fn first_kacanov_iterate(&self, u_prev: &FemFunction, k: usize) -> Result<FemFunction> {
        Ok(self.lagged_solve(u_prev, u_prev, k)?.0)
    }

    pub fn implicit_step(&self, u_prev: &FemFunction, k: usize) -> Result<(FemFunction, StepStats)> {
        u_prev.check_mesh(self.space.mesh())?;
        let f = self.space.load_vector(&self.cfg.source, self.cfg.time(k));
        let tol = self.cfg.nonlinear.tol_res() * (1.0 + norm2(&f));
        match self.cfg.nonlinear {
            NonlinearSolver::Kacanov { max_iter, .. } => {
                let mut v = u_prev.clone();
                let mut history = Vec::new();
                for it in 1..=max_iter {
                    v = self.lagged_solve(&v, u_prev, k)?.0;
                    let r = norm2(&self.implicit_residual(&v, u_prev, &f));
                    history.push(r);
                    if r <= tol {
                        return Ok((
                            v,
                            StepStats {
                                iterations: it,
                                residual: r,
                                tolerance: tol,
                            },
                        ));
                    }
                }
                Err(Error::NonConvergence {
                    iterations: max_iter,
                    residual: *history.last().unwrap_or(&f64::NAN),
                    history,
                })
            }
            NonlinearSolver::NewtonDamped { max_iter, .. } => self.newton(u_prev, &f, tol, max_iter),
        }
    }

    fn newton(
        &self,
        u_prev: &FemFunction,
        f: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> Result<(FemFunction, StepStats)> {
        let tau = self.cfg.tau();
        let mut v = u_prev.clone();
        let mut r = self.implicit_residual(&v, u_prev, f);
        let mut rn = norm2(&r);
        let mut history = vec![rn];
        for it in 0..max_iter {
            if rn <= tol {
                return Ok((
                    v,
                    StepStats {
                        iterations: it,
                        residual: rn,
                        tolerance: tol,
                    },
                ));
            }
            let mut j = self.space.flux_jacobian(&v, &self.cfg.density);
            j.add_scaled(1.0 / tau, self.space.mass_matrix());
            if !self.cfg.coeff.is_zero() {
                j.add_scaled(1.0, &self.space.lower_order_jacobian(&v, &self.cfg.coeff));
            }
            let neg: Vec<f64> = r.iter().map(|x| -x).collect();
            let (dx, _) = self.solve(&j, &neg)?;
            let dir = FemFunction::from_coeffs(self.space.mesh(), dx)?;
            let mut lambda = 1.0;
            loop {
                let trial = v.axpby(1.0, &dir, lambda);
                let tr = self.implicit_residual(&trial, u_prev, f);
                let tn = norm2(&tr);
                if tn <= (1.0 - 1e-4 * lambda) * rn || tn <= tol {
                    v = trial;
                    r = tr;
                    rn = tn;
                    break;
                }
                lambda *= 0.5;
                if lambda < 1e-10 {
                    return Err(Error::LineSearch {
                        iteration: it + 1,
                        residual: rn,
                    });
                }
            }
            history.push(rn);
        }
        if rn <= tol {
            return Ok((
                v,
                StepStats {
                    iterations: max_iter,
                    residual: rn,
                    tolerance: tol,
                },
            ));
        }
        Err(Error::NonConvergence {
            iterations: max_iter,
            residual: rn,
            history,
        })
    }

    pub fn step(&self, u_prev: &FemFunction, k: usize) -> Result<(FemFunction, StepStats)> {
        match self.cfg.scheme {
            SchemeKind::SemiImplicit => self.semi_implicit_step(u_prev, k),
            SchemeKind::Implicit => self.implicit_step(u_prev, k),
        }
    }

    pub fn run(&self, u0: &FemFunction) -> Result<Trajectory> {
        u0.check_mesh(self.space.mesh())?;
        let mut iterates = Vec::with_capacity(self.cfg.steps + 1);
        let mut stats = Vec::with_capacity(self.cfg.steps);
        iterates.push(u0.clone());
        for k in 1..=self.cfg.steps {
            let (u, s) = self
                .step(&iterates[k - 1], k)
                .map_err(|e| Error::Step {
                    step: k,
                    source: Box::new(e),
                })?;
            iterates.push(u);
            stats.push(s);
        }
        Ok(Trajectory {
            config: self.cfg,
            space: self.space.clone(),
            iterates,
            stats,
        })
    }
}

/// Outcome of comparing the first Kacanov iterate with the semi-implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KacanovIdentity {
    pub max_diff: f64,
    pub holds: bool,
}

pub fn first_kacanov_equals_semi_implicit(
    space: &Arc<P1Space>,
    u_prev: &FemFunction,
    cfg: &SchemeConfig,
    k: usize,
) -> Result<KacanovIdentity> {
    let semi = Stepper::new(space.clone(), cfg.with_scheme(SchemeKind::SemiImplicit))?;
    let imp = Stepper::new(space.clone(), cfg.with_scheme(SchemeKind::Implicit))?;
    let (u, _) = semi.semi_implicit_step(u_prev, k)?;
    let v = imp.first_kacanov_iterate(u_prev, k)?;
    let max_diff = u.max_abs_diff(&v);
    Ok(KacanovIdentity {
        max_diff,
        holds: max_diff <= 1e-12,
    })
}

pub fn run_evolution(mesh: &Arc<TriMesh>, u0: &FemFunction, cfg: &SchemeConfig) -> Result<Trajectory> {
    Stepper::new(Arc::new(P1Space::new(mesh.clone())), *cfg)?.run(u0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InterpolantKind {
    /// `ū^τ = u^k` on `(t_{k-1}, t_k]`.
    Constant,
    /// `û^τ`, affine between the nodes.
    Affine,
    /// `ũ^τ = u^{k-1}` on `(t_{k-1}, t_k]`.
    Lagged,
}

/// One row of the per-step trajectory table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub k: usize,
    pub t_k: f64,
    pub l2_norm: f64,
    pub w1p_seminorm: f64,
    pub energy_eps: f64,
    pub dtau_l2: f64,
    pub solver_iters: usize,
    pub residual: f64,
}

/// The iterates `u⁰, …, u^K` of one run, immutable once built.
#[derive(Debug, Clone)]
pub struct Trajectory {
    config: SchemeConfig,
    space: Arc<P1Space>,
    iterates: Vec<FemFunction>,
    stats: Vec<StepStats>,
}

impl Trajectory {
    pub fn config(&self) -> &SchemeConfig {
        &self.config
    }

    pub fn space(&self) -> &Arc<P1Space> {
        &self.space
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        self.space.mesh()
    }

    pub fn iterates(&self) -> &[FemFunction] {
        &self.iterates
    }

    pub fn stats(&self) -> &[StepStats] {
        &self.stats
    }

    pub fn steps(&self) -> usize {
        self.iterates.len() - 1
    }

    pub fn tau(&self) -> f64 {
        self.config.tau()
    }

    /// `d_τ u^k = (u^k - u^{k-1}) / τ`, `k ≥ 1`.
    pub fn dtau(&self, k: usize) -> FemFunction {
        let tau = self.tau();
        self.iterates[k].axpby(1.0 / tau, &self.iterates[k - 1], -1.0 / tau)
    }

    pub fn interpolant(&self, kind: InterpolantKind, t: f64) -> Result<FemFunction> {
        let t_end = self.config.final_time;
        if !(t >= 0.0 && t <= t_end) {
            return Err(Error::Domain(format!("t = {t} outside [0, {t_end}]")));
        }
        let k_max = self.steps();
        if t == 0.0 || k_max == 0 {
            return Ok(self.iterates[0].clone());
        }
        let s = t / self.tau();
        // Index of the interval (t_{k-1}, t_k] containing t, robust to
        // rounding at the nodes.
        let k = ((s - 1e-9).ceil() as usize).clamp(1, k_max);
        Ok(match kind {
            InterpolantKind::Constant => self.iterates[k].clone(),
            InterpolantKind::Lagged => self.iterates[k - 1].clone(),
            InterpolantKind::Affine => {
                let a = (s - (k - 1) as f64).clamp(0.0, 1.0);
                self.iterates[k].axpby(a, &self.iterates[k - 1], 1.0 - a)
            }
        })
    }

    /// `‖û^τ - ū^τ‖²_{L²(0,T;L²)} = (τ/3) Σ_k ‖u^k - u^{k-1}‖²`.
    pub fn affine_constant_gap_sq(&self) -> f64 {
        let tau = self.tau();
        let m = self.space.mass_matrix();
        (1..=self.steps())
            .map(|k| {
                let d = self.iterates[k].axpby(1.0, &self.iterates[k - 1], -1.0);
                m.quad_form(d.coeffs())
            })
            .sum::<f64>()
            * tau
            / 3.0
    }

    pub fn rows(&self) -> Result<Vec<TrajectoryRow>> {
        let p = self.config.density.p();
        let mut out = Vec::with_capacity(self.iterates.len());
        for (k, u) in self.iterates.iter().enumerate() {
            let (dtau_l2, iters, residual) = if k == 0 {
                (0.0, 0, 0.0)
            } else {
                let s = &self.stats[k - 1];
                (self.space.norm_l2(&self.dtau(k))?, s.iterations, s.residual)
            };
            out.push(TrajectoryRow {
                k,
                t_k: self.config.time(k),
                l2_norm: self.space.norm_l2(u)?,
                w1p_seminorm: self.space.seminorm_w1p(u, p)?,
                energy_eps: self.space.energy(u, &self.config.density)?,
                dtau_l2,
                solver_iters: iters,
                residual,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interpolate_field, unit_square_mesh};
    use crate::orlicz::{NFunctionPD, RegularizationKind};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn density(p: f64, eps: f64, kind: RegularizationKind) -> RegularizedDensity {
        RegularizedDensity::new(NFunctionPD::new(p, 0.0).unwrap(), eps, kind).unwrap()
    }

    fn setup(n: usize) -> (Arc<P1Space>, FemFunction) {
        let m = Arc::new(unit_square_mesh(n).unwrap());
        let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, &m);
        (Arc::new(P1Space::new(m)), u0)
    }

    fn dense(a: &SymSparse) -> DMatrix<f64> {
        DMatrix::from_fn(a.dim(), a.dim(), |i, j| a.get(i, j))
    }

    #[test]
    fn config_validation() {
        let d0 = density(1.5, 0.0, RegularizationKind::AdditiveShift);
        assert!(SchemeConfig::new(d0, 1.0, 10).validate().is_err());
        assert!(SchemeConfig::new(d0, 1.0, 10)
            .with_scheme(SchemeKind::Implicit)
            .validate()
            .is_err());
        let dd = RegularizedDensity::new(
            NFunctionPD::new(1.5, 0.1).unwrap(),
            0.0,
            RegularizationKind::AdditiveShift,
        )
        .unwrap();
        assert!(SchemeConfig::new(dd, 1.0, 10)
            .with_scheme(SchemeKind::Implicit)
            .validate()
            .is_ok());
        let d1 = density(1.5, 1.0, RegularizationKind::AdditiveShift);
        assert!(SchemeConfig::new(d1, 1.0, 10).validate().is_err());
        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::AdditiveShift), 1.0, 10);
        assert!(cfg.validate().is_ok());
        assert_eq!(cfg.tau() * 10.0, 1.0);
        assert_eq!(cfg.time(10), 1.0);
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let (space, _) = setup(4);
        let zero = FemFunction::zeros(space.mesh());
        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::AdditiveShift), 0.1, 5);
        let st = Stepper::new(space.clone(), cfg).unwrap();
        assert!(st.semi_implicit_step(&zero, 1).unwrap().0.coeffs().iter().all(|&v| v == 0.0));
        let st = Stepper::new(space, cfg.with_scheme(SchemeKind::Implicit)).unwrap();
        let (u, s) = st.implicit_step(&zero, 1).unwrap();
        assert!(u.coeffs().iter().all(|&v| v == 0.0));
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn semi_implicit_step_matches_dense_solve() {
        let (space, u0) = setup(4);
        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::QuadraticNorm), 0.1, 10);
        let st = Stepper::new(space.clone(), cfg).unwrap();
        let (u, _) = st.semi_implicit_step(&u0, 1).unwrap();
        let k = space.weighted_stiffness(&u0, &cfg.density).unwrap();
        let m = dense(space.mass_matrix());
        let a = &m / 0.01 + dense(&k);
        let b = &m * DVector::from_column_slice(u0.coeffs()) / 0.01;
        let x = a.lu().solve(&b).unwrap();
        for (p, q) in u.coeffs().iter().zip(x.iter()) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn p2_matches_matrix_powers_and_kacanov_is_one_step() {
        let (space, u0) = setup(2);
        let cfg = SchemeConfig::new(density(2.0, 0.3, RegularizationKind::AdditiveShift), 0.5, 5);
        let semi = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
        let imp = Stepper::new(space.clone(), cfg.with_scheme(SchemeKind::Implicit))
            .unwrap()
            .run(&u0)
            .unwrap();
        // (M + τK)^{-1} M on the single free node: M = 1/4·... use dense oracle.
        let m = dense(space.mass_matrix());
        let kmat = dense(&space.stiffness_with_weights(&[1.0; 8]));
        let step = (&m + &kmat * 0.1).lu().solve(&m).unwrap();
        let mut x = DVector::from_column_slice(u0.coeffs());
        for k in 1..=5 {
            x = &step * x;
            assert!((semi.iterates()[k].coeffs()[0] - x[0]).abs() < 1e-14);
            assert!((imp.iterates()[k].coeffs()[0] - x[0]).abs() < 1e-14);
            assert_eq!(imp.stats()[k - 1].iterations, 1);
        }
    }

    #[test]
    fn kacanov_and_newton_agree() {
        let (space, u0) = setup(4);
        for kind in [RegularizationKind::AdditiveShift, RegularizationKind::QuadraticNorm] {
            let cfg = SchemeConfig::new(density(1.5, 0.1, kind), 0.05, 5)
                .with_scheme(SchemeKind::Implicit)
                .with_coeff(LowerOrderCoeff::shifted_power(2.5, 0.5).unwrap())
                .with_source(ScalarField::Bilinear { amplitude: 3.0 });
            let a = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
            let newton = cfg.with_nonlinear(NonlinearSolver::NewtonDamped {
                tol_res: 1e-12,
                max_iter: 50,
            });
            let b = Stepper::new(space.clone(), newton).unwrap().run(&u0).unwrap();
            for (x, y) in a.iterates().iter().zip(b.iterates()) {
                let d: f64 = x
                    .coeffs()
                    .iter()
                    .zip(y.coeffs())
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d < 1e-8, "{d}");
            }
            for s in a.stats().iter().chain(b.stats()) {
                assert!(s.residual <= s.tolerance);
            }
        }
    }

    #[test]
    fn kacanov_identity_on_random_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let (space, _) = setup(4);
        for _ in 0..10 {
            let p = rng.random_range(1.1..=2.0);
            let eps = rng.random_range(0.01..0.9);
            let kind = if rng.random::<bool>() {
                RegularizationKind::AdditiveShift
            } else {
                RegularizationKind::QuadraticNorm
            };
            let cfg = SchemeConfig::new(density(p, eps, kind), rng.random_range(0.01..1.0), 4);
            let c: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u = FemFunction::from_coeffs(space.mesh(), c).unwrap();
            let r = first_kacanov_equals_semi_implicit(&space, &u, &cfg, 1).unwrap();
            assert!(r.holds);
        }
    }

    #[test]
    fn semi_implicit_energy_decreases() {
        let (space, _) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..5 {
            let c: Vec<f64> = (0..space.num_free()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let u0 = FemFunction::from_coeffs(space.mesh(), c).unwrap();
            let cfg = SchemeConfig::new(density(1.3, 0.05, RegularizationKind::QuadraticNorm), 1.0, 10);
            let traj = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
            let rows = traj.rows().unwrap();
            for w in rows.windows(2) {
                assert!(w[1].energy_eps <= w[0].energy_eps);
            }
        }
    }

    #[test]
    fn empty_run_and_interpolants() {
        let (space, u0) = setup(4);
        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::AdditiveShift), 0.0, 0);
        let traj = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
        assert_eq!(traj.iterates().len(), 1);

        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::AdditiveShift), 0.3, 3);
        let traj = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
        let u = traj.iterates();
        let tau = traj.tau();
        for k in 1..=3 {
            let t = cfg.time(k);
            assert_eq!(&traj.interpolant(InterpolantKind::Constant, t).unwrap(), &u[k]);
            assert!(traj.interpolant(InterpolantKind::Affine, t).unwrap().max_abs_diff(&u[k]) < 1e-12);
            assert_eq!(&traj.interpolant(InterpolantKind::Lagged, t).unwrap(), &u[k - 1]);
            let mid = traj
                .interpolant(InterpolantKind::Affine, (k as f64 - 0.5) * tau)
                .unwrap();
            let avg = u[k].axpby(0.5, &u[k - 1], 0.5);
            assert!(mid.max_abs_diff(&avg) < 1e-14);
        }
        assert!(traj.interpolant(InterpolantKind::Constant, 0.31).is_err());
        assert!(traj.interpolant(InterpolantKind::Constant, -0.01).is_err());
    }

    #[test]
    fn affine_constant_gap_matches_gauss_quadrature() {
        let (space, u0) = setup(4);
        let cfg = SchemeConfig::new(density(1.5, 0.1, RegularizationKind::AdditiveShift), 0.2, 4);
        let traj = Stepper::new(space.clone(), cfg).unwrap().run(&u0).unwrap();
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683_9, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683_9, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let tau = traj.tau();
        let mut total = 0.0;
        for k in 1..=4 {
            for &(x, w) in &nodes {
                let t = (k as f64 - 0.5 + 0.5 * x) * tau;
                let a = traj.interpolant(InterpolantKind::Affine, t).unwrap();
                let c = traj.interpolant(InterpolantKind::Constant, t).unwrap();
                let d = a.axpby(1.0, &c, -1.0);
                total += 0.5 * tau * w * space.mass_matrix().quad_form(d.coeffs());
            }
        }
        let closed = traj.affine_constant_gap_sq();
        assert!((total - closed).abs() < 1e-12 * closed.max(1e-300), "{total} {closed}");
    }

    #[test]
    fn step_errors_carry_the_index() {
        let (space, u0) = setup(4);
        let cfg = SchemeConfig::new(density(1.2, 1e-3, RegularizationKind::AdditiveShift), 1.0, 3)
            .with_scheme(SchemeKind::Implicit)
            .with_nonlinear(NonlinearSolver::Kacanov {
                tol_res: 1e-14,
                max_iter: 1,
            });
        let err = Stepper::new(space, cfg).unwrap().run(&u0).unwrap_err();
        assert!(matches!(err, Error::Step { step: 1, .. }), "{err}");
    }
}
