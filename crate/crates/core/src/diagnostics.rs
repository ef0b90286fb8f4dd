//! A-priori energy ledgers, the discrepancy decomposition of the
//! semi-implicit scheme, refinement studies along coupled `(h, τ, ε)`
//! sequences and the manufactured heat solution.

use crate::assembly::P1Space;
use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::lower_order::SchemeKind;
use crate::mesh::{interpolate_field, prolong, refinement_hierarchy, FemFunction};
use crate::orlicz::{op_s_eps, RegularizationKind, RegularizedDensity, Vec2, FROZEN_S_EPS_LIPSCHITZ};
use crate::schemes::{InterpolantKind, SchemeConfig, Stepper, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::Arc;

pub const STUDY_SCHEMA: &str = "lagflow.study-report/1";

/// Relative slack allowed in every ledger inequality.
pub const LEDGER_REL_SLACK: f64 = 1e-9;

/// Outcome of one ledger inequality checked at every `ℓ = 1..K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    pub name: String,
    pub holds: bool,
    /// Largest `(lhs - rhs) / max(|rhs|, 1e-300)` over all `ℓ`.
    pub worst_relative_excess: f64,
    /// Step at which the worst excess occurs.
    pub worst_step: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// Absolute slack granted from solver residuals at the worst step.
    pub residual_slack: f64,
}

struct LedgerTally {
    name: &'static str,
    worst: f64,
    worst_step: usize,
    lhs: f64,
    rhs: f64,
    slack: f64,
    holds: bool,
}

impl LedgerTally {
    fn new(name: &'static str) -> Self {
        LedgerTally {
            name,
            worst: f64::NEG_INFINITY,
            worst_step: 0,
            lhs: 0.0,
            rhs: 0.0,
            slack: 0.0,
            holds: true,
        }
    }

    fn record(&mut self, step: usize, lhs: f64, rhs: f64, slack: f64) {
        let scale = rhs.abs().max(lhs.abs()).max(1e-300);
        let ok = lhs <= rhs + LEDGER_REL_SLACK * scale + slack && lhs.is_finite() && rhs.is_finite();
        self.holds &= ok;
        let excess = (lhs - rhs) / rhs.abs().max(1e-300);
        if excess > self.worst || !ok {
            self.worst = excess;
            self.worst_step = step;
            self.lhs = lhs;
            self.rhs = rhs;
            self.slack = slack;
        }
    }

    fn finish(self) -> LedgerCheck {
        LedgerCheck {
            name: self.name.to_string(),
            holds: self.holds,
            worst_relative_excess: if self.worst.is_finite() { self.worst } else { 0.0 },
            worst_step: self.worst_step,
            lhs: self.lhs,
            rhs: self.rhs,
            residual_slack: self.slack,
        }
    }
}

fn euclid(u: &FemFunction) -> f64 {
    crate::linalg::norm2(u.coeffs())
}

/// Checks every ledger that applies to the trajectory:
///
/// * `energy-stability` (pure gradient flow, semi-implicit):
///   `E[u^ℓ] + τΣ‖d_τu^k‖² + (τ²/2)Σ∫ω_{k-1}|∇d_τu^k|² ≤ E[u⁰]`,
/// * `apriori` (both schemes, weight lagged or not as in the scheme):
///   `½‖u^ℓ‖² + τΣ∫ω|∇u^k|² ≤ ½‖u⁰‖² + (c₇+1)τΣ‖u^k‖² + τΣ‖f(t_k)‖²`,
/// * `energy-bound` (semi-implicit):
///   `E[u^ℓ] + (τ/2)Σ‖d_τu^k‖² + (τ²/2)Σ∫ω_{k-1}|∇d_τu^k|²
///    ≤ E[u⁰] + τΣ‖f(t_k)‖² + τΣ∫|d(u^{k-1})|²|u^k|²`.
///
/// Inexact solves enter as `τ Σ |r_k·u^k|` (resp. `Σ |r_k·(u^k - u^{k-1})|`)
/// bounded by Cauchy–Schwarz on the residual norms.
pub fn energy_ledgers(traj: &Trajectory) -> Result<Vec<LedgerCheck>> {
    let cfg = traj.config();
    let space = traj.space();
    let dens = &cfg.density;
    let coeff = &cfg.coeff;
    let tau = traj.tau();
    let u = traj.iterates();
    let semi = cfg.scheme == SchemeKind::SemiImplicit;
    let pure = cfg.source.is_zero() && coeff.is_zero();
    let e0 = space.energy(&u[0], dens)?;
    let l2_0 = space.norm_l2(&u[0])?.powi(2);

    let mut stab = LedgerTally::new("energy-stability");
    let mut apriori = LedgerTally::new("apriori");
    let mut bound = LedgerTally::new("energy-bound");

    let (mut dtau_sum, mut diss_sum, mut grad_sum, mut l2_sum, mut f_sum, mut d_sum) =
        (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut slack_a, mut slack_e) = (0.0, 0.0);
    for k in 1..u.len() {
        let lag = if semi { &u[k - 1] } else { &u[k] };
        let w = space.cell_weights(lag, dens)?;
        let diff = u[k].axpby(1.0, &u[k - 1], -1.0);
        dtau_sum += space.mass_matrix().quad_form(diff.coeffs()) / tau;
        diss_sum += 0.5 * space.weighted_dirichlet(&diff, &w);
        grad_sum += tau * space.weighted_dirichlet(&u[k], &w);
        let uk2 = space.norm_l2(&u[k])?.powi(2);
        l2_sum += tau * uk2;
        f_sum += tau * space.field_l2_sq(&cfg.source, cfg.time(k));
        d_sum += tau * space.lower_order_sq(lag, &u[k], coeff);
        let r = traj.stats()[k - 1].residual;
        let r = if r.is_finite() { r } else { 0.0 };
        slack_a += tau * r * euclid(&u[k]);
        slack_e += r * euclid(&diff);

        let ek = space.energy(&u[k], dens)?;
        if semi && pure {
            stab.record(k, ek + dtau_sum + diss_sum, e0, slack_e);
        }
        apriori.record(
            k,
            0.5 * uk2 + grad_sum,
            0.5 * l2_0 + (coeff.c7() + 1.0) * l2_sum + f_sum,
            slack_a,
        );
        if semi {
            bound.record(k, ek + 0.5 * dtau_sum + diss_sum, e0 + f_sum + d_sum, slack_e);
        }
    }
    let mut out = Vec::new();
    if semi && pure {
        out.push(stab.finish());
    }
    out.push(apriori.finish());
    if semi {
        out.push(bound.finish());
    }
    Ok(out)
}

/// Discrepancy fields of one semi-implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyRecord {
    pub k: usize,
    /// `Σ_T |T| |E^k|_T`
    pub e_norm_l1: f64,
    /// `max_T |E^k|_T`
    pub e_norm_linf: f64,
    /// `(2 - p) ε^{p-1}`, the uniform bound on `|E^k|` (times `|Ω| = 1`).
    pub e_bound: f64,
    /// `max_i (F^k, ∇ψ_i) / ‖ψ_i‖_{W^{1,2}}`
    pub f_dual_norm: f64,
    pub alpha_eps: f64,
}

fn require_semi_quadratic(traj: &Trajectory) -> Result<()> {
    let cfg = traj.config();
    if cfg.scheme != SchemeKind::SemiImplicit {
        return Err(Error::WrongScheme(
            "discrepancy terms are defined for semi-implicit trajectories".into(),
        ));
    }
    if cfg.density.kind != RegularizationKind::QuadraticNorm {
        return Err(Error::WrongScheme(
            "discrepancy terms use the quadratic-norm regularization".into(),
        ));
    }
    Ok(())
}

/// `α_ε = (τ ε^{p-2})^{1/2}`.
pub fn default_alpha(tau: f64, eps: f64, p: f64) -> f64 {
    (tau * eps.powf(p - 2.0)).sqrt()
}

/// `E^k = S₀(∇u^k) - S_ε(∇u^k)` and `F^k = S_ε(∇u^k) - |∇u^{k-1}|_ε^{p-2}∇u^k`.
pub fn discrepancy_terms(traj: &Trajectory, k: usize) -> Result<DiscrepancyRecord> {
    require_semi_quadratic(traj)?;
    if k == 0 || k > traj.steps() {
        return Err(Error::Domain(format!("step {k} outside 1..={}", traj.steps())));
    }
    let cfg = traj.config();
    let space = traj.space();
    let p = cfg.density.p();
    let eps = cfg.eps();
    let gk = space.cell_gradients(&traj.iterates()[k]);
    let w_prev = space.cell_weights(&traj.iterates()[k - 1], &cfg.density)?;
    let areas = &space.table().areas;
    let mut e_l1 = 0.0;
    let mut e_inf: f64 = 0.0;
    let mut fcell = Vec::with_capacity(gk.len());
    for (c, &g) in gk.iter().enumerate() {
        let e = op_s_eps(p, 0.0, g) - op_s_eps(p, eps, g);
        let en = e.norm();
        e_l1 += areas[c] * en;
        e_inf = e_inf.max(en);
        fcell.push(op_s_eps(p, eps, g) - w_prev[c] * g);
    }
    let f_dual_norm = dual_estimate(space, &fcell);
    Ok(DiscrepancyRecord {
        k,
        e_norm_l1: e_l1,
        e_norm_linf: e_inf,
        e_bound: (2.0 - p) * eps.powf(p - 1.0),
        f_dual_norm,
        alpha_eps: default_alpha(traj.tau(), eps, p),
    })
}

/// `max_i |(F, ∇ψ_i)| / ‖ψ_i‖_{W^{1,2}}` for a cellwise constant field `F`.
fn dual_estimate(space: &P1Space, field: &[Vec2]) -> f64 {
    let mesh = space.mesh();
    let t = space.table();
    let mut pair = vec![0.0; space.num_free()];
    let mut stiff_diag = vec![0.0; space.num_free()];
    for (c, cell) in mesh.cells().iter().enumerate() {
        for (i, &n) in cell.iter().enumerate() {
            if let Some(g) = mesh.free_index(n) {
                pair[g] += t.areas[c] * field[c].dot(t.grads[c][i]);
                stiff_diag[g] += t.areas[c] * t.grads[c][i].norm_sq();
            }
        }
    }
    let m = space.mass_matrix();
    pair.iter()
        .enumerate()
        .map(|(i, v)| v.abs() / (m.get(i, i) + stiff_diag[i]).sqrt())
        .fold(0.0, f64::max)
}

/// Components of the integrated discrepancy estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyTotal {
    pub uniform_term: f64,
    pub dissipation_term: f64,
    pub balance_term: f64,
    /// `τ² Σ_k ∫ ω_{k-1} |∇d_τu^k|²`
    pub dissipation: f64,
    pub alpha_eps: f64,
    pub total: f64,
}

/// `(2-p)ε^{p-1} + c²α τ²Σ∫ω_{k-1}|∇d_τu^k|² + τε^{p-2}/(2α)` with the
/// frozen Lipschitz constant `c` of `S_ε` and `α = (τε^{p-2})^{1/2}` unless
/// overridden.
pub fn discrepancy_total(traj: &Trajectory, alpha: Option<f64>) -> Result<DiscrepancyTotal> {
    require_semi_quadratic(traj)?;
    let cfg = traj.config();
    let space = traj.space();
    let p = cfg.density.p();
    let eps = cfg.eps();
    let tau = traj.tau();
    let u = traj.iterates();
    let mut dissipation = 0.0;
    for k in 1..u.len() {
        let w = space.cell_weights(&u[k - 1], &cfg.density)?;
        let diff = u[k].axpby(1.0, &u[k - 1], -1.0);
        dissipation += space.weighted_dirichlet(&diff, &w);
    }
    let alpha = alpha.unwrap_or_else(|| default_alpha(tau, eps, p));
    let uniform_term = (2.0 - p) * eps.powf(p - 1.0);
    let dissipation_term = FROZEN_S_EPS_LIPSCHITZ.powi(2) * alpha * dissipation;
    let balance_term = if traj.steps() == 0 {
        0.0
    } else {
        tau * eps.powf(p - 2.0) / (2.0 * alpha)
    };
    Ok(DiscrepancyTotal {
        uniform_term,
        dissipation_term,
        balance_term,
        dissipation,
        alpha_eps: alpha,
        total: uniform_term + dissipation_term + balance_term,
    })
}

/// How `(h, τ, ε)` evolve across study levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// `ε_{n+1} = ε_n/2`, `τ_n = c ε_n^{2-p} 2^{-n/2}` with `c` fixed by
    /// level 0, so that `τ_n φ''(ε_n) → 0`.
    Default,
    /// `ε_{n+1} = ε_n/2` with `τ` frozen at its level-0 value: the coupling
    /// is violated.
    FixedTau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub levels: usize,
    /// Subdivisions of the level-0 mesh.
    pub base_n: usize,
    pub base: SchemeConfig,
    pub coupling: Coupling,
    pub initial: ScalarField,
    /// Overrides `α_ε = (τε^{p-2})^{1/2}` in the discrepancy totals.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "yes")]
    pub negative_control: bool,
}

fn yes() -> bool {
    true
}

/// Parameters of one study level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelParams {
    pub level: usize,
    pub n: usize,
    pub h: f64,
    pub eps: f64,
    pub tau: f64,
    pub steps: usize,
    /// `τ φ''(ε)`
    pub tau_phi2: f64,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::param("levels", "must be >= 1"));
        }
        if self.base_n == 0 {
            return Err(Error::param("base_n", "must be >= 1"));
        }
        if self.base.steps == 0 {
            return Err(Error::param("K", "level 0 needs at least one step"));
        }
        self.base.validate()?;
        self.base.with_scheme(SchemeKind::SemiImplicit).validate()?;
        if self.base.density.kind != RegularizationKind::QuadraticNorm {
            return Err(Error::param(
                "regularization",
                "studies measure the discrepancy terms and need the quadratic-norm regularization",
            ));
        }
        Ok(())
    }

    /// `(h_n, τ_n, ε_n)` for every level under the given rule. `K_n` is
    /// rounded so that `τ_n K_n = T` holds exactly.
    pub fn level_params(&self, coupling: Coupling) -> Result<Vec<LevelParams>> {
        let p = self.base.density.p();
        let nf = self.base.density.nf;
        let t_end = self.base.final_time;
        let eps0 = self.base.eps();
        let tau0 = self.base.tau();
        let c = tau0 / eps0.powf(2.0 - p);
        (0..self.levels)
            .map(|lvl| {
                let eps = eps0 * 0.5f64.powi(lvl as i32);
                let steps = match coupling {
                    Coupling::FixedTau => self.base.steps,
                    Coupling::Default => {
                        let tau = c * eps.powf(2.0 - p) * 0.5f64.powf(0.5 * lvl as f64);
                        ((t_end / tau).round() as usize).max(1)
                    }
                };
                let tau = t_end / steps as f64;
                let n = self.base_n << lvl;
                Ok(LevelParams {
                    level: lvl,
                    n,
                    h: std::f64::consts::SQRT_2 / n as f64,
                    eps,
                    tau,
                    steps,
                    tau_phi2: tau * nf.phi_second(eps)?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub params: LevelParams,
    pub semi_l2_max: f64,
    pub semi_w1p_max: f64,
    pub implicit_l2_max: f64,
    /// `max_k ‖u_semi^k - u_impl^k‖_{L²}`
    pub gap: f64,
    pub discrepancy: DiscrepancyTotal,
    /// `max_k max_T |E^k|_T`
    pub e_max: f64,
    pub e_bound: f64,
    pub e_within_bound: bool,
    /// `max_k` of the dual estimate of `F^k`.
    pub f_dual_max: f64,
    pub ledgers: Vec<LedgerCheck>,
    pub semi_iterations: usize,
    pub implicit_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub level: usize,
    pub report: Option<LevelReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyDifference {
    pub coarse: usize,
    pub fine: usize,
    /// `‖ū_{n+1} - P ū_n‖_{L^∞(0,T;L²)}`
    pub linf_l2: f64,
    /// `‖ū_{n+1} - P ū_n‖_{L^p(0,T;W^{1,p})}`
    pub lp_w1p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub coupling: Coupling,
    pub levels: Vec<LevelOutcome>,
    pub cauchy: Vec<CauchyDifference>,
}

impl SequenceReport {
    fn values(&self, f: impl Fn(&LevelReport) -> f64) -> Option<Vec<f64>> {
        self.levels.iter().map(|l| l.report.as_ref().map(&f)).collect()
    }

    pub fn discrepancy_totals(&self) -> Option<Vec<f64>> {
        self.values(|r| r.discrepancy.total)
    }

    pub fn gaps(&self) -> Option<Vec<f64>> {
        self.values(|r| r.gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: String,
    pub config: StudyConfig,
    pub study: SequenceReport,
    pub negative_control: Option<SequenceReport>,
    pub assertions: Vec<Assertion>,
    /// True when the negative control failed to decrease its discrepancy
    /// total or its scheme gap.
    pub negative_control_behaves: Option<bool>,
    pub passed: bool,
}

impl StudyReport {
    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn fmt_seq(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" > ")
}

/// Runs both schemes on every level and collects the per-level observables.
pub fn run_sequence(sc: &StudyConfig, coupling: Coupling) -> Result<SequenceReport> {
    let params = sc.level_params(coupling)?;
    let meshes: Vec<Arc<_>> = refinement_hierarchy(sc.base_n, sc.levels - 1)?
        .into_iter()
        .map(Arc::new)
        .collect();
    let spaces: Vec<Arc<P1Space>> = meshes.iter().map(|m| Arc::new(P1Space::new(m.clone()))).collect();
    // Level-0 interpolant, injected exactly into the finer spaces.
    let mut initial = vec![interpolate_field(&sc.initial, 0.0, &meshes[0])];
    for m in &meshes[1..] {
        let next = prolong(initial.last().expect("nonempty"), m)?;
        initial.push(next);
    }
    let runs: Vec<(std::result::Result<(Trajectory, LevelReport), String>,)> = params
        .par_iter()
        .map(|lp| (run_level(sc, lp, &spaces[lp.level], &initial[lp.level]).map_err(|e| e.to_string()),))
        .collect();
    let mut levels = Vec::new();
    let mut trajs: Vec<Option<Trajectory>> = Vec::new();
    for (lp, (r,)) in params.iter().zip(runs) {
        match r {
            Ok((t, rep)) => {
                levels.push(LevelOutcome {
                    level: lp.level,
                    report: Some(rep),
                    error: None,
                });
                trajs.push(Some(t));
            }
            Err(e) => {
                log::warn!("study level {} failed: {e}", lp.level);
                levels.push(LevelOutcome {
                    level: lp.level,
                    report: None,
                    error: Some(e),
                });
                trajs.push(None);
            }
        }
    }
    let mut cauchy = Vec::new();
    for w in trajs.windows(2) {
        if let (Some(c), Some(f)) = (&w[0], &w[1]) {
            cauchy.push(cauchy_difference(c, f)?);
        }
    }
    Ok(SequenceReport {
        coupling,
        levels,
        cauchy,
    })
}

fn run_level(
    sc: &StudyConfig,
    lp: &LevelParams,
    space: &Arc<P1Space>,
    u0: &FemFunction,
) -> Result<(Trajectory, LevelReport)> {
    let dens = RegularizedDensity::new(sc.base.density.nf, lp.eps, sc.base.density.kind)?;
    let cfg = SchemeConfig {
        density: dens,
        steps: lp.steps,
        ..sc.base
    };
    let semi_cfg = cfg.with_scheme(SchemeKind::SemiImplicit);
    let imp_cfg = cfg.with_scheme(SchemeKind::Implicit);
    let (semi, imp) = rayon::join(
        || Stepper::new(space.clone(), semi_cfg)?.run(u0),
        || Stepper::new(space.clone(), imp_cfg)?.run(u0),
    );
    let (semi, imp) = (semi?, imp?);
    let p = dens.p();
    let mut gap: f64 = 0.0;
    let (mut semi_l2, mut semi_w1p, mut imp_l2) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b) in semi.iterates().iter().zip(imp.iterates()) {
        gap = gap.max(space.norm_l2(&a.axpby(1.0, b, -1.0))?);
        semi_l2 = semi_l2.max(space.norm_l2(a)?);
        semi_w1p = semi_w1p.max(space.seminorm_w1p(a, p)?);
        imp_l2 = imp_l2.max(space.norm_l2(b)?);
    }
    let mut e_max: f64 = 0.0;
    let mut f_dual_max: f64 = 0.0;
    let mut e_bound = 0.0;
    for k in 1..=semi.steps() {
        let d = discrepancy_terms(&semi, k)?;
        e_max = e_max.max(d.e_norm_linf);
        f_dual_max = f_dual_max.max(d.f_dual_norm);
        e_bound = d.e_bound;
    }
    let discrepancy = discrepancy_total(&semi, sc.alpha)?;
    let mut ledgers = energy_ledgers(&semi)?;
    for mut l in energy_ledgers(&imp)? {
        l.name = format!("implicit-{}", l.name);
        ledgers.push(l);
    }
    let report = LevelReport {
        params: *lp,
        semi_l2_max: semi_l2,
        semi_w1p_max: semi_w1p,
        implicit_l2_max: imp_l2,
        gap,
        discrepancy,
        e_max,
        e_bound,
        e_within_bound: e_max <= e_bound * (1.0 + 1e-12) + 1e-14,
        f_dual_max,
        ledgers,
        semi_iterations: semi.stats().iter().map(|s| s.iterations).sum(),
        implicit_iterations: imp.stats().iter().map(|s| s.iterations).sum(),
    };
    Ok((semi, report))
}

/// Distance between consecutive levels: the coarse piecewise-constant
/// interpolant is prolonged in space and both are compared on the union of
/// the two time grids, where their difference is piecewise constant.
pub fn cauchy_difference(coarse: &Trajectory, fine: &Trajectory) -> Result<CauchyDifference> {
    let t_end = fine.config().final_time;
    if (coarse.config().final_time - t_end).abs() > 1e-12 * t_end.max(1.0) {
        return Err(Error::Domain("levels disagree on the final time".into()));
    }
    let space = fine.space();
    let p = fine.config().density.p();
    let mut nodes: Vec<f64> = (0..=coarse.steps())
        .map(|k| coarse.config().time(k))
        .chain((0..=fine.steps()).map(|k| fine.config().time(k)))
        .collect();
    nodes.sort_by(f64::total_cmp);
    nodes.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_end.max(1.0));
    let mut linf: f64 = 0.0;
    let mut lp = 0.0;
    let mut prev = 0.0;
    for &t in &nodes {
        let t = t.min(t_end);
        let c = coarse.interpolant(InterpolantKind::Constant, t)?;
        let c = prolong(&c, space.mesh())?;
        let f = fine.interpolant(InterpolantKind::Constant, t)?;
        let d = f.axpby(1.0, &c, -1.0);
        linf = linf.max(space.norm_l2(&d)?);
        lp += (t - prev) * space.seminorm_w1p(&d, p)?.powf(p);
        prev = t;
    }
    Ok(CauchyDifference {
        coarse: coarse.mesh().level(),
        fine: fine.mesh().level(),
        linf_l2: linf,
        lp_w1p: lp.powf(1.0 / p),
    })
}

/// Coupled study with all assertions and, unless disabled, the anti-coupled
/// negative control.
pub fn run_study(sc: &StudyConfig) -> Result<StudyReport> {
    sc.validate()?;
    let (study, control) = if sc.negative_control {
        let (a, b) = rayon::join(
            || run_sequence(sc, sc.coupling),
            || run_sequence(sc, Coupling::FixedTau),
        );
        (a?, Some(b?))
    } else {
        (run_sequence(sc, sc.coupling)?, None)
    };
    let mut assertions = Vec::new();
    let failed: Vec<String> = study
        .levels
        .iter()
        .filter_map(|l| l.error.as_ref().map(|e| format!("level {}: {e}", l.level)))
        .collect();
    assertions.push(Assertion {
        name: "all-levels-ran".into(),
        holds: failed.is_empty(),
        detail: failed.join("; "),
    });
    let params = sc.level_params(sc.coupling)?;
    let products: Vec<f64> = params.iter().map(|l| l.tau_phi2).collect();
    assertions.push(Assertion {
        name: "coupling-tau-phi2-decreasing".into(),
        holds: strictly_decreasing(&products),
        detail: fmt_seq(&products),
    });
    let cauchy: Vec<f64> = study.cauchy.iter().map(|c| c.linf_l2).collect();
    assertions.push(Assertion {
        name: "cauchy-linf-l2-decreasing".into(),
        holds: failed.is_empty() && strictly_decreasing(&cauchy),
        detail: fmt_seq(&cauchy),
    });
    let seq_assert = |name: &str, v: Option<Vec<f64>>| match v {
        Some(v) => Assertion {
            name: name.into(),
            holds: strictly_decreasing(&v),
            detail: fmt_seq(&v),
        },
        None => Assertion {
            name: name.into(),
            holds: false,
            detail: "missing levels".into(),
        },
    };
    assertions.push(seq_assert("scheme-gap-decreasing", study.gaps()));
    assertions.push(seq_assert("discrepancy-total-decreasing", study.discrepancy_totals()));
    let reports: Vec<&LevelReport> = study.levels.iter().filter_map(|l| l.report.as_ref()).collect();
    assertions.push(Assertion {
        name: "e-uniform-bound".into(),
        holds: reports.iter().all(|r| r.e_within_bound),
        detail: reports
            .iter()
            .map(|r| format!("{:.3e}<={:.3e}", r.e_max, r.e_bound))
            .collect::<Vec<_>>()
            .join(", "),
    });
    let bad: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.ledgers
                .iter()
                .filter(|l| !l.holds)
                .map(move |l| format!("level {}: {}", r.params.level, l.name))
        })
        .collect();
    assertions.push(Assertion {
        name: "energy-ledgers".into(),
        holds: bad.is_empty(),
        detail: bad.join("; "),
    });
    let negative_control_behaves = control.as_ref().map(|c| {
        let totals_fail = c.discrepancy_totals().is_none_or(|v| !strictly_decreasing(&v));
        let gaps_fail = c.gaps().is_none_or(|v| !strictly_decreasing(&v));
        totals_fail || gaps_fail
    });
    if let Some(b) = negative_control_behaves {
        assertions.push(Assertion {
            name: "negative-control".into(),
            holds: b,
            detail: control
                .as_ref()
                .and_then(|c| c.discrepancy_totals())
                .map(|v| format!("totals {}", fmt_seq(&v)))
                .unwrap_or_default(),
        });
    }
    let passed = assertions.iter().all(|a| a.holds);
    Ok(StudyReport {
        schema: STUDY_SCHEMA.into(),
        config: *sc,
        study,
        negative_control: control,
        assertions,
        negative_control_behaves,
        passed,
    })
}

/// Degree-5 seven-point rule on the reference triangle: barycentric points
/// and weights summing to one.
const DUNAVANT7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_770;
    const B1: f64 = 0.470_142_064_105_115;
    const A2: f64 = 0.797_426_985_353_087;
    const B2: f64 = 0.101_286_507_323_456;
    const W0: f64 = 0.225;
    const W1: f64 = 0.132_394_152_788_506;
    const W2: f64 = 0.125_939_180_544_827;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], W0),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// `‖u_h - u‖_{L²}` by the seven-point rule on every cell.
pub fn l2_error(space: &P1Space, uh: &FemFunction, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let mesh = space.mesh();
    let vals = uh.nodal_values(mesh);
    let nodes = mesh.nodes();
    mesh.cells()
        .iter()
        .zip(&space.table().areas)
        .map(|(cell, &area)| {
            DUNAVANT7
                .iter()
                .map(|(l, w)| {
                    let (mut x, mut y, mut v) = (0.0, 0.0, 0.0);
                    for i in 0..3 {
                        x += l[i] * nodes[cell[i]][0];
                        y += l[i] * nodes[cell[i]][1];
                        v += l[i] * vals[cell[i]];
                    }
                    w * (v - exact(x, y)).powi(2)
                })
                .sum::<f64>()
                * area
        })
        .sum::<f64>()
        .sqrt()
}

/// Error of one heat-equation run against `e^{-2π²t} sin(πx) sin(πy)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatError {
    pub n: usize,
    pub h: f64,
    pub tau: f64,
    pub steps: usize,
    /// Interpolation error at `t = 0`.
    pub error_t0: f64,
    /// `max_k ‖u^k - u(t_k)‖_{L²}`
    pub error_max: f64,
}

pub fn heat_exact(x: f64, y: f64, t: f64) -> f64 {
    (-2.0 * PI * PI * t).exp() * (PI * x).sin() * (PI * y).sin()
}

/// Runs the p = 2 scheme from the nodal interpolant of `sin(πx) sin(πy)`
/// and measures the max-over-time `L²` error.
pub fn heat_manufactured_error(cfg: &SchemeConfig, n: usize) -> Result<HeatError> {
    if cfg.density.p() != 2.0 {
        return Err(Error::param("p", "the manufactured solution needs p = 2"));
    }
    if !cfg.coeff.is_zero() || !cfg.source.is_zero() {
        return Err(Error::param("coeff", "the manufactured solution needs d = 0 and f = 0"));
    }
    let mesh = Arc::new(crate::mesh::unit_square_mesh(n)?);
    let space = Arc::new(P1Space::new(mesh.clone()));
    let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, &mesh);
    let traj = Stepper::new(space.clone(), *cfg)?.run(&u0)?;
    let mut error_max: f64 = 0.0;
    let mut error_t0 = 0.0;
    for (k, u) in traj.iterates().iter().enumerate() {
        let t = cfg.time(k);
        let e = l2_error(&space, u, |x, y| heat_exact(x, y, t));
        if k == 0 {
            error_t0 = e;
        }
        error_max = error_max.max(e);
    }
    Ok(HeatError {
        n,
        h: mesh.h(),
        tau: cfg.tau(),
        steps: cfg.steps,
        error_t0,
        error_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::unit_square_mesh;
    use crate::orlicz::{check_uniform_eps_bound, NFunctionPD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn density(p: f64, eps: f64) -> RegularizedDensity {
        RegularizedDensity::new(NFunctionPD::new(p, 0.0).unwrap(), eps, RegularizationKind::QuadraticNorm)
            .unwrap()
    }

    fn space(n: usize) -> Arc<P1Space> {
        Arc::new(P1Space::new(Arc::new(unit_square_mesh(n).unwrap())))
    }

    fn run(space: &Arc<P1Space>, cfg: SchemeConfig, u0: &FemFunction) -> Trajectory {
        Stepper::new(space.clone(), cfg).unwrap().run(u0).unwrap()
    }

    #[test]
    fn p2_has_no_discrepancy() {
        let s = space(4);
        let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, s.mesh());
        let t = run(&s, SchemeConfig::new(density(2.0, 0.3), 0.1, 4), &u0);
        for k in 1..=4 {
            let d = discrepancy_terms(&t, k).unwrap();
            assert_eq!(d.e_norm_linf, 0.0);
            assert_eq!(d.f_dual_norm, 0.0);
        }
        let tot = discrepancy_total(&t, None).unwrap();
        assert_eq!(tot.uniform_term, 0.0);
        assert!((tot.balance_term - 0.5 * 0.025f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn steady_state_has_no_f_term() {
        let s = space(4);
        let zero = FemFunction::zeros(s.mesh());
        let t = run(&s, SchemeConfig::new(density(1.5, 0.1), 0.1, 3), &zero);
        for k in 1..=3 {
            assert_eq!(discrepancy_terms(&t, k).unwrap().f_dual_norm, 0.0);
        }
    }

    #[test]
    fn e_bound_holds_on_random_cells() {
        let s = space(4);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let nf = NFunctionPD::new(1.5, 0.0).unwrap();
        let c: Vec<f64> = (0..s.num_free()).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u0 = FemFunction::from_coeffs(s.mesh(), c).unwrap();
        let eps = 0.05;
        let t = run(&s, SchemeConfig::new(density(1.5, eps), 0.1, 4), &u0);
        let d = discrepancy_terms(&t, 1).unwrap();
        assert!(d.e_norm_linf <= 0.5 * eps.sqrt());
        for g in s.cell_gradients(&t.iterates()[1]).iter().take(100) {
            let check = check_uniform_eps_bound(&nf, *g, eps).unwrap();
            assert!(check.holds);
            let e = (op_s_eps(1.5, 0.0, *g) - op_s_eps(1.5, eps, *g)).norm();
            assert!(e <= 0.5 * eps.sqrt() + 1e-15);
        }
    }

    #[test]
    fn implicit_trajectory_rejected() {
        let s = space(2);
        let u0 = FemFunction::zeros(s.mesh());
        let t = run(
            &s,
            SchemeConfig::new(density(1.5, 0.1), 0.1, 1).with_scheme(SchemeKind::Implicit),
            &u0,
        );
        assert!(matches!(discrepancy_terms(&t, 1), Err(Error::WrongScheme(_))));
        assert!(matches!(discrepancy_total(&t, None), Err(Error::WrongScheme(_))));
    }

    #[test]
    fn ledgers_hold_with_forcing_and_lower_order_terms() {
        let s = space(4);
        let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, s.mesh());
        let coeff = crate::lower_order::LowerOrderCoeff::shifted_power(2.5, 0.7).unwrap();
        for scheme in [SchemeKind::SemiImplicit, SchemeKind::Implicit] {
            let cfg = SchemeConfig::new(density(1.5, 0.1), 0.5, 10)
                .with_scheme(scheme)
                .with_coeff(coeff)
                .with_source(ScalarField::Bump {
                    amplitude: 5.0,
                    cx: 0.4,
                    cy: 0.6,
                    radius: 0.3,
                });
            let t = run(&s, cfg, &u0);
            let ledgers = energy_ledgers(&t).unwrap();
            assert_eq!(ledgers.len(), if scheme == SchemeKind::SemiImplicit { 2 } else { 1 });
            for l in ledgers {
                assert!(l.holds, "{l:?}");
            }
        }
    }

    #[test]
    fn stability_ledger_is_tight_but_holds() {
        let s = space(4);
        let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, s.mesh());
        let t = run(&s, SchemeConfig::new(density(1.2, 0.01), 10.0, 3), &u0);
        let l = &energy_ledgers(&t).unwrap()[0];
        assert_eq!(l.name, "energy-stability");
        assert!(l.holds, "{l:?}");
    }

    #[test]
    fn coupling_rules() {
        let base = SchemeConfig::new(density(1.5, 0.04), 0.1, 10);
        let sc = StudyConfig {
            levels: 4,
            base_n: 4,
            base,
            coupling: Coupling::Default,
            initial: ScalarField::sin_product(),
            alpha: None,
            negative_control: true,
        };
        let lp = sc.level_params(Coupling::Default).unwrap();
        let ks: Vec<usize> = lp.iter().map(|l| l.steps).collect();
        assert_eq!(ks, vec![10, 20, 40, 80]);
        assert_eq!(lp.iter().map(|l| l.n).collect::<Vec<_>>(), vec![4, 8, 16, 32]);
        assert!(strictly_decreasing(&lp.iter().map(|l| l.tau_phi2).collect::<Vec<_>>()));
        let fixed = sc.level_params(Coupling::FixedTau).unwrap();
        assert!(fixed.iter().all(|l| l.steps == 10));
        assert!(!strictly_decreasing(&fixed.iter().map(|l| l.tau_phi2).collect::<Vec<_>>()));
    }

    #[test]
    fn p2_study_has_no_gap() {
        let base = SchemeConfig::new(density(2.0, 0.5), 0.1, 4);
        let sc = StudyConfig {
            levels: 2,
            base_n: 2,
            base,
            coupling: Coupling::Default,
            initial: ScalarField::sin_product(),
            alpha: None,
            negative_control: false,
        };
        let r = run_study(&sc).unwrap();
        for l in &r.study.levels {
            assert!(l.report.as_ref().unwrap().gap <= 1e-8);
        }
    }

    #[test]
    fn seven_point_rule_is_degree_five() {
        let s = space(1);
        let zero = FemFunction::zeros(s.mesh());
        let w: f64 = DUNAVANT7.iter().map(|p| p.1).sum();
        assert!((w - 1.0).abs() < 1e-14);
        // ∫ x⁴ y over the unit square = 1/10.
        let e = l2_error(&s, &zero, |x, y| (x.powi(4) * y).sqrt());
        assert!((e * e - 0.1).abs() < 1e-13);
    }

    #[test]
    fn heat_interpolation_error_at_t0() {
        let cfg = SchemeConfig::new(density(2.0, 0.5), 0.1, 10);
        let e = heat_manufactured_error(&cfg, 4).unwrap();
        // Oracle: centroid rule on each cell split into m² similar subtriangles.
        let s = space(4);
        let m = 40;
        let u = |x: f64, y: f64| (PI * x).sin() * (PI * y).sin();
        let mut sq = 0.0;
        for (c, cell) in s.mesh().cells().iter().enumerate() {
            let p = cell.map(|i| s.mesh().nodes()[i]);
            let vals = p.map(|q| u(q[0], q[1]));
            let mut acc = 0.0;
            for i in 0..m {
                for j in 0..m - i {
                    let mut pts = vec![(i as f64 + 1.0 / 3.0, j as f64 + 1.0 / 3.0)];
                    if i + j + 1 < m {
                        pts.push((i as f64 + 2.0 / 3.0, j as f64 + 2.0 / 3.0));
                    }
                    for (a, b) in pts {
                        let (l1, l2) = (a / m as f64, b / m as f64);
                        let l0 = 1.0 - l1 - l2;
                        let x = l0 * p[0][0] + l1 * p[1][0] + l2 * p[2][0];
                        let y = l0 * p[0][1] + l1 * p[1][1] + l2 * p[2][1];
                        let d = u(x, y) - (l0 * vals[0] + l1 * vals[1] + l2 * vals[2]);
                        acc += d * d;
                    }
                }
            }
            sq += acc * s.mesh().cell_area(c) / (m * m) as f64;
        }
        let oracle = sq.sqrt();
        assert!((oracle - 0.06004).abs() < 1e-4, "{oracle}");
        assert!((e.error_t0 - oracle).abs() < 1e-3 * oracle, "{} vs {oracle}", e.error_t0);
        assert!(e.error_max >= e.error_t0);
    }
}
