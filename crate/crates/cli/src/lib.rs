//! Subcommands of the `lagflow` binary.
//!
//! Exit codes: 0 on success, 1 on configuration, precondition or solver
//! failure, 2 when a run completes but an energy ledger (or a study or
//! certification assertion) is violated.

pub mod config;

use config::RunConfig;
use lagflow_core::diagnostics::{self, discrepancy_terms, discrepancy_total, energy_ledgers, LedgerCheck};
use lagflow_core::export;
use lagflow_core::mesh::{interpolate_field, refinement_hierarchy};
use lagflow_core::orlicz::{certify_lemmas, CertificationReport, CertifyOptions};
use lagflow_core::schemes::Stepper;
use lagflow_core::{assembly::P1Space, RegularizationKind, SchemeKind};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const RUN_SCHEMA: &str = "lagflow.run-diagnostics/1";
pub const LEMMA_SCHEMA: &str = "lagflow.lemma-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok = 0,
    Failure = 1,
    Violation = 2,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] config::ConfigError),
    #[error(transparent)]
    Core(#[from] lagflow_core::Error),
    #[error("cannot create {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Serialize)]
struct MeshSummary {
    n: usize,
    level: usize,
    nodes: usize,
    cells: usize,
    free: usize,
    h: f64,
}

#[derive(Debug, Serialize)]
struct DiscrepancySummary {
    records: Vec<diagnostics::DiscrepancyRecord>,
    total: diagnostics::DiscrepancyTotal,
    e_within_bound: bool,
}

#[derive(Debug, Serialize)]
struct RunDiagnostics<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    mesh: MeshSummary,
    /// False when the lower-order exponent lies outside the convergence theory.
    admissible: bool,
    ledgers: Vec<LedgerCheck>,
    discrepancy: Option<DiscrepancySummary>,
    total_solver_iterations: usize,
    max_residual: f64,
    passed: bool,
}

/// Outcome of a completed run, before the exit code is chosen.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub passed: bool,
}

pub fn run(config_path: &Path) -> Result<RunOutcome, CliError> {
    let cfg = RunConfig::load(config_path)?;
    let scheme = cfg.scheme_config(config_path)?;
    let meshes = refinement_hierarchy(cfg.mesh.n, cfg.mesh.refine)?;
    let mesh = Arc::new(meshes.into_iter().last().expect("hierarchy is nonempty"));
    let space = Arc::new(P1Space::new(mesh.clone()));
    let u0 = interpolate_field(&cfg.data.initial, 0.0, &mesh);
    log::info!(
        "run: {} free nodes, K = {}, tau = {:.3e}",
        mesh.num_free(),
        scheme.steps,
        scheme.tau()
    );
    let admissible = scheme.coeff.admissibility(scheme.density.p(), scheme.scheme);
    if !admissible {
        eprintln!(
            "warning: lower-order coefficient {:?} is outside convergence theory for p = {} ({:?})",
            scheme.coeff,
            scheme.density.p(),
            scheme.scheme
        );
    }
    let traj = Stepper::new(space, scheme)?.run(&u0)?;

    let out = cfg.output_dir(config_path);
    create_dir(&out)?;
    export::write_trajectory_csv(&traj, &out.join("trajectory.csv"))?;
    export::write_vtk(&mesh, traj.iterates().last().map(|u| ("u", u)), &out.join("final.vtk"))?;
    if cfg.output.snapshots {
        let dir = out.join("snapshots");
        create_dir(&dir)?;
        for (k, u) in traj.iterates().iter().enumerate() {
            export::write_function_csv(&mesh, u, &dir.join(format!("u_{k:05}.csv")))?;
        }
    }

    let ledgers = energy_ledgers(&traj)?;
    let discrepancy = if scheme.scheme == SchemeKind::SemiImplicit
        && scheme.density.kind == RegularizationKind::QuadraticNorm
    {
        let records = (1..=traj.steps())
            .map(|k| discrepancy_terms(&traj, k))
            .collect::<Result<Vec<_>, _>>()?;
        let e_within_bound = records
            .iter()
            .all(|r| r.e_norm_linf <= r.e_bound * (1.0 + 1e-12) + 1e-14);
        Some(DiscrepancySummary {
            records,
            total: discrepancy_total(&traj, None)?,
            e_within_bound,
        })
    } else {
        None
    };
    let passed =
        ledgers.iter().all(|l| l.holds) && discrepancy.as_ref().is_none_or(|d| d.e_within_bound);
    let diag = RunDiagnostics {
        schema: RUN_SCHEMA,
        config: &cfg,
        mesh: MeshSummary {
            n: cfg.mesh.n << cfg.mesh.refine,
            level: mesh.level(),
            nodes: mesh.num_nodes(),
            cells: mesh.num_cells(),
            free: mesh.num_free(),
            h: mesh.h(),
        },
        admissible,
        ledgers,
        discrepancy,
        total_solver_iterations: traj.stats().iter().map(|s| s.iterations).sum(),
        max_residual: traj.stats().iter().map(|s| s.residual).fold(0.0, f64::max),
        passed,
    };
    export::write_json(&diag, &out.join("diagnostics.json"))?;
    for l in &diag.ledgers {
        if !l.holds {
            log::error!(
                "ledger `{}` violated at step {}: lhs {:.6e} > rhs {:.6e}",
                l.name,
                l.worst_step,
                l.lhs,
                l.rhs
            );
        }
    }
    Ok(RunOutcome {
        output_dir: out,
        passed,
    })
}

pub fn cmd_run(config_path: &Path) -> ExitStatus {
    match run(config_path) {
        Ok(o) if o.passed => {
            println!("run complete: {}", o.output_dir.display());
            ExitStatus::Ok
        }
        Ok(o) => {
            eprintln!("run complete with ledger violations: {}", o.output_dir.display());
            ExitStatus::Violation
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::Failure
        }
    }
}

pub fn study(config_path: &Path) -> Result<(diagnostics::StudyReport, PathBuf), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let sc = cfg.study_config(config_path)?;
    let report = diagnostics::run_study(&sc)?;
    let out = cfg.output_dir(config_path);
    create_dir(&out)?;
    export::write_json(&report, &out.join("study_report.json"))?;
    export::write_study_csv(&report, &out.join("study_levels.csv"))?;
    Ok((report, out))
}

pub fn cmd_study(config_path: &Path) -> ExitStatus {
    match study(config_path) {
        Ok((report, out)) => {
            for a in &report.assertions {
                println!(
                    "{:<5} {:<32} {}",
                    if a.holds { "ok" } else { "FAIL" },
                    a.name,
                    a.detail
                );
            }
            println!("report: {}", out.display());
            if report.passed {
                ExitStatus::Ok
            } else {
                ExitStatus::Violation
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::Failure
        }
    }
}

#[derive(Debug, Serialize)]
struct LemmaReport<'a> {
    schema: &'static str,
    options: &'a CertifyOptions,
    report: &'a CertificationReport,
    passed: bool,
}

pub fn check_lemmas(seed: u64, samples: usize, out: Option<&Path>) -> Result<CertificationReport, CliError> {
    let opts = CertifyOptions {
        seed,
        samples,
        ..CertifyOptions::default()
    };
    let report = certify_lemmas(&opts)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        let doc = LemmaReport {
            schema: LEMMA_SCHEMA,
            options: &opts,
            report: &report,
            passed: report.passed(),
        };
        export::write_json(&doc, &dir.join("lemma_report.json"))?;
    }
    Ok(report)
}

/// Violation table, one row per inequality and grid point.
pub fn format_lemma_table(report: &CertificationReport) -> String {
    let mut s = format!(
        "{:<24} {:>5} {:>5} {:>9} {:>10} {:>12}\n",
        "inequality", "p", "delta", "samples", "violations", "worst_margin"
    );
    for t in &report.tallies {
        s.push_str(&format!(
            "{:<24} {:>5} {:>5} {:>9} {:>10} {:>12.4e}\n",
            t.name, t.p, t.delta, t.samples, t.violations, t.worst_margin
        ));
    }
    for c in &report.constants {
        s.push_str(&format!(
            "constant {:<15} p={:<4} delta={:<4} measured [{:.4}, {:.4}] frozen [{}, {}] {}\n",
            c.name,
            c.p,
            c.delta,
            c.measured_min,
            c.measured_max,
            c.frozen_low,
            c.frozen_high,
            if c.within { "ok" } else { "OUTSIDE" }
        ));
    }
    s.push_str(&format!("total violations: {}\n", report.total_violations));
    s
}

pub fn cmd_check_lemmas(seed: u64, samples: usize, out: Option<&Path>) -> ExitStatus {
    match check_lemmas(seed, samples, out) {
        Ok(r) => {
            print!("{}", format_lemma_table(&r));
            if r.passed() {
                ExitStatus::Ok
            } else {
                ExitStatus::Violation
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::Failure
        }
    }
}

pub fn cmd_export_mesh(n: usize, refine: usize, out: &Path) -> ExitStatus {
    let result = (|| -> Result<(), CliError> {
        let mesh = refinement_hierarchy(n, refine)?
            .into_iter()
            .last()
            .expect("hierarchy is nonempty");
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        export::write_vtk(&mesh, None, out)?;
        println!(
            "wrote {} ({} nodes, {} cells)",
            out.display(),
            mesh.num_nodes(),
            mesh.num_cells()
        );
        Ok(())
    })();
    match result {
        Ok(()) => ExitStatus::Ok,
        Err(e) => {
            eprintln!("error: {e}");
            ExitStatus::Failure
        }
    }
}
