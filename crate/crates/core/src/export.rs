//! File outputs: trajectory and study tables (CSV), nodal snapshots, legacy
//! ASCII VTK meshes and JSON documents.
//!
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! produce identical bytes.

use crate::diagnostics::StudyReport;
use crate::error::Result;
use crate::mesh::{FemFunction, TriMesh};
use crate::schemes::Trajectory;
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const TRAJECTORY_COLUMNS: [&str; 8] = [
    "k",
    "t_k",
    "L2_norm",
    "W1p_seminorm",
    "energy_eps",
    "dtau_L2",
    "solver_iters",
    "residual",
];

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?)
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_COLUMNS)?;
    for r in traj.rows()? {
        w.write_record([
            r.k.to_string(),
            r.t_k.to_string(),
            r.l2_norm.to_string(),
            r.w1p_seminorm.to_string(),
            r.energy_eps.to_string(),
            r.dtau_l2.to_string(),
            r.solver_iters.to_string(),
            r.residual.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per mesh node: `node,x,y,value` (boundary values are zero).
pub fn write_function_csv(mesh: &TriMesh, u: &FemFunction, path: &Path) -> Result<()> {
    u.check_mesh(mesh)?;
    let mut w = writer(path)?;
    w.write_record(["node", "x", "y", "value"])?;
    for (i, (p, v)) in mesh.nodes().iter().zip(u.nodal_values(mesh)).enumerate() {
        w.write_record([i.to_string(), p[0].to_string(), p[1].to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-level table of a study (both the coupled sequence and, when present,
/// the negative control, distinguished by the `sequence` column).
pub fn write_study_csv(report: &StudyReport, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "sequence",
        "level",
        "n",
        "h",
        "eps",
        "tau",
        "K",
        "tau_phi2",
        "semi_L2_max",
        "gap",
        "discrepancy_total",
        "E_max",
        "E_bound",
        "F_dual_max",
        "cauchy_Linf_L2",
        "cauchy_Lp_W1p",
        "ledgers_ok",
        "error",
    ])?;
    let seqs = std::iter::once(("study", &report.study))
        .chain(report.negative_control.iter().map(|c| ("negative-control", c)));
    for (name, seq) in seqs {
        for l in &seq.levels {
            let cauchy = seq.cauchy.iter().find(|c| c.fine == l.level);
            let (cl, cw) = cauchy.map_or((String::new(), String::new()), |c| {
                (c.linf_l2.to_string(), c.lp_w1p.to_string())
            });
            let mut rec = vec![name.to_string(), l.level.to_string()];
            match &l.report {
                Some(r) => {
                    let p = &r.params;
                    rec.extend([
                        p.n.to_string(),
                        p.h.to_string(),
                        p.eps.to_string(),
                        p.tau.to_string(),
                        p.steps.to_string(),
                        p.tau_phi2.to_string(),
                        r.semi_l2_max.to_string(),
                        r.gap.to_string(),
                        r.discrepancy.total.to_string(),
                        r.e_max.to_string(),
                        r.e_bound.to_string(),
                        r.f_dual_max.to_string(),
                        cl,
                        cw,
                        r.ledgers.iter().all(|x| x.holds).to_string(),
                        String::new(),
                    ]);
                }
                None => {
                    rec.extend(std::iter::repeat_n(String::new(), 13));
                    rec.extend([cl, cw]);
                    rec.push(String::new());
                    rec.push(l.error.clone().unwrap_or_default());
                }
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Legacy ASCII VTK unstructured grid; an optional nodal field is attached
/// as point data.
pub fn write_vtk(mesh: &TriMesh, field: Option<(&str, &FemFunction)>, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "lagflow mesh level {}", mesh.level())?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.num_nodes())?;
    for p in mesh.nodes() {
        writeln!(out, "{} {} 0", p[0], p[1])?;
    }
    writeln!(out, "CELLS {} {}", mesh.num_cells(), 4 * mesh.num_cells())?;
    for c in mesh.cells() {
        writeln!(out, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.num_cells())?;
    for _ in mesh.cells() {
        writeln!(out, "5")?;
    }
    writeln!(out, "POINT_DATA {}", mesh.num_nodes())?;
    writeln!(out, "SCALARS boundary int 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for &b in mesh.boundary_flags() {
        writeln!(out, "{}", u8::from(b))?;
    }
    if let Some((name, u)) = field {
        u.check_mesh(mesh)?;
        writeln!(out, "SCALARS {name} double 1")?;
        writeln!(out, "LOOKUP_TABLE default")?;
        for v in u.nodal_values(mesh) {
            writeln!(out, "{v}")?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{interpolate_field, unit_square_mesh};
    use crate::orlicz::{NFunctionPD, RegularizationKind, RegularizedDensity};
    use crate::schemes::{SchemeConfig, Stepper};
    use crate::assembly::P1Space;
    use crate::fields::ScalarField;
    use std::sync::Arc;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("lagflow-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn trajectory_csv_has_one_row_per_iterate() {
        let m = Arc::new(unit_square_mesh(4).unwrap());
        let s = Arc::new(P1Space::new(m.clone()));
        let d = RegularizedDensity::new(NFunctionPD::new(2.0, 0.0).unwrap(), 0.5, RegularizationKind::QuadraticNorm)
            .unwrap();
        let u0 = interpolate_field(&ScalarField::sin_product(), 0.0, &m);
        let t = Stepper::new(s, SchemeConfig::new(d, 0.1, 10)).unwrap().run(&u0).unwrap();
        let path = tmp("traj.csv");
        write_trajectory_csv(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 12);
        assert_eq!(lines[0], TRAJECTORY_COLUMNS.join(","));
        assert!(!text.contains('\r'));
    }

    #[test]
    fn vtk_counts() {
        let m = unit_square_mesh(2).unwrap();
        let path = tmp("mesh.vtk");
        write_vtk(&m, None, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 8 32"));
        let u = interpolate_field(&ScalarField::sin_product(), 0.0, &m);
        write_vtk(&m, Some(("u", &u)), &path).unwrap();
        write_function_csv(&m, &u, &tmp("u.csv")).unwrap();
        let csv = std::fs::read_to_string(tmp("u.csv")).unwrap();
        assert_eq!(csv.lines().count(), 10);
    }
}
