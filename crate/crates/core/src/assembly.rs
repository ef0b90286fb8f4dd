//! P1 assembly on a [`TriMesh`]: mass, weighted stiffness and weighted mass
//! matrices over the free nodes, load vectors, norms and energies.
//!
//! Element matrices are computed in parallel and scattered into the global
//! matrix in cell order, so the result does not depend on the thread count.

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use crate::linalg::{SparsityPattern, SymSparse};
use crate::lower_order::LowerOrderCoeff;
use crate::mesh::{FemFunction, TriMesh};
use crate::orlicz::{RegularizedDensity, Vec2};
use rayon::prelude::*;
use std::sync::{Arc, OnceLock};

/// Barycentric coordinates of the three edge midpoints.
const MIDPOINTS: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];

/// Per-cell gradients of the three local hat functions and cell areas.
#[derive(Debug, Clone)]
pub struct ElementGradientTable {
    pub grads: Vec<[Vec2; 3]>,
    pub areas: Vec<f64>,
}

impl ElementGradientTable {
    pub fn new(m: &TriMesh) -> Self {
        let (grads, areas) = m
            .cells()
            .iter()
            .map(|&[a, b, c]| {
                let nodes = m.nodes();
                hat_gradients(nodes[a], nodes[b], nodes[c])
            })
            .unzip();
        ElementGradientTable { grads, areas }
    }
}

/// Hat gradients and area of a single triangle.
pub fn hat_gradients(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([Vec2; 3], f64) {
    let area = crate::mesh::signed_area(a, b, c);
    let s = 1.0 / (2.0 * area);
    // ∇λ_i is the inward normal of the opposite edge scaled by its length.
    let g = |p: [f64; 2], q: [f64; 2]| Vec2::new((p[1] - q[1]) * s, (q[0] - p[0]) * s);
    ([g(b, c), g(c, a), g(a, b)], area.abs())
}

/// Local P1 mass matrix `area/12 · [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Local stiffness `area · ∇λ_i·∇λ_j`.
pub fn element_stiffness(grads: &[Vec2; 3], area: f64) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * grads[i].dot(grads[j]);
        }
    }
    k
}

/// A mesh together with its gradient table and the sparsity pattern of the
/// free-node system, shared by every matrix assembled on it.
#[derive(Debug)]
pub struct P1Space {
    mesh: Arc<TriMesh>,
    table: ElementGradientTable,
    pattern: Arc<SparsityPattern>,
    full_pattern: OnceLock<Arc<SparsityPattern>>,
    mass: OnceLock<SymSparse>,
}

impl P1Space {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        let table = ElementGradientTable::new(&mesh);
        let pairs = mesh.cells().iter().flat_map(|cell| {
            let free: Vec<usize> = cell.iter().filter_map(|&n| mesh.free_index(n)).collect();
            let mut out = Vec::with_capacity(6);
            for (a, &i) in free.iter().enumerate() {
                for &j in &free[..=a] {
                    out.push((i, j));
                }
            }
            out
        });
        let pattern = Arc::new(SparsityPattern::from_pairs(mesh.num_free(), pairs.collect::<Vec<_>>()));
        P1Space {
            mesh,
            table,
            pattern,
            full_pattern: OnceLock::new(),
            mass: OnceLock::new(),
        }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn table(&self) -> &ElementGradientTable {
        &self.table
    }

    pub fn pattern(&self) -> &Arc<SparsityPattern> {
        &self.pattern
    }

    pub fn num_free(&self) -> usize {
        self.mesh.num_free()
    }

    fn check(&self, u: &FemFunction) -> Result<()> {
        u.check_mesh(&self.mesh)
    }

    fn scatter(&self, locals: &[[[f64; 3]; 3]]) -> SymSparse {
        let mut a = SymSparse::zeros(self.pattern.clone());
        for (cell, local) in self.mesh.cells().iter().zip(locals) {
            let idx = cell.map(|n| self.mesh.free_index(n));
            for i in 0..3 {
                let Some(gi) = idx[i] else { continue };
                for j in 0..=i {
                    let Some(gj) = idx[j] else { continue };
                    if gi == gj {
                        a.add(gi, gi, local[i][i]);
                    } else {
                        a.add(gi, gj, local[i][j]);
                    }
                }
            }
        }
        a
    }

    fn scatter_vec(&self, locals: &[[f64; 3]]) -> Vec<f64> {
        let mut v = vec![0.0; self.num_free()];
        for (cell, local) in self.mesh.cells().iter().zip(locals) {
            for (&n, &x) in cell.iter().zip(local) {
                if let Some(g) = self.mesh.free_index(n) {
                    v[g] += x;
                }
            }
        }
        v
    }

    fn cells_par(&self) -> impl IndexedParallelIterator<Item = usize> {
        (0..self.mesh.num_cells()).into_par_iter()
    }

    /// Cellwise constant gradients of `u`.
    pub fn cell_gradients(&self, u: &FemFunction) -> Vec<Vec2> {
        let vals = u.nodal_values(&self.mesh);
        self.mesh
            .cells()
            .iter()
            .zip(&self.table.grads)
            .map(|(cell, g)| {
                (0..3).fold(Vec2::ZERO, |acc, i| acc + vals[cell[i]] * g[i])
            })
            .collect()
    }

    /// Values of `u` at the three edge midpoints of every cell.
    pub fn midpoint_values(&self, u: &FemFunction) -> Vec<[f64; 3]> {
        let vals = u.nodal_values(&self.mesh);
        self.mesh
            .cells()
            .iter()
            .map(|cell| MIDPOINTS.map(|l| (0..3).map(|i| l[i] * vals[cell[i]]).sum()))
            .collect()
    }

    /// Consistent mass matrix on the free nodes (cached).
    pub fn mass_matrix(&self) -> &SymSparse {
        self.mass.get_or_init(|| {
            let locals: Vec<_> = self.table.areas.iter().map(|&a| element_mass(a)).collect();
            self.scatter(&locals)
        })
    }

    /// Mass matrix over all nodes, boundary included.
    pub fn mass_matrix_full(&self) -> SymSparse {
        let pat = self
            .full_pattern
            .get_or_init(|| {
                let pairs: Vec<_> = self
                    .mesh
                    .cells()
                    .iter()
                    .flat_map(|&[a, b, c]| [(a, a), (b, b), (c, c), (a, b), (b, c), (a, c)])
                    .collect();
                Arc::new(SparsityPattern::from_pairs(self.mesh.num_nodes(), pairs))
            })
            .clone();
        let mut m = SymSparse::zeros(pat);
        for (cell, &area) in self.mesh.cells().iter().zip(&self.table.areas) {
            let local = element_mass(area);
            for i in 0..3 {
                for j in 0..=i {
                    m.add(cell[i], cell[j], local[i][j]);
                }
            }
        }
        m
    }

    /// Cellwise diffusion weights `ω(|∇w|_T)`.
    pub fn cell_weights(&self, w: &FemFunction, dens: &RegularizedDensity) -> Result<Vec<f64>> {
        self.check(w)?;
        let grads = self.cell_gradients(w);
        let degenerate = !dens.is_nondegenerate();
        grads
            .iter()
            .enumerate()
            .map(|(cell, g)| {
                let t = g.norm();
                if degenerate && t == 0.0 {
                    return Err(Error::DegenerateWeight { cell });
                }
                Ok(dens.weight(t))
            })
            .collect()
    }

    /// `∫ ω_T ∇ψ_i·∇ψ_j` with the weight frozen at `w`.
    pub fn weighted_stiffness(&self, w: &FemFunction, dens: &RegularizedDensity) -> Result<SymSparse> {
        let weights = self.cell_weights(w, dens)?;
        Ok(self.stiffness_with_weights(&weights))
    }

    /// Stiffness matrix with given cellwise weights.
    pub fn stiffness_with_weights(&self, weights: &[f64]) -> SymSparse {
        let locals: Vec<_> = self
            .cells_par()
            .map(|c| {
                let mut k = element_stiffness(&self.table.grads[c], self.table.areas[c]);
                k.iter_mut().flatten().for_each(|v| *v *= weights[c]);
                k
            })
            .collect();
        self.scatter(&locals)
    }

    /// `∫ d(w) ψ_i ψ_j` by the edge-midpoint rule.
    pub fn weighted_mass(&self, w: &FemFunction, coeff: &LowerOrderCoeff) -> Result<SymSparse> {
        self.check(w)?;
        let wm = self.midpoint_values(w);
        Ok(self.midpoint_mass(|c, q| coeff.d(wm[c][q])))
    }

    /// Mass-type matrix `∫ ρ ψ_i ψ_j` with `ρ` given at the edge midpoints.
    fn midpoint_mass(&self, rho: impl Fn(usize, usize) -> f64 + Sync) -> SymSparse {
        let locals: Vec<_> = self
            .cells_par()
            .map(|c| {
                let wq = self.table.areas[c] / 3.0;
                let mut k = [[0.0; 3]; 3];
                for (q, l) in MIDPOINTS.iter().enumerate() {
                    let r = rho(c, q) * wq;
                    for i in 0..3 {
                        for j in 0..3 {
                            k[i][j] += r * l[i] * l[j];
                        }
                    }
                }
                k
            })
            .collect();
        self.scatter(&locals)
    }

    /// `∫ f(·, t) ψ_i` by the edge-midpoint rule.
    pub fn load_vector(&self, f: &ScalarField, t: f64) -> Vec<f64> {
        if f.is_zero() {
            return vec![0.0; self.num_free()];
        }
        let locals = self.load_locals(f, t);
        self.scatter_vec(&locals)
    }

    /// Load vector over all nodes, boundary included.
    pub fn load_vector_full(&self, f: &ScalarField, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.mesh.num_nodes()];
        for (cell, local) in self.mesh.cells().iter().zip(self.load_locals(f, t)) {
            for (&n, x) in cell.iter().zip(local) {
                v[n] += x;
            }
        }
        v
    }

    fn load_locals(&self, f: &ScalarField, t: f64) -> Vec<[f64; 3]> {
        let nodes = self.mesh.nodes();
        self.cells_par()
            .map(|c| {
                let cell = self.mesh.cells()[c];
                let wq = self.table.areas[c] / 3.0;
                let mut out = [0.0; 3];
                for l in MIDPOINTS {
                    let x = (0..3).map(|i| l[i] * nodes[cell[i]][0]).sum();
                    let y = (0..3).map(|i| l[i] * nodes[cell[i]][1]).sum();
                    let fv = f.eval(x, y, t) * wq;
                    for i in 0..3 {
                        out[i] += fv * l[i];
                    }
                }
                out
            })
            .collect()
    }

    /// `∫ |f(·, t)|²` by the edge-midpoint rule, the quadrature consistent
    /// with [`P1Space::load_vector`].
    pub fn field_l2_sq(&self, f: &ScalarField, t: f64) -> f64 {
        if f.is_zero() {
            return 0.0;
        }
        let nodes = self.mesh.nodes();
        (0..self.mesh.num_cells())
            .map(|c| {
                let cell = self.mesh.cells()[c];
                MIDPOINTS
                    .iter()
                    .map(|l| {
                        let x: f64 = (0..3).map(|i| l[i] * nodes[cell[i]][0]).sum();
                        let y: f64 = (0..3).map(|i| l[i] * nodes[cell[i]][1]).sum();
                        f.eval(x, y, t).powi(2)
                    })
                    .sum::<f64>()
                    * self.table.areas[c]
                    / 3.0
            })
            .sum()
    }

    /// `∫ ψ(|∇u|)` with the density of `dens`, exact for P1.
    pub fn energy(&self, u: &FemFunction, dens: &RegularizedDensity) -> Result<f64> {
        self.check(u)?;
        Ok(self
            .cell_gradients(u)
            .iter()
            .zip(&self.table.areas)
            .map(|(g, a)| a * dens.density(g.norm()))
            .sum())
    }

    /// `√(uᵀ M u)`.
    pub fn norm_l2(&self, u: &FemFunction) -> Result<f64> {
        self.check(u)?;
        Ok(self.mass_matrix().quad_form(u.coeffs()).max(0.0).sqrt())
    }

    /// `(Σ_T area_T |∇u|_T^p)^{1/p}`.
    pub fn seminorm_w1p(&self, u: &FemFunction, p: f64) -> Result<f64> {
        self.check(u)?;
        let s: f64 = self
            .cell_gradients(u)
            .iter()
            .zip(&self.table.areas)
            .map(|(g, a)| a * g.norm().powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    /// `∫ ω_T |∇v|²` with cellwise weights.
    pub fn weighted_dirichlet(&self, v: &FemFunction, weights: &[f64]) -> f64 {
        self.cell_gradients(v)
            .iter()
            .zip(&self.table.areas)
            .zip(weights)
            .map(|((g, a), w)| a * w * g.norm_sq())
            .sum()
    }

    /// `∫ |d(w)|² |u|²` by the edge-midpoint rule.
    pub fn lower_order_sq(&self, w: &FemFunction, u: &FemFunction, coeff: &LowerOrderCoeff) -> f64 {
        if coeff.is_zero() {
            return 0.0;
        }
        let wm = self.midpoint_values(w);
        let um = self.midpoint_values(u);
        (0..self.mesh.num_cells())
            .map(|c| {
                (0..3)
                    .map(|q| (coeff.d(wm[c][q]) * um[c][q]).powi(2))
                    .sum::<f64>()
                    * self.table.areas[c]
                    / 3.0
            })
            .sum()
    }

    /// Nonlinear flux vector `∫ ω(|∇u|) ∇u·∇ψ_i`.
    pub fn flux_vector(&self, u: &FemFunction, dens: &RegularizedDensity) -> Vec<f64> {
        let grads = self.cell_gradients(u);
        let locals: Vec<[f64; 3]> = self
            .cells_par()
            .map(|c| {
                let q = dens.flux(grads[c]);
                let a = self.table.areas[c];
                self.table.grads[c].map(|g| a * q.dot(g))
            })
            .collect();
        self.scatter_vec(&locals)
    }

    /// Jacobian of [`P1Space::flux_vector`].
    pub fn flux_jacobian(&self, u: &FemFunction, dens: &RegularizedDensity) -> SymSparse {
        let grads = self.cell_gradients(u);
        let locals: Vec<_> = self
            .cells_par()
            .map(|c| {
                let j = dens.flux_jacobian(grads[c]);
                let a = self.table.areas[c];
                let g = &self.table.grads[c];
                let mut k = [[0.0; 3]; 3];
                for r in 0..3 {
                    let jg = Vec2::new(
                        j[0][0] * g[r].x + j[0][1] * g[r].y,
                        j[1][0] * g[r].x + j[1][1] * g[r].y,
                    );
                    for s in 0..3 {
                        k[r][s] = a * jg.dot(g[s]);
                    }
                }
                k
            })
            .collect();
        self.scatter(&locals)
    }

    /// `∫ g(u) ψ_i` by the edge-midpoint rule.
    pub fn lower_order_vector(&self, u: &FemFunction, coeff: &LowerOrderCoeff) -> Vec<f64> {
        if coeff.is_zero() {
            return vec![0.0; self.num_free()];
        }
        let um = self.midpoint_values(u);
        let locals: Vec<[f64; 3]> = self
            .cells_par()
            .map(|c| {
                let wq = self.table.areas[c] / 3.0;
                let mut out = [0.0; 3];
                for (q, l) in MIDPOINTS.iter().enumerate() {
                    let gv = coeff.g(um[c][q]) * wq;
                    for i in 0..3 {
                        out[i] += gv * l[i];
                    }
                }
                out
            })
            .collect();
        self.scatter_vec(&locals)
    }

    /// `∫ g'(u) ψ_i ψ_j`, the Jacobian of [`P1Space::lower_order_vector`].
    pub fn lower_order_jacobian(&self, u: &FemFunction, coeff: &LowerOrderCoeff) -> SymSparse {
        let um = self.midpoint_values(u);
        self.midpoint_mass(|c, q| coeff.g_prime(um[c][q]))
    }
}

fn space(m: &TriMesh) -> P1Space {
    P1Space::new(Arc::new(m.clone()))
}

pub fn mass_matrix(m: &TriMesh) -> SymSparse {
    space(m).mass_matrix().clone()
}

pub fn weighted_stiffness(m: &TriMesh, w: &FemFunction, dens: &RegularizedDensity) -> Result<SymSparse> {
    space(m).weighted_stiffness(w, dens)
}

pub fn weighted_mass(m: &TriMesh, w: &FemFunction, coeff: &LowerOrderCoeff) -> Result<SymSparse> {
    space(m).weighted_mass(w, coeff)
}

pub fn load_vector(m: &TriMesh, f: &ScalarField, t: f64) -> Vec<f64> {
    space(m).load_vector(f, t)
}

pub fn energy(m: &TriMesh, u: &FemFunction, dens: &RegularizedDensity) -> Result<f64> {
    space(m).energy(u, dens)
}

pub fn norm_l2(m: &TriMesh, u: &FemFunction) -> Result<f64> {
    space(m).norm_l2(u)
}

pub fn seminorm_w1p(m: &TriMesh, u: &FemFunction, p: f64) -> Result<f64> {
    space(m).seminorm_w1p(u, p)
}
