//! Conforming triangulations of the unit square, uniform red refinement and
//! P1 functions with homogeneous Dirichlet values.

use crate::error::{Error, Result};
use crate::fields::ScalarField;
use std::collections::HashMap;

/// Link from a red-refined mesh back to the mesh it was refined from.
#[derive(Debug, Clone)]
pub struct ParentLink {
    pub parent_fingerprint: u64,
    pub parent_node_count: usize,
    /// Parent node `i` lives at child node `parent_map[i]`.
    pub parent_map: Vec<usize>,
    /// Child node `parent_node_count + j` is the midpoint of `midpoints[j]`
    /// (parent node indices).
    pub midpoints: Vec<(usize, usize)>,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    nodes: Vec<[f64; 2]>,
    cells: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    level: usize,
    parent: Option<ParentLink>,
    free_index: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    fingerprint: u64,
}

impl TriMesh {
    fn build(
        nodes: Vec<[f64; 2]>,
        cells: Vec<[usize; 3]>,
        level: usize,
        parent: Option<ParentLink>,
    ) -> Self {
        let mut boundary = vec![false; nodes.len()];
        for (&(a, b), &count) in edge_counts(&cells).iter() {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        let mut free_index = vec![None; nodes.len()];
        let mut free_nodes = Vec::new();
        for (i, &on_boundary) in boundary.iter().enumerate() {
            if !on_boundary {
                free_index[i] = Some(free_nodes.len());
                free_nodes.push(i);
            }
        }
        let fingerprint = fingerprint(&nodes, &cells);
        TriMesh {
            nodes,
            cells,
            boundary,
            level,
            parent,
            free_index,
            free_nodes,
            fingerprint,
        }
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    pub fn boundary_flags(&self) -> &[bool] {
        &self.boundary
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn parent(&self) -> Option<&ParentLink> {
        self.parent.as_ref()
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes.len()
    }

    /// Degree of freedom of a node, `None` on the boundary.
    pub fn free_index(&self, node: usize) -> Option<usize> {
        self.free_index[node]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn num_edges(&self) -> usize {
        edge_counts(&self.cells).len()
    }

    /// Maximum edge length.
    pub fn h(&self) -> f64 {
        edge_counts(&self.cells)
            .keys()
            .map(|&(a, b)| dist(self.nodes[a], self.nodes[b]))
            .fold(0.0, f64::max)
    }

    /// Signed area of a cell (positive for counterclockwise orientation).
    pub fn cell_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    /// Largest circumradius / inradius ratio over all cells.
    pub fn shape_regularity(&self) -> f64 {
        self.cells
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
                let (la, lb, lc) = (dist(pb, pc), dist(pa, pc), dist(pa, pb));
                let area = signed_area(pa, pb, pc).abs();
                let circum = la * lb * lc / (4.0 * area);
                let inr = area / (0.5 * (la + lb + lc));
                circum / inr
            })
            .fold(0.0, f64::max)
    }

    /// Checks conformity (each edge in one or two cells), positive areas and
    /// the boundary flags against the unit square.
    pub fn validate(&self) -> Result<()> {
        for (i, _) in self.cells.iter().enumerate() {
            if self.cell_area(i) <= 0.0 {
                return Err(Error::Domain(format!("cell {i} has non-positive area")));
            }
        }
        for (&(a, b), &count) in edge_counts(&self.cells).iter() {
            if count > 2 {
                return Err(Error::Domain(format!("edge ({a},{b}) shared by {count} cells")));
            }
        }
        Ok(())
    }

    /// Barycentric location of a point: `(cell, λ)`; `None` outside.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let tol = 1e-12;
        for (i, &[a, b, c]) in self.cells.iter().enumerate() {
            let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
            let area = signed_area(pa, pb, pc);
            let l0 = signed_area([x, y], pb, pc) / area;
            let l1 = signed_area(pa, [x, y], pc) / area;
            let l2 = 1.0 - l0 - l1;
            if l0 >= -tol && l1 >= -tol && l2 >= -tol {
                return Some((i, [l0, l1, l2]));
            }
        }
        None
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn edge_counts(cells: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut map = HashMap::with_capacity(cells.len() * 2);
    for &[a, b, c] in cells {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            *map.entry(edge_key(u, v)).or_insert(0) += 1;
        }
    }
    map
}

fn fingerprint(nodes: &[[f64; 2]], cells: &[[usize; 3]]) -> u64 {
    // FNV-1a over coordinate bits and connectivity.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut feed = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    feed(nodes.len() as u64);
    for p in nodes {
        feed(p[0].to_bits());
        feed(p[1].to_bits());
    }
    for c in cells {
        for &i in c {
            feed(i as u64);
        }
    }
    h
}

/// Triangulation of `(0,1)²` with `n × n` squares, each split by a diagonal
/// whose direction alternates with the parity of the square, so every
/// diagonal of a 2×2 block passes through the block centre.
pub fn unit_square_mesh(n: usize) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::param("n", "cells per side must be >= 1"));
    }
    let stride = n + 1;
    let mut nodes = Vec::with_capacity(stride * stride);
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / n as f64, j as f64 / n as f64]);
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let a = i + j * stride;
            let b = a + 1;
            let c = b + stride;
            let d = a + stride;
            if (i + j) % 2 == 0 {
                cells.push([a, b, c]);
                cells.push([a, c, d]);
            } else {
                cells.push([a, b, d]);
                cells.push([b, c, d]);
            }
        }
    }
    Ok(TriMesh::build(nodes, cells, 0, None))
}

/// Splits every triangle into four congruent children through its edge
/// midpoints. Parent nodes keep their indices; midpoints are appended.
pub fn refine_red(m: &TriMesh) -> TriMesh {
    let mut nodes = m.nodes.clone();
    let mut midpoint_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut midpoints = Vec::new();
    let mut mid = |a: usize, b: usize, nodes: &mut Vec<[f64; 2]>| -> usize {
        let key = edge_key(a, b);
        *midpoint_of.entry(key).or_insert_with(|| {
            let (pa, pb) = (nodes[a], nodes[b]);
            nodes.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            midpoints.push(key);
            nodes.len() - 1
        })
    };
    let mut cells = Vec::with_capacity(4 * m.cells.len());
    for &[a, b, c] in &m.cells {
        let ab = mid(a, b, &mut nodes);
        let bc = mid(b, c, &mut nodes);
        let ca = mid(c, a, &mut nodes);
        cells.push([a, ab, ca]);
        cells.push([ab, b, bc]);
        cells.push([ca, bc, c]);
        cells.push([ab, bc, ca]);
    }
    let link = ParentLink {
        parent_fingerprint: m.fingerprint,
        parent_node_count: m.nodes.len(),
        parent_map: (0..m.nodes.len()).collect(),
        midpoints,
    };
    TriMesh::build(nodes, cells, m.level + 1, Some(link))
}

/// `levels` successive red refinements of `unit_square_mesh(n)`; element
/// `ℓ` of the result is at refinement level `ℓ`.
pub fn refinement_hierarchy(n: usize, levels: usize) -> Result<Vec<TriMesh>> {
    let mut out = vec![unit_square_mesh(n)?];
    for _ in 0..levels {
        let next = refine_red(out.last().expect("non-empty"));
        out.push(next);
    }
    Ok(out)
}

/// Continuous piecewise affine function on a mesh, zero on the boundary,
/// stored by its values at the free nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct FemFunction {
    level: usize,
    mesh_fingerprint: u64,
    coeffs: Vec<f64>,
}

impl FemFunction {
    pub fn zeros(m: &TriMesh) -> Self {
        FemFunction {
            level: m.level,
            mesh_fingerprint: m.fingerprint,
            coeffs: vec![0.0; m.num_free()],
        }
    }

    pub fn from_coeffs(m: &TriMesh, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != m.num_free() {
            return Err(Error::MeshMismatch(format!(
                "{} coefficients for {} free nodes",
                coeffs.len(),
                m.num_free()
            )));
        }
        Ok(FemFunction {
            level: m.level,
            mesh_fingerprint: m.fingerprint,
            coeffs,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn mesh_fingerprint(&self) -> u64 {
        self.mesh_fingerprint
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn check_mesh(&self, m: &TriMesh) -> Result<()> {
        if self.mesh_fingerprint != m.fingerprint || self.coeffs.len() != m.num_free() {
            return Err(Error::MeshMismatch(format!(
                "function of level {} does not live on mesh of level {}",
                self.level, m.level
            )));
        }
        Ok(())
    }

    /// Values at all mesh nodes (zero on the boundary).
    pub fn nodal_values(&self, m: &TriMesh) -> Vec<f64> {
        let mut out = vec![0.0; m.num_nodes()];
        for (k, &node) in m.free_nodes.iter().enumerate() {
            out[node] = self.coeffs[k];
        }
        out
    }

    /// Point evaluation; zero outside the domain.
    pub fn eval(&self, m: &TriMesh, x: f64, y: f64) -> f64 {
        let Some((cell, lambda)) = m.locate(x, y) else {
            return 0.0;
        };
        m.cells[cell]
            .iter()
            .zip(lambda)
            .map(|(&node, l)| m.free_index[node].map_or(0.0, |k| self.coeffs[k]) * l)
            .sum()
    }

    /// Linear combination `a·self + b·other` on the same mesh.
    pub fn axpby(&self, a: f64, other: &FemFunction, b: f64) -> FemFunction {
        debug_assert_eq!(self.mesh_fingerprint, other.mesh_fingerprint);
        FemFunction {
            level: self.level,
            mesh_fingerprint: self.mesh_fingerprint,
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &FemFunction) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact injection of a function into the red refinement of its mesh.
pub fn prolong(u: &FemFunction, target: &TriMesh) -> Result<FemFunction> {
    let link = target
        .parent
        .as_ref()
        .filter(|l| l.parent_fingerprint == u.mesh_fingerprint)
        .ok_or_else(|| {
            Error::MeshMismatch("target mesh is not the red refinement of the function's mesh".into())
        })?;
    let mut full = vec![0.0; target.num_nodes()];
    // Coarse nodal values, zero on the coarse boundary. Coarse free nodes are
    // listed in increasing node order, so walk them alongside.
    let mut coarse = vec![0.0; link.parent_node_count];
    let mut k = 0;
    for (node, slot) in coarse.iter_mut().enumerate() {
        let child = link.parent_map[node];
        if !target.boundary[child] {
            *slot = u.coeffs[k];
            k += 1;
        }
    }
    if k != u.coeffs.len() {
        return Err(Error::MeshMismatch("coarse free-node count disagrees".into()));
    }
    for (node, &v) in coarse.iter().enumerate() {
        full[link.parent_map[node]] = v;
    }
    for (j, &(a, b)) in link.midpoints.iter().enumerate() {
        full[link.parent_node_count + j] = 0.5 * (coarse[a] + coarse[b]);
    }
    let coeffs = target.free_nodes.iter().map(|&n| full[n]).collect();
    FemFunction::from_coeffs(target, coeffs)
}

/// Applies [`prolong`] through a chain of refinements ending at `target`.
pub fn prolong_to(u: &FemFunction, chain: &[TriMesh], target_level: usize) -> Result<FemFunction> {
    let mut cur = u.clone();
    while cur.level < target_level {
        let next = chain
            .iter()
            .find(|m| m.level == cur.level + 1)
            .ok_or_else(|| Error::MeshMismatch(format!("no mesh at level {}", cur.level + 1)))?;
        cur = prolong(&cur, next)?;
    }
    Ok(cur)
}

/// Nodal interpolant of `expr`. Boundary values are discarded; a warning is
/// logged when they are not zero.
pub fn interpolate_nodal(expr: impl Fn(f64, f64) -> f64, m: &TriMesh) -> FemFunction {
    let mut worst: f64 = 0.0;
    for (i, p) in m.nodes.iter().enumerate() {
        if m.boundary[i] {
            worst = worst.max(expr(p[0], p[1]).abs());
        }
    }
    if worst > 1e-12 {
        log::warn!("interpolant: discarding nonzero boundary values (max {worst:.3e})");
    }
    let coeffs = m
        .free_nodes
        .iter()
        .map(|&n| expr(m.nodes[n][0], m.nodes[n][1]))
        .collect();
    FemFunction {
        level: m.level,
        mesh_fingerprint: m.fingerprint,
        coeffs,
    }
}

pub fn interpolate_field(field: &ScalarField, t: f64, m: &TriMesh) -> FemFunction {
    interpolate_nodal(|x, y| field.eval(x, y, t), m)
}
