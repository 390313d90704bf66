//! Continuous piecewise-linear finite elements on [`TriMesh`] with homogeneous
//! Dirichlet data eliminated from the system.
//!
//! All integrals use the three-point edge-midpoint rule, exact for quadratics.

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::mesh::TriMesh;
use crate::sparse::{cg_solve, default_max_iter, SparseMatrix, TripletBuilder};

/// Tolerance for the projection solves.
const PROJECTION_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct FemSpace {
    pub mesh: TriMesh,
    /// Interior node indices, in increasing order; position = dof number.
    pub free_dofs: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
}

/// Per-triangle geometry reused by every assembly loop.
#[derive(Debug, Clone, Copy)]
struct Element {
    nodes: [usize; 3],
    area: f64,
    grads: [[f64; 2]; 3],
    mids: [[f64; 2]; 3],
}

/// Basis values at the edge midpoints: midpoint `q` lies opposite vertex `q`.
const MID_BASIS: [[f64; 3]; 3] = [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]];

fn element_geometry(p: &[[f64; 2]; 3]) -> Option<(f64, [[f64; 2]; 3])> {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if !(area > 0.0) {
        return None;
    }
    let mut grads = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        grads[i] = [(p[j][1] - p[k][1]) / (2.0 * area), (p[k][0] - p[j][0]) / (2.0 * area)];
    }
    Some((area, grads))
}

/// Local P1 stiffness matrix of a counterclockwise triangle.
pub fn element_stiffness(p: &[[f64; 2]; 3]) -> Option<[[f64; 3]; 3]> {
    let (area, g) = element_geometry(p)?;
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
        }
    }
    Some(k)
}

/// Local P1 mass matrix of a counterclockwise triangle.
pub fn element_mass(p: &[[f64; 2]; 3]) -> Option<[[f64; 3]; 3]> {
    let (area, _) = element_geometry(p)?;
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|q| MID_BASIS[q][i] * MID_BASIS[q][j]).sum::<f64>() * area / 3.0;
        }
    }
    Some(m)
}

impl FemSpace {
    pub fn new(mesh: TriMesh) -> Self {
        let mut dof_of_node = vec![None; mesh.node_count()];
        let mut free_dofs = Vec::with_capacity(mesh.interior_count());
        for (node, b) in mesh.boundary_mask.iter().enumerate() {
            if !b {
                dof_of_node[node] = Some(free_dofs.len());
                free_dofs.push(node);
            }
        }
        Self {
            mesh,
            free_dofs,
            dof_of_node,
        }
    }

    pub fn dofs(&self) -> usize {
        self.free_dofs.len()
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    pub fn dof_coords(&self, dof: usize) -> [f64; 2] {
        self.mesh.nodes[self.free_dofs[dof]]
    }

    fn elements(&self) -> impl Iterator<Item = Result<Element>> + '_ {
        self.mesh.triangles.iter().enumerate().map(move |(t, tri)| {
            let p = tri.map(|n| self.mesh.nodes[n]);
            let (area, grads) = element_geometry(&p).ok_or(Error::DegenerateElement(t))?;
            let mid = |a: usize, b: usize| [0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])];
            Ok(Element {
                nodes: *tri,
                area,
                grads,
                mids: [mid(1, 2), mid(0, 2), mid(0, 1)],
            })
        })
    }

    /// Expands a dof vector to all mesh nodes (boundary values zero).
    pub fn to_nodal(&self, u: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.mesh.node_count()];
        for (d, n) in self.free_dofs.iter().enumerate() {
            full[*n] = u[d];
        }
        full
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.dofs() {
            return Err(Error::DimensionMismatch {
                expected: self.dofs(),
                got: u.len(),
            });
        }
        Ok(())
    }

    fn assemble(
        &self,
        weight: Option<&ScalarField>,
        local: impl Fn(&Element, [f64; 3]) -> [[f64; 3]; 3],
        free_only: bool,
    ) -> Result<SparseMatrix> {
        let dim = if free_only { self.dofs() } else { self.mesh.node_count() };
        let mut b = TripletBuilder::with_capacity(dim, 9 * self.mesh.triangles.len());
        for el in self.elements() {
            let el = el?;
            let w = match weight {
                Some(f) => {
                    let w = el.mids.map(|m| f.eval(m[0], m[1]));
                    if w.iter().any(|v| !(*v > 0.0)) {
                        return Err(Error::invalid("coefficient field must be strictly positive"));
                    }
                    w
                }
                None => [1.0; 3],
            };
            let k = local(&el, w);
            for i in 0..3 {
                let gi = if free_only {
                    match self.dof_of_node[el.nodes[i]] {
                        Some(d) => d,
                        None => continue,
                    }
                } else {
                    el.nodes[i]
                };
                for j in 0..3 {
                    let gj = if free_only {
                        match self.dof_of_node[el.nodes[j]] {
                            Some(d) => d,
                            None => continue,
                        }
                    } else {
                        el.nodes[j]
                    };
                    b.add(gi, gj, k[i][j]);
                }
            }
        }
        Ok(b.build())
    }

    fn local_mass(el: &Element, w: [f64; 3]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|q| w[q] * MID_BASIS[q][i] * MID_BASIS[q][j]).sum::<f64>() * el.area / 3.0;
            }
        }
        m
    }

    fn local_stiffness(el: &Element, w: [f64; 3]) -> [[f64; 3]; 3] {
        let wbar = (w[0] + w[1] + w[2]) / 3.0;
        let g = &el.grads;
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = wbar * el.area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        k
    }

    /// Mass matrix `∫ w φ_i φ_j` over free dofs.
    pub fn assemble_mass(&self, weight: Option<&ScalarField>) -> Result<SparseMatrix> {
        self.assemble(weight, Self::local_mass, true)
    }

    /// Stiffness matrix `∫ w ∇φ_i·∇φ_j` over free dofs.
    pub fn assemble_stiffness(&self, weight: Option<&ScalarField>) -> Result<SparseMatrix> {
        self.assemble(weight, Self::local_stiffness, true)
    }

    /// Mass matrix over all nodes, before Dirichlet elimination.
    pub fn assemble_full_mass(&self) -> Result<SparseMatrix> {
        self.assemble(None, Self::local_mass, false)
    }

    /// Stiffness matrix over all nodes, before Dirichlet elimination.
    pub fn assemble_full_stiffness(&self) -> Result<SparseMatrix> {
        self.assemble(None, Self::local_stiffness, false)
    }

    /// Load vector `b_i = ∫ f φ_i`.
    pub fn load(&self, f: &ScalarField) -> Result<Vec<f64>> {
        let mut b = vec![0.0; self.dofs()];
        for el in self.elements() {
            let el = el?;
            let fq = el.mids.map(|m| f.eval(m[0], m[1]));
            for i in 0..3 {
                if let Some(d) = self.dof_of_node[el.nodes[i]] {
                    b[d] += (0..3).map(|q| fq[q] * MID_BASIS[q][i]).sum::<f64>() * el.area / 3.0;
                }
            }
        }
        Ok(b)
    }

    /// Nodal interpolant at the free dofs.
    pub fn interpolate(&self, f: &ScalarField) -> Vec<f64> {
        self.free_dofs
            .iter()
            .map(|n| {
                let p = self.mesh.nodes[*n];
                f.eval(p[0], p[1])
            })
            .collect()
    }

    /// L² projection: solves `M p = (f, φ_i)`.
    pub fn l2_project(&self, f: &ScalarField) -> Result<Vec<f64>> {
        let m = self.assemble_mass(None)?;
        let b = self.load(f)?;
        cg_solve(&m, &b, PROJECTION_RTOL, default_max_iter(self.dofs())).map(|(x, _)| x)
    }

    /// Right-hand side `(∇u, ∇φ_i)` of the elliptic projection.
    pub fn elliptic_rhs(&self, u: &ScalarField) -> Result<Vec<f64>> {
        if !u.has_gradient() {
            return Err(Error::invalid("elliptic projection needs an analytic gradient"));
        }
        let mut b = vec![0.0; self.dofs()];
        for el in self.elements() {
            let el = el?;
            let gq = el.mids.map(|m| u.gradient(m[0], m[1]).unwrap_or([0.0; 2]));
            let gbar = [
                (gq[0][0] + gq[1][0] + gq[2][0]) / 3.0,
                (gq[0][1] + gq[1][1] + gq[2][1]) / 3.0,
            ];
            for i in 0..3 {
                if let Some(d) = self.dof_of_node[el.nodes[i]] {
                    b[d] += el.area * (gbar[0] * el.grads[i][0] + gbar[1] * el.grads[i][1]);
                }
            }
        }
        Ok(b)
    }

    /// Elliptic (Ritz) projection: solves `K p = (∇u, ∇φ_i)`.
    pub fn elliptic_project(&self, u: &ScalarField) -> Result<Vec<f64>> {
        let b = self.elliptic_rhs(u)?;
        let k = self.assemble_stiffness(None)?;
        cg_solve(&k, &b, PROJECTION_RTOL, default_max_iter(self.dofs())).map(|(x, _)| x)
    }

    /// `∫_Ω f` by the edge-midpoint rule.
    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.elements()
            .filter_map(|e| e.ok())
            .map(|el| el.mids.iter().map(|m| f(m[0], m[1])).sum::<f64>() * el.area / 3.0)
            .sum()
    }

    /// Errors of the discrete function `u` against `exact`: (L², nodal max, full H¹).
    pub fn error_norms(&self, u: &[f64], exact: &ScalarField) -> Result<ErrorNorms> {
        self.check_len(u)?;
        if !exact.has_gradient() {
            return Err(Error::invalid("error norms need an analytic gradient"));
        }
        let full = self.to_nodal(u);
        let mut l2 = 0.0;
        let mut semi = 0.0;
        for el in self.elements() {
            let el = el?;
            let uh = el.nodes.map(|n| full[n]);
            let guh = [
                (0..3).map(|i| uh[i] * el.grads[i][0]).sum::<f64>(),
                (0..3).map(|i| uh[i] * el.grads[i][1]).sum::<f64>(),
            ];
            for (q, m) in el.mids.iter().enumerate() {
                let uq: f64 = (0..3).map(|i| MID_BASIS[q][i] * uh[i]).sum();
                let e = exact.eval(m[0], m[1]) - uq;
                let g = exact.gradient(m[0], m[1]).unwrap_or([0.0; 2]);
                l2 += el.area / 3.0 * e * e;
                semi += el.area / 3.0 * ((g[0] - guh[0]).powi(2) + (g[1] - guh[1]).powi(2));
            }
        }
        let linf = self
            .mesh
            .nodes
            .iter()
            .zip(&full)
            .map(|(p, v)| (exact.eval(p[0], p[1]) - v).abs())
            .fold(0.0, f64::max);
        Ok(ErrorNorms {
            l2: l2.sqrt(),
            linf,
            h1: (l2 + semi).sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub linf: f64,
    /// Full H¹ norm: L² part plus gradient seminorm.
    pub h1: f64,
}
