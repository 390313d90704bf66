//! Five-point finite differences for `A_h = −Δ_h` on a square with zero
//! Dirichlet data. Mesh functions vanish outside the interior grid.

use crate::error::{Error, Result};
use crate::mesh::FdGrid;
use crate::sparse::{SparseMatrix, TripletBuilder};

#[derive(Debug, Clone)]
pub struct FdOperator {
    pub grid: FdGrid,
    laplacian: SparseMatrix,
}

impl FdOperator {
    pub fn new(grid: FdGrid) -> Self {
        let laplacian = assemble_laplacian(&grid);
        Self { grid, laplacian }
    }

    pub fn dofs(&self) -> usize {
        self.grid.unknowns()
    }

    /// Assembled `A_h`.
    pub fn laplacian(&self) -> &SparseMatrix {
        &self.laplacian
    }

    /// Mass of the discrete inner product `⟨w, v⟩ = h² Σ w v`.
    pub fn mass(&self) -> SparseMatrix {
        SparseMatrix::diagonal(&vec![self.grid.h * self.grid.h; self.dofs()])
    }

    /// Stiffness `h² A_h`, so that `vᵀ K v = ‖v‖²_{1,h}`.
    pub fn stiffness(&self) -> SparseMatrix {
        self.laplacian.scaled(self.grid.h * self.grid.h)
    }

    /// Matrix-free stencil action `A_h v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.dofs();
        if v.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: v.len() });
        }
        let g = &self.grid;
        let m = g.n_per_side;
        let inv_h2 = 1.0 / (g.h * g.h);
        let at = |i: usize, j: usize| g.index(i, j).map_or(0.0, |k| v[k]);
        let mut out = vec![0.0; n];
        for j in 1..m {
            for i in 1..m {
                let k = (j - 1) * (m - 1) + (i - 1);
                let s = 4.0 * v[k] - at(i + 1, j) - at(i - 1, j) - at(i, j + 1) - at(i, j - 1);
                out[k] = s * inv_h2;
            }
        }
        Ok(out)
    }

    /// Exact eigenvalue of `A_h` for the sine mode `(p, q)`.
    pub fn mode_eigenvalue(&self, p: usize, q: usize) -> f64 {
        fd_mode_eigenvalue(self.grid.h, self.grid.rect.width(), p, q)
    }

    /// Grid values of `sin(pπx/L) sin(qπy/L)` at the interior unknowns.
    pub fn mode_vector(&self, p: usize, q: usize) -> Vec<f64> {
        let l = self.grid.rect.width();
        let pi = std::f64::consts::PI;
        (0..self.dofs())
            .map(|k| {
                let (i, j) = self.grid.point(k);
                let x = i as f64 * self.grid.h;
                let y = j as f64 * self.grid.h;
                (p as f64 * pi * x / l).sin() * (q as f64 * pi * y / l).sin()
            })
            .collect()
    }
}

/// `(4/h²)(sin²(pπh/(2L)) + sin²(qπh/(2L)))` on a square of side `L`.
pub fn fd_mode_eigenvalue(h: f64, side: f64, p: usize, q: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let sp = (p as f64 * pi * h / (2.0 * side)).sin();
    let sq = (q as f64 * pi * h / (2.0 * side)).sin();
    4.0 / (h * h) * (sp * sp + sq * sq)
}

fn assemble_laplacian(g: &FdGrid) -> SparseMatrix {
    let m = g.n_per_side;
    let inv_h2 = 1.0 / (g.h * g.h);
    let mut b = TripletBuilder::with_capacity(g.unknowns(), 5 * g.unknowns());
    for j in 1..m {
        for i in 1..m {
            let k = (j - 1) * (m - 1) + (i - 1);
            b.add(k, k, 4.0 * inv_h2);
            for (a, c) in [(i + 1, j), (i - 1, j), (i, j + 1), (i, j - 1)] {
                if let Some(n) = g.index(a, c) {
                    b.add(k, n, -inv_h2);
                }
            }
        }
    }
    b.build()
}

/// Discrete norms `(‖v‖_{0,h}, ‖v‖_{1,h})`, the latter from forward differences.
pub fn fd_norms(grid: &FdGrid, v: &[f64]) -> Result<(f64, f64)> {
    if v.len() != grid.unknowns() {
        return Err(Error::DimensionMismatch {
            expected: grid.unknowns(),
            got: v.len(),
        });
    }
    let h = grid.h;
    let m = grid.n_per_side;
    let at = |i: usize, j: usize| grid.index(i, j).map_or(0.0, |k| v[k]);
    let l2 = (h * h * v.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let mut grad = 0.0;
    // every edge with at least one interior endpoint
    for j in 0..=m {
        for i in 0..m {
            let d = at(i + 1, j) - at(i, j);
            grad += d * d;
        }
    }
    for j in 0..m {
        for i in 0..=m {
            let d = at(i, j + 1) - at(i, j);
            grad += d * d;
        }
    }
    // h² Σ (Δv/h)² = Σ Δv²
    Ok((l2, grad.sqrt()))
}
