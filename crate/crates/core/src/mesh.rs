//! Structured triangulations and finite difference grids on axis-aligned rectangles.
//!
//! Nodes are numbered row-major: node `(i, j)` (column `i` along x, row `j`
//! along y) has index `j * (n + 1) + i`. Every square cell is split along its
//! lower-left to upper-right diagonal.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rectangle {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        if !(x1 > x0 && y1 > y0) || !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
            return Err(Error::invalid(format!(
                "rectangle needs x1 > x0 and y1 > y0, got ({x0}, {x1}) x ({y0}, {y1})"
            )));
        }
        Ok(Self { x0, x1, y0, y1 })
    }

    /// The unit square (0, 1)².
    pub fn unit() -> Self {
        Self { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 }
    }

    /// The square (0, π)².
    pub fn pi_square() -> Self {
        let p = std::f64::consts::PI;
        Self { x0: 0.0, x1: p, y0: 0.0, y1: p }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_square(&self) -> bool {
        (self.width() - self.height()).abs() <= 1e-12 * self.width().max(self.height())
    }

    /// Smallest Dirichlet eigenvalue of −Δ on the rectangle.
    pub fn lambda1(&self) -> f64 {
        let p = std::f64::consts::PI;
        (p / self.width()).powi(2) + (p / self.height()).powi(2)
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub rect: Rectangle,
    pub nodes: Vec<[f64; 2]>,
    /// Counterclockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub boundary_mask: Vec<bool>,
    pub n_per_side: usize,
    /// Cell width along x, `(x1 - x0) / N`.
    pub h: f64,
}

impl TriMesh {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn interior_count(&self) -> usize {
        self.boundary_mask.iter().filter(|b| !**b).count()
    }

    /// Signed area of triangle `t` (positive for counterclockwise ordering).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }
}

/// Builds the structured triangulation of `rect` with `n` cells per side.
pub fn build_tri_mesh(rect: Rectangle, n: usize) -> Result<TriMesh> {
    if n < 1 {
        return Err(Error::invalid("triangulation needs N >= 1"));
    }
    let side = n + 1;
    let hx = rect.width() / n as f64;
    let hy = rect.height() / n as f64;
    let mut nodes = Vec::with_capacity(side * side);
    let mut boundary_mask = Vec::with_capacity(side * side);
    for j in 0..side {
        let y = if j == n { rect.y1 } else { rect.y0 + j as f64 * hy };
        for i in 0..side {
            let x = if i == n { rect.x1 } else { rect.x0 + i as f64 * hx };
            nodes.push([x, y]);
            boundary_mask.push(i == 0 || j == 0 || i == n || j == n);
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let sw = j * side + i;
            let se = sw + 1;
            let nw = sw + side;
            let ne = nw + 1;
            // lower-right then upper-left, both counterclockwise
            triangles.push([sw, se, ne]);
            triangles.push([sw, ne, nw]);
        }
    }
    Ok(TriMesh {
        rect,
        nodes,
        triangles,
        boundary_mask,
        n_per_side: n,
        h: hx,
    })
}

/// Uniform grid on a square for the 5-point finite difference backend.
///
/// Unknowns live at interior grid points `(i, j)`, `1 <= i, j <= M - 1`, numbered
/// lexicographically with `i` fastest, matching the node order of [`TriMesh`].
#[derive(Debug, Clone)]
pub struct FdGrid {
    pub rect: Rectangle,
    pub n_per_side: usize,
    pub h: f64,
}

impl FdGrid {
    /// Number of interior points per row, `M - 1`.
    pub fn interior_per_side(&self) -> usize {
        self.n_per_side - 1
    }

    pub fn unknowns(&self) -> usize {
        let m = self.interior_per_side();
        m * m
    }

    /// Flat index of interior point `(i, j)`; `None` on or outside the boundary.
    pub fn index(&self, i: usize, j: usize) -> Option<usize> {
        let m = self.n_per_side;
        if i == 0 || j == 0 || i >= m || j >= m {
            return None;
        }
        Some((j - 1) * (m - 1) + (i - 1))
    }

    /// Inverse of [`FdGrid::index`].
    pub fn point(&self, idx: usize) -> (usize, usize) {
        let w = self.interior_per_side();
        (idx % w + 1, idx / w + 1)
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.point(idx);
        [self.rect.x0 + i as f64 * self.h, self.rect.y0 + j as f64 * self.h]
    }
}

pub fn build_fd_grid(rect: Rectangle, m: usize) -> Result<FdGrid> {
    if m < 2 {
        return Err(Error::invalid("finite difference grid needs M >= 2"));
    }
    if !rect.is_square() {
        return Err(Error::invalid("finite difference backend requires a square domain"));
    }
    Ok(FdGrid {
        rect,
        n_per_side: m,
        h: rect.width() / m as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_counts() {
        let m = build_tri_mesh(Rectangle::unit(), 1).unwrap();
        assert_eq!(m.node_count(), 4);
        assert_eq!(m.triangles.len(), 2);
        assert!(m.boundary_mask.iter().all(|b| *b));

        let m = build_tri_mesh(Rectangle::unit(), 2).unwrap();
        assert_eq!(m.node_count(), 9);
        assert_eq!(m.triangles.len(), 8);
        assert_eq!(m.interior_count(), 1);
        assert_eq!(m.nodes[4], [0.5, 0.5]);
    }

    #[test]
    fn triangle_areas_and_total() {
        let m = build_tri_mesh(Rectangle::unit(), 4).unwrap();
        for t in 0..m.triangles.len() {
            assert!((m.signed_area(t) - 1.0 / 32.0).abs() < 1e-15);
        }
        for n in [3, 7, 16] {
            let rect = Rectangle::pi_square();
            let m = build_tri_mesh(rect, n).unwrap();
            let total: f64 = (0..m.triangles.len()).map(|t| m.signed_area(t)).sum();
            assert!((total - PI * PI).abs() < 1e-12);
            assert_eq!(m.interior_count(), (n - 1) * (n - 1));
        }
    }

    #[test]
    fn refinement_halves_h() {
        let a = build_tri_mesh(Rectangle::unit(), 5).unwrap();
        let b = build_tri_mesh(Rectangle::unit(), 10).unwrap();
        assert!((a.h - 2.0 * b.h).abs() < 1e-15);
        assert_eq!(b.triangles.len(), 4 * a.triangles.len());
    }

    #[test]
    fn boundary_mask_matches_geometry() {
        let r = Rectangle::new(-1.0, 2.0, 0.5, 1.5).unwrap();
        let m = build_tri_mesh(r, 6).unwrap();
        for (p, b) in m.nodes.iter().zip(&m.boundary_mask) {
            let on = p[0] == r.x0 || p[0] == r.x1 || p[1] == r.y0 || p[1] == r.y1;
            assert_eq!(on, *b);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_tri_mesh(Rectangle::unit(), 0).is_err());
        assert!(Rectangle::new(1.0, 0.0, 0.0, 1.0).is_err());
        let r = Rectangle::new(0.0, 2.0, 0.0, 1.0).unwrap();
        assert!(build_fd_grid(r, 4).is_err());
        assert!(build_fd_grid(Rectangle::unit(), 1).is_err());
    }

    #[test]
    fn fd_grid_sizes() {
        assert_eq!(build_fd_grid(Rectangle::unit(), 2).unwrap().unknowns(), 1);
        assert_eq!(build_fd_grid(Rectangle::unit(), 4).unwrap().unknowns(), 9);
        let g = build_fd_grid(Rectangle::pi_square(), 8).unwrap();
        assert!((g.h - PI / 8.0).abs() < 1e-15);
    }

    #[test]
    fn fd_index_is_bijection() {
        let g = build_fd_grid(Rectangle::unit(), 7).unwrap();
        let mut seen = vec![false; g.unknowns()];
        for j in 1..7 {
            for i in 1..7 {
                let k = g.index(i, j).unwrap();
                assert!(!seen[k]);
                seen[k] = true;
                assert_eq!(g.point(k), (i, j));
            }
        }
        assert!(seen.iter().all(|s| *s));
        assert_eq!(g.index(0, 3), None);
        assert_eq!(g.index(7, 3), None);
    }
}
