//! Compressed-row sparse matrices, Jacobi-preconditioned conjugate gradients and
//! inverse power iteration for the pencil `K v = λ M v`.

use crate::error::{Error, Result};

/// Default relative tolerance for the linear systems of the time stepper.
pub const STEP_RTOL: f64 = 1e-10;

/// Square sparse matrix in compressed-row form with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

/// Accumulates `(row, col, value)` contributions; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    dim: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn with_capacity(dim: usize, cap: usize) -> Self {
        Self {
            dim,
            entries: Vec::with_capacity(cap),
        }
    }

    pub fn add(&mut self, row: usize, col: usize, val: f64) {
        debug_assert!(row < self.dim && col < self.dim);
        self.entries.push((row, col, val));
    }

    /// Sums duplicates in a fixed order and drops exact zeros.
    pub fn build(mut self) -> SparseMatrix {
        self.entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; self.dim + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut vals = Vec::with_capacity(self.entries.len());
        let mut iter = self.entries.into_iter().peekable();
        while let Some((r, c, mut v)) = iter.next() {
            while let Some(&(r2, c2, v2)) = iter.peek() {
                if r2 == r && c2 == c {
                    v += v2;
                    iter.next();
                } else {
                    break;
                }
            }
            if v != 0.0 {
                col_idx.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for i in 0..self.dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        SparseMatrix {
            dim: self.dim,
            row_ptr,
            col_idx,
            vals,
        }
    }
}

impl SparseMatrix {
    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim])
    }

    pub fn diagonal(d: &[f64]) -> Self {
        let mut b = TripletBuilder::with_capacity(d.len(), d.len());
        for (i, v) in d.iter().enumerate() {
            b.add(i, i, *v);
        }
        b.build()
    }

    /// Builds from a dense row-major matrix, skipping zeros.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut b = TripletBuilder::new(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "dense input must be square");
            for (j, v) in row.iter().enumerate() {
                b.add(i, j, *v);
            }
        }
        b.build()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.col_idx[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        match self.col_idx[a..b].binary_search(&j) {
            Ok(p) => self.vals[a + p],
            Err(_) => 0.0,
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.dim).all(|i| self.row(i).all(|(j, _)| j == i))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    /// Largest |a_ij - a_ji|.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// `y = A x`.
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.dim];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// `y = A x` without dimension checks beyond debug assertions.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
            let mut s = 0.0;
            for p in a..b {
                s += self.vals[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    /// `xᵀ A x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let mut r = 0.0;
            for (j, v) in self.row(i) {
                r += v * x[j];
            }
            s += xi * r;
        }
        s
    }

    /// `xᵀ A y`.
    pub fn bilinear_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            let mut r = 0.0;
            for (j, v) in self.row(i) {
                r += v * y[j];
            }
            s += xi * r;
        }
        s
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `a·A + b·B` over the union of both sparsity patterns.
    pub fn linear_combination(a: f64, ma: &SparseMatrix, b: f64, mb: &SparseMatrix) -> Result<Self> {
        if ma.dim != mb.dim {
            return Err(Error::DimensionMismatch {
                expected: ma.dim,
                got: mb.dim,
            });
        }
        let n = ma.dim;
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::with_capacity(ma.nnz().max(mb.nnz()));
        let mut vals = Vec::with_capacity(ma.nnz().max(mb.nnz()));
        for i in 0..n {
            let (mut p, pe) = (ma.row_ptr[i], ma.row_ptr[i + 1]);
            let (mut q, qe) = (mb.row_ptr[i], mb.row_ptr[i + 1]);
            while p < pe || q < qe {
                let cp = if p < pe { ma.col_idx[p] } else { usize::MAX };
                let cq = if q < qe { mb.col_idx[q] } else { usize::MAX };
                let (c, v) = if cp == cq {
                    let v = a * ma.vals[p] + b * mb.vals[q];
                    p += 1;
                    q += 1;
                    (cp, v)
                } else if cp < cq {
                    p += 1;
                    (cp, a * ma.vals[p - 1])
                } else {
                    q += 1;
                    (cq, b * mb.vals[q - 1])
                };
                if v != 0.0 {
                    col_idx.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            dim: n,
            row_ptr,
            col_idx,
            vals,
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative residual ‖b − Ax‖/‖b‖ at exit.
    pub final_residual: f64,
}

/// Solves the SPD system `A x = b` by Jacobi-preconditioned CG from a zero start.
pub fn cg_solve(a: &SparseMatrix, b: &[f64], rtol: f64, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let mut x = vec![0.0; a.dim()];
    let report = cg_solve_from(a, b, &mut x, rtol, max_iter, |_| {})?;
    Ok((x, report))
}

/// Jacobi-preconditioned CG starting from the contents of `x`.
///
/// `observe` sees every iterate, including the starting guess.
pub fn cg_solve_from(
    a: &SparseMatrix,
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
    mut observe: impl FnMut(&[f64]),
) -> Result<SolveReport> {
    let n = a.dim();
    if b.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: b.len() });
    }
    if x.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: x.len() });
    }
    if !(rtol > 0.0) {
        return Err(Error::invalid("cg tolerance must be positive"));
    }
    observe(x);
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        observe(x);
        return Ok(SolveReport {
            iterations: 0,
            final_residual: 0.0,
        });
    }
    let inv_diag: Vec<f64> = a
        .diag()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut r = vec![0.0; n];
    a.spmv_into(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut res = norm2(&r) / bnorm;
    if res <= rtol {
        return Ok(SolveReport {
            iterations: 0,
            final_residual: res,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.spmv_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NotConverged {
                iterations: it,
                residual: res,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        observe(x);
        res = norm2(&r) / bnorm;
        if res <= rtol {
            return Ok(SolveReport {
                iterations: it,
                final_residual: res,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: max_iter,
        residual: res,
    })
}

/// Solves `A x = b` for SPD `A`, dividing directly when `A` is diagonal.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], rtol: f64) -> Result<Vec<f64>> {
    if a.is_diagonal() {
        if b.len() != a.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                got: b.len(),
            });
        }
        return Ok(b.iter().zip(a.diag()).map(|(b, d)| b / d).collect());
    }
    cg_solve(a, b, rtol, default_max_iter(a.dim())).map(|(x, _)| x)
}

pub fn default_max_iter(dim: usize) -> usize {
    (10 * dim).max(100)
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// M-normalized eigenvector.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

const EIG_MAX_ITER: usize = 500;

/// Smallest eigenvalue of `K v = λ M v` by inverse power iteration.
pub fn smallest_generalized_eigenvalue(k: &SparseMatrix, m: &SparseMatrix, tol: f64) -> Result<f64> {
    smallest_generalized_eigenpair(k, m, tol).map(|p| p.value)
}

/// Inverse power iteration on the pencil `(K, M)` with M-normalization.
///
/// The Rayleigh quotient is returned once its relative change drops below
/// `tol / 10`; inner solves use CG at a tolerance well below `tol`.
pub fn smallest_generalized_eigenpair(k: &SparseMatrix, m: &SparseMatrix, tol: f64) -> Result<EigenPair> {
    let n = k.dim();
    if m.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.dim() });
    }
    if n == 0 {
        return Err(Error::invalid("empty pencil"));
    }
    if !(tol > 0.0) {
        return Err(Error::invalid("eigenvalue tolerance must be positive"));
    }
    let inner = (tol * 1e-3).clamp(1e-14, 1e-10);
    let max_cg = default_max_iter(n);

    let mut v = vec![1.0; n];
    let mnorm = m.quadratic_form(&v).sqrt();
    v.iter_mut().for_each(|x| *x /= mnorm);
    let mut lambda = k.quadratic_form(&v);
    let mut mv = vec![0.0; n];
    let mut y = v.clone();
    let mut change = f64::INFINITY;
    for it in 1..=EIG_MAX_ITER {
        m.spmv_into(&v, &mut mv);
        cg_solve_from(k, &mv, &mut y, inner, max_cg, |_| {})?;
        let ynorm = m.quadratic_form(&y).sqrt();
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = yi / ynorm;
        }
        let next = k.quadratic_form(&v);
        change = ((next - lambda) / next).abs();
        lambda = next;
        if change <= 0.1 * tol {
            return Ok(EigenPair {
                value: lambda,
                vector: v,
                iterations: it,
            });
        }
        // warm start for the next inner solve
        y.iter_mut().for_each(|x| *x /= ynorm);
        y.iter_mut().for_each(|x| *x /= lambda);
    }
    Err(Error::EigenNotConverged {
        iterations: EIG_MAX_ITER,
        change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn laplace_1d(n: usize, h: f64) -> SparseMatrix {
        let mut b = TripletBuilder::new(n);
        for i in 0..n {
            b.add(i, i, 2.0 / (h * h));
            if i > 0 {
                b.add(i, i - 1, -1.0 / (h * h));
            }
            if i + 1 < n {
                b.add(i, i + 1, -1.0 / (h * h));
            }
        }
        b.build()
    }

    /// Thomas algorithm for a constant-coefficient tridiagonal system.
    fn thomas(sub: f64, diag: f64, sup: f64, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        c[0] = sup / diag;
        d[0] = rhs[0] / diag;
        for i in 1..n {
            let m = diag - sub * c[i - 1];
            c[i] = sup / m;
            d[i] = (rhs[i] - sub * d[i - 1]) / m;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        x
    }

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> SparseMatrix {
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                d[i][j] = (0..n).map(|k| a[k][i] * a[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 };
            }
        }
        SparseMatrix::from_dense(&d)
    }

    #[test]
    fn spmv_examples() {
        let x = vec![0.3, -1.0, 2.5];
        assert_eq!(SparseMatrix::identity(3).spmv(&x).unwrap(), x);
        let a = SparseMatrix::from_dense(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(
            a.spmv(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn spmv_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(12, &mut rng);
        for _ in 0..20 {
            let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lhs = dot(&x, &a.spmv(&y).unwrap());
            let rhs = dot(&y, &a.spmv(&x).unwrap());
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn builder_sums_duplicates_and_drops_zeros() {
        let mut b = TripletBuilder::new(2);
        b.add(0, 1, 1.0);
        b.add(0, 1, -1.0);
        b.add(1, 1, 2.0);
        b.add(1, 1, 3.0);
        let m = b.build();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 1), 5.0);
        assert_eq!(m.get(0, 1), 0.0);
    }

    #[test]
    fn linear_combination_merges_patterns() {
        let a = SparseMatrix::from_dense(&[vec![1.0, 2.0, 0.0], vec![2.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let b = SparseMatrix::from_dense(&[vec![1.0, 0.0, 3.0], vec![0.0, 1.0, 0.0], vec![3.0, 0.0, 1.0]]);
        let c = SparseMatrix::linear_combination(2.0, &a, -1.0, &b).unwrap();
        let d = c.to_dense();
        assert_eq!(d, vec![vec![1.0, 4.0, -3.0], vec![4.0, 1.0, 0.0], vec![-3.0, 0.0, 1.0]]);
    }

    #[test]
    fn cg_identity_one_iteration() {
        let b = vec![1.0, -2.0, 3.5, 0.25];
        let (x, rep) = cg_solve(&SparseMatrix::identity(4), &b, 1e-12, 10).unwrap();
        assert!(rep.iterations <= 1);
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_matches_thomas_on_1d_laplacian() {
        let n = 99;
        let h = 1.0 / (n + 1) as f64;
        let a = laplace_1d(n, h);
        // lumped load of f = 1 with mass h
        let b = vec![h; n];
        let (x, rep) = cg_solve(&a, &b, 1e-13, 1000).unwrap();
        assert!(rep.final_residual <= 1e-13);
        let reference = thomas(-1.0 / (h * h), 2.0 / (h * h), -1.0 / (h * h), &b);
        let err = x.iter().zip(&reference).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err / norm2(&reference) <= 1e-10);
    }

    #[test]
    fn cg_random_spd_meets_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let a = random_spd(10, &mut rng);
            let b: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (x, rep) = cg_solve(&a, &b, 1e-10, 200).unwrap();
            let ax = a.spmv(&x).unwrap();
            let r: Vec<f64> = ax.iter().zip(&b).map(|(a, b)| a - b).collect();
            assert!(norm2(&r) / norm2(&b) <= 1e-10);
            assert!(rep.final_residual <= 1e-10);
        }
    }

    #[test]
    fn cg_error_energy_norm_non_increasing() {
        // CG minimizes the A-norm of the error over growing Krylov spaces.
        let n = 60;
        let h = 1.0 / (n + 1) as f64;
        let a = laplace_1d(n, h);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64 - 6.0) * h).collect();
        let (exact, _) = cg_solve(&a, &b, 1e-14, 2000).unwrap();
        let mut errs = Vec::new();
        let mut x = vec![0.0; n];
        cg_solve_from(&a, &b, &mut x, 1e-12, 2000, |xi| {
            let e: Vec<f64> = xi.iter().zip(&exact).map(|(a, b)| a - b).collect();
            errs.push(a.quadratic_form(&e).sqrt());
        })
        .unwrap();
        assert!(errs.len() > 5);
        for w in errs.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let n = 50;
        let a = laplace_1d(n, 1.0 / 51.0);
        let b = vec![1.0; n];
        match cg_solve(&a, &b, 1e-14, 3) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplace_1d(5, 0.2);
        let (x, rep) = cg_solve(&a, &[0.0; 5], 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 5]);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn inverse_iteration_1d() {
        // Dirichlet 1D FD Laplacian: λ₁ = (4/h²) sin²(πh/2)
        let n = 31;
        let h = 1.0 / 32.0;
        let k = laplace_1d(n, h);
        let m = SparseMatrix::identity(n);
        let pair = smallest_generalized_eigenpair(&k, &m, 1e-10).unwrap();
        let exact = 4.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        assert!((pair.value - exact).abs() / exact <= 1e-10);
        let rq = k.quadratic_form(&pair.vector) / m.quadratic_form(&pair.vector);
        assert!((rq - pair.value).abs() / pair.value <= 1e-10);
    }

    #[test]
    fn solve_spd_diagonal_shortcut() {
        let a = SparseMatrix::diagonal(&[2.0, 4.0]);
        assert_eq!(solve_spd(&a, &[1.0, 1.0], 1e-10).unwrap(), vec![0.5, 0.25]);
    }
}
