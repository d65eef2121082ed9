//! Compressed sparse row matrices and Jacobi-preconditioned conjugate
//! gradients.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::NodalField;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds the pattern from per-row sorted column lists, values zeroed.
    pub fn from_pattern(rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            col_idx.extend_from_slice(r);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        CsrMatrix {
            n: rows.len(),
            row_ptr,
            col_idx,
            values: vec![0.0; nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` to an existing pattern entry.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.position(i, j).expect("entry in sparsity pattern");
        self.values[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.values[self.row_ptr[i]..self.row_ptr[i + 1]].iter().sum()
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[(i, self.col_idx[k])] = self.values[k];
            }
        }
        m
    }

    pub fn from_dense(m: &nalgebra::DMatrix<f64>) -> Self {
        let rows: Vec<Vec<usize>> = (0..m.nrows())
            .map(|i| (0..m.ncols()).filter(|&j| m[(i, j)] != 0.0).collect())
            .collect();
        let mut out = Self::from_pattern(&rows);
        for i in 0..m.nrows() {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.values[k] = m[(i, out.col_idx[k])];
            }
        }
        out
    }
}

/// Convergence record of one conjugate-gradient solve.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CgReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// Value of `½ xᵀAx − bᵀx` after each iteration, starting from the
    /// initial guess.
    pub energy: Vec<f64>,
    pub residual_norms: Vec<f64>,
}

/// Solves `A x = b` for symmetric positive definite `A` given as a matrix-free
/// operator. `x` holds the initial guess on entry.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgReport> {
    let n = b.len();
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut report = CgReport::default();
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let energy = |x: &[f64], ax: &[f64]| 0.5 * dot(x, ax) - dot(b, x);
    report.energy.push(energy(x, &ax));
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        report.energy = vec![0.0];
        return Ok(report);
    }
    let inv_diag: Vec<f64> = diag.iter().map(|d| if *d > 0.0 { 1.0 / d } else { 1.0 }).collect();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut rel = dot(&r, &r).sqrt() / bnorm;
    report.residual_norms.push(rel);
    let mut it = 0;
    while rel > tol && it < max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: rel,
                tol,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
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
        it += 1;
        rel = dot(&r, &r).sqrt() / bnorm;
        // ½xᵀAx − bᵀx = −½(xᵀr + bᵀx) with r = b − Ax
        report.energy.push(-0.5 * (dot(x, &r) + dot(b, x)));
        report.residual_norms.push(rel);
    }
    report.iterations = it;
    report.relative_residual = rel;
    if rel > tol {
        return Err(Error::NoConvergence {
            iterations: it,
            residual: rel,
            tol,
        });
    }
    Ok(report)
}

/// Solves `K u = 0` on the free nodes with `u` prescribed on `bc`, by
/// eliminating the fixed rows and columns.
pub fn solve_dirichlet(k: &CsrMatrix, bc: &BTreeMap<usize, f64>, tol: f64) -> Result<NodalField> {
    solve_dirichlet_report(k, bc, tol, None).map(|(u, _)| NodalField::new("u", u))
}

/// As [`solve_dirichlet`], with an optional initial guess for the free
/// nodes and the CG convergence record.
pub fn solve_dirichlet_report(
    k: &CsrMatrix,
    bc: &BTreeMap<usize, f64>,
    tol: f64,
    guess: Option<&[f64]>,
) -> Result<(Vec<f64>, CgReport)> {
    let n = k.n;
    if bc.is_empty() {
        return Err(Error::Field("Dirichlet problem without fixed nodes".into()));
    }
    if let Some((&i, _)) = bc.iter().find(|(i, _)| **i >= n) {
        return Err(Error::OutOfBounds(format!("boundary node {i} >= {n}")));
    }
    let mut fixed = vec![false; n];
    let mut ub = vec![0.0; n];
    for (&i, &v) in bc {
        fixed[i] = true;
        ub[i] = v;
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
    let mut slot = vec![usize::MAX; n];
    for (s, &i) in free.iter().enumerate() {
        slot[i] = s;
    }
    let mut u = ub.clone();
    if free.is_empty() {
        return Ok((u, CgReport::default()));
    }
    let mut kub = vec![0.0; n];
    k.mul_vec(&ub, &mut kub);
    let b: Vec<f64> = free.iter().map(|&i| -kub[i]).collect();
    let diag_full = k.diagonal();
    let diag: Vec<f64> = free.iter().map(|&i| diag_full[i]).collect();
    let apply = |x: &[f64], y: &mut [f64]| {
        for (s, &i) in free.iter().enumerate() {
            let mut acc = 0.0;
            for kk in k.row_ptr[i]..k.row_ptr[i + 1] {
                let j = slot[k.col_idx[kk]];
                if j != usize::MAX {
                    acc += k.values[kk] * x[j];
                }
            }
            y[s] = acc;
        }
    };
    let mut x: Vec<f64> = match guess {
        Some(g) => free.iter().map(|&i| g[i]).collect(),
        None => vec![0.0; free.len()],
    };
    let report = conjugate_gradient(apply, &diag, &b, &mut x, tol, 20 * n)?;
    for (s, &i) in free.iter().enumerate() {
        u[i] = x[s];
    }
    Ok((u, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (*seed >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn random_spd_matches_cholesky() {
        let mut s = 7u64;
        let n = 50;
        let a = DMatrix::from_fn(n, n, |_, _| lcg(&mut s) - 0.5);
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * 0.5;
        let b: Vec<f64> = (0..n).map(|_| lcg(&mut s)).collect();
        let csr = CsrMatrix::from_dense(&spd);
        let mut x = vec![0.0; n];
        let report = conjugate_gradient(|x, y| csr.mul_vec(x, y), &csr.diagonal(), &b, &mut x, 1e-14, 20 * n).unwrap();
        let oracle = spd.clone().cholesky().unwrap().solve(&nalgebra::DVector::from_vec(b));
        for i in 0..n {
            assert!((x[i] - oracle[i]).abs() < 1e-8);
        }
        for w in report.energy.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let csr = CsrMatrix::from_dense(&DMatrix::identity(3, 3));
        let mut x = vec![1.0, 2.0, 3.0];
        conjugate_gradient(|x, y| csr.mul_vec(x, y), &[1.0; 3], &[0.0; 3], &mut x, 1e-10, 10).unwrap();
        assert_eq!(x, vec![0.0; 3]);
    }

    #[test]
    fn iteration_cap_reports_no_convergence() {
        let mut s = 3u64;
        let n = 30;
        let a = DMatrix::from_fn(n, n, |_, _| lcg(&mut s) - 0.5);
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * 1e-3;
        let csr = CsrMatrix::from_dense(&spd);
        let b = vec![1.0; n];
        let mut x = vec![0.0; n];
        let r = conjugate_gradient(|x, y| csr.mul_vec(x, y), &csr.diagonal(), &b, &mut x, 1e-14, 2);
        assert!(matches!(r, Err(Error::NoConvergence { iterations: 2, .. })));
    }
}
