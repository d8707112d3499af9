//! Rank-k truncated SVD of a sparse count matrix by block subspace iteration
//! on the Gram operator `XᵀX`, followed by a Rayleigh–Ritz step.
//!
//! Deterministic: the start block comes from a seeded ChaCha stream, every
//! reduction runs in a fixed order, and each component is sign-normalised so
//! its largest-magnitude loading is positive.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const OVERSAMPLE: usize = 12;
const MAX_ITERS: usize = 400;
const RESIDUAL_TOL: f64 = 1e-11;
/// Eigenvalues of `XᵀX` below this fraction of the largest are rank deficiency.
const RANK_TOL: f64 = 1e-12;
/// Vocabularies up to this size use an exact eigendecomposition of `XᵀX`.
const DENSE_GRAM_LIMIT: usize = 3000;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, n_cols: usize) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for row in &rows {
            for &(c, v) in row {
                debug_assert!(c < n_cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            n_rows: rows.len(),
            n_cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for r in 0..self.n_rows {
            for (c, v) in self.row(r) {
                m[(r, c)] += v;
            }
        }
        m
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    fn gram(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_cols, self.n_cols);
        for r in 0..self.n_rows {
            for (a, va) in self.row(r) {
                for (b, vb) in self.row(r) {
                    g[(a, b)] += va * vb;
                }
            }
        }
        g
    }

    /// `XᵀX · q` for an `n_cols × l` block.
    fn gram_apply(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let l = q.ncols();
        // row c of q is column c of qt, contiguous in memory
        let qt = q.transpose();
        let qs = qt.as_slice();
        let mut zt = vec![0.0; self.n_cols * l];
        let mut y = vec![0.0; l];
        for r in 0..self.n_rows {
            y.iter_mut().for_each(|v| *v = 0.0);
            for (c, v) in self.row(r) {
                for (yj, qj) in y.iter_mut().zip(&qs[c * l..(c + 1) * l]) {
                    *yj += v * qj;
                }
            }
            for (c, v) in self.row(r) {
                for (zj, yj) in zt[c * l..(c + 1) * l].iter_mut().zip(&y) {
                    *zj += v * yj;
                }
            }
        }
        DMatrix::from_column_slice(l, self.n_cols, &zt).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSvd {
    /// Right singular vectors, one `n_cols`-long row per fitted component.
    pub loadings: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    /// True when fewer than the requested components could be fitted.
    pub clamped: bool,
    pub iterations: usize,
}

impl TruncatedSvd {
    pub fn fit(x: &CsrMatrix, k: usize, seed: u64) -> Self {
        let rank_bound = x.n_rows.min(x.n_cols);
        if k == 0 || rank_bound == 0 || x.frobenius_sq() == 0.0 {
            return Self {
                loadings: Vec::new(),
                singular_values: Vec::new(),
                clamped: k > 0,
                iterations: 0,
            };
        }
        let d = x.n_cols;
        let (eigvals, ritz, iterations) = if d <= DENSE_GRAM_LIMIT {
            let eig = SymmetricEigen::new(x.gram());
            let order = descending_order(eig.eigenvalues.as_slice());
            let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
            (vals, reorder_columns(&eig.eigenvectors, &order), 0)
        } else {
            subspace_iteration(x, k, seed)
        };
        Self::from_eigen(k, &eigvals, &ritz, iterations)
    }

    fn from_eigen(k: usize, eigvals: &[f64], ritz: &DMatrix<f64>, iterations: usize) -> Self {
        let top = eigvals[0].max(0.0);
        let mut loadings = Vec::new();
        let mut singular_values = Vec::new();
        for (j, &lambda) in eigvals.iter().enumerate().take(k) {
            if lambda <= RANK_TOL * top || lambda <= 0.0 {
                break;
            }
            let mut v: Vec<f64> = ritz.column(j).iter().copied().collect();
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            v.iter_mut().for_each(|a| *a /= norm);
            normalize_sign(&mut v);
            loadings.push(v);
            singular_values.push(lambda.sqrt());
        }
        Self {
            clamped: loadings.len() < k,
            loadings,
            singular_values,
            iterations,
        }
    }

    /// `‖X − X V Vᵀ‖²_F` for the fitted components.
    pub fn reconstruction_error(&self, x: &CsrMatrix) -> f64 {
        let mut captured = 0.0;
        for v in &self.loadings {
            for r in 0..x.n_rows {
                let p: f64 = x.row(r).map(|(c, val)| val * v[c]).sum();
                captured += p * p;
            }
        }
        (x.frobenius_sq() - captured).max(0.0)
    }
}

/// Block subspace iteration on `XᵀX` for wide vocabularies.
fn subspace_iteration(x: &CsrMatrix, k: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>, usize) {
    let d = x.n_cols;
    let block = (k + OVERSAMPLE).min(d);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = DMatrix::from_fn(d, block, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormalize(start);

    let mut iterations = 0;
    loop {
        iterations += 1;
        let z = x.gram_apply(&q);
        let t = q.transpose() * &z;
        let t = (&t + t.transpose()) * 0.5;
        let eig = SymmetricEigen::new(t);
        let order = descending_order(eig.eigenvalues.as_slice());
        let w = reorder_columns(&eig.eigenvectors, &order);
        let vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let u = &q * &w;

        let top = vals[0].abs().max(f64::MIN_POSITIVE);
        let gu = &z * &w;
        let wanted = k.min(block);
        let converged = (0..wanted).all(|j| {
            let resid = (gu.column(j) - u.column(j) * vals[j]).norm();
            resid <= RESIDUAL_TOL * top
        });
        if converged || iterations >= MAX_ITERS || block == d {
            if !converged && block < d {
                tracing::warn!(iterations, "subspace iteration hit the iteration cap");
            }
            break (vals, u, iterations);
        }
        q = orthonormalize(z);
    }
}

/// Largest-magnitude entry positive; the first such entry wins ties.
pub fn normalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, a) in v.iter().enumerate() {
        if a.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|a| *a < 0.0) {
        v.iter_mut().for_each(|a| *a = -*a);
    }
}

fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

fn descending_order(vals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));
    order
}

fn reorder_columns(m: &DMatrix<f64>, order: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), order.len(), |r, c| m[(r, order[c])])
}
