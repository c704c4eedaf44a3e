//! Sparse symmetric linear algebra for the discretized operators: CSR
//! storage, reverse Cuthill-McKee ordering, envelope `LDL^T` without
//! pivoting, and shift-invert subspace iteration for the low end of the
//! spectrum.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Square matrix in compressed sparse row form with sorted column indices.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds an `n x n` matrix, summing duplicate entries.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0; n + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            assert!(i < n && j < n, "triplet ({i}, {j}) outside {n}x{n}");
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            indices.push(j);
            values.push(v);
            indptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            indptr[i + 1] += indptr[i];
        }
        CsrMatrix { n, indptr, indices, values }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.indptr[i]..self.indptr[i + 1];
        match self.indices[r.clone()].binary_search(&j) {
            Ok(k) => self.values[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }

    /// Adds `shift` to every diagonal entry.
    pub fn shifted(&self, shift: f64) -> CsrMatrix {
        let mut t: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            t.extend(self.row(i).map(|(j, v)| (i, j, v)));
            t.push((i, i, shift));
        }
        CsrMatrix::from_triplets(self.n, t)
    }

    /// Number of connected components of the sparsity graph.
    pub fn components(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut count = 0;
        let mut stack = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(i) = stack.pop() {
                for (j, v) in self.row(i) {
                    if v != 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }
}

/// Breadth-first order from `start` over unplaced nodes, with levels and depth.
fn bfs_levels(a: &CsrMatrix, start: usize, open: &[bool]) -> (Vec<usize>, Vec<usize>, usize) {
    let mut order = vec![start];
    let mut level = vec![usize::MAX; a.n];
    level[start] = 0;
    let mut head = 0;
    while head < order.len() {
        let i = order[head];
        head += 1;
        for (j, _) in a.row(i) {
            if open[j] && level[j] == usize::MAX {
                level[j] = level[i] + 1;
                order.push(j);
            }
        }
    }
    let depth = level[*order.last().expect("start is in the order")];
    (order, level, depth)
}

/// Reverse Cuthill-McKee permutation, `perm[new] = old`, started from a
/// pseudo-peripheral node in each component.
pub fn rcm(a: &CsrMatrix) -> Vec<usize> {
    let n = a.n;
    let degree: Vec<usize> = (0..n).map(|i| a.row(i).filter(|&(j, _)| j != i).count()).collect();
    let mut open = vec![true; n];
    let mut perm = Vec::with_capacity(n);
    for seed in 0..n {
        if !open[seed] {
            continue;
        }
        let mut start = seed;
        let (mut order, mut level, mut depth) = bfs_levels(a, start, &open);
        for _ in 0..8 {
            let candidate = order
                .iter()
                .copied()
                .filter(|&i| level[i] == depth)
                .min_by_key(|&i| (degree[i], i))
                .expect("deepest level is nonempty");
            let (o2, l2, d2) = bfs_levels(a, candidate, &open);
            if d2 <= depth {
                break;
            }
            (start, order, level, depth) = (candidate, o2, l2, d2);
        }
        let mut queue = VecDeque::from([start]);
        let mut component = Vec::with_capacity(order.len());
        open[start] = false;
        while let Some(i) = queue.pop_front() {
            component.push(i);
            let mut next: Vec<usize> = a.row(i).map(|(j, _)| j).filter(|&j| open[j]).collect();
            next.sort_by_key(|&j| (degree[j], j));
            for j in next {
                open[j] = false;
                queue.push_back(j);
            }
        }
        perm.extend(component);
    }
    perm.reverse();
    perm
}

/// Envelope size `Σ_i (i - first_i)` of the permuted lower triangle.
pub fn envelope_size(a: &CsrMatrix, perm: &[usize]) -> usize {
    let inv = inverse(perm);
    (0..a.n)
        .map(|new_i| {
            let old_i = perm[new_i];
            let first = a.row(old_i).map(|(j, _)| inv[j]).min().unwrap_or(new_i).min(new_i);
            new_i - first
        })
        .sum()
}

fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

/// RCM or the natural order, whichever has the smaller envelope.
pub fn envelope_order(a: &CsrMatrix) -> Vec<usize> {
    let natural: Vec<usize> = (0..a.n).collect();
    let r = rcm(a);
    if envelope_size(a, &r) < envelope_size(a, &natural) {
        r
    } else {
        natural
    }
}

/// `LDL^T` factor of a symmetric matrix in envelope storage.
///
/// No pivoting is done: every leading principal minor in the chosen order
/// must be nonsingular, which holds for positive definite matrices and for
/// the bordered systems built by the spectral module.
#[derive(Clone, Debug)]
pub struct Ldl {
    perm: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    lower: Vec<f64>,
    d: Vec<f64>,
}

impl Ldl {
    pub fn factor(a: &CsrMatrix, perm: Vec<usize>) -> Result<Self> {
        let n = a.n;
        let inv = inverse(&perm);
        let mut first = vec![0; n];
        for (new_i, &old_i) in perm.iter().enumerate() {
            first[new_i] = a.row(old_i).map(|(j, _)| inv[j]).min().unwrap_or(new_i).min(new_i);
        }
        let mut offsets = vec![0; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + (i - first[i]);
        }
        let mut lower = vec![0.0; offsets[n]];
        let mut d = vec![0.0; n];
        for (new_i, &old_i) in perm.iter().enumerate() {
            for (old_j, v) in a.row(old_i) {
                let new_j = inv[old_j];
                if new_j < new_i {
                    lower[offsets[new_i] + new_j - first[new_i]] = v;
                } else if new_j == new_i {
                    d[new_i] = v;
                }
            }
        }
        for i in 0..n {
            let fi = first[i];
            let (done, rest) = lower.split_at_mut(offsets[i]);
            let row_i = &mut rest[..i - fi];
            // row_i holds u_ik = L_ik d_k for k < j while row j is processed
            for j in fi..i {
                let fj = first[j];
                let row_j = &done[offsets[j]..offsets[j] + (j - fj)];
                let k0 = fi.max(fj);
                let mut s = row_i[j - fi];
                for k in k0..j {
                    s -= row_i[k - fi] * row_j[k - fj];
                }
                row_i[j - fi] = s;
            }
            let mut di = d[i];
            for j in fi..i {
                let u = row_i[j - fi];
                let l = u / d[j];
                row_i[j - fi] = l;
                di -= u * l;
            }
            if !(di.is_finite() && di != 0.0) {
                return Err(Error::SolverFailure(format!("zero pivot in row {i}")));
            }
            d[i] = di;
        }
        Ok(Ldl { perm, first, offsets, lower, d })
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.d.len();
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] -= s;
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let yi = y[i];
            let row = &self.lower[self.offsets[i]..self.offsets[i + 1]];
            for (l, v) in row.iter().zip(&mut y[fi..i]) {
                *v -= l * yi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Number of negative pivots (the count of negative eigenvalues).
    pub fn negative_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v < 0.0).count()
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration from a seeded start.
pub fn largest_eigenvalue(a: &CsrMatrix) -> f64 {
    let n = a.n;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let noise: f64 = StandardNormal.sample(&mut rng);
            sign + 0.1 * noise
        })
        .collect();
    let mut lambda: f64 = 0.0;
    for _ in 0..300 {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = a.mul_vec(&x);
        let rq: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let converged = (rq - lambda).abs() <= 1e-10 * rq.abs();
        lambda = lambda.max(rq);
        x = y;
        if converged {
            break;
        }
    }
    lambda
}

/// Eigenpairs at the low end of a symmetric positive semidefinite matrix.
#[derive(Clone, Debug)]
pub struct LowSpectrum {
    /// Ascending.
    pub values: Vec<f64>,
    /// Orthonormal columns matching `values`.
    pub vectors: DMatrix<f64>,
}

/// The `k` smallest eigenpairs of `a` by subspace iteration on
/// `(a + shift I)^{-1}` with Rayleigh-Ritz on `a`. `scale` bounds the
/// spectrum and sets the residual tolerance.
pub fn smallest_eigenpairs(a: &CsrMatrix, k: usize, shift: f64, scale: f64) -> Result<LowSpectrum> {
    let n = a.n;
    let k = k.min(n);
    if n <= 32 {
        let eig = SymmetricEigen::new(a.to_dense());
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let values = idx[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(n, k, |r, c| eig.eigenvectors[(r, idx[c])]);
        return Ok(LowSpectrum { values, vectors });
    }
    let m = (2 * k).max(k + 8).min(n);
    let factor = Ldl::factor(&a.shifted(shift), envelope_order(a))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut rng));
    let tol = 1e-11 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..2000 {
        let mut z = DMatrix::zeros(n, m);
        for c in 0..m {
            let col: Vec<f64> = q.column(c).iter().copied().collect();
            z.set_column(c, &DVector::from_vec(factor.solve(&col)));
        }
        let basis = z.qr().q();
        let mut aq = DMatrix::zeros(n, m);
        for c in 0..m {
            let col: Vec<f64> = basis.column(c).iter().copied().collect();
            aq.set_column(c, &DVector::from_vec(a.mul_vec(&col)));
        }
        let h = basis.transpose() * &aq;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let y = DMatrix::from_fn(m, m, |r, c| eig.eigenvectors[(r, idx[c])]);
        q = &basis * &y;
        let aq = aq * &y;
        let values: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
        let converged = (0..k).all(|c| (aq.column(c) - q.column(c) * values[c]).norm() <= tol);
        if converged {
            return Ok(LowSpectrum {
                values: values[..k].to_vec(),
                vectors: q.columns(0, k).into_owned(),
            });
        }
    }
    Err(Error::SolverFailure("subspace iteration did not converge".into()))
}
