//! Dense third-order tensors and the matrix algebra the CPD solvers rest on.
//!
//! Storage is mode-1 fastest: element `(i, j, k)` of an `n x m x N` tensor
//! lives at flat index `i + n*j + n*m*k`. Every unfolding is defined against
//! that layout so that
//!
//! ```text
//! unfold_1(T) = W (H ⊙ V)^T
//! unfold_2(T) = V (H ⊙ W)^T
//! unfold_3(T) = H (V ⊙ W)^T
//! ```
//!
//! holds exactly for `T = [|W, V, H|]`, with `⊙` the Khatri-Rao product whose
//! left operand index varies slowest.

use nalgebra::{DMatrix, SVD};

use crate::error::{Error, Result};

/// Default relative truncation for [`pinv`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Largest rank accepted by [`kruskal_diagnostic`].
pub const KRUSKAL_RANK_CAP: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(n: usize, m: usize, big_n: usize) -> Self {
        Tensor3 {
            dims: (n, m, big_n),
            data: vec![0.0; n * m * big_n],
        }
    }

    /// Wraps flat mode-1-fastest data. Rejects length mismatches and
    /// non-finite entries.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (n, m, big_n) = dims;
        if n == 0 || m == 0 || big_n == 0 {
            return Err(Error::Empty("tensor dimensions"));
        }
        if data.len() != n * m * big_n {
            return Err(Error::shape(format!(
                "tensor data length {} != {}*{}*{}",
                data.len(),
                n,
                m,
                big_n
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Tensor3 { dims, data })
    }

    /// Builds a tensor from its frontal slices (each `n x m`).
    pub fn from_frontal_slices(slices: &[DMatrix<f64>]) -> Result<Self> {
        let first = slices.first().ok_or(Error::Empty("frontal slices"))?;
        let (n, m) = first.shape();
        let mut data = Vec::with_capacity(n * m * slices.len());
        for s in slices {
            if s.shape() != (n, m) {
                return Err(Error::shape("frontal slices differ in shape"));
            }
            // nalgebra is column-major, which is exactly mode-1 fastest.
            data.extend_from_slice(s.as_slice());
        }
        Tensor3::from_vec((n, m, slices.len()), data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn flat_index(&self, i: usize, j: usize, k: usize) -> usize {
        let (n, m, _) = self.dims;
        i + n * j + n * m * k
    }

    #[inline]
    pub fn multi_index(&self, flat: usize) -> (usize, usize, usize) {
        let (n, m, _) = self.dims;
        (flat % n, (flat / n) % m, flat / (n * m))
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.flat_index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.flat_index(i, j, k);
        self.data[idx] = value;
    }

    pub fn frontal_slice(&self, k: usize) -> DMatrix<f64> {
        let (n, m, _) = self.dims;
        let start = n * m * k;
        DMatrix::from_column_slice(n, m, &self.data[start..start + n * m])
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Mode-`q` unfolding (`q` in 1..=3), `N_q x (product of the others)`.
    pub fn unfold(&self, q: usize) -> Result<DMatrix<f64>> {
        let (n, m, big_n) = self.dims;
        match q {
            1 => Ok(DMatrix::from_fn(n, m * big_n, |i, col| {
                self.get(i, col % m, col / m)
            })),
            2 => Ok(DMatrix::from_fn(m, n * big_n, |j, col| {
                self.get(col % n, j, col / n)
            })),
            3 => Ok(DMatrix::from_fn(big_n, n * m, |k, col| {
                self.get(col % n, col / n, k)
            })),
            other => Err(Error::InvalidMode(other)),
        }
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn refold(mat: &DMatrix<f64>, q: usize, dims: (usize, usize, usize)) -> Result<Self> {
        let (n, m, big_n) = dims;
        let expected = match q {
            1 => (n, m * big_n),
            2 => (m, n * big_n),
            3 => (big_n, n * m),
            other => return Err(Error::InvalidMode(other)),
        };
        if mat.shape() != expected {
            return Err(Error::shape(format!(
                "mode-{q} unfolding has shape {:?}, expected {:?}",
                mat.shape(),
                expected
            )));
        }
        let mut t = Tensor3::zeros(n, m, big_n);
        for k in 0..big_n {
            for j in 0..m {
                for i in 0..n {
                    let v = match q {
                        1 => mat[(i, j + m * k)],
                        2 => mat[(j, i + n * k)],
                        _ => mat[(k, i + n * j)],
                    };
                    t.set(i, j, k, v);
                }
            }
        }
        Ok(t)
    }
}

/// Factor triple of a rank-`r` CPD: `W` is `n x r`, `V` is `m x r`,
/// `H` is `N x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdFactors {
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl CpdFactors {
    pub fn new(w: DMatrix<f64>, v: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let r = w.ncols();
        if v.ncols() != r || h.ncols() != r {
            return Err(Error::shape(format!(
                "factor column counts differ: W {}, V {}, H {}",
                r,
                v.ncols(),
                h.ncols()
            )));
        }
        Ok(CpdFactors { w, v, h })
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w.nrows(), self.v.nrows(), self.h.nrows())
    }

    /// Factor for mode `q` (1-based).
    pub fn factor(&self, q: usize) -> Result<&DMatrix<f64>> {
        match q {
            1 => Ok(&self.w),
            2 => Ok(&self.v),
            3 => Ok(&self.h),
            other => Err(Error::InvalidMode(other)),
        }
    }

    /// `P_q (⊙ of the remaining factors, descending mode order)^T`, i.e. the
    /// mode-`q` unfolding of the reconstruction computed from the factors.
    pub fn unfolded(&self, q: usize) -> Result<DMatrix<f64>> {
        let kr = match q {
            1 => khatri_rao(&self.h, &self.v)?,
            2 => khatri_rao(&self.h, &self.w)?,
            3 => khatri_rao(&self.v, &self.w)?,
            other => return Err(Error::InvalidMode(other)),
        };
        Ok(self.factor(q)? * kr.transpose())
    }
}

/// Column-wise Kronecker product; row `a*q + b` of column `l` is
/// `A[a,l] * B[b,l]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::shape(format!(
            "khatri-rao column counts differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let q = b.nrows();
    Ok(DMatrix::from_fn(a.nrows() * q, a.ncols(), |row, l| {
        a[(row / q, l)] * b[(row % q, l)]
    }))
}

pub fn hadamard(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "hadamard shapes differ: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.component_mul(b))
}

/// `T(i,j,k) = sum_l W(i,l) V(j,l) H(k,l)`.
pub fn cpd_reconstruct(p: &CpdFactors) -> Result<Tensor3> {
    let r = p.rank();
    if p.v.ncols() != r || p.h.ncols() != r {
        return Err(Error::shape("factor column counts differ"));
    }
    let (n, m, big_n) = p.dims();
    let mut data = vec![0.0; n * m * big_n];
    for k in 0..big_n {
        for j in 0..m {
            let base = n * j + n * m * k;
            for l in 0..r {
                let vh = p.v[(j, l)] * p.h[(k, l)];
                if vh == 0.0 {
                    continue;
                }
                for i in 0..n {
                    data[base + i] += p.w[(i, l)] * vh;
                }
            }
        }
    }
    Ok(Tensor3 {
        dims: (n, m, big_n),
        data,
    })
}

/// Moore-Penrose pseudo-inverse by SVD. Singular values below
/// `rel_tol * sigma_max` are treated as zero.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("pinv input"));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pinv input"));
    }
    // nalgebra's own default threshold; exactly EPSILON can stop the
    // bidiagonal iteration on an inaccurate factorization
    let svd = SVD::try_new(m.clone(), true, true, 5.0 * f64::EPSILON, 0)
        .ok_or_else(|| Error::shape("SVD did not converge"))?;
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = DMatrix::zeros(cols, rows);
    if sigma_max == 0.0 {
        return Ok(out);
    }
    let cutoff = rel_tol * sigma_max;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    for (s, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma < cutoff || sigma == 0.0 {
            continue;
        }
        let inv = 1.0 / sigma;
        // out += v_s * (1/sigma) * u_s^T
        for c in 0..rows {
            let us = u[(c, s)] * inv;
            if us == 0.0 {
                continue;
            }
            for r in 0..cols {
                out[(r, c)] += v_t[(s, r)] * us;
            }
        }
    }
    Ok(out)
}

/// Numerical rank with singular values relative to the largest one.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Kruskal rank: the largest `k` such that every set of `k` columns is
/// linearly independent. Exhaustive over column subsets.
pub fn k_rank(m: &DMatrix<f64>) -> usize {
    let r = m.ncols();
    let mut best = 0;
    for k in 1..=r.min(m.nrows()) {
        let all_independent = Subsets::new(r, k).all(|cols| {
            let sub = m.select_columns(cols.iter());
            numerical_rank(&sub, 1e-10) == k
        });
        if !all_independent {
            break;
        }
        best = k;
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KruskalReport {
    pub k_ranks: [usize; 3],
    pub sum_of_kranks: usize,
    /// `2r + (Q - 1)` with `Q = 3`.
    pub threshold: usize,
    /// Classical sufficient condition `sum >= threshold`.
    pub satisfied: bool,
    /// The inequality in the reversed direction (`sum <= threshold`), kept
    /// so callers can compare both readings.
    pub reversed_inequality_holds: bool,
}

pub fn kruskal_diagnostic(p: &CpdFactors) -> Result<KruskalReport> {
    let r = p.rank();
    if p.v.ncols() != r || p.h.ncols() != r {
        return Err(Error::shape("factor column counts differ"));
    }
    if r > KRUSKAL_RANK_CAP {
        return Err(Error::SizeCap {
            rank: r,
            cap: KRUSKAL_RANK_CAP,
        });
    }
    let k_ranks = [k_rank(&p.w), k_rank(&p.v), k_rank(&p.h)];
    let sum: usize = k_ranks.iter().sum();
    let threshold = 2 * r + 2;
    Ok(KruskalReport {
        k_ranks,
        sum_of_kranks: sum,
        threshold,
        satisfied: sum >= threshold,
        reversed_inequality_holds: sum <= threshold,
    })
}

/// Lexicographic `k`-subsets of `0..n`.
struct Subsets {
    n: usize,
    idx: Vec<usize>,
    done: bool,
}

impl Subsets {
    fn new(n: usize, k: usize) -> Self {
        Subsets {
            n,
            idx: (0..k).collect(),
            done: k > n,
        }
    }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.idx.clone();
        let k = self.idx.len();
        let mut pos = k;
        loop {
            if pos == 0 {
                self.done = true;
                break;
            }
            pos -= 1;
            if self.idx[pos] < self.n - k + pos {
                self.idx[pos] += 1;
                for q in pos + 1..k {
                    self.idx[q] = self.idx[q - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum()
}
