//! Sparse operators, Lanczos and Krylov exponentials on complex vectors.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::fock::C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `Σ conj(a_i) b_i`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// `y += s x`.
pub fn axpy(s: C64, x: &[C64], y: &mut [C64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += s * xi;
    }
}

pub fn scale(s: C64, x: &mut [C64]) {
    for xi in x {
        *xi *= s;
    }
}

/// Real symmetric matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from unsorted `(row, col, value)` triplets; duplicates are summed
    /// and exact zeros dropped.
    pub fn from_triplets(n: usize, mut trip: Vec<(u32, u32, f64)>) -> Self {
        trip.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(trip.len());
        let mut vals: Vec<f64> = Vec::with_capacity(trip.len());
        let mut last: Option<(u32, u32)> = None;
        for (r, c, v) in trip {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_ptr[r as usize + 1] += 1;
            cols.push(c);
            vals.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self { n, row_ptr, cols, vals };
        m.prune();
        m
    }

    fn prune(&mut self) {
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.cols.len());
        let mut vals = Vec::with_capacity(self.vals.len());
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.vals[k] != 0.0 {
                    cols.push(self.cols[k]);
                    vals.push(self.vals[k]);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        self.row_ptr = row_ptr;
        self.cols = cols;
        self.vals = vals;
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, row_ptr: vec![0; n + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (self.cols[k] as usize, self.vals[k]))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[C64], y: &mut [C64]) {
        debug_assert_eq!(x.len(), self.n);
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k] as usize] * self.vals[k];
            }
            *yr = acc;
        }
    }

    /// `y += s A x`.
    pub fn matvec_add(&self, s: f64, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += x[self.cols[k] as usize] * self.vals[k];
            }
            *yr += acc * s;
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        let mut y = vec![ZERO; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `⟨x|A|x⟩` (real for symmetric `A`).
    pub fn expectation(&self, x: &[C64]) -> f64 {
        dot(x, &self.apply(x)).re
    }

    /// `Σ_k c_k A_k` over matrices of equal dimension.
    pub fn linear_combination(terms: &[(f64, &CsrMatrix)]) -> Result<CsrMatrix> {
        let n = terms.first().map_or(0, |t| t.1.n);
        let mut trip = Vec::new();
        for (c, m) in terms {
            if m.n != n {
                return Err(Error::DimensionMismatch(format!("{} vs {n}", m.n)));
            }
            for r in 0..m.n {
                for (col, v) in m.row(r) {
                    trip.push((r as u32, col as u32, c * v));
                }
            }
        }
        Ok(CsrMatrix::from_triplets(n, trip))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                m.write(r, c, m.read(r, c) + v);
            }
        }
        m
    }

    /// Gershgorin bound on the spectral radius.
    pub fn norm_bound(&self) -> f64 {
        (0..self.n).map(|r| self.row(r).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Eigenvalues ascending with eigenvectors as columns.
pub fn sym_eigen(m: &Mat<f64>) -> (Vec<f64>, Mat<f64>) {
    let e = m.selfadjoint_eigendecomposition(Side::Lower);
    let vals: Vec<f64> = (0..m.nrows()).map(|i| e.s().column_vector().read(i)).collect();
    (vals, e.u().to_owned())
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, Mat<f64>) {
    let m = alpha.len();
    let mut t = Mat::<f64>::zeros(m, m);
    for i in 0..m {
        t.write(i, i, alpha[i]);
        if i + 1 < m {
            t.write(i, i + 1, beta[i]);
            t.write(i + 1, i, beta[i]);
        }
    }
    sym_eigen(&t)
}

/// Lanczos run with full reorthogonalization.
struct Krylov {
    basis: Vec<Vec<C64>>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `β_m` past the last basis vector; zero on an invariant subspace.
    residual: f64,
}

fn lanczos<F>(apply: &F, v0: &[C64], max_dim: usize, breakdown: f64) -> Result<Krylov>
where
    F: Fn(&[C64], &mut [C64]) + ?Sized,
{
    let n0 = norm(v0);
    if n0 == 0.0 {
        return Err(Error::InvalidArgument("Lanczos start vector is zero".into()));
    }
    let n = v0.len();
    let mut basis: Vec<Vec<C64>> = vec![v0.iter().map(|x| x / n0).collect()];
    let mut alpha = Vec::new();
    let mut beta = Vec::new();
    let mut w = vec![ZERO; n];
    // Breakdown is judged against the largest Lanczos coefficient seen so far.
    let mut op_scale = 0.0f64;
    loop {
        let j = basis.len() - 1;
        apply(&basis[j], &mut w);
        let a = dot(&basis[j], &w).re;
        alpha.push(a);
        op_scale = op_scale.max(a.abs());
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &w);
                axpy(-c, q, &mut w);
            }
        }
        let b = norm(&w);
        if b <= breakdown * op_scale.max(1.0) || basis.len() >= max_dim.min(n) {
            return Ok(Krylov { basis, alpha, beta, residual: b });
        }
        op_scale = op_scale.max(b);
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
}

/// Lowest eigenpair (and the next Ritz value) of a symmetric operator.
pub struct LanczosGround {
    pub energy: f64,
    pub vector: Vec<C64>,
    pub next_energy: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn lanczos_ground<F>(apply: &F, v0: &[C64], tol: f64, max_iter: usize) -> Result<LanczosGround>
where
    F: Fn(&[C64], &mut [C64]) + ?Sized,
{
    let n = v0.len();
    let mut dim = 40.min(n).max(1);
    loop {
        let k = lanczos(apply, v0, dim, 1e-13)?;
        let (vals, vecs) = tridiagonal_eigen(&k.alpha, &k.beta);
        let m = vals.len();
        let resid = k.residual * vecs.read(m - 1, 0).abs();
        let converged = resid < tol || k.basis.len() < dim || dim >= n;
        if converged || dim >= max_iter {
            if !converged {
                return Err(Error::KrylovNonConvergence { residual: resid });
            }
            let mut v = vec![ZERO; n];
            for (i, q) in k.basis.iter().enumerate() {
                axpy(C64::new(vecs.read(i, 0), 0.0), q, &mut v);
            }
            let nv = norm(&v);
            scale(C64::new(1.0 / nv, 0.0), &mut v);
            // Residual of the assembled vector, independent of the Ritz estimate.
            let mut hv = vec![ZERO; n];
            apply(&v, &mut hv);
            axpy(C64::new(-vals[0], 0.0), &v, &mut hv);
            return Ok(LanczosGround {
                energy: vals[0],
                vector: v,
                next_energy: vals.get(1).copied().unwrap_or(f64::INFINITY),
                residual: norm(&hv),
                iterations: m,
            });
        }
        dim = (dim * 2).min(max_iter).min(n);
    }
}

/// Spectral measure `(E_n, |⟨n|v⟩|²)` of `v`, exact on the cyclic subspace it
/// generates. Weights sum to `‖v‖²`.
pub fn spectral_measure<F>(apply: &F, v: &[C64], breakdown: f64) -> Result<Vec<(f64, f64)>>
where
    F: Fn(&[C64], &mut [C64]) + ?Sized,
{
    let n2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
    let k = lanczos(apply, v, v.len(), breakdown)?;
    let (vals, vecs) = tridiagonal_eigen(&k.alpha, &k.beta);
    Ok(vals.iter().enumerate().map(|(i, &e)| (e, n2 * vecs.read(0, i).powi(2))).collect())
}

/// `exp(z H) v` for Hermitian `H` by restarted Lanczos with adaptive substeps.
///
/// The local error estimate per substep is `β_m |[exp(s z T)]_{m,1}|`
/// relative to the propagated norm.
pub fn krylov_expm<F>(apply: &F, v: &[C64], z: C64, tol: f64) -> Result<Vec<C64>>
where
    F: Fn(&[C64], &mut [C64]) + ?Sized,
{
    const MAX_DIM: usize = 40;
    let mut w = v.to_vec();
    let mut remaining = 1.0f64;
    let mut step = 1.0f64;
    while remaining > 1e-15 {
        let nw = norm(&w);
        if nw == 0.0 {
            return Ok(w);
        }
        let k = lanczos(apply, &w, MAX_DIM, 1e-12)?;
        let (vals, vecs) = tridiagonal_eigen(&k.alpha, &k.beta);
        let m = vals.len();
        let invariant = k.residual <= 1e-12 || m == w.len();
        let coeffs = |s: f64| -> Vec<C64> {
            (0..m)
                .map(|i| {
                    (0..m).fold(ZERO, |acc, l| acc + (z * s * vals[l]).exp() * (vecs.read(i, l) * vecs.read(0, l) * nw))
                })
                .collect()
        };
        step = if invariant { remaining } else { step.min(remaining) };
        let mut y = coeffs(step);
        if !invariant {
            loop {
                let ny = norm(&y);
                let err = k.residual * y[m - 1].norm();
                if err <= tol * ny.max(1e-300) {
                    break;
                }
                step *= 0.5;
                if step < 1e-10 {
                    return Err(Error::KrylovNonConvergence { residual: err / ny });
                }
                y = coeffs(step);
            }
        }
        let mut next = vec![ZERO; w.len()];
        for (c, q) in y.iter().zip(&k.basis) {
            axpy(*c, q, &mut next);
        }
        w = next;
        remaining -= step;
        step = (step * 2.0).min(1.0);
        if !w.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
            return Err(Error::NormUnderflow);
        }
    }
    Ok(w)
}

/// `exp(z H) v` by truncated Taylor series on substeps, for Hermitian `H`
/// with `‖H - shift‖ ≤ radius`. Cheaper than Krylov for short steps since
/// it needs no orthogonalization.
pub fn taylor_expm<F>(apply: &F, v: &[C64], z: C64, shift: f64, radius: f64, tol: f64) -> Result<Vec<C64>>
where
    F: Fn(&[C64], &mut [C64]) + ?Sized,
{
    const MAX_TERMS: usize = 60;
    let substeps = (z.norm() * radius / 2.0).ceil().max(1.0) as usize;
    let zs = z / substeps as f64;
    let phase = (zs * shift).exp();
    let mut acc = v.to_vec();
    let mut term = vec![ZERO; v.len()];
    let mut next = vec![ZERO; v.len()];
    for _ in 0..substeps {
        term.copy_from_slice(&acc);
        let mut converged = false;
        for k in 1..=MAX_TERMS {
            apply(&term, &mut next);
            let c = zs / k as f64;
            for (n, t) in next.iter_mut().zip(&term) {
                *n = c * (*n - shift * t);
            }
            std::mem::swap(&mut term, &mut next);
            axpy(C64::new(1.0, 0.0), &term, &mut acc);
            if norm(&term) <= tol * norm(&acc).max(1e-300) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::KrylovNonConvergence { residual: norm(&term) / norm(&acc) });
        }
        scale(phase, &mut acc);
    }
    if !acc.iter().all(|x| x.re.is_finite() && x.im.is_finite()) {
        return Err(Error::NormUnderflow);
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn chain(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n - 1 {
            t.push((i as u32, i as u32 + 1, -1.0));
            t.push((i as u32 + 1, i as u32, -1.0));
        }
        for i in 0..n {
            t.push((i as u32, i as u32, 0.3 * i as f64));
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn csr_sums_duplicates_and_drops_zeros() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 1, 1.0), (0, 1, 2.0), (1, 0, 1.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 1);
    }

    #[test]
    fn krylov_matches_dense_exponential() {
        let h = chain(30);
        let (vals, vecs) = sym_eigen(&h.to_dense());
        let v: Vec<C64> = (0..30).map(|i| C64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        for z in [C64::new(0.0, -3.7), C64::new(0.4, 0.0), C64::new(-0.4, 0.0)] {
            let got = krylov_expm(&|x: &[C64], y: &mut [C64]| h.matvec(x, y), &v, z, 1e-12).unwrap();
            let mut want = vec![ZERO; 30];
            for n in 0..30 {
                let ov = (0..30).fold(ZERO, |a, i| a + v[i] * vecs.read(i, n));
                for i in 0..30 {
                    want[i] += (z * vals[n]).exp() * ov * vecs.read(i, n);
                }
            }
            let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "z = {z}: {err}");
            let r = h.norm_bound();
            let taylor = taylor_expm(&|x: &[C64], y: &mut [C64]| h.matvec(x, y), &v, z, 0.0, r, 1e-14).unwrap();
            let err: f64 = taylor.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "taylor z = {z}: {err}");
            let shifted = taylor_expm(&|x: &[C64], y: &mut [C64]| h.matvec(x, y), &v, z, 4.0, r + 4.0, 1e-14).unwrap();
            let err: f64 = shifted.iter().zip(&want).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "shifted taylor z = {z}: {err}");
        }
    }

    #[test]
    fn lanczos_ground_of_chain() {
        let h = chain(50);
        let (vals, _) = sym_eigen(&h.to_dense());
        let v0: Vec<C64> = (0..50).map(|i| c(1.0 + 0.01 * i as f64)).collect();
        let g = lanczos_ground(&|x: &[C64], y: &mut [C64]| h.matvec(x, y), &v0, 1e-10, 200).unwrap();
        assert!((g.energy - vals[0]).abs() < 1e-10);
        assert!(g.residual < 1e-8);
        assert!((g.next_energy - vals[1]).abs() < 1e-6);
    }

    #[test]
    fn spectral_measure_reproduces_moments() {
        let h = chain(20);
        let v: Vec<C64> = (0..20).map(|i| c(((i * 7) % 5) as f64 - 2.0)).collect();
        let mu = spectral_measure(&|x: &[C64], y: &mut [C64]| h.matvec(x, y), &v, 1e-12).unwrap();
        let w: f64 = mu.iter().map(|p| p.1).sum();
        assert!((w - norm(&v).powi(2)).abs() < 1e-10);
        let e: f64 = mu.iter().map(|p| p.0 * p.1).sum();
        assert!((e - h.expectation(&v)).abs() < 1e-10);
    }
}
