//! Dense complex linear algebra on small matrices.
//!
//! Composite indices of bipartite operators follow a single convention
//! everywhere in the crate: the pair `(m, r)` with `m` on the A factor and
//! `r` on the B factor maps to the flat index `m * d_b + r`.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type RMatrix = DMatrix<f64>;

/// Maximum entrywise |M - M†| accepted as Hermitian.
pub const TOL_HERM: f64 = 1e-12;
/// Smallest eigenvalue accepted as positive semidefinite.
pub const TOL_PSD: f64 = 1e-10;
/// Trace tolerance for density matrices.
pub const TOL_TRACE: f64 = 1e-10;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Subsystem {
    A,
    B,
}

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

pub fn diag(values: &[f64]) -> CMatrix {
    let n = values.len();
    CMatrix::from_fn(n, n, |i, j| if i == j { c(values[i], 0.0) } else { ZERO })
}

/// Projector |v⟩⟨v|.
pub fn outer(v: &[C64]) -> CMatrix {
    let n = v.len();
    CMatrix::from_fn(n, n, |i, j| v[i] * v[j].conj())
}

/// Kronecker product; row `(m, r)` of the result is `m * rows(b) + r`.
pub fn tensor_product(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

pub fn trace(m: &CMatrix) -> C64 {
    m.trace()
}

/// Largest entry modulus.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn frobenius_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entrywise deviation from Hermiticity.
pub fn hermiticity_defect(m: &CMatrix) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// Spectral decomposition of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Columns are the eigenvectors, in the order of `values`.
    pub vectors: CMatrix,
}

impl Eigh {
    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(f64::NEG_INFINITY)
    }

    /// Rebuilds `V f(Λ) V†`.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            for i in 0..n {
                scaled[(i, j)] *= s;
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Hermitian eigendecomposition. Rejects inputs whose Hermiticity defect
/// exceeds `tol`; the Hermitian part is used otherwise.
pub fn eigh_tol(m: &CMatrix, tol: f64) -> Result<Eigh> {
    let defect = hermiticity_defect(m);
    if defect > tol * max_abs(m).max(1.0) {
        return Err(Error::NotHermitian { defect, tol });
    }
    Ok(eigh_unchecked(m))
}

pub fn eigh(m: &CMatrix) -> Result<Eigh> {
    eigh_tol(m, TOL_HERM)
}

/// Eigendecomposition of the Hermitian part of `m`, without a defect check.
pub fn eigh_unchecked(m: &CMatrix) -> Eigh {
    let n = m.nrows();
    if n == 0 {
        return Eigh {
            values: Vec::new(),
            vectors: CMatrix::zeros(0, 0),
        };
    }
    let dec = SymmetricEigen::new(hermitian_part(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| dec.eigenvalues[i].total_cmp(&dec.eigenvalues[j]));
    let values = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    let vectors = CMatrix::from_fn(n, n, |r, k| dec.eigenvectors[(r, order[k])]);
    Eigh { values, vectors }
}

pub fn eigenvalues(m: &CMatrix) -> Result<Vec<f64>> {
    Ok(eigh(m)?.values)
}

pub fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    Ok(eigh(m)?.min())
}

/// Minimum eigenvalue of the Hermitian part, skipping the defect check.
pub fn min_eigenvalue_unchecked(m: &CMatrix) -> f64 {
    eigh_unchecked(m).min()
}

/// Singular values in decreasing order.
pub fn singular_values(m: &CMatrix) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let f = faer::Mat::<C64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    f.singular_values().map_err(|e| Error::Numerical(format!("SVD: {e:?}")))
}

pub fn smallest_singular_value(m: &CMatrix) -> Result<f64> {
    Ok(singular_values(m)?.last().copied().unwrap_or(0.0))
}

/// Full real SVD `M = U diag(s) Vᵀ`, `s` decreasing, `U` and `V` square.
#[derive(Debug, Clone)]
pub struct RealSvd {
    pub u: RMatrix,
    pub s: Vec<f64>,
    pub v: RMatrix,
}

pub fn svd_real(m: &RMatrix) -> Result<RealSvd> {
    let f = faer::Mat::<f64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    let svd = f.svd().map_err(|e| Error::Numerical(format!("SVD: {e:?}")))?;
    let (u, v) = (svd.U(), svd.V());
    Ok(RealSvd {
        u: RMatrix::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)]),
        s: svd.S().column_vector().iter().copied().collect(),
        v: RMatrix::from_fn(v.nrows(), v.ncols(), |i, j| v[(i, j)]),
    })
}

/// Permutation E = Σ_ij |ij⟩⟨ji| on C^d ⊗ C^d.
pub fn swap_operator(d: usize) -> CMatrix {
    let n = d * d;
    let mut e = CMatrix::zeros(n, n);
    for i in 0..d {
        for j in 0..d {
            e[(i * d + j, j * d + i)] = ONE;
        }
    }
    e
}

fn check_bipartite(m: &CMatrix, da: usize, db: usize, context: &'static str) -> Result<()> {
    let n = da * db;
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dims(
            context,
            format!("{n}x{n} for dims ({da}, {db})"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

/// Partial trace of an operator on C^da ⊗ C^db over `traced`.
pub fn partial_trace(m: &CMatrix, da: usize, db: usize, traced: Subsystem) -> Result<CMatrix> {
    check_bipartite(m, da, db, "partial_trace")?;
    Ok(match traced {
        Subsystem::A => CMatrix::from_fn(db, db, |r, s| {
            (0..da).map(|k| m[(k * db + r, k * db + s)]).sum()
        }),
        Subsystem::B => CMatrix::from_fn(da, da, |m_, n_| {
            (0..db).map(|k| m[(m_ * db + k, n_ * db + k)]).sum()
        }),
    })
}

/// Partial transpose on the chosen factor.
pub fn partial_transpose(m: &CMatrix, da: usize, db: usize, on: Subsystem) -> Result<CMatrix> {
    check_bipartite(m, da, db, "partial_transpose")?;
    let n = da * db;
    Ok(CMatrix::from_fn(n, n, |row, col| {
        let (a, r) = (row / db, row % db);
        let (b, s) = (col / db, col % db);
        match on {
            Subsystem::B => m[(a * db + s, b * db + r)],
            Subsystem::A => m[(b * db + r, a * db + s)],
        }
    }))
}

/// Realignment: `R[(m, n), (r, s)] = M[(m, r), (n, s)]`, a `da² × db²` matrix.
///
/// Row `(m, n)` is `m * da + n`, column `(r, s)` is `r * db + s`.
pub fn realign(m: &CMatrix, da: usize, db: usize) -> Result<CMatrix> {
    check_bipartite(m, da, db, "realign")?;
    Ok(CMatrix::from_fn(da * da, db * db, |row, col| {
        let (a, b) = (row / da, row % da);
        let (r, s) = (col / db, col % db);
        m[(a * db + r, b * db + s)]
    }))
}

/// Block `(m, n)` of a bipartite operator, i.e. `⟨m|_A M |n⟩_A` on the B factor.
pub fn block(m: &CMatrix, db: usize, row: usize, col: usize) -> CMatrix {
    m.view((row * db, col * db), (db, db)).into_owned()
}

/// `M^p` for Hermitian PSD `M`, via eigendecomposition. Eigenvalues at or
/// below `floor` are rejected when `p < 0`.
pub fn psd_power(m: &CMatrix, p: f64, floor: f64) -> Result<CMatrix> {
    let dec = eigh(m)?;
    if p < 0.0 && dec.min() <= floor {
        return Err(Error::SingularMarginal { min_eig: dec.min() });
    }
    Ok(dec.map_values(|x| x.max(0.0).powf(p)))
}

/// Lower Cholesky factor of a Hermitian matrix, or `None` unless every pivot
/// is strictly positive. Reads the lower triangle only.
///
/// nalgebra's complex Cholesky takes complex square roots of the pivots and
/// so never reports indefiniteness; this one does.
pub fn cholesky_pd(m: &CMatrix) -> Option<CMatrix> {
    let n = m.nrows();
    let mut l = CMatrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)].re;
        for k in 0..j {
            pivot -= l[(j, k)].norm_sqr();
        }
        if !(pivot > 0.0) {
            return None;
        }
        let root = pivot.sqrt();
        l[(j, j)] = c(root, 0.0);
        for i in j + 1..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = v / root;
        }
    }
    Some(l)
}

/// Frobenius-orthonormal basis of n×n Hermitian matrices.
///
/// Order: diagonal units E_pp, then for each p < q the pair
/// (E_pq + E_qp)/√2 and i(E_pq − E_qp)/√2.
pub fn hermitian_basis(n: usize) -> Vec<CMatrix> {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = Vec::with_capacity(n * n);
    for p in 0..n {
        let mut e = CMatrix::zeros(n, n);
        e[(p, p)] = ONE;
        out.push(e);
    }
    for p in 0..n {
        for q in p + 1..n {
            let mut s = CMatrix::zeros(n, n);
            s[(p, q)] = c(h, 0.0);
            s[(q, p)] = c(h, 0.0);
            out.push(s);
            let mut a = CMatrix::zeros(n, n);
            a[(p, q)] = c(0.0, h);
            a[(q, p)] = c(0.0, -h);
            out.push(a);
        }
    }
    out
}

/// Coordinates of a Hermitian matrix in [`hermitian_basis`].
pub fn hermitian_to_real(m: &CMatrix) -> Vec<f64> {
    let n = m.nrows();
    let r2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * n);
    for p in 0..n {
        out.push(m[(p, p)].re);
    }
    for p in 0..n {
        for q in p + 1..n {
            let z = (m[(p, q)] + m[(q, p)].conj()) * 0.5;
            out.push(r2 * z.re);
            out.push(r2 * z.im);
        }
    }
    out
}

/// Inverse of [`hermitian_to_real`].
pub fn real_to_hermitian(x: &[f64], n: usize) -> CMatrix {
    assert_eq!(x.len(), n * n, "coordinate vector length");
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut m = CMatrix::zeros(n, n);
    for p in 0..n {
        m[(p, p)] = c(x[p], 0.0);
    }
    let mut k = n;
    for p in 0..n {
        for q in p + 1..n {
            let z = c(x[k] * h, x[k + 1] * h);
            m[(p, q)] = z;
            m[(q, p)] = z.conj();
            k += 2;
        }
    }
    m
}

/// A density matrix (or, when flagged, a PSD cone element) on H_A ⊗ H_B.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteState {
    d_a: usize,
    d_b: usize,
    mat: CMatrix,
    normalized: bool,
}

impl BipartiteState {
    /// Validates Hermiticity, positivity and unit trace.
    pub fn new(d_a: usize, d_b: usize, mat: CMatrix) -> Result<Self> {
        Self::validate(d_a, d_b, &mat, true)?;
        Ok(BipartiteState {
            d_a,
            d_b,
            mat,
            normalized: true,
        })
    }

    /// Like [`BipartiteState::new`] but without the trace condition.
    pub fn unnormalized(d_a: usize, d_b: usize, mat: CMatrix) -> Result<Self> {
        Self::validate(d_a, d_b, &mat, false)?;
        Ok(BipartiteState {
            d_a,
            d_b,
            mat,
            normalized: false,
        })
    }

    fn validate(d_a: usize, d_b: usize, mat: &CMatrix, unit_trace: bool) -> Result<()> {
        if d_a == 0 || d_b == 0 {
            return Err(Error::InvalidState("local dimensions must be positive".into()));
        }
        check_bipartite(mat, d_a, d_b, "BipartiteState")?;
        let defect = hermiticity_defect(mat);
        if defect > TOL_HERM {
            return Err(Error::InvalidState(format!(
                "not Hermitian: max |M - M†| = {defect:.3e} > {TOL_HERM:.0e}"
            )));
        }
        let min = min_eigenvalue_unchecked(mat);
        if min < -TOL_PSD {
            return Err(Error::InvalidState(format!(
                "not positive semidefinite: min eigenvalue {min:.3e} < -{TOL_PSD:.0e}"
            )));
        }
        let tr = mat.trace();
        if unit_trace && ((tr.re - 1.0).abs() > TOL_TRACE || tr.im.abs() > TOL_TRACE) {
            return Err(Error::InvalidState(format!(
                "trace {:.12} differs from 1 by more than {TOL_TRACE:.0e}",
                tr.re
            )));
        }
        Ok(())
    }

    /// Hermitian-symmetrizes and trace-normalizes `mat` before validating.
    pub fn from_unnormalized(d_a: usize, d_b: usize, mat: &CMatrix) -> Result<Self> {
        let h = hermitian_part(mat);
        let tr = h.trace().re;
        if tr <= 0.0 {
            return Err(Error::InvalidState(format!("non-positive trace {tr:.3e}")));
        }
        Self::new(d_a, d_b, h.unscale(tr))
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_a, self.d_b)
    }

    pub fn dim(&self) -> usize {
        self.d_a * self.d_b
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Component S_mnrs = ⟨m r|S|n s⟩.
    pub fn component(&self, m: usize, n: usize, r: usize, s: usize) -> C64 {
        self.mat[(m * self.d_b + r, n * self.d_b + s)]
    }

    pub fn partial_trace(&self, traced: Subsystem) -> CMatrix {
        partial_trace(&self.mat, self.d_a, self.d_b, traced).expect("dims checked at construction")
    }

    pub fn partial_transpose(&self, on: Subsystem) -> CMatrix {
        partial_transpose(&self.mat, self.d_a, self.d_b, on).expect("dims checked at construction")
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue_unchecked(&self.mat)
    }
}


#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_kron_identity() {
        assert_eq!(tensor_product(&identity(2), &identity(2)), identity(4));
    }

    #[test]
    fn basis_projector_kron() {
        let p = tensor_product(&diag(&[1.0, 0.0]), &diag(&[0.0, 1.0]));
        assert_eq!(p, diag(&[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn kron_row_convention() {
        let mut rng = rng(1);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let k = tensor_product(&a, &b);
        for m in 0..2 {
            for r in 0..3 {
                for n in 0..3 {
                    for s in 0..2 {
                        assert_eq!(k[(m * 3 + r, n * 2 + s)], a[(m, n)] * b[(r, s)]);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_trace_multiplies() {
        let mut rng = rng(2);
        let a = random_matrix(&mut rng, 2, 2);
        let b = random_matrix(&mut rng, 2, 2);
        // direct sum over diagonal entries of the explicit product
        let mut expected = ZERO;
        for i in 0..2 {
            for j in 0..2 {
                expected += a[(i, i)] * b[(j, j)];
            }
        }
        let got = tensor_product(&a, &b).trace();
        assert!((got - expected).norm() < 1e-12);
        assert!((got - a.trace() * b.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_of_product() {
        let mut rng = rng(3);
        let ra = random_density(&mut rng, 2);
        let rb = random_density(&mut rng, 3);
        let s = BipartiteState::new(2, 3, tensor_product(&ra, &rb)).unwrap();
        assert!(max_abs_diff(&s.partial_trace(Subsystem::A), &rb) < 1e-12);
        assert!(max_abs_diff(&s.partial_trace(Subsystem::B), &ra) < 1e-12);
    }

    #[test]
    fn partial_trace_of_max_entangled() {
        for d in 2..=4 {
            let mut v = vec![ZERO; d * d];
            for i in 0..d {
                v[i * d + i] = c(1.0 / (d as f64).sqrt(), 0.0);
            }
            let s = BipartiteState::new(d, d, outer(&v)).unwrap();
            let marg = s.partial_trace(Subsystem::A);
            assert!(max_abs_diff(&marg, &identity(d).unscale(d as f64)) < 1e-12);
        }
    }

    #[test]
    fn partial_trace_preserves_trace() {
        let mut rng = rng(4);
        let m = random_hermitian(&mut rng, 4);
        let summed: C64 = (0..4).map(|i| m[(i, i)]).sum();
        for sub in [Subsystem::A, Subsystem::B] {
            let r = partial_trace(&m, 2, 2, sub).unwrap();
            assert!((r.trace() - summed).norm() < 1e-12);
        }
    }

    #[test]
    fn partial_trace_dimension_mismatch() {
        let m = identity(6);
        assert!(matches!(
            partial_trace(&m, 2, 2, Subsystem::A),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn partial_transpose_of_product() {
        let mut rng = rng(5);
        let ra = random_density(&mut rng, 2);
        let rb = random_density(&mut rng, 2);
        let m = tensor_product(&ra, &rb);
        let pt = partial_transpose(&m, 2, 2, Subsystem::B).unwrap();
        assert!(max_abs_diff(&pt, &tensor_product(&ra, &rb.transpose())) < 1e-15);
        let pta = partial_transpose(&m, 2, 2, Subsystem::A).unwrap();
        assert!(max_abs_diff(&pta, &tensor_product(&ra.transpose(), &rb)) < 1e-15);
    }

    #[test]
    fn partial_transpose_bell_spectrum() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let psi = outer(&[c(h, 0.0), ZERO, ZERO, c(h, 0.0)]);
        let pt = partial_transpose(&psi, 2, 2, Subsystem::B).unwrap();
        let ev = eigenvalues(&pt).unwrap();
        let expected = [-0.5, 0.5, 0.5, 0.5];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn swap_small_cases() {
        assert_eq!(swap_operator(1), identity(1));
        let e = swap_operator(2);
        // |01⟩ is index 1, |10⟩ is index 2
        let mut ket01 = CMatrix::zeros(4, 1);
        ket01[(1, 0)] = ONE;
        let out = &e * ket01;
        assert_eq!(out[(2, 0)], ONE);
        assert_eq!(out.iter().filter(|z| z.norm() > 0.0).count(), 1);
    }

    #[test]
    fn swap_exchanges_factors() {
        let mut rng = rng(6);
        let d = 3;
        let a = random_matrix(&mut rng, d, 1);
        let b = random_matrix(&mut rng, d, 1);
        let e = swap_operator(d);
        let ab = tensor_product(&a, &b);
        let ba = tensor_product(&b, &a);
        // explicit permutation oracle
        let mut permuted = CMatrix::zeros(d * d, 1);
        for i in 0..d {
            for j in 0..d {
                permuted[(j * d + i, 0)] = ab[(i * d + j, 0)];
            }
        }
        assert!(max_abs_diff(&(&e * &ab), &permuted) < 1e-15);
        assert!(max_abs_diff(&(&e * &ab), &ba) < 1e-15);
        // on operators
        let x = random_matrix(&mut rng, d, d);
        let y = random_matrix(&mut rng, d, d);
        let conj = &e * tensor_product(&x, &y) * &e;
        assert!(max_abs_diff(&conj, &tensor_product(&y, &x)) < 1e-13);
    }

    #[test]
    fn swap_squares_to_identity() {
        for d in 1..=5 {
            let e = swap_operator(d);
            assert_eq!(&e * &e, identity(d * d));
            assert_eq!(e.adjoint(), e);
        }
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert!((min_eigenvalue(&identity(3)).unwrap() - 1.0).abs() < 1e-14);
        assert!((min_eigenvalue(&diag(&[0.2, 0.8])).unwrap() - 0.2).abs() < 1e-14);
    }

    #[test]
    fn min_eigenvalue_rejects_non_hermitian() {
        let mut m = identity(2);
        m[(0, 1)] = c(1.0, 0.0);
        assert!(matches!(min_eigenvalue(&m), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn eigen_reconstruction() {
        let mut rng = rng(7);
        for n in [1, 2, 5, 9, 16] {
            let m = random_hermitian(&mut rng, n);
            let dec = eigh(&m).unwrap();
            let rebuilt = dec.map_values(|x| x);
            assert!(frobenius_norm(&(&m - rebuilt)) <= 1e-10 * frobenius_norm(&m));
            assert!(dec.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn hermitian_coordinates_roundtrip() {
        let mut rng = rng(8);
        let m = random_hermitian(&mut rng, 4);
        let x = hermitian_to_real(&m);
        assert!(max_abs_diff(&real_to_hermitian(&x, 4), &m) < 1e-15);
        let basis = hermitian_basis(4);
        for (k, b) in basis.iter().enumerate() {
            let coeff = (b * &m).trace();
            assert!((coeff.re - x[k]).abs() < 1e-13 && coeff.im.abs() < 1e-13);
        }
    }

    #[test]
    fn realign_matches_definition() {
        let mut rng = rng(9);
        let m = random_matrix(&mut rng, 6, 6);
        let r = realign(&m, 2, 3).unwrap();
        assert_eq!(r.shape(), (4, 9));
        assert_eq!(r[(1 * 2 + 0, 2 * 3 + 1)], m[(1 * 3 + 2, 0 * 3 + 1)]);
    }

    #[test]
    fn state_validation_names_invariant() {
        let err = BipartiteState::new(2, 2, identity(4)).unwrap_err();
        assert!(err.to_string().contains("trace"));
        let err = BipartiteState::new(2, 2, diag(&[1.5, -0.5, 0.0, 0.0])).unwrap_err();
        assert!(err.to_string().contains("positive semidefinite"));
        let mut m = identity(4).unscale(4.0);
        m[(0, 1)] = c(0.1, 0.0);
        let err = BipartiteState::new(2, 2, m).unwrap_err();
        assert!(err.to_string().contains("Hermitian"));
        assert!(BipartiteState::unnormalized(2, 2, identity(4)).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn kron_is_associative(seed in any::<u64>()) {
            let mut rng = rng(seed);
            let a = random_matrix(&mut rng, 2, 2);
            let b = random_matrix(&mut rng, 3, 3);
            let cm = random_matrix(&mut rng, 2, 2);
            let l = tensor_product(&tensor_product(&a, &b), &cm);
            let r = tensor_product(&a, &tensor_product(&b, &cm));
            prop_assert!(max_abs_diff(&l, &r) < 1e-12);
        }

        #[test]
        fn trace_a_of_product_is_scaled_b(seed in any::<u64>()) {
            let mut rng = rng(seed);
            let a = random_matrix(&mut rng, 3, 3);
            let b = random_matrix(&mut rng, 2, 2);
            let pt = partial_trace(&tensor_product(&a, &b), 3, 2, Subsystem::A).unwrap();
            prop_assert!(max_abs_diff(&pt, &(&b * a.trace())) < 1e-12);
        }

        #[test]
        fn partial_transpose_is_involution(seed in any::<u64>()) {
            let mut rng = rng(seed);
            let m = random_matrix(&mut rng, 6, 6);
            let once = partial_transpose(&m, 2, 3, Subsystem::B).unwrap();
            let twice = partial_transpose(&once, 2, 3, Subsystem::B).unwrap();
            prop_assert_eq!(twice, m);
        }

        #[test]
        fn partial_transpose_keeps_hermitian(seed in any::<u64>()) {
            let mut rng = rng(seed);
            let m = random_hermitian(&mut rng, 6);
            let pt = partial_transpose(&m, 3, 2, Subsystem::B).unwrap();
            prop_assert!(hermiticity_defect(&pt) < 1e-15);
        }
    }

    #[test]
    fn svd_recomposes_with_clustered_singular_values() {
        let mut g = rng(41);
        for n in [2, 6, 16] {
            // four-fold clusters split at the 1e-15 level
            let q = random_matrix(&mut g, n, n).qr().q();
            let w = random_matrix(&mut g, n, n).qr().q();
            let vals: Vec<f64> = (0..n).map(|i| 1.0 + (i / 4) as f64 + 1e-15 * i as f64).collect();
            let m = &q * diag(&vals) * w.adjoint();
            let sv = singular_values(&m).unwrap();
            let mut expected = vals.clone();
            expected.sort_by(|a, b| b.total_cmp(a));
            for (a, b) in sv.iter().zip(&expected) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
            let r = RMatrix::from_fn(n, n, |i, j| m[(i, j)].re);
            let svd = svd_real(&r).unwrap();
            let back = &svd.u * RMatrix::from_diagonal(&nalgebra::DVector::from_vec(svd.s.clone())) * svd.v.transpose();
            assert!((back - &r).amax() < 1e-12);
        }
    }

    #[test]
    fn cholesky_detects_indefinite_complex() {
        let m = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 2.0), c(0.0, -2.0), c(1.0, 0.0)]);
        assert!(cholesky_pd(&m).is_none());
        assert!(cholesky_pd(&diag(&[1.0, 0.0])).is_none());
        let mut g = testutil::rng(6);
        for _ in 0..10 {
            let a = testutil::random_matrix(&mut g, 5, 5);
            let pd = &a * a.adjoint() + identity(5).scale(0.1);
            let l = cholesky_pd(&pd).unwrap();
            assert!(testutil::max_abs_diff(&(&l * l.adjoint()), &pd) < 1e-12);
        }
    }
}
