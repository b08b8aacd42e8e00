//! Linear maps between operator spaces, their transfer-matrix and Choi
//! representations, and their one-sided action on bipartite operators.
//!
//! A map `Λ: B(C^d_in) → B(C^d_out)` is stored as its transfer matrix
//! `T`, of shape `d_out² × d_in²`, acting on row-major vectorized
//! operators: `Λ(ρ)[k, l] = Σ_rs T[(k, l), (r, s)] ρ[r, s]` with
//! `(k, l) → k·d_out + l` and `(r, s) → r·d_in + s`.
//!
//! The Choi matrix is normalized against the unit-trace maximally
//! entangled state: `Z = (1/d_in) Σ_rs |r⟩⟨s| ⊗ Λ(|r⟩⟨s|)`, so
//! `Z[(r, k), (s, l)] = T[(k, l), (r, s)] / d_in`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, c, BipartiteState, CMatrix, C64, ONE, TOL_HERM, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct LocalMap {
    d_in: usize,
    d_out: usize,
    transfer: CMatrix,
}

/// Choi matrix of a Hermiticity-preserving map.
#[derive(Debug, Clone, PartialEq)]
pub struct ChoiMatrix {
    d_in: usize,
    d_out: usize,
    z: CMatrix,
}

impl LocalMap {
    /// Wraps a transfer matrix, checking that the map preserves Hermiticity
    /// (`T[(l,k),(s,r)] = conj T[(k,l),(r,s)]`).
    pub fn from_transfer(d_in: usize, d_out: usize, transfer: CMatrix) -> Result<Self> {
        if transfer.shape() != (d_out * d_out, d_in * d_in) {
            return Err(Error::dims(
                "LocalMap::from_transfer",
                format!("{}x{}", d_out * d_out, d_in * d_in),
                format!("{}x{}", transfer.nrows(), transfer.ncols()),
            ));
        }
        let map = LocalMap {
            d_in,
            d_out,
            transfer,
        };
        let defect = map.hermiticity_defect();
        let tol = TOL_HERM * linalg::max_abs(&map.transfer).max(1.0);
        if defect > tol {
            return Err(Error::NotHermitian { defect, tol });
        }
        Ok(map)
    }

    fn from_transfer_unchecked(d_in: usize, d_out: usize, transfer: CMatrix) -> Self {
        LocalMap {
            d_in,
            d_out,
            transfer,
        }
    }

    pub fn identity(d: usize) -> Self {
        Self::from_transfer_unchecked(d, d, CMatrix::identity(d * d, d * d))
    }

    pub fn zero(d_in: usize, d_out: usize) -> Self {
        Self::from_transfer_unchecked(d_in, d_out, CMatrix::zeros(d_out * d_out, d_in * d_in))
    }

    pub fn transpose(d: usize) -> Self {
        let mut t = CMatrix::zeros(d * d, d * d);
        for k in 0..d {
            for l in 0..d {
                t[(k * d + l, l * d + k)] = ONE;
            }
        }
        Self::from_transfer_unchecked(d, d, t)
    }

    /// `ρ ↦ Tr(ρ)·target`.
    pub fn trace_and_replace(d_in: usize, target: &CMatrix) -> Result<Self> {
        let d_out = target.nrows();
        let mut t = CMatrix::zeros(d_out * d_out, d_in * d_in);
        for k in 0..d_out {
            for l in 0..d_out {
                for r in 0..d_in {
                    t[(k * d_out + l, r * d_in + r)] = target[(k, l)];
                }
            }
        }
        Self::from_transfer(d_in, d_out, t)
    }

    /// `ρ ↦ Σ_k K_k ρ K_k†`; every Kraus operator must be `d_out × d_in`.
    pub fn from_kraus(kraus: &[CMatrix]) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| Error::Unsupported("empty Kraus list".into()))?;
        let (d_out, d_in) = first.shape();
        let mut t = CMatrix::zeros(d_out * d_out, d_in * d_in);
        for k in kraus {
            if k.shape() != (d_out, d_in) {
                return Err(Error::dims("LocalMap::from_kraus", format!("{d_out}x{d_in}"), format!("{}x{}", k.nrows(), k.ncols())));
            }
            t += k.kronecker(&k.map(|z| z.conj()));
        }
        Ok(Self::from_transfer_unchecked(d_in, d_out, t))
    }

    /// Random completely positive map with `n_kraus` complex Gaussian Kraus
    /// operators.
    pub fn random_cp(d_in: usize, d_out: usize, n_kraus: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kraus: Vec<CMatrix> = (0..n_kraus.max(1))
            .map(|_| {
                CMatrix::from_fn(d_out, d_in, |_, _| {
                    c(rng.sample(StandardNormal), rng.sample(StandardNormal))
                })
            })
            .collect();
        Self::from_kraus(&kraus).expect("Kraus shapes are uniform")
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn transfer(&self) -> &CMatrix {
        &self.transfer
    }

    /// Coefficient x[k, l, r, s] with `Λ(|r⟩⟨s|) = Σ_kl x[k,l,r,s] |k⟩⟨l|`.
    pub fn coefficient(&self, k: usize, l: usize, r: usize, s: usize) -> C64 {
        self.transfer[(k * self.d_out + l, r * self.d_in + s)]
    }

    /// Largest violation of `x[l,k,s,r] = conj x[k,l,r,s]`.
    pub fn hermiticity_defect(&self) -> f64 {
        let (di, dout) = (self.d_in, self.d_out);
        let mut worst = 0.0f64;
        for k in 0..dout {
            for l in 0..dout {
                for r in 0..di {
                    for s in 0..di {
                        let a = self.transfer[(k * dout + l, r * di + s)];
                        let b = self.transfer[(l * dout + k, s * di + r)];
                        worst = worst.max((a - b.conj()).norm());
                    }
                }
            }
        }
        worst
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self::from_transfer_unchecked(self.d_in, self.d_out, self.transfer.scale(alpha))
    }

    pub fn add(&self, other: &LocalMap) -> Result<Self> {
        if (self.d_in, self.d_out) != (other.d_in, other.d_out) {
            return Err(Error::dims(
                "LocalMap::add",
                format!("{}->{}", self.d_in, self.d_out),
                format!("{}->{}", other.d_in, other.d_out),
            ));
        }
        Ok(Self::from_transfer_unchecked(self.d_in, self.d_out, &self.transfer + &other.transfer))
    }

    /// `ρ ↦ L Λ(ρ) L†` for a `d_out × d_out` matrix `L`.
    pub fn conjugate_output(&self, l: &CMatrix) -> Result<Self> {
        if l.shape() != (self.d_out, self.d_out) {
            return Err(Error::dims("LocalMap::conjugate_output", format!("{0}x{0}", self.d_out), format!("{}x{}", l.nrows(), l.ncols())));
        }
        let left = l.kronecker(&l.map(|z| z.conj()));
        Ok(Self::from_transfer_unchecked(self.d_in, self.d_out, left * &self.transfer))
    }

    pub fn apply(&self, rho: &CMatrix) -> Result<CMatrix> {
        if rho.shape() != (self.d_in, self.d_in) {
            return Err(Error::dims(
                "LocalMap::apply",
                format!("{0}x{0}", self.d_in),
                format!("{}x{}", rho.nrows(), rho.ncols()),
            ));
        }
        let v = vectorize(rho);
        let out = &self.transfer * v;
        Ok(unvectorize(out.as_slice(), self.d_out))
    }

    /// Minimum output eigenvalue over `n` random pure inputs. A sampled
    /// positivity check, not a proof.
    pub fn sampled_min_output_eigenvalue(&self, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::INFINITY;
        for _ in 0..n {
            let v: Vec<C64> = (0..self.d_in)
                .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
                .collect();
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let v: Vec<C64> = v.into_iter().map(|z| z / norm).collect();
            let out = self.apply(&linalg::outer(&v)).expect("input sized to d_in");
            worst = worst.min(linalg::min_eigenvalue_unchecked(&out));
        }
        worst
    }
}

/// Row-major vectorization of a square matrix as a column.
pub fn vectorize(m: &CMatrix) -> CMatrix {
    let (r, cols) = m.shape();
    CMatrix::from_fn(r * cols, 1, |i, _| m[(i / cols, i % cols)])
}

pub fn unvectorize(v: &[C64], d: usize) -> CMatrix {
    CMatrix::from_fn(d, d, |k, l| v[k * d + l])
}

impl ChoiMatrix {
    pub fn new(d_in: usize, d_out: usize, z: CMatrix) -> Result<Self> {
        let n = d_in * d_out;
        if z.shape() != (n, n) {
            return Err(Error::dims("ChoiMatrix::new", format!("{n}x{n}"), format!("{}x{}", z.nrows(), z.ncols())));
        }
        let defect = linalg::hermiticity_defect(&z);
        let tol = TOL_HERM * linalg::max_abs(&z).max(1.0);
        if defect > tol {
            return Err(Error::NotHermitian { defect, tol });
        }
        Ok(ChoiMatrix { d_in, d_out, z })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.z
    }
}

pub fn choi_of_map(map: &LocalMap) -> ChoiMatrix {
    let (di, dout) = (map.d_in, map.d_out);
    let n = di * dout;
    let inv = 1.0 / di as f64;
    let z = CMatrix::from_fn(n, n, |row, col| {
        let (r, k) = (row / dout, row % dout);
        let (s, l) = (col / dout, col % dout);
        map.transfer[(k * dout + l, r * di + s)] * inv
    });
    ChoiMatrix {
        d_in: di,
        d_out: dout,
        z,
    }
}

/// Exact inverse of [`choi_of_map`]:
/// `Λ(ρ) = d_in · Σ_ijkl ⟨ij|Z|kl⟩ ρ_ik |j⟩⟨l|`.
pub fn map_of_choi(choi: &ChoiMatrix) -> LocalMap {
    let (di, dout) = (choi.d_in, choi.d_out);
    let scale = di as f64;
    let t = CMatrix::from_fn(dout * dout, di * di, |row, col| {
        let (k, l) = (row / dout, row % dout);
        let (r, s) = (col / di, col % di);
        choi.z[(r * dout + k, s * dout + l)] * scale
    });
    LocalMap::from_transfer_unchecked(di, dout, t)
}

/// `outer ∘ inner`.
pub fn compose(outer: &LocalMap, inner: &LocalMap) -> Result<LocalMap> {
    if inner.d_out != outer.d_in {
        return Err(Error::dims("compose", format!("inner.d_out = {}", outer.d_in), format!("{}", inner.d_out)));
    }
    Ok(LocalMap::from_transfer_unchecked(
        inner.d_in,
        outer.d_out,
        &outer.transfer * &inner.transfer,
    ))
}

/// `(I ⊗ Λ)(M)` for an operator `M` on C^d_a ⊗ C^d_in.
pub fn apply_local_b_raw(map: &LocalMap, m: &CMatrix, d_a: usize) -> Result<CMatrix> {
    let di = map.d_in;
    if m.shape() != (d_a * di, d_a * di) {
        return Err(Error::dims("apply_local_B", format!("{0}x{0}", d_a * di), format!("{}x{}", m.nrows(), m.ncols())));
    }
    let dout = map.d_out;
    let mut out = CMatrix::zeros(d_a * dout, d_a * dout);
    for a in 0..d_a {
        for b in 0..d_a {
            let blk = map.apply(&linalg::block(m, di, a, b))?;
            out.view_mut((a * dout, b * dout), (dout, dout)).copy_from(&blk);
        }
    }
    Ok(out)
}

/// `(Λ ⊗ I)(M)` for an operator `M` on C^d_in ⊗ C^d_b.
pub fn apply_local_a_raw(map: &LocalMap, m: &CMatrix, d_b: usize) -> Result<CMatrix> {
    let di = map.d_in;
    if m.shape() != (di * d_b, di * d_b) {
        return Err(Error::dims("apply_local_A", format!("{0}x{0}", di * d_b), format!("{}x{}", m.nrows(), m.ncols())));
    }
    let dout = map.d_out;
    let n = dout * d_b;
    let mut out = CMatrix::from_element(n, n, ZERO);
    for k in 0..dout {
        for l in 0..dout {
            let row = map.transfer.row(k * dout + l);
            for r in 0..d_b {
                for s in 0..d_b {
                    let mut acc = ZERO;
                    for m_ in 0..di {
                        for n_ in 0..di {
                            acc += row[m_ * di + n_] * m[(m_ * d_b + r, n_ * d_b + s)];
                        }
                    }
                    out[(k * d_b + r, l * d_b + s)] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `(I ⊗ Λ)(s)`; output is on C^d_a ⊗ C^d_out and may be non-PSD.
pub fn apply_local_b(map: &LocalMap, s: &BipartiteState) -> Result<CMatrix> {
    if map.d_in != s.d_b() {
        return Err(Error::dims("apply_local_B", format!("map input dim {}", s.d_b()), map.d_in));
    }
    apply_local_b_raw(map, s.matrix(), s.d_a())
}

pub fn apply_local_a(map: &LocalMap, s: &BipartiteState) -> Result<CMatrix> {
    if map.d_in != s.d_a() {
        return Err(Error::dims("apply_local_A", format!("map input dim {}", s.d_a()), map.d_in));
    }
    apply_local_a_raw(map, s.matrix(), s.d_b())
}

/// `[I ⊗ Λ_B + Λ_A ⊗ I](s)`; both maps must preserve their dimension.
pub fn apply_local_sum(map_a: &LocalMap, map_b: &LocalMap, s: &BipartiteState) -> Result<CMatrix> {
    if map_a.d_in != s.d_a() || map_a.d_out != s.d_a() {
        return Err(Error::dims("apply_local_sum", format!("map_a {0}->{0}", s.d_a()), format!("{}->{}", map_a.d_in, map_a.d_out)));
    }
    if map_b.d_in != s.d_b() || map_b.d_out != s.d_b() {
        return Err(Error::dims("apply_local_sum", format!("map_b {0}->{0}", s.d_b()), format!("{}->{}", map_b.d_in, map_b.d_out)));
    }
    Ok(apply_local_a(map_a, s)? + apply_local_b(map_b, s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::*;
    use crate::linalg::{diag, tensor_product, Subsystem};
    use proptest::prelude::*;

    fn random_hp_map(seed: u64, d_in: usize, d_out: usize) -> LocalMap {
        let mut rng = rng(seed);
        let z = random_hermitian(&mut rng, d_in * d_out);
        map_of_choi(&ChoiMatrix::new(d_in, d_out, z).unwrap())
    }

    fn bell(d: usize) -> BipartiteState {
        let mut v = vec![ZERO; d * d];
        for i in 0..d {
            v[i * d + i] = c(1.0 / (d as f64).sqrt(), 0.0);
        }
        BipartiteState::new(d, d, linalg::outer(&v)).unwrap()
    }

    /// Entry-wise evaluation through the basis maps Λ_ijkl(|r⟩⟨s|) = |k⟩⟨l| δ_ir δ_js.
    fn apply_by_basis(map: &LocalMap, rho: &CMatrix) -> CMatrix {
        let (di, dout) = (map.d_in(), map.d_out());
        let mut out = CMatrix::zeros(dout, dout);
        for i in 0..di {
            for j in 0..di {
                for k in 0..dout {
                    for l in 0..dout {
                        out[(k, l)] += map.coefficient(k, l, i, j) * rho[(i, j)];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn identity_map_is_identity() {
        let mut rng = rng(1);
        let rho = random_density(&mut rng, 3);
        assert!(max_abs_diff(&LocalMap::identity(3).apply(&rho).unwrap(), &rho) < 1e-15);
    }

    #[test]
    fn trace_and_replace_outputs_target() {
        let mut rng = rng(2);
        let ket0 = diag(&[1.0, 0.0]);
        let map = LocalMap::trace_and_replace(2, &ket0).unwrap();
        let rho = random_density(&mut rng, 2);
        assert!(max_abs_diff(&map.apply(&rho).unwrap(), &ket0) < 1e-15);
    }

    #[test]
    fn apply_dimension_mismatch() {
        let err = LocalMap::identity(2).apply(&CMatrix::identity(3, 3)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn random_hp_map_keeps_hermitian_and_matches_basis_sum() {
        let mut rng = rng(3);
        for seed in 0..10 {
            let map = random_hp_map(seed, 3, 2);
            let h = random_hermitian(&mut rng, 3);
            let out = map.apply(&h).unwrap();
            assert!(linalg::hermiticity_defect(&out) < 1e-12);
            assert!(max_abs_diff(&out, &apply_by_basis(&map, &h)) < 1e-12);
        }
    }

    #[test]
    fn local_b_identity_and_product() {
        let mut rng = rng(4);
        let ra = random_density(&mut rng, 2);
        let rb = random_density(&mut rng, 3);
        let s = BipartiteState::new(2, 3, tensor_product(&ra, &rb)).unwrap();
        let same = apply_local_b(&LocalMap::identity(3), &s).unwrap();
        assert!(max_abs_diff(&same, s.matrix()) < 1e-15);
        let map = random_hp_map(5, 3, 2);
        let out = apply_local_b(&map, &s).unwrap();
        let expected = tensor_product(&ra, &map.apply(&rb).unwrap());
        assert!(max_abs_diff(&out, &expected) < 1e-12);
    }

    #[test]
    fn transpose_on_bell_gives_swap() {
        let out = apply_local_b(&LocalMap::transpose(2), &bell(2)).unwrap();
        let swap_half = linalg::swap_operator(2).unscale(2.0);
        assert!(max_abs_diff(&out, &swap_half) < 1e-15);
        // same thing via the partial-transpose routine
        let pt = bell(2).partial_transpose(Subsystem::B);
        assert!(max_abs_diff(&out, &pt) < 1e-15);
    }

    #[test]
    fn local_sum_examples() {
        let mut rng = rng(6);
        let s = BipartiteState::new(2, 2, random_density(&mut rng, 4)).unwrap();
        let id = LocalMap::identity(2);
        let zero = LocalMap::zero(2, 2);
        assert!(max_abs_diff(&apply_local_sum(&zero, &id, &s).unwrap(), s.matrix()) < 1e-15);
        let twice = apply_local_sum(&id, &id, &s).unwrap();
        assert!(max_abs_diff(&twice, &s.matrix().scale(2.0)) < 1e-15);
    }

    #[test]
    fn local_sum_matches_blockwise_oracle() {
        let mut rng = rng(7);
        let s = BipartiteState::new(2, 3, random_density(&mut rng, 6)).unwrap();
        let ma = random_hp_map(8, 2, 2);
        let mb = random_hp_map(9, 3, 3);
        let got = apply_local_sum(&ma, &mb, &s).unwrap();
        // A-side oracle: expand s in |m⟩⟨n| ⊗ |r⟩⟨s| and push Λ_A through each term
        let mut a_applied = CMatrix::zeros(6, 6);
        for m in 0..2 {
            for n in 0..2 {
                let mut emn = CMatrix::zeros(2, 2);
                emn[(m, n)] = ONE;
                let image = ma.apply(&emn).unwrap();
                for r in 0..3 {
                    for q in 0..3 {
                        let mut erq = CMatrix::zeros(3, 3);
                        erq[(r, q)] = s.component(m, n, r, q);
                        a_applied += tensor_product(&image, &erq);
                    }
                }
            }
        }
        let b_applied = apply_local_b(&mb, &s).unwrap();
        assert!(max_abs_diff(&got, &(a_applied + b_applied)) < 1e-12);
    }

    #[test]
    fn choi_of_identity_is_bell() {
        let z = choi_of_map(&LocalMap::identity(2));
        assert!(max_abs_diff(z.matrix(), bell(2).matrix()) < 1e-15);
        let back = map_of_choi(&z);
        assert!(max_abs_diff(back.transfer(), LocalMap::identity(2).transfer()) < 1e-15);
    }

    #[test]
    fn choi_of_trace_and_replace() {
        let ket0 = diag(&[1.0, 0.0]);
        let map = LocalMap::trace_and_replace(2, &ket0).unwrap();
        let z = choi_of_map(&map);
        // sum over basis: (1/2) Σ_rs |r⟩⟨s| ⊗ δ_rs |0⟩⟨0|
        let expected = tensor_product(&linalg::identity(2), &ket0).scale(0.5);
        assert!(max_abs_diff(z.matrix(), &expected) < 1e-15);
        let back = map_of_choi(&ChoiMatrix::new(2, 2, expected).unwrap());
        assert!(max_abs_diff(back.transfer(), map.transfer()) < 1e-15);
    }

    #[test]
    fn cp_map_has_psd_choi() {
        for seed in 0..5 {
            let map = LocalMap::random_cp(3, 2, 2, seed);
            let min = linalg::min_eigenvalue(choi_of_map(&map).matrix()).unwrap();
            assert!(min > -1e-12);
        }
    }

    #[test]
    fn compose_with_identity() {
        let map = random_hp_map(10, 2, 3);
        let left = compose(&LocalMap::identity(3), &map).unwrap();
        let right = compose(&map, &LocalMap::identity(2)).unwrap();
        assert!(max_abs_diff(left.transfer(), map.transfer()) < 1e-15);
        assert!(max_abs_diff(right.transfer(), map.transfer()) < 1e-15);
        assert!(compose(&map, &map).is_err());
    }

    #[test]
    fn compose_matches_double_application() {
        let f = random_hp_map(11, 3, 2);
        let g = random_hp_map(12, 2, 3);
        let fg = compose(&f, &g).unwrap();
        for r in 0..2 {
            for s in 0..2 {
                let mut e = CMatrix::zeros(2, 2);
                e[(r, s)] = ONE;
                let twice = f.apply(&g.apply(&e).unwrap()).unwrap();
                assert!(max_abs_diff(&fg.apply(&e).unwrap(), &twice) < 1e-12);
            }
        }
    }

    #[test]
    fn composition_of_positive_maps_is_sampled_positive() {
        let f = LocalMap::random_cp(2, 2, 3, 13);
        let g = LocalMap::random_cp(2, 2, 1, 14);
        let t = LocalMap::transpose(2);
        for m in [&f, &g, &t] {
            assert!(m.sampled_min_output_eigenvalue(100, 0) >= -1e-10);
        }
        for (a, b) in [(&f, &t), (&t, &g), (&t, &t)] {
            let comp = compose(a, b).unwrap();
            assert!(comp.sampled_min_output_eigenvalue(100, 0) >= -1e-10);
        }
    }

    #[test]
    fn rejects_non_hermiticity_preserving_transfer() {
        let mut t = CMatrix::zeros(4, 4);
        t[(0, 1)] = ONE;
        assert!(LocalMap::from_transfer(2, 2, t).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn choi_roundtrips(seed in any::<u64>(), di in 1usize..4, dout in 1usize..4) {
            let map = random_hp_map(seed, di, dout);
            let back = map_of_choi(&choi_of_map(&map));
            prop_assert!(max_abs_diff(back.transfer(), map.transfer()) < 1e-12);
            let z = choi_of_map(&map);
            let again = choi_of_map(&map_of_choi(&z));
            prop_assert!(max_abs_diff(again.matrix(), z.matrix()) < 1e-12);
        }

        #[test]
        fn hermitian_choi_maps_hermitian_to_hermitian(seed in any::<u64>()) {
            let map = random_hp_map(seed, 3, 3);
            let mut rng = rng(seed ^ 0xabc);
            let h = random_hermitian(&mut rng, 3);
            prop_assert!(linalg::hermiticity_defect(&map.apply(&h).unwrap()) < 1e-12);
            prop_assert!(map.hermiticity_defect() < 1e-12);
        }

        #[test]
        fn local_b_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = rng(seed);
            let s = BipartiteState::new(2, 2, random_density(&mut rng, 4)).unwrap();
            let m1 = random_hp_map(seed.wrapping_add(1), 2, 2);
            let m2 = random_hp_map(seed.wrapping_add(2), 2, 2);
            let combo = m1.scale(alpha).add(&m2.scale(beta)).unwrap();
            let lhs = apply_local_b(&combo, &s).unwrap();
            let rhs = apply_local_b(&m1, &s).unwrap().scale(alpha) + apply_local_b(&m2, &s).unwrap().scale(beta);
            prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }
    }
}
