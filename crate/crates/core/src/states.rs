//! Base and target states: product ensembles, the isotropic family and its
//! phase-vector decomposition, random separable states, and the
//! faithfulness test for base states.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, c, BipartiteState, CMatrix, Subsystem, C64, ONE};
use crate::maps::{map_of_choi, ChoiMatrix};

/// Tolerance on ensemble weights and factor traces.
pub const TOL_ENSEMBLE: f64 = 1e-10;
/// Default threshold on σ_min(ρ̌₀) for faithfulness.
pub const TOL_FAITHFUL: f64 = 1e-8;
/// Largest local dimension for which the 4^d phase enumeration is built.
pub const MAX_PHASE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct ProductTerm {
    pub weight: f64,
    pub rho_a: CMatrix,
    pub rho_b: CMatrix,
}

/// Weighted list of product states `Σ_i p_i ρ_A^(i) ⊗ ρ_B^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductEnsemble {
    d_a: usize,
    d_b: usize,
    terms: Vec<ProductTerm>,
}

fn check_density(m: &CMatrix, d: usize, what: &str, i: usize) -> Result<()> {
    if m.shape() != (d, d) {
        return Err(Error::InvalidEnsemble(format!(
            "term {i}: {what} is {}x{}, expected {d}x{d}",
            m.nrows(),
            m.ncols()
        )));
    }
    let defect = linalg::hermiticity_defect(m);
    if defect > linalg::TOL_HERM {
        return Err(Error::InvalidEnsemble(format!("term {i}: {what} not Hermitian (defect {defect:.2e})")));
    }
    let min = linalg::min_eigenvalue_unchecked(m);
    if min < -TOL_ENSEMBLE {
        return Err(Error::InvalidEnsemble(format!("term {i}: {what} has eigenvalue {min:.3e}")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TOL_ENSEMBLE || tr.im.abs() > TOL_ENSEMBLE {
        return Err(Error::InvalidEnsemble(format!("term {i}: {what} has trace {:.12}", tr.re)));
    }
    Ok(())
}

impl ProductEnsemble {
    pub fn new(d_a: usize, d_b: usize, terms: Vec<ProductTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidEnsemble("no terms".into()));
        }
        let mut total = 0.0;
        for (i, t) in terms.iter().enumerate() {
            if !(t.weight > 0.0) || !t.weight.is_finite() {
                return Err(Error::InvalidEnsemble(format!("term {i}: weight {} is not positive", t.weight)));
            }
            total += t.weight;
            check_density(&t.rho_a, d_a, "rho_a", i)?;
            check_density(&t.rho_b, d_b, "rho_b", i)?;
        }
        if (total - 1.0).abs() > TOL_ENSEMBLE {
            return Err(Error::InvalidEnsemble(format!("weights sum to {total:.12}")));
        }
        Ok(ProductEnsemble { d_a, d_b, terms })
    }

    pub fn d_a(&self) -> usize {
        self.d_a
    }

    pub fn d_b(&self) -> usize {
        self.d_b
    }

    pub fn terms(&self) -> &[ProductTerm] {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Caratheodory bound `d_A² d_B² + 1`.
    pub fn caratheodory_bound(&self) -> usize {
        self.d_a * self.d_a * self.d_b * self.d_b + 1
    }

    /// `Σ_i p_i ρ_A^(i) ⊗ ρ_B^(i)` without validation.
    pub fn assemble_matrix(&self) -> CMatrix {
        let n = self.d_a * self.d_b;
        let mut out = CMatrix::zeros(n, n);
        for t in &self.terms {
            out += linalg::tensor_product(&t.rho_a, &t.rho_b).scale(t.weight);
        }
        out
    }

    pub fn assemble(&self) -> Result<BipartiteState> {
        BipartiteState::new(self.d_a, self.d_b, linalg::hermitian_part(&self.assemble_matrix()))
    }

    /// Merges terms whose factors agree entrywise to `tol`.
    pub fn canonicalize(&self, tol: f64) -> ProductEnsemble {
        let mut merged: Vec<ProductTerm> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            match merged.iter_mut().find(|m| {
                linalg::max_abs(&(&m.rho_a - &t.rho_a)) <= tol && linalg::max_abs(&(&m.rho_b - &t.rho_b)) <= tol
            }) {
                Some(m) => m.weight += t.weight,
                None => merged.push(t.clone()),
            }
        }
        ProductEnsemble {
            d_a: self.d_a,
            d_b: self.d_b,
            terms: merged,
        }
    }
}

/// A vector of fourth roots of unity indexing the phase states
/// `|Φ_z⟩ = d^{-1/2} Σ_j z_j |j⟩`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseVector {
    /// Exponents `k_j` with `z_j = i^{k_j}`.
    exponents: Vec<u8>,
}

const FOURTH_ROOTS: [C64; 4] = [
    C64::new(1.0, 0.0),
    C64::new(0.0, 1.0),
    C64::new(-1.0, 0.0),
    C64::new(0.0, -1.0),
];

impl PhaseVector {
    /// The `index`-th of the `4^d` vectors (base-4 digits, first entry most
    /// significant).
    pub fn from_index(d: usize, index: usize) -> Self {
        let mut exponents = vec![0u8; d];
        let mut rest = index;
        for j in (0..d).rev() {
            exponents[j] = (rest % 4) as u8;
            rest /= 4;
        }
        PhaseVector { exponents }
    }

    pub fn all(d: usize) -> impl Iterator<Item = PhaseVector> {
        (0..4usize.pow(d as u32)).map(move |i| PhaseVector::from_index(d, i))
    }

    pub fn entries(&self) -> Vec<C64> {
        self.exponents.iter().map(|&k| FOURTH_ROOTS[k as usize]).collect()
    }

    pub fn conj(&self) -> PhaseVector {
        PhaseVector {
            exponents: self.exponents.iter().map(|&k| (4 - k) % 4).collect(),
        }
    }

    /// `|Φ_z⟩⟨Φ_z|`.
    pub fn projector(&self) -> CMatrix {
        let d = self.exponents.len() as f64;
        let v: Vec<C64> = self.entries().into_iter().map(|z| z / d.sqrt()).collect();
        linalg::outer(&v)
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::OutOfRange {
            name: "d",
            value: d as f64,
            range: "d >= 2".into(),
        });
    }
    Ok(())
}

pub fn maximally_entangled(d: usize) -> Result<BipartiteState> {
    check_dim(d)?;
    // entries 1/d at (ii, jj), built directly so they are exact
    let n = d * d;
    let mut m = CMatrix::zeros(n, n);
    let entry = c(1.0 / d as f64, 0.0);
    for i in 0..d {
        for j in 0..d {
            m[(i * d + i, j * d + j)] = entry;
        }
    }
    BipartiteState::new(d, d, m)
}

/// `ρ(λ) = (1 − λ)·𝟙/d² + λ|ψ⁺⟩⟨ψ⁺|`.
pub fn isotropic_state(d: usize, lambda: f64) -> Result<BipartiteState> {
    check_dim(d)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::OutOfRange {
            name: "lambda",
            value: lambda,
            range: "[0, 1]".into(),
        });
    }
    isotropic_matrix(d, lambda)
}

/// Isotropic combination without the range check on `lambda`; used where a
/// negative mixing weight still yields a state.
pub(crate) fn isotropic_matrix(d: usize, lambda: f64) -> Result<BipartiteState> {
    let n = d * d;
    let psi = maximally_entangled(d)?;
    let mixed = CMatrix::identity(n, n).scale((1.0 - lambda) / n as f64);
    BipartiteState::new(d, d, mixed + psi.matrix().scale(lambda))
}

/// Product decomposition of the boundary isotropic state `ρ(1/(d+1))`:
/// `4^d` phase terms of weight `d/((d+1)4^d)` and `d` basis terms of weight
/// `1/((d+1)d)`.
pub fn isotropic_base_ensemble(d: usize) -> Result<ProductEnsemble> {
    check_dim(d)?;
    if d > MAX_PHASE_DIM {
        return Err(Error::Unsupported(format!(
            "phase enumeration has 4^{d} terms; refusing d > {MAX_PHASE_DIM}"
        )));
    }
    let df = d as f64;
    let count = 4usize.pow(d as u32);
    let phase_weight = df / ((df + 1.0) * count as f64);
    let basis_weight = 1.0 / ((df + 1.0) * df);
    let mut terms = Vec::with_capacity(count + d);
    for z in PhaseVector::all(d) {
        terms.push(ProductTerm {
            weight: phase_weight,
            rho_a: z.projector(),
            rho_b: z.conj().projector(),
        });
    }
    for j in 0..d {
        let mut e = CMatrix::zeros(d, d);
        e[(j, j)] = ONE;
        terms.push(ProductTerm {
            weight: basis_weight,
            rho_a: e.clone(),
            rho_b: e,
        });
    }
    ProductEnsemble::new(d, d, terms)
}

fn random_density(rng: &mut impl Rng, d: usize) -> CMatrix {
    let a = CMatrix::from_fn(d, d, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let m = linalg::hermitian_part(&(a.adjoint() * a));
    let t = m.trace().re;
    m.unscale(t)
}

fn random_pure(rng: &mut impl Rng, d: usize) -> CMatrix {
    let v: Vec<C64> = (0..d)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let v: Vec<C64> = v.into_iter().map(|z| z / norm).collect();
    linalg::outer(&v)
}

fn flat_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Random separable ensemble with full-rank local factors `A†A / Tr(A†A)`
/// and weights drawn uniformly from the simplex.
pub fn random_separable(d_a: usize, d_b: usize, n_terms: usize, seed: u64) -> Result<ProductEnsemble> {
    let bound = d_a * d_a * d_b * d_b + 1;
    if n_terms == 0 || n_terms > bound {
        return Err(Error::OutOfRange {
            name: "n_terms",
            value: n_terms as f64,
            range: format!("[1, {bound}]"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = flat_simplex(&mut rng, n_terms);
    let terms = weights
        .into_iter()
        .map(|weight| ProductTerm {
            weight,
            rho_a: random_density(&mut rng, d_a),
            rho_b: random_density(&mut rng, d_b),
        })
        .collect();
    ProductEnsemble::new(d_a, d_b, terms)
}

/// Random pure product state as a one-term ensemble.
pub fn random_pure_product(d_a: usize, d_b: usize, seed: u64) -> Result<ProductEnsemble> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_a = random_pure(&mut rng, d_a);
    let rho_b = random_pure(&mut rng, d_b);
    ProductEnsemble::new(d_a, d_b, vec![ProductTerm { weight: 1.0, rho_a, rho_b }])
}

/// Random state `G G† / Tr(G G†)` with `G` a `d_A d_B × rank` complex
/// Gaussian matrix.
pub fn random_state(d_a: usize, d_b: usize, rank: usize, seed: u64) -> Result<BipartiteState> {
    let n = d_a * d_b;
    if rank == 0 || rank > n {
        return Err(Error::OutOfRange {
            name: "rank",
            value: rank as f64,
            range: format!("[1, {n}]"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = CMatrix::from_fn(n, rank, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    BipartiteState::from_unnormalized(d_a, d_b, &(&g * g.adjoint()))
}

/// Convex combination `p·a + (1 - p)·b`.
pub fn mix(a: &BipartiteState, b: &BipartiteState, p: f64) -> Result<BipartiteState> {
    if a.dims() != b.dims() {
        return Err(Error::dims("mix", format!("{:?}", a.dims()), format!("{:?}", b.dims())));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::OutOfRange {
            name: "p",
            value: p,
            range: "[0, 1]".into(),
        });
    }
    let m = a.matrix().scale(p) + b.matrix().scale(1.0 - p);
    BipartiteState::from_unnormalized(a.d_a(), a.d_b(), &m)
}

/// `ρ̌₀ = (E ρ₀)^{T_B} E`.
pub fn check_operator(rho0: &BipartiteState) -> Result<CMatrix> {
    let (d_a, d_b) = rho0.dims();
    if d_a != d_b {
        return Err(Error::Unsupported(format!(
            "check operator needs equal local dimensions, got ({d_a}, {d_b})"
        )));
    }
    let e = linalg::swap_operator(d_a);
    let pt = linalg::partial_transpose(&(&e * rho0.matrix()), d_a, d_a, Subsystem::B)?;
    Ok(pt * e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Faithfulness {
    pub faithful: bool,
    pub sigma_min: f64,
}

/// Faithfulness of a base state: σ_min(ρ̌₀) > `tol` for equal dimensions.
///
/// For `d_A ≠ d_B` the state is read as the Choi matrix of a map
/// `Λ₀: B(H_A) → B(H_B)` and `Λ ↦ (I ⊗ Λ)(ρ₀)` is one-to-one exactly when
/// `Λ₀` is onto, so the test is on the `d_B²`-th singular value of the
/// transfer matrix of `Λ₀` (zero when `d_B > d_A`).
pub fn is_faithful(rho0: &BipartiteState, tol: f64) -> Result<Faithfulness> {
    let (d_a, d_b) = rho0.dims();
    let sigma_min = if d_a == d_b {
        linalg::smallest_singular_value(&check_operator(rho0)?)?
    } else if d_b > d_a {
        0.0
    } else {
        let choi = ChoiMatrix::new(d_a, d_b, rho0.matrix().clone())?;
        let t = map_of_choi(&choi);
        let sv = linalg::singular_values(t.transfer())?;
        sv[d_b * d_b - 1] / d_a as f64
    };
    Ok(Faithfulness {
        faithful: sigma_min > tol,
        sigma_min,
    })
}
