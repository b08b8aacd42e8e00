//! Separability certificates: explicit product-state decompositions of a
//! target state, their construction from local maps, and an independent
//! verifier.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::{self, Verdict};
use crate::error::{Error, Result};
use crate::linalg::{self, BipartiteState, CMatrix, Subsystem};
use crate::maps::{choi_of_map, map_of_choi, ChoiMatrix, LocalMap};
use crate::states::{self, ProductEnsemble, ProductTerm};

/// Default reassembly tolerance (Frobenius norm).
pub const TOL_CERT: f64 = 1e-6;
/// Factor eigenvalues down to `-CLIP_FLOOR` are clipped to zero.
pub const CLIP_FLOOR: f64 = 1e-9;
/// Terms whose mapped factor has trace at or below this are dropped.
pub const TOL_ZERO_TRACE: f64 = 1e-12;
/// Verifier tolerance on factor traces and the weight sum.
pub const TOL_SIMPLEX: f64 = 1e-9;

/// How a decomposition was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Unique solution of the square linear system.
    Linear,
    /// Feasible point of the one-sided LMI.
    BasicSdp,
    /// Feasible point of the two-sided LMI.
    Enhanced,
    /// Closed-form construction from the normalized-eigenvalue criterion.
    Analytic,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Linear => "linear",
            Method::BasicSdp => "basic-sdp",
            Method::Enhanced => "enhanced",
            Method::Analytic => "analytic",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub method: Method,
    pub base: ProductEnsemble,
    /// Maps acting on subsystem A (enhanced only) and B, as Choi matrices.
    pub map_a: Option<ChoiMatrix>,
    pub map_b: ChoiMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub target_hash: String,
    pub dims: (usize, usize),
    /// Raw terms; validity is the verifier's business, not the type's.
    pub terms: Vec<ProductTerm>,
    pub provenance: Provenance,
    /// `‖σ − Σ p_i ρ_A^(i) ⊗ ρ_B^(i)‖_F` at build time.
    pub residual: f64,
    pub residual_tol: f64,
    pub clip_floor: f64,
    /// Largest eigenvalue magnitude removed by clipping.
    pub clipped: f64,
    /// Terms dropped for vanishing trace.
    pub dropped: usize,
}

impl Certificate {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn ensemble(&self) -> Result<ProductEnsemble> {
        ProductEnsemble::new(self.dims.0, self.dims.1, self.terms.clone())
    }
}

/// SHA-256 over the dimensions and the IEEE-754 bits of every entry,
/// row-major, real part first.
pub fn state_digest(d_a: usize, d_b: usize, m: &CMatrix) -> String {
    let mut h = Sha256::new();
    h.update(b"sepcert-state\x00");
    h.update((d_a as u64).to_le_bytes());
    h.update((d_b as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let z = m[(i, j)];
            h.update(z.re.to_bits().to_le_bytes());
            h.update(z.im.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn digest_of(state: &BipartiteState) -> String {
    state_digest(state.d_a(), state.d_b(), state.matrix())
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub residual_tol: f64,
    pub clip_floor: f64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            residual_tol: TOL_CERT,
            clip_floor: CLIP_FLOOR,
        }
    }
}

/// Term candidate before normalization: weight times unnormalized factor.
struct RawTerm {
    weight: f64,
    rho_a: CMatrix,
    rho_b: CMatrix,
}

#[derive(Default)]
struct Tally {
    clipped: f64,
    dropped: usize,
}

/// Splits `m = t·ρ` with `ρ` a density matrix, clipping eigenvalues in
/// `[-floor, 0)`. Returns `None` for vanishing trace.
fn normalize_factor(m: &CMatrix, index: usize, floor: f64, tally: &mut Tally) -> Result<Option<(f64, CMatrix)>> {
    let h = linalg::hermitian_part(m);
    let dec = linalg::eigh_unchecked(&h);
    if dec.min() < -floor {
        return Err(Error::NegativeFactor {
            term: index,
            min_eig: dec.min(),
        });
    }
    if dec.min() < 0.0 {
        tally.clipped = tally.clipped.max(-dec.min());
    }
    let clipped = dec.map_values(|x| x.max(0.0));
    let t = clipped.trace().re;
    if t <= TOL_ZERO_TRACE {
        tally.dropped += 1;
        return Ok(None);
    }
    Ok(Some((t, linalg::hermitian_part(&clipped.unscale(t)))))
}

fn finish(
    raw: Vec<RawTerm>,
    sigma: &BipartiteState,
    provenance: Provenance,
    tally: Tally,
    opts: &BuildOptions,
    merge: bool,
) -> Result<Certificate> {
    let total: f64 = raw.iter().map(|t| t.weight).sum();
    if raw.is_empty() || !(total > 0.0) {
        return Err(Error::InvalidEnsemble("every mapped term vanished".into()));
    }
    let terms: Vec<ProductTerm> = raw
        .into_iter()
        .map(|t| ProductTerm {
            weight: t.weight / total,
            rho_a: t.rho_a,
            rho_b: t.rho_b,
        })
        .collect();
    let (d_a, d_b) = sigma.dims();
    let mut ensemble = ProductEnsemble::new(d_a, d_b, terms)?;
    if merge {
        ensemble = ensemble.canonicalize(1e-13);
    }
    let residual = linalg::frobenius_norm(&(sigma.matrix() - ensemble.assemble_matrix()));
    if residual > opts.residual_tol {
        return Err(Error::ResidualTooLarge {
            residual,
            tol: opts.residual_tol,
        });
    }
    Ok(Certificate {
        target_hash: digest_of(sigma),
        dims: (d_a, d_b),
        terms: ensemble.terms().to_vec(),
        provenance,
        residual,
        residual_tol: opts.residual_tol,
        clip_floor: opts.clip_floor,
        clipped: tally.clipped,
        dropped: tally.dropped,
    })
}

fn check_base(base: &ProductEnsemble, map_b: &LocalMap, sigma: &BipartiteState) -> Result<()> {
    if map_b.d_in() != base.d_b() || map_b.d_out() != sigma.d_b() || base.d_a() != sigma.d_a() {
        return Err(Error::dims(
            "certificate base/map/target",
            format!("base ({}, k), map k->{}", sigma.d_a(), sigma.d_b()),
            format!("base ({}, {}), map {}->{}", base.d_a(), base.d_b(), map_b.d_in(), map_b.d_out()),
        ));
    }
    Ok(())
}

fn mapped_b_terms(base: &ProductEnsemble, map_b: &LocalMap, opts: &BuildOptions, tally: &mut Tally) -> Result<Vec<RawTerm>> {
    let mut out = Vec::with_capacity(base.len());
    for (i, term) in base.terms().iter().enumerate() {
        let m = map_b.apply(&term.rho_b)?;
        if let Some((t, rho_b)) = normalize_factor(&m, i, opts.clip_floor, tally)? {
            out.push(RawTerm {
                weight: term.weight * t,
                rho_a: term.rho_a.clone(),
                rho_b,
            });
        }
    }
    Ok(out)
}

/// Decomposition `σ = Σ_i p_i ρ_A^(i) ⊗ Λ(ρ_B^(i))` for a map `Λ` that is
/// positive on the base ensemble.
pub fn build_from_map(
    base: &ProductEnsemble,
    map_b: &LocalMap,
    sigma: &BipartiteState,
    method: Method,
    opts: &BuildOptions,
) -> Result<Certificate> {
    check_base(base, map_b, sigma)?;
    let mut tally = Tally::default();
    let raw = mapped_b_terms(base, map_b, opts, &mut tally)?;
    let provenance = Provenance {
        method,
        base: base.clone(),
        map_a: None,
        map_b: choi_of_map(map_b),
    };
    finish(raw, sigma, provenance, tally, opts, false)
}

/// Decomposition `σ = Σ_i p_i [ρ_A^(i) ⊗ Λ_B(ρ_B^(i)) + Λ_A(ρ_A^(i)) ⊗ ρ_B^(i)]`.
pub fn build_from_enhanced(
    base: &ProductEnsemble,
    map_a: &LocalMap,
    map_b: &LocalMap,
    sigma: &BipartiteState,
    opts: &BuildOptions,
) -> Result<Certificate> {
    check_base(base, map_b, sigma)?;
    if map_a.d_in() != base.d_a() || map_a.d_out() != sigma.d_a() || base.d_b() != sigma.d_b() {
        return Err(Error::dims(
            "certificate map_a",
            format!("{0}->{0}", sigma.d_a()),
            format!("{}->{}", map_a.d_in(), map_a.d_out()),
        ));
    }
    let mut tally = Tally::default();
    let mut raw = mapped_b_terms(base, map_b, opts, &mut tally)?;
    let offset = base.len();
    for (i, term) in base.terms().iter().enumerate() {
        let m = map_a.apply(&term.rho_a)?;
        if let Some((t, rho_a)) = normalize_factor(&m, offset + i, opts.clip_floor, &mut tally)? {
            raw.push(RawTerm {
                weight: term.weight * t,
                rho_a,
                rho_b: term.rho_b.clone(),
            });
        }
    }
    let provenance = Provenance {
        method: Method::Enhanced,
        base: base.clone(),
        map_a: Some(choi_of_map(map_a)),
        map_b: choi_of_map(map_b),
    };
    // terms that reappear on both sides are merged
    finish(raw, sigma, provenance, tally, opts, true)
}

/// The map `Λ'` with `(I ⊗ Λ')(ρ(1/(d+1))) = σ` whenever the
/// normalized-eigenvalue criterion holds; completely positive in that case.
///
/// With `σ̃` as in [`criteria::tilde_sigma`], the Choi matrix of the unital
/// map `Λ` sending the boundary isotropic state to `σ̃` is
/// `(d+1)(σ̃ − 𝟙/(d(d+1)))`, and `Λ'(X) = d·σ_B^{1/2} Λ(X) σ_B^{1/2}`.
pub fn corollary1_map(sigma: &BipartiteState) -> Result<LocalMap> {
    let report = criteria::corollary1_check(sigma)?;
    if report.verdict != Verdict::Separable {
        return Err(Error::CriterionNotMet {
            statistic: report.statistic.unwrap_or(f64::NAN),
            threshold: report.threshold,
        });
    }
    let d = sigma.d_a();
    let df = d as f64;
    let mut z = criteria::tilde_sigma(sigma)?;
    let shift = criteria::corollary1_threshold(d);
    for i in 0..d * d {
        z[(i, i)] -= linalg::c(shift, 0.0);
    }
    let choi = ChoiMatrix::new(d, d, linalg::hermitian_part(&z.scale(df + 1.0)))?;
    let root = linalg::psd_power(&sigma.partial_trace(Subsystem::A), 0.5, 0.0)?;
    Ok(map_of_choi(&choi).conjugate_output(&root)?.scale(df))
}

/// Closed-form certificate for states passing the normalized-eigenvalue
/// criterion, over the `4^d + d`-term decomposition of `ρ(1/(d+1))`.
pub fn build_corollary1(sigma: &BipartiteState, opts: &BuildOptions) -> Result<Certificate> {
    let map = corollary1_map(sigma)?;
    let base = states::isotropic_base_ensemble(sigma.d_a())?;
    build_from_map(&base, &map, sigma, Method::Analytic, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub passed: bool,
    pub residual: f64,
    pub min_factor_eigenvalue: f64,
    pub weight_sum: f64,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Recomputes every certificate invariant from the raw terms: factor
/// Hermiticity, positivity and unit trace, the weight simplex, the target
/// digest, and the reassembly residual against `sigma`.
pub fn verify_certificate(cert: &Certificate, sigma: &BipartiteState, tol: f64) -> VerificationReport {
    let mut checks = Vec::new();
    let mut push = |name: &str, passed: bool, detail: String| {
        checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        })
    };
    let (d_a, d_b) = sigma.dims();
    let dims_ok = cert.dims == (d_a, d_b);
    push(
        "dimensions",
        dims_ok,
        format!("certificate {:?}, state ({d_a}, {d_b})", cert.dims),
    );
    let digest = digest_of(sigma);
    push(
        "target digest",
        digest == cert.target_hash,
        format!("state {digest}, certificate {}", cert.target_hash),
    );
    push("non-empty", !cert.terms.is_empty(), format!("{} terms", cert.terms.len()));

    let mut min_eig = f64::INFINITY;
    let mut factor_issues = Vec::new();
    let mut weight_sum = 0.0;
    let mut bad_weights = Vec::new();
    let n = d_a * d_b;
    let mut acc = CMatrix::zeros(n, n);
    for (i, t) in cert.terms.iter().enumerate() {
        if !(t.weight > 0.0) || !t.weight.is_finite() {
            bad_weights.push(i);
        }
        weight_sum += t.weight;
        for (label, f, d) in [("A", &t.rho_a, d_a), ("B", &t.rho_b, d_b)] {
            if f.shape() != (d, d) {
                factor_issues.push(format!("term {i} {label}: shape {:?}", f.shape()));
                continue;
            }
            let herm = linalg::hermiticity_defect(f);
            if herm > TOL_SIMPLEX {
                factor_issues.push(format!("term {i} {label}: Hermiticity defect {herm:.2e}"));
            }
            let e = linalg::min_eigenvalue_unchecked(f);
            min_eig = min_eig.min(e);
            if e < -CLIP_FLOOR {
                factor_issues.push(format!("term {i} {label}: eigenvalue {e:.3e}"));
            }
            let tr = f.trace();
            if (tr.re - 1.0).abs() > TOL_SIMPLEX || tr.im.abs() > TOL_SIMPLEX {
                factor_issues.push(format!("term {i} {label}: trace {:.12}", tr.re));
            }
        }
        if dims_ok && t.rho_a.shape() == (d_a, d_a) && t.rho_b.shape() == (d_b, d_b) {
            acc += linalg::tensor_product(&t.rho_a, &t.rho_b).scale(t.weight);
        }
    }
    push(
        "factors are density matrices",
        factor_issues.is_empty(),
        if factor_issues.is_empty() {
            format!("min eigenvalue {min_eig:.3e}")
        } else {
            factor_issues.join("; ")
        },
    );
    push(
        "weights positive",
        bad_weights.is_empty(),
        if bad_weights.is_empty() {
            format!("{} positive weights", cert.terms.len())
        } else {
            format!("non-positive weights at {bad_weights:?}")
        },
    );
    push(
        "weights sum to one",
        (weight_sum - 1.0).abs() <= TOL_SIMPLEX,
        format!("sum {weight_sum:.15}"),
    );
    let residual = if dims_ok {
        linalg::frobenius_norm(&(sigma.matrix() - acc))
    } else {
        f64::INFINITY
    };
    push(
        "reassembly residual",
        residual <= tol,
        format!("{residual:.3e} (tolerance {tol:.1e})"),
    );
    let passed = checks.iter().all(|c| c.passed);
    VerificationReport {
        passed,
        residual,
        min_factor_eigenvalue: min_eig,
        weight_sum,
        checks,
    }
}
