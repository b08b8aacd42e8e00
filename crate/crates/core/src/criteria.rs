//! Closed-form separability tests: the normalized-eigenvalue criterion, the
//! Gurvits–Barnum ball and the partial-transpose test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, BipartiteState, CMatrix, Subsystem, TOL_PSD};
use crate::states;

/// Eigenvalue floor below which `σ_B` is treated as singular.
pub const EPS_INV: f64 = 1e-10;
/// Absolute slack when comparing a statistic against its threshold, so that
/// states built exactly on a boundary are not lost to rounding.
pub const TOL_BOUNDARY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Separable,
    Entangled,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Separable => "Separable",
            Verdict::Entangled => "Entangled",
            Verdict::Inconclusive => "Inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Criterion {
    /// `λ_min(σ̃) ≥ 1/(d(d+1))`.
    Eigenvalue,
    /// `‖σ − 𝟙/d²‖²_F ≤ 1/(d²(d²−1))`.
    GurvitsBarnum,
    /// `σ^{T_B} ⪰ 0`.
    Ppt,
}

impl Criterion {
    pub fn id(self) -> &'static str {
        match self {
            Criterion::Eigenvalue => "eig",
            Criterion::GurvitsBarnum => "gb",
            Criterion::Ppt => "ppt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub criterion: Criterion,
    pub verdict: Verdict,
    /// `None` when the statistic is undefined (singular marginal).
    pub statistic: Option<f64>,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

fn square_dim(sigma: &BipartiteState, what: &str) -> Result<usize> {
    if sigma.d_a() != sigma.d_b() {
        return Err(Error::Unsupported(format!(
            "{what} needs equal local dimensions, got {}x{}",
            sigma.d_a(),
            sigma.d_b()
        )));
    }
    Ok(sigma.d_a())
}

/// `σ̃ = (1/d)(𝟙 ⊗ σ_B^{−1/2}) σ (𝟙 ⊗ σ_B^{−1/2})`, whose B-marginal is `𝟙/d`.
pub fn tilde_sigma(sigma: &BipartiteState) -> Result<CMatrix> {
    let d = square_dim(sigma, "tilde_sigma")?;
    let sigma_b = sigma.partial_trace(Subsystem::A);
    let inv_sqrt = linalg::psd_power(&sigma_b, -0.5, EPS_INV)?;
    let l = linalg::tensor_product(&linalg::identity(d), &inv_sqrt);
    let t = &l * sigma.matrix() * &l;
    Ok(linalg::hermitian_part(&t).unscale(d as f64))
}

pub fn corollary1_threshold(d: usize) -> f64 {
    1.0 / (d * (d + 1)) as f64
}

/// Separable when the smallest eigenvalue of `σ̃` reaches `1/(d(d+1))`;
/// never reports `Entangled`.
pub fn corollary1_check(sigma: &BipartiteState) -> Result<CriterionReport> {
    let d = square_dim(sigma, "the eigenvalue criterion")?;
    let threshold = corollary1_threshold(d);
    match tilde_sigma(sigma) {
        Ok(t) => {
            let stat = linalg::min_eigenvalue_unchecked(&t);
            Ok(CriterionReport {
                criterion: Criterion::Eigenvalue,
                verdict: if stat >= threshold - TOL_BOUNDARY {
                    Verdict::Separable
                } else {
                    Verdict::Inconclusive
                },
                statistic: Some(stat),
                threshold,
                note: None,
            })
        }
        Err(Error::SingularMarginal { min_eig }) => Ok(CriterionReport {
            criterion: Criterion::Eigenvalue,
            verdict: Verdict::Inconclusive,
            statistic: None,
            threshold,
            note: Some(format!("reduced state on B is singular (min eigenvalue {min_eig:.3e})")),
        }),
        Err(e) => Err(e),
    }
}

pub fn gb_threshold(d: usize) -> f64 {
    let d2 = (d * d) as f64;
    1.0 / (d2 * (d2 - 1.0))
}

/// Squared Frobenius distance to the maximally mixed state.
pub fn gb_statistic(sigma: &BipartiteState) -> f64 {
    let n = sigma.dim();
    let centered = sigma.matrix() - linalg::identity(n).unscale(n as f64);
    linalg::frobenius_norm(&centered).powi(2)
}

pub fn gurvits_barnum_check(sigma: &BipartiteState) -> Result<CriterionReport> {
    let d = square_dim(sigma, "the Gurvits–Barnum ball")?;
    let threshold = gb_threshold(d);
    let stat = gb_statistic(sigma);
    Ok(CriterionReport {
        criterion: Criterion::GurvitsBarnum,
        verdict: if stat <= threshold + TOL_BOUNDARY {
            Verdict::Separable
        } else {
            Verdict::Inconclusive
        },
        statistic: Some(stat),
        threshold,
        note: None,
    })
}

/// Largest admissible `ε` for [`sigma_epsilon`]: `1 − d/(d+1)`.
pub fn sigma_epsilon_max(d: usize) -> f64 {
    1.0 / (d + 1) as f64
}

/// The state with spectrum `(ε + 1/(d(d+1)), λ, …, λ)`,
/// `λ = 1/(d(d+1)) + δ`, `δ = (1 − ε − d/(d+1))/(d² − 1)`.
///
/// The distinguished eigenvector is `|ψ⁺⟩`, so the B-marginal is `𝟙/d` and
/// `σ̃ = σ`; in a product eigenbasis the normalized spectrum would differ.
pub fn sigma_epsilon(d: usize, eps: f64) -> Result<BipartiteState> {
    check_epsilon(d, eps)?;
    let delta = sigma_epsilon_delta(d, eps);
    // isotropic form with mixing weight ε − δ (may be negative)
    states::isotropic_matrix(d, eps - delta)
}

fn check_epsilon(d: usize, eps: f64) -> Result<()> {
    if d < 2 {
        return Err(Error::OutOfRange {
            name: "d",
            value: d as f64,
            range: "d >= 2".into(),
        });
    }
    let max = sigma_epsilon_max(d);
    if !(0.0..=max + 1e-15).contains(&eps) {
        return Err(Error::OutOfRange {
            name: "eps",
            value: eps,
            range: format!("[0, {max}]"),
        });
    }
    Ok(())
}

fn sigma_epsilon_delta(d: usize, eps: f64) -> f64 {
    let df = d as f64;
    ((1.0 - eps - df / (df + 1.0)) / (df * df - 1.0)).max(0.0)
}

/// `‖σ(ε) − 𝟙/d²‖²_F − 1/(d²(d²−1))`, from the spectrum of `σ(ε)`.
pub fn gb_gap(d: usize, eps: f64) -> Result<f64> {
    check_epsilon(d, eps)?;
    let df = d as f64;
    let n = df * df;
    let lambda = 1.0 / (df * (df + 1.0)) + sigma_epsilon_delta(d, eps);
    let top = eps + 1.0 / (df * (df + 1.0));
    let dist = (top - 1.0 / n).powi(2) + (n - 1.0) * (lambda - 1.0 / n).powi(2);
    Ok(dist - gb_threshold(d))
}

/// Partial-transpose test. Negative statistic beyond `TOL_PSD` proves
/// entanglement; a non-negative one proves separability when `dA·dB ≤ 6`.
pub fn ppt_check(sigma: &BipartiteState) -> CriterionReport {
    let stat = linalg::min_eigenvalue_unchecked(&sigma.partial_transpose(Subsystem::B));
    let verdict = if stat < -TOL_PSD {
        Verdict::Entangled
    } else if sigma.dim() <= 6 {
        Verdict::Separable
    } else {
        Verdict::Inconclusive
    };
    CriterionReport {
        criterion: Criterion::Ppt,
        verdict,
        statistic: Some(stat),
        threshold: -TOL_PSD,
        note: None,
    }
}

pub fn run(criterion: Criterion, sigma: &BipartiteState) -> Result<CriterionReport> {
    match criterion {
        Criterion::Eigenvalue => corollary1_check(sigma),
        Criterion::GurvitsBarnum => gurvits_barnum_check(sigma),
        Criterion::Ppt => Ok(ppt_check(sigma)),
    }
}
