//! Separability detection by local maps.
//!
//! A base state `ρ₀ = Σ_i p_i ρ_A^(i) ⊗ ρ_B^(i)` with a known decomposition
//! certifies every target `σ = (I ⊗ Λ)(ρ₀)` for which `Λ(ρ_B^(i)) ⪰ 0` on all
//! ensemble members. The map is parametrized by the real coordinates of its
//! Hermitian Choi matrix, the equality `(I ⊗ Λ)(ρ₀) = σ` becomes a real linear
//! system, and ensemble positivity becomes a block LMI.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificate::{self, BuildOptions, Certificate, Method};
use crate::criteria::{self, Verdict};
use crate::error::{Error, Result};
use crate::linalg::{self, BipartiteState, CMatrix, RMatrix};
use crate::maps::{apply_local_a_raw, apply_local_b_raw, map_of_choi, ChoiMatrix, LocalMap};
use crate::sdp::{self, FeasStatus, LmiBlock, LmiProblem, SolverOptions};
use crate::states::{self, ProductEnsemble, TOL_FAITHFUL};

/// Eigenvalue floor for ensemble positivity of a uniquely determined map.
pub const EPS_POS: f64 = 1e-9;
/// Random inputs used for the sampled positivity guard when pruning.
pub const PRUNE_SAMPLES: usize = 100;

/// A separable state together with a product decomposition of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Base {
    ensemble: ProductEnsemble,
    state: BipartiteState,
}

impl Base {
    pub fn new(ensemble: ProductEnsemble) -> Result<Self> {
        let state = ensemble.assemble()?;
        Ok(Base { ensemble, state })
    }

    pub fn ensemble(&self) -> &ProductEnsemble {
        &self.ensemble
    }

    pub fn state(&self) -> &BipartiteState {
        &self.state
    }

    /// Faithfulness of the assembled state.
    pub fn faithfulness(&self) -> Result<states::Faithfulness> {
        states::is_faithful(&self.state, TOL_FAITHFUL)
    }
}

/// Random separable base on `C^d ⊗ C^d` with full-rank factors.
pub fn random_base(d: usize, n_terms: usize, seed: u64) -> Result<Base> {
    Base::new(states::random_separable(d, d, n_terms, seed)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Separable,
    Inconclusive,
}

impl std::fmt::Display for Status {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Status::Separable => "Separable",
            Status::Inconclusive => "Inconclusive",
        })
    }
}

/// What happened on one base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub label: String,
    pub method: Method,
    pub status: Status,
    pub base_terms: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Reduced variable count after eliminating the equalities.
    pub nullity: usize,
    pub equality_residual: f64,
    /// Smallest eigenvalue over the ensemble blocks, normalized.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    pub iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub status: Status,
    pub certificate: Option<Certificate>,
    pub base: Option<Base>,
    pub method: Option<Method>,
    pub trials: Vec<Trial>,
    pub notes: Vec<String>,
}

impl DetectionOutcome {
    pub fn is_separable(&self) -> bool {
        self.status == Status::Separable
    }

    fn from_trial(trial: Trial, found: Option<(Base, Certificate)>, notes: Vec<String>) -> Self {
        let method = trial.method;
        match found {
            Some((base, cert)) => DetectionOutcome {
                status: Status::Separable,
                certificate: Some(cert),
                base: Some(base),
                method: Some(method),
                trials: vec![trial],
                notes,
            },
            None => DetectionOutcome {
                status: Status::Inconclusive,
                certificate: None,
                base: None,
                method: None,
                trials: vec![trial],
                notes,
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct DetectOptions {
    pub solver: SolverOptions,
    pub eps_pos: f64,
    pub build: BuildOptions,
    /// Tolerance the final certificate must verify at.
    pub verify_tol: f64,
}

impl Default for DetectOptions {
    fn default() -> Self {
        DetectOptions {
            solver: SolverOptions::default(),
            eps_pos: EPS_POS,
            build: BuildOptions::default(),
            verify_tol: certificate::TOL_CERT,
        }
    }
}

/// Real equality system `C x = b` for `(I ⊗ Λ)(ρ₀) = σ` in Choi coordinates.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: RMatrix,
    pub rhs: DVector<f64>,
    /// Input and output dimension of the unknown map.
    pub d_in: usize,
    pub d_out: usize,
}

fn basis_maps(d_in: usize, d_out: usize) -> Vec<LocalMap> {
    linalg::hermitian_basis(d_in * d_out)
        .into_iter()
        .map(|h| map_of_choi(&ChoiMatrix::new(d_in, d_out, h).expect("basis elements are Hermitian")))
        .collect()
}

/// The map whose Choi matrix has coordinates `x`.
pub fn map_from_coords(d_in: usize, d_out: usize, x: &[f64]) -> LocalMap {
    let z = linalg::real_to_hermitian(x, d_in * d_out);
    map_of_choi(&ChoiMatrix::new(d_in, d_out, z).expect("coordinates give a Hermitian matrix"))
}

fn check_dims(base: &BipartiteState, target: &BipartiteState) -> Result<()> {
    if base.d_a() != target.d_a() {
        return Err(Error::dims(
            "base/target",
            format!("base A dimension {}", target.d_a()),
            base.d_a(),
        ));
    }
    Ok(())
}

/// Equality system over the `(d_in·d_out)²` Choi coordinates of a map from
/// the base's B-factor to the target's B-factor.
pub fn assemble_linear_system(base: &BipartiteState, target: &BipartiteState) -> Result<LinearSystem> {
    check_dims(base, target)?;
    let (d_a, d_in, d_out) = (base.d_a(), base.d_b(), target.d_b());
    let maps = basis_maps(d_in, d_out);
    let rows = (d_a * d_out).pow(2);
    let mut matrix = RMatrix::zeros(rows, maps.len());
    for (j, m) in maps.iter().enumerate() {
        let col = linalg::hermitian_to_real(&apply_local_b_raw(m, base.matrix(), d_a)?);
        matrix.set_column(j, &DVector::from_vec(col));
    }
    let rhs = DVector::from_vec(linalg::hermitian_to_real(target.matrix()));
    Ok(LinearSystem {
        matrix,
        rhs,
        d_in,
        d_out,
    })
}

fn ensemble_blocks(inputs: impl Iterator<Item = CMatrix>, maps: &[LocalMap], offset: usize, n_vars: usize) -> Vec<LmiBlock> {
    inputs
        .map(|rho| {
            let d = maps[0].d_out();
            let mut coeffs = vec![CMatrix::zeros(d, d); n_vars];
            for (j, m) in maps.iter().enumerate() {
                coeffs[offset + j] = linalg::hermitian_part(&m.apply(&rho).expect("factor sized to map input"));
            }
            LmiBlock {
                constant: CMatrix::zeros(d, d),
                coeffs,
            }
        })
        .collect()
}

/// The one-sided detection problem: equalities plus one block per ensemble
/// member.
pub fn basic_problem(base: &Base, target: &BipartiteState) -> Result<(LmiProblem, LinearSystem)> {
    let sys = assemble_linear_system(&base.state, target)?;
    let maps = basis_maps(sys.d_in, sys.d_out);
    let n = maps.len();
    let blocks = ensemble_blocks(base.ensemble.terms().iter().map(|t| t.rho_b.clone()), &maps, 0, n);
    let p = LmiProblem::new(n, blocks)?.with_equalities(sys.matrix.clone(), sys.rhs.clone())?;
    Ok((p, sys))
}

/// The two-sided problem: variables are the B-map coordinates followed by
/// the A-map coordinates.
pub fn enhanced_problem(base: &Base, target: &BipartiteState) -> Result<LmiProblem> {
    let (d_a, d_b) = target.dims();
    if base.state.dims() != (d_a, d_b) || d_a != d_b {
        return Err(Error::Unsupported(format!(
            "two-sided detection needs equal local dimensions for base and target, got base {:?} and target {:?}",
            base.state.dims(),
            target.dims()
        )));
    }
    let maps_b = basis_maps(d_b, d_b);
    let maps_a = basis_maps(d_a, d_a);
    let (nb, na) = (maps_b.len(), maps_a.len());
    let n = nb + na;
    let rows = (d_a * d_b).pow(2);
    let mut c = RMatrix::zeros(rows, n);
    for (j, m) in maps_b.iter().enumerate() {
        let col = linalg::hermitian_to_real(&apply_local_b_raw(m, base.state.matrix(), d_a)?);
        c.set_column(j, &DVector::from_vec(col));
    }
    for (j, m) in maps_a.iter().enumerate() {
        let col = linalg::hermitian_to_real(&apply_local_a_raw(m, base.state.matrix(), d_b)?);
        c.set_column(nb + j, &DVector::from_vec(col));
    }
    let rhs = DVector::from_vec(linalg::hermitian_to_real(target.matrix()));
    let terms = base.ensemble.terms();
    let mut blocks = ensemble_blocks(terms.iter().map(|t| t.rho_b.clone()), &maps_b, 0, n);
    blocks.extend(ensemble_blocks(terms.iter().map(|t| t.rho_a.clone()), &maps_a, nb, n));
    LmiProblem::new(n, blocks)?.with_equalities(c, rhs)
}

fn finalize(
    base: &Base,
    target: &BipartiteState,
    built: Result<Certificate>,
    trial: &mut Trial,
    opts: &DetectOptions,
) -> Option<(Base, Certificate)> {
    match built {
        Ok(cert) => {
            let report = certificate::verify_certificate(&cert, target, opts.verify_tol);
            if report.passed {
                trial.status = Status::Separable;
                Some((base.clone(), cert))
            } else {
                let failed: Vec<_> = report.failures().map(|c| c.name.clone()).collect();
                trial.note = Some(format!("certificate failed verification: {}", failed.join(", ")));
                None
            }
        }
        Err(e) => {
            trial.note = Some(format!("certificate construction failed: {e}"));
            None
        }
    }
}

fn new_trial(label: &str, method: Method, base: &Base) -> Trial {
    Trial {
        label: label.to_string(),
        method,
        status: Status::Inconclusive,
        base_terms: base.ensemble.len(),
        seed: None,
        nullity: 0,
        equality_residual: f64::NAN,
        margin: None,
        iterations: 0,
        note: None,
    }
}

/// Solves the square system directly when the base is faithful and checks
/// ensemble positivity of the unique map. Nonfaithful bases fall through to
/// [`detect_basic_sdp`].
pub fn detect_linear(base: &Base, target: &BipartiteState, opts: &DetectOptions) -> Result<DetectionOutcome> {
    let (p, sys) = basic_problem(base, target)?;
    let mut notes = Vec::new();
    if base.state.d_a() == base.state.d_b() {
        let f = base.faithfulness()?;
        if !f.faithful {
            notes.push(format!(
                "base is not faithful (sigma_min {:.3e}); falling back from linear to basic-sdp",
                f.sigma_min
            ));
            let mut out = solve_basic(base, target, p, &sys, opts)?;
            notes.append(&mut out.notes);
            out.notes = notes;
            return Ok(out);
        }
    }
    let elim = match sdp::eliminate_equalities(&p, opts.solver.eps_eq) {
        Ok(e) => e,
        Err(Error::Inconsistent { residual }) => {
            let mut trial = new_trial("given base", Method::Linear, base);
            trial.equality_residual = residual;
            trial.note = Some("no map connects base and target".into());
            return Ok(DetectionOutcome::from_trial(trial, None, notes));
        }
        Err(e) => return Err(e),
    };
    if elim.nullity() > 0 {
        notes.push(format!(
            "equality system has nullity {}; falling back from linear to basic-sdp",
            elim.nullity()
        ));
        let mut out = solve_basic(base, target, p, &sys, opts)?;
        notes.append(&mut out.notes);
        out.notes = notes;
        return Ok(out);
    }
    let x = elim.particular.as_slice();
    let mut trial = new_trial("given base", Method::Linear, base);
    trial.equality_residual = p.equality_residual(x);
    let margin = p.margin(x);
    trial.margin = Some(margin);
    let eq_ok = trial.equality_residual <= opts.solver.eps_eq * sys.rhs.norm();
    if margin < -opts.eps_pos || !eq_ok {
        trial.note = Some(if eq_ok {
            format!("unique map is not positive on the ensemble (min eigenvalue {margin:.3e})")
        } else {
            format!("equality residual {:.3e}", trial.equality_residual)
        });
        return Ok(DetectionOutcome::from_trial(trial, None, notes));
    }
    let map = map_from_coords(sys.d_in, sys.d_out, x);
    let built = certificate::build_from_map(&base.ensemble, &map, target, Method::Linear, &opts.build);
    let found = finalize(base, target, built, &mut trial, opts);
    Ok(DetectionOutcome::from_trial(trial, found, notes))
}

fn solve_basic(
    base: &Base,
    target: &BipartiteState,
    p: LmiProblem,
    sys: &LinearSystem,
    opts: &DetectOptions,
) -> Result<DetectionOutcome> {
    let mut trial = new_trial("given base", Method::BasicSdp, base);
    let res = match sdp::solve_feasibility(&p, &opts.solver) {
        Ok(r) => r,
        Err(Error::Inconsistent { residual }) => {
            trial.equality_residual = residual;
            trial.note = Some("no map connects base and target".into());
            return Ok(DetectionOutcome::from_trial(trial, None, vec![]));
        }
        Err(e) => return Err(e),
    };
    trial.nullity = sdp::eliminate_equalities(&p, opts.solver.eps_eq).map(|e| e.nullity()).unwrap_or(0);
    trial.equality_residual = res.equality_residual;
    trial.margin = Some(res.normalized_margin());
    trial.iterations = res.iterations;
    if res.status != FeasStatus::Feasible {
        trial.note = Some("no ensemble-positive map found".into());
        return Ok(DetectionOutcome::from_trial(trial, None, vec![]));
    }
    let map = map_from_coords(sys.d_in, sys.d_out, &res.x);
    let built = certificate::build_from_map(&base.ensemble, &map, target, Method::BasicSdp, &opts.build);
    let found = finalize(base, target, built, &mut trial, opts);
    Ok(DetectionOutcome::from_trial(trial, found, vec![]))
}

/// Searches for a map that is positive on every ensemble member.
pub fn detect_basic_sdp(base: &Base, target: &BipartiteState, opts: &DetectOptions) -> Result<DetectionOutcome> {
    let (p, sys) = basic_problem(base, target)?;
    solve_basic(base, target, p, &sys, opts)
}

/// Searches for a pair `(Λ_A, Λ_B)` with `[I ⊗ Λ_B + Λ_A ⊗ I](ρ₀) = σ`,
/// both positive on their side of the ensemble. Needs `d_A = d_B`.
pub fn detect_enhanced(base: &Base, target: &BipartiteState, opts: &DetectOptions) -> Result<DetectionOutcome> {
    let p = enhanced_problem(base, target)?;
    let mut trial = new_trial("given base", Method::Enhanced, base);
    let res = match sdp::solve_feasibility(&p, &opts.solver) {
        Ok(r) => r,
        Err(Error::Inconsistent { residual }) => {
            trial.equality_residual = residual;
            trial.note = Some("no map pair connects base and target".into());
            return Ok(DetectionOutcome::from_trial(trial, None, vec![]));
        }
        Err(e) => return Err(e),
    };
    trial.nullity = sdp::eliminate_equalities(&p, opts.solver.eps_eq).map(|e| e.nullity()).unwrap_or(0);
    trial.equality_residual = res.equality_residual;
    trial.margin = Some(res.normalized_margin());
    trial.iterations = res.iterations;
    if res.status != FeasStatus::Feasible {
        trial.note = Some("no ensemble-positive map pair found".into());
        return Ok(DetectionOutcome::from_trial(trial, None, vec![]));
    }
    let d = target.d_a();
    let nb = d.pow(4);
    let map_b = map_from_coords(d, d, &res.x[..nb]);
    let map_a = map_from_coords(d, d, &res.x[nb..]);
    let built = certificate::build_from_enhanced(&base.ensemble, &map_a, &map_b, target, &opts.build);
    let found = finalize(base, target, built, &mut trial, opts);
    Ok(DetectionOutcome::from_trial(trial, found, vec![]))
}

/// One stored base state.
#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub ensemble: ProductEnsemble,
    pub digest: String,
    pub sigma_min: f64,
    pub seed: Option<u64>,
    /// Index of the entry whose cone contains this one, when pruned.
    pub pruned_by: Option<usize>,
}

impl TableEntry {
    pub fn new(ensemble: ProductEnsemble, seed: Option<u64>) -> Result<Self> {
        let base = Base::new(ensemble)?;
        let f = base.faithfulness()?;
        if !f.faithful {
            return Err(Error::InvalidState(format!(
                "base is not faithful (sigma_min {:.3e})",
                f.sigma_min
            )));
        }
        Ok(TableEntry {
            digest: certificate::digest_of(&base.state),
            ensemble: base.ensemble,
            sigma_min: f.sigma_min,
            seed,
            pruned_by: None,
        })
    }

    pub fn is_active(&self) -> bool {
        self.pruned_by.is_none()
    }

    pub fn base(&self) -> Result<Base> {
        Base::new(self.ensemble.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaseTable {
    pub entries: Vec<TableEntry>,
}

impl BaseTable {
    pub fn active(&self) -> impl Iterator<Item = (usize, &TableEntry)> {
        self.entries.iter().enumerate().filter(|(_, e)| e.is_active())
    }

    /// Clears every prune flag.
    pub fn restore(&mut self) {
        for e in &mut self.entries {
            e.pruned_by = None;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneRecord {
    pub pruned: usize,
    pub by: usize,
    pub sampled_min_eigenvalue: f64,
}

/// Flags entries reachable from another active entry by a map that is
/// positive on the source ensemble and passes a sampled positivity check.
/// Later entries are examined first, so earlier ones are kept on ties.
/// Flagged entries stay in the table and can be restored.
///
/// Reachability is one-sided: a flagged entry adds nothing to one-sided
/// detection, but two-sided detection on it can still succeed where its
/// source fails.
pub fn table_prune(table: &mut BaseTable, opts: &DetectOptions) -> Result<Vec<PruneRecord>> {
    let mut records = Vec::new();
    let n = table.entries.len();
    for j in (0..n).rev() {
        if !table.entries[j].is_active() {
            continue;
        }
        let target = table.entries[j].base()?.state;
        for i in 0..n {
            if i == j || !table.entries[i].is_active() {
                continue;
            }
            let source = table.entries[i].base()?;
            if source.state.dims() != target.dims() {
                continue;
            }
            let out = detect_basic_sdp(&source, &target, opts)?;
            let Some(cert) = out.certificate else { continue };
            let choi = &cert.provenance.map_b;
            let map = map_of_choi(choi);
            let worst = map.sampled_min_output_eigenvalue(PRUNE_SAMPLES, (i * n + j) as u64);
            if worst >= -opts.eps_pos {
                table.entries[j].pruned_by = Some(i);
                records.push(PruneRecord {
                    pruned: j,
                    by: i,
                    sampled_min_eigenvalue: worst,
                });
                break;
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct AutoOptions {
    pub n_bases: usize,
    pub seed: u64,
    /// Use the two-sided problem when dimensions allow.
    pub enhanced: bool,
    /// Try the closed-form eigenvalue criterion first.
    pub analytic: bool,
    /// Worker threads for random trials; 1 runs inline.
    pub jobs: usize,
    pub detect: DetectOptions,
}

impl Default for AutoOptions {
    fn default() -> Self {
        AutoOptions {
            n_bases: 32,
            seed: 0,
            enhanced: true,
            analytic: true,
            jobs: 1,
            detect: DetectOptions::default(),
        }
    }
}

/// Seed for random trial `index`, independent of evaluation order.
pub fn trial_seed(seed: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng.random()
}

fn run_on_base(base: &Base, target: &BipartiteState, enhanced: bool, opts: &DetectOptions) -> Result<DetectionOutcome> {
    if enhanced && target.d_a() == target.d_b() && base.state.dims() == target.dims() {
        detect_enhanced(base, target, opts)
    } else {
        detect_basic_sdp(base, target, opts)
    }
}

fn random_trial(target: &BipartiteState, index: usize, opts: &AutoOptions) -> Result<DetectionOutcome> {
    let d = target.d_a();
    let seed = trial_seed(opts.seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_terms = rng.random_range(d * d..=d.pow(4) + 1);
    let base = random_base(d, n_terms, rng.random())?;
    let label = format!("random #{index}");
    let f = base.faithfulness()?;
    if !f.faithful {
        let mut trial = new_trial(&label, Method::BasicSdp, &base);
        trial.seed = Some(seed);
        trial.note = Some(format!("skipped: base not faithful (sigma_min {:.3e})", f.sigma_min));
        return Ok(DetectionOutcome::from_trial(trial, None, vec![]));
    }
    let mut out = run_on_base(&base, target, opts.enhanced, &opts.detect)?;
    for t in &mut out.trials {
        t.label.clone_from(&label);
        t.seed = Some(seed);
    }
    Ok(out)
}

fn absorb(acc: &mut DetectionOutcome, out: DetectionOutcome) -> bool {
    acc.trials.extend(out.trials);
    acc.notes.extend(out.notes);
    if out.status == Status::Separable {
        acc.status = Status::Separable;
        acc.certificate = out.certificate;
        acc.base = out.base;
        acc.method = out.method;
        true
    } else {
        false
    }
}

/// Closed-form criterion, then stored bases in order, then `n_bases`
/// random faithful bases. Returns the first success; with several jobs the
/// winner is still the lowest-index successful trial.
pub fn detect_auto(target: &BipartiteState, table: Option<&BaseTable>, opts: &AutoOptions) -> Result<DetectionOutcome> {
    let mut acc = DetectionOutcome {
        status: Status::Inconclusive,
        certificate: None,
        base: None,
        method: None,
        trials: vec![],
        notes: vec![],
    };
    let square = target.d_a() == target.d_b();
    if opts.enhanced && !square {
        acc.notes.push("two-sided detection disabled for unequal local dimensions".into());
    }

    if opts.analytic && square {
        let report = criteria::corollary1_check(target)?;
        let base = Base::new(states::isotropic_base_ensemble(target.d_a())?)?;
        let mut trial = new_trial("eigenvalue criterion", Method::Analytic, &base);
        trial.margin = report.statistic.map(|s| s - report.threshold);
        let found = if report.verdict == Verdict::Separable {
            let built = certificate::build_corollary1(target, &opts.detect.build);
            finalize(&base, target, built, &mut trial, &opts.detect)
        } else {
            trial.note = Some("criterion not met".into());
            None
        };
        if absorb(&mut acc, DetectionOutcome::from_trial(trial, found, vec![])) {
            return Ok(acc);
        }
    }

    if let Some(table) = table {
        for (i, entry) in table.active() {
            let base = entry.base()?;
            if base.state.d_a() != target.d_a() {
                continue;
            }
            let mut out = run_on_base(&base, target, opts.enhanced, &opts.detect)?;
            for t in &mut out.trials {
                t.label = format!("table #{i}");
                t.seed = entry.seed;
            }
            if absorb(&mut acc, out) {
                return Ok(acc);
            }
        }
    }

    let jobs = opts.jobs.max(1);
    if jobs == 1 {
        for index in 0..opts.n_bases {
            if absorb(&mut acc, random_trial(target, index, opts)?) {
                return Ok(acc);
            }
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Unsupported(format!("thread pool: {e}")))?;
        let mut start = 0;
        while start < opts.n_bases {
            let end = (start + jobs).min(opts.n_bases);
            let chunk: Vec<Result<DetectionOutcome>> =
                pool.install(|| (start..end).into_par_iter().map(|i| random_trial(target, i, opts)).collect());
            for out in chunk {
                if absorb(&mut acc, out?) {
                    return Ok(acc);
                }
            }
            start = end;
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::criteria::ppt_check;
    use crate::linalg::testutil::*;
    use crate::linalg::Subsystem;
    use crate::maps::{apply_local_b, apply_local_sum};
    use crate::states::{isotropic_state, random_pure_product, random_separable, ProductTerm};

    fn opts() -> DetectOptions {
        DetectOptions::default()
    }

    fn cp_target(base: &Base, seed: u64) -> BipartiteState {
        let map = LocalMap::random_cp(base.state.d_b(), base.state.d_b(), 2, seed);
        BipartiteState::from_unnormalized(base.state.d_a(), map.d_out(), &apply_local_b(&map, &base.state).unwrap()).unwrap()
    }

    #[test]
    fn linear_system_of_faithful_base_is_invertible() {
        let base = random_base(2, 6, 3).unwrap();
        let sys = assemble_linear_system(&base.state, &base.state).unwrap();
        assert_eq!(sys.matrix.shape(), (16, 16));
        let sv = linalg::svd_real(&sys.matrix).unwrap().s;
        assert!(sv.iter().copied().fold(f64::INFINITY, f64::min) > 1e-6);
        // the identity map solves the self-system
        let id = linalg::hermitian_to_real(crate::maps::choi_of_map(&LocalMap::identity(2)).matrix());
        let r = &sys.matrix * DVector::from_vec(id) - &sys.rhs;
        assert!(r.norm() < 1e-13);
    }

    #[test]
    fn linear_system_of_pure_product_is_singular() {
        let base = Base::new(random_pure_product(2, 2, 1).unwrap()).unwrap();
        let sys = assemble_linear_system(&base.state, &base.state).unwrap();
        let sv = linalg::svd_real(&sys.matrix).unwrap().s;
        assert!(sv.iter().copied().fold(f64::INFINITY, f64::min) < 1e-12);
    }

    #[test]
    fn target_equal_to_base() {
        let base = random_base(2, 5, 9).unwrap();
        let out = detect_linear(&base, &base.state, &opts()).unwrap();
        assert!(out.is_separable());
        assert_eq!(out.method, Some(Method::Linear));
        let out = detect_basic_sdp(&base, &base.state, &opts()).unwrap();
        assert!(out.is_separable());
    }

    #[test]
    fn cp_round_trip_linear_and_basic() {
        for seed in 0..20 {
            let base = random_base(2, 4 + (seed as usize % 10), seed).unwrap();
            let target = cp_target(&base, 1000 + seed);
            let lin = detect_linear(&base, &target, &opts()).unwrap();
            let sdp = detect_basic_sdp(&base, &target, &opts()).unwrap();
            assert!(lin.is_separable(), "seed {seed}: {:?}", lin.trials);
            assert!(sdp.is_separable(), "seed {seed}: {:?}", sdp.trials);
            for out in [lin, sdp] {
                let cert = out.certificate.unwrap();
                assert!(certificate::verify_certificate(&cert, &target, 1e-6).passed);
            }
        }
    }

    #[test]
    fn cp_round_trip_d3() {
        let base = random_base(3, 12, 5).unwrap();
        let target = cp_target(&base, 6);
        assert!(detect_linear(&base, &target, &opts()).unwrap().is_separable());
        assert!(detect_basic_sdp(&base, &target, &opts()).unwrap().is_separable());
    }

    #[test]
    fn entangled_targets_are_inconclusive() {
        let bell_mix = isotropic_state(2, 0.8).unwrap();
        let iso_one = isotropic_state(2, 1.0).unwrap();
        for seed in 0..5 {
            let base = random_base(2, 8, seed).unwrap();
            for t in [&bell_mix, &iso_one] {
                assert!(!detect_linear(&base, t, &opts()).unwrap().is_separable());
                assert!(!detect_basic_sdp(&base, t, &opts()).unwrap().is_separable());
                assert!(!detect_enhanced(&base, t, &opts()).unwrap().is_separable());
            }
        }
    }

    #[test]
    fn nonfaithful_product_base_reaches_product_targets() {
        let mut g = rng(8);
        let (ra, rb, rb2) = (random_density(&mut g, 2), random_density(&mut g, 2), random_density(&mut g, 2));
        let base = Base::new(
            ProductEnsemble::new(2, 2, vec![ProductTerm { weight: 1.0, rho_a: ra.clone(), rho_b: rb }]).unwrap(),
        )
        .unwrap();
        assert!(!base.faithfulness().unwrap().faithful);
        let target = BipartiteState::new(2, 2, linalg::tensor_product(&ra, &rb2)).unwrap();
        let out = detect_basic_sdp(&base, &target, &opts()).unwrap();
        assert!(out.is_separable(), "{:?}", out.trials);
        let lin = detect_linear(&base, &target, &opts()).unwrap();
        assert!(lin.notes.iter().any(|n| n.contains("falling back")));
        assert_eq!(lin.method, Some(Method::BasicSdp));
    }

    #[test]
    fn rectangular_target_from_square_base() {
        let base = random_base(2, 8, 21).unwrap();
        let map = LocalMap::random_cp(2, 3, 3, 22);
        let target = BipartiteState::from_unnormalized(2, 3, &apply_local_b(&map, &base.state).unwrap()).unwrap();
        let out = detect_basic_sdp(&base, &target, &opts()).unwrap();
        assert!(out.is_separable(), "{:?}", out.trials);
        assert_eq!(out.certificate.unwrap().dims, (2, 3));
        assert!(detect_enhanced(&base, &target, &opts()).is_err());
    }

    #[test]
    fn enhanced_round_trip_and_monotonicity() {
        for seed in 0..10 {
            let base = random_base(2, 6, 50 + seed).unwrap();
            let ma = LocalMap::random_cp(2, 2, 2, 60 + seed);
            let mb = LocalMap::random_cp(2, 2, 2, 70 + seed);
            let m = apply_local_sum(&ma, &mb, &base.state).unwrap();
            let target = BipartiteState::from_unnormalized(2, 2, &m).unwrap();
            let out = detect_enhanced(&base, &target, &opts()).unwrap();
            assert!(out.is_separable(), "seed {seed}: {:?}", out.trials);

            let one_sided = cp_target(&base, 80 + seed);
            let basic = detect_basic_sdp(&base, &one_sided, &opts()).unwrap();
            if basic.is_separable() {
                let enh = detect_enhanced(&base, &one_sided, &opts()).unwrap();
                assert!(enh.is_separable(), "seed {seed}: {:?} vs {:?}", basic.trials, enh.trials);
            }
        }
    }

    #[test]
    fn auto_uses_eigenvalue_criterion_for_mixed_state() {
        let out = detect_auto(&isotropic_state(3, 0.0).unwrap(), None, &AutoOptions::default()).unwrap();
        assert!(out.is_separable());
        assert_eq!(out.method, Some(Method::Analytic));
        assert_eq!(out.trials.len(), 1);
    }

    #[test]
    fn auto_rejects_npt_state() {
        let o = AutoOptions {
            n_bases: 4,
            ..AutoOptions::default()
        };
        let s = isotropic_state(2, 0.6).unwrap();
        assert!(ppt_check(&s).statistic.unwrap() < 0.0);
        let out = detect_auto(&s, None, &o).unwrap();
        assert_eq!(out.status, Status::Inconclusive);
        assert_eq!(out.trials.len(), 5);
    }

    #[test]
    fn auto_is_deterministic_across_jobs() {
        // mixture of a random separable state with the maximally mixed state,
        // outside the closed-form criterion's reach
        let ens = random_separable(2, 2, 3, 77).unwrap();
        let m = ens.assemble_matrix().scale(0.9) + linalg::identity(4).scale(0.1 / 4.0);
        let target = BipartiteState::from_unnormalized(2, 2, &m).unwrap();
        let mk = |jobs| AutoOptions {
            n_bases: 8,
            seed: 5,
            jobs,
            ..AutoOptions::default()
        };
        let a = detect_auto(&target, None, &mk(1)).unwrap();
        let b = detect_auto(&target, None, &mk(3)).unwrap();
        assert_eq!(a.status, b.status);
        let labels = |o: &DetectionOutcome| o.trials.iter().map(|t| t.label.clone()).collect::<Vec<_>>();
        if a.is_separable() {
            assert_eq!(labels(&a), labels(&b));
            assert_eq!(a.certificate.unwrap().target_hash, b.certificate.unwrap().target_hash);
        }
    }

    #[test]
    fn prune_duplicates_and_constructed_members() {
        let e1 = random_separable(2, 2, 6, 31).unwrap();
        let b1 = Base::new(e1.clone()).unwrap();
        let map = LocalMap::random_cp(2, 2, 3, 32);
        let image = b1
            .ensemble
            .terms()
            .iter()
            .map(|t| {
                let m = map.apply(&t.rho_b).unwrap();
                let tr = m.trace().re;
                ProductTerm {
                    weight: t.weight * tr,
                    rho_a: t.rho_a.clone(),
                    rho_b: m.unscale(tr),
                }
            })
            .collect::<Vec<_>>();
        let total: f64 = image.iter().map(|t| t.weight).sum();
        let image = image
            .into_iter()
            .map(|mut t| {
                t.weight /= total;
                t
            })
            .collect();
        let e2 = ProductEnsemble::new(2, 2, image).unwrap();

        let mut dup = BaseTable {
            entries: vec![TableEntry::new(e1.clone(), Some(31)).unwrap(), TableEntry::new(e1.clone(), Some(31)).unwrap()],
        };
        let rec = table_prune(&mut dup, &opts()).unwrap();
        assert_eq!(rec.len(), 1);
        assert_eq!(dup.active().count(), 1);
        assert!(dup.entries[0].is_active());

        let mut t = BaseTable {
            entries: vec![TableEntry::new(e1, Some(31)).unwrap(), TableEntry::new(e2, None).unwrap()],
        };
        table_prune(&mut t, &opts()).unwrap();
        assert_eq!(t.entries[1].pruned_by, Some(0));
        t.restore();
        assert_eq!(t.active().count(), 2);
    }

    #[test]
    fn table_entry_rejects_nonfaithful() {
        assert!(TableEntry::new(random_pure_product(2, 2, 4).unwrap(), None).is_err());
    }

    #[test]
    fn separable_outcomes_are_ppt() {
        let mut g = rng(99);
        for k in 0..30 {
            let base = random_base(2, 6, 200 + k).unwrap();
            let rho = random_density(&mut g, 4);
            let m = rho.scale(0.3) + linalg::identity(4).scale(0.7 / 4.0);
            let target = BipartiteState::from_unnormalized(2, 2, &m).unwrap();
            for out in [
                detect_linear(&base, &target, &opts()).unwrap(),
                detect_basic_sdp(&base, &target, &opts()).unwrap(),
                detect_enhanced(&base, &target, &opts()).unwrap(),
            ] {
                if out.is_separable() {
                    let pt = linalg::partial_transpose(target.matrix(), 2, 2, Subsystem::B).unwrap();
                    assert!(linalg::min_eigenvalue_unchecked(&pt) >= -1e-9);
                }
            }
        }
    }
}
