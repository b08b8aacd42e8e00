//! Feasibility of equality-constrained linear matrix inequalities.
//!
//! Problem: find real `x` with `C x = b` and
//! `F_i(x) = A₀⁽ⁱ⁾ + Σ_J x_J A_J⁽ⁱ⁾ ⪰ 0` for every Hermitian block `i`.
//!
//! Equalities are eliminated first (`x = x₀ + N y` with `N` an orthonormal
//! nullspace basis). The reduced problem is solved as the concave program
//! `max t  s.t.  F_i(y) ⪰ t·𝟙`, with `|y_j| ≤ R`, by a log-barrier path
//! following method with damped Newton centering. Any `y` with
//! `t < λ_min(F(y))` is strictly feasible for the margin program, so no
//! phase-one is needed. A `Feasible` verdict is only issued after the
//! original (unreduced) blocks and equalities are re-evaluated at the
//! returned point.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix, RMatrix, C64, ZERO};

/// One affine Hermitian family `A₀ + Σ_J x_J A_J`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub constant: CMatrix,
    pub coeffs: Vec<CMatrix>,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> CMatrix {
        let mut m = self.constant.clone();
        for (a, &xj) in self.coeffs.iter().zip(x) {
            if xj != 0.0 {
                m += a.scale(xj);
            }
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct LmiProblem {
    n_vars: usize,
    eq_matrix: RMatrix,
    eq_rhs: DVector<f64>,
    blocks: Vec<LmiBlock>,
}

impl LmiProblem {
    pub fn new(n_vars: usize, blocks: Vec<LmiBlock>) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            let n = b.size();
            if !b.constant.is_square() {
                return Err(Error::dims("LmiProblem block", "square", format!("block {i} {:?}", b.constant.shape())));
            }
            if b.coeffs.len() != n_vars {
                return Err(Error::dims("LmiProblem block", format!("{n_vars} coefficient matrices"), format!("block {i} has {}", b.coeffs.len())));
            }
            for m in std::iter::once(&b.constant).chain(&b.coeffs) {
                if m.shape() != (n, n) {
                    return Err(Error::dims("LmiProblem block", format!("{n}x{n}"), format!("block {i} {:?}", m.shape())));
                }
                let defect = linalg::hermiticity_defect(m);
                let tol = linalg::TOL_HERM * linalg::max_abs(m).max(1.0);
                if defect > tol {
                    return Err(Error::NotHermitian { defect, tol });
                }
            }
        }
        Ok(LmiProblem {
            n_vars,
            eq_matrix: RMatrix::zeros(0, n_vars),
            eq_rhs: DVector::zeros(0),
            blocks,
        })
    }

    pub fn with_equalities(mut self, c: RMatrix, b: DVector<f64>) -> Result<Self> {
        if c.ncols() != self.n_vars || c.nrows() != b.len() {
            return Err(Error::dims(
                "LmiProblem equalities",
                format!("rows x {} with matching rhs", self.n_vars),
                format!("{}x{} with rhs {}", c.nrows(), c.ncols(), b.len()),
            ));
        }
        self.eq_matrix = c;
        self.eq_rhs = b;
        Ok(self)
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn eq_matrix(&self) -> &RMatrix {
        &self.eq_matrix
    }

    pub fn eq_rhs(&self) -> &DVector<f64> {
        &self.eq_rhs
    }

    /// `min_i λ_min(F_i(x))`; `+∞` when there are no blocks.
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.blocks
            .iter()
            .map(|b| linalg::min_eigenvalue_unchecked(&b.evaluate(x)))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn equality_residual(&self, x: &[f64]) -> f64 {
        if self.eq_matrix.nrows() == 0 {
            return 0.0;
        }
        (&self.eq_matrix * DVector::from_column_slice(x) - &self.eq_rhs).norm()
    }

    /// Largest Frobenius norm among constant blocks (falling back to the
    /// coefficient blocks, then 1).
    fn normalization(&self) -> f64 {
        let from = |it: &mut dyn Iterator<Item = &CMatrix>| {
            it.map(linalg::frobenius_norm).fold(0.0, f64::max)
        };
        let s = from(&mut self.blocks.iter().map(|b| &b.constant));
        if s > 0.0 {
            return s;
        }
        let s = from(&mut self.blocks.iter().flat_map(|b| b.coeffs.iter()));
        if s > 0.0 {
            s
        } else {
            1.0
        }
    }
}

/// Affine parametrization of the solution set of `C x = b`.
#[derive(Debug, Clone)]
pub struct Elimination {
    /// Least-squares particular solution `x₀`.
    pub particular: DVector<f64>,
    /// Orthonormal basis of `ker C`, one column per reduced variable.
    pub nullspace: RMatrix,
    /// `‖C x₀ − b‖`.
    pub residual: f64,
    /// The problem in the reduced variables `y`.
    pub reduced: LmiProblem,
}

impl Elimination {
    pub fn nullity(&self) -> usize {
        self.nullspace.ncols()
    }

    /// `x = x₀ + N y`.
    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let x = &self.particular + &self.nullspace * DVector::from_column_slice(y);
        x.as_slice().to_vec()
    }
}

/// Relative singular-value cutoff used to decide the rank of `C`.
pub const RANK_RTOL: f64 = 1e-12;

/// Replaces the equality constraints by an affine parametrization of their
/// solution set. Fails with [`Error::Inconsistent`] when the least-squares
/// residual exceeds `eps_eq·‖b‖`.
pub fn eliminate_equalities(p: &LmiProblem, eps_eq: f64) -> Result<Elimination> {
    let n = p.n_vars;
    let m = p.eq_matrix.nrows();
    let (particular, nullspace, residual) = if m == 0 {
        (DVector::zeros(n), RMatrix::identity(n, n), 0.0)
    } else {
        let svd = linalg::svd_real(&p.eq_matrix)?;
        let smax = svd.s.first().copied().unwrap_or(0.0);
        let cutoff = RANK_RTOL * smax;
        let mut x0 = DVector::zeros(n);
        let mut null_cols = Vec::new();
        for k in 0..n {
            let v = svd.v.column(k).into_owned();
            if k < svd.s.len() && smax > 0.0 && svd.s[k] > cutoff {
                let coeff = svd.u.column(k).dot(&p.eq_rhs) / svd.s[k];
                x0 += v * coeff;
            } else {
                null_cols.push(v);
            }
        }
        let nullspace = if null_cols.is_empty() {
            RMatrix::zeros(n, 0)
        } else {
            RMatrix::from_columns(&null_cols)
        };
        let residual = (&p.eq_matrix * &x0 - &p.eq_rhs).norm();
        (x0, nullspace, residual)
    };
    if residual > eps_eq * p.eq_rhs.norm() {
        return Err(Error::Inconsistent { residual });
    }

    let k = nullspace.ncols();
    let x0 = particular.as_slice();
    let blocks = p
        .blocks
        .iter()
        .map(|b| {
            let constant = b.evaluate(x0);
            let coeffs = (0..k)
                .map(|j| {
                    let mut acc = CMatrix::zeros(b.size(), b.size());
                    for (jj, a) in b.coeffs.iter().enumerate() {
                        let w = nullspace[(jj, j)];
                        if w != 0.0 {
                            acc += a.scale(w);
                        }
                    }
                    acc
                })
                .collect();
            LmiBlock { constant, coeffs }
        })
        .collect();
    let reduced = LmiProblem {
        n_vars: k,
        eq_matrix: RMatrix::zeros(0, k),
        eq_rhs: DVector::zeros(0),
        blocks,
    };
    Ok(Elimination {
        particular,
        nullspace,
        residual,
        reduced,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum FeasStatus {
    Feasible,
    /// Inconclusive: no point with margin ≥ eps_feas was found.
    NotFound,
}

#[derive(Debug, Clone)]
pub struct FeasResult {
    pub status: FeasStatus,
    /// Best point found, in the original variables.
    pub x: Vec<f64>,
    /// `min_i λ_min(F_i(x))` in the problem's own units.
    pub margin: f64,
    /// Normalization applied before comparing with `eps_feas`.
    pub scale: f64,
    pub equality_residual: f64,
    /// Newton steps taken.
    pub iterations: usize,
    /// Best normalized margin after each Newton step; non-decreasing.
    pub history: Vec<f64>,
}

impl FeasResult {
    pub fn is_feasible(&self) -> bool {
        self.status == FeasStatus::Feasible
    }

    pub fn normalized_margin(&self) -> f64 {
        self.margin / self.scale
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Required normalized margin for a `Feasible` verdict.
    pub eps_feas: f64,
    /// Equality residual tolerance, relative to `‖b‖`.
    pub eps_eq: f64,
    pub max_iter: usize,
    /// Target barrier duality gap (normalized units).
    pub gap_tol: f64,
    /// Box bound on the reduced variables.
    pub box_radius: f64,
    /// Stop as soon as the normalized margin reaches this value.
    pub stop_at: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            eps_feas: 1e-7,
            eps_eq: 1e-8,
            max_iter: 400,
            gap_tol: 1e-9,
            box_radius: 1e4,
            stop_at: None,
        }
    }
}

struct Barrier<'a> {
    blocks: &'a [LmiBlock],
    n: usize,
    radius: f64,
}

/// Cholesky factor of `F_i(y) − t𝟙` for every block, or `None` when any
/// block is not positive definite.
fn shifted(blocks: &[LmiBlock], y: &[f64], t: f64) -> Option<Vec<CMatrix>> {
    blocks
        .iter()
        .map(|b| {
            let mut g = b.evaluate(y);
            for i in 0..g.nrows() {
                g[(i, i)] -= t;
            }
            linalg::cholesky_pd(&g)
        })
        .collect()
}

impl Barrier<'_> {
    fn in_box(&self, y: &[f64]) -> bool {
        y.iter().all(|v| v.abs() < self.radius)
    }

    /// `−s·t − Σ log det(F_i − t𝟙) − Σ log(R² − y_j²)`; `None` outside the domain.
    fn value(&self, y: &[f64], t: f64, s: f64) -> Option<f64> {
        if !self.in_box(y) {
            return None;
        }
        let chols = shifted(self.blocks, y, t)?;
        let mut phi = -s * t;
        for l in &chols {
            for i in 0..l.nrows() {
                phi -= 2.0 * l[(i, i)].re.ln();
            }
        }
        for &v in y {
            phi -= (self.radius - v).ln() + (self.radius + v).ln();
        }
        Some(phi)
    }

    /// Gradient and Hessian over `(y, t)`, with `t` as the last coordinate.
    fn derivatives(&self, y: &[f64], t: f64, s: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let n = self.n;
        let mut grad = DVector::zeros(n + 1);
        let mut hess = DMatrix::zeros(n + 1, n + 1);
        grad[n] = -s;
        for b in self.blocks {
            let m = b.size();
            let mut g = b.evaluate(y);
            for i in 0..m {
                g[(i, i)] -= t;
            }
            let l = linalg::cholesky_pd(&g)?;
            let l_inv = l.solve_lower_triangular(&linalg::identity(m))?;
            let w = l_inv.adjoint() * &l_inv;
            // P_J = W A_J (row-major flattened) and Q_J = vec(P_J^T)
            let mut p = CMatrix::zeros(n + 1, m * m);
            let mut q = CMatrix::zeros(n + 1, m * m);
            for (j, a) in b.coeffs.iter().enumerate() {
                let pj = &w * a;
                for r in 0..m {
                    for c in 0..m {
                        p[(j, r * m + c)] = pj[(r, c)];
                        q[(j, c * m + r)] = pj[(r, c)];
                    }
                }
            }
            // t direction: dG/dt = −𝟙
            for r in 0..m {
                for c in 0..m {
                    p[(n, r * m + c)] = -w[(r, c)];
                    q[(n, c * m + r)] = -w[(r, c)];
                }
            }
            for j in 0..=n {
                let mut tr = ZERO;
                for r in 0..m {
                    tr += p[(j, r * m + r)];
                }
                grad[j] -= tr.re;
            }
            let h: CMatrix = &p * q.transpose();
            for i in 0..=n {
                for j in 0..=n {
                    hess[(i, j)] += h[(i, j)].re;
                }
            }
        }
        for (j, &v) in y.iter().enumerate() {
            let (a, bb) = (self.radius - v, self.radius + v);
            grad[j] += 1.0 / a - 1.0 / bb;
            hess[(j, j)] += 1.0 / (a * a) + 1.0 / (bb * bb);
        }
        Some((grad, hess))
    }
}

fn solve_newton(hess: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let n = hess.nrows();
    let diag_scale = (0..n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut reg = 0.0;
    loop {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += reg;
        }
        if let Some(ch) = h.cholesky() {
            return -ch.solve(grad);
        }
        reg = if reg == 0.0 { 1e-14 * diag_scale } else { reg * 100.0 };
    }
}

/// Maximizes the smallest eigenvalue over the affine family and reports
/// `Feasible` iff the normalized margin reaches `eps_feas`.
pub fn solve_feasibility(p: &LmiProblem, opts: &SolverOptions) -> Result<FeasResult> {
    let elim = eliminate_equalities(p, opts.eps_eq)?;
    let scale = elim.reduced.normalization();
    let blocks: Vec<LmiBlock> = elim
        .reduced
        .blocks
        .iter()
        .map(|b| LmiBlock {
            constant: b.constant.unscale(scale),
            coeffs: b.coeffs.iter().map(|a| a.unscale(scale)).collect(),
        })
        .collect();
    let k = elim.nullity();
    let barrier = Barrier {
        blocks: &blocks,
        n: k,
        radius: opts.box_radius,
    };
    let margin_of = |y: &[f64]| {
        blocks
            .iter()
            .map(|b| linalg::min_eigenvalue_unchecked(&b.evaluate(y)))
            .fold(f64::INFINITY, f64::min)
    };
    let barrier_dim = blocks.iter().map(LmiBlock::size).sum::<usize>() + 2 * k;

    let mut y = vec![0.0; k];
    let mut best_y = y.clone();
    let mut best = margin_of(&y);
    let mut history = Vec::new();
    let mut iterations = 0;
    let done = |best: f64| opts.stop_at.is_some_and(|s| best >= s);

    if k > 0 && !blocks.is_empty() && !done(best) {
        let mut t = best - 1.0;
        let mut s = 1.0;
        'outer: loop {
            // centering
            for _ in 0..100 {
                if iterations >= opts.max_iter {
                    break 'outer;
                }
                let Some((grad, hess)) = barrier.derivatives(&y, t, s) else {
                    break 'outer;
                };
                let step = solve_newton(&hess, &grad);
                let decrement = -grad.dot(&step);
                if decrement / 2.0 <= 1e-10 {
                    break;
                }
                let phi0 = barrier.value(&y, t, s).expect("current point is interior");
                let mut alpha = 1.0;
                let accepted = loop {
                    let ny: Vec<f64> = (0..k).map(|j| y[j] + alpha * step[j]).collect();
                    let nt = t + alpha * step[k];
                    if let Some(phi) = barrier.value(&ny, nt, s) {
                        if phi <= phi0 - 0.25 * alpha * decrement {
                            break Some((ny, nt));
                        }
                    }
                    alpha *= 0.5;
                    if alpha < 1e-14 {
                        break None;
                    }
                };
                iterations += 1;
                let Some((ny, nt)) = accepted else {
                    break;
                };
                y = ny;
                t = nt;
                let m = margin_of(&y);
                if m > best {
                    best = m;
                    best_y.clone_from(&y);
                }
                history.push(best);
                if done(best) {
                    break 'outer;
                }
            }
            let gap = barrier_dim as f64 / s;
            if gap < opts.gap_tol {
                break;
            }
            // the centered point bounds the optimum from above
            if best.max(t) + gap < opts.eps_feas {
                break;
            }
            s *= 8.0;
        }
    }

    let x = elim.reconstruct(&best_y);
    let margin = p.margin(&x);
    let equality_residual = p.equality_residual(&x);
    let eq_ok = equality_residual <= opts.eps_eq * p.eq_rhs.norm().max(f64::MIN_POSITIVE);
    let status = if margin / scale >= opts.eps_feas && eq_ok {
        FeasStatus::Feasible
    } else {
        FeasStatus::NotFound
    };
    Ok(FeasResult {
        status,
        x,
        margin,
        scale,
        equality_residual,
        iterations,
        history,
    })
}

/// Builds the Hermitian matrix `Σ_J x_J A_J` for a coefficient list.
pub fn combine(coeffs: &[CMatrix], x: &[f64]) -> CMatrix {
    let n = coeffs.first().map(|a| a.nrows()).unwrap_or(0);
    let mut out = CMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for (a, &xj) in coeffs.iter().zip(x) {
        out += a.scale(xj);
    }
    out
}

/// Random affine family with `F(x*) = m·𝟙 + v v†` for a random `x*` and a
/// random vector `v` per block, so the optimum margin is at least `m`.
/// Coefficients are Hermitian with standard Gaussian entries. When
/// `n_eq > 0`, random equalities `C x = C x*` are attached.
pub fn planted(n_vars: usize, sizes: &[usize], m: f64, n_eq: usize, seed: u64) -> (LmiProblem, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut g = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let gauss = |g: &mut rand_chacha::ChaCha8Rng| -> f64 { g.sample(StandardNormal) };
    let x_star: Vec<f64> = (0..n_vars).map(|_| g.random_range(-1.0..1.0)).collect();
    let blocks = sizes
        .iter()
        .map(|&n| {
            let coeffs: Vec<CMatrix> = (0..n_vars)
                .map(|_| {
                    let a = CMatrix::from_fn(n, n, |_, _| C64::new(gauss(&mut g), gauss(&mut g)));
                    linalg::hermitian_part(&a)
                })
                .collect();
            let v = CMatrix::from_fn(n, 1, |_, _| C64::new(gauss(&mut g), gauss(&mut g)));
            let mut constant = linalg::identity(n).scale(m) + &v * v.adjoint();
            constant -= combine(&coeffs, &x_star);
            LmiBlock {
                constant: linalg::hermitian_part(&constant),
                coeffs,
            }
        })
        .collect();
    let mut p = LmiProblem::new(n_vars, blocks).expect("planted blocks are Hermitian");
    if n_eq > 0 {
        let c = RMatrix::from_fn(n_eq, n_vars, |_, _| gauss(&mut g));
        let b = &c * DVector::from_column_slice(&x_star);
        p = p.with_equalities(c, b).expect("planted equalities have matching shapes");
    }
    (p, x_star)
}
