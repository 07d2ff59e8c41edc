//! Weighted least squares, weighted logistic regression, and the
//! one-parameter offset fluctuation — the numeric core everything else
//! leans on.
//!
//! Design matrices are small and dense (a handful of columns, up to a few
//! thousand rows), so WLS runs a Householder QR on the square-root-weighted
//! system: numerically stable and allocation-light. Exact rank deficiency
//! is resolved by re-solving the normal equations with a tiny ridge
//! (`1e-8` relative to the Gram diagonal) and flagging the fit as
//! degenerate; predictions remain well-defined.
//!
//! Logistic fits use iteratively reweighted least squares with a fixed
//! convergence contract: relative log-likelihood change `< 1e-13` or score
//! max-norm `< 1e-11`, at most 100 iterations. Degenerate data (constant
//! response, separation that keeps the fit from converging) falls back to
//! an intercept-only fit at the clamped empirical rate, recorded on the
//! returned fit so callers can count fallbacks.

use thiserror::Error;

use crate::scalar::Scalar;

/// Convergence and guard constants for the solvers.
pub mod tol {
    /// IRLS stops when the relative log-likelihood change drops below this.
    /// It is deliberately near machine precision: on rank-deficient designs
    /// the ridge keeps the score on a small plateau, and the stalled
    /// log-likelihood is what detects that fixed point.
    pub const IRLS_LOGLIK_REL: f64 = 1e-13;
    /// ... or when the score max-norm drops below this. The bound is
    /// absolute while cell masses on frequency-weighted panels can be tiny,
    /// so it is kept tight enough that a within-cell rate error
    /// (score / cell mass) stays negligible after products over many steps.
    pub const IRLS_SCORE: f64 = 1e-11;
    pub const IRLS_MAX_ITER: usize = 100;
    /// Ridge scale (relative to the mean Gram diagonal) used only to
    /// resolve exact rank deficiency.
    pub const RIDGE: f64 = 1e-8;
    /// Relative threshold on QR diagonal entries below which a column is
    /// treated as linearly dependent.
    pub const RANK: f64 = 1e-10;
    /// Probabilities are clamped into `[floor, 1 - floor]` wherever a
    /// fitted rate is inverted or logged.
    pub const PROB_FLOOR: f64 = 1e-6;
}

#[derive(Debug, Error)]
pub enum RegressError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("design has no rows or no columns")]
    EmptyDesign,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative weight at row {0}")]
    NegativeWeight(usize),
    #[error("total weight is zero")]
    ZeroTotalWeight,
    #[error("binary response required (found {0})")]
    NotBinary(f64),
}

/// Dense row-major design matrix with named columns.
#[derive(Debug, Clone)]
pub struct DesignMatrix<S> {
    n_rows: usize,
    n_cols: usize,
    data: Vec<S>,
    names: Vec<String>,
}

impl<S: Scalar> DesignMatrix<S> {
    pub fn new(n_cols: usize, names: Vec<String>) -> Self {
        assert_eq!(n_cols, names.len(), "one name per column");
        Self {
            n_rows: 0,
            n_cols,
            data: Vec::new(),
            names,
        }
    }

    pub fn with_capacity(n_cols: usize, names: Vec<String>, rows: usize) -> Self {
        let mut m = Self::new(n_cols, names);
        m.data.reserve(rows * n_cols);
        m
    }

    pub fn push_row(&mut self, row: &[S]) {
        assert_eq!(row.len(), self.n_cols);
        self.data.extend_from_slice(row);
        self.n_rows += 1;
    }

    /// Append a row built as `[1, parts...]` without materializing it.
    pub fn push_intercept_row(&mut self, parts: &[&[S]]) {
        self.data.push(S::one());
        for p in parts {
            self.data.extend_from_slice(p);
        }
        self.n_rows += 1;
        debug_assert_eq!(self.data.len(), self.n_rows * self.n_cols);
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Weighted linear fit.
#[derive(Debug, Clone)]
pub struct LinearFit<S> {
    pub coefficients: Vec<S>,
    pub column_names: Vec<String>,
    /// Rows with strictly positive weight.
    pub n_used: usize,
    /// Rank deficiency was detected and resolved by a tiny ridge.
    pub degenerate: bool,
}

impl<S: Scalar> LinearFit<S> {
    #[inline]
    pub fn predict_row(&self, row: &[S]) -> S {
        dot(&self.coefficients, row)
    }
}

/// Why a logistic fit abandoned IRLS for the intercept-only fallback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fallback {
    /// All (positively weighted) responses equal.
    ConstantResponse,
    /// IRLS failed to converge within the iteration budget (typically
    /// complete or quasi-complete separation).
    NotConverged,
}

/// Weighted logistic fit.
#[derive(Debug, Clone)]
pub struct LogisticFit<S> {
    pub coefficients: Vec<S>,
    pub column_names: Vec<String>,
    pub n_used: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the returned fit is the intercept-only fallback.
    pub fallback: Option<Fallback>,
    /// A rank-deficient IRLS step was resolved by ridge.
    pub degenerate: bool,
}

impl<S: Scalar> LogisticFit<S> {
    /// Fitted probability for one design row (no clamping).
    #[inline]
    pub fn predict_prob(&self, row: &[S]) -> S {
        dot(&self.coefficients, row).expit()
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (x, y) in a.iter().zip(b) {
        acc += *x * *y;
    }
    acc
}

fn check_inputs<S: Scalar>(
    x: &DesignMatrix<S>,
    y: &[S],
    w: &[S],
) -> Result<(), RegressError> {
    if x.n_rows == 0 || x.n_cols == 0 {
        return Err(RegressError::EmptyDesign);
    }
    if y.len() != x.n_rows {
        return Err(RegressError::Dimension(format!(
            "response has {} entries for {} rows",
            y.len(),
            x.n_rows
        )));
    }
    if w.len() != x.n_rows {
        return Err(RegressError::Dimension(format!(
            "weights have {} entries for {} rows",
            w.len(),
            x.n_rows
        )));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite("design"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(RegressError::NonFinite("response"));
    }
    for (i, wi) in w.iter().enumerate() {
        if !wi.is_finite() {
            return Err(RegressError::NonFinite("weights"));
        }
        if *wi < S::zero() {
            return Err(RegressError::NegativeWeight(i));
        }
    }
    Ok(())
}

/// Weighted least squares: minimize `Σ_i w_i (y_i − x_i·β)²`.
///
/// Solved by Householder QR on the square-root-weighted system. An exactly
/// rank-deficient design is re-solved with a tiny ridge and flagged
/// [`LinearFit::degenerate`].
pub fn wls_fit<S: Scalar>(
    x: &DesignMatrix<S>,
    y: &[S],
    w: &[S],
) -> Result<LinearFit<S>, RegressError> {
    check_inputs(x, y, w)?;
    let n_used = w.iter().filter(|v| **v > S::zero()).count();
    if n_used == 0 {
        return Err(RegressError::ZeroTotalWeight);
    }
    let (n, p) = (x.n_rows, x.n_cols);

    // Column-major copy of sqrt(w)·X alongside sqrt(w)·y.
    let mut qr = vec![S::zero(); n * p];
    let mut rhs = vec![S::zero(); n];
    for i in 0..n {
        let sw = w[i].sqrt();
        let row = x.row(i);
        for j in 0..p {
            qr[j * n + i] = sw * row[j];
        }
        rhs[i] = sw * y[i];
    }

    let mut coefficients = vec![S::zero(); p];
    let mut degenerate = !householder_solve(&mut qr, &mut rhs, n, p, &mut coefficients);
    if degenerate {
        ridge_normal_solve(x, y, w, &mut coefficients);
    } else if coefficients.iter().any(|c| !c.is_finite()) {
        degenerate = true;
        ridge_normal_solve(x, y, w, &mut coefficients);
    }

    Ok(LinearFit {
        coefficients,
        column_names: x.names.clone(),
        n_used,
        degenerate,
    })
}

/// In-place Householder QR over a column-major `n × p` matrix, solving for
/// the least-squares coefficients. Returns `false` when the triangular
/// factor signals rank deficiency.
fn householder_solve<S: Scalar>(
    a: &mut [S],
    rhs: &mut [S],
    n: usize,
    p: usize,
    beta: &mut [S],
) -> bool {
    let steps = p.min(n);
    for k in 0..steps {
        // Householder vector for column k, rows k..n.
        let col = &a[k * n..(k + 1) * n];
        let mut norm = S::zero();
        for &v in &col[k..] {
            norm += v * v;
        }
        norm = norm.sqrt();
        if norm == S::zero() {
            continue; // leaves a zero diagonal → caught by the rank check
        }
        let alpha = if col[k] >= S::zero() { -norm } else { norm };
        let v0 = col[k] - alpha;
        // Normalizing constant of the reflector H = I − 2 vvᵀ/(vᵀv).
        let mut vtv = v0 * v0;
        for &vv in &col[k + 1..] {
            vtv += vv * vv;
        }
        if vtv == S::zero() {
            continue;
        }
        // Store reflector in place of the column (below diagonal) and the
        // new diagonal value alpha.
        let colm = &mut a[k * n..(k + 1) * n];
        colm[k] = alpha;
        // Keep the reflector's sub-vector in scratch local form: we apply
        // it immediately to the remaining columns, so only v is needed.
        let v_tail: Vec<S> = colm[k + 1..].to_vec();
        for j in (k + 1)..p {
            let cj = &mut a[j * n..(j + 1) * n];
            let mut proj = v0 * cj[k];
            for (vv, cv) in v_tail.iter().zip(&cj[k + 1..]) {
                proj += *vv * *cv;
            }
            let scale = (S::one() + S::one()) * proj / vtv;
            cj[k] -= scale * v0;
            for (vv, cv) in v_tail.iter().zip(cj[k + 1..].iter_mut()) {
                *cv -= scale * *vv;
            }
        }
        let mut proj = v0 * rhs[k];
        for (vv, rv) in v_tail.iter().zip(&rhs[k + 1..]) {
            proj += *vv * *rv;
        }
        let scale = (S::one() + S::one()) * proj / vtv;
        rhs[k] -= scale * v0;
        for (vv, rv) in v_tail.iter().zip(rhs[k + 1..].iter_mut()) {
            *rv -= scale * *vv;
        }
        // Zero the annihilated entries explicitly (cosmetic: they are
        // never read again, but keeps debug dumps readable).
        let colm = &mut a[k * n..(k + 1) * n];
        for vv in colm[k + 1..].iter_mut() {
            *vv = S::zero();
        }
    }

    // Rank check on the triangular diagonal.
    let mut max_diag = S::zero();
    for k in 0..steps {
        max_diag = max_diag.max(a[k * n + k].abs());
    }
    if p > n {
        return false;
    }
    let thresh = max_diag * S::of(tol::RANK);
    for k in 0..p {
        if a[k * n + k].abs() <= thresh {
            return false;
        }
    }

    // Back substitution: R β = rhs[..p].
    for k in (0..p).rev() {
        let mut acc = rhs[k];
        for j in (k + 1)..p {
            acc -= a[j * n + k] * beta[j];
        }
        beta[k] = acc / a[k * n + k];
    }
    beta.iter().all(|b| b.is_finite())
}

/// Ridge-regularized normal equations, used only on rank-deficient input.
/// The ridge is `tol::RIDGE` times the mean Gram diagonal, enough to make
/// the system positive definite without visibly moving fitted values.
fn ridge_normal_solve<S: Scalar>(x: &DesignMatrix<S>, y: &[S], w: &[S], beta: &mut [S]) {
    let p = x.n_cols;
    let mut gram = vec![S::zero(); p * p];
    let mut xty = vec![S::zero(); p];
    for i in 0..x.n_rows {
        let row = x.row(i);
        let wi = w[i];
        if wi == S::zero() {
            continue;
        }
        for a in 0..p {
            let wa = wi * row[a];
            xty[a] += wa * y[i];
            for b in a..p {
                gram[a * p + b] += wa * row[b];
            }
        }
    }
    let mut trace = S::zero();
    for a in 0..p {
        trace += gram[a * p + a];
    }
    let ridge = (trace / S::of_usize(p)).max(S::one()) * S::of(tol::RIDGE);
    for a in 0..p {
        gram[a * p + a] += ridge;
        for b in 0..a {
            gram[a * p + b] = gram[b * p + a];
        }
    }
    cholesky_solve(&mut gram, &xty, p, beta);
}

/// Solve a symmetric positive-definite system in place via Cholesky.
fn cholesky_solve<S: Scalar>(m: &mut [S], b: &[S], p: usize, out: &mut [S]) {
    // Factor m = L Lᵀ, L stored in the lower triangle.
    for k in 0..p {
        let mut d = m[k * p + k];
        for j in 0..k {
            d -= m[k * p + j] * m[k * p + j];
        }
        let d = d.max(S::of(1e-30)).sqrt();
        m[k * p + k] = d;
        for i in (k + 1)..p {
            let mut v = m[i * p + k];
            for j in 0..k {
                v -= m[i * p + j] * m[k * p + j];
            }
            m[i * p + k] = v / d;
        }
    }
    // Forward then backward substitution.
    for i in 0..p {
        let mut v = b[i];
        for j in 0..i {
            v -= m[i * p + j] * out[j];
        }
        out[i] = v / m[i * p + i];
    }
    for i in (0..p).rev() {
        let mut v = out[i];
        for j in (i + 1)..p {
            v -= m[j * p + i] * out[j];
        }
        out[i] = v / m[i * p + i];
    }
}

/// Weighted logistic regression of a 0/1 response via IRLS.
///
/// See the module docs for the convergence contract and fallback rules.
/// The fallback fit predicts the clamped weighted mean response through an
/// intercept-only coefficient vector (column 0 is treated as the
/// intercept, which holds for every design this crate builds).
pub fn logit_fit<S: Scalar>(
    x: &DesignMatrix<S>,
    y: &[S],
    w: &[S],
) -> Result<LogisticFit<S>, RegressError> {
    check_inputs(x, y, w)?;
    for &v in y {
        if !(v == S::zero() || v == S::one()) {
            return Err(RegressError::NotBinary(v.as_f64()));
        }
    }
    let n_used = w.iter().filter(|v| **v > S::zero()).count();
    if n_used == 0 {
        return Err(RegressError::ZeroTotalWeight);
    }
    let (n, p) = (x.n_rows, x.n_cols);

    // Weighted mean response; also detects a constant response.
    let mut wsum = S::zero();
    let mut wy = S::zero();
    for i in 0..n {
        wsum += w[i];
        wy += w[i] * y[i];
    }
    let rate = wy / wsum;
    let fallback_fit = |reason: Fallback, iterations: usize| {
        let floor = S::of(tol::PROB_FLOOR);
        let clamped = rate.max(floor).min(S::one() - floor);
        let mut coefficients = vec![S::zero(); p];
        coefficients[0] = clamped.logit();
        LogisticFit {
            coefficients,
            column_names: x.names.clone(),
            n_used,
            iterations,
            converged: false,
            fallback: Some(reason),
            degenerate: false,
        }
    };
    if rate == S::zero() || rate == S::one() {
        return Ok(fallback_fit(Fallback::ConstantResponse, 0));
    }

    let mut theta = vec![S::zero(); p];
    let mut eta = vec![S::zero(); n];
    let mut z = vec![S::zero(); n];
    let mut ww = vec![S::zero(); n];
    let tiny = S::of(1e-10);
    let mut prev_ll = S::neg_infinity();
    let mut degenerate = false;

    for it in 1..=tol::IRLS_MAX_ITER {
        let mut ll = S::zero();
        let mut score_max = S::zero();
        let mut score = vec![S::zero(); p];
        for i in 0..n {
            eta[i] = dot(&theta, x.row(i));
            let pr = eta[i].expit();
            let var = (pr * (S::one() - pr)).max(tiny);
            ww[i] = w[i] * var;
            z[i] = eta[i] + (y[i] - pr) / var;
            let floor = S::of(1e-30);
            ll += w[i] * (y[i] * pr.max(floor).ln()
                + (S::one() - y[i]) * (S::one() - pr).max(floor).ln());
            let resid = w[i] * (y[i] - pr);
            for (s, xv) in score.iter_mut().zip(x.row(i)) {
                *s += resid * *xv;
            }
        }
        for s in &score {
            score_max = score_max.max(s.abs());
        }

        let ll_change = (ll - prev_ll).abs()
            / (ll.abs().max(S::one()));
        if it > 1 && (score_max < S::of(tol::IRLS_SCORE) || ll_change < S::of(tol::IRLS_LOGLIK_REL))
        {
            // Complete/quasi-complete separation also drives the score to
            // zero, but only by saturating fitted probabilities at the
            // labels. A linear predictor beyond ±30 on a weighted row is
            // the standard tell; such "solutions" are runaway, not MLEs.
            let saturated = (0..n).any(|i| w[i] > S::zero() && eta[i].abs() > S::of(30.0));
            if saturated {
                return Ok(fallback_fit(Fallback::NotConverged, it - 1));
            }
            return Ok(LogisticFit {
                coefficients: theta,
                column_names: x.names.clone(),
                n_used,
                iterations: it - 1,
                converged: true,
                fallback: None,
                degenerate,
            });
        }
        prev_ll = ll;

        let step = wls_fit(x, &z, &ww)?;
        degenerate = degenerate || step.degenerate;
        theta = step.coefficients;
        if theta.iter().any(|t| !t.is_finite()) {
            return Ok(fallback_fit(Fallback::NotConverged, it));
        }
    }
    Ok(fallback_fit(Fallback::NotConverged, tol::IRLS_MAX_ITER))
}

/// Intercept-only fluctuation of an offset: the weighted-least-squares
/// solution of `response ≈ offset + ε`, namely
/// `ε̂ = Σ w (response − offset) / Σ w`.
pub fn offset_intercept_fit<S: Scalar>(
    response: &[S],
    offset: &[S],
    w: &[S],
) -> Result<S, RegressError> {
    if response.len() != offset.len() || response.len() != w.len() {
        return Err(RegressError::Dimension(format!(
            "response {}, offset {}, weights {}",
            response.len(),
            offset.len(),
            w.len()
        )));
    }
    let mut num = S::zero();
    let mut den = S::zero();
    for i in 0..response.len() {
        if !response[i].is_finite() || !offset[i].is_finite() {
            return Err(RegressError::NonFinite("response/offset"));
        }
        if !w[i].is_finite() {
            return Err(RegressError::NonFinite("weights"));
        }
        if w[i] < S::zero() {
            return Err(RegressError::NegativeWeight(i));
        }
        num += w[i] * (response[i] - offset[i]);
        den += w[i];
    }
    if den <= S::zero() {
        return Err(RegressError::ZeroTotalWeight);
    }
    Ok(num / den)
}
