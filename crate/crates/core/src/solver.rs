//! The M-estimate `argmin_b sum rho(y_i - x_i'b)`, a grid-search oracle for
//! checking it, and the centered objective process `D_n` evaluated along unit
//! directions of the normalized design.
//!
//! Kinked losses are minimized through a continuation on smoothed surrogates:
//! each kink is replaced by a quadratic on `[-s, s]`, and `s` shrinks
//! geometrically between stages. Within a stage every iteration tries a
//! damped Newton step and falls back to the majorize-minimize (iteratively
//! reweighted least squares) step, which never increases the objective.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, Design, NormalizedDesign};
use crate::error::{Error, Result};
use crate::losses::ConvexLoss;
use crate::quadrature;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOpts {
    /// Bound on the preconditioned gradient (the reweighted least squares
    /// step), relative to `1 + |b|`.
    pub grad_tol: f64,
    /// Relative objective decrease below which a stage stops.
    pub obj_tol: f64,
    /// Iteration cap per smoothing stage.
    pub max_iter: usize,
    pub smoothing_start: f64,
    pub smoothing_end: f64,
    pub smoothing_factor: f64,
}

impl Default for SolverOpts {
    fn default() -> Self {
        SolverOpts {
            grad_tol: 1e-8,
            obj_tol: 1e-9,
            max_iter: 500,
            smoothing_start: 1e-2,
            smoothing_end: 1e-8,
            smoothing_factor: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Unsmoothed objective at `beta_hat`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub smoothing_final: f64,
}

/// A loss with its kinks rounded off on `[-s, s]`.
#[derive(Debug, Clone, Copy)]
struct Smoothed {
    loss: ConvexLoss,
    s: f64,
}

impl Smoothed {
    fn needs_smoothing(loss: &ConvexLoss) -> bool {
        match *loss {
            ConvexLoss::Huber { .. } => false,
            ConvexLoss::Power { q } => q < 2.0,
            ConvexLoss::Quantile { .. } => true,
        }
    }

    /// `(value, score, curvature, reweighting weight)` at residual `r`.
    fn eval(&self, r: f64) -> (f64, f64, f64, f64) {
        match self.loss {
            ConvexLoss::Huber { c } => {
                let a = r.abs();
                if a <= c {
                    (0.5 * r * r, r, 1.0, 1.0)
                } else {
                    (c * a - 0.5 * c * c, c * r.signum(), 0.0, c / a)
                }
            }
            ConvexLoss::Power { q: 2.0 } => (r * r, 2.0 * r, 2.0, 2.0),
            ConvexLoss::Power { q } => power_smoothed(q, self.s, r),
            ConvexLoss::Quantile { alpha } => {
                let (v, d, c, w) = power_smoothed(1.0, self.s, r);
                let k = alpha - 0.5;
                (0.5 * v + k * r, 0.5 * d + k, 0.5 * c, 0.5 * w)
            }
        }
    }
}

fn power_smoothed(q: f64, s: f64, r: f64) -> (f64, f64, f64, f64) {
    let a = r.abs();
    if a <= s {
        let half_curv = 0.5 * q * s.powf(q - 2.0);
        let b = s.powf(q) * (1.0 - 0.5 * q);
        (half_curv * r * r + b, 2.0 * half_curv * r, 2.0 * half_curv, 2.0 * half_curv)
    } else {
        let pow = a.powf(q - 1.0);
        (a * pow, q * r.signum() * pow, q * (q - 1.0) * pow / a, q * pow / a)
    }
}

fn check_dims(design: &Design, y: &[f64]) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch { expected: design.n(), got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("response has non-finite entries".into()));
    }
    Ok(())
}

fn residuals(x: &DMatrix<f64>, y: &[f64], beta: &DVector<f64>) -> Vec<f64> {
    let fitted = x * beta;
    y.iter().zip(fitted.iter()).map(|(a, b)| a - b).collect()
}

/// `sum_i rho(y_i - x_i'beta)`
pub fn objective(design: &Design, y: &[f64], loss: &ConvexLoss, beta: &[f64]) -> Result<f64> {
    check_dims(design, y)?;
    if beta.len() != design.p() {
        return Err(Error::DimensionMismatch { expected: design.p(), got: beta.len() });
    }
    let b = DVector::from_column_slice(beta);
    Ok(residuals(design.matrix(), y, &b).into_iter().map(|r| loss.rho(r)).sum())
}

struct StageOutcome {
    iterations: usize,
    converged: bool,
}

fn run_stage(
    x: &DMatrix<f64>,
    y: &[f64],
    sm: &Smoothed,
    beta: &mut DVector<f64>,
    opts: &SolverOpts,
) -> Result<StageOutcome> {
    let n = y.len();
    let smoothed_objective = |b: &DVector<f64>| -> f64 {
        residuals(x, y, b).into_iter().map(|r| sm.eval(r).0).sum()
    };
    let mut weights = vec![0.0; n];
    let mut curvature = vec![0.0; n];
    let mut r = residuals(x, y, beta);
    for iter in 1..=opts.max_iter {
        let mut score = vec![0.0; n];
        let mut f = 0.0;
        for i in 0..n {
            let (v, d, c, w) = sm.eval(r[i]);
            f += v;
            score[i] = d;
            curvature[i] = c;
            weights[i] = w;
        }
        let grad = x.tr_mul(&DVector::from_vec(score));
        let mm_step = design::solve_weighted(x, &weights, &grad)?;
        let scale = 1.0 + beta.norm();
        if mm_step.norm() <= opts.grad_tol * scale {
            return Ok(StageOutcome { iterations: iter, converged: true });
        }

        let mut accepted: Option<(DVector<f64>, f64)> = None;
        if let Ok(newton) = design::solve_weighted(x, &curvature, &grad) {
            let slope = grad.dot(&newton);
            if slope > 0.0 {
                let mut t = 1.0;
                for _ in 0..8 {
                    let trial = &*beta + &newton * t;
                    let ft = smoothed_objective(&trial);
                    if ft <= f - 1e-4 * t * slope {
                        accepted = Some((trial, ft));
                        break;
                    }
                    t *= 0.5;
                }
            }
        }
        let (next, f_next) = match accepted {
            Some(v) => v,
            None => {
                let trial = &*beta + &mm_step;
                let ft = smoothed_objective(&trial);
                (trial, ft)
            }
        };
        if !(f_next < f) {
            // no representable descent left
            return Ok(StageOutcome { iterations: iter, converged: true });
        }
        let step = (&next - &*beta).norm();
        *beta = next;
        r = residuals(x, y, beta);
        if step <= opts.grad_tol * scale || f - f_next <= opts.obj_tol * (1.0 + f.abs()) {
            return Ok(StageOutcome { iterations: iter, converged: true });
        }
    }
    Ok(StageOutcome { iterations: opts.max_iter, converged: false })
}

fn smoothing_schedule(loss: &ConvexLoss, opts: &SolverOpts) -> Result<Vec<f64>> {
    if !Smoothed::needs_smoothing(loss) {
        return Ok(vec![0.0]);
    }
    let valid = opts.smoothing_start > 0.0
        && opts.smoothing_end > 0.0
        && opts.smoothing_end <= opts.smoothing_start
        && opts.smoothing_factor > 1.0;
    if !valid {
        return Err(Error::InvalidParameter("invalid smoothing schedule".into()));
    }
    let mut out = Vec::new();
    let mut s = opts.smoothing_start;
    while s > opts.smoothing_end * (1.0 + 1e-9) {
        out.push(s);
        s /= opts.smoothing_factor;
    }
    out.push(opts.smoothing_end);
    Ok(out)
}

/// Minimizes `sum rho(y_i - x_i'b)` from the least-squares start.
///
/// A result with `converged == false` is still returned when the final stage
/// exhausts `max_iter`.
pub fn fit(design: &Design, y: &[f64], loss: &ConvexLoss, opts: &SolverOpts) -> Result<FitResult> {
    check_dims(design, y)?;
    let x = design.matrix();
    let n = design.n();
    let schedule = smoothing_schedule(loss, opts)?;

    let xty = x.tr_mul(&DVector::from_column_slice(y));
    let mut beta = design::solve_weighted(x, &vec![1.0; n], &xty)?;

    let mut iterations = 0;
    let mut converged = false;
    for &s in &schedule {
        let sm = Smoothed { loss: *loss, s };
        let outcome = run_stage(x, y, &sm, &mut beta, opts)?;
        iterations += outcome.iterations;
        converged = outcome.converged;
    }
    let beta_hat: Vec<f64> = beta.iter().copied().collect();
    let objective = objective(design, y, loss, &beta_hat)?;
    Ok(FitResult {
        beta_hat,
        objective,
        iterations,
        converged,
        smoothing_final: *schedule.last().unwrap_or(&0.0),
    })
}

/// Axis-aligned search box for [`brute_force_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Vec<f64>,
    pub half_width: f64,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_rounds() -> usize {
    5
}
fn default_points() -> usize {
    41
}

impl BoxSpec {
    pub fn new(center: Vec<f64>, half_width: f64) -> Self {
        BoxSpec { center, half_width, rounds: default_rounds(), points: default_points() }
    }
}

pub const BRUTE_FORCE_MAX_P: usize = 3;
const MAX_RECENTER: usize = 50;
/// Largest number of `p`-subsets enumerated for piecewise-linear losses.
pub const MAX_VERTEX_SUBSETS: usize = 2_000_000;

fn piecewise_linear(loss: &ConvexLoss) -> bool {
    match *loss {
        ConvexLoss::Quantile { .. } => true,
        ConvexLoss::Power { q } => q == 1.0,
        ConvexLoss::Huber { .. } => false,
    }
}

fn subset_count(n: usize, p: usize) -> usize {
    (0..p).fold(1usize, |acc, k| acc.saturating_mul(n - k) / (k + 1))
}

/// Exhaustive search over the vertices of a piecewise-linear objective:
/// every minimizer set contains a point where `p` residuals vanish, so the
/// best fit through any `p` observations is a global minimizer.
fn vertex_fit(design: &Design, y: &[f64], loss: &ConvexLoss) -> Result<FitResult> {
    let (n, p) = (design.n(), design.p());
    let x = design.matrix();
    let mut subsets = Vec::with_capacity(subset_count(n, p));
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        subsets.push(idx.clone());
        let Some(k) = (0..p).rev().find(|&k| idx[k] < n - p + k) else { break };
        idx[k] += 1;
        for j in k + 1..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
    let scale = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let best = subsets
        .par_iter()
        .filter_map(|rows| {
            let a = DMatrix::from_fn(p, p, |i, j| x[(rows[i], j)]);
            let lu = a.lu();
            if lu.determinant().abs() <= 1e-10 * scale.powi(p as i32) {
                return None;
            }
            let b = DVector::from_iterator(p, rows.iter().map(|&i| y[i]));
            let beta = lu.solve(&b)?;
            let fitted = x * &beta;
            let value: f64 = y.iter().zip(fitted.iter()).map(|(a, f)| loss.rho(a - f)).sum();
            Some((value, beta))
        })
        .min_by(|a, b| a.0.total_cmp(&b.0));
    let (value, beta) = best.ok_or(Error::SingularGram { min_eig: 0.0, max_eig: scale })?;
    Ok(FitResult {
        beta_hat: beta.iter().copied().collect(),
        objective: value,
        iterations: subsets.len(),
        converged: true,
        smoothing_final: 0.0,
    })
}

/// Solver-independent minimizer for `p <= 3`.
///
/// Piecewise-linear losses (quantile, absolute value) are minimized exactly
/// by enumerating the fits through every `p` observations when there are at
/// most [`MAX_VERTEX_SUBSETS`] of them; the box is then ignored. Otherwise a
/// nested grid refinement evaluates `points^p` nodes per round and shrinks
/// the box to one grid spacing around the best node.
pub fn brute_force_fit(design: &Design, y: &[f64], loss: &ConvexLoss, bx: &BoxSpec) -> Result<FitResult> {
    check_dims(design, y)?;
    if design.p() <= BRUTE_FORCE_MAX_P
        && piecewise_linear(loss)
        && subset_count(design.n(), design.p()) <= MAX_VERTEX_SUBSETS
    {
        return vertex_fit(design, y, loss);
    }
    grid_fit(design, y, loss, bx)
}

fn grid_fit(design: &Design, y: &[f64], loss: &ConvexLoss, bx: &BoxSpec) -> Result<FitResult> {
    let p = design.p();
    if p > BRUTE_FORCE_MAX_P {
        return Err(Error::InvalidParameter(format!("grid search supports p <= 3, got {p}")));
    }
    if bx.center.len() != p {
        return Err(Error::DimensionMismatch { expected: p, got: bx.center.len() });
    }
    if bx.points < 3 || bx.rounds == 0 || !(bx.half_width > 0.0) {
        return Err(Error::InvalidParameter("degenerate search box".into()));
    }
    let x = design.matrix();
    let m = bx.points;
    let total = m.pow(p as u32);
    let eval = |beta: &[f64]| -> f64 {
        (0..design.n())
            .map(|i| {
                let fit: f64 = (0..p).map(|j| x[(i, j)] * beta[j]).sum();
                loss.rho(y[i] - fit)
            })
            .sum()
    };

    let mut center = bx.center.clone();
    let mut half = bx.half_width;
    let mut evaluations = 0;
    let mut best_val = f64::INFINITY;
    let mut round = 0;
    let mut recenters = 0;
    while round < bx.rounds {
        let spacing = 2.0 * half / (m - 1) as f64;
        let node = |k: usize| -> (Vec<usize>, Vec<f64>) {
            let mut idx = Vec::with_capacity(p);
            let mut rem = k;
            for _ in 0..p {
                idx.push(rem % m);
                rem /= m;
            }
            let beta = idx
                .iter()
                .zip(&center)
                .map(|(&i, c)| c - half + i as f64 * spacing)
                .collect();
            (idx, beta)
        };
        let (best_k, val) = (0..total)
            .into_par_iter()
            .map(|k| (k, eval(&node(k).1)))
            .reduce(
                || (usize::MAX, f64::INFINITY),
                |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
            );
        evaluations += total;
        let (idx, beta) = node(best_k);
        let on_edge = idx.iter().any(|&i| i == 0 || i == m - 1);
        best_val = val;
        center = beta;
        if on_edge {
            if round == 0 {
                return Err(Error::MinimizerOnBoundary);
            }
            recenters += 1;
            if recenters > MAX_RECENTER {
                return Err(Error::MinimizerOnBoundary);
            }
            continue;
        }
        half = spacing;
        round += 1;
    }
    Ok(FitResult {
        beta_hat: center,
        objective: best_val,
        iterations: evaluations,
        converged: true,
        smoothing_final: 0.0,
    })
}

/// `D_n(eps sqrt(n) gamma)` and its split into the curvature part `i1` and
/// the linear score part `i2`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DnTrace {
    pub direction: Vec<f64>,
    pub scale: f64,
    pub total: f64,
    pub i1: f64,
    pub i2: f64,
    /// `sum_i int_0^{w_i'gamma} (psi(e_i + t) - psi(e_i)) dt` by quadrature.
    pub i1_quadrature: f64,
}

const UNIT_TOL: f64 = 1e-9;

fn check_inputs(normalized: &NormalizedDesign, errors: &[f64], gamma: &[f64]) -> Result<()> {
    if errors.len() != normalized.n() {
        return Err(Error::DimensionMismatch { expected: normalized.n(), got: errors.len() });
    }
    if gamma.len() != normalized.p() {
        return Err(Error::DimensionMismatch { expected: normalized.p(), got: gamma.len() });
    }
    let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_TOL {
        return Err(Error::NonUnitDirection(norm));
    }
    Ok(())
}

/// `w_i'gamma = -eps sqrt(n) x_ni'gamma`
fn shifts(normalized: &NormalizedDesign, eps: f64, gamma: &[f64]) -> Vec<f64> {
    let scale = -eps * (normalized.n() as f64).sqrt();
    let g = DVector::from_column_slice(gamma);
    (normalized.matrix() * g).iter().map(|v| scale * v).collect()
}

/// `(total, i1, i2)` without the quadrature cross-check.
pub fn dn_components(
    normalized: &NormalizedDesign,
    errors: &[f64],
    loss: &ConvexLoss,
    eps: f64,
    gamma: &[f64],
) -> Result<(f64, f64, f64)> {
    check_inputs(normalized, errors, gamma)?;
    let w = shifts(normalized, eps, gamma);
    let mut total = 0.0;
    let mut i2 = 0.0;
    for (e, wi) in errors.iter().zip(&w) {
        total += loss.rho(e + wi) - loss.rho(*e);
        i2 += wi * loss.psi(*e);
    }
    Ok((total, total - i2, i2))
}

fn increment_integral(loss: &ConvexLoss, e: f64, w: f64) -> Result<f64> {
    if w == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if w > 0.0 { (0.0, w, 1.0) } else { (w, 0.0, -1.0) };
    let base = loss.psi(e);
    let mut pts = vec![lo];
    pts.extend(loss.kinks().into_iter().map(|k| k - e).filter(|&t| t > lo && t < hi));
    pts.push(hi);
    let tol = 1e-13 * (1.0 + (hi - lo) * (1.0 + base.abs()));
    let est = quadrature::integrate_pieces(&|t| loss.psi(e + t) - base, &pts, tol)?;
    Ok(sign * est.value)
}

pub fn dn_trace(
    normalized: &NormalizedDesign,
    errors: &[f64],
    loss: &ConvexLoss,
    eps: f64,
    gamma: &[f64],
) -> Result<DnTrace> {
    let (total, i1, i2) = dn_components(normalized, errors, loss, eps, gamma)?;
    let w = shifts(normalized, eps, gamma);
    let mut i1_quadrature = 0.0;
    for (e, wi) in errors.iter().zip(&w) {
        i1_quadrature += increment_integral(loss, *e, *wi)?;
    }
    Ok(DnTrace { direction: gamma.to_vec(), scale: eps, total, i1, i2, i1_quadrature })
}

/// Uniformly distributed unit vector.
pub fn random_direction<R: Rng>(rng: &mut R, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub n: usize,
    pub eps: f64,
    pub directions: usize,
    pub min_total: f64,
    pub min_i1: f64,
    pub max_abs_i2: f64,
    /// `C1 eps^2 n / 8`
    pub i1_bound: f64,
    pub i1_bound_holds: bool,
    /// `min D_n > 0` over the sampled directions; by convexity and
    /// `D_n(0) = 0` this places the normalized estimate inside the ball of
    /// radius `eps sqrt(n)`.
    pub total_positive: bool,
    /// `C2 eps^2 n / 16` when a leverage constant is supplied.
    pub i2_bound: Option<f64>,
    pub i2_bound_holds: Option<bool>,
    /// Largest `|total - (i1 + i2)|`.
    pub max_split_residual: f64,
    /// Relative gap between `i1` and its quadrature recomputation on the
    /// first sampled direction.
    pub quadrature_rel_gap: f64,
}

/// The unit directions examined by [`verify_dn_lower_bound`] for a sample
/// of size `n`.
pub fn sample_directions(p: usize, count: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::rng(seed, &[0xD1EC, n as u64]);
    (0..count).map(|_| random_direction(&mut rng, p)).collect()
}

/// Lower-bound evidence for `inf_gamma D_n(eps sqrt(n) gamma)` over sampled
/// unit directions. `c1` comes from an identification check; `c2` is the
/// design's leverage constant.
#[allow(clippy::too_many_arguments)]
pub fn verify_dn_lower_bound(
    normalized: &NormalizedDesign,
    errors: &[f64],
    loss: &ConvexLoss,
    eps: f64,
    n_directions: usize,
    seed: u64,
    c1: f64,
    c2: Option<f64>,
) -> Result<BoundReport> {
    if n_directions == 0 {
        return Err(Error::EmptyGrid);
    }
    let n = normalized.n();
    let directions = sample_directions(normalized.p(), n_directions, n, seed);
    let mut min_total = f64::INFINITY;
    let mut min_i1 = f64::INFINITY;
    let mut max_abs_i2: f64 = 0.0;
    let mut max_split_residual: f64 = 0.0;
    let mut quadrature_rel_gap = 0.0;
    for (k, gamma) in directions.iter().enumerate() {
        let (total, i1, i2) = if k == 0 {
            let t = dn_trace(normalized, errors, loss, eps, gamma)?;
            quadrature_rel_gap = (t.i1 - t.i1_quadrature).abs() / t.i1.abs().max(f64::MIN_POSITIVE);
            if t.i1 == 0.0 && t.i1_quadrature == 0.0 {
                quadrature_rel_gap = 0.0;
            }
            (t.total, t.i1, t.i2)
        } else {
            dn_components(normalized, errors, loss, eps, gamma)?
        };
        min_total = min_total.min(total);
        min_i1 = min_i1.min(i1);
        max_abs_i2 = max_abs_i2.max(i2.abs());
        max_split_residual = max_split_residual.max((total - (i1 + i2)).abs());
    }
    let scale = eps * eps * n as f64;
    let i1_bound = c1 * scale / 8.0;
    let i2_bound = c2.map(|c| c * scale / 16.0);
    Ok(BoundReport {
        n,
        eps,
        directions: n_directions,
        min_total,
        min_i1,
        max_abs_i2,
        i1_bound,
        i1_bound_holds: min_i1 >= i1_bound,
        total_positive: min_total > 0.0,
        i2_bound,
        i2_bound_holds: i2_bound.map(|b| max_abs_i2 <= b),
        max_split_residual,
        quadrature_rel_gap,
    })
}

/// `2 C2 eps < delta`, the side condition tying the ball radius to the
/// neighbourhood on which the identification bound holds.
pub fn radius_condition(c2: f64, eps: f64, delta: f64) -> bool {
    2.0 * c2 * eps < delta
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{generate_design, normalize, summarize, DesignGenSpec};

    fn ones(n: usize) -> Design {
        Design::new(DMatrix::from_element(n, 1, 1.0)).unwrap()
    }

    #[test]
    fn objective_examples() {
        let d = ones(3);
        let y = [-1.0, 0.0, 1.0];
        assert_eq!(objective(&d, &y, &ConvexLoss::lad(), &[0.0]).unwrap(), 2.0);
        let h = ConvexLoss::huber(1.0).unwrap();
        let d2 = ones(2);
        assert!((objective(&d2, &[0.5, 2.0], &h, &[0.0]).unwrap() - 1.625).abs() < 1e-15);
        let gd = generate_design(&DesignGenSpec::GaussianIid { p: 2 }, 20, 1).unwrap();
        let b = DVector::from_vec(vec![0.3, -1.2]);
        let y: Vec<f64> = gd.apply(&b).unwrap().iter().copied().collect();
        for loss in [h, ConvexLoss::lad(), ConvexLoss::quantile(0.2).unwrap()] {
            assert_eq!(objective(&gd, &y, &loss, &[0.3, -1.2]).unwrap(), 0.0);
        }
        assert!(matches!(
            objective(&d, &y[..2], &h, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn median_by_lad_and_median_quantile() {
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0];
        let d = ones(7);
        for loss in [ConvexLoss::lad(), ConvexLoss::quantile(0.5).unwrap()] {
            let r = fit(&d, &y, &loss, &SolverOpts::default()).unwrap();
            assert!(r.converged);
            assert!((r.beta_hat[0] - 3.0).abs() < 1e-6, "{r:?}");
            let bf = brute_force_fit(&d, &y, &loss, &BoxSpec::new(vec![0.0], 20.0)).unwrap();
            assert!((bf.beta_hat[0] - 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn least_squares_closed_form() {
        let d = generate_design(&DesignGenSpec::GaussianIid { p: 3 }, 25, 3).unwrap();
        let y: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
        let r = fit(&d, &y, &ConvexLoss::least_squares(), &SolverOpts::default()).unwrap();
        let x = d.matrix();
        let ls = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * DVector::from_vec(y.clone());
        for j in 0..3 {
            assert!((r.beta_hat[j] - ls[j]).abs() < 1e-10);
        }
        let bf = brute_force_fit(&d, &y, &ConvexLoss::least_squares(), &BoxSpec::new(vec![0.0; 3], 10.0))
            .unwrap();
        for j in 0..3 {
            assert!((bf.beta_hat[j] - ls[j]).abs() < 1e-4);
        }
    }

    #[test]
    fn huber_matches_oracle() {
        let d = generate_design(&DesignGenSpec::GaussianIid { p: 2 }, 40, 11).unwrap();
        let mut rng = seed::rng(11, &[1]);
        let y: Vec<f64> = (0..40)
            .map(|i| d.matrix()[(i, 0)] - 0.5 * d.matrix()[(i, 1)] + rng.sample::<f64, _>(StandardNormal) * 2.0)
            .collect();
        let loss = ConvexLoss::huber(1.345).unwrap();
        let r = fit(&d, &y, &loss, &SolverOpts::default()).unwrap();
        let bf = brute_force_fit(&d, &y, &loss, &BoxSpec::new(vec![0.0; 2], 8.0)).unwrap();
        assert!(r.objective <= bf.objective + 1e-9);
        assert!((r.objective - bf.objective).abs() <= 1e-6 * r.objective.abs());
    }

    #[test]
    fn quantile_order_statistic() {
        let y: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = ones(100);
        let loss = ConvexLoss::quantile(0.25).unwrap();
        // the minimizers form the interval [25, 26]
        let bf = brute_force_fit(&d, &y, &loss, &BoxSpec::new(vec![50.0], 60.0)).unwrap();
        assert!(bf.beta_hat[0] >= 25.0 - 1e-4 && bf.beta_hat[0] <= 26.0 + 1e-4, "{bf:?}");
        let r = fit(&d, &y, &loss, &SolverOpts::default()).unwrap();
        assert!(r.beta_hat[0] >= 25.0 - 1e-5 && r.beta_hat[0] <= 26.0 + 1e-5, "{r:?}");
        assert!((r.objective - bf.objective).abs() < 1e-6 * (1.0 + r.objective));
    }

    #[test]
    fn brute_force_rejects_small_box() {
        let y = [10.0, 11.0, 12.0];
        let err = brute_force_fit(&ones(3), &y, &ConvexLoss::huber(1.0).unwrap(), &BoxSpec::new(vec![0.0], 1.0));
        assert_eq!(err.unwrap_err(), Error::MinimizerOnBoundary);
    }

    #[test]
    fn vertex_search_for_lad_lines() {
        // y = 1 + 2x exactly except one gross outlier; LAD recovers the line
        let rows: Vec<Vec<f64>> = (0..9).map(|i| vec![1.0, i as f64]).collect();
        let d = Design::from_rows(&rows).unwrap();
        let mut y: Vec<f64> = (0..9).map(|i| 1.0 + 2.0 * i as f64).collect();
        y[4] += 100.0;
        let bf = brute_force_fit(&d, &y, &ConvexLoss::lad(), &BoxSpec::new(vec![0.0; 2], 1.0)).unwrap();
        assert!((bf.beta_hat[0] - 1.0).abs() < 1e-12 && (bf.beta_hat[1] - 2.0).abs() < 1e-12);
        assert!((bf.objective - 100.0).abs() < 1e-10);
        assert_eq!(bf.iterations, 36);
    }

    #[test]
    fn subset_counts() {
        assert_eq!(subset_count(50, 3), 19_600);
        assert_eq!(subset_count(7, 1), 7);
        assert_eq!(subset_count(5, 5), 1);
    }

    #[test]
    fn singular_design_rejected() {
        let d = Design::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let r = fit(&d, &[1.0, 2.0, 3.0], &ConvexLoss::huber(1.0).unwrap(), &SolverOpts::default());
        assert!(matches!(r, Err(Error::SingularGram { .. })));
    }

    #[test]
    fn max_iter_reports_not_converged() {
        let d = generate_design(&DesignGenSpec::GaussianIid { p: 2 }, 50, 2).unwrap();
        let y: Vec<f64> = (0..50).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let opts = SolverOpts { max_iter: 1, ..SolverOpts::default() };
        let r = fit(&d, &y, &ConvexLoss::lad(), &opts).unwrap();
        assert!(!r.converged);
    }

    fn errors_for(n: usize, seed_: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_, &[]);
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn dn_trace_zero_scale() {
        let d = generate_design(&DesignGenSpec::GaussianIid { p: 2 }, 30, 5).unwrap();
        let z = normalize(&d, &summarize(&d).unwrap()).unwrap();
        let e = errors_for(30, 1);
        let t = dn_trace(&z, &e, &ConvexLoss::huber(1.0).unwrap(), 0.0, &[0.6, 0.8]).unwrap();
        assert_eq!((t.total, t.i1, t.i2), (0.0, 0.0, 0.0));
    }

    #[test]
    fn dn_trace_least_squares_closed_form() {
        let d = generate_design(&DesignGenSpec::GaussianIid { p: 3 }, 60, 9).unwrap();
        let z = normalize(&d, &summarize(&d).unwrap()).unwrap();
        let e = errors_for(60, 2);
        let gamma = [2.0 / 3.0, -1.0 / 3.0, 2.0 / 3.0];
        let t = dn_trace(&z, &e, &ConvexLoss::least_squares(), 0.7, &gamma).unwrap();
        let w = shifts(&z, 0.7, &gamma);
        let exact: f64 = w.iter().map(|v| v * v).sum();
        assert!((t.i1 - exact).abs() < 1e-10 * exact);
        assert!((t.i1_quadrature - exact).abs() < 1e-10 * exact);
        // sum (x_ni'gamma)^2 = 1, so i1 = eps^2 n
        assert!((exact - 0.49 * 60.0).abs() < 1e-9);
    }

    #[test]
    fn dn_trace_split_and_quadrature() {
        let losses = [
            ConvexLoss::huber(1.0).unwrap(),
            ConvexLoss::lad(),
            ConvexLoss::power(1.5).unwrap(),
            ConvexLoss::quantile(0.3).unwrap(),
        ];
        for (k, loss) in losses.iter().enumerate() {
            let d = generate_design(&DesignGenSpec::GaussianIid { p: 2 }, 80, k as u64).unwrap();
            let z = normalize(&d, &summarize(&d).unwrap()).unwrap();
            let e = errors_for(80, 10 + k as u64);
            let t = dn_trace(&z, &e, loss, 0.5, &[0.8, -0.6]).unwrap();
            assert!((t.total - (t.i1 + t.i2)).abs() <= 1e-8);
            assert!((t.i1 - t.i1_quadrature).abs() <= 1e-6 * t.i1.abs(), "{loss:?} {t:?}");
            assert!(t.i1 >= 0.0);
        }
    }

    #[test]
    fn non_unit_direction_rejected() {
        let d = generate_design(&DesignGenSpec::OrthogonalBlocks { p: 2 }, 10, 0).unwrap();
        let z = normalize(&d, &summarize(&d).unwrap()).unwrap();
        let e = errors_for(10, 0);
        assert!(matches!(
            dn_trace(&z, &e, &ConvexLoss::lad(), 0.5, &[1.0, 1.0]),
            Err(Error::NonUnitDirection(_))
        ));
    }

    #[test]
    fn lower_bound_zero_scale() {
        let d = generate_design(&DesignGenSpec::OrthogonalBlocks { p: 2 }, 100, 0).unwrap();
        let z = normalize(&d, &summarize(&d).unwrap()).unwrap();
        let e = errors_for(100, 3);
        let r = verify_dn_lower_bound(&z, &e, &ConvexLoss::least_squares(), 0.0, 20, 1, 2.0, Some(2.0))
            .unwrap();
        assert_eq!(r.min_total, 0.0);
        assert!(!r.total_positive);
    }

    #[test]
    fn radius_condition_examples() {
        assert!(radius_condition(2.0, 0.5, 2.5));
        assert!(!radius_condition(2.0, 0.5, 0.25));
    }
}
