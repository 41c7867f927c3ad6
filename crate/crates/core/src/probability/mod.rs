//! Error laws, the population score `G(t) = E psi(e + t)`, the
//! identification check built on it, moment audits, and the concentration
//! tools (Bennett tail bound, weighted strong law).

mod concentration;
mod distributions;

pub use concentration::{
    bennett_bound, verify_bennett, verify_weighted_slln, BoundedVarSpec, SllnReport, TailReport, TailRow,
    WeightSpec, SLLN_THRESHOLD,
};
pub use distributions::{log_pareto_table, ErrorDistribution, LogParetoTable, Sampler};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{self, ConvexLoss, IncrementGrid, IncrementReport};
use crate::quadrature;

/// Absolute tolerance for expectations. Tighter than the `1e-8` the checks
/// need, so slopes `G(u)/u` at `u ~ 1e-3` stay accurate.
const EXPECTATION_TOL: f64 = 1e-11;

/// Above this `ln|x|` tail integrands are assembled in log space.
const LOG_SPACE_CUTOFF: f64 = 300.0;

/// `ln |psi(x)|` and its sign for `|x| = e^u` so large that shifts by `t`
/// no longer matter.
fn far_score(loss: &ConvexLoss, u: f64, side: f64) -> (f64, f64) {
    match *loss {
        ConvexLoss::Huber { c } => (side, c.ln()),
        ConvexLoss::Power { q } => (side, q.ln() + (q - 1.0) * u),
        ConvexLoss::Quantile { alpha } => {
            if side > 0.0 {
                (1.0, alpha.ln())
            } else {
                (-1.0, (1.0 - alpha).ln())
            }
        }
    }
}

struct Integrand<'a, F> {
    dist: &'a ErrorDistribution,
    phi: F,
    /// `(sign, ln|phi|)` at `side * e^u` for huge `u`
    far: &'a dyn Fn(f64, f64) -> (f64, f64),
}

impl<F: Fn(f64) -> f64> Integrand<'_, F> {
    fn tail_term(&self, u: f64, side: f64) -> f64 {
        if u < LOG_SPACE_CUTOFF {
            let x = side * u.exp();
            (self.phi)(x) * self.dist.density(x) * u.exp()
        } else {
            let (sign, ln_phi) = (self.far)(u, side);
            sign * (ln_phi + self.dist.ln_density_at_log(u) + u).exp()
        }
    }

    fn inner_radius(&self, kinks: &[f64]) -> f64 {
        let s = self.dist.scale();
        let m = kinks
            .iter()
            .chain(self.dist.breakpoints().iter())
            .fold(0.0f64, |a, b| a.max(b.abs()));
        (m + 2.0 * s).max(10.0 * s).max(1.0)
    }

    fn inner(&self, kinks: &[f64], radius: f64, tol: f64) -> Result<f64> {
        let mut pts: Vec<f64> = kinks
            .iter()
            .chain(self.dist.breakpoints().iter())
            .copied()
            .filter(|p| p.abs() < radius)
            .collect();
        pts.push(-radius);
        pts.push(radius);
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        let f = |x: f64| (self.phi)(x) * self.dist.density(x);
        Ok(quadrature::integrate_pieces(&f, &pts, tol)?.value)
    }

    /// `int phi(x) f(x) dx` over the real line.
    fn total(&self, kinks: &[f64], tol: f64) -> Result<f64> {
        let radius = self.inner_radius(kinks);
        let mut value = self.inner(kinks, radius, 0.5 * tol)?;
        for side in [1.0, -1.0] {
            value += quadrature::integrate_upper(|u| self.tail_term(u, side), radius.ln(), 0.25 * tol)?.value;
        }
        Ok(value)
    }

    /// `int_{|x| <= m} phi(x) f(x) dx` to relative accuracy `rel_tol`.
    fn truncated(&self, kinks: &[f64], m: f64, rel_tol: f64) -> Result<f64> {
        match self.truncated_abs(kinks, m, rel_tol) {
            Err(Error::QuadratureFailed { value, .. }) if value.is_finite() && value.abs() > 1.0 => {
                self.truncated_abs(kinks, m, rel_tol * value.abs())
            }
            other => other,
        }
    }

    fn truncated_abs(&self, kinks: &[f64], m: f64, tol: f64) -> Result<f64> {
        let radius = self.inner_radius(kinks);
        if m <= radius {
            let clipped: Vec<f64> = kinks.iter().copied().filter(|k| k.abs() < m).collect();
            return self.inner(&clipped, m, tol);
        }
        let mut value = self.inner(kinks, radius, 0.5 * tol)?;
        for side in [1.0, -1.0] {
            let f = |u: f64| self.tail_term(u, side);
            value += quadrature::integrate(f, radius.ln(), m.ln(), 0.25 * tol)?.value;
        }
        Ok(value)
    }
}

/// Whether `E|psi(e)| < inf`.
pub fn score_integrable(dist: &ErrorDistribution, loss: &ConvexLoss) -> bool {
    dist.moment_finite(loss.psi_growth())
}

/// `G(t) = E psi(e + t)` by adaptive quadrature.
pub fn g_function(dist: &ErrorDistribution, loss: &ConvexLoss, t: f64) -> Result<f64> {
    if !score_integrable(dist, loss) {
        return Err(Error::NonIntegrable);
    }
    let far = |u: f64, side: f64| far_score(loss, u, side);
    let integrand = Integrand { dist, phi: |x: f64| loss.psi(x + t), far: &far };
    let kinks: Vec<f64> = loss.kinks().into_iter().map(|k| k - t).collect();
    integrand.total(&kinks, EXPECTATION_TOL).map_err(|e| match e {
        Error::QuadratureFailed { .. } if loss.psi_bound().is_none() => Error::NonIntegrable,
        other => other,
    })
}

/// `E psi(e)^2`, finite only for bounded scores or light enough tails.
pub fn score_second_moment(dist: &ErrorDistribution, loss: &ConvexLoss) -> Result<f64> {
    if !dist.moment_finite(2.0 * loss.psi_growth()) {
        return Err(Error::NonIntegrable);
    }
    let far = |u: f64, side: f64| {
        let (_, l) = far_score(loss, u, side);
        (1.0, 2.0 * l)
    };
    let integrand = Integrand { dist, phi: |x: f64| loss.psi(x).powi(2), far: &far };
    integrand.total(&loss.kinks(), EXPECTATION_TOL)
}

/// `E[|psi(e)|^r 1{|e| <= m}]`
pub fn truncated_score_moment(dist: &ErrorDistribution, loss: &ConvexLoss, r: f64, m: f64) -> Result<f64> {
    let far = |u: f64, side: f64| {
        let (_, l) = far_score(loss, u, side);
        (1.0, r * l)
    };
    let integrand = Integrand { dist, phi: |x: f64| loss.psi(x).abs().powf(r), far: &far };
    integrand.truncated(&loss.kinks(), m, 1e-10)
}

/// `E[|e|^r 1{|e| <= m}]`
pub fn truncated_moment(dist: &ErrorDistribution, r: f64, m: f64) -> Result<f64> {
    let far = |u: f64, _side: f64| (1.0, r * u);
    let integrand = Integrand { dist, phi: |x: f64| x.abs().powf(r), far: &far };
    integrand.truncated(&[0.0], m, 1e-10)
}

/// Truncation levels for the moment audit.
pub const AUDIT_LEVELS: [f64; 2] = [1e8, 1e12];
/// Relative growth between the audit levels above which a moment is
/// classified as infinite.
pub const AUDIT_GROWTH: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentAudit {
    pub order: f64,
    pub levels: Vec<f64>,
    pub truncated: Vec<f64>,
    pub relative_growth: f64,
    pub finite: bool,
}

/// Numerically classifies `E|psi(e)|^r` as finite or infinite from the
/// growth of truncated moments between `1e8` and `1e12`.
pub fn audit_score_moment(dist: &ErrorDistribution, loss: &ConvexLoss, r: f64) -> Result<MomentAudit> {
    let truncated = AUDIT_LEVELS
        .iter()
        .map(|&m| truncated_score_moment(dist, loss, r, m))
        .collect::<Result<Vec<_>>>()?;
    let relative_growth = (truncated[1] - truncated[0]) / truncated[0].abs().max(f64::MIN_POSITIVE);
    Ok(MomentAudit {
        order: r,
        levels: AUDIT_LEVELS.to_vec(),
        truncated,
        relative_growth,
        finite: relative_growth < AUDIT_GROWTH,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Increment bound estimate, `psi(u+h) - psi(u) <= c0` for `h < delta`.
    pub c0: f64,
    /// Identification slope, `|G(u)| >= c1 |u|` for `|u| <= delta`.
    pub c1: f64,
    pub delta: f64,
    /// `G(0) = E psi(e)`
    pub mean_psi: f64,
    pub passed: bool,
    /// `(u, G(u))` pairs.
    pub evidence_grid: Vec<(f64, f64)>,
    pub increment: IncrementReport,
}

pub const IDENTIFICATION_GRID: usize = 50;
pub const MEAN_SCORE_TOL: f64 = 1e-6;

/// Checks `E psi(e) = 0` and `|E psi(e + u)| >= c1 |u|` on the grid
/// `u = +-delta k / 50`, `k = 1..50`.
pub fn check_identification(dist: &ErrorDistribution, loss: &ConvexLoss, delta: f64) -> Result<ConditionReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    let mean_psi = g_function(dist, loss, 0.0)?;
    let mut evidence_grid = Vec::with_capacity(2 * IDENTIFICATION_GRID);
    let mut c1 = f64::INFINITY;
    for k in 1..=IDENTIFICATION_GRID {
        let u = delta * k as f64 / IDENTIFICATION_GRID as f64;
        for v in [-u, u] {
            let g = g_function(dist, loss, v)?;
            c1 = c1.min(g.abs() / v.abs());
            evidence_grid.push((v, g));
        }
    }
    evidence_grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let increment = losses::increment_bound(loss, delta, &IncrementGrid::default())?;
    Ok(ConditionReport {
        c0: increment.c0_grid,
        c1,
        delta,
        mean_psi,
        passed: c1 > 0.0 && mean_psi.abs() <= MEAN_SCORE_TOL,
        evidence_grid,
        increment,
    })
}
