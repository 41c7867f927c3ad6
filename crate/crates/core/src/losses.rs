//! Convex regression losses: Huber, power (`|x|^q`, `1 <= q <= 2`) and
//! regression quantiles.
//!
//! Every loss exposes its exact one-sided derivatives and one selected score
//! `psi` lying between them. At a kink the selection is the midpoint of the
//! subdifferential, so `psi(0) = alpha - 1/2` for quantiles and `0` for `|x|`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this exponent the power loss is treated as `|x|` at the origin.
const POWER_KINK_THRESHOLD: f64 = 1.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawLoss")]
pub enum ConvexLoss {
    Huber { c: f64 },
    Power { q: f64 },
    Quantile { alpha: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawLoss {
    Huber { c: f64 },
    Power { q: f64 },
    Quantile { alpha: f64 },
}

impl TryFrom<RawLoss> for ConvexLoss {
    type Error = Error;

    fn try_from(raw: RawLoss) -> Result<Self> {
        match raw {
            RawLoss::Huber { c } => ConvexLoss::huber(c),
            RawLoss::Power { q } => ConvexLoss::power(q),
            RawLoss::Quantile { alpha } => ConvexLoss::quantile(alpha),
        }
    }
}

impl ConvexLoss {
    pub fn huber(c: f64) -> Result<Self> {
        if c.is_finite() && c > 0.0 {
            Ok(ConvexLoss::Huber { c })
        } else {
            Err(Error::InvalidParameter(format!("huber c must be positive, got {c}")))
        }
    }

    pub fn power(q: f64) -> Result<Self> {
        if (1.0..=2.0).contains(&q) {
            Ok(ConvexLoss::Power { q })
        } else {
            Err(Error::InvalidParameter(format!("power q must lie in [1, 2], got {q}")))
        }
    }

    pub fn quantile(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(ConvexLoss::Quantile { alpha })
        } else {
            Err(Error::InvalidParameter(format!(
                "quantile alpha must lie in (0, 1), got {alpha}"
            )))
        }
    }

    /// Least absolute deviations, i.e. the median regression loss `|x|`.
    pub fn lad() -> Self {
        ConvexLoss::Power { q: 1.0 }
    }

    pub fn least_squares() -> Self {
        ConvexLoss::Power { q: 2.0 }
    }

    pub fn rho(&self, x: f64) -> f64 {
        match *self {
            ConvexLoss::Huber { c } => {
                let a = x.abs();
                if a <= c {
                    0.5 * x * x
                } else {
                    c * a - 0.5 * c * c
                }
            }
            ConvexLoss::Power { q } => {
                if q == 2.0 {
                    x * x
                } else if q == 1.0 {
                    x.abs()
                } else {
                    x.abs().powf(q)
                }
            }
            ConvexLoss::Quantile { alpha } => {
                if x >= 0.0 {
                    alpha * x
                } else {
                    (alpha - 1.0) * x
                }
            }
        }
    }

    /// Left and right derivatives `(psi_-(u), psi_+(u))` in closed form.
    pub fn psi_one_sided(&self, u: f64) -> (f64, f64) {
        match *self {
            ConvexLoss::Huber { c } => {
                let v = u.clamp(-c, c);
                (v, v)
            }
            ConvexLoss::Power { q } => {
                if u == 0.0 {
                    if q < POWER_KINK_THRESHOLD {
                        (-q, q)
                    } else {
                        (0.0, 0.0)
                    }
                } else {
                    let v = power_score(q, u);
                    (v, v)
                }
            }
            ConvexLoss::Quantile { alpha } => {
                if u > 0.0 {
                    (alpha, alpha)
                } else if u < 0.0 {
                    (alpha - 1.0, alpha - 1.0)
                } else {
                    (alpha - 1.0, alpha)
                }
            }
        }
    }

    /// The selected score. Midpoint of the subdifferential at kinks.
    pub fn psi(&self, u: f64) -> f64 {
        match *self {
            ConvexLoss::Huber { c } => u.clamp(-c, c),
            ConvexLoss::Power { q } => {
                if u == 0.0 {
                    0.0
                } else {
                    power_score(q, u)
                }
            }
            ConvexLoss::Quantile { alpha } => {
                if u > 0.0 {
                    alpha
                } else if u < 0.0 {
                    alpha - 1.0
                } else {
                    alpha - 0.5
                }
            }
        }
    }

    /// Points where `psi` is not differentiable (jumps or slope changes).
    pub fn kinks(&self) -> Vec<f64> {
        match *self {
            ConvexLoss::Huber { c } => vec![-c, c],
            ConvexLoss::Power { q } if q < 2.0 => vec![0.0],
            ConvexLoss::Power { .. } => Vec::new(),
            ConvexLoss::Quantile { .. } => vec![0.0],
        }
    }

    /// `sup |psi|` when the score is bounded.
    pub fn psi_bound(&self) -> Option<f64> {
        match *self {
            ConvexLoss::Huber { c } => Some(c),
            ConvexLoss::Power { q: 1.0 } => Some(1.0),
            ConvexLoss::Power { .. } => None,
            ConvexLoss::Quantile { alpha } => Some(alpha.max(1.0 - alpha)),
        }
    }

    /// Growth exponent `r` of the score: `|psi(u)| ~ |u|^r` as `|u| -> inf`.
    pub fn psi_growth(&self) -> f64 {
        match *self {
            ConvexLoss::Power { q } => q - 1.0,
            _ => 0.0,
        }
    }

    /// `sup { psi(u+h) - psi(u) : u real, 0 < h < delta }` in closed form.
    ///
    /// For the power loss the score `q sign(u)|u|^(q-1)` is Hölder with the
    /// largest increment straddling the origin, at `u = -h/2`.
    pub fn increment_sup(&self, delta: f64) -> f64 {
        match *self {
            ConvexLoss::Huber { c } => delta.min(2.0 * c),
            ConvexLoss::Power { q } => 2.0 * q * (0.5 * delta).powf(q - 1.0),
            ConvexLoss::Quantile { .. } => 1.0,
        }
    }
}

fn power_score(q: f64, u: f64) -> f64 {
    if q == 2.0 {
        2.0 * u
    } else if q == 1.0 {
        u.signum()
    } else {
        q * u.signum() * u.abs().powf(q - 1.0)
    }
}

/// Search grid for the score increment bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementGrid {
    pub u_min: f64,
    pub u_max: f64,
    pub u_step: f64,
    /// Increments probed, as fractions of `delta`.
    pub h_fractions: Vec<f64>,
}

impl Default for IncrementGrid {
    fn default() -> Self {
        IncrementGrid {
            u_min: -50.0,
            u_max: 50.0,
            u_step: 0.01,
            h_fractions: vec![0.1, 0.5, 1.0 - 1e-6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementReport {
    pub delta: f64,
    /// Largest `psi(u+h) - psi(u)` found on the grid.
    pub c0_grid: f64,
    pub c0_closed_form: f64,
    pub argmax_u: f64,
    pub argmax_h: f64,
}

/// Estimates `C0` in `psi(u+h) - psi(u) <= C0` for `h in (0, delta)`.
pub fn increment_bound(
    loss: &ConvexLoss,
    delta: f64,
    grid: &IncrementGrid,
) -> Result<IncrementReport> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidParameter(format!("delta must be positive, got {delta}")));
    }
    if grid.h_fractions.is_empty() || !(grid.u_step > 0.0) || grid.u_max < grid.u_min {
        return Err(Error::EmptyGrid);
    }
    let steps = ((grid.u_max - grid.u_min) / grid.u_step).round() as usize;
    let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
    for &frac in &grid.h_fractions {
        let h = frac * delta;
        if !(h > 0.0 && h < delta) {
            return Err(Error::InvalidParameter(format!(
                "increment fraction {frac} outside (0, 1)"
            )));
        }
        for i in 0..=steps {
            let u = grid.u_min + i as f64 * grid.u_step;
            let inc = loss.psi(u + h) - loss.psi(u);
            if inc > best.0 {
                best = (inc, u, h);
            }
        }
    }
    Ok(IncrementReport {
        delta,
        c0_grid: best.0,
        c0_closed_form: loss.increment_sup(delta),
        argmax_u: best.1,
        argmax_h: best.2,
    })
}
