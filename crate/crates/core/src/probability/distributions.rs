use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rand::Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::quadrature;
use crate::seed;

/// Symmetric error laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", try_from = "RawDistribution")]
pub enum ErrorDistribution {
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
    Cauchy { scale: f64 },
    StudentT { nu: f64 },
    /// Density proportional to `1 / (x^2 log^2 |x|)` on `|x| > x0`, `x0 >= e`.
    /// Finite mean absolute value, infinite `E|e|^(1+eta)` for every `eta > 0`.
    LogPareto { x0: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawDistribution {
    Gaussian { sigma: f64 },
    Laplace { scale: f64 },
    Cauchy { scale: f64 },
    StudentT { nu: f64 },
    LogPareto { x0: f64 },
}

impl TryFrom<RawDistribution> for ErrorDistribution {
    type Error = Error;

    fn try_from(raw: RawDistribution) -> Result<Self> {
        let d = match raw {
            RawDistribution::Gaussian { sigma } => ErrorDistribution::Gaussian { sigma },
            RawDistribution::Laplace { scale } => ErrorDistribution::Laplace { scale },
            RawDistribution::Cauchy { scale } => ErrorDistribution::Cauchy { scale },
            RawDistribution::StudentT { nu } => ErrorDistribution::StudentT { nu },
            RawDistribution::LogPareto { x0 } => ErrorDistribution::LogPareto { x0 },
        };
        d.validate()?;
        Ok(d)
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

impl ErrorDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorDistribution::Gaussian { sigma } => positive("sigma", sigma),
            ErrorDistribution::Laplace { scale } | ErrorDistribution::Cauchy { scale } => {
                positive("scale", scale)
            }
            ErrorDistribution::StudentT { nu } => positive("nu", nu),
            ErrorDistribution::LogPareto { x0 } => {
                if x0.is_finite() && x0 >= std::f64::consts::E * (1.0 - 1e-15) {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!("logpareto x0 must be >= e, got {x0}")))
                }
            }
        }
    }

    pub fn standard_normal() -> Self {
        ErrorDistribution::Gaussian { sigma: 1.0 }
    }

    pub fn log_pareto() -> Self {
        ErrorDistribution::LogPareto { x0: std::f64::consts::E }
    }

    pub fn density(&self, x: f64) -> f64 {
        match *self {
            ErrorDistribution::Gaussian { sigma } => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
            }
            ErrorDistribution::Laplace { scale } => (-x.abs() / scale).exp() / (2.0 * scale),
            ErrorDistribution::Cauchy { scale } => {
                let z = x / scale;
                1.0 / (PI * scale * (1.0 + z * z))
            }
            ErrorDistribution::StudentT { nu } => {
                (student_log_norm(nu) - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()).exp()
            }
            ErrorDistribution::LogPareto { x0 } => {
                let a = x.abs();
                if a <= x0 {
                    0.0
                } else {
                    let l = a.ln();
                    log_pareto_table(x0).half_density / (a * a * l * l)
                }
            }
        }
    }

    /// `ln f(e^u)`, stable for arbitrarily large `u`.
    pub fn ln_density_at_log(&self, u: f64) -> f64 {
        match *self {
            ErrorDistribution::Gaussian { sigma } => {
                let z = (u - sigma.ln()).exp();
                -0.5 * z * z - (sigma * (2.0 * PI).sqrt()).ln()
            }
            ErrorDistribution::Laplace { scale } => -u.exp() / scale - (2.0 * scale).ln(),
            ErrorDistribution::Cauchy { scale } => {
                let v = u - scale.ln();
                -(PI * scale).ln() - 2.0 * v - (-2.0 * v).exp().ln_1p()
            }
            ErrorDistribution::StudentT { nu } => {
                student_log_norm(nu) - 0.5 * (nu + 1.0) * (2.0 * u - nu.ln() + (nu * (-2.0 * u).exp()).ln_1p())
            }
            ErrorDistribution::LogPareto { x0 } => {
                if u <= x0.ln() {
                    f64::NEG_INFINITY
                } else {
                    log_pareto_table(x0).half_density.ln() - 2.0 * u - 2.0 * u.ln()
                }
            }
        }
    }

    /// Points where the density is not smooth.
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            ErrorDistribution::Laplace { .. } => vec![0.0],
            ErrorDistribution::LogPareto { x0 } => vec![-x0, x0],
            _ => Vec::new(),
        }
    }

    /// A length scale for splitting quadrature ranges.
    pub fn scale(&self) -> f64 {
        match *self {
            ErrorDistribution::Gaussian { sigma } => sigma,
            ErrorDistribution::Laplace { scale } | ErrorDistribution::Cauchy { scale } => scale,
            ErrorDistribution::StudentT { .. } => 1.0,
            ErrorDistribution::LogPareto { x0 } => x0,
        }
    }

    /// Whether `E|e|^r < inf`, from the tail index of the law.
    pub fn moment_finite(&self, r: f64) -> bool {
        if r <= 0.0 {
            return true;
        }
        match *self {
            ErrorDistribution::Gaussian { .. } | ErrorDistribution::Laplace { .. } => true,
            ErrorDistribution::Cauchy { .. } => r < 1.0,
            ErrorDistribution::StudentT { nu } => r < nu,
            ErrorDistribution::LogPareto { .. } => r <= 1.0,
        }
    }

    /// A sampler with any lookup tables resolved up front.
    pub fn sampler(&self) -> Sampler {
        let table = match *self {
            ErrorDistribution::LogPareto { x0 } => Some(log_pareto_table(x0)),
            _ => None,
        };
        Sampler { dist: *self, table }
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        self.sampler().draw(rng)
    }

    /// `n` draws, a deterministic function of `(self, n, seed)`.
    pub fn sample(&self, n: usize, seed_: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed_, &[n as u64]);
        let sampler = self.sampler();
        (0..n).map(|_| sampler.draw(&mut rng)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Sampler {
    dist: ErrorDistribution,
    table: Option<Arc<LogParetoTable>>,
}

impl Sampler {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> f64 {
        match self.dist {
            ErrorDistribution::Gaussian { sigma } => sigma * rng.sample::<f64, _>(StandardNormal),
            ErrorDistribution::Laplace { scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            ErrorDistribution::Cauchy { scale } => {
                Cauchy::new(0.0, scale).expect("validated scale").sample(rng)
            }
            ErrorDistribution::StudentT { nu } => StudentT::new(nu).expect("validated nu").sample(rng),
            ErrorDistribution::LogPareto { .. } => {
                let table = self.table.as_ref().expect("table resolved in sampler()");
                let v: f64 = 1.0 - rng.random::<f64>();
                let magnitude = table.inverse_survival(v);
                if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                }
            }
        }
    }
}

fn student_log_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

const TABLE_KNOTS: usize = 10_000;
const TABLE_X_MAX: f64 = 1e20;

/// Survival function of `|e|` for the log-Pareto law, tabulated in
/// `v = ln|x|`. With `T(v) = int_v^inf exp(-u) u^-2 du`, the survival is
/// `T(v) / T(ln x0)`.
#[derive(Debug)]
pub struct LogParetoTable {
    /// `1 / (2 T(ln x0))`, the density constant on each side.
    pub half_density: f64,
    log_x: Vec<f64>,
    log_survival: Vec<f64>,
}

fn log_pareto_kernel(u: f64) -> f64 {
    (-u).exp() / (u * u)
}

impl LogParetoTable {
    fn build(x0: f64) -> Self {
        let v0 = x0.ln();
        let v_max = TABLE_X_MAX.ln();
        let step = (v_max - v0) / (TABLE_KNOTS - 1) as f64;
        let log_x: Vec<f64> = (0..TABLE_KNOTS).map(|k| v0 + k as f64 * step).collect();
        let tail = quadrature::integrate_upper(log_pareto_kernel, v_max, 1e-30)
            .expect("log-Pareto tail integral")
            .value;
        let mut remaining = vec![0.0; TABLE_KNOTS];
        remaining[TABLE_KNOTS - 1] = tail;
        for k in (0..TABLE_KNOTS - 1).rev() {
            let seg = quadrature::integrate(log_pareto_kernel, log_x[k], log_x[k + 1], 1e-14 * remaining[k + 1])
                .expect("log-Pareto segment integral")
                .value;
            remaining[k] = remaining[k + 1] + seg;
        }
        let total = remaining[0];
        let log_survival = remaining.iter().map(|t| (t / total).ln()).collect();
        LogParetoTable { half_density: 0.5 / total, log_x, log_survival }
    }

    /// `P(|e| > x)`
    pub fn survival(&self, x: f64) -> f64 {
        let v = x.ln();
        if v <= self.log_x[0] {
            return 1.0;
        }
        let last = self.log_x.len() - 1;
        if v >= self.log_x[last] {
            let t = log_pareto_kernel(v) * (1.0 - 2.0 / v + 6.0 / (v * v));
            return t * 2.0 * self.half_density;
        }
        let k = self.log_x.partition_point(|&a| a <= v) - 1;
        let frac = (v - self.log_x[k]) / (self.log_x[k + 1] - self.log_x[k]);
        (self.log_survival[k] + frac * (self.log_survival[k + 1] - self.log_survival[k])).exp()
    }

    /// The `x` with `P(|e| > x) = s`, for `s in (0, 1]`; monotone
    /// interpolation of `ln x` against `ln s` between knots.
    pub fn inverse_survival(&self, s: f64) -> f64 {
        let ls = s.ln();
        let last = self.log_x.len() - 1;
        if ls >= 0.0 {
            return self.log_x[0].exp();
        }
        if ls <= self.log_survival[last] {
            // beyond the table: s ~ 2 h e^-v v^-2 (1 - 2/v + 6/v^2), solved by Newton in v
            let target = ls - (2.0 * self.half_density).ln();
            let mut v = self.log_x[last];
            for _ in 0..50 {
                let g = -v - 2.0 * v.ln() + (1.0 - 2.0 / v + 6.0 / (v * v)).ln() - target;
                let dg = -1.0 - 2.0 / v;
                let next = v - g / dg;
                if (next - v).abs() < 1e-12 * v {
                    v = next;
                    break;
                }
                v = next;
            }
            return v.exp();
        }
        // log_survival is decreasing
        let k = self.log_survival.partition_point(|&a| a > ls);
        let (k0, k1) = (k - 1, k);
        let frac = (self.log_survival[k0] - ls) / (self.log_survival[k0] - self.log_survival[k1]);
        (self.log_x[k0] + frac * (self.log_x[k1] - self.log_x[k0])).exp()
    }
}

pub fn log_pareto_table(x0: f64) -> Arc<LogParetoTable> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<LogParetoTable>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("log-Pareto cache poisoned");
    guard
        .entry(x0.to_bits())
        .or_insert_with(|| Arc::new(LogParetoTable::build(x0)))
        .clone()
}
