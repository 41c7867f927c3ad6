use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{g_function, score_second_moment, ErrorDistribution};
use crate::design::{self, generate_design, normalize, summarize, DesignGenSpec};
use crate::error::{Error, Result};
use crate::losses::ConvexLoss;
use crate::seed;

/// Bennett-type bound `min(1, 2 exp(-eps^2 / (2 b eps + 2 bsq)))` on
/// `P(|X_1 + ... + X_n| > eps)` for independent centered `|X_i| <= b` with
/// `sum E X_i^2 = bsq`.
pub fn bennett_bound(eps: f64, b: f64, bsq: f64) -> f64 {
    let denom = 2.0 * b * eps + 2.0 * bsq;
    if eps <= 0.0 || denom <= 0.0 {
        return 1.0;
    }
    (2.0 * (-eps * eps / denom).exp()).min(1.0)
}

/// Centered bounded variables for tail-bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundedVarSpec {
    /// `+-1` with equal probability.
    Rademacher,
    /// `psi(e) - E psi(e)` for a bounded score.
    CenteredScore { loss: ConvexLoss, dist: ErrorDistribution },
}

struct Resolved {
    bound: f64,
    variance: f64,
    mean: f64,
}

impl BoundedVarSpec {
    fn resolve(&self) -> Result<Resolved> {
        match self {
            BoundedVarSpec::Rademacher => Ok(Resolved { bound: 1.0, variance: 1.0, mean: 0.0 }),
            BoundedVarSpec::CenteredScore { loss, dist } => {
                let Some(sup) = loss.psi_bound() else {
                    return Err(Error::UnboundedSpec(format!("{loss:?} has an unbounded score")));
                };
                let mean = g_function(dist, loss, 0.0)?;
                let second = score_second_moment(dist, loss)?;
                Ok(Resolved { bound: sup + mean.abs(), variance: (second - mean * mean).max(0.0), mean })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRow {
    pub eps: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error of the frequency at probability `bound`.
    pub std_error: f64,
    pub dominated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailReport {
    pub n: usize,
    pub reps: usize,
    pub b: f64,
    pub bsq: f64,
    pub rows: Vec<TailRow>,
    pub all_dominated: bool,
}

const REPS_PER_BLOCK: usize = 1000;

/// Compares the empirical frequency of `|X_1 + ... + X_n| > eps` over
/// `reps` replications with the Bennett bound, allowing three binomial
/// standard errors.
pub fn verify_bennett(
    spec: &BoundedVarSpec,
    n: usize,
    eps_grid: &[f64],
    reps: usize,
    seed_: u64,
) -> Result<TailReport> {
    if eps_grid.is_empty() || reps == 0 || n == 0 {
        return Err(Error::EmptyGrid);
    }
    let resolved = spec.resolve()?;
    let sampler = match spec {
        BoundedVarSpec::CenteredScore { dist, .. } => Some(dist.sampler()),
        BoundedVarSpec::Rademacher => None,
    };
    let blocks = reps.div_ceil(REPS_PER_BLOCK);
    let counts = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = seed::rng(seed_, &[0xBE77, n as u64, block as u64]);
            let count = REPS_PER_BLOCK.min(reps - block * REPS_PER_BLOCK);
            let mut exceed = vec![0usize; eps_grid.len()];
            for _ in 0..count {
                let mut sum = 0.0;
                for _ in 0..n {
                    sum += match (spec, &sampler) {
                        (BoundedVarSpec::CenteredScore { loss, .. }, Some(s)) => {
                            loss.psi(s.draw(&mut rng)) - resolved.mean
                        }
                        _ => {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        }
                    };
                }
                for (k, &eps) in eps_grid.iter().enumerate() {
                    if sum.abs() > eps {
                        exceed[k] += 1;
                    }
                }
            }
            exceed
        })
        .reduce(
            || vec![0usize; eps_grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let bsq = n as f64 * resolved.variance;
    let rows: Vec<TailRow> = eps_grid
        .iter()
        .zip(counts)
        .map(|(&eps, c)| {
            let bound = bennett_bound(eps, resolved.bound, bsq);
            let empirical = c as f64 / reps as f64;
            let std_error = (bound * (1.0 - bound) / reps as f64).sqrt();
            TailRow { eps, empirical, bound, std_error, dominated: empirical <= bound + 3.0 * std_error }
        })
        .collect();
    let all_dominated = rows.iter().all(|r| r.dominated);
    Ok(TailReport { n, reps, b: resolved.bound, bsq, rows, all_dominated })
}

/// Triangular weight arrays `a_ni`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    /// `a_ni = 1/n`
    Uniform,
    /// `a_ni = n^-exponent`
    Power { exponent: f64 },
    /// `a_ni = x_nik / sqrt(n)`, column `coordinate` of the normalized design.
    DesignCoordinate { design: DesignGenSpec, coordinate: usize },
}

impl WeightSpec {
    pub fn weights(&self, n: usize, seed_: u64) -> Result<Vec<f64>> {
        match *self {
            WeightSpec::Uniform => Ok(vec![1.0 / n as f64; n]),
            WeightSpec::Power { exponent } => Ok(vec![(n as f64).powf(-exponent); n]),
            WeightSpec::DesignCoordinate { design, coordinate } => {
                if coordinate >= design.p() {
                    return Err(Error::InvalidParameter(format!(
                        "coordinate {coordinate} out of range for p={}",
                        design.p()
                    )));
                }
                let d = generate_design(&design, n, seed_)?;
                let z = normalize(&d, &summarize(&d)?)?;
                let root = (n as f64).sqrt();
                Ok(z.matrix().column(coordinate).iter().map(|v| v / root).collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SllnReport {
    pub ns: Vec<usize>,
    /// Median over seeds of `|sum_i a_ni (psi(e_i) - E psi(e))|`.
    pub medians: Vec<f64>,
    /// Log-log slope of `n max_i |a_ni|` against `n`.
    pub weight_growth_slope: f64,
    pub mean_psi: f64,
    pub threshold: f64,
    pub passed: bool,
}

pub const SLLN_THRESHOLD: f64 = 0.02;
const WEIGHT_SLOPE_LIMIT: f64 = 0.1;

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Weighted strong-law evidence. Each seed draws one error path
/// `e_1, e_2, ...` and evaluates the weighted sums of its prefixes.
pub fn verify_weighted_slln(
    dist: &ErrorDistribution,
    loss: &ConvexLoss,
    weight_spec: &WeightSpec,
    n_grid: &[usize],
    seeds: usize,
    base_seed: u64,
) -> Result<SllnReport> {
    if n_grid.len() < 2 {
        return Err(Error::InsufficientPoints { needed: 2, got: n_grid.len() });
    }
    if seeds == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid[0] == 0 {
        return Err(Error::InvalidParameter("n_grid must be strictly increasing and seeds positive".into()));
    }
    let weights = n_grid
        .iter()
        .map(|&n| weight_spec.weights(n, base_seed))
        .collect::<Result<Vec<_>>>()?;
    let lx: Vec<f64> = n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = n_grid
        .iter()
        .zip(&weights)
        .map(|(&n, w)| (n as f64 * w.iter().fold(0.0f64, |a, b| a.max(b.abs()))).ln())
        .collect();
    let weight_growth_slope = design::ols_slope(&lx, &ly);
    if weight_growth_slope > WEIGHT_SLOPE_LIMIT {
        return Err(Error::WeightTooLarge { slope: weight_growth_slope });
    }
    let mean_psi = g_function(dist, loss, 0.0)?;
    let n_max = *n_grid.last().expect("nonempty grid");
    let sampler = dist.sampler();
    let paths: Vec<Vec<f64>> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = seed::rng(base_seed, &[0x511, s as u64]);
            let scores: Vec<f64> = (0..n_max).map(|_| loss.psi(sampler.draw(&mut rng)) - mean_psi).collect();
            weights
                .iter()
                .map(|w| w.iter().zip(&scores).map(|(a, x)| a * x).sum::<f64>().abs())
                .collect()
        })
        .collect();
    let medians: Vec<f64> = (0..n_grid.len())
        .map(|k| {
            let mut col: Vec<f64> = paths.iter().map(|p| p[k]).collect();
            median(&mut col)
        })
        .collect();
    let tail = &medians[medians.len().saturating_sub(3)..];
    let nonincreasing = tail.windows(2).all(|w| w[1] <= w[0]);
    let passed = nonincreasing && *medians.last().expect("nonempty") < SLLN_THRESHOLD;
    Ok(SllnReport {
        ns: n_grid.to_vec(),
        medians,
        weight_growth_slope,
        mean_psi,
        threshold: SLLN_THRESHOLD,
        passed,
    })
}
