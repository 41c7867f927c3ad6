//! Seeded Monte Carlo sweeps over `(loss, error law, design, n)`.
//!
//! Every replication draws its errors from a generator derived from
//! `(seed, n, rep)`, so the record set is identical under any thread
//! schedule. Designs are fixed per `n` unless `iid_design` is set.

use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{self, generate_design, summarize, DecayReport, Design, DesignGenSpec, Regime};
use crate::error::{Error, Result};
use crate::losses::ConvexLoss;
use crate::probability::{audit_score_moment, check_identification, ErrorDistribution, MomentAudit};
use crate::seed;
use crate::solver::{fit, SolverOpts};

const DESIGN_TAG: u64 = 0xD5;
const ERROR_TAG: u64 = 0xE7;

/// Share of nonconverged fits above which a sweep counts as a solver failure.
pub const MAX_NONCONVERGED_RATE: f64 = 0.02;

fn default_delta() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub loss: ConvexLoss,
    pub dist: ErrorDistribution,
    pub design: DesignGenSpec,
    /// Defaults to `(1, -2, 0.5, ...)` truncated to `p` entries.
    #[serde(default)]
    pub beta0: Option<Vec<f64>>,
    pub n_grid: Vec<usize>,
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub label: String,
    /// Redraw the design for every replication.
    #[serde(default)]
    pub iid_design: bool,
    /// Record wall-clock time per fit; off keeps output reproducible.
    #[serde(default)]
    pub timing: bool,
    #[serde(default)]
    pub solver: SolverOpts,
    /// Radius for the identification check run before the sweep.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

/// `(1, -2, 0.5, -0.25, ...)`, truncated to `p` entries.
pub fn default_beta0(p: usize) -> Vec<f64> {
    let head = [1.0, -2.0, 0.5];
    (0..p)
        .map(|j| if j < head.len() { head[j] } else { 0.5 * (-0.5f64).powi(j as i32 - 2) })
        .collect()
}

impl ExperimentConfig {
    pub fn new(loss: ConvexLoss, dist: ErrorDistribution, design: DesignGenSpec, n_grid: Vec<usize>, reps: usize) -> Self {
        ExperimentConfig {
            loss,
            dist,
            design,
            beta0: None,
            n_grid,
            reps,
            seed: 0,
            label: String::new(),
            iid_design: false,
            timing: false,
            solver: SolverOpts::default(),
            delta: default_delta(),
        }
    }

    pub fn beta0(&self) -> Vec<f64> {
        self.beta0.clone().unwrap_or_else(|| default_beta0(self.design.p()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("n_grid must be strictly increasing".into()));
        }
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be at least 1".into()));
        }
        let beta0 = self.beta0();
        if beta0.len() != self.design.p() {
            return Err(Error::DimensionMismatch { expected: self.design.p(), got: beta0.len() });
        }
        if beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidParameter("beta0 must be finite".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!("delta must be positive, got {}", self.delta)));
        }
        self.dist.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub n: usize,
    pub rep: usize,
    /// `|beta_hat - beta0|`; NaN when the fit failed.
    pub error_norm: f64,
    pub d_n: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

/// Outcome of the identification check run before a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionStatus {
    pub passed: bool,
    pub c0: Option<f64>,
    pub c1: Option<f64>,
    pub mean_psi: Option<f64>,
    pub error: Option<String>,
}

impl ConditionStatus {
    pub fn evaluate(dist: &ErrorDistribution, loss: &ConvexLoss, delta: f64) -> Self {
        match check_identification(dist, loss, delta) {
            Ok(r) => ConditionStatus {
                passed: r.passed,
                c0: Some(r.c0),
                c1: Some(r.c1),
                mean_psi: Some(r.mean_psi),
                error: None,
            },
            Err(e) => ConditionStatus { passed: false, c0: None, c1: None, mean_psi: None, error: Some(e.to_string()) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Experiment {
    pub label: String,
    pub conditions: ConditionStatus,
    pub records: Vec<ConvergenceRecord>,
    /// Fits that returned an error rather than an estimate.
    pub failures: Vec<String>,
}

fn design_for(config: &ExperimentConfig, n: usize, rep: Option<usize>) -> Result<Design> {
    let s = match rep {
        Some(r) => seed::derive(config.seed, &[DESIGN_TAG, n as u64, r as u64]),
        None => seed::derive(config.seed, &[DESIGN_TAG, n as u64]),
    };
    generate_design(&config.design, n, s)
}

fn replicate(
    config: &ExperimentConfig,
    design: &Design,
    d_n: f64,
    beta0: &DVector<f64>,
    n: usize,
    rep: usize,
) -> std::result::Result<ConvergenceRecord, String> {
    let errors = config.dist.sample(n, seed::derive(config.seed, &[ERROR_TAG, n as u64, rep as u64]));
    let signal = design.matrix() * beta0;
    let y: Vec<f64> = signal.iter().zip(&errors).map(|(a, e)| a + e).collect();
    let start = config.timing.then(Instant::now);
    let result = fit(design, &y, &config.loss, &config.solver);
    let wall_ms = start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
    match result {
        Ok(f) => {
            let err = (DVector::from_vec(f.beta_hat) - beta0).norm();
            Ok(ConvergenceRecord { n, rep, error_norm: err, d_n, converged: f.converged, wall_ms })
        }
        Err(e) => Err(format!("n={n} rep={rep}: {e}")),
    }
}

fn failed_record(n: usize, rep: usize, d_n: f64) -> ConvergenceRecord {
    ConvergenceRecord { n, rep, error_norm: f64::NAN, d_n, converged: false, wall_ms: 0.0 }
}

fn run_one(config: &ExperimentConfig, fixed: Option<&(Design, f64)>, beta0: &DVector<f64>, n: usize, rep: usize)
    -> (ConvergenceRecord, Option<String>)
{
    let owned;
    let (design, d_n) = match fixed {
        Some((d, lev)) => (d, *lev),
        None => {
            let built = design_for(config, n, Some(rep)).and_then(|d| {
                let lev = summarize(&d)?.leverage;
                Ok((d, lev))
            });
            match built {
                Ok(v) => {
                    owned = v;
                    (&owned.0, owned.1)
                }
                Err(e) => return (failed_record(n, rep, f64::NAN), Some(format!("n={n} rep={rep}: {e}"))),
            }
        }
    };
    match replicate(config, design, d_n, beta0, n, rep) {
        Ok(rec) => (rec, None),
        Err(msg) => (failed_record(n, rep, d_n), Some(msg)),
    }
}

/// Runs every `(n, rep)` replication. Per-replication solver errors are
/// recorded as failures (`error_norm = NaN`, `converged = false`) without
/// stopping the sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment> {
    config.validate()?;
    let conditions = ConditionStatus::evaluate(&config.dist, &config.loss, config.delta);
    let beta0 = DVector::from_vec(config.beta0());

    let fixed: Vec<Option<(Design, f64)>> = if config.iid_design {
        vec![None; config.n_grid.len()]
    } else {
        config
            .n_grid
            .iter()
            .map(|&n| {
                let d = design_for(config, n, None)?;
                let lev = summarize(&d)?.leverage;
                Ok(Some((d, lev)))
            })
            .collect::<Result<_>>()?
    };

    let tasks: Vec<(usize, usize)> =
        (0..config.n_grid.len()).flat_map(|k| (0..config.reps).map(move |r| (k, r))).collect();
    let outcomes: Vec<(ConvergenceRecord, Option<String>)> = tasks
        .par_iter()
        .map(|&(k, rep)| run_one(config, fixed[k].as_ref(), &beta0, config.n_grid[k], rep))
        .collect();
    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (rec, err) in outcomes {
        records.push(rec);
        failures.extend(err);
    }
    Ok(Experiment { label: config.label.clone(), conditions, records, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub reps: usize,
    pub median: f64,
    pub upper_quartile: f64,
    pub max: f64,
    pub d_n: f64,
    pub nonconverged_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
    /// Log-log slope of the median error against `n`; `None` when a median
    /// is zero or fewer than two sizes are present.
    pub slope: Option<f64>,
    pub medians_decreasing: bool,
    pub nonconverged_rate: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let pos = prob * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-`n` median, upper quartile and maximum of the error norms. Failed
/// fits (NaN error) sort above every finite value.
pub fn summarize_experiment(records: &[ConvergenceRecord]) -> Result<SummaryTable> {
    if records.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let rows: Vec<SummaryRow> = ns
        .iter()
        .map(|&n| {
            let group: Vec<&ConvergenceRecord> = records.iter().filter(|r| r.n == n).collect();
            let mut errs: Vec<f64> =
                group.iter().map(|r| if r.error_norm.is_nan() { f64::INFINITY } else { r.error_norm }).collect();
            errs.sort_by(f64::total_cmp);
            let nonconverged = group.iter().filter(|r| !r.converged).count();
            SummaryRow {
                n,
                reps: group.len(),
                median: quantile_sorted(&errs, 0.5),
                upper_quartile: quantile_sorted(&errs, 0.75),
                max: *errs.last().expect("nonempty group"),
                d_n: group[0].d_n,
                nonconverged_rate: nonconverged as f64 / group.len() as f64,
            }
        })
        .collect();
    let usable = rows.len() >= 2 && rows.iter().all(|r| r.median > 0.0 && r.median.is_finite());
    let slope = usable.then(|| {
        let lx: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
        let ly: Vec<f64> = rows.iter().map(|r| r.median.ln()).collect();
        design::ols_slope(&lx, &ly)
    });
    let medians_decreasing = rows.windows(2).all(|w| w[1].median < w[0].median);
    let nonconverged_rate = records.iter().filter(|r| !r.converged).count() as f64 / records.len() as f64;
    Ok(SummaryTable { rows, slope, medians_decreasing, nonconverged_rate })
}

/// Leverage decay over the sizes of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisStatus {
    pub decay: Option<DecayReport>,
    /// `d_n = O(1/n)` not supported by the observed leverages.
    pub violated: bool,
}

impl HypothesisStatus {
    pub fn from_table(table: &SummaryTable) -> Self {
        let pts: Vec<(usize, f64)> =
            table.rows.iter().filter(|r| r.d_n.is_finite() && r.d_n > 0.0).map(|r| (r.n, r.d_n)).collect();
        if pts.len() < 2 {
            return HypothesisStatus { decay: None, violated: false };
        }
        let decay = design::decay_from_leverages(pts.iter().map(|p| p.0).collect(), pts.iter().map(|p| p.1).collect());
        let violated = decay.verdict != Regime::Theorem1;
        HypothesisStatus { decay: Some(decay), violated }
    }
}

/// Everything `simulate` reports besides the raw records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub label: String,
    pub conditions: ConditionStatus,
    pub hypotheses: HypothesisStatus,
    pub table: SummaryTable,
    pub failures: Vec<String>,
    /// Fewer than 2% of fits failed to converge.
    pub solver_ok: bool,
}

pub fn experiment_summary(exp: &Experiment) -> Result<ExperimentSummary> {
    let table = summarize_experiment(&exp.records)?;
    Ok(ExperimentSummary {
        label: exp.label.clone(),
        conditions: exp.conditions.clone(),
        hypotheses: HypothesisStatus::from_table(&table),
        solver_ok: table.nonconverged_rate < MAX_NONCONVERGED_RATE,
        table,
        failures: exp.failures.clone(),
    })
}

/// Decay exponents compared by [`regime_contrast`].
pub const CONTRAST_DELTAS: [f64; 3] = [1.0, 0.75, 0.5];
/// Moment order audited alongside `1/delta`.
pub const CONTRAST_MOMENT_ORDER: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegimeResult {
    pub name: String,
    pub design: DesignGenSpec,
    pub summary: ExperimentSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditEntry {
    pub order: f64,
    pub audit: Option<MomentAudit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    pub label: String,
    pub regimes: Vec<RegimeResult>,
    pub moment_audits: Vec<AuditEntry>,
}

/// Reruns `base` under `decay(delta)` designs for each delta in
/// [`CONTRAST_DELTAS`] and under `adversarial_leverage`, and audits
/// `E|psi(e)|^r` for `r = 1/delta` and `r = 1.2`.
pub fn regime_contrast(base: &ExperimentConfig) -> Result<ContrastReport> {
    base.validate()?;
    let p = base.design.p();
    let mut designs: Vec<(String, DesignGenSpec)> = CONTRAST_DELTAS
        .iter()
        .map(|&delta| (format!("decay_{delta}"), DesignGenSpec::Decay { p, delta }))
        .collect();
    designs.push(("adversarial_leverage".into(), DesignGenSpec::AdversarialLeverage { p }));
    let regimes = designs
        .into_iter()
        .map(|(name, design)| {
            let config = ExperimentConfig { design, label: format!("{}/{name}", base.label), ..base.clone() };
            let exp = run_experiment(&config)?;
            Ok(RegimeResult { name, design, summary: experiment_summary(&exp)? })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut orders: Vec<f64> = CONTRAST_DELTAS.iter().map(|d| 1.0 / d).collect();
    orders.push(CONTRAST_MOMENT_ORDER);
    orders.sort_by(f64::total_cmp);
    orders.dedup();
    let moment_audits = orders
        .into_iter()
        .map(|order| match audit_score_moment(&base.dist, &base.loss, order) {
            Ok(a) => AuditEntry { order, audit: Some(a), error: None },
            Err(e) => AuditEntry { order, audit: None, error: Some(e.to_string()) },
        })
        .collect();
    Ok(ContrastReport { label: base.label.clone(), regimes, moment_audits })
}
