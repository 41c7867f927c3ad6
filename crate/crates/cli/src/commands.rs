use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mest_core::design::{eigen_growth_check, generate_design, leverage_decay_fit, summarize, Regime};
use mest_core::harness::{experiment_summary, regime_contrast, run_experiment, ExperimentConfig, ExperimentSummary};
use mest_core::probability::{
    bennett_bound, check_identification, verify_bennett, verify_weighted_slln, BoundedVarSpec, WeightSpec,
};
use mest_core::solver::{dn_components, fit as fit_model, sample_directions, verify_dn_lower_bound};
use mest_core::{ConvexLoss, Design, DesignGenSpec, Error, ErrorDistribution, SolverOpts};
use serde::{Deserialize, Serialize};

use crate::io::{csv_bytes, csv_table, json_bytes, parse_json, read_json, read_table, write_output};
use crate::{Common, Format};

pub enum Status {
    Ok,
    NotConverged(String),
    ConditionFailed(String),
}

impl Status {
    pub fn code(&self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::NotConverged(_) => 2,
            Status::ConditionFailed(_) => 3,
        }
    }

    pub fn message(&self) -> Option<&str> {
        match self {
            Status::Ok => None,
            Status::NotConverged(m) | Status::ConditionFailed(m) => Some(m),
        }
    }
}

fn condition(passed: bool, msg: impl Into<String>) -> Status {
    if passed {
        Status::Ok
    } else {
        Status::ConditionFailed(msg.into())
    }
}

/// Errors that mean the requested condition does not hold, as opposed to
/// malformed input.
fn is_condition_error(e: &Error) -> bool {
    matches!(e, Error::NonIntegrable | Error::UnboundedSpec(_) | Error::WeightTooLarge { .. })
}

fn require_config(common: &Common) -> Result<&Path> {
    common.config.as_deref().ok_or_else(|| anyhow!("--config is required for this command"))
}

fn format_or(common: &Common, default: Format) -> Format {
    common.format.unwrap_or(default)
}

fn num(v: f64) -> String {
    v.to_string()
}

pub fn parse_loss(spec: &str) -> Result<ConvexLoss> {
    match spec.trim() {
        "lad" => return Ok(ConvexLoss::lad()),
        "ls" => return Ok(ConvexLoss::least_squares()),
        _ => {}
    }
    if spec.trim_start().starts_with('{') {
        return parse_json(spec, None).context("invalid loss JSON");
    }
    read_json(Path::new(spec), None)
}

fn design_from_rows(rows: Vec<Vec<f64>>, intercept: bool) -> Result<Design> {
    if intercept && rows.iter().all(|r| r.is_empty()) {
        return Ok(Design::from_rows(&vec![vec![1.0]; rows.len()])?);
    }
    let design = Design::from_rows(&rows)?;
    Ok(if intercept { design.with_intercept()? } else { design })
}

#[derive(Serialize)]
struct FitOutput {
    names: Vec<String>,
    beta_hat: Vec<f64>,
    objective: f64,
    iterations: usize,
    converged: bool,
    d_n: f64,
    n0: usize,
    n: usize,
}

pub fn fit(common: &Common, data: &Path, loss: &str, intercept: bool) -> Result<Status> {
    let loss = parse_loss(loss)?;
    let opts: SolverOpts = match &common.config {
        Some(p) => read_json(p, None)?,
        None => SolverOpts::default(),
    };
    let table = read_table(data)?;
    let width = table.rows[0].len();
    if width < 2 && !intercept {
        bail!("{}: need at least one design column and the response", data.display());
    }
    let y: Vec<f64> = table.rows.iter().map(|r| r[width - 1]).collect();
    let x_rows: Vec<Vec<f64>> = table.rows.iter().map(|r| r[..width - 1].to_vec()).collect();
    let design = design_from_rows(x_rows, intercept)?;
    let summary = summarize(&design).with_context(|| format!("{}: design is not identifiable", data.display()))?;
    let result = fit_model(&design, &y, &loss, &opts)?;

    let mut names: Vec<String> = match &table.header {
        Some(h) => h[..width - 1].to_vec(),
        None => (1..width).map(|j| format!("x{j}")).collect(),
    };
    if intercept {
        names.insert(0, "intercept".into());
    }
    let out = FitOutput {
        names,
        beta_hat: result.beta_hat.clone(),
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        d_n: summary.leverage,
        n0: summary.n0,
        n: design.n(),
    };
    let bytes = match format_or(common, Format::Json) {
        Format::Json => json_bytes(&out)?,
        Format::Csv => {
            let header = ["term", "estimate"].map(String::from);
            let mut rows: Vec<Vec<String>> =
                out.names.iter().zip(&out.beta_hat).map(|(n, b)| vec![n.clone(), num(*b)]).collect();
            rows.push(vec!["objective".into(), num(out.objective)]);
            rows.push(vec!["d_n".into(), num(out.d_n)]);
            rows.push(vec!["n0".into(), out.n0.to_string()]);
            rows.push(vec!["converged".into(), out.converged.to_string()]);
            csv_table(&header, &rows)?
        }
    };
    write_output(common.out.as_deref(), &bytes)?;
    Ok(if result.converged {
        Status::Ok
    } else {
        Status::NotConverged(format!("solver stopped after {} iterations without converging", result.iterations))
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignCheckConfig {
    design: DesignGenSpec,
    n_grid: Vec<usize>,
    #[serde(default)]
    seed: u64,
}

#[derive(Serialize)]
struct DesignRow {
    n: usize,
    d_n: f64,
    n0: usize,
    leverage_constant: f64,
    c5: f64,
    trace_inequality_holds: bool,
    leverage_chain_holds: bool,
}

#[derive(Serialize)]
struct DesignCheckOutput {
    decay: mest_core::design::DecayReport,
    rows: Vec<DesignRow>,
}

const PREFIX_SIZES: usize = 8;

fn prefix_grid(start: usize, n: usize) -> Vec<usize> {
    let (a, b) = ((start as f64).ln(), (n as f64).ln());
    let mut grid: Vec<usize> = (0..PREFIX_SIZES)
        .map(|k| (a + (b - a) * k as f64 / (PREFIX_SIZES - 1) as f64).exp().round() as usize)
        .collect();
    grid.dedup();
    grid
}

pub fn check_design(common: &Common, data: Option<&Path>, intercept: bool) -> Result<Status> {
    let designs: Vec<Design> = match data {
        Some(path) => {
            let full = design_from_rows(read_table(path)?.rows, intercept)?;
            let s = summarize(&full).with_context(|| format!("{}: design is not identifiable", path.display()))?;
            let start = s.n0.max(4 * full.p()).min(full.n());
            prefix_grid(start, full.n())
                .into_iter()
                .map(|k| Design::new(full.matrix().rows(0, k).into_owned()))
                .collect::<mest_core::Result<_>>()?
        }
        None => {
            let cfg: DesignCheckConfig = read_json(require_config(common)?, common.seed)?;
            cfg.n_grid.iter().map(|&n| generate_design(&cfg.design, n, cfg.seed)).collect::<mest_core::Result<_>>()?
        }
    };
    let decay = leverage_decay_fit(&designs)?;
    let rows = designs
        .iter()
        .map(|d| {
            let s = summarize(d)?;
            let g = eigen_growth_check(&s, d.n())?;
            Ok(DesignRow {
                n: d.n(),
                d_n: s.leverage,
                n0: s.n0,
                leverage_constant: s.leverage_constant,
                c5: g.c5,
                trace_inequality_holds: g.trace_inequality_holds,
                leverage_chain_holds: g.leverage_chain_holds,
            })
        })
        .collect::<mest_core::Result<Vec<_>>>()?;
    let verdict = decay.verdict;
    let delta_hat = decay.delta_hat;
    let out = DesignCheckOutput { decay, rows };
    let bytes = match format_or(common, Format::Json) {
        Format::Json => json_bytes(&out)?,
        Format::Csv => csv_bytes(&out.rows)?,
    };
    write_output(common.out.as_deref(), &bytes)?;
    Ok(condition(
        verdict == Regime::Theorem1,
        format!("leverage decays like n^-{delta_hat:.3}; d_n = O(1/n) not supported"),
    ))
}

fn default_delta() -> f64 {
    0.25
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConditionConfig {
    loss: ConvexLoss,
    dist: ErrorDistribution,
    #[serde(default = "default_delta")]
    delta: f64,
}

pub fn check_conditions(common: &Common) -> Result<Status> {
    let cfg: ConditionConfig = read_json(require_config(common)?, None)?;
    let report = match check_identification(&cfg.dist, &cfg.loss, cfg.delta) {
        Ok(r) => r,
        Err(e) if is_condition_error(&e) => return Ok(Status::ConditionFailed(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let bytes = match format_or(common, Format::Json) {
        Format::Json => json_bytes(&report)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = report.evidence_grid.iter().map(|(u, g)| vec![num(*u), num(*g)]).collect();
            csv_table(&["u", "g"].map(String::from), &rows)?
        }
    };
    write_output(common.out.as_deref(), &bytes)?;
    Ok(condition(
        report.passed,
        format!("identification fails: c1 = {}, E psi(e) = {}", report.c1, report.mean_psi),
    ))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum BoundConfig {
    /// Evaluates the bound formula.
    BennettBound { eps: Vec<f64>, b: f64, bsq: f64 },
    /// Compares the bound with simulated tail frequencies.
    Bennett {
        spec: BoundedVarSpec,
        n: usize,
        eps_grid: Vec<f64>,
        reps: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Weighted strong law evidence.
    Slln {
        dist: ErrorDistribution,
        loss: ConvexLoss,
        weights: WeightSpec,
        n_grid: Vec<usize>,
        seeds: usize,
        #[serde(default)]
        seed: u64,
    },
}

pub fn bound(common: &Common) -> Result<Status> {
    let cfg: BoundConfig = read_json(require_config(common)?, common.seed)?;
    let format = format_or(common, Format::Json);
    let (bytes, status) = match cfg {
        BoundConfig::BennettBound { eps, b, bsq } => {
            if !(b > 0.0) || !(bsq >= 0.0) || eps.iter().any(|e| !(*e >= 0.0)) {
                bail!("bennett_bound needs b > 0, bsq >= 0 and eps >= 0");
            }
            #[derive(Serialize)]
            struct Row {
                eps: f64,
                bound: f64,
            }
            let rows: Vec<Row> = eps.iter().map(|&e| Row { eps: e, bound: bennett_bound(e, b, bsq) }).collect();
            let bytes = if format == Format::Json { json_bytes(&rows)? } else { csv_bytes(&rows)? };
            (bytes, Status::Ok)
        }
        BoundConfig::Bennett { spec, n, eps_grid, reps, seed } => match verify_bennett(&spec, n, &eps_grid, reps, seed) {
            Ok(r) => {
                let bytes = if format == Format::Json { json_bytes(&r)? } else { csv_bytes(&r.rows)? };
                let status = condition(r.all_dominated, "empirical tail exceeds the bound");
                (bytes, status)
            }
            Err(e) if is_condition_error(&e) => return Ok(Status::ConditionFailed(e.to_string())),
            Err(e) => return Err(e.into()),
        },
        BoundConfig::Slln { dist, loss, weights, n_grid, seeds, seed } => {
            match verify_weighted_slln(&dist, &loss, &weights, &n_grid, seeds, seed) {
                Ok(r) => {
                    let bytes = if format == Format::Json {
                        json_bytes(&r)?
                    } else {
                        let rows: Vec<Vec<String>> =
                            r.ns.iter().zip(&r.medians).map(|(n, m)| vec![n.to_string(), num(*m)]).collect();
                        csv_table(&["n", "median"].map(String::from), &rows)?
                    };
                    let status = condition(r.passed, "weighted sums have not settled below the threshold");
                    (bytes, status)
                }
                Err(e) if is_condition_error(&e) => return Ok(Status::ConditionFailed(e.to_string())),
                Err(e) => return Err(e.into()),
            }
        }
    };
    write_output(common.out.as_deref(), &bytes)?;
    Ok(status)
}

fn default_eps() -> f64 {
    0.5
}

fn default_directions() -> usize {
    200
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DnConfig {
    loss: ConvexLoss,
    dist: ErrorDistribution,
    design: DesignGenSpec,
    n: usize,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default = "default_directions")]
    directions: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_delta")]
    delta: f64,
}

#[derive(Serialize)]
struct DnRow {
    direction: Vec<f64>,
    total: f64,
    i1: f64,
    i2: f64,
}

#[derive(Serialize)]
struct DnOutput {
    c1: f64,
    report: mest_core::solver::BoundReport,
    traces: Vec<DnRow>,
}

pub fn dn_trace(common: &Common) -> Result<Status> {
    let cfg: DnConfig = read_json(require_config(common)?, common.seed)?;
    let c1 = match check_identification(&cfg.dist, &cfg.loss, cfg.delta) {
        Ok(r) => r.c1,
        Err(e) if is_condition_error(&e) => return Ok(Status::ConditionFailed(e.to_string())),
        Err(e) => return Err(e.into()),
    };
    let design = generate_design(&cfg.design, cfg.n, cfg.seed)?;
    let summary = summarize(&design)?;
    let normalized = mest_core::design::normalize(&design, &summary)?;
    let errors = cfg.dist.sample(cfg.n, cfg.seed);
    let report = verify_dn_lower_bound(
        &normalized,
        &errors,
        &cfg.loss,
        cfg.eps,
        cfg.directions,
        cfg.seed,
        c1,
        Some(summary.leverage_constant),
    )?;
    let traces = sample_directions(design.p(), cfg.directions, cfg.n, cfg.seed)
        .into_iter()
        .map(|gamma| {
            let (total, i1, i2) = dn_components(&normalized, &errors, &cfg.loss, cfg.eps, &gamma)?;
            Ok(DnRow { direction: gamma, total, i1, i2 })
        })
        .collect::<mest_core::Result<Vec<_>>>()?;
    let passed = report.total_positive && report.i1_bound_holds;
    let out = DnOutput { c1, report, traces };
    let bytes = match format_or(common, Format::Json) {
        Format::Json => json_bytes(&out)?,
        Format::Csv => {
            let mut header: Vec<String> = (1..=design.p()).map(|j| format!("gamma_{j}")).collect();
            header.extend(["total", "i1", "i2"].map(String::from));
            let rows: Vec<Vec<String>> = out
                .traces
                .iter()
                .map(|t| {
                    let mut row: Vec<String> = t.direction.iter().map(|g| num(*g)).collect();
                    row.extend([num(t.total), num(t.i1), num(t.i2)]);
                    row
                })
                .collect();
            csv_table(&header, &rows)?
        }
    };
    write_output(common.out.as_deref(), &bytes)?;
    Ok(condition(passed, "D_n lower bound not attained on the sampled directions"))
}

fn print_table(summary: &ExperimentSummary, to_stdout: bool) {
    let mut text = format!(
        "{:>8} {:>6} {:>12} {:>12} {:>12} {:>10} {:>8}\n",
        "n", "reps", "median", "upper_q", "max", "d_n", "noconv"
    );
    for r in &summary.table.rows {
        text.push_str(&format!(
            "{:>8} {:>6} {:>12.6} {:>12.6} {:>12.6} {:>10.3e} {:>8.3}\n",
            r.n, r.reps, r.median, r.upper_quartile, r.max, r.d_n, r.nonconverged_rate
        ));
    }
    let slope = summary.table.slope.map_or("n/a".to_string(), |s| format!("{s:.3}"));
    text.push_str(&format!(
        "slope {slope}; conditions {}; leverage hypothesis {}\n",
        if summary.conditions.passed { "pass" } else { "fail" },
        if summary.hypotheses.violated { "violated" } else { "holds" }
    ));
    if to_stdout {
        print!("{text}");
    } else {
        eprint!("{text}");
    }
}

fn summary_path(out: Option<&Path>, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        out.map(|p| {
            let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".summary.json");
            p.with_file_name(name)
        })
    })
}

fn solver_status(ok: bool, rate: f64) -> Status {
    if ok {
        Status::Ok
    } else {
        Status::NotConverged(format!("{:.1}% of fits did not converge", 100.0 * rate))
    }
}

pub fn simulate(common: &Common, summary_out: Option<&Path>) -> Result<Status> {
    let config: ExperimentConfig = read_json(require_config(common)?, common.seed)?;
    let exp = run_experiment(&config)?;
    let summary = experiment_summary(&exp)?;
    let bytes = match format_or(common, Format::Csv) {
        Format::Csv => csv_bytes(&exp.records)?,
        Format::Json => json_bytes(&exp.records)?,
    };
    write_output(common.out.as_deref(), &bytes)?;
    if let Some(path) = summary_path(common.out.as_deref(), summary_out) {
        write_output(Some(&path), &json_bytes(&summary)?)?;
    }
    print_table(&summary, common.out.is_some());
    Ok(solver_status(summary.solver_ok, summary.table.nonconverged_rate))
}

#[derive(Serialize)]
struct ContrastRow<'a> {
    regime: &'a str,
    n: usize,
    median: f64,
    upper_quartile: f64,
    max: f64,
    d_n: f64,
    nonconverged_rate: f64,
}

pub fn contrast(common: &Common) -> Result<Status> {
    let config: ExperimentConfig = read_json(require_config(common)?, common.seed)?;
    let report = regime_contrast(&config)?;
    let bytes = match format_or(common, Format::Json) {
        Format::Json => json_bytes(&report)?,
        Format::Csv => {
            let rows: Vec<ContrastRow> = report
                .regimes
                .iter()
                .flat_map(|g| {
                    g.summary.table.rows.iter().map(move |r| ContrastRow {
                        regime: &g.name,
                        n: r.n,
                        median: r.median,
                        upper_quartile: r.upper_quartile,
                        max: r.max,
                        d_n: r.d_n,
                        nonconverged_rate: r.nonconverged_rate,
                    })
                })
                .collect();
            csv_bytes(&rows)?
        }
    };
    write_output(common.out.as_deref(), &bytes)?;
    let worst = report.regimes.iter().map(|g| g.summary.table.nonconverged_rate).fold(0.0, f64::max);
    Ok(solver_status(report.regimes.iter().all(|g| g.summary.solver_ok), worst))
}
