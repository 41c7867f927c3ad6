//! Design matrices: Gram matrix, inverse square root, leverage, the
//! normalized rows `S_n^{-1/2} x_i`, leverage-decay regression and parametric
//! generators used by the experiments.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Eigenvalues below this fraction of the largest one count as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// `n x p` matrix of known design vectors, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    x: DMatrix<f64>,
}

impl Design {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if p == 0 || n < p {
            return Err(Error::InvalidParameter(format!(
                "design needs n >= p >= 1, got n={n}, p={p}"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("design has non-finite entries".into()));
        }
        Ok(Design { x })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, got: bad.len() });
        }
        Design::new(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.x.row(i).transpose()
    }

    /// Prepends a column of ones.
    pub fn with_intercept(&self) -> Result<Self> {
        let (n, p) = self.x.shape();
        Design::new(DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { self.x[(i, j - 1)] }))
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.x.tr_mul(&self.x)
    }

    /// `X b`
    pub fn apply(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), got: beta.len() });
        }
        Ok(&self.x * beta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSummary {
    pub n: usize,
    /// `S_n = sum x_i x_i'`
    pub gram: DMatrix<f64>,
    pub gram_inv_sqrt: DMatrix<f64>,
    /// `d_n = max_i x_i' S_n^{-1} x_i`
    pub leverage: f64,
    /// Smallest count `m` for which the prefix Gram `S_m` is positive definite.
    pub n0: usize,
    /// `S_{n0}`
    pub gram_n0: DMatrix<f64>,
    /// `n d_n`, the smallest `C2` with `d_n <= C2 / n` at this `n`.
    pub leverage_constant: f64,
    /// Smallest eigenvalue of `S_n^{1/2}`.
    pub min_eig_sqrt: f64,
    /// Largest eigenvalue of `S_n`.
    pub max_eig: f64,
}

/// Rows `x_ni = S_n^{-1/2} x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDesign {
    x: DMatrix<f64>,
}

/// Largest deviations from `sum x_ni x_ni' = I`, `sum |x_ni|^2 = p` and
/// `max |x_ni|^2 = d_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub outer_product: f64,
    pub squared_norms: f64,
    pub leverage: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.outer_product.max(self.squared_norms).max(self.leverage)
    }
}

impl NormalizedDesign {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn row_norms_sq(&self) -> Vec<f64> {
        self.x.row_iter().map(|r| r.norm_squared()).collect()
    }

    pub fn identity_residuals(&self, leverage: f64) -> IdentityResiduals {
        let p = self.p();
        let outer = self.x.tr_mul(&self.x) - DMatrix::<f64>::identity(p, p);
        let norms = self.row_norms_sq();
        let total: f64 = norms.iter().sum();
        let max = norms.iter().copied().fold(0.0, f64::max);
        IdentityResiduals {
            outer_product: outer.amax(),
            squared_norms: (total - p as f64).abs(),
            leverage: (max - leverage).abs(),
        }
    }
}

struct Spectrum {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    min: f64,
    max: f64,
}

fn spectrum(m: &DMatrix<f64>) -> Spectrum {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    let max = eig.eigenvalues.max();
    Spectrum { values: eig.eigenvalues, vectors: eig.eigenvectors, min, max }
}

fn positive_definite(s: &Spectrum) -> bool {
    s.max > 0.0 && s.min >= EIGEN_FLOOR * s.max
}

/// `V f(L) V'` for a symmetric matrix with spectrum `(L, V)`.
fn spectral_map(s: &Spectrum, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(s.vectors.nrows(), s.vectors.ncols(), |i, j| {
        s.vectors[(i, j)] * f(s.values[j])
    });
    let out = &scaled * s.vectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Symmetric square root of a positive semidefinite matrix.
pub fn sqrt_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    spectral_map(&spectrum(m), |v| v.max(0.0).sqrt())
}

/// `(tr(AB), mu(A) zeta(B))` with `mu` the largest and `zeta` the smallest
/// eigenvalue.
pub fn trace_inequality(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let lhs = (a * b).trace();
    (lhs, spectrum(a).max * spectrum(b).min)
}

pub fn summarize(design: &Design) -> Result<DesignSummary> {
    let n = design.n();
    let p = design.p();
    let gram = design.gram();
    let spec = spectrum(&gram);
    if !positive_definite(&spec) {
        return Err(Error::SingularGram { min_eig: spec.min, max_eig: spec.max });
    }
    let gram_inv_sqrt = spectral_map(&spec, |v| 1.0 / v.sqrt());

    let xs = design.matrix() * &gram_inv_sqrt;
    let leverage = xs.row_iter().map(|r| r.norm_squared()).fold(0.0, f64::max);

    let mut prefix = DMatrix::<f64>::zeros(p, p);
    let mut n0 = n;
    for i in 0..n {
        let row = design.row(i);
        prefix += &row * row.transpose();
        if i + 1 >= p && positive_definite(&spectrum(&prefix)) {
            n0 = i + 1;
            break;
        }
    }

    Ok(DesignSummary {
        n,
        gram,
        gram_inv_sqrt,
        leverage,
        n0,
        gram_n0: prefix,
        leverage_constant: n as f64 * leverage,
        min_eig_sqrt: spec.min.sqrt(),
        max_eig: spec.max,
    })
}

pub fn normalize(design: &Design, summary: &DesignSummary) -> Result<NormalizedDesign> {
    if summary.gram_inv_sqrt.nrows() != design.p() {
        return Err(Error::DimensionMismatch {
            expected: design.p(),
            got: summary.gram_inv_sqrt.nrows(),
        });
    }
    Ok(NormalizedDesign { x: design.matrix() * &summary.gram_inv_sqrt })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `d_n = O(1/n)`
    #[serde(rename = "theorem1")]
    Theorem1,
    /// `d_n = O(n^-delta)` with `0 < delta < 1`
    #[serde(rename = "theorem_a")]
    TheoremA,
    #[serde(rename = "fails")]
    Fails,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub ns: Vec<usize>,
    pub leverages: Vec<f64>,
    /// Minus the least-squares slope of `log d_n` against `log n`.
    pub delta_hat: f64,
    /// `max_n n d_n`
    pub c2_hat: f64,
    pub verdict: Regime,
}

pub const DECAY_THEOREM1: f64 = 0.95;
pub const DECAY_FAILS: f64 = 0.05;

/// Least-squares slope of `ys` on `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

pub fn leverage_decay_fit(designs: &[Design]) -> Result<DecayReport> {
    if designs.len() < 4 {
        return Err(Error::InsufficientPoints { needed: 4, got: designs.len() });
    }
    let mut ns = Vec::with_capacity(designs.len());
    let mut leverages = Vec::with_capacity(designs.len());
    for d in designs {
        ns.push(d.n());
        leverages.push(summarize(d)?.leverage);
    }
    Ok(decay_from_leverages(ns, leverages))
}

pub(crate) fn decay_from_leverages(ns: Vec<usize>, leverages: Vec<f64>) -> DecayReport {
    let lx: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ly: Vec<f64> = leverages.iter().map(|d| d.ln()).collect();
    let delta_hat = -ols_slope(&lx, &ly);
    let c2_hat = ns
        .iter()
        .zip(&leverages)
        .map(|(&n, d)| n as f64 * d)
        .fold(0.0, f64::max);
    let verdict = if delta_hat >= DECAY_THEOREM1 {
        Regime::Theorem1
    } else if delta_hat <= DECAY_FAILS {
        Regime::Fails
    } else {
        Regime::TheoremA
    };
    DecayReport { ns, leverages, delta_hat, c2_hat, verdict }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenGrowth {
    /// `sqrt(n) / zeta(S_n^{1/2})`
    pub c5: f64,
    /// `tr(S_n^{-1} S_{n0})`
    pub trace: f64,
    /// `mu(S_n^{-1}) zeta(S_{n0})`
    pub trace_lower: f64,
    pub trace_inequality_holds: bool,
    /// `tr(S_n^{-1} S_{n0}) <= n0 d_n`
    pub leverage_chain_holds: bool,
}

pub fn eigen_growth_check(summary: &DesignSummary, n: usize) -> Result<EigenGrowth> {
    let spec = spectrum(&summary.gram);
    if !positive_definite(&spec) {
        return Err(Error::SingularGram { min_eig: spec.min, max_eig: spec.max });
    }
    let gram_inv = spectral_map(&spec, |v| 1.0 / v);
    let (trace, trace_lower) = trace_inequality(&gram_inv, &summary.gram_n0);
    let slack = 1e-10 * trace.abs().max(1.0);
    Ok(EigenGrowth {
        c5: (n as f64).sqrt() / summary.min_eig_sqrt,
        trace,
        trace_lower,
        trace_inequality_holds: trace + slack >= trace_lower,
        leverage_chain_holds: trace <= summary.n0 as f64 * summary.leverage + slack,
    })
}

/// Solves `(X' W X) b = rhs` by Cholesky.
pub fn solve_weighted(x: &DMatrix<f64>, weights: &[f64], rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let mut m = DMatrix::<f64>::zeros(p, p);
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for a in 0..p {
            let xa = w * x[(i, a)];
            for b in 0..=a {
                m[(a, b)] += xa * x[(i, b)];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    solve_spd(m, rhs)
}

pub(crate) fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let diag_max = m.diagonal().amax();
    let Some(chol) = m.clone().cholesky() else {
        let s = spectrum(&m);
        return Err(Error::SingularGram { min_eig: s.min, max_eig: s.max });
    };
    let l_diag_min = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if !(l_diag_min * l_diag_min > EIGEN_FLOOR * diag_max) {
        let s = spectrum(&m);
        return Err(Error::SingularGram { min_eig: s.min, max_eig: s.max });
    }
    Ok(chol.solve(rhs))
}

/// Parametric design families for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignGenSpec {
    /// Stacked copies of `I_p`; `d_n = p/n` when `p | n`.
    OrthogonalBlocks { p: usize },
    /// Independent standard normal entries.
    GaussianIid { p: usize },
    /// Unit rows plus one row of norm `n^((1-delta)/2)`, so `d_n ~ n^-delta`.
    Decay { p: usize, delta: f64 },
    /// Unit rows plus one row of norm `sqrt(n)`; `d_n` does not vanish.
    AdversarialLeverage { p: usize },
}

impl DesignGenSpec {
    pub fn p(&self) -> usize {
        match *self {
            DesignGenSpec::OrthogonalBlocks { p }
            | DesignGenSpec::GaussianIid { p }
            | DesignGenSpec::Decay { p, .. }
            | DesignGenSpec::AdversarialLeverage { p } => p,
        }
    }
}

fn blocks_with_spike(n: usize, p: usize, spike: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |i, j| {
        if i + 1 == n {
            if j == 0 {
                spike
            } else {
                0.0
            }
        } else if i % p == j {
            1.0
        } else {
            0.0
        }
    })
}

pub fn generate_design(spec: &DesignGenSpec, n: usize, seed: u64) -> Result<Design> {
    let p = spec.p();
    if p == 0 || n < p {
        return Err(Error::InvalidParameter(format!("design needs n >= p >= 1, got n={n}, p={p}")));
    }
    let x = match *spec {
        DesignGenSpec::OrthogonalBlocks { p } => {
            DMatrix::from_fn(n, p, |i, j| if i % p == j { 1.0 } else { 0.0 })
        }
        DesignGenSpec::GaussianIid { p } => {
            let mut rng = seed::rng(seed, &[n as u64, p as u64]);
            DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
        }
        DesignGenSpec::Decay { p, delta } => {
            if !(0.0..=1.0).contains(&delta) {
                return Err(Error::InvalidParameter(format!(
                    "decay exponent must lie in [0, 1], got {delta}"
                )));
            }
            if n < p + 1 {
                return Err(Error::InvalidParameter(format!("decay design needs n > p, got n={n}")));
            }
            blocks_with_spike(n, p, (n as f64).powf(0.5 * (1.0 - delta)))
        }
        DesignGenSpec::AdversarialLeverage { p } => {
            if n < p + 1 {
                return Err(Error::InvalidParameter(format!(
                    "adversarial design needs n > p, got n={n}"
                )));
            }
            blocks_with_spike(n, p, (n as f64).sqrt())
        }
    };
    Design::new(x)
}
