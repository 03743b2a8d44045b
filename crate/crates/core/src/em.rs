//! Expectation-maximization for the displaced photon statistics.
//!
//! For settings sharing one displacement `γ`, the no-click probabilities are
//! linear in `R_n(γ)`:
//!
//! ```text
//! p_j = Σ_n A_jn R_n,    A_jn = e^{y_j} (1 - ν̄_j)ⁿ
//! ```
//!
//! Every update rule here is multiplicative, so a positive start stays
//! nonnegative. They differ in how the data-to-model ratios are weighted:
//!
//! - [`UpdateRule::Binomial`] is the EM iteration of the full on/off
//!   likelihood. Clicks and no-clicks both enter, the unit sum is preserved
//!   exactly and the log-likelihood never decreases.
//! - [`UpdateRule::PerPhotonNumber`] weights no-click ratios by the column
//!   sums `Σ_j A_jn` (the classic multiplicative EM for positive linear
//!   inverse problems). Exact data is a fixed point.
//! - [`UpdateRule::PerSetting`] weights by the row sums
//!   `f_j = Σ_{n<N} (1 - ν̄_j)ⁿ`. Exact data is not a fixed point of this
//!   rule and the iterates drift toward the vacuum; it is kept for
//!   comparison runs.

use serde::{Deserialize, Serialize};

use crate::fock::{DiagonalDistribution, TruncationConfig};
use crate::measurement::{ClickRecord, Setting};
use crate::{Error, Result, C64};

/// Relative tolerance for records to count as sharing one displacement.
pub const GAMMA_MATCH_TOL: f64 = 1e-9;

/// Likelihood drops smaller than this are rounding, not violations.
const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Apply the update as is.
    Literal,
    /// Rescale each iterate to unit sum.
    Renormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    Binomial,
    PerPhotonNumber,
    PerSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Uniform,
    Custom(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub n_iterations: usize,
    pub normalization: Normalization,
    pub update: UpdateRule,
    /// Model probabilities are floored here before division.
    pub floor_epsilon: f64,
    pub init: Init,
    /// Stop once the log-likelihood changes by less than this.
    pub early_stop: Option<f64>,
    /// Keep the per-iteration log-likelihood.
    pub record_trace: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            n_iterations: 1000,
            normalization: Normalization::Renormalized,
            update: UpdateRule::Binomial,
            floor_epsilon: 1e-12,
            init: Init::Uniform,
            early_stop: None,
            record_trace: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.floor_epsilon > 0.0 && self.floor_epsilon <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "floor_epsilon must lie in (0, 1e-6], got {}",
                self.floor_epsilon
            )));
        }
        if let Some(tol) = self.early_stop {
            if !(tol > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "early_stop tolerance must be positive, got {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// Diagnostics of one EM run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmTrace {
    pub initial_log_likelihood: f64,
    /// Log-likelihood after each iteration (empty unless recorded).
    pub log_likelihood: Vec<f64>,
    pub final_log_likelihood: f64,
    /// `|p_j - p_j^exp|` for the returned distribution.
    pub residuals: Vec<f64>,
    pub iterations: usize,
    /// Iterations whose log-likelihood dropped beyond rounding.
    pub likelihood_decreases: usize,
}

/// `p = e^y Σ_n (1 - ν̄)ⁿ R_n`.
pub fn forward_probability(r: &DiagonalDistribution, setting: &Setting) -> f64 {
    let q = 1.0 - setting.nu_bar();
    let mut weight = 1.0;
    let mut sum = 0.0;
    for v in &r.values {
        sum += weight * v;
        weight *= q;
    }
    setting.y().exp() * sum
}

/// Binomial log-likelihood of the records under `r`, with model
/// probabilities clamped to `[floor, 1 - floor]`.
pub fn log_likelihood(r: &DiagonalDistribution, records: &[ClickRecord], floor: f64) -> f64 {
    records
        .iter()
        .map(|rec| {
            let p = forward_probability(r, &rec.setting).clamp(floor, 1.0 - floor);
            binomial_term(rec, p)
        })
        .sum()
}

fn binomial_term(rec: &ClickRecord, p: f64) -> f64 {
    let runs = rec.n_runs as f64;
    let noclick = rec.freq * runs;
    noclick * p.ln() + (runs - noclick) * (1.0 - p).ln()
}

/// The linear model `p = A R` for one displacement, with the data attached.
struct Model {
    n: usize,
    m: usize,
    gamma: C64,
    /// Row-major `A_jn = e^{y_j} (1 - ν̄_j)ⁿ`.
    a: Vec<f64>,
    /// `(1 - ν̄_j)ⁿ` without the probe factor.
    attenuation: Vec<f64>,
    freq: Vec<f64>,
    runs: Vec<f64>,
    row_sums: Vec<f64>,
    col_sums: Vec<f64>,
    total_runs: f64,
}

impl Model {
    fn new(records: &[ClickRecord], n: usize) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InvalidParameter("no records".into()))?;
        let gamma = first.setting.gamma();
        for rec in records {
            let other = rec.setting.gamma();
            if (other - gamma).norm() > GAMMA_MATCH_TOL * gamma.norm().max(1.0) {
                return Err(Error::GammaMismatch {
                    first: gamma,
                    other,
                });
            }
        }
        let m = records.len();
        if m < n {
            return Err(Error::TooFewSettings {
                settings: m,
                unknowns: n,
            });
        }
        let mut a = Vec::with_capacity(m * n);
        let mut attenuation = Vec::with_capacity(m * n);
        let mut row_sums = Vec::with_capacity(m);
        for rec in records {
            let q = 1.0 - rec.setting.nu_bar();
            let scale = rec.setting.y().exp();
            let mut w = 1.0;
            let mut f = 0.0;
            for _ in 0..n {
                attenuation.push(w);
                a.push(scale * w);
                f += w;
                w *= q;
            }
            row_sums.push(f);
        }
        let col_sums = (0..n)
            .map(|k| {
                (0..m)
                    .map(|j| records[j].n_runs as f64 * a[j * n + k])
                    .sum()
            })
            .collect();
        let runs: Vec<f64> = records.iter().map(|r| r.n_runs as f64).collect();
        Ok(Self {
            n,
            m,
            gamma,
            a,
            attenuation,
            freq: records.iter().map(|r| r.freq).collect(),
            total_runs: runs.iter().sum(),
            runs,
            row_sums,
            col_sums,
        })
    }

    fn probabilities(&self, r: &[f64]) -> Vec<f64> {
        self.a
            .chunks_exact(self.n)
            .map(|row| row.iter().zip(r).map(|(a, v)| a * v).sum())
            .collect()
    }

    fn log_likelihood(&self, r: &[f64], floor: f64) -> f64 {
        self.probabilities(r)
            .iter()
            .zip(self.freq.iter().zip(&self.runs))
            .map(|(p, (f, runs))| {
                let p = p.clamp(floor, 1.0 - floor);
                runs * (f * p.ln() + (1.0 - f) * (1.0 - p).ln())
            })
            .sum()
    }

    fn step(&self, r: &[f64], cfg: &EmConfig) -> Result<Vec<f64>> {
        let floor = cfg.floor_epsilon;
        let probs = self.probabilities(r);
        if probs.iter().all(|p| *p < floor) {
            return Err(Error::DegenerateModel { floor });
        }
        let mut next = vec![0.0; self.n];
        match cfg.update {
            UpdateRule::PerSetting => {
                for j in 0..self.m {
                    let ratio = self.freq[j] / (self.row_sums[j] * probs[j].max(floor));
                    let row = &self.attenuation[j * self.n..(j + 1) * self.n];
                    for (acc, w) in next.iter_mut().zip(row) {
                        *acc += w * ratio;
                    }
                }
            }
            UpdateRule::PerPhotonNumber => {
                for j in 0..self.m {
                    let ratio = self.runs[j] * self.freq[j] / probs[j].max(floor);
                    let row = &self.a[j * self.n..(j + 1) * self.n];
                    for (acc, w) in next.iter_mut().zip(row) {
                        *acc += w * ratio;
                    }
                }
                for (acc, s) in next.iter_mut().zip(&self.col_sums) {
                    *acc /= s;
                }
            }
            UpdateRule::Binomial => {
                // Σ_j N_j [A_jn f_j/p_j + (1 - A_jn)(1 - f_j)/(1 - p_j)] / Σ_j N_j
                let mut base = 0.0;
                for j in 0..self.m {
                    let p = probs[j].clamp(floor, 1.0 - floor);
                    let hit = self.runs[j] * self.freq[j] / p;
                    let miss = self.runs[j] * (1.0 - self.freq[j]) / (1.0 - p);
                    base += miss;
                    let row = &self.a[j * self.n..(j + 1) * self.n];
                    for (acc, w) in next.iter_mut().zip(row) {
                        *acc += w * (hit - miss);
                    }
                }
                for acc in next.iter_mut() {
                    *acc = (*acc + base) / self.total_runs;
                }
            }
        }
        for (acc, v) in next.iter_mut().zip(r) {
            *acc = (*acc * v).max(0.0);
        }
        if cfg.normalization == Normalization::Renormalized {
            let sum: f64 = next.iter().sum();
            if sum > 0.0 {
                next.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(next)
    }
}

/// One EM update of `r` against `records`.
pub fn em_step(
    r: &DiagonalDistribution,
    records: &[ClickRecord],
    cfg: &EmConfig,
) -> Result<DiagonalDistribution> {
    cfg.validate()?;
    let model = Model::new(records, r.len())?;
    Ok(DiagonalDistribution {
        gamma: model.gamma,
        values: model.step(&r.values, cfg)?,
    })
}

fn initial_values(cfg: &EmConfig, n: usize) -> Result<Vec<f64>> {
    match &cfg.init {
        Init::Uniform => Ok(vec![1.0 / n as f64; n]),
        Init::Custom(values) => {
            if values.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "initial distribution has {} entries, expected {n}",
                    values.len()
                )));
            }
            if values.iter().any(|v| !(*v >= 0.0)) || !(values.iter().sum::<f64>() > 0.0) {
                return Err(Error::InvalidParameter(
                    "initial distribution must be nonnegative with positive sum".into(),
                ));
            }
            Ok(values.clone())
        }
    }
}

/// Iterates [`em_step`] `cfg.n_iterations` times from the configured start.
pub fn run_em(
    records: &[ClickRecord],
    cfg: &EmConfig,
    trunc: &TruncationConfig,
) -> Result<(DiagonalDistribution, EmTrace)> {
    cfg.validate()?;
    trunc.validate()?;
    let model = Model::new(records, trunc.n_trunc)?;
    let mut r = initial_values(cfg, trunc.n_trunc)?;
    let floor = cfg.floor_epsilon;
    let track = cfg.record_trace || cfg.early_stop.is_some();

    let mut trace = EmTrace {
        initial_log_likelihood: model.log_likelihood(&r, floor),
        ..EmTrace::default()
    };
    let mut previous = trace.initial_log_likelihood;
    for _ in 0..cfg.n_iterations {
        r = model.step(&r, cfg)?;
        trace.iterations += 1;
        if track {
            let ll = model.log_likelihood(&r, floor);
            if ll < previous - MONOTONE_SLACK * previous.abs().max(1.0) {
                trace.likelihood_decreases += 1;
            }
            if cfg.record_trace {
                trace.log_likelihood.push(ll);
            }
            let converged = cfg
                .early_stop
                .is_some_and(|tol| (ll - previous).abs() < tol);
            previous = ll;
            if converged {
                break;
            }
        }
    }
    trace.final_log_likelihood = model.log_likelihood(&r, floor);
    trace.residuals = model
        .probabilities(&r)
        .iter()
        .zip(&model.freq)
        .map(|(p, f)| (p - f).abs())
        .collect();
    Ok((
        DiagonalDistribution {
            gamma: model.gamma,
            values: r,
        },
        trace,
    ))
}
