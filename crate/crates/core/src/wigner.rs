//! Phase-plane scans: simulate, reconstruct and evaluate the Wigner function
//! point by point.
//!
//! Every grid point is an independent pipeline. Randomness is keyed by
//! `(seed, point_index · M + j)`, so results do not depend on evaluation
//! order or on which other points are scanned.

use std::f64::consts::FRAC_2_PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{run_em, EmConfig};
use crate::fock::{
    alternating_sum, displaced_populations, DensityMatrix, DiagonalDistribution, TruncationConfig,
};
use crate::measurement::{
    no_click_probabilities, repetition_seed, sample_clicks, stream_id, ClickRecord, ScheduleSpec,
};
use crate::{Error, Result, C64};

/// Cumulative photon-number mass the precheck asks the truncation to hold.
pub const PRECHECK_MASS: f64 = 1.0 - 1e-4;

/// Uniform grid with nodes at cell centers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl PhaseGrid {
    pub fn new(re: (f64, f64), im: (f64, f64), n_re: usize, n_im: usize) -> Result<Self> {
        let grid = Self {
            re_min: re.0,
            re_max: re.1,
            im_min: im.0,
            im_max: im.1,
            n_re,
            n_im,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Square grid `[lo, hi]²` with `n × n` nodes.
    pub fn square(lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new((lo, hi), (lo, hi), n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.re_min < self.re_max && self.im_min < self.im_max) {
            return Err(Error::InvalidParameter(format!(
                "grid bounds must be increasing: re [{}, {}], im [{}, {}]",
                self.re_min, self.re_max, self.im_min, self.im_max
            )));
        }
        if self.n_re == 0 || self.n_im == 0 {
            return Err(Error::InvalidParameter(
                "grid needs at least one node per axis".into(),
            ));
        }
        Ok(())
    }

    /// Number of nodes `N_p`.
    pub fn len(&self) -> usize {
        self.n_re * self.n_im
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cell sizes `(Δ re, Δ im)`.
    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.re_max - self.re_min) / self.n_re as f64,
            (self.im_max - self.im_min) / self.n_im as f64,
        )
    }

    /// Node `index`, row-major over `(im, re)`.
    pub fn point(&self, index: usize) -> C64 {
        let (dx, dy) = self.spacing();
        let i_re = index % self.n_re;
        let i_im = index / self.n_re;
        C64::new(
            self.re_min + (i_re as f64 + 0.5) * dx,
            self.im_min + (i_im as f64 + 0.5) * dy,
        )
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

/// Everything one simulate-and-reconstruct pipeline needs.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub trunc: TruncationConfig,
    pub schedule: ScheduleSpec,
    /// Trials per setting `N_r`.
    pub n_runs: u64,
    pub em: EmConfig,
    /// Feed exact probabilities to the EM instead of sampled frequencies.
    pub exact_probabilities: bool,
    /// Keep each point's reconstructed distribution.
    pub retain_tables: bool,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.trunc.validate()?;
        self.em.validate()?;
        if self.n_runs == 0 {
            return Err(Error::InvalidParameter("n_runs must be positive".into()));
        }
        if self.schedule.len() < self.trunc.n_trunc {
            return Err(Error::TooFewSettings {
                settings: self.schedule.len(),
                unknowns: self.trunc.n_trunc,
            });
        }
        Ok(())
    }
}

/// Result of one point of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub distribution: DiagonalDistribution,
    pub w: f64,
    pub log_likelihood: f64,
}

/// Measurement records for one grid point.
pub fn simulate_point(
    rho: &DensityMatrix,
    gamma: C64,
    cfg: &PipelineConfig,
    seed: u64,
    point_index: usize,
) -> Result<Vec<ClickRecord>> {
    let schedule = cfg.schedule.build(gamma)?;
    let m = schedule.len();
    let probabilities = no_click_probabilities(rho, &schedule.settings, &cfg.trunc)?;
    schedule
        .settings
        .iter()
        .zip(probabilities)
        .enumerate()
        .map(|(j, (setting, p))| {
            if cfg.exact_probabilities {
                ClickRecord::exact(*setting, p, cfg.n_runs)
            } else {
                sample_clicks(*setting, p, cfg.n_runs, seed, stream_id(point_index, m, j))
            }
        })
        .collect()
}

/// EM reconstruction of `R_n(γ)` and the Wigner value from given records.
pub fn reconstruct_records(records: &[ClickRecord], cfg: &PipelineConfig) -> Result<PointResult> {
    let (distribution, trace) = run_em(records, &cfg.em, &cfg.trunc)?;
    Ok(PointResult {
        w: distribution.wigner(),
        distribution,
        log_likelihood: trace.final_log_likelihood,
    })
}

/// Simulates the measurements at `gamma` and reconstructs the Wigner value.
pub fn reconstruct_point(
    rho: &DensityMatrix,
    gamma: C64,
    cfg: &PipelineConfig,
    seed: u64,
    point_index: usize,
) -> Result<PointResult> {
    let records = simulate_point(rho, gamma, cfg, seed, point_index)?;
    reconstruct_records(&records, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointFailure {
    pub index: usize,
    pub message: String,
}

/// Reconstructed (or reference) Wigner values over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WignerEstimate {
    pub grid: PhaseGrid,
    /// Row-major over `(im, re)`; failed points hold NaN.
    pub w_values: Vec<f64>,
    pub w_variance: Option<Vec<f64>>,
    pub r_tables: Option<Vec<Option<DiagonalDistribution>>>,
    /// Final EM log-likelihood per point (NaN where not applicable).
    pub log_likelihoods: Vec<f64>,
    pub failures: Vec<PointFailure>,
}

impl WignerEstimate {
    /// Map of `f` evaluated at every node.
    pub fn from_fn(grid: PhaseGrid, f: impl Fn(C64) -> f64 + Sync) -> Self {
        let w_values = grid.points().par_iter().map(|g| f(*g)).collect();
        Self {
            grid,
            w_values,
            w_variance: None,
            r_tables: None,
            log_likelihoods: vec![f64::NAN; grid.len()],
            failures: Vec::new(),
        }
    }

    pub fn value(&self, i_re: usize, i_im: usize) -> f64 {
        self.w_values[i_im * self.grid.n_re + i_re]
    }

    /// Points with `|W| > 2/π + allowance`; flagged, never clamped.
    pub fn out_of_bounds(&self, allowance: f64) -> Vec<usize> {
        self.w_values
            .iter()
            .enumerate()
            .filter(|(_, w)| w.abs() > FRAC_2_PI + allowance)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Runs the pipeline at every node; per-point errors are recorded and the
/// scan continues.
pub fn scan_grid(
    rho: &DensityMatrix,
    grid: &PhaseGrid,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<WignerEstimate> {
    grid.validate()?;
    cfg.validate()?;
    let results: Vec<Result<PointResult>> = (0..grid.len())
        .into_par_iter()
        .map(|i| reconstruct_point(rho, grid.point(i), cfg, seed, i))
        .collect();
    Ok(collect_estimate(*grid, results, cfg.retain_tables))
}

pub(crate) fn collect_estimate(
    grid: PhaseGrid,
    results: Vec<Result<PointResult>>,
    retain_tables: bool,
) -> WignerEstimate {
    let mut w_values = Vec::with_capacity(results.len());
    let mut log_likelihoods = Vec::with_capacity(results.len());
    let mut tables = Vec::with_capacity(results.len());
    let mut failures = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(point) => {
                w_values.push(point.w);
                log_likelihoods.push(point.log_likelihood);
                tables.push(Some(point.distribution));
            }
            Err(e) => {
                w_values.push(f64::NAN);
                log_likelihoods.push(f64::NAN);
                tables.push(None);
                failures.push(PointFailure {
                    index,
                    message: e.to_string(),
                });
            }
        }
    }
    WignerEstimate {
        grid,
        w_values,
        w_variance: None,
        r_tables: retain_tables.then_some(tables),
        log_likelihoods,
        failures,
    }
}

/// `δW = (1/N_p) Σ |W_exact - W_rec|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub delta_w: f64,
    /// Points entering the mean; failed (non-finite) points are excluded.
    pub n_points: usize,
    /// Per-point `|W_exact - W_rec|`, NaN where either side failed.
    pub differences: Vec<f64>,
}

pub fn delta_w(exact: &WignerEstimate, rec: &WignerEstimate) -> Result<ErrorReport> {
    if exact.grid != rec.grid || exact.w_values.len() != rec.w_values.len() {
        return Err(Error::DimensionMismatch(
            "Wigner maps are defined on different grids".into(),
        ));
    }
    let differences: Vec<f64> = exact
        .w_values
        .iter()
        .zip(&rec.w_values)
        .map(|(a, b)| (a - b).abs())
        .collect();
    let finite: Vec<f64> = differences
        .iter()
        .copied()
        .filter(|d| d.is_finite())
        .collect();
    let delta_w = if finite.is_empty() {
        f64::NAN
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(ErrorReport {
        delta_w,
        n_points: finite.len(),
        differences,
    })
}

/// Per-point variance of `W` over independent repetitions, normalized by
/// the number of repetitions. Points that fail in any repetition hold NaN.
pub fn variance_map(
    rho: &DensityMatrix,
    grid: &PhaseGrid,
    cfg: &PipelineConfig,
    n_repetitions: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    grid.validate()?;
    cfg.validate()?;
    check_repetitions(n_repetitions)?;
    Ok((0..grid.len())
        .into_par_iter()
        .map(|i| {
            point_variance(rho, grid.point(i), cfg, n_repetitions, seed, i).unwrap_or(f64::NAN)
        })
        .collect())
}

/// Variance of `W` at one point over `n_repetitions` independent runs.
pub fn point_variance(
    rho: &DensityMatrix,
    gamma: C64,
    cfg: &PipelineConfig,
    n_repetitions: usize,
    seed: u64,
    point_index: usize,
) -> Result<f64> {
    check_repetitions(n_repetitions)?;
    let values = (0..n_repetitions)
        .map(|r| {
            reconstruct_point(
                rho,
                gamma,
                cfg,
                repetition_seed(seed, r as u64),
                point_index,
            )
            .map(|p| p.w)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(population_variance(&values))
}

fn check_repetitions(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "variance needs at least 2 repetitions, got {n}"
        )));
    }
    Ok(())
}

pub(crate) fn population_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// `|W_analytic - W_N|` where `W_N` keeps only photon numbers below `n_trunc`.
pub fn truncation_error_map(
    rho: &DensityMatrix,
    grid: &PhaseGrid,
    cfg: &TruncationConfig,
    analytic: impl Fn(C64) -> f64 + Sync,
) -> Result<Vec<f64>> {
    grid.validate()?;
    grid.points()
        .par_iter()
        .map(|g| {
            let populations = displaced_populations(rho, *g, cfg)?;
            let truncated = FRAC_2_PI * alternating_sum(&populations[..cfg.n_trunc]);
            Ok((analytic(*g) - truncated).abs())
        })
        .collect()
}

/// Photon-number estimate `R_n(0)` and the smallest truncation holding
/// [`PRECHECK_MASS`] of it.
#[derive(Debug, Clone, PartialEq)]
pub struct Precheck {
    pub photon_numbers: DiagonalDistribution,
    /// `None` when the configured truncation is already too small.
    pub recommended_n_trunc: Option<usize>,
}

pub fn precheck(rho: &DensityMatrix, cfg: &PipelineConfig, seed: u64) -> Result<Precheck> {
    let point = reconstruct_point(rho, C64::new(0.0, 0.0), cfg, seed, 0)?;
    let mut cumulative = 0.0;
    let mut recommended = None;
    for (n, v) in point.distribution.values.iter().enumerate() {
        cumulative += v;
        if cumulative >= PRECHECK_MASS {
            recommended = Some((n + 1).max(2));
            break;
        }
    }
    Ok(Precheck {
        photon_numbers: point.distribution,
        recommended_n_trunc: recommended,
    })
}
