//! Truncated Fock-space states and operators.
//!
//! All operator algebra runs in a padded working dimension `n_pad`; only the
//! leading `n_trunc` photon numbers are exposed to reconstruction. Matrix
//! elements of the displacement operator are evaluated from their closed-form
//! series, so each element is exact regardless of the working dimension and
//! only sums over Fock indices are affected by truncation.

use std::f64::consts::{FRAC_2_PI, LN_2};

use serde::{Deserialize, Serialize};

use crate::{CMatrix, Error, Result, C64};

/// Default limit on `1 - Σ R_n` for the exposed photon numbers.
pub const DEFAULT_MAX_LEAK: f64 = 0.5;

/// Hermiticity tolerance for [`DensityMatrix`].
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Largest admissible trace deficit of a [`DensityMatrix`].
pub const TRACE_TOL: f64 = 1e-3;

/// Eigenvalues below `-EIGEN_TOL` reject a [`DensityMatrix`].
pub const EIGEN_TOL: f64 = 1e-10;

/// Populations in `[-NEGATIVE_TOL, 0)` are rounding noise and clamped to zero.
pub const NEGATIVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    /// Fock dimension `N` of the reconstruction.
    pub n_trunc: usize,
    /// Working dimension for state preparation and operator algebra.
    pub n_pad: usize,
    /// Largest tolerated `1 - Σ_{n<N} R_n` before a point is rejected.
    #[serde(default = "default_max_leak")]
    pub max_leak: f64,
}

fn default_max_leak() -> f64 {
    DEFAULT_MAX_LEAK
}

impl TruncationConfig {
    /// Truncation `n_trunc` with the default padding `2·n_trunc + 20`.
    pub fn new(n_trunc: usize) -> Result<Self> {
        Self::with_padding(n_trunc, 2 * n_trunc + 20)
    }

    pub fn with_padding(n_trunc: usize, n_pad: usize) -> Result<Self> {
        let cfg = Self {
            n_trunc,
            n_pad,
            max_leak: DEFAULT_MAX_LEAK,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_leak(mut self, max_leak: f64) -> Result<Self> {
        self.max_leak = max_leak;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_trunc < 2 {
            return Err(Error::InvalidParameter(format!(
                "n_trunc must be at least 2, got {}",
                self.n_trunc
            )));
        }
        if self.n_pad < self.n_trunc {
            return Err(Error::InvalidParameter(format!(
                "n_pad ({}) must not be smaller than n_trunc ({})",
                self.n_pad, self.n_trunc
            )));
        }
        if !(self.max_leak >= 0.0 && self.max_leak <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "max_leak must lie in [0, 1], got {}",
                self.max_leak
            )));
        }
        Ok(())
    }

    /// Largest `|γ|²` (or `|amplitude|²`) the working dimension supports.
    pub fn max_displacement_sq(&self) -> f64 {
        0.5 * self.n_pad as f64
    }

    fn check_displacement(&self, gamma: C64) -> Result<()> {
        if gamma.norm_sqr() > self.max_displacement_sq() {
            return Err(Error::InvalidParameter(format!(
                "|{gamma}|² exceeds 0.5·n_pad = {}; increase n_pad",
                self.max_displacement_sq()
            )));
        }
        Ok(())
    }
}

/// `ln k!` for `k = 0..=n`, accumulated term by term.
pub(crate) fn ln_factorials(n: usize) -> Vec<f64> {
    let mut table = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    table.push(acc);
    for k in 1..=n {
        acc += (k as f64).ln();
        table.push(acc);
    }
    table
}

/// A pure state in the working dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    amplitudes: Vec<C64>,
}

impl PureState {
    pub fn from_amplitudes(amplitudes: Vec<C64>) -> Result<Self> {
        let state = Self { amplitudes };
        let norm = 1.0 - state.norm_deficit();
        if state.amplitudes.is_empty() || !(norm <= 1.0 + 1e-9) || !norm.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "state amplitudes must be nonempty with squared norm at most 1, got {norm}"
            )));
        }
        Ok(state)
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// `1 - Σ|amplitude|²`: probability lost above the working dimension.
    pub fn norm_deficit(&self) -> f64 {
        1.0 - self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }
}

/// Coherent state `|a⟩` with amplitudes `e^{-|a|²/2} aⁿ/√n!`.
pub fn coherent_state(amplitude: C64, cfg: &TruncationConfig) -> Result<PureState> {
    cfg.validate()?;
    cfg.check_displacement(amplitude)?;
    let lnf = ln_factorials(cfg.n_pad);
    let r = amplitude.norm();
    let theta = amplitude.arg();
    let amplitudes = (0..cfg.n_pad)
        .map(|n| {
            if r == 0.0 {
                return if n == 0 {
                    C64::new(1.0, 0.0)
                } else {
                    C64::new(0.0, 0.0)
                };
            }
            let ln_mag = -0.5 * r * r + n as f64 * r.ln() - 0.5 * lnf[n];
            C64::from_polar(ln_mag.exp(), n as f64 * theta)
        })
        .collect();
    PureState::from_amplitudes(amplitudes)
}

/// Squeezed vacuum `exp{-s(a†² - a²)/2}|0⟩`; only even photon numbers occur.
pub fn squeezed_vacuum(squeeze: f64, cfg: &TruncationConfig) -> Result<PureState> {
    cfg.validate()?;
    if !(squeeze >= 0.0) || !(squeeze.tanh() < 0.95) {
        return Err(Error::InvalidParameter(format!(
            "squeeze must satisfy s >= 0 and tanh(s) < 0.95, got {squeeze}"
        )));
    }
    let lnf = ln_factorials(cfg.n_pad);
    let t = squeeze.tanh();
    let ln_norm = -0.5 * squeeze.cosh().ln();
    let mut amplitudes = vec![C64::new(0.0, 0.0); cfg.n_pad];
    for k in 0..cfg.n_pad.div_ceil(2) {
        let n = 2 * k;
        if k > 0 && t == 0.0 {
            break;
        }
        let ln_t = if k == 0 { 0.0 } else { k as f64 * t.ln() };
        let ln_mag = ln_norm + ln_t + 0.5 * lnf[n] - k as f64 * LN_2 - lnf[k];
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        amplitudes[n] = C64::new(sign * ln_mag.exp(), 0.0);
    }
    PureState::from_amplitudes(amplitudes)
}

pub fn fock_state(n: usize, cfg: &TruncationConfig) -> Result<PureState> {
    cfg.validate()?;
    if n >= cfg.n_pad {
        return Err(Error::InvalidParameter(format!(
            "Fock index {n} outside working dimension {}",
            cfg.n_pad
        )));
    }
    let mut amplitudes = vec![C64::new(0.0, 0.0); cfg.n_pad];
    amplitudes[n] = C64::new(1.0, 0.0);
    PureState::from_amplitudes(amplitudes)
}

/// Signal density matrix over Fock indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    elements: CMatrix,
}

impl DensityMatrix {
    /// Validates hermiticity, trace and positivity (smallest eigenvalue).
    pub fn new(elements: CMatrix) -> Result<Self> {
        if elements.nrows() != elements.ncols() || elements.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "density matrix must be square and nonempty, got {}x{}",
                elements.nrows(),
                elements.ncols()
            )));
        }
        let rho = Self { elements };
        let residual = rho.hermiticity_residual();
        if residual > HERMITIAN_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix is not Hermitian (residual {residual:.3e})"
            )));
        }
        let trace = rho.trace();
        if !(1.0 - TRACE_TOL..=1.0 + 1e-9).contains(&trace) {
            return Err(Error::InvalidParameter(format!(
                "density matrix trace {trace} outside [1 - {TRACE_TOL}, 1]"
            )));
        }
        let min_eig = rho.min_eigenvalue();
        if min_eig < -EIGEN_TOL {
            return Err(Error::InvalidParameter(format!(
                "density matrix has negative eigenvalue {min_eig:.3e}"
            )));
        }
        Ok(rho)
    }

    pub fn elements(&self) -> &CMatrix {
        &self.elements
    }

    pub fn dim(&self) -> usize {
        self.elements.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.elements.diagonal().iter().map(|z| z.re).sum()
    }

    /// Largest `|ρ_mn - conj(ρ_nm)|`.
    pub fn hermiticity_residual(&self) -> f64 {
        hermiticity_residual(&self.elements)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.elements)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }

    /// Top-left `n × n` block.
    pub fn truncated(&self, n: usize) -> CMatrix {
        let n = n.min(self.dim());
        self.elements.view((0, 0), (n, n)).into_owned()
    }
}

pub(crate) fn hermiticity_residual(m: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part of `m`.
pub(crate) fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues().iter().copied().collect()
}

/// Outer product `|ψ⟩⟨ψ|`.
pub fn density_from_pure(state: &PureState) -> DensityMatrix {
    let a = state.amplitudes();
    let elements = CMatrix::from_fn(a.len(), a.len(), |i, j| a[i] * a[j].conj());
    DensityMatrix { elements }
}

/// Matrix elements `⟨m|D(γ)|n⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMatrix {
    pub gamma: C64,
    pub elements: CMatrix,
}

/// `⟨m|D(γ)|n⟩ = e^{-|γ|²/2} √(m!n!) Σ_l γ^{m-l} (-γ*)^{n-l} / (l!(m-l)!(n-l)!)`.
///
/// The common phase `e^{iθ(m-n)}` is factored out, leaving a real alternating
/// series whose terms are built in log space and summed from `l = 0` upward.
pub(crate) fn displacement_element(m: usize, n: usize, gamma: C64, lnf: &[f64]) -> C64 {
    let r = gamma.norm();
    if r == 0.0 {
        return if m == n {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        };
    }
    let ln_r = r.ln();
    let base = 0.5 * (lnf[m] + lnf[n]) - 0.5 * r * r;
    let mut sum = 0.0;
    for l in 0..=m.min(n) {
        let ln_term = base - lnf[l] - lnf[m - l] - lnf[n - l] + (m + n - 2 * l) as f64 * ln_r;
        let sign = if (n - l).is_multiple_of(2) { 1.0 } else { -1.0 };
        sum += sign * ln_term.exp();
    }
    C64::from_polar(sum, gamma.arg() * (m as f64 - n as f64))
}

/// `rows × cols` block of `D(γ)` without the working-dimension check.
pub(crate) fn displacement_block(rows: usize, cols: usize, gamma: C64) -> CMatrix {
    let lnf = ln_factorials(rows.max(cols));
    CMatrix::from_fn(rows, cols, |m, n| displacement_element(m, n, gamma, &lnf))
}

pub fn displacement_matrix(gamma: C64, cfg: &TruncationConfig) -> Result<DisplacementMatrix> {
    cfg.validate()?;
    cfg.check_displacement(gamma)?;
    Ok(DisplacementMatrix {
        gamma,
        elements: displacement_block(cfg.n_pad, cfg.n_pad, gamma),
    })
}

/// Diagonal `R_n(γ) = ⟨n|D†(γ) ρ D(γ)|n⟩` of the displaced state.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalDistribution {
    pub gamma: C64,
    pub values: Vec<f64>,
}

impl DiagonalDistribution {
    pub fn new(gamma: C64, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty distribution".into()));
        }
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= 0.0) || !v.is_finite())
        {
            return Err(Error::NegativePopulation { index, value });
        }
        Ok(Self { gamma, values })
    }

    pub fn uniform(gamma: C64, n: usize) -> Self {
        Self {
            gamma,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Probability not represented by the stored photon numbers.
    pub fn leak(&self) -> f64 {
        1.0 - self.sum()
    }

    /// `W(γ) = (2/π) Σ (-1)ⁿ R_n(γ)`.
    pub fn wigner(&self) -> f64 {
        FRAC_2_PI * alternating_sum(&self.values)
    }
}

pub(crate) fn alternating_sum(values: &[f64]) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(n, v)| if n % 2 == 0 { *v } else { -*v })
        .sum()
}

/// `R_n(γ)` for every `n < n_pad`, clamped at rounding noise.
pub(crate) fn displaced_populations(
    rho: &DensityMatrix,
    gamma: C64,
    cfg: &TruncationConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    cfg.check_displacement(gamma)?;
    let dim = rho.dim();
    if dim > cfg.n_pad {
        return Err(Error::DimensionMismatch(format!(
            "state dimension {dim} exceeds working dimension {}",
            cfg.n_pad
        )));
    }
    // ρ is zero above `dim`, so only the first `dim` rows of D(γ) contribute.
    let d = displacement_block(dim, cfg.n_pad, gamma);
    let rho_d = rho.elements() * &d;
    (0..cfg.n_pad)
        .map(|n| {
            let value: f64 = (0..dim)
                .map(|k| (d[(k, n)].conj() * rho_d[(k, n)]).re)
                .sum();
            clamp_population(n, value)
        })
        .collect()
}

fn clamp_population(index: usize, value: f64) -> Result<f64> {
    if value >= 0.0 {
        Ok(value)
    } else if value >= -NEGATIVE_TOL {
        Ok(0.0)
    } else {
        Err(Error::NegativePopulation { index, value })
    }
}

/// Displaced photon statistics for `n < n_trunc`, rejecting points whose
/// truncation leak exceeds `cfg.max_leak`.
pub fn displaced_diagonal(
    rho: &DensityMatrix,
    gamma: C64,
    cfg: &TruncationConfig,
) -> Result<DiagonalDistribution> {
    let mut values = displaced_populations(rho, gamma, cfg)?;
    values.truncate(cfg.n_trunc);
    let dist = DiagonalDistribution { gamma, values };
    let leak = dist.leak();
    if leak > cfg.max_leak {
        return Err(Error::TruncationLeak {
            gamma,
            leak,
            limit: cfg.max_leak,
        });
    }
    Ok(dist)
}

/// Wigner function of the state truncated to `n_trunc` photon numbers.
pub fn wigner_exact(rho: &DensityMatrix, gamma: C64, cfg: &TruncationConfig) -> Result<f64> {
    Ok(displaced_diagonal(rho, gamma, cfg)?.wigner())
}

/// Test states with known phase-space representations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StateSpec {
    Coherent { re: f64, im: f64 },
    Squeezed { squeeze: f64 },
    Fock { n: usize },
}

impl StateSpec {
    pub fn prepare(&self, cfg: &TruncationConfig) -> Result<PureState> {
        match *self {
            StateSpec::Coherent { re, im } => coherent_state(C64::new(re, im), cfg),
            StateSpec::Squeezed { squeeze } => squeezed_vacuum(squeeze, cfg),
            StateSpec::Fock { n } => fock_state(n, cfg),
        }
    }

    pub fn density(&self, cfg: &TruncationConfig) -> Result<DensityMatrix> {
        Ok(density_from_pure(&self.prepare(cfg)?))
    }

    /// Closed-form Wigner function of the untruncated state.
    pub fn analytic_wigner(&self, gamma: C64) -> f64 {
        match *self {
            StateSpec::Coherent { re, im } => {
                FRAC_2_PI * (-2.0 * (gamma - C64::new(re, im)).norm_sqr()).exp()
            }
            StateSpec::Squeezed { squeeze } => {
                let e = (2.0 * squeeze).exp();
                FRAC_2_PI * (-2.0 * e * gamma.re * gamma.re - 2.0 * gamma.im * gamma.im / e).exp()
            }
            StateSpec::Fock { n } => {
                let x = gamma.norm_sqr();
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * FRAC_2_PI * (-2.0 * x).exp() * laguerre(n, 4.0 * x)
            }
        }
    }
}

/// Laguerre polynomial `L_n(x)` by the three-term recurrence.
fn laguerre(n: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 1.0 - x);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = ((2 * k + 1) as f64 - x) * cur - k as f64 * prev;
        prev = cur;
        cur = next / (k + 1) as f64;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cfg(n: usize) -> TruncationConfig {
        TruncationConfig::new(n).unwrap()
    }

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    #[test]
    fn truncation_config_rejects_bad_dimensions() {
        assert!(TruncationConfig::new(1).is_err());
        assert!(TruncationConfig::with_padding(12, 11).is_err());
        assert_eq!(cfg(12).n_pad, 44);
        assert!(cfg(12).with_max_leak(1.5).is_err());
    }

    #[test]
    fn coherent_vacuum_and_poisson_weights() {
        let vac = coherent_state(c(0.0, 0.0), &cfg(12)).unwrap();
        assert_eq!(vac.amplitudes()[0], c(1.0, 0.0));
        assert!(vac.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));

        let one = coherent_state(c(1.0, 0.0), &cfg(12)).unwrap();
        for (n, a) in one.amplitudes().iter().enumerate().take(20) {
            assert_abs_diff_eq!(
                a.norm_sqr(),
                (-1.0f64).exp() / factorial(n),
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn coherent_norm_deficit_matches_tail() {
        let cfg = TruncationConfig::with_padding(12, 12).unwrap();
        let state = coherent_state(c(1.0, 0.0), &cfg).unwrap();
        let tail: f64 = (12..40).map(|n| (-1.0f64).exp() / factorial(n)).sum();
        assert!(state.norm_deficit() < 1e-9);
        assert_abs_diff_eq!(state.norm_deficit(), tail, epsilon = 1e-15);
    }

    #[test]
    fn coherent_rejects_large_amplitude() {
        let cfg = TruncationConfig::with_padding(4, 8).unwrap();
        assert!(coherent_state(c(2.0, 0.1), &cfg).is_err());
        assert!(coherent_state(c(2.0, 0.0), &cfg).is_ok());
    }

    #[test]
    fn squeezed_vacuum_structure() {
        let vac = squeezed_vacuum(0.0, &cfg(12)).unwrap();
        assert_eq!(vac.amplitudes()[0], c(1.0, 0.0));
        assert!(vac.amplitudes()[1..].iter().all(|a| a.norm() == 0.0));

        let s = 0.5f64.atanh();
        let sq = squeezed_vacuum(s, &cfg(12)).unwrap();
        let a = sq.amplitudes();
        assert_abs_diff_eq!((a[2] / a[0]).norm(), 0.5 / 2f64.sqrt(), epsilon = 1e-14);
        for n in (1..a.len()).step_by(2) {
            assert_eq!(a[n].norm(), 0.0);
        }
        assert!(sq.norm_deficit().abs() < 1e-9);
        assert!(squeezed_vacuum(-0.1, &cfg(12)).is_err());
        assert!(squeezed_vacuum(2.0, &cfg(12)).is_err());
    }

    #[test]
    fn fock_state_fixture() {
        let f3 = fock_state(3, &cfg(12)).unwrap();
        assert_eq!(f3.amplitudes()[3], c(1.0, 0.0));
        assert_eq!(f3.amplitudes().iter().filter(|a| a.norm() > 0.0).count(), 1);
        assert_eq!(
            fock_state(0, &cfg(12)).unwrap(),
            coherent_state(c(0.0, 0.0), &cfg(12)).unwrap()
        );
        assert!(fock_state(44, &cfg(12)).is_err());
        let rho = density_from_pure(&fock_state(1, &cfg(12)).unwrap());
        assert_abs_diff_eq!(rho.trace(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn density_from_pure_elements() {
        let vac = density_from_pure(&fock_state(0, &cfg(4)).unwrap());
        assert_eq!(vac.elements()[(0, 0)], c(1.0, 0.0));
        assert_eq!(vac.elements().iter().filter(|z| z.norm() > 0.0).count(), 1);

        let coh = density_from_pure(&coherent_state(c(1.0, 0.0), &cfg(12)).unwrap());
        assert_abs_diff_eq!(coh.elements()[(0, 1)].re, (-1.0f64).exp(), epsilon = 1e-15);
        let state = coherent_state(c(0.7, -0.3), &cfg(12)).unwrap();
        let rho = density_from_pure(&state);
        assert_abs_diff_eq!(rho.trace(), 1.0 - state.norm_deficit(), epsilon = 1e-14);
        assert!(rho.hermiticity_residual() < HERMITIAN_TOL);
        assert!(DensityMatrix::new(rho.elements().clone()).is_ok());
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = CMatrix::zeros(2, 2);
        m[(0, 0)] = c(0.5, 0.0);
        m[(1, 1)] = c(0.5, 0.0);
        m[(0, 1)] = c(0.1, 0.1);
        assert!(DensityMatrix::new(m.clone()).is_err(), "not Hermitian");
        m[(1, 0)] = c(0.1, -0.1);
        assert!(DensityMatrix::new(m.clone()).is_ok());
        m[(0, 1)] = c(0.9, 0.0);
        m[(1, 0)] = c(0.9, 0.0);
        assert!(DensityMatrix::new(m).is_err(), "negative eigenvalue");
        assert!(
            DensityMatrix::new(CMatrix::identity(2, 2)).is_err(),
            "trace 2"
        );
    }

    #[test]
    fn displacement_identity_and_vacuum_element() {
        let d0 = displacement_matrix(c(0.0, 0.0), &cfg(12)).unwrap();
        assert_eq!(d0.elements, CMatrix::identity(44, 44));
        for g in [c(0.3, 0.4), c(-1.2, 0.5), c(2.0, -2.0)] {
            let d = displacement_matrix(g, &cfg(12)).unwrap();
            assert_abs_diff_eq!(
                d.elements[(0, 0)].re,
                (-0.5 * g.norm_sqr()).exp(),
                epsilon = 1e-15
            );
            assert_abs_diff_eq!(d.elements[(0, 0)].im, 0.0, epsilon = 1e-15);
            // D(γ)|0⟩ is the coherent state |γ⟩.
            let coh = coherent_state(g, &cfg(12)).unwrap();
            for m in 0..20 {
                assert_abs_diff_eq!(
                    (d.elements[(m, 0)] - coh.amplitudes()[m]).norm(),
                    0.0,
                    epsilon = 1e-14
                );
            }
        }
        let small = TruncationConfig::with_padding(4, 8).unwrap();
        assert!(displacement_matrix(c(2.1, 0.0), &small).is_err());
    }

    #[test]
    fn displacement_group_property_with_padding() {
        let cfg = TruncationConfig::with_padding(12, 40).unwrap();
        let d = displacement_matrix(c(1.0, 0.0), &cfg).unwrap().elements;
        let dm = displacement_matrix(c(-1.0, 0.0), &cfg).unwrap().elements;
        let prod = &d * &dm;
        let mut worst: f64 = 0.0;
        for i in 0..12 {
            for j in 0..12 {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((prod[(i, j)] - c(target, 0.0)).norm());
            }
        }
        assert!(worst < 1e-10, "group residual {worst:e}");
    }

    #[test]
    fn displacement_matches_laguerre_route() {
        // Independent route: ⟨m|D|n⟩ = √(n!/m!) γ^{m-n} e^{-|γ|²/2} L_n^{(m-n)}(|γ|²), m ≥ n.
        fn assoc_laguerre(n: usize, alpha: f64, x: f64) -> f64 {
            let (mut prev, mut cur) = (1.0, 1.0 + alpha - x);
            if n == 0 {
                return prev;
            }
            for k in 1..n {
                let next = ((2 * k + 1) as f64 + alpha - x) * cur - (k as f64 + alpha) * prev;
                prev = cur;
                cur = next / (k + 1) as f64;
            }
            cur
        }
        let g = c(0.8, -1.1);
        let d = displacement_block(16, 16, g);
        let x = g.norm_sqr();
        for m in 0..16 {
            for n in 0..=m {
                let pref = (factorial(n) / factorial(m)).sqrt() * (-0.5 * x).exp();
                let expected = g.powu((m - n) as u32) * pref * assoc_laguerre(n, (m - n) as f64, x);
                assert_abs_diff_eq!((d[(m, n)] - expected).norm(), 0.0, epsilon = 1e-12);
                // ⟨n|D(γ)|m⟩ = (-1)^{m-n} conj⟨m|D(γ)|n⟩
                let sign = if (m - n) % 2 == 0 { 1.0 } else { -1.0 };
                assert_abs_diff_eq!(
                    (d[(n, m)] - expected.conj() * sign).norm(),
                    0.0,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn displaced_diagonal_cases() {
        let cfg = cfg(12);
        // γ = 0 returns the photon-number distribution.
        let rho = density_from_pure(&coherent_state(c(0.6, 0.2), &cfg).unwrap());
        let r = displaced_diagonal(&rho, c(0.0, 0.0), &cfg).unwrap();
        for n in 0..12 {
            assert_abs_diff_eq!(r.values[n], rho.elements()[(n, n)].re, epsilon = 1e-15);
        }
        // Vacuum: Poisson with mean |γ|².
        let vac = density_from_pure(&fock_state(0, &cfg).unwrap());
        let g = c(0.9, -0.7);
        let r = displaced_diagonal(&vac, g, &cfg).unwrap();
        let mu = g.norm_sqr();
        for n in 0..12 {
            let p = (-mu).exp() * mu.powi(n as i32) / factorial(n);
            assert_abs_diff_eq!(r.values[n], p, epsilon = 1e-14);
        }
        assert!(r.leak() >= 0.0 && r.sum() <= 1.0 + 1e-9);
    }

    #[test]
    fn displaced_coherent_state_is_poisson_about_difference() {
        let cfg = cfg(12);
        let a0 = c(1.0, 0.5);
        let g = c(0.3, -0.4);
        let rho = density_from_pure(&coherent_state(a0, &cfg).unwrap());
        let r = displaced_diagonal(&rho, g, &cfg).unwrap();
        // Brute force: D(-γ) applied to the padded amplitude vector.
        let d = displacement_matrix(-g, &cfg).unwrap().elements;
        let psi =
            nalgebra::DVector::from_column_slice(coherent_state(a0, &cfg).unwrap().amplitudes());
        let shifted = &d * &psi;
        let mu = (a0 - g).norm_sqr();
        for n in 0..12 {
            assert_abs_diff_eq!(r.values[n], shifted[n].norm_sqr(), epsilon = 1e-13);
            let p = (-mu).exp() * mu.powi(n as i32) / factorial(n);
            assert_abs_diff_eq!(r.values[n], p, epsilon = 1e-13);
        }
    }

    #[test]
    fn displaced_diagonal_reports_leak() {
        let cfg = TruncationConfig::new(4)
            .unwrap()
            .with_max_leak(0.01)
            .unwrap();
        let vac = density_from_pure(&fock_state(0, &cfg).unwrap());
        let err = displaced_diagonal(&vac, c(2.0, 0.0), &cfg).unwrap_err();
        assert!(matches!(err, Error::TruncationLeak { .. }));
        assert!(wigner_exact(&vac, c(2.0, 0.0), &cfg).is_err());
        assert!(displaced_diagonal(&vac, c(0.1, 0.0), &cfg).is_ok());
    }

    #[test]
    fn wigner_exact_reference_values() {
        let cfg = cfg(12);
        let vac = density_from_pure(&fock_state(0, &cfg).unwrap());
        assert_abs_diff_eq!(
            wigner_exact(&vac, c(0.0, 0.0), &cfg).unwrap(),
            FRAC_2_PI,
            epsilon = 1e-15
        );

        let spec = StateSpec::Coherent { re: 1.0, im: 0.0 };
        let coh = spec.density(&cfg).unwrap();
        for (re, im) in [(1.0, 0.0), (0.5, 0.5), (1.7, -0.6), (0.0, 0.0), (2.0, 0.0)] {
            let g = c(re, im);
            let w = wigner_exact(&coh, g, &cfg).unwrap();
            assert_abs_diff_eq!(w, spec.analytic_wigner(g), epsilon = 1e-6);
        }

        let sq = StateSpec::Squeezed {
            squeeze: 0.5f64.atanh(),
        };
        let rho = sq.density(&cfg).unwrap();
        assert_abs_diff_eq!(
            wigner_exact(&rho, c(0.0, 0.0), &cfg).unwrap(),
            FRAC_2_PI,
            epsilon = 1e-4
        );
    }

    #[test]
    fn analytic_wigner_matches_high_dimension_reference() {
        // Large truncation makes the Fock sum an accurate oracle.
        let big = TruncationConfig::with_padding(60, 80).unwrap();
        let specs = [
            StateSpec::Coherent { re: -0.4, im: 0.9 },
            StateSpec::Squeezed {
                squeeze: 0.5f64.atanh(),
            },
            StateSpec::Fock { n: 3 },
        ];
        for spec in specs {
            let rho = spec.density(&big).unwrap();
            for (re, im) in [(0.0, 0.0), (0.3, -0.2), (-0.5, 1.0), (0.8, 0.8)] {
                let g = c(re, im);
                let w = wigner_exact(&rho, g, &big).unwrap();
                assert_abs_diff_eq!(w, spec.analytic_wigner(g), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn squeezed_parity_of_density_matrix() {
        let rho = StateSpec::Squeezed { squeeze: 0.4 }
            .density(&cfg(12))
            .unwrap();
        for m in 0..rho.dim() {
            for n in 0..rho.dim() {
                if (m + n) % 2 == 1 {
                    assert_eq!(rho.elements()[(m, n)].norm(), 0.0);
                }
            }
        }
    }
}
