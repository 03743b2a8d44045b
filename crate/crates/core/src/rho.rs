//! Density-matrix elements from a sampled Wigner map.
//!
//! `ρ = 2 ∫ d²γ W(γ) D(2γ) Π` with `Π` the parity operator, evaluated by the
//! midpoint rule on the scan grid.

use serde::Serialize;

use crate::fock::{
    displacement_element, hermitian_eigenvalues, hermiticity_residual, ln_factorials,
};
use crate::wigner::{PhaseGrid, WignerEstimate};
use crate::{CMatrix, Error, Result, C64};

/// Trace deviation above which a recovery carries a warning.
pub const TRACE_WARN_TOL: f64 = 0.05;

/// Series `D_mn(2γ) = e^{-2|γ|²} √(m!n!) Σ_l (2γ)^{n-l} (-2γ*)^{m-l} / (l!(m-l)!(n-l)!)`.
///
/// This equals `⟨n|D(2γ)|m⟩`.
pub fn dmn_kernel(m: usize, n: usize, gamma: C64) -> C64 {
    let lnf = ln_factorials(m.max(n));
    displacement_element(n, m, 2.0 * gamma, &lnf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredDensity {
    /// Hermitized `(ρ + ρ†)/2`.
    pub matrix: CMatrix,
    pub grid: PhaseGrid,
    pub dx: f64,
    pub dy: f64,
    /// Max elementwise `|ρ - ρ†|/2` before hermitization.
    pub hermitization_residual: f64,
    pub trace: f64,
    pub warning: Option<String>,
}

impl RecoveredDensity {
    /// Smallest eigenvalue; negative values are reported, never projected away.
    pub fn min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.matrix)
            .into_iter()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Midpoint quadrature of `ρ_mn` for `m, n < n_trunc`.
pub fn integrate_rho(wigner: &WignerEstimate, n_trunc: usize) -> Result<RecoveredDensity> {
    let grid = wigner.grid;
    grid.validate()?;
    if n_trunc == 0 {
        return Err(Error::InvalidParameter("n_trunc must be positive".into()));
    }
    if wigner.w_values.len() != grid.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} Wigner values for a grid of {} nodes",
            wigner.w_values.len(),
            grid.len()
        )));
    }
    if let Some(i) = wigner.w_values.iter().position(|w| !w.is_finite()) {
        return Err(Error::Input(format!(
            "Wigner value at grid index {i} is not finite"
        )));
    }
    let (dx, dy) = grid.spacing();
    let lnf = ln_factorials(n_trunc);
    let mut raw = CMatrix::zeros(n_trunc, n_trunc);
    for (i, w) in wigner.w_values.iter().enumerate() {
        let g2 = 2.0 * grid.point(i);
        for m in 0..n_trunc {
            for n in 0..n_trunc {
                let parity = if n % 2 == 0 { 1.0 } else { -1.0 };
                raw[(m, n)] += displacement_element(m, n, g2, &lnf) * (parity * w);
            }
        }
    }
    raw *= C64::new(2.0 * dx * dy, 0.0);
    let hermitization_residual = 0.5 * hermiticity_residual(&raw);
    let matrix = (&raw + raw.adjoint()) * C64::new(0.5, 0.0);
    let trace = matrix.trace().re;
    let warning = ((trace - 1.0).abs() > TRACE_WARN_TOL).then(|| {
        format!("recovered trace {trace:.4} deviates from 1; the grid may not cover the state")
    });
    Ok(RecoveredDensity {
        matrix,
        grid,
        dx,
        dy,
        hermitization_residual,
        trace,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StateComparison {
    pub max_abs_diff: f64,
    /// `½ Σ |λ_i(a - b)|`.
    pub trace_distance: f64,
    /// Uhlmann fidelity `(Tr √(√a b √a))²`, negative eigenvalues clipped.
    pub fidelity: f64,
}

pub fn compare_states(a: &CMatrix, b: &CMatrix) -> Result<StateComparison> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let diff = a - b;
    let max_abs_diff = diff.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let trace_distance = 0.5
        * hermitian_eigenvalues(&diff)
            .iter()
            .map(|l| l.abs())
            .sum::<f64>();
    let sqrt_a = psd_sqrt(a);
    let inner = &sqrt_a * b * &sqrt_a;
    let root_sum: f64 = hermitian_eigenvalues(&inner)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok(StateComparison {
        max_abs_diff,
        trace_distance,
        fidelity: root_sum * root_sum,
    })
}

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| C64::new(l.max(0.0).sqrt(), 0.0));
    &eig.eigenvectors * CMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}
