//! Measurement settings, exact no-click probabilities and seeded sampling.
//!
//! A setting is a beam-splitter angle `α`, a probe amplitude `β` and the two
//! detector efficiencies. It reduces to an effective efficiency `ν̄`, an
//! effective displacement `γ` and a probe attenuation exponent `y`, with
//!
//! ```text
//! p = e^y Σ_n (1 - ν̄)ⁿ ⟨n|D†(γ) ρ D(γ)|n⟩
//! ```
//!
//! the probability that neither detector clicks.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::fock::{displaced_populations, DensityMatrix, TruncationConfig};
use crate::{Error, Result, C64};

/// Largest probability allowed to escape the working dimension when
/// evaluating exact no-click probabilities.
pub const PAD_LEAK_TOL: f64 = 1e-6;

/// Tolerance on the displacement a schedule actually realizes.
pub const GAMMA_TOL: f64 = 1e-12;

const DEGENERATE_TRIG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorPair {
    pub nu_c: f64,
    pub nu_d: f64,
}

impl DetectorPair {
    pub fn new(nu_c: f64, nu_d: f64) -> Result<Self> {
        let pair = Self { nu_c, nu_d };
        pair.validate()?;
        Ok(pair)
    }

    /// A single detector on mode `c`.
    pub fn single(nu_c: f64) -> Result<Self> {
        Self::new(nu_c, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("nu_c", self.nu_c), ("nu_d", self.nu_d)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// One measurement configuration and its derived parameters.
///
/// Only [`derive_setting`] constructs settings, so the derived fields always
/// follow from the primary ones through a single code path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setting {
    alpha: f64,
    beta: C64,
    detectors: DetectorPair,
    nu_bar: f64,
    gamma: C64,
    y: f64,
}

impl Setting {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> C64 {
        self.beta
    }
    pub fn detectors(&self) -> DetectorPair {
        self.detectors
    }
    /// Effective efficiency `ν_c cos²α + ν_d sin²α`.
    pub fn nu_bar(&self) -> f64 {
        self.nu_bar
    }
    /// Effective displacement of the signal.
    pub fn gamma(&self) -> C64 {
        self.gamma
    }
    /// Probe attenuation exponent, never positive.
    pub fn y(&self) -> f64 {
        self.y
    }
}

/// Reduces `(α, β, ν_c, ν_d)` to `(ν̄, γ, y)`:
///
/// ```text
/// ν̄ = ν_c cos²α + ν_d sin²α
/// γ = β (ν_d - ν_c) cos α sin α / ν̄
/// y = -|β|² ν_c ν_d / ν̄
/// ```
pub fn derive_setting(alpha: f64, beta: C64, detectors: DetectorPair) -> Result<Setting> {
    detectors.validate()?;
    if !alpha.is_finite() || !beta.re.is_finite() || !beta.im.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "non-finite setting alpha = {alpha}, beta = {beta}"
        )));
    }
    let (sin, cos) = alpha.sin_cos();
    let DetectorPair { nu_c, nu_d } = detectors;
    let nu_bar = nu_c * cos * cos + nu_d * sin * sin;
    if !(nu_bar > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "effective efficiency vanishes for alpha = {alpha}, nu_c = {nu_c}, nu_d = {nu_d}"
        )));
    }
    let gamma = beta * ((nu_d - nu_c) * cos * sin / nu_bar);
    let y = -beta.norm_sqr() * nu_c * nu_d / nu_bar;
    Ok(Setting {
        alpha,
        beta,
        detectors,
        nu_bar,
        gamma,
        y,
    })
}

/// Recipe for a family of settings sharing one displacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Fixed angle and probe, detector `c` efficiency varied, `ν_d = 0`.
    Single { alpha: f64, efficiencies: Vec<f64> },
    /// Fixed efficiencies, angle varied, probe amplitude adjusted per angle.
    Dual {
        nu_c: f64,
        nu_d: f64,
        angles: Vec<f64>,
    },
}

impl ScheduleSpec {
    /// Number of settings `M`.
    pub fn len(&self) -> usize {
        match self {
            ScheduleSpec::Single { efficiencies, .. } => efficiencies.len(),
            ScheduleSpec::Dual { angles, .. } => angles.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn build(&self, target_gamma: C64) -> Result<SettingSchedule> {
        match self {
            ScheduleSpec::Single {
                alpha,
                efficiencies,
            } => single_detector_schedule(target_gamma, *alpha, efficiencies),
            ScheduleSpec::Dual { nu_c, nu_d, angles } => {
                dual_detector_schedule(target_gamma, DetectorPair::new(*nu_c, *nu_d)?, angles)
            }
        }
    }
}

/// Settings targeting one displacement, in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct SettingSchedule {
    pub target_gamma: C64,
    pub settings: Vec<Setting>,
    pub recipe: ScheduleSpec,
}

impl SettingSchedule {
    pub fn len(&self) -> usize {
        self.settings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settings.is_empty()
    }
}

/// `count` evenly spaced values from `lo` to `hi` inclusive.
pub fn homogeneous(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

fn check_realized(target: C64, setting: &Setting) -> Result<()> {
    let miss = (setting.gamma - target).norm();
    if miss > GAMMA_TOL * target.norm().max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "setting realizes gamma = {} instead of {target}",
            setting.gamma
        )));
    }
    Ok(())
}

/// Single detector: `γ = -β tan α`, so `β = -γ / tan α` is shared by every
/// efficiency.
pub fn single_detector_schedule(
    target_gamma: C64,
    alpha: f64,
    efficiencies: &[f64],
) -> Result<SettingSchedule> {
    let (sin, cos) = alpha.sin_cos();
    if sin.abs() < DEGENERATE_TRIG || cos.abs() < DEGENERATE_TRIG {
        return Err(Error::InvalidParameter(format!(
            "beam-splitter angle {alpha} is degenerate for single-detector mode"
        )));
    }
    if efficiencies.is_empty() {
        return Err(Error::InvalidParameter("no efficiencies given".into()));
    }
    let beta = -target_gamma * (cos / sin);
    let settings = efficiencies
        .iter()
        .map(|&nu| {
            if !(nu > 0.0 && nu <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "efficiency must lie in (0, 1], got {nu}"
                )));
            }
            let setting = derive_setting(alpha, beta, DetectorPair::single(nu)?)?;
            check_realized(target_gamma, &setting)?;
            Ok(setting)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SettingSchedule {
        target_gamma,
        settings,
        recipe: ScheduleSpec::Single {
            alpha,
            efficiencies: efficiencies.to_vec(),
        },
    })
}

/// Two detectors with fixed, distinct efficiencies; the angle is varied and
/// `β_j = 2γ ν̄_j / ((ν_d - ν_c) sin 2α_j)` keeps the displacement fixed.
pub fn dual_detector_schedule(
    target_gamma: C64,
    detectors: DetectorPair,
    angles: &[f64],
) -> Result<SettingSchedule> {
    detectors.validate()?;
    let DetectorPair { nu_c, nu_d } = detectors;
    if nu_c == nu_d {
        return Err(Error::InvalidParameter(
            "dual-detector mode needs distinct efficiencies".into(),
        ));
    }
    if angles.is_empty() {
        return Err(Error::InvalidParameter("no angles given".into()));
    }
    let settings = angles
        .iter()
        .map(|&alpha| {
            let (sin, cos) = alpha.sin_cos();
            let sin2 = 2.0 * sin * cos;
            if sin2.abs() < DEGENERATE_TRIG {
                return Err(Error::InvalidParameter(format!(
                    "angle {alpha} has sin(2α) = 0"
                )));
            }
            let nu_bar = nu_c * cos * cos + nu_d * sin * sin;
            let beta = target_gamma * (2.0 * nu_bar / ((nu_d - nu_c) * sin2));
            let setting = derive_setting(alpha, beta, detectors)?;
            check_realized(target_gamma, &setting)?;
            Ok(setting)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SettingSchedule {
        target_gamma,
        settings,
        recipe: ScheduleSpec::Dual {
            nu_c,
            nu_d,
            angles: angles.to_vec(),
        },
    })
}

/// Exact probability that no detector clicks.
///
/// The displaced photon statistics are summed over the whole working
/// dimension, so the result is limited only by the padding, not by `n_trunc`.
pub fn no_click_probability(
    rho: &DensityMatrix,
    setting: &Setting,
    cfg: &TruncationConfig,
) -> Result<f64> {
    let populations = padded_populations(rho, setting.gamma, cfg)?;
    Ok(attenuated_sum(&populations, setting))
}

/// [`no_click_probability`] for many settings, reusing the displaced
/// statistics across consecutive settings with the same displacement.
pub fn no_click_probabilities(
    rho: &DensityMatrix,
    settings: &[Setting],
    cfg: &TruncationConfig,
) -> Result<Vec<f64>> {
    let mut cache: Option<(C64, Vec<f64>)> = None;
    settings
        .iter()
        .map(|s| {
            let reuse = cache
                .as_ref()
                .is_some_and(|(g, _)| (*g - s.gamma).norm() <= GAMMA_TOL * g.norm().max(1.0));
            if !reuse {
                cache = Some((s.gamma, padded_populations(rho, s.gamma, cfg)?));
            }
            let (_, populations) = cache.as_ref().expect("cache filled above");
            Ok(attenuated_sum(populations, s))
        })
        .collect()
}

fn padded_populations(rho: &DensityMatrix, gamma: C64, cfg: &TruncationConfig) -> Result<Vec<f64>> {
    let populations = displaced_populations(rho, gamma, cfg)?;
    let captured: f64 = populations.iter().sum();
    let leak = rho.trace() - captured;
    if leak > PAD_LEAK_TOL {
        return Err(Error::TruncationLeak {
            gamma,
            leak,
            limit: PAD_LEAK_TOL,
        });
    }
    Ok(populations)
}

fn attenuated_sum(populations: &[f64], setting: &Setting) -> f64 {
    let q = 1.0 - setting.nu_bar;
    let mut weight = 1.0;
    let mut sum = 0.0;
    for r in populations {
        sum += weight * r;
        weight *= q;
    }
    (setting.y.exp() * sum).clamp(0.0, 1.0)
}

/// Outcome counts for one setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClickRecord {
    pub setting: Setting,
    pub n_runs: u64,
    pub n_noclick: u64,
    /// Observed no-click frequency; equals `n_noclick / n_runs` for sampled
    /// records and the exact probability for noise-free ones.
    pub freq: f64,
}

impl ClickRecord {
    pub fn from_counts(setting: Setting, n_runs: u64, n_noclick: u64) -> Result<Self> {
        if n_runs == 0 || n_noclick > n_runs {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= n_noclick <= n_runs with n_runs >= 1, got {n_noclick}/{n_runs}"
            )));
        }
        Ok(Self {
            setting,
            n_runs,
            n_noclick,
            freq: n_noclick as f64 / n_runs as f64,
        })
    }

    /// Noise-free record carrying the probability itself.
    pub fn exact(setting: Setting, p: f64, n_runs: u64) -> Result<Self> {
        check_probability(p)?;
        if n_runs == 0 {
            return Err(Error::InvalidParameter("n_runs must be positive".into()));
        }
        Ok(Self {
            setting,
            n_runs,
            n_noclick: (p * n_runs as f64).round() as u64,
            freq: p,
        })
    }
}

fn check_probability(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Generator for one `(seed, stream_id)` pair; distinct streams are
/// independent, so grid points can be sampled in any order.
pub fn stream_rng(seed: u64, stream_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// Stream id of setting `j` at grid point `point_index`.
pub fn stream_id(point_index: usize, n_settings: usize, j: usize) -> u64 {
    (point_index as u64) * (n_settings as u64) + j as u64
}

/// Seed for an independent repetition of a whole scan.
pub fn repetition_seed(master: u64, repetition: u64) -> u64 {
    // SplitMix64 finalizer.
    let mut z = master.wrapping_add(
        repetition
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `n_noclick ~ Binomial(n_runs, p)` from the stream `(seed, stream_id)`.
pub fn sample_clicks(
    setting: Setting,
    p: f64,
    n_runs: u64,
    seed: u64,
    stream_id: u64,
) -> Result<ClickRecord> {
    check_probability(p)?;
    if n_runs == 0 {
        return Err(Error::InvalidParameter("n_runs must be positive".into()));
    }
    let binomial = Binomial::new(n_runs, p)
        .map_err(|e| Error::InvalidParameter(format!("binomial({n_runs}, {p}): {e}")))?;
    let n_noclick = binomial.sample(&mut stream_rng(seed, stream_id));
    ClickRecord::from_counts(setting, n_runs, n_noclick)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{density_from_pure, StateSpec};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn trunc() -> TruncationConfig {
        TruncationConfig::new(12).unwrap()
    }

    #[test]
    fn single_detector_reduces_to_tangent_law() {
        let beta = c(0.7, -0.2);
        let s = derive_setting(0.3, beta, DetectorPair::single(0.6).unwrap()).unwrap();
        assert_abs_diff_eq!(
            (s.gamma() + beta * 0.3f64.tan()).norm(),
            0.0,
            epsilon = 1e-15
        );
        assert_eq!(s.y(), 0.0);
        assert_abs_diff_eq!(s.nu_bar(), 0.6 * 0.3f64.cos().powi(2), epsilon = 1e-16);
    }

    #[test]
    fn zero_angle_and_equal_efficiencies() {
        let s = derive_setting(0.0, c(1.0, 1.0), DetectorPair::new(0.4, 0.7).unwrap()).unwrap();
        assert_eq!(s.nu_bar(), 0.4);
        assert_eq!(s.gamma(), c(0.0, 0.0));
        // The whole probe reaches detector d.
        assert_abs_diff_eq!(s.y(), -2.0 * 0.7, epsilon = 1e-15);

        let s = derive_setting(0.9, c(1.0, -0.5), DetectorPair::new(0.5, 0.5).unwrap()).unwrap();
        assert_eq!(s.gamma().norm(), 0.0);
        assert_abs_diff_eq!(s.nu_bar(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn vanishing_effective_efficiency_rejected() {
        assert!(derive_setting(0.4, c(1.0, 0.0), DetectorPair::new(0.0, 0.0).unwrap()).is_err());
        assert!(derive_setting(0.0, c(1.0, 0.0), DetectorPair::new(0.0, 0.5).unwrap()).is_err());
        assert!(DetectorPair::new(1.2, 0.0).is_err());
    }

    #[test]
    fn single_schedule_properties() {
        let effs = homogeneous(0.1, 0.9, 30);
        assert_eq!(effs.len(), 30);
        assert_abs_diff_eq!(effs[0], 0.1);
        assert_abs_diff_eq!(effs[29], 0.9, epsilon = 1e-15);
        let target = c(1.3, -0.8);
        let sched = single_detector_schedule(target, 0.05, &effs).unwrap();
        assert_eq!(sched.len(), 30);
        let beta = sched.settings[0].beta();
        for s in &sched.settings {
            assert_eq!(s.beta(), beta);
            assert_eq!(s.detectors().nu_d, 0.0);
            assert!((s.gamma() - target).norm() < GAMMA_TOL);
        }
        let zero = single_detector_schedule(c(0.0, 0.0), 0.7, &effs).unwrap();
        assert!(zero.settings.iter().all(|s| s.beta().norm() == 0.0));
        assert!(single_detector_schedule(target, 0.0, &effs).is_err());
        assert!(single_detector_schedule(target, PI / 2.0, &effs).is_err());
        assert!(single_detector_schedule(target, 0.1, &[0.0]).is_err());
    }

    #[test]
    fn dual_schedule_properties() {
        let det = DetectorPair::new(0.3, 0.6).unwrap();
        let sched = dual_detector_schedule(c(1.0, 0.0), det, &[FRAC_PI_4]).unwrap();
        let s = &sched.settings[0];
        assert_abs_diff_eq!(s.nu_bar(), 0.45, epsilon = 1e-15);
        assert_abs_diff_eq!((s.beta() - c(3.0, 0.0)).norm(), 0.0, epsilon = 1e-14);

        let angles = homogeneous(0.1, 1.4, 20);
        let target = c(-0.4, 0.9);
        let sched = dual_detector_schedule(target, det, &angles).unwrap();
        for s in &sched.settings {
            let again = derive_setting(s.alpha(), s.beta(), det).unwrap();
            assert!((again.gamma() - target).norm() < GAMMA_TOL);
            assert_eq!(&again, s);
        }
        let zero = dual_detector_schedule(c(0.0, 0.0), det, &angles).unwrap();
        assert!(zero
            .settings
            .iter()
            .all(|s| s.beta().norm() == 0.0 && s.y() == 0.0));
        assert!(
            dual_detector_schedule(target, DetectorPair::new(0.5, 0.5).unwrap(), &angles).is_err()
        );
        assert!(dual_detector_schedule(target, det, &[PI / 2.0]).is_err());
    }

    #[test]
    fn vacuum_without_probe_never_clicks() {
        let rho = StateSpec::Fock { n: 0 }.density(&trunc()).unwrap();
        let s = derive_setting(0.4, c(0.0, 0.0), DetectorPair::new(0.7, 0.2).unwrap()).unwrap();
        assert_abs_diff_eq!(
            no_click_probability(&rho, &s, &trunc()).unwrap(),
            1.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn coherent_signal_geometric_sum() {
        let a0 = c(0.8, 0.6);
        let rho = StateSpec::Coherent {
            re: a0.re,
            im: a0.im,
        }
        .density(&trunc())
        .unwrap();
        for alpha in [0.0, 0.3] {
            let s =
                derive_setting(alpha, c(0.0, 0.0), DetectorPair::single(0.55).unwrap()).unwrap();
            let p = no_click_probability(&rho, &s, &trunc()).unwrap();
            let expected = (-0.55 * a0.norm_sqr() * alpha.cos().powi(2)).exp();
            assert_abs_diff_eq!(p, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn coherent_signal_with_probe_matches_two_mode_optics() {
        // Both inputs coherent: output amplitudes follow the beam-splitter map.
        let a0 = c(0.5, -0.3);
        let rho = StateSpec::Coherent {
            re: a0.re,
            im: a0.im,
        }
        .density(&trunc())
        .unwrap();
        let det = DetectorPair::new(0.35, 0.8).unwrap();
        for (alpha, beta) in [(0.3, c(0.4, 0.2)), (1.1, c(-0.6, 0.5)), (2.0, c(0.1, -0.9))] {
            let s = derive_setting(alpha, beta, det).unwrap();
            let (sin, cos) = f64::sin_cos(alpha);
            let amp_c = a0 * cos + beta * sin;
            let amp_d = beta * cos - a0 * sin;
            let expected = (-det.nu_c * amp_c.norm_sqr() - det.nu_d * amp_d.norm_sqr()).exp();
            let p = no_click_probability(&rho, &s, &trunc()).unwrap();
            assert_abs_diff_eq!(p, expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn sampling_edge_probabilities() {
        let s = derive_setting(0.2, c(0.0, 0.0), DetectorPair::single(0.5).unwrap()).unwrap();
        assert_eq!(sample_clicks(s, 1.0, 100, 7, 0).unwrap().freq, 1.0);
        assert_eq!(sample_clicks(s, 0.0, 100, 7, 0).unwrap().freq, 0.0);
        assert!(sample_clicks(s, 1.5, 100, 7, 0).is_err());
        assert!(sample_clicks(s, 0.5, 0, 7, 0).is_err());
    }

    #[test]
    fn sampling_concentrates_within_five_sigma() {
        let s = derive_setting(0.2, c(0.0, 0.0), DetectorPair::single(0.5).unwrap()).unwrap();
        let bound = 5.0 * (0.25f64 / 1e4).sqrt();
        for seed in 0..200 {
            let rec = sample_clicks(s, 0.5, 10_000, seed, 3).unwrap();
            assert!((rec.freq - 0.5).abs() <= bound, "seed {seed}: {}", rec.freq);
        }
    }

    #[test]
    fn repetition_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> =
            (0..1000).map(|r| repetition_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_eq!(stream_id(3, 30, 4), 94);
    }

    #[test]
    fn no_click_probability_monotone_in_efficiency() {
        let rho = StateSpec::Squeezed { squeeze: 0.4 }
            .density(&trunc())
            .unwrap();
        let effs = homogeneous(0.05, 1.0, 20);
        let mut last = f64::INFINITY;
        for nu_c in &effs {
            let s =
                derive_setting(0.5, c(0.3, 0.1), DetectorPair::new(*nu_c, 0.4).unwrap()).unwrap();
            let p = no_click_probability(&rho, &s, &trunc()).unwrap();
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn batched_probabilities_match_single_evaluation() {
        let rho = StateSpec::Coherent { re: 0.8, im: -0.3 }
            .density(&trunc())
            .unwrap();
        let mut settings = single_detector_schedule(c(0.5, 0.2), 0.3, &homogeneous(0.1, 0.9, 7))
            .unwrap()
            .settings;
        settings.extend(
            dual_detector_schedule(
                c(-0.4, 0.1),
                DetectorPair::new(0.3, 0.8).unwrap(),
                &homogeneous(0.2, 1.2, 5),
            )
            .unwrap()
            .settings,
        );
        let batch = no_click_probabilities(&rho, &settings, &trunc()).unwrap();
        for (s, p) in settings.iter().zip(batch) {
            let single = no_click_probability(&rho, s, &trunc()).unwrap();
            assert_abs_diff_eq!(p, single, epsilon = 1e-13);
        }
    }

    proptest! {
        #[test]
        fn derived_fields_are_reproducible(
            alpha in 0.01f64..1.5, re in -2.0f64..2.0, im in -2.0f64..2.0,
            nu_c in 0.01f64..1.0, nu_d in 0.0f64..1.0,
        ) {
            let det = DetectorPair::new(nu_c, nu_d).unwrap();
            let a = derive_setting(alpha, c(re, im), det).unwrap();
            let b = derive_setting(alpha, c(re, im), det).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.y() <= 0.0);
            prop_assert!(a.nu_bar() > 0.0 && a.nu_bar() <= 1.0);
        }

        #[test]
        fn sampling_is_deterministic(p in 0.0f64..=1.0, n in 1u64..100_000, seed: u64, stream: u64) {
            let s = derive_setting(0.2, c(0.0, 0.0), DetectorPair::single(0.5).unwrap()).unwrap();
            let a = sample_clicks(s, p, n, seed, stream).unwrap();
            let b = sample_clicks(s, p, n, seed, stream).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a.n_noclick <= n);
        }

        #[test]
        fn probabilities_stay_in_unit_interval(
            re in -1.5f64..1.5, im in -1.5f64..1.5, nu_c in 0.01f64..1.0, nu_d in 0.0f64..1.0,
            alpha in 0.05f64..1.5,
        ) {
            let rho = density_from_pure(&crate::fock::coherent_state(c(0.4, 0.3), &trunc()).unwrap());
            let s = derive_setting(alpha, c(re, im), DetectorPair::new(nu_c, nu_d).unwrap()).unwrap();
            // Settings displacing beyond the working dimension are rejected, not clamped.
            prop_assume!(s.gamma().norm_sqr() <= trunc().max_displacement_sq());
            match no_click_probability(&rho, &s, &trunc()) {
                Ok(p) => prop_assert!((0.0..=1.0).contains(&p)),
                Err(e) => prop_assert!(matches!(e, Error::TruncationLeak { .. }), "{}", e),
            }
        }
    }
}
