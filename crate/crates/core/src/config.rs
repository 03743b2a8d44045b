//! TOML run configuration.
//!
//! Output files embed the resolved configuration as `## `-prefixed comment
//! lines, and [`RunConfig::parse`] accepts such a file directly, so any
//! output can be regenerated from its own header.

use serde::{Deserialize, Serialize};

use crate::em::{EmConfig, Init, Normalization, UpdateRule};
use crate::fock::{StateSpec, TruncationConfig, DEFAULT_MAX_LEAK};
use crate::measurement::ScheduleSpec;
use crate::wigner::{PhaseGrid, PipelineConfig};
use crate::{Error, Result};

/// Prefix of embedded configuration lines in output headers.
pub const HEADER_PREFIX: &str = "## ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Trials per setting.
    pub n_runs: u64,
    pub n_iterations: usize,
    #[serde(default = "one")]
    pub repetitions: usize,
    #[serde(default)]
    pub exact_probabilities: bool,
    pub state: StateSpec,
    pub truncation: TruncationSection,
    pub detector: ScheduleSpec,
    pub grid: PhaseGrid,
    #[serde(default)]
    pub em: EmSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationSection {
    pub n_trunc: usize,
    /// Defaults to `2·n_trunc + 20`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_pad: Option<usize>,
    #[serde(default = "default_max_leak")]
    pub max_leak: f64,
}

fn default_max_leak() -> f64 {
    DEFAULT_MAX_LEAK
}

impl TruncationSection {
    pub fn resolve(&self) -> Result<TruncationConfig> {
        let cfg = match self.n_pad {
            Some(pad) => TruncationConfig::with_padding(self.n_trunc, pad)?,
            None => TruncationConfig::new(self.n_trunc)?,
        };
        cfg.with_max_leak(self.max_leak)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    pub normalization: Normalization,
    pub update: UpdateRule,
    pub floor_epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_stop: Option<f64>,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = EmConfig::default();
        Self {
            normalization: d.normalization,
            update: d.update,
            floor_epsilon: d.floor_epsilon,
            early_stop: d.early_stop,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl RunConfig {
    /// Parses TOML, or the `## ` header of a previous output file.
    pub fn parse(text: &str) -> Result<Self> {
        let source = extract_header(text).unwrap_or_else(|| text.to_string());
        let cfg: RunConfig = toml::from_str(&source).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let config_err = |e: Error| Error::Config(e.to_string());
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        self.grid.validate().map_err(config_err)?;
        let pipeline = self.pipeline(false).map_err(config_err)?;
        pipeline.validate().map_err(config_err)?;
        self.state.prepare(&pipeline.trunc).map_err(config_err)?;
        Ok(())
    }

    pub fn trunc(&self) -> Result<TruncationConfig> {
        self.truncation.resolve()
    }

    pub fn em_config(&self) -> EmConfig {
        EmConfig {
            n_iterations: self.n_iterations,
            normalization: self.em.normalization,
            update: self.em.update,
            floor_epsilon: self.em.floor_epsilon,
            init: Init::Uniform,
            early_stop: self.em.early_stop,
            record_trace: false,
        }
    }

    pub fn pipeline(&self, retain_tables: bool) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            trunc: self.trunc()?,
            schedule: self.detector.clone(),
            n_runs: self.n_runs,
            em: self.em_config(),
            exact_probabilities: self.exact_probabilities,
            retain_tables,
        })
    }

    /// Comment header: a title line followed by the configuration.
    pub fn header(&self, command: &str) -> String {
        let mut out = format!("# onoff-tomo {command}\n");
        for line in self.to_toml().lines() {
            out.push_str(HEADER_PREFIX);
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Configuration embedded in `## ` lines, if any.
pub fn extract_header(text: &str) -> Option<String> {
    let lines: Vec<&str> = text
        .lines()
        .filter_map(|l| {
            l.strip_prefix(HEADER_PREFIX)
                .or_else(|| (l == HEADER_PREFIX.trim_end()).then_some(""))
        })
        .collect();
    if lines.is_empty() {
        None
    } else {
        Some(lines.join("\n") + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::homogeneous;
    use proptest::prelude::*;

    const SAMPLE: &str = r#"
seed = 7
n_runs = 10000
n_iterations = 1000

[state]
kind = "coherent"
re = 1.0
im = 0.0

[truncation]
n_trunc = 12

[detector]
mode = "single"
alpha = 0.05
efficiencies = [0.1, 0.3, 0.5, 0.7, 0.9, 0.2, 0.4, 0.6, 0.8, 0.85, 0.15, 0.25]

[grid]
re_min = -1.2
re_max = 2.5
im_min = -1.2
im_max = 2.5
n_re = 50
n_im = 50
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.repetitions, 1);
        assert!(!cfg.exact_probabilities);
        assert_eq!(cfg.trunc().unwrap().n_pad, 44);
        assert_eq!(cfg.em, EmSection::default());
        assert_eq!(cfg.output.dir, "out");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("n_iterations = 1000", "n_iterations = 1000\nbogus = 1");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        let text = SAMPLE.replace("n_trunc = 12", "n_trunc = 12\nnpad = 3");
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let text = SAMPLE.replace("n_trunc = 12", "n_trunc = 1");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        let text = SAMPLE.replace("n_re = 50", "n_re = 0");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        let text = SAMPLE.replace("n_trunc = 12", "n_trunc = 20");
        let err = RunConfig::parse(&text).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn header_reparses() {
        let cfg = RunConfig::parse(SAMPLE).unwrap();
        let file = cfg.header("simulate") + "a,b\n1,2\n";
        assert!(file.starts_with("# onoff-tomo simulate\n## "));
        assert_eq!(RunConfig::parse(&file).unwrap(), cfg);
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            any::<u64>(),
            1u64..1_000_000,
            0usize..5000,
            1usize..10,
            any::<bool>(),
            prop_oneof![
                (-2.0..2.0f64, -2.0..2.0f64).prop_map(|(re, im)| StateSpec::Coherent { re, im }),
                (0.0..1.5f64).prop_map(|squeeze| StateSpec::Squeezed { squeeze }),
                (0usize..10).prop_map(|n| StateSpec::Fock { n }),
            ],
            12usize..20,
            prop::option::of(0usize..10),
            prop_oneof![
                (0.01..1.5f64, 0.05..0.5f64).prop_map(|(alpha, lo)| ScheduleSpec::Single {
                    alpha,
                    efficiencies: homogeneous(lo, 0.9, 20),
                }),
                (0.05..0.5f64, 0.5..0.95f64, 0.1..0.7f64).prop_map(|(nu_c, nu_d, lo)| {
                    ScheduleSpec::Dual {
                        nu_c,
                        nu_d,
                        angles: homogeneous(lo, 1.4, 20),
                    }
                }),
            ],
            (-3.0..0.0f64, 0.1..3.0f64, 1usize..60),
            prop::option::of(1e-12..1e-3f64),
        )
            .prop_map(
                |(
                    seed,
                    n_runs,
                    n_iterations,
                    repetitions,
                    exact,
                    state,
                    n_trunc,
                    extra_pad,
                    detector,
                    grid,
                    early_stop,
                )| {
                    RunConfig {
                        seed,
                        n_runs,
                        n_iterations,
                        repetitions,
                        exact_probabilities: exact,
                        state,
                        truncation: TruncationSection {
                            n_trunc,
                            n_pad: extra_pad.map(|e| 2 * n_trunc + 20 + e),
                            max_leak: 0.5,
                        },
                        detector,
                        grid: PhaseGrid {
                            re_min: grid.0,
                            re_max: grid.1,
                            im_min: grid.0 * 0.5,
                            im_max: grid.1 * 2.0,
                            n_re: grid.2,
                            n_im: grid.2 + 1,
                        },
                        em: EmSection {
                            normalization: Normalization::Renormalized,
                            update: UpdateRule::PerPhotonNumber,
                            floor_epsilon: 1e-10,
                            early_stop,
                        },
                        output: OutputSection {
                            dir: "results/run".into(),
                        },
                    }
                },
            )
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(cfg in arb_config()) {
            let text = cfg.to_toml();
            let back: RunConfig = toml::from_str(&text).unwrap();
            prop_assert_eq!(&back, &cfg);
            prop_assert_eq!(back.to_toml(), text);
            let from_header = extract_header(&cfg.header("x")).unwrap();
            let again: RunConfig = toml::from_str(&from_header).unwrap();
            prop_assert_eq!(again, cfg);
        }
    }
}
