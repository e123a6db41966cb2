use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codebooks::{CompensationModel, DEFAULT_R_MAX, DEFAULT_R_MIN};
use crate::error::{Error, Result};
use crate::pipeline::{LocalizationMode, ResidualBound};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub carrier_hz: f64,
    #[serde(with = "crate::serde_ext::db")]
    pub k_db: f64,
    /// UE centre distance from the BS centre, drawn uniformly.
    pub ue_distance_range_m: [f64; 2],
    /// UE centre angle from broadside, drawn uniformly.
    pub ue_angle_range_deg: [f64; 2],
    pub ue_rotation: f64,
    pub trials: usize,
    pub master_seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_t: 192,
            n_r: 4,
            carrier_hz: 28e9,
            k_db: 13.0,
            ue_distance_range_m: [1.0, 20.0],
            ue_angle_range_deg: [-60.0, 60.0],
            ue_rotation: 0.0,
            trials: 100,
            master_seed: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    /// Compression ratio.
    Mu,
    /// Iteration budget `I`.
    Iterations,
    /// Oversampling rate of the DFT and polar codebooks.
    Beta,
    /// Radius of the injected localization error (metres).
    Epsilon,
    /// Target size of the DFT and polar codebooks.
    CodebookSize,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Mu => "mu",
            SweepVariable::Iterations => "iterations",
            SweepVariable::Beta => "beta",
            SweepVariable::Epsilon => "epsilon",
            SweepVariable::CodebookSize => "codebook_size",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "mu" => SweepVariable::Mu,
            "iterations" | "i" => SweepVariable::Iterations,
            "beta" => SweepVariable::Beta,
            "epsilon" | "eps" => SweepVariable::Epsilon,
            "codebook_size" => SweepVariable::CodebookSize,
            other => return Err(Error::Config(format!("unknown sweep variable '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            variable: SweepVariable::Mu,
            values: vec![0.25, 0.4, 0.6],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Dft,
    Spherical,
    /// Localization followed by OMP in the eigen-codebook.
    DpssTwoStep,
    /// OMP in the eigen-codebook built at the true UE centre.
    DpssOracle,
}

impl EstimatorKind {
    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::Dft => "dft",
            EstimatorKind::Spherical => "spherical",
            EstimatorKind::DpssTwoStep => "dpss_two_step",
            EstimatorKind::DpssOracle => "dpss_oracle",
        }
    }
}

/// Residual stopping rule as configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopRule {
    Relative {
        factor: f64,
    },
    Absolute {
        epsilon: f64,
    },
    /// Stop at the noise level, optionally also counting the expected NLoS
    /// power per slot, `1 / (N_T N_R (1 + K))`.
    ///
    /// The bound sits `sigmas` standard deviations above the expected
    /// unmodeled residual energy.
    NoiseFloor {
        include_nlos: bool,
        #[serde(default = "default_sigmas")]
        sigmas: f64,
    },
}

fn default_sigmas() -> f64 {
    2.0
}

impl StopRule {
    pub fn residual_bound(&self, n: usize, k_db: f64) -> ResidualBound {
        match *self {
            StopRule::Relative { factor } => ResidualBound::Relative { factor },
            StopRule::Absolute { epsilon } => ResidualBound::Absolute { epsilon },
            StopRule::NoiseFloor { include_nlos, sigmas } => {
                let k = crate::model::db_to_linear(k_db);
                let p = if include_nlos && k.is_finite() {
                    1.0 / (n as f64 * (1.0 + k))
                } else {
                    0.0
                };
                ResidualBound::NoiseFloor {
                    unmodeled_power: p,
                    sigmas,
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmpConfig {
    pub max_iters: usize,
    pub stop: StopRule,
}

impl Default for OmpConfig {
    fn default() -> Self {
        OmpConfig {
            max_iters: 30,
            stop: StopRule::NoiseFloor {
                include_nlos: true,
                sigmas: default_sigmas(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwoStepConfig {
    pub localization: LocalizationMode,
    pub compensation: CompensationModel,
    /// Injected localization error radius; replaces localization when set.
    pub injected_error_m: Option<f64>,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        TwoStepConfig {
            localization: LocalizationMode::default(),
            compensation: CompensationModel::default(),
            injected_error_m: None,
            r_min: DEFAULT_R_MIN,
            r_max: DEFAULT_R_MAX,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv_path: Option<PathBuf>,
    pub json_path: Option<PathBuf>,
    /// Fill the `wall_time_s` column. Off by default so that output files
    /// are byte-identical across runs.
    pub record_wall_time: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub estimators: Vec<EstimatorKind>,
    #[serde(with = "crate::serde_ext::db")]
    pub snr_db: f64,
    /// Compression ratio when it is not the swept variable.
    pub mu: f64,
    /// Oversampling rate when it is not the swept variable.
    pub beta: f64,
    pub cache_dir: Option<PathBuf>,
    pub scenario: ScenarioConfig,
    pub sweep: SweepConfig,
    pub omp: OmpConfig,
    pub two_step: TwoStepConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            estimators: vec![EstimatorKind::Dft, EstimatorKind::Spherical, EstimatorKind::DpssTwoStep],
            snr_db: 20.0,
            mu: 0.4,
            beta: 1.0,
            cache_dir: None,
            scenario: ScenarioConfig::default(),
            sweep: SweepConfig::default(),
            omp: OmpConfig::default(),
            two_step: TwoStepConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reduced profile: 64 x 2 arrays, 50 trials.
    pub fn apply_desk_scale(&mut self) {
        self.scenario.n_t = 64;
        self.scenario.n_r = 2;
        self.scenario.trials = 50;
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        let bad = |msg: String| Err(Error::Config(msg));
        if s.n_t == 0 || s.n_r == 0 {
            return bad("array sizes must be positive".into());
        }
        if !(s.carrier_hz.is_finite() && s.carrier_hz > 0.0) {
            return bad(format!("carrier frequency {}", s.carrier_hz));
        }
        if s.k_db.is_nan() {
            return bad("Rician factor is NaN".into());
        }
        let [r0, r1] = s.ue_distance_range_m;
        if !(r0 > 0.0 && r1 >= r0 && r1.is_finite()) {
            return bad(format!("UE distance range [{r0}, {r1}]"));
        }
        let [a0, a1] = s.ue_angle_range_deg;
        if !(a0 > -90.0 && a1 < 90.0 && a1 >= a0) {
            return bad(format!("UE angle range [{a0}, {a1}] must lie within (-90, 90) degrees"));
        }
        if s.trials == 0 {
            return bad("at least one trial is required".into());
        }
        if self.estimators.is_empty() {
            return bad("no estimators selected".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("SNR {} dB", self.snr_db));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return bad(format!("compression ratio {}", self.mu));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return bad(format!("oversampling rate {}", self.beta));
        }
        if self.omp.max_iters == 0 {
            return bad("omp.max_iters must be at least 1".into());
        }
        let t = &self.two_step;
        if !(t.r_min > 0.0 && t.r_max > t.r_min) {
            return bad(format!("polar grid distance range [{}, {}]", t.r_min, t.r_max));
        }
        if let Some(e) = t.injected_error_m {
            if !(e >= 0.0 && e.is_finite()) {
                return bad(format!("injected localization error {e}"));
            }
        }
        if self.sweep.values.is_empty() {
            return bad("sweep has no values".into());
        }
        for &v in &self.sweep.values {
            let ok = match self.sweep.variable {
                SweepVariable::Mu => v > 0.0 && v.is_finite(),
                SweepVariable::Iterations => v >= 1.0 && v.fract() == 0.0,
                SweepVariable::Beta => v >= 1.0 && v.is_finite(),
                SweepVariable::Epsilon => v >= 0.0 && v.is_finite(),
                SweepVariable::CodebookSize => v >= 1.0 && v.fract() == 0.0,
            };
            if !ok {
                return bad(format!("invalid {} value {v}", self.sweep.variable.name()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let c = ExperimentConfig::default();
        assert_eq!((c.scenario.n_t, c.scenario.n_r), (192, 4));
        assert_eq!(c.scenario.carrier_hz, 28e9);
        assert_eq!(c.scenario.k_db, 13.0);
        assert_eq!(c.scenario.ue_distance_range_m, [1.0, 20.0]);
        c.validate().unwrap();
        let text = c.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_file_uses_defaults() {
        let c = ExperimentConfig::from_toml_str(
            r#"
            estimators = ["dft", "dpss_two_step"]
            snr_db = "inf"

            [scenario]
            n_t = 32
            trials = 3

            [sweep]
            variable = "iterations"
            values = [1, 2, 5]

            [omp]
            stop = { type = "relative", factor = 1e-6 }
            "#,
        )
        .unwrap();
        assert_eq!(c.scenario.n_t, 32);
        assert_eq!(c.scenario.n_r, 4);
        assert_eq!(c.snr_db, f64::INFINITY);
        assert_eq!(c.sweep.variable, SweepVariable::Iterations);
        assert_eq!(c.omp.stop, StopRule::Relative { factor: 1e-6 });
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(ExperimentConfig::from_toml_str("[sweep]\nvariable = \"gamma\"\nvalues = [1]").is_err());
        assert!(ExperimentConfig::from_toml_str("[sweep]\nvariable = \"iterations\"\nvalues = [1.5]").is_err());
        assert!(ExperimentConfig::from_toml_str("[scenario]\ntrials = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("bogus = 1").is_err());
        assert!(SweepVariable::parse("mu").is_ok());
        assert!(SweepVariable::parse("nope").is_err());
    }

    #[test]
    fn stop_rule_floor() {
        let rule = StopRule::NoiseFloor {
            include_nlos: true,
            sigmas: 2.0,
        };
        let b = rule.residual_bound(128, 0.0);
        assert_eq!(
            b,
            ResidualBound::NoiseFloor {
                unmodeled_power: 1.0 / 256.0,
                sigmas: 2.0
            }
        );
        assert_eq!(
            rule.residual_bound(128, f64::INFINITY),
            ResidualBound::NoiseFloor {
                unmodeled_power: 0.0,
                sigmas: 2.0
            }
        );
        let parsed: OmpConfig = toml::from_str("[stop]\ntype = \"noise_floor\"\ninclude_nlos = false\n").unwrap();
        assert_eq!(
            parsed.stop,
            StopRule::NoiseFloor {
                include_nlos: false,
                sigmas: 2.0
            }
        );
    }
}
