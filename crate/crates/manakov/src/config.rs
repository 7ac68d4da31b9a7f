//! Experiment configuration (TOML) and built-in presets.
//!
//! ```toml
//! [experiment]
//! name = "desk"
//! backend = "rp-surrogate"      # or "ssfm"
//! receiver = "dbp"              # or "disp-comp"
//! models = ["2pcpan", "mr", "pd", "memoryless"]
//! powers_dbm = [-8.0, -6.0, -4.0]
//! symbols = 1024                # M per stream
//! train_runs = 24
//! test_runs = 20                # N
//! seed = 1
//!
//! [link]
//! alpha_db_per_km = 0.2
//! beta2 = -21.7                 # ps^2/km
//! gamma_nl = 1.27               # 1/(W km)
//! length_km = 250.0
//! eta_phonon = 1.0
//!
//! [plan]
//! side = 1                      # channels -side..=side
//! subcarriers = 1
//! delays = "single-carrier"     # synchronized | single-carrier | four-subcarrier | six-subcarrier
//! ```
//!
//! Optional sections: `[quadrature]`, `[ssfm]`, `[inference]` (with
//! `[inference.pf]`), `[fdpa]` and `[output]`; every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::inference::{FitConfig, PfConfig};
use crate::nli::QuadratureSettings;
use crate::signal::{DelayPreset, LinkConfig, WdmPlan};
use crate::ssfm::NoiseInjection;
use crate::surrogate::ReceiverMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Ssfm,
    RpSurrogate,
}

/// Receiver model evaluated by the particle filter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelVariant {
    /// MR rotation with the whitening filter.
    #[serde(rename = "2pcpan")]
    TwoPCpan,
    /// MR rotation, no whitening.
    #[serde(rename = "mr")]
    Mr,
    #[serde(rename = "pd")]
    Pd,
    #[serde(rename = "memoryless")]
    Memoryless,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::TwoPCpan => "2pcpan",
            ModelVariant::Mr => "mr",
            ModelVariant::Pd => "pd",
            ModelVariant::Memoryless => "memoryless",
        }
    }

    pub fn whitening(self) -> bool {
        self == ModelVariant::TwoPCpan
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub backend: Backend,
    pub receiver: ReceiverMode,
    pub models: Vec<ModelVariant>,
    /// Launch power per channel per polarization.
    pub powers_dbm: Vec<f64>,
    pub symbols: usize,
    pub train_runs: usize,
    pub test_runs: usize,
    pub seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            backend: Backend::RpSurrogate,
            receiver: ReceiverMode::Dbp,
            models: vec![ModelVariant::TwoPCpan, ModelVariant::Mr, ModelVariant::Pd, ModelVariant::Memoryless],
            powers_dbm: vec![-8.0, -7.0, -6.0, -5.0, -4.0],
            symbols: 1024,
            train_runs: 24,
            test_runs: 20,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanSection {
    pub side: i32,
    pub subcarriers: usize,
    pub delays: DelayPreset,
    pub spacing_hz: f64,
    pub bandwidth_hz: f64,
}

impl Default for PlanSection {
    fn default() -> Self {
        PlanSection {
            side: 2,
            subcarriers: 1,
            delays: DelayPreset::SingleCarrier,
            spacing_hz: 50e9,
            bandwidth_hz: 50e9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsfmSection {
    pub step_km: f64,
    /// Sample rate as a multiple of the total WDM bandwidth.
    pub oversampling: usize,
    pub noise: NoiseInjection,
}

impl Default for SsfmSection {
    fn default() -> Self {
        SsfmSection {
            step_km: 0.1,
            oversampling: 4,
            noise: NoiseInjection::PerStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdpaSection {
    pub enabled: bool,
    pub rounds: usize,
}

impl Default for FdpaSection {
    fn default() -> Self {
        FdpaSection {
            enabled: false,
            rounds: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Tensor cache; none disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: PathBuf::from("out"),
            cache_dir: Some(PathBuf::from("cache")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub link: LinkConfig,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub quadrature: QuadratureSettings,
    #[serde(default)]
    pub ssfm: SsfmSection,
    #[serde(default)]
    pub inference: FitConfig,
    #[serde(default)]
    pub fdpa: FdpaSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&s).map_err(|e| e.at(format!("config {}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Derives the ASE level and validates every section.
    pub fn resolved(mut self) -> Result<Self> {
        self.link = self.link.resolved()?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.symbols < 16 {
            return Err(Error::Config(format!("symbols must be >= 16, got {}", e.symbols)));
        }
        if e.train_runs < 2 || e.test_runs < 2 {
            return Err(Error::Config("train_runs and test_runs must be >= 2".into()));
        }
        if e.powers_dbm.is_empty() || e.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::Config("powers_dbm must be a non-empty list of finite values".into()));
        }
        if e.models.is_empty() {
            return Err(Error::Config("at least one model is required".into()));
        }
        if self.plan.side < 0 {
            return Err(Error::Config("plan.side must be >= 0".into()));
        }
        if self.ssfm.oversampling < 2 {
            return Err(Error::Config("ssfm.oversampling must be >= 2".into()));
        }
        if self.inference.pf.particles < 1 {
            return Err(Error::Config("inference.pf.particles must be >= 1".into()));
        }
        if !(self.inference.grid_lo > 0.0 && self.inference.grid_hi >= self.inference.grid_lo) {
            return Err(Error::Config("inference grid bounds must satisfy 0 < grid_lo <= grid_hi".into()));
        }
        if self.fdpa.enabled && self.plan.subcarriers < 2 {
            return Err(Error::Config("fdpa needs subcarriers >= 2".into()));
        }
        self.quadrature.validate()?;
        self.plan(1e-3)?;
        Ok(())
    }

    /// The WDM plan at a per-channel power.
    pub fn plan(&self, power_w: f64) -> Result<WdmPlan> {
        let p = &self.plan;
        WdmPlan::grid(p.side, p.spacing_hz, p.bandwidth_hz, p.subcarriers, power_w, p.delays)
    }

    /// Short hash of the canonical serialization, carried by every CSV row.
    /// Output locations do not enter the hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = OutputSection::default();
        let mut h = Sha256::new();
        h.update(c.to_toml().as_bytes());
        crate::nli::hex(&h.finalize()[..8])
    }

    /// SSFM sample rate, Hz.
    pub fn sample_rate(&self) -> f64 {
        self.ssfm.oversampling as f64 * (2 * self.plan.side + 1) as f64 * self.plan.spacing_hz
    }

    /// Named presets: `desk`, `desk-4sc`, `full`, `full-4sc`, `full-6sc`.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = ExperimentConfig {
            experiment: ExperimentSection::default(),
            link: LinkConfig::table1(1000.0),
            plan: PlanSection::default(),
            quadrature: QuadratureSettings::default(),
            ssfm: SsfmSection::default(),
            inference: FitConfig::default(),
            fdpa: FdpaSection::default(),
            output: OutputSection::default(),
        };
        c.experiment.name = name.into();
        match name {
            "desk" | "desk-4sc" => {
                c.link = LinkConfig::table1(250.0);
                c.plan.side = 1;
                c.experiment.symbols = 1024;
                c.experiment.train_runs = 24;
                c.experiment.test_runs = 20;
                c.experiment.powers_dbm = (-6..=2).step_by(2).map(f64::from).collect();
                c.ssfm.step_km = 0.2;
                c.inference.grid_points = 7;
                c.inference.pf = PfConfig {
                    particles: 128,
                    resample_threshold: 0.5,
                };
                if name == "desk-4sc" {
                    c.plan.subcarriers = 4;
                    c.plan.delays = DelayPreset::FourSubcarrier;
                    c.experiment.symbols = 512;
                    c.experiment.models = vec![ModelVariant::Mr];
                    // 1-dB grid bracketing the peak; coarser grids push the allocation to grid corners
                    c.experiment.powers_dbm = (-9..=-3).map(f64::from).collect();
                    c.fdpa = FdpaSection { enabled: true, rounds: 1 };
                }
            }
            "full" => {
                c.experiment.symbols = 6825;
                c.experiment.train_runs = 24;
                c.experiment.test_runs = 120;
                c.experiment.powers_dbm = (-10..=-2).map(f64::from).collect();
            }
            "full-4sc" | "full-6sc" => {
                let s = if name == "full-4sc" { 4 } else { 6 };
                c.plan.subcarriers = s;
                c.plan.delays = if s == 4 { DelayPreset::FourSubcarrier } else { DelayPreset::SixSubcarrier };
                // subcarrier centres sit on the block frequency grid only for even M
                c.experiment.symbols = if s == 4 { 2048 } else { 1366 };
                c.experiment.train_runs = 20;
                c.experiment.test_runs = 100;
                c.experiment.powers_dbm = (-10..=-2).map(f64::from).collect();
                c.fdpa.enabled = true;
            }
            _ => return Err(Error::Config(format!("unknown preset {name:?}"))),
        }
        c.resolved()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_toml() {
        for name in ["desk", "desk-4sc", "full", "full-4sc", "full-6sc"] {
            let c = ExperimentConfig::preset(name).unwrap();
            let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
            assert_eq!(c, back, "{name}");
            assert_eq!(c.hash(), back.hash());
        }
        assert!(ExperimentConfig::preset("nope").unwrap_err().is_config());
    }

    #[test]
    fn minimal_file_and_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            [link]
            alpha_db_per_km = 0.2
            beta2 = -21.7
            gamma_nl = 1.27
            length_km = 1000.0
            eta_phonon = 1.0
            "#,
        )
        .unwrap();
        assert!(c.link.n_ase_psd > 0.0);
        assert_eq!(c.plan.side, 2);
        assert_eq!(c.experiment.backend, Backend::RpSurrogate);
        assert_eq!(c.plan(1e-3).unwrap().channels.len(), 5);
    }

    #[test]
    fn rejects_bad_values() {
        let base = ExperimentConfig::preset("desk").unwrap();
        let mut c = base.clone();
        c.experiment.test_runs = 1;
        assert!(c.validate().unwrap_err().is_config());
        let mut c = base.clone();
        c.fdpa.enabled = true;
        assert!(c.validate().unwrap_err().is_config());
        let mut t = base.to_toml();
        t.push_str("\n[bogus]\nx = 1\n");
        assert!(ExperimentConfig::from_toml(&t).unwrap_err().is_config());
        let mut c = base;
        c.experiment.seed += 1;
        assert_ne!(c.hash(), ExperimentConfig::preset("desk").unwrap().hash());
    }
}
