//! Figure data series at desk or full scale.
//!
//! | figure | content |
//! |---|---|
//! | fig1 | \|S(n,k,k′)\| for \|n\|,\|k\|,\|k′\| ≤ 4, 1000 km, synchronized |
//! | fig2 | \|C(n,k,k′)\| of channel 1 on the same grid |
//! | fig3 | per-subcarrier rates, 4 subcarriers, synchronized, uniform power |
//! | fig4 | spectral efficiency of the receiver models against power |
//! | fig5 | 6-subcarrier system with FDPA |
//!
//! Desk scale shrinks the channel count, link length, block length and
//! run counts so each figure finishes in minutes; full scale uses the
//! original sizes and runs for hours.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ModelVariant};
use crate::experiment::{awgn_bound, find_tensor, run_experiment, Pipeline};
use crate::nli::TensorKind;
use crate::signal::{DelayPreset, LinkConfig};
use crate::surrogate::ReceiverMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
}

impl FromStr for Figure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "fig1" => Figure::Fig1,
            "fig2" => Figure::Fig2,
            "fig3" => Figure::Fig3,
            "fig4" => Figure::Fig4,
            "fig5" => Figure::Fig5,
            _ => return Err(Error::Config(format!("unknown figure {s:?}; expected fig1..fig5"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Desk,
    Full,
}

impl FromStr for Scale {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "full" => Ok(Scale::Full),
            _ => Err(Error::Config(format!("unknown scale {s:?}; expected desk or full"))),
        }
    }
}

/// Overrides applied to every configuration a figure builds.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, mut c: ExperimentConfig) -> Result<ExperimentConfig> {
        if let Some(s) = self.seed {
            c.experiment.seed = s;
        }
        if self.cache_dir.is_some() {
            c.output.cache_dir = self.cache_dir.clone();
        }
        c.resolved()
    }
}

/// The experiment configurations a figure runs, with their labels.
pub fn figure_configs(fig: Figure, scale: Scale) -> Result<Vec<(String, ExperimentConfig)>> {
    use ModelVariant::*;
    let mut v = Vec::new();
    match (fig, scale) {
        (Figure::Fig1 | Figure::Fig2, _) => {
            let mut c = ExperimentConfig::preset("full")?;
            c.link = LinkConfig::table1(1000.0);
            c.plan.delays = DelayPreset::Synchronized;
            c.plan.side = if fig == Figure::Fig1 { 0 } else { 1 };
            c.experiment.receiver = ReceiverMode::DispComp;
            c.quadrature.n_max = 4;
            c.quadrature.sigma_max = 12;
            c.quadrature.drop_below = 0.0;
            if scale == Scale::Full {
                c.quadrature.n_max = 8;
                c.quadrature.sigma_max = 24;
            }
            v.push(("tensor".into(), c));
        }
        (Figure::Fig3, Scale::Desk) => {
            let mut c = ExperimentConfig::preset("desk-4sc")?;
            c.plan.delays = DelayPreset::Synchronized;
            c.fdpa.enabled = false;
            v.push(("4sc-synchronized".into(), c));
        }
        (Figure::Fig3, Scale::Full) => {
            let mut c = ExperimentConfig::preset("full-4sc")?;
            c.plan.delays = DelayPreset::Synchronized;
            c.fdpa.enabled = false;
            c.experiment.models = vec![TwoPCpan];
            c.experiment.powers_dbm = (-13..=-4).map(f64::from).collect();
            v.push(("4sc-synchronized".into(), c));
        }
        (Figure::Fig4, Scale::Desk) => {
            v.push(("sc".into(), ExperimentConfig::preset("desk")?));
        }
        (Figure::Fig4, Scale::Full) => {
            let mut sc = ExperimentConfig::preset("full")?;
            sc.experiment.models = vec![TwoPCpan, Pd, Memoryless];
            v.push(("sc".into(), sc));
            let mut fd = ExperimentConfig::preset("full-4sc")?;
            fd.experiment.models = vec![TwoPCpan, Pd];
            v.push(("4sc-fdpa".into(), fd));
            let mut sy = ExperimentConfig::preset("full-4sc")?;
            sy.plan.delays = DelayPreset::Synchronized;
            sy.experiment.models = vec![Pd];
            sy.fdpa.enabled = false;
            v.push(("4sc-synchronized".into(), sy));
        }
        (Figure::Fig5, Scale::Desk) => {
            let mut c = ExperimentConfig::preset("desk-4sc")?;
            c.plan.subcarriers = 6;
            c.plan.delays = DelayPreset::SixSubcarrier;
            c.experiment.models = vec![Mr, Pd];
            v.push(("6sc-fdpa".into(), c));
        }
        (Figure::Fig5, Scale::Full) => {
            let mut c = ExperimentConfig::preset("full-6sc")?;
            c.experiment.models = vec![TwoPCpan, Pd];
            v.push(("6sc-fdpa".into(), c));
        }
    }
    Ok(v)
}

/// Writes the data of `fig` under `out/<fig>/` and returns the files.
pub fn reproduce(fig: Figure, scale: Scale, out: &Path, ov: &Overrides) -> Result<Vec<PathBuf>> {
    let name = format!("{fig:?}").to_lowercase();
    let dir = out.join(&name);
    std::fs::create_dir_all(&dir)?;
    if scale == Scale::Full {
        eprintln!("warning: {name} at full scale runs for many hours");
    }
    let mut files = Vec::new();
    for (label, cfg) in figure_configs(fig, scale)? {
        let cfg = ov.apply(cfg)?;
        match fig {
            Figure::Fig1 | Figure::Fig2 => files.push(tensor_table(fig, &cfg, &dir)?),
            _ => {
                let sub = dir.join(&label);
                let o = run_experiment(&cfg, &sub).map_err(|e| e.at(format!("{name} {label}")))?;
                files.extend([o.rates, o.fits, o.totals]);
                files.extend(o.curves);
                files.extend(o.allocations);
                if fig == Figure::Fig4 && label == "sc" {
                    let path = dir.join("awgn.csv");
                    let mut f = BufWriter::new(File::create(&path)?);
                    writeln!(f, "config_hash,power_dbm,log2_1_plus_snr")?;
                    for &p in &cfg.experiment.powers_dbm {
                        writeln!(f, "{},{p},{:.9}", cfg.hash(), awgn_bound(&cfg, p))?;
                    }
                    f.flush()?;
                    files.push(path);
                }
            }
        }
    }
    Ok(files)
}

/// `|S|` (fig1) or `|C|` of channel 1 (fig2) on |n|,|k|,|k′| ≤ 4.
fn tensor_table(fig: Figure, cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    let p = Pipeline::new(cfg.clone())?;
    let t = p.tensors()?;
    let plan = p.plan_at(0.0)?;
    let (kind, col) = if fig == Figure::Fig1 { (TensorKind::S, "abs_s") } else { (TensorKind::C, "abs_c") };
    let x = find_tensor(t, &plan, kind, 1, 0, 0)?;
    let path = dir.join(format!("{}.csv", if fig == Figure::Fig1 { "spm" } else { "xpm" }));
    let mut f = BufWriter::new(File::create(&path)?);
    writeln!(f, "config_hash,n,k,kp,{col}")?;
    for n in -4..=4 {
        for k in -4..=4 {
            for kp in -4..=4 {
                writeln!(f, "{},{n},{k},{kp},{:.9e}", p.hash, x.get(n, k, kp).norm())?;
            }
        }
    }
    f.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_figure_has_valid_configs() {
        for f in ["fig1", "fig2", "fig3", "fig4", "fig5"] {
            for s in ["desk", "full"] {
                let cs = figure_configs(f.parse().unwrap(), s.parse().unwrap()).unwrap();
                assert!(!cs.is_empty());
                for (_, c) in cs {
                    c.clone().resolved().unwrap();
                }
            }
        }
        assert!("fig9".parse::<Figure>().unwrap_err().is_config());
        assert!("huge".parse::<Scale>().unwrap_err().is_config());
    }
}
