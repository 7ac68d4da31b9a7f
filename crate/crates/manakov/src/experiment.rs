//! Pipeline wiring: channel backend → mean phase and noise estimation →
//! model fitting → particle-filter rates → FDPA, with CSV output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::config::{Backend, ExperimentConfig, ModelVariant};
use crate::fdpa::{self, RateCurve};
use crate::inference::{
    self, estimate_mean_phase, estimate_sigma_xi, evaluate_rate, fit_model_scalings, fit_whitening, memoryless_variance, Dataset,
    FittedModel, ModelKind, ModelParams, RateEstimate, SigmaXi,
};
use crate::models::WhitenFilter;
use crate::nli::{build_tensor_set, NliTensor, TensorKind, TensorSet};
use crate::signal::{bandpass_and_match, bandpass_channel, dispersion_apply, synthesize_wdm, Synthesis, SymbolBlock, WdmPlan};
use crate::ssfm::{receiver_dbp, ssfm_propagate, SsfmConfig};
use crate::statistics::{analytic_moments, empirical_moments, large_dispersion_moments};
use crate::surrogate::{rp_channel, rp_decompose, write_block_csv, NliDecomposition, ReceiverMode};
use crate::{dbm_to_watt, rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Train,
    Test,
}

impl Role {
    fn tag(self) -> u64 {
        match self {
            Role::Train => 0x7472_6169_6e,
            Role::Test => 0x7465_7374,
        }
    }
}

/// Seed of run `run` in the given role; train and test seeds come from
/// distinct hash domains.
pub fn run_seed(seed: u64, role: Role, run: usize) -> u64 {
    rng::stream_id(&[seed, role.tag(), run as u64])
}

/// Paired input and output blocks, indexed `[coi stream][run]`.
pub type RunPairs = Vec<Vec<(SymbolBlock, SymbolBlock)>>;

/// Result of one model on one COI stream.
#[derive(Clone, Debug)]
pub struct ModelResult {
    pub variant: ModelVariant,
    pub estimate: RateEstimate,
    pub fit: FittedModel,
}

#[derive(Clone, Debug)]
pub struct StreamResult {
    pub subcarrier: usize,
    /// Stream power per polarization, mW.
    pub power_mw: f64,
    pub phase: [f64; 2],
    pub sigma: SigmaXi,
    pub models: Vec<ModelResult>,
}

impl StreamResult {
    pub fn model(&self, v: ModelVariant) -> Option<&ModelResult> {
        self.models.iter().find(|m| m.variant == v)
    }
}

pub struct Pipeline {
    pub cfg: ExperimentConfig,
    pub hash: String,
    tensors: OnceLock<TensorSet>,
}

impl Pipeline {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Pipeline {
            cfg,
            hash,
            tensors: OnceLock::new(),
        })
    }

    pub fn plan_at(&self, power_dbm: f64) -> Result<WdmPlan> {
        self.cfg.plan(dbm_to_watt(power_dbm))
    }

    /// NLI tensors for the configured plan, built (or loaded from the
    /// cache) on first use. Tensors do not depend on power.
    pub fn tensors(&self) -> Result<&TensorSet> {
        if let Some(t) = self.tensors.get() {
            return Ok(t);
        }
        let plan = self.cfg.plan(1e-3)?;
        let with_spm = self.cfg.experiment.receiver == ReceiverMode::DispComp;
        let t = build_tensor_set(
            &self.cfg.link,
            &plan,
            &self.cfg.quadrature,
            with_spm,
            self.cfg.output.cache_dir.as_deref(),
        )
        .map_err(|e| e.at("tensor build"))?;
        Ok(self.tensors.get_or_init(|| t))
    }

    /// Transmitted blocks of every stream for one run.
    pub fn transmit(&self, plan: &WdmPlan, seed: u64) -> Vec<SymbolBlock> {
        plan.channels
            .iter()
            .enumerate()
            .map(|(i, c)| SymbolBlock::gaussian(self.cfg.experiment.symbols, c.energy, seed, i as u64))
            .collect()
    }

    /// One channel use: outputs of every COI stream for a run seed.
    pub fn channel(&self, plan: &WdmPlan, seed: u64) -> Result<Vec<(SymbolBlock, SymbolBlock)>> {
        let blocks = self.transmit(plan, seed);
        let cois = plan.coi_streams();
        let m = self.cfg.experiment.symbols;
        let ys: Vec<SymbolBlock> = match self.cfg.experiment.backend {
            Backend::RpSurrogate => {
                let t = self.tensors()?;
                cois.iter()
                    .map(|&c| {
                        let mut r = rng::stream(seed, rng::stream_id(&[0x7270, c as u64]));
                        rp_channel(&blocks, c, t, &self.cfg.link, self.cfg.experiment.receiver, &mut r).map(|(y, _)| y)
                    })
                    .collect::<Result<_>>()?
            }
            Backend::Ssfm => {
                let fs = self.cfg.sample_rate();
                let sig = synthesize_wdm(plan, &blocks, fs, Synthesis::Periodic)?;
                let sc = SsfmConfig {
                    step_km: self.cfg.ssfm.step_km,
                    noise_injection: self.cfg.ssfm.noise,
                    seed,
                    stream: 0,
                };
                let out = ssfm_propagate(&sig, &self.cfg.link, &sc)?;
                let coi = bandpass_channel(&out, plan, 0)?;
                let rx = match self.cfg.experiment.receiver {
                    ReceiverMode::Dbp => receiver_dbp(&coi, &self.cfg.link, &sc)?,
                    ReceiverMode::DispComp => dispersion_apply(&coi, -self.cfg.link.beta2, self.cfg.link.length_km)?,
                };
                cois.iter().map(|&c| bandpass_and_match(&rx, plan, c, m)).collect::<Result<_>>()?
            }
        };
        Ok(cois.iter().zip(ys).map(|(&c, y)| (blocks[c].clone(), y)).collect())
    }

    /// Channel outputs for `runs` runs of a role, indexed `[coi][run]`.
    pub fn simulate(&self, plan: &WdmPlan, role: Role, runs: usize) -> Result<RunPairs> {
        if self.cfg.experiment.backend == Backend::RpSurrogate {
            self.tensors()?;
        }
        let per_run: Vec<Vec<(SymbolBlock, SymbolBlock)>> = (0..runs)
            .into_par_iter()
            .map(|i| self.channel(plan, run_seed(self.cfg.experiment.seed, role, i)))
            .collect::<Result<_>>()
            .map_err(|e| e.at(format!("{role:?} channel simulation")))?;
        let n_coi = plan.coi_streams().len();
        let mut out: RunPairs = vec![Vec::with_capacity(runs); n_coi];
        for run in per_run {
            for (s, p) in run.into_iter().enumerate() {
                out[s].push(p);
            }
        }
        Ok(out)
    }

    /// Fits and evaluates `variants` on every COI stream of `plan`.
    pub fn rate_point(&self, plan: &WdmPlan, variants: &[ModelVariant]) -> Result<Vec<StreamResult>> {
        let e = &self.cfg.experiment;
        let train = self.simulate(plan, Role::Train, e.train_runs)?;
        let test = self.simulate(plan, Role::Test, e.test_runs)?;
        let cois = plan.coi_streams();
        let mut out = Vec::new();
        for (si, &c) in cois.iter().enumerate() {
            let ctx = format!("subcarrier {si}");
            let r = self.stream_rates(plan, c, &train[si], &test[si], variants).map_err(|e| e.at(ctx))?;
            out.push(r);
        }
        Ok(out)
    }

    fn stream_rates(
        &self,
        plan: &WdmPlan,
        coi: usize,
        train: &[(SymbolBlock, SymbolBlock)],
        test: &[(SymbolBlock, SymbolBlock)],
        variants: &[ModelVariant],
    ) -> Result<StreamResult> {
        let ch = &plan.channels[coi];
        let split = |v: &[(SymbolBlock, SymbolBlock)]| -> (Vec<SymbolBlock>, Vec<SymbolBlock>) { v.iter().cloned().unzip() };
        let (tx, ty) = split(train);
        let (vx, vy) = split(test);
        let phase = estimate_mean_phase(&tx, &ty).map_err(|e| e.at("mean phase"))?;
        let train = Dataset {
            x: tx,
            y: inference::derotate(&ty, phase),
            energy: ch.energy,
        };
        let test = Dataset {
            x: vx,
            y: inference::derotate(&vy, phase),
            energy: ch.energy,
        };
        let sigma = estimate_sigma_xi(&train.x, &train.y).map_err(|e| e.at("sigma_xi"))?;
        if !(sigma.sigma2 > 0.0) {
            return Err(Error::Numerical("estimated noise variance is zero; rates need additive noise".into()));
        }
        let fit_cfg = &self.cfg.inference;
        let lags = fit_cfg.mu.max(1);
        let (_, r_theta, _) = large_dispersion_moments(plan, &self.cfg.link, coi, lags)?;
        let seed = rng::stream_id(&[self.cfg.experiment.seed, 0x6669_74, coi as u64, ch.energy.to_bits()]);
        let mut mr_fit: Option<FittedModel> = None;
        let mut models = Vec::new();
        for &v in variants {
            let fit = match v {
                ModelVariant::Memoryless => {
                    let s2 = memoryless_variance(&train.x, &train.y)?;
                    FittedModel {
                        model: ModelParams::Memoryless,
                        filter: WhitenFilter::identity(),
                        sigma2: s2,
                        scalings: (0.0, 0.0),
                        h2: 0.0,
                        objective: f64::NAN,
                        flat: false,
                    }
                }
                ModelVariant::Mr | ModelVariant::TwoPCpan => {
                    if mr_fit.is_none() {
                        let mut c = fit_cfg.clone();
                        c.no_whitening = true;
                        mr_fit = Some(fit_model_scalings(&train, ModelKind::Mr, &r_theta, sigma.sigma2, &c, seed).map_err(|e| e.at("MR fit"))?);
                    }
                    let base = mr_fit.clone().expect("fitted above");
                    if v == ModelVariant::TwoPCpan {
                        fit_whitening(&train, &base, fit_cfg, seed)?
                    } else {
                        base
                    }
                }
                ModelVariant::Pd => {
                    let mut c = fit_cfg.clone();
                    c.no_whitening = true;
                    fit_model_scalings(&train, ModelKind::Pd, &r_theta, sigma.sigma2, &c, seed).map_err(|e| e.at("PD fit"))?
                }
            };
            let est = evaluate_rate(&test, &fit.model, &fit.filter, fit.sigma2, &fit_cfg.pf, seed ^ 0x5eed)
                .map_err(|e| e.at(format!("{} rate", v.name())))?;
            models.push(ModelResult {
                variant: v,
                estimate: est,
                fit,
            });
        }
        Ok(StreamResult {
            subcarrier: ch.sub,
            power_mw: ch.energy / plan.stream_period() * 1e3,
            phase,
            sigma,
            models,
        })
    }
}

/// Per-run spectral efficiency averaged over subcarriers, with a paired
/// standard error.
pub fn total_rate(streams: &[StreamResult], v: ModelVariant) -> Option<(f64, f64, Vec<f64>)> {
    let ests: Vec<&RateEstimate> = streams.iter().map(|s| s.model(v).map(|m| &m.estimate)).collect::<Option<_>>()?;
    let n = ests.first()?.per_run.len();
    let per: Vec<f64> = (0..n).map(|i| ests.iter().map(|e| e.per_run[i]).sum::<f64>() / ests.len() as f64).collect();
    let mean = per.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        (per.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
    } else {
        0.0
    };
    Some((mean, se, per))
}

/// Rate curves of one model from a uniform-allocation sweep: subcarrier
/// `s` gets the points (stream power, rate) of every sweep power.
pub fn build_rate_curves(sweep: &[(f64, Vec<StreamResult>)], v: ModelVariant) -> Result<Vec<RateCurve>> {
    let s = sweep.first().map(|p| p.1.len()).unwrap_or(0);
    (0..s)
        .map(|si| {
            let pts = sweep
                .iter()
                .map(|(_, streams)| {
                    let st = &streams[si];
                    let m = st.model(v).ok_or_else(|| Error::InvalidInput(format!("model {} missing from sweep", v.name())))?;
                    Ok((st.power_mw, m.estimate.rate))
                })
                .collect::<Result<Vec<_>>>()?;
            RateCurve::new(si, pts)
        })
        .collect()
}

/// Files written by [`run_experiment`].
#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    pub rates: PathBuf,
    pub fits: PathBuf,
    pub totals: PathBuf,
    pub curves: Vec<PathBuf>,
    pub allocations: Option<PathBuf>,
    /// (power dBm, allocation, model, total rate, SE)
    pub summary: Vec<(f64, String, ModelVariant, f64, f64)>,
}

struct Writers {
    hash: String,
    rates: BufWriter<File>,
    fits: BufWriter<File>,
    totals: BufWriter<File>,
}

impl Writers {
    fn create(dir: &Path, hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let mut rates = BufWriter::new(File::create(dir.join("rates.csv"))?);
        writeln!(
            rates,
            "config_hash,power_dbm,allocation,subcarrier,subcarrier_power_mw,model,rate,std_error,h_out,h_cond,runs,block_len"
        )?;
        let mut fits = BufWriter::new(File::create(dir.join("fits.csv"))?);
        writeln!(
            fits,
            "config_hash,power_dbm,allocation,subcarrier,model,sigma2,sigma2_at_boundary,mean_phase1,mean_phase2,scaling_1,scaling_2,h2,objective,flat"
        )?;
        let mut totals = BufWriter::new(File::create(dir.join("totals.csv"))?);
        writeln!(totals, "config_hash,power_dbm,allocation,model,rate,std_error")?;
        Ok(Writers {
            hash: hash.to_string(),
            rates,
            fits,
            totals,
        })
    }

    fn point(&mut self, dbm: f64, alloc: &str, streams: &[StreamResult], summary: &mut Vec<(f64, String, ModelVariant, f64, f64)>) -> Result<()> {
        let h = &self.hash;
        for s in streams {
            for m in &s.models {
                let e = &m.estimate;
                writeln!(
                    self.rates,
                    "{h},{dbm},{alloc},{},{:.9e},{},{:.9},{:.9},{:.6},{:.6},{},{}",
                    s.subcarrier,
                    s.power_mw,
                    m.variant.name(),
                    e.rate,
                    e.std_error,
                    e.h_out,
                    e.h_cond,
                    e.runs,
                    e.block_len
                )?;
                let f = &m.fit;
                writeln!(
                    self.fits,
                    "{h},{dbm},{alloc},{},{},{:.9e},{},{:.9},{:.9},{:.6},{:.6},{:.6},{:.9},{}",
                    s.subcarrier,
                    m.variant.name(),
                    f.sigma2,
                    s.sigma.at_boundary,
                    s.phase[0],
                    s.phase[1],
                    f.scalings.0,
                    f.scalings.1,
                    f.h2,
                    f.objective,
                    f.flat
                )?;
            }
        }
        if let Some(first) = streams.first() {
            for m in &first.models {
                if let Some((r, se, _)) = total_rate(streams, m.variant) {
                    writeln!(self.totals, "{h},{dbm},{alloc},{},{:.9},{:.9}", m.variant.name(), r, se)?;
                    summary.push((dbm, alloc.to_string(), m.variant, r, se));
                }
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.rates.flush()?;
        self.fits.flush()?;
        self.totals.flush()?;
        Ok(())
    }
}

/// Uniform-allocation sweep over the configured powers, then FDPA at
/// every power when enabled. Deterministic given the config.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let p = Pipeline::new(cfg.clone())?;
    let mut w = Writers::create(out_dir, &p.hash)?;
    let mut out = ExperimentOutput {
        rates: out_dir.join("rates.csv"),
        fits: out_dir.join("fits.csv"),
        totals: out_dir.join("totals.csv"),
        ..Default::default()
    };
    let models = &cfg.experiment.models;
    let mut sweep = Vec::new();
    for &dbm in &cfg.experiment.powers_dbm {
        let plan = p.plan_at(dbm)?;
        let r = p.rate_point(&plan, models).map_err(|e| e.at(format!("power {dbm} dBm")))?;
        w.point(dbm, "uniform", &r, &mut out.summary)?;
        sweep.push((dbm, r));
    }
    if cfg.fdpa.enabled && cfg.plan.subcarriers > 1 {
        let alloc_path = out_dir.join("allocations.csv");
        let mut aw = BufWriter::new(File::create(&alloc_path)?);
        writeln!(aw, "config_hash,power_dbm,model,subcarrier,power_mw,power_dbm_subcarrier,rate_interp")?;
        for &v in models {
            let curves = build_rate_curves(&sweep, v)?;
            let cpath = out_dir.join(format!("curves_{}.csv", v.name()));
            let mut cw = BufWriter::new(File::create(&cpath)?);
            fdpa::write_curves_csv(&curves, &mut cw)?;
            cw.flush()?;
            out.curves.push(cpath);
            for &dbm in &cfg.experiment.powers_dbm {
                let total_mw = fdpa::dbm_to_mw(dbm);
                let base = p.plan_at(dbm)?;
                let powers = fdpa::iterate_allocation(&curves, total_mw, cfg.fdpa.rounds, |pw| {
                    let plan = base.clone().with_subcarrier_powers(&pw.iter().map(|x| x * 1e-3).collect::<Vec<_>>())?;
                    let r = p.rate_point(&plan, &[v])?;
                    Ok(r.iter().map(|s| s.models[0].estimate.rate).collect())
                })?;
                for (c, &pw) in curves.iter().zip(&powers) {
                    writeln!(aw, "{},{dbm},{},{},{:.9e},{:.6},{:.9}", p.hash, v.name(), c.subcarrier, pw, fdpa::mw_to_dbm(pw), c.rate(pw))?;
                }
                let plan = base.with_subcarrier_powers(&powers.iter().map(|x| x * 1e-3).collect::<Vec<_>>())?;
                let r = p.rate_point(&plan, &[v]).map_err(|e| e.at(format!("fdpa {} at {dbm} dBm", v.name())))?;
                w.point(dbm, "fdpa", &r, &mut out.summary)?;
            }
        }
        aw.flush()?;
        out.allocations = Some(alloc_path);
    }
    w.finish()?;
    Ok(out)
}

/// One line per tensor of the set: `config_hash,pol,coi,kind,channel,sub,scale,n_max,sigma_max,a_lo,a_hi,peak,key`.
pub fn write_tensor_summary(hash: &str, t: &TensorSet, out: &mut dyn Write) -> Result<()> {
    writeln!(out, "config_hash,pol,coi,kind,channel,sub,scale,n_max,sigma_max,a_lo,a_hi,peak,key")?;
    let mut pols = vec![(0, &t.pol1)];
    if let Some(p2) = &t.pol2 {
        pols.push((1, p2));
    }
    for (pol, streams) in pols {
        for st in streams {
            let mut ts: Vec<&NliTensor> = Vec::new();
            if let Some((s, s2)) = &st.spm {
                ts.push(s);
                ts.push(s2);
            }
            for x in &st.xpm {
                ts.extend([&x.c, &x.c_tilde, &x.d]);
            }
            for x in ts {
                let g = &x.grid;
                writeln!(
                    out,
                    "{hash},{pol},{},{:?},{},{},{},{},{},{},{},{:.9e},{}",
                    st.coi,
                    x.kind,
                    x.channel.map(|c| c.to_string()).unwrap_or_default(),
                    x.sub,
                    x.scale,
                    g.n_max,
                    g.sigma_max,
                    g.a_lo,
                    g.a_hi,
                    x.peak(),
                    x.provenance_hex()
                )?;
            }
        }
    }
    Ok(())
}

/// Finds a tensor of the first receiving polarization for COI subcarrier
/// `coi_sub`. `channel` selects the interferer for XPM kinds.
pub fn find_tensor<'a>(t: &'a TensorSet, plan: &WdmPlan, kind: TensorKind, channel: i32, sub: usize, coi_sub: usize) -> Result<&'a NliTensor> {
    let coi = *plan
        .coi_streams()
        .get(coi_sub)
        .ok_or_else(|| Error::Config(format!("no COI subcarrier {coi_sub}")))?;
    let st = t.stream(0, coi).ok_or_else(|| Error::InvalidInput("COI stream has no tensors".into()))?;
    let missing = || Error::Config(format!("no {kind:?} tensor for channel {channel} subcarrier {sub}; SPM kinds need receiver = \"disp-comp\""));
    match kind {
        TensorKind::S | TensorKind::STilde => {
            let (s, s2) = st.spm.as_ref().ok_or_else(missing)?;
            Ok(if kind == TensorKind::S { s } else { s2 })
        }
        TensorKind::C | TensorKind::CTilde | TensorKind::D => {
            let x = st
                .xpm
                .iter()
                .find(|x| plan.channels[x.stream].index == channel && plan.channels[x.stream].sub == sub)
                .ok_or_else(missing)?;
            Ok(match kind {
                TensorKind::C => &x.c,
                TensorKind::CTilde => &x.c_tilde,
                _ => &x.d,
            })
        }
        TensorKind::A => Err(Error::Config("bare A tensors are not part of a tensor set".into())),
    }
}

/// Analytic and large-dispersion moments of COI subcarrier 0 at a power,
/// plus empirical moments from `blocks` surrogate runs when nonzero.
pub fn write_stats(p: &Pipeline, power_dbm: f64, max_lag: usize, blocks: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let plan = p.plan_at(power_dbm)?;
    let coi = plan.coi_streams()[0];
    let t = p.tensors()?;
    let m = analytic_moments(t, &plan, coi, max_lag)?;
    let mut files = Vec::new();
    let path = dir.join("moments.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    m.write_csv(&mut f)?;
    f.flush()?;
    files.push(path);
    let (mean, r, valid) = large_dispersion_moments(&plan, &p.cfg.link, coi, max_lag)?;
    let path = dir.join("large_dispersion.csv");
    let mut f = BufWriter::new(File::create(&path)?);
    writeln!(f, "config_hash,lag,theta_mean,r_theta,valid")?;
    for (l, v) in r.iter().enumerate() {
        writeln!(f, "{},{l},{mean:.9e},{v:.9e},{valid}", p.hash)?;
    }
    f.flush()?;
    files.push(path);
    if blocks > 0 {
        let decs: Vec<NliDecomposition> = (0..blocks)
            .into_par_iter()
            .map(|i| rp_decompose(&p.transmit(&plan, run_seed(p.cfg.experiment.seed, Role::Train, i)), coi, t, ReceiverMode::Dbp))
            .collect::<Result<_>>()?;
        let inputs: Vec<SymbolBlock> = (0..blocks)
            .map(|i| p.transmit(&plan, run_seed(p.cfg.experiment.seed, Role::Train, i))[coi].clone())
            .collect();
        let e = empirical_moments(&decs, Some(&inputs), max_lag)?;
        let path = dir.join("empirical.csv");
        let mut f = BufWriter::new(File::create(&path)?);
        writeln!(f, "config_hash,lag,r_theta,se_r_theta,re_r_psi,se_re_r_psi,re_r_v,se_re_r_v,theta_mean,se_theta_mean,blocks")?;
        for l in 0..=max_lag {
            writeln!(
                f,
                "{},{l},{:.9e},{:.3e},{:.9e},{:.3e},{:.9e},{:.3e},{:.9e},{:.3e},{}",
                p.hash,
                e.estimate.r_theta[l],
                e.se.r_theta[l],
                e.estimate.r_psi[l].re,
                e.se.r_psi[l].re,
                e.estimate.r_v[l].re,
                e.se.r_v[l].re,
                e.estimate.theta_mean,
                e.se.theta_mean,
                e.blocks
            )?;
        }
        f.flush()?;
        files.push(path);
    }
    Ok(files)
}

/// Input and output blocks of COI subcarrier 0 for `runs` test runs.
pub fn write_simulation(p: &Pipeline, power_dbm: f64, runs: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let plan = p.plan_at(power_dbm)?;
    let pairs = p.simulate(&plan, Role::Test, runs)?;
    let mut files = Vec::new();
    for (i, (x, y)) in pairs[0].iter().enumerate() {
        for (name, b) in [("x", x), ("y", y)] {
            let path = dir.join(format!("{name}_run{i}.csv"));
            let mut f = BufWriter::new(File::create(&path)?);
            write_block_csv(b, &mut f)?;
            f.flush()?;
            files.push(path);
        }
    }
    Ok(files)
}

/// log₂(1 + SNR) of the COI with SNR = E / N_ASE.
pub fn awgn_bound(cfg: &ExperimentConfig, power_dbm: f64) -> f64 {
    let e = dbm_to_watt(power_dbm) * cfg.plan.bandwidth_hz.recip();
    (1.0 + e / cfg.link.n_ase_psd).log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::LinkConfig;

    fn tiny(backend: Backend) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("desk").unwrap();
        c.link = LinkConfig::table1(40.0);
        c.link.gamma_nl = 0.0;
        c.plan.side = 0;
        c.experiment.backend = backend;
        c.experiment.symbols = 256;
        c.experiment.train_runs = 4;
        c.experiment.test_runs = 4;
        c.experiment.powers_dbm = vec![-10.0];
        c.experiment.models = vec![ModelVariant::Memoryless];
        c.ssfm.step_km = 10.0;
        c.output.cache_dir = None;
        c
    }

    #[test]
    fn seeds_disjoint() {
        let a: Vec<u64> = (0..500).map(|i| run_seed(1, Role::Train, i)).collect();
        let b: Vec<u64> = (0..500).map(|i| run_seed(1, Role::Test, i)).collect();
        assert!(a.iter().all(|s| !b.contains(s)));
    }

    #[test]
    fn backends_agree_on_linear_channel() {
        // with γ = 0 both backends give x plus AWGN of the same variance
        for b in [Backend::RpSurrogate, Backend::Ssfm] {
            let p = Pipeline::new(tiny(b)).unwrap();
            let plan = p.plan_at(-10.0).unwrap();
            let runs = p.simulate(&plan, Role::Train, 4).unwrap();
            let (x, y): (Vec<_>, Vec<_>) = runs[0].iter().cloned().unzip();
            let s2 = memoryless_variance(&x, &y).unwrap();
            let n = p.cfg.link.n_ase_psd;
            assert!((s2 / n - 1.0).abs() < 0.1, "{b:?} {s2} {n}");
        }
    }

    #[test]
    fn linear_rate_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(Backend::RpSurrogate);
        let o1 = run_experiment(&c, &dir.path().join("a")).unwrap();
        let o2 = run_experiment(&c, &dir.path().join("b")).unwrap();
        let r = o1.summary[0].3;
        assert!((r - awgn_bound(&c, -10.0)).abs() < 0.05, "{r}");
        assert_eq!(std::fs::read(&o1.rates).unwrap(), std::fs::read(&o2.rates).unwrap());
        let text = std::fs::read_to_string(&o1.rates).unwrap();
        assert!(text.lines().skip(1).all(|l| l.starts_with(&c.hash())));
    }
}
