//! Sampled two-polarization signals, link and channel-grid descriptions,
//! sinc pulse synthesis, the dispersion operator and the receiver front end.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{fft, Error, Result, C64, LIGHT_SPEED, PLANCK};

/// Two polarizations sampled on a common uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    pub pol1: Vec<C64>,
    pub pol2: Vec<C64>,
    /// Hz
    pub sample_rate: f64,
    /// Time of the first sample, s.
    pub t0: f64,
}

impl SampledSignal {
    pub fn new(pol1: Vec<C64>, pol2: Vec<C64>, sample_rate: f64, t0: f64) -> Result<Self> {
        if pol1.len() != pol2.len() {
            return Err(Error::LengthMismatch {
                expected: pol1.len(),
                got: pol2.len(),
            });
        }
        if sample_rate.is_nan() || sample_rate <= 0.0 {
            return Err(Error::InvalidInput(format!("sample rate {sample_rate}")));
        }
        Ok(SampledSignal {
            pol1,
            pol2,
            sample_rate,
            t0,
        })
    }

    pub fn zeros(n: usize, sample_rate: f64, t0: f64) -> Self {
        SampledSignal {
            pol1: vec![C64::new(0.0, 0.0); n],
            pol2: vec![C64::new(0.0, 0.0); n],
            sample_rate,
            t0,
        }
    }

    pub fn len(&self) -> usize {
        self.pol1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pol1.is_empty()
    }

    /// Energy of each polarization, J (samples in √W).
    pub fn energy(&self) -> (f64, f64) {
        let dt = 1.0 / self.sample_rate;
        let e = |v: &[C64]| v.iter().map(|z| z.norm_sqr()).sum::<f64>() * dt;
        (e(&self.pol1), e(&self.pol2))
    }

    pub fn pols_mut(&mut self) -> [&mut Vec<C64>; 2] {
        [&mut self.pol1, &mut self.pol2]
    }

    /// Angular frequency of DFT bin `k`, rad/s.
    pub fn omega(&self, k: usize) -> f64 {
        2.0 * PI * fft::signed_bin(k, self.len()) as f64 * self.sample_rate / self.len() as f64
    }
}

/// Fiber and amplification parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub alpha_db_per_km: f64,
    /// ps²/km
    pub beta2: f64,
    /// 1/(W·km)
    pub gamma_nl: f64,
    pub length_km: f64,
    pub eta_phonon: f64,
    /// Carrier wavelength, only used for the ASE level.
    #[serde(default = "default_wavelength")]
    pub wavelength_nm: f64,
    /// ASE power spectral density per polarization accumulated over the
    /// link, W/Hz. Negative means "derive from α, L, hν, η".
    #[serde(default = "derived_marker")]
    pub n_ase_psd: f64,
    /// Receiver noise bandwidth, Hz. Zero means the simulation bandwidth.
    #[serde(default)]
    pub b_ase: f64,
}

fn default_wavelength() -> f64 {
    1550.0
}

fn derived_marker() -> f64 {
    -1.0
}

impl LinkConfig {
    /// Standard single-mode fiber with ideal distributed amplification.
    pub fn table1(length_km: f64) -> Self {
        let mut l = LinkConfig {
            alpha_db_per_km: 0.2,
            beta2: -21.7,
            gamma_nl: 1.27,
            length_km,
            eta_phonon: 1.0,
            wavelength_nm: 1550.0,
            n_ase_psd: -1.0,
            b_ase: 0.0,
        };
        l.n_ase_psd = l.physical_ase_psd();
        l
    }

    /// α_lin·L·h·ν·η, W/Hz.
    pub fn physical_ase_psd(&self) -> f64 {
        let alpha = self.alpha_db_per_km * std::f64::consts::LN_10 / 10.0;
        let nu = LIGHT_SPEED / (self.wavelength_nm * 1e-9);
        alpha * self.length_km * PLANCK * nu * self.eta_phonon
    }

    /// Fills in a derived ASE level and checks invariants.
    pub fn resolved(mut self) -> Result<Self> {
        if self.n_ase_psd < 0.0 {
            self.n_ase_psd = self.physical_ase_psd();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.length_km > 0.0) {
            return Err(Error::Config(format!("length_km must be > 0, got {}", self.length_km)));
        }
        if !(self.n_ase_psd >= 0.0) {
            return Err(Error::Config(format!("n_ase_psd must be >= 0, got {}", self.n_ase_psd)));
        }
        if !(self.gamma_nl >= 0.0) {
            return Err(Error::Config(format!("gamma_nl must be >= 0, got {}", self.gamma_nl)));
        }
        if !self.beta2.is_finite() {
            return Err(Error::Config("beta2 must be finite".into()));
        }
        Ok(())
    }

    /// β2 in s²/km.
    pub fn beta2_si(&self) -> f64 {
        self.beta2 * 1e-24
    }
}

/// One transmitted stream: a WDM channel, or one subcarrier of it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    /// WDM channel index c; 0 is the channel of interest.
    pub index: i32,
    /// Subcarrier index within the channel, 0-based.
    pub sub: usize,
    /// Center angular frequency relative to the COI carrier, rad/s.
    pub omega: f64,
    /// Symbol energy of the first polarization, J.
    pub energy: f64,
    pub energy_bar: f64,
    /// Fourth moment ⟨|b|⁴⟩, J².
    pub fourth: f64,
    pub fourth_bar: f64,
    /// Launch delay of each polarization, s.
    pub delay: f64,
    pub delay_bar: f64,
}

/// Channel grid. With `subcarriers > 1` every WDM channel is split into
/// that many streams of bandwidth `bandwidth / subcarriers`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WdmPlan {
    pub channels: Vec<Channel>,
    /// Symbol period of a full-band channel, s.
    pub symbol_period: f64,
    /// Channel bandwidth B, Hz.
    pub bandwidth: f64,
    /// Channel spacing, Hz.
    pub spacing: f64,
    pub subcarriers: usize,
}

/// Named launch-delay sets, in units of the stream symbol period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayPreset {
    Synchronized,
    SingleCarrier,
    FourSubcarrier,
    SixSubcarrier,
}

impl DelayPreset {
    /// Delays (in stream symbol periods) for channel `c` and subcarrier `s`.
    pub fn delay(self, c: i32, s: usize, subcarriers: usize) -> Result<f64> {
        match self {
            DelayPreset::Synchronized => Ok(0.0),
            DelayPreset::SingleCarrier => {
                const D: [f64; 5] = [5.0, 6.0, -6.0, 6.0, 2.0];
                if subcarriers != 1 {
                    return Err(Error::Config("single-carrier delays need subcarriers = 1".into()));
                }
                preset_row(&D, c).map(|d| d / 15.0)
            }
            DelayPreset::FourSubcarrier => {
                const D: [[f64; 4]; 5] = [
                    [-25.0, -14.0, 2.0, 27.0],
                    [27.0, -21.0, 28.0, 27.0],
                    [-1.0, 18.0, -22.0, -5.0],
                    [24.0, 17.0, 27.0, 9.0],
                    [-28.0, 20.0, 26.0, 10.0],
                ];
                if subcarriers != 4 {
                    return Err(Error::Config("4SC delays need subcarriers = 4".into()));
                }
                let row = usize::try_from(c + 2)
                    .ok()
                    .and_then(|i| D.get(i))
                    .ok_or_else(|| Error::Config(format!("no preset delay for channel {c}")))?;
                Ok(row[s] / 60.0)
            }
            DelayPreset::SixSubcarrier => {
                const D: [[f64; 6]; 5] = [
                    [-37.0, -20.0, 4.0, 41.0, 41.0, -31.0],
                    [42.0, 41.0, -2.0, 27.0, -33.0, -8.0],
                    [37.0, 26.0, 41.0, 14.0, -42.0, 31.0],
                    [39.0, 16.0, 23.0, 21.0, -10.0, 13.0],
                    [-30.0, 18.0, -43.0, -21.0, -41.0, -37.0],
                ];
                if subcarriers != 6 {
                    return Err(Error::Config("6SC delays need subcarriers = 6".into()));
                }
                let row = usize::try_from(c + 2)
                    .ok()
                    .and_then(|i| D.get(i))
                    .ok_or_else(|| Error::Config(format!("no preset delay for channel {c}")))?;
                Ok(row[s] / 90.0)
            }
        }
    }
}

fn preset_row(d: &[f64; 5], c: i32) -> Result<f64> {
    usize::try_from(c + 2)
        .ok()
        .and_then(|i| d.get(i).copied())
        .ok_or_else(|| Error::Config(format!("no preset delay for channel {c}")))
}

impl WdmPlan {
    /// Channels `-side..=side` at `spacing`, each split into `subcarriers`
    /// streams, Gaussian symbols at `power_w` per polarization per channel.
    pub fn grid(
        side: i32,
        spacing: f64,
        bandwidth: f64,
        subcarriers: usize,
        power_w: f64,
        delays: DelayPreset,
    ) -> Result<Self> {
        let t = 1.0 / bandwidth;
        let ts = t * subcarriers as f64;
        let mut channels = Vec::new();
        for c in -side..=side {
            for s in 0..subcarriers {
                let e = power_w / subcarriers as f64 * ts;
                let d = delays.delay(c, s, subcarriers)? * ts;
                let f = c as f64 * spacing + (s as f64 - (subcarriers as f64 - 1.0) / 2.0) * bandwidth / subcarriers as f64;
                channels.push(Channel {
                    index: c,
                    sub: s,
                    omega: 2.0 * PI * f,
                    energy: e,
                    energy_bar: e,
                    fourth: 2.0 * e * e,
                    fourth_bar: 2.0 * e * e,
                    delay: d,
                    delay_bar: d,
                });
            }
        }
        let plan = WdmPlan {
            channels,
            symbol_period: t,
            bandwidth,
            spacing,
            subcarriers,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// 50 GHz channels at 50 GHz spacing.
    pub fn table1(side: i32, subcarriers: usize, power_w: f64, delays: DelayPreset) -> Result<Self> {
        Self::grid(side, 50e9, 50e9, subcarriers, power_w, delays)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subcarriers == 0 {
            return Err(Error::Config("subcarriers must be >= 1".into()));
        }
        if !self.channels.iter().any(|c| c.index == 0) {
            return Err(Error::Config("channel 0 (the channel of interest) is missing".into()));
        }
        if !(self.symbol_period > 0.0) || !(self.bandwidth > 0.0) {
            return Err(Error::Config("symbol period and bandwidth must be > 0".into()));
        }
        let mut idx: Vec<i32> = self.channels.iter().map(|c| c.index).collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() > 1 && self.spacing < self.bandwidth * (1.0 - 1e-12) {
            return Err(Error::Config(format!(
                "bandwidth {} Hz exceeds channel spacing {} Hz",
                self.bandwidth, self.spacing
            )));
        }
        for c in &self.channels {
            if c.energy < 0.0 || c.energy_bar < 0.0 || c.fourth < 0.0 || c.fourth_bar < 0.0 {
                return Err(Error::Config(format!("negative energy on channel {}", c.index)));
            }
            if c.sub >= self.subcarriers {
                return Err(Error::Config(format!("subcarrier {} out of range", c.sub)));
            }
        }
        Ok(())
    }

    /// Symbol period of one stream, s.
    pub fn stream_period(&self) -> f64 {
        self.symbol_period * self.subcarriers as f64
    }

    /// Bandwidth of one stream, Hz.
    pub fn stream_bandwidth(&self) -> f64 {
        self.bandwidth / self.subcarriers as f64
    }

    /// Positions in `channels` of the channel-of-interest streams, by subcarrier.
    pub fn coi_streams(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.channels.len()).filter(|&i| self.channels[i].index == 0).collect();
        v.sort_by_key(|&i| self.channels[i].sub);
        v
    }

    /// Streams of other WDM channels, i.e. the interferers seen by any COI stream.
    pub fn interferers(&self) -> Vec<usize> {
        (0..self.channels.len()).filter(|&i| self.channels[i].index != 0).collect()
    }

    /// Highest occupied frequency offset from the COI carrier, Hz.
    pub fn occupied_half_width(&self) -> f64 {
        let half = self.stream_bandwidth() / 2.0;
        self.channels
            .iter()
            .map(|c| c.omega.abs() / (2.0 * PI) + half)
            .fold(0.0, f64::max)
    }

    /// Launch delay of the first COI stream, first polarization. The time
    /// grid is anchored so that its symbol 0 sits at t = 0.
    pub fn reference_delay(&self) -> f64 {
        self.coi_streams().first().map(|&i| self.channels[i].delay).unwrap_or(0.0)
    }

    /// Sets every stream to Gaussian symbols at `power_w` per polarization per channel.
    pub fn with_power(mut self, power_w: f64) -> Self {
        let ts = self.stream_period();
        let s = self.subcarriers as f64;
        for c in &mut self.channels {
            let e = power_w / s * ts;
            c.energy = e;
            c.energy_bar = e;
            c.fourth = 2.0 * e * e;
            c.fourth_bar = 2.0 * e * e;
        }
        self
    }

    /// Per-subcarrier power allocation (W per polarization), applied to every channel.
    pub fn with_subcarrier_powers(mut self, powers_w: &[f64]) -> Result<Self> {
        if powers_w.len() != self.subcarriers {
            return Err(Error::LengthMismatch {
                expected: self.subcarriers,
                got: powers_w.len(),
            });
        }
        let ts = self.stream_period();
        for c in &mut self.channels {
            let e = powers_w[c.sub] * ts;
            c.energy = e;
            c.energy_bar = e;
            c.fourth = 2.0 * e * e;
            c.fourth_bar = 2.0 * e * e;
        }
        Ok(self)
    }
}

/// Two aligned symbol sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolBlock {
    pub pol1: Vec<C64>,
    pub pol2: Vec<C64>,
    /// Nominal symbol energy, J.
    pub energy: f64,
    pub seed: u64,
}

impl SymbolBlock {
    pub fn new(pol1: Vec<C64>, pol2: Vec<C64>, energy: f64, seed: u64) -> Result<Self> {
        if pol1.len() != pol2.len() {
            return Err(Error::LengthMismatch {
                expected: pol1.len(),
                got: pol2.len(),
            });
        }
        if pol1.iter().chain(&pol2).any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("non-finite symbol".into()));
        }
        Ok(SymbolBlock {
            pol1,
            pol2,
            energy,
            seed,
        })
    }

    pub fn zeros(m: usize) -> Self {
        SymbolBlock {
            pol1: vec![C64::new(0.0, 0.0); m],
            pol2: vec![C64::new(0.0, 0.0); m],
            energy: 0.0,
            seed: 0,
        }
    }

    /// I.i.d. circular Gaussian symbols of energy `energy`.
    pub fn gaussian(m: usize, energy: f64, seed: u64, stream: u64) -> Self {
        let mut rng = crate::rng::stream(seed, stream);
        let pol1 = crate::rng::cgauss_vec(&mut rng, m, energy);
        let pol2 = crate::rng::cgauss_vec(&mut rng, m, energy);
        SymbolBlock {
            pol1,
            pol2,
            energy,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.pol1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pol1.is_empty()
    }

    pub fn pol(&self, p: usize) -> &[C64] {
        if p == 0 {
            &self.pol1
        } else {
            &self.pol2
        }
    }

    /// Symbols with the polarizations swapped.
    pub fn swapped(&self) -> SymbolBlock {
        SymbolBlock {
            pol1: self.pol2.clone(),
            pol2: self.pol1.clone(),
            energy: self.energy,
            seed: self.seed,
        }
    }
}

/// `(1/√T)·sinc(t/T)`.
pub fn sinc_pulse(t_sym: f64, t: f64) -> f64 {
    sinc(t / t_sym) / t_sym.sqrt()
}

/// `sin(πx)/(πx)`.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - (PI * x).powi(2) / 6.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Multiplies each polarization by `exp(j·(β2/2)·Ω²·z)` in frequency.
pub fn dispersion_apply(sig: &SampledSignal, beta2_ps2_per_km: f64, z_km: f64) -> Result<SampledSignal> {
    if sig.is_empty() {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    let mut out = sig.clone();
    let h = dispersion_response(sig.len(), sig.sample_rate, beta2_ps2_per_km * 1e-24, z_km);
    for pol in out.pols_mut() {
        fft::forward(pol);
        for (v, hk) in pol.iter_mut().zip(&h) {
            *v *= hk;
        }
        fft::inverse_normalized(pol);
    }
    Ok(out)
}

/// All-pass response `exp(j·(β2/2)·Ω²·z)` on an `n`-point grid; β2 in s²/km.
pub fn dispersion_response(n: usize, sample_rate: f64, beta2: f64, z_km: f64) -> Vec<C64> {
    (0..n)
        .map(|k| {
            let w = 2.0 * PI * fft::signed_bin(k, n) as f64 * sample_rate / n as f64;
            C64::from_polar(1.0, 0.5 * beta2 * w * w * z_km)
        })
        .collect()
}

/// How pulse trains are laid onto the sample grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Synthesis {
    /// Each block is one period of a cyclic symbol sequence; pulses are
    /// periodized sincs built in the frequency domain, exactly band-limited.
    Periodic,
    /// Direct time-domain sum with sinc tails cut at ±`half_width` symbols
    /// (symbol indices wrap around the block).
    Truncated { half_width: usize },
}

impl Default for Synthesis {
    fn default() -> Self {
        Synthesis::Periodic
    }
}

/// Number of samples in one block period, checked to be an integer.
pub fn block_samples(plan: &WdmPlan, symbols_per_stream: usize, sample_rate: f64) -> Result<usize> {
    let period = symbols_per_stream as f64 * plan.stream_period();
    let n = period * sample_rate;
    let nr = n.round();
    if (n - nr).abs() > 1e-6 * n.max(1.0) || nr < 1.0 {
        return Err(Error::InvalidInput(format!(
            "block period {period:.4e} s is not an integer number of samples at {sample_rate:.4e} Hz"
        )));
    }
    Ok(nr as usize)
}

/// Sum of delayed, frequency-shifted sinc trains of every stream in `plan`.
/// `blocks[i]` carries the symbols of `plan.channels[i]`.
pub fn synthesize_wdm(
    plan: &WdmPlan,
    blocks: &[SymbolBlock],
    sample_rate: f64,
    mode: Synthesis,
) -> Result<SampledSignal> {
    if blocks.len() != plan.channels.len() {
        return Err(Error::LengthMismatch {
            expected: plan.channels.len(),
            got: blocks.len(),
        });
    }
    let m = blocks.first().map(|b| b.len()).unwrap_or(0);
    if m == 0 {
        return Err(Error::InvalidInput("empty symbol blocks".into()));
    }
    for b in blocks {
        if b.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: b.len(),
            });
        }
    }
    let needed = 2.0 * plan.occupied_half_width();
    if sample_rate < needed * (1.0 + 1e-9) {
        return Err(Error::Aliasing {
            rate: sample_rate,
            needed,
        });
    }
    let n = block_samples(plan, m, sample_rate)?;
    let mut sig = SampledSignal::zeros(n, sample_rate, 0.0);
    let r = plan.reference_delay();
    match mode {
        Synthesis::Periodic => {
            let mut spec1 = vec![C64::new(0.0, 0.0); n];
            let mut spec2 = vec![C64::new(0.0, 0.0); n];
            for (ch, b) in plan.channels.iter().zip(blocks) {
                add_periodic(&mut spec1, plan, ch, &b.pol1, ch.delay - r, sample_rate)?;
                add_periodic(&mut spec2, plan, ch, &b.pol2, ch.delay_bar - r, sample_rate)?;
            }
            fft::inverse(&mut spec1);
            fft::inverse(&mut spec2);
            sig.pol1 = spec1;
            sig.pol2 = spec2;
        }
        Synthesis::Truncated { half_width } => {
            for (ch, b) in plan.channels.iter().zip(blocks) {
                add_truncated(&mut sig.pol1, plan, ch, &b.pol1, ch.delay - r, sample_rate, half_width);
                add_truncated(&mut sig.pol2, plan, ch, &b.pol2, ch.delay_bar - r, sample_rate, half_width);
            }
        }
    }
    Ok(sig)
}

/// Signed DFT indices of the stream band, `[-⌊M/2⌋, ⌈M/2⌉)`.
fn band_indices(m: usize) -> std::ops::Range<i64> {
    let lo = -((m / 2) as i64);
    lo..lo + m as i64
}

/// Integer number of block-frequency bins between the COI carrier and the stream center.
fn center_bin(ch: &Channel, period: f64) -> Result<i64> {
    let f = ch.omega / (2.0 * PI) * period;
    let r = f.round();
    if (f - r).abs() > 1e-6 {
        return Err(Error::InvalidInput(format!(
            "stream (c={}, s={}) center is not on the block frequency grid; use an even number of symbols per subcarrier",
            ch.index, ch.sub
        )));
    }
    Ok(r as i64)
}

fn add_periodic(spec: &mut [C64], plan: &WdmPlan, ch: &Channel, x: &[C64], delay: f64, fs: f64) -> Result<()> {
    let n = spec.len();
    let m = x.len();
    let ts = plan.stream_period();
    let period = m as f64 * ts;
    let mut xk = x.to_vec();
    fft::forward(&mut xk);
    let c0 = center_bin(ch, period)?;
    let scale = 1.0 / (ts.sqrt() * m as f64);
    for k in band_indices(m) {
        let bin = c0 + k;
        if 2 * bin.abs() >= n as i64 {
            return Err(Error::Aliasing {
                rate: fs,
                needed: 2.0 * plan.occupied_half_width(),
            });
        }
        let f = k as f64 / period;
        let ph = C64::from_polar(scale, -2.0 * PI * f * delay);
        spec[fft::bin_of(bin, n)] += xk[fft::bin_of(k, m)] * ph;
    }
    Ok(())
}

fn add_truncated(out: &mut [C64], plan: &WdmPlan, ch: &Channel, x: &[C64], delay: f64, fs: f64, w: usize) {
    let ts = plan.stream_period();
    let m = x.len() as i64;
    let period = m as f64 * ts;
    let amp = 1.0 / ts.sqrt();
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        let centre = ((t - delay) / ts).round() as i64;
        let mut acc = C64::new(0.0, 0.0);
        for q in centre - w as i64..=centre + w as i64 {
            let u = (t - delay) / ts - q as f64;
            acc += x[q.rem_euclid(m) as usize] * (amp * sinc(u));
        }
        // carrier phase kept periodic over the block
        let wrapped = t - period * (t / period).floor();
        *v += acc * C64::from_polar(1.0, ch.omega * wrapped);
    }
}

/// Ideal rectangular band-pass keeping WDM channel `c` (all its subcarriers).
pub fn bandpass_channel(sig: &SampledSignal, plan: &WdmPlan, c: i32) -> Result<SampledSignal> {
    let streams: Vec<&Channel> = plan.channels.iter().filter(|ch| ch.index == c).collect();
    if streams.is_empty() {
        return Err(Error::InvalidInput(format!("channel {c} not in plan")));
    }
    let centre = streams.iter().map(|ch| ch.omega).sum::<f64>() / streams.len() as f64 / (2.0 * PI);
    let half = plan.bandwidth / 2.0;
    let n = sig.len();
    let df = sig.sample_rate / n as f64;
    let mut out = sig.clone();
    for pol in out.pols_mut() {
        fft::forward(pol);
        for (k, v) in pol.iter_mut().enumerate() {
            let f = fft::signed_bin(k, n) as f64 * df - centre;
            // half-open band [-B/2, B/2) with a small guard for rounding
            let keep = f >= -half - 1e-6 * df && f < half - 1e-6 * df;
            if !keep {
                *v = C64::new(0.0, 0.0);
            }
        }
        fft::inverse_normalized(pol);
    }
    Ok(out)
}

/// Band-pass on stream `stream`, matched filter and sampling at
/// `t = mT + delay` of polarization `pol`. Returns `m_symbols` samples.
pub fn match_stream(
    sig: &SampledSignal,
    plan: &WdmPlan,
    stream: usize,
    pol: usize,
    m_symbols: usize,
) -> Result<Vec<C64>> {
    let ch = plan
        .channels
        .get(stream)
        .ok_or_else(|| Error::InvalidInput(format!("stream {stream} not in plan")))?;
    let n = sig.len();
    let ts = plan.stream_period();
    let period = n as f64 / sig.sample_rate;
    if ((m_symbols as f64 * ts - period) / period).abs() > 1e-9 {
        return Err(Error::InvalidInput("block length does not match the signal period".into()));
    }
    let mut spec = if pol == 0 { sig.pol1.clone() } else { sig.pol2.clone() };
    fft::forward(&mut spec);
    let delay = if pol == 0 { ch.delay } else { ch.delay_bar } - plan.reference_delay();
    let c0 = center_bin(ch, period)?;
    let mut yk = vec![C64::new(0.0, 0.0); m_symbols];
    let norm = ts.sqrt() / n as f64;
    for k in band_indices(m_symbols) {
        let bin = c0 + k;
        if 2 * bin.abs() >= n as i64 {
            continue;
        }
        let f = k as f64 / period;
        // undo the grid origin t0 and apply the sampling delay
        let fabs = (c0 + k) as f64 / period;
        let ph = C64::from_polar(norm, 2.0 * PI * (f * delay - fabs * sig.t0));
        yk[fft::bin_of(k, m_symbols)] = spec[fft::bin_of(bin, n)] * ph;
    }
    fft::inverse(&mut yk);
    Ok(yk)
}

/// [`match_stream`] for both polarizations, as a symbol block.
pub fn bandpass_and_match(sig: &SampledSignal, plan: &WdmPlan, stream: usize, m_symbols: usize) -> Result<SymbolBlock> {
    let pol1 = match_stream(sig, plan, stream, 0, m_symbols)?;
    let pol2 = match_stream(sig, plan, stream, 1, m_symbols)?;
    let e = plan.channels[stream].energy;
    SymbolBlock::new(pol1, pol2, e, 0)
}
