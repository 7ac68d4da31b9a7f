//! Split-step solution of the Manakov equation with ideal distributed
//! amplification, and digital back-propagation at the receiver.

use serde::{Deserialize, Serialize};

use crate::signal::{dispersion_response, LinkConfig, SampledSignal};
use crate::{fft, rng, Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseInjection {
    #[default]
    PerStep,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsfmConfig {
    pub step_km: f64,
    #[serde(default)]
    pub noise_injection: NoiseInjection,
    #[serde(default)]
    pub seed: u64,
    /// Extra RNG stream selector, e.g. the run index.
    #[serde(default)]
    pub stream: u64,
}

impl Default for SsfmConfig {
    fn default() -> Self {
        SsfmConfig {
            step_km: 0.1,
            noise_injection: NoiseInjection::PerStep,
            seed: 0,
            stream: 0,
        }
    }
}

impl SsfmConfig {
    pub fn noiseless(step_km: f64) -> Self {
        SsfmConfig {
            step_km,
            noise_injection: NoiseInjection::Off,
            ..Default::default()
        }
    }

    /// Number of steps covering `length_km`.
    pub fn steps(&self, length_km: f64) -> Result<usize> {
        if !(self.step_km > 0.0) {
            return Err(Error::Config(format!("step_km must be > 0, got {}", self.step_km)));
        }
        let n = length_km / self.step_km;
        let r = n.round();
        if r < 1.0 || (n - r).abs() > 1e-6 * n.max(1.0) {
            return Err(Error::Config(format!(
                "step_km {} does not divide length {} km",
                self.step_km, length_km
            )));
        }
        Ok(r as usize)
    }
}

/// Symmetric split-step propagation over the whole link.
pub fn ssfm_propagate(sig: &SampledSignal, link: &LinkConfig, cfg: &SsfmConfig) -> Result<SampledSignal> {
    link.validate()?;
    let steps = cfg.steps(link.length_km)?;
    let h = link.length_km / steps as f64;
    let noise = match cfg.noise_injection {
        NoiseInjection::Off => None,
        NoiseInjection::PerStep => Some(NoiseSource {
            var: link.n_ase_psd * (h / link.length_km) * sig.sample_rate,
            band: if link.b_ase > 0.0 && link.b_ase < sig.sample_rate {
                Some(link.b_ase)
            } else {
                None
            },
            rng: rng::stream(cfg.seed, rng::stream_id(&[0x55f3, cfg.stream])),
        }),
    };
    run(sig, link.beta2_si(), link.gamma_nl, h, steps, noise)
}

/// Back-propagation through the link: −β2, −γ, no noise.
pub fn receiver_dbp(sig: &SampledSignal, link: &LinkConfig, cfg: &SsfmConfig) -> Result<SampledSignal> {
    link.validate()?;
    let steps = cfg.steps(link.length_km)?;
    let h = link.length_km / steps as f64;
    run(sig, -link.beta2_si(), -link.gamma_nl, h, steps, None)
}

struct NoiseSource {
    /// Per-sample variance per polarization.
    var: f64,
    band: Option<f64>,
    rng: rng::SimRng,
}

impl NoiseSource {
    fn add(&mut self, pol: &mut [C64], fs: f64) {
        let n = pol.len();
        match self.band {
            None => {
                for v in pol.iter_mut() {
                    *v += rng::cgauss(&mut self.rng, self.var);
                }
            }
            Some(b) => {
                // white in-band at the same PSD, zero outside
                let mut w = rng::cgauss_vec(&mut self.rng, n, self.var);
                fft::forward(&mut w);
                for (k, v) in w.iter_mut().enumerate() {
                    let f = fft::signed_bin(k, n) as f64 * fs / n as f64;
                    if !(f >= -b / 2.0 && f < b / 2.0) {
                        *v = C64::new(0.0, 0.0);
                    }
                }
                fft::inverse_normalized(&mut w);
                for (v, z) in pol.iter_mut().zip(w) {
                    *v += z;
                }
            }
        }
    }
}

fn run(
    sig: &SampledSignal,
    beta2: f64,
    gamma: f64,
    h: f64,
    steps: usize,
    mut noise: Option<NoiseSource>,
) -> Result<SampledSignal> {
    let n = sig.len();
    if n == 0 {
        return Err(Error::InvalidInput("empty signal".into()));
    }
    let half = dispersion_response(n, sig.sample_rate, beta2, h / 2.0);
    let full: Vec<C64> = half.iter().map(|z| z * z).collect();
    let mut u1 = sig.pol1.clone();
    let mut u2 = sig.pol2.clone();
    let inv_n = 1.0 / n as f64;
    fft::forward(&mut u1);
    fft::forward(&mut u2);
    for s in 0..steps {
        let d = if s == 0 { &half } else { &full };
        for (v, hk) in u1.iter_mut().zip(d) {
            *v *= hk * inv_n;
        }
        for (v, hk) in u2.iter_mut().zip(d) {
            *v *= hk * inv_n;
        }
        fft::inverse(&mut u1);
        fft::inverse(&mut u2);
        let mut peak = 0.0f64;
        for (a, b) in u1.iter_mut().zip(u2.iter_mut()) {
            let p = a.norm_sqr() + b.norm_sqr();
            peak = peak.max(p);
            let r = C64::from_polar(1.0, gamma * h * p);
            *a *= r;
            *b *= r;
        }
        if !peak.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite field at step {s} of {steps}; power too high for step {h} km"
            )));
        }
        if let Some(ns) = noise.as_mut() {
            ns.add(&mut u1, sig.sample_rate);
            ns.add(&mut u2, sig.sample_rate);
        }
        fft::forward(&mut u1);
        fft::forward(&mut u2);
    }
    for (v, hk) in u1.iter_mut().zip(&half) {
        *v *= hk * inv_n;
    }
    for (v, hk) in u2.iter_mut().zip(&half) {
        *v *= hk * inv_n;
    }
    fft::inverse(&mut u1);
    fft::inverse(&mut u2);
    SampledSignal::new(u1, u2, sig.sample_rate, sig.t0)
}
