//! Parameter estimation, mismatched output entropy, particle-filter
//! conditional entropy and achievable-rate assembly.
//!
//! Entropies are in bits per block; rates in bits per symbol per
//! polarization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{
    mat_apply, mr_rotation, pd_step, MrParams, MrState, PdParams, PdState, WhitenFilter, IDENTITY,
};
use crate::rng::{self, gauss, SimRng};
use crate::signal::SymbolBlock;
use crate::{Error, Result, C64};
use rand::Rng;

/// Exponentially scaled modified Bessel function e^{−|x|} I₁(x): power
/// series below 20, Hankel asymptotic expansion above.
pub fn bessel_i1e(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax <= 20.0 {
        let q = 0.25 * ax * ax;
        let mut term = 0.5 * ax;
        let mut s = term;
        let mut k = 1.0;
        while term > 1e-17 * s {
            term *= q / (k * (k + 1.0));
            s += term;
            k += 1.0;
        }
        s * (-ax).exp()
    } else {
        let mut term = 1.0;
        let mut s = 1.0;
        for k in 1..60 {
            let odd = (2 * k - 1) as f64;
            let next = -term * (4.0 - odd * odd) / (k as f64 * 8.0 * ax);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            s += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        s / (2.0 * std::f64::consts::PI * ax).sqrt()
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// ln I₁(x) for x > 0.
pub fn ln_bessel_i1(x: f64) -> f64 {
    x + bessel_i1e(x).ln()
}

fn check_pairs(x: &[SymbolBlock], y: &[SymbolBlock]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let mut n = 0;
    for (a, b) in x.iter().zip(y) {
        if a.len() != b.len() {
            return Err(Error::LengthMismatch {
                expected: a.len(),
                got: b.len(),
            });
        }
        n += a.len();
    }
    Ok(n)
}

/// ML estimate of σ_Ξ² from the norms ‖y_m‖, ‖x_m‖.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaXi {
    pub sigma2: f64,
    /// The maximizer sits on the lower end of the search range.
    pub at_boundary: bool,
}

fn sigma_loglik(norms: &[(f64, f64)], s2: f64) -> f64 {
    norms
        .iter()
        .map(|&(yn, xn)| {
            let base = -s2.ln() - (yn * yn + xn * xn) / s2;
            if xn * yn == 0.0 {
                // (Y/X) I₁(2XY/σ²) → Y²/σ² as X → 0
                base + (yn * yn / s2).max(1e-300).ln()
            } else {
                base + (yn / xn).ln() + ln_bessel_i1(2.0 * yn * xn / s2)
            }
        })
        .sum()
}

/// Golden-section minimization of a unimodal `f` on [lo, hi].
pub fn golden_min(mut lo: f64, mut hi: f64, tol: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = hi - r * (hi - lo);
    let mut d = lo + r * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while (hi - lo).abs() > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

pub fn estimate_sigma_xi(x: &[SymbolBlock], y: &[SymbolBlock]) -> Result<SigmaXi> {
    let n = check_pairs(x, y)?;
    if n < 1000 {
        return Err(Error::InvalidInput(format!("need at least 1000 symbol pairs, got {n}")));
    }
    let mut norms = Vec::with_capacity(n);
    let mut mom = 0.0;
    for (a, b) in x.iter().zip(y) {
        for i in 0..a.len() {
            let xn = (a.pol1[i].norm_sqr() + a.pol2[i].norm_sqr()).sqrt();
            let yn = (b.pol1[i].norm_sqr() + b.pol2[i].norm_sqr()).sqrt();
            norms.push((yn, xn));
            mom += (b.pol1[i] - a.pol1[i]).norm_sqr() + (b.pol2[i] - a.pol2[i]).norm_sqr();
        }
    }
    let seed = mom / (2.0 * n as f64);
    if seed == 0.0 {
        return Ok(SigmaXi {
            sigma2: 0.0,
            at_boundary: true,
        });
    }
    let (mut lo, mut hi) = ((0.1 * seed).ln(), (10.0 * seed).ln());
    let floor = (1e-12 * seed).ln();
    for _ in 0..40 {
        let (t, _) = golden_min(lo, hi, 1e-9, |t| -sigma_loglik(&norms, t.exp()));
        let width = hi - lo;
        if t - lo < 1e-3 * width && lo > floor {
            lo -= width;
            continue;
        }
        if hi - t < 1e-3 * width {
            hi += width;
            continue;
        }
        return Ok(SigmaXi {
            sigma2: t.exp(),
            at_boundary: false,
        });
    }
    let (t, _) = golden_min(lo, hi, 1e-9, |t| -sigma_loglik(&norms, t.exp()));
    if t - lo < 1e-3 * (hi - lo) {
        return Ok(SigmaXi {
            sigma2: t.exp(),
            at_boundary: true,
        });
    }
    Err(Error::Numerical("sigma_xi search did not converge".into()))
}

/// Method-of-moments noise variance ⟨‖y − x‖²⟩/2, used by the
/// memoryless baseline.
pub fn memoryless_variance(x: &[SymbolBlock], y: &[SymbolBlock]) -> Result<f64> {
    let n = check_pairs(x, y)?;
    if n == 0 {
        return Err(Error::InvalidInput("no symbols".into()));
    }
    let s: f64 = x
        .iter()
        .zip(y)
        .flat_map(|(a, b)| (0..a.len()).map(move |i| (b.pol1[i] - a.pol1[i]).norm_sqr() + (b.pol2[i] - a.pol2[i]).norm_sqr()))
        .sum();
    Ok(s / (2.0 * n as f64))
}

/// angle((1/M) Σ y_m x_m*) per polarization.
pub fn estimate_mean_phase(x: &[SymbolBlock], y: &[SymbolBlock]) -> Result<[f64; 2]> {
    check_pairs(x, y)?;
    let mut acc = [C64::new(0.0, 0.0); 2];
    for (a, b) in x.iter().zip(y) {
        for i in 0..a.len() {
            acc[0] += b.pol1[i] * a.pol1[i].conj();
            acc[1] += b.pol2[i] * a.pol2[i].conj();
        }
    }
    if acc[0].norm() == 0.0 || acc[1].norm() == 0.0 {
        return Err(Error::Numerical("output uncorrelated with input; mean phase undefined".into()));
    }
    Ok([acc[0].arg(), acc[1].arg()])
}

/// Band Cholesky factor of a real symmetric Toeplitz matrix.
#[derive(Clone, Debug)]
pub struct ToeplitzBand {
    n: usize,
    b: usize,
    /// Row i holds L[i][i−b..=i] (entries before column 0 are zero).
    rows: Vec<f64>,
    log_det: f64,
}

impl ToeplitzBand {
    /// `r` is the first column truncated to the band (r.len() − 1 = bandwidth).
    pub fn new(r: &[f64], n: usize) -> Result<Self> {
        let b = r.len().saturating_sub(1);
        let w = b + 1;
        let mut rows = vec![0.0; n * w];
        let at = |i: usize, j: usize| i * w + (j + b - i);
        let mut log_det = 0.0;
        for i in 0..n {
            let j0 = i.saturating_sub(b);
            for j in j0..=i {
                let mut s = r[i - j];
                let k0 = i.saturating_sub(b).max(j.saturating_sub(b));
                for k in k0..j {
                    s -= rows[at(i, k)] * rows[at(j, k)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                    }
                    rows[at(i, i)] = s.sqrt();
                    log_det += s.ln();
                } else {
                    rows[at(i, j)] = s / rows[at(j, j)];
                }
            }
        }
        Ok(ToeplitzBand { n, b, rows, log_det })
    }

    /// −log₂ of the circular Gaussian density with covariance R at `a`.
    pub fn neg_log2_density(&self, a: &[C64]) -> f64 {
        assert_eq!(a.len(), self.n);
        let w = self.b + 1;
        let mut z = vec![C64::new(0.0, 0.0); self.n];
        let mut quad = 0.0;
        for i in 0..self.n {
            let mut s = a[i];
            for k in i.saturating_sub(self.b)..i {
                s -= z[k] * self.rows[i * w + (k + self.b - i)];
            }
            z[i] = s / self.rows[i * w + self.b];
            quad += z[i].norm_sqr();
        }
        (quad + self.log_det + self.n as f64 * std::f64::consts::PI.ln()) / std::f64::consts::LN_2
    }
}

/// r_A[ℓ] = E Σ_k h_k h_{k+ℓ} + σ² δ[ℓ] for ℓ = 0..L−1.
pub fn output_covariance(h: &[f64], energy: f64, sigma2: f64) -> Vec<f64> {
    (0..h.len())
        .map(|l| energy * (0..h.len() - l).map(|k| h[k] * h[k + l]).sum::<f64>() + if l == 0 { sigma2 } else { 0.0 })
        .collect()
}

/// Gaussian output entropy −log₂ q(a) − log₂ q(ā) of one whitened block.
pub fn output_entropy(a: &SymbolBlock, energy: f64, f: &WhitenFilter, sigma2: f64) -> Result<f64> {
    let n = a.len();
    let t1 = ToeplitzBand::new(&output_covariance(&f.h, energy, sigma2), n)?;
    let t2 = if f.h_bar == f.h {
        t1.clone()
    } else {
        ToeplitzBand::new(&output_covariance(&f.h_bar, energy, sigma2), n)?
    };
    Ok(t1.neg_log2_density(&a.pol1) + t2.neg_log2_density(&a.pol2))
}

/// Hidden-process model used by the particle filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelParams {
    Mr(MrParams),
    Pd(PdParams),
    /// No hidden rotation (M_m = I).
    Memoryless,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PfConfig {
    pub particles: usize,
    /// Resample when the effective sample size drops below this fraction of K.
    pub resample_threshold: f64,
}

impl Default for PfConfig {
    fn default() -> Self {
        PfConfig {
            particles: 256,
            resample_threshold: 0.5,
        }
    }
}

/// Particle states in struct-of-arrays layout with shared ring heads.
enum Hidden {
    Mr {
        p: MrParams,
        phi: Vec<f64>,
        phib: Vec<f64>,
        psi: Vec<C64>,
    },
    Pd {
        p: PdParams,
        st: Vec<PdState>,
    },
    Fixed,
}

impl Hidden {
    fn init(model: &ModelParams, k: usize, rng: &mut SimRng) -> Self {
        match model {
            ModelParams::Mr(p) => {
                let mu = p.mu;
                let (mut phi, mut phib, mut psi) = (vec![0.0; k * mu], vec![0.0; k * mu], vec![C64::new(0.0, 0.0); k * mu]);
                for i in 0..k {
                    let s = MrState::stationary(p, rng);
                    // stored oldest → newest in slot order; head = 0 is oldest
                    for j in 0..mu {
                        phi[i * mu + j] = s.phi[mu - 1 - j];
                        phib[i * mu + j] = s.phi_bar[mu - 1 - j];
                        psi[i * mu + j] = s.psi[mu - 1 - j];
                    }
                }
                Hidden::Mr { p: p.clone(), phi, phib, psi }
            }
            ModelParams::Pd(p) => Hidden::Pd {
                p: *p,
                st: vec![PdState::default(); k],
            },
            ModelParams::Memoryless => Hidden::Fixed,
        }
    }

    /// Advances particle `i`; `head` is the ring slot of the oldest value,
    /// which is overwritten by the new one.
    fn step(&mut self, i: usize, head: usize, rng: &mut SimRng) -> crate::models::Mat2 {
        match self {
            Hidden::Mr { p, phi, phib, psi } => {
                let mu = p.mu;
                if mu == 0 {
                    let a = p.sigma_phi * gauss(rng);
                    let b = p.sigma_phi * gauss(rng);
                    let c = rng::cgauss(rng, p.sigma_psi * p.sigma_psi);
                    return mr_rotation(a, b, c);
                }
                let base = i * mu;
                let (mut a, mut b, mut c) = (0.0, 0.0, C64::new(0.0, 0.0));
                // g_1 multiplies the newest value, at slot head − 1
                for q in 0..mu {
                    let slot = base + (head + mu - 1 - q) % mu;
                    a += p.g_phi[q] * phi[slot];
                    b += p.g_phi[q] * phib[slot];
                    c += psi[slot] * p.g_psi[q];
                }
                a += p.sigma_phi * gauss(rng);
                b += p.sigma_phi * gauss(rng);
                c += rng::cgauss(rng, p.sigma_psi * p.sigma_psi);
                phi[base + head] = a;
                phib[base + head] = b;
                psi[base + head] = c;
                mr_rotation(a, b, c)
            }
            Hidden::Pd { p, st } => pd_step(&mut st[i], p, rng),
            Hidden::Fixed => IDENTITY,
        }
    }

    fn mu(&self) -> usize {
        match self {
            Hidden::Mr { p, .. } => p.mu.max(1),
            _ => 1,
        }
    }

    fn resample(&mut self, idx: &[usize]) {
        match self {
            Hidden::Mr { p, phi, phib, psi } => {
                let mu = p.mu;
                if mu == 0 {
                    return;
                }
                let copy = |v: &Vec<f64>| -> Vec<f64> { idx.iter().flat_map(|&j| v[j * mu..(j + 1) * mu].iter().copied()).collect() };
                *phi = copy(phi);
                *phib = copy(phib);
                *psi = idx.iter().flat_map(|&j| psi[j * mu..(j + 1) * mu].iter().copied()).collect();
            }
            Hidden::Pd { st, .. } => {
                *st = idx.iter().map(|&j| st[j].clone()).collect();
            }
            Hidden::Fixed => {}
        }
    }
}

/// Systematic resampling indices.
fn systematic(w: &[f64], rng: &mut SimRng) -> Vec<usize> {
    let k = w.len();
    let u0: f64 = rng.random::<f64>() / k as f64;
    let mut idx = Vec::with_capacity(k);
    let mut c = w[0];
    let mut j = 0;
    for i in 0..k {
        let u = u0 + i as f64 / k as f64;
        while u > c && j + 1 < k {
            j += 1;
            c += w[j];
        }
        idx.push(j);
    }
    idx
}

/// Particle-filter estimate of −log₂ q(a | x) for one block, in bits.
/// `a` is the whitened output (length M − L + 1) and `x` the input
/// (length M); output i pairs with input time i + L − 1.
pub fn pf_conditional_entropy(
    a: &SymbolBlock,
    x: &SymbolBlock,
    model: &ModelParams,
    f: &WhitenFilter,
    sigma2: f64,
    cfg: &PfConfig,
    rng: &mut SimRng,
) -> Result<f64> {
    let l = f.len();
    let m = x.len();
    if cfg.particles < 1 {
        return Err(Error::InvalidInput("need at least one particle".into()));
    }
    if m < l || a.len() != m + 1 - l {
        return Err(Error::LengthMismatch {
            expected: m + 1 - l.min(m + 1),
            got: a.len(),
        });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidInput(format!("sigma_xi^2 must be positive, got {sigma2}")));
    }
    let k = cfg.particles;
    let mut hidden = Hidden::init(model, k, rng);
    let mu = hidden.mu();
    let mut w = vec![1.0 / k as f64; k];
    // u_{m−ℓ} = M_{m−ℓ} x_{m−ℓ}, ring of length L per particle
    let mut u = vec![[C64::new(0.0, 0.0); 2]; k * l];
    let mut logp = vec![0.0; k];
    let ln_norm = -2.0 * (std::f64::consts::PI * sigma2).ln();
    let mut bits = 0.0;
    for t in 0..m {
        let head = t % mu;
        let uh = t % l;
        let xt = [x.pol1[t], x.pol2[t]];
        for i in 0..k {
            let rot = hidden.step(i, head, rng);
            u[i * l + uh] = mat_apply(&rot, xt);
        }
        if t + 1 < l {
            continue;
        }
        let at = [a.pol1[t + 1 - l], a.pol2[t + 1 - l]];
        let mut mx = f64::NEG_INFINITY;
        for i in 0..k {
            let mut pred = [C64::new(0.0, 0.0); 2];
            for q in 0..l {
                let v = u[i * l + (uh + l - q) % l];
                pred[0] += v[0] * f.h[q];
                pred[1] += v[1] * f.h_bar[q];
            }
            let r2 = (at[0] - pred[0]).norm_sqr() + (at[1] - pred[1]).norm_sqr();
            logp[i] = ln_norm - r2 / sigma2;
            mx = mx.max(logp[i]);
        }
        if !mx.is_finite() {
            return Err(Error::WeightUnderflow { step: t });
        }
        let mut d = 0.0;
        for i in 0..k {
            w[i] *= (logp[i] - mx).exp();
            d += w[i];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::WeightUnderflow { step: t });
        }
        bits -= (d.ln() + mx) / std::f64::consts::LN_2;
        let mut ess_inv = 0.0;
        for wi in w.iter_mut() {
            *wi /= d;
            ess_inv += *wi * *wi;
        }
        if k > 1 && 1.0 / ess_inv < cfg.resample_threshold * k as f64 {
            let idx = systematic(&w, rng);
            hidden.resample(&idx);
            u = idx.iter().flat_map(|&j| u[j * l..(j + 1) * l].iter().copied()).collect();
            w.iter_mut().for_each(|v| *v = 1.0 / k as f64);
        }
    }
    Ok(bits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    /// Mean h_q(A) per block, bits.
    pub h_out: f64,
    /// Mean h_q(A|X) per block, bits.
    pub h_cond: f64,
    /// Bits per symbol per polarization.
    pub rate: f64,
    pub std_error: f64,
    pub runs: usize,
    /// Symbols per block entering the entropies.
    pub block_len: usize,
    /// Rate of each run.
    pub per_run: Vec<f64>,
}

/// Rate (h_out − h_cond)/(2M) with a jackknife standard error over runs.
pub fn achievable_rate(h_out: &[f64], h_cond: &[f64], m: usize) -> Result<RateEstimate> {
    if h_out.len() != h_cond.len() || h_out.is_empty() {
        return Err(Error::LengthMismatch {
            expected: h_out.len(),
            got: h_cond.len(),
        });
    }
    let n = h_out.len();
    let per: Vec<f64> = h_out.iter().zip(h_cond).map(|(a, b)| (a - b) / (2.0 * m as f64)).collect();
    let mean = per.iter().sum::<f64>() / n as f64;
    // the jackknife SE of a mean is the usual s/√n
    let se = if n > 1 {
        (per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ((n - 1) * n) as f64).sqrt()
    } else {
        0.0
    };
    Ok(RateEstimate {
        h_out: h_out.iter().sum::<f64>() / n as f64,
        h_cond: h_cond.iter().sum::<f64>() / n as f64,
        rate: mean,
        std_error: se,
        runs: n,
        block_len: m,
        per_run: per,
    })
}

/// Mean and standard error of the run-wise difference `a − b` of two
/// estimates computed on the same runs.
pub fn paired_gap(a: &RateEstimate, b: &RateEstimate) -> Result<(f64, f64)> {
    if a.per_run.len() != b.per_run.len() || a.per_run.len() < 2 {
        return Err(Error::LengthMismatch {
            expected: a.per_run.len(),
            got: b.per_run.len(),
        });
    }
    let d: Vec<f64> = a.per_run.iter().zip(&b.per_run).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Training or testing data: paired input and (mean-phase corrected)
/// output blocks of the COI.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub x: Vec<SymbolBlock>,
    pub y: Vec<SymbolBlock>,
    /// COI symbol energy per polarization.
    pub energy: f64,
}

/// Rate of `model` on `test`, one particle filter run per block.
pub fn evaluate_rate(test: &Dataset, model: &ModelParams, f: &WhitenFilter, sigma2: f64, pf: &PfConfig, seed: u64) -> Result<RateEstimate> {
    check_pairs(&test.x, &test.y)?;
    let res: Vec<Result<(f64, f64)>> = test
        .x
        .par_iter()
        .zip(&test.y)
        .enumerate()
        .map(|(i, (x, y))| {
            let a = crate::models::whiten(y, f);
            let ho = output_entropy(&a, test.energy, f, sigma2)?;
            let mut r = rng::stream(seed, rng::stream_id(&[0x7465_7374, i as u64]));
            let hc = pf_conditional_entropy(&a, x, model, f, sigma2, pf, &mut r)?;
            Ok((ho, hc))
        })
        .collect();
    let mut ho = Vec::new();
    let mut hc = Vec::new();
    for r in res {
        let (a, b) = r?;
        ho.push(a);
        hc.push(b);
    }
    let m = test.x.first().map(|b| b.len() + 1 - f.len()).unwrap_or(0);
    achievable_rate(&ho, &hc, m)
}

/// Mean per-symbol-pair h_q(A|X) over the training blocks and its standard error.
fn pf_objective(train: &Dataset, model: &ModelParams, f: &WhitenFilter, sigma2: f64, pf: &PfConfig, seed: u64) -> Result<(f64, f64)> {
    training_mean(train, f, |a, x, r| Ok(pf_conditional_entropy(a, x, model, f, sigma2, pf, r)? / a.len() as f64), seed)
}

/// Negative training rate h_q(A|X) − h_q(A), per symbol pair.
fn neg_rate_objective(train: &Dataset, model: &ModelParams, f: &WhitenFilter, sigma2: f64, pf: &PfConfig, seed: u64) -> Result<(f64, f64)> {
    training_mean(
        train,
        f,
        |a, x, r| {
            let hc = pf_conditional_entropy(a, x, model, f, sigma2, pf, r)?;
            let ho = output_entropy(a, train.energy, f, sigma2)?;
            Ok((hc - ho) / a.len() as f64)
        },
        seed,
    )
}

fn training_mean<F>(train: &Dataset, f: &WhitenFilter, per_block: F, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(&SymbolBlock, &SymbolBlock, &mut SimRng) -> Result<f64> + Sync,
{
    let vals: Vec<Result<f64>> = train
        .x
        .par_iter()
        .zip(&train.y)
        .enumerate()
        .map(|(i, (x, y))| {
            let a = crate::models::whiten(y, f);
            // common random numbers across candidate parameters
            let mut r = rng::stream(seed, rng::stream_id(&[0x7472_6169, i as u64]));
            per_block(&a, x, &mut r)
        })
        .collect();
    let v: Vec<f64> = vals.into_iter().collect::<Result<_>>()?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n * (n - 1.0))).sqrt()
    } else {
        0.0
    };
    Ok((mean, se))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mr,
    Pd,
    Memoryless,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub grid_points: usize,
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub h2_lo: f64,
    pub h2_hi: f64,
    pub h2_tol: f64,
    /// Skip the whitening search and keep L = 1.
    pub no_whitening: bool,
    pub mu: usize,
    pub pf: PfConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grid_points: 13,
            grid_lo: 0.125,
            grid_hi: 8.0,
            h2_lo: -0.5,
            h2_hi: 0.5,
            h2_tol: 1e-3,
            no_whitening: false,
            mu: 4,
            pf: PfConfig::default(),
        }
    }
}

impl FitConfig {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points.max(1);
        if n == 1 {
            return vec![(self.grid_lo * self.grid_hi).sqrt()];
        }
        let (a, b) = (self.grid_lo.ln(), self.grid_hi.ln());
        (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub model: ModelParams,
    pub filter: WhitenFilter,
    pub sigma2: f64,
    /// Chosen scaling pair (1, 1 is the unscaled target).
    pub scalings: (f64, f64),
    pub h2: f64,
    /// Objective (bits per symbol pair) at the chosen point.
    pub objective: f64,
    /// All grid values were equal within their standard errors.
    pub flat: bool,
}

/// Builds model parameters for scalings `(s1, s2)` around the target
/// autocovariance `r_theta` (lags 0..).
pub fn model_for(kind: ModelKind, r_theta: &[f64], mu: usize, s1: f64, s2: f64) -> Result<ModelParams> {
    match kind {
        ModelKind::Mr => Ok(ModelParams::Mr(MrParams::from_theta(r_theta, mu, s1, s2)?)),
        ModelKind::Pd => {
            if r_theta.len() < 2 {
                return Err(Error::InvalidInput("PD seed needs r_theta at lags 0 and 1".into()));
            }
            let sd2 = 2.0 * (r_theta[0] - r_theta[1]).max(0.0);
            Ok(ModelParams::Pd(PdParams {
                sigma_delta: (s1 * sd2).sqrt(),
                sigma_a: (s2 * sd2 / 5.0).sqrt(),
            }))
        }
        ModelKind::Memoryless => Ok(ModelParams::Memoryless),
    }
}

/// Grid search over the two scalings, then the whitening tap h₂.
pub fn fit_model_scalings(train: &Dataset, kind: ModelKind, r_theta: &[f64], sigma2: f64, cfg: &FitConfig, seed: u64) -> Result<FittedModel> {
    check_pairs(&train.x, &train.y)?;
    if kind == ModelKind::Memoryless {
        let ident = WhitenFilter::identity();
        let (obj, _) = pf_objective(train, &ModelParams::Memoryless, &ident, sigma2, &cfg.pf, seed)?;
        return Ok(FittedModel {
            model: ModelParams::Memoryless,
            filter: ident,
            sigma2,
            scalings: (0.0, 0.0),
            h2: 0.0,
            objective: obj,
            flat: false,
        });
    }
    let grid = cfg.grid();
    let ident = WhitenFilter::identity();
    let mut evals = Vec::new();
    for &s1 in &grid {
        for &s2 in &grid {
            let model = model_for(kind, r_theta, cfg.mu, s1, s2)?;
            let (v, se) = pf_objective(train, &model, &ident, sigma2, &cfg.pf, seed)?;
            evals.push((s1, s2, v, se));
        }
    }
    let best = evals.iter().cloned().fold((1.0, 1.0, f64::INFINITY, 0.0), |b, e| if e.2 < b.2 { e } else { b });
    let worst = evals.iter().map(|e| e.2).fold(f64::NEG_INFINITY, f64::max);
    let max_se = evals.iter().map(|e| e.3).fold(0.0, f64::max);
    let flat = worst - best.2 <= max_se;
    let (s1, s2) = if flat {
        let c = grid[grid.len() / 2];
        (c, c)
    } else {
        (best.0, best.1)
    };
    let model = model_for(kind, r_theta, cfg.mu, s1, s2)?;
    let obj = if flat { pf_objective(train, &model, &ident, sigma2, &cfg.pf, seed)?.0 } else { best.2 };
    let fitted = FittedModel {
        model,
        filter: ident,
        sigma2,
        scalings: (s1, s2),
        h2: 0.0,
        objective: obj,
        flat,
    };
    if cfg.no_whitening {
        Ok(fitted)
    } else {
        fit_whitening(train, &fitted, cfg, seed)
    }
}

/// Golden-section search of the symmetric whitening tap h₂ for an
/// already fitted rotation model.
///
/// The search maximizes the training rate rather than minimizing
/// h_q(A|X) alone: near h₂ = ±0.5 the filter develops a spectral null,
/// which lowers h_q(A|X) while destroying the output entropy.
pub fn fit_whitening(train: &Dataset, fitted: &FittedModel, cfg: &FitConfig, seed: u64) -> Result<FittedModel> {
    let mut err = None;
    let (mut h, v) = golden_min(cfg.h2_lo, cfg.h2_hi, cfg.h2_tol, |h| {
        match neg_rate_objective(train, &fitted.model, &WhitenFilter::symmetric3(h), fitted.sigma2, &cfg.pf, seed) {
            Ok((v, _)) => v,
            Err(e) => {
                err = Some(e);
                f64::INFINITY
            }
        }
    });
    if let Some(e) = err {
        return Err(e.at("whitening search"));
    }
    // the search is local, so never end up below the unwhitened rate
    let (v0, _) = neg_rate_objective(train, &fitted.model, &WhitenFilter::symmetric3(0.0), fitted.sigma2, &cfg.pf, seed)?;
    if v0 <= v {
        h = 0.0;
    }
    let filter = WhitenFilter::symmetric3(h);
    // reported objective stays h_q(A|X), comparable with the unwhitened fits
    let (obj, _) = pf_objective(train, &fitted.model, &filter, fitted.sigma2, &cfg.pf, seed)?;
    Ok(FittedModel {
        filter,
        h2: h,
        objective: obj,
        ..fitted.clone()
    })
}

/// Removes a per-polarization mean phase from every output block.
pub fn derotate(y: &[SymbolBlock], phase: [f64; 2]) -> Vec<SymbolBlock> {
    y.iter().map(|b| crate::surrogate::remove_mean_phase(b, phase[0], phase[1])).collect()
}
