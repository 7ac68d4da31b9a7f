//! First- and second-order statistics of Θ, Θ̄, Ψ and V.
//!
//! Analytic moments are finite sums over tensor entries. Energies factor
//! out of every sum, so the per-lag tensor contractions are computed once
//! ([`MomentKernels`]) and combined with the plan energies on demand.
//! Moments describe the back-propagated receiver (XPM tensors only).

use std::f64::consts::PI;

use crate::nli::{NliTensor, TensorSet};
use crate::signal::{LinkConfig, SymbolBlock, WdmPlan};
use crate::surrogate::NliDecomposition;
use crate::{fft, Error, Result, C64};

/// Moments at lags `0..=max_lag`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    pub max_lag: usize,
    pub theta_mean: f64,
    pub theta_bar_mean: f64,
    pub r_theta: Vec<f64>,
    pub r_theta_bar: Vec<f64>,
    /// ⟨Θ_m Θ̄_{m+ℓ}⟩ − ⟨Θ⟩⟨Θ̄⟩.
    pub r_theta_cross: Vec<f64>,
    /// ⟨Ψ_m Ψ*_{m+ℓ}⟩.
    pub r_psi: Vec<C64>,
    /// ⟨Ψ_m Ψ_{m+ℓ}⟩.
    pub r_psi_pseudo: Vec<C64>,
    /// ⟨V_m V*_{m+ℓ}⟩.
    pub r_v: Vec<C64>,
    pub r_v_bar: Vec<C64>,
    /// ⟨V_m X*_{m+ℓ}⟩.
    pub isi_cross: Vec<C64>,
}

impl MomentSet {
    pub fn zeros(max_lag: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        MomentSet {
            max_lag,
            theta_mean: 0.0,
            theta_bar_mean: 0.0,
            r_theta: vec![0.0; max_lag + 1],
            r_theta_bar: vec![0.0; max_lag + 1],
            r_theta_cross: vec![0.0; max_lag + 1],
            r_psi: vec![z; max_lag + 1],
            r_psi_pseudo: vec![z; max_lag + 1],
            r_v: vec![z; max_lag + 1],
            r_v_bar: vec![z; max_lag + 1],
            isi_cross: vec![z; max_lag + 1],
        }
    }

    /// Autocorrelation of the total additive noise, `N_ASE δ[ℓ] + r_V[ℓ]`.
    pub fn r_z(&self, n_ase: f64) -> Vec<C64> {
        let mut r = self.r_v.clone();
        if let Some(r0) = r.first_mut() {
            *r0 += n_ase;
        }
        r
    }

    /// CSV rows `lag,r_theta,r_theta_cross,re_r_psi,im_r_psi,re_r_v,im_r_v`.
    pub fn write_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        writeln!(out, "lag,r_theta,r_theta_cross,re_r_psi,im_r_psi,re_r_v,im_r_v")?;
        for l in 0..=self.max_lag {
            writeln!(
                out,
                "{l},{:e},{:e},{:e},{:e},{:e},{:e}",
                self.r_theta[l], self.r_theta_cross[l], self.r_psi[l].re, self.r_psi[l].im, self.r_v[l].re, self.r_v[l].im
            )?;
        }
        Ok(())
    }
}

/// Σ over all (k, k') and over k = k' only.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
struct FullDiag {
    full: C64,
    diag: C64,
}

impl FullDiag {
    /// Covariance weight: (Q − E²)·diag + E²·off-diagonal.
    fn cov(self, e: f64, q: f64) -> C64 {
        self.diag * (q - e * e) + (self.full - self.diag) * (e * e)
    }
}

fn line_val(t: &NliTensor, n: i32, s: i32, a: i32) -> C64 {
    t.grid.get_nsa(n, s, a) * t.scale
}

/// Σ F_{0,k,k'} G*_{0,k−ℓ,k'−ℓ}: the partner sits at a + ℓ on the same σ line.
fn theta_contract(f: &NliTensor, g: &NliTensor, l: i32) -> FullDiag {
    let fg = &f.grid;
    let mut out = FullDiag::default();
    if fg.n_max < 0 {
        return out;
    }
    for s in -fg.sigma_max..=fg.sigma_max {
        let Some(line) = fg.line(0, s) else { continue };
        let mut acc = C64::new(0.0, 0.0);
        for (i, v) in line.iter().enumerate() {
            if v.re == 0.0 && v.im == 0.0 {
                continue;
            }
            let a = fg.a_lo + i as i32;
            acc += v * line_val(g, 0, s, a + l).conj();
        }
        acc *= f.scale;
        out.full += acc;
        if s == 0 {
            out.diag += acc;
        }
    }
    out
}

/// Σ_{n≠0, n≠ℓ} F_{n,k,k'} G*_{n−ℓ,k−ℓ,k'−ℓ}: the partner sits at
/// (n − ℓ, σ − ℓ) with the same a.
fn v_contract(f: &NliTensor, g: &NliTensor, l: i32) -> FullDiag {
    let fg = &f.grid;
    let mut out = FullDiag::default();
    for n in -fg.n_max..=fg.n_max {
        if n == 0 || n == l || (n - l).abs() > g.grid.n_max {
            continue;
        }
        for s in -fg.sigma_max..=fg.sigma_max {
            if (s - l).abs() > g.grid.sigma_max {
                continue;
            }
            let Some(line) = fg.line(n, s) else { continue };
            let Some(gline) = g.grid.line(n - l, s - l) else { continue };
            let lo = fg.a_lo.max(g.grid.a_lo);
            let hi = fg.a_hi.min(g.grid.a_hi);
            let mut acc = C64::new(0.0, 0.0);
            for a in lo..=hi {
                acc += line[(a - fg.a_lo) as usize] * gline[(a - g.grid.a_lo) as usize].conj();
            }
            acc *= f.scale * g.scale;
            out.full += acc;
            if s == n {
                out.diag += acc;
            }
        }
    }
    out
}

/// Σ_k F_{n,k,k} for n in −n_max..=n_max (index n + n_max).
fn diag_sums(f: &NliTensor, n_max: i32) -> Vec<C64> {
    (-n_max..=n_max)
        .map(|n| {
            let g = &f.grid;
            if n.abs() > g.n_max || n.abs() > g.sigma_max {
                return C64::new(0.0, 0.0);
            }
            g.line(n, n).map(|l| l.iter().sum::<C64>() * f.scale).unwrap_or_default()
        })
        .collect()
}

/// Per-interferer contractions, independent of energies.
#[derive(Clone, Debug)]
struct InterfererKernel {
    stream: usize,
    th_cc1: Vec<FullDiag>,
    th_tt1: Vec<FullDiag>,
    th_cc2: Vec<FullDiag>,
    th_tt2: Vec<FullDiag>,
    th_ct: Vec<FullDiag>,
    th_tc: Vec<FullDiag>,
    psi: Vec<FullDiag>,
    v_cc1: Vec<FullDiag>,
    v_tt1: Vec<FullDiag>,
    v_dd1: Vec<FullDiag>,
    v_cc2: Vec<FullDiag>,
    v_tt2: Vec<FullDiag>,
    v_dd2: Vec<FullDiag>,
    mc1: Vec<C64>,
    mt1: Vec<C64>,
    mc2: Vec<C64>,
    mt2: Vec<C64>,
}

/// Energy-free tensor contractions for one COI stream, reusable across
/// power sweeps.
#[derive(Clone, Debug)]
pub struct MomentKernels {
    pub coi: usize,
    pub max_lag: usize,
    n_max: i32,
    kernels: Vec<InterfererKernel>,
}

impl MomentKernels {
    pub fn new(tensors: &TensorSet, coi: usize, max_lag: usize) -> Result<Self> {
        let t1 = tensors
            .stream(0, coi)
            .ok_or_else(|| Error::InvalidInput(format!("no tensors for COI stream {coi}")))?;
        let t2 = tensors
            .stream(1, coi)
            .ok_or_else(|| Error::InvalidInput(format!("no tensors for COI stream {coi}")))?;
        let n_max = t1
            .xpm
            .iter()
            .chain(&t2.xpm)
            .map(|x| x.c.n_max().max(x.c_tilde.n_max()).max(x.d.n_max()))
            .max()
            .unwrap_or(0);
        let lags: Vec<i32> = (0..=max_lag as i32).collect();
        let kernels = t1
            .xpm
            .iter()
            .zip(&t2.xpm)
            .map(|(a, b)| {
                let th = |f: &NliTensor, g: &NliTensor| lags.iter().map(|&l| theta_contract(f, g, l)).collect::<Vec<_>>();
                let v = |f: &NliTensor, g: &NliTensor| lags.iter().map(|&l| v_contract(f, g, l)).collect::<Vec<_>>();
                InterfererKernel {
                    stream: a.stream,
                    th_cc1: th(&a.c, &a.c),
                    th_tt1: th(&a.c_tilde, &a.c_tilde),
                    th_cc2: th(&b.c, &b.c),
                    th_tt2: th(&b.c_tilde, &b.c_tilde),
                    th_ct: th(&a.c, &b.c_tilde),
                    th_tc: th(&a.c_tilde, &b.c),
                    psi: th(&a.d, &a.d),
                    v_cc1: v(&a.c, &a.c),
                    v_tt1: v(&a.c_tilde, &a.c_tilde),
                    v_dd1: v(&a.d, &a.d),
                    v_cc2: v(&b.c, &b.c),
                    v_tt2: v(&b.c_tilde, &b.c_tilde),
                    v_dd2: v(&b.d, &b.d),
                    mc1: diag_sums(&a.c, n_max),
                    mt1: diag_sums(&a.c_tilde, n_max),
                    mc2: diag_sums(&b.c, n_max),
                    mt2: diag_sums(&b.c_tilde, n_max),
                }
            })
            .collect();
        Ok(MomentKernels {
            coi,
            max_lag,
            n_max,
            kernels,
        })
    }

    /// Combines the contractions with the energies and fourth moments of `plan`.
    pub fn moments(&self, plan: &WdmPlan) -> Result<MomentSet> {
        let coi = plan
            .channels
            .get(self.coi)
            .ok_or_else(|| Error::InvalidInput(format!("COI stream {} not in plan", self.coi)))?;
        let (ex, exb) = (coi.energy, coi.energy_bar);
        let mut m = MomentSet::zeros(self.max_lag);
        let nn = (2 * self.n_max + 1) as usize;
        let mut mu1 = vec![C64::new(0.0, 0.0); nn];
        let mut mu2 = vec![C64::new(0.0, 0.0); nn];
        let zero = C64::new(0.0, 0.0);
        let (mut tm, mut tbm) = (zero, zero);
        for k in &self.kernels {
            let ch = plan
                .channels
                .get(k.stream)
                .ok_or_else(|| Error::InvalidInput(format!("stream {} not in plan", k.stream)))?;
            let (e, eb, q, qb) = (ch.energy, ch.energy_bar, ch.fourth, ch.fourth_bar);
            let c0 = self.n_max as usize;
            tm += k.mc1[c0] * e + k.mt1[c0] * eb;
            tbm += k.mc2[c0] * eb + k.mt2[c0] * e;
            for i in 0..nn {
                mu1[i] += k.mc1[i] * e + k.mt1[i] * eb;
                mu2[i] += k.mc2[i] * eb + k.mt2[i] * e;
            }
            for l in 0..=self.max_lag {
                m.r_theta[l] += (k.th_cc1[l].cov(e, q) + k.th_tt1[l].cov(eb, qb)).re;
                m.r_theta_bar[l] += (k.th_cc2[l].cov(eb, qb) + k.th_tt2[l].cov(e, q)).re;
                m.r_theta_cross[l] += (k.th_ct[l].cov(e, q) + k.th_tc[l].cov(eb, qb)).re;
                m.r_psi[l] += k.psi[l].full * (e * eb);
                m.r_v[l] += (k.v_cc1[l].cov(e, q) + k.v_tt1[l].cov(eb, qb)) * ex + k.v_dd1[l].full * (e * eb * exb);
                m.r_v_bar[l] += (k.v_cc2[l].cov(eb, qb) + k.v_tt2[l].cov(e, q)) * exb + k.v_dd2[l].full * (e * eb * ex);
            }
        }
        m.theta_mean = tm.re;
        m.theta_bar_mean = tbm.re;
        // products of conditional means across all interferer pairs
        let j = C64::new(0.0, 1.0);
        for l in 0..=self.max_lag as i32 {
            let (mut a1, mut a2) = (zero, zero);
            for n in -self.n_max..=self.n_max {
                if n == 0 || n == l || (n - l).abs() > self.n_max {
                    continue;
                }
                let (i, i2) = ((n + self.n_max) as usize, (n - l + self.n_max) as usize);
                a1 += mu1[i] * mu1[i2].conj();
                a2 += mu2[i] * mu2[i2].conj();
            }
            m.r_v[l as usize] += a1 * ex;
            m.r_v_bar[l as usize] += a2 * exb;
            if l != 0 && l <= self.n_max {
                m.isi_cross[l as usize] = j * ex * mu1[(l + self.n_max) as usize];
            }
        }
        Ok(m)
    }
}

/// Moments of COI stream `coi` up to lag `max_lag`.
pub fn analytic_moments(tensors: &TensorSet, plan: &WdmPlan, coi: usize, max_lag: usize) -> Result<MomentSet> {
    MomentKernels::new(tensors, coi, max_lag)?.moments(plan)
}

/// Large accumulated dispersion approximation of ⟨Θ⟩ and r_Θ for COI
/// stream `coi`. Returns `(theta_mean, r_theta[0..=max_lag])`; the flag
/// is false when some interferer has |β2 Ω|L/T below 10.
pub fn large_dispersion_moments(plan: &WdmPlan, link: &LinkConfig, coi: usize, max_lag: usize) -> Result<(f64, Vec<f64>, bool)> {
    let c0 = plan
        .channels
        .get(coi)
        .ok_or_else(|| Error::InvalidInput(format!("COI stream {coi} not in plan")))?;
    let t = plan.stream_period();
    let l = link.length_km;
    let b2 = link.beta2_si().abs();
    let g = link.gamma_nl;
    let mut mean = 0.0;
    let mut r = vec![0.0; max_lag + 1];
    let mut valid = true;
    for i in plan.interferers() {
        let ch = &plan.channels[i];
        let w = (ch.omega - c0.omega).abs();
        let walk = b2 * w * l;
        if walk / t < 10.0 {
            valid = false;
        }
        mean += 3.0 * g * l / t * ch.energy;
        if walk == 0.0 {
            continue;
        }
        let amp = 5.0 * g * g * l / t * (ch.fourth - ch.energy * ch.energy) / (b2 * w);
        for (lag, v) in r.iter_mut().enumerate() {
            *v += amp * (1.0 - lag as f64 * t / walk).max(0.0);
        }
    }
    Ok((mean, r, valid))
}

/// Monte-Carlo moment estimates with jackknife standard errors.
#[derive(Clone, Debug)]
pub struct EmpiricalMoments {
    pub estimate: MomentSet,
    /// Standard errors; complex entries carry the SE of the real and
    /// imaginary parts separately.
    pub se: MomentSet,
    pub blocks: usize,
    /// Some estimated variance is zero, so standard errors are meaningless.
    pub degenerate: bool,
}

/// Per-block raw sums from which every estimate is a ratio of totals.
struct BlockSums {
    m: f64,
    s_th: f64,
    s_thb: f64,
    p_th: Vec<f64>,
    p_thb: Vec<f64>,
    p_x: Vec<f64>,
    p_psi: Vec<C64>,
    p_psi2: Vec<C64>,
    p_v: Vec<C64>,
    p_vb: Vec<C64>,
    p_isi: Vec<C64>,
}

/// Σ_m conj(a_m) b_{m+ℓ} for ℓ in 0..=lmax, cyclic.
fn cyc_corr(a: &[C64], b: &[C64], lmax: usize) -> Vec<C64> {
    let mut fa = a.to_vec();
    let mut fb = b.to_vec();
    fft::forward(&mut fa);
    fft::forward(&mut fb);
    let mut p: Vec<C64> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft::inverse_normalized(&mut p);
    let m = a.len();
    (0..=lmax).map(|l| p[l % m]).collect()
}

fn block_sums(d: &NliDecomposition, x: Option<&SymbolBlock>, lmax: usize) -> BlockSums {
    let re = |v: &[f64]| v.iter().map(|&t| C64::new(t, 0.0)).collect::<Vec<_>>();
    let th = re(&d.theta);
    let thb = re(&d.theta_bar);
    let conj = |v: &[C64]| v.iter().map(|z| z.conj()).collect::<Vec<_>>();
    let r = |v: Vec<C64>| v.iter().map(|z| z.re).collect::<Vec<_>>();
    let cc = |v: Vec<C64>| v.iter().map(|z| z.conj()).collect::<Vec<_>>();
    BlockSums {
        m: d.len() as f64,
        s_th: d.theta.iter().sum(),
        s_thb: d.theta_bar.iter().sum(),
        p_th: r(cyc_corr(&th, &th, lmax)),
        p_thb: r(cyc_corr(&thb, &thb, lmax)),
        p_x: r(cyc_corr(&th, &thb, lmax)),
        // Σ ψ_m ψ*_{m+ℓ} = conj(Σ conj(ψ_m) ψ_{m+ℓ})
        p_psi: cc(cyc_corr(&d.psi, &d.psi, lmax)),
        p_psi2: cyc_corr(&conj(&d.psi), &d.psi, lmax),
        p_v: cc(cyc_corr(&d.v, &d.v, lmax)),
        p_vb: cc(cyc_corr(&d.v_bar, &d.v_bar, lmax)),
        p_isi: match x {
            Some(x) => cc(cyc_corr(&d.v, &x.pol1, lmax)),
            None => vec![C64::new(0.0, 0.0); lmax + 1],
        },
    }
}

/// Estimate from summed block statistics.
fn estimate(bs: &[&BlockSums], lmax: usize) -> MomentSet {
    let mut m = MomentSet::zeros(lmax);
    let mt: f64 = bs.iter().map(|b| b.m).sum();
    let mu = bs.iter().map(|b| b.s_th).sum::<f64>() / mt;
    let mub = bs.iter().map(|b| b.s_thb).sum::<f64>() / mt;
    m.theta_mean = mu;
    m.theta_bar_mean = mub;
    for l in 0..=lmax {
        // Σ (a_m − μa)(b_{m+ℓ} − μb) = P − μa·Σb − μb·Σa + M μa μb per cyclic block
        let cov = |p: &dyn Fn(&BlockSums) -> f64, sa: &dyn Fn(&BlockSums) -> f64, sb: &dyn Fn(&BlockSums) -> f64, ma: f64, mb: f64| {
            bs.iter().map(|b| p(b) - ma * sb(b) - mb * sa(b) + b.m * ma * mb).sum::<f64>() / mt
        };
        m.r_theta[l] = cov(&|b| b.p_th[l], &|b| b.s_th, &|b| b.s_th, mu, mu);
        m.r_theta_bar[l] = cov(&|b| b.p_thb[l], &|b| b.s_thb, &|b| b.s_thb, mub, mub);
        m.r_theta_cross[l] = cov(&|b| b.p_x[l], &|b| b.s_th, &|b| b.s_thb, mu, mub);
        let avg = |f: &dyn Fn(&BlockSums) -> C64| bs.iter().map(|b| f(b)).sum::<C64>() / mt;
        m.r_psi[l] = avg(&|b| b.p_psi[l]);
        m.r_psi_pseudo[l] = avg(&|b| b.p_psi2[l]);
        m.r_v[l] = avg(&|b| b.p_v[l]);
        m.r_v_bar[l] = avg(&|b| b.p_vb[l]);
        m.isi_cross[l] = avg(&|b| b.p_isi[l]);
    }
    m
}

/// Moment estimates from decompositions of independent cyclic blocks.
/// `inputs`, when given, are the COI symbol blocks used for the ISI
/// cross-correlation.
pub fn empirical_moments(decs: &[NliDecomposition], inputs: Option<&[SymbolBlock]>, max_lag: usize) -> Result<EmpiricalMoments> {
    if decs.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 blocks for moment estimates".into()));
    }
    if let Some(x) = inputs {
        if x.len() != decs.len() {
            return Err(Error::LengthMismatch {
                expected: decs.len(),
                got: x.len(),
            });
        }
    }
    let sums: Vec<BlockSums> = decs
        .iter()
        .enumerate()
        .map(|(i, d)| block_sums(d, inputs.map(|x| &x[i]), max_lag))
        .collect();
    let all: Vec<&BlockSums> = sums.iter().collect();
    let est = estimate(&all, max_lag);
    let nb = sums.len();
    let loo: Vec<MomentSet> = (0..nb)
        .map(|i| {
            let sub: Vec<&BlockSums> = sums.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, b)| b).collect();
            estimate(&sub, max_lag)
        })
        .collect();
    let k = (nb as f64 - 1.0) / nb as f64;
    let se_r = |f: &dyn Fn(&MomentSet) -> f64| {
        let mean = loo.iter().map(f).sum::<f64>() / nb as f64;
        (k * loo.iter().map(|s| (f(s) - mean).powi(2)).sum::<f64>()).sqrt()
    };
    let se_c = |f: &dyn Fn(&MomentSet) -> C64| C64::new(se_r(&|s| f(s).re), se_r(&|s| f(s).im));
    let mut se = MomentSet::zeros(max_lag);
    se.theta_mean = se_r(&|s| s.theta_mean);
    se.theta_bar_mean = se_r(&|s| s.theta_bar_mean);
    for l in 0..=max_lag {
        se.r_theta[l] = se_r(&|s| s.r_theta[l]);
        se.r_theta_bar[l] = se_r(&|s| s.r_theta_bar[l]);
        se.r_theta_cross[l] = se_r(&|s| s.r_theta_cross[l]);
        se.r_psi[l] = se_c(&|s| s.r_psi[l]);
        se.r_psi_pseudo[l] = se_c(&|s| s.r_psi_pseudo[l]);
        se.r_v[l] = se_c(&|s| s.r_v[l]);
        se.r_v_bar[l] = se_c(&|s| s.r_v_bar[l]);
        se.isi_cross[l] = se_c(&|s| s.isi_cross[l]);
    }
    let flat = |var: f64, mean: f64| var <= 1e-12 * mean * mean || var <= 0.0;
    let degenerate = flat(est.r_theta[0], est.theta_mean)
        || flat(est.r_theta_bar[0], est.theta_bar_mean)
        || est.r_psi[0].re <= 0.0
        || est.r_v[0].re <= 0.0;
    Ok(EmpiricalMoments {
        estimate: est,
        se,
        blocks: nb,
        degenerate,
    })
}

/// Walk-off memory |β2 Ω|L of an interferer, in stream symbol periods.
pub fn walk_off_symbols(plan: &WdmPlan, link: &LinkConfig, coi: usize, stream: usize) -> f64 {
    let w = (plan.channels[stream].omega - plan.channels[coi].omega).abs();
    link.beta2_si().abs() * w * link.length_km / plan.stream_period()
}

/// Normalized frequency offset Ω T / 2π of an interferer.
pub fn relative_frequency(plan: &WdmPlan, coi: usize, stream: usize) -> f64 {
    (plan.channels[stream].omega - plan.channels[coi].omega) * plan.stream_period() / (2.0 * PI)
}
