//! Discrete-time regular-perturbation channel on cyclic symbol blocks.
//!
//! Every NLI sum has the form `Σ_k h_k p_{m+k}` with `p_j = b_j b*_{j−d}`
//! for a fixed lag `d = k − k'`, i.e. a cyclic correlation of a filter
//! taken from one (n, σ) line of a tensor with a product sequence. Each
//! correlation is done by FFT over the block and accumulated in the
//! frequency domain per `n` before a single inverse transform.

use serde::{Deserialize, Serialize};

use crate::nli::{NliTensor, StreamTensors, TensorSet};
use crate::signal::{LinkConfig, SymbolBlock};
use crate::{fft, rng, Error, Result, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReceiverMode {
    /// Dispersion compensation only: SPM terms stay in the output.
    DispComp,
    /// Digital back-propagation of the COI: SPM terms removed.
    #[default]
    Dbp,
}

/// θ, θ̄, ψ, ψ̄, v, v̄ for one COI block.
#[derive(Clone, Debug, PartialEq)]
pub struct NliDecomposition {
    pub theta: Vec<f64>,
    pub theta_bar: Vec<f64>,
    pub psi: Vec<C64>,
    pub psi_bar: Vec<C64>,
    pub v: Vec<C64>,
    pub v_bar: Vec<C64>,
}

impl NliDecomposition {
    pub fn zeros(m: usize) -> Self {
        NliDecomposition {
            theta: vec![0.0; m],
            theta_bar: vec![0.0; m],
            psi: vec![C64::new(0.0, 0.0); m],
            psi_bar: vec![C64::new(0.0, 0.0); m],
            v: vec![C64::new(0.0, 0.0); m],
            v_bar: vec![C64::new(0.0, 0.0); m],
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// `b_j · c*_{j−d}` cyclically.
fn lag_product(b: &[C64], c: &[C64], d: i64) -> Vec<C64> {
    let m = b.len() as i64;
    (0..m).map(|j| b[j as usize] * c[(j - d).rem_euclid(m) as usize].conj()).collect()
}

/// Spectrum of `g_j = scale·h_{−j}` for the (n, σ) line, folded mod `m`.
fn filter_spectrum(t: &NliTensor, n: i32, sigma: i32, m: usize) -> Option<Vec<C64>> {
    let line = t.grid.line(n, sigma)?;
    if line.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return None;
    }
    let mut g = vec![C64::new(0.0, 0.0); m];
    let a_lo = t.grid.a_lo as i64;
    for (i, h) in line.iter().enumerate() {
        // k = σ − a, index −k = a − σ
        let j = (a_lo + i as i64 - sigma as i64).rem_euclid(m as i64) as usize;
        g[j] += h * t.scale;
    }
    fft::forward(&mut g);
    Some(g)
}

fn spectrum(mut v: Vec<C64>) -> Vec<C64> {
    fft::forward(&mut v);
    v
}

fn axpy(acc: &mut [C64], g: &[C64], p: &[C64]) {
    for ((a, x), y) in acc.iter_mut().zip(g).zip(p) {
        *a += x * y;
    }
}

/// Frequency-domain accumulators for one receiving polarization.
struct Accum {
    /// Index n + n_max; multiplies the same-polarization COI symbol.
    same: Vec<Vec<C64>>,
    /// Multiplies the other-polarization COI symbol.
    other: Vec<Vec<C64>>,
    theta: Vec<C64>,
    psi: Vec<C64>,
}

impl Accum {
    fn new(n_max: i32, m: usize) -> Self {
        let z = || vec![C64::new(0.0, 0.0); m];
        Accum {
            same: (0..=2 * n_max).map(|_| z()).collect(),
            other: (0..=2 * n_max).map(|_| z()).collect(),
            theta: z(),
            psi: z(),
        }
    }
}

/// Product spectra of one interferer: p = b b*, p̄ = b̄ b̄*, q = b b̄*, q̄ = b̄ b*.
struct Products {
    p: Vec<C64>,
    pb: Vec<C64>,
    q: Vec<C64>,
    qb: Vec<C64>,
}

fn products(b: &SymbolBlock, d: i64, need_q: bool) -> Products {
    let e = Vec::new;
    Products {
        p: spectrum(lag_product(&b.pol1, &b.pol1, d)),
        pb: spectrum(lag_product(&b.pol2, &b.pol2, d)),
        q: if need_q { spectrum(lag_product(&b.pol1, &b.pol2, d)) } else { e() },
        qb: if need_q { spectrum(lag_product(&b.pol2, &b.pol1, d)) } else { e() },
    }
}

/// Largest |n| over all tensors used.
fn n_bound(ts: &[&StreamTensors]) -> i32 {
    let mut nm = 0;
    for s in ts {
        for x in &s.xpm {
            nm = nm.max(x.c.n_max()).max(x.c_tilde.n_max()).max(x.d.n_max());
        }
        if let Some((a, b)) = &s.spm {
            nm = nm.max(a.n_max()).max(b.n_max());
        }
    }
    nm
}

/// Adds the contribution of interferer block `b` with tensors (C, C̃, D),
/// for the polarization whose COI symbol is `same` in the accumulator.
/// `swap` selects the second receiving polarization (b ↔ b̄).
fn add_xpm(acc: &mut Accum, n_max: i32, ts: [&NliTensor; 3], b: &SymbolBlock, swap: bool) {
    let m = b.len();
    let [c, ct, dd] = ts;
    let smax = c.grid.sigma_max.max(ct.grid.sigma_max).max(dd.grid.sigma_max);
    let nm = c.grid.n_max.max(ct.grid.n_max).max(dd.grid.n_max);
    for d in -(smax + nm)..=(smax + nm) {
        let pr = products(b, d as i64, true);
        let (p, pb, q) = if swap { (&pr.pb, &pr.p, &pr.qb) } else { (&pr.p, &pr.pb, &pr.q) };
        for n in -nm..=nm {
            let sigma = n + d;
            if sigma.abs() > smax {
                continue;
            }
            let gc = filter_spectrum(c, n, sigma, m);
            let gct = if std::sync::Arc::ptr_eq(&c.grid, &ct.grid) {
                gc.as_ref().map(|g| g.iter().map(|z| z * (ct.scale / c.scale)).collect::<Vec<_>>())
            } else {
                filter_spectrum(ct, n, sigma, m)
            };
            let gd = if std::sync::Arc::ptr_eq(&c.grid, &dd.grid) {
                gc.as_ref().map(|g| g.iter().map(|z| z * (dd.scale / c.scale)).collect::<Vec<_>>())
            } else {
                filter_spectrum(dd, n, sigma, m)
            };
            let idx = (n + n_max) as usize;
            if n == 0 {
                if let Some(g) = &gc {
                    axpy(&mut acc.theta, g, p);
                }
                if let Some(g) = &gct {
                    axpy(&mut acc.theta, g, pb);
                }
                if let Some(g) = &gd {
                    axpy(&mut acc.psi, g, q);
                }
            } else {
                if let Some(g) = &gc {
                    axpy(&mut acc.same[idx], g, p);
                }
                if let Some(g) = &gct {
                    axpy(&mut acc.same[idx], g, pb);
                }
                if let Some(g) = &gd {
                    axpy(&mut acc.other[idx], g, q);
                }
            }
        }
    }
}

/// SPM terms: S with the same polarization, S̃ with the other one; the
/// n = 0 part goes to θ.
fn add_spm(acc: &mut Accum, n_max: i32, s: &NliTensor, st: &NliTensor, x: &SymbolBlock, swap: bool) {
    let m = x.len();
    let smax = s.grid.sigma_max.max(st.grid.sigma_max);
    let nm = s.grid.n_max.max(st.grid.n_max);
    for d in -(smax + nm)..=(smax + nm) {
        let pr = products(x, d as i64, false);
        let (p, pb) = if swap { (&pr.pb, &pr.p) } else { (&pr.p, &pr.pb) };
        for n in -nm..=nm {
            let sigma = n + d;
            if sigma.abs() > smax {
                continue;
            }
            let target = if n == 0 { &mut acc.theta } else { &mut acc.same[(n + n_max) as usize] };
            if let Some(g) = filter_spectrum(s, n, sigma, m) {
                axpy(target, &g, p);
            }
            if let Some(g) = filter_spectrum(st, n, sigma, m) {
                axpy(target, &g, pb);
            }
        }
    }
}

/// Converts accumulated spectra to (θ, ψ, v) for one polarization.
fn finish(acc: Accum, n_max: i32, same: &[C64], other: &[C64]) -> (Vec<f64>, Vec<C64>, Vec<C64>) {
    let m = same.len();
    let mut th = acc.theta;
    fft::inverse_normalized(&mut th);
    let mut ps = acc.psi;
    fft::inverse_normalized(&mut ps);
    let mut v = vec![C64::new(0.0, 0.0); m];
    let j = C64::new(0.0, 1.0);
    for (i, (mut s, mut o)) in acc.same.into_iter().zip(acc.other).enumerate() {
        let n = i as i64 - n_max as i64;
        if n == 0 {
            continue;
        }
        let s_zero = s.iter().all(|z| z.re == 0.0 && z.im == 0.0);
        let o_zero = o.iter().all(|z| z.re == 0.0 && z.im == 0.0);
        if !s_zero {
            fft::inverse_normalized(&mut s);
        }
        if !o_zero {
            fft::inverse_normalized(&mut o);
        }
        for mm in 0..m {
            let idx = (mm as i64 + n).rem_euclid(m as i64) as usize;
            let mut t = C64::new(0.0, 0.0);
            if !s_zero {
                t += same[idx] * s[mm];
            }
            if !o_zero {
                t += other[idx] * o[mm];
            }
            v[mm] += j * t;
        }
    }
    (th.iter().map(|z| z.re).collect(), ps, v)
}

/// θ/ψ/v decomposition of the NLI on COI stream `coi`.
/// `blocks[i]` holds the symbols of plan stream `i`; all blocks are cyclic
/// with a common length.
pub fn rp_decompose(blocks: &[SymbolBlock], coi: usize, tensors: &TensorSet, mode: ReceiverMode) -> Result<NliDecomposition> {
    let x = blocks
        .get(coi)
        .ok_or_else(|| Error::InvalidInput(format!("COI stream {coi} has no symbol block")))?;
    let m = x.len();
    if m == 0 {
        return Err(Error::InvalidInput("empty COI block".into()));
    }
    for b in blocks {
        if b.len() != m || b.pol2.len() != m {
            return Err(Error::LengthMismatch {
                expected: m,
                got: b.len(),
            });
        }
    }
    let t1 = tensors
        .stream(0, coi)
        .ok_or_else(|| Error::InvalidInput(format!("no tensors for COI stream {coi}")))?;
    let t2 = tensors
        .stream(1, coi)
        .ok_or_else(|| Error::InvalidInput(format!("no tensors for COI stream {coi}")))?;
    let n_max = n_bound(&[t1, t2]);
    let mut a1 = Accum::new(n_max, m);
    let mut a2 = Accum::new(n_max, m);
    for (k, xp) in t1.xpm.iter().enumerate() {
        let b = blocks.get(xp.stream).ok_or_else(|| Error::InvalidInput(format!("missing block for stream {}", xp.stream)))?;
        if b.pol1.iter().chain(&b.pol2).all(|z| z.re == 0.0 && z.im == 0.0) {
            continue;
        }
        add_xpm(&mut a1, n_max, [&xp.c, &xp.c_tilde, &xp.d], b, false);
        let x2 = &t2.xpm[k];
        add_xpm(&mut a2, n_max, [&x2.c, &x2.c_tilde, &x2.d], b, true);
    }
    if mode == ReceiverMode::DispComp {
        let (s, st) = t1
            .spm
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("dispersion-compensation mode needs SPM tensors".into()))?;
        add_spm(&mut a1, n_max, s, st, x, false);
        let (s2, st2) = t2.spm.as_ref().map(|(a, b)| (a, b)).unwrap_or((s, st));
        add_spm(&mut a2, n_max, s2, st2, x, true);
    }
    let (theta, psi, v) = finish(a1, n_max, &x.pol1, &x.pol2);
    let (theta_bar, psi_bar, v_bar) = finish(a2, n_max, &x.pol2, &x.pol1);
    Ok(NliDecomposition {
        theta,
        theta_bar,
        psi,
        psi_bar,
        v,
        v_bar,
    })
}

/// `exp(jH)` for Hermitian `H = [[a, c], [c*, d]]`, row-major.
pub fn expm_hermitian(a: f64, d: f64, c: C64) -> [[C64; 2]; 2] {
    let mean = 0.5 * (a + d);
    let half = 0.5 * (a - d);
    let rho = (half * half + c.norm_sqr()).sqrt();
    let (sin_c, cos) = if rho < 1e-8 {
        (1.0 - rho * rho / 6.0, 1.0 - rho * rho / 2.0)
    } else {
        (rho.sin() / rho, rho.cos())
    };
    let ph = C64::from_polar(1.0, mean);
    let j = C64::new(0.0, 1.0);
    [
        [ph * (cos + j * sin_c * half), ph * j * sin_c * c],
        [ph * j * sin_c * c.conj(), ph * (cos - j * sin_c * half)],
    ]
}

/// `y_m = M_m x_m + w_m + v_m`, with `M_m` the unitary rotation built
/// from θ, θ̄, ψ and AWGN of variance `link.n_ase_psd` per polarization.
pub fn rp_channel(
    blocks: &[SymbolBlock],
    coi: usize,
    tensors: &TensorSet,
    link: &LinkConfig,
    mode: ReceiverMode,
    rng: &mut rng::SimRng,
) -> Result<(SymbolBlock, NliDecomposition)> {
    let dec = rp_decompose(blocks, coi, tensors, mode)?;
    let x = &blocks[coi];
    let y = apply_decomposition(x, &dec, link.n_ase_psd, rng);
    Ok((y, dec))
}

/// Applies a decomposition to `x` and adds AWGN of variance `n_ase`.
pub fn apply_decomposition(x: &SymbolBlock, dec: &NliDecomposition, n_ase: f64, rng: &mut rng::SimRng) -> SymbolBlock {
    let m = x.len();
    let mut y1 = Vec::with_capacity(m);
    let mut y2 = Vec::with_capacity(m);
    for i in 0..m {
        let mm = expm_hermitian(dec.theta[i], dec.theta_bar[i], dec.psi[i]);
        let (a, b) = (x.pol1[i], x.pol2[i]);
        let mut u = mm[0][0] * a + mm[0][1] * b + dec.v[i];
        let mut w = mm[1][0] * a + mm[1][1] * b + dec.v_bar[i];
        if n_ase > 0.0 {
            u += rng::cgauss(rng, n_ase);
            w += rng::cgauss(rng, n_ase);
        }
        y1.push(u);
        y2.push(w);
    }
    SymbolBlock {
        pol1: y1,
        pol2: y2,
        energy: x.energy,
        seed: x.seed,
    }
}

/// Multiplies polarization p by `exp(−j⟨Θ⟩_p)`.
pub fn remove_mean_phase(block: &SymbolBlock, theta_mean: f64, theta_bar_mean: f64) -> SymbolBlock {
    let r1 = C64::from_polar(1.0, -theta_mean);
    let r2 = C64::from_polar(1.0, -theta_bar_mean);
    SymbolBlock {
        pol1: block.pol1.iter().map(|z| z * r1).collect(),
        pol2: block.pol2.iter().map(|z| z * r2).collect(),
        energy: block.energy,
        seed: block.seed,
    }
}

/// CSV rows `m,re1,im1,re2,im2`.
pub fn write_block_csv(b: &SymbolBlock, out: &mut dyn std::io::Write) -> Result<()> {
    writeln!(out, "m,re1,im1,re2,im2")?;
    for (i, (p, q)) in b.pol1.iter().zip(&b.pol2).enumerate() {
        writeln!(out, "{i},{:e},{:e},{:e},{:e}", p.re, p.im, q.re, q.im)?;
    }
    Ok(())
}
