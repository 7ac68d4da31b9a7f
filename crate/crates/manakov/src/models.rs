//! Hidden rotation processes for the mismatched channel models: polarization
//! drift (Wiener phase and a random walk of isotropic rotations on the
//! Poincaré sphere) and the Markov rotation model built from AR processes.

use serde::{Deserialize, Serialize};

use crate::rng::{cgauss, gauss, SimRng};
use crate::surrogate::expm_hermitian;
use crate::{Error, Result, C64};

/// 2×2 complex matrix, row-major.
pub type Mat2 = [[C64; 2]; 2];

pub const IDENTITY: Mat2 = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn mat_apply(a: &Mat2, x: [C64; 2]) -> [C64; 2] {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

pub fn mat_scale(a: &Mat2, s: C64) -> Mat2 {
    [[a[0][0] * s, a[0][1] * s], [a[1][0] * s, a[1][1] * s]]
}

/// max |(A^H A − I)_{ij}|.
pub fn unitarity_error(a: &Mat2) -> f64 {
    let mut e: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let p = a[0][i].conj() * a[0][j] + a[1][i].conj() * a[1][j];
            let t = if i == j { 1.0 } else { 0.0 };
            e = e.max((p - t).norm());
        }
    }
    e
}

/// Nearest unitary matrix, `A (A^H A)^{-1/2}`.
pub fn nearest_unitary(a: &Mat2) -> Mat2 {
    // P = A^H A = [[p, c], [c*, q]]
    let p = a[0][0].norm_sqr() + a[1][0].norm_sqr();
    let q = a[0][1].norm_sqr() + a[1][1].norm_sqr();
    let c = a[0][0].conj() * a[0][1] + a[1][0].conj() * a[1][1];
    let mean = 0.5 * (p + q);
    let rho = ((0.5 * (p - q)).powi(2) + c.norm_sqr()).sqrt();
    let (lp, lm) = (mean + rho, mean - rho);
    let f = |l: f64| 1.0 / l.sqrt();
    // f(P) = α I + β P
    let (alpha, beta) = if rho < 1e-14 * mean {
        (f(mean), 0.0)
    } else {
        let beta = (f(lp) - f(lm)) / (lp - lm);
        (f(lp) - beta * lp, beta)
    };
    let s = [
        [C64::new(alpha + beta * p, 0.0), c * beta],
        [c.conj() * beta, C64::new(alpha + beta * q, 0.0)],
    ];
    mat_mul(a, &s)
}

/// exp[j(α₁σ₁ + α₂σ₂ + α₃σ₃)] with α_i i.i.d. N(0, σ_A²).
pub fn irrps_sample(sigma_a: f64, rng: &mut SimRng) -> Mat2 {
    let a1 = sigma_a * gauss(rng);
    let a2 = sigma_a * gauss(rng);
    let a3 = sigma_a * gauss(rng);
    // σ₁α₁ + σ₂α₂ + σ₃α₃ = [[α₃, α₁ − jα₂], [α₁ + jα₂, −α₃]]
    expm_hermitian(a3, -a3, C64::new(a1, -a2))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdParams {
    /// Standard deviation of the Wiener phase increment, rad.
    pub sigma_delta: f64,
    /// Standard deviation of each IRRPS angle, rad.
    pub sigma_a: f64,
}

impl PdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_delta >= 0.0 && self.sigma_a >= 0.0) || !self.sigma_delta.is_finite() || !self.sigma_a.is_finite() {
            return Err(Error::InvalidInput(format!("PD parameters must be finite and non-negative, got {self:?}")));
        }
        Ok(())
    }
}

const RENORM_EVERY: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct PdState {
    pub theta: f64,
    pub j: Mat2,
    pub steps: u64,
}

impl Default for PdState {
    fn default() -> Self {
        PdState {
            theta: 0.0,
            j: IDENTITY,
            steps: 0,
        }
    }
}

/// One step of the PD model; returns the rotation e^{jθ_m} J_m.
pub fn pd_step(state: &mut PdState, p: &PdParams, rng: &mut SimRng) -> Mat2 {
    state.theta += p.sigma_delta * gauss(rng);
    if p.sigma_a > 0.0 {
        state.j = mat_mul(&irrps_sample(p.sigma_a, rng), &state.j);
    }
    state.steps += 1;
    if state.steps % RENORM_EVERY == 0 {
        state.j = nearest_unitary(&state.j);
    }
    mat_scale(&state.j, C64::from_polar(1.0, state.theta))
}

/// Cholesky factor of the Toeplitz matrix with first column `r`.
fn toeplitz_cholesky(r: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = r.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = r[i - j];
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(Error::NotPositiveDefinite { pivot: i, value: s });
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Ok(l)
}

fn chol_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= l[i][k] * y[k];
        }
        y[i] /= l[i][i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= l[k][i] * y[k];
        }
        y[i] /= l[i][i];
    }
    y
}

/// AR(μ) predictor from an autocovariance `r[0..=μ]`: returns the taps
/// `g` and the innovation standard deviation σ_μ.
pub fn ar_fit(r: &[f64], mu: usize) -> Result<(Vec<f64>, f64)> {
    if r.len() < mu + 1 {
        return Err(Error::InvalidInput(format!("AR({mu}) fit needs {} covariance lags, got {}", mu + 1, r.len())));
    }
    if r[0] == 0.0 && r[1..=mu].iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; mu], 0.0));
    }
    // the full (μ+1)-matrix must be positive definite
    toeplitz_cholesky(&r[..=mu])?;
    if mu == 0 {
        return Ok((Vec::new(), r[0].sqrt()));
    }
    let l = toeplitz_cholesky(&r[..mu])?;
    let g = chol_solve(&l, &r[1..=mu]);
    let s2 = r[0] - g.iter().zip(&r[1..=mu]).map(|(a, b)| a * b).sum::<f64>();
    Ok((g, s2.max(0.0).sqrt()))
}

/// True when the AR recursion with taps `g` has all poles inside the
/// unit circle (impulse response decays).
pub fn ar_is_stable(g: &[f64]) -> bool {
    if g.is_empty() {
        return true;
    }
    let mu = g.len();
    let mut h = vec![0.0; mu];
    h[0] = 1.0;
    let window = 64 * mu + 4096;
    let mut peak_late: f64 = 0.0;
    let mut peak_early: f64 = 1.0;
    for t in 0..2 * window {
        let next: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
        h.rotate_right(1);
        h[0] = next;
        if !next.is_finite() {
            return false;
        }
        if t < window {
            peak_early = peak_early.max(next.abs());
        } else {
            peak_late = peak_late.max(next.abs());
        }
    }
    peak_late < 0.5 * peak_early
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrParams {
    pub mu: usize,
    pub g_phi: Vec<f64>,
    pub sigma_phi: f64,
    pub g_psi: Vec<f64>,
    pub sigma_psi: f64,
    pub s_phi: f64,
    pub s_psi: f64,
    /// Stationary autocovariances used for the fit (lags 0..=μ).
    pub r_phi: Vec<f64>,
    pub r_psi: Vec<f64>,
}

impl MrParams {
    /// Fits φ and ψ to `s_φ·r_Θ/5` and `s_ψ·r_Θ/5`.
    pub fn from_theta(r_theta: &[f64], mu: usize, s_phi: f64, s_psi: f64) -> Result<Self> {
        if r_theta.len() < mu + 1 {
            return Err(Error::InvalidInput(format!("need r_theta up to lag {mu}")));
        }
        let r_phi: Vec<f64> = r_theta[..=mu].iter().map(|v| v * s_phi / 5.0).collect();
        let r_psi: Vec<f64> = r_theta[..=mu].iter().map(|v| v * s_psi / 5.0).collect();
        Self::fit(r_phi, r_psi, s_phi, s_psi)
    }

    pub fn fit(r_phi: Vec<f64>, r_psi: Vec<f64>, s_phi: f64, s_psi: f64) -> Result<Self> {
        let mu = r_phi.len().saturating_sub(1);
        let (g_phi, sigma_phi) = ar_fit(&r_phi, mu)?;
        let (g_psi, sigma_psi) = ar_fit(&r_psi, mu)?;
        Ok(MrParams {
            mu,
            g_phi,
            sigma_phi,
            g_psi,
            sigma_psi,
            s_phi,
            s_psi,
            r_phi,
            r_psi,
        })
    }

    /// All processes identically zero.
    pub fn silent(mu: usize) -> Self {
        MrParams {
            mu,
            g_phi: vec![0.0; mu],
            sigma_phi: 0.0,
            g_psi: vec![0.0; mu],
            sigma_psi: 0.0,
            s_phi: 0.0,
            s_psi: 0.0,
            r_phi: vec![0.0; mu + 1],
            r_psi: vec![0.0; mu + 1],
        }
    }

    pub fn is_stable(&self) -> bool {
        ar_is_stable(&self.g_phi) && ar_is_stable(&self.g_psi)
    }
}

/// Histories of φ, φ̄, ψ, newest first.
#[derive(Clone, Debug, PartialEq)]
pub struct MrState {
    pub phi: Vec<f64>,
    pub phi_bar: Vec<f64>,
    pub psi: Vec<C64>,
}

impl MrState {
    pub fn zeros(mu: usize) -> Self {
        MrState {
            phi: vec![0.0; mu],
            phi_bar: vec![0.0; mu],
            psi: vec![C64::new(0.0, 0.0); mu],
        }
    }

    /// Draws the histories from the stationary distribution.
    pub fn stationary(p: &MrParams, rng: &mut SimRng) -> Self {
        let mu = p.mu;
        let mut s = Self::zeros(mu);
        if mu == 0 {
            return s;
        }
        let draw = |r: &[f64], rng: &mut SimRng, complex: bool| -> Vec<C64> {
            match toeplitz_cholesky(&r[..mu]) {
                Ok(l) => {
                    let z: Vec<C64> = (0..mu)
                        .map(|_| if complex { cgauss(rng, 1.0) } else { C64::new(gauss(rng), 0.0) })
                        .collect();
                    (0..mu).map(|i| (0..=i).map(|k| z[k] * l[i][k]).sum()).collect()
                }
                Err(_) => vec![C64::new(0.0, 0.0); mu],
            }
        };
        s.phi = draw(&p.r_phi, rng, false).iter().map(|z| z.re).collect();
        s.phi_bar = draw(&p.r_phi, rng, false).iter().map(|z| z.re).collect();
        s.psi = draw(&p.r_psi, rng, true);
        s
    }
}

fn push<T: Copy>(h: &mut [T], v: T) {
    if !h.is_empty() {
        h.rotate_right(1);
        h[0] = v;
    }
}

/// Advances φ, φ̄, ψ by one AR step; returns (φ_m, φ̄_m, ψ_m).
pub fn mr_advance(state: &mut MrState, p: &MrParams, rng: &mut SimRng) -> (f64, f64, C64) {
    let phi = p.g_phi.iter().zip(&state.phi).map(|(g, v)| g * v).sum::<f64>() + p.sigma_phi * gauss(rng);
    let phib = p.g_phi.iter().zip(&state.phi_bar).map(|(g, v)| g * v).sum::<f64>() + p.sigma_phi * gauss(rng);
    let psi = p.g_psi.iter().zip(&state.psi).map(|(g, v)| v * *g).sum::<C64>() + cgauss(rng, p.sigma_psi * p.sigma_psi);
    push(&mut state.phi, phi);
    push(&mut state.phi_bar, phib);
    push(&mut state.psi, psi);
    (phi, phib, psi)
}

/// Rotation exp[j[[2φ+φ̄, ψ], [ψ*, φ+2φ̄]]].
pub fn mr_rotation(phi: f64, phib: f64, psi: C64) -> Mat2 {
    expm_hermitian(2.0 * phi + phib, phi + 2.0 * phib, psi)
}

/// One step of the MR model; returns M_m.
pub fn mr_step(state: &mut MrState, p: &MrParams, rng: &mut SimRng) -> Mat2 {
    let (a, b, c) = mr_advance(state, p, rng);
    mr_rotation(a, b, c)
}

/// Real per-polarization FIR taps with unit norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhitenFilter {
    pub h: Vec<f64>,
    pub h_bar: Vec<f64>,
}

impl WhitenFilter {
    pub fn identity() -> Self {
        WhitenFilter {
            h: vec![1.0],
            h_bar: vec![1.0],
        }
    }

    pub fn new(h: Vec<f64>, h_bar: Vec<f64>) -> Result<Self> {
        let f = WhitenFilter { h, h_bar };
        f.validate()?;
        Ok(f)
    }

    /// `normalize([h₂, 1, h₂])` on both polarizations.
    pub fn symmetric3(h2: f64) -> Self {
        let n = (1.0 + 2.0 * h2 * h2).sqrt();
        let h = vec![h2 / n, 1.0 / n, h2 / n];
        WhitenFilter { h: h.clone(), h_bar: h }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.is_empty() || self.h.len() != self.h_bar.len() {
            return Err(Error::InvalidInput("whitening taps must be non-empty and equal length".into()));
        }
        for t in [&self.h, &self.h_bar] {
            let n: f64 = t.iter().map(|v| v * v).sum();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("whitening taps must have unit norm, got {}", n.sqrt())));
            }
        }
        Ok(())
    }

    pub fn taps(&self, pol: usize) -> &[f64] {
        if pol == 0 {
            &self.h
        } else {
            &self.h_bar
        }
    }
}

/// a_m = Σ_ℓ h_ℓ y_{m−ℓ}, valid part only (length M − L + 1).
pub fn whiten_seq(y: &[C64], h: &[f64]) -> Vec<C64> {
    let l = h.len();
    if y.len() < l {
        return Vec::new();
    }
    (l - 1..y.len())
        .map(|m| h.iter().enumerate().map(|(k, &t)| y[m - k] * t).sum())
        .collect()
}

pub fn whiten(y: &crate::signal::SymbolBlock, f: &WhitenFilter) -> crate::signal::SymbolBlock {
    crate::signal::SymbolBlock {
        pol1: whiten_seq(&y.pol1, &f.h),
        pol2: whiten_seq(&y.pol2, &f.h_bar),
        energy: y.energy,
        seed: y.seed,
    }
}
