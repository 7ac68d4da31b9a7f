//! Four-pulse interaction coefficients A_{n,k,k'}(t1,t2,t3) and the SPM
//! and XPM tensors built from them.
//!
//! With sinc pulses and a constant gain profile the z-integral is done in
//! closed form and the t-integral becomes a Fourier integral over the
//! diamond |x| + |y| ≤ 1 in normalized frequency (see [`quad`]).
//! Tensors are stored densely over the box |n| ≤ n_max, |σ| ≤ σ_max,
//! a ∈ [a_lo, a_hi], where σ = n + k − k' and a = n − k'. The a-range
//! covers the dispersive memory including walk-off.

pub mod cache;
pub mod quad;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::signal::{LinkConfig, WdmPlan};
use crate::{Error, Result, C64};
use quad::{GaussLegendre, Lattice, Reduced, TriangleRule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSettings {
    /// Gauss–Legendre nodes per panel.
    pub nodes_per_panel: usize,
    /// Maximum integrand phase change across one panel, rad.
    pub panel_phase: f64,
    pub n_max: i32,
    pub sigma_max: i32,
    /// Extra a-indices on each side of the stationary range.
    pub a_margin: i32,
    /// Entries below this fraction of the tensor peak are set to zero.
    pub drop_below: f64,
    /// Relative (to the tensor peak) error allowed on the refinement check.
    pub tol: f64,
    /// Entries re-evaluated with a refined rule after each tensor build.
    pub check_samples: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        QuadratureSettings {
            nodes_per_panel: 20,
            panel_phase: 10.0 * PI,
            n_max: 16,
            sigma_max: 8,
            a_margin: 24,
            drop_below: 1e-4,
            tol: 1e-6,
            check_samples: 2,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_panel < 2 || !(self.panel_phase > 0.0) {
            return Err(Error::Config("quadrature needs >= 2 nodes and a positive panel phase".into()));
        }
        if self.n_max < 0 || self.sigma_max < 0 || self.a_margin < 0 {
            return Err(Error::Config("tensor bounds must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.drop_below) {
            return Err(Error::Config("drop_below must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorKind {
    /// Bare A with the given delays.
    A,
    S,
    STilde,
    C,
    CTilde,
    D,
}

impl TensorKind {
    pub fn code(self) -> u8 {
        match self {
            TensorKind::A => 0,
            TensorKind::S => 1,
            TensorKind::STilde => 2,
            TensorKind::C => 3,
            TensorKind::CTilde => 4,
            TensorKind::D => 5,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => TensorKind::A,
            1 => TensorKind::S,
            2 => TensorKind::STilde,
            3 => TensorKind::C,
            4 => TensorKind::CTilde,
            5 => TensorKind::D,
            _ => return None,
        })
    }
}

/// Dense coefficient values over the (n, σ, a) box.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub n_max: i32,
    pub sigma_max: i32,
    pub a_lo: i32,
    pub a_hi: i32,
    data: Vec<C64>,
}

impl Grid {
    pub fn zeros(n_max: i32, sigma_max: i32, a_lo: i32, a_hi: i32) -> Self {
        let len = (2 * n_max + 1) as usize * (2 * sigma_max + 1) as usize * (a_hi - a_lo + 1).max(0) as usize;
        Grid {
            n_max,
            sigma_max,
            a_lo,
            a_hi,
            data: vec![C64::new(0.0, 0.0); len],
        }
    }

    pub fn na(&self) -> usize {
        (self.a_hi - self.a_lo + 1).max(0) as usize
    }

    fn line_start(&self, n: i32, sigma: i32) -> usize {
        ((n + self.n_max) as usize * (2 * self.sigma_max + 1) as usize + (sigma + self.sigma_max) as usize) * self.na()
    }

    /// Values over a ∈ [a_lo, a_hi] at fixed (n, σ).
    pub fn line(&self, n: i32, sigma: i32) -> Option<&[C64]> {
        if n.abs() > self.n_max || sigma.abs() > self.sigma_max {
            return None;
        }
        let s = self.line_start(n, sigma);
        Some(&self.data[s..s + self.na()])
    }

    pub fn line_mut(&mut self, n: i32, sigma: i32) -> &mut [C64] {
        let s = self.line_start(n, sigma);
        let na = self.na();
        &mut self.data[s..s + na]
    }

    pub fn get_nsa(&self, n: i32, sigma: i32, a: i32) -> C64 {
        if a < self.a_lo || a > self.a_hi {
            return C64::new(0.0, 0.0);
        }
        match self.line(n, sigma) {
            Some(l) => l[(a - self.a_lo) as usize],
            None => C64::new(0.0, 0.0),
        }
    }

    pub fn get(&self, n: i32, k: i32, kp: i32) -> C64 {
        self.get_nsa(n, n + k - kp, n - kp)
    }

    /// Keeps, for each n, only entries with both k and k' in
    /// `[n − a_hi, n − a_lo]`, so the retained set is closed under k ↔ k'.
    pub fn square_window(&mut self) {
        let (lo, hi) = (self.a_lo, self.a_hi);
        for n in -self.n_max..=self.n_max {
            for s in -self.sigma_max..=self.sigma_max {
                let line = self.line_mut(n, s);
                for (i, v) in line.iter_mut().enumerate() {
                    let k = s - (lo + i as i32);
                    if k < n - hi || k > n - lo {
                        *v = C64::new(0.0, 0.0);
                    }
                }
            }
        }
    }

    pub fn peak(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Non-zero entries as (n, k, k', value).
    pub fn entries(&self) -> impl Iterator<Item = (i32, i32, i32, C64)> + '_ {
        let ns = (2 * self.sigma_max + 1) as usize;
        let na = self.na();
        self.data.iter().enumerate().filter(|(_, v)| v.re != 0.0 || v.im != 0.0).map(move |(i, &v)| {
            let a = self.a_lo + (i % na) as i32;
            let sigma = ((i / na) % ns) as i32 - self.sigma_max;
            let n = (i / (na * ns)) as i32 - self.n_max;
            (n, sigma - a, n - a, v)
        })
    }

    fn drop_small(&mut self, frac: f64) {
        let cut = frac * self.peak();
        for v in &mut self.data {
            if v.norm() < cut {
                *v = C64::new(0.0, 0.0);
            }
        }
    }
}

/// One coefficient tensor: a shared grid times a real scale factor.
#[derive(Clone, Debug, PartialEq)]
pub struct NliTensor {
    pub kind: TensorKind,
    /// Interfering WDM channel (None for SPM).
    pub channel: Option<i32>,
    pub coi_sub: usize,
    /// Subcarrier of the interfering stream.
    pub sub: usize,
    pub scale: f64,
    pub grid: Arc<Grid>,
    pub provenance_key: [u8; 32],
}

impl NliTensor {
    pub fn get(&self, n: i32, k: i32, kp: i32) -> C64 {
        self.grid.get(n, k, kp) * self.scale
    }

    pub fn entries(&self) -> impl Iterator<Item = (i32, i32, i32, C64)> + '_ {
        self.grid.entries().map(move |(n, k, kp, v)| (n, k, kp, v * self.scale))
    }

    pub fn peak(&self) -> f64 {
        self.grid.peak() * self.scale.abs()
    }

    pub fn n_max(&self) -> i32 {
        self.grid.n_max
    }

    /// Same grid with a different kind and scale.
    pub fn view(&self, kind: TensorKind, scale: f64, key: [u8; 32]) -> Self {
        NliTensor {
            kind,
            scale,
            provenance_key: key,
            ..self.clone()
        }
    }

    pub fn provenance_hex(&self) -> String {
        hex(&self.provenance_key)
    }
}

pub fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

/// Everything that determines a coefficient grid, in normalized units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    /// γ·L/T, 1/J.
    pub pref: f64,
    pub red: Reduced,
    /// Delays in units of T.
    pub t1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Geometry {
    /// `omega_rel`: interferer center minus COI center, rad/s; delays in s,
    /// relative to the COI reference.
    pub fn new(link: &LinkConfig, t_sym: f64, omega_rel: f64, t1: f64, t2: f64, t3: f64) -> Self {
        let dl = link.beta2_si() * link.length_km / (t_sym * t_sym);
        Geometry {
            pref: link.gamma_nl * link.length_km / t_sym,
            red: Reduced {
                phi: 4.0 * PI * PI * dl,
                yc: omega_rel * t_sym / (2.0 * PI),
            },
            t1: t1 / t_sym,
            d2: t2 / t_sym,
            d3: t3 / t_sym,
        }
    }

    fn key_text(&self) -> String {
        format!(
            "pref={:?};phi={:?};yc={:?};t1={:?};d2={:?};d3={:?}",
            self.pref, self.red.phi, self.red.yc, self.t1, self.d2, self.d3
        )
    }

    /// Default a-range: the hull of 0 and (Φ/2π)(±1 − y_c), plus margin.
    pub fn a_bounds(&self, quad: &QuadratureSettings) -> (i32, i32) {
        let f = self.red.phi / (2.0 * PI);
        let e1 = f * (-1.0 - self.red.yc);
        let e2 = f * (1.0 - self.red.yc);
        let lo = e1.min(e2).min(0.0) + (self.t1 - self.d3).min(0.0);
        let hi = e1.max(e2).max(0.0) + (self.t1 - self.d3).max(0.0);
        (lo.floor() as i32 - quad.a_margin, hi.ceil() as i32 + quad.a_margin)
    }
}

/// A_{n,k,k'}(t1, t2, t3) for one index triple, with an error estimate from
/// a refined rule. Delays are in seconds; walk-off from `omega_rel` is added
/// inside the integral.
#[allow(clippy::too_many_arguments)]
pub fn compute_a(
    n: i32,
    k: i32,
    kp: i32,
    t1: f64,
    t2: f64,
    t3: f64,
    link: &LinkConfig,
    t_sym: f64,
    omega_rel: f64,
    quad: &QuadratureSettings,
) -> Result<C64> {
    quad.validate()?;
    let g = Geometry::new(link, t_sym, omega_rel, t1, t2, t3);
    let (v, est) = entry_with_estimate(&g, n, k, kp, quad);
    let scale = v.norm().max(1e-6 * g.pref.abs());
    if est > quad.tol * scale {
        return Err(Error::Quadrature {
            estimate: est / scale,
            tol: quad.tol,
        });
    }
    Ok(v)
}

fn entry_value(g: &Geometry, n: i32, k: i32, kp: i32, gl: &GaussLegendre, panel_phase: f64) -> C64 {
    if g.pref == 0.0 {
        return C64::new(0.0, 0.0);
    }
    let a = (n - kp) as f64 + g.t1 - g.d3;
    let b = (k - kp) as f64 + g.d2 - g.d3;
    let s = (n + k - kp) as f64 + g.t1 + g.d2 - g.d3;
    quad::diamond_integral(gl, panel_phase, g.red, a, b, s) * g.pref
}

/// Higher-order rule on the same panels, used for error estimates.
fn refined(quad: &QuadratureSettings) -> GaussLegendre {
    GaussLegendre::new(quad.nodes_per_panel + 8)
}

fn entry_with_estimate(g: &Geometry, n: i32, k: i32, kp: i32, quad: &QuadratureSettings) -> (C64, f64) {
    let gl = GaussLegendre::new(quad.nodes_per_panel);
    let coarse = entry_value(g, n, k, kp, &gl, quad.panel_phase);
    let fine = entry_value(g, n, k, kp, &refined(quad), quad.panel_phase);
    (fine, (fine - coarse).norm())
}

/// Builds the dense grid of A over the default box.
pub fn build_grid(g: &Geometry, quad: &QuadratureSettings) -> Result<Grid> {
    quad.validate()?;
    let (a_lo, a_hi) = g.a_bounds(quad);
    build_grid_bounds(g, quad, quad.n_max, quad.sigma_max, a_lo, a_hi)
}

pub fn build_grid_bounds(
    g: &Geometry,
    quad: &QuadratureSettings,
    n_max: i32,
    s_max: i32,
    a_lo: i32,
    a_hi: i32,
) -> Result<Grid> {
    let mut grid = Grid::zeros(n_max, s_max, a_lo, a_hi);
    if g.pref == 0.0 || grid.na() == 0 {
        return Ok(grid);
    }
    let gl = GaussLegendre::new(quad.nodes_per_panel);
    let os = g.t1 + g.d2 - g.d3;
    let oa = [g.t1 - g.d3, -g.d2];
    let ob = [g.d2 - g.d3, -g.t1];
    let a_start = (a_lo - s_max) as i64;
    let a_len = (a_hi - a_lo + 2 * s_max + 1) as usize;
    let b_start = -(s_max + n_max) as i64;
    let b_len = (2 * (s_max + n_max) + 1) as usize;
    // lattice index for "shifted by σ" (true) or not (false)
    let ai = |shift: bool| if shift && oa[1] != oa[0] { 1 } else { 0 };
    let bi = |shift: bool| if shift && ob[1] != ob[0] { 1 } else { 0 };
    let alat: Vec<Lattice> = oa
        .iter()
        .map(|&o| Lattice {
            offset: o,
            start: a_start,
            len: a_len,
        })
        .collect();
    let blat: Vec<Lattice> = ob
        .iter()
        .map(|&o| Lattice {
            offset: o,
            start: b_start,
            len: b_len,
        })
        .collect();
    let amax = alat.iter().map(|l| (l.offset + l.start as f64).abs().max((l.offset + (l.start + l.len as i64) as f64).abs())).fold(0.0, f64::max);
    let bmax = blat.iter().map(|l| (l.offset + l.start as f64).abs().max((l.offset + (l.start + l.len as i64) as f64).abs())).fold(0.0, f64::max);
    let rule = TriangleRule::new(&gl, quad.panel_phase, g.red, amax, bmax + 1.0);
    let quadrants = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];

    // combos used by the two plane-wave terms in each quadrant
    let combos_of = |sx: f64, sy: f64| -> [(usize, usize); 2] {
        [(ai(sx > 0.0), bi(sy > 0.0)), (ai(sx < 0.0), bi(sy < 0.0))]
    };
    let tables: Vec<(Vec<(usize, usize)>, Vec<Vec<C64>>)> = quadrants
        .par_iter()
        .map(|&(sx, sy)| {
            let mut combos: Vec<(usize, usize)> = combos_of(sx, sy).to_vec();
            combos.dedup();
            let t = quad::quadrant_transform(&rule, sx, sy, g.red, &alat, &blat, &combos, None);
            (combos, t)
        })
        .collect();

    // σ values too close to zero for the 1/σ form use the weighted transform
    let small: Vec<i32> = (-s_max..=s_max).filter(|&s| (s as f64 + os).abs() < 0.5).collect();
    let small_tables: HashMap<i32, Vec<Vec<C64>>> = small
        .iter()
        .map(|&s| {
            let sigma = s as f64 + os;
            let wfun = move |x: f64, y: f64| quad::weight(sigma, x, y);
            let t: Vec<Vec<C64>> = quadrants
                .par_iter()
                .map(|&(sx, sy)| {
                    let r = quad::quadrant_transform(&rule, sx, sy, g.red, &alat[..1], &blat[..1], &[(0, 0)], Some(&wfun));
                    r.into_iter().next().unwrap()
                })
                .collect();
            (s, t)
        })
        .collect();

    let at = |t: &[C64], ia: i64, ib: i64| -> C64 { t[(ia - a_start) as usize * b_len + (ib - b_start) as usize] };
    for n in -n_max..=n_max {
        for s in -s_max..=s_max {
            let sigma = s as f64 + os;
            let line = grid.line_mut(n, s);
            for (i, v) in line.iter_mut().enumerate() {
                let a = a_lo as i64 + i as i64;
                let b = (s - n) as i64;
                let mut acc = C64::new(0.0, 0.0);
                if let Some(st) = small_tables.get(&s) {
                    for t in st {
                        acc += at(t, a, b);
                    }
                    *v = acc * g.pref;
                    continue;
                }
                let e_plus = C64::from_polar(1.0, PI * sigma);
                let e_minus = e_plus.conj();
                for (qi, &(sx, sy)) in quadrants.iter().enumerate() {
                    let (combos, tabs) = &tables[qi];
                    let [c1, c2] = combos_of(sx, sy);
                    let arg = |shift_a: bool, shift_b: bool| -> (i64, i64) {
                        (if shift_a { a - s as i64 } else { a }, if shift_b { -(n as i64) } else { b })
                    };
                    let (a1, b1) = arg(sx > 0.0, sy > 0.0);
                    let (a2, b2) = arg(sx < 0.0, sy < 0.0);
                    let t1 = &tabs[combos.iter().position(|c| *c == c1).unwrap()];
                    let t2 = &tabs[combos.iter().position(|c| *c == c2).unwrap()];
                    acc += e_plus * at(t1, a1, b1) - e_minus * at(t2, a2, b2);
                }
                *v = acc * g.pref / C64::new(0.0, 2.0 * PI * sigma);
            }
        }
    }
    check_grid(&grid, g, quad)?;
    grid.square_window();
    grid.drop_small(quad.drop_below);
    Ok(grid)
}

/// Re-evaluates the peak entry and a few others with a refined rule.
fn check_grid(grid: &Grid, g: &Geometry, quad: &QuadratureSettings) -> Result<()> {
    if quad.check_samples == 0 {
        return Ok(());
    }
    let peak = grid.peak();
    if peak == 0.0 {
        return Ok(());
    }
    let mut picks: Vec<(i32, i32, i32)> = Vec::new();
    let mut best = (0, 0, 0, 0.0);
    for (n, k, kp, v) in grid.entries() {
        if v.norm() > best.3 {
            best = (n, k, kp, v.norm());
        }
    }
    picks.push((best.0, best.1, best.2));
    // deterministic spread of further samples among significant entries
    let sig: Vec<(i32, i32, i32)> = grid
        .entries()
        .filter(|e| e.3.norm() > 0.05 * peak)
        .map(|e| (e.0, e.1, e.2))
        .collect();
    for i in 1..quad.check_samples {
        if sig.is_empty() {
            break;
        }
        picks.push(sig[(i * 7919) % sig.len()]);
    }
    let gl = refined(quad);
    let mut worst = 0.0f64;
    for (n, k, kp) in picks {
        let fine = entry_value(g, n, k, kp, &gl, quad.panel_phase);
        worst = worst.max((fine - grid.get(n, k, kp)).norm() / peak);
    }
    if worst > quad.tol {
        return Err(Error::Quadrature {
            estimate: worst,
            tol: quad.tol,
        });
    }
    Ok(())
}

fn key_of(parts: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update(b"\x1f");
    }
    h.finalize().into()
}

fn quad_text(q: &QuadratureSettings) -> String {
    format!(
        "npp={};pp={:?};n={};s={};m={};drop={:?}",
        q.nodes_per_panel, q.panel_phase, q.n_max, q.sigma_max, q.a_margin, q.drop_below
    )
}

/// Provenance of a grid: geometry, box and quadrature.
pub fn grid_key(g: &Geometry, quad: &QuadratureSettings) -> [u8; 32] {
    key_of(&["grid-v1", &g.key_text(), &quad_text(quad)])
}

/// Builds (or loads from `cache_dir`) the grid for `g`.
pub fn grid_cached(g: &Geometry, quad: &QuadratureSettings, cache_dir: Option<&std::path::Path>) -> Result<Arc<Grid>> {
    let key = grid_key(g, quad);
    if let Some(dir) = cache_dir {
        let path = cache::path_for(dir, &key);
        if path.exists() {
            return Ok(cache::cache_load(&path, &key)?.grid);
        }
        let grid = Arc::new(build_grid(g, quad)?);
        let t = NliTensor {
            kind: TensorKind::A,
            channel: None,
            coi_sub: 0,
            sub: 0,
            scale: 1.0,
            grid: grid.clone(),
            provenance_key: key,
        };
        cache::cache_store(&t, &path)?;
        return Ok(grid);
    }
    Ok(Arc::new(build_grid(g, quad)?))
}

/// Self- and cross-polarization SPM tensors of COI stream `coi`.
/// `pol_delay` is the second-polarization delay relative to the first.
pub fn spm_tensors(
    link: &LinkConfig,
    plan: &WdmPlan,
    quad: &QuadratureSettings,
    coi: usize,
    pol_delay: f64,
) -> Result<(NliTensor, NliTensor)> {
    let mut b = Builder::new(link, plan, quad, None);
    let s = b.tensor(TensorKind::S, coi, coi, 1.0, 0.0, 0.0, 0.0)?;
    let st = b.tensor(TensorKind::STilde, coi, coi, 1.0, 0.0, pol_delay, pol_delay)?;
    Ok((s, st))
}

/// C, C̃ and D tensors of interferer stream `stream` on COI stream `coi`,
/// first polarization as reference.
pub fn xpm_tensors(
    link: &LinkConfig,
    plan: &WdmPlan,
    quad: &QuadratureSettings,
    coi: usize,
    stream: usize,
) -> Result<XpmTensors> {
    let mut b = Builder::new(link, plan, quad, None);
    b.xpm(coi, stream, false)
}

#[derive(Clone, Debug)]
pub struct XpmTensors {
    pub stream: usize,
    pub c: NliTensor,
    pub c_tilde: NliTensor,
    pub d: NliTensor,
}

/// Tensors seen by one COI stream, for one receiving polarization.
#[derive(Clone, Debug)]
pub struct StreamTensors {
    pub coi: usize,
    pub spm: Option<(NliTensor, NliTensor)>,
    pub xpm: Vec<XpmTensors>,
}

/// All tensors for a plan. `pol2` is present only when some stream has
/// different delays on its two polarizations; otherwise the second
/// polarization uses `pol1` with the polarizations swapped.
#[derive(Clone, Debug)]
pub struct TensorSet {
    pub pol1: Vec<StreamTensors>,
    pub pol2: Option<Vec<StreamTensors>>,
}

impl TensorSet {
    pub fn for_pol(&self, pol: usize) -> &[StreamTensors] {
        match (pol, &self.pol2) {
            (1, Some(p)) => p,
            _ => &self.pol1,
        }
    }

    pub fn stream(&self, pol: usize, coi: usize) -> Option<&StreamTensors> {
        self.for_pol(pol).iter().find(|s| s.coi == coi)
    }
}

struct Builder<'a> {
    link: &'a LinkConfig,
    plan: &'a WdmPlan,
    quad: &'a QuadratureSettings,
    cache_dir: Option<&'a std::path::Path>,
    memo: HashMap<[u8; 32], Arc<Grid>>,
}

impl<'a> Builder<'a> {
    fn new(link: &'a LinkConfig, plan: &'a WdmPlan, quad: &'a QuadratureSettings, cache_dir: Option<&'a std::path::Path>) -> Self {
        Builder {
            link,
            plan,
            quad,
            cache_dir,
            memo: HashMap::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn tensor(&mut self, kind: TensorKind, coi: usize, stream: usize, scale: f64, t1: f64, t2: f64, t3: f64) -> Result<NliTensor> {
        let ts = self.plan.stream_period();
        let ch = &self.plan.channels[stream];
        let co = &self.plan.channels[coi];
        let g = Geometry::new(self.link, ts, ch.omega - co.omega, t1, t2, t3);
        let gk = grid_key(&g, self.quad);
        let grid = match self.memo.get(&gk) {
            Some(g) => g.clone(),
            None => {
                let grid = grid_cached(&g, self.quad, self.cache_dir)?;
                self.memo.insert(gk, grid.clone());
                grid
            }
        };
        let key = key_of(&[
            "tensor-v1",
            &format!("{:?};scale={:?};c={};coi_sub={};sub={}", kind, scale, ch.index, co.sub, ch.sub),
            &hex(&gk),
        ]);
        Ok(NliTensor {
            kind,
            channel: if matches!(kind, TensorKind::S | TensorKind::STilde) { None } else { Some(ch.index) },
            coi_sub: co.sub,
            sub: ch.sub,
            scale,
            grid,
            provenance_key: key,
        })
    }

    /// `second`: tensors for the second receiving polarization.
    fn xpm(&mut self, coi: usize, stream: usize, second: bool) -> Result<XpmTensors> {
        let co = &self.plan.channels[coi];
        let ch = &self.plan.channels[stream];
        let (r, rb, d, db) = if second {
            (co.delay_bar, co.delay, ch.delay_bar, ch.delay)
        } else {
            (co.delay, co.delay_bar, ch.delay, ch.delay_bar)
        };
        let c = self.tensor(TensorKind::C, coi, stream, 2.0, 0.0, d - r, d - r)?;
        let c_tilde = self.tensor(TensorKind::CTilde, coi, stream, 1.0, 0.0, db - r, db - r)?;
        let dd = self.tensor(TensorKind::D, coi, stream, 1.0, rb - r, d - r, db - r)?;
        Ok(XpmTensors {
            stream,
            c,
            c_tilde,
            d: dd,
        })
    }

    fn stream_tensors(&mut self, coi: usize, with_spm: bool, second: bool) -> Result<StreamTensors> {
        let co = &self.plan.channels[coi];
        let spm = if with_spm {
            let pd = if second { co.delay - co.delay_bar } else { co.delay_bar - co.delay };
            Some((
                self.tensor(TensorKind::S, coi, coi, 1.0, 0.0, 0.0, 0.0)?,
                self.tensor(TensorKind::STilde, coi, coi, 1.0, 0.0, pd, pd)?,
            ))
        } else {
            None
        };
        let mut xpm = Vec::new();
        for s in self.plan.interferers() {
            xpm.push(self.xpm(coi, s, second)?);
        }
        Ok(StreamTensors { coi, spm, xpm })
    }
}

/// Builds every tensor needed by the surrogate for `plan`.
/// SPM tensors are included when `with_spm` (dispersion-compensation receiver).
pub fn build_tensor_set(
    link: &LinkConfig,
    plan: &WdmPlan,
    quad: &QuadratureSettings,
    with_spm: bool,
    cache_dir: Option<&std::path::Path>,
) -> Result<TensorSet> {
    quad.validate()?;
    link.validate()?;
    plan.validate()?;
    let mut b = Builder::new(link, plan, quad, cache_dir);
    let cois = plan.coi_streams();
    let mut pol1 = Vec::new();
    for &c in &cois {
        pol1.push(b.stream_tensors(c, with_spm, false)?);
    }
    let asym = plan.channels.iter().any(|c| c.delay != c.delay_bar);
    let pol2 = if asym {
        let mut v = Vec::new();
        for &c in &cois {
            v.push(b.stream_tensors(c, with_spm, true)?);
        }
        Some(v)
    } else {
        None
    };
    Ok(TensorSet { pol1, pol2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_link() -> LinkConfig {
        LinkConfig::table1(20.0)
    }

    #[test]
    fn zero_gamma_gives_zero() {
        let mut l = short_link();
        l.gamma_nl = 0.0;
        let v = compute_a(1, 2, 3, 0.0, 1e-12, 0.0, &l, 20e-12, 0.0, &QuadratureSettings::default()).unwrap();
        assert_eq!(v, C64::new(0.0, 0.0));
        let g = Geometry::new(&l, 20e-12, 0.0, 0.0, 0.0, 0.0);
        assert!(build_grid(&g, &QuadratureSettings::default()).unwrap().entries().next().is_none());
    }

    #[test]
    fn no_dispersion_closed_form() {
        // Φ = 0, y_c = 0: A_000 = γL/T·∬(1 − r) = (2/3)·γL/T
        let mut l = short_link();
        l.beta2 = 0.0;
        let t = 20e-12;
        let v = compute_a(0, 0, 0, 0.0, 0.0, 0.0, &l, t, 0.0, &QuadratureSettings::default()).unwrap();
        let e = 2.0 / 3.0 * l.gamma_nl * l.length_km / t;
        assert!((v - C64::new(e, 0.0)).norm() < 1e-12 * e);
    }

    #[test]
    fn grid_agrees_with_direct_entries() {
        let l = LinkConfig::table1(80.0);
        let t = 20e-12;
        let q = QuadratureSettings {
            n_max: 3,
            sigma_max: 3,
            drop_below: 0.0,
            ..Default::default()
        };
        for &(om, t1, t2, t3) in &[
            (0.0, 0.0, 0.0, 0.0),
            (2.0 * PI * 50e9, 0.0, 5e-12, 5e-12),
            (-2.0 * PI * 100e9, 3e-12, -7e-12, 4e-12),
            (2.0 * PI * 50e9, 0.0, 10e-12, 10e-12),
        ] {
            let g = Geometry::new(&l, t, om, t1, t2, t3);
            let grid = build_grid(&g, &q).unwrap();
            let peak = grid.peak();
            for &(n, k, kp) in &[(0, 0, 0), (1, -2, 0), (-2, 3, 1), (0, 5, 5), (3, -1, 2), (-1, 4, 6)] {
                let v = grid.get(n, k, kp);
                let d = compute_a(n, k, kp, t1, t2, t3, &l, t, om, &q).unwrap();
                assert!((v - d).norm() < 1e-9 * peak, "{om} {t1} {t2} {t3} ({n},{k},{kp}) {v} {d}");
            }
        }
    }

    #[test]
    fn gamma_linear() {
        let mut l = LinkConfig::table1(40.0);
        let q = QuadratureSettings {
            n_max: 2,
            sigma_max: 2,
            ..Default::default()
        };
        let g1 = build_grid(&Geometry::new(&l, 20e-12, 2.0 * PI * 50e9, 0.0, 0.0, 0.0), &q).unwrap();
        l.gamma_nl *= 2.0;
        let g2 = build_grid(&Geometry::new(&l, 20e-12, 2.0 * PI * 50e9, 0.0, 0.0, 0.0), &q).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((a * 2.0 - b).norm() <= 1e-12 * b.norm().max(1e-300));
        }
    }

    #[test]
    fn entries_iterate_consistently() {
        let l = LinkConfig::table1(40.0);
        let q = QuadratureSettings {
            n_max: 2,
            sigma_max: 1,
            ..Default::default()
        };
        let grid = build_grid(&Geometry::new(&l, 20e-12, 0.0, 0.0, 0.0, 0.0), &q).unwrap();
        let mut count = 0;
        for (n, k, kp, v) in grid.entries() {
            assert_eq!(grid.get(n, k, kp), v);
            count += 1;
        }
        assert!(count > 0);
    }
}
