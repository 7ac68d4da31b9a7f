//! Quadrature over the diamond |x| + |y| ≤ 1 of the reduced coefficient
//! integrand.
//!
//! After the analytic z-integration (constant gain profile), every
//! coefficient is a Fourier transform over the diamond of
//! `E(Φx(y − y_c)) · w_σ(x, y)`, with `E(φ) = (1 − e^{−jφ})/(jφ)` and
//! `w_σ = (1 − r)·sinc(σ(1 − r))·e^{−jπσ(x+y)}`, `r = |x| + |y|`.
//! Expanding the sinc splits `w_σ` into two plane waves per quadrant, so
//! for |σ| ≥ 1/2 all coefficients come from one σ-independent transform
//! per quadrant sampled on shifted integer lattices.

use std::f64::consts::PI;

use crate::C64;

/// Gauss–Legendre nodes and weights on [−1, 1].
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        GaussLegendre { nodes, weights }
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn on(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (lo + hi);
        let h = 0.5 * (hi - lo);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + h * x, h * w))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// `(1 − e^{−jφ})/(jφ)`, the z-average of `e^{−jφu}` over u ∈ [0, 1].
#[inline]
pub fn e_avg(phi: f64) -> C64 {
    if phi.abs() < 1e-4 {
        C64::new(1.0 - phi * phi / 6.0, -phi / 2.0 + phi * phi * phi / 24.0)
    } else {
        let (s, c) = phi.sin_cos();
        // (1 − cos φ + j sin φ)/(jφ)
        C64::new(s / phi, (c - 1.0) / phi)
    }
}

/// `(1 − r)·sinc(σ(1 − r))·e^{−jπσ(x+y)}`.
#[inline]
pub fn weight(sigma: f64, x: f64, y: f64) -> C64 {
    let u = 1.0 - x.abs() - y.abs();
    let s = if (sigma * u).abs() < 1e-8 {
        u
    } else {
        (PI * sigma * u).sin() / (PI * sigma)
    };
    C64::from_polar(s, -PI * sigma * (x + y))
}

/// Parameters of the reduced integrand: Φ = 4π²β2L/T², y_c = ΩT/2π.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reduced {
    pub phi: f64,
    pub yc: f64,
}

/// Product rule on one quadrant triangle, in absolute coordinates
/// (|x|, |y|). `ys[x_ranges[i]]` are the inner nodes of outer node `i`.
pub struct TriangleRule {
    pub xs: Vec<(f64, f64)>,
    pub x_ranges: Vec<std::ops::Range<usize>>,
    pub ys: Vec<(f64, f64)>,
}

impl TriangleRule {
    /// Panels sized so the phase of `E·e^{j2π(xa+yb)}` changes by at most
    /// `panel_phase` over each, for |a| ≤ `amax`, |b| ≤ `bmax`.
    pub fn new(gl: &GaussLegendre, panel_phase: f64, red: Reduced, amax: f64, bmax: f64) -> Self {
        let dx = red.phi.abs() * (1.0 + red.yc.abs()) + 2.0 * PI * amax;
        let px = ((dx / panel_phase).ceil() as usize).max(1);
        let mut xs = Vec::new();
        let mut x_ranges = Vec::new();
        let mut ys = Vec::new();
        for p in 0..px {
            let lo = p as f64 / px as f64;
            let hi = (p + 1) as f64 / px as f64;
            for (x, wx) in gl.on(lo, hi) {
                let span = 1.0 - x;
                let dy = (red.phi.abs() * x + 2.0 * PI * bmax) * span;
                let py = ((dy / panel_phase).ceil() as usize).max(1);
                let start = ys.len();
                for q in 0..py {
                    let ulo = q as f64 / py as f64;
                    let uhi = (q + 1) as f64 / py as f64;
                    for (u, wu) in gl.on(ulo, uhi) {
                        ys.push((span * u, span * wu));
                    }
                }
                xs.push((x, wx));
                x_ranges.push(start..ys.len());
            }
        }
        TriangleRule { xs, x_ranges, ys }
    }

    pub fn node_count(&self) -> usize {
        self.ys.len()
    }
}

/// Integer lattice `offset + i`, `i ∈ [start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub offset: f64,
    pub start: i64,
    pub len: usize,
}

/// `Σ_nodes w·E(Φx(y−y_c))·g(x,y)·e^{j2π(x·a + y·b)}` over one quadrant
/// for `a` on each lattice of `alat` and `b` on each lattice of `blat`.
/// `combos` lists the (a-lattice, b-lattice) pairs wanted; each output is
/// row-major `[a][b]`. `g` is an optional extra weight (signed coordinates).
pub fn quadrant_transform(
    rule: &TriangleRule,
    sx: f64,
    sy: f64,
    red: Reduced,
    alat: &[Lattice],
    blat: &[Lattice],
    combos: &[(usize, usize)],
    g: Option<&(dyn Fn(f64, f64) -> C64 + Sync)>,
) -> Vec<Vec<C64>> {
    let mut out: Vec<Vec<C64>> = combos
        .iter()
        .map(|&(i, j)| vec![C64::new(0.0, 0.0); alat[i].len * blat[j].len])
        .collect();
    let mut f: Vec<Vec<C64>> = blat.iter().map(|l| vec![C64::new(0.0, 0.0); l.len]).collect();
    let used_b: Vec<bool> = (0..blat.len()).map(|j| combos.iter().any(|c| c.1 == j)).collect();
    for (xi, &(xa, wx)) in rule.xs.iter().enumerate() {
        let x = sx * xa;
        for fj in f.iter_mut() {
            fj.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        }
        for &(ya, wy) in &rule.ys[rule.x_ranges[xi].clone()] {
            let y = sy * ya;
            let mut e = e_avg(red.phi * x * (y - red.yc)) * wy;
            if let Some(g) = g {
                e *= g(x, y);
            }
            let step = C64::from_polar(1.0, 2.0 * PI * y);
            for (j, l) in blat.iter().enumerate() {
                if !used_b[j] {
                    continue;
                }
                let mut z = e * C64::from_polar(1.0, 2.0 * PI * y * (l.offset + l.start as f64));
                for v in f[j].iter_mut() {
                    *v += z;
                    z *= step;
                }
            }
        }
        let step = C64::from_polar(1.0, 2.0 * PI * x);
        for (o, &(i, j)) in out.iter_mut().zip(combos) {
            let la = alat[i];
            let nb = blat[j].len;
            let fj = &f[j];
            let mut ph = C64::from_polar(wx, 2.0 * PI * x * (la.offset + la.start as f64));
            for row in o.chunks_exact_mut(nb) {
                for (q, fv) in row.iter_mut().zip(fj) {
                    *q += ph * fv;
                }
                ph *= step;
            }
        }
    }
    out
}

/// Direct evaluation of the full diamond integral
/// `∬ E(Φx(y−y_c))·w_σ(x,y)·e^{j2π(xa+yb)}` for a single (a, b, σ).
pub fn diamond_integral(gl: &GaussLegendre, panel_phase: f64, red: Reduced, a: f64, b: f64, sigma: f64) -> C64 {
    let rule = TriangleRule::new(gl, panel_phase, red, a.abs() + sigma.abs(), b.abs() + sigma.abs());
    let mut acc = C64::new(0.0, 0.0);
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for (xi, &(xa, wx)) in rule.xs.iter().enumerate() {
                let x = sx * xa;
                let mut inner = C64::new(0.0, 0.0);
                for &(ya, wy) in &rule.ys[rule.x_ranges[xi].clone()] {
                    let y = sy * ya;
                    inner += e_avg(red.phi * x * (y - red.yc))
                        * weight(sigma, x, y)
                        * C64::from_polar(wy, 2.0 * PI * (x * a + y * b));
                }
                acc += inner * wx;
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_exact_for_polynomials() {
        let gl = GaussLegendre::new(20);
        for p in 0..40 {
            let v: f64 = gl.on(0.0, 1.0).map(|(x, w)| w * x.powi(p)).sum();
            assert!((v - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "p={p}");
        }
        let s: f64 = gl.weights.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn e_avg_matches_series_and_direct() {
        for &phi in &[0.0, 1e-6, 1e-3, 0.5, 3.0, -7.0, 120.0] {
            let gl = GaussLegendre::new(40);
            let panels = 40;
            let mut d = C64::new(0.0, 0.0);
            for p in 0..panels {
                for (u, w) in gl.on(p as f64 / panels as f64, (p + 1) as f64 / panels as f64) {
                    d += C64::from_polar(w, -phi * u);
                }
            }
            assert!((e_avg(phi) - d).norm() < 1e-12, "{phi}");
        }
    }

    #[test]
    fn diamond_area_and_zero_phi() {
        // Φ = 0, σ = 0, a = b = 0: ∬ (1 − r) over the diamond = 2/3
        let gl = GaussLegendre::new(20);
        let v = diamond_integral(&gl, 6.0 * PI, Reduced { phi: 0.0, yc: 0.0 }, 0.0, 0.0, 0.0);
        assert!((v - C64::new(2.0 / 3.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn quadrant_transform_matches_direct_sum() {
        let gl = GaussLegendre::new(20);
        let red = Reduced { phi: 30.0, yc: 0.7 };
        let alat = [Lattice { offset: 0.25, start: -3, len: 7 }];
        let blat = [Lattice { offset: -0.1, start: -2, len: 5 }];
        let rule = TriangleRule::new(&gl, 6.0 * PI, red, 4.0, 3.0);
        let t = quadrant_transform(&rule, -1.0, 1.0, red, &alat, &blat, &[(0, 0)], None);
        for ia in 0..7 {
            for ib in 0..5 {
                let a = 0.25 + (ia as f64 - 3.0);
                let b = -0.1 + (ib as f64 - 2.0);
                let mut d = C64::new(0.0, 0.0);
                for (xi, &(xa, wx)) in rule.xs.iter().enumerate() {
                    for &(ya, wy) in &rule.ys[rule.x_ranges[xi].clone()] {
                        let (x, y) = (-xa, ya);
                        d += e_avg(red.phi * x * (y - red.yc)) * C64::from_polar(wx * wy, 2.0 * PI * (x * a + y * b));
                    }
                }
                assert!((t[0][ia * 5 + ib] - d).norm() < 1e-12);
            }
        }
    }
}
