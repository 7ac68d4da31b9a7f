//! Coefficients against a time-domain evaluation of the defining double
//! integral: dispersed sinc pulses from their spectra, trapezoid in t,
//! Gauss–Legendre in z.

use std::f64::consts::PI;

use manakov::nli::quad::GaussLegendre;
use manakov::nli::{compute_a, QuadratureSettings};
use manakov::signal::LinkConfig;
use manakov::C64;

/// Normalized dispersed sinc at times `t0 + i·dt − tau`, i < n.
fn dispersed(dl_u: f64, tau: f64, t0: f64, dt: f64, n: usize, fgl: &[(f64, f64)]) -> Vec<C64> {
    let mut out = vec![C64::new(0.0, 0.0); n];
    for &(f, w) in fgl {
        let amp = C64::from_polar(w, 2.0 * PI * PI * dl_u * f * f);
        let mut z = amp * C64::from_polar(1.0, 2.0 * PI * f * (t0 - tau));
        let step = C64::from_polar(1.0, 2.0 * PI * f * dt);
        for v in out.iter_mut() {
            *v += z;
            z *= step;
        }
    }
    out
}

/// γL/T · ∫₀¹ du ∫ s*(u,t) s(u,t−n−t1) s(u,t−k−t2(u)) s*(u,t−k'−t3(u)) dt,
/// all times in units of T, t2(u) = d2 − 2π·Dl·u·y_c and likewise t3.
#[allow(clippy::too_many_arguments)]
fn brute(n: i32, k: i32, kp: i32, t1: f64, d2: f64, d3: f64, yc: f64, dl: f64, pref: f64) -> C64 {
    let span = 300.0;
    let dt = 0.25;
    let m = (2.0 * span / dt) as usize;
    let t0 = -span;
    let gl = GaussLegendre::new(20);
    let panels = 160;
    let fgl: Vec<(f64, f64)> = (0..panels)
        .flat_map(|p| {
            let lo = -0.5 + p as f64 / panels as f64;
            gl.on(lo, lo + 1.0 / panels as f64).collect::<Vec<_>>()
        })
        .collect();
    let zgl = GaussLegendre::new(48);
    let mut acc = C64::new(0.0, 0.0);
    for (u, wu) in zgl.on(0.0, 1.0) {
        let walk = 2.0 * PI * dl * u * yc;
        let s0 = dispersed(dl * u, 0.0, t0, dt, m, &fgl);
        let s1 = dispersed(dl * u, n as f64 + t1, t0, dt, m, &fgl);
        let s2 = dispersed(dl * u, k as f64 + d2 - walk, t0, dt, m, &fgl);
        let s3 = dispersed(dl * u, kp as f64 + d3 - walk, t0, dt, m, &fgl);
        let mut inner = C64::new(0.0, 0.0);
        for i in 0..m {
            inner += s0[i].conj() * s1[i] * s2[i] * s3[i].conj();
        }
        acc += inner * dt * wu;
    }
    acc * pref
}

#[test]
fn coefficients_match_time_domain_oracle() {
    let link = LinkConfig::table1(20.0);
    let t = 20e-12;
    let dl = link.beta2 * 1e-24 * link.length_km / (t * t);
    let pref = link.gamma_nl * link.length_km / t;
    let q = QuadratureSettings::default();
    let cases: &[(i32, i32, i32, f64, f64, f64, f64)] = &[
        (0, 0, 0, 0.0, 0.0, 0.0, 0.0),
        (1, 2, 3, 0.0, 0.0, 0.0, 0.0),
        (1, 0, 1, 0.0, 0.0, 0.0, 0.0),
        (0, 2, 2, 0.0, 0.3, 0.3, 1.0),
        (0, -3, -3, 0.0, 0.4, 0.4, 2.0),
        (1, -1, 2, 0.2, 0.3, 0.1, 1.0),
        (-2, 4, 1, 0.0, -0.4, 0.4, -1.0),
    ];
    for &(n, k, kp, t1, d2, d3, yc) in cases {
        let b = brute(n, k, kp, t1, d2, d3, yc, dl, pref);
        let a = compute_a(n, k, kp, t1 * t, d2 * t, d3 * t, &link, t, 2.0 * PI * yc / t, &q).unwrap();
        let rel = (a - b).norm() / b.norm();
        println!("({n},{k},{kp}) t=({t1},{d2},{d3}) yc={yc}: A={a:.6e} brute={b:.6e} rel={rel:.2e}");
        assert!(rel < 1e-4, "relative error {rel}");
    }
}

#[test]
fn time_shift_invariance() {
    // shifting every pulse by the same δ leaves the integral unchanged:
    // (n, k, k') with delays (t1, t2, t3) against the COI reference is
    // equivalent to the reference shifted by −δ.
    let link = LinkConfig::table1(40.0);
    let t = 20e-12;
    let q = QuadratureSettings::default();
    let a = compute_a(2, 1, 3, 0.1 * t, 0.2 * t, 0.3 * t, &link, t, 2.0 * PI * 50e9, &q).unwrap();
    // n → n−1, k → k−1, k' → k'−1 with the reference pulse moved by −T
    let dl = link.beta2 * 1e-24 * link.length_km / (t * t);
    let pref = link.gamma_nl * link.length_km / t;
    let b = brute(2, 1, 3, 0.1, 0.2, 0.3, 1.0, dl, pref);
    assert!((a - b).norm() < 1e-4 * b.norm());
    let c = compute_a(1, 0, 2, 1.1 * t, 1.2 * t, 1.3 * t, &link, t, 2.0 * PI * 50e9, &q).unwrap();
    assert!((a - c).norm() < 1e-9 * a.norm(), "{a} {c}");
}
