//! Acceptance criteria, one pass/fail line each.
//!
//! Runs without the libtest harness so the verdict lines always reach the
//! output. Positional arguments select criteria by number or by a word of
//! their name; with none, everything runs. Tensor grids are cached under
//! the cargo target tmp directory, so repeated runs skip the quadrature.

use std::f64::consts::{E, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;

use manakov::config::{ExperimentConfig, ModelVariant};
use manakov::experiment::{awgn_bound, build_rate_curves, total_rate, Pipeline, StreamResult};
use manakov::fdpa::{self, RateCurve};
use manakov::inference::{evaluate_rate, paired_gap, pf_conditional_entropy, Dataset, ModelParams, PfConfig};
use manakov::models::{mat_apply, mr_step, MrParams, MrState, PdParams, WhitenFilter};
use manakov::nli::{build_tensor_set, compute_a, NliTensor, QuadratureSettings, TensorSet};
use manakov::rng::{self, cgauss};
use manakov::signal::{dispersion_apply, synthesize_wdm, DelayPreset, LinkConfig, SampledSignal, Synthesis, SymbolBlock, WdmPlan};
use manakov::ssfm::{receiver_dbp, ssfm_propagate, SsfmConfig};
use manakov::statistics::{analytic_moments, empirical_moments, large_dispersion_moments};
use manakov::surrogate::{rp_decompose, ReceiverMode};
use manakov::{dbm_to_watt, C64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache")
}

// ---------------------------------------------------------------------------
// 1000-km nearest-neighbour tensors shared by criteria 1, 2 and 4

struct LongHaul {
    link: LinkConfig,
    plan: WdmPlan,
    quad: QuadratureSettings,
    tensors: TensorSet,
    coi: usize,
}

fn long_haul() -> &'static LongHaul {
    static CELL: OnceLock<LongHaul> = OnceLock::new();
    CELL.get_or_init(|| {
        let link = LinkConfig::table1(1000.0);
        let plan = WdmPlan::table1(1, 1, dbm_to_watt(-6.0), DelayPreset::Synchronized).unwrap();
        let quad = QuadratureSettings {
            n_max: 16,
            sigma_max: 24,
            drop_below: 0.0,
            ..Default::default()
        };
        let tensors = build_tensor_set(&link, &plan, &quad, true, Some(&cache_dir())).unwrap();
        let coi = plan.coi_streams()[0];
        LongHaul {
            link,
            plan,
            quad,
            tensors,
            coi,
        }
    })
}

/// (label, tensor, partner under n,k,k' → −n,−k,−k').
fn kinds(h: &LongHaul) -> Vec<(String, &NliTensor, &NliTensor)> {
    let st = h.tensors.stream(0, h.coi).unwrap();
    let (s, s_tilde) = st.spm.as_ref().unwrap();
    let mut v = vec![("S".to_string(), s, s), ("S~".to_string(), s_tilde, s_tilde)];
    let by_channel = |c: i32| st.xpm.iter().find(|x| h.plan.channels[x.stream].index == c).unwrap();
    for c in [1, -1] {
        let (x, y) = (by_channel(c), by_channel(-c));
        v.push((format!("C({c})"), &x.c, &y.c));
        v.push((format!("C~({c})"), &x.c_tilde, &y.c_tilde));
        v.push((format!("D({c})"), &x.d, &y.d));
    }
    v
}

fn box8() -> impl Iterator<Item = (i32, i32, i32)> {
    (-8..=8).flat_map(|n| (-8..=8).flat_map(move |k| (-8..=8).map(move |kp| (n, k, kp))))
}

fn criterion_1() -> Outcome {
    let h = long_haul();
    let mut worst = [0.0f64; 3];
    let mut detail = Vec::new();
    for (label, t, neg) in kinds(h) {
        let peak = t.peak();
        let mut w = [0.0f64; 3];
        for (n, k, kp) in box8() {
            let v = t.get(n, k, kp);
            w[0] = w[0].max((v - t.get(-n, kp - n, k - n).conj()).norm() / peak);
            w[1] = w[1].max((v - t.get(kp - k, kp - n, kp)).norm() / peak);
            w[2] = w[2].max((v - neg.get(-n, -k, -kp)).norm() / peak);
        }
        for i in 0..3 {
            worst[i] = worst[i].max(w[i]);
        }
        detail.push(format!("{label} {:.1e}/{:.1e}/{:.1e}", w[0], w[1], w[2]));
    }
    // the grid path against direct quadrature of single entries
    let ts = h.plan.stream_period();
    let st = h.tensors.stream(0, h.coi).unwrap();
    let x = st.xpm.iter().find(|x| h.plan.channels[x.stream].index == 1).unwrap();
    let omega = h.plan.channels[x.stream].omega - h.plan.channels[h.coi].omega;
    let mut direct = 0.0f64;
    for &(n, k, kp) in &[(0, 0, 0), (0, 3, 3), (1, -2, 4), (-3, 5, 0), (2, 2, -1)] {
        let a = compute_a(n, k, kp, 0.0, 0.0, 0.0, &h.link, ts, omega, &h.quad).unwrap();
        direct = direct.max((x.c.get(n, k, kp) - 2.0 * a).norm() / x.c.peak());
    }
    let pass = worst.iter().all(|&w| w <= 1e-9) && direct <= 1e-6;
    outcome(
        pass,
        format!(
            "max rel. error conj {:.1e}, shift {:.1e}, mirror {:.1e} (limit 1e-9); grid vs direct {:.1e}; {}",
            worst[0],
            worst[1],
            worst[2],
            direct,
            detail.join(", ")
        ),
    )
}

fn criterion_2() -> Outcome {
    let h = long_haul();
    let st = h.tensors.stream(0, h.coi).unwrap();
    let mut ratio = 0.0f64;
    for x in &st.xpm {
        let peak = x.c.peak();
        for (n, k, kp) in box8() {
            let c = x.c.get(n, k, kp);
            ratio = ratio.max((c - 2.0 * x.c_tilde.get(n, k, kp)).norm() / peak);
            ratio = ratio.max((c - 2.0 * x.d.get(n, k, kp)).norm() / peak);
        }
    }
    let m = analytic_moments(&h.tensors, &h.plan, h.coi, 16).unwrap();
    let mut stat = 0.0f64;
    for l in 0..=16 {
        let s = m.r_theta[0];
        stat = stat.max((m.r_theta[l] - 1.25 * m.r_theta_cross[l]).abs() / s);
        stat = stat.max((m.r_psi[l].re - 0.2 * m.r_theta[l]).abs() / s);
        stat = stat.max(m.r_psi[l].im.abs() / s);
        stat = stat.max((m.r_theta[l] - m.r_theta_bar[l]).abs() / s);
    }
    outcome(
        ratio <= 1e-12 && stat <= 1e-9,
        format!("C = 2C~ = 2D max rel. error {ratio:.1e} (limit 1e-12); r_theta = 5/4 r~_theta, r_psi = r_theta/5 over lags 0..16: {stat:.1e} (limit 1e-9)"),
    )
}

fn criterion_3() -> Outcome {
    let link = LinkConfig::table1(250.0);
    let plan = WdmPlan::table1(1, 1, dbm_to_watt(0.0), DelayPreset::SingleCarrier).unwrap();
    let quad = QuadratureSettings {
        n_max: 8,
        ..Default::default()
    };
    let ts = build_tensor_set(&link, &plan, &quad, false, Some(&cache_dir())).unwrap();
    let coi = plan.coi_streams()[0];
    let lmax = 8;
    let an = analytic_moments(&ts, &plan, coi, lmax).unwrap();
    let (m, nb) = (4096, 245);
    let (decs, xs): (Vec<_>, Vec<_>) = (0..nb as u64)
        .map(|b| {
            let bl: Vec<SymbolBlock> = plan
                .channels
                .iter()
                .enumerate()
                .map(|(i, c)| SymbolBlock::gaussian(m, c.energy, 70_000 + b, i as u64))
                .collect();
            (rp_decompose(&bl, coi, &ts, ReceiverMode::Dbp).unwrap(), bl[coi].clone())
        })
        .unzip();
    let em = empirical_moments(&decs, Some(&xs), lmax).unwrap();
    let (e, se) = (&em.estimate, &em.se);
    let mut checks: Vec<(String, f64, f64, f64)> = vec![("mean theta".into(), e.theta_mean, an.theta_mean, se.theta_mean)];
    for l in 0..=lmax {
        checks.push((format!("r_theta[{l}]"), e.r_theta[l], an.r_theta[l], se.r_theta[l]));
        checks.push((format!("r_psi[{l}]"), e.r_psi[l].re, an.r_psi[l].re, se.r_psi[l].re));
        checks.push((format!("r_v[{l}]"), e.r_v[l].re, an.r_v[l].re, se.r_v[l].re));
    }
    let z: Vec<(String, f64)> = checks.iter().map(|(n, a, b, s)| (n.clone(), (a - b).abs() / s)).collect();
    let worst = z.iter().cloned().fold((String::new(), 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
    outcome(
        !em.degenerate && worst.1 <= 3.0,
        format!("{} symbols, {} quantities, largest deviation {:.2} SE at {} (limit 3)", m * nb, z.len(), worst.1, worst.0),
    )
}

fn criterion_4() -> Outcome {
    let h = long_haul();
    let an = analytic_moments(&h.tensors, &h.plan, h.coi, 0).unwrap();
    let (_, r, valid) = large_dispersion_moments(&h.plan, &h.link, h.coi, 0).unwrap();
    let rel = r[0] / an.r_theta[0] - 1.0;
    outcome(
        valid && rel.abs() <= 0.10,
        format!("r_theta[0] large-dispersion {:.4e} vs analytic {:.4e}, rel. difference {:+.2}% (limit 10%)", r[0], an.r_theta[0], 100.0 * rel),
    )
}

const LINEAR: &str = r#"
[experiment]
name = "acceptance-linear"
models = ["memoryless"]
powers_dbm = [-10.0, -8.0, -6.0, -4.0]
symbols = 1024
train_runs = 4
test_runs = 12
seed = 17

[link]
alpha_db_per_km = 0.2
beta2 = -21.7
gamma_nl = 0.0
length_km = 1000.0
eta_phonon = 1.0

[plan]
side = 1
delays = "synchronized"

[ssfm]
step_km = 10.0
"#;

fn criterion_5() -> Outcome {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for backend in ["rp-surrogate", "ssfm"] {
        let text = LINEAR.replace("[experiment]", &format!("[experiment]\nbackend = \"{backend}\""));
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let p = Pipeline::new(cfg.clone()).unwrap();
        for &dbm in &cfg.experiment.powers_dbm {
            let r = p.rate_point(&p.plan_at(dbm).unwrap(), &[ModelVariant::Memoryless]).unwrap();
            let (rate, _, _) = total_rate(&r, ModelVariant::Memoryless).unwrap();
            let d = rate - awgn_bound(&cfg, dbm);
            worst = worst.max(d.abs());
            detail.push(format!("{backend} {dbm} dBm {d:+.3}"));
        }
    }
    outcome(worst <= 0.05, format!("largest |rate - log2(1+SNR)| {worst:.3} bits (limit 0.05); {}", detail.join(", ")))
}

fn test_signal(m: usize, dbm: f64, side: i32) -> SampledSignal {
    let plan = WdmPlan::table1(side, 1, dbm_to_watt(dbm), DelayPreset::Synchronized).unwrap();
    let blocks: Vec<SymbolBlock> = plan
        .channels
        .iter()
        .enumerate()
        .map(|(i, c)| SymbolBlock::gaussian(m, c.energy, 31, i as u64))
        .collect();
    synthesize_wdm(&plan, &blocks, 100e9 * (2 * side + 1) as f64, Synthesis::Periodic).unwrap()
}

fn rel_err(a: &SampledSignal, b: &SampledSignal) -> f64 {
    let e: f64 = a.pol1.iter().zip(&b.pol1).chain(a.pol2.iter().zip(&b.pol2)).map(|(x, y)| (x - y).norm_sqr()).sum();
    let n: f64 = b.pol1.iter().chain(&b.pol2).map(|x| x.norm_sqr()).sum();
    (e / n).sqrt()
}

fn criterion_6() -> Outcome {
    // step halving against a fine reference
    let sig = test_signal(64, 6.0, 1);
    let link = LinkConfig::table1(40.0);
    let fine = ssfm_propagate(&sig, &link, &SsfmConfig::noiseless(0.03125)).unwrap();
    let a = ssfm_propagate(&sig, &link, &SsfmConfig::noiseless(0.5)).unwrap();
    let b = ssfm_propagate(&sig, &link, &SsfmConfig::noiseless(0.25)).unwrap();
    let ratio = rel_err(&a, &fine) / rel_err(&b, &fine);
    let order_ok = (ratio / 4.0 - 1.0).abs() <= 0.3;

    // β2 = 0: every sample rotates by γ·L·‖u‖²
    let sig = test_signal(64, 6.0, 0);
    let mut flat = LinkConfig::table1(100.0);
    flat.beta2 = 0.0;
    let out = ssfm_propagate(&sig, &flat, &SsfmConfig::noiseless(1.0)).unwrap();
    let mut kerr = 0.0f64;
    for i in 0..sig.len() {
        let p = sig.pol1[i].norm_sqr() + sig.pol2[i].norm_sqr();
        let r = C64::from_polar(1.0, flat.gamma_nl * flat.length_km * p);
        let scale = (sig.pol1[i].norm_sqr() + sig.pol2[i].norm_sqr()).sqrt().max(1e-300);
        kerr = kerr.max(((out.pol1[i] - sig.pol1[i] * r).norm_sqr() + (out.pol2[i] - sig.pol2[i] * r).norm_sqr()).sqrt() / scale);
    }

    // forward then back-propagate at −6 dBm with 0.1-km steps
    let sig = test_signal(128, -6.0, 1);
    let link = LinkConfig::table1(1000.0);
    let cfg = SsfmConfig::noiseless(0.1);
    let fwd = ssfm_propagate(&sig, &link, &cfg).unwrap();
    let back = receiver_dbp(&fwd, &link, &cfg).unwrap();
    let dbp = rel_err(&back, &sig);
    // and it really undoes something: plain dispersion compensation does not
    let cdc = rel_err(&dispersion_apply(&fwd, -link.beta2, link.length_km).unwrap(), &sig);

    outcome(
        order_ok && kerr <= 1e-6 && dbp <= 1e-4 && cdc > 10.0 * dbp,
        format!("step-halving ratio {ratio:.3} (4 +/- 30%); Kerr rotation error {kerr:.1e} (limit 1e-6); DBP round trip {dbp:.1e} over 1000 km (limit 1e-4, dispersion-only {cdc:.1e})"),
    )
}

fn awgn_dataset(blocks: usize, m: usize, s2: f64, seed: u64) -> Dataset {
    let mut r = rng::stream(seed, 1);
    let x: Vec<SymbolBlock> = (0..blocks).map(|b| SymbolBlock::gaussian(m, 1.0, seed, b as u64)).collect();
    let y = x
        .iter()
        .map(|b| SymbolBlock {
            pol1: b.pol1.iter().map(|v| v + cgauss(&mut r, s2)).collect(),
            pol2: b.pol2.iter().map(|v| v + cgauss(&mut r, s2)).collect(),
            ..b.clone()
        })
        .collect();
    Dataset { x, y, energy: 1.0 }
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n * (n - 1.0))).sqrt())
}

fn criterion_7() -> Outcome {
    // zero process variances against the Gaussian conditional entropy
    let s2 = 0.05;
    let (blocks, m) = (20, 2000);
    let d = awgn_dataset(blocks, m, s2, 3);
    let id = WhitenFilter::identity();
    let want = 2.0 * (PI * E * s2).log2();
    let mut lines = Vec::new();
    let mut degenerate_ok = true;
    let silent = [
        ("MR", ModelParams::Mr(MrParams::silent(3))),
        (
            "PD",
            ModelParams::Pd(PdParams {
                sigma_delta: 0.0,
                sigma_a: 0.0,
            }),
        ),
    ];
    for (name, model) in &silent {
        let per: Vec<f64> = (0..blocks)
            .map(|b| {
                let mut r = rng::stream(5, b as u64);
                pf_conditional_entropy(&d.y[b], &d.x[b], model, &id, s2, &PfConfig::default(), &mut r).unwrap() / m as f64
            })
            .collect();
        let (mean, se) = mean_se(&per);
        degenerate_ok &= (mean - want).abs() <= 3.0 * se;
        lines.push(format!("{name} {mean:.4} vs {want:.4} ({:.2} SE)", (mean - want).abs() / se));
    }

    // matched MR data, K against 2K particles
    let rt: Vec<f64> = (0..=3).map(|l| 0.004 * (1.0 - l as f64 / 40.0)).collect();
    let truth = MrParams::from_theta(&rt, 3, 2.0, 2.0).unwrap();
    let s2 = 0.02;
    let mut r = rng::stream(12, 0);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for b in 0..blocks as u64 {
        let xb = SymbolBlock::gaussian(m, 1.0, 900 + b, 0);
        let mut st = MrState::stationary(&truth, &mut r);
        let (mut p, mut q) = (Vec::with_capacity(m), Vec::with_capacity(m));
        for i in 0..m {
            let v = mat_apply(&mr_step(&mut st, &truth, &mut r), [xb.pol1[i], xb.pol2[i]]);
            p.push(v[0] + cgauss(&mut r, s2));
            q.push(v[1] + cgauss(&mut r, s2));
        }
        y.push(SymbolBlock {
            pol1: p,
            pol2: q,
            ..xb.clone()
        });
        x.push(xb);
    }
    let d = Dataset { x, y, energy: 1.0 };
    let model = ModelParams::Mr(truth);
    let pf = |k| PfConfig {
        particles: k,
        resample_threshold: 0.5,
    };
    let a = evaluate_rate(&d, &model, &id, s2, &pf(128), 21).unwrap();
    let b = evaluate_rate(&d, &model, &id, s2, &pf(256), 21).unwrap();
    let (gap, gap_se) = paired_gap(&b, &a).unwrap();
    let se = a.std_error.max(b.std_error);
    let doubling_ok = gap.abs() < 3.0 * se;
    lines.push(format!(
        "I_q K=128 {:.4}, K=256 {:.4}, change {gap:+.4} = {:.2} SE of I_q (paired SE {gap_se:.4})",
        a.rate,
        b.rate,
        gap.abs() / se
    ));
    outcome(degenerate_ok && doubling_ok, lines.join("; "))
}

/// Uniform sweep of a configuration: (power, streams) per power.
fn sweep(p: &Pipeline, variants: &[ModelVariant]) -> Vec<(f64, Vec<StreamResult>)> {
    p.cfg
        .experiment
        .powers_dbm
        .iter()
        .map(|&dbm| (dbm, p.rate_point(&p.plan_at(dbm).unwrap(), variants).unwrap()))
        .collect()
}

fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_se(&d)
}

fn criterion_8() -> Outcome {
    let mut cfg = ExperimentConfig::preset("desk").unwrap();
    cfg.output.cache_dir = Some(cache_dir());
    let p = Pipeline::new(cfg).unwrap();
    use ModelVariant::*;
    let order = [TwoPCpan, Mr, Pd, Memoryless];
    let s = sweep(&p, &order);
    let totals: Vec<Vec<(f64, f64, Vec<f64>)>> = s.iter().map(|(_, r)| order.iter().map(|&v| total_rate(r, v).unwrap()).collect()).collect();
    let peak = (0..s.len()).max_by(|&i, &j| totals[i][0].0.total_cmp(&totals[j][0].0)).unwrap();
    let t = &totals[peak];
    let mut pass = true;
    let mut lines = vec![format!("peak {} dBm", s[peak].0)];
    for (v, (r, se, _)) in order.iter().zip(t) {
        lines.push(format!("{} {r:.3}+/-{se:.3}", v.name()));
    }
    for w in 0..3 {
        let (g, se) = paired(&t[w].2, &t[w + 1].2);
        pass &= g >= -3.0 * se;
        lines.push(format!("{}-{} {g:+.3} ({:+.1} SE)", order[w].name(), order[w + 1].name(), g / se.max(1e-300)));
    }
    outcome(pass, lines.join(", "))
}

/// Random curves with shrinking per-dB increments, concave in mW.
fn concave_curve(r: &mut impl Rng, s: usize) -> RateCurve {
    let mut inc: Vec<f64> = (0..8).map(|_| r.random_range(0.01..1.0)).collect();
    inc.sort_by(|a, b| b.total_cmp(a));
    let mut v = inc[0] * 10.0 / std::f64::consts::LN_10 + r.random_range(0.0..2.0);
    let mut pts = vec![(fdpa::dbm_to_mw(-6.0), v)];
    for (i, d) in inc.iter().enumerate() {
        v += d;
        pts.push((fdpa::dbm_to_mw(-5.0 + i as f64), v));
    }
    RateCurve::new(s, pts).unwrap()
}

/// Best objective over every split of `q` quanta.
fn exhaustive(cs: &[RateCurve], total: f64, q: usize) -> f64 {
    fn rec(cs: &[RateCurve], left: usize, unit: f64, acc: f64, best: &mut f64) {
        if cs.len() == 1 {
            *best = best.max(acc + cs[0].rate(left as f64 * unit));
            return;
        }
        for i in 0..=left {
            rec(&cs[1..], left - i, unit, acc + cs[0].rate(i as f64 * unit), best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    rec(cs, q, total / q as f64, 0.0, &mut best);
    best
}

fn criterion_9() -> Outcome {
    let mut r = rng::stream(77, 0);
    let mut exact_ok = true;
    let mut greedy_worst = 0.0f64;
    for case in 0..300 {
        let s = 1 + case % 3;
        let cs: Vec<RateCurve> = (0..s).map(|i| concave_curve(&mut r, i)).collect();
        let total = r.random_range(0.2..8.0);
        let g = fdpa::greedy_allocate(&cs, total, 20).unwrap();
        let best = exhaustive(&cs, total, 20);
        greedy_worst = greedy_worst.max((best - fdpa::objective(&cs, &g)) / best.abs().max(1.0));
        // arbitrary curves: the allocation never loses to uniform
        let raw: Vec<RateCurve> = (0..1 + case % 5)
            .map(|i| RateCurve::new(i, (0..4).map(|j| (fdpa::dbm_to_mw(-6.0 + 3.0 * j as f64), r.random_range(0.0..5.0))).collect()).unwrap())
            .collect();
        let a = fdpa::fdpa_allocate(&raw, r.random_range(0.05..20.0)).unwrap();
        exact_ok &= a.objective >= a.uniform_objective;
    }
    exact_ok &= greedy_worst <= 1e-12;

    // desk 4SC: FDPA against uniform at every sweep power
    let mut cfg = ExperimentConfig::preset("desk-4sc").unwrap();
    cfg.output.cache_dir = Some(cache_dir());
    let p = Pipeline::new(cfg.clone()).unwrap();
    let v = ModelVariant::Mr;
    let s = sweep(&p, &[v]);
    let curves = build_rate_curves(&s, v).unwrap();
    let mut fdpa_ok = true;
    let mut lines = Vec::new();
    for (dbm, uni) in &s {
        let base = p.plan_at(*dbm).unwrap();
        let powers = fdpa::iterate_allocation(&curves, fdpa::dbm_to_mw(*dbm), cfg.fdpa.rounds, |pw| {
            let plan = base.clone().with_subcarrier_powers(&pw.iter().map(|x| x * 1e-3).collect::<Vec<_>>())?;
            Ok(p.rate_point(&plan, &[v])?.iter().map(|st| st.models[0].estimate.rate).collect())
        })
        .unwrap();
        let plan = base.with_subcarrier_powers(&powers.iter().map(|x| x * 1e-3).collect::<Vec<_>>()).unwrap();
        let fd = p.rate_point(&plan, &[v]).unwrap();
        let (u, _, up) = total_rate(uni, v).unwrap();
        let (f, _, fp) = total_rate(&fd, v).unwrap();
        let (g, se) = paired(&fp, &up);
        fdpa_ok &= g >= -3.0 * se;
        let alloc: Vec<String> = powers.iter().map(|&x| format!("{:.2}", fdpa::mw_to_dbm(x))).collect();
        lines.push(format!("{dbm} dBm {f:.3} vs {u:.3} ({:+.1} SE) at [{}] dBm", g / se.max(1e-300), alloc.join(", ")));
    }

    // inner subcarriers beat the edge ones: synchronized, uniform, at the peak
    let peak = s.iter().max_by(|a, b| total_rate(&a.1, v).unwrap().0.total_cmp(&total_rate(&b.1, v).unwrap().0)).unwrap().0;
    let mut sync = cfg.clone();
    sync.plan.delays = DelayPreset::Synchronized;
    let ps = Pipeline::new(sync).unwrap();
    let sc = ps.rate_point(&ps.plan_at(peak).unwrap(), &[v]).unwrap();
    let rate = |i: usize| &sc[i].models[0].estimate;
    let per_run = |i: usize| rate(i).per_run.clone();
    let avg = |a: Vec<f64>, b: Vec<f64>| a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect::<Vec<f64>>();
    let (g, se) = paired(&avg(per_run(1), per_run(2)), &avg(per_run(0), per_run(3)));
    let inner_ok = g > 0.0;
    let subs: Vec<String> = (0..4).map(|i| format!("{:.3}", rate(i).rate)).collect();
    outcome(
        exact_ok && fdpa_ok && inner_ok,
        format!(
            "allocation >= uniform on all random instances: {}; greedy vs exhaustive worst gap {greedy_worst:.1e}; FDPA vs uniform: {}; synchronized subcarriers at {peak} dBm [{}], inner - edge {g:+.3} ({:+.1} SE)",
            exact_ok,
            lines.join(", "),
            subs.join(", "),
            g / se.max(1e-300)
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "tensor symmetries", criterion_1),
        (2, "synchronized ratios", criterion_2),
        (3, "monte-carlo vs analytic moments", criterion_3),
        (4, "large-dispersion approximation", criterion_4),
        (5, "awgn limit", criterion_5),
        (6, "ssfm order, kerr and dbp", criterion_6),
        (7, "particle filter limits", criterion_7),
        (8, "desk model ordering", criterion_8),
        (9, "fdpa", criterion_9),
    ];
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        for (id, name, _) in &criteria {
            println!("criterion {id}: {name}: test");
        }
        return;
    }
    let filters: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let selected = |id: u32, name: &str| filters.is_empty() || filters.iter().any(|f| *f == &id.to_string() || name.contains(f.as_str()));
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, f) in criteria {
        if !selected(id, name) {
            continue;
        }
        ran += 1;
        let t0 = Instant::now();
        let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name} [{:.0} s]: {}",
            if o.pass { "PASS" } else { "FAIL" },
            t0.elapsed().as_secs_f64(),
            o.detail
        );
    }
    if selected(10, "full-scale reproduction") {
        println!("criterion 10 NOT GATED full-scale reproduction: overnight job `manakov reproduce fig4 --scale full`, target peak 8.91 +/- 0.15 bits/s/Hz/pol at -6 dBm");
    }
    println!("acceptance: {} of {ran} gated criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
