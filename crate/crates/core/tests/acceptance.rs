//! End-to-end acceptance checks. Each test prints one `criterion N: PASS|FAIL`
//! line before asserting.
//!
//! The toy-benchmark criteria (7–10) share one set of full-length training
//! runs, computed once per test process; expect well over an hour on a single
//! core.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use otlab_core::conjugate::{alpha_scaled_conj, ConjugatePair};
use otlab_core::oracle::{duality_report, plan_convergence_curve, random_instance, solve_ot_exact, UotOptions};
use otlab_core::schedule::{schedule_alpha, DivergenceSchedule};
use otlab_core::trainer::{
    generator_objective, iteration_rng, potential_objective, run_training, BatchSample, PresetName, RunError,
    RunOptions, RunRecord, TrainerConfig, TrainerState,
};
use otlab_core::models::ArchConfig;

/// Writes straight to the process stdout so the line survives the test
/// harness's output capture.
fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn report(n: u32, ok: bool, detail: &str) {
    say(&format!("criterion {n}: {} — {detail}", if ok { "PASS" } else { "FAIL" }));
}

#[test]
fn criterion_01_conjugate_kernel() {
    let t = Instant::now();
    let sp = ConjugatePair::Softplus;
    let v0: f64 = sp.conj_value(0.0).unwrap();
    let d0: f64 = sp.conj_deriv(0.0).unwrap();
    let mut ok = v0 == 0.0 && (d0 - 1.0).abs() <= 1e-9;
    let mut detail = format!("SP(0)={v0:e}, SP'(0)-1={:e}", d0 - 1.0);

    let h = 1e-3;
    let grid: Vec<f64> = (0..=10_000).map(|i| -5.0 + i as f64 * h).collect();
    for pair in ConjugatePair::ALL {
        let f: Vec<f64> = grid.iter().map(|&x| pair.conj_value(x).unwrap()).collect();
        // Second differences of an affine function are pure rounding noise.
        let min_second = f.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).fold(f64::INFINITY, f64::min);
        let min_first = f.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        let convex = min_second >= -1e-12;
        let increasing = min_first > 0.0;
        ok &= convex && increasing;
        detail += &format!("; {}: min Δ²={min_second:.2e}, min Δ={min_first:.2e}", pair.name());
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 1.0;
    report(1, ok, &format!("{detail}; {secs:.3}s"));
    assert!(ok);
}

#[test]
fn criterion_02_alpha_convergence() {
    let t = Instant::now();
    let xs: Vec<f64> = (0..=2000).map(|i| -1.0 + i as f64 * 1e-3).collect();
    let sup = |alpha: f64| {
        xs.iter()
            .map(|&x| (alpha_scaled_conj(ConjugatePair::Softplus, alpha, x).unwrap() - x).abs())
            .fold(0.0, f64::max)
    };
    let alphas: Vec<f64> = (0..=10).map(|k| 2f64.powi(k)).collect();
    let errs: Vec<f64> = alphas.iter().map(|&a| sup(a)).collect();
    let at_100 = sup(100.0);
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    let secs = t.elapsed().as_secs_f64();
    let ok = at_100 <= 0.003 && monotone && secs < 1.0;
    let errs: Vec<String> = errs.iter().map(|e| format!("{e:.2e}")).collect();
    report(
        2,
        ok,
        &format!("sup error at α=100: {at_100:.5}; α=1..1024: [{}]; non-increasing: {monotone}; {secs:.3}s", errs.join(", ")),
    );
    assert!(ok);
}

/// The first `count` random 5-atom instances whose OT plan is certified unique.
fn generic_instances(count: usize) -> Vec<(u64, otlab_core::DiscreteMeasure64, otlab_core::DiscreteMeasure64)> {
    let mut out = Vec::new();
    let mut seed = 0;
    while out.len() < count {
        let (mu, nu) = random_instance(5, 5, 2, seed).unwrap();
        if solve_ot_exact(&mu, &nu, 1.0).unwrap().unique {
            out.push((seed, mu, nu));
        }
        seed += 1;
    }
    out
}

#[test]
fn criteria_03_04_plan_convergence_and_bound() {
    let t = Instant::now();
    let alphas = [1.0, 10.0, 100.0, 1000.0];
    let opts = UotOptions::default();
    let kl = ConjugatePair::KLExp;
    let (mut ok3, mut ok4) = (true, true);
    let (mut worst_tv, mut worst_kkt, mut worst_slack) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let instances = generic_instances(20);
    for (seed, mu, nu) in &instances {
        let c = plan_convergence_curve(mu, nu, 1.0, kl, kl, &alphas, &opts, 1e-6).unwrap();
        let last = c.points.last().unwrap();
        let mono = c.is_non_increasing(0.0);
        let converged = c.points.iter().all(|p| p.report.kkt_residual <= 1e-8);
        if !(mono && last.tv_distance <= 1e-2 && converged) {
            say(&format!("  instance seed {seed}: monotone {mono}, TV@1000 {:.3e}, converged {converged}", last.tv_distance));
            ok3 = false;
        }
        worst_tv = worst_tv.max(last.tv_distance);
        for p in &c.points {
            worst_kkt = worst_kkt.max(p.report.kkt_residual);
            worst_slack = worst_slack.max(p.bound.lhs - p.bound.rhs);
            ok4 &= p.bound.holds;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok3 &= secs < 120.0;
    report(
        3,
        ok3,
        &format!(
            "{} instances (seeds {}..={}); max TV at α=1000 {worst_tv:.3e}; max KKT residual {worst_kkt:.3e}; {secs:.1}s",
            instances.len(),
            instances[0].0,
            instances.last().unwrap().0
        ),
    );
    report(4, ok4, &format!("max (lhs − rhs) over all instances and α: {worst_slack:.3e} (allowed 1e-6)"));
    assert!(ok3 && ok4);
}

#[test]
fn criterion_05_duality() {
    let t = Instant::now();
    let mut ok = true;
    let mut worst_gap = 0.0f64;
    let mut violations = 0;
    let mut count = 0;
    for atoms in 1..=5 {
        for seed in 0..8 {
            let (mu, nu) = random_instance(atoms, 6 - atoms, 2, 100 + seed).unwrap();
            let d = duality_report(&mu, &nu, 1.0, 100, seed).unwrap();
            worst_gap = worst_gap.max(d.gap.abs());
            violations += d.weak_duality_violations;
            ok &= d.gap.abs() <= 1e-6 && d.weak_duality_violations == 0;
            count += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 30.0;
    report(
        5,
        ok,
        &format!("{count} instances; max |semi-dual − primal| {worst_gap:.2e}; weak-duality violations {violations}; {secs:.2}s"),
    );
    assert!(ok);
}

#[test]
fn criterion_06_gradient_correctness() {
    let t = Instant::now();
    let h = 1e-4;
    let mut worst = 0.0f64;
    let mut params = 0;
    for name in PresetName::ALL {
        let mut cfg = TrainerConfig::toy(name, 11).with_total_iters(100);
        cfg.arch = ArchConfig {
            data_dim: 2,
            noise_dim: 2,
            hidden: 2,
            blocks: 1,
        };
        let state: TrainerState<f64> = TrainerState::new(cfg.clone()).unwrap();
        params = state.params.potential.num_params();
        let batch = BatchSample::draw(&cfg.target, 16, 2, 2, &mut iteration_rng(5, 0));
        let batch = BatchSample { y: batch.y / 6.0, ..batch };
        let alpha = if name == PresetName::UotmSd { 0.6 } else { 1.0 };
        let rel = |fd: f64, ad: f64| (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-6);

        let ad: Vec<f64> = potential_objective(&cfg.preset, &state.params, &batch, alpha)
            .unwrap()
            .grads
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();
        let base = state.params.potential.flatten();
        for k in 0..base.len() {
            let loss = |d: f64| {
                let mut p = state.params.clone();
                let mut f = base.clone();
                f[k] += d;
                p.potential.assign_flat(&f);
                potential_objective(&cfg.preset, &p, &batch, alpha).unwrap().loss
            };
            worst = worst.max(rel((loss(h) - loss(-h)) / (2.0 * h), ad[k]));
        }

        let ad: Vec<f64> = generator_objective(&cfg.preset, &state.params, &batch)
            .unwrap()
            .grads
            .iter()
            .flat_map(|g| g.iter().copied())
            .collect();
        let base = state.params.generator.flatten();
        for k in 0..base.len() {
            let loss = |d: f64| {
                let mut p = state.params.clone();
                let mut f = base.clone();
                f[k] += d;
                p.generator.assign_flat(&f);
                generator_objective(&cfg.preset, &p, &batch).unwrap().loss
            };
            worst = worst.max(rel((loss(h) - loss(-h)) / (2.0 * h), ad[k]));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-3 && secs < 30.0;
    report(
        6,
        ok,
        &format!("{} presets, {params}-parameter potential; worst relative error {worst:.2e}; {secs:.2}s", PresetName::ALL.len()),
    );
    assert!(ok);
}

const SEEDS: [u64; 3] = [0, 1, 2];
const TOY_PRESETS: [PresetName; 4] = [PresetName::UotmSp, PresetName::UotmNoCost, PresetName::Wgan, PresetName::UotmSd];

struct ToyRun {
    record: RunRecord,
    /// Why the run stopped early, if it did.
    aborted: Option<String>,
}

fn toy_run(name: PresetName, seed: u64) -> ToyRun {
    let cfg = TrainerConfig::toy(name, seed);
    let opts = RunOptions {
        snapshot_every: 5_000,
        ..RunOptions::default()
    };
    let t = Instant::now();
    let run = match run_training::<f32, _>(cfg.clone(), &cfg.target, &opts) {
        Ok(record) => ToyRun { record, aborted: None },
        Err(RunError::Aborted { source, record }) => ToyRun {
            record: *record,
            aborted: Some(source.to_string()),
        },
        Err(e) => panic!("{name} seed {seed}: {e}"),
    };
    let last = run.record.snapshots.last().expect("initial snapshot");
    say(&format!(
        "  {name} seed {seed}: {} iterations in {:.0}s; modes {}/8, W2 {:.3}, loss_v std(last 5K) {:.4}{}",
        run.record.iterations_completed,
        t.elapsed().as_secs_f64(),
        last.modes.covered_modes,
        last.w2_mean,
        run.record.loss_v_std(5_000),
        run.aborted.as_deref().map(|r| format!(", aborted: {r}")).unwrap_or_default()
    ));
    run
}

/// Every toy run, plus a repeat of the first one for the determinism check.
struct ToySuite {
    runs: HashMap<(PresetName, u64), ToyRun>,
    repeat: ToyRun,
}

fn suite() -> &'static ToySuite {
    static SUITE: OnceLock<ToySuite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let mut runs = HashMap::new();
        for seed in SEEDS {
            for name in TOY_PRESETS {
                runs.insert((name, seed), toy_run(name, seed));
            }
        }
        let repeat = toy_run(PresetName::UotmSp, SEEDS[0]);
        ToySuite { runs, repeat }
    })
}

fn run(name: PresetName, seed: u64) -> &'static ToyRun {
    &suite().runs[&(name, seed)]
}

fn final_modes(r: &ToyRun) -> Option<usize> {
    r.aborted.is_none().then(|| r.record.final_modes.as_ref().map(|m| m.covered_modes)).flatten()
}

fn max_arc(r: &ToyRun, iter: u64) -> Option<f64> {
    r.record.snapshot_at(iter).map(|s| s.arc.max)
}

#[test]
fn criterion_07_toy_mode_coverage_and_stability() {
    let sp: Vec<Option<usize>> = SEEDS.iter().map(|&s| final_modes(run(PresetName::UotmSp, s))).collect();
    let nc: Vec<Option<usize>> = SEEDS.iter().map(|&s| final_modes(run(PresetName::UotmNoCost, s))).collect();
    let a = sp.iter().filter(|m| **m == Some(8)).count() >= 2;
    let b = nc.iter().filter(|m| m.is_some_and(|m| m <= 6)).count() >= 2;
    let ratios: Vec<Option<f64>> = SEEDS
        .iter()
        .map(|&s| {
            let w = run(PresetName::Wgan, s);
            let u = run(PresetName::UotmSp, s);
            (w.aborted.is_none() && u.aborted.is_none()).then(|| w.record.loss_v_std(5_000) / u.record.loss_v_std(5_000))
        })
        .collect();
    let c = ratios.iter().filter(|r| r.is_some_and(|r| r >= 3.0)).count() >= 2;
    report(
        7,
        a && b && c,
        &format!(
            "(a) UOTM_SP covered modes {sp:?} → {}; (b) UOTM_NoCost covered modes {nc:?} → {}; \
             (c) WGAN/UOTM_SP loss_v std ratio {ratios:.2?} → {}",
            pf(a),
            pf(b),
            pf(c)
        ),
    );
    assert!(a && b && c);
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

#[test]
fn criterion_08_bounded_arc() {
    let growth = |name| -> Vec<Option<f64>> {
        SEEDS
            .iter()
            .map(|&s| {
                let r = run(name, s);
                Some(max_arc(r, 30_000)? / max_arc(r, 5_000)?)
            })
            .collect()
    };
    let sp = growth(PresetName::UotmSp);
    let wg = growth(PresetName::Wgan);
    let sp_ok = sp.iter().filter(|g| g.is_some_and(|g| g <= 2.0)).count() >= 2;
    let wg_ok = wg.iter().filter(|g| g.is_some_and(|g| g >= 5.0)).count() >= 2;
    report(
        8,
        sp_ok && wg_ok,
        &format!(
            "max ARC growth 5K→30K: UOTM_SP {sp:.2?} (≤2 needed) → {}; WGAN {wg:.2?} (≥5 needed) → {}",
            pf(sp_ok),
            pf(wg_ok)
        ),
    );
    assert!(sp_ok && wg_ok);
}

#[test]
fn criterion_09_scheduled_divergence() {
    let s = DivergenceSchedule::linear(0.2, 5.0, 22_500);
    let endpoints = (schedule_alpha(&s, 0) - 0.2).abs() <= 1e-12
        && (schedule_alpha(&s, 22_500) - 5.0).abs() <= 1e-12
        && (schedule_alpha(&s, 30_000) - 5.0).abs() <= 1e-12;
    let c = DivergenceSchedule::cosine(0.2, 5.0, 22_500);
    let endpoints = endpoints
        && (schedule_alpha(&c, 0) - 0.2).abs() <= 1e-12
        && (schedule_alpha(&c, 22_500) - 5.0).abs() <= 1e-12;

    let w2 = |name, seed| {
        let r = run(name, seed);
        r.aborted.is_none().then_some(r.record.final_w2).flatten()
    };
    let pairs: Vec<(Option<f64>, Option<f64>)> =
        SEEDS.iter().map(|&s| (w2(PresetName::UotmSd, s), w2(PresetName::UotmSp, s))).collect();
    let wins = pairs.iter().filter(|(sd, sp)| matches!((sd, sp), (Some(a), Some(b)) if a <= b)).count();
    let ok = endpoints && wins >= 2;
    let shown: Vec<String> = pairs
        .iter()
        .map(|(a, b)| format!("{} vs {}", fmt_opt(*a), fmt_opt(*b)))
        .collect();
    report(
        9,
        ok,
        &format!(
            "schedule endpoints exact: {endpoints}; final W2 UOTM_SD vs UOTM_SP per seed: [{}] → SD ≤ SP in {wins}/3",
            shown.join(", ")
        ),
    );
    assert!(ok);
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "none".into())
}

#[test]
fn criterion_10_determinism() {
    let first = &run(PresetName::UotmSp, SEEDS[0]).record;
    let again = &suite().repeat.record;
    let (a, b) = (first.metrics_ndjson(), again.metrics_ndjson());
    let ok = !a.is_empty() && a.as_bytes() == b.as_bytes();
    report(
        10,
        ok,
        &format!("UOTM_SP seed {} metrics streams: {} vs {} bytes, identical: {}", SEEDS[0], a.len(), b.len(), a == b),
    );
    assert!(ok);
}
