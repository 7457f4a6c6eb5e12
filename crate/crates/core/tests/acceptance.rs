//! Exit criteria. Each test prints one `[PASS]`/`[FAIL]` line and then
//! asserts. Run with `cargo test -p viability-core --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use viability_core::invariance::Quantity;
use viability_core::models::{rate_alpha, rate_beta, REGISTRY};
use viability_core::sampling::Halton;
use viability_core::*;

/// Seed for the pinned ensembles.
const ENSEMBLE_SEED: u64 = 20240601;
const ENSEMBLE_PATHS: usize = 1000;

// Frozen from the first run of the harness at ENSEMBLE_SEED.
const GOLDEN_ADDITIVE_VIOLATING: usize = 1000;
const GOLDEN_ADDITIVE_DIVERGED: usize = 978;
const GOLDEN_LOGISTIC_ITO_VIOLATING: usize = 0;
const GOLDEN_LOGISTIC_STRAT_VIOLATING: usize = 0;

fn report(id: u32, ok: bool, detail: impl AsRef<str>) {
    println!(
        "[{}] criterion {id}: {}",
        if ok { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    assert!(ok, "criterion {id} failed: {}", detail.as_ref());
}

fn model(name: &str, sigma: f64, interpretation: Interpretation) -> SdeSystem {
    build_model(
        name,
        &ModelOptions {
            sigma: vec![sigma],
            interpretation,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn criterion_1_checker_verdicts_on_hh_variants() {
    let meta = hh_metadata();
    let cfg = CheckConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    let mut slowest = Duration::ZERO;
    for sigma in [0.1, 0.5] {
        let sys = model("hh-additive", sigma, Interpretation::Ito);
        let start = Instant::now();
        let rep = check_box(&sys, &meta.region, &cfg).unwrap();
        slowest = slowest.max(start.elapsed());
        let faces_hit = rep
            .faces
            .iter()
            .filter(|f| {
                f.witnesses
                    .iter()
                    .any(|w| w.quantity == Quantity::DiffusionNonzero && w.value == sigma)
            })
            .count();
        ok &= rep.verdict == Verdict::Violated && rep.faces.len() == 6 && faces_hit == 6;
        notes.push(format!(
            "additive σ={sigma}: {:?}, {faces_hit}/6 faces with diffusion witness",
            rep.verdict
        ));
    }
    for sigma in [0.1, 0.5] {
        let sys = model("hh-logistic", sigma, Interpretation::Ito);
        let start = Instant::now();
        let rep = check_box(&sys, &meta.region, &cfg).unwrap();
        slowest = slowest.max(start.elapsed());
        let max_g = rep.max_diffusion_abs();
        ok &= rep.verdict == Verdict::Satisfied && max_g <= 1e-12;
        notes.push(format!(
            "logistic σ={sigma}: {:?}, max face |g| = {max_g:e}",
            rep.verdict
        ));
    }
    ok &= slowest < Duration::from_secs(1);
    notes.push(format!("slowest check {slowest:?}"));
    report(1, ok, notes.join("; "));
}

#[test]
fn criterion_2_gating_drift_on_faces() {
    let sys = model("hh-det", 0.5, Interpretation::Ito);
    let halton = Halton::new(1, 2).unwrap();
    let mut u = [0.0];
    let mut ok = true;
    let mut checked = 0;
    for k in 0..4096 {
        halton.point(k, &mut u);
        let v = -100.0 + 160.0 * u[0];
        for gate in Gate::ALL {
            let i = gate.index();
            let mut x = vec![0.5, 0.5, 0.5, v];
            x[i] = 0.0;
            let at_zero = sys.eval_drift(0.0, &x).unwrap()[i];
            x[i] = 1.0;
            let at_one = sys.eval_drift(0.0, &x).unwrap()[i];
            let (a, b) = (rate_alpha(gate, v), rate_beta(gate, v));
            ok &= at_zero == a && a > 0.0 && at_one == -b && b > 0.0;
            checked += 1;
        }
    }
    report(
        2,
        ok,
        format!("{checked} (gate, V) pairs: f_i(V,0) = α_i(V) > 0 and f_i(V,1) = -β_i(V) < 0 exactly"),
    );
}

#[test]
fn criterion_3_rate_point_values() {
    let exact = [
        ("α3(-60)", rate_alpha(Gate::NaInactivation, -60.0), 0.07),
        ("β1(-60)", rate_beta(Gate::NaActivation, -60.0), 4.0),
        ("β2(-60)", rate_beta(Gate::KActivation, -60.0), 0.125),
        ("β3(-30)", rate_beta(Gate::NaInactivation, -30.0), 0.5),
    ];
    let limits = [
        ("α1(-35)", rate_alpha(Gate::NaActivation, -35.0), 1.0),
        ("α2(-50)", rate_alpha(Gate::KActivation, -50.0), 0.1),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, got, want) in exact {
        ok &= got == want;
        notes.push(format!("{name}={got}"));
    }
    for (name, got, want) in limits {
        ok &= (got - want).abs() <= 1e-9;
        notes.push(format!("{name}={got}"));
    }
    report(3, ok, notes.join(", "));
}

#[test]
fn criterion_4_conversion() {
    let strat = model("hh-logistic", 0.5, Interpretation::Stratonovich);
    let fd = JacobianPolicy::default();

    // analytic vs central differences on the interior grid
    let mut worst_rel: f64 = 0.0;
    let mut grid_ok = true;
    for v in [-80.0, -60.0, -20.0] {
        for a in 0..10 {
            for b in 0..10 {
                for c in 0..10 {
                    let x = [0.05 + 0.1 * a as f64, 0.05 + 0.1 * b as f64, 0.05 + 0.1 * c as f64, v];
                    let ha = correction(&strat, 0.0, &x, JacobianPolicy::Analytic).unwrap();
                    let hf = correction(&strat, 0.0, &x, fd).unwrap();
                    for (p, q) in ha.iter().zip(&hf) {
                        if *p == 0.0 {
                            grid_ok &= *q == 0.0;
                        } else {
                            let rel = ((p - q) / p).abs();
                            worst_rel = worst_rel.max(rel);
                            grid_ok &= rel <= 1e-6;
                        }
                    }
                }
            }
        }
    }

    // h_i on the faces {x_i = 0} and {x_i = 1}, every built-in
    let meta = hh_metadata();
    let halton = Halton::new(3, 8).unwrap();
    let mut u = [0.0; 3];
    let mut face_max: f64 = 0.0;
    for name in REGISTRY {
        let sys = model(name, 0.5, Interpretation::Stratonovich);
        for i in 0..3 {
            for side in [0.0, 1.0] {
                for k in 0..512 {
                    halton.point(k, &mut u);
                    let mut x = vec![u[0], u[1], u[2], -100.0 + 160.0 * u[2]];
                    x[i] = side;
                    let h = correction(&sys, 0.0, &x, JacobianPolicy::Analytic).unwrap();
                    face_max = face_max.max(h[i].abs());
                }
            }
        }
    }
    let faces_ok = face_max <= 1e-8;

    // verdicts before and after adding h/2
    let mut agree = true;
    let mut verdicts = Vec::new();
    for name in REGISTRY {
        let sys = model(name, 0.5, Interpretation::Stratonovich);
        let ito = stratonovich_to_ito(&sys, JacobianPolicy::Analytic).unwrap();
        let a = check_box(&sys, &meta.region, &CheckConfig::default()).unwrap().verdict;
        let b = check_box(&ito, &meta.region, &CheckConfig::default()).unwrap().verdict;
        agree &= a == b;
        verdicts.push(format!("{name}: {a:?}/{b:?}"));
    }
    report(
        4,
        grid_ok && faces_ok && agree,
        format!(
            "worst analytic/FD relative gap {worst_rel:e} (≤1e-6), max |h_i| on faces {face_max:e} (≤1e-8), verdicts {}",
            verdicts.join(", ")
        ),
    );
}

#[test]
fn criterion_5_em_strong_order_on_gbm() {
    let start = Instant::now();
    let (a, b, x0) = (0.5, 1.0, 1.0);
    let sys = SdeSystem::new(
        "gbm",
        1,
        1,
        move |_, x: &[f64], o: &mut [f64]| o[0] = a * x[0],
        move |_, x: &[f64], o: &mut [f64]| o[0] = b * x[0],
    )
    .unwrap();
    let fine = TimeGrid::new(0.0, 1.0, 1 << 10).unwrap();
    let levels: Vec<u32> = (4..=10).collect();
    let mut sq = vec![0.0; levels.len()];
    let paths = 1000u64;
    for p in 0..paths {
        let w = WienerGrid::generate(ENSEMBLE_SEED, p, fine, 1);
        // exact solution driven by the same Brownian path
        let exact = x0 * ((a - 0.5 * b * b) + b * w.total()[0]).exp();
        for (l, &k) in levels.iter().enumerate() {
            let noise = w.coarsen(1 << (10 - k)).unwrap();
            let cfg = SimConfig::new(*noise.grid(), vec![x0], ENSEMBLE_SEED);
            let end = simulate(&sys, &cfg, &noise).unwrap().endpoint()[0];
            sq[l] += (end - exact).powi(2);
        }
    }
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .zip(&sq)
        .map(|(&k, s)| (-(k as f64), (s / paths as f64).sqrt().log2()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let slope =
        pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let elapsed = start.elapsed();
    report(
        5,
        (0.35..=0.65).contains(&slope) && elapsed < Duration::from_secs(30),
        format!("log2 RMS error vs log2 dt slope {slope:.4} (in [0.35, 0.65]), {elapsed:?}"),
    );
}

#[test]
fn criterion_6_additive_noise_interpretations_coincide() {
    let grid = TimeGrid::new(0.0, 50.0, 5000).unwrap();
    let meta = hh_metadata();
    let mut worst: f64 = 0.0;
    let mut ok = true;
    let mut compared = 0;
    for sigma in [0.1, 0.5] {
        let ito = model("hh-additive", sigma, Interpretation::Ito);
        let strat = model("hh-additive", sigma, Interpretation::Stratonovich);
        let cfg = SimConfig::new(grid, meta.initial_state.to_vec(), ENSEMBLE_SEED);
        for p in 0..8 {
            let noise = WienerGrid::generate(ENSEMBLE_SEED, p, grid, 3);
            let em = simulate(&ito, &cfg, &noise);
            let heun = simulate(&strat, &cfg, &noise);
            match (em, heun) {
                (Ok(a), Ok(b)) => {
                    for (x, y) in a.states().zip(b.states()) {
                        for (u, v) in x.iter().zip(y) {
                            worst = worst.max((u - v).abs());
                        }
                    }
                    compared += 1;
                }
                (
                    Err(Error::Integration {
                        step: s1,
                        last_state: l1,
                        ..
                    }),
                    Err(Error::Integration {
                        step: s2,
                        last_state: l2,
                        ..
                    }),
                ) => {
                    ok &= s1 == s2 && l1 == l2;
                }
                _ => ok = false,
            }
        }
    }
    ok &= worst < 1e-10 && compared > 0;
    report(
        6,
        ok,
        format!("{compared} finite path pairs, max coordinate gap {worst:e} (< 1e-10)"),
    );
}

fn pinned_ensembles(workers: Option<usize>) -> [EnsembleStats; 3] {
    let meta = hh_metadata();
    let grid = TimeGrid::new(0.0, 50.0, 5000).unwrap();
    let cfg = SimConfig::new(grid, meta.initial_state.to_vec(), ENSEMBLE_SEED);
    let opts = EnsembleOptions {
        workers,
        ..Default::default()
    };
    let run =
        |name, interp| run_ensemble_with(&model(name, 0.5, interp), &cfg, ENSEMBLE_PATHS, &meta.region, &opts).unwrap();
    [
        run("hh-additive", Interpretation::Ito),
        run("hh-logistic", Interpretation::Ito),
        run("hh-logistic", Interpretation::Stratonovich),
    ]
}

#[test]
fn criterion_7_violation_fractions() {
    let start = Instant::now();
    let [add, log_ito, log_strat] = pinned_ensembles(None);
    let elapsed = start.elapsed();
    let ok = add.violation_fraction > 0.5
        && log_ito.violation_fraction < 0.05
        && log_strat.violation_fraction < 0.05
        && add.n_violating == GOLDEN_ADDITIVE_VIOLATING
        && add.failed_paths.len() == GOLDEN_ADDITIVE_DIVERGED
        && log_ito.n_violating == GOLDEN_LOGISTIC_ITO_VIOLATING
        && log_strat.n_violating == GOLDEN_LOGISTIC_STRAT_VIOLATING
        && elapsed < Duration::from_secs(120);
    report(
        7,
        ok,
        format!(
            "additive σ=0.5: {} ({} diverged); logistic Itô: {}; logistic Stratonovich: {}; {elapsed:?}",
            add.violation_fraction,
            add.failed_paths.len(),
            log_ito.violation_fraction,
            log_strat.violation_fraction
        ),
    );
}

#[test]
fn criterion_8_worker_count_independence() {
    let one = pinned_ensembles(Some(1));
    let eight = pinned_ensembles(Some(8));
    let mut ok = true;
    for (a, b) in one.iter().zip(&eight) {
        ok &= a.to_json_pretty().unwrap() == b.to_json_pretty().unwrap();
    }
    report(
        8,
        ok,
        "stats JSON identical for 1 and 8 workers on all three pinned ensembles",
    );
}

#[test]
fn criterion_9_comparison_checker() {
    let cfg = CheckConfig::default();
    let scalar = SdeSystem::new(
        "scalar",
        1,
        1,
        |_, x: &[f64], o: &mut [f64]| o[0] = 1.0 - x[0] * x[0],
        |_, x: &[f64], o: &mut [f64]| o[0] = 0.4 * x[0].sin(),
    )
    .unwrap();
    let identical = check_comparison(&scalar, &scalar, &[0], &cfg).unwrap();

    let pair = |cross: bool| {
        SdeSystem::new(
            "pair",
            2,
            2,
            |_, x: &[f64], o: &mut [f64]| o[0] = x[1],
            move |_, x: &[f64], o: &mut [f64]| {
                if cross {
                    o[0] = x[1];
                } else {
                    o[0] = 0.5 * x[0];
                    o[3] = 0.5 * x[1];
                }
            },
        )
        .unwrap()
    };
    let monotone = check_comparison(&pair(false), &pair(false), &[0, 1], &cfg).unwrap();
    let mismatched = check_comparison(&pair(true), &pair(true), &[0, 1], &cfg).unwrap();
    let strict_pairs_flagged = mismatched.faces[0].violations == mismatched.faces[0].samples;
    let ok = identical.verdict == Verdict::Satisfied
        && monotone.verdict == Verdict::Satisfied
        && mismatched.verdict == Verdict::Violated
        && strict_pairs_flagged;
    report(
        9,
        ok,
        format!(
            "identical scalar: {:?}; monotone drift pair: {:?}; cross diffusion: {:?} ({}/{} pairs flagged)",
            identical.verdict,
            monotone.verdict,
            mismatched.verdict,
            mismatched.faces[0].violations,
            mismatched.faces[0].samples
        ),
    );
}
