//! Acceptance checks. Every test prints one `criterion N: PASS|FAIL` line
//! before asserting, so `cargo test --test acceptance -- --nocapture` reads
//! as a checklist.

use std::fs;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tubecast::experiment::{self, Method, RunConfig, RunOutcome};
use tubecast::losses::{
    classify_region, fit_constant_interval, pinball_loss, qd_loss, tube_loss, tube_loss_grad, ConstantFitOptions,
    IntervalPrediction, QdConfig, TubeConfig,
};
use tubecast::metrics::{pct_improvement, rank_models, EvalSummary};
use tubecast::net::{grad_check, Architecture, Head, ModelSpec, PiModel};
use tubecast::series::Scaler;
use tubecast::synth::{SyntheticKind, SyntheticSpec};

const LOSS_CASES: usize = 10_000;
const LOSS_ORACLE_SECS: f64 = 5.0;
const LOSS_GRAD_TOL: f64 = 1e-6;
const NET_GRAD_TOL: f64 = 1e-4;
const GRAD_SUITE_SECS: f64 = 120.0;
const CONSTANT_FIT_TOL: f64 = 0.02;
const GRID_AGREEMENT: f64 = 0.005;
const RATIO_REL_TOL: f64 = 0.30;
const PICP_BAND: (f64, f64) = (0.92, 0.98);
const SEEDS: u64 = 5;
const SEEDS_IN_BAND: usize = 4;
const MODEL_SECS: f64 = 300.0;
const RECAL_SEEDS: u64 = 20;
const RECAL_TRIGGER: f64 = 0.955;
const RECAL_TARGET: f64 = 0.95;
const MEDIAN_PICP_FLOOR: f64 = 0.94;
const ARITHMETIC_TOL: f64 = 0.01;

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} failed: {detail}");
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Branch evaluator written against the error form `u1 = y - lower`,
/// `u2 = y - upper`, with `t = 1 - alpha`. Returns the loss and the region index.
fn oracle_tube(y: f64, lower: f64, upper: f64, alpha: f64, r: f64) -> (f64, usize) {
    let t = 1.0 - alpha;
    let u1 = y - lower;
    let u2 = y - upper;
    if u2 > 0.0 {
        (t * u2, 0)
    } else if u1 < 0.0 {
        (-t * u1, 3)
    } else if r * u2 + (1.0 - r) * u1 >= 0.0 {
        (-(1.0 - t) * u2, 1)
    } else {
        ((1.0 - t) * u1, 2)
    }
}

fn base_config(arch: Architecture, method: Method, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.method = method;
    cfg.model.architecture = arch;
    cfg.data.synthetic = Some(SyntheticSpec::new(SyntheticKind::SineHetero, 5000, seed));
    cfg
}

struct SeedRuns {
    outcomes: Vec<RunOutcome>,
    secs: f64,
}

fn run_seeds(arch: Architecture, method: Method) -> SeedRuns {
    let started = Instant::now();
    let outcomes = (0..SEEDS)
        .map(|seed| experiment::run(&base_config(arch, method, seed)).expect("run completes"))
        .collect();
    SeedRuns {
        outcomes,
        secs: started.elapsed().as_secs_f64(),
    }
}

fn mlp_tube() -> &'static SeedRuns {
    static RUNS: OnceLock<SeedRuns> = OnceLock::new();
    RUNS.get_or_init(|| run_seeds(Architecture::Mlp, Method::Tube))
}

fn gru_tube() -> &'static SeedRuns {
    static RUNS: OnceLock<SeedRuns> = OnceLock::new();
    RUNS.get_or_init(|| run_seeds(Architecture::Gru, Method::Tube))
}

fn gru_quantile() -> &'static SeedRuns {
    static RUNS: OnceLock<SeedRuns> = OnceLock::new();
    RUNS.get_or_init(|| run_seeds(Architecture::Gru, Method::Quantile))
}

#[test]
fn criterion_1_loss_matches_branch_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut value_mismatches = 0;
    let mut region_mismatches = 0;
    for _ in 0..LOSS_CASES {
        let alpha = rng.gen_range(0.01..0.5);
        let r = rng.gen_range(0.05..0.95);
        let a: f64 = rng.gen_range(-5.0..5.0);
        let b: f64 = rng.gen_range(-5.0..5.0);
        let (lower, upper) = (a.min(b), a.max(b));
        let y = rng.gen_range(-7.0..7.0);
        let pred = IntervalPrediction::new(lower, upper);
        let (expected, branch) = oracle_tube(y, lower, upper, alpha, r);
        if tube_loss(y, pred, alpha, r).unwrap() != expected {
            value_mismatches += 1;
        }
        if classify_region(y, pred, r).unwrap().index() != branch {
            region_mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        value_mismatches == 0 && region_mismatches == 0 && secs < LOSS_ORACLE_SECS,
        &format!(
            "{LOSS_CASES} tuples, {value_mismatches} value and {region_mismatches} region mismatches, {secs:.3}s"
        ),
    );
}

/// Relative error once the gradient is at least 1, absolute error below that.
/// QD components far from any bound are around 1e-9, below the roundoff of a
/// central difference on an objective in the hundreds.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn loss_gradient_errors() -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let h = 1e-6;

    let mut tube_worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 2000 {
        let alpha = rng.gen_range(0.01..0.5);
        let r = rng.gen_range(0.05..0.95);
        let lower = rng.gen_range(-3.0..0.0);
        let upper = lower + rng.gen_range(0.1..4.0);
        let y: f64 = rng.gen_range(-5.0..5.0);
        let blend = r * upper + (1.0 - r) * lower;
        if [lower, upper, blend].iter().any(|k| (y - k).abs() < 1e-3) {
            continue;
        }
        let f = |lo: f64, hi: f64| tube_loss(y, IntervalPrediction::new(lo, hi), alpha, r).unwrap();
        let (d_lo, d_hi) = tube_loss_grad(y, IntervalPrediction::new(lower, upper), alpha, r).unwrap();
        let n_lo = (f(lower + h, upper) - f(lower - h, upper)) / (2.0 * h);
        let n_hi = (f(lower, upper + h) - f(lower, upper - h)) / (2.0 * h);
        tube_worst = tube_worst.max(rel_err(d_lo, n_lo)).max(rel_err(d_hi, n_hi));
        checked += 1;
    }

    let mut pinball_worst: f64 = 0.0;
    checked = 0;
    while checked < 2000 {
        let tau = rng.gen_range(0.01..0.99);
        let q = rng.gen_range(-3.0..3.0);
        let y: f64 = rng.gen_range(-3.0..3.0);
        if (y - q).abs() < 1e-3 {
            continue;
        }
        let (_, d) = pinball_loss(y, q, tau).unwrap();
        let n = (pinball_loss(y, q + h, tau).unwrap().0 - pinball_loss(y, q - h, tau).unwrap().0) / (2.0 * h);
        pinball_worst = pinball_worst.max(rel_err(d, n));
        checked += 1;
    }

    // QD: targets kept at least 0.05 from both bounds so the hard capture
    // indicator cannot flip under the perturbation.
    let mut qd_worst: f64 = 0.0;
    let cfg = QdConfig::new(0.05);
    for _ in 0..20 {
        let mut preds = Vec::new();
        let mut targets = Vec::new();
        while preds.len() < 16 {
            let lower = rng.gen_range(-1.0..0.0);
            let upper = lower + rng.gen_range(0.2..1.5);
            let y: f64 = rng.gen_range(-1.5..1.5);
            if (y - lower).abs() < 0.05 || (y - upper).abs() < 0.05 {
                continue;
            }
            preds.push(IntervalPrediction::new(lower, upper));
            targets.push(y);
        }
        let analytic = qd_loss(&preds, &targets, &cfg).unwrap().grads;
        for i in 0..preds.len() {
            for side in 0..2 {
                let eval = |shift: f64| {
                    let mut p = preds.clone();
                    if side == 0 {
                        p[i].lower += shift;
                    } else {
                        p[i].upper += shift;
                    }
                    qd_loss(&p, &targets, &cfg).unwrap().value
                };
                let n = (eval(h) - eval(-h)) / (2.0 * h);
                qd_worst = qd_worst.max(rel_err(analytic[i][side], n));
            }
        }
    }
    (tube_worst, pinball_worst, qd_worst)
}

fn net_gradient_errors() -> Vec<(Architecture, f64)> {
    let specs = [
        ModelSpec::new(Architecture::Mlp, 12, Head::Interval).with_hidden(vec![16, 16]),
        ModelSpec::new(Architecture::Gru, 8, Head::Interval).with_hidden(vec![8]),
        ModelSpec::new(Architecture::Lstm, 8, Head::Interval).with_hidden(vec![8]),
        ModelSpec::new(Architecture::Tcn, 12, Head::Interval)
            .with_hidden(vec![6])
            .with_tcn(3, vec![1, 2]),
    ];
    specs
        .into_iter()
        .map(|spec| {
            let lag = spec.lag;
            let arch = spec.architecture;
            let model = PiModel::init(spec.with_seed(19), Scaler::identity()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let batch: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..lag).map(|_| rng.gen_range(-1.5..1.5)).collect())
                .collect();
            (arch, grad_check(&model, &batch, 1e-5).unwrap())
        })
        .collect()
}

#[test]
fn criterion_2_gradient_suite() {
    let started = Instant::now();
    let (tube, pinball, qd) = loss_gradient_errors();
    let nets = net_gradient_errors();
    let secs = started.elapsed().as_secs_f64();
    let losses_ok = tube <= LOSS_GRAD_TOL && pinball <= LOSS_GRAD_TOL && qd <= LOSS_GRAD_TOL;
    let nets_ok = nets.iter().all(|(_, e)| *e <= NET_GRAD_TOL);
    let net_text: Vec<String> = nets.iter().map(|(a, e)| format!("{a} {e:.2e}")).collect();
    report(
        2,
        losses_ok && nets_ok && secs < GRAD_SUITE_SECS,
        &format!(
            "tube {tube:.2e}, pinball {pinball:.2e}, qd {qd:.2e}, {}, {secs:.1}s",
            net_text.join(", ")
        ),
    );
}

fn grid_minimizer(samples: &[f64], alpha: f64, r: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=100 {
        let lower = i as f64 * 0.001;
        for j in 0..=100 {
            let upper = 0.9 + j as f64 * 0.001;
            let total: f64 = samples.iter().map(|&y| oracle_tube(y, lower, upper, alpha, r).0).sum();
            if total < best.0 {
                best = (total, lower, upper);
            }
        }
    }
    (best.1, best.2)
}

#[test]
fn criterion_3_constant_fit_is_calibrated() {
    let alpha = 0.1;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let samples: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cfg = TubeConfig::new(alpha).with_r(0.5).with_delta(0.0);
    let fit = fit_constant_interval(&samples, &cfg, ConstantFitOptions::default()).unwrap();
    let (grid_lo, grid_hi) = grid_minimizer(&samples, alpha, 0.5);

    let mut m = [0usize; 4];
    for &y in &samples {
        m[classify_region(y, fit, 0.5).unwrap().index()] += 1;
    }
    let expected = alpha / (1.0 - alpha);
    let upper_ratio = m[0] as f64 / m[1] as f64;
    let lower_ratio = m[3] as f64 / m[2] as f64;
    let ratio_ok = |x: f64| ((x - expected) / expected).abs() <= RATIO_REL_TOL;

    let pass = (fit.lower - 0.05).abs() <= CONSTANT_FIT_TOL
        && (fit.upper - 0.95).abs() <= CONSTANT_FIT_TOL
        && (grid_lo - 0.05).abs() <= CONSTANT_FIT_TOL
        && (grid_hi - 0.95).abs() <= CONSTANT_FIT_TOL
        && (fit.lower - grid_lo).abs() <= GRID_AGREEMENT
        && (fit.upper - grid_hi).abs() <= GRID_AGREEMENT
        && ratio_ok(upper_ratio)
        && ratio_ok(lower_ratio);
    report(
        3,
        pass,
        &format!(
            "fit ({:.4}, {:.4}), grid ({grid_lo:.3}, {grid_hi:.3}), m1/m2 {upper_ratio:.4}, m4/m3 {lower_ratio:.4}, expected {expected:.4}",
            fit.lower, fit.upper
        ),
    );
}

fn coverage_line(runs: &SeedRuns) -> (usize, Vec<String>) {
    let picps: Vec<f64> = runs.outcomes.iter().map(|o| o.test.picp).collect();
    let hits = picps.iter().filter(|p| (PICP_BAND.0..=PICP_BAND.1).contains(*p)).count();
    (hits, picps.iter().map(|p| format!("{p:.4}")).collect())
}

#[test]
fn criterion_4_end_to_end_coverage() {
    let mlp = mlp_tube();
    let gru = gru_tube();
    let (mlp_hits, mlp_picps) = coverage_line(mlp);
    let (gru_hits, gru_picps) = coverage_line(gru);
    let pass = mlp_hits >= SEEDS_IN_BAND && gru_hits >= SEEDS_IN_BAND && mlp.secs < MODEL_SECS && gru.secs < MODEL_SECS;
    report(
        4,
        pass,
        &format!(
            "mlp {mlp_hits}/{SEEDS} in band [{}] {:.0}s total; gru {gru_hits}/{SEEDS} [{}] {:.0}s total",
            mlp_picps.join(", "),
            mlp.secs,
            gru_picps.join(", "),
            gru.secs
        ),
    );
}

#[test]
fn criterion_5_recalibration_never_widens() {
    let mut qualifying = Vec::new();
    let mut failures = Vec::new();
    let mut trace_ok = true;
    for seed in 0..RECAL_SEEDS {
        let mut cfg = base_config(Architecture::Mlp, Method::Tube, seed);
        cfg.recalibrate.enabled = true;
        let prepared = experiment::prepare(&cfg).unwrap();
        let run = experiment::train_method(&cfg, &prepared, Method::Tube, Architecture::Mlp, seed).unwrap();
        let rec = run.recal.as_ref().expect("recalibration report");
        trace_ok &= rec
            .rounds
            .iter()
            .enumerate()
            .all(|(k, round)| round.delta == k as f64 / 100.0);

        let first = &rec.rounds[0];
        if first.validation_picp > RECAL_TRIGGER {
            let chosen = rec.chosen_round();
            let ok = chosen.validation_mpiw <= first.validation_mpiw
                && chosen.validation_picp >= RECAL_TARGET
                && run.validation.mpiw == chosen.validation_mpiw
                && run.validation.picp == chosen.validation_picp;
            qualifying.push(format!(
                "seed {seed}: round 0 ({:.4}, {:.3}) -> round {} ({:.4}, {:.3})",
                first.validation_picp, first.validation_mpiw, rec.chosen, chosen.validation_picp, chosen.validation_mpiw
            ));
            if !ok {
                failures.push(seed);
            }
        }
    }
    report(
        5,
        !qualifying.is_empty() && failures.is_empty() && trace_ok,
        &format!(
            "{} of {RECAL_SEEDS} seeds qualify, failures {failures:?}, delta trace ok {trace_ok}; {}",
            qualifying.len(),
            qualifying.join("; ")
        ),
    );
}

#[test]
fn criterion_6_tube_narrower_than_quantile_pair() {
    let tube = gru_tube();
    let quantile = gru_quantile();
    let med = |runs: &SeedRuns, f: fn(&EvalSummary) -> f64| median(runs.outcomes.iter().map(|o| f(&o.test)).collect());
    let tube_mpiw = med(tube, |s| s.mpiw);
    let quant_mpiw = med(quantile, |s| s.mpiw);
    let tube_picp = med(tube, |s| s.picp);
    let quant_picp = med(quantile, |s| s.picp);
    report(
        6,
        tube_mpiw <= quant_mpiw && tube_picp >= MEDIAN_PICP_FLOOR && quant_picp >= MEDIAN_PICP_FLOOR,
        &format!(
            "gru median MPIW tube {tube_mpiw:.4} vs quantile {quant_mpiw:.4}; median PICP tube {tube_picp:.4}, quantile {quant_picp:.4}"
        ),
    );
}

#[test]
fn criterion_7_published_arithmetic() {
    // (baseline MPIW, tube MPIW, published % improvement)
    let improvements = [
        (5.947, 4.681, 21.29),
        (5.181, 4.681, 9.65),
        (6.2023, 4.681, 24.53),
        (3.982, 3.514, 11.75),
        (4.798, 3.514, 26.76),
        (6.3553, 3.514, 44.71),
        (4.626, 3.514, 24.04),
        (3.809, 3.627, 4.78),
        (4.5008, 3.627, 19.41),
        (3.487, 3.627, -4.014),
        (6.519, 3.627, 44.36),
    ];
    let worst_pct = improvements
        .iter()
        .map(|&(base, tube, published)| (pct_improvement(base, tube).unwrap() - published).abs())
        .fold(0.0, f64::max);

    let table: Vec<(String, EvalSummary)> = [
        ("LSTM+Tube", 0.9589, 3.697),
        ("LSTM+QD", 0.9689, 4.47),
        ("LSTM+Quantile", 0.979, 4.937),
        ("GRU+Tube", 0.955, 3.392),
        ("GRU+QD", 0.9666, 3.966),
        ("GRU+Quantile", 0.9891, 5.365),
        ("TCN+Tube", 0.9581, 3.453),
        ("TCN+QD", 0.9589, 3.511),
        ("TCN+Quantile", 0.9674, 4.094),
        ("MDN", 0.955, 4.626),
        ("Time GPT", 0.9417, 10.608),
        ("DeepAR", 0.9969, 6.3553),
    ]
    .iter()
    .map(|&(name, picp, mpiw)| (name.to_string(), EvalSummary::reported(picp, mpiw)))
    .collect();
    let ranked = rank_models(&table, 0.95).unwrap();
    let expected = [("GRU+Tube", 3.55), ("TCN+Tube", 3.60), ("TCN+QD", 3.66), ("LSTM+Tube", 3.86)];
    let top_ok = ranked.iter().zip(expected).all(|(entry, (name, ratio))| {
        entry.name == name && (entry.summary.mpiw_over_picp.unwrap() - ratio).abs() <= ARITHMETIC_TOL
    });
    let top: Vec<String> = ranked
        .iter()
        .take(4)
        .map(|e| format!("{} {:.4}", e.name, e.summary.mpiw_over_picp.unwrap()))
        .collect();
    report(
        7,
        worst_pct <= ARITHMETIC_TOL && top_ok,
        &format!(
            "{} improvement rows, worst deviation {worst_pct:.4} pp; top 4: {}",
            improvements.len(),
            top.join(", ")
        ),
    );
}

#[test]
fn criterion_8_larger_r_lifts_the_blend_line() {
    let mut lifted = 0;
    let mut lines = Vec::new();
    for seed in 0..SEEDS {
        let series = SyntheticSpec::new(SyntheticKind::LognormalSkew, 5000, seed).generate().unwrap();
        let fit = |r: f64| {
            let cfg = TubeConfig::new(0.05).with_r(r).with_delta(0.0);
            fit_constant_interval(series.values(), &cfg, ConstantFitOptions::default())
                .unwrap()
                .blend(r)
        };
        let (mid, high) = (fit(0.5), fit(0.8));
        if high > mid {
            lifted += 1;
        }
        lines.push(format!("{mid:.3}->{high:.3}"));
    }
    report(
        8,
        lifted == SEEDS as usize,
        &format!("{lifted}/{SEEDS} seeds, blend r=0.5 -> r=0.8: {}", lines.join(", ")),
    );
}

fn forecast_bytes(cfg: &RunConfig, outcome: &RunOutcome) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    experiment::write_outcome(cfg, outcome, dir.path()).unwrap();
    fs::read(dir.path().join("forecast.csv")).unwrap()
}

#[test]
fn criterion_9_repeat_runs_are_byte_identical() {
    let mut identical = 0;
    let mut checked = 0;
    for (arch, runs) in [(Architecture::Mlp, mlp_tube()), (Architecture::Gru, gru_tube())] {
        let seed = 0;
        let cfg = base_config(arch, Method::Tube, seed);
        let again = experiment::run(&cfg).unwrap();
        checked += 1;
        if forecast_bytes(&cfg, &runs.outcomes[seed as usize]) == forecast_bytes(&cfg, &again) {
            identical += 1;
        }
    }
    report(
        9,
        identical == checked,
        &format!("{identical}/{checked} repeated runs (mlp, gru seed 0) wrote identical forecast.csv"),
    );
}
