//! Acceptance suite: one pass/fail line per criterion.
//!
//! Runs as a plain binary (no libtest harness) so the report is printed on
//! every `cargo test`; the process fails if any criterion fails.

use std::time::{Duration, Instant};

use ctmdp::estimators::PairStatistics;
use ctmdp::generator::{generate, Family, GeneratorSpec};
use ctmdp::learner::{CtUcrl, LearnerSpec, UniformRandom};
use ctmdp::lower_bound::{compute_c, compute_k, kl_exponential};
use ctmdp::model::{CtmdpModel, Policy};
use ctmdp::optimism::{extended_value_iteration, inner_max_transition};
use ctmdp::planning::{optimality_residual, policy_gain, solve_average_reward};
use ctmdp::sim::{count_bounds_check, estimate_policy_gain_mc, simulate, Horizon, RegretRecord, SimulationConfig};
use ctmdp::ConfidenceSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn two_state_benchmark() -> CtmdpModel<f64> {
    CtmdpModel::from_json_str(include_str!("../../../configs/two_state_benchmark.json")).unwrap()
}

fn bandit(lambda_max: f64) -> CtmdpModel<f64> {
    CtmdpModel::new(1, 2, 0.5, lambda_max, vec![vec![1.0, 0.5]], vec![vec![1.0, 1.0]], vec![vec![vec![1.0], vec![1.0]]], None)
        .unwrap()
}

/// Mixed small instances: dense and birth-death, S ≤ `max_s`, A ≤ `max_a`.
fn random_instance(i: u64, max_s: usize, max_a: usize) -> CtmdpModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE + i);
    let s = rng.gen_range(1..=max_s);
    let a = rng.gen_range(1..=max_a);
    let lambda_min = rng.gen_range(0.2..1.0);
    let lambda_max = lambda_min * rng.gen_range(1.0..5.0);
    let family = if i % 2 == 0 { Family::RandomDense } else { Family::BirthDeath };
    generate(&GeneratorSpec::new(family, s, a, lambda_min, lambda_max, i)).unwrap()
}

/// Gain of a stationary policy from the embedded chain's stationary law,
/// found by power iteration on the lazy chain.
fn oracle_gain(model: &CtmdpModel<f64>, policy: &Policy) -> f64 {
    let n = model.num_states();
    let mut mu = vec![1.0 / n as f64; n];
    for _ in 0..200_000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let p = model.transition(s, policy.action(s));
            next[s] += 0.5 * mu[s];
            for j in 0..n {
                next[j] += 0.5 * mu[s] * p[j];
            }
        }
        let change: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        mu = next;
        if change < 1e-15 {
            break;
        }
    }
    let reward: f64 = (0..n).map(|s| mu[s] * model.reward(s, policy.action(s))).sum();
    let time: f64 = (0..n).map(|s| mu[s] / model.rate(s, policy.action(s))).sum();
    reward / time
}

fn planner_correctness() -> Outcome {
    let results: Vec<(f64, f64)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let m = random_instance(i, 5, 3);
            let sol = solve_average_reward(&m, 1e-10).unwrap();
            let residual = optimality_residual(&m, sol.gain, &sol.bias);
            let mut best = f64::NEG_INFINITY;
            let mut best_oracle = f64::NEG_INFINITY;
            for p in Policy::enumerate(m.num_states(), m.num_actions()).unwrap() {
                best = best.max(policy_gain(&m, &p, 1e-12).unwrap());
                best_oracle = best_oracle.max(oracle_gain(&m, &p));
            }
            (residual, (sol.gain - best).abs().max((sol.gain - best_oracle).abs()))
        })
        .collect();
    let worst_res = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let worst_gap = results.iter().map(|r| r.1).fold(0.0, f64::max);
    outcome(
        worst_res <= 1e-8 && worst_gap <= 1e-7,
        format!("200 instances, max residual {worst_res:.2e} (<= 1e-8), max |rho* - best policy gain| {worst_gap:.2e} (<= 1e-7)"),
    )
}

fn simulator_consistency() -> Outcome {
    let m = CtmdpModel::new(
        2,
        1,
        1.0,
        1.0,
        vec![vec![1.0], vec![0.0]],
        vec![vec![1.0], vec![1.0]],
        vec![vec![vec![0.0, 1.0]], vec![vec![1.0, 0.0]]],
        None,
    )
    .unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    let est = estimate_policy_gain_mc(&m, &Policy::constant(2, 0), 1e4, &seeds).unwrap();
    // renewal reward: one unit per cycle of mean length 2
    let rel = (est.mean - 0.5).abs() / 0.5;
    outcome(rel <= 0.02, format!("2-cycle MC gain {:.5} +- {:.5} vs 0.5, relative error {:.4} (<= 0.02)", est.mean, est.std_error, rel))
}

fn grid_max(p_hat: &[f64], u: &[f64], radius: f64, step: f64) -> f64 {
    let k = (1.0 / step).round() as i64;
    let mut best = f64::NEG_INFINITY;
    let mut visit = |q: &[f64]| {
        let l1: f64 = q.iter().zip(p_hat).map(|(a, b)| (a - b).abs()).sum();
        if l1 <= radius + 1e-12 {
            best = best.max(q.iter().zip(u).map(|(a, b)| a * b).sum());
        }
    };
    match p_hat.len() {
        1 => visit(&[1.0]),
        2 => {
            for i in 0..=k {
                let x = i as f64 * step;
                visit(&[x, 1.0 - x]);
            }
        }
        3 => {
            for i in 0..=k {
                for j in 0..=(k - i) {
                    let (x, y) = (i as f64 * step, j as f64 * step);
                    visit(&[x, y, ((k - i - j) as f64 * step).max(0.0)]);
                }
            }
        }
        _ => unreachable!(),
    }
    best
}

fn inner_max_equivalence() -> Outcome {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0x1AA + i);
            let s = rng.gen_range(1..=3);
            // p̂ on the grid so grid points can reach the exact optimum
            let mut cuts: Vec<i64> = (0..s - 1).map(|_| rng.gen_range(0..=1000)).collect();
            cuts.sort();
            let mut counts = Vec::new();
            let mut prev = 0;
            for c in cuts.iter().chain(std::iter::once(&1000)) {
                counts.push(c - prev);
                prev = *c;
            }
            let p_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / 1000.0).collect();
            let u: Vec<f64> = (0..s).map(|_| rng.gen_range(0.0..1.0)).collect();
            let radius = rng.gen_range(0.0..2.5);
            let q = inner_max_transition(&p_hat, radius, &u);
            let value: f64 = q.iter().zip(&u).map(|(a, b)| a * b).sum();
            (value - grid_max(&p_hat, &u, radius, 1e-3)).abs()
        })
        .reduce(|| 0.0, f64::max);
    outcome(worst <= 1e-3, format!("100 triples, max objective gap to simplex grid {worst:.2e} (<= 1e-3)"))
}

fn truncated_mean_concentration() -> Outcome {
    let (trials, n, delta, lambda_min) = (2000, 100, 0.05, 0.5);
    let bound = (4.0 / lambda_min) * (2.0 * (1.0 / delta as f64).ln() / n as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut violations = 0;
    for _ in 0..trials {
        let mut stats = PairStatistics::<f64>::new(1);
        for _ in 0..n {
            let u: f64 = rng.sample(rand::distributions::Open01);
            stats.record_transition(-u.ln(), 0, delta, lambda_min).unwrap();
        }
        if (stats.truncated_mean().unwrap() - 1.0).abs() > bound {
            violations += 1;
        }
    }
    let freq = violations as f64 / trials as f64;
    outcome(freq <= 0.07, format!("{trials} trials, violation frequency {freq:.4} (<= 0.05 + 0.02), bound {bound:.4}"))
}

fn lower_bound_constants() -> Outcome {
    let m = bandit(3.0);
    let sol = solve_average_reward(&m, 1e-10).unwrap();
    // 1-D oracle: θ grid at 1e-5, feasible iff 0.5 θ > ρ* = 1
    let mut oracle = f64::INFINITY;
    let mut theta: f64 = 0.5;
    while theta <= 3.0 + 1e-12 {
        if 0.5 * theta > 1.0 {
            oracle = oracle.min((1.0 / theta).ln() + theta - 1.0);
        }
        theta += 1e-5;
    }
    let k = compute_k(&m, &sol, 0, 1, 1e-3).unwrap().value;
    let c = compute_c(&m, &sol, 1e-3).unwrap();
    let expected_c = 0.5 / (1.0 - 2f64.ln());
    let k_ok = (k - oracle).abs() <= 1e-3 && (k - kl_exponential(1.0, 2.0).unwrap()).abs() <= 1e-3;
    let c_ok = (c.c_of_m - expected_c).abs() <= 1e-2;

    let violations: Vec<u64> = (0..100u64)
        .into_par_iter()
        .filter_map(|i| {
            let m = random_instance(1000 + i, 4, 3);
            let sol = solve_average_reward(&m, 1e-10).unwrap();
            let c = compute_c(&m, &sol, 1e-2).unwrap();
            (!c.bound_holds).then_some(i)
        })
        .collect();
    outcome(
        k_ok && c_ok && violations.is_empty(),
        format!(
            "K = {k:.6} vs grid oracle {oracle:.6}, C(M) = {:.5} vs {expected_c:.5}, C(M) > C_upper on {} of 100 instances",
            c.c_of_m,
            violations.len()
        ),
    )
}

struct RegretRuns {
    ucrl: Vec<RegretRecord<f64>>,
    uniform: Vec<RegretRecord<f64>>,
}

const BENCHMARK_SEEDS: u64 = 40;
const CHECKPOINTS: [f64; 3] = [1e3, 4e3, 1.6e4];

fn regret_runs() -> RegretRuns {
    let m = two_state_benchmark();
    let sol = solve_average_reward(&m, 1e-10).unwrap();
    let t_max = CHECKPOINTS[2];
    let delta = 1.0 / (m.lambda_max() * t_max).ceil();
    let config = |seed| SimulationConfig {
        checkpoints: Some(CHECKPOINTS.to_vec()),
        record_trajectory: false,
        ..SimulationConfig::new(Horizon::Time(t_max), seed, sol.gain)
    };
    let spec = LearnerSpec {
        num_states: m.num_states(),
        num_actions: m.num_actions(),
        rewards: m.rewards().to_vec(),
        delta,
        lambda_min: m.lambda_min(),
        lambda_max: m.lambda_max(),
    };
    let ucrl = (0..BENCHMARK_SEEDS)
        .into_par_iter()
        .map(|seed| simulate(&m, &mut CtUcrl::new(spec.clone()).unwrap(), &config(seed)).unwrap().regret)
        .collect();
    let uniform = (0..BENCHMARK_SEEDS)
        .into_par_iter()
        .map(|seed| simulate(&m, &mut UniformRandom::new(m.num_actions(), seed), &config(seed)).unwrap().regret)
        .collect();
    RegretRuns { ucrl, uniform }
}

fn mean_at(records: &[RegretRecord<f64>], i: usize) -> f64 {
    records.iter().map(|r| r.points[i].regret).sum::<f64>() / records.len() as f64
}

fn logarithmic_regret(runs: &RegretRuns) -> Outcome {
    let m = two_state_benchmark();
    let sol = solve_average_reward(&m, 1e-10).unwrap();
    let g = ctmdp::compute_gaps(&m, &sol).unwrap().gap_g.unwrap_or(0.0);
    let r: Vec<f64> = (0..3).map(|i| mean_at(&runs.ucrl, i)).collect();
    let uniform = mean_at(&runs.uniform, 2);
    let log_scale = |t: f64| (m.lambda_max() * t + 2.0).ln();
    let growth = [r[1] / r[0], r[2] / r[1]];
    let ratio = (r[2] / log_scale(CHECKPOINTS[2])) / (r[1] / log_scale(CHECKPOINTS[1]));
    let share = r[2] / uniform;
    let sublinear = r[0] > 0.0 && r[1] > 0.0 && growth.iter().all(|&x| x <= 3.0);
    outcome(
        g >= 0.2 && sublinear && ratio <= 1.5 && share <= 0.2,
        format!(
            "g = {g:.3}, {BENCHMARK_SEEDS} seeds, mean regret {:.1}/{:.1}/{:.1}, growth {:.2}, {:.2} (<= 3), log-ratio change {ratio:.2} (<= 1.5), vs uniform {share:.3} (<= 0.2)",
            r[0], r[1], r[2], growth[0], growth[1]
        ),
    )
}

fn episode_bound(runs: &RegretRuns) -> Outcome {
    let sa = 4.0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for record in &runs.ucrl {
        for p in &record.points {
            let n = p.decisions as f64;
            let bound = sa * ((8.0 * n / sa).log2() + 1.0);
            ok &= p.episodes as f64 <= bound;
            worst = worst.max(p.episodes as f64 / bound);
        }
    }
    outcome(ok, format!("{BENCHMARK_SEEDS} seeds x {} checkpoints, max episodes / bound {worst:.3} (<= 1)", CHECKPOINTS.len()))
}

fn count_sandwich() -> Outcome {
    let seeds: Vec<u64> = (0..20).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    for i in 0..3u64 {
        let spec = GeneratorSpec::new(Family::RandomDense, 3, 2, 0.5, 3.0, 77 + i);
        let m = generate(&spec).unwrap();
        let report = count_bounds_check(&m, &Policy::constant(3, 0), 1e3, &seeds).unwrap();
        let strictly_between = report.count.mean > 0.5 * 1e3 && report.count.mean < 3.0 * 1e3;
        ok &= report.passed && strictly_between;
        lines.push(format!("{:.0} in [{:.0}, {:.0}]", report.count.mean, report.lower, report.upper));
    }
    outcome(ok, format!("mean N(T)-1 at T=1e3: {}", lines.join(", ")))
}

fn optimism_property() -> Outcome {
    let eps = 1e-3;
    let failures: Vec<String> = (0..100u64)
        .into_par_iter()
        .filter_map(|i| {
            let m = random_instance(5000 + i, 4, 3);
            let sol = solve_average_reward(&m, 1e-10).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + i);
            let (ns, na) = (m.num_states(), m.num_actions());
            let mut p_hat = Vec::new();
            for s in 0..ns {
                for a in 0..na {
                    p_hat.extend_from_slice(m.transition(s, a));
                }
            }
            let radius_p: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(0.01..1.0)).collect();
            let mean_hat: Vec<f64> = m.rates().iter().map(|r| 1.0 / r).collect();
            let radius_m: Vec<f64> = (0..ns * na).map(|_| rng.gen_range(0.01..1.0)).collect();
            let conf =
                ConfidenceSet::from_parts(ns, na, m.lambda_min(), m.lambda_max(), p_hat, radius_p, mean_hat, radius_m, 1, 0.05)
                    .unwrap();
            let opt = extended_value_iteration(&conf, m.rewards(), eps).unwrap();
            (opt.gain < sol.gain - eps * m.lambda_max()).then(|| format!("instance {i}: {} < {}", opt.gain, sol.gain))
        })
        .collect();
    outcome(failures.is_empty(), format!("100 instances, {} with rho_k < rho* - eps*lambda_max {:?}", failures.len(), failures))
}

fn main() {
    let start = Instant::now();
    let mut failed = 0;
    let mut report = |id: usize, name: &str, limit: Duration, run: &dyn Fn() -> Outcome| {
        let t0 = Instant::now();
        let o = run();
        let elapsed = t0.elapsed();
        let in_time = elapsed <= limit;
        let passed = o.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "criterion {id} [{}] {name}: {} ({:.1}s{})",
            if passed { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            if in_time { String::new() } else { format!(", over the {}s budget", limit.as_secs()) }
        );
    };
    let minute = Duration::from_secs(60);
    report(1, "planner correctness", minute, &planner_correctness);
    report(2, "simulator/planner consistency", minute, &simulator_consistency);
    report(3, "inner maximization vs grid", minute, &inner_max_equivalence);
    report(4, "truncated-mean concentration", minute, &truncated_mean_concentration);
    report(5, "lower-bound constants", 2 * minute, &lower_bound_constants);
    let t0 = Instant::now();
    let runs = regret_runs();
    let shared = t0.elapsed();
    report(6, "logarithmic regret", 10 * minute - shared, &|| logarithmic_regret(&runs));
    report(7, "episode-count bound", Duration::MAX, &|| episode_bound(&runs));
    report(8, "count sandwich", minute, &count_sandwich);
    report(9, "optimism", 2 * minute, &optimism_property);
    println!("acceptance: {} of 9 criteria passed in {:.1}s", 9 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
