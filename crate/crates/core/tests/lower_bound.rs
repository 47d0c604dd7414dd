use ctmdp::generator::{generate, Family, GeneratorSpec};
use ctmdp::lower_bound::{compute_c, compute_k, delta_theta_margin, kl_exponential, kl_transition};
use ctmdp::model::CtmdpModel;
use ctmdp::planning::{solve_average_reward, AverageRewardSolution};
use proptest::prelude::*;

const Q_STEP: f64 = 1e-3;
const THETA_STEP: f64 = 1e-4;

fn benchmark() -> CtmdpModel<f64> {
    CtmdpModel::from_json_str(include_str!("../../../configs/two_state_benchmark.json")).unwrap()
}

fn kl_p(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(&x, _)| x > 0.0).map(|(&x, &y)| x * (x / y).ln()).sum()
}

fn kl_rate(l: f64, t: f64) -> f64 {
    t / l - 1.0 - (t / l).ln()
}

/// Every probability vector on `support` whose entries are positive
/// multiples of `Q_STEP`.
fn simplex_grid(n: usize, support: &[usize]) -> Vec<Vec<f64>> {
    let units = (1.0 / Q_STEP).round() as usize;
    let mut out = Vec::new();
    let mut parts = vec![0usize; support.len()];
    fn fill(i: usize, left: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i + 1 == parts.len() {
            if left >= 1 {
                parts[i] = left;
                out.push(parts.clone());
            }
            return;
        }
        for k in 1..left {
            parts[i] = k;
            fill(i + 1, left - k, parts, out);
        }
    }
    let mut raw = Vec::new();
    fill(0, units, &mut parts, &mut raw);
    for r in raw {
        let mut q = vec![0.0; n];
        for (k, &j) in support.iter().enumerate() {
            q[j] = r[k] as f64 * Q_STEP;
        }
        out.push(q);
    }
    out
}

/// Grid minimum of `KL(p‖q) + KL(λ‖θ)` over `(q, θ)` that lift the pair
/// strictly above optimal. For each `q` the rate objective is convex with its
/// minimum at `λ`, so the best grid θ is the first feasible one at or above `λ`.
fn brute_force_k(m: &CtmdpModel<f64>, sol: &AverageRewardSolution<f64>, s: usize, a: usize) -> f64 {
    let h = &sol.bias;
    let p = m.transition(s, a);
    let lam = m.rate(s, a);
    let dot = |x: &[f64]| x.iter().zip(h).map(|(u, v)| u * v).sum::<f64>();
    let phi = m.reward(s, a) - sol.gain / lam + dot(p) - h[s];
    let phi = -phi.min(0.0);
    let mut best = f64::INFINITY;
    for q in simplex_grid(m.num_states(), m.support(s, a)) {
        let lift = dot(&q) - dot(p);
        let feasible = |theta: f64| lift - sol.gain * (1.0 / theta - 1.0 / lam) > phi + 1e-9;
        let mut i = ((lam - m.lambda_min()) / THETA_STEP).ceil() as i64;
        let top = ((m.lambda_max() - m.lambda_min()) / THETA_STEP).floor() as i64;
        let theta_at = |i: i64| m.lambda_min() + i as f64 * THETA_STEP;
        if !feasible(theta_at(top)) {
            continue;
        }
        let (mut lo, mut hi) = (i, top);
        if feasible(theta_at(lo)) {
            hi = lo;
        }
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if feasible(theta_at(mid)) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        i = hi;
        best = best.min(kl_p(p, &q) + kl_rate(lam, theta_at(i)));
    }
    best
}

fn finite_pairs_agree_with_brute_force(m: &CtmdpModel<f64>) -> usize {
    let sol = solve_average_reward(m, 1e-11).unwrap();
    let consts = compute_c(m, &sol, 1e-3).unwrap();
    let mut checked = 0;
    for pc in consts.pairs.iter().filter(|pc| pc.k.is_some()) {
        let k = pc.k.as_ref().unwrap();
        let brute = brute_force_k(m, &sol, pc.state, pc.action);
        if k.value.is_infinite() {
            assert!(brute.is_infinite(), "pair ({}, {}): brute {brute}", pc.state, pc.action);
            continue;
        }
        checked += 1;
        assert!(k.value <= brute + 1e-9, "({}, {}): K {} above grid {brute}", pc.state, pc.action, k.value);
        assert!((k.value - brute).abs() <= 0.05 * brute, "({}, {}): K {} vs grid {brute}", pc.state, pc.action, k.value);
        let q = k.q.as_ref().unwrap();
        let theta = k.theta.unwrap();
        assert!(delta_theta_margin(m, &sol, pc.state, pc.action, q, theta).unwrap() >= -1e-9);
        let recomputed = kl_p(m.transition(pc.state, pc.action), q) + kl_rate(m.rate(pc.state, pc.action), theta);
        assert!((recomputed - k.value).abs() <= 1e-8 * k.value.max(1.0));
    }
    checked
}

#[test]
fn benchmark_k_matches_grid_oracle() {
    assert!(finite_pairs_agree_with_brute_force(&benchmark()) >= 1);
}

#[test]
fn random_instances_k_match_grid_oracle() {
    let mut checked = 0;
    for seed in 0..12u64 {
        let s = 2 + (seed % 2) as usize;
        let m = generate(&GeneratorSpec::new(Family::RandomDense, s, 2, 0.5, 3.0, 7000 + seed)).unwrap();
        checked += finite_pairs_agree_with_brute_force(&m);
    }
    assert!(checked >= 5, "only {checked} finite pairs");
}

#[test]
fn single_action_model_has_no_critical_pairs() {
    let m: CtmdpModel<f64> = generate(&GeneratorSpec::new(Family::RandomDense, 3, 1, 0.5, 2.0, 1)).unwrap();
    let sol = solve_average_reward(&m, 1e-11).unwrap();
    let c = compute_c(&m, &sol, 1e-3).unwrap();
    assert!(c.critical_set.is_empty());
    assert_eq!(c.c_of_m, 0.0);
    assert!(c.c_upper.is_none() && c.bound_holds);
}

#[test]
fn k_finite_on_suboptimal_pair_never_exceeds_fixed_theta_bound() {
    let m = benchmark();
    let sol = solve_average_reward(&m, 1e-11).unwrap();
    for (s, a) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        match compute_k(&m, &sol, s, a, 1e-3) {
            Ok(k) if k.value.is_finite() => assert!(k.value >= 0.0 && k.constraint_residual < 1e-8),
            Ok(_) => {}
            Err(e) => assert!(matches!(e, ctmdp::Error::NotSuboptimal { .. }), "{e}"),
        }
    }
}

proptest! {
    #[test]
    fn kl_divergences_are_nonnegative(a in 0.01f64..0.99, b in 0.01f64..0.99, l in 0.1f64..10.0, t in 0.1f64..10.0) {
        let p = [a, 1.0 - a];
        let q = [b, 1.0 - b];
        prop_assert!(kl_transition(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_transition(&p, &p).unwrap().abs() < 1e-15);
        prop_assert!(kl_exponential(l, t).unwrap() >= -1e-15);
        prop_assert!((kl_exponential(l, t).unwrap() - kl_rate(l, t)).abs() < 1e-12);
    }
}

