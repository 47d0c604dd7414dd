//! Instance-dependent regret constants: KL distances, `K(s,a)`, `C(M)` and
//! the two closed-form bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::CtmdpModel;
use crate::planning::{bellman_term, compute_gaps, diameter, AverageRewardSolution, OPTIMAL_SET_FACTOR};
use crate::scalar::{dot, effective_tol, span, Scalar};

/// Default θ-grid step for `compute_k`.
pub const DEFAULT_GRID_RESOLUTION: f64 = 1e-3;

/// Slack below which `C(M) > C_upper` is attributed to round-off.
pub const BOUND_CHECK_SLACK: f64 = 1e-6;

const BISECTION_ITERATIONS: usize = 200;
const GOLDEN_ITERATIONS: usize = 200;
const MAX_GRID_POINTS: usize = 10_000_000;

/// `Σ_{p(j)>0} p(j) log(p(j)/q(j))`.
pub fn kl_transition<T: Scalar>(p: &[T], q: &[T]) -> Result<T> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument("distributions differ in length".into()));
    }
    let mut total = T::zero();
    for (j, (&pj, &qj)) in p.iter().zip(q).enumerate() {
        if pj > T::zero() {
            if !(qj > T::zero()) {
                return Err(Error::SupportMismatch { index: j });
            }
            total = total + pj * (pj / qj).ln();
        }
    }
    Ok(total.max(T::zero()))
}

/// KL divergence between exponential laws with rates `rate` and `other`:
/// `log(λ/λ̄) + λ̄/λ − 1`.
pub fn kl_exponential<T: Scalar>(rate: T, other: T) -> Result<T> {
    for x in [rate, other] {
        if !(x > T::zero()) {
            return Err(Error::NonpositiveRate(x.as_f64()));
        }
    }
    Ok(((rate / other).ln() + other / rate - T::one()).max(T::zero()))
}

/// `φ*(s, a)` under the same optimal-set rule as `compute_gaps`; `None` for
/// optimal actions.
fn suboptimality<T: Scalar>(model: &CtmdpModel<T>, solution: &AverageRewardSolution<T>, s: usize, a: usize) -> Option<T> {
    let deficit = -bellman_term(model, solution.gain, &solution.bias, s, a);
    let cut = T::lit(OPTIMAL_SET_FACTOR) * effective_tol(solution.tol);
    (deficit > cut).then_some(deficit)
}

fn check_pair<T: Scalar>(model: &CtmdpModel<T>, s: usize, a: usize) -> Result<()> {
    if s >= model.num_states() || a >= model.num_actions() {
        return Err(Error::InvalidArgument(format!("pair ({s}, {a}) out of range")));
    }
    Ok(())
}

/// `(q − p)·h* − ρ*(1/θ − 1/λ) − φ*(s, a)`: how far `(q, θ)` lifts the pair
/// above optimal.
pub fn delta_theta_margin<T: Scalar>(
    model: &CtmdpModel<T>,
    solution: &AverageRewardSolution<T>,
    s: usize,
    a: usize,
    q: &[T],
    theta: T,
) -> Result<T> {
    check_pair(model, s, a)?;
    let phi = suboptimality(model, solution, s, a).ok_or(Error::NotSuboptimal { state: s, action: a })?;
    if q.len() != model.num_states() {
        return Err(Error::InvalidArgument("q has the wrong length".into()));
    }
    let support = model.support(s, a);
    for (j, &qj) in q.iter().enumerate() {
        if (qj > T::zero()) != support.contains(&j) || qj < T::zero() {
            return Err(Error::SupportMismatch { index: j });
        }
    }
    if !(theta >= model.lambda_min() && theta <= model.lambda_max()) {
        return Err(Error::InvalidArgument(format!("rate {theta} outside [lambda_min, lambda_max]")));
    }
    Ok(lift(model, solution, s, a, q, theta) - phi)
}

/// Whether `(q, θ)` makes `a` strictly better than optimal at `s`. The margin
/// must exceed the optimal-set tolerance so that round-off in `(ρ*, h*)`
/// cannot place boundary points inside.
pub fn delta_theta_contains<T: Scalar>(
    model: &CtmdpModel<T>,
    solution: &AverageRewardSolution<T>,
    s: usize,
    a: usize,
    q: &[T],
    theta: T,
) -> Result<bool> {
    let margin = delta_theta_margin(model, solution, s, a, q, theta)?;
    Ok(margin > T::lit(OPTIMAL_SET_FACTOR) * effective_tol(solution.tol))
}

/// `(q − p)·h* − ρ*(1/θ − 1/λ)`.
fn lift<T: Scalar>(model: &CtmdpModel<T>, solution: &AverageRewardSolution<T>, s: usize, a: usize, q: &[T], theta: T) -> T {
    let h = &solution.bias;
    dot(q, h) - dot(model.transition(s, a), h) - solution.gain * (theta.recip() - model.rate(s, a).recip())
}

/// Solver diagnostics and the minimizer for one pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct KSolution<T> {
    /// `K(s, a)`; `+∞` outside the critical set.
    pub value: T,
    pub grid_resolution: T,
    pub grid_points: usize,
    /// Minimizing rate and transition vector, present when `value` is finite.
    pub theta: Option<T>,
    pub q: Option<Vec<T>>,
    /// Lagrange multiplier of the mean constraint at the minimizer.
    pub multiplier: T,
    /// `|q·h* − c|` when the constraint is active, else 0.
    pub constraint_residual: T,
}

/// Per-θ subproblem on the closure: `min KL(p‖q)` subject to `q·h ≥ p·h + b`,
/// `q` supported on the support of `p`.
struct TiltProblem<T> {
    p: Vec<T>,
    h: Vec<T>,
    ph: T,
    /// `max_{S⁺} h − p·h`.
    headroom: T,
}

struct Tilt<T> {
    kl: T,
    q: Vec<T>,
    multiplier: T,
    residual: T,
}

impl<T: Scalar> TiltProblem<T> {
    fn new(p: &[T], h: &[T]) -> Self {
        let (mut ps, mut hs) = (Vec::new(), Vec::new());
        for (&pj, &hj) in p.iter().zip(h) {
            if pj > T::zero() {
                ps.push(pj);
                hs.push(hj);
            }
        }
        let ph = dot(&ps, &hs);
        let top = hs.iter().copied().fold(T::neg_infinity(), T::max);
        Self { p: ps, h: hs, ph, headroom: top - ph }
    }

    fn kl_only(&self, b: T) -> T {
        if b <= T::zero() {
            T::zero()
        } else if b >= self.headroom {
            T::infinity()
        } else {
            self.solve(b).kl
        }
    }

    /// Dual bisection on `μ ∈ (0, 1/(h_max − c))` for `Σ p x/(1 − μx) = 0`,
    /// `x = h − c`; then `q = p/(1 − μx)` and `KL = Σ p log(1 − μx)`.
    fn solve(&self, b: T) -> Tilt<T> {
        let c = self.ph + b;
        let x: Vec<T> = self.h.iter().map(|&hj| hj - c).collect();
        let f = |mu: T| -> T { self.p.iter().zip(&x).map(|(&pj, &xj)| pj * xj / (T::one() - mu * xj)).sum() };
        let xmax = x.iter().copied().fold(T::neg_infinity(), T::max);
        if !(xmax > T::zero()) || !xmax.recip().is_finite() {
            // `c` sits at or above the best reachable bias after rounding; only
            // the point mass on the top state meets it, and p has wider support.
            return Tilt { kl: T::infinity(), q: self.p.clone(), multiplier: T::zero(), residual: T::zero() };
        }
        let (mut lo, mut hi) = (T::zero(), xmax.recip());
        for _ in 0..BISECTION_ITERATIONS {
            let mid = (lo + hi) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if f(mid) < T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = lo;
        let mut q: Vec<T> = self.p.iter().zip(&x).map(|(&pj, &xj)| pj / (T::one() - mu * xj)).collect();
        let total: T = q.iter().copied().sum();
        q.iter_mut().for_each(|v| *v = *v / total);
        let kl: T = self.p.iter().zip(&q).map(|(&pj, &qj)| pj * (pj / qj).ln()).sum();
        let residual = (dot(&q, &self.h) - c).abs();
        Tilt { kl: kl.max(T::zero()), q, multiplier: mu, residual }
    }
}

/// `K(s, a) = inf { KL(p‖q) + KL(λ‖θ) : (q, θ) ∈ ΔΘ(s, a) }`.
///
/// The infimum runs over the closure of `ΔΘ`; it is `+∞` when `ΔΘ` itself is
/// empty, i.e. when even `θ = λ_max` with all transition mass on the best
/// reachable state cannot lift the pair strictly above optimal. For fixed θ
/// the transition part is a convex program solved through its dual; the θ
/// dimension is scanned on a grid and refined by golden section (the total
/// objective is convex in θ).
pub fn compute_k<T: Scalar>(
    model: &CtmdpModel<T>,
    solution: &AverageRewardSolution<T>,
    s: usize,
    a: usize,
    grid_resolution: T,
) -> Result<KSolution<T>> {
    check_pair(model, s, a)?;
    let phi = suboptimality(model, solution, s, a).ok_or(Error::NotSuboptimal { state: s, action: a })?;
    if !(grid_resolution > T::zero()) {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let (lmin, lmax) = (model.lambda_min(), model.lambda_max());
    let rate = model.rate(s, a);
    let rho = solution.gain;
    let tilt = TiltProblem::new(model.transition(s, a), &solution.bias);
    let b = |theta: T| phi + rho * (theta.recip() - rate.recip());

    let infinite = KSolution {
        value: T::infinity(),
        grid_resolution,
        grid_points: 0,
        theta: None,
        q: None,
        multiplier: T::zero(),
        constraint_residual: T::zero(),
    };
    let strict = T::lit(1e-10).max(T::tolerance_floor());
    if !(b(lmax) < tilt.headroom.max(T::zero()) - strict) {
        return Ok(infinite);
    }

    // Closure-feasible rates form [θ0, λ_max].
    let theta0 = if rho > T::zero() {
        let denom = tilt.headroom.max(T::zero()) - phi + rho / rate;
        (rho / denom).max(lmin)
    } else {
        lmin
    };
    let objective = |theta: T| -> T {
        let kl = tilt.kl_only(b(theta));
        if kl.is_finite() {
            kl + kl_exponential(rate, theta).unwrap_or(T::infinity())
        } else {
            kl
        }
    };

    let width = lmax - theta0;
    let cells = (width / grid_resolution).ceil().to_usize().unwrap_or(MAX_GRID_POINTS).clamp(1, MAX_GRID_POINTS);
    let at = |i: usize| if i == cells { lmax } else { theta0 + width * T::from_count(i as u64) / T::from_count(cells as u64) };
    let mut best = (0usize, objective(at(0)));
    for i in 1..=cells {
        let v = objective(at(i));
        if v < best.1 {
            best = (i, v);
        }
    }

    // Golden-section refinement on the neighbouring cells.
    let (mut lo, mut hi) = (at(best.0.saturating_sub(1)), at((best.0 + 1).min(cells)));
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (objective(c), objective(d));
    for _ in 0..GOLDEN_ITERATIONS {
        if hi - lo <= T::epsilon() * hi {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = objective(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = objective(d);
        }
    }
    let mut theta = at(best.0);
    let mut value = best.1;
    for (t, v) in [(c, fc), (d, fd)] {
        if v < value {
            theta = t;
            value = v;
        }
    }
    if !value.is_finite() {
        return Ok(KSolution { grid_points: cells + 1, ..infinite });
    }

    let bt = b(theta);
    let (q_support, multiplier, residual) = if bt <= T::zero() {
        (tilt.p.clone(), T::zero(), T::zero())
    } else {
        let sol = tilt.solve(bt);
        (sol.q, sol.multiplier, sol.residual)
    };
    let mut q = vec![T::zero(); model.num_states()];
    let mut k = 0;
    for (j, &pj) in model.transition(s, a).iter().enumerate() {
        if pj > T::zero() {
            q[j] = q_support[k];
            k += 1;
        }
    }
    Ok(KSolution {
        value,
        grid_resolution,
        grid_points: cells + 1,
        theta: Some(theta),
        q: Some(q),
        multiplier,
        constraint_residual: residual,
    })
}

/// Per-pair entry of the lower-bound report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PairConstant<T> {
    pub state: usize,
    pub action: usize,
    pub phi: T,
    pub critical: bool,
    /// Absent for optimal actions.
    pub k: Option<KSolution<T>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct InstanceConstants<T> {
    pub rho_star: T,
    pub bias_span: T,
    pub diameter: T,
    pub gap_g: Option<T>,
    pub pairs: Vec<PairConstant<T>>,
    /// `B(M)` as `(state, action)` pairs.
    pub critical_set: Vec<(usize, usize)>,
    /// `Σ_{B(M)} φ*/K`.
    pub c_of_m: T,
    /// `(H + 2λ_max)² S A λ_max / (min_{B(M)} φ* · λ_min³)`; absent when `B(M)`
    /// is empty.
    pub c_upper: Option<T>,
    pub c_theorem4: T,
    /// `C(M) ≤ C_upper + 1e-6`, vacuous when `B(M)` is empty.
    pub bound_holds: bool,
    pub grid_resolution: T,
}

/// `3(34² λ_max² D² S² A + 2·73² λ_max²/λ_min² S A + 24 S A/λ_min²)`.
pub fn theorem4_constant<T: Scalar>(model: &CtmdpModel<T>, diameter: T) -> T {
    let (s, a) = (T::from_count(model.num_states() as u64), T::from_count(model.num_actions() as u64));
    let (lmin, lmax) = (model.lambda_min(), model.lambda_max());
    let sq = |x: T| x * x;
    T::lit(3.0)
        * (T::lit(34.0 * 34.0) * sq(lmax) * sq(diameter) * sq(s) * a
            + T::lit(2.0 * 73.0 * 73.0) * sq(lmax / lmin) * s * a
            + T::lit(24.0) * s * a / sq(lmin))
}

/// Assembles `B(M)`, `K`, `C(M)` and both bounds; `solution` should come from
/// a tight solve (residual ≤ 1e-8).
pub fn compute_c<T: Scalar>(
    model: &CtmdpModel<T>,
    solution: &AverageRewardSolution<T>,
    grid_resolution: T,
) -> Result<InstanceConstants<T>> {
    let gaps = compute_gaps(model, solution)?;
    let d = diameter(model, effective_tol(solution.tol))?;
    let (ns, na) = (model.num_states(), model.num_actions());
    let pairs: Vec<PairConstant<T>> = (0..ns * na)
        .into_par_iter()
        .map(|i| {
            let (s, a) = (i / na, i % na);
            let phi = gaps.phi[s][a];
            if gaps.optimal_actions[s].contains(&a) {
                return Ok(PairConstant { state: s, action: a, phi, critical: false, k: None });
            }
            let k = compute_k(model, solution, s, a, grid_resolution)?;
            Ok(PairConstant { state: s, action: a, phi, critical: k.value.is_finite(), k: Some(k) })
        })
        .collect::<Result<_>>()?;

    let critical_set: Vec<(usize, usize)> = pairs.iter().filter(|p| p.critical).map(|p| (p.state, p.action)).collect();
    let mut c_of_m = T::zero();
    let mut min_phi = T::infinity();
    for p in pairs.iter().filter(|p| p.critical) {
        let k = p.k.as_ref().map_or(T::infinity(), |k| k.value);
        // 0/0 is 0 by convention; φ > 0 here so K = 0 makes the pair dominate.
        if p.phi > T::zero() {
            c_of_m = c_of_m + p.phi / k;
        }
        min_phi = min_phi.min(p.phi);
    }
    let h = span(&solution.bias);
    let (lmin, lmax) = (model.lambda_min(), model.lambda_max());
    let c_upper = (!critical_set.is_empty()).then(|| {
        let sa = T::from_count((ns * na) as u64);
        let lift = h + T::lit(2.0) * lmax;
        lift * lift * sa * lmax / (min_phi * lmin * lmin * lmin)
    });
    let bound_holds = c_upper.map_or(true, |u| c_of_m <= u + T::lit(BOUND_CHECK_SLACK));
    Ok(InstanceConstants {
        rho_star: solution.gain,
        bias_span: h,
        diameter: d,
        gap_g: gaps.gap_g,
        pairs,
        critical_set,
        c_of_m,
        c_upper,
        c_theorem4: theorem4_constant(model, d),
        bound_holds,
        grid_resolution,
    })
}
