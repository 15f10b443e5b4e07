//! Monte Carlo simulation of the regime-modulated wealth SDE and the
//! estimators used to verify the equilibrium solution.
//!
//! Wealth under a positively homogeneous strategy `π(t, x, i) = x·φ(t, i)` is
//! geometric within each regime segment, so paths are stepped in log space:
//!
//! ```text
//!     d log X = [r_i + (μ_i - r_i)φ - ½ σ_i² φ²] dt + σ_i φ dW,
//! ```
//!
//! with coefficients frozen at substep left endpoints and the Euler grid
//! split at every regime jump. Positivity is automatic and scaling the
//! initial wealth shifts every path by a constant in log space.
//!
//! Each path owns an independent ChaCha8 stream keyed by (seed, path index),
//! so estimates are bit-identical for any worker count; batch results are
//! collected in path order and reduced pairwise. Conditioning on the terminal
//! regime is done by filtering: the Brownian motion and the chain are
//! independent, so the paths with ε_T = j are exact draws from the
//! conditional law.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::odes::{a_weight, GSolution, MarketParams, Preferences};
use crate::regime::{sample_regime_path, transition_probability, Regime, RegimeChain, RegimePath};
use crate::strategy::{
    inverse_utility, inverse_utility_derivative, utility, StrategyKind, StrategySpec,
};

/// Simulation settings: path count, Euler step, stream seed, and the start
/// point (t0, x0, i0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub t0: f64,
    pub x0: f64,
    pub i0: Regime,
}

impl SimConfig {
    pub fn validate(&self, t_horizon: f64) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidArgument("n_paths must be >= 1".into()));
        }
        if !(self.x0 > 0.0) || !self.x0.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "x0 must be positive and finite, got {}",
                self.x0
            )));
        }
        if !self.t0.is_finite() || self.t0 > t_horizon {
            return Err(Error::InvalidArgument(format!(
                "t0 must be finite and <= T, got t0 = {}, T = {t_horizon}",
                self.t0
            )));
        }
        let span = t_horizon - self.t0;
        if span > 0.0 && (!(self.dt > 0.0) || self.dt > span + 1e-12) {
            return Err(Error::InvalidArgument(format!(
                "dt must satisfy 0 < dt <= T - t0, got dt = {}, span = {span}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// One Euler substep: left endpoint, width, and the regime in force.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Substep {
    pub t: f64,
    pub dt: f64,
    pub regime: Regime,
}

fn base_step_count(span: f64, dt: f64) -> usize {
    let ratio = span / dt;
    let n = if (ratio - ratio.round()).abs() < 1e-6 {
        ratio.round()
    } else {
        ratio.ceil()
    };
    (n as usize).max(1)
}

/// Walk the Euler grid of one path: base nodes t0 + k·dt plus a split at
/// every regime jump, so coefficients never straddle a switch. The callback
/// receives the base-node index when the substep starts on the base grid.
fn for_each_substep(
    path: &RegimePath,
    dt: f64,
    mut f: impl FnMut(f64, f64, Regime, Option<usize>) -> Result<()>,
) -> Result<()> {
    let t0 = path.start_time;
    let t_end = path.end_time;
    let n_base = base_step_count(t_end - t0, dt);
    let tie = dt * 1e-9;
    let mut regime = path.initial_state;
    let mut m = 0usize;

    for k in 0..n_base {
        let left = t0 + k as f64 * dt;
        let right = if k + 1 == n_base {
            t_end
        } else {
            t_end.min(t0 + (k + 1) as f64 * dt)
        };
        let mut seg_left = left;
        let mut base = Some(k);
        while m < path.jump_times.len() && path.jump_times[m] < right - tie {
            let s = path.jump_times[m];
            if s > seg_left + tie {
                f(seg_left, s - seg_left, regime, base)?;
                seg_left = s;
                base = None;
            }
            regime = path.states[m];
            m += 1;
        }
        f(seg_left, right - seg_left, regime, base)?;
        while m < path.jump_times.len() && path.jump_times[m] <= right + tie {
            regime = path.states[m];
            m += 1;
        }
    }
    Ok(())
}

/// Materialized substep grid for a path; test harnesses use this to align
/// externally supplied Brownian increments.
pub fn substep_grid(path: &RegimePath, dt: f64) -> Vec<Substep> {
    let mut out = Vec::new();
    for_each_substep(path, dt, |t, width, regime, _| {
        out.push(Substep {
            t,
            dt: width,
            regime,
        });
        Ok(())
    })
    .expect("infallible collector");
    out
}

/// Policy handed to the simulator: either a plain strategy or a perturbed
/// one that follows `head` before `switch_t` and `tail` afterwards.
#[derive(Clone, Copy)]
enum Policy<'a> {
    Single(&'a StrategySpec),
    Switched {
        head: &'a StrategySpec,
        tail: &'a StrategySpec,
        switch_t: f64,
    },
}

impl Policy<'_> {
    fn fraction(&self, t: f64, i: Regime) -> Result<f64> {
        match self {
            Policy::Single(s) => s.fraction(t, i),
            Policy::Switched {
                head,
                tail,
                switch_t,
            } => {
                if t < *switch_t {
                    head.fraction(t, i)
                } else {
                    tail.fraction(t, i)
                }
            }
        }
    }
}

/// Investment fractions precomputed on the base grid. Left endpoints of
/// base substeps hit the table; jump-split substeps fall back to direct
/// evaluation, so cached and uncached runs agree bit for bit.
struct PolicyTable<'a> {
    policy: Policy<'a>,
    values: Vec<[f64; 2]>,
}

impl<'a> PolicyTable<'a> {
    fn build(policy: Policy<'a>, t0: f64, t_end: f64, dt: f64) -> Result<Self> {
        let n_base = base_step_count(t_end - t0, dt);
        let mut values = Vec::with_capacity(n_base);
        for k in 0..n_base {
            let t = t0 + k as f64 * dt;
            values.push([
                policy.fraction(t, Regime::Bull)?,
                policy.fraction(t, Regime::Bear)?,
            ]);
        }
        Ok(PolicyTable { policy, values })
    }

    #[inline]
    fn fraction(&self, t: f64, i: Regime, base: Option<usize>) -> Result<f64> {
        match base {
            Some(k) => Ok(self.values[k][i.index()]),
            None => self.policy.fraction(t, i),
        }
    }
}

/// Core log-space Euler stepper; `next_dw` supplies the Brownian increment
/// for a substep of the given width.
fn euler_log_terminal(
    path: &RegimePath,
    table: &PolicyTable<'_>,
    market: &MarketParams,
    x0: f64,
    dt: f64,
    mut next_dw: impl FnMut(f64) -> f64,
) -> Result<f64> {
    let mut log_x = x0.ln();
    let mut step = 0usize;
    for_each_substep(path, dt, |t, width, regime, base| {
        let phi = table.fraction(t, regime, base)?;
        let sigma = market.sigma(regime);
        let drift = market.r(regime) + market.excess_return(regime) * phi
            - 0.5 * sigma * sigma * phi * phi;
        log_x += drift * width + sigma * phi * next_dw(width);
        if !log_x.is_finite() {
            return Err(Error::Simulation { step });
        }
        step += 1;
        Ok(())
    })?;
    Ok(log_x.exp())
}

fn check_equilibrium_consistency(
    strategy: &StrategySpec,
    market: &MarketParams,
    t_horizon: f64,
) -> Result<()> {
    if let StrategyKind::Equilibrium(sol) = strategy.kind() {
        if sol.market() != market || sol.t_horizon() != t_horizon {
            return Err(Error::InvalidArgument(
                "equilibrium strategy was solved under different market parameters or horizon"
                    .into(),
            ));
        }
    }
    Ok(())
}

/// Terminal wealth along one realized regime path, drawing Brownian
/// increments from the configured seed.
pub fn simulate_wealth(
    path: &RegimePath,
    strategy: &StrategySpec,
    config: &SimConfig,
    market: &MarketParams,
) -> Result<f64> {
    config.validate(path.end_time)?;
    check_equilibrium_consistency(strategy, market, path.end_time)?;
    let table = Policy::Single(strategy);
    let table = PolicyTable::build(table, path.start_time, path.end_time, config.dt)?;
    let mut rng = path_rng(config.seed, 0);
    euler_log_terminal(path, &table, market, config.x0, config.dt, |width| {
        width.sqrt() * rng.sample::<f64, _>(StandardNormal)
    })
}

/// Same stepper with caller-supplied increments, one per substep of
/// [`substep_grid`] for the same (path, dt).
pub fn simulate_wealth_with_increments(
    path: &RegimePath,
    strategy: &StrategySpec,
    config: &SimConfig,
    market: &MarketParams,
    increments: &[f64],
) -> Result<f64> {
    config.validate(path.end_time)?;
    check_equilibrium_consistency(strategy, market, path.end_time)?;
    let table = PolicyTable::build(
        Policy::Single(strategy),
        path.start_time,
        path.end_time,
        config.dt,
    )?;
    let n_substeps = substep_grid(path, config.dt).len();
    if increments.len() != n_substeps {
        return Err(Error::InvalidArgument(format!(
            "expected {n_substeps} increments, got {}",
            increments.len()
        )));
    }
    let mut idx = 0usize;
    euler_log_terminal(path, &table, market, config.x0, config.dt, |_| {
        let dw = increments[idx];
        idx += 1;
        dw
    })
}

// Gauss-Legendre 5-point rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    -0.906179845938664,
    -0.5384693101056831,
    0.0,
    0.5384693101056831,
    0.906179845938664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.23692688505618908,
    0.47862867049936647,
    0.5688888888888889,
    0.47862867049936647,
    0.23692688505618908,
];

/// Discretization-free terminal wealth for the equilibrium strategy on a
/// given path and noise: the linear SDE solves to
///
/// ```text
///     X_T = x0 exp{ ∫ (θ²A + r - ½θ²A²) du + ∫ θA dW },
/// ```
///
/// so the drift integral is evaluated by Gauss-Legendre quadrature per
/// substep and each Brownian increment is weighted by the quadrature average
/// of θA over its substep. Used as the convergence oracle for
/// [`simulate_wealth`].
pub fn exact_wealth_equilibrium(
    path: &RegimePath,
    sol: &GSolution,
    config: &SimConfig,
    increments: &[f64],
) -> Result<f64> {
    config.validate(path.end_time)?;
    if (sol.t_horizon() - path.end_time).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "path must end at the solution horizon".into(),
        ));
    }
    let steps = substep_grid(path, config.dt);
    if increments.len() != steps.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} increments, got {}",
            steps.len(),
            increments.len()
        )));
    }
    let market = sol.market();
    let prefs = sol.preferences();
    let chain = sol.chain();
    let mut exponent = 0.0;
    for (step, dw) in steps.iter().zip(increments) {
        let theta = market.risk_price(step.regime);
        let theta_sq = theta * theta;
        let r = market.r(step.regime);
        let mid = step.t + 0.5 * step.dt;
        let half = 0.5 * step.dt;
        let mut drift_int = 0.0;
        let mut diff_avg = 0.0;
        for (node, weight) in GL_NODES.iter().zip(&GL_WEIGHTS) {
            let u = mid + half * node;
            let g4 = sol.interpolate(u)?;
            let probs = chain.transition_row(sol.t_horizon() - u, step.regime)?;
            let a = a_weight(step.regime, &g4, probs, prefs)?;
            drift_int += weight * half * (theta_sq * a + r - 0.5 * theta_sq * a * a);
            diff_avg += weight * half * theta * a;
        }
        exponent += drift_int + diff_avg / step.dt * dw;
    }
    Ok(config.x0 * exponent.exp())
}

/// Per-path ChaCha8 stream: one seed, one stream per path index.
fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Map `f` over path indices `0..n_paths`, in parallel when the `parallel`
/// feature is enabled. Output order is always path order, so downstream
/// reductions are scheduling-independent.
pub fn map_paths<T: Send>(n_paths: usize, f: impl Fn(u64) -> T + Send + Sync) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        (0..n_paths as u64).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_paths as u64).map(f).collect()
    }
}

/// Sequential twin of [`map_paths`], available regardless of features; the
/// two produce identical output for pure `f`.
pub fn map_paths_sequential<T>(n_paths: usize, f: impl FnMut(u64) -> T) -> Vec<T> {
    (0..n_paths as u64).map(f).collect()
}

/// Run `f` inside a worker pool of the given size (None = default). With the
/// `parallel` feature disabled the hint is ignored and `f` runs inline.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match workers {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("worker pool")
                .install(f),
            None => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

/// Deterministic pairwise sum; independent of thread count because it runs
/// over an index-ordered slice.
fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 64 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and its standard error (n-1 denominator; zero for n < 2).
fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = pairwise_sum(xs) / n as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    pairwise_sum(&sq) / (n - 1) as f64
}

/// Conditional-mean estimate for one terminal regime.
#[derive(Debug, Clone, Copy)]
pub struct CondEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_effective: usize,
    /// Fewer than 30 paths hit the conditioning event.
    pub low_sample: bool,
}

/// Full estimator output: per-terminal-regime conditional utilities plus the
/// combined certainty-equivalent objective.
#[derive(Debug, Clone)]
pub struct McEstimate {
    /// Indexed by terminal regime; `None` when that regime is unreachable.
    pub per_regime: [Option<CondEstimate>; 2],
    pub objective: f64,
    pub objective_se: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Simulate the whole batch once: (terminal regime, terminal wealth) per
/// path, in path order.
fn run_batch(
    policy: Policy<'_>,
    sim: &SimConfig,
    market: &MarketParams,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<Vec<(Regime, f64)>> {
    let table = PolicyTable::build(policy, sim.t0, t_horizon, sim.dt)?;
    let outcomes: Vec<Result<(Regime, f64)>> = map_paths(sim.n_paths, |k| {
        let mut rng = path_rng(sim.seed, k);
        let path = sample_regime_path(sim.i0, sim.t0, t_horizon, chain, &mut rng)?;
        let x_t = euler_log_terminal(&path, &table, market, sim.x0, sim.dt, |width| {
            width.sqrt() * rng.sample::<f64, _>(StandardNormal)
        })?;
        Ok((path.terminal_state(), x_t))
    });
    outcomes.into_iter().collect()
}

fn conditional_from_outcomes(
    outcomes: &[(Regime, f64)],
    j: Regime,
    prefs: &Preferences,
) -> Result<CondEstimate> {
    let utilities: Vec<f64> = outcomes
        .iter()
        .filter(|(terminal, _)| *terminal == j)
        .map(|(_, x)| utility(*x, j, prefs))
        .collect::<Result<_>>()?;
    if utilities.is_empty() {
        return Err(Error::NoEffectiveSamples { regime: j.label() });
    }
    let (mean, std_error) = mean_and_se(&utilities);
    Ok(CondEstimate {
        mean,
        std_error,
        n_effective: utilities.len(),
        low_sample: utilities.len() < 30,
    })
}

/// Estimate the expected utility E[u^j(X_T)] over all paths from
/// (t0, x0, i0), with no terminal-regime conditioning. This is the quantity
/// the separable value function f^{i,j} represents.
pub fn estimate_expected_utility(
    j: Regime,
    strategy: &StrategySpec,
    sim: &SimConfig,
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<CondEstimate> {
    sim.validate(t_horizon)?;
    check_equilibrium_consistency(strategy, market, t_horizon)?;
    if sim.t0 == t_horizon {
        return Ok(CondEstimate {
            mean: utility(sim.x0, j, prefs)?,
            std_error: 0.0,
            n_effective: sim.n_paths,
            low_sample: sim.n_paths < 30,
        });
    }
    let outcomes = run_batch(Policy::Single(strategy), sim, market, chain, t_horizon)?;
    let utilities: Vec<f64> = outcomes
        .iter()
        .map(|(_, x)| utility(*x, j, prefs))
        .collect::<Result<_>>()?;
    let (mean, std_error) = mean_and_se(&utilities);
    Ok(CondEstimate {
        mean,
        std_error,
        n_effective: utilities.len(),
        low_sample: utilities.len() < 30,
    })
}

/// Estimate E[u^j(X_T) | X_{t0} = x0, ε_{t0} = i0, ε_T = j] by simulating
/// unconditionally and filtering on the terminal regime; the Brownian noise
/// and the chain are independent, so the filtered paths are exact draws from
/// the conditional law.
pub fn estimate_conditional_utility(
    j: Regime,
    strategy: &StrategySpec,
    sim: &SimConfig,
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<CondEstimate> {
    sim.validate(t_horizon)?;
    check_equilibrium_consistency(strategy, market, t_horizon)?;
    let p = transition_probability(sim.t0, sim.i0, j, chain, t_horizon)?;
    if p == 0.0 {
        return Err(Error::UnreachableRegime { regime: j.label() });
    }
    if sim.t0 == t_horizon {
        return Ok(CondEstimate {
            mean: utility(sim.x0, j, prefs)?,
            std_error: 0.0,
            n_effective: sim.n_paths,
            low_sample: sim.n_paths < 30,
        });
    }
    let outcomes = run_batch(Policy::Single(strategy), sim, market, chain, t_horizon)?;
    conditional_from_outcomes(&outcomes, j, prefs)
}

/// Combine per-regime conditional estimates into the certainty-equivalent
/// objective Ĵ = Σ_j p̂(j) (u^j)^{-1}(mean_j), with the standard error
/// propagated by the delta method through the inverse utilities and the
/// multinomial weights.
fn objective_from_outcomes(
    outcomes: &[(Regime, f64)],
    reachable: [bool; 2],
    prefs: &Preferences,
) -> Result<McEstimate> {
    let n = outcomes.len();
    let mut per_regime: [Option<CondEstimate>; 2] = [None, None];
    let mut objective = 0.0;
    let mut var = 0.0;
    let mut ce = [0.0f64; 2];
    let mut p_hat = [0.0f64; 2];
    for j in Regime::ALL {
        if !reachable[j.index()] {
            continue;
        }
        let est = conditional_from_outcomes(outcomes, j, prefs)?;
        let p = est.n_effective as f64 / n as f64;
        let value = inverse_utility(est.mean, j, prefs)?;
        let slope = inverse_utility_derivative(est.mean, j, prefs)?;
        objective += p * value;
        var += (p * slope * est.std_error).powi(2);
        ce[j.index()] = value;
        p_hat[j.index()] = p;
        per_regime[j.index()] = Some(est);
    }
    if reachable == [true, true] {
        // Multinomial wobble of the weights: Var(p̂) contributes
        // p̂1 p̂2 (c1 - c2)² / n for two regimes.
        var += p_hat[0] * p_hat[1] * (ce[0] - ce[1]).powi(2) / n as f64;
    }
    Ok(McEstimate {
        per_regime,
        objective,
        objective_se: var.sqrt(),
        n_paths: n,
        dt: 0.0,
        seed: 0,
    })
}

/// Estimate the objective J(t0, x0, i0) under a strategy.
pub fn estimate_objective(
    strategy: &StrategySpec,
    sim: &SimConfig,
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<McEstimate> {
    sim.validate(t_horizon)?;
    check_equilibrium_consistency(strategy, market, t_horizon)?;
    if sim.t0 == t_horizon {
        // Degenerate horizon: the certainty equivalent of x0 is x0.
        let mut per_regime: [Option<CondEstimate>; 2] = [None, None];
        per_regime[sim.i0.index()] = Some(CondEstimate {
            mean: utility(sim.x0, sim.i0, prefs)?,
            std_error: 0.0,
            n_effective: sim.n_paths,
            low_sample: sim.n_paths < 30,
        });
        return Ok(McEstimate {
            per_regime,
            objective: sim.x0,
            objective_se: 0.0,
            n_paths: sim.n_paths,
            dt: sim.dt,
            seed: sim.seed,
        });
    }
    let reachable = reachable_regimes(sim, chain, t_horizon)?;
    let outcomes = run_batch(Policy::Single(strategy), sim, market, chain, t_horizon)?;
    let mut est = objective_from_outcomes(&outcomes, reachable, prefs)?;
    est.dt = sim.dt;
    est.seed = sim.seed;
    Ok(est)
}

fn reachable_regimes(sim: &SimConfig, chain: &RegimeChain, t_horizon: f64) -> Result<[bool; 2]> {
    let mut out = [false; 2];
    for j in Regime::ALL {
        out[j.index()] = transition_probability(sim.t0, sim.i0, j, chain, t_horizon)? > 0.0;
    }
    Ok(out)
}

/// Slope estimate for one perturbation window width.
#[derive(Debug, Clone, Copy)]
pub struct SlopeEstimate {
    pub h: f64,
    /// (Ĵ^{π_h} - Ĵ^{π̂}) / h under common random numbers.
    pub slope: f64,
    pub std_error: f64,
    pub objective_perturbed: f64,
    pub objective_equilibrium: f64,
}

/// Test the equilibrium property of the solved strategy: for each window
/// width h, follow `alt` on [t0, t0+h) and the equilibrium afterwards, and
/// estimate the objective difference quotient against the pure equilibrium
/// run on identical regime paths and Brownian noise. An equilibrium predicts
/// every slope <= 0 up to sampling error as h shrinks.
pub fn perturbation_test(
    alt: &StrategySpec,
    h_values: &[f64],
    sol: &Arc<GSolution>,
    sim: &SimConfig,
) -> Result<Vec<SlopeEstimate>> {
    let t_horizon = sol.t_horizon();
    sim.validate(t_horizon)?;
    if sim.t0 >= t_horizon {
        return Err(Error::InvalidArgument(
            "perturbation test needs t0 < T".into(),
        ));
    }
    for &h in h_values {
        if !(h > 0.0) || h > t_horizon - sim.t0 {
            return Err(Error::InvalidArgument(format!(
                "window width h must lie in (0, T - t0], got {h}"
            )));
        }
    }
    let market = *sol.market();
    let prefs = *sol.preferences();
    let chain = *sol.chain();
    let equilibrium = StrategySpec::equilibrium(sol.clone());
    let reachable = reachable_regimes(sim, &chain, t_horizon)?;

    let base = run_batch(
        Policy::Single(&equilibrium),
        sim,
        &market,
        &chain,
        t_horizon,
    )?;
    let base_objective = objective_from_outcomes(&base, reachable, &prefs)?;

    let mut slopes = Vec::with_capacity(h_values.len());
    for &h in h_values {
        let policy = Policy::Switched {
            head: alt,
            tail: &equilibrium,
            switch_t: sim.t0 + h,
        };
        let perturbed = run_batch(policy, sim, &market, &chain, t_horizon)?;
        let perturbed_objective = objective_from_outcomes(&perturbed, reachable, &prefs)?;

        // Common random numbers give identical regime partitions, so the
        // difference variance comes from paired per-path utility gaps.
        let mut var = 0.0;
        for j in Regime::ALL {
            let (Some(pe), Some(be)) = (
                perturbed_objective.per_regime[j.index()],
                base_objective.per_regime[j.index()],
            ) else {
                continue;
            };
            debug_assert_eq!(pe.n_effective, be.n_effective);
            let diffs: Vec<f64> = base
                .iter()
                .zip(&perturbed)
                .filter(|((terminal, _), _)| *terminal == j)
                .map(|((_, xb), (_, xp))| {
                    Ok(utility(*xp, j, &prefs)? - utility(*xb, j, &prefs)?)
                })
                .collect::<Result<_>>()?;
            let p = pe.n_effective as f64 / sim.n_paths as f64;
            let mid_mean = 0.5 * (pe.mean + be.mean);
            let slope_at_mid = inverse_utility_derivative(mid_mean, j, &prefs)?;
            var += (p * slope_at_mid).powi(2) * sample_variance(&diffs) / diffs.len() as f64;
        }
        slopes.push(SlopeEstimate {
            h,
            slope: (perturbed_objective.objective - base_objective.objective) / h,
            std_error: var.sqrt() / h,
            objective_perturbed: perturbed_objective.objective,
            objective_equilibrium: base_objective.objective,
        });
    }
    Ok(slopes)
}

/// One row of the estimates CSV.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    pub quantity: String,
    pub regime_i: Option<Regime>,
    pub regime_j: Option<Regime>,
    pub estimate: f64,
    pub std_error: f64,
    pub n_effective: usize,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Serialize estimate rows with the fixed column set
/// `quantity,regime_i,regime_j,estimate,std_error,n_effective,n_paths,dt,seed`.
pub fn write_estimates_csv<W: std::io::Write>(
    records: &[EstimateRecord],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "quantity",
        "regime_i",
        "regime_j",
        "estimate",
        "std_error",
        "n_effective",
        "n_paths",
        "dt",
        "seed",
    ])?;
    for rec in records {
        w.write_record([
            rec.quantity.clone(),
            rec.regime_i.map(|r| r.label().to_string()).unwrap_or_default(),
            rec.regime_j.map(|r| r.label().to_string()).unwrap_or_default(),
            rec.estimate.to_string(),
            rec.std_error.to_string(),
            rec.n_effective.to_string(),
            rec.n_paths.to_string(),
            rec.dt.to_string(),
            rec.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
