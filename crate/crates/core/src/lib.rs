//! Equilibrium portfolio selection in a two-regime market where both the
//! market coefficients and the investor's CRRA risk aversion depend on the
//! regime.
//!
//! The investor aggregates expected certainty equivalents over the terminal
//! regime, which makes the problem time-inconsistent; the time-consistent
//! answer is the intra-personal equilibrium strategy. For two regimes and
//! power utilities it is available in closed form up to four coupled scalar
//! ODEs:
//!
//! * [`regime`] — the observable two-state Markov chain: transition
//!   probabilities, stationary distribution, exact path sampling.
//! * [`odes`] — backward integration of the growth-factor system
//!   g^{i,j}(t) with adaptive Dormand–Prince 5(4) and dense output.
//! * [`strategy`] — utilities, Merton fractions, the equilibrium investment
//!   fraction, value functions, and the certainty-equivalent objective.
//! * [`montecarlo`] — Euler–Maruyama simulation of the wealth SDE under any
//!   homogeneous strategy, conditional-utility estimators, and perturbation
//!   tests of the equilibrium property. Parallel via rayon (feature
//!   `parallel`, on by default) with bit-identical sequential fallback.

pub mod dopri;
pub mod error;
pub mod montecarlo;
pub mod odes;
pub mod regime;
pub mod strategy;

pub use error::{Error, Result};
pub use montecarlo::{
    estimate_conditional_utility, estimate_expected_utility, estimate_objective,
    exact_wealth_equilibrium, map_paths, map_paths_sequential, perturbation_test, simulate_wealth,
    simulate_wealth_with_increments, substep_grid, with_workers, write_estimates_csv,
    CondEstimate, EstimateRecord, McEstimate, SimConfig, SlopeEstimate, Substep,
};
pub use odes::{
    a_weight, g_index, interpolate_g, rhs, solve_g, GSolution, MarketParams, Preferences,
    RatioBound, DEFAULT_TOLERANCE,
};
pub use regime::{
    sample_regime_path, stationary_distribution, transition_probability, Regime, RegimeChain,
    RegimePath,
};
pub use strategy::{
    conditional_value_function, equilibrium_dollars, equilibrium_fraction, inverse_utility,
    inverse_utility_derivative, merton_fraction, objective, utility, value_function,
    write_strategy_table, StrategyKind, StrategySpec, ValuePoint,
};
