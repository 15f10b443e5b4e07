//! Closed-form evaluation layer: CRRA utilities and their inverses, Merton
//! fractions, the equilibrium investment fraction, separable value functions,
//! and the certainty-equivalent objective.
//!
//! Everything here is a pure function of a solved [`GSolution`]; the
//! equilibrium proportion is
//!
//! ```text
//!     π*(t, i) = (μ_i - r_i)/σ_i² · A_i(t),
//! ```
//!
//! independent of wealth, and the dollar strategy is `x · π*(t, i)`.

use std::io;
use std::sync::Arc;

use crate::dopri::{self, Options as DopriOptions, StepFailure};
use crate::error::{Error, Result};
use crate::odes::{a_weight, g_index, GSolution, MarketParams, Preferences};
use crate::regime::Regime;

/// CRRA utility u^j(x) = x^{1-α_j}/(1-α_j) for wealth x > 0.
pub fn utility(x: f64, j: Regime, prefs: &Preferences) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let alpha = prefs.alpha(j);
    Ok(x.powf(1.0 - alpha) / (1.0 - alpha))
}

/// Inverse utility (u^j)^{-1}(y) = ((1-α_j) y)^{1/(1-α_j)}.
///
/// The admissible range depends on the exponent: y < 0 when α_j > 1, y > 0
/// when α_j < 1. The boundary y = 0 corresponds to infinite certainty
/// equivalent and is rejected.
pub fn inverse_utility(y: f64, j: Regime, prefs: &Preferences) -> Result<f64> {
    let alpha = prefs.alpha(j);
    let scaled = (1.0 - alpha) * y;
    if !y.is_finite() || !(scaled > 0.0) {
        return Err(Error::Domain(format!(
            "y = {y} outside the range of the regime-{} utility",
            j.label()
        )));
    }
    Ok(scaled.powf(1.0 / (1.0 - alpha)))
}

/// Derivative of the inverse utility, ((u^j)^{-1})'(y) = ((1-α_j) y)^{α_j/(1-α_j)}.
/// Used for delta-method error propagation through certainty equivalents.
pub fn inverse_utility_derivative(y: f64, j: Regime, prefs: &Preferences) -> Result<f64> {
    let alpha = prefs.alpha(j);
    let scaled = (1.0 - alpha) * y;
    if !y.is_finite() || !(scaled > 0.0) {
        return Err(Error::Domain(format!(
            "y = {y} outside the range of the regime-{} utility",
            j.label()
        )));
    }
    Ok(scaled.powf(alpha / (1.0 - alpha)))
}

/// Merton's constant fraction (μ_i - r_i)/(α σ_i²).
pub fn merton_fraction(i: Regime, alpha: f64, market: &MarketParams) -> Result<f64> {
    if !alpha.is_finite() || alpha <= 0.0 || alpha == 1.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha must be positive, finite, and != 1, got {alpha}"
        )));
    }
    Ok(market.excess_return(i) / (alpha * market.sigma(i) * market.sigma(i)))
}

/// Equilibrium proportion of wealth in the risky asset at time `t` in regime
/// `i`. Collapses to the Merton fraction of α_i at t = T, and to the Merton
/// fraction of the common exponent whenever α_1 = α_2.
pub fn equilibrium_fraction(t: f64, i: Regime, sol: &GSolution) -> Result<f64> {
    let g4 = sol.interpolate(t)?;
    let probs = sol.chain().transition_row(sol.t_horizon() - t, i)?;
    let weight = a_weight(i, &g4, probs, sol.preferences())?;
    let market = sol.market();
    Ok(market.excess_return(i) / (market.sigma(i) * market.sigma(i)) * weight)
}

/// Dollar amount invested by the equilibrium strategy: x · π*(t, i).
pub fn equilibrium_dollars(t: f64, x: f64, i: Regime, sol: &GSolution) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be finite, got {x}")));
    }
    Ok(x * equilibrium_fraction(t, i, sol)?)
}

/// Separable value function f^{i,j}(t, x) = x^{1-α_j} (g^{i,j}(t))^{α_j} / (1-α_j).
///
/// This solves the aggregation system with the chain's own switching rates,
/// so it equals the expectation of u^j(X_T) under the equilibrium strategy
/// over *all* paths started at (t, x, i).
pub fn value_function(t: f64, x: f64, i: Regime, j: Regime, sol: &GSolution) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let g4 = sol.interpolate(t)?;
    let alpha = sol.preferences().alpha(j);
    Ok(x.powf(1.0 - alpha) * g4[g_index(i, j)].powf(alpha) / (1.0 - alpha))
}

/// Exact conditional expectation E[u^j(X_T) | X_t = x, ε_t = i, ε_T = j]
/// under the equilibrium strategy.
///
/// Conditioning on the terminal regime tilts the switching rates, so this is
/// not [`value_function`]; it is obtained from the indicator-weighted
/// expectation E[u^j(X_T) 1{ε_T = j}], which separates as
/// x^{1-α_j} k^{i}(t) / (1-α_j) with a linear two-dimensional system
///
/// ```text
///     k_t^{i} = -(1-α_j)(θ_i² A_i + r_i - ½ α_j θ_i² A_i²) k^{i}
///               - λ_i (k^{î} - k^{i}),        k^{i}(T) = 1{i = j},
/// ```
///
/// divided by the transition probability p(t, i, j). Serves as the exact
/// benchmark for the filtered Monte Carlo estimator.
pub fn conditional_value_function(
    t: f64,
    x: f64,
    i: Regime,
    j: Regime,
    sol: &GSolution,
) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let t_horizon = sol.t_horizon();
    if !(t >= sol.t_start() && t <= t_horizon) {
        return Err(Error::Range(format!(
            "t = {t} outside solved range [{}, {t_horizon}]",
            sol.t_start()
        )));
    }
    let chain = sol.chain();
    let p = chain.transition_row(t_horizon - t, i)?[j.index()];
    if p == 0.0 {
        return Err(Error::UnreachableRegime { regime: j.label() });
    }
    let prefs = sol.preferences();
    let market = sol.market();
    let alpha = prefs.alpha(j);
    let mut k = [0.0; 2];
    k[j.index()] = 1.0;
    if t < t_horizon {
        // Integrate in τ = T - u; k_τ = -k_t.
        let field = |tau: f64, k: &[f64; 2]| -> [f64; 2] {
            let u = t_horizon - tau;
            let g4 = sol.interpolate(u).expect("inside solved range");
            let probs = chain.transition_matrix_unchecked(t_horizon - u);
            let mut out = [0.0; 2];
            for i in Regime::ALL {
                let a = a_weight(i, &g4, probs[i.index()], prefs).expect("positive g");
                let theta_sq = market.risk_price(i) * market.risk_price(i);
                let growth =
                    (1.0 - alpha) * (theta_sq * a + market.r(i) - 0.5 * alpha * theta_sq * a * a);
                out[i.index()] = growth * k[i.index()]
                    + chain.leave_rate(i) * (k[i.other().index()] - k[i.index()]);
            }
            out
        };
        let span = t_horizon - t;
        let opts = DopriOptions {
            rtol: sol.tolerance() * 0.1,
            atol: sol.tolerance() * 0.1,
            max_steps: 2_000_000,
            h_max: span / 1000.0,
        };
        let nodes = dopri::integrate(field, 0.0, span, k, |y| y.iter().all(|v| v.is_finite()), &opts)
            .map_err(|failure| match failure {
                StepFailure::ValidityLoss { t: tau } | StepFailure::Underflow { t: tau } => {
                    Error::StepSizeUnderflow {
                        t: t_horizon - tau,
                    }
                }
                StepFailure::MaxSteps { t: tau } => Error::StepSizeUnderflow {
                    t: t_horizon - tau,
                },
            })?;
        k = nodes.last().unwrap().y;
    }
    Ok(x.powf(1.0 - alpha) * k[i.index()] / ((1.0 - alpha) * p))
}

/// Certainty-equivalent objective
///
/// ```text
///     J(t, x, i) = Σ_j p(t,i,j) (u^j)^{-1}(f^{i,j}(t,x))
///               = x Σ_j p(t,i,j) (g^{i,j}(t))^{α_j/(1-α_j)},
/// ```
///
/// evaluated through the g-power form, which avoids the cancellation the
/// composed inverse-utility route suffers when α_j > 1 makes f tiny and
/// negative. The composed route survives in the test suite as an oracle.
pub fn objective(t: f64, x: f64, i: Regime, sol: &GSolution) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("wealth must be positive, got {x}")));
    }
    let g4 = sol.interpolate(t)?;
    let probs = sol.chain().transition_row(sol.t_horizon() - t, i)?;
    let prefs = sol.preferences();
    let mut total = 0.0;
    for j in Regime::ALL {
        total += probs[j.index()] * g4[g_index(i, j)].powf(prefs.ce_exponent(j));
    }
    Ok(x * total)
}

/// Value-function bundle at one evaluation point.
#[derive(Debug, Clone, Copy)]
pub struct ValuePoint {
    pub t: f64,
    pub x: f64,
    pub i: Regime,
    /// f^{i,1} and f^{i,2}.
    pub f: [f64; 2],
    pub objective: f64,
}

impl ValuePoint {
    pub fn evaluate(t: f64, x: f64, i: Regime, sol: &GSolution) -> Result<ValuePoint> {
        Ok(ValuePoint {
            t,
            x,
            i,
            f: [
                value_function(t, x, i, Regime::Bull, sol)?,
                value_function(t, x, i, Regime::Bear, sol)?,
            ],
            objective: objective(t, x, i, sol)?,
        })
    }
}

/// Investment policy fed to the simulator. Every variant is positively
/// homogeneous in wealth: the dollar amount is `x · fraction(t, i)`.
#[derive(Debug, Clone)]
pub enum StrategyKind {
    /// The solved equilibrium policy.
    Equilibrium(Arc<GSolution>),
    /// Constant per-regime proportions (Merton-style investors).
    ConstantFraction([f64; 2]),
    /// Everything in the bond.
    ZeroInvestment,
}

/// A strategy plus its admissibility constant C with |π(t,x,i)| <= C|x|.
#[derive(Debug, Clone)]
pub struct StrategySpec {
    kind: StrategyKind,
    bound_c: f64,
}

impl StrategySpec {
    pub fn equilibrium(sol: Arc<GSolution>) -> StrategySpec {
        let market = sol.market();
        let scale = Regime::ALL
            .iter()
            .map(|&i| (market.excess_return(i) / (market.sigma(i) * market.sigma(i))).abs())
            .fold(0.0f64, f64::max);
        let bound_c = scale / sol.preferences().alpha_min();
        StrategySpec {
            kind: StrategyKind::Equilibrium(sol),
            bound_c,
        }
    }

    pub fn constant_fraction(fractions: [f64; 2]) -> Result<StrategySpec> {
        if fractions.iter().any(|f| !f.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "fractions must be finite, got {fractions:?}"
            )));
        }
        let bound_c = fractions[0].abs().max(fractions[1].abs());
        Ok(StrategySpec {
            kind: StrategyKind::ConstantFraction(fractions),
            bound_c,
        })
    }

    pub fn zero_investment() -> StrategySpec {
        StrategySpec {
            kind: StrategyKind::ZeroInvestment,
            bound_c: 0.0,
        }
    }

    #[inline]
    pub fn kind(&self) -> &StrategyKind {
        &self.kind
    }

    #[inline]
    pub fn bound_c(&self) -> f64 {
        self.bound_c
    }

    /// Proportion of wealth in the risky asset at (t, i).
    pub fn fraction(&self, t: f64, i: Regime) -> Result<f64> {
        match &self.kind {
            StrategyKind::Equilibrium(sol) => equilibrium_fraction(t, i, sol),
            StrategyKind::ConstantFraction(f) => Ok(f[i.index()]),
            StrategyKind::ZeroInvestment => Ok(0.0),
        }
    }
}

/// Write the strategy table CSV: equilibrium fraction and both Merton
/// fractions per regime on the given time grid.
pub fn write_strategy_table<W: io::Write>(
    sol: &GSolution,
    times: &[f64],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "t",
        "pi_star_regime1",
        "pi_star_regime2",
        "merton_alpha1_regime1",
        "merton_alpha1_regime2",
        "merton_alpha2_regime1",
        "merton_alpha2_regime2",
    ])?;
    let prefs = sol.preferences();
    let market = sol.market();
    for &t in times {
        let mut rec = vec![t.to_string()];
        for i in Regime::ALL {
            rec.push(equilibrium_fraction(t, i, sol)?.to_string());
        }
        for j in Regime::ALL {
            let alpha = prefs.alpha(j);
            for i in Regime::ALL {
                rec.push(merton_fraction(i, alpha, market)?.to_string());
            }
        }
        // Reorder: the header interleaves by (alpha, regime) already.
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odes::solve_g;
    use crate::regime::RegimeChain;
    use approx::assert_relative_eq;

    fn paper_market() -> MarketParams {
        MarketParams::new([0.05, 0.01], [0.15, 0.25], [0.25, 0.6]).unwrap()
    }

    fn paper_prefs() -> Preferences {
        Preferences::new(2.0, 3.0).unwrap()
    }

    fn paper_solution(tolerance: f64) -> GSolution {
        solve_g(
            &paper_market(),
            &paper_prefs(),
            &RegimeChain::new(1.0, 1.0).unwrap(),
            10.0,
            0.0,
            tolerance,
        )
        .unwrap()
    }

    #[test]
    fn utility_hand_values() {
        let prefs = paper_prefs();
        assert_eq!(utility(1.0, Regime::Bull, &prefs).unwrap(), -1.0);
        let sqrt_prefs = Preferences::new(0.5, 0.5).unwrap();
        assert_eq!(utility(1.0, Regime::Bull, &sqrt_prefs).unwrap(), 2.0);
        assert!(utility(0.0, Regime::Bull, &prefs).is_err());
        assert!(utility(-1.0, Regime::Bull, &prefs).is_err());
    }

    #[test]
    fn utility_round_trips() {
        for prefs in [
            paper_prefs(),
            Preferences::new(0.5, 0.7).unwrap(),
            Preferences::new(5.0, 0.2).unwrap(),
        ] {
            for j in Regime::ALL {
                for x in [0.1, 1.0, 17.3] {
                    let u = utility(x, j, &prefs).unwrap();
                    assert_relative_eq!(
                        inverse_utility(u, j, &prefs).unwrap(),
                        x,
                        max_relative = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn inverse_utility_hand_values() {
        let prefs = Preferences::new(2.0, 3.0).unwrap();
        // (u^2)^{-1}(u^2(2)) = 2.
        let u = utility(2.0, Regime::Bear, &prefs).unwrap();
        assert_relative_eq!(
            inverse_utility(u, Regime::Bear, &prefs).unwrap(),
            2.0,
            max_relative = 1e-14
        );
        // ((1-2)(-0.5))^{1/(1-2)} = 0.5^{-1} = 2.
        assert_relative_eq!(
            inverse_utility(-0.5, Regime::Bull, &prefs).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        // y = 0 is the divergent boundary.
        assert!(inverse_utility(0.0, Regime::Bull, &prefs).is_err());
        // Wrong sign for alpha > 1.
        assert!(inverse_utility(0.5, Regime::Bull, &prefs).is_err());
    }

    #[test]
    fn inverse_utility_derivative_matches_finite_difference() {
        let prefs = paper_prefs();
        for j in Regime::ALL {
            let y = -0.4;
            let h = 1e-7;
            let fd = (inverse_utility(y + h, j, &prefs).unwrap()
                - inverse_utility(y - h, j, &prefs).unwrap())
                / (2.0 * h);
            let exact = inverse_utility_derivative(y, j, &prefs).unwrap();
            assert_relative_eq!(fd, exact, max_relative = 1e-6);
        }
    }

    #[test]
    fn merton_fraction_values() {
        let market = paper_market();
        // (0.15 - 0.05) / (2 · 0.25²) = 0.8.
        assert_relative_eq!(
            merton_fraction(Regime::Bull, 2.0, &market).unwrap(),
            0.8,
            epsilon = 1e-12
        );
        // (0.25 - 0.01) / (3 · 0.36) = 0.2222...
        assert_relative_eq!(
            merton_fraction(Regime::Bear, 3.0, &market).unwrap(),
            0.24 / 1.08,
            max_relative = 1e-14
        );
        let flat = MarketParams::new([0.05, 0.01], [0.05, 0.25], [0.25, 0.6]).unwrap();
        assert_eq!(merton_fraction(Regime::Bull, 2.0, &flat).unwrap(), 0.0);
        assert!(merton_fraction(Regime::Bull, 1.0, &market).is_err());
    }

    #[test]
    fn equilibrium_fraction_terminal_collapse() {
        let sol = paper_solution(1e-10);
        for i in Regime::ALL {
            let at_t = equilibrium_fraction(10.0, i, &sol).unwrap();
            let merton =
                merton_fraction(i, sol.preferences().alpha(i), sol.market()).unwrap();
            assert_relative_eq!(at_t, merton, max_relative = 1e-12);
        }
        assert!(equilibrium_fraction(10.1, Regime::Bull, &sol).is_err());
    }

    #[test]
    fn equal_exponents_collapse_to_merton_everywhere() {
        let market = paper_market();
        let prefs = Preferences::new(2.0, 2.0).unwrap();
        let chain = RegimeChain::new(1.0, 1.0).unwrap();
        let sol = solve_g(&market, &prefs, &chain, 10.0, 0.0, 1e-10).unwrap();
        for i in Regime::ALL {
            let merton = merton_fraction(i, 2.0, &market).unwrap();
            for &t in sol.grid().iter().step_by(53) {
                let pi = equilibrium_fraction(t, i, &sol).unwrap();
                assert!((pi - merton).abs() < 1e-9, "t = {t}: {pi} vs {merton}");
            }
        }
    }

    #[test]
    fn sandwich_between_merton_fractions() {
        let sol = paper_solution(1e-10);
        let market = sol.market();
        for i in Regime::ALL {
            let upper = merton_fraction(i, 2.0, market).unwrap();
            let lower = merton_fraction(i, 3.0, market).unwrap();
            for &t in sol.grid() {
                if t >= 10.0 {
                    continue;
                }
                let pi = equilibrium_fraction(t, i, &sol).unwrap();
                assert!(lower < pi && pi < upper, "t = {t}, pi = {pi}");
            }
        }
    }

    #[test]
    fn terminal_limit_is_attained() {
        let sol = paper_solution(1e-10);
        for i in Regime::ALL {
            let merton =
                merton_fraction(i, sol.preferences().alpha(i), sol.market()).unwrap();
            let near = equilibrium_fraction(10.0 - 1e-8, i, &sol).unwrap();
            assert!((near - merton).abs() < 1e-6);
        }
    }

    #[test]
    fn equilibrium_fraction_reference_values() {
        // Frozen from a tolerance-1e-12 solve, cross-checked against a
        // 200k-step fixed-grid RK4 run of the same system.
        let sol = paper_solution(1e-12);
        let pi_bull = equilibrium_fraction(0.0, Regime::Bull, &sol).unwrap();
        let pi_bear = equilibrium_fraction(0.0, Regime::Bear, &sol).unwrap();
        assert_relative_eq!(pi_bull, PI_STAR_AT_ZERO[0], max_relative = 1e-9);
        assert_relative_eq!(pi_bear, PI_STAR_AT_ZERO[1], max_relative = 1e-9);
    }

    /// π*(0, i) for the reference configuration (μ = (0.15, 0.25),
    /// r = (0.05, 0.01), σ = (0.25, 0.6), α = (2, 3), λ = (1, 1), T = 10).
    const PI_STAR_AT_ZERO: [f64; 2] = [0.6485413425688803, 0.27022545006889193];

    #[test]
    fn equilibrium_dollars_is_linear() {
        let sol = paper_solution(1e-10);
        let base = equilibrium_dollars(3.0, 1.0, Regime::Bull, &sol).unwrap();
        assert_eq!(equilibrium_dollars(3.0, 0.0, Regime::Bull, &sol).unwrap(), 0.0);
        assert_relative_eq!(
            equilibrium_dollars(3.0, 2.0, Regime::Bull, &sol).unwrap(),
            2.0 * base,
            max_relative = 1e-15
        );
        assert_relative_eq!(
            base,
            equilibrium_fraction(3.0, Regime::Bull, &sol).unwrap(),
            max_relative = 1e-15
        );
    }

    #[test]
    fn value_function_terminal_and_homogeneity() {
        let sol = paper_solution(1e-10);
        let prefs = *sol.preferences();
        for i in Regime::ALL {
            for j in Regime::ALL {
                for x in [0.5, 1.0, 3.7] {
                    let terminal = value_function(10.0, x, i, j, &sol).unwrap();
                    assert_relative_eq!(
                        terminal,
                        utility(x, j, &prefs).unwrap(),
                        max_relative = 1e-14
                    );
                }
                let f1 = value_function(4.0, 1.0, i, j, &sol).unwrap();
                let f2 = value_function(4.0, 2.0, i, j, &sol).unwrap();
                assert_relative_eq!(
                    f2 / f1,
                    2.0f64.powf(1.0 - prefs.alpha(j)),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn value_function_reference_value() {
        // f^{1,2}(5, 1) = (g^{1,2}(5))³ / (-2), frozen from the 1e-12 solve.
        let sol = paper_solution(1e-12);
        let f = value_function(5.0, 1.0, Regime::Bull, Regime::Bear, &sol).unwrap();
        assert_relative_eq!(f, F_12_AT_5, max_relative = 1e-9);
        let g = sol.interpolate(5.0).unwrap()[g_index(Regime::Bull, Regime::Bear)];
        assert_relative_eq!(f, g.powi(3) / -2.0, max_relative = 1e-14);
    }

    const F_12_AT_5: f64 = -0.28243218128920433;

    #[test]
    fn objective_terminal_linearity_and_reference() {
        let sol = paper_solution(1e-12);
        for i in Regime::ALL {
            for x in [0.25, 1.0, 8.0] {
                assert_relative_eq!(
                    objective(10.0, x, i, &sol).unwrap(),
                    x,
                    max_relative = 1e-12
                );
            }
            let j1 = objective(0.0, 1.0, i, &sol).unwrap();
            let j2 = objective(0.0, 2.0, i, &sol).unwrap();
            assert_relative_eq!(j2, 2.0 * j1, max_relative = 1e-14);
        }
        assert_relative_eq!(
            objective(0.0, 1.0, Regime::Bull, &sol).unwrap(),
            OBJECTIVE_AT_ZERO[0],
            max_relative = 1e-9
        );
        assert_relative_eq!(
            objective(0.0, 1.0, Regime::Bear, &sol).unwrap(),
            OBJECTIVE_AT_ZERO[1],
            max_relative = 1e-9
        );
    }

    /// J(0, 1, i) for the reference configuration.
    const OBJECTIVE_AT_ZERO: [f64; 2] = [1.8758242309807112, 1.8386863053785989];

    #[test]
    fn certainty_equivalent_dual_route() {
        // (u^j)^{-1}(f^{i,j}(t,x)) must equal x · g^{α_j/(1-α_j)} to near
        // machine precision wherever both routes are defined.
        let sol = paper_solution(1e-10);
        let prefs = sol.preferences();
        for i in Regime::ALL {
            for j in Regime::ALL {
                for &t in &[0.0, 2.5, 7.0, 9.9] {
                    for &x in &[0.4, 1.0, 5.0] {
                        let composed = inverse_utility(
                            value_function(t, x, i, j, &sol).unwrap(),
                            j,
                            prefs,
                        )
                        .unwrap();
                        let g = sol.interpolate(t).unwrap()[g_index(i, j)];
                        let direct = x * g.powf(prefs.ce_exponent(j));
                        assert_relative_eq!(composed, direct, max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conditional_value_collapses_when_chain_is_frozen() {
        // With no switching the indicator system reduces to k = g^α, so the
        // conditional and unconditional values coincide on the diagonal.
        let market = paper_market();
        let prefs = paper_prefs();
        let chain = RegimeChain::new(0.0, 0.0).unwrap();
        let sol = solve_g(&market, &prefs, &chain, 10.0, 0.0, 1e-10).unwrap();
        for i in Regime::ALL {
            for &t in &[0.0, 4.0, 9.5] {
                let cond = conditional_value_function(t, 1.3, i, i, &sol).unwrap();
                let plain = value_function(t, 1.3, i, i, &sol).unwrap();
                assert_relative_eq!(cond, plain, max_relative = 1e-8);
            }
            assert!(matches!(
                conditional_value_function(0.0, 1.0, i, i.other(), &sol),
                Err(Error::UnreachableRegime { .. })
            ));
        }
    }

    #[test]
    fn conditional_value_reference_values() {
        // Frozen from a 40k-step fixed-grid RK4 integration of the linear
        // indicator-weighted system on top of the 1e-12 reference solve.
        let sol = paper_solution(1e-12);
        let expected = [
            // (i, j, value)
            (Regime::Bull, Regime::Bull, -0.494862366950164),
            (Regime::Bear, Regime::Bull, -0.5048585781385744),
            (Regime::Bull, Regime::Bear, -0.16585284138978398),
            (Regime::Bear, Regime::Bear, -0.17261958324105817),
        ];
        for (i, j, value) in expected {
            let got = conditional_value_function(0.0, 1.0, i, j, &sol).unwrap();
            assert_relative_eq!(got, value, max_relative = 1e-8);
        }
    }

    #[test]
    fn conditional_value_homogeneity_and_terminal() {
        let sol = paper_solution(1e-10);
        let prefs = *sol.preferences();
        for j in Regime::ALL {
            let base = conditional_value_function(2.0, 1.0, Regime::Bull, j, &sol).unwrap();
            let scaled = conditional_value_function(2.0, 3.0, Regime::Bull, j, &sol).unwrap();
            assert_relative_eq!(
                scaled / base,
                3.0f64.powf(1.0 - prefs.alpha(j)),
                max_relative = 1e-10
            );
            // At T the conditioning is certain and the value is the utility.
            let terminal = conditional_value_function(10.0, 2.0, j, j, &sol).unwrap();
            assert_relative_eq!(
                terminal,
                utility(2.0, j, &prefs).unwrap(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn conditioning_tilts_the_value_away_from_the_aggregation_solution() {
        // Endpoint conditioning reweights regime paths, so the conditional
        // expectation differs from f^{i,j} whenever the chain actually
        // switches; the bull-conditioned value is higher (more time in the
        // high-reward regime), the bear-conditioned one lower.
        let sol = paper_solution(1e-10);
        for i in Regime::ALL {
            let cond_bull =
                conditional_value_function(0.0, 1.0, i, Regime::Bull, &sol).unwrap();
            let plain_bull = value_function(0.0, 1.0, i, Regime::Bull, &sol).unwrap();
            assert!(cond_bull > plain_bull + 1e-3);
            let cond_bear =
                conditional_value_function(0.0, 1.0, i, Regime::Bear, &sol).unwrap();
            let plain_bear = value_function(0.0, 1.0, i, Regime::Bear, &sol).unwrap();
            assert!(cond_bear < plain_bear - 1e-3);
        }
    }

    #[test]
    fn objective_matches_composed_route() {
        let sol = paper_solution(1e-10);
        let prefs = sol.preferences();
        let chain = sol.chain();
        for i in Regime::ALL {
            for &t in &[0.0, 5.0, 9.5] {
                let x = 1.7;
                let probs = chain.transition_row(10.0 - t, i).unwrap();
                let mut composed = 0.0;
                for j in Regime::ALL {
                    let f = value_function(t, x, i, j, &sol).unwrap();
                    composed += probs[j.index()] * inverse_utility(f, j, prefs).unwrap();
                }
                assert_relative_eq!(
                    objective(t, x, i, &sol).unwrap(),
                    composed,
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn strategy_spec_fractions_and_bounds() {
        let sol = Arc::new(paper_solution(1e-10));
        let eq = StrategySpec::equilibrium(sol.clone());
        assert_relative_eq!(eq.bound_c(), 0.8, max_relative = 1e-12);
        let pi = eq.fraction(0.0, Regime::Bull).unwrap();
        assert_relative_eq!(
            pi,
            equilibrium_fraction(0.0, Regime::Bull, &sol).unwrap(),
            max_relative = 1e-15
        );
        assert!(pi.abs() <= eq.bound_c());

        let constant = StrategySpec::constant_fraction([0.3, -0.1]).unwrap();
        assert_eq!(constant.fraction(5.0, Regime::Bull).unwrap(), 0.3);
        assert_eq!(constant.fraction(5.0, Regime::Bear).unwrap(), -0.1);
        assert_eq!(constant.bound_c(), 0.3);

        let zero = StrategySpec::zero_investment();
        assert_eq!(zero.fraction(2.0, Regime::Bear).unwrap(), 0.0);
        assert_eq!(zero.bound_c(), 0.0);

        assert!(StrategySpec::constant_fraction([f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn strategy_table_has_expected_columns() {
        let sol = paper_solution(1e-10);
        let mut buf = Vec::new();
        write_strategy_table(&sol, &[0.0, 5.0, 10.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "t,pi_star_regime1,pi_star_regime2,merton_alpha1_regime1,merton_alpha1_regime2,merton_alpha2_regime1,merton_alpha2_regime2"
        );
        assert_eq!(lines.count(), 3);
    }
}
