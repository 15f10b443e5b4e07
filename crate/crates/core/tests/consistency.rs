//! Cross-module checks: the Monte Carlo estimators against the closed-form
//! value functions and objective, and the perturbation test of the
//! equilibrium property. Moderate path counts keep these quick; the
//! full-strength runs live in the acceptance suite.

use std::sync::{Arc, OnceLock};

use regime_eq_core::*;

fn paper_market() -> MarketParams {
    MarketParams::new([0.05, 0.01], [0.15, 0.25], [0.25, 0.6]).unwrap()
}

fn paper_prefs() -> Preferences {
    Preferences::new(2.0, 3.0).unwrap()
}

fn unit_chain() -> RegimeChain {
    RegimeChain::new(1.0, 1.0).unwrap()
}

fn solution() -> &'static Arc<GSolution> {
    static SOL: OnceLock<Arc<GSolution>> = OnceLock::new();
    SOL.get_or_init(|| {
        Arc::new(solve_g(&paper_market(), &paper_prefs(), &unit_chain(), 10.0, 0.0, 1e-10).unwrap())
    })
}

fn sim(i0: Regime, seed: u64) -> SimConfig {
    SimConfig {
        n_paths: 20_000,
        dt: 2e-3,
        seed,
        t0: 0.0,
        x0: 1.0,
        i0,
    }
}

fn estimate(i0: Regime, seed: u64) -> &'static McEstimate {
    static RUNS: OnceLock<[McEstimate; 2]> = OnceLock::new();
    let runs = RUNS.get_or_init(|| {
        let sol = solution();
        let strategy = StrategySpec::equilibrium(sol.clone());
        Regime::ALL.map(|i0| {
            estimate_objective(
                &strategy,
                &sim(i0, 2718),
                sol.market(),
                sol.preferences(),
                sol.chain(),
                sol.t_horizon(),
            )
            .unwrap()
        })
    });
    let _ = seed;
    &runs[i0.index()]
}

#[test]
fn conditional_utilities_match_value_functions() {
    // E[u^j(X_T) | start in i, end in j] must agree with f^{i,j}(0, 1)
    // within Monte Carlo noise, for all four (i, j) pairs.
    let sol = solution();
    for i0 in Regime::ALL {
        let est = estimate(i0, 2718);
        for j in Regime::ALL {
            let cond = est.per_regime[j.index()].expect("regime reachable");
            let f = value_function(0.0, 1.0, i0, j, sol).unwrap();
            let z = (cond.mean - f).abs() / cond.std_error;
            assert!(
                z <= 3.0,
                "({}, {}): mean {} vs f {} is {z:.2} SEs",
                i0.label(),
                j.label(),
                cond.mean,
                f
            );
            assert!(!cond.low_sample);
        }
        let split: usize = est
            .per_regime
            .iter()
            .flatten()
            .map(|c| c.n_effective)
            .sum();
        assert_eq!(split, est.n_paths);
    }
}

#[test]
fn simulated_objective_matches_closed_form() {
    let sol = solution();
    for i0 in Regime::ALL {
        let est = estimate(i0, 2718);
        let closed = objective(0.0, 1.0, i0, sol).unwrap();
        let z = (est.objective - closed).abs() / est.objective_se;
        assert!(
            z <= 3.0,
            "regime {}: J estimate {} vs closed form {closed} is {z:.2} SEs",
            i0.label(),
            est.objective
        );
    }
}

#[test]
fn terminal_split_matches_transition_probabilities() {
    let est = estimate(Regime::Bull, 2718);
    let chain = unit_chain();
    for j in Regime::ALL {
        let p = transition_probability(0.0, Regime::Bull, j, &chain, 10.0).unwrap();
        let n_j = est.per_regime[j.index()].unwrap().n_effective;
        let freq = n_j as f64 / est.n_paths as f64;
        let se = (p * (1.0 - p) / est.n_paths as f64).sqrt();
        assert!((freq - p).abs() <= 3.0 * se);
    }
}

#[test]
fn deviations_from_equilibrium_do_not_improve_the_objective() {
    let sol = solution();
    let sim = SimConfig {
        n_paths: 8_000,
        dt: 5e-3,
        seed: 4242,
        t0: 0.0,
        x0: 1.0,
        i0: Regime::Bull,
    };
    let aggressive = StrategySpec::constant_fraction([
        2.0 * merton_fraction(Regime::Bull, 2.0, sol.market()).unwrap(),
        2.0 * merton_fraction(Regime::Bear, 2.0, sol.market()).unwrap(),
    ])
    .unwrap();
    for alt in [StrategySpec::zero_investment(), aggressive] {
        let slopes = perturbation_test(&alt, &[0.5, 0.25, 0.1], sol, &sim).unwrap();
        for s in &slopes {
            assert!(
                s.slope <= 2.0 * s.std_error,
                "h = {}: slope {} > 2 SE ({})",
                s.h,
                s.slope,
                s.std_error
            );
        }
    }
}

#[test]
fn estimates_are_reproducible_across_worker_counts() {
    let sol = solution();
    let strategy = StrategySpec::equilibrium(sol.clone());
    let cfg = SimConfig {
        n_paths: 2_000,
        dt: 0.01,
        seed: 99,
        t0: 0.0,
        x0: 1.0,
        i0: Regime::Bear,
    };
    let run = || {
        estimate_objective(
            &strategy,
            &cfg,
            sol.market(),
            sol.preferences(),
            sol.chain(),
            10.0,
        )
        .unwrap()
    };
    let a = with_workers(Some(1), run);
    let b = with_workers(Some(4), run);
    let c = with_workers(Some(8), run);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert_eq!(a.objective.to_bits(), c.objective.to_bits());
    assert_eq!(a.objective_se.to_bits(), b.objective_se.to_bits());
    for j in 0..2 {
        let (ea, eb) = (a.per_regime[j].unwrap(), b.per_regime[j].unwrap());
        assert_eq!(ea.mean.to_bits(), eb.mean.to_bits());
        assert_eq!(ea.n_effective, eb.n_effective);
    }
}
