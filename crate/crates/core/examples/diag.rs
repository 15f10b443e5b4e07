// Temporary diagnostic for the conditional-utility consistency gap.
use regime_eq_core::*;
use std::sync::Arc;

/// Exact conditional-expectation oracle: F^{i,j}(t,x) = E[u^j(X_T) 1{eps_T=j}]
/// separates as x^{1-a_j} k^{i,j}(t) / (1-a_j) with a linear k-system driven
/// by the solved A_i(t). Conditional mean = F / p(t,i,j). Integrated here
/// with fixed-step RK4 in tau = T - t.
fn conditional_oracle(sol: &GSolution, j: Regime, n_steps: usize) -> [f64; 2] {
    let market = *sol.market();
    let prefs = *sol.preferences();
    let chain = *sol.chain();
    let t_horizon = sol.t_horizon();
    let alpha = prefs.alpha(j);
    // k' in tau (forward from tau=0 at T): k_tau = +[(1-a)(th^2 A + r - a th^2 A^2/2) k + lam (k_hat - k)]
    let deriv = |tau: f64, k: &[f64; 2]| -> [f64; 2] {
        let t = t_horizon - tau;
        let g4 = sol.interpolate(t).unwrap();
        let mut out = [0.0; 2];
        for i in Regime::ALL {
            let probs = chain.transition_row(t_horizon - t, i).unwrap();
            let a = a_weight(i, &g4, probs, &prefs).unwrap();
            let th2 = market.risk_price(i) * market.risk_price(i);
            let growth = (1.0 - alpha) * (th2 * a + market.r(i) - 0.5 * alpha * th2 * a * a);
            out[i.index()] = growth * k[i.index()]
                + chain.leave_rate(i) * (k[i.other().index()] - k[i.index()]);
        }
        out
    };
    let mut k = [0.0; 2];
    k[j.index()] = 1.0;
    let span = t_horizon - 0.0;
    let h = span / n_steps as f64;
    let mut tau = 0.0;
    for _ in 0..n_steps {
        let k1 = deriv(tau, &k);
        let k2 = deriv(tau + 0.5 * h, &[k[0] + 0.5 * h * k1[0], k[1] + 0.5 * h * k1[1]]);
        let k3 = deriv(tau + 0.5 * h, &[k[0] + 0.5 * h * k2[0], k[1] + 0.5 * h * k2[1]]);
        let k4 = deriv(tau + h, &[k[0] + h * k3[0], k[1] + h * k3[1]]);
        for n in 0..2 {
            k[n] += h / 6.0 * (k1[n] + 2.0 * k2[n] + 2.0 * k3[n] + k4[n]);
        }
        tau += h;
    }
    // Conditional mean at t=0, x=1 for both starting regimes.
    let mut out = [0.0; 2];
    for i in Regime::ALL {
        let p = transition_probability(0.0, i, j, &chain, t_horizon).unwrap();
        out[i.index()] = k[i.index()] / ((1.0 - alpha) * p);
    }
    out
}

fn main() {
    let market = MarketParams::new([0.05, 0.01], [0.15, 0.25], [0.25, 0.6]).unwrap();
    let prefs = Preferences::new(2.0, 3.0).unwrap();
    let chain = RegimeChain::new(1.0, 1.0).unwrap();
    let sol = Arc::new(solve_g(&market, &prefs, &chain, 10.0, 0.0, 1e-10).unwrap());
    let strategy = StrategySpec::equilibrium(sol.clone());

    let f: Vec<f64> = Regime::ALL
        .iter()
        .map(|&j| value_function(0.0, 1.0, Regime::Bull, j, &sol).unwrap())
        .collect();
    println!("f^(1,j) = {f:?}");

    for j in Regime::ALL {
        let cond = conditional_oracle(&sol, j, 40_000);
        println!(
            "exact conditional E[u^{}|eps_T={}] from (i=1, i=2): {:?}",
            j.label(),
            j.label(),
            cond
        );
    }
    // Closed-form J vs the conditional-route J using the exact oracle.
    for i in Regime::ALL {
        let mut j_cond = 0.0;
        for j in Regime::ALL {
            let p = transition_probability(0.0, i, j, &chain, 10.0).unwrap();
            let cond = conditional_oracle(&sol, j, 40_000)[i.index()];
            j_cond += p * inverse_utility(cond, j, &prefs).unwrap();
        }
        let closed = objective(0.0, 1.0, i, &sol).unwrap();
        println!(
            "i={}: J via exact conditional route = {:.12}, closed form = {:.12}, diff = {:+.3e}",
            i.label(),
            j_cond,
            closed,
            j_cond - closed
        );
    }

    for (n_paths, dt, seeds) in [
        (100_000usize, 1e-3, vec![20_240u64, 7, 99]),
        (100_000, 4e-3, vec![20_240]),
        (100_000, 2e-2, vec![20_240]),
    ] {
        for seed in seeds {
            let sim = SimConfig {
                n_paths,
                dt,
                seed,
                t0: 0.0,
                x0: 1.0,
                i0: Regime::Bull,
            };
            let est =
                estimate_objective(&strategy, &sim, &market, &prefs, &chain, 10.0).unwrap();
            print!("n={n_paths} dt={dt:.0e} seed={seed}: ");
            for j in Regime::ALL {
                let c = est.per_regime[j.index()].unwrap();
                let z = (c.mean - f[j.index()]) / c.std_error;
                print!(
                    "j={}: m={:.6} se={:.2e} off={:+.2e} z={:+.2} | ",
                    j.label(),
                    c.mean,
                    c.std_error,
                    c.mean - f[j.index()],
                    z
                );
            }
            let closed = objective(0.0, 1.0, Regime::Bull, &sol).unwrap();
            println!(
                "J={:.6} (closed {:.6}, z={:+.2})",
                est.objective,
                closed,
                (est.objective - closed) / est.objective_se
            );
        }
    }
}
