//! Subcommand implementations. All outputs are header-first CSV files with
//! shortest round-trip float formatting, so identical configurations produce
//! byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use regime_eq_core::{
    equilibrium_fraction, estimate_objective, merton_fraction, objective, perturbation_test,
    solve_g, value_function, with_workers, write_estimates_csv, write_strategy_table,
    EstimateRecord, GSolution, Regime, StrategySpec,
};

use crate::config::RunConfig;
use crate::CliError;

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let mut out: Vec<f64> = (0..n)
        .map(|k| a + (b - a) * k as f64 / (n - 1) as f64)
        .collect();
    out[n - 1] = b;
    out
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::other(format!("cannot create {}: {e}", dir.display())))
}

fn solve_from(cfg: &RunConfig) -> Result<GSolution, CliError> {
    solve_g(
        &cfg.market,
        &cfg.prefs,
        &cfg.chain,
        cfg.t_horizon,
        cfg.t_start,
        cfg.tolerance,
    )
    .map_err(|e| CliError::solver(e.to_string()))
}

pub fn cmd_solve(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    ensure_dir(out_dir)?;
    let sol = solve_from(cfg)?;
    let path = out_dir.join("g_solution.csv");
    sol.write_csv_path(&path)
        .map_err(|e| CliError::other(e.to_string()))?;

    println!(
        "solved growth-factor system on [{}, {}]",
        sol.t_start(),
        sol.t_horizon()
    );
    println!(
        "  grid points: {} (accepted steps: {})",
        sol.grid().len(),
        sol.accepted_steps()
    );
    println!("  min g: {}", sol.min_g());
    match sol.ratio_bounds() {
        Some(bounds) => {
            for (idx, b) in bounds.iter().enumerate() {
                println!(
                    "  flip-ratio certificate (terminal regime {}): [{}, {}]",
                    idx + 1,
                    b.lower,
                    b.upper
                );
            }
        }
        None => println!("  flip-ratio certificate: not applicable (an intensity is zero)"),
    }
    println!("  wrote {}", path.display());
    Ok(())
}

pub fn cmd_strategy(
    cfg: &RunConfig,
    out_dir: &Path,
    points: usize,
    solution: Option<&Path>,
) -> Result<(), CliError> {
    if points < 2 {
        return Err(CliError::config("strategy table needs at least 2 points".into()));
    }
    ensure_dir(out_dir)?;
    let sol = match solution {
        Some(path) => GSolution::read_csv_path(
            path,
            cfg.market,
            cfg.prefs,
            cfg.chain,
            cfg.tolerance,
        )
        .map_err(|e| CliError::solver(e.to_string()))?,
        None => solve_from(cfg)?,
    };
    let grid = linspace(sol.t_start(), sol.t_horizon(), points);
    let path = out_dir.join("strategy_table.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::other(e.to_string()))?;
    write_strategy_table(&sol, &grid, std::io::BufWriter::new(file))
        .map_err(|e| CliError::other(e.to_string()))?;
    println!("wrote {} ({} rows)", path.display(), points);
    Ok(())
}

struct CurveSpec {
    name: String,
    file: String,
    regime: Regime,
    lambda: [f64; 2],
    alpha: [f64; 2],
}

fn write_curve(
    out_dir: &Path,
    file: &str,
    grid: &[f64],
    values: &[f64],
) -> Result<(), CliError> {
    let path = out_dir.join(file);
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::other(e.to_string()))?;
    w.write_record(["t", "value"])
        .map_err(|e| CliError::other(e.to_string()))?;
    for (t, v) in grid.iter().zip(values) {
        w.write_record([t.to_string(), v.to_string()])
            .map_err(|e| CliError::other(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::other(e.to_string()))?;
    Ok(())
}

/// Equilibrium-fraction curve for a parameter variant.
fn pi_star_curve(
    cfg: &RunConfig,
    lambda: [f64; 2],
    alpha: [f64; 2],
    grid: &[f64],
    regime: Regime,
) -> Result<Vec<f64>, CliError> {
    let chain = regime_eq_core::RegimeChain::new(lambda[0], lambda[1])
        .map_err(|e| CliError::config(e.to_string()))?;
    let prefs = regime_eq_core::Preferences::new(alpha[0], alpha[1])
        .map_err(|e| CliError::config(e.to_string()))?;
    let sol = solve_g(
        &cfg.market,
        &prefs,
        &chain,
        cfg.t_horizon,
        cfg.t_start,
        cfg.tolerance,
    )
    .map_err(|e| CliError::solver(e.to_string()))?;
    grid.iter()
        .map(|&t| {
            equilibrium_fraction(t, regime, &sol).map_err(|e| CliError::solver(e.to_string()))
        })
        .collect()
}

/// Figure data sets:
///   1 — equilibrium fraction over time plus both Merton bounds;
///   2 — sweep of the bull exit intensity λ1 (λ2 fixed);
///   3 — sweep of the bear exit intensity λ2 (λ1 fixed);
///   4 — symmetric sweep λ1 = λ2 = λ;
///   5 — risk-aversion sweeps (bear exponent at fixed bull exponent and
///       vice versa).
/// Every curve file has columns `t,value`; the manifest lists the parameters
/// behind each file.
pub fn cmd_figures(cfg: &RunConfig, out_dir: &Path, figure: u8) -> Result<(), CliError> {
    if !(1..=5).contains(&figure) {
        return Err(CliError::config(format!(
            "figure must be in 1..=5, got {figure}"
        )));
    }
    ensure_dir(out_dir)?;
    let grid = linspace(cfg.t_start, cfg.t_horizon, 401);
    let base_lambda = [cfg.chain.lambda1(), cfg.chain.lambda2()];
    let base_alpha = [
        cfg.prefs.alpha(Regime::Bull),
        cfg.prefs.alpha(Regime::Bear),
    ];
    let mut curves: Vec<(CurveSpec, Vec<f64>)> = Vec::new();

    match figure {
        1 => {
            for regime in Regime::ALL {
                let values = pi_star_curve(cfg, base_lambda, base_alpha, &grid, regime)?;
                curves.push((
                    CurveSpec {
                        name: "pi_star".into(),
                        file: format!("figure1_pi_star_regime{}.csv", regime.label()),
                        regime,
                        lambda: base_lambda,
                        alpha: base_alpha,
                    },
                    values,
                ));
                for (tag, alpha) in [("alpha1", base_alpha[0]), ("alpha2", base_alpha[1])] {
                    let merton = merton_fraction(regime, alpha, &cfg.market)
                        .map_err(|e| CliError::config(e.to_string()))?;
                    curves.push((
                        CurveSpec {
                            name: format!("merton_{tag}"),
                            file: format!("figure1_merton_{tag}_regime{}.csv", regime.label()),
                            regime,
                            lambda: base_lambda,
                            alpha: base_alpha,
                        },
                        vec![merton; grid.len()],
                    ));
                }
            }
        }
        2 | 3 | 4 => {
            for factor in [0.5, 1.0, 2.0] {
                let lambda = match figure {
                    2 => [base_lambda[0] * factor, base_lambda[1]],
                    3 => [base_lambda[0], base_lambda[1] * factor],
                    _ => [base_lambda[0] * factor, base_lambda[1] * factor],
                };
                let tag = match figure {
                    2 => format!("lambda1_{}", lambda[0]),
                    3 => format!("lambda2_{}", lambda[1]),
                    _ => format!("lambda_{}", lambda[0]),
                };
                for regime in Regime::ALL {
                    let values = pi_star_curve(cfg, lambda, base_alpha, &grid, regime)?;
                    curves.push((
                        CurveSpec {
                            name: format!("pi_star_{tag}"),
                            file: format!(
                                "figure{figure}_{tag}_regime{}.csv",
                                regime.label()
                            ),
                            regime,
                            lambda,
                            alpha: base_alpha,
                        },
                        values,
                    ));
                }
            }
        }
        5 => {
            for factor in [0.75, 1.0, 1.5] {
                let beta = base_alpha[1] * factor;
                let alpha = [base_alpha[0], beta];
                for regime in Regime::ALL {
                    let values = pi_star_curve(cfg, base_lambda, alpha, &grid, regime)?;
                    curves.push((
                        CurveSpec {
                            name: format!("pi_star_beta_{beta}"),
                            file: format!("figure5_beta_{beta}_regime{}.csv", regime.label()),
                            regime,
                            lambda: base_lambda,
                            alpha,
                        },
                        values,
                    ));
                }
            }
            for factor in [0.75, 1.0, 1.5] {
                let alpha1 = base_alpha[0] * factor;
                let alpha = [alpha1, base_alpha[1]];
                for regime in Regime::ALL {
                    let values = pi_star_curve(cfg, base_lambda, alpha, &grid, regime)?;
                    curves.push((
                        CurveSpec {
                            name: format!("pi_star_alpha_{alpha1}"),
                            file: format!("figure5_alpha_{alpha1}_regime{}.csv", regime.label()),
                            regime,
                            lambda: base_lambda,
                            alpha,
                        },
                        values,
                    ));
                }
            }
        }
        _ => unreachable!(),
    }

    let manifest_path = out_dir.join(format!("figure{figure}_manifest.csv"));
    let mut manifest =
        csv::Writer::from_path(&manifest_path).map_err(|e| CliError::other(e.to_string()))?;
    manifest
        .write_record([
            "figure", "curve", "file", "regime", "lambda1", "lambda2", "alpha1", "alpha2",
        ])
        .map_err(|e| CliError::other(e.to_string()))?;
    for (spec, values) in &curves {
        write_curve(out_dir, &spec.file, &grid, values)?;
        manifest
            .write_record([
                figure.to_string(),
                spec.name.clone(),
                spec.file.clone(),
                spec.regime.label().to_string(),
                spec.lambda[0].to_string(),
                spec.lambda[1].to_string(),
                spec.alpha[0].to_string(),
                spec.alpha[1].to_string(),
            ])
            .map_err(|e| CliError::other(e.to_string()))?;
    }
    manifest
        .flush()
        .map_err(|e| CliError::other(e.to_string()))?;
    println!(
        "wrote {} curve files and {}",
        curves.len(),
        manifest_path.display()
    );
    Ok(())
}

struct CheckRow {
    check: String,
    regime_i: String,
    regime_j: String,
    estimate: f64,
    reference: f64,
    std_error: f64,
    threshold_se: f64,
    pass: bool,
}

impl CheckRow {
    fn report_line(&self) -> String {
        format!(
            "{} {}{}{}: estimate {} vs reference {} (se {}, limit {} se)",
            if self.pass { "PASS" } else { "FAIL" },
            self.check,
            if self.regime_i.is_empty() {
                String::new()
            } else {
                format!(" i={}", self.regime_i)
            },
            if self.regime_j.is_empty() {
                String::new()
            } else {
                format!(" j={}", self.regime_j)
            },
            self.estimate,
            self.reference,
            self.std_error,
            self.threshold_se,
        )
    }
}

/// Monte Carlo verification: the four conditional-utility consistency checks
/// against the separable value functions, the objective check per starting
/// regime, and perturbation slope tests for a zero-investment and a doubled
/// Merton deviation. Worker count is capped by `REGIME_EQ_THREADS`.
pub fn cmd_verify(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    ensure_dir(out_dir)?;
    let workers = match std::env::var("REGIME_EQ_THREADS") {
        Ok(raw) => Some(raw.parse::<usize>().map_err(|e| {
            CliError::config(format!("REGIME_EQ_THREADS must be a positive integer: {e}"))
        })?),
        Err(_) => None,
    };
    let sol = Arc::new(solve_from(cfg)?);
    let cfg = cfg.clone();
    with_workers(workers, move || verify_inner(&cfg, out_dir, &sol))
}

fn verify_inner(cfg: &RunConfig, out_dir: &Path, sol: &Arc<GSolution>) -> Result<(), CliError> {
    if cfg.sim.t0 < cfg.t_horizon && (cfg.chain.lambda1() == 0.0 || cfg.chain.lambda2() == 0.0) {
        return Err(CliError::config(
            "verification conditions on every terminal regime, but a zero intensity makes one \
             unreachable; use positive lambda1 and lambda2"
                .into(),
        ));
    }
    let equilibrium = StrategySpec::equilibrium(sol.clone());
    let mut rows: Vec<CheckRow> = Vec::new();
    let mut records: Vec<EstimateRecord> = Vec::new();

    for i0 in Regime::ALL {
        let sim = regime_eq_core::SimConfig {
            i0,
            ..cfg.sim
        };
        let est = estimate_objective(
            &equilibrium,
            &sim,
            &cfg.market,
            &cfg.prefs,
            &cfg.chain,
            cfg.t_horizon,
        )
        .map_err(|e| CliError::other(e.to_string()))?;

        for j in Regime::ALL {
            let Some(cond) = est.per_regime[j.index()] else {
                continue;
            };
            let reference = value_function(sim.t0, sim.x0, i0, j, sol)
                .map_err(|e| CliError::other(e.to_string()))?;
            let pass = (cond.mean - reference).abs() <= 3.0 * cond.std_error;
            rows.push(CheckRow {
                check: "conditional_utility".into(),
                regime_i: i0.label().to_string(),
                regime_j: j.label().to_string(),
                estimate: cond.mean,
                reference,
                std_error: cond.std_error,
                threshold_se: 3.0,
                pass,
            });
            records.push(EstimateRecord {
                quantity: "conditional_utility".into(),
                regime_i: Some(i0),
                regime_j: Some(j),
                estimate: cond.mean,
                std_error: cond.std_error,
                n_effective: cond.n_effective,
                n_paths: est.n_paths,
                dt: sim.dt,
                seed: sim.seed,
            });
        }

        let reference = objective(sim.t0, sim.x0, i0, sol)
            .map_err(|e| CliError::other(e.to_string()))?;
        let pass = (est.objective - reference).abs() <= 3.0 * est.objective_se;
        rows.push(CheckRow {
            check: "objective".into(),
            regime_i: i0.label().to_string(),
            regime_j: String::new(),
            estimate: est.objective,
            reference,
            std_error: est.objective_se,
            threshold_se: 3.0,
            pass,
        });
        records.push(EstimateRecord {
            quantity: "objective".into(),
            regime_i: Some(i0),
            regime_j: None,
            estimate: est.objective,
            std_error: est.objective_se,
            n_effective: est.n_paths,
            n_paths: est.n_paths,
            dt: sim.dt,
            seed: sim.seed,
        });
    }

    // Perturbation tests from the configured starting regime. A degenerate
    // horizon leaves no window to deviate in, so they are skipped there.
    if cfg.sim.t0 < cfg.t_horizon {
        let h_values: Vec<f64> = [0.5, 0.25, 0.1]
            .into_iter()
            .filter(|h| *h <= cfg.t_horizon - cfg.sim.t0)
            .collect();
        let doubled = StrategySpec::constant_fraction([
            2.0 * merton_fraction(Regime::Bull, cfg.prefs.alpha_min(), &cfg.market)
                .map_err(|e| CliError::other(e.to_string()))?,
            2.0 * merton_fraction(Regime::Bear, cfg.prefs.alpha_min(), &cfg.market)
                .map_err(|e| CliError::other(e.to_string()))?,
        ])
        .map_err(|e| CliError::other(e.to_string()))?;
        for (name, alt) in [
            ("zero_investment", StrategySpec::zero_investment()),
            ("double_merton", doubled),
        ] {
            let slopes = perturbation_test(&alt, &h_values, sol, &cfg.sim)
                .map_err(|e| CliError::other(e.to_string()))?;
            for s in slopes {
                let pass = s.slope <= 2.0 * s.std_error;
                rows.push(CheckRow {
                    check: format!("perturbation_{name}_h{}", s.h),
                    regime_i: cfg.sim.i0.label().to_string(),
                    regime_j: String::new(),
                    estimate: s.slope,
                    reference: 0.0,
                    std_error: s.std_error,
                    threshold_se: 2.0,
                    pass,
                });
                records.push(EstimateRecord {
                    quantity: format!("perturbation_slope_{name}_h{}", s.h),
                    regime_i: Some(cfg.sim.i0),
                    regime_j: None,
                    estimate: s.slope,
                    std_error: s.std_error,
                    n_effective: cfg.sim.n_paths,
                    n_paths: cfg.sim.n_paths,
                    dt: cfg.sim.dt,
                    seed: cfg.sim.seed,
                });
            }
        }
    } else {
        println!("note: t0 = t_horizon leaves no deviation window; perturbation tests skipped");
    }

    let estimates_path = out_dir.join("verify_estimates.csv");
    let file = fs::File::create(&estimates_path).map_err(|e| CliError::other(e.to_string()))?;
    write_estimates_csv(&records, std::io::BufWriter::new(file))
        .map_err(|e| CliError::other(e.to_string()))?;

    let report_path = out_dir.join("verify_report.csv");
    let mut report =
        csv::Writer::from_path(&report_path).map_err(|e| CliError::other(e.to_string()))?;
    report
        .write_record([
            "check",
            "regime_i",
            "regime_j",
            "estimate",
            "reference",
            "std_error",
            "threshold_se",
            "pass",
        ])
        .map_err(|e| CliError::other(e.to_string()))?;
    for row in &rows {
        report
            .write_record([
                row.check.clone(),
                row.regime_i.clone(),
                row.regime_j.clone(),
                row.estimate.to_string(),
                row.reference.to_string(),
                row.std_error.to_string(),
                row.threshold_se.to_string(),
                row.pass.to_string(),
            ])
            .map_err(|e| CliError::other(e.to_string()))?;
    }
    report
        .flush()
        .map_err(|e| CliError::other(e.to_string()))?;

    let mut failures = 0usize;
    for row in &rows {
        println!("{}", row.report_line());
        if !row.pass {
            failures += 1;
        }
    }
    println!(
        "verification: {}/{} checks passed; wrote {} and {}",
        rows.len() - failures,
        rows.len(),
        estimates_path.display(),
        report_path.display()
    );
    if failures > 0 {
        return Err(CliError::verification(format!(
            "{failures} verification check(s) failed"
        )));
    }
    Ok(())
}

pub fn resolve_out_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
