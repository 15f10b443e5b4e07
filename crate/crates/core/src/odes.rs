//! Backward integration of the four coupled growth-factor ODEs.
//!
//! The value function of an investor whose CRRA exponent depends on the
//! terminal regime separates as
//!
//! ```text
//!     f^{i,j}(t, x) = x^{1-α_j} (g^{i,j}(t))^{α_j} / (1 - α_j),
//! ```
//!
//! where `i` is the current regime, `j` the terminal regime, and the four
//! growth factors `g^{i,j}` solve a nonlinear system coupled through the
//! risk-aversion aggregator `A_i(t)` and the regime-flip ratio
//! `(g^{î,j}/g^{i,j})^{α_j}`:
//!
//! ```text
//!     (α_j/(1-α_j)) g_t^{i,j} = [ ½ α_j θ_i² A_i² - θ_i² A_i - r_i
//!                         + (λ_i/(1-α_j)) (1 - (g^{î,j}/g^{i,j})^{α_j}) ] g^{i,j},
//!     g^{i,j}(T) = 1,          θ_i = (μ_i - r_i)/σ_i,   î = 3 - i.
//! ```
//!
//! The true solution exists on all of (-∞, T] and stays strictly positive, so
//! the integrator treats any nonpositive proposal as a step-control failure.
//! Integration runs forward in τ = T - t; dense output is cubic Hermite on the
//! stored (g, dg) samples.

use std::io;
use std::path::Path;

use crate::dopri::{self, Options as DopriOptions, StepFailure};
use crate::error::{Error, Result};
use crate::regime::{Regime, RegimeChain};

/// Default absolute and relative integrator tolerance.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Per-regime bond rate, stock drift, and stock volatility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    r: [f64; 2],
    mu: [f64; 2],
    sigma: [f64; 2],
}

impl MarketParams {
    /// `r`, `mu`, `sigma` are indexed by regime (bull first). Volatilities
    /// must be strictly positive; everything must be finite.
    pub fn new(r: [f64; 2], mu: [f64; 2], sigma: [f64; 2]) -> Result<Self> {
        for (name, vals) in [("r", &r), ("mu", &mu), ("sigma", &sigma)] {
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite, got {vals:?}"
                )));
            }
        }
        if sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "volatilities must be > 0, got {sigma:?}"
            )));
        }
        Ok(MarketParams { r, mu, sigma })
    }

    #[inline]
    pub fn r(&self, i: Regime) -> f64 {
        self.r[i.index()]
    }

    #[inline]
    pub fn mu(&self, i: Regime) -> f64 {
        self.mu[i.index()]
    }

    #[inline]
    pub fn sigma(&self, i: Regime) -> f64 {
        self.sigma[i.index()]
    }

    #[inline]
    pub fn excess_return(&self, i: Regime) -> f64 {
        self.mu(i) - self.r(i)
    }

    /// Market price of risk θ_i = (μ_i - r_i)/σ_i.
    #[inline]
    pub fn risk_price(&self, i: Regime) -> f64 {
        self.excess_return(i) / self.sigma(i)
    }

    /// Checks the bull/bear coefficient ordering: positive excess returns
    /// increasing from bull to bear, volatility increasing, and the ratio
    /// (μ-r)/σ² decreasing. Violations are descriptions, not errors; the
    /// solver only needs finite coefficients.
    pub fn bull_bear_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let e1 = self.excess_return(Regime::Bull);
        let e2 = self.excess_return(Regime::Bear);
        if !(0.0 < e1 && e1 < e2) {
            out.push(format!(
                "excess returns should satisfy 0 < mu1-r1 < mu2-r2, got {e1} and {e2}"
            ));
        }
        if !(self.sigma[0] < self.sigma[1]) {
            out.push(format!(
                "volatilities should satisfy sigma1 < sigma2, got {} and {}",
                self.sigma[0], self.sigma[1]
            ));
        }
        let ratio1 = e1 / (self.sigma[0] * self.sigma[0]);
        let ratio2 = e2 / (self.sigma[1] * self.sigma[1]);
        if !(ratio1 > ratio2) {
            out.push(format!(
                "reward-to-variance should fall from bull to bear, got {ratio1} and {ratio2}"
            ));
        }
        out
    }
}

/// CRRA exponents per terminal regime: u^j(x) = x^{1-α_j}/(1-α_j).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preferences {
    alpha1: f64,
    alpha2: f64,
}

impl Preferences {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self> {
        for (name, a) in [("alpha1", alpha1), ("alpha2", alpha2)] {
            if !a.is_finite() || a <= 0.0 || a == 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite, positive, and != 1 (log utility unsupported), got {a}"
                )));
            }
        }
        Ok(Preferences { alpha1, alpha2 })
    }

    #[inline]
    pub fn alpha(&self, j: Regime) -> f64 {
        match j {
            Regime::Bull => self.alpha1,
            Regime::Bear => self.alpha2,
        }
    }

    #[inline]
    pub fn alpha_min(&self) -> f64 {
        self.alpha1.min(self.alpha2)
    }

    #[inline]
    pub fn alpha_max(&self) -> f64 {
        self.alpha1.max(self.alpha2)
    }

    /// Exponent α_j/(1-α_j) that turns g^{i,j} into a certainty-equivalent
    /// factor.
    #[inline]
    pub fn ce_exponent(&self, j: Regime) -> f64 {
        let a = self.alpha(j);
        a / (1.0 - a)
    }
}

/// Flat index of g^{i,j} in the state vector `[g11, g21, g12, g22]`.
#[inline]
pub fn g_index(i: Regime, j: Regime) -> usize {
    2 * j.index() + i.index()
}

/// Risk-aversion aggregator
///
/// ```text
///     A_i = (Σ_j p_j w_j) / (Σ_j α_j p_j w_j),   w_j = (g^{i,j})^{α_j/(1-α_j)},
/// ```
///
/// a weighted mediant of 1/α_1 and 1/α_2, hence always inside
/// `[1/α_max, 1/α_min]`.
pub fn a_weight(i: Regime, g4: &[f64; 4], probs: [f64; 2], prefs: &Preferences) -> Result<f64> {
    if g4.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::Domain(format!(
            "growth factors must be positive and finite, got {g4:?}"
        )));
    }
    if probs.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p))
        || (probs[0] + probs[1] - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidArgument(format!(
            "probabilities must be in [0,1] and sum to 1, got {probs:?}"
        )));
    }
    Ok(a_weight_raw(i, g4, probs, prefs))
}

#[inline]
fn a_weight_raw(i: Regime, g4: &[f64; 4], probs: [f64; 2], prefs: &Preferences) -> f64 {
    let w1 = probs[0] * g4[g_index(i, Regime::Bull)].powf(prefs.ce_exponent(Regime::Bull));
    let w2 = probs[1] * g4[g_index(i, Regime::Bear)].powf(prefs.ce_exponent(Regime::Bear));
    (w1 + w2) / (prefs.alpha1 * w1 + prefs.alpha2 * w2)
}

/// Time derivatives (dg^{1,1}, dg^{2,1}, dg^{1,2}, dg^{2,2})/dt of the growth
/// factors at time `t <= T`.
pub fn rhs(
    t: f64,
    g4: &[f64; 4],
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<[f64; 4]> {
    if g4.iter().any(|&g| !(g > 0.0) || !g.is_finite()) {
        return Err(Error::Domain(format!(
            "growth factors must be positive and finite, got {g4:?}"
        )));
    }
    if !(t <= t_horizon) {
        return Err(Error::InvalidArgument(format!(
            "need t <= T, got t = {t}, T = {t_horizon}"
        )));
    }
    Ok(rhs_raw(t, g4, market, prefs, chain, t_horizon))
}

/// Unchecked transcription of the system; propagates NaN for invalid states
/// so the integrator's guard can reject the step.
fn rhs_raw(
    t: f64,
    g4: &[f64; 4],
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
) -> [f64; 4] {
    let probs = chain.transition_matrix_unchecked(t_horizon - t);
    let a = [
        a_weight_raw(Regime::Bull, g4, probs[0], prefs),
        a_weight_raw(Regime::Bear, g4, probs[1], prefs),
    ];

    let mut out = [0.0; 4];
    for j in Regime::ALL {
        let alpha = prefs.alpha(j);
        for i in Regime::ALL {
            let idx = g_index(i, j);
            let theta_sq = market.risk_price(i) * market.risk_price(i);
            let ai = a[i.index()];
            let ratio = g4[g_index(i.other(), j)] / g4[idx];
            let bracket = 0.5 * alpha * theta_sq * ai * ai - theta_sq * ai - market.r(i)
                + chain.leave_rate(i) / (1.0 - alpha) * (1.0 - ratio.powf(alpha));
            out[idx] = (1.0 - alpha) / alpha * bracket * g4[idx];
        }
    }
    out
}

/// Certified interval for the flip ratio (g^{1,j}/g^{2,j})^{α_j}.
///
/// The ratio solves a Riccati equation whose drift coefficient is bounded by
/// freezing `A_1, A_2` at the ends of `[1/α_max, 1/α_min]`; each frozen
/// comparison equation keeps its solution between 1 and its positive root, so
/// the true ratio lives in the hull of those intervals. Requires both jump
/// intensities strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBound {
    pub lower: f64,
    pub upper: f64,
}

fn ratio_certificate(
    j: Regime,
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
) -> RatioBound {
    let alpha = prefs.alpha(j);
    let a_lo = 1.0 / prefs.alpha_max();
    let a_hi = 1.0 / prefs.alpha_min();

    // Range of φ_i(A) = ½ α θ_i² A² - θ_i² A over the A interval.
    let phi_range = |theta_sq: f64| {
        let f = |a: f64| 0.5 * alpha * theta_sq * a * a - theta_sq * a;
        let mut lo = f(a_lo).min(f(a_hi));
        let hi = f(a_lo).max(f(a_hi));
        let vertex = 1.0 / alpha;
        if theta_sq > 0.0 && vertex > a_lo && vertex < a_hi {
            lo = lo.min(f(vertex));
        }
        (lo, hi)
    };

    let t1 = market.risk_price(Regime::Bull).powi(2);
    let t2 = market.risk_price(Regime::Bear).powi(2);
    let (p1_lo, p1_hi) = phi_range(t1);
    let (p2_lo, p2_hi) = phi_range(t2);
    let shift = market.r(Regime::Bear) - market.r(Regime::Bull)
        + (chain.lambda1() - chain.lambda2()) / (1.0 - alpha);
    let m_lo = p1_lo - p2_hi + shift;
    let m_hi = p1_hi - p2_lo + shift;

    // Positive root of λ2 x² + (1-α) m x - λ1 = 0.
    let positive_root = |m: f64| {
        let b = (1.0 - alpha) * m;
        (-b + (b * b + 4.0 * chain.lambda1() * chain.lambda2()).sqrt()) / (2.0 * chain.lambda2())
    };
    let r_lo = positive_root(m_lo);
    let r_hi = positive_root(m_hi);
    RatioBound {
        lower: 1.0_f64.min(r_lo).min(r_hi),
        upper: 1.0_f64.max(r_lo).max(r_hi),
    }
}

/// Solved growth-factor trajectories on `[t_start, T]` with dense output.
#[derive(Debug, Clone)]
pub struct GSolution {
    t_horizon: f64,
    grid: Vec<f64>,
    g: Vec<[f64; 4]>,
    dg: Vec<[f64; 4]>,
    market: MarketParams,
    prefs: Preferences,
    chain: RegimeChain,
    tolerance: f64,
    accepted_steps: usize,
    ratio_bounds: Option<[RatioBound; 2]>,
}

impl GSolution {
    #[inline]
    pub fn t_horizon(&self) -> f64 {
        self.t_horizon
    }

    #[inline]
    pub fn t_start(&self) -> f64 {
        self.grid[0]
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn g_values(&self) -> &[[f64; 4]] {
        &self.g
    }

    pub fn dg_values(&self) -> &[[f64; 4]] {
        &self.dg
    }

    #[inline]
    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    #[inline]
    pub fn preferences(&self) -> &Preferences {
        &self.prefs
    }

    #[inline]
    pub fn chain(&self) -> &RegimeChain {
        &self.chain
    }

    #[inline]
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    /// Number of accepted integrator steps (before grid densification).
    #[inline]
    pub fn accepted_steps(&self) -> usize {
        self.accepted_steps
    }

    /// Certified flip-ratio intervals, indexed by terminal regime; `None`
    /// when an intensity vanishes and the Riccati comparison does not apply.
    #[inline]
    pub fn ratio_bounds(&self) -> Option<&[RatioBound; 2]> {
        self.ratio_bounds.as_ref()
    }

    pub fn min_g(&self) -> f64 {
        self.g
            .iter()
            .flat_map(|row| row.iter())
            .fold(f64::INFINITY, |m, &v| m.min(v))
    }

    /// Growth factors at `t ∈ [t_start, T]`: stored values at grid nodes,
    /// cubic Hermite interpolation in between.
    pub fn interpolate(&self, t: f64) -> Result<[f64; 4]> {
        let (seg, s) = self.locate(t)?;
        if s == 0.0 {
            return Ok(self.g[seg]);
        }
        let width = self.grid[seg + 1] - self.grid[seg];
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let mut out = [0.0; 4];
        for n in 0..4 {
            out[n] = h00 * self.g[seg][n]
                + h10 * width * self.dg[seg][n]
                + h01 * self.g[seg + 1][n]
                + h11 * width * self.dg[seg + 1][n];
        }
        Ok(out)
    }

    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let first = self.grid[0];
        let last = self.t_horizon;
        if !(t >= first && t <= last) {
            return Err(Error::Range(format!(
                "t = {t} outside solved range [{first}, {last}]"
            )));
        }
        let idx = self.grid.partition_point(|&x| x <= t);
        if idx == self.grid.len() {
            // t == T exactly.
            return Ok((self.grid.len() - 1, 0.0));
        }
        let seg = idx - 1;
        if t == self.grid[seg] {
            return Ok((seg, 0.0));
        }
        Ok((seg, (t - self.grid[seg]) / (self.grid[seg + 1] - self.grid[seg])))
    }

    /// Serialize as CSV: header `t,g11,g21,g12,g22,dg11,dg21,dg12,dg22`, one
    /// row per grid node, shortest round-trip float formatting.
    pub fn write_csv<W: io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "t", "g11", "g21", "g12", "g22", "dg11", "dg21", "dg12", "dg22",
        ])?;
        for ((t, g), dg) in self.grid.iter().zip(&self.g).zip(&self.dg) {
            let mut rec = Vec::with_capacity(9);
            rec.push(t.to_string());
            rec.extend(g.iter().map(|v| v.to_string()));
            rec.extend(dg.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(io::BufWriter::new(file))
    }

    /// Rebuild a solution from its CSV serialization plus the model
    /// parameters it was solved under. Values round-trip bit-exactly.
    pub fn read_csv<R: io::Read>(
        reader: R,
        market: MarketParams,
        prefs: Preferences,
        chain: RegimeChain,
        tolerance: f64,
    ) -> Result<GSolution> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let expected = [
            "t", "g11", "g21", "g12", "g22", "dg11", "dg21", "dg12", "dg22",
        ];
        if header.iter().ne(expected) {
            return Err(Error::Parse(format!(
                "unexpected header: {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut grid = Vec::new();
        let mut g = Vec::new();
        let mut dg = Vec::new();
        for record in rdr.records() {
            let record = record?;
            if record.len() != 9 {
                return Err(Error::Parse(format!("row has {} fields", record.len())));
            }
            let mut vals = [0.0; 9];
            for (slot, field) in vals.iter_mut().zip(record.iter()) {
                *slot = field
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad float {field:?}: {e}")))?;
            }
            grid.push(vals[0]);
            g.push([vals[1], vals[2], vals[3], vals[4]]);
            dg.push([vals[5], vals[6], vals[7], vals[8]]);
        }
        if grid.len() < 2 {
            return Err(Error::Parse("need at least two grid rows".into()));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Parse("grid times must be strictly increasing".into()));
        }
        let t_horizon = *grid.last().unwrap();
        let sol = GSolution {
            t_horizon,
            grid,
            g,
            dg,
            market,
            prefs,
            chain,
            tolerance,
            accepted_steps: 0,
            ratio_bounds: certificate_for(&market, &prefs, &chain),
        };
        sol.check_invariants()?;
        Ok(sol)
    }

    pub fn read_csv_path<P: AsRef<Path>>(
        path: P,
        market: MarketParams,
        prefs: Preferences,
        chain: RegimeChain,
        tolerance: f64,
    ) -> Result<GSolution> {
        let file = std::fs::File::open(path)?;
        GSolution::read_csv(io::BufReader::new(file), market, prefs, chain, tolerance)
    }

    fn check_invariants(&self) -> Result<()> {
        for (t, row) in self.grid.iter().zip(&self.g) {
            if row.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::PositivityLoss { t: *t });
            }
        }
        let terminal = self.g.last().unwrap();
        if terminal.iter().any(|&v| (v - 1.0).abs() > 1e-12) {
            return Err(Error::Parse(format!(
                "terminal growth factors must be 1, got {terminal:?}"
            )));
        }
        if let Some(bounds) = &self.ratio_bounds {
            for (jdx, j) in Regime::ALL.iter().enumerate() {
                let alpha = self.prefs.alpha(*j);
                let b = bounds[jdx];
                let slack = 1e-9 * b.upper.abs().max(1.0) + 1e-12;
                for (t, row) in self.grid.iter().zip(&self.g) {
                    let ratio =
                        (row[g_index(Regime::Bull, *j)] / row[g_index(Regime::Bear, *j)]).powf(alpha);
                    if ratio < b.lower - slack || ratio > b.upper + slack {
                        return Err(Error::CertificateViolation {
                            t: *t,
                            detail: format!(
                                "flip ratio {ratio} outside [{}, {}] for terminal regime {}",
                                b.lower,
                                b.upper,
                                j.label()
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn certificate_for(
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
) -> Option<[RatioBound; 2]> {
    if chain.lambda1() > 0.0 && chain.lambda2() > 0.0 {
        Some([
            ratio_certificate(Regime::Bull, market, prefs, chain),
            ratio_certificate(Regime::Bear, market, prefs, chain),
        ])
    } else {
        None
    }
}

/// Integrate the growth-factor system backward from `g(T) = (1,1,1,1)` down
/// to `t_start`, with `tolerance` used as both absolute and relative error
/// target. The returned grid contains every accepted step, densified to at
/// least 1000 points.
pub fn solve_g(
    market: &MarketParams,
    prefs: &Preferences,
    chain: &RegimeChain,
    t_horizon: f64,
    t_start: f64,
    tolerance: f64,
) -> Result<GSolution> {
    if !(t_start < t_horizon) || !t_start.is_finite() || !t_horizon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need t_start < T with both finite, got t_start = {t_start}, T = {t_horizon}"
        )));
    }
    if !(tolerance > 0.0) || !tolerance.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "tolerance must be positive and finite, got {tolerance}"
        )));
    }

    let span = t_horizon - t_start;
    // Forward variable τ = T - t.
    let f = |tau: f64, y: &[f64; 4]| {
        let deriv = rhs_raw(t_horizon - tau, y, market, prefs, chain, t_horizon);
        let mut out = [0.0; 4];
        for n in 0..4 {
            out[n] = -deriv[n];
        }
        out
    };
    // `tolerance` is a global-accuracy target; local step control runs an
    // order of magnitude tighter so accumulated error stays within it, and
    // the step cap keeps the accepted grid dense enough (>= 1000 nodes) that
    // cubic Hermite dense output adds no visible error.
    let opts = DopriOptions {
        rtol: tolerance * 0.1,
        atol: tolerance * 0.1,
        max_steps: 2_000_000,
        h_max: span / 1000.0,
    };
    let nodes = dopri::integrate(f, 0.0, span, [1.0; 4], |y| y.iter().all(|&v| v > 0.0), &opts)
        .map_err(|failure| match failure {
            StepFailure::ValidityLoss { t } => Error::PositivityLoss { t: t_horizon - t },
            StepFailure::Underflow { t } => Error::StepSizeUnderflow { t: t_horizon - t },
            StepFailure::MaxSteps { t } => Error::StepSizeUnderflow { t: t_horizon - t },
        })?;
    let accepted_steps = nodes.len() - 1;

    // Reverse to ascending t; dg/dt = -dy/dτ.
    let mut grid: Vec<f64> = Vec::with_capacity(nodes.len());
    let mut g: Vec<[f64; 4]> = Vec::with_capacity(nodes.len());
    let mut dg: Vec<[f64; 4]> = Vec::with_capacity(nodes.len());
    for node in nodes.iter().rev() {
        let t = if node.t == 0.0 {
            t_horizon
        } else if node.t == span {
            t_start
        } else {
            t_horizon - node.t
        };
        grid.push(t);
        g.push(node.y);
        dg.push(std::array::from_fn(|n| -node.dy[n]));
    }

    let sol = GSolution {
        t_horizon,
        grid,
        g,
        dg,
        market: *market,
        prefs: *prefs,
        chain: *chain,
        tolerance,
        accepted_steps,
        ratio_bounds: certificate_for(market, prefs, chain),
    };
    sol.check_invariants()?;
    Ok(sol)
}

/// Growth factors at an arbitrary time inside the solved range.
pub fn interpolate_g(sol: &GSolution, t: f64) -> Result<[f64; 4]> {
    sol.interpolate(t)
}
