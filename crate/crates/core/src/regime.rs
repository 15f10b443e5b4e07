//! Two-state continuous-time Markov chain: transition probabilities in closed
//! form, stationary distribution, and exact path sampling.
//!
//! The chain has generator
//!
//! ```text
//!     Q = [ -λ1   λ1 ]
//!         [  λ2  -λ2 ]
//! ```
//!
//! so regime 1 (bull) is left at rate λ1 and regime 2 (bear) at rate λ2.
//! Because there are only two states, every jump flips the regime, which makes
//! exact sampling a sequence of exponential holding times.

use crate::error::{Error, Result};
use rand::Rng;

/// Market regime label. Regime 1 is the bull state, regime 2 the bear state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    Bull,
    Bear,
}

impl Regime {
    /// Zero-based index, for tables keyed by regime.
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Regime::Bull => 0,
            Regime::Bear => 1,
        }
    }

    /// One-based label (1 = bull, 2 = bear), matching the usual notation.
    #[inline]
    pub fn label(self) -> u8 {
        self.index() as u8 + 1
    }

    /// The opposite regime.
    #[inline]
    pub fn other(self) -> Regime {
        match self {
            Regime::Bull => Regime::Bear,
            Regime::Bear => Regime::Bull,
        }
    }

    pub fn from_label(label: u8) -> Result<Regime> {
        match label {
            1 => Ok(Regime::Bull),
            2 => Ok(Regime::Bear),
            other => Err(Error::InvalidArgument(format!(
                "regime label must be 1 or 2, got {other}"
            ))),
        }
    }

    /// Both regimes, in label order.
    pub const ALL: [Regime; 2] = [Regime::Bull, Regime::Bear];
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.label())
    }
}

/// Two-state chain parameterized by the intensities of leaving each regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeChain {
    lambda1: f64,
    lambda2: f64,
}

impl RegimeChain {
    /// Build a chain from the two leaving intensities (per unit time).
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        for (name, l) in [("lambda1", lambda1), ("lambda2", lambda2)] {
            if !l.is_finite() || l < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {l}"
                )));
            }
        }
        Ok(RegimeChain { lambda1, lambda2 })
    }

    #[inline]
    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    #[inline]
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    /// Intensity of leaving `i`.
    #[inline]
    pub fn leave_rate(&self, i: Regime) -> f64 {
        match i {
            Regime::Bull => self.lambda1,
            Regime::Bear => self.lambda2,
        }
    }

    /// Whether the chain never moves (both intensities zero).
    #[inline]
    pub fn is_frozen(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0
    }

    /// All four conditional terminal-regime probabilities at horizon
    /// `s = T - t >= 0`, as `m[i.index()][j.index()] = P(ε_T = j | ε_t = i)`.
    ///
    /// Closed form: with Λ = λ1 + λ2 and q = e^{-Λ s},
    /// `p(1,1) = λ2/Λ + (λ1/Λ) q`, `p(1,2) = (λ1/Λ)(1 - q)`, and symmetrically
    /// for the bear row. The frozen chain (λ1 = λ2 = 0) is the identity.
    pub fn transition_matrix(&self, s: f64) -> Result<[[f64; 2]; 2]> {
        if !s.is_finite() || s < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be finite and >= 0, got {s}"
            )));
        }
        Ok(self.transition_matrix_unchecked(s))
    }

    /// Same as [`RegimeChain::transition_matrix`] without the horizon check;
    /// for internal hot paths where `s >= 0` is guaranteed.
    #[inline]
    pub(crate) fn transition_matrix_unchecked(&self, s: f64) -> [[f64; 2]; 2] {
        if self.is_frozen() || s == 0.0 {
            return [[1.0, 0.0], [0.0, 1.0]];
        }
        let total = self.lambda1 + self.lambda2;
        let w1 = self.lambda1 / total;
        let w2 = self.lambda2 / total;
        let decay = (-total * s).exp();
        [
            [w2 + w1 * decay, w1 * (1.0 - decay)],
            [w2 * (1.0 - decay), w1 + w2 * decay],
        ]
    }

    /// Row `i` of [`RegimeChain::transition_matrix`].
    #[inline]
    pub fn transition_row(&self, s: f64, i: Regime) -> Result<[f64; 2]> {
        Ok(self.transition_matrix(s)?[i.index()])
    }
}

/// `P(ε_T = j | ε_t = i)` for `0 <= t <= T`.
pub fn transition_probability(
    t: f64,
    i: Regime,
    j: Regime,
    chain: &RegimeChain,
    t_horizon: f64,
) -> Result<f64> {
    if !t.is_finite() || !t_horizon.is_finite() || t > t_horizon {
        return Err(Error::InvalidArgument(format!(
            "need t <= T with both finite, got t = {t}, T = {t_horizon}"
        )));
    }
    Ok(chain.transition_matrix(t_horizon - t)?[i.index()][j.index()])
}

/// Long-run occupation probabilities `(π̃(1), π̃(2)) = (λ2/(λ1+λ2), λ1/(λ1+λ2))`.
///
/// Requires at least one positive intensity; the frozen chain stays wherever
/// it starts and has no unique stationary distribution.
pub fn stationary_distribution(chain: &RegimeChain) -> Result<(f64, f64)> {
    if chain.is_frozen() {
        return Err(Error::NoStationaryDistribution);
    }
    let total = chain.lambda1() + chain.lambda2();
    Ok((chain.lambda2() / total, chain.lambda1() / total))
}

/// One realized trajectory of the regime chain on `(start_time, end_time]`.
///
/// Every jump flips the regime, so only the jump times and the initial state
/// are stored; `states[k]` is the regime right after `jump_times[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    pub start_time: f64,
    pub end_time: f64,
    pub initial_state: Regime,
    pub jump_times: Vec<f64>,
    pub states: Vec<Regime>,
}

impl RegimePath {
    /// Regime in force at time `t` (càdlàg: at a jump time the new regime
    /// already applies).
    pub fn regime_at(&self, t: f64) -> Regime {
        let n_before = self.jump_times.partition_point(|&s| s <= t);
        if n_before == 0 {
            self.initial_state
        } else {
            self.states[n_before - 1]
        }
    }

    /// Regime at the end of the window.
    pub fn terminal_state(&self) -> Regime {
        self.states.last().copied().unwrap_or(self.initial_state)
    }

    /// Time spent in each regime over the window, by regime index.
    pub fn occupation_times(&self) -> [f64; 2] {
        let mut occ = [0.0; 2];
        let mut t = self.start_time;
        let mut regime = self.initial_state;
        for (&s, &next) in self.jump_times.iter().zip(&self.states) {
            occ[regime.index()] += s - t;
            t = s;
            regime = next;
        }
        occ[regime.index()] += self.end_time - t;
        occ
    }
}

/// Draw one regime path exactly: the holding time in regime `i` is
/// exponential with rate λ_i (infinite when λ_i = 0), sampled by inverse CDF
/// so a fixed generator state reproduces the path draw-for-draw.
pub fn sample_regime_path<R: Rng + ?Sized>(
    i0: Regime,
    t0: f64,
    t_end: f64,
    chain: &RegimeChain,
    rng: &mut R,
) -> Result<RegimePath> {
    if !(t0 < t_end) {
        return Err(Error::InvalidArgument(format!(
            "need t0 < end time, got t0 = {t0}, end = {t_end}"
        )));
    }
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    let mut t = t0;
    let mut regime = i0;
    loop {
        let rate = chain.leave_rate(regime);
        if rate == 0.0 {
            break;
        }
        // u ∈ (0, 1]; -ln(u)/rate is an exact Exp(rate) draw.
        let u = 1.0 - rng.random::<f64>();
        t += -u.ln() / rate;
        if t > t_end {
            break;
        }
        regime = regime.other();
        jump_times.push(t);
        states.push(regime);
    }
    Ok(RegimePath {
        start_time: t0,
        end_time: t_end,
        initial_state: i0,
        jump_times,
        states,
    })
}
