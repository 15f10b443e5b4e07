//! Adaptive Dormand–Prince 5(4) integration for small fixed-size systems.
//!
//! Explicit 7-stage pair with FSAL; the embedded 4th-order solution drives
//! step control. A caller-supplied validity predicate lets the driver reject
//! steps that leave the admissible region (here: positive growth factors)
//! independently of the error estimate.

/// One accepted node: state and derivative, enough for cubic Hermite dense
/// output between nodes.
#[derive(Debug, Clone, Copy)]
pub struct AcceptedStep<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub dy: [f64; N],
}

#[derive(Debug, Clone, Copy)]
pub struct Options {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Upper bound on the step size. Keeps the accepted grid dense enough
    /// that cubic Hermite dense output stays at integration accuracy.
    pub h_max: f64,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            rtol: 1e-10,
            atol: 1e-10,
            max_steps: 2_000_000,
            h_max: f64::INFINITY,
        }
    }
}

/// Why the driver gave up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFailure {
    /// The validity predicate kept failing after 60 consecutive halvings.
    ValidityLoss { t: f64 },
    /// Step size shrank below floating-point resolution.
    Underflow { t: f64 },
    /// Step budget exhausted.
    MaxSteps { t: f64 },
}

// Butcher tableau (Dormand & Prince 1980, the classic 5(4) pair).
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// The 5th-order weights are the last A row (FSAL), so the update reuses it.
// Difference between the 5th- and 4th-order weights:
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_VALIDITY_HALVINGS: u32 = 60;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, ks: &[[f64; N]], coeffs: &[f64]) -> [f64; N] {
    let mut out = *y;
    for (k, &c) in ks.iter().zip(coeffs) {
        if c != 0.0 {
            for n in 0..N {
                out[n] += h * c * k[n];
            }
        }
    }
    out
}

/// Integrate `y' = f(t, y)` from `t0` to `t_end > t0`, returning every
/// accepted node. `valid` is checked on each proposed state; an invalid
/// proposal halves the step instead of entering error control.
pub fn integrate<const N: usize>(
    f: impl Fn(f64, &[f64; N]) -> [f64; N],
    t0: f64,
    t_end: f64,
    y0: [f64; N],
    valid: impl Fn(&[f64; N]) -> bool,
    opts: &Options,
) -> Result<Vec<AcceptedStep<N>>, StepFailure> {
    debug_assert!(t_end > t0);
    let span = t_end - t0;
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut nodes = vec![AcceptedStep { t, y, dy: k1 }];

    let mut h = (span / 100.0).min(1.0).min(opts.h_max);
    let mut halvings = 0u32;
    let mut just_rejected = false;

    for _ in 0..opts.max_steps {
        if t >= t_end {
            return Ok(nodes);
        }
        h = h.min(t_end - t).min(opts.h_max);
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(StepFailure::Underflow { t });
        }

        let mut ks = [[0.0; N]; 7];
        ks[0] = k1;
        for stage in 1..6 {
            let y_stage = axpy(&y, h, &ks[..stage], &A[stage][..stage]);
            ks[stage] = f(t + C[stage] * h, &y_stage);
        }
        let y_new = axpy(&y, h, &ks[..6], &A[6]);
        ks[6] = f(t + h, &y_new);

        if !y_new.iter().all(|v| v.is_finite()) || !valid(&y_new) {
            halvings += 1;
            if halvings > MAX_VALIDITY_HALVINGS {
                return Err(StepFailure::ValidityLoss { t });
            }
            h *= 0.5;
            just_rejected = true;
            continue;
        }

        let mut err_sq = 0.0;
        for n in 0..N {
            let mut e = 0.0;
            for (k, &c) in ks.iter().zip(&E) {
                e += c * k[n];
            }
            e *= h;
            let scale = opts.atol + opts.rtol * y[n].abs().max(y_new[n].abs());
            err_sq += (e / scale) * (e / scale);
        }
        let err = (err_sq / N as f64).sqrt();

        if err <= 1.0 {
            t += h;
            y = y_new;
            // FSAL: the last stage is f at the new node.
            let dy = ks[6];
            k1 = dy;
            nodes.push(AcceptedStep { t, y, dy });
            halvings = 0;

            let mut fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
            };
            if just_rejected {
                fac = fac.min(1.0);
            }
            just_rejected = false;
            h *= fac;
        } else {
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            h *= fac;
            just_rejected = true;
        }
    }
    Err(StepFailure::MaxSteps { t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_exponential_decay() {
        let nodes = integrate(
            |_t, y: &[f64; 1]| [-y[0]],
            0.0,
            5.0,
            [1.0],
            |y| y[0] > 0.0,
            &Options::default(),
        )
        .unwrap();
        let last = nodes.last().unwrap();
        assert_relative_eq!(last.t, 5.0, epsilon = 1e-12);
        // Local tolerance 1e-10; accumulated global error stays well under
        // 1e-9 in absolute terms.
        assert_relative_eq!(last.y[0], (-5.0f64).exp(), epsilon = 1e-9);
    }

    #[test]
    fn two_dimensional_rotation_preserves_energy() {
        let nodes = integrate(
            |_t, y: &[f64; 2]| [y[1], -y[0]],
            0.0,
            2.0 * std::f64::consts::PI,
            [1.0, 0.0],
            |_| true,
            &Options::default(),
        )
        .unwrap();
        let last = nodes.last().unwrap();
        assert_relative_eq!(last.y[0], 1.0, epsilon = 1e-8);
        assert_relative_eq!(last.y[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn validity_guard_reports_failure() {
        // y' = -10 crosses zero near t = 0.1; the guard cannot save it.
        let res = integrate(
            |_t, _y: &[f64; 1]| [-10.0],
            0.0,
            5.0,
            [1.0],
            |y| y[0] > 0.5,
            &Options::default(),
        );
        assert!(matches!(
            res,
            Err(StepFailure::ValidityLoss { .. }) | Err(StepFailure::Underflow { .. })
        ));
    }

    #[test]
    fn tighter_tolerance_reduces_error() {
        let run = |tol: f64| {
            let nodes = integrate(
                |t, y: &[f64; 1]| [t * y[0]],
                0.0,
                2.0,
                [1.0],
                |_| true,
                &Options {
                    rtol: tol,
                    atol: tol,
                    ..Options::default()
                },
            )
            .unwrap();
            (nodes.last().unwrap().y[0] - 2.0f64.exp()).abs()
        };
        assert!(run(1e-12) < run(1e-6));
        assert!(run(1e-12) < 1e-10);
    }
}
