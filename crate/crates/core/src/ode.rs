//! Adaptive Dormand-Prince 5(4) integration with quartic dense output.
//!
//! Embedded 4th-order error estimate, PI step-size control, and the
//! first-same-as-last property. The solution is reported at caller-given
//! output times via the classical dense-output interpolant, and an optional
//! componentwise magnitude bound is checked at every accepted step and every
//! output point; a violation ends the integration as a first-class outcome,
//! not an error.

/// Why an integration run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum StopReason {
    Completed,
    /// Some |y_i| exceeded the bound at time `t` (component `index`).
    BoundViolated { t: f64, index: usize },
    /// Step-size underflow, step-count overflow, or non-finite state.
    Failed { t: f64 },
}

pub(crate) struct DenseSolution {
    /// Output times actually reached (a prefix of the requested times).
    pub times: Vec<f64>,
    /// One state per reached output time, flattened contiguously.
    pub states: Vec<f64>,
    pub reason: StopReason,
}

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const MAX_STEPS: usize = 10_000_000;

// Dormand-Prince coefficients.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// b - bhat, including the FSAL stage.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Dense-output weights for the quartic interpolant.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Integrate `dy/dt = f(t, y)` from `t_eval[0]`, reporting dense output at
/// each entry of `t_eval` (strictly increasing).
pub(crate) fn integrate_dense<F>(
    mut f: F,
    y0: &[f64],
    t_eval: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    bound: Option<f64>,
) -> DenseSolution
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut times = Vec::with_capacity(t_eval.len());
    let mut states: Vec<f64> = Vec::with_capacity(t_eval.len() * n);
    assert!(t_eval.windows(2).all(|w| w[1] > w[0]), "t_eval must increase");

    let t0 = t_eval[0];
    let tf = *t_eval.last().unwrap();
    let mut y = y0.to_vec();

    if let Some(idx) = first_violation(&y, bound) {
        return DenseSolution {
            times,
            states,
            reason: StopReason::BoundViolated { t: t0, index: idx },
        };
    }
    if !all_finite(&y) {
        return DenseSolution {
            times,
            states,
            reason: StopReason::Failed { t: t0 },
        };
    }
    times.push(t0);
    states.extend_from_slice(&y);
    if t_eval.len() == 1 {
        return DenseSolution {
            times,
            states,
            reason: StopReason::Completed,
        };
    }

    let mut k: Vec<Vec<f64>> = vec![vec![0.0; n]; 7];
    let mut y_stage = vec![0.0; n];
    let mut y_new = vec![0.0; n];
    f(t0, &y, &mut k[0]);

    let mut t = t0;
    let mut h = initial_step(&mut f, t0, &y, &k[0], rel_tol, abs_tol, tf - t0);
    let mut fac_old: f64 = 1e-4;
    let mut next_out = 1usize;

    for _step in 0..MAX_STEPS {
        if h.abs() < 10.0 * f64::EPSILON * t.abs().max(1.0) {
            return DenseSolution {
                times,
                states,
                reason: StopReason::Failed { t },
            };
        }
        let mut last = false;
        if t + 1.01 * h >= tf {
            h = tf - t;
            last = true;
        }

        // Stages 2..=6.
        for (s, coeffs) in [
            (1usize, &A2[..]),
            (2, &A3[..]),
            (3, &A4[..]),
            (4, &A5[..]),
            (5, &A6[..]),
        ] {
            for i in 0..n {
                let mut acc = 0.0;
                for (j, &a) in coeffs.iter().enumerate() {
                    acc += a * k[j][i];
                }
                y_stage[i] = y[i] + h * acc;
            }
            f(t + C[s] * h, &y_stage, &mut k[s]);
        }
        // 5th-order solution, then the FSAL stage at (t + h, y_new).
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &b) in B.iter().enumerate() {
                acc += b * k[j][i];
            }
            y_new[i] = y[i] + h * acc;
        }
        f(t + h, &y_new, &mut k[6]);

        // Scaled RMS error of the embedded difference.
        let mut err_sq = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for (j, &w) in E.iter().enumerate() {
                e += w * k[j][i];
            }
            e *= h;
            let sc = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
            err_sq += (e / sc) * (e / sc);
        }
        let err = (err_sq / n as f64).sqrt();

        if !err.is_finite() {
            // Diverging right-hand side; shrink hard.
            h *= FAC_MIN;
            continue;
        }

        if err <= 1.0 {
            // Accepted. Build dense coefficients for this interval.
            let t_new = t + h;
            if !all_finite(&y_new) {
                return DenseSolution {
                    times,
                    states,
                    reason: StopReason::Failed { t: t_new },
                };
            }
            let mut cont = vec![0.0; 5 * n];
            for i in 0..n {
                let ydiff = y_new[i] - y[i];
                let bspl = h * k[0][i] - ydiff;
                let mut dsum = 0.0;
                for (j, &w) in D.iter().enumerate() {
                    dsum += w * k[j][i];
                }
                cont[i] = y[i];
                cont[n + i] = ydiff;
                cont[2 * n + i] = bspl;
                cont[3 * n + i] = ydiff - h * k[6][i] - bspl;
                cont[4 * n + i] = h * dsum;
            }
            while next_out < t_eval.len() && t_eval[next_out] <= t_new + 1e-12 * h.abs() {
                let theta = ((t_eval[next_out] - t) / h).clamp(0.0, 1.0);
                let theta1 = 1.0 - theta;
                for i in 0..n {
                    y_stage[i] = cont[i]
                        + theta
                            * (cont[n + i]
                                + theta1
                                    * (cont[2 * n + i]
                                        + theta * (cont[3 * n + i] + theta1 * cont[4 * n + i])));
                }
                if !all_finite(&y_stage) {
                    return DenseSolution {
                        times,
                        states,
                        reason: StopReason::Failed { t: t_eval[next_out] },
                    };
                }
                if let Some(idx) = first_violation(&y_stage, bound) {
                    return DenseSolution {
                        times,
                        states,
                        reason: StopReason::BoundViolated {
                            t: t_eval[next_out],
                            index: idx,
                        },
                    };
                }
                times.push(t_eval[next_out]);
                states.extend_from_slice(&y_stage);
                next_out += 1;
            }
            // The accepted endpoint itself must also respect the bound.
            if let Some(idx) = first_violation(&y_new, bound) {
                return DenseSolution {
                    times,
                    states,
                    reason: StopReason::BoundViolated { t: t_new, index: idx },
                };
            }
            if last && next_out >= t_eval.len() {
                return DenseSolution {
                    times,
                    states,
                    reason: StopReason::Completed,
                };
            }
            t = t_new;
            std::mem::swap(&mut y, &mut y_new);
            k.swap(0, 6);

            // PI controller (stabilized step-size selection).
            let fac11 = err.powf(0.2 - BETA * 0.75);
            let fac = (fac11 / fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            h /= fac;
            fac_old = err.max(1e-4);
        } else {
            let fac11 = err.powf(0.2 - BETA * 0.75);
            h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
        }
    }
    DenseSolution {
        times,
        states,
        reason: StopReason::Failed { t },
    }
}

fn all_finite(y: &[f64]) -> bool {
    y.iter().all(|v| v.is_finite())
}

fn first_violation(y: &[f64], bound: Option<f64>) -> Option<usize> {
    let b = bound?;
    y.iter().position(|v| v.abs() > b)
}

/// Standard automatic initial step heuristic: balance the scaled sizes of
/// the state and its derivative, then refine with one explicit Euler probe.
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    span: f64,
) -> f64
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let sc = |y: f64| abs_tol + rel_tol * y.abs();
    let d0 = (y0.iter().map(|&v| (v / sc(v)).powi(2)).sum::<f64>() / n as f64).sqrt();
    let d1 = (f0
        .iter()
        .zip(y0)
        .map(|(&fv, &yv)| (fv / sc(yv)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span.abs());

    let y1: Vec<f64> = y0.iter().zip(f0).map(|(&y, &d)| y + h0 * d).collect();
    let mut f1 = vec![0.0; n];
    f(t0 + h0, &y1, &mut f1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(y0)
        .map(|((&a, &b), &yv)| ((a - b) / sc(yv)).powi(2))
        .sum::<f64>()
        / n as f64)
        .sqrt()
        / h0;
    let d_max = d1.max(d2);
    let h1 = if d_max <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d_max).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span.abs())
}
