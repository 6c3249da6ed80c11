//! Evaluation and time integration of the learned quadratic model
//! `d/dt qhat = c + A qhat + H kron_compact(qhat) + B u(t)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate_dense, StopReason};
use crate::quadform::{kron_compact, kron_compact_into};
use crate::regression::RomOperators;

/// Default relative integration tolerance.
pub const DEFAULT_REL_TOL: f64 = 1e-6;
/// Default absolute integration tolerance.
pub const DEFAULT_ABS_TOL: f64 = 1e-9;

/// Input signal u(t), evaluable anywhere in the integration window.
#[derive(Debug, Clone)]
pub enum InputSignal {
    /// No inputs (m = 0).
    None,
    /// Scalar sinusoidal forcing `u(t) = p_ref * (1 + amp * sin(2 pi f t))`.
    SinePressure { p_ref: f64, amp: f64, freq: f64 },
    /// Sampled m x len signal; linear interpolation inside the sample grid,
    /// constant extrapolation outside.
    Sampled { times: Vec<f64>, values: DMatrix<f64> },
}

impl InputSignal {
    pub fn sampled(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if times.len() != values.ncols() || times.is_empty() {
            return Err(Error::shape("InputSignal::sampled", times.len(), values.ncols()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidDimension(
                "sampled signal times must strictly increase".into(),
            ));
        }
        Ok(InputSignal::Sampled { times, values })
    }

    /// Number of input channels m.
    pub fn dim(&self) -> usize {
        match self {
            InputSignal::None => 0,
            InputSignal::SinePressure { .. } => 1,
            InputSignal::Sampled { values, .. } => values.nrows(),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match self {
            InputSignal::None => {}
            InputSignal::SinePressure { p_ref, amp, freq } => {
                out[0] = p_ref * (1.0 + amp * (std::f64::consts::TAU * freq * t).sin());
            }
            InputSignal::Sampled { times, values } => {
                let m = values.nrows();
                if t <= times[0] {
                    for i in 0..m {
                        out[i] = values[(i, 0)];
                    }
                } else if t >= *times.last().unwrap() {
                    let last = times.len() - 1;
                    for i in 0..m {
                        out[i] = values[(i, last)];
                    }
                } else {
                    let hi = times.partition_point(|&x| x < t).max(1);
                    let lo = hi - 1;
                    let w = (t - times[lo]) / (times[hi] - times[lo]);
                    for i in 0..m {
                        out[i] = values[(i, lo)] + w * (values[(i, hi)] - values[(i, lo)]);
                    }
                }
            }
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval_into(t, out.as_mut_slice());
        out
    }

    /// Sample the signal at a list of times into an m x k matrix.
    pub fn sample(&self, times: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, times.len());
        for (j, &t) in times.iter().enumerate() {
            self.eval_into(t, out.column_mut(j).as_mut_slice());
        }
        out
    }
}

/// Sinusoidal boundary-pressure forcing `u(t) = p_ref (1 + amp sin(2 pi f t))`.
pub fn pressure_forcing(p_ref: f64, amp: f64, freq: f64) -> Result<InputSignal> {
    if !(p_ref > 0.0) || !(freq > 0.0) {
        return Err(Error::InvalidDimension(format!(
            "pressure forcing needs p_ref > 0 and f > 0, got ({p_ref}, {freq})"
        )));
    }
    Ok(InputSignal::SinePressure { p_ref, amp, freq })
}

/// How an integration run ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryStatus {
    Completed,
    /// |qhat_index(time)| exceeded the bound.
    BoundViolated { time: f64, index: usize },
    /// Step-size underflow or non-finite state at `time`.
    IntegratorFailed { time: f64 },
}

impl TrajectoryStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, TrajectoryStatus::Completed)
    }
}

/// Time grid plus reduced states from one integration run. On early
/// termination the columns hold the prefix of output points reached.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: DMatrix<f64>,
    pub status: TrajectoryStatus,
}

/// Right-hand side of the quadratic model: `c + A q + H kron_compact(q) + B u`.
pub fn rom_rhs(ops: &RomOperators, qhat: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut out = ops.c_hat.clone();
    out += &ops.a_hat * qhat;
    out += &ops.h_hat * kron_compact(qhat);
    if ops.m() > 0 {
        out += &ops.b_hat * u;
    }
    out
}

/// Integrate the model from `qhat0` with dense output at `t_eval`
/// (strictly increasing, the first entry being the initial time). When
/// `bound` is given, integration stops with [`TrajectoryStatus::BoundViolated`]
/// as soon as any reduced coordinate leaves [-bound, bound] at an accepted
/// step or an output point.
pub fn integrate(
    ops: &RomOperators,
    qhat0: &DVector<f64>,
    signal: &InputSignal,
    t_eval: &[f64],
    tol: (f64, f64),
    bound: Option<f64>,
) -> Result<Trajectory> {
    let r = ops.r();
    if qhat0.len() != r {
        return Err(Error::shape("integrate", r, qhat0.len()));
    }
    if signal.dim() != ops.m() {
        return Err(Error::shape("integrate (input dim)", ops.m(), signal.dim()));
    }
    if t_eval.is_empty() || !t_eval.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::InvalidDimension(
            "t_eval must be nonempty and strictly increasing".into(),
        ));
    }

    let d2 = ops.h_hat.ncols();
    let m = ops.m();
    let mut kron_buf = vec![0.0; d2];
    let mut u_buf = vec![0.0; m];
    let c = ops.c_hat.as_slice();
    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        signal.eval_into(t, &mut u_buf);
        kron_compact_into(y, &mut kron_buf);
        dy.copy_from_slice(c);
        // Column-major accumulation keeps the inner loops contiguous.
        for (j, &yj) in y.iter().enumerate() {
            let col = ops.a_hat.column(j);
            for i in 0..r {
                dy[i] += col[i] * yj;
            }
        }
        for (j, &kj) in kron_buf.iter().enumerate() {
            if kj != 0.0 {
                let col = ops.h_hat.column(j);
                for i in 0..r {
                    dy[i] += col[i] * kj;
                }
            }
        }
        for (j, &uj) in u_buf.iter().enumerate() {
            let col = ops.b_hat.column(j);
            for i in 0..r {
                dy[i] += col[i] * uj;
            }
        }
    };

    let sol = integrate_dense(rhs, qhat0.as_slice(), t_eval, tol.0, tol.1, bound);
    let cols = sol.times.len();
    let states = DMatrix::from_column_slice(r, cols, &sol.states);
    let status = match sol.reason {
        StopReason::Completed => TrajectoryStatus::Completed,
        StopReason::BoundViolated { t, index } => TrajectoryStatus::BoundViolated { time: t, index },
        StopReason::Failed { t } => TrajectoryStatus::IntegratorFailed { time: t },
    };
    Ok(Trajectory {
        times: sol.times,
        states,
        status,
    })
}
