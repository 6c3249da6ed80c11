//! Ground-truth machinery: intrusive Galerkin projection of known polynomial
//! operators, a synthetic viscous-Burgers system with the same quadratic
//! structure, exact-derivative recovery datasets, and the spatially averaged
//! relative error metrics.
//!
//! None of this is needed to learn a model; it exists so that everything the
//! learning pipeline claims can be verified against systems whose operators
//! are known exactly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode::{integrate_dense, StopReason};
use crate::preprocess::{
    apply_scaling, apply_transform, invert_scaling, invert_transform, ScalingParams, TransformSpec,
};
use crate::quadform::compact_from_full;
use crate::regression::RomOperators;
use crate::rom::{rom_rhs, InputSignal};
use crate::timederiv::UniformTimeGrid;

/// Sparse quadratic operator: a list of (row, i, j, coeff) entries meaning
/// the full n x n^2 matrix has `coeff` at column i*n + j of `row`. The
/// action on a state is `out[row] += coeff * q[i] * q[j]`.
#[derive(Debug, Clone)]
pub struct QuadraticTerm {
    n: usize,
    entries: Vec<(usize, usize, usize, f64)>,
}

impl QuadraticTerm {
    pub fn new(n: usize, entries: Vec<(usize, usize, usize, f64)>) -> Result<Self> {
        for &(row, i, j, _) in &entries {
            if row >= n || i >= n || j >= n {
                return Err(Error::InvalidDimension(format!(
                    "quadratic entry ({row}, {i}, {j}) outside dimension {n}"
                )));
            }
        }
        Ok(QuadraticTerm { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[(usize, usize, usize, f64)] {
        &self.entries
    }

    /// H (q (x) q).
    pub fn apply(&self, q: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n);
        for &(row, i, j, c) in &self.entries {
            out[row] += c * q[i] * q[j];
        }
        out
    }

    /// Materialize the dense n x n^2 matrix (small n only; used by tests).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n * self.n);
        for &(row, i, j, c) in &self.entries {
            h[(row, i * self.n + j)] += c;
        }
        h
    }

    /// Project into reduced coordinates: `V^T H (V (x) V)` as a full r x r^2
    /// operator. Computed as two passes so the cost stays linear in the
    /// number of sparse entries.
    fn project_full(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let r = v.ncols();
        // T = H (V (x) V), n x r^2.
        let mut t = DMatrix::zeros(self.n, r * r);
        for &(row, i, j, c) in &self.entries {
            for b in 0..r {
                let vib = c * v[(i, b)];
                if vib != 0.0 {
                    for cc in 0..r {
                        t[(row, b * r + cc)] += vib * v[(j, cc)];
                    }
                }
            }
        }
        v.tr_mul(&t)
    }
}

/// Known full-order polynomial operators: `dq/dt = c + A q + H (q (x) q) + B u`.
#[derive(Debug, Clone)]
pub struct FomOperators {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub h: QuadraticTerm,
    pub b: DMatrix<f64>,
}

impl FomOperators {
    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn rhs(&self, q: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut out = self.c.clone();
        out += &self.a * q;
        out += self.h.apply(q);
        if self.m() > 0 {
            out += &self.b * u;
        }
        out
    }

    /// Integrate the full-order system with dense output at `t_eval`.
    pub fn integrate(
        &self,
        q0: &DVector<f64>,
        signal: &InputSignal,
        t_eval: &[f64],
        tol: (f64, f64),
    ) -> Result<DMatrix<f64>> {
        if signal.dim() != self.m() {
            return Err(Error::shape("FomOperators::integrate", self.m(), signal.dim()));
        }
        let n = self.n();
        let mut u_buf = vec![0.0; self.m()];
        let mut q_buf = DVector::zeros(n);
        let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
            signal.eval_into(t, &mut u_buf);
            q_buf.as_mut_slice().copy_from_slice(y);
            let mut out = self.c.clone();
            out += &self.a * &q_buf;
            out += self.h.apply(&q_buf);
            for (j, &uj) in u_buf.iter().enumerate() {
                for i in 0..n {
                    out[i] += self.b[(i, j)] * uj;
                }
            }
            dy.copy_from_slice(out.as_slice());
        };
        let sol = integrate_dense(rhs, q0.as_slice(), t_eval, tol.0, tol.1, None);
        match sol.reason {
            StopReason::Completed => Ok(DMatrix::from_column_slice(n, sol.times.len(), &sol.states)),
            StopReason::Failed { t } | StopReason::BoundViolated { t, .. } => {
                Err(Error::DegenerateData(format!(
                    "full-order integration broke down at t = {t}"
                )))
            }
        }
    }
}

/// Intrusive Galerkin projection: `c_r = V^T c`, `A_r = V^T A V`,
/// `H_r = V^T H (V (x) V)` (stored compactly), `B_r = V^T B`.
pub fn galerkin_project(fom: &FomOperators, v: &DMatrix<f64>) -> Result<RomOperators> {
    if v.nrows() != fom.n() {
        return Err(Error::shape("galerkin_project", fom.n(), v.nrows()));
    }
    let c_r = v.tr_mul(&fom.c).column(0).clone_owned();
    let a_r = v.tr_mul(&(&fom.a * v));
    let h_full = fom.h.project_full(v);
    let h_r = compact_from_full(&h_full)?;
    let b_r = v.tr_mul(&fom.b);
    RomOperators::new(c_r, a_r, h_r, b_r)
}

/// Boundary handling for the synthetic Burgers system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BurgersBoundary {
    /// Periodic grid with the energy-conserving skew-symmetric convection
    /// split; no inputs (m = 0).
    Periodic,
    /// Homogeneous right boundary, left boundary value supplied as the input
    /// channel through the diffusion stencil (m = 1). Convection uses the
    /// conservative form inside and one-sided differences at the walls so
    /// the system stays exactly quadratic in the state.
    DirichletInput,
}

/// Semi-discrete viscous Burgers operators: `A` is the diffusion stencil,
/// the quadratic term is the convective flux difference, and `c = 0`.
pub fn make_burgers_fom(
    n: usize,
    viscosity: f64,
    length: f64,
    boundary: BurgersBoundary,
) -> Result<FomOperators> {
    if n < 8 {
        return Err(Error::InvalidDimension(format!(
            "Burgers grid needs n >= 8 points, got {n}"
        )));
    }
    if !(viscosity > 0.0) || !(length > 0.0) {
        return Err(Error::InvalidDimension(
            "Burgers system needs positive viscosity and length".into(),
        ));
    }
    match boundary {
        BurgersBoundary::Periodic => {
            let dx = length / n as f64;
            let nu = viscosity / (dx * dx);
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                let left = (i + n - 1) % n;
                let right = (i + 1) % n;
                a[(i, i)] = -2.0 * nu;
                a[(i, left)] += nu;
                a[(i, right)] += nu;
            }
            // Skew split of u u_x: (1/3) d(u^2)/dx + (1/3) u du/dx, centrally
            // differenced; discrete energy q^T H(q (x) q) vanishes exactly.
            let w = 1.0 / (6.0 * dx);
            let mut entries = Vec::with_capacity(4 * n);
            for i in 0..n {
                let left = (i + n - 1) % n;
                let right = (i + 1) % n;
                entries.push((i, right, right, -w));
                entries.push((i, left, left, w));
                entries.push((i, i, right, -w));
                entries.push((i, i, left, w));
            }
            Ok(FomOperators {
                c: DVector::zeros(n),
                a,
                h: QuadraticTerm::new(n, entries)?,
                b: DMatrix::zeros(n, 0),
            })
        }
        BurgersBoundary::DirichletInput => {
            let dx = length / (n + 1) as f64;
            let nu = viscosity / (dx * dx);
            let mut a = DMatrix::zeros(n, n);
            for i in 0..n {
                a[(i, i)] = -2.0 * nu;
                if i > 0 {
                    a[(i, i - 1)] = nu;
                }
                if i + 1 < n {
                    a[(i, i + 1)] = nu;
                }
            }
            // Left ghost value is the input; it enters through diffusion only.
            let mut b = DMatrix::zeros(n, 1);
            b[(0, 0)] = nu;

            let wc = 1.0 / (4.0 * dx); // conservative central: (f_{i-1} - f_{i+1}) / (2 dx), f = q^2 / 2
            let we = 1.0 / (2.0 * dx); // one-sided flux difference at the walls
            let mut entries = Vec::with_capacity(2 * n);
            entries.push((0, 0, 0, we));
            entries.push((0, 1, 1, -we));
            for i in 1..n - 1 {
                entries.push((i, i - 1, i - 1, wc));
                entries.push((i, i + 1, i + 1, -wc));
            }
            entries.push((n - 1, n - 2, n - 2, we));
            entries.push((n - 1, n - 1, n - 1, -we));
            Ok(FomOperators {
                c: DVector::zeros(n),
                a,
                h: QuadraticTerm::new(n, entries)?,
                b,
            })
        }
    }
}

/// Exact-derivative training set from a known reduced model: states come
/// from integrating the model over the grid, derivatives are exact
/// right-hand-side evaluations at those states (no differencing error), and
/// inputs are signal samples.
pub fn generate_recovery_dataset(
    rom_true: &RomOperators,
    qhat0: &DVector<f64>,
    signal: &InputSignal,
    grid: &UniformTimeGrid,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let times = grid.times();
    let traj = crate::rom::integrate(rom_true, qhat0, signal, &times, (1e-11, 1e-13), None)?;
    if !traj.status.is_completed() {
        return Err(Error::DegenerateData(format!(
            "true-model integration did not complete: {:?}",
            traj.status
        )));
    }
    let qhat = traj.states;
    if qhat.amax() == 0.0 {
        return Err(Error::DegenerateData(
            "recovery dataset is identically zero; the regression would be rank deficient".into(),
        ));
    }
    let u = signal.sample(&times);
    let mut derivs = DMatrix::zeros(rom_true.r(), grid.k());
    for j in 0..grid.k() {
        let q = qhat.column(j).clone_owned();
        let uj = u.column(j).clone_owned();
        derivs.set_column(j, &rom_rhs(rom_true, &q, &uj));
    }
    Ok((qhat, derivs, u))
}

fn variable_series(
    truth: &DMatrix<f64>,
    approx: &DMatrix<f64>,
    spec: &TransformSpec,
    variable: &str,
) -> Result<Vec<f64>> {
    let cells = spec.source_cells(truth.nrows(), "error series")?;
    let vi = spec
        .sources()
        .iter()
        .position(|s| s == variable)
        .ok_or_else(|| Error::UnknownVariable(variable.into()))?;
    let rows = vi * cells..(vi + 1) * cells;
    let block_max = rows
        .clone()
        .flat_map(|i| (0..truth.ncols()).map(move |j| (i, j)))
        .map(|(i, j)| truth[(i, j)].abs())
        .fold(0.0, f64::max);
    // Keep the relative denominator away from zero; an identically zero
    // truth block still reports zero error for an exact reconstruction.
    let floor = (1e-10 * block_max).max(1e-300);
    let mut series = Vec::with_capacity(truth.ncols());
    for j in 0..truth.ncols() {
        let mut acc = 0.0;
        for i in rows.clone() {
            let t = truth[(i, j)];
            acc += (approx[(i, j)] - t).abs() / t.abs().max(floor);
        }
        series.push(acc / cells as f64);
    }
    Ok(series)
}

/// Spatially averaged relative projection error of one native variable over
/// time: reconstructs `T*(unscale(V V^T scale(T(z))))` and compares against
/// the native truth.
pub fn projection_error_series(
    z: &DMatrix<f64>,
    transform: &TransformSpec,
    scaling: &ScalingParams,
    v: &DMatrix<f64>,
    variable: &str,
) -> Result<Vec<f64>> {
    let qs = apply_scaling(&apply_transform(z, transform)?, scaling)?;
    let projected = v * v.tr_mul(&qs);
    let back = invert_transform(&invert_scaling(&projected, scaling)?, transform)?;
    variable_series(z, &back, transform, variable)
}

/// Spatially averaged relative prediction error of one native variable over
/// time: reconstructs `T*(unscale(V qtilde))` from reduced trajectory states
/// and compares against the native truth.
pub fn prediction_error_series(
    z: &DMatrix<f64>,
    reduced_states: &DMatrix<f64>,
    transform: &TransformSpec,
    scaling: &ScalingParams,
    v: &DMatrix<f64>,
    variable: &str,
) -> Result<Vec<f64>> {
    if z.ncols() != reduced_states.ncols() {
        return Err(Error::shape(
            "prediction_error_series",
            z.ncols(),
            reduced_states.ncols(),
        ));
    }
    let lifted = v * reduced_states;
    let back = invert_transform(&invert_scaling(&lifted, scaling)?, transform)?;
    variable_series(z, &back, transform, variable)
}
