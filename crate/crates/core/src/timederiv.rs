//! Fourth-order finite-difference estimation of time derivatives on a
//! uniform grid.
//!
//! Interior columns use the 5-point central stencil; the two columns at each
//! end use one-sided/offset 5-point stencils of the same order, so the output
//! keeps all k columns. All stencils differentiate the local quartic
//! interpolant, hence are exact for polynomials up to degree four.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A uniform time grid t_j = t0 + j * dt, j = 0..k.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformTimeGrid {
    t0: f64,
    dt: f64,
    k: usize,
}

impl UniformTimeGrid {
    pub fn new(t0: f64, dt: f64, k: usize) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::InvalidDimension(format!(
                "time grid needs finite t0 and dt > 0, got t0 = {t0}, dt = {dt}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidDimension("time grid needs k >= 1".into()));
        }
        Ok(UniformTimeGrid { t0, dt, k })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + self.dt * j as f64
    }

    /// Last grid time t_{k-1}.
    pub fn t_end(&self) -> f64 {
        self.time(self.k - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.k).map(|j| self.time(j)).collect()
    }

    /// Extend the grid at the same spacing until it covers `tf`.
    pub fn extended_to(&self, tf: f64) -> Result<UniformTimeGrid> {
        if tf < self.t_end() - 1e-12 * self.dt {
            return Err(Error::InvalidDimension(format!(
                "tf = {tf} must not precede the end of the grid {}",
                self.t_end()
            )));
        }
        let extra = ((tf - self.t_end()) / self.dt + 0.5).floor() as usize;
        UniformTimeGrid::new(self.t0, self.dt, self.k + extra)
    }
}

// 5-point stencils, each exact through degree 4; denominators are 12*dt.
const FORWARD: [f64; 5] = [-25.0, 48.0, -36.0, 16.0, -3.0];
const OFFSET1: [f64; 5] = [-3.0, -10.0, 18.0, -6.0, 1.0];
const CENTRAL: [f64; 5] = [1.0, -8.0, 0.0, 8.0, -1.0];

/// Differentiate each row of `qhat` with respect to time.
pub fn fd4(qhat: &DMatrix<f64>, grid: &UniformTimeGrid) -> Result<DMatrix<f64>> {
    let (r, k) = qhat.shape();
    if k != grid.k() {
        return Err(Error::shape("fd4", grid.k(), k));
    }
    if k < 5 {
        return Err(Error::InvalidDimension(format!(
            "fourth-order stencils need k >= 5 columns, got {k}"
        )));
    }
    let scale = 1.0 / (12.0 * grid.dt());
    let mut out = DMatrix::zeros(r, k);

    let mut apply = |col_out: usize, base: usize, stencil: &[f64; 5], flip: f64| {
        for i in 0..r {
            let mut acc = 0.0;
            for (s, &w) in stencil.iter().enumerate() {
                let col_in = if flip < 0.0 { base + 4 - s } else { base + s };
                acc += w * qhat[(i, col_in)];
            }
            out[(i, col_out)] = flip * scale * acc;
        }
    };

    apply(0, 0, &FORWARD, 1.0);
    apply(1, 0, &OFFSET1, 1.0);
    for j in 2..k - 2 {
        apply(j, j - 2, &CENTRAL, 1.0);
    }
    // Mirrored one-sided stencils at the right edge.
    apply(k - 2, k - 5, &OFFSET1, -1.0);
    apply(k - 1, k - 5, &FORWARD, -1.0);
    Ok(out)
}
