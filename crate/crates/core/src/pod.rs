//! POD basis computation, cumulative-energy rank selection, projection, and
//! the precomputable state-bound factors.
//!
//! Small problems (min(n, k) <= `dense_cutoff`) go through a deterministic
//! dense SVD; larger ones use a seeded randomized range finder with power
//! iterations, so the cost stays O(rnk + r^2(n + k)). Rows of the snapshot
//! matrix that are identically zero are excluded from the factorization and
//! re-embedded as zero basis rows, which keeps null variables (zero
//! velocities, zero concentrations) exactly null after projection.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Options for the randomized path of [`pod`].
#[derive(Debug, Clone, Copy)]
pub struct PodOptions {
    pub oversampling: usize,
    pub power_iters: usize,
    pub seed: u64,
    /// Problems with min(n, k) at or below this use a dense SVD instead.
    pub dense_cutoff: usize,
}

impl Default for PodOptions {
    fn default() -> Self {
        PodOptions {
            oversampling: 10,
            power_iters: 2,
            seed: 0,
            dense_cutoff: 512,
        }
    }
}

/// Orthonormal rank-r basis together with the leading singular values that
/// were actually computed (the full spectrum on the dense path, the sketch
/// prefix on the randomized path).
#[derive(Debug, Clone)]
pub struct PodBasis {
    v: DMatrix<f64>,
    singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn new(v: DMatrix<f64>, singular_values: Vec<f64>) -> Self {
        PodBasis { v, singular_values }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.v
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    pub fn n(&self) -> usize {
        self.v.nrows()
    }

    pub fn r(&self) -> usize {
        self.v.ncols()
    }
}

/// Compute a rank-r POD basis of `q`.
pub fn pod(q: &DMatrix<f64>, r: usize, opts: &PodOptions) -> Result<PodBasis> {
    let (n, k) = q.shape();
    let max_rank = n.min(k);
    if r == 0 || r > max_rank {
        return Err(Error::InvalidDimension(format!(
            "rank r = {r} must satisfy 1 <= r <= min(n, k) = {max_rank}"
        )));
    }

    let zero_rows: Vec<usize> = (0..n)
        .filter(|&i| (0..k).all(|j| q[(i, j)] == 0.0))
        .collect();
    let basis = if zero_rows.is_empty() {
        pod_dispatch(q, r, opts)?
    } else {
        let live: Vec<usize> = (0..n).filter(|i| !zero_rows.contains(i)).collect();
        if live.len() < r {
            return Err(Error::DegenerateData(format!(
                "only {} nonzero rows but rank {r} requested",
                live.len()
            )));
        }
        let compressed = q.select_rows(live.iter());
        let inner = pod_dispatch(&compressed, r, opts)?;
        let mut v = DMatrix::zeros(n, r);
        for (ci, &row) in live.iter().enumerate() {
            v.row_mut(row).copy_from(&inner.v.row(ci));
        }
        PodBasis::new(v, inner.singular_values)
    };
    Ok(basis)
}

fn pod_dispatch(q: &DMatrix<f64>, r: usize, opts: &PodOptions) -> Result<PodBasis> {
    let (n, k) = q.shape();
    if n.min(k) <= opts.dense_cutoff {
        pod_dense(q, r)
    } else {
        pod_randomized(q, r, opts)
    }
}

fn pod_dense(q: &DMatrix<f64>, r: usize) -> Result<PodBasis> {
    let svd = q.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut v = u.columns(0, r).clone_owned();
    fix_signs(&mut v);
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    Ok(PodBasis::new(v, singular_values))
}

fn pod_randomized(q: &DMatrix<f64>, r: usize, opts: &PodOptions) -> Result<PodBasis> {
    let (n, k) = q.shape();
    let sketch = (r + opts.oversampling).min(n.min(k));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let omega = DMatrix::from_fn(k, sketch, |_, _| standard_normal(&mut rng));

    let mut range = orthonormalize(q * omega)?;
    for _ in 0..opts.power_iters {
        let z = orthonormalize(q.tr_mul(&range))?;
        range = orthonormalize(q * z)?;
    }

    // Project onto the captured range and finish with a small dense SVD.
    let b = range.tr_mul(q); // sketch x k
    let svd = b.svd(true, false);
    let ub = svd.u.expect("left singular vectors requested");
    let mut v = (&range * ub).columns(0, r).clone_owned();
    fix_signs(&mut v);
    let singular_values: Vec<f64> = svd.singular_values.iter().copied().collect();
    Ok(PodBasis::new(v, singular_values))
}

fn orthonormalize(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let qr = m.qr();
    Ok(qr.q())
}

/// Deterministic sign convention: the entry of largest magnitude in each
/// column is made positive (first such entry wins on exact ties).
fn fix_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = 0.0f64;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Fraction of squared singular-value mass captured by the leading `r`
/// values of the given spectrum.
pub fn cumulative_energy(singular_values: &[f64], r: usize) -> Result<f64> {
    if r == 0 || r > singular_values.len() {
        return Err(Error::InvalidDimension(format!(
            "r = {r} outside 1..={}",
            singular_values.len()
        )));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateData("all-zero singular spectrum".into()));
    }
    Ok(singular_values[..r].iter().map(|s| s * s).sum::<f64>() / total)
}

/// Smallest r whose cumulative energy exceeds `threshold`.
pub fn select_rank(singular_values: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidDimension(format!(
            "energy threshold {threshold} must lie in (0, 1)"
        )));
    }
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return Err(Error::DegenerateData("all-zero singular spectrum".into()));
    }
    let mut acc = 0.0;
    for (i, s) in singular_values.iter().enumerate() {
        acc += s * s;
        if acc / total > threshold {
            return Ok(i + 1);
        }
    }
    // Roundoff can leave acc/total marginally below an extreme threshold.
    Ok(singular_values.len())
}

/// Singular values alongside the exact total energy ||Q||_F^2, so cumulative
/// energies stay meaningful when only a leading prefix of the spectrum was
/// computed (the randomized path never sees the tail).
#[derive(Debug, Clone)]
pub struct SingularSpectrum {
    values: Vec<f64>,
    total_energy: f64,
}

impl SingularSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_energy(&self) -> f64 {
        self.total_energy
    }

    pub fn cumulative_energy(&self, r: usize) -> Result<f64> {
        if r == 0 || r > self.values.len() {
            return Err(Error::InvalidDimension(format!(
                "r = {r} outside 1..={}",
                self.values.len()
            )));
        }
        if self.total_energy == 0.0 {
            return Err(Error::DegenerateData("all-zero singular spectrum".into()));
        }
        Ok(self.values[..r].iter().map(|s| s * s).sum::<f64>() / self.total_energy)
    }

    /// Smallest r with cumulative energy above `threshold`; fails if the
    /// computed prefix never reaches it (compute a larger sketch then).
    pub fn select_rank(&self, threshold: f64) -> Result<usize> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(Error::InvalidDimension(format!(
                "energy threshold {threshold} must lie in (0, 1)"
            )));
        }
        if self.total_energy == 0.0 {
            return Err(Error::DegenerateData("all-zero singular spectrum".into()));
        }
        let mut acc = 0.0;
        for (i, s) in self.values.iter().enumerate() {
            acc += s * s;
            if acc / self.total_energy > threshold {
                return Ok(i + 1);
            }
        }
        Err(Error::DegenerateData(format!(
            "computed spectrum prefix ({} values) never exceeds energy {threshold}; \
             increase the sketch rank",
            self.values.len()
        )))
    }
}

/// Compute the singular spectrum of `q` for rank selection. Dense problems
/// return the full spectrum; larger ones a randomized sketch of
/// `rank_hint + oversampling` values. The total energy is always the exact
/// squared Frobenius norm of `q`.
pub fn singular_spectrum(q: &DMatrix<f64>, rank_hint: usize, opts: &PodOptions) -> Result<SingularSpectrum> {
    let (n, k) = q.shape();
    let total_energy: f64 = q.iter().map(|x| x * x).sum();
    let values = if n.min(k) <= opts.dense_cutoff {
        q.clone().svd(false, false).singular_values.iter().copied().collect()
    } else {
        let hint = rank_hint.clamp(1, n.min(k));
        pod_randomized(q, hint, opts)?.singular_values
    };
    Ok(SingularSpectrum { values, total_energy })
}

/// Project snapshots onto the basis: returns `V^T Q`.
pub fn project(v: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != q.nrows() {
        return Err(Error::shape("project", v.nrows(), q.nrows()));
    }
    Ok(v.tr_mul(q))
}

/// Row-wise absolute sums of the basis. If every reduced coordinate is
/// bounded by B, full-state entry i is bounded by `B * factors[i]`.
pub fn bound_factors(v: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(v.nrows(), |i, _| v.row(i).iter().map(|x| x.abs()).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn orthonormal_cols(n: usize, r: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(n, r, |_, _| standard_normal(&mut rng));
        m.qr().q()
    }

    #[test]
    fn recovers_known_singular_values() {
        let u = orthonormal_cols(30, 3, 1);
        let vt = orthonormal_cols(20, 3, 2).transpose();
        let q = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 2.0, 1.0])) * &vt;
        let basis = pod(&q, 2, &PodOptions::default()).unwrap();
        assert_relative_eq!(basis.singular_values()[0], 3.0, epsilon = 1e-8);
        assert_relative_eq!(basis.singular_values()[1], 2.0, epsilon = 1e-8);
        // Basis spans the two leading left singular vectors.
        let leading = u.columns(0, 2);
        let proj = basis.matrix() * basis.matrix().tr_mul(&leading);
        assert_relative_eq!(proj, leading.clone_owned(), epsilon = 1e-8);
    }

    #[test]
    fn rank_one_matrix_gives_normalized_direction() {
        let dir = DVector::from_vec(vec![3.0, 0.0, 4.0]);
        let q = &dir * DMatrix::from_fn(1, 5, |_, j| (j + 1) as f64);
        let basis = pod(&q, 1, &PodOptions::default()).unwrap();
        let v0 = basis.matrix().column(0);
        assert_relative_eq!(v0[0].abs(), 0.6, epsilon = 1e-12);
        assert_relative_eq!(v0[2].abs(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn rejects_rank_beyond_min_dimension() {
        let q = DMatrix::<f64>::zeros(4, 3);
        assert!(pod(&q, 4, &PodOptions::default()).is_err());
    }

    #[test]
    fn randomized_path_is_close_to_optimal_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = DMatrix::from_fn(200, 100, |_, _| standard_normal(&mut rng));
        let opts = PodOptions {
            dense_cutoff: 0, // force the randomized path
            ..PodOptions::default()
        };
        let basis = pod(&q, 10, &opts).unwrap();
        let err_rand = (&q - basis.matrix() * basis.matrix().tr_mul(&q)).norm();

        let dense = pod(&q, 10, &PodOptions::default()).unwrap();
        let err_opt = (&q - dense.matrix() * dense.matrix().tr_mul(&q)).norm();
        assert!(
            err_rand <= 1.2 * err_opt,
            "randomized error {err_rand} vs optimal {err_opt}"
        );
    }

    #[test]
    fn randomized_path_is_deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = DMatrix::from_fn(60, 40, |_, _| standard_normal(&mut rng));
        let opts = PodOptions { dense_cutoff: 0, ..PodOptions::default() };
        let a = pod(&q, 5, &opts).unwrap();
        let b = pod(&q, 5, &opts).unwrap();
        assert_eq!(a.matrix(), b.matrix());
        assert_eq!(a.singular_values(), b.singular_values());
    }

    #[test]
    fn basis_is_orthonormal_on_both_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = DMatrix::from_fn(80, 50, |_, _| standard_normal(&mut rng));
        for opts in [PodOptions::default(), PodOptions { dense_cutoff: 0, ..Default::default() }] {
            let basis = pod(&q, 7, &opts).unwrap();
            let gram = basis.matrix().tr_mul(basis.matrix());
            let eye = DMatrix::identity(7, 7);
            assert!((gram - eye).norm() <= 1e-10);
        }
    }

    #[test]
    fn exact_rank_matrix_is_recovered() {
        let u = orthonormal_cols(120, 4, 5);
        let vt = orthonormal_cols(90, 4, 6).transpose();
        let q = &u * DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 2.0, 1.0])) * &vt;
        for opts in [PodOptions::default(), PodOptions { dense_cutoff: 0, ..Default::default() }] {
            let basis = pod(&q, 4, &opts).unwrap();
            let err = (&q - basis.matrix() * basis.matrix().tr_mul(&q)).norm() / q.norm();
            assert!(err <= 1e-8, "relative projection error {err}");
        }
    }

    #[test]
    fn zero_rows_yield_exactly_zero_basis_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut q = DMatrix::from_fn(12, 8, |_, _| standard_normal(&mut rng));
        for j in 0..8 {
            q[(3, j)] = 0.0;
            q[(7, j)] = 0.0;
        }
        let basis = pod(&q, 3, &PodOptions::default()).unwrap();
        for c in 0..3 {
            assert_eq!(basis.matrix()[(3, c)], 0.0);
            assert_eq!(basis.matrix()[(7, c)], 0.0);
        }
        let recon = basis.matrix() * basis.matrix().tr_mul(&q);
        for j in 0..8 {
            assert_eq!(recon[(3, j)], 0.0);
            assert_eq!(recon[(7, j)], 0.0);
        }
    }

    #[test]
    fn cumulative_energy_examples() {
        assert_relative_eq!(cumulative_energy(&[2.0, 1.0], 1).unwrap(), 0.8);
        assert_relative_eq!(cumulative_energy(&[2.0, 1.0], 2).unwrap(), 1.0);
        assert_relative_eq!(cumulative_energy(&[3.0, 2.0, 1.0], 2).unwrap(), 13.0 / 14.0);
        assert!(cumulative_energy(&[0.0, 0.0], 1).is_err());
    }

    #[test]
    fn energy_is_monotone_in_rank() {
        let s = [5.0, 3.0, 2.0, 0.5, 0.1];
        let mut prev = 0.0;
        for r in 1..=s.len() {
            let e = cumulative_energy(&s, r).unwrap();
            assert!(e >= prev);
            prev = e;
        }
        assert_relative_eq!(prev, 1.0);
    }

    #[test]
    fn select_rank_examples() {
        assert_eq!(select_rank(&[2.0, 1.0], 0.5).unwrap(), 1);
        assert_eq!(select_rank(&[2.0, 1.0], 0.9).unwrap(), 2);
        assert_eq!(select_rank(&[1.0, 1.0, 1.0, 1.0], 0.7).unwrap(), 3);
        assert!(select_rank(&[1.0], 1.0).is_err());
        assert!(select_rank(&[0.0], 0.5).is_err());
    }

    #[test]
    fn spectrum_uses_exact_total_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let q = DMatrix::from_fn(40, 25, |_, _| standard_normal(&mut rng));
        let spec = singular_spectrum(&q, 10, &PodOptions::default()).unwrap();
        let frob_sq: f64 = q.iter().map(|x| x * x).sum();
        assert_relative_eq!(spec.total_energy(), frob_sq, max_relative = 1e-14);
        assert_relative_eq!(spec.cumulative_energy(25).unwrap(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn project_examples() {
        let v = orthonormal_cols(10, 3, 21);
        // Basis projected onto itself gives the identity.
        let eye = project(&v, &v).unwrap();
        assert_relative_eq!(eye, DMatrix::identity(3, 3), epsilon = 1e-12);

        // Q = V * Qhat recovers Qhat.
        let qhat = DMatrix::from_fn(3, 6, |i, j| ((i + 2 * j) as f64).cos());
        let q = &v * &qhat;
        assert_relative_eq!(project(&v, &q).unwrap(), qhat, epsilon = 1e-12);

        assert!(project(&v, &DMatrix::<f64>::zeros(9, 2)).is_err());
    }

    #[test]
    fn bound_factors_examples() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert_eq!(bound_factors(&eye).as_slice(), &[1.0, 1.0, 1.0]);

        let v = DMatrix::from_column_slice(2, 1, &[0.6, -0.8]);
        assert_eq!(bound_factors(&v).as_slice(), &[0.6, 0.8]);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let v = DMatrix::from_fn(6, 4, |_, _| standard_normal(&mut rng));
        let factors = bound_factors(&v);
        for i in 0..6 {
            let manual: f64 = (0..4).map(|j| v[(i, j)].abs()).sum();
            assert_relative_eq!(factors[i], manual);
        }
    }

    #[test]
    fn state_bound_holds_for_bounded_reduced_states() {
        let v = orthonormal_cols(15, 4, 31);
        let factors = bound_factors(&v);
        let b = 2.5;
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..50 {
            let qhat = DVector::from_fn(4, |_, _| rng.gen_range(-b..b));
            let full = &v * &qhat;
            for i in 0..15 {
                assert!(full[i].abs() <= b * factors[i] + 1e-12);
            }
        }
    }
}
