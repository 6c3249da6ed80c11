//! Regularization selection: evaluate the training error of candidate
//! (lambda1, lambda2) pairs under a trajectory bound, locate a minimizer by
//! coarse grid search, refine it with Nelder-Mead in log10 coordinates, and
//! run the whole learning pipeline end to end.
//!
//! A candidate is scored by solving the regularized regression, integrating
//! the resulting model over the full horizon from the first training state,
//! and measuring the relative discrete L2 error against the projected
//! training snapshots. Any candidate whose trajectory leaves [-B, B] or whose
//! integration breaks down scores infinity and is thereby disqualified.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pod::{pod, project, singular_spectrum, PodBasis, PodOptions};
use crate::preprocess::{
    apply_scaling, apply_transform, apply_transform_derivative, fit_scaling, ScalingParams,
    TransformSpec,
};
use crate::quadform::data_dim;
use crate::regression::{
    build_gram_cache, solve_regularized, DataMatrix, GramCache, RegPair,
};
use crate::regression::RomOperators;
use crate::rom::{integrate, InputSignal, TrajectoryStatus};
use crate::timederiv::{fd4, UniformTimeGrid};

/// Log-spaced values along one regularization axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub log10_min: f64,
    pub log10_max: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(log10_min: f64, log10_max: f64, count: usize) -> Result<Self> {
        if count < 2 || log10_max < log10_min {
            return Err(Error::InvalidDimension(format!(
                "grid axis needs count >= 2 and an ordered range, \
                 got [{log10_min}, {log10_max}] x {count}"
            )));
        }
        Ok(AxisSpec {
            log10_min,
            log10_max,
            count,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        let span = self.log10_max - self.log10_min;
        (0..self.count)
            .map(|i| {
                let frac = i as f64 / (self.count - 1) as f64;
                10f64.powf(self.log10_min + span * frac)
            })
            .collect()
    }
}

/// The coarse Cartesian search grid over (lambda1, lambda2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lambda1: AxisSpec,
    pub lambda2: AxisSpec,
}

impl Default for GridSpec {
    fn default() -> Self {
        // 10^0 .. 10^5, six points per axis.
        let axis = AxisSpec {
            log10_min: 0.0,
            log10_max: 5.0,
            count: 6,
        };
        GridSpec {
            lambda1: axis,
            lambda2: axis,
        }
    }
}

impl GridSpec {
    /// Grid points in lexicographically increasing (lambda1, lambda2) order.
    pub fn points(&self) -> Vec<RegPair> {
        let l2s = self.lambda2.values();
        self.lambda1
            .values()
            .iter()
            .flat_map(|&l1| l2s.iter().map(move |&l2| RegPair { lambda1: l1, lambda2: l2 }))
            .collect()
    }
}

/// Nelder-Mead refinement settings (log10 coordinates).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadSettings {
    /// Offset of the two non-anchor initial vertices, in decades.
    pub initial_scale: f64,
    pub max_iters: usize,
    /// Convergence threshold on the simplex diameter (decades).
    pub simplex_tol: f64,
    /// Convergence threshold on the relative value spread.
    pub value_tol: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        NelderMeadSettings {
            initial_scale: 0.5,
            max_iters: 100,
            simplex_tol: 1e-3,
            value_tol: 1e-6,
        }
    }
}

/// Norm used to compare the integrated model against training data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorNorm {
    /// Discrete L2([t0, t_{k-1}]) of the reduced-state mismatch, relative to
    /// the same norm of the training data.
    #[default]
    RelativeL2,
}

/// Everything the regularization search needs besides the data itself.
#[derive(Debug, Clone)]
pub struct SearchConfig {
    /// Bound margin tau >= 1; the trajectory bound is tau * max |Qhat|.
    pub tau: f64,
    pub grid: GridSpec,
    pub nm: NelderMeadSettings,
    pub error_norm: ErrorNorm,
    /// (relative, absolute) integration tolerances for candidate scoring.
    pub integration_tol: (f64, f64),
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            tau: 1.5,
            grid: GridSpec::default(),
            nm: NelderMeadSettings::default(),
            error_norm: ErrorNorm::RelativeL2,
            integration_tol: (crate::rom::DEFAULT_REL_TOL, crate::rom::DEFAULT_ABS_TOL),
        }
    }
}

/// Trajectory bound B = tau * max |Qhat_ij|.
pub fn select_bound(qhat: &DMatrix<f64>, tau: f64) -> Result<f64> {
    if !(tau >= 1.0) {
        return Err(Error::InvalidDimension(format!(
            "bound margin tau = {tau} must be at least 1"
        )));
    }
    let max_abs = qhat.amax();
    if max_abs == 0.0 {
        return Err(Error::DegenerateData(
            "projected training data is identically zero".into(),
        ));
    }
    Ok(tau * max_abs)
}

/// Outcome of scoring one regularization candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateOutcome {
    Finite(f64),
    BoundViolated,
    IntegratorFailed,
    SolveFailed,
}

impl CandidateOutcome {
    /// Collapse to the search objective; every failure is the infinity
    /// sentinel.
    pub fn error(&self) -> f64 {
        match self {
            CandidateOutcome::Finite(e) => *e,
            _ => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CandidateOutcome::Finite(_))
    }
}

/// Immutable data shared by every candidate evaluation. Evaluations only
/// touch the Gram cache (never the raw snapshots), so their cost does not
/// grow with the snapshot count or the full state dimension, and they may
/// run concurrently.
pub struct TrainErrorContext<'a> {
    cache: &'a GramCache,
    qhat: &'a DMatrix<f64>,
    signal: &'a InputSignal,
    eval_times: Vec<f64>,
    k_train: usize,
    bound: f64,
    tol: (f64, f64),
    denominator: f64,
}

impl<'a> TrainErrorContext<'a> {
    pub fn new(
        cache: &'a GramCache,
        qhat: &'a DMatrix<f64>,
        signal: &'a InputSignal,
        grid: &UniformTimeGrid,
        tf: f64,
        bound: f64,
        tol: (f64, f64),
    ) -> Result<Self> {
        if qhat.ncols() != grid.k() {
            return Err(Error::shape("TrainErrorContext", grid.k(), qhat.ncols()));
        }
        let eval_times = grid.extended_to(tf)?.times();
        let k_train = grid.k();
        let denominator = trapezoid_column_energy(qhat, k_train);
        if denominator == 0.0 {
            return Err(Error::DegenerateData(
                "projected training data is identically zero".into(),
            ));
        }
        Ok(TrainErrorContext {
            cache,
            qhat,
            signal,
            eval_times,
            k_train,
            bound,
            tol,
            denominator,
        })
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Solve at `reg`, integrate over the full horizon, and score.
    pub fn evaluate(&self, reg: &RegPair) -> CandidateOutcome {
        let ops = match solve_regularized(self.cache, reg) {
            Ok(ops) => ops,
            Err(_) => return CandidateOutcome::SolveFailed,
        };
        let q0 = self.qhat.column(0).clone_owned();
        let traj = match integrate(
            &ops,
            &q0,
            self.signal,
            &self.eval_times,
            self.tol,
            Some(self.bound),
        ) {
            Ok(t) => t,
            Err(_) => return CandidateOutcome::IntegratorFailed,
        };
        match traj.status {
            TrajectoryStatus::Completed => {}
            TrajectoryStatus::BoundViolated { .. } => return CandidateOutcome::BoundViolated,
            TrajectoryStatus::IntegratorFailed { .. } => return CandidateOutcome::IntegratorFailed,
        }
        let mut num = 0.0;
        for j in 0..self.k_train {
            let w = trapezoid_weight(j, self.k_train);
            let diff = self.qhat.column(j) - traj.states.column(j);
            num += w * diff.norm_squared();
        }
        CandidateOutcome::Finite((num / self.denominator).sqrt())
    }
}

fn trapezoid_weight(j: usize, k: usize) -> f64 {
    if j == 0 || j == k - 1 {
        0.5
    } else {
        1.0
    }
}

fn trapezoid_column_energy(m: &DMatrix<f64>, k: usize) -> f64 {
    (0..k)
        .map(|j| trapezoid_weight(j, k) * m.column(j).norm_squared())
        .sum()
}

/// The training-error objective: relative discrete L2 mismatch, or infinity
/// when the candidate is disqualified.
pub fn train_error(ctx: &TrainErrorContext, reg: &RegPair) -> f64 {
    ctx.evaluate(reg).error()
}

/// Which stage of the search produced an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchPhase {
    Grid,
    Refine,
}

/// One scored candidate.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub reg: RegPair,
    pub outcome: CandidateOutcome,
    pub phase: SearchPhase,
}

/// Evaluate every grid point (concurrently; the result is independent of
/// evaluation order) and return the finite-error minimizer. Exact ties go to
/// the lexicographically larger (lambda1, lambda2): at equal fit, the more
/// strongly regularized model is the safer pick.
pub fn grid_search<F>(grid: &GridSpec, eval: F) -> Result<(RegPair, f64, Vec<Evaluation>)>
where
    F: Fn(&RegPair) -> CandidateOutcome + Sync,
{
    let points = grid.points();
    let outcomes: Vec<CandidateOutcome> = points.par_iter().map(|p| eval(p)).collect();
    let evaluations: Vec<Evaluation> = points
        .iter()
        .zip(&outcomes)
        .map(|(reg, outcome)| Evaluation {
            reg: *reg,
            outcome: *outcome,
            phase: SearchPhase::Grid,
        })
        .collect();
    let mut best: Option<(RegPair, f64)> = None;
    // Points are in increasing lexicographic order, so replacing on <= keeps
    // the largest pair among exact ties.
    for ev in &evaluations {
        let e = ev.outcome.error();
        if e.is_finite() && best.map_or(true, |(_, be)| e <= be) {
            best = Some((ev.reg, e));
        }
    }
    match best {
        Some((reg, err)) => {
            log::debug!(
                "grid search winner ({:.3e}, {:.3e}) with error {err:.6e}",
                reg.lambda1,
                reg.lambda2
            );
            Ok((reg, err, evaluations))
        }
        None => Err(Error::AllCandidatesDisqualified),
    }
}

/// Nelder-Mead refinement in (log10 lambda1, log10 lambda2), starting from a
/// point with finite error. Disqualified candidates rank as infinity, so the
/// simplex reflects away from them; the returned point is never worse than
/// the start.
pub fn refine_nelder_mead<F>(
    start: RegPair,
    settings: &NelderMeadSettings,
    mut eval: F,
) -> (RegPair, f64, Vec<Evaluation>)
where
    F: FnMut(&RegPair) -> CandidateOutcome,
{
    let mut evaluations = Vec::new();
    let mut score = |x: &[f64; 2], evals: &mut Vec<Evaluation>| -> f64 {
        let reg = RegPair {
            lambda1: 10f64.powf(x[0]),
            lambda2: 10f64.powf(x[1]),
        };
        let outcome = eval(&reg);
        evals.push(Evaluation {
            reg,
            outcome,
            phase: SearchPhase::Refine,
        });
        outcome.error()
    };

    let x0 = [start.lambda1.log10(), start.lambda2.log10()];
    let s = settings.initial_scale;
    let mut simplex: Vec<([f64; 2], f64)> = vec![
        (x0, score(&x0, &mut evaluations)),
        ([x0[0] + s, x0[1]], 0.0),
        ([x0[0], x0[1] + s], 0.0),
    ];
    simplex[1].1 = score(&simplex[1].0, &mut evaluations);
    simplex[2].1 = score(&simplex[2].0, &mut evaluations);

    for _ in 0..settings.max_iters {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best, second, worst) = (simplex[0], simplex[1], simplex[2]);
        let diameter = simplex
            .iter()
            .flat_map(|a| simplex.iter().map(move |b| dist(&a.0, &b.0)))
            .fold(0.0, f64::max);
        let spread = worst.1 - best.1;
        if worst.1.is_finite()
            && spread.abs() <= settings.value_tol * (1.0 + best.1.abs())
            && diameter <= settings.simplex_tol
        {
            break;
        }

        let centroid = [
            0.5 * (best.0[0] + second.0[0]),
            0.5 * (best.0[1] + second.0[1]),
        ];
        let reflected = combine(&centroid, &worst.0, 1.0);
        let fr = score(&reflected, &mut evaluations);
        if fr < best.1 {
            let expanded = combine(&centroid, &worst.0, 2.0);
            let fe = score(&expanded, &mut evaluations);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < second.1 {
            simplex[2] = (reflected, fr);
        } else if fr < worst.1 {
            // Outside contraction.
            let contracted = combine(&centroid, &worst.0, 0.5);
            let fc = score(&contracted, &mut evaluations);
            if fc <= fr {
                simplex[2] = (contracted, fc);
            } else {
                shrink(&mut simplex, &mut |x, e| score(x, e), &mut evaluations);
            }
        } else {
            // Inside contraction.
            let contracted = combine(&centroid, &worst.0, -0.5);
            let fc = score(&contracted, &mut evaluations);
            if fc < worst.1 {
                simplex[2] = (contracted, fc);
            } else {
                shrink(&mut simplex, &mut |x, e| score(x, e), &mut evaluations);
            }
        }
    }

    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let best = simplex[0];
    let winner = RegPair {
        lambda1: 10f64.powf(best.0[0]),
        lambda2: 10f64.powf(best.0[1]),
    };
    (winner, best.1, evaluations)
}

fn combine(centroid: &[f64; 2], worst: &[f64; 2], coeff: f64) -> [f64; 2] {
    [
        centroid[0] + coeff * (centroid[0] - worst[0]),
        centroid[1] + coeff * (centroid[1] - worst[1]),
    ]
}

fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn shrink(
    simplex: &mut [([f64; 2], f64)],
    score: &mut impl FnMut(&[f64; 2], &mut Vec<Evaluation>) -> f64,
    evaluations: &mut Vec<Evaluation>,
) {
    let anchor = simplex[0].0;
    for vertex in simplex.iter_mut().skip(1) {
        vertex.0 = [
            anchor[0] + 0.5 * (vertex.0[0] - anchor[0]),
            anchor[1] + 0.5 * (vertex.0[1] - anchor[1]),
        ];
        vertex.1 = score(&vertex.0, evaluations);
    }
}

/// Full record of a regularization search.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub evaluations: Vec<Evaluation>,
    pub winner: RegPair,
    pub winner_error: f64,
    pub bound_disqualified: usize,
    pub integrator_failed: usize,
    pub solve_failed: usize,
}

impl SearchReport {
    fn from_evaluations(evaluations: Vec<Evaluation>, winner: RegPair, winner_error: f64) -> Self {
        let mut bound_disqualified = 0;
        let mut integrator_failed = 0;
        let mut solve_failed = 0;
        for ev in &evaluations {
            match ev.outcome {
                CandidateOutcome::BoundViolated => bound_disqualified += 1,
                CandidateOutcome::IntegratorFailed => integrator_failed += 1,
                CandidateOutcome::SolveFailed => solve_failed += 1,
                CandidateOutcome::Finite(_) => {}
            }
        }
        SearchReport {
            evaluations,
            winner,
            winner_error,
            bound_disqualified,
            integrator_failed,
            solve_failed,
        }
    }

    /// Human-readable table of every evaluated point.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str("phase   lambda1        lambda2        error\n");
        for ev in &self.evaluations {
            let phase = match ev.phase {
                SearchPhase::Grid => "grid",
                SearchPhase::Refine => "refine",
            };
            let err = match ev.outcome {
                CandidateOutcome::Finite(e) => format!("{e:.6e}"),
                CandidateOutcome::BoundViolated => "inf (bound violated)".into(),
                CandidateOutcome::IntegratorFailed => "inf (integrator failed)".into(),
                CandidateOutcome::SolveFailed => "inf (solve failed)".into(),
            };
            out.push_str(&format!(
                "{phase:<7} {:<14.6e} {:<14.6e} {err}\n",
                ev.reg.lambda1, ev.reg.lambda2
            ));
        }
        out.push_str(&format!(
            "winner: lambda1 = {:.6e}, lambda2 = {:.6e}, error = {:.6e}\n\
             disqualified: {} bound, {} integrator, {} solve\n",
            self.winner.lambda1,
            self.winner.lambda2,
            self.winner_error,
            self.bound_disqualified,
            self.integrator_failed,
            self.solve_failed,
        ));
        out
    }
}

/// How the reduced dimension is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankRule {
    Fixed(usize),
    /// Minimal r whose cumulative energy exceeds the threshold.
    EnergyThreshold(f64),
}

/// Where the reduced time derivatives come from.
#[derive(Debug, Clone)]
pub enum DerivativeSource {
    /// Fourth-order finite differences of the projected snapshots.
    FiniteDifference,
    /// Native-space derivative snapshots provided by the solver, mapped
    /// through the transform chain rule, scaled, and projected.
    NativeProvided(DMatrix<f64>),
}

/// Inputs to the end-to-end pipeline: native snapshots on a uniform training
/// grid, the input signal that produced them, and the bound-check horizon.
pub struct PipelineInputs<'a> {
    pub snapshots: &'a DMatrix<f64>,
    pub signal: &'a InputSignal,
    pub grid: UniformTimeGrid,
    /// End of the trajectory-feasibility window; at least the end of the
    /// training grid.
    pub tf: f64,
}

/// Pipeline configuration beyond the search itself.
pub struct PipelineOptions {
    pub transform: TransformSpec,
    pub rank: RankRule,
    pub search: SearchConfig,
    pub pod: PodOptions,
    pub derivatives: DerivativeSource,
}

/// Everything the pipeline learned.
pub struct PipelineOutput {
    pub operators: RomOperators,
    pub basis: PodBasis,
    pub scaling: ScalingParams,
    pub report: SearchReport,
    /// Projected (scaled-learning-space) training snapshots.
    pub qhat: DMatrix<f64>,
    pub bound: f64,
}

/// Run the full procedure: transform, scale, reduce, differentiate, select
/// the trajectory bound, search the regularization plane, and solve at the
/// winner.
pub fn reg_opinf(inputs: &PipelineInputs, opts: &PipelineOptions) -> Result<PipelineOutput> {
    let z = inputs.snapshots;
    let grid = &inputs.grid;
    if z.ncols() != grid.k() {
        return Err(Error::shape("reg_opinf (snapshot columns)", grid.k(), z.ncols()));
    }
    if inputs.tf < grid.t_end() {
        return Err(Error::InvalidDimension(format!(
            "tf = {} must reach the end of the training grid ({})",
            inputs.tf,
            grid.t_end()
        )));
    }

    log::info!("transforming {} x {} native snapshots", z.nrows(), z.ncols());
    let cells = opts.transform.source_cells(z.nrows(), "reg_opinf")?;
    let q_learn = apply_transform(z, &opts.transform)?;
    let layout = opts.transform.target_layout(cells)?;
    let scaling = fit_scaling(&q_learn, &layout)?;
    let qs = apply_scaling(&q_learn, &scaling)?;

    let r = match opts.rank {
        RankRule::Fixed(r) => r,
        RankRule::EnergyThreshold(threshold) => {
            let hint = qs.nrows().min(qs.ncols()).min(256);
            let spectrum = singular_spectrum(&qs, hint, &opts.pod)?;
            spectrum.select_rank(threshold)?
        }
    };
    log::info!("computing rank-{r} basis");
    let basis = pod(&qs, r, &opts.pod)?;
    let qhat = project(basis.matrix(), &qs)?;

    let m = inputs.signal.dim();
    let d = data_dim(r, m)?;
    if d >= grid.k() {
        return Err(Error::OverParameterized { d, k: grid.k() });
    }

    let derivs = match &opts.derivatives {
        DerivativeSource::FiniteDifference => fd4(&qhat, grid)?,
        DerivativeSource::NativeProvided(dz) => {
            let dq = apply_transform_derivative(z, dz, &opts.transform)?;
            let dqs = apply_scaling(&dq, &scaling)?;
            project(basis.matrix(), &dqs)?
        }
    };

    let bound = select_bound(&qhat, opts.search.tau)?;
    let training_inputs = inputs.signal.sample(&grid.times());
    let dmat = DataMatrix::build(&qhat, (m > 0).then_some(&training_inputs))?;
    let cache = build_gram_cache(&dmat, &derivs)?;
    let ctx = TrainErrorContext::new(
        &cache,
        &qhat,
        inputs.signal,
        grid,
        inputs.tf,
        bound,
        opts.search.integration_tol,
    )?;

    log::info!(
        "searching {} x {} regularization grid (bound {bound:.4e})",
        opts.search.grid.lambda1.count,
        opts.search.grid.lambda2.count
    );
    let (grid_winner, grid_error, mut evaluations) =
        grid_search(&opts.search.grid, |reg| ctx.evaluate(reg))?;
    let (winner, winner_error, refine_evals) =
        refine_nelder_mead(grid_winner, &opts.search.nm, |reg| ctx.evaluate(reg));
    evaluations.extend(refine_evals);
    debug_assert!(winner_error <= grid_error);
    log::info!(
        "winner ({:.4e}, {:.4e}) with training error {winner_error:.6e}",
        winner.lambda1,
        winner.lambda2
    );

    let operators = solve_regularized(&cache, &winner)?;
    let report = SearchReport::from_evaluations(evaluations, winner, winner_error);
    Ok(PipelineOutput {
        operators,
        basis,
        scaling,
        report,
        qhat,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    #[test]
    fn select_bound_examples() {
        let qhat = DMatrix::from_row_slice(1, 3, &[0.5, -2.0, 1.0]);
        assert_relative_eq!(select_bound(&qhat, 1.5).unwrap(), 3.0);
        assert_relative_eq!(select_bound(&qhat, 1.0).unwrap(), 2.0);
        assert!(select_bound(&qhat, 0.9).is_err());
        assert!(select_bound(&DMatrix::zeros(2, 2), 1.0).is_err());
    }

    #[test]
    fn select_bound_matches_elementwise_scan() {
        let qhat = DMatrix::from_fn(4, 7, |i, j| ((i * 13 + j * 5) as f64 * 0.31).sin() * 3.0);
        let manual = qhat.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert_relative_eq!(select_bound(&qhat, 1.25).unwrap(), 1.25 * manual);
    }

    #[test]
    fn axis_values_are_log_spaced() {
        let axis = AxisSpec::new(0.0, 2.0, 3).unwrap();
        let vals = axis.values();
        assert_relative_eq!(vals[0], 1.0);
        assert_relative_eq!(vals[1], 10.0);
        assert_relative_eq!(vals[2], 100.0);
        assert!(AxisSpec::new(0.0, 2.0, 1).is_err());
    }

    #[test]
    fn grid_search_finds_planted_winner() {
        let grid = GridSpec {
            lambda1: AxisSpec::new(0.0, 2.0, 3).unwrap(),
            lambda2: AxisSpec::new(0.0, 2.0, 3).unwrap(),
        };
        // Bowl centered at (10, 10).
        let (winner, err, evals) = grid_search(&grid, |reg| {
            CandidateOutcome::Finite(
                (reg.lambda1.log10() - 1.0).powi(2) + (reg.lambda2.log10() - 1.0).powi(2),
            )
        })
        .unwrap();
        assert_relative_eq!(winner.lambda1, 10.0);
        assert_relative_eq!(winner.lambda2, 10.0);
        assert_relative_eq!(err, 0.0);
        assert_eq!(evals.len(), 9);
    }

    #[test]
    fn grid_search_all_disqualified_is_actionable() {
        let grid = GridSpec::default();
        let res = grid_search(&grid, |_| CandidateOutcome::BoundViolated);
        match res {
            Err(Error::AllCandidatesDisqualified) => {}
            other => panic!("expected disqualification error, got {other:?}"),
        }
    }

    #[test]
    fn grid_search_ties_break_toward_larger_lambdas() {
        let grid = GridSpec {
            lambda1: AxisSpec::new(0.0, 1.0, 2).unwrap(),
            lambda2: AxisSpec::new(0.0, 1.0, 2).unwrap(),
        };
        let (winner, _, _) = grid_search(&grid, |_| CandidateOutcome::Finite(1.0)).unwrap();
        assert_relative_eq!(winner.lambda1, 10.0);
        assert_relative_eq!(winner.lambda2, 10.0);
    }

    #[test]
    fn nelder_mead_converges_on_quadratic_bowl() {
        let target = (1.7, -0.4); // log10 coordinates
        let objective = |reg: &RegPair| {
            CandidateOutcome::Finite(
                (reg.lambda1.log10() - target.0).powi(2)
                    + 2.0 * (reg.lambda2.log10() - target.1).powi(2),
            )
        };
        let start = RegPair { lambda1: 10.0, lambda2: 1.0 };
        let settings = NelderMeadSettings {
            max_iters: 200,
            simplex_tol: 1e-6,
            value_tol: 1e-12,
            ..Default::default()
        };
        let (winner, err, _) = refine_nelder_mead(start, &settings, objective);
        assert!(err < 1e-6);
        assert!((winner.lambda1.log10() - target.0).abs() < 1e-3);
        assert!((winner.lambda2.log10() - target.1).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_never_regresses_from_optimum() {
        let objective = |reg: &RegPair| {
            CandidateOutcome::Finite(reg.lambda1.log10().powi(2) + reg.lambda2.log10().powi(2))
        };
        let start = RegPair { lambda1: 1.0, lambda2: 1.0 }; // exactly the minimum
        let (winner, err, _) =
            refine_nelder_mead(start, &NelderMeadSettings::default(), objective);
        assert!(err <= 0.0 + 1e-15);
        let _ = winner;
    }

    #[test]
    fn nelder_mead_escapes_infinite_plateau() {
        // Everything left of lambda1 = 1 is disqualified; minimum at 100.
        let objective = |reg: &RegPair| {
            if reg.lambda1 < 1.0 {
                CandidateOutcome::BoundViolated
            } else {
                CandidateOutcome::Finite((reg.lambda1.log10() - 2.0).powi(2))
            }
        };
        let start = RegPair { lambda1: 1.5, lambda2: 1.0 };
        let (winner, err, _) =
            refine_nelder_mead(start, &NelderMeadSettings::default(), objective);
        assert!(err.is_finite());
        assert!(err < 0.3, "final error {err}");
        assert!(winner.lambda1 >= 1.0);
    }

    #[test]
    fn train_error_disqualifies_unstable_models() {
        // Data from pure growth: at tiny lambda the fit reproduces growth and
        // violates the bound over the longer horizon.
        let grid = UniformTimeGrid::new(0.0, 0.05, 40).unwrap();
        let qhat = DMatrix::from_fn(1, 40, |_, j| 0.1 * (grid.time(j)).exp());
        let dmat = DataMatrix::build(&qhat, None).unwrap();
        let derivs = qhat.clone(); // d/dt e^t = e^t
        let cache = build_gram_cache(&dmat, &derivs).unwrap();
        let bound = select_bound(&qhat, 1.1).unwrap();
        let ctx = TrainErrorContext::new(
            &cache,
            &qhat,
            &InputSignal::None,
            &grid,
            8.0, // long horizon: growth must cross the bound
            bound,
            (1e-7, 1e-9),
        )
        .unwrap();
        let outcome = ctx.evaluate(&RegPair { lambda1: 1e-10, lambda2: 1e-10 });
        assert_eq!(outcome, CandidateOutcome::BoundViolated);
        assert!(train_error(&ctx, &RegPair { lambda1: 1e-10, lambda2: 1e-10 }).is_infinite());
    }

    #[test]
    fn huge_regularization_decays_to_frozen_state_error() {
        // With enormous lambda the solved operators are ~0, so the model
        // trajectory stays at qhat_0; the error must match that deviation.
        let grid = UniformTimeGrid::new(0.0, 0.1, 30).unwrap();
        let qhat = DMatrix::from_fn(2, 30, |i, j| {
            let t = grid.time(j);
            if i == 0 { (1.2 * t).sin() + 0.3 } else { 0.5 * (0.7 * t).cos() }
        });
        let dmat = DataMatrix::build(&qhat, None).unwrap();
        let derivs = fd4(&qhat, &grid).unwrap();
        let cache = build_gram_cache(&dmat, &derivs).unwrap();
        let ctx = TrainErrorContext::new(
            &cache,
            &qhat,
            &InputSignal::None,
            &grid,
            grid.t_end(),
            f64::INFINITY,
            (1e-8, 1e-10),
        )
        .unwrap();
        let err = train_error(&ctx, &RegPair { lambda1: 1e12, lambda2: 1e12 });
        assert!(err.is_finite());

        // Oracle: relative trapezoid-L2 norm of (qhat - frozen initial state).
        let q0 = qhat.column(0).clone_owned();
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..30 {
            let w = trapezoid_weight(j, 30);
            num += w * (qhat.column(j) - &q0).norm_squared();
            den += w * qhat.column(j).norm_squared();
        }
        let expected = (num / den).sqrt();
        assert_relative_eq!(err, expected, max_relative = 0.05);
    }

    #[test]
    fn recovery_data_scores_near_zero_at_tiny_reg() {
        // Stable linear dynamics; exact derivatives from the operator itself.
        let grid = UniformTimeGrid::new(0.0, 0.1, 60).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[-0.4, 0.8, -0.8, -0.4]);
        let ops = RomOperators::new(
            DVector::zeros(2),
            a.clone(),
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 0),
        )
        .unwrap();
        let q0 = DVector::from_vec(vec![1.0, 0.5]);
        let traj = integrate(
            &ops,
            &q0,
            &InputSignal::None,
            &grid.times(),
            (1e-12, 1e-14),
            None,
        )
        .unwrap();
        assert!(traj.status.is_completed());
        let qhat = traj.states;
        let derivs = {
            let mut d = DMatrix::zeros(2, 60);
            for j in 0..60 {
                d.set_column(j, &(&a * qhat.column(j)));
            }
            d
        };
        let dmat = DataMatrix::build(&qhat, None).unwrap();
        let cache = build_gram_cache(&dmat, &derivs).unwrap();
        let bound = select_bound(&qhat, 1.5).unwrap();
        let ctx = TrainErrorContext::new(
            &cache,
            &qhat,
            &InputSignal::None,
            &grid,
            grid.t_end(),
            bound,
            (1e-9, 1e-12),
        )
        .unwrap();
        let err = train_error(&ctx, &RegPair { lambda1: 1e-12, lambda2: 1e-12 });
        assert!(err < 1e-6, "training error {err}");
    }
}
