//! The pipeline subcommands. Each one reads persisted artifacts, does its
//! stage, and writes artifacts, so any stage can be rerun in isolation.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use opinf_core::io::{read_matrix_auto, write_matrix};
use opinf_core::oracle::{make_burgers_fom, prediction_error_series, projection_error_series};
use opinf_core::pod::{pod, singular_spectrum};
use opinf_core::preprocess::{apply_scaling, apply_transform, fit_scaling, invert_scaling, invert_transform};
use opinf_core::quadform::data_dim;
use opinf_core::regsearch::{reg_opinf, DerivativeSource, PipelineInputs, PipelineOptions, RankRule};
use opinf_core::rom::integrate;
use opinf_core::{
    BurgersBoundary, Error, InputSignal, Result, RunConfig, SignalKind, UniformTimeGrid,
};

use crate::artifacts::{self, TrainMetadata};

fn build_sampled_signal(cfg: &RunConfig, path: &Path) -> Result<InputSignal> {
    let values = read_matrix_auto(path)?;
    let times = (0..values.ncols())
        .map(|j| cfg.t0 + cfg.dt * j as f64)
        .collect();
    InputSignal::sampled(times, values)
}

/// The input signal for a command: an explicit samples file wins, otherwise
/// the analytic signal named by the config.
fn resolve_signal(cfg: &RunConfig, inputs: Option<&Path>) -> Result<InputSignal> {
    match inputs {
        Some(path) => build_sampled_signal(cfg, path),
        None => cfg.analytic_signal()?.ok_or_else(|| Error::Config {
            line: 0,
            reason: "signal = sampled requires --inputs <file>".into(),
        }),
    }
}

pub fn preprocess(cfg: &RunConfig, snapshots: &Path, out: &Path) -> Result<()> {
    let z = read_matrix_auto(snapshots)?;
    let spec = cfg.transform_spec()?;
    let cells = spec.source_cells(z.nrows(), "preprocess")?;
    let q = apply_transform(&z, &spec)?;
    let layout = spec.target_layout(cells)?;
    let scaling = fit_scaling(&q, &layout)?;
    let qs = apply_scaling(&q, &scaling)?;
    artifacts::ensure_dir(out)?;
    write_matrix(&out.join("learning.oimx"), &qs)?;
    artifacts::write_scaling(out, &scaling)?;
    log::info!(
        "preprocessed {} x {} native rows into {} learning rows (cells = {cells})",
        z.nrows(),
        z.ncols(),
        qs.nrows()
    );
    Ok(())
}

pub fn pod_command(cfg: &RunConfig, snapshots: &Path, out: &Path) -> Result<()> {
    let q = read_matrix_auto(snapshots)?;
    let opts = cfg.pod_options();
    let r = match cfg.rank_rule() {
        RankRule::Fixed(r) => r,
        RankRule::EnergyThreshold(threshold) => {
            let hint = q.nrows().min(q.ncols()).min(256);
            singular_spectrum(&q, hint, &opts)?.select_rank(threshold)?
        }
    };
    let basis = pod(&q, r, &opts)?;
    artifacts::ensure_dir(out)?;
    write_matrix(&out.join(artifacts::BASIS_FILE), basis.matrix())?;
    artifacts::write_vector(
        &out.join(artifacts::SINGULAR_VALUES_FILE),
        &DVector::from_column_slice(basis.singular_values()),
    )?;
    log::info!("wrote rank-{r} basis for {} x {} snapshots", q.nrows(), q.ncols());
    Ok(())
}

pub fn rank_report(cfg: &RunConfig, snapshots: &Path, thresholds: &[f64], out: &Path) -> Result<String> {
    let z = read_matrix_auto(snapshots)?;
    let spec = cfg.transform_spec()?;
    let cells = spec.source_cells(z.nrows(), "rank-report")?;
    let q = apply_transform(&z, &spec)?;
    let layout = spec.target_layout(cells)?;
    let scaling = fit_scaling(&q, &layout)?;
    let qs = apply_scaling(&q, &scaling)?;
    let m = match cfg.signal {
        SignalKind::None => 0,
        SignalKind::Sine => 1,
        SignalKind::Sampled => {
            return Err(Error::Config {
                line: 0,
                reason: "rank-report needs an analytic signal to know m; set signal = none|sine"
                    .into(),
            })
        }
    };
    let hint = qs.nrows().min(qs.ncols()).min(256);
    let spectrum = singular_spectrum(&qs, hint, &cfg.pod_options())?;
    let mut table = String::from("threshold  r  d\n");
    for &threshold in thresholds {
        let r = spectrum.select_rank(threshold)?;
        let d = data_dim(r, m)?;
        table.push_str(&format!("{threshold}  {r}  {d}\n"));
    }
    artifacts::ensure_dir(out)?;
    std::fs::write(out.join("rank_report.txt"), &table).map_err(|e| Error::Io {
        path: out.join("rank_report.txt").display().to_string(),
        source: e,
    })?;
    Ok(table)
}

pub fn train(
    cfg: &RunConfig,
    snapshots: &Path,
    inputs: Option<&Path>,
    derivatives: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let z_full = read_matrix_auto(snapshots)?;
    let k = if cfg.k > 0 { cfg.k } else { z_full.ncols() };
    if k > z_full.ncols() {
        return Err(Error::ShapeMismatch {
            context: "train (k exceeds snapshot columns)",
            expected: z_full.ncols().to_string(),
            actual: k.to_string(),
        });
    }
    let z = z_full.columns(0, k).clone_owned();
    let grid = UniformTimeGrid::new(cfg.t0, cfg.dt, k)?;
    let tf = if cfg.tf > 0.0 { cfg.tf } else { grid.t_end() };
    let signal = resolve_signal(cfg, inputs)?;
    let derivatives = match derivatives {
        Some(path) => {
            let dz_full = read_matrix_auto(path)?;
            if dz_full.ncols() < k || dz_full.nrows() != z.nrows() {
                return Err(Error::ShapeMismatch {
                    context: "train (derivative snapshots)",
                    expected: format!("{} x >= {k}", z.nrows()),
                    actual: format!("{} x {}", dz_full.nrows(), dz_full.ncols()),
                });
            }
            DerivativeSource::NativeProvided(dz_full.columns(0, k).clone_owned())
        }
        None => DerivativeSource::FiniteDifference,
    };

    let opts = PipelineOptions {
        transform: cfg.transform_spec()?,
        rank: cfg.rank_rule(),
        search: cfg.search_config()?,
        pod: cfg.pod_options(),
        derivatives,
    };
    let pipe_inputs = PipelineInputs {
        snapshots: &z,
        signal: &signal,
        grid,
        tf,
    };
    let result = reg_opinf(&pipe_inputs, &opts)?;

    artifacts::ensure_dir(out)?;
    write_matrix(&out.join(artifacts::BASIS_FILE), result.basis.matrix())?;
    artifacts::write_vector(
        &out.join(artifacts::SINGULAR_VALUES_FILE),
        &DVector::from_column_slice(result.basis.singular_values()),
    )?;
    artifacts::write_scaling(out, &result.scaling)?;
    artifacts::write_operators(out, &result.operators)?;
    artifacts::write_vector(
        &out.join(artifacts::QHAT0_FILE),
        &result.qhat.column(0).clone_owned(),
    )?;
    let meta = TrainMetadata {
        r: result.operators.r(),
        m: result.operators.m(),
        lambda1: result.report.winner.lambda1,
        lambda2: result.report.winner.lambda2,
        bound: result.bound,
        training_error: result.report.winner_error,
        t0: cfg.t0,
        dt: cfg.dt,
        k,
        tf,
        cells: result.scaling.cells(),
        seed: cfg.seed,
    };
    artifacts::write_metadata(out, &meta)?;
    let report_text = format!(
        "{}\n# config used\n{}",
        result.report.render(),
        cfg.render()
    );
    artifacts::write_report(out, &report_text)?;
    log::info!(
        "trained r = {}, winner ({:.4e}, {:.4e}), training error {:.6e}",
        meta.r,
        meta.lambda1,
        meta.lambda2,
        meta.training_error
    );
    Ok(())
}

pub fn simulate(cfg: &RunConfig, operators_dir: &Path, inputs: Option<&Path>, out: &Path) -> Result<()> {
    let meta = artifacts::read_metadata(operators_dir)?;
    let ops = artifacts::read_operators(operators_dir)?;
    let qhat0 = read_matrix_auto(&operators_dir.join(artifacts::QHAT0_FILE))?
        .column(0)
        .clone_owned();
    if ops.r() != qhat0.len() || ops.r() != meta.r {
        return Err(Error::ShapeMismatch {
            context: "simulate (operator dimensions)",
            expected: meta.r.to_string(),
            actual: ops.r().to_string(),
        });
    }
    let signal = resolve_signal(cfg, inputs)?;
    if signal.dim() != ops.m() {
        return Err(Error::ShapeMismatch {
            context: "simulate (input dimension)",
            expected: ops.m().to_string(),
            actual: signal.dim().to_string(),
        });
    }
    let tf = if cfg.tf > 0.0 { cfg.tf } else { meta.tf };
    let steps = ((tf - cfg.t0) / cfg.dt).round() as usize;
    let grid = UniformTimeGrid::new(cfg.t0, cfg.dt, steps + 1)?;
    let traj = integrate(
        &ops,
        &qhat0,
        &signal,
        &grid.times(),
        (cfg.rel_tol, cfg.abs_tol),
        Some(meta.bound),
    )?;
    artifacts::ensure_dir(out)?;
    write_matrix(&out.join(artifacts::TRAJECTORY_FILE), &traj.states)?;
    artifacts::write_vector(
        &out.join(artifacts::TRAJECTORY_TIMES_FILE),
        &DVector::from_vec(traj.times.clone()),
    )?;
    artifacts::write_status(out, &traj.status)?;
    log::info!(
        "simulated {} output points over [{}, {tf}], status {:?}",
        traj.times.len(),
        cfg.t0,
        traj.status
    );
    Ok(())
}

pub fn evaluate(
    cfg: &RunConfig,
    truth: &Path,
    trajectory: &Path,
    basis_dir: &Path,
    out: &Path,
) -> Result<()> {
    let z = read_matrix_auto(truth)?;
    let states = read_matrix_auto(trajectory)?;
    let times_path = trajectory
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(artifacts::TRAJECTORY_TIMES_FILE);
    let times = read_matrix_auto(&times_path)?;
    let meta = artifacts::read_metadata(basis_dir)?;
    let v = read_matrix_auto(&basis_dir.join(artifacts::BASIS_FILE))?;
    let scaling = artifacts::read_scaling(basis_dir, meta.cells)?;
    let spec = cfg.transform_spec()?;

    if states.nrows() != v.ncols() {
        return Err(Error::ShapeMismatch {
            context: "evaluate (basis vs trajectory dimensions)",
            expected: v.ncols().to_string(),
            actual: states.nrows().to_string(),
        });
    }
    if z.ncols() != states.ncols() {
        return Err(Error::ShapeMismatch {
            context: "evaluate (truth vs trajectory columns)",
            expected: states.ncols().to_string(),
            actual: z.ncols().to_string(),
        });
    }

    artifacts::ensure_dir(out)?;
    let write_series = |name: &str, series: &[f64]| -> Result<()> {
        let mut text = String::new();
        for (j, value) in series.iter().enumerate() {
            text.push_str(&format!("{} {}\n", times[(j, 0)], value));
        }
        std::fs::write(out.join(name), text).map_err(|e| Error::Io {
            path: out.join(name).display().to_string(),
            source: e,
        })
    };
    for (name, _) in cfg.variables.iter() {
        let proj = projection_error_series(&z, &spec, &scaling, &v, name)?;
        let pred = prediction_error_series(&z, &states, &spec, &scaling, &v, name)?;
        write_series(&format!("projerr_{name}.txt"), &proj)?;
        write_series(&format!("prederr_{name}.txt"), &pred)?;
    }

    if !cfg.monitors.is_empty() {
        // Native-space reconstructions for point monitors.
        let qs = apply_scaling(&apply_transform(&z, &spec)?, &scaling)?;
        let proj_native = invert_transform(&invert_scaling(&(&v * v.tr_mul(&qs)), &scaling)?, &spec)?;
        let pred_native = invert_transform(&invert_scaling(&(&v * &states), &scaling)?, &spec)?;
        for &idx in &cfg.monitors {
            if idx >= z.nrows() {
                return Err(Error::InvalidDimension(format!(
                    "monitor index {idx} outside {} native rows",
                    z.nrows()
                )));
            }
            let mut text = String::from("# time truth projection prediction\n");
            for j in 0..z.ncols() {
                text.push_str(&format!(
                    "{} {} {} {}\n",
                    times[(j, 0)],
                    z[(idx, j)],
                    proj_native[(idx, j)],
                    pred_native[(idx, j)]
                ));
            }
            std::fs::write(out.join(format!("monitor_{idx}.txt")), text).map_err(|e| Error::Io {
                path: out.join(format!("monitor_{idx}.txt")).display().to_string(),
                source: e,
            })?;
        }
    }
    log::info!("wrote error tables for {} variables", cfg.variables.len());
    Ok(())
}

pub fn make_synthetic(cfg: &RunConfig, out: &Path) -> Result<()> {
    if cfg.k == 0 {
        return Err(Error::Config {
            line: 0,
            reason: "make-synthetic needs k > 0 (number of snapshot times)".into(),
        });
    }
    let signal = cfg.analytic_signal()?.ok_or_else(|| Error::Config {
        line: 0,
        reason: "make-synthetic needs an analytic signal (none|sine)".into(),
    })?;
    let boundary = if signal.dim() == 0 {
        BurgersBoundary::Periodic
    } else {
        BurgersBoundary::DirichletInput
    };
    let fom = make_burgers_fom(cfg.burgers_n, cfg.burgers_viscosity, cfg.burgers_length, boundary)?;
    let n = cfg.burgers_n;
    let length = cfg.burgers_length;
    let q0 = match boundary {
        BurgersBoundary::Periodic => DVector::from_fn(n, |i, _| {
            let x = i as f64 * length / n as f64;
            let w = std::f64::consts::TAU * x / length;
            cfg.burgers_init_amp * (w.sin() + 0.3 * (2.0 * w).sin())
        }),
        BurgersBoundary::DirichletInput => DVector::from_fn(n, |i, _| {
            let x = (i + 1) as f64 * length / (n + 1) as f64;
            let w = std::f64::consts::PI * x / length;
            cfg.burgers_init_amp * (w.sin() + 0.3 * (2.0 * w).sin())
        }),
    };
    let grid = UniformTimeGrid::new(cfg.t0, cfg.dt, cfg.k)?;
    let times = grid.times();
    let z = fom.integrate(&q0, &signal, &times, (cfg.rel_tol, cfg.abs_tol))?;
    let u = signal.sample(&times);
    let mut dz = DMatrix::zeros(n, cfg.k);
    for j in 0..cfg.k {
        let q = z.column(j).clone_owned();
        dz.set_column(j, &fom.rhs(&q, &u.column(j).clone_owned()));
    }
    artifacts::ensure_dir(out)?;
    write_matrix(&out.join("snapshots.oimx"), &z)?;
    write_matrix(&out.join("derivatives.oimx"), &dz)?;
    if signal.dim() > 0 {
        write_matrix(&out.join("inputs.oimx"), &u)?;
    }
    // Persist the generating operators: dense c, A, B, and the sparse
    // quadratic term as one (row, i, j, coeff) record per line.
    write_matrix(&out.join("fom_c.oimx"), &DMatrix::from_column_slice(n, 1, fom.c.as_slice()))?;
    write_matrix(&out.join("fom_a.oimx"), &fom.a)?;
    write_matrix(&out.join("fom_b.oimx"), &fom.b)?;
    let entries = fom.h.entries();
    let h_table = DMatrix::from_fn(entries.len(), 4, |e, col| {
        let (row, i, j, coeff) = entries[e];
        match col {
            0 => row as f64,
            1 => i as f64,
            2 => j as f64,
            _ => coeff,
        }
    });
    write_matrix(&out.join("fom_h_entries.oimx"), &h_table)?;
    std::fs::write(out.join("synthetic_config.txt"), cfg.render()).map_err(|e| Error::Io {
        path: out.join("synthetic_config.txt").display().to_string(),
        source: e,
    })?;
    log::info!(
        "wrote {n} x {} synthetic snapshots (boundary {:?})",
        cfg.k,
        boundary
    );
    Ok(())
}
