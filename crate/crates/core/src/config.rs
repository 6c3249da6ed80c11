//! Line-based `key = value` run configuration shared by all pipeline
//! commands. Unknown keys are rejected; every key has a documented default
//! except the data paths, which arrive as command-line flags.
//!
//! The variable layout is a comma list of `name:kind` entries
//! (kind `signed` or `nonnegative`). The transform is either `identity` or a
//! semicolon list of channels `target:kind = recipe(source[, divisor])` with
//! recipes `identity`, `reciprocal`, and `scaled_ratio`. `invert_via` pins
//! which channel reconstructs a native variable when several read it, as a
//! comma list of `source:target` pairs.

use crate::error::{Error, Result};
use crate::pod::PodOptions;
use crate::preprocess::{ChannelMap, Recipe, TransformSpec, VarKind, VariableLayout};
use crate::regsearch::{
    AxisSpec, ErrorNorm, GridSpec, NelderMeadSettings, RankRule, SearchConfig,
};
use crate::rom::InputSignal;

/// Which analytic input signal drives training and simulation. Sampled
/// signals come from an inputs file instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalKind {
    None,
    Sine,
    Sampled,
}

/// Parsed run configuration; see module docs for the format and the
/// `render` output for every key with its current value.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variables: Vec<(String, VarKind)>,
    pub cells: usize,
    /// None means identity channels over `variables`.
    pub transform_channels: Option<Vec<ChannelMap>>,
    pub invert_via: Vec<(String, String)>,

    pub r: usize,
    pub energy_threshold: f64,

    pub tau: f64,
    pub lambda1_min: f64,
    pub lambda1_max: f64,
    pub lambda1_count: usize,
    pub lambda2_min: f64,
    pub lambda2_max: f64,
    pub lambda2_count: usize,
    pub nm_max_iters: usize,
    pub nm_scale: f64,
    pub nm_simplex_tol: f64,
    pub nm_value_tol: f64,

    pub rel_tol: f64,
    pub abs_tol: f64,

    pub t0: f64,
    pub dt: f64,
    /// Training columns; 0 means all columns of the snapshot file.
    pub k: usize,
    /// Feasibility/simulation horizon; 0 means the end of the training grid.
    pub tf: f64,

    pub signal: SignalKind,
    pub signal_p_ref: f64,
    pub signal_amp: f64,
    pub signal_freq: f64,

    pub rsvd_oversampling: usize,
    pub rsvd_power_iters: usize,
    pub dense_svd_cutoff: usize,
    pub seed: u64,

    pub burgers_n: usize,
    pub burgers_viscosity: f64,
    pub burgers_length: f64,
    pub burgers_init_amp: f64,

    pub monitors: Vec<usize>,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variables: vec![("q".into(), VarKind::Signed)],
            cells: 0,
            transform_channels: None,
            invert_via: Vec::new(),
            r: 0,
            energy_threshold: 0.985,
            tau: 1.5,
            lambda1_min: 1.0,
            lambda1_max: 1e5,
            lambda1_count: 6,
            lambda2_min: 1.0,
            lambda2_max: 1e5,
            lambda2_count: 6,
            nm_max_iters: 100,
            nm_scale: 0.5,
            nm_simplex_tol: 1e-3,
            nm_value_tol: 1e-6,
            rel_tol: 1e-6,
            abs_tol: 1e-9,
            t0: 0.0,
            dt: 1e-3,
            k: 0,
            tf: 0.0,
            signal: SignalKind::None,
            signal_p_ref: 1e6,
            signal_amp: 0.1,
            signal_freq: 5000.0,
            rsvd_oversampling: 10,
            rsvd_power_iters: 2,
            dense_svd_cutoff: 512,
            seed: 0,
            burgers_n: 256,
            burgers_viscosity: 5e-3,
            burgers_length: 1.0,
            burgers_init_amp: 1.0,
            monitors: Vec::new(),
            out_dir: "out".into(),
        }
    }
}

fn parse_kind(s: &str, line: usize) -> Result<VarKind> {
    match s {
        "signed" => Ok(VarKind::Signed),
        "nonnegative" => Ok(VarKind::NonNegative),
        other => Err(Error::Config {
            line,
            reason: format!("unknown variable kind '{other}' (signed|nonnegative)"),
        }),
    }
}

fn parse_variables(value: &str, line: usize) -> Result<Vec<(String, VarKind)>> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, kind) = item.split_once(':').ok_or_else(|| Error::Config {
            line,
            reason: format!("variable '{item}' must be name:kind"),
        })?;
        out.push((name.trim().to_string(), parse_kind(kind.trim(), line)?));
    }
    if out.is_empty() {
        return Err(Error::Config {
            line,
            reason: "variables list is empty".into(),
        });
    }
    Ok(out)
}

fn parse_channels(value: &str, line: usize) -> Result<Vec<ChannelMap>> {
    let mut out = Vec::new();
    for item in value.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (lhs, rhs) = item.split_once('=').ok_or_else(|| Error::Config {
            line,
            reason: format!("channel '{item}' must be target:kind = recipe(...)"),
        })?;
        let (target, kind) = lhs.trim().split_once(':').ok_or_else(|| Error::Config {
            line,
            reason: format!("channel target '{lhs}' must be name:kind"),
        })?;
        let rhs = rhs.trim();
        let open = rhs.find('(').ok_or_else(|| Error::Config {
            line,
            reason: format!("recipe '{rhs}' is missing its argument list"),
        })?;
        if !rhs.ends_with(')') {
            return Err(Error::Config {
                line,
                reason: format!("recipe '{rhs}' is missing ')'"),
            });
        }
        let name = rhs[..open].trim();
        let args: Vec<&str> = rhs[open + 1..rhs.len() - 1]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let (source, recipe) = match (name, args.as_slice()) {
            ("identity", [src]) => (*src, Recipe::Identity),
            ("reciprocal", [src]) => (*src, Recipe::Reciprocal),
            ("scaled_ratio", [src, div]) => {
                let divisor: f64 = div.parse().map_err(|_| Error::Config {
                    line,
                    reason: format!("bad divisor '{div}'"),
                })?;
                (*src, Recipe::ScaledRatio { divisor })
            }
            _ => {
                return Err(Error::Config {
                    line,
                    reason: format!(
                        "unknown recipe '{name}' with {} argument(s); expected \
                         identity(src), reciprocal(src), or scaled_ratio(src, divisor)",
                        args.len()
                    ),
                })
            }
        };
        out.push(ChannelMap {
            target: target.trim().to_string(),
            kind: parse_kind(kind.trim(), line)?,
            source: source.to_string(),
            recipe,
        });
    }
    if out.is_empty() {
        return Err(Error::Config {
            line,
            reason: "transform channel list is empty".into(),
        });
    }
    Ok(out)
}

fn parse_pairs(value: &str, line: usize) -> Result<Vec<(String, String)>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            item.split_once(':')
                .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                .ok_or_else(|| Error::Config {
                    line,
                    reason: format!("pair '{item}' must be source:target"),
                })
        })
        .collect()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or_else(|| Error::Config {
                line,
                reason: format!("expected key = value, got '{stripped}'"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |what: &str| Error::Config {
                line,
                reason: format!("bad value '{value}' for {key}: {what}"),
            };
            macro_rules! num {
                ($ty:ty) => {
                    value.parse::<$ty>().map_err(|e| bad(&e.to_string()))?
                };
            }
            match key {
                "variables" => cfg.variables = parse_variables(value, line)?,
                "cells" => cfg.cells = num!(usize),
                "transform" => {
                    cfg.transform_channels = if value == "identity" {
                        None
                    } else {
                        Some(parse_channels(value, line)?)
                    }
                }
                "invert_via" => cfg.invert_via = parse_pairs(value, line)?,
                "r" => cfg.r = num!(usize),
                "energy_threshold" => cfg.energy_threshold = num!(f64),
                "tau" => cfg.tau = num!(f64),
                "lambda1_min" => cfg.lambda1_min = num!(f64),
                "lambda1_max" => cfg.lambda1_max = num!(f64),
                "lambda1_count" => cfg.lambda1_count = num!(usize),
                "lambda2_min" => cfg.lambda2_min = num!(f64),
                "lambda2_max" => cfg.lambda2_max = num!(f64),
                "lambda2_count" => cfg.lambda2_count = num!(usize),
                "nm_max_iters" => cfg.nm_max_iters = num!(usize),
                "nm_scale" => cfg.nm_scale = num!(f64),
                "nm_simplex_tol" => cfg.nm_simplex_tol = num!(f64),
                "nm_value_tol" => cfg.nm_value_tol = num!(f64),
                "rel_tol" => cfg.rel_tol = num!(f64),
                "abs_tol" => cfg.abs_tol = num!(f64),
                "t0" => cfg.t0 = num!(f64),
                "dt" => cfg.dt = num!(f64),
                "k" => cfg.k = num!(usize),
                "tf" => cfg.tf = num!(f64),
                "signal" => {
                    cfg.signal = match value {
                        "none" => SignalKind::None,
                        "sine" => SignalKind::Sine,
                        "sampled" => SignalKind::Sampled,
                        other => {
                            return Err(Error::Config {
                                line,
                                reason: format!("unknown signal '{other}' (none|sine|sampled)"),
                            })
                        }
                    }
                }
                "signal_p_ref" => cfg.signal_p_ref = num!(f64),
                "signal_amp" => cfg.signal_amp = num!(f64),
                "signal_freq" => cfg.signal_freq = num!(f64),
                "rsvd_oversampling" => cfg.rsvd_oversampling = num!(usize),
                "rsvd_power_iters" => cfg.rsvd_power_iters = num!(usize),
                "dense_svd_cutoff" => cfg.dense_svd_cutoff = num!(usize),
                "seed" => cfg.seed = num!(u64),
                "burgers_n" => cfg.burgers_n = num!(usize),
                "burgers_viscosity" => cfg.burgers_viscosity = num!(f64),
                "burgers_length" => cfg.burgers_length = num!(f64),
                "burgers_init_amp" => cfg.burgers_init_amp = num!(f64),
                "monitors" => {
                    cfg.monitors = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>().map_err(|e| bad(&e.to_string())))
                        .collect::<Result<_>>()?
                }
                "out_dir" => cfg.out_dir = value.to_string(),
                other => {
                    return Err(Error::Config {
                        line,
                        reason: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        Ok(cfg)
    }

    /// Variable layout for a native snapshot matrix with `nrows` rows.
    pub fn layout_for(&self, nrows: usize) -> Result<VariableLayout> {
        let cells = if self.cells > 0 {
            self.cells
        } else {
            if nrows == 0 || nrows % self.variables.len() != 0 {
                return Err(Error::shape(
                    "config layout",
                    format!("row count divisible by {}", self.variables.len()),
                    nrows,
                ));
            }
            nrows / self.variables.len()
        };
        VariableLayout::new(self.variables.clone(), cells)
    }

    pub fn transform_spec(&self) -> Result<TransformSpec> {
        let sources: Vec<String> = self.variables.iter().map(|(n, _)| n.clone()).collect();
        match &self.transform_channels {
            None => {
                let layout = VariableLayout::new(self.variables.clone(), 1)?;
                Ok(TransformSpec::identity(&layout))
            }
            Some(channels) => {
                TransformSpec::new(sources, channels.clone(), self.invert_via.clone())
            }
        }
    }

    pub fn rank_rule(&self) -> RankRule {
        if self.r > 0 {
            RankRule::Fixed(self.r)
        } else {
            RankRule::EnergyThreshold(self.energy_threshold)
        }
    }

    pub fn search_config(&self) -> Result<SearchConfig> {
        let axis = |min: f64, max: f64, count: usize| -> Result<AxisSpec> {
            if !(min > 0.0) || !(max > 0.0) {
                return Err(Error::InvalidDimension(format!(
                    "lambda grid bounds must be positive, got [{min}, {max}]"
                )));
            }
            AxisSpec::new(min.log10(), max.log10(), count)
        };
        Ok(SearchConfig {
            tau: self.tau,
            grid: GridSpec {
                lambda1: axis(self.lambda1_min, self.lambda1_max, self.lambda1_count)?,
                lambda2: axis(self.lambda2_min, self.lambda2_max, self.lambda2_count)?,
            },
            nm: NelderMeadSettings {
                initial_scale: self.nm_scale,
                max_iters: self.nm_max_iters,
                simplex_tol: self.nm_simplex_tol,
                value_tol: self.nm_value_tol,
            },
            error_norm: ErrorNorm::RelativeL2,
            integration_tol: (self.rel_tol, self.abs_tol),
        })
    }

    pub fn pod_options(&self) -> PodOptions {
        PodOptions {
            oversampling: self.rsvd_oversampling,
            power_iters: self.rsvd_power_iters,
            seed: self.seed,
            dense_cutoff: self.dense_svd_cutoff,
        }
    }

    /// The analytic signal described by the config, if any. Sampled signals
    /// are assembled by the caller from an inputs file.
    pub fn analytic_signal(&self) -> Result<Option<InputSignal>> {
        match self.signal {
            SignalKind::None => Ok(Some(InputSignal::None)),
            SignalKind::Sine => Ok(Some(crate::rom::pressure_forcing(
                self.signal_p_ref,
                self.signal_amp,
                self.signal_freq,
            )?)),
            SignalKind::Sampled => Ok(None),
        }
    }

    /// Serialize every key at its current value; `parse(render())` is the
    /// identity.
    pub fn render(&self) -> String {
        let variables = self
            .variables
            .iter()
            .map(|(n, k)| format!("{n}:{}", kind_str(*k)))
            .collect::<Vec<_>>()
            .join(", ");
        let transform = match &self.transform_channels {
            None => "identity".to_string(),
            Some(channels) => channels
                .iter()
                .map(|c| {
                    let recipe = match c.recipe {
                        Recipe::Identity => format!("identity({})", c.source),
                        Recipe::Reciprocal => format!("reciprocal({})", c.source),
                        Recipe::ScaledRatio { divisor } => {
                            format!("scaled_ratio({}, {divisor})", c.source)
                        }
                    };
                    format!("{}:{} = {recipe}", c.target, kind_str(c.kind))
                })
                .collect::<Vec<_>>()
                .join("; "),
        };
        let invert_via = self
            .invert_via
            .iter()
            .map(|(s, t)| format!("{s}:{t}"))
            .collect::<Vec<_>>()
            .join(", ");
        let monitors = self
            .monitors
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(", ");
        format!(
            "variables = {variables}\n\
             cells = {}\n\
             transform = {transform}\n\
             invert_via = {invert_via}\n\
             r = {}\n\
             energy_threshold = {}\n\
             tau = {}\n\
             lambda1_min = {}\n\
             lambda1_max = {}\n\
             lambda1_count = {}\n\
             lambda2_min = {}\n\
             lambda2_max = {}\n\
             lambda2_count = {}\n\
             nm_max_iters = {}\n\
             nm_scale = {}\n\
             nm_simplex_tol = {}\n\
             nm_value_tol = {}\n\
             rel_tol = {}\n\
             abs_tol = {}\n\
             t0 = {}\n\
             dt = {}\n\
             k = {}\n\
             tf = {}\n\
             signal = {}\n\
             signal_p_ref = {}\n\
             signal_amp = {}\n\
             signal_freq = {}\n\
             rsvd_oversampling = {}\n\
             rsvd_power_iters = {}\n\
             dense_svd_cutoff = {}\n\
             seed = {}\n\
             burgers_n = {}\n\
             burgers_viscosity = {}\n\
             burgers_length = {}\n\
             burgers_init_amp = {}\n\
             monitors = {monitors}\n\
             out_dir = {}\n",
            self.cells,
            self.r,
            self.energy_threshold,
            self.tau,
            self.lambda1_min,
            self.lambda1_max,
            self.lambda1_count,
            self.lambda2_min,
            self.lambda2_max,
            self.lambda2_count,
            self.nm_max_iters,
            self.nm_scale,
            self.nm_simplex_tol,
            self.nm_value_tol,
            self.rel_tol,
            self.abs_tol,
            self.t0,
            self.dt,
            self.k,
            self.tf,
            match self.signal {
                SignalKind::None => "none",
                SignalKind::Sine => "sine",
                SignalKind::Sampled => "sampled",
            },
            self.signal_p_ref,
            self.signal_amp,
            self.signal_freq,
            self.rsvd_oversampling,
            self.rsvd_power_iters,
            self.dense_svd_cutoff,
            self.seed,
            self.burgers_n,
            self.burgers_viscosity,
            self.burgers_length,
            self.burgers_init_amp,
            self.out_dir,
        )
    }
}

fn kind_str(kind: VarKind) -> &'static str {
    match kind {
        VarKind::Signed => "signed",
        VarKind::NonNegative => "nonnegative",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_text() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        match RunConfig::parse("tau = 2.0\nbogus = 1\n") {
            Err(Error::Config { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("bogus"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let cfg = RunConfig::parse("# header\n\n tau = 2.5 # margin\n").unwrap();
        assert_eq!(cfg.tau, 2.5);
    }

    #[test]
    fn transform_dsl_round_trips() {
        let text = "variables = p:signed, rho:nonnegative\n\
                    transform = p:signed = identity(p); xi:signed = reciprocal(rho); \
                    c1:nonnegative = scaled_ratio(rho, 16.04)\n\
                    invert_via = rho:xi\n";
        let cfg = RunConfig::parse(text).unwrap();
        let spec = cfg.transform_spec().unwrap();
        assert_eq!(spec.channels().len(), 3);
        assert_eq!(spec.invert_via(), &[("rho".to_string(), "xi".to_string())]);

        let rendered = cfg.render();
        let reparsed = RunConfig::parse(&rendered).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn render_parse_is_identity_on_defaults() {
        let cfg = RunConfig::default();
        let reparsed = RunConfig::parse(&cfg.render()).unwrap();
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn rank_rule_prefers_fixed_r() {
        let cfg = RunConfig::parse("r = 7\n").unwrap();
        assert_eq!(cfg.rank_rule(), RankRule::Fixed(7));
        let cfg = RunConfig::parse("energy_threshold = 0.99\n").unwrap();
        assert_eq!(cfg.rank_rule(), RankRule::EnergyThreshold(0.99));
    }

    #[test]
    fn bad_values_name_the_key() {
        match RunConfig::parse("dt = fast\n") {
            Err(Error::Config { reason, .. }) => assert!(reason.contains("dt")),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn search_config_converts_lambda_ranges_to_log_axes() {
        let cfg = RunConfig::parse("lambda1_min = 0.01\nlambda1_max = 100\nlambda1_count = 5\n")
            .unwrap();
        let sc = cfg.search_config().unwrap();
        assert_eq!(sc.grid.lambda1.count, 5);
        assert!((sc.grid.lambda1.log10_min - (-2.0)).abs() < 1e-12);
        assert!((sc.grid.lambda1.log10_max - 2.0).abs() < 1e-12);
    }
}
