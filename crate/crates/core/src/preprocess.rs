//! Variable transforms and per-variable scaling applied to snapshot matrices
//! before basis computation.
//!
//! A snapshot matrix stacks one block of `cells` rows per state variable, one
//! column per time instant. The transform maps native variables to learning
//! variables through invertible per-channel recipes (identity, reciprocal,
//! constant-divisor ratio); scaling divides each variable block by a single
//! positive factor fit from training data. Neither step shifts values, so
//! entries that are exactly zero stay exactly zero in both directions.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Whether a variable admits negative values. Nonnegative variables are
/// scaled by their maximum into [0, 1]; signed ones by their maximum
/// magnitude into [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Signed,
    NonNegative,
}

/// Ordered stacked-variable description of a snapshot matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    variables: Vec<(String, VarKind)>,
    cells: usize,
}

impl VariableLayout {
    pub fn new(variables: Vec<(String, VarKind)>, cells: usize) -> Result<Self> {
        if variables.is_empty() || cells == 0 {
            return Err(Error::InvalidDimension(
                "layout needs at least one variable and one cell".into(),
            ));
        }
        Ok(VariableLayout { variables, cells })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn variables(&self) -> &[(String, VarKind)] {
        &self.variables
    }

    pub fn n_rows(&self) -> usize {
        self.cells * self.variables.len()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::UnknownVariable(name.into()))
    }

    /// Row range of the block holding variable `index`.
    pub fn block(&self, index: usize) -> std::ops::Range<usize> {
        index * self.cells..(index + 1) * self.cells
    }

    pub(crate) fn check_rows(&self, matrix: &DMatrix<f64>, context: &'static str) -> Result<()> {
        if matrix.nrows() != self.n_rows() {
            return Err(Error::shape(context, self.n_rows(), matrix.nrows()));
        }
        Ok(())
    }
}

/// Per-channel recipe mapping one source variable to one learning variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Recipe {
    Identity,
    /// 1/x; the source must be strictly positive (e.g. specific volume from
    /// density).
    Reciprocal,
    /// x / divisor for a fixed positive constant (e.g. molar concentration
    /// from a partial density and a molar mass).
    ScaledRatio { divisor: f64 },
}

impl Recipe {
    fn forward(&self, value: f64) -> f64 {
        match self {
            Recipe::Identity => value,
            Recipe::Reciprocal => 1.0 / value,
            Recipe::ScaledRatio { divisor } => value / divisor,
        }
    }

    fn inverse(&self, value: f64) -> f64 {
        match self {
            Recipe::Identity => value,
            Recipe::Reciprocal => 1.0 / value,
            Recipe::ScaledRatio { divisor } => value * divisor,
        }
    }

    /// d(forward)/d(source), used to push solver-provided time derivatives
    /// through the transform.
    fn derivative(&self, source_value: f64) -> f64 {
        match self {
            Recipe::Identity => 1.0,
            Recipe::Reciprocal => -1.0 / (source_value * source_value),
            Recipe::ScaledRatio { divisor } => 1.0 / divisor,
        }
    }
}

/// One learning-variable channel: its name, sign kind, source variable, and
/// recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMap {
    pub target: String,
    pub kind: VarKind,
    pub source: String,
    pub recipe: Recipe,
}

/// The full native-to-learning map. Channels may read the same source more
/// than once (redundant learning variables are allowed by design), so the
/// inverse declares which channel reconstructs each native variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformSpec {
    sources: Vec<String>,
    channels: Vec<ChannelMap>,
    /// Overrides of the source -> channel choice used on inversion; by
    /// default the first channel reading a source wins.
    invert_via: Vec<(String, String)>,
}

impl TransformSpec {
    pub fn new(
        sources: Vec<String>,
        channels: Vec<ChannelMap>,
        invert_via: Vec<(String, String)>,
    ) -> Result<Self> {
        let spec = TransformSpec {
            sources,
            channels,
            invert_via,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Identity transform: every variable of `layout` passes through
    /// unchanged.
    pub fn identity(layout: &VariableLayout) -> Self {
        let sources = layout.variables().iter().map(|(n, _)| n.clone()).collect();
        let channels = layout
            .variables()
            .iter()
            .map(|(n, k)| ChannelMap {
                target: n.clone(),
                kind: *k,
                source: n.clone(),
                recipe: Recipe::Identity,
            })
            .collect();
        TransformSpec {
            sources,
            channels,
            invert_via: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.sources.is_empty() || self.channels.is_empty() {
            return Err(Error::InvalidDimension(
                "transform needs at least one source and one channel".into(),
            ));
        }
        for ch in &self.channels {
            if !self.sources.iter().any(|s| s == &ch.source) {
                return Err(Error::UnknownVariable(ch.source.clone()));
            }
            if let Recipe::ScaledRatio { divisor } = ch.recipe {
                if divisor == 0.0 || !divisor.is_finite() {
                    return Err(Error::InvalidDimension(format!(
                        "channel '{}' has invalid divisor {divisor}",
                        ch.target
                    )));
                }
            }
        }
        for (source, target) in &self.invert_via {
            let ch = self
                .channels
                .iter()
                .find(|c| &c.target == target)
                .ok_or_else(|| Error::UnknownVariable(target.clone()))?;
            if &ch.source != source {
                return Err(Error::InvalidDimension(format!(
                    "inverse route {source} <- {target} does not match channel source '{}'",
                    ch.source
                )));
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn channels(&self) -> &[ChannelMap] {
        &self.channels
    }

    pub fn invert_via(&self) -> &[(String, String)] {
        &self.invert_via
    }

    /// True when every channel is an identity pass-through.
    pub fn is_identity(&self) -> bool {
        self.channels.iter().all(|c| c.recipe == Recipe::Identity)
    }

    /// Layout of the learning variables produced by [`apply_transform`].
    pub fn target_layout(&self, cells: usize) -> Result<VariableLayout> {
        VariableLayout::new(
            self.channels
                .iter()
                .map(|c| (c.target.clone(), c.kind))
                .collect(),
            cells,
        )
    }

    /// Layout-compatible cell count for a conforming native matrix.
    pub fn source_cells(&self, nrows: usize, context: &'static str) -> Result<usize> {
        if nrows == 0 || nrows % self.sources.len() != 0 {
            return Err(Error::shape(
                context,
                format!("row count divisible by {}", self.sources.len()),
                nrows,
            ));
        }
        Ok(nrows / self.sources.len())
    }

    fn source_index(&self, name: &str) -> usize {
        self.sources.iter().position(|s| s == name).expect("validated source")
    }

    /// The channel used to reconstruct a given source variable.
    fn inversion_channel(&self, source: &str) -> Result<&ChannelMap> {
        if let Some((_, target)) = self.invert_via.iter().find(|(s, _)| s == source) {
            return Ok(self
                .channels
                .iter()
                .find(|c| &c.target == target)
                .expect("validated inverse route"));
        }
        self.channels
            .iter()
            .find(|c| c.source == source)
            .ok_or_else(|| {
                Error::InvalidDimension(format!(
                    "no channel reads source variable '{source}'; cannot invert"
                ))
            })
    }
}

/// Map native snapshots to learning variables, columnwise.
pub fn apply_transform(z: &DMatrix<f64>, spec: &TransformSpec) -> Result<DMatrix<f64>> {
    let cells = spec.source_cells(z.nrows(), "apply_transform")?;
    let k = z.ncols();
    let mut out = DMatrix::zeros(spec.channels.len() * cells, k);
    for (ci, ch) in spec.channels.iter().enumerate() {
        let src = spec.source_index(&ch.source);
        for j in 0..k {
            for cell in 0..cells {
                let value = z[(src * cells + cell, j)];
                if ch.recipe == Recipe::Reciprocal && value <= 0.0 {
                    return Err(Error::Domain {
                        variable: ch.source.clone(),
                        column: j,
                        reason: format!("reciprocal of non-positive value {value}"),
                    });
                }
                out[(ci * cells + cell, j)] = ch.recipe.forward(value);
            }
        }
    }
    Ok(out)
}

/// Reconstruct native snapshots from learning variables. Redundant channels
/// are resolved through the spec's declared (or default first-match)
/// inversion routes.
pub fn invert_transform(q: &DMatrix<f64>, spec: &TransformSpec) -> Result<DMatrix<f64>> {
    let nrows = q.nrows();
    if nrows == 0 || nrows % spec.channels.len() != 0 {
        return Err(Error::shape(
            "invert_transform",
            format!("row count divisible by {}", spec.channels.len()),
            nrows,
        ));
    }
    let cells = nrows / spec.channels.len();
    let k = q.ncols();
    let mut out = DMatrix::zeros(spec.sources.len() * cells, k);
    for (si, source) in spec.sources.iter().enumerate() {
        let ch = spec.inversion_channel(source)?;
        let ci = spec
            .channels
            .iter()
            .position(|c| c.target == ch.target)
            .expect("channel exists");
        for j in 0..k {
            for cell in 0..cells {
                let value = q[(ci * cells + cell, j)];
                if ch.recipe == Recipe::Reciprocal && value == 0.0 {
                    return Err(Error::Domain {
                        variable: ch.target.clone(),
                        column: j,
                        reason: "zero value fed to reciprocal inverse".into(),
                    });
                }
                out[(si * cells + cell, j)] = ch.recipe.inverse(value);
            }
        }
    }
    Ok(out)
}

/// Push native time derivatives through the transform by the chain rule:
/// the learning-variable derivative of channel `c` at time `j` is
/// `c'(z) * dz/dt` evaluated entrywise. Needed when the solver provides
/// derivative snapshots directly instead of finite-differencing.
pub fn apply_transform_derivative(
    z: &DMatrix<f64>,
    dz: &DMatrix<f64>,
    spec: &TransformSpec,
) -> Result<DMatrix<f64>> {
    if z.shape() != dz.shape() {
        return Err(Error::shape(
            "apply_transform_derivative",
            format!("{:?}", z.shape()),
            format!("{:?}", dz.shape()),
        ));
    }
    let cells = spec.source_cells(z.nrows(), "apply_transform_derivative")?;
    let k = z.ncols();
    let mut out = DMatrix::zeros(spec.channels.len() * cells, k);
    for (ci, ch) in spec.channels.iter().enumerate() {
        let src = spec.source_index(&ch.source);
        for j in 0..k {
            for cell in 0..cells {
                let value = z[(src * cells + cell, j)];
                if ch.recipe == Recipe::Reciprocal && value <= 0.0 {
                    return Err(Error::Domain {
                        variable: ch.source.clone(),
                        column: j,
                        reason: format!("reciprocal derivative of non-positive value {value}"),
                    });
                }
                out[(ci * cells + cell, j)] =
                    ch.recipe.derivative(value) * dz[(src * cells + cell, j)];
            }
        }
    }
    Ok(out)
}

/// Per-variable positive scale factors, fit once on training data and frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingParams {
    scales: Vec<f64>,
    cells: usize,
}

impl ScalingParams {
    pub fn from_parts(scales: Vec<f64>, cells: usize) -> Result<Self> {
        if scales.is_empty() || cells == 0 || scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidDimension(
                "scaling needs positive factors and a positive cell count".into(),
            ));
        }
        Ok(ScalingParams { scales, cells })
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    fn check_rows(&self, m: &DMatrix<f64>, context: &'static str) -> Result<()> {
        if m.nrows() != self.scales.len() * self.cells {
            return Err(Error::shape(context, self.scales.len() * self.cells, m.nrows()));
        }
        Ok(())
    }
}

/// Fit scale factors: signed blocks use the maximum magnitude, nonnegative
/// blocks the maximum value. A block that is identically zero keeps scale 1
/// so zeros pass through untouched.
pub fn fit_scaling(q: &DMatrix<f64>, layout: &VariableLayout) -> Result<ScalingParams> {
    layout.check_rows(q, "fit_scaling")?;
    let cells = layout.cells();
    let mut scales = Vec::with_capacity(layout.variables().len());
    for (vi, (name, kind)) in layout.variables().iter().enumerate() {
        let mut max_val = 0.0f64;
        for j in 0..q.ncols() {
            for row in layout.block(vi) {
                let v = q[(row, j)];
                if *kind == VarKind::NonNegative && v < 0.0 {
                    return Err(Error::Domain {
                        variable: name.clone(),
                        column: j,
                        reason: format!("negative entry {v} in nonnegative variable"),
                    });
                }
                max_val = max_val.max(v.abs());
            }
        }
        scales.push(if max_val > 0.0 { max_val } else { 1.0 });
    }
    ScalingParams::from_parts(scales, cells)
}

/// Divide each variable block by its scale factor.
pub fn apply_scaling(q: &DMatrix<f64>, params: &ScalingParams) -> Result<DMatrix<f64>> {
    params.check_rows(q, "apply_scaling")?;
    let mut out = q.clone();
    scale_in_place(&mut out, params, |v, s| v / s);
    Ok(out)
}

/// Multiply each variable block by its scale factor.
pub fn invert_scaling(q: &DMatrix<f64>, params: &ScalingParams) -> Result<DMatrix<f64>> {
    params.check_rows(q, "invert_scaling")?;
    let mut out = q.clone();
    scale_in_place(&mut out, params, |v, s| v * s);
    Ok(out)
}

fn scale_in_place(m: &mut DMatrix<f64>, params: &ScalingParams, op: impl Fn(f64, f64) -> f64) {
    let cells = params.cells;
    for j in 0..m.ncols() {
        for (vi, &s) in params.scales.iter().enumerate() {
            for row in vi * cells..(vi + 1) * cells {
                m[(row, j)] = op(m[(row, j)], s);
            }
        }
    }
}
