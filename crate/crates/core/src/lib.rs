//! Learning predictive quadratic reduced-order models from snapshot data.
//!
//! The pipeline: map native snapshot variables to learning variables, scale
//! them, compute a POD basis, project, estimate time derivatives, fit the
//! reduced quadratic operators by Tikhonov-regularized least squares, and pick
//! the regularization strength by a bounded-trajectory search (coarse grid
//! plus Nelder-Mead refinement). An intrusive Galerkin projection of known
//! operators and a synthetic Burgers test system provide ground truth.

pub mod config;
pub mod error;
pub mod io;
pub(crate) mod linalg;
pub(crate) mod ode;
pub mod oracle;
pub mod pod;
pub mod preprocess;
pub mod quadform;
pub mod regression;
pub mod regsearch;
pub mod rom;
pub mod timederiv;

pub use config::{RunConfig, SignalKind};
pub use error::{Error, Result};
pub use oracle::{BurgersBoundary, FomOperators, QuadraticTerm};
pub use pod::{PodBasis, PodOptions, SingularSpectrum};
pub use preprocess::{ChannelMap, Recipe, ScalingParams, TransformSpec, VarKind, VariableLayout};
pub use quadform::CompactIndexMap;
pub use regression::{DataMatrix, GramCache, RegPair, RomOperators};
pub use regsearch::{
    CandidateOutcome, DerivativeSource, PipelineInputs, PipelineOptions, PipelineOutput, RankRule,
    SearchConfig, SearchReport,
};
pub use rom::{InputSignal, Trajectory, TrajectoryStatus};
pub use timederiv::UniformTimeGrid;
