//! Numerical laboratory for the scalar wave equation on de Sitter-Schwarzschild space.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod geometry;

pub use error::{Error, ErrorClass, Result};
pub use geometry::{Geometry, GeometryConfig, Horizons, RadialGrid, RadialNode, RadialPoint, SpacetimeParams};
pub mod charts;
pub use charts::{ChartConfig, ChartId, ChartPoint, Charts, CotangentPointB, DualMetricBlock, HamiltonField, Side};
pub mod modes;
pub use modes::{ModeCoefficients, ModePotential, SphereQuadrature};
pub mod evolve;
pub use evolve::{Boundary, EvolutionConfig, EvolutionOutput, ProbeSeries, WaveState};
pub(crate) mod ode;
pub mod resolvent;
pub use resolvent::{
    FrequencyConvention, Resonance, ResonanceSet, ResidueData, ResolventSolution, SearchBox, SearchConfig, Shooter,
    ShootingConfig,
};
pub mod asymptotics;
pub use asymptotics::{CutoffConfig, CutoffRun, FitConfig, MellinConfig, MellinData, MellinGrid, MellinReconstruction, TailFit, UniformityReport};
