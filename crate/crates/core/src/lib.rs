//! Exact and simulated deviation probabilities for sums indexed by a
//! supercritical Galton-Watson process.

pub mod deviations;
pub mod distengine;
pub mod error;
pub mod increments;
pub mod limits;
pub mod montecarlo;
pub mod numeric;
pub mod offspring;

pub use error::{Error, Result};
pub use offspring::{Classification, LawCase, LawSpec, LawSummary, OffspringLaw};
pub use distengine::{EngineConfig, ProbVector, TiltedPmf};
pub use increments::{IncrementLaw, IncrementSpec, TailOptions, TailValue, Tier};
pub use deviations::{DecompositionOptions, DecompositionValue, DeviationExperiment, EpsilonFamily, Regime};
pub use montecarlo::{McConfig, McEstimate, SimBatch};
