//! Compositional conditional diffusion on a synthetic blob world with a
//! conditional-independence penalty between attributes.

pub mod attribute_space;
pub mod composition;
pub mod diagnostics;
pub mod diffusion;
pub mod error;
pub mod synth_world;
pub mod training;

pub use attribute_space::{AttributeSpace, Composition, SupportKind, SupportPattern};
pub use diffusion::{ConditionVector, NoiseSchedule, ScoreNet};
pub use error::{CoindError, Result};
