//! Logical compositions of attribute conditions: parsing, compilation into
//! score plans, and sampling from the composed score.

pub mod expr;
pub mod plan;
pub mod sampler;

pub use expr::CompositionExpr;
pub use plan::{compile, format_coeff, GuidancePlan};
pub use sampler::{
    cfg_mix, composed_eps, composed_score, sample_langevin, sample_reverse, sample_reverse_terms,
    strided_timesteps, LangevinConfig,
};
