//! Verification toolchain for differential privacy of probabilistic while programs.

pub mod aprhl;
pub mod corpus;
pub mod dpcheck;
pub mod frontend;
pub mod logic;
pub mod pipeline;
pub mod product;
pub mod source_interp;
pub mod target_interp;
pub mod values;

