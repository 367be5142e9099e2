//! Values, memories, distributions, builtins and expression evaluation.

pub mod builtins;
pub mod dist;
pub mod domain;
pub mod eval;
pub mod memory;
pub mod value;

pub use builtins::{Builtin, Registry, RegistryError};
pub use dist::{Dist, DistError};
pub use eval::{EvalCtx, EvalError};
pub use memory::Memory;
pub use value::{ScoreFn, Value};
