//! Assertions, weakest preconditions, falsification and SMT-LIB output.

pub mod axioms;
pub mod subst;
pub mod falsify;
pub mod wp;
pub mod sexpr;
pub mod smtlib;
