//! Concrete syntax, parsing, pretty-printing and type checking.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod span;
pub mod typecheck;

use thiserror::Error;

pub use ast::*;
pub use parser::{parse_block, parse_expr, parse_header, parse_unit, ParseOptions};
pub use pretty::{pretty_block, pretty_expr, pretty_unit};
pub use span::Span;
pub use typecheck::{typecheck, TypeEnv, TypeError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    Duplicate,
    Annotation,
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("{span}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub message: String,
    pub span: Span,
}

impl ParseError {
    pub fn syntax(message: impl Into<String>, span: Span) -> ParseError {
        ParseError { kind: ParseErrorKind::Syntax, message: message.into(), span }
    }

    pub fn duplicate(message: impl Into<String>, span: Span) -> ParseError {
        ParseError { kind: ParseErrorKind::Duplicate, message: message.into(), span }
    }

    pub fn annotation(message: impl Into<String>, span: Span) -> ParseError {
        ParseError { kind: ParseErrorKind::Annotation, message: message.into(), span }
    }
}
