//! The kernel language: AST, parser, printer and validation.

pub mod ast;
mod lexer;
pub mod parser;
pub mod printer;
pub mod validate;
pub mod visit;

use thiserror::Error;

pub use ast::*;
pub use parser::parse_expr;
pub use printer::{expr_to_string, print_program};
pub use validate::{has_errors, validate, Category, Diagnostic, Severity};

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{}:{}: syntax error: {message}", span.line, span.col)]
pub struct ParseError {
    pub span: Span,
    pub message: String,
}

impl ParseError {
    pub fn new(span: Span, message: impl Into<String>) -> Self {
        ParseError {
            span,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum LangError {
    #[error(transparent)]
    Syntax(#[from] ParseError),
    #[error("program failed validation ({} error(s)): {}", errors.len(), errors.first().map(|d| d.message.as_str()).unwrap_or(""))]
    Invalid { errors: Vec<Diagnostic> },
}

/// Syntax-only parse. The result may violate program invariants.
pub fn parse_unchecked(source: &str) -> Result<Program, ParseError> {
    parser::parse_program(source)
}

/// Parse and reject programs with error-level diagnostics.
pub fn parse(source: &str) -> Result<Program, LangError> {
    let p = parse_unchecked(source)?;
    let errors: Vec<_> = validate(&p).into_iter().filter(|d| d.severity == Severity::Error).collect();
    if errors.is_empty() {
        Ok(p)
    } else {
        Err(LangError::Invalid { errors })
    }
}

pub fn print(program: &Program) -> String {
    print_program(program)
}
