//! MiniC lexing, parsing, type checking and AST serialization.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod serialize;
pub mod usr;

pub use ast::*;
pub use serialize::{deserialize_ast, serialize_ast};
pub use usr::{compute_usr, Usr, UsrDecl};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("{file}:{loc}: syntax error: {message}")]
    Syntax { file: String, loc: Loc, message: String },
    #[error("{file}:{loc}: type error: {message}")]
    Type { file: String, loc: Loc, message: String },
}

impl FrontendError {
    pub fn loc(&self) -> Loc {
        match self {
            FrontendError::Syntax { loc, .. } | FrontendError::Type { loc, .. } => *loc,
        }
    }
}

/// Parses and type-checks one translation unit.
pub fn parse_translation_unit(source: &str, file_name: &str) -> Result<Ast, FrontendError> {
    parser::parse(source, file_name)
}
