//! Test Sequence / Test Assessment language: parser, step machine and
//! input generation.

pub mod ast;
mod lexer;
pub mod machine;
mod parser;
pub mod sequence;

use std::fmt;

pub use ast::{Block, BlockKind, EvalContext, Expr, SearchParameter, StepNode};
pub use machine::StepMachine;
pub use parser::parse_block;
pub use sequence::{
    generate_input_trace, instantiate, list_parameters, ConcreteSequence, SequenceError, SequenceRunner,
};

/// Prefix that marks an identifier as a search parameter.
pub const PARAM_PREFIX: &str = "Hecate_";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax(String),
    UndeclaredParameter(String),
    UndeclaredSignal(String),
    InvalidParameter(String),
    DuplicateStep(String),
    UnknownTarget { step: String, target: String },
    EmptyStep(String),
    TypeMismatch(String),
    UnassignedSignal { signal: String, step: String },
}

/// Parse failure. `line`/`col` are 1-based; whole-block checks report 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

impl ParseError {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        Self {
            line,
            col,
            kind: ParseErrorKind::Syntax(msg.into()),
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax(msg) | Self::TypeMismatch(msg) | Self::InvalidParameter(msg) => f.write_str(msg),
            Self::UndeclaredParameter(name) => write!(f, "undeclared parameter `{name}`"),
            Self::UndeclaredSignal(name) => write!(f, "undeclared signal `{name}`"),
            Self::DuplicateStep(name) => write!(f, "duplicate step name `{name}`"),
            Self::UnknownTarget { step, target } => {
                write!(f, "step `{step}` transitions to unknown sibling `{target}`")
            }
            Self::EmptyStep(name) => write!(f, "step `{name}` has an empty body"),
            Self::UnassignedSignal { signal, step } => {
                write!(
                    f,
                    "signal `{signal}` is not assigned when step `{step}` is active"
                )
            }
        }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}:{}: {}", self.line, self.col, self.kind)
        }
    }
}

impl std::error::Error for ParseError {}
