//! Surface grammar, core form, lowering and printing.

pub mod ast;
pub mod core;
pub mod desugar;
pub mod lexer;
pub mod parser;
pub mod pretty;

pub use ast::*;
pub use self::core::*;
pub use desugar::desugar;
pub use parser::{parse_contract, parse_expr, parse_program, Parsed};
pub use pretty::{expr_to_string, pretty_print};
