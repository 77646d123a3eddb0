//! Toolchain for the OV validity-contract language.

pub mod diag;
pub mod syntax;
pub mod ownership;
pub mod typecheck;
pub mod runtime;
pub mod blocksched;
pub mod fuzz;
pub mod transpile;

use diag::{has_errors, Diagnostic};
use syntax::CoreProgram;

/// A checked program together with the warnings it produced.
#[derive(Debug, Clone)]
pub struct Compiled {
    pub surface: syntax::Program,
    pub core: CoreProgram,
    pub warnings: Vec<Diagnostic>,
}

/// Parses, desugars and checks `src`. On failure returns every diagnostic,
/// warnings included.
pub fn compile(src: &str) -> Result<Compiled, Vec<Diagnostic>> {
    let parsed = syntax::parse_program(src)?;
    let core = syntax::desugar(&parsed.program);
    let mut diags = parsed.warnings;
    diags.extend(typecheck::check_program(&core));
    if has_errors(&diags) {
        return Err(diags);
    }
    Ok(Compiled {
        surface: parsed.program,
        core,
        warnings: diags,
    })
}
