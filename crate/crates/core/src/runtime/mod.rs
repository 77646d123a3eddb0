//! Transactional interpreter: heap, valid set, nested transactions with
//! write logs, rollback and deterministic thread interleaving.

mod heap;
mod machine;

pub use heap::{canonical_state, sha256_hex, FailCode, Heap, ObjectRec, Val};
pub use machine::{
    Counters, FailureRecord, FinalReport, Machine, Mode, RunConfig, RuntimeError,
};

use crate::syntax::CoreProgram;

/// Loads `p` and runs it to completion, including the root commit.
pub fn run_program(p: &CoreProgram, config: RunConfig) -> Result<FinalReport, RuntimeError> {
    Machine::load(p, config).run()
}
