//! Isolation instrumentation: the training pipeline must never let oracle
//! constraint information (true step costs, ground-truth masks) flow into a
//! gradient computation. Optimizer code runs inside an [`optimizer_section`]
//! guard; every oracle read that happens while a guard is live on the same
//! thread counts as a violation. A clean run reports zero.

use std::cell::Cell;

thread_local! {
    static SECTION_DEPTH: Cell<u32> = const { Cell::new(0) };
    static VIOLATIONS: Cell<u64> = const { Cell::new(0) };
}

/// RAII guard marking the current thread as inside optimizer/gradient code.
/// Sections nest.
#[must_use = "the section ends when the guard drops"]
#[derive(Debug)]
pub struct OptimizerSection(());

/// Opens an optimizer section on this thread.
pub fn optimizer_section() -> OptimizerSection {
    SECTION_DEPTH.with(|d| d.set(d.get() + 1));
    OptimizerSection(())
}

impl Drop for OptimizerSection {
    fn drop(&mut self) {
        SECTION_DEPTH.with(|d| d.set(d.get().saturating_sub(1)));
    }
}

/// Called by the oracle cost/mask functions on every evaluation.
pub(crate) fn note_oracle_read() {
    SECTION_DEPTH.with(|d| {
        if d.get() > 0 {
            VIOLATIONS.with(|v| v.set(v.get() + 1));
        }
    });
}

/// Number of oracle reads observed inside optimizer sections on this thread
/// since the last [`reset`].
pub fn violations() -> u64 {
    VIOLATIONS.with(|v| v.get())
}

/// Clears this thread's violation counter.
pub fn reset() {
    VIOLATIONS.with(|v| v.set(0));
}
