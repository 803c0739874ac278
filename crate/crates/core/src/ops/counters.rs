//! Per-thread invocation counters for GEMM and unfold calls.

use std::cell::Cell;

thread_local! {
    static GEMM_CALLS: Cell<u64> = const { Cell::new(0) };
    static UNFOLD_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Monotone counts observed on the current thread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub gemm: u64,
    pub unfold: u64,
}

impl std::ops::Sub for OpCounts {
    type Output = OpCounts;

    fn sub(self, rhs: OpCounts) -> OpCounts {
        OpCounts {
            gemm: self.gemm - rhs.gemm,
            unfold: self.unfold - rhs.unfold,
        }
    }
}

pub fn snapshot() -> OpCounts {
    OpCounts {
        gemm: GEMM_CALLS.with(Cell::get),
        unfold: UNFOLD_CALLS.with(Cell::get),
    }
}

pub(crate) fn record_gemm() {
    GEMM_CALLS.with(|c| c.set(c.get() + 1));
}

pub(crate) fn record_unfold() {
    UNFOLD_CALLS.with(|c| c.set(c.get() + 1));
}
