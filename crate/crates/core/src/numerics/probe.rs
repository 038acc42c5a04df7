//! Allocation probe for dense matrices.
//!
//! Every freshly allocated [`DenseMatrix`](super::DenseMatrix) reports its shape to a
//! thread-local recorder when one is active. Tests use this to check which
//! intermediate objects a code path materialises.

use std::cell::RefCell;

thread_local! {
    static RECORDER: RefCell<Option<Vec<(usize, usize)>>> = const { RefCell::new(None) };
}

pub(crate) fn record(rows: usize, cols: usize) {
    RECORDER.with(|r| {
        if let Some(shapes) = r.borrow_mut().as_mut() {
            shapes.push((rows, cols));
        }
    });
}

/// Shapes allocated while running a closure.
#[derive(Debug, Clone, Default)]
pub struct AllocationLog {
    pub shapes: Vec<(usize, usize)>,
}

impl AllocationLog {
    /// Largest single dimension of any allocated matrix.
    pub fn peak_dimension(&self) -> usize {
        self.shapes.iter().map(|&(r, c)| r.max(c)).max().unwrap_or(0)
    }

    /// True if some allocation had both dimensions at least `size`.
    pub fn any_at_least(&self, size: usize) -> bool {
        self.shapes.iter().any(|&(r, c)| r >= size && c >= size)
    }
}

/// Runs `f` with the probe active on the current thread and returns the log.
/// Nested calls are not supported; the inner call takes over the recorder.
pub fn track_allocations<R>(f: impl FnOnce() -> R) -> (R, AllocationLog) {
    let previous = RECORDER.with(|r| r.borrow_mut().replace(Vec::new()));
    let out = f();
    let shapes = RECORDER.with(|r| {
        let mut slot = r.borrow_mut();
        let shapes = slot.take().unwrap_or_default();
        *slot = previous;
        shapes
    });
    (out, AllocationLog { shapes })
}
