//! Deterministic operation tallies.
//!
//! Kernels report their arithmetic through the free functions in this module.
//! Tallies go to the innermost [`measure`] region active on the current
//! thread; outside any region they are discarded. Each region starts from a
//! fresh counter and is merged into its parent when it closes, so concurrent
//! invocations on different threads never share state.
//!
//! Categories:
//! - `multiplies` / `adds`: the multiply-accumulate work inside matrix
//!   products (matrix-matrix, matrix-vector, outer products) plus the
//!   subtractions of deflation and residual updates. These are the terms of
//!   the complexity table.
//! - `elementwise`: every other scalar operation (scaling, norms,
//!   exponentials, normalizer arithmetic, activations).
//! - `peak_values_held`: high-water mark of working entries allocated by the
//!   measured kernels, excluding their inputs and returned outputs.
//! - `peak_score_entries`: high-water mark of attention-score map entries.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub multiplies: u64,
    pub adds: u64,
    pub elementwise: u64,
    pub peak_values_held: u64,
    pub peak_score_entries: u64,
    #[serde(skip)]
    held: u64,
    #[serde(skip)]
    scores_held: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Combine two independently measured tallies. Counts add; peaks take the
    /// maximum. Commutative and associative.
    pub fn merge(&self, other: &OpCounter) -> OpCounter {
        OpCounter {
            multiplies: self.multiplies + other.multiplies,
            adds: self.adds + other.adds,
            elementwise: self.elementwise + other.elementwise,
            peak_values_held: self.peak_values_held.max(other.peak_values_held),
            peak_score_entries: self.peak_score_entries.max(other.peak_score_entries),
            held: 0,
            scores_held: 0,
        }
    }

    /// Same counts and peaks, ignoring live-allocation bookkeeping.
    pub fn same_tally(&self, other: &OpCounter) -> bool {
        self.multiplies == other.multiplies
            && self.adds == other.adds
            && self.elementwise == other.elementwise
            && self.peak_values_held == other.peak_values_held
            && self.peak_score_entries == other.peak_score_entries
    }

    pub(crate) fn record_products(&mut self, multiplies: u64, adds: u64) {
        self.multiplies += multiplies;
        self.adds += adds;
    }

    pub(crate) fn record_adds(&mut self, adds: u64) {
        self.adds += adds;
    }

    pub(crate) fn record_elementwise(&mut self, n: u64) {
        self.elementwise += n;
    }

    pub(crate) fn hold(&mut self, n: u64) {
        self.held += n;
        self.peak_values_held = self.peak_values_held.max(self.held);
    }

    pub(crate) fn release(&mut self, n: u64) {
        self.held = self.held.saturating_sub(n);
    }

    pub(crate) fn hold_scores(&mut self, n: u64) {
        self.hold(n);
        self.scores_held += n;
        self.peak_score_entries = self.peak_score_entries.max(self.scores_held);
    }

    pub(crate) fn release_scores(&mut self, n: u64) {
        self.release(n);
        self.scores_held = self.scores_held.saturating_sub(n);
    }

    fn absorb_nested(&mut self, inner: &OpCounter) {
        self.multiplies += inner.multiplies;
        self.adds += inner.adds;
        self.elementwise += inner.elementwise;
        self.peak_values_held = self.peak_values_held.max(self.held + inner.peak_values_held);
        self.peak_score_entries = self.peak_score_entries.max(self.scores_held + inner.peak_score_entries);
        self.held += inner.held;
        self.scores_held += inner.scores_held;
    }
}

thread_local! {
    static STACK: RefCell<Vec<OpCounter>> = const { RefCell::new(Vec::new()) };
}

struct Region;

impl Drop for Region {
    fn drop(&mut self) {
        // Only reached on unwind; the normal path pops explicitly.
        STACK.with(|s| {
            s.borrow_mut().pop();
        });
    }
}

/// Run `f` inside a fresh counting region and return its tally.
pub fn measure<R>(f: impl FnOnce() -> R) -> (R, OpCounter) {
    STACK.with(|s| s.borrow_mut().push(OpCounter::new()));
    let guard = Region;
    let out = f();
    std::mem::forget(guard);
    let inner = STACK.with(|s| {
        let mut stack = s.borrow_mut();
        let inner = stack.pop().expect("counter region stack underflow");
        if let Some(parent) = stack.last_mut() {
            parent.absorb_nested(&inner);
        }
        inner
    });
    (out, inner)
}

/// Run `f` with tallies discarded (diagnostics that are not part of a kernel).
pub fn uncounted<R>(f: impl FnOnce() -> R) -> R {
    STACK.with(|s| s.borrow_mut().push(OpCounter::new()));
    let guard = Region;
    let out = f();
    drop(guard);
    out
}

#[inline]
fn with_active(f: impl FnOnce(&mut OpCounter)) {
    STACK.with(|s| {
        if let Some(c) = s.borrow_mut().last_mut() {
            f(c);
        }
    });
}

/// Product of an `m x k` and a `k x n` operand.
#[inline]
pub(crate) fn product(m: usize, k: usize, n: usize) {
    let work = (m * k * n) as u64;
    with_active(|c| c.record_products(work, work));
}

#[inline]
pub(crate) fn adds(n: usize) {
    with_active(|c| c.record_adds(n as u64));
}

#[inline]
pub(crate) fn elementwise(n: usize) {
    with_active(|c| c.record_elementwise(n as u64));
}

#[inline]
pub(crate) fn hold(n: usize) {
    with_active(|c| c.hold(n as u64));
}

#[inline]
pub(crate) fn release(n: usize) {
    with_active(|c| c.release(n as u64));
}

#[inline]
pub(crate) fn hold_scores(n: usize) {
    with_active(|c| c.hold_scores(n as u64));
}

#[inline]
pub(crate) fn release_scores(n: usize) {
    with_active(|c| c.release_scores(n as u64));
}
