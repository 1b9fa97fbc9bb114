//! Thread-local multiply-accumulate counter.
//!
//! Forward kernels (matmul, FFT convolution, SSM kernel generation and scans)
//! bump the counter by the same per-op formulas used for analytic accounting,
//! so an instrumented forward pass can be compared against the closed forms.
//! Backward passes never count.

use std::cell::Cell;

thread_local! {
    static MULT_ADDS: Cell<u64> = const { Cell::new(0) };
    static ENABLED: Cell<bool> = const { Cell::new(false) };
}

pub(crate) fn record(n: u64) {
    ENABLED.with(|e| {
        if e.get() {
            MULT_ADDS.with(|c| c.set(c.get() + n));
        }
    });
}

/// Runs `f` with counting enabled and returns its result together with the
/// number of mult-adds recorded while it ran.
pub fn count<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let prev_enabled = ENABLED.with(|e| e.replace(true));
    let prev = MULT_ADDS.with(|c| c.replace(0));
    let out = f();
    let counted = MULT_ADDS.with(|c| c.replace(prev));
    ENABLED.with(|e| e.set(prev_enabled));
    if prev_enabled {
        MULT_ADDS.with(|c| c.set(c.get() + counted));
    }
    (out, counted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nothing_recorded_outside_count() {
        record(5);
        let (_, n) = count(|| record(7));
        assert_eq!(n, 7);
    }

    #[test]
    fn nested_counts_propagate_outward() {
        let (inner, outer) = count(|| {
            record(1);
            let (_, inner) = count(|| record(10));
            inner
        });
        assert_eq!(inner, 10);
        assert_eq!(outer, 11);
    }
}
