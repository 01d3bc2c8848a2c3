//! Thread-local operation counters.
//!
//! The spectral and direct correlation paths report how many scalar
//! multiplications they actually execute and how many scratch bytes they
//! hold at peak. Counts are incremented at the loops that do the work, not
//! estimated from closed-form formulas, so they are exact for the code as
//! compiled. Counters are per-thread; reset them before a measured region.

use std::cell::Cell;

thread_local! {
    static MULTIPLIES: Cell<u64> = const { Cell::new(0) };
    static CUR_BYTES: Cell<u64> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<u64> = const { Cell::new(0) };
}

/// Zero all counters on the current thread.
pub fn reset() {
    MULTIPLIES.with(|c| c.set(0));
    CUR_BYTES.with(|c| c.set(0));
    PEAK_BYTES.with(|c| c.set(0));
}

/// Record `n` executed scalar multiplications.
#[inline]
pub fn add_multiplies(n: u64) {
    MULTIPLIES.with(|c| c.set(c.get() + n));
}

/// Scalar multiplications recorded since the last [`reset`].
pub fn multiplies() -> u64 {
    MULTIPLIES.with(|c| c.get())
}

/// Record `n` bytes of working memory coming into use.
#[inline]
pub fn alloc_bytes(n: u64) {
    CUR_BYTES.with(|cur| {
        let now = cur.get() + n;
        cur.set(now);
        PEAK_BYTES.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

/// Record `n` bytes of working memory going out of use.
#[inline]
pub fn free_bytes(n: u64) {
    CUR_BYTES.with(|cur| cur.set(cur.get().saturating_sub(n)));
}

/// High-water mark of tracked working memory since the last [`reset`].
pub fn peak_bytes() -> u64 {
    PEAK_BYTES.with(|c| c.get())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_accumulate_and_reset() {
        reset();
        add_multiplies(3);
        add_multiplies(4);
        assert_eq!(multiplies(), 7);
        alloc_bytes(100);
        alloc_bytes(50);
        free_bytes(120);
        alloc_bytes(10);
        assert_eq!(peak_bytes(), 150);
        reset();
        assert_eq!(multiplies(), 0);
        assert_eq!(peak_bytes(), 0);
    }
}
