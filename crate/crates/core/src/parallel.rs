//! Deterministic fan-out over sample ranges.
//!
//! Work is split into one contiguous chunk per thread and partial results
//! are combined in chunk order, so a run with a fixed thread count is
//! bitwise reproducible.

use std::ops::Range;

pub(crate) fn chunk_ranges(n: usize, threads: usize) -> Vec<Range<usize>> {
    let t = threads.max(1).min(n.max(1));
    (0..t)
        .map(|c| (c * n / t)..((c + 1) * n / t))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Run `worker` over each chunk of `0..n`, returning per-chunk results in
/// chunk order. Serial when one chunk suffices.
pub(crate) fn run_chunks<R, F>(n: usize, threads: usize, worker: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync,
{
    let ranges = chunk_ranges(n, threads);
    if ranges.len() <= 1 {
        return ranges.into_iter().map(&worker).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = ranges
            .into_iter()
            .map(|r| scope.spawn(|| worker(r)))
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    })
}
