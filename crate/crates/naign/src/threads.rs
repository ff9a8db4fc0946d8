//! Worker pool shared by the batched linear algebra.
//!
//! Pool size is `NAIGN_THREADS` if set (minimum 1), otherwise the number
//! of available cores. Parallel sections only ever write disjoint output
//! rows and every reduction runs in a fixed order on the calling thread,
//! so results are bitwise identical for any pool size.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let n = std::env::var("NAIGN_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("worker pool")
    })
}

pub(crate) fn num_threads() -> usize {
    pool().current_num_threads()
}

/// Runs `body(row, out_row)` for each chunk of `out` holding `row_len`
/// elements. Chunks are disjoint, so the parallel path is deterministic.
pub(crate) fn for_each_row(out: &mut [f64], row_len: usize, body: impl Fn(usize, &mut [f64]) + Sync) {
    debug_assert_eq!(out.len() % row_len.max(1), 0);
    if num_threads() == 1 || out.len() < 4096 {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            body(i, row);
        }
    } else {
        use rayon::prelude::*;
        pool().install(|| {
            out.par_chunks_mut(row_len)
                .enumerate()
                .for_each(|(i, row)| body(i, row));
        });
    }
}
