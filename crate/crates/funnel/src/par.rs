//! Internal thread pool. `FNK_THREADS` bounds the worker count.
//!
//! All parallel kernels split work along the batch axis into disjoint output
//! regions, or collect ordered partial results and reduce them sequentially,
//! so results are bitwise identical regardless of thread count.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(raw) = std::env::var("FNK_THREADS") {
            if let Ok(n) = raw.trim().parse::<usize>() {
                if n > 0 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("thread pool construction failed")
    })
}

/// Work below this many output elements is not worth parallelizing.
pub const PAR_THRESHOLD: usize = 4096;
