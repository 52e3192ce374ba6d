//! Worker pool configuration and order-preserving parallel map.

use std::sync::Once;

use rayon::prelude::*;

static INIT: Once = Once::new();

/// Worker cap from `MABT_THREADS` (`0`, unset or unparsable means automatic).
pub fn configured_threads() -> usize {
    std::env::var("MABT_THREADS").ok().and_then(|v| v.trim().parse().ok()).unwrap_or(0)
}

fn init_pool() {
    INIT.call_once(|| {
        let n = configured_threads();
        if n > 0 {
            // Fails only if the embedding program already built the global pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    });
}

/// Number of workers the map will use.
pub fn current_threads() -> usize {
    init_pool();
    rayon::current_num_threads()
}

/// `(0..count).map(f)` evaluated in parallel; results are in index order,
/// so reductions done by the caller are independent of the worker count.
pub fn par_map<R, F>(count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    init_pool();
    (0..count).into_par_iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let v = par_map(1000, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
