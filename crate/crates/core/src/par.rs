//! Ordered map over items with a bounded worker count.
//!
//! With the `parallel` feature, `workers > 1` runs on a dedicated rayon
//! pool; otherwise items are processed in order on the calling thread.
//! Output order always matches input order.

/// Whether this build can run more than one worker.
pub const PARALLEL: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;

    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().with_max_len(1).map(&f).collect()),
        Err(e) => {
            log::warn!("could not start {workers} workers ({e}); running sequentially");
            items.iter().map(f).collect()
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers > 1 {
        log::warn!("built without the parallel feature; ignoring workers = {workers}");
    }
    items.iter().map(f).collect()
}
