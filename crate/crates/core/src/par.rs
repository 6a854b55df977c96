//! Data-parallel helpers. With the `parallel` feature, work is spread over
//! rayon's pool unless a caller has asked for a single worker; without it
//! everything runs on the calling thread. Results always come back in input
//! order so reductions are reproducible.

use std::cell::Cell;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

thread_local! {
    static SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with the requested worker count. `Some(1)` forces the
/// sequential path; `None` uses the default pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match workers {
        Some(1) => {
            let prev = SEQUENTIAL.with(|s| s.replace(true));
            let out = f();
            SEQUENTIAL.with(|s| s.set(prev));
            out
        }
        #[cfg(feature = "parallel")]
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}

pub fn is_sequential() -> bool {
    !cfg!(feature = "parallel") || SEQUENTIAL.with(|s| s.get())
}

pub fn map_sequential<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_parallel<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Order-preserving map over `items`.
pub fn map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    if !is_sequential() {
        return map_parallel(items, f);
    }
    map_sequential(items, f)
}

/// Independent generator for batch `stream` of a run seeded with `seed`.
/// Every batch draws from its own ChaCha stream, so results do not depend
/// on how batches are scheduled.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `n` items into batches of `batch` and maps each batch with its
/// own generator; output is concatenated in batch order.
pub fn map_batches<R: Send>(
    n: usize,
    batch: usize,
    seed: u64,
    f: impl Fn(std::ops::Range<usize>, &mut ChaCha8Rng) -> Vec<R> + Sync + Send,
) -> Vec<R> {
    let batch = batch.max(1);
    let ranges: Vec<std::ops::Range<usize>> =
        (0..n.div_ceil(batch)).map(|b| b * batch..((b + 1) * batch).min(n)).collect();
    map(&ranges, |r| {
        let mut rng = stream_rng(seed, (r.start / batch) as u64);
        f(r.clone(), &mut rng)
    })
    .into_iter()
    .flatten()
    .collect()
}
