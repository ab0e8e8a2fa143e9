//! Execution strategy for embarrassingly parallel trial loops.
//!
//! The verification suite and multi-seed experiment runner map an independent
//! closure over `0..n` task indices. With the `parallel` feature (on by
//! default) the map runs on rayon; without it, or when
//! [`Parallelism::Sequential`] is requested, it runs as a plain loop. Both
//! paths collect results in index order and every task derives its own RNG
//! stream from the task index, so outputs are identical byte for byte.

/// How to execute an independent batch of tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    /// Plain in-order loop on the calling thread.
    Sequential,
    /// rayon work-stealing pool (only with the `parallel` feature).
    #[cfg(feature = "parallel")]
    Rayon,
}

impl Default for Parallelism {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        Parallelism::Rayon
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        Parallelism::Sequential
    }
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(mode: Parallelism, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            (0..n).into_par_iter().map(f).collect()
        }
    }
}

/// Fallible variant of [`map_indexed`]; the first error (in index order for
/// the sequential path, earliest index for rayon) is returned.
pub fn try_map_indexed<T, E, F>(mode: Parallelism, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    match mode {
        Parallelism::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => {
            use rayon::prelude::*;
            let results: Vec<Result<T, E>> = (0..n).into_par_iter().map(f).collect();
            results.into_iter().collect()
        }
    }
}

/// Caps the global rayon pool at `threads` workers.
///
/// Call at most once, before any parallel work; later calls return an error
/// string from rayon which callers may ignore. A no-op without the
/// `parallel` feature.
pub fn limit_threads(threads: usize) -> std::result::Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| e.to_string())
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for_stream;
    use rand::Rng;

    fn trial(i: usize) -> f64 {
        let mut rng = rng_for_stream(99, i as u64);
        (0..100).map(|_| rng.gen::<f64>()).sum()
    }

    #[test]
    fn sequential_results_are_in_index_order() {
        let out = map_indexed(Parallelism::Sequential, 8, |i| i * i);
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36, 49]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bit_for_bit() {
        let seq = map_indexed(Parallelism::Sequential, 64, trial);
        let par = map_indexed(Parallelism::Rayon, 64, trial);
        for (a, b) in seq.iter().zip(&par) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn try_map_surfaces_errors() {
        let res: Result<Vec<usize>, String> =
            try_map_indexed(Parallelism::Sequential, 4, |i| {
                if i == 2 {
                    Err("boom".to_string())
                } else {
                    Ok(i)
                }
            });
        assert_eq!(res.unwrap_err(), "boom");
    }
}
