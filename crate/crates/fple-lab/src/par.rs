//! Parallel dispatch helpers.
//!
//! Every hot loop in the crate is an indexed map (`0..n -> T`) followed by an
//! ordered collect, so the parallel and sequential paths produce bitwise
//! identical results regardless of thread count. With the default `parallel`
//! feature the maps run on rayon; without it they degrade to plain iteration.
//! The `*_seq` variants always run sequentially and exist so the benchmark
//! suite can compare both paths inside one binary.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Indexed map over `0..n`, parallel when the `parallel` feature is on.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference implementation of [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// True when the crate was built with rayon support.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = |i: usize| ((i as f64) * 0.1).sin() / (1.0 + i as f64);
        let a = map_indexed(1000, f);
        let b = map_indexed_seq(1000, f);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
