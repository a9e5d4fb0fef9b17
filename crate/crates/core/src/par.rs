//! Thin abstraction over the data-parallel runtime.
//!
//! With the `parallel` feature (default) these helpers dispatch to rayon;
//! without it they run plain sequential loops.  Every parallel use in the
//! crate is an order-preserving indexed map, so results are bit-identical
//! across feature choice and thread count.

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..n`, preserving index order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Runs `f` on a dedicated pool with `workers` threads (`None` = runtime
/// default).  Without the `parallel` feature the worker count is ignored.
#[cfg(feature = "parallel")]
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("failed to build thread pool")
            .install(f),
        None => f(),
    }
}

/// Runs `f`; the sequential build has no pool to configure.
#[cfg(not(feature = "parallel"))]
pub fn with_workers<R, F>(workers: Option<usize>, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    let _ = workers;
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let v = map_indexed(100, |i| i * i);
        assert_eq!(v[7], 49);
        assert_eq!(v.len(), 100);
    }

    #[test]
    fn worker_override_gives_same_result() {
        let a = map_indexed(1000, |i| (i as f64).sqrt());
        let b = with_workers(Some(1), || map_indexed(1000, |i| (i as f64).sqrt()));
        assert_eq!(a, b);
    }
}
