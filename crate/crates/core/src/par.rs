//! Data-parallel map over independent jobs, with a sequential path that is
//! always available and selected at run time.

/// Maps `f` over `items`, preserving order. Runs on the rayon pool when
/// `parallel` is set and the `parallel` feature is compiled in.
pub fn par_map<T, R, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return items.into_par_iter().map(f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}
