//! Data-parallel job execution with a sequential fallback.
//!
//! Independent units of work (per-seed runs, sweep points, retrieval tests,
//! batch encoding) go through [`map`] / [`map_slice`]. With the `parallel`
//! feature (default) these dispatch to rayon; without it they are plain
//! iterator maps. Results come back in input order either way, so the choice
//! never affects output bytes.
//!
//! The `_seq` variants are always compiled; benches use them to compare both
//! paths in a single build.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map a function over owned items, in input order.
pub fn map<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_seq(items, f)
    }
}

/// Map a function over a slice, in input order.
pub fn map_slice<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_slice_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_slice_seq(items, f)
    }
}

pub fn map_seq<T, R, F: Fn(T) -> R>(items: Vec<T>, f: F) -> Vec<R> {
    items.into_iter().map(f).collect()
}

pub fn map_slice_seq<T, R, F: Fn(&T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_par<T, R, F>(items: Vec<T>, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_slice_par<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Run `f` inside a worker pool bounded to `jobs` threads. With the
/// sequential build the bound is meaningless and `f` just runs inline.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match jobs {
            Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("worker pool")
                .install(f),
            _ => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        if jobs.is_some_and(|n| n > 1) {
            eprintln!("note: built without the `parallel` feature; --jobs is ignored");
        }
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_input_order() {
        let out = map((0..100).collect::<Vec<u32>>(), |x| x * 2);
        assert_eq!(out, (0..100).map(|x| x * 2).collect::<Vec<u32>>());
    }

    #[test]
    fn seq_and_default_agree() {
        let items: Vec<u64> = (0..50).collect();
        let a = map_slice(&items, |x| x * x);
        let b = map_slice_seq(&items, |x| x * x);
        assert_eq!(a, b);
    }

    #[test]
    fn with_jobs_runs_closure() {
        assert_eq!(with_jobs(Some(2), || 41 + 1), 42);
        assert_eq!(with_jobs(None, || 7), 7);
    }
}
