//! Column-level data parallelism. With the `parallel` feature the closures run
//! on the ambient rayon pool; without it they run in column order. Each column
//! is computed by one worker, so results are bit-identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Runs `f(column_index, estimate, residual, signal)` for every column of three
/// column-major buffers with `rows` rows each.
pub(crate) fn zip_columns<T, F>(
    rows: usize,
    first_col: usize,
    estimate: &mut [f64],
    residual: &mut [f64],
    signal: &[f64],
    f: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut [f64], &mut [f64], &[f64]) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        estimate
            .par_chunks_mut(rows)
            .zip(residual.par_chunks_mut(rows))
            .zip(signal.par_chunks(rows))
            .enumerate()
            .map(|(j, ((est, res), sig))| f(first_col + j, est, res, sig))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        estimate
            .chunks_mut(rows)
            .zip(residual.chunks_mut(rows))
            .zip(signal.chunks(rows))
            .enumerate()
            .map(|(j, ((est, res), sig))| f(first_col + j, est, res, sig))
            .collect()
    }
}

/// Maps `f` over `items`, in parallel when enabled. Output order follows input.
pub(crate) fn map_slice<I, T, F>(items: &[I], f: F) -> Vec<T>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().with_min_len(64).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
