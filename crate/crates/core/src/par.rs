//! Data-parallel helpers with a sequential fallback.
//!
//! Work is always split into the same fixed-size chunks and reduced in chunk
//! order, so [`Exec::Parallel`] and [`Exec::Sequential`] produce bit-identical
//! results. Without the `parallel` feature both modes run sequentially.

use std::ops::Range;

use serde::{Deserialize, Serialize};

/// Rows per gradient chunk. Fixed so reductions do not depend on thread count.
pub const GRAD_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    #[default]
    Parallel,
    Sequential,
}

impl Exec {
    /// True when work will actually fan out across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Map `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Split `0..n` into `chunk`-sized ranges and map `f` over them, preserving order.
pub fn map_chunks<R, F>(exec: Exec, n: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(chunk)
        .map(|start| start..(start + chunk).min(n))
        .collect();
    map(exec, &ranges, |r| f(r.clone()))
}

/// Sum equal-length vectors in order. Returns an empty vector for no input.
pub fn sum_in_order(parts: Vec<Vec<f64>>) -> Vec<f64> {
    let mut iter = parts.into_iter();
    let Some(mut acc) = iter.next() else {
        return Vec::new();
    };
    for part in iter {
        for (a, p) in acc.iter_mut().zip(&part) {
            *a += p;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_cover_range_in_order() {
        let got = map_chunks(Exec::Parallel, 10, 4, |r| (r.start, r.end));
        assert_eq!(got, vec![(0, 4), (4, 8), (8, 10)]);
        assert!(map_chunks(Exec::Sequential, 0, 4, |r| r.len()).is_empty());
    }

    #[test]
    fn modes_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 * 0.37).sin()).collect();
        let run = |exec| {
            sum_in_order(map_chunks(exec, xs.len(), 64, |r| {
                vec![xs[r.clone()].iter().sum::<f64>(), r.len() as f64]
            }))
        };
        assert_eq!(run(Exec::Parallel), run(Exec::Sequential));
    }
}
