//! Execution strategy for the data-parallel inner loops.
//!
//! With the `parallel` feature (on by default) the hot loops fan out over
//! rayon's global pool; without it every [`Execution`] runs sequentially.
//! Results are identical either way: parallel paths only split work across
//! independent rows and never reorder floating-point reductions.

/// Which executor a kernel should use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work will actually be split across threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Fill `out` by calling `f(i, chunk)` on consecutive `chunk_len`-sized
/// chunks, in parallel when requested and available.
pub(crate) fn for_each_chunk<T, F>(exec: Execution, out: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        out.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = exec;
    out.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Map `0..n` through `f`, preserving order.
pub(crate) fn map_indices<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strategies_agree() {
        let seq = map_indices(Execution::Sequential, 1000, |i| (i as f64).sqrt());
        let par = map_indices(Execution::Parallel, 1000, |i| (i as f64).sqrt());
        assert_eq!(seq, par);

        let mut a = vec![0usize; 97];
        let mut b = vec![0usize; 97];
        for_each_chunk(Execution::Sequential, &mut a, 10, |i, c| {
            c.iter_mut().for_each(|x| *x = i)
        });
        for_each_chunk(Execution::Parallel, &mut b, 10, |i, c| {
            c.iter_mut().for_each(|x| *x = i)
        });
        assert_eq!(a, b);
        assert_eq!(a[96], 9);
    }
}
