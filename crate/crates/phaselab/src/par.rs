//! Deterministic data-parallel helpers.
//!
//! Every reduction in this crate goes through a fixed chunking scheme: the
//! input is split into chunks of a size that does not depend on the thread
//! count, chunk results are computed (in parallel when the `parallel` feature
//! is enabled) and then combined sequentially in chunk order. Outputs are
//! therefore bit-identical across thread counts and across the sequential
//! fallback build.

/// Chunk length used by all reductions. Fixed so that summation order never
/// depends on the executing thread pool.
pub const CHUNK: usize = 8192;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Sum of `f(i)` over `0..n`, chunk-deterministic.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partial = |range: std::ops::Range<usize>| -> f64 {
        let mut acc = 0.0;
        for i in range {
            acc += f(i);
        }
        acc
    };
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n))
        .collect();
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            chunks.into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            chunks.into_iter().map(partial).collect()
        }
    };
    partials.into_iter().sum()
}

/// Maximum of `f(i)` over `0..n` (`f64::NEG_INFINITY` when `n == 0`).
pub fn max_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let partial = |range: std::ops::Range<usize>| -> f64 {
        let mut acc = f64::NEG_INFINITY;
        for i in range {
            acc = acc.max(f(i));
        }
        acc
    };
    let chunks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(n))
        .collect();
    let partials: Vec<f64> = {
        #[cfg(feature = "parallel")]
        {
            chunks.into_par_iter().map(partial).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            chunks.into_iter().map(partial).collect()
        }
    };
    partials.into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Fill `out[i] = f(i)`; element-independent, so plain parallel map.
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = f(i);
        }
    }
}

/// Apply `f` to every index of a line-indexed family: `f(line)` for
/// `line in 0..lines`, where each call writes a disjoint region through
/// interior mutability supplied by the caller closure.
pub fn for_each_line<F>(lines: usize, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..lines).into_par_iter().for_each(f);
    }
    #[cfg(not(feature = "parallel"))]
    {
        for l in 0..lines {
            f(l);
        }
    }
}

/// Map chunks of `src` into `dst` (same length), disjoint writes.
pub fn zip_map<F>(src: &[f64], dst: &mut [f64], f: F)
where
    F: Fn(usize, f64) -> f64 + Sync + Send,
{
    assert_eq!(src.len(), dst.len());
    #[cfg(feature = "parallel")]
    {
        dst.par_iter_mut()
            .enumerate()
            .for_each(|(i, slot)| *slot = f(i, src[i]));
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, slot) in dst.iter_mut().enumerate() {
            *slot = f(i, src[i]);
        }
    }
}

/// Shared handle to a mutable slice for parallel loops whose iterations
/// write disjoint index sets (line sweeps). The exclusivity of the borrow
/// is surrendered at construction; callers promise disjoint writes.
pub struct DisjointWriter<'a> {
    ptr: *mut f64,
    len: usize,
    _marker: std::marker::PhantomData<&'a mut [f64]>,
}

unsafe impl Sync for DisjointWriter<'_> {}

impl<'a> DisjointWriter<'a> {
    pub fn new(slice: &'a mut [f64]) -> Self {
        DisjointWriter {
            ptr: slice.as_mut_ptr(),
            len: slice.len(),
            _marker: std::marker::PhantomData,
        }
    }

    /// # Safety
    ///
    /// Concurrent callers must touch disjoint indices.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn slice(&self) -> &mut [f64] {
        unsafe { std::slice::from_raw_parts_mut(self.ptr, self.len) }
    }
}
