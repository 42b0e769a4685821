//! Deterministic parallel summation.
//!
//! Terms are grouped into fixed-size chunks, each chunk is accumulated
//! sequentially, and chunk partials are combined pairwise in a fixed binary
//! tree. The result depends only on the number of terms, never on the number
//! of worker threads or their scheduling.

use std::ops::AddAssign;

use rayon::prelude::*;

/// Number of consecutive terms accumulated sequentially before tree combination.
pub const CHUNK: usize = 32;

/// Sums `n` terms produced by `add(acc, i)` (which adds term `i` into `acc`).
pub fn fixed_tree_sum<T, I, F>(n: usize, init: I, add: F) -> T
where
    T: Send + for<'a> AddAssign<&'a T>,
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, usize) + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    if chunks <= 1 {
        let mut acc = init();
        (0..n).for_each(|i| add(&mut acc, i));
        return acc;
    }
    let mut partials: Vec<T> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                add(&mut acc, i);
            }
            acc
        })
        .collect();
    while partials.len() > 1 {
        let mut next = Vec::with_capacity(partials.len().div_ceil(2));
        let mut it = partials.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a += &b;
            }
            next.push(a);
        }
        partials = next;
    }
    partials.pop().unwrap_or_else(init)
}

/// Deterministic sum of `f(i)` over `0..n`.
pub fn sum_f64<F: Fn(usize) -> f64 + Sync + Send>(n: usize, f: F) -> f64 {
    fixed_tree_sum(n, || 0.0, |acc: &mut f64, i| *acc += f(i))
}
