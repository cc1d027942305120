//! Thin switch between rayon-backed and sequential batch mapping.
//!
//! Entry evaluation and the random-run sweeps are embarrassingly
//! parallel, so the whole crate funnels batch work through [`par_map`].
//! Building without the `parallel` feature swaps in the sequential body
//! with no other code changes; [`seq_map`] is always sequential and
//! exists so benchmarks can compare the two paths in one build.

#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Always-sequential mapping with the same shape as [`par_map`].
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_preserves_order() {
        let items: Vec<u64> = (0..1000).collect();
        let doubled = par_map(&items, |&x| x * 2);
        let expected = seq_map(&items, |&x| x * 2);
        assert_eq!(doubled, expected);
    }
}
