//! Data-parallel helpers. With the `parallel` feature these fan out over the
//! rayon pool; without it they run the same closures in order. Results are
//! identical either way because every item owns its own random stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Below this many items the sequential path is used even when parallel.
pub const MIN_PARALLEL_ITEMS: usize = 64;

/// Independent generator for item `index` of a batch seeded with `seed`.
pub fn item_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PARALLEL_ITEMS {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

/// Like [`map_indices`] but for a few coarse jobs (whole training runs):
/// fans out whenever there is more than one.
pub fn map_tasks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}

pub fn map_indices_sequential<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Fallible variant of [`map_indices`]; the first error in index order wins.
pub fn try_map_indices<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indices(n, f).into_iter().collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn item_streams_are_independent_and_stable() {
        let a: Vec<u64> = (0..4).map(|i| item_rng(7, i).random()).collect();
        let b: Vec<u64> = (0..4).map(|i| item_rng(7, i).random()).collect();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| item_rng(3, i as u64).random::<f64>();
        assert_eq!(map_indices(500, f), map_indices_sequential(500, f));
    }
}
