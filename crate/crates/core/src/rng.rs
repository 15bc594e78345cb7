//! Seeded, portable randomness.
//!
//! Everything stochastic in this crate draws from [`StreamRng`], a thin layer
//! over the ChaCha8 counter-based generator. ChaCha is specified byte-for-byte
//! and `rand_chacha` implements it identically on every platform and Rust
//! release, so a `(config, master seed)` pair reproduces a whole study run
//! exactly.
//!
//! # Stream derivation
//!
//! A run owns one master seed. Each independent consumer (a pipeline stage, a
//! replicate, a tree in a forest) gets its own *stream*: same key, different
//! ChaCha stream id. Stream ids are derived by hashing a stable textual path
//! like `"replicate/3/geomask"` — never by incrementing a shared counter — so
//! adding a new consumer, or running consumers in parallel, cannot shift the
//! bytes any existing consumer sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A reproducible random stream: ChaCha8 keyed by the master seed, with the
/// stream id derived from a textual path.
///
/// `StreamRng` derefs to [`ChaCha8Rng`], so it is used wherever an
/// `impl rand::Rng` is expected.
#[derive(Debug, Clone)]
pub struct StreamRng {
    master_seed: u64,
    inner: ChaCha8Rng,
}

impl StreamRng {
    /// Root stream for a run: path `""`.
    pub fn from_seed(master_seed: u64) -> Self {
        Self::derived(master_seed, "")
    }

    /// Stream for `path` under `master_seed`.
    ///
    /// Paths are free-form strings; by convention they look like
    /// `"stage/part"` (e.g. `"sample/stratum/north"`). Distinct paths give
    /// statistically independent streams; the same path always gives the same
    /// stream.
    pub fn derived(master_seed: u64, path: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(master_seed);
        inner.set_stream(stream_id(path));
        StreamRng { master_seed, inner }
    }

    /// A child stream whose path extends this stream's lineage.
    ///
    /// Children are keyed by the same master seed; the child path is folded
    /// into this stream's id, so `root.child("a").child("b")` differs from
    /// `root.child("b").child("a")`.
    pub fn child(&self, path: &str) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.master_seed);
        inner.set_stream(splitmix64(self.inner.get_stream() ^ stream_id(path)));
        StreamRng {
            master_seed: self.master_seed,
            inner,
        }
    }

    /// A child stream for an integer-indexed part (replicate 3, tree 17...).
    pub fn child_idx(&self, label: &str, idx: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.master_seed);
        let folded = self.inner.get_stream() ^ stream_id(label) ^ splitmix64(idx.wrapping_add(1));
        inner.set_stream(splitmix64(folded));
        StreamRng {
            master_seed: self.master_seed,
            inner,
        }
    }

    /// The master seed this stream was derived from.
    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }
}

impl std::ops::Deref for StreamRng {
    type Target = ChaCha8Rng;
    fn deref(&self) -> &ChaCha8Rng {
        &self.inner
    }
}

impl std::ops::DerefMut for StreamRng {
    fn deref_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.inner
    }
}

/// FNV-1a 64-bit hash of a byte string.
///
/// Tiny, allocation-free, and stable across platforms; quality is more than
/// enough for mapping short textual paths onto ChaCha stream ids (the
/// generator itself does the heavy mixing).
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer: a single avalanche round used to decorrelate
/// structured ids (consecutive integers, xor-combined hashes).
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn stream_id(path: &str) -> u64 {
    splitmix64(fnv1a64(path.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_path_same_stream() {
        let mut a = StreamRng::derived(42, "sample");
        let mut b = StreamRng::derived(42, "sample");
        let xs: Vec<u64> = (0..8).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.random()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn different_paths_differ() {
        let mut a = StreamRng::derived(42, "sample");
        let mut b = StreamRng::derived(42, "geomask");
        let xs: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = StreamRng::derived(1, "sample");
        let mut b = StreamRng::derived(2, "sample");
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn child_order_matters() {
        let root = StreamRng::from_seed(7);
        let mut ab = root.child("a").child("b");
        let mut ba = root.child("b").child("a");
        assert_ne!(ab.random::<u64>(), ba.random::<u64>());
    }

    #[test]
    fn indexed_children_distinct() {
        let root = StreamRng::from_seed(7);
        let mut seen = std::collections::HashSet::new();
        for i in 0..100 {
            let mut c = root.child_idx("tree", i);
            assert!(seen.insert(c.random::<u64>()), "collision at index {i}");
        }
    }

    #[test]
    fn draws_are_stable_across_builds() {
        // Frozen values: if these change, every seeded artifact in the crate
        // changes, which breaks the reproducibility contract.
        let mut r = StreamRng::derived(20240823, "frozen");
        let got: Vec<u32> = (0..4).map(|_| r.random()).collect();
        assert_eq!(got, vec![4111914571, 76234939, 4143313918, 869737634]);
    }

    #[test]
    fn consuming_parent_does_not_shift_children() {
        let mut root = StreamRng::from_seed(99);
        let mut before = root.child("stage");
        let _: u64 = root.random();
        let mut after = root.child("stage");
        assert_eq!(before.random::<u64>(), after.random::<u64>());
    }
}
