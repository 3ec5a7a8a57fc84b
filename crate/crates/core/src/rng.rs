//! Seeded randomness.
//!
//! All randomness flows from `u64` seeds through xoshiro256++ whose state is
//! expanded with SplitMix64, so a given seed reproduces the same stream on
//! every platform. Integer draws and subsampling use the explicit algorithms
//! below rather than library helpers whose internals may change between
//! versions.

use rand::{Rng, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::{SplitMix64, Xoshiro256PlusPlus};

pub type SeededRng = Xoshiro256PlusPlus;

pub fn seeded(seed: u64) -> SeededRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// Independent seed for a named sub-stream of `seed`.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    // FNV-1a over the stream name, then one SplitMix64 round
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stream.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    SplitMix64::seed_from_u64(seed ^ h).next_u64()
}

/// Uniform integer in `[0, n)` by rejection of the biased tail.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % n + 1) % n;
    loop {
        let v = rng.next_u64();
        if v <= zone {
            return v % n;
        }
    }
}

/// First `k` entries of a Fisher–Yates shuffle of `0..n` (all of them when
/// `k >= n`), in draw order.
pub fn partial_fisher_yates<R: RngCore + ?Sized>(n: usize, k: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Full Fisher–Yates shuffle in place.
pub fn shuffle<T, R: RngCore + ?Sized>(items: &mut [T], rng: &mut R) {
    let n = items.len();
    for i in 0..n.saturating_sub(1) {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        items.swap(i, j);
    }
}

/// Normal sample with standard deviation `std`, redrawn until it falls
/// within two standard deviations of zero.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

/// Uniform `f64` in `[0, 1)` from the top 53 bits.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
