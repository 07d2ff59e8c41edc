//! Deterministic random-stream plumbing.
//!
//! Every stochastic quantity in the crate is keyed by a root seed plus a
//! structural address (replicate index, subject index, bootstrap replicate,
//! ...). Two rules make results reproducible and independent of thread
//! count or batch size:
//!
//! 1. each logical unit of work (a subject, a replicate) draws from its own
//!    counter-derived stream, never from a shared sequential generator;
//! 2. aggregation happens in structural order (by index), never in
//!    completion order.
//!
//! [`substream`] hands out the per-unit generators; [`derive_seed`] builds
//! child seeds for nested levels (e.g. root → replicate → subject).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Stream tags used by the experiment harness so that distinct purposes
/// (panel generation, truth simulation, bootstrap resampling) never share a
/// stream even under equal indices.
pub mod tag {
    pub const PANEL: u64 = 0x0070_616e_656c; // "panel"
    pub const TRUTH: u64 = 0x0074_7275_7468; // "truth"
    pub const BOOT: u64 = 0x626f_6f74; // "boot"
}

/// Independent generator for unit `index` under `seed`.
///
/// Uses the ChaCha stream mechanism: all streams share cipher state but are
/// cryptographically decorrelated, so subject `i`'s draws are identical no
/// matter how many other subjects exist or which thread runs them.
pub fn substream(seed: u64, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mix a parent seed with a structural tag into a child seed.
///
/// SplitMix64 finalizer; statistically independent outputs for distinct
/// `(seed, tag)` pairs, stable across platforms.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
