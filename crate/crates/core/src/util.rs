//! Small shared utilities: compensated summation and seeded RNG streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Neumaier's variant of Kahan summation.
///
/// All mass audits in this crate are stated at relative 1e-12 over up to
/// millions of terms, which plain `f64` accumulation does not reliably meet;
/// every such sum goes through this accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum an iterator with compensation.
pub fn comp_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = NeumaierSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Named substreams of one master seed.
///
/// Each logical source of randomness in a run (placement, offsets, sampling,
/// replication ids, ...) gets its own stream id, so adding draws to one
/// consumer never perturbs another. ChaCha's 64-bit stream field makes this
/// exact rather than a convention.
pub fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids used across the crate. Kept in one place so runs are auditable.
pub mod streams {
    pub const PLACEMENT: u64 = 1;
    pub const MC_ORACLE: u64 = 2;
    pub const SAMPLING: u64 = 3;
    pub const LABELS: u64 = 4;
    pub const REPLICATION: u64 = 5;
    pub const GEOMETRY: u64 = 6;
}

/// Derive a child seed from a master seed and a salt (level index, stage
/// index, replication id). Later children never depend on how much
/// randomness earlier ones consumed.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform draw from the half-open interval (0, 1].
///
/// `gen::<f64>()` yields [0, 1); reflecting it keeps 0 out of the support,
/// which matters because the square's coordinate domain is (0,1] and kernel
/// queries on the local axes are degenerate.
pub fn unit_open_closed(rng: &mut impl rand::Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}
