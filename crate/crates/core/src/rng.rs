//! Counter-based deterministic random streams.
//!
//! Every random decision in the pipeline is drawn from an [`RngStream`]
//! addressed by `(seed, path)`, where the path is a sequence of context
//! labels such as (epoch, sample index, op index). Two streams with the
//! same seed and path produce the same draws on every platform and under
//! any thread count, which is what makes augmentation, weight init, and
//! splitting reproducible independent of worker scheduling.
//!
//! Construction: the key is a 64-bit hash of the seed and path labels
//! (SplitMix64 finalizer), and draws are `mix64(key + i * GOLDEN)` for
//! counter i — a pure counter-based generator with no sequential state
//! beyond the counter itself. Normal deviates use Box-Muller on two
//! uniform draws so the transform is fixed and documented.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const CHILD_SALT: u64 = 0xa076_1d64_78bd_642f;

/// SplitMix64 finalizer (Stafford Mix13).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream addressed by (seed, path).
#[derive(Debug, Clone)]
pub struct RngStream {
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            key: mix64(seed ^ SEED_SALT),
            counter: 0,
        }
    }

    /// Derive an independent substream for a context label.
    ///
    /// The child's draws depend only on the parent's (seed, path) identity,
    /// never on how many values the parent has produced.
    pub fn child(&self, label: u64) -> Self {
        RngStream {
            key: mix64(self.key ^ mix64(label ^ CHILD_SALT)),
            counter: 0,
        }
    }

    /// Walk a whole path of labels at once.
    pub fn descend(&self, path: &[u64]) -> Self {
        path.iter().fold(self.clone(), |s, &l| s.child(l))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.uniform01() * (hi - lo)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform01() < p
    }

    /// Zero-mean normal deviate via Box-Muller.
    ///
    /// Consumes exactly two u64 draws per call; the second Box-Muller
    /// output is discarded so the draw count per call is fixed.
    pub fn normal(&mut self, std: f64) -> f64 {
        let u1 = self.uniform01();
        let u2 = self.uniform01();
        // 1 - u1 lies in (0, 1], keeping the log argument nonzero.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        std * r * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        loop {
            let x = self.next_u64();
            let r = x % n;
            if x - r <= u64::MAX - (n - 1) {
                return r;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            xs.swap(i, j);
        }
    }
}

/// Context labels for the hierarchical stream layout used by the harness.
pub mod ctx {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const TTA: u64 = 5;
    pub const SYNTH: u64 = 6;
}
