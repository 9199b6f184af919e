//! Counter-based random streams.
//!
//! Every draw is a pure function of `(base_seed, run_index, t, stream, lane)`,
//! so trajectories do not depend on execution order or thread count, and
//! changing what one stream consumes never shifts another stream.

use rand::RngCore;

/// Stream carrying the uniform draw `r(t)` that decides packet failure.
pub const FAILURE_STREAM: u32 = 0;
/// Stream for the plant-side disturbance `w(t)`.
pub const DISTURBANCE_STREAM: u32 = 1;
/// Stream for the control-input disturbance `w_C(t)`.
pub const INPUT_DISTURBANCE_STREAM: u32 = 2;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-run key; derives per-step streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunKey(u64);

impl RunKey {
    pub fn new(base_seed: u64, run_index: u64) -> Self {
        Self(mix(mix(base_seed.wrapping_add(GOLDEN)) ^ run_index.wrapping_mul(GOLDEN)))
    }

    pub fn stream(&self, t: u64, stream: u32) -> CounterRng {
        let step = mix(self.0 ^ t.wrapping_mul(0xD1B5_4A32_D192_ED03));
        CounterRng { state: mix(step ^ (u64::from(stream) + 1).wrapping_mul(0xA076_1D64_78BD_642F)), counter: 0 }
    }

    /// The 64-bit key all of this run's streams derive from.
    pub fn raw(&self) -> u64 {
        self.0
    }

    /// First uniform of the failure stream at `t`.
    pub fn failure_draw(&self, t: u64) -> f64 {
        self.stream(t, FAILURE_STREAM).uniform()
    }
}

/// SplitMix64 sequence started from a keyed state.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
    counter: u64,
}

impl CounterRng {
    /// Uniform in `[0, 1)` with 53 bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for CounterRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.state.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        rand::rand_core::impls::fill_bytes_via_next(self, dst)
    }
}
