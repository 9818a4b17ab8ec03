//! Counter-based noise: Philox-4x32-10 and Box-Muller.
//!
//! There is no generator state anywhere in this module. Every normal variate
//! consumed by an integration is a pure function of its address
//! `(seed, orbit, step, block)`, so draws are identical no matter which
//! worker computes them or in which order.

use std::f64::consts::PI;

use thiserror::Error;

const PHILOX_M0: u32 = 0xD251_1F53;
const PHILOX_M1: u32 = 0xCD9E_8D57;
const PHILOX_W0: u32 = 0x9E37_79B9;
const PHILOX_W1: u32 = 0xBB67_AE85;
const PHILOX_ROUNDS: usize = 10;

const TWO_POW_32: f64 = 4_294_967_296.0;

/// Third counter word reserved for non-integration streams (batch sampling).
/// Integration steps put the high half of a 64-bit step index there, which
/// never reaches this value in practice.
const AUX_STREAM_TAG: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("box-muller requires u1 > 0, got {0}")]
    NonPositiveUniform(f64),
}

/// Philox key and counter for a single block of four words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CounterKey {
    pub key: [u32; 2],
    pub counter: [u32; 4],
}

impl CounterKey {
    /// Address of the `block`-th Philox block used at absolute integration
    /// step `step` of `orbit`.
    ///
    /// key = (seed low word, orbit); counter = (seed high word, step low
    /// word, step high word, block).
    pub fn for_step(seed: u64, orbit: u32, step: u64, block: u32) -> Self {
        Self {
            key: [seed as u32, orbit],
            counter: [(seed >> 32) as u32, step as u32, (step >> 32) as u32, block],
        }
    }

    /// Address of the `block`-th block of an auxiliary stream (used for
    /// sampling initial conditions and parameters). Disjoint from every
    /// step address with a step index below `2^32 * (2^32 - 1)`.
    pub fn for_aux(seed: u64, orbit: u32, stream: u32, block: u32) -> Self {
        Self {
            key: [seed as u32, orbit],
            counter: [(seed >> 32) as u32, block, AUX_STREAM_TAG, stream],
        }
    }
}

#[inline(always)]
fn mulhilo(a: u32, b: u32) -> (u32, u32) {
    let product = u64::from(a) * u64::from(b);
    ((product >> 32) as u32, product as u32)
}

#[inline(always)]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let (hi0, lo0) = mulhilo(PHILOX_M0, ctr[0]);
    let (hi1, lo1) = mulhilo(PHILOX_M1, ctr[2]);
    [hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0]
}

/// Ten-round Philox-4x32 bijection of `ck.counter` under `ck.key`.
#[inline]
pub fn philox_block(ck: CounterKey) -> [u32; 4] {
    let mut ctr = ck.counter;
    let mut key = ck.key;
    for round in 0..PHILOX_ROUNDS {
        if round > 0 {
            key[0] = key[0].wrapping_add(PHILOX_W0);
            key[1] = key[1].wrapping_add(PHILOX_W1);
        }
        ctr = philox_round(ctr, key);
    }
    ctr
}

/// Maps a word onto (0, 1] as `(word + 1) / 2^32`.
#[inline]
pub fn to_uniform(word: u32) -> f64 {
    (f64::from(word) + 1.0) / TWO_POW_32
}

/// Maps a word onto [0, 1) as `word / 2^32`.
#[inline]
pub fn to_unit_interval(word: u32) -> f64 {
    f64::from(word) / TWO_POW_32
}

/// Box-Muller transform of a uniform pair into two independent standard
/// normals.
pub fn box_muller(u1: f64, u2: f64) -> Result<(f64, f64), RngError> {
    if !(u1 > 0.0) {
        return Err(RngError::NonPositiveUniform(u1));
    }
    Ok(box_muller_unchecked(u1, u2))
}

#[inline(always)]
fn box_muller_unchecked(u1: f64, u2: f64) -> (f64, f64) {
    let radius = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (2.0 * PI * u2).sin_cos();
    (radius * c, radius * s)
}

/// Four standard normals from one Philox block: words (0, 1) and (2, 3) each
/// feed one Box-Muller pair.
#[inline]
pub fn normals_from_block(ck: CounterKey) -> [f64; 4] {
    let w = philox_block(ck);
    let (a, b) = box_muller_unchecked(to_uniform(w[0]), to_uniform(w[1]));
    let (c, d) = box_muller_unchecked(to_uniform(w[2]), to_uniform(w[3]));
    [a, b, c, d]
}

/// Fills `out` with the normals for absolute step `step` of `orbit`.
///
/// Consumes `ceil(out.len() / 4)` blocks; surplus variates of the last block
/// are dropped.
pub fn fill_normals_for_step(seed: u64, orbit: u32, step: u64, out: &mut [f64]) {
    for (block, dst) in out.chunks_mut(4).enumerate() {
        let normals = normals_from_block(CounterKey::for_step(seed, orbit, step, block as u32));
        dst.copy_from_slice(&normals[..dst.len()]);
    }
}

/// Allocating form of [`fill_normals_for_step`].
pub fn normals_for_step(seed: u64, orbit: u32, step: u64, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    fill_normals_for_step(seed, orbit, step, &mut out);
    out
}

/// Sequential `[0, 1)` uniforms from an auxiliary stream of `orbit`.
#[derive(Debug, Clone)]
pub struct AuxUniforms {
    seed: u64,
    orbit: u32,
    stream: u32,
    block: u32,
    buf: [u32; 4],
    pos: usize,
}

impl AuxUniforms {
    pub fn new(seed: u64, orbit: u32, stream: u32) -> Self {
        Self { seed, orbit, stream, block: 0, buf: [0; 4], pos: 4 }
    }

    pub fn next_unit(&mut self) -> f64 {
        if self.pos == 4 {
            self.buf = philox_block(CounterKey::for_aux(self.seed, self.orbit, self.stream, self.block));
            self.block = self.block.wrapping_add(1);
            self.pos = 0;
        }
        let word = self.buf[self.pos];
        self.pos += 1;
        to_unit_interval(word)
    }

    /// Uniform on `[lo, hi)`.
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    // Known-answer vectors from the Random123 distribution (kat_vectors,
    // philox4x32_10).
    #[test]
    fn philox_known_answers() {
        let cases = [
            ([0u32, 0], [0u32, 0, 0, 0], [0x6627_e8d5u32, 0xe169_c58d, 0xbc57_ac4c, 0x9b00_dbd8]),
            (
                [0xffff_ffff, 0xffff_ffff],
                [0xffff_ffff, 0xffff_ffff, 0xffff_ffff, 0xffff_ffff],
                [0x408f_276d, 0x41c8_3b0e, 0xa20b_c7c6, 0x6d54_51fd],
            ),
            (
                [0xa409_3822, 0x299f_31d0],
                [0x243f_6a88, 0x85a3_08d3, 0x1319_8a2e, 0x0370_7344],
                [0xd16c_fe09, 0x94fd_cceb, 0x5001_e420, 0x2412_6ea1],
            ),
        ];
        for (key, counter, expected) in cases {
            assert_eq!(philox_block(CounterKey { key, counter }), expected);
        }
    }

    #[test]
    fn philox_is_pure() {
        let ck = CounterKey::for_step(42, 7, 1000, 3);
        assert_eq!(philox_block(ck), philox_block(ck));
    }

    #[test]
    fn first_65536_counters_do_not_collide() {
        let key = [0, 0];
        let seen: HashSet<[u32; 4]> =
            (0..1u32 << 16).map(|c| philox_block(CounterKey { key, counter: [c, 0, 0, 0] })).collect();
        assert_eq!(seen.len(), 1 << 16);
    }

    #[test]
    fn uniform_endpoints() {
        assert_eq!(to_uniform(0), 2f64.powi(-32));
        assert_eq!(to_uniform(u32::MAX), 1.0);
        assert_eq!(to_uniform((1 << 31) - 1), 0.5);
        assert_eq!(to_unit_interval(0), 0.0);
        assert!(to_unit_interval(u32::MAX) < 1.0);
    }

    #[test]
    fn box_muller_hand_values() {
        assert_eq!(box_muller(1.0, 0.3).unwrap(), (0.0, 0.0));
        let (a, b) = box_muller((-0.5f64).exp(), 0.0).unwrap();
        assert!((a - 1.0).abs() < 1e-15 && b.abs() < 1e-15);
        let (a, b) = box_muller((-2.0f64).exp(), 0.25).unwrap();
        assert!(a.abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
    }

    #[test]
    fn box_muller_rejects_zero() {
        assert_eq!(box_muller(0.0, 0.5), Err(RngError::NonPositiveUniform(0.0)));
        assert!(box_muller(-1.0, 0.5).is_err());
        assert!(box_muller(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn zero_draws_is_empty() {
        assert!(normals_for_step(1, 2, 3, 0).is_empty());
    }

    #[test]
    fn step_draws_match_scalar_walkthrough() {
        let got = normals_for_step(42, 0, 0, 4);
        let w = philox_block(CounterKey { key: [42, 0], counter: [0, 0, 0, 0] });
        let u: Vec<f64> = w.iter().map(|&x| (f64::from(x) + 1.0) / 4_294_967_296.0).collect();
        let pair = |u1: f64, u2: f64| {
            let r = (-2.0 * u1.ln()).sqrt();
            (r * (2.0 * PI * u2).cos(), r * (2.0 * PI * u2).sin())
        };
        let (a, b) = pair(u[0], u[1]);
        let (c, d) = pair(u[2], u[3]);
        assert_eq!(got, vec![a, b, c, d]);
    }

    #[test]
    fn surplus_in_last_block_is_discarded() {
        let six = normals_for_step(9, 3, 11, 6);
        let eight = normals_for_step(9, 3, 11, 8);
        assert_eq!(&six[..], &eight[..6]);
        // The next step starts from a fresh block, not the discarded tail.
        let next = normals_for_step(9, 3, 12, 2);
        assert_ne!(next[..], eight[6..8]);
    }

    #[test]
    fn packing_is_injective_on_small_ranges() {
        let mut seen = HashSet::new();
        for seed in [0u64, 1, 1 << 32, u64::MAX] {
            for orbit in 0..8u32 {
                for step in 0..16u64 {
                    for block in 0..4u32 {
                        assert!(seen.insert(CounterKey::for_step(seed, orbit, step, block)));
                    }
                }
                for stream in 0..2 {
                    for block in 0..8 {
                        assert!(seen.insert(CounterKey::for_aux(seed, orbit, stream, block)));
                    }
                }
            }
        }
    }

    #[test]
    fn aux_stream_ranges() {
        let mut aux = AuxUniforms::new(5, 1, 0);
        for _ in 0..1000 {
            let x = aux.next_in(-PI, PI);
            assert!((-PI..PI).contains(&x));
        }
    }
}
