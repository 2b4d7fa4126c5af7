//! Deterministic random substreams.
//!
//! Every random draw in the simulator comes from a stream addressed by a
//! [`StreamLabel`]. The label and the master seed are packed directly into the
//! 256-bit ChaCha key, so the mapping from `(seed, label)` to stream is
//! injective and independent of the order in which streams are created.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

pub type StreamRng = ChaCha12Rng;

/// What a stream is used for. The discriminant is part of the key, so values
/// must never be reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Geometry = 1,
    Shadowing = 2,
    Clusters = 3,
    Taps = 4,
    Symbols = 5,
    PhaseNoise = 6,
    ReceiverNoise = 7,
    Bootstrap = 8,
    Oracle = 9,
}

/// Address of one substream: `(purpose, drop, major, minor)`.
///
/// `major` usually carries a realization index and `minor` a trial index or a
/// flattened `(ue, ap)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamLabel {
    pub purpose: Purpose,
    pub drop: u64,
    pub major: u32,
    pub minor: u64,
}

impl StreamLabel {
    pub fn new(purpose: Purpose, drop: u64, major: u32, minor: u64) -> Self {
        Self {
            purpose,
            drop,
            major,
            minor,
        }
    }
}

/// Factory for labelled substreams under one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomStreams {
    master_seed: u64,
}

impl RandomStreams {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn stream(&self, label: StreamLabel) -> StreamRng {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.master_seed.to_le_bytes());
        key[8..16].copy_from_slice(&label.drop.to_le_bytes());
        let tag = (u64::from(label.purpose as u32) << 32) | u64::from(label.major);
        key[16..24].copy_from_slice(&tag.to_le_bytes());
        key[24..32].copy_from_slice(&label.minor.to_le_bytes());
        ChaCha12Rng::from_seed(key)
    }

    pub fn labelled(&self, purpose: Purpose, drop: u64, major: u32, minor: u64) -> StreamRng {
        self.stream(StreamLabel::new(purpose, drop, major, minor))
    }
}

/// One draw from CN(0, variance).
#[inline]
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let scale = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(scale * re, scale * im)
}

#[inline]
pub fn real_gaussian<R: Rng + ?Sized>(rng: &mut R, std_dev: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    std_dev * z
}
