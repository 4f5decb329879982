//! Numeric substrate: binary vectors/matrices over {-1, +1}, real vectors,
//! and a hierarchically derivable random stream.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type RealVec = Vec<f64>;

/// Sign with the `sign(0) = +1` convention.
#[inline]
pub fn sign(v: f64) -> i8 {
    if v >= 0.0 {
        1
    } else {
        -1
    }
}

/// A vector over the binary alphabet {-1, +1}.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct BitVec(Vec<i8>);

impl BitVec {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| **v != 1 && **v != -1) {
            return Err(Error::contract(format!("binary element must be -1 or +1, got {bad}")));
        }
        Ok(BitVec(values))
    }

    /// Binarize reals with `sign(0) = +1`.
    pub fn from_signs(values: &[f64]) -> Self {
        BitVec(values.iter().map(|v| sign(*v)).collect())
    }

    pub fn filled(len: usize, value: i8) -> Self {
        assert!(value == 1 || value == -1);
        BitVec(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    /// Overwrite one element; `value` must be ±1.
    pub fn set(&mut self, i: usize, value: i8) {
        assert!(value == 1 || value == -1, "binary element must be ±1");
        self.0[i] = value;
    }

    pub fn negate(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn to_reals(&self) -> RealVec {
        self.0.iter().map(|v| *v as f64).collect()
    }
}

impl TryFrom<Vec<i8>> for BitVec {
    type Error = Error;

    fn try_from(values: Vec<i8>) -> Result<Self> {
        BitVec::new(values)
    }
}

impl From<BitVec> for Vec<i8> {
    fn from(v: BitVec) -> Self {
        v.0
    }
}

/// Row-major binary matrix. On a crossbar, rows are word-lines (inputs)
/// and columns are bit-lines (outputs).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMat {
    rows: usize,
    cols: usize,
    data: Vec<i8>,
}

impl BitMat {
    pub fn new(rows: usize, cols: usize, data: Vec<i8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| *v != 1 && *v != -1) {
            return Err(Error::contract("binary matrix elements must be -1 or +1"));
        }
        Ok(BitMat { rows, cols, data })
    }

    pub fn filled(rows: usize, cols: usize, value: i8) -> Self {
        assert!(value == 1 || value == -1);
        BitMat { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged matrix rows"));
        }
        BitMat::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> i8 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: i8) {
        assert!(value == 1 || value == -1, "binary element must be ±1");
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[i8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<i8>> {
        self.data.chunks(self.cols).map(|c| c.to_vec()).collect()
    }
}

fn mix64(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// A reproducible random stream identified by a 64-bit key.
///
/// The key of a child stream is a pure function of the parent key and the
/// label, never of how many draws the parent has produced, so streams can
/// be derived for (injection, query, pass) coordinates in any order and on
/// any thread.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::from_key(mix64(seed ^ GOLDEN))
    }

    fn from_key(key: u64) -> Self {
        RngStream { key, rng: ChaCha8Rng::seed_from_u64(key) }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn derive(&self, label: u64) -> RngStream {
        let tag = mix64(label.wrapping_add(GOLDEN).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        Self::from_key(mix64(self.key.rotate_left(17) ^ tag))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::contract(format!("probability {p} outside [0, 1]")));
        }
        Ok(self.uniform() < p)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn gaussian(&mut self, mu: f64, sigma: f64) -> Result<f64> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::contract(format!("standard deviation {sigma} must be finite and >= 0")));
        }
        if sigma == 0.0 {
            return Ok(mu);
        }
        Ok(mu + sigma * self.standard_normal())
    }

    /// Uniform index in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population (1/n) variance, computed on data shifted by the first sample
/// so that a constant sequence yields exactly zero.
pub fn population_variance(xs: &[f64]) -> f64 {
    let Some(&first) = xs.first() else {
        return f64::NAN;
    };
    let n = xs.len() as f64;
    let m = xs.iter().map(|x| x - first).sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - first - m).powi(2)).sum::<f64>() / n;
    v.max(0.0)
}

pub fn population_std(xs: &[f64]) -> f64 {
    population_variance(xs).sqrt()
}
