#![allow(dead_code)]

use cimtest::engine::{BatchNorm, BinaryNetwork, DropoutConfig, Layer};
use cimtest::tensor::{BitMat, BitVec, RngStream};

pub fn random_bits(len: usize, s: &mut RngStream) -> BitVec {
    BitVec::new((0..len).map(|_| if s.uniform() < 0.5 { -1 } else { 1 }).collect()).unwrap()
}

pub fn random_mat(rows: usize, cols: usize, s: &mut RngStream) -> BitMat {
    BitMat::new(rows, cols, (0..rows * cols).map(|_| if s.uniform() < 0.5 { -1 } else { 1 }).collect()).unwrap()
}

/// Random weights with batch norm that keeps hidden activations balanced.
pub fn random_net(dims: &[usize], dropout: DropoutConfig, seed: u64) -> BinaryNetwork {
    let mut s = RngStream::new(seed);
    let layers = dims
        .windows(2)
        .map(|w| {
            let mut bn = BatchNorm::identity(w[1]);
            for j in 0..w[1] {
                bn.gamma[j] = 0.5 + s.uniform();
                bn.beta[j] = s.uniform() - 0.5;
                bn.mean[j] = (s.uniform() - 0.5) * 2.0;
                bn.var[j] = w[0] as f64;
            }
            Layer::new(random_mat(w[0], w[1], &mut s), bn).unwrap()
        })
        .collect();
    BinaryNetwork::new(layers, dropout).unwrap()
}
