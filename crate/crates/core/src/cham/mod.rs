//! CHAM — the conditional hands modulator, the only trainable component.
//!
//! Hand-crop features are conditioned (2D positional encoding plus a
//! three-layer bidirectional cross-attention encoder when both hands are
//! detected, bypassed otherwise), pushed through per-block zero-initialized
//! 1×1 projections per side, realigned into body grid space by inverting the
//! crop affine with zero padding, and merged across sides with an
//! element-wise maximum into one modulation grid per backbone block.
//!
//! Every branch projection starts at exactly zero, so a freshly initialized
//! modulator is a bit-level no-op on the frozen body backbone.

mod backward;
mod forward;

pub use backward::{cham_backward, ChamGrads};
pub use forward::{
    build_condition, cham_forward, cross_attention_encode, merge_hands, project_per_block,
    realign_to_body, AttentionTrace, ChamTrace, ConditionTrace,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::TokenGrid;
use crate::rng;

pub const ATTENTION_LAYERS: usize = 3;

#[derive(Debug, Error)]
pub enum ChamError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(&'static str),
    #[error("grid error: {0}")]
    Grid(#[from] crate::geom::GeomError),
}

/// Channel-wise linear map applied per token (a 1×1 convolution).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1x1 {
    /// C×C, row-major: output channel i ← Σ_c w[i·C+c]·x[c] + b[i].
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv1x1 {
    pub fn zeros(c: usize) -> Self {
        Conv1x1 {
            w: vec![0.0; c * c],
            b: vec![0.0; c],
        }
    }

    pub fn identity(c: usize) -> Self {
        let mut conv = Conv1x1::zeros(c);
        for i in 0..c {
            conv.w[i * c + i] = 1.0;
        }
        conv
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionLayer {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
    pub ff1: Vec<f64>,
    pub ff1_b: Vec<f64>,
    pub ff2: Vec<f64>,
    pub ff2_b: Vec<f64>,
}

impl AttentionLayer {
    pub fn zeros(c: usize) -> Self {
        AttentionLayer {
            wq: vec![0.0; c * c],
            wk: vec![0.0; c * c],
            wv: vec![0.0; c * c],
            wo: vec![0.0; c * c],
            ff1: vec![0.0; c * c],
            ff1_b: vec![0.0; c],
            ff2: vec![0.0; c * c],
            ff2_b: vec![0.0; c],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamParams {
    pub depth: usize,
    pub channels: usize,
    pub attention: Vec<AttentionLayer>,
    pub left_branch: Vec<Conv1x1>,
    pub right_branch: Vec<Conv1x1>,
}

/// D body-resolution grids, one additive modulation per backbone block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationStack {
    pub grids: Vec<TokenGrid>,
}

impl ModulationStack {
    pub fn is_all_zero(&self) -> bool {
        self.grids.iter().all(|g| g.data.iter().all(|v| *v == 0.0))
    }
}

/// Zero-initialized branches, seeded cross-attention.
pub fn init_cham(seed: u64, depth: usize, channels: usize) -> ChamParams {
    let mut r = rng::seeded(seed ^ 0x636861_6d);
    let c = channels;
    let scale = 1.0 / (c as f64).sqrt();
    let mat = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        rng::normal_vec(r, c * c).iter().map(|v| v * scale).collect()
    };
    let attention = (0..ATTENTION_LAYERS)
        .map(|_| AttentionLayer {
            wq: mat(&mut r),
            wk: mat(&mut r),
            wv: mat(&mut r),
            wo: mat(&mut r),
            ff1: mat(&mut r),
            ff1_b: vec![0.0; c],
            ff2: mat(&mut r),
            ff2_b: vec![0.0; c],
        })
        .collect();
    ChamParams {
        depth,
        channels,
        attention,
        left_branch: (0..depth).map(|_| Conv1x1::zeros(c)).collect(),
        right_branch: (0..depth).map(|_| Conv1x1::zeros(c)).collect(),
    }
}

impl ChamParams {
    pub fn zeros_like(&self) -> ChamParams {
        ChamParams {
            depth: self.depth,
            channels: self.channels,
            attention: (0..self.attention.len())
                .map(|_| AttentionLayer::zeros(self.channels))
                .collect(),
            left_branch: (0..self.depth).map(|_| Conv1x1::zeros(self.channels)).collect(),
            right_branch: (0..self.depth).map(|_| Conv1x1::zeros(self.channels)).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        let c = self.channels;
        let branch = self.depth * (c * c + c);
        let attn = self.attention.len() * (4 * c * c + 2 * (c * c + c));
        2 * branch + attn
    }

    /// Flat parameter vector (branches first, then attention), used by the
    /// finite-difference suite and the optimizer.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for branch in [&self.left_branch, &self.right_branch] {
            for conv in branch {
                out.extend_from_slice(&conv.w);
                out.extend_from_slice(&conv.b);
            }
        }
        for layer in &self.attention {
            for m in [&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.ff1] {
                out.extend_from_slice(m);
            }
            out.extend_from_slice(&layer.ff1_b);
            out.extend_from_slice(&layer.ff2);
            out.extend_from_slice(&layer.ff2_b);
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count());
        let mut at = 0usize;
        let mut take = |len: usize| {
            let s = &flat[at..at + len];
            at += len;
            s.to_vec()
        };
        let c = self.channels;
        for side in 0..2 {
            for k in 0..self.depth {
                let conv = if side == 0 {
                    &mut self.left_branch[k]
                } else {
                    &mut self.right_branch[k]
                };
                conv.w = take(c * c);
                conv.b = take(c);
            }
        }
        for layer in self.attention.iter_mut() {
            layer.wq = take(c * c);
            layer.wk = take(c * c);
            layer.wv = take(c * c);
            layer.wo = take(c * c);
            layer.ff1 = take(c * c);
            layer.ff1_b = take(c);
            layer.ff2 = take(c * c);
            layer.ff2_b = take(c);
        }
    }

    /// `self += other · scale`, used by the SGD update.
    pub fn add_scaled(&mut self, other: &ChamParams, scale: f64) {
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        };
        for (a, b) in self.left_branch.iter_mut().zip(&other.left_branch) {
            add(&mut a.w, &b.w);
            add(&mut a.b, &b.b);
        }
        for (a, b) in self.right_branch.iter_mut().zip(&other.right_branch) {
            add(&mut a.w, &b.w);
            add(&mut a.b, &b.b);
        }
        for (a, b) in self.attention.iter_mut().zip(&other.attention) {
            add(&mut a.wq, &b.wq);
            add(&mut a.wk, &b.wk);
            add(&mut a.wv, &b.wv);
            add(&mut a.wo, &b.wo);
            add(&mut a.ff1, &b.ff1);
            add(&mut a.ff1_b, &b.ff1_b);
            add(&mut a.ff2, &b.ff2);
            add(&mut a.ff2_b, &b.ff2_b);
        }
    }
}

#[cfg(test)]
mod param_tests {
    use super::*;

    #[test]
    fn branches_start_exactly_zero() {
        let p = init_cham(3, 6, 32);
        for conv in p.left_branch.iter().chain(&p.right_branch) {
            assert!(conv.w.iter().all(|v| *v == 0.0));
            assert!(conv.b.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn init_is_deterministic() {
        assert_eq!(init_cham(9, 4, 16), init_cham(9, 4, 16));
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let d = 6;
        let c = 32;
        let p = init_cham(1, d, c);
        let expected = 2 * d * (c * c + c) + 3 * (6 * c * c + 2 * c);
        assert_eq!(p.param_count(), expected);
        assert_eq!(p.flatten().len(), expected);
    }

    #[test]
    fn flatten_round_trips() {
        let p = init_cham(5, 3, 8);
        let flat = p.flatten();
        let mut q = p.zeros_like();
        q.assign_flat(&flat);
        assert_eq!(p, q);
    }
}
