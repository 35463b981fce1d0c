//! The frozen hand estimator stand-in.
//!
//! Plays the role of a strong pretrained hand model: its fixed channel map
//! produces the final-layer tokens handed to the modulator, and its decoder
//! reads finger pose, hand shape, and the camera-frame wrist orientation out
//! of the protocol payload carried by the crop tokens. The decoder is
//! constructed against the rendering protocol rather than trained — the toy
//! analogue of "pretrained on hand-centric data".

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::data::protocol;
use crate::geom::{axis_angle_to_matrix, Affine2D, AxisAngle, RotationMatrix, TokenGrid};
use crate::model::HandSide;
use crate::rng;

use super::BackboneError;

pub const HAND_GRID: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandBackboneParams {
    pub channels: usize,
    /// C×C orthogonal token map (final-layer feature transform), row-major.
    pub token_map: Vec<f64>,
    /// Decode rows: θ(45) + β(10) + wrist_aa(3), applied to the mean-pooled
    /// final tokens. Folded with the token map's inverse at construction.
    pub decode_w: Vec<f64>,
    pub frozen: bool,
}

/// One observed hand: detection flag, crop placement, final-layer tokens,
/// and the decoded predictions. Non-detected hands carry all-zero tokens and
/// no predictions.
#[derive(Debug, Clone)]
pub struct HandObservation {
    pub side: HandSide,
    pub detected: bool,
    pub crop_affine: Affine2D,
    pub tokens: TokenGrid,
    pub theta: Option<Vec<AxisAngle>>,
    pub beta: Option<Vec<f64>>,
    /// Camera-frame wrist orientation decoded from the hand stream —
    /// body-unaware; only the wrist-copy baseline consumes it.
    pub wrist_cam: Option<RotationMatrix>,
}

impl HandObservation {
    pub fn undetected(side: HandSide, channels: usize, full_image_affine: Affine2D) -> Self {
        HandObservation {
            side,
            detected: false,
            crop_affine: full_image_affine,
            tokens: TokenGrid::zeros(HAND_GRID, HAND_GRID, channels, full_image_affine),
            theta: None,
            beta: None,
            wrist_cam: None,
        }
    }
}

/// Deterministic construction: a seeded orthogonal token map composed with
/// the protocol decoder.
pub fn init_hand_backbone(seed: u64, channels: usize) -> HandBackboneParams {
    assert_eq!(
        channels,
        protocol::CHANNELS,
        "hand decoder is defined for the protocol channel count"
    );
    let c = channels;
    // Orthogonalize a random matrix by Gram-Schmidt for a well-conditioned,
    // exactly invertible token map.
    let mut r = rng::seeded(seed ^ 0x68616e64);
    let mut q: Vec<Vec<f64>> = (0..c).map(|_| rng::normal_vec(&mut r, c)).collect();
    for i in 0..c {
        for j in 0..i {
            let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            let qj = q[j].clone();
            for (v, w) in q[i].iter_mut().zip(&qj) {
                *v -= dot * w;
            }
        }
        let norm: f64 = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in q[i].iter_mut() {
            *v /= norm;
        }
    }
    let token_map: Vec<f64> = q.iter().flatten().copied().collect();

    // Protocol selector: pooled payload channels → (θ, β, wrist 6D), with
    // the render gain divided out. θ rows expand the latent through Θ.
    let out_dim = protocol::HAND_THETA_DIM + protocol::HAND_SHAPE_DIM + protocol::WRIST_6D_DIM;
    let synth = protocol::theta_synthesis();
    let inv_gain = 1.0 / protocol::HAND_PAYLOAD_GAIN;
    let mut select = vec![0.0; out_dim * c];
    for row in 0..protocol::HAND_THETA_DIM {
        for l in 0..protocol::HAND_LATENT_DIM {
            select[row * c + protocol::HAND_PAYLOAD_OFFSET + l] =
                synth[row * protocol::HAND_LATENT_DIM + l] * inv_gain;
        }
    }
    for b in 0..protocol::HAND_SHAPE_DIM {
        let row = protocol::HAND_THETA_DIM + b;
        select[row * c + protocol::HAND_PAYLOAD_OFFSET + protocol::HAND_LATENT_DIM + b] = inv_gain;
    }
    for k in 0..protocol::WRIST_6D_DIM {
        let row = protocol::HAND_THETA_DIM + protocol::HAND_SHAPE_DIM + k;
        select[row * c + protocol::HAND_PAYLOAD_OFFSET + protocol::HAND_LATENT_DIM + protocol::HAND_SHAPE_DIM + k] = inv_gain;
    }

    // decode = select · Qᵀ, so decode(pool(Q·tokens)) = select(pool(tokens)).
    let mut decode_w = vec![0.0; out_dim * c];
    for row in 0..out_dim {
        for col in 0..c {
            let mut acc = 0.0;
            for k in 0..c {
                // Qᵀ[k][col] = Q[col][k]  → (select·Qᵀ)[row][col] = Σ_k select[row][k]·Q[col][k]
                acc += select[row * c + k] * token_map[col * c + k];
            }
            decode_w[row * c + col] = acc;
        }
    }

    HandBackboneParams {
        channels,
        token_map,
        decode_w,
        frozen: true,
    }
}

/// Runs the frozen hand backbone on an 8×8 crop grid.
pub fn hand_backbone_forward(
    params: &HandBackboneParams,
    side: HandSide,
    crop_tokens: &TokenGrid,
) -> Result<HandObservation, BackboneError> {
    let c = params.channels;
    if crop_tokens.h != HAND_GRID || crop_tokens.w != HAND_GRID || crop_tokens.channels != c {
        return Err(BackboneError::DimMismatch("hand crop must be 8×8×C"));
    }
    let n = HAND_GRID * HAND_GRID;

    // Final-layer tokens: per-token orthogonal channel map.
    let mut tokens = TokenGrid::zeros(HAND_GRID, HAND_GRID, c, crop_tokens.affine);
    for t in 0..n {
        let src = &crop_tokens.data[t * c..(t + 1) * c];
        let dst = &mut tokens.data[t * c..(t + 1) * c];
        for (i, d) in dst.iter_mut().enumerate() {
            let row = &params.token_map[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (w, &v) in row.iter().zip(src) {
                acc += w * v;
            }
            *d = acc;
        }
    }

    let mut pooled = vec![0.0; c];
    for t in 0..n {
        for (p, &v) in pooled.iter_mut().zip(&tokens.data[t * c..(t + 1) * c]) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n as f64;
    }

    let out_dim = protocol::HAND_THETA_DIM + protocol::HAND_SHAPE_DIM + protocol::WRIST_6D_DIM;
    let mut decoded = vec![0.0; out_dim];
    for (row, d) in decoded.iter_mut().enumerate() {
        let w = &params.decode_w[row * c..(row + 1) * c];
        let mut acc = 0.0;
        for (wv, &pv) in w.iter().zip(&pooled) {
            acc += wv * pv;
        }
        *d = acc;
    }

    let theta: Vec<AxisAngle> = (0..15)
        .map(|j| AxisAngle(Vector3::new(decoded[3 * j], decoded[3 * j + 1], decoded[3 * j + 2])))
        .collect();
    let beta = decoded[protocol::HAND_THETA_DIM..protocol::HAND_THETA_DIM + protocol::HAND_SHAPE_DIM].to_vec();
    let woff = protocol::HAND_THETA_DIM + protocol::HAND_SHAPE_DIM;
    let six: [f64; 6] = decoded[woff..woff + protocol::WRIST_6D_DIM].try_into().unwrap();
    let wrist_cam = protocol::rotation_from_6d(&six);

    Ok(HandObservation {
        side,
        detected: true,
        crop_affine: crop_tokens.affine,
        tokens,
        theta: Some(theta),
        beta: Some(beta),
        wrist_cam: Some(wrist_cam),
    })
}
