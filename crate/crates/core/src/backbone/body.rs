//! The frozen whole-body estimator stand-in.
//!
//! Each block is a token-wise linear mix followed by a channel MLP with tanh,
//! wrapped in a residual: `X ← A + tanh((mix·A + tb)·W + b)` where
//! `A = X + modulation[k]`. Modulation enters at the block input, so an
//! all-zero modulation stack reproduces the unmodulated forward bit for bit.
//! The pose head maps mean-pooled final tokens to the pose state fields, with
//! axis-angle outputs kept below π by a smooth norm clamp.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cham::ModulationStack;
use crate::geom::{axis_angle_to_matrix, rodrigues_jacobian, AxisAngle, TokenGrid};
use crate::model::PoseState;
use crate::rng;

use super::BackboneError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BodyBackboneConfig {
    pub depth: usize,
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub joint_count: usize,
    pub shape_dim: usize,
    /// Added to the raw translation head output so the initial prediction
    /// sits at a valid camera depth.
    pub nominal_translation: [f64; 3],
}

impl Default for BodyBackboneConfig {
    fn default() -> Self {
        BodyBackboneConfig {
            depth: 6,
            channels: 32,
            grid_h: 12,
            grid_w: 16,
            joint_count: 22,
            shape_dim: 10,
            nominal_translation: [0.0, 0.0, crate::data::protocol::NOMINAL_DEPTH],
        }
    }
}

impl BodyBackboneConfig {
    pub fn tokens(&self) -> usize {
        self.grid_h * self.grid_w
    }

    /// Head output width: per-joint axis-angle (root first), translation,
    /// shape.
    pub fn head_dim(&self) -> usize {
        3 * self.joint_count + 3 + self.shape_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyBlock {
    /// N×N token mixing weights, row-major.
    pub token_mix: Vec<f64>,
    /// Per-token bias, broadcast across channels.
    pub token_bias: Vec<f64>,
    /// C×C channel map, row-major (input channel → output channel).
    pub mlp_w: Vec<f64>,
    pub mlp_b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyBackboneParams {
    pub config: BodyBackboneConfig,
    pub blocks: Vec<BodyBlock>,
    /// head_dim × C head weights, row-major.
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
    pub frozen: bool,
}

/// Deterministic initialization. Produces exactly `depth` fusion points.
pub fn init_body_backbone(seed: u64, config: BodyBackboneConfig) -> BodyBackboneParams {
    let mut r = rng::seeded(seed);
    let n = config.tokens();
    let c = config.channels;
    let mix_scale = 0.5 / (n as f64).sqrt();
    let w_scale = 0.8 / (c as f64).sqrt();
    let blocks = (0..config.depth)
        .map(|_| {
            let mut token_mix = vec![0.0; n * n];
            for (i, v) in token_mix.iter_mut().enumerate() {
                *v = rng::normal(&mut r) * mix_scale;
                if i % (n + 1) == 0 {
                    *v += 1.0; // keep the mix near identity so depth preserves signal
                }
            }
            BodyBlock {
                token_mix,
                token_bias: rng::normal_vec(&mut r, n).iter().map(|v| v * 0.01).collect(),
                mlp_w: rng::normal_vec(&mut r, c * c).iter().map(|v| v * w_scale).collect(),
                mlp_b: rng::normal_vec(&mut r, c).iter().map(|v| v * 0.01).collect(),
            }
        })
        .collect();
    let head_dim = config.head_dim();
    let head_scale = 0.3 / (c as f64).sqrt();
    BodyBackboneParams {
        blocks,
        head_w: rng::normal_vec(&mut r, head_dim * c)
            .iter()
            .map(|v| v * head_scale)
            .collect(),
        head_b: vec![0.0; head_dim],
        frozen: true,
        config,
    }
}

/// Forward cache for the backward pass.
#[derive(Debug, Clone)]
pub struct BodyForwardTrace {
    /// Block inputs `A_k = X_k + mod_k`, one per block (the per-block token
    /// snapshots).
    pub block_inputs: Vec<Vec<f64>>,
    /// Mixed tokens `M_k = mix·A_k + tb` per block.
    pub mixed: Vec<Vec<f64>>,
    /// `H_k = tanh(M_k·W + b)` per block.
    pub activations: Vec<Vec<f64>>,
    pub final_tokens: Vec<f64>,
    pub pooled: Vec<f64>,
    pub raw_head: Vec<f64>,
    pub decode: PoseDecode,
}

/// Decoded head outputs: clamped axis-angle per joint (root first), the
/// rotations they exponentiate to, translation, and shape.
#[derive(Debug, Clone)]
pub struct PoseDecode {
    pub aa: Vec<Vector3<f64>>,
    pub pose: PoseState,
}

const SOFT_CLAMP_EPS: f64 = 1e-8;

/// Smoothly rescales `v` so its norm stays below π: `v · π·tanh(‖v‖/π)/‖v‖`.
fn soft_clamp(v: Vector3<f64>) -> Vector3<f64> {
    let r = v.norm();
    if r < SOFT_CLAMP_EPS {
        return v;
    }
    let scale = std::f64::consts::PI * (r / std::f64::consts::PI).tanh() / r;
    v * scale
}

/// VJP of [`soft_clamp`]: given the gradient on the clamped vector, returns
/// the gradient on the raw vector.
fn soft_clamp_vjp(v_raw: Vector3<f64>, d_clamped: Vector3<f64>) -> Vector3<f64> {
    let r = v_raw.norm();
    if r < SOFT_CLAMP_EPS {
        return d_clamped;
    }
    let pi = std::f64::consts::PI;
    let t = (r / pi).tanh();
    let g = pi * t / r;
    // g'(r) = (sech²(r/π)·r − π·tanh(r/π)) / r²
    let sech2 = 1.0 - t * t;
    let gprime = (sech2 * r - pi * t) / (r * r);
    // ∂v'_i/∂v_j = g δ_ij + v_i v_j g'(r)/r  (symmetric)
    d_clamped * g + v_raw * (v_raw.dot(&d_clamped) * gprime / r)
}

fn decode_head(config: &BodyBackboneConfig, raw: &[f64]) -> PoseDecode {
    let j = config.joint_count;
    let mut aa = Vec::with_capacity(j);
    for slot in 0..j {
        aa.push(soft_clamp(Vector3::new(
            raw[3 * slot],
            raw[3 * slot + 1],
            raw[3 * slot + 2],
        )));
    }
    let rot: Vec<_> = aa.iter().map(|v| axis_angle_to_matrix(&AxisAngle(*v))).collect();
    let t_off = 3 * j;
    let nominal = config.nominal_translation;
    let pose = PoseState {
        root_orientation: rot[0],
        root_translation: Vector3::new(
            raw[t_off] + nominal[0],
            raw[t_off + 1] + nominal[1],
            raw[t_off + 2] + nominal[2],
        ),
        local_rotations: rot[1..].to_vec(),
        shape: raw[t_off + 3..t_off + 3 + config.shape_dim].to_vec(),
    };
    PoseDecode { aa, pose }
}

/// Runs the frozen backbone. `modulation`, when present, must carry exactly
/// `depth` grids at body resolution; an all-zero stack (or `None`) leaves the
/// output bit-identical to the unmodulated forward.
pub fn body_backbone_forward(
    params: &BodyBackboneParams,
    input: &TokenGrid,
    modulation: Option<&ModulationStack>,
) -> Result<(PoseState, BodyForwardTrace), BackboneError> {
    let cfg = &params.config;
    let n = cfg.tokens();
    let c = cfg.channels;
    if input.h != cfg.grid_h || input.w != cfg.grid_w || input.channels != c {
        return Err(BackboneError::DimMismatch("input grid shape"));
    }
    if let Some(stack) = modulation {
        if stack.grids.len() != cfg.depth {
            return Err(BackboneError::DimMismatch("modulation depth"));
        }
        for g in &stack.grids {
            if g.h != cfg.grid_h || g.w != cfg.grid_w || g.channels != c {
                return Err(BackboneError::DimMismatch("modulation grid shape"));
            }
        }
    }

    let mut x = input.data.clone();
    let mut block_inputs = Vec::with_capacity(cfg.depth);
    let mut mixed_all = Vec::with_capacity(cfg.depth);
    let mut act_all = Vec::with_capacity(cfg.depth);

    for (k, block) in params.blocks.iter().enumerate() {
        // A = X + mod_k. Exact-zero modulation cells leave X untouched so the
        // zero-init stack is a bit-level no-op.
        let a = match modulation {
            Some(stack) => {
                let m = &stack.grids[k].data;
                let mut a = x.clone();
                for (av, &mv) in a.iter_mut().zip(m) {
                    if mv != 0.0 {
                        *av += mv;
                    }
                }
                a
            }
            None => x.clone(),
        };

        // M = mix·A + tb (tb broadcast across channels).
        let mut mixed = vec![0.0; n * c];
        for t in 0..n {
            let out = &mut mixed[t * c..(t + 1) * c];
            for cc in out.iter_mut() {
                *cc = block.token_bias[t];
            }
            let row = &block.token_mix[t * n..(t + 1) * n];
            for (s, &m) in row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let src = &a[s * c..(s + 1) * c];
                for (o, &v) in out.iter_mut().zip(src) {
                    *o += m * v;
                }
            }
        }

        // H = tanh(M·W + b); X ← A + H.
        let mut h = vec![0.0; n * c];
        for t in 0..n {
            let m_row = &mixed[t * c..(t + 1) * c];
            let h_row = &mut h[t * c..(t + 1) * c];
            for (i, hv) in h_row.iter_mut().enumerate() {
                let mut acc = block.mlp_b[i];
                for (cc, &mv) in m_row.iter().enumerate() {
                    acc += mv * block.mlp_w[cc * c + i];
                }
                *hv = acc.tanh();
            }
        }
        let mut next = a.clone();
        for (nv, &hv) in next.iter_mut().zip(&h) {
            *nv += hv;
        }
        block_inputs.push(a);
        mixed_all.push(mixed);
        act_all.push(h);
        x = next;
    }

    let mut pooled = vec![0.0; c];
    for t in 0..n {
        for (p, &v) in pooled.iter_mut().zip(&x[t * c..(t + 1) * c]) {
            *p += v;
        }
    }
    for p in pooled.iter_mut() {
        *p /= n as f64;
    }

    let head_dim = cfg.head_dim();
    let mut raw = params.head_b.clone();
    for (p, r) in raw.iter_mut().enumerate() {
        let row = &params.head_w[p * c..(p + 1) * c];
        let mut acc = 0.0;
        for (w, &pv) in row.iter().zip(&pooled) {
            acc += w * pv;
        }
        *r += acc;
    }
    debug_assert_eq!(raw.len(), head_dim);

    let decode = decode_head(cfg, &raw);
    let pose = decode.pose.clone();
    Ok((
        pose,
        BodyForwardTrace {
            block_inputs,
            mixed: mixed_all,
            activations: act_all,
            final_tokens: x,
            pooled,
            raw_head: raw,
            decode,
        },
    ))
}

/// Gradients on the backbone's own parameters (used by pretraining).
#[derive(Debug, Clone)]
pub struct BodyParamGrads {
    pub blocks: Vec<BodyBlock>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl BodyParamGrads {
    pub fn zeros(params: &BodyBackboneParams) -> Self {
        let n = params.config.tokens();
        let c = params.config.channels;
        BodyParamGrads {
            blocks: (0..params.config.depth)
                .map(|_| BodyBlock {
                    token_mix: vec![0.0; n * n],
                    token_bias: vec![0.0; n],
                    mlp_w: vec![0.0; c * c],
                    mlp_b: vec![0.0; c],
                })
                .collect(),
            head_w: vec![0.0; params.head_w.len()],
            head_b: vec![0.0; params.head_b.len()],
        }
    }
}

/// Gradient of the head decode: maps gradients on the decoded quantities
/// (direct axis-angle terms, rotation-matrix terms, translation, shape) back
/// to the raw head vector.
pub fn decode_backward(
    config: &BodyBackboneConfig,
    trace: &BodyForwardTrace,
    d_aa_direct: &[Vector3<f64>],
    d_rot: &[Matrix3<f64>],
    d_translation: Vector3<f64>,
    d_shape: &[f64],
) -> Vec<f64> {
    let j = config.joint_count;
    let mut d_raw = vec![0.0; config.head_dim()];
    for slot in 0..j {
        let mut d_aa = d_aa_direct[slot];
        let dr = &d_rot[slot];
        if dr.amax() != 0.0 {
            let jac = rodrigues_jacobian(&AxisAngle(trace.decode.aa[slot]));
            for k in 0..3 {
                d_aa[k] += jac[k].component_mul(dr).sum();
            }
        }
        let raw_v = Vector3::new(
            trace.raw_head[3 * slot],
            trace.raw_head[3 * slot + 1],
            trace.raw_head[3 * slot + 2],
        );
        let d = soft_clamp_vjp(raw_v, d_aa);
        d_raw[3 * slot] = d.x;
        d_raw[3 * slot + 1] = d.y;
        d_raw[3 * slot + 2] = d.z;
    }
    let t_off = 3 * j;
    d_raw[t_off] = d_translation.x;
    d_raw[t_off + 1] = d_translation.y;
    d_raw[t_off + 2] = d_translation.z;
    d_raw[t_off + 3..t_off + 3 + config.shape_dim].copy_from_slice(d_shape);
    d_raw
}

/// Reverse pass from a gradient on the raw head vector.
///
/// Returns the modulation gradients (one grid-shaped buffer per block) and,
/// when `param_grads` is given, accumulates the backbone parameter gradients
/// for pretraining.
pub fn body_backbone_backward(
    params: &BodyBackboneParams,
    trace: &BodyForwardTrace,
    d_raw: &[f64],
    mut param_grads: Option<&mut BodyParamGrads>,
) -> Vec<Vec<f64>> {
    let cfg = &params.config;
    let n = cfg.tokens();
    let c = cfg.channels;

    // Head backward.
    let mut d_pooled = vec![0.0; c];
    for (p, &g) in d_raw.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        let row = &params.head_w[p * c..(p + 1) * c];
        for (dp, &w) in d_pooled.iter_mut().zip(row) {
            *dp += g * w;
        }
    }
    if let Some(pg) = param_grads.as_deref_mut() {
        for (p, &g) in d_raw.iter().enumerate() {
            pg.head_b[p] += g;
            let row = &mut pg.head_w[p * c..(p + 1) * c];
            for (dw, &pv) in row.iter_mut().zip(&trace.pooled) {
                *dw += g * pv;
            }
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut d_x = vec![0.0; n * c];
    for t in 0..n {
        for (dx, &dp) in d_x[t * c..(t + 1) * c].iter_mut().zip(&d_pooled) {
            *dx += dp * inv_n;
        }
    }

    let mut d_mods = vec![vec![0.0; n * c]; cfg.depth];
    for k in (0..cfg.depth).rev() {
        let block = &params.blocks[k];
        let a = &trace.block_inputs[k];
        let mixed = &trace.mixed[k];
        let h = &trace.activations[k];

        // X_next = A + H: residual grad passes straight to A, plus through H.
        let mut d_u = vec![0.0; n * c];
        for i in 0..n * c {
            d_u[i] = d_x[i] * (1.0 - h[i] * h[i]);
        }

        // U = M·W + b.
        let mut d_m = vec![0.0; n * c];
        for t in 0..n {
            let du_row = &d_u[t * c..(t + 1) * c];
            let dm_row = &mut d_m[t * c..(t + 1) * c];
            for (cc, dm) in dm_row.iter_mut().enumerate() {
                let wrow = &block.mlp_w[cc * c..(cc + 1) * c];
                let mut acc = 0.0;
                for (w, &du) in wrow.iter().zip(du_row) {
                    acc += w * du;
                }
                *dm = acc;
            }
        }
        if let Some(pg) = param_grads.as_deref_mut() {
            let g = &mut pg.blocks[k];
            for t in 0..n {
                let du_row = &d_u[t * c..(t + 1) * c];
                let m_row = &mixed[t * c..(t + 1) * c];
                for (cc, &mv) in m_row.iter().enumerate() {
                    let wrow = &mut g.mlp_w[cc * c..(cc + 1) * c];
                    for (dw, &du) in wrow.iter_mut().zip(du_row) {
                        *dw += mv * du;
                    }
                }
                for (db, &du) in g.mlp_b.iter_mut().zip(du_row) {
                    *db += du;
                }
            }
        }

        // M = mix·A + tb.
        let mut d_a = d_x.clone(); // residual path
        for t in 0..n {
            let dm_row = &d_m[t * c..(t + 1) * c];
            let mix_row = &block.token_mix[t * n..(t + 1) * n];
            for (s, &m) in mix_row.iter().enumerate() {
                if m == 0.0 {
                    continue;
                }
                let da_row = &mut d_a[s * c..(s + 1) * c];
                for (da, &dm) in da_row.iter_mut().zip(dm_row) {
                    *da += m * dm;
                }
            }
        }
        if let Some(pg) = param_grads.as_deref_mut() {
            let g = &mut pg.blocks[k];
            for t in 0..n {
                let dm_row = &d_m[t * c..(t + 1) * c];
                let mut tb = 0.0;
                for &dm in dm_row {
                    tb += dm;
                }
                g.token_bias[t] += tb;
                let gm_row = &mut g.token_mix[t * n..(t + 1) * n];
                for (s, gm) in gm_row.iter_mut().enumerate() {
                    let a_row = &a[s * c..(s + 1) * c];
                    let mut acc = 0.0;
                    for (&dm, &av) in dm_row.iter().zip(a_row) {
                        acc += dm * av;
                    }
                    *gm += acc;
                }
            }
        }

        d_mods[k].copy_from_slice(&d_a);
        d_x = d_a;
    }
    d_mods
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cham::ModulationStack;
    use crate::geom::Affine2D;

    fn small_config() -> BodyBackboneConfig {
        BodyBackboneConfig {
            depth: 2,
            channels: 8,
            grid_h: 3,
            grid_w: 4,
            joint_count: 4,
            shape_dim: 2,
            nominal_translation: [0.0, 0.0, 2.0],
        }
    }

    fn random_grid(seed: u64, cfg: &BodyBackboneConfig) -> TokenGrid {
        let mut r = rng::seeded(seed);
        let mut g = TokenGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels, Affine2D::identity());
        for v in g.data.iter_mut() {
            *v = rng::normal(&mut r) * 0.5;
        }
        g
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_body_backbone(5, BodyBackboneConfig::default());
        let b = init_body_backbone(5, BodyBackboneConfig::default());
        assert_eq!(a, b);
    }

    #[test]
    fn depth_produces_exactly_d_fusion_points() {
        let params = init_body_backbone(1, small_config());
        assert_eq!(params.blocks.len(), 2);
        let grid = random_grid(2, &params.config);
        let (_, trace) = body_backbone_forward(&params, &grid, None).unwrap();
        assert_eq!(trace.block_inputs.len(), 2);
    }

    #[test]
    fn output_pose_dims_match_config() {
        let cfg = small_config();
        let params = init_body_backbone(1, cfg.clone());
        let grid = random_grid(2, &cfg);
        let (pose, _) = body_backbone_forward(&params, &grid, None).unwrap();
        assert_eq!(pose.local_rotations.len(), cfg.joint_count - 1);
        assert_eq!(pose.shape.len(), cfg.shape_dim);
        for slot in pose.local_rotations.iter() {
            assert!(slot.is_valid(1e-9));
        }
    }

    #[test]
    fn zero_modulation_is_bit_identical_to_none() {
        let cfg = small_config();
        let params = init_body_backbone(3, cfg.clone());
        let grid = random_grid(9, &cfg);
        let zeros = ModulationStack {
            grids: (0..cfg.depth)
                .map(|_| TokenGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels, grid.affine))
                .collect(),
        };
        let (a, ta) = body_backbone_forward(&params, &grid, None).unwrap();
        let (b, tb) = body_backbone_forward(&params, &grid, Some(&zeros)).unwrap();
        assert!(a.bits_eq(&b));
        for (x, y) in ta.raw_head.iter().zip(&tb.raw_head) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn perturbing_first_modulation_changes_final_tokens() {
        let cfg = small_config();
        let params = init_body_backbone(3, cfg.clone());
        let grid = random_grid(9, &cfg);
        let mut stack = ModulationStack {
            grids: (0..cfg.depth)
                .map(|_| TokenGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels, grid.affine))
                .collect(),
        };
        stack.grids[0].data[5] = 0.37;
        let (_, base) = body_backbone_forward(&params, &grid, None).unwrap();
        let (_, moved) = body_backbone_forward(&params, &grid, Some(&stack)).unwrap();
        let diff: f64 = base
            .final_tokens
            .iter()
            .zip(&moved.final_tokens)
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-6, "modulation had no effect");
    }

    #[test]
    fn frozen_hash_is_stable_across_forwards() {
        let cfg = small_config();
        let params = init_body_backbone(3, cfg.clone());
        let before = super::super::content_hash(&params);
        let grid = random_grid(9, &cfg);
        for _ in 0..100 {
            let _ = body_backbone_forward(&params, &grid, None).unwrap();
        }
        assert_eq!(before, super::super::content_hash(&params));
    }

    #[test]
    fn modulation_depth_mismatch_rejected() {
        let cfg = small_config();
        let params = init_body_backbone(3, cfg.clone());
        let grid = random_grid(9, &cfg);
        let stack = ModulationStack {
            grids: vec![TokenGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels, grid.affine)],
        };
        assert!(matches!(
            body_backbone_forward(&params, &grid, Some(&stack)),
            Err(BackboneError::DimMismatch(_))
        ));
    }

    #[test]
    fn soft_clamp_bounds_norm_below_pi() {
        for scale in [0.1, 1.0, 3.0, 10.0, 1000.0] {
            let v = soft_clamp(Vector3::new(1.0, -2.0, 0.5) * scale);
            assert!(v.norm() < std::f64::consts::PI);
        }
        // Near-identity at small norms.
        let small = Vector3::new(1e-3, 2e-3, -1e-3);
        assert!((soft_clamp(small) - small).norm() < 1e-8);
    }

    #[test]
    fn soft_clamp_vjp_matches_fd() {
        let mut r = rng::seeded(4);
        for _ in 0..20 {
            let v = Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r))
                * rng::uniform(&mut r, 0.1, 3.0);
            let d = Vector3::new(rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r));
            let analytic = soft_clamp_vjp(v, d);
            let h = 1e-6;
            for k in 0..3 {
                let mut vp = v;
                vp[k] += h;
                let mut vm = v;
                vm[k] -= h;
                let fd = (soft_clamp(vp) - soft_clamp(vm)).dot(&d) / (2.0 * h);
                assert!((analytic[k] - fd).abs() < 1e-6, "{} vs {fd}", analytic[k]);
            }
        }
    }

    #[test]
    fn modulation_gradient_matches_fd() {
        // Scalar probe: dot(raw_head, dir) as a function of one modulation
        // grid entry, compared against the backward pass.
        let cfg = small_config();
        let params = init_body_backbone(11, cfg.clone());
        let grid = random_grid(13, &cfg);
        let mut r = rng::seeded(14);
        let dir: Vec<f64> = rng::normal_vec(&mut r, cfg.head_dim());

        let make_stack = |bump: Option<(usize, usize, f64)>| {
            let mut stack = ModulationStack {
                grids: (0..cfg.depth)
                    .map(|_| TokenGrid::zeros(cfg.grid_h, cfg.grid_w, cfg.channels, grid.affine))
                    .collect(),
            };
            // Nonzero base point so the check is not at the tied zero state.
            let mut rr = rng::seeded(77);
            for g in stack.grids.iter_mut() {
                for v in g.data.iter_mut() {
                    *v = rng::normal(&mut rr) * 0.1;
                }
            }
            if let Some((k, i, eps)) = bump {
                stack.grids[k].data[i] += eps;
            }
            stack
        };

        let value = |stack: &ModulationStack| -> f64 {
            let (_, trace) = body_backbone_forward(&params, &grid, Some(stack)).unwrap();
            trace.raw_head.iter().zip(&dir).map(|(a, b)| a * b).sum()
        };

        let base_stack = make_stack(None);
        let (_, trace) = body_backbone_forward(&params, &grid, Some(&base_stack)).unwrap();
        let d_mods = body_backbone_backward(&params, &trace, &dir, None);

        let h = 1e-6;
        for (k, i) in [(0usize, 3usize), (0, 40), (1, 17), (1, 90)] {
            let plus = value(&make_stack(Some((k, i, h))));
            let minus = value(&make_stack(Some((k, i, -h))));
            let fd = (plus - minus) / (2.0 * h);
            let analytic = d_mods[k][i];
            assert!(
                (analytic - fd).abs() / fd.abs().max(1.0) < 1e-5,
                "block {k} idx {i}: {analytic} vs {fd}"
            );
        }
    }

    #[test]
    fn param_gradients_match_fd() {
        let cfg = small_config();
        let params = init_body_backbone(21, cfg.clone());
        let grid = random_grid(23, &cfg);
        let mut r = rng::seeded(24);
        let dir: Vec<f64> = rng::normal_vec(&mut r, cfg.head_dim());

        let value = |p: &BodyBackboneParams| -> f64 {
            let (_, trace) = body_backbone_forward(p, &grid, None).unwrap();
            trace.raw_head.iter().zip(&dir).map(|(a, b)| a * b).sum()
        };

        let (_, trace) = body_backbone_forward(&params, &grid, None).unwrap();
        let mut grads = BodyParamGrads::zeros(&params);
        let _ = body_backbone_backward(&params, &trace, &dir, Some(&mut grads));

        let h = 1e-6;
        // Spot-check a few parameters of each family.
        let checks: Vec<(Box<dyn Fn(&mut BodyBackboneParams) -> &mut f64>, f64)> = vec![
            (Box::new(|p| &mut p.blocks[0].token_mix[5]), grads.blocks[0].token_mix[5]),
            (Box::new(|p| &mut p.blocks[1].token_mix[100]), grads.blocks[1].token_mix[100]),
            (Box::new(|p| &mut p.blocks[0].token_bias[3]), grads.blocks[0].token_bias[3]),
            (Box::new(|p| &mut p.blocks[1].mlp_w[10]), grads.blocks[1].mlp_w[10]),
            (Box::new(|p| &mut p.blocks[0].mlp_b[2]), grads.blocks[0].mlp_b[2]),
            (Box::new(|p| &mut p.head_w[17]), grads.head_w[17]),
            (Box::new(|p| &mut p.head_b[4]), grads.head_b[4]),
        ];
        for (access, analytic) in checks {
            let mut pp = params.clone();
            *access(&mut pp) += h;
            let plus = value(&pp);
            let mut pm = params.clone();
            *access(&mut pm) -= h;
            let minus = value(&pm);
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (analytic - fd).abs() / fd.abs().max(1.0) < 1e-5,
                "{analytic} vs {fd}"
            );
        }
    }
}
