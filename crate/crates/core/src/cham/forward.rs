//! CHAM forward dataflow with the caches the backward pass needs.

use crate::backbone::HandObservation;
use crate::geom::{positional_encoding_2d, resample_grid, Affine2D, TokenGrid};

use super::{ChamError, ChamParams, Conv1x1, ModulationStack};

/// Per-layer, per-direction attention cache. Direction 0 updates the left
/// stream (queries from left), direction 1 the right stream.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub a_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// Per direction: q, k, v (N×C), attention weights (N×N), context (N×C),
    /// post-attention residual state (N×C), feed-forward hidden (N×C).
    pub q: [Vec<f64>; 2],
    pub k: [Vec<f64>; 2],
    pub v: [Vec<f64>; 2],
    pub attn: [Vec<f64>; 2],
    pub ctx: [Vec<f64>; 2],
    pub mid: [Vec<f64>; 2],
    pub hidden: [Vec<f64>; 2],
}

#[derive(Debug, Clone)]
pub struct ConditionTrace {
    /// Whether the positional-encoding + cross-attention path ran.
    pub attended: bool,
    pub layers: Vec<AttentionTrace>,
    pub left_out: TokenGrid,
    pub right_out: TokenGrid,
}

#[derive(Debug, Clone)]
pub struct ChamTrace {
    pub condition: ConditionTrace,
    /// Realigned per-block grids per side (left, right), cached for the
    /// max-merge routing and the resampling adjoint.
    pub realigned_left: Vec<TokenGrid>,
    pub realigned_right: Vec<TokenGrid>,
}

fn token_linear(w: &[f64], x: &[f64], n: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c];
    for t in 0..n {
        let src = &x[t * c..(t + 1) * c];
        let dst = &mut out[t * c..(t + 1) * c];
        for (i, d) in dst.iter_mut().enumerate() {
            let row = &w[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (wv, &xv) in row.iter().zip(src) {
                acc += wv * xv;
            }
            *d = acc;
        }
    }
    out
}

/// Three-layer bidirectional cross-attention encoder over two equal-shaped
/// token grids. Each layer updates both sides in parallel from the layer
/// inputs: queries from one side, keys/values from the other, residual
/// attention then a residual feed-forward, softmax over key positions with
/// 1/√C scaling. Weights are shared between the two directions.
pub fn cross_attention_encode(
    a: &TokenGrid,
    b: &TokenGrid,
    params: &ChamParams,
) -> Result<(TokenGrid, TokenGrid, Vec<AttentionTrace>), ChamError> {
    if !a.same_shape(b) {
        return Err(ChamError::DimMismatch("cross-attention grids must match"));
    }
    let n = a.cell_count();
    let c = a.channels;
    if c != params.channels {
        return Err(ChamError::DimMismatch("channel count"));
    }
    let scale = 1.0 / (c as f64).sqrt();

    let mut cur_a = a.data.clone();
    let mut cur_b = b.data.clone();
    let mut traces = Vec::with_capacity(params.attention.len());

    for layer in &params.attention {
        let mut trace = AttentionTrace {
            a_in: cur_a.clone(),
            b_in: cur_b.clone(),
            q: [Vec::new(), Vec::new()],
            k: [Vec::new(), Vec::new()],
            v: [Vec::new(), Vec::new()],
            attn: [Vec::new(), Vec::new()],
            ctx: [Vec::new(), Vec::new()],
            mid: [Vec::new(), Vec::new()],
            hidden: [Vec::new(), Vec::new()],
        };
        let mut outputs = [Vec::new(), Vec::new()];
        for dir in 0..2 {
            let (src, other) = if dir == 0 {
                (&cur_a, &cur_b)
            } else {
                (&cur_b, &cur_a)
            };
            let q = token_linear(&layer.wq, src, n, c);
            let k = token_linear(&layer.wk, other, n, c);
            let v = token_linear(&layer.wv, other, n, c);

            let mut attn = vec![0.0; n * n];
            for t in 0..n {
                let qrow = &q[t * c..(t + 1) * c];
                let row = &mut attn[t * n..(t + 1) * n];
                let mut max = f64::NEG_INFINITY;
                for (s, slot) in row.iter_mut().enumerate() {
                    let krow = &k[s * c..(s + 1) * c];
                    let mut acc = 0.0;
                    for (qv, kv) in qrow.iter().zip(krow) {
                        acc += qv * kv;
                    }
                    *slot = acc * scale;
                    if *slot > max {
                        max = *slot;
                    }
                }
                let mut sum = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max).exp();
                    sum += *slot;
                }
                for slot in row.iter_mut() {
                    *slot /= sum;
                }
            }

            let mut ctx = vec![0.0; n * c];
            for t in 0..n {
                let arow = &attn[t * n..(t + 1) * n];
                let crow = &mut ctx[t * c..(t + 1) * c];
                for (s, &w) in arow.iter().enumerate() {
                    let vrow = &v[s * c..(s + 1) * c];
                    for (cv, &vv) in crow.iter_mut().zip(vrow) {
                        *cv += w * vv;
                    }
                }
            }

            let proj = token_linear(&layer.wo, &ctx, n, c);
            let mut mid = src.clone();
            for (m, &p) in mid.iter_mut().zip(&proj) {
                *m += p;
            }

            let pre = token_linear(&layer.ff1, &mid, n, c);
            let mut hidden = vec![0.0; n * c];
            for t in 0..n {
                for i in 0..c {
                    hidden[t * c + i] = (pre[t * c + i] + layer.ff1_b[i]).tanh();
                }
            }
            let ff_out = token_linear(&layer.ff2, &hidden, n, c);
            let mut out = mid.clone();
            for t in 0..n {
                for i in 0..c {
                    out[t * c + i] += ff_out[t * c + i] + layer.ff2_b[i];
                }
            }

            trace.q[dir] = q;
            trace.k[dir] = k;
            trace.v[dir] = v;
            trace.attn[dir] = attn;
            trace.ctx[dir] = ctx;
            trace.mid[dir] = mid;
            trace.hidden[dir] = hidden;
            outputs[dir] = out;
        }
        let [out_a, out_b] = outputs;
        cur_a = out_a;
        cur_b = out_b;
        traces.push(trace);
    }

    let mut ga = a.clone();
    ga.data = cur_a;
    let mut gb = b.clone();
    gb.data = cur_b;
    Ok((ga, gb, traces))
}

/// Builds the condition features. With both hands detected, adds the 2D
/// positional encoding (generated in full-image space and evaluated through
/// each crop affine) and runs cross-attention; otherwise both token grids
/// pass through untouched.
pub fn build_condition(
    left: &HandObservation,
    right: &HandObservation,
    params: &ChamParams,
    image_dims: (f64, f64),
) -> Result<ConditionTrace, ChamError> {
    if left.detected && right.detected {
        let (iw, ih) = image_dims;
        let pe_l = positional_encoding_2d(
            left.tokens.h,
            left.tokens.w,
            left.tokens.channels,
            &left.crop_affine,
            iw,
            ih,
        )?;
        let pe_r = positional_encoding_2d(
            right.tokens.h,
            right.tokens.w,
            right.tokens.channels,
            &right.crop_affine,
            iw,
            ih,
        )?;
        let mut a = left.tokens.clone();
        for (x, &p) in a.data.iter_mut().zip(&pe_l.data) {
            *x += p;
        }
        let mut b = right.tokens.clone();
        for (x, &p) in b.data.iter_mut().zip(&pe_r.data) {
            *x += p;
        }
        let (left_out, right_out, layers) = cross_attention_encode(&a, &b, params)?;
        Ok(ConditionTrace {
            attended: true,
            layers,
            left_out,
            right_out,
        })
    } else {
        Ok(ConditionTrace {
            attended: false,
            layers: Vec::new(),
            left_out: left.tokens.clone(),
            right_out: right.tokens.clone(),
        })
    }
}

/// Applies each of the branch's D channel-wise maps to the features,
/// producing one grid per backbone block with geometry and affine preserved.
pub fn project_per_block(
    branch: &[Conv1x1],
    feats: &TokenGrid,
) -> Result<Vec<TokenGrid>, ChamError> {
    let c = feats.channels;
    let n = feats.cell_count();
    let mut out = Vec::with_capacity(branch.len());
    for conv in branch {
        if conv.w.len() != c * c {
            return Err(ChamError::DimMismatch("conv channels"));
        }
        let mut g = feats.clone();
        g.data = token_linear(&conv.w, &feats.data, n, c);
        for t in 0..n {
            for i in 0..c {
                g.data[t * c + i] += conv.b[i];
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Inverse-affine realignment into body grid space with zero padding: body
/// cells outside the crop footprint are exactly zero.
pub fn realign_to_body(
    grid: &TokenGrid,
    body_dims: (usize, usize),
    body_affine: &Affine2D,
) -> Result<TokenGrid, ChamError> {
    let (h, w) = body_dims;
    Ok(resample_grid(grid, body_affine, h, w, 0.0)?)
}

/// Element-wise maximum across the two sides.
pub fn merge_hands(
    left_stack: &[TokenGrid],
    right_stack: &[TokenGrid],
) -> Result<ModulationStack, ChamError> {
    if left_stack.len() != right_stack.len() {
        return Err(ChamError::DimMismatch("stack depth"));
    }
    let mut grids = Vec::with_capacity(left_stack.len());
    for (l, r) in left_stack.iter().zip(right_stack) {
        if !l.same_shape(r) {
            return Err(ChamError::DimMismatch("merge grid shape"));
        }
        let mut g = l.clone();
        for (gv, &rv) in g.data.iter_mut().zip(&r.data) {
            if rv > *gv {
                *gv = rv;
            }
        }
        grids.push(g);
    }
    Ok(ModulationStack { grids })
}

/// Full CHAM forward: condition → per-side per-block projection → realign →
/// max merge. With freshly initialized parameters every output grid is
/// exactly zero.
pub fn cham_forward(
    left: &HandObservation,
    right: &HandObservation,
    params: &ChamParams,
    body_dims: (usize, usize),
    body_affine: &Affine2D,
    image_dims: (f64, f64),
) -> Result<(ModulationStack, ChamTrace), ChamError> {
    let condition = build_condition(left, right, params, image_dims)?;
    let left_blocks = project_per_block(&params.left_branch, &condition.left_out)?;
    let right_blocks = project_per_block(&params.right_branch, &condition.right_out)?;
    let realigned_left: Vec<TokenGrid> = left_blocks
        .iter()
        .map(|g| realign_to_body(g, body_dims, body_affine))
        .collect::<Result<_, _>>()?;
    let realigned_right: Vec<TokenGrid> = right_blocks
        .iter()
        .map(|g| realign_to_body(g, body_dims, body_affine))
        .collect::<Result<_, _>>()?;
    let stack = merge_hands(&realigned_left, &realigned_right)?;
    Ok((
        stack,
        ChamTrace {
            condition,
            realigned_left,
            realigned_right,
        },
    ))
}
