//! Reverse pass through the CHAM dataflow.
//!
//! The max merge routes gradients to the winning side (split evenly on exact
//! ties, which is the state at zero initialization); realignment uses the
//! bilinear scatter adjoint; the 1×1 projections and the attention encoder
//! are differentiated exactly.

use crate::backbone::HandObservation;
use crate::geom::{resample_vjp, TokenGrid};

use super::forward::{AttentionTrace, ChamTrace};
use super::{ChamError, ChamParams};

/// Gradient container with the same structure as the parameters.
pub type ChamGrads = ChamParams;

fn token_linear_transpose(w: &[f64], dy: &[f64], n: usize, c: usize) -> Vec<f64> {
    // dy[t,i] flows back through out[t,i] = Σ_c w[i*C+c] x[t,c].
    let mut dx = vec![0.0; n * c];
    for t in 0..n {
        let dy_row = &dy[t * c..(t + 1) * c];
        let dx_row = &mut dx[t * c..(t + 1) * c];
        for (i, &g) in dy_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let wrow = &w[i * c..(i + 1) * c];
            for (d, &wv) in dx_row.iter_mut().zip(wrow) {
                *d += g * wv;
            }
        }
    }
    dx
}

fn accumulate_weight_grad(dw: &mut [f64], dy: &[f64], x: &[f64], n: usize, c: usize) {
    for t in 0..n {
        let dy_row = &dy[t * c..(t + 1) * c];
        let x_row = &x[t * c..(t + 1) * c];
        for (i, &g) in dy_row.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = &mut dw[i * c..(i + 1) * c];
            for (d, &xv) in row.iter_mut().zip(x_row) {
                *d += g * xv;
            }
        }
    }
}

/// Backward through one cross-attention layer (both directions, shared
/// weights). Returns gradients on the layer inputs.
fn attention_layer_backward(
    layer_params: &super::AttentionLayer,
    trace: &AttentionTrace,
    d_out_a: &[f64],
    d_out_b: &[f64],
    grads: &mut super::AttentionLayer,
    n: usize,
    c: usize,
) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (c as f64).sqrt();
    let mut d_a_in = vec![0.0; n * c];
    let mut d_b_in = vec![0.0; n * c];

    for dir in 0..2 {
        let d_out = if dir == 0 { d_out_a } else { d_out_b };
        let (src_in, d_src, d_other) = if dir == 0 {
            (&trace.a_in, &mut d_a_in, &mut d_b_in)
        } else {
            (&trace.b_in, &mut d_b_in, &mut d_a_in)
        };

        // out = mid + ff2·tanh(ff1·mid + b1) + b2
        let hidden = &trace.hidden[dir];
        let mut d_mid = d_out.to_vec();
        let d_hidden = token_linear_transpose(&layer_params.ff2, d_out, n, c);
        accumulate_weight_grad(&mut grads.ff2, d_out, hidden, n, c);
        for t in 0..n {
            for i in 0..c {
                grads.ff2_b[i] += d_out[t * c + i];
            }
        }
        let mut d_pre = vec![0.0; n * c];
        for i in 0..n * c {
            d_pre[i] = d_hidden[i] * (1.0 - hidden[i] * hidden[i]);
        }
        let d_mid_ff = token_linear_transpose(&layer_params.ff1, &d_pre, n, c);
        accumulate_weight_grad(&mut grads.ff1, &d_pre, &trace.mid[dir], n, c);
        for t in 0..n {
            for i in 0..c {
                grads.ff1_b[i] += d_pre[t * c + i];
            }
        }
        for (m, &g) in d_mid.iter_mut().zip(&d_mid_ff) {
            *m += g;
        }

        // mid = src + wo·ctx
        let d_ctx = token_linear_transpose(&layer_params.wo, &d_mid, n, c);
        accumulate_weight_grad(&mut grads.wo, &d_mid, &trace.ctx[dir], n, c);
        for (d, &g) in d_src.iter_mut().zip(&d_mid) {
            *d += g;
        }

        // ctx_t = Σ_s attn[t,s] v_s
        let attn = &trace.attn[dir];
        let v = &trace.v[dir];
        let mut d_attn = vec![0.0; n * n];
        let mut d_v = vec![0.0; n * c];
        for t in 0..n {
            let d_ctx_row = &d_ctx[t * c..(t + 1) * c];
            let a_row = &attn[t * n..(t + 1) * n];
            let da_row = &mut d_attn[t * n..(t + 1) * n];
            for s in 0..n {
                let v_row = &v[s * c..(s + 1) * c];
                let mut acc = 0.0;
                for (dc, &vv) in d_ctx_row.iter().zip(v_row) {
                    acc += dc * vv;
                }
                da_row[s] = acc;
                let w = a_row[s];
                if w != 0.0 {
                    let dv_row = &mut d_v[s * c..(s + 1) * c];
                    for (dv, &dc) in dv_row.iter_mut().zip(d_ctx_row) {
                        *dv += w * dc;
                    }
                }
            }
        }

        // Softmax backward per query row.
        let mut d_score = vec![0.0; n * n];
        for t in 0..n {
            let a_row = &attn[t * n..(t + 1) * n];
            let da_row = &d_attn[t * n..(t + 1) * n];
            let dot: f64 = a_row.iter().zip(da_row).map(|(a, d)| a * d).sum();
            let ds_row = &mut d_score[t * n..(t + 1) * n];
            for s in 0..n {
                ds_row[s] = a_row[s] * (da_row[s] - dot);
            }
        }

        // score[t,s] = q_t·k_s·scale
        let q = &trace.q[dir];
        let k = &trace.k[dir];
        let mut d_q = vec![0.0; n * c];
        let mut d_k = vec![0.0; n * c];
        for t in 0..n {
            let ds_row = &d_score[t * n..(t + 1) * n];
            let q_row = &q[t * c..(t + 1) * c];
            let dq_row_start = t * c;
            for s in 0..n {
                let g = ds_row[s] * scale;
                if g == 0.0 {
                    continue;
                }
                let k_row = &k[s * c..(s + 1) * c];
                for i in 0..c {
                    d_q[dq_row_start + i] += g * k_row[i];
                    d_k[s * c + i] += g * q_row[i];
                }
            }
        }

        // q = wq·src, k = wk·other, v = wv·other.
        let other_in = if dir == 0 { &trace.b_in } else { &trace.a_in };
        let d_src_q = token_linear_transpose(&layer_params.wq, &d_q, n, c);
        accumulate_weight_grad(&mut grads.wq, &d_q, src_in, n, c);
        for (d, &g) in d_src.iter_mut().zip(&d_src_q) {
            *d += g;
        }
        let d_other_k = token_linear_transpose(&layer_params.wk, &d_k, n, c);
        accumulate_weight_grad(&mut grads.wk, &d_k, other_in, n, c);
        let d_other_v = token_linear_transpose(&layer_params.wv, &d_v, n, c);
        accumulate_weight_grad(&mut grads.wv, &d_v, other_in, n, c);
        for ((d, &gk), &gv) in d_other.iter_mut().zip(&d_other_k).zip(&d_other_v) {
            *d += gk + gv;
        }
    }
    (d_a_in, d_b_in)
}

/// Full CHAM backward: takes gradients on the modulation stack (one buffer
/// per block in body-grid layout) and returns parameter gradients plus the
/// gradients on the two hand token grids.
pub fn cham_backward(
    params: &ChamParams,
    left: &HandObservation,
    right: &HandObservation,
    trace: &ChamTrace,
    d_mods: &[Vec<f64>],
) -> Result<(ChamGrads, Vec<f64>, Vec<f64>), ChamError> {
    if d_mods.len() != params.depth {
        return Err(ChamError::DimMismatch("modulation gradient depth"));
    }
    let mut grads = params.zeros_like();
    let c = params.channels;

    let left_feats = &trace.condition.left_out;
    let right_feats = &trace.condition.right_out;
    let n_tokens = left_feats.cell_count();
    let mut d_left_feats = vec![0.0; left_feats.data.len()];
    let mut d_right_feats = vec![0.0; right_feats.data.len()];

    for k in 0..params.depth {
        let l = &trace.realigned_left[k];
        let r = &trace.realigned_right[k];
        let dm = &d_mods[k];

        // Max merge: winner takes the gradient, exact ties split it.
        let mut d_l = TokenGrid::zeros(l.h, l.w, l.channels, l.affine);
        let mut d_r = TokenGrid::zeros(r.h, r.w, r.channels, r.affine);
        for i in 0..dm.len() {
            let (lv, rv) = (l.data[i], r.data[i]);
            if lv > rv {
                d_l.data[i] = dm[i];
            } else if rv > lv {
                d_r.data[i] = dm[i];
            } else {
                d_l.data[i] = 0.5 * dm[i];
                d_r.data[i] = 0.5 * dm[i];
            }
        }

        // Realign adjoint back to crop-grid space.
        for (side, d_re, feats, branch, d_feats) in [
            (0usize, &d_l, left_feats, &params.left_branch[k], &mut d_left_feats),
            (1, &d_r, right_feats, &params.right_branch[k], &mut d_right_feats),
        ] {
            let conv_geom = TokenGrid::zeros(feats.h, feats.w, feats.channels, feats.affine);
            let d_conv_out = resample_vjp(&conv_geom, &d_re.affine, d_re)?;
            let g = if side == 0 {
                &mut grads.left_branch[k]
            } else {
                &mut grads.right_branch[k]
            };
            accumulate_weight_grad(&mut g.w, &d_conv_out.data, &feats.data, n_tokens, c);
            for t in 0..n_tokens {
                for i in 0..c {
                    g.b[i] += d_conv_out.data[t * c + i];
                }
            }
            let back = token_linear_transpose(&branch.w, &d_conv_out.data, n_tokens, c);
            for (d, &v) in d_feats.iter_mut().zip(&back) {
                *d += v;
            }
        }
    }

    // Condition backward.
    if trace.condition.attended {
        let mut d_a = d_left_feats;
        let mut d_b = d_right_feats;
        for idx in (0..params.attention.len()).rev() {
            let (na, nb) = attention_layer_backward(
                &params.attention[idx],
                &trace.condition.layers[idx],
                &d_a,
                &d_b,
                &mut grads.attention[idx],
                n_tokens,
                c,
            );
            d_a = na;
            d_b = nb;
        }
        // Positional encoding is an additive constant: gradients pass
        // through to the raw hand tokens unchanged.
        Ok((grads, d_a, d_b))
    } else {
        let _ = (left, right);
        Ok((grads, d_left_feats, d_right_feats))
    }
}
