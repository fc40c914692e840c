//! Per-head contribution maps from gate gradients.
//!
//! For a next-token loss `L = -log P(y_tau = t*)`, the signed sensitivity of
//! head `(l, h)` is `S = dL/dg_lh` evaluated at the current gates, and its
//! importance `I = |S|`. Negative `S` means amplifying the head lowers the
//! loss. The gradient is computed by reverse mode written out by hand for
//! this architecture; model weights receive no gradient.

use std::fmt::Write as _;

use ndarray::{s, Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::model::{forward_records, silu_grad, GateTensor, Model, TokenSequence};

/// Cross-entropy of `target` at row `position` of `logits`, via a stable log-softmax.
pub fn token_loss(logits: &Array2<f64>, position: usize, target: usize) -> Result<f64> {
    if position >= logits.nrows() {
        return Err(Error::Bounds {
            what: "position",
            index: position,
            len: logits.nrows(),
        });
    }
    if target >= logits.ncols() {
        return Err(Error::Bounds {
            what: "target token",
            index: target,
            len: logits.ncols(),
        });
    }
    let row = logits.row(position);
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    Ok(lse - row[target])
}

fn softmax_row(row: ndarray::ArrayView1<'_, f64>) -> Array1<f64> {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = row.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// `dL/dg` for every head, `[layer][head]` 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct GateGradient {
    pub signed: Array2<f64>,
    /// Loss at the gates the gradient was taken at.
    pub loss: f64,
}

/// Gate gradients at all-ones gates.
pub fn gate_gradients(model: &Model, seq: &TokenSequence, position: usize, target: usize) -> Result<GateGradient> {
    let gates = GateTensor::ones(model.config.num_layers, model.config.num_heads);
    gate_gradients_at(model, seq, &gates, position, target)
}

/// Gate gradients at arbitrary gates.
pub fn gate_gradients_at(
    model: &Model,
    seq: &TokenSequence,
    gates: &GateTensor,
    position: usize,
    target: usize,
) -> Result<GateGradient> {
    let (logits, records) = forward_records(model, seq, gates)?;
    let loss = token_loss(&logits, position, target)?;
    let c = &model.config;
    let (n, d, dv) = (seq.len(), c.d_model, c.d_v());

    let mut d_logits = Array2::<f64>::zeros(logits.dim());
    let mut row = d_logits.row_mut(position);
    row.assign(&softmax_row(logits.row(position)));
    row[target] -= 1.0;
    let mut dx = d_logits.dot(&model.unembedding.t());

    let mut signed = Array2::<f64>::zeros((c.num_layers, c.num_heads));
    for (l, (rec, w)) in records.iter().zip(&model.layers).enumerate().rev() {
        // Gradient w.r.t. the attention sublayer output, and the part of the
        // input gradient carried by the residual path.
        let (d_attn, mut d_input) = match (&rec.mlp, &w.mlp) {
            (Some(m), Some(mw)) => {
                let d_hidden = dx.dot(&mw.w_out.t());
                let d_pre = &d_hidden * &m.pre.mapv(silu_grad);
                let d_normed = d_pre.dot(&mw.w_in.t());
                let mut d_resid = dx;
                for i in 0..n {
                    let ir = m.inv_rms[i];
                    let r = m.resid.row(i);
                    let dn = d_normed.row(i);
                    let weighted: f64 = (0..d).map(|k| mw.norm_scale[k] * dn[k] * r[k]).sum();
                    let coef = ir * ir * ir * weighted / d as f64;
                    let mut out = d_resid.row_mut(i);
                    for k in 0..d {
                        out[k] += mw.norm_scale[k] * dn[k] * ir - coef * r[k];
                    }
                }
                (d_resid.clone(), d_resid)
            }
            _ => (dx, Array2::zeros((n, d))),
        };

        let d_concat = d_attn.dot(&w.w_o.t());
        let scale = (c.d_k() as f64).sqrt();
        for (h, head) in rec.heads.iter().enumerate() {
            let slot = d_concat.slice(s![.., h * dv..(h + 1) * dv]);
            let grad = (&slot * &head.output).sum();
            if !grad.is_finite() {
                return Err(Error::Numeric {
                    what: "gate gradient",
                    layer: Some(l + 1),
                    head: Some(h + 1),
                });
            }
            signed[[l, h]] = grad;

            let d_out = slot.mapv(|v| v * rec.gains[h]);
            let a = &head.attention;
            let d_att = d_out.dot(&head.v.t());
            let d_v = a.t().dot(&d_out);
            let row_dot = (&d_att * a).sum_axis(Axis(1));
            let mut d_scores = d_att;
            for (i, mut r) in d_scores.rows_mut().into_iter().enumerate() {
                r -= row_dot[i];
            }
            d_scores = &d_scores * a;
            d_scores /= scale;
            let d_q = d_scores.dot(&head.k);
            let d_k = d_scores.t().dot(&head.q);
            d_input += &d_q.dot(&w.w_q[h].t());
            d_input += &d_k.dot(&w.w_k[h].t());
            d_input += &d_v.dot(&w.w_v[h].t());
        }
        dx = d_input;
    }
    Ok(GateGradient { signed, loss })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    LayerWise,
    Global,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMap {
    /// `|S|`, or the mean of `|S|` over several tokens.
    pub raw: Array2<f64>,
    pub mode: Normalization,
    pub normalized: Array2<f64>,
    /// 0-based layers whose raw sum was zero (layer-wise mode), left all zero.
    pub degenerate_layers: Vec<usize>,
    /// The whole map summed to zero.
    pub degenerate: bool,
}

/// Normalizes a raw importance matrix.
pub fn importance_from_raw(raw: Array2<f64>, mode: Normalization) -> ImportanceMap {
    let mut normalized = Array2::<f64>::zeros(raw.dim());
    let mut degenerate_layers = Vec::new();
    let total = raw.sum();
    match mode {
        Normalization::LayerWise => {
            for (l, row) in raw.rows().into_iter().enumerate() {
                let sum = row.sum();
                if sum > 0.0 {
                    normalized.row_mut(l).assign(&row.mapv(|v| v / sum));
                } else {
                    degenerate_layers.push(l);
                }
            }
        }
        Normalization::Global => {
            if total > 0.0 {
                normalized = raw.mapv(|v| v / total);
            }
        }
    }
    ImportanceMap {
        raw,
        mode,
        normalized,
        degenerate_layers,
        degenerate: !(total > 0.0),
    }
}

pub fn importance(gradient: &GateGradient, mode: Normalization) -> ImportanceMap {
    importance_from_raw(gradient.signed.mapv(f64::abs), mode)
}

/// Mean of per-token raw importances, computed before normalization.
pub fn aggregate_importance(gradients: &[GateGradient], mode: Normalization) -> Result<ImportanceMap> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::Input("no gradients to aggregate".into()))?;
    let mut acc = Array2::<f64>::zeros(first.signed.dim());
    for g in gradients {
        if g.signed.dim() != acc.dim() {
            return Err(Error::Dimension {
                what: "gate gradient",
                expected: acc.dim(),
                got: g.signed.dim(),
            });
        }
        acc += &g.signed.mapv(f64::abs);
    }
    acc /= gradients.len() as f64;
    Ok(importance_from_raw(acc, mode))
}

/// Heads by descending normalized importance; ties keep `(layer, head)` order.
pub fn rank_heads(map: &ImportanceMap) -> Vec<(usize, usize)> {
    let mut idx: Vec<((usize, usize), f64)> = map.normalized.indexed_iter().map(|(i, &v)| (i, v)).collect();
    idx.sort_by(|a, b| b.1.total_cmp(&a.1));
    idx.into_iter().map(|(i, _)| i).collect()
}

/// CSV `layer,head,signed_S,importance_layerwise,importance_global,rank`.
/// Indices and ranks are 1-based; ranks follow the global normalization.
pub fn heatmap_csv(signed: &Array2<f64>, raw: &Array2<f64>) -> String {
    let layer = importance_from_raw(raw.clone(), Normalization::LayerWise);
    let global = importance_from_raw(raw.clone(), Normalization::Global);
    let mut rank = Array2::<usize>::zeros(raw.dim());
    for (r, (l, h)) in rank_heads(&global).into_iter().enumerate() {
        rank[[l, h]] = r + 1;
    }
    let mut out = String::from("layer,head,signed_S,importance_layerwise,importance_global,rank\n");
    for ((l, h), s) in signed.indexed_iter() {
        writeln!(
            out,
            "{},{},{s:.17e},{:.17e},{:.17e},{}",
            l + 1,
            h + 1,
            layer.normalized[[l, h]],
            global.normalized[[l, h]],
            rank[[l, h]]
        )
        .expect("string write");
    }
    out
}
