use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::config::ModelConfig;
use super::gates::GateTensor;
use super::sequence::TokenSequence;
use super::trace::AttentionTrace;
use super::weights::{LayerWeights, MlpWeights, Model};
use crate::error::{Error, Result};

/// Intermediates of one head.
#[derive(Debug, Clone)]
pub struct HeadRecord {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic `N x N` attention.
    pub attention: Array2<f64>,
    /// Ungated `N x d_v` head output `A V`.
    pub output: Array2<f64>,
}

/// Intermediates of the residual / normalization / feed-forward tail.
#[derive(Debug, Clone)]
pub struct MlpRecord {
    /// `X + Y`, the residual stream after attention.
    pub resid: Array2<f64>,
    /// Per-row `1 / sqrt(mean(resid^2) + eps)`.
    pub inv_rms: Array1<f64>,
    pub normed: Array2<f64>,
    pub pre: Array2<f64>,
    pub hidden: Array2<f64>,
}

/// Everything one block computed; enough for reverse mode.
#[derive(Debug, Clone)]
pub struct LayerRecord {
    pub input: Array2<f64>,
    pub heads: Vec<HeadRecord>,
    /// Gains actually applied, one per head.
    pub gains: Vec<f64>,
    /// Attention sublayer output `Concat(g_h O_h) W_O`, before any residual.
    pub attn_out: Array2<f64>,
    pub mlp: Option<MlpRecord>,
    pub output: Array2<f64>,
}

fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

fn check_finite(m: &Array2<f64>, what: &'static str, layer: Option<usize>, head: Option<usize>) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric { what, layer, head })
    }
}

/// Softmax over each row of `scores` in place, with per-row max subtraction.
/// Under `causal`, row `i` only covers columns `0..=i`; the rest become exactly 0.
pub(crate) fn masked_row_softmax(scores: &mut Array2<f64>, causal: bool) {
    let n_cols = scores.ncols();
    for (i, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let visible = if causal { (i + 1).min(n_cols) } else { n_cols };
        let max = row
            .slice(s![..visible])
            .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for v in row.slice_mut(s![..visible]).iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.slice_mut(s![..visible]).iter_mut() {
            *v /= sum;
        }
        row.slice_mut(s![visible..]).fill(0.0);
    }
}

fn attention_from_qk(q: &Array2<f64>, k: &Array2<f64>, causal: bool, head: usize) -> Result<Array2<f64>> {
    let scale = (q.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t());
    scores.mapv_inplace(|v| v / scale);
    check_finite(&scores, "attention logits", None, Some(head + 1))?;
    masked_row_softmax(&mut scores, causal);
    check_finite(&scores, "attention weights", None, Some(head + 1))?;
    Ok(scores)
}

/// Row-softmax of `(X W_Q)(X W_K)^T / sqrt(d_k)` for one head.
pub fn attention_weights(
    x: ArrayView2<'_, f64>,
    layer: &LayerWeights,
    head: usize,
    causal: bool,
) -> Result<Array2<f64>> {
    if head >= layer.num_heads() {
        return Err(Error::Bounds {
            what: "head",
            index: head,
            len: layer.num_heads(),
        });
    }
    let q = x.dot(&layer.w_q[head]);
    let k = x.dot(&layer.w_k[head]);
    attention_from_qk(&q, &k, causal, head)
}

/// `A V`.
pub fn head_output(attention: ArrayView2<'_, f64>, values: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let (n, m) = attention.dim();
    if n != m || values.nrows() != m {
        return Err(Error::Dimension {
            what: "head output",
            expected: (m, values.ncols()),
            got: values.dim(),
        });
    }
    Ok(attention.dot(&values))
}

fn attach_layer(err: Error, layer: usize) -> Error {
    match err {
        Error::Numeric { what, head, .. } => Error::Numeric {
            what,
            layer: Some(layer + 1),
            head,
        },
        other => other,
    }
}

/// Per-head hook deciding the gain of a head once its attention is known.
/// `None` selects the ungated path, which never multiplies.
pub(crate) trait HeadGain {
    fn gain(&mut self, layer: usize, head: usize, attention: &Array2<f64>) -> Result<Option<f64>>;
}

pub(crate) struct FixedGains<'a>(pub &'a GateTensor);

impl HeadGain for FixedGains<'_> {
    fn gain(&mut self, layer: usize, head: usize, _: &Array2<f64>) -> Result<Option<f64>> {
        Ok(Some(self.0.get(layer, head)))
    }
}

pub(crate) struct Ungated;

impl HeadGain for Ungated {
    fn gain(&mut self, _: usize, _: usize, _: &Array2<f64>) -> Result<Option<f64>> {
        Ok(None)
    }
}

fn mlp_tail(resid: Array2<f64>, mlp: &MlpWeights, eps: f64, keep: bool) -> (Array2<f64>, Option<MlpRecord>) {
    let d = resid.ncols() as f64;
    let inv_rms: Array1<f64> = resid
        .rows()
        .into_iter()
        .map(|r| 1.0 / (r.dot(&r) / d + eps).sqrt())
        .collect();
    let mut normed = resid.clone();
    for (mut row, &ir) in normed.rows_mut().into_iter().zip(inv_rms.iter()) {
        row *= ir;
        row *= &mlp.norm_scale;
    }
    let pre = normed.dot(&mlp.w_in);
    let hidden = pre.mapv(silu);
    let output = &resid + &hidden.dot(&mlp.w_out);
    let record = keep.then(|| MlpRecord {
        resid,
        inv_rms,
        normed,
        pre,
        hidden,
    });
    (output, record)
}

/// One block, generic over how head gains are chosen. Returns the block
/// output and, when `keep`, the full record.
pub(crate) fn block_forward<G: HeadGain>(
    x: Array2<f64>,
    weights: &LayerWeights,
    config: &ModelConfig,
    layer: usize,
    gains: &mut G,
    keep: bool,
) -> Result<(Array2<f64>, Option<LayerRecord>)> {
    let n = x.nrows();
    let dv = config.d_v();
    let mut concat = Array2::<f64>::zeros((n, config.d_model));
    let mut heads = Vec::with_capacity(if keep { config.num_heads } else { 0 });
    let mut applied = Vec::with_capacity(config.num_heads);
    for h in 0..config.num_heads {
        let q = x.dot(&weights.w_q[h]);
        let k = x.dot(&weights.w_k[h]);
        let v = x.dot(&weights.w_v[h]);
        let attention = attention_from_qk(&q, &k, config.causal_mask, h).map_err(|e| attach_layer(e, layer))?;
        let output = attention.dot(&v);
        let mut slot = concat.slice_mut(s![.., h * dv..(h + 1) * dv]);
        match gains.gain(layer, h, &attention)? {
            Some(g) => {
                slot.assign(&output);
                slot *= g;
                applied.push(g);
            }
            None => {
                slot.assign(&output);
                applied.push(1.0);
            }
        }
        if keep {
            heads.push(HeadRecord {
                q,
                k,
                v,
                attention,
                output,
            });
        }
    }
    let attn_out = concat.dot(&weights.w_o);
    let (output, mlp) = match &weights.mlp {
        Some(m) if config.use_mlp => {
            let resid = &x + &attn_out;
            mlp_tail(resid, m, config.norm_eps, keep)
        }
        _ => (attn_out.clone(), None),
    };
    check_finite(&output, "layer output", Some(layer + 1), None)?;
    let record = keep.then(|| LayerRecord {
        input: x,
        heads,
        gains: applied,
        attn_out,
        mlp,
        output: output.clone(),
    });
    Ok((output, record))
}

/// One gated block: head outputs are scaled by `gates[h]` before the output
/// projection; the attention probabilities are never touched.
pub fn layer_forward(
    x: ArrayView2<'_, f64>,
    weights: &LayerWeights,
    gates: ArrayView1<'_, f64>,
    config: &ModelConfig,
) -> Result<LayerRecord> {
    if gates.len() != config.num_heads {
        return Err(Error::InvalidGates(format!(
            "{} gains for {} heads",
            gates.len(),
            config.num_heads
        )));
    }
    let row = GateTensor::from_array(gates.to_owned().insert_axis(Axis(0)))?;
    let (_, record) = block_forward(x.to_owned(), weights, config, 0, &mut FixedGains(&row), true)?;
    Ok(record.expect("record requested"))
}

pub(crate) fn run_stack<G: HeadGain>(
    model: &Model,
    seq: &TokenSequence,
    gains: &mut G,
    keep: bool,
) -> Result<(Array2<f64>, Vec<LayerRecord>)> {
    if seq.embeddings.ncols() != model.config.d_model {
        return Err(Error::Dimension {
            what: "sequence embeddings",
            expected: (seq.len(), model.config.d_model),
            got: seq.embeddings.dim(),
        });
    }
    let mut x = seq.embeddings.clone();
    let mut records = Vec::with_capacity(if keep { model.config.num_layers } else { 0 });
    for (l, weights) in model.layers.iter().enumerate() {
        let (out, rec) = block_forward(x, weights, &model.config, l, gains, keep)?;
        x = out;
        records.extend(rec);
    }
    let logits = x.dot(&model.unembedding);
    check_finite(&logits, "logits", None, None)?;
    Ok((logits, records))
}

fn check_gates(model: &Model, gates: &GateTensor) -> Result<()> {
    if gates.num_layers() != model.config.num_layers || gates.num_heads() != model.config.num_heads {
        return Err(Error::InvalidGates(format!(
            "gate tensor is {}x{}, model is {}x{}",
            gates.num_layers(),
            gates.num_heads(),
            model.config.num_layers,
            model.config.num_heads
        )));
    }
    gates.validate()
}

/// Full gated forward keeping every per-layer record.
pub fn forward_records(
    model: &Model,
    seq: &TokenSequence,
    gates: &GateTensor,
) -> Result<(Array2<f64>, Vec<LayerRecord>)> {
    check_gates(model, gates)?;
    run_stack(model, seq, &mut FixedGains(gates), true)
}

/// Gated forward returning `N x vocab` logits and the materialized trace.
pub fn model_forward(model: &Model, seq: &TokenSequence, gates: &GateTensor) -> Result<(Array2<f64>, AttentionTrace)> {
    let (logits, records) = forward_records(model, seq, gates)?;
    Ok((logits, AttentionTrace::from_records(records)))
}

/// Gated forward returning logits only.
pub fn forward_logits(model: &Model, seq: &TokenSequence, gates: &GateTensor) -> Result<Array2<f64>> {
    check_gates(model, gates)?;
    Ok(run_stack(model, seq, &mut FixedGains(gates), false)?.0)
}

/// The plain forward with no gate arithmetic at all and no trace.
pub fn forward_vanilla(model: &Model, seq: &TokenSequence) -> Result<Array2<f64>> {
    Ok(run_stack(model, seq, &mut Ungated, false)?.0)
}
