//! Multi-head scaled dot-product attention, shared by the encoder (self
//! attention) and the decoder (self and cross attention). Queries come from
//! the first sequence; keys and values from the second. Each head computes
//! softmax(QKᵀ/√d_h)·V and the concatenated heads are linearly projected.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Projection weights of one attention block: D x D matrices with biases.
/// The key projection carries no bias: a constant added to every key shifts
/// each softmax row uniformly and cancels exactly, so such a bias is a dead
/// parameter.
#[derive(Clone)]
pub struct AttentionParams<T: Scalar> {
    pub w_q: Tensor<T>,
    pub b_q: Tensor<T>,
    pub w_k: Tensor<T>,
    pub w_v: Tensor<T>,
    pub b_v: Tensor<T>,
    pub w_o: Tensor<T>,
    pub b_o: Tensor<T>,
}

impl<T: Scalar> AttentionParams<T> {
    pub fn for_each(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.wq"), &mut self.w_q);
        f(format!("{prefix}.bq"), &mut self.b_q);
        f(format!("{prefix}.wk"), &mut self.w_k);
        f(format!("{prefix}.wv"), &mut self.w_v);
        f(format!("{prefix}.bv"), &mut self.b_v);
        f(format!("{prefix}.wo"), &mut self.w_o);
        f(format!("{prefix}.bo"), &mut self.b_o);
    }
}

/// Attention probability maps collected during a forward pass, one entry per
/// attention application, shaped `[n_heads, L_q, L_kv]`.
#[derive(Default)]
pub struct AttnTrace<T: Scalar> {
    pub maps: Vec<Tensor<T>>,
}

impl<T: Scalar> AttnTrace<T> {
    pub fn new() -> Self {
        AttnTrace { maps: Vec::new() }
    }
}

/// One attention head without the output projection:
/// softmax(QKᵀ/√d_h)·V with Q = x·W_q, K = y·W_k, V = y·W_v.
pub fn attention_head<T: Scalar>(
    x: &Tensor<T>,
    y: &Tensor<T>,
    w_q: &Tensor<T>,
    w_k: &Tensor<T>,
    w_v: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d_h = *w_q
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("attention_head: rank-0 projection".into()))?;
    let q = x.matmul(w_q)?;
    let k = y.matmul(w_k)?;
    let v = y.matmul(w_v)?;
    let scores = q
        .matmul(&k.transpose_last2()?)?
        .scale(1.0 / (d_h as f64).sqrt());
    let probs = scores.softmax_lastdim()?;
    probs.matmul(&v)
}

/// Multi-head attention with queries from `q_src` `[L_q, D]` and keys/values
/// from `kv_src` `[L_kv, D]`. Optionally records attention probabilities.
pub fn multi_head_attention<T: Scalar>(
    q_src: &Tensor<T>,
    kv_src: &Tensor<T>,
    params: &AttentionParams<T>,
    n_heads: usize,
    trace: Option<&mut AttnTrace<T>>,
) -> Result<Tensor<T>> {
    let d = *q_src
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("attention on rank-0 input".into()))?;
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!(
            "model dimension {d} is not divisible by {n_heads} heads"
        )));
    }
    let d_h = d / n_heads;
    let l_q = q_src.shape()[0];
    let l_kv = kv_src.shape()[0];

    let split = |t: &Tensor<T>, l: usize| -> Result<Tensor<T>> {
        // [L, D] -> [n_heads, L, d_h]
        t.reshape(&[l, n_heads, d_h])?.permute(&[1, 0, 2])
    };

    let q = split(&q_src.matmul(&params.w_q)?.add(&params.b_q)?, l_q)?;
    let k = split(&kv_src.matmul(&params.w_k)?, l_kv)?;
    let v = split(&kv_src.matmul(&params.w_v)?.add(&params.b_v)?, l_kv)?;

    let scores = q
        .matmul(&k.transpose_last2()?)?
        .scale(1.0 / (d_h as f64).sqrt());
    let probs = scores.softmax_lastdim()?;
    if let Some(tr) = trace {
        tr.maps.push(probs.clone());
    }
    let ctx = probs.matmul(&v)?; // [n_heads, L_q, d_h]
    let merged = ctx.permute(&[1, 0, 2])?.reshape(&[l_q, d])?;
    merged.matmul(&params.w_o)?.add(&params.b_o)
}
