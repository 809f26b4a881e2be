//! ViT-style encoder: linear patch embedding with learned positional
//! embeddings, a stack of pre-norm transformer blocks, and a final layer
//! norm. Blocks are h' = MSA(LN(h)) + h followed by h = FFN(LN(h')) + h'.

use rand::Rng;

use crate::attention::{multi_head_attention, AttentionParams, AttnTrace};
use crate::error::{Error, Result};
use crate::init::trunc_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;
pub const FFN_RATIO: usize = 4;
const INIT_STD: f64 = 0.02;

/// One pre-norm transformer block: attention and FFN sublayers, each with
/// its own layer norm.
#[derive(Clone)]
pub struct BlockParams<T: Scalar> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    pub attn: AttentionParams<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub ffn_w1: Tensor<T>,
    pub ffn_b1: Tensor<T>,
    pub ffn_w2: Tensor<T>,
    pub ffn_b2: Tensor<T>,
}

impl<T: Scalar> BlockParams<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize) -> Self {
        let hidden = FFN_RATIO * d;
        BlockParams {
            ln1_g: Tensor::ones(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            attn: AttentionParams {
                w_q: trunc_normal(rng, &[d, d], INIT_STD),
                b_q: Tensor::zeros(&[d]),
                w_k: trunc_normal(rng, &[d, d], INIT_STD),
                w_v: trunc_normal(rng, &[d, d], INIT_STD),
                b_v: Tensor::zeros(&[d]),
                w_o: trunc_normal(rng, &[d, d], INIT_STD),
                b_o: Tensor::zeros(&[d]),
            },
            ln2_g: Tensor::ones(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            ffn_w1: trunc_normal(rng, &[d, hidden], INIT_STD),
            ffn_b1: Tensor::zeros(&[hidden]),
            ffn_w2: trunc_normal(rng, &[hidden, d], INIT_STD),
            ffn_b2: Tensor::zeros(&[d]),
        }
    }

    pub fn for_each(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.ln1.g"), &mut self.ln1_g);
        f(format!("{prefix}.ln1.b"), &mut self.ln1_b);
        self.attn.for_each(&format!("{prefix}.attn"), f);
        f(format!("{prefix}.ln2.g"), &mut self.ln2_g);
        f(format!("{prefix}.ln2.b"), &mut self.ln2_b);
        f(format!("{prefix}.ffn.w1"), &mut self.ffn_w1);
        f(format!("{prefix}.ffn.b1"), &mut self.ffn_b1);
        f(format!("{prefix}.ffn.w2"), &mut self.ffn_w2);
        f(format!("{prefix}.ffn.b2"), &mut self.ffn_b2);
    }
}

/// Feed-forward sublayer: Linear -> GELU -> Linear.
pub fn ffn<T: Scalar>(
    x: &Tensor<T>,
    w1: &Tensor<T>,
    b1: &Tensor<T>,
    w2: &Tensor<T>,
    b2: &Tensor<T>,
) -> Result<Tensor<T>> {
    x.matmul(w1)?.add(b1)?.gelu().matmul(w2)?.add(b2)
}

/// Apply one pre-norm transformer block (self attention).
pub fn encoder_block<T: Scalar>(
    h: &Tensor<T>,
    p: &BlockParams<T>,
    n_heads: usize,
    trace: Option<&mut AttnTrace<T>>,
) -> Result<Tensor<T>> {
    let normed = h.layer_norm(&p.ln1_g, &p.ln1_b, LN_EPS)?;
    let attn = multi_head_attention(&normed, &normed, &p.attn, n_heads, trace)?;
    let h1 = attn.add(h)?;
    let normed2 = h1.layer_norm(&p.ln2_g, &p.ln2_b, LN_EPS)?;
    ffn(&normed2, &p.ffn_w1, &p.ffn_b1, &p.ffn_w2, &p.ffn_b2)?.add(&h1)
}

/// All learnable state of the encoder.
#[derive(Clone)]
pub struct EncoderParams<T: Scalar> {
    /// Patch embedding, `[3P², D]`.
    pub embed: Tensor<T>,
    /// Learned positional embeddings, `[L, D]`.
    pub pos: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_g: Tensor<T>,
    pub final_b: Tensor<T>,
    pub n_heads: usize,
}

impl<T: Scalar> EncoderParams<T> {
    pub fn init<R: Rng>(
        rng: &mut R,
        token_dim: usize,
        seq_len: usize,
        d: usize,
        n_layers: usize,
        n_heads: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !d.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "model dimension {d} not divisible by {n_heads} heads"
            )));
        }
        Ok(EncoderParams {
            embed: trunc_normal(rng, &[token_dim, d], INIT_STD),
            pos: trunc_normal(rng, &[seq_len, d], INIT_STD),
            blocks: (0..n_layers).map(|_| BlockParams::init(rng, d)).collect(),
            final_g: Tensor::ones(&[d]),
            final_b: Tensor::zeros(&[d]),
            n_heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.embed.shape()[1]
    }

    pub fn for_each(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f("enc.embed".into(), &mut self.embed);
        f("enc.pos".into(), &mut self.pos);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each(&format!("enc.block{i}"), f);
        }
        f("enc.final.g".into(), &mut self.final_g);
        f("enc.final.b".into(), &mut self.final_b);
    }
}

/// h₀ = tokens·E + E_pos.
pub fn patch_embed<T: Scalar>(tokens: &Tensor<T>, p: &EncoderParams<T>) -> Result<Tensor<T>> {
    if tokens.shape().len() != 2 || tokens.shape()[1] != p.embed.shape()[0] {
        return Err(Error::Shape(format!(
            "patch_embed: tokens {:?} do not match embedding {:?}",
            tokens.shape(),
            p.embed.shape()
        )));
    }
    if tokens.shape()[0] != p.pos.shape()[0] {
        return Err(Error::Shape(format!(
            "patch_embed: {} tokens but {} positional embeddings",
            tokens.shape()[0],
            p.pos.shape()[0]
        )));
    }
    tokens.matmul(&p.embed)?.add(&p.pos)
}

/// Full encoder: patch embedding, N pre-norm blocks, final layer norm.
pub fn encode<T: Scalar>(tokens: &Tensor<T>, p: &EncoderParams<T>) -> Result<Tensor<T>> {
    encode_traced(tokens, p, None)
}

pub fn encode_traced<T: Scalar>(
    tokens: &Tensor<T>,
    p: &EncoderParams<T>,
    mut trace: Option<&mut AttnTrace<T>>,
) -> Result<Tensor<T>> {
    let mut h = patch_embed(tokens, p)?;
    for b in &p.blocks {
        h = encoder_block(&h, b, p.n_heads, trace.as_deref_mut())?;
    }
    h.layer_norm(&p.final_g, &p.final_b, LN_EPS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand::SeedableRng;

    fn toy_params(token_dim: usize, l: usize, d: usize, n: usize) -> EncoderParams<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        EncoderParams::init(&mut rng, token_dim, l, d, n, 2).unwrap()
    }

    fn zero_blocks(p: &mut EncoderParams<f64>) {
        for b in &mut p.blocks {
            for t in [
                &mut b.attn.w_q,
                &mut b.attn.w_k,
                &mut b.attn.w_v,
                &mut b.attn.w_o,
                &mut b.ffn_w1,
                &mut b.ffn_w2,
            ] {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    #[test]
    fn zero_tokens_embed_to_positions() {
        let p = toy_params(12, 4, 8, 0);
        let tokens = Tensor::zeros(&[4, 12]);
        let h0 = patch_embed(&tokens, &p).unwrap();
        assert_eq!(h0.data(), p.pos.data());
    }

    #[test]
    fn zero_embedding_ignores_input() {
        let mut p = toy_params(12, 4, 8, 0);
        p.embed = Tensor::zeros(&[12, 8]);
        let a = patch_embed(&Tensor::ones(&[4, 12]), &p).unwrap();
        let b = patch_embed(&Tensor::full(&[4, 12], -3.0), &p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn one_hot_token_selects_embedding_row() {
        let p = toy_params(12, 1, 8, 0);
        let mut token = vec![0.0; 12];
        token[5] = 1.0;
        let h0 = patch_embed(&Tensor::from_vec(&[1, 12], token).unwrap(), &p).unwrap();
        for j in 0..8 {
            let expected = p.embed.data()[5 * 8 + j] + p.pos.data()[j];
            assert!((h0.data()[j] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_stack_is_layer_norm_of_embedding() {
        let p = toy_params(12, 4, 8, 0);
        let tokens = Tensor::from_vec(&[4, 12], (0..48).map(|v| (v as f64).sin()).collect())
            .unwrap();
        let out = encode(&tokens, &p).unwrap();
        let expected = patch_embed(&tokens, &p)
            .unwrap()
            .layer_norm(&p.final_g, &p.final_b, LN_EPS)
            .unwrap();
        assert_eq!(out.data(), expected.data());
    }

    #[test]
    fn zero_weight_blocks_are_identity() {
        let mut p = toy_params(12, 4, 8, 3);
        zero_blocks(&mut p);
        let tokens = Tensor::from_vec(&[4, 12], (0..48).map(|v| (v as f64).cos()).collect())
            .unwrap();
        let out = encode(&tokens, &p).unwrap();
        let expected = patch_embed(&tokens, &p)
            .unwrap()
            .layer_norm(&p.final_g, &p.final_b, LN_EPS)
            .unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let p = toy_params(12, 4, 8, 2);
        let tokens = Tensor::from_vec(&[4, 12], (0..48).map(|v| (v as f64).sin()).collect())
            .unwrap();
        let a = encode(&tokens, &p).unwrap();
        let b = encode(&tokens, &p).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn msa_is_permutation_equivariant_without_positions() {
        // swap two token rows; with pos = 0 the encoder output swaps rows too
        let mut p = toy_params(12, 3, 8, 2);
        p.pos = Tensor::zeros(&[3, 8]);
        let data: Vec<f64> = (0..36).map(|v| (v as f64 * 0.37).sin()).collect();
        let tokens = Tensor::from_vec(&[3, 12], data.clone()).unwrap();
        let mut swapped = data.clone();
        for j in 0..12 {
            swapped.swap(j, 12 + j);
        }
        let tokens_sw = Tensor::from_vec(&[3, 12], swapped).unwrap();
        let out = encode(&tokens, &p).unwrap();
        let out_sw = encode(&tokens_sw, &p).unwrap();
        for j in 0..8 {
            assert!((out.data()[j] - out_sw.data()[8 + j]).abs() < 1e-9);
            assert!((out.data()[8 + j] - out_sw.data()[j]).abs() < 1e-9);
            assert!((out.data()[16 + j] - out_sw.data()[16 + j]).abs() < 1e-9);
        }
    }
}
