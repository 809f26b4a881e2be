//! Query expansion: reshape encoder tokens to a feature map, pad the margin
//! with noise-generated tokens from a shared MLP, refine with residual
//! deformable-convolution blocks, and emit the R ring queries.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::encoder::LN_EPS;
use crate::error::{Error, Result};
use crate::geometry::{
    center_into_padded_indices, map_to_tokens_indices, ring_extract_indices,
    ring_into_padded_indices, tokens_to_map_indices, GridSpec, RingIndex,
};
use crate::init::{he_normal, trunc_normal};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

/// Distribution of the per-cell query noise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    /// Standard normal draws.
    Normal,
    /// Uniform draws on [-1, 1).
    Uniform,
}

/// One residual block: channel layer norm, offset-predicting conv,
/// deformable conv, pointwise conv, all inside a skip connection.
#[derive(Clone)]
pub struct QemBlockParams<T: Scalar> {
    pub ln1_g: Tensor<T>,
    pub ln1_b: Tensor<T>,
    /// Offset predictor, `[2k², D, k, k]`; zero-initialised so the block
    /// starts out as a standard convolution.
    pub offset_w: Tensor<T>,
    pub offset_b: Tensor<T>,
    pub deform_w: Tensor<T>,
    pub deform_b: Tensor<T>,
    pub ln2_g: Tensor<T>,
    pub ln2_b: Tensor<T>,
    pub pw_w: Tensor<T>,
    pub pw_b: Tensor<T>,
}

impl<T: Scalar> QemBlockParams<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize) -> Self {
        let taps = KERNEL * KERNEL;
        QemBlockParams {
            ln1_g: Tensor::ones(&[d]),
            ln1_b: Tensor::zeros(&[d]),
            offset_w: Tensor::zeros(&[2 * taps, d, KERNEL, KERNEL]),
            offset_b: Tensor::zeros(&[2 * taps]),
            deform_w: he_normal(rng, &[d, d, KERNEL, KERNEL], d * taps),
            deform_b: Tensor::zeros(&[d]),
            ln2_g: Tensor::ones(&[d]),
            ln2_b: Tensor::zeros(&[d]),
            pw_w: he_normal(rng, &[d, d, 1, 1], d),
            pw_b: Tensor::zeros(&[d]),
        }
    }

    pub fn for_each(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f(format!("{prefix}.ln1.g"), &mut self.ln1_g);
        f(format!("{prefix}.ln1.b"), &mut self.ln1_b);
        f(format!("{prefix}.offset.w"), &mut self.offset_w);
        f(format!("{prefix}.offset.b"), &mut self.offset_b);
        f(format!("{prefix}.deform.w"), &mut self.deform_w);
        f(format!("{prefix}.deform.b"), &mut self.deform_b);
        f(format!("{prefix}.ln2.g"), &mut self.ln2_g);
        f(format!("{prefix}.ln2.b"), &mut self.ln2_b);
        f(format!("{prefix}.pw.w"), &mut self.pw_w);
        f(format!("{prefix}.pw.b"), &mut self.pw_b);
    }
}

/// All learnable state of the query expansion module.
#[derive(Clone)]
pub struct QemParams<T: Scalar> {
    /// Two-layer MLP from noise to token space: noise_dim -> D -> D.
    pub mlp_w1: Tensor<T>,
    pub mlp_b1: Tensor<T>,
    pub mlp_w2: Tensor<T>,
    pub mlp_b2: Tensor<T>,
    pub blocks: Vec<QemBlockParams<T>>,
    pub out_g: Tensor<T>,
    pub out_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_bias: Tensor<T>,
}

impl<T: Scalar> QemParams<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, noise_dim: usize, n_blocks: usize) -> Result<Self> {
        if noise_dim == 0 {
            return Err(Error::Config("noise_dim must be >= 1".into()));
        }
        if n_blocks == 0 {
            return Err(Error::Config("qem needs at least one residual block".into()));
        }
        Ok(QemParams {
            mlp_w1: trunc_normal(rng, &[noise_dim, d], 0.02),
            mlp_b1: Tensor::zeros(&[d]),
            mlp_w2: trunc_normal(rng, &[d, d], 0.02),
            mlp_b2: Tensor::zeros(&[d]),
            blocks: (0..n_blocks).map(|_| QemBlockParams::init(rng, d)).collect(),
            out_g: Tensor::ones(&[d]),
            out_b: Tensor::zeros(&[d]),
            out_w: trunc_normal(rng, &[d, d], 0.02),
            out_bias: Tensor::zeros(&[d]),
        })
    }

    pub fn noise_dim(&self) -> usize {
        self.mlp_w1.shape()[0]
    }

    pub fn for_each(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f("qem.mlp.w1".into(), &mut self.mlp_w1);
        f("qem.mlp.b1".into(), &mut self.mlp_b1);
        f("qem.mlp.w2".into(), &mut self.mlp_w2);
        f("qem.mlp.b2".into(), &mut self.mlp_b2);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.for_each(&format!("qem.block{i}"), f);
        }
        f("qem.out.g".into(), &mut self.out_g);
        f("qem.out.b".into(), &mut self.out_b);
        f("qem.out.w".into(), &mut self.out_w);
        f("qem.out.bias".into(), &mut self.out_bias);
    }
}

/// Reshape `[L, D]` encoder tokens to a `[D, H/P, W/P]` feature map.
pub fn tokens_to_map<T: Scalar>(h_enc: &Tensor<T>, spec: &GridSpec) -> Result<Tensor<T>> {
    let (gh, gw) = spec.inner_grid();
    let (l, _) = spec.token_counts()?;
    if h_enc.shape().len() != 2 || h_enc.shape()[0] != l {
        return Err(Error::Shape(format!(
            "tokens_to_map: tokens {:?} do not match L={l}",
            h_enc.shape()
        )));
    }
    let d = h_enc.shape()[1];
    h_enc.gather(&tokens_to_map_indices(spec, d), &[d, gh, gw])
}

/// Inverse of [`tokens_to_map`].
pub fn map_to_tokens<T: Scalar>(fmap: &Tensor<T>, spec: &GridSpec) -> Result<Tensor<T>> {
    let (gh, gw) = spec.inner_grid();
    if fmap.shape().len() != 3 || fmap.shape()[1] != gh || fmap.shape()[2] != gw {
        return Err(Error::Shape(format!(
            "map_to_tokens: map {:?} does not match grid {}x{}",
            fmap.shape(),
            gh,
            gw
        )));
    }
    let d = fmap.shape()[0];
    fmap.gather(&map_to_tokens_indices(spec, d), &[gh * gw, d])
}

/// Draw `[R, noise_dim]` noise.
pub fn sample_noise<T: Scalar, R: Rng>(
    rng: &mut R,
    r: usize,
    noise_dim: usize,
    kind: NoiseKind,
) -> Tensor<T> {
    let n = r * noise_dim;
    let data: Vec<T> = (0..n)
        .map(|_| match kind {
            NoiseKind::Normal => {
                let z: f64 = rng.sample(StandardNormal);
                T::from_f64(z)
            }
            NoiseKind::Uniform => {
                let u: f64 = rng.random::<f64>();
                T::from_f64(2.0 * u - 1.0)
            }
        })
        .collect();
    Tensor::from_vec(&[r, noise_dim], data).expect("noise shape")
}

/// Map noise through the shared two-layer MLP to `[R, D]` padding tokens.
pub fn noise_tokens<T: Scalar>(z: &Tensor<T>, p: &QemParams<T>) -> Result<Tensor<T>> {
    z.matmul(&p.mlp_w1)?
        .add(&p.mlp_b1)?
        .gelu()
        .matmul(&p.mlp_w2)?
        .add(&p.mlp_b2)
}

/// Pad the center feature map to the full grid: the center block passes
/// through unchanged, each ring cell receives `mlp(z)` with a fresh draw.
pub fn noise_pad<T: Scalar, R: Rng>(
    fmap: &Tensor<T>,
    spec: &GridSpec,
    ring: &RingIndex,
    p: &QemParams<T>,
    kind: NoiseKind,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let z = sample_noise(rng, ring.len(), p.noise_dim(), kind);
    noise_pad_with(fmap, spec, ring, p, &z)
}

/// Same as [`noise_pad`] but with the noise supplied by the caller, so a
/// forward pass can be replayed exactly.
pub fn noise_pad_with<T: Scalar>(
    fmap: &Tensor<T>,
    spec: &GridSpec,
    ring: &RingIndex,
    p: &QemParams<T>,
    z: &Tensor<T>,
) -> Result<Tensor<T>> {
    let d = fmap.shape()[0];
    let (gh, gw) = spec.padded_grid();
    let tokens = noise_tokens(z, p)?;
    let center = fmap.gather(&center_into_padded_indices(spec, d), &[d, gh, gw])?;
    let ring_map = tokens.gather(&ring_into_padded_indices(spec, ring, d), &[d, gh, gw])?;
    center.add(&ring_map)
}

/// Layer norm over channels at each spatial location of a `[D, h, w]` map.
fn channel_layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let rows = x.reshape(&[d, h * w])?.transpose_last2()?;
    let normed = rows.layer_norm(gamma, beta, LN_EPS)?;
    normed.transpose_last2()?.reshape(&[d, h, w])
}

/// One residual deformable block on a `[D, h, w]` map.
pub fn qem_block<T: Scalar>(x: &Tensor<T>, p: &QemBlockParams<T>) -> Result<Tensor<T>> {
    let (d, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let t = channel_layer_norm(x, &p.ln1_g, &p.ln1_b)?;
    let offsets = t
        .reshape(&[1, d, h, w])?
        .conv2d(&p.offset_w, &p.offset_b, 1, KERNEL / 2)?
        .reshape(&[2 * KERNEL * KERNEL, h, w])?;
    let refined = t
        .deformable_conv(&offsets, &p.deform_w, &p.deform_b)?
        .gelu();
    let mixed = channel_layer_norm(&refined, &p.ln2_g, &p.ln2_b)?
        .reshape(&[1, d, h, w])?
        .conv2d(&p.pw_w, &p.pw_b, 1, 0)?
        .reshape(&[d, h, w])?;
    x.add(&mixed)
}

/// Full query expansion: `[L, D]` encoder tokens to `[R, D]` queries in
/// ring order.
pub fn expand_queries<T: Scalar, R: Rng>(
    h_enc: &Tensor<T>,
    spec: &GridSpec,
    ring: &RingIndex,
    p: &QemParams<T>,
    kind: NoiseKind,
    rng: &mut R,
) -> Result<Tensor<T>> {
    let z = sample_noise(rng, ring.len(), p.noise_dim(), kind);
    expand_queries_with(h_enc, spec, ring, p, &z)
}

/// Deterministic core of [`expand_queries`], with the noise supplied.
pub fn expand_queries_with<T: Scalar>(
    h_enc: &Tensor<T>,
    spec: &GridSpec,
    ring: &RingIndex,
    p: &QemParams<T>,
    z: &Tensor<T>,
) -> Result<Tensor<T>> {
    let fmap = tokens_to_map(h_enc, spec)?;
    let mut padded = noise_pad_with(&fmap, spec, ring, p, z)?;
    for b in &p.blocks {
        padded = qem_block(&padded, b)?;
    }
    let d = h_enc.shape()[1];
    let queries = padded.gather(&ring_extract_indices(spec, ring, d), &[ring.len(), d])?;
    queries
        .layer_norm(&p.out_g, &p.out_b, LN_EPS)?
        .matmul(&p.out_w)?
        .add(&p.out_bias)
}
