//! Multi-scale PatchGAN discriminator with spectral normalization.
//!
//! Scale `s` sees the image downsampled `s` times by 2x2 area averaging and
//! runs a stack of strided 4x4 convolutions with channel doubling and leaky
//! ReLU, ending in a 1-channel patch score map. Every conv weight carries a
//! persistent power-iteration vector `u`; weights are divided by their
//! estimated top singular value before every use.

use rand::Rng;

use crate::error::{Error, Result};
use crate::init::{he_normal, normal};
use crate::losses::spectral::spectral_apply;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
const KERNEL: usize = 4;

/// One spectrally normalized convolution.
#[derive(Clone)]
pub struct SnConv<T: Scalar> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
    /// Persistent left singular vector estimate, one entry per out-channel.
    pub u: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> SnConv<T> {
    fn init<R: Rng>(rng: &mut R, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let w = he_normal(rng, &[out_ch, in_ch, KERNEL, KERNEL], in_ch * KERNEL * KERNEL);
        let mut u = normal::<T, _>(rng, &[out_ch], 1.0);
        let norm = u
            .data()
            .iter()
            .fold(T::ZERO, |acc, &v| acc + v * v)
            .sqrt()
            .maximum(T::from_f64(1e-12));
        for v in u.data_mut() {
            *v = *v / norm;
        }
        SnConv {
            w,
            b: Tensor::zeros(&[out_ch]),
            u,
            stride,
        }
    }

    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let w_sn = spectral_apply(&self.w, &self.u)?;
        x.conv2d(&w_sn, &self.b, self.stride, 1)
    }

    /// Spatial output size of this conv for the given input size.
    fn out_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if h + 2 < KERNEL || w + 2 < KERNEL {
            return None;
        }
        Some(((h + 2 - KERNEL) / self.stride + 1, (w + 2 - KERNEL) / self.stride + 1))
    }
}

/// Weights of the full multi-scale discriminator.
#[derive(Clone)]
pub struct DiscriminatorParams<T: Scalar> {
    pub scales: Vec<Vec<SnConv<T>>>,
}

impl<T: Scalar> DiscriminatorParams<T> {
    /// `n_scales` stacks, each `n_strided` strided convs with channel
    /// doubling from `base_channels`, plus the final 1-channel map.
    pub fn init<R: Rng>(
        rng: &mut R,
        n_scales: usize,
        base_channels: usize,
        n_strided: usize,
    ) -> Result<Self> {
        if n_scales == 0 {
            return Err(Error::Config("discriminator needs at least one scale".into()));
        }
        if base_channels == 0 || n_strided == 0 {
            return Err(Error::Config(
                "discriminator needs positive width and depth".into(),
            ));
        }
        let mut scales = Vec::with_capacity(n_scales);
        for _ in 0..n_scales {
            let mut stack = Vec::new();
            let mut in_ch = 3;
            let mut out_ch = base_channels;
            for _ in 0..n_strided {
                stack.push(SnConv::init(rng, in_ch, out_ch, 2));
                in_ch = out_ch;
                out_ch *= 2;
            }
            stack.push(SnConv::init(rng, in_ch, 1, 1));
            scales.push(stack);
        }
        Ok(DiscriminatorParams { scales })
    }

    pub fn n_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn for_each_trainable(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (s, stack) in self.scales.iter_mut().enumerate() {
            for (l, conv) in stack.iter_mut().enumerate() {
                f(format!("disc.s{s}.c{l}.w"), &mut conv.w);
                f(format!("disc.s{s}.c{l}.b"), &mut conv.b);
            }
        }
    }

    pub fn for_each_state(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        for (s, stack) in self.scales.iter_mut().enumerate() {
            for (l, conv) in stack.iter_mut().enumerate() {
                f(format!("disc.s{s}.c{l}.u"), &mut conv.u);
            }
        }
    }

    /// Refresh every persistent `u` by `n_iter` power-iteration steps against
    /// the current raw weights. Call once per discriminator update.
    pub fn refresh_sn(&mut self, n_iter: usize) -> Result<()> {
        for stack in &mut self.scales {
            for conv in stack {
                crate::losses::spectral::refresh_u(&conv.w, &mut conv.u, n_iter)?;
            }
        }
        Ok(())
    }

    /// Copy with weights registered on the tape for differentiation; the
    /// `u` state is carried along as constants.
    pub fn watch(&self, tape: &Tape<T>) -> Self {
        DiscriminatorParams {
            scales: self
                .scales
                .iter()
                .map(|stack| {
                    stack
                        .iter()
                        .map(|c| SnConv {
                            w: tape.watch(&c.w),
                            b: tape.watch(&c.b),
                            u: c.u.detach(),
                            stride: c.stride,
                        })
                        .collect()
                })
                .collect(),
        }
    }

    /// Validate that an image of the given size survives every stack.
    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        for (s, stack) in self.scales.iter().enumerate() {
            let (mut sh, mut sw) = (h >> s, w >> s);
            if !h.is_multiple_of(1 << s) || !w.is_multiple_of(1 << s) {
                return Err(Error::Config(format!(
                    "image {h}x{w} not divisible by 2^{s} for scale {s}"
                )));
            }
            for (l, conv) in stack.iter().enumerate() {
                match conv.out_size(sh, sw) {
                    Some((nh, nw)) if nh > 0 && nw > 0 => {
                        sh = nh;
                        sw = nw;
                    }
                    _ => {
                        return Err(Error::Config(format!(
                            "image {h}x{w} smaller than the receptive field of \
                             scale {s} (conv {l} sees {sh}x{sw})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Run the discriminator on one image `[1, 3, H, W]`, returning the patch
/// score map of every scale (finest first).
pub fn d_forward<T: Scalar>(
    img: &Tensor<T>,
    p: &DiscriminatorParams<T>,
) -> Result<Vec<Tensor<T>>> {
    let shape = img.shape();
    if shape.len() != 4 || shape[0] != 1 || shape[1] != 3 {
        return Err(Error::Shape(format!(
            "d_forward expects [1, 3, H, W], got {:?}",
            shape
        )));
    }
    p.check_input(shape[2], shape[3])?;
    let mut maps = Vec::with_capacity(p.scales.len());
    let mut scaled = img.clone();
    for (s, stack) in p.scales.iter().enumerate() {
        if s > 0 {
            scaled = scaled.avg_pool2()?;
        }
        let mut x = scaled.clone();
        let last = stack.len() - 1;
        for (l, conv) in stack.iter().enumerate() {
            x = conv.apply(&x)?;
            if l < last {
                x = x.leaky_relu(LEAKY_SLOPE);
            }
        }
        maps.push(x);
    }
    Ok(maps)
}
