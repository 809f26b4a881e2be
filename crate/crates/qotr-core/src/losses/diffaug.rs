//! Differentiable augmentation for discriminator regularization: brightness
//! shift, integer translation with zero fill, and square cutout. One draw is
//! sampled per training step and applied identically to the real and the
//! generated image.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GatherMap, Tensor};

const BRIGHTNESS_RANGE: f64 = 0.25;

/// One sampled augmentation, reusable across images of the same size.
#[derive(Clone, Copy, Debug)]
pub struct DiffAugDraw {
    pub brightness: f64,
    pub shift_y: i64,
    pub shift_x: i64,
    /// Top-left corner of the cutout square.
    pub cut_y: usize,
    pub cut_x: usize,
    pub cut_size: usize,
}

impl DiffAugDraw {
    /// Identity transform (all magnitudes zero).
    pub fn identity() -> Self {
        DiffAugDraw {
            brightness: 0.0,
            shift_y: 0,
            shift_x: 0,
            cut_y: 0,
            cut_x: 0,
            cut_size: 0,
        }
    }

    /// Sample a draw for `h` x `w` images: brightness in ±0.25, translation
    /// up to an eighth of each side, cutout square of a quarter side.
    pub fn sample<R: Rng>(rng: &mut R, h: usize, w: usize) -> Self {
        let brightness = (rng.random::<f64>() * 2.0 - 1.0) * BRIGHTNESS_RANGE;
        let max_dy = (h / 8) as i64;
        let max_dx = (w / 8) as i64;
        let shift_y = rng.random_range(-max_dy..=max_dy);
        let shift_x = rng.random_range(-max_dx..=max_dx);
        let cut_size = h.min(w) / 4;
        let cut_y = rng.random_range(0..=(h - cut_size));
        let cut_x = rng.random_range(0..=(w - cut_size));
        DiffAugDraw {
            brightness,
            shift_y,
            shift_x,
            cut_y,
            cut_x,
            cut_size,
        }
    }
}

/// Apply a draw to a `[3, H, W]` image. Piecewise differentiable in the
/// image: brightness is an affine shift, translation a fixed gather, cutout
/// a fixed mask multiply.
pub fn diff_augment<T: Scalar>(img: &Tensor<T>, draw: &DiffAugDraw) -> Result<Tensor<T>> {
    let shape = img.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "diff_augment expects [3, H, W], got {:?}",
            shape
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let mut out = img.add_scalar(draw.brightness);

    if draw.shift_y != 0 || draw.shift_x != 0 {
        let mut idx = vec![GatherMap::SENTINEL; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                let sy = y as i64 - draw.shift_y;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for x in 0..w {
                    let sx = x as i64 - draw.shift_x;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    idx[(ch * h + y) * w + x] = (ch * h + sy as usize) * w + sx as usize;
                }
            }
        }
        out = out.gather(&GatherMap::new(idx), shape)?;
    }

    if draw.cut_size > 0 {
        let mut mask = vec![T::ONE; c * h * w];
        for ch in 0..c {
            for y in draw.cut_y..(draw.cut_y + draw.cut_size).min(h) {
                for x in draw.cut_x..(draw.cut_x + draw.cut_size).min(w) {
                    mask[(ch * h + y) * w + x] = T::ZERO;
                }
            }
        }
        out = out.mul(&Tensor::from_vec(shape, mask)?)?;
    }
    Ok(out)
}
