//! Inference: single and multi-step outpainting, and directory evaluation.
//!
//! The multi-step protocol resizes the current image back to the grid's
//! input size before every pass, so each step grows the canvas area by
//! ((H+2M)/H)² — 2.25x per step on the reference grid.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qotr_core::generator::Generator;
use qotr_core::tensor::Tensor;
use qotr_core::{Error, Result};

use crate::checkpoint::Checkpoint;
use crate::data::{center_crop, Dataset};
use crate::metrics::psnr;

/// Bilinear resize of a `[3, H, W]` image with edge clamping.
pub fn bilinear_resize(img: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let shape = img.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!(
            "bilinear_resize expects [3, H, W], got {:?}",
            shape
        )));
    }
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    if oh == h && ow == w {
        return Ok(img.clone());
    }
    let sy = h as f32 / oh as f32;
    let sx = w as f32 / ow as f32;
    let mut data = vec![0.0f32; c * oh * ow];
    for y in 0..oh {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f32;
        for x in 0..ow {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f32;
            for ch in 0..c {
                let plane = &img.data()[ch * h * w..(ch + 1) * h * w];
                let v = plane[y0 * w + x0] * (1.0 - ty) * (1.0 - tx)
                    + plane[y0 * w + x1] * (1.0 - ty) * tx
                    + plane[y1 * w + x0] * ty * (1.0 - tx)
                    + plane[y1 * w + x1] * ty * tx;
                data[(ch * oh + y) * ow + x] = v;
            }
        }
    }
    Tensor::from_vec(&[c, oh, ow], data)
}

/// Geometry of one outpainting step, for protocol verification.
#[derive(Clone, Copy, Debug)]
pub struct StepGeom {
    pub in_side: (usize, usize),
    pub out_side: (usize, usize),
}

/// Repeatedly outpaint: resize the current image to the grid input size,
/// run the generator, assemble the canvas. Returns the final canvas and the
/// per-step geometry trail.
pub fn outpaint(
    img: &Tensor<f32>,
    ckpt: &Checkpoint,
    steps: usize,
    seed: u64,
) -> Result<(Tensor<f32>, Vec<StepGeom>)> {
    if steps == 0 {
        return Err(Error::Contract("outpaint needs steps >= 1".into()));
    }
    let spec = ckpt.config.grid();
    let generator = Generator::new(spec)?;
    let noise_kind = ckpt.config.noise_kind()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut current = img.clone();
    let mut trail = Vec::with_capacity(steps);
    for _ in 0..steps {
        let resized = bilinear_resize(&current, spec.height, spec.width)?;
        let noise =
            generator.draw_noise::<f32, _>(&mut rng, noise_kind, ckpt.config.noise_dim);
        let canvas = generator.outpaint_canvas(&resized, &ckpt.generator, &noise)?;
        trail.push(StepGeom {
            in_side: (spec.height, spec.width),
            out_side: (canvas.shape()[1], canvas.shape()[2]),
        });
        current = canvas;
    }
    Ok((current, trail))
}

/// Mean PSNR of one-step outpainting over a directory of ground-truth
/// images sized for the checkpoint's grid.
pub fn eval_dir(ckpt: &Checkpoint, dir: &Path, seed: u64) -> Result<(f64, usize)> {
    let spec = ckpt.config.grid();
    let (ch, cw) = spec.canvas();
    let dataset = Dataset::load_dir(dir, Some((ch, cw)))?;
    let mut total = 0.0;
    for y in &dataset.images {
        let x = center_crop(y, spec.height, spec.width)?;
        let (out, _) = outpaint(&x, ckpt, 1, seed)?;
        total += psnr(&out, y)?;
    }
    Ok((total / dataset.len() as f64, dataset.len()))
}
