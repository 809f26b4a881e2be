//! Procedural training corpus. Four image families with structure that
//! continues across the crop border, so the ring is predictable from the
//! center: oriented gradients, periodic stripes, smooth value noise, and
//! simple shapes on gradient backgrounds. A faint value-noise overlay keeps
//! every patch's variance away from zero.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qotr_core::tensor::Tensor;
use qotr_core::Result;

use crate::data::save_png;

/// Smooth noise from a bilinearly interpolated coarse lattice.
fn value_noise(rng: &mut ChaCha8Rng, size: usize, cells: usize, amplitude: f32) -> Vec<f32> {
    let n = cells + 2;
    let lattice: Vec<f32> = (0..n * n)
        .map(|_| (rng.random::<f32>() * 2.0 - 1.0) * amplitude)
        .collect();
    let scale = cells as f32 / size as f32;
    let mut out = vec![0.0f32; size * size];
    for y in 0..size {
        for x in 0..size {
            let fy = y as f32 * scale;
            let fx = x as f32 * scale;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
            let v00 = lattice[y0 * n + x0];
            let v01 = lattice[y0 * n + x0 + 1];
            let v10 = lattice[(y0 + 1) * n + x0];
            let v11 = lattice[(y0 + 1) * n + x0 + 1];
            out[y * size + x] = v00 * (1.0 - ty) * (1.0 - tx)
                + v01 * (1.0 - ty) * tx
                + v10 * ty * (1.0 - tx)
                + v11 * ty * tx;
        }
    }
    out
}

fn rand_color(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        rng.random::<f32>() * 1.6 - 0.8,
        rng.random::<f32>() * 1.6 - 0.8,
        rng.random::<f32>() * 1.6 - 0.8,
    ]
}

/// One synthetic image as a `[3, size, size]` tensor in [-1, 1].
pub fn synth_image(seed: u64, index: usize, size: usize) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let family = index % 4;
    let mut data = vec![0.0f32; 3 * size * size];

    match family {
        // oriented linear gradient between two colors
        0 => {
            let theta = rng.random::<f32>() * std::f32::consts::TAU;
            let (dy, dx) = (theta.sin(), theta.cos());
            let c0 = rand_color(&mut rng);
            let c1 = rand_color(&mut rng);
            for y in 0..size {
                for x in 0..size {
                    let t = ((y as f32 * dy + x as f32 * dx) / size as f32 + 1.0) * 0.5;
                    for c in 0..3 {
                        data[(c * size + y) * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
                    }
                }
            }
        }
        // periodic two-color stripes at a random angle
        1 => {
            let theta = rng.random::<f32>() * std::f32::consts::TAU;
            let (dy, dx) = (theta.sin(), theta.cos());
            let period = rng.random_range(8.0..(size as f32 / 2.0));
            let phase = rng.random::<f32>() * period;
            let c0 = rand_color(&mut rng);
            let c1 = rand_color(&mut rng);
            for y in 0..size {
                for x in 0..size {
                    let s = (y as f32 * dy + x as f32 * dx + phase) / period;
                    let t = 0.5 + 0.5 * (s * std::f32::consts::TAU).sin();
                    for c in 0..3 {
                        data[(c * size + y) * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
                    }
                }
            }
        }
        // smooth value-noise blobs, independent per channel
        2 => {
            for c in 0..3 {
                let cells = rng.random_range(2..5usize);
                let plane = value_noise(&mut rng, size, cells, 0.8);
                data[c * size * size..(c + 1) * size * size].copy_from_slice(&plane);
            }
        }
        // rectangles and an ellipse over a vertical gradient background
        _ => {
            let c0 = rand_color(&mut rng);
            let c1 = rand_color(&mut rng);
            for y in 0..size {
                let t = y as f32 / size as f32;
                for x in 0..size {
                    for c in 0..3 {
                        data[(c * size + y) * size + x] = c0[c] * (1.0 - t) + c1[c] * t;
                    }
                }
            }
            for _ in 0..rng.random_range(2..4usize) {
                let col = rand_color(&mut rng);
                let rw = rng.random_range(size / 6..size / 2);
                let rh = rng.random_range(size / 6..size / 2);
                let y0 = rng.random_range(0..size - rh);
                let x0 = rng.random_range(0..size - rw);
                for y in y0..y0 + rh {
                    for x in x0..x0 + rw {
                        for c in 0..3 {
                            data[(c * size + y) * size + x] = col[c];
                        }
                    }
                }
            }
            let col = rand_color(&mut rng);
            let (cy, cx) = (
                rng.random_range(size / 4..3 * size / 4) as f32,
                rng.random_range(size / 4..3 * size / 4) as f32,
            );
            let (ry, rx) = (
                rng.random_range(size / 8..size / 3) as f32,
                rng.random_range(size / 8..size / 3) as f32,
            );
            for y in 0..size {
                for x in 0..size {
                    let d = ((y as f32 - cy) / ry).powi(2) + ((x as f32 - cx) / rx).powi(2);
                    if d <= 1.0 {
                        for c in 0..3 {
                            data[(c * size + y) * size + x] = col[c];
                        }
                    }
                }
            }
        }
    }

    // faint smooth texture so no patch is exactly constant
    for c in 0..3 {
        let overlay = value_noise(&mut rng, size, 6, 0.08);
        for (d, o) in data[c * size * size..(c + 1) * size * size]
            .iter_mut()
            .zip(&overlay)
        {
            *d = (*d + o).clamp(-1.0, 1.0);
        }
    }

    Tensor::from_vec(&[3, size, size], data).expect("synth shape")
}

/// Write `count` deterministic images of side `size` under `dir` as
/// `img_0000.png` .. in place.
pub fn synth_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for i in 0..count {
        let img = synth_image(seed, i, size);
        save_png(&dir.join(format!("img_{i:04}.png")), &img)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn corpus_is_deterministic() {
        let a = synth_image(7, 3, 32);
        let b = synth_image(7, 3, 32);
        assert_eq!(a.data(), b.data());
        let c = synth_image(8, 3, 32);
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn corpus_writes_expected_files() {
        let dir = std::env::temp_dir().join("qotr_synth_test");
        std::fs::remove_dir_all(&dir).ok();
        synth_corpus(&dir, 5, 48, 1).unwrap();
        let ds = Dataset::load_dir(&dir, Some((48, 48))).unwrap();
        assert_eq!(ds.len(), 5);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn no_patch_is_constant() {
        // the overlay must keep per-patch variance healthy for the
        // normalized reconstruction loss
        for idx in 0..8 {
            let img = synth_image(3, idx, 64);
            for py in (0..64).step_by(8) {
                for px in (0..64).step_by(8) {
                    let mut vals = Vec::with_capacity(3 * 64);
                    for c in 0..3 {
                        for y in py..py + 8 {
                            for x in px..px + 8 {
                                vals.push(img.data()[(c * 64 + y) * 64 + x]);
                            }
                        }
                    }
                    let mean: f32 = vals.iter().sum::<f32>() / vals.len() as f32;
                    let var: f32 =
                        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / vals.len() as f32;
                    assert!(
                        var.sqrt() > 1e-3,
                        "degenerate patch at image {idx} ({py},{px}): std {}",
                        var.sqrt()
                    );
                }
            }
        }
    }
}
