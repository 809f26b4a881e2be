//! Image I/O and the in-memory dataset. Images are 8-bit RGB PNG on disk
//! and `[3, H, W]` tensors in [-1, 1] in memory.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use qotr_core::tensor::Tensor;
use qotr_core::{Error, Result};

/// Decode an RGB PNG into a `[3, H, W]` tensor in [-1, 1].
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let file = BufReader::new(File::open(path)?);
    let decoder = png::Decoder::new(file);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported PNG color type {other:?}",
                path.display()
            )))
        }
    };
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: only 8-bit PNG supported",
            path.display()
        )));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * channels;
            for c in 0..3 {
                let v = buf[base + c.min(channels - 1)];
                data[(c * h + y) * w + x] = v as f32 / 255.0 * 2.0 - 1.0;
            }
        }
    }
    Tensor::from_vec(&[3, h, w], data)
}

/// Quantize one channel value from [-1, 1] to a byte.
pub fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Encode a `[3, H, W]` tensor in [-1, 1] as an RGB PNG.
pub fn save_png(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let shape = img.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Shape(format!(
            "save_png expects [3, H, W], got {:?}",
            shape
        )));
    }
    let (h, w) = (shape[1], shape[2]);
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                buf[(y * w + x) * 3 + c] = to_byte(img.data()[(c * h + y) * w + x]);
            }
        }
    }
    writer
        .write_image_data(&buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// All ground-truth images of a directory, loaded eagerly in sorted filename
/// order so sampling is reproducible.
pub struct Dataset {
    pub images: Vec<Tensor<f32>>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    /// Load every `.png` under `dir`. `expect_hw` enforces the canvas size
    /// the grid needs; the mismatch is a configuration error at load time.
    pub fn load_dir(dir: &Path, expect_hw: Option<(usize, usize)>) -> Result<Self> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!(
                "no .png images in {}",
                dir.display()
            )));
        }
        let mut images = Vec::with_capacity(paths.len());
        for p in &paths {
            let img = load_png(p)?;
            if let Some((h, w)) = expect_hw {
                if img.shape() != [3, h, w] {
                    return Err(Error::Config(format!(
                        "{}: image is {}x{}, grid needs {h}x{w}",
                        p.display(),
                        img.shape()[1],
                        img.shape()[2]
                    )));
                }
            }
            images.push(img);
        }
        Ok(Dataset { images, paths })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Center-crop a `[3, H, W]` tensor to `(oh, ow)`.
pub fn center_crop(img: &Tensor<f32>, oh: usize, ow: usize) -> Result<Tensor<f32>> {
    let shape = img.shape();
    let (h, w) = (shape[1], shape[2]);
    if oh > h || ow > w {
        return Err(Error::Shape(format!(
            "center_crop to {oh}x{ow} from smaller {h}x{w}"
        )));
    }
    let (dy, dx) = ((h - oh) / 2, (w - ow) / 2);
    let mut data = vec![0.0f32; 3 * oh * ow];
    for c in 0..3 {
        for y in 0..oh {
            for x in 0..ow {
                data[(c * oh + y) * ow + x] = img.data()[(c * h + y + dy) * w + x + dx];
            }
        }
    }
    Tensor::from_vec(&[3, oh, ow], data)
}
