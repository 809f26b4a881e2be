//! Peak signal-to-noise ratio on 8-bit-quantized images.

use qotr_core::tensor::Tensor;
use qotr_core::{Error, Result};

use crate::data::to_byte;

/// Reported for identical images (log of zero MSE is unbounded).
pub const PSNR_CAP_DB: f64 = 99.0;

/// 10·log10(255² / MSE) over the 8-bit quantizations of two [-1, 1] images.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "psnr: shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut sq_sum = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let d = to_byte(x) as f64 - to_byte(y) as f64;
        sq_sum += d * d;
    }
    let mse = sq_sum / a.numel() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_cap() {
        let img = Tensor::from_vec(&[3, 2, 2], vec![0.3; 12]).unwrap();
        assert_eq!(psnr(&img, &img).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn uniform_unit_error_closed_form() {
        // every byte differs by exactly 1 => MSE = 1 => 20·log10(255)
        let a = Tensor::from_vec(&[3, 2, 2], vec![-1.0; 12]).unwrap();
        let step = 2.0 / 255.0; // one 8-bit quantization step in [-1, 1]
        let b = Tensor::from_vec(&[3, 2, 2], vec![-1.0 + step; 12]).unwrap();
        let db = psnr(&a, &b).unwrap();
        assert!((db - 48.1308).abs() < 1e-3, "{db}");
    }

    #[test]
    fn quadrupled_mse_drops_six_db() {
        let a = Tensor::from_vec(&[3, 2, 2], vec![-1.0; 12]).unwrap();
        let step = 2.0 / 255.0;
        let b1 = Tensor::from_vec(&[3, 2, 2], vec![-1.0 + step; 12]).unwrap();
        let b2 = Tensor::from_vec(&[3, 2, 2], vec![-1.0 + 2.0 * step; 12]).unwrap();
        let d1 = psnr(&a, &b1).unwrap();
        let d2 = psnr(&a, &b2).unwrap();
        assert!((d1 - d2 - 6.0206).abs() < 1e-3, "{d1} {d2}");
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = Tensor::from_vec(&[3, 2, 2], (0..12).map(|v| v as f32 / 6.0 - 1.0).collect())
            .unwrap();
        let b = Tensor::from_vec(&[3, 2, 2], (0..12).map(|v| (11 - v) as f32 / 6.0 - 1.0).collect())
            .unwrap();
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}
