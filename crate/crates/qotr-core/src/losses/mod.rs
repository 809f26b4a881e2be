//! Training objectives: per-patch-normalized reconstruction, feature-pyramid
//! perceptual distance, and the multi-scale hinge GAN pair.

pub mod diffaug;
pub mod discriminator;
pub mod features;
pub mod spectral;

pub use diffaug::{diff_augment, DiffAugDraw};
pub use discriminator::{d_forward, DiscriminatorParams, SnConv};
pub use features::FeatureExtractor;
pub use spectral::{estimate_sigma, spectral_apply, spectral_normalize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-6;

/// Weights of the generator objective.
#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_rec: 5.0,
            lambda_perceptual: 10.0,
        }
    }
}

/// Standardize prediction and target patch-by-patch using the target's
/// statistics: both sides of patch i map v to (v - mu_i) / (sigma_i + eps).
/// Statistics are constants of the step (no gradient through them).
pub fn per_patch_normalize<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if pred.shape() != target.shape() || pred.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "per_patch_normalize: prediction {:?} and target {:?} must be equal [R, n]",
            pred.shape(),
            target.shape()
        )));
    }
    let (r, n) = (pred.shape()[0], pred.shape()[1]);
    let inv_n = 1.0 / n as f64;
    let mut mean = vec![T::ZERO; r * n];
    let mut scale = vec![T::ZERO; r * n];
    for (i, row) in target.data().chunks_exact(n).enumerate() {
        let mut mu = T::ZERO;
        for &v in row {
            mu += v;
        }
        mu *= T::from_f64(inv_n);
        let mut var = T::ZERO;
        for &v in row {
            let c = v - mu;
            var += c * c;
        }
        var *= T::from_f64(inv_n);
        let inv_sigma = T::ONE / (var.sqrt() + T::from_f64(NORM_EPS));
        for j in 0..n {
            mean[i * n + j] = mu;
            scale[i * n + j] = inv_sigma;
        }
    }
    let mean = Tensor::from_vec(pred.shape(), mean)?;
    let scale = Tensor::from_vec(pred.shape(), scale)?;
    let norm_pred = pred.sub(&mean)?.mul(&scale)?;
    let norm_target = target.sub(&mean)?.mul(&scale)?;
    Ok((norm_pred, norm_target))
}

/// Patch reconstruction loss: mean over the R patches of the squared L2
/// distance between the normalized patch vectors.
pub fn rec_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let (np, nt) = per_patch_normalize(pred, target)?;
    let diff = nt.sub(&np)?;
    let r = pred.shape()[0];
    Ok(diff.mul(&diff)?.sum().scale(1.0 / r as f64))
}

/// Perceptual distance: weighted mean-squared feature differences over the
/// five pyramid stages, weights 1/32 .. 1 from shallowest to deepest.
pub fn perceptual_loss<T: Scalar>(
    x_hat: &Tensor<T>,
    y: &Tensor<T>,
    phi: &FeatureExtractor<T>,
) -> Result<Tensor<T>> {
    if x_hat.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "perceptual_loss: images {:?} vs {:?}",
            x_hat.shape(),
            y.shape()
        )));
    }
    const STAGE_WEIGHTS: [f64; 5] = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 1.0];
    let fx = phi.forward(x_hat)?;
    let fy = phi.forward(y)?;
    let mut total = Tensor::scalar(T::ZERO);
    for ((a, b), &w) in fx.iter().zip(&fy).zip(&STAGE_WEIGHTS) {
        let d = a.sub(b)?;
        total = total.add(&d.mul(&d)?.mean().scale(w))?;
    }
    Ok(total.scale(1.0 / phi.n_stages() as f64))
}

/// Discriminator hinge objective over matched score-map lists:
/// mean of max(0, 1 + D(fake)) + max(0, 1 - D(real)).
pub fn d_hinge_loss<T: Scalar>(
    scores_fake: &[Tensor<T>],
    scores_real: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if scores_fake.len() != scores_real.len() || scores_fake.is_empty() {
        return Err(Error::Shape(format!(
            "d_hinge_loss: {} fake score maps vs {} real",
            scores_fake.len(),
            scores_real.len()
        )));
    }
    let mut total = Tensor::scalar(T::ZERO);
    for (f, r) in scores_fake.iter().zip(scores_real) {
        let fake_term = f.add_scalar(1.0).relu().mean();
        let real_term = r.neg().add_scalar(1.0).relu().mean();
        total = total.add(&fake_term.add(&real_term)?)?;
    }
    Ok(total.scale(1.0 / scores_fake.len() as f64))
}

/// Generator adversarial objective: -mean(D(fake)) over scales and map
/// elements.
pub fn g_adv_loss<T: Scalar>(scores_fake: &[Tensor<T>]) -> Result<Tensor<T>> {
    if scores_fake.is_empty() {
        return Err(Error::Shape("g_adv_loss: no score maps".into()));
    }
    let mut total = Tensor::scalar(T::ZERO);
    for f in scores_fake {
        total = total.add(&f.mean())?;
    }
    Ok(total.scale(-1.0 / scores_fake.len() as f64))
}

/// Full generator objective: adv + lambda_rec * rec + lambda_perceptual * perc.
pub fn total_g_loss<T: Scalar>(
    adv: &Tensor<T>,
    rec: &Tensor<T>,
    perc: &Tensor<T>,
    w: &LossWeights,
) -> Result<Tensor<T>> {
    adv.add(&rec.scale(w.lambda_rec))?
        .add(&perc.scale(w.lambda_perceptual))
}
