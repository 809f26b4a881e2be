//! Frozen five-stage convolutional feature pyramid for the perceptual loss.
//!
//! Weights are random but fixed by seed, immutable after construction, and
//! never registered on a tape. A loading hook accepts real pretrained
//! weights in the project's tensor-table format behind the same interface.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::init::he_normal;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stage widths, shallow to deep.
const STAGE_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];
const KERNEL: usize = 3;

/// Default construction seed; independent of the training seed so losses
/// are comparable across runs.
pub const DEFAULT_FEATURE_SEED: u64 = 0x0f_ea_7e_5e;

#[derive(Clone)]
pub struct FeatureExtractor<T: Scalar> {
    stages: Vec<(Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> FeatureExtractor<T> {
    /// Deterministic random pyramid from a seed.
    pub fn with_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::with_capacity(STAGE_CHANNELS.len());
        let mut in_ch = 3;
        for &out_ch in &STAGE_CHANNELS {
            let w = he_normal(&mut rng, &[out_ch, in_ch, KERNEL, KERNEL], in_ch * KERNEL * KERNEL);
            stages.push((w, Tensor::zeros(&[out_ch])));
            in_ch = out_ch;
        }
        FeatureExtractor { stages }
    }

    /// Build from externally supplied weights named `feat.stage{i}.w` /
    /// `feat.stage{i}.b`, shaped like the built-in pyramid.
    pub fn from_entries(entries: &[(String, Vec<usize>, Vec<T>)]) -> Result<Self> {
        let mut stages = Vec::with_capacity(STAGE_CHANNELS.len());
        let mut in_ch = 3;
        for (i, &out_ch) in STAGE_CHANNELS.iter().enumerate() {
            let find = |name: &str| -> Result<Tensor<T>> {
                let (_, shape, data) = entries
                    .iter()
                    .find(|(n, _, _)| n == name)
                    .ok_or_else(|| Error::Format(format!("missing tensor {name}")))?;
                Tensor::from_vec(shape, data.clone())
            };
            let w = find(&format!("feat.stage{i}.w"))?;
            let b = find(&format!("feat.stage{i}.b"))?;
            if w.shape() != [out_ch, in_ch, KERNEL, KERNEL] {
                return Err(Error::Format(format!(
                    "feat.stage{i}.w has shape {:?}, expected [{out_ch}, {in_ch}, {KERNEL}, {KERNEL}]",
                    w.shape()
                )));
            }
            stages.push((w, b));
            in_ch = out_ch;
        }
        Ok(FeatureExtractor { stages })
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Feature maps of all five stages for `[1, 3, H, W]` input, at scales
    /// 1, 1/2, 1/4, 1/8, 1/16. Gradients flow through the image only.
    pub fn forward(&self, img: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if img.shape().len() != 4 || img.shape()[1] != 3 {
            return Err(Error::Shape(format!(
                "feature extractor expects [1, 3, H, W], got {:?}",
                img.shape()
            )));
        }
        let mut outs = Vec::with_capacity(self.stages.len());
        let mut x = img.clone();
        for (i, (w, b)) in self.stages.iter().enumerate() {
            if i > 0 {
                x = x.avg_pool2()?;
            }
            x = x.conv2d(w, b, 1, KERNEL / 2)?.relu();
            outs.push(x.clone());
        }
        Ok(outs)
    }
}
