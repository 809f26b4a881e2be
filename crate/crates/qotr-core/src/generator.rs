//! The full outpainting generator: encoder -> query expansion -> decoder ->
//! patch projection, plus canvas assembly. `Generator` precomputes the grid
//! geometry once; parameters are value-semantic and can be registered on a
//! tape for a training step via `watch`.

use rand::Rng;

use crate::attention::AttnTrace;
use crate::decoder::{decode_traced, DecoderParams};
use crate::encoder::{encode_traced, EncoderParams};
use crate::error::{Error, Result};
use crate::geometry::{partition_to_tokens, ring_index, GridSpec, RingIndex};
use crate::psm::{assemble, overlap_map, project_patches, OverlapMap, PsmParams};
use crate::qem::{expand_queries_with, sample_noise, NoiseKind, QemParams};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor};

/// Architecture hyperparameters (the grid lives in [`GridSpec`]).
#[derive(Clone, Copy, Debug)]
pub struct ModelDims {
    pub d_model: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub n_heads: usize,
    pub qem_blocks: usize,
    pub noise_dim: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_model: 64,
            enc_layers: 4,
            dec_layers: 4,
            n_heads: 4,
            qem_blocks: 2,
            noise_dim: 16,
        }
    }
}

/// Every learnable weight of the generator.
#[derive(Clone)]
pub struct GeneratorParams<T: Scalar> {
    pub encoder: EncoderParams<T>,
    pub qem: QemParams<T>,
    pub decoder: DecoderParams<T>,
    pub psm: PsmParams<T>,
}

impl<T: Scalar> GeneratorParams<T> {
    pub fn init<R: Rng>(rng: &mut R, spec: &GridSpec, dims: &ModelDims) -> Result<Self> {
        let (l, r) = spec.token_counts()?;
        if r == 0 {
            return Err(Error::Config("grid has no expansion ring (margin 0)".into()));
        }
        Ok(GeneratorParams {
            encoder: EncoderParams::init(
                rng,
                spec.token_dim(),
                l,
                dims.d_model,
                dims.enc_layers,
                dims.n_heads,
            )?,
            qem: QemParams::init(rng, dims.d_model, dims.noise_dim, dims.qem_blocks)?,
            decoder: DecoderParams::init(rng, r, dims.d_model, dims.dec_layers, dims.n_heads)?,
            psm: PsmParams::init(rng, dims.d_model, spec),
        })
    }

    pub fn for_each(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        self.encoder.for_each(f);
        self.qem.for_each(f);
        self.decoder.for_each(f);
        self.psm.for_each(f);
    }

    /// Copy with every tensor registered as a differentiation leaf.
    pub fn watch(&self, tape: &Tape<T>) -> Self {
        let mut live = self.clone();
        live.for_each(&mut |_, t| *t = tape.watch(t));
        live
    }

    /// Number of scalar parameters.
    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, t| n += t.numel());
        n
    }
}

/// Precomputed geometry plus forward logic for one grid.
pub struct Generator {
    spec: GridSpec,
    ring: RingIndex,
    omap: OverlapMap,
}

impl Generator {
    pub fn new(spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let ring = ring_index(&spec)?;
        let omap = overlap_map(&spec, &ring)?;
        Ok(Generator { spec, ring, omap })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn ring(&self) -> &RingIndex {
        &self.ring
    }

    pub fn omap(&self) -> &OverlapMap {
        &self.omap
    }

    /// Draw the QEM noise for one forward pass.
    pub fn draw_noise<T: Scalar, R: Rng>(&self, rng: &mut R, kind: NoiseKind, noise_dim: usize) -> Tensor<T> {
        sample_noise(rng, self.ring.len(), noise_dim, kind)
    }

    /// Predicted ring patches `[R, 3(P+2o)²]` for one input image `[3, H, W]`.
    pub fn forward_patches<T: Scalar>(
        &self,
        img: &Tensor<T>,
        p: &GeneratorParams<T>,
        noise: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        self.forward_patches_traced(img, p, noise, None)
    }

    pub fn forward_patches_traced<T: Scalar>(
        &self,
        img: &Tensor<T>,
        p: &GeneratorParams<T>,
        noise: &Tensor<T>,
        mut trace: Option<&mut AttnTrace<T>>,
    ) -> Result<Tensor<T>> {
        let tokens = partition_to_tokens(img, &self.spec)?;
        let h_enc = encode_traced(&tokens, &p.encoder, trace.as_deref_mut())?;
        let queries = expand_queries_with(&h_enc, &self.spec, &self.ring, &p.qem, noise)?;
        let decoded = decode_traced(&queries, &h_enc, &p.decoder, trace)?;
        project_patches(&decoded, &p.psm)
    }

    /// Full outpainting canvas `[3, H+2M, W+2M]` with the input preserved in
    /// the center.
    pub fn outpaint_canvas<T: Scalar>(
        &self,
        img: &Tensor<T>,
        p: &GeneratorParams<T>,
        noise: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let patches = self.forward_patches(img, p, noise)?;
        assemble(img, &patches, &self.spec, &self.omap)
    }
}
