//! Patch smoothing: project decoder outputs to overlapped (P+2o)² pixel
//! patches, accumulate them onto the output canvas in ring order, average
//! where patches overlap, and install the input image in the center.
//!
//! Predicted pixels that fall inside the centered input footprint are
//! discarded — the center block is overwritten with the input verbatim —
//! and footprints are clipped at the canvas edge.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    center_into_canvas_indices, unclipped_footprint, GridSpec, RingIndex, CHANNELS,
};
use crate::init::trunc_normal;
use crate::scalar::Scalar;
use crate::tensor::{GatherMap, Tensor};

/// Projection from decoder space to overlapped pixel patches.
#[derive(Clone)]
pub struct PsmParams<T: Scalar> {
    /// `[D, 3(P+2o)²]`
    pub w_proj: Tensor<T>,
    pub b_proj: Tensor<T>,
}

impl<T: Scalar> PsmParams<T> {
    pub fn init<R: Rng>(rng: &mut R, d: usize, spec: &GridSpec) -> Self {
        let out = spec.out_patch_dim();
        PsmParams {
            w_proj: trunc_normal(rng, &[d, out], 0.02),
            b_proj: Tensor::zeros(&[out]),
        }
    }

    pub fn for_each(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        f("psm.w".into(), &mut self.w_proj);
        f("psm.b".into(), &mut self.b_proj);
    }
}

/// Precomputed placement geometry for one GridSpec: where every predicted
/// patch pixel lands on the canvas, per-pixel coverage counts, and the
/// gather map extracting regression targets from a ground-truth canvas.
#[derive(Clone)]
pub struct OverlapMap {
    spec: GridSpec,
    /// patch pixels -> canvas (sentinel: clipped or inside the center block)
    scatter: GatherMap,
    /// canvas -> ground-truth pixels for targets (sentinel: clipped only)
    target_gather: GatherMap,
    /// per canvas pixel: number of extended patches covering it
    counts: Vec<u32>,
    center_embed: GatherMap,
}

impl OverlapMap {
    /// How many extended patches touch each canvas pixel (one entry per
    /// spatial location).
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    fn weights<T: Scalar>(&self) -> Tensor<T> {
        let (ch, cw) = self.spec.canvas();
        let mut data = Vec::with_capacity(CHANNELS * ch * cw);
        for _ in 0..CHANNELS {
            for &c in &self.counts {
                data.push(if c == 0 {
                    T::ZERO
                } else {
                    T::ONE / T::from_usize(c as usize)
                });
            }
        }
        Tensor::from_vec(&[CHANNELS, ch, cw], data).expect("weight shape")
    }
}

/// Build the placement maps for a grid. Fails if some ring pixel would end
/// up covered by no patch (impossible for valid specs, guarded anyway).
pub fn overlap_map(spec: &GridSpec, ring: &RingIndex) -> Result<OverlapMap> {
    spec.validate()?;
    let (ch, cw) = spec.canvas();
    let (h, w, m) = (spec.height, spec.width, spec.margin);
    let side = spec.out_patch_side();
    let out_dim = spec.out_patch_dim();
    let in_center =
        |y: usize, x: usize| y >= m && y < m + h && x >= m && x < m + w;

    let mut scatter = vec![GatherMap::SENTINEL; ring.len() * out_dim];
    let mut target = vec![GatherMap::SENTINEL; ring.len() * out_dim];
    let mut counts = vec![0u32; ch * cw];

    for (r, &coord) in ring.coords().iter().enumerate() {
        let (oy, ox) = unclipped_footprint(spec, coord);
        for c in 0..CHANNELS {
            for py in 0..side {
                for px in 0..side {
                    let gy = oy + py as i64;
                    let gx = ox + px as i64;
                    let within = r * out_dim + (c * side + py) * side + px;
                    if gy < 0 || gy >= ch as i64 || gx < 0 || gx >= cw as i64 {
                        continue; // clipped at the canvas edge
                    }
                    let (gy, gx) = (gy as usize, gx as usize);
                    let flat = (c * ch + gy) * cw + gx;
                    target[within] = flat;
                    if !in_center(gy, gx) {
                        scatter[within] = flat;
                        if c == 0 {
                            counts[gy * cw + gx] += 1;
                        }
                    }
                }
            }
        }
    }

    // every ring pixel must be covered at least once
    for y in 0..ch {
        for x in 0..cw {
            if !in_center(y, x) && counts[y * cw + x] == 0 {
                return Err(Error::Geometry(format!(
                    "ring pixel ({y}, {x}) covered by no extended patch"
                )));
            }
        }
    }

    Ok(OverlapMap {
        spec: *spec,
        scatter: GatherMap::new(scatter),
        target_gather: GatherMap::new(target),
        counts,
        center_embed: center_into_canvas_indices(spec),
    })
}

/// Linear projection of decoder outputs `[R, D]` to patch pixel vectors
/// `[R, 3(P+2o)²]`.
pub fn project_patches<T: Scalar>(q: &Tensor<T>, p: &PsmParams<T>) -> Result<Tensor<T>> {
    q.matmul(&p.w_proj)?.add(&p.b_proj)
}

/// Place the predicted patches around the input `x` `[3, H, W]`: accumulate
/// each patch over its clipped footprint, divide by coverage, then overwrite
/// the central block with `x`.
pub fn assemble<T: Scalar>(
    x: &Tensor<T>,
    patches: &Tensor<T>,
    spec: &GridSpec,
    omap: &OverlapMap,
) -> Result<Tensor<T>> {
    if omap.spec() != spec {
        return Err(Error::Config("overlap map built for a different grid".into()));
    }
    let expect_img = [CHANNELS, spec.height, spec.width];
    if x.shape() != expect_img {
        return Err(Error::Shape(format!(
            "assemble: input {:?} does not match grid [3, {}, {}]",
            x.shape(),
            spec.height,
            spec.width
        )));
    }
    if patches.numel() != omap.scatter.len() {
        return Err(Error::Shape(format!(
            "assemble: patches {:?} do not match ring geometry",
            patches.shape()
        )));
    }
    let (ch, cw) = spec.canvas();
    let canvas_shape = [CHANNELS, ch, cw];
    let accumulated = patches.scatter_add(&omap.scatter, &canvas_shape)?;
    let averaged = accumulated.mul(&omap.weights::<T>())?;
    let center = x.gather(&omap.center_embed, &canvas_shape)?;
    averaged.add(&center)
}

/// Extract the extended ground-truth footprint of every ring cell from a
/// full canvas `[3, H+2M, W+2M]`, zero-padded where the footprint leaves the
/// canvas. These are the regression targets, in ring order.
pub fn disassemble_targets<T: Scalar>(
    y: &Tensor<T>,
    spec: &GridSpec,
    omap: &OverlapMap,
) -> Result<Tensor<T>> {
    let (ch, cw) = spec.canvas();
    if y.shape() != [CHANNELS, ch, cw] {
        return Err(Error::Shape(format!(
            "disassemble_targets: canvas {:?} does not match [3, {ch}, {cw}]",
            y.shape()
        )));
    }
    let r = omap.target_gather.len() / spec.out_patch_dim();
    y.gather(&omap.target_gather, &[r, spec.out_patch_dim()])
}
