//! Patch-grid index arithmetic: tokenization of the input image, enumeration
//! of the expanded ring of output cells, and the pixel maps used to place
//! extended patches on the output canvas.
//!
//! Conventions: images are channels-first `[3, H, W]`; patches are enumerated
//! row-major; the output canvas is `(H+2M) x (W+2M)` with the input block
//! centered; ring cells are enumerated row-major over the padded grid,
//! skipping the center block.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{GatherMap, Tensor};

pub const CHANNELS: usize = 3;

/// Geometry of one outpainting configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    /// Input height in pixels.
    pub height: usize,
    /// Input width in pixels.
    pub width: usize,
    /// Margin added on every side, in pixels.
    pub margin: usize,
    /// Patch side length in pixels.
    pub patch: usize,
    /// Overlap extension per patch edge, in pixels.
    pub overlap: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, margin: usize, patch: usize, overlap: usize) -> Self {
        GridSpec {
            height,
            width,
            margin,
            patch,
            overlap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 {
            return Err(Error::Config("patch size must be positive".into()));
        }
        if self.height == 0 || !self.height.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "height {} is not a positive multiple of patch {}",
                self.height, self.patch
            )));
        }
        if self.width == 0 || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "width {} is not a positive multiple of patch {}",
                self.width, self.patch
            )));
        }
        if !self.margin.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "margin {} is not a multiple of patch {}",
                self.margin, self.patch
            )));
        }
        if self.overlap >= self.patch {
            return Err(Error::Config(format!(
                "overlap {} must be smaller than patch {}",
                self.overlap, self.patch
            )));
        }
        Ok(())
    }

    /// (L, R): input token count and expanded ring token count.
    pub fn token_counts(&self) -> Result<(usize, usize)> {
        self.validate()?;
        let p2 = self.patch * self.patch;
        let l = self.height * self.width / p2;
        let (ch, cw) = self.canvas();
        let r = (ch * cw - self.height * self.width) / p2;
        Ok((l, r))
    }

    /// Output canvas size (H + 2M, W + 2M).
    pub fn canvas(&self) -> (usize, usize) {
        (self.height + 2 * self.margin, self.width + 2 * self.margin)
    }

    /// Grid cells covering the input: (H/P, W/P).
    pub fn inner_grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// Grid cells covering the canvas: ((H+2M)/P, (W+2M)/P).
    pub fn padded_grid(&self) -> (usize, usize) {
        let (ch, cw) = self.canvas();
        (ch / self.patch, cw / self.patch)
    }

    /// Margin in cells, M/P.
    pub fn margin_cells(&self) -> usize {
        self.margin / self.patch
    }

    /// Flattened input token width, 3P².
    pub fn token_dim(&self) -> usize {
        CHANNELS * self.patch * self.patch
    }

    /// Extended output patch side, P + 2o.
    pub fn out_patch_side(&self) -> usize {
        self.patch + 2 * self.overlap
    }

    /// Flattened output patch width, 3(P+2o)².
    pub fn out_patch_dim(&self) -> usize {
        let s = self.out_patch_side();
        CHANNELS * s * s
    }
}

/// Ring cell enumeration: the padded-grid coordinates outside the centered
/// input block, in deterministic row-major order.
#[derive(Clone, Debug)]
pub struct RingIndex {
    coords: Vec<(usize, usize)>,
}

impl RingIndex {
    /// Ring coordinates in token order.
    pub fn coords(&self) -> &[(usize, usize)] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Padded-grid coordinate of ring token `i`.
    pub fn coord(&self, i: usize) -> (usize, usize) {
        self.coords[i]
    }
}

/// Whether a padded-grid cell lies inside the centered input block.
pub fn in_center_block(spec: &GridSpec, row: usize, col: usize) -> bool {
    let m = spec.margin_cells();
    let (ih, iw) = spec.inner_grid();
    row >= m && row < m + ih && col >= m && col < m + iw
}

/// Enumerate the R frame cells of the padded grid, row-major, skipping the
/// center block. Errors when the margin is zero (empty ring).
pub fn ring_index(spec: &GridSpec) -> Result<RingIndex> {
    spec.validate()?;
    if spec.margin == 0 {
        return Err(Error::Config(
            "margin is zero: the expanded ring is empty".into(),
        ));
    }
    let (gh, gw) = spec.padded_grid();
    let mut coords = Vec::new();
    for row in 0..gh {
        for col in 0..gw {
            if !in_center_block(spec, row, col) {
                coords.push((row, col));
            }
        }
    }
    let (_, r) = spec.token_counts()?;
    debug_assert_eq!(coords.len(), r);
    Ok(RingIndex { coords })
}

/// Pixel rectangle on the output canvas, half-open in both axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl PixelRect {
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

/// Extended footprint of a padded-grid cell: the P x P tile grown by `o`
/// pixels on every edge, clipped to the canvas.
pub fn patch_footprint(spec: &GridSpec, coord: (usize, usize)) -> PixelRect {
    let (row, col) = coord;
    let p = spec.patch as i64;
    let o = spec.overlap as i64;
    let (ch, cw) = spec.canvas();
    let y0 = (row as i64 * p - o).max(0) as usize;
    let y1 = ((row as i64 * p + p + o) as usize).min(ch);
    let x0 = (col as i64 * p - o).max(0) as usize;
    let x1 = ((col as i64 * p + p + o) as usize).min(cw);
    PixelRect { y0, y1, x0, x1 }
}

/// Unclipped extended footprint; coordinates may be negative or exceed the
/// canvas. Used to align clipped pixels inside the fixed-width patch vector.
pub fn unclipped_footprint(spec: &GridSpec, coord: (usize, usize)) -> (i64, i64) {
    let (row, col) = coord;
    let p = spec.patch as i64;
    let o = spec.overlap as i64;
    (row as i64 * p - o, col as i64 * p - o)
}

/// Gather map realizing `partition_to_tokens`: token i, in row-major patch
/// order, is the flattened (channel, row, col) pixels of patch i.
pub fn partition_indices(spec: &GridSpec) -> GatherMap {
    let (gh, gw) = spec.inner_grid();
    let p = spec.patch;
    let (h, w) = (spec.height, spec.width);
    let mut idx = Vec::with_capacity(gh * gw * CHANNELS * p * p);
    for row in 0..gh {
        for col in 0..gw {
            for c in 0..CHANNELS {
                for py in 0..p {
                    for px in 0..p {
                        let y = row * p + py;
                        let x = col * p + px;
                        idx.push((c * h + y) * w + x);
                    }
                }
            }
        }
    }
    GatherMap::new(idx)
}

/// Gather map realizing the exact inverse of `partition_to_tokens`.
pub fn unpartition_indices(spec: &GridSpec) -> GatherMap {
    let (gh, gw) = spec.inner_grid();
    let p = spec.patch;
    let (h, w) = (spec.height, spec.width);
    let token_dim = spec.token_dim();
    let mut idx = vec![0usize; CHANNELS * h * w];
    for row in 0..gh {
        for col in 0..gw {
            let token = row * gw + col;
            for c in 0..CHANNELS {
                for py in 0..p {
                    for px in 0..p {
                        let y = row * p + py;
                        let x = col * p + px;
                        let within = (c * p + py) * p + px;
                        idx[(c * h + y) * w + x] = token * token_dim + within;
                    }
                }
            }
        }
    }
    GatherMap::new(idx)
}

/// Split an image `[3, H, W]` into the token sequence `[L, 3P²]`.
pub fn partition_to_tokens<T: Scalar>(img: &Tensor<T>, spec: &GridSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let expect = [CHANNELS, spec.height, spec.width];
    if img.shape() != expect {
        return Err(Error::Shape(format!(
            "partition_to_tokens: image {:?} does not match grid [3, {}, {}]",
            img.shape(),
            spec.height,
            spec.width
        )));
    }
    let (l, _) = spec.token_counts()?;
    img.gather(&partition_indices(spec), &[l, spec.token_dim()])
}

/// Reassemble the token sequence `[L, 3P²]` into the image `[3, H, W]`.
/// Exact inverse of `partition_to_tokens`.
pub fn tokens_to_image<T: Scalar>(tokens: &Tensor<T>, spec: &GridSpec) -> Result<Tensor<T>> {
    spec.validate()?;
    let (l, _) = spec.token_counts()?;
    if tokens.shape() != [l, spec.token_dim()] {
        return Err(Error::Shape(format!(
            "tokens_to_image: tokens {:?} do not match [L={}, {}]",
            tokens.shape(),
            l,
            spec.token_dim()
        )));
    }
    tokens.gather(
        &unpartition_indices(spec),
        &[CHANNELS, spec.height, spec.width],
    )
}

/// Gather map from a `[L, D]` token sequence to a `[D, H/P, W/P]` feature
/// map (inverse of row-major tokenization, channels-first).
pub fn tokens_to_map_indices(spec: &GridSpec, d: usize) -> GatherMap {
    let (gh, gw) = spec.inner_grid();
    let mut idx = Vec::with_capacity(d * gh * gw);
    for ch in 0..d {
        for row in 0..gh {
            for col in 0..gw {
                let token = row * gw + col;
                idx.push(token * d + ch);
            }
        }
    }
    GatherMap::new(idx)
}

/// Gather map from a `[D, H/P, W/P]` feature map back to `[L, D]` tokens.
pub fn map_to_tokens_indices(spec: &GridSpec, d: usize) -> GatherMap {
    let (gh, gw) = spec.inner_grid();
    let cells = gh * gw;
    let mut idx = Vec::with_capacity(cells * d);
    for token in 0..cells {
        let (row, col) = (token / gw, token % gw);
        for ch in 0..d {
            idx.push((ch * gh + row) * gw + col);
        }
    }
    GatherMap::new(idx)
}

/// Gather map placing a `[D, H/P, W/P]` center map into the `[D, gh, gw]`
/// padded grid, zero elsewhere.
pub fn center_into_padded_indices(spec: &GridSpec, d: usize) -> GatherMap {
    let (ih, iw) = spec.inner_grid();
    let (gh, gw) = spec.padded_grid();
    let m = spec.margin_cells();
    let mut idx = vec![GatherMap::SENTINEL; d * gh * gw];
    for ch in 0..d {
        for row in 0..gh {
            for col in 0..gw {
                if in_center_block(spec, row, col) {
                    let (sy, sx) = (row - m, col - m);
                    idx[(ch * gh + row) * gw + col] = (ch * ih + sy) * iw + sx;
                }
            }
        }
    }
    GatherMap::new(idx)
}

/// Gather map placing `[R, D]` ring tokens into the `[D, gh, gw]` padded
/// grid, zero on the center block.
pub fn ring_into_padded_indices(spec: &GridSpec, ring: &RingIndex, d: usize) -> GatherMap {
    let (gh, gw) = spec.padded_grid();
    let mut idx = vec![GatherMap::SENTINEL; d * gh * gw];
    for (token, &(row, col)) in ring.coords().iter().enumerate() {
        for ch in 0..d {
            idx[(ch * gh + row) * gw + col] = token * d + ch;
        }
    }
    GatherMap::new(idx)
}

/// Gather map extracting the `[R, D]` ring tokens from a `[D, gh, gw]`
/// padded feature map, in ring order.
pub fn ring_extract_indices(spec: &GridSpec, ring: &RingIndex, d: usize) -> GatherMap {
    let (gh, gw) = spec.padded_grid();
    let mut idx = Vec::with_capacity(ring.len() * d);
    for &(row, col) in ring.coords() {
        for ch in 0..d {
            idx.push((ch * gh + row) * gw + col);
        }
    }
    GatherMap::new(idx)
}

/// Gather map embedding the input image `[3, H, W]` into the center of the
/// output canvas `[3, H+2M, W+2M]`, zero on the ring.
pub fn center_into_canvas_indices(spec: &GridSpec) -> GatherMap {
    let (ch_, cw) = spec.canvas();
    let (h, w, m) = (spec.height, spec.width, spec.margin);
    let mut idx = vec![GatherMap::SENTINEL; CHANNELS * ch_ * cw];
    for c in 0..CHANNELS {
        for y in 0..h {
            for x in 0..w {
                idx[(c * ch_ + y + m) * cw + (x + m)] = (c * h + y) * w + x;
            }
        }
    }
    GatherMap::new(idx)
}
