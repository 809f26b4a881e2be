//! Neural-network operations: normalizations, activations, convolution,
//! pooling, and bilinear/deformable sampling. Each is a single fused tape
//! node with a hand-derived backward rule.

use std::sync::Arc;

use crate::error::{shape_str, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::{mm_abt_acc, mm_acc, mm_atb_acc};
use crate::tensor::{Tape, Tensor};

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

impl<T: Scalar> Tensor<T> {
    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or_else(|| {
            Error::Shape("softmax_lastdim on rank-0 tensor".into())
        })?;
        if d == 0 {
            return Err(Error::Shape("softmax_lastdim over empty dimension".into()));
        }
        if self.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("softmax_lastdim on non-finite input".into()));
        }
        let mut data = vec![T::ZERO; self.numel()];
        for (row_out, row_in) in data.chunks_exact_mut(d).zip(self.data().chunks_exact(d)) {
            let mut m = T::neg_infinity();
            for &v in row_in {
                m = m.maximum(v);
            }
            let mut sum = T::ZERO;
            for (o, &v) in row_out.iter_mut().zip(row_in) {
                let e = (v - m).exp();
                *o = e;
                sum += e;
            }
            for o in row_out.iter_mut() {
                *o = *o / sum;
            }
        }
        let mut out = Tensor::from_vec(self.shape(), data)?;
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let yd = out.share_data();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    // dx = y ⊙ (g − <g, y>) per row
                    let mut gx = vec![T::ZERO; g.len()];
                    for ((gx_row, g_row), y_row) in gx
                        .chunks_exact_mut(d)
                        .zip(g.chunks_exact(d))
                        .zip(yd.chunks_exact(d))
                    {
                        let mut dot = T::ZERO;
                        for (&gv, &yv) in g_row.iter().zip(y_row) {
                            dot += gv * yv;
                        }
                        for ((o, &gv), &yv) in gx_row.iter_mut().zip(g_row).zip(y_row) {
                            *o = yv * (gv - dot);
                        }
                    }
                    vec![(pid, gx)]
                }),
            );
        }
        Ok(out)
    }

    /// Layer normalization over the last dimension with affine parameters.
    /// Uses population variance, so a `[1, 3]` slice normalizes to `[-1, 1]`.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = *self
            .shape()
            .last()
            .ok_or_else(|| Error::Shape("layer_norm on rank-0 tensor".into()))?;
        if gamma.numel() != d || beta.numel() != d {
            return Err(Error::Shape(format!(
                "layer_norm: gamma {} / beta {} do not match last dimension of {}",
                shape_str(gamma.shape()),
                shape_str(beta.shape()),
                shape_str(self.shape())
            )));
        }
        if eps <= 0.0 {
            return Err(Error::Config("layer_norm eps must be positive".into()));
        }
        let epsv = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let n_rows = self.numel() / d;
        let mut data = vec![T::ZERO; self.numel()];
        let mut xhat = vec![T::ZERO; self.numel()];
        let mut inv_std = vec![T::ZERO; n_rows];
        {
            let (gd, bd) = (gamma.data(), beta.data());
            for (r, (row_in, row_out)) in self
                .data()
                .chunks_exact(d)
                .zip(data.chunks_exact_mut(d))
                .enumerate()
            {
                let mut mean = T::ZERO;
                for &v in row_in {
                    mean += v;
                }
                mean *= inv_d;
                let mut var = T::ZERO;
                for &v in row_in {
                    let c = v - mean;
                    var += c * c;
                }
                var *= inv_d;
                let inv = T::ONE / (var + epsv).sqrt();
                inv_std[r] = inv;
                let xh = &mut xhat[r * d..(r + 1) * d];
                for (j, (&v, o)) in row_in.iter().zip(row_out.iter_mut()).enumerate() {
                    let h = (v - mean) * inv;
                    xh[j] = h;
                    *o = gd[j] * h + bd[j];
                }
            }
        }
        let mut out = Tensor::from_vec(self.shape(), data)?;
        if let Some(tape) = Tape::common(&[self, gamma, beta]) {
            let (px, pg, pb) = (self.parent_id(), gamma.parent_id(), beta.parent_id());
            let gd = gamma.share_data();
            let xhat = Arc::new(xhat);
            let inv_std = Arc::new(inv_std);
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut contributions = Vec::new();
                    if let Some(id) = px {
                        let mut gx = vec![T::ZERO; g.len()];
                        for (r, (gx_row, g_row)) in gx
                            .chunks_exact_mut(d)
                            .zip(g.chunks_exact(d))
                            .enumerate()
                        {
                            let xh = &xhat[r * d..(r + 1) * d];
                            let mut mean_gg = T::ZERO;
                            let mut mean_ggx = T::ZERO;
                            for j in 0..d {
                                let gg = g_row[j] * gd[j];
                                mean_gg += gg;
                                mean_ggx += gg * xh[j];
                            }
                            mean_gg *= inv_d;
                            mean_ggx *= inv_d;
                            for j in 0..d {
                                let gg = g_row[j] * gd[j];
                                gx_row[j] = inv_std[r] * (gg - mean_gg - xh[j] * mean_ggx);
                            }
                        }
                        contributions.push((id, gx));
                    }
                    if let Some(id) = pg {
                        let mut ggamma = vec![T::ZERO; d];
                        for (g_row, xh) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for j in 0..d {
                                ggamma[j] += g_row[j] * xh[j];
                            }
                        }
                        contributions.push((id, ggamma));
                    }
                    if let Some(id) = pb {
                        let mut gbeta = vec![T::ZERO; d];
                        for g_row in g.chunks_exact(d) {
                            for j in 0..d {
                                gbeta[j] += g_row[j];
                            }
                        }
                        contributions.push((id, gbeta));
                    }
                    contributions
                }),
            );
        }
        Ok(out)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64(GELU_COEF);
        let s = T::from_f64(SQRT_2_OVER_PI);
        let half = T::from_f64(0.5);
        let three = T::from_f64(3.0);
        self.unary_nn(
            move |x| {
                let u = s * (x + c * x * x * x);
                half * x * (T::ONE + u.tanh())
            },
            move |g, x| {
                let u = s * (x + c * x * x * x);
                let t = u.tanh();
                let sech2 = T::ONE - t * t;
                let du = s * (T::ONE + three * c * x * x);
                g * (half * (T::ONE + t) + half * x * sech2 * du)
            },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary_nn(
            |x| x.maximum(T::ZERO),
            |g, x| if x > T::ZERO { g } else { T::ZERO },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor<T> {
        let a = T::from_f64(slope);
        self.unary_nn(
            move |x| if x > T::ZERO { x } else { a * x },
            move |g, x| if x > T::ZERO { g } else { a * g },
        )
    }

    fn unary_nn(
        &self,
        fwd: impl Fn(T) -> T,
        back: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&v| fwd(v)).collect();
        let mut out = Tensor::from_vec(self.shape(), data).expect("same shape");
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let xd = self.share_data();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let gx: Vec<T> =
                        g.iter().zip(xd.iter()).map(|(&gv, &xv)| back(gv, xv)).collect();
                    vec![(pid, gx)]
                }),
            );
        }
        out
    }

    /// 2-D cross-correlation with zero padding over a `[B, C, H, W]` input.
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let ws = weight.shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects input [B,C,H,W] and weight [O,C,kh,kw], got {} and {}",
                shape_str(xs),
                shape_str(ws)
            )));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (oc, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != wc {
            return Err(Error::Shape(format!(
                "conv2d channel mismatch: input {} vs weight {}",
                shape_str(xs),
                shape_str(ws)
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        if bias.numel() != oc {
            return Err(Error::Shape(format!(
                "conv2d bias {} does not match {} output channels",
                shape_str(bias.shape()),
                oc
            )));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            b,
            c,
            h,
            w,
            oc,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };

        let patch = c * kh * kw;
        let pix = oh * ow;
        let mut data = vec![T::ZERO; b * oc * pix];
        {
            let xd = self.data();
            let wd = weight.data();
            let bd = bias.data();
            let mut col = vec![T::ZERO; patch * pix];
            for bi in 0..b {
                im2col(&geom, &xd[bi * c * h * w..], &mut col);
                let out_img = &mut data[bi * oc * pix..(bi + 1) * oc * pix];
                mm_acc(wd, &col, out_img, oc, patch, pix);
                for o in 0..oc {
                    let row = &mut out_img[o * pix..(o + 1) * pix];
                    for v in row.iter_mut() {
                        *v += bd[o];
                    }
                }
            }
        }
        let mut out = Tensor::from_vec(&[b, oc, oh, ow], data)?;
        if let Some(tape) = Tape::common(&[self, weight, bias]) {
            let (px, pw, pb) = (self.parent_id(), weight.parent_id(), bias.parent_id());
            let xd = self.share_data();
            let wd = weight.share_data();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut contributions = Vec::new();
                    let patch = geom.c * geom.kh * geom.kw;
                    let pix = geom.oh * geom.ow;
                    let img = geom.c * geom.h * geom.w;
                    let mut col = vec![T::ZERO; patch * pix];
                    if let Some(id) = pw {
                        let mut gw = vec![T::ZERO; geom.oc * patch];
                        for bi in 0..geom.b {
                            im2col(&geom, &xd[bi * img..], &mut col);
                            mm_abt_acc(
                                &g[bi * geom.oc * pix..(bi + 1) * geom.oc * pix],
                                &col,
                                &mut gw,
                                geom.oc,
                                pix,
                                patch,
                            );
                        }
                        contributions.push((id, gw));
                    }
                    if let Some(id) = px {
                        let mut gx = vec![T::ZERO; geom.b * img];
                        let mut gcol = vec![T::ZERO; patch * pix];
                        for bi in 0..geom.b {
                            gcol.iter_mut().for_each(|v| *v = T::ZERO);
                            mm_atb_acc(
                                &wd,
                                &g[bi * geom.oc * pix..(bi + 1) * geom.oc * pix],
                                &mut gcol,
                                geom.oc,
                                patch,
                                pix,
                            );
                            col2im_add(&geom, &gcol, &mut gx[bi * img..(bi + 1) * img]);
                        }
                        contributions.push((id, gx));
                    }
                    if let Some(id) = pb {
                        let mut gb = vec![T::ZERO; geom.oc];
                        for bi in 0..geom.b {
                            for o in 0..geom.oc {
                                let row = &g[(bi * geom.oc + o) * pix..(bi * geom.oc + o + 1) * pix];
                                for &v in row {
                                    gb[o] += v;
                                }
                            }
                        }
                        contributions.push((id, gb));
                    }
                    contributions
                }),
            );
        }
        Ok(out)
    }

    /// 2x2 area-average downsampling of a `[B, C, H, W]` tensor.
    pub fn avg_pool2(&self) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 4 {
            return Err(Error::Shape(format!(
                "avg_pool2 expects [B,C,H,W], got {}",
                shape_str(xs)
            )));
        }
        let (b, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "avg_pool2 needs even spatial dims, got {}x{}",
                h, w
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let quarter = T::from_f64(0.25);
        let mut data = vec![T::ZERO; b * c * oh * ow];
        {
            let xd = self.data();
            for plane in 0..b * c {
                let src = &xd[plane * h * w..(plane + 1) * h * w];
                let dst = &mut data[plane * oh * ow..(plane + 1) * oh * ow];
                for oy in 0..oh {
                    for ox in 0..ow {
                        let base = 2 * oy * w + 2 * ox;
                        dst[oy * ow + ox] =
                            (src[base] + src[base + 1] + src[base + w] + src[base + w + 1])
                                * quarter;
                    }
                }
            }
        }
        let mut out = Tensor::from_vec(&[b, c, oh, ow], data)?;
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let n_planes = b * c;
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut gx = vec![T::ZERO; n_planes * h * w];
                    for plane in 0..n_planes {
                        let gsrc = &g[plane * oh * ow..(plane + 1) * oh * ow];
                        let gdst = &mut gx[plane * h * w..(plane + 1) * h * w];
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = gsrc[oy * ow + ox] * quarter;
                                let base = 2 * oy * w + 2 * ox;
                                gdst[base] += gv;
                                gdst[base + 1] += gv;
                                gdst[base + w] += gv;
                                gdst[base + w + 1] += gv;
                            }
                        }
                    }
                    vec![(pid, gx)]
                }),
            );
        }
        Ok(out)
    }

    /// Sample a `[C, H, W]` image at fractional coordinates `(px, py)` with
    /// bilinear interpolation and zero padding outside the canvas.
    /// `px` and `py` are single-element tensors; gradients flow to the image
    /// and to both coordinates.
    pub fn bilinear_sample(&self, px: &Tensor<T>, py: &Tensor<T>) -> Result<Tensor<T>> {
        let xs = self.shape();
        if xs.len() != 3 {
            return Err(Error::Shape(format!(
                "bilinear_sample expects [C,H,W], got {}",
                shape_str(xs)
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let pxv = px.item()?;
        let pyv = py.item()?;
        let mut data = vec![T::ZERO; c];
        {
            let xd = self.data();
            for (ch, slot) in data.iter_mut().enumerate() {
                *slot = bilinear_at(&xd[ch * h * w..(ch + 1) * h * w], h, w, pyv, pxv).value;
            }
        }
        let mut out = Tensor::from_vec(&[c], data)?;
        if let Some(tape) = Tape::common(&[self, px, py]) {
            let (pi, ppx, ppy) = (self.parent_id(), px.parent_id(), py.parent_id());
            let xd = self.share_data();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut contributions = Vec::new();
                    let mut gx = vec![T::ZERO; c * h * w];
                    let mut gpx = T::ZERO;
                    let mut gpy = T::ZERO;
                    for ch in 0..c {
                        let plane = &xd[ch * h * w..(ch + 1) * h * w];
                        let s = bilinear_at(plane, h, w, pyv, pxv);
                        let gv = g[ch];
                        gpx += gv * s.d_dx;
                        gpy += gv * s.d_dy;
                        if pi.is_some() {
                            let gplane = &mut gx[ch * h * w..(ch + 1) * h * w];
                            for (idx, wgt) in s.corners {
                                if let Some(i) = idx {
                                    gplane[i] += gv * wgt;
                                }
                            }
                        }
                    }
                    if let Some(id) = pi {
                        contributions.push((id, gx));
                    }
                    if let Some(id) = ppx {
                        contributions.push((id, vec![gpx]));
                    }
                    if let Some(id) = ppy {
                        contributions.push((id, vec![gpy]));
                    }
                    contributions
                }),
            );
        }
        Ok(out)
    }

    /// Deformable 3x3-style convolution over a `[C, H, W]` map: each kernel
    /// tap samples the input at its base position displaced by a learned
    /// per-location offset, with bilinear interpolation and zero padding.
    /// Offsets are laid out `[2·kh·kw, H, W]` as (dy, dx) pairs per tap.
    /// Stride is 1 and padding `(k-1)/2`, so the output matches the input.
    pub fn deformable_conv(
        &self,
        offsets: &Tensor<T>,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let xs = self.shape();
        let os = offsets.shape();
        let ws = weight.shape();
        if xs.len() != 3 || os.len() != 3 || ws.len() != 4 {
            return Err(Error::Shape(format!(
                "deformable_conv expects x [C,H,W], offsets [2k²,H,W], weight [O,C,kh,kw]; got {}, {}, {}",
                shape_str(xs),
                shape_str(os),
                shape_str(ws)
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (oc, wc, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let taps = kh * kw;
        if wc != c {
            return Err(Error::Shape(format!(
                "deformable_conv channel mismatch: input {} vs weight {}",
                shape_str(xs),
                shape_str(ws)
            )));
        }
        if os[0] != 2 * taps || os[1] != h || os[2] != w {
            return Err(Error::Shape(format!(
                "deformable_conv offsets {} do not match 2·{} taps over {}x{}",
                shape_str(os),
                taps,
                h,
                w
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!(
                "deformable_conv kernel dims must be odd, got {}x{}",
                kh, kw
            )));
        }
        if bias.numel() != oc {
            return Err(Error::Shape(format!(
                "deformable_conv bias {} does not match {} output channels",
                shape_str(bias.shape()),
                oc
            )));
        }
        let (pad_y, pad_x) = (kh / 2, kw / 2);
        let plane = h * w;
        // corner geometry depends on (tap, position) only, never on the
        // input channel; hoisted out of the channel loops
        let dims = DeformDims {
            h,
            w,
            kw,
            pad_y,
            pad_x,
        };
        let tap_geom = move |od: &[T], pos: usize, oy: usize, ox: usize, t: usize| -> TapGeom<T> {
            let (ky, kx) = (t / dims.kw, t % dims.kw);
            let dy = od[2 * t * (dims.h * dims.w) + pos];
            let dx = od[(2 * t + 1) * (dims.h * dims.w) + pos];
            let sy = T::from_f64((oy + ky) as f64 - dims.pad_y as f64) + dy;
            let sx = T::from_f64((ox + kx) as f64 - dims.pad_x as f64) + dx;
            TapGeom::at(dims.h, dims.w, sy, sx)
        };

        let mut data = vec![T::ZERO; oc * plane];
        {
            let xd = self.data();
            let od = offsets.data();
            let wd = weight.data();
            let bd = bias.data();
            let mut geom: Vec<TapGeom<T>> = Vec::with_capacity(taps);
            let mut samples = vec![T::ZERO; c * taps];
            for oy in 0..h {
                for ox in 0..w {
                    let pos = oy * w + ox;
                    geom.clear();
                    geom.extend((0..taps).map(|t| tap_geom(od, pos, oy, ox, t)));
                    for ic in 0..c {
                        let plane_x = &xd[ic * plane..(ic + 1) * plane];
                        for (t, gm) in geom.iter().enumerate() {
                            samples[ic * taps + t] = gm.sample(plane_x);
                        }
                    }
                    for o in 0..oc {
                        let wrow = &wd[o * c * taps..(o + 1) * c * taps];
                        let mut acc = T::ZERO;
                        for (wv, sv) in wrow.iter().zip(&samples) {
                            acc += *wv * *sv;
                        }
                        // bias joins last, matching conv2d's accumulation
                        // order so integer offsets reproduce it bit-exactly
                        data[o * plane + pos] = acc + bd[o];
                    }
                }
            }
        }
        let mut out = Tensor::from_vec(&[oc, h, w], data)?;
        if let Some(tape) = Tape::common(&[self, offsets, weight, bias]) {
            let (pi, po, pw, pb) = (
                self.parent_id(),
                offsets.parent_id(),
                weight.parent_id(),
                bias.parent_id(),
            );
            let xd = self.share_data();
            let od = offsets.share_data();
            let wd = weight.share_data();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let ct = c * taps;
                    let mut gx = vec![T::ZERO; c * plane];
                    let mut goff = vec![T::ZERO; 2 * taps * plane];
                    let mut gw = vec![T::ZERO; oc * ct];
                    let mut gb = vec![T::ZERO; oc];
                    let mut geom: Vec<TapGeom<T>> = Vec::with_capacity(taps);
                    let mut samples = vec![T::ZERO; ct];
                    let mut ddy = vec![T::ZERO; ct];
                    let mut ddx = vec![T::ZERO; ct];
                    let mut dsample = vec![T::ZERO; ct];
                    for oy in 0..h {
                        for ox in 0..w {
                            let pos = oy * w + ox;
                            geom.clear();
                            geom.extend((0..taps).map(|t| tap_geom(&od, pos, oy, ox, t)));
                            for ic in 0..c {
                                let plane_x = &xd[ic * plane..(ic + 1) * plane];
                                for (t, gm) in geom.iter().enumerate() {
                                    let (v, dy, dx) = gm.sample_with_slopes(plane_x);
                                    samples[ic * taps + t] = v;
                                    ddy[ic * taps + t] = dy;
                                    ddx[ic * taps + t] = dx;
                                }
                            }
                            // dSample = Wᵀ·g and dW += g·samplesᵀ, both as
                            // contiguous row sweeps over the output channels
                            dsample.iter_mut().for_each(|v| *v = T::ZERO);
                            for o in 0..oc {
                                let gv = g[o * plane + pos];
                                gb[o] += gv;
                                let wrow = &wd[o * ct..(o + 1) * ct];
                                let gwrow = &mut gw[o * ct..(o + 1) * ct];
                                for j in 0..ct {
                                    dsample[j] += gv * wrow[j];
                                    gwrow[j] += gv * samples[j];
                                }
                            }
                            for ic in 0..c {
                                let gplane = &mut gx[ic * plane..(ic + 1) * plane];
                                for (t, gm) in geom.iter().enumerate() {
                                    let gs = dsample[ic * taps + t];
                                    goff[2 * t * plane + pos] += gs * ddy[ic * taps + t];
                                    goff[(2 * t + 1) * plane + pos] += gs * ddx[ic * taps + t];
                                    gm.scatter(gplane, gs);
                                }
                            }
                        }
                    }
                    let mut contributions = Vec::new();
                    if let Some(id) = pi {
                        contributions.push((id, gx));
                    }
                    if let Some(id) = po {
                        contributions.push((id, goff));
                    }
                    if let Some(id) = pw {
                        contributions.push((id, gw));
                    }
                    if let Some(id) = pb {
                        contributions.push((id, gb));
                    }
                    contributions
                }),
            );
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct DeformDims {
    h: usize,
    w: usize,
    kw: usize,
    pad_y: usize,
    pad_x: usize,
}

/// Precomputed bilinear corner geometry of one deformable tap: flat corner
/// indices (`usize::MAX` marks zero padding) and interpolation weights.
struct TapGeom<T> {
    idx: [usize; 4],
    wgt: [T; 4],
    fy: T,
    fx: T,
}

impl<T: Scalar> TapGeom<T> {
    const OUT: usize = usize::MAX;

    fn at(h: usize, w: usize, y: T, x: T) -> Self {
        let yf = y.to_f64().floor();
        let xf = x.to_f64().floor();
        let fy = y - T::from_f64(yf);
        let fx = x - T::from_f64(xf);
        let (y0, x0) = (yf as i64, xf as i64);
        let flat = |yy: i64, xx: i64| -> usize {
            if yy < 0 || yy >= h as i64 || xx < 0 || xx >= w as i64 {
                Self::OUT
            } else {
                yy as usize * w + xx as usize
            }
        };
        let one = T::ONE;
        TapGeom {
            idx: [
                flat(y0, x0),
                flat(y0, x0 + 1),
                flat(y0 + 1, x0),
                flat(y0 + 1, x0 + 1),
            ],
            wgt: [
                (one - fy) * (one - fx),
                (one - fy) * fx,
                fy * (one - fx),
                fy * fx,
            ],
            fy,
            fx,
        }
    }

    #[inline]
    fn corner(&self, plane: &[T], k: usize) -> T {
        let i = self.idx[k];
        if i == Self::OUT {
            T::ZERO
        } else {
            plane[i]
        }
    }

    /// Interpolated value; corner order matches `bilinear_at` exactly.
    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        self.wgt[0] * self.corner(plane, 0)
            + self.wgt[1] * self.corner(plane, 1)
            + self.wgt[2] * self.corner(plane, 2)
            + self.wgt[3] * self.corner(plane, 3)
    }

    /// Value plus partial derivatives with respect to the sample position.
    #[inline]
    fn sample_with_slopes(&self, plane: &[T]) -> (T, T, T) {
        let one = T::ONE;
        let v00 = self.corner(plane, 0);
        let v01 = self.corner(plane, 1);
        let v10 = self.corner(plane, 2);
        let v11 = self.corner(plane, 3);
        let v = self.wgt[0] * v00 + self.wgt[1] * v01 + self.wgt[2] * v10 + self.wgt[3] * v11;
        let d_dy = (one - self.fx) * (v10 - v00) + self.fx * (v11 - v01);
        let d_dx = (one - self.fy) * (v01 - v00) + self.fy * (v11 - v10);
        (v, d_dy, d_dx)
    }

    /// Distribute a gradient onto the in-bounds corners.
    #[inline]
    fn scatter(&self, gplane: &mut [T], gs: T) {
        for k in 0..4 {
            let i = self.idx[k];
            if i != Self::OUT {
                gplane[i] += gs * self.wgt[k];
            }
        }
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// col[(ic·kh + ky)·kw + kx][oy·ow + ox] = x[ic][oy·s + ky − pad][ox·s + kx − pad]
fn im2col<T: Scalar>(geom: &ConvGeom, x: &[T], col: &mut [T]) {
    let ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
        ..
    } = *geom;
    let pix = oh * ow;
    for ic in 0..c {
        let plane = &x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[((ic * kh + ky) * kw + kx) * pix..][..pix];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.iter_mut().for_each(|v| *v = T::ZERO);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::ZERO
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatter column gradients back onto the input image.
fn col2im_add<T: Scalar>(geom: &ConvGeom, col: &[T], x: &mut [T]) {
    let ConvGeom {
        c,
        h,
        w,
        kh,
        kw,
        stride,
        pad,
        oh,
        ow,
        ..
    } = *geom;
    let pix = oh * ow;
    for ic in 0..c {
        let plane = &mut x[ic * h * w..(ic + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[((ic * kh + ky) * kw + kx) * pix..][..pix];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in row[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) struct BilinearSample<T> {
    pub value: T,
    /// Flat in-plane indices and weights of the four corners (None = padding).
    pub corners: [(Option<usize>, T); 4],
    pub d_dy: T,
    pub d_dx: T,
}

/// Bilinear interpolation of one image plane at fractional (y, x), with
/// zero padding outside. Integer coordinates return the exact pixel.
pub(crate) fn bilinear_at<T: Scalar>(
    plane: &[T],
    h: usize,
    w: usize,
    y: T,
    x: T,
) -> BilinearSample<T> {
    let yf = y.to_f64().floor();
    let xf = x.to_f64().floor();
    let fy = y - T::from_f64(yf);
    let fx = x - T::from_f64(xf);
    let (y0, x0) = (yf as i64, xf as i64);

    let at = |yy: i64, xx: i64| -> (Option<usize>, T) {
        if yy < 0 || yy >= h as i64 || xx < 0 || xx >= w as i64 {
            (None, T::ZERO)
        } else {
            let i = yy as usize * w + xx as usize;
            (Some(i), plane[i])
        }
    };
    let (i00, v00) = at(y0, x0);
    let (i01, v01) = at(y0, x0 + 1);
    let (i10, v10) = at(y0 + 1, x0);
    let (i11, v11) = at(y0 + 1, x0 + 1);

    let one = T::ONE;
    let w00 = (one - fy) * (one - fx);
    let w01 = (one - fy) * fx;
    let w10 = fy * (one - fx);
    let w11 = fy * fx;
    let value = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11;

    // ∂v/∂x = (1−fy)(v01−v00) + fy(v11−v10); ∂v/∂y analogous.
    let d_dx = (one - fy) * (v01 - v00) + fy * (v11 - v10);
    let d_dy = (one - fx) * (v10 - v00) + fx * (v11 - v01);

    BilinearSample {
        value,
        corners: [(i00, w00), (i01, w01), (i10, w10), (i11, w11)],
        d_dy,
        d_dx,
    }
}
