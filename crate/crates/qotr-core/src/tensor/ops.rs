//! Elementwise, linear-algebra, and structural tensor operations.
//!
//! Every op computes its value eagerly and, when an operand is tracked,
//! records a backward closure on the shared tape. Binary elementwise ops
//! broadcast the right operand when it is a scalar or a trailing-shape
//! suffix of the left operand (covers bias adds and per-row statistics).

use std::sync::Arc;

use crate::error::{shape_str, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel_of, GatherMap, Tape, Tensor};

/// out[m,n] += a[m,k] · b[k,n]
pub(crate) fn mm_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] · b[n,k]ᵀ
pub(crate) fn mm_abt_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out[k,n] += a[m,k]ᵀ · b[m,n]
pub(crate) fn mm_atb_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

enum BinMode {
    Same,
    Scalar,
    Suffix,
}

fn bin_mode<T: Scalar>(lhs: &Tensor<T>, rhs: &Tensor<T>, op: &str) -> Result<BinMode> {
    if lhs.shape() == rhs.shape() {
        return Ok(BinMode::Same);
    }
    if rhs.numel() == 1 {
        return Ok(BinMode::Scalar);
    }
    let l = lhs.shape();
    let r = rhs.shape();
    if r.len() <= l.len() && l[l.len() - r.len()..] == *r && !r.is_empty() {
        return Ok(BinMode::Suffix);
    }
    Err(Error::Shape(format!(
        "{op}: cannot broadcast {} with {}",
        shape_str(l),
        shape_str(r)
    )))
}

/// Sum an lhs-shaped buffer down to the rhs shape under the given mode.
fn reduce_to_rhs<T: Scalar>(full: &[T], rhs_len: usize, mode: &BinMode) -> Vec<T> {
    match mode {
        BinMode::Same => full.to_vec(),
        BinMode::Scalar => {
            let mut acc = T::ZERO;
            for v in full {
                acc += *v;
            }
            vec![acc]
        }
        BinMode::Suffix => {
            let mut out = vec![T::ZERO; rhs_len];
            for chunk in full.chunks_exact(rhs_len) {
                for (o, v) in out.iter_mut().zip(chunk) {
                    *o += *v;
                }
            }
            out
        }
    }
}

fn rhs_at<T: Scalar>(rhs: &[T], i: usize, mode: &BinMode) -> T {
    match mode {
        BinMode::Same => rhs[i],
        BinMode::Scalar => rhs[0],
        BinMode::Suffix => rhs[i % rhs.len()],
    }
}

impl<T: Scalar> Tensor<T> {
    fn binary_elementwise(
        &self,
        rhs: &Tensor<T>,
        op: &'static str,
        fwd: fn(T, T) -> T,
        dl: fn(T, T, T) -> T,
        dr: fn(T, T, T) -> T,
    ) -> Result<Tensor<T>> {
        let mode = bin_mode(self, rhs, op)?;
        let rd = rhs.data();
        let data: Vec<T> = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &l)| fwd(l, rhs_at(rd, i, &mode)))
            .collect();
        let mut out = Tensor::from_vec(self.shape(), data)?;
        if let Some(tape) = Tape::common(&[self, rhs]) {
            let (pl, pr) = (self.parent_id(), rhs.parent_id());
            let (ld, rd) = (self.share_data(), rhs.share_data());
            let rhs_len = rhs.numel();
            out.attach(&tape, {
                Box::new(move |g: &[T]| {
                    let mut contributions = Vec::new();
                    if let Some(id) = pl {
                        let gl: Vec<T> = g
                            .iter()
                            .enumerate()
                            .map(|(i, &gv)| dl(gv, ld[i], rhs_at(&rd, i, &mode)))
                            .collect();
                        contributions.push((id, gl));
                    }
                    if let Some(id) = pr {
                        let gr_full: Vec<T> = g
                            .iter()
                            .enumerate()
                            .map(|(i, &gv)| dr(gv, ld[i], rhs_at(&rd, i, &mode)))
                            .collect();
                        contributions.push((id, reduce_to_rhs(&gr_full, rhs_len, &mode)));
                    }
                    contributions
                })
            });
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_elementwise(rhs, "add", |l, r| l + r, |g, _, _| g, |g, _, _| g)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_elementwise(rhs, "sub", |l, r| l - r, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_elementwise(rhs, "mul", |l, r| l * r, |g, _, r| g * r, |g, l, _| g * l)
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary_elementwise(
            rhs,
            "div",
            |l, r| l / r,
            |g, _, r| g / r,
            |g, l, r| -g * l / (r * r),
        )
    }

    fn unary_map(
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
                    let gx: Vec<T> = g.iter().zip(xd.iter()).map(|(&gv, &xv)| back(gv, xv)).collect();
                    vec![(pid, gx)]
                }),
            );
        }
        out
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary_map(|v| -v, |g, _| -g)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let cv = T::from_f64(c);
        self.unary_map(move |v| v * cv, move |g, _| g * cv)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor<T> {
        let cv = T::from_f64(c);
        self.unary_map(move |v| v + cv, |g, _| g)
    }

    /// Matrix product with broadcasting over leading batch dimensions.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (la, lb) = (self.shape(), rhs.shape());
        if la.len() < 2 || lb.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank >= 2 operands, got {} and {}",
                shape_str(la),
                shape_str(lb)
            )));
        }
        let (m, k) = (la[la.len() - 2], la[la.len() - 1]);
        let (k2, n) = (lb[lb.len() - 2], lb[lb.len() - 1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {} vs {}",
                shape_str(la),
                shape_str(lb)
            )));
        }
        let (out_lead, pairs) = broadcast_batches(&la[..la.len() - 2], &lb[..lb.len() - 2])
            .ok_or_else(|| {
                Error::Shape(format!(
                    "matmul batch dimensions not broadcastable: {} vs {}",
                    shape_str(la),
                    shape_str(lb)
                ))
            })?;

        let (a_mat, b_mat, o_mat) = (m * k, k * n, m * n);
        let mut data = vec![T::ZERO; pairs.len() * o_mat];
        {
            let (ad, bd) = (self.data(), rhs.data());
            for (batch, &(ia, ib)) in pairs.iter().enumerate() {
                mm_acc(
                    &ad[ia * a_mat..(ia + 1) * a_mat],
                    &bd[ib * b_mat..(ib + 1) * b_mat],
                    &mut data[batch * o_mat..(batch + 1) * o_mat],
                    m,
                    k,
                    n,
                );
            }
        }
        let mut out_shape = out_lead;
        out_shape.push(m);
        out_shape.push(n);
        let mut out = Tensor::from_vec(&out_shape, data)?;

        if let Some(tape) = Tape::common(&[self, rhs]) {
            let (pa, pb) = (self.parent_id(), rhs.parent_id());
            let (ad, bd) = (self.share_data(), rhs.share_data());
            let (a_len, b_len) = (self.numel(), rhs.numel());
            let pairs = Arc::new(pairs);
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut contributions = Vec::new();
                    if let Some(id) = pa {
                        // dA = dC · Bᵀ, summed over broadcast batches
                        let mut ga = vec![T::ZERO; a_len];
                        for (batch, &(ia, ib)) in pairs.iter().enumerate() {
                            mm_abt_acc(
                                &g[batch * o_mat..(batch + 1) * o_mat],
                                &bd[ib * b_mat..(ib + 1) * b_mat],
                                &mut ga[ia * a_mat..(ia + 1) * a_mat],
                                m,
                                n,
                                k,
                            );
                        }
                        contributions.push((id, ga));
                    }
                    if let Some(id) = pb {
                        // dB = Aᵀ · dC, summed over broadcast batches
                        let mut gb = vec![T::ZERO; b_len];
                        for (batch, &(ia, ib)) in pairs.iter().enumerate() {
                            mm_atb_acc(
                                &ad[ia * a_mat..(ia + 1) * a_mat],
                                &g[batch * o_mat..(batch + 1) * o_mat],
                                &mut gb[ib * b_mat..(ib + 1) * b_mat],
                                m,
                                k,
                                n,
                            );
                        }
                        contributions.push((id, gb));
                    }
                    contributions
                }),
            );
        }
        Ok(out)
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel_of(shape) != self.numel() {
            return Err(Error::Shape(format!(
                "reshape {} -> {} changes element count",
                shape_str(self.shape()),
                shape_str(shape)
            )));
        }
        let mut out = Tensor {
            shape: shape.to_vec(),
            data: self.share_data(),
            node: None,
        };
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            out.attach(&tape, Box::new(move |g: &[T]| vec![(pid, g.to_vec())]));
        }
        Ok(out)
    }

    /// Reorder axes; `axes` is a permutation of `0..rank`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if axes.len() != rank {
            return Err(Error::Shape(format!(
                "permute axes {:?} do not match rank {} tensor",
                axes, rank
            )));
        }
        let mut seen = vec![false; rank];
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::Shape(format!("invalid permutation {:?}", axes)));
            }
            seen[a] = true;
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();

        let mut in_strides = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * in_shape[d + 1];
        }
        let numel = self.numel();
        let mut fwd_idx = vec![0usize; numel];
        let mut back_idx = vec![0usize; numel];
        let mut multi = vec![0usize; rank];
        for (flat_out, slot) in fwd_idx.iter_mut().enumerate() {
            let mut flat_in = 0;
            for d in 0..rank {
                flat_in += multi[d] * in_strides[axes[d]];
            }
            *slot = flat_in;
            back_idx[flat_in] = flat_out;
            // increment multi-index over out_shape
            for d in (0..rank).rev() {
                multi[d] += 1;
                if multi[d] < out_shape[d] {
                    break;
                }
                multi[d] = 0;
            }
        }
        let data: Vec<T> = {
            let src = self.data();
            fwd_idx.iter().map(|&i| src[i]).collect()
        };
        let mut out = Tensor::from_vec(&out_shape, data)?;
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let back_idx = Arc::new(back_idx);
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let gx: Vec<T> = back_idx.iter().map(|&i| g[i]).collect();
                    vec![(pid, gx)]
                }),
            );
        }
        Ok(out)
    }

    /// Swap the last two axes.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(Error::Shape(format!(
                "transpose_last2 on rank {} tensor",
                rank
            )));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// out[j] = self[map[j]], with sentinel entries reading zero.
    pub fn gather(&self, map: &GatherMap, out_shape: &[usize]) -> Result<Tensor<T>> {
        if map.len() != numel_of(out_shape) {
            return Err(Error::Shape(format!(
                "gather map of length {} does not fill shape {}",
                map.len(),
                shape_str(out_shape)
            )));
        }
        let src = self.data();
        let src_len = src.len();
        let data: Vec<T> = map
            .indices()
            .iter()
            .map(|&i| {
                if i == GatherMap::SENTINEL {
                    T::ZERO
                } else {
                    src[i]
                }
            })
            .collect();
        let mut out = Tensor::from_vec(out_shape, data)?;
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let idx = map.share();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let mut gx = vec![T::ZERO; src_len];
                    for (j, &i) in idx.iter().enumerate() {
                        if i != GatherMap::SENTINEL {
                            gx[i] += g[j];
                        }
                    }
                    vec![(pid, gx)]
                }),
            );
        }
        Ok(out)
    }

    /// out[map[j]] += self[j]; colliding entries sum, sentinel entries are
    /// discarded. The adjoint of `gather`.
    pub fn scatter_add(&self, map: &GatherMap, out_shape: &[usize]) -> Result<Tensor<T>> {
        if map.len() != self.numel() {
            return Err(Error::Shape(format!(
                "scatter map of length {} does not cover source shape {}",
                map.len(),
                shape_str(self.shape())
            )));
        }
        let out_len = numel_of(out_shape);
        let mut data = vec![T::ZERO; out_len];
        for (&v, &i) in self.data().iter().zip(map.indices()) {
            if i != GatherMap::SENTINEL {
                data[i] += v;
            }
        }
        let mut out = Tensor::from_vec(out_shape, data)?;
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let idx = map.share();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| {
                    let gx: Vec<T> = idx
                        .iter()
                        .map(|&i| {
                            if i == GatherMap::SENTINEL {
                                T::ZERO
                            } else {
                                g[i]
                            }
                        })
                        .collect();
                    vec![(pid, gx)]
                }),
            );
        }
        Ok(out)
    }

    /// Sum of all elements, as a `[1]`-shaped tensor.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::ZERO;
        for v in self.data() {
            acc += *v;
        }
        let mut out = Tensor::scalar(acc);
        if let Some(tape) = Tape::common(&[self]) {
            let pid = self.parent_id().expect("tracked");
            let n = self.numel();
            out.attach(
                &tape,
                Box::new(move |g: &[T]| vec![(pid, vec![g[0]; n])]),
            );
        }
        out
    }

    /// Mean of all elements, as a `[1]`-shaped tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        self.sum().scale(1.0 / n as f64)
    }
}

/// Broadcast leading shape plus, per flat output batch, the source matrix
/// index into each operand.
type BatchPlan = (Vec<usize>, Vec<(usize, usize)>);

/// Pair every flat output batch index with its source matrix indices,
/// broadcasting size-1 dimensions.
fn broadcast_batches(lead_a: &[usize], lead_b: &[usize]) -> Option<BatchPlan> {
    let rank = lead_a.len().max(lead_b.len());
    let pad = |lead: &[usize]| -> Vec<usize> {
        let mut v = vec![1usize; rank - lead.len()];
        v.extend_from_slice(lead);
        v
    };
    let (pa, pb) = (pad(lead_a), pad(lead_b));
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        out[d] = match (pa[d], pb[d]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    let total: usize = out.iter().product();
    let strides = |dims: &[usize]| -> Vec<usize> {
        let mut s = vec![1usize; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * dims[d + 1];
        }
        s
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let mut pairs = Vec::with_capacity(total.max(1));
    let mut multi = vec![0usize; rank];
    for _ in 0..total.max(1) {
        let mut ia = 0;
        let mut ib = 0;
        for d in 0..rank {
            if pa[d] != 1 {
                ia += multi[d] * sa[d];
            }
            if pb[d] != 1 {
                ib += multi[d] * sb[d];
            }
        }
        pairs.push((ia, ib));
        for d in (0..rank).rev() {
            multi[d] += 1;
            if multi[d] < out[d] {
                break;
            }
            multi[d] = 0;
        }
    }
    Some((out, pairs))
}
