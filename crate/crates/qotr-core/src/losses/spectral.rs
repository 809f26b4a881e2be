//! Spectral normalization by power iteration. Each discriminator weight
//! carries a persistent left singular vector estimate `u`; every
//! normalization updates it and divides the weight by the estimated top
//! singular value.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn l2_normalize<T: Scalar>(v: &mut [T]) {
    let mut norm = T::ZERO;
    for x in v.iter() {
        norm += *x * *x;
    }
    let norm = norm.sqrt().maximum(T::from_f64(1e-12));
    for x in v.iter_mut() {
        *x = *x / norm;
    }
}

/// `n_iter` power-iteration steps on the 2-D view of the weight.
/// Returns the refined (u, v, sigma) with u, v unit length.
fn power_iterate<T: Scalar>(
    wd: &[T],
    rows: usize,
    cols: usize,
    u_init: &[T],
    n_iter: usize,
) -> (Vec<T>, Vec<T>, T) {
    let mut u = u_init.to_vec();
    let mut v = vec![T::ZERO; cols];
    for _ in 0..n_iter.max(1) {
        // v = normalize(Wᵀ u)
        for x in v.iter_mut() {
            *x = T::ZERO;
        }
        for r in 0..rows {
            let row = &wd[r * cols..(r + 1) * cols];
            let ur = u[r];
            for (x, &wv) in v.iter_mut().zip(row) {
                *x += wv * ur;
            }
        }
        l2_normalize(&mut v);
        // u = normalize(W v)
        for (r, x) in u.iter_mut().enumerate() {
            let row = &wd[r * cols..(r + 1) * cols];
            let mut acc = T::ZERO;
            for (&wv, &vx) in row.iter().zip(&v) {
                acc += wv * vx;
            }
            *x = acc;
        }
        l2_normalize(&mut u);
    }
    let mut sigma = T::ZERO;
    for r in 0..rows {
        let row = &wd[r * cols..(r + 1) * cols];
        let mut acc = T::ZERO;
        for (&wv, &vx) in row.iter().zip(&v) {
            acc += wv * vx;
        }
        sigma += u[r] * acc;
    }
    (u, v, sigma)
}

fn check_u<T: Scalar>(w: &Tensor<T>, u: &Tensor<T>) -> Result<(usize, usize)> {
    let shape = w.shape();
    if shape.is_empty() {
        return Err(Error::Shape("spectral_normalize on rank-0 weight".into()));
    }
    let rows = shape[0];
    let cols = w.numel() / rows;
    if u.numel() != rows {
        return Err(Error::Shape(format!(
            "u vector of {} entries does not match {} weight rows",
            u.numel(),
            rows
        )));
    }
    Ok((rows, cols))
}

/// Update `u` by power iteration and return w / sigma with
/// sigma = uᵀ W v. The division goes through tensor ops, so when `w` is
/// tracked the gradient flows through sigma too; `u` and `v` are constants
/// of the step.
pub fn spectral_normalize<T: Scalar>(
    w: &Tensor<T>,
    u: &mut Tensor<T>,
    n_iter: usize,
) -> Result<Tensor<T>> {
    let (rows, cols) = check_u(w, u)?;
    let (uv, vv, _) = power_iterate(w.data(), rows, cols, u.data(), n_iter);
    *u = Tensor::from_vec(&[rows], uv.clone())?;

    let u_row = Tensor::from_vec(&[1, rows], uv)?;
    let v_col = Tensor::from_vec(&[cols, 1], vv)?;
    let w2d = w.reshape(&[rows, cols])?;
    let sigma = u_row.matmul(&w2d)?.matmul(&v_col)?.reshape(&[1])?;
    let normalized = w2d.div(&sigma)?;
    normalized.reshape(w.shape())
}

/// Refine `u` and return the spectral-norm estimate without normalizing.
pub fn estimate_sigma<T: Scalar>(w: &Tensor<T>, u: &mut Tensor<T>, n_iter: usize) -> Result<T> {
    let (rows, cols) = check_u(w, u)?;
    let (uv, _, sigma) = power_iterate(w.data(), rows, cols, u.data(), n_iter);
    *u = Tensor::from_vec(&[rows], uv)?;
    Ok(sigma)
}

/// Refresh `u` in place by power iteration, without normalizing.
pub fn refresh_u<T: Scalar>(w: &Tensor<T>, u: &mut Tensor<T>, n_iter: usize) -> Result<()> {
    estimate_sigma(w, u, n_iter).map(|_| ())
}

/// Normalize `w` by the sigma implied by the current `u`, without touching
/// any state: v = normalize(Wᵀu), sigma = uᵀWv, result = w / sigma. Used
/// where the same weights are consumed repeatedly between refreshes.
pub fn spectral_apply<T: Scalar>(w: &Tensor<T>, u: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cols) = check_u(w, u)?;
    // one v-step against the frozen u
    let wd = w.data();
    let ud = u.data();
    let mut v = vec![T::ZERO; cols];
    for r in 0..rows {
        let row = &wd[r * cols..(r + 1) * cols];
        let ur = ud[r];
        for (x, &wv) in v.iter_mut().zip(row) {
            *x += wv * ur;
        }
    }
    l2_normalize(&mut v);

    let u_row = Tensor::from_vec(&[1, rows], ud.to_vec())?;
    let v_col = Tensor::from_vec(&[cols, 1], v)?;
    let w2d = w.reshape(&[rows, cols])?;
    let sigma = u_row.matmul(&w2d)?.matmul(&v_col)?.reshape(&[1])?;
    w2d.div(&sigma)?.reshape(w.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_u(rows: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = crate::init::normal::<f64, _>(&mut rng, &[rows], 1.0);
        let mut d = u.data().to_vec();
        l2_normalize(&mut d);
        Tensor::from_vec(&[rows], d).unwrap()
    }

    #[test]
    fn unit_rank_one_matrix_unchanged() {
        // w = e0 e0ᵀ has top singular value 1
        let mut w = vec![0.0f64; 9];
        w[0] = 1.0;
        let w = Tensor::from_vec(&[3, 3], w).unwrap();
        let mut u = rand_u(3, 1);
        let out = spectral_normalize(&w, &mut u, 50).unwrap();
        for (a, b) in out.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn diagonal_matrix_sigma_converges_to_three() {
        let w = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]).unwrap();
        let mut u = rand_u(2, 2);
        let sigma = estimate_sigma(&w, &mut u, 50).unwrap();
        assert!((sigma - 3.0).abs() / 3.0 < 0.01, "sigma = {sigma}");
        let normalized = spectral_normalize(&w, &mut u, 1).unwrap();
        let mut u2 = rand_u(2, 3);
        let s2 = estimate_sigma(&normalized.detach(), &mut u2, 50).unwrap();
        assert!((s2 - 1.0).abs() < 0.01, "normalized sigma = {s2}");
    }

    #[test]
    fn scaling_weight_leaves_normalized_output_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = crate::init::normal::<f64, _>(&mut rng, &[4, 4], 1.0);
        let w_scaled = w.scale(7.0);
        let mut u1 = rand_u(4, 4);
        let mut u2 = rand_u(4, 4);
        let n1 = spectral_normalize(&w, &mut u1, 100).unwrap();
        let n2 = spectral_normalize(&w_scaled, &mut u2, 100).unwrap();
        for (a, b) in n1.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn u_persists_across_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = crate::init::normal::<f64, _>(&mut rng, &[4, 6], 1.0);
        let mut u = rand_u(4, 5);
        let _ = spectral_normalize(&w, &mut u, 1).unwrap();
        let after_one = u.data().to_vec();
        let _ = spectral_normalize(&w, &mut u, 1).unwrap();
        assert_ne!(after_one, u.data(), "u must keep refining");
    }
}
