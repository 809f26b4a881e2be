//! Adam with bias correction and decoupled weight decay: the decay shrinks
//! parameters directly and never enters the moment estimates.

use qotr_core::tensor::Tensor;
use qotr_core::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// Moment estimates, aligned with the parameter visit order.
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    pub step: u64,
}

impl AdamState {
    /// Zero moments shaped like the given parameters.
    pub fn new(params: &[(String, Vec<usize>)]) -> Self {
        AdamState {
            m: params.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
            v: params.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
            step: 0,
        }
    }
}

/// Bias-correction denominators for the given step count (1-based).
pub fn bias_corrections(cfg: &AdamConfig, step: u64) -> (f32, f32) {
    let t = step as i32;
    (
        1.0 - (cfg.beta1 as f32).powi(t),
        1.0 - (cfg.beta2 as f32).powi(t),
    )
}

/// Update one parameter in place. `grad = None` means no gradient flowed
/// this step: moments and weight decay still apply with a zero gradient.
/// A non-finite gradient aborts, naming the parameter.
pub fn update_tensor(
    name: &str,
    param: &mut Tensor<f32>,
    grad: Option<&Tensor<f32>>,
    m: &mut Tensor<f32>,
    v: &mut Tensor<f32>,
    (bc1, bc2): (f32, f32),
    cfg: &AdamConfig,
) -> Result<()> {
    let zero;
    let g: &[f32] = match grad {
        Some(g) => {
            if g.shape() != param.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    param.shape()
                )));
            }
            g.data()
        }
        None => {
            zero = vec![0.0f32; param.numel()];
            &zero
        }
    };
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient for parameter {name}"
        )));
    }
    let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
    let (lr, eps, wd) = (cfg.lr as f32, cfg.eps as f32, cfg.weight_decay as f32);
    let m = m.data_mut();
    let v = v.data_mut();
    let p = param.data_mut();
    for j in 0..p.len() {
        // decoupled decay, independent of the adaptive step
        p[j] -= lr * wd * p[j];
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
        let m_hat = m[j] / bc1;
        let v_hat = v[j] / bc2;
        p[j] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// One optimizer step over a flat parameter list.
pub fn adam_step(
    params: &mut [(String, &mut Tensor<f32>)],
    grads: &[Option<Tensor<f32>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let bc = bias_corrections(cfg, state.step);
    for (i, (name, param)) in params.iter_mut().enumerate() {
        update_tensor(
            name,
            param,
            grads[i].as_ref(),
            &mut state.m[i],
            &mut state.v[i],
            bc,
            cfg,
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(value: Vec<f32>) -> Tensor<f32> {
        Tensor::from_vec(&[value.len()], value).unwrap()
    }

    fn run_step(
        param: &mut Tensor<f32>,
        grad: Option<Tensor<f32>>,
        state: &mut AdamState,
        cfg: &AdamConfig,
    ) {
        let mut params = [("p".to_string(), param)];
        adam_step(&mut params, &[grad], state, cfg).unwrap();
    }

    #[test]
    fn zero_gradient_no_decay_leaves_params() {
        let mut p = one_param(vec![1.0, -2.0]);
        let mut st = AdamState::new(&[("p".into(), vec![2])]);
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        run_step(&mut p, Some(Tensor::zeros(&[2])), &mut st, &cfg);
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_with_beta1_zero_moves_by_lr() {
        // beta1 = 0: m = g, v = g²; update = lr·g/(|g| + eps) ≈ lr·sign(g)
        let mut p = one_param(vec![0.0, 0.0]);
        let mut st = AdamState::new(&[("p".into(), vec![2])]);
        let cfg = AdamConfig {
            lr: 1e-3,
            beta1: 0.0,
            beta2: 0.99,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        run_step(&mut p, Some(one_param(vec![2.0, -0.5])), &mut st, &cfg);
        assert!((p.data()[0] + 1e-3).abs() < 1e-7, "{}", p.data()[0]);
        assert!((p.data()[1] - 1e-3).abs() < 1e-7, "{}", p.data()[1]);
    }

    #[test]
    fn pure_decay_shrinks_exponentially() {
        let mut p = one_param(vec![4.0]);
        let mut st = AdamState::new(&[("p".into(), vec![1])]);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        run_step(&mut p, Some(Tensor::zeros(&[1])), &mut st, &cfg);
        // p ← p(1 − lr·wd) = 4 · 0.95
        assert!((p.data()[0] - 3.8).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = one_param(vec![1.0]);
        let mut st = AdamState::new(&[("p".into(), vec![1])]);
        let cfg = AdamConfig::default();
        let mut params = [("enc.embed".to_string(), &mut p)];
        let bad = Tensor::from_vec(&[1], vec![f32::NAN]).unwrap();
        let err = adam_step(&mut params, &[Some(bad)], &mut st, &cfg).unwrap_err();
        assert!(err.to_string().contains("enc.embed"), "{err}");
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (p - 3)²
        let mut p = one_param(vec![0.0]);
        let mut st = AdamState::new(&[("p".into(), vec![1])]);
        let cfg = AdamConfig {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        for _ in 0..400 {
            let g = 2.0 * (p.data()[0] - 3.0);
            run_step(&mut p, Some(one_param(vec![g])), &mut st, &cfg);
        }
        assert!((p.data()[0] - 3.0).abs() < 0.05, "{}", p.data()[0]);
    }
}
