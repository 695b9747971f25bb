use super::{ParamBlock, ParamGrad};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// First moments, one per parameter block.
    pub m: Vec<ParamGrad>,
    /// Second moments, one per parameter block.
    pub v: Vec<ParamGrad>,
}

impl AdamState {
    pub fn new(params: &[ParamBlock], lr: f64) -> Self {
        Self::with_hyper(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(params: &[ParamBlock], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<ParamGrad> = params.iter().map(ParamBlock::zero_grad).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Clone, Copy)]
struct Coeffs {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
}

fn update(theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], k: Coeffs) {
    for (((p, &g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = k.beta1 * *m + (1.0 - k.beta1) * g;
        *v = k.beta2 * *v + (1.0 - k.beta2) * g * g;
        let m_hat = *m / k.c1;
        let v_hat = *v / k.c2;
        *p -= k.lr * m_hat / (v_hat.sqrt() + k.eps);
    }
}

/// One bias-corrected Adam update of every trainable value.
pub fn adam_step(params: &mut [ParamBlock], grads: &[ParamGrad], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Dimension(format!(
            "adam got {} parameter blocks, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (block, g)) in params.iter().zip(grads).enumerate() {
        let (w, b) = block.trainable();
        let m = &state.m[i];
        if w.len() != g.weights.len()
            || b.len() != g.bias.len()
            || m.weights.len() != w.len()
            || m.bias.len() != b.len()
        {
            return Err(Error::Dimension(format!("adam block {i}: gradient shape mismatch")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let k = Coeffs {
        lr: state.lr,
        beta1: state.beta1,
        beta2: state.beta2,
        eps: state.eps,
        c1: 1.0 - state.beta1.powi(t),
        c2: 1.0 - state.beta2.powi(t),
    };
    for (((block, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (w, b) = block.trainable_mut();
        update(w, &g.weights, &mut m.weights, &mut v.weights, k);
        update(b, &g.bias, &mut m.bias, &mut v.bias, k);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_block(w: f64) -> ParamBlock {
        ParamBlock::Affine {
            weights: Tensor::new(vec![1, 1], vec![w]).unwrap(),
            bias: Tensor::new(vec![1], vec![w]).unwrap(),
        }
    }

    #[test]
    fn first_step_hand_value() {
        let mut params = vec![scalar_block(0.0)];
        let mut state = AdamState::new(&params, 5e-4);
        let g = vec![ParamGrad {
            weights: vec![1.0],
            bias: vec![1.0],
        }];
        adam_step(&mut params, &g, &mut state).unwrap();
        let (w, _) = params[0].trainable();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        assert!((w[0] + 4.99999995e-4).abs() < 1e-15, "{}", w[0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut params = vec![scalar_block(0.7)];
        let mut state = AdamState::new(&params, 5e-4);
        let g = vec![params[0].zero_grad()];
        for _ in 0..100 {
            adam_step(&mut params, &g, &mut state).unwrap();
        }
        assert_eq!(params[0], scalar_block(0.7));
        assert_eq!(state.step, 100);
    }

    #[test]
    fn identical_gradients_identical_updates() {
        let mut params = vec![scalar_block(0.3), scalar_block(0.3)];
        let mut state = AdamState::new(&params, 1e-2);
        let g = ParamGrad {
            weights: vec![0.25],
            bias: vec![0.25],
        };
        for _ in 0..5 {
            adam_step(&mut params, &[g.clone(), g.clone()], &mut state).unwrap();
        }
        assert_eq!(params[0], params[1]);
    }
}
