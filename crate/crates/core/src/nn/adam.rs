use serde::{Deserialize, Serialize};

use super::{NnError, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { step: 0, m: zeros.clone(), v: zeros, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One Adam update. A `None` gradient leaves that parameter and its moments
/// untouched (used for frozen parameters).
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Option<Tensor>],
    state: &mut AdamState,
    lr: f64,
) -> Result<(), NnError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NnError::Shape(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if let Some(g) = g {
            if g.shape() != p.shape() || state.m[i].shape() != p.shape() {
                return Err(NnError::Shape(format!(
                    "adam: parameter {i} has shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
        }
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let Some(g) = g else { continue };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            let mhat = *mj / c1;
            let vhat = *vj / c2;
            *pj -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut s = AdamState::new(&p);
        adam_step(&mut p, &[Some(Tensor::zeros(&[2]))], &mut s, 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let lr = 1e-3;
        for g in [1e-3, 3e-3, 1e-2, 0.5, -2.0, 1e3] {
            let mut p = vec![Tensor::scalar(0.0)];
            let mut s = AdamState::new(&p);
            adam_step(&mut p, &[Some(Tensor::scalar(g))], &mut s, lr).unwrap();
            let step = p[0].item().abs();
            // exact first step is lr |g| / (|g| + eps)
            let exact = lr * g.abs() / (g.abs() + 1e-8);
            assert!((step - exact).abs() < 1e-15, "g = {g}");
            if g.abs() >= 1e-2 {
                assert!((step - lr).abs() <= 1e-6 * lr, "g = {g}");
            }
            assert_eq!(p[0].item().signum(), -g.signum());
        }
    }

    #[test]
    fn two_unit_gradient_steps_by_hand() {
        let mut p = vec![Tensor::scalar(1.0)];
        let mut s = AdamState::new(&p);
        let g = [Some(Tensor::scalar(1.0))];
        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        assert!((s.m[0].item() - 0.1).abs() < 1e-15);
        assert!((s.v[0].item() - 0.001).abs() < 1e-15);
        let p1 = 1.0 - 0.001 * 1.0 / (1.0 + 1e-8);
        assert!((p[0].item() - p1).abs() < 1e-15);

        adam_step(&mut p, &g, &mut s, 0.001).unwrap();
        assert!((s.m[0].item() - 0.19).abs() < 1e-15);
        assert!((s.v[0].item() - 0.001999).abs() < 1e-15);
        let mhat = 0.19 / (1.0 - 0.81);
        let vhat: f64 = 0.001999 / (1.0 - 0.998001);
        let p2 = p1 - 0.001 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0].item() - p2).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut s = AdamState::new(&p);
        assert!(adam_step(&mut p, &[Some(Tensor::zeros(&[3]))], &mut s, 0.1).is_err());
        assert!(adam_step(&mut p, &[], &mut s, 0.1).is_err());
    }
}
