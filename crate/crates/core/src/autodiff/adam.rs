use super::{AutodiffError, Tensor};

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &[Tensor], learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of every trainable tensor in `params` from its gradient.
/// Gradients are left in place; call `zero_grad` before the next pass.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) -> Result<(), AutodiffError> {
    if state.first_moment.len() != params.len() {
        return Err(AutodiffError::State(format!(
            "optimizer tracks {} tensors, got {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.requires_grad() && p.grad().is_none() {
            return Err(AutodiffError::State(format!("parameter {i} has no gradient")));
        }
        if state.first_moment[i].len() != p.numel() {
            return Err(AutodiffError::State(format!("moment shape mismatch at {i}")));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        let g = p.grad().expect("checked above").to_vec();
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}
