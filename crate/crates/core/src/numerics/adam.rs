use serde::{Deserialize, Serialize};

use super::{NumericsError, ParamStore};

/// Adam optimiser state with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps_hat: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1,
            beta2,
            eps_hat,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn first_moment(&self, index: usize) -> Option<&[f64]> {
        self.m.get(index).map(Vec::as_slice)
    }

    pub fn second_moment(&self, index: usize) -> Option<&[f64]> {
        self.v.get(index).map(Vec::as_slice)
    }

    /// One Adam update over every parameter in `params`. Gradients are left
    /// untouched; the caller zeroes them.
    pub fn apply(&mut self, params: &mut ParamStore) -> Result<(), NumericsError> {
        if let Some((_, p)) = params.iter().find(|(_, p)| !p.has_grad()) {
            return Err(NumericsError::MissingGrad(p.name().to_string()));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| vec![0.0; p.value().len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(NumericsError::ParameterCount {
                expected: self.m.len(),
                found: params.len(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = params.iter().map(|(id, _)| id).collect();
        for (k, id) in ids.into_iter().enumerate() {
            let p = params.get_mut(id);
            let grad = p.grad.get_mut().take().expect("checked above");
            if self.m[k].len() != grad.len() {
                return Err(NumericsError::ParameterCount {
                    expected: self.m[k].len(),
                    found: grad.len(),
                });
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((w, &g), mk), vk) in p
                .value_mut()
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * g;
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * g * g;
                let m_hat = *mk / bc1;
                let v_hat = *vk / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
            }
            *p.grad.get_mut() = Some(grad);
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::apply`].
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<(), NumericsError> {
    state.apply(params)
}
