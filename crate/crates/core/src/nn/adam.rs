use crate::tensor::{Real, Tensor};

use super::params::ParamStore;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(params: &ParamStore<T>, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor<T>> = (0..params.len())
            .map(|i| Tensor::zeros(params.get(i).shape()))
            .collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        self.step += 1;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one = T::one();
        let bc1 = T::from_f64_lossy(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::from_f64_lossy(1.0 - self.beta2.powi(self.step as i32));
        let eps = T::from_f64_lossy(self.eps);
        let lr_t = T::from_f64_lossy(lr);
        let decay = T::from_f64_lossy(1.0 - lr * self.weight_decay);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            assert_eq!(p.shape(), g.shape(), "gradient shape for parameter {i}");
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (one - b1) * gv;
                *vv = b2 * *vv + (one - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
