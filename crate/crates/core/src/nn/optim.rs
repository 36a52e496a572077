use ndarray::ArrayD;

use super::{GradMap, ParamId, ParamStore};
use crate::tensor::{sc, Scalar, Tensor};

/// SGD with momentum and decoupled-from-nothing classic L2 weight decay
/// (decay is added to the gradient, as in the usual training recipes).
pub struct Sgd<F: Scalar> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    params: Vec<ParamId>,
    velocity: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Sgd<F> {
    pub fn new(params: Vec<ParamId>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        let velocity = params.iter().map(|_| None).collect();
        Sgd {
            lr,
            momentum,
            weight_decay,
            params,
            velocity,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &GradMap<F>) {
        let lr = sc::<F>(self.lr);
        let mu = sc::<F>(self.momentum);
        let wd = sc::<F>(self.weight_decay);
        for (slot, &pid) in self.params.iter().enumerate() {
            let Some(grad) = grads.get(pid.0).and_then(|g| g.as_ref()) else {
                continue;
            };
            let value = store.value(pid);
            let mut g = grad.clone();
            if self.weight_decay != 0.0 {
                g.zip_mut_with(value, |gi, &wi| *gi = *gi + wd * wi);
            }
            let v = self.velocity[slot].get_or_insert_with(|| ArrayD::zeros(g.raw_dim()));
            v.zip_mut_with(&g, |vi, &gi| *vi = mu * *vi + gi);
            let v = v.clone();
            store
                .value_mut(pid)
                .zip_mut_with(&v, |wi, &vi| *wi = *wi - lr * vi);
        }
    }
}

/// Adam with bias correction.
pub struct Adam<F: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    params: Vec<ParamId>,
    m: Vec<Option<Tensor<F>>>,
    v: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(params: Vec<ParamId>, lr: f64) -> Self {
        let n = params.len();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            params,
            m: (0..n).map(|_| None).collect(),
            v: (0..n).map(|_| None).collect(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &GradMap<F>) {
        self.t += 1;
        let b1 = sc::<F>(self.beta1);
        let b2 = sc::<F>(self.beta2);
        let eps = sc::<F>(self.eps);
        let bc1 = sc::<F>(1.0 - self.beta1.powi(self.t));
        let bc2 = sc::<F>(1.0 - self.beta2.powi(self.t));
        let lr = sc::<F>(self.lr);
        for (slot, &pid) in self.params.iter().enumerate() {
            let Some(grad) = grads.get(pid.0).and_then(|g| g.as_ref()) else {
                continue;
            };
            let m = self.m[slot].get_or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            m.zip_mut_with(grad, |mi, &gi| *mi = b1 * *mi + (F::one() - b1) * gi);
            let v = self.v[slot].get_or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            v.zip_mut_with(grad, |vi, &gi| *vi = b2 * *vi + (F::one() - b2) * gi * gi);
            let m = self.m[slot].as_ref().expect("m initialized");
            let v = self.v[slot].as_ref().expect("v initialized");
            let value = store.value_mut(pid);
            ndarray::Zip::from(value)
                .and(m)
                .and(v)
                .for_each(|wi, &mi, &vi| {
                    let mhat = mi / bc1;
                    let vhat = vi / bc2;
                    *wi = *wi - lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
