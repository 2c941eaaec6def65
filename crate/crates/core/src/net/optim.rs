use serde::{Deserialize, Serialize};

use super::mlp::{Grads, Mlp};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay rate; ignored by [`Adam`].
    pub weight_decay: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Real> Moments<T> {
    fn new() -> Self {
        Self {
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    fn ensure(&mut self, grads: &[&[T]]) {
        if self.m.len() != grads.len() {
            self.m = grads.iter().map(|g| vec![T::zero(); g.len()]).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
    }
}

/// Plain Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub settings: AdamSettings,
    state: Moments<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(settings: AdamSettings) -> Self {
        Self {
            settings,
            state: Moments::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.state.t
    }

    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Grads<T>) {
        let g = grads.slices();
        self.state.ensure(&g);
        self.state.t += 1;
        let s = &self.settings;
        let (b1, b2, eps, lr) = (T::c(s.beta1), T::c(s.beta2), T::c(s.eps), T::c(s.lr));
        let c1 = T::one() - b1.powi(self.state.t);
        let c2 = T::one() - b2.powi(self.state.t);
        for (k, (w, _)) in model.param_slices_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for i in 0..w.len() {
                let gi = g[k][i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

/// Adam with decoupled weight decay on the weight matrices only; the
/// batch-norm scale and shift are not decayed.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub settings: AdamSettings,
    state: Moments<T>,
}

impl<T: Real> AdamW<T> {
    pub fn new(settings: AdamSettings) -> Self {
        Self {
            settings,
            state: Moments::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.state.t
    }

    pub fn step(&mut self, model: &mut Mlp<T>, grads: &Grads<T>) {
        let g = grads.slices();
        self.state.ensure(&g);
        self.state.t += 1;
        let s = &self.settings;
        let (b1, b2, eps, lr) = (T::c(s.beta1), T::c(s.beta2), T::c(s.eps), T::c(s.lr));
        let decay = T::one() - lr * T::c(s.weight_decay);
        let c1 = T::one() - b1.powi(self.state.t);
        let c2 = T::one() - b2.powi(self.state.t);
        for (k, (w, is_weight)) in model.param_slices_mut().into_iter().enumerate() {
            let (m, v) = (&mut self.state.m[k], &mut self.state.v[k]);
            for i in 0..w.len() {
                if is_weight {
                    w[i] *= decay;
                }
                let gi = g[k][i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                w[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::mlp::{Activation, Arch};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Mlp<f64>, Array2<f64>, Array2<f64>) {
        let m = Mlp::new(Arch::new(3, 5, 2, 2), Activation::Relu, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((8, 3), |_| rng.gen_range(-1.0..1.0));
        let t = Array2::from_shape_fn((8, 2), |_| rng.gen_range(-1.0..1.0));
        (m, x, t)
    }

    fn zero_grads(m: &Mlp<f64>) -> Grads<f64> {
        Grads {
            weights: m.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            gamma: m.bn.iter().map(|b| b.gamma.mapv(|_| 0.0)).collect(),
            beta: m.bn.iter().map(|b| b.beta.mapv(|_| 0.0)).collect(),
        }
    }

    #[test]
    fn zero_gradient_scales_weights_only() {
        let (mut m, _, _) = setup();
        for bn in &mut m.bn {
            bn.gamma.mapv_inplace(|v| v * 1.3);
            bn.beta.mapv_inplace(|v| v + 0.2);
        }
        let before = m.clone();
        let s = AdamSettings {
            lr: 0.01,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(s);
        opt.step(&mut m, &zero_grads(&before));
        let f = 1.0 - 0.01 * 0.5;
        for (a, b) in m.weights.iter().zip(&before.weights) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, y * f);
            }
        }
        for (a, b) in m.bn.iter().zip(&before.bn) {
            assert_eq!(a.gamma, b.gamma);
            assert_eq!(a.beta, b.beta);
        }
    }

    #[test]
    fn first_step_magnitude_is_lr() {
        let (mut m, _, _) = setup();
        let before = m.clone();
        let mut g = zero_grads(&m);
        for w in &mut g.weights {
            w.fill(0.37);
        }
        for b in &mut g.beta {
            b.fill(-2.5);
        }
        let s = AdamSettings {
            lr: 1e-3,
            weight_decay: 0.0,
            ..Default::default()
        };
        AdamW::new(s).step(&mut m, &g);
        for (a, b) in m.weights.iter().zip(&before.weights) {
            for (x, y) in a.iter().zip(b) {
                assert!(((y - x) - 1e-3).abs() < 1e-9);
            }
        }
        for (a, b) in m.bn.iter().zip(&before.bn) {
            for (x, y) in a.beta.iter().zip(&b.beta) {
                assert!(((x - y) - 1e-3).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adamw_without_decay_matches_adam() {
        let (m0, x, t) = setup();
        let s = AdamSettings {
            lr: 1e-2,
            weight_decay: 0.0,
            ..Default::default()
        };
        let (mut a, mut b) = (m0.clone(), m0);
        a.train_mode();
        b.train_mode();
        let mut oa = Adam::new(s);
        let mut ob = AdamW::new(s);
        for _ in 0..25 {
            let (_, ga) = a.loss_and_grad(x.view(), t.view()).unwrap();
            let (_, gb) = b.loss_and_grad(x.view(), t.view()).unwrap();
            oa.step(&mut a, &ga);
            ob.step(&mut b, &gb);
            assert_eq!(a.params_flat(), b.params_flat());
        }
    }

    #[test]
    fn identical_models_stay_identical() {
        let (m0, x, t) = setup();
        let (mut a, mut b) = (m0.clone(), m0);
        let mut oa = AdamW::new(AdamSettings::default());
        let mut ob = AdamW::new(AdamSettings::default());
        a.train_mode();
        b.train_mode();
        let (_, g) = a.loss_and_grad(x.view(), t.view()).unwrap();
        oa.step(&mut a, &g);
        ob.step(&mut b, &g);
        assert_eq!(a.params_flat(), b.params_flat());
    }
}
