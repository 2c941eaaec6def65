use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => y.max(T::zero()),
            Activation::Tanh => y.tanh(),
        }
    }

    fn deriv<T: Real>(self, y: T) -> T {
        match self {
            Activation::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = y.tanh();
                T::one() - t * t
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arch {
    pub n_in: usize,
    pub n_hidden: usize,
    /// Number of hidden (normalized, activated) layers.
    pub depth: usize,
    pub n_out: usize,
}

impl Arch {
    pub fn new(n_in: usize, n_hidden: usize, depth: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_hidden,
            depth,
            n_out,
        }
    }
}

/// Trainable parameters: bias-free weights plus batch-norm scale and shift.
pub fn param_count(a: &Arch) -> usize {
    if a.depth == 0 {
        return a.n_in * a.n_out;
    }
    a.n_in * a.n_hidden
        + (a.depth - 1) * a.n_hidden * a.n_hidden
        + a.n_hidden * a.n_out
        + 2 * a.depth * a.n_hidden
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
    pub running_mean: Array1<T>,
    pub running_var: Array1<T>,
    pub eps: T,
    pub momentum: T,
}

impl<T: Real> BatchNorm<T> {
    fn new(n: usize) -> Self {
        Self {
            gamma: Array1::from_elem(n, T::one()),
            beta: Array1::zeros(n),
            running_mean: Array1::zeros(n),
            running_var: Array1::from_elem(n, T::one()),
            eps: T::c(1e-5),
            momentum: T::c(0.1),
        }
    }
}

/// Feedforward network
///
/// ```text
/// h_1 = σ(N_1(W_1 x̂)),  h_i = h_{i−1} + σ(N_i(W_i h_{i−1})) (i = 2..depth),
/// y = s · W_head h_depth
/// ```
///
/// where `x̂` is the standardized input, `N_i` batch normalization and `s`
/// a fixed output scale.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub arch: Arch,
    pub activation: Activation,
    /// `depth + 1` matrices of shape `(out, in)`; the last one is the head.
    pub weights: Vec<Array2<T>>,
    pub bn: Vec<BatchNorm<T>>,
    pub input_mean: Array1<T>,
    pub input_std: Array1<T>,
    pub output_scale: T,
    pub training: bool,
}

/// Gradients with the same layout as the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Grads<T> {
    pub weights: Vec<Array2<T>>,
    pub gamma: Vec<Array1<T>>,
    pub beta: Vec<Array1<T>>,
}

struct LayerCache<T> {
    input: Array2<T>,
    xhat: Array2<T>,
    y: Array2<T>,
    inv_std: Array1<T>,
}

struct Cache<T> {
    layers: Vec<LayerCache<T>>,
    last: Array2<T>,
    train: bool,
}

impl<T: Real> Mlp<T> {
    /// He-uniform hidden weights and a small uniform head.
    pub fn new(arch: Arch, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = Self::zeros(arch, activation);
        let last = m.weights.len() - 1;
        for (l, w) in m.weights.iter_mut().enumerate() {
            let fan_in = w.ncols() as f64;
            let bound = if l == last {
                0.1 / fan_in.sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            w.mapv_inplace(|_| T::c(rng.gen_range(-bound..bound)));
        }
        m
    }

    /// All weights zero, `γ = 1`, `β = 0`, identity normalization.
    pub fn zeros(arch: Arch, activation: Activation) -> Self {
        let mut weights = Vec::with_capacity(arch.depth + 1);
        let mut prev = arch.n_in;
        for _ in 0..arch.depth {
            weights.push(Array2::zeros((arch.n_hidden, prev)));
            prev = arch.n_hidden;
        }
        weights.push(Array2::zeros((arch.n_out, prev)));
        Self {
            arch,
            activation,
            weights,
            bn: (0..arch.depth).map(|_| BatchNorm::new(arch.n_hidden)).collect(),
            input_mean: Array1::zeros(arch.n_in),
            input_std: Array1::from_elem(arch.n_in, T::one()),
            output_scale: T::one(),
            training: false,
        }
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.bn.iter().map(|b| b.gamma.len() + b.beta.len()).sum::<usize>()
    }

    pub fn train_mode(&mut self) {
        self.training = true;
    }

    pub fn eval_mode(&mut self) {
        self.training = false;
    }

    /// Sets the input standardization from data (columns with vanishing
    /// spread are left unscaled).
    pub fn fit_input_normalization(&mut self, x: ArrayView2<T>) {
        let n = T::from_usize_lossy(x.nrows().max(1));
        let mean = x.sum_axis(Axis(0)) / n;
        let var = x
            .outer_iter()
            .fold(Array1::<T>::zeros(x.ncols()), |acc, row| {
                acc + (&row - &mean).mapv(|v| v * v)
            })
            / n;
        let floor = T::c(1e-12);
        self.input_std = var.mapv(|v| if v.sqrt() > floor { v.sqrt() } else { T::one() });
        self.input_mean = mean;
    }

    fn check_width(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.arch.n_in {
            return Err(Error::DimensionMismatch {
                context: "network input width",
                expected: self.arch.n_in,
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn run(&self, x: ArrayView2<T>, train: bool, keep: bool) -> Result<(Array2<T>, Cache<T>, Vec<(Array1<T>, Array1<T>)>)> {
        self.check_width(&x)?;
        if train && x.nrows() < 2 {
            return Err(Error::InvalidInput(
                "batch normalization in training mode needs at least 2 rows".into(),
            ));
        }
        let mut h = (&x - &self.input_mean) / &self.input_std;
        let mut layers = Vec::new();
        let mut stats = Vec::new();
        let rows = T::from_usize_lossy(x.nrows());
        for (i, bn) in self.bn.iter().enumerate() {
            let z = h.dot(&self.weights[i].t());
            let (mean, var) = if train {
                let mean = z.sum_axis(Axis(0)) / rows;
                let var = (&z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / rows;
                stats.push((mean.clone(), var.clone()));
                (mean, var)
            } else {
                (bn.running_mean.clone(), bn.running_var.clone())
            };
            let inv_std = var.mapv(|v| T::one() / (v + bn.eps).sqrt());
            let xhat = (&z - &mean) * &inv_std;
            let y = &xhat * &bn.gamma + &bn.beta;
            let a = y.mapv(|v| self.activation.apply(v));
            let next = if i == 0 { a } else { &h + &a };
            if keep {
                layers.push(LayerCache {
                    input: std::mem::replace(&mut h, next),
                    xhat,
                    y,
                    inv_std,
                });
            } else {
                h = next;
            }
        }
        let out = h.dot(&self.weights[self.arch.depth].t()) * self.output_scale;
        Ok((
            out,
            Cache {
                layers,
                last: h,
                train,
            },
            stats,
        ))
    }

    fn update_running(&mut self, stats: Vec<(Array1<T>, Array1<T>)>, rows: usize) {
        let r = T::from_usize_lossy(rows);
        let unbias = r / (r - T::one());
        for (bn, (mean, var)) in self.bn.iter_mut().zip(stats) {
            let m = bn.momentum;
            bn.running_mean = &bn.running_mean * (T::one() - m) + &mean * m;
            bn.running_var = &bn.running_var * (T::one() - m) + &(var * unbias) * m;
        }
    }

    /// Forward pass in the current mode; training mode updates the
    /// running statistics.
    pub fn forward(&mut self, x: ArrayView2<T>) -> Result<Array2<T>> {
        let train = self.training;
        let (out, _, stats) = self.run(x, train, false)?;
        if train {
            self.update_running(stats, x.nrows());
        }
        Ok(out)
    }

    /// Evaluation-mode forward pass; does not modify the model.
    pub fn predict(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        Ok(self.run(x, false, false)?.0)
    }

    /// Mean over rows of the squared ℓ² distance to the targets.
    pub fn loss(&self, out: &Array2<T>, targets: ArrayView2<T>) -> T {
        let n = T::from_usize_lossy(out.nrows().max(1));
        (out - &targets).mapv(|v| v * v).sum() / n
    }

    /// Data loss and its exact gradient for one batch, in the current mode.
    pub fn loss_and_grad(&mut self, x: ArrayView2<T>, targets: ArrayView2<T>) -> Result<(T, Grads<T>)> {
        if targets.dim() != (x.nrows(), self.arch.n_out) {
            return Err(Error::DimensionMismatch {
                context: "network target shape",
                expected: x.nrows() * self.arch.n_out,
                got: targets.len(),
            });
        }
        let train = self.training;
        let (out, cache, stats) = self.run(x, train, true)?;
        if train {
            self.update_running(stats, x.nrows());
        }
        let n = T::from_usize_lossy(x.nrows());
        let loss = self.loss(&out, targets);
        let dout = (&out - &targets) * (T::c(2.0) / n);
        Ok((loss, self.backward(&cache, dout)))
    }

    fn backward(&self, cache: &Cache<T>, dout: Array2<T>) -> Grads<T> {
        let depth = self.arch.depth;
        let g = dout * self.output_scale;
        let mut gw = vec![Array2::zeros((0, 0)); depth + 1];
        let mut ggamma = vec![Array1::zeros(0); depth];
        let mut gbeta = vec![Array1::zeros(0); depth];
        gw[depth] = standard(g.t().dot(&cache.last));
        let mut dh = g.dot(&self.weights[depth]);
        let rows = T::from_usize_lossy(dh.nrows());
        for i in (0..depth).rev() {
            let lc = &cache.layers[i];
            let bn = &self.bn[i];
            let act = self.activation;
            let mut dy = lc.y.mapv(|v| act.deriv(v));
            dy *= &dh;
            ggamma[i] = (&dy * &lc.xhat).sum_axis(Axis(0));
            gbeta[i] = dy.sum_axis(Axis(0));
            let dxhat = &dy * &bn.gamma;
            let dz = if cache.train {
                let s1 = dxhat.sum_axis(Axis(0));
                let s2 = (&dxhat * &lc.xhat).sum_axis(Axis(0));
                ((&dxhat * rows - &s1) - &lc.xhat * &s2) * &(&lc.inv_std / rows)
            } else {
                &dxhat * &lc.inv_std
            };
            gw[i] = standard(dz.t().dot(&lc.input));
            let dprev = dz.dot(&self.weights[i]);
            dh = if i == 0 { dprev } else { dprev + &dh };
        }
        Grads {
            weights: gw,
            gamma: ggamma,
            beta: gbeta,
        }
    }

    /// Mutable views of all trainable parameters in file order, flagged
    /// `true` for weight matrices.
    pub fn param_slices_mut(&mut self) -> Vec<(&mut [T], bool)> {
        let mut out: Vec<(&mut [T], bool)> = Vec::new();
        let (hidden, head) = self.weights.split_at_mut(self.arch.depth);
        for (w, bn) in hidden.iter_mut().zip(self.bn.iter_mut()) {
            out.push((w.as_slice_mut().unwrap(), true));
            out.push((bn.gamma.as_slice_mut().unwrap(), false));
            out.push((bn.beta.as_slice_mut().unwrap(), false));
        }
        out.push((head[0].as_slice_mut().unwrap(), true));
        out
    }

    pub fn params_flat(&self) -> Vec<T> {
        let mut m = self.clone();
        m.param_slices_mut()
            .into_iter()
            .flat_map(|(s, _)| s.to_vec())
            .collect()
    }

    pub fn set_params_flat(&mut self, p: &[T]) {
        let mut off = 0;
        for (s, _) in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }
}

fn standard<T: Real>(a: Array2<T>) -> Array2<T> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl<T: Real> Grads<T> {
    /// Views in the same order as [`Mlp::param_slices_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let depth = self.gamma.len();
        let mut out: Vec<&[T]> = Vec::new();
        for i in 0..depth {
            out.push(self.weights[i].as_slice().unwrap());
            out.push(self.gamma[i].as_slice().unwrap());
            out.push(self.beta[i].as_slice().unwrap());
        }
        out.push(self.weights[depth].as_slice().unwrap());
        out
    }

    pub fn flat(&self) -> Vec<T> {
        self.slices().into_iter().flat_map(|s| s.to_vec()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn published_parameter_counts() {
        assert_eq!(param_count(&Arch::new(240, 512, 8, 81)), 2_007_552);
        assert_eq!(param_count(&Arch::new(1024, 512, 8, 375)), 2_559_488);
        assert_eq!(param_count(&Arch::new(240, 750, 8, 81)), 4_190_250);
        assert_eq!(param_count(&Arch::new(1024, 750, 8, 375)), 4_998_750);
        assert_eq!(param_count(&Arch::new(7, 1, 0, 3)), 21);
        let m = Mlp::<f64>::zeros(Arch::new(240, 512, 8, 81), Activation::Relu);
        assert_eq!(m.n_params(), 2_007_552);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut m = Mlp::<f64>::zeros(Arch::new(5, 4, 3, 2), Activation::Relu);
        m.train_mode();
        let y = m.forward(batch(6, 5, 1).view()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_deterministic_and_pure() {
        let m = Mlp::<f64>::new(Arch::new(5, 8, 3, 2), Activation::Relu, 3);
        let x = batch(4, 5, 2);
        let a = m.predict(x.view()).unwrap();
        let b = m.predict(x.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn batchnorm_statistics_in_training_mode() {
        let mut m = Mlp::<f64>::new(Arch::new(6, 5, 2, 3), Activation::Relu, 4);
        m.bn[0].gamma = Array1::from(vec![0.5, 1.0, 2.0, 3.0, 0.7]);
        m.bn[0].beta = Array1::from(vec![0.1, -0.2, 0.3, 0.0, 1.0]);
        let x = batch(64, 6, 5);
        let (_, cache, _) = m.run(x.view(), true, true).unwrap();
        let y = &cache.layers[0].y;
        for j in 0..5 {
            let col = y.column(j);
            let mean = col.mean().unwrap();
            let std = (col.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
            assert!((mean - m.bn[0].beta[j]).abs() < 1e-12);
            assert!((std - m.bn[0].gamma[j]).abs() < 1e-3 * m.bn[0].gamma[j]);
            // normalized statistic itself is exact up to ε
            let xh = cache.layers[0].xhat.column(j);
            let s = xh.mapv(|v| v * v).mean().unwrap();
            assert!((s - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let mut m = Mlp::<f64>::new(Arch::new(4, 6, 3, 2), Activation::Tanh, 9);
        m.train_mode();
        let x = batch(5, 4, 1);
        let t = batch(5, 2, 2);
        let (_, g1) = m.clone().loss_and_grad(x.view(), t.view()).unwrap();
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let t2 = ndarray::concatenate(Axis(0), &[t.view(), t.view()]).unwrap();
        let (_, g2) = m.loss_and_grad(x2.view(), t2.view()).unwrap();
        for (a, b) in g1.flat().iter().zip(g2.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_targets_zero_weights_zero_gradient() {
        let mut m = Mlp::<f64>::zeros(Arch::new(4, 6, 3, 2), Activation::Relu);
        m.train_mode();
        let (loss, g) = m
            .loss_and_grad(batch(5, 4, 1).view(), Array2::zeros((5, 2)).view())
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_mismatch_and_single_row_rejected() {
        let mut m = Mlp::<f64>::zeros(Arch::new(4, 6, 2, 2), Activation::Relu);
        assert!(m.predict(batch(3, 5, 1).view()).is_err());
        m.train_mode();
        assert!(m.forward(batch(1, 4, 1).view()).is_err());
    }
}
