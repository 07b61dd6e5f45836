//! Parameterized layers built on the tape.
//!
//! Layers own only [`ParamId`]s; the tensors live in a [`ParamStore`] so the
//! same layer description can run against f32 training weights or an f64
//! copy used for gradient checks.

use std::cell::RefCell;

use rand::Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::ops::conv::Conv2dSpec;
use crate::ops::norm::BatchNormMode;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Tensor};

/// Everything a layer needs during one forward pass.
pub struct Forward<'a, T: Float> {
    pub graph: &'a Graph<T>,
    pub params: &'a ParamStore<T>,
    pub training: bool,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

impl<'a, T: Float> Forward<'a, T> {
    pub fn new(graph: &'a Graph<T>, params: &'a ParamStore<T>, training: bool) -> Self {
        Self { graph, params, training, buffer_updates: RefCell::new(Vec::new()) }
    }

    pub fn param(&self, id: ParamId) -> Var {
        self.graph.param(self.params, id)
    }

    /// Queues a new value for a non-trainable buffer (running statistics).
    pub fn update_buffer(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Buffer updates accumulated during the pass, in call order.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }
}

/// Writes queued buffer updates into the store.
pub fn apply_buffer_updates<T: Float>(store: &mut ParamStore<T>, updates: Vec<(ParamId, Tensor<T>)>) {
    for (id, v) in updates {
        *store.value_mut(id) = v;
    }
}

fn uniform<T: Float>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::lit(rng.random_range(-bound..=bound)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: Conv2dSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv2d {
    /// Weights drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: Conv2dSpec,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let cig = in_channels / spec.groups.max(1);
        let fan_in = (cig * kernel * kernel).max(1);
        let shape = [out_channels, cig, kernel, kernel];
        let weight = store.insert(format!("{name}.weight"), uniform(&shape, 1.0 / (fan_in as f64).sqrt(), rng), true)?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[out_channels]), true)?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec, in_channels, out_channels, kernel })
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.graph.conv2d(x, w, b, self.spec)
    }
}

/// Layer normalization over the channel axis of NCHW maps.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::ones(&[channels]), true)?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            eps: 1e-6,
        })
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        f.graph.layer_norm_channels(x, g, b, T::lit(self.eps))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.insert(format!("{name}.gamma"), Tensor::ones(&[channels]), true)?,
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.insert(format!("{name}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.insert(format!("{name}.running_var"), Tensor::ones(&[channels]), false)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    /// Batch statistics in training mode (running averages updated through
    /// [`Forward::update_buffer`]), running statistics otherwise.
    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (f.param(self.gamma), f.param(self.beta));
        let eps = T::lit(self.eps);
        if !f.training {
            let mean = f.params.value(self.running_mean).data();
            let var = f.params.value(self.running_var).data();
            return Ok(f.graph.batch_norm(x, g, b, BatchNormMode::Eval { mean, var }, eps)?.0);
        }
        let (y, stats) = f.graph.batch_norm(x, g, b, BatchNormMode::Train, eps)?;
        let stats = stats.expect("training mode returns statistics");
        let m = T::lit(self.momentum);
        let keep = T::one() - m;
        let unbias = if stats.count > 1 {
            T::lit(stats.count as f64 / (stats.count - 1) as f64)
        } else {
            T::one()
        };
        let rm = f.params.value(self.running_mean);
        let rv = f.params.value(self.running_var);
        let new_mean = Tensor::from_fn(rm.shape(), |i| keep * rm.data()[i] + m * stats.mean[i]);
        let new_var = Tensor::from_fn(rv.shape(), |i| keep * rv.data()[i] + m * stats.var[i] * unbias);
        f.update_buffer(self.running_mean, new_mean);
        f.update_buffer(self.running_var, new_var);
        Ok(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn batch_norm_train_normalizes_and_tracks_running_stats() {
        let mut store = ParamStore::<f64>::new();
        let bn = BatchNorm2d::new(&mut store, "bn", 2).unwrap();
        let g = Graph::new();
        let f = Forward::new(&g, &store, true);
        let x = g.constant(Tensor::from_fn(&[2, 2, 2, 2], |i| i as f64));
        let y = bn.forward(&f, x).unwrap();
        let yv = g.value(y);
        for c in 0..2 {
            let vals: Vec<f64> = (0..2).flat_map(|n| yv.plane(n, c).to_vec()).collect();
            let mean: f64 = vals.iter().sum::<f64>() / 8.0;
            let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-4);
        }
        let updates = f.take_buffer_updates();
        assert_eq!(updates.len(), 2);
        apply_buffer_updates(&mut store, updates);
        // channel 0 values: 0..4 and 8..12 -> mean 5.5
        assert!((store.value(bn.running_mean).data()[0] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn conv_layer_init_is_seeded() {
        let make = || {
            let mut store = ParamStore::<f32>::new();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            Conv2d::new(&mut store, "c", 4, 8, 3, Conv2dSpec::same(3), true, &mut rng).unwrap();
            store.value(store.id("c.weight").unwrap()).clone()
        };
        assert_eq!(make(), make());
        assert!(make().max_abs() <= 1.0 / 6.0);
    }
}
