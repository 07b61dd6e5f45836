//! Pointwise arithmetic and activations.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Float, Tensor};

pub fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// GELU, tanh form.
pub fn gelu<T: Float>(x: T) -> T {
    let (k, c, half) = (T::lit(GELU_K), T::lit(GELU_C), T::lit(0.5));
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh_fast())
}

pub fn gelu_grad<T: Float>(x: T) -> T {
    let (k, c, half) = (T::lit(GELU_K), T::lit(GELU_C), T::lit(0.5));
    let u = k * (x + c * x * x * x);
    let t = u.tanh_fast();
    let du = k * (T::one() + T::lit(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * du
}

impl<T: Float> Graph<T> {
    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values(&[a, b]);
        let out = v[0].zip_map(&v[1], |x, y| x + y)?;
        Ok(self.custom(&[a, b], out, |g, need| {
            vec![need[0].then(|| g.clone()), need[1].then(|| g.clone())]
        }))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values(&[a, b]);
        let out = v[0].zip_map(&v[1], |x, y| x - y)?;
        Ok(self.custom(&[a, b], out, |g, need| {
            vec![need[0].then(|| g.clone()), need[1].then(|| g.map(|v| -v))]
        }))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.values(&[a, b]);
        let (av, bv) = (v[0].clone(), v[1].clone());
        let out = av.zip_map(&bv, |x, y| x * y)?;
        Ok(self.custom(&[a, b], out, move |g, need| {
            vec![
                need[0].then(|| g.zip_map(&bv, |g, y| g * y).expect("same shape")),
                need[1].then(|| g.zip_map(&av, |g, x| g * x).expect("same shape")),
            ]
        }))
    }

    /// Sum of several same-shape tensors.
    pub fn add_n(&self, xs: &[Var]) -> Result<Var> {
        let mut it = xs.iter();
        let first = *it.next().ok_or_else(|| crate::TensorError::invalid("add_n", "no operands"))?;
        it.try_fold(first, |acc, &x| self.add(acc, x))
    }

    pub fn scale(&self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.custom(&[x], out, move |g, _| vec![Some(g.map(|v| v * factor))])
    }

    pub fn add_scalar(&self, x: Var, offset: T) -> Var {
        let out = self.value(x).map(|v| v + offset);
        self.custom(&[x], out, |g, _| vec![Some(g.clone())])
    }

    pub fn relu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.map(|v| v.max(T::zero()));
        self.custom(&[x], out, move |g, _| {
            vec![Some(g.zip_map(&xv, |g, x| if x > T::zero() { g } else { T::zero() }).expect("same shape"))]
        })
    }

    pub fn gelu(&self, x: Var) -> Var {
        let xv = self.value(x);
        let out = xv.map(gelu);
        self.custom(&[x], out, move |g, _| {
            vec![Some(g.zip_map(&xv, |g, x| g * gelu_grad(x)).expect("same shape"))]
        })
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let sv = out.clone();
        self.custom(&[x], out, move |g, _| {
            vec![Some(g.zip_map(&sv, |g, s| g * s * (T::one() - s)).expect("same shape"))]
        })
    }

    /// Clamp to `[lo, hi]`; the gradient passes only where the input was
    /// strictly inside the interval.
    pub fn clamp(&self, x: Var, lo: T, hi: T) -> Var {
        let xv = self.value(x);
        let out = xv.map(|v| v.max(lo).min(hi));
        self.custom(&[x], out, move |g, _| {
            vec![Some(g.zip_map(&xv, |g, x| if x > lo && x < hi { g } else { T::zero() }).expect("same shape"))]
        })
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum_all(&self, x: Var) -> Var {
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        self.custom(&[x], Tensor::scalar(xv.sum()), move |g, _| vec![Some(Tensor::full(&shape, g.data()[0]))])
    }

    pub fn mean_all(&self, x: Var) -> Var {
        let n = self.value(x).numel().max(1);
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::lit(n as f64))
    }
}
