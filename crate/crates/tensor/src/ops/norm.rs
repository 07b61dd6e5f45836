//! Channel-wise layer normalization and batch normalization for NCHW maps.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{Float, Tensor};

/// Statistics of one batch-norm call in training mode (biased variance).
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    /// Number of elements per channel the statistics were computed over.
    pub count: usize,
}

pub enum BatchNormMode<'a, T> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T] },
}

fn affine_shape(op: &'static str, c: usize, gamma: &Tensor<impl Float>, beta: &Tensor<impl Float>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(TensorError::shape(op, format!("affine {:?}/{:?} for {c} channels", gamma.shape(), beta.shape())));
    }
    Ok(())
}

impl<T: Float> Graph<T> {
    /// Normalizes over the channel axis at every `(n, y, x)` location, then
    /// applies a per-channel affine transform.
    pub fn layer_norm_channels(&self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let v = self.values(&[x, gamma, beta]);
        let (xv, gv, bv) = (v[0].clone(), v[1].clone(), v[2].clone());
        let [n, c, h, w] = xv.dims4()?;
        affine_shape("layer_norm_channels", c, &gv, &bv)?;
        let hw = h * w;
        let inv_c = T::one() / T::lit(c as f64);
        let mut xhat = Tensor::zeros(xv.shape());
        let mut inv_std = vec![T::zero(); n * hw];
        let mut out = Tensor::zeros(xv.shape());
        for ni in 0..n {
            let xs = &xv.data()[ni * c * hw..(ni + 1) * c * hw];
            let mut mean = vec![T::zero(); hw];
            for ch in xs.chunks(hw) {
                for (m, &v) in mean.iter_mut().zip(ch) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            let mut var = vec![T::zero(); hw];
            for ch in xs.chunks(hw) {
                for ((s, &v), &m) in var.iter_mut().zip(ch).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let istd = &mut inv_std[ni * hw..(ni + 1) * hw];
            for (i, s) in istd.iter_mut().zip(&var) {
                *i = T::one() / (*s * inv_c + eps).sqrt();
            }
            let xh = &mut xhat.data_mut()[ni * c * hw..(ni + 1) * c * hw];
            let o = &mut out.data_mut()[ni * c * hw..(ni + 1) * c * hw];
            for ci in 0..c {
                let (gam, bet) = (gv.data()[ci], bv.data()[ci]);
                let range = ci * hw..(ci + 1) * hw;
                for (((xh, o), &v), (&m, &is)) in xh[range.clone()]
                    .iter_mut()
                    .zip(&mut o[range.clone()])
                    .zip(&xs[range])
                    .zip(mean.iter().zip(istd.iter()))
                {
                    *xh = (v - m) * is;
                    *o = gam * *xh + bet;
                }
            }
        }
        Ok(self.custom(&[x, gamma, beta], out, move |g, need| {
            let mut dgamma = Tensor::zeros(&[c]);
            let mut dbeta = Tensor::zeros(&[c]);
            for ni in 0..n {
                for ci in 0..c {
                    let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                    dgamma.data_mut()[ci] += g.data()[r.clone()].iter().zip(&xhat.data()[r.clone()]).map(|(&a, &b)| a * b).sum();
                    dbeta.data_mut()[ci] += g.data()[r].iter().copied().sum();
                }
            }
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                for ni in 0..n {
                    let base = ni * c * hw;
                    let mut sum_d = vec![T::zero(); hw];
                    let mut sum_dx = vec![T::zero(); hw];
                    for ci in 0..c {
                        let gam = gv.data()[ci];
                        let r = base + ci * hw..base + (ci + 1) * hw;
                        for ((sd, sdx), (&gg, &xh)) in
                            sum_d.iter_mut().zip(sum_dx.iter_mut()).zip(g.data()[r.clone()].iter().zip(&xhat.data()[r]))
                        {
                            let d = gg * gam;
                            *sd += d;
                            *sdx += d * xh;
                        }
                    }
                    let istd = &inv_std[ni * hw..(ni + 1) * hw];
                    for ci in 0..c {
                        let gam = gv.data()[ci];
                        let r = base + ci * hw..base + (ci + 1) * hw;
                        let gs = &g.data()[r.clone()];
                        let xs = &xhat.data()[r.clone()];
                        for (i, o) in dx.data_mut()[r].iter_mut().enumerate() {
                            let d = gs[i] * gam;
                            *o = istd[i] * (d - inv_c * sum_d[i] - xs[i] * inv_c * sum_dx[i]);
                        }
                    }
                }
                dx
            });
            vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        }))
    }

    /// Batch normalization with per-channel affine parameters. In training
    /// mode the batch statistics are returned so the caller can update its
    /// running averages.
    pub fn batch_norm(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
        eps: T,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let v = self.values(&[x, gamma, beta]);
        let (xv, gv, bv) = (v[0].clone(), v[1].clone(), v[2].clone());
        let [n, c, h, w] = xv.dims4()?;
        affine_shape("batch_norm", c, &gv, &bv)?;
        let hw = h * w;
        let count = n * hw;
        if count == 0 {
            return Err(TensorError::invalid("batch_norm", "empty input"));
        }
        let (mean, var, train) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let inv = T::one() / T::lit(count as f64);
                for ci in 0..c {
                    let mut s = T::zero();
                    for ni in 0..n {
                        s += xv.plane(ni, ci).iter().copied().sum();
                    }
                    let m = s * inv;
                    let mut q = T::zero();
                    for ni in 0..n {
                        q += xv.plane(ni, ci).iter().map(|&v| (v - m) * (v - m)).sum();
                    }
                    mean[ci] = m;
                    var[ci] = q * inv;
                }
                (mean, var, true)
            }
            BatchNormMode::Eval { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::shape("batch_norm", "running statistics length"));
                }
                (mean.to_vec(), var.to_vec(), false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(xv.shape());
        let mut out = Tensor::zeros(xv.shape());
        for ni in 0..n {
            for ci in 0..c {
                let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                let (m, is, gam, bet) = (mean[ci], inv_std[ci], gv.data()[ci], bv.data()[ci]);
                for ((xh, o), &v) in xhat.data_mut()[r.clone()].iter_mut().zip(&mut out.data_mut()[r.clone()]).zip(&xv.data()[r]) {
                    *xh = (v - m) * is;
                    *o = gam * *xh + bet;
                }
            }
        }
        let stats = train.then(|| BatchStats { mean: mean.clone(), var: var.clone(), count });
        let var_out = self.custom(&[x, gamma, beta], out, move |g, need| {
            let mut dgamma = Tensor::zeros(&[c]);
            let mut dbeta = Tensor::zeros(&[c]);
            for ni in 0..n {
                for ci in 0..c {
                    let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                    dgamma.data_mut()[ci] += g.data()[r.clone()].iter().zip(&xhat.data()[r.clone()]).map(|(&a, &b)| a * b).sum();
                    dbeta.data_mut()[ci] += g.data()[r].iter().copied().sum();
                }
            }
            let dx = need[0].then(|| {
                let mut dx = Tensor::zeros(&[n, c, h, w]);
                let inv_m = T::one() / T::lit(count as f64);
                for ci in 0..c {
                    let scale = gv.data()[ci] * inv_std[ci];
                    let (db, dg) = (dbeta.data()[ci], dgamma.data()[ci]);
                    for ni in 0..n {
                        let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                        let gs = &g.data()[r.clone()];
                        let xs = &xhat.data()[r.clone()];
                        for (i, o) in dx.data_mut()[r].iter_mut().enumerate() {
                            *o = if train {
                                scale * (gs[i] - inv_m * db - xs[i] * inv_m * dg)
                            } else {
                                scale * gs[i]
                            };
                        }
                    }
                }
                dx
            });
            vec![dx, need[1].then_some(dgamma), need[2].then_some(dbeta)]
        });
        Ok((var_out, stats))
    }
}
