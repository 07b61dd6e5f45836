//! Layout operations: channel concatenation, broadcasting, padding, pooling
//! and bilinear resampling.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{Float, Tensor};

/// Interpolation taps for one output coordinate (half-pixel centers, edge
/// clamped).
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    i0: usize,
    i1: usize,
    w1: T,
}

fn bilinear_taps<T: Float>(in_len: usize, out_len: usize) -> Vec<Tap<T>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap { i0, i1, w1: T::lit(src - i0 as f64) }
        })
        .collect()
}

/// Bilinear resize of every channel plane (align-corners off).
pub fn resize_bilinear<T: Float>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(TensorError::invalid("resize_bilinear", "empty spatial size"));
    }
    let ty = bilinear_taps::<T>(h, out_h);
    let tx = bilinear_taps::<T>(w, out_w);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    for (p, o) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            let (r0, r1) = (&src[ry.i0 * w..(ry.i0 + 1) * w], &src[ry.i1 * w..(ry.i1 + 1) * w]);
            let wy0 = T::one() - ry.w1;
            for (ox, rx) in tx.iter().enumerate() {
                let wx0 = T::one() - rx.w1;
                let top = r0[rx.i0] * wx0 + r0[rx.i1] * rx.w1;
                let bot = r1[rx.i0] * wx0 + r1[rx.i1] * rx.w1;
                o[oy * out_w + ox] = top * wy0 + bot * ry.w1;
            }
        }
    }
    Ok(out)
}

fn resize_bilinear_backward<T: Float>(g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, out_h, out_w] = g.dims4().expect("rank-4 gradient");
    let ty = bilinear_taps::<T>(h, out_h);
    let tx = bilinear_taps::<T>(w, out_w);
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (p, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let gp = &g.data()[p * out_h * out_w..(p + 1) * out_h * out_w];
        for (oy, ry) in ty.iter().enumerate() {
            let wy0 = T::one() - ry.w1;
            for (ox, rx) in tx.iter().enumerate() {
                let gv = gp[oy * out_w + ox];
                let wx0 = T::one() - rx.w1;
                d[ry.i0 * w + rx.i0] += gv * wy0 * wx0;
                d[ry.i0 * w + rx.i1] += gv * wy0 * rx.w1;
                d[ry.i1 * w + rx.i0] += gv * ry.w1 * wx0;
                d[ry.i1 * w + rx.i1] += gv * ry.w1 * rx.w1;
            }
        }
    }
    dx
}

/// Replicate-pads every plane by `pad` pixels on each side.
pub fn pad_replicate<T: Float>(x: &Tensor<T>, pad: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4()?;
    if h == 0 || w == 0 {
        return Err(TensorError::invalid("pad_replicate", "empty spatial size"));
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(&[n, c, ph, pw]);
    for (p, o) in out.data_mut().chunks_mut(ph * pw).enumerate() {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for xx in 0..pw {
                let sx = xx.saturating_sub(pad).min(w - 1);
                o[y * pw + xx] = src[sy * w + sx];
            }
        }
    }
    Ok(out)
}

fn pad_replicate_backward<T: Float>(g: &Tensor<T>, pad: usize, h: usize, w: usize) -> Tensor<T> {
    let [n, c, ph, pw] = g.dims4().expect("rank-4 gradient");
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (p, d) in dx.data_mut().chunks_mut(h * w).enumerate() {
        let gp = &g.data()[p * ph * pw..(p + 1) * ph * pw];
        for y in 0..ph {
            let sy = y.saturating_sub(pad).min(h - 1);
            for xx in 0..pw {
                let sx = xx.saturating_sub(pad).min(w - 1);
                d[sy * w + sx] += gp[y * pw + xx];
            }
        }
    }
    dx
}

impl<T: Float> Graph<T> {
    /// Concatenates rank-4 tensors along the channel axis.
    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(TensorError::invalid("concat_channels", "no inputs"));
        }
        let vals = self.values(xs);
        let [n, _, h, w] = vals[0].dims4()?;
        let mut chans = Vec::with_capacity(vals.len());
        for v in &vals {
            let [vn, vc, vh, vw] = v.dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(TensorError::shape("concat_channels", format!("{:?} vs {:?}", vals[0].shape(), v.shape())));
            }
            chans.push(vc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * total * hw);
        for ni in 0..n {
            for (v, &vc) in vals.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[ni * vc * hw..(ni + 1) * vc * hw]);
            }
        }
        let out = Tensor::from_vec(&[n, total, h, w], out)?;
        Ok(self.custom(xs, out, move |g, need| {
            let mut offset = 0;
            chans
                .iter()
                .zip(need)
                .map(|(&vc, &needed)| {
                    let start = offset;
                    offset += vc;
                    needed.then(|| {
                        let mut d = Vec::with_capacity(n * vc * hw);
                        for ni in 0..n {
                            let base = (ni * total + start) * hw;
                            d.extend_from_slice(&g.data()[base..base + vc * hw]);
                        }
                        Tensor::from_vec(&[n, vc, h, w], d).expect("sized above")
                    })
                })
                .collect()
        }))
    }

    /// Broadcasts `x` to `shape`; every axis of `x` must match or be 1.
    pub fn expand(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let [xn, xc, xh, xw] = xv.dims4()?;
        let &[n, c, h, w] = shape else {
            return Err(TensorError::shape("expand", format!("target {shape:?}")));
        };
        for (a, b) in [(xn, n), (xc, c), (xh, h), (xw, w)] {
            if a != b && a != 1 {
                return Err(TensorError::shape("expand", format!("{:?} -> {shape:?}", xv.shape())));
            }
        }
        let src = move |ni: usize, ci: usize, y: usize, xx: usize| -> usize {
            (((ni % xn) * xc + ci % xc) * xh + y % xh) * xw + xx % xw
        };
        let mut out = Tensor::zeros(shape);
        let mut i = 0;
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        out.data_mut()[i] = xv.data()[src(ni, ci, y, xx)];
                        i += 1;
                    }
                }
            }
        }
        let in_shape = xv.shape().to_vec();
        Ok(self.custom(&[x], out, move |g, _| {
            let mut d = Tensor::zeros(&in_shape);
            let mut i = 0;
            for ni in 0..n {
                for ci in 0..c {
                    for y in 0..h {
                        for xx in 0..w {
                            d.data_mut()[src(ni, ci, y, xx)] += g.data()[i];
                            i += 1;
                        }
                    }
                }
            }
            vec![Some(d)]
        }))
    }

    /// Mean over the spatial axes, keeping them as size 1.
    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let [n, c, h, w] = xv.dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw as f64);
        let out: Vec<T> = xv.data().chunks(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::from_vec(&[n, c, 1, 1], out)?;
        Ok(self.custom(&[x], out, move |g, _| {
            let mut d = Tensor::zeros(&[n, c, h, w]);
            for (p, v) in d.data_mut().chunks_mut(hw).zip(g.data()) {
                p.fill(*v * inv);
            }
            vec![Some(d)]
        }))
    }

    pub fn resize_bilinear(&self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let xv = self.value(x);
        let [_, _, h, w] = xv.dims4()?;
        if (h, w) == (out_h, out_w) {
            return Ok(x);
        }
        let out = resize_bilinear(&xv, out_h, out_w)?;
        Ok(self.custom(&[x], out, move |g, _| vec![Some(resize_bilinear_backward(g, h, w))]))
    }

    pub fn pad_replicate(&self, x: Var, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let [_, _, h, w] = xv.dims4()?;
        let out = pad_replicate(&xv, pad)?;
        Ok(self.custom(&[x], out, move |g, _| vec![Some(pad_replicate_backward(g, pad, h, w))]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_identity_and_constant() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 4, 5], |i| i as f64);
        assert_eq!(resize_bilinear(&x, 4, 5).unwrap(), x);
        let c = Tensor::<f64>::full(&[1, 1, 3, 3], 2.5);
        let up = resize_bilinear(&c, 12, 12).unwrap();
        assert!(up.data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn bilinear_2x_matches_half_pixel_convention() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let up = resize_bilinear(&x, 1, 4).unwrap();
        assert_eq!(up.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resampling_backward_is_adjoint() {
        let x = Tensor::<f64>::from_fn(&[2, 1, 3, 5], |i| (i as f64 * 0.7).sin());
        let y = resize_bilinear(&x, 8, 9).unwrap();
        let g = Tensor::<f64>::from_fn(y.shape(), |i| (i as f64 * 0.3).cos());
        let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let dx = resize_bilinear_backward(&g, 3, 5);
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let p = pad_replicate(&x, 2).unwrap();
        let gp = Tensor::<f64>::from_fn(p.shape(), |i| (i as f64 * 0.11).cos());
        let lhs: f64 = p.data().iter().zip(gp.data()).map(|(a, b)| a * b).sum();
        let dx = pad_replicate_backward(&gp, 2, 3, 5);
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
