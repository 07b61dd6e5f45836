//! 2-D cross-correlation (the deep-learning "convolution") over NCHW tensors.
//!
//! Dense and grouped convolutions go through im2col + GEMM; depthwise
//! convolutions (one filter per channel) use a direct kernel.

use rayon::prelude::*;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::{gemm, Float, MatRef, Tensor};

/// Geometry of a square-kernel convolution. Padding is zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, padding: 0, dilation: 1, groups: 1 }
    }
}

impl Conv2dSpec {
    /// Stride-1 convolution whose output has the input's spatial size.
    pub fn same(kernel: usize) -> Self {
        Self { padding: kernel / 2, ..Self::default() }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
    dil: usize,
    groups: usize,
}

impl Geometry {
    fn new(x: &[usize], wt: &[usize], spec: Conv2dSpec) -> Result<Self> {
        let (&[n, ci, h, w], &[co, cig, kh, kw]) = (x, wt) else {
            return Err(TensorError::shape("conv2d", format!("input {x:?}, weight {wt:?}")));
        };
        if spec.stride == 0 || spec.dilation == 0 || spec.groups == 0 {
            return Err(TensorError::invalid("conv2d", format!("{spec:?}")));
        }
        if kh != kw {
            return Err(TensorError::invalid("conv2d", "only square kernels are supported"));
        }
        if ci % spec.groups != 0 || co % spec.groups != 0 || cig * spec.groups != ci {
            return Err(TensorError::shape(
                "conv2d",
                format!("input channels {ci}, weight {wt:?}, groups {}", spec.groups),
            ));
        }
        let span = spec.dilation * (kh - 1) + 1;
        if h + 2 * spec.padding < span || w + 2 * spec.padding < span {
            return Err(TensorError::shape("conv2d", format!("input {h}x{w} smaller than kernel span {span}")));
        }
        Ok(Self {
            n,
            ci,
            h,
            w,
            co,
            k: kh,
            ho: (h + 2 * spec.padding - span) / spec.stride + 1,
            wo: (w + 2 * spec.padding - span) / spec.stride + 1,
            stride: spec.stride,
            pad: spec.padding,
            dil: spec.dilation,
            groups: spec.groups,
        })
    }

    fn cig(&self) -> usize {
        self.ci / self.groups
    }

    fn cog(&self) -> usize {
        self.co / self.groups
    }

    /// Rows of the im2col matrix for one group.
    fn col_rows(&self) -> usize {
        self.cig() * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.groups == self.ci && self.co == self.ci && self.groups > 1
    }

    /// Output positions `o` in `[lo, hi)` whose input index
    /// `o * stride + offset` lies in `[0, len)`.
    fn valid(&self, out_len: usize, in_len: usize, offset: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s };
        let hi = (in_len as isize - offset + s - 1).div_euclid(s).max(0);
        let lo = lo.max(0) as usize;
        let hi = (hi as usize).min(out_len);
        (lo.min(hi), hi)
    }

    fn offset(&self, tap: usize) -> isize {
        (tap * self.dil) as isize - self.pad as isize
    }
}

fn im2col<T: Float>(x: &[T], geo: &Geometry, col: &mut [T]) {
    let (h, w, k, ho, wo, s) = (geo.h, geo.w, geo.k, geo.ho, geo.wo, geo.stride);
    let plane = ho * wo;
    for c in 0..geo.cig() {
        let src_plane = &x[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let dy = geo.offset(ki);
            let (ylo, yhi) = geo.valid(ho, h, dy);
            for kj in 0..k {
                let dx = geo.offset(kj);
                let (xlo, xhi) = geo.valid(wo, w, dx);
                let row = (c * k + ki) * k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if oy < ylo || oy >= yhi || xlo >= xhi {
                        drow.fill(T::zero());
                        continue;
                    }
                    let iy = (oy as isize * s as isize + dy) as usize;
                    let srow = &src_plane[iy * w..(iy + 1) * w];
                    drow[..xlo].fill(T::zero());
                    drow[xhi..].fill(T::zero());
                    if s == 1 {
                        let start = (xlo as isize + dx) as usize;
                        drow[xlo..xhi].copy_from_slice(&srow[start..start + (xhi - xlo)]);
                    } else {
                        for ox in xlo..xhi {
                            drow[ox] = srow[(ox as isize * s as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(col: &[T], geo: &Geometry, dx_out: &mut [T]) {
    let (h, w, k, ho, wo, s) = (geo.h, geo.w, geo.k, geo.ho, geo.wo, geo.stride);
    let plane = ho * wo;
    for c in 0..geo.cig() {
        let dst_plane = &mut dx_out[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            let dy = geo.offset(ki);
            let (ylo, yhi) = geo.valid(ho, h, dy);
            for kj in 0..k {
                let dxo = geo.offset(kj);
                let (xlo, xhi) = geo.valid(wo, w, dxo);
                if xlo >= xhi {
                    continue;
                }
                let row = (c * k + ki) * k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oy in ylo..yhi {
                    let iy = (oy as isize * s as isize + dy) as usize;
                    let drow = &mut dst_plane[iy * w..(iy + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    for ox in xlo..xhi {
                        drow[(ox as isize * s as isize + dxo) as usize] += srow[ox];
                    }
                }
            }
        }
    }
}

fn check_bias<T: Float>(bias: Option<&Tensor<T>>, co: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(TensorError::shape("conv2d", format!("bias {:?} for {co} output channels", b.shape())));
        }
    }
    Ok(())
}

/// Forward convolution on plain tensors.
pub fn conv2d<T: Float>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), spec)?;
    check_bias(bias, geo.co)?;
    let mut out = Tensor::zeros(&[geo.n, geo.co, geo.ho, geo.wo]);
    if geo.n == 0 || geo.co == 0 {
        return Ok(out);
    }
    if geo.is_depthwise() {
        depthwise_forward(x.data(), weight.data(), &geo, out.data_mut());
    } else {
        let (xd, wd) = (x.data(), weight.data());
        let in_sample = geo.ci * geo.h * geo.w;
        let out_sample = geo.co * geo.out_plane();
        out.data_mut().par_chunks_mut(out_sample).enumerate().for_each(|(ni, out_n)| {
            let x_n = &xd[ni * in_sample..(ni + 1) * in_sample];
            let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); geo.col_rows() * geo.out_plane()] };
            for g in 0..geo.groups {
                let x_g = &x_n[g * geo.cig() * geo.h * geo.w..(g + 1) * geo.cig() * geo.h * geo.w];
                let cols: &[T] = if geo.is_pointwise() {
                    x_g
                } else {
                    im2col(x_g, &geo, &mut col);
                    &col
                };
                let w_g = &wd[g * geo.cog() * geo.col_rows()..(g + 1) * geo.cog() * geo.col_rows()];
                let o_g = &mut out_n[g * geo.cog() * geo.out_plane()..(g + 1) * geo.cog() * geo.out_plane()];
                gemm(
                    MatRef::new(w_g, geo.cog(), geo.col_rows()),
                    MatRef::new(cols, geo.col_rows(), geo.out_plane()),
                    T::zero(),
                    o_g,
                );
            }
        });
    }
    if let Some(b) = bias {
        let plane = geo.out_plane();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b.data()[i % geo.co];
            for v in chunk {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d`]; each output is computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: Conv2dSpec,
    need: [bool; 3],
) -> Result<ConvGrads<T>> {
    let geo = Geometry::new(x.shape(), weight.shape(), spec)?;
    if grad_out.shape() != [geo.n, geo.co, geo.ho, geo.wo] {
        return Err(TensorError::shape("conv2d_backward", format!("grad {:?}", grad_out.shape())));
    }
    let [need_x, need_w, need_b] = need;
    let bias = need_b.then(|| {
        let mut db = Tensor::zeros(&[geo.co]);
        let plane = geo.out_plane();
        for (i, chunk) in grad_out.data().chunks(plane).enumerate() {
            db.data_mut()[i % geo.co] += chunk.iter().copied().sum::<T>();
        }
        db
    });
    if !need_x && !need_w {
        return Ok(ConvGrads { input: None, weight: None, bias });
    }
    if geo.is_depthwise() {
        let input = need_x.then(|| {
            let mut dx = Tensor::zeros(x.shape());
            depthwise_backward_input(grad_out.data(), weight.data(), &geo, dx.data_mut());
            dx
        });
        let weight = need_w.then(|| {
            let mut dw = Tensor::zeros(weight.shape());
            depthwise_backward_weight(x.data(), grad_out.data(), &geo, dw.data_mut());
            dw
        });
        return Ok(ConvGrads { input, weight, bias });
    }

    let (xd, wd, gd) = (x.data(), weight.data(), grad_out.data());
    let in_sample = geo.ci * geo.h * geo.w;
    let out_sample = geo.co * geo.out_plane();
    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..geo.n)
        .into_par_iter()
        .map(|ni| {
            let x_n = &xd[ni * in_sample..(ni + 1) * in_sample];
            let g_n = &gd[ni * out_sample..(ni + 1) * out_sample];
            let rows = geo.col_rows();
            let plane = geo.out_plane();
            let mut col = vec![T::zero(); if geo.is_pointwise() { 0 } else { rows * plane }];
            let mut dcol = vec![T::zero(); if need_x && !geo.is_pointwise() { rows * plane } else { 0 }];
            let mut dx_n = need_x.then(|| vec![T::zero(); in_sample]);
            let mut dw_n = need_w.then(|| vec![T::zero(); weight.numel()]);
            for g in 0..geo.groups {
                let chans = geo.cig() * geo.h * geo.w;
                let x_g = &x_n[g * chans..(g + 1) * chans];
                let g_g = &g_n[g * geo.cog() * plane..(g + 1) * geo.cog() * plane];
                let w_g = &wd[g * geo.cog() * rows..(g + 1) * geo.cog() * rows];
                if let Some(dw) = dw_n.as_mut() {
                    let cols: &[T] = if geo.is_pointwise() {
                        x_g
                    } else {
                        im2col(x_g, &geo, &mut col);
                        &col
                    };
                    gemm(
                        MatRef::new(g_g, geo.cog(), plane),
                        MatRef::new(cols, rows, plane).t(),
                        T::zero(),
                        &mut dw[g * geo.cog() * rows..(g + 1) * geo.cog() * rows],
                    );
                }
                if let Some(dx) = dx_n.as_mut() {
                    let dx_g = &mut dx[g * chans..(g + 1) * chans];
                    let wt = MatRef::new(w_g, geo.cog(), rows).t();
                    let gm = MatRef::new(g_g, geo.cog(), plane);
                    if geo.is_pointwise() {
                        gemm(wt, gm, T::zero(), dx_g);
                    } else {
                        gemm(wt, gm, T::zero(), &mut dcol);
                        col2im(&dcol, &geo, dx_g);
                    }
                }
            }
            (dx_n, dw_n)
        })
        .collect();

    let mut dx = need_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = need_w.then(|| Tensor::zeros(weight.shape()));
    for (ni, (dx_n, dw_n)) in per_sample.into_iter().enumerate() {
        if let (Some(dx), Some(src)) = (dx.as_mut(), dx_n) {
            dx.data_mut()[ni * in_sample..(ni + 1) * in_sample].copy_from_slice(&src);
        }
        if let (Some(dw), Some(src)) = (dw.as_mut(), dw_n) {
            for (a, b) in dw.data_mut().iter_mut().zip(src) {
                *a += b;
            }
        }
    }
    Ok(ConvGrads { input: dx, weight: dw, bias })
}

fn depthwise_forward<T: Float>(x: &[T], wt: &[T], geo: &Geometry, out: &mut [T]) {
    let (h, w, k, ho, wo, s) = (geo.h, geo.w, geo.k, geo.ho, geo.wo, geo.stride);
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(plane_idx, o)| {
        let c = plane_idx % geo.ci;
        let xin = &x[plane_idx * h * w..(plane_idx + 1) * h * w];
        let kern = &wt[c * k * k..(c + 1) * k * k];
        for ki in 0..k {
            let dy = geo.offset(ki);
            let (ylo, yhi) = geo.valid(ho, h, dy);
            for kj in 0..k {
                let wv = kern[ki * k + kj];
                let dx = geo.offset(kj);
                let (xlo, xhi) = geo.valid(wo, w, dx);
                if xlo >= xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = (oy as isize * s as isize + dy) as usize;
                    let srow = &xin[iy * w..(iy + 1) * w];
                    let orow = &mut o[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let start = (xlo as isize + dx) as usize;
                        for (ov, &iv) in orow[xlo..xhi].iter_mut().zip(&srow[start..start + (xhi - xlo)]) {
                            *ov += wv * iv;
                        }
                    } else {
                        for ox in xlo..xhi {
                            orow[ox] += wv * srow[(ox as isize * s as isize + dx) as usize];
                        }
                    }
                }
            }
        }
    });
}

fn depthwise_backward_input<T: Float>(g: &[T], wt: &[T], geo: &Geometry, dx_out: &mut [T]) {
    let (h, w, k, ho, wo, s) = (geo.h, geo.w, geo.k, geo.ho, geo.wo, geo.stride);
    dx_out.par_chunks_mut(h * w).enumerate().for_each(|(plane_idx, dxp)| {
        let c = plane_idx % geo.ci;
        let gp = &g[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
        let kern = &wt[c * k * k..(c + 1) * k * k];
        for ki in 0..k {
            let dy = geo.offset(ki);
            let (ylo, yhi) = geo.valid(ho, h, dy);
            for kj in 0..k {
                let wv = kern[ki * k + kj];
                let dx = geo.offset(kj);
                let (xlo, xhi) = geo.valid(wo, w, dx);
                if xlo >= xhi {
                    continue;
                }
                for oy in ylo..yhi {
                    let iy = (oy as isize * s as isize + dy) as usize;
                    let drow = &mut dxp[iy * w..(iy + 1) * w];
                    let grow = &gp[oy * wo..(oy + 1) * wo];
                    if s == 1 {
                        let start = (xlo as isize + dx) as usize;
                        for (dv, &gv) in drow[start..start + (xhi - xlo)].iter_mut().zip(&grow[xlo..xhi]) {
                            *dv += wv * gv;
                        }
                    } else {
                        for ox in xlo..xhi {
                            drow[(ox as isize * s as isize + dx) as usize] += wv * grow[ox];
                        }
                    }
                }
            }
        }
    });
}

fn depthwise_backward_weight<T: Float>(x: &[T], g: &[T], geo: &Geometry, dw: &mut [T]) {
    let (h, w, k, ho, wo, s) = (geo.h, geo.w, geo.k, geo.ho, geo.wo, geo.stride);
    dw.par_chunks_mut(k * k).enumerate().for_each(|(c, dk)| {
        for ni in 0..geo.n {
            let plane_idx = ni * geo.ci + c;
            let xin = &x[plane_idx * h * w..(plane_idx + 1) * h * w];
            let gp = &g[plane_idx * ho * wo..(plane_idx + 1) * ho * wo];
            for ki in 0..k {
                let dy = geo.offset(ki);
                let (ylo, yhi) = geo.valid(ho, h, dy);
                for kj in 0..k {
                    let dx = geo.offset(kj);
                    let (xlo, xhi) = geo.valid(wo, w, dx);
                    if xlo >= xhi {
                        continue;
                    }
                    let mut acc = T::zero();
                    for oy in ylo..yhi {
                        let iy = (oy as isize * s as isize + dy) as usize;
                        let srow = &xin[iy * w..(iy + 1) * w];
                        let grow = &gp[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let start = (xlo as isize + dx) as usize;
                            acc += grow[xlo..xhi]
                                .iter()
                                .zip(&srow[start..start + (xhi - xlo)])
                                .fold(T::zero(), |a, (&gv, &iv)| a + gv * iv);
                        } else {
                            for ox in xlo..xhi {
                                acc += grow[ox] * srow[(ox as isize * s as isize + dx) as usize];
                            }
                        }
                    }
                    dk[ki * k + kj] += acc;
                }
            }
        }
    });
}

impl<T: Float> Graph<T> {
    pub fn conv2d(&self, x: Var, weight: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let vals = self.values(&[x, weight]);
        let (xv, wv) = (vals[0].clone(), vals[1].clone());
        let bv = bias.map(|b| self.value(b));
        let out = conv2d(&xv, &wv, bv.as_deref(), spec)?;
        let mut parents = vec![x, weight];
        parents.extend(bias);
        let has_bias = bias.is_some();
        Ok(self.custom(&parents, out, move |g, need| {
            let grads = conv2d_backward(&xv, &wv, g, spec, [need[0], need[1], has_bias && need[2]])
                .expect("shapes validated in forward");
            let mut v = vec![grads.input, grads.weight];
            if has_bias {
                v.push(grads.bias);
            }
            v
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &Tensor<f64>, wt: &Tensor<f64>, spec: Conv2dSpec) -> Tensor<f64> {
        let [n, ci, h, w] = x.dims4().unwrap();
        let [co, cig, k, _] = wt.dims4().unwrap();
        let span = spec.dilation * (k - 1) + 1;
        let ho = (h + 2 * spec.padding - span) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - span) / spec.stride + 1;
        let cog = co / spec.groups;
        let mut out = Tensor::zeros(&[n, co, ho, wo]);
        for b in 0..n {
            for o in 0..co {
                let g = o / cog;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..cig {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * spec.stride + ki * spec.dilation) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kj * spec.dilation) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += wt.get4(o, c, ki, kj) * x.get4(b, g * cig + c, iy as usize, ix as usize);
                                }
                            }
                        }
                        out.set4(b, o, oy, ox, acc);
                    }
                }
            }
        }
        let _ = ci;
        out
    }

    fn ramp(shape: &[usize], seed: f64) -> Tensor<f64> {
        Tensor::from_fn(shape, |i| ((i as f64 * 0.37 + seed).sin() * 1.3).round() / 4.0 + 0.1)
    }

    #[test]
    fn matches_naive_for_assorted_geometries() {
        let cases = [
            ([2, 4, 7, 6], [6, 4, 3, 3], Conv2dSpec::same(3)),
            ([1, 4, 9, 9], [2, 2, 3, 3], Conv2dSpec::default().padding(2).dilation(2).groups(2)),
            ([2, 3, 8, 8], [5, 3, 4, 4], Conv2dSpec::default().stride(4)),
            ([1, 6, 8, 8], [4, 6, 2, 2], Conv2dSpec::default().stride(2)),
            ([2, 5, 6, 7], [5, 1, 7, 7], Conv2dSpec::same(7).groups(5)),
            ([1, 3, 5, 5], [3, 1, 3, 3], Conv2dSpec::default().stride(2).padding(1).groups(3)),
            ([2, 5, 4, 4], [3, 5, 1, 1], Conv2dSpec::default()),
        ];
        for (i, (xs, ws, spec)) in cases.into_iter().enumerate() {
            let x = ramp(&xs, i as f64);
            let w = ramp(&ws, 10.0 + i as f64);
            let got = conv2d(&x, &w, None, spec).unwrap();
            let want = naive(&x, &w, spec);
            assert_eq!(got.shape(), want.shape(), "case {i}");
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "case {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> == <x, dX(g)>  and  == <w, dW(g)>
        let cases = [
            ([2, 4, 7, 6], [6, 4, 3, 3], Conv2dSpec::same(3)),
            ([1, 4, 9, 9], [2, 2, 3, 3], Conv2dSpec::default().padding(2).dilation(2).groups(2)),
            ([2, 3, 8, 8], [5, 3, 4, 4], Conv2dSpec::default().stride(4)),
            ([2, 5, 6, 7], [5, 1, 7, 7], Conv2dSpec::same(7).groups(5)),
            ([1, 3, 5, 5], [3, 1, 3, 3], Conv2dSpec::default().stride(2).padding(1).groups(3)),
            ([2, 5, 4, 4], [3, 5, 1, 1], Conv2dSpec::default()),
        ];
        for (i, (xs, ws, spec)) in cases.into_iter().enumerate() {
            let x = ramp(&xs, i as f64);
            let w = ramp(&ws, 3.0 + i as f64);
            let y = conv2d(&x, &w, None, spec).unwrap();
            let g = ramp(y.shape(), 7.0 + i as f64);
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let grads = conv2d_backward(&x, &w, &g, spec, [true, true, true]).unwrap();
            let via_x: f64 = x.data().iter().zip(grads.input.unwrap().data()).map(|(a, b)| a * b).sum();
            let via_w: f64 = w.data().iter().zip(grads.weight.unwrap().data()).map(|(a, b)| a * b).sum();
            assert!((lhs - via_x).abs() < 1e-9 * lhs.abs().max(1.0), "case {i}: {lhs} vs {via_x}");
            assert!((lhs - via_w).abs() < 1e-9 * lhs.abs().max(1.0), "case {i}: {lhs} vs {via_w}");
            assert!((grads.bias.unwrap().sum() - g.sum()).abs() < 1e-9);
        }
    }
}
