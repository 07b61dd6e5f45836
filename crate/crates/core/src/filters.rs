//! Low-level forensic filters: constrained (Bayar) convolution kernels with
//! their projection rule, the fixed SRM residual bank, and Sobel gradients.
//!
//! All three use replicate padding so a constant image produces an all-zero
//! response, borders included.

use std::fmt::Write as _;

use dualtrace_tensor::{conv2d, pad_replicate, Conv2dSpec, Float, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible magnitude of the non-center weight sum.
pub const PROJECTION_EPS: f64 = 1e-8;

/// Tolerance used when verifying the constraint on stored kernels.
pub const CONSTRAINT_TOL: f64 = 1e-6;

fn center_index(size: usize) -> usize {
    (size / 2) * size + size / 2
}

/// Projects one `size × size` slice in place: zero the center, rescale the
/// remaining weights to sum to one, set the center to −1.
///
/// Sums are accumulated in f64 so f32 weights still meet the unit-sum
/// constraint after rounding.
pub fn project_slice<T: Float>(w: &mut [T], size: usize) -> std::result::Result<(), f64> {
    debug_assert_eq!(w.len(), size * size);
    let center = center_index(size);
    w[center] = T::zero();
    let sum: f64 = w.iter().map(|v| v.as_f64()).sum();
    if !(sum.abs() >= PROJECTION_EPS) {
        return Err(sum);
    }
    for v in w.iter_mut() {
        *v = T::lit(v.as_f64() / sum);
    }
    // Fold the rounding residual into the smallest-magnitude weight, where
    // the representable spacing is finest. A few passes settle it.
    for _ in 0..3 {
        let residual = 1.0 - w.iter().map(|v| v.as_f64()).sum::<f64>();
        if residual == 0.0 {
            break;
        }
        let smallest = (0..w.len())
            .filter(|&i| i != center)
            .min_by(|&a, &b| w[a].as_f64().abs().total_cmp(&w[b].as_f64().abs()))
            .expect("kernel has non-center weights");
        w[smallest] = T::lit(w[smallest].as_f64() + residual);
    }
    w[center] = T::lit(-1.0);
    Ok(())
}

/// `(|center + 1|, |Σ non-center − 1|)` for one slice.
pub fn slice_residuals<T: Float>(w: &[T], size: usize) -> (f64, f64) {
    let center = center_index(size);
    let others: f64 = w.iter().enumerate().filter(|&(i, _)| i != center).map(|(_, v)| v.as_f64()).sum();
    ((w[center].as_f64() + 1.0).abs(), (others - 1.0).abs())
}

/// Projects every `K × K` slice of a `[out, in, K, K]` weight tensor.
/// On failure reports the flat slice index (`out * in_channels + in`).
pub fn project_weight_tensor<T: Float>(weight: &mut Tensor<T>) -> Result<()> {
    let [_, _, k, k2] = weight.dims4()?;
    if k != k2 || k % 2 == 0 {
        return Err(Error::BadGeometry(format!("constrained kernels must be square and odd, got {k}x{k2}")));
    }
    for (index, slice) in weight.data_mut().chunks_mut(k * k).enumerate() {
        project_slice(slice, k).map_err(|sum| Error::DegenerateKernel { index, sum })?;
    }
    Ok(())
}

/// Largest constraint violation over every slice of a `[out, in, K, K]`
/// weight tensor.
pub fn weight_tensor_residual<T: Float>(weight: &Tensor<T>) -> Result<f64> {
    let [_, _, k, _] = weight.dims4()?;
    Ok(weight
        .data()
        .chunks(k * k)
        .map(|s| {
            let (a, b) = slice_residuals(s, k);
            a.max(b)
        })
        .fold(0.0, f64::max))
}

/// One output filter of a constrained convolution: an odd `size × size`
/// slice per input channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedKernel {
    in_channels: usize,
    size: usize,
    weights: Vec<f64>,
}

impl ConstrainedKernel {
    pub fn new(in_channels: usize, size: usize, weights: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::BadGeometry(format!("kernel side must be odd, got {size}")));
        }
        if weights.len() != in_channels * size * size || in_channels == 0 {
            return Err(Error::BadGeometry(format!(
                "{} weights for {in_channels} channels of {size}x{size}",
                weights.len()
            )));
        }
        Ok(Self { in_channels, size, weights })
    }

    /// Single-channel kernel from a square matrix.
    pub fn from_matrix(size: usize, weights: Vec<f64>) -> Result<Self> {
        Self::new(1, size, weights)
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Slice for one input channel.
    pub fn slice(&self, channel: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.weights[channel * n..(channel + 1) * n]
    }

    pub fn project_in_place(&mut self) -> Result<()> {
        let n = self.size * self.size;
        for (index, s) in self.weights.chunks_mut(n).enumerate() {
            project_slice(s, self.size).map_err(|sum| Error::DegenerateKernel { index, sum })?;
        }
        Ok(())
    }

    /// Largest violation of `center = −1` / `Σ others = 1` over the slices.
    pub fn constraint_residual(&self) -> f64 {
        self.weights
            .chunks(self.size * self.size)
            .map(|s| {
                let (a, b) = slice_residuals(s, self.size);
                a.max(b)
            })
            .fold(0.0, f64::max)
    }

    pub fn satisfies_constraint(&self, tol: f64) -> bool {
        self.constraint_residual() <= tol
    }
}

/// Returns the projected copy of `kernel`. Idempotent.
pub fn project_constrained_kernel(kernel: &ConstrainedKernel) -> Result<ConstrainedKernel> {
    let mut k = kernel.clone();
    k.project_in_place()?;
    Ok(k)
}

fn bank_tensor<T: Float>(bank: &[ConstrainedKernel]) -> Result<Tensor<T>> {
    let first = bank.first().ok_or(Error::EmptyInput("constrained kernel bank"))?;
    let (cin, k) = (first.in_channels, first.size);
    if bank.iter().any(|b| b.in_channels != cin || b.size != k) {
        return Err(Error::BadGeometry("kernels in a bank must share channel count and size".into()));
    }
    let data = bank.iter().flat_map(|b| b.weights.iter().map(|&v| T::lit(v))).collect();
    Ok(Tensor::from_vec(&[bank.len(), cin, k, k], data)?)
}

/// Same-size constrained convolution; one output channel per kernel.
pub fn bayar_forward<T: Float>(x: &Tensor<T>, bank: &[ConstrainedKernel]) -> Result<Tensor<T>> {
    let weight = bank_tensor::<T>(bank)?;
    let [_, c, _, _] = x.dims4()?;
    if c != bank[0].in_channels {
        return Err(Error::Tensor(dualtrace_tensor::TensorError::shape(
            "bayar_forward",
            format!("input has {c} channels, kernels expect {}", bank[0].in_channels),
        )));
    }
    replicate_conv(x, &weight)
}

fn replicate_conv<T: Float>(x: &Tensor<T>, weight: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, k, _] = weight.dims4()?;
    let padded = pad_replicate(x, k / 2)?;
    Ok(conv2d(&padded, weight, None, Conv2dSpec::default())?)
}

/// Tape version of a replicate-padded, same-size convolution.
pub fn replicate_conv_var<T: Float>(g: &Graph<T>, x: Var, weight: Var, groups: usize) -> Result<Var> {
    let k = g.shape(weight)[2];
    let padded = g.pad_replicate(x, k / 2)?;
    Ok(g.conv2d(padded, weight, None, Conv2dSpec::default().groups(groups))?)
}

/// A fixed high-pass residual filter: integer taps and their divisor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrmKernel {
    pub name: String,
    pub size: usize,
    pub taps: Vec<i32>,
    pub divisor: f64,
}

impl SrmKernel {
    pub fn weights(&self) -> Vec<f64> {
        self.taps.iter().map(|&t| t as f64 / self.divisor).collect()
    }

    /// Taps zero-padded (centered) to `size × size`.
    pub fn padded_weights(&self, size: usize) -> Vec<f64> {
        let off = (size - self.size) / 2;
        let w = self.weights();
        let mut out = vec![0.0; size * size];
        for y in 0..self.size {
            for x in 0..self.size {
                out[(y + off) * size + x + off] = w[y * self.size + x];
            }
        }
        out
    }
}

/// Fixed residual filter bank with output truncation `[-t, t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrmBank {
    pub kernels: Vec<SrmKernel>,
    pub truncation: f64,
}

impl SrmBank {
    /// The three residual predictors commonly used as a learned model's
    /// input layer: horizontal second difference (1/2), the 3×3 "KB"
    /// kernel (1/4) and the 5×5 "KV" kernel (1/12).
    pub fn standard(truncation: f64) -> Self {
        #[rustfmt::skip]
        let kernels = vec![
            SrmKernel { name: "horizontal_1x3".into(), size: 3, divisor: 2.0, taps: vec![
                0, 0, 0,
                1, -2, 1,
                0, 0, 0,
            ] },
            SrmKernel { name: "kb_3x3".into(), size: 3, divisor: 4.0, taps: vec![
                -1, 2, -1,
                2, -4, 2,
                -1, 2, -1,
            ] },
            SrmKernel { name: "kv_5x5".into(), size: 5, divisor: 12.0, taps: vec![
                -1, 2, -2, 2, -1,
                2, -6, 8, -6, 2,
                -2, 8, -12, 8, -2,
                2, -6, 8, -6, 2,
                -1, 2, -2, 2, -1,
            ] },
        ];
        Self { kernels, truncation }
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels.iter().map(|k| k.size).max().unwrap_or(1)
    }

    /// `[kernels, in_channels, K, K]`; each kernel is replicated across the
    /// input channels, so each output sums the residual of every channel.
    pub fn weight_tensor<T: Float>(&self, in_channels: usize) -> Tensor<T> {
        let k = self.kernel_size();
        let mut data = Vec::with_capacity(self.kernels.len() * in_channels * k * k);
        for kern in &self.kernels {
            let w = kern.padded_weights(k);
            for _ in 0..in_channels {
                data.extend(w.iter().map(|&v| T::lit(v)));
            }
        }
        Tensor::from_vec(&[self.kernels.len(), in_channels, k, k], data).expect("sized above")
    }
}

/// Residual maps clamped to `[-t, t]`.
pub fn srm_forward<T: Float>(x: &Tensor<T>, bank: &SrmBank) -> Result<Tensor<T>> {
    let [_, c, _, _] = x.dims4()?;
    let weight = bank.weight_tensor::<T>(c);
    let t = T::lit(bank.truncation);
    Ok(replicate_conv(x, &weight)?.map(|v| v.max(-t).min(t)))
}

/// First-derivative masks; `gx` responds positively to left-dark /
/// right-bright transitions and `gy` to top-dark / bottom-bright ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SobelPair {
    pub gx: [[i32; 3]; 3],
    pub gy: [[i32; 3]; 3],
}

impl SobelPair {
    pub const STANDARD: SobelPair = SobelPair {
        gx: [[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]],
        gy: [[-1, -2, -1], [0, 0, 0], [1, 2, 1]],
    };

    /// Depthwise weight `[channels, 1, 3, 3]` for one of the masks.
    pub fn depthwise<T: Float>(mask: &[[i32; 3]; 3], channels: usize) -> Tensor<T> {
        let flat: Vec<T> = mask.iter().flatten().map(|&v| T::lit(v as f64)).collect();
        Tensor::from_fn(&[channels, 1, 3, 3], |i| flat[i % 9])
    }
}

/// Per-channel Sobel responses and gradient magnitude `sqrt(gx² + gy²)`.
pub fn sobel_gradients<T: Float>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let [_, c, h, w] = x.dims4()?;
    if x.numel() == 0 || h == 0 || w == 0 {
        return Err(Error::EmptyInput("sobel input"));
    }
    let padded = pad_replicate(x, 1)?;
    let spec = Conv2dSpec::default().groups(c);
    let gx = conv2d(&padded, &SobelPair::depthwise(&SobelPair::STANDARD.gx, c), None, spec)?;
    let gy = conv2d(&padded, &SobelPair::depthwise(&SobelPair::STANDARD.gy, c), None, spec)?;
    let mag = gx.zip_map(&gy, |a, b| (a * a + b * b).sqrt())?;
    Ok((gx, gy, mag))
}

/// Tape version of the Sobel magnitude. The gradient at zero magnitude is
/// taken as zero.
pub fn sobel_magnitude_var<T: Float>(g: &Graph<T>, x: Var) -> Result<Var> {
    let shape = g.shape(x);
    if shape.len() != 4 {
        return Err(Error::BadGeometry(format!("sobel expects NCHW input, got {shape:?}")));
    }
    let c = shape[1];
    let wx = g.constant(SobelPair::depthwise(&SobelPair::STANDARD.gx, c));
    let wy = g.constant(SobelPair::depthwise(&SobelPair::STANDARD.gy, c));
    let gx = replicate_conv_var(g, x, wx, c)?;
    let gy = replicate_conv_var(g, x, wy, c)?;
    let (gxv, gyv) = (g.value(gx), g.value(gy));
    let mag = gxv.zip_map(&gyv, |a, b| (a * a + b * b).sqrt())?;
    let magv = mag.clone();
    Ok(g.custom(&[gx, gy], mag, move |grad, _| {
        let scale = |d: &Tensor<T>| {
            Tensor::from_fn(d.shape(), |i| {
                let m = magv.data()[i];
                if m > T::zero() {
                    grad.data()[i] * d.data()[i] / m
                } else {
                    T::zero()
                }
            })
        };
        vec![Some(scale(&gxv)), Some(scale(&gyv))]
    }))
}

/// Plain-text listing of a square matrix, one row per line.
pub fn format_matrix(name: &str, size: usize, weights: &[f64]) -> String {
    let mut s = format!("{name} ({size}x{size})\n");
    for row in weights.chunks(size) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>10.5}")).collect();
        let _ = writeln!(s, "  [{}]", cells.join(" "));
    }
    s
}
