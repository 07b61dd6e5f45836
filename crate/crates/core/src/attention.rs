//! Feature Enhancement (noise branch) and Edge Extraction (RGB branch)
//! blocks, plus the learned fusion of per-stage edge logits.

use dualtrace_tensor::nn::{BatchNorm2d, Conv2d, Forward};
use dualtrace_tensor::{Conv2dSpec, Float, ParamStore, TensorError, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttentionConfig {
    pub reduce_ratio: usize,
    pub dilation: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self { reduce_ratio: 4, dilation: 2 }
    }
}

fn check_channels(f: &Forward<'_, impl Float>, x: Var, expected: usize, op: &'static str) -> Result<Vec<usize>> {
    let shape = f.graph.shape(x);
    if shape.len() != 4 || shape[1] != expected {
        return Err(Error::Tensor(TensorError::shape(op, format!("expected {expected} channels, got {shape:?}"))));
    }
    Ok(shape)
}

fn pointwise<T: Float>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Conv2d> {
    Ok(Conv2d::new(store, name, cin, cout, 1, Conv2dSpec::default(), true, rng)?)
}

/// Spatial path (1×1 reduce → dilated 3×3 → 1×1 restore → BN) and channel
/// path (GAP → two-layer MLP → BN) summed into a sigmoid gate `M`; the
/// output is `F + F ⊙ M`.
#[derive(Clone, Debug)]
pub struct FeatureEnhance {
    pub channels: usize,
    pub spatial_reduce: Conv2d,
    pub spatial_dilated: Conv2d,
    pub spatial_restore: Conv2d,
    pub spatial_norm: BatchNorm2d,
    pub mlp_reduce: Conv2d,
    pub mlp_restore: Conv2d,
    pub channel_norm: BatchNorm2d,
}

impl FeatureEnhance {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        config: AttentionConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let r = config.reduce_ratio;
        if r == 0 || channels % r != 0 {
            return Err(Error::BadChannels { channels, divisor: r });
        }
        if config.dilation == 0 {
            return Err(Error::Config("dilation must be positive".into()));
        }
        let hidden = channels / r;
        let d = config.dilation;
        let dilated = Conv2dSpec::default().padding(d).dilation(d);
        Ok(Self {
            channels,
            spatial_reduce: pointwise(store, &format!("{name}.spatial.reduce"), channels, hidden, rng)?,
            spatial_dilated: Conv2d::new(store, &format!("{name}.spatial.dilated"), hidden, hidden, 3, dilated, true, rng)?,
            spatial_restore: pointwise(store, &format!("{name}.spatial.restore"), hidden, channels, rng)?,
            spatial_norm: BatchNorm2d::new(store, &format!("{name}.spatial.bn"), channels)?,
            mlp_reduce: pointwise(store, &format!("{name}.channel.fc1"), channels, hidden, rng)?,
            mlp_restore: pointwise(store, &format!("{name}.channel.fc2"), hidden, channels, rng)?,
            channel_norm: BatchNorm2d::new(store, &format!("{name}.channel.bn"), channels)?,
        })
    }

    /// The gate `M` in `(0, 1)`, same shape as the input.
    pub fn gate<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = check_channels(f, x, self.channels, "feature_enhance")?;
        let g = f.graph;
        let s = self.spatial_reduce.forward(f, x)?;
        let s = self.spatial_dilated.forward(f, s)?;
        let s = self.spatial_restore.forward(f, s)?;
        let m1 = self.spatial_norm.forward(f, s)?;

        let c = g.global_avg_pool(x)?;
        let c = self.mlp_reduce.forward(f, c)?;
        let c = g.relu(c);
        let c = self.mlp_restore.forward(f, c)?;
        let c = self.channel_norm.forward(f, c)?;
        let m2 = g.expand(c, &shape)?;

        let logits = g.add(m1, m2)?;
        Ok(g.sigmoid(logits))
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let m = self.gate(f, x)?;
        let fm = f.graph.mul(x, m)?;
        Ok(f.graph.add(x, fm)?)
    }
}

/// Edge Extraction Block: 1×1 reduction to a quarter of the channels, a
/// residual ReLU→BN→3×3 stack producing the attention `M(f)`, the product
/// of the reduced features with `M(f)`, and a 1×1 head to one edge logit.
#[derive(Clone, Debug)]
pub struct EdgeBlock {
    pub in_channels: usize,
    pub reduce: Conv2d,
    pub norm1: BatchNorm2d,
    pub conv1: Conv2d,
    pub norm2: BatchNorm2d,
    pub conv2: Conv2d,
    pub project: Conv2d,
    pub head: Conv2d,
}

/// Output of [`EdgeBlock::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EdgeOutput {
    pub edge_logit: Var,
    pub attention: Var,
}

impl EdgeBlock {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, in_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if in_channels == 0 || in_channels % 4 != 0 {
            return Err(Error::BadChannels { channels: in_channels, divisor: 4 });
        }
        let c = in_channels / 4;
        let same3 = Conv2dSpec::same(3);
        Ok(Self {
            in_channels,
            reduce: pointwise(store, &format!("{name}.reduce"), in_channels, c, rng)?,
            norm1: BatchNorm2d::new(store, &format!("{name}.bn1"), c)?,
            conv1: Conv2d::new(store, &format!("{name}.conv1"), c, c, 3, same3, true, rng)?,
            norm2: BatchNorm2d::new(store, &format!("{name}.bn2"), c)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), c, c, 3, same3, true, rng)?,
            project: pointwise(store, &format!("{name}.project"), c, c, rng)?,
            head: pointwise(store, &format!("{name}.head"), c, 1, rng)?,
        })
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<EdgeOutput> {
        let shape = f.graph.shape(x);
        if shape.len() == 4 && shape[1] % 4 != 0 {
            return Err(Error::BadChannels { channels: shape[1], divisor: 4 });
        }
        check_channels(f, x, self.in_channels, "edge_extract")?;
        let g = f.graph;
        let r = self.reduce.forward(f, x)?;
        let h = g.relu(r);
        let h = self.norm1.forward(f, h)?;
        let h = self.conv1.forward(f, h)?;
        let h = g.relu(h);
        let h = self.norm2.forward(f, h)?;
        let h = self.conv2.forward(f, h)?;
        let h = self.project.forward(f, h)?;
        let attention = g.add(h, r)?;
        let enhanced = g.mul(r, attention)?;
        let edge_logit = self.head.forward(f, enhanced)?;
        Ok(EdgeOutput { edge_logit, attention })
    }
}

/// Upsamples single-channel edge logits to the input size, concatenates
/// them and merges with a learned 1×1 convolution.
#[derive(Clone, Debug)]
pub struct EdgeFusion {
    pub levels: usize,
    pub merge: Conv2d,
}

impl EdgeFusion {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, levels: usize, rng: &mut impl Rng) -> Result<Self> {
        if levels == 0 {
            return Err(Error::EmptyInput("edge levels"));
        }
        Ok(Self { levels, merge: pointwise(store, name, levels, 1, rng)? })
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, edges: &[Var], height: usize, width: usize) -> Result<Var> {
        if edges.is_empty() {
            return Err(Error::EmptyInput("edge logits"));
        }
        if edges.len() != self.levels {
            return Err(Error::Tensor(TensorError::shape(
                "fuse_multiscale_edges",
                format!("{} levels given, fusion expects {}", edges.len(), self.levels),
            )));
        }
        let up = edges
            .iter()
            .map(|&e| {
                check_channels(f, e, 1, "fuse_multiscale_edges")?;
                Ok(f.graph.resize_bilinear(e, height, width)?)
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = f.graph.concat_channels(&up)?;
        Ok(self.merge.forward(f, cat)?)
    }
}
