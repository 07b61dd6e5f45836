//! Compact ConvNeXt-style hierarchical encoder producing a four-level
//! feature pyramid at strides `s, 2s, 4s, 8s` (`s` = stem stride).

use dualtrace_tensor::nn::{Conv2d, Forward, LayerNorm2d};
use dualtrace_tensor::{Conv2dSpec, ParamStore, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub stage_dims: [usize; 4],
    pub stage_depths: [usize; 4],
    pub dw_kernel: usize,
    pub expansion_ratio: usize,
    pub stem_stride: usize,
    pub in_channels: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_dims: [32, 64, 128, 256],
            stage_depths: [1, 1, 2, 1],
            dw_kernel: 7,
            expansion_ratio: 4,
            stem_stride: 4,
            in_channels: 3,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let d = self.stage_dims;
        if d[0] == 0 || d.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!("stage_dims must be positive and strictly increasing, got {d:?}")));
        }
        if self.dw_kernel % 2 == 0 {
            return Err(Error::Config(format!("dw_kernel must be odd, got {}", self.dw_kernel)));
        }
        if self.expansion_ratio == 0 || self.stem_stride == 0 || self.in_channels == 0 {
            return Err(Error::Config("expansion_ratio, stem_stride and in_channels must be positive".into()));
        }
        Ok(())
    }

    /// Total downsampling factor of the deepest level.
    pub fn total_stride(&self) -> usize {
        self.stem_stride * 8
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let s = self.total_stride();
        if h == 0 || w == 0 || h % s != 0 || w % s != 0 {
            return Err(Error::BadGeometry(format!("input {h}x{w} is not a positive multiple of {s}")));
        }
        Ok(())
    }
}

/// Depthwise conv → channel layer norm → pointwise expansion → GELU →
/// pointwise projection, added to the input.
#[derive(Clone, Debug)]
pub struct ConvNextBlock {
    pub dw: Conv2d,
    pub norm: LayerNorm2d,
    pub expand: Conv2d,
    pub project: Conv2d,
}

impl ConvNextBlock {
    pub fn new<T: dualtrace_tensor::Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        dw_kernel: usize,
        expansion: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = channels * expansion;
        let dw_spec = Conv2dSpec::same(dw_kernel).groups(channels);
        Ok(Self {
            dw: Conv2d::new(store, &format!("{name}.dw"), channels, channels, dw_kernel, dw_spec, true, rng)?,
            norm: LayerNorm2d::new(store, &format!("{name}.norm"), channels)?,
            expand: Conv2d::new(store, &format!("{name}.pw1"), channels, hidden, 1, Conv2dSpec::default(), true, rng)?,
            project: Conv2d::new(store, &format!("{name}.pw2"), hidden, channels, 1, Conv2dSpec::default(), true, rng)?,
        })
    }

    pub fn forward<T: dualtrace_tensor::Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.graph.shape(x).get(1).copied().unwrap_or(0);
        if c != self.dw.in_channels {
            return Err(Error::Tensor(dualtrace_tensor::TensorError::shape(
                "convnext_block",
                format!("input has {c} channels, block expects {}", self.dw.in_channels),
            )));
        }
        let h = self.dw.forward(f, x)?;
        let h = self.norm.forward(f, h)?;
        let h = self.expand.forward(f, h)?;
        let h = f.graph.gelu(h);
        let h = self.project.forward(f, h)?;
        Ok(f.graph.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    /// Layer norm + 2×2 stride-2 convolution; absent for the first stage.
    down: Option<(LayerNorm2d, Conv2d)>,
    blocks: Vec<ConvNextBlock>,
}

/// Feature maps at four successive strides, shallowest first.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePyramid {
    pub levels: [Var; 4],
}

#[derive(Clone, Debug)]
pub struct Backbone {
    pub config: BackboneConfig,
    stem: Conv2d,
    stem_norm: LayerNorm2d,
    stages: Vec<Stage>,
}

impl Backbone {
    pub fn new<T: dualtrace_tensor::Float>(
        store: &mut ParamStore<T>,
        name: &str,
        config: &BackboneConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let dims = config.stage_dims;
        let s = config.stem_stride;
        let stem_spec = Conv2dSpec::default().stride(s);
        let stem = Conv2d::new(store, &format!("{name}.stem"), config.in_channels, dims[0], s, stem_spec, true, rng)?;
        let stem_norm = LayerNorm2d::new(store, &format!("{name}.stem_norm"), dims[0])?;
        let mut stages = Vec::with_capacity(4);
        for i in 0..4 {
            let down = if i == 0 {
                None
            } else {
                let norm = LayerNorm2d::new(store, &format!("{name}.down{i}.norm"), dims[i - 1])?;
                let spec = Conv2dSpec::default().stride(2);
                let conv = Conv2d::new(store, &format!("{name}.down{i}.conv"), dims[i - 1], dims[i], 2, spec, true, rng)?;
                Some((norm, conv))
            };
            let blocks = (0..config.stage_depths[i])
                .map(|b| {
                    let block_name = format!("{name}.stage{i}.block{b}");
                    ConvNextBlock::new(store, &block_name, dims[i], config.dw_kernel, config.expansion_ratio, rng)
                })
                .collect::<Result<_>>()?;
            stages.push(Stage { down, blocks });
        }
        Ok(Self { config: config.clone(), stem, stem_norm, stages })
    }

    pub fn forward<T: dualtrace_tensor::Float>(&self, f: &Forward<'_, T>, x: Var) -> Result<FeaturePyramid> {
        let shape = f.graph.shape(x);
        if shape.len() != 4 || shape[1] != self.config.in_channels {
            return Err(Error::Tensor(dualtrace_tensor::TensorError::shape(
                "backbone",
                format!("expected N×{}×H×W input, got {shape:?}", self.config.in_channels),
            )));
        }
        self.config.check_input(shape[2], shape[3])?;
        let mut h = self.stem.forward(f, x)?;
        h = self.stem_norm.forward(f, h)?;
        let mut levels = Vec::with_capacity(4);
        for stage in &self.stages {
            if let Some((norm, conv)) = &stage.down {
                h = norm.forward(f, h)?;
                h = conv.forward(f, h)?;
            }
            for block in &stage.blocks {
                h = block.forward(f, h)?;
            }
            levels.push(h);
        }
        Ok(FeaturePyramid { levels: [levels[0], levels[1], levels[2], levels[3]] })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, readout, weighted_sum};
    use dualtrace_tensor::{Graph, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
        readout(shape, seed)
    }

    #[test]
    fn zeroed_block_is_identity() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvNextBlock::new(&mut store, "b", 32, 7, 4, &mut rng).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.get(id).name.clone();
            if !name.ends_with("gamma") {
                let shape = store.value(id).shape().to_vec();
                *store.value_mut(id) = Tensor::zeros(&shape);
            }
        }
        let g = Graph::new();
        let f = Forward::new(&g, &store, false);
        let xv = random(&[1, 32, 16, 16], 1);
        let x = g.constant(xv.clone());
        let y = block.forward(&f, x).unwrap();
        assert_eq!(*g.value(y), xv);
    }

    #[test]
    fn block_preserves_shape_and_rejects_wrong_channels() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let block = ConvNextBlock::new(&mut store, "b", 32, 7, 4, &mut rng).unwrap();
        let g = Graph::new();
        let f = Forward::new(&g, &store, false);
        let y = block.forward(&f, g.constant(Tensor::zeros(&[1, 32, 16, 16]))).unwrap();
        assert_eq!(g.shape(y), vec![1, 32, 16, 16]);
        assert!(block.forward(&f, g.constant(Tensor::zeros(&[1, 16, 16, 16]))).is_err());
    }

    #[test]
    fn block_gradients_match_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = ConvNextBlock::new(&mut store, "b", 8, 3, 4, &mut rng).unwrap();
        // non-trivial affine so LN parameters are exercised
        for name in ["b.norm.gamma", "b.norm.beta", "b.dw.bias", "b.pw1.bias", "b.pw2.bias"] {
            let id = store.id(name).unwrap();
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = random(&shape, id.index() as u64 + 10).map(|v| 0.5 * v + if name.ends_with("gamma") { 1.0 } else { 0.0 });
        }
        let ids: Vec<_> = store.ids().collect();
        let r = readout(&[1, 8, 4, 4], 99);
        let report = check_gradients(&store, &ids, &random(&[1, 8, 4, 4], 5), false, 24, 1e-4, |f, x| {
            let y = block.forward(f, x)?;
            weighted_sum(f.graph, y, &r)
        })
        .unwrap();
        assert!(report.worst <= 1e-3, "{report:?}");
    }

    #[test]
    fn pyramid_shapes_follow_stride_arithmetic() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = BackboneConfig::default();
        let bb = Backbone::new(&mut store, "rgb", &cfg, &mut rng).unwrap();
        let g = Graph::new();
        let f = Forward::new(&g, &store, false);
        let p = bb.forward(&f, g.constant(Tensor::zeros(&[1, 3, 256, 256]))).unwrap();
        let shapes: Vec<Vec<usize>> = p.levels.iter().map(|&v| g.shape(v)).collect();
        assert_eq!(shapes, vec![vec![1, 32, 64, 64], vec![1, 64, 32, 32], vec![1, 128, 16, 16], vec![1, 256, 8, 8]]);

        let p = bb.forward(&f, g.constant(Tensor::zeros(&[2, 3, 64, 64]))).unwrap();
        for (i, &v) in p.levels.iter().enumerate() {
            let s = g.shape(v);
            assert_eq!(s[0], 2);
            assert_eq!(s[2], 16 >> i);
        }
        assert!(matches!(
            bb.forward(&f, g.constant(Tensor::zeros(&[1, 3, 48, 64]))),
            Err(Error::BadGeometry(_))
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let bb = Backbone::new(&mut store, "rgb", &BackboneConfig::default(), &mut rng).unwrap();
        let x: Tensor<f32> = random(&[1, 3, 64, 64], 3).cast();
        let run = || {
            let g = Graph::new();
            let f = Forward::new(&g, &store, false);
            let p = bb.forward(&f, g.constant(x.clone())).unwrap();
            p.levels.map(|v| (*g.value(v)).clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        let mut c = BackboneConfig::default();
        assert!(c.validate().is_ok());
        c.stage_dims = [32, 32, 64, 128];
        assert!(c.validate().is_err());
        let c = BackboneConfig { dw_kernel: 6, ..Default::default() };
        assert!(c.validate().is_err());
    }
}
