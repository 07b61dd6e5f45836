//! The full dual-branch network.
//!
//! Noise branch: constrained (Bayar) and SRM residuals, concatenated, into a
//! backbone whose stages pass through Feature Enhancement. RGB branch: a
//! backbone whose stages feed Sobel-augmented Edge Extraction Blocks. The
//! branch pyramids are added stage by stage and decoded into a mask logit.

use dualtrace_tensor::nn::{Conv2d, Forward, LayerNorm2d};
use dualtrace_tensor::{sigmoid, Conv2dSpec, Float, ParamId, ParamStore, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionConfig, EdgeBlock, EdgeFusion, FeatureEnhance};
use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::filters::{project_weight_tensor, replicate_conv_var, sobel_magnitude_var, weight_tensor_residual, SrmBank};
use crate::metrics::check_threshold;

pub const BAYAR_WEIGHT: &str = "noise.bayar.weight";
pub const SRM_WEIGHT: &str = "noise.srm.weight";

/// Structural switches for the ablation cases: A drops the edge loss, B the
/// Feature Enhancement modules, C the noise branch, D the RGB branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_edge_loss: bool,
    pub use_fe: bool,
    pub use_noise_branch: bool,
    pub use_rgb_branch: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { use_edge_loss: true, use_fe: true, use_noise_branch: true, use_rgb_branch: true }
    }
}

impl Ablation {
    /// Named case `"full"`, `"A"`, `"B"`, `"C"` or `"D"`.
    pub fn case(name: &str) -> Result<Self> {
        let full = Self::default();
        Ok(match name.to_ascii_uppercase().as_str() {
            "FULL" => full,
            "A" => Self { use_edge_loss: false, ..full },
            "B" => Self { use_fe: false, ..full },
            "C" => Self { use_noise_branch: false, ..full },
            "D" => Self { use_rgb_branch: false, ..full },
            _ => return Err(Error::Config(format!("unknown ablation case `{name}`"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Number of constrained kernels.
    pub bayar_kernels: usize,
    pub bayar_size: usize,
    pub srm_truncation: f64,
    /// Factor mapping `[0, 1]` images to the range the residual filters
    /// expect.
    pub pixel_scale: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { bayar_kernels: 3, bayar_size: 5, srm_truncation: 2.0, pixel_scale: 255.0 }
    }
}

impl NoiseConfig {
    pub fn channels(&self) -> usize {
        self.bayar_kernels + SrmBank::standard(self.srm_truncation).kernels.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub rgb_backbone: BackboneConfig,
    pub noise_backbone: BackboneConfig,
    pub attention: AttentionConfig,
    pub noise: NoiseConfig,
    pub decoder_dims: [usize; 3],
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let noise = NoiseConfig::default();
        Self {
            rgb_backbone: BackboneConfig::default(),
            noise_backbone: BackboneConfig { in_channels: noise.channels(), ..BackboneConfig::default() },
            attention: AttentionConfig::default(),
            noise,
            decoder_dims: [128, 64, 32],
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let a = self.ablation;
        if !a.use_noise_branch && !a.use_rgb_branch {
            return Err(Error::Config("at least one branch must be enabled".into()));
        }
        self.rgb_backbone.validate()?;
        self.noise_backbone.validate()?;
        if self.rgb_backbone.in_channels != 3 {
            return Err(Error::Config("the RGB backbone takes 3 input channels".into()));
        }
        if self.noise_backbone.in_channels != self.noise.channels() {
            return Err(Error::Config(format!(
                "the noise backbone takes {} input channels (constrained + SRM)",
                self.noise.channels()
            )));
        }
        if self.rgb_backbone.stage_dims != self.noise_backbone.stage_dims
            || self.rgb_backbone.stem_stride != self.noise_backbone.stem_stride
        {
            return Err(Error::Config("branch backbones must share stage_dims and stem_stride for fusion".into()));
        }
        if self.noise.bayar_kernels == 0 || self.noise.bayar_size % 2 == 0 {
            return Err(Error::Config("constrained layer needs at least one odd-sized kernel".into()));
        }
        if !(self.noise.pixel_scale > 0.0 && self.noise.srm_truncation > 0.0) {
            return Err(Error::Config("pixel_scale and srm_truncation must be positive".into()));
        }
        if self.decoder_dims.contains(&0) {
            return Err(Error::Config("decoder widths must be positive".into()));
        }
        Ok(())
    }

    pub fn total_stride(&self) -> usize {
        self.rgb_backbone.total_stride()
    }
}

#[derive(Clone, Debug)]
struct RgbBranch {
    backbone: Backbone,
    edges: Vec<EdgeBlock>,
    fusion: EdgeFusion,
}

#[derive(Clone, Debug)]
struct NoiseBranch {
    bayar: ParamId,
    srm: ParamId,
    backbone: Backbone,
    enhance: Vec<FeatureEnhance>,
}

#[derive(Clone, Debug)]
struct DecoderStage {
    conv: Conv2d,
    norm: LayerNorm2d,
    lateral: Option<Conv2d>,
}

/// Logits produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub mask_logit: Var,
    /// Fused edge logit at input resolution; absent when the RGB branch is
    /// disabled.
    pub edge_logit: Option<Var>,
    pub stage_edges: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    rgb: Option<RgbBranch>,
    noise: Option<NoiseBranch>,
    decoder: Vec<DecoderStage>,
    head: Conv2d,
}

/// Bayar kernels start from `U(0, 1)` so the first projection yields a
/// smooth positive predictor minus the center pixel.
pub fn init_constrained<T: Float>(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<T>> {
    let mut w = Tensor::from_fn(shape, |_| T::lit(rng.random_range(0.0..1.0)));
    project_weight_tensor(&mut w)?;
    Ok(w)
}

impl Model {
    pub fn new<T: Float>(config: &ModelConfig, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let a = config.ablation;
        let dims = config.rgb_backbone.stage_dims;

        let rgb = if a.use_rgb_branch {
            let backbone = Backbone::new(store, "rgb.backbone", &config.rgb_backbone, rng)?;
            let edges = (0..4)
                .map(|i| EdgeBlock::new(store, &format!("rgb.eeb{i}"), 2 * dims[i], rng))
                .collect::<Result<_>>()?;
            let fusion = EdgeFusion::new(store, "rgb.edge_fuse", 4, rng)?;
            Some(RgbBranch { backbone, edges, fusion })
        } else {
            None
        };

        let noise = if a.use_noise_branch {
            let n = &config.noise;
            let shape = [n.bayar_kernels, 3, n.bayar_size, n.bayar_size];
            let bayar = store.insert(BAYAR_WEIGHT, init_constrained(&shape, rng)?, true)?;
            let srm_bank = SrmBank::standard(n.srm_truncation);
            let srm = store.insert(SRM_WEIGHT, srm_bank.weight_tensor(3), false)?;
            let backbone = Backbone::new(store, "noise.backbone", &config.noise_backbone, rng)?;
            let enhance = if a.use_fe {
                (0..4)
                    .map(|i| FeatureEnhance::new(store, &format!("noise.fe{i}"), dims[i], config.attention, rng))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            Some(NoiseBranch { bayar, srm, backbone, enhance })
        } else {
            None
        };

        let mut decoder = Vec::with_capacity(3);
        let mut cin = dims[3];
        for (i, &width) in config.decoder_dims.iter().enumerate() {
            let skip = dims[2 - i];
            let conv = Conv2d::new(store, &format!("decoder.up{i}.conv"), cin, width, 3, Conv2dSpec::same(3), true, rng)?;
            let norm = LayerNorm2d::new(store, &format!("decoder.up{i}.norm"), width)?;
            let lateral = if width != skip {
                let spec = Conv2dSpec::default();
                Some(Conv2d::new(store, &format!("decoder.up{i}.lateral"), skip, width, 1, spec, true, rng)?)
            } else {
                None
            };
            decoder.push(DecoderStage { conv, norm, lateral });
            cin = width;
        }
        let head = Conv2d::new(store, "decoder.head", cin, 1, 1, Conv2dSpec::default(), true, rng)?;
        Ok(Self { config: config.clone(), rgb, noise, decoder, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Copy of this model with some parts switched off. Parts that were not
    /// built cannot be switched on.
    pub fn with_ablation(&self, ablation: Ablation) -> Result<Self> {
        let mut m = self.clone();
        let now = self.config.ablation;
        let enabling = (ablation.use_fe && !now.use_fe)
            || (ablation.use_noise_branch && !now.use_noise_branch)
            || (ablation.use_rgb_branch && !now.use_rgb_branch);
        if enabling {
            return Err(Error::Config("cannot enable a part the model was built without".into()));
        }
        m.config.ablation = ablation;
        m.config.validate()?;
        if !ablation.use_rgb_branch {
            m.rgb = None;
        }
        if !ablation.use_noise_branch {
            m.noise = None;
        }
        if let (false, Some(n)) = (ablation.use_fe, m.noise.as_mut()) {
            n.enhance.clear();
        }
        Ok(m)
    }

    /// Id of the constrained weight tensor, when the noise branch exists.
    pub fn constrained_weight(&self) -> Option<ParamId> {
        self.noise.as_ref().map(|n| n.bayar)
    }

    pub fn srm_weight(&self) -> Option<ParamId> {
        self.noise.as_ref().map(|n| n.srm)
    }

    /// Re-imposes the constraint on every constrained kernel. A slice whose
    /// non-center weights collapse is re-initialized and projected again.
    /// Returns the number of re-initialized slices.
    pub fn project_constraints<T: Float>(&self, store: &mut ParamStore<T>, rng: &mut impl Rng) -> Result<usize> {
        let Some(id) = self.constrained_weight() else { return Ok(0) };
        let mut reinit = 0;
        loop {
            match project_weight_tensor(store.value_mut(id)) {
                Ok(()) => return Ok(reinit),
                Err(Error::DegenerateKernel { index, .. }) => {
                    let k = self.config.noise.bayar_size;
                    let fresh = init_constrained::<T>(&[1, 1, k, k], rng)?;
                    store.value_mut(id).data_mut()[index * k * k..(index + 1) * k * k].copy_from_slice(fresh.data());
                    reinit += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Largest constraint violation over the constrained kernels.
    pub fn constraint_residual<T: Float>(&self, store: &ParamStore<T>) -> Result<f64> {
        match self.constrained_weight() {
            Some(id) => weight_tensor_residual(store.value(id)),
            None => Ok(0.0),
        }
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::BadGeometry(format!("expected an N×3×H×W image batch, got {shape:?}")));
        }
        self.config.rgb_backbone.check_input(shape[2], shape[3])
    }

    fn noise_features<T: Float>(&self, f: &Forward<'_, T>, n: &NoiseBranch, image: Var) -> Result<[Var; 4]> {
        let g = f.graph;
        let scaled = g.scale(image, T::lit(self.config.noise.pixel_scale));
        let bayar = replicate_conv_var(g, scaled, f.param(n.bayar), 1)?;
        let srm_w = g.constant(f.params.value(n.srm).clone());
        let srm = replicate_conv_var(g, scaled, srm_w, 1)?;
        let t = T::lit(self.config.noise.srm_truncation);
        let srm = g.clamp(srm, -t, t);
        let input = g.concat_channels(&[bayar, srm])?;
        let mut levels = n.backbone.forward(f, input)?.levels;
        for (level, fe) in levels.iter_mut().zip(&n.enhance) {
            *level = fe.forward(f, *level)?;
        }
        Ok(levels)
    }

    pub fn forward<T: Float>(&self, f: &Forward<'_, T>, image: Var) -> Result<ModelOutput> {
        let shape = f.graph.shape(image);
        self.check_input(&shape)?;
        let (h, w) = (shape[2], shape[3]);
        let g = f.graph;

        let mut stage_edges = Vec::new();
        let mut edge_logit = None;
        let rgb_levels = match &self.rgb {
            Some(r) => {
                let centered = g.add_scalar(image, T::lit(-0.5));
                let levels = r.backbone.forward(f, centered)?.levels;
                for (level, block) in levels.iter().zip(&r.edges) {
                    let mag = sobel_magnitude_var(g, *level)?;
                    let input = g.concat_channels(&[*level, mag])?;
                    stage_edges.push(block.forward(f, input)?.edge_logit);
                }
                edge_logit = Some(r.fusion.forward(f, &stage_edges, h, w)?);
                Some(levels)
            }
            None => None,
        };
        let noise_levels = match &self.noise {
            Some(n) => Some(self.noise_features(f, n, image)?),
            None => None,
        };
        let fused: [Var; 4] = match (rgb_levels, noise_levels) {
            (Some(r), Some(n)) => {
                let mut out = r;
                for (o, nv) in out.iter_mut().zip(n) {
                    *o = g.add(*o, nv)?;
                }
                out
            }
            (Some(r), None) => r,
            (None, Some(n)) => n,
            (None, None) => unreachable!("validated: one branch is enabled"),
        };

        let mut x = fused[3];
        for (i, stage) in self.decoder.iter().enumerate() {
            let skip = fused[2 - i];
            let sh = g.shape(skip);
            x = g.resize_bilinear(x, sh[2], sh[3])?;
            x = stage.conv.forward(f, x)?;
            x = stage.norm.forward(f, x)?;
            x = g.gelu(x);
            let skip = match &stage.lateral {
                Some(l) => l.forward(f, skip)?,
                None => skip,
            };
            x = g.add(x, skip)?;
        }
        let logit = self.head.forward(f, x)?;
        let mask_logit = g.resize_bilinear(logit, h, w)?;
        Ok(ModelOutput { mask_logit, edge_logit, stage_edges })
    }

    /// Mask probabilities `[N, 1, H, W]` in inference mode.
    pub fn predict_proba<T: Float>(&self, store: &ParamStore<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let g = dualtrace_tensor::Graph::new();
        let f = Forward::new(&g, store, false);
        let x = g.constant(image.clone());
        let out = self.forward(&f, x)?;
        Ok(g.value(out.mask_logit).map(sigmoid))
    }
}

/// Trained model plus weights, as needed for mask prediction.
pub struct Predictor<'a, T: Float> {
    pub model: &'a Model,
    pub store: &'a ParamStore<T>,
}

/// Binary `H × W` masks for every image in the batch, row-major.
pub fn predict_mask<T: Float>(trained: Option<Predictor<'_, T>>, image: &Tensor<T>, threshold: f64) -> Result<Vec<Vec<u8>>> {
    check_threshold(threshold)?;
    let p = trained.ok_or(Error::NoCheckpoint)?;
    let prob = p.model.predict_proba(p.store, image)?;
    Ok(mask_from_logit_probs(&prob, threshold))
}

fn mask_from_logit_probs<T: Float>(prob: &Tensor<T>, threshold: f64) -> Vec<Vec<u8>> {
    let [n, _, h, w] = prob.dims4().expect("model output is 4-D");
    (0..n).map(|i| prob.plane(i, 0)[..h * w].iter().map(|p| u8::from(p.as_f64() >= threshold)).collect()).collect()
}

/// Thresholds raw mask logits (sigmoid first).
pub fn mask_from_logits(logits: &Tensor<f64>, threshold: f64) -> Result<Vec<Vec<u8>>> {
    check_threshold(threshold)?;
    Ok(mask_from_logit_probs(&logits.map(sigmoid), threshold))
}
