//! Binary cross-entropy, focal and Dice losses.
//!
//! Training uses the logit-domain tape operations, which apply a stable
//! sigmoid internally and accumulate in f64. The probability-domain
//! functions clamp their input to `[1e-7, 1 - 1e-7]` and serve evaluation
//! and reference checks.

use dualtrace_tensor::{sigmoid, Float, Graph, Tensor, TensorError, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub bce: f64,
    pub focal: f64,
    pub edge: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { bce: 1.0, focal: 1.0, edge: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub dice_smooth: f64,
    pub weights: LossWeights,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { focal_alpha: 0.25, focal_gamma: 2.0, dice_smooth: 1.0, weights: LossWeights::default() }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_focal(self.focal_alpha, self.focal_gamma)?;
        if !(self.dice_smooth > 0.0) {
            return Err(Error::InvalidHyper(format!("dice_smooth must be positive, got {}", self.dice_smooth)));
        }
        let w = self.weights;
        if [w.bce, w.focal, w.edge].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidHyper(format!("loss weights must be finite and non-negative, got {w:?}")));
        }
        Ok(())
    }
}

fn check_focal(alpha: f64, gamma: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidHyper(format!("focal alpha must lie in (0, 1), got {alpha}")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidHyper(format!("focal gamma must be non-negative, got {gamma}")));
    }
    Ok(())
}

fn check_pair<A: Float, B: Float>(op: &'static str, pred: &Tensor<A>, gt: &Tensor<B>) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Tensor(TensorError::shape(op, format!("{:?} vs {:?}", pred.shape(), gt.shape()))));
    }
    if pred.numel() == 0 {
        return Err(Error::EmptyInput("loss input"));
    }
    Ok(())
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean of `−(G log P + (1 − G) log(1 − P))`.
pub fn bce_loss(pred: &Tensor<f64>, gt: &Tensor<f64>) -> Result<f64> {
    check_pair("bce_loss", pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// Mean of `−(α (1 − p)^γ y log p + (1 − α) p^γ (1 − y) log(1 − p))`.
pub fn focal_loss(pred: &Tensor<f64>, gt: &Tensor<f64>, alpha: f64, gamma: f64) -> Result<f64> {
    check_focal(alpha, gamma)?;
    check_pair("focal_loss", pred, gt)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(alpha * (1.0 - p).powf(gamma) * y * p.ln() + (1.0 - alpha) * p.powf(gamma) * (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / pred.numel() as f64)
}

/// `1 − (2 Σ P G + s) / (Σ P + Σ G + s)`, pooled over the whole tensor.
pub fn dice_edge_loss(pred: &Tensor<f64>, gt: &Tensor<f64>, smooth: f64) -> Result<f64> {
    check_pair("dice_edge_loss", pred, gt)?;
    if !(smooth > 0.0) {
        return Err(Error::InvalidHyper(format!("dice smooth must be positive, got {smooth}")));
    }
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        inter += p * g;
        sp += p;
        sg += g;
    }
    Ok(1.0 - (2.0 * inter + smooth) / (sp + sg + smooth))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logit_inputs<T: Float>(g: &Graph<T>, op: &'static str, logits: Var, gt: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>, Vec<usize>)> {
    let z = g.value(logits);
    check_pair(op, &z, gt)?;
    Ok((
        z.data().iter().map(|v| v.as_f64()).collect(),
        gt.data().iter().map(|v| v.as_f64()).collect(),
        z.shape().to_vec(),
    ))
}

/// Records a scalar loss whose gradient w.r.t. the logits is `grad`.
fn scalar_loss<T: Float>(g: &Graph<T>, logits: Var, value: f64, grad: Vec<f64>, shape: Vec<usize>) -> Var {
    g.custom(&[logits], Tensor::scalar(T::lit(value)), move |upstream, _| {
        let u = upstream.data()[0].as_f64();
        let data = grad.iter().map(|&d| T::lit(d * u)).collect();
        vec![Some(Tensor::from_vec(&shape, data).expect("gradient has the logit shape"))]
    })
}

/// Mean binary cross-entropy on logits: `softplus(z) − y z`.
pub fn bce_with_logits<T: Float>(g: &Graph<T>, logits: Var, gt: &Tensor<T>) -> Result<Var> {
    let (z, y, shape) = logit_inputs(g, "bce_with_logits", logits, gt)?;
    let n = z.len() as f64;
    let value = z.iter().zip(&y).map(|(&z, &y)| softplus(z) - y * z).sum::<f64>() / n;
    let grad = z.iter().zip(&y).map(|(&z, &y)| (sigmoid(z) - y) / n).collect();
    Ok(scalar_loss(g, logits, value, grad, shape))
}

/// Mean focal loss on logits, with `log p = −softplus(−z)` and
/// `log(1 − p) = −softplus(z)`.
pub fn focal_with_logits<T: Float>(g: &Graph<T>, logits: Var, gt: &Tensor<T>, alpha: f64, gamma: f64) -> Result<Var> {
    check_focal(alpha, gamma)?;
    let (z, y, shape) = logit_inputs(g, "focal_with_logits", logits, gt)?;
    let n = z.len() as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(z.len());
    for (&z, &y) in z.iter().zip(&y) {
        let p = sigmoid(z);
        let q = sigmoid(-z);
        let (log_p, log_q) = (-softplus(-z), -softplus(z));
        let (qg, pg) = (q.powf(gamma), p.powf(gamma));
        value += -(alpha * qg * y * log_p + (1.0 - alpha) * pg * (1.0 - y) * log_q);
        let d_pos = alpha * qg * (gamma * p * log_p - q);
        let d_neg = (1.0 - alpha) * pg * (p - gamma * q * log_q);
        grad.push((y * d_pos + (1.0 - y) * d_neg) / n);
    }
    Ok(scalar_loss(g, logits, value / n, grad, shape))
}

/// Dice loss on `σ(z)`, pooled over every element.
pub fn dice_with_logits<T: Float>(g: &Graph<T>, logits: Var, gt: &Tensor<T>, smooth: f64) -> Result<Var> {
    if !(smooth > 0.0) {
        return Err(Error::InvalidHyper(format!("dice smooth must be positive, got {smooth}")));
    }
    let (z, y, shape) = logit_inputs(g, "dice_with_logits", logits, gt)?;
    let p: Vec<f64> = z.iter().map(|&z| sigmoid(z)).collect();
    let (mut inter, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&p, &y) in p.iter().zip(&y) {
        inter += p * y;
        sp += p;
        sg += y;
    }
    let num = 2.0 * inter + smooth;
    let den = sp + sg + smooth;
    let grad = p.iter().zip(&y).map(|(&p, &y)| -(2.0 * y * den - num) / (den * den) * p * (1.0 - p)).collect();
    Ok(scalar_loss(g, logits, 1.0 - num / den, grad, shape))
}

/// Individual loss terms of one evaluation, before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub bce: f64,
    pub focal: f64,
    pub edge: f64,
}

impl LossTerms {
    /// Weighted sum of the terms.
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.bce * self.bce + w.focal * self.focal + w.edge * self.edge
    }
}

/// Weighted sum of BCE and focal on the mask logits plus Dice on the fused
/// edge logits. The edge term is zero when `use_edge_loss` is off or the
/// model produced no edge prediction.
#[allow(clippy::too_many_arguments)]
pub fn combined_loss<T: Float>(
    g: &Graph<T>,
    mask_logit: Var,
    edge_logit: Option<Var>,
    gt_mask: &Tensor<T>,
    gt_edge: &Tensor<T>,
    config: &LossConfig,
    use_edge_loss: bool,
) -> Result<(Var, LossTerms)> {
    config.validate()?;
    let w = config.weights;
    let bce = bce_with_logits(g, mask_logit, gt_mask)?;
    let focal = focal_with_logits(g, mask_logit, gt_mask, config.focal_alpha, config.focal_gamma)?;
    let mut terms = LossTerms {
        bce: g.value(bce).data()[0].as_f64(),
        focal: g.value(focal).data()[0].as_f64(),
        edge: 0.0,
    };
    let mut parts = vec![g.scale(bce, T::lit(w.bce)), g.scale(focal, T::lit(w.focal))];
    if let (true, Some(e)) = (use_edge_loss, edge_logit) {
        let dice = dice_with_logits(g, e, gt_edge, config.dice_smooth)?;
        terms.edge = g.value(dice).data()[0].as_f64();
        parts.push(g.scale(dice, T::lit(w.edge)));
    }
    Ok((g.add_n(&parts)?, terms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use dualtrace_tensor::nn::Forward;
    use dualtrace_tensor::ParamStore;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len()], v.to_vec()).unwrap()
    }

    fn random_batch(seed: u64, n: usize) -> (Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Tensor::from_fn(&[1, 1, n, n], |_| rng.random_range(0.0..1.0));
        let y = Tensor::from_fn(&[1, 1, n, n], |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 });
        (p, y)
    }

    #[test]
    fn bce_reference_values() {
        let y = t(&[1.0, 0.0, 1.0]);
        assert!(bce_loss(&y, &y).unwrap() <= 1.2e-7);
        assert!((bce_loss(&t(&[0.5; 3]), &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let v = bce_loss(&t(&[0.9, 0.2]), &t(&[1.0, 0.0])).unwrap();
        assert!((v - (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0).abs() < 1e-12);
        assert!((v - 0.164252).abs() < 1e-6);
        assert!(bce_loss(&t(&[0.5]), &t(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn focal_reference_values() {
        let v = focal_loss(&t(&[0.9]), &t(&[1.0]), 0.25, 2.0).unwrap();
        assert!((v - 0.25 * 0.01 * -(0.9f64.ln())).abs() < 1e-15);
        assert!((v - 2.6341e-4).abs() < 1e-6);
        let v = focal_loss(&t(&[0.5]), &t(&[0.0]), 0.25, 2.0).unwrap();
        assert!((v - 0.129966).abs() < 1e-6);
        assert!(matches!(focal_loss(&t(&[0.5]), &t(&[0.0]), 1.0, 2.0), Err(Error::InvalidHyper(_))));
        assert!(matches!(focal_loss(&t(&[0.5]), &t(&[0.0]), 0.5, -1.0), Err(Error::InvalidHyper(_))));
    }

    #[test]
    fn focal_reduces_to_half_bce() {
        for seed in 0..100 {
            let (p, y) = random_batch(seed, 8);
            let f = focal_loss(&p, &y, 0.5, 0.0).unwrap();
            let b = bce_loss(&p, &y).unwrap();
            assert!((f - 0.5 * b).abs() < 1e-9);
        }
    }

    #[test]
    fn dice_reference_values() {
        let ones = Tensor::<f64>::ones(&[1, 1, 4, 4]);
        assert!(dice_edge_loss(&ones, &ones, 1.0).unwrap().abs() < 1e-15);
        let zeros = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        assert!((dice_edge_loss(&zeros, &ones, 1.0).unwrap() - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
        let gt = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| if i < 8 { 1.0 } else { 0.0 });
        let pred = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| if i < 4 { 1.0 } else { 0.0 });
        assert!((dice_edge_loss(&pred, &gt, 1e-12).unwrap() - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn dice_decreases_with_nested_overlap() {
        let gt = Tensor::<f64>::from_fn(&[1, 1, 8, 8], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        let positives: Vec<usize> = (0..64).filter(|i| i % 3 == 0).collect();
        let mut last = f64::INFINITY;
        for k in 0..=positives.len() {
            let pred = Tensor::from_fn(&[1, 1, 8, 8], |i| if positives[..k].contains(&i) { 1.0 } else { 0.0 });
            let v = dice_edge_loss(&pred, &gt, 1.0).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn logit_forms_agree_with_probability_forms() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |_| rng.random_range(-4.0..4.0));
        let y = Tensor::<f64>::from_fn(&[1, 1, 6, 6], |i| (i % 2) as f64);
        let p = z.map(sigmoid);
        let g = Graph::new();
        let zv = g.constant(z.clone());
        let val = |v: Var| g.value(v).data()[0];
        assert!((val(bce_with_logits(&g, zv, &y).unwrap()) - bce_loss(&p, &y).unwrap()).abs() < 1e-12);
        let fv = val(focal_with_logits(&g, zv, &y, 0.25, 2.0).unwrap());
        assert!((fv - focal_loss(&p, &y, 0.25, 2.0).unwrap()).abs() < 1e-12);
        let dv = val(dice_with_logits(&g, zv, &y, 1.0).unwrap());
        assert!((dv - dice_edge_loss(&p, &y, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |_| rng.random_range(-3.0..3.0));
        let y = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| if i % 3 == 0 { 1.0 } else { 0.0 });
        type Build = fn(&Forward<'_, f64>, Var, &Tensor<f64>) -> Result<Var>;
        let cases: [(&str, Build); 4] = [
            ("bce", |f, x, y| bce_with_logits(f.graph, x, y)),
            ("focal", |f, x, y| focal_with_logits(f.graph, x, y, 0.25, 2.0)),
            ("focal_gamma_half", |f, x, y| focal_with_logits(f.graph, x, y, 0.4, 0.5)),
            ("dice", |f, x, y| dice_with_logits(f.graph, x, y, 1.0)),
        ];
        for (name, build) in cases {
            let r = check_gradients(&store, &[], &z, true, 16, 1e-4, |f, x| build(f, x, &y)).unwrap();
            assert!(r.worst <= 1e-4, "{name}: {r:?}");
        }
    }

    #[test]
    fn combined_total_is_sum_of_terms() {
        let (p, y) = random_batch(4, 8);
        let z = p.map(|v| (v / (1.0 - v)).ln());
        let e = Tensor::from_fn(y.shape(), |i| if i % 5 == 0 { 1.0 } else { 0.0 });
        let g = Graph::new();
        let (zm, ze) = (g.constant(z.clone()), g.constant(z.map(|v| -v)));
        let cfg = LossConfig::default();
        let (total, terms) = combined_loss(&g, zm, Some(ze), &y, &e, &cfg, true).unwrap();
        let tv = g.value(total).data()[0];
        assert!((tv - (terms.bce + terms.focal + terms.edge)).abs() < 1e-9);
        assert!(terms.edge > 0.0);
        let (total, terms) = combined_loss(&g, zm, Some(ze), &y, &e, &cfg, false).unwrap();
        assert_eq!(terms.edge, 0.0);
        assert!((g.value(total).data()[0] - (terms.bce + terms.focal)).abs() < 1e-12);

        let perfect = y.map(|v| if v > 0.5 { 40.0 } else { -40.0 });
        let perfect_e = e.map(|v| if v > 0.5 { 40.0 } else { -40.0 });
        let (zm, ze) = (g.constant(perfect), g.constant(perfect_e));
        let (total, _) = combined_loss(&g, zm, Some(ze), &y, &e, &cfg, true).unwrap();
        assert!(g.value(total).data()[0] <= 1e-6);
    }

    proptest! {
        #[test]
        fn losses_are_non_negative(seed in 0u64..10_000, gamma in 0.0f64..4.0, alpha in 0.01f64..0.99) {
            let (p, y) = random_batch(seed, 4);
            prop_assert!(bce_loss(&p, &y).unwrap() >= 0.0);
            prop_assert!(focal_loss(&p, &y, alpha, gamma).unwrap() >= 0.0);
            let d = dice_edge_loss(&p, &y, 1.0).unwrap();
            prop_assert!((0.0..1.0).contains(&d));
        }
    }
}
