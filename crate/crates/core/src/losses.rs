//! Generator and discriminator objectives.
//!
//! Every term has a tape form (`*_graph`, differentiable) and a plain form returning `f64`.

use serde::{Deserialize, Serialize};

use crate::discriminator::ScoreMap;
use crate::error::{Error, Result};
use crate::extractor::PerceptualExtractor;
use crate::generator::FeatureMap;
use crate::image_tensor::ImageTensor;
use crate::nn::{gram_forward, Graph, L1Reduction, Var};
use crate::tensor::{Real, Tensor};

/// Clamp applied to discriminator scores before taking logarithms.
pub const SCORE_EPS: f64 = 1e-7;

/// Weights of the combined generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    pub gamma4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 50.0,
            gamma4: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("gamma3", self.gamma3),
            ("gamma4", self.gamma4),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversarialVariant {
    /// `mean log(1 − D(I, G(I)))`, minimized by the generator.
    #[default]
    Saturating,
    /// `−mean log D(I, G(I))`.
    NonSaturating,
}

/// The four generator terms and their weighted total.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adversarial: f64,
    pub perceptual: f64,
    pub style: f64,
    pub feature_reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.adversarial, self.perceptual, self.style, self.feature_reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Raw values of the four terms, before weighting.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub adversarial: f64,
    pub perceptual: f64,
    pub style: f64,
    pub feature_reg: f64,
}

/// Symmetric positive-semidefinite `C × C` matrix `ψψᵀ / (C·H·W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix<T> {
    pub size: usize,
    pub data: Vec<T>,
}

impl<T: Real> GramMatrix<T> {
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.size + j]
    }

    pub fn frobenius_sq_diff(&self, other: &GramMatrix<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum()
    }
}

/// Gram matrix of a single-sample feature map.
pub fn gram<T: Real>(features: &FeatureMap<T>) -> Result<GramMatrix<T>> {
    if features.data.batch() != 1 {
        return Err(Error::invalid(format!(
            "gram expects a single feature map, got batch {}",
            features.data.batch()
        )));
    }
    if !features.is_finite() {
        return Err(Error::invalid("feature map contains non-finite values"));
    }
    let c = features.data.channels();
    Ok(GramMatrix {
        size: c,
        data: gram_forward(&features.data).into_vec(),
    })
}

// ---- tape forms -----------------------------------------------------------------------

fn check_scales(scores: &[Var]) {
    assert!(!scores.is_empty(), "at least one score map is required");
}

/// Mean over scales of the per-scale mean generator adversarial term.
pub fn adversarial_graph<T: Real>(g: &mut Graph<'_, T>, scores: &[Var], variant: AdversarialVariant) -> Var {
    check_scales(scores);
    let w = 1.0 / scores.len() as f64;
    let terms: Vec<(Var, f64)> = scores
        .iter()
        .map(|&s| match variant {
            AdversarialVariant::Saturating => (g.mean_log(s, true, SCORE_EPS), w),
            AdversarialVariant::NonSaturating => (g.mean_log(s, false, SCORE_EPS), -w),
        })
        .collect();
    g.weighted_sum(&terms)
}

/// Negated discriminator objective: mean over scales of `−[log(1 − s_fake) + log(s_real)]`.
pub fn discriminator_graph<T: Real>(g: &mut Graph<'_, T>, fake: &[Var], real: &[Var]) -> Var {
    check_scales(fake);
    check_scales(real);
    assert_eq!(fake.len(), real.len(), "fake and real score lists must pair up");
    let w = -1.0 / fake.len() as f64;
    let mut terms = Vec::with_capacity(2 * fake.len());
    for (&f, &r) in fake.iter().zip(real) {
        terms.push((g.mean_log(f, true, SCORE_EPS), w));
        terms.push((g.mean_log(r, false, SCORE_EPS), w));
    }
    g.weighted_sum(&terms)
}

/// `(1 / (C·H·W)) ‖φ(output) − φ(target)‖²`, averaged over the batch.
pub fn perceptual_graph<T: Real>(g: &mut Graph<'_, T>, out_features: Var, target_features: Var) -> Var {
    g.mean_sq_diff(out_features, target_features)
}

/// `‖G(φ(output)) − G(φ(target))‖_F²`, averaged over the batch.
pub fn style_graph<T: Real>(g: &mut Graph<'_, T>, out_features: Var, target_features: Var) -> Var {
    let go = g.gram(out_features);
    let gt = g.gram(target_features);
    g.batch_sq_diff(go, gt)
}

/// L1 distance between encoder features of the hazy and clean images.
pub fn feature_reg_graph<T: Real>(g: &mut Graph<'_, T>, hazy: Var, clean: Var, reduction: L1Reduction) -> Var {
    g.l1(hazy, clean, reduction)
}

/// `γ1·L_A + γ2·L_P + γ3·L_S + γ4·L_FR` on the tape.
pub fn combine_graph<T: Real>(g: &mut Graph<'_, T>, weights: &LossWeights, terms: [Var; 4]) -> Var {
    g.weighted_sum(&[
        (terms[0], weights.gamma1),
        (terms[1], weights.gamma2),
        (terms[2], weights.gamma3),
        (terms[3], weights.gamma4),
    ])
}

// ---- plain forms ----------------------------------------------------------------------

fn scores_to_graph<'a, T: Real>(g: &mut Graph<'a, T>, scores: &'a [ScoreMap<T>]) -> Vec<Var> {
    scores.iter().map(|s| g.constant(s)).collect()
}

/// Generator adversarial loss over the score maps of all scales.
pub fn adversarial_loss<T: Real>(scores: &[ScoreMap<T>], variant: AdversarialVariant) -> f64 {
    let mut g = Graph::new();
    let vars = scores_to_graph(&mut g, scores);
    let l = adversarial_graph(&mut g, &vars, variant);
    g.scalar(l).as_f64()
}

/// Discriminator loss (to be minimized).
pub fn discriminator_loss<T: Real>(fake: &[ScoreMap<T>], real: &[ScoreMap<T>]) -> f64 {
    let mut g = Graph::new();
    let f = scores_to_graph(&mut g, fake);
    let r = scores_to_graph(&mut g, real);
    let l = discriminator_graph(&mut g, &f, &r);
    g.scalar(l).as_f64()
}

fn extract_pair<T: Real>(
    extractor: &PerceptualExtractor<T>,
    output: &ImageTensor,
    target: &ImageTensor,
) -> Result<(Tensor<T>, Tensor<T>)> {
    output.require_same_shape(target)?;
    Ok((
        extractor.features_of(&output.to_tensor()),
        extractor.features_of(&target.to_tensor()),
    ))
}

pub fn perceptual_loss<T: Real>(extractor: &PerceptualExtractor<T>, output: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    let (fo, ft) = extract_pair(extractor, output, target)?;
    let mut g = Graph::new();
    let (a, b) = (g.input(fo, false), g.input(ft, false));
    let l = perceptual_graph(&mut g, a, b);
    Ok(g.scalar(l).as_f64())
}

pub fn style_loss<T: Real>(extractor: &PerceptualExtractor<T>, output: &ImageTensor, target: &ImageTensor) -> Result<f64> {
    let (fo, ft) = extract_pair(extractor, output, target)?;
    let mut g = Graph::new();
    let (a, b) = (g.input(fo, false), g.input(ft, false));
    let l = style_graph(&mut g, a, b);
    Ok(g.scalar(l).as_f64())
}

pub fn feature_reg_loss<T: Real>(hazy: &FeatureMap<T>, clean: &FeatureMap<T>, reduction: L1Reduction) -> Result<f64> {
    if hazy.data.shape() != clean.data.shape() {
        return Err(Error::invalid(format!(
            "shape mismatch: {:?} vs {:?}",
            hazy.data.shape(),
            clean.data.shape()
        )));
    }
    let mut g = Graph::new();
    let (a, b) = (g.constant(&hazy.data), g.constant(&clean.data));
    let l = feature_reg_graph(&mut g, a, b, reduction);
    Ok(g.scalar(l).as_f64())
}

/// Weighted combination of the four terms.
pub fn generator_loss(weights: &LossWeights, parts: LossParts) -> Result<LossBreakdown> {
    weights.validate()?;
    Ok(LossBreakdown {
        adversarial: parts.adversarial,
        perceptual: parts.perceptual,
        style: parts.style,
        feature_reg: parts.feature_reg,
        total: weights.gamma1 * parts.adversarial
            + weights.gamma2 * parts.perceptual
            + weights.gamma3 * parts.style
            + weights.gamma4 * parts.feature_reg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn maps(v: f64) -> Vec<Tensor<f64>> {
        vec![
            Tensor::full([2, 1, 4, 4], v),
            Tensor::full([2, 1, 2, 2], v),
            Tensor::full([2, 1, 1, 1], v),
        ]
    }

    #[test]
    fn adversarial_closed_forms() {
        assert!((adversarial_loss(&maps(0.5), AdversarialVariant::Saturating) - 0.5f64.ln()).abs() < 1e-12);
        let near_zero = adversarial_loss(&maps(1e-12), AdversarialVariant::Saturating);
        assert!(near_zero <= 0.0 && near_zero > -1e-6);
        let near_one = adversarial_loss(&maps(1.0), AdversarialVariant::Saturating);
        assert!((near_one - SCORE_EPS.ln()).abs() < 1e-6);
        assert!(near_one.is_finite());
        assert!((adversarial_loss(&maps(0.5), AdversarialVariant::NonSaturating) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn discriminator_closed_forms() {
        assert!((discriminator_loss(&maps(0.5), &maps(0.5)) - 2.0 * 2f64.ln()).abs() < 1e-12);
        let perfect = discriminator_loss(&maps(0.0), &maps(1.0));
        assert!((0.0..1e-6).contains(&perfect));
        let worst = discriminator_loss(&maps(1.0), &maps(0.0));
        assert!(worst.is_finite() && worst > 0.0);
    }

    #[test]
    fn generator_loss_combination() {
        let w = LossWeights::default();
        let parts = LossParts {
            adversarial: -0.5,
            perceptual: 0.2,
            style: 0.01,
            feature_reg: 3.0,
        };
        let b = generator_loss(&w, parts).unwrap();
        assert!((b.total - 0.23).abs() < 1e-12);
        let zero = LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            gamma3: 0.0,
            gamma4: 0.0,
        };
        assert_eq!(generator_loss(&zero, parts).unwrap().total, 0.0);
        let doubled = LossWeights { gamma3: 100.0, ..w };
        let d = generator_loss(&doubled, parts).unwrap();
        assert!((d.total - b.total - parts.style * 50.0).abs() < 1e-12);
        let negative = LossWeights { gamma2: -1.0, ..w };
        assert!(matches!(generator_loss(&negative, parts), Err(Error::Config(_))));
    }

    #[test]
    fn gram_examples() {
        let f = FeatureMap {
            layer_id: "t".into(),
            data: Tensor::<f64>::full([1, 1, 2, 2], 0.7),
        };
        let gm = gram(&f).unwrap();
        assert_eq!(gm.size, 1);
        assert!((gm.at(0, 0) - 0.49).abs() < 1e-12);
        let z = FeatureMap {
            layer_id: "z".into(),
            data: Tensor::<f64>::zeros([1, 3, 2, 2]),
        };
        assert!(gram(&z).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_reg_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Tensor::<f64>::randn([1, 4, 3, 3], 1.0, &mut rng);
        let b = a.map(|v| v + 0.25);
        let fa = FeatureMap {
            layer_id: "e".into(),
            data: a,
        };
        let fb = FeatureMap {
            layer_id: "e".into(),
            data: b,
        };
        assert_eq!(feature_reg_loss(&fa, &fa, L1Reduction::Sum).unwrap(), 0.0);
        let l = feature_reg_loss(&fa, &fb, L1Reduction::Sum).unwrap();
        assert!((l - 0.25 * 36.0).abs() < 1e-9);
        assert_eq!(l, feature_reg_loss(&fb, &fa, L1Reduction::Sum).unwrap());
        assert!((feature_reg_loss(&fa, &fb, L1Reduction::Mean).unwrap() - 0.25).abs() < 1e-9);
        let other = FeatureMap {
            layer_id: "e".into(),
            data: Tensor::zeros([1, 4, 2, 2]),
        };
        assert!(feature_reg_loss(&fa, &other, L1Reduction::Sum).is_err());
    }

    #[test]
    fn perceptual_and_style_vanish_on_identical_images() {
        let e = PerceptualExtractor::<f64>::random(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = ImageTensor::from_tensor(&Tensor::<f64>::rand_uniform([1, 3, 16, 16], 0.0, 1.0, &mut rng), 0).unwrap();
        let other = ImageTensor::filled(16, 16, 3, 0.5);
        assert_eq!(perceptual_loss(&e, &img, &img).unwrap(), 0.0);
        assert_eq!(style_loss(&e, &img, &img).unwrap(), 0.0);
        assert!(perceptual_loss(&e, &img, &other).unwrap() > 0.0);
        assert!(style_loss(&e, &img, &other).unwrap() > 0.0);
        assert!(perceptual_loss(&e, &img, &ImageTensor::filled(8, 8, 3, 0.5)).is_err());
    }
}
