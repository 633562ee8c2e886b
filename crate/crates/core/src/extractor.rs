//! Fixed feature extractors for the perceptual and style losses.
//!
//! Two sources: a seeded random-weight VGG-style network (hermetic, used in tests and toy runs)
//! and externally supplied weights loaded from a checkpoint container whose metadata lists the
//! layer sequence.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::generator::FeatureMap;
use crate::image_tensor::ImageTensor;
use crate::nn::{ConvLayer, Graph, ParamStore, Var};
use crate::tensor::{Real, Tensor};

/// Tap used when none is configured: the output of the third downsampling stage.
pub const DEFAULT_TAP: &str = "pool3";

/// One layer description as stored in extractor weight files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv { name: String, stride: usize, pad: usize },
    Relu { name: String },
    Maxpool { name: String },
    Avgpool { name: String },
}

impl LayerSpec {
    pub fn name(&self) -> &str {
        match self {
            LayerSpec::Conv { name, .. }
            | LayerSpec::Relu { name }
            | LayerSpec::Maxpool { name }
            | LayerSpec::Avgpool { name } => name,
        }
    }
}

#[derive(Clone, Debug)]
enum Stage {
    Conv(ConvLayer),
    Relu,
    MaxPool,
    AvgPool,
}

/// A frozen convolutional feature network with named tap points.
#[derive(Clone, Debug)]
pub struct PerceptualExtractor<T> {
    params: ParamStore<T>,
    stages: Vec<(String, Stage)>,
    tap: String,
}

impl<T: Real> PerceptualExtractor<T> {
    /// Seeded random VGG-style extractor: three blocks of two 3×3 conv+ReLU followed by 2×2
    /// average pooling (16, 32, 64 channels), then a fourth block (128 channels).
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut stages = Vec::new();
        let mut cin = 3;
        for (block, (&width, convs)) in [16usize, 32, 64, 128].iter().zip([2, 2, 2, 1]).enumerate() {
            let b = block + 1;
            for i in 1..=convs {
                let name = format!("conv{b}_{i}");
                // He initialization keeps activation scale roughly constant through depth.
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let conv = ConvLayer::register(&mut params, &name, cin, width, 3, 1, 1, true, std, &mut rng);
                stages.push((name, Stage::Conv(conv)));
                stages.push((format!("relu{b}_{i}"), Stage::Relu));
                cin = width;
            }
            stages.push((format!("pool{b}"), Stage::AvgPool));
        }
        Self {
            params,
            stages,
            tap: DEFAULT_TAP.to_string(),
        }
    }

    /// Loads weights from a checkpoint container.
    ///
    /// The metadata must contain `"layers"` (a list of [`LayerSpec`]); each conv layer `name`
    /// needs tensors `name.weight` (`[C_out, C_in, k, k]`) and optionally `name.bias`. An optional
    /// `"input_mean"`/`"input_std"` pair (3 values each) normalizes inputs before the first layer.
    pub fn from_file(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let specs: Vec<LayerSpec> = serde_json::from_value(
            c.meta
                .get("layers")
                .cloned()
                .ok_or_else(|| bad("extractor metadata lacks \"layers\"".into()))?,
        )
        .map_err(|e| bad(format!("layers: {e}")))?;
        let mut params = ParamStore::<T>::new();
        let mut stages = Vec::new();
        let mean: Option<[f64; 3]> = c.meta.get("input_mean").and_then(|v| serde_json::from_value(v.clone()).ok());
        let std: Option<[f64; 3]> = c.meta.get("input_std").and_then(|v| serde_json::from_value(v.clone()).ok());
        if let (Some(mean), Some(std)) = (mean, std) {
            // Per-channel affine normalization as a fixed diagonal 1×1 convolution.
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let conv = ConvLayer::register(&mut params, "input_norm", 3, 3, 1, 1, 0, true, 0.0, &mut rng);
            let w = params.get_mut(conv.weight_index());
            for ch in 0..3 {
                w.set(ch, ch, 0, 0, T::from_f64_lossy(1.0 / std[ch]));
            }
            let b = params.get_mut(conv.bias_index().expect("registered with bias"));
            for ch in 0..3 {
                b.data_mut()[ch] = T::from_f64_lossy(-mean[ch] / std[ch]);
            }
            stages.push(("input_norm".to_string(), Stage::Conv(conv)));
        }
        for spec in &specs {
            let stage = match spec {
                LayerSpec::Conv { name, stride, pad } => {
                    let w = c
                        .get(&format!("{name}.weight"))
                        .ok_or_else(|| bad(format!("missing tensor {name}.weight")))?;
                    let [cout, cin, k, k2] = w.shape();
                    if k != k2 {
                        return Err(bad(format!("{name}: non-square kernel")));
                    }
                    let bias = c.get(&format!("{name}.bias"));
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let conv =
                        ConvLayer::register(&mut params, name, cin, cout, k, *stride, *pad, bias.is_some(), 0.0, &mut rng);
                    *params.get_mut(conv.weight_index()) = w.cast();
                    if let Some(b) = bias {
                        if b.len() != cout {
                            return Err(bad(format!("{name}.bias has {} values, expected {cout}", b.len())));
                        }
                        *params.get_mut(conv.bias_index().expect("registered with bias")) = b.clone().reshape([1, cout, 1, 1]).cast();
                    }
                    Stage::Conv(conv)
                }
                LayerSpec::Relu { .. } => Stage::Relu,
                LayerSpec::Maxpool { .. } => Stage::MaxPool,
                LayerSpec::Avgpool { .. } => Stage::AvgPool,
            };
            stages.push((spec.name().to_string(), stage));
        }
        let tap = if stages.iter().any(|(n, _)| n == DEFAULT_TAP) {
            DEFAULT_TAP.to_string()
        } else {
            stages.last().map(|(n, _)| n.clone()).ok_or_else(|| bad("extractor has no layers".into()))?
        };
        Ok(Self { params, stages, tap })
    }

    pub fn tap(&self) -> &str {
        &self.tap
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().map(|(n, _)| n.as_str())
    }

    /// Selects the tap layer used by [`features`](Self::features) and the losses.
    pub fn with_tap(mut self, tap: &str) -> Result<Self> {
        if !self.stages.iter().any(|(n, _)| n == tap) {
            return Err(Error::Config(format!(
                "unknown extractor tap {tap:?}; available: {}",
                self.tap_names().collect::<Vec<_>>().join(", ")
            )));
        }
        self.tap = tap.to_string();
        Ok(self)
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Runs the network up to the selected tap on the tape. Parameters are bound as constants.
    pub fn forward_graph<'a>(&'a self, g: &mut Graph<'a, T>, x: Var) -> Var {
        let bound = self.params.bind(g, false);
        self.forward_bound(g, &bound, x)
    }

    /// As [`forward_graph`](Self::forward_graph) with parameters already on the tape.
    pub fn forward_bound(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Var {
        let mut h = x;
        for (name, stage) in &self.stages {
            h = match stage {
                Stage::Conv(c) => c.apply(g, bound, h),
                Stage::Relu => g.relu(h),
                Stage::MaxPool => g.max_pool2(h),
                Stage::AvgPool => g.avg_pool2(h),
            };
            if *name == self.tap {
                break;
            }
        }
        h
    }

    /// Features of a single image at the selected tap.
    pub fn features(&self, image: &ImageTensor) -> FeatureMap<T> {
        let mut g = Graph::new();
        let x = g.input(image.to_tensor(), false);
        let f = self.forward_graph(&mut g, x);
        FeatureMap {
            layer_id: self.tap.clone(),
            data: g.value(f).clone(),
        }
    }

    pub fn features_of(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut g = Graph::new();
        let v = g.input(x.clone(), false);
        let f = self.forward_graph(&mut g, v);
        g.value(f).clone()
    }
}
