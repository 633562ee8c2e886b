//! Encoder–decoder generator.
//!
//! Encoder: 7×7/s1 (64) → 4×4/s2 (128) → 4×4/s2 (256) → four residual blocks of two 3×3
//! convolutions (256). Decoder: four residual blocks (256) → 2× upsample → 5×5 (128) →
//! skip from encoder layer 2 → 2× upsample → 5×5 (64) → skip from encoder layer 1 → 7×7 (3).
//! Each skip is a channel concatenation followed by a 1×1 projection back to the decoder width.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::nn::{ConvLayer, Graph, ParamStore, Var};
use crate::tensor::{Real, Tensor};

/// Standard deviation of the Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Number of encoder layers (and of decoder layers).
pub const LAYERS_PER_HALF: usize = 11;

/// Which normalization/activation follows a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Post {
    NormRelu,
    Norm,
    Relu,
    Sigmoid,
}

#[derive(Clone, Debug)]
struct Layer {
    conv: ConvLayer,
    post: Post,
}

impl Layer {
    fn apply<T: Real>(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Var {
        let y = self.conv.apply(g, bound, x);
        match self.post {
            Post::NormRelu => {
                let n = g.instance_norm(y);
                g.relu(n)
            }
            Post::Norm => g.instance_norm(y),
            Post::Relu => g.relu(y),
            Post::Sigmoid => g.sigmoid(y),
        }
    }
}

/// Output of the encoder: the final feature map plus every layer's activation.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Activations of encoder layers 1..=11, in order.
    pub layers: Vec<Var>,
}

impl EncoderOutput {
    /// Final (layer 11) feature map, `256 × H/4 × W/4`.
    pub fn features(&self) -> Var {
        *self.layers.last().expect("encoder has layers")
    }

    /// Activation of encoder layer `k` (1-based).
    pub fn layer(&self, k: usize) -> Var {
        self.layers[k - 1]
    }

    /// The intermediates the decoder concatenates (layers 1 and 2).
    pub fn skips(&self) -> Skips {
        Skips {
            layer1: self.layers[0],
            layer2: self.layers[1],
        }
    }
}

/// Encoder intermediates consumed by the decoder's skip connections.
#[derive(Clone, Copy, Debug)]
pub struct Skips {
    pub layer1: Var,
    pub layer2: Var,
}

/// A named feature map taken from a network layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub layer_id: String,
    pub data: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn is_finite(&self) -> bool {
        self.data.all_finite()
    }
}

/// One row of the layer audit table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl From<&ConvLayer> for LayerShape {
    fn from(c: &ConvLayer) -> Self {
        Self {
            name: c.name.clone(),
            in_channels: c.in_channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            pad: c.pad,
        }
    }
}

/// The generator network with its parameters.
#[derive(Clone, Debug)]
pub struct GeneratorNet<T> {
    pub params: ParamStore<T>,
    encoder: Vec<Layer>,
    decoder_blocks: Vec<Layer>,
    dec9: Layer,
    skip2: Layer,
    dec10: Layer,
    skip1: Layer,
    dec11: Layer,
}

impl<T: Real> GeneratorNet<T> {
    /// Gaussian(0, 0.02) weights, zero biases, seeded.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let mut conv = |p: &mut ParamStore<T>, name: &str, cin, cout, k, s, pad, post: Post| {
            let bias = matches!(post, Post::Relu | Post::Sigmoid);
            Layer {
                conv: ConvLayer::register(p, name, cin, cout, k, s, pad, bias, INIT_STD, &mut rng),
                post,
            }
        };
        let mut encoder = vec![
            conv(&mut p, "enc1", 3, 64, 7, 1, 3, Post::NormRelu),
            conv(&mut p, "enc2", 64, 128, 4, 2, 1, Post::NormRelu),
            conv(&mut p, "enc3", 128, 256, 4, 2, 1, Post::NormRelu),
        ];
        for i in 4..=11 {
            // First conv of each residual pair is followed by ReLU, the second only by normalization.
            let post = if i % 2 == 0 { Post::NormRelu } else { Post::Norm };
            encoder.push(conv(&mut p, &format!("enc{i}"), 256, 256, 3, 1, 1, post));
        }
        let mut decoder_blocks = Vec::new();
        for i in 1..=8 {
            let post = if i % 2 == 1 { Post::NormRelu } else { Post::Norm };
            decoder_blocks.push(conv(&mut p, &format!("dec{i}"), 256, 256, 3, 1, 1, post));
        }
        let dec9 = conv(&mut p, "dec9", 256, 128, 5, 1, 2, Post::NormRelu);
        let skip2 = conv(&mut p, "skip2", 256, 128, 1, 1, 0, Post::Relu);
        let dec10 = conv(&mut p, "dec10", 128, 64, 5, 1, 2, Post::NormRelu);
        let skip1 = conv(&mut p, "skip1", 128, 64, 1, 1, 0, Post::Relu);
        let dec11 = conv(&mut p, "dec11", 64, 3, 7, 1, 3, Post::Sigmoid);
        Self {
            params: p,
            encoder,
            decoder_blocks,
            dec9,
            skip2,
            dec10,
            skip1,
            dec11,
        }
    }

    /// The same network with parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> GeneratorNet<U> {
        GeneratorNet {
            params: self.params.cast(),
            encoder: self.encoder.clone(),
            decoder_blocks: self.decoder_blocks.clone(),
            dec9: self.dec9.clone(),
            skip2: self.skip2.clone(),
            dec10: self.dec10.clone(),
            skip1: self.skip1.clone(),
            dec11: self.dec11.clone(),
        }
    }

    /// Encoder layers 1–11 in order.
    pub fn encoder_layers(&self) -> Vec<LayerShape> {
        self.encoder.iter().map(|l| (&l.conv).into()).collect()
    }

    /// Decoder layers 1–11 in order (skip projections excluded).
    pub fn decoder_layers(&self) -> Vec<LayerShape> {
        self.decoder_blocks
            .iter()
            .chain([&self.dec9, &self.dec10, &self.dec11])
            .map(|l| (&l.conv).into())
            .collect()
    }

    /// The 1×1 skip projections (after decoder layers 9 and 10).
    pub fn skip_projections(&self) -> Vec<LayerShape> {
        vec![(&self.skip2.conv).into(), (&self.skip1.conv).into()]
    }

    fn all_layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder
            .iter()
            .chain(&self.decoder_blocks)
            .chain([&self.dec9, &self.skip2, &self.dec10, &self.skip1, &self.dec11])
    }

    /// Hash of the layer table, stored in checkpoints.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"generator/v1;");
        for l in self.all_layers() {
            h.update(l.conv.describe().as_bytes());
            h.update(format!("{:?};", l.post).as_bytes());
        }
        hex16(&h.finalize())
    }

    /// Checks `[N, 3, H, W]` with H, W divisible by 4.
    pub fn check_input(shape: [usize; 4]) -> Result<()> {
        let [n, c, h, w] = shape;
        if n == 0 || c != 3 {
            return Err(Error::invalid(format!(
                "generator expects a non-empty batch of 3-channel images, got {shape:?}"
            )));
        }
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::invalid(format!(
                "generator input height and width must be positive multiples of 4, got {h}×{w}"
            )));
        }
        Ok(())
    }

    /// Runs the encoder on the tape.
    pub fn encode_graph(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Result<EncoderOutput> {
        Self::check_input(g.value(x).shape())?;
        let mut layers = Vec::with_capacity(LAYERS_PER_HALF);
        let mut h = x;
        for l in &self.encoder[..3] {
            h = l.apply(g, bound, h);
            layers.push(h);
        }
        for pair in self.encoder[3..].chunks(2) {
            let a = pair[0].apply(g, bound, h);
            layers.push(a);
            let b = pair[1].apply(g, bound, a);
            h = g.add(h, b);
            layers.push(h);
        }
        Ok(EncoderOutput { layers })
    }

    /// Runs the decoder on the tape; returns the `[N, 3, H, W]` output in [0,1].
    pub fn decode_graph(&self, g: &mut Graph<'_, T>, bound: &[Var], features: Var, skips: Skips) -> Result<Var> {
        let [n, c, fh, fw] = g.value(features).shape();
        let [sn, sc, sh, sw] = g.value(skips.layer2).shape();
        let [_, s1c, s1h, s1w] = g.value(skips.layer1).shape();
        if c != 256 || sc != 128 || s1c != 64 || sn != n || (sh, sw) != (2 * fh, 2 * fw) || (s1h, s1w) != (4 * fh, 4 * fw)
        {
            return Err(Error::invalid(format!(
                "decoder features {:?} do not match skips {:?} / {:?}",
                [n, c, fh, fw],
                [sn, sc, sh, sw],
                g.value(skips.layer1).shape()
            )));
        }
        let mut h = features;
        for pair in self.decoder_blocks.chunks(2) {
            let a = pair[0].apply(g, bound, h);
            let b = pair[1].apply(g, bound, a);
            h = g.add(h, b);
        }
        let up = g.upsample2(h);
        let d9 = self.dec9.apply(g, bound, up);
        let cat = g.concat(d9, skips.layer2);
        let h = self.skip2.apply(g, bound, cat);
        let up = g.upsample2(h);
        let d10 = self.dec10.apply(g, bound, up);
        let cat = g.concat(d10, skips.layer1);
        let h = self.skip1.apply(g, bound, cat);
        Ok(self.dec11.apply(g, bound, h))
    }

    /// `G(I)` on the tape.
    pub fn forward_graph(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Result<(Var, EncoderOutput)> {
        let enc = self.encode_graph(g, bound, x)?;
        let out = self.decode_graph(g, bound, enc.features(), enc.skips())?;
        Ok((out, enc))
    }

    /// Final encoder feature map for a single image.
    pub fn encode(&self, image: &ImageTensor) -> Result<FeatureMap<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.input(image.to_tensor(), false);
        let enc = self.encode_graph(&mut g, &bound, x)?;
        Ok(FeatureMap {
            layer_id: format!("enc{LAYERS_PER_HALF}"),
            data: g.value(enc.features()).clone(),
        })
    }

    /// Decodes externally supplied features and skip tensors (`enc1`, `enc2` activations).
    pub fn decode(&self, features: &FeatureMap<T>, skip1: &Tensor<T>, skip2: &Tensor<T>) -> Result<ImageTensor> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let f = g.input(features.data.clone(), false);
        let s1 = g.input(skip1.clone(), false);
        let s2 = g.input(skip2.clone(), false);
        let out = self.decode_graph(
            &mut g,
            &bound,
            f,
            Skips {
                layer1: s1,
                layer2: s2,
            },
        )?;
        ImageTensor::from_tensor(g.value(out), 0)
    }

    /// Encoder output and its skip tensors for a single image.
    pub fn encode_with_skips(&self, image: &ImageTensor) -> Result<(FeatureMap<T>, Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.input(image.to_tensor(), false);
        let enc = self.encode_graph(&mut g, &bound, x)?;
        let skips = enc.skips();
        Ok((
            FeatureMap {
                layer_id: format!("enc{LAYERS_PER_HALF}"),
                data: g.value(enc.features()).clone(),
            },
            g.value(skips.layer1).clone(),
            g.value(skips.layer2).clone(),
        ))
    }

    /// Batched inference on an NCHW tensor.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let xv = g.constant(x);
        let (out, _) = self.forward_graph(&mut g, &bound, xv)?;
        Ok(g.value(out).clone())
    }

    /// Dehazes one RGB image whose sides are multiples of 4.
    pub fn dehaze(&self, hazy: &ImageTensor) -> Result<ImageTensor> {
        if hazy.channels() != 3 {
            return Err(Error::invalid("dehaze expects a 3-channel image"));
        }
        let out = self.forward(&hazy.to_tensor())?;
        ImageTensor::from_tensor(&out, 0)
    }
}

pub(crate) fn hex16(bytes: &[u8]) -> String {
    hex::encode(&bytes[..8])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::<f32>::rand_uniform([1, 3, h, w], 0.0, 1.0, &mut rng);
        ImageTensor::from_tensor(&t, 0).unwrap()
    }

    #[test]
    fn layer_table_matches_architecture() {
        let net = GeneratorNet::<f32>::new(0);
        let rows: Vec<_> = net
            .encoder_layers()
            .iter()
            .map(|l| (l.out_channels, l.kernel, l.stride, l.pad))
            .collect();
        let mut expect = vec![(64, 7, 1, 3), (128, 4, 2, 1), (256, 4, 2, 1)];
        expect.extend(std::iter::repeat_n((256, 3, 1, 1), 8));
        assert_eq!(rows, expect);
        let rows: Vec<_> = net
            .decoder_layers()
            .iter()
            .map(|l| (l.out_channels, l.kernel, l.stride, l.pad))
            .collect();
        let mut expect = vec![(256, 3, 1, 1); 8];
        expect.extend([(128, 5, 1, 2), (64, 5, 1, 2), (3, 7, 1, 3)]);
        assert_eq!(rows, expect);
    }

    #[test]
    fn encode_shapes() {
        let net = GeneratorNet::<f32>::new(1);
        let f = net.encode(&random_image(64, 64, 2)).unwrap();
        assert_eq!(f.data.shape(), [1, 256, 16, 16]);
        assert!(f.is_finite());
        assert_eq!(f.layer_id, "enc11");
    }

    #[test]
    fn encode_is_deterministic_and_decode_composes() {
        let net = GeneratorNet::<f32>::new(3);
        let img = random_image(32, 32, 4);
        let (f, s1, s2) = net.encode_with_skips(&img).unwrap();
        assert_eq!(f, net.encode(&img).unwrap());
        let out = net.decode(&f, &s1, &s2).unwrap();
        assert_eq!(out.shape(), (32, 32, 3));
        assert_eq!(out, net.dehaze(&img).unwrap());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn decode_rejects_mismatched_features() {
        let net = GeneratorNet::<f32>::new(3);
        let img = random_image(32, 32, 4);
        let (f, s1, _) = net.encode_with_skips(&img).unwrap();
        let wrong = FeatureMap {
            layer_id: "x".into(),
            data: Tensor::zeros([1, 128, 8, 8]),
        };
        assert!(net.decode(&wrong, &s1, &s1).is_err());
        assert!(net.decode(&f, &s1, &s1).is_err());
    }

    #[test]
    fn rejects_sizes_not_divisible_by_four() {
        let net = GeneratorNet::<f32>::new(0);
        let err = net.encode(&random_image(30, 32, 0)).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(net.dehaze(&random_image(32, 34, 0)).is_err());
    }

    #[test]
    fn fully_convolutional() {
        let net = GeneratorNet::<f32>::new(5);
        assert_eq!(net.dehaze(&random_image(16, 24, 1)).unwrap().shape(), (16, 24, 3));
        assert_eq!(net.dehaze(&random_image(32, 48, 1)).unwrap().shape(), (32, 48, 3));
    }

    #[test]
    fn fingerprint_is_stable_across_seeds() {
        assert_eq!(GeneratorNet::<f32>::new(1).fingerprint(), GeneratorNet::<f32>::new(2).fingerprint());
        assert_eq!(GeneratorNet::<f32>::new(1).fingerprint().len(), 16);
    }
}
