//! Three-scale conditional discriminator.
//!
//! Each of D1–D3 sees the hazy image channel-concatenated with a candidate (6 channels) at
//! full, half and quarter resolution, and emits a patch score map in [0,1].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::generator::{hex16, LayerShape, INIT_STD};
use crate::image_tensor::ImageTensor;
use crate::nn::{avg_pool2, ConvLayer, Graph, ParamStore, Var};
use crate::tensor::{Real, Tensor};

pub const NUM_SCALES: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Smallest full-resolution side: the quarter-scale level must survive four stride-2 convs.
pub const MIN_INPUT_SIDE: usize = 64;
/// Smallest side any single sub-network accepts.
const MIN_LEVEL_SIDE: usize = 16;

/// A per-position probability map `[N, 1, h, w]`.
pub type ScoreMap<T> = Tensor<T>;

#[derive(Clone, Debug)]
struct SubNet {
    layers: Vec<ConvLayer>,
}

impl SubNet {
    fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, rng: &mut ChaCha8Rng) -> Self {
        let spec: [(usize, usize, usize, usize, usize); 5] = [
            (6, 64, 4, 2, 1),
            (64, 128, 4, 2, 1),
            (128, 256, 4, 2, 1),
            (256, 512, 4, 2, 1),
            (512, 1, 1, 1, 0),
        ];
        let layers = spec
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, k, s, p))| {
                // Layers 2–4 are instance-normalized, so they carry no bias.
                let bias = !(1..=3).contains(&i);
                ConvLayer::register(store, &format!("{prefix}.conv{}", i + 1), cin, cout, k, s, p, bias, INIT_STD, rng)
            })
            .collect();
        Self { layers }
    }

    fn forward<T: Real>(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Var {
        let mut h = x;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.apply(g, bound, h);
            h = match i {
                0 => g.leaky_relu(h, LEAKY_SLOPE),
                1..=3 => {
                    let n = g.instance_norm(h);
                    g.leaky_relu(n, LEAKY_SLOPE)
                }
                _ => g.sigmoid(h),
            };
        }
        h
    }
}

/// D1–D3 and their parameters.
#[derive(Clone, Debug)]
pub struct MultiScaleDiscriminator<T> {
    pub params: ParamStore<T>,
    nets: Vec<SubNet>,
}

impl<T: Real> MultiScaleDiscriminator<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let nets = (1..=NUM_SCALES)
            .map(|m| SubNet::register(&mut params, &format!("d{m}"), &mut rng))
            .collect();
        Self { params, nets }
    }

    pub fn cast<U: Real>(&self) -> MultiScaleDiscriminator<U> {
        MultiScaleDiscriminator {
            params: self.params.cast(),
            nets: self.nets.clone(),
        }
    }

    /// Layer table of sub-network `m` (0-based).
    pub fn layers(&self, m: usize) -> Vec<LayerShape> {
        self.nets[m].layers.iter().map(LayerShape::from).collect()
    }

    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"discriminator/v1;");
        for net in &self.nets {
            for l in &net.layers {
                h.update(l.describe().as_bytes());
                h.update(b";");
            }
        }
        hex16(&h.finalize())
    }

    /// Scores `(hazy, candidate)` pyramids on the tape; one score map per scale.
    pub fn score_graph(&self, g: &mut Graph<'_, T>, bound: &[Var], hazy: &[Var], candidate: &[Var]) -> Result<Vec<Var>> {
        if hazy.len() != NUM_SCALES || candidate.len() != NUM_SCALES {
            return Err(Error::invalid("discriminator needs three pyramid levels"));
        }
        let mut out = Vec::with_capacity(NUM_SCALES);
        for (m, net) in self.nets.iter().enumerate() {
            let (hs, cs) = (g.value(hazy[m]).shape(), g.value(candidate[m]).shape());
            if hs != cs {
                return Err(Error::invalid(format!("shape mismatch: hazy {hs:?} vs candidate {cs:?}")));
            }
            if hs[2] < MIN_LEVEL_SIDE || hs[3] < MIN_LEVEL_SIDE {
                return Err(Error::invalid(format!(
                    "pyramid level {} is {}×{}; discriminator inputs must be at least {MIN_INPUT_SIDE}×{MIN_INPUT_SIDE}",
                    m + 1,
                    hs[2],
                    hs[3]
                )));
            }
            let x = g.concat(hazy[m], candidate[m]);
            out.push(net.forward(g, bound, x));
        }
        Ok(out)
    }

    /// Score maps for one hazy/candidate pair, e.g. `16×16`, `8×8`, `4×4` for 256×256 inputs.
    pub fn score(&self, hazy: &ImageTensor, candidate: &ImageTensor) -> Result<Vec<ScoreMap<T>>> {
        hazy.require_same_shape(candidate)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let hp = pyramid_graph(&mut g, hazy.to_tensor())?;
        let cp = pyramid_graph(&mut g, candidate.to_tensor())?;
        let scores = self.score_graph(&mut g, &bound, &hp, &cp)?;
        Ok(scores.into_iter().map(|v| g.value(v).clone()).collect())
    }
}

fn check_pyramid_shape(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
        return Err(Error::invalid(format!(
            "pyramid input height and width must be positive multiples of 4, got {h}×{w}"
        )));
    }
    Ok(())
}

/// `[x, avgpool2(x), avgpool2(avgpool2(x))]` as tape nodes.
pub fn pyramid_graph<T: Real>(g: &mut Graph<'_, T>, x: Tensor<T>) -> Result<Vec<Var>> {
    check_pyramid_shape(x.height(), x.width())?;
    let l0 = g.input(x, false);
    Ok(pyramid_of(g, l0))
}

/// Pyramid of an existing node (gradients flow through the pooling).
pub fn pyramid_of<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Vec<Var> {
    let l1 = g.avg_pool2(x);
    let l2 = g.avg_pool2(l1);
    vec![x, l1, l2]
}

/// The three-level average-pooling pyramid of an image.
pub fn pyramid(image: &ImageTensor) -> Result<[ImageTensor; 3]> {
    check_pyramid_shape(image.height(), image.width())?;
    let t0: Tensor<f64> = image.to_tensor();
    let t1 = avg_pool2(&t0);
    let t2 = avg_pool2(&t1);
    Ok([
        image.clone(),
        ImageTensor::from_tensor(&t1, 0)?,
        ImageTensor::from_tensor(&t2, 0)?,
    ])
}
