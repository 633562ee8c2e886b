//! A reverse-mode autodiff tape over [`Tensor`]s.
//!
//! Every operation appends a node holding its output value. [`Graph::backward`] walks the tape
//! in reverse and accumulates gradients for every node that depends on a gradient-requiring leaf.

use std::borrow::Cow;

use super::conv::{conv2d_backward, conv2d_forward};
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How an L1 distance is reduced over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L1Reduction {
    /// Sum of absolute differences per sample, averaged over the batch.
    Sum,
    /// Mean absolute difference over every element.
    Mean,
}

enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    Add(Var, Var),
    Relu(Var),
    LeakyRelu(Var, T),
    Sigmoid(Var),
    InstanceNorm { x: Var, inv_std: Vec<T> },
    AvgPool2(Var),
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Concat(Var, Var),
    Gram(Var),
    MeanSqDiff(Var, Var),
    BatchSqDiff(Var, Var),
    L1(Var, Var, L1Reduction),
    MeanLog { x: Var, complement: bool, eps: T },
    WeightedSum(Vec<(Var, T)>),
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape. Borrowed leaves (parameters) are not copied.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

const NORM_EPS: f64 = 1e-5;

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A trainable leaf borrowed from a parameter store.
    pub fn param(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, true)
    }

    /// A non-trainable borrowed leaf.
    pub fn constant(&mut self, t: &'a Tensor<T>) -> Var {
        self.push(Cow::Borrowed(t), Op::Leaf, false)
    }

    /// An owned leaf.
    pub fn input(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar node");
        t.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let y = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad);
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(
            Cow::Owned(y),
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
            rg,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut y = self.value(a).clone();
        y.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(y), Op::Add(a, b), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64_lossy(slope);
        let y = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::LeakyRelu(x, s), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::Sigmoid(x), rg)
    }

    /// Per-sample, per-channel normalization over the spatial plane (no affine parameters).
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let hw = h * w;
        let eps = T::from_f64_lossy(NORM_EPS);
        let inv_hw = T::one() / T::from_usize(hw).unwrap();
        let mut y = xt.clone();
        let mut inv_std = Vec::with_capacity(n * c);
        for plane in y.data_mut().chunks_mut(hw) {
            let mean = plane.iter().copied().sum::<T>() * inv_hw;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_hw;
            let is = T::one() / (var + eps).sqrt();
            for v in plane.iter_mut() {
                *v = (*v - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::InstanceNorm { x, inv_std }, rg)
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let y = avg_pool2(self.value(x));
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::AvgPool2(x), rg)
    }

    /// 2×2 max pooling with stride 2.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for (src, dst) in xt.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = 2 * oy * w + 2 * ox;
                    for idx in [2 * oy * w + 2 * ox + 1, (2 * oy + 1) * w + 2 * ox, (2 * oy + 1) * w + 2 * ox + 1] {
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    dst[oy * wo + ox] = src[best];
                    argmax.push(best as u32);
                }
            }
        }
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::MaxPool2 { x, argmax }, rg)
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let mut y = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for (src, dst) in xt.data().chunks(h * w).zip(y.data_mut().chunks_mut(4 * h * w)) {
            for iy in 0..2 * h {
                let srow = &src[(iy / 2) * w..(iy / 2 + 1) * w];
                let drow = &mut dst[iy * 2 * w..(iy + 1) * 2 * w];
                for (ix, d) in drow.iter_mut().enumerate() {
                    *d = srow[ix / 2];
                }
            }
        }
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::Upsample2(x), rg)
    }

    /// Channel concatenation `[a, b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        let [n, ca, h, w] = at.shape();
        let [nb, cb, hb, wb] = bt.shape();
        assert_eq!((n, h, w), (nb, hb, wb), "concat requires equal N, H, W");
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(at.sample(s));
            data.extend_from_slice(bt.sample(s));
        }
        let y = Tensor::from_vec([n, ca + cb, h, w], data);
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(y), Op::Concat(a, b), rg)
    }

    /// Per-sample Gram matrix `ψψᵀ / (C·H·W)` with shape `[N, 1, C, C]`.
    pub fn gram(&mut self, x: Var) -> Var {
        let y = gram_forward(self.value(x));
        let rg = self.rg(x);
        self.push(Cow::Owned(y), Op::Gram(x), rg)
    }

    /// Mean of `(a − b)²` over all elements.
    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let v = sq_diff_sum(self.value(a), self.value(b)) / T::from_usize(self.value(a).len()).unwrap();
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::MeanSqDiff(a, b), rg)
    }

    /// Squared difference summed within each sample, averaged over the batch.
    pub fn batch_sq_diff(&mut self, a: Var, b: Var) -> Var {
        let n = T::from_usize(self.value(a).batch()).unwrap();
        let v = sq_diff_sum(self.value(a), self.value(b)) / n;
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::BatchSqDiff(a, b), rg)
    }

    pub fn l1(&mut self, a: Var, b: Var, reduction: L1Reduction) -> Var {
        let (at, bt) = (self.value(a), self.value(b));
        assert_eq!(at.shape(), bt.shape(), "l1 operands must share a shape");
        let sum: T = at.data().iter().zip(bt.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let denom = match reduction {
            L1Reduction::Sum => at.batch(),
            L1Reduction::Mean => at.len(),
        };
        let v = sum / T::from_usize(denom).unwrap();
        let rg = self.rg(a) || self.rg(b);
        self.push(Cow::Owned(Tensor::scalar(v)), Op::L1(a, b, reduction), rg)
    }

    /// Mean of `log(clamp(x))` (or `log(1 − clamp(x))` when `complement`), with
    /// `clamp` onto `[eps, 1 − eps]`. NaN inputs propagate.
    pub fn mean_log(&mut self, x: Var, complement: bool, eps: f64) -> Var {
        let e = T::from_f64_lossy(eps);
        let xt = self.value(x);
        let hi = T::one() - e;
        let sum: T = xt
            .data()
            .iter()
            .map(|&s| {
                let s = if s.is_nan() { s } else { s.max(e).min(hi) };
                if complement {
                    (T::one() - s).ln()
                } else {
                    s.ln()
                }
            })
            .sum();
        let v = sum / T::from_usize(xt.len()).unwrap();
        let rg = self.rg(x);
        self.push(
            Cow::Owned(Tensor::scalar(v)),
            Op::MeanLog { x, complement, eps: e },
            rg,
        )
    }

    /// `Σ wᵢ·xᵢ` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        assert!(!terms.is_empty());
        let shape = self.value(terms[0].0).shape();
        let mut y = Tensor::zeros(shape);
        let mut ops = Vec::with_capacity(terms.len());
        let mut rg = false;
        for &(v, w) in terms {
            let w = T::from_f64_lossy(w);
            let t = self.value(v);
            assert_eq!(t.shape(), shape, "weighted_sum operands must share a shape");
            for (o, &x) in y.data_mut().iter_mut().zip(t.data()) {
                *o += w * x;
            }
            rg |= self.rg(v);
            ops.push((v, w));
        }
        self.push(Cow::Owned(y), Op::WeightedSum(ops), rg)
    }

    /// Gradients of the scalar node `loss` with respect to every gradient-requiring node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            let y = node.value.as_ref();
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(dy);
                }
                &Op::Conv {
                    x,
                    w,
                    b,
                    stride,
                    pad,
                } => {
                    let need_b = b.is_some_and(|b| self.rg(b));
                    let g = conv2d_backward(
                        self.value(x),
                        self.value(w),
                        &dy,
                        stride,
                        pad,
                        (self.rg(x), self.rg(w), need_b),
                    );
                    accumulate(&mut grads, x, g.dx);
                    accumulate(&mut grads, w, g.dw);
                    if let Some(b) = b {
                        accumulate(&mut grads, b, g.db);
                    }
                }
                &Op::Add(a, b) => {
                    if self.rg(a) && self.rg(b) {
                        accumulate(&mut grads, a, Some(dy.clone()));
                    } else if self.rg(a) {
                        accumulate(&mut grads, a, Some(dy));
                        continue;
                    }
                    accumulate(&mut grads, b, Some(dy));
                }
                &Op::Relu(x) => {
                    let mut dx = dy;
                    for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                        if o <= T::zero() {
                            *d = T::zero();
                        }
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                &Op::LeakyRelu(x, s) => {
                    let mut dx = dy;
                    for (d, &i) in dx.data_mut().iter_mut().zip(self.value(x).data()) {
                        if i <= T::zero() {
                            *d *= s;
                        }
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                &Op::Sigmoid(x) => {
                    let mut dx = dy;
                    for (d, &o) in dx.data_mut().iter_mut().zip(y.data()) {
                        *d *= o * (T::one() - o);
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                Op::InstanceNorm { x, inv_std } => {
                    let [_, _, h, w] = y.shape();
                    let hw = h * w;
                    let inv_hw = T::one() / T::from_usize(hw).unwrap();
                    let mut dx = dy;
                    for ((d, o), &is) in dx
                        .data_mut()
                        .chunks_mut(hw)
                        .zip(y.data().chunks(hw))
                        .zip(inv_std)
                    {
                        let mean_d = d.iter().copied().sum::<T>() * inv_hw;
                        let mean_dy: T = d.iter().zip(o).map(|(&a, &b)| a * b).sum::<T>() * inv_hw;
                        for (dv, &ov) in d.iter_mut().zip(o) {
                            *dv = is * (*dv - mean_d - ov * mean_dy);
                        }
                    }
                    accumulate(&mut grads, *x, Some(dx));
                }
                &Op::AvgPool2(x) => {
                    let xs = self.value(x).shape();
                    let [_, _, h, w] = xs;
                    let (ho, wo) = (h / 2, w / 2);
                    let quarter = T::from_f64_lossy(0.25);
                    let mut dx = Tensor::zeros(xs);
                    for (src, dst) in dy.data().chunks(ho * wo).zip(dx.data_mut().chunks_mut(h * w)) {
                        for oy in 0..ho {
                            for ox in 0..wo {
                                let g = src[oy * wo + ox] * quarter;
                                dst[2 * oy * w + 2 * ox] = g;
                                dst[2 * oy * w + 2 * ox + 1] = g;
                                dst[(2 * oy + 1) * w + 2 * ox] = g;
                                dst[(2 * oy + 1) * w + 2 * ox + 1] = g;
                            }
                        }
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                Op::MaxPool2 { x, argmax } => {
                    let xs = self.value(*x).shape();
                    let [_, _, h, w] = xs;
                    let plane_out = (h / 2) * (w / 2);
                    let mut dx = Tensor::zeros(xs);
                    for (p, (src, dst)) in dy.data().chunks(plane_out).zip(dx.data_mut().chunks_mut(h * w)).enumerate() {
                        for (i, &g) in src.iter().enumerate() {
                            dst[argmax[p * plane_out + i] as usize] += g;
                        }
                    }
                    accumulate(&mut grads, *x, Some(dx));
                }
                &Op::Upsample2(x) => {
                    let xs = self.value(x).shape();
                    let [_, _, h, w] = xs;
                    let mut dx = Tensor::zeros(xs);
                    for (src, dst) in dy.data().chunks(4 * h * w).zip(dx.data_mut().chunks_mut(h * w)) {
                        for iy in 0..2 * h {
                            for ix in 0..2 * w {
                                dst[(iy / 2) * w + ix / 2] += src[iy * 2 * w + ix];
                            }
                        }
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                &Op::Concat(a, b) => {
                    let sa = self.value(a).shape();
                    let sb = self.value(b).shape();
                    let (la, lb) = (sa[1] * sa[2] * sa[3], sb[1] * sb[2] * sb[3]);
                    let mut da = self.rg(a).then(|| Vec::with_capacity(sa.iter().product()));
                    let mut db = self.rg(b).then(|| Vec::with_capacity(sb.iter().product()));
                    for chunk in dy.data().chunks(la + lb) {
                        if let Some(da) = da.as_mut() {
                            da.extend_from_slice(&chunk[..la]);
                        }
                        if let Some(db) = db.as_mut() {
                            db.extend_from_slice(&chunk[la..]);
                        }
                    }
                    accumulate(&mut grads, a, da.map(|d| Tensor::from_vec(sa, d)));
                    accumulate(&mut grads, b, db.map(|d| Tensor::from_vec(sb, d)));
                }
                &Op::Gram(x) => {
                    let xt = self.value(x);
                    let [n, c, h, w] = xt.shape();
                    let hw = h * w;
                    let norm = T::one() / T::from_usize(c * hw).unwrap();
                    let mut dx = Tensor::zeros(xt.shape());
                    for s in 0..n {
                        let g = &dy.data()[s * c * c..(s + 1) * c * c];
                        // (dG + dGᵀ)
                        let mut sym = vec![T::zero(); c * c];
                        for i in 0..c {
                            for j in 0..c {
                                sym[i * c + j] = g[i * c + j] + g[j * c + i];
                            }
                        }
                        gemm(
                            norm,
                            MatRef::new(&sym, c, c),
                            MatRef::new(xt.sample(s), c, hw),
                            T::zero(),
                            dx.sample_mut(s),
                            hw,
                        );
                    }
                    accumulate(&mut grads, x, Some(dx));
                }
                &Op::MeanSqDiff(a, b) => {
                    let n = T::from_usize(self.value(a).len()).unwrap();
                    let scale = dy.data()[0] * T::from_f64_lossy(2.0) / n;
                    self.sq_diff_grads(&mut grads, a, b, scale);
                }
                &Op::BatchSqDiff(a, b) => {
                    let n = T::from_usize(self.value(a).batch()).unwrap();
                    let scale = dy.data()[0] * T::from_f64_lossy(2.0) / n;
                    self.sq_diff_grads(&mut grads, a, b, scale);
                }
                &Op::L1(a, b, reduction) => {
                    let (at, bt) = (self.value(a), self.value(b));
                    let denom = match reduction {
                        L1Reduction::Sum => at.batch(),
                        L1Reduction::Mean => at.len(),
                    };
                    let scale = dy.data()[0] / T::from_usize(denom).unwrap();
                    let da: Vec<T> = at
                        .data()
                        .iter()
                        .zip(bt.data())
                        .map(|(&x, &y)| {
                            let d = x - y;
                            if d > T::zero() {
                                scale
                            } else if d < T::zero() {
                                -scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let shape = at.shape();
                    if self.rg(b) {
                        let db: Vec<T> = da.iter().map(|&v| -v).collect();
                        accumulate(&mut grads, b, Some(Tensor::from_vec(shape, db)));
                    }
                    if self.rg(a) {
                        accumulate(&mut grads, a, Some(Tensor::from_vec(shape, da)));
                    }
                }
                &Op::MeanLog { x, complement, eps } => {
                    let xt = self.value(x);
                    let scale = dy.data()[0] / T::from_usize(xt.len()).unwrap();
                    let hi = T::one() - eps;
                    let dx = xt.map(|s| {
                        if s < eps || s > hi {
                            T::zero()
                        } else if complement {
                            -scale / (T::one() - s)
                        } else {
                            scale / s
                        }
                    });
                    accumulate(&mut grads, x, Some(dx));
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if self.rg(v) {
                            let mut d = dy.clone();
                            d.scale(w);
                            accumulate(&mut grads, v, Some(d));
                        }
                    }
                }
            }
        }
        Gradients { grads }
    }

    fn sq_diff_grads(&self, grads: &mut [Option<Tensor<T>>], a: Var, b: Var, scale: T) {
        let (at, bt) = (self.value(a), self.value(b));
        let da: Vec<T> = at
            .data()
            .iter()
            .zip(bt.data())
            .map(|(&x, &y)| scale * (x - y))
            .collect();
        let shape = at.shape();
        if self.rg(b) {
            let db: Vec<T> = da.iter().map(|&v| -v).collect();
            accumulate(grads, b, Some(Tensor::from_vec(shape, db)));
        }
        if self.rg(a) {
            accumulate(grads, a, Some(Tensor::from_vec(shape, da)));
        }
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Option<Tensor<T>>) {
    let Some(g) = g else { return };
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sq_diff_sum<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> T {
    assert_eq!(a.shape(), b.shape(), "operands must share a shape");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum()
}

pub(crate) fn avg_pool2<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (h / 2, w / 2);
    let quarter = T::from_f64_lossy(0.25);
    let mut y = Tensor::zeros([n, c, ho, wo]);
    for (src, dst) in x.data().chunks(h * w).zip(y.data_mut().chunks_mut(ho * wo)) {
        for oy in 0..ho {
            for ox in 0..wo {
                let s = src[2 * oy * w + 2 * ox]
                    + src[2 * oy * w + 2 * ox + 1]
                    + src[(2 * oy + 1) * w + 2 * ox]
                    + src[(2 * oy + 1) * w + 2 * ox + 1];
                dst[oy * wo + ox] = s * quarter;
            }
        }
    }
    y
}

pub(crate) fn gram_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let norm = T::one() / T::from_usize(c * hw).unwrap();
    let mut y = Tensor::zeros([n, 1, c, c]);
    for s in 0..n {
        let psi = MatRef::new(x.sample(s), c, hw);
        gemm(norm, psi, psi.t(), T::zero(), y.sample_mut(s), c);
    }
    y
}
