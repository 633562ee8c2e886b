use rand::Rng;

use super::graph::{Graph, Gradients, Var};
use crate::tensor::{Real, Tensor};

/// Named parameter arrays of one network, in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> usize {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor<T> {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Tensor::all_finite)
    }

    /// Places every parameter on the tape, trainable or frozen.
    pub fn bind<'a>(&'a self, g: &mut Graph<'a, T>, trainable: bool) -> Vec<Var> {
        self.values
            .iter()
            .map(|t| if trainable { g.param(t) } else { g.constant(t) })
            .collect()
    }

    /// Gradients for each parameter, zero-filled where the tape produced none.
    pub fn collect_grads(&self, grads: &mut Gradients<T>, bound: &[Var]) -> Vec<Tensor<T>> {
        bound
            .iter()
            .zip(&self.values)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
        }
    }
}

/// A convolution whose weight (and optional bias) live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvLayer {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    weight: usize,
    bias: Option<usize>,
}

impl ConvLayer {
    /// Registers a Gaussian(0, `std`)-initialized weight and a zero bias (if requested).
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let weight = store.push(
            format!("{name}.weight"),
            Tensor::randn([out_channels, in_channels, kernel, kernel], std, rng),
        );
        let bias = bias.then(|| store.push(format!("{name}.bias"), Tensor::zeros([1, out_channels, 1, 1])));
        Self {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn has_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn weight_index(&self) -> usize {
        self.weight
    }

    pub fn bias_index(&self) -> Option<usize> {
        self.bias
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<'_, T>, bound: &[Var], x: Var) -> Var {
        g.conv2d(x, bound[self.weight], self.bias.map(|b| bound[b]), self.stride, self.pad)
    }

    /// One-line description used for architecture fingerprints and audits.
    pub fn describe(&self) -> String {
        format!(
            "{}:{}->{}:k{}:s{}:p{}:{}",
            self.name,
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.pad,
            if self.has_bias() { "b" } else { "nb" }
        )
    }
}
