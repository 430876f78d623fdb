//! Fully connected feed-forward networks with batched forward and backward
//! passes.
//!
//! Weights are stored row-major as `output_dim x input_dim`, so a layer
//! computes `act(W x + b)`. Batches are row-per-sample [`Matrix`] values.

use rand::Rng;
use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, Error, Result};

/// Row-major dense matrix; each row is one sample in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("matrix data", rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Stacks equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dim("matrix row", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

/// `C = A * B + beta * C` where every operand is described by row/column
/// strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: (&[f64], isize, isize),
    b: (&[f64], isize, isize),
    beta: f64,
    c: (&mut [f64], isize, isize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.0.len() >= m * k && b.0.len() >= k * n && c.0.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given shapes and
    // strides; callers pass contiguous row- or column-major views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.0.as_ptr(),
            a.1,
            a.2,
            b.0.as_ptr(),
            b.1,
            b.2,
            beta,
            c.0.as_mut_ptr(),
            c.1,
            c.2,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    input_dim: usize,
    output_dim: usize,
    /// `output_dim x input_dim`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    activation: Activation,
}

impl Layer {
    pub fn new(
        input_dim: usize,
        output_dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(Error::InvalidArgument("layer dimensions must be positive".into()));
        }
        check_dim("layer weights", input_dim * output_dim, weights.len())?;
        check_dim("layer bias", output_dim, bias.len())?;
        if !weights.iter().chain(&bias).all(|w| w.is_finite()) {
            return Err(Error::InvalidArgument("non-finite layer parameter".into()));
        }
        Ok(Self {
            input_dim,
            output_dim,
            weights,
            bias,
            activation,
        })
    }

    /// Zero weights and bias.
    pub fn zeros(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            weights: vec![0.0; input_dim * output_dim],
            bias: vec![0.0; output_dim],
            activation,
        }
    }

    /// Xavier-uniform weights, zero bias.
    pub fn xavier<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let bound = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weights = (0..input_dim * output_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            input_dim,
            output_dim,
            weights,
            bias: vec![0.0; output_dim],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }
}

/// Gradients for one layer, shaped like the layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Parameter gradients for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradients {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    /// Flat views in the same order as [`DenseNetwork::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|g| g.is_finite()))
    }
}

/// Activations recorded by a batched forward pass; input to the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `activations[0]` is the input batch, `activations[l + 1]` the output
    /// of layer `l`.
    activations: Vec<Matrix>,
}

impl ForwardPass {
    pub fn input(&self) -> &Matrix {
        &self.activations[0]
    }

    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("forward pass holds the input")
    }

    pub fn into_output(mut self) -> Matrix {
        self.activations.pop().expect("forward pass holds the input")
    }
}

/// Result of a batched backward pass.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    /// Parameter gradients summed over the batch.
    pub params: Option<Gradients>,
    /// Per-sample input gradients.
    pub input: Option<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Layer>,
}

impl DenseNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            check_dim("layer chaining", pair[0].output_dim, pair[1].input_dim)?;
        }
        Ok(Self { layers })
    }

    /// Xavier-initialised MLP. `dims` lists every width from input to output;
    /// hidden layers use `hidden`, the last layer uses `output`.
    pub fn xavier<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad network widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { output } else { hidden };
                Layer::xavier(w[0], w[1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    /// All-zero MLP with the given widths.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad network widths {dims:?}")));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::zeros(w[0], w[1], if i == last { output } else { hidden }))
            .collect();
        Self::new(layers)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Flat parameter views: weights then bias, layer by layer.
    pub fn parameters(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.parameters()
            .iter()
            .all(|s| s.iter().all(|p| p.is_finite()))
    }

    /// Single-sample inference.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward_batch(&batch)?.into_vec())
    }

    /// Batched inference without recording intermediates.
    pub fn forward_batch(&self, xs: &Matrix) -> Result<Matrix> {
        check_dim("network input", self.input_dim(), xs.cols())?;
        let mut current = xs.clone();
        for layer in &self.layers {
            current = layer_forward(layer, &current);
        }
        Ok(current)
    }

    /// Batched forward pass keeping every activation for [`Self::backward`].
    pub fn forward_pass(&self, xs: &Matrix) -> Result<ForwardPass> {
        check_dim("network input", self.input_dim(), xs.cols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(xs.clone());
        for layer in &self.layers {
            let next = layer_forward(layer, activations.last().unwrap());
            activations.push(next);
        }
        Ok(ForwardPass { activations })
    }

    /// Backpropagates `upstream` (gradient of a scalar loss with respect to
    /// the network output, one row per sample). Parameter gradients are
    /// summed across the batch.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        upstream: &Matrix,
        want_params: bool,
        want_input: bool,
    ) -> Result<BackwardPass> {
        check_dim("forward pass depth", self.layers.len() + 1, pass.activations.len())?;
        let batch = pass.input().rows();
        check_dim("upstream rows", batch, upstream.rows())?;
        check_dim("upstream cols", self.output_dim(), upstream.cols())?;

        let mut grads = want_params.then(|| Gradients::zeros_like(self));
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let out = &pass.activations[l + 1];
            let inp = &pass.activations[l];
            for (d, a) in delta.data.iter_mut().zip(&out.data) {
                *d *= layer.activation.derivative_from_output(*a);
            }
            if let Some(g) = grads.as_mut() {
                let lg = &mut g.layers[l];
                // dW = delta^T * inp
                gemm(
                    layer.output_dim,
                    batch,
                    layer.input_dim,
                    (&delta.data, 1, layer.output_dim as isize),
                    (&inp.data, layer.input_dim as isize, 1),
                    0.0,
                    (&mut lg.weights, layer.input_dim as isize, 1),
                );
                for row in delta.iter_rows() {
                    for (b, d) in lg.bias.iter_mut().zip(row) {
                        *b += d;
                    }
                }
            }
            if l == 0 && !want_input {
                break;
            }
            // delta_prev = delta * W
            let mut prev = Matrix::zeros(batch, layer.input_dim);
            gemm(
                batch,
                layer.output_dim,
                layer.input_dim,
                (&delta.data, layer.output_dim as isize, 1),
                (&layer.weights, layer.input_dim as isize, 1),
                0.0,
                (&mut prev.data, layer.input_dim as isize, 1),
            );
            delta = prev;
        }
        Ok(BackwardPass {
            params: grads,
            input: want_input.then_some(delta),
        })
    }

    /// Parameter gradients for one sample.
    pub fn backward_params(&self, x: &[f64], upstream: &[f64]) -> Result<Gradients> {
        let pass = self.forward_pass(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        Ok(self.backward(&pass, &up, true, false)?.params.unwrap())
    }

    /// Input gradient for one sample.
    pub fn backward_input(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let pass = self.forward_pass(&Matrix::from_vec(1, x.len(), x.to_vec())?)?;
        let up = Matrix::from_vec(1, upstream.len(), upstream.to_vec())?;
        Ok(self.backward(&pass, &up, false, true)?.input.unwrap().into_vec())
    }
}

fn layer_forward(layer: &Layer, input: &Matrix) -> Matrix {
    let batch = input.rows();
    let mut out = Matrix::zeros(batch, layer.output_dim);
    for r in 0..batch {
        out.row_mut(r).copy_from_slice(&layer.bias);
    }
    // out += input * W^T
    gemm(
        batch,
        layer.input_dim,
        layer.output_dim,
        (&input.data, layer.input_dim as isize, 1),
        (&layer.weights, 1, layer.input_dim as isize),
        1.0,
        (&mut out.data, layer.output_dim as isize, 1),
    );
    for v in out.data.iter_mut() {
        *v = layer.activation.apply(*v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_layer(n: usize, act: Activation) -> Layer {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Layer::new(n, n, w, vec![0.0; n], act).unwrap()
    }

    /// Straightforward triple loop used as the matrix-arithmetic oracle.
    fn naive_forward(net: &DenseNetwork, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in net.layers() {
            let mut next = vec![0.0; l.output_dim()];
            for (i, n) in next.iter_mut().enumerate() {
                let mut s = l.bias()[i];
                for j in 0..l.input_dim() {
                    s += l.weights()[i * l.input_dim() + j] * cur[j];
                }
                *n = l.activation().apply(s);
            }
            cur = next;
        }
        cur
    }

    #[test]
    fn identity_and_relu_layers() {
        let net = DenseNetwork::new(vec![identity_layer(2, Activation::Identity)]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
        let net = DenseNetwork::new(vec![identity_layer(2, Activation::Relu)]).unwrap();
        assert_eq!(net.forward(&[-1.0, 3.0]).unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net =
            DenseNetwork::xavier(&[5, 7, 3], Activation::Tanh, Activation::Identity, &mut rng)
                .unwrap();
        for b in net.layers_mut().iter_mut().flat_map(|l| l.bias_mut().iter_mut()) {
            *b = rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = net.forward(&x).unwrap();
        let slow = naive_forward(&net, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_rows_match_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = DenseNetwork::xavier(&[4, 6, 2], Activation::Relu, Activation::Sigmoid, &mut rng)
            .unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let out = net.forward_batch(&Matrix::from_rows(&rows).unwrap()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = net.forward(r).unwrap();
            for (a, b) in out.row(i).iter().zip(&single) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn linear_chain_rule() {
        let layer = Layer::new(1, 1, vec![3.0], vec![0.0], Activation::Identity).unwrap();
        let net = DenseNetwork::new(vec![layer]).unwrap();
        let g = net.backward_params(&[2.0], &[1.0]).unwrap();
        assert_eq!(g.layers[0].weights, vec![2.0]);
        assert_eq!(g.layers[0].bias, vec![1.0]);

        let layer = Layer::new(1, 1, vec![2.0], vec![0.0], Activation::Identity).unwrap();
        let net = DenseNetwork::new(vec![layer]).unwrap();
        assert_eq!(net.backward_input(&[-7.5], &[1.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = DenseNetwork::xavier(&[3, 4, 2], Activation::Tanh, Activation::Identity, &mut rng)
            .unwrap();
        let g = net.backward_params(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let net = DenseNetwork::zeros(&[3, 2], Activation::Relu, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(net.backward_input(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        let a = Layer::zeros(3, 4, Activation::Relu);
        let b = Layer::zeros(5, 2, Activation::Relu);
        assert!(DenseNetwork::new(vec![a, b]).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = DenseNetwork::xavier(&[8, 16, 4], Activation::Relu, Activation::Identity, &mut rng)
            .unwrap();
        let x: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
