//! Minimal dense Q-network: exact backpropagation over a fixed feedforward
//! topology, plus an RMSProp optimizer.
//!
//! All arithmetic is `f64`. Hidden layers use ReLU; the output layer is
//! linear (raw Q-values). Parameters are stored per layer with weights in
//! input-major order (`weights[input * out_dim + output]`), which keeps the
//! inner loops of both passes contiguous over the output dimension.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::{Error, Result};

/// Hidden-layer activation. Only ReLU is supported; the output layer is
/// always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Width and activation of one hidden layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: Activation,
}

/// Topology of a Q-network: input width, hidden stack, and one linear output
/// per action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<HiddenLayer>,
    pub output_dim: usize,
}

impl NetworkSpec {
    /// Spec with ReLU hidden layers of the given widths.
    pub fn with_relu_hidden(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_layers: hidden
                .iter()
                .map(|&width| HiddenLayer {
                    width,
                    activation: Activation::Relu,
                })
                .collect(),
            output_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidConfig(
                "network input_dim must be >= 1".into(),
            ));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidConfig(
                "network output_dim must be >= 1".into(),
            ));
        }
        if self.hidden_layers.iter().any(|h| h.width == 0) {
            return Err(Error::InvalidConfig(
                "network hidden widths must be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// `(in_dim, out_dim)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 1);
        let mut prev = self.input_dim;
        for h in &self.hidden_layers {
            dims.push((prev, h.width));
            prev = h.width;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    /// Total parameter count (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|&(i, o)| i * o + o).sum()
    }
}

/// Dense row-major `rows x cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from row slices. Panics if rows have unequal lengths.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows in Matrix::from_rows");
            data.extend_from_slice(r);
        }
        Matrix {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    relu: bool,
    /// Input-major: `weights[k * out_dim + j]` connects input `k` to output `j`.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    /// `out = in * W + b`, ReLU applied when this is a hidden layer.
    fn forward_into(&self, input: &Matrix, out: &mut Matrix) {
        for r in 0..input.rows {
            let x = input.row(r);
            let z = out.row_mut(r);
            z.copy_from_slice(&self.biases);
            for (k, &xk) in x.iter().enumerate() {
                let wrow = &self.weights[k * self.out_dim..(k + 1) * self.out_dim];
                for (zj, &wkj) in z.iter_mut().zip(wrow) {
                    *zj += xk * wkj;
                }
            }
            if self.relu {
                for zj in z.iter_mut() {
                    if *zj < 0.0 {
                        *zj = 0.0;
                    }
                }
            }
        }
    }
}

/// Parameterized Q-function: `forward` maps observations to one value per
/// action.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Uniform initialization half-width `sqrt(6 / (fan_in + fan_out))`.
pub fn uniform_init_bound(fan_in: usize, fan_out: usize) -> f64 {
    math::sqrt(6.0 / (fan_in + fan_out) as f64)
}

impl Network {
    /// Deterministically initializes a network: weights uniform in
    /// `±uniform_init_bound(fan_in, fan_out)` drawn from a ChaCha stream
    /// seeded with `seed`, biases zero. The same `(spec, seed)` always
    /// produces bit-identical parameters.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let n_layers = dims.len();
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(idx, (in_dim, out_dim))| {
                let bound = uniform_init_bound(in_dim, out_dim);
                let weights = (0..in_dim * out_dim)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                Layer {
                    in_dim,
                    out_dim,
                    relu: idx + 1 < n_layers,
                    weights,
                    biases: vec![0.0; out_dim],
                }
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols != self.spec.input_dim {
            return Err(Error::ShapeMismatch {
                context: "forward input width",
                expected: self.spec.input_dim,
                got: batch.cols,
            });
        }
        Ok(())
    }

    /// Q-values for a batch of observations: `[batch x input_dim]` in,
    /// `[batch x output_dim]` out.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut cur = batch.clone();
        for layer in &self.layers {
            let mut next = Matrix::zeros(cur.rows, layer.out_dim);
            layer.forward_into(&cur, &mut next);
            cur = next;
        }
        Ok(cur)
    }

    /// Q-values for a single observation.
    pub fn forward_one(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix::from_rows(&[obs]);
        Ok(self.forward(&batch)?.data)
    }

    /// Exact gradient of `sum(upstream ⊙ forward(batch))` with respect to
    /// every parameter.
    pub fn backward(&self, batch: &Matrix, upstream: &Matrix) -> Result<GradientBuffer> {
        self.check_input(batch)?;
        if upstream.cols != self.spec.output_dim || upstream.rows != batch.rows {
            return Err(Error::ShapeMismatch {
                context: "backward upstream shape",
                expected: batch.rows * self.spec.output_dim,
                got: upstream.rows * upstream.cols,
            });
        }

        // Forward pass keeping post-activation values of every layer;
        // activations[0] is the input batch itself.
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &self.layers {
            let mut next = Matrix::zeros(batch.rows, layer.out_dim);
            layer.forward_into(activations.last().unwrap(), &mut next);
            activations.push(next);
        }

        let mut grads = GradientBuffer::zeros_like(self);
        let mut delta = upstream.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &activations[l];
            let block = &mut grads.blocks[l];
            for r in 0..delta.rows {
                let d = delta.row(r);
                let x = input.row(r);
                for (bj, &dj) in block.biases.iter_mut().zip(d) {
                    *bj += dj;
                }
                for (k, &xk) in x.iter().enumerate() {
                    let wrow = &mut block.weights[k * layer.out_dim..(k + 1) * layer.out_dim];
                    for (wkj, &dj) in wrow.iter_mut().zip(d) {
                        *wkj += xk * dj;
                    }
                }
            }
            if l > 0 {
                // delta for the previous layer, masked by its ReLU: a
                // post-activation of zero means the unit was clamped.
                let mut prev = Matrix::zeros(delta.rows, layer.in_dim);
                for r in 0..delta.rows {
                    let d = delta.row(r);
                    let a = input.row(r);
                    let p = prev.row_mut(r);
                    for (k, pk) in p.iter_mut().enumerate() {
                        if a[k] > 0.0 {
                            let wrow = &layer.weights[k * layer.out_dim..(k + 1) * layer.out_dim];
                            let mut acc = 0.0;
                            for (&wkj, &dj) in wrow.iter().zip(d) {
                                acc += wkj * dj;
                            }
                            *pk = acc;
                        }
                    }
                }
                delta = prev;
            }
        }
        Ok(grads)
    }

    /// All parameters flattened layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.biases);
        }
        out
    }

    /// Replaces all parameters from a flat slice in `flat_params` order.
    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::ShapeMismatch {
                context: "flat parameter vector",
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.biases.len();
            layer.biases.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }
}

/// One layer's worth of parameter-shaped values (gradients or optimizer
/// statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Per-parameter gradients, shape-congruent with a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer {
    pub blocks: Vec<ParamBlock>,
}

impl GradientBuffer {
    pub fn zeros_like(net: &Network) -> Self {
        GradientBuffer {
            blocks: net
                .layers
                .iter()
                .map(|l| ParamBlock {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
        }
    }

    /// Gradients flattened in the same order as [`Network::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend_from_slice(&b.weights);
            out.extend_from_slice(&b.biases);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.weights.iter().chain(&b.biases).all(|v| v.is_finite()))
    }
}

/// Flattens parameter blocks layerwise, weights before biases, matching
/// [`Network::flat_params`] order.
pub fn blocks_to_flat(blocks: &[ParamBlock]) -> Vec<f64> {
    let mut out = Vec::new();
    for b in blocks {
        out.extend_from_slice(&b.weights);
        out.extend_from_slice(&b.biases);
    }
    out
}

/// Inverse of [`blocks_to_flat`]; `values` must carry exactly the number of
/// entries the blocks hold.
pub fn blocks_from_flat(blocks: &mut [ParamBlock], values: &[f64]) -> Result<()> {
    let expected: usize = blocks
        .iter()
        .map(|b| b.weights.len() + b.biases.len())
        .sum();
    if values.len() != expected {
        return Err(Error::ShapeMismatch {
            context: "flat parameter blocks",
            expected,
            got: values.len(),
        });
    }
    let mut offset = 0;
    for b in blocks {
        let w = b.weights.len();
        b.weights.copy_from_slice(&values[offset..offset + w]);
        offset += w;
        let n = b.biases.len();
        b.biases.copy_from_slice(&values[offset..offset + n]);
        offset += n;
    }
    Ok(())
}

/// Default RMSProp decay for the squared-gradient average.
pub const RMSPROP_SMOOTHING: f64 = 0.95;
/// Default additive constant in the RMSProp divisor.
pub const RMSPROP_EPSILON: f64 = 1e-6;

/// Per-parameter RMSProp state: a decayed average of squared gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct RMSPropState {
    pub square_avg: Vec<ParamBlock>,
    pub smoothing: f64,
    pub divisor_epsilon: f64,
}

impl RMSPropState {
    /// Zero-initialized state congruent with `net`.
    pub fn new(net: &Network, smoothing: f64, divisor_epsilon: f64) -> Self {
        RMSPropState {
            square_avg: GradientBuffer::zeros_like(net).blocks,
            smoothing,
            divisor_epsilon,
        }
    }
}

/// One RMSProp update, in place:
///
/// ```text
/// s ← smoothing·s + (1 − smoothing)·g²
/// θ ← θ − lr·g / (sqrt(s) + divisor_epsilon)
/// ```
///
/// Rejects non-finite gradients before touching any state.
pub fn rmsprop_step(
    net: &mut Network,
    grads: &GradientBuffer,
    state: &mut RMSPropState,
    lr: f64,
) -> Result<()> {
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            context: "rmsprop gradient",
        });
    }
    let rho = state.smoothing;
    let eps = state.divisor_epsilon;
    for ((layer, grad), avg) in net
        .layers
        .iter_mut()
        .zip(&grads.blocks)
        .zip(&mut state.square_avg)
    {
        update_params(
            &mut layer.weights,
            &grad.weights,
            &mut avg.weights,
            rho,
            eps,
            lr,
        );
        update_params(
            &mut layer.biases,
            &grad.biases,
            &mut avg.biases,
            rho,
            eps,
            lr,
        );
    }
    Ok(())
}

fn update_params(theta: &mut [f64], g: &[f64], s: &mut [f64], rho: f64, eps: f64, lr: f64) {
    for ((t, &gi), si) in theta.iter_mut().zip(g).zip(s.iter_mut()) {
        *si = rho * *si + (1.0 - rho) * gi * gi;
        *t -= lr * gi / (math::sqrt(*si) + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_net(spec: &NetworkSpec, params: &[f64]) -> Network {
        let mut net = Network::init(spec, 0).unwrap();
        net.set_flat_params(params).unwrap();
        net
    }

    #[test]
    fn init_zero_hidden_has_zero_biases() {
        let spec = NetworkSpec::with_relu_hidden(3, &[], 2);
        let net = Network::init(&spec, 0).unwrap();
        assert_eq!(net.layers.len(), 1);
        assert!(net.layers[0].biases.iter().all(|&b| b == 0.0));
        assert!(!net.layers[0].relu);
    }

    #[test]
    fn init_is_deterministic() {
        let spec = NetworkSpec::with_relu_hidden(4, &[8, 8], 2);
        let a = Network::init(&spec, 7).unwrap();
        let b = Network::init(&spec, 7).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        let c = Network::init(&spec, 8).unwrap();
        assert_ne!(a.flat_params(), c.flat_params());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn init_bound_matches_fan_formula() {
        // fan_in 4, fan_out 8 -> sqrt(6/12) = sqrt(0.5)
        let bound = uniform_init_bound(4, 8);
        assert!((bound - 0.7071067811865476).abs() < 1e-15);
        let spec = NetworkSpec::with_relu_hidden(4, &[8], 2);
        let net = Network::init(&spec, 3).unwrap();
        for &w in &net.layers[0].weights {
            assert!(w.abs() <= bound);
        }
    }

    #[test]
    fn forward_single_weight_linear() {
        let spec = NetworkSpec::with_relu_hidden(1, &[], 1);
        let net = hand_net(&spec, &[2.0, 0.0]);
        let out = net.forward_one(&[3.0]).unwrap();
        assert_eq!(out, vec![6.0]);
    }

    #[test]
    fn forward_zero_params_gives_zero_output() {
        let spec = NetworkSpec::with_relu_hidden(3, &[4], 2);
        let net = hand_net(&spec, &vec![0.0; spec.param_count()]);
        let out = net.forward_one(&[1.0, -2.0, 0.5]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_hand_computation() {
        // in=2, hidden=[2] relu, out=1.
        // W1 = [[1.0, -1.0], [0.5, 2.0]] (input-major), b1 = [0.25, -0.5]
        // W2 = [[2.0], [1.0]], b2 = [0.125]
        // x = [1.0, 2.0]:
        //   z1 = [1*1 + 2*0.5 + 0.25, 1*(-1) + 2*2 - 0.5] = [2.25, 2.5]
        //   a1 = relu(z1) = [2.25, 2.5]
        //   y  = 2.25*2 + 2.5*1 + 0.125 = 7.125
        let spec = NetworkSpec::with_relu_hidden(2, &[2], 1);
        let net = hand_net(&spec, &[1.0, -1.0, 0.5, 2.0, 0.25, -0.5, 2.0, 1.0, 0.125]);
        let out = net.forward_one(&[1.0, 2.0]).unwrap();
        assert_eq!(out, vec![7.125]);

        // x = [-1.0, 0.5]: z1 = [-1 + 0.25 + 0.25, 1 + 1 - 0.5] = [-0.5, 1.5]
        //   a1 = [0, 1.5], y = 1.5 + 0.125 = 1.625
        let out = net.forward_one(&[-1.0, 0.5]).unwrap();
        assert_eq!(out, vec![1.625]);
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let spec = NetworkSpec::with_relu_hidden(3, &[], 1);
        let net = Network::init(&spec, 0).unwrap();
        assert!(matches!(
            net.forward_one(&[1.0, 2.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn backward_linear_weight_gradient_is_input() {
        let spec = NetworkSpec::with_relu_hidden(1, &[], 1);
        let net = hand_net(&spec, &[0.7, 0.0]);
        let batch = Matrix::from_rows(&[&[3.0]]);
        let upstream = Matrix::from_rows(&[&[1.0]]);
        let grads = net.backward(&batch, &upstream).unwrap();
        assert_eq!(grads.blocks[0].weights, vec![3.0]);
        assert_eq!(grads.blocks[0].biases, vec![1.0]);
    }

    #[test]
    fn backward_dead_relu_blocks_gradient() {
        // One hidden unit with negative pre-activation: no gradient reaches
        // its incoming weights.
        let spec = NetworkSpec::with_relu_hidden(1, &[1], 1);
        // W1 = [-1], b1 = [0], W2 = [1], b2 = [0]; x = 2 -> z1 = -2 -> a1 = 0
        let net = hand_net(&spec, &[-1.0, 0.0, 1.0, 0.0]);
        let batch = Matrix::from_rows(&[&[2.0]]);
        let upstream = Matrix::from_rows(&[&[1.0]]);
        let grads = net.backward(&batch, &upstream).unwrap();
        assert_eq!(grads.blocks[0].weights, vec![0.0]);
        assert_eq!(grads.blocks[0].biases, vec![0.0]);
        // The second layer still sees its (zero) input, so dW2 = a1 = 0 and
        // db2 = 1.
        assert_eq!(grads.blocks[1].weights, vec![0.0]);
        assert_eq!(grads.blocks[1].biases, vec![1.0]);
    }

    #[test]
    fn backward_rejects_upstream_shape_mismatch() {
        let spec = NetworkSpec::with_relu_hidden(2, &[], 2);
        let net = Network::init(&spec, 0).unwrap();
        let batch = Matrix::from_rows(&[&[1.0, 2.0]]);
        let upstream = Matrix::from_rows(&[&[1.0]]);
        assert!(net.backward(&batch, &upstream).is_err());
    }

    /// Central finite differences of `sum(upstream ⊙ forward)` over every
    /// parameter; independent of the analytic path.
    fn finite_difference_grads(
        net: &Network,
        batch: &Matrix,
        upstream: &Matrix,
        step: f64,
    ) -> Vec<f64> {
        let objective = |net: &Network| -> f64 {
            let out = net.forward(batch).unwrap();
            out.as_slice()
                .iter()
                .zip(upstream.as_slice())
                .map(|(&o, &u)| o * u)
                .sum()
        };
        let base = net.flat_params();
        let mut probe = net.clone();
        let mut grads = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + step;
            probe.set_flat_params(&p).unwrap();
            let plus = objective(&probe);
            p[i] = base[i] - step;
            probe.set_flat_params(&p).unwrap();
            let minus = objective(&probe);
            grads.push((plus - minus) / (2.0 * step));
        }
        probe.set_flat_params(&base).unwrap();
        grads
    }

    /// Smallest |pre-activation| over all hidden units, computed by an
    /// independent forward pass over the flat parameters. Gradient checks
    /// must stay away from relu kinks: a unit within the finite-difference
    /// step of zero flips state under perturbation, making the objective
    /// non-differentiable there.
    fn min_hidden_preact_magnitude(net: &Network, batch: &Matrix) -> f64 {
        let dims = net.spec().layer_dims();
        let params = net.flat_params();
        let mut min_abs = f64::INFINITY;
        for row in 0..batch.rows() {
            let mut x: Vec<f64> = batch.row(row).to_vec();
            let mut offset = 0;
            for (li, &(in_dim, out_dim)) in dims.iter().enumerate() {
                let w = &params[offset..offset + in_dim * out_dim];
                let b = &params[offset + in_dim * out_dim..offset + in_dim * out_dim + out_dim];
                offset += in_dim * out_dim + out_dim;
                let mut z = b.to_vec();
                for (k, &xk) in x.iter().enumerate() {
                    for (j, zj) in z.iter_mut().enumerate() {
                        *zj += xk * w[k * out_dim + j];
                    }
                }
                if li + 1 < dims.len() {
                    for zj in &mut z {
                        min_abs = min_abs.min(zj.abs());
                        if *zj < 0.0 {
                            *zj = 0.0;
                        }
                    }
                }
                x = z;
            }
        }
        min_abs
    }

    /// Random (net, batch, upstream) triple whose hidden pre-activations all
    /// sit well clear of the relu kink.
    fn kink_free_case(rng: &mut ChaCha8Rng, max_hidden_layers: usize) -> (Network, Matrix, Matrix) {
        for _ in 0..100 {
            let input_dim = rng.gen_range(1..5);
            let hidden: Vec<usize> = (0..rng.gen_range(0..=max_hidden_layers))
                .map(|_| rng.gen_range(1..6))
                .collect();
            let output_dim = rng.gen_range(1..4);
            let spec = NetworkSpec::with_relu_hidden(input_dim, &hidden, output_dim);
            let net = Network::init(&spec, rng.gen()).unwrap();

            let rows = rng.gen_range(1..4);
            let batch = Matrix::from_vec(
                rows,
                input_dim,
                (0..rows * input_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            );
            let upstream = Matrix::from_vec(
                rows,
                output_dim,
                (0..rows * output_dim)
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect(),
            );
            if min_hidden_preact_magnitude(&net, &batch) > 3e-3 {
                return (net, batch, upstream);
            }
        }
        panic!("no kink-free case found in 100 draws");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..20 {
            let (net, batch, upstream) = kink_free_case(&mut rng, 2);
            let analytic = net.backward(&batch, &upstream).unwrap().flat();
            let numeric = finite_difference_grads(&net, &batch, &upstream, 1e-5);
            for (&a, &n) in analytic.iter().zip(&numeric) {
                let denom = a.abs().max(n.abs()).max(1e-6);
                assert!(
                    (a - n).abs() / denom < 1e-4,
                    "case {case}: analytic {a} vs numeric {n}"
                );
            }
        }
    }

    #[test]
    fn rmsprop_zero_gradient_leaves_params() {
        let spec = NetworkSpec::with_relu_hidden(2, &[3], 2);
        let mut net = Network::init(&spec, 5).unwrap();
        let before = net.flat_params();
        let grads = GradientBuffer::zeros_like(&net);
        let mut state = RMSPropState::new(&net, RMSPROP_SMOOTHING, RMSPROP_EPSILON);
        // Seed the average with something positive so decay is observable.
        state.square_avg[0].weights[0] = 1.0;
        rmsprop_step(&mut net, &grads, &mut state, 0.1).unwrap();
        assert_eq!(net.flat_params(), before);
        assert!((state.square_avg[0].weights[0] - RMSPROP_SMOOTHING).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_scalar_recurrence() {
        // theta = 0, g = 1, s = 0, smoothing 0.95, eps 1e-6, lr 0.1:
        //   s <- 0.05, theta <- -0.1 / (sqrt(0.05) + 1e-6)
        let spec = NetworkSpec::with_relu_hidden(1, &[], 1);
        let mut net = hand_net(&spec, &[0.0, 0.0]);
        let mut grads = GradientBuffer::zeros_like(&net);
        grads.blocks[0].weights[0] = 1.0;
        let mut state = RMSPropState::new(&net, 0.95, 1e-6);
        rmsprop_step(&mut net, &grads, &mut state, 0.1).unwrap();
        assert!((state.square_avg[0].weights[0] - 0.05).abs() < 1e-15);
        let theta = net.flat_params()[0];
        assert!((theta - (-0.44721)).abs() < 1e-5);
        assert!((theta - (-0.1 / (0.05f64.sqrt() + 1e-6))).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_shrinks_step_once_average_grows() {
        // With s > 1 the effective step lr/(sqrt(s)+eps) is below plain lr.
        let spec = NetworkSpec::with_relu_hidden(1, &[], 1);
        let mut net = hand_net(&spec, &[0.0, 0.0]);
        let mut grads = GradientBuffer::zeros_like(&net);
        grads.blocks[0].weights[0] = 10.0;
        let mut state = RMSPropState::new(&net, 0.5, 1e-6);
        let lr = 0.1;
        rmsprop_step(&mut net, &grads, &mut state, lr).unwrap();
        let first = net.flat_params()[0];
        rmsprop_step(&mut net, &grads, &mut state, lr).unwrap();
        let second_step = (net.flat_params()[0] - first).abs();
        assert!(state.square_avg[0].weights[0] > 1.0);
        assert!(second_step < lr * 10.0);
        assert!(second_step < first.abs());
    }

    #[test]
    fn rmsprop_rejects_non_finite_gradient() {
        let spec = NetworkSpec::with_relu_hidden(1, &[], 1);
        let mut net = Network::init(&spec, 0).unwrap();
        let before = net.flat_params();
        let mut grads = GradientBuffer::zeros_like(&net);
        grads.blocks[0].weights[0] = f64::NAN;
        let mut state = RMSPropState::new(&net, 0.95, 1e-6);
        assert!(matches!(
            rmsprop_step(&mut net, &grads, &mut state, 0.1),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(net.flat_params(), before);
        assert_eq!(state.square_avg[0].weights[0], 0.0);
    }

    #[test]
    fn flat_params_roundtrip() {
        let spec = NetworkSpec::with_relu_hidden(3, &[5, 4], 2);
        let net = Network::init(&spec, 11).unwrap();
        let mut other = Network::init(&spec, 99).unwrap();
        other.set_flat_params(&net.flat_params()).unwrap();
        assert_eq!(net, other);
    }

    #[test]
    fn block_flattening_roundtrip() {
        let spec = NetworkSpec::with_relu_hidden(3, &[5, 4], 2);
        let net = Network::init(&spec, 11).unwrap();
        let mut state = RMSPropState::new(&net, 0.95, 1e-6);
        let values: Vec<f64> = (0..net.param_count()).map(|i| i as f64 * 0.5).collect();
        blocks_from_flat(&mut state.square_avg, &values).unwrap();
        assert_eq!(blocks_to_flat(&state.square_avg), values);
        let short = vec![0.0; net.param_count() - 1];
        assert!(blocks_from_flat(&mut state.square_avg, &short).is_err());
    }
}
