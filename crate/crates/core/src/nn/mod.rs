//! Minimal dense-network engine.
//!
//! A [`DenseNet`] is a stack of affine layers with one activation for every
//! hidden layer and one for the output layer. Parameters live in a single
//! flat `Vec<f64>`; layer `k` stores its weight matrix (row-major, shape
//! `out x in`) followed by its bias. Gradients use the same flat layout, so
//! the optimizer, target-network averaging and checkpoints all work on plain
//! slices.
//!
//! Batched forward and backward passes go through ndarray views over the
//! flat storage.

mod adam;
mod checkpoint;
mod gradcheck;
mod policy;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, FD_STEP};
pub use policy::{GaussianPolicyOutput, LogStdBounds, SquashedGaussian};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    /// Logistic map onto (0, 1).
    Sigmoid,
}

/// `tanh` through a single `exp`, several times cheaper than libm's and
/// within a few ulp in absolute terms.
#[inline]
pub(crate) fn fast_tanh(z: f64) -> f64 {
    let t = (-2.0 * z.abs()).exp();
    ((1.0 - t) / (1.0 + t)).copysign(z)
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "linear",
            Activation::Sigmoid => "sigmoid",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Identity),
            "sigmoid" => Ok(Activation::Sigmoid),
            other => Err(Error::Parse(format!("unknown activation tag `{other}`"))),
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => fast_tanh(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
            Activation::Sigmoid => {
                if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    let e = z.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpan {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    dims: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Layer activations recorded during a batched forward pass.
///
/// `activations[0]` is the input batch, the last entry the network output.
#[derive(Debug, Clone)]
pub struct Tape {
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("tape always holds the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl DenseNet {
    /// Network with all parameters zero.
    pub fn zeros(dims: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidConfig(
                "a network needs at least an input and an output dimension".into(),
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "layer dimensions must be positive, got {dims:?}"
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(dims)],
        })
    }

    /// Fan-in scaled uniform initialization, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    /// for weights and biases alike.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, hidden, output)?;
        for span in net.spans() {
            let bound = 1.0 / (span.inputs as f64).sqrt();
            let end = span.bias + span.outputs;
            for p in &mut net.params[span.weights..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    /// `input -> hidden^depth -> output`.
    pub fn mlp<R: Rng + ?Sized>(
        input: usize,
        hidden_dim: usize,
        depth: usize,
        output: usize,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(depth + 2);
        dims.push(input);
        dims.extend(std::iter::repeat_n(hidden_dim, depth));
        dims.push(output);
        Self::new(&dims, Activation::Tanh, output_activation, rng)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroed buffer with the parameter layout.
    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.params.len()]
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn spans(&self) -> Vec<LayerSpan> {
        let mut offset = 0;
        self.dims
            .windows(2)
            .map(|w| {
                let span = LayerSpan {
                    inputs: w[0],
                    outputs: w[1],
                    weights: offset,
                    bias: offset + w[0] * w[1],
                };
                offset = span.bias + w[1];
                span
            })
            .collect()
    }

    fn activation_for(&self, layer: usize, n_layers: usize) -> Activation {
        if layer + 1 == n_layers {
            self.output
        } else {
            self.hidden
        }
    }

    fn weight_view(&self, span: &LayerSpan) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(
            (span.outputs, span.inputs),
            &self.params[span.weights..span.bias],
        )
        .expect("span matches layout")
    }

    fn bias_view(&self, span: &LayerSpan) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[span.bias..span.bias + span.outputs])
    }

    /// Single-sample forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("DenseNet::forward", self.input_dim(), input.len()));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    /// Row-per-sample batched forward pass.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dims(
                "DenseNet::forward_batch",
                self.input_dim(),
                input.ncols(),
            ));
        }
        let spans = self.spans();
        let mut current: Option<Array2<f64>> = None;
        for (k, span) in spans.iter().enumerate() {
            let x = current.as_ref().map(|a| a.view()).unwrap_or(input);
            let next = self.layer_forward(x, span, self.activation_for(k, spans.len()));
            current = Some(next);
        }
        Ok(current.expect("at least one layer"))
    }

    fn layer_forward(
        &self,
        x: ArrayView2<'_, f64>,
        span: &LayerSpan,
        act: Activation,
    ) -> Array2<f64> {
        let mut z = x.dot(&self.weight_view(span).t());
        z += &self.bias_view(span);
        z.mapv_inplace(|v| act.apply(v));
        z
    }

    /// Batched forward pass that keeps every layer's output for
    /// [`DenseNet::backward_tape`].
    pub fn forward_tape(&self, input: ArrayView2<'_, f64>) -> Result<Tape> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dims(
                "DenseNet::forward_tape",
                self.input_dim(),
                input.ncols(),
            ));
        }
        let spans = self.spans();
        let mut activations = Vec::with_capacity(spans.len() + 1);
        activations.push(input.to_owned());
        for (k, span) in spans.iter().enumerate() {
            let next = self.layer_forward(
                activations[k].view(),
                span,
                self.activation_for(k, spans.len()),
            );
            activations.push(next);
        }
        Ok(Tape { activations })
    }

    /// Backpropagates `upstream` (d loss / d output, one row per sample)
    /// through a recorded pass. Parameter gradients are *added* into
    /// `grads`; the gradient with respect to the input batch is returned.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        upstream: ArrayView2<'_, f64>,
        grads: &mut [f64],
    ) -> Result<Array2<f64>> {
        let out = tape.output();
        if upstream.dim() != out.dim() {
            return Err(Error::dims(
                "DenseNet::backward_tape (upstream columns)",
                out.ncols(),
                upstream.ncols(),
            ));
        }
        if grads.len() != self.params.len() {
            return Err(Error::dims(
                "DenseNet::backward_tape (gradient buffer)",
                self.params.len(),
                grads.len(),
            ));
        }
        let spans = self.spans();
        let n_layers = spans.len();
        let mut delta = upstream.to_owned();
        for k in (0..n_layers).rev() {
            let span = &spans[k];
            let act = self.activation_for(k, n_layers);
            let y = &tape.activations[k + 1];
            if act != Activation::Identity {
                ndarray::Zip::from(&mut delta)
                    .and(y)
                    .for_each(|d, &yv| *d *= act.derivative_from_output(yv));
            }
            let x = &tape.activations[k];
            let (head, tail) = grads.split_at_mut(span.bias);
            let mut gw = ArrayViewMut2::from_shape(
                (span.outputs, span.inputs),
                &mut head[span.weights..],
            )
            .expect("span matches layout");
            general_mat_mul(1.0, &delta.t(), x, 1.0, &mut gw);
            let mut gb = ArrayViewMut1::from(&mut tail[..span.outputs]);
            gb += &delta.sum_axis(Axis(0));
            delta = delta.dot(&self.weight_view(span));
        }
        Ok(delta)
    }

    /// Single-sample backward pass: exact gradients of `upstream . output`
    /// with respect to every parameter and the input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if input.len() != self.input_dim() {
            return Err(Error::dims("DenseNet::backward (input)", self.input_dim(), input.len()));
        }
        if upstream.len() != self.output_dim() {
            return Err(Error::dims(
                "DenseNet::backward (upstream)",
                self.output_dim(),
                upstream.len(),
            ));
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).expect("row vector");
        let tape = self.forward_tape(x)?;
        let mut grads = self.zero_grads();
        let dx = self.backward_tape(&tape, up, &mut grads)?;
        Ok((grads, dx.into_raw_vec_and_offset().0))
    }

    /// `self <- (1 - tau) * self + tau * online`, elementwise.
    pub fn soft_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if online.dims != self.dims {
            return Err(Error::dims(
                "DenseNet::soft_update_from",
                self.params.len(),
                online.params.len(),
            ));
        }
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = (1.0 - tau) * *t + tau * o;
        }
        Ok(())
    }
}

/// Stacks equally sized rows into a batch matrix.
pub fn batch_from_rows<'a, I>(rows: I, width: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut flat = Vec::new();
    let mut n = 0;
    for row in rows {
        debug_assert_eq!(row.len(), width);
        flat.extend_from_slice(row);
        n += 1;
    }
    Array2::from_shape_vec((n, width), flat).expect("rows have the declared width")
}

/// Copy of row `i`.
pub fn row(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn fast_tanh_tracks_libm() {
        for i in -4000..=4000 {
            let z = i as f64 * 0.005;
            assert!((fast_tanh(z) - z.tanh()).abs() < 1e-15, "{z}");
        }
        assert_eq!(fast_tanh(0.0), 0.0);
        assert_eq!(fast_tanh(800.0), 1.0);
        assert_eq!(fast_tanh(-800.0), -1.0);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = DenseNet::zeros(&[2, 2], Activation::Tanh, Activation::Identity).unwrap();
        net.params_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(net.forward(&[1.5, -2.0]).unwrap(), vec![1.5, -2.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = DenseNet::zeros(&[3, 5, 4], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.forward(&[0.3, -7.0, 2.0]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn two_layer_matches_hand_composition() {
        // 2 -> 2 (tanh) -> 1 (linear)
        let mut net = DenseNet::zeros(&[2, 2, 1], Activation::Tanh, Activation::Identity).unwrap();
        let p = net.params_mut();
        // W1 = [[0.5, -0.25], [0.1, 0.2]], b1 = [0.05, -0.1]
        p[..6].copy_from_slice(&[0.5, -0.25, 0.1, 0.2, 0.05, -0.1]);
        // W2 = [[1.5, -2.0]], b2 = [0.3]
        p[6..].copy_from_slice(&[1.5, -2.0, 0.3]);
        let x = [0.8, -0.4];
        // oracle, evaluated independently
        let h0 = (0.5f64 * 0.8 + -0.25 * -0.4 + 0.05).tanh();
        let h1 = (0.1f64 * 0.8 + 0.2 * -0.4 - 0.1).tanh();
        let expected = 1.5 * h0 - 2.0 * h1 + 0.3;
        let got = net.forward(&x).unwrap()[0];
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = DenseNet::zeros(&[3, 2], Activation::Tanh, Activation::Identity).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch { expected: 3, got: 1, .. })
        ));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_layer_weight_gradient_is_input_row() {
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, &mut rng()).unwrap();
        let x = [0.7, -1.1, 2.5];
        let (g, _) = net.backward(&x, &[0.0, 1.0]).unwrap();
        assert_eq!(&g[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&g[3..6], &x);
        assert_eq!(&g[6..8], &[0.0, 1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let net = DenseNet::new(&[3, 8, 2], Activation::Tanh, Activation::Identity, &mut rng()).unwrap();
        let (g, dx) = net.backward(&[0.1, 0.2, 0.3], &[0.0, 0.0]).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = DenseNet::new(&[3, 6, 6, 2], Activation::Tanh, Activation::Identity, &mut rng())
            .unwrap();
        let x = vec![0.3, -0.2, 0.9];
        let up = [0.7, -1.3];
        let (_, dx) = net.backward(&x, &up).unwrap();
        let f = |x: &[f64]| {
            let y = net.forward(x).unwrap();
            y[0] * up[0] + y[1] * up[1]
        };
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-5;
            xm[i] -= 1e-5;
            let fd = (f(&xp) - f(&xm)) / 2e-5;
            assert!((fd - dx[i]).abs() < 1e-8, "{fd} vs {}", dx[i]);
        }
    }

    #[test]
    fn batched_forward_matches_single() {
        let net = DenseNet::new(&[2, 5, 3], Activation::Relu, Activation::Sigmoid, &mut rng()).unwrap();
        let rows = [vec![0.1, 0.2], vec![-1.0, 3.0], vec![0.0, 0.0]];
        let batch = batch_from_rows(rows.iter().map(|r| r.as_slice()), 2);
        let out = net.forward_batch(batch.view()).unwrap();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(row(&out, i), net.forward(r).unwrap());
        }
    }

    proptest::proptest! {
        #[test]
        fn forward_is_bit_identical_across_calls(
            seed in 0u64..1000,
            hidden in 1usize..24,
            x in proptest::collection::vec(-3.0f64..3.0, 4),
        ) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let net = DenseNet::new(&[4, hidden, hidden, 3], Activation::Tanh, Activation::Identity, &mut r).unwrap();
            let a: Vec<u64> = net.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = net.forward(&x).unwrap().iter().map(|v| v.to_bits()).collect();
            proptest::prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn sigmoid_output_stays_in_unit_interval() {
        let mut net = DenseNet::new(&[1, 4, 1], Activation::Tanh, Activation::Sigmoid, &mut rng()).unwrap();
        for p in net.params_mut() {
            *p *= 100.0;
        }
        for x in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            let y = net.forward(&[x]).unwrap()[0];
            assert!((0.0..=1.0).contains(&y));
        }
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let net = DenseNet::new(&[16, 4], Activation::Tanh, Activation::Identity, &mut rng()).unwrap();
        assert!(net.params().iter().all(|p| p.abs() < 0.25));
        assert!(net.params().iter().any(|p| *p != 0.0));
    }

    #[test]
    fn soft_update_blends() {
        let mut rng = rng();
        let online = DenseNet::new(&[2, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut target = DenseNet::zeros(&[2, 3], Activation::Tanh, Activation::Identity).unwrap();
        target.soft_update_from(&online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
    }
}
