//! Minimal dense network engine: specs, flat parameter vectors, and
//! forward/backward passes.
//!
//! Networks are plain MLPs described by a [`NetworkSpec`]. All weights of a
//! network live in one flat [`ParamVector`] whose [`ParamLayout`] records the
//! per-layer `(offset, rows, cols, bias offset)`; the flat form is the unit
//! of aggregation and transmission in the federated protocol, so parameter
//! averaging is a plain elementwise mean.
//!
//! Weight matrices are row-major with shape `(out, in)`; a layer computes
//! `a = act(x Wᵀ + b)`. [`backward`] returns both the parameter gradients and
//! the gradient with respect to the input, which is what lets the generator
//! receive gradients through a frozen discriminator and classifier.

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

/// Element-wise activation applied after a layer's affine transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => math::tanh(z),
            Activation::Sigmoid => math::sigmoid(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed in terms of the activation value `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// How downstream losses interpret the final layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputHead {
    /// Unnormalized per-class scores.
    Logits,
    /// A single probability in `(0, 1)` per sample.
    ScalarProb,
}

/// One dense layer: input width, output width, activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

/// Architecture of one network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    pub head: OutputHead,
}

impl NetworkSpec {
    /// Builds an MLP `input -> hidden... -> output`.
    pub fn mlp(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        head: OutputHead,
    ) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = input;
        for &h in hidden {
            layers.push(LayerSpec {
                input: prev,
                output: h,
                activation: hidden_activation,
            });
            prev = h;
        }
        layers.push(LayerSpec {
            input: prev,
            output,
            activation: output_activation,
        });
        NetworkSpec { layers, head }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("network spec", "at least one layer required"));
        }
        for layer in &self.layers {
            if layer.input == 0 || layer.output == 0 {
                return Err(Error::invalid("network spec", "layer widths must be > 0"));
            }
        }
        for w in self.layers.windows(2) {
            if w[0].output != w[1].input {
                return Err(Error::ShapeMismatch {
                    context: "network spec: consecutive layer widths",
                    expected: vec![w[0].output],
                    found: vec![w[1].input],
                });
            }
        }
        if self.head == OutputHead::ScalarProb {
            let last = self.layers.last().expect("non-empty");
            if last.output != 1 || last.activation != Activation::Sigmoid {
                return Err(Error::invalid(
                    "network spec",
                    "scalar-probability head requires a width-1 sigmoid output layer",
                ));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.input * l.output + l.output)
            .sum()
    }

    pub fn layout(&self) -> ParamLayout {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for l in &self.layers {
            let weight_offset = offset;
            let bias_offset = offset + l.input * l.output;
            offset = bias_offset + l.output;
            layers.push(LayerLayout {
                weight_offset,
                rows: l.output,
                cols: l.input,
                bias_offset,
            });
        }
        ParamLayout {
            layers,
            total: offset,
        }
    }
}

/// Location of one layer's weights and bias inside a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub weight_offset: usize,
    /// Output width.
    pub rows: usize,
    /// Input width.
    pub cols: usize,
    pub bias_offset: usize,
}

/// Per-layer layout records for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    layers: Vec<LayerLayout>,
    total: usize,
}

impl ParamLayout {
    pub fn layers(&self) -> &[LayerLayout] {
        &self.layers
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

/// Flat, layout-tagged collection of all weights of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: ParamLayout) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::ShapeMismatch {
                context: "parameter vector",
                expected: vec![layout.total()],
                found: vec![values.len()],
            });
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: ParamLayout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn weights(&self, l: LayerLayout) -> &[f64] {
        &self.values[l.weight_offset..l.weight_offset + l.rows * l.cols]
    }

    fn bias(&self, l: LayerLayout) -> &[f64] {
        &self.values[l.bias_offset..l.bias_offset + l.rows]
    }
}

/// Parameter gradients in the same flat layout as the [`ParamVector`] they
/// pair with.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    values: Vec<f64>,
    layout: ParamLayout,
}

impl Gradients {
    pub fn zeros(layout: ParamLayout) -> Self {
        Gradients {
            values: vec![0.0; layout.total()],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Adds `scale * other` into `self`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        debug_assert_eq!(self.layout, other.layout);
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            *dst += scale * src;
        }
    }
}

fn check_input(spec: &NetworkSpec, params: &ParamVector, input: &Tensor) -> Result<()> {
    if params.layout() != &spec.layout() {
        return Err(Error::ShapeMismatch {
            context: "forward: parameter layout",
            expected: vec![spec.param_count()],
            found: vec![params.len()],
        });
    }
    if input.cols() != spec.input_width() {
        return Err(Error::ShapeMismatch {
            context: "forward: input width",
            expected: vec![spec.input_width()],
            found: vec![input.cols()],
        });
    }
    Ok(())
}

/// `out[r] = act(x[r] Wᵀ + b)` for every row of `x`.
fn affine_activate(
    x: &[f64],
    batch: usize,
    in_w: usize,
    weights: &[f64],
    bias: &[f64],
    out_w: usize,
    activation: Activation,
    out: &mut [f64],
) {
    for r in 0..batch {
        let xr = &x[r * in_w..(r + 1) * in_w];
        let or = &mut out[r * out_w..(r + 1) * out_w];
        for (o, dst) in or.iter_mut().enumerate() {
            let wr = &weights[o * in_w..(o + 1) * in_w];
            let mut acc = bias[o];
            for (xv, wv) in xr.iter().zip(wr) {
                acc += xv * wv;
            }
            *dst = activation.apply(acc);
        }
    }
}

fn forward_activations(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
) -> Vec<Tensor> {
    let batch = input.rows();
    let mut acts: Vec<Tensor> = Vec::with_capacity(spec.layers.len());
    for (layer, ll) in spec.layers.iter().zip(params.layout().layers().iter()) {
        let x = if acts.is_empty() {
            input
        } else {
            acts.last().expect("non-empty")
        };
        let mut out = Tensor::zeros(vec![batch, layer.output]);
        affine_activate(
            x.data(),
            batch,
            layer.input,
            params.weights(*ll),
            params.bias(*ll),
            layer.output,
            layer.activation,
            out.data_mut(),
        );
        acts.push(out);
    }
    acts
}

/// Evaluates the network on a batch; output shape is `(batch, output width)`.
pub fn forward(spec: &NetworkSpec, params: &ParamVector, input: &Tensor) -> Result<Tensor> {
    check_input(spec, params, input)?;
    let mut acts = forward_activations(spec, params, input);
    Ok(acts.pop().expect("validated spec has at least one layer"))
}

/// Result of a reverse pass: parameter gradients plus the gradient with
/// respect to the network input.
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Gradients,
    pub input: Tensor,
}

/// Reverse-mode pass for `upstream · d(forward)/d(params, input)`.
///
/// `upstream` must have the shape of the forward output. The returned
/// gradients are linear in `upstream`.
pub fn backward(
    spec: &NetworkSpec,
    params: &ParamVector,
    input: &Tensor,
    upstream: &Tensor,
) -> Result<Backward> {
    check_input(spec, params, input)?;
    let batch = input.rows();
    if upstream.rows() != batch || upstream.cols() != spec.output_width() {
        return Err(Error::ShapeMismatch {
            context: "backward: upstream gradient",
            expected: vec![batch, spec.output_width()],
            found: vec![upstream.rows(), upstream.cols()],
        });
    }

    let acts = forward_activations(spec, params, input);
    let mut grads = Gradients::zeros(params.layout().clone());

    // delta = upstream ⊙ act'(a_L)
    let last = spec.layers.len() - 1;
    let mut delta: Vec<f64> = upstream
        .data()
        .iter()
        .zip(acts[last].data())
        .map(|(u, a)| u * spec.layers[last].activation.derivative_from_output(*a))
        .collect();

    let mut input_grad = Tensor::zeros(vec![batch, spec.input_width()]);
    for l in (0..spec.layers.len()).rev() {
        let layer = spec.layers[l];
        let ll = params.layout().layers()[l];
        let x: &[f64] = if l == 0 {
            input.data()
        } else {
            acts[l - 1].data()
        };
        let in_w = layer.input;
        let out_w = layer.output;

        {
            let (w_grad, rest) = grads.values_mut()[ll.weight_offset..].split_at_mut(in_w * out_w);
            let b_grad = &mut rest[..out_w];
            for r in 0..batch {
                let xr = &x[r * in_w..(r + 1) * in_w];
                let dr = &delta[r * out_w..(r + 1) * out_w];
                for (o, d) in dr.iter().enumerate() {
                    if *d == 0.0 {
                        continue;
                    }
                    let wg = &mut w_grad[o * in_w..(o + 1) * in_w];
                    for (g, xv) in wg.iter_mut().zip(xr) {
                        *g += d * xv;
                    }
                    b_grad[o] += d;
                }
            }
        }

        // Gradient flowing to this layer's input.
        let weights = params.weights(ll);
        let mut dx = vec![0.0; batch * in_w];
        for r in 0..batch {
            let dr = &delta[r * out_w..(r + 1) * out_w];
            let dxr = &mut dx[r * in_w..(r + 1) * in_w];
            for (o, d) in dr.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let wr = &weights[o * in_w..(o + 1) * in_w];
                for (g, wv) in dxr.iter_mut().zip(wr) {
                    *g += d * wv;
                }
            }
        }

        if l == 0 {
            input_grad.data_mut().copy_from_slice(&dx);
        } else {
            let prev_act = spec.layers[l - 1].activation;
            for (d, a) in dx.iter_mut().zip(acts[l - 1].data()) {
                *d *= prev_act.derivative_from_output(*a);
            }
            delta = dx;
        }
    }

    Ok(Backward {
        params: grads,
        input: input_grad,
    })
}

/// Seeded weight initialization: He-uniform before ReLU layers, Xavier-uniform
/// otherwise; biases start at zero.
pub fn init_params<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> ParamVector {
    let layout = spec.layout();
    let mut values = vec![0.0; layout.total()];
    for (layer, ll) in spec.layers.iter().zip(layout.layers().iter()) {
        let fan_in = layer.input as f64;
        let fan_out = layer.output as f64;
        let limit = match layer.activation {
            Activation::Relu => math::sqrt(6.0 / fan_in),
            _ => math::sqrt(6.0 / (fan_in + fan_out)),
        };
        let dist = Uniform::new_inclusive(-limit, limit);
        for w in values[ll.weight_offset..ll.weight_offset + ll.rows * ll.cols].iter_mut() {
            *w = dist.sample(rng);
        }
    }
    ParamVector { values, layout }
}
