//! Minimal dense-network engine.
//!
//! Networks are plain multi-layer perceptrons with rectifier hidden units and a
//! linear or logistic output layer. A network can optionally take an auxiliary
//! action vector that is concatenated onto the input of one layer, which is how
//! state-action critics are built. Everything is batched: a batch is a
//! row-major `batch x width` slice of `f64`.

use std::io::{BufRead, Write};

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NeuralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    Logistic,
}

impl Activation {
    pub fn tag(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
            Activation::Logistic => "logistic",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            "logistic" => Some(Activation::Logistic),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
            Activation::Logistic => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
            Activation::Logistic => y * (1.0 - y),
        }
    }
}

/// Where an auxiliary action vector enters the network: it is appended to the
/// input of `layers[layer]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionInjection {
    pub layer: usize,
    pub width: usize,
}

/// Architecture description used to build a fresh network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub output_activation: Activation,
    pub action_injection: Option<ActionInjection>,
}

impl MlpShape {
    pub fn new(
        input: usize,
        hidden: &[usize],
        output: usize,
        output_activation: Activation,
    ) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            output_activation,
            action_injection: None,
        }
    }

    pub fn with_action(mut self, layer: usize, width: usize) -> Self {
        self.action_injection = Some(ActionInjection { layer, width });
        self
    }
}

/// One affine layer; `weights` is `outputs x inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }
}

/// Draws a `outputs x inputs` weight matrix from the Glorot uniform distribution.
pub fn init_glorot<R: Rng + ?Sized>(
    inputs: usize,
    outputs: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if inputs == 0 || outputs == 0 {
        return Err(NeuralError::InvalidShape(format!(
            "glorot init needs positive dimensions, got {inputs}x{outputs}"
        )));
    }
    let limit = (6.0 / (inputs + outputs) as f64).sqrt();
    Ok((0..inputs * outputs)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    output_activation: Activation,
    action_injection: Option<ActionInjection>,
}

/// Per-layer activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    batch: usize,
    /// Input of every layer, including any injected action columns.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
    widths: Vec<(usize, usize)>,
}

impl Trace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network output, `batch x outputs`.
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn into_output(self) -> Vec<f64> {
        self.output
    }

    pub fn pre_activations(&self, layer: usize) -> &[f64] {
        &self.pre[layer]
    }

    pub fn layer_input(&self, layer: usize) -> &[f64] {
        &self.inputs[layer]
    }
}

/// Gradient buffers with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.weights.iter_mut().for_each(|g| *g *= factor);
            layer.bias.iter_mut().for_each(|g| *g *= factor);
        }
    }

    /// Adds the gradient of `coeff * sum(w^2)` over all weight matrices
    /// (biases are not decayed).
    pub fn add_l2(&mut self, net: &Mlp, coeff: f64) -> Result<()> {
        check_same_shape(&self.layers, &net.layers)?;
        for (g, l) in self.layers.iter_mut().zip(&net.layers) {
            for (gw, w) in g.weights.iter_mut().zip(&l.weights) {
                *gw += 2.0 * coeff * w;
            }
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&g| g == 0.0))
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub params: Gradients,
    /// Gradient with respect to the network input, `batch x input`.
    pub input: Vec<f64>,
    /// Gradient with respect to the injected action, `batch x action width`.
    pub action: Option<Vec<f64>>,
}

/// Magnitude below which back-propagated errors and optimizer moments are
/// set to zero.
const FLUSH_BELOW: f64 = 1e-200;

/// A saturated logistic output drives errors and moments toward zero; once
/// their products turn subnormal, arithmetic slows down by orders of
/// magnitude.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < FLUSH_BELOW {
        0.0
    } else {
        x
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.weights);
        out.extend_from_slice(&l.bias);
    }
    out
}

fn check_same_shape(a: &[Layer], b: &[Layer]) -> Result<()> {
    let same = a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| x.inputs == y.inputs && x.outputs == y.outputs);
    if same {
        Ok(())
    } else {
        Err(NeuralError::InvalidShape("parameter shapes differ".into()))
    }
}

/// `c = a * b (+ c if accumulate)` for row-major `a: m x k`, `b: k x n`, with
/// explicit strides so transposed views need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (isize, isize),
    b: &[f64],
    b_strides: (isize, isize),
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: strides describe matrices fully contained in the given slices,
    // which the callers guarantee through their shape checks.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0,
            a_strides.1,
            b.as_ptr(),
            b_strides.0,
            b_strides.1,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Mlp {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(shape: &MlpShape, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        for layer in &mut net.layers {
            layer.weights = init_glorot(layer.inputs, layer.outputs, rng)?;
        }
        Ok(net)
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeros(shape: &MlpShape) -> Result<Self> {
        if shape.input == 0 || shape.output == 0 || shape.hidden.contains(&0) {
            return Err(NeuralError::InvalidShape(format!(
                "layer widths must be positive: {shape:?}"
            )));
        }
        let mut widths = vec![shape.input];
        widths.extend_from_slice(&shape.hidden);
        widths.push(shape.output);
        let depth = widths.len() - 1;
        if let Some(inj) = shape.action_injection {
            if inj.layer >= depth || inj.width == 0 {
                return Err(NeuralError::InvalidShape(format!(
                    "action injection {inj:?} does not fit a {depth}-layer network"
                )));
            }
        }
        let layers = (0..depth)
            .map(|k| {
                let extra = match shape.action_injection {
                    Some(inj) if inj.layer == k => inj.width,
                    _ => 0,
                };
                Layer::zeros(widths[k] + extra, widths[k + 1])
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation: Activation::Relu,
            output_activation: shape.output_activation,
            action_injection: shape.action_injection,
        })
    }

    /// Assembles a network from explicit layers, validating that shapes chain.
    pub fn from_layers(
        layers: Vec<Layer>,
        hidden_activation: Activation,
        output_activation: Activation,
        action_injection: Option<ActionInjection>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(NeuralError::InvalidShape("network has no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.inputs == 0
                || l.outputs == 0
                || l.weights.len() != l.inputs * l.outputs
                || l.bias.len() != l.outputs
            {
                return Err(NeuralError::InvalidShape(format!(
                    "layer {k} is inconsistent"
                )));
            }
            let extra = match action_injection {
                Some(inj) if inj.layer == k => inj.width,
                _ => 0,
            };
            if k > 0 && layers[k - 1].outputs + extra != l.inputs {
                return Err(NeuralError::InvalidShape(format!(
                    "layer {k} expects {} inputs but receives {}",
                    l.inputs,
                    layers[k - 1].outputs + extra
                )));
            }
            if k == 0 && extra >= l.inputs {
                return Err(NeuralError::InvalidShape(
                    "action wider than first layer input".into(),
                ));
            }
        }
        if let Some(inj) = action_injection {
            if inj.layer >= layers.len() || inj.width == 0 {
                return Err(NeuralError::InvalidShape(format!(
                    "bad action injection {inj:?}"
                )));
            }
        }
        Ok(Self {
            layers,
            hidden_activation,
            output_activation,
            action_injection,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn action_injection(&self) -> Option<ActionInjection> {
        self.action_injection
    }

    pub fn input_width(&self) -> usize {
        let first = self.layers[0].inputs;
        match self.action_injection {
            Some(inj) if inj.layer == 0 => first - inj.width,
            _ => first,
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn action_width(&self) -> usize {
        self.action_injection.map_or(0, |inj| inj.width)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(NeuralError::InvalidShape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.weights.len());
            l.weights.copy_from_slice(w);
            let (b, r) = r.split_at(l.bias.len());
            l.bias.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn widths(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.inputs, l.outputs)).collect()
    }

    /// Forward pass over a single sample.
    pub fn forward(&self, input: &[f64], action: Option<&[f64]>) -> Result<Trace> {
        self.forward_batch(input, action)
    }

    /// Output for a single sample (or batch) without keeping the trace.
    pub fn predict(&self, input: &[f64], action: Option<&[f64]>) -> Result<Vec<f64>> {
        Ok(self.forward_batch(input, action)?.into_output())
    }

    /// Forward pass over a row-major batch of inputs (and actions, when the
    /// network takes them).
    pub fn forward_batch(&self, inputs: &[f64], actions: Option<&[f64]>) -> Result<Trace> {
        let in_width = self.input_width();
        if inputs.is_empty() || !inputs.len().is_multiple_of(in_width) {
            return Err(NeuralError::InvalidShape(format!(
                "input of length {} is not a batch of width {in_width}",
                inputs.len()
            )));
        }
        let batch = inputs.len() / in_width;
        match (self.action_injection, actions) {
            (Some(inj), Some(a)) if a.len() == batch * inj.width => {}
            (None, None) => {}
            (Some(inj), Some(a)) => {
                return Err(NeuralError::InvalidShape(format!(
                    "action of length {} does not match batch {batch} x width {}",
                    a.len(),
                    inj.width
                )))
            }
            (Some(_), None) => {
                return Err(NeuralError::InvalidShape(
                    "network requires an action input".into(),
                ))
            }
            (None, Some(_)) => {
                return Err(NeuralError::InvalidShape(
                    "network takes no action input".into(),
                ))
            }
        }

        let depth = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        let mut current = inputs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let x = match (self.action_injection, actions) {
                (Some(inj), Some(a)) if inj.layer == k => {
                    let prev = layer.inputs - inj.width;
                    let mut joined = Vec::with_capacity(batch * layer.inputs);
                    for b in 0..batch {
                        joined.extend_from_slice(&current[b * prev..(b + 1) * prev]);
                        joined.extend_from_slice(&a[b * inj.width..(b + 1) * inj.width]);
                    }
                    joined
                }
                _ => current,
            };
            let mut z = vec![0.0; batch * layer.outputs];
            gemm(
                batch,
                layer.inputs,
                layer.outputs,
                &x,
                (layer.inputs as isize, 1),
                &layer.weights,
                (1, layer.inputs as isize),
                &mut z,
                false,
            );
            for row in z.chunks_exact_mut(layer.outputs) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let act = self.activation(k);
            let y: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            layer_inputs.push(x);
            pre.push(z);
            current = y;
        }
        Ok(Trace {
            batch,
            inputs: layer_inputs,
            pre,
            output: current,
            widths: self.widths(),
        })
    }

    /// Gradients of `0.5 * sample_weight * |error|^2`, summed over the batch,
    /// where `output_error` is `output - target` for every row.
    pub fn backward(
        &self,
        trace: &Trace,
        output_error: &[f64],
        sample_weight: f64,
    ) -> Result<Backprop> {
        let weights = vec![sample_weight; trace.batch];
        self.backward_weighted(trace, output_error, &weights)
    }

    /// As [`Mlp::backward`] with one weight per batch row.
    pub fn backward_weighted(
        &self,
        trace: &Trace,
        output_error: &[f64],
        sample_weights: &[f64],
    ) -> Result<Backprop> {
        if trace.widths != self.widths() {
            return Err(NeuralError::InvalidShape(
                "trace was produced by a network of a different shape".into(),
            ));
        }
        let batch = trace.batch;
        let out_width = self.output_width();
        if output_error.len() != batch * out_width || sample_weights.len() != batch {
            return Err(NeuralError::InvalidShape(format!(
                "error of length {} / {} weights do not match batch {batch} x {out_width}",
                output_error.len(),
                sample_weights.len()
            )));
        }

        let depth = self.layers.len();
        let mut grads = Gradients::zeros_like(self);
        let out_act = self.output_activation;
        let mut delta: Vec<f64> = output_error
            .chunks_exact(out_width)
            .zip(sample_weights)
            .zip(trace.pre[depth - 1].chunks_exact(out_width))
            .zip(trace.output.chunks_exact(out_width))
            .flat_map(|(((e, &w), z), y)| {
                e.iter()
                    .zip(z)
                    .zip(y)
                    .map(move |((&e, &z), &y)| flush(w * e * out_act.derivative(z, y)))
            })
            .collect();

        let mut action_grad = None;
        let mut input_grad = Vec::new();
        for k in (0..depth).rev() {
            let layer = &self.layers[k];
            let x = &trace.inputs[k];
            let g = &mut grads.layers[k];
            // dW = delta^T * x
            gemm(
                layer.outputs,
                batch,
                layer.inputs,
                &delta,
                (1, layer.outputs as isize),
                x,
                (layer.inputs as isize, 1),
                &mut g.weights,
                false,
            );
            for row in delta.chunks_exact(layer.outputs) {
                for (gb, d) in g.bias.iter_mut().zip(row) {
                    *gb += d;
                }
            }
            // dx = delta * W
            let mut dx = vec![0.0; batch * layer.inputs];
            gemm(
                batch,
                layer.outputs,
                layer.inputs,
                &delta,
                (layer.outputs as isize, 1),
                &layer.weights,
                (layer.inputs as isize, 1),
                &mut dx,
                false,
            );
            let dx = match self.action_injection {
                Some(inj) if inj.layer == k => {
                    let prev = layer.inputs - inj.width;
                    let mut d_prev = Vec::with_capacity(batch * prev);
                    let mut d_action = Vec::with_capacity(batch * inj.width);
                    for row in dx.chunks_exact(layer.inputs) {
                        d_prev.extend_from_slice(&row[..prev]);
                        d_action.extend_from_slice(&row[prev..]);
                    }
                    action_grad = Some(d_action);
                    d_prev
                }
                _ => dx,
            };
            if k == 0 {
                input_grad = dx;
            } else {
                let act = self.hidden_activation;
                let z_prev = &trace.pre[k - 1];
                let y_prev = &trace.inputs[k];
                let prev_width = self.layers[k - 1].outputs;
                let stride = layer.inputs;
                delta = dx
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| {
                        let (b, j) = (i / prev_width, i % prev_width);
                        flush(d * act.derivative(z_prev[i], y_prev[b * stride + j]))
                    })
                    .collect();
            }
        }
        Ok(Backprop {
            params: grads,
            input: input_grad,
            action: action_grad,
        })
    }

    /// Gradient of the (first) scalar output with respect to the injected
    /// action, for a single state-action pair.
    pub fn action_gradient(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.action_gradient_batch(state, action)
    }

    /// Row-wise `dQ/da` for a batch of state-action pairs.
    pub fn action_gradient_batch(&self, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
        if self.action_injection.is_none() {
            return Err(NeuralError::Unsupported(
                "action gradient requires a network with action injection".into(),
            ));
        }
        if self.output_width() != 1 {
            return Err(NeuralError::Unsupported(
                "action gradient needs a scalar output".into(),
            ));
        }
        let trace = self.forward_batch(states, Some(actions))?;
        let ones = vec![1.0; trace.batch];
        let bp = self.backward(&trace, &ones, 1.0)?;
        Ok(bp
            .action
            .expect("injected network yields an action gradient"))
    }

    /// Writes the binary checkpoint: a text header followed by little-endian
    /// `f64` parameters (each weight matrix row-major, then its bias).
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "agar-lab-mlp 1")?;
        writeln!(out, "layers {}", self.layers.len())?;
        writeln!(out, "hidden {}", self.hidden_activation.tag())?;
        writeln!(out, "output {}", self.output_activation.tag())?;
        match self.action_injection {
            Some(inj) => writeln!(out, "inject {} {}", inj.layer, inj.width)?,
            None => writeln!(out, "inject none")?,
        }
        for l in &self.layers {
            writeln!(out, "shape {} {}", l.inputs, l.outputs)?;
        }
        writeln!(out, "data")?;
        let mut bytes = Vec::with_capacity(self.parameter_count() * 8);
        for l in &self.layers {
            for v in l.weights.iter().chain(&l.bias) {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_checkpoint(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_checkpoint<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut line = String::new();
        let mut next_line = |input: &mut R| -> Result<String> {
            line.clear();
            if input.read_line(&mut line)? == 0 {
                return Err(NeuralError::Format("unexpected end of header".into()));
            }
            Ok(line.trim_end_matches('\n').to_string())
        };
        let bad =
            |what: &str, got: &str| NeuralError::Format(format!("expected {what}, found {got:?}"));

        let magic = next_line(input)?;
        if magic != "agar-lab-mlp 1" {
            return Err(bad("checkpoint magic", &magic));
        }
        let l = next_line(input)?;
        let depth: usize = l
            .strip_prefix("layers ")
            .and_then(|v| v.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| bad("layer count", &l))?;
        let l = next_line(input)?;
        let hidden = l
            .strip_prefix("hidden ")
            .and_then(Activation::from_tag)
            .ok_or_else(|| bad("hidden activation", &l))?;
        let l = next_line(input)?;
        let output = l
            .strip_prefix("output ")
            .and_then(Activation::from_tag)
            .ok_or_else(|| bad("output activation", &l))?;
        let l = next_line(input)?;
        let injection = match l.strip_prefix("inject ") {
            Some("none") => None,
            Some(rest) => {
                let mut parts = rest.split(' ').map(str::parse::<usize>);
                match (parts.next(), parts.next(), parts.next()) {
                    (Some(Ok(layer)), Some(Ok(width)), None) => {
                        Some(ActionInjection { layer, width })
                    }
                    _ => return Err(bad("action injection", &l)),
                }
            }
            None => return Err(bad("action injection", &l)),
        };
        let mut shapes = Vec::with_capacity(depth);
        for _ in 0..depth {
            let l = next_line(input)?;
            let mut parts = l
                .strip_prefix("shape ")
                .ok_or_else(|| bad("layer shape", &l))?
                .split(' ')
                .map(str::parse::<usize>);
            match (parts.next(), parts.next(), parts.next()) {
                (Some(Ok(i)), Some(Ok(o)), None) if i > 0 && o > 0 => shapes.push((i, o)),
                _ => return Err(bad("layer shape", &l)),
            }
        }
        let l = next_line(input)?;
        if l != "data" {
            return Err(bad("data marker", &l));
        }
        let mut layers = Vec::with_capacity(depth);
        for (inputs, outputs) in shapes {
            let mut layer = Layer::zeros(inputs, outputs);
            read_f64s(input, &mut layer.weights)?;
            read_f64s(input, &mut layer.bias)?;
            layers.push(layer);
        }
        Self::from_layers(layers, hidden, output, injection)
            .map_err(|e| NeuralError::Format(e.to_string()))
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let net = Self::read_checkpoint(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(NeuralError::Format(format!(
                "{} trailing bytes",
                cursor.len()
            )));
        }
        Ok(net)
    }
}

fn read_f64s<R: BufRead>(input: &mut R, out: &mut [f64]) -> Result<()> {
    let mut buf = vec![0u8; out.len() * 8];
    input
        .read_exact(&mut buf)
        .map_err(|_| NeuralError::Format("truncated parameter data".into()))?;
    for (v, chunk) in out.iter_mut().zip(buf.chunks_exact(8)) {
        *v = f64::from_le_bytes(chunk.try_into().expect("chunk of 8 bytes"));
    }
    Ok(())
}

/// `target <- tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(NeuralError::InvalidParameter(format!(
            "tau {tau} outside [0, 1]"
        )));
    }
    check_same_shape(&target.layers, &source.layers)?;
    if target.action_injection != source.action_injection {
        return Err(NeuralError::InvalidShape("action injection differs".into()));
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        for (tv, sv) in t
            .weights
            .iter_mut()
            .zip(&s.weights)
            .chain(t.bias.iter_mut().zip(&s.bias))
        {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        Self::with_len(net.parameter_count(), learning_rate)
    }

    pub fn with_len(len: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// Applies one update to a flat parameter slice.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(NeuralError::InvalidShape(format!(
                "adam state holds {} parameters, got {} params / {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            *m = flush(self.beta1 * *m + (1.0 - self.beta1) * g);
            *v = flush(self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    /// Applies one update to every parameter of `net`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<()> {
        check_same_shape(&net.layers, &grads.layers)?;
        if net.parameter_count() != self.first.len() {
            return Err(NeuralError::InvalidShape(
                "adam state does not match network".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mut offset = 0;
        for (l, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, &gv) in l
                .weights
                .iter_mut()
                .zip(&g.weights)
                .chain(l.bias.iter_mut().zip(&g.bias))
            {
                let m = &mut self.first[offset];
                let v = &mut self.second[offset];
                *m = flush(b1 * *m + (1.0 - b1) * gv);
                *v = flush(b2 * *v + (1.0 - b2) * gv * gv);
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                offset += 1;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn glorot_bounds() {
        let mut r = rng();
        let w = init_glorot(1, 1, &mut r).unwrap();
        assert!(w[0].abs() <= 3f64.sqrt());
        let w = init_glorot(3, 3, &mut r).unwrap();
        assert!(w.iter().all(|v| v.abs() <= 1.0));
        assert!(matches!(
            init_glorot(0, 3, &mut r),
            Err(NeuralError::InvalidShape(_))
        ));
    }

    #[test]
    fn glorot_sample_mean_is_centered() {
        let mut r = rng();
        let mut sum = 0.0;
        let mut n = 0usize;
        while n < 100_000 {
            let w = init_glorot(121, 256, &mut r).unwrap();
            let take = w.len().min(100_000 - n);
            sum += w[..take].iter().sum::<f64>();
            n += take;
        }
        let limit = (6.0f64 / 377.0).sqrt();
        let sigma = limit / 3f64.sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&MlpShape::new(4, &[3, 3], 2, Activation::Linear)).unwrap();
        assert_eq!(
            net.predict(&[1.0, -2.0, 3.0, 0.5], None).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn hand_computed_two_two_one() {
        let l0 = Layer {
            inputs: 2,
            outputs: 2,
            weights: vec![0.5, -1.0, 2.0, 0.25],
            bias: vec![0.1, -0.2],
        };
        let l1 = Layer {
            inputs: 2,
            outputs: 1,
            weights: vec![1.5, -0.5],
            bias: vec![0.3],
        };
        let net =
            Mlp::from_layers(vec![l0, l1], Activation::Relu, Activation::Linear, None).unwrap();
        let x = [0.8, -0.4];
        let h0 = (0.5 * 0.8 + -1.0 * -0.4 + 0.1f64).max(0.0);
        let h1 = (2.0 * 0.8 + 0.25 * -0.4 - 0.2f64).max(0.0);
        let expected = 1.5 * h0 - 0.5 * h1 + 0.3;
        let out = net.predict(&x, None).unwrap();
        assert!((out[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn logistic_output_in_open_unit_interval() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[8], 2, Activation::Logistic), &mut r).unwrap();
        for i in 0..50 {
            let x = [i as f64 - 25.0, (i as f64).sin() * 40.0, 3.0];
            for y in net.predict(&x, None).unwrap() {
                assert!(y > 0.0 && y < 1.0);
            }
        }
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[4], 1, Activation::Linear), &mut r).unwrap();
        assert!(matches!(
            net.predict(&[1.0, 2.0], None),
            Err(NeuralError::InvalidShape(_))
        ));
        assert!(net.predict(&[1.0, 2.0, 3.0], Some(&[0.5])).is_err());
        let critic = Mlp::new(
            &MlpShape::new(3, &[4, 4], 1, Activation::Linear).with_action(1, 2),
            &mut r,
        )
        .unwrap();
        assert!(critic.predict(&[1.0, 2.0, 3.0], None).is_err());
        assert!(critic.predict(&[1.0, 2.0, 3.0], Some(&[0.5, 0.5])).is_ok());
    }

    #[test]
    fn zero_error_gives_zero_gradients() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[5, 4], 2, Activation::Logistic), &mut r).unwrap();
        let trace = net.forward(&[0.3, -0.1, 0.9], None).unwrap();
        let bp = net.backward(&trace, &[0.0, 0.0], 1.0).unwrap();
        assert!(bp.params.is_zero());
        assert!(bp.input.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn sample_weight_scales_gradients_linearly() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[5], 2, Activation::Linear), &mut r).unwrap();
        let trace = net.forward(&[0.3, -0.1, 0.9], None).unwrap();
        let one = net.backward(&trace, &[0.4, -1.2], 1.0).unwrap();
        let two = net.backward(&trace, &[0.4, -1.2], 2.0).unwrap();
        for (a, b) in one.params.flat().iter().zip(two.params.flat()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn stale_trace_is_rejected() {
        let mut r = rng();
        let a = Mlp::new(&MlpShape::new(3, &[5], 1, Activation::Linear), &mut r).unwrap();
        let b = Mlp::new(&MlpShape::new(3, &[6], 1, Activation::Linear), &mut r).unwrap();
        let trace = a.forward(&[0.0; 3], None).unwrap();
        assert!(matches!(
            b.backward(&trace, &[1.0], 1.0),
            Err(NeuralError::InvalidShape(_))
        ));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut r = rng();
        let mut net = Mlp::new(&MlpShape::new(3, &[4], 1, Activation::Linear), &mut r).unwrap();
        let before = net.clone();
        let mut adam = Adam::new(&net, 0.001);
        adam.step(&mut net, &Gradients::zeros_like(&before))
            .unwrap();
        assert_eq!(net, before);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::with_len(1, 0.001);
        let mut p = [0.5];
        adam.update(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.5 + 0.001).abs() < 1e-6);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[4], 2, Activation::Linear), &mut r).unwrap();
        let trace = net.forward(&[0.1, 0.2, 0.3], None).unwrap();
        let g = net.backward(&trace, &[1.0, -0.5], 1.0).unwrap().params;
        let (mut a, mut b) = (net.clone(), net.clone());
        let (mut sa, mut sb) = (Adam::new(&net, 0.01), Adam::new(&net, 0.01));
        sa.step(&mut a, &g).unwrap();
        sb.step(&mut b, &g).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(sa, sb);
    }

    #[test]
    fn soft_update_endpoints_and_bounds() {
        let mut r = rng();
        let shape = MlpShape::new(3, &[4], 2, Activation::Linear);
        let source = Mlp::new(&shape, &mut r).unwrap();
        let original = Mlp::new(&shape, &mut r).unwrap();

        let mut t = original.clone();
        soft_update(&mut t, &source, 0.0).unwrap();
        assert_eq!(t, original);
        soft_update(&mut t, &source, 1.0).unwrap();
        assert_eq!(t, source);
        assert!(matches!(
            soft_update(&mut t, &source, 1.5),
            Err(NeuralError::InvalidParameter(_))
        ));
    }

    #[test]
    fn soft_update_follows_geometric_closed_form() {
        let mut r = rng();
        let shape = MlpShape::new(3, &[4], 2, Activation::Linear);
        let source = Mlp::new(&shape, &mut r).unwrap();
        let start = Mlp::new(&shape, &mut r).unwrap();
        let tau = 0.02;
        let n = 200;
        let mut t = start.clone();
        for _ in 0..n {
            soft_update(&mut t, &source, tau).unwrap();
        }
        let decay = (1.0 - tau).powi(n);
        for ((tv, sv), t0) in t
            .flat_params()
            .iter()
            .zip(source.flat_params())
            .zip(start.flat_params())
        {
            assert!((tv - (sv + decay * (t0 - sv))).abs() < 1e-9);
        }
    }

    #[test]
    fn action_gradient_requires_injection() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(3, &[4], 1, Activation::Linear), &mut r).unwrap();
        assert!(matches!(
            net.action_gradient(&[0.0; 3], &[0.5, 0.5]),
            Err(NeuralError::Unsupported(_))
        ));
    }

    #[test]
    fn action_gradient_is_zero_when_action_unused() {
        let mut r = rng();
        let mut net = Mlp::new(
            &MlpShape::new(3, &[4, 4], 1, Activation::Linear).with_action(1, 2),
            &mut r,
        )
        .unwrap();
        let layer = &mut net.layers_mut()[1];
        for o in 0..layer.outputs {
            for i in 4..6 {
                layer.weights[o * layer.inputs + i] = 0.0;
            }
        }
        let g = net.action_gradient(&[0.2, -0.3, 0.9], &[0.1, 0.8]).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn action_gradient_of_linear_critic_is_its_coefficients() {
        // Q(s, a) = 0.7 + 1.25 a0 - 3.5 a1 built from a single linear layer
        // taking [s, a].
        let layer = Layer {
            inputs: 4,
            outputs: 1,
            weights: vec![0.0, 0.0, 1.25, -3.5],
            bias: vec![0.7],
        };
        let net = Mlp::from_layers(
            vec![layer],
            Activation::Relu,
            Activation::Linear,
            Some(ActionInjection { layer: 0, width: 2 }),
        )
        .unwrap();
        let g = net.action_gradient(&[0.4, 0.1], &[0.3, 0.6]).unwrap();
        assert!((g[0] - 1.25).abs() < 1e-10);
        assert!((g[1] + 3.5).abs() < 1e-10);
    }

    #[test]
    fn checkpoint_round_trip_is_byte_exact() {
        let mut r = rng();
        let net = Mlp::new(
            &MlpShape::new(5, &[7, 3], 1, Activation::Linear).with_action(1, 2),
            &mut r,
        )
        .unwrap();
        let bytes = net.to_checkpoint_bytes();
        let back = Mlp::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_rejected() {
        let mut r = rng();
        let net = Mlp::new(&MlpShape::new(2, &[3], 1, Activation::Logistic), &mut r).unwrap();
        let bytes = net.to_checkpoint_bytes();
        assert!(matches!(
            Mlp::from_checkpoint_bytes(&bytes[..bytes.len() - 3]),
            Err(NeuralError::Format(_))
        ));
        let mut tampered = bytes.clone();
        tampered[0] = b'x';
        assert!(Mlp::from_checkpoint_bytes(&tampered).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Mlp::from_checkpoint_bytes(&longer).is_err());
    }
}
