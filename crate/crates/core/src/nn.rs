//! Minimal differentiable dense-network core.
//!
//! Networks are fixed stacks of affine layers and pointwise nonlinearities
//! over `f64` vectors. Gradients are exact reverse-mode, computed from a
//! cached forward trace, and every gradient path can be cross-checked against
//! central finite differences with [`grad_check`].

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("layer {index}: {reason}")]
    BadLayer { index: usize, reason: &'static str },
    #[error("parameter shape tables differ")]
    ShapeMismatch,
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),
}

/// One named parameter block inside a flat [`ParamVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage with a shape table describing the named blocks.
///
/// Optimizers, checkpointing, and gradient checks all operate on this single
/// representation, so a `ParamVector` of gradients always lines up with the
/// `ParamVector` of parameters it was computed for.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    blocks: Vec<BlockSpec>,
}

impl ParamVector {
    pub fn zeros(shape_table: &[(String, Vec<usize>)]) -> Self {
        let mut blocks = Vec::with_capacity(shape_table.len());
        let mut offset = 0;
        for (name, dims) in shape_table {
            let spec = BlockSpec { name: name.clone(), dims: dims.clone(), offset };
            offset += spec.len();
            blocks.push(spec);
        }
        ParamVector { values: vec![0.0; offset], blocks }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&[f64]> {
        let spec = self.blocks.iter().find(|b| b.name == name)?;
        Some(&self.values[spec.offset..spec.offset + spec.len()])
    }

    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let spec = self.blocks.iter().find(|b| b.name == name)?.clone();
        Some(&mut self.values[spec.offset..spec.offset + spec.len()])
    }

    fn block_at(&self, index: usize) -> &[f64] {
        let spec = &self.blocks[index];
        &self.values[spec.offset..spec.offset + spec.len()]
    }

    fn block_at_mut(&mut self, index: usize) -> &mut [f64] {
        let spec = self.blocks[index].clone();
        &mut self.values[spec.offset..spec.offset + spec.len()]
    }

    /// Adds `other` into this vector elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn fill_zero(&mut self) {
        self.values.fill(0.0);
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector { values: vec![0.0; self.values.len()], blocks: self.blocks.clone() }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.blocks == other.blocks
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Layer menu. Affine layers own parameters; the rest are pointwise.
/// Softmax is only valid as the final layer of a net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Affine { inputs: usize, outputs: usize },
    Relu,
    Tanh,
    Softmax,
}

/// A dense network: an ordered layer stack plus its flat parameters.
///
/// Affine weights are stored one row per input (`dims = [inputs, outputs]`),
/// so the forward pass is a sum of contiguous rows and can skip zero inputs
/// entirely; one-hot images and relu activations make that the common case.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    layers: Vec<LayerSpec>,
    // per layer: (weight, bias) block indices for affine layers
    affine_blocks: Vec<Option<(usize, usize)>>,
    params: ParamVector,
    input_dim: usize,
    output_dim: usize,
}

/// Cached activations from one forward pass; required by [`Net::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    // activations[0] is the input, activations[i + 1] the output of layer i.
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has at least the input")
    }
}

/// Gradients from one reverse pass: w.r.t. every parameter and w.r.t. the input.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub param_grad: ParamVector,
    pub input_grad: Vec<f64>,
}

impl Net {
    /// Builds a net with Glorot-uniform weights and zero biases.
    pub fn new(input_dim: usize, layers: &[LayerSpec], rng: &mut impl Rng) -> Result<Self, NnError> {
        let mut shape_table = Vec::new();
        let mut affine_blocks = Vec::with_capacity(layers.len());
        let mut dim = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                LayerSpec::Affine { inputs, outputs } => {
                    if *inputs != dim {
                        return Err(NnError::BadLayer { index: i, reason: "affine input does not match previous layer" });
                    }
                    affine_blocks.push(Some((shape_table.len(), shape_table.len() + 1)));
                    shape_table.push((format!("l{i}.w"), vec![*inputs, *outputs]));
                    shape_table.push((format!("l{i}.b"), vec![*outputs]));
                    dim = *outputs;
                }
                LayerSpec::Relu | LayerSpec::Tanh => affine_blocks.push(None),
                LayerSpec::Softmax => {
                    if i + 1 != layers.len() {
                        return Err(NnError::BadLayer { index: i, reason: "softmax is only allowed as the final layer" });
                    }
                    affine_blocks.push(None);
                }
            }
        }
        let mut params = ParamVector::zeros(&shape_table);
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Affine { inputs, outputs } = layer {
                let limit = (6.0 / (*inputs + *outputs) as f64).sqrt();
                let w = params.block_mut(&format!("l{i}.w")).expect("block exists");
                for v in w.iter_mut() {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(Net { layers: layers.to_vec(), affine_blocks, params, input_dim, output_dim: dim })
    }

    /// A frozen pass-through net: one affine layer with identity weights.
    pub fn identity(dim: usize) -> Self {
        let shape_table = vec![("l0.w".to_string(), vec![dim, dim]), ("l0.b".to_string(), vec![dim])];
        let mut params = ParamVector::zeros(&shape_table);
        let w = params.block_mut("l0.w").expect("block exists");
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        Net {
            layers: vec![LayerSpec::Affine { inputs: dim, outputs: dim }],
            affine_blocks: vec![Some((0, 1))],
            params,
            input_dim: dim,
            output_dim: dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward_trace(x)?.activations.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace, NnError> {
        if x.len() != self.input_dim {
            return Err(NnError::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFinite("network input"));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let a = activations.last().expect("non-empty");
            let out = match layer {
                LayerSpec::Affine { outputs, .. } => {
                    let (wi, bi) = self.affine_blocks[i].expect("affine block table");
                    let w = self.params.block_at(wi);
                    let b = self.params.block_at(bi);
                    let mut y = b.to_vec();
                    // row-per-input layout: accumulate w[j] rows, skipping
                    // zero inputs (one-hot images, relu sparsity)
                    for (j, xj) in a.iter().enumerate() {
                        if *xj == 0.0 {
                            continue;
                        }
                        let row = &w[j * outputs..(j + 1) * outputs];
                        for (yo, wj) in y.iter_mut().zip(row) {
                            *yo += xj * wj;
                        }
                    }
                    y
                }
                LayerSpec::Relu => a.iter().map(|v| v.max(0.0)).collect(),
                LayerSpec::Tanh => a.iter().map(|v| v.tanh()).collect(),
                LayerSpec::Softmax => softmax(a),
            };
            activations.push(out);
        }
        Ok(Trace { activations })
    }

    /// Exact reverse-mode gradient of `upstream . output` w.r.t. all
    /// parameters and the input, given the trace of the matching forward pass.
    pub fn backward(&self, trace: &Trace, upstream: &[f64]) -> Result<Backprop, NnError> {
        if upstream.len() != self.output_dim {
            return Err(NnError::DimensionMismatch { expected: self.output_dim, got: upstream.len() });
        }
        let mut param_grad = self.params.zeros_like();
        let mut g = upstream.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &trace.activations[i];
            let a_out = &trace.activations[i + 1];
            match layer {
                LayerSpec::Affine { inputs, outputs } => {
                    let (wi, bi) = self.affine_blocks[i].expect("affine block table");
                    {
                        // dW[j, :] = x_j * g; rows for zero inputs stay zero
                        let dw = param_grad.block_at_mut(wi);
                        for (j, xj) in a_in.iter().enumerate() {
                            if *xj == 0.0 {
                                continue;
                            }
                            let row = &mut dw[j * outputs..(j + 1) * outputs];
                            for (r, go) in row.iter_mut().zip(&g) {
                                *r = xj * go;
                            }
                        }
                    }
                    param_grad.block_at_mut(bi).copy_from_slice(&g);
                    let w = self.params.block_at(wi);
                    let mut gx = vec![0.0; *inputs];
                    for (j, gxj) in gx.iter_mut().enumerate() {
                        let row = &w[j * outputs..(j + 1) * outputs];
                        *gxj = dot(row, &g);
                    }
                    g = gx;
                }
                LayerSpec::Relu => {
                    for (gi, xi) in g.iter_mut().zip(a_in) {
                        if *xi <= 0.0 {
                            *gi = 0.0;
                        }
                    }
                }
                LayerSpec::Tanh => {
                    for (gi, yi) in g.iter_mut().zip(a_out) {
                        *gi *= 1.0 - yi * yi;
                    }
                }
                LayerSpec::Softmax => {
                    // dL/dx = y * (g - (y . g))
                    let dot_yg = dot(a_out, &g);
                    for (gi, yi) in g.iter_mut().zip(a_out) {
                        *gi = yi * (*gi - dot_yg);
                    }
                }
            }
        }
        Ok(Backprop { param_grad, input_grad: g })
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax; outputs are non-negative and sum to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Adaptive-moment (or plain SGD) state over one flat parameter set.
///
/// The moment buffers are laid out element-for-element with the parameters
/// they update, so a single optimizer can also drive several nets at once via
/// [`Optimizer::step_slices`] as long as the slice order stays fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        Optimizer { kind, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn moments_are_zero(&self) -> bool {
        self.t == 0 && self.m.iter().all(|v| *v == 0.0) && self.v.iter().all(|v| *v == 0.0)
    }

    /// One descent step on a single parameter vector.
    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, lr: f64) -> Result<(), NnError> {
        if !params.same_shape(grad) {
            return Err(NnError::ShapeMismatch);
        }
        let mut parts = [(params.values_mut(), grad.values())];
        self.step_slices(lr, &mut parts)
    }

    /// One descent step over several (params, grad) slices sharing this state.
    pub fn step_slices(&mut self, lr: f64, parts: &mut [(&mut [f64], &[f64])]) -> Result<(), NnError> {
        if lr <= 0.0 || !lr.is_finite() {
            return Err(NnError::BadLearningRate(lr));
        }
        let total: usize = parts.iter().map(|(p, _)| p.len()).sum();
        if total != self.m.len() {
            return Err(NnError::ShapeMismatch);
        }
        for (p, g) in parts.iter() {
            if p.len() != g.len() {
                return Err(NnError::ShapeMismatch);
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(NnError::NonFinite("gradient"));
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in parts.iter_mut() {
                    for (pi, gi) in p.iter_mut().zip(g.iter()) {
                        *pi -= lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let inv_bc1 = 1.0 / (1.0 - ADAM_BETA1.powi(self.t as i32));
                let inv_sqrt_bc2 = 1.0 / (1.0 - ADAM_BETA2.powi(self.t as i32)).sqrt();
                let mut offset = 0;
                for (p, g) in parts.iter_mut() {
                    let n = p.len();
                    let m = &mut self.m[offset..offset + n];
                    let v = &mut self.v[offset..offset + n];
                    for i in 0..n {
                        let gi = g[i];
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        p[i] -= lr * (m[i] * inv_bc1) / (v[i].sqrt() * inv_sqrt_bc2 + ADAM_EPS);
                    }
                    offset += n;
                }
            }
        }
        Ok(())
    }
}

/// One adaptive-moment update; the spec-level entry point over flat params.
pub fn adam_step(
    params: &mut ParamVector,
    grad: &ParamVector,
    state: &mut Optimizer,
    lr: f64,
) -> Result<(), NnError> {
    state.step(params, grad, lr)
}

/// Per-block comparison of reverse-mode gradients with central differences.
#[derive(Debug, Clone)]
pub struct GradReport {
    pub block_errors: Vec<(String, f64)>,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

const FD_STEP: f64 = 1e-5;

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-6, f64::max(a.abs(), b.abs()))
}

/// Checks `backward` against central finite differences of `loss` over every
/// parameter block. `loss` maps the network output to a scalar and its
/// gradient w.r.t. that output.
pub fn grad_check<L>(net: &Net, loss: L, x: &[f64], tolerance: f64) -> GradReport
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    assert!(tolerance > 0.0, "tolerance must be positive");
    let trace = net.forward_trace(x).expect("grad_check needs a valid forward pass");
    let (_, upstream) = loss(trace.output());
    let analytic = net.backward(&trace, &upstream).expect("backward failed").param_grad;

    let mut probe = net.clone();
    let mut block_errors = Vec::new();
    let mut max_err: f64 = 0.0;
    for spec in net.params().blocks().to_vec() {
        let mut block_err: f64 = 0.0;
        for j in spec.offset..spec.offset + spec.len() {
            let orig = probe.params().values()[j];
            probe.params_mut().values_mut()[j] = orig + FD_STEP;
            let (loss_plus, _) = loss(&probe.forward(x).expect("forward failed"));
            probe.params_mut().values_mut()[j] = orig - FD_STEP;
            let (loss_minus, _) = loss(&probe.forward(x).expect("forward failed"));
            probe.params_mut().values_mut()[j] = orig;
            let fd = (loss_plus - loss_minus) / (2.0 * FD_STEP);
            block_err = block_err.max(relative_error(fd, analytic.values()[j]));
        }
        max_err = max_err.max(block_err);
        block_errors.push((spec.name, block_err));
    }
    GradReport { block_errors, max_relative_error: max_err, tolerance, pass: max_err < tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_affine_passes_input_through() {
        let net = Net::identity(3);
        let x = [0.5, -1.25, 2.0];
        assert_eq!(net.forward(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let p = softmax(&[3.7, 3.7, 3.7, 3.7]);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut r = rng(0);
        let net = Net::new(2, &[LayerSpec::Relu], &mut r).unwrap();
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let net = Net::identity(3);
        assert!(matches!(net.forward(&[1.0]), Err(NnError::DimensionMismatch { .. })));
        assert!(matches!(net.forward(&[1.0, f64::NAN, 0.0]), Err(NnError::NonFinite(_))));
    }

    #[test]
    fn softmax_must_be_final_layer() {
        let mut r = rng(0);
        let err = Net::new(2, &[LayerSpec::Softmax, LayerSpec::Relu], &mut r);
        assert!(matches!(err, Err(NnError::BadLayer { .. })));
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut r = rng(1);
        let net = Net::new(
            3,
            &[LayerSpec::Affine { inputs: 3, outputs: 4 }, LayerSpec::Tanh, LayerSpec::Affine { inputs: 4, outputs: 2 }],
            &mut r,
        )
        .unwrap();
        let trace = net.forward_trace(&[0.1, 0.2, 0.3]).unwrap();
        let bp = net.backward(&trace, &[0.0, 0.0]).unwrap();
        assert!(bp.param_grad.values().iter().all(|v| *v == 0.0));
        assert!(bp.input_grad.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn affine_bias_gradient_equals_upstream() {
        let mut r = rng(2);
        let net = Net::new(3, &[LayerSpec::Affine { inputs: 3, outputs: 2 }], &mut r).unwrap();
        let trace = net.forward_trace(&[0.3, -0.7, 1.1]).unwrap();
        let bp = net.backward(&trace, &[2.0, -3.0]).unwrap();
        assert_eq!(bp.param_grad.block("l0.b").unwrap(), &[2.0, -3.0]);
    }

    fn quadratic_loss(target: &[f64]) -> impl Fn(&[f64]) -> (f64, Vec<f64>) + '_ {
        move |y: &[f64]| {
            let loss: f64 = y.iter().zip(target).map(|(yi, ti)| (yi - ti).powi(2)).sum();
            let grad = y.iter().zip(target).map(|(yi, ti)| 2.0 * (yi - ti)).collect();
            (loss, grad)
        }
    }

    #[test]
    fn backward_matches_finite_differences_across_shapes() {
        // 50 seeded trials per architecture, mirroring the shapes the model uses.
        let shapes: Vec<(usize, Vec<LayerSpec>)> = vec![
            (6, vec![LayerSpec::Affine { inputs: 6, outputs: 5 }, LayerSpec::Relu, LayerSpec::Affine { inputs: 5, outputs: 3 }]),
            (4, vec![LayerSpec::Affine { inputs: 4, outputs: 6 }, LayerSpec::Tanh, LayerSpec::Affine { inputs: 6, outputs: 2 }]),
            (5, vec![LayerSpec::Affine { inputs: 5, outputs: 4 }, LayerSpec::Softmax]),
            (3, vec![LayerSpec::Affine { inputs: 3, outputs: 3 }]),
        ];
        for (input_dim, layers) in shapes {
            for trial in 0..50 {
                let mut r = rng(1000 + trial);
                let net = Net::new(input_dim, &layers, &mut r).unwrap();
                let x: Vec<f64> = (0..input_dim).map(|_| r.random_range(-1.0..1.0)).collect();
                let target: Vec<f64> = (0..net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
                let report = grad_check(&net, quadratic_loss(&target), &x, 1e-4);
                assert!(
                    report.pass,
                    "grad check failed for {layers:?} trial {trial}: max rel err {}",
                    report.max_relative_error
                );
            }
        }
    }

    #[test]
    fn grad_check_catches_sign_flipped_bias_gradient() {
        // Fault injection: present a gradient with the bias block negated and
        // make sure the report flags it.
        let mut r = rng(3);
        let net = Net::new(3, &[LayerSpec::Affine { inputs: 3, outputs: 2 }], &mut r).unwrap();
        let x = [0.4, -0.2, 0.9];
        let target = [1.0, -1.0];
        let trace = net.forward_trace(&x).unwrap();
        let (_, upstream) = quadratic_loss(&target)(trace.output());
        let mut bad = net.backward(&trace, &upstream).unwrap().param_grad;
        for v in bad.block_mut("l0.b").unwrap() {
            *v = -*v;
        }

        // Recompute the finite-difference side exactly as grad_check does.
        let mut probe = net.clone();
        let mut worst: f64 = 0.0;
        for spec in net.params().blocks().to_vec() {
            for j in spec.offset..spec.offset + spec.len() {
                let orig = probe.params().values()[j];
                probe.params_mut().values_mut()[j] = orig + FD_STEP;
                let (lp, _) = quadratic_loss(&target)(&probe.forward(&x).unwrap());
                probe.params_mut().values_mut()[j] = orig - FD_STEP;
                let (lm, _) = quadratic_loss(&target)(&probe.forward(&x).unwrap());
                probe.params_mut().values_mut()[j] = orig;
                let fd = (lp - lm) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(fd, bad.values()[j]));
            }
        }
        assert!(worst > 1e-4, "sign flip went undetected: {worst}");
    }

    #[test]
    fn grad_check_passes_for_parameterless_net() {
        let mut r = rng(4);
        let net = Net::new(3, &[LayerSpec::Relu], &mut r).unwrap();
        let report = grad_check(&net, quadratic_loss(&[0.0, 0.0, 0.0]), &[0.5, -0.5, 1.0], 1e-4);
        assert!(report.pass);
        assert!(report.block_errors.is_empty());
    }

    #[test]
    fn adam_leaves_params_alone_on_zero_gradient() {
        let mut params = ParamVector::zeros(&[("p".to_string(), vec![4])]);
        params.values_mut().copy_from_slice(&[1.0, -2.0, 3.0, -4.0]);
        let before = params.clone();
        let grad = params.zeros_like();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 4);
        adam_step(&mut params, &grad, &mut opt, 0.01).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn first_adam_step_moves_opposite_sign_with_lr_magnitude() {
        let mut params = ParamVector::zeros(&[("p".to_string(), vec![3])]);
        let mut grad = params.zeros_like();
        grad.values_mut().copy_from_slice(&[0.5, -2.0, 10.0]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 3);
        adam_step(&mut params, &grad, &mut opt, 0.01).unwrap();
        for (p, g) in params.values().iter().zip(grad.values()) {
            assert!((p.abs() - 0.01).abs() < 1e-6, "step magnitude {p}");
            assert!(p.signum() == -g.signum());
        }
    }

    #[test]
    fn adam_drives_quadratic_to_zero() {
        // Scalar recurrence on f(p) = p^2 starting at p = 1.
        let mut params = ParamVector::zeros(&[("p".to_string(), vec![1])]);
        params.values_mut()[0] = 1.0;
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1);
        let mut steps = 0;
        while params.values()[0].abs() >= 1e-3 && steps < 2000 {
            let mut grad = params.zeros_like();
            grad.values_mut()[0] = 2.0 * params.values()[0];
            adam_step(&mut params, &grad, &mut opt, 0.01).unwrap();
            steps += 1;
        }
        assert!(params.values()[0].abs() < 1e-3, "stalled at {} after {steps} steps", params.values()[0]);
    }

    #[test]
    fn optimizer_rejects_shape_mismatch_and_nonfinite() {
        let mut params = ParamVector::zeros(&[("p".to_string(), vec![2])]);
        let other = ParamVector::zeros(&[("q".to_string(), vec![2])]);
        let mut opt = Optimizer::new(OptimizerKind::Adam, 2);
        assert!(matches!(opt.step(&mut params, &other, 0.1), Err(NnError::ShapeMismatch)));
        let mut bad = params.zeros_like();
        bad.values_mut()[0] = f64::NAN;
        assert!(matches!(opt.step(&mut params, &bad, 0.1), Err(NnError::NonFinite(_))));
        let good = params.zeros_like();
        assert!(matches!(opt.step(&mut params, &good, 0.0), Err(NnError::BadLearningRate(_))));
    }

    #[test]
    fn sgd_takes_plain_gradient_steps() {
        let mut params = ParamVector::zeros(&[("p".to_string(), vec![2])]);
        params.values_mut().copy_from_slice(&[5.0, -3.0]);
        let mut grad = params.zeros_like();
        grad.values_mut().copy_from_slice(&[10.0, -6.0]);
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 2);
        opt.step(&mut params, &grad, 0.1).unwrap();
        assert!((params.values()[0] - 4.0).abs() < 1e-12);
        assert!((params.values()[1] + 2.4).abs() < 1e-12);
    }

    #[test]
    fn optimizer_updates_are_deterministic() {
        let run = || {
            let mut params = ParamVector::zeros(&[("p".to_string(), vec![3])]);
            params.values_mut().copy_from_slice(&[0.3, -0.6, 0.9]);
            let mut grad = params.zeros_like();
            grad.values_mut().copy_from_slice(&[1.0, 2.0, -0.5]);
            let mut opt = Optimizer::new(OptimizerKind::Adam, 3);
            for _ in 0..10 {
                opt.step(&mut params, &grad, 0.05).unwrap();
            }
            params.values().to_vec()
        };
        assert_eq!(run(), run());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in proptest::collection::vec(-30.0f64..30.0, 1..8)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|v| *v >= 0.0));
            let sum: f64 = p.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn forward_is_pure(seed in 0u64..1000, x in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let mut r = rng(seed);
            let net = Net::new(4, &[
                LayerSpec::Affine { inputs: 4, outputs: 5 },
                LayerSpec::Relu,
                LayerSpec::Affine { inputs: 5, outputs: 3 },
                LayerSpec::Softmax,
            ], &mut r).unwrap();
            prop_assert_eq!(net.forward(&x).unwrap(), net.forward(&x).unwrap());
        }
    }
}
