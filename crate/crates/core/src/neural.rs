//! Minimal feed-forward network engine with exact backpropagation.
//!
//! Layers are plain structs over [`Matrix`]; the forward pass records a tape
//! of whatever backward needs, so gradients are exact including the paths
//! through batch statistics (batch norm and the power-normalization layer).
//! Optimization is Adam with optional L2 on fully-connected weights.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::SplitRng;

/// Probability clamp applied inside the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-12;
/// Batch-norm variance floor.
pub const BN_EPS: f64 = 1e-5;
/// Momentum for running statistics (batch norm and power norm).
pub const STATS_MOMENTUM: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    #[inline]
    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    /// Initialization gain for layers feeding this activation.
    pub fn gain(&self) -> f64 {
        match *self {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::LeakyRelu(slope) => (2.0 / (1.0 + slope * slope)).sqrt(),
        }
    }
}

/// Shape-level description of a layer, shared with the complexity model.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    FullyConnected { in_dim: usize, out_dim: usize },
    BatchNorm { dim: usize },
    Activation { kind: Activation, dim: usize },
    Dropout { rate: f64, dim: usize },
    PowerNorm { dim: usize },
    SigmoidHead { dim: usize },
    /// (I)FWHT position in the pipeline; carries no parameters.
    Transform { dim: usize },
}

impl LayerSpec {
    pub fn out_dim(&self) -> usize {
        match *self {
            LayerSpec::FullyConnected { out_dim, .. } => out_dim,
            LayerSpec::BatchNorm { dim }
            | LayerSpec::Activation { dim, .. }
            | LayerSpec::Dropout { dim, .. }
            | LayerSpec::PowerNorm { dim }
            | LayerSpec::SigmoidHead { dim }
            | LayerSpec::Transform { dim } => dim,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FcLayer {
    /// in_dim x out_dim.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl FcLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    /// Scaled uniform fan-in initialization: U(-a, a) with a = gain * sqrt(3 / in_dim).
    pub fn init(in_dim: usize, out_dim: usize, gain: f64, rng: &mut SplitRng) -> Self {
        let limit = gain * (3.0 / in_dim as f64).sqrt();
        let weight = Matrix::from_fn(in_dim, out_dim, |_, _| rng.uniform_in(-limit, limit));
        Self {
            weight,
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.matmul(&self.weight);
        for r in 0..y.rows() {
            for (v, b) in y.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNormLayer {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

/// Scales a batch to unit mean-square amplitude.
///
/// Training mode divides by the square root of the batch-mean per-element
/// power, so the output satisfies the unit-power constraint exactly; the
/// running statistic is stored and reused at inference.
#[derive(Clone, Debug)]
pub struct PowerNormLayer {
    /// Running mean-square amplitude seen during training.
    pub running_power: f64,
}

impl Default for PowerNormLayer {
    fn default() -> Self {
        Self { running_power: 1.0 }
    }
}

impl PowerNormLayer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stored scale factor applied at inference.
    pub fn factor(&self) -> f64 {
        self.running_power.sqrt()
    }

    pub fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        update_stats: bool,
    ) -> Result<(Matrix, PowerNormTape)> {
        let factor = match mode {
            Mode::Training => {
                let power = x.mean_square();
                if power == 0.0 {
                    return Err(Error::DegeneratePower);
                }
                if update_stats {
                    self.running_power =
                        STATS_MOMENTUM * self.running_power + (1.0 - STATS_MOMENTUM) * power;
                }
                power.sqrt()
            }
            Mode::Inference => self.factor(),
        };
        let y = x.map(|v| v / factor);
        Ok((
            y,
            PowerNormTape {
                input: x.clone(),
                factor,
                mode,
            },
        ))
    }

    pub fn backward(&self, tape: &PowerNormTape, grad_out: &Matrix) -> Matrix {
        match tape.mode {
            Mode::Inference => grad_out.map(|g| g / tape.factor),
            Mode::Training => {
                // y = x * p^(-1/2) with p the batch mean square; the factor
                // itself depends on every element of the batch.
                let m = (tape.input.rows() * tape.input.cols()) as f64;
                let f = tape.factor;
                let dot: f64 = grad_out
                    .as_slice()
                    .iter()
                    .zip(tape.input.as_slice())
                    .map(|(g, x)| g * x)
                    .sum();
                let coeff = dot / (m * f * f * f);
                let mut out = Matrix::zeros(grad_out.rows(), grad_out.cols());
                for ((o, g), x) in out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad_out.as_slice())
                    .zip(tape.input.as_slice())
                {
                    *o = g / f - x * coeff;
                }
                out
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct PowerNormTape {
    input: Matrix,
    pub factor: f64,
    mode: Mode,
}

#[derive(Clone, Debug)]
pub enum Layer {
    FullyConnected(FcLayer),
    BatchNorm(BatchNormLayer),
    Activation(Activation),
    Dropout(f64),
    PowerNorm(PowerNormLayer),
    /// Element-wise logistic producing independent per-bit probabilities.
    SigmoidHead,
}

/// Per-layer state recorded by the forward pass.
pub enum Tape {
    FullyConnected { input: Matrix },
    BatchNormTrain { xhat: Matrix, inv_std: Vec<f64> },
    BatchNormInference { scale: Vec<f64> },
    Activation { input: Matrix },
    Dropout { mask: Option<Matrix> },
    PowerNorm(PowerNormTape),
    SigmoidHead { probs: Matrix },
}

/// Gradients for one layer, parallel to its trainable parameters.
pub enum LayerGrads {
    FullyConnected { d_weight: Matrix, d_bias: Vec<f64> },
    BatchNorm { d_gamma: Vec<f64>, d_beta: Vec<f64> },
    None,
}

impl Layer {
    fn forward(
        &mut self,
        x: &Matrix,
        mode: Mode,
        update_stats: bool,
        rng: &mut SplitRng,
    ) -> Result<(Matrix, Tape)> {
        match self {
            Layer::FullyConnected(fc) => {
                if x.cols() != fc.weight.rows() {
                    return Err(Error::DimensionMismatch {
                        expected: fc.weight.rows(),
                        got: x.cols(),
                        context: "fully-connected input",
                    });
                }
                Ok((fc.forward(x), Tape::FullyConnected { input: x.clone() }))
            }
            Layer::BatchNorm(bn) => {
                let dim = bn.dim();
                if x.cols() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: x.cols(),
                        context: "batch-norm input",
                    });
                }
                match mode {
                    Mode::Training => {
                        let m = x.rows() as f64;
                        let mut mean = vec![0.0; dim];
                        let mut var = vec![0.0; dim];
                        for r in 0..x.rows() {
                            for (j, &v) in x.row(r).iter().enumerate() {
                                mean[j] += v;
                            }
                        }
                        for v in &mut mean {
                            *v /= m;
                        }
                        for r in 0..x.rows() {
                            for (j, &v) in x.row(r).iter().enumerate() {
                                let d = v - mean[j];
                                var[j] += d * d;
                            }
                        }
                        for v in &mut var {
                            *v /= m;
                        }
                        let inv_std: Vec<f64> =
                            var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
                        let mut xhat = Matrix::zeros(x.rows(), dim);
                        let mut y = Matrix::zeros(x.rows(), dim);
                        for r in 0..x.rows() {
                            for j in 0..dim {
                                let h = (x.get(r, j) - mean[j]) * inv_std[j];
                                xhat.set(r, j, h);
                                y.set(r, j, bn.gamma[j] * h + bn.beta[j]);
                            }
                        }
                        if update_stats {
                            for j in 0..dim {
                                bn.running_mean[j] = STATS_MOMENTUM * bn.running_mean[j]
                                    + (1.0 - STATS_MOMENTUM) * mean[j];
                                bn.running_var[j] = STATS_MOMENTUM * bn.running_var[j]
                                    + (1.0 - STATS_MOMENTUM) * var[j];
                            }
                        }
                        Ok((y, Tape::BatchNormTrain { xhat, inv_std }))
                    }
                    Mode::Inference => {
                        let scale: Vec<f64> = bn
                            .gamma
                            .iter()
                            .zip(&bn.running_var)
                            .map(|(&g, &v)| g / (v + BN_EPS).sqrt())
                            .collect();
                        let mut y = Matrix::zeros(x.rows(), dim);
                        for r in 0..x.rows() {
                            for j in 0..dim {
                                y.set(
                                    r,
                                    j,
                                    scale[j] * (x.get(r, j) - bn.running_mean[j]) + bn.beta[j],
                                );
                            }
                        }
                        Ok((y, Tape::BatchNormInference { scale }))
                    }
                }
            }
            Layer::Activation(act) => {
                let y = x.map(|v| act.apply(v));
                Ok((y, Tape::Activation { input: x.clone() }))
            }
            Layer::Dropout(rate) => match mode {
                Mode::Training if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let mask = Matrix::from_fn(x.rows(), x.cols(), |_, _| {
                        if rng.uniform() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    let mut y = x.clone();
                    for (v, m) in y.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                        *v *= m;
                    }
                    Ok((y, Tape::Dropout { mask: Some(mask) }))
                }
                _ => Ok((x.clone(), Tape::Dropout { mask: None })),
            },
            Layer::PowerNorm(pn) => {
                let (y, tape) = pn.forward(x, mode, update_stats)?;
                Ok((y, Tape::PowerNorm(tape)))
            }
            Layer::SigmoidHead => {
                let probs = x.map(|v| 1.0 / (1.0 + (-v).exp()));
                Ok((probs.clone(), Tape::SigmoidHead { probs }))
            }
        }
    }

    /// Returns the gradient w.r.t. the layer input and the parameter grads.
    fn backward(&self, tape: &Tape, grad_out: &Matrix) -> (Matrix, LayerGrads) {
        match (self, tape) {
            (Layer::FullyConnected(fc), Tape::FullyConnected { input }) => {
                let d_weight = input.transpose_matmul(grad_out);
                let mut d_bias = vec![0.0; fc.bias.len()];
                for r in 0..grad_out.rows() {
                    for (b, &g) in d_bias.iter_mut().zip(grad_out.row(r)) {
                        *b += g;
                    }
                }
                let d_input = grad_out.matmul_transpose(&fc.weight);
                (d_input, LayerGrads::FullyConnected { d_weight, d_bias })
            }
            (Layer::BatchNorm(bn), Tape::BatchNormTrain { xhat, inv_std }) => {
                let dim = bn.dim();
                let m = xhat.rows() as f64;
                let mut d_gamma = vec![0.0; dim];
                let mut d_beta = vec![0.0; dim];
                for r in 0..xhat.rows() {
                    for j in 0..dim {
                        let g = grad_out.get(r, j);
                        d_beta[j] += g;
                        d_gamma[j] += g * xhat.get(r, j);
                    }
                }
                // dx = gamma * inv_std / m * (m g - sum(g) - xhat * sum(g xhat))
                let mut d_input = Matrix::zeros(xhat.rows(), dim);
                for r in 0..xhat.rows() {
                    for j in 0..dim {
                        let g = grad_out.get(r, j);
                        let v = bn.gamma[j] * inv_std[j] / m
                            * (m * g - d_beta[j] - xhat.get(r, j) * d_gamma[j]);
                        d_input.set(r, j, v);
                    }
                }
                (d_input, LayerGrads::BatchNorm { d_gamma, d_beta })
            }
            (Layer::BatchNorm(bn), Tape::BatchNormInference { scale }) => {
                // Inference-mode statistics are constants; only the affine
                // part carries gradient.
                let dim = bn.dim();
                let mut d_beta = vec![0.0; dim];
                for r in 0..grad_out.rows() {
                    for j in 0..dim {
                        d_beta[j] += grad_out.get(r, j);
                    }
                }
                let mut d_input = Matrix::zeros(grad_out.rows(), dim);
                for r in 0..grad_out.rows() {
                    for j in 0..dim {
                        d_input.set(r, j, grad_out.get(r, j) * scale[j]);
                    }
                }
                (
                    d_input,
                    LayerGrads::BatchNorm {
                        d_gamma: vec![0.0; dim],
                        d_beta,
                    },
                )
            }
            (Layer::Activation(act), Tape::Activation { input }) => {
                let mut d_input = Matrix::zeros(input.rows(), input.cols());
                for ((o, g), x) in d_input
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad_out.as_slice())
                    .zip(input.as_slice())
                {
                    *o = g * act.derivative(*x);
                }
                (d_input, LayerGrads::None)
            }
            (Layer::Dropout(_), Tape::Dropout { mask }) => {
                let d_input = match mask {
                    Some(m) => {
                        let mut d = grad_out.clone();
                        for (v, k) in d.as_mut_slice().iter_mut().zip(m.as_slice()) {
                            *v *= k;
                        }
                        d
                    }
                    None => grad_out.clone(),
                };
                (d_input, LayerGrads::None)
            }
            (Layer::PowerNorm(pn), Tape::PowerNorm(t)) => {
                (pn.backward(t, grad_out), LayerGrads::None)
            }
            (Layer::SigmoidHead, Tape::SigmoidHead { probs }) => {
                let mut d_input = Matrix::zeros(probs.rows(), probs.cols());
                for ((o, g), p) in d_input
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad_out.as_slice())
                    .zip(probs.as_slice())
                {
                    *o = g * p * (1.0 - p);
                }
                (d_input, LayerGrads::None)
            }
            _ => unreachable!("tape kind does not match layer kind"),
        }
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        match self {
            Layer::FullyConnected(fc) => fc.weight.rows() * fc.weight.cols() + fc.bias.len(),
            Layer::BatchNorm(bn) => 2 * bn.dim(),
            _ => 0,
        }
    }
}

/// A stack of layers with a shared forward/backward interface.
#[derive(Clone, Debug, Default)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Forward-pass record: final output plus every intermediate needed by
/// backward.
pub struct ForwardPass {
    pub output: Matrix,
    tapes: Vec<Tape>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn forward(
        &mut self,
        input: &Matrix,
        mode: Mode,
        update_stats: bool,
        rng: &mut SplitRng,
    ) -> Result<ForwardPass> {
        if !input.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        let mut tapes = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &mut self.layers {
            let (y, tape) = layer.forward(&x, mode, update_stats, rng)?;
            tapes.push(tape);
            x = y;
        }
        Ok(ForwardPass { output: x, tapes })
    }

    /// Backpropagates `grad_output` through the stack.
    ///
    /// Returns the gradient at the network input and the flat parameter
    /// gradient aligned with the get/set_param ordering. `l2` adds 2*l2*W to
    /// every fully-connected weight gradient (weights only, no biases).
    pub fn backward(
        &self,
        pass: &ForwardPass,
        grad_output: &Matrix,
        l2: f64,
    ) -> (Matrix, Vec<f64>) {
        assert_eq!(
            pass.tapes.len(),
            self.layers.len(),
            "forward pass from a different network"
        );
        let mut flat = vec![0.0; self.param_count()];
        let offsets = self.param_offsets();
        let mut grad = grad_output.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let (g_in, g_params) = layer.backward(&pass.tapes[idx], &grad);
            match g_params {
                LayerGrads::FullyConnected { d_weight, d_bias } => {
                    let off = offsets[idx];
                    let wlen = d_weight.rows() * d_weight.cols();
                    let dest = &mut flat[off..off + wlen];
                    if l2 > 0.0 {
                        if let Layer::FullyConnected(fc) = layer {
                            for ((d, g), w) in dest
                                .iter_mut()
                                .zip(d_weight.as_slice())
                                .zip(fc.weight.as_slice())
                            {
                                *d = g + 2.0 * l2 * w;
                            }
                        }
                    } else {
                        dest.copy_from_slice(d_weight.as_slice());
                    }
                    flat[off + wlen..off + wlen + d_bias.len()].copy_from_slice(&d_bias);
                }
                LayerGrads::BatchNorm { d_gamma, d_beta } => {
                    let off = offsets[idx];
                    let dim = d_gamma.len();
                    flat[off..off + dim].copy_from_slice(&d_gamma);
                    flat[off + dim..off + 2 * dim].copy_from_slice(&d_beta);
                }
                LayerGrads::None => {}
            }
            grad = g_in;
        }
        (grad, flat)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    fn param_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_count();
        }
        offsets
    }

    /// L2 penalty term l2 * sum ||W||^2 over fully-connected weights.
    pub fn l2_penalty(&self, l2: f64) -> f64 {
        if l2 == 0.0 {
            return 0.0;
        }
        l2 * self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::FullyConnected(fc) => {
                    fc.weight.as_slice().iter().map(|w| w * w).sum::<f64>()
                }
                _ => 0.0,
            })
            .sum::<f64>()
    }

    pub fn get_param(&self, index: usize) -> f64 {
        let mut idx = index;
        for layer in &self.layers {
            let n = layer.param_count();
            if idx < n {
                return match layer {
                    Layer::FullyConnected(fc) => {
                        let wlen = fc.weight.rows() * fc.weight.cols();
                        if idx < wlen {
                            fc.weight.as_slice()[idx]
                        } else {
                            fc.bias[idx - wlen]
                        }
                    }
                    Layer::BatchNorm(bn) => {
                        let d = bn.dim();
                        if idx < d {
                            bn.gamma[idx]
                        } else {
                            bn.beta[idx - d]
                        }
                    }
                    _ => unreachable!(),
                };
            }
            idx -= n;
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut idx = index;
        for layer in &mut self.layers {
            let n = layer.param_count();
            if idx < n {
                match layer {
                    Layer::FullyConnected(fc) => {
                        let wlen = fc.weight.rows() * fc.weight.cols();
                        if idx < wlen {
                            fc.weight.as_mut_slice()[idx] = value;
                        } else {
                            fc.bias[idx - wlen] = value;
                        }
                    }
                    Layer::BatchNorm(bn) => {
                        let d = bn.dim();
                        if idx < d {
                            bn.gamma[idx] = value;
                        } else {
                            bn.beta[idx - d] = value;
                        }
                    }
                    _ => unreachable!(),
                }
                return;
            }
            idx -= n;
        }
        panic!("parameter index {index} out of range");
    }
}

/// Per-bit binary cross-entropy with natural log: mean over the batch of the
/// summed per-bit negative log-likelihood. Probabilities are clamped to
/// [PROB_CLAMP, 1 - PROB_CLAMP].
pub fn bce_loss(probs: &Matrix, bits: &Matrix) -> Result<f64> {
    if probs.rows() != bits.rows() || probs.cols() != bits.cols() {
        return Err(Error::DimensionMismatch {
            expected: bits.cols(),
            got: probs.cols(),
            context: "bce probabilities vs bits",
        });
    }
    let mut total = 0.0;
    for (&p, &b) in probs.as_slice().iter().zip(bits.as_slice()) {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= b * p.ln() + (1.0 - b) * (1.0 - p).ln();
    }
    Ok(total / probs.rows() as f64)
}

/// Gradient of [`bce_loss`] w.r.t. the probabilities.
///
/// Entries in the clamp region get zero gradient, matching the derivative of
/// the clamped loss.
pub fn bce_grad(probs: &Matrix, bits: &Matrix) -> Result<Matrix> {
    if probs.rows() != bits.rows() || probs.cols() != bits.cols() {
        return Err(Error::DimensionMismatch {
            expected: bits.cols(),
            got: probs.cols(),
            context: "bce probabilities vs bits",
        });
    }
    let m = probs.rows() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    for ((g, &p), &b) in grad
        .as_mut_slice()
        .iter_mut()
        .zip(probs.as_slice())
        .zip(bits.as_slice())
    {
        if p < PROB_CLAMP || p > 1.0 - PROB_CLAMP {
            *g = 0.0;
        } else {
            *g = (-b / p + (1.0 - b) / (1.0 - p)) / m;
        }
    }
    Ok(grad)
}

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one network's parameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(param_count: usize) -> Self {
        Self {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update over the network's trainable parameters.
pub fn adam_step(
    net: &mut Network,
    grads: &[f64],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    assert_eq!(grads.len(), net.param_count(), "gradient length");
    assert_eq!(grads.len(), state.m.len(), "optimizer state length");
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainAborted("non-finite gradient".into()));
    }
    state.t += 1;
    let bc1 = 1.0 - hyper.beta1.powi(state.t as i32);
    let bc2 = 1.0 - hyper.beta2.powi(state.t as i32);
    let update = |slice: &mut [f64], start: usize, m: &mut [f64], v: &mut [f64]| {
        for (i, p) in slice.iter_mut().enumerate() {
            let g = grads[start + i];
            let mi = &mut m[start + i];
            let vi = &mut v[start + i];
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * g;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= hyper.lr * mhat / (vhat.sqrt() + hyper.eps);
        }
    };
    let mut cursor = 0;
    for layer in &mut net.layers {
        let n = layer.param_count();
        if n == 0 {
            continue;
        }
        match layer {
            Layer::FullyConnected(fc) => {
                let wlen = fc.weight.rows() * fc.weight.cols();
                update(fc.weight.as_mut_slice(), cursor, &mut state.m, &mut state.v);
                update(&mut fc.bias, cursor + wlen, &mut state.m, &mut state.v);
            }
            Layer::BatchNorm(bn) => {
                let d = bn.gamma.len();
                update(&mut bn.gamma, cursor, &mut state.m, &mut state.v);
                update(&mut bn.beta, cursor + d, &mut state.m, &mut state.v);
            }
            _ => {}
        }
        cursor += n;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> SplitRng {
        SplitRng::new(1234)
    }

    #[test]
    fn zero_weight_fc_outputs_bias() {
        let mut fc = FcLayer::zeros(3, 2);
        fc.bias = vec![0.5, -1.5];
        let mut net = Network::new(vec![Layer::FullyConnected(fc)]);
        let x = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -4.0, 0.0, 9.0]);
        let pass = net.forward(&x, Mode::Inference, false, &mut rng()).unwrap();
        assert_eq!(pass.output.row(0), &[0.5, -1.5]);
        assert_eq!(pass.output.row(1), &[0.5, -1.5]);
    }

    #[test]
    fn forward_rejects_non_finite_input() {
        let mut net = Network::new(vec![Layer::Activation(Activation::Relu)]);
        let x = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]);
        assert!(net.forward(&x, Mode::Inference, false, &mut rng()).is_err());
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let mut net = Network::new(vec![Layer::FullyConnected(FcLayer::zeros(3, 2))]);
        let x = Matrix::zeros(1, 4);
        assert!(matches!(
            net.forward(&x, Mode::Inference, false, &mut rng()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn batch_norm_standardizes_batch() {
        let dim = 4;
        let mut net = Network::new(vec![Layer::BatchNorm(BatchNormLayer::new(dim))]);
        let mut r = rng();
        let x = Matrix::from_fn(64, dim, |_, c| 3.0 * r.gaussian() + c as f64);
        let pass = net.forward(&x, Mode::Training, true, &mut r).unwrap();
        for j in 0..dim {
            let mut mean = 0.0;
            for i in 0..64 {
                mean += pass.output.get(i, j);
            }
            mean /= 64.0;
            let mut var = 0.0;
            for i in 0..64 {
                let d = pass.output.get(i, j) - mean;
                var += d * d;
            }
            var /= 64.0;
            assert!(mean.abs() < 1e-6, "column {j} mean {mean}");
            // variance 1 up to the BN_EPS floor
            assert!((var - 1.0).abs() < 1e-2, "column {j} var {var}");
        }
    }

    #[test]
    fn hand_computed_2_2_1_network() {
        // x -> FC(2->2) -> leaky relu (0.1) -> FC(2->1)
        let mut fc1 = FcLayer::zeros(2, 2);
        fc1.weight = Matrix::from_vec(2, 2, vec![1.0, -2.0, 0.5, 3.0]);
        fc1.bias = vec![0.1, -0.2];
        let mut fc2 = FcLayer::zeros(2, 1);
        fc2.weight = Matrix::from_vec(2, 1, vec![2.0, -1.0]);
        fc2.bias = vec![0.3];
        let mut net = Network::new(vec![
            Layer::FullyConnected(fc1),
            Layer::Activation(Activation::LeakyRelu(0.1)),
            Layer::FullyConnected(fc2),
        ]);
        let x = Matrix::from_vec(1, 2, vec![1.0, 2.0]);
        // h = [1*1 + 2*0.5 + 0.1, 1*(-2) + 2*3 - 0.2] = [2.1, 3.8]
        // leaky: [2.1, 3.8]; y = 2*2.1 - 3.8 + 0.3 = 0.7
        let pass = net.forward(&x, Mode::Inference, false, &mut rng()).unwrap();
        assert!((pass.output.get(0, 0) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn power_norm_scales_to_unit_power() {
        let mut pn = PowerNormLayer::new();
        let x = Matrix::from_vec(2, 2, vec![2.0, -2.0, 2.0, 2.0]);
        let (y, _) = pn.forward(&x, Mode::Training, true).unwrap();
        // mean square 4 -> every element scaled by 1/2
        assert_eq!(y.as_slice(), &[1.0, -1.0, 1.0, 1.0]);

        let unit = Matrix::from_vec(1, 2, vec![1.0, -1.0]);
        let (y, _) = pn.forward(&unit, Mode::Training, true).unwrap();
        assert!(y.max_abs_diff(&unit) < 1e-12);
    }

    #[test]
    fn power_norm_inference_identity_after_unit_power_training() {
        let mut pn = PowerNormLayer::new();
        let unit = Matrix::from_vec(1, 4, vec![1.0, -1.0, 1.0, -1.0]);
        for _ in 0..10 {
            pn.forward(&unit, Mode::Training, true).unwrap();
        }
        assert!((pn.factor() - 1.0).abs() < 1e-12);
        let x = Matrix::from_vec(1, 4, vec![0.3, 2.0, -0.7, 0.1]);
        let (y, _) = pn.forward(&x, Mode::Inference, false).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn power_norm_rejects_zero_batch() {
        let mut pn = PowerNormLayer::new();
        let x = Matrix::zeros(3, 4);
        assert!(matches!(
            pn.forward(&x, Mode::Training, true),
            Err(Error::DegeneratePower)
        ));
    }

    #[test]
    fn bce_values() {
        let bits = Matrix::from_vec(1, 1, vec![1.0]);
        let half = Matrix::from_vec(1, 1, vec![0.5]);
        let loss = bce_loss(&half, &bits).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);

        // probs equal to bits: loss bounded by k * ln(1/(1-eps)) ~ 0
        let k = 8;
        let bits = Matrix::from_fn(4, k, |r, c| ((r + c) % 2) as f64);
        let loss = bce_loss(&bits, &bits).unwrap();
        assert!(loss >= 0.0);
        assert!(loss <= k as f64 * (1.0 / (1.0 - PROB_CLAMP)).ln() + 1e-12);

        let wrong_shape = Matrix::zeros(4, k + 1);
        assert!(bce_loss(&wrong_shape, &bits).is_err());
    }

    #[test]
    fn bce_positive_when_prediction_off() {
        let bits = Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]);
        let close = Matrix::from_vec(2, 2, vec![0.1, 0.9, 0.9, 0.1]);
        assert!(bce_loss(&close, &bits).unwrap() > 0.0);
    }

    #[test]
    fn bce_logit_gradient_matches_finite_differences() {
        // Loss as a function of pre-head logits via the sigmoid head.
        let mut r = rng();
        let logits = Matrix::from_fn(3, 4, |_, _| r.gaussian());
        let bits = Matrix::from_fn(3, 4, |_, _| r.bit() as f64);
        let mut head = Network::new(vec![Layer::SigmoidHead]);

        let mut loss_at = |head: &mut Network, z: &Matrix| {
            let pass = head.forward(z, Mode::Training, false, &mut rng()).unwrap();
            bce_loss(&pass.output, &bits).unwrap()
        };

        let pass = head.forward(&logits, Mode::Training, false, &mut r).unwrap();
        let g_probs = bce_grad(&pass.output, &bits).unwrap();
        let (g_logits, _) = head.backward(&pass, &g_probs, 0.0);

        let h = 1e-5;
        for i in 0..logits.rows() {
            for j in 0..logits.cols() {
                let mut zp = logits.clone();
                zp.set(i, j, logits.get(i, j) + h);
                let mut zm = logits.clone();
                zm.set(i, j, logits.get(i, j) - h);
                let fd = (loss_at(&mut head, &zp) - loss_at(&mut head, &zm)) / (2.0 * h);
                let an = g_logits.get(i, j);
                let denom = fd.abs().max(an.abs()).max(1e-8);
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "({i},{j}): fd {fd} vs analytic {an}"
                );
            }
        }
    }

    /// Central-difference gradient check over every parameter of a stack.
    fn gradcheck_network(mut net: Network, in_dim: usize, l2: f64, seed: u64) {
        let mut r = SplitRng::new(seed);
        let batch = 5;
        let x = Matrix::from_fn(batch, in_dim, |_, _| r.gaussian());
        let out_dim = {
            let pass = net
                .forward(&x, Mode::Training, false, &mut SplitRng::new(7))
                .unwrap();
            pass.output.cols()
        };
        let bits = Matrix::from_fn(batch, out_dim, |_, _| r.bit() as f64);

        // Deterministic per-evaluation stream so dropout masks repeat.
        let loss_of = |net: &mut Network| -> f64 {
            let mut eval_rng = SplitRng::new(7);
            let pass = net.forward(&x, Mode::Training, false, &mut eval_rng).unwrap();
            let probs = pass.output.map(|v| 1.0 / (1.0 + (-v).exp()));
            bce_loss(&probs, &bits).unwrap() + net.l2_penalty(l2)
        };

        let mut eval_rng = SplitRng::new(7);
        let pass = net.forward(&x, Mode::Training, false, &mut eval_rng).unwrap();
        let probs = pass.output.map(|v| 1.0 / (1.0 + (-v).exp()));
        let g_probs = bce_grad(&probs, &bits).unwrap();
        let mut g_out = Matrix::zeros(probs.rows(), probs.cols());
        for ((o, g), p) in g_out
            .as_mut_slice()
            .iter_mut()
            .zip(g_probs.as_slice())
            .zip(probs.as_slice())
        {
            *o = g * p * (1.0 - p);
        }
        let (_, analytic) = net.backward(&pass, &g_out, l2);

        let h = 1e-5;
        for idx in 0..net.param_count() {
            let orig = net.get_param(idx);
            net.set_param(idx, orig + h);
            let lp = loss_of(&mut net);
            net.set_param(idx, orig - h);
            let lm = loss_of(&mut net);
            net.set_param(idx, orig);
            let fd = (lp - lm) / (2.0 * h);
            let an = analytic[idx];
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!(
                (fd - an).abs() / denom <= 1e-4,
                "param {idx}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn gradcheck_fc_activation_stack() {
        let mut r = rng();
        let net = Network::new(vec![
            Layer::FullyConnected(FcLayer::init(3, 6, 1.4, &mut r)),
            Layer::Activation(Activation::LeakyRelu(0.01)),
            Layer::FullyConnected(FcLayer::init(6, 2, 1.0, &mut r)),
        ]);
        gradcheck_network(net, 3, 0.0, 21);
    }

    #[test]
    fn gradcheck_batch_norm_stack() {
        let mut r = rng();
        let net = Network::new(vec![
            Layer::FullyConnected(FcLayer::init(4, 5, 1.4, &mut r)),
            Layer::BatchNorm(BatchNormLayer::new(5)),
            Layer::Activation(Activation::Relu),
            Layer::FullyConnected(FcLayer::init(5, 3, 1.0, &mut r)),
        ]);
        gradcheck_network(net, 4, 0.0, 22);
    }

    #[test]
    fn gradcheck_dropout_and_power_norm_with_l2() {
        let mut r = rng();
        let net = Network::new(vec![
            Layer::FullyConnected(FcLayer::init(4, 8, 1.4, &mut r)),
            Layer::Dropout(0.25),
            Layer::Activation(Activation::LeakyRelu(0.1)),
            Layer::PowerNorm(PowerNormLayer::new()),
            Layer::FullyConnected(FcLayer::init(8, 2, 1.0, &mut r)),
        ]);
        gradcheck_network(net, 4, 1e-4, 23);
    }

    #[test]
    fn l2_gradient_difference_is_linear_in_weights() {
        let mut r = rng();
        let mut net = Network::new(vec![Layer::FullyConnected(FcLayer::init(3, 2, 1.0, &mut r))]);
        let x = Matrix::from_fn(4, 3, |_, _| r.gaussian());
        let bits = Matrix::from_fn(4, 2, |_, _| r.bit() as f64);
        let pass = net.forward(&x, Mode::Training, false, &mut r).unwrap();
        let probs = pass.output.map(|v| 1.0 / (1.0 + (-v).exp()));
        let g_probs = bce_grad(&probs, &bits).unwrap();
        let mut g_out = Matrix::zeros(4, 2);
        for ((o, g), p) in g_out
            .as_mut_slice()
            .iter_mut()
            .zip(g_probs.as_slice())
            .zip(probs.as_slice())
        {
            *o = g * p * (1.0 - p);
        }
        let lambda = 0.01;
        let (_, g0) = net.backward(&pass, &g_out, 0.0);
        let (_, g1) = net.backward(&pass, &g_out, lambda);
        for idx in 0..6 {
            let w = net.get_param(idx);
            assert!((g1[idx] - g0[idx] - 2.0 * lambda * w).abs() < 1e-12);
        }
        // bias entries unaffected
        for idx in 6..8 {
            assert_eq!(g0[idx], g1[idx]);
        }
    }

    #[test]
    fn duplicated_sample_contributes_identically() {
        let mut r = rng();
        let mut net = Network::new(vec![
            Layer::FullyConnected(FcLayer::init(3, 4, 1.4, &mut r)),
            Layer::Activation(Activation::LeakyRelu(0.01)),
            Layer::FullyConnected(FcLayer::init(4, 2, 1.0, &mut r)),
        ]);
        let row: Vec<f64> = (0..3).map(|_| r.gaussian()).collect();
        let bits_row = [1.0, 0.0];

        let mut grads_for = |net: &mut Network, reps: usize| -> Vec<f64> {
            let mut data = Vec::new();
            let mut bits = Vec::new();
            for _ in 0..reps {
                data.extend_from_slice(&row);
                bits.extend_from_slice(&bits_row);
            }
            let x = Matrix::from_vec(reps, 3, data);
            let b = Matrix::from_vec(reps, 2, bits);
            let pass = net
                .forward(&x, Mode::Training, false, &mut SplitRng::new(1))
                .unwrap();
            let probs = pass.output.map(|v| 1.0 / (1.0 + (-v).exp()));
            let g_probs = bce_grad(&probs, &b).unwrap();
            let mut g_out = Matrix::zeros(reps, 2);
            for ((o, g), p) in g_out
                .as_mut_slice()
                .iter_mut()
                .zip(g_probs.as_slice())
                .zip(probs.as_slice())
            {
                *o = g * p * (1.0 - p);
            }
            net.backward(&pass, &g_out, 0.0).1
        };

        let g1 = grads_for(&mut net, 1);
        let g3 = grads_for(&mut net, 3);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((a - b).abs() < 1e-12, "batch-mean linearity: {a} vs {b}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut r = rng();
        let mut net = Network::new(vec![Layer::FullyConnected(FcLayer::init(2, 2, 1.0, &mut r))]);
        let before: Vec<f64> = (0..net.param_count()).map(|i| net.get_param(i)).collect();
        let mut state = AdamState::new(net.param_count());
        let grads = vec![0.0; net.param_count()];
        adam_step(&mut net, &grads, &mut state, &AdamHyper::with_lr(1e-3)).unwrap();
        for (i, b) in before.iter().enumerate() {
            assert_eq!(net.get_param(i), *b);
        }
    }

    #[test]
    fn adam_first_step_closed_form() {
        // Single scalar parameter, g = 1, lr = 1e-3: update = -lr / (1 + eps)
        let mut fc = FcLayer::zeros(1, 1);
        fc.weight = Matrix::from_vec(1, 1, vec![0.25]);
        let mut net = Network::new(vec![Layer::FullyConnected(fc)]);
        let mut state = AdamState::new(2);
        let hyper = AdamHyper::with_lr(1e-3);
        adam_step(&mut net, &[1.0, 0.0], &mut state, &hyper).unwrap();
        let expected = 0.25 - 1e-3 / (1.0 + hyper.eps);
        assert!((net.get_param(0) - expected).abs() < 1e-15);
        assert_eq!(net.get_param(1), 0.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = Network::new(vec![Layer::FullyConnected(FcLayer::zeros(1, 1))]);
        let mut state = AdamState::new(2);
        let res = adam_step(
            &mut net,
            &[f64::NAN, 0.0],
            &mut state,
            &AdamHyper::with_lr(1e-3),
        );
        assert!(matches!(res, Err(Error::TrainAborted(_))));
    }

    #[test]
    fn adam_deterministic() {
        let build = || {
            let mut r = SplitRng::new(55);
            Network::new(vec![
                Layer::FullyConnected(FcLayer::init(3, 3, 1.4, &mut r)),
                Layer::Activation(Activation::Relu),
                Layer::FullyConnected(FcLayer::init(3, 1, 1.0, &mut r)),
            ])
        };
        let run = || {
            let mut net = build();
            let mut state = AdamState::new(net.param_count());
            let mut r = SplitRng::new(77);
            for _ in 0..20 {
                let x = Matrix::from_fn(4, 3, |_, _| r.gaussian());
                let bits = Matrix::from_fn(4, 1, |_, _| r.bit() as f64);
                let pass = net.forward(&x, Mode::Training, true, &mut r).unwrap();
                let probs = pass.output.map(|v| 1.0 / (1.0 + (-v).exp()));
                let g_probs = bce_grad(&probs, &bits).unwrap();
                let mut g_out = Matrix::zeros(4, 1);
                for ((o, g), p) in g_out
                    .as_mut_slice()
                    .iter_mut()
                    .zip(g_probs.as_slice())
                    .zip(probs.as_slice())
                {
                    *o = g * p * (1.0 - p);
                }
                let (_, grads) = net.backward(&pass, &g_out, 1e-5);
                adam_step(&mut net, &grads, &mut state, &AdamHyper::with_lr(1e-3)).unwrap();
            }
            (0..net.param_count())
                .map(|i| net.get_param(i).to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batch_norm_train_inference_consistency() {
        // After running stats converge on a stationary distribution,
        // training-mode and inference-mode outputs agree within 1e-2 RMS.
        let dim = 6;
        let mut net = Network::new(vec![Layer::BatchNorm(BatchNormLayer::new(dim))]);
        let mut r = rng();
        for _ in 0..800 {
            let x = Matrix::from_fn(1024, dim, |_, c| 2.0 * r.gaussian() + 0.3 * c as f64);
            net.forward(&x, Mode::Training, true, &mut r).unwrap();
        }
        // Large comparison batch so the batch statistic itself is converged.
        let x = Matrix::from_fn(65536, dim, |_, c| 2.0 * r.gaussian() + 0.3 * c as f64);
        let train_out = net
            .forward(&x, Mode::Training, false, &mut r)
            .unwrap()
            .output;
        let inf_out = net
            .forward(&x, Mode::Inference, false, &mut r)
            .unwrap()
            .output;
        let mut sq = 0.0;
        for (a, b) in train_out.as_slice().iter().zip(inf_out.as_slice()) {
            sq += (a - b) * (a - b);
        }
        let rms = (sq / train_out.as_slice().len() as f64).sqrt();
        assert!(rms < 1e-2, "rms {rms}");
    }
}
