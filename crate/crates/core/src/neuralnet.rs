//! Dense feed-forward networks trained by full-batch backpropagation.
//!
//! Hidden layers apply `softplus(z) = ln(1 + e^z)`, the output layer is
//! affine. Batches are stored column-wise: an input batch is an
//! `n_in × N` matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Softplus,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(z),
            Activation::Identity => z,
        }
    }

    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(z),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRecord", into = "NetworkRecord")]
pub struct DenseNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    hidden: Activation,
}

/// JSON layout: weight matrices flattened row-major.
#[derive(Serialize, Deserialize)]
struct NetworkRecord {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
}

impl From<DenseNetwork> for NetworkRecord {
    fn from(net: DenseNetwork) -> Self {
        NetworkRecord {
            weights: net
                .weights
                .iter()
                .map(|w| w.transpose().as_slice().to_vec())
                .collect(),
            biases: net.biases.iter().map(|b| b.as_slice().to_vec()).collect(),
            layer_sizes: net.layer_sizes,
            activation: net.hidden,
        }
    }
}

impl TryFrom<NetworkRecord> for DenseNetwork {
    type Error = Error;

    fn try_from(rec: NetworkRecord) -> Result<Self> {
        let n_layers = rec.layer_sizes.len().saturating_sub(1);
        check_len(n_layers, rec.weights.len(), "weight matrix count")?;
        check_len(n_layers, rec.biases.len(), "bias vector count")?;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for (h, (w, b)) in rec.weights.into_iter().zip(rec.biases).enumerate() {
            let (rows, cols) = (rec.layer_sizes[h + 1], rec.layer_sizes[h]);
            check_len(rows * cols, w.len(), "weight matrix size")?;
            check_len(rows, b.len(), "bias length")?;
            weights.push(DMatrix::from_row_slice(rows, cols, &w));
            biases.push(DVector::from_vec(b));
        }
        let net = DenseNetwork {
            layer_sizes: rec.layer_sizes,
            weights,
            biases,
            hidden: rec.activation,
        };
        if !net.is_finite() {
            return Err(Error::Invalid("network parameters must be finite".into()));
        }
        Ok(net)
    }
}

/// Gradient with the same layout as the network parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }
}

/// Pre- and post-activation values of one batched forward pass.
pub(crate) struct Tape {
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
}

impl Tape {
    pub(crate) fn output(&self) -> &DMatrix<f64> {
        self.post.last().unwrap()
    }
}

impl DenseNetwork {
    /// Random network; weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new(layer_sizes: &[usize], hidden: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Invalid(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)));
            biases.push(DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..bound)));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            hidden,
        })
    }

    pub fn from_parts(weights: Vec<DMatrix<f64>>, biases: Vec<DVector<f64>>, hidden: Activation) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Empty("network needs at least one layer"));
        }
        check_len(weights.len(), biases.len(), "bias vector count")?;
        let mut layer_sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            check_len(*layer_sizes.last().unwrap(), w.ncols(), "weight matrix columns")?;
            check_len(w.nrows(), b.len(), "bias length")?;
            layer_sizes.push(w.nrows());
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            hidden,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[DVector<f64>] {
        &self.biases
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Parameters in the order used by [`Gradient::flatten`].
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params_flat(&mut self, theta: &[f64]) -> Result<()> {
        check_len(self.n_params(), theta.len(), "flat parameter vector")?;
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&theta[at..at + n]);
            at += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&theta[at..at + n]);
            at += n;
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        check_len(self.input_width(), input.len(), "network input")?;
        let x = DMatrix::from_column_slice(input.len(), 1, input);
        Ok(self.forward_batch(&x)?.as_slice().to_vec())
    }

    /// Columns of `inputs` are samples.
    pub fn forward_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.input_width(), inputs.nrows(), "network input")?;
        let last = self.weights.len() - 1;
        let mut a = inputs.clone();
        for (h, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            add_bias(&mut z, b);
            if h < last {
                z.apply(|v| *v = self.hidden.apply(*v));
            }
            a = z;
        }
        Ok(a)
    }

    pub(crate) fn forward_tape(&self, inputs: &DMatrix<f64>) -> Tape {
        let last = self.weights.len() - 1;
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = Vec::with_capacity(self.weights.len() + 1);
        post.push(inputs.clone());
        for (h, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * post.last().unwrap();
            add_bias(&mut z, b);
            let a = if h < last { z.map(|v| self.hidden.apply(v)) } else { z.clone() };
            pre.push(z);
            post.push(a);
        }
        Tape { pre, post }
    }

    /// `(1/N) Σ ||net(x_i) - y_i||²` over the columns.
    pub fn loss(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
        let out = self.forward_batch(inputs)?;
        check_shape(&out, targets)?;
        Ok((out - targets).norm_squared() / inputs.ncols() as f64)
    }

    fn l2_penalty(&self) -> f64 {
        self.weights.iter().map(|w| w.norm_squared()).sum::<f64>()
            + self.biases.iter().map(|b| b.norm_squared()).sum::<f64>()
    }

    /// Loss plus `weight_decay · ||θ||²`.
    pub fn objective(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, weight_decay: f64) -> Result<f64> {
        Ok(self.loss(inputs, targets)? + weight_decay * self.l2_penalty())
    }

    /// Gradient of [`DenseNetwork::objective`] with respect to every weight and bias.
    pub fn gradient(&self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, weight_decay: f64) -> Result<Gradient> {
        Ok(self.loss_and_gradient(inputs, targets, weight_decay)?.1)
    }

    /// Data loss (without the penalty) and the gradient of the full objective.
    pub fn loss_and_gradient(
        &self,
        inputs: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        weight_decay: f64,
    ) -> Result<(f64, Gradient)> {
        check_len(self.input_width(), inputs.nrows(), "network input")?;
        check_len(inputs.ncols(), targets.ncols(), "batch size")?;
        check_len(self.output_width(), targets.nrows(), "target width")?;
        if inputs.ncols() == 0 {
            return Err(Error::Empty("training batch"));
        }
        let n = inputs.ncols() as f64;
        let tape = self.forward_tape(inputs);
        let residual = tape.output() - targets;
        let loss = residual.norm_squared() / n;
        let (mut grad, _) = self.backward(&tape, residual * (2.0 / n), false);
        if weight_decay != 0.0 {
            for (g, w) in grad.weights.iter_mut().zip(&self.weights) {
                *g += w * (2.0 * weight_decay);
            }
            for (g, b) in grad.biases.iter_mut().zip(&self.biases) {
                *g += b * (2.0 * weight_decay);
            }
        }
        Ok((loss, grad))
    }

    /// Backpropagates `d_output` (derivative of a scalar loss with respect to
    /// the network output) through a recorded forward pass. Also returns the
    /// derivative with respect to the inputs when `want_input` is set.
    pub(crate) fn backward(
        &self,
        tape: &Tape,
        d_output: DMatrix<f64>,
        want_input: bool,
    ) -> (Gradient, Option<DMatrix<f64>>) {
        let n_layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); n_layers];
        let mut gb = vec![DVector::zeros(0); n_layers];
        let mut delta = d_output;
        let mut d_input = None;
        for h in (0..n_layers).rev() {
            gw[h] = &delta * tape.post[h].transpose();
            gb[h] = row_sums(&delta);
            if h > 0 {
                let mut back = self.weights[h].transpose() * &delta;
                let act = self.hidden;
                back.zip_apply(&tape.pre[h - 1], |d, z| *d *= act.derivative(z));
                delta = back;
            } else if want_input {
                d_input = Some(self.weights[0].transpose() * &delta);
            }
        }
        (Gradient { weights: gw, biases: gb }, d_input)
    }

    /// Full-batch Adam with decoupled weight decay.
    pub fn train(&mut self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        check_len(self.input_width(), inputs.nrows(), "network input")?;
        check_shape(&DMatrix::<f64>::zeros(self.output_width(), inputs.ncols()), targets)?;
        let mut theta = self.params_flat();
        let report = run_adam(&mut theta, cfg, |theta| {
            self.set_params_flat(theta)?;
            let (loss, grad) = self.loss_and_gradient(inputs, targets, 0.0)?;
            Ok((loss, grad.flatten()))
        })?;
        self.set_params_flat(&theta)?;
        Ok(report)
    }
}

/// Minimizes a loss over a flat parameter vector with Adam and decoupled
/// weight decay. `eval` returns the loss and its gradient at `theta`.
///
/// Stops before stepping once the loss is at or below the target; a
/// non-finite loss aborts with the last finite value.
pub(crate) fn run_adam(
    theta: &mut [f64],
    cfg: &TrainConfig,
    mut eval: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut history = Vec::with_capacity(cfg.max_epochs.min(1 << 20));
    let mut last_finite = f64::NAN;
    let (mut b1t, mut b2t) = (1.0, 1.0);
    for epoch in 0..cfg.max_epochs {
        let (loss, g) = eval(theta)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_loss: last_finite,
            });
        }
        history.push(loss);
        last_finite = loss;
        if loss <= cfg.target_loss {
            return Ok(TrainReport {
                history,
                final_loss: loss,
                epochs: epoch,
                reached_target: true,
            });
        }
        b1t *= beta1;
        b2t *= beta2;
        let (c1, c2) = (1.0 - b1t, 1.0 - b2t);
        for k in 0..theta.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let step = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            theta[k] -= cfg.learning_rate * (step + cfg.weight_decay * theta[k]);
        }
    }
    let (final_loss, _) = eval(theta)?;
    if !final_loss.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.max_epochs,
            last_loss: last_finite,
        });
    }
    Ok(TrainReport {
        history,
        final_loss,
        epochs: cfg.max_epochs,
        reached_target: final_loss <= cfg.target_loss,
    })
}

fn add_bias(z: &mut DMatrix<f64>, b: &DVector<f64>) {
    for mut col in z.column_iter_mut() {
        col += b;
    }
}

fn row_sums(m: &DMatrix<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for col in m.column_iter() {
        out += col;
    }
    out
}

fn check_shape(out: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    check_len(out.nrows(), targets.nrows(), "target width")?;
    check_len(out.ncols(), targets.ncols(), "batch size")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub target_loss: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Latent regressor settings: lr 5e-3, 100000 epochs, stop at 1e-4, decay 1e-7.
    pub fn ann_default() -> Self {
        Self {
            learning_rate: 5e-3,
            max_epochs: 100_000,
            target_loss: 1e-4,
            weight_decay: 1e-7,
            seed: 0,
        }
    }

    /// Autoencoder settings: lr 5e-4, 20000 epochs, stop at 5e-6, no decay.
    pub fn ae_default() -> Self {
        Self {
            learning_rate: 5e-4,
            max_epochs: 20_000,
            target_loss: 5e-6,
            weight_decay: 0.0,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.target_loss >= 0.0) {
            return Err(Error::Invalid(format!("target loss {} must be nonnegative", self.target_loss)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Invalid(format!("weight decay {} must be nonnegative", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Loss before each optimizer step.
    pub history: Vec<f64>,
    pub final_loss: f64,
    pub epochs: usize,
    pub reached_target: bool,
}
