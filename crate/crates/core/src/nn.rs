//! Dense layers and two-layer perceptrons.

use serde::{Deserialize, Serialize};

use crate::autodiff::{elu, BnMode, Graph, Var, BN_EPS};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Momentum of the running batch-norm statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Relu => x.max(0.0),
        }
    }

    fn record(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Elu => g.elu(x),
            Activation::Relu => g.relu(x),
        }
    }
}

/// Whether normalization layers use batch or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully connected layer `x·W + b` with `W: [in×out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input.max(1) as f64).sqrt();
        let w = (0..input * output).map(|_| rng.uniform(-bound, bound)).collect();
        let b = (0..output).map(|_| rng.uniform(-bound, bound)).collect();
        Self {
            weight: Tensor::new(vec![input, output], w).expect("sized"),
            bias: Tensor::new(vec![output], b).expect("sized"),
        }
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[input, output]),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> LinearVars {
        let leaf = |g: &mut Graph, t: &Tensor| {
            if trainable {
                g.param(t.clone())
            } else {
                g.constant(t.clone())
            }
        };
        LinearVars {
            weight: leaf(g, &self.weight),
            bias: leaf(g, &self.bias),
        }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearVars {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = g.matmul(x, self.weight)?;
        g.add_bias(h, self.bias)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: Tensor::full(&[width], 1.0),
            beta: Tensor::zeros(&[width]),
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    /// Folds one batch's statistics into the running estimates. The
    /// variance is stored unbiased.
    pub fn update_running(&mut self, mean: &[f64], var: &[f64], batch: usize) {
        let correction = if batch > 1 {
            batch as f64 / (batch as f64 - 1.0)
        } else {
            1.0
        };
        for (r, m) in self.running_mean.iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        for (r, v) in self.running_var.iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v * correction;
        }
    }
}

/// Two-layer perceptron `act(act(x·W1 + b1)·W2 + b2)`, optionally followed by
/// batch normalization over the rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
    pub activation: Activation,
    pub batch_norm: Option<BatchNorm>,
}

impl Mlp2 {
    pub fn init(
        input: usize,
        hidden: usize,
        output: usize,
        activation: Activation,
        batch_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        Self {
            first: Linear::init(input, hidden, rng),
            second: Linear::init(hidden, output, rng),
            activation,
            batch_norm: batch_norm.then(|| BatchNorm::new(output)),
        }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize, activation: Activation, batch_norm: bool) -> Self {
        let mut m = Self {
            first: Linear::zeros(input, hidden),
            second: Linear::zeros(hidden, output),
            activation,
            batch_norm: batch_norm.then(|| BatchNorm::new(output)),
        };
        if let Some(bn) = &mut m.batch_norm {
            bn.gamma = Tensor::zeros(&[output]);
        }
        m
    }

    pub fn input_dim(&self) -> usize {
        self.first.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.second.output_dim()
    }

    /// Plain evaluation on a `[B×in]` batch.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut g = Graph::new();
        let mut vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let y = vars.forward(&mut g, self, xv, mode)?;
        Ok(g.value(y).clone())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Mlp2Vars {
        let bn = self.batch_norm.as_ref().map(|bn| {
            if trainable {
                (g.param(bn.gamma.clone()), g.param(bn.beta.clone()))
            } else {
                (g.constant(bn.gamma.clone()), g.constant(bn.beta.clone()))
            }
        });
        Mlp2Vars {
            first: self.first.bind(g, trainable),
            second: self.second.bind(g, trainable),
            bn,
            bn_out: None,
        }
    }

    /// Parameter tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = self.first.tensors().into_iter().collect();
        out.extend(self.second.tensors());
        if let Some(bn) = &self.batch_norm {
            out.push(&bn.gamma);
            out.push(&bn.beta);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.first.tensors_mut().into_iter().collect();
        out.extend(self.second.tensors_mut());
        if let Some(bn) = &mut self.batch_norm {
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Mlp2Vars {
    pub first: LinearVars,
    pub second: LinearVars,
    pub bn: Option<(Var, Var)>,
    /// Output node of the normalization layer, set by the last forward.
    pub bn_out: Option<Var>,
}

impl Mlp2Vars {
    pub fn forward(&mut self, g: &mut Graph, spec: &Mlp2, x: Var, mode: Mode) -> Result<Var> {
        let (_, width) = g.value(x).dims2()?;
        if width != spec.input_dim() {
            return Err(Error::dim(format!(
                "perceptron expects {} inputs, got {}",
                spec.input_dim(),
                width
            )));
        }
        let h = self.first.forward(g, x)?;
        let h = spec.activation.record(g, h);
        let h = self.second.forward(g, h)?;
        let h = spec.activation.record(g, h);
        match (self.bn, &spec.batch_norm) {
            (Some((gamma, beta)), Some(bn)) => {
                let bn_mode = match mode {
                    Mode::Train => BnMode::Train,
                    Mode::Eval => BnMode::Eval {
                        mean: &bn.running_mean,
                        var: &bn.running_var,
                    },
                };
                let out = g.batch_norm(h, gamma, beta, bn_mode)?;
                self.bn_out = Some(out);
                Ok(out)
            }
            _ => Ok(h),
        }
    }

    /// Trainable leaves in the same order as [`Mlp2::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.first.weight, self.first.bias, self.second.weight, self.second.bias];
        if let Some((g, b)) = self.bn {
            out.push(g);
            out.push(b);
        }
        out
    }
}

/// Scalar-by-scalar evaluation with eval-mode normalization; kept separate
/// from the graph path so the two can check each other.
pub fn mlp2_reference(m: &Mlp2, x: &[f64]) -> Vec<f64> {
    let layer = |l: &Linear, input: &[f64]| -> Vec<f64> {
        let (i_dim, o_dim) = (l.input_dim(), l.output_dim());
        (0..o_dim)
            .map(|o| {
                let mut acc = l.bias.data()[o];
                for i in 0..i_dim {
                    acc += input[i] * l.weight.data()[i * o_dim + o];
                }
                m.activation.apply(acc)
            })
            .collect()
    };
    let h = layer(&m.first, x);
    let mut y = layer(&m.second, &h);
    if let Some(bn) = &m.batch_norm {
        for (c, v) in y.iter_mut().enumerate() {
            let xhat = (*v - bn.running_mean[c]) / (bn.running_var[c] + BN_EPS).sqrt();
            *v = bn.gamma.data()[c] * xhat + bn.beta.data()[c];
        }
    }
    y
}
