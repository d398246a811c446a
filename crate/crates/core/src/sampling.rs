//! Gumbel-softmax (concrete) relaxation and exact categorical sampling.

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Training temperature of the relaxation.
pub const DEFAULT_TAU: f64 = 0.5;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::param(format!("temperature must be positive, got {tau}")))
    }
}

/// I.i.d. standard Gumbel noise of the given shape.
pub fn gumbel_noise(shape: &[usize], rng: &mut Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.gumbel());
    t
}

/// `softmax((logits + noise) / tau)` over the last axis.
pub fn relaxed_sample(logits: &Tensor, noise: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    let shifted = logits.zip_map(noise, |l, g| (l + g) / tau)?;
    Ok(softmax_rows(&shifted))
}

/// One-hot of `argmax(logits + noise)` per row (Gumbel-max).
pub fn hard_sample(logits: &Tensor, noise: &Tensor) -> Result<Tensor> {
    let perturbed = logits.zip_map(noise, |l, g| l + g)?;
    let n = *logits.shape().last().unwrap_or(&1);
    let mut out = Tensor::zeros(logits.shape());
    for (src, dst) in perturbed.data().chunks(n).zip(out.data_mut().chunks_mut(n)) {
        let best = src
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0;
        dst[best] = 1.0;
    }
    Ok(out)
}

pub fn gumbel_softmax(logits: &Tensor, tau: f64, rng: &mut Rng) -> Result<Tensor> {
    check_tau(tau)?;
    let noise = gumbel_noise(logits.shape(), rng);
    relaxed_sample(logits, &noise, tau)
}

pub fn categorical_hard(logits: &Tensor, rng: &mut Rng) -> Result<Tensor> {
    let noise = gumbel_noise(logits.shape(), rng);
    hard_sample(logits, &noise)
}

/// Turns edge logits into edge-type weights inside a graph.
pub trait EdgeSampler {
    fn name(&self) -> &'static str;

    /// `noise` holds one Gumbel draw per logit, supplied by the caller so a
    /// draw can be replayed.
    fn sample(&self, g: &mut Graph, logits: Var, noise: &Tensor, tau: f64) -> Result<Var>;
}

/// Differentiable relaxed one-hots.
pub struct Concrete;

impl EdgeSampler for Concrete {
    fn name(&self) -> &'static str {
        "concrete"
    }

    fn sample(&self, g: &mut Graph, logits: Var, noise: &Tensor, tau: f64) -> Result<Var> {
        check_tau(tau)?;
        let n = g.constant(noise.clone());
        let shifted = g.add(logits, n)?;
        let scaled = g.scale(shifted, 1.0 / tau);
        Ok(g.softmax(scaled))
    }
}

/// Exact one-hots; carries no gradient.
pub struct CategoricalHard;

impl EdgeSampler for CategoricalHard {
    fn name(&self) -> &'static str {
        "categorical-hard"
    }

    fn sample(&self, g: &mut Graph, logits: Var, noise: &Tensor, _tau: f64) -> Result<Var> {
        let onehot = hard_sample(g.value(logits), noise)?;
        Ok(g.constant(onehot))
    }
}

pub fn edge_samplers() -> Registry<dyn EdgeSampler> {
    let mut r: Registry<dyn EdgeSampler> = Registry::new("edge sampler");
    r.register("concrete", || Box::new(Concrete));
    r.register("categorical-hard", || Box::new(CategoricalHard));
    r
}
