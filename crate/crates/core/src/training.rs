//! Composite loss, the epoch loop and checkpoints.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adam::{step_decay, AdamState};
use crate::autodiff::{Graph, Var};
use crate::data::{SplitSpec, TrajectoryCorpus};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::model::{
    encode_graph, node_features, ordered_pairs, rollout_graph, state_at, EdgeIndex, EdgePosterior, ModelParams,
    ModelShape, ModelVars, EDGE_TYPES,
};
use crate::nn::Mode;
use crate::registry::Registry;
use crate::rng::Rng;
use crate::sampling::{edge_samplers, gumbel_noise, EdgeSampler};
use crate::tensor::Tensor;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_VAL: u64 = 4;

/// Penalty on the causal edge-type probabilities.
pub trait SparsityPenalty {
    fn name(&self) -> &'static str;

    /// Penalty of one edge's `[q0, q1, q2]`.
    fn edge(&self, q: &[f64]) -> f64;

    /// Sum of the per-edge penalty over the rows of `probs: [E×3]`.
    fn record(&self, g: &mut Graph, probs: Var) -> Result<Var>;
}

/// `|q1 + q2|` per edge.
pub struct L1;

impl SparsityPenalty for L1 {
    fn name(&self) -> &'static str {
        "l1"
    }

    fn edge(&self, q: &[f64]) -> f64 {
        (q[1] + q[2]).abs()
    }

    fn record(&self, g: &mut Graph, probs: Var) -> Result<Var> {
        let a = g.column(probs, 1)?;
        let b = g.column(probs, 2)?;
        let s = g.add(a, b)?;
        let s = g.abs(s);
        Ok(g.sum(s))
    }
}

/// `sqrt(q1² + q2²)` per edge; the subgradient at zero is 0.
pub struct GroupLasso;

impl SparsityPenalty for GroupLasso {
    fn name(&self) -> &'static str {
        "group-lasso"
    }

    fn edge(&self, q: &[f64]) -> f64 {
        (q[1] * q[1] + q[2] * q[2]).sqrt()
    }

    fn record(&self, g: &mut Graph, probs: Var) -> Result<Var> {
        let a = g.column(probs, 1)?;
        let b = g.column(probs, 2)?;
        let a = g.square(a);
        let b = g.square(b);
        let s = g.add(a, b)?;
        let s = g.sqrt(s);
        Ok(g.sum(s))
    }
}

pub fn sparsity_penalties() -> Registry<dyn SparsityPenalty> {
    let mut r: Registry<dyn SparsityPenalty> = Registry::new("sparsity penalty");
    r.register("l1", || Box::new(L1));
    r.register("group-lasso", || Box::new(GroupLasso));
    r
}

fn check_prior(prior: &[f64; 3]) -> Result<()> {
    if prior.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::param(format!("prior entries must be positive, got {prior:?}")));
    }
    if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("prior must sum to 1, got {prior:?}")));
    }
    Ok(())
}

/// `Σ_{i≠j} Σ_e q log(q/p)` with `0·log 0 = 0`.
pub fn loss_kl(posterior: &EdgePosterior, prior: &[f64; 3]) -> Result<f64> {
    check_prior(prior)?;
    let mut total = 0.0;
    for (i, j) in ordered_pairs(posterior.n()) {
        for (e, p) in prior.iter().enumerate() {
            let q = posterior.prob(i, j, e);
            if q > 0.0 {
                total += q * (q / p).ln();
            }
        }
    }
    Ok(total)
}

/// Mean squared error over every entry.
pub fn loss_reconstruction(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    let diff = pred.zip_map(truth, |a, b| (a - b) * (a - b))?;
    if diff.is_empty() {
        return Ok(0.0);
    }
    Ok(diff.sum() / diff.len() as f64)
}

/// Sum of the named penalty over all ordered pairs.
pub fn loss_sparsity(posterior: &EdgePosterior, mode: &str) -> Result<f64> {
    let penalty = sparsity_penalties().get(mode)?;
    let n = posterior.n();
    Ok(ordered_pairs(n)
        .map(|(i, j)| {
            let off = (i * n + j) * EDGE_TYPES;
            penalty.edge(&posterior.probs.data()[off..off + EDGE_TYPES])
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub tau: f64,
    pub lr: f64,
    pub prior: [f64; 3],
    /// Rollout period; `None` means the window length.
    pub k: Option<usize>,
    pub lambda: [f64; 3],
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub sparsity: String,
    pub lr_decay_period: usize,
    pub lr_decay_factor: f64,
    pub train_sampler: String,
    pub eval_sampler: String,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub split: SplitSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::prediction()
    }
}

impl TrainConfig {
    /// Trajectory-prediction defaults.
    pub fn prediction() -> Self {
        Self {
            tau: 0.5,
            lr: 5e-5,
            prior: [0.2, 0.4, 0.4],
            k: None,
            lambda: [1.0, 0.1, 0.001],
            epochs: 300,
            batch_size: 32,
            seed: 0,
            sparsity: "l1".into(),
            lr_decay_period: 200,
            lr_decay_factor: 0.1,
            train_sampler: "concrete".into(),
            eval_sampler: "categorical-hard".into(),
            encoder_hidden: 128,
            decoder_hidden: 64,
            split: SplitSpec::default(),
        }
    }

    /// Root-cause analysis defaults.
    pub fn rca() -> Self {
        Self {
            lr: 5e-4,
            prior: [0.9, 0.05, 0.05],
            k: Some(3),
            epochs: 100,
            sparsity: "group-lasso".into(),
            ..Self::prediction()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if !(self.tau > 0.0) {
            return cfg(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lr > 0.0) {
            return cfg(format!("learning rate must be positive, got {}", self.lr));
        }
        check_prior(&self.prior).map_err(|e| Error::Config(e.to_string()))?;
        if self.k == Some(0) {
            return cfg("k must be at least 1".into());
        }
        if self.lambda.iter().any(|&l| !(l >= 0.0)) || self.lambda.iter().all(|&l| l == 0.0) {
            return cfg(format!("lambda weights must be non-negative and not all zero, got {:?}", self.lambda));
        }
        if self.batch_size == 0 || self.encoder_hidden == 0 || self.decoder_hidden == 0 {
            return cfg("batch size and widths must be positive".into());
        }
        if !(self.lr_decay_factor > 0.0) {
            return cfg("lr_decay_factor must be positive".into());
        }
        for (kind, name) in [("sampler", &self.train_sampler), ("sampler", &self.eval_sampler)] {
            edge_samplers().get(name).map_err(|e| Error::Config(format!("{kind}: {e}")))?;
        }
        sparsity_penalties().get(&self.sparsity)?;
        self.split.validate()
    }

    pub fn shape(&self, steps: usize, dims: usize) -> ModelShape {
        ModelShape {
            steps,
            dims,
            encoder_hidden: self.encoder_hidden,
            decoder_hidden: self.decoder_hidden,
        }
    }

    pub fn rollout_k(&self, steps: usize) -> usize {
        self.k.unwrap_or(steps)
    }
}

/// Objective terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub kl: f64,
    pub reconstruction: f64,
    pub sparsity: f64,
    pub total: f64,
}

/// A recorded forward pass over one batch.
pub struct BatchPass {
    pub graph: Graph,
    pub vars: ModelVars,
    pub loss: Var,
    pub parts: LossParts,
}

/// Records `λ1·KL + λ2·MSE + λ3·sparsity` for a batch of windows. KL and
/// sparsity are summed over edges and averaged over windows; the
/// reconstruction term is the mean over predicted steps, nodes and dims.
/// `noise` supplies one Gumbel draw per edge logit.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    params: &ModelParams,
    config: &TrainConfig,
    samples: &[&Tensor],
    noise: &Tensor,
    sampler: &dyn EdgeSampler,
    penalty: &dyn SparsityPenalty,
    mode: Mode,
    trainable: bool,
) -> Result<BatchPass> {
    check_prior(&config.prior)?;
    for s in samples {
        params.check_sample(s)?;
    }
    let (n, steps) = (samples[0].shape()[0], samples[0].shape()[1]);
    let b = samples.len();
    let index = EdgeIndex::new(n, b);
    let mut g = Graph::new();
    let mut vars = params.bind(&mut g, trainable);
    let x = g.constant(node_features(samples)?);
    let logits = encode_graph(&mut g, params, &mut vars, x, &index, mode)?;
    let rows = b * index.edges_per_window();

    let q = g.softmax(logits);
    let log_q = g.log_softmax(logits);
    let log_p: Vec<f64> = (0..rows).flat_map(|_| config.prior.iter().map(|p| p.ln())).collect();
    let log_p = g.constant(Tensor::new(vec![rows, EDGE_TYPES], log_p)?);
    let ratio = g.sub(log_q, log_p)?;
    let kl = g.mul(q, ratio)?;
    let kl = g.sum(kl);
    let kl = g.scale(kl, 1.0 / b as f64);

    let sparsity = penalty.record(&mut g, q)?;
    let sparsity = g.scale(sparsity, 1.0 / b as f64);

    let edges = sampler.sample(&mut g, logits, noise, config.tau)?;
    let truth: Vec<Var> = (0..steps).map(|t| g.constant(state_at(samples, t))).collect();
    let k = config.rollout_k(steps);
    let preds = rollout_graph(&mut g, params, &mut vars, &truth, steps, edges, &index, k)?;
    let mut recon: Option<Var> = None;
    for (t, p) in preds.iter().enumerate() {
        let diff = g.sub(*p, truth[t + 1])?;
        let sq = g.square(diff);
        let s = g.sum(sq);
        recon = Some(match recon {
            Some(r) => g.add(r, s)?,
            None => s,
        });
    }
    let count = (steps.saturating_sub(1) * b * n * params.shape.dims).max(1);
    let recon = match recon {
        Some(r) => g.scale(r, 1.0 / count as f64),
        None => g.constant(Tensor::scalar(0.0)),
    };

    let [l1, l2, l3] = config.lambda;
    let a = g.scale(kl, l1);
    let c = g.scale(recon, l2);
    let d = g.scale(sparsity, l3);
    let total = g.add(a, c)?;
    let total = g.add(total, d)?;
    let scalar = |g: &Graph, v: Var| g.value(v).data()[0];
    let parts = LossParts {
        kl: scalar(&g, kl),
        reconstruction: scalar(&g, recon),
        sparsity: scalar(&g, sparsity),
        total: scalar(&g, total),
    };
    Ok(BatchPass {
        graph: g,
        vars,
        loss: total,
        parts,
    })
}

/// Free rollouts from each window's first state under edges drawn by the
/// named sampler from the eval-mode posterior.
pub fn predict_windows(
    params: &ModelParams,
    samples: &[&Tensor],
    tau: f64,
    sampler: &str,
    batch: usize,
    rng: &mut Rng,
) -> Result<Vec<Tensor>> {
    let sampler = edge_samplers().get(sampler)?;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        for s in chunk {
            params.check_sample(s)?;
        }
        let s = chunk[0].shape();
        let (n, steps, d) = (s[0], s[1], s[2]);
        let index = EdgeIndex::new(n, chunk.len());
        let mut g = Graph::new();
        let mut vars = params.bind(&mut g, false);
        let x = g.constant(node_features(chunk)?);
        let logits = encode_graph(&mut g, params, &mut vars, x, &index, Mode::Eval)?;
        let noise = gumbel_noise(g.value(logits).shape(), rng);
        let edges = sampler.sample(&mut g, logits, &noise, tau)?;
        let start = g.constant(state_at(chunk, 0));
        let preds = rollout_graph(&mut g, params, &mut vars, &[start], steps, edges, &index, steps)?;
        for (bi, src) in chunk.iter().enumerate() {
            let mut data = vec![0.0; n * steps * d];
            for i in 0..n {
                for t in 0..steps {
                    let row = if t == 0 {
                        &src.data()[(i * steps) * d..(i * steps + 1) * d]
                    } else {
                        let v = g.value(preds[t - 1]).data();
                        &v[(bi * n + i) * d..(bi * n + i + 1) * d]
                    };
                    data[(i * steps + t) * d..(i * steps + t + 1) * d].copy_from_slice(row);
                }
            }
            out.push(Tensor::new(vec![n, steps, d], data)?);
        }
    }
    Ok(out)
}

/// Mean squared error of free rollouts over steps `1..T`.
pub fn path_mse(params: &ModelParams, samples: &[&Tensor], config: &TrainConfig, rng: &mut Rng) -> Result<f64> {
    let preds = predict_windows(params, samples, config.tau, &config.eval_sampler, config.batch_size, rng)?;
    let (mut sum, mut count) = (0.0, 0usize);
    for (p, s) in preds.iter().zip(samples) {
        let (n, steps, d) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        for i in 0..n {
            for t in 1..steps {
                for k in 0..d {
                    let off = (i * steps + t) * d + k;
                    let e = p.data()[off] - s.data()[off];
                    sum += e * e;
                    count += 1;
                }
            }
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Absent for the epoch-0 row, which precedes any update.
    pub train_loss: Option<f64>,
    pub val_mse: f64,
    pub lr: f64,
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,val_mse,lr\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch,
            r.train_loss.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.val_mse),
            fmt_f64(r.lr)
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub best_val_mse: f64,
    pub config: TrainConfig,
    pub corpus_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation MSE seen.
    pub best: Checkpoint,
    /// State after the final epoch.
    pub last: Checkpoint,
    pub history: Vec<EpochMetrics>,
}

/// Trains on the windows of `corpus` (each sample one window).
pub fn train(config: &TrainConfig, corpus: &TrajectoryCorpus) -> Result<TrainOutcome> {
    config.validate()?;
    corpus.validate()?;
    let hash = corpus.content_hash();
    let split = config.split.split(corpus.len(), &hash)?;
    if split.train.is_empty() {
        return Err(Error::Degenerate("no training windows after the split".into()));
    }
    let val_idx = if split.val.is_empty() { split.train.clone() } else { split.val.clone() };
    let val: Vec<&Tensor> = val_idx.iter().map(|&i| &corpus.samples[i]).collect();

    let root = Rng::new(config.seed);
    let shape = config.shape(corpus.steps(), corpus.dims());
    let params = ModelParams::init(shape, &mut root.derive(STREAM_INIT));
    let adam = AdamState::new(config.lr, &params.tensors());
    let mut state = Checkpoint {
        params,
        adam,
        epoch: 0,
        best_val_mse: f64::INFINITY,
        config: config.clone(),
        corpus_hash: hash,
        seed: config.seed,
    };
    let val_mse = path_mse(&state.params, &val, config, &mut root.derive(STREAM_VAL))?;
    state.best_val_mse = val_mse;
    let mut best = state.clone();
    let mut history = vec![EpochMetrics {
        epoch: 0,
        train_loss: None,
        val_mse,
        lr: config.lr,
    }];

    let sampler = edge_samplers().get(&config.train_sampler)?;
    let penalty = sparsity_penalties().get(&config.sparsity)?;
    let mut shuffle_rng = root.derive(STREAM_SHUFFLE);
    let mut noise_rng = root.derive(STREAM_NOISE);
    let mut order = split.train.clone();

    for epoch in 1..=config.epochs {
        let lr = step_decay(config.lr, epoch - 1, config.lr_decay_period, config.lr_decay_factor);
        state.adam.lr = lr;
        shuffle_rng.shuffle(&mut order);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Tensor> = chunk.iter().map(|&i| &corpus.samples[i]).collect();
            let n = corpus.n_atoms();
            let rows = batch.len() * n * n.saturating_sub(1);
            let noise = gumbel_noise(&[rows, EDGE_TYPES], &mut noise_rng);
            let pass = batch_loss(&state.params, config, &batch, &noise, sampler.as_ref(), penalty.as_ref(), Mode::Train, true)?;
            let diverged = |message: String| Error::Diverged {
                epoch,
                message,
                last_good: Some(Box::new(best.clone())),
            };
            if !pass.parts.total.is_finite() {
                return Err(diverged(format!("non-finite loss {:?}", pass.parts)));
            }
            let mut grads = pass.graph.backward(pass.loss)?;
            let g: Vec<Tensor> = pass
                .vars
                .vars()
                .into_iter()
                .map(|v| grads.take(v))
                .collect::<Result<_>>()?;
            {
                let mut p = state.params.tensors_mut();
                state.adam.step(&mut p, &g).map_err(|e| diverged(e.to_string()))?;
            }
            let stats: Vec<Option<(Vec<f64>, Vec<f64>, usize)>> = pass
                .vars
                .batch_norm_outputs()
                .into_iter()
                .map(|v| {
                    v.and_then(|v| {
                        let rows = pass.graph.value(v).shape()[0];
                        pass.graph.batch_stats(v).map(|(m, s)| (m.to_vec(), s.to_vec(), rows))
                    })
                })
                .collect();
            for (bn, st) in state.params.batch_norms_mut().into_iter().zip(stats) {
                if let Some((m, v, rows)) = st {
                    bn.update_running(&m, &v, rows);
                }
            }
            loss_sum += pass.parts.total;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_mse = path_mse(&state.params, &val, config, &mut root.derive(STREAM_VAL))?;
        if !val_mse.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite validation error".into(),
                last_good: Some(Box::new(best)),
            });
        }
        state.epoch = epoch;
        if val_mse < best.best_val_mse {
            state.best_val_mse = val_mse;
            best = state.clone();
        }
        state.best_val_mse = best.best_val_mse;
        log::info!("epoch {epoch}: train loss {train_loss:.6e}, val mse {val_mse:.6e}, lr {lr:e}");
        history.push(EpochMetrics {
            epoch,
            train_loss: Some(train_loss),
            val_mse,
            lr,
        });
    }
    Ok(TrainOutcome {
        best,
        last: state,
        history,
    })
}

const MAGIC: &[u8; 8] = b"BCCKPT\0\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    config: TrainConfig,
    shape: ModelShape,
    epoch: usize,
    best_val_mse_bits: u64,
    corpus_hash: String,
    seed: u64,
    adam_step: u64,
    adam_lr_bits: u64,
    adam_betas_eps_bits: [u64; 3],
    tensors: Vec<TensorEntry>,
    batch_norm_widths: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Binary container: magic, version, JSON header length and header,
    /// then little-endian `f64` payloads in manifest order (parameters,
    /// running statistics, first moments, second moments).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut params = self.params.clone();
        let tensors = self
            .params
            .named_tensors()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape().to_vec(),
            })
            .collect();
        let header = CheckpointHeader {
            config: self.config.clone(),
            shape: self.params.shape,
            epoch: self.epoch,
            best_val_mse_bits: self.best_val_mse.to_bits(),
            corpus_hash: self.corpus_hash.clone(),
            seed: self.seed,
            adam_step: self.adam.step,
            adam_lr_bits: self.adam.lr.to_bits(),
            adam_betas_eps_bits: [self.adam.beta1.to_bits(), self.adam.beta2.to_bits(), self.adam.eps.to_bits()],
            tensors,
            batch_norm_widths: params.batch_norms_mut().iter().map(|b| b.running_mean.len()).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Config(e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| xs.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for t in self.params.tensors() {
            put(t.data());
        }
        for bn in params.batch_norms_mut() {
            put(&bn.running_mean);
            put(&bn.running_var);
        }
        for t in self.adam.first_moment.iter().chain(&self.adam.second_moment) {
            put(t.data());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::Config(format!("corrupt checkpoint: {m}"));
        let mut cur = bytes;
        let mut magic = [0u8; 8];
        cur.read_exact(&mut magic).map_err(|_| corrupt("truncated"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let mut b4 = [0u8; 4];
        cur.read_exact(&mut b4).map_err(|_| corrupt("truncated"))?;
        let version = u32::from_le_bytes(b4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {version}")));
        }
        let mut b8 = [0u8; 8];
        cur.read_exact(&mut b8).map_err(|_| corrupt("truncated"))?;
        let len = u64::from_le_bytes(b8) as usize;
        if cur.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: CheckpointHeader =
            serde_json::from_slice(&cur[..len]).map_err(|e| corrupt(&format!("header: {e}")))?;
        cur = &cur[len..];
        let mut take = |count: usize| -> Result<Vec<f64>> {
            if cur.len() < count * 8 {
                return Err(corrupt("truncated payload"));
            }
            let (head, rest) = cur.split_at(count * 8);
            cur = rest;
            Ok(head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };

        let mut params = ModelParams::zeros(header.shape);
        let names: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if names.len() != header.tensors.len()
            || names.iter().zip(&header.tensors).any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(corrupt("tensor manifest does not match the model shape"));
        }
        for t in params.tensors_mut() {
            let data = take(t.len())?;
            t.data_mut().copy_from_slice(&data);
        }
        let bns = params.batch_norms_mut();
        if bns.len() != header.batch_norm_widths.len() {
            return Err(corrupt("batch norm manifest"));
        }
        for (bn, &w) in bns.into_iter().zip(&header.batch_norm_widths) {
            if bn.running_mean.len() != w {
                return Err(corrupt("batch norm width"));
            }
            bn.running_mean = take(w)?;
            bn.running_var = take(w)?;
        }
        let shapes: Vec<Vec<usize>> = params.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let mut moments = |cur_shapes: &[Vec<usize>]| -> Result<Vec<Tensor>> {
            cur_shapes
                .iter()
                .map(|s| Tensor::new(s.clone(), take(s.iter().product())?))
                .collect()
        };
        let first_moment = moments(&shapes)?;
        let second_moment = moments(&shapes)?;
        if !cur.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        let [b1, b2, eps] = header.adam_betas_eps_bits.map(f64::from_bits);
        Ok(Self {
            params,
            adam: AdamState {
                step: header.adam_step,
                lr: f64::from_bits(header.adam_lr_bits),
                beta1: b1,
                beta2: b2,
                eps,
                first_moment,
                second_moment,
            },
            epoch: header.epoch,
            best_val_mse: f64::from_bits(header.best_val_mse_bits),
            config: header.config,
            corpus_hash: header.corpus_hash,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Refuses a corpus whose hash differs from the training corpus unless
    /// `allow` is set.
    pub fn check_corpus(&self, corpus: &TrajectoryCorpus, allow: bool) -> Result<()> {
        let found = corpus.content_hash();
        if found != self.corpus_hash && !allow {
            return Err(Error::HashMismatch {
                expected: self.corpus_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}
