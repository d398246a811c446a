//! Edge-type encoder and per-edge-type message-passing decoder.
//!
//! Batches of `B` windows are laid out as `B·N` node rows and `B·E` edge
//! rows, where `E = N(N−1)` enumerates ordered pairs `(i, j)`, `i ≠ j`, with
//! the sender `i` outer and the receiver `j` inner.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Activation, Linear, LinearVars, Mlp2, Mlp2Vars, Mode};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const EDGE_TYPES: usize = 3;

/// Layer widths and input extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub steps: usize,
    pub dims: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
}

impl ModelShape {
    pub fn new(steps: usize, dims: usize) -> Self {
        Self {
            steps,
            dims,
            encoder_hidden: 128,
            decoder_hidden: 64,
        }
    }
}

/// Sender/receiver row indices for a batch of windows.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub nodes: usize,
    pub batch: usize,
    pub send: Rc<[usize]>,
    pub recv: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn new(nodes: usize, batch: usize) -> Self {
        let mut send = Vec::with_capacity(batch * nodes * nodes);
        let mut recv = Vec::with_capacity(batch * nodes * nodes);
        for b in 0..batch {
            for (i, j) in ordered_pairs(nodes) {
                send.push(b * nodes + i);
                recv.push(b * nodes + j);
            }
        }
        Self {
            nodes,
            batch,
            send: send.into(),
            recv: recv.into(),
        }
    }

    pub fn edges_per_window(&self) -> usize {
        self.nodes * self.nodes.saturating_sub(1)
    }

    pub fn node_rows(&self) -> usize {
        self.nodes * self.batch
    }
}

/// Ordered pairs `(i, j)`, `i ≠ j`, in edge-row order.
pub fn ordered_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
}

/// `[E×3]` edge rows to an `[N×N×3]` tensor with zero diagonal.
pub fn rows_to_matrix(rows: &Tensor, n: usize) -> Result<Tensor> {
    let e = n * n.saturating_sub(1);
    if rows.shape() != [e, EDGE_TYPES] {
        return Err(Error::dim(format!("expected [{e}×3] edge rows, got {:?}", rows.shape())));
    }
    let mut out = Tensor::zeros(&[n, n, EDGE_TYPES]);
    for (r, (i, j)) in ordered_pairs(n).enumerate() {
        let dst = (i * n + j) * EDGE_TYPES;
        out.data_mut()[dst..dst + EDGE_TYPES].copy_from_slice(rows.row(r));
    }
    Ok(out)
}

/// `[N×N×3]` tensor to `[E×3]` edge rows.
pub fn matrix_to_rows(m: &Tensor) -> Result<Tensor> {
    let s = m.shape();
    if s.len() != 3 || s[0] != s[1] || s[2] != EDGE_TYPES {
        return Err(Error::dim(format!("expected [N×N×3] edges, got {s:?}")));
    }
    let n = s[0];
    let mut data = Vec::with_capacity(n * (n - 1) * EDGE_TYPES);
    for (i, j) in ordered_pairs(n) {
        let src = (i * n + j) * EDGE_TYPES;
        data.extend_from_slice(&m.data()[src..src + EDGE_TYPES]);
    }
    Tensor::new(vec![n * (n - 1), EDGE_TYPES], data)
}

/// Edge-type distribution per ordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePosterior {
    /// `[N×N×3]`, zero on the diagonal.
    pub probs: Tensor,
    pub logits: Tensor,
}

impl EdgePosterior {
    pub fn from_logit_rows(logits: &Tensor, n: usize) -> Result<Self> {
        Ok(Self {
            probs: rows_to_matrix(&softmax_rows(logits), n)?,
            logits: rows_to_matrix(logits, n)?,
        })
    }

    pub fn n(&self) -> usize {
        self.probs.shape()[0]
    }

    /// Element-wise mean of several posteriors; logits are the log of the
    /// mean probabilities, zero on the diagonal.
    pub fn mean(posteriors: &[&EdgePosterior]) -> Option<Self> {
        let first = posteriors.first()?;
        let mut probs = Tensor::zeros(first.probs.shape());
        for p in posteriors {
            probs.data_mut().iter_mut().zip(p.probs.data()).for_each(|(a, b)| *a += b);
        }
        let count = posteriors.len() as f64;
        probs.data_mut().iter_mut().for_each(|v| *v /= count);
        let logits = probs.map(|p| if p > 0.0 { p.ln() } else { 0.0 });
        Some(Self { probs, logits })
    }

    pub fn prob(&self, i: usize, j: usize, e: usize) -> f64 {
        let n = self.n();
        self.probs.data()[(i * n + j) * EDGE_TYPES + e]
    }

    /// CSV with header `i,j,p_none,p_hb,p_sep`, off-diagonal pairs only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j,p_none,p_hb,p_sep\n");
        for (i, j) in ordered_pairs(self.n()) {
            out.push_str(&format!(
                "{i},{j},{},{},{}\n",
                crate::format::fmt_f64(self.prob(i, j, 0)),
                crate::format::fmt_f64(self.prob(i, j, 1)),
                crate::format::fmt_f64(self.prob(i, j, 2)),
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed: Mlp2,
    pub edge1: Mlp2,
    pub node1: Mlp2,
    pub edge2: Mlp2,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// Message networks for edge types 1 and 2; type 0 sends nothing.
    pub message: [Mlp2; 2],
    pub message_head: [Linear; 2],
    pub node: Mlp2,
    pub out: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

impl ModelParams {
    pub fn init(shape: ModelShape, rng: &mut Rng) -> Self {
        let (he, hd, d) = (shape.encoder_hidden, shape.decoder_hidden, shape.dims);
        let elu = Activation::Elu;
        let relu = Activation::Relu;
        let encoder = EncoderParams {
            embed: Mlp2::init(shape.steps * d, he, he, elu, true, rng),
            edge1: Mlp2::init(2 * he, he, he, elu, true, rng),
            node1: Mlp2::init(he, he, he, elu, true, rng),
            edge2: Mlp2::init(2 * he, he, he, elu, true, rng),
            out: Linear::init(he, EDGE_TYPES, rng),
        };
        let message = [
            Mlp2::init(2 * d, hd, hd, relu, false, rng),
            Mlp2::init(2 * d, hd, hd, relu, false, rng),
        ];
        let message_head = [Linear::init(hd, hd, rng), Linear::init(hd, hd, rng)];
        let decoder = DecoderParams {
            message,
            message_head,
            node: Mlp2::init(hd, hd, hd, relu, false, rng),
            out: Linear::init(hd, d, rng),
        };
        Self { shape, encoder, decoder }
    }

    pub fn zeros(shape: ModelShape) -> Self {
        let (he, hd, d) = (shape.encoder_hidden, shape.decoder_hidden, shape.dims);
        let elu = Activation::Elu;
        let relu = Activation::Relu;
        Self {
            shape,
            encoder: EncoderParams {
                embed: Mlp2::zeros(shape.steps * d, he, he, elu, true),
                edge1: Mlp2::zeros(2 * he, he, he, elu, true),
                node1: Mlp2::zeros(he, he, he, elu, true),
                edge2: Mlp2::zeros(2 * he, he, he, elu, true),
                out: Linear::zeros(he, EDGE_TYPES),
            },
            decoder: DecoderParams {
                message: [
                    Mlp2::zeros(2 * d, hd, hd, relu, false),
                    Mlp2::zeros(2 * d, hd, hd, relu, false),
                ],
                message_head: [Linear::zeros(hd, hd), Linear::zeros(hd, hd)],
                node: Mlp2::zeros(hd, hd, hd, relu, false),
                out: Linear::zeros(hd, d),
            },
        }
    }

    /// Trainable tensors with stable names, in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        fn mlp<'a>(prefix: &str, m: &'a Mlp2, out: &mut Vec<(String, &'a Tensor)>) {
            let names = ["w1", "b1", "w2", "b2", "gamma", "beta"];
            for (name, t) in names.iter().zip(m.tensors()) {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        let mut out = Vec::new();
        let e = &self.encoder;
        mlp("encoder.embed", &e.embed, &mut out);
        mlp("encoder.edge1", &e.edge1, &mut out);
        mlp("encoder.node1", &e.node1, &mut out);
        mlp("encoder.edge2", &e.edge2, &mut out);
        out.push(("encoder.out.w".into(), &e.out.weight));
        out.push(("encoder.out.b".into(), &e.out.bias));
        let d = &self.decoder;
        for k in 0..2 {
            mlp(&format!("decoder.message{}", k + 1), &d.message[k], &mut out);
            out.push((format!("decoder.message{}.head.w", k + 1), &d.message_head[k].weight));
            out.push((format!("decoder.message{}.head.b", k + 1), &d.message_head[k].bias));
        }
        mlp("decoder.node", &d.node, &mut out);
        out.push(("decoder.out.w".into(), &d.out.weight));
        out.push(("decoder.out.b".into(), &d.out.bias));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    /// Mutable tensors in the same order as [`ModelParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.encoder;
        let mut out = Vec::new();
        out.extend(e.embed.tensors_mut());
        out.extend(e.edge1.tensors_mut());
        out.extend(e.node1.tensors_mut());
        out.extend(e.edge2.tensors_mut());
        out.push(&mut e.out.weight);
        out.push(&mut e.out.bias);
        let d = &mut self.decoder;
        let [m1, m2] = &mut d.message;
        let [h1, h2] = &mut d.message_head;
        out.extend(m1.tensors_mut());
        out.push(&mut h1.weight);
        out.push(&mut h1.bias);
        out.extend(m2.tensors_mut());
        out.push(&mut h2.weight);
        out.push(&mut h2.bias);
        out.extend(d.node.tensors_mut());
        out.push(&mut d.out.weight);
        out.push(&mut d.out.bias);
        out
    }

    /// Normalization layers in forward order.
    pub fn batch_norms_mut(&mut self) -> Vec<&mut crate::nn::BatchNorm> {
        let e = &mut self.encoder;
        [&mut e.embed, &mut e.edge1, &mut e.node1, &mut e.edge2]
            .into_iter()
            .filter_map(|m| m.batch_norm.as_mut())
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> ModelVars {
        let e = &self.encoder;
        let d = &self.decoder;
        ModelVars {
            embed: e.embed.bind(g, trainable),
            edge1: e.edge1.bind(g, trainable),
            node1: e.node1.bind(g, trainable),
            edge2: e.edge2.bind(g, trainable),
            enc_out: e.out.bind(g, trainable),
            message: [d.message[0].bind(g, trainable), d.message[1].bind(g, trainable)],
            message_head: [d.message_head[0].bind(g, trainable), d.message_head[1].bind(g, trainable)],
            node: d.node.bind(g, trainable),
            dec_out: d.out.bind(g, trainable),
        }
    }

    pub fn check_sample(&self, sample: &Tensor) -> Result<()> {
        let s = sample.shape();
        if s.len() != 3 || s[1] != self.shape.steps || s[2] != self.shape.dims {
            return Err(Error::dim(format!(
                "sample shape {s:?} does not match model (T={}, D={})",
                self.shape.steps, self.shape.dims
            )));
        }
        Ok(())
    }
}

/// Graph handles for every parameter of a bound model.
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embed: Mlp2Vars,
    pub edge1: Mlp2Vars,
    pub node1: Mlp2Vars,
    pub edge2: Mlp2Vars,
    pub enc_out: LinearVars,
    pub message: [Mlp2Vars; 2],
    pub message_head: [LinearVars; 2],
    pub node: Mlp2Vars,
    pub dec_out: LinearVars,
}

impl ModelVars {
    /// Leaves in the same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        out.extend(self.embed.vars());
        out.extend(self.edge1.vars());
        out.extend(self.node1.vars());
        out.extend(self.edge2.vars());
        out.extend([self.enc_out.weight, self.enc_out.bias]);
        for k in 0..2 {
            out.extend(self.message[k].vars());
            out.extend([self.message_head[k].weight, self.message_head[k].bias]);
        }
        out.extend(self.node.vars());
        out.extend([self.dec_out.weight, self.dec_out.bias]);
        out
    }

    /// Normalization output nodes in the order of
    /// [`ModelParams::batch_norms_mut`].
    pub fn batch_norm_outputs(&self) -> Vec<Option<Var>> {
        vec![self.embed.bn_out, self.edge1.bn_out, self.node1.bn_out, self.edge2.bn_out]
    }
}

/// Stacks windows `[N×T×D]` into node feature rows `[B·N × T·D]`.
pub fn node_features(samples: &[&Tensor]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::dim("empty batch"))?;
    let s = first.shape().to_vec();
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for x in samples {
        if x.shape() != s.as_slice() {
            return Err(Error::dim("batch samples differ in shape"));
        }
        data.extend_from_slice(x.data());
    }
    Tensor::new(vec![samples.len() * s[0], s[1] * s[2]], data)
}

/// Positions at step `t` for every node of every window, `[B·N × D]`.
pub fn state_at(samples: &[&Tensor], t: usize) -> Tensor {
    let s = samples[0].shape();
    let (n, steps, d) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(samples.len() * n * d);
    for x in samples {
        for i in 0..n {
            let off = (i * steps + t) * d;
            data.extend_from_slice(&x.data()[off..off + d]);
        }
    }
    Tensor::new(vec![samples.len() * n, d], data).expect("sized")
}

/// Records the encoder and returns the `[B·E × 3]` edge logits.
pub fn encode_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &mut ModelVars,
    features: Var,
    index: &EdgeIndex,
    mode: Mode,
) -> Result<Var> {
    let e = &params.encoder;
    let h = vars.embed.forward(g, &e.embed, features, mode)?;
    let pair = edge_pairs(g, h, index)?;
    let edge = vars.edge1.forward(g, &e.edge1, pair, mode)?;
    let agg = g.scatter_add_rows(edge, index.recv.clone(), index.node_rows())?;
    let h = vars.node1.forward(g, &e.node1, agg, mode)?;
    let pair = edge_pairs(g, h, index)?;
    let edge = vars.edge2.forward(g, &e.edge2, pair, mode)?;
    vars.enc_out.forward(g, edge)
}

/// `[h(i), h(j)]` for every edge row.
fn edge_pairs(g: &mut Graph, h: Var, index: &EdgeIndex) -> Result<Var> {
    let s = g.gather_rows(h, index.send.clone())?;
    let r = g.gather_rows(h, index.recv.clone())?;
    g.concat_cols(s, r)
}

/// One decoder step: `μ = r + f_out(f_v(Σ_i Σ_e edges(i,j,e)·msg_e(r(i), r(j))))`.
pub fn decode_step(
    g: &mut Graph,
    params: &ModelParams,
    vars: &mut ModelVars,
    state: Var,
    edges: Var,
    index: &EdgeIndex,
) -> Result<Var> {
    let d = &params.decoder;
    let (rows, width) = g.value(state).dims2()?;
    if rows != index.node_rows() || width != params.shape.dims {
        return Err(Error::dim(format!(
            "decoder state is [{rows}×{width}], expected [{}×{}]",
            index.node_rows(),
            params.shape.dims
        )));
    }
    let e_rows = index.batch * index.edges_per_window();
    if g.value(edges).shape() != [e_rows, EDGE_TYPES] {
        return Err(Error::dim(format!(
            "edge weights {:?}, expected [{e_rows}×3]",
            g.value(edges).shape()
        )));
    }
    let pair = edge_pairs(g, state, index)?;
    let mut total: Option<Var> = None;
    for k in 0..2 {
        let h = vars.message[k].forward(g, &d.message[k], pair, Mode::Train)?;
        let msg = vars.message_head[k].forward(g, h)?;
        let w = g.column(edges, k + 1)?;
        let weighted = g.mul_column(msg, w)?;
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    let total = total.expect("two edge types");
    let agg = g.scatter_add_rows(total, index.recv.clone(), index.node_rows())?;
    let h = vars.node.forward(g, &d.node, agg, Mode::Train)?;
    let delta = vars.dec_out.forward(g, h)?;
    g.add(state, delta)
}

/// Predictions for steps `1..steps`. The model's own mean is fed back for
/// `k` consecutive steps, after which the true state from `truth` is
/// reintroduced; without `truth` only `truth0` is observed.
#[allow(clippy::too_many_arguments)]
pub fn rollout_graph(
    g: &mut Graph,
    params: &ModelParams,
    vars: &mut ModelVars,
    truth: &[Var],
    steps: usize,
    edges: Var,
    index: &EdgeIndex,
    k: usize,
) -> Result<Vec<Var>> {
    if k < 1 {
        return Err(Error::param("rollout period k must be at least 1"));
    }
    let first = *truth.first().ok_or_else(|| Error::dim("rollout needs an initial state"))?;
    let mut preds = Vec::with_capacity(steps.saturating_sub(1));
    let mut current = first;
    for t in 1..steps {
        let input = if (t - 1) % k == 0 {
            *truth.get(t - 1).unwrap_or(&current)
        } else {
            current
        };
        current = decode_step(g, params, vars, input, edges, index)?;
        preds.push(current);
    }
    Ok(preds)
}

/// Eval-mode posterior for each sample, evaluated in chunks of `batch`.
pub fn encode(params: &ModelParams, samples: &[&Tensor], batch: usize) -> Result<Vec<EdgePosterior>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch.max(1)) {
        for s in chunk {
            params.check_sample(s)?;
        }
        let n = chunk[0].shape()[0];
        let index = EdgeIndex::new(n, chunk.len());
        let mut g = Graph::new();
        let mut vars = params.bind(&mut g, false);
        let x = g.constant(node_features(chunk)?);
        let logits = encode_graph(&mut g, params, &mut vars, x, &index, Mode::Eval)?;
        let e = index.edges_per_window();
        for (b, rows) in g.value(logits).data().chunks(e * EDGE_TYPES).enumerate() {
            let t = Tensor::new(vec![e, EDGE_TYPES], rows.to_vec())?;
            debug_assert!(b < chunk.len());
            out.push(EdgePosterior::from_logit_rows(&t, n)?);
        }
    }
    Ok(out)
}

/// Draws edge weights `[N×N×3]` from a posterior with the named sampler.
pub fn sample_edges(posterior: &EdgePosterior, tau: f64, mode: &str, rng: &mut Rng) -> Result<Tensor> {
    let sampler = crate::sampling::edge_samplers().get(mode)?;
    let n = posterior.n();
    let logits = matrix_to_rows(&posterior.logits)?;
    let noise = crate::sampling::gumbel_noise(logits.shape(), rng);
    let mut g = Graph::new();
    let l = g.constant(logits);
    let y = sampler.sample(&mut g, l, &noise, tau)?;
    rows_to_matrix(g.value(y), n)
}

/// Mean trajectory `[N×steps×D]` starting from `start: [N×D]` under fixed
/// edge weights `[N×N×3]`. With a teacher trajectory, the true state is
/// reintroduced every `k` steps; without one the rollout is free.
pub fn rollout(
    params: &ModelParams,
    start: &Tensor,
    edges: &Tensor,
    steps: usize,
    k: usize,
    teacher: Option<&Tensor>,
) -> Result<Tensor> {
    let (n, d) = start.dims2()?;
    if d != params.shape.dims {
        return Err(Error::dim(format!("state has {d} dims, model has {}", params.shape.dims)));
    }
    if steps == 0 {
        return Err(Error::param("rollout needs at least one step"));
    }
    let index = EdgeIndex::new(n, 1);
    let mut g = Graph::new();
    let mut vars = params.bind(&mut g, false);
    let e = g.constant(matrix_to_rows(edges)?);
    let truth: Vec<Var> = match teacher {
        Some(tr) => {
            if tr.shape() != [n, steps, d] {
                return Err(Error::dim(format!("teacher shape {:?}", tr.shape())));
            }
            (0..steps).map(|t| g.constant(state_at(&[tr], t))).collect()
        }
        None => vec![g.constant(start.clone())],
    };
    let k = if teacher.is_some() { k } else { k.max(steps) };
    let preds = rollout_graph(&mut g, params, &mut vars, &truth, steps, e, &index, k)?;
    let mut data = vec![0.0; n * steps * d];
    let mut put = |t: usize, v: &Tensor| {
        for i in 0..n {
            data[(i * steps + t) * d..(i * steps + t + 1) * d].copy_from_slice(&v.data()[i * d..(i + 1) * d]);
        }
    };
    put(0, g.value(truth[0]));
    for (t, p) in preds.iter().enumerate() {
        put(t + 1, g.value(*p));
    }
    Tensor::new(vec![n, steps, d], data)
}
