//! Spring-particle simulator with switchable mechanisms, and a geometric
//! hydrogen-bond labeler.
//!
//! Each node `j` follows an overdamped update
//!
//! ```text
//! r[t+1](j) = r[t](j) + h·( Σ_i k(type(i,j))·(r[t](i) − r[t](j)) − κ·(r[t](j) − anchor(j)) ) + σ_u·ξ
//! ```
//!
//! where `type(i,j)` is the edge from sender `i` to receiver `j`. At the
//! boundary step, every type-1 edge into a node of the change set becomes
//! type 2.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{HbTriple, Regime, RegimeLabels, SampleOrigin, TrajectoryCorpus};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const BLOW_UP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSpec {
    pub n: usize,
    pub d: usize,
    /// `edges[i][j]` is the type of the edge from `i` to `j`.
    pub edges: Vec<Vec<u8>>,
    pub k1: f64,
    pub k2: f64,
    /// Pull of each node toward its anchor.
    pub confinement: f64,
    /// Rest position per node, `n × d`.
    pub anchors: Vec<Vec<f64>>,
    pub h: f64,
    pub sigma_u: f64,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub trajectories: usize,
    /// Recorded step at which the change set switches mechanism.
    #[serde(default)]
    pub boundary_step: Option<usize>,
    #[serde(default)]
    pub change_set: Vec<usize>,
    #[serde(default)]
    pub hb_triples: Vec<HbTriple>,
}

fn one() -> usize {
    1
}

impl ScmSpec {
    /// Random sparse spring system. Nodes in `change_set` receive springs
    /// from `parents` random non-changed nodes and send none; the remaining
    /// nodes form a sparse random graph among themselves.
    pub fn random(n: usize, d: usize, change_set: &[usize], parents: usize, density: f64, rng: &mut Rng) -> Self {
        let mut edges = vec![vec![0u8; n]; n];
        let stable: Vec<usize> = (0..n).filter(|i| !change_set.contains(i)).collect();
        for &s in change_set {
            let mut pool = stable.clone();
            rng.shuffle(&mut pool);
            for &p in pool.iter().take(parents) {
                edges[p][s] = 1;
            }
        }
        for &i in &stable {
            for &j in &stable {
                if i != j && rng.uniform_open() < density {
                    edges[i][j] = 1;
                }
            }
        }
        let anchors = (0..n)
            .map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect())
            .collect();
        Self {
            n,
            d,
            edges,
            k1: 1.0,
            k2: 0.0,
            confinement: 0.5,
            anchors,
            h: 0.1,
            sigma_u: 0.05,
            burn_in: 200,
            trajectories: 1,
            boundary_step: None,
            change_set: change_set.to_vec(),
            hb_triples: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.n == 0 || self.d == 0 {
            return cfg("n and d must be positive".into());
        }
        if self.edges.len() != self.n || self.edges.iter().any(|r| r.len() != self.n) {
            return cfg(format!("edges must be {0}×{0}", self.n));
        }
        for (i, row) in self.edges.iter().enumerate() {
            if row[i] != 0 {
                return cfg(format!("self-edge on node {i}"));
            }
            if row.iter().any(|&e| e > 2) {
                return cfg("edge types must be 0, 1 or 2".into());
            }
        }
        if self.k1 == self.k2 {
            return cfg("k1 and k2 must differ".into());
        }
        if !(self.sigma_u >= 0.0) || !(self.h > 0.0) || !(self.confinement >= 0.0) {
            return cfg("need sigma_u >= 0, h > 0, confinement >= 0".into());
        }
        if self.anchors.len() != self.n || self.anchors.iter().any(|a| a.len() != self.d) {
            return cfg(format!("anchors must be {}×{}", self.n, self.d));
        }
        if self.trajectories == 0 {
            return cfg("trajectories must be positive".into());
        }
        if let Some(&bad) = self.change_set.iter().find(|&&i| i >= self.n) {
            return cfg(format!("change-set node {bad} out of range"));
        }
        if !self.change_set.is_empty() && self.boundary_step.is_none() {
            return cfg("a change set needs a boundary_step".into());
        }
        for t in &self.hb_triples {
            if [t.donor, t.hydrogen, t.acceptor].iter().any(|&a| a >= self.n) {
                return cfg("hydrogen-bond triple out of range".into());
            }
        }
        Ok(())
    }

    /// Edge types after the switch.
    pub fn switched_edges(&self) -> Vec<Vec<u8>> {
        let mut e = self.edges.clone();
        for &s in &self.change_set {
            for row in e.iter_mut() {
                if row[s] == 1 {
                    row[s] = 2;
                }
            }
        }
        e
    }

    fn stiffness(&self, edge: u8) -> f64 {
        match edge {
            1 => self.k1,
            2 => self.k2,
            _ => 0.0,
        }
    }

    /// Deterministic part of one update under the given edge types.
    pub fn drift(&self, edges: &[Vec<u8>], r: &[f64], out: &mut [f64]) {
        let d = self.d;
        out.copy_from_slice(r);
        for j in 0..self.n {
            for k in 0..d {
                let rj = r[j * d + k];
                let mut force = -self.confinement * (rj - self.anchors[j][k]);
                for (i, row) in edges.iter().enumerate() {
                    let c = self.stiffness(row[j]);
                    if c != 0.0 {
                        force += c * (r[i * d + k] - rj);
                    }
                }
                out[j * d + k] += self.h * force;
            }
        }
    }
}

/// Runs every trajectory of `spec` for `steps` recorded steps after burn-in.
/// Samples are `[N × steps × D]`; labels mark each trajectory Mixed when it
/// contains the boundary and carry the change set as root causes.
pub fn simulate(spec: &ScmSpec, steps: usize, seed: u64) -> Result<(TrajectoryCorpus, RegimeLabels)> {
    spec.validate()?;
    if steps == 0 {
        return Err(Error::param("need at least one recorded step"));
    }
    let (n, d) = (spec.n, spec.d);
    let before = spec.edges.clone();
    let after = spec.switched_edges();
    let root = Rng::new(seed);
    let run = |traj: usize| -> Result<Tensor> {
        let mut rng = root.derive(traj as u64);
        let mut r: Vec<f64> = spec.anchors.iter().flatten().copied().collect();
        let mut next = vec![0.0; n * d];
        let mut data = vec![0.0; n * steps * d];
        for t in 0..spec.burn_in + steps {
            if t >= spec.burn_in {
                let rec = t - spec.burn_in;
                for i in 0..n {
                    data[(i * steps + rec) * d..(i * steps + rec + 1) * d]
                        .copy_from_slice(&r[i * d..(i + 1) * d]);
                }
                if rec + 1 == steps {
                    break;
                }
            }
            let switched = matches!(spec.boundary_step, Some(b) if t + 1 >= spec.burn_in + b);
            spec.drift(if switched { &after } else { &before }, &r, &mut next);
            if spec.sigma_u > 0.0 {
                next.iter_mut().for_each(|v| *v += spec.sigma_u * rng.normal());
            }
            if let Some(bad) = next.iter().find(|v| !v.is_finite() || v.abs() > BLOW_UP) {
                return Err(Error::Numerical(format!(
                    "trajectory {traj} blew up at step {t} (|r| = {bad:e}); try a smaller h"
                )));
            }
            std::mem::swap(&mut r, &mut next);
        }
        Tensor::new(vec![n, steps, d], data)
    };
    // Each trajectory owns its stream, so the thread count cannot change the output.
    let samples = (0..spec.trajectories).into_par_iter().map(run).collect::<Result<Vec<_>>>()?;
    let mut corpus = TrajectoryCorpus::from_samples(samples)?;
    corpus.hb_triples = spec.hb_triples.clone();
    corpus.origins = (0..spec.trajectories)
        .map(|trajectory| SampleOrigin { trajectory, start: 0 })
        .collect();
    let regime = match spec.boundary_step {
        None => Regime::Persist,
        Some(0) => Regime::Separated,
        Some(b) if b >= steps => Regime::Persist,
        Some(_) => Regime::Mixed,
    };
    let labels = RegimeLabels {
        regimes: vec![regime; spec.trajectories],
        root_cause_nodes: spec.change_set.clone(),
        boundary_step: spec.boundary_step,
    };
    Ok((corpus, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HbCriterion {
    pub cutoff: f64,
    pub min_angle_deg: f64,
}

impl Default for HbCriterion {
    fn default() -> Self {
        Self {
            cutoff: 3.5,
            min_angle_deg: 120.0,
        }
    }
}

impl HbCriterion {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) {
            return Err(Error::Config("HB cutoff must be positive".into()));
        }
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg <= 180.0) {
            return Err(Error::Config("HB angle must lie in (0, 180]".into()));
        }
        Ok(())
    }

    /// Donor–acceptor distance within cutoff and donor–H–acceptor angle at
    /// least the minimum.
    pub fn holds(&self, donor: &[f64], hydrogen: &[f64], acceptor: &[f64]) -> bool {
        let dist = norm(&sub(acceptor, donor));
        if dist > self.cutoff {
            return false;
        }
        let a = sub(donor, hydrogen);
        let b = sub(acceptor, hydrogen);
        let (na, nb) = (norm(&a), norm(&b));
        if na == 0.0 || nb == 0.0 {
            return false;
        }
        let cos = (a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)).clamp(-1.0, 1.0);
        cos.acos().to_degrees() >= self.min_angle_deg - 1e-9
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-step indicator that every tracked triple is bonded, for one sample.
pub fn hb_indicator(sample: &Tensor, triples: &[HbTriple], criterion: &HbCriterion, scale: f64) -> Vec<bool> {
    let (t_len, d) = (sample.shape()[1], sample.shape()[2]);
    let at = |atom: usize, t: usize| -> Vec<f64> {
        let off = (atom * t_len + t) * d;
        sample.data()[off..off + d].iter().map(|v| v * scale).collect()
    };
    (0..t_len)
        .map(|t| {
            triples
                .iter()
                .all(|tr| criterion.holds(&at(tr.donor, t), &at(tr.hydrogen, t), &at(tr.acceptor, t)))
        })
        .collect()
}

/// Labels each sample persist (bond held on ≥ 90% of steps), separated
/// (≤ 10%) or Mixed. Distances are measured in raw units.
pub fn label_hb_events(corpus: &TrajectoryCorpus, criterion: &HbCriterion) -> Result<RegimeLabels> {
    criterion.validate()?;
    if corpus.hb_triples.is_empty() {
        return Err(Error::Config(
            "corpus metadata designates no donor/hydrogen/acceptor triples".into(),
        ));
    }
    let n = corpus.n_atoms();
    if corpus
        .hb_triples
        .iter()
        .any(|t| [t.donor, t.hydrogen, t.acceptor].iter().any(|&a| a >= n))
    {
        return Err(Error::Config("hydrogen-bond triple out of range".into()));
    }
    let regimes = corpus
        .samples
        .iter()
        .map(|s| {
            let ind = hb_indicator(s, &corpus.hb_triples, criterion, corpus.normalization_scale);
            let frac = ind.iter().filter(|&&b| b).count() as f64 / ind.len() as f64;
            if frac >= 0.9 {
                Regime::Persist
            } else if frac <= 0.1 {
                Regime::Separated
            } else {
                Regime::Mixed
            }
        })
        .collect();
    Ok(RegimeLabels {
        regimes,
        root_cause_nodes: Vec::new(),
        boundary_step: None,
    })
}
