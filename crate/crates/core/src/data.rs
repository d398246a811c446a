//! Trajectory corpora, regime labels, normalization, windowing and splits.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Donor, hydrogen and acceptor atom indices of one tracked hydrogen bond.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbTriple {
    pub donor: usize,
    pub hydrogen: usize,
    pub acceptor: usize,
}

/// Where a sample came from: source trajectory and first step within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleOrigin {
    pub trajectory: usize,
    pub start: usize,
}

/// A set of equally shaped samples, each `[N × T × D]` positions.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCorpus {
    pub samples: Vec<Tensor>,
    pub atom_names: Vec<String>,
    pub dt: f64,
    /// Raw positions are `stored · normalization_scale`.
    pub normalization_scale: f64,
    pub hb_triples: Vec<HbTriple>,
    pub origins: Vec<SampleOrigin>,
    /// Set on corpora written by a trained model rather than observed.
    pub predicted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Persist,
    Separated,
    /// Straddles a regime switch or is otherwise ambiguous; excluded from
    /// regime statistics.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabels {
    pub regimes: Vec<Regime>,
    /// Ground-truth changed nodes; only known for synthetic corpora.
    pub root_cause_nodes: Vec<usize>,
    pub boundary_step: Option<usize>,
}

impl RegimeLabels {
    pub fn validate(&self, samples: usize, atoms: usize) -> Result<()> {
        if self.regimes.len() != samples {
            return Err(Error::Config(format!(
                "{} regime labels for {} samples",
                self.regimes.len(),
                samples
            )));
        }
        if let Some(&bad) = self.root_cause_nodes.iter().find(|&&i| i >= atoms) {
            return Err(Error::Config(format!("root cause node {bad} out of range")));
        }
        Ok(())
    }

    pub fn indices_of(&self, regime: Regime) -> Vec<usize> {
        self.regimes
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == regime)
            .map(|(i, _)| i)
            .collect()
    }
}

impl TrajectoryCorpus {
    /// Builds a corpus with default names and metadata after checking that
    /// all samples are rank 3 and share a shape.
    pub fn from_samples(samples: Vec<Tensor>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Degenerate("corpus has no samples".into()))?;
        if first.rank() != 3 {
            return Err(Error::dim(format!("sample shape {:?} is not [N,T,D]", first.shape())));
        }
        let shape = first.shape().to_vec();
        if let Some(bad) = samples.iter().position(|s| s.shape() != shape.as_slice()) {
            return Err(Error::dim(format!(
                "sample {bad} has shape {:?}, expected {:?}",
                samples[bad].shape(),
                shape
            )));
        }
        let origins = (0..samples.len())
            .map(|i| SampleOrigin {
                trajectory: i,
                start: 0,
            })
            .collect();
        Ok(Self {
            atom_names: (0..shape[0]).map(|i| format!("atom{i}")).collect(),
            samples,
            dt: 1.0,
            normalization_scale: 1.0,
            hb_triples: Vec::new(),
            origins,
            predicted: false,
        })
    }

    pub fn n_atoms(&self) -> usize {
        self.samples.first().map_or(0, |s| s.shape()[0])
    }

    pub fn steps(&self) -> usize {
        self.samples.first().map_or(0, |s| s.shape()[1])
    }

    pub fn dims(&self) -> usize {
        self.samples.first().map_or(0, |s| s.shape()[2])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = [self.n_atoms(), self.steps(), self.dims()];
        for (i, s) in self.samples.iter().enumerate() {
            if s.shape() != shape {
                return Err(Error::dim(format!("sample {i} has shape {:?}", s.shape())));
            }
            if !s.all_finite() {
                return Err(Error::Degenerate(format!("sample {i} has non-finite values")));
            }
        }
        if self.atom_names.len() != shape[0] {
            return Err(Error::Config(format!(
                "{} atom names for {} atoms",
                self.atom_names.len(),
                shape[0]
            )));
        }
        if self.origins.len() != self.samples.len() {
            return Err(Error::Config("one origin per sample required".into()));
        }
        Ok(())
    }

    /// Copy with `samples` replaced, keeping metadata.
    pub fn with_samples(&self, samples: Vec<Tensor>, origins: Vec<SampleOrigin>) -> Self {
        Self {
            samples,
            origins,
            atom_names: self.atom_names.clone(),
            dt: self.dt,
            normalization_scale: self.normalization_scale,
            hb_triples: self.hb_triples.clone(),
            predicted: self.predicted,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        self.with_samples(
            indices.iter().map(|&i| self.samples[i].clone()).collect(),
            indices.iter().map(|&i| self.origins[i]).collect(),
        )
    }

    /// SHA-256 over shape and raw little-endian values, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.samples.len(), self.n_atoms(), self.steps(), self.dims()] {
            h.update((v as u64).to_le_bytes());
        }
        for s in &self.samples {
            for v in s.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Divides every value by the corpus-wide maximum absolute value.
pub fn normalize(corpus: &TrajectoryCorpus) -> Result<TrajectoryCorpus> {
    let max = corpus.samples.iter().fold(0.0f64, |m, s| m.max(s.max_abs()));
    if max == 0.0 || !max.is_finite() {
        return Err(Error::Degenerate(format!(
            "cannot normalize: maximum absolute value is {max}"
        )));
    }
    let mut out = corpus.clone();
    for s in &mut out.samples {
        s.data_mut().iter_mut().for_each(|v| *v /= max);
    }
    out.normalization_scale = corpus.normalization_scale * max;
    Ok(out)
}

pub fn denormalize(corpus: &TrajectoryCorpus) -> TrajectoryCorpus {
    let scale = corpus.normalization_scale;
    let mut out = corpus.clone();
    for s in &mut out.samples {
        s.data_mut().iter_mut().for_each(|v| *v *= scale);
    }
    out.normalization_scale = 1.0;
    out
}

/// Cuts `[N × T_total × D]` into `floor(T_total / steps)` consecutive,
/// non-overlapping windows; trailing steps are dropped.
pub fn window(long: &Tensor, steps: usize) -> Result<Vec<Tensor>> {
    if long.rank() != 3 {
        return Err(Error::dim(format!("expected [N,T,D], got {:?}", long.shape())));
    }
    if steps < 2 {
        return Err(Error::param(format!("window length must be at least 2, got {steps}")));
    }
    let (n, total, d) = (long.shape()[0], long.shape()[1], long.shape()[2]);
    if steps > total {
        return Err(Error::param(format!(
            "window length {steps} exceeds trajectory length {total}"
        )));
    }
    let count = total / steps;
    let src = long.data();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let mut data = Vec::with_capacity(n * steps * d);
        for i in 0..n {
            let start = (i * total + w * steps) * d;
            data.extend_from_slice(&src[start..start + steps * d]);
        }
        out.push(Tensor::new(vec![n, steps, d], data)?);
    }
    Ok(out)
}

/// Windows every sample of a corpus. Window regimes come from the regime
/// boundary when one is recorded; otherwise each window inherits the label
/// of its source sample.
pub fn window_corpus(
    corpus: &TrajectoryCorpus,
    labels: Option<&RegimeLabels>,
    steps: usize,
) -> Result<(TrajectoryCorpus, Option<RegimeLabels>)> {
    let mut samples = Vec::new();
    let mut origins = Vec::new();
    let mut regimes = Vec::new();
    for (s, sample) in corpus.samples.iter().enumerate() {
        let origin = corpus.origins[s];
        for (w, win) in window(sample, steps)?.into_iter().enumerate() {
            let start = origin.start + w * steps;
            if let Some(l) = labels {
                let regime = match l.boundary_step {
                    Some(b) if start + steps <= b => Regime::Persist,
                    Some(b) if start >= b => Regime::Separated,
                    Some(_) => Regime::Mixed,
                    None => l.regimes[s],
                };
                regimes.push(regime);
            }
            samples.push(win);
            origins.push(SampleOrigin {
                trajectory: origin.trajectory,
                start,
            });
        }
    }
    let out = corpus.with_samples(samples, origins);
    let labels = labels.map(|l| RegimeLabels {
        regimes,
        root_cause_nodes: l.root_cause_nodes.clone(),
        boundary_step: l.boundary_step,
    });
    Ok((out, labels))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::Config("split fractions must lie in [0, 1]".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions sum to {}, expected 1",
                parts.iter().sum::<f64>()
            )));
        }
        Ok(())
    }

    /// Disjoint, exhaustive assignment of `count` windows, reproducible
    /// from the spec seed and the corpus hash.
    pub fn split(&self, count: usize, corpus_hash: &str) -> Result<Split> {
        self.validate()?;
        let hash_bits = u64::from_str_radix(corpus_hash.get(..16).unwrap_or("0"), 16).unwrap_or(0);
        let mut rng = Rng::new(derive_seed(self.seed, hash_bits));
        let mut order: Vec<usize> = (0..count).collect();
        rng.shuffle(&mut order);
        let n_test = (count as f64 * self.test).floor() as usize;
        let n_val = (count as f64 * self.val).floor() as usize;
        let sorted = |s: &[usize]| {
            let mut v = s.to_vec();
            v.sort_unstable();
            v
        };
        Ok(Split {
            test: sorted(&order[..n_test]),
            val: sorted(&order[n_test..n_test + n_val]),
            train: sorted(&order[n_test + n_val..]),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, t: usize, d: usize, f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(vec![n, t, d], (0..n * t * d).map(f).collect()).unwrap()
    }

    #[test]
    fn normalize_scales_by_max_abs() {
        let s = Tensor::new(vec![1, 3, 1], vec![-4.0, 2.0, 1.0]).unwrap();
        let c = TrajectoryCorpus::from_samples(vec![s]).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.normalization_scale, 4.0);
        assert_eq!(n.samples[0].data(), &[-1.0, 0.5, 0.25]);
    }

    #[test]
    fn normalize_identity_when_unit() {
        let s = Tensor::new(vec![1, 2, 1], vec![1.0, -0.5]).unwrap();
        let c = TrajectoryCorpus::from_samples(vec![s]).unwrap();
        let n = normalize(&c).unwrap();
        assert_eq!(n.normalization_scale, 1.0);
        assert_eq!(n.samples, c.samples);
    }

    #[test]
    fn normalize_rejects_all_zero() {
        let c = TrajectoryCorpus::from_samples(vec![Tensor::zeros(&[2, 3, 1])]).unwrap();
        assert!(matches!(normalize(&c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn window_counts_follow_floor() {
        let long = sample(1, 10_000, 1, |i| i as f64);
        assert_eq!(window(&long, 350).unwrap().len(), 28);
        assert_eq!(window(&long, 5).unwrap().len(), 2000);
        let short = sample(2, 10, 3, |i| i as f64);
        let w = window(&short, 10).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0], short);
    }

    #[test]
    fn window_rejects_bad_lengths() {
        let long = sample(1, 10, 1, |i| i as f64);
        assert!(matches!(window(&long, 11), Err(Error::Parameter(_))));
        assert!(matches!(window(&long, 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn window_regimes_follow_boundary() {
        let long = sample(2, 12, 1, |i| i as f64);
        let c = TrajectoryCorpus::from_samples(vec![long]).unwrap();
        let labels = RegimeLabels {
            regimes: vec![Regime::Mixed],
            root_cause_nodes: vec![1],
            boundary_step: Some(5),
        };
        let (w, l) = window_corpus(&c, Some(&labels), 3).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(
            l.unwrap().regimes,
            vec![Regime::Persist, Regime::Mixed, Regime::Separated, Regime::Separated]
        );
        assert_eq!(w.origins[2].start, 6);
    }

    #[test]
    fn split_is_disjoint_exhaustive_and_reproducible() {
        let spec = SplitSpec::default();
        let a = spec.split(57, "abcdef0123456789ff").unwrap();
        let b = spec.split(57, "abcdef0123456789ff").unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..57).collect::<Vec<_>>());
        assert_eq!(a.test.len(), 5);
        assert_eq!(a.val.len(), 5);
        let c = spec.split(57, "0000000000000001").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_fractions_must_sum_to_one() {
        let spec = SplitSpec {
            train: 0.5,
            val: 0.1,
            test: 0.1,
            seed: 0,
        };
        assert!(spec.split(10, "00").is_err());
    }

    #[test]
    fn hash_changes_with_values() {
        let a = TrajectoryCorpus::from_samples(vec![sample(2, 3, 1, |i| i as f64)]).unwrap();
        let mut b = a.clone();
        b.samples[0].data_mut()[0] = 1e-300;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), a.clone().content_hash());
    }
}
