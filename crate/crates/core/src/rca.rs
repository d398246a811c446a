//! Root-cause scoring from learned edge posteriors, distributional
//! distances for the ground-truth oracle, and ranking accuracy.

use serde::{Deserialize, Serialize};

use crate::data::{Regime, RegimeLabels, TrajectoryCorpus};
use crate::error::{Error, Result};
use crate::format::fmt_f64;
use crate::model::{ordered_pairs, EdgePosterior};
use crate::registry::Registry;

pub const DEFAULT_EPS: f64 = 1e-8;
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Largest node score still reported as "no mechanism change".
pub const NO_CHANGE_THRESHOLD: f64 = 1e-3;
pub const NO_CHANGE_MESSAGE: &str = "no mechanism change detected";

/// Diagonal Gaussian given by per-dimension means and variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::dim("mean and variance lengths differ"));
        }
        if let Some(v) = var.iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::param(format!("variance must be positive, got {v}")));
        }
        Ok(Self { mean, var })
    }

    /// Maximum-likelihood fit of `points` (rows of equal length), with the
    /// variance floored.
    pub fn fit<'a>(points: impl IntoIterator<Item = &'a [f64]>, dims: usize) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        let pts: Vec<&[f64]> = points.into_iter().collect();
        for p in &pts {
            for k in 0..dims {
                sum[k] += p[k];
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::Degenerate("cannot fit a Gaussian to no points".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for p in &pts {
            for k in 0..dims {
                sq[k] += (p[k] - mean[k]).powi(2);
            }
        }
        let var = sq.iter().map(|s| (s / count as f64).max(VARIANCE_FLOOR)).collect();
        Self::new(mean, var)
    }
}

fn same_dims(a: &DiagGaussian, b: &DiagGaussian) -> Result<()> {
    if a.mean.len() != b.mean.len() {
        return Err(Error::dim("Gaussians of different dimension"));
    }
    Ok(())
}

/// `KL(a ‖ b)`, summed over dimensions.
pub fn gaussian_kl(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    same_dims(a, b)?;
    Ok(a.mean
        .iter()
        .zip(&a.var)
        .zip(b.mean.iter().zip(&b.var))
        .map(|((m1, v1), (m2, v2))| 0.5 * ((v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / v2 - 1.0))
        .sum())
}

/// 2-Wasserstein distance between diagonal Gaussians.
pub fn wasserstein2(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    same_dims(a, b)?;
    let mut acc = 0.0;
    for k in 0..a.mean.len() {
        acc += (a.mean[k] - b.mean[k]).powi(2) + (a.var[k].sqrt() - b.var[k].sqrt()).powi(2);
    }
    Ok(acc.sqrt())
}

/// Euclidean distance between the means.
pub fn expectation_distance(a: &DiagGaussian, b: &DiagGaussian) -> Result<f64> {
    same_dims(a, b)?;
    Ok(a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

/// Distance between a node's persist and separated fits.
pub trait OracleDistance {
    fn name(&self) -> &'static str;
    fn distance(&self, persist: &DiagGaussian, separated: &DiagGaussian) -> Result<f64>;
}

pub struct GaussianKl;
pub struct Wasserstein2;
pub struct Expectation;

impl OracleDistance for GaussianKl {
    fn name(&self) -> &'static str {
        "gaussian-kl"
    }

    fn distance(&self, persist: &DiagGaussian, separated: &DiagGaussian) -> Result<f64> {
        gaussian_kl(separated, persist)
    }
}

impl OracleDistance for Wasserstein2 {
    fn name(&self) -> &'static str {
        "wasserstein2"
    }

    fn distance(&self, persist: &DiagGaussian, separated: &DiagGaussian) -> Result<f64> {
        wasserstein2(separated, persist)
    }
}

impl OracleDistance for Expectation {
    fn name(&self) -> &'static str {
        "expectation"
    }

    fn distance(&self, persist: &DiagGaussian, separated: &DiagGaussian) -> Result<f64> {
        expectation_distance(separated, persist)
    }
}

pub fn oracle_distances() -> Registry<dyn OracleDistance> {
    let mut r: Registry<dyn OracleDistance> = Registry::new("oracle distance");
    r.register("gaussian-kl", || Box::new(GaussianKl));
    r.register("wasserstein2", || Box::new(Wasserstein2));
    r.register("expectation", || Box::new(Expectation));
    r
}

/// Smoothed `(p + ε) / (1 + 2ε)`.
pub fn smooth(p: f64, eps: f64) -> f64 {
    (p + eps) / (1.0 + 2.0 * eps)
}

/// `KL(Bern(p) ‖ Bern(q))` after smoothing both.
pub fn bernoulli_kl(p: f64, q: f64, eps: f64) -> f64 {
    let (p, q) = (smooth(p, eps), smooth(q, eps));
    p * (p / q).ln() + (1.0 - p) * ((1.0 - p) / (1.0 - q)).ln()
}

/// `KL(p ‖ q)` for categorical distributions, `0·log 0 = 0`.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::dim("categorical supports differ"));
    }
    let mut acc = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a > 0.0 {
            if !(b > 0.0) {
                return Err(Error::param("reference distribution has zero mass on a supported outcome"));
            }
            acc += a * (a / b).ln();
        }
    }
    Ok(acc)
}

/// One compared channel of an incoming edge `from → to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismEntry {
    pub from: usize,
    pub to: usize,
    pub p_hb: f64,
    pub p_sep: f64,
}

/// The compared mechanism probabilities of every incoming edge.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismPair {
    pub nodes: usize,
    pub entries: Vec<MechanismEntry>,
    pub eps: f64,
}

/// Builds the compared mechanisms from per-window posteriors.
pub trait MechanismExtractor {
    fn name(&self) -> &'static str;
    fn extract(&self, posteriors: &[EdgePosterior], regimes: &[Regime], eps: f64) -> Result<MechanismPair>;
}

fn mean_posterior<'a>(posteriors: impl Iterator<Item = &'a EdgePosterior>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut count = 0usize;
    for p in posteriors {
        match &mut acc {
            None => acc = Some(p.probs.data().to_vec()),
            Some(a) => a.iter_mut().zip(p.probs.data()).for_each(|(x, y)| *x += y),
        }
        count += 1;
    }
    acc.map(|mut a| {
        a.iter_mut().for_each(|v| *v /= count as f64);
        a
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 0.5 {
        Ok(())
    } else {
        Err(Error::param(format!("smoothing must lie in (0, 0.5), got {eps}")))
    }
}

/// Within one averaged posterior, contrasts the separation channel against
/// the hydrogen-bond channel of each edge.
pub struct ChannelContrast;

impl MechanismExtractor for ChannelContrast {
    fn name(&self) -> &'static str {
        "channel-contrast"
    }

    fn extract(&self, posteriors: &[EdgePosterior], _regimes: &[Regime], eps: f64) -> Result<MechanismPair> {
        check_eps(eps)?;
        let n = posteriors.first().ok_or_else(|| Error::Degenerate("no posteriors".into()))?.n();
        let mean = mean_posterior(posteriors.iter()).expect("nonempty");
        let entries = ordered_pairs(n)
            .map(|(i, j)| MechanismEntry {
                from: i,
                to: j,
                p_hb: mean[(i * n + j) * 3 + 1],
                p_sep: mean[(i * n + j) * 3 + 2],
            })
            .collect();
        Ok(MechanismPair { nodes: n, entries, eps })
    }
}

/// Contrasts the mean posterior over separated windows against the mean
/// over persist windows, once per causal channel of each edge.
pub struct RegimeContrast;

impl MechanismExtractor for RegimeContrast {
    fn name(&self) -> &'static str {
        "regime-contrast"
    }

    fn extract(&self, posteriors: &[EdgePosterior], regimes: &[Regime], eps: f64) -> Result<MechanismPair> {
        check_eps(eps)?;
        if posteriors.len() != regimes.len() {
            return Err(Error::dim(format!(
                "{} posteriors for {} regime labels",
                posteriors.len(),
                regimes.len()
            )));
        }
        let pick = |r: Regime| {
            mean_posterior(posteriors.iter().zip(regimes).filter(|(_, &x)| x == r).map(|(p, _)| p))
                .ok_or_else(|| Error::Degenerate(format!("no {r:?} windows to contrast").to_lowercase()))
        };
        let hb = pick(Regime::Persist)?;
        let sep = pick(Regime::Separated)?;
        let n = posteriors[0].n();
        let mut entries = Vec::with_capacity(2 * n * n);
        for (i, j) in ordered_pairs(n) {
            for c in 1..3 {
                let off = (i * n + j) * 3 + c;
                entries.push(MechanismEntry {
                    from: i,
                    to: j,
                    p_hb: hb[off],
                    p_sep: sep[off],
                });
            }
        }
        Ok(MechanismPair { nodes: n, entries, eps })
    }
}

pub fn mechanism_extractors() -> Registry<dyn MechanismExtractor> {
    let mut r: Registry<dyn MechanismExtractor> = Registry::new("mechanism extractor");
    r.register("channel-contrast", || Box::new(ChannelContrast));
    r.register("regime-contrast", || Box::new(RegimeContrast));
    r
}

/// Per-node score: sum over incoming entries of `KL(Bern(p_sep) ‖ Bern(p_hb))`.
pub fn node_scores(pair: &MechanismPair) -> Vec<f64> {
    let mut scores = vec![0.0; pair.nodes];
    for e in &pair.entries {
        scores[e.to] += bernoulli_kl(e.p_sep, e.p_hb, pair.eps);
    }
    scores
}

/// Node indices by descending score; ties keep index order.
pub fn rank_descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `|top-K(model) ∩ top-K(oracle)| / K` for two full rankings.
pub fn ranking_accuracy(model: &[usize], oracle: &[usize], k: usize) -> Result<f64> {
    if model.len() != oracle.len() {
        return Err(Error::dim("rankings cover different node sets"));
    }
    if k == 0 || k > model.len() {
        return Err(Error::param(format!("K = {k} must lie in 1..={}", model.len())));
    }
    let hits = model[..k].iter().filter(|i| oracle[..k].contains(i)).count();
    Ok(hits as f64 / k as f64)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

/// Per-node diagonal Gaussians on persist and on separated windows, pooling
/// every step of every window in each regime.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthOracle {
    pub persist: Vec<DiagGaussian>,
    pub separated: Vec<DiagGaussian>,
}

impl GroundTruthOracle {
    pub fn fit(corpus: &TrajectoryCorpus, labels: &RegimeLabels) -> Result<Self> {
        labels.validate(corpus.len(), corpus.n_atoms())?;
        let (n, t, d) = (corpus.n_atoms(), corpus.steps(), corpus.dims());
        let fit_regime = |r: Regime| -> Result<Vec<DiagGaussian>> {
            let idx = labels.indices_of(r);
            if idx.is_empty() {
                return Err(Error::Degenerate(format!("no {r:?} windows for the oracle").to_lowercase()));
            }
            (0..n)
                .map(|i| {
                    let pts = idx.iter().flat_map(|&s| {
                        let data = corpus.samples[s].data();
                        (0..t).map(move |step| &data[(i * t + step) * d..(i * t + step + 1) * d])
                    });
                    DiagGaussian::fit(pts, d)
                })
                .collect()
        };
        Ok(Self {
            persist: fit_regime(Regime::Persist)?,
            separated: fit_regime(Regime::Separated)?,
        })
    }

    pub fn distances(&self, metric: &dyn OracleDistance) -> Result<Vec<f64>> {
        self.persist
            .iter()
            .zip(&self.separated)
            .map(|(p, s)| metric.distance(p, s))
            .collect()
    }

    pub fn ranking(&self, metric: &dyn OracleDistance) -> Result<Vec<usize>> {
        Ok(rank_descending(&self.distances(metric)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracySummary {
    pub metric: String,
    /// `None` when accuracy is undefined.
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RcaReport {
    pub atom_names: Vec<String>,
    pub scores: Vec<f64>,
    pub ranking: Vec<usize>,
    pub k: usize,
    pub accuracy: Vec<AccuracySummary>,
    pub no_change: bool,
}

impl RcaReport {
    /// Scores and ranks nodes; accuracy is left empty.
    pub fn from_scores(scores: Vec<f64>, atom_names: Vec<String>, k: usize) -> Result<Self> {
        if scores.len() != atom_names.len() {
            return Err(Error::dim("one name per scored node"));
        }
        if k == 0 || k > scores.len() {
            return Err(Error::param(format!("K = {k} must lie in 1..={}", scores.len())));
        }
        let ranking = rank_descending(&scores);
        let no_change = scores.iter().all(|&s| s < NO_CHANGE_THRESHOLD);
        Ok(Self {
            atom_names,
            scores,
            ranking,
            k,
            accuracy: Vec::new(),
            no_change,
        })
    }

    pub fn top_k(&self) -> &[usize] {
        &self.ranking[..self.k]
    }

    /// Accuracy against every oracle metric for a single run, or undefined
    /// when no oracle is available or no change was detected.
    pub fn score_against(&mut self, oracle: Option<&GroundTruthOracle>) -> Result<()> {
        self.accuracy.clear();
        for name in oracle_distances().names() {
            let metric = oracle_distances().get(name)?;
            let acc = match oracle {
                Some(o) if !self.no_change => Some(ranking_accuracy(&self.ranking, &o.ranking(metric.as_ref())?, self.k)?),
                _ => None,
            };
            self.accuracy.push(AccuracySummary {
                metric: name.to_string(),
                mean: acc,
                std: acc.map(|_| 0.0),
            });
        }
        Ok(())
    }

    /// `rank,atom,score`, ranks starting at 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,atom,score\n");
        for (r, &i) in self.ranking.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", r + 1, self.atom_names[i], fmt_f64(self.scores[i])));
        }
        out
    }

    /// `oracle_metric,mean,std` with `undefined` for missing values.
    pub fn accuracy_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "undefined".into());
        let mut out = String::from("oracle_metric,mean,std\n");
        for a in &self.accuracy {
            out.push_str(&format!("{},{},{}\n", a.metric, cell(a.mean), cell(a.std)));
        }
        out
    }

    pub fn status(&self) -> &'static str {
        if self.no_change {
            NO_CHANGE_MESSAGE
        } else {
            "mechanism change detected"
        }
    }
}

/// Aggregates per-seed accuracies per metric; `None` entries are skipped and
/// a metric with no defined values stays undefined.
pub fn aggregate_accuracy(runs: &[&RcaReport]) -> Vec<AccuracySummary> {
    let mut out = Vec::new();
    for name in oracle_distances().names() {
        let vals: Vec<f64> = runs
            .iter()
            .filter_map(|r| r.accuracy.iter().find(|a| a.metric == name).and_then(|a| a.mean))
            .collect();
        let ms = mean_std(&vals);
        out.push(AccuracySummary {
            metric: name.to_string(),
            mean: ms.map(|m| m.0),
            std: ms.map(|m| m.1),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn g1(m: f64, v: f64) -> DiagGaussian {
        DiagGaussian::new(vec![m], vec![v]).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(gaussian_kl(&g1(0.3, 2.0), &g1(0.3, 2.0)).unwrap(), 0.0);
        assert!((gaussian_kl(&g1(1.0, 1.0), &g1(0.0, 1.0)).unwrap() - 0.5).abs() < 1e-12);
        assert!((wasserstein2(&g1(1.0, 1.0), &g1(0.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(expectation_distance(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap(), 0.0);
        assert!((wasserstein2(&g1(0.0, 1.0), &g1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(DiagGaussian::new(vec![0.0], vec![0.0]), Err(Error::Parameter(_))));
    }

    #[test]
    fn bernoulli_examples() {
        let s = bernoulli_kl(0.9, 0.1, DEFAULT_EPS);
        let expect = 0.9 * 9f64.ln() + 0.1 * (1.0f64 / 9.0).ln();
        assert!((s - expect).abs() < 1e-6);
        assert!((s - 1.7578).abs() < 1e-4);
        assert_eq!(bernoulli_kl(0.3, 0.3, DEFAULT_EPS), 0.0);
        assert!(bernoulli_kl(1.0, 0.0, DEFAULT_EPS).is_finite());
    }

    #[test]
    fn node_scores_use_incoming_edges() {
        let pair = MechanismPair {
            nodes: 3,
            entries: vec![
                MechanismEntry { from: 0, to: 2, p_hb: 0.1, p_sep: 0.9 },
                MechanismEntry { from: 2, to: 1, p_hb: 0.4, p_sep: 0.4 },
            ],
            eps: DEFAULT_EPS,
        };
        let s = node_scores(&pair);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 0.0);
        assert!((s[2] - 1.7578).abs() < 1e-4);
        assert_eq!(rank_descending(&s)[0], 2);
    }

    #[test]
    fn ranking_accuracy_examples() {
        let a = vec![0, 1, 2, 3];
        assert_eq!(ranking_accuracy(&a, &a, 2).unwrap(), 1.0);
        assert_eq!(ranking_accuracy(&a, &[2, 3, 0, 1], 2).unwrap(), 0.0);
        assert!(matches!(ranking_accuracy(&a, &a, 5), Err(Error::Parameter(_))));
    }

    fn constant_posterior(n: usize, q: [f64; 3]) -> EdgePosterior {
        let mut probs = Tensor::zeros(&[n, n, 3]);
        for (i, j) in ordered_pairs(n) {
            probs.data_mut()[(i * n + j) * 3..(i * n + j + 1) * 3].copy_from_slice(&q);
        }
        EdgePosterior {
            logits: probs.map(|p| if p > 0.0 { p.ln() } else { 0.0 }),
            probs,
        }
    }

    #[test]
    fn regime_contrast_flags_changed_receiver() {
        let a = constant_posterior(3, [0.2, 0.7, 0.1]);
        let mut b = a.clone();
        // Edge 0 -> 1.
        let off = 3;
        b.probs.data_mut()[off..off + 3].copy_from_slice(&[0.8, 0.1, 0.1]);
        let pair = RegimeContrast
            .extract(&[a.clone(), b], &[Regime::Persist, Regime::Separated], DEFAULT_EPS)
            .unwrap();
        let s = node_scores(&pair);
        assert!(s[1] > 0.1 && s[0] == 0.0 && s[2] == 0.0);
        let err = RegimeContrast.extract(std::slice::from_ref(&a), &[Regime::Persist], DEFAULT_EPS);
        assert!(matches!(err, Err(Error::Degenerate(_))));
        let same = ChannelContrast.extract(&[constant_posterior(3, [0.2, 0.4, 0.4])], &[], DEFAULT_EPS).unwrap();
        assert!(node_scores(&same).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn report_csvs() {
        let mut r = RcaReport::from_scores(vec![0.0, 0.0], vec!["a".into(), "b".into()], 1).unwrap();
        assert!(r.no_change);
        assert_eq!(r.status(), NO_CHANGE_MESSAGE);
        r.score_against(None).unwrap();
        assert_eq!(r.to_csv(), "rank,atom,score\n1,a,0.0000000000000000e0\n2,b,0.0000000000000000e0\n");
        assert!(r.accuracy_csv().contains("gaussian-kl,undefined,undefined"));
    }

    #[test]
    fn gaussian_fit_floors_variance() {
        let pts = [[1.0, 2.0], [1.0, 4.0]];
        let g = DiagGaussian::fit(pts.iter().map(|p| p.as_slice()), 2).unwrap();
        assert_eq!(g.mean, vec![1.0, 3.0]);
        assert_eq!(g.var, vec![VARIANCE_FLOOR, 1.0]);
    }
}
