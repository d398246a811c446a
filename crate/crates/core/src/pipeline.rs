//! End-to-end stages shared by the command line and the test suites.

use crate::data::{RegimeLabels, TrajectoryCorpus};
use crate::error::{Error, Result};
use crate::metrics::{mse_mae, SweepRow};
use crate::model::{encode, EdgePosterior};
use crate::rca::{mechanism_extractors, node_scores, GroundTruthOracle, RcaReport};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{predict_windows, train, Checkpoint, TrainConfig, TrainOutcome};

const STREAM_PREDICT: u64 = 11;

#[derive(Debug, Clone)]
pub struct RcaRun {
    pub outcome: TrainOutcome,
    pub posteriors: Vec<EdgePosterior>,
    pub report: RcaReport,
}

/// Trains on every window, encodes each with the best parameters, scores
/// nodes with the named mechanism extractor and, when both regimes are
/// present, scores the ranking against the Gaussian oracle.
pub fn run_rca(
    config: &TrainConfig,
    corpus: &TrajectoryCorpus,
    labels: &RegimeLabels,
    extractor: &str,
    eps: f64,
    k: usize,
) -> Result<RcaRun> {
    labels.validate(corpus.len(), corpus.n_atoms())?;
    let extractor = mechanism_extractors().get(extractor)?;
    let outcome = train(config, corpus)?;
    let samples: Vec<&Tensor> = corpus.samples.iter().collect();
    let posteriors = encode(&outcome.best.params, &samples, config.batch_size)?;
    let pair = extractor.extract(&posteriors, &labels.regimes, eps)?;
    let mut report = RcaReport::from_scores(node_scores(&pair), corpus.atom_names.clone(), k)?;
    let oracle = match GroundTruthOracle::fit(corpus, labels) {
        Ok(o) => Some(o),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    report.score_against(oracle.as_ref())?;
    Ok(RcaRun {
        outcome,
        posteriors,
        report,
    })
}

/// Mean posterior over the selected windows.
pub fn mean_posterior(posteriors: &[EdgePosterior], indices: &[usize]) -> Option<EdgePosterior> {
    let picked: Vec<&EdgePosterior> = indices.iter().map(|&i| &posteriors[i]).collect();
    EdgePosterior::mean(&picked)
}

/// Free rollouts of every window with the checkpoint's evaluation sampler.
pub fn predict(checkpoint: &Checkpoint, corpus: &TrajectoryCorpus) -> Result<TrajectoryCorpus> {
    let samples: Vec<&Tensor> = corpus.samples.iter().collect();
    let cfg = &checkpoint.config;
    let mut rng = Rng::new(checkpoint.seed).derive(STREAM_PREDICT);
    let preds = predict_windows(&checkpoint.params, &samples, cfg.tau, &cfg.eval_sampler, cfg.batch_size, &mut rng)?;
    let mut out = corpus.with_samples(preds, corpus.origins.clone());
    out.predicted = true;
    Ok(out)
}

/// Test-window MSE and MAE of free rollouts.
pub fn evaluate(checkpoint: &Checkpoint, corpus: &TrajectoryCorpus, indices: &[usize]) -> Result<SweepRow> {
    if indices.is_empty() {
        return Err(Error::Degenerate("no windows to evaluate".into()));
    }
    let subset = corpus.subset(indices);
    let predicted = predict(checkpoint, &subset)?;
    let truth: Vec<&Tensor> = subset.samples.iter().collect();
    let (mse, mae) = mse_mae(&predicted.samples, &truth)?;
    Ok(SweepRow {
        steps: corpus.steps(),
        windows: indices.len(),
        mse,
        mae,
    })
}

/// Held-out test indices of a windowed corpus under the checkpoint's split.
pub fn test_indices(checkpoint: &Checkpoint, corpus: &TrajectoryCorpus) -> Result<Vec<usize>> {
    let split = checkpoint.config.split.split(corpus.len(), &corpus.content_hash())?;
    Ok(split.test)
}
