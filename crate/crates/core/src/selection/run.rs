//! The sequential acquire-label-condition loop.

use std::collections::HashSet;
use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{select_batch, subsample_targets, Policy, ScoringInputs};
use crate::datasets::{LabelOracle, RoundEntry, RunRecord};
use crate::error::{Error, Result};
use crate::gp::PosteriorState;

// Keeps the loop's candidate and target draws independent of the rule's own stream.
const LOOP_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub rounds: usize,
    /// Candidates drawn from the sample space each round; all of it if unset.
    pub candidate_size: Option<usize>,
    /// Domain indices counted as retrieved when selected.
    pub relevant: Vec<usize>,
    /// Latent function values, for RMSE over the targets.
    #[serde(skip)]
    pub truth: Option<Vec<f64>>,
    pub record_time: bool,
}

fn variance_summary(state: &PosteriorState, targets: &[usize]) -> Result<(f64, f64)> {
    if targets.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &a in targets {
        let v = state.marginal_variance(a)?;
        sum += v;
        max = max.max(v);
    }
    Ok((sum / targets.len() as f64, max))
}

fn rmse(state: &PosteriorState, targets: &[usize], truth: Option<&[f64]>) -> Option<f64> {
    let truth = truth?;
    if targets.is_empty() {
        return None;
    }
    let mean = state.mean();
    let sq: f64 = targets.iter().map(|&a| (mean[a] - truth[a]).powi(2)).sum();
    Some((sq / targets.len() as f64).sqrt())
}

/// Runs `cfg.rounds` rounds of selection from `prior`, returning the record.
///
/// Round 0 holds the prior metrics. Each later round draws the candidate set
/// and target subsample, selects a batch against the current posterior,
/// labels it through `oracle` and conditions on the labels.
pub fn run_loop(
    prior: &PosteriorState,
    targets: &[usize],
    sample: &[usize],
    policy: &Policy,
    inputs: &ScoringInputs<'_>,
    oracle: &mut dyn LabelOracle,
    cfg: &LoopConfig,
) -> Result<RunRecord> {
    policy.validate()?;
    if targets.is_empty() {
        return Err(Error::input("target space is empty"));
    }
    let mut sample: Vec<usize> = sample.to_vec();
    sample.sort_unstable();
    sample.dedup();
    if let Some(k) = cfg.candidate_size {
        if k < policy.batch_size || k == 0 {
            return Err(Error::input(format!(
                "candidate size {k} is smaller than batch size {}",
                policy.batch_size
            )));
        }
    }
    if let Some(truth) = &cfg.truth {
        if truth.len() != prior.len() {
            return Err(Error::input("truth length does not match domain size"));
        }
    }
    let relevant: HashSet<usize> = cfg.relevant.iter().copied().collect();
    let mut record = RunRecord::new(serde_json::json!({
        "policy": policy,
        "loop": cfg,
    }));
    let mut state = prior.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed ^ LOOP_STREAM_SALT);
    let mut retrieved_so_far: HashSet<usize> = HashSet::new();

    let (mean_variance, max_variance) = variance_summary(&state, targets)?;
    record.push(RoundEntry {
        round: 0,
        chosen: vec![],
        objectives: vec![],
        mean_variance,
        max_variance,
        retrieved: vec![],
        retrieval_count: 0,
        rmse: rmse(&state, targets, cfg.truth.as_deref()),
        wall_time_ms: cfg.record_time.then_some(0.0),
    })?;

    for round in 1..=cfg.rounds {
        let started = Instant::now();
        let candidates: Vec<usize> = match cfg.candidate_size {
            Some(k) if k < sample.len() => {
                let mut c: Vec<usize> = sample_indices(&mut rng, sample.len(), k)
                    .into_iter()
                    .map(|i| sample[i])
                    .collect();
                c.sort_unstable();
                c
            }
            _ => sample.clone(),
        };
        let round_targets = match policy.target_subsample {
            Some(m) if m < targets.len() => subsample_targets(targets, m, &mut rng)?,
            _ => targets.to_vec(),
        };
        let batch = select_batch(&state, &round_targets, &candidates, policy, inputs)?;
        for &x in &batch.indices {
            let y = oracle.label(x)?;
            let obs = state.observation(x, y)?;
            state.condition(obs)?;
        }
        let retrieved: Vec<bool> = batch.indices.iter().map(|x| relevant.contains(x)).collect();
        retrieved_so_far.extend(batch.indices.iter().filter(|x| relevant.contains(x)));
        let (mean_variance, max_variance) = variance_summary(&state, targets)?;
        log::debug!(
            "round {round}: chose {:?}, mean variance {mean_variance:.4e}",
            batch.indices
        );
        record.push(RoundEntry {
            round,
            chosen: batch.indices,
            objectives: batch.objectives,
            mean_variance,
            max_variance,
            retrieved,
            retrieval_count: retrieved_so_far.len(),
            rmse: rmse(&state, targets, cfg.truth.as_deref()),
            wall_time_ms: cfg
                .record_time
                .then(|| started.elapsed().as_secs_f64() * 1e3),
        })?;
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::LabeledOracle;
    use crate::kernel::{gram, KernelSpec, NoiseModel, Point};
    use crate::selection::Rule;

    fn setup() -> (PosteriorState, Vec<f64>) {
        let pts: Vec<Point> = (0..12)
            .map(|i| Point::with_coords(i, vec![i as f64 / 11.0]))
            .collect();
        let k = gram(&KernelSpec::gaussian(0.3), &pts).unwrap();
        let noise = NoiseModel::homoscedastic(0.01).unwrap();
        let truth = crate::datasets::sample_gp_values(&k, 4).unwrap();
        (PosteriorState::prior(&k, noise).unwrap(), truth)
    }

    #[test]
    fn records_rounds_and_reduces_variance() {
        let (prior, truth) = setup();
        let targets: Vec<usize> = (8..12).collect();
        let sample: Vec<usize> = (0..8).collect();
        let policy = Policy::new(Rule::Itl).batch_size(2).seed(3);
        let mut oracle = LabeledOracle::new(truth.clone(), prior.noise().clone(), 1);
        let cfg = LoopConfig {
            rounds: 3,
            candidate_size: Some(5),
            relevant: vec![6, 7],
            truth: Some(truth),
            record_time: false,
        };
        let inputs = ScoringInputs::new(prior.prior_covariance());
        let rec = run_loop(&prior, &targets, &sample, &policy, &inputs, &mut oracle, &cfg).unwrap();
        assert_eq!(rec.rounds.len(), 4);
        assert!(rec.rounds.iter().all(|r| r.chosen.len() == if r.round == 0 { 0 } else { 2 }));
        assert!(rec.rounds[3].mean_variance < rec.rounds[0].mean_variance);
        for w in rec.rounds.windows(2) {
            assert!(w[1].retrieval_count >= w[0].retrieval_count);
        }
        assert!(rec.rounds.iter().all(|r| r.wall_time_ms.is_none()));
    }

    #[test]
    fn identical_inputs_give_identical_records() {
        let (prior, truth) = setup();
        let targets: Vec<usize> = (6..12).collect();
        let sample: Vec<usize> = (0..6).collect();
        let policy = Policy::new(Rule::Random).seed(11).subsample(3);
        let inputs = ScoringInputs::new(prior.prior_covariance());
        let cfg = LoopConfig {
            rounds: 4,
            ..Default::default()
        };
        let run = || {
            let mut o = LabeledOracle::new(truth.clone(), prior.noise().clone(), 2);
            run_loop(&prior, &targets, &sample, &policy, &inputs, &mut o, &cfg).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_small_candidate_set() {
        let (prior, truth) = setup();
        let policy = Policy::new(Rule::Itl).batch_size(3);
        let inputs = ScoringInputs::new(prior.prior_covariance());
        let mut o = LabeledOracle::new(truth, prior.noise().clone(), 2);
        let cfg = LoopConfig {
            rounds: 1,
            candidate_size: Some(2),
            ..Default::default()
        };
        assert!(run_loop(&prior, &[0], &[1, 2, 3], &policy, &inputs, &mut o, &cfg).is_err());
    }
}
