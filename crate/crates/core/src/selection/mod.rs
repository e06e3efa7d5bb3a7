//! Decision rules and batch construction.
//!
//! A batch is built either greedily with conditional embeddings (BaCE): after
//! each pick the working covariance is conditioned on a noisy observation of
//! the picked point and all candidates are re-scored; or by scoring once and
//! taking the `b` best (top-b). Ties always go to the lowest domain index.

mod run;
mod scores;

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{for_each_selection, ConditionalGram, PosteriorState};

pub use run::{run_loop, LoopConfig};
pub use scores::{score_baseline, score_ctl, score_itl, ScoringInputs, SoftmaxTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Rule {
    Itl,
    Ctl,
    UncertaintySampling,
    UndirectedItl,
    MaxDist,
    KMeansPP,
    CosineSimilarity,
    InformationDensity { beta: f64 },
    MaxEntropy,
    MaxMargin,
    LeastConfidence,
    Random,
}

impl Rule {
    /// Whether the rule reads the (batch-)conditional covariance.
    pub fn uses_posterior(&self) -> bool {
        matches!(
            self,
            Rule::Itl | Rule::Ctl | Rule::UncertaintySampling | Rule::UndirectedItl
        )
    }

    pub fn needs_softmax(&self) -> bool {
        matches!(
            self,
            Rule::InformationDensity { .. } | Rule::MaxEntropy | Rule::MaxMargin | Rule::LeastConfidence
        )
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Rule::Itl => "itl",
            Rule::Ctl => "ctl",
            Rule::UncertaintySampling => "uncertainty_sampling",
            Rule::UndirectedItl => "undirected_itl",
            Rule::MaxDist => "max_dist",
            Rule::KMeansPP => "kmeans_pp",
            Rule::CosineSimilarity => "cosine_similarity",
            Rule::InformationDensity { beta } if *beta == 1.0 => "information_density",
            Rule::InformationDensity { beta } => {
                return write!(f, "information_density:{beta}");
            }
            Rule::MaxEntropy => "max_entropy",
            Rule::MaxMargin => "max_margin",
            Rule::LeastConfidence => "least_confidence",
            Rule::Random => "random",
        };
        f.write_str(name)
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(beta) = lower.strip_prefix("information_density:") {
            let beta: f64 = beta
                .parse()
                .map_err(|_| Error::input(format!("bad information_density beta `{beta}`")))?;
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::input("information_density beta must be positive"));
            }
            return Ok(Rule::InformationDensity { beta });
        }
        Ok(match lower.as_str() {
            "itl" => Rule::Itl,
            "ctl" => Rule::Ctl,
            "uncertainty_sampling" | "unsa" => Rule::UncertaintySampling,
            "undirected_itl" | "maxdet" => Rule::UndirectedItl,
            "max_dist" => Rule::MaxDist,
            "kmeans_pp" | "k-means++" => Rule::KMeansPP,
            "cosine_similarity" => Rule::CosineSimilarity,
            "information_density" => Rule::InformationDensity { beta: 1.0 },
            "max_entropy" => Rule::MaxEntropy,
            "max_margin" => Rule::MaxMargin,
            "least_confidence" => Rule::LeastConfidence,
            "random" => Rule::Random,
            other => return Err(Error::input(format!("unknown decision rule `{other}`"))),
        })
    }
}

impl TryFrom<String> for Rule {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Rule> for String {
    fn from(r: Rule) -> String {
        r.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Bace,
    #[serde(alias = "topb")]
    TopB,
}

impl fmt::Display for BatchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BatchMode::Bace => "bace",
            BatchMode::TopB => "topb",
        })
    }
}

impl FromStr for BatchMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bace" => Ok(BatchMode::Bace),
            "topb" | "top_b" => Ok(BatchMode::TopB),
            other => Err(Error::input(format!("unknown batch mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub rule: Rule,
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    /// Size `m` of the target subsample drawn each round, if any.
    pub target_subsample: Option<usize>,
    pub seed: u64,
    /// Score ITL as `I(y_A; y_x)`, adding the target noise to the target
    /// block before inversion.
    pub noisy_targets: bool,
    /// Allow the same point to appear more than once in a batch.
    pub multiset: bool,
}

impl Policy {
    pub fn new(rule: Rule) -> Self {
        Policy {
            rule,
            batch_size: 1,
            batch_mode: BatchMode::Bace,
            target_subsample: None,
            seed: 0,
            noisy_targets: true,
            multiset: false,
        }
    }

    pub fn batch_size(mut self, b: usize) -> Self {
        self.batch_size = b;
        self
    }

    pub fn mode(mut self, mode: BatchMode) -> Self {
        self.batch_mode = mode;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn exact_targets(mut self) -> Self {
        self.noisy_targets = false;
        self
    }

    pub fn subsample(mut self, m: usize) -> Self {
        self.target_subsample = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::input("batch size must be at least 1"));
        }
        if let Rule::InformationDensity { beta } = self.rule {
            if !(beta > 0.0) {
                return Err(Error::input("information_density beta must be positive"));
            }
        }
        if self.target_subsample == Some(0) {
            return Err(Error::input("target subsample size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResult {
    /// Chosen domain indices in selection order.
    pub indices: Vec<usize>,
    /// Score of each pick at the step it was made.
    pub objectives: Vec<f64>,
    /// Number of observations in the posterior the batch was scored against.
    pub snapshot: usize,
}

fn sorted_unique(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Selects a batch of `policy.batch_size` points from `sample` for the
/// targets. Randomized rules draw from a stream determined by
/// `(policy.seed, state.round())`, so repeated calls agree.
pub fn select_batch(
    state: &PosteriorState,
    targets: &[usize],
    sample: &[usize],
    policy: &Policy,
    inputs: &ScoringInputs<'_>,
) -> Result<BatchResult> {
    policy.validate()?;
    let candidates = sorted_unique(sample);
    let targets = sorted_unique(targets);
    let b = policy.batch_size;
    if candidates.is_empty() {
        return Err(Error::input("sample space is empty"));
    }
    if b > candidates.len() {
        return Err(Error::input(format!(
            "batch size {b} exceeds |S| = {}",
            candidates.len()
        )));
    }
    if let Some(&bad) = candidates.iter().chain(&targets).find(|&&i| i >= state.len()) {
        return Err(Error::input(format!(
            "index {bad} outside domain of size {}",
            state.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    rng.set_stream(state.round() as u64);

    let mut selected: Vec<usize> = state.history().iter().map(|o| o.index).collect();
    let mut chosen = Vec::with_capacity(b);
    let mut objectives = Vec::with_capacity(b);

    match &policy.rule {
        Rule::Random => {
            for i in sample_indices(&mut rng, candidates.len(), b).into_vec() {
                chosen.push(candidates[i]);
                objectives.push(0.0);
            }
        }
        Rule::KMeansPP => {
            for _ in 0..b {
                let weights = scores::score_candidates(
                    &policy.rule,
                    state.gram(),
                    inputs,
                    &targets,
                    &selected,
                    &candidates,
                    false,
                )?;
                let open: Vec<usize> = (0..candidates.len())
                    .filter(|&i| policy.multiset || !chosen.contains(&candidates[i]))
                    .collect();
                let total: f64 = open.iter().map(|&i| weights[i]).sum();
                let pick = if selected.is_empty() || !(total > 0.0) {
                    open[rng.random_range(0..open.len())]
                } else {
                    let mut u = rng.random::<f64>() * total;
                    let mut pick = *open.last().expect("open is nonempty");
                    for &i in &open {
                        if weights[i] <= 0.0 {
                            continue;
                        }
                        if u < weights[i] {
                            pick = i;
                            break;
                        }
                        u -= weights[i];
                    }
                    pick
                };
                chosen.push(candidates[pick]);
                objectives.push(weights[pick]);
                selected.push(candidates[pick]);
            }
        }
        rule => {
            let mut union = candidates.clone();
            union.extend_from_slice(&targets);
            let mut work = state.restrict(&union)?;
            let mut scores = scores::score_candidates(
                rule,
                &work,
                inputs,
                &targets,
                &selected,
                &candidates,
                policy.noisy_targets,
            )?;
            match policy.batch_mode {
                BatchMode::TopB => {
                    let mut order: Vec<usize> =
                        (0..candidates.len()).filter(|&i| !scores[i].is_nan()).collect();
                    let tiebreak = variance_tiebreak(rule, &work, &candidates)?;
                    order.sort_by(|&i, &j| {
                        scores[j]
                            .total_cmp(&scores[i])
                            .then_with(|| tiebreak[j].total_cmp(&tiebreak[i]))
                            .then(i.cmp(&j))
                    });
                    if order.len() < b {
                        return Err(Error::numeric("too few finite candidate scores"));
                    }
                    for &i in &order[..b] {
                        chosen.push(candidates[i]);
                        objectives.push(scores[i]);
                    }
                }
                BatchMode::Bace => {
                    for step in 0..b {
                        if step > 0 {
                            scores = scores::score_candidates(
                                rule,
                                &work,
                                inputs,
                                &targets,
                                &selected,
                                &candidates,
                                policy.noisy_targets,
                            )?;
                        }
                        let tiebreak = variance_tiebreak(rule, &work, &candidates)?;
                        let mut best: Option<usize> = None;
                        for (i, &s) in scores.iter().enumerate() {
                            if s.is_nan() || (!policy.multiset && chosen.contains(&candidates[i])) {
                                continue;
                            }
                            let better = best.is_none_or(|j| {
                                s > scores[j] || (s == scores[j] && tiebreak[i] > tiebreak[j])
                            });
                            if better {
                                best = Some(i);
                            }
                        }
                        let i = best.ok_or_else(|| Error::numeric("no finite candidate score"))?;
                        let x = candidates[i];
                        chosen.push(x);
                        objectives.push(scores[i]);
                        selected.push(x);
                        if step + 1 < b {
                            work.condition_on_noisy(x)?;
                        }
                    }
                }
            }
        }
    }

    Ok(BatchResult {
        indices: chosen,
        objectives,
        snapshot: state.round(),
    })
}

/// Secondary ranking key for candidates whose scores are equal in floating
/// point. In-target information gains increase with the candidate's
/// posterior variance, so it separates gains that rounding has collapsed;
/// other rules fall through to the lowest index.
fn variance_tiebreak(rule: &Rule, work: &ConditionalGram, candidates: &[usize]) -> Result<Vec<f64>> {
    match rule {
        Rule::Itl | Rule::UndirectedItl => candidates.iter().map(|&c| work.variance(c)).collect(),
        _ => Ok(vec![0.0; candidates.len()]),
    }
}

/// Largest number of subsets [`brute_force_batch`] will enumerate.
pub const BRUTE_FORCE_BATCH_LIMIT: u128 = 100_000;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exact maximizer of `I(f_A; y_B | Dₙ)` over all size-`b` subsets of the
/// sample space. Objectives are the marginal gains along the (sorted) batch.
pub fn brute_force_batch(
    state: &PosteriorState,
    targets: &[usize],
    sample: &[usize],
    b: usize,
) -> Result<BatchResult> {
    let candidates = sorted_unique(sample);
    let targets = sorted_unique(targets);
    if b == 0 || b > candidates.len() {
        return Err(Error::input(format!(
            "batch size {b} must lie in 1..={}",
            candidates.len()
        )));
    }
    let count = binomial(candidates.len(), b);
    if count > BRUTE_FORCE_BATCH_LIMIT {
        return Err(Error::input(format!(
            "C({}, {b}) = {count} subsets exceeds the limit of {BRUTE_FORCE_BATCH_LIMIT}",
            candidates.len()
        )));
    }
    let mut union = candidates.clone();
    union.extend_from_slice(&targets);
    let work = state.restrict(&union)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    for_each_selection(candidates.len(), b, false, |sel| {
        let xs: Vec<usize> = sel.iter().map(|&i| candidates[i]).collect();
        let v = work.set_information_gain(&targets, &xs, false)?;
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, xs));
        }
        Ok(())
    })?;
    let (_, indices) = best.expect("at least one subset");
    let mut objectives = Vec::with_capacity(b);
    let mut prev = 0.0;
    for i in 1..=b {
        let v = work.set_information_gain(&targets, &indices[..i], false)?;
        objectives.push(v - prev);
        prev = v;
    }
    Ok(BatchResult {
        indices,
        objectives,
        snapshot: state.round(),
    })
}

/// Draws `m` targets uniformly without replacement; returned sorted.
pub fn subsample_targets<R: Rng + ?Sized>(
    targets: &[usize],
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::input("target subsample size must be at least 1"));
    }
    if m > targets.len() {
        return Err(Error::input(format!(
            "cannot draw {m} targets without replacement from {}",
            targets.len()
        )));
    }
    let mut out: Vec<usize> = sample_indices(rng, targets.len(), m)
        .into_iter()
        .map(|i| targets[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelMatrix, NoiseModel};
    use nalgebra::DMatrix;

    fn identity_state(n: usize, noise: f64) -> PosteriorState {
        PosteriorState::prior(
            &KernelMatrix::from_matrix(DMatrix::identity(n, n)).unwrap(),
            NoiseModel::homoscedastic(noise).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn rule_names_round_trip() {
        for name in [
            "itl",
            "ctl",
            "uncertainty_sampling",
            "undirected_itl",
            "max_dist",
            "kmeans_pp",
            "cosine_similarity",
            "information_density",
            "information_density:0.5",
            "max_entropy",
            "max_margin",
            "least_confidence",
            "random",
        ] {
            let r: Rule = name.parse().unwrap();
            assert_eq!(r.to_string(), name);
        }
        assert!("information_density:-1".parse::<Rule>().is_err());
        assert!("nope".parse::<Rule>().is_err());
    }

    #[test]
    fn identity_itl_picks_lowest_indices() {
        let s = identity_state(6, 1.0);
        let all: Vec<usize> = (0..6).collect();
        let k = s.prior_covariance().clone();
        let inputs = ScoringInputs::new(&k);
        let p = Policy::new(Rule::Itl).batch_size(3).exact_targets();
        let r = select_batch(&s, &all, &all, &p, &inputs).unwrap();
        assert_eq!(r.indices, vec![0, 1, 2]);
        let half_ln2 = 0.5 * 2f64.ln();
        for v in r.objectives {
            assert!((v - half_ln2).abs() < 1e-9, "{v} vs {half_ln2}");
        }
    }

    #[test]
    fn batch_of_one_agrees_across_modes() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.8, 0.3, 1.0, 0.1, 0.8, 0.1, 1.0]);
        let s = PosteriorState::prior(
            &KernelMatrix::from_matrix(k.clone()).unwrap(),
            NoiseModel::homoscedastic(0.2).unwrap(),
        )
        .unwrap();
        let inputs = ScoringInputs::new(&k);
        for rule in [Rule::Itl, Rule::Ctl, Rule::UncertaintySampling, Rule::CosineSimilarity] {
            let a = select_batch(&s, &[2], &[0, 1], &Policy::new(rule.clone()), &inputs).unwrap();
            let b = select_batch(
                &s,
                &[2],
                &[0, 1],
                &Policy::new(rule).mode(BatchMode::TopB),
                &inputs,
            )
            .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn batch_larger_than_sample_is_rejected() {
        let s = identity_state(3, 1.0);
        let k = s.prior_covariance().clone();
        let err = select_batch(
            &s,
            &[0],
            &[0, 1],
            &Policy::new(Rule::Itl).batch_size(3),
            &ScoringInputs::new(&k),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn bace_diversifies_duplicates() {
        // points 0 and 1 are identical, 2 is independent; target is everything
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let s = PosteriorState::prior(
            &KernelMatrix::from_matrix(k.clone()).unwrap(),
            NoiseModel::homoscedastic(0.1).unwrap(),
        )
        .unwrap();
        let inputs = ScoringInputs::new(&k);
        let p = Policy::new(Rule::UncertaintySampling).batch_size(2);
        let bace = select_batch(&s, &[0, 1, 2], &[0, 1, 2], &p, &inputs).unwrap();
        assert_eq!(bace.indices, vec![0, 2]);
        let topb = select_batch(&s, &[0, 1, 2], &[0, 1, 2], &p.mode(BatchMode::TopB), &inputs)
            .unwrap();
        assert_eq!(topb.indices, vec![0, 1]);
    }

    #[test]
    fn random_and_kmeans_are_deterministic() {
        let s = identity_state(20, 1.0);
        let k = s.prior_covariance().clone();
        let inputs = ScoringInputs::new(&k);
        let all: Vec<usize> = (0..20).collect();
        for rule in [Rule::Random, Rule::KMeansPP, Rule::MaxDist] {
            let p = Policy::new(rule).batch_size(5).seed(7);
            let a = select_batch(&s, &all, &all, &p, &inputs).unwrap();
            let b = select_batch(&s, &all, &all, &p, &inputs).unwrap();
            assert_eq!(a, b);
            let mut d = a.indices.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 5);
        }
    }

    #[test]
    fn brute_force_extremes() {
        let k = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.8, 0.3, 1.0, 0.1, 0.8, 0.1, 1.0]);
        let s = PosteriorState::prior(
            &KernelMatrix::from_matrix(k.clone()).unwrap(),
            NoiseModel::homoscedastic(0.2).unwrap(),
        )
        .unwrap();
        let one = brute_force_batch(&s, &[2], &[0, 1], 1).unwrap();
        let itl = select_batch(
            &s,
            &[2],
            &[0, 1],
            &Policy::new(Rule::Itl).exact_targets(),
            &ScoringInputs::new(&k),
        )
        .unwrap();
        assert_eq!(one.indices, itl.indices);
        let all = brute_force_batch(&s, &[2], &[0, 1], 2).unwrap();
        assert_eq!(all.indices, vec![0, 1]);
    }

    #[test]
    fn brute_force_limit() {
        let s = identity_state(40, 1.0);
        let all: Vec<usize> = (0..40).collect();
        assert!(brute_force_batch(&s, &[0], &all, 20).is_err());
    }

    #[test]
    fn subsample_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(subsample_targets(&[4, 2, 9], 3, &mut rng).unwrap(), vec![2, 4, 9]);
        assert_eq!(subsample_targets(&[5], 1, &mut rng).unwrap(), vec![5]);
        assert!(subsample_targets(&[1, 2], 3, &mut rng).is_err());
        assert!(subsample_targets(&[1, 2], 0, &mut rng).is_err());
    }
}
