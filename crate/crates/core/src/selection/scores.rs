//! Per-candidate scores for every decision rule. Higher is better for all of
//! them; rules that minimize a quantity return its negation.

use nalgebra::DMatrix;

use super::Rule;
use crate::error::{Error, Result};
use crate::gp::{ConditionalGram, IgMethod, IgQuery, PosteriorState};

/// Per-candidate class probabilities of a classifier, indexed by domain
/// position.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxTable {
    rows: Vec<Vec<f64>>,
}

impl SoftmaxTable {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::input(format!("softmax row {i} is empty")));
            }
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::input(format!(
                    "softmax row {i} has a negative or non-finite probability"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::input(format!("softmax row {i} sums to {sum}, not 1")));
            }
        }
        Ok(SoftmaxTable { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> Result<&[f64]> {
        self.rows
            .get(i)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::input(format!("no softmax row for index {i}")))
    }

    /// Shannon entropy (nats) of row `i`.
    pub fn entropy(&self, i: usize) -> Result<f64> {
        Ok(self
            .row(i)?
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum())
    }

    /// Largest and second-largest probabilities of row `i`.
    pub fn top_two(&self, i: usize) -> Result<(f64, f64)> {
        let mut first = f64::NEG_INFINITY;
        let mut second = 0.0;
        for &p in self.row(i)? {
            if p > first {
                second = first.max(0.0);
                first = p;
            } else if p > second {
                second = p;
            }
        }
        Ok((first, second))
    }
}

/// Inputs that do not change while a batch is built.
#[derive(Debug, Clone, Copy)]
pub struct ScoringInputs<'a> {
    /// Prior Gram over the whole domain; static rules read distances and
    /// cosine similarities from it.
    pub prior: &'a DMatrix<f64>,
    pub softmax: Option<&'a SoftmaxTable>,
}

impl<'a> ScoringInputs<'a> {
    pub fn new(prior: &'a DMatrix<f64>) -> Self {
        ScoringInputs {
            prior,
            softmax: None,
        }
    }

    pub fn with_softmax(mut self, table: &'a SoftmaxTable) -> Self {
        self.softmax = Some(table);
        self
    }

    fn softmax(&self, rule: &Rule) -> Result<&'a SoftmaxTable> {
        self.softmax
            .ok_or_else(|| Error::input(format!("rule {rule} requires a softmax table")))
    }

    /// Squared kernel distance `k(x,x) + k(y,y) − 2k(x,y)` under the prior.
    pub fn sq_kernel_distance(&self, x: usize, y: usize) -> f64 {
        let k = self.prior;
        (k[(x, x)] + k[(y, y)] - 2.0 * k[(x, y)]).max(0.0)
    }

    /// Prior correlation `k(x,y)/√(k(x,x)k(y,y))`; the cosine similarity of
    /// the embeddings for an embedding kernel with identity latent covariance.
    pub fn prior_correlation(&self, x: usize, y: usize) -> f64 {
        let k = self.prior;
        let d = (k[(x, x)].max(crate::linalg::VARIANCE_FLOOR)
            * k[(y, y)].max(crate::linalg::VARIANCE_FLOOR))
        .sqrt();
        k[(x, y)] / d
    }

    /// Mean prior correlation of `x` with the targets.
    pub fn mean_cosine(&self, x: usize, targets: &[usize]) -> f64 {
        targets.iter().map(|&a| self.prior_correlation(x, a)).sum::<f64>() / targets.len() as f64
    }
}

/// ITL score `I(f_A; y_x | Dₙ)` (backward method).
pub fn score_itl(state: &PosteriorState, targets: &[usize], x: usize) -> Result<f64> {
    state.information_gain(&IgQuery::new(targets.to_vec(), x, IgMethod::Backward))
}

/// CTL score `Σ_{a ∈ A} Cor(f_x, f_a | Dₙ)`. A candidate with no remaining
/// variance scores 0.
pub fn score_ctl(state: &PosteriorState, targets: &[usize], x: usize) -> Result<f64> {
    ctl_on(state.gram(), targets, x)
}

pub(crate) fn ctl_on(gram: &ConditionalGram, targets: &[usize], x: usize) -> Result<f64> {
    if gram.variance(x)? <= crate::linalg::VARIANCE_FLOOR {
        return Ok(0.0);
    }
    targets.iter().map(|&a| gram.correlation(x, a)).sum()
}

/// Score of a non-ITL/CTL rule for candidate `x`. `selected` lists the points
/// chosen so far (history and current batch) for the distance-based rules.
pub fn score_baseline(
    rule: &Rule,
    state: &PosteriorState,
    inputs: &ScoringInputs<'_>,
    targets: &[usize],
    selected: &[usize],
    x: usize,
) -> Result<f64> {
    let mut scores = score_candidates(rule, state.gram(), inputs, targets, selected, &[x], false)?;
    Ok(scores.pop().expect("one candidate"))
}

/// Scores every candidate against a (possibly batch-conditioned) covariance.
pub(crate) fn score_candidates(
    rule: &Rule,
    gram: &ConditionalGram,
    inputs: &ScoringInputs<'_>,
    targets: &[usize],
    selected: &[usize],
    candidates: &[usize],
    noisy_targets: bool,
) -> Result<Vec<f64>> {
    let needs_targets = matches!(
        rule,
        Rule::Itl | Rule::Ctl | Rule::CosineSimilarity | Rule::InformationDensity { .. }
    );
    if needs_targets && targets.is_empty() {
        return Err(Error::input(format!("rule {rule} requires a nonempty target set")));
    }
    match rule {
        Rule::Itl => gram.information_gains(targets, candidates, noisy_targets),
        Rule::Ctl => candidates.iter().map(|&x| ctl_on(gram, targets, x)).collect(),
        Rule::UncertaintySampling => candidates.iter().map(|&x| gram.variance(x)).collect(),
        Rule::UndirectedItl => candidates
            .iter()
            .map(|&x| Ok(0.5 * (1.0 + gram.variance(x)? / gram.noise(x)?).ln()))
            .collect(),
        Rule::MaxDist => Ok(candidates
            .iter()
            .map(|&x| {
                selected
                    .iter()
                    .map(|&s| inputs.sq_kernel_distance(x, s).sqrt())
                    .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
                    .unwrap_or(0.0)
            })
            .collect()),
        Rule::KMeansPP => Ok(candidates
            .iter()
            .map(|&x| {
                selected
                    .iter()
                    .map(|&s| inputs.sq_kernel_distance(x, s))
                    .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))))
                    .unwrap_or(0.0)
            })
            .collect()),
        Rule::CosineSimilarity => Ok(candidates
            .iter()
            .map(|&x| inputs.mean_cosine(x, targets))
            .collect()),
        Rule::InformationDensity { beta } => {
            let table = inputs.softmax(rule)?;
            candidates
                .iter()
                .map(|&x| Ok(table.entropy(x)? * inputs.mean_cosine(x, targets).max(0.0).powf(*beta)))
                .collect()
        }
        Rule::MaxEntropy => {
            let table = inputs.softmax(rule)?;
            candidates.iter().map(|&x| table.entropy(x)).collect()
        }
        Rule::MaxMargin => {
            let table = inputs.softmax(rule)?;
            candidates
                .iter()
                .map(|&x| table.top_two(x).map(|(p1, p2)| -(p1 - p2)))
                .collect()
        }
        Rule::LeastConfidence => {
            let table = inputs.softmax(rule)?;
            candidates
                .iter()
                .map(|&x| table.top_two(x).map(|(p1, _)| -p1))
                .collect()
        }
        Rule::Random => Ok(vec![0.0; candidates.len()]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, KernelMatrix, KernelSpec, NoiseModel, Point};

    fn state(k: DMatrix<f64>, noise: f64) -> PosteriorState {
        PosteriorState::prior(
            &KernelMatrix::from_matrix(k).unwrap(),
            NoiseModel::homoscedastic(noise).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn itl_two_point() {
        let s = state(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 0.1);
        let v = score_itl(&s, &[1], 0).unwrap();
        assert!((v - 0.5 * (1.1f64 / 0.85).ln()).abs() < 1e-9);
    }

    #[test]
    fn ctl_self_and_blocks() {
        let k = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.6, 0.0, 0.6, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let s = state(k, 0.1);
        assert!((score_ctl(&s, &[0], 0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(score_ctl(&s, &[0, 1], 2).unwrap(), 0.0);
    }

    #[test]
    fn ctl_matches_cosine_for_single_target() {
        let pts = vec![
            Point::with_embedding(0, vec![1.0, 2.0, 0.5]),
            Point::with_embedding(1, vec![0.3, 1.0, 2.0]),
        ];
        let k = gram(&KernelSpec::embedding_identity(), &pts).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        let cos = crate::kernel::cosine_similarity(&pts[0], &pts[1]).unwrap();
        assert!((score_ctl(&s, &[1], 0).unwrap() - cos).abs() < 1e-12);
    }

    #[test]
    fn ctl_zero_variance_candidate() {
        let mut s = state(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]), 1e-300);
        // drive variance at 0 to (numerically) zero
        s.condition(s.observation(0, 0.0).unwrap()).unwrap();
        assert_eq!(score_ctl(&s, &[1], 0).unwrap(), 0.0);
    }

    #[test]
    fn softmax_rules() {
        let uniform = vec![0.1; 10];
        let mut margin = vec![0.0; 10];
        margin[0] = 0.5;
        margin[1] = 0.5;
        let t = SoftmaxTable::new(vec![uniform, margin]).unwrap();
        assert!((t.entropy(0).unwrap() - 10f64.ln()).abs() < 1e-12);
        let (p1, p2) = t.top_two(1).unwrap();
        assert_eq!(p1 - p2, 0.0);

        let k = DMatrix::identity(2, 2);
        let s = state(k.clone(), 0.1);
        let inputs = ScoringInputs::new(&k).with_softmax(&t);
        let me = score_baseline(&Rule::MaxEntropy, &s, &inputs, &[], &[], 0).unwrap();
        assert!((me - 2.302585).abs() < 1e-6);
        let mm = score_baseline(&Rule::MaxMargin, &s, &inputs, &[], &[], 1).unwrap();
        assert_eq!(mm, 0.0);
        let lc = score_baseline(&Rule::LeastConfidence, &s, &inputs, &[], &[], 0).unwrap();
        assert!((lc + 0.1).abs() < 1e-12);
    }

    #[test]
    fn softmax_missing_is_input_error() {
        let k = DMatrix::identity(2, 2);
        let s = state(k.clone(), 0.1);
        let inputs = ScoringInputs::new(&k);
        let err = score_baseline(&Rule::MaxEntropy, &s, &inputs, &[], &[], 0).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn softmax_validation() {
        assert!(SoftmaxTable::new(vec![vec![0.5, 0.4]]).is_err());
        assert!(SoftmaxTable::new(vec![vec![1.5, -0.5]]).is_err());
    }

    #[test]
    fn max_dist_identity_gram() {
        let k = DMatrix::identity(4, 4);
        let s = state(k.clone(), 0.1);
        let inputs = ScoringInputs::new(&k);
        for x in 1..4 {
            let d = score_baseline(&Rule::MaxDist, &s, &inputs, &[], &[0], x).unwrap();
            assert!((d - 2f64.sqrt()).abs() < 1e-12);
        }
        let d0 = score_baseline(&Rule::MaxDist, &s, &inputs, &[], &[0], 0).unwrap();
        assert_eq!(d0, 0.0);
    }

    #[test]
    fn undirected_and_uncertainty() {
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 1.0]));
        let s = state(k.clone(), 0.5);
        let inputs = ScoringInputs::new(&k);
        let us = score_baseline(&Rule::UncertaintySampling, &s, &inputs, &[], &[], 0).unwrap();
        assert_eq!(us, 2.0);
        let ui = score_baseline(&Rule::UndirectedItl, &s, &inputs, &[], &[], 0).unwrap();
        assert!((ui - 0.5 * 5f64.ln()).abs() < 1e-12);
    }
}
