//! Quantities from the convergence analysis of ITL and empirical checkers for
//! the bounds relating them.
//!
//! All checkers take an [`ItlTrajectory`], a run of exact single-point ITL
//! from some starting state. Posterior variances do not depend on observed
//! values, so trajectories are simulated without labels.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{
    for_each_selection, greedy_capacity_profile, CapacityMode, ConditionalGram, PosteriorState,
    BRUTE_FORCE_MAX_BUDGET, BRUTE_FORCE_MAX_POINTS,
};
use crate::linalg::{argmax_first, cholesky_jittered, min_eigenvalue, submatrix};
use crate::selection::{select_batch, Policy, Rule, ScoringInputs};

/// Largest Markov boundary size the size condition may call for.
pub const MARKOV_SIZE_CAP: usize = 100_000_000;

/// Sizes up to which the greedy capacity estimate refines the spectral one.
pub const GREEDY_SIZE_HORIZON: usize = 4096;

/// Most observations [`markov_boundary`] adds before giving up.
pub const MARKOV_MAX_STEPS: usize = 10_000;

/// Relative slack granted to every checked inequality for round-off.
pub const BOUND_TOLERANCE: f64 = 1e-9;

/// Largest instance accepted by [`submodularity_ratio`].
pub const RATIO_MAX_POINTS: usize = 10;
pub const RATIO_MAX_CARDINALITY: usize = 4;

const GREEDY_FACTOR: f64 = 1.0 - 1.0 / std::f64::consts::E;

fn sorted_unique(xs: &[usize]) -> Vec<usize> {
    let mut v = xs.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

fn check_domain(state: &PosteriorState, ids: &[usize], what: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::input(format!("{what} is empty")));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i >= state.len()) {
        return Err(Error::input(format!(
            "{what} index {bad} outside domain of size {}",
            state.len()
        )));
    }
    Ok(())
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|x| big.binary_search(x).is_ok())
}

/// Prior scale constants entering the bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// `σ²`: largest prior variance over the domain.
    pub max_variance: f64,
    /// `σ̃²`: largest prior variance plus noise over the domain.
    pub max_predictive_variance: f64,
    /// Smallest eigenvalue of the prior covariance over the sample space,
    /// without jitter.
    pub lambda_min: f64,
    pub sample_size: usize,
}

impl TheoryConstants {
    pub fn from_prior(state: &PosteriorState, sample: &[usize]) -> Result<Self> {
        let sample = sorted_unique(sample);
        check_domain(state, &sample, "sample space")?;
        let prior = state.prior_covariance();
        let mut max_variance = 0.0f64;
        let mut max_predictive_variance = 0.0f64;
        for i in 0..state.len() {
            max_variance = max_variance.max(prior[(i, i)]);
            max_predictive_variance = max_predictive_variance.max(prior[(i, i)] + state.noise_var(i));
        }
        if !(max_variance > 0.0) {
            return Err(Error::Degenerate("prior variance is zero everywhere".into()));
        }
        Ok(TheoryConstants {
            max_variance,
            max_predictive_variance,
            lambda_min: min_eigenvalue(&submatrix(prior, &sample, &sample)),
            sample_size: sample.len(),
        })
    }

    /// Right side of the Markov boundary size condition,
    /// `ε λ²_min / (2 |S|² σ⁴ σ̃²)`.
    pub fn size_threshold(&self, epsilon: f64) -> f64 {
        let s = self.sample_size as f64;
        epsilon * self.lambda_min.max(0.0).powi(2)
            / (2.0 * s * s * self.max_variance.powi(2) * self.max_predictive_variance)
    }

    /// `c = 2 |S|² σ⁴ σ̃² / λ²_min` from the convergence schedule.
    pub fn schedule_constant(&self) -> f64 {
        let s = self.sample_size as f64;
        2.0 * s * s * self.max_variance.powi(2) * self.max_predictive_variance
            / self.lambda_min.powi(2)
    }
}

/// `η²_S(x) = Var[f_x | f_S]` under the prior, for each of `xs`.
pub fn irreducible_uncertainties(
    prior: &DMatrix<f64>,
    sample: &[usize],
    xs: &[usize],
) -> Result<Vec<f64>> {
    let sample = sorted_unique(sample);
    let n = prior.nrows();
    if let Some(&bad) = sample.iter().chain(xs).find(|&&i| i >= n) {
        return Err(Error::input(format!("index {bad} outside domain of size {n}")));
    }
    if sample.is_empty() {
        return Ok(xs.iter().map(|&x| prior[(x, x)].max(0.0)).collect());
    }
    let chol = cholesky_jittered(&submatrix(prior, &sample, &sample))?;
    Ok(xs
        .iter()
        .map(|&x| {
            if sample.binary_search(&x).is_ok() {
                return 0.0;
            }
            let k = DVector::from_iterator(sample.len(), sample.iter().map(|&s| prior[(s, x)]));
            (prior[(x, x)] - k.dot(&chol.solve(&k))).max(0.0)
        })
        .collect())
}

pub fn irreducible_uncertainty(prior: &DMatrix<f64>, sample: &[usize], x: usize) -> Result<f64> {
    Ok(irreducible_uncertainties(prior, sample, &[x])?[0])
}

/// `Γₙ = max_{x ∈ S} I(f_A; y_x | Dₙ)`.
pub fn step_uncertainty(state: &PosteriorState, targets: &[usize], sample: &[usize]) -> Result<f64> {
    let gains = exact_gains(state.gram(), &sorted_unique(targets), &sorted_unique(sample))?;
    Ok(gains.into_iter().fold(0.0, f64::max))
}

fn exact_gains(gram: &ConditionalGram, targets: &[usize], sample: &[usize]) -> Result<Vec<f64>> {
    gram.information_gains(targets, sample, false)
}

/// A run of exact single-point ITL.
#[derive(Debug, Clone)]
pub struct ItlTrajectory {
    pub start: PosteriorState,
    pub targets: Vec<usize>,
    pub sample: Vec<usize>,
    pub chosen: Vec<usize>,
    /// `Γ₀, …, Γ_N`.
    pub step_uncertainty: Vec<f64>,
    /// Marginal variances over the targets at rounds `0, …, N`.
    pub target_variances: Vec<Vec<f64>>,
}

impl ItlTrajectory {
    pub fn rounds(&self) -> usize {
        self.chosen.len()
    }

    pub fn sample_within_targets(&self) -> bool {
        is_subset(&self.sample, &self.targets)
    }
}

pub fn itl_trajectory(
    start: &PosteriorState,
    targets: &[usize],
    sample: &[usize],
    rounds: usize,
) -> Result<ItlTrajectory> {
    let targets = sorted_unique(targets);
    let sample = sorted_unique(sample);
    check_domain(start, &targets, "target space")?;
    check_domain(start, &sample, "sample space")?;
    let mut union = sample.clone();
    union.extend_from_slice(&targets);
    let mut work = start.restrict(&union)?;
    let variances = |g: &ConditionalGram| -> Result<Vec<f64>> {
        targets.iter().map(|&a| g.variance(a)).collect()
    };
    let mut chosen = Vec::with_capacity(rounds);
    let mut gammas = Vec::with_capacity(rounds + 1);
    let mut target_variances = Vec::with_capacity(rounds + 1);
    for round in 0..=rounds {
        let gains = exact_gains(&work, &targets, &sample)?;
        let best = argmax_first(gains.iter().copied())
            .ok_or_else(|| Error::numeric("no finite ITL score"))?;
        gammas.push(gains[best]);
        target_variances.push(variances(&work)?);
        if round < rounds {
            work.condition_on_noisy(sample[best])?;
            chosen.push(sample[best]);
        }
    }
    Ok(ItlTrajectory {
        start: start.clone(),
        targets,
        sample,
        chosen,
        step_uncertainty: gammas,
        target_variances,
    })
}

/// `γ_1, …, γ_N` over multisets of the sample space at a fixed state, exact
/// where enumeration is feasible and greedy (a lower bound) elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitySeries {
    pub values: Vec<f64>,
    pub exact: Vec<bool>,
}

impl CapacitySeries {
    /// `γₙ` for `n ≥ 1`.
    pub fn get(&self, n: usize) -> Option<(f64, bool)> {
        let i = n.checked_sub(1)?;
        Some((*self.values.get(i)?, self.exact[i]))
    }
}

pub fn capacity_series(state: &PosteriorState, sample: &[usize], n_max: usize) -> Result<CapacitySeries> {
    let sample = sorted_unique(sample);
    check_domain(state, &sample, "sample space")?;
    let sub = state.restrict(&sample)?;
    let greedy = greedy_capacity_profile(&sub, &sample, n_max, true)?;
    let mut values = Vec::with_capacity(n_max);
    let mut exact = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        if sample.len() <= BRUTE_FORCE_MAX_POINTS && n <= BRUTE_FORCE_MAX_BUDGET {
            values.push(state.information_capacity(&sample, n, CapacityMode::BruteForce, true)?);
            exact.push(true);
        } else {
            values.push(greedy[n - 1]);
            exact.push(false);
        }
    }
    Ok(CapacitySeries { values, exact })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    /// Only estimated rows were violated; nothing exact failed.
    Warn,
    Fail,
}

/// One instance `lhs ≤ rhs` of a checked inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub round: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// False when the right side rests on an estimate, so a violation only warns.
    pub exact: bool,
}

impl BoundRow {
    pub fn holds(&self) -> bool {
        self.lhs <= self.rhs + BOUND_TOLERANCE * self.rhs.abs().max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub check: String,
    pub status: CheckStatus,
    pub rows: Vec<BoundRow>,
    pub notes: Vec<String>,
}

impl BoundReport {
    fn new(check: &str, rows: Vec<BoundRow>, notes: Vec<String>) -> Self {
        let status = if rows.iter().any(|r| r.exact && !r.holds()) {
            CheckStatus::Fail
        } else if rows.iter().any(|r| !r.holds()) {
            CheckStatus::Warn
        } else {
            CheckStatus::Pass
        };
        BoundReport {
            check: check.to_string(),
            status,
            rows,
            notes,
        }
    }

    pub fn first_violation(&self) -> Option<&BoundRow> {
        self.rows.iter().find(|r| !r.holds())
    }
}

fn require_sample_within_targets(traj: &ItlTrajectory) -> Result<()> {
    if !traj.sample_within_targets() {
        return Err(Error::input(
            "this bound requires the sample space to lie within the target space",
        ));
    }
    Ok(())
}

/// `Γ_{n−1} ≤ γₙ / n` for `n = 1, …, N`.
pub fn check_gamma_bound(traj: &ItlTrajectory) -> Result<BoundReport> {
    require_sample_within_targets(traj)?;
    let caps = capacity_series(&traj.start, &traj.sample, traj.rounds())?;
    let rows = (1..=traj.rounds())
        .map(|n| {
            let (gamma, exact) = caps.get(n).expect("series covers every round");
            BoundRow {
                round: n,
                lhs: traj.step_uncertainty[n - 1],
                rhs: gamma / n as f64,
                exact,
            }
        })
        .collect();
    let mut notes = Vec::new();
    if caps.exact.iter().any(|e| !e) {
        notes.push("capacity from greedy estimate beyond brute-force limits".to_string());
    }
    Ok(BoundReport::new("gamma_bound", rows, notes))
}

/// `σₙ²(x) ≤ 2 σ̃² Γₙ` for every `x ∈ A ∩ S` and every round.
pub fn check_within_sample_bound(traj: &ItlTrajectory) -> Result<BoundReport> {
    let constants = TheoryConstants::from_prior(&traj.start, &traj.sample)?;
    let inside: Vec<usize> = traj
        .targets
        .iter()
        .enumerate()
        .filter(|(_, a)| traj.sample.binary_search(a).is_ok())
        .map(|(i, _)| i)
        .collect();
    let mut notes = Vec::new();
    if inside.is_empty() {
        notes.push("target and sample spaces are disjoint".to_string());
    }
    let rows = if inside.is_empty() {
        Vec::new()
    } else {
        traj.target_variances
            .iter()
            .zip(&traj.step_uncertainty)
            .enumerate()
            .map(|(n, (vars, gamma))| BoundRow {
                round: n,
                lhs: inside.iter().map(|&i| vars[i]).fold(0.0, f64::max),
                rhs: 2.0 * constants.max_predictive_variance * gamma,
                exact: true,
            })
            .collect()
    };
    Ok(BoundReport::new("within_sample_bound", rows, notes))
}

/// Smallest `k` meeting the Markov boundary size condition
/// `γ_k / k ≤ ε λ²_min / (2 |S|² σ⁴ σ̃²)`, or `None` beyond `cap`.
///
/// `γ_k` is replaced by an upper bound, the smaller of the greedy value over
/// `1 − 1/e` and `½ Σᵢ log(1 + k λᵢ / ρ²_min)`, so the returned `k` is at least
/// the exact one and the condition still holds at it.
pub fn markov_size_bound(
    state: &PosteriorState,
    sample: &[usize],
    epsilon: f64,
    cap: usize,
) -> Result<Option<usize>> {
    if !(epsilon > 0.0) {
        return Err(Error::input("epsilon must be positive"));
    }
    let sample = sorted_unique(sample);
    let constants = TheoryConstants::from_prior(state, &sample)?;
    let threshold = constants.size_threshold(epsilon);
    if !(threshold > 0.0) {
        return Ok(None);
    }
    let prior = state.prior_covariance();
    let block = submatrix(prior, &sample, &sample);
    let eigen = SymmetricEigen::new(block).eigenvalues;
    let min_noise = sample
        .iter()
        .map(|&s| state.noise_var(s))
        .fold(f64::INFINITY, f64::min);
    let spectral = |k: usize| -> f64 {
        eigen
            .iter()
            .map(|&l| 0.5 * (k as f64 * l.max(0.0) / min_noise).ln_1p())
            .sum()
    };
    // Both bounds over k are non-increasing, so the first k that works keeps working.
    let works = |k: usize| spectral(k) / k as f64 <= threshold;
    let spectral_k = if works(cap) {
        let (mut lo, mut hi) = (0, cap);
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if works(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    } else {
        None
    };
    let horizon = spectral_k.map_or(cap, |k| k - 1).min(GREEDY_SIZE_HORIZON);
    let prior_sample = ConditionalGram::from_full(prior, state.noise(), &sample)?;
    let greedy = greedy_capacity_profile(&prior_sample, &sample, horizon, true)?;
    let greedy_k = greedy
        .iter()
        .enumerate()
        .find(|(i, g)| *g / GREEDY_FACTOR / (i + 1) as f64 <= threshold)
        .map(|(i, _)| i + 1);
    Ok(match (greedy_k, spectral_k) {
        (Some(g), Some(s)) => Some(g.min(s)),
        (g, s) => g.or(s),
    })
}

/// A multiset of sample points whose observation brings `Var[f_x | ·]`
/// within `ε` of its irreducible floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkovBoundary {
    pub point: usize,
    pub members: Vec<usize>,
    pub epsilon: f64,
    pub irreducible: f64,
    /// `Var[f_x | Dₙ, y_B]` once the members are observed.
    pub achieved_variance: f64,
    /// Size bound from the a-priori size condition; `None` when it would
    /// exceed [`MARKOV_SIZE_CAP`].
    pub size_bound: Option<usize>,
}

/// Builds a Markov boundary of `x` by undirected ITL over the sample space
/// from the current state, stopping as soon as the defining inequality holds.
pub fn markov_boundary(
    state: &PosteriorState,
    sample: &[usize],
    x: usize,
    epsilon: f64,
) -> Result<MarkovBoundary> {
    let sample = sorted_unique(sample);
    check_domain(state, &sample, "sample space")?;
    check_domain(state, &[x], "query point")?;
    let size_bound = markov_size_bound(state, &sample, epsilon, MARKOV_SIZE_CAP)?;
    let irreducible = irreducible_uncertainty(state.prior_covariance(), &sample, x)?;
    let mut union = sample.clone();
    union.push(x);
    let mut work = state.restrict(&union)?;
    let mut members = Vec::new();
    while work.variance(x)? > irreducible + epsilon {
        if members.len() >= MARKOV_MAX_STEPS {
            return Err(Error::Budget(format!(
                "no Markov boundary within {MARKOV_MAX_STEPS} observations"
            )));
        }
        let scores = sample
            .iter()
            .map(|&s| Ok(0.5 * (work.variance(s)? / work.noise(s)?).ln_1p()))
            .collect::<Result<Vec<f64>>>()?;
        let best = argmax_first(scores).ok_or_else(|| Error::numeric("no finite score"))?;
        work.condition_on_noisy(sample[best])?;
        members.push(sample[best]);
    }
    Ok(MarkovBoundary {
        point: x,
        members,
        epsilon,
        irreducible,
        achieved_variance: work.variance(x)?,
        size_bound,
    })
}

/// `Var[f_x | Dₙ, y_B]` by conditioning a fresh copy of `state` on `members`.
pub fn variance_given(state: &PosteriorState, members: &[usize], x: usize) -> Result<f64> {
    let mut ids = members.to_vec();
    ids.push(x);
    let mut work = state.restrict(&ids)?;
    for &m in members {
        work.condition_on_noisy(m)?;
    }
    work.variance(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub epsilon: f64,
    /// Markov boundary size used on the right side.
    pub size_bound: usize,
    /// The size condition asked for more than [`MARKOV_SIZE_CAP`]; the cap
    /// was used instead, which only shrinks the right side.
    pub size_bound_capped: bool,
    /// Rows compare the reducible gap `max_x (σₙ²(x) − η²_S(x))` against
    /// `2 σ² b_ε Γₙ + ε`.
    pub bound: BoundReport,
}

impl ConvergenceReport {
    /// `max_{x ∈ A} (σₙ²(x) − η²_S(x))` for `n = 0, …, N`.
    pub fn gap_series(&self) -> Vec<f64> {
        self.bound.rows.iter().map(|r| r.lhs).collect()
    }
}

/// Default tolerance: 5% of the largest prior variance.
pub fn default_epsilon(state: &PosteriorState) -> f64 {
    0.05 * state.prior_covariance().diagonal().iter().copied().fold(0.0, f64::max)
}

/// `σₙ²(x) ≤ 2 σ² b_ε Γₙ + η²_S(x) + ε` for every target and round.
pub fn check_convergence_bound(traj: &ItlTrajectory, epsilon: f64) -> Result<ConvergenceReport> {
    require_sample_within_targets(traj)?;
    let constants = TheoryConstants::from_prior(&traj.start, &traj.sample)?;
    let (size_bound, capped) =
        match markov_size_bound(&traj.start, &traj.sample, epsilon, MARKOV_SIZE_CAP)? {
            Some(k) => (k, false),
            None => (MARKOV_SIZE_CAP, true),
        };
    let floor = irreducible_uncertainties(traj.start.prior_covariance(), &traj.sample, &traj.targets)?;
    let rows = traj
        .target_variances
        .iter()
        .zip(&traj.step_uncertainty)
        .enumerate()
        .map(|(n, (vars, gamma))| BoundRow {
            round: n,
            lhs: vars
                .iter()
                .zip(&floor)
                .map(|(v, e)| v - e)
                .fold(f64::NEG_INFINITY, f64::max),
            rhs: 2.0 * constants.max_variance * size_bound as f64 * gamma + epsilon,
            exact: true,
        })
        .collect();
    let mut notes = Vec::new();
    if capped {
        notes.push(format!(
            "size condition exceeds {MARKOV_SIZE_CAP}; right side evaluated at the cap"
        ));
    }
    Ok(ConvergenceReport {
        epsilon,
        size_bound,
        size_bound_capped: capped,
        bound: BoundReport::new("convergence_bound", rows, notes),
    })
}

/// The convergence schedule with `ε = c γ_√n / √n`:
/// `2σ² √n Γₙ + c γ_⌊√n⌋ / √n ≤ c′ γₙ / √n` with `c′ = 2σ² + c`.
pub fn check_schedule(traj: &ItlTrajectory, capacity: &CapacitySeries) -> Result<BoundReport> {
    require_sample_within_targets(traj)?;
    let constants = TheoryConstants::from_prior(&traj.start, &traj.sample)?;
    if !(constants.lambda_min > 0.0) {
        return Ok(BoundReport::new(
            "schedule",
            Vec::new(),
            vec!["prior covariance over the sample space is singular".to_string()],
        ));
    }
    let c = constants.schedule_constant();
    let c_prime = 2.0 * constants.max_variance + c;
    let last = traj.rounds().min(capacity.values.len());
    let rows = (1..=last)
        .map(|n| {
            let root = (n as f64).sqrt();
            let k = (root.floor() as usize).max(1);
            let (gamma_k, exact_k) = capacity.get(k).expect("k ≤ n");
            let (gamma_n, exact_n) = capacity.get(n).expect("n in range");
            BoundRow {
                round: n,
                lhs: 2.0 * constants.max_variance * root * traj.step_uncertainty[n]
                    + c * gamma_k / root,
                rhs: c_prime * gamma_n / root,
                exact: exact_k && exact_n,
            }
        })
        .collect();
    Ok(BoundReport::new("schedule", rows, Vec::new()))
}

/// Submodularity ratio of the batch objective up to cardinality `k`, with
/// `B` ranging over subsets of the greedy batch and `X` over sets of at most
/// `k` sample points disjoint from `B`.
pub fn submodularity_ratio(
    state: &PosteriorState,
    targets: &[usize],
    sample: &[usize],
    k: usize,
) -> Result<f64> {
    let targets = sorted_unique(targets);
    let sample = sorted_unique(sample);
    check_domain(state, &targets, "target space")?;
    check_domain(state, &sample, "sample space")?;
    if sample.len() > RATIO_MAX_POINTS || k > RATIO_MAX_CARDINALITY || k == 0 {
        return Err(Error::input(format!(
            "exact submodularity ratio needs |S| ≤ {RATIO_MAX_POINTS} and 1 ≤ k ≤ {RATIO_MAX_CARDINALITY}"
        )));
    }
    if k > sample.len() {
        return Err(Error::input(format!("k = {k} exceeds |S| = {}", sample.len())));
    }
    let inputs = ScoringInputs::new(state.prior_covariance());
    let policy = Policy::new(Rule::Itl).batch_size(k).exact_targets();
    let greedy = select_batch(state, &targets, &sample, &policy, &inputs)?.indices;

    let mut union = sample.clone();
    union.extend_from_slice(&targets);
    let base = state.restrict(&union)?;
    let mut ratio = f64::INFINITY;
    for mask in 0u32..(1 << greedy.len()) {
        let b: Vec<usize> = (0..greedy.len())
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| greedy[i])
            .collect();
        let mut given_b = base.clone();
        for &x in &b {
            given_b.condition_on_noisy(x)?;
        }
        let rest: Vec<usize> = sample.iter().copied().filter(|x| !b.contains(x)).collect();
        let singles = given_b.information_gains(&targets, &rest, false)?;
        for size in 1..=k.min(rest.len()) {
            for_each_selection(rest.len(), size, false, |sel| {
                let xs: Vec<usize> = sel.iter().map(|&i| rest[i]).collect();
                let num: f64 = sel.iter().map(|&i| singles[i]).sum();
                let den = given_b.set_information_gain(&targets, &xs, false)?;
                let r = if den <= f64::EPSILON { 1.0 } else { num / den };
                ratio = ratio.min(r);
                Ok(())
            })?;
        }
    }
    Ok(if ratio.is_finite() { ratio } else { 1.0 })
}

/// Whether `n D − A ⪰ 0` for symmetric `A` with diagonal `D`, up to round-off.
pub fn loewner_diag_bound(a: &DMatrix<f64>) -> bool {
    if !a.is_square() {
        return false;
    }
    let n = a.nrows();
    if n == 0 {
        return true;
    }
    let d = a.diagonal();
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { n as f64 * d[i] } else { 0.0 }) - a;
    let scale = d.iter().copied().fold(0.0, f64::max) * n as f64;
    min_eigenvalue(&m) >= -1e-10 * scale.max(1.0)
}

/// Whether `M′ log(b/a) ≤ b − a ≤ M log(b/a)`. Returns false when the
/// premises `0 < M′ ≤ a ≤ b ≤ M` do not hold.
pub fn log_difference_bounds(a: f64, b: f64, upper: f64, lower: f64) -> bool {
    if !(lower > 0.0 && lower <= a && a <= b && b <= upper) {
        return false;
    }
    let diff = b - a;
    let log = (b / a).ln();
    let tol = 1e-12 * upper;
    diff <= upper * log + tol && diff >= lower * log - tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{gram, KernelMatrix, KernelSpec, NoiseModel, Point};

    fn state(k: DMatrix<f64>, rho2: f64) -> PosteriorState {
        PosteriorState::prior(
            &KernelMatrix::from_matrix(k).unwrap(),
            NoiseModel::homoscedastic(rho2).unwrap(),
        )
        .unwrap()
    }

    fn two_point() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0])
    }

    #[test]
    fn irreducible_examples() {
        let k = two_point();
        assert_eq!(irreducible_uncertainty(&k, &[0], 0).unwrap(), 0.0);
        assert!((irreducible_uncertainty(&k, &[0], 1).unwrap() - 0.75).abs() < 1e-9);
        let id = DMatrix::identity(3, 3) * 2.0;
        assert!((irreducible_uncertainty(&id, &[0, 1], 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn step_uncertainty_identity() {
        let s = state(DMatrix::identity(4, 4), 1.0);
        let all = [0, 1, 2, 3];
        let g = step_uncertainty(&s, &all, &all).unwrap();
        assert!((g - 0.5 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn step_uncertainty_vanishes_when_sample_is_observed() {
        let mut s = state(two_point(), 1e-8);
        for x in [0, 1] {
            let o = s.observation(x, 0.0).unwrap();
            s.condition(o).unwrap();
        }
        let g = step_uncertainty(&s, &[0, 1], &[0, 1]).unwrap();
        // Remaining variance ~ρ², so Γ ~ ½ log 2.
        assert!(g < 0.5);
        let s = state(two_point(), 1e-8);
        let t = itl_trajectory(&s, &[0, 1], &[0, 1], 40).unwrap();
        assert!(*t.step_uncertainty.last().unwrap() < 0.05);
    }

    #[test]
    fn identity_gamma_bound_is_tight() {
        let s = state(DMatrix::identity(3, 3), 1.0);
        let t = itl_trajectory(&s, &[0, 1, 2], &[0, 1, 2], 3).unwrap();
        let r = check_gamma_bound(&t).unwrap();
        assert_eq!(r.status, CheckStatus::Pass);
        for row in &r.rows {
            assert!((row.lhs - row.rhs).abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn gamma_bound_requires_sample_within_targets() {
        let s = state(DMatrix::identity(3, 3), 1.0);
        let t = itl_trajectory(&s, &[0], &[1, 2], 2).unwrap();
        assert!(check_gamma_bound(&t).is_err());
    }

    #[test]
    fn within_sample_bound_at_prior() {
        let s = state(two_point(), 0.1);
        let t = itl_trajectory(&s, &[0, 1], &[0, 1], 5).unwrap();
        let r = check_within_sample_bound(&t).unwrap();
        assert_eq!(r.status, CheckStatus::Pass);
        assert_eq!(r.rows.len(), 6);
    }

    #[test]
    fn markov_boundary_two_point() {
        let s = state(two_point(), 0.01);
        let b = markov_boundary(&s, &[0], 1, 0.1).unwrap();
        assert_eq!(b.members, vec![0]);
        assert!(b.achieved_variance <= 0.85);
        assert!((b.irreducible - 0.75).abs() < 1e-9);
        assert!(b.members.len() <= b.size_bound.unwrap());
        let direct = variance_given(&s, &b.members, 1).unwrap();
        assert!((direct - b.achieved_variance).abs() < 1e-12);
    }

    #[test]
    fn markov_boundary_for_sample_point_repeats_it() {
        let s = state(DMatrix::identity(2, 2), 0.05);
        let b = markov_boundary(&s, &[0], 0, 0.01).unwrap();
        assert!(!b.members.is_empty());
        assert!(b.members.iter().all(|&m| m == 0));
        assert!(b.achieved_variance <= 0.01);
    }

    #[test]
    fn markov_boundary_empty_cases() {
        let s = state(DMatrix::identity(3, 3), 0.1);
        assert!(markov_boundary(&s, &[0, 1], 2, 0.1).unwrap().members.is_empty());
        let s = state(two_point(), 0.1);
        assert!(markov_boundary(&s, &[0], 1, 2.0).unwrap().members.is_empty());
    }

    #[test]
    fn tiny_epsilon_exhausts_budget() {
        let s = state(two_point(), 0.01);
        assert!(matches!(markov_boundary(&s, &[0], 1, 1e-9), Err(Error::Budget(_))));
    }

    #[test]
    fn convergence_bound_on_small_grid() {
        let pts: Vec<Point> = (0..8).map(|i| Point::with_coords(i, vec![i as f64 * 0.5])).collect();
        let k = gram(&KernelSpec::gaussian(1.0), &pts).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        let t = itl_trajectory(&s, &(0..8).collect::<Vec<_>>(), &[0, 1, 2, 3, 4], 30).unwrap();
        let r = check_convergence_bound(&t, default_epsilon(&s)).unwrap();
        assert_ne!(r.bound.status, CheckStatus::Fail);
        let gap = r.gap_series();
        assert!(gap.last().unwrap() < &gap[0]);
    }

    #[test]
    fn ratio_at_least_one_when_sample_within_targets() {
        let k = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.6, 0.2, 0.6, 1.0, 0.4, 0.2, 0.4, 1.0],
        );
        let s = state(k, 0.2);
        let r = submodularity_ratio(&s, &[0, 1, 2], &[0, 1, 2], 2).unwrap();
        assert!(r >= 1.0 - 1e-9, "{r}");
        let single = submodularity_ratio(&s, &[0], &[1], 1).unwrap();
        assert!((single - 1.0).abs() < 1e-12);
        assert!(submodularity_ratio(&s, &[0], &[1, 2], 5).is_err());
    }

    #[test]
    fn inequality_utilities() {
        assert!(loewner_diag_bound(&DMatrix::identity(5, 5)));
        assert!(log_difference_bounds(0.3, 0.3, 1.0, 0.1));
        assert!(log_difference_bounds(0.2, 0.9, 1.0, 0.1));
        assert!(!log_difference_bounds(0.9, 0.2, 1.0, 0.1));
    }
}
