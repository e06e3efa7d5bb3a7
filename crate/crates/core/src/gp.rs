//! Joint Gaussian posterior over a finite domain.
//!
//! The full conditional covariance is kept in memory and updated by rank-one
//! downdates, one per observation:
//!
//! ```text
//! K ← K − K[:, x] K[x, :] / (K[x, x] + ρ²(x))
//! μ ← μ + K[:, x] (y − μ[x]) / (K[x, x] + ρ²(x))
//! ```
//!
//! Information gains are computed from two Cholesky log-determinants
//! ("forward") or from two scalar variances after a single factorization of
//! the target block ("backward"). Both agree up to round-off.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelMatrix, NoiseModel};
use crate::linalg::{argmax_first, cholesky_jittered, log_det_psd, submatrix, VARIANCE_FLOOR};

const ABSENT: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub index: usize,
    pub value: f64,
    pub noise_var: f64,
}

/// Covariance over a subset of domain points that can be conditioned in
/// place. Points are addressed by domain index.
#[derive(Debug, Clone)]
pub struct ConditionalGram {
    ids: Vec<usize>,
    slot: Vec<usize>,
    cov: DMatrix<f64>,
    noise: Vec<f64>,
}

impl ConditionalGram {
    /// Restricts `full` (a domain-wide covariance) to `ids`. Duplicate ids are
    /// collapsed.
    pub fn from_full(full: &DMatrix<f64>, noise: &NoiseModel, ids: &[usize]) -> Result<Self> {
        let n = full.nrows();
        let mut slot = vec![ABSENT; n];
        let mut kept = Vec::with_capacity(ids.len());
        for &id in ids {
            if id >= n {
                return Err(Error::input(format!("index {id} outside domain of size {n}")));
            }
            if slot[id] == ABSENT {
                slot[id] = kept.len();
                kept.push(id);
            }
        }
        let cov = submatrix(full, &kept, &kept);
        let noise = kept.iter().map(|&i| noise.variance(i)).collect();
        Ok(ConditionalGram {
            ids: kept,
            slot,
            cov,
            noise,
        })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn contains(&self, id: usize) -> bool {
        self.slot.get(id).is_some_and(|&s| s != ABSENT)
    }

    fn local(&self, id: usize) -> Result<usize> {
        match self.slot.get(id) {
            Some(&s) if s != ABSENT => Ok(s),
            _ => Err(Error::input(format!("index {id} is not tracked by this covariance"))),
        }
    }

    fn locals(&self, ids: &[usize]) -> Result<Vec<usize>> {
        ids.iter().map(|&i| self.local(i)).collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Marginal variance, clamped at zero.
    pub fn variance(&self, id: usize) -> Result<f64> {
        let l = self.local(id)?;
        Ok(self.cov[(l, l)].max(0.0))
    }

    pub fn covariance(&self, a: usize, b: usize) -> Result<f64> {
        Ok(self.cov[(self.local(a)?, self.local(b)?)])
    }

    /// Correlation with variances floored at [`VARIANCE_FLOOR`].
    pub fn correlation(&self, a: usize, b: usize) -> Result<f64> {
        let (la, lb) = (self.local(a)?, self.local(b)?);
        let va = self.cov[(la, la)].max(VARIANCE_FLOOR);
        let vb = self.cov[(lb, lb)].max(VARIANCE_FLOOR);
        Ok(self.cov[(la, lb)] / (va * vb).sqrt())
    }

    pub fn noise(&self, id: usize) -> Result<f64> {
        Ok(self.noise[self.local(id)?])
    }

    /// Covariance block over `ids` (in the given order).
    pub fn block(&self, ids: &[usize]) -> Result<DMatrix<f64>> {
        let l = self.locals(ids)?;
        Ok(submatrix(&self.cov, &l, &l))
    }

    /// Rank-one conditioning on a noisy observation at `id`. Returns the
    /// pre-update column scaled by `1/(K[x,x] + ρ²)`, which is the mean gain.
    pub fn condition_on(&mut self, id: usize, noise_var: f64) -> Result<DVector<f64>> {
        let x = self.local(id)?;
        let s = self.cov[(x, x)].max(0.0) + noise_var;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::numeric(format!(
                "non-positive predictive variance {s} at index {id}"
            )));
        }
        let col: DVector<f64> = self.cov.column(x).into_owned();
        let n = self.cov.nrows();
        for j in 0..n {
            let cj = col[j] / s;
            for i in j..n {
                let v = self.cov[(i, j)] - col[i] * cj;
                self.cov[(i, j)] = v;
                self.cov[(j, i)] = v;
            }
        }
        if self.cov.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite covariance after conditioning"));
        }
        Ok(col / s)
    }

    /// Conditions on `id` using its own noise variance.
    pub fn condition_on_noisy(&mut self, id: usize) -> Result<()> {
        let rho2 = self.noise(id)?;
        self.condition_on(id, rho2).map(|_| ())
    }

    /// Covariance of the targets, optionally inflated by their own noise.
    fn target_block(&self, targets: &[usize], noisy_targets: bool) -> Result<DMatrix<f64>> {
        let lt = self.locals(targets)?;
        let mut m = submatrix(&self.cov, &lt, &lt);
        if noisy_targets {
            for (i, &l) in lt.iter().enumerate() {
                m[(i, i)] += self.noise[l];
            }
        }
        Ok(m)
    }

    /// `I(f_A; y_x) = ½ log(1 + σ²(x)/ρ²(x))` whenever `x ∈ A`, since `y_x`
    /// depends on `f_A` only through `f_x`. Evaluated directly so that
    /// ill-conditioned target blocks do not perturb it.
    fn in_target_gain(&self, target_locals: &[usize], x: usize, noisy_targets: bool) -> Option<f64> {
        if noisy_targets || !target_locals.contains(&x) {
            return None;
        }
        Some(0.5 * (self.cov[(x, x)].max(0.0) / self.noise[x]).ln_1p())
    }

    /// Backward-method information gains `I(f_A; y_x)` (or `I(y_A; y_x)`
    /// with `noisy_targets`) for every candidate, factoring the target block
    /// once.
    pub fn information_gains(
        &self,
        targets: &[usize],
        candidates: &[usize],
        noisy_targets: bool,
    ) -> Result<Vec<f64>> {
        if targets.is_empty() {
            return Err(Error::input("target set is empty"));
        }
        let lt = self.locals(targets)?;
        let chol = cholesky_jittered(&self.target_block(targets, noisy_targets)?)?;
        candidates
            .iter()
            .map(|&c| {
                let x = self.local(c)?;
                if let Some(v) = self.in_target_gain(&lt, x, noisy_targets) {
                    return Ok(v);
                }
                let s = self.cov[(x, x)].max(0.0) + self.noise[x];
                let k = DVector::from_iterator(lt.len(), lt.iter().map(|&a| self.cov[(a, x)]));
                let w = half_solve(&chol, &DMatrix::from_column_slice(k.len(), 1, k.as_slice()))?;
                let q = w.norm_squared();
                let residual = s - q;
                if !(residual > 0.0) {
                    return Err(Error::numeric(format!(
                        "non-positive conditional variance {residual} for candidate {c}"
                    )));
                }
                Ok((0.5 * (s / residual).ln()).max(0.0))
            })
            .collect()
    }

    /// Forward-method information gain via the log-determinant ratio over the
    /// targets.
    pub fn information_gain_forward(
        &self,
        targets: &[usize],
        candidate: usize,
        noisy_targets: bool,
    ) -> Result<f64> {
        if targets.is_empty() {
            return Err(Error::input("target set is empty"));
        }
        let lt = self.locals(targets)?;
        let x = self.local(candidate)?;
        if let Some(v) = self.in_target_gain(&lt, x, noisy_targets) {
            return Ok(v);
        }
        let prior = self.target_block(targets, noisy_targets)?;
        let s = self.cov[(x, x)].max(0.0) + self.noise[x];
        let k = DVector::from_iterator(lt.len(), lt.iter().map(|&a| self.cov[(a, x)]));
        // det Var[f_A | y_x] / det Var[f_A] taken in the coordinates that
        // whiten the (jittered) prior block: det(I - w wᵀ / s) with w = L⁻¹k.
        let chol = cholesky_jittered(&prior)?;
        let w = half_solve(&chol, &DMatrix::from_column_slice(k.len(), 1, k.as_slice()))?;
        let whitened = DMatrix::identity(lt.len(), lt.len()) - (&w * w.transpose()) / s;
        Ok((-0.5 * exact_log_det(&whitened)?).max(0.0))
    }

    /// `I(f_A; y_X)` for a (multi)set of observations `xs`, or `I(y_A; y_X)`
    /// with `noisy_targets`.
    pub fn set_information_gain(
        &self,
        targets: &[usize],
        xs: &[usize],
        noisy_targets: bool,
    ) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        if targets.is_empty() {
            return Err(Error::input("target set is empty"));
        }
        let lt = self.locals(targets)?;
        let lx = self.locals(xs)?;
        if !noisy_targets && lx.iter().all(|l| lt.contains(l)) {
            return self.self_information(xs);
        }
        let mut var_y = submatrix(&self.cov, &lx, &lx);
        for (i, &l) in lx.iter().enumerate() {
            var_y[(i, i)] += self.noise[l];
        }
        let chol = cholesky_jittered(&self.target_block(targets, noisy_targets)?)?;
        let w = half_solve(&chol, &submatrix(&self.cov, &lt, &lx))?;
        let explained = w.transpose() * &w;
        let residual = &var_y - explained;
        let residual = DMatrix::from_fn(residual.nrows(), residual.ncols(), |i, j| {
            0.5 * (residual[(i, j)] + residual[(j, i)])
        });
        Ok((0.5 * (exact_log_det(&var_y)? - exact_log_det(&residual)?)).max(0.0))
    }

    /// `I(f_X; y_X) = ½ log det(I + P⁻¹ K_XX)` for a (multi)set `xs`.
    pub fn self_information(&self, xs: &[usize]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let lx = self.locals(xs)?;
        let mut m = submatrix(&self.cov, &lx, &lx);
        let mut log_noise = 0.0;
        for (i, &l) in lx.iter().enumerate() {
            m[(i, i)] += self.noise[l];
            log_noise += self.noise[l].ln();
        }
        Ok((0.5 * (exact_log_det(&m)? - log_noise)).max(0.0))
    }
}

/// `L⁻¹ b` for the factor `L` of `chol`. Quadratic forms built from it lose
/// accuracy with the square root of the condition number rather than with the
/// condition number itself.
fn half_solve(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    chol.l_dirty()
        .solve_lower_triangular(b)
        .ok_or_else(|| Error::numeric("singular Cholesky factor"))
}

/// `log det` via Cholesky without adding jitter; falls back to the jittered
/// factorization only when the matrix is numerically indefinite.
fn exact_log_det(m: &DMatrix<f64>) -> Result<f64> {
    match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => Ok(2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()),
        None => log_det_psd(m),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IgMethod {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IgQuery {
    pub targets: Vec<usize>,
    pub candidate: usize,
    pub method: IgMethod,
    /// Compute `I(y_A; y_x)` instead of `I(f_A; y_x)`, i.e. add the target
    /// noise to the target block before inversion.
    pub noisy_targets: bool,
}

impl IgQuery {
    pub fn new(targets: Vec<usize>, candidate: usize, method: IgMethod) -> Self {
        IgQuery {
            targets,
            candidate,
            method,
            noisy_targets: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMode {
    Greedy,
    BruteForce,
}

/// Largest instance accepted by [`PosteriorState::information_capacity`] in
/// brute-force mode.
pub const BRUTE_FORCE_MAX_POINTS: usize = 12;
pub const BRUTE_FORCE_MAX_BUDGET: usize = 6;

/// Gaussian posterior over every point of a finite domain.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    prior_cov: DMatrix<f64>,
    prior_mean: DVector<f64>,
    gram: ConditionalGram,
    mean: DVector<f64>,
    noise: NoiseModel,
    history: Vec<Observation>,
}

impl PosteriorState {
    /// Zero-mean prior.
    pub fn prior(kernel: &KernelMatrix, noise: NoiseModel) -> Result<Self> {
        let n = kernel.len();
        Self::prior_with_mean(kernel, DVector::zeros(n), noise)
    }

    pub fn prior_with_mean(
        kernel: &KernelMatrix,
        mean: DVector<f64>,
        noise: NoiseModel,
    ) -> Result<Self> {
        let n = kernel.len();
        if n == 0 {
            return Err(Error::input("empty domain"));
        }
        if mean.len() != n {
            return Err(Error::input(format!(
                "prior mean has length {} for a domain of {n}",
                mean.len()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("prior mean has non-finite entries"));
        }
        noise.validate(Some(n))?;
        let all: Vec<usize> = (0..n).collect();
        let gram = ConditionalGram::from_full(&kernel.entries, &noise, &all)?;
        Ok(PosteriorState {
            prior_cov: kernel.entries.clone(),
            prior_mean: mean.clone(),
            gram,
            mean,
            noise,
            history: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Number of observations conditioned on so far.
    pub fn round(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn noise_var(&self, index: usize) -> f64 {
        self.noise.variance(index)
    }

    pub fn prior_covariance(&self) -> &DMatrix<f64> {
        &self.prior_cov
    }

    pub fn prior_mean(&self) -> &DVector<f64> {
        &self.prior_mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        self.gram.matrix()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn gram(&self) -> &ConditionalGram {
        &self.gram
    }

    /// The current conditional covariance restricted to `ids`.
    pub fn restrict(&self, ids: &[usize]) -> Result<ConditionalGram> {
        ConditionalGram::from_full(self.gram.matrix(), &self.noise, ids)
    }

    /// A fresh state at the prior of this one (history dropped).
    pub fn reset(&self) -> Self {
        let all: Vec<usize> = (0..self.len()).collect();
        PosteriorState {
            prior_cov: self.prior_cov.clone(),
            prior_mean: self.prior_mean.clone(),
            gram: ConditionalGram::from_full(&self.prior_cov, &self.noise, &all)
                .expect("indices are in range"),
            mean: self.prior_mean.clone(),
            noise: self.noise.clone(),
            history: Vec::new(),
        }
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.len() {
            return Err(Error::input(format!(
                "index {index} outside domain of size {}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Builds an observation at `index` with the domain's noise variance.
    pub fn observation(&self, index: usize, value: f64) -> Result<Observation> {
        self.check_index(index)?;
        Ok(Observation {
            index,
            value,
            noise_var: self.noise.variance(index),
        })
    }

    /// Conditions on one noisy observation in place.
    pub fn condition(&mut self, obs: Observation) -> Result<()> {
        self.check_index(obs.index)?;
        if !obs.value.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite observation {} at index {}",
                obs.value, obs.index
            )));
        }
        let expected = self.noise.variance(obs.index);
        if !(obs.noise_var > 0.0) || (obs.noise_var - expected).abs() > 1e-12 * expected {
            return Err(Error::input(format!(
                "observation noise {} at index {} does not match the noise model ({expected})",
                obs.noise_var, obs.index
            )));
        }
        let residual = obs.value - self.mean[obs.index];
        let gain = self.gram.condition_on(obs.index, obs.noise_var)?;
        self.mean.axpy(residual, &gain, 1.0);
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite posterior mean after conditioning"));
        }
        self.history.push(obs);
        Ok(())
    }

    /// Returns the state conditioned on `obs`, leaving `self` untouched.
    pub fn conditioned(&self, obs: Observation) -> Result<Self> {
        let mut next = self.clone();
        next.condition(obs)?;
        Ok(next)
    }

    /// `σₙ²(x)`, clamped at zero.
    pub fn marginal_variance(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        self.gram.variance(index)
    }

    pub fn correlation(&self, a: usize, b: usize) -> Result<f64> {
        self.gram.correlation(a, b)
    }

    pub fn information_gain(&self, q: &IgQuery) -> Result<f64> {
        self.check_index(q.candidate)?;
        for &t in &q.targets {
            self.check_index(t)?;
        }
        match q.method {
            IgMethod::Backward => Ok(self.gram.information_gains(
                &q.targets,
                &[q.candidate],
                q.noisy_targets,
            )?[0]),
            IgMethod::Forward => {
                self.gram
                    .information_gain_forward(&q.targets, q.candidate, q.noisy_targets)
            }
        }
    }

    /// `I(f_A; y_X | Dₙ)` for a (multi)set `xs`.
    pub fn set_information_gain(&self, targets: &[usize], xs: &[usize]) -> Result<f64> {
        self.gram.set_information_gain(targets, xs, false)
    }

    /// Differential entropy of `f` at `indices`:
    /// `(k/2) log(2πe) + ½ log det Var[f_I | Dₙ]`.
    pub fn entropy(&self, indices: &[usize]) -> Result<f64> {
        if indices.is_empty() {
            return Ok(0.0);
        }
        let block = self.gram.block(indices)?;
        let k = indices.len() as f64;
        Ok(0.5 * k * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()
            + 0.5 * log_det_psd(&block)?)
    }

    /// Information capacity `γₙ = max_{X ⊆ S, |X| ≤ n} I(f_X; y_X)` at the
    /// current state. With `multiset`, `X` may repeat points.
    pub fn information_capacity(
        &self,
        sample: &[usize],
        budget: usize,
        mode: CapacityMode,
        multiset: bool,
    ) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::input("sample space is empty"));
        }
        let sub = self.restrict(sample)?;
        let ids = sub.ids().to_vec();
        match mode {
            CapacityMode::Greedy => Ok(greedy_capacity_profile(&sub, &ids, budget, multiset)?
                .last()
                .copied()
                .unwrap_or(0.0)),
            CapacityMode::BruteForce => {
                if ids.len() > BRUTE_FORCE_MAX_POINTS || budget > BRUTE_FORCE_MAX_BUDGET {
                    return Err(Error::input(format!(
                        "brute-force capacity limited to |S| ≤ {BRUTE_FORCE_MAX_POINTS} and n ≤ {BRUTE_FORCE_MAX_BUDGET}"
                    )));
                }
                if !multiset && budget > ids.len() {
                    return Err(Error::input(format!(
                        "budget {budget} exceeds |S| = {} without multisets",
                        ids.len()
                    )));
                }
                let mut best = 0.0f64;
                for_each_selection(ids.len(), budget, multiset, |sel| {
                    let xs: Vec<usize> = sel.iter().map(|&i| ids[i]).collect();
                    best = best.max(sub.self_information(&xs)?);
                    Ok(())
                })?;
                Ok(best)
            }
        }
    }
}

/// Cumulative greedy values `g_1 ≤ … ≤ g_n` of `I(f_X; y_X)` over `sample`
/// (each step maximizes `½ log(1 + σ²(x)/ρ²(x))` and conditions on it).
pub fn greedy_capacity_profile(
    gram: &ConditionalGram,
    sample: &[usize],
    budget: usize,
    multiset: bool,
) -> Result<Vec<f64>> {
    let mut work = gram.clone();
    let mut used = vec![false; sample.len()];
    let mut total = 0.0;
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let scores: Vec<f64> = sample
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if !multiset && used[i] {
                    return Ok(f64::NAN);
                }
                Ok(0.5 * (1.0 + work.variance(x)? / work.noise(x)?).ln())
            })
            .collect::<Result<_>>()?;
        let Some(best) = argmax_first(scores.iter().copied()) else {
            break;
        };
        total += scores[best];
        used[best] = true;
        work.condition_on_noisy(sample[best])?;
        out.push(total);
    }
    Ok(out)
}

/// Calls `f` with every size-`k` selection of `0..n` in lexicographic order:
/// combinations, or combinations with repetition when `multiset`.
pub fn for_each_selection(
    n: usize,
    k: usize,
    multiset: bool,
    mut f: impl FnMut(&[usize]) -> Result<()>,
) -> Result<()> {
    fn rec(
        n: usize,
        k: usize,
        multiset: bool,
        start: usize,
        cur: &mut Vec<usize>,
        f: &mut dyn FnMut(&[usize]) -> Result<()>,
    ) -> Result<()> {
        if cur.len() == k {
            return f(cur);
        }
        for i in start..n {
            cur.push(i);
            rec(n, k, multiset, if multiset { i } else { i + 1 }, cur, f)?;
            cur.pop();
        }
        Ok(())
    }
    rec(n, k, multiset, 0, &mut Vec::with_capacity(k), &mut f)
}

/// Posterior mean and covariance recomputed from the prior in one batch.
/// Reference path for checking the incremental updates.
pub fn batch_posterior(
    prior_cov: &DMatrix<f64>,
    prior_mean: &DVector<f64>,
    observations: &[Observation],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if observations.is_empty() {
        return Ok((prior_mean.clone(), prior_cov.clone()));
    }
    let n = prior_cov.nrows();
    let xs: Vec<usize> = observations.iter().map(|o| o.index).collect();
    if let Some(&bad) = xs.iter().find(|&&i| i >= n) {
        return Err(Error::input(format!("index {bad} outside domain of size {n}")));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut g = submatrix(prior_cov, &xs, &xs);
    for (i, o) in observations.iter().enumerate() {
        g[(i, i)] += o.noise_var;
    }
    let chol = nalgebra::Cholesky::new(g)
        .ok_or_else(|| Error::numeric("observation covariance is not positive definite"))?;
    let cross = submatrix(prior_cov, &all, &xs);
    let resid = DVector::from_iterator(
        xs.len(),
        observations.iter().map(|o| o.value - prior_mean[o.index]),
    );
    let mean = prior_mean + &cross * chol.solve(&resid);
    let cov = prior_cov - &cross * chol.solve(&cross.transpose());
    Ok((mean, cov))
}

/// Confidence multiplier `β_n(δ) = B + ρ √(2(γₙ + 1 + log(1/δ)))`.
pub fn beta_n(norm_bound: f64, rho: f64, gamma_n: f64, delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::input(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(norm_bound >= 0.0) || !(rho >= 0.0) || !(gamma_n >= 0.0) {
        return Err(Error::input("norm bound, rho and gamma_n must be non-negative"));
    }
    Ok(norm_bound + rho * (2.0 * (gamma_n + 1.0 + (1.0 / delta).ln())).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn two_point(noise: f64) -> PosteriorState {
        let k = KernelMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]))
            .unwrap();
        PosteriorState::prior(&k, NoiseModel::homoscedastic(noise).unwrap()).unwrap()
    }

    #[test]
    fn conditioning_two_point_example() {
        let mut s = two_point(0.1);
        s.condition(s.observation(0, 1.0).unwrap()).unwrap();
        let v = s.marginal_variance(1).unwrap();
        assert!((v - (1.0 - 0.25 / 1.1)).abs() < 1e-12);
        assert!((v - 0.77273).abs() < 1e-5);
        assert_eq!(s.round(), 1);
        // μ₁ = 0.5 · 1 / 1.1
        assert!((s.mean()[1] - 0.5 / 1.1).abs() < 1e-12);
    }

    #[test]
    fn uncorrelated_observation_leaves_others() {
        let k = KernelMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let mut s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        s.condition(s.observation(1, 2.0).unwrap()).unwrap();
        assert_eq!(s.marginal_variance(0).unwrap(), 1.0);
        assert_eq!(s.marginal_variance(2).unwrap(), 1.0);
    }

    #[test]
    fn repeated_measurement_helps() {
        let mut s = two_point(0.1);
        s.condition(s.observation(0, 0.3).unwrap()).unwrap();
        let once = s.marginal_variance(0).unwrap();
        s.condition(s.observation(0, 0.1).unwrap()).unwrap();
        assert!(s.marginal_variance(0).unwrap() < once);
    }

    #[test]
    fn near_exact_observation() {
        let mut s = two_point(1e-8);
        s.condition(s.observation(0, 0.0).unwrap()).unwrap();
        assert!(s.marginal_variance(0).unwrap() < 1e-7);
    }

    #[test]
    fn prior_variance_is_kernel_diagonal() {
        let s = two_point(0.1);
        assert_eq!(s.marginal_variance(1).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_observations() {
        let mut s = two_point(0.1);
        let mut obs = s.observation(0, f64::NAN).unwrap();
        assert!(matches!(s.condition(obs), Err(Error::Numeric(_))));
        obs.value = 1.0;
        obs.noise_var = 0.5;
        assert!(matches!(s.condition(obs), Err(Error::Input(_))));
        assert!(s.observation(5, 0.0).is_err());
        assert_eq!(s.round(), 0);
    }

    #[test]
    fn information_gain_two_point() {
        let s = two_point(0.1);
        let want = 0.5 * (1.1f64 / 0.85).ln();
        for method in [IgMethod::Forward, IgMethod::Backward] {
            let ig = s.information_gain(&IgQuery::new(vec![1], 0, method)).unwrap();
            assert!((ig - want).abs() < 1e-9, "{method:?}: {ig}");
        }
        // The quoted figure 0.12894 is a rounding of 0.1289146.
        assert!((want - 0.1289146).abs() < 1e-7);
    }

    #[test]
    fn independent_candidate_has_zero_gain() {
        let k = KernelMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        for method in [IgMethod::Forward, IgMethod::Backward] {
            let ig = s.information_gain(&IgQuery::new(vec![0, 1], 2, method)).unwrap();
            assert!(ig.abs() < 1e-12);
        }
    }

    #[test]
    fn candidate_in_targets_reduces_to_uncertainty() {
        let s = two_point(0.1);
        let ig = s
            .information_gain(&IgQuery::new(vec![0, 1], 0, IgMethod::Backward))
            .unwrap();
        assert!((ig - 0.5 * (1.0f64 + 1.0 / 0.1).ln()).abs() < 1e-9);
    }

    #[test]
    fn entropy_values() {
        let k = KernelMatrix::from_matrix(DMatrix::identity(2, 2)).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        let h1 = s.entropy(&[0]).unwrap();
        assert!((h1 - 1.4189385332046727).abs() < 1e-9);
        assert!((s.entropy(&[0, 1]).unwrap() - 2.0 * h1).abs() < 1e-9);

        let tiny = KernelMatrix::from_matrix(DMatrix::from_element(1, 1, 1e-10)).unwrap();
        let s = PosteriorState::prior(&tiny, NoiseModel::homoscedastic(0.1).unwrap()).unwrap();
        let h = s.entropy(&[0]).unwrap();
        assert!(h.is_finite() && h < -9.0);
    }

    #[test]
    fn capacity_single_point() {
        let k = KernelMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_vec(vec![
            1.0, 3.0, 2.0,
        ])))
        .unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(0.5).unwrap()).unwrap();
        let want = 0.5 * (1.0f64 + 3.0 / 0.5).ln();
        for mode in [CapacityMode::Greedy, CapacityMode::BruteForce] {
            let g = s.information_capacity(&[0, 1, 2], 1, mode, false).unwrap();
            assert!((g - want).abs() < 1e-12);
        }
    }

    #[test]
    fn capacity_identity_is_additive() {
        let k = KernelMatrix::from_matrix(DMatrix::identity(5, 5)).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(1.0).unwrap()).unwrap();
        let want = 3.0 * 0.5 * 2f64.ln();
        for mode in [CapacityMode::Greedy, CapacityMode::BruteForce] {
            let g = s.information_capacity(&[0, 1, 2, 3, 4], 3, mode, false).unwrap();
            assert!((g - want).abs() < 1e-12, "{mode:?}: {g}");
        }
    }

    #[test]
    fn brute_force_limits() {
        let k = KernelMatrix::from_matrix(DMatrix::identity(3, 3)).unwrap();
        let s = PosteriorState::prior(&k, NoiseModel::homoscedastic(1.0).unwrap()).unwrap();
        assert!(s
            .information_capacity(&[0, 1, 2], 4, CapacityMode::BruteForce, false)
            .is_err());
        assert!(s
            .information_capacity(&[0, 1, 2], 4, CapacityMode::BruteForce, true)
            .is_ok());
    }

    #[test]
    fn selections_enumerate() {
        let mut count = 0;
        for_each_selection(4, 2, false, |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 6);
        let mut count = 0;
        for_each_selection(4, 2, true, |_| {
            count += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(count, 10);
    }

    #[test]
    fn beta_examples() {
        let b = beta_n(0.0, 1.0, 0.0, (-1.0f64).exp()).unwrap();
        assert!((b - 2.0).abs() < 1e-12);
        assert_eq!(beta_n(5.0, 0.0, 3.0, 0.1).unwrap(), 5.0);
        assert!(beta_n(1.0, 1.0, 2.0, 0.1).unwrap() > beta_n(1.0, 1.0, 1.0, 0.1).unwrap());
        assert!(beta_n(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(beta_n(1.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn batch_matches_incremental() {
        let mut s = two_point(0.1);
        let obs = [
            s.observation(0, 1.0).unwrap(),
            s.observation(1, -0.5).unwrap(),
            s.observation(0, 0.2).unwrap(),
        ];
        for o in obs {
            s.condition(o).unwrap();
        }
        let (m, c) = batch_posterior(s.prior_covariance(), s.prior_mean(), &obs).unwrap();
        assert!((m - s.mean()).amax() < 1e-12);
        assert!((c - s.covariance()).amax() < 1e-12);
    }
}
