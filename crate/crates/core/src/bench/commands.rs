use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{AblationGrid, Hyper, RunConfig};
use super::domain::{build_domain, Domain};
use super::metrics::{
    format_metrics, format_summary, mean_stderr, rows_from_record, summarize, MetricsRow,
};
use crate::datasets::{
    persist_run, sample_gp_values, write_atomic, LabelOracle, LabeledOracle, RecordedOracle,
    RunRecord,
};
use crate::error::{Error, Result};
use crate::gp::PosteriorState;
use crate::kernel::NoiseModel;
use crate::selection::{run_loop, LoopConfig, Policy, Rule, ScoringInputs};
use crate::theory::{
    capacity_series, check_gamma_bound, check_schedule, check_convergence_bound, check_within_sample_bound,
    default_epsilon, itl_trajectory, markov_boundary, submodularity_ratio, BoundReport,
    MarkovBoundary, TheoryConstants, ConvergenceReport, RATIO_MAX_CARDINALITY, RATIO_MAX_POINTS,
};

/// Most runs a single ablation may launch.
pub const MAX_ABLATION_RUNS: usize = 1000;

const TRUTH_SALT: u64 = 0x51_7cc1_b727_220a;
const NOISE_SALT: u64 = 0x2545_f491_4f6c_dd1d;

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Worker threads; rayon's default when unset.
    pub jobs: Option<usize>,
}

impl RunOptions {
    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        match self.jobs {
            None => Ok(f()),
            Some(0) => Err(Error::config("jobs", "must be at least 1")),
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("jobs", e.to_string()))
                .map(|pool| pool.install(f)),
        }
    }
}

/// File-name form of a policy label.
pub fn policy_label(rule: &Rule) -> String {
    rule.to_string().replace(':', "-")
}

pub fn prior_state(domain: &Domain, hyper: &Hyper) -> Result<PosteriorState> {
    PosteriorState::prior(&domain.kernel, NoiseModel::homoscedastic(hyper.noise_variance())?)
}

/// One run of the selection loop on a prepared domain.
pub fn execute_run(
    cfg: &RunConfig,
    hyper: &Hyper,
    domain: &Domain,
    rule: &Rule,
    seed: u64,
) -> Result<RunRecord> {
    let prior = prior_state(domain, hyper)?;
    let policy = Policy {
        rule: rule.clone(),
        batch_size: hyper.batch_size,
        batch_mode: hyper.batch_mode,
        target_subsample: hyper.target_subsample,
        seed,
        noisy_targets: hyper.noisy_targets,
        multiset: hyper.multiset,
    };
    let (mut oracle, truth): (Box<dyn LabelOracle>, Option<Vec<f64>>) = match &domain.labels {
        Some(labels) => (Box::new(RecordedOracle::new(labels.clone())), None),
        None => {
            let truth = sample_gp_values(&domain.kernel, seed ^ TRUTH_SALT)?;
            (
                Box::new(LabeledOracle::new(truth.clone(), prior.noise().clone(), seed ^ NOISE_SALT)),
                Some(truth),
            )
        }
    };
    let mut inputs = ScoringInputs::new(prior.prior_covariance());
    if let Some(table) = &domain.softmax {
        inputs = inputs.with_softmax(table);
    }
    let loop_cfg = LoopConfig {
        rounds: cfg.rounds,
        candidate_size: hyper.candidate_size,
        relevant: domain.relevant.clone(),
        truth,
        record_time: cfg.record_time,
    };
    let mut record = run_loop(
        &prior,
        &domain.targets,
        &domain.sample,
        &policy,
        &inputs,
        oracle.as_mut(),
        &loop_cfg,
    )?;
    record.config = serde_json::json!({
        "name": cfg.name,
        "rule": rule,
        "seed": seed,
        "hyper": hyper,
        "config": cfg,
    });
    Ok(record)
}

/// Runs every `(policy, seed)` pair; results come back in policy-major order.
pub fn run_all(cfg: &RunConfig, hyper: &Hyper, opts: &RunOptions) -> Result<Vec<(Rule, u64, RunRecord)>> {
    cfg.validate()?;
    opts.install(|| {
        let domains: Vec<Domain> = cfg
            .seeds
            .par_iter()
            .map(|&s| build_domain(cfg, hyper, s))
            .collect::<Result<_>>()?;
        for rule in &cfg.policies {
            if rule.needs_softmax() && domains[0].softmax.is_none() {
                return Err(Error::config(
                    "policies",
                    format!("rule {rule} needs domain.softmax_file"),
                ));
            }
        }
        let jobs: Vec<(usize, usize)> = (0..cfg.policies.len())
            .flat_map(|p| (0..cfg.seeds.len()).map(move |s| (p, s)))
            .collect();
        jobs.par_iter()
            .map(|&(p, s)| {
                let rule = &cfg.policies[p];
                let seed = cfg.seeds[s];
                log::info!("running {rule} with seed {seed}");
                execute_run(cfg, hyper, &domains[s], rule, seed).map(|r| (rule.clone(), seed, r))
            })
            .collect()
    })?
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutputs {
    pub records: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub summary: PathBuf,
    pub rows: Vec<MetricsRow>,
}

/// Runs the configured experiment and writes
/// `records/<policy>_seed<s>.jsonl`, `metrics.csv` and `summary.csv`.
pub fn cmd_run(cfg: &RunConfig, out: &Path, opts: &RunOptions) -> Result<RunOutputs> {
    let hyper = cfg.hyper()?;
    let results = run_all(cfg, &hyper, opts)?;
    let records_dir = out.join("records");
    fs::create_dir_all(&records_dir)?;
    let mut records = Vec::with_capacity(results.len());
    let mut rows = Vec::new();
    for (rule, seed, record) in &results {
        let label = policy_label(rule);
        let path = records_dir.join(format!("{label}_seed{seed}.jsonl"));
        persist_run(record, &path)?;
        records.push(path);
        rows.extend(rows_from_record(&label, *seed, record));
    }
    let metrics = out.join("metrics.csv");
    write_atomic(&metrics, format_metrics(&rows).as_bytes())?;
    let summary = out.join("summary.csv");
    write_atomic(&summary, format_summary(&summarize(&rows)).as_bytes())?;
    Ok(RunOutputs {
        records,
        metrics,
        summary,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum RatioDiagnostic {
    Computed { k: usize, value: f64 },
    Skipped { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryDiagnostics {
    pub seed: u64,
    pub rounds: usize,
    pub constants: TheoryConstants,
    pub chosen: Vec<usize>,
    pub step_uncertainty: Vec<f64>,
    pub gamma_bound: BoundReport,
    pub within_sample_bound: BoundReport,
    pub convergence_bound: ConvergenceReport,
    pub schedule: BoundReport,
    pub submodularity_ratio: RatioDiagnostic,
}

fn first_seed(cfg: &RunConfig) -> Result<u64> {
    cfg.seeds
        .first()
        .copied()
        .ok_or_else(|| Error::config("seeds", "at least one seed is required"))
}

/// Runs the bound checkers along an ITL trajectory on the first seed's domain
/// and writes `theory.json`.
pub fn cmd_theory(cfg: &RunConfig, out: &Path, epsilon: Option<f64>) -> Result<TheoryDiagnostics> {
    cfg.validate()?;
    let hyper = cfg.hyper()?;
    let seed = first_seed(cfg)?;
    let domain = build_domain(cfg, &hyper, seed)?;
    if !domain.sample_within_targets() {
        return Err(Error::config(
            "domain.targets.mode",
            "theory checks need the sample space inside the target space (mode same or superset)",
        ));
    }
    let prior = prior_state(&domain, &hyper)?;
    let traj = itl_trajectory(&prior, &domain.targets, &domain.sample, cfg.rounds)?;
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(&prior));
    let capacity = capacity_series(&prior, &domain.sample, cfg.rounds)?;
    let submodularity_ratio = if domain.sample.len() > RATIO_MAX_POINTS {
        RatioDiagnostic::Skipped {
            reason: format!(
                "|S| = {} exceeds the enumeration limit of {RATIO_MAX_POINTS}",
                domain.sample.len()
            ),
        }
    } else {
        let k = hyper.batch_size.min(RATIO_MAX_CARDINALITY).min(domain.sample.len());
        RatioDiagnostic::Computed {
            k,
            value: submodularity_ratio(&prior, &domain.targets, &domain.sample, k)?,
        }
    };
    let diag = TheoryDiagnostics {
        seed,
        rounds: cfg.rounds,
        constants: TheoryConstants::from_prior(&prior, &domain.sample)?,
        chosen: traj.chosen.clone(),
        step_uncertainty: traj.step_uncertainty.clone(),
        gamma_bound: check_gamma_bound(&traj)?,
        within_sample_bound: check_within_sample_bound(&traj)?,
        convergence_bound: check_convergence_bound(&traj, epsilon)?,
        schedule: check_schedule(&traj, &capacity)?,
        submodularity_ratio,
    };
    fs::create_dir_all(out)?;
    let text = serde_json::to_string_pretty(&diag).map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&out.join("theory.json"), text.as_bytes())?;
    Ok(diag)
}

/// Computes a Markov boundary of domain point `x` at the prior of the first
/// seed's domain and writes `markov.json`.
pub fn cmd_markov(cfg: &RunConfig, out: &Path, x: usize, epsilon: Option<f64>) -> Result<MarkovBoundary> {
    cfg.validate()?;
    let hyper = cfg.hyper()?;
    let domain = build_domain(cfg, &hyper, first_seed(cfg)?)?;
    if x >= domain.len() {
        return Err(Error::config(
            "x",
            format!("point {x} outside the domain of {} points", domain.len()),
        ));
    }
    let prior = prior_state(&domain, &hyper)?;
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(&prior));
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon", "must be positive"));
    }
    let boundary = markov_boundary(&prior, &domain.sample, x, epsilon)?;
    fs::create_dir_all(out)?;
    let text = serde_json::to_string_pretty(&boundary).map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(&out.join("markov.json"), text.as_bytes())?;
    Ok(boundary)
}

pub const ABLATION_HEADER: &str = "noise_std,candidate_size,target_subsample,target_size,batch_mode,policy,seeds,mean_variance,mean_variance_se,retrieval_count,retrieval_count_se,mean_variance_display";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub hyper: Hyper,
    pub policy: String,
    pub seeds: usize,
    /// Final-round mean variance over the targets, mean and standard error.
    pub mean_variance: (f64, f64),
    pub retrieval_count: (f64, f64),
}

fn or_all(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |v| v.to_string())
}

pub fn format_ablation(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{:?},{},{},{},{},{},{},{:?},{:?},{:?},{:?},{:.3e} ± {:.1e}\n",
            r.hyper.noise_std,
            or_all(r.hyper.candidate_size),
            or_all(r.hyper.target_subsample),
            or_all(r.hyper.target_size),
            r.hyper.batch_mode,
            r.policy,
            r.seeds,
            r.mean_variance.0,
            r.mean_variance.1,
            r.retrieval_count.0,
            r.retrieval_count.1,
            r.mean_variance.0,
            r.mean_variance.1,
        ));
    }
    out
}

/// Runs the cross product of `grid` (or the config's `[ablate]` table) and
/// writes `ablation.csv` with one row per setting and policy.
pub fn cmd_ablate(
    cfg: &RunConfig,
    out: &Path,
    grid: Option<&AblationGrid>,
    opts: &RunOptions,
) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let grid = grid.or(cfg.ablate.as_ref()).cloned().unwrap_or_default();
    let cells = grid.cells();
    let runs = cells.len() * cfg.policies.len() * cfg.seeds.len();
    if runs > MAX_ABLATION_RUNS {
        return Err(Error::config(
            "ablate",
            format!("grid requires {runs} runs; the limit is {MAX_ABLATION_RUNS}"),
        ));
    }
    let mut rows = Vec::new();
    for cell in &cells {
        let hyper = cfg.hyper_with(cell)?;
        let results = run_all(cfg, &hyper, opts)?;
        for rule in &cfg.policies {
            let finals: Vec<_> = results
                .iter()
                .filter(|(r, _, _)| r == rule)
                .filter_map(|(_, _, rec)| rec.rounds.last())
                .collect();
            rows.push(AblationRow {
                hyper: hyper.clone(),
                policy: policy_label(rule),
                seeds: finals.len(),
                mean_variance: mean_stderr(&finals.iter().map(|e| e.mean_variance).collect::<Vec<_>>()),
                retrieval_count: mean_stderr(
                    &finals.iter().map(|e| e.retrieval_count as f64).collect::<Vec<_>>(),
                ),
            });
        }
    }
    fs::create_dir_all(out)?;
    write_atomic(&out.join("ablation.csv"), format_ablation(&rows).as_bytes())?;
    Ok(rows)
}
