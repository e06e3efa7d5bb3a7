//! Experiment configuration.
//!
//! ```toml
//! rounds = 50
//! seeds = [0, 1, 2]
//! policies = ["itl", "ctl", "random"]
//! preset = "cifar-like"          # optional
//!
//! [selection]                    # every field optional; overrides the preset
//! batch_size = 10                # b
//! batch_mode = "bace"            # or "topb"
//! target_subsample = 10          # m
//! target_size = 100              # M, targets drawn when a generator omits `count`
//! candidate_size = 1000          # k
//! noise_std = 1.0                # ρ; the noise variance is ρ²
//!
//! [kernel]
//! family = "gaussian"
//! lengthscale = 0.1
//!
//! [domain]
//! source = "synthetic"
//! relevant_radius = 0.1
//! sample = { generator = "uniform", count = 400, dim = 2 }
//! targets = { mode = "disjoint", points = { generator = "disk", center = [0.5, 0.5], radius = 0.1 } }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::selection::{BatchMode, Rule};

/// Named hyperparameter profiles for the two image benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    MnistLike,
    CifarLike,
}

impl Preset {
    pub fn selection(self) -> SelectionConfig {
        let (b, m, big_m, rho, k) = match self {
            Preset::MnistLike => (1, 3, 30, 0.01, 1000),
            Preset::CifarLike => (10, 10, 100, 1.0, 1000),
        };
        SelectionConfig {
            batch_size: Some(b),
            target_subsample: Some(m),
            target_size: Some(big_m),
            noise_std: Some(rho),
            candidate_size: Some(k),
            ..SelectionConfig::default()
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-like" => Ok(Preset::MnistLike),
            "cifar-like" => Ok(Preset::CifarLike),
            other => Err(Error::config(
                "preset",
                format!("unknown preset `{other}`; expected mnist-like or cifar-like"),
            )),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::MnistLike => "mnist-like",
            Preset::CifarLike => "cifar-like",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub batch_size: Option<usize>,
    pub batch_mode: Option<BatchMode>,
    pub target_subsample: Option<usize>,
    pub target_size: Option<usize>,
    pub candidate_size: Option<usize>,
    pub noise_std: Option<f64>,
    pub noisy_targets: Option<bool>,
    pub multiset: Option<bool>,
}

impl SelectionConfig {
    /// Fields set in `self` win over those in `base`.
    pub fn over(&self, base: &SelectionConfig) -> SelectionConfig {
        SelectionConfig {
            batch_size: self.batch_size.or(base.batch_size),
            batch_mode: self.batch_mode.or(base.batch_mode),
            target_subsample: self.target_subsample.or(base.target_subsample),
            target_size: self.target_size.or(base.target_size),
            candidate_size: self.candidate_size.or(base.candidate_size),
            noise_std: self.noise_std.or(base.noise_std),
            noisy_targets: self.noisy_targets.or(base.noisy_targets),
            multiset: self.multiset.or(base.multiset),
        }
    }
}

pub const DEFAULT_NOISE_STD: f64 = 0.1;

/// Selection hyperparameters after applying the preset and defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub batch_size: usize,
    pub batch_mode: BatchMode,
    pub target_subsample: Option<usize>,
    pub target_size: Option<usize>,
    pub candidate_size: Option<usize>,
    pub noise_std: f64,
    pub noisy_targets: bool,
    pub multiset: bool,
}

impl Hyper {
    pub fn noise_variance(&self) -> f64 {
        self.noise_std * self.noise_std
    }
}

fn default_high() -> f64 {
    1.0
}

/// A generator of coordinate points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "snake_case", deny_unknown_fields)]
pub enum PointSet {
    /// Uniform in the box `[low, high]^dim`.
    Uniform {
        count: Option<usize>,
        dim: usize,
        #[serde(default)]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
    /// Regular grid with `per_axis` points along each axis, endpoints included.
    Grid {
        per_axis: usize,
        dim: usize,
        #[serde(default)]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
    /// Uniform in a ball.
    Disk {
        count: Option<usize>,
        center: Vec<f64>,
        radius: f64,
    },
    Points { coords: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// Targets are separate points; `A ∩ S = ∅`.
    Disjoint,
    /// Targets are drawn from the sample space.
    Subset,
    /// `A = S`.
    Same,
    /// Targets are the sample space plus separate points; `S ⊂ A`.
    Superset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub mode: TargetMode,
    /// Extra target points (synthetic domains, disjoint or superset mode).
    #[serde(default)]
    pub points: Option<PointSet>,
    /// Number of targets drawn from the sample space (subset mode).
    #[serde(default)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Synthetic {
        sample: PointSet,
        targets: TargetConfig,
        /// Sample points within this distance of a target count as relevant.
        #[serde(default)]
        relevant_radius: Option<f64>,
        /// Relevant points as positions in the sample space.
        #[serde(default)]
        relevant: Option<Vec<usize>>,
        /// Offset mixed into every run seed when generating points.
        #[serde(default)]
        seed: u64,
    },
    Embeddings {
        sample_file: PathBuf,
        #[serde(default)]
        target_file: Option<PathBuf>,
        targets: TargetConfig,
        #[serde(default)]
        labels_file: Option<PathBuf>,
        #[serde(default)]
        softmax_file: Option<PathBuf>,
        #[serde(default)]
        relevant: Option<Vec<usize>>,
        #[serde(default)]
        seed: u64,
    },
}

/// Axes of an ablation grid. Unset axes keep the base configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationGrid {
    #[serde(default)]
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub candidate_size: Vec<usize>,
    #[serde(default)]
    pub target_subsample: Vec<usize>,
    #[serde(default)]
    pub target_size: Vec<usize>,
    #[serde(default)]
    pub batch_mode: Vec<BatchMode>,
}

impl AblationGrid {
    /// Parses `axis=v1,v2;axis=v1`.
    pub fn parse(spec: &str) -> Result<Self> {
        fn values<T: FromStr>(axis: &str, raw: &str) -> Result<Vec<T>> {
            raw.split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::config(format!("ablate.{axis}"), format!("bad value `{v}`")))
                })
                .collect()
        }
        let mut grid = AblationGrid::default();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (axis, raw) = part
                .split_once('=')
                .ok_or_else(|| Error::config("ablate", format!("expected axis=values, got `{part}`")))?;
            let axis = axis.trim();
            match axis {
                "noise_std" | "rho" => grid.noise_std = values(axis, raw)?,
                "candidate_size" | "k" => grid.candidate_size = values(axis, raw)?,
                "target_subsample" | "m" => grid.target_subsample = values(axis, raw)?,
                "target_size" | "M" => grid.target_size = values(axis, raw)?,
                "batch_mode" => grid.batch_mode = values(axis, raw)?,
                other => return Err(Error::config("ablate", format!("unknown axis `{other}`"))),
            }
        }
        Ok(grid)
    }

    /// Selection overrides for every cell of the grid, in row-major order.
    pub fn cells(&self) -> Vec<SelectionConfig> {
        fn axis<T: Clone>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().cloned().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for rho in axis(&self.noise_std) {
            for k in axis(&self.candidate_size) {
                for m in axis(&self.target_subsample) {
                    for big_m in axis(&self.target_size) {
                        for mode in axis(&self.batch_mode) {
                            out.push(SelectionConfig {
                                noise_std: rho,
                                candidate_size: k,
                                target_subsample: m,
                                target_size: big_m,
                                batch_mode: mode,
                                ..SelectionConfig::default()
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub rounds: usize,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub policies: Vec<Rule>,
    #[serde(default)]
    pub selection: SelectionConfig,
    pub kernel: KernelSpec,
    pub domain: DomainConfig,
    /// Record per-round wall time. Off by default so outputs are reproducible
    /// byte for byte.
    #[serde(default)]
    pub record_time: bool,
    #[serde(default)]
    pub ablate: Option<AblationGrid>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .span()
                .map(|s| format!("byte {}", s.start))
                .unwrap_or_else(|| "config".to_string());
            Error::config(field, e.message().to_string())
        })
    }

    /// Loads a config; relative file paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        if let DomainConfig::Embeddings {
            sample_file,
            target_file,
            labels_file,
            softmax_file,
            ..
        } = &mut self.domain
        {
            for p in [Some(sample_file), target_file.as_mut(), labels_file.as_mut(), softmax_file.as_mut()]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
    }

    /// Selection hyperparameters: explicit fields, then the preset, then defaults.
    pub fn hyper(&self) -> Result<Hyper> {
        self.hyper_with(&SelectionConfig::default())
    }

    /// As [`RunConfig::hyper`] with `cell` taking precedence over everything.
    pub fn hyper_with(&self, cell: &SelectionConfig) -> Result<Hyper> {
        let base = self.preset.map(Preset::selection).unwrap_or_default();
        let s = cell.over(&self.selection.over(&base));
        let hyper = Hyper {
            batch_size: s.batch_size.unwrap_or(1),
            batch_mode: s.batch_mode.unwrap_or(BatchMode::Bace),
            target_subsample: s.target_subsample,
            target_size: s.target_size,
            candidate_size: s.candidate_size,
            noise_std: s.noise_std.unwrap_or(DEFAULT_NOISE_STD),
            noisy_targets: s.noisy_targets.unwrap_or(true),
            multiset: s.multiset.unwrap_or(false),
        };
        if hyper.batch_size == 0 {
            return Err(Error::config("selection.batch_size", "must be at least 1"));
        }
        if !(hyper.noise_std > 0.0) || !hyper.noise_std.is_finite() {
            return Err(Error::config("selection.noise_std", "must be positive and finite"));
        }
        for (field, v) in [
            ("selection.target_subsample", hyper.target_subsample),
            ("selection.target_size", hyper.target_size),
            ("selection.candidate_size", hyper.candidate_size),
        ] {
            if v == Some(0) {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if let Some(k) = hyper.candidate_size {
            if k < hyper.batch_size {
                return Err(Error::config(
                    "selection.candidate_size",
                    format!("{k} is smaller than the batch size {}", hyper.batch_size),
                ));
            }
        }
        Ok(hyper)
    }

    /// Checks everything that can be checked without touching the domain.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if self.policies.is_empty() {
            return Err(Error::config("policies", "at least one policy is required"));
        }
        let mut names: Vec<String> = self.policies.iter().map(|p| p.to_string()).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("policies", "policies must be distinct"));
        }
        self.kernel
            .validate(None)
            .map_err(|e| Error::config("kernel", e.to_string()))?;
        self.hyper()?;
        match &self.domain {
            DomainConfig::Synthetic {
                sample, targets, relevant_radius, ..
            } => {
                validate_points(sample, "domain.sample")?;
                validate_targets(targets, true)?;
                if let Some(r) = relevant_radius {
                    if !(*r >= 0.0) {
                        return Err(Error::config("domain.relevant_radius", "must be non-negative"));
                    }
                }
            }
            DomainConfig::Embeddings {
                sample_file,
                target_file,
                targets,
                labels_file,
                softmax_file,
                ..
            } => {
                validate_targets(targets, false)?;
                let needs_file = matches!(targets.mode, TargetMode::Disjoint | TargetMode::Superset);
                if needs_file && target_file.is_none() {
                    return Err(Error::config(
                        "domain.target_file",
                        "required for disjoint and superset targets",
                    ));
                }
                for (field, p) in [
                    ("domain.sample_file", Some(sample_file)),
                    ("domain.target_file", target_file.as_ref()),
                    ("domain.labels_file", labels_file.as_ref()),
                    ("domain.softmax_file", softmax_file.as_ref()),
                ] {
                    if let Some(p) = p {
                        if !p.exists() {
                            return Err(Error::config(field, format!("{} does not exist", p.display())));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Replaces the seeds (command-line override).
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.preset = Some(preset);
        self
    }
}

fn validate_points(p: &PointSet, field: &str) -> Result<()> {
    let bad = |msg: &str| Err(Error::config(field, msg));
    match p {
        PointSet::Uniform { count, dim, low, high } => {
            if *dim == 0 {
                return bad("dim must be at least 1");
            }
            if count == &Some(0) {
                return bad("count must be at least 1");
            }
            if !(low < high) {
                return bad("low must be below high");
            }
        }
        PointSet::Grid { per_axis, dim, low, high } => {
            if *dim == 0 || *per_axis == 0 {
                return bad("dim and per_axis must be at least 1");
            }
            if !(low <= high) {
                return bad("low must not exceed high");
            }
        }
        PointSet::Disk { count, center, radius } => {
            if center.is_empty() {
                return bad("center must have at least one coordinate");
            }
            if count == &Some(0) {
                return bad("count must be at least 1");
            }
            if !(*radius >= 0.0) {
                return bad("radius must be non-negative");
            }
        }
        PointSet::Points { coords } => {
            if coords.is_empty() {
                return bad("coords must not be empty");
            }
            let d = coords[0].len();
            if d == 0 || coords.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
                return bad("coords must be finite rows of equal, positive length");
            }
        }
    }
    Ok(())
}

fn validate_targets(t: &TargetConfig, synthetic: bool) -> Result<()> {
    match t.mode {
        TargetMode::Disjoint | TargetMode::Superset if synthetic => match &t.points {
            Some(p) => validate_points(p, "domain.targets.points"),
            None => Err(Error::config(
                "domain.targets.points",
                "required for disjoint and superset targets",
            )),
        },
        TargetMode::Subset if t.count == Some(0) => {
            Err(Error::config("domain.targets.count", "must be at least 1"))
        }
        _ => Ok(()),
    }
}
