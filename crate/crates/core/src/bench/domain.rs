//! Materializes the domain described by a [`RunConfig`].
//!
//! Sample points occupy domain positions `0..|S|`; separate target points
//! follow them.

use std::collections::HashMap;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{DomainConfig, Hyper, PointSet, RunConfig, TargetConfig, TargetMode};
use crate::datasets::{load_embeddings, load_labels, load_softmax};
use crate::error::{Error, Result};
use crate::kernel::{gram, KernelMatrix, Point};
use crate::selection::SoftmaxTable;

const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct Domain {
    pub points: Vec<Point>,
    pub sample: Vec<usize>,
    pub targets: Vec<usize>,
    pub relevant: Vec<usize>,
    pub kernel: KernelMatrix,
    pub softmax: Option<SoftmaxTable>,
    /// Recorded labels by domain position.
    pub labels: Option<HashMap<usize, f64>>,
}

impl Domain {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sample_within_targets(&self) -> bool {
        self.sample.iter().all(|s| self.targets.binary_search(s).is_ok())
    }
}

fn domain_rng(offset: u64, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(offset ^ seed.rotate_left(29) ^ 0xd1b5_4a32_d192_ed03)
}

/// Coordinates drawn from a generator. `default_count` fills a missing count.
pub fn generate(
    set: &PointSet,
    default_count: Option<usize>,
    field: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let count = |c: &Option<usize>| {
        c.or(default_count)
            .ok_or_else(|| Error::config(field, "count is required (or set selection.target_size)"))
    };
    Ok(match set {
        PointSet::Uniform { count: c, dim, low, high } => {
            let n = count(c)?;
            (0..n)
                .map(|_| (0..*dim).map(|_| rng.random_range(*low..*high)).collect())
                .collect()
        }
        PointSet::Grid { per_axis, dim, low, high } => {
            let total = per_axis
                .checked_pow(*dim as u32)
                .filter(|&t| t <= MAX_GRID_POINTS)
                .ok_or_else(|| Error::config(field, format!("grid exceeds {MAX_GRID_POINTS} points")))?;
            let step = if *per_axis > 1 {
                (high - low) / (*per_axis - 1) as f64
            } else {
                0.0
            };
            (0..total)
                .map(|mut i| {
                    let mut c = vec![0.0; *dim];
                    for v in c.iter_mut().rev() {
                        *v = low + step * (i % per_axis) as f64;
                        i /= per_axis;
                    }
                    c
                })
                .collect()
        }
        PointSet::Disk { count: c, center, radius } => {
            let n = count(c)?;
            let d = center.len();
            (0..n)
                .map(|_| {
                    let dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                    let r = radius * rng.random::<f64>().powf(1.0 / d as f64);
                    center.iter().zip(&dir).map(|(c, v)| c + r * v / norm).collect()
                })
                .collect()
        }
        PointSet::Points { coords } => coords.clone(),
    })
}

fn draw_subset(
    sample: &[usize],
    t: &TargetConfig,
    hyper: &Hyper,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let m = t
        .count
        .or(hyper.target_size)
        .ok_or_else(|| Error::config("domain.targets.count", "required for subset targets"))?;
    if m > sample.len() {
        return Err(Error::config(
            "domain.targets.count",
            format!("{m} targets exceed the {} sample points", sample.len()),
        ));
    }
    let mut out: Vec<usize> = sample_indices(rng, sample.len(), m)
        .into_iter()
        .map(|i| sample[i])
        .collect();
    out.sort_unstable();
    Ok(out)
}

fn index_sets(
    mode: TargetMode,
    n_sample: usize,
    n_extra: usize,
    t: &TargetConfig,
    hyper: &Hyper,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let sample: Vec<usize> = (0..n_sample).collect();
    let targets = match mode {
        TargetMode::Disjoint => (n_sample..n_sample + n_extra).collect(),
        TargetMode::Superset => (0..n_sample + n_extra).collect(),
        TargetMode::Same => sample.clone(),
        TargetMode::Subset => draw_subset(&sample, t, hyper, rng)?,
    };
    if targets.is_empty() {
        return Err(Error::config("domain.targets", "target space is empty"));
    }
    Ok((sample, targets))
}

fn explicit_relevant(list: &[usize], n_sample: usize) -> Result<Vec<usize>> {
    if let Some(bad) = list.iter().find(|&&i| i >= n_sample) {
        return Err(Error::config(
            "domain.relevant",
            format!("position {bad} outside the {n_sample} sample points"),
        ));
    }
    let mut v = list.to_vec();
    v.sort_unstable();
    v.dedup();
    Ok(v)
}

/// Builds the domain for one run seed.
pub fn build_domain(cfg: &RunConfig, hyper: &Hyper, seed: u64) -> Result<Domain> {
    match &cfg.domain {
        DomainConfig::Synthetic {
            sample,
            targets,
            relevant_radius,
            relevant,
            seed: offset,
        } => {
            let mut rng = domain_rng(*offset, seed);
            let s_coords = generate(sample, None, "domain.sample", &mut rng)?;
            if s_coords.is_empty() {
                return Err(Error::config("domain.sample", "sample space is empty"));
            }
            let extra = match (targets.mode, &targets.points) {
                (TargetMode::Disjoint | TargetMode::Superset, Some(p)) => {
                    generate(p, hyper.target_size, "domain.targets.points", &mut rng)?
                }
                (TargetMode::Disjoint | TargetMode::Superset, None) => {
                    return Err(Error::config("domain.targets.points", "required for this mode"))
                }
                _ => Vec::new(),
            };
            let dim = s_coords[0].len();
            if s_coords.iter().chain(&extra).any(|c| c.len() != dim) {
                return Err(Error::config("domain", "sample and target points differ in dimension"));
            }
            let n_sample = s_coords.len();
            let (sample_ids, target_ids) =
                index_sets(targets.mode, n_sample, extra.len(), targets, hyper, &mut rng)?;
            let coords: Vec<Vec<f64>> = s_coords.into_iter().chain(extra).collect();
            let relevant = match (relevant, relevant_radius) {
                (Some(list), _) => explicit_relevant(list, n_sample)?,
                (None, Some(r)) => (0..n_sample)
                    .filter(|&s| {
                        target_ids.iter().any(|&a| {
                            coords[s]
                                .iter()
                                .zip(&coords[a])
                                .map(|(x, y)| (x - y).powi(2))
                                .sum::<f64>()
                                .sqrt()
                                <= *r
                        })
                    })
                    .collect(),
                (None, None) => Vec::new(),
            };
            let points: Vec<Point> = coords
                .into_iter()
                .enumerate()
                .map(|(i, c)| Point::with_coords(i, c))
                .collect();
            let kernel = gram(&cfg.kernel, &points).map_err(|e| Error::config("kernel", e.to_string()))?;
            Ok(Domain {
                points,
                sample: sample_ids,
                targets: target_ids,
                relevant,
                kernel,
                softmax: None,
                labels: None,
            })
        }
        DomainConfig::Embeddings {
            sample_file,
            target_file,
            targets,
            labels_file,
            softmax_file,
            relevant,
            seed: offset,
        } => {
            let mut rng = domain_rng(*offset, seed);
            let s_points = load_embeddings(sample_file)?;
            if s_points.is_empty() {
                return Err(Error::config("domain.sample_file", "sample space is empty"));
            }
            let extra = match (targets.mode, target_file) {
                (TargetMode::Disjoint | TargetMode::Superset, Some(f)) => load_embeddings(f)?,
                (TargetMode::Disjoint | TargetMode::Superset, None) => {
                    return Err(Error::config("domain.target_file", "required for this mode"))
                }
                _ => Vec::new(),
            };
            let n_sample = s_points.len();
            let points: Vec<Point> = s_points.into_iter().chain(extra).collect();
            let mut position = HashMap::with_capacity(points.len());
            for (i, p) in points.iter().enumerate() {
                if position.insert(p.index, i).is_some() {
                    return Err(Error::config(
                        "domain",
                        format!("id {} appears in both the sample and target files", p.index),
                    ));
                }
            }
            let dim = points[0].embedding.as_ref().map_or(0, Vec::len);
            if points.iter().any(|p| p.embedding.as_ref().map_or(0, Vec::len) != dim) {
                return Err(Error::config("domain", "sample and target embeddings differ in dimension"));
            }
            cfg.kernel
                .validate(Some(dim))
                .map_err(|e| Error::config("kernel", e.to_string()))?;
            let (sample_ids, target_ids) =
                index_sets(targets.mode, n_sample, points.len() - n_sample, targets, hyper, &mut rng)?;
            let relevant = match relevant {
                Some(list) => explicit_relevant(list, n_sample)?,
                None => Vec::new(),
            };
            let labels = match labels_file {
                Some(f) => Some(
                    load_labels(f)?
                        .into_iter()
                        .filter_map(|(id, y)| position.get(&id).map(|&i| (i, y)))
                        .collect(),
                ),
                None => None,
            };
            let softmax = match softmax_file {
                Some(f) => {
                    let (ids, table) = load_softmax(f)?;
                    let row_of: HashMap<usize, usize> =
                        ids.iter().enumerate().map(|(r, &id)| (id, r)).collect();
                    let rows = points
                        .iter()
                        .map(|p| {
                            let r = row_of.get(&p.index).ok_or_else(|| {
                                Error::Data(format!("softmax table has no row for id {}", p.index))
                            })?;
                            Ok(table.row(*r)?.to_vec())
                        })
                        .collect::<Result<Vec<_>>>()?;
                    Some(SoftmaxTable::new(rows)?)
                }
                None => None,
            };
            let kernel = gram(&cfg.kernel, &points).map_err(|e| Error::config("kernel", e.to_string()))?;
            Ok(Domain {
                points,
                sample: sample_ids,
                targets: target_ids,
                relevant,
                kernel,
                softmax,
                labels,
            })
        }
    }
}
