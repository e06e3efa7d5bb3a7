//! Kernel functions, noise models and Gram-matrix construction over finite domains.
//!
//! Every kernel here is a closed-form expression; Matérn is restricted to the
//! half-integer smoothness values that have one. The embedding kernel
//! `k(a, b) = φ(a)ᵀ Σ φ(b)` is the linearised-network kernel whose induced
//! correlation is the cosine similarity of the embeddings when `Σ = I`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of a finite domain. `index` is an external identifier; algorithms
/// address points by their position in the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coords: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl Point {
    pub fn with_coords(index: usize, coords: Vec<f64>) -> Self {
        Point {
            index,
            coords: Some(coords),
            embedding: None,
        }
    }

    pub fn with_embedding(index: usize, embedding: Vec<f64>) -> Self {
        Point {
            index,
            coords: None,
            embedding: Some(embedding),
        }
    }

    fn coords(&self) -> Result<&[f64]> {
        self.coords
            .as_deref()
            .ok_or_else(|| Error::input(format!("point {} has no coordinates", self.index)))
    }

    fn embedding(&self) -> Result<&[f64]> {
        self.embedding
            .as_deref()
            .ok_or_else(|| Error::input(format!("point {} has no embedding", self.index)))
    }
}

/// Half-integer Matérn smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum MaternNu {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl MaternNu {
    pub fn value(self) -> f64 {
        match self {
            MaternNu::Half => 0.5,
            MaternNu::ThreeHalves => 1.5,
            MaternNu::FiveHalves => 2.5,
        }
    }
}

impl TryFrom<f64> for MaternNu {
    type Error = String;

    fn try_from(nu: f64) -> std::result::Result<Self, String> {
        match nu {
            x if x == 0.5 => Ok(MaternNu::Half),
            x if x == 1.5 => Ok(MaternNu::ThreeHalves),
            x if x == 2.5 => Ok(MaternNu::FiveHalves),
            _ => Err(format!("unsupported Matérn nu {nu}; expected 0.5, 1.5 or 2.5")),
        }
    }
}

impl From<MaternNu> for f64 {
    fn from(nu: MaternNu) -> f64 {
        nu.value()
    }
}

/// Prior covariance `Σ` of the latent weights of an embedding kernel.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentCovariance {
    #[default]
    Identity,
    Provided(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `xᵀx'`
    Linear,
    /// `exp(-‖x - x'‖₂² / 2h²)`
    Gaussian { lengthscale: f64 },
    /// `exp(-‖x - x'‖₁ / h)`
    Laplace { lengthscale: f64 },
    Matern { nu: MaternNu, lengthscale: f64 },
    /// `φ(x)ᵀ Σ φ(x')`
    Embedding {
        #[serde(default)]
        covariance: LatentCovariance,
    },
}

impl KernelSpec {
    pub fn gaussian(lengthscale: f64) -> Self {
        KernelSpec::Gaussian { lengthscale }
    }

    pub fn embedding_identity() -> Self {
        KernelSpec::Embedding {
            covariance: LatentCovariance::Identity,
        }
    }

    /// Checks hyperparameters. `embedding_dim` is the shared embedding
    /// dimension of the domain, when known.
    pub fn validate(&self, embedding_dim: Option<usize>) -> Result<()> {
        match self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Gaussian { lengthscale }
            | KernelSpec::Laplace { lengthscale }
            | KernelSpec::Matern { lengthscale, .. } => {
                if lengthscale.is_finite() && *lengthscale > 0.0 {
                    Ok(())
                } else {
                    Err(Error::input(format!("lengthscale must be positive, got {lengthscale}")))
                }
            }
            KernelSpec::Embedding { covariance } => match covariance {
                LatentCovariance::Identity => Ok(()),
                LatentCovariance::Provided(rows) => {
                    let p = rows.len();
                    if let Some(dim) = embedding_dim {
                        if dim != p {
                            return Err(Error::input(format!(
                                "latent covariance is {p}x{p} but embeddings have dimension {dim}"
                            )));
                        }
                    }
                    if rows.iter().any(|r| r.len() != p) {
                        return Err(Error::input("latent covariance is not square"));
                    }
                    let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
                    if m.iter().any(|v| !v.is_finite()) {
                        return Err(Error::input("latent covariance has non-finite entries"));
                    }
                    let scale = m.amax().max(1.0);
                    if (&m - m.transpose()).amax() > 1e-12 * scale {
                        return Err(Error::input("latent covariance is not symmetric"));
                    }
                    let min_eig = SymmetricEigen::new(m).eigenvalues.min();
                    if min_eig < -1e-10 * scale {
                        return Err(Error::input(format!(
                            "latent covariance is not PSD (min eigenvalue {min_eig})"
                        )));
                    }
                    Ok(())
                }
            },
        }
    }

    pub fn is_stationary(&self) -> bool {
        matches!(
            self,
            KernelSpec::Gaussian { .. } | KernelSpec::Laplace { .. } | KernelSpec::Matern { .. }
        )
    }
}

fn check_dims(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Evaluates `k(a, b)`.
pub fn eval_kernel(spec: &KernelSpec, a: &Point, b: &Point) -> Result<f64> {
    let value = match spec {
        KernelSpec::Linear => {
            let (x, y) = (a.coords()?, b.coords()?);
            check_dims(x, y)?;
            dot(x, y)
        }
        KernelSpec::Gaussian { lengthscale } => {
            let (x, y) = (a.coords()?, b.coords()?);
            check_dims(x, y)?;
            (-sq_euclidean(x, y) / (2.0 * lengthscale * lengthscale)).exp()
        }
        KernelSpec::Laplace { lengthscale } => {
            let (x, y) = (a.coords()?, b.coords()?);
            check_dims(x, y)?;
            (-l1(x, y) / lengthscale).exp()
        }
        KernelSpec::Matern { nu, lengthscale } => {
            let (x, y) = (a.coords()?, b.coords()?);
            check_dims(x, y)?;
            let r = sq_euclidean(x, y).sqrt() / lengthscale;
            matern(*nu, r)
        }
        KernelSpec::Embedding { covariance } => {
            let (x, y) = (a.embedding()?, b.embedding()?);
            check_dims(x, y)?;
            match covariance {
                LatentCovariance::Identity => dot(x, y),
                LatentCovariance::Provided(sigma) => {
                    if sigma.len() != x.len() {
                        return Err(Error::input(format!(
                            "latent covariance dimension {} does not match embedding dimension {}",
                            sigma.len(),
                            x.len()
                        )));
                    }
                    sigma
                        .iter()
                        .zip(x)
                        .map(|(row, xi)| xi * dot(row, y))
                        .sum()
                }
            }
        }
    };
    Ok(value)
}

fn matern(nu: MaternNu, r: f64) -> f64 {
    match nu {
        MaternNu::Half => (-r).exp(),
        MaternNu::ThreeHalves => {
            let s = 3f64.sqrt() * r;
            (1.0 + s) * (-s).exp()
        }
        MaternNu::FiveHalves => {
            let s = 5f64.sqrt() * r;
            (1.0 + s + 5.0 * r * r / 3.0) * (-s).exp()
        }
    }
}

/// Cosine similarity of two embeddings.
pub fn cosine_similarity(a: &Point, b: &Point) -> Result<f64> {
    let (x, y) = (a.embedding()?, b.embedding()?);
    check_dims(x, y)?;
    let nx = dot(x, x).sqrt();
    let ny = dot(y, y).sqrt();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate(format!(
            "zero-norm embedding at point {}",
            if nx == 0.0 { a.index } else { b.index }
        )));
    }
    Ok((dot(x, y) / (nx * ny)).clamp(-1.0, 1.0))
}

/// Asymptotic order of the information capacity `γₙ` for a kernel family
/// (`d` is the input dimension). Informational only.
pub fn gamma_rate_label(spec: &KernelSpec) -> &'static str {
    match spec {
        KernelSpec::Linear | KernelSpec::Embedding { .. } => "O(d log n)",
        KernelSpec::Gaussian { .. } => "Õ(log^{d+1} n)",
        KernelSpec::Laplace { .. } => "Õ(n^{d/(1+d)} log^{1/(1+d)} n)",
        KernelSpec::Matern { .. } => "Õ(n^{d/(2ν+d)} log^{2ν/(2ν+d)} n)",
    }
}

/// The rate from [`gamma_rate_label`] evaluated without constants or the
/// log factors hidden by `Õ`'s leading term. Useful to scale plots.
pub fn gamma_rate_magnitude(spec: &KernelSpec, n: f64, d: usize) -> f64 {
    let d = d as f64;
    let ln = n.max(1.0).ln().max(f64::MIN_POSITIVE);
    match spec {
        KernelSpec::Linear | KernelSpec::Embedding { .. } => d * ln,
        KernelSpec::Gaussian { .. } => ln.powf(d + 1.0),
        KernelSpec::Laplace { .. } => n.powf(d / (1.0 + d)) * ln.powf(1.0 / (1.0 + d)),
        KernelSpec::Matern { nu, .. } => {
            let nu = nu.value();
            n.powf(d / (2.0 * nu + d)) * ln.powf(2.0 * nu / (2.0 * nu + d))
        }
    }
}

/// Observation-noise variance `ρ²(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Homoscedastic(f64),
    Heteroscedastic(Vec<f64>),
}

impl NoiseModel {
    pub fn homoscedastic(variance: f64) -> Result<Self> {
        let m = NoiseModel::Homoscedastic(variance);
        m.validate(None)?;
        Ok(m)
    }

    pub fn heteroscedastic(variances: Vec<f64>) -> Result<Self> {
        let n = variances.len();
        let m = NoiseModel::Heteroscedastic(variances);
        m.validate(Some(n))?;
        Ok(m)
    }

    pub fn validate(&self, domain_len: Option<usize>) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self {
            NoiseModel::Homoscedastic(v) if ok(*v) => Ok(()),
            NoiseModel::Homoscedastic(v) => {
                Err(Error::input(format!("noise variance must be positive, got {v}")))
            }
            NoiseModel::Heteroscedastic(vs) => {
                if let Some(n) = domain_len {
                    if vs.len() != n {
                        return Err(Error::input(format!(
                            "heteroscedastic noise has {} entries for a domain of {n}",
                            vs.len()
                        )));
                    }
                }
                match vs.iter().position(|v| !ok(*v)) {
                    Some(i) => Err(Error::input(format!(
                        "noise variance at {i} must be positive, got {}",
                        vs[i]
                    ))),
                    None => Ok(()),
                }
            }
        }
    }

    /// `ρ²` at domain position `i`.
    pub fn variance(&self, i: usize) -> f64 {
        match self {
            NoiseModel::Homoscedastic(v) => *v,
            NoiseModel::Heteroscedastic(vs) => vs[i],
        }
    }

    pub fn max_variance(&self) -> f64 {
        match self {
            NoiseModel::Homoscedastic(v) => *v,
            NoiseModel::Heteroscedastic(vs) => vs.iter().copied().fold(0.0, f64::max),
        }
    }
}

/// Dense symmetric Gram matrix over an ordered list of points.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub ids: Vec<usize>,
}

impl KernelMatrix {
    /// Wraps a precomputed symmetric matrix; ids default to positions.
    pub fn from_matrix(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::input("Gram matrix must be square"));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("Gram matrix has non-finite entries"));
        }
        let scale = entries.amax().max(1.0);
        if (&entries - entries.transpose()).amax() > 1e-12 * scale {
            return Err(Error::input("Gram matrix is not symmetric"));
        }
        if entries.diagonal().iter().any(|d| *d < 0.0) {
            return Err(Error::input("Gram matrix has a negative diagonal entry"));
        }
        let ids = (0..entries.nrows()).collect();
        Ok(KernelMatrix { entries, ids })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn max_diagonal(&self) -> f64 {
        self.entries.diagonal().iter().copied().fold(0.0, f64::max)
    }
}

/// Builds the Gram matrix `K[i][j] = k(points[i], points[j])`.
///
/// Rows are evaluated in parallel; each entry is computed independently so
/// the result does not depend on the thread count.
pub fn gram(spec: &KernelSpec, points: &[Point]) -> Result<KernelMatrix> {
    use rayon::prelude::*;

    if points.is_empty() {
        return Err(Error::input("cannot build a Gram matrix over zero points"));
    }
    spec.validate(points.iter().find_map(|p| p.embedding.as_ref().map(Vec::len)))?;
    let n = points.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| eval_kernel(spec, &points[i], &points[j]))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in rows.iter().enumerate() {
        for (offset, v) in row.iter().enumerate() {
            let j = i + offset;
            entries[(i, j)] = *v;
            entries[(j, i)] = *v;
        }
    }
    Ok(KernelMatrix {
        entries,
        ids: points.iter().map(|p| p.index).collect(),
    })
}
