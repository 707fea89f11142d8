//! The discrete candidate domain: scrambled Sobol points in a low intrinsic
//! dimension, lifted to the soft-prompt space by a fixed random matrix.

pub mod sobol;

use std::collections::HashSet;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::io::{read_f64s, read_magic, read_u64, write_f64s, write_u64};
use crate::seed;

pub use sobol::{max_dimension, sobol_sequence, IntrinsicPoint, Sobol};

/// Default token embedding width of the white-box generator.
pub const DEFAULT_TOKEN_EMBEDDING_DIM: usize = 5120;
/// Default number of candidate points.
pub const DEFAULT_DOMAIN_SIZE: usize = 10_000;

/// A point of the full soft-prompt space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftPrompt(pub Vec<f64>);

impl SoftPrompt {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// A `rows x cols` matrix with entries i.i.d. uniform on `[-1, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    seed: u64,
}

impl ProjectionMatrix {
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>, seed: u64) -> Result<Self> {
        ensure(entries.len() == rows * cols, || {
            format!("projection payload has {} entries, expected {rows}x{cols}", entries.len())
        })?;
        ensure(entries.iter().all(|e| (-1.0..=1.0).contains(e)), || "projection entries must lie in [-1, 1]".into())?;
        Ok(ProjectionMatrix { rows, cols, entries, seed })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    /// `A^T A`, a `cols x cols` symmetric matrix, row-major.
    pub fn gram(&self) -> Vec<f64> {
        let c = self.cols;
        let mut g = vec![0.0; c * c];
        for i in 0..self.rows {
            let row = self.row(i);
            for (a, &ra) in row.iter().enumerate() {
                let out = &mut g[a * c..(a + 1) * c];
                for (o, &rb) in out.iter_mut().zip(row) {
                    *o += ra * rb;
                }
            }
        }
        g
    }
}

/// Draws a `d x d_intrinsic` projection from its own seeded stream.
pub fn make_projection(d: usize, d_intrinsic: usize, seed: u64) -> Result<ProjectionMatrix> {
    if d_intrinsic == 0 || d < d_intrinsic {
        return Err(Error::Config(format!("projection needs d >= d' >= 1, got d = {d}, d' = {d_intrinsic}")));
    }
    let mut rng = seed::rng(seed);
    let entries = (0..d * d_intrinsic).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Ok(ProjectionMatrix { rows: d, cols: d_intrinsic, entries, seed })
}

/// `z = A ẑ`.
pub fn project(a: &ProjectionMatrix, point: &IntrinsicPoint) -> Result<SoftPrompt> {
    ensure(point.dim() == a.cols, || {
        format!("intrinsic point has dimension {}, projection expects {}", point.dim(), a.cols)
    })?;
    let x = point.coords();
    let values = (0..a.rows).map(|i| a.row(i).iter().zip(x).map(|(w, v)| w * v).sum()).collect();
    Ok(SoftPrompt(values))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DomainConfig {
    pub intrinsic_dim: usize,
    pub n_tokens: usize,
    pub token_embedding_dim: usize,
    pub size: usize,
    pub sobol_seed: u64,
    pub projection_seed: u64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        DomainConfig {
            intrinsic_dim: 10,
            n_tokens: 3,
            token_embedding_dim: DEFAULT_TOKEN_EMBEDDING_DIM,
            size: DEFAULT_DOMAIN_SIZE,
            sobol_seed: 0,
            projection_seed: 0,
        }
    }
}

impl DomainConfig {
    /// Soft-prompt dimension `token_embedding_dim * n_tokens`.
    pub fn soft_prompt_dim(&self) -> usize {
        self.token_embedding_dim * self.n_tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.intrinsic_dim == 0 || self.n_tokens == 0 || self.token_embedding_dim == 0 || self.size == 0 {
            return Err(Error::Config(
                "domain intrinsic_dim, n_tokens, token_embedding_dim and size must be positive".into(),
            ));
        }
        if self.soft_prompt_dim() < self.intrinsic_dim {
            return Err(Error::Config(format!(
                "soft-prompt dimension {} is smaller than intrinsic dimension {}",
                self.soft_prompt_dim(),
                self.intrinsic_dim
            )));
        }
        Ok(())
    }
}

/// The fixed candidate set of one run.
///
/// Only the intrinsic points and the projection are held; soft prompts are
/// projected on demand, which keeps a 10k x 15360 domain out of memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDomain {
    config: DomainConfig,
    intrinsic: Vec<IntrinsicPoint>,
    projection: ProjectionMatrix,
}

impl DiscreteDomain {
    pub fn config(&self) -> &DomainConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.intrinsic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intrinsic.is_empty()
    }

    pub fn soft_prompt_dim(&self) -> usize {
        self.projection.rows
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.projection.cols
    }

    pub fn intrinsic_points(&self) -> &[IntrinsicPoint] {
        &self.intrinsic
    }

    pub fn projection(&self) -> &ProjectionMatrix {
        &self.projection
    }

    pub fn point(&self, index: usize) -> Result<SoftPrompt> {
        let p = self.intrinsic.get(index).ok_or_else(|| {
            Error::InvariantViolation(format!("domain index {index} out of range (M = {})", self.len()))
        })?;
        project(&self.projection, p)
    }

    /// Mean of `||z||^2` over the domain via `ẑ^T (A^T A) ẑ`.
    pub fn mean_squared_norm(&self) -> f64 {
        let gram = self.projection.gram();
        let c = self.projection.cols;
        let total: f64 = self
            .intrinsic
            .iter()
            .map(|p| {
                let x = p.coords();
                (0..c)
                    .map(|a| x[a] * gram[a * c..(a + 1) * c].iter().zip(x).map(|(g, v)| g * v).sum::<f64>())
                    .sum::<f64>()
            })
            .sum();
        total / self.len() as f64
    }

    /// Writes the domain file: header, intrinsic points, projection.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DOMAIN_MAGIC)?;
        for v in [
            self.soft_prompt_dim() as u64,
            self.intrinsic_dim() as u64,
            self.len() as u64,
            self.config.sobol_seed,
            self.config.projection_seed,
            self.config.n_tokens as u64,
            self.config.token_embedding_dim as u64,
        ] {
            write_u64(&mut w, v)?;
        }
        for p in &self.intrinsic {
            write_f64s(&mut w, p.coords())?;
        }
        write_f64s(&mut w, self.projection.entries())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, DOMAIN_MAGIC, "domain")?;
        let d = read_u64(&mut r)? as usize;
        let d_int = read_u64(&mut r)? as usize;
        let m = read_u64(&mut r)? as usize;
        let sobol_seed = read_u64(&mut r)?;
        let projection_seed = read_u64(&mut r)?;
        let n_tokens = read_u64(&mut r)? as usize;
        let token_embedding_dim = read_u64(&mut r)? as usize;
        let config =
            DomainConfig { intrinsic_dim: d_int, n_tokens, token_embedding_dim, size: m, sobol_seed, projection_seed };
        config.validate()?;
        if config.soft_prompt_dim() != d {
            return Err(Error::Format(format!(
                "header d = {d} disagrees with n_tokens x token_embedding_dim = {}",
                config.soft_prompt_dim()
            )));
        }
        let mut intrinsic = Vec::with_capacity(m);
        for _ in 0..m {
            let coords = read_f64s(&mut r, d_int)?;
            if !coords.iter().all(|x| (0.0..1.0).contains(x)) {
                return Err(Error::Format("intrinsic coordinate outside [0, 1)".into()));
            }
            intrinsic.push(IntrinsicPoint(coords));
        }
        let entries = read_f64s(&mut r, d * d_int)?;
        let projection = ProjectionMatrix::from_entries(d, d_int, entries, projection_seed)?;
        Ok(DiscreteDomain { config, intrinsic, projection })
    }
}

const DOMAIN_MAGIC: &[u8; 8] = b"INSTDOM1";

/// Builds the domain described by `cfg`; a pure function of the config.
pub fn build_domain(cfg: &DomainConfig) -> Result<DiscreteDomain> {
    cfg.validate()?;
    let intrinsic = sobol_sequence(cfg.intrinsic_dim, cfg.size, cfg.sobol_seed)?;
    let projection = make_projection(cfg.soft_prompt_dim(), cfg.intrinsic_dim, cfg.projection_seed)?;
    Ok(DiscreteDomain { config: cfg.clone(), intrinsic, projection })
}

/// Draws `k` distinct indices of `0..domain_size` outside `exclude`,
/// uniformly without replacement.
pub fn subsample<R: Rng + ?Sized>(
    domain_size: usize,
    k: usize,
    exclude: &HashSet<usize>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let eligible: Vec<usize> = (0..domain_size).filter(|i| !exclude.contains(i)).collect();
    if k > eligible.len() {
        return Err(Error::BudgetExhausted(format!(
            "requested {k} indices but only {} unqueried points remain",
            eligible.len()
        )));
    }
    Ok(rand::seq::index::sample(rng, eligible.len(), k).into_iter().map(|i| eligible[i]).collect())
}
