//! Offline objectives on soft prompts, all valued in `[0, 1]`.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};

use crate::domain::SoftPrompt;
use crate::error::{ensure, Result};
use crate::featuremap::Quantizer;

/// Piecewise-constant objective over quantization buckets.
///
/// Each bucket tuple has a centroid `c` with `c_k = (b_k + 0.5) / B`; the
/// score is `exp(-||c - c_target||^2 / width)`, or the decoy peak where higher. Soft prompts sharing a bucket
/// share a score, mirroring many soft prompts yielding one instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedSphere {
    pub quantizer: Quantizer,
    pub target: Vec<usize>,
    pub width: f64,
    /// Optional lower, broader peak that lures purely greedy search.
    #[serde(default)]
    pub decoy: Option<Decoy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoy {
    pub bucket: Vec<usize>,
    pub height: f64,
    pub width: f64,
}

fn sphere(bucket: &[usize], centre: &[usize], buckets: usize, width: f64) -> f64 {
    let b = buckets as f64;
    let dist2: f64 = bucket
        .iter()
        .zip(centre)
        .map(|(&x, &t)| {
            let diff = (x as f64 - t as f64) / b;
            diff * diff
        })
        .sum();
    (-dist2 / width).exp()
}

impl QuantizedSphere {
    pub fn new(quantizer: Quantizer, target: Vec<usize>, width: f64) -> Result<Self> {
        ensure(target.len() == quantizer.coords(), || {
            format!("target has {} coordinates, quantizer uses {}", target.len(), quantizer.coords())
        })?;
        ensure(target.iter().all(|&b| b < quantizer.buckets()), || "target bucket out of range".into())?;
        ensure(width > 0.0, || "sphere width must be positive".into())?;
        Ok(QuantizedSphere { quantizer, target, width, decoy: None })
    }

    pub fn with_decoy(mut self, decoy: Decoy) -> Result<Self> {
        ensure(decoy.bucket.len() == self.target.len(), || "decoy bucket has the wrong length".into())?;
        ensure(decoy.bucket.iter().all(|&b| b < self.quantizer.buckets()), || "decoy bucket out of range".into())?;
        ensure(decoy.height > 0.0 && decoy.height < 1.0, || "decoy height must lie in (0, 1)".into())?;
        ensure(decoy.width > 0.0, || "decoy width must be positive".into())?;
        self.decoy = Some(decoy);
        Ok(self)
    }

    pub fn bucket_score(&self, bucket: &[usize]) -> f64 {
        let b = self.quantizer.buckets();
        let main = sphere(bucket, &self.target, b, self.width);
        match &self.decoy {
            Some(d) => main.max(d.height * sphere(bucket, &d.bucket, b, d.width)),
            None => main,
        }
    }

    pub fn score(&self, z: &SoftPrompt) -> f64 {
        self.bucket_score(&self.quantizer.bucket(z.values()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothKind {
    Ackley,
    Levy,
}

/// Ackley or Levy evaluated at `(z[..dims] - center) * scale`, rescaled into `[0, 1]`
/// with the global optimum (score 1) at `z = center`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothObjective {
    pub kind: SmoothKind,
    pub center: Vec<f64>,
    pub scale: f64,
}

/// Supremum of the Ackley function.
const ACKLEY_MAX: f64 = 20.0 + E;

pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cos = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    (-20.0 * (-0.2 * sq.sqrt()).exp() - cos.exp() + 20.0 + E).max(0.0)
}

/// Levy function, minimum 0 at the all-ones point.
pub fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let n = w.len();
    let head = (PI * w[0]).sin().powi(2);
    let mid: f64 = w[..n - 1].iter().map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2))).sum();
    let tail = (w[n - 1] - 1.0).powi(2) * (1.0 + (2.0 * PI * w[n - 1]).sin().powi(2));
    head + mid + tail
}

impl SmoothObjective {
    pub fn new(kind: SmoothKind, center: Vec<f64>, scale: f64) -> Result<Self> {
        ensure(!center.is_empty(), || "smooth objective needs at least one coordinate".into())?;
        ensure(scale > 0.0, || "smooth objective scale must be positive".into())?;
        Ok(SmoothObjective { kind, center, scale })
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    pub fn score(&self, z: &SoftPrompt) -> Result<f64> {
        ensure(z.dim() >= self.dims(), || {
            format!("objective reads {} coordinates, soft prompt has {}", self.dims(), z.dim())
        })?;
        let x: Vec<f64> = z.values().iter().zip(&self.center).map(|(v, c)| (v - c) * self.scale).collect();
        let s = match self.kind {
            SmoothKind::Ackley => 1.0 - ackley(&x) / ACKLEY_MAX,
            SmoothKind::Levy => {
                let shifted: Vec<f64> = x.iter().map(|v| v + 1.0).collect();
                1.0 / (1.0 + levy(&shifted))
            }
        };
        Ok(s.clamp(0.0, 1.0))
    }
}
