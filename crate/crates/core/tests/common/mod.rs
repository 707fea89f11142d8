#![allow(dead_code)]

use instinct_core::domain::{build_domain, DiscreteDomain, DomainConfig, SoftPrompt};
use instinct_core::featuremap::{precompute_all, FeatureCache, IdentityMap};
use instinct_core::oracle::{EvalContext, Evaluation, Oracle};
use instinct_core::Result;

pub fn domain(size: usize, intrinsic_dim: usize, dim: usize, seed: u64) -> DiscreteDomain {
    build_domain(&DomainConfig {
        intrinsic_dim,
        n_tokens: 1,
        token_embedding_dim: dim,
        size,
        sobol_seed: seed,
        projection_seed: seed ^ 0x5eed,
    })
    .unwrap()
}

pub fn identity_cache(domain: &DiscreteDomain) -> FeatureCache {
    precompute_all(&IdentityMap::new(domain.soft_prompt_dim()), domain, 1).unwrap()
}

/// Oracle backed by a plain function of the soft prompt.
pub struct FnOracle<F>(pub F);

impl<F> Oracle for FnOracle<F>
where
    F: Fn(&EvalContext, &SoftPrompt) -> Result<f64> + Send + Sync,
{
    fn name(&self) -> String {
        "fn".into()
    }

    fn evaluate(&self, ctx: &EvalContext, z: &SoftPrompt) -> Result<Evaluation> {
        Ok(Evaluation { score: (self.0)(ctx, z)?, instruction: None })
    }
}

/// A smooth score in [0, 1] peaking at the origin.
pub fn bowl(z: &SoftPrompt) -> f64 {
    let sq: f64 = z.values().iter().map(|v| v * v).sum();
    (-sq / z.dim() as f64).exp()
}
