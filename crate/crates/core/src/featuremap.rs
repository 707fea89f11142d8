//! Frozen feature maps `g: SoftPrompt -> FeatureVector` and the
//! pre-computation cache over a discrete domain.

use std::io::{Read, Write};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{DiscreteDomain, SoftPrompt};
use crate::error::{ensure, ensure_input, Error, Result};
use crate::io::{read_f64s, read_magic, read_str, read_u64, write_f64s, write_str, write_u64};
use crate::seed;

/// Default feature width (final-layer hidden size of the generator).
pub const DEFAULT_FEATURE_DIM: usize = 5120;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub trait FeatureMap: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Stable identifier written into cache headers.
    fn id(&self) -> String;
    fn seed(&self) -> u64 {
        0
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector>;
    /// Digest of the map's parameters; constant for the life of the map.
    fn checksum(&self) -> [u8; 32] {
        Sha256::digest(self.id().as_bytes()).into()
    }
}

impl<M: FeatureMap + ?Sized> FeatureMap for Box<M> {
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn id(&self) -> String {
        (**self).id()
    }
    fn seed(&self) -> u64 {
        (**self).seed()
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        (**self).embed(z)
    }
    fn checksum(&self) -> [u8; 32] {
        (**self).checksum()
    }
}

fn check_input(map: &dyn FeatureMap, z: &SoftPrompt) -> Result<()> {
    ensure(z.dim() == map.input_dim(), || {
        format!("feature map {} expects input dimension {}, got {}", map.id(), map.input_dim(), z.dim())
    })
}

#[derive(Debug, Clone)]
pub struct IdentityMap {
    dim: usize,
}

impl IdentityMap {
    pub fn new(dim: usize) -> Self {
        IdentityMap { dim }
    }
}

impl FeatureMap for IdentityMap {
    fn input_dim(&self) -> usize {
        self.dim
    }
    fn output_dim(&self) -> usize {
        self.dim
    }
    fn id(&self) -> String {
        "identity".into()
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        check_input(self, z)?;
        Ok(FeatureVector(z.0.clone()))
    }
}

/// A seeded random network `tanh(W2 tanh(W1 z + b1) + b2)` that never trains.
#[derive(Debug, Clone)]
pub struct FrozenNet {
    input: usize,
    hidden: usize,
    output: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    seed: u64,
}

impl FrozenNet {
    pub fn new(input: usize, hidden: usize, output: usize, seed: u64) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Config("frozen network layer widths must be positive".into()));
        }
        let mut rng = seed::rng(seed);
        // uniform with variance 1/fan_in
        let mut layer = |fan_in: usize, n: usize| -> Vec<f64> {
            let r = (3.0 / fan_in as f64).sqrt();
            (0..n).map(|_| rng.random_range(-r..=r)).collect()
        };
        let w1 = layer(input, hidden * input);
        let b1 = layer(input, hidden);
        let w2 = layer(hidden, output * hidden);
        let b2 = layer(hidden, output);
        Ok(FrozenNet { input, hidden, output, w1, b1, w2, b2, seed })
    }

    /// Builds a network from explicit row-major weights.
    pub fn from_weights(
        input: usize,
        hidden: usize,
        output: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        ensure(
            w1.len() == hidden * input && b1.len() == hidden && w2.len() == output * hidden && b2.len() == output,
            || "frozen network weight shapes do not match layer widths".into(),
        )?;
        Ok(FrozenNet { input, hidden, output, w1, b1, w2, b2, seed: 0 })
    }
}

fn dense_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    b.iter()
        .enumerate()
        .map(|(i, bias)| {
            let row = &w[i * x.len()..(i + 1) * x.len()];
            (row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + bias).tanh()
        })
        .collect()
}

impl FeatureMap for FrozenNet {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn id(&self) -> String {
        format!("frozen-tanh-{}x{}x{}", self.input, self.hidden, self.output)
    }
    fn seed(&self) -> u64 {
        self.seed
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        check_input(self, z)?;
        let h = dense_tanh(&self.w1, &self.b1, z.values());
        Ok(FeatureVector(dense_tanh(&self.w2, &self.b2, &h)))
    }
    fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for part in [&self.w1, &self.b1, &self.w2, &self.b2] {
            for v in part.iter() {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Buckets the leading coordinates of a soft prompt.
///
/// Coordinate `k` falls in bucket `b` when it lies in
/// `[edges[k][b-1], edges[k][b])`, with open ends at both extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    edges: Vec<Vec<f64>>,
    buckets: usize,
}

impl Quantizer {
    /// Equal-width buckets of `[lo, hi]` on the first `coords` coordinates.
    pub fn uniform(coords: usize, buckets: usize, lo: f64, hi: f64) -> Result<Self> {
        if coords == 0 || buckets < 2 || !(hi > lo) {
            return Err(Error::Config("quantizer needs coords >= 1, buckets >= 2, hi > lo".into()));
        }
        let width = (hi - lo) / buckets as f64;
        let cuts: Vec<f64> = (1..buckets).map(|b| lo + width * b as f64).collect();
        Ok(Quantizer { edges: vec![cuts; coords], buckets })
    }

    /// Equal-population buckets calibrated on the domain's own points.
    pub fn from_domain_quantiles(domain: &DiscreteDomain, coords: usize, buckets: usize) -> Result<Self> {
        if coords == 0 || buckets < 2 {
            return Err(Error::Config("quantizer needs coords >= 1 and buckets >= 2".into()));
        }
        if coords > domain.soft_prompt_dim() {
            return Err(Error::Config(format!(
                "quantizer uses {coords} coordinates but soft prompts have {}",
                domain.soft_prompt_dim()
            )));
        }
        let a = domain.projection();
        let mut edges = Vec::with_capacity(coords);
        for k in 0..coords {
            let row = a.row(k);
            let mut vals: Vec<f64> = domain
                .intrinsic_points()
                .iter()
                .map(|p| row.iter().zip(p.coords()).map(|(w, v)| w * v).sum())
                .collect();
            vals.sort_by(f64::total_cmp);
            let n = vals.len();
            let cuts = (1..buckets)
                .map(|b| {
                    let i = (b * n / buckets).min(n - 1);
                    vals[i]
                })
                .collect();
            edges.push(cuts);
        }
        Ok(Quantizer { edges, buckets })
    }

    pub fn coords(&self) -> usize {
        self.edges.len()
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn bucket(&self, z: &[f64]) -> Vec<usize> {
        self.edges.iter().zip(z).map(|(cuts, &x)| cuts.partition_point(|&c| c <= x)).collect()
    }

    /// Lower and upper bound of bucket `b` on coordinate `k` (infinite at the ends).
    pub fn bucket_bounds(&self, k: usize, b: usize) -> (f64, f64) {
        let cuts = &self.edges[k];
        let lo = if b == 0 { f64::NEG_INFINITY } else { cuts[b - 1] };
        let hi = if b == cuts.len() { f64::INFINITY } else { cuts[b] };
        (lo, hi)
    }
}

pub(crate) fn bucket_key(bucket: &[usize]) -> String {
    bucket.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(".")
}

/// Collapses every quantization bucket onto one seeded random feature vector.
#[derive(Debug, Clone)]
pub struct QuotientMap {
    quantizer: Quantizer,
    input: usize,
    output: usize,
    seed: u64,
}

impl QuotientMap {
    pub fn new(quantizer: Quantizer, input: usize, output: usize, seed: u64) -> Result<Self> {
        if quantizer.coords() > input || output == 0 {
            return Err(Error::Config("quotient map needs coords <= input and output >= 1".into()));
        }
        Ok(QuotientMap { quantizer, input, output, seed })
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quantizer
    }

    /// The bucket tuple ("instruction id") of `z`.
    pub fn bucket_of(&self, z: &SoftPrompt) -> Vec<usize> {
        self.quantizer.bucket(z.values())
    }

    fn table_entry(&self, bucket: &[usize]) -> FeatureVector {
        let mut rng = seed::rng(seed::derive(self.seed, &bucket_key(bucket)));
        FeatureVector((0..self.output).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }
}

impl FeatureMap for QuotientMap {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn id(&self) -> String {
        format!("quotient-{}b{}", self.quantizer.coords(), self.quantizer.buckets())
    }
    fn seed(&self) -> u64 {
        self.seed
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        check_input(self, z)?;
        Ok(self.table_entry(&self.bucket_of(z)))
    }
    fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.quantizer).unwrap_or_default());
        hasher.update(self.seed.to_le_bytes());
        hasher.finalize().into()
    }
}

/// Wraps a map and sleeps before every call, emulating an expensive forward pass.
pub struct DelayedMap<M> {
    inner: M,
    delay: Duration,
}

impl<M: FeatureMap> DelayedMap<M> {
    pub fn new(inner: M, delay: Duration) -> Self {
        DelayedMap { inner, delay }
    }
}

impl<M: FeatureMap> FeatureMap for DelayedMap<M> {
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner.output_dim()
    }
    fn id(&self) -> String {
        self.inner.id()
    }
    fn seed(&self) -> u64 {
        self.inner.seed()
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        std::thread::sleep(self.delay);
        self.inner.embed(z)
    }
    fn checksum(&self) -> [u8; 32] {
        self.inner.checksum()
    }
}

#[derive(Debug, Serialize)]
struct EmbedRequest<'a> {
    soft_prompt: &'a [f64],
    n_tokens: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EmbedResponse {
    pub features: Vec<f64>,
    pub model_id: String,
}

/// Result of one remote embedding call.
#[derive(Debug, Clone)]
pub struct RemoteEmbedding {
    pub features: FeatureVector,
    pub model_id: String,
    /// SHA-256 of the little-endian feature payload, hex encoded.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub timeout_ms: u64,
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { timeout_ms: 30_000, max_attempts: 3, backoff_ms: 200 }
    }
}

/// Sends a JSON POST with retries; only transport and 5xx failures are retried.
pub(crate) fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    client: &reqwest::blocking::Client,
    url: &str,
    body: &Req,
    headers: &[(&str, String)],
    policy: &RetryPolicy,
) -> Result<Resp> {
    let attempts = policy.max_attempts.max(1);
    let mut last = String::new();
    for attempt in 1..=attempts {
        let mut req = client.post(url).json(body);
        for (k, v) in headers {
            req = req.header(*k, v);
        }
        match req.send() {
            Ok(resp) if resp.status().is_success() => {
                return resp.json::<Resp>().map_err(|e| Error::Transport {
                    attempts: attempt,
                    message: format!("undecodable response from {url}: {e}"),
                });
            }
            Ok(resp) if resp.status().is_client_error() => {
                return Err(Error::Transport {
                    attempts: attempt,
                    message: format!("{url} rejected the request with {}", resp.status()),
                });
            }
            Ok(resp) => last = format!("{url} answered {}", resp.status()),
            Err(e) => last = format!("{url}: {e}"),
        }
        tracing::warn!(attempt, url, error = %last, "remote call failed");
        if attempt < attempts {
            std::thread::sleep(Duration::from_millis(policy.backoff_ms * attempt as u64));
        }
    }
    Err(Error::Transport { attempts, message: last })
}

pub(crate) fn http_client(policy: &RetryPolicy) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_millis(policy.timeout_ms))
        .build()
        .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))
}

pub(crate) fn auth_headers(token: Option<&str>) -> Vec<(&'static str, String)> {
    token.map(|t| vec![("authorization", format!("Bearer {t}"))]).unwrap_or_default()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Client for an embedding service speaking `POST /embed`.
pub struct RemoteMap {
    url: String,
    token: Option<String>,
    input: usize,
    output: usize,
    n_tokens: usize,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl RemoteMap {
    pub fn new(
        base_url: &str,
        token: Option<String>,
        input: usize,
        output: usize,
        n_tokens: usize,
        policy: RetryPolicy,
    ) -> Result<Self> {
        Ok(RemoteMap {
            url: format!("{}/embed", base_url.trim_end_matches('/')),
            token,
            input,
            output,
            n_tokens,
            client: http_client(&policy)?,
            policy,
        })
    }

    pub fn fetch(&self, z: &SoftPrompt) -> Result<RemoteEmbedding> {
        check_input(self, z)?;
        let resp: EmbedResponse = post_json(
            &self.client,
            &self.url,
            &EmbedRequest { soft_prompt: z.values(), n_tokens: self.n_tokens },
            &auth_headers(self.token.as_deref()),
            &self.policy,
        )?;
        ensure(resp.features.len() == self.output, || {
            format!("embedding service returned {} features, expected {}", resp.features.len(), self.output)
        })?;
        if !resp.features.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericInput("embedding service returned non-finite features".into()));
        }
        let mut hasher = Sha256::new();
        for v in &resp.features {
            hasher.update(v.to_le_bytes());
        }
        let content_hash = hex(&hasher.finalize());
        Ok(RemoteEmbedding { features: FeatureVector(resp.features), model_id: resp.model_id, content_hash })
    }
}

impl FeatureMap for RemoteMap {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }
    fn embed(&self, z: &SoftPrompt) -> Result<FeatureVector> {
        let got = self.fetch(z)?;
        tracing::debug!(model_id = %got.model_id, hash = %got.content_hash, "remote embedding");
        Ok(got.features)
    }
}

/// Embeds the given domain indices with up to `parallelism` concurrent calls.
/// Results come back in the order of `indices`.
pub fn embed_indices(
    map: &dyn FeatureMap,
    domain: &DiscreteDomain,
    indices: &[usize],
    parallelism: usize,
) -> Result<Vec<FeatureVector>> {
    let workers = parallelism.max(1).min(indices.len().max(1));
    let embed_one = |i: usize| -> Result<FeatureVector> {
        domain.point(i).and_then(|z| map.embed(&z)).map_err(|e| Error::EmbedFailed { index: i, source: Box::new(e) })
    };
    if workers == 1 {
        return indices.iter().map(|&i| embed_one(i)).collect();
    }
    let chunk = indices.len().div_ceil(workers);
    let parts: Vec<Vec<Result<FeatureVector>>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|&i| embed_one(i)).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("embed worker panicked")).collect()
    });
    parts.into_iter().flatten().collect()
}

/// `g(z)` for every point of a domain, in domain-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    map_id: String,
    seed: u64,
    features: Vec<FeatureVector>,
}

const CACHE_MAGIC: &[u8; 8] = b"INSTFC01";

impl FeatureCache {
    /// Wraps already computed features; all must share one finite dimension.
    pub fn from_features(map_id: &str, seed: u64, features: Vec<FeatureVector>) -> Result<Self> {
        if let Some(first) = features.first() {
            ensure(features.iter().all(|f| f.dim() == first.dim()), || "feature vectors differ in length".into())?;
        }
        if features.iter().flat_map(|f| f.values()).any(|v| !v.is_finite()) {
            return Err(Error::NumericInput("feature cache contains non-finite values".into()));
        }
        Ok(FeatureCache { map_id: map_id.to_string(), seed, features })
    }

    pub fn map_id(&self) -> &str {
        &self.map_id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::dim)
    }

    pub fn get(&self, index: usize) -> Option<&FeatureVector> {
        self.features.get(index)
    }

    pub fn features(&self) -> &[FeatureVector] {
        &self.features
    }

    /// Header (M, D_h, map id, seed) followed by row-major f64 features.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        write_u64(&mut w, self.len() as u64)?;
        write_u64(&mut w, self.feature_dim() as u64)?;
        write_str(&mut w, &self.map_id)?;
        write_u64(&mut w, self.seed)?;
        for f in &self.features {
            write_f64s(&mut w, f.values())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        read_magic(&mut r, CACHE_MAGIC, "feature cache")?;
        let m = read_u64(&mut r)? as usize;
        let dh = read_u64(&mut r)? as usize;
        let map_id = read_str(&mut r)?;
        let seed = read_u64(&mut r)?;
        let features = (0..m).map(|_| read_f64s(&mut r, dh).map(FeatureVector)).collect::<Result<Vec<_>>>()?;
        if features.iter().flat_map(|f| f.values()).any(|v| !v.is_finite()) {
            return Err(Error::Format("feature cache contains non-finite values".into()));
        }
        Ok(FeatureCache { map_id, seed, features })
    }
}

/// Embeds the whole domain once. Any failure aborts with its domain index.
pub fn precompute_all(map: &dyn FeatureMap, domain: &DiscreteDomain, parallelism: usize) -> Result<FeatureCache> {
    ensure(map.input_dim() == domain.soft_prompt_dim(), || {
        format!(
            "feature map input dimension {} does not match soft-prompt dimension {}",
            map.input_dim(),
            domain.soft_prompt_dim()
        )
    })?;
    if parallelism == 0 {
        return Err(Error::Config("parallelism must be at least 1".into()));
    }
    let indices: Vec<usize> = (0..domain.len()).collect();
    let features = embed_indices(map, domain, &indices, parallelism)?;
    Ok(FeatureCache { map_id: map.id(), seed: map.seed(), features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDistances {
    pub group: String,
    pub distances: Vec<f64>,
    pub mean: f64,
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// All within-group pairwise L2 distances, pairs `(i, j)` with `i < j` in
/// input order, plus their mean.
pub fn pairwise_group_distances(groups: &[(String, Vec<Vec<f64>>)]) -> Result<Vec<GroupDistances>> {
    groups
        .iter()
        .map(|(name, vectors)| {
            if vectors.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "group {name:?} has {} vector(s); at least 2 are needed",
                    vectors.len()
                )));
            }
            let dim = vectors[0].len();
            ensure_input(vectors.iter().all(|v| v.len() == dim), || format!("group {name:?} mixes vector dimensions"))?;
            let mut distances = Vec::new();
            for i in 0..vectors.len() {
                for j in i + 1..vectors.len() {
                    distances.push(l2_distance(&vectors[i], &vectors[j]));
                }
            }
            let mean = distances.iter().sum::<f64>() / distances.len() as f64;
            Ok(GroupDistances { group: name.clone(), distances, mean })
        })
        .collect()
}

/// Which map to build, as written in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum FeatureMapSpec {
    #[default]
    Identity,
    Frozen {
        #[serde(default = "default_frozen_hidden")]
        hidden: usize,
        #[serde(default = "default_feature_dim")]
        output_dim: usize,
    },
    Quotient {
        #[serde(default = "default_quotient_coords")]
        coords: usize,
        #[serde(default = "default_quotient_buckets")]
        buckets: usize,
        #[serde(default = "default_feature_dim")]
        output_dim: usize,
    },
    Remote {
        /// Falls back to `INSTINCT_EMBED_URL`.
        #[serde(default)]
        url: Option<String>,
        #[serde(default = "default_feature_dim")]
        output_dim: usize,
        #[serde(default)]
        retry: RetryPolicy,
    },
}

fn default_frozen_hidden() -> usize {
    256
}
fn default_feature_dim() -> usize {
    DEFAULT_FEATURE_DIM
}
fn default_quotient_coords() -> usize {
    8
}
fn default_quotient_buckets() -> usize {
    4
}


pub const EMBED_URL_ENV: &str = "INSTINCT_EMBED_URL";
pub const API_TOKEN_ENV: &str = "INSTINCT_API_TOKEN";

impl FeatureMapSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMapSpec::Identity => "identity",
            FeatureMapSpec::Frozen { .. } => "frozen",
            FeatureMapSpec::Quotient { .. } => "quotient",
            FeatureMapSpec::Remote { .. } => "remote",
        }
    }

    /// Default parameters for a map named on the command line.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "identity" => FeatureMapSpec::Identity,
            "frozen" => FeatureMapSpec::Frozen { hidden: default_frozen_hidden(), output_dim: DEFAULT_FEATURE_DIM },
            "quotient" => FeatureMapSpec::Quotient {
                coords: default_quotient_coords(),
                buckets: default_quotient_buckets(),
                output_dim: DEFAULT_FEATURE_DIM,
            },
            "remote" => {
                FeatureMapSpec::Remote { url: None, output_dim: DEFAULT_FEATURE_DIM, retry: RetryPolicy::default() }
            }
            other => return Err(Error::Config(format!("unknown feature map {other:?}"))),
        })
    }

    pub fn build(&self, domain: &DiscreteDomain, seed: u64) -> Result<Box<dyn FeatureMap>> {
        let d = domain.soft_prompt_dim();
        Ok(match self {
            FeatureMapSpec::Identity => Box::new(IdentityMap::new(d)),
            FeatureMapSpec::Frozen { hidden, output_dim } => Box::new(FrozenNet::new(d, *hidden, *output_dim, seed)?),
            FeatureMapSpec::Quotient { coords, buckets, output_dim } => {
                let q = Quantizer::from_domain_quantiles(domain, *coords, *buckets)?;
                Box::new(QuotientMap::new(q, d, *output_dim, seed)?)
            }
            FeatureMapSpec::Remote { url, output_dim, retry } => {
                let url = match url {
                    Some(u) => u.clone(),
                    None => std::env::var(EMBED_URL_ENV)
                        .map_err(|_| Error::Config(format!("remote feature map needs a url or ${EMBED_URL_ENV}")))?,
                };
                let token = std::env::var(API_TOKEN_ENV).ok();
                Box::new(RemoteMap::new(&url, token, d, *output_dim, domain.config().n_tokens, retry.clone())?)
            }
        })
    }
}
