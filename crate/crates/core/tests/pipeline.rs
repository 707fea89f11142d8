//! The remote oracle path against an in-process HTTP server.

mod common;

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use instinct_core::domain::SoftPrompt;
use instinct_core::featuremap::{FeatureMap, Quantizer, RemoteMap, RetryPolicy};
use instinct_core::harness::{self, Cell, ExperimentConfig, GridConfig};
use instinct_core::oracle::remote::{
    render_evaluation_prompt, Exemplar, ExemplarSet, HttpCompletionClient, HttpGenerationClient,
};
use instinct_core::oracle::{
    pipeline_eval, synthetic_eval, EvalContext, ObjectiveSpec, Oracle, PipelineOracle, QuantizedSphere, ScoreMetric,
    SyntheticObjective, ValidationExample,
};
use instinct_core::Error;

const N_EXAMPLES: usize = 400;

#[derive(Clone)]
struct Mock {
    objective: Arc<QuantizedSphere>,
    calls: Arc<Mutex<Vec<(String, Option<String>, Option<String>)>>>,
    fail_generate: usize,
}

fn log(mock: &Mock, route: &str, headers: &HeaderMap) {
    let h = |k: &str| headers.get(k).and_then(|v| v.to_str().ok()).map(String::from);
    mock.calls.lock().unwrap().push((route.into(), h("idempotency-key"), h("authorization")));
}

fn bucket_name(b: &[usize]) -> String {
    b.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-")
}

/// Bucket id of the first coordinates becomes the instruction text.
async fn generate(State(m): State<Mock>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    log(&m, "generate", &headers);
    let attempts = m.calls.lock().unwrap().iter().filter(|c| c.0 == "generate").count();
    if attempts <= m.fail_generate {
        return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({})));
    }
    assert_eq!(body["template_id"], "v1");
    assert!(!body["exemplars"].as_array().unwrap().is_empty());
    let z: Vec<f64> = serde_json::from_value(body["soft_prompt"].clone()).unwrap();
    let b = m.objective.quantizer.bucket(&z);
    (StatusCode::OK, Json(json!({ "instruction": format!("  bucket {}\n", bucket_name(&b)) })))
}

/// Answers the first round(score · N) validation inputs correctly, where
/// score is the objective's value at the instruction's bucket.
async fn complete(State(m): State<Mock>, headers: HeaderMap, Json(body): Json<Value>) -> Json<Value> {
    log(&m, "complete", &headers);
    let prompt = body["prompt"].as_str().unwrap();
    let rest = prompt.strip_prefix("Instruction: bucket ").unwrap();
    let (bucket, rest) = rest.split_once("\n\nInput: ").unwrap();
    let input = rest.strip_suffix("\n\nOutput:").unwrap();
    assert_eq!(render_evaluation_prompt(&format!("bucket {bucket}"), input), prompt);
    let b: Vec<usize> = bucket.split('-').map(|v| v.parse().unwrap()).collect();
    let k = (m.objective.bucket_score(&b) * N_EXAMPLES as f64).round() as usize;
    let i: usize = input.trim_start_matches('x').parse().unwrap();
    let text = if i < k { format!("y{i}") } else { "wrong".into() };
    Json(json!({ "text": text }))
}

async fn embed(Json(body): Json<Value>) -> Json<Value> {
    let z: Vec<f64> = serde_json::from_value(body["soft_prompt"].clone()).unwrap();
    Json(json!({ "features": z.iter().map(|v| v * 2.0).collect::<Vec<_>>(), "model_id": "double" }))
}

fn serve(mock: Mock) -> SocketAddr {
    let app = Router::new()
        .route("/generate", post(generate))
        .route("/complete", post(complete))
        .route("/embed", post(embed))
        .with_state(mock);
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn dataset() -> Vec<ValidationExample> {
    (0..N_EXAMPLES).map(|i| ValidationExample::new(format!("x{i}"), format!("y{i}")).unwrap()).collect()
}

fn exemplars() -> ExemplarSet {
    ExemplarSet::new(vec![Exemplar { input: "a".into(), output: "b".into() }]).unwrap()
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy { timeout_ms: 2_000, max_attempts: 3, backoff_ms: 1 }
}

fn mock(fail_generate: usize) -> (Mock, QuantizedSphere) {
    let q = Quantizer::uniform(3, 4, -3.0, 3.0).unwrap();
    let objective = QuantizedSphere::new(q, vec![2, 1, 2], 0.5).unwrap();
    (Mock { objective: Arc::new(objective.clone()), calls: Default::default(), fail_generate }, objective)
}

#[test]
fn bucket_mock_pipeline_equals_synthetic_eval() {
    let (m, objective) = mock(0);
    let addr = serve(m.clone());
    let url = format!("http://{addr}");
    let gen = HttpGenerationClient::new(&url, Some("secret".into()), fast_retry()).unwrap();
    let scorer = HttpCompletionClient::new(&url, Some("secret".into()), fast_retry()).unwrap();
    let synthetic = SyntheticObjective::Quantized(objective);
    let data = dataset();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(7);
    for case in 0..6 {
        let z = SoftPrompt((0..5).map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect());
        let key = format!("run:{case}");
        let (instruction, score) =
            pipeline_eval(&gen, &scorer, &z, &exemplars(), &data, ScoreMetric::ExactMatch, &key).unwrap();
        assert!(instruction.contains("bucket"));
        let want = synthetic_eval(&synthetic, &z).unwrap();
        // a mean over N examples resolves the score to 1/N
        assert!((score - want).abs() <= 0.5 / N_EXAMPLES as f64, "{score} vs {want}");
    }
    let calls = m.calls.lock().unwrap();
    assert_eq!(calls.len(), 6 * (1 + N_EXAMPLES));
    assert!(calls.iter().all(|c| c.2.as_deref() == Some("Bearer secret")));
    assert_eq!(calls[0].1.as_deref(), Some("run:0:gen"));
    assert_eq!(calls[1].1.as_deref(), Some("run:0:0"));
    assert_eq!(calls[2].1.as_deref(), Some("run:0:1"));
}

#[test]
fn transient_failures_are_retried_with_the_same_key() {
    let (m, _) = mock(2);
    let url = format!("http://{}", serve(m.clone()));
    let oracle = PipelineOracle {
        generator: Box::new(HttpGenerationClient::new(&url, None, fast_retry()).unwrap()),
        scorer: Box::new(HttpCompletionClient::new(&url, None, fast_retry()).unwrap()),
        exemplars: exemplars(),
        dataset: dataset()[..3].to_vec(),
        metric: ScoreMetric::ExactMatch,
    };
    let ctx = EvalContext { run_id: "r".into(), iteration: 4, domain_index: 0 };
    let eval = oracle.evaluate(&ctx, &SoftPrompt(vec![0.0; 3])).unwrap();
    assert!(eval.instruction.is_some());
    let calls = m.calls.lock().unwrap();
    let gens: Vec<_> = calls.iter().filter(|c| c.0 == "generate").collect();
    assert_eq!(gens.len(), 3);
    assert!(gens.iter().all(|c| c.1.as_deref() == Some("r:4:gen")));
}

#[test]
fn unreachable_endpoint_fails_after_configured_attempts() {
    // bind and drop a listener to get a port with nothing behind it
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let policy = RetryPolicy { timeout_ms: 500, max_attempts: 4, backoff_ms: 1 };
    let gen = HttpGenerationClient::new(&url, None, policy.clone()).unwrap();
    let scorer = HttpCompletionClient::new(&url, None, policy.clone()).unwrap();
    let err =
        pipeline_eval(&gen, &scorer, &SoftPrompt(vec![0.0]), &exemplars(), &dataset(), ScoreMetric::ExactMatch, "k")
            .unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 4, .. }), "{err}");
    assert!(err.is_retryable());

    let map = RemoteMap::new(&url, None, 2, 2, 1, policy).unwrap();
    let err = map.embed(&SoftPrompt(vec![1.0, 2.0])).unwrap_err();
    assert!(matches!(err, Error::Transport { attempts: 4, .. }));
}

#[test]
fn remote_embedding_returns_service_features_with_hash() {
    let (m, _) = mock(0);
    let url = format!("http://{}", serve(m));
    let map = RemoteMap::new(&url, None, 2, 2, 1, fast_retry()).unwrap();
    let got = map.fetch(&SoftPrompt(vec![1.0, -0.5])).unwrap();
    assert_eq!(got.features.values(), &[2.0, -1.0]);
    assert_eq!(got.model_id, "double");
    assert_eq!(got.content_hash.len(), 64);
    assert!(matches!(map.embed(&SoftPrompt(vec![1.0])), Err(Error::InvariantViolation(_))));
    let wrong = RemoteMap::new(&url, None, 2, 3, 1, fast_retry()).unwrap();
    assert!(matches!(wrong.embed(&SoftPrompt(vec![1.0, 2.0])), Err(Error::InvariantViolation(_))));
}

#[test]
fn remote_objective_drives_a_full_run() {
    let (m, _) = mock(0);
    let url = format!("http://{}", serve(m.clone()));
    let dir = tempfile::tempdir().unwrap();
    let data_path = dir.path().join("data.tsv");
    let mut text = String::new();
    for i in 0..25 {
        text.push_str(&format!("x{i}\ty{i}\n"));
    }
    std::fs::write(&data_path, text).unwrap();
    let cfg = ExperimentConfig {
        objective: ObjectiveSpec::Remote {
            generate_url: Some(url.clone()),
            complete_url: Some(url.clone()),
            dataset: data_path,
            exemplars: None,
            n_exemplars: 5,
            metric: ScoreMetric::ExactMatch,
            retry: fast_retry(),
        },
        grid: GridConfig { intrinsic_dims: vec![2], n_tokens: vec![1], token_embedding_dim: 3, size: 200 },
        bandit: instinct_core::neuralucb::BanditConfig {
            n_init: 4,
            n_queries: 3,
            candidates_per_iter: 20,
            ..Default::default()
        },
        train: instinct_core::surrogate::TrainConfig { hidden: 8, iterations: 10, ..Default::default() },
        ..ExperimentConfig::default()
    };
    let started = Instant::now();
    let rec = harness::run_cell(&cfg, Cell { intrinsic_dim: 2, n_tokens: 1 }, 0, cfg.trial_seeds()[0]).unwrap();
    assert!(rec.complete, "{:?}", rec.error);
    assert_eq!(rec.oracle_calls, 7);
    assert!(rec.best.as_ref().unwrap().instruction.as_deref().unwrap().contains("bucket"));
    // 7 generations plus 20 validation completions each; the first 5 lines became exemplars
    let calls = m.calls.lock().unwrap();
    assert_eq!(calls.iter().filter(|c| c.0 == "generate").count(), 7);
    assert_eq!(calls.iter().filter(|c| c.0 == "complete").count(), 7 * 20);
    assert!(started.elapsed().as_secs() < 30);
}
