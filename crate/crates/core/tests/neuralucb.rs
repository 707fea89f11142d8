mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{bowl, domain, identity_cache, FnOracle};
use instinct_core::featuremap::{FeatureCache, FeatureVector, IdentityMap};
use instinct_core::neuralucb::{
    acquisition, build_precision, run, select_from, select_next, uncertainty, BanditConfig, Features, Observation,
    Phase, PrecisionDiag, PrecisionMode, RunRecord,
};
use instinct_core::surrogate::{param_count, Activation, SurrogateParams, TrainConfig};
use instinct_core::Error;

fn random_params(input: usize, hidden: usize, act: Activation, rng: &mut ChaCha8Rng) -> SurrogateParams {
    let flat = (0..param_count(input, hidden)).map(|_| rng.random_range(-2.0..2.0)).collect();
    SurrogateParams::from_flat(input, hidden, act, flat).unwrap()
}

fn observations(xs: &[Vec<f64>]) -> Vec<Observation> {
    xs.iter()
        .enumerate()
        .map(|(i, x)| Observation { domain_index: i, feature: FeatureVector(x.clone()), score: 0.5, iteration: i })
        .collect()
}

/// Full V = λI + Σ g gᵀ assembled entry by entry.
fn dense_precision(theta: &SurrogateParams, xs: &[Vec<f64>], lambda: f64) -> Vec<Vec<f64>> {
    let p = theta.len();
    let mut v = vec![vec![0.0; p]; p];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = lambda;
    }
    for x in xs {
        let g = theta.param_gradient(x).unwrap();
        for a in 0..p {
            for b in 0..p {
                v[a][b] += g[a] * g[b];
            }
        }
    }
    v
}

fn dense_sigma(theta: &SurrogateParams, v: &[Vec<f64>], x: &[f64]) -> f64 {
    let g = theta.param_gradient(x).unwrap();
    let mut s = 0.0;
    for p in 0..g.len() {
        s += g[p] * (1.0 / v[p][p]) * g[p];
    }
    s.sqrt()
}

#[test]
fn precision_matches_dense_oracle_on_tiny_net() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = std::time::Instant::now();
    for case in 0..200 {
        let act = if case % 2 == 0 { Activation::Relu } else { Activation::Tanh };
        let theta = random_params(1, 2, act, &mut rng);
        let n = case % 6;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-3.0..3.0)]).collect();
        let lambda = rng.random_range(0.01..2.0);
        let v = build_precision(&theta, &observations(&xs), lambda).unwrap();
        let dense = dense_precision(&theta, &xs, lambda);
        for p in 0..theta.len() {
            assert!((v.diag()[p] - dense[p][p]).abs() <= 1e-10 * dense[p][p].max(1.0));
        }
        for _ in 0..5 {
            let x = [rng.random_range(-3.0..3.0)];
            let got = uncertainty(&theta, &v, &x).unwrap();
            let want = dense_sigma(&theta, &dense, &x);
            assert!((got - want).abs() <= 1e-10, "case {case}: {got} vs {want}");
        }
    }
    assert!(started.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn empty_history_sigma_is_gradient_norm_over_sqrt_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let theta = random_params(3, 4, Activation::Tanh, &mut rng);
    let v = build_precision(&theta, &[], 0.1).unwrap();
    assert!(v.diag().iter().all(|&d| d == 0.1));
    let x = [0.3, -1.2, 0.8];
    let g = theta.param_gradient(&x).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((uncertainty(&theta, &v, &x).unwrap() - norm / 0.1f64.sqrt()).abs() < 1e-12);
}

#[test]
fn precision_entries_never_below_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta = random_params(4, 3, Activation::Relu, &mut rng);
    let xs: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let v = build_precision(&theta, &observations(&xs), 0.3).unwrap();
    assert!(v.diag().iter().all(|&d| d >= 0.3));
    assert!(matches!(PrecisionDiag::new(3, 0.0), Err(Error::Config(_))));
}

#[test]
fn acquisition_examples() {
    // m = 0.5 from the output bias alone, σ = 0.2 from a precision chosen to match
    let theta = SurrogateParams::from_flat(1, 1, Activation::Relu, vec![0.0, 0.0, 0.0, 0.5]).unwrap();
    let mut v = PrecisionDiag::new(theta.len(), 25.0).unwrap();
    let x = [1.0];
    assert!((uncertainty(&theta, &v, &x).unwrap() - 0.2).abs() < 1e-15);
    assert!((acquisition(&theta, &v, &x, 1.0).unwrap() - 0.7).abs() < 1e-15);
    assert_eq!(acquisition(&theta, &v, &x, 0.0).unwrap(), theta.forward(&x).unwrap());
    v.add_gradient(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    let m = theta.forward(&x).unwrap();
    let one = acquisition(&theta, &v, &x, 1.0).unwrap() - m;
    let two = acquisition(&theta, &v, &x, 2.0).unwrap() - m;
    assert!((two - 2.0 * one).abs() < 1e-15);
}

#[test]
fn selection_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let theta = random_params(5, 6, Activation::Relu, &mut rng);
        let hist: Vec<Vec<f64>> = (0..10).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let v = build_precision(&theta, &observations(&hist), 0.1).unwrap();
        let feats: Vec<Vec<f64>> = (0..100).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let nu = rng.random_range(0.0..2.0);
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for (i, x) in feats.iter().enumerate() {
            let a = acquisition(&theta, &v, x, nu).unwrap();
            if a > best.0 {
                best = (a, i);
            }
        }
        let sel = select_from(&theta, &v, feats.iter().enumerate().map(|(i, x)| (i, x.as_slice())), nu).unwrap();
        assert_eq!(sel.index, best.1);
        assert_eq!(sel.scored.acq, best.0);
    }
}

#[test]
fn selection_edge_cases() {
    let theta = SurrogateParams::zeros(2, 2, Activation::Relu);
    let v = PrecisionDiag::new(theta.len(), 0.1).unwrap();
    let x = [1.0, 2.0];
    assert_eq!(select_from(&theta, &v, [(7, &x[..])], 1.0).unwrap().index, 7);
    // identical features give identical acquisition, so the lower index wins in any order
    assert_eq!(select_from(&theta, &v, [(9, &x[..]), (3, &x[..])], 1.0).unwrap().index, 3);
    assert!(matches!(select_from(&theta, &v, std::iter::empty(), 1.0), Err(Error::BudgetExhausted(_))));

    let cache = FeatureCache::from_features(
        "test",
        0,
        vec![FeatureVector(vec![0.0, 1.0]), FeatureVector(vec![1.0, 1.0]), FeatureVector(vec![0.0, 1.0])],
    )
    .unwrap();
    assert_eq!(select_next(&theta, &v, &cache, &[2, 0], 1.0).unwrap().index, 0);
    assert!(select_next(&theta, &v, &cache, &[5], 1.0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn sigma_never_grows_when_observations_are_added(seed in any::<u64>(), n in 0usize..8, relu in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let act = if relu { Activation::Relu } else { Activation::Tanh };
        let theta = random_params(3, 4, act, &mut rng);
        let mut pt = || -> Vec<f64> { (0..3).map(|_| rng.random_range(-2.0..2.0)).collect() };
        let hist: Vec<Vec<f64>> = (0..n).map(|_| pt()).collect();
        let added = pt();
        let probes: Vec<Vec<f64>> = (0..5).map(|_| pt()).collect();
        let before = build_precision(&theta, &observations(&hist), 0.1).unwrap();
        let mut grown = hist.clone();
        grown.push(added.clone());
        let after = build_precision(&theta, &observations(&grown), 0.1).unwrap();
        for x in probes.iter().chain(std::iter::once(&added)) {
            let (s0, s1) = (uncertainty(&theta, &before, x).unwrap(), uncertainty(&theta, &after, x).unwrap());
            prop_assert!(s1 <= s0, "σ grew from {s0} to {s1}");
        }
        // the output-bias gradient is 1, so the appended point always shrinks strictly
        let (s0, s1) = (uncertainty(&theta, &before, &added).unwrap(), uncertainty(&theta, &after, &added).unwrap());
        prop_assert!(s1 < s0);
    }

    #[test]
    fn constant_shift_of_means_keeps_the_argmax(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = random_params(3, 5, Activation::Relu, &mut rng);
        let mut flat = theta.flat().to_vec();
        *flat.last_mut().unwrap() += c;
        let shifted = SurrogateParams::from_flat(3, 5, Activation::Relu, flat).unwrap();
        let hist: Vec<Vec<f64>> = (0..6).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let v = build_precision(&theta, &observations(&hist), 0.1).unwrap();
        let feats: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let pairs = || feats.iter().enumerate().map(|(i, x)| (i, x.as_slice()));
        let a = select_from(&theta, &v, pairs(), 1.0).unwrap();
        let b = select_from(&shifted, &v, pairs(), 1.0).unwrap();
        prop_assert_eq!(a.index, b.index);
        prop_assert!((b.scored.acq - a.scored.acq - c).abs() < 1e-9);
    }
}

fn small_train() -> TrainConfig {
    TrainConfig { hidden: 8, iterations: 30, ..TrainConfig::default() }
}

fn audit(record: &RunRecord, cfg: &BanditConfig) {
    assert!(record.complete, "{:?}", record.error);
    assert_eq!(record.oracle_calls, cfg.budget());
    assert_eq!(record.rows.len(), cfg.budget());
    let distinct: HashSet<usize> = record.rows.iter().map(|r| r.index).collect();
    assert_eq!(distinct.len(), record.rows.len(), "a domain index was queried twice");
    for (i, row) in record.rows.iter().enumerate() {
        assert_eq!(row.iter, i);
        assert_eq!(row.phase, if i < cfg.n_init { Phase::Init } else { Phase::Bandit });
    }
    let max = record.rows.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
    let best = record.best.as_ref().unwrap();
    assert_eq!(best.score, max);
    assert_eq!(best.iter, record.rows.iter().position(|r| r.score == max).unwrap());
}

#[test]
fn run_spends_exactly_the_budget() {
    let d = domain(400, 4, 6, 11);
    let cache = identity_cache(&d);
    let oracle = FnOracle(|_: &_, z: &_| Ok(bowl(z)));
    let cfg = BanditConfig { seed: 5, candidates_per_iter: 100, n_queries: 25, ..BanditConfig::default() };
    let rec = run("r", &d, Features::Cached(&cache), &oracle, &cfg, &small_train()).unwrap();
    audit(&rec, &cfg);
    assert!(rec.final_params.is_some());
    let init: Vec<usize> = rec.rows[..40].iter().map(|r| r.index).collect();
    assert!(init.windows(2).all(|w| w[0] < w[1]), "initial points are evaluated in index order");
    for row in &rec.rows[40..] {
        assert!(row.pred_mean.is_some() && row.sigma.unwrap() >= 0.0 && row.train_loss_final.is_some());
        assert!((row.acq.unwrap() - row.pred_mean.unwrap() - row.sigma.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn zero_queries_is_the_init_only_baseline() {
    let d = domain(300, 3, 5, 12);
    let cache = identity_cache(&d);
    let oracle = FnOracle(|_: &_, z: &_| Ok(bowl(z)));
    let full = BanditConfig { seed: 9, n_queries: 5, candidates_per_iter: 50, ..BanditConfig::default() };
    let init_only = BanditConfig { n_queries: 0, ..full.clone() };
    let mut a = run("a", &d, Features::Cached(&cache), &oracle, &full, &small_train()).unwrap();
    let mut b = run("b", &d, Features::Cached(&cache), &oracle, &init_only, &small_train()).unwrap();
    audit(&b, &init_only);
    a.strip_wall_clock();
    b.strip_wall_clock();
    assert_eq!(a.rows[..40], b.rows[..]);
    assert!(b.final_params.is_none());
    let random = BanditConfig { n_init: 165, n_queries: 0, ..full };
    let c = run("c", &d, Features::Cached(&cache), &oracle, &random, &small_train()).unwrap();
    audit(&c, &random);
}

/// Replays a run one query at a time: with all unqueried points as
/// candidates, every selection is the exhaustive argmax at that step's θ.
#[test]
fn small_domain_selection_is_exhaustive_argmax() {
    let d = domain(40, 2, 3, 13);
    let cache = identity_cache(&d);
    let oracle = FnOracle(|_: &_, z: &_| Ok(bowl(z)));
    let train = TrainConfig { hidden: 4, iterations: 20, ..TrainConfig::default() };
    let base = BanditConfig { seed: 3, n_init: 5, candidates_per_iter: 40, ..BanditConfig::default() };
    let queries = 12;
    let mut full =
        run("f", &d, Features::Cached(&cache), &oracle, &BanditConfig { n_queries: queries, ..base.clone() }, &train)
            .unwrap();
    full.strip_wall_clock();
    for k in 1..=queries {
        let cfg = BanditConfig { n_queries: k, ..base.clone() };
        let mut rec = run("k", &d, Features::Cached(&cache), &oracle, &cfg, &train).unwrap();
        rec.strip_wall_clock();
        assert_eq!(rec.rows[..], full.rows[..rec.rows.len()], "prefix of a longer run");
        let theta = rec.final_params.unwrap();
        let hist: Vec<Vec<f64>> =
            rec.rows[..rec.rows.len() - 1].iter().map(|r| cache.get(r.index).unwrap().values().to_vec()).collect();
        let v = build_precision(&theta, &observations(&hist), base.lambda).unwrap();
        let queried: HashSet<usize> = rec.rows[..rec.rows.len() - 1].iter().map(|r| r.index).collect();
        let mut best = (f64::NEG_INFINITY, usize::MAX);
        for i in (0..d.len()).filter(|i| !queried.contains(i)) {
            let a = acquisition(&theta, &v, cache.get(i).unwrap().values(), base.nu).unwrap();
            if a > best.0 {
                best = (a, i);
            }
        }
        assert_eq!(rec.rows.last().unwrap().index, best.1, "query {k}");
    }
}

#[test]
fn exhausting_the_domain_is_rejected_up_front() {
    let d = domain(30, 2, 3, 14);
    let cache = identity_cache(&d);
    let oracle = FnOracle(|_: &_, z: &_| Ok(bowl(z)));
    let cfg = BanditConfig { n_init: 20, n_queries: 11, ..BanditConfig::default() };
    let err = run("x", &d, Features::Cached(&cache), &oracle, &cfg, &small_train()).unwrap_err();
    assert!(matches!(err, Error::BudgetExhausted(_)));
}

#[test]
fn variants_are_deterministic_and_complete() {
    let d = domain(200, 3, 4, 15);
    let cache = identity_cache(&d);
    let map = IdentityMap::new(d.soft_prompt_dim());
    let oracle = FnOracle(|_: &_, z: &_| Ok(bowl(z)));
    let base = BanditConfig { seed: 21, n_init: 10, n_queries: 8, candidates_per_iter: 60, ..BanditConfig::default() };
    let train = small_train();
    let cached = run("v", &d, Features::Cached(&cache), &oracle, &base, &train).unwrap();
    let on_demand = run("v", &d, Features::OnDemand(&map), &oracle, &base, &train).unwrap();
    let strip = |mut r: RunRecord| {
        r.strip_wall_clock();
        r.rows
    };
    assert_eq!(strip(cached.clone()), strip(on_demand));
    let parallel = BanditConfig { init_parallelism: 4, embed_parallelism: 3, ..base.clone() };
    assert_eq!(
        strip(run("v", &d, Features::OnDemand(&map), &oracle, &parallel, &train).unwrap()),
        strip(cached.clone())
    );
    for cfg in [
        BanditConfig { precision_mode: PrecisionMode::Incremental, ..base.clone() },
        BanditConfig { warm_start: false, ..base.clone() },
        BanditConfig { nu: 0.0, ..base.clone() },
    ] {
        let a = run("v", &d, Features::Cached(&cache), &oracle, &cfg, &train).unwrap();
        let b = run("v", &d, Features::Cached(&cache), &oracle, &cfg, &train).unwrap();
        audit(&a, &cfg);
        assert_eq!(strip(a), strip(b));
    }
}

#[test]
fn oracle_failures_leave_an_incomplete_record() {
    let d = domain(200, 3, 4, 16);
    let cache = identity_cache(&d);
    let cfg = BanditConfig { seed: 1, n_init: 10, n_queries: 5, candidates_per_iter: 30, ..BanditConfig::default() };

    let failing = FnOracle(|ctx: &instinct_core::oracle::EvalContext, z: &_| {
        if ctx.iteration == 12 {
            Err(Error::Transport { attempts: 3, message: "down".into() })
        } else {
            Ok(bowl(z))
        }
    });
    let rec = run("f", &d, Features::Cached(&cache), &failing, &cfg, &small_train()).unwrap();
    assert!(!rec.complete);
    assert_eq!(rec.rows.len(), 12);
    assert!(rec.error.as_deref().unwrap().contains("transport"));

    let nan =
        FnOracle(|ctx: &instinct_core::oracle::EvalContext, _: &_| Ok(if ctx.iteration == 3 { f64::NAN } else { 0.5 }));
    let rec = run("n", &d, Features::Cached(&cache), &nan, &cfg, &small_train()).unwrap();
    assert!(!rec.complete);
    assert!(rec.error.as_deref().unwrap().contains("oracle contract"));

    let noisy = FnOracle(|ctx: &instinct_core::oracle::EvalContext, _: &_| {
        Ok(if ctx.iteration.is_multiple_of(2) { 1.0 + 1e-12 } else { -1e-12 })
    });
    let rec = run("c", &d, Features::Cached(&cache), &noisy, &cfg, &small_train()).unwrap();
    assert!(rec.complete);
    assert!(rec.rows.iter().all(|r| r.score == 0.0 || r.score == 1.0));
}
