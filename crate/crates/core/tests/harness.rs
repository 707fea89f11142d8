use instinct_core::harness::{self, BaselineMode, Cell, ExperimentConfig, GridConfig, TrialMode};
use instinct_core::neuralucb::BanditConfig;
use instinct_core::oracle::ObjectiveSpec;
use instinct_core::surrogate::TrainConfig;

/// Full 40 + 125 budget on cheap cells.
fn config() -> ExperimentConfig {
    ExperimentConfig {
        master_seed: 5,
        objective: ObjectiveSpec::Quantized {
            coords: 3,
            buckets: 3,
            width: 0.5,
            target: None,
            deceptive: false,
            decoy: None,
        },
        grid: GridConfig { intrinsic_dims: vec![3, 4, 5], n_tokens: vec![1, 2, 3], token_embedding_dim: 6, size: 600 },
        bandit: BanditConfig { candidates_per_iter: 30, ..Default::default() },
        train: TrainConfig { hidden: 6, iterations: 3, ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn three_by_three_grid_spends_nine_budgets() {
    let cfg = config();
    let reports = harness::run_experiment(&cfg).unwrap();
    assert_eq!(reports.len(), 1);
    let r = &reports[0];
    assert_eq!(r.cells.len(), 9);
    assert_eq!(r.records.len(), 9);
    let calls: usize = r.records.iter().map(|rec| rec.oracle_calls).sum();
    assert_eq!(calls, 9 * 165);
    assert!(r.cells.iter().all(|c| c.complete));
    let best = r.cells.iter().filter_map(|c| c.best_score).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(r.best_score, best);
    // ties go to the first cell in grid order
    let first = r.cells.iter().find(|c| c.best_score == Some(best)).unwrap();
    assert_eq!(r.best_cell, first.cell);
}

#[test]
fn single_cell_grid_equals_a_single_run() {
    let mut cfg = config();
    cfg.grid.intrinsic_dims = vec![4];
    cfg.grid.n_tokens = vec![2];
    cfg.bandit.n_queries = 10;
    let reports = harness::run_experiment(&cfg).unwrap();
    let seed = cfg.trial_seeds()[0];
    let single = harness::run_cell(&cfg, Cell { intrinsic_dim: 4, n_tokens: 2 }, 0, seed).unwrap();
    let mut a = reports[0].records[0].clone();
    let mut b = single;
    a.strip_wall_clock();
    b.strip_wall_clock();
    assert_eq!(a.rows, b.rows);
    assert_eq!(reports[0].best_score, b.best_score().unwrap());
}

#[test]
fn reuse_best_cell_runs_one_cell_after_the_first_trial() {
    let mut cfg = config();
    cfg.trials = 3;
    cfg.trial_mode = TrialMode::ReuseBestCell;
    cfg.grid.intrinsic_dims = vec![3, 5];
    cfg.grid.n_tokens = vec![1];
    cfg.bandit.n_queries = 5;
    let reports = harness::run_experiment(&cfg).unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0].cells.len(), 2);
    for r in &reports[1..] {
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].cell, reports[0].best_cell);
    }
    let seeds: std::collections::HashSet<u64> = reports.iter().map(|r| r.trial_seed).collect();
    assert_eq!(seeds.len(), 3);

    cfg.trial_mode = TrialMode::PerTrial;
    let per_trial = harness::run_experiment(&cfg).unwrap();
    assert!(per_trial.iter().all(|r| r.cells.len() == 2));
}

#[test]
fn baselines_match_their_bandit_equivalents() {
    let mut cfg = config();
    cfg.grid.intrinsic_dims = vec![4];
    cfg.grid.n_tokens = vec![1];
    let cell = Cell { intrinsic_dim: 4, n_tokens: 1 };
    let seed = cfg.trial_seeds()[0];

    let init_only = harness::baseline_random(&cfg, BaselineMode::InitOnly, cell, 0).unwrap();
    assert_eq!(init_only.oracle_calls, 40);
    let mut no_queries = cfg.clone();
    no_queries.bandit.n_queries = 0;
    let bandit0 = harness::run_cell(&no_queries, cell, 0, seed).unwrap();
    assert_eq!(init_only.best_score(), bandit0.best_score());
    assert_eq!(init_only.best.as_ref().unwrap().index, bandit0.best.as_ref().unwrap().index);

    let full = harness::baseline_random(&cfg, BaselineMode::RandomFull, cell, 0).unwrap();
    assert_eq!(full.oracle_calls, 165);
    assert!(full.rows.iter().all(|r| r.pred_mean.is_none() && r.sigma.is_none()));
    let distinct: std::collections::HashSet<usize> = full.rows.iter().map(|r| r.index).collect();
    assert_eq!(distinct.len(), 165);
    assert!(full.best_score() >= init_only.best_score());
}

#[test]
fn artifacts_describe_the_runs() {
    let mut cfg = config();
    cfg.grid.intrinsic_dims = vec![3];
    cfg.grid.n_tokens = vec![1, 2];
    cfg.bandit.n_queries = 6;
    let reports = harness::run_experiment(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    harness::write_grid_artifacts(&reports, dir.path()).unwrap();

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("grid_report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["cells"].as_array().unwrap().len(), 2);

    for rec in &reports[0].records {
        let id = &rec.run_id;
        let jsonl = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
        let rows: Vec<serde_json::Value> = jsonl.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 46);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row["iter"], k);
            let keys: Vec<&str> = row.as_object().unwrap().keys().map(String::as_str).collect();
            for key in ["iter", "phase", "index", "score", "pred_mean", "sigma", "acq", "train_loss_final", "wall_ms"] {
                assert!(keys.contains(&key), "{key} missing");
            }
        }
        assert!(rows[..40].iter().all(|r| r["phase"] == "init" && r["sigma"].is_null()));
        assert!(rows[40..].iter().all(|r| r["phase"] == "bandit" && r["sigma"].as_f64().unwrap() > 0.0));

        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(format!("{id}.summary.json"))).unwrap())
                .unwrap();
        assert_eq!(summary["oracle_calls"], 46);
        assert_eq!(summary["best_score"].as_f64(), rec.best_score());
        assert_eq!(summary["config"]["bandit"]["n_queries"], 6);

        let csv = std::fs::read_to_string(dir.path().join(format!("{id}.best_so_far.csv"))).unwrap();
        let mut running = f64::NEG_INFINITY;
        for (line, row) in csv.lines().skip(1).zip(&rec.rows) {
            running = running.max(row.score);
            let last: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert_eq!(last, running);
        }
    }
}
