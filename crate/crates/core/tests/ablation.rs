use uda3d::ablation::{
    default_runs, mean_std, run_sweep, BenchmarkConfig, RunRecord, SweepConfig, SweepResult, PRE_ONLY, ROW_A, ROW_B,
    ROW_E, ROW_F, SELF_ONLY,
};
use uda3d::evalkit::{BucketAp, EvalResult};
use uda3d::selftrain::AblationFlags;

#[test]
fn run_grid_layout() {
    let runs = default_runs(false);
    let names: Vec<&str> = runs.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["a", "b", "e", "f", "pre_only", "self_only"]);
    let f = |n: &str| runs.iter().find(|r| r.name == n).unwrap().clone();
    assert_eq!(f(ROW_A).selftrain, AblationFlags::NONE);
    assert_eq!(f(ROW_F).selftrain, AblationFlags::ALL);
    // the four stage-grid cells: alignment nowhere, pre only, self only, both
    let cell = |n: &str| {
        let r = f(n);
        (r.pretrain_ia && r.pretrain_ta, r.selftrain.ia && r.selftrain.ta, r.selftrain.cam, r.selftrain.sta)
    };
    assert_eq!(cell(ROW_B), (false, false, true, false));
    assert_eq!(cell(PRE_ONLY), (true, false, true, false));
    assert_eq!(cell(SELF_ONLY), (false, true, true, false));
    assert_eq!(cell(ROW_E), (true, true, true, false));
    let extra: Vec<String> = default_runs(true).into_iter().map(|r| r.name).collect();
    assert!(extra.contains(&"c".to_string()) && extra.contains(&"d".to_string()));
}

#[test]
fn mean_and_sample_std() {
    let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m, 2.5);
    assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    assert!(mean_std(&[]).0.is_nan());
}

fn record(run: &str, seed: u64, bev: f64, ap3d: f64, buckets: [f64; 3]) -> RunRecord {
    let edges = [0.0, 30.0, 60.0, 150.0];
    RunRecord {
        run: run.into(),
        seed,
        eval: EvalResult {
            ap_bev: bev,
            ap_3d: ap3d,
            per_range: (0..3)
                .map(|i| BucketAp { lo: edges[i], hi: edges[i + 1], ap_bev: buckets[i], ap_3d: 0.0, n_gt: 1, n_det: 1 })
                .collect(),
            n_gt: 3,
            n_det: 3,
            iou_threshold: 0.7,
            closed_gap_bev: None,
            closed_gap_3d: None,
        },
        history: vec![],
    }
}

#[test]
fn trend_checks_on_known_tables() {
    let mut records = Vec::new();
    for seed in 0..2 {
        let jitter = seed as f64 * 0.1;
        records.push(record(ROW_A, seed, 40.0 + jitter, 30.0, [50.0, 30.0, 10.0]));
        records.push(record(ROW_B, seed, 41.0 + jitter, 31.0, [50.5, 33.0, 10.0]));
        records.push(record(ROW_E, seed, 42.0 + jitter, 33.0, [51.0, 34.0, 11.0]));
        records.push(record(ROW_F, seed, 43.0 + jitter, 34.0, [51.0, 35.0, 11.0]));
        records.push(record(PRE_ONLY, seed, 41.5, 32.0, [0.0; 3]));
        records.push(record(SELF_ONLY, seed, 41.5, 31.5, [0.0; 3]));
    }
    let res = SweepResult { records };
    assert!(res.component_trend(2.0).passed);
    assert!(!res.component_trend(3.5).passed);
    assert!(res.bridge_trend().passed);
    let r = res.range_trend("0-30m", "30-60m");
    assert!(r.passed, "{}", r.detail);
    assert!(!res.range_trend("30-60m", "0-30m").passed);
    assert!((res.mean_bucket_bev(ROW_B, "30-60m") - 33.0).abs() < 1e-12);
    assert!(res.table().lines().count() == 7);

    // a dip anywhere in the chain fails the ordering
    let mut dipped = res.clone();
    for r in dipped.records.iter_mut().filter(|r| r.run == ROW_E) {
        r.eval.ap_bev = 40.5;
    }
    assert!(!dipped.component_trend(2.0).passed);
}

#[test]
fn sweeps_do_not_depend_on_the_worker_count() {
    let bench = BenchmarkConfig { n_source: 6, n_target: 6, n_target_val: 4, ..BenchmarkConfig::default() };
    let data = bench.generate().unwrap();
    let mut cfg = SweepConfig { seeds: vec![0, 1], ..SweepConfig::default() };
    cfg.pretrain.hyper.epochs = 1;
    cfg.selftrain.hyper.epochs = 1;
    let runs: Vec<_> = default_runs(false).into_iter().filter(|r| r.name == ROW_A || r.name == ROW_F).collect();
    let one = run_sweep(&data, &cfg, &runs, 1).unwrap();
    let three = run_sweep(&data, &cfg, &runs, 3).unwrap();
    assert_eq!(one, three);
    // per seed: two source-only models and the two runs
    assert_eq!(one.records.len(), 8);
    assert!(run_sweep(&data, &SweepConfig { seeds: vec![], ..cfg }, &runs, 1).is_err());
}
