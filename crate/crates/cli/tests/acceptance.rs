//! One PASS/FAIL line per acceptance criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use uda3d::ablation::{default_runs, run_sweep, BenchmarkConfig, SweepConfig};
use uda3d::evalkit::average_precision;
use uda3d::geometry::{iou_bev, Box3D, IouVariant};
use uda3d::toydet::DetectorParams;

use common::oracles::{
    ap_enumeration_suite, bridge_suite, car, containment_suite, det, ema_suite, mean, merge_suite, raster_suite,
};
use common::{gradient_suite, small_config, MIN_COORDS};

const TRENDS: [u32; 3] = [6, 7, 8];

struct Outcome {
    id: u32,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let checks = gradient_suite();
    let elapsed = t.elapsed();
    let worst = checks.iter().map(|c| c.max_rel).fold(0.0, f64::max);
    let fewest = checks.iter().map(|c| c.coords).min().unwrap_or(0);
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
    Outcome {
        id: 1,
        name: "gradient suite",
        passed: failed.is_empty() && fewest >= MIN_COORDS && elapsed < Duration::from_secs(120),
        detail: format!(
            "{} checks, worst rel err {worst:.2e}, fewest coords {fewest}, {:.1} s, failed {failed:?}",
            checks.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn geometry() -> Outcome {
    let t = Instant::now();
    let (worst, overlapping) = raster_suite(1000, 101);
    let a = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0).unwrap();
    let b = Box3D::new(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4).unwrap();
    let rot = (iou_bev(&a, &b) - std::f64::consts::FRAC_1_SQRT_2).abs();
    let (excess, projected, bad_trunc) = containment_suite(1000, 102);
    let elapsed = t.elapsed();
    Outcome {
        id: 2,
        name: "geometry oracles",
        passed: worst < 5e-3 && rot < 1e-3 && excess <= 1e-6 && bad_trunc <= 0.0 && elapsed < Duration::from_secs(60),
        detail: format!(
            "raster worst {worst:.2e} ({overlapping}/1000 overlapping), 45 deg off by {rot:.1e}, \
             corner excess {excess:.1e} px over {projected} projections, {:.1} s",
            elapsed.as_secs_f64()
        ),
    }
}

fn ema() -> Outcome {
    let cfg = small_config();
    let worst = ema_suite(&DetectorParams::<f64>::new(&cfg, 2), &DetectorParams::<f64>::new(&cfg, 3), 0.999, 100);
    Outcome {
        id: 3,
        name: "EMA closed form",
        passed: worst < 1e-12,
        detail: format!("worst deviation from eps^k over k <= 100, relative to operands: {worst:.2e}"),
    }
}

fn merge() -> Outcome {
    let (equal, kept) = merge_suite(500, 103);
    Outcome {
        id: 4,
        name: "pseudo-label merge",
        passed: equal == 500,
        detail: format!("{equal}/500 configurations equal to brute force ({kept} kept image boxes)"),
    }
}

fn ap() -> Outcome {
    let (configs, worst) = ap_enumeration_suite();
    let two = average_precision(&[det(car(0.0, 0.0), 0.9)], &[car(0.0, 0.0), car(10.0, 0.0)], 0.7, IouVariant::Bev);
    Outcome {
        id: 5,
        name: "AP oracle",
        passed: worst <= 1e-12 && two == 50.0,
        detail: format!("{configs} configurations, worst deviation {worst:.1e}; 2 GT / 1 TP = {two}"),
    }
}

fn trends() -> Vec<Outcome> {
    let workers = std::env::var("UDA3D_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let t = Instant::now();
    let data = BenchmarkConfig::default().generate().unwrap();
    let cfg = SweepConfig::default();
    let res = run_sweep(&data, &cfg, &default_runs(false), workers).unwrap();
    let minutes = t.elapsed().as_secs_f64() / 60.0;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", res.table()).unwrap();
    writeln!(stdout, "sweep: {} seeds on {workers} worker(s), {minutes:.1} min", cfg.seeds.len()).unwrap();
    drop(stdout);
    let c6 = res.component_trend(2.0);
    let c7 = res.bridge_trend();
    let c8 = res.range_trend("0-30m", "30-60m");
    vec![
        Outcome {
            id: 6,
            name: "component ordering",
            passed: c6.passed,
            detail: format!("{} ({} seeds, {minutes:.1} min on {workers} worker(s))", c6.detail, cfg.seeds.len()),
        },
        Outcome { id: 7, name: "alignment in both stages", passed: c7.passed, detail: c7.detail },
        Outcome { id: 8, name: "CAM gain by range", passed: c8.passed, detail: c8.detail },
    ]
}

fn bridge() -> Outcome {
    let c = bridge_suite(40, 104);
    let (si, st) = (mean(&c.same_img), mean(&c.same_txt));
    let (di, dt) = (mean(&c.disjoint_img), mean(&c.disjoint_txt));
    Outcome {
        id: 9,
        name: "bridge premise",
        passed: si >= 0.9 && st >= 0.98 && di <= 0.2 && dt <= 0.2,
        detail: format!("same attributes image {si:.3} text {st:.3}; disjoint image {di:.3} text {dt:.3}"),
    }
}

fn run(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_uda3d"))
        .args(args)
        .env("UDA3D_WORKERS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn replay_all(dir: &Path) -> Result<usize, String> {
    let p = |x: &str| dir.join(x).to_str().unwrap().to_string();
    std::fs::write(dir.join("c.toml"), "[data]\nn_source = 20\nn_target = 20\nn_target_val = 10\n").unwrap();
    let cfg = p("c.toml");
    let data = p("data");
    run(&["gen-data", "--config", &cfg, "--out", &data])?;
    run(&["pretrain", "--config", &cfg, "--data", &data, "--out", &p("pre"), "--epochs", "2"])?;
    let init = p("pre/checkpoint.json");
    run(&["selftrain", "--config", &cfg, "--data", &data, "--init", &init, "--out", &p("st"), "--epochs", "1"])?;
    let ck = p("st/checkpoint.json");
    run(&["eval", "--checkpoint", &ck, "--data", &data, "--out", &p("ev"), "--source-ap", "5", "--oracle-ap", "50"])?;
    run(&["ablation", "--config", &cfg, "--data", &data, "--out", &p("abl"), "--seed", "1", "--only", "b", "--epochs", "1"])?;
    let manifests = [
        "data/manifest.json",
        "pre/manifest.json",
        "st/manifest.json",
        "ev/manifest.json",
        "abl/manifest.json",
        "abl/runs/b/seed-1/manifest.json",
    ];
    for (i, m) in manifests.iter().enumerate() {
        // replay exits nonzero when any recorded output differs
        run(&["replay", &p(m), "--out", &p(&format!("replay{i}"))])?;
    }
    Ok(manifests.len())
}

fn replay() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let r = replay_all(dir.path());
    Outcome {
        id: 10,
        name: "manifest replay",
        passed: r.is_ok(),
        detail: match r {
            Ok(n) => format!("{n} manifests (gen-data, pretrain, selftrain, eval, ablation, one run) replayed byte-identically"),
            Err(e) => e,
        },
    }
}

#[test]
fn acceptance() {
    let mut out = vec![gradients(), geometry(), ema(), merge(), ap()];
    out.extend(trends());
    out.push(bridge());
    out.push(replay());
    // straight to the handle so the lines show without --nocapture
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout).unwrap();
    for o in &out {
        writeln!(stdout, "{} {:>2} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.id, o.name, o.detail).unwrap();
    }
    // 6-8 are empirical trends on the synthetic benchmark: reported, not asserted
    let failed: Vec<u32> = out.iter().filter(|o| !o.passed && !TRENDS.contains(&o.id)).map(|o| o.id).collect();
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
