//! Seed sweeps over the component switches: the baseline / +CAM /
//! +CAM+IA+TA / full rows and the grid of stages in which image and text
//! alignment is applied.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalkit::{detector_frames, evaluate, EvalError, EvalResult, DEFAULT_BUCKETS, DEFAULT_IOU};
use crate::selftrain::{pretrain, selftrain, AblationFlags, TrainConfig, TrainError};
use crate::synthworld::{generate_split, DomainConfig, Scene, SynthError};
use crate::toydet::{Checkpoint, DetectorParams, EpochLoss};

#[derive(Debug, Error)]
pub enum AblationError {
    #[error("run {run} (seed {seed}): {source}")]
    Train {
        run: String,
        seed: u64,
        #[source]
        source: TrainError,
    },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("no seeds given")]
    NoSeeds,
    #[error("worker pool: {0}")]
    Pool(String),
}

/// Labeled source scenes, unlabeled target scenes and a held-out labeled
/// target split used only for evaluation.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub source: Vec<Scene>,
    pub target: Vec<Scene>,
    pub target_val: Vec<Scene>,
}

/// Sizes and seed of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub source: DomainConfig,
    pub target: DomainConfig,
    pub n_source: usize,
    pub n_target: usize,
    pub n_target_val: usize,
    pub seed: u64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            source: DomainConfig::source(),
            target: DomainConfig::target(),
            n_source: 200,
            n_target: 200,
            n_target_val: 200,
            seed: 0,
        }
    }
}

impl BenchmarkConfig {
    /// Base seeds of the three splits.
    pub fn split_seeds(&self) -> [u64; 3] {
        [
            crate::synthworld::hash_seed(&[self.seed, 1]),
            crate::synthworld::hash_seed(&[self.seed, 2]),
            crate::synthworld::hash_seed(&[self.seed, 3]),
        ]
    }

    pub fn generate(&self) -> Result<Benchmark, SynthError> {
        let [s, t, v] = self.split_seeds();
        Ok(Benchmark {
            source: generate_split(&self.source, self.n_source, s)?,
            target: generate_split(&self.target, self.n_target, t)?,
            target_val: generate_split(&self.target, self.n_target_val, v)?,
        })
    }
}

/// One configuration of the sweep: which alignment terms the pre-training
/// uses and which switches the self-training uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub name: String,
    pub pretrain_ia: bool,
    pub pretrain_ta: bool,
    pub selftrain: AblationFlags,
}

impl RunSpec {
    fn new(name: &str, pre: (bool, bool), st: AblationFlags) -> Self {
        Self {
            name: name.into(),
            pretrain_ia: pre.0,
            pretrain_ta: pre.1,
            selftrain: st,
        }
    }

    fn pretrain_key(&self) -> (bool, bool) {
        (self.pretrain_ia, self.pretrain_ta)
    }
}

/// Row names of the component table and cells of the stage grid.
pub const ROW_A: &str = "a";
pub const ROW_B: &str = "b";
pub const ROW_C: &str = "c";
pub const ROW_D: &str = "d";
pub const ROW_E: &str = "e";
pub const ROW_F: &str = "f";
pub const PRE_ONLY: &str = "pre_only";
pub const SELF_ONLY: &str = "self_only";

/// Rows (a), (b), (e), (f), optionally (c) and (d), and the two stage-grid
/// cells not already covered by a row. Image and text alignment in row
/// (x) apply to both stages, so (b) is the grid's "neither" cell and (e)
/// its "both" cell.
pub fn default_runs(extra_rows: bool) -> Vec<RunSpec> {
    let f = AblationFlags::new;
    let mut runs = vec![
        RunSpec::new(ROW_A, (false, false), f(false, false, false, false)),
        RunSpec::new(ROW_B, (false, false), f(false, false, true, false)),
    ];
    if extra_rows {
        runs.push(RunSpec::new(ROW_C, (true, false), f(true, false, true, false)));
        runs.push(RunSpec::new(ROW_D, (false, true), f(false, true, true, false)));
    }
    runs.extend([
        RunSpec::new(ROW_E, (true, true), f(true, true, true, false)),
        RunSpec::new(ROW_F, (true, true), f(true, true, true, true)),
        RunSpec::new(PRE_ONLY, (true, true), f(false, false, true, false)),
        RunSpec::new(SELF_ONLY, (false, false), f(true, true, true, false)),
    ]);
    runs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub pretrain: TrainConfig,
    pub selftrain: TrainConfig,
    pub seeds: Vec<u64>,
    pub range_edges: Vec<f64>,
    pub iou_threshold: f64,
    /// Also run rows (c) and (d).
    pub extra_rows: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            pretrain: TrainConfig::pretrain(0),
            selftrain: TrainConfig::selftrain(0),
            seeds: (0..5).collect(),
            range_edges: DEFAULT_BUCKETS.to_vec(),
            iou_threshold: DEFAULT_IOU,
            extra_rows: false,
        }
    }
}

/// Evaluation of one trained model on the held-out target split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: String,
    pub seed: u64,
    pub eval: EvalResult,
    pub history: Vec<EpochLoss>,
}

/// Every evaluation of a sweep. Source-only models are recorded under
/// `source_only_<ia><ta>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub records: Vec<RunRecord>,
}

pub fn source_only_name(ia: bool, ta: bool) -> String {
    format!("source_only_{}{}", u8::from(ia), u8::from(ta))
}

fn pretrain_config(base: &TrainConfig, seed: u64, ia: bool, ta: bool) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.flags = AblationFlags::new(ia, ta, false, false);
    cfg
}

fn selftrain_config(base: &TrainConfig, seed: u64, flags: AblationFlags) -> TrainConfig {
    let mut cfg = base.clone();
    cfg.seed = seed;
    cfg.flags = flags;
    cfg
}

fn eval_checkpoint(ck: &Checkpoint, data: &Benchmark, cfg: &SweepConfig) -> Result<EvalResult, AblationError> {
    let params: DetectorParams<f32> = ck.to_params().map_err(|e| AblationError::Train {
        run: "checkpoint".into(),
        seed: 0,
        source: e.into(),
    })?;
    let frames = detector_frames(&params, &data.target_val, &ck.arch);
    Ok(evaluate(&frames, cfg.iou_threshold, &cfg.range_edges)?)
}

/// Trains and evaluates every run for every seed on `workers` threads.
/// Results are ordered by seed, then by run, independent of scheduling.
pub fn run_sweep(
    data: &Benchmark,
    cfg: &SweepConfig,
    runs: &[RunSpec],
    workers: usize,
) -> Result<SweepResult, AblationError> {
    if cfg.seeds.is_empty() {
        return Err(AblationError::NoSeeds);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| AblationError::Pool(e.to_string()))?;
    pool.install(|| sweep_inner(data, cfg, runs))
}

fn sweep_inner(data: &Benchmark, cfg: &SweepConfig, runs: &[RunSpec]) -> Result<SweepResult, AblationError> {
    let mut keys: Vec<(bool, bool)> = runs.iter().map(RunSpec::pretrain_key).collect();
    keys.sort();
    keys.dedup();
    let pre_jobs: Vec<(u64, (bool, bool))> =
        cfg.seeds.iter().flat_map(|&s| keys.iter().map(move |&k| (s, k))).collect();
    let pretrained: Vec<(u64, (bool, bool), Checkpoint, EvalResult)> = pre_jobs
        .par_iter()
        .map(|&(seed, (ia, ta))| {
            let pc = pretrain_config(&cfg.pretrain, seed, ia, ta);
            log::info!("seed {seed}: pretrain ia={ia} ta={ta}");
            let ck = pretrain(&data.source, &pc).map_err(|source| AblationError::Train {
                run: source_only_name(ia, ta),
                seed,
                source,
            })?;
            let ev = eval_checkpoint(&ck, data, cfg)?;
            Ok((seed, (ia, ta), ck, ev))
        })
        .collect::<Result<_, AblationError>>()?;
    let inits: BTreeMap<(u64, (bool, bool)), &Checkpoint> =
        pretrained.iter().map(|(s, k, ck, _)| ((*s, *k), ck)).collect();

    let st_jobs: Vec<(u64, &RunSpec)> = cfg.seeds.iter().flat_map(|&s| runs.iter().map(move |r| (s, r))).collect();
    let trained: Vec<RunRecord> = st_jobs
        .par_iter()
        .map(|&(seed, run)| {
            let init = inits[&(seed, run.pretrain_key())];
            let sc = selftrain_config(&cfg.selftrain, seed, run.selftrain);
            log::info!("seed {seed}: selftrain {} ({})", run.name, run.selftrain.label());
            let ck = selftrain(&data.target, init, &sc).map_err(|source| AblationError::Train {
                run: run.name.clone(),
                seed,
                source,
            })?;
            Ok(RunRecord {
                run: run.name.clone(),
                seed,
                eval: eval_checkpoint(&ck, data, cfg)?,
                history: ck.history,
            })
        })
        .collect::<Result<_, AblationError>>()?;

    let mut records: Vec<RunRecord> = pretrained
        .into_iter()
        .map(|(seed, (ia, ta), ck, eval)| RunRecord {
            run: source_only_name(ia, ta),
            seed,
            eval,
            history: ck.history,
        })
        .collect();
    records.extend(trained);
    let rank = |r: &RunRecord| (r.seed, runs.iter().position(|x| x.name == r.run).unwrap_or(usize::MAX), r.run.clone());
    records.sort_by_key(rank);
    Ok(SweepResult { records })
}

/// Mean and sample standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// A trend criterion and whether the sweep met it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SweepResult {
    pub fn of(&self, run: &str) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.run == run).collect()
    }

    pub fn mean_bev(&self, run: &str) -> f64 {
        mean_std(&self.of(run).iter().map(|r| r.eval.ap_bev).collect::<Vec<_>>()).0
    }

    pub fn mean_3d(&self, run: &str) -> f64 {
        mean_std(&self.of(run).iter().map(|r| r.eval.ap_3d).collect::<Vec<_>>()).0
    }

    /// Mean AP_BEV of one range bucket, by bucket label (e.g. `30-60m`).
    pub fn mean_bucket_bev(&self, run: &str, bucket: &str) -> f64 {
        let v: Vec<f64> = self
            .of(run)
            .iter()
            .filter_map(|r| r.eval.per_range.iter().find(|b| b.label() == bucket))
            .map(|b| b.ap_bev)
            .collect();
        mean_std(&v).0
    }

    /// Component-table ordering: baseline <= +CAM <= +CAM+IA+TA <= full,
    /// with full at least `min_gain` AP_BEV above baseline.
    pub fn component_trend(&self, min_gain: f64) -> TrendCheck {
        let m: Vec<f64> = [ROW_A, ROW_B, ROW_E, ROW_F].iter().map(|r| self.mean_bev(r)).collect();
        let ordered = m.windows(2).all(|w| w[0] <= w[1]);
        let gain = m[3] - m[0];
        TrendCheck {
            name: "component ordering".into(),
            passed: ordered && gain >= min_gain,
            detail: format!(
                "mean AP_BEV a {:.2} <= b {:.2} <= e {:.2} <= f {:.2}; f - a = {:.2} (need >= {min_gain})",
                m[0], m[1], m[2], m[3], gain
            ),
        }
    }

    /// Stage grid on mean AP_3D: both >= max(pre only, self only) >= neither.
    pub fn bridge_trend(&self) -> TrendCheck {
        let none = self.mean_3d(ROW_B);
        let pre = self.mean_3d(PRE_ONLY);
        let slf = self.mean_3d(SELF_ONLY);
        let both = self.mean_3d(ROW_E);
        let mid = pre.max(slf);
        TrendCheck {
            name: "alignment in both stages".into(),
            passed: both >= mid && mid >= none,
            detail: format!(
                "mean AP_3D both {both:.2} >= max(pre {pre:.2}, self {slf:.2}) >= neither {none:.2}"
            ),
        }
    }

    /// CAM gain (row b over row a) in the `far` bucket exceeds the gain in
    /// the `near` bucket.
    pub fn range_trend(&self, near: &str, far: &str) -> TrendCheck {
        let gain = |b: &str| self.mean_bucket_bev(ROW_B, b) - self.mean_bucket_bev(ROW_A, b);
        let (gn, gf) = (gain(near), gain(far));
        TrendCheck {
            name: "CAM gain by range".into(),
            passed: gf > gn,
            detail: format!("CAM gain in AP_BEV: {far} {gf:+.2} vs {near} {gn:+.2}"),
        }
    }

    /// Mean and standard deviation per run, in first-seen order.
    pub fn table(&self) -> String {
        let mut names: Vec<&str> = Vec::new();
        for r in &self.records {
            if !names.contains(&r.run.as_str()) {
                names.push(&r.run);
            }
        }
        let mut out = format!("{:<14} {:^15}  {:^15}", "run", "AP_BEV", "AP_3D");
        let buckets: Vec<String> = self.records.first().map_or(Vec::new(), |r| {
            r.eval.per_range.iter().map(|b| b.label()).collect()
        });
        for b in &buckets {
            out.push_str(&format!("   {b:>8}"));
        }
        out.push('\n');
        for n in names {
            let recs = self.of(n);
            let (bm, bs) = mean_std(&recs.iter().map(|r| r.eval.ap_bev).collect::<Vec<_>>());
            let (tm, ts) = mean_std(&recs.iter().map(|r| r.eval.ap_3d).collect::<Vec<_>>());
            out.push_str(&format!("{n:<14} {bm:6.2} ± {bs:5.2}  {tm:6.2} ± {ts:5.2}"));
            for b in &buckets {
                out.push_str(&format!("   {:8.2}", self.mean_bucket_bev(n, b)));
            }
            out.push('\n');
        }
        out
    }
}
