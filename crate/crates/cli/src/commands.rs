use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::Parser;
use uda3d::ablation::{default_runs, run_sweep, source_only_name, Benchmark, RunSpec, SweepResult, TrendCheck};
use uda3d::evalkit::{closed_gap, detector_frames, evaluate, EvalResult, CSV_HEADER};
use uda3d::selftrain::{pretrain, selftrain, TrainConfig};
use uda3d::synthworld::io::{load_split, save_split};
use uda3d::synthworld::{DomainTag, Scene};
use uda3d::toydet::{Checkpoint, DetectorParams, EpochLoss};

use crate::config::{parse_buckets, Config};
use crate::manifest::{blob_hash, file_sha256, now, sha256_hex, RunManifest, MANIFEST_FILE};
use crate::plot::{Chart, Series};
use crate::{
    AblationArgs, Classify, Cli, Command, Common, EvalArgs, Failure, GenDataArgs, PlotArgs, PretrainArgs, ReplayArgs,
    SelftrainArgs, EXIT_TRAIN, LOSS_HEADER, SOURCE_SPLIT, TARGET_SPLIT, TARGET_VAL_SPLIT,
};

type Res<T> = Result<T, Failure>;

pub fn run(cli: Cli) -> Res<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Selftrain(a) => cmd_selftrain(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablation(a) => cmd_ablation(&a),
        Command::Plot(a) => cmd_plot(&a),
        Command::Replay(a) => cmd_replay(&a),
    }
}

fn abs(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn arg(v: &mut Vec<String>, flag: &str, value: impl ToString) {
    v.push(flag.into());
    v.push(value.to_string());
}

fn opt(v: &mut Vec<String>, flag: &str, value: Option<impl ToString>) {
    if let Some(x) = value {
        arg(v, flag, x);
    }
}

/// Collects what a command read and wrote, then writes its manifest.
struct Session {
    manifest: RunManifest,
    written: Vec<PathBuf>,
}

impl Session {
    fn start(command: &str, common: &Common, mut argv: Vec<String>, cfg: &Config) -> Res<Self> {
        let out = abs(&common.out);
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))
            .data()?;
        argv.insert(0, command.into());
        opt(&mut argv, "--config", common.config.as_deref().map(|p| abs(p).display().to_string()));
        arg(&mut argv, "--out", out.display());
        let config = cfg.to_toml();
        Ok(Self {
            manifest: RunManifest {
                command: command.into(),
                argv,
                config_path: common.config.as_deref().map(abs),
                config_sha256: sha256_hex(config.as_bytes()),
                config,
                seeds: Vec::new(),
                started: now(),
                finished: String::new(),
                out_dir: out,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
            },
            written: Vec::new(),
        })
    }

    fn out(&self, name: &str) -> PathBuf {
        self.manifest.out_dir.join(name)
    }

    fn input(&mut self, p: &Path) -> Res<()> {
        let h = blob_hash(p).data()?;
        self.manifest.inputs.insert(abs(p).display().to_string(), h);
        Ok(())
    }

    fn wrote(&mut self, p: PathBuf) {
        self.written.push(p);
    }

    fn finish(mut self) -> Res<RunManifest> {
        self.manifest.finished = now();
        self.manifest.hash_outputs(&self.written).data()?;
        self.manifest.write(&self.out(MANIFEST_FILE)).data()?;
        Ok(self.manifest)
    }
}

fn load_config(common: &Common) -> Res<Config> {
    match &common.config {
        Some(p) => Config::load(p).map(|c| c.0).usage(),
        None => Ok(Config::default()),
    }
}

fn load_split_checked(path: &Path, want: DomainTag) -> Res<Vec<Scene>> {
    let (tag, scenes) = load_split(path).with_context(|| format!("loading split {}", path.display())).data()?;
    if tag != want {
        return Err(anyhow!("{} holds {tag:?} scenes, expected {want:?}", path.display())).data();
    }
    Ok(scenes)
}

fn write_losses(path: &Path, history: &[EpochLoss]) -> Res<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display())).data()?;
    for e in history {
        w.serialize(e).data()?;
    }
    if history.is_empty() {
        w.write_record(LOSS_HEADER.split(',')).data()?;
    }
    w.flush().data()?;
    Ok(())
}

fn write_metrics(dir: &Path, result: &EvalResult, run: &str) -> Res<Vec<PathBuf>> {
    let json = dir.join("metrics.json");
    result.write_json(&json).data()?;
    let csv = dir.join("metrics.csv");
    let mut text = format!("{CSV_HEADER}\n");
    for r in result.csv_rows(run) {
        text.push_str(&r);
        text.push('\n');
    }
    std::fs::write(&csv, text).data()?;
    Ok(vec![json, csv])
}

fn print_result(result: &EvalResult) {
    println!("AP_BEV {:.2}  AP_3D {:.2}  (IoU {}, {} gt, {} det)", result.ap_bev, result.ap_3d, result.iou_threshold, result.n_gt, result.n_det);
    for b in &result.per_range {
        println!("  {:>9}  AP_BEV {:6.2}  AP_3D {:6.2}  {} gt", b.label(), b.ap_bev, b.ap_3d, b.n_gt);
    }
    if let (Some(b), Some(t)) = (result.closed_gap_bev, result.closed_gap_3d) {
        println!("closed gap BEV {b:+.1}%  3D {t:+.1}%");
    } else if let Some(b) = result.closed_gap_bev {
        println!("closed gap BEV {b:+.1}%");
    }
}

fn eval_checkpoint(ck: &Checkpoint, scenes: &[Scene], cfg: &Config, edges: &[f64]) -> Res<EvalResult> {
    let params: DetectorParams<f32> = ck.to_params().context("checkpoint is unusable").data()?;
    let frames = detector_frames(&params, scenes, &ck.arch);
    evaluate(&frames, cfg.eval.iou_threshold, edges).data()
}

fn gen_data(a: &GenDataArgs) -> Res<()> {
    let cfg = load_config(&a.common)?;
    let mut argv = Vec::new();
    opt(&mut argv, "--seed", a.seed);
    let mut s = Session::start("gen-data", &a.common, argv, &cfg)?;
    let mut bc = cfg.data.clone();
    if let Some(seed) = a.seed {
        bc.seed = seed;
    }
    s.manifest.seeds = vec![bc.seed];
    for (name, d) in [("source", &bc.source), ("target", &bc.target)] {
        if d.object_density == 0.0 {
            log::warn!("{name} object_density is 0: the split has no labels");
            eprintln!("warning: {name} object_density is 0, the split has no labels");
        }
    }
    let data = bc.generate().context("generating scenes").usage()?;
    let seeds = bc.split_seeds();
    let mut summary = Vec::new();
    for ((file, tag, scenes), seed) in [
        (SOURCE_SPLIT, DomainTag::Source, &data.source),
        (TARGET_SPLIT, DomainTag::Target, &data.target),
        (TARGET_VAL_SPLIT, DomainTag::Target, &data.target_val),
    ]
    .into_iter()
    .zip(seeds)
    {
        let path = s.out(file);
        save_split(&path, tag, scenes).with_context(|| format!("writing {}", path.display())).data()?;
        let objects: usize = scenes.iter().map(|x| x.objects.len()).sum();
        let beams = scenes.first().map_or(0, |x| x.beam_count);
        println!("{file:<15} {:>4} scenes  {objects:>5} objects  {beams} beams  seed {seed}", scenes.len());
        summary.push(serde_json::json!({
            "file": file, "domain": tag, "scenes": scenes.len(), "objects": objects, "beams": beams, "seed": seed,
        }));
        s.wrote(path);
    }
    let path = s.out("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary).data()? + "\n").data()?;
    s.wrote(path);
    s.finish()?;
    Ok(())
}

fn train_outputs(s: &mut Session, ck: &Checkpoint, data: &Path, cfg: &Config, run: &str) -> Res<()> {
    let path = s.out("checkpoint.json");
    ck.save(&path).data()?;
    s.wrote(path);
    let path = s.out("losses.csv");
    write_losses(&path, &ck.history)?;
    s.wrote(path);
    let val = data.join(TARGET_VAL_SPLIT);
    if val.exists() {
        s.input(&val)?;
        let scenes = load_split_checked(&val, DomainTag::Target)?;
        let result = eval_checkpoint(ck, &scenes, cfg, &cfg.eval.range_buckets)?;
        print_result(&result);
        for p in write_metrics(&s.manifest.out_dir, &result, run)? {
            s.wrote(p);
        }
    }
    Ok(())
}

fn stage_config(base: &TrainConfig, seed: Option<u64>, epochs: Option<usize>) -> TrainConfig {
    let mut tc = base.clone();
    if let Some(x) = seed {
        tc.seed = x;
    }
    if let Some(e) = epochs {
        tc.hyper.epochs = e;
    }
    tc
}

fn cmd_pretrain(a: &PretrainArgs) -> Res<()> {
    let cfg = load_config(&a.common)?;
    let mut argv = Vec::new();
    arg(&mut argv, "--data", abs(&a.data).display());
    opt(&mut argv, "--seed", a.seed);
    opt(&mut argv, "--epochs", a.epochs);
    let mut s = Session::start("pretrain", &a.common, argv, &cfg)?;
    let tc = stage_config(&cfg.pretrain, a.seed, a.epochs);
    s.manifest.seeds = vec![tc.seed];
    let split = a.data.join(SOURCE_SPLIT);
    s.input(&split)?;
    let scenes = load_split_checked(&split, DomainTag::Source)?;
    let ck = pretrain(&scenes, &tc).context("pre-training failed").train()?;
    train_outputs(&mut s, &ck, &a.data, &cfg, "pretrain")?;
    s.finish()?;
    Ok(())
}

fn cmd_selftrain(a: &SelftrainArgs) -> Res<()> {
    let cfg = load_config(&a.common)?;
    let mut argv = Vec::new();
    arg(&mut argv, "--data", abs(&a.data).display());
    arg(&mut argv, "--init", abs(&a.init).display());
    opt(&mut argv, "--seed", a.seed);
    opt(&mut argv, "--epochs", a.epochs);
    let mut s = Session::start("selftrain", &a.common, argv, &cfg)?;
    let tc = stage_config(&cfg.selftrain, a.seed, a.epochs);
    s.manifest.seeds = vec![tc.seed];
    s.input(&a.init)?;
    let init = Checkpoint::load(&a.init)
        .with_context(|| format!("loading checkpoint {}", a.init.display()))
        .data()?;
    let split = a.data.join(TARGET_SPLIT);
    s.input(&split)?;
    let scenes = load_split_checked(&split, DomainTag::Target)?;
    let ck = selftrain(&scenes, &init, &tc).context("self-training failed").train()?;
    train_outputs(&mut s, &ck, &a.data, &cfg, "selftrain")?;
    s.finish()?;
    Ok(())
}

/// `"43.5"` or `"43.5,33.1"`: BEV and optional 3D AP.
fn parse_ap_pair(s: &str) -> anyhow::Result<(f64, Option<f64>)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let num = |p: &str| p.parse::<f64>().with_context(|| format!("bad AP value {p:?}"));
    match parts.as_slice() {
        [b] => Ok((num(b)?, None)),
        [b, t] => Ok((num(b)?, Some(num(t)?))),
        _ => bail!("expected BEV[,3D], got {s:?}"),
    }
}

fn cmd_eval(a: &EvalArgs) -> Res<()> {
    let cfg = load_config(&a.common)?;
    let edges = match &a.range_buckets {
        Some(s) => parse_buckets(s).usage()?,
        None => cfg.eval.range_buckets.clone(),
    };
    let gap = match (&a.source_ap, &a.oracle_ap) {
        (Some(src), Some(ora)) => Some((parse_ap_pair(src).usage()?, parse_ap_pair(ora).usage()?)),
        _ => None,
    };
    let mut argv = Vec::new();
    arg(&mut argv, "--checkpoint", abs(&a.checkpoint).display());
    arg(&mut argv, "--data", abs(&a.data).display());
    arg(&mut argv, "--split", &a.split);
    opt(&mut argv, "--range-buckets", a.range_buckets.as_ref());
    opt(&mut argv, "--source-ap", a.source_ap.as_ref());
    opt(&mut argv, "--oracle-ap", a.oracle_ap.as_ref());
    let mut s = Session::start("eval", &a.common, argv, &cfg)?;
    s.input(&a.checkpoint)?;
    let ck = Checkpoint::load(&a.checkpoint)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))
        .data()?;
    let split = a.data.join(&a.split);
    s.input(&split)?;
    let (_, scenes) = load_split(&split).with_context(|| format!("loading split {}", split.display())).data()?;
    let mut result = eval_checkpoint(&ck, &scenes, &cfg, &edges)?;
    if let Some(((sb, st), (ob, ot))) = gap {
        result.closed_gap_bev = Some(closed_gap(result.ap_bev, sb, ob).usage()?);
        if let (Some(st), Some(ot)) = (st, ot) {
            result.closed_gap_3d = Some(closed_gap(result.ap_3d, st, ot).usage()?);
        }
    }
    print_result(&result);
    let run = a.split.trim_end_matches(".bin").to_string();
    for p in write_metrics(&s.manifest.out_dir, &result, &run)? {
        s.wrote(p);
    }
    s.finish()?;
    Ok(())
}

fn select_runs(cfg: &Config, only: &[String]) -> Res<Vec<RunSpec>> {
    if only.is_empty() {
        return Ok(default_runs(cfg.ablation.extra_rows));
    }
    let all = default_runs(true);
    for name in only {
        if !all.iter().any(|r| &r.name == name) {
            let known: Vec<&str> = all.iter().map(|r| r.name.as_str()).collect();
            return Err(anyhow!("unknown run {name:?}; known runs: {}", known.join(", "))).usage();
        }
    }
    Ok(all.into_iter().filter(|r| only.contains(&r.name)).collect())
}

fn has_runs(res: &SweepResult, names: &[&str]) -> bool {
    names.iter().all(|n| !res.of(n).is_empty())
}

/// Trend checks whose rows were all run.
pub fn trend_checks(res: &SweepResult, cfg: &Config) -> Vec<TrendCheck> {
    use uda3d::ablation::{PRE_ONLY, ROW_A, ROW_B, ROW_E, ROW_F, SELF_ONLY};
    let mut out = Vec::new();
    if has_runs(res, &[ROW_A, ROW_B, ROW_E, ROW_F]) {
        out.push(res.component_trend(cfg.ablation.min_gain));
    }
    if has_runs(res, &[ROW_B, PRE_ONLY, SELF_ONLY, ROW_E]) {
        out.push(res.bridge_trend());
    }
    if has_runs(res, &[ROW_A, ROW_B]) {
        out.push(res.range_trend(&cfg.ablation.near_bucket, &cfg.ablation.far_bucket));
    }
    out
}

/// Mean AP_BEV per range bucket, one line per run.
pub fn range_chart(res: &SweepResult) -> Chart {
    let buckets: Vec<String> = res
        .records
        .first()
        .map_or(Vec::new(), |r| r.eval.per_range.iter().map(|b| b.label()).collect());
    let mut names: Vec<&str> = Vec::new();
    for r in &res.records {
        if !names.contains(&r.run.as_str()) {
            names.push(&r.run);
        }
    }
    Chart {
        title: "Mean AP_BEV by range".into(),
        x_label: "range bucket".into(),
        y_label: "AP_BEV".into(),
        x_ticks: Some(buckets.clone()),
        series: names
            .iter()
            .map(|n| Series {
                name: n.to_string(),
                points: buckets.iter().enumerate().map(|(i, b)| (i as f64, res.mean_bucket_bev(n, b))).collect(),
            })
            .collect(),
    }
}

pub fn loss_chart(history: &[EpochLoss], title: &str) -> Chart {
    let terms: [(&str, fn(&EpochLoss) -> f64); 5] = [
        ("det", |e| e.det),
        ("text", |e| e.text),
        ("img", |e| e.img),
        ("st", |e| e.st),
        ("total", |e| e.total),
    ];
    Chart {
        title: title.into(),
        x_label: "epoch".into(),
        y_label: "loss".into(),
        x_ticks: None,
        series: terms
            .iter()
            .map(|(n, f)| Series {
                name: n.to_string(),
                points: history.iter().map(|e| (e.epoch as f64, f(e))).collect(),
            })
            .collect(),
    }
}

fn load_benchmark(data: &Path, s: &mut Session) -> Res<Benchmark> {
    let mut load = |file: &str, tag| -> Res<Vec<Scene>> {
        let p = data.join(file);
        s.input(&p)?;
        load_split_checked(&p, tag)
    };
    Ok(Benchmark {
        source: load(SOURCE_SPLIT, DomainTag::Source)?,
        target: load(TARGET_SPLIT, DomainTag::Target)?,
        target_val: load(TARGET_VAL_SPLIT, DomainTag::Target)?,
    })
}

fn cmd_ablation(a: &AblationArgs) -> Res<()> {
    let cfg = load_config(&a.common)?;
    let runs = select_runs(&cfg, &a.only)?;
    let seeds: Vec<u64> = match (a.seed, a.seeds) {
        (Some(s), _) => vec![s],
        (None, Some(n)) => (0..n).collect(),
        (None, None) => cfg.ablation.seeds.clone(),
    };
    let data_dir = abs(&a.data);
    let mut argv = Vec::new();
    arg(&mut argv, "--data", data_dir.display());
    opt(&mut argv, "--seeds", a.seeds);
    opt(&mut argv, "--seed", a.seed);
    for o in &a.only {
        arg(&mut argv, "--only", o);
    }
    opt(&mut argv, "--epochs", a.epochs);
    let mut s = Session::start("ablation", &a.common, argv, &cfg)?;
    s.manifest.seeds = seeds.clone();
    let data = load_benchmark(&data_dir, &mut s)?;

    let mut sweep = cfg.sweep(seeds);
    if let Some(e) = a.epochs {
        sweep.pretrain.hyper.epochs = e;
        sweep.selftrain.hyper.epochs = e;
    }
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let res = match run_sweep(&data, &sweep, &runs, workers) {
        Ok(r) => r,
        Err(e) => {
            let marker = s.out("PARTIAL");
            let _ = std::fs::write(&marker, format!("ablation aborted: {e}\n"));
            return Err(Failure { code: EXIT_TRAIN, error: anyhow!(e).context("ablation aborted") });
        }
    };

    let checks = trend_checks(&res, &cfg);
    let mut table = res.table();
    for c in &checks {
        table.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
    }
    print!("{table}");
    let out = s.manifest.out_dir.clone();
    let mut top = Vec::new();
    let path = out.join("table.txt");
    std::fs::write(&path, &table).data()?;
    top.push(path);
    let path = out.join("trends.json");
    std::fs::write(&path, serde_json::to_string_pretty(&checks).data()? + "\n").data()?;
    top.push(path);
    let path = out.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&res).data()? + "\n").data()?;
    top.push(path);
    let path = out.join("results.csv");
    let mut csv = format!("{CSV_HEADER}\n");
    for r in &res.records {
        for row in r.eval.csv_rows(&format!("{}/seed{}", r.run, r.seed)) {
            csv.push_str(&row);
            csv.push('\n');
        }
    }
    std::fs::write(&path, csv).data()?;
    top.push(path);
    let path = out.join("ap_by_range.svg");
    std::fs::write(&path, range_chart(&res).to_svg()).data()?;
    top.push(path);

    // one manifest per run and seed, replayable on its own
    for r in &res.records {
        let dir = out.join("runs").join(&r.run).join(format!("seed-{}", r.seed));
        std::fs::create_dir_all(&dir).data()?;
        let mut files = write_metrics(&dir, &r.eval, &r.run)?;
        let losses = dir.join("losses.csv");
        write_losses(&losses, &r.history)?;
        files.push(losses);
        let only = runs
            .iter()
            .find(|x| x.name == r.run || source_only_name(x.pretrain_ia, x.pretrain_ta) == r.run)
            .map_or(r.run.clone(), |x| x.name.clone());
        let mut m = s.manifest.clone();
        m.argv = vec!["ablation".into()];
        arg(&mut m.argv, "--data", data_dir.display());
        arg(&mut m.argv, "--seed", r.seed);
        arg(&mut m.argv, "--only", only);
        opt(&mut m.argv, "--epochs", a.epochs);
        opt(&mut m.argv, "--config", m.config_path.as_ref().map(|p| p.display().to_string()));
        arg(&mut m.argv, "--out", out.display());
        m.seeds = vec![r.seed];
        m.finished = now();
        m.outputs.clear();
        m.hash_outputs(&files).data()?;
        m.write(&dir.join(MANIFEST_FILE)).data()?;
        top.extend(files);
    }
    for p in top {
        s.wrote(p);
    }
    s.finish()?;
    Ok(())
}

fn cmd_plot(a: &PlotArgs) -> Res<()> {
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let chart = match ext {
        "csv" => {
            let mut r = csv::Reader::from_path(&a.input)
                .with_context(|| format!("reading {}", a.input.display()))
                .data()?;
            let history: Vec<EpochLoss> = r
                .deserialize()
                .collect::<Result<_, _>>()
                .with_context(|| format!("{} is not a loss CSV", a.input.display()))
                .data()?;
            let stage = history.first().map_or("training", |e| e.stage.as_str()).to_string();
            loss_chart(&history, &format!("{stage} losses"))
        }
        "json" => {
            let text = std::fs::read_to_string(&a.input)
                .with_context(|| format!("reading {}", a.input.display()))
                .data()?;
            let res: SweepResult = serde_json::from_str(&text)
                .with_context(|| format!("{} is not an ablation summary", a.input.display()))
                .data()?;
            range_chart(&res)
        }
        _ => return Err(anyhow!("--input must be a .csv loss log or a .json ablation summary")).usage(),
    };
    std::fs::write(&a.out, chart.to_svg())
        .with_context(|| format!("writing {}", a.out.display()))
        .data()?;
    Ok(())
}

/// `argv` with `--config` and `--out` replaced.
fn rewrite_argv(argv: &[String], config: &Path, out: &Path) -> Vec<String> {
    let mut v = Vec::new();
    let mut it = argv.iter();
    while let Some(x) = it.next() {
        if x == "--config" || x == "--out" {
            it.next();
        } else {
            v.push(x.clone());
        }
    }
    arg(&mut v, "--config", config.display());
    arg(&mut v, "--out", out.display());
    v
}

fn cmd_replay(a: &ReplayArgs) -> Res<()> {
    let m = RunManifest::load(&a.manifest).data()?;
    for (path, want) in &m.inputs {
        let got = blob_hash(Path::new(path)).data()?;
        if &got != want {
            return Err(anyhow!("input {path} changed since the run")).data();
        }
    }
    let out = match &a.out {
        Some(p) => abs(p),
        None => PathBuf::from(format!("{}-replay", m.out_dir.display())),
    };
    std::fs::create_dir_all(&out).data()?;
    let config = out.join("replay-config.toml");
    std::fs::write(&config, &m.config).data()?;
    let argv = rewrite_argv(&m.argv, &config, &out);
    let cli = Cli::try_parse_from(std::iter::once("uda3d".to_string()).chain(argv))
        .context("manifest holds an invalid command line")
        .usage()?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(anyhow!("manifest records a replay")).usage();
    }
    run(cli)?;
    let mut differ = Vec::new();
    for (rel, want) in &m.outputs {
        let got = file_sha256(&out.join(rel)).ok();
        let same = got.as_deref() == Some(want.as_str());
        println!("{} {rel}", if same { "identical" } else { "DIFFERS  " });
        if !same {
            differ.push(rel.clone());
        }
    }
    if !differ.is_empty() {
        return Err(Failure {
            code: EXIT_TRAIN,
            error: anyhow!("replay differs in {} file(s): {}", differ.len(), differ.join(", ")),
        });
    }
    println!("replay of {} reproduced {} file(s)", m.command, m.outputs.len());
    Ok(())
}
