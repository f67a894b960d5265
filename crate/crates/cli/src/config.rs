//! Experiment configuration: one TOML file with a table per stage. Keys
//! left out of the file keep their defaults; unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use uda3d::ablation::{BenchmarkConfig, SweepConfig};
use uda3d::evalkit::{DEFAULT_BUCKETS, DEFAULT_IOU};
use uda3d::selftrain::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub iou_threshold: f64,
    pub range_buckets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSettings {
    pub seeds: Vec<u64>,
    /// Also run rows (c) and (d).
    pub extra_rows: bool,
    /// Required AP_BEV gain of the full method over the baseline.
    pub min_gain: f64,
    pub near_bucket: String,
    pub far_bucket: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: BenchmarkConfig,
    pub pretrain: TrainConfig,
    pub selftrain: TrainConfig,
    pub eval: EvalSettings,
    pub ablation: AblationSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: BenchmarkConfig::default(),
            pretrain: TrainConfig::pretrain(0),
            selftrain: TrainConfig::selftrain(0),
            eval: EvalSettings {
                iou_threshold: DEFAULT_IOU,
                range_buckets: DEFAULT_BUCKETS.to_vec(),
            },
            ablation: AblationSettings {
                seeds: (0..5).collect(),
                extra_rows: false,
                min_gain: 2.0,
                near_bucket: "0-30m".into(),
                far_bucket: "30-60m".into(),
            },
        }
    }
}

/// Overlays `user` onto `base`, table by table.
fn merge(base: &mut toml::Value, user: toml::Value) {
    match (base, user) {
        (toml::Value::Table(b), toml::Value::Table(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Value = toml::from_str(text).context("config is not valid TOML")?;
        let mut merged = toml::Value::try_from(Config::default()).context("serializing defaults")?;
        merge(&mut merged, user);
        let cfg: Config = merged.try_into().context("config does not match the schema")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String)> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Ok((Self::from_toml(&text).with_context(|| format!("in {}", path.display()))?, text))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.data.source.validate().context("data.source")?;
        self.data.target.validate().context("data.target")?;
        self.pretrain.validate().context("pretrain")?;
        self.selftrain.validate().context("selftrain")?;
        let e = &self.eval.range_buckets;
        if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
            bail!("eval.range_buckets must be increasing with at least two edges, got {e:?}");
        }
        if !(self.eval.iou_threshold > 0.0 && self.eval.iou_threshold <= 1.0) {
            bail!("eval.iou_threshold must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn sweep(&self, seeds: Vec<u64>) -> SweepConfig {
        SweepConfig {
            pretrain: self.pretrain.clone(),
            selftrain: self.selftrain.clone(),
            seeds,
            range_edges: self.eval.range_buckets.clone(),
            iou_threshold: self.eval.iou_threshold,
            extra_rows: self.ablation.extra_rows,
        }
    }
}

/// `"0,30,60,150"` to bucket edges.
pub fn parse_buckets(s: &str) -> Result<Vec<f64>> {
    let edges = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("bad bucket edge {p:?}")))
        .collect::<Result<Vec<_>>>()?;
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        bail!("range buckets must be increasing with at least two edges: {s}");
    }
    Ok(edges)
}
