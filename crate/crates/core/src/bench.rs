//! Stage-level wall-clock benchmark for one operator.

use std::time::{Duration, Instant};

use serde::Serialize;
use serde_json::Value;

use crate::coord::{LctConfig, LocationTable, StrideSpec};
use crate::engine::{inverse_conv, sparse_conv, subm_conv, ComputePath};
use crate::error::{Error, Result};
use crate::oracle::{random_features, random_sparse_tensor, random_weights};
use crate::rules::{build_downsample_oft, build_inverse_map, build_subm_oft, count_unique_outputs};
use crate::tensor::GridShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchOperator {
    Submanifold { kernel: usize },
    Downsample { stride: u32 },
    Inverse { stride: u32 },
}

impl BenchOperator {
    fn name(self) -> &'static str {
        match self {
            BenchOperator::Submanifold { .. } => "subm",
            BenchOperator::Downsample { .. } => "down",
            BenchOperator::Inverse { .. } => "inv",
        }
    }

    fn size(self) -> usize {
        match self {
            BenchOperator::Submanifold { kernel } => kernel,
            BenchOperator::Downsample { stride } | BenchOperator::Inverse { stride } => {
                stride as usize
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub operator: BenchOperator,
    pub path: ComputePath,
    pub shape: GridShape,
    pub density: f64,
    pub channels: usize,
    pub out_channels: usize,
    pub repeats: usize,
    pub seed: u64,
    pub lct: LctConfig,
}

/// Seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageStats {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl StageStats {
    fn from_samples(samples: &mut [Duration]) -> Self {
        samples.sort_unstable();
        let secs = |d: Duration| d.as_secs_f64();
        let n = samples.len();
        let median = if n % 2 == 1 {
            secs(samples[n / 2])
        } else {
            (secs(samples[n / 2 - 1]) + secs(samples[n / 2])) / 2.0
        };
        Self {
            median,
            min: secs(samples[0]),
            max: secs(samples[n - 1]),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTimes {
    pub table_build: StageStats,
    pub rule_gen: StageStats,
    pub compute: StageStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub operator: String,
    pub path: String,
    pub n: usize,
    pub channels: usize,
    pub out_channels: usize,
    /// Kernel size for submanifold, stride otherwise.
    pub kernel: usize,
    pub repeats: usize,
    pub stages: StageTimes,
    /// Input sites per second of median compute time.
    pub sites_per_second: f64,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Checks a parsed report against the expected field set and ranges.
    pub fn validate_json(v: &Value) -> Result<()> {
        let bad = |m: String| Err(Error::InvariantViolation(m));
        let obj = match v.as_object() {
            Some(o) => o,
            None => return bad("report is not an object".into()),
        };
        for key in ["operator", "path"] {
            if !obj.get(key).is_some_and(Value::is_string) {
                return bad(format!("missing string field `{key}`"));
            }
        }
        for key in ["n", "channels", "out_channels", "kernel", "repeats"] {
            if !obj.get(key).is_some_and(Value::is_u64) {
                return bad(format!("missing integer field `{key}`"));
            }
        }
        if obj["repeats"].as_u64() < Some(1) {
            return bad("repeats must be >= 1".into());
        }
        if !obj
            .get("sites_per_second")
            .and_then(Value::as_f64)
            .is_some_and(|v| v >= 0.0)
        {
            return bad("sites_per_second must be a non-negative number".into());
        }
        let stages = match obj.get("stages").and_then(Value::as_object) {
            Some(s) => s,
            None => return bad("missing `stages`".into()),
        };
        for stage in ["table_build", "rule_gen", "compute"] {
            for stat in ["median", "min", "max"] {
                let ok = stages
                    .get(stage)
                    .and_then(|s| s.get(stat))
                    .and_then(Value::as_f64)
                    .is_some_and(|t| t >= 0.0);
                if !ok {
                    return bad(format!("stage `{stage}` lacks a non-negative `{stat}`"));
                }
            }
        }
        Ok(())
    }
}

fn timed<T>(samples: &mut Vec<Duration>, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    samples.push(start.elapsed());
    out
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats == 0 {
        return Err(Error::Parse("repeats must be >= 1".into()));
    }
    let t = random_sparse_tensor(cfg.seed, cfg.shape, cfg.density, cfg.channels)?;
    let (mut table, mut rules, mut compute) = (Vec::new(), Vec::new(), Vec::new());

    match cfg.operator {
        BenchOperator::Submanifold { kernel } => {
            let w = random_weights(cfg.seed, cfg.out_channels, cfg.channels, kernel.pow(3))?;
            for _ in 0..cfg.repeats {
                let lct = timed(&mut table, || LocationTable::build(t.sites(), &cfg.lct))?;
                let oft = timed(&mut rules, || build_subm_oft(t.sites(), &lct, kernel))?;
                timed(&mut compute, || subm_conv(&t, &oft, &w, cfg.path))?;
            }
        }
        BenchOperator::Downsample { stride } => {
            let s = StrideSpec::new(stride)?;
            let w = random_weights(cfg.seed, cfg.out_channels, cfg.channels, s.cell_volume())?;
            for _ in 0..cfg.repeats {
                timed(&mut table, || count_unique_outputs(t.sites(), s, &cfg.lct));
                let (dmap, oft) = timed(&mut rules, || build_downsample_oft(t.sites(), s, &cfg.lct))?;
                timed(&mut compute, || sparse_conv(&t, &dmap, &oft, &w, cfg.path))?;
            }
        }
        BenchOperator::Inverse { stride } => {
            let s = StrideSpec::new(stride)?;
            let (dmap, _) = build_downsample_oft(t.sites(), s, &cfg.lct)?;
            let coarse = random_features(cfg.seed, dmap.out_sites().clone(), cfg.channels)?;
            let w = random_weights(cfg.seed, cfg.out_channels, cfg.channels, s.cell_volume())?;
            for _ in 0..cfg.repeats {
                timed(&mut table, || LocationTable::build(coarse.sites(), &cfg.lct))?;
                let imap = timed(&mut rules, || {
                    build_inverse_map(t.sites(), coarse.sites(), s, &cfg.lct)
                })?;
                timed(&mut compute, || inverse_conv(&coarse, &imap, t.sites(), &w, cfg.path))?;
            }
        }
    }

    let compute = StageStats::from_samples(&mut compute);
    Ok(BenchReport {
        operator: cfg.operator.name().to_string(),
        path: cfg.path.to_string(),
        n: t.len(),
        channels: cfg.channels,
        out_channels: cfg.out_channels,
        kernel: cfg.operator.size(),
        repeats: cfg.repeats,
        stages: StageTimes {
            table_build: StageStats::from_samples(&mut table),
            rule_gen: StageStats::from_samples(&mut rules),
            compute,
        },
        sites_per_second: if compute.median > 0.0 {
            t.len() as f64 / compute.median
        } else {
            0.0
        },
    })
}
