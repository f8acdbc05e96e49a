//! Parameter sweeps: pre-train or solve for `W` at each grid point, evaluate
//! on fresh tasks, and persist one CSV row per (value, seed).

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{self, DualOptions};
use crate::error::{invalid, Error, Result};
use crate::eval::{self, EvalOptions};
use crate::model::Preconditioner;
use crate::pretrain::{self, Init, LossKind, TrainConfig};
use crate::rng::{tags, CovarianceSpec, RngStream};
use crate::task::{gen_pretrain_batch, TaskParams};

pub const CSV_HEADER: [&str; 10] = [
    "axis",
    "value",
    "seed",
    "train_acc_mean",
    "train_acc_se",
    "test_acc_mean",
    "test_acc_se",
    "full_mem_rate",
    "n_tasks",
    "wall_ms",
];

/// Flat `key = value` document; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Parse(format!("line {}: empty key", i + 1)));
            }
            if entries
                .insert(k.to_string(), v.trim().to_string())
                .is_some()
            {
                return Err(Error::Parse(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    /// Applies a `key=value` override.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("override `{pair}` is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Parse(format!("{key} = `{v}`: {e}")))
            })
            .transpose()
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>()
                            .map_err(|e| Error::Parse(format!("{key}: `{s}`: {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Rejects keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for k in self.keys() {
            if !known.contains(&k) {
                return Err(Error::Parse(format!("unknown config key `{k}`")));
            }
        }
        Ok(())
    }
}

/// Task parameters whose defaults depend on the dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub d: usize,
    /// `None` means `5√d`.
    pub r: Option<f64>,
    /// `None` means `d^beta`.
    pub r_tilde: Option<f64>,
    pub beta: f64,
    pub n: usize,
    pub m: usize,
    /// `None` means `B = d`.
    pub b: Option<usize>,
    pub p: f64,
    /// Covariance in [`CovarianceSpec::parse`] syntax.
    pub cov: String,
}

impl Default for BaseParams {
    fn default() -> Self {
        Self {
            d: 100,
            r: None,
            r_tilde: None,
            beta: 0.35,
            n: 40,
            m: 20,
            b: None,
            p: 0.1,
            cov: "identity".into(),
        }
    }
}

pub const PARAM_KEYS: [&str; 9] = ["d", "r", "r_tilde", "beta", "n", "m", "b", "p", "cov"];
pub const TRAIN_KEYS: [&str; 4] = ["loss", "step_size", "steps", "record_every"];
pub const SWEEP_KEYS: [&str; 9] = [
    "axis",
    "values",
    "seeds",
    "n_eval_tasks",
    "queries_per_task",
    "trainer",
    "dual_tol",
    "dual_max_sweeps",
    "timing",
];

impl BaseParams {
    pub fn from_config(c: &Config) -> Result<Self> {
        let d = Self::default();
        Ok(Self {
            d: c.parsed("d")?.unwrap_or(d.d),
            r: c.parsed("r")?,
            r_tilde: c.parsed("r_tilde")?,
            beta: c.parsed("beta")?.unwrap_or(d.beta),
            n: c.parsed("n")?.unwrap_or(d.n),
            m: c.parsed("m")?.unwrap_or(d.m),
            b: c.parsed("b")?,
            p: c.parsed("p")?.unwrap_or(d.p),
            cov: c.get("cov").unwrap_or(&d.cov).to_string(),
        })
    }

    pub fn resolve(&self) -> Result<TaskParams> {
        let df = self.d as f64;
        let p = TaskParams {
            d: self.d,
            r: self.r.unwrap_or(5.0 * df.sqrt()),
            r_tilde: self.r_tilde.unwrap_or(df.powf(self.beta)),
            n: self.n,
            m: self.m,
            b: self.b.unwrap_or(self.d),
            p: self.p,
            cov: CovarianceSpec::parse(&self.cov, self.d)?,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Reads loss, step size, and step count; the rest keeps its defaults.
pub fn train_config_from(c: &Config) -> Result<TrainConfig<f64>> {
    let d = TrainConfig::<f64>::default();
    let cfg = TrainConfig {
        loss: c.parsed::<LossKind>("loss")?.unwrap_or(d.loss),
        step_size: c.parsed("step_size")?.unwrap_or(d.step_size),
        steps: c.parsed("steps")?.unwrap_or(d.steps),
        init: Init::Zero,
        record_every: c.parsed("record_every")?.unwrap_or(d.record_every),
        snapshot_every: None,
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "rtilde")]
    RTilde,
    #[serde(rename = "batch_B")]
    BatchB,
    #[serde(rename = "dimension")]
    Dimension,
    #[serde(rename = "context_M")]
    ContextM,
    #[serde(rename = "noise_p")]
    NoiseP,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::RTilde => "rtilde",
            Self::BatchB => "batch_B",
            Self::Dimension => "dimension",
            Self::ContextM => "context_M",
            Self::NoiseP => "noise_p",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, Self::BatchB | Self::Dimension | Self::ContextM)
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &BaseParams, value: f64) -> Result<BaseParams> {
        if self.is_integer() && !(value >= 1.0 && value.fract() == 0.0) {
            return Err(invalid(
                self.name(),
                format!("expected a positive integer, got {value}"),
            ));
        }
        let mut b = base.clone();
        match self {
            Self::RTilde => b.r_tilde = Some(value),
            Self::BatchB => b.b = Some(value as usize),
            Self::Dimension => b.d = value as usize,
            Self::ContextM => b.m = value as usize,
            Self::NoiseP => b.p = value,
        }
        Ok(b)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [
            Self::RTilde,
            Self::BatchB,
            Self::Dimension,
            Self::ContextM,
            Self::NoiseP,
        ]
        .into_iter()
        .find(|a| a.name() == s)
        .ok_or_else(|| Error::Parse(format!("unknown sweep axis `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainer {
    Gd,
    MaxMargin,
}

impl FromStr for Trainer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Self::Gd),
            "max_margin" => Ok(Self::MaxMargin),
            _ => Err(Error::Parse(format!("unknown trainer `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub base: BaseParams,
    pub train: TrainConfig<f64>,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub n_eval_tasks: usize,
    pub queries_per_task: usize,
    pub seeds: Vec<u64>,
    pub trainer: Trainer,
    pub dual: DualOptions,
    /// When false, `wall_ms` is written as 0 so output bytes depend only on the config.
    pub timing: bool,
}

impl SweepConfig {
    pub fn from_config(c: &Config) -> Result<Self> {
        let known: Vec<&str> = PARAM_KEYS
            .iter()
            .chain(&TRAIN_KEYS)
            .chain(&SWEEP_KEYS)
            .copied()
            .collect();
        c.check_keys(&known)?;
        let dual_default = DualOptions::default();
        let cfg = Self {
            base: BaseParams::from_config(c)?,
            train: train_config_from(c)?,
            axis: c.parsed("axis")?.unwrap_or(SweepAxis::RTilde),
            values: c.list("values")?.unwrap_or_default(),
            n_eval_tasks: c.parsed("n_eval_tasks")?.unwrap_or(2500),
            queries_per_task: c.parsed("queries_per_task")?.unwrap_or(1),
            seeds: c.list("seeds")?.unwrap_or_else(|| vec![0]),
            trainer: c.parsed("trainer")?.unwrap_or(Trainer::Gd),
            dual: DualOptions {
                tol: c.parsed("dual_tol")?.unwrap_or(dual_default.tol),
                max_sweeps: c
                    .parsed("dual_max_sweeps")?
                    .unwrap_or(dual_default.max_sweeps),
            },
            timing: c.parsed("timing")?.unwrap_or(true),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(invalid("values", "at least one sweep value is required"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if self.n_eval_tasks == 0 {
            return Err(invalid("n_eval_tasks", "must be >= 1"));
        }
        self.train.validate()?;
        for &v in &self.values {
            self.axis.apply(&self.base, v)?.resolve()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub train_acc_mean: f64,
    pub train_acc_se: f64,
    pub test_acc_mean: f64,
    pub test_acc_se: f64,
    pub full_mem_rate: f64,
    pub n_tasks: usize,
    pub wall_ms: u64,
}

impl SweepRecord {
    /// NaN metrics mark a point whose fit failed.
    pub fn is_flagged(&self) -> bool {
        self.test_acc_mean.is_nan()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub records: Vec<SweepRecord>,
    /// `(record index, reason)` for points whose fit failed.
    pub flags: Vec<(usize, String)>,
}

fn fit(
    config: &SweepConfig,
    params: &TaskParams,
    stream: RngStream,
) -> Result<Preconditioner<f64>> {
    let batch = gen_pretrain_batch::<f64>(params, stream.child(tags::PRETRAIN))?;
    match config.trainer {
        Trainer::Gd => Ok(pretrain::train(&config.train, &batch)?.final_w),
        Trainer::MaxMargin => {
            let sol = dual::max_margin(&batch, &config.dual)?;
            if !sol.converged {
                return Err(Error::NotConverged {
                    sweeps: config.dual.max_sweeps,
                    kkt_violation: sol.kkt_violation,
                });
            }
            Ok(sol.w)
        }
    }
}

fn run_point(config: &SweepConfig, value: f64, seed: u64) -> (SweepRecord, Option<String>) {
    let start = Instant::now();
    let stream = RngStream::root(seed);
    let result = config
        .axis
        .apply(&config.base, value)
        .and_then(|b| b.resolve())
        .and_then(|params| {
            let w = fit(config, &params, stream)?;
            let opts = EvalOptions {
                n_tasks: config.n_eval_tasks,
                queries_per_task: config.queries_per_task,
            };
            eval::evaluate(&w, &params, &opts, stream.child(tags::EVAL))
        });
    let wall_ms = if config.timing {
        start.elapsed().as_millis() as u64
    } else {
        0
    };
    let mut rec = SweepRecord {
        axis: config.axis.name().into(),
        value,
        seed,
        train_acc_mean: f64::NAN,
        train_acc_se: f64::NAN,
        test_acc_mean: f64::NAN,
        test_acc_se: f64::NAN,
        full_mem_rate: f64::NAN,
        n_tasks: config.n_eval_tasks,
        wall_ms,
    };
    match result {
        Ok(r) => {
            rec.train_acc_mean = r.train_acc_mean;
            rec.train_acc_se = r.train_acc_se;
            rec.test_acc_mean = r.test_acc_mean;
            rec.test_acc_se = r.test_acc_se;
            rec.full_mem_rate = r.full_memorization_rate;
            (rec, None)
        }
        Err(e) => (rec, Some(e.to_string())),
    }
}

/// Runs every (value, seed) point. Seed `s` drives both the pre-training
/// batch and the evaluation tasks, so points sharing a seed share randomness.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutcome> {
    config.validate()?;
    let points: Vec<(f64, u64)> = config
        .values
        .iter()
        .flat_map(|&v| config.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<(SweepRecord, Option<String>)> = points
        .par_iter()
        .map(|&(v, s)| run_point(config, v, s))
        .collect();
    let mut records = Vec::with_capacity(results.len());
    let mut flags = Vec::new();
    for (i, (rec, flag)) in results.into_iter().enumerate() {
        if let Some(f) = flag {
            flags.push((i, f));
        }
        records.push(rec);
    }
    Ok(SweepOutcome { records, flags })
}

fn record_fields(r: &SweepRecord) -> [String; 10] {
    [
        r.axis.clone(),
        r.value.to_string(),
        r.seed.to_string(),
        r.train_acc_mean.to_string(),
        r.train_acc_se.to_string(),
        r.test_acc_mean.to_string(),
        r.test_acc_se.to_string(),
        r.full_mem_rate.to_string(),
        r.n_tasks.to_string(),
        r.wall_ms.to_string(),
    ]
}

pub fn write_csv_to<W: std::io::Write>(records: &[SweepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let map = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(CSV_HEADER).map_err(map)?;
    for r in records {
        w.write_record(record_fields(r)).map_err(map)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[SweepRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv_to(records, &mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_csv(records: &[SweepRecord], path: &Path) -> Result<()> {
    write_csv_to(records, std::fs::File::create(path)?)
}

pub fn read_csv_from<R: std::io::Read>(input: R) -> Result<Vec<SweepRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut rows = rdr.records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Parse("line 1: missing header".into()))?
        .map_err(|e| Error::Parse(format!("line 1: {e}")))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!(
            "line 1: expected header `{}`",
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (i, row) in rows.enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse(format!("line {line}: {e}")))?;
        if row.len() != CSV_HEADER.len() {
            return Err(Error::Parse(format!(
                "line {line}: expected {} fields, got {}",
                CSV_HEADER.len(),
                row.len()
            )));
        }
        fn field<T: FromStr>(row: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
            row[k].parse().map_err(|_| {
                Error::Parse(format!("line {line}: bad {} `{}`", CSV_HEADER[k], &row[k]))
            })
        }
        out.push(SweepRecord {
            axis: row[0].to_string(),
            value: field(&row, 1, line)?,
            seed: field(&row, 2, line)?,
            train_acc_mean: field(&row, 3, line)?,
            train_acc_se: field(&row, 4, line)?,
            test_acc_mean: field(&row, 5, line)?,
            test_acc_se: field(&row, 6, line)?,
            full_mem_rate: field(&row, 7, line)?,
            n_tasks: field(&row, 8, line)?,
            wall_ms: field(&row, 9, line)?,
        });
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>> {
    read_csv_from(std::fs::File::open(path)?)
}
