//! Experiment harness: core computation on airport exchanges across a grid
//! of (bidders, items, coalition cap) cells.
//!
//! Output directory layout:
//!
//! * `summary.csv` / `summary.json`: one row per cell;
//! * `detail.csv`: one row per (cell, seed), sorted;
//! * `detail.partial.csv`: rows appended as they finish, removed on success;
//! * `instances/` and `outcomes/`: the generated instances and every outcome
//!   the solver returned.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::membership_check;
use crate::core_solver::{solve_core, CoreOptions, CoreStatus};
use crate::gen::{gen_airport, AirportGenConfig};
use crate::milp::Engine;
use crate::model::{ExchangeInstance, Outcome};
use crate::{Error, Result};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "CEX_WORKERS";

/// Coalition sizes reported in the cross-membership columns.
pub const MEMBERSHIP_CAPS: [Option<usize>; 3] = [Some(3), Some(5), None];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchConfig {
    pub bidders: Vec<usize>,
    pub items: Vec<usize>,
    /// `None` is the unrestricted core.
    pub caps: Vec<Option<usize>>,
    pub seeds: u64,
    pub first_seed: u64,
    pub time_limit_ms: u64,
    pub out: PathBuf,
    pub workers: Option<usize>,
    pub airports: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            bidders: vec![3],
            items: vec![6],
            caps: vec![Some(3), Some(5), None],
            seeds: 50,
            first_seed: 0,
            time_limit_ms: 300_000,
            out: PathBuf::from("bench-out"),
            workers: None,
            airports: 4,
        }
    }
}

fn parse_cap(s: &str) -> std::result::Result<Option<usize>, String> {
    match s {
        "inf" | "unbounded" | "core" => Ok(None),
        _ => s.parse().map(Some).map_err(|_| format!("bad coalition cap \"{s}\"")),
    }
}

pub fn cap_label(cap: Option<usize>) -> String {
    cap.map_or("inf".to_string(), |c| c.to_string())
}

impl BenchConfig {
    /// Parses `key = value` lines; `#` starts a comment and lists are
    /// comma-separated. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = BenchConfig::default();
        let mut errs = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errs.push(format!("line {}: expected key = value", no + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let list = || value.split(',').map(str::trim).filter(|s| !s.is_empty());
            let res: std::result::Result<(), String> = (|| {
                let num = |s: &str| s.parse::<u64>().map_err(|_| format!("\"{s}\" is not a count"));
                match key {
                    "bidders" => c.bidders = list().map(|s| num(s).map(|n| n as usize)).collect::<std::result::Result<_, _>>()?,
                    "items" => c.items = list().map(|s| num(s).map(|n| n as usize)).collect::<std::result::Result<_, _>>()?,
                    "caps" => c.caps = list().map(parse_cap).collect::<std::result::Result<_, _>>()?,
                    "seeds" => c.seeds = num(value)?,
                    "first_seed" => c.first_seed = num(value)?,
                    "time_limit_ms" => c.time_limit_ms = num(value)?,
                    "out" => c.out = PathBuf::from(value),
                    "workers" => c.workers = Some(num(value)? as usize),
                    "airports" => c.airports = num(value)? as usize,
                    _ => return Err(format!("unknown key \"{key}\"")),
                }
                Ok(())
            })();
            if let Err(e) = res {
                errs.push(format!("line {}: {e}", no + 1));
            }
        }
        errs.extend(c.validate());
        if errs.is_empty() {
            Ok(c)
        } else {
            Err(Error::InvalidInstance(errs))
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.bidders.is_empty() || self.bidders.contains(&0) {
            errs.push("bidders must be a non-empty list of counts ≥ 1".into());
        }
        if self.items.is_empty() || self.items.contains(&0) {
            errs.push("items must be a non-empty list of counts ≥ 1".into());
        }
        if self.caps.is_empty() || self.caps.contains(&Some(0)) {
            errs.push("caps must be a non-empty list of sizes ≥ 1 or inf".into());
        }
        if self.seeds == 0 {
            errs.push("seeds must be ≥ 1".into());
        }
        if self.time_limit_ms < 1000 {
            errs.push("time_limit_ms must be ≥ 1000".into());
        }
        if self.workers == Some(0) {
            errs.push("workers must be ≥ 1".into());
        }
        for &i in &self.items {
            let g = AirportGenConfig {
                num_airports: self.airports,
                ..AirportGenConfig::new(1, i, 0)
            };
            errs.extend(g.validate());
        }
        errs
    }

    /// Config value, else `CEX_WORKERS`, else the available parallelism.
    pub fn worker_count(&self) -> usize {
        self.workers
            .or_else(|| std::env::var(WORKERS_ENV).ok()?.parse().ok())
            .filter(|&w| w > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

/// One solve of one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchRecord {
    pub bidders: usize,
    pub items: usize,
    pub seed: u64,
    pub cap: Option<usize>,
    /// `coreOutcome`, `coreEmpty`, `timeout` or `error`.
    pub status: String,
    pub welfare: Option<f64>,
    pub iterations: usize,
    pub cuts: usize,
    pub runtime_s: f64,
    /// Membership of a solved outcome in the 3-core, 5-core and core;
    /// `None` when unsolved or the check timed out.
    pub in_cores: [Option<bool>; 3],
    pub outcome_file: Option<String>,
    pub error: Option<String>,
}

impl BenchRecord {
    /// Finished within the time limit, with an outcome or an empty-core
    /// verdict.
    pub fn solved(&self) -> bool {
        self.status == "coreOutcome" || self.status == "coreEmpty"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BenchRow {
    pub bidders: usize,
    pub items: usize,
    pub cap: Option<usize>,
    pub seeds: u64,
    /// Instances finished within the time limit (including empty cores).
    pub solved: u64,
    pub core_empty: u64,
    pub timeouts: u64,
    /// Mean runtime over solved instances.
    pub avg_runtime_s: Option<f64>,
    pub in_3_core: u64,
    pub in_5_core: u64,
    pub in_core: u64,
    pub statuses: Vec<String>,
}

fn status_name(s: CoreStatus) -> &'static str {
    match s {
        CoreStatus::CoreOutcome => "coreOutcome",
        CoreStatus::CoreEmpty => "coreEmpty",
        CoreStatus::Timeout => "timeout",
    }
}

fn instance_name(bidders: usize, items: usize, seed: u64) -> String {
    format!("b{bidders}-i{items}-s{seed}")
}

/// Whether `outcome` (solved at `cap`) lies in the `k`-core.
fn in_core_at(
    inst: &ExchangeInstance,
    outcome: &Outcome,
    cap: Option<usize>,
    k: Option<usize>,
    limit: Duration,
) -> Result<Option<bool>> {
    let implied = match (cap, k) {
        (None, _) => true,
        (Some(c), Some(k)) => c >= k,
        (Some(_), None) => false,
    };
    if implied {
        return Ok(Some(true));
    }
    match membership_check(inst, outcome, k, &Engine::builtin().with_time_limit(Some(limit))) {
        Ok(r) => Ok(Some(!r.blocked)),
        Err(Error::Timeout) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_instance(config: &BenchConfig, bidders: usize, items: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    let gen = AirportGenConfig {
        num_airports: config.airports,
        ..AirportGenConfig::new(bidders, items, seed)
    };
    let inst = gen_airport(&gen)?;
    let name = instance_name(bidders, items, seed);
    fs::write(config.out.join("instances").join(format!("{name}.json")), inst.to_json())?;
    let limit = Duration::from_millis(config.time_limit_ms);
    let mut records = Vec::new();
    for &cap in &config.caps {
        let opts = CoreOptions {
            max_coalition_size: cap,
            time_limit: Some(limit),
            ..CoreOptions::default()
        };
        let mut rec = BenchRecord {
            bidders,
            items,
            seed,
            cap,
            status: "error".into(),
            welfare: None,
            iterations: 0,
            cuts: 0,
            runtime_s: 0.0,
            in_cores: [None; 3],
            outcome_file: None,
            error: None,
        };
        match solve_core(&inst, &opts, &Engine::builtin()) {
            Ok(r) => {
                rec.status = status_name(r.status).into();
                rec.iterations = r.iterations;
                rec.cuts = r.cut_pool.len();
                rec.runtime_s = r.wall_time_ms / 1000.0;
                if let Some(o) = &r.outcome {
                    let file = format!("outcomes/{name}-cap{}.json", cap_label(cap));
                    fs::write(config.out.join(&file), serde_json::to_string_pretty(o)?)?;
                    rec.outcome_file = Some(file);
                }
                if r.status == CoreStatus::CoreOutcome {
                    rec.welfare = Some(r.welfare);
                    let o = r.outcome.as_ref().expect("solved results carry an outcome");
                    for (slot, k) in rec.in_cores.iter_mut().zip(MEMBERSHIP_CAPS) {
                        *slot = in_core_at(&inst, o, cap, k, limit)?;
                    }
                }
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        records.push(rec);
    }
    Ok(records)
}

const DETAIL_HEADER: [&str; 13] = [
    "bidders",
    "items",
    "seed",
    "cap",
    "status",
    "welfare",
    "iterations",
    "cuts",
    "runtime_s",
    "in_3_core",
    "in_5_core",
    "in_core",
    "outcome_file",
];

/// Indices of columns that depend on the machine rather than the inputs.
pub const DETAIL_RUNTIME_COLUMNS: [usize; 1] = [8];
pub const SUMMARY_RUNTIME_COLUMNS: [usize; 1] = [8];

fn flag(b: Option<bool>) -> String {
    b.map_or(String::new(), |b| (b as u8).to_string())
}

fn detail_fields(r: &BenchRecord) -> Vec<String> {
    vec![
        r.bidders.to_string(),
        r.items.to_string(),
        r.seed.to_string(),
        cap_label(r.cap),
        r.status.clone(),
        r.welfare.map_or(String::new(), |w| format!("{w:.6}")),
        r.iterations.to_string(),
        r.cuts.to_string(),
        format!("{:.6}", r.runtime_s),
        flag(r.in_cores[0]),
        flag(r.in_cores[1]),
        flag(r.in_cores[2]),
        r.outcome_file.clone().unwrap_or_default(),
    ]
}

/// Aggregates records (any order) into one row per cell, in config order.
pub fn summarize(config: &BenchConfig, records: &[BenchRecord]) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &bidders in &config.bidders {
        for &items in &config.items {
            for &cap in &config.caps {
                let mut cell: Vec<&BenchRecord> = records
                    .iter()
                    .filter(|r| r.bidders == bidders && r.items == items && r.cap == cap)
                    .collect();
                cell.sort_by_key(|r| r.seed);
                let solved: Vec<&&BenchRecord> = cell.iter().filter(|r| r.solved()).collect();
                let count = |p: &dyn Fn(&BenchRecord) -> bool| cell.iter().filter(|r| p(r)).count() as u64;
                rows.push(BenchRow {
                    bidders,
                    items,
                    cap,
                    seeds: cell.len() as u64,
                    solved: solved.len() as u64,
                    core_empty: count(&|r| r.status == "coreEmpty"),
                    timeouts: count(&|r| r.status == "timeout"),
                    avg_runtime_s: (!solved.is_empty())
                        .then(|| solved.iter().map(|r| r.runtime_s).sum::<f64>() / solved.len() as f64),
                    in_3_core: count(&|r| r.in_cores[0] == Some(true)),
                    in_5_core: count(&|r| r.in_cores[1] == Some(true)),
                    in_core: count(&|r| r.in_cores[2] == Some(true)),
                    statuses: cell.iter().map(|r| r.status.clone()).collect(),
                });
            }
        }
    }
    rows
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(std::io::Error::from)?;
    w.write_record(header).map_err(std::io::Error::from)?;
    for r in rows {
        w.write_record(&r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every cell × seed, writing reports under `config.out`.
pub fn run_bench(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let errs = config.validate();
    if !errs.is_empty() {
        return Err(Error::InvalidInstance(errs));
    }
    fs::create_dir_all(config.out.join("instances"))?;
    fs::create_dir_all(config.out.join("outcomes"))?;

    let partial_path = config.out.join("detail.partial.csv");
    let partial = {
        let mut f = File::create(&partial_path)?;
        writeln!(f, "{}", DETAIL_HEADER.join(","))?;
        Mutex::new(csv::WriterBuilder::new().has_headers(false).from_writer(f))
    };

    let jobs: Vec<(usize, usize, u64)> = config
        .bidders
        .iter()
        .flat_map(|&b| config.items.iter().map(move |&i| (b, i)))
        .flat_map(|(b, i)| (config.first_seed..config.first_seed + config.seeds).map(move |s| (b, i, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count())
        .build()
        .map_err(|e| Error::Precondition(e.to_string()))?;
    let results: Vec<Result<Vec<BenchRecord>>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(b, i, s)| {
                let recs = run_instance(config, b, i, s)?;
                let mut w = partial.lock().expect("partial writer poisoned");
                for r in &recs {
                    w.write_record(detail_fields(r)).map_err(std::io::Error::from)?;
                }
                w.flush()?;
                Ok(recs)
            })
            .collect()
    });
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    let cap_rank = |c: Option<usize>| c.unwrap_or(usize::MAX);
    records.sort_by_key(|r| (r.bidders, r.items, r.seed, cap_rank(r.cap)));

    write_csv(&config.out.join("detail.csv"), &DETAIL_HEADER, records.iter().map(detail_fields))?;
    let rows = summarize(config, &records);
    write_csv(
        &config.out.join("summary.csv"),
        &[
            "bidders",
            "items",
            "cap",
            "seeds",
            "solved",
            "core_empty",
            "timeouts",
            "unsolved",
            "avg_runtime_s",
            "in_3_core",
            "in_5_core",
            "in_core",
        ],
        rows.iter().map(|r| {
            vec![
                r.bidders.to_string(),
                r.items.to_string(),
                cap_label(r.cap),
                r.seeds.to_string(),
                r.solved.to_string(),
                r.core_empty.to_string(),
                r.timeouts.to_string(),
                (r.seeds - r.solved).to_string(),
                r.avg_runtime_s.map_or(String::new(), |t| format!("{t:.6}")),
                r.in_3_core.to_string(),
                r.in_5_core.to_string(),
                r.in_core.to_string(),
            ]
        }),
    )?;
    fs::write(config.out.join("summary.json"), serde_json::to_string_pretty(&rows)?)?;
    drop(partial);
    fs::remove_file(&partial_path)?;
    Ok(rows)
}

/// Reads a CSV written by [`run_bench`] and blanks the given columns.
pub fn csv_without_columns(path: &Path, skip: &[usize]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(OpenOptions::new().read(true).open(path)?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(std::io::Error::from)?;
        out.push(
            rec.iter()
                .enumerate()
                .map(|(i, f)| if skip.contains(&i) { String::new() } else { f.to_string() })
                .collect(),
        );
    }
    Ok(out)
}
