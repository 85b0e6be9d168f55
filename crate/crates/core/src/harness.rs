//! Sweep orchestration: expands a config into cells, runs them on a worker
//! pool, writes one JSONL per cell plus a manifest, and summarises manifests
//! into CSV tables.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fl::experiment::SweepConfig;
use crate::fl::{run_experiment, ExperimentConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub rule: String,
    pub seed: u64,
    /// Fully resolved single-cell config (sweep section cleared).
    pub config: ExperimentConfig,
}

impl Cell {
    pub fn file_name(&self) -> String {
        format!("cell-{:04}.jsonl", self.index)
    }
}

/// Cartesian product `epsilon × kappa × alpha × rule × seed`, seeds innermost.
/// An empty axis contributes the base config's value.
pub fn expand_cells(cfg: &ExperimentConfig, seed_offset: u64) -> Vec<Cell> {
    let s = &cfg.sweep;
    let or_base = |grid: &[f64], base: f64| {
        if grid.is_empty() {
            vec![base]
        } else {
            grid.to_vec()
        }
    };
    let epsilons = or_base(&s.epsilon_grid, cfg.attack.epsilon);
    let kappas = or_base(&s.kappa_grid, cfg.attack.eab_fl.kappa);
    let alphas = or_base(&s.alpha_grid, cfg.partition.alpha);
    let rules = if s.rules.is_empty() {
        vec![cfg.aggregation.clone()]
    } else {
        s.rules.clone()
    };
    let seeds = if s.seeds.is_empty() {
        vec![cfg.seed]
    } else {
        s.seeds.clone()
    };

    let mut cells = Vec::new();
    for &epsilon in &epsilons {
        for &kappa in &kappas {
            for &alpha in &alphas {
                for rule in &rules {
                    for &seed in &seeds {
                        let mut c = cfg.clone();
                        c.sweep = SweepConfig::default();
                        c.attack.epsilon = epsilon;
                        c.attack.eab_fl.kappa = kappa;
                        c.partition.alpha = alpha;
                        c.aggregation = rule.clone();
                        c.seed = seed.wrapping_add(seed_offset);
                        cells.push(Cell {
                            index: cells.len(),
                            epsilon,
                            kappa,
                            alpha,
                            rule: rule.label(),
                            seed: c.seed,
                            config: c,
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub index: usize,
    pub epsilon: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub rule: String,
    pub seed: u64,
    /// JSONL file name relative to the manifest; absent when the cell failed.
    pub file: Option<String>,
    pub error: Option<String>,
    pub rounds: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub cells: Vec<CellRecord>,
}

impl Manifest {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
    }
}

fn run_cell(cell: &Cell, out_dir: &Path) -> CellRecord {
    let start = Instant::now();
    let path = out_dir.join(cell.file_name());
    let result = (|| -> Result<usize> {
        let mut w = BufWriter::new(File::create(&path)?);
        let out = run_experiment(&cell.config, Some(&mut w))?;
        w.flush()?;
        Ok(out.logs.len())
    })();
    let (file, error, rounds) = match result {
        Ok(rounds) => (Some(cell.file_name()), None, rounds),
        Err(e) => {
            log::error!("cell {} failed: {e}", cell.index);
            let _ = std::fs::remove_file(&path);
            (None, Some(e.to_string()), 0)
        }
    };
    CellRecord {
        index: cell.index,
        epsilon: cell.epsilon,
        kappa: cell.kappa,
        alpha: cell.alpha,
        rule: cell.rule.clone(),
        seed: cell.seed,
        file,
        error,
        rounds,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Runs every cell with `jobs` worker threads (`None` lets rayon decide) and
/// writes the manifest once all cells have finished. Failed cells are recorded,
/// not propagated; check [`Manifest::failures`].
pub fn run_sweep(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: Option<usize>,
    seed_offset: u64,
) -> Result<Manifest> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let cells = expand_cells(cfg, seed_offset);
    log::info!("running {} cells into {}", cells.len(), out_dir.display());
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let records: Vec<CellRecord> =
        pool.install(|| cells.par_iter().map(|c| run_cell(c, out_dir)).collect());
    let manifest = Manifest {
        schema_version: crate::fl::SCHEMA_VERSION,
        cells: records,
    };
    let mut w = BufWriter::new(File::create(out_dir.join(MANIFEST_FILE))?);
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Eod,
    Dpd,
    Utility,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Self::Eod => "eod",
            Self::Dpd => "dpd",
            Self::Utility => "utility",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eod" => Ok(Self::Eod),
            "dpd" => Ok(Self::Dpd),
            "utility" => Ok(Self::Utility),
            _ => Err(Error::Config(format!(
                "unknown metric {s:?}; expected eod, dpd or utility"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Epsilon,
    Kappa,
    Alpha,
    Rule,
    Seed,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Epsilon => "epsilon",
            Self::Kappa => "kappa",
            Self::Alpha => "alpha",
            Self::Rule => "rule",
            Self::Seed => "seed",
        }
    }

    fn key(self, c: &CellRecord) -> String {
        match self {
            Self::Epsilon => c.epsilon.to_string(),
            Self::Kappa => c.kappa.to_string(),
            Self::Alpha => c.alpha.to_string(),
            Self::Rule => c.rule.clone(),
            Self::Seed => c.seed.to_string(),
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(Self::Epsilon),
            "kappa" => Ok(Self::Kappa),
            "alpha" => Ok(Self::Alpha),
            "rule" => Ok(Self::Rule),
            "seed" => Ok(Self::Seed),
            _ => Err(Error::Config(format!(
                "unknown axis {s:?}; expected epsilon, kappa, alpha, rule or seed"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub key: String,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; undefined for a single value.
    pub std: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportTable {
    pub axis: Axis,
    pub metric: Metric,
    pub rows: Vec<ReportRow>,
    /// Cells that could not contribute, with the reason.
    pub gaps: Vec<String>,
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},n,{m}_mean,{m}_std\n",
            self.axis.name(),
            m = self.metric.name()
        );
        for r in &self.rows {
            let std = r.std.map(|s| s.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                csv_field(&r.key),
                r.n,
                r.mean,
                std
            ));
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn final_metric(path: &Path, metric: Metric) -> Result<f64> {
    let mut last = None;
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            last = Some(line);
        }
    }
    let line = last.ok_or(Error::EmptyInput("cell log"))?;
    let v: serde_json::Value = serde_json::from_str(&line)?;
    v["report"][metric.name()]
        .as_f64()
        .ok_or_else(|| Error::Parse {
            row: 0,
            msg: format!("final round lacks report.{}", metric.name()),
        })
}

/// Final-round `metric` per cell, grouped by `axis` in first-appearance order.
pub fn build_report(manifest_path: &Path, metric: Metric, axis: Axis) -> Result<ReportTable> {
    let manifest = Manifest::load(manifest_path)?;
    let dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut gaps = Vec::new();
    for c in &manifest.cells {
        let value = match (&c.file, &c.error) {
            (_, Some(e)) => Err(format!("cell {} failed: {e}", c.index)),
            (None, None) => Err(format!("cell {} has no output file", c.index)),
            (Some(f), None) => final_metric(&dir.join(f), metric)
                .map_err(|e| format!("cell {} ({f}): {e}", c.index)),
        };
        match value {
            Ok(v) => {
                let key = axis.key(c);
                if !groups.contains_key(&key) {
                    order.push(key.clone());
                }
                groups.entry(key).or_default().push(v);
            }
            Err(gap) => gaps.push(gap),
        }
    }
    for g in &gaps {
        log::warn!("partial report: {g}");
    }
    let rows = order
        .into_iter()
        .map(|key| {
            let vals = &groups[&key];
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = (n > 1).then(|| {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            ReportRow { key, n, mean, std }
        })
        .collect();
    Ok(ReportTable {
        axis,
        metric,
        rows,
        gaps,
    })
}
