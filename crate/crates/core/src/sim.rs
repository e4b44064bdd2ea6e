//! Workload drivers, RAM sweeps and CSV output.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::accounting::AmplificationReport;
use crate::error::FtlError;
use crate::ftl::{Ftl, FtlConfig, FtlStats, Scheme};
use crate::lsm::LsmStats;
use crate::nand::{Category, Geometry};
use crate::trace::{TraceError, TraceOp, TraceRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Ftl(#[from] FtlError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub ftl: FtlConfig,
    pub seed: u64,
    /// Measured operations.
    pub ops: u64,
    /// Uniform writes run after the sequential fill and before
    /// measurement, in multiples of the logical page count.
    pub warmup_passes: f64,
    /// Share of measured operations that are reads.
    pub read_fraction: f64,
}

impl SimConfig {
    pub fn new(geometry: Geometry, scheme: Scheme) -> Self {
        SimConfig {
            ftl: FtlConfig::new(geometry, scheme),
            seed: 1,
            ops: 100_000,
            warmup_passes: 3.0,
            read_fraction: 0.0,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.read_fraction) {
            return Err(SimError::Config(format!(
                "read fraction {} outside [0, 1]",
                self.read_fraction
            )));
        }
        if !(self.warmup_passes >= 0.0 && self.warmup_passes.is_finite()) {
            return Err(SimError::Config(format!(
                "warmup passes {} must be finite and non-negative",
                self.warmup_passes
            )));
        }
        self.ftl.geometry.validate().map_err(FtlError::from)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub scheme: Scheme,
    pub ram_bytes: Option<u64>,
    pub report: AmplificationReport,
    /// FTL counters over the measured window.
    pub stats: FtlStats,
    pub lsm: Option<LsmStats>,
    pub unmapped_reads: u64,
}

struct Window {
    counters: crate::nand::IoCounters,
    stats: FtlStats,
    evictions: u64,
}

fn snapshot(ftl: &Ftl) -> Window {
    Window {
        counters: *ftl.device().counters(),
        stats: *ftl.stats(),
        evictions: ftl.dftl().stats().evictions,
    }
}

fn finish(ftl: &Ftl, start: Window, unmapped_reads: u64) -> SimResult {
    let s = ftl.stats();
    let d = |now: u64, then: u64| now - then;
    let stats = FtlStats {
        user_writes: d(s.user_writes, start.stats.user_writes),
        user_reads: d(s.user_reads, start.stats.user_reads),
        data_fills: d(s.data_fills, start.stats.data_fills),
        data_gcs: d(s.data_gcs, start.stats.data_gcs),
        internal_gcs: d(s.internal_gcs, start.stats.internal_gcs),
        migrated_pages: d(s.migrated_pages, start.stats.migrated_pages),
        relocated_pages: d(s.relocated_pages, start.stats.relocated_pages),
        false_positives_resolved: d(
            s.false_positives_resolved,
            start.stats.false_positives_resolved,
        ),
        candidate_fetches: d(s.candidate_fetches, start.stats.candidate_fetches),
        candidate_requeues: d(s.candidate_requeues, start.stats.candidate_requeues),
    };
    SimResult {
        scheme: ftl.config().scheme,
        ram_bytes: ftl.config().ram_budget,
        report: AmplificationReport {
            user_writes: stats.user_writes,
            user_reads: stats.user_reads,
            counters: ftl.device().counters().since(&start.counters),
            evictions: ftl.dftl().stats().evictions - start.evictions,
        },
        stats,
        lsm: ftl.lsm().map(|l| *l.stats()),
        unmapped_reads,
    }
}

/// Fills the logical space once in order, runs the warmup passes of
/// uniform writes, then measures `ops` uniform operations.
pub fn run_uniform(cfg: &SimConfig) -> Result<SimResult, SimError> {
    let mut ftl = Ftl::new(cfg.ftl)?;
    run_uniform_on(&mut ftl, cfg)
}

/// Like [`run_uniform`] on a caller-owned FTL, so tests can inspect it
/// afterwards.
pub fn run_uniform_on(ftl: &mut Ftl, cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let n = ftl.logical_pages();
    for lba in 0..n {
        ftl.write(lba)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let warmup = (f64::from(n) * cfg.warmup_passes).round() as u64;
    for _ in 0..warmup {
        ftl.write(rng.gen_range(0..n))?;
    }
    let start = snapshot(ftl);
    for _ in 0..cfg.ops {
        let lba = rng.gen_range(0..n);
        if cfg.read_fraction > 0.0 && rng.gen_bool(cfg.read_fraction) {
            ftl.read(lba)?;
        } else {
            ftl.write(lba)?;
        }
    }
    Ok(finish(ftl, start, 0))
}

/// Replays `records` on a fresh device; every counter is measured.
pub fn run_trace(cfg: &SimConfig, records: &[TraceRecord]) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let mut ftl = Ftl::new(cfg.ftl)?;
    let start = snapshot(&ftl);
    let mut unmapped = 0;
    for r in records {
        match r.op {
            TraceOp::Write => ftl.write(r.lba)?,
            TraceOp::Read => match ftl.read(r.lba) {
                Ok(_) => {}
                Err(FtlError::UnmappedLba(_)) => unmapped += 1,
                Err(e) => return Err(e.into()),
            },
        }
    }
    Ok(finish(&ftl, start, unmapped))
}

/// RAM needed to cache every mapping entry.
pub fn full_map_bytes(cfg: &FtlConfig) -> u64 {
    cfg.geometry.logical_pages() * u64::from(cfg.entry_bytes)
}

/// `start`, `start/2`, ... with `count` entries.
pub fn halving_budgets(start: u64, count: usize) -> Vec<u64> {
    (0..count as u32).map(|i| start >> i).collect()
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub scheme: Scheme,
    pub ram_bytes: u64,
    pub outcome: Result<SimResult, String>,
}

impl SweepRow {
    pub fn result(&self) -> Option<&SimResult> {
        self.outcome.as_ref().ok()
    }
}

fn sweep_one(cfg: &SimConfig, scheme: Scheme, ram: u64) -> SweepRow {
    let mut c = *cfg;
    c.ftl.scheme = scheme;
    c.ftl.ram_budget = Some(ram);
    SweepRow {
        scheme,
        ram_bytes: ram,
        outcome: run_uniform(&c).map_err(|e| e.to_string()),
    }
}

/// One uniform run per (budget, scheme); rows come back in budget order,
/// then scheme order, whatever order they finish in.
pub fn run_ram_sweep(cfg: &SimConfig, schemes: &[Scheme], budgets: &[u64]) -> Vec<SweepRow> {
    let jobs: Vec<(u64, Scheme)> = budgets
        .iter()
        .flat_map(|&b| schemes.iter().map(move |&s| (b, s)))
        .collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(b, s)| sweep_one(cfg, s, b))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        jobs.iter().map(|&(b, s)| sweep_one(cfg, s, b)).collect()
    }
}

pub const CSV_HEADER: [&str; 11] = [
    "scheme",
    "ram_bytes",
    "wa",
    "ra",
    "wa_lsm_frac",
    "wa_reverse_frac",
    "ra_lsm_frac",
    "ra_mapping_frac",
    "ra_gc_frac",
    "evictions_per_write",
    "erases",
];

fn fmt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

/// CSV fields for one result; every metric is `NA` when `result` is
/// `None`.
pub fn csv_fields(scheme: Scheme, ram_bytes: Option<u64>, result: Option<&SimResult>) -> Vec<String> {
    let ram = ram_bytes.map_or_else(|| "NA".to_string(), |r| r.to_string());
    let mut row = vec![scheme.name().to_string(), ram];
    match result {
        None => row.extend(std::iter::repeat_n("NA".to_string(), 9)),
        Some(r) => {
            let rep = &r.report;
            row.extend([
                fmt(rep.write_amplification()),
                fmt(rep.read_amplification()),
                fmt(rep.write_fraction(Category::Lsm)),
                fmt(rep.write_fraction(Category::Reverse)),
                fmt(rep.read_fraction(Category::Lsm)),
                fmt(rep.read_fraction(Category::Translation)),
                fmt(rep.read_fraction(Category::GcMigration)),
                fmt(rep.evictions_per_write()),
                rep.erases().to_string(),
            ]);
        }
    }
    row
}

pub fn write_results_csv<W: Write>(results: &[SimResult], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in results {
        w.write_record(csv_fields(r.scheme, r.ram_bytes, Some(r)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(csv_fields(r.scheme, Some(r.ram_bytes), r.result()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn sweep_csv_string(rows: &[SweepRow]) -> String {
    let mut buf = vec![];
    write_sweep_csv(rows, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}
