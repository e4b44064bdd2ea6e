use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gecko_ftl::accounting::{
    footprint_ratio, human_bytes, io_overhead_bounds, ram_footprint, MetadataScheme,
};
use gecko_ftl::lazy::VictimPolicy;
use gecko_ftl::lsm::{GeckoLsm, LsmConfig, MergePolicy};
use gecko_ftl::nand::{Category, Geometry};
use gecko_ftl::sim::{
    full_map_bytes, halving_budgets, run_ram_sweep, run_trace, run_uniform, write_results_csv,
    write_sweep_csv, SimConfig, SimError, SimResult,
};
use gecko_ftl::trace::read_trace;
use gecko_ftl::Scheme;

#[derive(Parser)]
#[command(name = "gecko-sim", version, about = "IO-counting SSD simulator for flash-resident page-mapping FTLs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print a summary.
    Run(RunArgs),
    /// Halve the RAM budget step by step and record every scheme.
    Sweep(SweepArgs),
    /// Print the closed-form RAM footprint of both GC schemes.
    Ram(StaticArgs),
    /// Print the per-write and per-collection IO bounds.
    Bounds(StaticArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Intel525,
    #[value(name = "micronP420m", alias = "micron-p420m")]
    MicronP420m,
    Desk,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Oracle,
    #[value(name = "lazy_ideal", alias = "lazy-ideal")]
    LazyIdeal,
    Lazy,
    Logarithmic,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Oracle => Scheme::Oracle,
            SchemeArg::LazyIdeal => Scheme::LazyIdeal,
            SchemeArg::Lazy => Scheme::Lazy,
            SchemeArg::Logarithmic => Scheme::Logarithmic,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Greedy,
    Lru,
    WindowGreedy,
}

#[derive(Clone, Copy, ValueEnum)]
enum MergeArg {
    Cascade,
    MultiWay,
}

#[derive(Args, Clone)]
struct GeometryArgs {
    /// Start from a named device; individual flags override it.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    blocks: Option<u32>,
    #[arg(long)]
    pages_per_block: Option<u32>,
    #[arg(long)]
    page_size: Option<u32>,
    #[arg(long)]
    over_provisioning: Option<f64>,
    #[arg(long)]
    addr_size: Option<u32>,
}

impl GeometryArgs {
    fn geometry(&self) -> Result<Geometry, SimError> {
        let mut g = match self.preset {
            Preset::Intel525 => Geometry::intel_525(0.30),
            Preset::MicronP420m => Geometry::micron_p420m(0.30),
            Preset::Desk => Geometry::desk(),
        };
        g.blocks = self.blocks.unwrap_or(g.blocks);
        g.pages_per_block = self.pages_per_block.unwrap_or(g.pages_per_block);
        g.page_size = self.page_size.unwrap_or(g.page_size);
        g.over_provisioning = self.over_provisioning.unwrap_or(g.over_provisioning);
        g.addr_size = self.addr_size.unwrap_or(g.addr_size);
        g.validate().map_err(gecko_ftl::FtlError::from)?;
        Ok(g)
    }
}

#[derive(Args, Clone)]
struct LsmArgs {
    #[arg(long, default_value_t = 4)]
    size_ratio: u32,
    #[arg(long, default_value_t = 2)]
    compression_levels: u32,
    /// Entries with at most this many invalid pages are stored compressed.
    #[arg(long, default_value_t = 2)]
    compression_threshold: u32,
    #[arg(long, value_enum, default_value = "multi-way")]
    merge_policy: MergeArg,
}

impl LsmArgs {
    fn config(&self) -> LsmConfig {
        LsmConfig {
            size_ratio: self.size_ratio.max(2),
            compression_levels: self.compression_levels,
            compression_threshold: self.compression_threshold,
            merge_policy: match self.merge_policy {
                MergeArg::Cascade => MergePolicy::Cascade,
                MergeArg::MultiWay => MergePolicy::MultiWay,
            },
        }
    }
}

#[derive(Args, Clone)]
struct SimArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    lsm: LsmArgs,
    #[arg(long, value_enum, default_value = "greedy")]
    victim_policy: PolicyArg,
    /// Window size for window-greedy.
    #[arg(long, default_value_t = VictimPolicy::DEFAULT_WINDOW)]
    window: u32,
    #[arg(long, default_value_t = 5)]
    gc_threshold: u32,
    #[arg(long, default_value_t = 8)]
    entry_bytes: u32,
    /// Write back only the evicted entry instead of its whole translation page.
    #[arg(long)]
    no_batch_writeback: bool,
    /// Selection rounds the queued data block may lose before requeueing.
    #[arg(long, default_value_t = 3)]
    candidate_patience: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100_000)]
    ops: u64,
    /// Uniform writes before measurement, in passes over the logical space.
    #[arg(long, default_value_t = 3.0)]
    warmup_passes: f64,
    #[arg(long, default_value_t = 0.0)]
    read_fraction: f64,
    /// Check every collection against the exact oracle.
    #[arg(long)]
    verify: bool,
}

impl SimArgs {
    fn config(&self, scheme: Scheme) -> Result<SimConfig, SimError> {
        let mut c = SimConfig::new(self.geometry.geometry()?, scheme);
        c.ftl.lsm = self.lsm.config();
        c.ftl.victim_policy = match self.victim_policy {
            PolicyArg::Greedy => VictimPolicy::Greedy,
            PolicyArg::Lru => VictimPolicy::Lru,
            PolicyArg::WindowGreedy => VictimPolicy::WindowGreedy(self.window),
        };
        c.ftl.gc_threshold = self.gc_threshold;
        c.ftl.entry_bytes = self.entry_bytes;
        c.ftl.batch_writeback = !self.no_batch_writeback;
        c.ftl.candidate_patience = self.candidate_patience;
        c.ftl.verify = self.verify;
        c.seed = self.seed;
        c.ops = self.ops;
        c.warmup_passes = self.warmup_passes;
        c.read_fraction = self.read_fraction;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, value_enum, default_value = "logarithmic")]
    scheme: SchemeArg,
    /// RAM for mapping and GC metadata in bytes; unlimited when absent.
    #[arg(long)]
    ram_budget: Option<u64>,
    /// Replay a `W,<lba>` / `R,<lba>` trace instead of the uniform workload.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the result as CSV to this path (`-` for stdout).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    sim: SimArgs,
    /// Comma-separated schemes.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "lazy_ideal,lazy,logarithmic")]
    schemes: Vec<SchemeArg>,
    /// Explicit budgets in bytes, largest first.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<u64>,
    /// First budget when halving; defaults to the size of the whole mapping.
    #[arg(long)]
    start: Option<u64>,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    /// Output path; stdout when absent or `-`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct StaticArgs {
    #[command(flatten)]
    geometry: GeometryArgs,
    #[command(flatten)]
    lsm: LsmArgs,
}

fn open_out(path: Option<&PathBuf>) -> Result<Box<dyn Write>, SimError> {
    match path {
        Some(p) if p.as_os_str() != "-" => Ok(Box::new(File::create(p)?)),
        _ => Ok(Box::new(io::stdout().lock())),
    }
}

fn na(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".into(), |v| format!("{v:.4}"))
}

fn print_summary(r: &SimResult) {
    let rep = &r.report;
    println!("scheme               {}", r.scheme);
    match r.ram_bytes {
        Some(b) => println!("ram budget           {} ({b} B)", human_bytes(b as f64)),
        None => println!("ram budget           unlimited"),
    }
    println!("user writes          {}", rep.user_writes);
    println!("user reads           {}", rep.user_reads);
    println!("write amplification  {}", na(rep.write_amplification()));
    println!("read amplification   {}", na(rep.read_amplification()));
    println!("evictions per write  {}", na(rep.evictions_per_write()));
    println!("erases               {}", rep.erases());
    println!("data / internal GCs  {} / {}", r.stats.data_gcs, r.stats.internal_gcs);
    if r.unmapped_reads > 0 {
        println!("unmapped reads       {}", r.unmapped_reads);
    }
    println!("{:<14}{:>12}{:>12}", "category", "reads", "writes");
    for c in Category::ALL {
        println!(
            "{:<14}{:>12}{:>12}",
            c.name(),
            rep.counters.reads(c),
            rep.counters.writes(c)
        );
    }
}

fn run(args: RunArgs) -> Result<(), SimError> {
    let mut cfg = args.sim.config(args.scheme.into())?;
    cfg.ftl.ram_budget = args.ram_budget;
    let result = match &args.trace {
        Some(path) => run_trace(&cfg, &read_trace(path)?)?,
        None => run_uniform(&cfg)?,
    };
    print_summary(&result);
    if let Some(path) = &args.csv {
        write_results_csv(std::slice::from_ref(&result), open_out(Some(path))?)?;
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), SimError> {
    let cfg = args.sim.config(Scheme::LazyIdeal)?;
    let budgets = if args.budgets.is_empty() {
        let start = args.start.unwrap_or_else(|| full_map_bytes(&cfg.ftl));
        halving_budgets(start, args.steps)
    } else {
        args.budgets.clone()
    };
    if budgets.windows(2).any(|w| w[0] < w[1]) {
        return Err(SimError::Config("budgets must be listed largest first".into()));
    }
    let schemes: Vec<Scheme> = args.schemes.iter().map(|&s| s.into()).collect();
    let rows = run_ram_sweep(&cfg, &schemes, &budgets);
    for r in &rows {
        if let Err(e) = &r.outcome {
            eprintln!("{} at {} B: {e}", r.scheme, r.ram_bytes);
        }
    }
    write_sweep_csv(&rows, open_out(args.csv.as_ref())?)
}

fn ram(args: StaticArgs) -> Result<(), SimError> {
    let g = args.geometry.geometry()?;
    let lsm = args.lsm.config();
    for scheme in [MetadataScheme::Lazy, MetadataScheme::Logarithmic] {
        println!("{scheme:?}");
        println!("{}\n", ram_footprint(scheme, &g, &lsm)?);
    }
    println!("ratio {:.1}%", 100.0 * footprint_ratio(&g, &lsm)?);
    Ok(())
}

fn bounds(args: StaticArgs) -> Result<(), SimError> {
    let g = args.geometry.geometry()?;
    let lsm = args.lsm.config();
    println!(
        "{:<14}{:>16}{:>16}{:>16}{:>16}",
        "scheme", "write: reads", "write: writes", "gc: reads", "gc: writes"
    );
    for scheme in [MetadataScheme::Lazy, MetadataScheme::Logarithmic] {
        let b = io_overhead_bounds(scheme, &g, &lsm);
        println!(
            "{:<14}{:>16.3}{:>16.3}{:>16.3}{:>16.3}",
            format!("{scheme:?}"),
            b.per_write_reads,
            b.per_write_writes,
            b.per_gc_reads,
            b.per_gc_writes
        );
    }
    let b = io_overhead_bounds(MetadataScheme::Logarithmic, &g, &lsm);
    println!("tree depth log_T(KB/P) = {:.3}", b.tree_depth);
    println!("simulated level bound L_max = {}", GeckoLsm::new(g, lsm).l_max());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Ram(a) => ram(a),
        Command::Bounds(a) => bounds(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
