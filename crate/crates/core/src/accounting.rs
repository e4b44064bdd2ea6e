//! RAM footprints, IO overhead bounds and amplification metrics.

use std::fmt;

use crate::error::FtlError;
use crate::lsm::{EntryCodec, GeckoLsm, LsmConfig};
use crate::nand::{Category, Geometry, IoCounters, IoOp};

pub const KIB: f64 = 1024.0;
pub const MIB: f64 = 1024.0 * 1024.0;

/// Garbage-collection metadata layout whose RAM use is being sized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetadataScheme {
    Lazy,
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RamBreakdown {
    pub scheme: MetadataScheme,
    pub components: Vec<(&'static str, f64)>,
}

impl RamBreakdown {
    pub fn total(&self) -> f64 {
        self.components.iter().map(|(_, b)| b).sum()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, b)| b)
    }
}

/// Human-readable byte count with binary prefixes.
pub fn human_bytes(bytes: f64) -> String {
    if bytes >= MIB {
        format!("{:.2} MiB", bytes / MIB)
    } else if bytes >= KIB {
        format!("{:.1} KiB", bytes / KIB)
    } else {
        format!("{bytes:.0} B")
    }
}

impl fmt::Display for RamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, bytes) in &self.components {
            writeln!(f, "{name:<28}{:>14}", human_bytes(*bytes))?;
        }
        write!(f, "{:<28}{:>14}", "total", human_bytes(self.total()))
    }
}

pub mod component {
    pub const GMD: &str = "global mapping directory";
    pub const RMD: &str = "reverse mapping directory";
    pub const PVB: &str = "page validity bitmap";
    pub const LGMD: &str = "gecko mapping directory";
    pub const QUEUE_DIR: &str = "queue directory";
    pub const CACHED_BITMAPS: &str = "cached bitmaps";
    pub const PAGE_BUFFERS: &str = "page buffers";
}

fn entries_per_gecko_page(g: &Geometry) -> f64 {
    f64::from(g.page_size) / (f64::from(g.addr_size) + f64::from(g.pages_per_block) / 8.0)
}

/// Bitmaps kept for the internal blocks. The two devices of the vendor
/// presets use their published sizes; other geometries get an estimate
/// of two bitmaps per block of translation and reverse pages.
pub fn cached_bitmap_bytes(g: &Geometry) -> f64 {
    let same = |o: &Geometry| {
        (g.blocks, g.pages_per_block, g.page_size) == (o.blocks, o.pages_per_block, o.page_size)
    };
    if same(&Geometry::micron_p420m(0.3)) {
        return 15.0 * KIB;
    }
    if same(&Geometry::intel_525(0.3)) {
        return 4.0 * KIB;
    }
    let b = f64::from(g.pages_per_block);
    let internal_blocks =
        (g.translation_pages() as f64 / b).ceil() + (f64::from(g.blocks) / b).ceil() + 1.0;
    2.0 * internal_blocks * (b / 8.0)
}

/// Minimum RAM of the garbage-collection metadata, closed form.
///
/// The page-buffer term uses `L = log_T(2K / (P / (a + B/8)))` levels.
pub fn ram_footprint(
    scheme: MetadataScheme,
    g: &Geometry,
    lsm: &LsmConfig,
) -> Result<RamBreakdown, FtlError> {
    g.validate()?;
    let a = f64::from(g.addr_size);
    let p = f64::from(g.page_size);
    let k = f64::from(g.blocks);
    let epp = p / a;
    let mut components = vec![
        (component::GMD, a * g.logical_pages() as f64 / epp),
        (component::RMD, a * g.physical_pages() as f64 / epp),
    ];
    match scheme {
        MetadataScheme::Lazy => {
            components.push((component::PVB, g.physical_pages() as f64 / 8.0));
        }
        MetadataScheme::Logarithmic => {
            let tree_pages = k / entries_per_gecko_page(g);
            let levels = (2.0 * tree_pages).ln() / f64::from(lsm.size_ratio).ln();
            components.extend([
                (component::LGMD, a * 2.0 * tree_pages),
                (component::QUEUE_DIR, 2.0 * a * (k * a / p)),
                (component::CACHED_BITMAPS, cached_bitmap_bytes(g)),
                (component::PAGE_BUFFERS, p * (4.0 + levels)),
            ]);
        }
    }
    Ok(RamBreakdown { scheme, components })
}

/// Logarithmic total over Lazy total.
pub fn footprint_ratio(g: &Geometry, lsm: &LsmConfig) -> Result<f64, FtlError> {
    let lazy = ram_footprint(MetadataScheme::Lazy, g, lsm)?.total();
    let log = ram_footprint(MetadataScheme::Logarithmic, g, lsm)?.total();
    Ok(log / lazy)
}

/// Fixed RAM the simulator charges before sizing the CMT. Unlike
/// [`ram_footprint`] this follows the structures as simulated: one reverse
/// page per block and the tree's actual level bound.
pub fn simulator_fixed_bytes(scheme: MetadataScheme, g: &Geometry, lsm: &LsmConfig) -> u64 {
    let a = u64::from(g.addr_size);
    let gmd = a * g.translation_pages();
    let rmd = a * u64::from(g.blocks);
    match scheme {
        MetadataScheme::Lazy => gmd + rmd + g.physical_pages().div_ceil(8),
        MetadataScheme::Logarithmic => {
            let tree_pages = (f64::from(g.blocks) / entries_per_gecko_page(g)).ceil() as u64;
            let lgmd = 2 * a * 2 * tree_pages;
            let queue_dir = 2 * a * (u64::from(g.blocks) * a).div_ceil(u64::from(g.page_size));
            let levels = u64::from(GeckoLsm::new(*g, *lsm).l_max());
            let buffers = u64::from(g.page_size) * (4 + levels);
            gmd + rmd + lgmd + queue_dir + cached_bitmap_bytes(g).ceil() as u64 + buffers
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadBounds {
    pub per_write_reads: f64,
    pub per_write_writes: f64,
    pub per_gc_reads: f64,
    pub per_gc_writes: f64,
    /// `log_T(K * B / P)`, the depth of a tree holding one bit per page.
    pub tree_depth: f64,
}

/// Per-write and per-collection IO overheads of each scheme.
pub fn io_overhead_bounds(scheme: MetadataScheme, g: &Geometry, lsm: &LsmConfig) -> OverheadBounds {
    let t = f64::from(lsm.size_ratio);
    let depth = (g.physical_pages() as f64 / f64::from(g.page_size)).ln() / t.ln();
    match scheme {
        MetadataScheme::Lazy => OverheadBounds {
            per_write_reads: 0.0,
            per_write_writes: 0.0,
            per_gc_reads: 1.0,
            per_gc_writes: 1.0,
            tree_depth: depth,
        },
        MetadataScheme::Logarithmic => OverheadBounds {
            per_write_reads: 0.0,
            per_write_writes: t * f64::from(g.pages_per_block) / f64::from(g.page_size) * depth,
            per_gc_reads: 1.0 + depth,
            per_gc_writes: 1.0,
            tree_depth: depth,
        },
    }
}

/// Compressed buffer capacity over raw capacity for single-bit entries.
pub fn compression_gain(g: &Geometry) -> f64 {
    let c = EntryCodec::new(g, 2);
    f64::from(c.raw_size()) / f64::from(c.compressed_size(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplificationReport {
    pub user_writes: u64,
    pub user_reads: u64,
    pub counters: IoCounters,
    pub evictions: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl AmplificationReport {
    pub fn flash_writes(&self) -> u64 {
        self.counters.total(IoOp::Write)
    }

    /// Reads other than those serving the application.
    pub fn internal_reads(&self) -> u64 {
        self.counters.total(IoOp::Read) - self.counters.reads(Category::User)
    }

    /// Flash writes per user write; `None` without user writes.
    pub fn write_amplification(&self) -> Option<f64> {
        ratio(self.flash_writes(), self.user_writes)
    }

    /// Internal flash reads per user write.
    pub fn read_amplification(&self) -> Option<f64> {
        ratio(self.internal_reads(), self.user_writes)
    }

    pub fn write_fraction(&self, cat: Category) -> Option<f64> {
        ratio(self.counters.writes(cat), self.flash_writes())
    }

    pub fn read_fraction(&self, cat: Category) -> Option<f64> {
        ratio(self.counters.reads(cat), self.internal_reads())
    }

    pub fn evictions_per_write(&self) -> Option<f64> {
        ratio(self.evictions, self.user_writes)
    }

    pub fn erases(&self) -> u64 {
        self.counters.total(IoOp::Erase)
    }
}
