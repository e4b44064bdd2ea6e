//! Flash-resident LSM-tree of per-block invalidity bitmaps.
//!
//! Invalidations land in a one-page RAM buffer keyed by block id. A full
//! buffer is flushed as a one-page sorted run; runs are merged so that a
//! run at level `i` spans between `T^(i-1)` and `T^i - 1` pages. A query
//! reads at most one page per run, newest first, and stops at the first
//! entry carrying an erase flag.

use std::collections::BTreeMap;
use std::sync::Arc;

use fixedbitset::FixedBitSet;

use crate::device::{Device, Payload};
use crate::error::FtlError;
use crate::nand::{BlockKind, Category, Geometry, PhysAddr};

/// Validity record for one block. Bit set means the page is invalid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeckoEntry {
    pub block: u32,
    pub bitmap: FixedBitSet,
    pub erase_flag: bool,
}

impl GeckoEntry {
    pub fn blank(block: u32, pages_per_block: u32) -> Self {
        GeckoEntry {
            block,
            bitmap: FixedBitSet::with_capacity(pages_per_block as usize),
            erase_flag: false,
        }
    }

    pub fn erased(block: u32, pages_per_block: u32) -> Self {
        GeckoEntry {
            erase_flag: true,
            ..Self::blank(block, pages_per_block)
        }
    }
}

/// Combines two entries for the same block; `newer` comes from the more
/// recently created run.
pub fn merge_entries(newer: &GeckoEntry, older: &GeckoEntry) -> GeckoEntry {
    debug_assert_eq!(newer.block, older.block);
    if newer.erase_flag {
        return newer.clone();
    }
    let mut bitmap = newer.bitmap.clone();
    bitmap.union_with(&older.bitmap);
    GeckoEntry {
        block: newer.block,
        bitmap,
        erase_flag: older.erase_flag,
    }
}

/// Byte sizes of the on-flash entry encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryCodec {
    pub addr_size: u32,
    pub pages_per_block: u32,
    /// Entries with at most this many set bits are stored as offset lists.
    pub threshold: u32,
}

impl EntryCodec {
    pub const MAX_THRESHOLD: u32 = 3;

    pub fn new(geometry: &Geometry, threshold: u32) -> Self {
        EntryCodec {
            addr_size: geometry.addr_size,
            pages_per_block: geometry.pages_per_block,
            threshold: threshold.min(Self::MAX_THRESHOLD),
        }
    }

    /// Key, bitmap and a flag byte.
    pub fn raw_size(&self) -> u32 {
        self.addr_size + self.pages_per_block.div_ceil(8) + 1
    }

    /// Key (with the flag packed in) plus one address-sized offset per
    /// invalid page.
    pub fn compressed_size(&self, set_bits: u32) -> u32 {
        self.addr_size + self.addr_size * set_bits
    }

    fn compressible(&self, e: &GeckoEntry) -> bool {
        let ones = e.bitmap.count_ones(..) as u32;
        ones <= self.threshold && self.compressed_size(ones) < self.raw_size()
    }

    pub fn size(&self, e: &GeckoEntry, compress: bool) -> u32 {
        if compress && self.compressible(e) {
            self.compressed_size(e.bitmap.count_ones(..) as u32)
        } else {
            self.raw_size()
        }
    }

    /// Smallest entry a fresh invalidation can create.
    pub fn min_new_entry(&self, compress: bool) -> u32 {
        if compress && self.threshold >= 1 {
            self.compressed_size(1).min(self.raw_size())
        } else {
            self.raw_size()
        }
    }

    fn key_bits(&self) -> u32 {
        8 * self.addr_size.min(8)
    }

    pub fn encode(&self, e: &GeckoEntry, compress: bool) -> Vec<u8> {
        let bits = self.key_bits();
        assert!(
            u64::from(e.block) < 1u64 << (bits - 4),
            "block id {} does not fit the key field",
            e.block
        );
        let compressed = compress && self.compressible(e);
        let ones = e.bitmap.count_ones(..) as u64;
        let mut key = u64::from(e.block) | (u64::from(e.erase_flag) << (bits - 1));
        if compressed {
            key |= (1 << (bits - 2)) | (ones << (bits - 4));
        }
        let a = self.addr_size as usize;
        let mut out = key.to_le_bytes()[..a].to_vec();
        if compressed {
            for off in e.bitmap.ones() {
                out.extend_from_slice(&(off as u64).to_le_bytes()[..a]);
            }
        } else {
            let mut bytes = vec![0u8; self.pages_per_block.div_ceil(8) as usize];
            for off in e.bitmap.ones() {
                bytes[off / 8] |= 1 << (off % 8);
            }
            out.extend_from_slice(&bytes);
            out.push(u8::from(e.erase_flag));
        }
        out
    }

    /// Decodes one entry from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode(&self, bytes: &[u8]) -> Option<(GeckoEntry, usize)> {
        let a = self.addr_size as usize;
        let bits = self.key_bits();
        let mut kb = [0u8; 8];
        kb[..a].copy_from_slice(bytes.get(..a)?);
        let key = u64::from_le_bytes(kb);
        let flag = key >> (bits - 1) & 1 == 1;
        let compressed = key >> (bits - 2) & 1 == 1;
        let block = (key & ((1 << (bits - 4)) - 1)) as u32;
        let mut e = GeckoEntry::blank(block, self.pages_per_block);
        e.erase_flag = flag;
        if compressed {
            let count = (key >> (bits - 4) & 3) as usize;
            for i in 0..count {
                let mut ob = [0u8; 8];
                ob[..a].copy_from_slice(bytes.get(a + i * a..a + (i + 1) * a)?);
                let off = u64::from_le_bytes(ob) as usize;
                if off >= self.pages_per_block as usize {
                    return None;
                }
                e.bitmap.insert(off);
            }
            Some((e, a + count * a))
        } else {
            let nb = self.pages_per_block.div_ceil(8) as usize;
            let map = bytes.get(a..a + nb)?;
            for off in 0..self.pages_per_block as usize {
                if map[off / 8] >> (off % 8) & 1 == 1 {
                    e.bitmap.insert(off);
                }
            }
            bytes.get(a + nb)?;
            Some((e, a + nb + 1))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergePolicy {
    /// Merge two runs at a time, repeating while a level holds two runs.
    Cascade,
    /// Pull every run that the merge output would collide with into a
    /// single merge.
    #[default]
    MultiWay,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsmConfig {
    /// Size ratio between adjacent levels.
    pub size_ratio: u32,
    /// The buffer and runs at levels `1..=compression_levels` are stored
    /// offset-compressed; 0 turns compression off.
    pub compression_levels: u32,
    pub compression_threshold: u32,
    pub merge_policy: MergePolicy,
}

impl Default for LsmConfig {
    fn default() -> Self {
        LsmConfig {
            size_ratio: 4,
            compression_levels: 2,
            compression_threshold: 2,
            merge_policy: MergePolicy::MultiWay,
        }
    }
}

/// LGMD record for one page of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunPage {
    pub addr: PhysAddr,
    pub first_key: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortedRun {
    pub level: u32,
    pub compressed: bool,
    pub pages: Vec<RunPage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LsmStats {
    pub invalidations: u64,
    pub erase_events: u64,
    pub flushes: u64,
    pub merges: u64,
    pub merge_reads: u64,
    pub merge_writes: u64,
    pub queries: u64,
    pub query_reads: u64,
    pub max_runs: usize,
}

#[derive(Debug, Clone)]
pub struct GeckoLsm {
    geometry: Geometry,
    config: LsmConfig,
    codec: EntryCodec,
    buffer: BTreeMap<u32, GeckoEntry>,
    buffer_bytes: u32,
    /// Newest first; levels strictly increase at rest.
    runs: Vec<SortedRun>,
    stats: LsmStats,
}

impl GeckoLsm {
    pub fn new(geometry: Geometry, config: LsmConfig) -> Self {
        assert!(config.size_ratio >= 2, "size ratio must be at least 2");
        GeckoLsm {
            geometry,
            config,
            codec: EntryCodec::new(&geometry, config.compression_threshold),
            buffer: BTreeMap::new(),
            buffer_bytes: 0,
            runs: Vec::new(),
            stats: LsmStats::default(),
        }
    }

    pub fn config(&self) -> &LsmConfig {
        &self.config
    }

    pub fn codec(&self) -> &EntryCodec {
        &self.codec
    }

    pub fn stats(&self) -> &LsmStats {
        &self.stats
    }

    pub fn runs(&self) -> &[SortedRun] {
        &self.runs
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn buffer_bytes(&self) -> u32 {
        self.buffer_bytes
    }

    pub fn buffered(&self, block: u32) -> Option<&GeckoEntry> {
        self.buffer.get(&block)
    }

    fn buffer_compressed(&self) -> bool {
        self.config.compression_levels >= 1
    }

    /// Smallest level whose size bounds admit a run of `pages` pages.
    pub fn level_for(&self, pages: usize) -> u32 {
        let t = u64::from(self.config.size_ratio);
        let mut level = 1;
        let mut cap = t;
        while pages as u64 > cap - 1 {
            level += 1;
            cap = cap.saturating_mul(t);
        }
        level
    }

    /// Deepest level the tree can reach: one entry per block, stored raw.
    pub fn l_max(&self) -> u32 {
        let raw = u64::from(self.codec.raw_size());
        let p = u64::from(self.geometry.page_size);
        let pages = (u64::from(self.geometry.blocks) * raw).div_ceil(p - raw + 1);
        self.level_for(pages as usize)
    }

    fn upsert(
        &mut self,
        dev: &mut Device,
        block: u32,
        f: impl Fn(&mut GeckoEntry),
    ) -> Result<(), FtlError> {
        let compress = self.buffer_compressed();
        let b = self.geometry.pages_per_block;
        let mut e = self
            .buffer
            .get(&block)
            .cloned()
            .unwrap_or_else(|| GeckoEntry::blank(block, b));
        let old = self
            .buffer
            .get(&block)
            .map_or(0, |e| self.codec.size(e, compress));
        f(&mut e);
        let new = self.codec.size(&e, compress);
        if self.buffer_bytes - old + new > self.geometry.page_size {
            self.flush(dev)?;
            e = GeckoEntry::blank(block, b);
            f(&mut e);
            self.buffer_bytes = self.codec.size(&e, compress);
        } else {
            self.buffer_bytes = self.buffer_bytes - old + new;
        }
        self.buffer.insert(block, e);
        if self.geometry.page_size - self.buffer_bytes < self.codec.min_new_entry(compress) {
            self.flush(dev)?;
        }
        Ok(())
    }

    /// Records that page `pa` holds stale data.
    pub fn invalidate(&mut self, dev: &mut Device, pa: PhysAddr) -> Result<(), FtlError> {
        self.stats.invalidations += 1;
        self.upsert(dev, pa.block, |e| e.bitmap.insert(pa.offset as usize))
    }

    /// Records that `block` was erased: all older information about it is
    /// void.
    pub fn block_rewritten(&mut self, dev: &mut Device, block: u32) -> Result<(), FtlError> {
        self.stats.erase_events += 1;
        let b = self.geometry.pages_per_block;
        self.upsert(dev, block, |e| *e = GeckoEntry::erased(block, b))
    }

    /// Writes the buffer out as a one-page run and restores the level
    /// invariants.
    pub fn flush(&mut self, dev: &mut Device) -> Result<(), FtlError> {
        if self.buffer.is_empty() {
            return Ok(());
        }
        let entries: Vec<GeckoEntry> = std::mem::take(&mut self.buffer).into_values().collect();
        self.buffer_bytes = 0;
        self.stats.flushes += 1;
        let compressed = self.buffer_compressed();
        let pages = self.write_pages(dev, &entries, compressed, Category::Lsm)?;
        debug_assert_eq!(pages.len(), 1);
        self.runs.insert(
            0,
            SortedRun {
                level: 1,
                compressed,
                pages,
            },
        );
        self.compact(dev)?;
        self.stats.max_runs = self.stats.max_runs.max(self.runs.len());
        Ok(())
    }

    fn pack(&self, entries: &[GeckoEntry], compressed: bool) -> Vec<Vec<GeckoEntry>> {
        let mut pages = vec![];
        let mut cur = vec![];
        let mut used = 0;
        for e in entries {
            let s = self.codec.size(e, compressed);
            if used + s > self.geometry.page_size {
                pages.push(std::mem::take(&mut cur));
                used = 0;
            }
            used += s;
            cur.push(e.clone());
        }
        if !cur.is_empty() {
            pages.push(cur);
        }
        pages
    }

    fn write_pages(
        &mut self,
        dev: &mut Device,
        entries: &[GeckoEntry],
        compressed: bool,
        cat: Category,
    ) -> Result<Vec<RunPage>, FtlError> {
        let mut out = vec![];
        for page in self.pack(entries, compressed) {
            let first_key = page[0].block;
            let payload = Payload::Gecko {
                entries: page.into(),
            };
            let addr = dev.append(BlockKind::Gecko, payload, cat)?.addr;
            out.push(RunPage { addr, first_key });
        }
        Ok(out)
    }

    fn page_entries(dev: &Device, addr: PhysAddr) -> Arc<[GeckoEntry]> {
        match dev.peek(addr) {
            Ok(Payload::Gecko { entries }) => entries.clone(),
            other => panic!("LGMD points at {other:?}"),
        }
    }

    /// Merged contents of `runs[..n]` without any IO.
    fn merged_prefix(&self, dev: &Device, n: usize) -> Vec<GeckoEntry> {
        let mut acc: BTreeMap<u32, GeckoEntry> = BTreeMap::new();
        for run in self.runs[..n].iter().rev() {
            for p in &run.pages {
                for e in Self::page_entries(dev, p.addr).iter() {
                    let merged = match acc.get(&e.block) {
                        Some(older) => merge_entries(e, older),
                        None => e.clone(),
                    };
                    acc.insert(e.block, merged);
                }
            }
        }
        let bottom = n == self.runs.len();
        acc.into_values()
            .filter_map(|mut e| {
                if bottom {
                    // nothing older left to shadow
                    e.erase_flag = false;
                    if e.bitmap.is_clear() {
                        return None;
                    }
                }
                Some(e)
            })
            .collect()
    }

    /// Page count and compression of the run that merging `entries` would
    /// produce.
    fn output_shape(&self, entries: &[GeckoEntry]) -> (usize, bool) {
        let raw = self.pack(entries, false).len();
        if self.level_for(raw) <= self.config.compression_levels {
            (self.pack(entries, true).len(), true)
        } else {
            (raw, false)
        }
    }

    fn duplicate_at_front(&self) -> bool {
        self.runs.len() >= 2 && self.runs[0].level >= self.runs[1].level
    }

    fn compact(&mut self, dev: &mut Device) -> Result<(), FtlError> {
        while self.duplicate_at_front() {
            let mut n = 2;
            if self.config.merge_policy == MergePolicy::MultiWay {
                let t = u64::from(self.config.size_ratio);
                let mut pages: u64 = self.runs[..2].iter().map(|r| r.pages.len() as u64).sum();
                while n < self.runs.len() {
                    let j = self.runs[n].level;
                    let lo = t.pow(j - 1);
                    if self.runs[n].level != self.runs[n - 1].level + 1 || pages < t.pow(j) - lo {
                        break;
                    }
                    pages += self.runs[n].pages.len() as u64;
                    n += 1;
                }
            }
            // widen until the output cannot land on or above an older run
            let entries = loop {
                let entries = self.merged_prefix(dev, n);
                let (pages, _) = self.output_shape(&entries);
                let level = self.level_for(pages);
                let collides = n < self.runs.len()
                    && match self.config.merge_policy {
                        MergePolicy::Cascade => level > self.runs[n].level,
                        MergePolicy::MultiWay => level >= self.runs[n].level,
                    };
                if !collides {
                    break entries;
                }
                n += 1;
            };
            self.merge_prefix(dev, n, entries)?;
        }
        Ok(())
    }

    fn merge_prefix(
        &mut self,
        dev: &mut Device,
        n: usize,
        entries: Vec<GeckoEntry>,
    ) -> Result<(), FtlError> {
        self.stats.merges += 1;
        let inputs: Vec<SortedRun> = self.runs.drain(..n).collect();
        for run in &inputs {
            for p in &run.pages {
                dev.read(p.addr, Category::Lsm)?;
                self.stats.merge_reads += 1;
            }
        }
        let (_, compressed) = self.output_shape(&entries);
        let pages = self.write_pages(dev, &entries, compressed, Category::Lsm)?;
        self.stats.merge_writes += pages.len() as u64;
        for run in &inputs {
            for p in &run.pages {
                dev.retire(p.addr);
            }
        }
        if !pages.is_empty() {
            self.runs.insert(
                0,
                SortedRun {
                    level: self.level_for(pages.len()),
                    compressed,
                    pages,
                },
            );
        }
        Ok(())
    }

    fn locate(run: &SortedRun, block: u32) -> Option<PhysAddr> {
        let idx = run.pages.partition_point(|p| p.first_key <= block);
        (idx > 0).then(|| run.pages[idx - 1].addr)
    }

    fn lookup_run(
        dev: &mut Device,
        run: &SortedRun,
        block: u32,
        charge: bool,
    ) -> Result<(bool, Option<GeckoEntry>), FtlError> {
        let Some(addr) = Self::locate(run, block) else {
            return Ok((false, None));
        };
        let payload = if charge {
            dev.read(addr, Category::Lsm)?
        } else {
            dev.peek(addr)?
        };
        let Payload::Gecko { entries } = payload else {
            unreachable!("LGMD points at a non-gecko page")
        };
        let found = entries
            .binary_search_by_key(&block, |e| e.block)
            .ok()
            .map(|i| entries[i].clone());
        Ok((true, found))
    }

    fn search(
        &mut self,
        dev: &mut Device,
        block: u32,
        charge: bool,
    ) -> Result<(FixedBitSet, u32), FtlError> {
        let b = self.geometry.pages_per_block;
        let mut acc = self
            .buffer
            .get(&block)
            .cloned()
            .unwrap_or_else(|| GeckoEntry::blank(block, b));
        let mut reads = 0;
        for run in &self.runs {
            if acc.erase_flag {
                break;
            }
            let (read, found) = Self::lookup_run(dev, run, block, charge)?;
            reads += u32::from(read);
            if let Some(older) = found {
                acc = merge_entries(&acc, &older);
            }
        }
        Ok((acc.bitmap, reads))
    }

    /// Invalidity bitmap of `block`, charging one LSM read per run
    /// consulted. Returns the bitmap and the number of flash reads.
    pub fn query(&mut self, dev: &mut Device, block: u32) -> Result<(FixedBitSet, u32), FtlError> {
        let (bits, reads) = self.search(dev, block, true)?;
        self.stats.queries += 1;
        self.stats.query_reads += u64::from(reads);
        Ok((bits, reads))
    }

    /// Same answer as [`query`](Self::query) without touching counters.
    pub fn peek_query(&self, dev: &Device, block: u32) -> FixedBitSet {
        let b = self.geometry.pages_per_block;
        let mut acc = self
            .buffer
            .get(&block)
            .cloned()
            .unwrap_or_else(|| GeckoEntry::blank(block, b));
        for run in &self.runs {
            if acc.erase_flag {
                break;
            }
            if let Some(addr) = Self::locate(run, block) {
                let entries = Self::page_entries(dev, addr);
                if let Ok(i) = entries.binary_search_by_key(&block, |e| e.block) {
                    acc = merge_entries(&acc, &entries[i]);
                }
            }
        }
        acc.bitmap
    }

    /// Moves a still-referenced run page during garbage collection of a
    /// Gecko block. Unreferenced pages are ignored.
    pub fn relocate_page(&mut self, dev: &mut Device, addr: PhysAddr) -> Result<(), FtlError> {
        for run in &mut self.runs {
            if let Some(p) = run.pages.iter_mut().find(|p| p.addr == addr) {
                let payload = dev.read(addr, Category::GcMigration)?.clone();
                let new = dev
                    .append(BlockKind::Gecko, payload, Category::GcMigration)?
                    .addr;
                p.addr = new;
                dev.retire(addr);
                return Ok(());
            }
        }
        Ok(())
    }

    /// Checks the structural invariants; used by tests and verify mode.
    pub fn check_structure(&self, dev: &Device) -> Result<(), String> {
        let t = u64::from(self.config.size_ratio);
        let mut prev_level = 0;
        for (i, run) in self.runs.iter().enumerate() {
            let n = run.pages.len() as u64;
            let lo = t.pow(run.level - 1);
            let hi = t.pow(run.level) - 1;
            if n < lo || n > hi {
                return Err(format!(
                    "run {i} at level {} has {n} pages, outside [{lo}, {hi}]",
                    run.level
                ));
            }
            if run.level <= prev_level {
                return Err(format!("run {i} at level {} not below its newer neighbour", run.level));
            }
            prev_level = run.level;
            let mut last: Option<u32> = None;
            for p in &run.pages {
                if last.is_some_and(|k| k >= p.first_key) {
                    return Err(format!("run {i}: first keys not increasing"));
                }
                let entries = Self::page_entries(dev, p.addr);
                if entries.first().map(|e| e.block) != Some(p.first_key) {
                    return Err(format!("run {i}: LGMD first key disagrees with page"));
                }
                let bytes: u32 = entries
                    .iter()
                    .map(|e| self.codec.size(e, run.compressed))
                    .sum();
                if bytes > self.geometry.page_size {
                    return Err(format!("run {i}: page overflows ({bytes} bytes)"));
                }
                last = entries.last().map(|e| e.block);
            }
        }
        if self.runs.len() as u32 > self.l_max() {
            return Err(format!("{} runs exceed L_max {}", self.runs.len(), self.l_max()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn entry(block: u32, bits: &[usize], flag: bool, b: usize) -> GeckoEntry {
        let mut bitmap = FixedBitSet::with_capacity(b);
        for &i in bits {
            bitmap.insert(i);
        }
        GeckoEntry {
            block,
            bitmap,
            erase_flag: flag,
        }
    }

    fn ones(e: &GeckoEntry) -> Vec<usize> {
        e.bitmap.ones().collect()
    }

    #[test]
    fn merge_examples() {
        let m = merge_entries(&entry(1, &[2], true, 8), &entry(1, &[0, 1], false, 8));
        assert_eq!((ones(&m), m.erase_flag), (vec![2], true));
        let m = merge_entries(&entry(1, &[1], false, 8), &entry(1, &[3], false, 8));
        assert_eq!((ones(&m), m.erase_flag), (vec![1, 3], false));
        let older = entry(1, &[0, 5], true, 8);
        let m = merge_entries(&entry(1, &[], false, 8), &older);
        assert_eq!(m, older);
    }

    #[test]
    fn codec_sizes() {
        let g = Geometry::new(256, 128, 4096, 0.3, 4).unwrap();
        let c = EntryCodec::new(&g, 2);
        assert_eq!(c.raw_size(), 4 + 16 + 1);
        let e = entry(9, &[77], false, 128);
        assert_eq!(c.size(&e, true), 8);
        assert_eq!(c.size(&e, false), 21);
        assert_eq!(c.size(&entry(9, &[1, 2, 3], false, 128), true), 21);
    }

    #[test]
    fn codec_round_trips() {
        let g = Geometry::new(256, 64, 4096, 0.3, 4).unwrap();
        let c = EntryCodec::new(&g, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let n = rng.gen_range(0..5);
            let bits: Vec<usize> = (0..n).map(|_| rng.gen_range(0..64)).collect();
            let e = entry(rng.gen_range(0..256), &bits, rng.gen(), 64);
            for compress in [false, true] {
                let bytes = c.encode(&e, compress);
                assert_eq!(bytes.len() as u32, c.size(&e, compress));
                let (back, used) = c.decode(&bytes).unwrap();
                assert_eq!(back, e);
                assert_eq!(used, bytes.len());
            }
        }
    }

    fn desk_lsm(compression_levels: u32, policy: MergePolicy) -> (Device, GeckoLsm) {
        let g = Geometry::new(1024, 128, 1024, 0.3, 4).unwrap();
        let cfg = LsmConfig {
            compression_levels,
            merge_policy: policy,
            ..LsmConfig::default()
        };
        (Device::new(g), GeckoLsm::new(g, cfg))
    }

    #[test]
    fn single_invalidation_lands_in_buffer() {
        let (mut dev, mut lsm) = desk_lsm(2, MergePolicy::MultiWay);
        lsm.invalidate(&mut dev, PhysAddr::new(7, 3)).unwrap();
        lsm.invalidate(&mut dev, PhysAddr::new(7, 5)).unwrap();
        assert_eq!(lsm.buffer_len(), 1);
        assert_eq!(ones(lsm.buffered(7).unwrap()), vec![3, 5]);
        let (bits, reads) = lsm.query(&mut dev, 7).unwrap();
        assert_eq!(bits.ones().collect::<Vec<_>>(), vec![3, 5]);
        assert_eq!(reads, 0);
    }

    #[test]
    fn capacity_plus_one_distinct_blocks_flushes_once() {
        let (mut dev, mut lsm) = desk_lsm(0, MergePolicy::MultiWay);
        let cap = 1024 / lsm.codec().raw_size();
        for b in 0..=cap {
            lsm.invalidate(&mut dev, PhysAddr::new(b, 0)).unwrap();
        }
        assert_eq!(lsm.stats().flushes, 1);
        assert_eq!(dev.counters().writes(Category::Lsm), 1);
        assert_eq!(lsm.buffer_len(), 1);
    }

    #[test]
    fn rewrite_resets_buffered_bits() {
        let (mut dev, mut lsm) = desk_lsm(2, MergePolicy::MultiWay);
        lsm.invalidate(&mut dev, PhysAddr::new(4, 1)).unwrap();
        lsm.invalidate(&mut dev, PhysAddr::new(4, 4)).unwrap();
        lsm.block_rewritten(&mut dev, 4).unwrap();
        let e = lsm.buffered(4).unwrap();
        assert!(e.erase_flag && e.bitmap.is_clear());
        lsm.block_rewritten(&mut dev, 9).unwrap();
        assert!(lsm.query(&mut dev, 9).unwrap().0.is_clear());
    }

    #[test]
    fn t_flushes_promote_to_level_two() {
        let (mut dev, mut lsm) = desk_lsm(0, MergePolicy::Cascade);
        let cap = 1024 / lsm.codec().raw_size();
        // distinct keys in every flush so merges never shrink
        let mut block = 0;
        for flush in 1..=4 {
            for _ in 0..cap {
                lsm.invalidate(&mut dev, PhysAddr::new(block, 0)).unwrap();
                block += 1;
            }
            assert_eq!(lsm.stats().flushes, flush);
            if flush < 4 {
                assert_eq!(lsm.runs().len(), 1);
                assert_eq!(lsm.runs()[0].level, 1);
                assert_eq!(lsm.runs()[0].pages.len(), flush as usize);
            }
        }
        assert_eq!(lsm.runs().len(), 1);
        assert_eq!(lsm.runs()[0].level, 2);
        assert_eq!(lsm.runs()[0].pages.len(), 4);
        lsm.check_structure(&dev).unwrap();
    }

    fn fill_buffer(lsm: &mut GeckoLsm, dev: &mut Device, next: &mut u32) {
        while lsm.buffer_len() != 0 {
            lsm.invalidate(dev, PhysAddr::new(*next, 0)).unwrap();
            *next += 1;
        }
    }

    #[test]
    fn erase_flag_stops_query_early() {
        let (mut dev, mut lsm) = desk_lsm(0, MergePolicy::Cascade);
        let cap = 1024 / lsm.codec().raw_size();
        let mut next = 100;
        lsm.invalidate(&mut dev, PhysAddr::new(5, 1)).unwrap();
        fill_buffer(&mut lsm, &mut dev, &mut next);
        for _ in 0..cap * 5 {
            lsm.invalidate(&mut dev, PhysAddr::new(next, 0)).unwrap();
            next += 1;
        }
        lsm.block_rewritten(&mut dev, 5).unwrap();
        lsm.invalidate(&mut dev, PhysAddr::new(5, 2)).unwrap();
        fill_buffer(&mut lsm, &mut dev, &mut next);
        assert!(lsm.runs().len() >= 2);
        let (bits, reads) = lsm.query(&mut dev, 5).unwrap();
        assert_eq!(bits.ones().collect::<Vec<_>>(), vec![2]);
        assert_eq!(reads, 1);
    }

    /// Shadow flat bitmap fed the same events.
    fn fuzz(policy: MergePolicy, compression_levels: u32, seed: u64) -> (Device, GeckoLsm) {
        let (mut dev, mut lsm) = desk_lsm(compression_levels, policy);
        let mut shadow = vec![FixedBitSet::with_capacity(128); 1024];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for step in 0..20_000 {
            let block = rng.gen_range(0..1024);
            if rng.gen_bool(0.01) {
                lsm.block_rewritten(&mut dev, block).unwrap();
                shadow[block as usize].clear();
            } else {
                let off = rng.gen_range(0..128);
                lsm.invalidate(&mut dev, PhysAddr::new(block, off)).unwrap();
                shadow[block as usize].insert(off as usize);
            }
            if step % 97 == 0 {
                lsm.check_structure(&dev).unwrap();
                let probe = rng.gen_range(0..1024);
                let (bits, reads) = lsm.query(&mut dev, probe).unwrap();
                assert_eq!(bits, shadow[probe as usize], "block {probe} at step {step}");
                assert!(reads as usize <= lsm.runs().len());
            }
        }
        for block in 0..1024 {
            assert_eq!(lsm.peek_query(&dev, block), shadow[block as usize]);
        }
        (dev, lsm)
    }

    #[test]
    fn matches_flat_bitmap_multiway_compressed() {
        fuzz(MergePolicy::MultiWay, 2, 1);
    }

    #[test]
    fn matches_flat_bitmap_cascade_raw() {
        fuzz(MergePolicy::Cascade, 0, 2);
    }

    #[test]
    fn l_max_bounds_runs() {
        let (_, lsm) = desk_lsm(0, MergePolicy::MultiWay);
        // 1024 blocks * 21 bytes over 1004-byte usable pages -> 22 pages
        assert_eq!(lsm.l_max(), 3);
    }
}
