//! The flash translation layer: user reads and writes, garbage collection
//! and the per-scheme validity bookkeeping.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use fixedbitset::FixedBitSet;

use crate::accounting::{simulator_fixed_bytes, MetadataScheme};
use crate::dbq::DataBlockQueue;
use crate::device::{Device, Payload};
use crate::error::FtlError;
use crate::lazy::{
    greedy_pick, resolve_false_positives, window_pick, PageValidityBitmap, ReverseMap,
    VictimPolicy,
};
use crate::lsm::{GeckoLsm, LsmConfig};
use crate::mapping::Dftl;
use crate::nand::{BlockKind, Category, Geometry, PhysAddr};
use crate::oracle::OracleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    /// Whole mapping and exact validity in RAM.
    Oracle,
    /// Every byte of the budget goes to the CMT; validity is exact and free.
    LazyIdeal,
    Lazy,
    Logarithmic,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::Oracle,
        Scheme::LazyIdeal,
        Scheme::Lazy,
        Scheme::Logarithmic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Oracle => "oracle",
            Scheme::LazyIdeal => "lazy_ideal",
            Scheme::Lazy => "lazy",
            Scheme::Logarithmic => "logarithmic",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown scheme `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtlConfig {
    pub geometry: Geometry,
    pub scheme: Scheme,
    pub victim_policy: VictimPolicy,
    /// RAM for mapping and GC metadata; `None` means the whole mapping fits.
    pub ram_budget: Option<u64>,
    /// RAM per cached mapping entry.
    pub entry_bytes: u32,
    pub lsm: LsmConfig,
    /// Collect while fewer than this many blocks are free (never below 4).
    pub gc_threshold: u32,
    pub batch_writeback: bool,
    pub lazy_hook: bool,
    /// Selection rounds a queued data block may lose before it is sent to
    /// the back of the queue.
    pub candidate_patience: u32,
    /// Check every collection against the shadow oracle.
    pub verify: bool,
}

impl FtlConfig {
    pub fn new(geometry: Geometry, scheme: Scheme) -> Self {
        FtlConfig {
            geometry,
            scheme,
            victim_policy: VictimPolicy::Greedy,
            ram_budget: None,
            entry_bytes: 8,
            lsm: LsmConfig::default(),
            gc_threshold: 5,
            batch_writeback: true,
            lazy_hook: true,
            candidate_patience: 3,
            verify: false,
        }
    }

    /// RAM the scheme needs before a single mapping entry can be cached.
    pub fn fixed_ram(&self) -> u64 {
        match self.scheme {
            Scheme::Oracle | Scheme::LazyIdeal => 0,
            Scheme::Lazy => simulator_fixed_bytes(MetadataScheme::Lazy, &self.geometry, &self.lsm),
            Scheme::Logarithmic => {
                simulator_fixed_bytes(MetadataScheme::Logarithmic, &self.geometry, &self.lsm)
            }
        }
    }

    pub fn cmt_capacity(&self) -> Result<usize, FtlError> {
        let lbas = self.geometry.logical_pages();
        let Some(budget) = self.ram_budget.filter(|_| self.scheme != Scheme::Oracle) else {
            return Ok(lbas as usize);
        };
        let fixed = self.fixed_ram();
        let entry = u64::from(self.entry_bytes.max(1));
        let entries = budget.saturating_sub(fixed) / entry;
        if entries == 0 {
            return Err(FtlError::InsufficientRam {
                required: fixed + entry,
                available: budget,
            });
        }
        Ok(entries.min(lbas) as usize)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FtlStats {
    pub user_writes: u64,
    pub user_reads: u64,
    pub data_fills: u64,
    pub data_gcs: u64,
    pub internal_gcs: u64,
    pub migrated_pages: u64,
    pub relocated_pages: u64,
    pub false_positives_resolved: u64,
    pub candidate_fetches: u64,
    pub candidate_requeues: u64,
}

/// One garbage-collection operation, recorded when logging is on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GcRecord {
    pub victim: u32,
    pub kind: BlockKind,
    pub live: u32,
    /// Fewest live pages among the internal blocks at selection time.
    pub internal_min_live: Option<u32>,
    pub reverse_reads: u64,
    pub reverse_writes: u64,
    /// LSM reads spent querying the victim's bitmap.
    pub lsm_reads: u64,
    pub runs_at_query: usize,
}

#[derive(Debug, Clone)]
struct Candidate {
    block: u32,
    invalid: FixedBitSet,
    losses: u32,
    lsm_reads: u64,
    runs_at_query: usize,
}

#[derive(Debug, Clone)]
enum Gc {
    Exact,
    Lazy {
        pvb: PageValidityBitmap,
        rmap: ReverseMap,
    },
    Log {
        lsm: GeckoLsm,
        dbq: DataBlockQueue,
        rmap: ReverseMap,
        candidate: Option<Candidate>,
        /// Flat bitmap fed the same events, kept in verify mode.
        shadow: Option<PageValidityBitmap>,
    },
}

#[derive(Debug, Clone)]
pub struct Ftl {
    config: FtlConfig,
    dev: Device,
    dftl: Dftl,
    oracle: OracleState,
    gc: Gc,
    fill_queue: VecDeque<u32>,
    outbox: Vec<PhysAddr>,
    stats: FtlStats,
    gc_log: Option<Vec<GcRecord>>,
}

impl Ftl {
    pub fn new(config: FtlConfig) -> Result<Self, FtlError> {
        let g = config.geometry;
        g.validate()?;
        let capacity = config.cmt_capacity()?;
        let dftl = Dftl::new(g, capacity)
            .with_batch_writeback(config.batch_writeback)
            .with_lazy_hook(config.lazy_hook);
        let gc = match config.scheme {
            Scheme::Oracle | Scheme::LazyIdeal => Gc::Exact,
            Scheme::Lazy => Gc::Lazy {
                pvb: PageValidityBitmap::new(&g),
                rmap: ReverseMap::new(&g),
            },
            Scheme::Logarithmic => Gc::Log {
                lsm: GeckoLsm::new(g, config.lsm),
                dbq: DataBlockQueue::new(g.page_size, g.addr_size),
                rmap: ReverseMap::new(&g),
                candidate: None,
                shadow: config.verify.then(|| PageValidityBitmap::new(&g)),
            },
        };
        Ok(Ftl {
            config,
            dev: Device::new(g),
            dftl,
            oracle: OracleState::new(g),
            gc,
            fill_queue: VecDeque::new(),
            outbox: Vec::new(),
            stats: FtlStats::default(),
            gc_log: None,
        })
    }

    pub fn config(&self) -> &FtlConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.dev
    }

    pub fn dftl(&self) -> &Dftl {
        &self.dftl
    }

    pub fn oracle(&self) -> &OracleState {
        &self.oracle
    }

    pub fn stats(&self) -> &FtlStats {
        &self.stats
    }

    pub fn lsm(&self) -> Option<&GeckoLsm> {
        match &self.gc {
            Gc::Log { lsm, .. } => Some(lsm),
            _ => None,
        }
    }

    pub fn dbq(&self) -> Option<&DataBlockQueue> {
        match &self.gc {
            Gc::Log { dbq, .. } => Some(dbq),
            _ => None,
        }
    }

    pub fn pvb(&self) -> Option<&PageValidityBitmap> {
        match &self.gc {
            Gc::Lazy { pvb, .. } => Some(pvb),
            _ => None,
        }
    }

    pub fn reverse_map(&self) -> Option<&ReverseMap> {
        match &self.gc {
            Gc::Lazy { rmap, .. } | Gc::Log { rmap, .. } => Some(rmap),
            Gc::Exact => None,
        }
    }

    pub fn logical_pages(&self) -> u32 {
        self.config.geometry.logical_pages() as u32
    }

    pub fn enable_gc_log(&mut self) {
        self.gc_log.get_or_insert_with(Vec::new);
    }

    pub fn gc_log(&self) -> &[GcRecord] {
        self.gc_log.as_deref().unwrap_or(&[])
    }

    fn check_lba(&self, lba: u32) -> Result<(), FtlError> {
        if lba >= self.logical_pages() {
            return Err(FtlError::LbaOutOfRange {
                lba: u64::from(lba),
                lbas: u64::from(self.logical_pages()),
            });
        }
        Ok(())
    }

    pub fn write(&mut self, lba: u32) -> Result<(), FtlError> {
        self.check_lba(lba)?;
        self.ensure_free()?;
        let ap = self
            .dev
            .append(BlockKind::Data, Payload::Data { lba }, Category::User)?;
        self.stats.user_writes += 1;
        self.oracle.write(lba, ap.addr);
        if let Some(b) = ap.filled {
            self.on_data_filled(b)?;
        }
        self.dftl
            .record_write(&mut self.dev, lba, ap.addr, &mut self.outbox)?;
        self.drain()
    }

    pub fn read(&mut self, lba: u32) -> Result<PhysAddr, FtlError> {
        self.check_lba(lba)?;
        self.ensure_free()?;
        let found = self.dftl.lookup(&mut self.dev, lba, &mut self.outbox);
        self.drain()?;
        let pa = found?;
        self.dev.read(pa, Category::User)?;
        self.stats.user_reads += 1;
        if self.config.verify && self.oracle.mapping(lba) != Some(pa) {
            return Err(FtlError::verification(
                Some(pa),
                format!("lba {lba} resolved to a stale page"),
            ));
        }
        Ok(pa)
    }

    fn drain(&mut self) -> Result<(), FtlError> {
        let mut outbox = std::mem::take(&mut self.outbox);
        let mut result = Ok(());
        for &pa in &outbox {
            result = self.invalidate(pa);
            if result.is_err() {
                break;
            }
        }
        outbox.clear();
        self.outbox = outbox;
        result
    }

    fn invalidate(&mut self, pa: PhysAddr) -> Result<(), FtlError> {
        if self.config.verify && self.oracle.is_valid(pa) {
            return Err(FtlError::verification(Some(pa), "live page reported invalid"));
        }
        match &mut self.gc {
            Gc::Exact => {}
            Gc::Lazy { pvb, .. } => {
                pvb.invalidate(pa);
            }
            Gc::Log {
                lsm,
                candidate,
                shadow,
                ..
            } => {
                lsm.invalidate(&mut self.dev, pa)?;
                if let Some(c) = candidate.as_mut().filter(|c| c.block == pa.block) {
                    c.invalid.insert(pa.offset as usize);
                }
                if let Some(s) = shadow {
                    s.invalidate(pa);
                }
            }
        }
        Ok(())
    }

    fn uses_fill_queue(&self) -> bool {
        !matches!(self.gc, Gc::Log { .. }) && self.config.victim_policy != VictimPolicy::Greedy
    }

    fn on_data_filled(&mut self, block: u32) -> Result<(), FtlError> {
        self.stats.data_fills += 1;
        if self.uses_fill_queue() {
            self.fill_queue.push_back(block);
        }
        match &mut self.gc {
            Gc::Exact => {}
            Gc::Lazy { rmap, .. } => rmap.record_block(&mut self.dev, block)?,
            Gc::Log { rmap, dbq, .. } => {
                rmap.record_block(&mut self.dev, block)?;
                dbq.push(&mut self.dev, block)?;
            }
        }
        Ok(())
    }

    fn threshold(&self) -> usize {
        self.config.gc_threshold.max(4) as usize
    }

    fn ensure_free(&mut self) -> Result<(), FtlError> {
        let limit = 4 * u64::from(self.config.geometry.blocks);
        let mut rounds = 0;
        while self.dev.free_count() < self.threshold() {
            rounds += 1;
            if rounds > limit {
                return Err(FtlError::NoProgress(rounds));
            }
            self.collect_once()?;
        }
        Ok(())
    }

    /// Runs one garbage-collection operation regardless of free space.
    pub fn collect_once(&mut self) -> Result<(), FtlError> {
        let (victim, internal_min) = self.select_victim()?;
        match self.dev.kind(victim) {
            BlockKind::Data => self.collect_data(victim, internal_min),
            kind => self.collect_internal(victim, kind, internal_min),
        }
    }

    fn is_full(&self, block: u32) -> bool {
        let b = self.dev.nand().block(block);
        b.kind() != BlockKind::Free && b.write_pointer() == self.config.geometry.pages_per_block
    }

    fn presumed_live(&self, block: u32) -> u32 {
        match (&self.gc, self.dev.kind(block)) {
            (_, k) if k.is_internal() => self.dev.internal_live(block),
            (Gc::Lazy { pvb, .. }, _) => pvb.live_count(block),
            _ => self.oracle.live_count(block),
        }
    }

    fn best_internal(&self) -> Option<(u32, u32)> {
        let blocks = (0..self.config.geometry.blocks)
            .filter(|&b| self.dev.kind(b).is_internal() && self.is_full(b));
        greedy_pick(blocks, |b| self.dev.internal_live(b)).map(|b| (b, self.dev.internal_live(b)))
    }

    fn select_victim(&mut self) -> Result<(u32, Option<u32>), FtlError> {
        let internal = self.best_internal();
        let internal_min = internal.map(|(_, l)| l);
        if matches!(self.gc, Gc::Log { .. }) {
            return self.select_log_victim(internal).map(|v| (v, internal_min));
        }
        let window = match self.config.victim_policy {
            VictimPolicy::Greedy => {
                let blocks = (0..self.config.geometry.blocks).filter(|&b| self.is_full(b));
                return greedy_pick(blocks, |b| self.presumed_live(b))
                    .map(|v| (v, internal_min))
                    .ok_or(FtlError::NoVictim);
            }
            VictimPolicy::Lru => 1,
            VictimPolicy::WindowGreedy(x) => x,
        };
        let data = window_pick(&self.fill_queue, window, |b| self.presumed_live(b));
        match (data, internal) {
            (Some(i), Some((_, il))) if self.presumed_live(self.fill_queue[i]) > il => {
                Ok((internal.unwrap().0, internal_min))
            }
            (Some(i), _) => Ok((self.fill_queue.remove(i).unwrap(), internal_min)),
            (None, Some((b, _))) => Ok((b, internal_min)),
            (None, None) => Err(FtlError::NoVictim),
        }
    }

    fn fetch_candidate(&mut self) -> Result<(), FtlError> {
        let Gc::Log {
            lsm, dbq, candidate, ..
        } = &mut self.gc
        else {
            unreachable!()
        };
        if candidate.is_some() || dbq.is_empty() {
            return Ok(());
        }
        let block = dbq.pop(&mut self.dev)?;
        let runs_at_query = lsm.runs().len();
        let (invalid, reads) = lsm.query(&mut self.dev, block)?;
        *candidate = Some(Candidate {
            block,
            invalid,
            losses: 0,
            lsm_reads: u64::from(reads),
            runs_at_query,
        });
        self.stats.candidate_fetches += 1;
        Ok(())
    }

    fn select_log_victim(&mut self, internal: Option<(u32, u32)>) -> Result<u32, FtlError> {
        self.fetch_candidate()?;
        let b = self.config.geometry.pages_per_block;
        let patience = self.config.candidate_patience.max(1);
        let Gc::Log { dbq, candidate, .. } = &mut self.gc else {
            unreachable!()
        };
        let cand_live = candidate
            .as_ref()
            .map(|c| b - c.invalid.count_ones(..) as u32);
        match (cand_live, internal) {
            (Some(cl), Some((ib, il))) if cl > il => {
                let c = candidate.as_mut().unwrap();
                c.losses += 1;
                if c.losses >= patience {
                    let block = c.block;
                    *candidate = None;
                    dbq.push(&mut self.dev, block)?;
                    self.stats.candidate_requeues += 1;
                }
                Ok(ib)
            }
            (Some(_), _) => Ok(candidate.as_ref().unwrap().block),
            (None, Some((ib, _))) => Ok(ib),
            (None, None) => Err(FtlError::NoVictim),
        }
    }

    fn collect_internal(
        &mut self,
        victim: u32,
        kind: BlockKind,
        internal_min: Option<u32>,
    ) -> Result<(), FtlError> {
        let live = self.dev.internal_live(victim);
        for o in 0..self.config.geometry.pages_per_block {
            let pa = PhysAddr::new(victim, o);
            if !self.dev.internal_is_valid(pa) {
                continue;
            }
            self.stats.relocated_pages += 1;
            match (kind, &mut self.gc) {
                (BlockKind::Translation, _) => {
                    self.dftl
                        .relocate_tpage(&mut self.dev, pa, &mut self.outbox)?;
                }
                (BlockKind::Reverse, Gc::Lazy { rmap, .. } | Gc::Log { rmap, .. }) => {
                    rmap.relocate_page(&mut self.dev, pa)?
                }
                (BlockKind::Gecko, Gc::Log { lsm, .. }) => lsm.relocate_page(&mut self.dev, pa)?,
                (BlockKind::Queue, Gc::Log { dbq, .. }) => dbq.relocate_page(&mut self.dev, pa)?,
                (k, _) => unreachable!("no owner for a {k:?} block"),
            }
            if self.dev.internal_is_valid(pa) {
                return Err(FtlError::verification(Some(pa), "internal page left behind"));
            }
        }
        self.drain()?;
        self.dev.erase(victim)?;
        self.stats.internal_gcs += 1;
        if let Some(log) = &mut self.gc_log {
            log.push(GcRecord {
                victim,
                kind,
                live,
                internal_min_live: internal_min,
                reverse_reads: 0,
                reverse_writes: 0,
                lsm_reads: 0,
                runs_at_query: 0,
            });
        }
        Ok(())
    }

    /// Live pages of a data victim as `(offset, lba)`, plus the LSM reads
    /// and runs behind the bitmap used.
    fn identify_live(&mut self, victim: u32) -> Result<(Vec<(u32, u32)>, u64, usize), FtlError> {
        let verify = self.config.verify;
        match &mut self.gc {
            Gc::Exact => Ok((self.oracle.live_set(victim), 0, 0)),
            Gc::Lazy { pvb, rmap } => {
                if verify && !pvb.as_bitset().is_disjoint(self.oracle.valid_pages()) {
                    return Err(FtlError::verification(None, "bitmap marks a live page invalid"));
                }
                let mut invalid = pvb.block_bits(victim);
                let reverse = rmap.read(&mut self.dev, victim)?;
                let (live, resolved) =
                    resolve_false_positives(&mut self.dftl, victim, &reverse, &mut invalid);
                self.stats.false_positives_resolved += u64::from(resolved);
                for o in invalid.ones() {
                    pvb.invalidate(PhysAddr::new(victim, o as u32));
                }
                Ok((live, 0, 0))
            }
            Gc::Log {
                lsm,
                rmap,
                candidate,
                shadow,
                ..
            } => {
                let c = candidate
                    .take()
                    .filter(|c| c.block == victim)
                    .expect("data victims come from the candidate slot");
                if let Some(s) = shadow {
                    if !s.as_bitset().is_disjoint(self.oracle.valid_pages()) {
                        return Err(FtlError::verification(None, "tree marks a live page invalid"));
                    }
                    if c.invalid != s.block_bits(victim) || lsm.peek_query(&self.dev, victim) != c.invalid {
                        return Err(FtlError::verification(
                            None,
                            format!("tree bitmap of block {victim} diverged from the flat bitmap"),
                        ));
                    }
                }
                let mut invalid = c.invalid;
                let reverse = rmap.read(&mut self.dev, victim)?;
                let (live, resolved) =
                    resolve_false_positives(&mut self.dftl, victim, &reverse, &mut invalid);
                self.stats.false_positives_resolved += u64::from(resolved);
                Ok((live, c.lsm_reads, c.runs_at_query))
            }
        }
    }

    fn collect_data(&mut self, victim: u32, internal_min: Option<u32>) -> Result<(), FtlError> {
        let rev_before = (
            self.dev.counters().reads(Category::Reverse),
            self.dev.counters().writes(Category::Reverse),
        );
        let (live, lsm_reads, runs_at_query) = self.identify_live(victim)?;
        if self.config.verify {
            let expect = self.oracle.live_set(victim);
            if live != expect {
                return Err(FtlError::verification(
                    Some(PhysAddr::new(victim, 0)),
                    format!("live set {live:?} differs from oracle {expect:?}"),
                ));
            }
        }
        let rev_reads = self.dev.counters().reads(Category::Reverse) - rev_before.0;
        let mut moves = Vec::with_capacity(live.len());
        for &(o, lba) in &live {
            let old = PhysAddr::new(victim, o);
            self.dev.read(old, Category::GcMigration)?;
            let ap = self
                .dev
                .append(BlockKind::Data, Payload::Data { lba }, Category::GcMigration)?;
            self.oracle.write(lba, ap.addr);
            if let Some(b) = ap.filled {
                self.on_data_filled(b)?;
            }
            moves.push((lba, old, ap.addr));
        }
        self.dftl
            .apply_migrations(&mut self.dev, &moves, &mut self.outbox)?;
        self.drain()?;
        let rev_writes = self.dev.counters().writes(Category::Reverse) - rev_before.1;

        self.dev.erase(victim)?;
        self.oracle.erase(victim);
        match &mut self.gc {
            Gc::Exact => {}
            Gc::Lazy { pvb, rmap } => {
                pvb.reset_block(victim);
                rmap.on_erase(&mut self.dev, victim);
            }
            Gc::Log {
                lsm, rmap, shadow, ..
            } => {
                rmap.on_erase(&mut self.dev, victim);
                lsm.block_rewritten(&mut self.dev, victim)?;
                if let Some(s) = shadow {
                    s.reset_block(victim);
                }
            }
        }
        if matches!(self.gc, Gc::Log { .. }) {
            self.fetch_candidate()?;
        }
        self.stats.data_gcs += 1;
        self.stats.migrated_pages += live.len() as u64;
        if let Some(log) = &mut self.gc_log {
            log.push(GcRecord {
                victim,
                kind: BlockKind::Data,
                live: live.len() as u32,
                internal_min_live: internal_min,
                reverse_reads: rev_reads,
                reverse_writes: rev_writes,
                lsm_reads,
                runs_at_query,
            });
        }
        Ok(())
    }

    /// Full consistency sweep; slow, meant for tests.
    pub fn check_invariants(&self) -> Result<(), FtlError> {
        let fail = |what: String| Err(FtlError::verification(None, what));
        if self.dftl.cmt().len() > self.dftl.cmt().capacity() {
            return fail("CMT over capacity".into());
        }
        for lba in 0..self.logical_pages() {
            if self.dftl.peek(&self.dev, lba) != self.oracle.mapping(lba) {
                return fail(format!("mapping of lba {lba} disagrees with the oracle"));
            }
        }
        let g = self.config.geometry;
        let flat = match &self.gc {
            Gc::Exact => None,
            Gc::Lazy { pvb, .. } => Some(pvb),
            Gc::Log { shadow, lsm, .. } => {
                if let Some(s) = shadow {
                    for block in 0..g.blocks {
                        if self.dev.kind(block) == BlockKind::Data
                            && lsm.peek_query(&self.dev, block) != s.block_bits(block)
                        {
                            return fail(format!("tree and flat bitmap differ on block {block}"));
                        }
                    }
                }
                lsm.check_structure(&self.dev).or_else(fail)?;
                shadow.as_ref()
            }
        };
        let Some(flat) = flat else {
            return Ok(());
        };
        if !flat.as_bitset().is_disjoint(self.oracle.valid_pages()) {
            return fail("bitmap marks a live page invalid".into());
        }
        // every false positive is owed to an unsynchronized cached entry
        for block in 0..g.blocks {
            if self.dev.kind(block) != BlockKind::Data {
                continue;
            }
            let written = self.dev.nand().block(block).write_pointer();
            for o in 0..written {
                let pa = PhysAddr::new(block, o);
                if self.oracle.is_valid(pa) || flat.is_invalid(pa) {
                    continue;
                }
                let Some(lba) = self.oracle.written_lba(pa) else {
                    continue;
                };
                match self.dftl.cmt().get(lba) {
                    Some(e) if !e.synch => {}
                    _ => return fail(format!("false positive at {pa} without an unsynced entry")),
                }
            }
        }
        Ok(())
    }
}
