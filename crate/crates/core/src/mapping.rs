//! Flash-resident page mapping in the style of DFTL.
//!
//! The logical-to-physical map lives in translation pages on flash; the
//! Global Mapping Directory (GMD) records where each translation page is,
//! and the Cached Mapping Table (CMT) keeps recently used entries in RAM
//! with LRU replacement. Every translation page read runs the lazy-update
//! pass: cached entries whose synch flag is clear have their flash
//! before-image reported for invalidation, then get marked synchronized.
//!
//! Invalidations are never applied here. They are pushed onto an outbox
//! the caller drains into whichever validity tracker is active.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::device::{Device, Payload};
use crate::error::FtlError;
use crate::nand::{BlockKind, Category, Geometry, PhysAddr, UNMAPPED};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CmtEntry {
    pub ppa: PhysAddr,
    /// Newer than the flash translation entry.
    pub dirty: bool,
    /// Every before-image of this lba has been reported invalid.
    pub synch: bool,
}

const NIL: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct Slot {
    entry: Option<CmtEntry>,
    prev: u32,
    next: u32,
}

/// LRU cache of mapping entries, indexed densely by lba.
///
/// Recency is an intrusive doubly linked list threaded through the slot
/// array; ties cannot occur since every touch moves an entry to the head.
#[derive(Debug, Clone)]
pub struct Cmt {
    slots: Vec<Slot>,
    head: u32,
    tail: u32,
    len: usize,
    capacity: usize,
    entries_per_page: u32,
    dirty: Vec<u32>,
    unsynced: Vec<u32>,
}

impl Cmt {
    pub fn new(lbas: u32, entries_per_page: u32, capacity: usize) -> Self {
        let tpages = lbas.div_ceil(entries_per_page) as usize;
        Cmt {
            slots: vec![
                Slot {
                    entry: None,
                    prev: NIL,
                    next: NIL,
                };
                lbas as usize
            ],
            head: NIL,
            tail: NIL,
            len: 0,
            capacity,
            entries_per_page,
            dirty: vec![0; tpages],
            unsynced: vec![0; tpages],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.capacity
    }

    pub fn get(&self, lba: u32) -> Option<&CmtEntry> {
        self.slots.get(lba as usize).and_then(|s| s.entry.as_ref())
    }

    pub fn contains(&self, lba: u32) -> bool {
        self.get(lba).is_some()
    }

    fn tpage(&self, lba: u32) -> usize {
        (lba / self.entries_per_page) as usize
    }

    pub fn dirty_in_tpage(&self, tpage: u32) -> u32 {
        self.dirty[tpage as usize]
    }

    pub fn unsynced_in_tpage(&self, tpage: u32) -> u32 {
        self.unsynced[tpage as usize]
    }

    fn unlink(&mut self, lba: u32) {
        let (prev, next) = {
            let s = &self.slots[lba as usize];
            (s.prev, s.next)
        };
        if prev == NIL {
            self.head = next;
        } else {
            self.slots[prev as usize].next = next;
        }
        if next == NIL {
            self.tail = prev;
        } else {
            self.slots[next as usize].prev = prev;
        }
    }

    fn push_head(&mut self, lba: u32) {
        let old = self.head;
        {
            let s = &mut self.slots[lba as usize];
            s.prev = NIL;
            s.next = old;
        }
        if old == NIL {
            self.tail = lba;
        } else {
            self.slots[old as usize].prev = lba;
        }
        self.head = lba;
    }

    /// Inserts as most recently used. The caller makes room first.
    pub fn insert(&mut self, lba: u32, entry: CmtEntry) {
        assert!(!self.contains(lba), "lba {lba} already cached");
        assert!(!self.is_full(), "CMT over capacity");
        self.slots[lba as usize].entry = Some(entry);
        self.push_head(lba);
        self.len += 1;
        let t = self.tpage(lba);
        self.dirty[t] += u32::from(entry.dirty);
        self.unsynced[t] += u32::from(!entry.synch);
    }

    pub fn remove(&mut self, lba: u32) -> Option<CmtEntry> {
        let entry = self.slots[lba as usize].entry.take()?;
        self.unlink(lba);
        self.len -= 1;
        let t = self.tpage(lba);
        self.dirty[t] -= u32::from(entry.dirty);
        self.unsynced[t] -= u32::from(!entry.synch);
        Some(entry)
    }

    pub fn touch(&mut self, lba: u32) {
        if self.contains(lba) && self.head != lba {
            self.unlink(lba);
            self.push_head(lba);
        }
    }

    /// Least recently used lba.
    pub fn lru(&self) -> Option<u32> {
        (self.tail != NIL).then_some(self.tail)
    }

    fn update(&mut self, lba: u32, f: impl FnOnce(&mut CmtEntry)) {
        let t = self.tpage(lba);
        let e = self.slots[lba as usize]
            .entry
            .as_mut()
            .expect("entry is cached");
        let (d0, s0) = (e.dirty, e.synch);
        f(e);
        let (d1, s1) = (e.dirty, e.synch);
        self.dirty[t] = self.dirty[t] + u32::from(d1) - u32::from(d0);
        self.unsynced[t] = self.unsynced[t] + u32::from(!s1) - u32::from(!s0);
    }

    pub fn set_ppa(&mut self, lba: u32, ppa: PhysAddr) {
        self.update(lba, |e| e.ppa = ppa);
    }

    pub fn set_dirty(&mut self, lba: u32, dirty: bool) {
        self.update(lba, |e| e.dirty = dirty);
    }

    pub fn set_synch(&mut self, lba: u32, synch: bool) {
        self.update(lba, |e| e.synch = synch);
    }

    /// Cached lbas from most to least recently used.
    pub fn iter_mru(&self) -> impl Iterator<Item = u32> + '_ {
        let mut cur = self.head;
        std::iter::from_fn(move || {
            (cur != NIL).then(|| {
                let lba = cur;
                cur = self.slots[lba as usize].next;
                lba
            })
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DftlStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    pub dirty_evictions: u64,
    pub hook_fires: u64,
}

/// The mapping layer: GMD, CMT and the flash-resident translation pages.
#[derive(Debug, Clone)]
pub struct Dftl {
    geometry: Geometry,
    lbas: u32,
    cmt: Cmt,
    gmd: Vec<Option<PhysAddr>>,
    batch_writeback: bool,
    lazy_hook: bool,
    stats: DftlStats,
}

impl Dftl {
    pub fn new(geometry: Geometry, cmt_capacity: usize) -> Self {
        let lbas = geometry.logical_pages() as u32;
        let epp = geometry.entries_per_page();
        Dftl {
            geometry,
            lbas,
            cmt: Cmt::new(lbas, epp, cmt_capacity),
            gmd: vec![None; geometry.translation_pages() as usize],
            batch_writeback: true,
            lazy_hook: true,
            stats: DftlStats::default(),
        }
    }

    /// Write back every dirty cached entry of a translation page when one
    /// of them is evicted (on by default).
    pub fn with_batch_writeback(mut self, on: bool) -> Self {
        self.batch_writeback = on;
        self
    }

    /// Disabling the lazy-update pass is a diagnostic mode: false positives
    /// then survive until the victim's own resolution pass, or forever.
    pub fn with_lazy_hook(mut self, on: bool) -> Self {
        self.lazy_hook = on;
        self
    }

    pub fn cmt(&self) -> &Cmt {
        &self.cmt
    }

    pub fn cmt_mut(&mut self) -> &mut Cmt {
        &mut self.cmt
    }

    pub fn gmd(&self) -> &[Option<PhysAddr>] {
        &self.gmd
    }

    pub fn stats(&self) -> &DftlStats {
        &self.stats
    }

    fn epp(&self) -> u32 {
        self.geometry.entries_per_page()
    }

    pub fn tpage_of(&self, lba: u32) -> u32 {
        lba / self.epp()
    }

    fn check_lba(&self, lba: u32) -> Result<(), FtlError> {
        if lba >= self.lbas {
            return Err(FtlError::LbaOutOfRange {
                lba: u64::from(lba),
                lbas: u64::from(self.lbas),
            });
        }
        Ok(())
    }

    /// Lazy-update pass over a translation page that was just read.
    pub fn on_translation_page_read(
        &mut self,
        tpage: u32,
        entries: &[u32],
        outbox: &mut Vec<PhysAddr>,
    ) {
        self.stats.hook_fires += 1;
        if !self.lazy_hook || self.cmt.unsynced_in_tpage(tpage) == 0 {
            return;
        }
        let base = tpage * self.epp();
        for (i, &raw) in entries.iter().enumerate() {
            let lba = base + i as u32;
            match self.cmt.get(lba) {
                Some(e) if !e.synch => {
                    if let Some(pa) = self.geometry.decode(raw) {
                        outbox.push(pa);
                    }
                    self.cmt.set_synch(lba, true);
                }
                _ => {}
            }
        }
    }

    /// Reads translation page `tpage` (one IO if it exists on flash) and
    /// runs the lazy-update pass. A page never written back reads as all
    /// unmapped without touching flash.
    fn read_tpage(
        &mut self,
        dev: &mut Device,
        tpage: u32,
        cat: Category,
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<Arc<[u32]>, FtlError> {
        let entries: Arc<[u32]> = match self.gmd[tpage as usize] {
            Some(addr) => match dev.read(addr, cat)? {
                Payload::Translation { entries, .. } => entries.clone(),
                other => unreachable!("GMD points at {other:?}"),
            },
            None => vec![UNMAPPED; self.epp() as usize].into(),
        };
        self.on_translation_page_read(tpage, &entries, outbox);
        Ok(entries)
    }

    fn write_tpage(
        &mut self,
        dev: &mut Device,
        tpage: u32,
        entries: Vec<u32>,
        cat: Category,
    ) -> Result<(), FtlError> {
        let payload = Payload::Translation {
            tpage,
            entries: entries.into(),
        };
        let appended = dev.append(BlockKind::Translation, payload, cat)?;
        if let Some(old) = self.gmd[tpage as usize].replace(appended.addr) {
            dev.retire(old);
        }
        Ok(())
    }

    /// Resolves `lba` to its current physical page, loading the entry into
    /// the CMT on a miss.
    pub fn lookup(
        &mut self,
        dev: &mut Device,
        lba: u32,
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<PhysAddr, FtlError> {
        self.check_lba(lba)?;
        if let Some(e) = self.cmt.get(lba) {
            let ppa = e.ppa;
            self.stats.hits += 1;
            self.cmt.touch(lba);
            return Ok(ppa);
        }
        self.stats.misses += 1;
        let tpage = self.tpage_of(lba);
        if self.gmd[tpage as usize].is_none() {
            return Err(FtlError::UnmappedLba(lba));
        }
        let entries = self.read_tpage(dev, tpage, Category::Translation, outbox)?;
        let ppa = self
            .geometry
            .decode(entries[(lba % self.epp()) as usize])
            .ok_or(FtlError::UnmappedLba(lba))?;
        self.make_room(dev, outbox)?;
        self.cmt.insert(
            lba,
            CmtEntry {
                ppa,
                dirty: false,
                synch: true,
            },
        );
        Ok(ppa)
    }

    /// Mapping update for an application write whose data was just
    /// programmed at `new_ppa`. Reports the old location for invalidation
    /// when it is known.
    pub fn record_write(
        &mut self,
        dev: &mut Device,
        lba: u32,
        new_ppa: PhysAddr,
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<(), FtlError> {
        self.check_lba(lba)?;
        if let Some(e) = self.cmt.get(lba) {
            outbox.push(e.ppa);
            self.stats.hits += 1;
        } else {
            self.stats.misses += 1;
            self.make_room(dev, outbox)?;
            self.cmt.insert(
                lba,
                CmtEntry {
                    ppa: new_ppa,
                    dirty: true,
                    synch: false,
                },
            );
        }
        self.cmt.set_ppa(lba, new_ppa);
        self.cmt.set_dirty(lba, true);
        self.cmt.touch(lba);
        Ok(())
    }

    fn make_room(&mut self, dev: &mut Device, outbox: &mut Vec<PhysAddr>) -> Result<(), FtlError> {
        while self.cmt.is_full() {
            self.evict_lru(dev, outbox)?;
        }
        Ok(())
    }

    /// Evicts the least recently used entry. A dirty victim costs one
    /// read-modify-write of its translation page, which also cleans every
    /// other dirty entry of that page when batching is on.
    pub fn evict_lru(
        &mut self,
        dev: &mut Device,
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<(), FtlError> {
        let Some(lba) = self.cmt.lru() else {
            return Ok(());
        };
        self.stats.evictions += 1;
        let entry = *self.cmt.get(lba).expect("lru entry is cached");
        if entry.dirty {
            self.stats.dirty_evictions += 1;
            let tpage = self.tpage_of(lba);
            // the victim must still be cached while the hook runs so its
            // before-image gets resolved
            let entries = self.read_tpage(dev, tpage, Category::Translation, outbox)?;
            let mut updated = entries.to_vec();
            let base = tpage * self.epp();
            if self.batch_writeback && self.cmt.dirty_in_tpage(tpage) > 1 {
                for i in 0..updated.len() as u32 {
                    let other = base + i;
                    if other >= self.lbas {
                        break;
                    }
                    if let Some(e) = self.cmt.get(other).copied() {
                        if e.dirty {
                            updated[i as usize] = self.geometry.encode(e.ppa);
                            self.cmt.set_dirty(other, false);
                        }
                    }
                }
            } else {
                updated[(lba - base) as usize] = self.geometry.encode(entry.ppa);
            }
            self.write_tpage(dev, tpage, updated, Category::Translation)?;
        }
        self.cmt.remove(lba);
        Ok(())
    }

    /// Mapping updates after garbage collection moved live data pages.
    /// Each move is `(lba, old, new)`; a move is skipped when `old` is no
    /// longer the lba's current location. Uncached lbas are patched
    /// directly in flash, one read-modify-write per translation page.
    pub fn apply_migrations(
        &mut self,
        dev: &mut Device,
        moves: &[(u32, PhysAddr, PhysAddr)],
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<(), FtlError> {
        let mut uncached: BTreeMap<u32, Vec<(u32, PhysAddr, PhysAddr)>> = BTreeMap::new();
        for &(lba, old, new) in moves {
            match self.cmt.get(lba) {
                Some(e) => {
                    if e.ppa == old {
                        self.cmt.set_ppa(lba, new);
                        self.cmt.set_dirty(lba, true);
                    }
                }
                None => uncached
                    .entry(self.tpage_of(lba))
                    .or_default()
                    .push((lba, old, new)),
            }
        }
        for (tpage, group) in uncached {
            let entries = self.read_tpage(dev, tpage, Category::Translation, outbox)?;
            let mut updated = entries.to_vec();
            let base = tpage * self.epp();
            let mut changed = false;
            for (lba, old, new) in group {
                let slot = &mut updated[(lba - base) as usize];
                if *slot == self.geometry.encode(old) {
                    *slot = self.geometry.encode(new);
                    changed = true;
                }
            }
            if changed {
                self.write_tpage(dev, tpage, updated, Category::Translation)?;
            }
        }
        Ok(())
    }

    /// Garbage-collection move of the translation page stored at `old`.
    pub fn relocate_tpage(
        &mut self,
        dev: &mut Device,
        old: PhysAddr,
        outbox: &mut Vec<PhysAddr>,
    ) -> Result<PhysAddr, FtlError> {
        let (tpage, entries) = match dev.read(old, Category::GcMigration)? {
            Payload::Translation { tpage, entries } => (*tpage, entries.clone()),
            other => unreachable!("translation block holds {other:?}"),
        };
        debug_assert_eq!(self.gmd[tpage as usize], Some(old));
        self.on_translation_page_read(tpage, &entries, outbox);
        let appended = dev.append(
            BlockKind::Translation,
            Payload::Translation { tpage, entries },
            Category::GcMigration,
        )?;
        self.gmd[tpage as usize] = Some(appended.addr);
        dev.retire(old);
        Ok(appended.addr)
    }

    /// Current mapping for `lba` without charging IO or touching recency.
    pub fn peek(&self, dev: &Device, lba: u32) -> Option<PhysAddr> {
        if let Some(e) = self.cmt.get(lba) {
            return Some(e.ppa);
        }
        self.peek_flash(dev, lba)
    }

    /// What flash alone says about `lba`, ignoring the cache.
    pub fn peek_flash(&self, dev: &Device, lba: u32) -> Option<PhysAddr> {
        let addr = self.gmd[self.tpage_of(lba) as usize]?;
        match dev.peek(addr).ok()? {
            Payload::Translation { entries, .. } => {
                self.geometry.decode(entries[(lba % self.epp()) as usize])
            }
            _ => None,
        }
    }
}
