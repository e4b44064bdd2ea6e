//! Lazy Gecko building blocks: the RAM page-validity bitmap, the
//! flash-resident reverse map, victim-selection policies and the
//! false-positive resolution pass run on a victim before migration.

use std::collections::VecDeque;
use std::sync::Arc;

use fixedbitset::FixedBitSet;

use crate::device::{Device, Payload};
use crate::error::FtlError;
use crate::mapping::Dftl;
use crate::nand::{BlockKind, Category, Geometry, PhysAddr, UNMAPPED};

/// One bit per physical page; a set bit means the page is known invalid.
/// Clear bits may be false positives (stale pages not yet discovered).
#[derive(Debug, Clone)]
pub struct PageValidityBitmap {
    pages_per_block: u32,
    bits: FixedBitSet,
    invalid: Vec<u32>,
}

impl PageValidityBitmap {
    pub fn new(geometry: &Geometry) -> Self {
        PageValidityBitmap {
            pages_per_block: geometry.pages_per_block,
            bits: FixedBitSet::with_capacity(geometry.physical_pages() as usize),
            invalid: vec![0; geometry.blocks as usize],
        }
    }

    fn index(&self, pa: PhysAddr) -> usize {
        pa.block as usize * self.pages_per_block as usize + pa.offset as usize
    }

    /// Returns whether the bit changed.
    pub fn invalidate(&mut self, pa: PhysAddr) -> bool {
        let i = self.index(pa);
        if self.bits.put(i) {
            return false;
        }
        self.invalid[pa.block as usize] += 1;
        true
    }

    pub fn is_invalid(&self, pa: PhysAddr) -> bool {
        self.bits.contains(self.index(pa))
    }

    /// Presumed-live pages of a full block.
    pub fn live_count(&self, block: u32) -> u32 {
        self.pages_per_block - self.invalid[block as usize]
    }

    pub fn block_bits(&self, block: u32) -> FixedBitSet {
        let b = self.pages_per_block as usize;
        let start = block as usize * b;
        let mut out = FixedBitSet::with_capacity(b);
        for i in 0..b {
            if self.bits.contains(start + i) {
                out.insert(i);
            }
        }
        out
    }

    pub fn reset_block(&mut self, block: u32) {
        let b = self.pages_per_block as usize;
        let start = block as usize * b;
        self.bits.set_range(start..start + b, false);
        self.invalid[block as usize] = 0;
    }

    pub fn as_bitset(&self) -> &FixedBitSet {
        &self.bits
    }
}

/// Reverse map: for each data block, a flash page listing the lba last
/// written at every offset, located through the RAM Reverse Mapping
/// Directory.
#[derive(Debug, Clone)]
pub struct ReverseMap {
    rmd: Vec<Option<PhysAddr>>,
}

impl ReverseMap {
    pub fn new(geometry: &Geometry) -> Self {
        ReverseMap {
            rmd: vec![None; geometry.blocks as usize],
        }
    }

    pub fn location(&self, block: u32) -> Option<PhysAddr> {
        self.rmd[block as usize]
    }

    /// Records the logical tags of a data block that just became full. The
    /// block's previous reverse page, if any, was dropped when it was
    /// erased, so this is a single write.
    pub fn record_block(&mut self, dev: &mut Device, block: u32) -> Result<(), FtlError> {
        let b = dev.geometry().pages_per_block;
        let lbas: Arc<[u32]> = (0..b)
            .map(|o| match dev.peek(PhysAddr::new(block, o)) {
                Ok(Payload::Data { lba }) => *lba,
                _ => UNMAPPED,
            })
            .collect();
        let addr = dev
            .append(
                BlockKind::Reverse,
                Payload::Reverse { block, lbas },
                Category::Reverse,
            )?
            .addr;
        if let Some(old) = self.rmd[block as usize].replace(addr) {
            dev.retire(old);
        }
        Ok(())
    }

    /// One reverse-category read.
    pub fn read(&self, dev: &mut Device, block: u32) -> Result<Arc<[u32]>, FtlError> {
        let addr = self.rmd[block as usize]
            .ok_or_else(|| FtlError::verification(None, format!("block {block} has no reverse page")))?;
        match dev.read(addr, Category::Reverse)? {
            Payload::Reverse { lbas, .. } => Ok(lbas.clone()),
            other => unreachable!("RMD points at {other:?}"),
        }
    }

    pub fn on_erase(&mut self, dev: &mut Device, block: u32) {
        if let Some(old) = self.rmd[block as usize].take() {
            dev.retire(old);
        }
    }

    pub fn relocate_page(&mut self, dev: &mut Device, addr: PhysAddr) -> Result<(), FtlError> {
        let block = match dev.peek(addr)? {
            Payload::Reverse { block, .. } => *block,
            other => unreachable!("reverse block holds {other:?}"),
        };
        if self.rmd[block as usize] == Some(addr) {
            let payload = dev.read(addr, Category::GcMigration)?.clone();
            let new = dev
                .append(BlockKind::Reverse, payload, Category::GcMigration)?
                .addr;
            self.rmd[block as usize] = Some(new);
            dev.retire(addr);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VictimPolicy {
    /// Fewest live pages among all reclaimable blocks.
    #[default]
    Greedy,
    /// Oldest filled data block.
    Lru,
    /// Greedy over the oldest `X` filled data blocks.
    WindowGreedy(u32),
}

impl VictimPolicy {
    pub const DEFAULT_WINDOW: u32 = 16;
}

/// Argmin of `live` over `blocks`; ties go to the lowest block id.
pub fn greedy_pick(blocks: impl IntoIterator<Item = u32>, live: impl Fn(u32) -> u32) -> Option<u32> {
    blocks.into_iter().min_by_key(|&b| (live(b), b))
}

/// Position in `queue` of the fewest-live block among the first `window`
/// entries; ties go to the older entry.
pub fn window_pick(queue: &VecDeque<u32>, window: u32, live: impl Fn(u32) -> u32) -> Option<usize> {
    queue
        .iter()
        .take(window.max(1) as usize)
        .enumerate()
        .min_by_key(|&(i, &b)| (live(b), i))
        .map(|(i, _)| i)
}

/// Runs the false-positive resolution pass over `victim` and returns its
/// live pages as `(offset, lba)`.
///
/// `invalid` holds the victim's known-invalid bits on entry and gains every
/// resolved false positive. A presumed-live page at offset `o` listing lba
/// `la` is stale exactly when `la` is cached with its synch flag clear and
/// the cache points elsewhere; such a page is the single unrecorded
/// before-image of `la`, so the entry becomes synchronized.
pub fn resolve_false_positives(
    dftl: &mut Dftl,
    victim: u32,
    reverse: &[u32],
    invalid: &mut FixedBitSet,
) -> (Vec<(u32, u32)>, u32) {
    let mut live = vec![];
    let mut resolved = 0;
    for (o, &la) in reverse.iter().enumerate() {
        if invalid.contains(o) || la == UNMAPPED {
            continue;
        }
        let here = PhysAddr::new(victim, o as u32);
        match dftl.cmt().get(la) {
            Some(e) if !e.synch && e.ppa != here => {
                invalid.insert(o);
                dftl.cmt_mut().set_synch(la, true);
                resolved += 1;
            }
            _ => live.push((o as u32, la)),
        }
    }
    (live, resolved)
}
