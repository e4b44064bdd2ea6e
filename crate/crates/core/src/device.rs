//! The NAND array plus the FTL's block-level bookkeeping: one write
//! frontier per block kind and exact validity for internal (metadata)
//! pages.

use std::sync::Arc;

use fixedbitset::FixedBitSet;

use crate::lsm::GeckoEntry;
use crate::nand::{BlockKind, Category, Geometry, Nand, NandError, PhysAddr};

/// What a flash page holds. Data pages carry only their logical tag, the
/// way the spare area would; metadata pages carry their full content so
/// reads return what was written.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Data { lba: u32 },
    /// Encoded physical addresses for one contiguous logical range.
    Translation { tpage: u32, entries: Arc<[u32]> },
    /// Logical address last written at each offset of `block`.
    Reverse { block: u32, lbas: Arc<[u32]> },
    /// One page of a sorted run of the validity LSM-tree.
    Gecko { entries: Arc<[GeckoEntry]> },
    /// One spilled page of the data block queue.
    Queue { ids: Arc<[u32]> },
}

/// Result of appending a page at a frontier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Appended {
    pub addr: PhysAddr,
    /// Set when this program filled the frontier block.
    pub filled: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Device {
    nand: Nand<Payload>,
    frontiers: [Option<u32>; 5],
    internal_valid: FixedBitSet,
    internal_live: Vec<u32>,
}

impl Device {
    pub fn new(geometry: Geometry) -> Self {
        let pages = geometry.physical_pages() as usize;
        Device {
            nand: Nand::new(geometry),
            frontiers: [None; 5],
            internal_valid: FixedBitSet::with_capacity(pages),
            internal_live: vec![0; geometry.blocks as usize],
        }
    }

    pub fn geometry(&self) -> &Geometry {
        self.nand.geometry()
    }

    pub fn nand(&self) -> &Nand<Payload> {
        &self.nand
    }

    pub fn counters(&self) -> &crate::nand::IoCounters {
        self.nand.counters()
    }

    pub fn free_count(&self) -> usize {
        self.nand.free_count()
    }

    pub fn kind(&self, block: u32) -> BlockKind {
        self.nand.block(block).kind()
    }

    pub fn is_frontier(&self, block: u32) -> bool {
        self.frontiers.contains(&Some(block))
    }

    pub fn frontier(&self, kind: BlockKind) -> Option<u32> {
        kind.frontier_slot().and_then(|s| self.frontiers[s])
    }

    /// Programs `payload` at the next free page of the `kind` frontier,
    /// opening a new block from the free pool when needed.
    pub fn append(
        &mut self,
        kind: BlockKind,
        payload: Payload,
        cat: Category,
    ) -> Result<Appended, NandError> {
        let slot = kind.frontier_slot().expect("writable kind");
        let block = match self.frontiers[slot] {
            Some(b) => b,
            None => {
                let b = self.nand.allocate_block(kind)?;
                self.frontiers[slot] = Some(b);
                b
            }
        };
        let addr = PhysAddr::new(block, self.nand.block(block).write_pointer());
        self.nand.program_page(addr, payload, cat)?;
        if kind.is_internal() {
            let idx = self.geometry().page_index(addr);
            self.internal_valid.insert(idx);
            self.internal_live[block as usize] += 1;
        }
        let filled = if self.nand.block(block).is_active() {
            None
        } else {
            self.frontiers[slot] = None;
            Some(block)
        };
        Ok(Appended { addr, filled })
    }

    pub fn read(&mut self, addr: PhysAddr, cat: Category) -> Result<&Payload, NandError> {
        self.nand.read_page(addr, cat)
    }

    pub fn peek(&self, addr: PhysAddr) -> Result<&Payload, NandError> {
        self.nand.peek_page(addr)
    }

    /// Marks an internal page as superseded.
    pub fn retire(&mut self, addr: PhysAddr) {
        let idx = self.geometry().page_index(addr);
        if self.internal_valid.contains(idx) {
            self.internal_valid.set(idx, false);
            self.internal_live[addr.block as usize] -= 1;
        }
    }

    pub fn internal_is_valid(&self, addr: PhysAddr) -> bool {
        self.internal_valid.contains(self.geometry().page_index(addr))
    }

    pub fn internal_live(&self, block: u32) -> u32 {
        self.internal_live[block as usize]
    }

    pub fn erase(&mut self, block: u32) -> Result<(), NandError> {
        self.nand.erase_block(block)?;
        let b = self.geometry().pages_per_block as usize;
        let start = block as usize * b;
        self.internal_valid.set_range(start..start + b, false);
        self.internal_live[block as usize] = 0;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frontier_rolls_over_and_reports_fill() {
        let g = Geometry::new(8, 4, 512, 0.25, 4).unwrap();
        let mut dev = Device::new(g);
        let mut filled = vec![];
        for lba in 0..6 {
            let a = dev
                .append(BlockKind::Data, Payload::Data { lba }, Category::User)
                .unwrap();
            filled.extend(a.filled);
        }
        assert_eq!(filled, vec![0]);
        assert_eq!(dev.frontier(BlockKind::Data), Some(1));
        assert_eq!(dev.free_count(), 6);
    }

    #[test]
    fn internal_validity_follows_retire_and_erase() {
        let g = Geometry::new(8, 4, 512, 0.25, 4).unwrap();
        let mut dev = Device::new(g);
        let mut addrs = vec![];
        for q in 0..4 {
            let ids: Arc<[u32]> = vec![q].into();
            addrs.push(
                dev.append(BlockKind::Queue, Payload::Queue { ids }, Category::Queue)
                    .unwrap()
                    .addr,
            );
        }
        let blk = addrs[0].block;
        assert_eq!(dev.internal_live(blk), 4);
        dev.retire(addrs[1]);
        dev.retire(addrs[1]);
        assert_eq!(dev.internal_live(blk), 3);
        assert!(!dev.internal_is_valid(addrs[1]));
        dev.erase(blk).unwrap();
        assert_eq!(dev.internal_live(blk), 0);
        assert!(!dev.internal_is_valid(addrs[0]));
    }
}
