//! Raw NAND device model.
//!
//! Blocks are programmed strictly sequentially and must be erased as a
//! whole before any page can be programmed again. Every read, program and
//! erase is tallied in [`IoCounters`] under the caller-supplied category;
//! the simulator never models latency.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

/// Sentinel stored in dense `u32` address maps for "no address".
pub const UNMAPPED: u32 = u32::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("device needs at least 4 blocks, got {0}")]
    TooFewBlocks(u32),
    #[error("blocks need at least 2 pages, got {0}")]
    TooFewPages(u32),
    #[error("page size must be a power of two >= 512, got {0}")]
    BadPageSize(u32),
    #[error("over-provisioning must lie in [0, 1), got {0}")]
    BadOverProvisioning(f64),
    #[error("address size must be between 1 and 8 bytes and divide the page size, got {0}")]
    BadAddressSize(u32),
    #[error("device has {0} physical pages, more than a 32-bit page address can hold")]
    TooLarge(u64),
}

/// Device dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Number of erase blocks.
    pub blocks: u32,
    /// Pages per erase block.
    pub pages_per_block: u32,
    /// Page size in bytes.
    pub page_size: u32,
    /// Fraction of physical capacity hidden from the logical space.
    pub over_provisioning: f64,
    /// Size of a page or block address in bytes.
    pub addr_size: u32,
}

impl Geometry {
    pub fn new(
        blocks: u32,
        pages_per_block: u32,
        page_size: u32,
        over_provisioning: f64,
        addr_size: u32,
    ) -> Result<Self, GeometryError> {
        let g = Geometry {
            blocks,
            pages_per_block,
            page_size,
            over_provisioning,
            addr_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.blocks < 4 {
            return Err(GeometryError::TooFewBlocks(self.blocks));
        }
        if self.pages_per_block < 2 {
            return Err(GeometryError::TooFewPages(self.pages_per_block));
        }
        if self.page_size < 512 || !self.page_size.is_power_of_two() {
            return Err(GeometryError::BadPageSize(self.page_size));
        }
        if !(0.0..1.0).contains(&self.over_provisioning) {
            return Err(GeometryError::BadOverProvisioning(self.over_provisioning));
        }
        if self.addr_size == 0 || self.addr_size > 8 || !self.page_size.is_multiple_of(self.addr_size) {
            return Err(GeometryError::BadAddressSize(self.addr_size));
        }
        if self.physical_pages() >= u64::from(UNMAPPED) {
            return Err(GeometryError::TooLarge(self.physical_pages()));
        }
        Ok(())
    }

    /// Intel 525 series dimensions. The vendor part ships with 7% spare
    /// capacity; the RAM tables and the RAM sweep use 30%.
    pub fn intel_525(over_provisioning: f64) -> Self {
        Geometry {
            blocks: 1 << 16,
            pages_per_block: 128,
            page_size: 4096,
            over_provisioning,
            addr_size: 4,
        }
    }

    /// Micron P420m dimensions.
    pub fn micron_p420m(over_provisioning: f64) -> Self {
        Geometry {
            blocks: 1 << 18,
            pages_per_block: 512,
            page_size: 16 * 1024,
            over_provisioning,
            addr_size: 4,
        }
    }

    /// Small device used for tests and quick experiments. Small enough for
    /// exhaustive oracle checking, large enough that the validity LSM-tree
    /// grows three levels deep.
    pub fn desk() -> Self {
        Geometry {
            blocks: 1024,
            pages_per_block: 128,
            page_size: 1024,
            over_provisioning: 0.30,
            addr_size: 4,
        }
    }

    /// `K * B`.
    pub fn physical_pages(&self) -> u64 {
        u64::from(self.blocks) * u64::from(self.pages_per_block)
    }

    /// `floor(K * B * (1 - OP))`.
    pub fn logical_pages(&self) -> u64 {
        (self.physical_pages() as f64 * (1.0 - self.over_provisioning)).floor() as u64
    }

    /// Addresses that fit in one page (`P / a`).
    pub fn entries_per_page(&self) -> u32 {
        self.page_size / self.addr_size
    }

    /// Flash pages needed to hold the full logical-to-physical map.
    pub fn translation_pages(&self) -> u64 {
        self.logical_pages().div_ceil(u64::from(self.entries_per_page()))
    }

    /// Bytes needed for one block's page bitmap.
    pub fn bitmap_bytes(&self) -> u32 {
        self.pages_per_block.div_ceil(8)
    }

    pub fn page_index(&self, addr: PhysAddr) -> usize {
        addr.block as usize * self.pages_per_block as usize + addr.offset as usize
    }

    pub fn addr_of(&self, index: usize) -> PhysAddr {
        let b = self.pages_per_block as usize;
        PhysAddr::new((index / b) as u32, (index % b) as u32)
    }

    /// Dense `u32` form of an address, used by maps and flash payloads.
    pub fn encode(&self, addr: PhysAddr) -> u32 {
        self.page_index(addr) as u32
    }

    pub fn decode(&self, raw: u32) -> Option<PhysAddr> {
        (raw != UNMAPPED).then(|| self.addr_of(raw as usize))
    }

    pub fn contains(&self, addr: PhysAddr) -> bool {
        addr.block < self.blocks && addr.offset < self.pages_per_block
    }
}

/// A page location: block id plus offset within the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysAddr {
    pub block: u32,
    pub offset: u32,
}

impl PhysAddr {
    pub const fn new(block: u32, offset: u32) -> Self {
        PhysAddr { block, offset }
    }
}

impl fmt::Display for PhysAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.block, self.offset)
    }
}

/// What a block currently stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockKind {
    Free,
    Data,
    Translation,
    Reverse,
    Gecko,
    Queue,
}

impl BlockKind {
    /// Kinds that a write frontier can be opened for.
    pub const WRITABLE: [BlockKind; 5] = [
        BlockKind::Data,
        BlockKind::Translation,
        BlockKind::Reverse,
        BlockKind::Gecko,
        BlockKind::Queue,
    ];

    pub fn is_internal(self) -> bool {
        !matches!(self, BlockKind::Free | BlockKind::Data)
    }

    pub(crate) fn frontier_slot(self) -> Option<usize> {
        Self::WRITABLE.iter().position(|k| *k == self)
    }

    /// Category erases of this kind of block are charged to.
    pub fn erase_category(self) -> Category {
        match self {
            BlockKind::Free | BlockKind::Data => Category::GcMigration,
            BlockKind::Translation => Category::Translation,
            BlockKind::Reverse => Category::Reverse,
            BlockKind::Gecko => Category::Lsm,
            BlockKind::Queue => Category::Queue,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IoOp {
    Read,
    Write,
    Erase,
}

/// Why an IO was issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    User,
    Translation,
    Reverse,
    GcMigration,
    Lsm,
    Queue,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::User,
        Category::Translation,
        Category::Reverse,
        Category::GcMigration,
        Category::Lsm,
        Category::Queue,
    ];

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::User => "user",
            Category::Translation => "translation",
            Category::Reverse => "reverse",
            Category::GcMigration => "gc_migration",
            Category::Lsm => "lsm",
            Category::Queue => "queue",
        }
    }
}

/// Flash IO tallies keyed by operation and category.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IoCounters {
    counts: [[u64; 6]; 3],
}

impl IoCounters {
    fn op_slot(op: IoOp) -> usize {
        match op {
            IoOp::Read => 0,
            IoOp::Write => 1,
            IoOp::Erase => 2,
        }
    }

    pub fn record(&mut self, op: IoOp, cat: Category) {
        self.counts[Self::op_slot(op)][cat.slot()] += 1;
    }

    pub fn get(&self, op: IoOp, cat: Category) -> u64 {
        self.counts[Self::op_slot(op)][cat.slot()]
    }

    pub fn total(&self, op: IoOp) -> u64 {
        self.counts[Self::op_slot(op)].iter().sum()
    }

    pub fn reads(&self, cat: Category) -> u64 {
        self.get(IoOp::Read, cat)
    }

    pub fn writes(&self, cat: Category) -> u64 {
        self.get(IoOp::Write, cat)
    }

    /// Counts accumulated since `earlier` was taken.
    pub fn since(&self, earlier: &IoCounters) -> IoCounters {
        let mut out = IoCounters::default();
        for op in 0..3 {
            for cat in 0..6 {
                out.counts[op][cat] = self.counts[op][cat] - earlier.counts[op][cat];
            }
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NandError {
    #[error("address {0} is outside the device")]
    OutOfRange(PhysAddr),
    #[error("non-sequential program at {addr}: write pointer is at {expected}")]
    NonSequentialWrite { addr: PhysAddr, expected: u32 },
    #[error("program at {0} targets a block that is not allocated")]
    WriteToFreeBlock(PhysAddr),
    #[error("read of unprogrammed page {0}")]
    ReadUnwritten(PhysAddr),
    #[error("block {0} is an active write frontier")]
    EraseActiveBlock(u32),
    #[error("block {0} is already free")]
    EraseFreeBlock(u32),
    #[error("free block pool is empty")]
    OutOfFreeBlocks,
}

#[derive(Debug, Clone)]
pub struct FlashBlock<P> {
    write_pointer: u32,
    erase_count: u32,
    kind: BlockKind,
    active: bool,
    pages: Vec<Option<P>>,
}

impl<P> FlashBlock<P> {
    pub fn write_pointer(&self) -> u32 {
        self.write_pointer
    }

    pub fn erase_count(&self) -> u32 {
        self.erase_count
    }

    pub fn kind(&self) -> BlockKind {
        self.kind
    }

    /// True while the block is open for sequential programming.
    pub fn is_active(&self) -> bool {
        self.active
    }
}

/// The NAND array: `K` blocks of `B` pages carrying payloads of type `P`.
#[derive(Debug, Clone)]
pub struct Nand<P> {
    geometry: Geometry,
    blocks: Vec<FlashBlock<P>>,
    free: VecDeque<u32>,
    counters: IoCounters,
}

impl<P: Clone> Nand<P> {
    pub fn new(geometry: Geometry) -> Self {
        let b = geometry.pages_per_block as usize;
        let blocks = (0..geometry.blocks)
            .map(|_| FlashBlock {
                write_pointer: 0,
                erase_count: 0,
                kind: BlockKind::Free,
                active: false,
                pages: vec![None; b],
            })
            .collect();
        Nand {
            geometry,
            blocks,
            free: (0..geometry.blocks).collect(),
            counters: IoCounters::default(),
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn counters(&self) -> &IoCounters {
        &self.counters
    }

    pub fn block(&self, id: u32) -> &FlashBlock<P> {
        &self.blocks[id as usize]
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn is_free(&self, id: u32) -> bool {
        self.blocks[id as usize].kind == BlockKind::Free
    }

    /// Takes the oldest block from the free pool and opens it as a write
    /// frontier of `kind`.
    pub fn allocate_block(&mut self, kind: BlockKind) -> Result<u32, NandError> {
        debug_assert_ne!(kind, BlockKind::Free);
        let id = self.free.pop_front().ok_or(NandError::OutOfFreeBlocks)?;
        let blk = &mut self.blocks[id as usize];
        blk.kind = kind;
        blk.active = true;
        Ok(id)
    }

    pub fn program_page(
        &mut self,
        addr: PhysAddr,
        payload: P,
        cat: Category,
    ) -> Result<(), NandError> {
        if !self.geometry.contains(addr) {
            return Err(NandError::OutOfRange(addr));
        }
        let b = self.geometry.pages_per_block;
        let blk = &mut self.blocks[addr.block as usize];
        if blk.kind == BlockKind::Free {
            return Err(NandError::WriteToFreeBlock(addr));
        }
        if addr.offset != blk.write_pointer {
            return Err(NandError::NonSequentialWrite {
                addr,
                expected: blk.write_pointer,
            });
        }
        blk.pages[addr.offset as usize] = Some(payload);
        blk.write_pointer += 1;
        if blk.write_pointer == b {
            blk.active = false;
        }
        self.counters.record(IoOp::Write, cat);
        Ok(())
    }

    pub fn read_page(&mut self, addr: PhysAddr, cat: Category) -> Result<&P, NandError> {
        self.check_readable(addr)?;
        self.counters.record(IoOp::Read, cat);
        Ok(self.blocks[addr.block as usize].pages[addr.offset as usize]
            .as_ref()
            .expect("programmed page holds a payload"))
    }

    /// Reads a page without charging an IO. Only for verification code.
    pub fn peek_page(&self, addr: PhysAddr) -> Result<&P, NandError> {
        self.check_readable(addr)?;
        Ok(self.blocks[addr.block as usize].pages[addr.offset as usize]
            .as_ref()
            .expect("programmed page holds a payload"))
    }

    fn check_readable(&self, addr: PhysAddr) -> Result<(), NandError> {
        if !self.geometry.contains(addr) {
            return Err(NandError::OutOfRange(addr));
        }
        if addr.offset >= self.blocks[addr.block as usize].write_pointer {
            return Err(NandError::ReadUnwritten(addr));
        }
        Ok(())
    }

    /// Erases a block and returns it to the back of the free pool.
    pub fn erase_block(&mut self, id: u32) -> Result<(), NandError> {
        let blk = &mut self.blocks[id as usize];
        if blk.active {
            return Err(NandError::EraseActiveBlock(id));
        }
        if blk.kind == BlockKind::Free {
            return Err(NandError::EraseFreeBlock(id));
        }
        let cat = blk.kind.erase_category();
        blk.pages.iter_mut().for_each(|p| *p = None);
        blk.write_pointer = 0;
        blk.erase_count += 1;
        blk.kind = BlockKind::Free;
        self.free.push_back(id);
        self.counters.record(IoOp::Erase, cat);
        Ok(())
    }

    /// Closes an active block early so it can be erased.
    pub fn seal_block(&mut self, id: u32) {
        self.blocks[id as usize].active = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> Geometry {
        Geometry::new(8, 128, 4096, 0.3, 4).unwrap()
    }

    #[test]
    fn geometry_validation() {
        assert_eq!(
            Geometry::new(3, 8, 512, 0.1, 4),
            Err(GeometryError::TooFewBlocks(3))
        );
        assert_eq!(
            Geometry::new(8, 1, 512, 0.1, 4),
            Err(GeometryError::TooFewPages(1))
        );
        assert_eq!(
            Geometry::new(8, 8, 1000, 0.1, 4),
            Err(GeometryError::BadPageSize(1000))
        );
        assert_eq!(
            Geometry::new(8, 8, 256, 0.1, 4),
            Err(GeometryError::BadPageSize(256))
        );
        assert!(matches!(
            Geometry::new(8, 8, 512, 1.0, 4),
            Err(GeometryError::BadOverProvisioning(_))
        ));
        let g = Geometry::new(256, 64, 4096, 0.3, 4).unwrap();
        assert_eq!(g.physical_pages(), 16384);
        assert_eq!(g.logical_pages(), 11468);
        assert_eq!(g.entries_per_page(), 1024);
        assert_eq!(g.translation_pages(), 12);
    }

    #[test]
    fn address_encoding_round_trips() {
        let g = geom();
        for idx in [0usize, 1, 127, 128, 1023] {
            let a = g.addr_of(idx);
            assert_eq!(g.page_index(a), idx);
            assert_eq!(g.decode(g.encode(a)), Some(a));
        }
        assert_eq!(g.decode(UNMAPPED), None);
    }

    #[test]
    fn program_first_page_of_fresh_block() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        nand.program_page(PhysAddr::new(b, 0), 7, Category::User)
            .unwrap();
        assert_eq!(nand.block(b).write_pointer(), 1);
    }

    #[test]
    fn out_of_order_program_is_rejected() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        let err = nand
            .program_page(PhysAddr::new(b, 2), 7, Category::User)
            .unwrap_err();
        assert!(matches!(err, NandError::NonSequentialWrite { expected: 0, .. }));
    }

    #[test]
    fn program_into_unallocated_block_is_rejected() {
        let mut nand = Nand::<u32>::new(geom());
        let err = nand
            .program_page(PhysAddr::new(3, 0), 7, Category::User)
            .unwrap_err();
        assert_eq!(err, NandError::WriteToFreeBlock(PhysAddr::new(3, 0)));
    }

    #[test]
    fn filling_all_pages_closes_the_block() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        for o in 0..128 {
            nand.program_page(PhysAddr::new(b, o), o, Category::User)
                .unwrap();
        }
        assert_eq!(nand.block(b).write_pointer(), 128);
        assert!(!nand.block(b).is_active());
        assert!(nand
            .program_page(PhysAddr::new(b, 128), 0, Category::User)
            .is_err());
        assert_eq!(nand.counters().writes(Category::User), 128);
    }

    #[test]
    fn read_back_and_read_unwritten() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        for o in 0..3 {
            nand.program_page(PhysAddr::new(b, o), 100 + o, Category::User)
                .unwrap();
        }
        assert_eq!(
            *nand.read_page(PhysAddr::new(b, 1), Category::User).unwrap(),
            101
        );
        assert_eq!(
            nand.read_page(PhysAddr::new(b, 5), Category::User),
            Err(NandError::ReadUnwritten(PhysAddr::new(b, 5)))
        );
        assert_eq!(nand.counters().reads(Category::User), 1);
    }

    #[test]
    fn erase_resets_and_counts() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        for o in 0..128 {
            nand.program_page(PhysAddr::new(b, o), o, Category::User)
                .unwrap();
        }
        nand.erase_block(b).unwrap();
        assert_eq!(nand.block(b).write_pointer(), 0);
        assert_eq!(nand.block(b).erase_count(), 1);
        assert!(nand.is_free(b));
    }

    #[test]
    fn erase_then_reprogram() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        nand.seal_block(b);
        nand.erase_block(b).unwrap();
        // free pool is FIFO; drain until we get the same block back
        let again = loop {
            let id = nand.allocate_block(BlockKind::Data).unwrap();
            if id == b {
                break id;
            }
        };
        nand.program_page(PhysAddr::new(again, 0), 1, Category::User)
            .unwrap();
    }

    #[test]
    fn erase_of_active_block_is_rejected() {
        let mut nand = Nand::<u32>::new(geom());
        let b = nand.allocate_block(BlockKind::Data).unwrap();
        assert_eq!(nand.erase_block(b), Err(NandError::EraseActiveBlock(b)));
    }

    #[test]
    fn repeated_erases_count_up() {
        let mut nand = Nand::<u32>::new(Geometry::new(4, 2, 512, 0.0, 4).unwrap());
        let n = 25;
        let mut erased_zero = 0;
        for _ in 0..n * 4 {
            let b = nand.allocate_block(BlockKind::Data).unwrap();
            nand.seal_block(b);
            nand.erase_block(b).unwrap();
            if b == 0 {
                erased_zero += 1;
            }
        }
        assert_eq!(erased_zero, n);
        assert_eq!(nand.block(0).erase_count(), n);
    }

    #[test]
    fn allocation_drains_pool() {
        let mut nand = Nand::<u32>::new(geom());
        assert_eq!(nand.free_count(), 8);
        nand.allocate_block(BlockKind::Data).unwrap();
        assert_eq!(nand.free_count(), 7);
        for _ in 0..7 {
            nand.allocate_block(BlockKind::Translation).unwrap();
        }
        assert_eq!(nand.free_count(), 0);
        assert_eq!(
            nand.allocate_block(BlockKind::Data),
            Err(NandError::OutOfFreeBlocks)
        );
    }
}
