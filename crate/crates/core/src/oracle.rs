//! Exact in-RAM mapping and validity.
//!
//! Drives the `oracle` and `lazy_ideal` schemes directly and shadows the
//! Gecko schemes in verification mode. It never issues IO.

use fixedbitset::FixedBitSet;

use crate::device::{Device, Payload};
use crate::nand::{Geometry, PhysAddr, UNMAPPED};

#[derive(Debug, Clone)]
pub struct OracleState {
    geometry: Geometry,
    l2p: Vec<u32>,
    p2l: Vec<u32>,
    valid: FixedBitSet,
    live: Vec<u32>,
}

impl OracleState {
    pub fn new(geometry: Geometry) -> Self {
        let pages = geometry.physical_pages() as usize;
        OracleState {
            geometry,
            l2p: vec![UNMAPPED; geometry.logical_pages() as usize],
            p2l: vec![UNMAPPED; pages],
            valid: FixedBitSet::with_capacity(pages),
            live: vec![0; geometry.blocks as usize],
        }
    }

    pub fn mapping(&self, lba: u32) -> Option<PhysAddr> {
        self.geometry.decode(self.l2p[lba as usize])
    }

    pub fn is_valid(&self, pa: PhysAddr) -> bool {
        self.valid.contains(self.geometry.page_index(pa))
    }

    pub fn live_count(&self, block: u32) -> u32 {
        self.live[block as usize]
    }

    pub fn valid_pages(&self) -> &FixedBitSet {
        &self.valid
    }

    /// Logical page last programmed at `pa`, valid or not.
    pub fn written_lba(&self, pa: PhysAddr) -> Option<u32> {
        let l = self.p2l[self.geometry.page_index(pa)];
        (l != UNMAPPED).then_some(l)
    }

    fn set_valid(&mut self, pa: PhysAddr, lba: u32) {
        let i = self.geometry.page_index(pa);
        self.p2l[i] = lba;
        self.valid.insert(i);
        self.live[pa.block as usize] += 1;
    }

    fn set_invalid(&mut self, pa: PhysAddr) {
        let i = self.geometry.page_index(pa);
        if self.valid.contains(i) {
            self.valid.set(i, false);
            self.live[pa.block as usize] -= 1;
        }
    }

    /// Maps `lba` to `pa`, returning the superseded location.
    pub fn write(&mut self, lba: u32, pa: PhysAddr) -> Option<PhysAddr> {
        let old = self.mapping(lba);
        if let Some(old) = old {
            self.set_invalid(old);
        }
        self.l2p[lba as usize] = self.geometry.encode(pa);
        self.set_valid(pa, lba);
        old
    }

    pub fn erase(&mut self, block: u32) {
        debug_assert_eq!(self.live[block as usize], 0, "erasing block {block} with live data");
        let b = self.geometry.pages_per_block;
        for o in 0..b {
            let i = self.geometry.page_index(PhysAddr::new(block, o));
            self.p2l[i] = UNMAPPED;
            self.valid.set(i, false);
        }
        self.live[block as usize] = 0;
    }

    /// Live pages of `block` as `(offset, lba)`, read off the validity
    /// bitmap.
    pub fn live_set(&self, block: u32) -> Vec<(u32, u32)> {
        let b = self.geometry.pages_per_block;
        (0..b)
            .map(|o| PhysAddr::new(block, o))
            .filter(|&pa| self.is_valid(pa))
            .map(|pa| (pa.offset, self.p2l[self.geometry.page_index(pa)]))
            .collect()
    }

    /// Same set found by scanning the whole logical-to-physical map.
    pub fn live_set_by_scan(&self, block: u32) -> Vec<(u32, u32)> {
        let mut out: Vec<(u32, u32)> = self
            .l2p
            .iter()
            .enumerate()
            .filter_map(|(lba, &raw)| {
                let pa = self.geometry.decode(raw)?;
                (pa.block == block).then_some((pa.offset, lba as u32))
            })
            .collect();
        out.sort_unstable();
        out
    }

    /// Same set found by reading each page's logical tag off flash and
    /// asking whether the map still points there.
    pub fn live_set_by_tags(&self, dev: &Device, block: u32) -> Vec<(u32, u32)> {
        let b = self.geometry.pages_per_block;
        (0..b)
            .filter_map(|o| {
                let pa = PhysAddr::new(block, o);
                match dev.peek(pa).ok()? {
                    Payload::Data { lba } if self.mapping(*lba) == Some(pa) => Some((o, *lba)),
                    _ => None,
                }
            })
            .collect()
    }
}
