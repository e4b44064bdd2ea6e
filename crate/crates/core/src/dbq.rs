//! FIFO of rewritten data blocks with a flash-resident middle.
//!
//! Pushes go to a RAM input buffer; when it holds a page worth of ids it is
//! written to a Queue block. Pops drain a RAM output buffer that is
//! refilled from the oldest spilled page, or straight from the input buffer
//! when nothing is spilled.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::device::{Device, Payload};
use crate::error::FtlError;
use crate::nand::{BlockKind, Category, PhysAddr};

#[derive(Debug, Clone)]
pub struct DataBlockQueue {
    per_page: usize,
    input: Vec<u32>,
    output: VecDeque<u32>,
    /// Queue Directory: spilled pages, oldest first.
    directory: VecDeque<PhysAddr>,
    spilled: usize,
}

impl DataBlockQueue {
    pub fn new(page_size: u32, addr_size: u32) -> Self {
        DataBlockQueue {
            per_page: (page_size / addr_size) as usize,
            input: Vec::new(),
            output: VecDeque::new(),
            directory: VecDeque::new(),
            spilled: 0,
        }
    }

    /// Block ids per spilled page.
    pub fn per_page(&self) -> usize {
        self.per_page
    }

    pub fn len(&self) -> usize {
        self.input.len() + self.output.len() + self.spilled
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn directory(&self) -> impl Iterator<Item = &PhysAddr> {
        self.directory.iter()
    }

    pub fn push(&mut self, dev: &mut Device, block: u32) -> Result<(), FtlError> {
        self.input.push(block);
        if self.input.len() == self.per_page {
            let ids: Arc<[u32]> = std::mem::take(&mut self.input).into();
            let addr = dev
                .append(BlockKind::Queue, Payload::Queue { ids }, Category::Queue)?
                .addr;
            self.directory.push_back(addr);
            self.spilled += self.per_page;
        }
        Ok(())
    }

    pub fn pop(&mut self, dev: &mut Device) -> Result<u32, FtlError> {
        if self.output.is_empty() {
            if let Some(addr) = self.directory.pop_front() {
                let Payload::Queue { ids } = dev.read(addr, Category::Queue)? else {
                    unreachable!("queue directory points at a non-queue page")
                };
                self.output.extend(ids.iter().copied());
                self.spilled -= ids.len();
                dev.retire(addr);
            } else {
                self.output.extend(self.input.drain(..));
            }
        }
        self.output.pop_front().ok_or(FtlError::EmptyQueue)
    }

    /// Garbage-collection move of a spilled page.
    pub fn relocate_page(&mut self, dev: &mut Device, addr: PhysAddr) -> Result<(), FtlError> {
        if let Some(slot) = self.directory.iter_mut().find(|a| **a == addr) {
            let payload = dev.read(addr, Category::GcMigration)?.clone();
            *slot = dev
                .append(BlockKind::Queue, payload, Category::GcMigration)?
                .addr;
            dev.retire(addr);
        }
        Ok(())
    }
}
