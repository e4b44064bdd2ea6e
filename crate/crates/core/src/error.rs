use thiserror::Error;

use crate::nand::{GeometryError, NandError, PhysAddr};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FtlError {
    #[error(transparent)]
    Nand(#[from] NandError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("logical page {0} has never been written")]
    UnmappedLba(u32),
    #[error("logical page {lba} is outside the logical space of {lbas} pages")]
    LbaOutOfRange { lba: u64, lbas: u64 },
    #[error("RAM budget of {available} bytes is below the {required} bytes of fixed structures")]
    InsufficientRam { required: u64, available: u64 },
    #[error("no block is eligible for garbage collection")]
    NoVictim,
    #[error("garbage collection made no progress after {0} operations")]
    NoProgress(u64),
    #[error("queue is empty")]
    EmptyQueue,
    #[error("verification failed at {addr:?}: {what}")]
    Verification { addr: Option<PhysAddr>, what: String },
}

impl FtlError {
    pub(crate) fn verification(addr: Option<PhysAddr>, what: impl Into<String>) -> Self {
        FtlError::Verification {
            addr,
            what: what.into(),
        }
    }
}
