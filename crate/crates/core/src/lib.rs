pub mod accounting;
pub mod dbq;
pub mod device;
pub mod error;
pub mod ftl;
pub mod lazy;
pub mod lsm;
pub mod mapping;
pub mod nand;
pub mod oracle;
pub mod sim;
pub mod trace;

pub use error::FtlError;
pub use ftl::{Ftl, FtlConfig, Scheme};
pub use lazy::VictimPolicy;
pub use lsm::{LsmConfig, MergePolicy};
pub use nand::Geometry;
