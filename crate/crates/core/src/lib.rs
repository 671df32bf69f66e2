//! Block-ledger simulator and max-min fair faucet contracts.
//!
//! The [`ledger`] module provides an instant-seal chain with metered
//! storage. Faucet contracts ([`cmf`], [`amf`], [`qmf`], [`smf`]) run on it
//! and are checked against the reference allocations in [`oracle`].

pub mod amf;
pub mod cmf;
pub mod faucet;
pub mod harness;
pub mod heap;
pub mod ledger;
pub mod oracle;
pub mod qmf;
pub mod report;
pub mod scenario;
pub mod smf;

pub use faucet::{Algorithm, ConfigError, Faucet};
pub use ledger::{Call, CostTable, Ledger, Receipt, TxKind, TxStatus};
