//! UAT20: a replicated token ledger that unifies one user's ERC20 balances
//! across multiple rollups.
//!
//! Each rollup runs two token state machines: a local ERC20 instance
//! ([`sigma20`]) and a UAT20 replica ([`upsilon20`]) holding the replicated
//! balance book. Transactions execute locally and emit operation sets; the
//! [`synchronizer`] broadcasts them to the [`coordinator`], which seals each
//! epoch into an ordered block of two queues (ERC20 first, then UAT20).
//! Every replica commits the same block in the same arbitration order, so all
//! replicas converge to an identical state after every epoch.
//!
//! The [`harness`] drives whole scenarios through the
//! execute → broadcast → seal → sync pipeline and checks the protocol
//! invariants after every epoch; the [`analyzer`] implements the
//! liquidity-fragmentation statistics and the cross-rollup
//! liquidity-unification detector over transfer logs.

pub mod analyzer;
pub mod coordinator;
pub mod harness;
pub mod scenario;
pub mod sigma20;
pub mod synchronizer;
pub mod types;
pub mod upsilon20;
pub mod wire;

pub use types::{Address, Amount, RollupId};
