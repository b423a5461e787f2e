//! The synchronizer: `broadcast` moves executed batches from rollups to the
//! coordinator, `sync` delivers sealed blocks back to each replica and
//! drives commitE then commitU. Delivery is modeled as reliable and
//! exactly-once; out-of-epoch delivery is rejected by the epoch-gap guard
//! rather than silently tolerated.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::coordinator::{Coordinator, CoordinatorError};
use crate::sigma20::Erc20State;
use crate::types::{CommitStatus, ExecutedTx, OrderedBlock, RollupId};
use crate::upsilon20::{Replica, UpsilonError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyncError {
    #[error("epoch_gap: replica {rollup} at epoch {replica_epoch} cannot apply block {block_epoch}")]
    EpochGap {
        rollup: RollupId,
        replica_epoch: u64,
        block_epoch: u64,
    },
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Commit(#[from] UpsilonError),
}

/// Forwards a rollup's epoch outbox to the coordinator, consuming it.
/// Rejected executions are never broadcast; any that reach the outbox are
/// filtered out with a warning.
pub fn broadcast(
    outbox: &mut Vec<ExecutedTx>,
    origin: RollupId,
    coordinator: &mut Coordinator,
) -> Result<(), SyncError> {
    let batch: Vec<ExecutedTx> = std::mem::take(outbox)
        .into_iter()
        .filter(|etx| {
            if !etx.is_ok() {
                log::warn!("dropping rejected transaction {} from broadcast", etx.tx.tx_id);
            }
            etx.is_ok()
        })
        .collect();
    coordinator.submit_batch(origin, batch)?;
    Ok(())
}

/// Delivers a sealed block to one replica: commits the ERC20 queue, then the
/// UAT20 queue (forwarding local slices to the co-located ERC20 state), then
/// advances the replica's epoch. Returns the concatenated commit statuses.
pub fn sync(
    block: &OrderedBlock,
    replica: &mut Replica,
    local_sigma: &mut Erc20State,
) -> Result<Vec<CommitStatus>, SyncError> {
    if replica.epoch + 1 != block.epoch {
        return Err(SyncError::EpochGap {
            rollup: replica.rollup,
            replica_epoch: replica.epoch,
            block_epoch: block.epoch,
        });
    }
    let mut statuses = replica.commit_e(&block.t_e)?;
    statuses.extend(replica.commit_u(&block.t_u, local_sigma)?);
    replica.epoch = block.epoch;
    Ok(statuses)
}

/// Trace line: `SYNC <epoch> -> R<id> [<tx_id>:<status>,...]`.
pub fn sync_trace_line(epoch: u64, rollup: RollupId, statuses: &[CommitStatus]) -> String {
    let list = statuses.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",");
    format!("SYNC {epoch} -> R{rollup} [{list}]")
}

/// Per-rollup delivery state for one epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Pending,
    Delivered(Vec<CommitStatus>),
}

/// Tracks which replicas have received an epoch's block and what they
/// reported. The epoch is complete only when every replica has delivered
/// identical status lists.
#[derive(Debug, Clone)]
pub struct SyncRecord {
    pub epoch: u64,
    deliveries: BTreeMap<RollupId, Delivery>,
}

impl SyncRecord {
    pub fn new(epoch: u64, n: u32) -> Self {
        SyncRecord {
            epoch,
            deliveries: RollupId::all(n).map(|id| (id, Delivery::Pending)).collect(),
        }
    }

    pub fn record(&mut self, rollup: RollupId, statuses: Vec<CommitStatus>) {
        self.deliveries.insert(rollup, Delivery::Delivered(statuses));
    }

    pub fn delivery(&self, rollup: RollupId) -> Option<&Delivery> {
        self.deliveries.get(&rollup)
    }

    /// All replicas delivered, with identical commit-status lists.
    pub fn is_complete(&self) -> bool {
        let mut lists = self.deliveries.values().map(|d| match d {
            Delivery::Pending => None,
            Delivery::Delivered(statuses) => Some(statuses),
        });
        match lists.next() {
            None => true,
            Some(None) => false,
            Some(Some(first)) => lists.all(|l| l == Some(first)),
        }
    }
}
