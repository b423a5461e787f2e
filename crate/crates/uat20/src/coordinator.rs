//! The base-layer coordinator: collects broadcast batches from every rollup,
//! seals each epoch, and emits the ordered block whose two queues every
//! replica commits.
//!
//! Ordering is the deterministic rule (origin ascending, seq ascending); any
//! replica-agreed total order satisfies the protocol, and this one is
//! reproducible without modeling L1 inclusion auctions.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::types::{ExecutedTx, OrderedBlock, RollupId, TxId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoordinatorError {
    #[error("duplicate_batch: rollup {0} already submitted in this epoch")]
    DuplicateBatch(RollupId),
    #[error("foreign_tx: batch from rollup {origin} contains {tx_id} with origin {found}")]
    ForeignTx {
        origin: RollupId,
        found: RollupId,
        tx_id: TxId,
    },
    #[error("unordered_batch: rollup {0} batch seq numbers are not strictly increasing")]
    UnorderedBatch(RollupId),
    #[error("incomplete_epoch: missing batches from rollups {0:?}")]
    IncompleteEpoch(Vec<u32>),
}

/// Collects one epoch's batches. A rollup submits at most one batch per
/// epoch; sealing waits for all of them.
#[derive(Debug, Clone)]
pub struct Coordinator {
    n: u32,
    epoch: u64,
    pending: BTreeMap<RollupId, Vec<ExecutedTx>>,
}

impl Coordinator {
    /// Epoch 0 is genesis; the coordinator starts collecting epoch 1.
    pub fn new(n: u32) -> Self {
        Coordinator { n, epoch: 1, pending: BTreeMap::new() }
    }

    /// The epoch currently being collected.
    pub fn current_epoch(&self) -> u64 {
        self.epoch
    }

    pub fn submit_batch(
        &mut self,
        origin: RollupId,
        batch: Vec<ExecutedTx>,
    ) -> Result<(), CoordinatorError> {
        if self.pending.contains_key(&origin) {
            return Err(CoordinatorError::DuplicateBatch(origin));
        }
        for etx in &batch {
            if etx.tx.origin() != origin {
                return Err(CoordinatorError::ForeignTx {
                    origin,
                    found: etx.tx.origin(),
                    tx_id: etx.tx.tx_id,
                });
            }
        }
        let ordered = batch.windows(2).all(|w| w[0].tx.seq() < w[1].tx.seq());
        if !ordered {
            return Err(CoordinatorError::UnorderedBatch(origin));
        }
        self.pending.insert(origin, batch);
        Ok(())
    }

    /// Seals the epoch: sorts all pending transactions by (origin, seq) into
    /// the total order, splits it into the ERC20 and UAT20 queues (each
    /// preserving relative order), advances the epoch and clears the buffer.
    /// Sealing is a pure function of the submitted batches.
    pub fn seal_epoch(&mut self) -> Result<OrderedBlock, CoordinatorError> {
        let missing: Vec<u32> = RollupId::all(self.n)
            .filter(|id| !self.pending.contains_key(id))
            .map(|id| id.get())
            .collect();
        if !missing.is_empty() {
            return Err(CoordinatorError::IncompleteEpoch(missing));
        }

        let mut total: Vec<ExecutedTx> =
            std::mem::take(&mut self.pending).into_values().flatten().collect();
        total.sort_by_key(|etx| etx.tx.order_key());

        let (t_e, t_u) = total.into_iter().partition(|etx| etx.tx.kind.is_erc20());
        let block = OrderedBlock { epoch: self.epoch, t_e, t_u };
        debug_assert!(block.validate().is_ok());
        self.epoch += 1;
        Ok(block)
    }

    /// Report line: `BLOCK <epoch> TE=<tx_id,...> TU=<tx_id,...>`.
    pub fn block_summary(block: &OrderedBlock) -> String {
        let ids = |queue: &[ExecutedTx]| -> String {
            if queue.is_empty() {
                "-".into()
            } else {
                queue.iter().map(|etx| etx.tx.tx_id.to_string()).collect::<Vec<_>>().join(",")
            }
        };
        format!("BLOCK {} TE={} TU={}", block.epoch, ids(&block.t_e), ids(&block.t_u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigma20::Erc20State;
    use crate::types::{Address, Amount};
    use crate::upsilon20::{BalanceBook, Replica};
    use std::collections::BTreeMap as Map;

    fn addr(last: u8) -> Address {
        let mut bytes = [0u8; 20];
        bytes[19] = last;
        Address::from_bytes(bytes)
    }

    fn r(id: u32) -> RollupId {
        RollupId::new(id)
    }

    fn erc20_tx(origin: u32, seq: u64, amount: Amount) -> ExecutedTx {
        let mut sigma = Erc20State::new(r(origin));
        sigma.balances.credit(&addr(0xc), amount).unwrap();
        sigma.execute_transfer(&addr(0xc), &addr(0xa), amount, 1, seq)
    }

    fn uat_tx(origin: u32, seq: u64, amount: Amount) -> ExecutedTx {
        let locals: Map<RollupId, crate::types::BalanceMap> =
            [(r(1), Default::default()), (r(2), Default::default())].into();
        let rep = Replica::new(r(origin), BalanceBook::from_locals(locals).unwrap(), Map::new());
        rep.execute_uat_transfer(&addr(0xc), &addr(0xa), amount, 1, seq)
    }

    #[test]
    fn seal_splits_queues_in_total_order() {
        // batches {X: [t1(E), t2(U)], Y: [t3(U)]} -> t_e=[t1], t_u=[t2, t3]
        let mut coord = Coordinator::new(2);
        let t1 = erc20_tx(1, 0, 10);
        let t2 = uat_tx(1, 1, 50);
        let t3 = uat_tx(2, 0, 90);
        coord.submit_batch(r(1), vec![t1.clone(), t2.clone()]).unwrap();
        coord.submit_batch(r(2), vec![t3.clone()]).unwrap();
        let block = coord.seal_epoch().unwrap();
        assert_eq!(block.epoch, 1);
        assert_eq!(block.t_e, vec![t1]);
        assert_eq!(block.t_u, vec![t2.clone(), t3.clone()]);
        assert_eq!(coord.current_epoch(), 2);

        // (origin, seq) rule: X's uat tx goes before Y's
        let mut coord = Coordinator::new(2);
        coord.submit_batch(r(2), vec![uat_tx(2, 0, 1)]).unwrap();
        coord.submit_batch(r(1), vec![uat_tx(1, 0, 2)]).unwrap();
        let block = coord.seal_epoch().unwrap();
        let origins: Vec<u32> = block.t_u.iter().map(|e| e.tx.origin().get()).collect();
        assert_eq!(origins, vec![1, 2]);
    }

    #[test]
    fn duplicate_batch_is_rejected() {
        let mut coord = Coordinator::new(2);
        coord.submit_batch(r(1), vec![]).unwrap();
        assert_eq!(
            coord.submit_batch(r(1), vec![]),
            Err(CoordinatorError::DuplicateBatch(r(1)))
        );
    }

    #[test]
    fn foreign_and_unordered_batches_are_rejected() {
        let mut coord = Coordinator::new(2);
        let foreign = uat_tx(2, 0, 5);
        assert!(matches!(
            coord.submit_batch(r(1), vec![foreign]),
            Err(CoordinatorError::ForeignTx { .. })
        ));
        let a = uat_tx(1, 1, 5);
        let b = uat_tx(1, 0, 5);
        assert_eq!(
            coord.submit_batch(r(1), vec![a, b]),
            Err(CoordinatorError::UnorderedBatch(r(1)))
        );
    }

    #[test]
    fn sealing_requires_all_rollups() {
        let mut coord = Coordinator::new(3);
        coord.submit_batch(r(2), vec![]).unwrap();
        assert_eq!(coord.seal_epoch(), Err(CoordinatorError::IncompleteEpoch(vec![1, 3])));
    }

    #[test]
    fn empty_epoch_seals_to_empty_block() {
        let mut coord = Coordinator::new(2);
        coord.submit_batch(r(1), vec![]).unwrap();
        coord.submit_batch(r(2), vec![]).unwrap();
        let block = coord.seal_epoch().unwrap();
        assert!(block.is_empty());
        assert_eq!(Coordinator::block_summary(&block), "BLOCK 1 TE=- TU=-");
    }

    #[test]
    fn queue_split_is_stable_under_resort() {
        // concatenating t_e and t_u and re-sorting by (origin, seq)
        // reproduces the sealed total order
        let mut coord = Coordinator::new(2);
        let batch_x = vec![erc20_tx(1, 0, 1), uat_tx(1, 1, 2), erc20_tx(1, 2, 3)];
        let batch_y = vec![uat_tx(2, 0, 4), erc20_tx(2, 1, 5)];
        coord.submit_batch(r(1), batch_x.clone()).unwrap();
        coord.submit_batch(r(2), batch_y.clone()).unwrap();
        let block = coord.seal_epoch().unwrap();

        let mut merged: Vec<ExecutedTx> =
            block.t_e.iter().chain(block.t_u.iter()).cloned().collect();
        merged.sort_by_key(|etx| etx.tx.order_key());
        let mut expected: Vec<ExecutedTx> =
            batch_x.into_iter().chain(batch_y).collect();
        expected.sort_by_key(|etx| etx.tx.order_key());
        assert_eq!(merged, expected);
    }

    #[test]
    fn sealing_is_pure() {
        let build = || {
            let mut coord = Coordinator::new(2);
            coord.submit_batch(r(1), vec![erc20_tx(1, 0, 7), uat_tx(1, 1, 9)]).unwrap();
            coord.submit_batch(r(2), vec![uat_tx(2, 0, 3)]).unwrap();
            coord.seal_epoch().unwrap()
        };
        assert_eq!(build(), build());
    }
}
