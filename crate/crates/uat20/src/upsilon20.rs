//! The UAT20 replica: one instance per rollup holding the replicated balance
//! book, execution-phase operation generation, and the commit-phase
//! `commitE`/`commitU` functions including deduction-policy resolution.
//!
//! Execution never mutates replica state. All mutation happens at commit, in
//! the arbitration order of the sealed block, which is what makes every
//! replica converge: same block, same order, same deterministic rules, same
//! resulting state.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::sigma20::Erc20State;
use crate::types::{
    Address, AllowanceMap, AllowanceMark, Amount, BalanceMap, BalanceSlot, CommitStatus,
    ExecReason, ExecutedTx, FailReason, OpKind, Operation, OperationSet, RollupId, Transaction,
    TxId, TxKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UpsilonError {
    /// Internal inconsistency between execution and commit. Never a normal
    /// conflict outcome; aborts the epoch.
    #[error("commit_desync on replica {rollup}: {detail}")]
    CommitDesync { rollup: RollupId, detail: String },
    #[error("invalid deduction policy for {owner}: priority must be a permutation of 1..={n}")]
    InvalidPolicy { owner: Address, n: u32 },
    #[error("rollup ids must be dense 1..=n, got {0} ids")]
    SparseRollups(usize),
}

/// The replicated state: global balances `B_u` plus one balance mirror
/// `B_e^i` per rollup. The defining equation `B_u[a] = Σ_i B_e^i[a]` holds at
/// every epoch boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceBook {
    b_u: BalanceMap,
    b_e: BTreeMap<RollupId, BalanceMap>,
    n: u32,
}

impl BalanceBook {
    /// Builds the book from per-rollup local balances, deriving the global
    /// map as the per-address sum so the aggregation invariant holds by
    /// construction.
    pub fn from_locals(locals: BTreeMap<RollupId, BalanceMap>) -> Result<Self, UpsilonError> {
        let n = locals.len() as u32;
        let dense = RollupId::all(n).all(|id| locals.contains_key(&id));
        if !dense {
            return Err(UpsilonError::SparseRollups(locals.len()));
        }
        let mut b_u = BalanceMap::new();
        for local in locals.values() {
            for (addr, amount) in local.iter() {
                b_u.credit(addr, amount).map_err(|e| UpsilonError::CommitDesync {
                    rollup: RollupId::new(0),
                    detail: format!("genesis aggregation overflow: {e}"),
                })?;
            }
        }
        Ok(BalanceBook { b_u, b_e: locals, n })
    }

    pub fn rollup_count(&self) -> u32 {
        self.n
    }

    pub fn global(&self, owner: &Address) -> Amount {
        self.b_u.get(owner)
    }

    pub fn local(&self, rollup: RollupId, owner: &Address) -> Amount {
        self.b_e.get(&rollup).map(|m| m.get(owner)).unwrap_or(0)
    }

    pub fn global_map(&self) -> &BalanceMap {
        &self.b_u
    }

    pub fn local_map(&self, rollup: RollupId) -> Option<&BalanceMap> {
        self.b_e.get(&rollup)
    }

    /// Checked total of all global balances.
    pub fn global_supply(&self) -> Result<Amount, UpsilonError> {
        self.b_u.total().map_err(|e| UpsilonError::CommitDesync {
            rollup: RollupId::new(0),
            detail: format!("global supply overflow: {e}"),
        })
    }

    /// Exact aggregation check: `B_u[a] = Σ_i B_e^i[a]` for every address on
    /// either side. Returns the first offending address.
    pub fn aggregation_violation(&self) -> Option<Address> {
        let mut addresses: Vec<&Address> = self.b_u.addresses().collect();
        for local in self.b_e.values() {
            addresses.extend(local.addresses());
        }
        addresses.sort();
        addresses.dedup();
        for addr in addresses {
            let mut sum: Amount = 0;
            for local in self.b_e.values() {
                sum = match sum.checked_add(local.get(addr)) {
                    Some(s) => s,
                    None => return Some(addr.clone()),
                };
            }
            if sum != self.b_u.get(addr) {
                return Some(addr.clone());
            }
        }
        None
    }
}

/// A user's replicated rollup-priority list, used at commit to split a
/// global debit into per-rollup debits. Must be a permutation of `1..=n` and
/// identical on every replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeductionPolicy {
    pub owner: Address,
    pub priority: Vec<RollupId>,
}

impl DeductionPolicy {
    pub fn new(owner: Address, priority: Vec<RollupId>, n: u32) -> Result<Self, UpsilonError> {
        let mut seen = vec![false; n as usize];
        let valid = priority.len() == n as usize
            && priority.iter().all(|id| {
                let idx = id.get();
                if idx < 1 || idx > n || seen[(idx - 1) as usize] {
                    false
                } else {
                    seen[(idx - 1) as usize] = true;
                    true
                }
            });
        if !valid {
            return Err(UpsilonError::InvalidPolicy { owner, n });
        }
        Ok(DeductionPolicy { owner, priority })
    }

    /// Default when a user configured nothing: ascending rollup id.
    pub fn default_for(owner: Address, n: u32) -> Self {
        DeductionPolicy { owner, priority: RollupId::all(n).collect() }
    }
}

/// Greedy waterfall over the policy's priority order: take
/// `min(remaining, B_e^i[owner])` from each rollup until the amount is
/// covered. Returns only the nonzero slices, in priority order; they sum to
/// `amount`. The caller has already checked `B_u[owner] >= amount`, which
/// makes the split feasible because `B_u` is the sum of the mirrors.
pub fn resolve_deduction(
    book: &BalanceBook,
    owner: &Address,
    amount: Amount,
    policy: &DeductionPolicy,
) -> Vec<(RollupId, Amount)> {
    let mut remaining = amount;
    let mut slices = Vec::new();
    for rollup in &policy.priority {
        if remaining == 0 {
            break;
        }
        let take = remaining.min(book.local(*rollup, owner));
        if take > 0 {
            slices.push((*rollup, take));
            remaining -= take;
        }
    }
    debug_assert_eq!(remaining, 0, "caller must check global balance first");
    slices
}

/// One rollup's UAT20 replica.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replica {
    pub rollup: RollupId,
    pub book: BalanceBook,
    pub uat_allowances: AllowanceMap,
    pub policies: BTreeMap<Address, DeductionPolicy>,
    /// Last committed epoch; genesis is epoch 0.
    pub epoch: u64,
}

impl Replica {
    pub fn new(
        rollup: RollupId,
        book: BalanceBook,
        policies: BTreeMap<Address, DeductionPolicy>,
    ) -> Self {
        Replica { rollup, book, uat_allowances: AllowanceMap::new(), policies, epoch: 0 }
    }

    /// The owner's configured policy, or the ascending-id default.
    pub fn policy_for(&self, owner: &Address) -> DeductionPolicy {
        self.policies
            .get(owner)
            .cloned()
            .unwrap_or_else(|| DeductionPolicy::default_for(owner.clone(), self.book.n))
    }

    fn tx_id(&self, epoch: u64, seq: u64) -> TxId {
        TxId::new(self.rollup, epoch, seq)
    }

    fn check_parties(parties: &[&Address]) -> Option<ExecReason> {
        parties
            .iter()
            .any(|p| !p.is_canonical())
            .then_some(ExecReason::InvalidAddress)
    }

    /// UAT20 `transfer`: metadata validation only. No balance is read or
    /// written and no sufficiency check runs here; the authoritative check
    /// happens in `commit_u` under arbitration order, so every replica
    /// reaches the same verdict.
    pub fn execute_uat_transfer(
        &self,
        sender: &Address,
        recipient: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Uat20Transfer,
            sender: sender.clone(),
            recipient: Some(recipient.clone()),
            spender: None,
            amount,
        };
        if let Some(reason) = Self::check_parties(&[sender, recipient]) {
            return ExecutedTx::rejected(tx, reason);
        }
        let ops = OperationSet {
            balance: vec![
                Operation::sub(BalanceSlot::Global(sender.clone()), amount),
                Operation::add(BalanceSlot::Global(recipient.clone()), amount),
            ],
            allowance: vec![],
        };
        ExecutedTx::ok(tx, ops)
    }

    /// UAT20 `transferFrom`: like a transfer with the owner as debit party;
    /// both the balance and allowance checks are deferred to commit. The
    /// operation set carries an allowance-decrement marker so the allowance
    /// change replicates through the same committed channel as balances.
    pub fn execute_uat_transfer_from(
        &self,
        spender: &Address,
        owner: &Address,
        recipient: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Uat20TransferFrom,
            sender: owner.clone(),
            recipient: Some(recipient.clone()),
            spender: Some(spender.clone()),
            amount,
        };
        if let Some(reason) = Self::check_parties(&[spender, owner, recipient]) {
            return ExecutedTx::rejected(tx, reason);
        }
        let ops = OperationSet {
            balance: vec![
                Operation::sub(BalanceSlot::Global(owner.clone()), amount),
                Operation::add(BalanceSlot::Global(recipient.clone()), amount),
            ],
            allowance: vec![AllowanceMark::Decrement {
                owner: owner.clone(),
                spender: spender.clone(),
                amount,
            }],
        };
        ExecutedTx::ok(tx, ops)
    }

    /// UAT20 `approve`: no state change at execution; the allowance-set
    /// marker is applied at commit on all replicas, in arbitration order, so
    /// concurrent approvals resolve identically everywhere.
    pub fn execute_uat_approve(
        &self,
        owner: &Address,
        spender: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Uat20Approve,
            sender: owner.clone(),
            recipient: None,
            spender: Some(spender.clone()),
            amount,
        };
        let ops = OperationSet {
            balance: vec![],
            allowance: vec![AllowanceMark::Set {
                owner: owner.clone(),
                spender: spender.clone(),
                amount,
            }],
        };
        ExecutedTx::ok(tx, ops)
    }

    /// Commits the ERC20 queue. ERC20 operations are conflict-free deltas:
    /// the queue is applied as one batch (credits first, then debits) on a
    /// working copy, so the resulting book is independent of queue order and
    /// an uncovered debit is detected against the whole batch. Local ERC20
    /// state is never touched here: the origin rollup already applied the
    /// transfer at execution, and other rollups' ERC20 instances are not
    /// involved at all.
    pub fn commit_e(&mut self, t_e: &[ExecutedTx]) -> Result<Vec<CommitStatus>, UpsilonError> {
        let mut work = self.book.clone();
        let apply = |work: &mut BalanceBook, op: &Operation| -> Result<(), UpsilonError> {
            let map = match &op.slot {
                BalanceSlot::Global(_) => &mut work.b_u,
                BalanceSlot::Local(rollup, _) => {
                    work.b_e.get_mut(rollup).ok_or_else(|| UpsilonError::CommitDesync {
                        rollup: self.rollup,
                        detail: format!("operation targets unknown rollup {rollup}"),
                    })?
                }
            };
            let owner = match &op.slot {
                BalanceSlot::Global(owner) | BalanceSlot::Local(_, owner) => owner,
            };
            let result = match op.kind {
                OpKind::Add => map.credit(owner, op.amount),
                OpKind::Sub => map.debit(owner, op.amount),
            };
            result.map_err(|e| UpsilonError::CommitDesync {
                rollup: self.rollup,
                detail: e.to_string(),
            })
        };

        for pass in [OpKind::Add, OpKind::Sub] {
            for etx in t_e {
                if !etx.tx.kind.is_erc20() {
                    return Err(UpsilonError::CommitDesync {
                        rollup: self.rollup,
                        detail: format!("non-ERC20 transaction {} in T_E", etx.tx.tx_id),
                    });
                }
                for op in etx.ops.balance.iter().filter(|op| op.kind == pass) {
                    apply(&mut work, op)?;
                }
            }
        }

        self.book = work;
        Ok(t_e.iter().map(|etx| CommitStatus::committed(etx.tx.tx_id)).collect())
    }

    /// Commits the UAT20 queue in arbitration order, forwarding this
    /// rollup's slice of every committed transfer to the co-located ERC20
    /// state. A failed transaction consumes nothing and leaves no residue.
    pub fn commit_u(
        &mut self,
        t_u: &[ExecutedTx],
        local_sigma: &mut Erc20State,
    ) -> Result<Vec<CommitStatus>, UpsilonError> {
        if local_sigma.rollup != self.rollup {
            return Err(UpsilonError::CommitDesync {
                rollup: self.rollup,
                detail: format!("co-located sigma has rollup {}", local_sigma.rollup),
            });
        }
        let mut statuses = Vec::with_capacity(t_u.len());
        for etx in t_u {
            let status = match etx.tx.kind {
                TxKind::Uat20Transfer | TxKind::Uat20TransferFrom => {
                    self.commit_uat_transfer(etx, local_sigma)?
                }
                TxKind::Uat20Approve => {
                    self.apply_allowance_marks(etx)?;
                    CommitStatus::committed(etx.tx.tx_id)
                }
                kind => {
                    return Err(UpsilonError::CommitDesync {
                        rollup: self.rollup,
                        detail: format!("{kind} transaction {} in T_U", etx.tx.tx_id),
                    })
                }
            };
            statuses.push(status);
        }
        Ok(statuses)
    }

    fn commit_uat_transfer(
        &mut self,
        etx: &ExecutedTx,
        local_sigma: &mut Erc20State,
    ) -> Result<CommitStatus, UpsilonError> {
        let tx = &etx.tx;
        let owner = &tx.sender;
        let recipient = tx.recipient.as_ref().ok_or_else(|| UpsilonError::CommitDesync {
            rollup: self.rollup,
            detail: format!("transfer {} has no recipient", tx.tx_id),
        })?;

        // Conflict checks, in queue order: balance first, then allowance.
        if self.book.global(owner) < tx.amount {
            return Ok(CommitStatus::failed(tx.tx_id, FailReason::InsufficientBalance));
        }
        if tx.kind == TxKind::Uat20TransferFrom {
            let spender = tx.spender.as_ref().ok_or_else(|| UpsilonError::CommitDesync {
                rollup: self.rollup,
                detail: format!("transferFrom {} has no spender", tx.tx_id),
            })?;
            if self.uat_allowances.get(owner, spender) < tx.amount {
                return Ok(CommitStatus::failed(tx.tx_id, FailReason::InsufficientAllowance));
            }
        }

        let policy = self.policy_for(owner);
        let slices = resolve_deduction(&self.book, owner, tx.amount, &policy);
        let total: Amount = slices.iter().map(|(_, s)| s).sum();
        if total != tx.amount {
            return Err(UpsilonError::CommitDesync {
                rollup: self.rollup,
                detail: format!(
                    "deduction split covers {total} of {} for {}",
                    tx.amount, tx.tx_id
                ),
            });
        }

        let host = self.rollup;
        let desync = move |detail: String| UpsilonError::CommitDesync { rollup: host, detail };

        // Debit the owner's mirrors along the split, credit the recipient's
        // mirrors with the same split, then move the global balance.
        for (rollup, slice) in &slices {
            let mirror = self.book.b_e.get_mut(rollup).expect("split uses known rollups");
            mirror.debit(owner, *slice).map_err(|e| desync(e.to_string()))?;
        }
        for (rollup, slice) in &slices {
            let mirror = self.book.b_e.get_mut(rollup).expect("split uses known rollups");
            mirror.credit(recipient, *slice).map_err(|e| desync(e.to_string()))?;
        }
        self.book.b_u.debit(owner, tx.amount).map_err(|e| desync(e.to_string()))?;
        self.book.b_u.credit(recipient, tx.amount).map_err(|e| desync(e.to_string()))?;

        self.apply_allowance_marks(etx)?;

        // Forward this rollup's slice to the co-located ERC20 instance.
        if let Some((_, slice)) = slices.iter().find(|(rollup, _)| *rollup == self.rollup) {
            local_sigma
                .apply_external_debit_credit(
                    &[(owner.clone(), *slice)],
                    &[(recipient.clone(), *slice)],
                )
                .map_err(|e| desync(e.to_string()))?;
        }

        Ok(CommitStatus::committed(tx.tx_id))
    }

    fn apply_allowance_marks(&mut self, etx: &ExecutedTx) -> Result<(), UpsilonError> {
        for mark in &etx.ops.allowance {
            match mark {
                AllowanceMark::Set { owner, spender, amount } => {
                    self.uat_allowances.set(owner, spender, *amount);
                }
                AllowanceMark::Decrement { owner, spender, amount } => {
                    self.uat_allowances.decrement(owner, spender, *amount).map_err(|e| {
                        UpsilonError::CommitDesync {
                            rollup: self.rollup,
                            detail: format!("allowance marker underflow: {e}"),
                        }
                    })?;
                }
            }
        }
        Ok(())
    }

    /// Fault-injection hook for the harness: credits `amount` to one rollup
    /// mirror and the global balance on this replica only, producing a state
    /// that the convergence checker must flag against its peers.
    pub fn inject_balance_fault(
        &mut self,
        rollup: RollupId,
        owner: &Address,
        amount: Amount,
    ) -> Result<(), UpsilonError> {
        let host = self.rollup;
        let desync = move |detail: String| UpsilonError::CommitDesync { rollup: host, detail };
        let mirror = self
            .book
            .b_e
            .get_mut(&rollup)
            .ok_or_else(|| desync(format!("unknown rollup {rollup}")))?;
        mirror.credit(owner, amount).map_err(|e| desync(e.to_string()))?;
        self.book.b_u.credit(owner, amount).map_err(|e| desync(e.to_string()))?;
        Ok(())
    }

    /// Canonical state lines in fixed order (sorted addresses, sorted rollup
    /// ids): the digest preimage, also used to locate the first divergence
    /// between two replicas.
    pub fn canonical_lines(&self) -> Vec<String> {
        let mut lines = vec![format!("EPOCH {}", self.epoch)];
        for (addr, amount) in self.book.b_u.iter() {
            lines.push(format!("BU {addr} {amount}"));
        }
        for (rollup, local) in &self.book.b_e {
            for (addr, amount) in local.iter() {
                lines.push(format!("BE {rollup} {addr} {amount}"));
            }
        }
        for ((owner, spender), amount) in self.uat_allowances.iter() {
            lines.push(format!("ALLOW {owner} {spender} {amount}"));
        }
        lines
    }

    /// Deterministic digest over the canonical serialization of
    /// (book, allowances, epoch). Equal digests iff equal states.
    pub fn state_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for line in self.canonical_lines() {
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    /// State dump lines for reports:
    /// `UAT20.BU <address> <amount>`, `UAT20.BE <rollup_id> <address> <amount>`,
    /// `UAT20.ALLOW <owner> <spender> <amount>`, `UAT20.POLICY <address> <id,id,...>`.
    pub fn dump_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for (addr, amount) in self.book.b_u.iter() {
            lines.push(format!("UAT20.BU {addr} {amount}"));
        }
        for (rollup, local) in &self.book.b_e {
            for (addr, amount) in local.iter() {
                lines.push(format!("UAT20.BE {rollup} {addr} {amount}"));
            }
        }
        for ((owner, spender), amount) in self.uat_allowances.iter() {
            lines.push(format!("UAT20.ALLOW {owner} {spender} {amount}"));
        }
        for (addr, policy) in &self.policies {
            let ids: Vec<String> = policy.priority.iter().map(|r| r.to_string()).collect();
            lines.push(format!("UAT20.POLICY {addr} {}", ids.join(",")));
        }
        lines
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ExecStatus, Outcome};

    fn addr(last: u8) -> Address {
        let mut bytes = [0u8; 20];
        bytes[19] = last;
        Address::from_bytes(bytes)
    }

    fn r(id: u32) -> RollupId {
        RollupId::new(id)
    }

    /// Book with per-rollup balances given as (rollup, address, amount).
    fn book(n: u32, entries: &[(u32, u8, Amount)]) -> BalanceBook {
        let mut locals: BTreeMap<RollupId, BalanceMap> =
            RollupId::all(n).map(|id| (id, BalanceMap::new())).collect();
        for (rollup, a, v) in entries {
            locals.get_mut(&r(*rollup)).unwrap().credit(&addr(*a), *v).unwrap();
        }
        BalanceBook::from_locals(locals).unwrap()
    }

    fn replica(rollup: u32, book: BalanceBook) -> Replica {
        Replica::new(r(rollup), book, BTreeMap::new())
    }

    #[test]
    fn uat_transfer_emits_global_ops_and_touches_nothing() {
        // transfer(C -> A, 50): ops {SUB(global C, 50), ADD(global A, 50)}
        let c = addr(0xc);
        let a = addr(0xa);
        let rep = replica(1, book(2, &[(1, 0xc, 40), (2, 0xc, 60)]));
        let before = rep.clone();
        let etx = rep.execute_uat_transfer(&c, &a, 50, 1, 0);
        assert_eq!(etx.status, ExecStatus::Ok);
        assert_eq!(
            etx.ops.balance,
            vec![
                Operation::sub(BalanceSlot::Global(c.clone()), 50),
                Operation::add(BalanceSlot::Global(a.clone()), 50),
            ]
        );
        assert_eq!(rep, before);
    }

    #[test]
    fn uat_transfer_defers_balance_check_to_commit() {
        // 90 > b_u[C] on this replica? Irrelevant: execution must succeed.
        let c = addr(0xc);
        let a = addr(0xa);
        let rep = replica(2, book(2, &[(1, 0xc, 40), (2, 0xc, 60)]));
        let etx = rep.execute_uat_transfer(&c, &a, 90, 1, 0);
        assert_eq!(etx.status, ExecStatus::Ok);
        let etx = rep.execute_uat_transfer(&c, &a, 100_000, 1, 1);
        assert_eq!(etx.status, ExecStatus::Ok, "even an impossible amount executes");
    }

    #[test]
    fn uat_transfer_rejects_malformed_party() {
        let c = addr(0xc);
        let bogus = Address::unchecked("0xNOT_AN_ADDRESS");
        let rep = replica(1, book(1, &[]));
        let etx = rep.execute_uat_transfer(&c, &bogus, 5, 1, 0);
        assert_eq!(etx.status, ExecStatus::Rejected(ExecReason::InvalidAddress));
        assert!(etx.ops.is_empty());

        let etx = rep.execute_uat_transfer_from(&c, &bogus, &c, 5, 1, 1);
        assert_eq!(etx.status, ExecStatus::Rejected(ExecReason::InvalidAddress));
    }

    #[test]
    fn uat_transfer_from_carries_decrement_marker() {
        let c = addr(0xc);
        let s = addr(0x5);
        let a = addr(0xa);
        let rep = replica(1, book(1, &[(1, 0xc, 40)]));
        let etx = rep.execute_uat_transfer_from(&s, &c, &a, 10, 1, 0);
        assert_eq!(etx.status, ExecStatus::Ok);
        assert_eq!(
            etx.ops.allowance,
            vec![AllowanceMark::Decrement { owner: c.clone(), spender: s.clone(), amount: 10 }]
        );
        assert_eq!(etx.ops.balance.len(), 2);
    }

    #[test]
    fn uat_transfer_from_zero_amount_is_a_committed_no_op() {
        let c = addr(0xc);
        let s = addr(0x5);
        let a = addr(0xa);
        let mut rep = replica(1, book(1, &[(1, 0xc, 40)]));
        let mut sigma = Erc20State::new(r(1));
        sigma.balances.credit(&c, 40).unwrap();

        let etx = rep.execute_uat_transfer_from(&s, &c, &a, 0, 1, 0);
        assert_eq!(etx.status, ExecStatus::Ok);
        let before = rep.book.clone();
        let statuses = rep.commit_u(&[etx], &mut sigma).unwrap();
        assert_eq!(statuses[0].outcome, Outcome::Committed);
        assert_eq!(rep.book, before);
        assert_eq!(rep.uat_allowances.get(&c, &s), 0);
    }

    #[test]
    fn resolve_deduction_matches_worked_example() {
        // {X:40, Y:60}, amount 50, priority [X,Y] -> [(X,40),(Y,10)].
        let c = addr(0xc);
        let b = book(2, &[(1, 0xc, 40), (2, 0xc, 60)]);
        let policy = DeductionPolicy::new(c.clone(), vec![r(1), r(2)], 2).unwrap();
        assert_eq!(resolve_deduction(&b, &c, 50, &policy), vec![(r(1), 40), (r(2), 10)]);
        // exact fit stops after the first rollup
        assert_eq!(resolve_deduction(&b, &c, 40, &policy), vec![(r(1), 40)]);
    }

    #[test]
    fn resolve_deduction_skips_empty_rollups() {
        // {X:0, Y:0, Z:7}, amount 7, priority [X,Y,Z] -> [(Z,7)].
        let c = addr(0xc);
        let b = book(3, &[(3, 0xc, 7)]);
        let policy = DeductionPolicy::new(c.clone(), vec![r(1), r(2), r(3)], 3).unwrap();
        assert_eq!(resolve_deduction(&b, &c, 7, &policy), vec![(r(3), 7)]);
        assert_eq!(resolve_deduction(&b, &c, 0, &policy), vec![]);
    }

    /// Independent oracle: drain one token at a time from the first rollup
    /// in priority order that still has balance.
    fn unit_drain_oracle(
        book: &BalanceBook,
        owner: &Address,
        amount: Amount,
        policy: &DeductionPolicy,
    ) -> Vec<(RollupId, Amount)> {
        let mut left: BTreeMap<RollupId, Amount> =
            policy.priority.iter().map(|id| (*id, book.local(*id, owner))).collect();
        let mut taken: BTreeMap<RollupId, Amount> = BTreeMap::new();
        for _ in 0..amount {
            let next = policy
                .priority
                .iter()
                .find(|id| left[id] > 0)
                .expect("oracle caller guarantees feasibility");
            *left.get_mut(next).unwrap() -= 1;
            *taken.entry(*next).or_insert(0) += 1;
        }
        policy
            .priority
            .iter()
            .filter_map(|id| taken.get(id).map(|amt| (*id, *amt)))
            .collect()
    }

    #[test]
    fn resolve_deduction_equals_unit_drain_oracle_exhaustively() {
        use itertools::Itertools;
        let c = addr(0xc);
        // n = 2, balances 0..=6 each, all amounts, both priority orders.
        for b1 in 0u128..=6 {
            for b2 in 0u128..=6 {
                let bk = book(2, &[(1, 0xc, b1), (2, 0xc, b2)]);
                for perm in (1..=2u32).permutations(2) {
                    let priority: Vec<RollupId> = perm.into_iter().map(r).collect();
                    let policy = DeductionPolicy::new(c.clone(), priority, 2).unwrap();
                    for amount in 0..=(b1 + b2) {
                        let got = resolve_deduction(&bk, &c, amount, &policy);
                        let want = unit_drain_oracle(&bk, &c, amount, &policy);
                        assert_eq!(got, want, "b=({b1},{b2}) amount={amount}");
                    }
                }
            }
        }
    }

    #[test]
    fn policy_must_be_permutation() {
        let c = addr(0xc);
        assert!(DeductionPolicy::new(c.clone(), vec![r(1), r(1)], 2).is_err());
        assert!(DeductionPolicy::new(c.clone(), vec![r(1)], 2).is_err());
        assert!(DeductionPolicy::new(c.clone(), vec![r(1), r(3)], 2).is_err());
        assert!(DeductionPolicy::new(c.clone(), vec![r(2), r(1)], 2).is_ok());
        assert_eq!(
            DeductionPolicy::default_for(c.clone(), 3).priority,
            vec![r(1), r(2), r(3)]
        );
    }

    /// Executes an ERC20 transfer on a scratch rollup and returns it with
    /// its four-operation update set.
    fn erc20_exec(
        origin: u32,
        seq: u64,
        from: &Address,
        to: &Address,
        amount: Amount,
    ) -> ExecutedTx {
        let mut sigma = Erc20State::new(r(origin));
        sigma.balances.credit(from, amount).unwrap();
        sigma.execute_transfer(from, to, amount, 1, seq)
    }

    #[test]
    fn commit_e_applies_ops_to_mirrors() {
        // remote ERC20 transfer applied on rollup 2's replica:
        // b_u[C] 100 -> 90, b_e[1][C] 40 -> 30
        let c = addr(0xc);
        let a = addr(0xa);
        let mut rep = replica(2, book(2, &[(1, 0xc, 40), (2, 0xc, 60)]));
        let etx = erc20_exec(1, 0, &c, &a, 10);
        let statuses = rep.commit_e(std::slice::from_ref(&etx)).unwrap();
        assert_eq!(statuses, vec![CommitStatus::committed(etx.tx.tx_id)]);
        assert_eq!(rep.book.global(&c), 90);
        assert_eq!(rep.book.local(r(1), &c), 30);
        assert_eq!(rep.book.local(r(1), &a), 10);
        assert_eq!(rep.book.global(&a), 10);
    }

    #[test]
    fn commit_e_empty_queue_is_a_no_op() {
        let mut rep = replica(1, book(2, &[(1, 0xc, 40)]));
        let before = rep.clone();
        let statuses = rep.commit_e(&[]).unwrap();
        assert!(statuses.is_empty());
        assert_eq!(rep, before);
    }

    #[test]
    fn commit_e_is_order_independent() {
        // Two independent ERC20 transfers from different rollups commit to
        // the same book under either order.
        let c = addr(0xc);
        let a = addr(0xa);
        let d = addr(0xd);
        let base = replica(1, book(2, &[(1, 0xc, 40), (2, 0xd, 60)]));
        let t1 = erc20_exec(1, 0, &c, &a, 10);
        let t2 = erc20_exec(2, 0, &d, &a, 20);

        let mut fwd = base.clone();
        fwd.commit_e(&[t1.clone(), t2.clone()]).unwrap();
        let mut rev = base.clone();
        rev.commit_e(&[t2, t1]).unwrap();
        assert_eq!(fwd, rev);
    }

    #[test]
    fn commit_e_tolerates_dependent_transfers_in_any_order() {
        // a credit-then-spend chain: C -> A 15, then A -> D 20 with A's
        // genesis 10. In reverse order the debit transiently exceeds A's
        // mirror; the batch application must still land on the same book.
        let c = addr(0xc);
        let a = addr(0xa);
        let d = addr(0xd);

        let mut sigma = Erc20State::new(r(1));
        sigma.balances.credit(&c, 40).unwrap();
        sigma.balances.credit(&a, 10).unwrap();
        let t1 = sigma.execute_transfer(&c, &a, 15, 1, 0);
        let t2 = sigma.execute_transfer(&a, &d, 20, 1, 1);
        assert_eq!(t1.status, ExecStatus::Ok);
        assert_eq!(t2.status, ExecStatus::Ok);

        let base = replica(1, book(1, &[(1, 0xc, 40), (1, 0xa, 10)]));
        let mut fwd = base.clone();
        fwd.commit_e(&[t1.clone(), t2.clone()]).unwrap();
        let mut rev = base.clone();
        rev.commit_e(&[t2, t1]).unwrap();
        assert_eq!(fwd, rev);
        assert_eq!(fwd.book.local(r(1), &a), 5);
        assert_eq!(fwd.book.local(r(1), &d), 20);
    }

    #[test]
    fn commit_e_detects_uncovered_batch() {
        // an operation set debiting more than the whole batch provides
        let c = addr(0xc);
        let a = addr(0xa);
        let mut rep = replica(1, book(1, &[(1, 0xc, 5)]));
        let mut etx = erc20_exec(1, 0, &c, &a, 10);
        etx.ops.balance = vec![Operation::sub(BalanceSlot::Global(c.clone()), 10)];
        let err = rep.commit_e(&[etx]).unwrap_err();
        assert!(matches!(err, UpsilonError::CommitDesync { .. }));
        // failed commit leaves the book unchanged
        assert_eq!(rep.book.global(&c), 5);
    }

    /// The bundled figure1 scenario's epoch, committed on one replica:
    /// C holds 40/60 across two rollups; an ERC20 transfer of 10, then
    /// UAT20 transfers of 50 and 90 race for the remainder.
    fn figure1_commit(host: u32) -> (Replica, Erc20State, Vec<CommitStatus>) {
        let c = addr(0xc);
        let a = addr(0xa);

        // execution phase on the origin rollups
        let mut sigma_x = Erc20State::new(r(1));
        sigma_x.balances.credit(&c, 40).unwrap();
        let mut sigma_y = Erc20State::new(r(2));
        sigma_y.balances.credit(&c, 60).unwrap();

        let t1 = sigma_x.execute_transfer(&c, &a, 10, 1, 0);
        let exec_rep = replica(1, book(2, &[(1, 0xc, 40), (2, 0xc, 60)]));
        let t2 = exec_rep.execute_uat_transfer(&c, &a, 50, 1, 1);
        let exec_rep_y = replica(2, book(2, &[(1, 0xc, 40), (2, 0xc, 60)]));
        let t3 = exec_rep_y.execute_uat_transfer(&c, &a, 90, 1, 0);

        // the committing replica under test
        let mut policies = BTreeMap::new();
        policies.insert(c.clone(), DeductionPolicy::new(c.clone(), vec![r(1), r(2)], 2).unwrap());
        let mut rep = Replica::new(r(host), book(2, &[(1, 0xc, 40), (2, 0xc, 60)]), policies);
        let mut sigma = if host == 1 { sigma_x } else { sigma_y };

        let mut statuses = rep.commit_e(std::slice::from_ref(&t1)).unwrap();
        statuses.extend(rep.commit_u(&[t2, t3], &mut sigma).unwrap());
        (rep, sigma, statuses)
    }

    #[test]
    fn figure1_commit_order_resolves_the_conflict() {
        // queue [t2 = transfer(C->A,50), t3 = transfer(C->A,90)] with
        // b_u[C] = 90 after commit_e: t2 commits, t3 fails.
        let c = addr(0xc);
        let a = addr(0xa);
        let (rep, _, statuses) = figure1_commit(1);

        assert_eq!(statuses[0].outcome, Outcome::Committed);
        assert_eq!(statuses[1].outcome, Outcome::Committed);
        assert_eq!(statuses[2].outcome, Outcome::Failed(FailReason::InsufficientBalance));

        // deduction split {X:30, Y:20} after commit_e left X at 30, Y at 60
        assert_eq!(rep.book.global(&c), 40);
        assert_eq!(rep.book.global(&a), 60);
        assert_eq!(rep.book.local(r(1), &c), 0);
        assert_eq!(rep.book.local(r(2), &c), 40);
        assert_eq!(rep.book.local(r(1), &a), 40);
        assert_eq!(rep.book.local(r(2), &a), 20);
        assert_eq!(rep.book.aggregation_violation(), None);
    }

    #[test]
    fn credits_mirror_debits_so_each_local_supply_is_conserved() {
        // a committed UAT20 transfer credits the recipient with exactly the
        // per-rollup debit split, so every mirror's total is unchanged
        let (rep, _, _) = figure1_commit(1);
        assert_eq!(rep.book.local_map(r(1)).unwrap().total().unwrap(), 40);
        assert_eq!(rep.book.local_map(r(2)).unwrap().total().unwrap(), 60);
    }

    #[test]
    fn figure1_sigma_forwarding_keeps_mirrors_equal() {
        for host in [1u32, 2] {
            let (rep, sigma, _) = figure1_commit(host);
            assert_eq!(
                rep.book.local_map(r(host)).unwrap(),
                &sigma.balances,
                "rollup {host} mirror"
            );
        }
    }

    #[test]
    fn replicas_converge_to_equal_digests() {
        let (rep_x, _, st_x) = figure1_commit(1);
        let (rep_y, _, st_y) = figure1_commit(2);
        assert_eq!(st_x, st_y, "status agreement");
        assert_eq!(rep_x.state_digest(), rep_y.state_digest());
    }

    #[test]
    fn digest_differs_on_one_unit_difference() {
        let rep_a = replica(1, book(1, &[(1, 0xc, 40)]));
        let rep_b = replica(1, book(1, &[(1, 0xc, 41)]));
        assert_ne!(rep_a.state_digest(), rep_b.state_digest());
        assert_eq!(rep_a.state_digest().len(), 64);
        // identical genesis, identical digest
        assert_eq!(rep_a.state_digest(), replica(1, book(1, &[(1, 0xc, 40)])).state_digest());
    }

    #[test]
    fn commit_u_zero_amount_commits_without_change() {
        let c = addr(0xc);
        let a = addr(0xa);
        let mut rep = replica(1, book(1, &[(1, 0xc, 10)]));
        let mut sigma = Erc20State::new(r(1));
        sigma.balances.credit(&c, 10).unwrap();
        let etx = rep.execute_uat_transfer(&c, &a, 0, 1, 0);
        let before = rep.clone();
        let statuses = rep.commit_u(&[etx], &mut sigma).unwrap();
        assert_eq!(statuses[0].outcome, Outcome::Committed);
        assert_eq!(rep.book, before.book);
    }

    #[test]
    fn approve_applies_at_commit_and_last_writer_wins() {
        let c = addr(0xc);
        let s = addr(0x5);
        let mut rep = replica(1, book(1, &[(1, 0xc, 10)]));
        let mut sigma = Erc20State::new(r(1));

        let first = rep.execute_uat_approve(&c, &s, 100, 1, 0);
        let second = rep.execute_uat_approve(&c, &s, 30, 1, 1);
        assert_eq!(rep.uat_allowances.get(&c, &s), 0, "no change at execution");

        rep.commit_u(&[first, second], &mut sigma).unwrap();
        assert_eq!(rep.uat_allowances.get(&c, &s), 30, "arbitration order decides");
    }

    #[test]
    fn transfer_from_commit_checks_allowance_and_decrements() {
        let c = addr(0xc);
        let s = addr(0x5);
        let a = addr(0xa);
        let mut rep = replica(1, book(1, &[(1, 0xc, 40)]));
        let mut sigma = Erc20State::new(r(1));
        sigma.balances.credit(&c, 40).unwrap();

        let approve = rep.execute_uat_approve(&c, &s, 20, 1, 0);
        let ok = rep.execute_uat_transfer_from(&s, &c, &a, 15, 1, 1);
        let too_much = rep.execute_uat_transfer_from(&s, &c, &a, 10, 1, 2);

        let statuses = rep.commit_u(&[approve, ok, too_much], &mut sigma).unwrap();
        assert_eq!(statuses[0].outcome, Outcome::Committed);
        assert_eq!(statuses[1].outcome, Outcome::Committed);
        assert_eq!(
            statuses[2].outcome,
            Outcome::Failed(FailReason::InsufficientAllowance),
            "allowance 5 cannot cover 10"
        );
        assert_eq!(rep.uat_allowances.get(&c, &s), 5);
        assert_eq!(rep.book.global(&a), 15);
    }

    #[test]
    fn failed_transfer_consumes_nothing() {
        let c = addr(0xc);
        let a = addr(0xa);
        let mut rep = replica(1, book(2, &[(1, 0xc, 10), (2, 0xc, 10)]));
        let mut sigma = Erc20State::new(r(1));
        sigma.balances.credit(&c, 10).unwrap();
        let etx = rep.execute_uat_transfer(&c, &a, 21, 1, 0);
        let before_book = rep.book.clone();
        let statuses = rep.commit_u(&[etx], &mut sigma).unwrap();
        assert_eq!(statuses[0].outcome, Outcome::Failed(FailReason::InsufficientBalance));
        assert_eq!(rep.book, before_book);
        assert_eq!(sigma.balances.get(&c), 10);
    }
}
