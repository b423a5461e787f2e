//! The per-rollup ERC20 token: local balances and allowances, with
//! execution-phase transfer semantics.
//!
//! Executions update local state immediately and emit the operation set that
//! the replicated book applies at commit. The origin rollup's local state is
//! therefore never re-applied at commit; the only commit-phase entry point
//! into local balances is [`Erc20State::apply_external_debit_credit`], used
//! by the UAT20 commit to realize cross-rollup deductions.

use thiserror::Error;

use crate::types::{
    Address, Amount, BalanceMap, BalanceSlot, ExecReason, ExecutedTx, Operation, OperationSet,
    RollupId, Transaction, TxId, TxKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SigmaError {
    /// A commit-phase debit was not covered by local balance. This is an
    /// internal protocol inconsistency, never a user-visible conflict, and
    /// aborts the epoch.
    #[error("commit_desync on rollup {rollup}: {detail}")]
    CommitDesync { rollup: RollupId, detail: String },
}

/// Local ERC20 state for one rollup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Erc20State {
    pub rollup: RollupId,
    pub balances: BalanceMap,
    pub allowances: crate::types::AllowanceMap,
}

impl Erc20State {
    pub fn new(rollup: RollupId) -> Self {
        Erc20State {
            rollup,
            balances: BalanceMap::new(),
            allowances: crate::types::AllowanceMap::new(),
        }
    }

    pub fn with_balances(rollup: RollupId, balances: BalanceMap) -> Self {
        Erc20State { rollup, balances, allowances: crate::types::AllowanceMap::new() }
    }

    fn tx_id(&self, epoch: u64, seq: u64) -> TxId {
        TxId::new(self.rollup, epoch, seq)
    }

    /// The four-operation update a local transfer emits: global debit and
    /// credit plus the matching local-mirror debit and credit.
    fn transfer_ops(&self, debit: &Address, credit: &Address, amount: Amount) -> OperationSet {
        OperationSet {
            balance: vec![
                Operation::sub(BalanceSlot::Global(debit.clone()), amount),
                Operation::add(BalanceSlot::Global(credit.clone()), amount),
                Operation::sub(BalanceSlot::Local(self.rollup, debit.clone()), amount),
                Operation::add(BalanceSlot::Local(self.rollup, credit.clone()), amount),
            ],
            allowance: vec![],
        }
    }

    /// ERC20 `transfer`: validity is a local balance check; on success the
    /// local balances move immediately and the operation set is emitted for
    /// commit on every replica. A rejected transfer leaves state untouched.
    pub fn execute_transfer(
        &mut self,
        sender: &Address,
        recipient: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Erc20Transfer,
            sender: sender.clone(),
            recipient: Some(recipient.clone()),
            spender: None,
            amount,
        };
        if self.balances.get(sender) < amount {
            return ExecutedTx::rejected(tx, ExecReason::InsufficientLocalBalance);
        }
        self.move_balance(sender, recipient, amount);
        let ops = self.transfer_ops(sender, recipient, amount);
        ExecutedTx::ok(tx, ops)
    }

    /// ERC20 `transferFrom`: requires a sufficient allowance and owner
    /// balance; decrements the allowance on success.
    pub fn execute_transfer_from(
        &mut self,
        spender: &Address,
        owner: &Address,
        recipient: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Erc20TransferFrom,
            sender: owner.clone(),
            recipient: Some(recipient.clone()),
            spender: Some(spender.clone()),
            amount,
        };
        if self.allowances.get(owner, spender) < amount {
            return ExecutedTx::rejected(tx, ExecReason::InsufficientAllowance);
        }
        if self.balances.get(owner) < amount {
            return ExecutedTx::rejected(tx, ExecReason::InsufficientLocalBalance);
        }
        self.allowances
            .decrement(owner, spender, amount)
            .expect("allowance checked above");
        self.move_balance(owner, recipient, amount);
        let ops = self.transfer_ops(owner, recipient, amount);
        ExecutedTx::ok(tx, ops)
    }

    /// ERC20 `approve`: overwrites the allowance. No balance effect, so the
    /// operation set is empty; the transaction still enters the ERC20 queue
    /// as a record and is a commit no-op on every replica.
    pub fn execute_approve(
        &mut self,
        owner: &Address,
        spender: &Address,
        amount: Amount,
        epoch: u64,
        seq: u64,
    ) -> ExecutedTx {
        let tx = Transaction {
            tx_id: self.tx_id(epoch, seq),
            kind: TxKind::Erc20Approve,
            sender: owner.clone(),
            recipient: None,
            spender: Some(spender.clone()),
            amount,
        };
        self.allowances.set(owner, spender, amount);
        ExecutedTx::ok(tx, OperationSet::empty())
    }

    /// Applies commit-phase debits and credits from the co-located UAT20
    /// replica, all-or-nothing. Every debit must be covered: an uncovered
    /// debit means execution and commit have desynchronized.
    pub fn apply_external_debit_credit(
        &mut self,
        debits: &[(Address, Amount)],
        credits: &[(Address, Amount)],
    ) -> Result<(), SigmaError> {
        let mut work = self.balances.clone();
        for (owner, amount) in debits {
            work.debit(owner, *amount).map_err(|e| SigmaError::CommitDesync {
                rollup: self.rollup,
                detail: e.to_string(),
            })?;
        }
        for (owner, amount) in credits {
            work.credit(owner, *amount).map_err(|e| SigmaError::CommitDesync {
                rollup: self.rollup,
                detail: e.to_string(),
            })?;
        }
        self.balances = work;
        Ok(())
    }

    /// State dump lines: `ERC20 <rollup_id> <address> <amount>`.
    pub fn dump_lines(&self) -> Vec<String> {
        self.balances
            .iter()
            .map(|(addr, amount)| format!("ERC20 {} {} {}", self.rollup, addr, amount))
            .collect()
    }

    fn move_balance(&mut self, debit: &Address, credit: &Address, amount: Amount) {
        self.balances.debit(debit, amount).expect("balance checked by caller");
        self.balances.credit(credit, amount).expect("credit cannot overflow local supply");
    }
}
