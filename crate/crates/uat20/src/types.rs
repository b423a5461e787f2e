//! Shared domain vocabulary: addresses, amounts, identifiers, transactions,
//! operations and blocks, used by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Token units. Always non-negative; every mutation in the protocol goes
/// through checked arithmetic, overflow and underflow are errors rather than
/// wraparound.
pub type Amount = u128;

/// Errors raised by checked balance and allowance mutation.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("insufficient funds for {owner}: have {available}, need {needed}")]
    Insufficient {
        owner: Address,
        available: Amount,
        needed: Amount,
    },
    #[error("amount overflow while crediting {owner}")]
    Overflow { owner: Address },
}

/// A 20-byte account address in canonical form: lowercase hex, `0x` prefix,
/// exactly 42 characters.
///
/// Comparison, hashing and map-key use all operate on the canonical string.
/// [`Address::parse`] normalizes case and validates; [`Address::unchecked`]
/// skips validation so tests and fault injection can build malformed parties,
/// which the execution layer rejects with `invalid_address`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Address(String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("address must be exactly 42 characters, got {0}")]
    BadLength(usize),
    #[error("address must start with 0x")]
    MissingPrefix,
    #[error("address contains non-hex character {0:?}")]
    BadHexDigit(char),
}

impl Address {
    /// Validates and case-normalizes a textual address.
    pub fn parse(text: &str) -> Result<Self, AddressError> {
        if text.len() != 42 {
            return Err(AddressError::BadLength(text.len()));
        }
        if !text.starts_with("0x") {
            return Err(AddressError::MissingPrefix);
        }
        if let Some(bad) = text[2..].chars().find(|c| !c.is_ascii_hexdigit()) {
            return Err(AddressError::BadHexDigit(bad));
        }
        Ok(Address(text.to_ascii_lowercase()))
    }

    /// Wraps a raw string without validation. Non-canonical values fail the
    /// execution-phase metadata check.
    pub fn unchecked(raw: impl Into<String>) -> Self {
        Address(raw.into())
    }

    /// Builds the canonical address whose 20 bytes are `bytes`.
    pub fn from_bytes(bytes: [u8; 20]) -> Self {
        Address(format!("0x{}", hex::encode(bytes)))
    }

    /// True iff the stored text is already in canonical form.
    pub fn is_canonical(&self) -> bool {
        Address::parse(&self.0).map(|a| a.0 == self.0).unwrap_or(false)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::parse(s)
    }
}

/// Rollup index. A simulation with `n` rollups uses exactly the dense ids
/// `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RollupId(u32);

impl RollupId {
    pub fn new(id: u32) -> Self {
        RollupId(id)
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Iterator over the dense id range `1..=n`.
    pub fn all(n: u32) -> impl Iterator<Item = RollupId> {
        (1..=n).map(RollupId)
    }
}

impl fmt::Display for RollupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A balance cell in the replicated book: either a user's global balance
/// (`B_u`) or their balance mirror on one rollup (`B_e^i`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BalanceSlot {
    Global(Address),
    Local(RollupId, Address),
}

/// Direction of a balance update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Add,
    Sub,
}

/// One balance update produced at execution and applied at commit. A zero
/// amount is a valid no-op update.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub kind: OpKind,
    pub slot: BalanceSlot,
    pub amount: Amount,
}

impl Operation {
    pub fn add(slot: BalanceSlot, amount: Amount) -> Self {
        Operation { kind: OpKind::Add, slot, amount }
    }

    pub fn sub(slot: BalanceSlot, amount: Amount) -> Self {
        Operation { kind: OpKind::Sub, slot, amount }
    }
}

/// Replicated allowance updates carried alongside balance operations. UAT20
/// allowances live in the replica state and may only change at commit, in
/// arbitration order, so transfers and approvals ship these markers instead
/// of mutating anything at execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllowanceMark {
    Set {
        owner: Address,
        spender: Address,
        amount: Amount,
    },
    Decrement {
        owner: Address,
        spender: Address,
        amount: Amount,
    },
}

/// The update payload a transaction emits at execution: ordered balance
/// operations plus any allowance markers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OperationSet {
    pub balance: Vec<Operation>,
    pub allowance: Vec<AllowanceMark>,
}

impl OperationSet {
    pub fn empty() -> Self {
        OperationSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.balance.is_empty() && self.allowance.is_empty()
    }
}

/// Transaction kind. `Erc20*` kinds route to the `T_E` queue, `Uat20*` kinds
/// to `T_U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxKind {
    Erc20Transfer,
    Erc20TransferFrom,
    Erc20Approve,
    Uat20Transfer,
    Uat20TransferFrom,
    Uat20Approve,
}

impl TxKind {
    pub fn is_erc20(self) -> bool {
        matches!(
            self,
            TxKind::Erc20Transfer | TxKind::Erc20TransferFrom | TxKind::Erc20Approve
        )
    }

    pub fn token(self) -> &'static str {
        match self {
            TxKind::Erc20Transfer => "E20XFER",
            TxKind::Erc20TransferFrom => "E20XFERFROM",
            TxKind::Erc20Approve => "E20APPROVE",
            TxKind::Uat20Transfer => "U20XFER",
            TxKind::Uat20TransferFrom => "U20XFERFROM",
            TxKind::Uat20Approve => "U20APPROVE",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Some(match token {
            "E20XFER" => TxKind::Erc20Transfer,
            "E20XFERFROM" => TxKind::Erc20TransferFrom,
            "E20APPROVE" => TxKind::Erc20Approve,
            "U20XFER" => TxKind::Uat20Transfer,
            "U20XFERFROM" => TxKind::Uat20TransferFrom,
            "U20APPROVE" => TxKind::Uat20Approve,
            _ => return None,
        })
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Transaction identifier assigned by the originating rollup, rendered as
/// `R<origin>-E<epoch>-<seq>`. `(origin, seq)` is unique within an epoch and
/// `seq` is strictly increasing in submission order, so the id doubles as the
/// arbitration sort key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId {
    pub origin: RollupId,
    pub epoch: u64,
    pub seq: u64,
}

impl TxId {
    pub fn new(origin: RollupId, epoch: u64, seq: u64) -> Self {
        TxId { origin, epoch, seq }
    }
}

impl fmt::Display for TxId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "R{}-E{}-{}", self.origin, self.epoch, self.seq)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed transaction id {0:?}")]
pub struct TxIdParseError(pub String);

impl FromStr for TxId {
    type Err = TxIdParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || TxIdParseError(s.to_string());
        let rest = s.strip_prefix('R').ok_or_else(err)?;
        let (origin, rest) = rest.split_once("-E").ok_or_else(err)?;
        let (epoch, seq) = rest.split_once('-').ok_or_else(err)?;
        Ok(TxId {
            origin: RollupId::new(origin.parse().map_err(|_| err())?),
            epoch: epoch.parse().map_err(|_| err())?,
            seq: seq.parse().map_err(|_| err())?,
        })
    }
}

/// A user transaction as submitted on its origin rollup.
///
/// `sender` is always the debit party: the token owner for transfers and
/// transferFroms, the allowance granter for approvals. `recipient` is absent
/// for approvals and `spender` is present only for transferFrom and approve
/// kinds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: TxId,
    pub kind: TxKind,
    pub sender: Address,
    pub recipient: Option<Address>,
    pub spender: Option<Address>,
    pub amount: Amount,
}

impl Transaction {
    pub fn origin(&self) -> RollupId {
        self.tx_id.origin
    }

    pub fn seq(&self) -> u64 {
        self.tx_id.seq
    }

    /// Arbitration sort key within a sealed epoch.
    pub fn order_key(&self) -> (RollupId, u64) {
        (self.tx_id.origin, self.tx_id.seq)
    }
}

/// Why an execution-phase attempt was rejected. Rejected transactions are
/// never broadcast.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecReason {
    InsufficientLocalBalance,
    InsufficientAllowance,
    InvalidAddress,
}

impl fmt::Display for ExecReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExecReason::InsufficientLocalBalance => "insufficient_local_balance",
            ExecReason::InsufficientAllowance => "insufficient_allowance",
            ExecReason::InvalidAddress => "invalid_address",
        })
    }
}

impl FromStr for ExecReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "insufficient_local_balance" => ExecReason::InsufficientLocalBalance,
            "insufficient_allowance" => ExecReason::InsufficientAllowance,
            "invalid_address" => ExecReason::InvalidAddress,
            _ => return Err(()),
        })
    }
}

/// Execution outcome attached to an [`ExecutedTx`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecStatus {
    Ok,
    Rejected(ExecReason),
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecStatus::Ok => f.write_str("OK"),
            ExecStatus::Rejected(reason) => write!(f, "REJECTED({reason})"),
        }
    }
}

/// A transaction plus the operation set its execution produced. This is the
/// unit broadcast to the coordinator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutedTx {
    pub tx: Transaction,
    pub ops: OperationSet,
    pub status: ExecStatus,
}

impl ExecutedTx {
    pub fn ok(tx: Transaction, ops: OperationSet) -> Self {
        ExecutedTx { tx, ops, status: ExecStatus::Ok }
    }

    /// Rejected executions carry an empty operation set.
    pub fn rejected(tx: Transaction, reason: ExecReason) -> Self {
        ExecutedTx {
            tx,
            ops: OperationSet::empty(),
            status: ExecStatus::Rejected(reason),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// One sealed epoch: the arbitration order split into the ERC20 queue `t_e`
/// and the UAT20 queue `t_u`, each preserving the total order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderedBlock {
    pub epoch: u64,
    pub t_e: Vec<ExecutedTx>,
    pub t_u: Vec<ExecutedTx>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BlockError {
    #[error("transaction {0} in t_e has non-ERC20 kind")]
    WrongQueueE(TxId),
    #[error("transaction {0} in t_u has non-UAT20 kind")]
    WrongQueueU(TxId),
    #[error("transaction id {0} appears twice in block")]
    DuplicateTx(TxId),
}

impl OrderedBlock {
    pub fn new(epoch: u64, t_e: Vec<ExecutedTx>, t_u: Vec<ExecutedTx>) -> Result<Self, BlockError> {
        let block = OrderedBlock { epoch, t_e, t_u };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<(), BlockError> {
        let mut seen = std::collections::BTreeSet::new();
        for etx in &self.t_e {
            if !etx.tx.kind.is_erc20() {
                return Err(BlockError::WrongQueueE(etx.tx.tx_id));
            }
            if !seen.insert(etx.tx.tx_id) {
                return Err(BlockError::DuplicateTx(etx.tx.tx_id));
            }
        }
        for etx in &self.t_u {
            if etx.tx.kind.is_erc20() {
                return Err(BlockError::WrongQueueU(etx.tx.tx_id));
            }
            if !seen.insert(etx.tx.tx_id) {
                return Err(BlockError::DuplicateTx(etx.tx.tx_id));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.t_e.is_empty() && self.t_u.is_empty()
    }
}

/// Why a UAT20 transaction failed at commit. These are ordinary conflict
/// outcomes, identical on every replica for the same block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    InsufficientBalance,
    InsufficientAllowance,
}

impl fmt::Display for FailReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FailReason::InsufficientBalance => "insufficient_balance",
            FailReason::InsufficientAllowance => "insufficient_allowance",
        })
    }
}

impl FromStr for FailReason {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        Ok(match s {
            "insufficient_balance" => FailReason::InsufficientBalance,
            "insufficient_allowance" => FailReason::InsufficientAllowance,
            _ => return Err(()),
        })
    }
}

/// Commit outcome of one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Committed,
    Failed(FailReason),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Committed => f.write_str("COMMITTED"),
            Outcome::Failed(reason) => write!(f, "FAILED({reason})"),
        }
    }
}

/// Per-transaction commit result, identical across all replicas for the same
/// ordered block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitStatus {
    pub tx_id: TxId,
    pub outcome: Outcome,
}

impl CommitStatus {
    pub fn committed(tx_id: TxId) -> Self {
        CommitStatus { tx_id, outcome: Outcome::Committed }
    }

    pub fn failed(tx_id: TxId, reason: FailReason) -> Self {
        CommitStatus { tx_id, outcome: Outcome::Failed(reason) }
    }
}

impl fmt::Display for CommitStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.tx_id, self.outcome)
    }
}

/// Address → amount mapping in canonical form: zero balances are never
/// stored, so two maps with equal holdings compare equal. All mutation is
/// checked.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BalanceMap(BTreeMap<Address, Amount>);

impl BalanceMap {
    pub fn new() -> Self {
        BalanceMap::default()
    }

    pub fn get(&self, owner: &Address) -> Amount {
        self.0.get(owner).copied().unwrap_or(0)
    }

    pub fn credit(&mut self, owner: &Address, amount: Amount) -> Result<(), LedgerError> {
        if amount == 0 {
            return Ok(());
        }
        let current = self.get(owner);
        let updated = current
            .checked_add(amount)
            .ok_or_else(|| LedgerError::Overflow { owner: owner.clone() })?;
        self.0.insert(owner.clone(), updated);
        Ok(())
    }

    pub fn debit(&mut self, owner: &Address, amount: Amount) -> Result<(), LedgerError> {
        if amount == 0 {
            return Ok(());
        }
        let current = self.get(owner);
        let updated = current.checked_sub(amount).ok_or_else(|| LedgerError::Insufficient {
            owner: owner.clone(),
            available: current,
            needed: amount,
        })?;
        if updated == 0 {
            self.0.remove(owner);
        } else {
            self.0.insert(owner.clone(), updated);
        }
        Ok(())
    }

    /// Sorted iteration over the stored (nonzero) entries.
    pub fn iter(&self) -> impl Iterator<Item = (&Address, Amount)> {
        self.0.iter().map(|(a, v)| (a, *v))
    }

    pub fn addresses(&self) -> impl Iterator<Item = &Address> {
        self.0.keys()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checked sum of all balances.
    pub fn total(&self) -> Result<Amount, LedgerError> {
        self.0.values().try_fold(0u128, |acc, v| {
            acc.checked_add(*v).ok_or_else(|| LedgerError::Overflow {
                owner: Address::unchecked("<total>"),
            })
        })
    }
}

/// (owner, spender) → amount allowance mapping, canonical like
/// [`BalanceMap`]: zero allowances are removed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AllowanceMap(BTreeMap<(Address, Address), Amount>);

impl AllowanceMap {
    pub fn new() -> Self {
        AllowanceMap::default()
    }

    pub fn get(&self, owner: &Address, spender: &Address) -> Amount {
        self.0.get(&(owner.clone(), spender.clone())).copied().unwrap_or(0)
    }

    /// Overwrite semantics; setting zero revokes.
    pub fn set(&mut self, owner: &Address, spender: &Address, amount: Amount) {
        let key = (owner.clone(), spender.clone());
        if amount == 0 {
            self.0.remove(&key);
        } else {
            self.0.insert(key, amount);
        }
    }

    pub fn decrement(
        &mut self,
        owner: &Address,
        spender: &Address,
        amount: Amount,
    ) -> Result<(), LedgerError> {
        let current = self.get(owner, spender);
        let updated = current.checked_sub(amount).ok_or_else(|| LedgerError::Insufficient {
            owner: owner.clone(),
            available: current,
            needed: amount,
        })?;
        self.set(owner, spender, updated);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(Address, Address), Amount)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
