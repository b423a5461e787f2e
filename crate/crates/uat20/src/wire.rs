//! Canonical line-oriented text encoding for the protocol types.
//!
//! Every encoder has a matching decoder and decode(encode(x)) == x. Records
//! are single lines of whitespace-separated fields; optional fields use `-`;
//! operation and allowance tokens are colon-separated so lists can be
//! comma-joined inside one field. Ordered blocks span multiple lines between
//! `BLOCKBEGIN` and `BLOCKEND`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::types::{
    Address, AllowanceMark, Amount, BalanceSlot, CommitStatus, ExecReason, ExecStatus, ExecutedTx,
    FailReason, OpKind, Operation, OperationSet, OrderedBlock, Outcome, RollupId, Transaction,
    TxId, TxKind,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad field {field} in {record}: {detail}")]
    BadField {
        record: &'static str,
        field: &'static str,
        detail: String,
    },
    #[error("{record}: expected {expected} fields, got {got}")]
    FieldCount {
        record: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("unexpected line {0:?}")]
    UnexpectedLine(String),
    #[error("truncated block encoding")]
    Truncated,
    #[error("invalid block: {0}")]
    InvalidBlock(String),
}

fn bad(record: &'static str, field: &'static str, detail: impl ToString) -> WireError {
    WireError::BadField { record, field, detail: detail.to_string() }
}

fn parse_amount(record: &'static str, text: &str) -> Result<Amount, WireError> {
    text.parse::<Amount>().map_err(|e| bad(record, "amount", e))
}

fn parse_address(record: &'static str, field: &'static str, text: &str) -> Result<Address, WireError> {
    Address::parse(text).map_err(|e| bad(record, field, e))
}

fn parse_rollup(record: &'static str, text: &str) -> Result<RollupId, WireError> {
    text.parse::<u32>().map(RollupId::new).map_err(|e| bad(record, "rollup", e))
}

// --- operations -------------------------------------------------------------

pub fn encode_operation(op: &Operation) -> String {
    let kind = match op.kind {
        OpKind::Add => "ADD",
        OpKind::Sub => "SUB",
    };
    match &op.slot {
        BalanceSlot::Global(owner) => format!("{kind}:U:{owner}:{}", op.amount),
        BalanceSlot::Local(rollup, owner) => format!("{kind}:L:{rollup}:{owner}:{}", op.amount),
    }
}

pub fn decode_operation(token: &str) -> Result<Operation, WireError> {
    const R: &str = "operation";
    let parts: Vec<&str> = token.split(':').collect();
    let kind = match parts.first() {
        Some(&"ADD") => OpKind::Add,
        Some(&"SUB") => OpKind::Sub,
        other => return Err(bad(R, "kind", format!("{other:?}"))),
    };
    match parts.as_slice() {
        [_, "U", owner, amount] => Ok(Operation {
            kind,
            slot: BalanceSlot::Global(parse_address(R, "owner", owner)?),
            amount: parse_amount(R, amount)?,
        }),
        [_, "L", rollup, owner, amount] => Ok(Operation {
            kind,
            slot: BalanceSlot::Local(parse_rollup(R, rollup)?, parse_address(R, "owner", owner)?),
            amount: parse_amount(R, amount)?,
        }),
        _ => Err(WireError::FieldCount { record: R, expected: 4, got: parts.len() }),
    }
}

pub fn encode_allowance_mark(mark: &AllowanceMark) -> String {
    match mark {
        AllowanceMark::Set { owner, spender, amount } => format!("ASET:{owner}:{spender}:{amount}"),
        AllowanceMark::Decrement { owner, spender, amount } => {
            format!("ADEC:{owner}:{spender}:{amount}")
        }
    }
}

pub fn decode_allowance_mark(token: &str) -> Result<AllowanceMark, WireError> {
    const R: &str = "allowance mark";
    let parts: Vec<&str> = token.split(':').collect();
    match parts.as_slice() {
        [tag @ ("ASET" | "ADEC"), owner, spender, amount] => {
            let owner = parse_address(R, "owner", owner)?;
            let spender = parse_address(R, "spender", spender)?;
            let amount = parse_amount(R, amount)?;
            Ok(if *tag == "ASET" {
                AllowanceMark::Set { owner, spender, amount }
            } else {
                AllowanceMark::Decrement { owner, spender, amount }
            })
        }
        _ => Err(bad(R, "tag", token)),
    }
}

// --- transactions -----------------------------------------------------------

fn opt_address(value: &Option<Address>) -> String {
    value.as_ref().map(|a| a.to_string()).unwrap_or_else(|| "-".into())
}

fn encode_tx_fields(tx: &Transaction) -> String {
    format!(
        "{} {} {} {} {} {}",
        tx.tx_id,
        tx.kind,
        tx.sender,
        opt_address(&tx.recipient),
        opt_address(&tx.spender),
        tx.amount
    )
}

fn decode_tx_fields(record: &'static str, fields: &[&str]) -> Result<Transaction, WireError> {
    if fields.len() != 6 {
        return Err(WireError::FieldCount { record, expected: 6, got: fields.len() });
    }
    let opt = |field: &'static str, text: &str| -> Result<Option<Address>, WireError> {
        if text == "-" {
            Ok(None)
        } else {
            parse_address(record, field, text).map(Some)
        }
    };
    Ok(Transaction {
        tx_id: fields[0].parse::<TxId>().map_err(|e| bad(record, "tx_id", e))?,
        kind: TxKind::from_token(fields[1]).ok_or_else(|| bad(record, "kind", fields[1]))?,
        sender: parse_address(record, "sender", fields[2])?,
        recipient: opt("recipient", fields[3])?,
        spender: opt("spender", fields[4])?,
        amount: parse_amount(record, fields[5])?,
    })
}

pub fn encode_transaction(tx: &Transaction) -> String {
    format!("TX {}", encode_tx_fields(tx))
}

pub fn decode_transaction(line: &str) -> Result<Transaction, WireError> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.split_first() {
        Some((&"TX", rest)) => decode_tx_fields("TX", rest),
        _ => Err(WireError::UnexpectedLine(line.to_string())),
    }
}

fn encode_status(status: ExecStatus) -> String {
    status.to_string()
}

fn decode_status(record: &'static str, token: &str) -> Result<ExecStatus, WireError> {
    if token == "OK" {
        return Ok(ExecStatus::Ok);
    }
    token
        .strip_prefix("REJECTED(")
        .and_then(|r| r.strip_suffix(')'))
        .and_then(|r| r.parse::<ExecReason>().ok())
        .map(ExecStatus::Rejected)
        .ok_or_else(|| bad(record, "status", token))
}

fn encode_list<T>(items: &[T], encode: impl Fn(&T) -> String) -> String {
    if items.is_empty() {
        "-".into()
    } else {
        items.iter().map(encode).collect::<Vec<_>>().join(",")
    }
}

fn decode_list<T>(
    field: &str,
    decode: impl Fn(&str) -> Result<T, WireError>,
) -> Result<Vec<T>, WireError> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field.split(',').map(&decode).collect()
}

/// `EXEC <tx fields> <status> <ops|-> <allowance marks|->`
pub fn encode_executed_tx(etx: &ExecutedTx) -> String {
    format!(
        "EXEC {} {} {} {}",
        encode_tx_fields(&etx.tx),
        encode_status(etx.status),
        encode_list(&etx.ops.balance, encode_operation),
        encode_list(&etx.ops.allowance, encode_allowance_mark),
    )
}

pub fn decode_executed_tx(line: &str) -> Result<ExecutedTx, WireError> {
    const R: &str = "EXEC";
    let fields: Vec<&str> = line.split_whitespace().collect();
    let rest = match fields.split_first() {
        Some((&"EXEC", rest)) => rest,
        _ => return Err(WireError::UnexpectedLine(line.to_string())),
    };
    decode_executed_fields(R, rest)
}

fn decode_executed_fields(record: &'static str, fields: &[&str]) -> Result<ExecutedTx, WireError> {
    if fields.len() != 9 {
        return Err(WireError::FieldCount { record, expected: 9, got: fields.len() });
    }
    let tx = decode_tx_fields(record, &fields[..6])?;
    let status = decode_status(record, fields[6])?;
    let ops = OperationSet {
        balance: decode_list(fields[7], decode_operation)?,
        allowance: decode_list(fields[8], decode_allowance_mark)?,
    };
    Ok(ExecutedTx { tx, ops, status })
}

// --- commit statuses ---------------------------------------------------------

pub fn encode_commit_status(status: &CommitStatus) -> String {
    format!("STATUS {} {}", status.tx_id, status.outcome)
}

pub fn decode_outcome(token: &str) -> Result<Outcome, WireError> {
    const R: &str = "STATUS";
    if token == "COMMITTED" {
        return Ok(Outcome::Committed);
    }
    token
        .strip_prefix("FAILED(")
        .and_then(|r| r.strip_suffix(')'))
        .and_then(|r| r.parse::<FailReason>().ok())
        .map(Outcome::Failed)
        .ok_or_else(|| bad(R, "outcome", token))
}

pub fn decode_commit_status(line: &str) -> Result<CommitStatus, WireError> {
    const R: &str = "STATUS";
    let fields: Vec<&str> = line.split_whitespace().collect();
    match fields.as_slice() {
        ["STATUS", tx_id, outcome] => Ok(CommitStatus {
            tx_id: tx_id.parse::<TxId>().map_err(|e| bad(R, "tx_id", e))?,
            outcome: decode_outcome(outcome)?,
        }),
        _ => Err(WireError::UnexpectedLine(line.to_string())),
    }
}

// --- ordered blocks ----------------------------------------------------------

/// Multi-line block encoding:
///
/// ```text
/// BLOCKBEGIN <epoch>
/// E <executed tx fields>
/// U <executed tx fields>
/// BLOCKEND
/// ```
pub fn encode_block(block: &OrderedBlock) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "BLOCKBEGIN {}", block.epoch);
    for etx in &block.t_e {
        let _ = writeln!(out, "E {}", encode_executed_tx(etx).trim_start_matches("EXEC "));
    }
    for etx in &block.t_u {
        let _ = writeln!(out, "U {}", encode_executed_tx(etx).trim_start_matches("EXEC "));
    }
    out.push_str("BLOCKEND\n");
    out
}

pub fn decode_block(text: &str) -> Result<OrderedBlock, WireError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(WireError::Truncated)?;
    let epoch = header
        .strip_prefix("BLOCKBEGIN ")
        .and_then(|e| e.parse::<u64>().ok())
        .ok_or_else(|| WireError::UnexpectedLine(header.to_string()))?;

    let mut t_e = Vec::new();
    let mut t_u = Vec::new();
    for line in lines {
        if line == "BLOCKEND" {
            let block = OrderedBlock::new(epoch, t_e, t_u)
                .map_err(|e| WireError::InvalidBlock(e.to_string()))?;
            return Ok(block);
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.split_first() {
            Some((&"E", rest)) => t_e.push(decode_executed_fields("E", rest)?),
            Some((&"U", rest)) => t_u.push(decode_executed_fields("U", rest)?),
            _ => return Err(WireError::UnexpectedLine(line.to_string())),
        }
    }
    Err(WireError::Truncated)
}
