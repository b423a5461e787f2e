//! Scenario files: a line-oriented description of a world (rollup count,
//! genesis balances, deduction policies) and the epoch scripts to run.
//!
//! ```text
//! ROLLUPS <n>
//! GENESIS <rollup_id> <address> <amount>
//! POLICY <address> <id,id,...>
//! EPOCH
//! E20XFER <rollup> <from> <to> <amount>
//! E20APPROVE <rollup> <owner> <spender> <amount>
//! E20XFERFROM <rollup> <spender> <owner> <to> <amount>
//! U20XFER <rollup> <from> <to> <amount>
//! U20APPROVE <rollup> <owner> <spender> <amount>
//! U20XFERFROM <rollup> <spender> <owner> <to> <amount>
//! ```
//!
//! Lines starting with `#` and blank lines are ignored. `ROLLUPS` comes
//! first; `GENESIS` and `POLICY` lines belong to the header before the first
//! `EPOCH` marker; action lines may appear only after an `EPOCH` marker.

use std::fmt;

use crate::types::{Address, Amount, RollupId};
use crate::upsilon20::DeductionPolicy;

/// One scripted user action, addressed to a rollup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Erc20Transfer { from: Address, to: Address, amount: Amount },
    Erc20TransferFrom { spender: Address, owner: Address, to: Address, amount: Amount },
    Erc20Approve { owner: Address, spender: Address, amount: Amount },
    Uat20Transfer { from: Address, to: Address, amount: Amount },
    Uat20TransferFrom { spender: Address, owner: Address, to: Address, amount: Amount },
    Uat20Approve { owner: Address, spender: Address, amount: Amount },
}

impl Action {
    pub fn is_uat20(&self) -> bool {
        matches!(
            self,
            Action::Uat20Transfer { .. }
                | Action::Uat20TransferFrom { .. }
                | Action::Uat20Approve { .. }
        )
    }
}

/// A parsed scenario: the world plus its epoch scripts. Genesis is given per
/// rollup; the global balances are derived as sums, so the aggregation
/// invariant holds at genesis by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub rollups: u32,
    pub genesis: Vec<(RollupId, Address, Amount)>,
    pub policies: Vec<DeductionPolicy>,
    pub epochs: Vec<Vec<(RollupId, Action)>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ParseError {}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError { line, message: message.into() }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ParseError> {
    let mut rollups: Option<u32> = None;
    let mut genesis: Vec<(RollupId, Address, Amount)> = Vec::new();
    let mut policies: Vec<DeductionPolicy> = Vec::new();
    let mut epochs: Vec<Vec<(RollupId, Action)>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let directive = fields[0];

        if directive == "ROLLUPS" {
            if rollups.is_some() {
                return Err(err(lineno, "duplicate ROLLUPS directive"));
            }
            if !genesis.is_empty() || !policies.is_empty() || !epochs.is_empty() {
                return Err(err(lineno, "ROLLUPS must be the first directive"));
            }
            let n = parse_field::<u32>(lineno, &fields, 1, "rollup count")?;
            if n == 0 {
                return Err(err(lineno, "rollup count must be at least 1"));
            }
            expect_len(lineno, &fields, 2)?;
            rollups = Some(n);
            continue;
        }

        let n = rollups.ok_or_else(|| err(lineno, "ROLLUPS must come before any other directive"))?;
        match directive {
            "GENESIS" => {
                if !epochs.is_empty() {
                    return Err(err(lineno, "GENESIS lines must precede the first EPOCH"));
                }
                expect_len(lineno, &fields, 4)?;
                let rollup = parse_rollup(lineno, fields[1], n)?;
                let address = parse_address(lineno, fields[2])?;
                let amount = parse_field::<Amount>(lineno, &fields, 3, "amount")?;
                if genesis.iter().any(|(r, a, _)| *r == rollup && *a == address) {
                    return Err(err(lineno, format!("duplicate GENESIS entry for {address} on rollup {rollup}")));
                }
                genesis.push((rollup, address, amount));
            }
            "POLICY" => {
                if !epochs.is_empty() {
                    return Err(err(lineno, "POLICY lines must precede the first EPOCH"));
                }
                expect_len(lineno, &fields, 3)?;
                let owner = parse_address(lineno, fields[1])?;
                let priority: Vec<RollupId> = fields[2]
                    .split(',')
                    .map(|tok| parse_rollup(lineno, tok, n))
                    .collect::<Result<_, _>>()?;
                if policies.iter().any(|p| p.owner == owner) {
                    return Err(err(lineno, format!("duplicate POLICY for {owner}")));
                }
                let policy = DeductionPolicy::new(owner, priority, n)
                    .map_err(|e| err(lineno, e.to_string()))?;
                policies.push(policy);
            }
            "EPOCH" => {
                expect_len(lineno, &fields, 1)?;
                epochs.push(Vec::new());
            }
            _ => {
                let action = parse_action(lineno, &fields, n)?;
                match epochs.last_mut() {
                    Some(script) => script.push(action),
                    None => return Err(err(lineno, "action line before the first EPOCH marker")),
                }
            }
        }
    }

    let rollups = rollups.ok_or_else(|| err(text.lines().count().max(1), "missing ROLLUPS directive"))?;
    Ok(Scenario { rollups, genesis, policies, epochs })
}

fn expect_len(line: usize, fields: &[&str], want: usize) -> Result<(), ParseError> {
    if fields.len() != want {
        return Err(err(
            line,
            format!("{} expects {} fields, got {}", fields[0], want - 1, fields.len() - 1),
        ));
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(
    line: usize,
    fields: &[&str],
    idx: usize,
    what: &str,
) -> Result<T, ParseError>
where
    T::Err: fmt::Display,
{
    let text = fields
        .get(idx)
        .ok_or_else(|| err(line, format!("missing {what}")))?;
    text.parse::<T>().map_err(|e| err(line, format!("bad {what} {text:?}: {e}")))
}

fn parse_rollup(line: usize, text: &str, n: u32) -> Result<RollupId, ParseError> {
    let id: u32 = text
        .parse()
        .map_err(|e| err(line, format!("bad rollup id {text:?}: {e}")))?;
    if id < 1 || id > n {
        return Err(err(line, format!("rollup id {id} outside declared range 1..={n}")));
    }
    Ok(RollupId::new(id))
}

fn parse_address(line: usize, text: &str) -> Result<Address, ParseError> {
    Address::parse(text).map_err(|e| err(line, format!("bad address {text:?}: {e}")))
}

fn parse_action(lineno: usize, fields: &[&str], n: u32) -> Result<(RollupId, Action), ParseError> {
    let addr = |idx: usize| parse_address(lineno, fields[idx]);
    match fields[0] {
        "E20XFER" | "U20XFER" => {
            expect_len(lineno, fields, 5)?;
            let rollup = parse_rollup(lineno, fields[1], n)?;
            let (from, to) = (addr(2)?, addr(3)?);
            let amount = parse_field::<Amount>(lineno, fields, 4, "amount")?;
            let action = if fields[0] == "E20XFER" {
                Action::Erc20Transfer { from, to, amount }
            } else {
                Action::Uat20Transfer { from, to, amount }
            };
            Ok((rollup, action))
        }
        "E20APPROVE" | "U20APPROVE" => {
            expect_len(lineno, fields, 5)?;
            let rollup = parse_rollup(lineno, fields[1], n)?;
            let (owner, spender) = (addr(2)?, addr(3)?);
            let amount = parse_field::<Amount>(lineno, fields, 4, "amount")?;
            let action = if fields[0] == "E20APPROVE" {
                Action::Erc20Approve { owner, spender, amount }
            } else {
                Action::Uat20Approve { owner, spender, amount }
            };
            Ok((rollup, action))
        }
        "E20XFERFROM" | "U20XFERFROM" => {
            expect_len(lineno, fields, 6)?;
            let rollup = parse_rollup(lineno, fields[1], n)?;
            let (spender, owner, to) = (addr(2)?, addr(3)?, addr(4)?);
            let amount = parse_field::<Amount>(lineno, fields, 5, "amount")?;
            let action = if fields[0] == "E20XFERFROM" {
                Action::Erc20TransferFrom { spender, owner, to, amount }
            } else {
                Action::Uat20TransferFrom { spender, owner, to, amount }
            };
            Ok((rollup, action))
        }
        other => Err(err(lineno, format!("unknown directive {other:?}"))),
    }
}
