//! Deterministic scenario runner and property checker.
//!
//! Builds a world of n rollups from a [`Scenario`], drives each epoch
//! through execute → broadcast → seal → sync, and verifies the protocol
//! invariants after genesis and after every epoch:
//!
//! - aggregation: `B_u[a] = Σ_i B_e^i[a]` for every address, exactly
//! - global_conservation: `Σ_a B_u[a]` never changes
//! - digest_convergence: all replicas are digest-equal
//! - status_agreement: all replicas report identical commit statuses
//! - mirror_equality: every replica's `B_e^i` equals rollup i's ERC20 state
//!
//! Everything here is a pure function of its inputs: running the same
//! scenario (or the same fuzz seed and config) twice produces byte-identical
//! reports.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::coordinator::{Coordinator, CoordinatorError};
use crate::scenario::{Action, Scenario};
use crate::sigma20::Erc20State;
use crate::synchronizer::{self, SyncError, SyncRecord};
use crate::types::{
    Address, Amount, BalanceMap, CommitStatus, ExecReason, ExecutedTx, OrderedBlock, RollupId,
    TxId,
};
use crate::upsilon20::{BalanceBook, DeductionPolicy, Replica};

pub const INVARIANT_NAMES: [&str; 5] = [
    "aggregation",
    "global_conservation",
    "digest_convergence",
    "status_agreement",
    "mirror_equality",
];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("invariant_violation({name}, epoch {epoch}): {diagnostic}")]
    InvariantViolation {
        name: &'static str,
        epoch: u64,
        diagnostic: String,
    },
    #[error("epoch_mismatch: replicas are at different epochs")]
    EpochMismatch,
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

/// One rollup's full stack: its ERC20 instance, its UAT20 replica, and the
/// epoch outbox awaiting broadcast.
#[derive(Debug, Clone)]
pub struct Rollup {
    pub sigma: Erc20State,
    pub replica: Replica,
    outbox: Vec<ExecutedTx>,
    next_seq: u64,
}

impl Rollup {
    fn id(&self) -> RollupId {
        self.replica.rollup
    }

    /// Executes one scripted action, assigning the next submission index.
    /// OK executions enter the outbox; rejections are reported and dropped.
    fn execute(&mut self, action: &Action, epoch: u64) -> Option<(TxId, ExecReason)> {
        let seq = self.next_seq;
        self.next_seq += 1;
        let etx = match action {
            Action::Erc20Transfer { from, to, amount } => {
                self.sigma.execute_transfer(from, to, *amount, epoch, seq)
            }
            Action::Erc20TransferFrom { spender, owner, to, amount } => {
                self.sigma.execute_transfer_from(spender, owner, to, *amount, epoch, seq)
            }
            Action::Erc20Approve { owner, spender, amount } => {
                self.sigma.execute_approve(owner, spender, *amount, epoch, seq)
            }
            Action::Uat20Transfer { from, to, amount } => {
                self.replica.execute_uat_transfer(from, to, *amount, epoch, seq)
            }
            Action::Uat20TransferFrom { spender, owner, to, amount } => {
                self.replica.execute_uat_transfer_from(spender, owner, to, *amount, epoch, seq)
            }
            Action::Uat20Approve { owner, spender, amount } => {
                self.replica.execute_uat_approve(owner, spender, *amount, epoch, seq)
            }
        };
        match etx.status {
            crate::types::ExecStatus::Ok => {
                self.outbox.push(etx);
                None
            }
            crate::types::ExecStatus::Rejected(reason) => Some((etx.tx.tx_id, reason)),
        }
    }
}

/// The simulated world: all rollups plus the coordinator.
#[derive(Debug, Clone)]
pub struct World {
    pub rollups: Vec<Rollup>,
    coordinator: Coordinator,
    genesis_supply: Amount,
}

impl World {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, HarnessError> {
        let n = scenario.rollups;
        if n == 0 {
            return Err(HarnessError::InvalidScenario("rollup count must be at least 1".into()));
        }

        let mut locals: BTreeMap<RollupId, BalanceMap> =
            RollupId::all(n).map(|id| (id, BalanceMap::new())).collect();
        for (rollup, address, amount) in &scenario.genesis {
            let local = locals.get_mut(rollup).ok_or_else(|| {
                HarnessError::InvalidScenario(format!("genesis rollup {rollup} out of range"))
            })?;
            local
                .credit(address, *amount)
                .map_err(|e| HarnessError::InvalidScenario(format!("genesis overflow: {e}")))?;
        }

        let mut policies: BTreeMap<Address, DeductionPolicy> = BTreeMap::new();
        for policy in &scenario.policies {
            if policy.priority.len() != n as usize {
                return Err(HarnessError::InvalidScenario(format!(
                    "policy for {} does not cover all {n} rollups",
                    policy.owner
                )));
            }
            if policies.insert(policy.owner.clone(), policy.clone()).is_some() {
                return Err(HarnessError::InvalidScenario(format!(
                    "duplicate policy for {}",
                    policy.owner
                )));
            }
        }

        let book = BalanceBook::from_locals(locals.clone())
            .map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;
        let genesis_supply = book
            .global_supply()
            .map_err(|e| HarnessError::InvalidScenario(e.to_string()))?;

        let rollups = RollupId::all(n)
            .map(|id| Rollup {
                sigma: Erc20State::with_balances(id, locals[&id].clone()),
                replica: Replica::new(id, book.clone(), policies.clone()),
                outbox: Vec::new(),
                next_seq: 0,
            })
            .collect();

        Ok(World { rollups, coordinator: Coordinator::new(n), genesis_supply })
    }

    pub fn rollup_count(&self) -> u32 {
        self.rollups.len() as u32
    }

    /// The epoch the coordinator is currently collecting.
    pub fn current_epoch(&self) -> u64 {
        self.coordinator.current_epoch()
    }

    fn rollup_mut(&mut self, id: RollupId) -> Result<&mut Rollup, HarnessError> {
        self.rollups
            .get_mut((id.get() - 1) as usize)
            .ok_or_else(|| HarnessError::InvalidScenario(format!("action rollup {id} out of range")))
    }

    /// Executes one epoch script on the addressed rollups.
    pub fn execute_epoch(
        &mut self,
        script: &[(RollupId, Action)],
    ) -> Result<Vec<(TxId, ExecReason)>, HarnessError> {
        let epoch = self.current_epoch();
        for rollup in &mut self.rollups {
            rollup.next_seq = 0;
        }
        let mut rejects = Vec::new();
        for (id, action) in script {
            let rollup = self.rollup_mut(*id)?;
            if let Some(reject) = rollup.execute(action, epoch) {
                rejects.push(reject);
            }
        }
        Ok(rejects)
    }

    /// Broadcasts every rollup's outbox to the coordinator.
    pub fn broadcast_all(&mut self) -> Result<(), HarnessError> {
        for rollup in &mut self.rollups {
            let id = rollup.id();
            synchronizer::broadcast(&mut rollup.outbox, id, &mut self.coordinator)?;
        }
        Ok(())
    }

    pub fn seal(&mut self) -> Result<OrderedBlock, HarnessError> {
        Ok(self.coordinator.seal_epoch()?)
    }

    /// Delivers a sealed block to every replica.
    pub fn sync_all(
        &mut self,
        block: &OrderedBlock,
    ) -> Result<Vec<(RollupId, Vec<CommitStatus>)>, HarnessError> {
        let mut deliveries = Vec::with_capacity(self.rollups.len());
        for rollup in &mut self.rollups {
            let statuses = synchronizer::sync(block, &mut rollup.replica, &mut rollup.sigma)?;
            deliveries.push((rollup.id(), statuses));
        }
        Ok(deliveries)
    }

    pub fn replicas(&self) -> Vec<&Replica> {
        self.rollups.iter().map(|r| &r.replica).collect()
    }

    /// Checks every state invariant; `statuses` carries the epoch's
    /// per-replica delivery results when one was committed.
    pub fn check_invariants(
        &self,
        epoch: u64,
        deliveries: Option<&[(RollupId, Vec<CommitStatus>)]>,
    ) -> Result<(), HarnessError> {
        let violation = |name: &'static str, diagnostic: String| HarnessError::InvariantViolation {
            name,
            epoch,
            diagnostic,
        };

        for rollup in &self.rollups {
            if let Some(addr) = rollup.replica.book.aggregation_violation() {
                return Err(violation(
                    "aggregation",
                    format!("replica {}: B_u[{addr}] != sum of mirrors", rollup.id()),
                ));
            }
        }

        for rollup in &self.rollups {
            let supply = rollup
                .replica
                .book
                .global_supply()
                .map_err(|e| violation("global_conservation", e.to_string()))?;
            if supply != self.genesis_supply {
                return Err(violation(
                    "global_conservation",
                    format!(
                        "replica {}: supply {supply} != genesis {}",
                        rollup.id(),
                        self.genesis_supply
                    ),
                ));
            }
        }

        let convergence = check_convergence(&self.replicas())?;
        if !convergence.converged {
            return Err(violation(
                "digest_convergence",
                convergence.first_divergence.unwrap_or_else(|| "digests differ".into()),
            ));
        }

        if let Some(deliveries) = deliveries {
            let mut record = SyncRecord::new(epoch, self.rollup_count());
            for (id, statuses) in deliveries {
                record.record(*id, statuses.clone());
            }
            if !record.is_complete() {
                return Err(violation(
                    "status_agreement",
                    "replicas disagree on commit statuses".into(),
                ));
            }
        }

        for host in &self.rollups {
            for rollup in &self.rollups {
                let mirror = rollup.replica.book.local_map(host.id());
                if mirror != Some(&host.sigma.balances) {
                    return Err(violation(
                        "mirror_equality",
                        format!(
                            "replica {} mirror of rollup {} differs from its ERC20 state",
                            rollup.id(),
                            host.id()
                        ),
                    ));
                }
            }
        }

        Ok(())
    }

    /// Canonical state dump: every rollup's ERC20 lines, then the replicated
    /// UAT20 state (identical on all replicas, taken from replica 1).
    pub fn dump_lines(&self) -> Vec<String> {
        let mut lines = Vec::new();
        for rollup in &self.rollups {
            lines.extend(rollup.sigma.dump_lines());
        }
        if let Some(first) = self.rollups.first() {
            lines.extend(first.replica.dump_lines());
        }
        lines
    }
}

/// Convergence check outcome; on divergence, names the first differing
/// canonical state line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub first_divergence: Option<String>,
}

/// True iff all replicas have equal state digests. Replicas must be at the
/// same epoch.
pub fn check_convergence(replicas: &[&Replica]) -> Result<ConvergenceReport, HarnessError> {
    let Some((first, rest)) = replicas.split_first() else {
        return Ok(ConvergenceReport { converged: true, first_divergence: None });
    };
    if rest.iter().any(|r| r.epoch != first.epoch) {
        return Err(HarnessError::EpochMismatch);
    }
    let reference = first.state_digest();
    for replica in rest {
        if replica.state_digest() != reference {
            let ours = first.canonical_lines();
            let theirs = replica.canonical_lines();
            let divergence = ours
                .iter()
                .zip(theirs.iter())
                .find(|(a, b)| a != b)
                .map(|(a, b)| {
                    format!("replica {} has {a:?}, replica {} has {b:?}", first.rollup, replica.rollup)
                })
                .unwrap_or_else(|| {
                    format!(
                        "replica {} dumps {} lines, replica {} dumps {}",
                        first.rollup,
                        ours.len(),
                        replica.rollup,
                        theirs.len()
                    )
                });
            return Ok(ConvergenceReport { converged: false, first_divergence: Some(divergence) });
        }
    }
    Ok(ConvergenceReport { converged: true, first_divergence: None })
}

/// One epoch's results inside a [`RunReport`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpochReport {
    pub epoch: u64,
    pub rejects: Vec<(TxId, ExecReason)>,
    pub block_summary: String,
    /// The agreed status list (identical on every replica).
    pub statuses: Vec<CommitStatus>,
    pub deliveries: Vec<(RollupId, Vec<CommitStatus>)>,
}

/// Full record of a scenario run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunReport {
    pub rollups: u32,
    pub epochs: Vec<EpochReport>,
    pub final_state: Vec<String>,
    /// Every invariant with its final verdict; a violation aborts the run
    /// instead, so a completed report is all-PASS by construction.
    pub invariants: Vec<(&'static str, bool)>,
    pub digest: String,
}

/// Rendering switches for [`RunReport::render`].
#[derive(Debug, Clone, Copy, Default)]
pub struct ReportOptions {
    /// Include per-replica `SYNC` delivery lines.
    pub trace: bool,
    /// Include the final `STATE` dump section.
    pub dump_state: bool,
}

impl RunReport {
    /// Renders the report as stable line-oriented text.
    pub fn render(&self, opts: &ReportOptions) -> String {
        let mut out = String::new();
        out.push_str(&format!("RUN rollups={} epochs={}\n", self.rollups, self.epochs.len()));
        for epoch in &self.epochs {
            out.push_str(&format!("EPOCH {}\n", epoch.epoch));
            for (tx_id, reason) in &epoch.rejects {
                out.push_str(&format!("REJECT {tx_id} {reason}\n"));
            }
            out.push_str(&epoch.block_summary);
            out.push('\n');
            for status in &epoch.statuses {
                out.push_str(&format!("STATUS {} {}\n", status.tx_id, status.outcome));
            }
            if opts.trace {
                for (id, statuses) in &epoch.deliveries {
                    out.push_str(&synchronizer::sync_trace_line(epoch.epoch, *id, statuses));
                    out.push('\n');
                }
            }
        }
        if opts.dump_state {
            out.push_str("STATE\n");
            for line in &self.final_state {
                out.push_str(line);
                out.push('\n');
            }
        }
        for (name, pass) in &self.invariants {
            out.push_str(&format!("INVARIANT {name} {}\n", if *pass { "PASS" } else { "FAIL" }));
        }
        out.push_str(&format!("DIGEST {}\n", self.digest));
        out
    }

    /// The agreed outcome of one transaction, if it was committed this run.
    pub fn outcome_of(&self, tx_id: TxId) -> Option<&CommitStatus> {
        self.epochs
            .iter()
            .flat_map(|e| e.statuses.iter())
            .find(|s| s.tx_id == tx_id)
    }
}

/// Runs a scenario end to end, checking every invariant after genesis and
/// after each epoch. A violation aborts the run with a diagnostic.
pub fn run_scenario(scenario: &Scenario) -> Result<RunReport, HarnessError> {
    let mut world = World::from_scenario(scenario)?;
    world.check_invariants(0, None)?;

    let mut epochs = Vec::with_capacity(scenario.epochs.len());
    for script in &scenario.epochs {
        let epoch = world.current_epoch();
        let rejects = world.execute_epoch(script)?;
        world.broadcast_all()?;
        let block = world.seal()?;
        let deliveries = world.sync_all(&block)?;
        world.check_invariants(epoch, Some(&deliveries))?;
        epochs.push(EpochReport {
            epoch,
            rejects,
            block_summary: Coordinator::block_summary(&block),
            statuses: deliveries.first().map(|(_, s)| s.clone()).unwrap_or_default(),
            deliveries,
        });
    }

    let digest = world.rollups[0].replica.state_digest();
    Ok(RunReport {
        rollups: world.rollup_count(),
        epochs,
        final_state: world.dump_lines(),
        invariants: INVARIANT_NAMES.iter().map(|name| (*name, true)).collect(),
        digest,
    })
}

/// Fuzz workload shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzConfig {
    pub rollups: u32,
    pub users: u32,
    pub epochs: u32,
    pub txs_per_epoch: u32,
    pub max_amount: Amount,
    /// Percentage of UAT20 transfers whose amount is forced above the total
    /// supply, guaranteeing a commit-phase conflict.
    pub overdraft_percent: u32,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            rollups: 3,
            users: 5,
            epochs: 10,
            txs_per_epoch: 8,
            max_amount: 100,
            overdraft_percent: 25,
        }
    }
}

/// The `k`-th fuzz user address: zero-padded with `k + 1` in the last four
/// bytes.
pub fn fuzz_user(k: u32) -> Address {
    let mut bytes = [0u8; 20];
    bytes[16..].copy_from_slice(&(k + 1).to_be_bytes());
    Address::from_bytes(bytes)
}

/// Deterministically generates a scenario from a 64-bit seed.
///
/// The generator is fixed so runs are reproducible: a ChaCha8 stream seeded
/// with `seed` drives, in order, (1) one amount draw per (rollup, user)
/// genesis cell, (2) one coin flip per user for a shuffled deduction policy,
/// (3) per transaction: rollup, kind (weights 3:3:1:1:1:1 for ERC20 / UAT20
/// transfers, transferFroms, approvals), parties, amount, and for UAT20
/// transfers an overdraft flip that inflates the amount past total supply.
pub fn generate_scenario(seed: u64, cfg: &FuzzConfig) -> Scenario {
    assert!(cfg.rollups >= 1 && cfg.users >= 1, "fuzz config bounds must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.rollups;

    let mut genesis = Vec::new();
    let mut total_supply: Amount = 0;
    for rollup in RollupId::all(n) {
        for user in 0..cfg.users {
            let amount = rng.random_range(0..=cfg.max_amount);
            if amount > 0 {
                genesis.push((rollup, fuzz_user(user), amount));
                total_supply += amount;
            }
        }
    }

    let mut policies = Vec::new();
    for user in 0..cfg.users {
        if rng.random_bool(0.5) {
            let mut priority: Vec<RollupId> = RollupId::all(n).collect();
            priority.shuffle(&mut rng);
            let owner = fuzz_user(user);
            policies.push(DeductionPolicy::new(owner, priority, n).expect("shuffle is a permutation"));
        }
    }

    let mut epochs = Vec::with_capacity(cfg.epochs as usize);
    for _ in 0..cfg.epochs {
        let mut script = Vec::with_capacity(cfg.txs_per_epoch as usize);
        for _ in 0..cfg.txs_per_epoch {
            let rollup = RollupId::new(rng.random_range(1..=n));
            let kind = rng.random_range(0u32..10);
            let mut party = || fuzz_user(rng.random_range(0..cfg.users));
            let (a, b, c) = (party(), party(), party());
            let mut amount = rng.random_range(0..=cfg.max_amount);
            let uat_transfer = matches!(kind, 3..=5 | 7);
            if uat_transfer
                && cfg.overdraft_percent > 0
                && rng.random_range(0..100) < cfg.overdraft_percent
            {
                amount += total_supply + 1;
            }
            let action = match kind {
                0..=2 => Action::Erc20Transfer { from: a, to: b, amount },
                3..=5 => Action::Uat20Transfer { from: a, to: b, amount },
                6 => Action::Erc20TransferFrom { spender: a, owner: b, to: c, amount },
                7 => Action::Uat20TransferFrom { spender: a, owner: b, to: c, amount },
                8 => Action::Erc20Approve { owner: a, spender: b, amount },
                _ => Action::Uat20Approve { owner: a, spender: b, amount },
            };
            script.push((rollup, action));
        }
        epochs.push(script);
    }

    Scenario { rollups: n, genesis, policies, epochs }
}

/// Generates and runs one seeded scenario. Identical (seed, cfg) inputs
/// reproduce identical reports.
pub fn fuzz(seed: u64, cfg: &FuzzConfig) -> Result<RunReport, HarnessError> {
    run_scenario(&generate_scenario(seed, cfg))
}

/// Counters from a [`check_permutation_invariance`] sweep.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PermutationStats {
    pub epochs_swept: usize,
    pub tu_permutations: usize,
    pub te_permutations: usize,
}

/// Exhaustively permutes each epoch's sealed queues and verifies that
/// arbitration-order sensitivity is confined to `T_U`:
///
/// - every permutation of `T_U` leaves all replicas digest-equal with
///   identical statuses (per-permutation agreement), and
/// - every permutation of `T_E` commits to exactly the same book as the
///   canonical order.
///
/// Queues longer than `max_queue` are skipped (factorial growth); the
/// canonical run then proceeds normally.
pub fn check_permutation_invariance(
    scenario: &Scenario,
    max_queue: usize,
) -> Result<PermutationStats, HarnessError> {
    use itertools::Itertools;

    let mut world = World::from_scenario(scenario)?;
    let mut stats = PermutationStats::default();

    for script in &scenario.epochs {
        let epoch = world.current_epoch();
        world.execute_epoch(script)?;
        world.broadcast_all()?;
        let block = world.seal()?;

        // Baseline: the canonical commit on clones of every rollup stack.
        let baseline: Vec<Rollup> = world.rollups.clone();
        let commit = |rollups: &mut Vec<Rollup>,
                      t_e: &[ExecutedTx],
                      t_u: &[ExecutedTx]|
         -> Result<Vec<Vec<CommitStatus>>, HarnessError> {
            let mut all = Vec::with_capacity(rollups.len());
            for rollup in rollups.iter_mut() {
                let mut statuses = rollup.replica.commit_e(t_e).map_err(SyncError::Commit)?;
                statuses.extend(
                    rollup
                        .replica
                        .commit_u(t_u, &mut rollup.sigma)
                        .map_err(SyncError::Commit)?,
                );
                all.push(statuses);
            }
            Ok(all)
        };

        let divergence = |name: &'static str, detail: String| HarnessError::InvariantViolation {
            name,
            epoch,
            diagnostic: detail,
        };

        // Post-commitE book under canonical order, for the T_E sweep.
        let mut canonical = baseline.clone();
        for rollup in canonical.iter_mut() {
            rollup.replica.commit_e(&block.t_e).map_err(SyncError::Commit)?;
        }
        let canonical_book = canonical[0].replica.book.clone();

        if block.t_e.len() <= max_queue {
            for perm in block.t_e.iter().cloned().permutations(block.t_e.len()) {
                let mut clones = baseline.clone();
                for rollup in clones.iter_mut() {
                    rollup.replica.commit_e(&perm).map_err(SyncError::Commit)?;
                    if rollup.replica.book != canonical_book {
                        return Err(divergence(
                            "te_order_independence",
                            format!(
                                "replica {} book changed under a T_E permutation",
                                rollup.id()
                            ),
                        ));
                    }
                }
                stats.te_permutations += 1;
            }
        }

        if block.t_u.len() <= max_queue {
            for perm in block.t_u.iter().cloned().permutations(block.t_u.len()) {
                let mut clones = baseline.clone();
                let statuses = commit(&mut clones, &block.t_e, &perm)?;
                let reference = &statuses[0];
                if statuses.iter().any(|s| s != reference) {
                    return Err(divergence(
                        "status_agreement",
                        "replicas disagree under a T_U permutation".into(),
                    ));
                }
                let digest = clones[0].replica.state_digest();
                for rollup in &clones {
                    if rollup.replica.state_digest() != digest {
                        return Err(divergence(
                            "digest_convergence",
                            format!(
                                "replica {} diverges under a T_U permutation",
                                rollup.id()
                            ),
                        ));
                    }
                    if let Some(addr) = rollup.replica.book.aggregation_violation() {
                        return Err(divergence(
                            "aggregation",
                            format!("B_u[{addr}] mismatch under a T_U permutation"),
                        ));
                    }
                }
                stats.tu_permutations += 1;
            }
        }

        // Proceed with the canonical order.
        let deliveries = world.sync_all(&block)?;
        world.check_invariants(epoch, Some(&deliveries))?;
        stats.epochs_swept += 1;
    }

    Ok(stats)
}
