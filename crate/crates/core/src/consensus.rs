//! PBFT consensus over a hash-linked block ledger.
//!
//! Each round, the rotating primary packs the K submitted local models plus
//! its recomputed global model into a block and the servers run the
//! pre-prepare / prepare / commit / reply exchange as a synchronous,
//! in-process message-counting engine. Honest validators accept a block only
//! if every transaction digest verifies and their own recomputation of the
//! global model matches the proposal exactly; `2f` matching prepare votes
//! from validators and `2f` matching commit votes unlock each phase.
//!
//! Digests are a content-hash stand-in (FNV-1a 64) for real signatures; the
//! CPU cost of signing is priced separately by the latency model. Malicious
//! behaviors cover the cases the experiments need: a tampering proposer, a
//! silent server, and an equivocator that shows different digests to
//! different peers.

use std::fmt;

use crate::aggregation::ModelVector;
use crate::{Error, Result};

/// Content-hash stand-in used for transaction and block digests.
pub fn content_digest(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// A signed model submission.
#[derive(Debug, Clone, PartialEq)]
pub struct Transaction {
    pub payload: ModelVector,
    pub signer: u32,
    pub digest: u64,
}

impl Transaction {
    pub fn new(payload: ModelVector, signer: u32) -> Self {
        let digest = Self::compute_digest(&payload, signer);
        Self { payload, signer, digest }
    }

    fn compute_digest(payload: &ModelVector, signer: u32) -> u64 {
        content_digest(&[&payload.to_bytes(), &signer.to_le_bytes()])
    }

    pub fn verify(&self) -> bool {
        Self::compute_digest(&self.payload, self.signer) == self.digest
    }
}

/// A ledger entry: K local-model transactions plus the global-model
/// transaction, hash-linked to the previous block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub height: u64,
    pub prev_digest: u64,
    pub transactions: Vec<Transaction>,
    pub proposer: u32,
    pub digest: u64,
}

impl Block {
    pub fn new(height: u64, prev_digest: u64, transactions: Vec<Transaction>, proposer: u32) -> Self {
        let digest = Self::compute_digest(height, prev_digest, &transactions, proposer);
        Self { height, prev_digest, transactions, proposer, digest }
    }

    fn compute_digest(height: u64, prev_digest: u64, txs: &[Transaction], proposer: u32) -> u64 {
        let mut parts: Vec<Vec<u8>> = vec![height.to_le_bytes().to_vec(), prev_digest.to_le_bytes().to_vec()];
        for tx in txs {
            parts.push(tx.digest.to_le_bytes().to_vec());
        }
        parts.push(proposer.to_le_bytes().to_vec());
        let refs: Vec<&[u8]> = parts.iter().map(|p| p.as_slice()).collect();
        content_digest(&refs)
    }

    /// Digest recomputes and every transaction verifies.
    pub fn verify(&self) -> bool {
        self.transactions.iter().all(Transaction::verify)
            && Self::compute_digest(self.height, self.prev_digest, &self.transactions, self.proposer)
                == self.digest
    }
}

/// Append-only chain starting from a fixed genesis block.
#[derive(Debug, Clone, PartialEq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self { blocks: vec![Block::new(0, 0, Vec::new(), u32::MAX)] }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false // genesis is always present
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("genesis present")
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Test hook: mutable access for tamper experiments.
    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    /// Append if the block extends the tip; rejects digest/height mismatches.
    pub fn append(&mut self, block: Block) -> Result<()> {
        let tip = self.tip();
        if block.prev_digest != tip.digest {
            return Err(Error::Domain(format!(
                "block prev_digest {:016x} does not match tip digest {:016x}",
                block.prev_digest, tip.digest
            )));
        }
        if block.height != tip.height + 1 {
            return Err(Error::Domain(format!(
                "block height {} does not extend tip height {}",
                block.height, tip.height
            )));
        }
        if !block.verify() {
            return Err(Error::Domain("block digest does not verify".into()));
        }
        self.blocks.push(block);
        Ok(())
    }

    /// True iff every digest recomputes and every block links its
    /// predecessor.
    pub fn verify_chain(&self) -> bool {
        for (i, block) in self.blocks.iter().enumerate() {
            if !block.verify() {
                return false;
            }
            if i == 0 {
                if block.height != 0 {
                    return false;
                }
            } else {
                let prev = &self.blocks[i - 1];
                if block.prev_digest != prev.digest || block.height != prev.height + 1 {
                    return false;
                }
            }
        }
        true
    }

    /// Line-delimited structured export for audits: one block per line with
    /// height, digests, proposer, and transaction signers.
    pub fn export_jsonl(&self) -> String {
        use fmt::Write;
        let mut out = String::new();
        for b in &self.blocks {
            let signers: Vec<String> = b.transactions.iter().map(|t| t.signer.to_string()).collect();
            writeln!(
                out,
                "{{\"height\":{},\"prev_digest\":\"{:016x}\",\"digest\":\"{:016x}\",\"proposer\":{},\"signers\":[{}]}}",
                b.height,
                b.prev_digest,
                b.digest,
                b.proposer,
                signers.join(",")
            )
            .expect("string write");
        }
        out
    }
}

/// Per-scenario behavior of one server.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServerBehavior {
    Honest,
    /// Proposes a corrupted aggregate when primary; votes for a tampered
    /// digest when validating.
    TamperGlobal,
    /// Sends nothing.
    Silent,
    /// Shows the true digest to peers of matching parity and a private fake
    /// digest to the rest.
    Equivocate,
}

impl ServerBehavior {
    pub fn code(&self) -> char {
        match self {
            ServerBehavior::Honest => 'H',
            ServerBehavior::TamperGlobal => 'T',
            ServerBehavior::Silent => 'S',
            ServerBehavior::Equivocate => 'E',
        }
    }
}

/// Cluster shape: `m = 3f + 1`.
#[derive(Debug, Clone, Copy)]
pub struct ConsensusConfig {
    pub servers: usize,
    pub fault_bound: usize,
}

impl ConsensusConfig {
    pub fn new(servers: usize) -> Result<Self> {
        if servers >= 4 && (servers - 1) % 3 == 0 {
            Ok(Self { servers, fault_bound: (servers - 1) / 3 })
        } else {
            Err(Error::Config(format!(
                "server count must satisfy m = 3f + 1 with f >= 1, got {servers}"
            )))
        }
    }
}

/// Round-robin proposer for the given round.
pub fn rotate_primary(round: u64, servers: usize) -> usize {
    debug_assert!(servers >= 1);
    (round % servers as u64) as usize
}

/// Number of matching votes each phase requires (`2f`).
pub fn quorum(servers: usize) -> Result<usize> {
    Ok(2 * ConsensusConfig::new(servers)?.fault_bound)
}

/// Outcome of one protocol attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundOutcome {
    Committed(Block),
    ViewChange { next_primary: usize },
}

/// Full per-server record of one attempt, for audits and safety checks.
#[derive(Debug, Clone)]
pub struct RoundReport {
    pub outcome: RoundOutcome,
    /// Digest each server took as its local candidate (None = no block seen).
    pub candidate_digests: Vec<Option<u64>>,
    /// Whether each honest server locally accepted the candidate.
    pub accepted: Vec<bool>,
    /// Whether each honest server locally committed.
    pub committed: Vec<bool>,
}

impl RoundReport {
    /// No two honest servers committed different digests.
    pub fn safety_holds(&self, behaviors: &[ServerBehavior]) -> bool {
        let mut committed_digest: Option<u64> = None;
        for (s, &c) in self.committed.iter().enumerate() {
            if behaviors[s] != ServerBehavior::Honest || !c {
                continue;
            }
            match (committed_digest, self.candidate_digests[s]) {
                (None, d) => committed_digest = d,
                (Some(a), Some(b)) if a == b => {}
                _ => return false,
            }
        }
        true
    }
}

fn fake_digest(base: u64, sender: usize) -> u64 {
    base ^ (0x5AFE_0000_0000_0000 | ((sender as u64 + 1) << 8) | 1)
}

fn corrupt_digest_variant(block: &Block) -> Block {
    let mut b = block.clone();
    b.digest ^= 0x00DE_AD00_0000_0001;
    b
}

fn block_content_valid(block: &Block, recompute: &dyn Fn(&[ModelVector]) -> ModelVector) -> bool {
    if !block.verify() || block.transactions.len() < 2 {
        return false;
    }
    let n = block.transactions.len();
    let locals: Vec<ModelVector> = block.transactions[..n - 1]
        .iter()
        .map(|t| t.payload.clone())
        .collect();
    recompute(&locals) == block.transactions[n - 1].payload
}

/// Run one PBFT attempt over the proposed block.
///
/// Honest validators verify every digest and recompute the global model via
/// `recompute`; acceptance requires exact equality with the proposed
/// aggregate. The attempt commits iff every honest server gathers the `2f`
/// prepare and commit quorums; otherwise the next rotation proposer is named
/// for a view change.
pub fn run_pbft_round(
    proposed: &Block,
    behaviors: &[ServerBehavior],
    round: u64,
    recompute: &dyn Fn(&[ModelVector]) -> ModelVector,
) -> RoundReport {
    let m = behaviors.len();
    let cfg = ConsensusConfig::new(m).expect("behavior list must describe a 3f+1 cluster");
    let q = 2 * cfg.fault_bound;
    let primary = proposed.proposer as usize;
    debug_assert!(primary < m);

    // Pre-prepare: what each server holds after the broadcast.
    let mut received: Vec<Option<Block>> = vec![None; m];
    received[primary] = Some(proposed.clone());
    for v in 0..m {
        if v == primary {
            continue;
        }
        received[v] = match behaviors[primary] {
            ServerBehavior::Silent => None,
            ServerBehavior::Equivocate => {
                if (primary + v) % 2 == 0 {
                    Some(proposed.clone())
                } else {
                    Some(corrupt_digest_variant(proposed))
                }
            }
            _ => Some(proposed.clone()),
        };
    }

    // Local validation (meaningful for honest servers).
    let accepted: Vec<bool> = (0..m)
        .map(|s| match &received[s] {
            Some(b) => block_content_valid(b, recompute),
            None => false,
        })
        .collect();
    let candidate_digests: Vec<Option<u64>> = received.iter().map(|r| r.as_ref().map(|b| b.digest)).collect();

    // Prepare votes from validators: vote[v][s] is what validator v shows
    // server s.
    let vote = |sender: usize, receiver: usize, sent_when_honest: bool| -> Option<u64> {
        let base = candidate_digests[sender]?;
        match behaviors[sender] {
            ServerBehavior::Honest => {
                if sent_when_honest {
                    Some(base)
                } else {
                    None
                }
            }
            ServerBehavior::Silent => None,
            ServerBehavior::TamperGlobal => Some(fake_digest(base, sender)),
            ServerBehavior::Equivocate => {
                if (sender + receiver) % 2 == 0 {
                    Some(base)
                } else {
                    Some(fake_digest(base, sender))
                }
            }
        }
    };

    // prepared[s]: the server's candidate gathered >= 2f validator prepares
    // (a validator's own valid prepare counts for itself).
    let mut prepared = vec![false; m];
    for s in 0..m {
        if behaviors[s] != ServerBehavior::Honest || !accepted[s] {
            continue;
        }
        let target = candidate_digests[s].expect("accepted implies candidate");
        let mut count = 0usize;
        for v in 0..m {
            if v == primary {
                continue; // prepares come from validators
            }
            if v == s {
                count += 1; // own prepare
                continue;
            }
            if vote(v, s, accepted[v]) == Some(target) {
                count += 1;
            }
        }
        prepared[s] = count >= q;
    }

    // Commit votes come from every server.
    let mut committed = vec![false; m];
    for s in 0..m {
        if !prepared[s] {
            continue;
        }
        let target = candidate_digests[s].expect("prepared implies candidate");
        let mut count = 1usize; // own commit
        for u in 0..m {
            if u == s {
                continue;
            }
            if vote(u, s, prepared[u]) == Some(target) {
                count += 1;
            }
        }
        committed[s] = count >= q;
    }

    let honest: Vec<usize> = (0..m).filter(|&s| behaviors[s] == ServerBehavior::Honest).collect();
    let all_honest_committed = !honest.is_empty() && honest.iter().all(|&s| committed[s]);
    let outcome = if all_honest_committed {
        RoundOutcome::Committed(proposed.clone())
    } else {
        RoundOutcome::ViewChange { next_primary: rotate_primary(round + 1, m) }
    };
    RoundReport { outcome, candidate_digests, accepted, committed }
}

/// Result of driving one training round through view changes.
#[derive(Debug, Clone)]
pub struct RoundSummary {
    pub committed: Option<Block>,
    pub view_changes: usize,
    pub stalled: bool,
    pub reports: Vec<RoundReport>,
}

/// A cluster of servers with fixed behaviors and per-server ledgers.
#[derive(Debug, Clone)]
pub struct PbftCluster {
    pub config: ConsensusConfig,
    pub behaviors: Vec<ServerBehavior>,
    pub ledgers: Vec<Ledger>,
    devices: usize,
}

impl PbftCluster {
    pub fn new(devices: usize, behaviors: Vec<ServerBehavior>) -> Result<Self> {
        let config = ConsensusConfig::new(behaviors.len())?;
        if devices == 0 {
            return Err(Error::Config("cluster needs at least one device".into()));
        }
        let ledgers = vec![Ledger::new(); behaviors.len()];
        Ok(Self { config, behaviors, ledgers, devices })
    }

    pub fn devices(&self) -> usize {
        self.devices
    }

    fn honest_tip(&self) -> &Block {
        let s = (0..self.config.servers)
            .find(|&s| self.behaviors[s] == ServerBehavior::Honest)
            .expect("cluster has at least one honest server");
        self.ledgers[s].tip()
    }

    fn build_proposal(
        &self,
        proposer: usize,
        locals: &[ModelVector],
        recompute: &dyn Fn(&[ModelVector]) -> ModelVector,
    ) -> Block {
        let mut txs: Vec<Transaction> = locals
            .iter()
            .enumerate()
            .map(|(k, w)| Transaction::new(w.clone(), k as u32))
            .collect();
        let mut global = recompute(locals);
        if self.behaviors[proposer] == ServerBehavior::TamperGlobal {
            global.values_mut()[0] += 1.0;
        }
        txs.push(Transaction::new(global, (self.devices + proposer) as u32));
        let tip = self.honest_tip();
        Block::new(tip.height + 1, tip.digest, txs, proposer as u32)
    }

    /// Run one training round, retrying with rotated proposers until a commit
    /// or every server has had one attempt.
    pub fn run_round(
        &mut self,
        round: u64,
        locals: &[ModelVector],
        recompute: &dyn Fn(&[ModelVector]) -> ModelVector,
    ) -> Result<RoundSummary> {
        if locals.len() != self.devices {
            return Err(Error::Domain(format!(
                "expected {} local models, got {}",
                self.devices,
                locals.len()
            )));
        }
        let m = self.config.servers;
        let mut reports = Vec::new();
        for attempt in 0..m {
            let proposer = rotate_primary(round + attempt as u64, m);
            let proposal = self.build_proposal(proposer, locals, recompute);
            let report = run_pbft_round(&proposal, &self.behaviors, round + attempt as u64, recompute);
            let outcome = report.outcome.clone();
            reports.push(report);
            if let RoundOutcome::Committed(block) = outcome {
                for s in 0..m {
                    if self.behaviors[s] == ServerBehavior::Honest {
                        self.ledgers[s].append(block.clone())?;
                    }
                }
                return Ok(RoundSummary {
                    committed: Some(block),
                    view_changes: attempt,
                    stalled: false,
                    reports,
                });
            }
        }
        Ok(RoundSummary { committed: None, view_changes: m, stalled: true, reports })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{multi_krum, ModelVector};
    use crate::rand_util::stream_rng;
    use rand::Rng;
    use ServerBehavior::*;

    fn models(seed: u64, k: usize, dim: usize) -> Vec<ModelVector> {
        let mut rng = stream_rng(seed, 0);
        (0..k)
            .map(|_| {
                ModelVector::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect()
    }

    fn krum1(locals: &[ModelVector]) -> ModelVector {
        multi_krum(locals, 1).unwrap().1
    }

    #[test]
    fn rotate_primary_examples() {
        assert_eq!(rotate_primary(0, 4), 0);
        assert_eq!(rotate_primary(5, 4), 1);
        for j in 0..10u64 {
            assert_eq!(rotate_primary(4 * j, 4), 0);
        }
    }

    #[test]
    fn quorum_examples() {
        assert_eq!(quorum(4).unwrap(), 2);
        assert_eq!(quorum(7).unwrap(), 4);
        assert_eq!(quorum(10).unwrap(), 6);
        assert!(quorum(5).is_err());
        assert!(quorum(3).is_err());
    }

    #[test]
    fn all_honest_round_commits_identically() {
        let mut cluster = PbftCluster::new(6, vec![Honest; 4]).unwrap();
        let locals = models(1, 6, 5);
        let summary = cluster.run_round(0, &locals, &krum1).unwrap();
        assert!(summary.committed.is_some());
        assert_eq!(summary.view_changes, 0);
        for s in 1..4 {
            assert_eq!(cluster.ledgers[0], cluster.ledgers[s]);
        }
        assert!(cluster.ledgers.iter().all(Ledger::verify_chain));
    }

    #[test]
    fn tampering_primary_triggers_view_change() {
        let behaviors = vec![TamperGlobal, Honest, Honest, Honest];
        let mut cluster = PbftCluster::new(6, behaviors.clone()).unwrap();
        let locals = models(2, 6, 5);

        // The tampered proposal alone yields a view change and no commits.
        let proposal = cluster.build_proposal(0, &locals, &krum1);
        let report = run_pbft_round(&proposal, &behaviors, 0, &krum1);
        assert_eq!(report.outcome, RoundOutcome::ViewChange { next_primary: 1 });
        assert!(report.committed.iter().all(|&c| !c));

        // With retries the next honest proposer commits the round.
        let summary = cluster.run_round(0, &locals, &krum1).unwrap();
        assert_eq!(summary.view_changes, 1);
        assert!(summary.committed.is_some());
        assert_eq!(summary.committed.as_ref().unwrap().proposer, 1);
    }

    #[test]
    fn one_silent_validator_still_commits() {
        // 2f = 2 of the 3 validators suffice.
        let mut cluster = PbftCluster::new(4, vec![Honest, Honest, Silent, Honest]).unwrap();
        let locals = models(3, 4, 3);
        let summary = cluster.run_round(0, &locals, &krum1).unwrap();
        assert_eq!(summary.view_changes, 0);
        assert!(summary.committed.is_some());
    }

    #[test]
    fn single_fault_rounds_commit_within_bound_and_stay_safe() {
        let kinds = [Honest, TamperGlobal, Silent, Equivocate];
        let locals = models(4, 5, 4);
        for faulty in 0..4usize {
            for kind in kinds {
                for round in 0..4u64 {
                    let mut behaviors = vec![Honest; 4];
                    behaviors[faulty] = kind;
                    let mut cluster = PbftCluster::new(5, behaviors.clone()).unwrap();
                    let summary = cluster.run_round(round, &locals, &krum1).unwrap();
                    assert!(!summary.stalled, "stalled with single fault {kind:?} at {faulty}");
                    assert!(summary.view_changes <= 2, "too many view changes");
                    for report in &summary.reports {
                        assert!(report.safety_holds(&behaviors));
                    }
                    for s in 0..4 {
                        if behaviors[s] == Honest {
                            assert!(cluster.ledgers[s].verify_chain());
                            assert_eq!(cluster.ledgers[s].len(), 2);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn two_equivocating_validators_can_destroy_consensus() {
        let locals = models(5, 4, 3);
        let mut stalls = 0;
        // Primary 0 honest; two of its three validators equivocate.
        for pair in [(1usize, 2usize), (1, 3), (2, 3)] {
            let mut behaviors = vec![Honest; 4];
            behaviors[pair.0] = Equivocate;
            behaviors[pair.1] = Equivocate;
            let mut cluster = PbftCluster::new(4, behaviors).unwrap();
            let summary = cluster.run_round(0, &locals, &krum1).unwrap();
            if summary.stalled {
                stalls += 1;
            }
        }
        assert!(stalls >= 1, "no equivocator pair stalled the round");
    }

    #[test]
    fn append_rejects_broken_links() {
        let mut ledger = Ledger::new();
        let tip_digest = ledger.tip().digest;
        let tx = Transaction::new(ModelVector::new(vec![1.0, 2.0]).unwrap(), 0);
        let good = Block::new(1, tip_digest, vec![tx.clone()], 0);
        ledger.append(good).unwrap();
        assert_eq!(ledger.len(), 2);

        let wrong_prev = Block::new(2, 0xBAD, vec![tx.clone()], 0);
        assert!(ledger.append(wrong_prev).is_err());
        let wrong_height = Block::new(5, ledger.tip().digest, vec![tx], 0);
        assert!(ledger.append(wrong_height).is_err());
    }

    #[test]
    fn verify_chain_detects_every_single_bit_flip() {
        let mut ledger = Ledger::new();
        for h in 1..=3u64 {
            let txs: Vec<Transaction> = models(h, 3, 3)
                .into_iter()
                .enumerate()
                .map(|(k, m)| Transaction::new(m, k as u32))
                .collect();
            let block = Block::new(h, ledger.tip().digest, txs, (h % 4) as u32);
            ledger.append(block).unwrap();
        }
        assert!(ledger.verify_chain());

        let n_blocks = ledger.len();
        for bi in 1..n_blocks {
            let n_txs = ledger.blocks()[bi].transactions.len();
            for ti in 0..n_txs {
                let dim = ledger.blocks()[bi].transactions[ti].payload.dim();
                for vi in 0..dim {
                    for bit in 0..64u32 {
                        let mut tampered = ledger.clone();
                        let value = &mut tampered.blocks_mut()[bi].transactions[ti]
                            .payload
                            .values_mut()[vi];
                        *value = f64::from_bits(value.to_bits() ^ (1u64 << bit));
                        assert!(
                            !tampered.verify_chain(),
                            "flip of block {bi}, tx {ti}, coord {vi}, bit {bit} went undetected"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn genesis_only_ledger_verifies() {
        assert!(Ledger::new().verify_chain());
    }

    #[test]
    fn honest_multi_round_run_keeps_chain_valid() {
        let mut cluster = PbftCluster::new(4, vec![Honest; 4]).unwrap();
        for round in 0..10u64 {
            let locals = models(100 + round, 4, 3);
            let summary = cluster.run_round(round, &locals, &krum1).unwrap();
            assert!(summary.committed.is_some());
        }
        assert!(cluster.ledgers[0].verify_chain());
        assert_eq!(cluster.ledgers[0].len(), 11);
    }

    #[test]
    fn ledgers_are_deterministic_per_seed_and_behaviors() {
        let run = || {
            let mut cluster = PbftCluster::new(5, vec![Honest, Equivocate, Honest, Honest]).unwrap();
            for round in 0..5u64 {
                let locals = models(900 + round, 5, 4);
                cluster.run_round(round, &locals, &krum1).unwrap();
            }
            cluster.ledgers[0].export_jsonl()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a.lines().count() == 6);
        assert!(a.starts_with("{\"height\":0,"));
    }
}
