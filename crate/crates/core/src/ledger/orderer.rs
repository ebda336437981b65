use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};

use super::journal::JournalWriter;
use super::*;
use crate::identity::{verify, Digest, Signature};

#[derive(Debug, Clone)]
pub struct LedgerConfig {
    /// Maximum transactions per block.
    pub batch_size: usize,
    /// How long the orderer waits for a batch to fill. Zero cuts a block
    /// from whatever is queued as soon as a transaction arrives.
    pub batch_timeout: Duration,
    pub journal_path: Option<PathBuf>,
}

impl Default for LedgerConfig {
    fn default() -> Self {
        LedgerConfig { batch_size: 50, batch_timeout: Duration::from_millis(100), journal_path: None }
    }
}

impl LedgerConfig {
    /// One block per submission when submitters are sequential.
    pub fn immediate() -> Self {
        LedgerConfig { batch_timeout: Duration::ZERO, ..Self::default() }
    }
}

struct Order {
    tx: Transaction,
    role: Role,
    reply: mpsc::Sender<Result<TxRef, LedgerError>>,
}

#[derive(Default)]
struct Committed {
    world: WorldState,
    blocks: Vec<Block>,
}

struct Shared {
    consortium: RwLock<BTreeMap<String, LedgerIdentity>>,
    committed: RwLock<Committed>,
    seen_tx: Mutex<HashSet<String>>,
    journal: Mutex<Option<JournalWriter>>,
}

/// Handle to an ordered-but-not-yet-committed transaction.
pub struct PendingTx {
    rx: mpsc::Receiver<Result<TxRef, LedgerError>>,
}

impl PendingTx {
    pub fn wait(self) -> Result<TxRef, LedgerError> {
        self.rx.recv().unwrap_or(Err(LedgerError::Shutdown))
    }
}

pub struct Ledger {
    shared: Arc<Shared>,
    orders: Mutex<Option<mpsc::Sender<Order>>>,
    orderer: Mutex<Option<JoinHandle<()>>>,
}

impl Ledger {
    pub fn new(config: LedgerConfig) -> Self {
        Self::open(config, []).expect("a ledger without journal cannot fail to open")
    }

    /// Open a ledger, admitting `members`. When the configured journal file
    /// exists its blocks are replayed first and new blocks are appended.
    pub fn open(config: LedgerConfig, members: impl IntoIterator<Item = LedgerIdentity>) -> Result<Self, LedgerError> {
        let consortium: BTreeMap<_, _> = members.into_iter().map(|m| (m.id.clone(), m)).collect();
        let shared = Arc::new(Shared {
            consortium: RwLock::new(consortium),
            committed: RwLock::new(Committed::default()),
            seen_tx: Mutex::new(HashSet::new()),
            journal: Mutex::new(None),
        });

        if let Some(path) = &config.journal_path {
            if path.exists() {
                let blocks = journal::read_journal(path)?;
                shared.replay(&blocks)?;
            }
            *shared.journal.lock() = Some(JournalWriter::open(path)?);
        }

        let (tx, rx) = mpsc::channel::<Order>();
        let worker = Arc::clone(&shared);
        let handle = std::thread::Builder::new()
            .name("ccn-orderer".into())
            .spawn(move || worker.run_orderer(rx, config.batch_size.max(1), config.batch_timeout))
            .expect("spawning the orderer thread");

        Ok(Ledger { shared, orders: Mutex::new(Some(tx)), orderer: Mutex::new(Some(handle)) })
    }

    /// Rebuild a ledger on a fresh instance from `blocks`, re-executing
    /// every transaction. Fails if any validation outcome or block digest
    /// differs from the record.
    pub fn replay(
        blocks: &[Block],
        members: impl IntoIterator<Item = LedgerIdentity>,
        config: LedgerConfig,
    ) -> Result<Self, LedgerError> {
        let ledger = Self::open(LedgerConfig { journal_path: None, ..config }, members)?;
        ledger.shared.replay(blocks)?;
        Ok(ledger)
    }

    pub fn admit(&self, identity: LedgerIdentity) -> Result<(), LedgerError> {
        let mut members = self.shared.consortium.write();
        if members.contains_key(&identity.id) {
            return Err(LedgerError::AlreadyAdmitted(identity.id));
        }
        members.insert(identity.id.clone(), identity);
        Ok(())
    }

    pub fn members(&self) -> Vec<LedgerIdentity> {
        self.shared.consortium.read().values().cloned().collect()
    }

    fn role_of(&self, id: &str) -> Result<LedgerIdentity, LedgerError> {
        self.shared
            .consortium
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| LedgerError::UnknownIdentity(id.to_owned()))
    }

    /// Simulate `op` for `submitter` against committed state.
    pub fn simulate(&self, submitter: &str, op: &Operation) -> Result<Vec<ReadEntry>, LedgerError> {
        let identity = self.role_of(submitter)?;
        self.shared.committed.read().world.simulate(identity.role, op)
    }

    /// Check membership and signature, then hand the transaction to the
    /// orderer. Rejections here happen before ordering.
    pub fn submit(&self, tx: Transaction) -> Result<PendingTx, LedgerError> {
        let identity = self.role_of(&tx.payload.submitter)?;
        let sig = Signature { bytes: tx.signature.clone(), signer: identity.id.clone() };
        if tx.payload.tx_id() != tx.tx_id || !verify(&tx.payload.signing_bytes(), &sig, &identity.verification_key) {
            return Err(LedgerError::BadSignature);
        }
        if !self.shared.seen_tx.lock().insert(tx.tx_id.clone()) {
            return Err(LedgerError::DuplicateTx(tx.tx_id));
        }
        let (reply, rx) = mpsc::channel();
        let orders = self.orders.lock();
        let sender = orders.as_ref().ok_or(LedgerError::Shutdown)?;
        sender.send(Order { tx, role: identity.role, reply }).map_err(|_| LedgerError::Shutdown)?;
        Ok(PendingTx { rx })
    }

    pub fn submit_and_wait(&self, tx: Transaction) -> Result<TxRef, LedgerError> {
        self.submit(tx)?.wait()
    }

    pub fn query_proof(&self, proof: &Digest) -> Result<ConsentRecord, LedgerError> {
        self.shared
            .committed
            .read()
            .world
            .consent(proof)
            .cloned()
            .ok_or_else(|| LedgerError::NotFound(proof_key(proof)))
    }

    pub fn query_terms(&self, terms_id: &str) -> Result<ConsentTermsRecord, LedgerError> {
        self.shared
            .committed
            .read()
            .world
            .terms(terms_id)
            .cloned()
            .ok_or_else(|| LedgerError::NotFound(terms_key(terms_id)))
    }

    pub fn query_tx(&self, tx: &TxRef) -> Result<QueryResult, LedgerError> {
        self.shared.committed.read().world.query_tx(tx)
    }

    pub fn query_key(&self, key: &str) -> Option<Versioned> {
        self.shared.committed.read().world.get(key).cloned()
    }

    pub fn height(&self) -> u64 {
        self.shared.committed.read().blocks.len() as u64
    }

    pub fn snapshot(&self) -> WorldState {
        self.shared.committed.read().world.clone()
    }

    pub fn state_digest(&self) -> Digest {
        self.shared.committed.read().world.digest()
    }

    pub fn blocks(&self) -> Vec<Block> {
        self.shared.committed.read().blocks.clone()
    }

    /// Encoded journal records, as they are persisted.
    pub fn journal_bytes(&self) -> Vec<u8> {
        let committed = self.shared.committed.read();
        let mut out = Vec::new();
        for block in &committed.blocks {
            journal::encode_record(block, &mut out);
        }
        out
    }

    pub fn verify_chain(&self) -> Result<(), LedgerError> {
        verify_blocks(&self.shared.committed.read().blocks)
    }

    /// Stop the orderer after draining queued transactions.
    pub fn shutdown(&self) {
        self.orders.lock().take();
        if let Some(handle) = self.orderer.lock().take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Ledger {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl std::fmt::Debug for Ledger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Ledger").field("height", &self.height()).finish_non_exhaustive()
    }
}

/// Check digests and hash links of a block sequence starting at genesis.
pub fn verify_blocks(blocks: &[Block]) -> Result<(), LedgerError> {
    let mut previous = Digest::ZERO;
    for (i, block) in blocks.iter().enumerate() {
        let fail = |reason: &str| LedgerError::Chain { height: block.height, reason: reason.to_owned() };
        if block.height != i as u64 + 1 {
            return Err(fail("height out of sequence"));
        }
        if block.previous_digest != previous {
            return Err(fail("previous digest does not link"));
        }
        if Block::compute_digest(block.height, &block.previous_digest, &block.txs) != block.block_digest {
            return Err(fail("block digest mismatch"));
        }
        for btx in &block.txs {
            if btx.tx.payload.tx_id() != btx.tx.tx_id {
                return Err(fail("transaction id mismatch"));
            }
        }
        previous = block.block_digest;
    }
    Ok(())
}

impl Shared {
    fn run_orderer(&self, rx: mpsc::Receiver<Order>, batch_size: usize, timeout: Duration) {
        while let Ok(first) = rx.recv() {
            let mut batch = vec![first];
            if timeout.is_zero() {
                while batch.len() < batch_size {
                    match rx.try_recv() {
                        Ok(o) => batch.push(o),
                        Err(_) => break,
                    }
                }
            } else {
                let deadline = Instant::now() + timeout;
                while batch.len() < batch_size {
                    let remaining = deadline.saturating_duration_since(Instant::now());
                    match rx.recv_timeout(remaining) {
                        Ok(o) => batch.push(o),
                        Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => break,
                    }
                }
            }
            self.commit_batch(batch);
        }
    }

    fn commit_batch(&self, batch: Vec<Order>) {
        let mut replies = Vec::with_capacity(batch.len());
        {
            let mut committed = self.committed.write();
            let height = committed.blocks.len() as u64 + 1;
            let previous = committed.blocks.last().map(|b| b.block_digest).unwrap_or(Digest::ZERO);
            let mut txs = Vec::with_capacity(batch.len());
            for (index, order) in batch.into_iter().enumerate() {
                let at = LogicalTime { block_height: height, tx_index: index as u32 };
                let validation = committed.world.validate_and_apply(order.role, &order.tx, at);
                let outcome = match &validation {
                    Validation::Valid => Ok(TxRef { block_height: height, tx_index: at.tx_index, tx_id: order.tx.tx_id.clone() }),
                    Validation::MvccConflict { key } => Err(LedgerError::MvccConflict { key: key.clone() }),
                    Validation::Rejected { reason } => Err(LedgerError::Rejected(reason.clone())),
                };
                replies.push((order.reply, outcome));
                txs.push(BlockTx { tx: order.tx, validation });
            }
            let block_digest = Block::compute_digest(height, &previous, &txs);
            let block = Block { height, previous_digest: previous, txs, block_digest };
            if let Some(journal) = self.journal.lock().as_mut() {
                if let Err(e) = journal.append(&block) {
                    log_journal_failure(&e);
                }
            }
            committed.blocks.push(block);
        }
        for (reply, outcome) in replies {
            let _ = reply.send(outcome);
        }
    }

    fn replay(&self, blocks: &[Block]) -> Result<(), LedgerError> {
        verify_blocks(blocks)?;
        let members = self.consortium.read().clone();
        let mut committed = self.committed.write();
        let mut seen = self.seen_tx.lock();
        for block in blocks {
            let mut txs = Vec::with_capacity(block.txs.len());
            for (index, btx) in block.txs.iter().enumerate() {
                let identity = members
                    .get(&btx.tx.payload.submitter)
                    .ok_or_else(|| LedgerError::UnknownIdentity(btx.tx.payload.submitter.clone()))?;
                let sig = Signature { bytes: btx.tx.signature.clone(), signer: identity.id.clone() };
                if !verify(&btx.tx.payload.signing_bytes(), &sig, &identity.verification_key) {
                    return Err(LedgerError::Chain { height: block.height, reason: "bad transaction signature".into() });
                }
                let at = LogicalTime { block_height: block.height, tx_index: index as u32 };
                let validation = committed.world.validate_and_apply(identity.role, &btx.tx, at);
                if validation != btx.validation {
                    return Err(LedgerError::Chain {
                        height: block.height,
                        reason: format!("validation outcome of {} differs on replay", btx.tx.tx_id),
                    });
                }
                seen.insert(btx.tx.tx_id.clone());
                txs.push(BlockTx { tx: btx.tx.clone(), validation });
            }
            let previous = committed.blocks.last().map(|b| b.block_digest).unwrap_or(Digest::ZERO);
            let block_digest = Block::compute_digest(block.height, &previous, &txs);
            if block_digest != block.block_digest {
                return Err(LedgerError::Chain { height: block.height, reason: "block digest differs on replay".into() });
            }
            committed.blocks.push(Block { height: block.height, previous_digest: previous, txs, block_digest });
        }
        Ok(())
    }
}

fn log_journal_failure(e: &LedgerError) {
    // The in-memory chain stays authoritative; a broken journal only loses
    // durability.
    eprintln!("ccn ledger: journal append failed: {e}");
}
