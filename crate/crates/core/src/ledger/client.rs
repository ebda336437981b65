use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use ed25519_dalek::Signer;

use super::*;
use crate::identity::{Digest, KeyPair};

/// A consortium member's signing handle on a ledger.
#[derive(Clone)]
pub struct LedgerClient {
    identity: LedgerIdentity,
    keys: Arc<KeyPair>,
    ledger: Arc<Ledger>,
    nonce: Arc<AtomicU64>,
}

impl LedgerClient {
    pub fn new(id: impl Into<String>, role: Role, keys: KeyPair, ledger: Arc<Ledger>) -> Self {
        let identity = LedgerIdentity { id: id.into(), role, verification_key: keys.signing_public().to_vec() };
        LedgerClient { identity, keys: Arc::new(keys), ledger, nonce: Arc::new(AtomicU64::new(0)) }
    }

    /// Admit this client's identity and return it.
    pub fn admitted(self) -> Result<Self, LedgerError> {
        self.ledger.admit(self.identity.clone())?;
        Ok(self)
    }

    pub fn identity(&self) -> &LedgerIdentity {
        &self.identity
    }

    pub fn ledger(&self) -> &Arc<Ledger> {
        &self.ledger
    }

    /// Simulate `op` and sign the resulting transaction without submitting.
    pub fn endorse(&self, op: Operation) -> Result<Transaction, LedgerError> {
        let read_set = self.ledger.simulate(&self.identity.id, &op)?;
        Ok(self.sign(op, read_set))
    }

    /// Sign a transaction with an explicit read set.
    pub fn sign(&self, operation: Operation, read_set: Vec<ReadEntry>) -> Transaction {
        let payload = TxPayload {
            submitter: self.identity.id.clone(),
            nonce: self.nonce.fetch_add(1, Ordering::Relaxed),
            operation,
            read_set,
        };
        let signature = self.keys.signing_key().sign(&payload.signing_bytes()).to_bytes().to_vec();
        Transaction { tx_id: payload.tx_id(), payload, signature }
    }

    pub fn execute(&self, op: Operation) -> Result<TxRef, LedgerError> {
        let tx = self.endorse(op)?;
        self.ledger.submit_and_wait(tx)
    }

    pub fn publish_consent_terms(&self, terms: TermsSubmission) -> Result<TxRef, LedgerError> {
        self.execute(Operation::PublishTerms { terms })
    }

    pub fn publish_consent_proof(&self, proof: Digest) -> Result<TxRef, LedgerError> {
        self.execute(Operation::PublishProof { proof })
    }

    pub fn revoke_consent(&self, key: Digest) -> Result<TxRef, LedgerError> {
        self.execute(Operation::Revoke { key })
    }

    /// Returns the (revoke, publish) references; both name the single
    /// transaction that performed the supersession.
    pub fn update_consent(&self, old_key: Digest, new_proof: Digest) -> Result<(TxRef, TxRef), LedgerError> {
        let tx = self.execute(Operation::Update { old_key, new_proof })?;
        Ok((tx.clone(), tx))
    }

    pub fn query_consent_proof(&self, proof: &Digest) -> Result<ConsentRecord, LedgerError> {
        self.ledger.query_proof(proof)
    }

    pub fn query_tx(&self, tx: &TxRef) -> Result<QueryResult, LedgerError> {
        self.ledger.query_tx(tx)
    }
}

impl std::fmt::Debug for LedgerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LedgerClient").field("identity", &self.identity.id).finish_non_exhaustive()
    }
}
