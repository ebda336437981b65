//! World state and the consent contract.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::*;
use crate::canonical;
use crate::identity::{digest, Digest};

pub fn terms_key(terms_id: &str) -> String {
    format!("terms/{terms_id}")
}

pub fn proof_key(proof: &Digest) -> String {
    format!("proof/{proof}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateValue {
    Terms(ConsentTermsRecord),
    Consent(ConsentRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versioned {
    pub version: LogicalTime,
    pub value: StateValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QueryResult {
    Terms(ConsentTermsRecord),
    Consent(ConsentRecord),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct TxSlot {
    tx_id: String,
    key: String,
}

/// Committed key/value state. Ordered maps keep the canonical encoding,
/// and therefore [`WorldState::digest`], independent of insertion order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldState {
    entries: BTreeMap<String, Versioned>,
    // valid transactions by position, pointing at the key they are about
    txs: BTreeMap<String, TxSlot>,
}

fn slot(at: LogicalTime) -> String {
    format!("{:016x}:{:08x}", at.block_height, at.tx_index)
}

fn require(role: Role, allowed: Role, operation: &'static str) -> Result<(), LedgerError> {
    if role == allowed {
        Ok(())
    } else {
        Err(LedgerError::PermissionDenied { role, operation })
    }
}

impl WorldState {
    pub fn get(&self, key: &str) -> Option<&Versioned> {
        self.entries.get(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &Versioned)> {
        self.entries.iter()
    }

    pub fn consent(&self, proof: &Digest) -> Option<&ConsentRecord> {
        match self.entries.get(&proof_key(proof)).map(|v| &v.value) {
            Some(StateValue::Consent(r)) => Some(r),
            _ => None,
        }
    }

    pub fn terms(&self, terms_id: &str) -> Option<&ConsentTermsRecord> {
        match self.entries.get(&terms_key(terms_id)).map(|v| &v.value) {
            Some(StateValue::Terms(t)) => Some(t),
            _ => None,
        }
    }

    pub fn consent_records(&self) -> impl Iterator<Item = &ConsentRecord> {
        self.entries.values().filter_map(|v| match &v.value {
            StateValue::Consent(r) => Some(r),
            _ => None,
        })
    }

    pub fn terms_records(&self) -> impl Iterator<Item = &ConsentTermsRecord> {
        self.entries.values().filter_map(|v| match &v.value {
            StateValue::Terms(t) => Some(t),
            _ => None,
        })
    }

    pub fn query_tx(&self, tx: &TxRef) -> Result<QueryResult, LedgerError> {
        let found = self.txs.get(&slot(tx.time())).ok_or_else(|| LedgerError::NotFound(tx.to_string()))?;
        if found.tx_id != tx.tx_id {
            return Err(LedgerError::TxMismatch);
        }
        match &self.entries[&found.key].value {
            StateValue::Terms(t) => Ok(QueryResult::Terms(t.clone())),
            StateValue::Consent(c) => Ok(QueryResult::Consent(c.clone())),
        }
    }

    pub fn digest(&self) -> Digest {
        digest(&canonical::to_vec(self))
    }

    fn version_of(&self, key: &str) -> Option<LogicalTime> {
        self.entries.get(key).map(|v| v.version)
    }

    fn valid_consent(&self, proof: &Digest) -> Result<&ConsentRecord, LedgerError> {
        let record = self.consent(proof).ok_or_else(|| LedgerError::NotFound(proof_key(proof)))?;
        match record.state {
            ConsentState::Valid => Ok(record),
            ConsentState::Revoked => Err(LedgerError::AlreadyRevoked(*proof)),
        }
    }

    fn absent_proof(&self, proof: &Digest) -> Result<(), LedgerError> {
        if self.entries.contains_key(&proof_key(proof)) {
            Err(LedgerError::DuplicateKey(*proof))
        } else {
            Ok(())
        }
    }

    /// Run the contract's preconditions for `op` and return the read set
    /// the transaction must carry.
    pub fn simulate(&self, role: Role, op: &Operation) -> Result<Vec<ReadEntry>, LedgerError> {
        self.check(role, op)?;
        Ok(read_keys(op)
            .into_iter()
            .map(|key| ReadEntry { version: self.version_of(&key), key })
            .collect())
    }

    fn check(&self, role: Role, op: &Operation) -> Result<(), LedgerError> {
        match op {
            Operation::PublishTerms { terms } => {
                require(role, Role::Organization, op.name())?;
                if terms.version == 0 || terms.project_id.is_empty() || terms.org_did.is_empty() {
                    return Err(LedgerError::InvalidTerms(terms.terms_id()));
                }
                if self.entries.contains_key(&terms_key(&terms.terms_id())) {
                    return Err(LedgerError::DuplicateTerms(terms.terms_id()));
                }
            }
            Operation::PublishProof { proof } => {
                require(role, Role::Portal, op.name())?;
                self.absent_proof(proof)?;
            }
            Operation::Revoke { key } => {
                require(role, Role::Portal, op.name())?;
                self.valid_consent(key)?;
            }
            Operation::Update { old_key, new_proof } => {
                require(role, Role::Portal, op.name())?;
                self.valid_consent(old_key)?;
                self.absent_proof(new_proof)?;
                if old_key == new_proof {
                    return Err(LedgerError::DuplicateKey(*new_proof));
                }
            }
        }
        Ok(())
    }

    /// Validate one ordered transaction and apply its writes. The state is
    /// unchanged unless the result is [`Validation::Valid`].
    pub(crate) fn validate_and_apply(&mut self, role: Role, tx: &Transaction, at: LogicalTime) -> Validation {
        let op = &tx.payload.operation;
        let expected = read_keys(op);
        let declared: Vec<&str> = tx.payload.read_set.iter().map(|r| r.key.as_str()).collect();
        if declared != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Validation::Rejected { reason: "read set does not cover the operation".into() };
        }
        for read in &tx.payload.read_set {
            if self.version_of(&read.key) != read.version {
                return Validation::MvccConflict { key: read.key.clone() };
            }
        }
        if let Err(e) = self.check(role, op) {
            return Validation::Rejected { reason: e.to_string() };
        }

        let submitter = &tx.payload.submitter;
        let primary = match op {
            Operation::PublishTerms { terms } => {
                let record = ConsentTermsRecord {
                    terms_id: terms.terms_id(),
                    org_did: terms.org_did.clone(),
                    project_id: terms.project_id.clone(),
                    version: terms.version,
                    terms_digest: terms.terms_digest,
                    published_at: at,
                };
                let key = terms_key(&record.terms_id);
                self.entries.insert(key.clone(), Versioned { version: at, value: StateValue::Terms(record) });
                key
            }
            Operation::PublishProof { proof } => self.insert_consent(*proof, submitter, at),
            Operation::Revoke { key } => {
                self.revoke(key, None, at);
                proof_key(key)
            }
            Operation::Update { old_key, new_proof } => {
                self.revoke(old_key, Some(*new_proof), at);
                self.insert_consent(*new_proof, submitter, at)
            }
        };
        self.txs.insert(slot(at), TxSlot { tx_id: tx.tx_id.clone(), key: primary });
        Validation::Valid
    }

    fn insert_consent(&mut self, proof: Digest, publisher: &str, at: LogicalTime) -> String {
        let record = ConsentRecord {
            key: proof,
            publisher: publisher.to_owned(),
            state: ConsentState::Valid,
            published_at: at,
            revoked_at: None,
            superseded_by: None,
        };
        let key = proof_key(&proof);
        self.entries.insert(key.clone(), Versioned { version: at, value: StateValue::Consent(record) });
        key
    }

    fn revoke(&mut self, proof: &Digest, superseded_by: Option<Digest>, at: LogicalTime) {
        let entry = self.entries.get_mut(&proof_key(proof)).expect("checked before apply");
        entry.version = at;
        if let StateValue::Consent(r) = &mut entry.value {
            r.state = ConsentState::Revoked;
            r.revoked_at = Some(at);
            r.superseded_by = superseded_by;
        }
    }
}

fn read_keys(op: &Operation) -> Vec<String> {
    match op {
        Operation::PublishTerms { terms } => vec![terms_key(&terms.terms_id())],
        Operation::PublishProof { proof } => vec![proof_key(proof)],
        Operation::Revoke { key } => vec![proof_key(key)],
        Operation::Update { old_key, new_proof } => vec![proof_key(old_key), proof_key(new_proof)],
    }
}
