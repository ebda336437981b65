use std::collections::HashSet;
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::*;
use crate::identity::{digest, open_envelope, seal_envelope, sign, Digest, DidDocument, Envelope};
use crate::ledger::{ConsentState, Ledger, QueryResult};
use crate::portal::{AuthToken, Challenge, HistoryItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DossierStatus {
    Pending,
    Valid,
    Revoked,
}

/// Everything a participant keeps about one consent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentDossier {
    pub form: PrivateConsentForm,
    pub encrypted_form: Envelope,
    pub proof: Digest,
    pub consent_tx: Option<TxRef>,
    /// Advisory; the ledger is authoritative.
    pub status_cache: DossierStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptedConsent {
    pub proof: Digest,
    pub consent_tx: TxRef,
    pub participant_did: String,
    pub project_id: String,
    pub form_id: String,
    pub package: ConsentPackage,
}

/// Why an organization refused a consent package. Each check has its own
/// variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rejection {
    /// The envelope does not hash to the claimed proof.
    DigestMismatch,
    /// The envelope does not open with the organization's key.
    Undecryptable,
    MalformedForm,
    /// The form was not issued by this organization.
    ForeignForm,
    OrgSignatureInvalid,
    ParticipantSignatureInvalid,
    /// The form names a different private DID than the connection.
    ParticipantMismatch,
    /// The ledger has no such transaction, or it is about another key.
    NotOnLedger,
    /// The proof exists on the ledger but is not valid.
    NotValid,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let text = match self {
            Rejection::DigestMismatch => "envelope digest does not match the consent proof",
            Rejection::Undecryptable => "envelope does not open with the organization key",
            Rejection::MalformedForm => "envelope does not contain a consent form",
            Rejection::ForeignForm => "form was not issued by this organization",
            Rejection::OrgSignatureInvalid => "organization signature does not verify",
            Rejection::ParticipantSignatureInvalid => "participant signature does not verify",
            Rejection::ParticipantMismatch => "form is bound to a different private DID",
            Rejection::NotOnLedger => "consent transaction does not reference this proof",
            Rejection::NotValid => "consent proof is not valid on the ledger",
        };
        f.write_str(text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryStatus {
    Valid,
    Revoked,
    Pending,
    /// Held by the wallet but unknown to the portal (forgotten there).
    LocalOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub private_did: String,
    pub org_did: String,
    pub project_id: String,
    pub terms_tx: TxRef,
    pub proof: Digest,
    pub consent_tx: Option<TxRef>,
    pub status: HistoryStatus,
}

/// Join the wallet's dossiers with the portal history on the consent
/// transaction reference.
pub fn local_consent_history(wallet: &Wallet, portal_history: &[HistoryItem]) -> Vec<HistoryRow> {
    wallet
        .consent_store
        .iter()
        .map(|d| {
            let status = match &d.consent_tx {
                None => HistoryStatus::Pending,
                Some(tx) => match portal_history.iter().find(|h| &h.consent_tx == tx) {
                    Some(h) => match h.status {
                        ConsentState::Valid => HistoryStatus::Valid,
                        ConsentState::Revoked => HistoryStatus::Revoked,
                    },
                    None => HistoryStatus::LocalOnly,
                },
            };
            HistoryRow {
                private_did: d.form.participant_did.clone(),
                org_did: d.form.org_did.clone(),
                project_id: d.form.project_id.clone(),
                terms_tx: d.form.terms_tx.clone(),
                proof: d.proof,
                consent_tx: d.consent_tx.clone(),
                status,
            }
        })
        .collect()
}

fn unique_names(fields: &[ConsentField]) -> Option<HashSet<&str>> {
    let mut names = HashSet::new();
    fields.iter().all(|f| names.insert(f.name.as_str())).then_some(names)
}

impl Wallet {
    fn did_for_recipient(&self, recipient: &str) -> Option<&Did> {
        if self.public_did.text() == recipient {
            return Some(&self.public_did);
        }
        self.project_identities.values().find(|d| d.text() == recipient)
    }

    /// Open an envelope addressed to any DID this wallet holds.
    pub fn open_message(&self, env: &Envelope) -> Result<(WireMessage, Option<String>), WalletError> {
        let did = self
            .did_for_recipient(&env.recipient)
            .ok_or_else(|| WalletError::UnknownConnection(env.recipient.clone()))?;
        let (plain, sender) = open_envelope(env, did)?;
        let msg = WireMessage::from_bytes(&plain).ok_or_else(|| WalletError::UnexpectedMessage("undecodable".into()))?;
        Ok((msg, sender))
    }

    /// DID-Auth response for a portal challenge, signed with the public DID.
    pub fn did_auth_response(&self, challenge: &Challenge) -> Result<AuthToken, WalletError> {
        Ok(AuthToken::sign(challenge, &self.public_did, self.now())?)
    }

    // Participant side.

    /// Create the project's private DID and a DID-authenticated connection
    /// request to the organization. Refused while the last observed catalog
    /// is below the herd-privacy threshold.
    pub fn request_participation(&mut self, entry: &CatalogEntry, org_doc: &DidDocument) -> Result<(Did, Envelope), WalletError> {
        self.require(WalletRole::Participant)?;
        self.herd_privacy_gate()?;
        let did = self.create_project_identity(&entry.project_id)?;
        let env = self.connection_request(&entry.project_id, &did, org_doc)?;
        Ok((did, env))
    }

    pub(crate) fn connection_request(&mut self, project_id: &str, did: &Did, org_doc: &DidDocument) -> Result<Envelope, WalletError> {
        let mut nonce = vec![0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        let msg = WireMessage::ConnectionRequest { project_id: project_id.to_owned(), nonce };
        Ok(seal_envelope(&msg.to_bytes(), did, org_doc, true, &mut self.rng)?)
    }

    /// Like [`Wallet::request_participation`], but reusing whatever DID is
    /// already bound to the project (see the negative-control hook).
    pub fn request_with_bound_identity(&mut self, project_id: &str, org_doc: &DidDocument) -> Result<Envelope, WalletError> {
        self.herd_privacy_gate()?;
        let did = self
            .project_identities
            .get(project_id)
            .cloned()
            .ok_or_else(|| WalletError::UnknownProject(project_id.to_owned()))?;
        self.connection_request(project_id, &did, org_doc)
    }

    pub fn complete_and_sign_form(&mut self, form: &PrivateConsentForm, choices: Vec<ConsentField>) -> Result<PrivateConsentForm, WalletError> {
        self.require(WalletRole::Participant)?;
        if !form.verify_org_signature() {
            return Err(WalletError::OrgSignatureInvalid);
        }
        let did = match self.project_identities.get(&form.project_id) {
            Some(did) if did.text() == form.participant_did => did.clone(),
            _ => return Err(WalletError::ForeignParticipantDid),
        };
        let template = unique_names(&form.fields).ok_or(WalletError::InvalidTemplate)?;
        match unique_names(&choices) {
            Some(answered) if answered == template => {}
            _ => return Err(WalletError::IncompleteChoices),
        }
        let mut completed = form.clone();
        completed.choices = choices;
        completed.completed_at = Some(self.now());
        completed.participant_signature = Some(sign(&completed.participant_signed_bytes(), &did)?);
        self.signed_forms.insert(completed.form_id.clone(), completed.clone());
        Ok(completed)
    }

    /// Encrypt the completed form for the organization, then hash the
    /// encrypted serialization. The order is fixed: the proof commits to
    /// ciphertext only.
    pub fn generate_consent_proof(&mut self, form: &PrivateConsentForm, org_doc: &DidDocument) -> Result<(Envelope, Digest), WalletError> {
        self.require(WalletRole::Participant)?;
        if !form.is_complete() {
            return Err(WalletError::IncompleteForm);
        }
        let did = self.project_identities.get(&form.project_id).cloned().ok_or(WalletError::ForeignParticipantDid)?;
        let env = seal_envelope(&form.to_bytes(), &did, org_doc, false, &mut self.rng)?;
        let proof = digest(&env.to_bytes());
        self.consent_store.push(ConsentDossier {
            form: form.clone(),
            encrypted_form: env.clone(),
            proof,
            consent_tx: None,
            status_cache: DossierStatus::Pending,
        });
        Ok((env, proof))
    }

    pub fn record_consent_tx(&mut self, proof: &Digest, tx: TxRef) -> Result<(), WalletError> {
        let d = self.consent_store.iter_mut().find(|d| &d.proof == proof).ok_or(WalletError::UnknownProof)?;
        d.consent_tx = Some(tx);
        d.status_cache = DossierStatus::Valid;
        Ok(())
    }

    pub fn set_status(&mut self, proof: &Digest, status: DossierStatus) -> Result<(), WalletError> {
        let d = self.consent_store.iter_mut().find(|d| &d.proof == proof).ok_or(WalletError::UnknownProof)?;
        if d.consent_tx.is_some() {
            d.status_cache = status;
        }
        Ok(())
    }

    /// Seal the package for a published consent, authenticated by the
    /// project's private DID.
    pub fn consent_package(&mut self, proof: &Digest, org_doc: &DidDocument) -> Result<(ConsentPackage, Envelope), WalletError> {
        let d = self.consent_store.iter().find(|d| &d.proof == proof).ok_or(WalletError::UnknownProof)?;
        let consent_tx = d.consent_tx.clone().ok_or(WalletError::IncompleteForm)?;
        let package = ConsentPackage { envelope: d.encrypted_form.clone(), proof: d.proof, consent_tx };
        let did = self.project_identities.get(&d.form.project_id).cloned().ok_or(WalletError::ForeignParticipantDid)?;
        let msg = WireMessage::ConsentPackage { package: package.clone() };
        let env = seal_envelope(&msg.to_bytes(), &did, org_doc, true, &mut self.rng)?;
        Ok((package, env))
    }

    /// Recompute a proof from the stored encrypted form.
    pub fn regenerate_proof(&self, proof: &Digest) -> Option<Digest> {
        self.dossier(proof).map(|d| digest(&d.encrypted_form.to_bytes()))
    }

    /// Re-complete the organization-signed form behind `old_proof` with new
    /// choices and produce a fresh proof for it.
    pub fn revise_consent(&mut self, old_proof: &Digest, choices: Vec<ConsentField>, org_doc: &DidDocument) -> Result<(Envelope, Digest), WalletError> {
        let template = self.dossier(old_proof).ok_or(WalletError::UnknownProof)?.form.clone();
        let mut blank = template;
        blank.choices.clear();
        blank.completed_at = None;
        blank.participant_signature = None;
        let completed = self.complete_and_sign_form(&blank, choices)?;
        self.generate_consent_proof(&completed, org_doc)
    }

    // Organization side.

    /// Accept a DID-authenticated connection request; returns the private
    /// DID, the project and the sealed acknowledgement.
    pub fn accept_connection(&mut self, env: &Envelope) -> Result<(String, String, Envelope), WalletError> {
        self.require(WalletRole::Organization)?;
        let (msg, sender) = self.open_message(env)?;
        let WireMessage::ConnectionRequest { project_id, nonce } = msg else {
            return Err(WalletError::UnexpectedMessage(msg.kind().into()));
        };
        let sender = sender.ok_or_else(|| WalletError::UnexpectedMessage("unauthenticated connection request".into()))?;
        if !self.projects.contains_key(&project_id) {
            return Err(WalletError::UnknownProject(project_id));
        }
        self.connections.insert(sender.clone(), project_id.clone());
        let reply = WireMessage::ConnectionAccepted { project_id: project_id.clone(), nonce };
        let doc = DidDocument::synthesize(&sender)?;
        let public = self.public_did.clone();
        let env = seal_envelope(&reply.to_bytes(), &public, &doc, true, &mut self.rng)?;
        Ok((sender, project_id, env))
    }

    /// Sign a consent form for `participant_did` and seal it to that DID.
    pub fn build_consent_form(
        &mut self,
        project_id: &str,
        terms_tx: &TxRef,
        participant_did: &str,
        template: &[ConsentField],
    ) -> Result<(PrivateConsentForm, Envelope), WalletError> {
        self.require(WalletRole::Organization)?;
        let project = self.projects.get(project_id).ok_or_else(|| WalletError::UnknownProject(project_id.to_owned()))?;
        if &project.terms_tx != terms_tx {
            return Err(WalletError::TermsMismatch(project_id.to_owned()));
        }
        if template.is_empty() || unique_names(template).is_none() {
            return Err(WalletError::InvalidTemplate);
        }
        let participant_doc = DidDocument::synthesize(participant_did)?;
        let mut id = [0u8; 16];
        self.rng.fill_bytes(&mut id);
        let mut form = PrivateConsentForm {
            form_id: hex::encode(id),
            project_id: project_id.to_owned(),
            terms_tx: terms_tx.clone(),
            org_did: self.public_did.text().to_owned(),
            participant_did: participant_did.to_owned(),
            fields: template.to_vec(),
            created_at: self.now(),
            org_signature: crate::identity::Signature { bytes: vec![], signer: String::new() },
            choices: vec![],
            completed_at: None,
            participant_signature: None,
        };
        form.org_signature = sign(&form.org_signed_bytes(), &self.public_did)?;
        let msg = WireMessage::ConsentForm { form: form.clone() };
        let public = self.public_did.clone();
        let env = seal_envelope(&msg.to_bytes(), &public, &participant_doc, true, &mut self.rng)?;
        Ok((form, env))
    }

    /// The organization's final check on a consent package received over
    /// the connection with `session_did`.
    pub fn verify_consent_package(&self, package: &ConsentPackage, session_did: &str, ledger: &Ledger) -> Result<AcceptedConsent, Rejection> {
        if digest(&package.envelope.to_bytes()) != package.proof {
            return Err(Rejection::DigestMismatch);
        }
        let (plain, _) = open_envelope(&package.envelope, &self.public_did).map_err(|_| Rejection::Undecryptable)?;
        let form: PrivateConsentForm = crate::canonical::from_slice(&plain).map_err(|_| Rejection::MalformedForm)?;
        if form.org_did != self.public_did.text() {
            return Err(Rejection::ForeignForm);
        }
        if !form.verify_org_signature() {
            return Err(Rejection::OrgSignatureInvalid);
        }
        if !form.is_complete() || !form.verify_participant_signature() {
            return Err(Rejection::ParticipantSignatureInvalid);
        }
        if form.participant_did != session_did {
            return Err(Rejection::ParticipantMismatch);
        }
        match ledger.query_tx(&package.consent_tx) {
            Ok(QueryResult::Consent(record)) if record.key == package.proof => {
                if record.state != ConsentState::Valid {
                    return Err(Rejection::NotValid);
                }
            }
            _ => return Err(Rejection::NotOnLedger),
        }
        Ok(AcceptedConsent {
            proof: package.proof,
            consent_tx: package.consent_tx.clone(),
            participant_did: form.participant_did,
            project_id: form.project_id,
            form_id: form.form_id,
            package: package.clone(),
        })
    }

    /// Open a package message, verify it against its connection and keep
    /// it when accepted. The returned envelope is the receipt for the
    /// participant.
    pub fn receive_package(&mut self, env: &Envelope, ledger: &Ledger) -> Result<(Result<AcceptedConsent, Rejection>, Envelope), WalletError> {
        self.require(WalletRole::Organization)?;
        let (msg, sender) = self.open_message(env)?;
        let WireMessage::ConsentPackage { package } = msg else {
            return Err(WalletError::UnexpectedMessage(msg.kind().into()));
        };
        let sender = sender.ok_or_else(|| WalletError::UnexpectedMessage("unauthenticated package".into()))?;
        if !self.connections.contains_key(&sender) {
            return Err(WalletError::UnknownConnection(sender));
        }
        let outcome = self.verify_consent_package(&package, &sender, ledger);
        if let Ok(accepted) = &outcome {
            self.accepted.push(accepted.clone());
        }
        let receipt = WireMessage::PackageReceipt {
            proof: package.proof,
            accepted: outcome.is_ok(),
            reason: outcome.as_ref().err().map(ToString::to_string),
        };
        let doc = DidDocument::synthesize(&sender)?;
        let public = self.public_did.clone();
        let reply = seal_envelope(&receipt.to_bytes(), &public, &doc, true, &mut self.rng)?;
        Ok((outcome, reply))
    }
}
