use std::sync::Arc;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{body, reply, Service, ServiceError};
use crate::canonical::b64;
use crate::enrollment::{EnrollmentAuthority, EnrollmentError, Warrant};
use crate::identity::{Digest, DidKind, Envelope, Signature};
use crate::ledger::{Ledger, LedgerError, Operation, Transaction, TxRef};
use crate::mediator::{Mediator, MediatorError, TransportHandle};
use crate::portal::{AuthToken, ForgetScope, Portal, PortalError, ProfileRole, ProjectFilter};
use crate::enrollment::VerifiableCredential;
use crate::wallet::CatalogEntry;

fn unknown(endpoint: &str) -> ServiceError {
    ServiceError::new("unknown_endpoint", endpoint)
}

impl From<LedgerError> for ServiceError {
    fn from(e: LedgerError) -> Self {
        ServiceError::new(e.kind(), e.to_string())
    }
}

impl From<PortalError> for ServiceError {
    fn from(e: PortalError) -> Self {
        ServiceError::new(e.kind(), e.to_string())
    }
}

impl From<MediatorError> for ServiceError {
    fn from(e: MediatorError) -> Self {
        let kind = match &e {
            MediatorError::DuplicateInbox(_) => "duplicate_inbox",
            MediatorError::FailedProof(_) => "failed_proof",
            MediatorError::UnknownDestination(_) => "unknown_destination",
            MediatorError::BadToken => "bad_token",
            MediatorError::HarnessModeDisabled => "harness_mode_disabled",
            MediatorError::Identity(_) => "identity",
        };
        ServiceError::new(kind, e.to_string())
    }
}

impl From<EnrollmentError> for ServiceError {
    fn from(e: EnrollmentError) -> Self {
        let kind = match &e {
            EnrollmentError::EvidenceRejected => "evidence_rejected",
            EnrollmentError::AlreadyEnrolled(_) => "already_enrolled",
            EnrollmentError::NotEnrolled(_) => "not_enrolled",
            EnrollmentError::NoWarrant => "no_warrant",
            EnrollmentError::InvalidWarrant => "invalid_warrant",
            EnrollmentError::Identity(_) => "identity",
        };
        ServiceError::new(kind, e.to_string())
    }
}

/// Endpoints: `simulate`, `submit`, `query_proof`, `query_terms`,
/// `query_tx`, `height`, `verify_chain`.
pub struct LedgerService(pub Arc<Ledger>);

#[derive(Deserialize)]
struct SimulateBody {
    submitter: String,
    operation: Operation,
}

impl Service for LedgerService {
    fn handle(&self, endpoint: &str, _: Option<&str>, b: Value) -> Result<Value, ServiceError> {
        let ledger = &self.0;
        match endpoint {
            "simulate" => {
                let SimulateBody { submitter, operation } = body(b)?;
                reply(ledger.simulate(&submitter, &operation)?)
            }
            "submit" => reply(ledger.submit_and_wait(body::<Transaction>(b)?)?),
            "query_proof" => {
                #[derive(Deserialize)]
                struct B {
                    proof: Digest,
                }
                let B { proof } = body(b)?;
                let record = ledger.query_proof(&proof)?;
                let version = ledger.query_key(&crate::ledger::proof_key(&proof)).map(|v| v.version);
                reply(json!({"record": record, "version": version}))
            }
            "query_terms" => {
                #[derive(Deserialize)]
                struct B {
                    terms_id: String,
                }
                let B { terms_id } = body(b)?;
                reply(ledger.query_terms(&terms_id)?)
            }
            "query_tx" => reply(ledger.query_tx(&body::<TxRef>(b)?)?),
            "height" => reply(ledger.height()),
            "verify_chain" => {
                ledger.verify_chain()?;
                reply(json!({"height": ledger.height(), "state_digest": ledger.state_digest()}))
            }
            other => Err(unknown(other)),
        }
    }
}

/// Endpoints: `challenge`, `register`, `authenticate`, `publish_project`,
/// `projects`, `publish`, `history`, `revoke`, `update`, `forget`.
pub struct PortalService(pub Arc<Portal>);

fn session(s: Option<&str>) -> Result<&str, ServiceError> {
    s.ok_or_else(|| PortalError::InvalidSession.into())
}

impl Service for PortalService {
    fn handle(&self, endpoint: &str, s: Option<&str>, b: Value) -> Result<Value, ServiceError> {
        let portal = &self.0;
        match endpoint {
            "challenge" => {
                #[derive(Deserialize)]
                struct B {
                    did: String,
                }
                let B { did } = body(b)?;
                reply(portal.challenge(&did))
            }
            "register" => {
                #[derive(Deserialize)]
                struct B {
                    token: AuthToken,
                    credential: Option<VerifiableCredential>,
                    role: ProfileRole,
                }
                let B { token, credential, role } = body(b)?;
                reply(portal.register(&token, credential.as_ref(), role)?)
            }
            "authenticate" => reply(portal.authenticate(&body(b)?)?),
            "publish_project" => {
                portal.publish_project(session(s)?, body::<CatalogEntry>(b)?)?;
                reply(Value::Null)
            }
            "projects" => {
                let filter = if b.is_null() { ProjectFilter::default() } else { body(b)? };
                reply(portal.list_projects(session(s)?, &filter)?)
            }
            // The body is exactly the closed publication schema.
            "publish" => {
                let raw = serde_json::to_vec(&b).expect("value serializes");
                reply(portal.proxy_publish_json(&raw)?)
            }
            "history" => reply(portal.consent_history(session(s)?)?),
            "revoke" => {
                #[derive(Deserialize)]
                struct B {
                    consent_tx: TxRef,
                }
                let B { consent_tx } = body(b)?;
                reply(portal.request_revoke(session(s)?, &consent_tx)?)
            }
            "update" => {
                #[derive(Deserialize)]
                struct B {
                    old_consent_tx: TxRef,
                    new_proof: Digest,
                }
                let B { old_consent_tx, new_proof } = body(b)?;
                reply(portal.request_update(session(s)?, &old_consent_tx, new_proof)?)
            }
            "forget" => reply(portal.forget_me(session(s)?, &body::<ForgetScope>(b)?)?),
            other => Err(unknown(other)),
        }
    }
}

/// Endpoints: `challenge`, `register`, `route`, `fetch`, `metadata`.
pub struct MediatorService(pub Arc<Mediator>);

impl Service for MediatorService {
    fn handle(&self, endpoint: &str, _: Option<&str>, b: Value) -> Result<Value, ServiceError> {
        let m = &self.0;
        match endpoint {
            "challenge" => {
                #[derive(Deserialize)]
                struct B {
                    did: String,
                }
                let B { did } = body(b)?;
                reply(m.challenge(&did))
            }
            "register" => {
                #[derive(Deserialize)]
                struct B {
                    did: String,
                    kind: DidKind,
                    signature: Option<Signature>,
                }
                let B { did, kind, signature } = body(b)?;
                reply(json!({"token": m.register_inbox(&did, kind, signature.as_ref())?}))
            }
            "route" => {
                #[derive(Deserialize)]
                struct B {
                    source: TransportHandle,
                    envelope: Envelope,
                }
                let B { source, envelope } = body(b)?;
                reply(m.route(&source, &envelope)?)
            }
            "fetch" => {
                #[derive(Deserialize)]
                struct B {
                    did: String,
                    token: String,
                }
                let B { did, token } = body(b)?;
                reply(m.fetch(&did, &token)?)
            }
            "metadata" => reply(m.metadata_view()?),
            other => Err(unknown(other)),
        }
    }
}

/// Endpoints: `enroll`, `investigate`.
pub struct EnrollmentService(pub Arc<EnrollmentAuthority>);

impl Service for EnrollmentService {
    fn handle(&self, endpoint: &str, _: Option<&str>, b: Value) -> Result<Value, ServiceError> {
        match endpoint {
            "enroll" => {
                #[derive(Deserialize)]
                struct B {
                    #[serde(with = "b64")]
                    evidence: Vec<u8>,
                    public_did: String,
                }
                let B { evidence, public_did } = body(b)?;
                reply(self.0.enroll(&evidence, &public_did)?)
            }
            "investigate" => {
                #[derive(Deserialize)]
                struct B {
                    public_did: String,
                    warrant: Option<Warrant>,
                }
                let B { public_did, warrant } = body(b)?;
                reply(json!({"real_identity": self.0.investigate(&public_did, warrant.as_ref())?}))
            }
            other => Err(unknown(other)),
        }
    }
}
