use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::identity::{verify_by_signer, Signature};
use crate::ledger::TxRef;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentField {
    pub name: String,
    pub value: String,
}

impl ConsentField {
    pub fn new(name: impl Into<String>, value: impl Into<String>) -> Self {
        ConsentField { name: name.into(), value: value.into() }
    }
}

/// Per-participant consent form.
///
/// The organization signs the template (`fields` and the protocol fields);
/// the participant's signature wraps that content, the organization's
/// signature and the participant's `choices`, so the nesting order is
/// evident from the signed bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrivateConsentForm {
    pub form_id: String,
    pub project_id: String,
    pub terms_tx: TxRef,
    pub org_did: String,
    pub participant_did: String,
    pub fields: Vec<ConsentField>,
    pub created_at: u64,
    pub org_signature: Signature,
    #[serde(default)]
    pub choices: Vec<ConsentField>,
    #[serde(default)]
    pub completed_at: Option<u64>,
    #[serde(default)]
    pub participant_signature: Option<Signature>,
}

#[derive(Serialize)]
struct OrgContent<'a> {
    form_id: &'a str,
    project_id: &'a str,
    terms_tx: &'a TxRef,
    org_did: &'a str,
    participant_did: &'a str,
    fields: &'a [ConsentField],
    created_at: u64,
}

#[derive(Serialize)]
struct ParticipantContent<'a> {
    org_content: OrgContent<'a>,
    org_signature: &'a Signature,
    choices: &'a [ConsentField],
    completed_at: Option<u64>,
}

impl PrivateConsentForm {
    fn org_content(&self) -> OrgContent<'_> {
        OrgContent {
            form_id: &self.form_id,
            project_id: &self.project_id,
            terms_tx: &self.terms_tx,
            org_did: &self.org_did,
            participant_did: &self.participant_did,
            fields: &self.fields,
            created_at: self.created_at,
        }
    }

    pub fn org_signed_bytes(&self) -> Vec<u8> {
        canonical::to_vec(&self.org_content())
    }

    pub fn participant_signed_bytes(&self) -> Vec<u8> {
        canonical::to_vec(&ParticipantContent {
            org_content: self.org_content(),
            org_signature: &self.org_signature,
            choices: &self.choices,
            completed_at: self.completed_at,
        })
    }

    pub fn verify_org_signature(&self) -> bool {
        self.org_signature.signer == self.org_did && verify_by_signer(&self.org_signed_bytes(), &self.org_signature)
    }

    pub fn verify_participant_signature(&self) -> bool {
        match &self.participant_signature {
            Some(sig) => sig.signer == self.participant_did && verify_by_signer(&self.participant_signed_bytes(), sig),
            None => false,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.participant_signature.is_some() && self.completed_at.is_some()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }
}
