use serde::{Deserialize, Serialize};

use super::PrivateConsentForm;
use crate::canonical::{self, b64};
use crate::identity::{Digest, Envelope};
use crate::ledger::TxRef;

/// What a participant hands to the organization after publication: the
/// sealed completed form, its digest and the ledger reference.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentPackage {
    pub envelope: Envelope,
    pub proof: Digest,
    pub consent_tx: TxRef,
}

/// Wallet-to-wallet plaintexts. Always travel inside an [`Envelope`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireMessage {
    ConnectionRequest {
        project_id: String,
        #[serde(with = "b64")]
        nonce: Vec<u8>,
    },
    ConnectionAccepted {
        project_id: String,
        #[serde(with = "b64")]
        nonce: Vec<u8>,
    },
    ConsentForm {
        form: PrivateConsentForm,
    },
    ConsentPackage {
        package: ConsentPackage,
    },
    PackageReceipt {
        proof: Digest,
        accepted: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
}

impl WireMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        canonical::from_slice(bytes).ok()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::ConnectionRequest { .. } => "connection_request",
            WireMessage::ConnectionAccepted { .. } => "connection_accepted",
            WireMessage::ConsentForm { .. } => "consent_form",
            WireMessage::ConsentPackage { .. } => "consent_package",
            WireMessage::PackageReceipt { .. } => "package_receipt",
        }
    }
}
