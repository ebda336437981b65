use std::collections::{BTreeMap, HashSet};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::canonical::{self, b64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Sent,
    Received,
    Opened,
    PortalRequest,
    PortalResponse,
    Routed,
    Block,
}

/// One observation, with the exact bytes the actor saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub kind: EventKind,
    pub counterparty: String,
    /// Connection or session the event belongs to, as the actor knows it.
    pub channel: String,
    #[serde(with = "b64")]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub actor: String,
    pub events: Vec<Event>,
}

impl Transcript {
    pub fn new(actor: impl Into<String>) -> Self {
        Transcript { actor: actor.into(), events: vec![] }
    }

    pub fn push(&mut self, kind: EventKind, counterparty: &str, channel: &str, bytes: Vec<u8>) {
        let seq = self.events.len() as u64;
        self.events.push(Event { seq, kind, counterparty: counterparty.to_owned(), channel: channel.to_owned(), bytes });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        canonical::to_vec(self)
    }

    /// Identifier-like tokens across all event bytes: maximal runs of
    /// base64url, hex and DID characters of at least 16 bytes.
    pub fn tokens(&self) -> HashSet<String> {
        let mut out = HashSet::new();
        for e in &self.events {
            collect_tokens(&e.bytes, &mut out);
        }
        out
    }

    /// Tokens grouped by channel.
    pub fn tokens_by_channel(&self) -> BTreeMap<String, HashSet<String>> {
        let mut out: BTreeMap<String, HashSet<String>> = BTreeMap::new();
        for e in &self.events {
            collect_tokens(&e.bytes, out.entry(e.channel.clone()).or_default());
        }
        out
    }
}

pub(crate) fn collect_tokens(bytes: &[u8], out: &mut HashSet<String>) {
    let is_tok = |b: u8| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b':';
    for run in bytes.split(|b| !is_tok(*b)) {
        if run.len() >= 16 {
            out.insert(String::from_utf8_lossy(run).into_owned());
        }
    }
}

/// Per-actor transcripts. Each actor's log is only appended to by the
/// wiring code acting on that actor's behalf.
#[derive(Debug, Default)]
pub struct TranscriptBook {
    logs: Mutex<BTreeMap<String, Transcript>>,
}

impl TranscriptBook {
    pub fn record(&self, actor: &str, kind: EventKind, counterparty: &str, channel: &str, bytes: Vec<u8>) {
        self.logs
            .lock()
            .entry(actor.to_owned())
            .or_insert_with(|| Transcript::new(actor))
            .push(kind, counterparty, channel, bytes);
    }

    pub fn get(&self, actor: &str) -> Transcript {
        self.logs.lock().get(actor).cloned().unwrap_or_else(|| Transcript::new(actor))
    }

    pub fn all(&self) -> Vec<Transcript> {
        self.logs.lock().values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_split_on_json_punctuation() {
        let mut t = Transcript::new("a");
        t.push(EventKind::Sent, "b", "c", br#"{"did":"did:key:z6MkabcdefghijklmnOP","n":1,"short":"abc"}"#.to_vec());
        let toks = t.tokens();
        assert!(toks.contains("did:key:z6MkabcdefghijklmnOP"));
        assert!(!toks.contains("abc"));
    }
}
