//! Dynamic consent over decentralized identifiers.
//!
//! Participants hold a wallet with one public DID and a fresh private DID
//! per research project. Consent forms travel encrypted between wallets
//! through a [`mediator`]; only a digest of the encrypted form reaches the
//! permissioned [`ledger`], published by the [`portal`] under its own
//! identity. The [`harness`] drives full scenarios, adversary models and
//! benchmarks over these components.

pub mod canonical;
pub mod clock;
pub mod enrollment;
pub mod harness;
pub mod identity;
pub mod ledger;
pub mod mediator;
pub mod net;
pub mod portal;
pub mod wallet;
