//! RFC 8555 issuance: a client for the vendor backend and an embedded test CA
//! that serves the directory/order/challenge/finalize flow over HTTPS.
//!
//! Implemented subset: account creation, orders for `dns` identifiers,
//! `http-01` and `dns-01` challenges, finalize and certificate download.

pub mod ca;
pub mod challenge;
pub mod client;
pub mod jws;
pub mod server;
pub mod types;

use thiserror::Error;

pub use ca::{CaConfig, IssuedCert, OrderQuota, TestCa};
pub use challenge::{ChallengeFulfiller, HttpTokenShelf, ShelfServer, VendorFulfiller};
pub use client::AcmeClient;
pub use jws::{dns01_txt_value, key_authorization, AccountKey, Jwk};
pub use server::{AcmeServer, Probe};
pub use types::{ChallengeType, Problem, Status};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AcmeError {
    #[error("challenge failed: {0}")]
    ChallengeFailed(String),
    #[error("CSR does not match the order: {0}")]
    CsrMismatch(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("CA unreachable: {0}")]
    CaUnreachable(String),
    #[error("invalid challenge token {0:?}")]
    InvalidToken(String),
    #[error("bad nonce: {0}")]
    BadNonce(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("unsupported signature algorithm: {0}")]
    BadSignatureAlgorithm(String),
    #[error("order not ready: {0}")]
    OrderNotReady(String),
    #[error("rejected identifier: {0}")]
    RejectedIdentifier(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("cannot bind {0}")]
    BindFailure(String),
    #[error("CA problem: {0}")]
    Protocol(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl AcmeError {
    /// The problem document a server sends for this error.
    pub fn to_problem(&self) -> Problem {
        let (short, status) = match self {
            AcmeError::ChallengeFailed(_) => ("incorrectResponse", 403),
            AcmeError::CsrMismatch(_) => ("badCSR", 400),
            AcmeError::RateLimited(_) => ("rateLimited", 429),
            AcmeError::BadNonce(_) => ("badNonce", 400),
            AcmeError::Malformed(_) | AcmeError::InvalidToken(_) => ("malformed", 400),
            AcmeError::Unauthorized(_) => ("unauthorized", 403),
            AcmeError::BadSignatureAlgorithm(_) => ("badSignatureAlgorithm", 400),
            AcmeError::OrderNotReady(_) => ("orderNotReady", 403),
            AcmeError::RejectedIdentifier(_) => ("rejectedIdentifier", 400),
            AcmeError::NotFound(_) => ("malformed", 404),
            _ => ("serverInternal", 500),
        };
        let detail = match self {
            AcmeError::ChallengeFailed(d)
            | AcmeError::CsrMismatch(d)
            | AcmeError::RateLimited(d)
            | AcmeError::BadNonce(d)
            | AcmeError::Malformed(d)
            | AcmeError::Unauthorized(d)
            | AcmeError::BadSignatureAlgorithm(d)
            | AcmeError::OrderNotReady(d)
            | AcmeError::RejectedIdentifier(d)
            | AcmeError::NotFound(d)
            | AcmeError::Protocol(d)
            | AcmeError::Internal(d)
            | AcmeError::CaUnreachable(d)
            | AcmeError::BindFailure(d) => d.clone(),
            AcmeError::InvalidToken(t) => format!("invalid token {t:?}"),
        };
        Problem::new(short, detail, status)
    }

    /// Client-side interpretation of a problem document.
    pub fn from_problem(p: &Problem) -> Self {
        let d = p.detail.clone();
        match p.short() {
            "incorrectResponse" | "dns" | "connection" => AcmeError::ChallengeFailed(d),
            "badCSR" => AcmeError::CsrMismatch(d),
            "rateLimited" => AcmeError::RateLimited(d),
            "badNonce" => AcmeError::BadNonce(d),
            "unauthorized" => AcmeError::Unauthorized(d),
            "badSignatureAlgorithm" => AcmeError::BadSignatureAlgorithm(d),
            "orderNotReady" => AcmeError::OrderNotReady(d),
            "rejectedIdentifier" => AcmeError::RejectedIdentifier(d),
            "malformed" => AcmeError::Malformed(d),
            _ => AcmeError::Protocol(p.to_string()),
        }
    }
}
