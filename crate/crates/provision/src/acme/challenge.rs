//! Where the client puts challenge responses so the CA can find them.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use parking_lot::RwLock;
use tokio::task::JoinHandle;

use super::jws::dns01_txt_value;
use super::types::ChallengeType;
use super::AcmeError;
use crate::dns::DnsAuthority;

pub trait ChallengeFulfiller: Send + Sync {
    /// Publishes the response for one challenge.
    fn install(&self, kind: ChallengeType, fqdn: &str, token: &str, key_authorization: &str) -> Result<(), AcmeError>;
    /// Withdraws it again. Must be safe to call when nothing was installed.
    fn cleanup(&self, kind: ChallengeType, fqdn: &str, token: &str);
}

fn unsupported(kind: ChallengeType, by: &str) -> AcmeError {
    AcmeError::ChallengeFailed(format!("{kind} cannot be fulfilled by {by}"))
}

impl ChallengeFulfiller for DnsAuthority {
    fn install(&self, kind: ChallengeType, fqdn: &str, _token: &str, key_authorization: &str) -> Result<(), AcmeError> {
        if kind != ChallengeType::Dns01 {
            return Err(unsupported(kind, "the DNS authority"));
        }
        self.set_acme_txt(fqdn, &dns01_txt_value(key_authorization))
            .map(drop)
            .map_err(|e| AcmeError::ChallengeFailed(e.to_string()))
    }

    fn cleanup(&self, kind: ChallengeType, fqdn: &str, _token: &str) {
        if kind == ChallengeType::Dns01 {
            let _ = self.clear_acme_txt(fqdn);
        }
    }
}

/// In-memory `/.well-known/acme-challenge/{token}` responder for http-01.
#[derive(Debug, Clone, Default)]
pub struct HttpTokenShelf {
    tokens: Arc<RwLock<HashMap<String, String>>>,
}

impl HttpTokenShelf {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&self, token: &str, key_authorization: &str) {
        self.tokens.write().insert(token.to_owned(), key_authorization.to_owned());
    }

    pub fn take(&self, token: &str) -> Option<String> {
        self.tokens.write().remove(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn router(&self) -> Router {
        async fn serve(State(shelf): State<HttpTokenShelf>, Path(token): Path<String>) -> Result<String, StatusCode> {
            shelf.tokens.read().get(&token).cloned().ok_or(StatusCode::NOT_FOUND)
        }
        Router::new().route("/.well-known/acme-challenge/{token}", get(serve)).with_state(self.clone())
    }

    /// Serves the shelf over plain HTTP, as http-01 requires.
    pub async fn serve(&self, addr: &str) -> Result<ShelfServer, AcmeError> {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| AcmeError::BindFailure(format!("{addr}: {e}")))?;
        let local_addr = listener.local_addr().map_err(|e| AcmeError::BindFailure(e.to_string()))?;
        let app = self.router();
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                log::warn!("token shelf stopped: {e}");
            }
        });
        Ok(ShelfServer { local_addr, task })
    }
}

impl ChallengeFulfiller for HttpTokenShelf {
    fn install(&self, kind: ChallengeType, _fqdn: &str, token: &str, key_authorization: &str) -> Result<(), AcmeError> {
        if kind != ChallengeType::Http01 {
            return Err(unsupported(kind, "the HTTP token shelf"));
        }
        self.put(token, key_authorization);
        Ok(())
    }

    fn cleanup(&self, kind: ChallengeType, _fqdn: &str, token: &str) {
        if kind == ChallengeType::Http01 {
            self.take(token);
        }
    }
}

/// Running shelf; stops when dropped.
#[derive(Debug)]
pub struct ShelfServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl ShelfServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }
}

impl Drop for ShelfServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Routes each challenge type to whichever fulfiller handles it.
#[derive(Debug, Clone)]
pub struct VendorFulfiller {
    pub dns: DnsAuthority,
    pub http: HttpTokenShelf,
}

impl ChallengeFulfiller for VendorFulfiller {
    fn install(&self, kind: ChallengeType, fqdn: &str, token: &str, key_authorization: &str) -> Result<(), AcmeError> {
        match kind {
            ChallengeType::Dns01 => self.dns.install(kind, fqdn, token, key_authorization),
            ChallengeType::Http01 => self.http.install(kind, fqdn, token, key_authorization),
        }
    }

    fn cleanup(&self, kind: ChallengeType, fqdn: &str, token: &str) {
        match kind {
            ChallengeType::Dns01 => self.dns.cleanup(kind, fqdn, token),
            ChallengeType::Http01 => self.http.cleanup(kind, fqdn, token),
        }
    }
}
