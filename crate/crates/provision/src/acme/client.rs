use std::time::Duration;

use parking_lot::Mutex;
use reqwest::header::{HeaderMap, CONTENT_TYPE, LOCATION};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use super::challenge::ChallengeFulfiller;
use super::jws::{b64, key_authorization, AccountKey};
use super::types::{Authorization, ChallengeType, Directory, Identifier, Order, Problem, Status};
use super::AcmeError;

const NONCE_RETRIES: usize = 3;
const POLL_ATTEMPTS: usize = 40;
const POLL_INTERVAL: Duration = Duration::from_millis(50);

/// Raw outcome of one signed request.
#[derive(Debug)]
pub struct SignedResponse {
    pub status: StatusCode,
    pub location: Option<String>,
    pub body: Vec<u8>,
    pub problem: Option<Problem>,
}

impl SignedResponse {
    fn json<T: DeserializeOwned>(&self) -> Result<T, AcmeError> {
        serde_json::from_slice(&self.body).map_err(|e| AcmeError::Protocol(format!("unexpected body: {e}")))
    }
}

/// An RFC 8555 client bound to one account.
pub struct AcmeClient {
    http: reqwest::Client,
    directory: Directory,
    key: AccountKey,
    kid: String,
    nonces: Mutex<Vec<String>>,
    last_order: Mutex<Option<String>>,
}

impl std::fmt::Debug for AcmeClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcmeClient").field("kid", &self.kid).finish_non_exhaustive()
    }
}

fn unreachable(url: &str, e: reqwest::Error) -> AcmeError {
    AcmeError::CaUnreachable(format!("{url}: {e}"))
}

impl AcmeClient {
    /// Fetches the directory and registers (or finds) the account for `key`.
    /// `extra_root_pem` adds a trust anchor for the CA's HTTPS certificate.
    pub async fn connect(directory_url: &str, extra_root_pem: Option<&str>, key: AccountKey) -> Result<Self, AcmeError> {
        let mut builder = reqwest::Client::builder().use_rustls_tls().timeout(Duration::from_secs(20)).no_proxy();
        if let Some(pem) = extra_root_pem {
            let cert = reqwest::Certificate::from_pem(pem.as_bytes()).map_err(|e| AcmeError::Malformed(e.to_string()))?;
            builder = builder.add_root_certificate(cert);
        }
        let http = builder.build().map_err(|e| AcmeError::Internal(e.to_string()))?;
        let resp = http.get(directory_url).send().await.map_err(|e| unreachable(directory_url, e))?;
        if !resp.status().is_success() {
            return Err(AcmeError::CaUnreachable(format!("{directory_url}: HTTP {}", resp.status())));
        }
        let directory: Directory = resp.json().await.map_err(|e| AcmeError::Protocol(e.to_string()))?;
        let mut client = Self { http, directory, key, kid: String::new(), nonces: Mutex::new(Vec::new()), last_order: Mutex::new(None) };
        let url = client.directory.new_account.clone();
        let resp = client.post_checked(&url, Some(&json!({"termsOfServiceAgreed": true})), true).await?;
        client.kid = resp.location.ok_or_else(|| AcmeError::Protocol("new-account without Location".into()))?;
        Ok(client)
    }

    pub fn kid(&self) -> &str {
        &self.kid
    }

    pub fn account_key(&self) -> &AccountKey {
        &self.key
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    fn remember_nonce(&self, headers: &HeaderMap) {
        if let Some(n) = headers.get("replay-nonce").and_then(|v| v.to_str().ok()) {
            self.nonces.lock().push(n.to_owned());
        }
    }

    /// A fresh nonce from the pool, or from new-nonce if the pool is empty.
    pub async fn nonce(&self) -> Result<String, AcmeError> {
        if let Some(n) = self.nonces.lock().pop() {
            return Ok(n);
        }
        let url = &self.directory.new_nonce;
        let resp = self.http.head(url).send().await.map_err(|e| unreachable(url, e))?;
        resp.headers()
            .get("replay-nonce")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned)
            .ok_or_else(|| AcmeError::Protocol("new-nonce returned no nonce".into()))
    }

    /// One signed POST with a caller-chosen nonce. No retry.
    pub async fn post_with_nonce(&self, url: &str, nonce: &str, payload: Option<&Value>, use_jwk: bool) -> Result<SignedResponse, AcmeError> {
        let kid = (!use_jwk).then_some(self.kid.as_str());
        let jws = self.key.sign(url, nonce, kid, payload)?;
        let resp = self
            .http
            .post(url)
            .header(CONTENT_TYPE, "application/jose+json")
            .json(&jws)
            .send()
            .await
            .map_err(|e| unreachable(url, e))?;
        self.remember_nonce(resp.headers());
        let status = resp.status();
        let location = resp.headers().get(LOCATION).and_then(|v| v.to_str().ok()).map(str::to_owned);
        let is_problem = resp
            .headers()
            .get(CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|ct| ct.starts_with("application/problem+json"));
        let body = resp.bytes().await.map_err(|e| unreachable(url, e))?.to_vec();
        let problem = if is_problem || !status.is_success() {
            Some(serde_json::from_slice(&body).unwrap_or_else(|_| Problem {
                kind: "about:blank".into(),
                detail: String::from_utf8_lossy(&body).into_owned(),
                status: Some(status.as_u16()),
            }))
        } else {
            None
        };
        Ok(SignedResponse { status, location, body, problem })
    }

    /// Signed POST that retries on badNonce and maps problems to errors.
    async fn post_checked(&self, url: &str, payload: Option<&Value>, use_jwk: bool) -> Result<SignedResponse, AcmeError> {
        let mut last = None;
        for _ in 0..NONCE_RETRIES {
            let nonce = self.nonce().await?;
            let resp = self.post_with_nonce(url, &nonce, payload, use_jwk).await?;
            match &resp.problem {
                None => return Ok(resp),
                Some(p) if p.short() == "badNonce" => last = Some(AcmeError::from_problem(p)),
                Some(p) => return Err(AcmeError::from_problem(p)),
            }
        }
        Err(last.unwrap_or_else(|| AcmeError::BadNonce("retries exhausted".into())))
    }

    async fn post_as_get<T: DeserializeOwned>(&self, url: &str) -> Result<T, AcmeError> {
        self.post_checked(url, None, false).await?.json()
    }

    /// Runs a complete order for `fqdn` and returns the PEM chain.
    pub async fn obtain_certificate(
        &self,
        fqdn: &str,
        csr_der: &[u8],
        challenge: ChallengeType,
        fulfiller: &dyn ChallengeFulfiller,
    ) -> Result<String, AcmeError> {
        let payload = json!({"identifiers": [Identifier::dns(fqdn)]});
        let resp = self.post_checked(&self.directory.new_order.clone(), Some(&payload), false).await?;
        let order_url = resp.location.clone().ok_or_else(|| AcmeError::Protocol("new-order without Location".into()))?;
        let order: Order = resp.json()?;
        *self.last_order.lock() = Some(order_url.clone());

        for authz_url in &order.authorizations {
            let authz: Authorization = self.post_as_get(authz_url).await?;
            if authz.status == Status::Valid {
                continue;
            }
            let ch = authz
                .challenges
                .iter()
                .find(|c| c.kind == challenge)
                .ok_or_else(|| AcmeError::ChallengeFailed(format!("CA offered no {challenge} challenge")))?;
            let ka = key_authorization(&ch.token, &self.key.thumbprint())?;
            let name = &authz.identifier.value;
            fulfiller.install(challenge, name, &ch.token, &ka)?;
            let result = self.complete_challenge(authz_url, &ch.url).await;
            fulfiller.cleanup(challenge, name, &ch.token);
            result?;
        }

        let order = self.wait_order(&order_url, Status::Ready).await?;
        let resp = self.post_checked(&order.finalize, Some(&json!({"csr": b64(csr_der)})), false).await?;
        let mut order: Order = resp.json()?;
        if order.status != Status::Valid {
            order = self.wait_order(&order_url, Status::Valid).await?;
        }
        let cert_url = order.certificate.ok_or_else(|| AcmeError::Protocol("valid order without certificate".into()))?;
        let resp = self.post_checked(&cert_url, None, false).await?;
        String::from_utf8(resp.body).map_err(|_| AcmeError::Protocol("certificate is not UTF-8".into()))
    }

    async fn complete_challenge(&self, authz_url: &str, challenge_url: &str) -> Result<(), AcmeError> {
        self.post_checked(challenge_url, Some(&json!({})), false).await?;
        for _ in 0..POLL_ATTEMPTS {
            let authz: Authorization = self.post_as_get(authz_url).await?;
            match authz.status {
                Status::Valid => return Ok(()),
                Status::Invalid => {
                    let detail = authz
                        .challenges
                        .iter()
                        .find_map(|c| c.error.as_ref().map(|p| p.detail.clone()))
                        .unwrap_or_else(|| "authorization invalid".into());
                    return Err(AcmeError::ChallengeFailed(detail));
                }
                _ => tokio::time::sleep(POLL_INTERVAL).await,
            }
        }
        Err(AcmeError::ChallengeFailed("authorization still pending".into()))
    }

    async fn wait_order(&self, order_url: &str, want: Status) -> Result<Order, AcmeError> {
        for _ in 0..POLL_ATTEMPTS {
            let order: Order = self.post_as_get(order_url).await?;
            if order.status == want || (want == Status::Ready && order.status == Status::Valid) {
                return Ok(order);
            }
            if order.status == Status::Invalid {
                let detail = order.error.map(|p| p.detail).unwrap_or_else(|| "order invalid".into());
                return Err(AcmeError::ChallengeFailed(detail));
            }
            tokio::time::sleep(POLL_INTERVAL).await;
        }
        Err(AcmeError::Protocol(format!("order did not reach {want:?}")))
    }

    /// URL of the most recent order this client created.
    pub fn last_order_url(&self) -> Option<String> {
        self.last_order.lock().clone()
    }

    /// Fetches the order object at `url`.
    pub async fn order(&self, url: &str) -> Result<Order, AcmeError> {
        self.post_as_get(url).await
    }
}
