//! HTTPS front end of the test CA.
//!
//! Challenges are validated by probing: dns-01 asks the vendor's
//! authoritative server for the TXT record, http-01 resolves the identifier
//! through that server and fetches the token over plain HTTP.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::net::{IpAddr, SocketAddr};
use std::sync::Arc;
use std::time::Duration as StdDuration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{any, get, post};
use axum::Router;
use hyper_util::rt::TokioIo;
use hyper_util::service::TowerToHyperService;
use parking_lot::{Mutex, RwLock};
use rand::RngCore;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::task::{JoinHandle, JoinSet};
use tokio_rustls::TlsAcceptor;

use super::ca::{CaConfig, OrderQuota, TestCa};
use super::jws::{b64, b64_decode, key_authorization, dns01_txt_value, Jwk, Jws};
use super::types::{Authorization, Challenge, ChallengeType, Directory, Identifier, Order, Problem, Status};
use super::AcmeError;
use crate::clock::SharedClock;
use crate::dns::wire::RCODE_NOERROR;
use crate::dns::{query_udp, RData};

const PROBE_TIMEOUT: StdDuration = StdDuration::from_secs(2);
const MAX_CNAME_HOPS: usize = 8;

/// Where the CA looks to validate names under one apex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Probe {
    /// The zone's authoritative DNS responder.
    pub dns: SocketAddr,
    /// Port of the http-01 responder on whatever address the name resolves to.
    pub http_port: u16,
}

struct ChallRec {
    id: String,
    kind: ChallengeType,
    token: String,
    status: Status,
    error: Option<Problem>,
}

struct AuthzRec {
    account: String,
    identifier: String,
    status: Status,
    challenges: Vec<ChallRec>,
}

struct OrderRec {
    account: String,
    status: Status,
    identifiers: Vec<String>,
    authz_ids: Vec<String>,
    cert_id: Option<String>,
    error: Option<Problem>,
}

#[derive(Default)]
struct Book {
    nonces: HashSet<String>,
    accounts: HashMap<String, Jwk>,
    account_by_thumbprint: HashMap<String, String>,
    orders: HashMap<String, OrderRec>,
    authzs: HashMap<String, AuthzRec>,
    challenge_index: HashMap<String, String>,
    certs: HashMap<String, String>,
}

struct Service {
    ca: Arc<TestCa>,
    base: String,
    clock: SharedClock,
    book: Mutex<Book>,
    quota: Mutex<OrderQuota>,
    probes: RwLock<BTreeMap<String, Probe>>,
    http: reqwest::Client,
}

fn random_id() -> String {
    let mut b = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut b);
    b64(b)
}

impl Service {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn new_nonce(&self) -> String {
        let n = random_id();
        self.book.lock().nonces.insert(n.clone());
        n
    }

    fn reply(&self, status: StatusCode, location: Option<String>, body: Value) -> Response {
        let mut resp = (status, axum::Json(body)).into_response();
        self.decorate(resp.headers_mut(), location);
        resp
    }

    fn decorate(&self, h: &mut HeaderMap, location: Option<String>) {
        h.insert("replay-nonce", HeaderValue::from_str(&self.new_nonce()).expect("nonce is ascii"));
        h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
        if let Some(loc) = location {
            if let Ok(v) = HeaderValue::from_str(&loc) {
                h.insert(header::LOCATION, v);
            }
        }
    }

    fn problem(&self, err: &AcmeError) -> Response {
        let p = err.to_problem();
        let status = StatusCode::from_u16(p.status.unwrap_or(400)).unwrap_or(StatusCode::BAD_REQUEST);
        let mut resp = (status, serde_json::to_string(&p).unwrap_or_default()).into_response();
        resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static("application/problem+json"));
        self.decorate(resp.headers_mut(), None);
        resp
    }

    /// Checks nonce, URL and signature. Returns the account id (if any), the JWK and the payload.
    fn authenticate(&self, path: &str, body: &[u8], allow_jwk: bool) -> Result<(Option<String>, Jwk, Option<Value>), AcmeError> {
        let jws: Jws = serde_json::from_slice(body).map_err(|e| AcmeError::Malformed(format!("JWS: {e}")))?;
        let h = jws.header()?;
        let nonce = h.nonce.as_deref().ok_or_else(|| AcmeError::BadNonce("missing nonce".into()))?;
        if !self.book.lock().nonces.remove(nonce) {
            return Err(AcmeError::BadNonce(format!("nonce {nonce} is unknown or already used")));
        }
        if h.url != self.url(path) {
            return Err(AcmeError::Unauthorized(format!("JWS url {} does not match {}", h.url, self.url(path))));
        }
        let (account, jwk) = match (&h.kid, &h.jwk) {
            (Some(kid), None) => {
                let id = kid.strip_prefix(&self.url("/acct/")).ok_or_else(|| AcmeError::Unauthorized("foreign kid".into()))?;
                let jwk = self.book.lock().accounts.get(id).cloned().ok_or_else(|| AcmeError::Unauthorized("no such account".into()))?;
                (Some(id.to_owned()), jwk)
            }
            (None, Some(jwk)) if allow_jwk => (None, Jwk::from_json(jwk)?),
            _ => return Err(AcmeError::Malformed("this resource requires a kid".into())),
        };
        jws.verify(&jwk, &h.alg)?;
        Ok((account, jwk, jws.payload_json()?))
    }

    fn order_json(&self, id: &str, o: &OrderRec) -> Value {
        let order = Order {
            status: o.status,
            expires: None,
            identifiers: o.identifiers.iter().map(|v| Identifier::dns(v)).collect(),
            authorizations: o.authz_ids.iter().map(|a| self.url(&format!("/authz/{a}"))).collect(),
            finalize: self.url(&format!("/order/{id}/finalize")),
            certificate: o.cert_id.as_ref().map(|c| self.url(&format!("/cert/{c}"))),
            error: o.error.clone(),
        };
        serde_json::to_value(order).expect("order serializes")
    }

    fn challenge_obj(&self, c: &ChallRec) -> Challenge {
        Challenge {
            kind: c.kind,
            url: self.url(&format!("/chall/{}", c.id)),
            token: c.token.clone(),
            status: c.status,
            error: c.error.clone(),
        }
    }

    fn authz_json(&self, a: &AuthzRec) -> Value {
        let authz = Authorization {
            identifier: Identifier::dns(&a.identifier),
            status: a.status,
            challenges: a.challenges.iter().map(|c| self.challenge_obj(c)).collect(),
        };
        serde_json::to_value(authz).expect("authz serializes")
    }

    fn probe_for(&self, name: &str) -> Option<Probe> {
        let probes = self.probes.read();
        probes
            .iter()
            .filter(|(apex, _)| name == apex.as_str() || name.ends_with(&format!(".{apex}")))
            .max_by_key(|(apex, _)| apex.len())
            .map(|(_, p)| *p)
    }

    async fn resolve_a(&self, dns: SocketAddr, name: &str) -> Result<IpAddr, String> {
        let mut name = name.to_owned();
        for _ in 0..MAX_CNAME_HOPS {
            let r = query_udp(dns, &name, 1, PROBE_TIMEOUT).await.map_err(|e| e.to_string())?;
            if r.rcode != RCODE_NOERROR {
                return Err(format!("DNS rcode {} for {name}", r.rcode));
            }
            if let Some(ip) = r.answers.iter().find_map(|a| match &a.data {
                Some(RData::A(ip)) => Some(*ip),
                _ => None,
            }) {
                return Ok(IpAddr::V4(ip));
            }
            match r.answers.iter().find_map(|a| match &a.data {
                Some(RData::Cname(t)) => Some(t.clone()),
                _ => None,
            }) {
                Some(t) => name = t,
                None => return Err(format!("no A record for {name}")),
            }
        }
        Err(format!("CNAME chain too long at {name}"))
    }

    /// Returns `Ok(())` when the published response matches `key_auth`.
    async fn validate(&self, kind: ChallengeType, identifier: &str, token: &str, key_auth: &str) -> Result<(), String> {
        let probe = self.probe_for(identifier).ok_or_else(|| format!("no delegation for {identifier}"))?;
        match kind {
            ChallengeType::Dns01 => {
                let name = format!("_acme-challenge.{identifier}");
                let r = query_udp(probe.dns, &name, 16, PROBE_TIMEOUT).await.map_err(|e| e.to_string())?;
                let want = dns01_txt_value(key_auth);
                if r.txt_values().contains(&want) {
                    Ok(())
                } else {
                    Err(format!("TXT at {name} is {:?}, expected {want:?}", r.txt_values()))
                }
            }
            ChallengeType::Http01 => {
                let ip = self.resolve_a(probe.dns, identifier).await?;
                let url = format!("http://{}/.well-known/acme-challenge/{token}", SocketAddr::new(ip, probe.http_port));
                let resp = self.http.get(&url).header(header::HOST, identifier).send().await.map_err(|e| e.to_string())?;
                if !resp.status().is_success() {
                    return Err(format!("GET {url} returned {}", resp.status()));
                }
                let body = resp.text().await.map_err(|e| e.to_string())?;
                if body.trim_end() == key_auth {
                    Ok(())
                } else {
                    Err(format!("http-01 body {body:?} does not match the key authorization"))
                }
            }
        }
    }
}

type Shared = Arc<Service>;

async fn directory(State(s): State<Shared>) -> Response {
    let d = Directory {
        new_nonce: s.url("/new-nonce"),
        new_account: s.url("/new-account"),
        new_order: s.url("/new-order"),
        meta: None,
    };
    (StatusCode::OK, axum::Json(d)).into_response()
}

async fn new_nonce(State(s): State<Shared>, method: Method) -> Response {
    let status = if method == Method::HEAD { StatusCode::OK } else { StatusCode::NO_CONTENT };
    let mut resp = status.into_response();
    s.decorate(resp.headers_mut(), None);
    resp
}

async fn root_cert(State(s): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/pem-certificate-chain")], s.ca.root_pem()).into_response()
}

async fn new_account(State(s): State<Shared>, uri: Uri, body: Bytes) -> Response {
    let (_, jwk, _) = match s.authenticate(uri.path(), &body, true) {
        Ok(x) => x,
        Err(e) => return s.problem(&e),
    };
    let thumb = jwk.thumbprint();
    let mut book = s.book.lock();
    let (id, status) = match book.account_by_thumbprint.get(&thumb) {
        Some(id) => (id.clone(), StatusCode::OK),
        None => {
            let id = random_id();
            book.accounts.insert(id.clone(), jwk);
            book.account_by_thumbprint.insert(thumb, id.clone());
            (id, StatusCode::CREATED)
        }
    };
    drop(book);
    s.reply(status, Some(s.url(&format!("/acct/{id}"))), json!({"status": "valid"}))
}

async fn new_order(State(s): State<Shared>, uri: Uri, body: Bytes) -> Response {
    match new_order_inner(&s, uri.path(), &body) {
        Ok((id, v)) => s.reply(StatusCode::CREATED, Some(s.url(&format!("/order/{id}"))), v),
        Err(e) => s.problem(&e),
    }
}

fn new_order_inner(s: &Service, path: &str, body: &[u8]) -> Result<(String, Value), AcmeError> {
    let (account, _, payload) = s.authenticate(path, body, false)?;
    let account = account.expect("kid requests carry an account");
    let ids = payload
        .as_ref()
        .and_then(|p| p.get("identifiers"))
        .and_then(|v| serde_json::from_value::<Vec<Identifier>>(v.clone()).ok())
        .filter(|ids| !ids.is_empty())
        .ok_or_else(|| AcmeError::Malformed("identifiers required".into()))?;
    let mut names = Vec::new();
    for id in &ids {
        let name = id.value.to_ascii_lowercase();
        if id.kind != "dns" || !atlas_core::identity::is_valid_hostname(&name) {
            return Err(AcmeError::RejectedIdentifier(format!("{}:{}", id.kind, id.value)));
        }
        names.push(name);
    }
    let now = s.clock.now();
    {
        let mut quota = s.quota.lock();
        for n in &names {
            quota.try_acquire(n, now)?;
        }
    }
    let mut book = s.book.lock();
    let mut authz_ids = Vec::new();
    for name in &names {
        let authz_id = random_id();
        let challenges: Vec<ChallRec> = [ChallengeType::Http01, ChallengeType::Dns01]
            .into_iter()
            .map(|kind| ChallRec { id: random_id(), kind, token: random_id(), status: Status::Pending, error: None })
            .collect();
        for c in &challenges {
            book.challenge_index.insert(c.id.clone(), authz_id.clone());
        }
        book.authzs.insert(
            authz_id.clone(),
            AuthzRec { account: account.clone(), identifier: name.clone(), status: Status::Pending, challenges },
        );
        authz_ids.push(authz_id);
    }
    let id = random_id();
    let order = OrderRec { account, status: Status::Pending, identifiers: names, authz_ids, cert_id: None, error: None };
    let v = s.order_json(&id, &order);
    book.orders.insert(id.clone(), order);
    Ok((id, v))
}

async fn get_order(State(s): State<Shared>, Path(id): Path<String>, uri: Uri, body: Bytes) -> Response {
    let r = s.authenticate(uri.path(), &body, false).and_then(|(account, _, _)| {
        let book = s.book.lock();
        let o = book.orders.get(&id).ok_or_else(|| AcmeError::NotFound(format!("order {id}")))?;
        if Some(&o.account) != account.as_ref() {
            return Err(AcmeError::Unauthorized("order belongs to another account".into()));
        }
        Ok(s.order_json(&id, o))
    });
    match r {
        Ok(v) => s.reply(StatusCode::OK, None, v),
        Err(e) => s.problem(&e),
    }
}

async fn get_authz(State(s): State<Shared>, Path(id): Path<String>, uri: Uri, body: Bytes) -> Response {
    let r = s.authenticate(uri.path(), &body, false).and_then(|(account, _, _)| {
        let book = s.book.lock();
        let a = book.authzs.get(&id).ok_or_else(|| AcmeError::NotFound(format!("authorization {id}")))?;
        if Some(&a.account) != account.as_ref() {
            return Err(AcmeError::Unauthorized("authorization belongs to another account".into()));
        }
        Ok(s.authz_json(a))
    });
    match r {
        Ok(v) => s.reply(StatusCode::OK, None, v),
        Err(e) => s.problem(&e),
    }
}

async fn respond_challenge(State(s): State<Shared>, Path(id): Path<String>, uri: Uri, body: Bytes) -> Response {
    let (account, jwk, _) = match s.authenticate(uri.path(), &body, false) {
        Ok(x) => x,
        Err(e) => return s.problem(&e),
    };
    // Snapshot what to probe, then release the lock for the network round trip.
    let job = {
        let mut book = s.book.lock();
        match book.challenge_index.get(&id).cloned() {
            None => Err(Err(AcmeError::NotFound(format!("challenge {id}")))),
            Some(authz_id) => {
                let a = book.authzs.get_mut(&authz_id).expect("indexed authz exists");
                let ident = a.identifier.clone();
                let authz_pending = a.status == Status::Pending;
                let owner_ok = Some(&a.account) == account.as_ref();
                let c = a.challenges.iter_mut().find(|c| c.id == id).expect("indexed challenge exists");
                if !owner_ok {
                    Err(Err(AcmeError::Unauthorized("challenge belongs to another account".into())))
                } else if c.status != Status::Pending || !authz_pending {
                    Err(Ok(serde_json::to_value(s.challenge_obj(c)).expect("challenge serializes")))
                } else {
                    c.status = Status::Processing;
                    Ok((authz_id, ident, c.kind, c.token.clone()))
                }
            }
        }
    };
    let job = match job {
        Ok(job) => job,
        Err(Ok(current)) => return s.reply(StatusCode::OK, None, current),
        Err(Err(e)) => return s.problem(&e),
    };
    let (authz_id, ident, kind, token) = job;
    let outcome = match key_authorization(&token, &jwk.thumbprint()) {
        Ok(ka) => s.validate(kind, &ident, &token, &ka).await,
        Err(e) => Err(e.to_string()),
    };

    let mut book = s.book.lock();
    let a = book.authzs.get_mut(&authz_id).expect("authz exists");
    let c = a.challenges.iter_mut().find(|c| c.id == id).expect("challenge exists");
    match &outcome {
        Ok(()) => c.status = Status::Valid,
        Err(detail) => {
            log::info!("{kind} for {ident} failed: {detail}");
            c.status = Status::Invalid;
            c.error = Some(AcmeError::ChallengeFailed(detail.clone()).to_problem());
        }
    }
    let chall = serde_json::to_value(s.challenge_obj(c)).expect("challenge serializes");
    let err = c.error.clone();
    a.status = if outcome.is_ok() { Status::Valid } else { Status::Invalid };
    let bk = &mut *book;
    for o in bk.orders.values_mut().filter(|o| o.authz_ids.contains(&authz_id) && o.status == Status::Pending) {
        if err.is_some() {
            o.status = Status::Invalid;
            o.error = err.clone();
        } else if o.authz_ids.iter().all(|aid| bk.authzs.get(aid).is_some_and(|a| a.status == Status::Valid)) {
            o.status = Status::Ready;
        }
    }
    drop(book);
    s.reply(StatusCode::OK, None, chall)
}

async fn finalize(State(s): State<Shared>, Path(id): Path<String>, uri: Uri, body: Bytes) -> Response {
    match finalize_inner(&s, &id, uri.path(), &body) {
        Ok(v) => s.reply(StatusCode::OK, Some(s.url(&format!("/order/{id}"))), v),
        Err(e) => s.problem(&e),
    }
}

fn finalize_inner(s: &Service, id: &str, path: &str, body: &[u8]) -> Result<Value, AcmeError> {
    let (account, _, payload) = s.authenticate(path, body, false)?;
    let csr_b64 = payload
        .as_ref()
        .and_then(|p| p.get("csr"))
        .and_then(Value::as_str)
        .ok_or_else(|| AcmeError::Malformed("csr required".into()))?
        .to_owned();
    let csr = b64_decode(&csr_b64)?;
    let identifiers = {
        let mut book = s.book.lock();
        let o = book.orders.get_mut(id).ok_or_else(|| AcmeError::NotFound(format!("order {id}")))?;
        if Some(&o.account) != account.as_ref() {
            return Err(AcmeError::Unauthorized("order belongs to another account".into()));
        }
        if o.status != Status::Ready {
            return Err(AcmeError::OrderNotReady(format!("order is {:?}", o.status)));
        }
        o.status = Status::Processing;
        o.identifiers.clone()
    };
    let issued = s.ca.issue(&csr, &identifiers, s.clock.now());
    let mut book = s.book.lock();
    let cert_id = issued.as_ref().ok().map(|_| random_id());
    if let (Some(cid), Ok(c)) = (&cert_id, &issued) {
        book.certs.insert(cid.clone(), c.chain_pem.clone());
    }
    let o = book.orders.get_mut(id).expect("order exists");
    match issued {
        Ok(_) => {
            o.status = Status::Valid;
            o.cert_id = cert_id;
        }
        // A bad CSR leaves the order usable for another finalize attempt.
        Err(e) => {
            o.status = Status::Ready;
            return Err(e);
        }
    }
    Ok(s.order_json(id, o))
}

async fn get_cert(State(s): State<Shared>, Path(id): Path<String>, uri: Uri, body: Bytes) -> Response {
    if let Err(e) = s.authenticate(uri.path(), &body, false) {
        return s.problem(&e);
    }
    let pem = s.book.lock().certs.get(&id).cloned();
    let Some(pem) = pem else {
        return s.problem(&AcmeError::NotFound(format!("certificate {id}")));
    };
    let mut resp = ([(header::CONTENT_TYPE, "application/pem-certificate-chain")], pem).into_response();
    s.decorate(resp.headers_mut(), None);
    resp
}

fn router(s: Shared) -> Router {
    Router::new()
        .route("/directory", get(directory))
        .route("/new-nonce", any(new_nonce))
        .route("/new-account", post(new_account))
        .route("/new-order", post(new_order))
        .route("/order/{id}", post(get_order))
        .route("/order/{id}/finalize", post(finalize))
        .route("/authz/{id}", post(get_authz))
        .route("/chall/{id}", post(respond_challenge))
        .route("/cert/{id}", post(get_cert))
        .route("/root", get(root_cert))
        .with_state(s)
}

/// A running test CA. Stops when dropped.
pub struct AcmeServer {
    service: Shared,
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl std::fmt::Debug for AcmeServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AcmeServer").field("directory", &self.directory_url()).finish_non_exhaustive()
    }
}

impl AcmeServer {
    pub async fn start(cfg: &CaConfig, addr: &str, clock: SharedClock) -> Result<Self, AcmeError> {
        let ca = Arc::new(TestCa::new(cfg)?);
        Self::start_with(ca, cfg.weekly_quota, addr, clock).await
    }

    pub async fn start_with(ca: Arc<TestCa>, weekly_quota: u32, addr: &str, clock: SharedClock) -> Result<Self, AcmeError> {
        let listener = TcpListener::bind(addr).await.map_err(|e| AcmeError::BindFailure(format!("{addr}: {e}")))?;
        let local_addr = listener.local_addr().map_err(|e| AcmeError::BindFailure(e.to_string()))?;
        let host = match local_addr.ip() {
            ip if ip.is_unspecified() => "127.0.0.1".to_owned(),
            IpAddr::V6(ip) => format!("[{ip}]"),
            ip => ip.to_string(),
        };
        let (chain, key) = ca.service_identity();
        let tls = rustls::ServerConfig::builder_with_provider(Arc::new(rustls::crypto::ring::default_provider()))
            .with_safe_default_protocol_versions()
            .and_then(|b| b.with_no_client_auth().with_single_cert(chain, key))
            .map_err(|e| AcmeError::Internal(e.to_string()))?;
        let acceptor = TlsAcceptor::from(Arc::new(tls));
        let http = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(PROBE_TIMEOUT)
            .no_proxy()
            .build()
            .map_err(|e| AcmeError::Internal(e.to_string()))?;
        let service = Arc::new(Service {
            ca,
            base: format!("https://{host}:{}", local_addr.port()),
            clock,
            book: Mutex::new(Book::default()),
            quota: Mutex::new(OrderQuota::new(weekly_quota)),
            probes: RwLock::new(BTreeMap::new()),
            http,
        });
        let app = router(service.clone());
        // Connection tasks live in the accept task's JoinSet, so aborting the
        // server also drops every kept-alive connection.
        let task = tokio::spawn(async move {
            let mut conns = JoinSet::new();
            loop {
                while conns.try_join_next().is_some() {}
                let (tcp, peer) = match listener.accept().await {
                    Ok(x) => x,
                    Err(e) => {
                        log::warn!("acme accept: {e}");
                        continue;
                    }
                };
                let acceptor = acceptor.clone();
                let svc = TowerToHyperService::new(app.clone());
                conns.spawn(async move {
                    let tls = match acceptor.accept(tcp).await {
                        Ok(t) => t,
                        Err(e) => {
                            log::debug!("acme TLS from {peer}: {e}");
                            return;
                        }
                    };
                    if let Err(e) = hyper::server::conn::http1::Builder::new().serve_connection(TokioIo::new(tls), svc).await {
                        log::debug!("acme connection from {peer}: {e}");
                    }
                });
            }
        });
        log::info!("test CA listening on {}", service.base);
        Ok(Self { service, local_addr, task })
    }

    pub fn directory_url(&self) -> String {
        self.service.url("/directory")
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn ca(&self) -> &Arc<TestCa> {
        &self.service.ca
    }

    /// PEM trust anchor for this server's HTTPS certificate.
    pub fn service_root_pem(&self) -> String {
        self.service.ca.service_root_pem()
    }

    /// Tells the CA where names under `apex` are validated.
    pub fn delegate(&self, apex: &str, probe: Probe) {
        self.service.probes.write().insert(crate::dns::zone::canonical_name(apex), probe);
    }
}

impl Drop for AcmeServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}
