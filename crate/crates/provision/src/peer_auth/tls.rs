//! Mutual TLS 1.3 over loopback where both ends apply [`validate_peer`]
//! instead of WebPKI rules.
//!
//! Frames are a u32 big-endian length followed by that many bytes; the server
//! echoes each frame back until the client closes.

use std::fmt;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rustls::client::danger::{HandshakeSignatureValid, ServerCertVerified, ServerCertVerifier};
use rustls::crypto::{verify_tls12_signature, verify_tls13_signature, CryptoProvider};
use rustls::pki_types::{CertificateDer, ServerName, UnixTime};
use rustls::server::danger::{ClientCertVerified, ClientCertVerifier};
use rustls::{CertificateError, DigitallySignedStruct, DistinguishedName, SignatureScheme};
use serde::Serialize;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::{JoinHandle, JoinSet};
use tokio_rustls::{TlsAcceptor, TlsConnector};

use super::{validate_peer, PeerAuthError, PeerVerdict, TrustContext};
use crate::lifecycle::ProvisionedDevice;

const MAX_FRAME: usize = 1 << 20;
const IO_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Client,
    Server,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Client => "client",
            Side::Server => "server",
        })
    }
}

/// Vendor each side insists the other belongs to, if any.
#[derive(Debug, Clone, Default)]
pub struct EchoPolicy {
    /// Required of the client's URN by the server.
    pub server_expects: Option<String>,
    /// Required of the server's URN by the client.
    pub client_expects: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EchoResult {
    pub payload_echoed: Vec<u8>,
    /// The client's verdict on the server.
    pub client_verdict: PeerVerdict,
    /// The server's verdict on the client.
    pub server_verdict: PeerVerdict,
    /// Client-observed time from TCP connect to handshake completion.
    pub handshake_ms: f64,
}

fn provider() -> Arc<CryptoProvider> {
    Arc::new(rustls::crypto::ring::default_provider())
}

fn tls_err(e: impl fmt::Display) -> PeerAuthError {
    PeerAuthError::Tls(e.to_string())
}

fn io_err(e: impl fmt::Display) -> PeerAuthError {
    PeerAuthError::Io(e.to_string())
}

/// Runs the validation policy during the handshake and keeps its verdict.
/// The rustls-supplied time is ignored in favour of the context's clock.
#[derive(Debug)]
struct PolicyVerifier {
    ctx: TrustContext,
    expects: Option<String>,
    verdict: Mutex<Option<PeerVerdict>>,
    provider: Arc<CryptoProvider>,
}

impl PolicyVerifier {
    fn new(ctx: TrustContext, expects: Option<String>) -> Arc<Self> {
        Arc::new(Self { ctx, expects, verdict: Mutex::new(None), provider: provider() })
    }

    fn check(&self, end_entity: &CertificateDer<'_>, intermediates: &[CertificateDer<'_>]) -> Result<(), rustls::Error> {
        let mut chain = vec![end_entity.clone().into_owned()];
        chain.extend(intermediates.iter().map(|c| c.clone().into_owned()));
        let verdict = validate_peer(&chain, &self.ctx, self.expects.as_deref());
        let accepted = verdict.accepted;
        *self.verdict.lock() = Some(verdict);
        if accepted {
            Ok(())
        } else {
            Err(rustls::Error::InvalidCertificate(CertificateError::ApplicationVerificationFailure))
        }
    }

    fn verdict(&self) -> Option<PeerVerdict> {
        self.verdict.lock().clone()
    }

    fn tls12(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls12_signature(message, cert, dss, &self.provider.signature_verification_algorithms)
    }

    fn tls13(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        verify_tls13_signature(message, cert, dss, &self.provider.signature_verification_algorithms)
    }
}

impl ServerCertVerifier for PolicyVerifier {
    fn verify_server_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        intermediates: &[CertificateDer<'_>],
        _server_name: &ServerName<'_>,
        _ocsp_response: &[u8],
        _now: UnixTime,
    ) -> Result<ServerCertVerified, rustls::Error> {
        self.check(end_entity, intermediates).map(|()| ServerCertVerified::assertion())
    }

    fn verify_tls12_signature(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.tls12(message, cert, dss)
    }

    fn verify_tls13_signature(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.tls13(message, cert, dss)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.provider.signature_verification_algorithms.supported_schemes()
    }
}

impl ClientCertVerifier for PolicyVerifier {
    fn root_hint_subjects(&self) -> &[DistinguishedName] {
        &[]
    }

    fn verify_client_cert(
        &self,
        end_entity: &CertificateDer<'_>,
        intermediates: &[CertificateDer<'_>],
        _now: UnixTime,
    ) -> Result<ClientCertVerified, rustls::Error> {
        self.check(end_entity, intermediates).map(|()| ClientCertVerified::assertion())
    }

    fn verify_tls12_signature(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.tls12(message, cert, dss)
    }

    fn verify_tls13_signature(&self, message: &[u8], cert: &CertificateDer<'_>, dss: &DigitallySignedStruct) -> Result<HandshakeSignatureValid, rustls::Error> {
        self.tls13(message, cert, dss)
    }

    fn supported_verify_schemes(&self) -> Vec<SignatureScheme> {
        self.provider.signature_verification_algorithms.supported_schemes()
    }
}

fn server_config(bundle: &ProvisionedDevice, verifier: Arc<PolicyVerifier>) -> Result<rustls::ServerConfig, PeerAuthError> {
    let chain = bundle.chain_ders().map_err(tls_err)?;
    rustls::ServerConfig::builder_with_provider(provider())
        .with_protocol_versions(&[&rustls::version::TLS13])
        .map_err(tls_err)?
        .with_client_cert_verifier(verifier)
        .with_single_cert(chain, bundle.key.rustls_key())
        .map_err(tls_err)
}

fn client_config(bundle: &ProvisionedDevice, verifier: Arc<PolicyVerifier>) -> Result<rustls::ClientConfig, PeerAuthError> {
    let chain = bundle.chain_ders().map_err(tls_err)?;
    rustls::ClientConfig::builder_with_provider(provider())
        .with_protocol_versions(&[&rustls::version::TLS13])
        .map_err(tls_err)?
        .dangerous()
        .with_custom_certificate_verifier(verifier)
        .with_client_auth_cert(chain, bundle.key.rustls_key())
        .map_err(tls_err)
}

async fn read_frame<S: AsyncRead + Unpin>(s: &mut S) -> std::io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match s.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut buf = vec![0; len];
    s.read_exact(&mut buf).await?;
    Ok(Some(buf))
}

async fn write_frame<S: AsyncWrite + Unpin>(s: &mut S, payload: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(payload.len()).map_err(|_| std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame too large"))?;
    s.write_all(&len.to_be_bytes()).await?;
    s.write_all(payload).await?;
    s.flush().await
}

/// How one server-side connection went.
#[derive(Debug, Clone)]
pub struct ServerOutcome {
    pub peer: SocketAddr,
    /// Absent if the client never presented a certificate.
    pub verdict: Option<PeerVerdict>,
    pub error: Option<String>,
}

/// Echo server presenting one device's credentials. Each connection gets its
/// own verifier, so concurrent clients are judged independently.
pub struct EchoServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
    outcomes: tokio::sync::Mutex<mpsc::UnboundedReceiver<ServerOutcome>>,
}

impl fmt::Debug for EchoServer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EchoServer").field("local_addr", &self.local_addr).finish_non_exhaustive()
    }
}

impl EchoServer {
    pub async fn start(bundle: ProvisionedDevice, ctx: TrustContext, client_vendor: Option<String>, addr: &str) -> Result<Self, PeerAuthError> {
        // Fail early on unusable credentials rather than per connection.
        server_config(&bundle, PolicyVerifier::new(ctx.clone(), None))?;
        let listener = TcpListener::bind(addr).await.map_err(|e| io_err(format!("{addr}: {e}")))?;
        let local_addr = listener.local_addr().map_err(io_err)?;
        let (tx, rx) = mpsc::unbounded_channel();
        let task = tokio::spawn(async move {
            let mut conns = JoinSet::new();
            loop {
                while conns.try_join_next().is_some() {}
                let (tcp, peer) = match listener.accept().await {
                    Ok(x) => x,
                    Err(e) => {
                        log::warn!("echo accept: {e}");
                        continue;
                    }
                };
                let verifier = PolicyVerifier::new(ctx.clone(), client_vendor.clone());
                let config = match server_config(&bundle, verifier.clone()) {
                    Ok(c) => c,
                    Err(e) => {
                        log::error!("echo server config: {e}");
                        continue;
                    }
                };
                let tx = tx.clone();
                conns.spawn(async move {
                    let outcome = match TlsAcceptor::from(Arc::new(config)).accept(tcp).await {
                        Err(e) => ServerOutcome { peer, verdict: verifier.verdict(), error: Some(e.to_string()) },
                        Ok(mut tls) => {
                            let _ = tx.send(ServerOutcome { peer, verdict: verifier.verdict(), error: None });
                            while let Ok(Some(frame)) = read_frame(&mut tls).await {
                                if write_frame(&mut tls, &frame).await.is_err() {
                                    break;
                                }
                            }
                            let _ = tls.shutdown().await;
                            return;
                        }
                    };
                    let _ = tx.send(outcome);
                });
            }
        });
        Ok(Self { local_addr, task, outcomes: tokio::sync::Mutex::new(rx) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Outcome of the next connection to finish its handshake (or fail it).
    pub async fn next_outcome(&self, wait: Duration) -> Option<ServerOutcome> {
        tokio::time::timeout(wait, self.outcomes.lock().await.recv()).await.ok().flatten()
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// [`mtls_echo_with`] with no vendor expectations.
pub async fn mtls_echo(
    server_bundle: &ProvisionedDevice,
    client_bundle: &ProvisionedDevice,
    ctx: &TrustContext,
    payload: &[u8],
) -> Result<EchoResult, PeerAuthError> {
    mtls_echo_with(server_bundle, client_bundle, ctx, &EchoPolicy::default(), payload).await
}

/// Starts an echo server for `server_bundle`, connects as `client_bundle`,
/// and round-trips `payload`. A refusal by either side comes back as
/// [`PeerAuthError::HandshakeRejected`] carrying that side's verdict.
pub async fn mtls_echo_with(
    server_bundle: &ProvisionedDevice,
    client_bundle: &ProvisionedDevice,
    ctx: &TrustContext,
    policy: &EchoPolicy,
    payload: &[u8],
) -> Result<EchoResult, PeerAuthError> {
    let server = EchoServer::start(server_bundle.clone(), ctx.clone(), policy.server_expects.clone(), "127.0.0.1:0").await?;
    let verifier = PolicyVerifier::new(ctx.clone(), policy.client_expects.clone());
    let connector = TlsConnector::from(Arc::new(client_config(client_bundle, verifier.clone())?));
    let name = ServerName::try_from(server_bundle.urn.to_string()).map_err(tls_err)?;

    let started = Instant::now();
    let tcp = TcpStream::connect(server.local_addr()).await.map_err(io_err)?;
    let handshake = tokio::time::timeout(IO_TIMEOUT, connector.connect(name, tcp)).await.map_err(|_| io_err("handshake timed out"))?;
    let handshake_ms = started.elapsed().as_secs_f64() * 1e3;

    let mut tls = match handshake {
        Ok(tls) => tls,
        Err(e) => {
            if let Some(v) = verifier.verdict().filter(|v| !v.accepted) {
                return Err(PeerAuthError::HandshakeRejected { side: Side::Client, verdict: v });
            }
            return Err(rejected_by_server(&server).await.unwrap_or_else(|| tls_err(e)));
        }
    };
    let client_verdict = verifier.verdict().ok_or_else(|| tls_err("server presented no certificate"))?;

    let exchange = async {
        write_frame(&mut tls, payload).await?;
        let echoed = read_frame(&mut tls).await?;
        tls.shutdown().await?;
        Ok::<_, std::io::Error>(echoed)
    };
    let echoed = match tokio::time::timeout(IO_TIMEOUT, exchange).await {
        Ok(Ok(Some(echoed))) => echoed,
        Ok(Ok(None)) | Ok(Err(_)) | Err(_) => {
            return Err(rejected_by_server(&server).await.unwrap_or_else(|| io_err("connection closed before the echo")));
        }
    };
    if echoed != payload {
        return Err(PeerAuthError::EchoMismatch { sent: payload.len(), got: echoed.len() });
    }
    let server_verdict = server
        .next_outcome(IO_TIMEOUT)
        .await
        .and_then(|o| o.verdict)
        .ok_or_else(|| io_err("server reported no verdict"))?;
    Ok(EchoResult { payload_echoed: echoed, client_verdict, server_verdict, handshake_ms })
}

async fn rejected_by_server(server: &EchoServer) -> Option<PeerAuthError> {
    let outcome = server.next_outcome(IO_TIMEOUT).await?;
    let verdict = outcome.verdict.filter(|v| !v.accepted)?;
    Some(PeerAuthError::HandshakeRejected { side: Side::Server, verdict })
}
