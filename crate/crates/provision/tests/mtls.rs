use std::sync::Arc;

use atlas_core::{DeviceSecret, VendorNamespace};
use atlas_provision::acme::ChallengeType;
use atlas_provision::certs::KeyAlgorithm;
use atlas_provision::clock::{ManualClock, SharedClock};
use atlas_provision::inventory::RevocationReason;
use atlas_provision::lifecycle::{LocalPki, LocalPkiConfig, ProvisionedDevice, Vendor, VendorConfig};
use atlas_provision::peer_auth::{
    mtls_echo, mtls_echo_with, EchoPolicy, EchoServer, PeerAuthError, RejectReason, Side, TrustContext,
};
use time::{macros::datetime, Duration, OffsetDateTime};

const START: OffsetDateTime = datetime!(2031-03-01 00:00 UTC);

async fn enroll(vendor: &Vendor, class: &str, i: u32) -> ProvisionedDevice {
    let ns = VendorNamespace::new(vendor.apex(), class).unwrap();
    let secret = DeviceSecret::external(format!("{}-{class}-{i:04}", vendor.apex()).into_bytes()).unwrap();
    vendor.enroll_device(&ns, &secret, ChallengeType::Dns01).await.unwrap()
}

struct Scene {
    _pki: LocalPki,
    _foreign_pki: LocalPki,
    a: Arc<Vendor>,
    b: Arc<Vendor>,
    root_pem: String,
    dev_a: ProvisionedDevice,
    dev_b: ProvisionedDevice,
    foreign: ProvisionedDevice,
}

async fn scene() -> Scene {
    let clock: SharedClock = ManualClock::new(START);
    let mut pki = LocalPki::start(LocalPkiConfig { clock: clock.clone(), ..LocalPkiConfig::default() }).await.unwrap();
    let a = pki.add_vendor(VendorConfig::new("vendor-a.test")).await.unwrap();
    let b = pki.add_vendor(VendorConfig { key_algorithm: KeyAlgorithm::P256, ..VendorConfig::new("vendor-b.test") }).await.unwrap();
    let mut foreign_pki = LocalPki::start(LocalPkiConfig { seed: 99, clock, ..LocalPkiConfig::default() }).await.unwrap();
    let rogue = foreign_pki.add_vendor(VendorConfig { key_algorithm: KeyAlgorithm::P256, ..VendorConfig::new("vendor-a.test") }).await.unwrap();
    Scene {
        root_pem: pki.root_pem(),
        dev_a: enroll(&a, "camera", 1).await,
        dev_b: enroll(&b, "lock", 1).await,
        foreign: enroll(&rogue, "camera", 1).await,
        a,
        b,
        _pki: pki,
        _foreign_pki: foreign_pki,
    }
}

impl Scene {
    fn ctx(&self, at: OffsetDateTime) -> TrustContext {
        TrustContext::from_pem(&self.root_pem, ManualClock::new(at))
            .unwrap()
            .with_filter(self.a.publish_filter().unwrap())
            .with_filter(self.b.publish_filter().unwrap())
    }
}

fn rejected(result: Result<atlas_provision::peer_auth::EchoResult, PeerAuthError>) -> (Side, RejectReason) {
    match result {
        Err(PeerAuthError::HandshakeRejected { side, verdict }) => {
            assert!(!verdict.accepted);
            (side, verdict.reject_reason.unwrap())
        }
        other => panic!("expected a rejection, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn cross_vendor_echo_both_directions() {
    let s = scene().await;
    let ctx = s.ctx(START + Duration::hours(1));
    let payload: Vec<u8> = (0..=255u8).collect();
    for (server, client) in [(&s.dev_a, &s.dev_b), (&s.dev_b, &s.dev_a)] {
        let r = mtls_echo(server, client, &ctx, &payload).await.unwrap();
        assert_eq!(r.payload_echoed, payload);
        assert!(r.client_verdict.accepted && r.server_verdict.accepted);
        assert_eq!(r.client_verdict.urn.as_deref(), Some(server.urn.to_string().as_str()));
        assert_eq!(r.server_verdict.urn.as_deref(), Some(client.urn.to_string().as_str()));
        assert!(r.client_verdict.warnings.is_empty());
        assert!(r.handshake_ms > 0.0);
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn rejection_matrix() {
    let s = scene().await;
    let revoked = enroll(&s.a, "camera", 2).await;
    s.a.revoke_device(&revoked.uuid(), RevocationReason::KeyCompromise).unwrap();
    let now = START + Duration::hours(1);
    let ctx = s.ctx(now);
    let late = s.ctx(now + Duration::days(91));
    let payload = [7u8; 256];

    // Revoked client is refused by the server; revoked server by the client.
    assert_eq!(rejected(mtls_echo(&s.dev_b, &revoked, &ctx, &payload).await), (Side::Server, RejectReason::Revoked));
    assert_eq!(rejected(mtls_echo(&revoked, &s.dev_b, &ctx, &payload).await), (Side::Client, RejectReason::Revoked));

    // The client checks first, so with both sides expired the client refuses.
    assert_eq!(rejected(mtls_echo(&s.dev_a, &s.dev_b, &late, &payload).await), (Side::Client, RejectReason::Expired));

    assert_eq!(rejected(mtls_echo(&s.dev_b, &s.foreign, &ctx, &payload).await), (Side::Server, RejectReason::Chain));
    assert_eq!(rejected(mtls_echo(&s.foreign, &s.dev_b, &ctx, &payload).await), (Side::Client, RejectReason::Chain));

    let want_a = EchoPolicy { server_expects: Some("vendor-a.test".into()), client_expects: Some("vendor-a.test".into()) };
    assert_eq!(
        rejected(mtls_echo_with(&s.dev_a, &s.dev_b, &ctx, &want_a, &payload).await),
        (Side::Server, RejectReason::SanMismatch)
    );
    assert_eq!(
        rejected(mtls_echo_with(&s.dev_b, &s.dev_a, &ctx, &want_a, &payload).await),
        (Side::Client, RejectReason::SanMismatch)
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn outcomes_are_symmetric() {
    let s = scene().await;
    let revoked = enroll(&s.b, "lock", 9).await;
    s.b.revoke_device(&revoked.uuid(), RevocationReason::Superseded).unwrap();
    let ctx = s.ctx(START + Duration::days(1));
    for (x, y) in [(&s.dev_a, &s.dev_b), (&s.dev_a, &revoked), (&s.dev_b, &s.foreign)] {
        let xy = mtls_echo(x, y, &ctx, b"ping").await;
        let yx = mtls_echo(y, x, &ctx, b"ping").await;
        assert_eq!(xy.is_ok(), yx.is_ok());
        if let (Err(PeerAuthError::HandshakeRejected { verdict: v1, .. }), Err(PeerAuthError::HandshakeRejected { verdict: v2, .. })) = (xy, yx) {
            assert_eq!(v1.reject_reason, v2.reject_reason);
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn server_judges_concurrent_clients_independently() {
    let s = scene().await;
    let ctx = s.ctx(START + Duration::hours(2));
    let server = EchoServer::start(s.dev_a.clone(), ctx.clone(), None, "127.0.0.1:0").await.unwrap();
    let addr = server.local_addr();
    let mut joins = Vec::new();
    for dev in [s.dev_b.clone(), s.foreign.clone(), s.dev_b.clone()] {
        let server_urn = s.dev_a.urn.to_string();
        joins.push(tokio::spawn(async move { client_round_trip(addr, &server_urn, &dev).await }));
    }
    let mut ok = 0;
    for j in joins {
        if j.await.unwrap() {
            ok += 1;
        }
    }
    assert_eq!(ok, 2);
    let mut verdicts = Vec::new();
    for _ in 0..3 {
        verdicts.push(server.next_outcome(std::time::Duration::from_secs(5)).await.unwrap().verdict.unwrap());
    }
    assert_eq!(verdicts.iter().filter(|v| v.accepted).count(), 2);
    assert_eq!(verdicts.iter().filter(|v| v.reject_reason == Some(RejectReason::Chain)).count(), 1);
}

/// Client that accepts any server and presents `dev`; true if one frame
/// comes back intact.
async fn client_round_trip(addr: std::net::SocketAddr, server_urn: &str, dev: &ProvisionedDevice) -> bool {
    use rustls::pki_types::ServerName;
    use tokio::io::{AsyncReadExt, AsyncWriteExt};

    // A permissive verifier: this test is about the server's judgement.
    #[derive(Debug)]
    struct AnyServer(Arc<rustls::crypto::CryptoProvider>);
    impl rustls::client::danger::ServerCertVerifier for AnyServer {
        fn verify_server_cert(
            &self,
            _: &rustls::pki_types::CertificateDer<'_>,
            _: &[rustls::pki_types::CertificateDer<'_>],
            _: &ServerName<'_>,
            _: &[u8],
            _: rustls::pki_types::UnixTime,
        ) -> Result<rustls::client::danger::ServerCertVerified, rustls::Error> {
            Ok(rustls::client::danger::ServerCertVerified::assertion())
        }
        fn verify_tls12_signature(
            &self,
            m: &[u8],
            c: &rustls::pki_types::CertificateDer<'_>,
            d: &rustls::DigitallySignedStruct,
        ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
            rustls::crypto::verify_tls12_signature(m, c, d, &self.0.signature_verification_algorithms)
        }
        fn verify_tls13_signature(
            &self,
            m: &[u8],
            c: &rustls::pki_types::CertificateDer<'_>,
            d: &rustls::DigitallySignedStruct,
        ) -> Result<rustls::client::danger::HandshakeSignatureValid, rustls::Error> {
            rustls::crypto::verify_tls13_signature(m, c, d, &self.0.signature_verification_algorithms)
        }
        fn supported_verify_schemes(&self) -> Vec<rustls::SignatureScheme> {
            self.0.signature_verification_algorithms.supported_schemes()
        }
    }
    let provider = Arc::new(rustls::crypto::ring::default_provider());
    let config = rustls::ClientConfig::builder_with_provider(provider.clone())
        .with_protocol_versions(&[&rustls::version::TLS13])
        .unwrap()
        .dangerous()
        .with_custom_certificate_verifier(Arc::new(AnyServer(provider)))
        .with_client_auth_cert(dev.chain_ders().unwrap(), dev.key.rustls_key())
        .unwrap();
    let tcp = tokio::net::TcpStream::connect(addr).await.unwrap();
    let Ok(mut tls) = tokio_rustls::TlsConnector::from(Arc::new(config))
        .connect(ServerName::try_from(server_urn.to_owned()).unwrap(), tcp)
        .await
    else {
        return false;
    };
    if tls.write_all(&[0, 0, 0, 2, b'h', b'i']).await.is_err() {
        return false;
    }
    let mut buf = [0u8; 6];
    tls.read_exact(&mut buf).await.is_ok() && buf == [0, 0, 0, 2, b'h', b'i']
}
