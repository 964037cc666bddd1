use std::net::Ipv4Addr;
use std::sync::Arc;

use atlas_provision::acme::{
    dns01_txt_value, key_authorization, AccountKey, AcmeClient, AcmeError, AcmeServer, CaConfig, ChallengeFulfiller,
    ChallengeType, HttpTokenShelf, Probe, ShelfServer, Status, VendorFulfiller,
};
use atlas_provision::certs::{self, build_csr, DeviceKey, KeyAlgorithm};
use atlas_provision::clock;
use atlas_provision::dns::{DnsAuthority, DnsServer};
use serde_json::json;
use x509_parser::prelude::{FromDer, X509Certificate};

// P-256 account key and its values computed independently (Python `cryptography`,
// `json.dumps(sort_keys=True)` thumbprint, hashlib SHA-256).
const ORACLE_PKCS8: &str = "308187020100301306072a8648ce3d020106082a8648ce3d030107046d306b0201010420c9afa9d845ba75166b5c215767b1d6934e50c3db36e89b127b8a622b120f6721a1440342000460fed4ba255a9d31c961eb74c6356d68c049b8923b61fa6ce669622e60f29fb67903fe1008b8bc99a41ae9e95628bc64f2f1b20c2d7e9f5177a3c294d4462299";
const ORACLE_THUMBPRINT: &str = "DOvxvJiAdIqVWIkFt5hDtCunXLF0BV4-JGv4f-ALSm0";
const ORACLE_TOKEN: &str = "evaGxfADs6pSRb2LAv9IZf17Dt3juxGJ-PCt92wr-oA";
const ORACLE_TXT: &str = "jBe9m-TkL_mXXuTnxF15Pxu9Y9Z04DWzxA58xfX1lrU";

#[test]
fn dns01_value_matches_independent_oracle() {
    let key = AccountKey::from_pkcs8(&hex::decode(ORACLE_PKCS8).unwrap()).unwrap();
    assert_eq!(key.thumbprint(), ORACLE_THUMBPRINT);
    let ka = key_authorization(ORACLE_TOKEN, &key.thumbprint()).unwrap();
    assert_eq!(ka, format!("{ORACLE_TOKEN}.{ORACLE_THUMBPRINT}"));
    assert_eq!(dns01_txt_value(&ka), ORACLE_TXT);
}

struct Rig {
    dns: DnsAuthority,
    shelf: HttpTokenShelf,
    ca: AcmeServer,
    _dns_server: DnsServer,
    _shelf_server: ShelfServer,
}

async fn rig(quota: u32) -> Rig {
    let dns = DnsAuthority::new("vendor.com").unwrap();
    dns.add_a("cloud.vendor.com", Ipv4Addr::LOCALHOST).unwrap();
    let dns_server = dns.serve_udp("127.0.0.1:0").await.unwrap();
    let shelf = HttpTokenShelf::new();
    let shelf_server = shelf.serve("127.0.0.1:0").await.unwrap();
    let cfg = CaConfig { weekly_quota: quota, ..CaConfig::default() };
    let ca = AcmeServer::start(&cfg, "127.0.0.1:0", clock::system()).await.unwrap();
    ca.delegate("vendor.com", Probe { dns: dns_server.local_addr(), http_port: shelf_server.local_addr().port() });
    Rig { dns, shelf, ca, _dns_server: dns_server, _shelf_server: shelf_server }
}

impl Rig {
    async fn client(&self) -> AcmeClient {
        AcmeClient::connect(&self.ca.directory_url(), Some(&self.ca.service_root_pem()), AccountKey::generate_es256().unwrap())
            .await
            .unwrap()
    }

    fn fulfiller(&self) -> VendorFulfiller {
        VendorFulfiller { dns: self.dns.clone(), http: self.shelf.clone() }
    }
}

fn assert_chain(chain_pem: &str, root_pem: &str, fqdn: &str) {
    let ders = certs::pem_to_ders(chain_pem).unwrap();
    let root = certs::pem_to_ders(root_pem).unwrap().remove(0);
    let (_, root) = X509Certificate::from_der(&root).unwrap();
    let (_, inter) = X509Certificate::from_der(&ders[1]).unwrap();
    let (_, leaf) = X509Certificate::from_der(&ders[0]).unwrap();
    inter.verify_signature(Some(root.public_key())).unwrap();
    leaf.verify_signature(Some(inter.public_key())).unwrap();
    let info = certs::inspect_cert(&ders[0]).unwrap();
    assert_eq!(info.dns_names, vec![fqdn.to_owned()]);
    assert!(info.not_after - info.not_before <= time::Duration::days(90));
}

#[tokio::test(flavor = "multi_thread")]
async fn issues_via_both_challenge_types() {
    let rig = rig(30_000).await;
    let client = rig.client().await;
    for (i, kind) in [ChallengeType::Dns01, ChallengeType::Http01].into_iter().enumerate() {
        let fqdn = format!("dev{i}.camera.vendor.com");
        // http-01 is probed at whatever the name resolves to.
        rig.dns.add_record(&fqdn, atlas_provision::dns::RData::Cname("cloud.vendor.com".into()), 60).unwrap();
        let key = DeviceKey::generate(KeyAlgorithm::P256).unwrap();
        let csr = build_csr(&key, &fqdn).unwrap();
        let chain = client.obtain_certificate(&fqdn, &csr, kind, &rig.fulfiller()).await.unwrap();
        assert_chain(&chain, &rig.ca.ca().root_pem(), &fqdn);
    }
    // Responses are withdrawn afterwards.
    assert!(rig.shelf.is_empty());
    assert!(rig.dns.snapshot().records().all(|r| !r.name.starts_with("_acme-challenge")));
    // The root served over HTTPS is the issuing root.
    let http = reqwest::Client::builder()
        .add_root_certificate(reqwest::Certificate::from_pem(rig.ca.service_root_pem().as_bytes()).unwrap())
        .build()
        .unwrap();
    let root_url = rig.ca.directory_url().replace("/directory", "/root");
    assert_eq!(http.get(root_url).send().await.unwrap().text().await.unwrap(), rig.ca.ca().root_pem());
}

struct WrongTxt(DnsAuthority);

impl ChallengeFulfiller for WrongTxt {
    fn install(&self, _: ChallengeType, fqdn: &str, _: &str, _: &str) -> Result<(), AcmeError> {
        self.0.set_acme_txt(fqdn, "not-the-digest").map(drop).map_err(|e| AcmeError::ChallengeFailed(e.to_string()))
    }
    fn cleanup(&self, _: ChallengeType, fqdn: &str, _: &str) {
        self.0.clear_acme_txt(fqdn).unwrap();
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn wrong_txt_fails_and_invalidates_order() {
    let rig = rig(30_000).await;
    let client = rig.client().await;
    let fqdn = "dev.camera.vendor.com";
    let csr = build_csr(&DeviceKey::generate(KeyAlgorithm::P256).unwrap(), fqdn).unwrap();
    let err = client.obtain_certificate(fqdn, &csr, ChallengeType::Dns01, &WrongTxt(rig.dns.clone())).await.unwrap_err();
    assert!(matches!(err, AcmeError::ChallengeFailed(_)), "{err:?}");
    let order = client.order(&client.last_order_url().unwrap()).await.unwrap();
    assert_eq!(order.status, Status::Invalid);
}

#[tokio::test(flavor = "multi_thread")]
async fn csr_for_other_name_is_rejected() {
    let rig = rig(30_000).await;
    let client = rig.client().await;
    let csr = build_csr(&DeviceKey::generate(KeyAlgorithm::P256).unwrap(), "other.camera.vendor.com").unwrap();
    let err = client
        .obtain_certificate("dev.camera.vendor.com", &csr, ChallengeType::Dns01, &rig.dns)
        .await
        .unwrap_err();
    assert!(matches!(err, AcmeError::CsrMismatch(_)), "{err:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn replayed_nonce_is_rejected() {
    let rig = rig(30_000).await;
    let client = rig.client().await;
    let nonce = client.nonce().await.unwrap();
    let url = client.directory().new_order.clone();
    let payload = json!({"identifiers": [{"type": "dns", "value": "a.vendor.com"}]});
    let first = client.post_with_nonce(&url, &nonce, Some(&payload), false).await.unwrap();
    assert!(first.problem.is_none(), "{:?}", first.problem);
    let replay = client.post_with_nonce(&url, &nonce, Some(&payload), false).await.unwrap();
    let p = replay.problem.unwrap();
    assert_eq!(p.kind, "urn:ietf:params:acme:error:badNonce");
    assert_eq!(replay.status, 400);
}

#[tokio::test(flavor = "multi_thread")]
async fn quota_exhaustion_is_rate_limited() {
    let rig = rig(3).await;
    let client = rig.client().await;
    let fulfiller = rig.fulfiller();
    for i in 0..3 {
        let fqdn = format!("d{i}.camera.vendor.com");
        let csr = build_csr(&DeviceKey::generate(KeyAlgorithm::P256).unwrap(), &fqdn).unwrap();
        client.obtain_certificate(&fqdn, &csr, ChallengeType::Dns01, &fulfiller).await.unwrap();
    }
    let csr = build_csr(&DeviceKey::generate(KeyAlgorithm::P256).unwrap(), "d3.camera.vendor.com").unwrap();
    let err = client.obtain_certificate("d3.camera.vendor.com", &csr, ChallengeType::Dns01, &fulfiller).await.unwrap_err();
    assert!(matches!(err, AcmeError::RateLimited(_)), "{err:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn rs256_account_and_rsa_device_key() {
    let rig = rig(30_000).await;
    let client = AcmeClient::connect(&rig.ca.directory_url(), Some(&rig.ca.service_root_pem()), AccountKey::generate_rs256().unwrap())
        .await
        .unwrap();
    let fqdn = "rsa.camera.vendor.com";
    let key = DeviceKey::generate(KeyAlgorithm::Rsa2048).unwrap();
    let chain = client.obtain_certificate(fqdn, &build_csr(&key, fqdn).unwrap(), ChallengeType::Dns01, &rig.dns).await.unwrap();
    assert_chain(&chain, &rig.ca.ca().root_pem(), fqdn);
    let leaf = certs::pem_to_ders(&chain).unwrap().remove(0);
    assert_eq!(certs::inspect_cert(&leaf).unwrap().spki_fingerprint, key.public_key_fingerprint().unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn unreachable_ca() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = AcmeClient::connect(&format!("https://{addr}/directory"), None, AccountKey::generate_es256().unwrap())
        .await
        .unwrap_err();
    assert!(matches!(err, AcmeError::CaUnreachable(_)), "{err:?}");
}

#[tokio::test(flavor = "multi_thread")]
async fn undelegated_names_fail_validation() {
    let rig = rig(30_000).await;
    let client = rig.client().await;
    let other = Arc::new(DnsAuthority::new("elsewhere.org").unwrap());
    let csr = build_csr(&DeviceKey::generate(KeyAlgorithm::P256).unwrap(), "x.elsewhere.org").unwrap();
    let err = client.obtain_certificate("x.elsewhere.org", &csr, ChallengeType::Dns01, other.as_ref()).await.unwrap_err();
    assert!(matches!(err, AcmeError::ChallengeFailed(_)), "{err:?}");
}
