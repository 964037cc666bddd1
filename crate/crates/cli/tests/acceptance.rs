//! Acceptance run: nine end-to-end checks, one PASS/FAIL line each. Exits
//! non-zero when any check fails or overruns its time budget.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::net::{SocketAddr, UdpSocket};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use atlas_core::sim::{summarize, WeibullParams};
use atlas_core::{build_filter, derive_device_uuid, uuid_v5, DeviceSecret, RevocationFilter, VendorNamespace, NAMESPACE_DNS};
use atlas_provision::acme::{AccountKey, AcmeClient, AcmeError, ChallengeFulfiller, ChallengeType};
use atlas_provision::certs::{build_csr, DeviceKey, KeyAlgorithm};
use atlas_provision::clock::ManualClock;
use atlas_provision::dns::{DnsAuthority, RData};
use atlas_provision::inventory::RevocationReason;
use atlas_provision::lifecycle::{LocalPki, LocalPkiConfig, ProvisionedDevice, Vendor, VendorConfig};
use atlas_provision::peer_auth::{mtls_echo, mtls_echo_with, EchoPolicy, PeerAuthError, RejectReason, Side, TrustContext};
use base64::Engine;
use hickory_proto::op::{Message, MessageType, OpCode, Query, ResponseCode};
use hickory_proto::rr::{Name, RecordType};
use hickory_proto::serialize::binary::{BinDecodable, BinEncodable};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, Weibull};
use time::macros::datetime;
use time::{format_description::well_known::Rfc3339, OffsetDateTime};
use x509_parser::extensions::GeneralName;
use x509_parser::prelude::{FromDer, X509Certificate};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let held: bool = $cond;
        if !held {
            return Err(format!($($msg)+));
        }
    };
}

fn main() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let work = tempfile::tempdir().unwrap();
    let batch = Dirs::new(work.path(), "batch");
    let renew = Dirs::new(work.path(), "renew");

    let mut failures = 0;
    let mut run = |n: u8, name: &str, budget: Option<f64>, f: &mut dyn FnMut() -> Check| {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if secs > b => Err(format!("took {secs:.1} s, budget {b} s")),
            (r, _) => r,
        };
        let budget = budget.map_or(String::new(), |b| format!(" / {b} s"));
        match result {
            Ok(detail) => println!("PASS [{n}] {name} ({secs:.2} s{budget}): {detail}"),
            Err(why) => {
                failures += 1;
                println!("FAIL [{n}] {name} ({secs:.2} s{budget}): {why}");
            }
        }
    };

    run(1, "identity correctness", Some(5.0), &mut identity);
    run(2, "hermetic batch enrollment", Some(120.0), &mut || enrollment(&batch));
    run(3, "renewal semantics", Some(30.0), &mut || renewal(&renew));
    run(4, "key confinement", None, &mut || confinement(&[&batch, &renew]));
    run(5, "revocation filter exactness", Some(60.0), &mut filter_exactness);
    run(6, "cross-vendor mTLS matrix", Some(30.0), &mut || rt.block_on(mtls_matrix()));
    run(7, "Weibull model fidelity", Some(10.0), &mut weibull);
    run(8, "d2d vs cloud separation", Some(120.0), &mut || simulation(work.path()));
    run(9, "DNS authority conformance", Some(10.0), &mut || rt.block_on(dns_conformance()));

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}

struct Dirs {
    out: PathBuf,
    devices: PathBuf,
}

impl Dirs {
    fn new(root: &Path, name: &str) -> Self {
        Self { out: root.join(name).join("out"), devices: root.join(name).join("devices") }
    }

    fn atlas(&self, args: &[&str]) -> Result<String, String> {
        let mut full = vec!["--out", self.out.to_str().unwrap(), "--devices", self.devices.to_str().unwrap()];
        full.extend_from_slice(args);
        atlas(&full)
    }
}

fn atlas(args: &[&str]) -> Result<String, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_atlas"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("ATLAS_")) {
        cmd.env_remove(k);
    }
    let out = cmd.args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("atlas {} exited {:?}: {}", args.join(" "), out.status.code(), String::from_utf8_lossy(&out.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

// 1 ------------------------------------------------------------------------

fn oracle_v5(name: &[u8]) -> String {
    uuid::Uuid::new_v5(&uuid::Uuid::NAMESPACE_DNS, name).to_string()
}

fn identity() -> Check {
    let mut vectors = vec![("python.org", "886313e1-3b8a-5372-9b90-0c9aee199e5d".to_owned())];
    for name in ["www.example.com", "vendor.com", "camera.vendor.com"] {
        vectors.push((name, oracle_v5(name.as_bytes())));
    }
    for (name, want) in &vectors {
        let got = uuid_v5(&NAMESPACE_DNS, name.as_bytes()).to_string();
        ensure!(&got == want, "uuid_v5({name}) = {got}, reference {want}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 10_000;
    for _ in 0..n {
        let root = format!("v{}.{}", rng.gen_range(0..1_000_000), ["com", "net", "io"][rng.gen_range(0..3)]);
        let ns = VendorNamespace::new(&root, "sensor").map_err(|e| e.to_string())?;
        let len = rng.gen_range(16..64);
        let secret: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let s = DeviceSecret::external(secret.clone()).map_err(|e| e.to_string())?;
        let a = derive_device_uuid(&ns, &s).map_err(|e| e.to_string())?;
        let b = derive_device_uuid(&ns, &s).map_err(|e| e.to_string())?;
        ensure!(a == b, "derivation not deterministic for {root}");
        let mut h = Sha256::new();
        h.update(root.as_bytes());
        h.update([0u8]);
        h.update(&secret);
        let name: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        ensure!(a.to_string() == oracle_v5(name.as_bytes()), "derivation for {root} disagrees with reference");
        let bytes = a.as_bytes();
        ensure!(bytes[6] >> 4 == 5 && bytes[8] >> 6 == 0b10, "bad version/variant bits in {a}");
    }
    Ok(format!("{} reference vectors, {n} random derivations match", vectors.len()))
}

// 2 ------------------------------------------------------------------------

fn pem_ders(path: &Path) -> Result<Vec<Vec<u8>>, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    x509_parser::pem::Pem::iter_from_buffer(&bytes)
        .map(|p| p.map(|p| p.contents).map_err(|e| format!("{}: {e}", path.display())))
        .collect()
}

struct Leaf {
    serial: String,
    spki_sha256: Vec<u8>,
    not_before: OffsetDateTime,
    not_after: OffsetDateTime,
    sans: Vec<String>,
}

fn leaf(der: &[u8]) -> Result<Leaf, String> {
    let (_, cert) = X509Certificate::from_der(der).map_err(|e| e.to_string())?;
    let sans = match cert.subject_alternative_name().map_err(|e| e.to_string())? {
        Some(ext) => ext
            .value
            .general_names
            .iter()
            .map(|g| match g {
                GeneralName::DNSName(n) => n.to_string(),
                other => format!("{other:?}"),
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(Leaf {
        serial: cert.tbs_certificate.serial.to_string(),
        spki_sha256: Sha256::digest(cert.public_key().raw).to_vec(),
        not_before: cert.validity().not_before.to_datetime(),
        not_after: cert.validity().not_after.to_datetime(),
        sans,
    })
}

fn chain_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))? {
        let path = entry.map_err(|e| e.to_string())?.path();
        if let Some(uuid) = path.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".chain.pem")) {
            out.insert(uuid.to_owned(), path.clone());
        }
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn enrollment(d: &Dirs) -> Check {
    d.atlas(&["enroll-batch", "--count", "100"])?;

    let csv = std::fs::read_to_string(d.out.join("reports/enroll-batch.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    ensure!(rows.len() == 100, "report has {} rows", rows.len());
    ensure!(rows.iter().all(|r| r[1] == "ok"), "report has failed rows");
    let col = |i: usize| rows.iter().map(|r| r[i].parse::<f64>().map_err(|e| e.to_string())).collect::<Result<Vec<_>, _>>();
    let (binding, issuance) = (mean(&col(2)?), mean(&col(3)?));
    ensure!(binding < issuance, "binding mean {binding} ms not below issuance mean {issuance} ms");

    let root = pem_ders(&d.out.join("ca/root.pem"))?.remove(0);
    let root = rustls_pki_types::CertificateDer::from(root);
    let anchor = webpki::anchor_from_trusted_cert(&root).map_err(|e| e.to_string())?;
    let now = rustls_pki_types::UnixTime::now();
    let chains = chain_files(&d.devices)?;
    ensure!(chains.len() == 100, "{} device chains on disk", chains.len());
    let mut longest = time::Duration::ZERO;
    for (uuid, path) in &chains {
        let ders = pem_ders(path)?;
        let ee_der = rustls_pki_types::CertificateDer::from(ders[0].clone());
        let inter: Vec<_> = ders[1..].iter().map(|d| rustls_pki_types::CertificateDer::from(d.clone())).collect();
        let ee = webpki::EndEntityCert::try_from(&ee_der).map_err(|e| format!("{uuid}: {e}"))?;
        ee.verify_for_usage(webpki::ALL_VERIFICATION_ALGS, std::slice::from_ref(&anchor), &inter, now, webpki::KeyUsage::client_auth(), None, None)
            .map_err(|e| format!("{uuid}: chain does not verify: {e}"))?;
        let l = leaf(&ders[0])?;
        let urn = format!("{uuid}.sensor.vendor.com");
        ensure!(l.sans == [urn.clone()], "{uuid}: SAN {:?}, want [{urn}]", l.sans);
        let life = l.not_after - l.not_before;
        ensure!(life <= time::Duration::days(90), "{uuid}: lifetime {life}");
        longest = longest.max(life);
    }
    Ok(format!(
        "100/100 chain to the root with SAN = URN, longest validity {} d; binding {binding:.3} ms < issuance {issuance:.3} ms",
        longest.whole_days()
    ))
}

// 3 ------------------------------------------------------------------------

fn renewal(d: &Dirs) -> Check {
    let t0 = datetime!(2031-01-01 00:00 UTC);
    let stamp = |t: OffsetDateTime| t.format(&Rfc3339).unwrap();
    for g in 0..10 {
        let t = stamp(t0 + time::Duration::days(6 * g));
        let class = format!("c{g}");
        d.atlas(&["--now", &t, "enroll-batch", "--count", "2", "--class", &class, "--key-algorithm", "p256"])?;
    }

    let read = |uuid: &str| -> Result<Leaf, String> { leaf(&pem_ders(&d.devices.join(format!("{uuid}.chain.pem")))?[0]) };
    let uuids: Vec<String> = chain_files(&d.devices)?.into_keys().collect();
    ensure!(uuids.len() == 20, "{} devices enrolled", uuids.len());
    let mut fingerprint = BTreeMap::new();
    let mut seen = HashSet::new();
    let mut renewals: BTreeMap<String, u32> = BTreeMap::new();
    for u in &uuids {
        let l = read(u)?;
        fingerprint.insert(u.clone(), l.spki_sha256);
        seen.insert(l.serial);
    }

    let window = time::Duration::days(30);
    let mut t = t0 + time::Duration::days(10);
    let mut ticks = 0;
    while renewals.len() < 20 || renewals.values().any(|&n| n < 3) {
        ensure!(ticks < 60, "devices stopped renewing: {renewals:?}");
        let mut due = BTreeSet::new();
        for u in &uuids {
            let left = read(u)?.not_after - t;
            if left > time::Duration::ZERO && left <= window {
                due.insert(u.clone());
            }
        }
        d.atlas(&["--now", &stamp(t), "renew"])?;
        let csv = std::fs::read_to_string(d.out.join("reports/renew.csv")).map_err(|e| e.to_string())?;
        let mut renewed = BTreeSet::new();
        for line in csv.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f[1] == "renewed", "tick {}: {} -> {}", stamp(t), f[0], f[1]);
            renewed.insert(f[0].to_owned());
        }
        ensure!(renewed == due, "tick {}: renewed {:?}, due {:?}", stamp(t), renewed, due);
        for u in &renewed {
            let l = read(u)?;
            ensure!(l.spki_sha256 == fingerprint[u], "{u}: key changed on renewal");
            ensure!(seen.insert(l.serial.clone()), "{u}: serial {} reused", l.serial);
            *renewals.entry(u.clone()).or_default() += 1;
        }
        t += time::Duration::days(10);
        ticks += 1;
    }
    Ok(format!(
        "{ticks} ticks, each renewed exactly the devices inside the window; 20 devices x >= 3 cycles, keys fixed, {} distinct serials",
        seen.len()
    ))
}

// 4 ------------------------------------------------------------------------

fn files(dir: &Path, acc: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            files(&path, acc)?;
        } else {
            acc.push(path);
        }
    }
    Ok(())
}

fn has_private_key(bytes: &[u8]) -> bool {
    let needle = b"PRIVATE KEY-----";
    bytes.windows(needle.len()).any(|w| w == needle)
}

fn confinement(runs: &[&Dirs]) -> Check {
    let (mut scanned, mut device_keys) = (0, 0);
    for d in runs {
        let mut backend = Vec::new();
        files(&d.out, &mut backend).map_err(|e| e.to_string())?;
        for f in &backend {
            let bytes = std::fs::read(f).map_err(|e| e.to_string())?;
            ensure!(!has_private_key(&bytes), "private key material in {}", f.display());
        }
        scanned += backend.len();
        let mut dev = Vec::new();
        files(&d.devices, &mut dev).map_err(|e| e.to_string())?;
        device_keys += dev.iter().filter(|f| std::fs::read(f).is_ok_and(|b| has_private_key(&b))).count();
    }
    ensure!(scanned > 0, "nothing persisted to scan");
    ensure!(device_keys >= 120, "scanner sanity: only {device_keys} device keys found");
    Ok(format!("0 private-key blocks in {scanned} backend files (scanner sees {device_keys} on the device side)"))
}

// 5 ------------------------------------------------------------------------

fn filter_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut cases = 0;
    let mut ratio = String::new();
    for n in [1_000usize, 10_000, 100_000] {
        let mut universe = BTreeSet::new();
        while universe.len() < n {
            universe.insert((rng.gen::<u128>() >> 21).to_string());
        }
        let universe: Vec<String> = universe.into_iter().collect();
        for frac in [0.005, 0.02, 0.05] {
            let k = (n as f64 * frac).round() as usize;
            let revoked: Vec<String> = universe.choose_multiple(&mut rng, k).cloned().collect();
            let oracle: HashSet<&str> = revoked.iter().map(String::as_str).collect();
            let built = build_filter(&revoked, &universe, "vendor.com", 1).map_err(|e| e.to_string())?;
            let bytes = built.to_bytes();
            let f = RevocationFilter::from_bytes(&bytes).map_err(|e| e.to_string())?;
            let (mut fneg, mut fpos) = (0, 0);
            for s in &universe {
                match (f.query(s), oracle.contains(s.as_str())) {
                    (false, true) => fneg += 1,
                    (true, false) => fpos += 1,
                    _ => {}
                }
            }
            ensure!(fneg == 0 && fpos == 0, "n={n} revoked={k}: {fneg} false negatives, {fpos} false positives");
            cases += 1;
            if n == 100_000 && frac == 0.02 {
                let text: usize = revoked.iter().map(|s| s.len() + 1).sum();
                let packed = k * 14;
                let r = bytes.len() as f64 / text as f64;
                ensure!(r <= 0.10, "filter is {:.1}% of the serial list", 100.0 * r);
                ratio = format!(
                    "at 2% of 1e5 the filter is {} B = {:.1}% of the {text} B decimal serial list ({:.1}% of {packed} B packed 14-byte serials)",
                    bytes.len(),
                    100.0 * r,
                    100.0 * bytes.len() as f64 / packed as f64
                );
            }
        }
    }
    Ok(format!("{cases} universes up to 1e5 exact; {ratio}"))
}

// 6 ------------------------------------------------------------------------

async fn enroll(v: &Vendor, class: &str, tag: &str) -> Result<ProvisionedDevice, String> {
    let ns = VendorNamespace::new(v.apex(), class).map_err(|e| e.to_string())?;
    let secret = DeviceSecret::external(format!("acceptance-{}-{tag}", v.apex()).into_bytes()).map_err(|e| e.to_string())?;
    v.enroll_device(&ns, &secret, ChallengeType::Dns01).await.map_err(|e| e.to_string())
}

fn reason(r: Result<atlas_provision::peer_auth::EchoResult, PeerAuthError>) -> Result<(Side, RejectReason), String> {
    match r {
        Err(PeerAuthError::HandshakeRejected { side, verdict }) => verdict.reject_reason.map(|x| (side, x)).ok_or("no reason".into()),
        Ok(_) => Err("accepted".into()),
        Err(e) => Err(e.to_string()),
    }
}

async fn mtls_matrix() -> Check {
    let start = datetime!(2031-03-01 00:00 UTC);
    let cfg = |seed| LocalPkiConfig { seed, clock: ManualClock::new(start), ..LocalPkiConfig::default() };
    let p256 = |apex| VendorConfig { key_algorithm: KeyAlgorithm::P256, ..VendorConfig::new(apex) };
    let e = |e: atlas_provision::lifecycle::LifecycleError| e.to_string();
    let mut pki = LocalPki::start(cfg(1)).await.map_err(e)?;
    let a = pki.add_vendor(p256("vendor-a.test")).await.map_err(e)?;
    let b = pki.add_vendor(p256("vendor-b.test")).await.map_err(e)?;
    let mut rogue_pki = LocalPki::start(cfg(2)).await.map_err(e)?;
    let rogue = rogue_pki.add_vendor(p256("vendor-a.test")).await.map_err(e)?;

    let a1 = enroll(&a, "camera", "1").await?;
    let b1 = enroll(&b, "lock", "1").await?;
    let revoked = enroll(&b, "lock", "2").await?;
    let foreign = enroll(&rogue, "camera", "1").await?;
    b.revoke_device(&revoked.uuid(), RevocationReason::KeyCompromise).map_err(e)?;

    let ctx = |t: OffsetDateTime| -> Result<TrustContext, String> {
        Ok(TrustContext::from_pem(&pki.root_pem(), ManualClock::new(t))
            .map_err(|e| e.to_string())?
            .with_filter(a.publish_filter().map_err(|e| e.to_string())?)
            .with_filter(b.publish_filter().map_err(|e| e.to_string())?))
    };
    let now = ctx(start + time::Duration::hours(1))?;
    let late = ctx(start + time::Duration::days(120))?;
    let payload = [0x5au8; 256];

    for (s, c) in [(&a1, &b1), (&b1, &a1)] {
        let r = mtls_echo(s, c, &now, &payload).await.map_err(|e| e.to_string())?;
        ensure!(r.payload_echoed == payload, "echo corrupted");
        ensure!(r.client_verdict.accepted && r.server_verdict.accepted, "valid pair not accepted");
    }

    let want_a = EchoPolicy { server_expects: Some("vendor-a.test".into()), client_expects: Some("vendor-a.test".into()) };
    let any = EchoPolicy::default();
    // (bad peer as client, bad peer as server, context, policy, expected reason)
    let cases: [(&ProvisionedDevice, &str, &TrustContext, &EchoPolicy, RejectReason); 4] = [
        (&revoked, "revoked", &now, &any, RejectReason::Revoked),
        (&b1, "expired", &late, &any, RejectReason::Expired),
        (&foreign, "foreign root", &now, &any, RejectReason::Chain),
        (&b1, "wrong vendor", &now, &want_a, RejectReason::SanMismatch),
    ];
    for (bad, label, ctx, policy, want) in cases {
        let got = reason(mtls_echo_with(&a1, bad, ctx, policy, &payload).await)?;
        let expect_side = if want == RejectReason::Expired { Side::Client } else { Side::Server };
        ensure!(got == (expect_side, want), "{label} client: got {got:?}, want {want}");
        let got = reason(mtls_echo_with(bad, &a1, ctx, policy, &payload).await)?;
        ensure!(got == (Side::Client, want), "{label} server: got {got:?}, want {want}");
    }
    Ok("accept, revoked, expired, chain and san_mismatch exact with the bad certificate on either side".into())
}

// 7 ------------------------------------------------------------------------

fn weibull() -> Check {
    let p = WeibullParams::CLOUD;
    let oracle = Weibull::new(p.beta(), p.lambda()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut xs: Vec<f64> = (0..100_000).map(|_| p.sample(&mut rng)).collect();
    let s = summarize(&xs).map_err(|e| e.to_string())?;
    ensure!((s.mean / 12.74 - 1.0).abs() <= 0.05, "mean {:.3} s", s.mean);
    ensure!((s.median / 3.06 - 1.0).abs() <= 0.05, "median {:.3} s", s.median);
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let c = oracle.cdf(x);
            (c - i as f64 / n).abs().max((c - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    ensure!(ks < 0.01, "KS {ks:.4}");
    Ok(format!("mean {:.2} s, median {:.3} s, KS {ks:.4} over 1e5 draws", s.mean, s.median))
}

// 8 ------------------------------------------------------------------------

fn latency_mean(csv: &Path) -> Result<f64, String> {
    let text = std::fs::read_to_string(csv).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = text.lines().skip(1).filter_map(|l| l.rsplit(',').next()?.parse().ok()).collect();
    ensure!(!xs.is_empty(), "{} is empty", csv.display());
    Ok(mean(&xs))
}

fn simulation(root: &Path) -> Check {
    let runs = [root.join("sim1"), root.join("sim2")];
    for out in &runs {
        let out = out.to_str().unwrap();
        let args = ["--out", out, "--seed", "11", "simulate", "--mode", "both", "--nodes", "500", "--gateways", "5", "--d2d-latency-ms", "17"];
        atlas(&args)?;
    }
    let mut a = Vec::new();
    files(&runs[0], &mut a).map_err(|e| e.to_string())?;
    ensure!(a.len() >= 6, "only {} output files", a.len());
    for f in &a {
        let twin = runs[1].join(f.strip_prefix(&runs[0]).unwrap());
        ensure!(std::fs::read(f).ok() == std::fs::read(&twin).ok(), "{} differs between runs", twin.display());
    }
    let d2d = latency_mean(&runs[0].join("sim/d2d.csv"))?;
    let cloud = latency_mean(&runs[0].join("sim/cloud.csv"))?;
    let ratio = cloud / d2d;
    ensure!(ratio >= 100.0, "cloud/d2d = {ratio:.1}");
    Ok(format!("mean d2d {:.2} ms, cloud {cloud:.2} s, ratio {ratio:.0}; {} files byte-identical across runs", d2d * 1e3, a.len()))
}

// 9 ------------------------------------------------------------------------

fn stub(server: SocketAddr, name: &str, rtype: RecordType) -> Result<Message, String> {
    let id: u16 = rand::random();
    let mut m = Message::new();
    m.set_id(id).set_message_type(MessageType::Query).set_op_code(OpCode::Query).set_recursion_desired(false);
    m.add_query(Query::query(Name::from_ascii(name).map_err(|e| e.to_string())?, rtype));
    let sock = UdpSocket::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    sock.set_read_timeout(Some(Duration::from_secs(2))).map_err(|e| e.to_string())?;
    sock.send_to(&m.to_bytes().map_err(|e| e.to_string())?, server).map_err(|e| e.to_string())?;
    let mut buf = [0u8; 4096];
    let (n, _) = sock.recv_from(&mut buf).map_err(|e| format!("{name} {rtype}: {e}"))?;
    let resp = Message::from_bytes(&buf[..n]).map_err(|e| e.to_string())?;
    ensure!(resp.id() == id && resp.message_type() == MessageType::Response, "{name}: mismatched reply");
    Ok(resp)
}

fn txt_values(m: &Message) -> Vec<String> {
    m.answers().iter().filter_map(|r| r.data()?.as_txt().map(|t| t.to_string())).collect()
}

/// Publishes through the vendor zone, then looks the record up from outside.
struct Probing {
    zone: DnsAuthority,
    server: SocketAddr,
    seen: Mutex<Vec<(String, Vec<String>)>>,
}

impl ChallengeFulfiller for Probing {
    fn install(&self, kind: ChallengeType, fqdn: &str, token: &str, key_authorization: &str) -> Result<(), AcmeError> {
        self.zone.install(kind, fqdn, token, key_authorization)?;
        let want = base64::engine::general_purpose::URL_SAFE_NO_PAD.encode(Sha256::digest(key_authorization.as_bytes()));
        let got = tokio::task::block_in_place(|| stub(self.server, &format!("_acme-challenge.{fqdn}."), RecordType::TXT))
            .map(|m| txt_values(&m))
            .unwrap_or_default();
        self.seen.lock().unwrap().push((want, got));
        Ok(())
    }

    fn cleanup(&self, kind: ChallengeType, fqdn: &str, token: &str) {
        self.zone.cleanup(kind, fqdn, token);
    }
}

async fn dns_conformance() -> Check {
    let e = |e: atlas_provision::lifecycle::LifecycleError| e.to_string();
    let mut pki = LocalPki::start(LocalPkiConfig { seed: 9, ..LocalPkiConfig::default() }).await.map_err(e)?;
    let vendor = pki.add_vendor(VendorConfig::new("vendor.com")).await.map_err(e)?;
    let server = pki.dns_addr("vendor.com").ok_or("no dns server")?;
    let zone = vendor.dns().clone();
    zone.add_record("www.vendor.com", RData::Cname("cloud.vendor.com".into()), 300).map_err(|e| e.to_string())?;
    zone.add_record("info.vendor.com", RData::Txt("atlas test record".into()), 300).map_err(|e| e.to_string())?;

    let (server2, checks) = (server, tokio::task::spawn_blocking(move || -> Result<usize, String> {
        let m = stub(server, "cloud.vendor.com.", RecordType::A)?;
        ensure!(m.authoritative() && m.response_code() == ResponseCode::NoError, "A: {m:?}");
        ensure!(m.answers().iter().any(|r| r.data().and_then(|d| d.as_a()).is_some_and(|a| a.0 == std::net::Ipv4Addr::LOCALHOST)), "A answer missing");

        let m = stub(server, "www.vendor.com.", RecordType::CNAME)?;
        ensure!(m.authoritative(), "CNAME not authoritative");
        let target = m.answers().iter().find_map(|r| r.data()?.as_cname().map(|c| c.0.to_ascii()));
        ensure!(target.as_deref() == Some("cloud.vendor.com."), "CNAME answer {target:?}");

        let m = stub(server, "info.vendor.com.", RecordType::TXT)?;
        ensure!(m.authoritative() && txt_values(&m) == ["atlas test record"], "TXT answer {:?}", txt_values(&m));

        let m = stub(server, "absent.vendor.com.", RecordType::A)?;
        ensure!(m.authoritative() && m.response_code() == ResponseCode::NXDomain, "absent name gave {:?}", m.response_code());
        Ok(4)
    }));
    let checks = checks.await.map_err(|e| e.to_string())??;

    let ns = VendorNamespace::new("vendor.com", "camera").map_err(|e| e.to_string())?;
    let uuid = derive_device_uuid(&ns, &DeviceSecret::external(b"dns-conformance-device".to_vec()).unwrap()).map_err(|e| e.to_string())?;
    let fqdn = atlas_core::format_urn(&uuid, &ns).map_err(|e| e.to_string())?;
    let key = DeviceKey::generate(KeyAlgorithm::P256).map_err(|e| e.to_string())?;
    let csr = build_csr(&key, &fqdn).map_err(|e| e.to_string())?;
    let client = AcmeClient::connect(&pki.ca().directory_url(), Some(&pki.ca().service_root_pem()), AccountKey::generate_es256().unwrap())
        .await
        .map_err(|e| e.to_string())?;
    let probe = Probing { zone, server: server2, seen: Mutex::new(Vec::new()) };
    client.obtain_certificate(&fqdn, &csr, ChallengeType::Dns01, &probe).await.map_err(|e| e.to_string())?;
    let seen = probe.seen.into_inner().unwrap();
    ensure!(!seen.is_empty(), "no challenge was installed");
    for (want, got) in &seen {
        ensure!(got.len() == 1 && got[0] == *want, "mid-enrollment TXT {got:?}, expected [{want}]");
    }
    let after = tokio::task::spawn_blocking(move || stub(server2, &format!("_acme-challenge.{fqdn}."), RecordType::TXT))
        .await
        .map_err(|e| e.to_string())??;
    ensure!(txt_values(&after).is_empty(), "challenge TXT left behind");
    Ok(format!("{checks} record checks authoritative; {} mid-enrollment TXT value(s) correct and withdrawn afterwards", seen.len()))
}
