//! JWS signing and verification for ACME (flattened JSON serialization).

use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD as B64;
use base64::Engine;
use ring::rand::SystemRandom;
use ring::signature::{self, EcdsaKeyPair, KeyPair, RsaKeyPair, RsaPublicKeyComponents, UnparsedPublicKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use rsa::traits::PublicKeyParts;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::AcmeError;

pub fn b64(bytes: impl AsRef<[u8]>) -> String {
    B64.encode(bytes)
}

pub fn b64_decode(s: &str) -> Result<Vec<u8>, AcmeError> {
    B64.decode(s).map_err(|e| AcmeError::Malformed(format!("base64url: {e}")))
}

/// A public key as carried in a JWS `jwk` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Jwk {
    P256 { x: Vec<u8>, y: Vec<u8> },
    Rsa { n: Vec<u8>, e: Vec<u8> },
}

impl Jwk {
    pub fn to_json(&self) -> Value {
        match self {
            Jwk::P256 { x, y } => json!({"crv": "P-256", "kty": "EC", "x": b64(x), "y": b64(y)}),
            Jwk::Rsa { n, e } => json!({"e": b64(e), "kty": "RSA", "n": b64(n)}),
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, AcmeError> {
        let field = |k: &str| -> Result<Vec<u8>, AcmeError> {
            b64_decode(v.get(k).and_then(Value::as_str).ok_or_else(|| AcmeError::Malformed(format!("jwk missing {k}")))?)
        };
        match (v.get("kty").and_then(Value::as_str), v.get("crv").and_then(Value::as_str)) {
            (Some("EC"), Some("P-256")) => {
                let (x, y) = (field("x")?, field("y")?);
                if x.len() != 32 || y.len() != 32 {
                    return Err(AcmeError::Malformed("P-256 coordinates must be 32 bytes".into()));
                }
                Ok(Jwk::P256 { x, y })
            }
            (Some("RSA"), _) => Ok(Jwk::Rsa { n: field("n")?, e: field("e")? }),
            _ => Err(AcmeError::BadSignatureAlgorithm("only P-256 EC and RSA keys are accepted".into())),
        }
    }

    /// RFC 7638 thumbprint, base64url.
    pub fn thumbprint(&self) -> String {
        // Required members only, lexicographic order, no whitespace.
        let canonical = match self {
            Jwk::P256 { x, y } => format!(r#"{{"crv":"P-256","kty":"EC","x":"{}","y":"{}"}}"#, b64(x), b64(y)),
            Jwk::Rsa { n, e } => format!(r#"{{"e":"{}","kty":"RSA","n":"{}"}}"#, b64(e), b64(n)),
        };
        b64(Sha256::digest(canonical.as_bytes()))
    }

    pub fn alg(&self) -> &'static str {
        match self {
            Jwk::P256 { .. } => "ES256",
            Jwk::Rsa { .. } => "RS256",
        }
    }

    pub fn verify(&self, alg: &str, message: &[u8], sig: &[u8]) -> Result<(), AcmeError> {
        if alg != self.alg() {
            return Err(AcmeError::BadSignatureAlgorithm(format!("{alg} does not match key type")));
        }
        let ok = match self {
            Jwk::P256 { x, y } => {
                let mut point = Vec::with_capacity(65);
                point.push(0x04);
                point.extend_from_slice(x);
                point.extend_from_slice(y);
                UnparsedPublicKey::new(&signature::ECDSA_P256_SHA256_FIXED, point).verify(message, sig).is_ok()
            }
            Jwk::Rsa { n, e } => RsaPublicKeyComponents { n, e }
                .verify(&signature::RSA_PKCS1_2048_8192_SHA256, message, sig)
                .is_ok(),
        };
        if ok {
            Ok(())
        } else {
            Err(AcmeError::Unauthorized("JWS signature does not verify".into()))
        }
    }
}

enum Signer {
    Es256(EcdsaKeyPair),
    Rs256(RsaKeyPair),
}

/// ACME account key held by the client.
pub struct AccountKey {
    signer: Signer,
    jwk: Jwk,
    rng: SystemRandom,
}

impl fmt::Debug for AccountKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AccountKey").field("alg", &self.jwk.alg()).field("thumbprint", &self.thumbprint()).finish()
    }
}

impl AccountKey {
    pub fn generate_es256() -> Result<Self, AcmeError> {
        let rng = SystemRandom::new();
        let pkcs8 = EcdsaKeyPair::generate_pkcs8(&signature::ECDSA_P256_SHA256_FIXED_SIGNING, &rng)
            .map_err(|_| AcmeError::Internal("P-256 key generation failed".into()))?;
        Self::from_pkcs8(pkcs8.as_ref())
    }

    pub fn generate_rs256() -> Result<Self, AcmeError> {
        let key = rsa::RsaPrivateKey::new(&mut rand::rngs::OsRng, 2048).map_err(|e| AcmeError::Internal(e.to_string()))?;
        let der = key.to_pkcs8_der().map_err(|e| AcmeError::Internal(e.to_string()))?;
        Self::from_pkcs8(der.as_bytes())
    }

    /// Accepts a P-256 or RSA PKCS#8 document.
    pub fn from_pkcs8(pkcs8: &[u8]) -> Result<Self, AcmeError> {
        let rng = SystemRandom::new();
        if let Ok(kp) = EcdsaKeyPair::from_pkcs8(&signature::ECDSA_P256_SHA256_FIXED_SIGNING, pkcs8, &rng) {
            let point = kp.public_key().as_ref();
            let jwk = Jwk::P256 { x: point[1..33].to_vec(), y: point[33..65].to_vec() };
            return Ok(Self { signer: Signer::Es256(kp), jwk, rng });
        }
        let kp = RsaKeyPair::from_pkcs8(pkcs8).map_err(|e| AcmeError::Malformed(format!("account key: {e}")))?;
        let parts = rsa::RsaPrivateKey::from_pkcs8_der(pkcs8).map_err(|e| AcmeError::Malformed(e.to_string()))?;
        let jwk = Jwk::Rsa { n: parts.n().to_bytes_be(), e: parts.e().to_bytes_be() };
        Ok(Self { signer: Signer::Rs256(kp), jwk, rng })
    }

    pub fn jwk(&self) -> &Jwk {
        &self.jwk
    }

    pub fn thumbprint(&self) -> String {
        self.jwk.thumbprint()
    }

    fn sign_raw(&self, message: &[u8]) -> Result<Vec<u8>, AcmeError> {
        let fail = |_| AcmeError::Internal("signing failed".into());
        match &self.signer {
            Signer::Es256(kp) => Ok(kp.sign(&self.rng, message).map_err(fail)?.as_ref().to_vec()),
            Signer::Rs256(kp) => {
                let mut sig = vec![0; kp.public().modulus_len()];
                kp.sign(&signature::RSA_PKCS1_SHA256, &self.rng, message, &mut sig).map_err(fail)?;
                Ok(sig)
            }
        }
    }

    /// Signs `payload` (`None` for POST-as-GET). Uses `kid` when given, else embeds the JWK.
    pub fn sign(&self, url: &str, nonce: &str, kid: Option<&str>, payload: Option<&Value>) -> Result<Jws, AcmeError> {
        let mut protected = json!({"alg": self.jwk.alg(), "nonce": nonce, "url": url});
        match kid {
            Some(kid) => protected["kid"] = json!(kid),
            None => protected["jwk"] = self.jwk.to_json(),
        }
        let protected = b64(protected.to_string());
        let payload = payload.map(|p| b64(p.to_string())).unwrap_or_default();
        let signature = b64(self.sign_raw(format!("{protected}.{payload}").as_bytes())?);
        Ok(Jws { protected, payload, signature })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Jws {
    pub protected: String,
    pub payload: String,
    pub signature: String,
}

/// Decoded protected header.
#[derive(Debug, Clone, Deserialize)]
pub struct ProtectedHeader {
    pub alg: String,
    pub nonce: Option<String>,
    pub url: String,
    pub kid: Option<String>,
    pub jwk: Option<Value>,
}

impl Jws {
    pub fn header(&self) -> Result<ProtectedHeader, AcmeError> {
        let raw = b64_decode(&self.protected)?;
        let h: ProtectedHeader = serde_json::from_slice(&raw).map_err(|e| AcmeError::Malformed(format!("protected header: {e}")))?;
        if h.kid.is_some() == h.jwk.is_some() {
            return Err(AcmeError::Malformed("exactly one of kid and jwk is required".into()));
        }
        Ok(h)
    }

    pub fn verify(&self, key: &Jwk, alg: &str) -> Result<(), AcmeError> {
        let sig = b64_decode(&self.signature)?;
        key.verify(alg, format!("{}.{}", self.protected, self.payload).as_bytes(), &sig)
    }

    /// `None` for POST-as-GET.
    pub fn payload_json(&self) -> Result<Option<Value>, AcmeError> {
        if self.payload.is_empty() {
            return Ok(None);
        }
        let raw = b64_decode(&self.payload)?;
        serde_json::from_slice(&raw).map(Some).map_err(|e| AcmeError::Malformed(format!("payload: {e}")))
    }
}

fn is_b64url(s: &str) -> bool {
    s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// RFC 8555 key authorization: `token.thumbprint`.
pub fn key_authorization(token: &str, thumbprint: &str) -> Result<String, AcmeError> {
    if token.is_empty() || !is_b64url(token) {
        return Err(AcmeError::InvalidToken(token.to_owned()));
    }
    Ok(format!("{token}.{thumbprint}"))
}

/// DNS-01 TXT value for a key authorization.
pub fn dns01_txt_value(key_authorization: &str) -> String {
    b64(Sha256::digest(key_authorization.as_bytes()))
}
