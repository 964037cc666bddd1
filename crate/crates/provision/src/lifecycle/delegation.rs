//! Signed gateway delegations for proxy renewal.
//!
//! Wire layout, all integers big-endian:
//!
//! ```text
//! u16 gateway_len | gateway_id | 16-byte device uuid | i64 expires_at (unix s) | 64-byte Ed25519 signature
//! ```
//!
//! The signature covers a domain tag followed by every byte before it.

use atlas_core::DeviceUuid;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use ring::signature::{Ed25519KeyPair, KeyPair, UnparsedPublicKey, ED25519};
use time::OffsetDateTime;

use super::LifecycleError;

const TAG: &[u8] = b"atlas-delegation-v1\0";
const SIG_LEN: usize = 64;

/// Vendor-held key that signs delegations.
pub struct DelegationKey(Ed25519KeyPair);

impl std::fmt::Debug for DelegationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_tuple("DelegationKey").field(&hex::encode(self.public_key())).finish()
    }
}

impl DelegationKey {
    pub fn from_seed(seed: u64) -> Self {
        use rand::RngCore;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(7);
        let mut sk = [0u8; 32];
        rng.fill_bytes(&mut sk);
        Self(Ed25519KeyPair::from_seed_unchecked(&sk).expect("32-byte seed"))
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.0.public_key().as_ref().try_into().expect("ed25519 public keys are 32 bytes")
    }

    pub fn sign(&self, gateway_id: &str, device: DeviceUuid, expires_at: OffsetDateTime) -> Result<DelegationRecord, LifecycleError> {
        if gateway_id.is_empty() || gateway_id.len() > u16::MAX as usize {
            return Err(LifecycleError::BadDelegation("gateway id must be 1..=65535 bytes".into()));
        }
        let mut rec = DelegationRecord {
            gateway_id: gateway_id.to_owned(),
            device_uuid: device,
            expires_at: expires_at.unix_timestamp(),
            signature: [0; SIG_LEN],
        };
        let sig = self.0.sign(&rec.signed_bytes());
        rec.signature.copy_from_slice(sig.as_ref());
        Ok(rec)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelegationRecord {
    pub gateway_id: String,
    pub device_uuid: DeviceUuid,
    /// Unix seconds.
    pub expires_at: i64,
    pub signature: [u8; SIG_LEN],
}

impl DelegationRecord {
    fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + self.gateway_id.len() + 16 + 8 + SIG_LEN);
        out.extend_from_slice(&(self.gateway_id.len() as u16).to_be_bytes());
        out.extend_from_slice(self.gateway_id.as_bytes());
        out.extend_from_slice(self.device_uuid.as_bytes());
        out.extend_from_slice(&self.expires_at.to_be_bytes());
        out
    }

    fn signed_bytes(&self) -> Vec<u8> {
        [TAG, &self.body()].concat()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        out.extend_from_slice(&self.signature);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LifecycleError> {
        let bad = |why: &str| LifecycleError::BadDelegation(why.to_owned());
        let glen = u16::from_be_bytes(bytes.get(..2).ok_or_else(|| bad("truncated"))?.try_into().unwrap()) as usize;
        if bytes.len() != 2 + glen + 16 + 8 + SIG_LEN {
            return Err(bad("length does not match gateway id length"));
        }
        let gateway_id = std::str::from_utf8(&bytes[2..2 + glen]).map_err(|_| bad("gateway id is not UTF-8"))?.to_owned();
        let mut at = 2 + glen;
        let device_uuid = DeviceUuid::from_bytes(bytes[at..at + 16].try_into().unwrap());
        at += 16;
        let expires_at = i64::from_be_bytes(bytes[at..at + 8].try_into().unwrap());
        at += 8;
        Ok(Self { gateway_id, device_uuid, expires_at, signature: bytes[at..].try_into().unwrap() })
    }

    pub fn to_base64(&self) -> String {
        STANDARD.encode(self.to_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self, LifecycleError> {
        let bytes = STANDARD.decode(text.trim()).map_err(|e| LifecycleError::BadDelegation(format!("base64: {e}")))?;
        Self::from_bytes(&bytes)
    }

    /// Checks the signature under `public_key` and that the record has not expired at `now`.
    pub fn verify(&self, public_key: &[u8; 32], now: OffsetDateTime) -> Result<(), LifecycleError> {
        UnparsedPublicKey::new(&ED25519, public_key)
            .verify(&self.signed_bytes(), &self.signature)
            .map_err(|_| LifecycleError::BadDelegation("signature does not verify".into()))?;
        if now.unix_timestamp() >= self.expires_at {
            return Err(LifecycleError::BadDelegation(format!("expired at unix {}", self.expires_at)));
        }
        Ok(())
    }
}
