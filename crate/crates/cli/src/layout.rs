//! Files under the `--out` root.
//!
//! ```text
//! ca/root.pem                  trust anchor of the embedded CA
//! inventory/<apex>.atlasinv    vendor inventory snapshot
//! zones/<apex>.zone            exported vendor zone
//! filters/<apex>.crl           latest revocation filter
//! reports/*.csv                enrollment and renewal reports
//! sim/<mode>.*                 simulator output
//! demo/                        mTLS demo verdicts and filters
//! devices/                     device key bundles, unless --devices says otherwise;
//!                              demo devices go to its demo/ subdirectory
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;

#[derive(Debug, Clone)]
pub struct Layout {
    pub out: PathBuf,
    pub devices: PathBuf,
}

impl Layout {
    pub fn new(out: PathBuf, devices: Option<PathBuf>) -> Self {
        let devices = devices.unwrap_or_else(|| out.join("devices"));
        Self { out, devices }
    }

    pub fn root_pem(&self) -> PathBuf {
        self.out.join("ca").join("root.pem")
    }

    pub fn inventory(&self, apex: &str) -> PathBuf {
        self.out.join("inventory").join(format!("{apex}.atlasinv"))
    }

    pub fn inventory_dir(&self) -> PathBuf {
        self.out.join("inventory")
    }

    pub fn zone(&self, apex: &str) -> PathBuf {
        self.out.join("zones").join(format!("{apex}.zone"))
    }

    pub fn filter(&self, apex: &str) -> PathBuf {
        self.out.join("filters").join(format!("{apex}.crl"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.out.join("reports").join(name)
    }

    pub fn sim(&self, name: &str) -> PathBuf {
        self.out.join("sim").join(name)
    }

    pub fn demo(&self) -> PathBuf {
        self.out.join("demo")
    }
}

/// Writes `bytes`, creating parent directories.
pub fn write(path: &Path, bytes: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
