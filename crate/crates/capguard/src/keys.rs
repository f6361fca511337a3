//! On-disk key material and the published authority directory.

use std::path::Path;

use anyhow::{Context, Result};
use capguard_core::blind::{RsaKeyPair, RsaPublicKey};
use capguard_core::directory::{AaDirectory, AaDirectoryEntry, AaKeyPair, SeedType};
use capguard_core::puzzle::DaKeyPair;
use capguard_core::BigUint;
use serde::{Deserialize, Serialize};

use crate::api::{b64, b64_biguint, biguint_from_b64, fingerprint_from_hex};

#[derive(Serialize, Deserialize)]
struct KeyHalf {
    n: String,
    e: String,
    d: String,
}

impl KeyHalf {
    fn from_pair(pair: &RsaKeyPair) -> Self {
        KeyHalf {
            n: b64_biguint(pair.public().modulus()),
            e: b64_biguint(pair.public().exponent()),
            d: b64_biguint(pair.private_exponent()),
        }
    }

    fn to_pair(&self) -> Result<RsaKeyPair> {
        RsaKeyPair::from_parts(
            biguint_from_b64(&self.n)?,
            biguint_from_b64(&self.e)?,
            biguint_from_b64(&self.d)?,
        )
        .map_err(|e| anyhow::anyhow!("{e}"))
    }
}

/// Secret key file of one authority.
#[derive(Serialize, Deserialize)]
pub struct AaKeyFile {
    pub fingerprint: String,
    pub valid_from: f64,
    pub valid_until: f64,
    site_key: KeyHalf,
    relay_key: KeyHalf,
}

impl AaKeyFile {
    pub fn from_keys(keys: &AaKeyPair) -> Self {
        AaKeyFile {
            fingerprint: keys.fingerprint().to_string(),
            valid_from: keys.valid_from(),
            valid_until: keys.valid_until(),
            site_key: KeyHalf::from_pair(keys.site_keys()),
            relay_key: KeyHalf::from_pair(keys.relay_keys()),
        }
    }

    pub fn to_keys(&self) -> Result<AaKeyPair> {
        Ok(AaKeyPair::from_parts(
            fingerprint_from_hex(&self.fingerprint)?,
            self.site_key.to_pair()?,
            self.relay_key.to_pair()?,
            self.valid_from,
            self.valid_until,
        ))
    }
}

pub fn save_aa_keys(path: &Path, keys: &AaKeyPair) -> Result<()> {
    let text = toml::to_string_pretty(&AaKeyFile::from_keys(keys))?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_aa_keys(path: &Path) -> Result<AaKeyPair> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: AaKeyFile = toml::from_str(&text)?;
    file.to_keys()
}

/// One published directory record.
#[derive(Serialize, Deserialize)]
pub struct DirectoryEntryFile {
    pub fingerprint: String,
    pub seed_type: SeedType,
    pub valid_from: f64,
    pub valid_until: f64,
    pub site_n: String,
    pub site_e: String,
    pub relay_n: String,
    pub relay_e: String,
}

#[derive(Default, Serialize, Deserialize)]
pub struct DirectoryFile {
    #[serde(default)]
    pub authority: Vec<DirectoryEntryFile>,
    #[serde(default)]
    pub blacklist: Vec<String>,
}

impl DirectoryFile {
    pub fn push_entry(&mut self, entry: &AaDirectoryEntry) {
        self.authority.push(DirectoryEntryFile {
            fingerprint: entry.fingerprint.to_string(),
            seed_type: entry.seed_type,
            valid_from: entry.valid_from,
            valid_until: entry.valid_until,
            site_n: b64_biguint(entry.site_key.modulus()),
            site_e: b64_biguint(entry.site_key.exponent()),
            relay_n: b64_biguint(entry.relay_key.modulus()),
            relay_e: b64_biguint(entry.relay_key.exponent()),
        });
    }

    pub fn to_directory(&self) -> Result<AaDirectory> {
        let mut directory = AaDirectory::new();
        for entry in &self.authority {
            let make_key = |n: &str, e: &str| -> Result<RsaPublicKey> {
                RsaPublicKey::from_parts(biguint_from_b64(n)?, biguint_from_b64(e)?)
                    .map_err(|e| anyhow::anyhow!("{e}"))
            };
            directory.publish(AaDirectoryEntry {
                fingerprint: fingerprint_from_hex(&entry.fingerprint)?,
                seed_type: entry.seed_type,
                site_key: make_key(&entry.site_n, &entry.site_e)?,
                relay_key: make_key(&entry.relay_n, &entry.relay_e)?,
                valid_from: entry.valid_from,
                valid_until: entry.valid_until,
            });
        }
        for fp in &self.blacklist {
            directory.blacklist(fingerprint_from_hex(fp)?);
        }
        Ok(directory)
    }
}

pub fn load_directory(path: &Path) -> Result<AaDirectory> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: DirectoryFile = toml::from_str(&text)?;
    file.to_directory()
}

pub fn save_directory_file(path: &Path, file: &DirectoryFile) -> Result<()> {
    std::fs::write(path, toml::to_string_pretty(file)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_directory_file(path: &Path) -> Result<DirectoryFile> {
    if !path.exists() {
        return Ok(DirectoryFile::default());
    }
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}

/// Directory-authority signing keys for the puzzle beacon.
#[derive(Serialize, Deserialize)]
pub struct DaKeyFileEntry {
    pub id: u8,
    n: String,
    e: String,
    d: String,
}

#[derive(Serialize, Deserialize)]
pub struct DaKeysFile {
    pub quorum: usize,
    pub da: Vec<DaKeyFileEntry>,
}

impl DaKeysFile {
    pub fn from_keys(quorum: usize, keys: &[DaKeyPair]) -> Self {
        DaKeysFile {
            quorum,
            da: keys
                .iter()
                .map(|k| DaKeyFileEntry {
                    id: k.id,
                    n: b64_biguint(k.keys().public().modulus()),
                    e: b64_biguint(k.keys().public().exponent()),
                    d: b64(&k.keys().private_exponent().to_bytes_be()),
                })
                .collect(),
        }
    }

    pub fn to_keys(&self) -> Result<Vec<DaKeyPair>> {
        self.da
            .iter()
            .map(|entry| {
                let pair = RsaKeyPair::from_parts(
                    biguint_from_b64(&entry.n)?,
                    biguint_from_b64(&entry.e)?,
                    BigUint::from_bytes_be(&crate::api::b64_decode(&entry.d)?),
                )
                .map_err(|e| anyhow::anyhow!("{e}"))?;
                Ok(DaKeyPair::from_parts(entry.id, pair))
            })
            .collect()
    }
}

pub fn save_da_keys(path: &Path, quorum: usize, keys: &[DaKeyPair]) -> Result<()> {
    std::fs::write(path, toml::to_string_pretty(&DaKeysFile::from_keys(quorum, keys))?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_da_keys(path: &Path) -> Result<(usize, Vec<DaKeyPair>)> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: DaKeysFile = toml::from_str(&text)?;
    Ok((file.quorum, file.to_keys()?))
}
