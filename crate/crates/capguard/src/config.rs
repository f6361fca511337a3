//! The shared configuration file: one TOML document describing every role a
//! deployment may run, loaded from `--config` or `CAPGUARD_CONFIG`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use capguard_core::authority::RateLimits;
use capguard_core::directory::SeedType;
use capguard_core::token::EpochBeacon;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GlobalConfig {
    pub data_dir: PathBuf,
    #[serde(default = "default_log_level")]
    pub log_level: String,
    pub epoch: EpochConfig,
    #[serde(default)]
    pub rate: RateConfig,
    pub aa: Option<AaConfig>,
    pub site: Option<SiteConfig>,
    pub relay: Option<RelayConfig>,
    pub beacon: Option<BeaconConfig>,
}

fn default_log_level() -> String {
    "info".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochConfig {
    pub length_s: f64,
    #[serde(default)]
    pub genesis_s: f64,
    /// 32-byte hex seed of the deterministic epoch beacon.
    pub beacon_seed: String,
}

impl EpochConfig {
    pub fn beacon(&self) -> Result<EpochBeacon> {
        let bytes = hex::decode(&self.beacon_seed).context("epoch.beacon_seed must be hex")?;
        if bytes.len() != 32 {
            bail!("epoch.beacon_seed must be 32 bytes of hex");
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes);
        Ok(EpochBeacon::new(seed, self.genesis_s, self.length_s))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateConfig {
    pub site_r: f64,
    pub relay_q: f64,
    pub interval_s: f64,
    pub burst_window_s: f64,
}

impl Default for RateConfig {
    fn default() -> Self {
        RateConfig {
            site_r: 24.0,
            relay_q: 12.0,
            interval_s: 600.0,
            burst_window_s: 3600.0,
        }
    }
}

impl RateConfig {
    pub fn limits(&self) -> RateLimits {
        RateLimits {
            site_per_interval: self.site_r,
            relay_per_interval: self.relay_q,
            interval_s: self.interval_s,
            burst_window_s: self.burst_window_s,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AaConfig {
    pub listen: String,
    pub key_file: PathBuf,
    pub seed_type: SeedType,
    #[serde(default = "default_secret")]
    pub challenge_secret: String,
    #[serde(default = "default_pseudonym_validity")]
    pub pseudonym_validity_s: f64,
    #[serde(default = "default_trans_credits")]
    pub trans_credits: u32,
    /// Where puzzle seeds come from; required for puzzle authorities.
    pub beacon_url: Option<String>,
    #[serde(default = "default_puzzle_threshold")]
    pub puzzle_threshold: f64,
    /// Directory-authority public keys used to check fetched seed pieces.
    pub da_keys_file: Option<PathBuf>,
}

fn default_secret() -> String {
    "desk-secret".into()
}

fn default_pseudonym_validity() -> f64 {
    86_400.0
}

fn default_trans_credits() -> u32 {
    3
}

fn default_puzzle_threshold() -> f64 {
    1e-3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SiteConfig {
    pub listen: String,
    pub domain: String,
    /// CDN mode: additional customer domains accepted alongside `domain`.
    #[serde(default)]
    pub cdn_customers: Vec<String>,
    pub directory_file: PathBuf,
    pub policy_file: Option<PathBuf>,
    #[serde(default = "default_expected_insertions")]
    pub expected_insertions: usize,
    #[serde(default = "default_fp_rate")]
    pub suppressor_fp_rate: f64,
}

fn default_expected_insertions() -> usize {
    100_000
}

fn default_fp_rate() -> f64 {
    1e-4
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelayConfig {
    pub listen: String,
    /// 40-hex-char relay fingerprint.
    pub fingerprint: String,
    pub directory_file: PathBuf,
    #[serde(default = "default_onionskin_cost_ms")]
    pub onionskin_cost_ms: f64,
    #[serde(default = "default_relay_queue")]
    pub queue_bound: usize,
}

fn default_onionskin_cost_ms() -> f64 {
    2.0
}

fn default_relay_queue() -> usize {
    256
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BeaconConfig {
    pub listen: String,
    pub da_keys_file: PathBuf,
    #[serde(default = "default_release_period")]
    pub release_period_s: f64,
    #[serde(default = "default_accept_period")]
    pub accept_period_s: f64,
    #[serde(default = "default_puzzle_threshold")]
    pub puzzle_threshold: f64,
}

fn default_release_period() -> f64 {
    300.0
}

fn default_accept_period() -> f64 {
    60.0
}

impl GlobalConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: GlobalConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        config.validate()?;
        Ok(config)
    }

    /// Resolves the config path from an explicit flag or `CAPGUARD_CONFIG`.
    pub fn resolve_path(flag: Option<PathBuf>) -> Result<PathBuf> {
        if let Some(path) = flag {
            return Ok(path);
        }
        if let Ok(env) = std::env::var("CAPGUARD_CONFIG") {
            return Ok(PathBuf::from(env));
        }
        bail!("no config: pass --config or set CAPGUARD_CONFIG")
    }

    fn validate(&self) -> Result<()> {
        let mut ports: BTreeSet<&str> = BTreeSet::new();
        for listen in [
            self.aa.as_ref().map(|c| c.listen.as_str()),
            self.site.as_ref().map(|c| c.listen.as_str()),
            self.relay.as_ref().map(|c| c.listen.as_str()),
            self.beacon.as_ref().map(|c| c.listen.as_str()),
        ]
        .into_iter()
        .flatten()
        {
            if !ports.insert(listen) {
                bail!("listen address {listen} is used by more than one role");
            }
        }
        if let Some(aa) = &self.aa {
            if !aa.key_file.exists() {
                bail!("aa.key_file {} does not exist", aa.key_file.display());
            }
            if aa.seed_type == SeedType::Puzzle && aa.beacon_url.is_none() {
                bail!("puzzle authorities need aa.beacon_url");
            }
        }
        if let Some(site) = &self.site {
            if !site.directory_file.exists() {
                bail!(
                    "site.directory_file {} does not exist",
                    site.directory_file.display()
                );
            }
        }
        if let Some(beacon) = &self.beacon {
            if !beacon.da_keys_file.exists() {
                bail!(
                    "beacon.da_keys_file {} does not exist",
                    beacon.da_keys_file.display()
                );
            }
        }
        self.epoch.beacon()?;
        Ok(())
    }
}
