//! Wire types shared by the services and the client SDK. Tokens travel
//! base64url-encoded; fingerprints and digests as lowercase hex.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use capguard_core::token::{Fingerprint, PreCapability, Pseudonym, TokenKind};
use capguard_core::BigUint;
use serde::{Deserialize, Serialize};

pub fn b64(bytes: &[u8]) -> String {
    URL_SAFE_NO_PAD.encode(bytes)
}

pub fn b64_decode(text: &str) -> Result<Vec<u8>, ApiError> {
    URL_SAFE_NO_PAD
        .decode(text)
        .map_err(|_| ApiError::BadEncoding)
}

pub fn b64_biguint(value: &BigUint) -> String {
    b64(&value.to_bytes_be())
}

pub fn biguint_from_b64(text: &str) -> Result<BigUint, ApiError> {
    Ok(BigUint::from_bytes_be(&b64_decode(text)?))
}

pub fn fingerprint_from_hex(text: &str) -> Result<Fingerprint, ApiError> {
    let bytes = hex::decode(text).map_err(|_| ApiError::BadEncoding)?;
    Fingerprint::from_bytes(&bytes).map_err(|_| ApiError::BadEncoding)
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("malformed base64url or hex field")]
    BadEncoding,
    #[error("unknown token kind {0}")]
    BadKind(String),
}

pub fn kind_to_str(kind: TokenKind) -> &'static str {
    match kind {
        TokenKind::Site => "site",
        TokenKind::Relay => "relay",
        TokenKind::Trans => "trans",
    }
}

pub fn kind_from_str(text: &str) -> Result<TokenKind, ApiError> {
    match text {
        "site" => Ok(TokenKind::Site),
        "relay" => Ok(TokenKind::Relay),
        "trans" => Ok(TokenKind::Trans),
        other => Err(ApiError::BadKind(other.into())),
    }
}

/// Body of `POST /seed`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "seed_type", rename_all = "lowercase")]
pub enum SeedRequest {
    Captcha { token: String },
    Puzzle { stub: String },
    Ttp { assertion: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PseudonymDto {
    pub nonce: String,
    pub signature: String,
    pub issued_at: f64,
    pub expires_at: f64,
}

impl PseudonymDto {
    pub fn from_token(p: &Pseudonym) -> Self {
        PseudonymDto {
            nonce: b64(&p.nonce),
            signature: b64_biguint(&p.signature),
            issued_at: p.issued_at,
            expires_at: p.expires_at,
        }
    }

    pub fn to_token(&self) -> Result<Pseudonym, ApiError> {
        let nonce_bytes = b64_decode(&self.nonce)?;
        let mut nonce = [0u8; 16];
        if nonce_bytes.len() != 16 {
            return Err(ApiError::BadEncoding);
        }
        nonce.copy_from_slice(&nonce_bytes);
        Ok(Pseudonym {
            nonce,
            signature: biguint_from_b64(&self.signature)?,
            issued_at: self.issued_at,
            expires_at: self.expires_at,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedResponse {
    pub seed_id: String,
    pub pseudonym: PseudonymDto,
}

/// Authorization carried inside the `X-Capability` header of
/// `POST /precap`, together with the blinded message.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AuthDto {
    Seed { seed_id: String },
    Pseudonym(PseudonymDto),
    TransCredit { credit_id: String },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrecapEnvelope {
    pub auth: AuthDto,
    pub blinded: String,
}

impl PrecapEnvelope {
    /// Header form: base64url over the JSON body.
    pub fn encode_header(&self) -> String {
        b64(serde_json::to_string(self).expect("serializable").as_bytes())
    }

    pub fn decode_header(header: &str) -> Result<Self, ApiError> {
        let raw = b64_decode(header)?;
        serde_json::from_slice(&raw).map_err(|_| ApiError::BadEncoding)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PreCapabilityDto {
    pub blinded: String,
    pub blind_signature: String,
    pub kind: String,
    pub authority: String,
}

impl PreCapabilityDto {
    pub fn from_token(p: &PreCapability) -> Self {
        PreCapabilityDto {
            blinded: b64_biguint(&p.blinded),
            blind_signature: b64_biguint(&p.blind_signature),
            kind: kind_to_str(p.kind).into(),
            authority: p.authority.to_string(),
        }
    }

    pub fn to_token(&self) -> Result<PreCapability, ApiError> {
        Ok(PreCapability {
            blinded: biguint_from_b64(&self.blinded)?,
            blind_signature: biguint_from_b64(&self.blind_signature)?,
            kind: kind_from_str(&self.kind)?,
            authority: fingerprint_from_hex(&self.authority)?,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PrecapResponse {
    pub pre_capability: PreCapabilityDto,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudonym: Option<PseudonymDto>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransRedeemRequest {
    pub capability: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransRedeemResponse {
    pub credit_id: String,
    pub credits: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochResponse {
    pub index: u64,
    pub value: String,
    pub length_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedPieceDto {
    pub da_id: u8,
    pub nonce: String,
    pub period_start_s: u64,
    pub signature: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PuzzleSeedResponse {
    pub period_index: u64,
    pub period_start_s: u64,
    pub release_period_s: f64,
    pub accept_period_s: f64,
    pub threshold_probability: f64,
    pub pieces: Vec<SeedPieceDto>,
}

/// Uniform error body across all services.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub code: String,
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retry_after_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nullified: Option<bool>,
}

/// Site service success body.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ServeResponse {
    pub served: bool,
    pub nullified: bool,
}
