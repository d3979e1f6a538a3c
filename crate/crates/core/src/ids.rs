//! Identifier types shared by every component.
//!
//! An NFT is identified globally by the triple (chain, contract, token). The
//! canonical string form is `{chain_id}/{contract_addr}/{token_id}`, e.g.
//! `eip155:1/0xa4c38796c35dca618fe22a4e77f4210d0b0350d6/1`. Off-chain assets
//! are identified by `{namespace}:{serial}` where the namespace belongs to the
//! asset provider.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed identifier {input:?}: {reason}")]
pub struct MalformedIdentifier {
    pub input: String,
    pub reason: &'static str,
}

impl MalformedIdentifier {
    fn new(input: &str, reason: &'static str) -> Self {
        Self {
            input: input.to_owned(),
            reason,
        }
    }
}

/// Implements `Display`, `FromStr` and string-valued serde for a type with a
/// canonical string form.
macro_rules! string_serde {
    ($ty:ty) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let raw = String::deserialize(d)?;
                raw.parse().map_err(de::Error::custom)
            }
        }
    };
}

fn is_chain_namespace(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
}

fn is_chain_reference(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// A chain identifier in `namespace:reference` form (`eip155:1`, `sim:chainA`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChainId(String);

impl ChainId {
    pub fn new(raw: &str) -> Result<Self, MalformedIdentifier> {
        let (ns, reference) = raw
            .split_once(':')
            .ok_or_else(|| MalformedIdentifier::new(raw, "chain id needs namespace:reference"))?;
        if !is_chain_namespace(ns) {
            return Err(MalformedIdentifier::new(
                raw,
                "chain namespace must be [a-z0-9]+",
            ));
        }
        if !is_chain_reference(reference) {
            return Err(MalformedIdentifier::new(
                raw,
                "chain reference must be [-_a-zA-Z0-9]+",
            ));
        }
        Ok(Self(raw.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ChainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ChainId {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

string_serde!(ChainId);

/// A contract address: `0x` followed by exactly 40 lowercase hex digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContractAddr(String);

impl ContractAddr {
    /// Accepts mixed-case hex and stores it lowercased.
    pub fn new(raw: &str) -> Result<Self, MalformedIdentifier> {
        let digits = raw
            .strip_prefix("0x")
            .ok_or_else(|| MalformedIdentifier::new(raw, "contract address needs 0x prefix"))?;
        if digits.len() != 40 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(MalformedIdentifier::new(
                raw,
                "contract address needs 40 hex digits",
            ));
        }
        Ok(Self(format!("0x{}", digits.to_ascii_lowercase())))
    }

    /// Builds an address from the first 20 bytes of `bytes`.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        Self(format!("0x{}", hex::encode(&bytes[..20])))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ContractAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ContractAddr {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

string_serde!(ContractAddr);

/// Unsigned token id of arbitrary precision. Serialized as a decimal string so
/// ids beyond 64 bits survive JSON round trips.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenId(BigUint);

impl TokenId {
    pub fn one() -> Self {
        Self(BigUint::from(1u8))
    }

    pub fn next(&self) -> Self {
        Self(&self.0 + 1u8)
    }
}

impl From<u64> for TokenId {
    fn from(v: u64) -> Self {
        Self(BigUint::from(v))
    }
}

impl From<BigUint> for TokenId {
    fn from(v: BigUint) -> Self {
        Self(v)
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for TokenId {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        // Shortest decimal form only: no sign, no leading zeros.
        let ok = !s.is_empty()
            && s.bytes().all(|b| b.is_ascii_digit())
            && (s == "0" || !s.starts_with('0'));
        if !ok {
            return Err(MalformedIdentifier::new(
                s,
                "token id must be an unsigned decimal",
            ));
        }
        s.parse::<BigUint>()
            .map(Self)
            .map_err(|_| MalformedIdentifier::new(s, "token id must be an unsigned decimal"))
    }
}

string_serde!(TokenId);

/// `(chain, contract, token)` identity of an NFT.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NftId {
    pub chain_id: ChainId,
    pub contract_addr: ContractAddr,
    pub token_id: TokenId,
}

impl NftId {
    pub fn new(chain_id: ChainId, contract_addr: ContractAddr, token_id: TokenId) -> Self {
        Self {
            chain_id,
            contract_addr,
            token_id,
        }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }
}

/// Validates each component and builds the id; the contract address may be
/// mixed-case.
pub fn make_nft_id(
    chain_id: &str,
    contract_addr: &str,
    token_id: impl Into<TokenId>,
) -> Result<NftId, MalformedIdentifier> {
    Ok(NftId::new(
        ChainId::new(chain_id)?,
        ContractAddr::new(contract_addr)?,
        token_id.into(),
    ))
}

pub fn parse_nft_id(s: &str) -> Result<NftId, MalformedIdentifier> {
    let mut parts = s.split('/');
    let (Some(chain), Some(addr), Some(token), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(MalformedIdentifier::new(s, "expected chain/contract/token"));
    };
    // The address must already be canonical (lowercase) in string form.
    if addr.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(MalformedIdentifier::new(
            s,
            "contract address must be lowercase",
        ));
    }
    Ok(NftId::new(
        ChainId::new(chain)?,
        ContractAddr::new(addr)?,
        token.parse()?,
    ))
}

impl fmt::Display for NftId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}",
            self.chain_id, self.contract_addr, self.token_id
        )
    }
}

impl FromStr for NftId {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_nft_id(s)
    }
}

string_serde!(NftId);

/// Off-chain asset identity, `{namespace}:{serial}`.
///
/// The namespace is the asset provider's boundary (a brand name or key
/// fingerprint). It cannot contain `:`; the serial may.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AssetId {
    namespace: String,
    serial: String,
}

impl AssetId {
    pub fn new(namespace: &str, serial: &str) -> Result<Self, MalformedIdentifier> {
        if namespace.is_empty() || namespace.contains(':') {
            return Err(MalformedIdentifier::new(
                namespace,
                "asset namespace must be non-empty and colon-free",
            ));
        }
        if serial.is_empty() {
            return Err(MalformedIdentifier::new(
                serial,
                "asset serial must be non-empty",
            ));
        }
        Ok(Self {
            namespace: namespace.to_owned(),
            serial: serial.to_owned(),
        })
    }

    pub fn namespace(&self) -> &str {
        &self.namespace
    }

    pub fn serial(&self) -> &str {
        &self.serial
    }
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.serial)
    }
}

impl FromStr for AssetId {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ns, serial) = s
            .split_once(':')
            .ok_or_else(|| MalformedIdentifier::new(s, "asset id needs namespace:serial"))?;
        Self::new(ns, serial)
    }
}

string_serde!(AssetId);

/// An opaque account address. No signatures exist in the simulation; the
/// caller named on a call is trusted to be who it claims.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Account(String);

impl Account {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Account {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

/// A SHA-256 digest rendered as 64 lowercase hex characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HashDigest(String);

impl HashDigest {
    pub const ALGORITHM: &'static str = "sha-256";

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(hex::encode(bytes))
    }

    pub fn hex(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for HashDigest {
    type Err = MalformedIdentifier;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64
            || !s
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
        {
            return Err(MalformedIdentifier::new(
                s,
                "digest must be 64 lowercase hex chars",
            ));
        }
        Ok(Self(s.to_owned()))
    }
}

string_serde!(HashDigest);
