//! Policy-parameterized NFT contract.
//!
//! One contract type covers all four design patterns; the [`ContractPolicy`]
//! flags decide which operations exist. Handlers validate fully before they
//! mutate, so a rejected call leaves the state untouched.
//!
//! Check order (first failure wins) is part of the contract's observable
//! behaviour and is pinned by the policy matrix fixture:
//!
//! | op              | order                                                            |
//! |-----------------|------------------------------------------------------------------|
//! | transfer/trade  | exists, pending, burned, policy, locked, owner                   |
//! | burn            | exists, pending, burned, caller role, status, forward_ref/policy |
//! | set_attribute   | exists, authority, burned, locked, attribute shape               |
//! | lock/unlock/activate/discard | exists, authority, status                           |

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ids::{Account, ContractAddr, HashDigest, NftId, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContractPolicy {
    pub tradeable: bool,
    pub transferable: bool,
    pub hidden_metadata: bool,
    pub cross_chain: bool,
}

impl ContractPolicy {
    pub const fn trade_only() -> Self {
        Self {
            tradeable: true,
            transferable: true,
            hidden_metadata: false,
            cross_chain: false,
        }
    }

    pub const fn cross_chain_transferable() -> Self {
        Self {
            cross_chain: true,
            ..Self::trade_only()
        }
    }

    pub const fn hidden_metadata() -> Self {
        Self {
            hidden_metadata: true,
            ..Self::trade_only()
        }
    }

    /// Zero-value tokens never trade against payment. `transferable` picks
    /// between a movable passport and an immutable one.
    pub const fn zero_value(transferable: bool) -> Self {
        Self {
            tradeable: false,
            transferable,
            hidden_metadata: false,
            cross_chain: false,
        }
    }
}

/// Named pattern presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    TradeOnly,
    CrossChain,
    Hidden,
    ZeroValue,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [
        Pattern::TradeOnly,
        Pattern::CrossChain,
        Pattern::Hidden,
        Pattern::ZeroValue,
    ];

    pub fn policy(self) -> ContractPolicy {
        match self {
            Pattern::TradeOnly => ContractPolicy::trade_only(),
            Pattern::CrossChain => ContractPolicy::cross_chain_transferable(),
            Pattern::Hidden => ContractPolicy::hidden_metadata(),
            Pattern::ZeroValue => ContractPolicy::zero_value(false),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pattern::TradeOnly => "trade_only",
            Pattern::CrossChain => "cross_chain",
            Pattern::Hidden => "hidden",
            Pattern::ZeroValue => "zero_value",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenStatus {
    Pending,
    Active,
    Locked,
    Burned,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSet {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_uri: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata_hash: Option<HashDigest>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

impl AttributeSet {
    pub fn uri(uri: impl Into<String>) -> Self {
        Self {
            token_uri: Some(uri.into()),
            ..Self::default()
        }
    }

    pub fn hashed(digest: HashDigest) -> Self {
        Self {
            metadata_hash: Some(digest),
            ..Self::default()
        }
    }

    fn check_shape(&self, policy: &ContractPolicy) -> Result<(), Rejection> {
        if policy.hidden_metadata {
            if self.token_uri.is_some() {
                return Err(Rejection::policy("hidden pattern forbids token_uri"));
            }
            if self.metadata_hash.is_none() {
                return Err(Rejection::policy("hidden pattern requires metadata_hash"));
            }
        } else if self.token_uri.is_none() {
            return Err(Rejection::policy("token_uri required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenState {
    pub token_id: TokenId,
    pub owner: Account,
    pub attributes: AttributeSet,
    pub status: TokenStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forward_ref: Option<NftId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burned_by: Option<Account>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconfigEntry {
    pub authorizer: Account,
    pub old: String,
    pub new: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionConfig {
    pub metadata_repo_endpoint: String,
    pub set_at_deploy: bool,
    pub reconfig_log: Vec<ReconfigEntry>,
}

impl ResolutionConfig {
    pub fn at_deploy(endpoint: impl Into<String>) -> Self {
        Self {
            metadata_repo_endpoint: endpoint.into(),
            set_at_deploy: true,
            reconfig_log: Vec::new(),
        }
    }

    /// `token_uri` for `token` under this resolution endpoint.
    pub fn token_uri(&self, token: &TokenId) -> String {
        format!("{}/{}", self.metadata_repo_endpoint, token)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MintStatus {
    Active,
    Pending,
}

/// Transaction payloads. The JSON form (tag `op`) is what the ledger stores,
/// so field names here are a replay format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContractCall {
    Deploy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<ContractAddr>,
        policy: ContractPolicy,
        endpoint: String,
        authority: Account,
    },
    Mint {
        token_id: TokenId,
        owner: Account,
        attributes: AttributeSet,
        status: MintStatus,
    },
    Transfer {
        token_id: TokenId,
        from: Account,
        to: Account,
    },
    Trade {
        token_id: TokenId,
        from: Account,
        to: Account,
        payment: u64,
    },
    Burn {
        token_id: TokenId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        forward_ref: Option<NftId>,
    },
    Lock {
        token_id: TokenId,
    },
    Unlock {
        token_id: TokenId,
    },
    Activate {
        token_id: TokenId,
    },
    /// Removes a pending token; the revert leg of a cross-chain transfer.
    Discard {
        token_id: TokenId,
    },
    SetAttribute {
        token_id: TokenId,
        attributes: AttributeSet,
    },
    Reconfigure {
        endpoint: String,
    },
}

impl ContractCall {
    pub fn op_name(&self) -> &'static str {
        match self {
            ContractCall::Deploy { .. } => "deploy",
            ContractCall::Mint { .. } => "mint",
            ContractCall::Transfer { .. } => "transfer",
            ContractCall::Trade { .. } => "trade",
            ContractCall::Burn { .. } => "burn",
            ContractCall::Lock { .. } => "lock",
            ContractCall::Unlock { .. } => "unlock",
            ContractCall::Activate { .. } => "activate",
            ContractCall::Discard { .. } => "discard",
            ContractCall::SetAttribute { .. } => "set_attribute",
            ContractCall::Reconfigure { .. } => "reconfigure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCode {
    NotAuthorized,
    NotOwner,
    UnknownToken,
    TokenExists,
    TokenLocked,
    TokenBurned,
    TokenPending,
    AlreadyBurned,
    WrongStatus,
    PolicyViolation,
    ContractExists,
    MalformedPayload,
}

impl RejectCode {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectCode::NotAuthorized => "not_authorized",
            RejectCode::NotOwner => "not_owner",
            RejectCode::UnknownToken => "unknown_token",
            RejectCode::TokenExists => "token_exists",
            RejectCode::TokenLocked => "token_locked",
            RejectCode::TokenBurned => "token_burned",
            RejectCode::TokenPending => "token_pending",
            RejectCode::AlreadyBurned => "already_burned",
            RejectCode::WrongStatus => "wrong_status",
            RejectCode::PolicyViolation => "policy_violation",
            RejectCode::ContractExists => "contract_exists",
            RejectCode::MalformedPayload => "malformed_payload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub code: RejectCode,
    pub reason: String,
}

impl Rejection {
    pub fn new(code: RejectCode, reason: impl Into<String>) -> Self {
        Self {
            code,
            reason: reason.into(),
        }
    }

    fn policy(reason: &str) -> Self {
        Self::new(RejectCode::PolicyViolation, reason)
    }

    fn simple(code: RejectCode) -> Self {
        let reason = match code {
            RejectCode::NotAuthorized => "caller is not authorized",
            RejectCode::NotOwner => "caller is not the owner",
            RejectCode::UnknownToken => "unknown token",
            RejectCode::TokenExists => "token exists",
            RejectCode::TokenLocked => "token locked",
            RejectCode::TokenBurned => "token burned",
            RejectCode::TokenPending => "token pending",
            RejectCode::AlreadyBurned => "already burned",
            RejectCode::WrongStatus => "wrong status",
            RejectCode::PolicyViolation => "policy violation",
            RejectCode::ContractExists => "contract exists",
            RejectCode::MalformedPayload => "malformed payload",
        };
        Self::new(code, reason)
    }
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.reason)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Minted,
    Transferred,
    Burned,
    AttributeSet,
    Locked,
    Unlocked,
    Activated,
    Discarded,
}

/// An event as produced by a handler, before the ledger stamps it with
/// chain, contract and sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub token_id: TokenId,
    pub kind: EventKind,
    pub detail: BTreeMap<String, String>,
}

impl Emitted {
    fn new(token_id: &TokenId, kind: EventKind) -> Self {
        Self {
            token_id: token_id.clone(),
            kind,
            detail: BTreeMap::new(),
        }
    }

    fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.detail.insert(key.to_owned(), value.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NftContract {
    pub address: ContractAddr,
    pub policy: ContractPolicy,
    pub resolution: ResolutionConfig,
    pub authority: Account,
    pub tokens: BTreeMap<TokenId, TokenState>,
    pub next_token_id: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown token {0}")]
pub struct UnknownToken(pub TokenId);

impl NftContract {
    pub fn new(
        address: ContractAddr,
        policy: ContractPolicy,
        resolution: ResolutionConfig,
        authority: Account,
    ) -> Self {
        Self {
            address,
            policy,
            resolution,
            authority,
            tokens: BTreeMap::new(),
            next_token_id: TokenId::one(),
        }
    }

    pub fn get_token(&self, token_id: &TokenId) -> Result<&TokenState, UnknownToken> {
        self.tokens
            .get(token_id)
            .ok_or_else(|| UnknownToken(token_id.clone()))
    }

    pub fn get_resolution(&self) -> &ResolutionConfig {
        &self.resolution
    }

    /// Runs one call. `seq` is the ledger sequence of the enclosing
    /// transaction. Deploy calls are handled by the ledger, not here.
    pub fn apply(
        &mut self,
        caller: &Account,
        call: &ContractCall,
        seq: u64,
    ) -> Result<Vec<Emitted>, Rejection> {
        match call {
            ContractCall::Deploy { .. } => Err(Rejection::simple(RejectCode::ContractExists)),
            ContractCall::Mint {
                token_id,
                owner,
                attributes,
                status,
            } => self.mint(caller, token_id, owner, attributes, *status),
            ContractCall::Transfer { token_id, from, to } => {
                self.move_token(caller, token_id, from, to, None)
            }
            ContractCall::Trade {
                token_id,
                from,
                to,
                payment,
            } => self.move_token(caller, token_id, from, to, Some(*payment)),
            ContractCall::Burn {
                token_id,
                forward_ref,
            } => self.burn(caller, token_id, forward_ref.as_ref()),
            ContractCall::Lock { token_id } => self.authority_transition(
                caller,
                token_id,
                TokenStatus::Active,
                TokenStatus::Locked,
                EventKind::Locked,
            ),
            ContractCall::Unlock { token_id } => self.authority_transition(
                caller,
                token_id,
                TokenStatus::Locked,
                TokenStatus::Active,
                EventKind::Unlocked,
            ),
            ContractCall::Activate { token_id } => self.authority_transition(
                caller,
                token_id,
                TokenStatus::Pending,
                TokenStatus::Active,
                EventKind::Activated,
            ),
            ContractCall::Discard { token_id } => self.discard(caller, token_id),
            ContractCall::SetAttribute {
                token_id,
                attributes,
            } => self.set_attribute(caller, token_id, attributes),
            ContractCall::Reconfigure { endpoint } => self.reconfigure(caller, endpoint, seq),
        }
    }

    fn token(&self, token_id: &TokenId) -> Result<&TokenState, Rejection> {
        self.tokens
            .get(token_id)
            .ok_or_else(|| Rejection::simple(RejectCode::UnknownToken))
    }

    fn token_mut(&mut self, token_id: &TokenId) -> &mut TokenState {
        self.tokens
            .get_mut(token_id)
            .expect("validated before mutation")
    }

    fn require_authority(&self, caller: &Account) -> Result<(), Rejection> {
        if caller == &self.authority {
            Ok(())
        } else {
            Err(Rejection::simple(RejectCode::NotAuthorized))
        }
    }

    fn mint(
        &mut self,
        caller: &Account,
        token_id: &TokenId,
        owner: &Account,
        attributes: &AttributeSet,
        status: MintStatus,
    ) -> Result<Vec<Emitted>, Rejection> {
        self.require_authority(caller)?;
        if self.tokens.contains_key(token_id) {
            return Err(Rejection::simple(RejectCode::TokenExists));
        }
        attributes.check_shape(&self.policy)?;
        if status == MintStatus::Pending && !self.policy.cross_chain {
            return Err(Rejection::policy(
                "pending mint requires cross-chain policy",
            ));
        }
        let status = match status {
            MintStatus::Active => TokenStatus::Active,
            MintStatus::Pending => TokenStatus::Pending,
        };
        self.tokens.insert(
            token_id.clone(),
            TokenState {
                token_id: token_id.clone(),
                owner: owner.clone(),
                attributes: attributes.clone(),
                status,
                forward_ref: None,
                burned_by: None,
            },
        );
        if *token_id >= self.next_token_id {
            self.next_token_id = token_id.next();
        }
        let mut ev = Emitted::new(token_id, EventKind::Minted)
            .with("owner", owner)
            .with("status", status_name(status));
        if let Some(uri) = &attributes.token_uri {
            ev = ev.with("token_uri", uri);
        }
        if let Some(h) = &attributes.metadata_hash {
            ev = ev.with("metadata_hash", h);
        }
        Ok(vec![ev])
    }

    fn move_token(
        &mut self,
        caller: &Account,
        token_id: &TokenId,
        from: &Account,
        to: &Account,
        payment: Option<u64>,
    ) -> Result<Vec<Emitted>, Rejection> {
        let token = self.token(token_id)?;
        match token.status {
            TokenStatus::Pending => return Err(Rejection::simple(RejectCode::TokenPending)),
            TokenStatus::Burned => return Err(Rejection::simple(RejectCode::TokenBurned)),
            _ => {}
        }
        if payment.is_some() && !self.policy.tradeable {
            return Err(Rejection::policy("zero-value token"));
        }
        if !self.policy.transferable {
            return Err(Rejection::policy("transfers disabled"));
        }
        if token.status == TokenStatus::Locked {
            return Err(Rejection::simple(RejectCode::TokenLocked));
        }
        if caller != &token.owner || from != &token.owner {
            return Err(Rejection::simple(RejectCode::NotOwner));
        }
        self.token_mut(token_id).owner = to.clone();
        let mut ev = Emitted::new(token_id, EventKind::Transferred)
            .with("from", from)
            .with("to", to);
        if let Some(p) = payment {
            ev = ev.with("payment", p);
        }
        Ok(vec![ev])
    }

    fn burn(
        &mut self,
        caller: &Account,
        token_id: &TokenId,
        forward_ref: Option<&NftId>,
    ) -> Result<Vec<Emitted>, Rejection> {
        let token = self.token(token_id)?;
        match token.status {
            TokenStatus::Pending => return Err(Rejection::simple(RejectCode::TokenPending)),
            TokenStatus::Burned => return Err(Rejection::simple(RejectCode::AlreadyBurned)),
            _ => {}
        }
        let locked = token.status == TokenStatus::Locked;
        if caller == &self.authority && locked {
            // Cross-chain leg: the authority burns its own lock and leaves a
            // forward reference to the destination token.
            if !self.policy.cross_chain {
                return Err(Rejection::policy("cross-chain transfers disabled"));
            }
            if forward_ref.is_none() {
                return Err(Rejection::policy("authority burn requires forward_ref"));
            }
        } else if caller == &token.owner {
            if locked {
                return Err(Rejection::simple(RejectCode::TokenLocked));
            }
            if forward_ref.is_some() {
                return Err(Rejection::policy(
                    "forward_ref reserved for cross-chain transfer",
                ));
            }
        } else if caller == &self.authority {
            return Err(Rejection::new(
                RejectCode::WrongStatus,
                "authority may only burn locked tokens",
            ));
        } else {
            return Err(Rejection::simple(RejectCode::NotAuthorized));
        }

        let t = self.token_mut(token_id);
        t.status = TokenStatus::Burned;
        t.forward_ref = forward_ref.cloned();
        t.burned_by = Some(caller.clone());
        let mut ev = Emitted::new(token_id, EventKind::Burned).with("burner", caller);
        if let Some(f) = forward_ref {
            ev = ev.with("forward_ref", f);
        }
        Ok(vec![ev])
    }

    fn authority_transition(
        &mut self,
        caller: &Account,
        token_id: &TokenId,
        from: TokenStatus,
        to: TokenStatus,
        kind: EventKind,
    ) -> Result<Vec<Emitted>, Rejection> {
        let token = self.token(token_id)?;
        self.require_authority(caller)?;
        if token.status != from {
            return Err(Rejection::new(
                RejectCode::WrongStatus,
                format!("expected {} token", status_name(from)),
            ));
        }
        self.token_mut(token_id).status = to;
        Ok(vec![Emitted::new(token_id, kind)])
    }

    fn discard(&mut self, caller: &Account, token_id: &TokenId) -> Result<Vec<Emitted>, Rejection> {
        let token = self.token(token_id)?;
        self.require_authority(caller)?;
        if token.status != TokenStatus::Pending {
            return Err(Rejection::new(
                RejectCode::WrongStatus,
                "expected pending token",
            ));
        }
        self.tokens.remove(token_id);
        Ok(vec![Emitted::new(token_id, EventKind::Discarded)])
    }

    fn set_attribute(
        &mut self,
        caller: &Account,
        token_id: &TokenId,
        attributes: &AttributeSet,
    ) -> Result<Vec<Emitted>, Rejection> {
        let token = self.token(token_id)?;
        self.require_authority(caller)?;
        match token.status {
            TokenStatus::Burned => return Err(Rejection::simple(RejectCode::TokenBurned)),
            TokenStatus::Locked => return Err(Rejection::simple(RejectCode::TokenLocked)),
            _ => {}
        }
        attributes.check_shape(&self.policy)?;
        self.token_mut(token_id).attributes = attributes.clone();
        let mut ev = Emitted::new(token_id, EventKind::AttributeSet);
        if let Some(uri) = &attributes.token_uri {
            ev = ev.with("token_uri", uri);
        }
        if let Some(h) = &attributes.metadata_hash {
            ev = ev.with("metadata_hash", h);
        }
        Ok(vec![ev])
    }

    fn reconfigure(
        &mut self,
        caller: &Account,
        endpoint: &str,
        seq: u64,
    ) -> Result<Vec<Emitted>, Rejection> {
        self.require_authority(caller)?;
        let old = std::mem::replace(
            &mut self.resolution.metadata_repo_endpoint,
            endpoint.to_owned(),
        );
        self.resolution.reconfig_log.push(ReconfigEntry {
            authorizer: caller.clone(),
            old,
            new: endpoint.to_owned(),
            seq,
        });
        Ok(Vec::new())
    }
}

pub fn status_name(status: TokenStatus) -> &'static str {
    match status {
        TokenStatus::Pending => "pending",
        TokenStatus::Active => "active",
        TokenStatus::Locked => "locked",
        TokenStatus::Burned => "burned",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::{make_nft_id, ContractAddr};
    use proptest::prelude::*;

    fn authority() -> Account {
        Account::new("engine")
    }

    fn contract(policy: ContractPolicy) -> NftContract {
        NftContract::new(
            ContractAddr::from_bytes(&[7u8; 20]),
            policy,
            ResolutionConfig::at_deploy("https://repo.example/c"),
            authority(),
        )
    }

    fn attrs_for(policy: &ContractPolicy) -> AttributeSet {
        if policy.hidden_metadata {
            AttributeSet::hashed("a".repeat(64).parse().unwrap())
        } else {
            AttributeSet::uri("https://metadata.human-one.xyz/1")
        }
    }

    fn minted(policy: ContractPolicy, status: MintStatus) -> NftContract {
        let mut c = contract(policy);
        let call = ContractCall::Mint {
            token_id: TokenId::one(),
            owner: "alice".into(),
            attributes: attrs_for(&policy),
            status,
        };
        c.apply(&authority(), &call, 0).unwrap();
        c
    }

    fn code(r: Result<Vec<Emitted>, Rejection>) -> Option<RejectCode> {
        r.err().map(|e| e.code)
    }

    #[test]
    fn mint_resolves_to_repository() {
        let c = minted(ContractPolicy::trade_only(), MintStatus::Active);
        let t = c.get_token(&TokenId::one()).unwrap();
        assert_eq!(t.status, TokenStatus::Active);
        assert_eq!(
            t.attributes.token_uri.as_deref(),
            Some("https://metadata.human-one.xyz/1")
        );
        assert!(c.get_token(&TokenId::from(9)).is_err());
    }

    #[test]
    fn duplicate_mint_rejected() {
        let mut c = minted(ContractPolicy::trade_only(), MintStatus::Active);
        let call = ContractCall::Mint {
            token_id: TokenId::one(),
            owner: "bob".into(),
            attributes: AttributeSet::uri("u"),
            status: MintStatus::Active,
        };
        let err = c.apply(&authority(), &call, 1).unwrap_err();
        assert_eq!(err.code, RejectCode::TokenExists);
        assert_eq!(err.reason, "token exists");
    }

    #[test]
    fn hidden_pattern_forbids_uri() {
        let mut c = contract(ContractPolicy::hidden_metadata());
        let call = ContractCall::Mint {
            token_id: TokenId::one(),
            owner: "alice".into(),
            attributes: AttributeSet::uri("https://x/1"),
            status: MintStatus::Active,
        };
        let err = c.apply(&authority(), &call, 0).unwrap_err();
        assert_eq!(err.reason, "hidden pattern forbids token_uri");
    }

    #[test]
    fn pending_requires_cross_chain_and_is_inert() {
        let mut c = contract(ContractPolicy::trade_only());
        let call = ContractCall::Mint {
            token_id: TokenId::one(),
            owner: "alice".into(),
            attributes: AttributeSet::uri("u"),
            status: MintStatus::Pending,
        };
        assert_eq!(
            code(c.apply(&authority(), &call, 0)),
            Some(RejectCode::PolicyViolation)
        );

        let mut c = minted(
            ContractPolicy::cross_chain_transferable(),
            MintStatus::Pending,
        );
        let t = ContractCall::Transfer {
            token_id: TokenId::one(),
            from: "alice".into(),
            to: "bob".into(),
        };
        assert_eq!(
            code(c.apply(&"alice".into(), &t, 1)),
            Some(RejectCode::TokenPending)
        );
        let a = ContractCall::Activate {
            token_id: TokenId::one(),
        };
        c.apply(&authority(), &a, 2).unwrap();
        assert_eq!(
            code(c.apply(&authority(), &a, 3)),
            Some(RejectCode::WrongStatus)
        );
    }

    #[test]
    fn zero_value_blocks_trade_and_transfer() {
        let mut c = minted(ContractPolicy::zero_value(false), MintStatus::Active);
        let trade = ContractCall::Trade {
            token_id: TokenId::one(),
            from: "alice".into(),
            to: "bob".into(),
            payment: 10,
        };
        let err = c.apply(&"alice".into(), &trade, 1).unwrap_err();
        assert_eq!(err.reason, "zero-value token");
        let tr = ContractCall::Transfer {
            token_id: TokenId::one(),
            from: "alice".into(),
            to: "bob".into(),
        };
        assert_eq!(
            c.apply(&"alice".into(), &tr, 2).unwrap_err().reason,
            "transfers disabled"
        );

        let mut movable = minted(ContractPolicy::zero_value(true), MintStatus::Active);
        movable.apply(&"alice".into(), &tr, 1).unwrap();
        assert_eq!(
            movable.get_token(&TokenId::one()).unwrap().owner,
            "bob".into()
        );
    }

    #[test]
    fn zero_payment_trade_accepted() {
        let mut c = minted(ContractPolicy::trade_only(), MintStatus::Active);
        let trade = ContractCall::Trade {
            token_id: TokenId::one(),
            from: "alice".into(),
            to: "bob".into(),
            payment: 0,
        };
        let ev = c.apply(&"alice".into(), &trade, 1).unwrap();
        assert_eq!(ev[0].detail["payment"], "0");
    }

    #[test]
    fn lock_blocks_owner_ops_and_unlock_restores() {
        let mut c = minted(
            ContractPolicy::cross_chain_transferable(),
            MintStatus::Active,
        );
        let id = TokenId::one();
        c.apply(
            &authority(),
            &ContractCall::Lock {
                token_id: id.clone(),
            },
            1,
        )
        .unwrap();
        let tr = ContractCall::Transfer {
            token_id: id.clone(),
            from: "alice".into(),
            to: "bob".into(),
        };
        assert_eq!(
            c.apply(&"alice".into(), &tr, 2).unwrap_err().reason,
            "token locked"
        );
        let burn = ContractCall::Burn {
            token_id: id.clone(),
            forward_ref: None,
        };
        assert_eq!(
            code(c.apply(&"alice".into(), &burn, 3)),
            Some(RejectCode::TokenLocked)
        );
        c.apply(
            &authority(),
            &ContractCall::Unlock {
                token_id: id.clone(),
            },
            4,
        )
        .unwrap();
        assert_eq!(c.get_token(&id).unwrap().status, TokenStatus::Active);
        c.apply(&"alice".into(), &tr, 5).unwrap();
    }

    #[test]
    fn burn_paths() {
        let mut c = minted(ContractPolicy::trade_only(), MintStatus::Active);
        let id = TokenId::one();
        let burn = ContractCall::Burn {
            token_id: id.clone(),
            forward_ref: None,
        };
        assert_eq!(
            code(c.apply(&"mallory".into(), &burn, 1)),
            Some(RejectCode::NotAuthorized)
        );
        let ev = c.apply(&"alice".into(), &burn, 2).unwrap();
        assert_eq!(ev[0].detail["burner"], "alice");
        assert_eq!(
            code(c.apply(&"alice".into(), &burn, 3)),
            Some(RejectCode::AlreadyBurned)
        );
        let lock = ContractCall::Lock {
            token_id: id.clone(),
        };
        assert_eq!(
            code(c.apply(&authority(), &lock, 4)),
            Some(RejectCode::WrongStatus)
        );
        let set = ContractCall::SetAttribute {
            token_id: id,
            attributes: AttributeSet::uri("u"),
        };
        assert_eq!(
            code(c.apply(&authority(), &set, 5)),
            Some(RejectCode::TokenBurned)
        );
    }

    #[test]
    fn authority_burn_with_forward_ref() {
        let mut c = minted(
            ContractPolicy::cross_chain_transferable(),
            MintStatus::Active,
        );
        let id = TokenId::one();
        let dest = make_nft_id("sim:b", "0x0000000000000000000000000000000000000002", 1).unwrap();
        let burn = ContractCall::Burn {
            token_id: id.clone(),
            forward_ref: Some(dest.clone()),
        };
        assert_eq!(
            code(c.apply(&authority(), &burn, 1)),
            Some(RejectCode::WrongStatus)
        );
        c.apply(
            &authority(),
            &ContractCall::Lock {
                token_id: id.clone(),
            },
            2,
        )
        .unwrap();
        c.apply(&authority(), &burn, 3).unwrap();
        let t = c.get_token(&id).unwrap();
        assert_eq!(t.status, TokenStatus::Burned);
        assert_eq!(t.forward_ref.as_ref(), Some(&dest));
    }

    #[test]
    fn owner_burn_may_not_carry_forward_ref() {
        let mut c = minted(
            ContractPolicy::cross_chain_transferable(),
            MintStatus::Active,
        );
        let dest = make_nft_id("sim:b", "0x0000000000000000000000000000000000000002", 1).unwrap();
        let burn = ContractCall::Burn {
            token_id: TokenId::one(),
            forward_ref: Some(dest),
        };
        assert_eq!(
            code(c.apply(&"alice".into(), &burn, 1)),
            Some(RejectCode::PolicyViolation)
        );
    }

    #[test]
    fn set_attribute_needs_authority() {
        let mut c = minted(ContractPolicy::hidden_metadata(), MintStatus::Active);
        let new_hash: HashDigest = "b".repeat(64).parse().unwrap();
        let set = ContractCall::SetAttribute {
            token_id: TokenId::one(),
            attributes: AttributeSet::hashed(new_hash.clone()),
        };
        assert_eq!(
            code(c.apply(&"alice".into(), &set, 1)),
            Some(RejectCode::NotAuthorized)
        );
        c.apply(&authority(), &set, 2).unwrap();
        assert_eq!(
            c.get_token(&TokenId::one())
                .unwrap()
                .attributes
                .metadata_hash,
            Some(new_hash)
        );
    }

    #[test]
    fn reconfigure_is_logged() {
        let mut c = contract(ContractPolicy::trade_only());
        assert!(c
            .apply(
                &"mallory".into(),
                &ContractCall::Reconfigure {
                    endpoint: "x".into()
                },
                0
            )
            .is_err());
        c.apply(
            &authority(),
            &ContractCall::Reconfigure {
                endpoint: "https://new".into(),
            },
            4,
        )
        .unwrap();
        let log = &c.get_resolution().reconfig_log;
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].authorizer, authority());
        assert_eq!(log[0].old, "https://repo.example/c");
        assert_eq!(log[0].seq, 4);
    }

    #[test]
    fn payload_field_names_are_stable() {
        let call = ContractCall::Trade {
            token_id: TokenId::from(3),
            from: "a".into(),
            to: "b".into(),
            payment: 5,
        };
        let bytes = crate::canon::to_canonical_bytes(&call);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            r#"{"from":"a","op":"trade","payment":5,"to":"b","token_id":"3"}"#
        );
    }

    fn allowed(from: TokenStatus, to: TokenStatus) -> bool {
        use TokenStatus::*;
        matches!(
            (from, to),
            (Pending, Active)
                | (Active, Locked)
                | (Locked, Active)
                | (Active, Burned)
                | (Locked, Burned)
        )
    }

    fn arb_call() -> impl Strategy<Value = (u8, ContractCall)> {
        let id = || (1u64..3).prop_map(TokenId::from);
        let who = prop_oneof![Just(0u8), Just(1u8), Just(2u8)];
        let dest = make_nft_id("sim:b", "0x0000000000000000000000000000000000000002", 1).unwrap();
        prop_oneof![
            (who.clone(), id()).prop_map(|(w, t)| (
                w,
                ContractCall::Transfer {
                    token_id: t,
                    from: "alice".into(),
                    to: "bob".into()
                }
            )),
            (who.clone(), id()).prop_map(|(w, t)| (
                w,
                ContractCall::Transfer {
                    token_id: t,
                    from: "bob".into(),
                    to: "alice".into()
                }
            )),
            (who.clone(), id(), any::<u8>()).prop_map(|(w, t, p)| (
                w,
                ContractCall::Trade {
                    token_id: t,
                    from: "alice".into(),
                    to: "bob".into(),
                    payment: p as u64
                }
            )),
            (who.clone(), id(), any::<bool>()).prop_map(move |(w, t, f)| (
                w,
                ContractCall::Burn {
                    token_id: t,
                    forward_ref: f.then(|| dest.clone())
                }
            )),
            (who.clone(), id()).prop_map(|(w, t)| (w, ContractCall::Lock { token_id: t })),
            (who.clone(), id()).prop_map(|(w, t)| (w, ContractCall::Unlock { token_id: t })),
            (who.clone(), id()).prop_map(|(w, t)| (w, ContractCall::Activate { token_id: t })),
            (who, id()).prop_map(|(w, t)| (
                w,
                ContractCall::SetAttribute {
                    token_id: t,
                    attributes: AttributeSet::uri("u2")
                }
            )),
        ]
    }

    proptest! {
        #[test]
        fn random_ops_respect_state_machine(
            ops in proptest::collection::vec(arb_call(), 1..40),
            pending in any::<bool>(),
        ) {
            let policy = ContractPolicy::cross_chain_transferable();
            let mut c = minted(policy, if pending { MintStatus::Pending } else { MintStatus::Active });
            let t2 = ContractCall::Mint {
                token_id: TokenId::from(2), owner: "bob".into(),
                attributes: AttributeSet::uri("u"), status: MintStatus::Active };
            c.apply(&authority(), &t2, 0).unwrap();
            let callers = [Account::new("alice"), Account::new("bob"), authority()];
            for (i, (who, call)) in ops.into_iter().enumerate() {
                let before = c.clone();
                let res = c.apply(&callers[who as usize], &call, i as u64 + 1);
                match res {
                    Err(_) => prop_assert_eq!(&c, &before),
                    Ok(_) => {
                        for (id, old) in &before.tokens {
                            let new = &c.tokens[id];
                            if old.status != new.status {
                                prop_assert!(allowed(old.status, new.status),
                                    "{:?} -> {:?}", old.status, new.status);
                            }
                            if old.status == TokenStatus::Burned {
                                prop_assert_eq!(old, new);
                            }
                        }
                    }
                }
            }
        }
    }
}
