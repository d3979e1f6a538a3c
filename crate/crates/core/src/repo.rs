//! Off-chain metadata repository.
//!
//! Every record carries both the off-chain [`AssetId`] and the on-chain
//! [`NftId`] it is bound to, plus the history of every NFT that ever
//! represented the asset. Versions are append-only and each stored version
//! keeps the digest computed when it was written. Hidden records are only
//! readable with an unrevoked credential whose scope covers the asset.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canon::{self, to_canonical_bytes};
use crate::ids::{Account, AssetId, ChainId, ContractAddr, HashDigest, NftId};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

pub type Content = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RepoError {
    #[error("caller {0} is not authorized")]
    NotAuthorized(Account),
    #[error("{nft} is already bound to {bound_to}")]
    BindingConflict { nft: NftId, bound_to: AssetId },
    #[error("record not found: {0}")]
    NotFound(String),
    #[error("access denied to {0}")]
    AccessDenied(AssetId),
    #[error("unknown credential")]
    UnknownCredential,
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Public,
    Hidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryReason {
    Deployed,
    CrossChainMoved,
    Burned,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub nft_id: NftId,
    pub reason: HistoryReason,
    /// Record version at which the entry was appended.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataRecord {
    pub asset_id: AssetId,
    pub nft_id: NftId,
    pub nft_history: Vec<HistoryEntry>,
    pub content: Content,
    pub owner: Account,
    pub version: u64,
    pub visibility: Visibility,
}

impl MetadataRecord {
    /// True once the current NFT has been burned without a successor.
    pub fn is_terminal(&self) -> bool {
        self.nft_history
            .last()
            .is_some_and(|e| e.reason == HistoryReason::Burned)
    }

    pub fn has_bound(&self, nft: &NftId) -> bool {
        self.nft_history.iter().any(|e| &e.nft_id == nft)
    }
}

/// Canonical JSON bytes of a record; the input to [`metadata_hash`].
pub fn canonical_serialize(record: &MetadataRecord) -> Vec<u8> {
    to_canonical_bytes(record)
}

pub fn metadata_hash(record: &MetadataRecord) -> HashDigest {
    canon::sha256(&canonical_serialize(record))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredVersion {
    pub record: MetadataRecord,
    pub digest: HashDigest,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CredentialScope {
    Namespace(String),
    Asset(AssetId),
}

impl CredentialScope {
    pub fn covers(&self, asset: &AssetId) -> bool {
        match self {
            CredentialScope::Namespace(ns) => ns == asset.namespace(),
            CredentialScope::Asset(a) => a == asset,
        }
    }

    fn namespace(&self) -> &str {
        match self {
            CredentialScope::Namespace(ns) => ns,
            CredentialScope::Asset(a) => a.namespace(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub token: String,
    pub scope: CredentialScope,
    pub issued_by: Account,
    pub revoked: bool,
}

/// New content for a record.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordInput {
    pub content: Content,
    pub nft_id: NftId,
    pub visibility: Visibility,
    pub owner: Account,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordView {
    pub record: MetadataRecord,
    pub digest: HashDigest,
    /// The record has newer versions than this one.
    pub stale: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum RecordRef {
    Asset(AssetId),
    Nft(NftId),
}

/// Where `token_uri`s under an endpoint resolve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub chain_id: ChainId,
    pub contract_addr: ContractAddr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetadataRepo {
    pub endpoint: String,
    pub custody_endpoint: String,
    pub sync_authority: Option<Account>,
    pub providers: BTreeMap<String, Account>,
    pub records: BTreeMap<AssetId, Vec<StoredVersion>>,
    pub routes: BTreeMap<String, Route>,
    pub credentials: BTreeMap<String, Credential>,
    pub credential_seed: u64,
    pub credentials_issued: u64,
    #[serde(skip)]
    bindings: BTreeMap<NftId, AssetId>,
    #[serde(skip)]
    digests: BTreeMap<HashDigest, (AssetId, u64)>,
}

#[derive(Serialize, Deserialize)]
struct RepoSnapshot {
    format_version: u32,
    repo: MetadataRepo,
}

/// Creates an empty repository that serves `endpoint` and talks to the
/// custody service at `custody_endpoint`.
pub fn init_repo(custody_endpoint: &str, endpoint: &str) -> MetadataRepo {
    MetadataRepo {
        endpoint: endpoint.to_owned(),
        custody_endpoint: custody_endpoint.to_owned(),
        sync_authority: None,
        providers: BTreeMap::new(),
        records: BTreeMap::new(),
        routes: BTreeMap::new(),
        credentials: BTreeMap::new(),
        credential_seed: 0,
        credentials_issued: 0,
        bindings: BTreeMap::new(),
        digests: BTreeMap::new(),
    }
}

impl MetadataRepo {
    pub fn record_count(&self) -> usize {
        self.records.len()
    }

    pub fn set_sync_authority(&mut self, account: Account) {
        self.sync_authority = Some(account);
    }

    pub fn set_credential_seed(&mut self, seed: u64) {
        self.credential_seed = seed;
    }

    /// Claims `namespace` for `account`. Re-claiming by the same account is a
    /// no-op.
    pub fn register_provider(
        &mut self,
        namespace: &str,
        account: &Account,
    ) -> Result<(), RepoError> {
        match self.providers.get(namespace) {
            Some(existing) if existing != account => Err(RepoError::NotAuthorized(account.clone())),
            Some(_) => Ok(()),
            None => {
                self.providers.insert(namespace.to_owned(), account.clone());
                Ok(())
            }
        }
    }

    pub fn provider_of(&self, namespace: &str) -> Option<&Account> {
        self.providers.get(namespace)
    }

    fn require_provider(&self, namespace: &str, caller: &Account) -> Result<(), RepoError> {
        if self.providers.get(namespace) == Some(caller) {
            Ok(())
        } else {
            Err(RepoError::NotAuthorized(caller.clone()))
        }
    }

    fn require_sync_authority(&self, caller: &Account) -> Result<(), RepoError> {
        if self.sync_authority.as_ref() == Some(caller) {
            Ok(())
        } else {
            Err(RepoError::NotAuthorized(caller.clone()))
        }
    }

    pub fn register_route(
        &mut self,
        endpoint: &str,
        route: Route,
        caller: &Account,
    ) -> Result<(), RepoError> {
        self.require_sync_authority(caller)?;
        self.routes.insert(endpoint.to_owned(), route);
        Ok(())
    }

    fn check_binding(&self, nft: &NftId, asset: &AssetId) -> Result<(), RepoError> {
        match self.bindings.get(nft) {
            Some(bound) if bound != asset => Err(RepoError::BindingConflict {
                nft: nft.clone(),
                bound_to: bound.clone(),
            }),
            _ => Ok(()),
        }
    }

    fn store(&mut self, record: MetadataRecord) -> (u64, HashDigest) {
        let digest = metadata_hash(&record);
        let version = record.version;
        for e in &record.nft_history {
            self.bindings
                .insert(e.nft_id.clone(), record.asset_id.clone());
        }
        self.digests
            .insert(digest.clone(), (record.asset_id.clone(), version));
        self.records
            .entry(record.asset_id.clone())
            .or_default()
            .push(StoredVersion {
                record,
                digest: digest.clone(),
            });
        (version, digest)
    }

    /// Writes a new version. The first put binds `input.nft_id`; later puts
    /// must name the currently bound NFT (rebinding goes through
    /// [`append_history`](Self::append_history)).
    pub fn put_record(
        &mut self,
        asset_id: &AssetId,
        input: RecordInput,
        caller: &Account,
    ) -> Result<(u64, HashDigest), RepoError> {
        self.require_provider(asset_id.namespace(), caller)?;
        self.check_binding(&input.nft_id, asset_id)?;
        let record = match self.current(asset_id) {
            Some(prev) => {
                if prev.nft_id != input.nft_id {
                    return Err(RepoError::BindingConflict {
                        nft: input.nft_id,
                        bound_to: asset_id.clone(),
                    });
                }
                MetadataRecord {
                    asset_id: asset_id.clone(),
                    nft_id: input.nft_id,
                    nft_history: prev.nft_history.clone(),
                    content: input.content,
                    owner: input.owner,
                    version: prev.version + 1,
                    visibility: input.visibility,
                }
            }
            None => MetadataRecord {
                asset_id: asset_id.clone(),
                nft_history: vec![HistoryEntry {
                    nft_id: input.nft_id.clone(),
                    reason: HistoryReason::Deployed,
                    seq: 1,
                }],
                nft_id: input.nft_id,
                content: input.content,
                owner: input.owner,
                version: 1,
                visibility: input.visibility,
            },
        };
        Ok(self.store(record))
    }

    /// New version of an existing record written by the sync authority:
    /// content and owner change, binding and visibility stay.
    pub fn sync_record(
        &mut self,
        asset_id: &AssetId,
        content: Content,
        owner: Account,
        caller: &Account,
    ) -> Result<(u64, HashDigest), RepoError> {
        self.require_sync_authority(caller)?;
        let mut next = self
            .current(asset_id)
            .ok_or_else(|| RepoError::NotFound(asset_id.to_string()))?
            .clone();
        next.version += 1;
        next.content = content;
        next.owner = owner;
        Ok(self.store(next))
    }

    /// Extends the NFT history. `CrossChainMoved` rebinds the record to the
    /// entry's NFT; `Burned` must name the current NFT and marks it terminal.
    pub fn append_history(
        &mut self,
        asset_id: &AssetId,
        nft_id: &NftId,
        reason: HistoryReason,
        caller: &Account,
    ) -> Result<u64, RepoError> {
        self.require_sync_authority(caller)?;
        let prev = self
            .current(asset_id)
            .ok_or_else(|| RepoError::NotFound(asset_id.to_string()))?
            .clone();
        let mut next = prev.clone();
        next.version += 1;
        match reason {
            HistoryReason::CrossChainMoved => {
                self.check_binding(nft_id, asset_id)?;
                next.nft_id = nft_id.clone();
            }
            HistoryReason::Burned | HistoryReason::Deployed => {
                if &prev.nft_id != nft_id {
                    return Err(RepoError::BindingConflict {
                        nft: nft_id.clone(),
                        bound_to: asset_id.clone(),
                    });
                }
            }
        }
        next.nft_history.push(HistoryEntry {
            nft_id: nft_id.clone(),
            reason,
            seq: next.version,
        });
        Ok(self.store(next).0)
    }

    /// Latest version, ignoring access control. Internal and audit use only.
    pub fn current(&self, asset_id: &AssetId) -> Option<&MetadataRecord> {
        self.records
            .get(asset_id)
            .and_then(|v| v.last())
            .map(|s| &s.record)
    }

    pub fn current_stored(&self, asset_id: &AssetId) -> Option<&StoredVersion> {
        self.records.get(asset_id).and_then(|v| v.last())
    }

    /// Asset an NFT is (or was) bound to.
    pub fn asset_for(&self, nft: &NftId) -> Option<&AssetId> {
        self.bindings.get(nft)
    }

    fn check_access(
        &self,
        record: &MetadataRecord,
        credential: Option<&str>,
    ) -> Result<(), RepoError> {
        if record.visibility == Visibility::Public {
            return Ok(());
        }
        let ok = credential
            .and_then(|t| self.credentials.get(t))
            .is_some_and(|c| !c.revoked && c.scope.covers(&record.asset_id));
        if ok {
            Ok(())
        } else {
            Err(RepoError::AccessDenied(record.asset_id.clone()))
        }
    }

    fn view(
        &self,
        asset: &AssetId,
        version: u64,
        credential: Option<&str>,
    ) -> Result<RecordView, RepoError> {
        let versions = self
            .records
            .get(asset)
            .ok_or_else(|| RepoError::NotFound(asset.to_string()))?;
        let stored = versions
            .get(version.wrapping_sub(1) as usize)
            .ok_or_else(|| RepoError::NotFound(format!("{asset} v{version}")))?;
        self.check_access(&stored.record, credential)?;
        Ok(RecordView {
            record: stored.record.clone(),
            digest: stored.digest.clone(),
            stale: version != versions.len() as u64,
        })
    }

    pub fn get_record(
        &self,
        reference: &RecordRef,
        credential: Option<&str>,
    ) -> Result<RecordView, RepoError> {
        let asset = match reference {
            RecordRef::Asset(a) => a,
            RecordRef::Nft(n) => self
                .bindings
                .get(n)
                .ok_or_else(|| RepoError::NotFound(n.to_string()))?,
        };
        let latest = self
            .records
            .get(asset)
            .map(|v| v.len() as u64)
            .ok_or_else(|| RepoError::NotFound(asset.to_string()))?;
        self.view(asset, latest, credential)
    }

    pub fn get_version(
        &self,
        asset: &AssetId,
        version: u64,
        credential: Option<&str>,
    ) -> Result<RecordView, RepoError> {
        self.view(asset, version, credential)
    }

    /// Resolves a digest to the exact version it was computed from. Superseded
    /// versions resolve too, flagged `stale`.
    pub fn resolve_hash(
        &self,
        digest: &HashDigest,
        credential: Option<&str>,
    ) -> Result<RecordView, RepoError> {
        let (asset, version) = self
            .digests
            .get(digest)
            .ok_or_else(|| RepoError::NotFound(digest.to_string()))?;
        self.view(asset, *version, credential)
    }

    /// Maps a `token_uri` to the NFT it names, via the registered routes.
    pub fn route_uri(&self, uri: &str) -> Option<NftId> {
        let (endpoint, token) = uri.rsplit_once('/')?;
        let route = self.routes.get(endpoint)?;
        Some(NftId::new(
            route.chain_id.clone(),
            route.contract_addr.clone(),
            token.parse().ok()?,
        ))
    }

    pub fn resolve_uri(
        &self,
        uri: &str,
        credential: Option<&str>,
    ) -> Result<RecordView, RepoError> {
        let nft = self
            .route_uri(uri)
            .ok_or_else(|| RepoError::NotFound(uri.to_owned()))?;
        self.get_record(&RecordRef::Nft(nft), credential)
    }

    pub fn issue_credential(
        &mut self,
        scope: CredentialScope,
        caller: &Account,
    ) -> Result<String, RepoError> {
        self.require_provider(scope.namespace(), caller)?;
        self.credentials_issued += 1;
        let material = format!(
            "credential/{}/{}/{}",
            self.credential_seed, self.credentials_issued, caller
        );
        let token = canon::sha256(material.as_bytes()).hex()[..32].to_owned();
        self.credentials.insert(
            token.clone(),
            Credential {
                token: token.clone(),
                scope,
                issued_by: caller.clone(),
                revoked: false,
            },
        );
        Ok(token)
    }

    pub fn revoke_credential(&mut self, token: &str, caller: &Account) -> Result<(), RepoError> {
        let cred = self
            .credentials
            .get(token)
            .ok_or(RepoError::UnknownCredential)?;
        self.require_provider(cred.scope.namespace(), caller)?;
        self.credentials
            .get_mut(token)
            .expect("checked above")
            .revoked = true;
        Ok(())
    }

    /// Recomputes the binding and digest indexes from stored versions.
    pub fn rebuild_indexes(&mut self) {
        self.bindings.clear();
        self.digests.clear();
        for (asset, versions) in &self.records {
            for v in versions {
                for e in &v.record.nft_history {
                    self.bindings.insert(e.nft_id.clone(), asset.clone());
                }
                self.digests
                    .insert(v.digest.clone(), (asset.clone(), v.record.version));
            }
        }
    }

    pub fn snapshot(&self) -> Vec<u8> {
        to_canonical_bytes(&RepoSnapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            repo: self.clone(),
        })
    }

    pub fn restore(bytes: &[u8]) -> Result<MetadataRepo, RepoError> {
        let snap: RepoSnapshot =
            serde_json::from_slice(bytes).map_err(|e| RepoError::CorruptSnapshot(e.to_string()))?;
        if snap.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(RepoError::CorruptSnapshot(format!(
                "unsupported format_version {}",
                snap.format_version
            )));
        }
        let mut repo = snap.repo;
        repo.rebuild_indexes();
        Ok(repo)
    }
}
