//! Bilateral synchronization between custody, the metadata repository and the
//! chains.
//!
//! The engine is the only writer that spans services. Multi-step operations
//! (asset deploys and cross-chain transfers) are journaled before each action
//! so that [`SyncEngine::recover`] can finish them after a crash.

pub mod journal;
mod transfer;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{audit_world, Violation};
use crate::contract::{
    AttributeSet, ContractCall, ContractPolicy, EventKind, MintStatus, Rejection, TokenStatus,
};
use crate::custody::{BurnEvidence, Custody, CustodyError};
use crate::ids::{Account, AssetId, ChainId, ContractAddr, NftId};
use crate::ledger::{ChainEvent, Ledger, LedgerError, TxEnvelope};
use crate::repo::{init_repo, Content, HistoryReason, RecordInput, RepoError, Route, Visibility};
use crate::world::{World, WORLD_FORMAT_VERSION};

use journal::{DeployJob, DeployPhase, DeployStep, JournalCorrupt, JournalEntry, JournalRecord};

/// Where [`SyncEngine::arm`] can make the engine stop as if the process died.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CrashPoint {
    #[serde(rename = "xchain.after_started")]
    XchainAfterStarted,
    #[serde(rename = "xchain.after_source_locked")]
    XchainAfterSourceLocked,
    #[serde(rename = "xchain.after_dest_pending")]
    XchainAfterDestPending,
    #[serde(rename = "xchain.after_source_burned")]
    XchainAfterSourceBurned,
    #[serde(rename = "xchain.after_dest_activated")]
    XchainAfterDestActivated,
    #[serde(rename = "deploy.after_staged")]
    DeployAfterStaged,
    #[serde(rename = "deploy.after_record")]
    DeployAfterRecord,
    #[serde(rename = "deploy.after_mint")]
    DeployAfterMint,
    #[serde(rename = "deploy.after_correlated")]
    DeployAfterCorrelated,
}

impl CrashPoint {
    pub const TRANSFER: [CrashPoint; 5] = [
        CrashPoint::XchainAfterStarted,
        CrashPoint::XchainAfterSourceLocked,
        CrashPoint::XchainAfterDestPending,
        CrashPoint::XchainAfterSourceBurned,
        CrashPoint::XchainAfterDestActivated,
    ];

    pub const DEPLOY: [CrashPoint; 4] = [
        CrashPoint::DeployAfterStaged,
        CrashPoint::DeployAfterRecord,
        CrashPoint::DeployAfterMint,
        CrashPoint::DeployAfterCorrelated,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CrashPoint::XchainAfterStarted => "xchain.after_started",
            CrashPoint::XchainAfterSourceLocked => "xchain.after_source_locked",
            CrashPoint::XchainAfterDestPending => "xchain.after_dest_pending",
            CrashPoint::XchainAfterSourceBurned => "xchain.after_source_burned",
            CrashPoint::XchainAfterDestActivated => "xchain.after_dest_activated",
            CrashPoint::DeployAfterStaged => "deploy.after_staged",
            CrashPoint::DeployAfterRecord => "deploy.after_record",
            CrashPoint::DeployAfterMint => "deploy.after_mint",
            CrashPoint::DeployAfterCorrelated => "deploy.after_correlated",
        }
    }

    fn after_deploy_phase(phase: DeployPhase) -> Option<CrashPoint> {
        match phase {
            DeployPhase::Staged => Some(CrashPoint::DeployAfterStaged),
            DeployPhase::RecordPut => Some(CrashPoint::DeployAfterRecord),
            DeployPhase::TokenMinted => Some(CrashPoint::DeployAfterMint),
            DeployPhase::Correlated => Some(CrashPoint::DeployAfterCorrelated),
            DeployPhase::Committed => None,
        }
    }
}

impl fmt::Display for CrashPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown crash point {0:?}")]
pub struct UnknownCrashPoint(pub String);

impl FromStr for CrashPoint {
    type Err = UnknownCrashPoint;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CrashPoint::TRANSFER
            .iter()
            .chain(CrashPoint::DEPLOY.iter())
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| UnknownCrashPoint(s.to_owned()))
    }
}

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("service initialization out of order: {0}")]
    OrderViolation(String),
    #[error("asset {0} is not under custody")]
    NotUnderCustody(AssetId),
    #[error("asset {0} is already bound to an NFT")]
    AssetAlreadyBound(AssetId),
    #[error("caller {0} is not authorized")]
    NotAuthorized(Account),
    #[error("asset {0} has no live NFT")]
    NotBound(AssetId),
    #[error("{0} is not managed by the engine")]
    Unmanaged(NftId),
    #[error("unknown token {0}")]
    UnknownToken(NftId),
    #[error("policy violation: {0}")]
    PolicyViolation(String),
    #[error("token {nft} is {status}, expected active")]
    NotActive { nft: NftId, status: String },
    #[error("asset {0} already has a transfer in progress")]
    TransferInProgress(AssetId),
    #[error("transfer session {session} reverted: {reason}")]
    TransferReverted { session: u64, reason: String },
    #[error("{op} rejected: {rejection}")]
    TxRejected { op: String, rejection: Rejection },
    #[error(transparent)]
    JournalCorrupt(#[from] JournalCorrupt),
    #[error("crashed at {0}")]
    Crashed(CrashPoint),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error(transparent)]
    Custody(#[from] CustodyError),
    #[error("corrupt world snapshot: {0}")]
    CorruptSnapshot(String),
}

impl SyncError {
    /// Stable short name for traces and summaries.
    pub fn code(&self) -> &'static str {
        match self {
            SyncError::OrderViolation(_) => "order_violation",
            SyncError::NotUnderCustody(_) => "not_under_custody",
            SyncError::AssetAlreadyBound(_) => "asset_already_bound",
            SyncError::NotAuthorized(_) => "not_authorized",
            SyncError::NotBound(_) => "not_bound",
            SyncError::Unmanaged(_) => "unmanaged",
            SyncError::UnknownToken(_) => "unknown_token",
            SyncError::PolicyViolation(_) => "policy_violation",
            SyncError::NotActive { .. } => "not_active",
            SyncError::TransferInProgress(_) => "transfer_in_progress",
            SyncError::TransferReverted { .. } => "transfer_reverted",
            SyncError::TxRejected { .. } => "tx_rejected",
            SyncError::JournalCorrupt(_) => "journal_corrupt",
            SyncError::Crashed(_) => "crashed",
            SyncError::Ledger(_) => "ledger",
            SyncError::Repo(_) => "repo",
            SyncError::Custody(_) => "custody",
            SyncError::CorruptSnapshot(_) => "corrupt_snapshot",
        }
    }
}

/// One service initialization step. Custody comes first, then the
/// repository, then any number of contracts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "service", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitStep {
    Custody {
        endpoint: String,
    },
    Repo {
        endpoint: String,
    },
    Contract {
        chain: ChainId,
        policy: ContractPolicy,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<ContractAddr>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServicesConfig {
    pub authority: Account,
    pub steps: Vec<InitStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManagedContract {
    pub chain_id: ChainId,
    pub addr: ContractAddr,
    pub policy: ContractPolicy,
    pub endpoint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContractRef {
    pub chain_id: ChainId,
    pub contract_addr: ContractAddr,
}

/// Engine-side link between an asset and one NFT. A cross-chain move retires
/// the old correlation and creates a new one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correlation {
    pub asset_id: AssetId,
    pub nft_id: NftId,
    pub metadata_version: u64,
    pub contract_ref: ContractRef,
    pub live: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncState {
    pub authority: Account,
    pub contracts: Vec<ManagedContract>,
    pub correlations: Vec<Correlation>,
    pub journal: Vec<JournalEntry>,
    pub cursors: BTreeMap<ChainId, u64>,
    /// Highest custody notification seq consumed, per asset.
    pub custody_seen: BTreeMap<AssetId, u64>,
    pub next_journal_seq: u64,
    pub next_session: u64,
    pub next_job: u64,
}

impl SyncState {
    pub fn live_correlation(&self, asset: &AssetId) -> Option<&Correlation> {
        self.correlations
            .iter()
            .find(|c| c.live && &c.asset_id == asset)
    }

    pub fn live_for_nft(&self, nft: &NftId) -> Option<&Correlation> {
        self.correlations
            .iter()
            .find(|c| c.live && &c.nft_id == nft)
    }

    pub fn find_contract(
        &self,
        chain: &ChainId,
        policy: &ContractPolicy,
    ) -> Option<&ManagedContract> {
        self.contracts
            .iter()
            .find(|c| &c.chain_id == chain && &c.policy == policy)
    }
}

/// What the engine did in response to one input; goes into traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncAction {
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_id: Option<AssetId>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl SyncAction {
    fn new(action: &str, asset: Option<&AssetId>, detail: impl Into<String>) -> Self {
        Self {
            action: action.to_owned(),
            asset_id: asset.cloned(),
            detail: detail.into(),
        }
    }
}

pub struct SyncEngine {
    world: World,
    armed: Option<CrashPoint>,
    audit_each_tx: bool,
    tx_audits: u64,
    tx_violations: BTreeSet<Violation>,
}

/// Brings up custody, then the repository, then the listed contracts, and
/// hands back an engine that owns all of them.
pub fn initialize_services(
    ledger: Ledger,
    config: ServicesConfig,
) -> Result<SyncEngine, SyncError> {
    let mut custody_ep = None;
    let mut repo_ep = None;
    for step in &config.steps {
        match step {
            InitStep::Custody { endpoint } => {
                if custody_ep.is_some() {
                    return Err(SyncError::OrderViolation(
                        "custody initialized twice".into(),
                    ));
                }
                if repo_ep.is_some() {
                    return Err(SyncError::OrderViolation(
                        "repository before custody".into(),
                    ));
                }
                custody_ep = Some(endpoint.clone());
            }
            InitStep::Repo { endpoint } => {
                if repo_ep.is_some() {
                    return Err(SyncError::OrderViolation(
                        "repository initialized twice".into(),
                    ));
                }
                if custody_ep.is_none() {
                    return Err(SyncError::OrderViolation(
                        "repository before custody".into(),
                    ));
                }
                repo_ep = Some(endpoint.clone());
            }
            InitStep::Contract { chain, .. } => {
                if repo_ep.is_none() {
                    return Err(SyncError::OrderViolation(format!(
                        "contract on {chain} before repository"
                    )));
                }
                ledger.chain(chain)?;
            }
        }
    }
    let (Some(custody_ep), Some(repo_ep)) = (custody_ep, repo_ep) else {
        return Err(SyncError::OrderViolation(
            "custody and repository are both required".into(),
        ));
    };

    let authority = config.authority.clone();
    let mut custody = Custody::new(&custody_ep);
    custody.set_engine(authority.clone());
    let mut repo = init_repo(&custody_ep, &repo_ep);
    repo.set_sync_authority(authority.clone());
    let cursors = ledger
        .chains
        .iter()
        .map(|(id, c)| (id.clone(), c.height))
        .collect();
    let world = World {
        format_version: WORLD_FORMAT_VERSION,
        ledger,
        repo,
        custody,
        sync: SyncState {
            authority,
            contracts: Vec::new(),
            correlations: Vec::new(),
            journal: Vec::new(),
            cursors,
            custody_seen: BTreeMap::new(),
            next_journal_seq: 0,
            next_session: 1,
            next_job: 1,
        },
    };
    let mut engine = SyncEngine::from_world(world);
    for step in config.steps {
        if let InitStep::Contract {
            chain,
            policy,
            endpoint,
            address,
        } = step
        {
            engine.deploy_contract(&chain, policy, endpoint, address)?;
        }
    }
    Ok(engine)
}

impl SyncEngine {
    pub fn from_world(world: World) -> Self {
        Self {
            world,
            armed: None,
            audit_each_tx: false,
            tx_audits: 0,
            tx_violations: BTreeSet::new(),
        }
    }

    /// Restarts from a world snapshot. `journal` (JSON lines) replaces the
    /// snapshot's journal when the two were persisted separately.
    pub fn restore(bytes: &[u8], journal: Option<&str>) -> Result<Self, SyncError> {
        let mut world = World::restore(bytes).map_err(|e| SyncError::CorruptSnapshot(e.0))?;
        if let Some(text) = journal {
            world.sync.journal = journal::from_lines(text)?;
            world.sync.next_journal_seq = world.sync.journal.last().map_or(0, |e| e.seq + 1);
        }
        Ok(Self::from_world(world))
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    /// Direct access for fault seeding and repository reads.
    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn into_world(self) -> World {
        self.world
    }

    pub fn authority(&self) -> &Account {
        &self.world.sync.authority
    }

    pub fn snapshot(&self) -> Vec<u8> {
        self.world.snapshot()
    }

    pub fn journal_lines(&self) -> String {
        journal::to_lines(&self.world.sync.journal)
    }

    pub fn arm(&mut self, point: CrashPoint) {
        self.armed = Some(point);
    }

    pub fn disarm(&mut self) {
        self.armed = None;
    }

    pub fn armed(&self) -> Option<CrashPoint> {
        self.armed
    }

    /// Runs the full audit after every transaction and collects violations.
    pub fn set_audit_each_tx(&mut self, on: bool) {
        self.audit_each_tx = on;
    }

    pub fn tx_audits(&self) -> u64 {
        self.tx_audits
    }

    pub fn tx_violations(&self) -> &BTreeSet<Violation> {
        &self.tx_violations
    }

    pub fn take_tx_violations(&mut self) -> (u64, BTreeSet<Violation>) {
        (
            std::mem::take(&mut self.tx_audits),
            std::mem::take(&mut self.tx_violations),
        )
    }

    fn checkpoint(&mut self, point: CrashPoint) -> Result<(), SyncError> {
        if self.armed == Some(point) {
            self.armed = None;
            return Err(SyncError::Crashed(point));
        }
        Ok(())
    }

    fn journal(&mut self, record: JournalRecord) {
        let s = &mut self.world.sync;
        s.journal.push(JournalEntry {
            seq: s.next_journal_seq,
            at: self.world.ledger.next_gseq,
            record,
        });
        s.next_journal_seq += 1;
    }

    fn after_tx(&mut self) {
        if self.audit_each_tx {
            self.tx_audits += 1;
            let report = audit_world(&self.world);
            self.tx_violations.extend(report.violations);
        }
    }

    /// Submits a call through the engine so per-transaction auditing sees
    /// it. Rejections come back inside the envelope.
    pub fn submit_call(
        &mut self,
        chain: &ChainId,
        sender: &Account,
        target: &ContractAddr,
        call: &ContractCall,
    ) -> Result<TxEnvelope, SyncError> {
        let env = self.world.ledger.call(chain, sender, target, call)?;
        self.after_tx();
        Ok(env)
    }

    /// Raw submission (arbitrary op name and payload bytes).
    pub fn submit_raw(
        &mut self,
        chain: &ChainId,
        sender: &Account,
        target: Option<&ContractAddr>,
        op_name: &str,
        payload: &[u8],
    ) -> Result<TxEnvelope, SyncError> {
        let env = self
            .world
            .ledger
            .submit_tx(chain, sender, target, op_name, payload)?;
        self.after_tx();
        Ok(env)
    }

    fn authority_call(&mut self, nft: &NftId, call: ContractCall) -> Result<TxEnvelope, SyncError> {
        let authority = self.world.sync.authority.clone();
        let env = self.submit_call(&nft.chain_id, &authority, &nft.contract_addr, &call)?;
        match env.rejection() {
            None => Ok(env),
            Some(rejection) => Err(SyncError::TxRejected {
                op: call.op_name().to_owned(),
                rejection,
            }),
        }
    }

    pub fn create_chain(&mut self, chain: ChainId) -> Result<(), SyncError> {
        self.world.ledger.create_chain(chain.clone())?;
        self.world.sync.cursors.insert(chain, 0);
        Ok(())
    }

    pub fn place_under_custody(
        &mut self,
        asset: &AssetId,
        creator: &Account,
        custodian: &Account,
    ) -> Result<(), SyncError> {
        self.world
            .custody
            .place_under_custody(asset, creator, custodian)?;
        Ok(())
    }

    pub fn update_asset_state(
        &mut self,
        asset: &AssetId,
        state: &str,
        caller: &Account,
    ) -> Result<u64, SyncError> {
        Ok(self
            .world
            .custody
            .update_asset_state(asset, state, caller)?
            .seq)
    }

    /// Deploys an engine-managed contract and routes its endpoint to it.
    pub fn deploy_contract(
        &mut self,
        chain: &ChainId,
        policy: ContractPolicy,
        endpoint: Option<String>,
        address: Option<ContractAddr>,
    ) -> Result<ManagedContract, SyncError> {
        let authority = self.world.sync.authority.clone();
        let addr = match &address {
            Some(a) => a.clone(),
            None => self.world.ledger.preview_deploy_addr(chain, &authority)?,
        };
        let endpoint =
            endpoint.unwrap_or_else(|| format!("{}/{}/{}", self.world.repo.endpoint, chain, addr));
        let call = ContractCall::Deploy {
            address,
            policy,
            endpoint: endpoint.clone(),
            authority: authority.clone(),
        };
        let env = self.world.ledger.deploy(chain, &authority, &call)?;
        self.after_tx();
        if let Some(rejection) = env.rejection() {
            return Err(SyncError::TxRejected {
                op: "deploy".into(),
                rejection,
            });
        }
        self.world.repo.register_route(
            &endpoint,
            Route {
                chain_id: chain.clone(),
                contract_addr: addr.clone(),
            },
            &authority,
        )?;
        let mc = ManagedContract {
            chain_id: chain.clone(),
            addr,
            policy,
            endpoint,
        };
        self.world.sync.contracts.push(mc.clone());
        Ok(mc)
    }

    /// Submits a resolution change by `caller`. When the contract accepts
    /// it, the new endpoint is routed and live tokens get fresh URIs.
    pub fn reconfigure_endpoint(
        &mut self,
        chain: &ChainId,
        addr: &ContractAddr,
        endpoint: &str,
        caller: &Account,
    ) -> Result<TxEnvelope, SyncError> {
        let env = self.submit_call(
            chain,
            caller,
            addr,
            &ContractCall::Reconfigure {
                endpoint: endpoint.to_owned(),
            },
        )?;
        if env.rejection().is_some() {
            return Ok(env);
        }
        let authority = self.world.sync.authority.clone();
        self.world.repo.register_route(
            endpoint,
            Route {
                chain_id: chain.clone(),
                contract_addr: addr.clone(),
            },
            &authority,
        )?;
        for mc in self.world.sync.contracts.iter_mut() {
            if &mc.chain_id == chain && &mc.addr == addr {
                mc.endpoint = endpoint.to_owned();
            }
        }
        let assets: Vec<AssetId> = self
            .world
            .sync
            .correlations
            .iter()
            .filter(|c| c.live && &c.nft_id.chain_id == chain && &c.nft_id.contract_addr == addr)
            .map(|c| c.asset_id.clone())
            .collect();
        for asset in assets {
            self.sync_attributes(&asset)?;
        }
        Ok(env)
    }

    fn ensure_contract(
        &mut self,
        chain: &ChainId,
        policy: ContractPolicy,
    ) -> Result<ManagedContract, SyncError> {
        match self.world.sync.find_contract(chain, &policy) {
            Some(mc) => Ok(mc.clone()),
            None => self.deploy_contract(chain, policy, None, None),
        }
    }

    /// An asset is bound once it has a record, a correlation or a deploy in
    /// progress.
    fn is_bound(&self, asset: &AssetId) -> Result<bool, SyncError> {
        let w = &self.world;
        Ok(w.repo.current(asset).is_some()
            || w.sync.correlations.iter().any(|c| &c.asset_id == asset)
            || w.folded()?.open_deploys().any(|d| &d.asset_id == asset))
    }

    /// Creates the metadata record and mints the asset's NFT to its creator.
    pub fn deploy_asset(
        &mut self,
        asset: &AssetId,
        chain: &ChainId,
        policy: ContractPolicy,
        content: Content,
        caller: &Account,
    ) -> Result<NftId, SyncError> {
        let creator = match self.world.custody.get(asset) {
            Ok(r) => r.creator.clone(),
            Err(_) => return Err(SyncError::NotUnderCustody(asset.clone())),
        };
        if &creator != caller {
            return Err(SyncError::NotAuthorized(caller.clone()));
        }
        if self.is_bound(asset)? {
            return Err(SyncError::AssetAlreadyBound(asset.clone()));
        }
        self.world.ledger.chain(chain)?;
        self.world
            .repo
            .register_provider(asset.namespace(), caller)
            .map_err(|e| match e {
                RepoError::NotAuthorized(a) => SyncError::NotAuthorized(a),
                other => other.into(),
            })?;
        let mc = self.ensure_contract(chain, policy)?;
        let token_id = self
            .world
            .ledger
            .contract(chain, &mc.addr)?
            .next_token_id
            .clone();
        let nft_id = NftId::new(chain.clone(), mc.addr.clone(), token_id);
        let visibility = if policy.hidden_metadata {
            Visibility::Hidden
        } else {
            Visibility::Public
        };
        let job_id = self.world.sync.next_job;
        self.world.sync.next_job += 1;
        let job = DeployJob {
            job_id,
            asset_id: asset.clone(),
            nft_id: nft_id.clone(),
            policy,
            content,
            visibility,
            owner: creator,
            phase: DeployPhase::Staged,
        };
        self.journal(JournalRecord::Deploy {
            job: job_id,
            step: DeployStep::Staged {
                asset_id: job.asset_id.clone(),
                nft_id: job.nft_id.clone(),
                policy,
                content: job.content.clone(),
                visibility,
                owner: job.owner.clone(),
            },
        });
        self.checkpoint(CrashPoint::DeployAfterStaged)?;
        self.run_deploy(&job, false)?;
        Ok(nft_id)
    }

    /// Drives a deploy job to `Committed`. When `recovering`, the last
    /// journaled phase's action is re-run first (actions are idempotent).
    fn run_deploy(&mut self, job: &DeployJob, recovering: bool) -> Result<(), SyncError> {
        const ACTS: [DeployPhase; 3] = [
            DeployPhase::RecordPut,
            DeployPhase::TokenMinted,
            DeployPhase::Correlated,
        ];
        if recovering && ACTS.contains(&job.phase) {
            self.deploy_act(job, job.phase)?;
        }
        for phase in ACTS.into_iter().filter(|p| *p > job.phase) {
            let step = match phase {
                DeployPhase::RecordPut => DeployStep::RecordPut,
                DeployPhase::TokenMinted => DeployStep::TokenMinted,
                _ => DeployStep::Correlated,
            };
            self.journal(JournalRecord::Deploy {
                job: job.job_id,
                step,
            });
            self.deploy_act(job, phase)?;
            if let Some(point) = CrashPoint::after_deploy_phase(phase) {
                self.checkpoint(point)?;
            }
        }
        self.journal(JournalRecord::Deploy {
            job: job.job_id,
            step: DeployStep::Committed,
        });
        Ok(())
    }

    fn deploy_act(&mut self, job: &DeployJob, phase: DeployPhase) -> Result<(), SyncError> {
        let asset = &job.asset_id;
        match phase {
            DeployPhase::RecordPut => {
                if self.world.repo.current(asset).is_none() {
                    self.world.repo.put_record(
                        asset,
                        RecordInput {
                            content: job.content.clone(),
                            nft_id: job.nft_id.clone(),
                            visibility: job.visibility,
                            owner: job.owner.clone(),
                        },
                        &job.owner,
                    )?;
                }
            }
            DeployPhase::TokenMinted => {
                if self.world.ledger.token(&job.nft_id).is_none() {
                    let attributes = self.derive_attributes(asset, &job.nft_id)?;
                    self.authority_call(
                        &job.nft_id,
                        ContractCall::Mint {
                            token_id: job.nft_id.token_id.clone(),
                            owner: job.owner.clone(),
                            attributes,
                            status: MintStatus::Active,
                        },
                    )?;
                }
            }
            DeployPhase::Correlated => {
                self.correlate(asset, &job.nft_id)?;
            }
            DeployPhase::Staged | DeployPhase::Committed => {}
        }
        Ok(())
    }

    /// Makes `nft` the asset's only live correlation and binds it in custody.
    fn correlate(&mut self, asset: &AssetId, nft: &NftId) -> Result<(), SyncError> {
        let version = self.world.repo.current(asset).map_or(0, |r| r.version);
        let s = &mut self.world.sync;
        for c in s.correlations.iter_mut() {
            if &c.asset_id == asset && &c.nft_id != nft {
                c.live = false;
            }
        }
        if !s
            .correlations
            .iter()
            .any(|c| &c.asset_id == asset && &c.nft_id == nft)
        {
            s.correlations.push(Correlation {
                asset_id: asset.clone(),
                nft_id: nft.clone(),
                metadata_version: version,
                contract_ref: ContractRef {
                    chain_id: nft.chain_id.clone(),
                    contract_addr: nft.contract_addr.clone(),
                },
                live: true,
            });
        }
        let authority = s.authority.clone();
        self.world.custody.bind_nft(asset, nft, &authority)?;
        Ok(())
    }

    /// On-chain attributes the asset's current record calls for on `nft`.
    fn derive_attributes(&self, asset: &AssetId, nft: &NftId) -> Result<AttributeSet, SyncError> {
        let contract = self
            .world
            .ledger
            .contract(&nft.chain_id, &nft.contract_addr)?;
        if contract.policy.hidden_metadata {
            let stored = self
                .world
                .repo
                .current_stored(asset)
                .ok_or_else(|| RepoError::NotFound(asset.to_string()))?;
            Ok(AttributeSet::hashed(stored.digest.clone()))
        } else {
            Ok(AttributeSet::uri(
                contract.resolution.token_uri(&nft.token_id),
            ))
        }
    }

    /// Pushes derived attributes to the live NFT when they differ from what
    /// is on chain. Only active tokens are touched.
    fn sync_attributes(&mut self, asset: &AssetId) -> Result<Option<SyncAction>, SyncError> {
        let Some(corr) = self.world.sync.live_correlation(asset).cloned() else {
            return Ok(None);
        };
        let Some(token) = self.world.ledger.token(&corr.nft_id) else {
            return Ok(None);
        };
        if token.status != TokenStatus::Active {
            return Ok(None);
        }
        let current = token.attributes.clone();
        let want = self.derive_attributes(asset, &corr.nft_id)?;
        let mut action = None;
        if current != want {
            self.authority_call(
                &corr.nft_id,
                ContractCall::SetAttribute {
                    token_id: corr.nft_id.token_id.clone(),
                    attributes: want,
                },
            )?;
            action = Some(SyncAction::new(
                "attributes_updated",
                Some(asset),
                corr.nft_id.canonical(),
            ));
        }
        let version = self.world.repo.current(asset).map_or(0, |r| r.version);
        if let Some(c) = self
            .world
            .sync
            .correlations
            .iter_mut()
            .find(|c| c.live && &c.asset_id == asset)
        {
            c.metadata_version = version;
        }
        Ok(action)
    }

    /// Reflects a custody state change into the record and, through it, the
    /// NFT.
    pub fn on_custody_changed(
        &mut self,
        asset: &AssetId,
        new_state: &str,
        seq: u64,
    ) -> Result<SyncAction, SyncError> {
        if self
            .world
            .sync
            .custody_seen
            .get(asset)
            .is_some_and(|s| *s >= seq)
        {
            self.world.custody.ack(asset, seq);
            return Ok(SyncAction::new(
                "custody_duplicate",
                Some(asset),
                seq.to_string(),
            ));
        }
        if self.world.in_flight().contains(asset) {
            return Ok(SyncAction::new(
                "custody_deferred",
                Some(asset),
                seq.to_string(),
            ));
        }
        let action = match self.world.repo.current(asset).cloned() {
            None => SyncAction::new("custody_noted", Some(asset), new_state),
            Some(rec) => {
                let mut content = rec.content.clone();
                content.insert("asset_state".into(), serde_json::Value::from(new_state));
                let authority = self.world.sync.authority.clone();
                let (version, _) =
                    self.world
                        .repo
                        .sync_record(asset, content, rec.owner.clone(), &authority)?;
                self.sync_attributes(asset)?;
                SyncAction::new(
                    "metadata_updated",
                    Some(asset),
                    format!("v{version} {new_state}"),
                )
            }
        };
        self.world.sync.custody_seen.insert(asset.clone(), seq);
        self.world.custody.ack(asset, seq);
        Ok(action)
    }

    /// Reacts to one chain event. Events the engine caused itself are
    /// skipped.
    pub fn on_chain_observed(
        &mut self,
        event: &ChainEvent,
    ) -> Result<Option<SyncAction>, SyncError> {
        let authority = self.world.sync.authority.clone();
        if event.caller == authority {
            return Ok(None);
        }
        let nft = event.nft_id();
        let Some(asset) = self
            .world
            .sync
            .live_for_nft(&nft)
            .map(|c| c.asset_id.clone())
        else {
            return Ok(None);
        };
        match event.kind {
            EventKind::Transferred => {
                let to = Account::new(event.detail.get("to").map_or("", String::as_str));
                let Some(rec) = self.world.repo.current(&asset).cloned() else {
                    return Ok(None);
                };
                if rec.owner != to {
                    self.world.repo.sync_record(
                        &asset,
                        rec.content.clone(),
                        to.clone(),
                        &authority,
                    )?;
                }
                self.sync_attributes(&asset)?;
                Ok(Some(SyncAction::new(
                    "owner_updated",
                    Some(&asset),
                    to.as_str(),
                )))
            }
            EventKind::Burned => {
                let burner = event.caller.clone();
                let burn_gseq =
                    self.world.ledger.chain(&nft.chain_id)?.tx_log[event.seq as usize].gseq;
                self.world.custody.record_burn(
                    &asset,
                    BurnEvidence {
                        nft_id: nft.clone(),
                        burner: burner.clone(),
                        burn_gseq,
                    },
                    &authority,
                )?;
                let at = self.world.ledger.next_gseq;
                match self.world.custody.deliver(&asset, &burner, &authority, at) {
                    Ok(_) | Err(CustodyError::AlreadyDelivered(_)) => {}
                    Err(e) => return Err(e.into()),
                }
                if self
                    .world
                    .repo
                    .current(&asset)
                    .is_some_and(|r| !r.is_terminal())
                {
                    self.world.repo.append_history(
                        &asset,
                        &nft,
                        HistoryReason::Burned,
                        &authority,
                    )?;
                }
                for c in self.world.sync.correlations.iter_mut() {
                    if c.nft_id == nft {
                        c.live = false;
                    }
                }
                Ok(Some(SyncAction::new(
                    "delivered",
                    Some(&asset),
                    burner.as_str(),
                )))
            }
            _ => Ok(None),
        }
    }

    /// Drains custody notifications, then new events on every chain.
    pub fn pump(&mut self) -> Result<Vec<SyncAction>, SyncError> {
        let mut actions = Vec::new();
        let pending: Vec<_> = self.world.custody.pending().cloned().collect();
        for n in pending {
            actions.push(self.on_custody_changed(&n.asset_id, &n.new_state, n.seq)?);
        }
        let chains: Vec<ChainId> = self.world.ledger.chains.keys().cloned().collect();
        for chain in chains {
            let cursor = self.world.sync.cursors.get(&chain).copied().unwrap_or(0);
            let (events, height) = self.world.ledger.events_since(&chain, cursor)?;
            self.world.sync.cursors.insert(chain, height);
            for e in &events {
                actions.extend(self.on_chain_observed(e)?);
            }
        }
        Ok(actions)
    }

    /// Finishes or reverts every open session and rolls open deploys
    /// forward, then reconciles attributes of all live NFTs.
    pub fn recover(&mut self) -> Result<Vec<SyncAction>, SyncError> {
        self.armed = None;
        let folded = self.world.folded()?;
        let mut actions = Vec::new();
        for s in folded.open_sessions() {
            if s.phase.is_committed_forward() {
                self.complete_forward(s)?;
                actions.push(SyncAction::new(
                    "session_completed",
                    Some(&s.asset_id),
                    format!("session {} from {:?}", s.session_id, s.phase),
                ));
            } else {
                self.revert_session(s)?;
                actions.push(SyncAction::new(
                    "session_reverted",
                    Some(&s.asset_id),
                    format!("session {} from {:?}", s.session_id, s.phase),
                ));
            }
        }
        for d in folded.open_deploys() {
            self.run_deploy(d, true)?;
            actions.push(SyncAction::new(
                "deploy_completed",
                Some(&d.asset_id),
                format!("job {} from {:?}", d.job_id, d.phase),
            ));
        }
        let live: Vec<AssetId> = self
            .world
            .sync
            .correlations
            .iter()
            .filter(|c| c.live)
            .map(|c| c.asset_id.clone())
            .collect();
        for asset in live {
            actions.extend(self.sync_attributes(&asset)?);
        }
        Ok(actions)
    }
}
