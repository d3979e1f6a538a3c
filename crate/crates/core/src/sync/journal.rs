//! Write-ahead journal for cross-chain transfer sessions and asset deploys.
//!
//! Transfer phase grammar:
//!
//! ```text
//! Started -> SourceLocked -> DestPending -> SourceBurned -> DestActivated -> Committed
//!    \____________\______________\
//!                                 -> Reverted
//! ```
//!
//! `SourceBurned` is the commit point: once journaled, the session can only
//! complete forward. Deploy jobs always roll forward:
//! `Staged -> RecordPut -> TokenMinted -> Correlated -> Committed`.
//!
//! Each phase is journaled before its action runs, so after a crash the last
//! journaled phase's action may or may not have happened; every action is
//! idempotent.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::canon::to_canonical_bytes;
use crate::contract::ContractPolicy;
use crate::ids::{Account, AssetId, ChainId, NftId};
use crate::repo::{Content, Visibility};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferPhase {
    Started,
    SourceLocked,
    DestPending,
    SourceBurned,
    DestActivated,
    Committed,
    Reverted,
}

impl TransferPhase {
    pub fn is_terminal(self) -> bool {
        matches!(self, TransferPhase::Committed | TransferPhase::Reverted)
    }

    /// Whether `self` may be journaled right after `prev` (`None` = first
    /// entry of a session).
    pub fn may_follow(self, prev: Option<TransferPhase>) -> bool {
        use TransferPhase::*;
        matches!(
            (prev, self),
            (None, Started)
                | (Some(Started), SourceLocked)
                | (Some(SourceLocked), DestPending)
                | (Some(DestPending), SourceBurned)
                | (Some(SourceBurned), DestActivated)
                | (Some(DestActivated), Committed)
                | (Some(Started | SourceLocked | DestPending), Reverted)
        )
    }

    /// Past the commit point.
    pub fn is_committed_forward(self) -> bool {
        matches!(
            self,
            TransferPhase::SourceBurned | TransferPhase::DestActivated | TransferPhase::Committed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeployPhase {
    Staged,
    RecordPut,
    TokenMinted,
    Correlated,
    Committed,
}

impl DeployPhase {
    pub const ORDER: [DeployPhase; 5] = [
        DeployPhase::Staged,
        DeployPhase::RecordPut,
        DeployPhase::TokenMinted,
        DeployPhase::Correlated,
        DeployPhase::Committed,
    ];

    pub fn may_follow(self, prev: Option<DeployPhase>) -> bool {
        let idx = |p| Self::ORDER.iter().position(|q| *q == p).expect("listed");
        match prev {
            None => self == DeployPhase::Staged,
            Some(p) => idx(self) == idx(p) + 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case", deny_unknown_fields)]
pub enum TransferStep {
    Started {
        asset_id: AssetId,
        source: NftId,
        dest_chain: ChainId,
        requester: Account,
    },
    SourceLocked,
    DestPending {
        dest: NftId,
    },
    SourceBurned,
    DestActivated,
    Committed,
    Reverted,
}

impl TransferStep {
    pub fn phase(&self) -> TransferPhase {
        match self {
            TransferStep::Started { .. } => TransferPhase::Started,
            TransferStep::SourceLocked => TransferPhase::SourceLocked,
            TransferStep::DestPending { .. } => TransferPhase::DestPending,
            TransferStep::SourceBurned => TransferPhase::SourceBurned,
            TransferStep::DestActivated => TransferPhase::DestActivated,
            TransferStep::Committed => TransferPhase::Committed,
            TransferStep::Reverted => TransferPhase::Reverted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeployStep {
    Staged {
        asset_id: AssetId,
        nft_id: NftId,
        policy: ContractPolicy,
        content: Content,
        visibility: Visibility,
        owner: Account,
    },
    RecordPut,
    TokenMinted,
    Correlated,
    Committed,
}

impl DeployStep {
    pub fn phase(&self) -> DeployPhase {
        match self {
            DeployStep::Staged { .. } => DeployPhase::Staged,
            DeployStep::RecordPut => DeployPhase::RecordPut,
            DeployStep::TokenMinted => DeployPhase::TokenMinted,
            DeployStep::Correlated => DeployPhase::Correlated,
            DeployStep::Committed => DeployPhase::Committed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JournalRecord {
    Transfer { session: u64, step: TransferStep },
    Deploy { job: u64, step: DeployStep },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    /// Position in the journal; strictly increasing.
    pub seq: u64,
    /// Ledger position (next gseq) when the entry was written. Every
    /// transaction executed for this phase has `gseq >= at`.
    pub at: u64,
    pub record: JournalRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("journal corrupt at entry {index}: {reason}")]
pub struct JournalCorrupt {
    pub index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferSession {
    pub session_id: u64,
    pub asset_id: AssetId,
    pub source: NftId,
    pub dest_chain: ChainId,
    pub requester: Account,
    pub dest: Option<NftId>,
    pub phase: TransferPhase,
    /// `(phase, journal seq)` pairs.
    pub journal: Vec<(TransferPhase, u64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeployJob {
    pub job_id: u64,
    pub asset_id: AssetId,
    pub nft_id: NftId,
    pub policy: ContractPolicy,
    pub content: Content,
    pub visibility: Visibility,
    pub owner: Account,
    pub phase: DeployPhase,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Folded {
    pub sessions: BTreeMap<u64, TransferSession>,
    pub deploys: BTreeMap<u64, DeployJob>,
}

impl Folded {
    pub fn open_sessions(&self) -> impl Iterator<Item = &TransferSession> {
        self.sessions.values().filter(|s| !s.phase.is_terminal())
    }

    pub fn open_deploys(&self) -> impl Iterator<Item = &DeployJob> {
        self.deploys
            .values()
            .filter(|d| d.phase != DeployPhase::Committed)
    }

    /// Assets with a session or deploy still in progress.
    pub fn in_flight(&self) -> std::collections::BTreeSet<AssetId> {
        self.open_sessions()
            .map(|s| s.asset_id.clone())
            .chain(self.open_deploys().map(|d| d.asset_id.clone()))
            .collect()
    }
}

/// Rebuilds session and deploy state, enforcing both phase grammars.
pub fn fold(entries: &[JournalEntry]) -> Result<Folded, JournalCorrupt> {
    let mut out = Folded::default();
    let mut last_seq: Option<u64> = None;
    for (index, e) in entries.iter().enumerate() {
        let corrupt = |reason: String| JournalCorrupt { index, reason };
        if last_seq.is_some_and(|s| e.seq <= s) {
            return Err(corrupt(format!("seq {} not increasing", e.seq)));
        }
        last_seq = Some(e.seq);
        match &e.record {
            JournalRecord::Transfer { session, step } => {
                let phase = step.phase();
                let prev = out.sessions.get(session).map(|s| s.phase);
                if !phase.may_follow(prev) {
                    return Err(corrupt(format!(
                        "session {session}: {phase:?} may not follow {prev:?}"
                    )));
                }
                match step {
                    TransferStep::Started {
                        asset_id,
                        source,
                        dest_chain,
                        requester,
                    } => {
                        out.sessions.insert(
                            *session,
                            TransferSession {
                                session_id: *session,
                                asset_id: asset_id.clone(),
                                source: source.clone(),
                                dest_chain: dest_chain.clone(),
                                requester: requester.clone(),
                                dest: None,
                                phase,
                                journal: vec![(phase, e.seq)],
                            },
                        );
                    }
                    other => {
                        let s = out.sessions.get_mut(session).expect("grammar checked");
                        if let TransferStep::DestPending { dest } = other {
                            if dest.chain_id != s.dest_chain {
                                return Err(corrupt(format!(
                                    "session {session}: destination on wrong chain"
                                )));
                            }
                            s.dest = Some(dest.clone());
                        }
                        s.phase = phase;
                        s.journal.push((phase, e.seq));
                    }
                }
            }
            JournalRecord::Deploy { job, step } => {
                let phase = step.phase();
                let prev = out.deploys.get(job).map(|d| d.phase);
                if !phase.may_follow(prev) {
                    return Err(corrupt(format!(
                        "deploy {job}: {phase:?} may not follow {prev:?}"
                    )));
                }
                match step {
                    DeployStep::Staged {
                        asset_id,
                        nft_id,
                        policy,
                        content,
                        visibility,
                        owner,
                    } => {
                        out.deploys.insert(
                            *job,
                            DeployJob {
                                job_id: *job,
                                asset_id: asset_id.clone(),
                                nft_id: nft_id.clone(),
                                policy: *policy,
                                content: content.clone(),
                                visibility: *visibility,
                                owner: owner.clone(),
                                phase,
                            },
                        );
                    }
                    _ => out.deploys.get_mut(job).expect("grammar checked").phase = phase,
                }
            }
        }
    }
    Ok(out)
}

/// One canonical JSON object per line.
pub fn to_lines(entries: &[JournalEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&String::from_utf8(to_canonical_bytes(e)).expect("canonical JSON is UTF-8"));
        out.push('\n');
    }
    out
}

pub fn from_lines(text: &str) -> Result<Vec<JournalEntry>, JournalCorrupt> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(index, line)| {
            serde_json::from_str(line).map_err(|e| JournalCorrupt {
                index,
                reason: e.to_string(),
            })
        })
        .collect()
}
