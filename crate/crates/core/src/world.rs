//! The complete simulated system: ledger, metadata repository, custody and
//! the sync engine's durable state. A world snapshot is all a restarted
//! engine needs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::canon::to_canonical_bytes;
use crate::custody::Custody;
use crate::ids::AssetId;
use crate::ledger::Ledger;
use crate::repo::MetadataRepo;
use crate::sync::journal::{self, Folded, JournalCorrupt};
use crate::sync::SyncState;

pub const WORLD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("corrupt world snapshot: {0}")]
pub struct CorruptWorld(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub format_version: u32,
    pub ledger: Ledger,
    pub repo: MetadataRepo,
    pub custody: Custody,
    pub sync: SyncState,
}

impl World {
    pub fn snapshot(&self) -> Vec<u8> {
        to_canonical_bytes(self)
    }

    /// Parses a snapshot without checking it against chain replay. The
    /// auditor uses this so that tampered worlds can still be inspected.
    pub fn parse(bytes: &[u8]) -> Result<World, CorruptWorld> {
        let mut world: World =
            serde_json::from_slice(bytes).map_err(|e| CorruptWorld(e.to_string()))?;
        if world.format_version != WORLD_FORMAT_VERSION {
            return Err(CorruptWorld(format!(
                "unsupported format_version {}",
                world.format_version
            )));
        }
        world.repo.rebuild_indexes();
        Ok(world)
    }

    /// Parses a snapshot and checks that every chain's state is what its
    /// transaction log replays to.
    pub fn restore(bytes: &[u8]) -> Result<World, CorruptWorld> {
        let world = Self::parse(bytes)?;
        for chain in world.ledger.chains.values() {
            let replayed = chain.replay().map_err(|e| CorruptWorld(e.to_string()))?;
            if replayed.state_hash() != chain.state_hash() {
                return Err(CorruptWorld(format!(
                    "chain {} does not match its replay",
                    chain.chain_id
                )));
            }
        }
        Ok(world)
    }

    pub fn folded(&self) -> Result<Folded, JournalCorrupt> {
        journal::fold(&self.sync.journal)
    }

    /// Assets with an open transfer session or deploy job. An unreadable
    /// journal counts as nothing in flight.
    pub fn in_flight(&self) -> BTreeSet<AssetId> {
        self.folded().map(|f| f.in_flight()).unwrap_or_default()
    }
}
