//! Asset custody service.
//!
//! Tracks assets under custody and their free-form state, queues a
//! notification for every accepted state change, and records the single
//! physical delivery that follows an owner burning the bound NFT.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{Account, AssetId, NftId};

pub const INITIAL_STATE: &str = "under custody";
pub const DELIVERED_STATE: &str = "delivered";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CustodyError {
    #[error("asset {0} is already under custody")]
    DuplicateAsset(AssetId),
    #[error("asset {0} not found")]
    NotFound(AssetId),
    #[error("caller {0} is not authorized")]
    NotAuthorized(Account),
    #[error("asset {0} was already delivered")]
    AlreadyDelivered(AssetId),
    #[error("recipient {recipient} is not the burner {burner}")]
    WrongRecipient { recipient: Account, burner: Account },
    #[error("bound NFT of {0} is not burned")]
    NotBurned(AssetId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLogEntry {
    pub seq: u64,
    pub state: String,
}

/// Where the engine saw the owner burn: the NFT, who burned it and the
/// ledger-wide sequence of the burn transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BurnEvidence {
    pub nft_id: NftId,
    pub burner: Account,
    pub burn_gseq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub asset_id: AssetId,
    pub creator: Account,
    pub custodian: Account,
    pub state: String,
    pub due_diligence_ok: bool,
    pub delivered_to: Option<Account>,
    pub state_log: Vec<StateLogEntry>,
    pub bound_nft: Option<NftId>,
    pub burn: Option<BurnEvidence>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustodyNotification {
    pub asset_id: AssetId,
    pub new_state: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub asset_id: AssetId,
    pub recipient: Account,
    pub nft_id: NftId,
    /// Ledger position (next gseq) when the delivery was made.
    pub at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Custody {
    pub endpoint: String,
    pub engine: Option<Account>,
    pub assets: BTreeMap<AssetId, AssetRecord>,
    pub queue: VecDeque<CustodyNotification>,
    pub deliveries: Vec<Delivery>,
    /// One line per simulated due-diligence pass.
    pub diligence_log: Vec<String>,
}

impl Custody {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: endpoint.to_owned(),
            ..Self::default()
        }
    }

    pub fn set_engine(&mut self, engine: Account) {
        self.engine = Some(engine);
    }

    pub fn get(&self, asset: &AssetId) -> Result<&AssetRecord, CustodyError> {
        self.assets
            .get(asset)
            .ok_or_else(|| CustodyError::NotFound(asset.clone()))
    }

    fn get_mut(&mut self, asset: &AssetId) -> Result<&mut AssetRecord, CustodyError> {
        self.assets
            .get_mut(asset)
            .ok_or_else(|| CustodyError::NotFound(asset.clone()))
    }

    fn require_engine(&self, caller: &Account) -> Result<(), CustodyError> {
        if self.engine.as_ref() == Some(caller) {
            Ok(())
        } else {
            Err(CustodyError::NotAuthorized(caller.clone()))
        }
    }

    /// Registers an asset. Due diligence is simulated: it always passes and
    /// leaves a log line.
    pub fn place_under_custody(
        &mut self,
        asset_id: &AssetId,
        creator: &Account,
        custodian: &Account,
    ) -> Result<&AssetRecord, CustodyError> {
        if self.assets.contains_key(asset_id) {
            return Err(CustodyError::DuplicateAsset(asset_id.clone()));
        }
        self.diligence_log.push(format!(
            "{asset_id}: due diligence passed (custodian {custodian})"
        ));
        let record = AssetRecord {
            asset_id: asset_id.clone(),
            creator: creator.clone(),
            custodian: custodian.clone(),
            state: INITIAL_STATE.to_owned(),
            due_diligence_ok: true,
            delivered_to: None,
            state_log: vec![StateLogEntry {
                seq: 0,
                state: INITIAL_STATE.to_owned(),
            }],
            bound_nft: None,
            burn: None,
        };
        Ok(self.assets.entry(asset_id.clone()).or_insert(record))
    }

    pub fn update_asset_state(
        &mut self,
        asset_id: &AssetId,
        new_state: &str,
        caller: &Account,
    ) -> Result<CustodyNotification, CustodyError> {
        let rec = self.get_mut(asset_id)?;
        if &rec.custodian != caller {
            return Err(CustodyError::NotAuthorized(caller.clone()));
        }
        if rec.delivered_to.is_some() {
            return Err(CustodyError::AlreadyDelivered(asset_id.clone()));
        }
        let seq = rec.state_log.last().map_or(0, |e| e.seq) + 1;
        rec.state = new_state.to_owned();
        rec.state_log.push(StateLogEntry {
            seq,
            state: new_state.to_owned(),
        });
        let n = CustodyNotification {
            asset_id: asset_id.clone(),
            new_state: new_state.to_owned(),
            seq,
        };
        self.queue.push_back(n.clone());
        Ok(n)
    }

    pub fn pending(&self) -> impl Iterator<Item = &CustodyNotification> {
        self.queue.iter()
    }

    /// Drops a consumed notification from the queue.
    pub fn ack(&mut self, asset_id: &AssetId, seq: u64) {
        self.queue
            .retain(|n| !(&n.asset_id == asset_id && n.seq == seq));
    }

    pub fn bind_nft(
        &mut self,
        asset_id: &AssetId,
        nft: &NftId,
        caller: &Account,
    ) -> Result<(), CustodyError> {
        self.require_engine(caller)?;
        self.get_mut(asset_id)?.bound_nft = Some(nft.clone());
        Ok(())
    }

    pub fn record_burn(
        &mut self,
        asset_id: &AssetId,
        evidence: BurnEvidence,
        caller: &Account,
    ) -> Result<(), CustodyError> {
        self.require_engine(caller)?;
        let rec = self.get_mut(asset_id)?;
        if rec.burn.is_none() {
            rec.burn = Some(evidence);
        }
        Ok(())
    }

    /// Hands the asset to `recipient`, who must be the recorded burner.
    pub fn deliver(
        &mut self,
        asset_id: &AssetId,
        recipient: &Account,
        caller: &Account,
        at: u64,
    ) -> Result<&AssetRecord, CustodyError> {
        self.require_engine(caller)?;
        let rec = self.get_mut(asset_id)?;
        if rec.delivered_to.is_some() {
            return Err(CustodyError::AlreadyDelivered(asset_id.clone()));
        }
        let burn = rec
            .burn
            .clone()
            .ok_or_else(|| CustodyError::NotBurned(asset_id.clone()))?;
        if &burn.burner != recipient {
            return Err(CustodyError::WrongRecipient {
                recipient: recipient.clone(),
                burner: burn.burner,
            });
        }
        let seq = rec.state_log.last().map_or(0, |e| e.seq) + 1;
        rec.delivered_to = Some(recipient.clone());
        rec.state = DELIVERED_STATE.to_owned();
        rec.state_log.push(StateLogEntry {
            seq,
            state: DELIVERED_STATE.to_owned(),
        });
        self.deliveries.push(Delivery {
            asset_id: asset_id.clone(),
            recipient: recipient.clone(),
            nft_id: burn.nft_id,
            at,
        });
        Ok(&self.assets[asset_id])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ids::make_nft_id;

    fn asset() -> AssetId {
        "acme:watch-1".parse().unwrap()
    }

    fn setup() -> Custody {
        let mut c = Custody::new("https://custody.example");
        c.set_engine("engine".into());
        c.place_under_custody(&asset(), &"acme".into(), &"vault".into())
            .unwrap();
        c
    }

    fn nft() -> NftId {
        make_nft_id("sim:a", "0x0000000000000000000000000000000000000001", 1).unwrap()
    }

    #[test]
    fn place_and_duplicate() {
        let mut c = setup();
        assert!(c.get(&asset()).unwrap().due_diligence_ok);
        assert_eq!(c.diligence_log.len(), 1);
        assert!(matches!(
            c.place_under_custody(&asset(), &"acme".into(), &"vault".into()),
            Err(CustodyError::DuplicateAsset(_))
        ));
        // Self-custody.
        let own: AssetId = "acme:2".parse().unwrap();
        let r = c
            .place_under_custody(&own, &"acme".into(), &"acme".into())
            .unwrap();
        assert_eq!(r.creator, r.custodian);
    }

    #[test]
    fn state_updates_notify_in_order() {
        let mut c = setup();
        let n1 = c
            .update_asset_state(&asset(), "in production", &"vault".into())
            .unwrap();
        let n2 = c
            .update_asset_state(&asset(), "customs cleared", &"vault".into())
            .unwrap();
        assert_eq!(n2.seq, n1.seq + 1);
        assert_eq!(c.pending().count(), 2);
        c.ack(&asset(), n1.seq);
        assert_eq!(c.pending().next().unwrap().new_state, "customs cleared");
        assert!(matches!(
            c.update_asset_state(&asset(), "x", &"acme".into()),
            Err(CustodyError::NotAuthorized(_))
        ));
        assert!(matches!(
            c.update_asset_state(&"acme:none".parse().unwrap(), "x", &"vault".into()),
            Err(CustodyError::NotFound(_))
        ));
    }

    #[test]
    fn delivery_exactly_once_to_burner() {
        let mut c = setup();
        let engine = Account::new("engine");
        assert!(matches!(
            c.deliver(&asset(), &"bob".into(), &engine, 5),
            Err(CustodyError::NotBurned(_))
        ));
        c.bind_nft(&asset(), &nft(), &engine).unwrap();
        c.record_burn(
            &asset(),
            BurnEvidence {
                nft_id: nft(),
                burner: "bob".into(),
                burn_gseq: 4,
            },
            &engine,
        )
        .unwrap();
        assert!(matches!(
            c.deliver(&asset(), &"bob".into(), &"bob".into(), 5),
            Err(CustodyError::NotAuthorized(_))
        ));
        assert!(matches!(
            c.deliver(&asset(), &"carol".into(), &engine, 5),
            Err(CustodyError::WrongRecipient { .. })
        ));
        let r = c.deliver(&asset(), &"bob".into(), &engine, 5).unwrap();
        assert_eq!(r.delivered_to, Some("bob".into()));
        assert_eq!(r.state, DELIVERED_STATE);
        assert!(matches!(
            c.deliver(&asset(), &"bob".into(), &engine, 6),
            Err(CustodyError::AlreadyDelivered(_))
        ));
        assert!(matches!(
            c.update_asset_state(&asset(), "x", &"vault".into()),
            Err(CustodyError::AlreadyDelivered(_))
        ));
        assert_eq!(c.deliveries.len(), 1);
    }
}
