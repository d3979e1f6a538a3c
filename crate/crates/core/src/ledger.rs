//! In-memory chains with append-only transaction logs.
//!
//! Each chain applies one transaction at a time with instant finality. Every
//! submitted transaction is appended to the log, accepted or rejected; a
//! rejected one changes no contract state and emits no events. Besides its
//! per-chain `seq`, every envelope carries a ledger-wide `gseq` that totally
//! orders transactions across chains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::canon::{self, to_canonical_bytes};
use crate::contract::{
    ContractCall, EventKind, NftContract, RejectCode, Rejection, ResolutionConfig,
};
use crate::ids::{Account, ChainId, ContractAddr, HashDigest, NftId, TokenId};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("chain {0} already exists")]
    DuplicateChain(ChainId),
    #[error("unknown chain {0}")]
    UnknownChain(ChainId),
    #[error("unknown contract {addr} on {chain}")]
    UnknownContract { chain: ChainId, addr: ContractAddr },
    #[error("cursor {cursor} beyond height {height}")]
    CursorOutOfRange { cursor: u64, height: u64 },
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TxResult {
    Accepted,
    Rejected { code: RejectCode, reason: String },
}

impl TxResult {
    pub fn is_accepted(&self) -> bool {
        matches!(self, TxResult::Accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainEvent {
    pub chain_id: ChainId,
    pub contract_addr: ContractAddr,
    pub token_id: TokenId,
    pub kind: EventKind,
    pub caller: Account,
    pub detail: BTreeMap<String, String>,
    pub seq: u64,
}

impl ChainEvent {
    pub fn nft_id(&self) -> NftId {
        NftId::new(
            self.chain_id.clone(),
            self.contract_addr.clone(),
            self.token_id.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxEnvelope {
    pub seq: u64,
    pub gseq: u64,
    pub sender: Account,
    pub target: ContractAddr,
    pub op_name: String,
    /// Canonical JSON of the call.
    pub payload: String,
    pub result: TxResult,
    pub events: Vec<ChainEvent>,
}

impl TxEnvelope {
    pub fn rejection(&self) -> Option<Rejection> {
        match &self.result {
            TxResult::Accepted => None,
            TxResult::Rejected { code, reason } => Some(Rejection::new(*code, reason.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chain {
    pub chain_id: ChainId,
    pub height: u64,
    pub tx_log: Vec<TxEnvelope>,
    pub contracts: BTreeMap<ContractAddr, NftContract>,
}

#[derive(Serialize, Deserialize)]
struct ChainSnapshot {
    format_version: u32,
    chain: Chain,
}

/// Address a deploy at `seq` by `sender` receives when none is requested.
pub fn derive_contract_addr(chain: &ChainId, sender: &Account, seq: u64) -> ContractAddr {
    let digest = Sha256::digest(format!("{chain}/{sender}/{seq}").as_bytes());
    ContractAddr::from_bytes(&digest)
}

impl Chain {
    pub fn new(chain_id: ChainId) -> Self {
        Self {
            chain_id,
            height: 0,
            tx_log: Vec::new(),
            contracts: BTreeMap::new(),
        }
    }

    pub fn contract(&self, addr: &ContractAddr) -> Option<&NftContract> {
        self.contracts.get(addr)
    }

    /// Digest over all contract state; equal before and after any rejected
    /// transaction.
    pub fn state_hash(&self) -> HashDigest {
        canon::sha256(&to_canonical_bytes(&self.contracts))
    }

    fn apply(
        &mut self,
        sender: &Account,
        target: Option<&ContractAddr>,
        op_name: &str,
        payload: &[u8],
        gseq: u64,
    ) -> Result<&TxEnvelope, LedgerError> {
        let seq = self.height;
        let parsed: Result<ContractCall, Rejection> = serde_json::from_slice(payload)
            .map_err(|e| Rejection::new(RejectCode::MalformedPayload, e.to_string()))
            .and_then(|call: ContractCall| {
                if call.op_name() == op_name {
                    Ok(call)
                } else {
                    Err(Rejection::new(
                        RejectCode::MalformedPayload,
                        format!("op_name {op_name} does not match payload"),
                    ))
                }
            });

        let (addr, outcome) = match parsed {
            Ok(ContractCall::Deploy {
                address,
                policy,
                endpoint,
                authority,
            }) => {
                let addr =
                    address.unwrap_or_else(|| derive_contract_addr(&self.chain_id, sender, seq));
                if self.contracts.contains_key(&addr) {
                    (
                        addr,
                        Err(Rejection::new(
                            RejectCode::ContractExists,
                            "contract exists",
                        )),
                    )
                } else {
                    let c = NftContract::new(
                        addr.clone(),
                        policy,
                        ResolutionConfig::at_deploy(endpoint),
                        authority,
                    );
                    self.contracts.insert(addr.clone(), c);
                    (addr, Ok(Vec::new()))
                }
            }
            other => {
                let addr = target
                    .cloned()
                    .unwrap_or_else(|| ContractAddr::from_bytes(&[0; 20]));
                let contract =
                    self.contracts
                        .get_mut(&addr)
                        .ok_or_else(|| LedgerError::UnknownContract {
                            chain: self.chain_id.clone(),
                            addr: addr.clone(),
                        })?;
                let outcome = other.and_then(|call| contract.apply(sender, &call, seq));
                (addr, outcome)
            }
        };

        let (result, events) = match outcome {
            Ok(emitted) => (
                TxResult::Accepted,
                emitted
                    .into_iter()
                    .map(|e| ChainEvent {
                        chain_id: self.chain_id.clone(),
                        contract_addr: addr.clone(),
                        token_id: e.token_id,
                        kind: e.kind,
                        caller: sender.clone(),
                        detail: e.detail,
                        seq,
                    })
                    .collect(),
            ),
            Err(r) => (
                TxResult::Rejected {
                    code: r.code,
                    reason: r.reason,
                },
                Vec::new(),
            ),
        };
        self.tx_log.push(TxEnvelope {
            seq,
            gseq,
            sender: sender.clone(),
            target: addr,
            op_name: op_name.to_owned(),
            payload: String::from_utf8_lossy(payload).into_owned(),
            result,
            events,
        });
        self.height += 1;
        Ok(self.tx_log.last().expect("just pushed"))
    }

    /// Re-executes the log from genesis on a fresh chain.
    pub fn replay(&self) -> Result<Chain, LedgerError> {
        let mut fresh = Chain::new(self.chain_id.clone());
        for tx in &self.tx_log {
            let target = (tx.op_name != "deploy").then_some(&tx.target);
            fresh.apply(
                &tx.sender,
                target,
                &tx.op_name,
                tx.payload.as_bytes(),
                tx.gseq,
            )?;
        }
        Ok(fresh)
    }

    pub fn snapshot(&self) -> Vec<u8> {
        to_canonical_bytes(&ChainSnapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            chain: self.clone(),
        })
    }

    pub fn restore(bytes: &[u8]) -> Result<Chain, LedgerError> {
        let snap: ChainSnapshot = serde_json::from_slice(bytes)
            .map_err(|e| LedgerError::CorruptSnapshot(e.to_string()))?;
        if snap.format_version != SNAPSHOT_FORMAT_VERSION {
            return Err(LedgerError::CorruptSnapshot(format!(
                "unsupported format_version {}",
                snap.format_version
            )));
        }
        let chain = snap.chain;
        if chain.height != chain.tx_log.len() as u64
            || chain
                .tx_log
                .iter()
                .enumerate()
                .any(|(i, tx)| tx.seq != i as u64)
        {
            return Err(LedgerError::CorruptSnapshot("height/seq mismatch".into()));
        }
        Ok(chain)
    }
}

/// All simulated chains plus the ledger-wide transaction counter.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    pub chains: BTreeMap<ChainId, Chain>,
    pub next_gseq: u64,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn create_chain(&mut self, chain_id: ChainId) -> Result<&Chain, LedgerError> {
        if self.chains.contains_key(&chain_id) {
            return Err(LedgerError::DuplicateChain(chain_id));
        }
        Ok(self
            .chains
            .entry(chain_id.clone())
            .or_insert_with(|| Chain::new(chain_id)))
    }

    pub fn chain(&self, chain_id: &ChainId) -> Result<&Chain, LedgerError> {
        self.chains
            .get(chain_id)
            .ok_or_else(|| LedgerError::UnknownChain(chain_id.clone()))
    }

    pub fn contract(
        &self,
        chain_id: &ChainId,
        addr: &ContractAddr,
    ) -> Result<&NftContract, LedgerError> {
        self.chain(chain_id)?
            .contract(addr)
            .ok_or_else(|| LedgerError::UnknownContract {
                chain: chain_id.clone(),
                addr: addr.clone(),
            })
    }

    pub fn token(&self, nft: &NftId) -> Option<&crate::contract::TokenState> {
        self.chains
            .get(&nft.chain_id)?
            .contract(&nft.contract_addr)?
            .tokens
            .get(&nft.token_id)
    }

    /// Raw submission. `target` is ignored for `deploy`.
    pub fn submit_tx(
        &mut self,
        chain_id: &ChainId,
        sender: &Account,
        target: Option<&ContractAddr>,
        op_name: &str,
        payload: &[u8],
    ) -> Result<TxEnvelope, LedgerError> {
        let gseq = self.next_gseq;
        let chain = self
            .chains
            .get_mut(chain_id)
            .ok_or_else(|| LedgerError::UnknownChain(chain_id.clone()))?;
        let env = chain.apply(sender, target, op_name, payload, gseq)?.clone();
        self.next_gseq += 1;
        Ok(env)
    }

    /// Typed submission: serializes `call` canonically and submits it.
    pub fn call(
        &mut self,
        chain_id: &ChainId,
        sender: &Account,
        target: &ContractAddr,
        call: &ContractCall,
    ) -> Result<TxEnvelope, LedgerError> {
        let payload = to_canonical_bytes(call);
        self.submit_tx(chain_id, sender, Some(target), call.op_name(), &payload)
    }

    pub fn deploy(
        &mut self,
        chain_id: &ChainId,
        sender: &Account,
        call: &ContractCall,
    ) -> Result<TxEnvelope, LedgerError> {
        let payload = to_canonical_bytes(call);
        self.submit_tx(chain_id, sender, None, call.op_name(), &payload)
    }

    /// Address the next deploy by `sender` on `chain_id` would get.
    pub fn preview_deploy_addr(
        &self,
        chain_id: &ChainId,
        sender: &Account,
    ) -> Result<ContractAddr, LedgerError> {
        let chain = self.chain(chain_id)?;
        Ok(derive_contract_addr(chain_id, sender, chain.height))
    }

    pub fn events_since(
        &self,
        chain_id: &ChainId,
        cursor: u64,
    ) -> Result<(Vec<ChainEvent>, u64), LedgerError> {
        let chain = self.chain(chain_id)?;
        if cursor > chain.height {
            return Err(LedgerError::CursorOutOfRange {
                cursor,
                height: chain.height,
            });
        }
        let events = chain.tx_log[cursor as usize..]
            .iter()
            .flat_map(|tx| tx.events.iter().cloned())
            .collect();
        Ok((events, chain.height))
    }

    pub fn snapshot(&self, chain_id: &ChainId) -> Result<Vec<u8>, LedgerError> {
        Ok(self.chain(chain_id)?.snapshot())
    }

    /// Restores a chain snapshot into this ledger, replacing any chain with
    /// the same id.
    pub fn restore(&mut self, bytes: &[u8]) -> Result<&Chain, LedgerError> {
        let chain = Chain::restore(bytes)?;
        if let Some(last) = chain.tx_log.last() {
            self.next_gseq = self.next_gseq.max(last.gseq + 1);
        }
        let id = chain.chain_id.clone();
        self.chains.insert(id.clone(), chain);
        Ok(&self.chains[&id])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::{AttributeSet, ContractPolicy, MintStatus, TokenStatus};

    fn chain_id(s: &str) -> ChainId {
        ChainId::new(s).unwrap()
    }

    fn engine() -> Account {
        Account::new("engine")
    }

    fn setup() -> (Ledger, ChainId, ContractAddr) {
        let mut l = Ledger::new();
        let c = chain_id("eip155:1");
        l.create_chain(c.clone()).unwrap();
        let env = l
            .deploy(
                &c,
                &engine(),
                &ContractCall::Deploy {
                    address: None,
                    policy: ContractPolicy::cross_chain_transferable(),
                    endpoint: "https://repo/x".into(),
                    authority: engine(),
                },
            )
            .unwrap();
        assert!(env.result.is_accepted());
        (l, c, env.target)
    }

    fn mint(id: u64) -> ContractCall {
        ContractCall::Mint {
            token_id: TokenId::from(id),
            owner: "alice".into(),
            attributes: AttributeSet::uri(format!("https://repo/x/{id}")),
            status: MintStatus::Active,
        }
    }

    #[test]
    fn fresh_and_duplicate_chains() {
        let mut l = Ledger::new();
        assert_eq!(l.create_chain(chain_id("eip155:1")).unwrap().height, 0);
        assert!(matches!(
            l.create_chain(chain_id("eip155:1")),
            Err(LedgerError::DuplicateChain(_))
        ));
        l.create_chain(chain_id("sim:chainA")).unwrap();
        l.create_chain(chain_id("sim:chainB")).unwrap();
        assert_eq!(l.chains.len(), 3);
    }

    #[test]
    fn mint_then_duplicate_is_atomic() {
        let (mut l, c, addr) = setup();
        let env = l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        assert!(env.result.is_accepted());
        assert_eq!(env.events.len(), 1);
        assert_eq!(env.events[0].kind, EventKind::Minted);
        let before = l.chain(&c).unwrap().state_hash();
        let h = l.chain(&c).unwrap().height;
        let env = l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        assert_eq!(env.rejection().unwrap().reason, "token exists");
        assert!(env.events.is_empty());
        assert_eq!(l.chain(&c).unwrap().height, h + 1);
        assert_eq!(l.chain(&c).unwrap().state_hash(), before);
    }

    #[test]
    fn locked_transfer_rejected() {
        let (mut l, c, addr) = setup();
        l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        l.call(
            &c,
            &engine(),
            &addr,
            &ContractCall::Lock {
                token_id: TokenId::one(),
            },
        )
        .unwrap();
        let env = l
            .call(
                &c,
                &"alice".into(),
                &addr,
                &ContractCall::Transfer {
                    token_id: TokenId::one(),
                    from: "alice".into(),
                    to: "bob".into(),
                },
            )
            .unwrap();
        assert_eq!(env.rejection().unwrap().reason, "token locked");
    }

    #[test]
    fn unknown_chain_and_contract_are_errors() {
        let (mut l, c, _) = setup();
        let other = ContractAddr::from_bytes(&[9; 20]);
        assert!(matches!(
            l.call(&chain_id("sim:none"), &engine(), &other, &mint(1)),
            Err(LedgerError::UnknownChain(_))
        ));
        let h = l.chain(&c).unwrap().height;
        assert!(matches!(
            l.call(&c, &engine(), &other, &mint(1)),
            Err(LedgerError::UnknownContract { .. })
        ));
        assert_eq!(l.chain(&c).unwrap().height, h);
    }

    #[test]
    fn malformed_payload_is_recorded_rejection() {
        let (mut l, c, addr) = setup();
        let env = l
            .submit_tx(&c, &engine(), Some(&addr), "mint", b"{not json")
            .unwrap();
        assert_eq!(env.rejection().unwrap().code, RejectCode::MalformedPayload);
        let payload = to_canonical_bytes(&mint(1));
        let env = l
            .submit_tx(&c, &engine(), Some(&addr), "burn", &payload)
            .unwrap();
        assert_eq!(env.rejection().unwrap().code, RejectCode::MalformedPayload);
    }

    #[test]
    fn events_since_cursor() {
        let (mut l, c, addr) = setup();
        let (ev, cur) = l.events_since(&c, 0).unwrap();
        assert!(ev.is_empty());
        assert_eq!(cur, 1);
        l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        let (ev, cur) = l.events_since(&c, 0).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].kind, EventKind::Minted);
        assert_eq!(cur, 3);
        assert!(l.events_since(&c, 3).unwrap().0.is_empty());
        assert!(matches!(
            l.events_since(&c, 4),
            Err(LedgerError::CursorOutOfRange { .. })
        ));
    }

    #[test]
    fn snapshot_restore_and_replay() {
        let (mut l, c, addr) = setup();
        l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        l.call(&c, &engine(), &addr, &mint(2)).unwrap();
        l.call(
            &c,
            &engine(),
            &addr,
            &ContractCall::Lock {
                token_id: TokenId::from(2),
            },
        )
        .unwrap();
        let bytes = l.snapshot(&c).unwrap();
        let restored = Chain::restore(&bytes).unwrap();
        assert_eq!(&restored, l.chain(&c).unwrap());
        assert_eq!(
            restored.contract(&addr).unwrap().tokens[&TokenId::from(2)].status,
            TokenStatus::Locked
        );
        assert_eq!(restored.replay().unwrap().snapshot(), bytes);

        assert!(matches!(
            Chain::restore(&bytes[..bytes.len() / 2]),
            Err(LedgerError::CorruptSnapshot(_))
        ));
    }

    #[test]
    fn explicit_deploy_address_is_kept() {
        let mut l = Ledger::new();
        let c = chain_id("eip155:1");
        l.create_chain(c.clone()).unwrap();
        let addr = ContractAddr::new("0xa4c38796C35Dca618FE22a4e77F4210D0b0350d6").unwrap();
        let call = ContractCall::Deploy {
            address: Some(addr.clone()),
            policy: ContractPolicy::trade_only(),
            endpoint: "https://metadata.human-one.xyz".into(),
            authority: engine(),
        };
        assert_eq!(l.deploy(&c, &engine(), &call).unwrap().target, addr);
        let again = l.deploy(&c, &engine(), &call).unwrap();
        assert_eq!(again.rejection().unwrap().code, RejectCode::ContractExists);
    }

    #[test]
    fn gseq_orders_across_chains() {
        let (mut l, c, addr) = setup();
        let b = chain_id("sim:b");
        l.create_chain(b.clone()).unwrap();
        let e1 = l.call(&c, &engine(), &addr, &mint(1)).unwrap();
        let e2 = l
            .deploy(
                &b,
                &engine(),
                &ContractCall::Deploy {
                    address: None,
                    policy: ContractPolicy::trade_only(),
                    endpoint: "e".into(),
                    authority: engine(),
                },
            )
            .unwrap();
        assert!(e2.gseq > e1.gseq);
        assert_eq!(e2.seq, 0);
        assert_eq!(l.next_gseq, 3);
    }
}
