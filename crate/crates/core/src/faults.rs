//! Deliberately broken worlds, one per audit check. Each fault is seeded
//! into an otherwise clean world so that only its own check should fire.

use serde_json::json;

use crate::audit::CheckId;
use crate::canon::sha256;
use crate::contract::{EventKind, TokenStatus};
use crate::ids::{Account, AssetId, ChainId, NftId};
use crate::ledger::ChainEvent;
use crate::repo::{metadata_hash, HistoryReason};
use crate::scenario::{Action, InitStepSpec, PolicySpec, Runner};
use crate::sync::journal::{JournalEntry, JournalRecord, TransferStep};
use crate::sync::CrashPoint;
use crate::world::World;

pub const PUBLIC: &str = "maker:pub";
pub const HIDDEN: &str = "maker:hid";
pub const MOVED: &str = "maker:xc";
pub const ZERO: &str = "maker:zv";
pub const DELIVERED: &str = "maker:del";

fn asset(s: &str) -> AssetId {
    s.parse().expect("valid asset id")
}

fn chain(s: &str) -> ChainId {
    ChainId::new(s).expect("valid chain id")
}

fn run(runner: &mut Runner, steps: &mut usize, actor: &str, action: Action) {
    let step = action.to_step(&Account::new(actor));
    runner.execute(*steps, &step, None);
    *steps += 1;
}

/// Builds the clean base: one asset per pattern on `sim:a`, one of them
/// moved to `sim:b`, and one traded, burned and delivered.
pub fn base_runner() -> Runner {
    let mut r = Runner::new(1, false);
    let mut n = 0;
    for c in ["sim:a", "sim:b"] {
        run(
            &mut r,
            &mut n,
            "engine",
            Action::CreateChain { chain: chain(c) },
        );
    }
    run(
        &mut r,
        &mut n,
        "engine",
        Action::InitServices {
            authority: None,
            steps: vec![
                InitStepSpec::Custody {
                    endpoint: "https://custody.sim".into(),
                },
                InitStepSpec::Repo {
                    endpoint: "https://repo.sim".into(),
                },
            ],
        },
    );
    for (a, preset) in [
        (PUBLIC, "trade_only"),
        (HIDDEN, "hidden"),
        (MOVED, "cross_chain"),
        (ZERO, "zero_value"),
        (DELIVERED, "trade_only"),
    ] {
        run(
            &mut r,
            &mut n,
            "maker",
            Action::PlaceCustody {
                asset: asset(a),
                custodian: Some("vault".into()),
            },
        );
        let mut content = crate::repo::Content::new();
        content.insert("name".into(), json!(a));
        run(
            &mut r,
            &mut n,
            "maker",
            Action::DeployAsset {
                asset: asset(a),
                chain: chain("sim:a"),
                policy: PolicySpec::Preset(preset.into()),
                content,
            },
        );
    }
    run(
        &mut r,
        &mut n,
        "maker",
        Action::XchainTransfer {
            asset: asset(MOVED),
            dest_chain: chain("sim:b"),
        },
    );
    run(
        &mut r,
        &mut n,
        "vault",
        Action::UpdateState {
            asset: asset(HIDDEN),
            state: "inspected".into(),
        },
    );
    run(
        &mut r,
        &mut n,
        "maker",
        Action::Trade {
            asset: asset(DELIVERED),
            to: "bob".into(),
            payment: 100,
        },
    );
    run(
        &mut r,
        &mut n,
        "bob",
        Action::Burn {
            asset: asset(DELIVERED),
        },
    );
    r
}

pub fn base_world() -> World {
    base_runner().engine().expect("initialized").world().clone()
}

fn live(world: &World, a: &str) -> NftId {
    world
        .sync
        .live_correlation(&asset(a))
        .expect("live correlation")
        .nft_id
        .clone()
}

fn token_mut<'a>(world: &'a mut World, nft: &NftId) -> &'a mut crate::contract::TokenState {
    world
        .ledger
        .chains
        .get_mut(&nft.chain_id)
        .and_then(|c| c.contracts.get_mut(&nft.contract_addr))
        .and_then(|c| c.tokens.get_mut(&nft.token_id))
        .expect("token exists")
}

/// A clean world with the fault for `check` seeded into it.
pub fn seeded_world(check: CheckId) -> World {
    if check == CheckId::C1 {
        return double_live_world();
    }
    let mut w = base_world();
    match check {
        CheckId::C1 => unreachable!(),
        CheckId::C2 => {
            let nft = live(&w, PUBLIC);
            let t = token_mut(&mut w, &nft);
            let uri = t.attributes.token_uri.clone().expect("public uri");
            let (endpoint, _) = uri.rsplit_once('/').expect("uri has token part");
            t.attributes.token_uri = Some(format!("{endpoint}/999"));
        }
        CheckId::C3 => {
            let nft = live(&w, HIDDEN);
            token_mut(&mut w, &nft).attributes.metadata_hash = Some(sha256(b"forged"));
        }
        CheckId::C4 => {
            // Forge the history consistently (digest recomputed) so only the
            // successor link is wrong.
            let versions = w.repo.records.get_mut(&asset(MOVED)).expect("record");
            let stored = versions.last_mut().expect("version");
            for e in stored.record.nft_history.iter_mut() {
                if e.reason == HistoryReason::CrossChainMoved {
                    e.reason = HistoryReason::Deployed;
                }
            }
            stored.digest = metadata_hash(&stored.record);
            w.repo.rebuild_indexes();
        }
        CheckId::C5 => {
            let nft = live(&w, ZERO);
            let chain = w.ledger.chains.get_mut(&nft.chain_id).expect("chain");
            let tx = chain
                .tx_log
                .iter_mut()
                .find(|tx| {
                    tx.events
                        .iter()
                        .any(|e| e.kind == EventKind::Minted && e.nft_id() == nft)
                })
                .expect("mint tx");
            let mut detail = std::collections::BTreeMap::new();
            detail.insert("from".to_owned(), "maker".to_owned());
            detail.insert("to".to_owned(), "mallory".to_owned());
            detail.insert("payment".to_owned(), "500".to_owned());
            tx.events.push(ChainEvent {
                chain_id: nft.chain_id.clone(),
                contract_addr: nft.contract_addr.clone(),
                token_id: nft.token_id.clone(),
                kind: EventKind::Transferred,
                caller: "maker".into(),
                detail,
                seq: tx.seq,
            });
        }
        CheckId::C6 => {
            w.custody
                .assets
                .get_mut(&asset(DELIVERED))
                .expect("asset")
                .delivered_to = Some("mallory".into());
        }
        CheckId::C7 => {
            let public = live(&w, PUBLIC);
            let c = w
                .sync
                .correlations
                .iter_mut()
                .find(|c| c.live && c.asset_id == asset(ZERO))
                .expect("correlation");
            c.nft_id = public;
        }
        CheckId::C8 => {
            let nft = live(&w, PUBLIC);
            w.ledger
                .chains
                .get_mut(&nft.chain_id)
                .and_then(|c| c.contracts.get_mut(&nft.contract_addr))
                .expect("contract")
                .resolution
                .metadata_repo_endpoint = "https://evil.example".into();
        }
        CheckId::C9 => {
            let source = live(&w, PUBLIC);
            let at = w.ledger.next_gseq;
            let seq = w.sync.next_journal_seq;
            let entries = [
                TransferStep::Started {
                    asset_id: asset(PUBLIC),
                    source,
                    dest_chain: chain("sim:b"),
                    requester: "maker".into(),
                },
                TransferStep::SourceBurned,
            ];
            for (i, step) in entries.into_iter().enumerate() {
                w.sync.journal.push(JournalEntry {
                    seq: seq + i as u64,
                    at,
                    record: JournalRecord::Transfer { session: 99, step },
                });
            }
            w.sync.next_journal_seq += 2;
        }
    }
    w
}

/// The moved asset stopped mid-transfer (destination pending), with the
/// pending destination forced Active: two live NFTs for one asset.
fn double_live_world() -> World {
    let mut r = base_runner();
    let engine = r.engine_mut().expect("initialized");
    let source = engine
        .world()
        .sync
        .live_correlation(&asset(MOVED))
        .expect("live")
        .nft_id
        .clone();
    engine.arm(CrashPoint::XchainAfterDestPending);
    let err = engine
        .cross_chain_transfer(&source, &chain("sim:a"), &"maker".into())
        .expect_err("armed crash");
    assert!(matches!(err, crate::sync::SyncError::Crashed(_)));
    let mut w = engine.world().clone();
    let dest = w
        .folded()
        .expect("legal journal")
        .open_sessions()
        .next()
        .and_then(|s| s.dest.clone())
        .expect("dest journaled");
    token_mut(&mut w, &dest).status = TokenStatus::Active;
    w
}

/// The same mid-transfer world without the forced activation; clean.
pub fn mid_transfer_world() -> World {
    let mut r = base_runner();
    let engine = r.engine_mut().expect("initialized");
    let source = live(engine.world(), MOVED);
    engine.arm(CrashPoint::XchainAfterDestPending);
    let _ = engine.cross_chain_transfer(&source, &chain("sim:a"), &"maker".into());
    engine.world().clone()
}
