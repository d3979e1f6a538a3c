//! Cross-service consistency checks C1..C9 over a [`World`].
//!
//! Assets with an open transfer session or deploy job are "in flight" and
//! skip the checks that only hold between operations (C2, C3, C4, C7).
//! C1 and C9 hold at every point.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::canon::to_canonical_bytes;
use crate::contract::{ContractCall, EventKind, TokenStatus};
use crate::ids::{AssetId, NftId};
use crate::ledger::TxResult;
use crate::repo::{metadata_hash, HistoryReason};
use crate::sync::journal::{JournalRecord, TransferStep};
use crate::world::{CorruptWorld, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CheckId {
    C1,
    C2,
    C3,
    C4,
    C5,
    C6,
    C7,
    C8,
    C9,
}

impl CheckId {
    pub const ALL: [CheckId; 9] = [
        CheckId::C1,
        CheckId::C2,
        CheckId::C3,
        CheckId::C4,
        CheckId::C5,
        CheckId::C6,
        CheckId::C7,
        CheckId::C8,
        CheckId::C9,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CheckId::C1 => "C1",
            CheckId::C2 => "C2",
            CheckId::C3 => "C3",
            CheckId::C4 => "C4",
            CheckId::C5 => "C5",
            CheckId::C6 => "C6",
            CheckId::C7 => "C7",
            CheckId::C8 => "C8",
            CheckId::C9 => "C9",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            CheckId::C1 => "single live NFT per asset",
            CheckId::C2 => "public token_uri resolves to its record",
            CheckId::C3 => "hidden metadata hash matches record",
            CheckId::C4 => "burn forward reference has a successor",
            CheckId::C5 => "event log respects contract policy",
            CheckId::C6 => "delivery follows the delivering burn",
            CheckId::C7 => "correlations agree with records",
            CheckId::C8 => "resolution changes are logged and authorized",
            CheckId::C9 => "journal follows the phase grammar",
        }
    }
}

impl fmt::Display for CheckId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Violation {
    pub check: CheckId,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: CheckId,
    pub title: String,
    pub passed: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    /// Ledger position (next gseq) the audit saw.
    pub checked_at_seq: u64,
    pub checks: Vec<CheckSummary>,
    pub violations: Vec<Violation>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, check: CheckId) -> usize {
        self.violations.iter().filter(|v| v.check == check).count()
    }

    pub fn flags(&self, check: CheckId) -> bool {
        self.count(check) > 0
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_canonical_bytes(self)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("audit at seq {}\n", self.checked_at_seq);
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<3} {:<4} {:>3}  {}",
                c.check.name(),
                if c.passed { "ok" } else { "FAIL" },
                c.violations,
                c.title
            );
        }
        for v in &self.violations {
            let _ = writeln!(out, "  {} {}: {}", v.check, v.subject, v.detail);
        }
        out
    }
}

/// Audits a snapshot as produced by `World::snapshot`.
pub fn audit_snapshot(bytes: &[u8]) -> Result<AuditReport, CorruptWorld> {
    Ok(audit_world(&World::parse(bytes)?))
}

struct Ctx<'a> {
    world: &'a World,
    in_flight: BTreeSet<AssetId>,
    /// NFT -> asset, from every record's history plus open-session
    /// destinations.
    bindings: BTreeMap<NftId, AssetId>,
    open_sources: BTreeSet<NftId>,
    out: Vec<Violation>,
}

impl Ctx<'_> {
    fn flag(&mut self, check: CheckId, subject: impl ToString, detail: impl Into<String>) {
        self.out.push(Violation {
            check,
            subject: subject.to_string(),
            detail: detail.into(),
        });
    }

    fn exempt(&self, nft: &NftId) -> bool {
        self.bindings
            .get(nft)
            .is_some_and(|a| self.in_flight.contains(a))
    }
}

pub fn audit_world(world: &World) -> AuditReport {
    let mut ctx = Ctx {
        world,
        in_flight: BTreeSet::new(),
        bindings: BTreeMap::new(),
        open_sources: BTreeSet::new(),
        out: Vec::new(),
    };
    check_journal(&mut ctx);
    for (asset, versions) in &world.repo.records {
        if let Some(v) = versions.last() {
            for e in &v.record.nft_history {
                ctx.bindings.insert(e.nft_id.clone(), asset.clone());
            }
        }
    }
    if let Ok(folded) = world.folded() {
        ctx.in_flight = folded.in_flight();
        for s in folded.open_sessions() {
            ctx.open_sources.insert(s.source.clone());
            if let Some(d) = &s.dest {
                ctx.bindings.insert(d.clone(), s.asset_id.clone());
            }
        }
    }
    check_single_live(&mut ctx);
    check_public_uri(&mut ctx);
    check_hidden_hash(&mut ctx);
    check_forward_refs(&mut ctx);
    check_policy_log(&mut ctx);
    check_delivery(&mut ctx);
    check_correlations(&mut ctx);
    check_reconfig(&mut ctx);

    let mut violations = ctx.out;
    violations.sort();
    violations.dedup();
    let checks = CheckId::ALL
        .iter()
        .map(|&check| {
            let n = violations.iter().filter(|v| v.check == check).count();
            CheckSummary {
                check,
                title: check.title().to_owned(),
                passed: n == 0,
                violations: n,
            }
        })
        .collect();
    AuditReport {
        checked_at_seq: world.ledger.next_gseq,
        checks,
        violations,
    }
}

fn tokens(
    world: &World,
) -> impl Iterator<
    Item = (
        NftId,
        &crate::contract::NftContract,
        &crate::contract::TokenState,
    ),
> {
    world.ledger.chains.values().flat_map(|chain| {
        chain.contracts.values().flat_map(move |c| {
            c.tokens.values().map(move |t| {
                (
                    NftId::new(
                        chain.chain_id.clone(),
                        c.address.clone(),
                        t.token_id.clone(),
                    ),
                    c,
                    t,
                )
            })
        })
    })
}

fn check_single_live(ctx: &mut Ctx) {
    let mut live: BTreeMap<AssetId, Vec<NftId>> = BTreeMap::new();
    for (nft, _, t) in tokens(ctx.world) {
        let is_live = t.status == TokenStatus::Active
            || (t.status == TokenStatus::Locked && ctx.open_sources.contains(&nft));
        if let (true, Some(asset)) = (is_live, ctx.bindings.get(&nft)) {
            live.entry(asset.clone()).or_default().push(nft);
        }
    }
    for (asset, nfts) in live {
        if nfts.len() > 1 {
            let list: Vec<String> = nfts.iter().map(NftId::canonical).collect();
            ctx.flag(
                CheckId::C1,
                &asset,
                format!("{} live NFTs: {}", nfts.len(), list.join(", ")),
            );
        }
    }
}

fn check_public_uri(ctx: &mut Ctx) {
    let world = ctx.world;
    for (nft, c, t) in tokens(world) {
        if c.policy.hidden_metadata || t.status != TokenStatus::Active || ctx.exempt(&nft) {
            continue;
        }
        let Some(uri) = &t.attributes.token_uri else {
            ctx.flag(CheckId::C2, &nft, "no token_uri");
            continue;
        };
        match world.repo.route_uri(uri) {
            Some(routed) if routed == nft => {}
            Some(routed) => {
                ctx.flag(CheckId::C2, &nft, format!("token_uri routes to {routed}"));
                continue;
            }
            None => {
                ctx.flag(CheckId::C2, &nft, format!("token_uri {uri} does not route"));
                continue;
            }
        }
        let record = ctx.bindings.get(&nft).and_then(|a| world.repo.current(a));
        match record {
            Some(r) if r.nft_id == nft => {}
            Some(r) => ctx.flag(
                CheckId::C2,
                &nft,
                format!("record {} is bound to {}", r.asset_id, r.nft_id),
            ),
            None => ctx.flag(CheckId::C2, &nft, "no record"),
        }
    }
}

fn check_hidden_hash(ctx: &mut Ctx) {
    let world = ctx.world;
    for (asset, versions) in &world.repo.records {
        for v in versions {
            if metadata_hash(&v.record) != v.digest {
                ctx.flag(
                    CheckId::C3,
                    asset,
                    format!("stored digest of v{} does not recompute", v.record.version),
                );
            }
        }
    }
    for (nft, c, t) in tokens(world) {
        if !c.policy.hidden_metadata || t.status != TokenStatus::Active || ctx.exempt(&nft) {
            continue;
        }
        if t.attributes.token_uri.is_some() {
            ctx.flag(CheckId::C3, &nft, "hidden token carries token_uri");
        }
        let stored = ctx
            .bindings
            .get(&nft)
            .and_then(|a| world.repo.current_stored(a));
        match (stored, &t.attributes.metadata_hash) {
            (Some(s), Some(h)) if &s.digest == h => {}
            (Some(s), _) => ctx.flag(
                CheckId::C3,
                &nft,
                format!("hash differs from v{}", s.record.version),
            ),
            (None, _) => ctx.flag(CheckId::C3, &nft, "no record"),
        }
    }
}

fn check_forward_refs(ctx: &mut Ctx) {
    let world = ctx.world;
    for (nft, _, t) in tokens(world) {
        let (TokenStatus::Burned, Some(fwd)) = (t.status, &t.forward_ref) else {
            continue;
        };
        if ctx.exempt(&nft) {
            continue;
        }
        let Some(record) = ctx.bindings.get(&nft).and_then(|a| world.repo.current(a)) else {
            ctx.flag(
                CheckId::C4,
                &nft,
                "burned with forward_ref but bound to no record",
            );
            continue;
        };
        let hist = &record.nft_history;
        let here = hist.iter().position(|e| e.nft_id == nft);
        let next = here.and_then(|i| hist.get(i + 1));
        match next {
            Some(e) if &e.nft_id == fwd && e.reason == HistoryReason::CrossChainMoved => {}
            _ => {
                ctx.flag(
                    CheckId::C4,
                    &nft,
                    format!("no cross-chain successor entry for {fwd}"),
                );
                continue;
            }
        }
        match world.ledger.token(fwd) {
            Some(s) if s.status != TokenStatus::Pending => {}
            _ => ctx.flag(
                CheckId::C4,
                &nft,
                format!("successor {fwd} missing or pending"),
            ),
        }
    }
}

fn check_policy_log(ctx: &mut Ctx) {
    let world = ctx.world;
    for chain in world.ledger.chains.values() {
        let mut status: BTreeMap<NftId, (TokenStatus, bool)> = BTreeMap::new();
        for tx in &chain.tx_log {
            if !matches!(tx.result, TxResult::Accepted) {
                if !tx.events.is_empty() {
                    ctx.flag(
                        CheckId::C5,
                        format!("{}#{}", chain.chain_id, tx.seq),
                        "rejected tx emitted events",
                    );
                }
                continue;
            }
            for e in &tx.events {
                let nft = e.nft_id();
                let Some(c) = chain.contracts.get(&e.contract_addr) else {
                    ctx.flag(CheckId::C5, &nft, "event from unknown contract");
                    continue;
                };
                let p = c.policy;
                let tag = format!("{}#{}", nft, e.seq);
                match e.kind {
                    EventKind::Minted => {
                        let st = match e.detail.get("status").map(String::as_str) {
                            Some("pending") => TokenStatus::Pending,
                            _ => TokenStatus::Active,
                        };
                        status.insert(nft.clone(), (st, false));
                    }
                    EventKind::Transferred => {
                        if e.detail.contains_key("payment") && !p.tradeable {
                            ctx.flag(CheckId::C5, &tag, "trade on non-tradeable contract");
                        }
                        if !p.transferable {
                            ctx.flag(CheckId::C5, &tag, "transfer on non-transferable contract");
                        }
                        match status.get(&nft) {
                            Some((TokenStatus::Active, _)) => {}
                            Some((s, _)) => {
                                ctx.flag(CheckId::C5, &tag, format!("owner op on {s:?} token"))
                            }
                            None => ctx.flag(CheckId::C5, &tag, "transfer of unminted token"),
                        }
                    }
                    EventKind::Locked => {
                        status.insert(nft.clone(), (TokenStatus::Locked, false));
                    }
                    EventKind::Unlocked | EventKind::Activated => {
                        status.insert(nft.clone(), (TokenStatus::Active, false));
                    }
                    EventKind::Burned => {
                        status.insert(nft.clone(), (TokenStatus::Burned, true));
                    }
                    EventKind::Discarded => {
                        status.remove(&nft);
                    }
                    EventKind::AttributeSet => {}
                }
                if p.hidden_metadata && e.detail.contains_key("token_uri") {
                    ctx.flag(CheckId::C5, &tag, "token_uri on hidden contract");
                }
            }
        }
    }
}

fn check_delivery(ctx: &mut Ctx) {
    let world = ctx.world;
    let mut per_asset: BTreeMap<&AssetId, usize> = BTreeMap::new();
    for d in &world.custody.deliveries {
        *per_asset.entry(&d.asset_id).or_default() += 1;
    }
    for (asset, n) in &per_asset {
        if *n > 1 {
            ctx.flag(CheckId::C6, asset, format!("{n} deliveries"));
        }
    }
    for d in &world.custody.deliveries {
        let Some(rec) = world.custody.assets.get(&d.asset_id) else {
            ctx.flag(CheckId::C6, &d.asset_id, "delivery of unknown asset");
            continue;
        };
        if rec.delivered_to.as_ref() != Some(&d.recipient) {
            ctx.flag(
                CheckId::C6,
                &d.asset_id,
                "custody recipient differs from delivery",
            );
        }
        let Some(burn) = &rec.burn else {
            ctx.flag(CheckId::C6, &d.asset_id, "delivery without burn");
            continue;
        };
        if burn.nft_id != d.nft_id || burn.burner != d.recipient || burn.burn_gseq >= d.at {
            ctx.flag(
                CheckId::C6,
                &d.asset_id,
                "burn evidence does not precede delivery",
            );
            continue;
        }
        let found = world
            .ledger
            .chains
            .get(&d.nft_id.chain_id)
            .is_some_and(|chain| {
                chain.tx_log.iter().any(|tx| {
                    tx.gseq == burn.burn_gseq
                        && tx.events.iter().any(|e| {
                            e.kind == EventKind::Burned
                                && e.nft_id() == d.nft_id
                                && e.caller == d.recipient
                                && !e.detail.contains_key("forward_ref")
                        })
                })
            });
        if !found {
            ctx.flag(
                CheckId::C6,
                &d.asset_id,
                format!(
                    "no owner burn by {} at gseq {}",
                    d.recipient, burn.burn_gseq
                ),
            );
        }
    }
    for (asset, rec) in &world.custody.assets {
        if rec.delivered_to.is_some() && !per_asset.contains_key(asset) {
            ctx.flag(CheckId::C6, asset, "marked delivered with no delivery");
        }
    }
}

fn check_correlations(ctx: &mut Ctx) {
    let world = ctx.world;
    let live: Vec<_> = world.sync.correlations.iter().filter(|c| c.live).collect();
    let mut by_asset: BTreeMap<&AssetId, usize> = BTreeMap::new();
    let mut by_nft: BTreeMap<&NftId, usize> = BTreeMap::new();
    for c in &live {
        *by_asset.entry(&c.asset_id).or_default() += 1;
        *by_nft.entry(&c.nft_id).or_default() += 1;
    }
    for (a, n) in by_asset {
        if n > 1 {
            ctx.flag(CheckId::C7, a, format!("{n} live correlations"));
        }
    }
    for (nft, n) in by_nft {
        if n > 1 {
            ctx.flag(CheckId::C7, nft, format!("correlated to {n} assets"));
        }
    }
    let mut seen: BTreeMap<&NftId, &AssetId> = BTreeMap::new();
    for (asset, versions) in &world.repo.records {
        let Some(v) = versions.last() else { continue };
        for e in &v.record.nft_history {
            if let Some(other) = seen.insert(&e.nft_id, asset) {
                if other != asset {
                    ctx.flag(
                        CheckId::C7,
                        &e.nft_id,
                        format!("in history of {other} and {asset}"),
                    );
                }
            }
        }
    }
    for (asset, versions) in &world.repo.records {
        let Some(v) = versions.last() else { continue };
        if ctx.in_flight.contains(asset) {
            continue;
        }
        let corr = live.iter().find(|c| &c.asset_id == asset);
        let r = &v.record;
        match (r.is_terminal(), corr) {
            (false, Some(c)) if c.nft_id == r.nft_id => {}
            (false, Some(c)) => ctx.flag(
                CheckId::C7,
                asset,
                format!("correlated to {} but record names {}", c.nft_id, r.nft_id),
            ),
            (false, None) => ctx.flag(CheckId::C7, asset, "record has no live correlation"),
            (true, Some(_)) => ctx.flag(CheckId::C7, asset, "burned record still correlated"),
            (true, None) => {}
        }
    }
}

fn check_reconfig(ctx: &mut Ctx) {
    let world = ctx.world;
    for chain in world.ledger.chains.values() {
        for (addr, c) in &chain.contracts {
            let subject = format!("{}/{}", chain.chain_id, addr);
            let initial = chain.tx_log.iter().find_map(|tx| {
                if tx.op_name != "deploy" || &tx.target != addr || !tx.result.is_accepted() {
                    return None;
                }
                match serde_json::from_str(&tx.payload) {
                    Ok(ContractCall::Deploy { endpoint, .. }) => Some(endpoint),
                    _ => None,
                }
            });
            let Some(mut endpoint) = initial else {
                ctx.flag(CheckId::C8, &subject, "no deploy transaction");
                continue;
            };
            for entry in &c.resolution.reconfig_log {
                if entry.old != endpoint {
                    ctx.flag(
                        CheckId::C8,
                        &subject,
                        format!("log entry at seq {} breaks the chain", entry.seq),
                    );
                }
                if entry.authorizer != c.authority {
                    ctx.flag(
                        CheckId::C8,
                        &subject,
                        format!("change by {} at seq {}", entry.authorizer, entry.seq),
                    );
                }
                endpoint = entry.new.clone();
            }
            if endpoint != c.resolution.metadata_repo_endpoint {
                ctx.flag(
                    CheckId::C8,
                    &subject,
                    "endpoint differs from last logged value",
                );
            }
        }
    }
}

/// Independent restatement of the phase grammar, so a bug in the engine's
/// fold cannot hide itself.
fn check_journal(ctx: &mut Ctx) {
    fn transfer_ok(prev: Option<&str>, next: &str) -> bool {
        matches!(
            (prev, next),
            (None, "started")
                | (Some("started"), "source_locked")
                | (Some("source_locked"), "dest_pending")
                | (Some("dest_pending"), "source_burned")
                | (Some("source_burned"), "dest_activated")
                | (Some("dest_activated"), "committed")
                | (
                    Some("started" | "source_locked" | "dest_pending"),
                    "reverted"
                )
        )
    }
    const DEPLOY: [&str; 5] = [
        "staged",
        "record_put",
        "token_minted",
        "correlated",
        "committed",
    ];
    fn deploy_ok(prev: Option<&str>, next: &str) -> bool {
        let pos = |p: &str| DEPLOY.iter().position(|q| *q == p);
        match prev {
            None => next == "staged",
            Some(p) => pos(next).zip(pos(p)).is_some_and(|(n, p)| n == p + 1),
        }
    }
    fn phase_name<T: Serialize>(step: &T) -> String {
        serde_json::to_value(step)
            .ok()
            .and_then(|v| v.get("phase").and_then(|p| p.as_str()).map(str::to_owned))
            .unwrap_or_default()
    }

    let journal = &ctx.world.sync.journal;
    let mut sessions: BTreeMap<u64, String> = BTreeMap::new();
    let mut deploys: BTreeMap<u64, String> = BTreeMap::new();
    let mut last_seq = None;
    let mut found = Vec::new();
    for e in journal {
        if last_seq.is_some_and(|s| e.seq <= s) {
            found.push((
                format!("journal#{}", e.seq),
                "sequence not increasing".to_owned(),
            ));
        }
        last_seq = Some(e.seq);
        match &e.record {
            JournalRecord::Transfer { session, step } => {
                let next = phase_name(step);
                let prev = sessions.get(session).map(String::as_str);
                if !transfer_ok(prev, &next) {
                    found.push((
                        format!("session {session}"),
                        format!("{next} after {}", prev.unwrap_or("nothing")),
                    ));
                }
                if let TransferStep::DestPending { dest } = step {
                    if !ctx.world.ledger.chains.contains_key(&dest.chain_id) {
                        found.push((
                            format!("session {session}"),
                            "destination chain unknown".into(),
                        ));
                    }
                }
                sessions.insert(*session, next);
            }
            JournalRecord::Deploy { job, step } => {
                let next = phase_name(step);
                let prev = deploys.get(job).map(String::as_str);
                if !deploy_ok(prev, &next) {
                    found.push((
                        format!("deploy {job}"),
                        format!("{next} after {}", prev.unwrap_or("nothing")),
                    ));
                }
                deploys.insert(*job, next);
            }
        }
    }
    for (subject, detail) in found {
        ctx.flag(CheckId::C9, subject, detail);
    }
}
