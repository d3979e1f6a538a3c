//! Sequential scenario execution with crash injection and restart.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::audit::{audit_world, AuditReport, Violation};
use crate::canon::sha256;
use crate::contract::{ContractCall, TokenStatus};
use crate::ids::{parse_nft_id, Account, AssetId, NftId};
use crate::ledger::{Ledger, TxEnvelope};
use crate::repo::RecordRef;
use crate::sync::{
    initialize_services, CrashPoint, InitStep, ServicesConfig, SyncAction, SyncEngine, SyncError,
};
use crate::world::World;

use super::trace::{Trace, TraceHeader, TRACE_FORMAT_VERSION};
use super::{Action, Injection, Scenario, Step};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's seed.
    pub seed: Option<u64>,
    /// Added to the scenario's own injections.
    pub injections: Vec<Injection>,
    pub audit_each_tx: bool,
    /// Steps after which the engine is snapshotted and restarted without a
    /// crash. Invisible in the trace.
    pub restart_after: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Rejected,
    Error,
    Crashed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrashRecord {
    pub point: CrashPoint,
    pub fired: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub recovered: Vec<SyncAction>,
    /// Checks failing right after recovery.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub post_recovery_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub actor: Account,
    pub action: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub result: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crash: Option<CrashRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sync: Vec<SyncAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_error: Option<String>,
}

struct StepError {
    code: String,
    message: String,
}

impl From<SyncError> for StepError {
    fn from(e: SyncError) -> Self {
        StepError {
            code: e.code().to_owned(),
            message: e.to_string(),
        }
    }
}

fn step_err(code: &str, message: impl Into<String>) -> StepError {
    StepError {
        code: code.to_owned(),
        message: message.into(),
    }
}

enum Done {
    Ok(Value),
    Rejected(TxEnvelope),
}

/// What was on disk at an injected crash.
#[derive(Debug, Clone)]
pub struct Persisted {
    pub step: usize,
    pub point: CrashPoint,
    pub snapshot: Vec<u8>,
    pub journal: String,
}

pub struct RunOutcome {
    pub trace: Trace,
    pub world: World,
    pub report: AuditReport,
    pub tx_audits: u64,
    pub tx_violations: BTreeSet<Violation>,
    /// Audit reports taken right after each recovery.
    pub recovery_reports: Vec<AuditReport>,
    pub persisted: Vec<Persisted>,
}

pub struct Runner {
    seed: u64,
    audit_each_tx: bool,
    ledger: Option<Ledger>,
    engine: Option<SyncEngine>,
    credentials: BTreeMap<String, String>,
    tx_audits: u64,
    tx_violations: BTreeSet<Violation>,
    recovery_reports: Vec<AuditReport>,
    persisted: Vec<Persisted>,
    entries: Vec<TraceEntry>,
}

impl Runner {
    pub fn new(seed: u64, audit_each_tx: bool) -> Self {
        Self {
            seed,
            audit_each_tx,
            ledger: Some(Ledger::new()),
            engine: None,
            credentials: BTreeMap::new(),
            tx_audits: 0,
            tx_violations: BTreeSet::new(),
            recovery_reports: Vec::new(),
            persisted: Vec::new(),
            entries: Vec::new(),
        }
    }

    pub fn engine(&self) -> Option<&SyncEngine> {
        self.engine.as_ref()
    }

    pub fn engine_mut(&mut self) -> Option<&mut SyncEngine> {
        self.engine.as_mut()
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn credential(&self, label: &str) -> Option<&str> {
        self.credentials.get(label).map(String::as_str)
    }

    /// Live NFT of an asset, if any.
    pub fn live_nft(&self, asset: &AssetId) -> Option<NftId> {
        self.engine
            .as_ref()?
            .world()
            .sync
            .live_correlation(asset)
            .map(|c| c.nft_id.clone())
    }

    pub fn execute(
        &mut self,
        index: usize,
        step: &Step,
        inject: Option<CrashPoint>,
    ) -> &TraceEntry {
        if let (Some(p), Some(e)) = (inject, self.engine.as_mut()) {
            e.arm(p);
        }
        let mut entry = TraceEntry {
            step: index,
            actor: step.actor.clone(),
            action: step.action.clone(),
            outcome: Outcome::Ok,
            code: None,
            message: None,
            result: Value::Null,
            crash: None,
            sync: Vec::new(),
            sync_error: None,
        };
        let result = match step.action() {
            Ok(action) => self.perform(&step.actor, &action),
            Err(reason) => Err(step_err("bad_params", reason)),
        };
        match result {
            Ok(Done::Ok(v)) => entry.result = v,
            Ok(Done::Rejected(env)) => {
                let r = env.rejection().expect("rejected envelope");
                entry.outcome = Outcome::Rejected;
                entry.code = Some(r.code.as_str().to_owned());
                entry.message = Some(r.reason);
            }
            Err(e) if e.code == "crashed" => {
                entry.outcome = Outcome::Crashed;
                entry.message = Some(e.message);
                let point = inject.expect("only armed points fire");
                entry.crash = Some(self.restart_and_recover(index, point));
            }
            Err(e) => {
                entry.outcome = Outcome::Error;
                entry.code = Some(e.code);
                entry.message = Some(e.message);
            }
        }
        if let Some(p) = inject {
            if entry.crash.is_none() {
                entry.crash = Some(CrashRecord {
                    point: p,
                    fired: false,
                    recovered: Vec::new(),
                    post_recovery_failures: Vec::new(),
                });
            }
        }
        if let Some(e) = self.engine.as_mut() {
            e.disarm();
            match e.pump() {
                Ok(actions) => entry.sync = actions,
                Err(err) => entry.sync_error = Some(err.to_string()),
            }
        }
        self.entries.push(entry);
        self.entries.last().expect("just pushed")
    }

    /// Persists the world and journal, drops the engine and starts a new
    /// one from the persisted bytes.
    pub fn restart(&mut self) -> Result<(), SyncError> {
        self.persist_and_restart().map(|_| ())
    }

    fn persist_and_restart(&mut self) -> Result<Option<(Vec<u8>, String)>, SyncError> {
        let Some(old) = self.engine.as_mut() else {
            return Ok(None);
        };
        let bytes = old.snapshot();
        let journal = old.journal_lines();
        let (audits, violations) = old.take_tx_violations();
        self.tx_audits += audits;
        self.tx_violations.extend(violations);
        self.engine = None;
        let mut fresh = SyncEngine::restore(&bytes, Some(&journal))?;
        fresh.set_audit_each_tx(self.audit_each_tx);
        self.engine = Some(fresh);
        Ok(Some((bytes, journal)))
    }

    fn restart_and_recover(&mut self, step: usize, point: CrashPoint) -> CrashRecord {
        let mut rec = CrashRecord {
            point,
            fired: true,
            recovered: Vec::new(),
            post_recovery_failures: Vec::new(),
        };
        match self.persist_and_restart() {
            Ok(Some((snapshot, journal))) => self.persisted.push(Persisted {
                step,
                point,
                snapshot,
                journal,
            }),
            Ok(None) => {}
            Err(e) => {
                rec.post_recovery_failures.push(format!("restart: {e}"));
                return rec;
            }
        }
        let engine = self.engine.as_mut().expect("restarted");
        match engine.recover() {
            Ok(actions) => rec.recovered = actions,
            Err(e) => rec.post_recovery_failures.push(format!("recover: {e}")),
        }
        let report = audit_world(engine.world());
        rec.post_recovery_failures.extend(
            report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.check.name().to_owned()),
        );
        self.recovery_reports.push(report);
        rec
    }

    fn engine_or_err(&mut self) -> Result<&mut SyncEngine, StepError> {
        self.engine
            .as_mut()
            .ok_or_else(|| step_err("not_initialized", "services not initialized"))
    }

    fn live_or_err(&self, asset: &AssetId) -> Result<NftId, StepError> {
        self.live_nft(asset)
            .ok_or_else(|| step_err("not_bound", format!("asset {asset} has no live NFT")))
    }

    fn owner_call(
        &mut self,
        actor: &Account,
        nft: &NftId,
        call: ContractCall,
    ) -> Result<Done, StepError> {
        let env =
            self.engine_or_err()?
                .submit_call(&nft.chain_id, actor, &nft.contract_addr, &call)?;
        if env.rejection().is_some() {
            return Ok(Done::Rejected(env));
        }
        let status = self
            .engine_or_err()?
            .world()
            .ledger
            .token(nft)
            .map(|t| crate::contract::status_name(t.status));
        Ok(Done::Ok(
            json!({"nft_id": nft.canonical(), "seq": env.seq, "status": status}),
        ))
    }

    fn perform(&mut self, actor: &Account, action: &Action) -> Result<Done, StepError> {
        match action {
            Action::CreateChain { chain } => {
                match (self.engine.as_mut(), self.ledger.as_mut()) {
                    (Some(e), _) => e.create_chain(chain.clone())?,
                    (None, Some(l)) => {
                        l.create_chain(chain.clone()).map_err(SyncError::from)?;
                    }
                    (None, None) => unreachable!("ledger held until init"),
                }
                Ok(Done::Ok(json!({"chain": chain})))
            }
            Action::InitServices { authority, steps } => {
                if self.engine.is_some() {
                    return Err(step_err("order_violation", "services already initialized"));
                }
                let steps: Vec<InitStep> = steps
                    .iter()
                    .map(|s| s.resolve())
                    .collect::<Result<_, _>>()
                    .map_err(|e| step_err("bad_params", e))?;
                let config = ServicesConfig {
                    authority: authority.clone().unwrap_or_else(|| actor.clone()),
                    steps,
                };
                let ledger = self.ledger.clone().expect("ledger held until init");
                let mut engine = initialize_services(ledger, config)?;
                engine.world_mut().repo.set_credential_seed(self.seed);
                engine.set_audit_each_tx(self.audit_each_tx);
                let contracts: Vec<Value> = engine
                    .world()
                    .sync
                    .contracts
                    .iter()
                    .map(
                        |c| json!({"chain": c.chain_id, "address": c.addr, "endpoint": c.endpoint}),
                    )
                    .collect();
                self.engine = Some(engine);
                self.ledger = None;
                Ok(Done::Ok(json!({"contracts": contracts})))
            }
            Action::PlaceCustody { asset, custodian } => {
                let custodian = custodian.clone().unwrap_or_else(|| actor.clone());
                self.engine_or_err()?
                    .place_under_custody(asset, actor, &custodian)?;
                Ok(Done::Ok(json!({"asset_id": asset, "custodian": custodian})))
            }
            Action::DeployAsset {
                asset,
                chain,
                policy,
                content,
            } => {
                let policy = policy.resolve().map_err(|e| step_err("bad_params", e))?;
                let engine = self.engine_or_err()?;
                let nft = engine.deploy_asset(asset, chain, policy, content.clone(), actor)?;
                Ok(Done::Ok(self.token_view(&nft)))
            }
            Action::UpdateState { asset, state } => {
                let seq = self
                    .engine_or_err()?
                    .update_asset_state(asset, state, actor)?;
                Ok(Done::Ok(json!({"asset_id": asset, "seq": seq})))
            }
            Action::Transfer { asset, to } => {
                let nft = self.live_or_err(asset)?;
                self.owner_call(
                    actor,
                    &nft,
                    ContractCall::Transfer {
                        token_id: nft.token_id.clone(),
                        from: actor.clone(),
                        to: to.clone(),
                    },
                )
            }
            Action::Trade { asset, to, payment } => {
                let nft = self.live_or_err(asset)?;
                self.owner_call(
                    actor,
                    &nft,
                    ContractCall::Trade {
                        token_id: nft.token_id.clone(),
                        from: actor.clone(),
                        to: to.clone(),
                        payment: *payment,
                    },
                )
            }
            Action::Burn { asset } => {
                let nft = self.live_or_err(asset)?;
                self.owner_call(
                    actor,
                    &nft,
                    ContractCall::Burn {
                        token_id: nft.token_id.clone(),
                        forward_ref: None,
                    },
                )
            }
            Action::XchainTransfer { asset, dest_chain } => {
                let nft = self.live_or_err(asset)?;
                let dest = self
                    .engine_or_err()?
                    .cross_chain_transfer(&nft, dest_chain, actor)?;
                Ok(Done::Ok(
                    json!({"source": nft.canonical(), "dest": self.token_view(&dest)}),
                ))
            }
            Action::IssueCredential { label, scope } => {
                let token = self
                    .engine_or_err()?
                    .world_mut()
                    .repo
                    .issue_credential(scope.clone(), actor)
                    .map_err(SyncError::from)?;
                self.credentials.insert(label.clone(), token.clone());
                Ok(Done::Ok(json!({"label": label, "token": token})))
            }
            Action::GetMetadata {
                asset,
                nft,
                via_token_uri,
                credential,
            } => {
                let cred = match credential {
                    Some(label) => Some(
                        self.credentials
                            .get(label)
                            .cloned()
                            .ok_or_else(|| step_err("unknown_credential", label.clone()))?,
                    ),
                    None => None,
                };
                self.get_metadata(
                    asset.as_ref(),
                    nft.as_deref(),
                    via_token_uri.as_ref(),
                    cred.as_deref(),
                )
            }
            Action::Reconfigure { asset, endpoint } => {
                let nft = self.live_or_err(asset)?;
                let env = self.engine_or_err()?.reconfigure_endpoint(
                    &nft.chain_id,
                    &nft.contract_addr,
                    endpoint,
                    actor,
                )?;
                Ok(if env.rejection().is_some() {
                    Done::Rejected(env)
                } else {
                    Done::Ok(
                        json!({"contract": format!("{}/{}", nft.chain_id, nft.contract_addr), "endpoint": endpoint}),
                    )
                })
            }
            Action::Audit {} => {
                let report = audit_world(self.engine_or_err()?.world());
                Ok(Done::Ok(
                    serde_json::to_value(&report).expect("report serializes"),
                ))
            }
        }
    }

    fn token_view(&self, nft: &NftId) -> Value {
        let token = self
            .engine
            .as_ref()
            .and_then(|e| e.world().ledger.token(nft));
        match token {
            Some(t) => json!({
                "nft_id": nft.canonical(),
                "owner": t.owner,
                "status": crate::contract::status_name(t.status),
                "attributes": t.attributes,
            }),
            None => json!({"nft_id": nft.canonical()}),
        }
    }

    fn get_metadata(
        &mut self,
        asset: Option<&AssetId>,
        nft: Option<&str>,
        via_token_uri: Option<&AssetId>,
        credential: Option<&str>,
    ) -> Result<Done, StepError> {
        let world = self.engine_or_err()?.world();
        let (view, uri) = match (asset, nft, via_token_uri) {
            (Some(a), None, None) => (
                world
                    .repo
                    .get_record(&RecordRef::Asset(a.clone()), credential),
                None,
            ),
            (None, Some(n), None) => {
                let id = parse_nft_id(n).map_err(|e| step_err("bad_params", e.to_string()))?;
                (world.repo.get_record(&RecordRef::Nft(id), credential), None)
            }
            (None, None, Some(a)) => {
                let corr = world
                    .sync
                    .live_correlation(a)
                    .ok_or_else(|| step_err("not_bound", format!("asset {a} has no live NFT")))?;
                let token = world
                    .ledger
                    .token(&corr.nft_id)
                    .filter(|t| t.status == TokenStatus::Active)
                    .ok_or_else(|| step_err("not_active", corr.nft_id.canonical()))?;
                let uri = token
                    .attributes
                    .token_uri
                    .clone()
                    .ok_or_else(|| step_err("no_token_uri", corr.nft_id.canonical()))?;
                (world.repo.resolve_uri(&uri, credential), Some(uri))
            }
            _ => {
                return Err(step_err(
                    "bad_params",
                    "name exactly one of asset, nft, via_token_uri",
                ))
            }
        };
        let view = view.map_err(SyncError::from)?;
        let mut out = json!({
            "record": view.record,
            "digest": view.digest,
            "stale": view.stale,
        });
        if let Some(uri) = uri {
            out["token_uri"] = Value::from(uri);
        }
        Ok(Done::Ok(out))
    }

    /// Final audit plus everything collected along the way.
    pub fn finish(mut self, header: TraceHeader) -> RunOutcome {
        let world = match self.engine.take() {
            Some(mut e) => {
                let (audits, violations) = e.take_tx_violations();
                self.tx_audits += audits;
                self.tx_violations.extend(violations);
                e.into_world()
            }
            None => empty_world(self.ledger.take().unwrap_or_default()),
        };
        let report = audit_world(&world);
        let trace = Trace {
            header,
            entries: self.entries,
            report: report.clone(),
            world_digest: sha256(&world.snapshot()),
        };
        RunOutcome {
            trace,
            world,
            report,
            tx_audits: self.tx_audits,
            tx_violations: self.tx_violations,
            recovery_reports: self.recovery_reports,
            persisted: self.persisted,
        }
    }
}

/// World for a scenario that never initialized services.
fn empty_world(ledger: Ledger) -> World {
    let config = ServicesConfig {
        authority: Account::new("none"),
        steps: vec![
            InitStep::Custody {
                endpoint: String::new(),
            },
            InitStep::Repo {
                endpoint: String::new(),
            },
        ],
    };
    initialize_services(ledger, config)
        .expect("custody and repo only")
        .into_world()
}

pub fn effective_header(scenario: &Scenario, opts: &RunOptions) -> TraceHeader {
    let mut injections = scenario.injections.clone();
    injections.extend(opts.injections.iter().copied());
    injections.sort();
    injections.dedup();
    let mut scenario = scenario.clone();
    scenario.injections.clear();
    TraceHeader {
        format_version: TRACE_FORMAT_VERSION,
        seed: opts.seed.unwrap_or(scenario.seed),
        scenario,
        injections,
    }
}

pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> RunOutcome {
    run_with_header(effective_header(scenario, opts), opts)
}

pub(super) fn run_with_header(header: TraceHeader, opts: &RunOptions) -> RunOutcome {
    let mut runner = Runner::new(header.seed, opts.audit_each_tx);
    for (i, step) in header.scenario.steps.iter().enumerate() {
        let inject = header
            .injections
            .iter()
            .find(|inj| inj.step == i)
            .map(|inj| inj.point);
        runner.execute(i, step, inject);
        if opts.restart_after.contains(&i) {
            let _ = runner.restart();
        }
    }
    runner.finish(header)
}
