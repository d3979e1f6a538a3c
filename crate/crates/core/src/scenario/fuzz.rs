//! Seeded random scenarios. Each scenario is generated adaptively (actors
//! are picked from the live world so most operations are plausible), then
//! run a second time with random crash injections. Both runs audit after
//! every transaction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::audit::{CheckId, Violation};
use crate::canon::to_canonical_bytes;
use crate::contract::Pattern;
use crate::ids::{Account, AssetId, ChainId};
use crate::repo::CredentialScope;
use crate::sync::CrashPoint;

use super::runner::{effective_header, Outcome, RunOptions, RunOutcome, Runner};
use super::{
    run_scenario, Action, InitStepSpec, Injection, PolicySpec, Scenario, Step,
    SCENARIO_FORMAT_VERSION,
};

pub const SUMMARY_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FuzzAction {
    Deploy,
    Update,
    Transfer,
    Trade,
    Burn,
    Xchain,
    Metadata,
    Credential,
    Reconfigure,
    Audit,
}

impl FuzzAction {
    pub const ALL: [FuzzAction; 10] = [
        FuzzAction::Deploy,
        FuzzAction::Update,
        FuzzAction::Transfer,
        FuzzAction::Trade,
        FuzzAction::Burn,
        FuzzAction::Xchain,
        FuzzAction::Metadata,
        FuzzAction::Credential,
        FuzzAction::Reconfigure,
        FuzzAction::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FuzzAction::Deploy => "deploy",
            FuzzAction::Update => "update",
            FuzzAction::Transfer => "transfer",
            FuzzAction::Trade => "trade",
            FuzzAction::Burn => "burn",
            FuzzAction::Xchain => "xchain",
            FuzzAction::Metadata => "metadata",
            FuzzAction::Credential => "credential",
            FuzzAction::Reconfigure => "reconfigure",
            FuzzAction::Audit => "audit",
        }
    }

    fn default_weight(self) -> u32 {
        match self {
            FuzzAction::Deploy => 2,
            FuzzAction::Update => 4,
            FuzzAction::Transfer => 4,
            FuzzAction::Trade => 3,
            FuzzAction::Burn => 1,
            FuzzAction::Xchain => 3,
            FuzzAction::Metadata => 2,
            FuzzAction::Credential => 1,
            FuzzAction::Reconfigure => 1,
            FuzzAction::Audit => 1,
        }
    }
}

/// Action and pattern weights, e.g. `transfer=5,burn=0,hidden=3`.
/// Unnamed keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mix {
    pub actions: Vec<(FuzzAction, u32)>,
    pub patterns: Vec<(Pattern, u32)>,
}

impl Default for Mix {
    fn default() -> Self {
        Self {
            actions: FuzzAction::ALL
                .iter()
                .map(|a| (*a, a.default_weight()))
                .collect(),
            patterns: Pattern::ALL.iter().map(|p| (*p, 1)).collect(),
        }
    }
}

impl Mix {
    pub fn parse(spec: &str) -> Result<Mix, String> {
        let mut mix = Mix::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=weight, got {part:?}"))?;
            let w: u32 = value
                .trim()
                .parse()
                .map_err(|_| format!("bad weight in {part:?}"))?;
            let key = key.trim();
            if let Some(slot) = mix.actions.iter_mut().find(|(a, _)| a.name() == key) {
                slot.1 = w;
            } else if let Some(slot) = mix.patterns.iter_mut().find(|(p, _)| p.name() == key) {
                slot.1 = w;
            } else {
                return Err(format!("unknown mix key {key:?}"));
            }
        }
        if mix.actions.iter().all(|(_, w)| *w == 0) {
            return Err("every action weight is zero".into());
        }
        if mix.patterns.iter().all(|(_, w)| *w == 0) {
            return Err("every pattern weight is zero".into());
        }
        Ok(mix)
    }

    pub fn spec(&self) -> String {
        self.actions
            .iter()
            .map(|(a, w)| format!("{}={w}", a.name()))
            .chain(
                self.patterns
                    .iter()
                    .map(|(p, w)| format!("{}={w}", p.name())),
            )
            .collect::<Vec<_>>()
            .join(",")
    }

    fn pick_action(&self, rng: &mut ChaCha8Rng) -> FuzzAction {
        self.actions
            .choose_weighted(rng, |(_, w)| *w)
            .expect("non-zero weights")
            .0
    }

    fn pick_pattern(&self, rng: &mut ChaCha8Rng) -> Pattern {
        self.patterns
            .choose_weighted(rng, |(_, w)| *w)
            .expect("non-zero weights")
            .0
    }
}

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub n: u64,
    pub seed: u64,
    pub mix: Mix,
    /// Random steps after setup.
    pub steps: std::ops::RangeInclusive<usize>,
    /// Runs scenarios on all available threads; results are merged in
    /// scenario order, so the summary does not change.
    pub parallel: bool,
}

impl FuzzConfig {
    pub fn new(n: u64, seed: u64) -> Self {
        Self {
            n,
            seed,
            mix: Mix::default(),
            steps: 16..=28,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailingRun {
    pub scenario: u64,
    pub crashed: bool,
    pub checks: Vec<CheckId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FuzzSummary {
    pub format_version: u32,
    pub n: u64,
    pub seed: u64,
    pub mix: String,
    pub runs: u64,
    pub steps: u64,
    pub tx_audits: u64,
    pub crashes_injected: u64,
    pub crashes_fired: u64,
    pub violations: BTreeMap<String, u64>,
    pub total_violations: u64,
    /// Contract rejections seen by scenario steps, by reject code.
    pub rejections: BTreeMap<String, u64>,
    /// Engine-level step errors, by error code.
    pub errors: BTreeMap<String, u64>,
    pub failing: Vec<FailingRun>,
}

impl FuzzSummary {
    fn empty(cfg: &FuzzConfig) -> Self {
        Self {
            format_version: SUMMARY_FORMAT_VERSION,
            n: cfg.n,
            seed: cfg.seed,
            mix: cfg.mix.spec(),
            runs: 0,
            steps: 0,
            tx_audits: 0,
            crashes_injected: 0,
            crashes_fired: 0,
            violations: CheckId::ALL
                .iter()
                .map(|c| (c.name().to_owned(), 0))
                .collect(),
            total_violations: 0,
            rejections: BTreeMap::new(),
            errors: BTreeMap::new(),
            failing: Vec::new(),
        }
    }

    pub fn violations_of(&self, check: CheckId) -> u64 {
        self.violations.get(check.name()).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> Vec<u8> {
        to_canonical_bytes(self)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "fuzz: {} scenarios, {} runs, {} steps, {} tx audits, {} crashes fired of {} injected\n",
            self.n, self.runs, self.steps, self.tx_audits, self.crashes_fired, self.crashes_injected
        );
        out.push_str(&format!("violations: {}\n", self.total_violations));
        for (check, n) in &self.violations {
            out.push_str(&format!("  {check} {n}\n"));
        }
        out.push_str("rejections:\n");
        for (code, n) in &self.rejections {
            out.push_str(&format!("  {code} {n}\n"));
        }
        out.push_str("errors:\n");
        for (code, n) in &self.errors {
            out.push_str(&format!("  {code} {n}\n"));
        }
        out
    }

    fn absorb(&mut self, index: u64, scenario: &Scenario, run: &RunOutcome, crashed: bool) {
        self.runs += 1;
        self.steps += scenario.steps.len() as u64;
        self.tx_audits += run.tx_audits;
        let mut found: std::collections::BTreeSet<&Violation> = run.tx_violations.iter().collect();
        found.extend(run.report.violations.iter());
        for r in &run.recovery_reports {
            found.extend(r.violations.iter());
        }
        for v in &found {
            *self
                .violations
                .entry(v.check.name().to_owned())
                .or_default() += 1;
            self.total_violations += 1;
        }
        if !found.is_empty() {
            let mut checks: Vec<CheckId> = found.iter().map(|v| v.check).collect();
            checks.dedup();
            self.failing.push(FailingRun {
                scenario: index,
                crashed,
                checks,
            });
        }
        for e in &run.trace.entries {
            match (e.outcome, &e.code) {
                (Outcome::Rejected, Some(code)) => {
                    *self.rejections.entry(code.clone()).or_default() += 1
                }
                (Outcome::Error, Some(code)) => *self.errors.entry(code.clone()).or_default() += 1,
                _ => {}
            }
            if let Some(c) = &e.crash {
                self.crashes_injected += 1;
                self.crashes_fired += u64::from(c.fired);
            }
        }
    }
}

/// Both runs of one fuzz scenario.
pub struct FuzzCase {
    pub index: u64,
    pub scenario: Scenario,
    pub clean: RunOutcome,
    pub crashed: RunOutcome,
}

const USERS: [&str; 4] = ["alice", "bob", "carol", "dave"];
const AUTHORITY: &str = "engine";
const STATES: [&str; 5] = [
    "in transit",
    "inspected",
    "in storage",
    "on loan",
    "restored",
];

struct Gen<'a> {
    rng: ChaCha8Rng,
    mix: &'a Mix,
    runner: Runner,
    steps: Vec<Step>,
    chains: Vec<ChainId>,
    /// (asset, creator, custodian)
    assets: Vec<(AssetId, Account, Account)>,
    credentials: Vec<String>,
    counter: u64,
}

impl Gen<'_> {
    fn push(&mut self, actor: &str, action: Action) {
        let step = action.to_step(&Account::new(actor));
        let i = self.steps.len();
        self.runner.execute(i, &step, None);
        self.steps.push(step);
    }

    fn user(&mut self) -> &'static str {
        USERS[self.rng.gen_range(0..USERS.len())]
    }

    fn chain(&mut self) -> ChainId {
        self.chains.choose(&mut self.rng).expect("chains").clone()
    }

    fn owner_of(&self, asset: &AssetId) -> Option<Account> {
        let nft = self.runner.live_nft(asset)?;
        let e = self.runner.engine()?;
        Some(e.world().ledger.token(&nft)?.owner.clone())
    }

    fn new_asset(&mut self) {
        let k = self.assets.len();
        let maker = format!("maker{}", k % 2);
        let asset: AssetId = format!("{maker}:item-{k}").parse().expect("valid asset id");
        let custodian = if self.rng.gen_bool(0.2) {
            Account::new(&maker)
        } else {
            Account::new("vault")
        };
        self.push(
            &maker,
            Action::PlaceCustody {
                asset: asset.clone(),
                custodian: Some(custodian.clone()),
            },
        );
        let pattern = self.mix.pick_pattern(&mut self.rng);
        let chain = self.chain();
        let mut content = crate::repo::Content::new();
        content.insert("name".into(), json!(format!("Item {k}")));
        content.insert("serial".into(), json!(k));
        content.insert("edition".into(), json!(self.rng.gen_range(1..=50)));
        self.push(
            &maker,
            Action::DeployAsset {
                asset: asset.clone(),
                chain,
                policy: PolicySpec::Preset(pattern.name().into()),
                content,
            },
        );
        self.assets.push((asset, Account::new(&maker), custodian));
    }

    fn any_asset(&mut self) -> (AssetId, Account, Account) {
        self.assets.choose(&mut self.rng).expect("assets").clone()
    }

    fn owner_or_other(&mut self, asset: &AssetId, creator: &Account, p_owner: f64) -> String {
        let owner = self.owner_of(asset).unwrap_or_else(|| creator.clone());
        if self.rng.gen_bool(p_owner) {
            owner.as_str().to_owned()
        } else {
            self.user().to_owned()
        }
    }

    fn random_step(&mut self) {
        self.counter += 1;
        match self.mix.pick_action(&mut self.rng) {
            FuzzAction::Deploy => {
                if self.rng.gen_bool(0.5) {
                    let (asset, creator, _) = self.any_asset();
                    let chain = self.chain();
                    let pattern = self.mix.pick_pattern(&mut self.rng);
                    self.push(
                        creator.as_str(),
                        Action::DeployAsset {
                            asset,
                            chain,
                            policy: PolicySpec::Preset(pattern.name().into()),
                            content: Default::default(),
                        },
                    );
                } else {
                    self.new_asset();
                }
            }
            FuzzAction::Update => {
                let (asset, _, custodian) = self.any_asset();
                let actor = if self.rng.gen_bool(0.9) {
                    custodian.as_str().to_owned()
                } else {
                    "mallory".to_owned()
                };
                let state = format!(
                    "{} #{}",
                    STATES[self.rng.gen_range(0..STATES.len())],
                    self.counter
                );
                self.push(&actor, Action::UpdateState { asset, state });
            }
            FuzzAction::Transfer => {
                let (asset, creator, _) = self.any_asset();
                let actor = self.owner_or_other(&asset, &creator, 0.8);
                let to = Account::new(self.user());
                self.push(&actor, Action::Transfer { asset, to });
            }
            FuzzAction::Trade => {
                let (asset, creator, _) = self.any_asset();
                let actor = self.owner_or_other(&asset, &creator, 0.8);
                let to = Account::new(self.user());
                let payment = self.rng.gen_range(1..=10_000);
                self.push(&actor, Action::Trade { asset, to, payment });
            }
            FuzzAction::Burn => {
                let (asset, creator, _) = self.any_asset();
                let actor = self.owner_or_other(&asset, &creator, 0.7);
                self.push(&actor, Action::Burn { asset });
            }
            FuzzAction::Xchain => {
                let (asset, creator, _) = self.any_asset();
                let actor = self.owner_or_other(&asset, &creator, 0.85);
                let dest_chain = self.chain();
                self.push(&actor, Action::XchainTransfer { asset, dest_chain });
            }
            FuzzAction::Metadata => {
                let (asset, _, _) = self.any_asset();
                let credential = if !self.credentials.is_empty() && self.rng.gen_bool(0.5) {
                    self.credentials.choose(&mut self.rng).cloned()
                } else {
                    None
                };
                let action = match self.rng.gen_range(0..3) {
                    0 => Action::GetMetadata {
                        asset: Some(asset),
                        nft: None,
                        via_token_uri: None,
                        credential,
                    },
                    1 => Action::GetMetadata {
                        asset: None,
                        nft: None,
                        via_token_uri: Some(asset),
                        credential,
                    },
                    _ => match self.runner.live_nft(&asset) {
                        Some(nft) => Action::GetMetadata {
                            asset: None,
                            nft: Some(nft.canonical()),
                            via_token_uri: None,
                            credential,
                        },
                        None => Action::GetMetadata {
                            asset: Some(asset),
                            nft: None,
                            via_token_uri: None,
                            credential,
                        },
                    },
                };
                let reader = self.user();
                self.push(reader, action);
            }
            FuzzAction::Credential => {
                let (asset, creator, _) = self.any_asset();
                let scope = if self.rng.gen_bool(0.5) {
                    CredentialScope::Namespace(asset.namespace().to_owned())
                } else {
                    CredentialScope::Asset(asset)
                };
                let label = format!("cred{}", self.counter);
                let actor = if self.rng.gen_bool(0.9) {
                    creator.as_str().to_owned()
                } else {
                    self.user().to_owned()
                };
                self.credentials.push(label.clone());
                self.push(&actor, Action::IssueCredential { label, scope });
            }
            FuzzAction::Reconfigure => {
                let (asset, _, _) = self.any_asset();
                let actor = if self.rng.gen_bool(0.5) {
                    AUTHORITY.to_owned()
                } else {
                    self.user().to_owned()
                };
                let endpoint = format!("https://repo.sim/alt{}", self.counter);
                self.push(&actor, Action::Reconfigure { asset, endpoint });
            }
            FuzzAction::Audit => self.push(AUTHORITY, Action::Audit {}),
        }
    }
}

fn case_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Generates scenario `index` of a fuzz campaign, running it (without
/// crashes) on the way.
pub fn generate(
    seed: u64,
    index: u64,
    mix: &Mix,
    steps: std::ops::RangeInclusive<usize>,
) -> (Scenario, RunOutcome) {
    let scenario_seed = seed.wrapping_add(index);
    let mut g = Gen {
        rng: case_rng(seed, index),
        mix,
        runner: Runner::new(scenario_seed, true),
        steps: Vec::new(),
        chains: Vec::new(),
        assets: Vec::new(),
        credentials: Vec::new(),
        counter: 0,
    };
    let n_chains = if g.rng.gen_bool(0.5) { 3 } else { 2 };
    for c in ["sim:a", "sim:b", "sim:c"].iter().take(n_chains) {
        let chain = ChainId::new(c).expect("valid chain id");
        g.chains.push(chain.clone());
        g.push(AUTHORITY, Action::CreateChain { chain });
    }
    let mut init = vec![
        InitStepSpec::Custody {
            endpoint: "https://custody.sim".into(),
        },
        InitStepSpec::Repo {
            endpoint: "https://repo.sim".into(),
        },
    ];
    for _ in 0..g.rng.gen_range(0..=2) {
        let chain = g.chain();
        let pattern = mix.pick_pattern(&mut g.rng);
        init.push(InitStepSpec::Contract {
            chain,
            policy: PolicySpec::Preset(pattern.name().into()),
            endpoint: None,
            address: None,
        });
    }
    g.push(
        AUTHORITY,
        Action::InitServices {
            authority: None,
            steps: init,
        },
    );
    for _ in 0..g.rng.gen_range(2..=4) {
        g.new_asset();
    }
    let n_steps = g.rng.gen_range(steps);
    for _ in 0..n_steps {
        g.random_step();
    }
    g.push(AUTHORITY, Action::Audit {});

    let scenario = Scenario {
        format_version: SCENARIO_FORMAT_VERSION,
        name: format!("fuzz-{seed}-{index}"),
        seed: scenario_seed,
        steps: g.steps,
        injections: Vec::new(),
    };
    let header = effective_header(&scenario, &RunOptions::default());
    let outcome = g.runner.finish(header);
    (scenario, outcome)
}

/// Random crash points on deploy and cross-chain steps.
pub fn pick_injections(scenario: &Scenario, rng: &mut ChaCha8Rng) -> Vec<Injection> {
    let mut out = Vec::new();
    for (i, step) in scenario.steps.iter().enumerate() {
        let points: &[CrashPoint] = match step.action.as_str() {
            "deploy_asset" => &CrashPoint::DEPLOY,
            "xchain_transfer" => &CrashPoint::TRANSFER,
            _ => continue,
        };
        if rng.gen_bool(0.5) {
            out.push(Injection {
                step: i,
                point: *points.choose(rng).expect("non-empty"),
            });
        }
    }
    out
}

pub fn run_case(cfg: &FuzzConfig, index: u64) -> FuzzCase {
    let (scenario, clean) = generate(cfg.seed, index, &cfg.mix, cfg.steps.clone());
    let mut rng = case_rng(cfg.seed ^ 0x5eed_c4a5, index);
    let injections = pick_injections(&scenario, &mut rng);
    let crashed = run_scenario(
        &scenario,
        &RunOptions {
            injections,
            audit_each_tx: true,
            ..RunOptions::default()
        },
    );
    FuzzCase {
        index,
        scenario,
        clean,
        crashed,
    }
}

pub fn fuzz(cfg: &FuzzConfig) -> FuzzSummary {
    let mut summary = FuzzSummary::empty(cfg);
    let absorb = |summary: &mut FuzzSummary, case: &FuzzCase| {
        summary.absorb(case.index, &case.scenario, &case.clean, false);
        summary.absorb(case.index, &case.scenario, &case.crashed, true);
    };
    if !cfg.parallel || cfg.n < 2 {
        for i in 0..cfg.n {
            absorb(&mut summary, &run_case(cfg, i));
        }
        return summary;
    }
    let threads = std::thread::available_parallelism()
        .map(|n| n.get() as u64)
        .unwrap_or(1)
        .min(cfg.n);
    let mut results: Vec<(u64, FuzzSummary)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                s.spawn(move || {
                    (t..cfg.n)
                        .step_by(threads as usize)
                        .map(|i| {
                            let mut part = FuzzSummary::empty(cfg);
                            absorb(&mut part, &run_case(cfg, i));
                            (i, part)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("fuzz worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);
    for (_, part) in results {
        summary.merge(part);
    }
    summary
}

impl FuzzSummary {
    fn merge(&mut self, other: FuzzSummary) {
        self.runs += other.runs;
        self.steps += other.steps;
        self.tx_audits += other.tx_audits;
        self.crashes_injected += other.crashes_injected;
        self.crashes_fired += other.crashes_fired;
        self.total_violations += other.total_violations;
        for (k, v) in other.violations {
            *self.violations.entry(k).or_default() += v;
        }
        for (k, v) in other.rejections {
            *self.rejections.entry(k).or_default() += v;
        }
        for (k, v) in other.errors {
            *self.errors.entry(k).or_default() += v;
        }
        self.failing.extend(other.failing);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_parsing() {
        let m = Mix::parse("transfer=9, hidden=0").unwrap();
        assert!(m.actions.contains(&(FuzzAction::Transfer, 9)));
        assert!(m.patterns.contains(&(Pattern::Hidden, 0)));
        assert_eq!(Mix::parse(&m.spec()).unwrap(), m);
        assert!(Mix::parse("teleport=1").is_err());
        assert!(Mix::parse("burn").is_err());
        assert!(Mix::parse("trade_only=0,cross_chain=0,hidden=0,zero_value=0").is_err());
    }

    #[test]
    fn zero_scenarios_give_empty_summary() {
        let s = fuzz(&FuzzConfig::new(0, 7));
        assert_eq!(s.runs, 0);
        assert_eq!(s.total_violations, 0);
        assert!(s.rejections.is_empty());
    }

    #[test]
    fn small_campaign_is_clean_and_repeatable() {
        let cfg = FuzzConfig::new(6, 42);
        let a = fuzz(&cfg);
        assert_eq!(a.total_violations, 0, "{}", a.to_text());
        assert_eq!(a.to_json(), fuzz(&cfg).to_json());
        let par = fuzz(&FuzzConfig {
            parallel: true,
            ..cfg.clone()
        });
        assert_eq!(a.to_json(), par.to_json());
    }
}
