mod common;

use apnft_core::scenario::runner::Outcome;
use apnft_core::scenario::trace::{replay, ReplayOutcome};
use apnft_core::scenario::{Action, InitStepSpec, Injection, PolicySpec, Scenario, Step};
use apnft_core::sync::CrashPoint;
use apnft_core::{run_scenario, Account, AssetId, ChainId, RunOptions, TokenStatus};
use serde_json::json;

use common::load;

/// SHA-256 of the canonical Beeple record, computed by an external tool.
const BEEPLE_DIGEST: &str = "6dbe465bb8e76d1dc71e4d6e967d358aa5570f2bfb0c25aae8dc775f4037c264";

fn audited() -> RunOptions {
    RunOptions {
        audit_each_tx: true,
        ..RunOptions::default()
    }
}

fn asset(s: &str) -> AssetId {
    s.parse().unwrap()
}

fn step(actor: &str, action: Action) -> Step {
    action.to_step(&Account::new(actor))
}

fn scenario(name: &str, steps: Vec<Step>) -> Scenario {
    Scenario {
        format_version: 1,
        name: name.into(),
        seed: 7,
        steps,
        injections: Vec::new(),
    }
}

fn base_steps(policy: &str) -> Vec<Step> {
    let mut content = apnft_core::Content::new();
    content.insert("name".into(), json!("Lamp"));
    vec![
        step(
            "engine",
            Action::CreateChain {
                chain: ChainId::new("sim:a").unwrap(),
            },
        ),
        step(
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
        ),
        step(
            "maker",
            Action::PlaceCustody {
                asset: asset("maker:lamp"),
                custodian: Some("vault".into()),
            },
        ),
        step(
            "maker",
            Action::DeployAsset {
                asset: asset("maker:lamp"),
                chain: ChainId::new("sim:a").unwrap(),
                policy: PolicySpec::Preset(policy.into()),
                content,
            },
        ),
    ]
}

#[test]
fn beeple_fixture_resolves_to_the_human_one_record() {
    let out = run_scenario(&load("beeple.scenario"), &audited());
    assert!(out.report.is_clean(), "{}", out.report.to_table());
    assert!(out.tx_violations.is_empty());
    let entries = &out.trace.entries;
    assert!(entries.iter().all(|e| e.outcome == Outcome::Ok));

    let via_uri = &entries[4].result;
    assert_eq!(via_uri["token_uri"], "https://metadata.human-one.xyz/1");
    assert_eq!(via_uri["record"]["content"]["name"], "HUMAN ONE");
    assert_eq!(via_uri["digest"], BEEPLE_DIGEST);

    let by_nft = &entries[5].result;
    assert_eq!(by_nft["record"], via_uri["record"]);
    assert_eq!(by_nft["digest"], BEEPLE_DIGEST);

    let nft = out
        .world
        .sync
        .live_correlation(&asset("beeple:human-one"))
        .unwrap()
        .nft_id
        .clone();
    assert_eq!(
        nft.canonical(),
        "eip155:1/0xa4c38796c35dca618fe22a4e77f4210d0b0350d6/1"
    );
}

#[test]
fn trade_only_burn_delivers_once_to_the_burner() {
    let out = run_scenario(&load("tradeonly_burn.scenario"), &audited());
    assert!(out.report.is_clean(), "{}", out.report.to_table());
    assert!(out.tx_violations.is_empty());
    let e = &out.trace.entries;
    assert_eq!(e[7].outcome, Outcome::Rejected);
    assert_eq!(e[7].code.as_deref(), Some("not_authorized"));
    assert_eq!(e[8].outcome, Outcome::Ok);
    assert_eq!(e[8].result["status"], "burned");
    assert_eq!(e[9].outcome, Outcome::Error);

    let a = asset("acme:watch-7");
    let deliveries: Vec<_> = out
        .world
        .custody
        .deliveries
        .iter()
        .filter(|d| d.asset_id == a)
        .collect();
    assert_eq!(deliveries.len(), 1);
    assert_eq!(deliveries[0].recipient.as_str(), "bob");
    let rec = out.world.custody.get(&a).unwrap();
    assert_eq!(rec.delivered_to.as_ref().map(|x| x.as_str()), Some("bob"));
    let burn = rec.burn.as_ref().expect("burn evidence");
    assert_eq!(burn.burner.as_str(), "bob");
    assert!(burn.burn_gseq < deliveries[0].at);
    // No delivery before the burn was observed.
    for entry in &e[..8] {
        assert!(entry.sync.iter().all(|s| s.action != "delivered"));
    }
}

#[test]
fn crash_matrix_recovers_every_boundary() {
    let sc = load("xchain_crash_matrix.scenario");
    let out = run_scenario(&sc, &audited());
    assert!(out.report.is_clean(), "{}", out.report.to_table());
    assert!(out.tx_violations.is_empty(), "{:?}", out.tx_violations);
    assert_eq!(out.recovery_reports.len(), 5);
    assert!(out.recovery_reports.iter().all(|r| r.is_clean()));

    let prefix = Scenario {
        steps: sc.steps[..13].to_vec(),
        injections: Vec::new(),
        ..sc.clone()
    };
    let before = run_scenario(&prefix, &RunOptions::default());
    let folded = out.world.folded().unwrap();
    assert_eq!(folded.open_sessions().count(), 0);

    for (k, point) in CrashPoint::TRANSFER.iter().enumerate() {
        let entry = &out.trace.entries[13 + k];
        let crash = entry.crash.as_ref().expect("crash record");
        assert_eq!(crash.point, *point);
        assert!(crash.fired);
        assert!(crash.post_recovery_failures.is_empty());

        let a = asset(&format!("acme:x{}", k + 1));
        let live: Vec<_> = out
            .world
            .sync
            .correlations
            .iter()
            .filter(|c| c.asset_id == a && c.live)
            .collect();
        assert_eq!(live.len(), 1);
        let nft = &live[0].nft_id;
        let token = out.world.ledger.token(nft).unwrap();
        assert_eq!(token.status, TokenStatus::Active);
        assert_eq!(entry.outcome, Outcome::Crashed);
        let actions: Vec<_> = crash.recovered.iter().map(|s| s.action.as_str()).collect();
        if k < 3 {
            assert!(actions.contains(&"session_reverted"), "{entry:?}");
            assert_eq!(nft.chain_id.as_str(), "sim:a");
            let orig = before.world.ledger.token(nft).unwrap();
            assert_eq!(token.attributes, orig.attributes);
            assert_eq!(token.owner, orig.owner);
        } else {
            assert!(actions.contains(&"session_completed"), "{entry:?}");
            assert_eq!(nft.chain_id.as_str(), "sim:b");
        }
    }
}

#[test]
fn traces_are_byte_identical_across_runs() {
    for f in [
        "beeple.scenario",
        "tradeonly_burn.scenario",
        "xchain_crash_matrix.scenario",
    ] {
        let sc = load(f);
        let runs: Vec<_> = (0..3)
            .map(|_| run_scenario(&sc, &RunOptions::default()))
            .collect();
        let first = runs[0].trace.to_lines();
        for r in &runs[1..] {
            assert_eq!(r.trace.to_lines(), first);
            assert_eq!(r.report.to_json(), runs[0].report.to_json());
            assert_eq!(r.world.snapshot(), runs[0].world.snapshot());
        }
    }
}

#[test]
fn replay_matches_and_reports_first_divergent_line() {
    let sc = load("tradeonly_burn.scenario");
    let text = run_scenario(&sc, &RunOptions::default()).trace.to_lines();
    let n = text.lines().count();
    assert_eq!(replay(&text).unwrap(), ReplayOutcome::Match { lines: n });

    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    lines[4] = lines[4].replace("\"ok\"", "\"rejected\"");
    let tampered = lines.join("\n") + "\n";
    match replay(&tampered).unwrap() {
        ReplayOutcome::Divergent { line, .. } => assert_eq!(line, 5),
        other => panic!("expected divergence, got {other:?}"),
    }

    let truncated: String = text.lines().take(3).map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        replay(&truncated).unwrap(),
        ReplayOutcome::Divergent { line: 4, .. }
    ));
    assert!(replay("not json\n").is_err());
}

#[test]
fn replay_of_an_injected_trace_matches() {
    let text = run_scenario(
        &load("xchain_crash_matrix.scenario"),
        &RunOptions::default(),
    )
    .trace
    .to_lines();
    assert!(matches!(
        replay(&text).unwrap(),
        ReplayOutcome::Match { .. }
    ));
}

#[test]
fn restarts_between_steps_are_invisible() {
    for f in ["tradeonly_burn.scenario", "xchain_crash_matrix.scenario"] {
        let sc = load(f);
        let plain = run_scenario(&sc, &RunOptions::default());
        let restarted = run_scenario(
            &sc,
            &RunOptions {
                restart_after: (0..sc.steps.len()).collect(),
                ..RunOptions::default()
            },
        );
        assert_eq!(plain.trace.to_lines(), restarted.trace.to_lines(), "{f}");
    }
}

#[test]
fn deploy_crashes_roll_forward() {
    let mut steps = base_steps("hidden");
    steps.push(step(
        "vault",
        Action::UpdateState {
            asset: asset("maker:lamp"),
            state: "inspected".into(),
        },
    ));
    steps.push(step("engine", Action::Audit {}));
    let sc = scenario("deploy-crash", steps);
    let clean = run_scenario(&sc, &RunOptions::default());
    for point in CrashPoint::DEPLOY {
        let out = run_scenario(
            &sc,
            &RunOptions {
                injections: vec![Injection { step: 3, point }],
                audit_each_tx: true,
                ..RunOptions::default()
            },
        );
        let crash = out.trace.entries[3].crash.as_ref().expect("crash record");
        assert!(crash.fired, "{point}");
        assert!(
            crash.post_recovery_failures.is_empty(),
            "{point}: {crash:?}"
        );
        assert!(out.report.is_clean(), "{point}: {}", out.report.to_table());
        assert!(
            out.tx_violations.is_empty(),
            "{point}: {:?}",
            out.tx_violations
        );
        let a = asset("maker:lamp");
        assert_eq!(
            out.world
                .sync
                .correlations
                .iter()
                .filter(|c| c.asset_id == a && c.live)
                .count(),
            1
        );
        assert_eq!(
            out.world.repo.current(&a).unwrap().content,
            clean.world.repo.current(&a).unwrap().content
        );
        for (x, y) in out.trace.entries[4..].iter().zip(&clean.trace.entries[4..]) {
            assert_eq!(x.outcome, y.outcome, "{point}");
        }
    }
}

#[test]
fn second_deploy_of_a_bound_asset_is_rejected() {
    let mut steps = base_steps("trade_only");
    steps.push(steps[3].clone());
    let out = run_scenario(&scenario("double-deploy", steps), &audited());
    assert_eq!(out.trace.entries[3].outcome, Outcome::Ok);
    assert_eq!(out.trace.entries[4].outcome, Outcome::Error);
    assert_eq!(
        out.trace.entries[4].code.as_deref(),
        Some("asset_already_bound")
    );
    let a = asset("maker:lamp");
    assert_eq!(
        out.world
            .sync
            .correlations
            .iter()
            .filter(|c| c.asset_id == a)
            .count(),
        1
    );
    assert!(out.report.is_clean());
}

#[test]
fn init_services_enforces_order() {
    let cases = [
        vec![
            InitStepSpec::Repo {
                endpoint: "https://repo.sim".into(),
            },
            InitStepSpec::Custody {
                endpoint: "https://custody.sim".into(),
            },
        ],
        vec![InitStepSpec::Custody {
            endpoint: "https://custody.sim".into(),
        }],
        vec![
            InitStepSpec::Custody {
                endpoint: "https://custody.sim".into(),
            },
            InitStepSpec::Contract {
                chain: ChainId::new("sim:a").unwrap(),
                policy: PolicySpec::Preset("trade_only".into()),
                endpoint: None,
                address: None,
            },
            InitStepSpec::Repo {
                endpoint: "https://repo.sim".into(),
            },
        ],
    ];
    for steps in cases {
        let sc = scenario(
            "bad-init",
            vec![
                step(
                    "engine",
                    Action::CreateChain {
                        chain: ChainId::new("sim:a").unwrap(),
                    },
                ),
                step(
                    "engine",
                    Action::InitServices {
                        authority: None,
                        steps,
                    },
                ),
            ],
        );
        let out = run_scenario(&sc, &RunOptions::default());
        assert_eq!(
            out.trace.entries[1].code.as_deref(),
            Some("order_violation")
        );
    }
}

#[test]
fn owner_ops_before_init_are_errors_not_panics() {
    let mut steps = base_steps("trade_only");
    steps.remove(1);
    let out = run_scenario(&scenario("no-init", steps), &RunOptions::default());
    assert_eq!(
        out.trace.entries[1].code.as_deref(),
        Some("not_initialized")
    );
}
