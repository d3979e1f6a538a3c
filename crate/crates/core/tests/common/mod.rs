#![allow(dead_code)]

use apnft_core::contract::ResolutionConfig;
use apnft_core::scenario::Scenario;
use apnft_core::{
    sha256, Account, AttributeSet, ChainId, ContractAddr, ContractCall, NftContract, NftId,
    Pattern, TokenId, TokenState, TokenStatus,
};

pub fn fixture_path(name: &str) -> String {
    format!("{}/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> Scenario {
    let bytes = std::fs::read(fixture_path(name)).expect("fixture readable");
    Scenario::parse(&bytes).expect("fixture parses")
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Deserialize)]
pub struct MatrixRow {
    pub preset: String,
    pub op: String,
    pub caller: String,
    pub status: String,
    pub expected: String,
}

pub fn matrix_rows() -> Vec<MatrixRow> {
    csv::Reader::from_path(fixture_path("policy_matrix.csv"))
        .expect("matrix csv")
        .deserialize()
        .collect::<Result<_, _>>()
        .expect("well-formed rows")
}

const AUTHORITY: &str = "engine";
const OWNER: &str = "alice";

fn status_of(name: &str) -> TokenStatus {
    match name {
        "active" => TokenStatus::Active,
        "locked" => TokenStatus::Locked,
        "burned" => TokenStatus::Burned,
        "pending" => TokenStatus::Pending,
        other => panic!("unknown status {other}"),
    }
}

/// Runs one matrix cell against a fresh contract and returns `accepted`
/// or the rejection code.
pub fn run_cell(row: &MatrixRow) -> String {
    let pattern = Pattern::from_name(&row.preset).expect("known preset");
    let policy = pattern.policy();
    let addr = ContractAddr::new("0x00000000000000000000000000000000000000aa").unwrap();
    let endpoint = "https://repo.test";
    let mut c = NftContract::new(
        addr,
        policy,
        ResolutionConfig::at_deploy(endpoint),
        Account::new(AUTHORITY),
    );
    let id = TokenId::one();
    let attrs = if policy.hidden_metadata {
        AttributeSet::hashed(sha256(b"record"))
    } else {
        AttributeSet::uri(format!("{endpoint}/1"))
    };
    c.tokens.insert(
        id.clone(),
        TokenState {
            token_id: id.clone(),
            owner: Account::new(OWNER),
            attributes: attrs.clone(),
            status: status_of(&row.status),
            forward_ref: None,
            burned_by: None,
        },
    );
    let caller = Account::new(match row.caller.as_str() {
        "owner" => OWNER,
        "stranger" => "mallory",
        "authority" => AUTHORITY,
        other => panic!("unknown caller {other}"),
    });
    let dest = NftId::new(
        ChainId::new("sim:b").unwrap(),
        ContractAddr::new("0x00000000000000000000000000000000000000bb").unwrap(),
        TokenId::one(),
    );
    let owner = Account::new(OWNER);
    let bob = Account::new("bob");
    let call = match row.op.as_str() {
        "trade" => ContractCall::Trade {
            token_id: id,
            from: owner,
            to: bob,
            payment: 10,
        },
        "transfer" => ContractCall::Transfer {
            token_id: id,
            from: owner,
            to: bob,
        },
        "burn" => ContractCall::Burn {
            token_id: id,
            forward_ref: (row.caller == "authority").then_some(dest),
        },
        "set_attribute" => ContractCall::SetAttribute {
            token_id: id,
            attributes: attrs,
        },
        "lock" => ContractCall::Lock { token_id: id },
        other => panic!("unknown op {other}"),
    };
    match c.apply(&caller, &call, 1) {
        Ok(_) => "accepted".into(),
        Err(r) => r.code.as_str().into(),
    }
}

/// Mismatching rows as (row, actual).
pub fn matrix_mismatches() -> (usize, Vec<(MatrixRow, String)>) {
    let rows = matrix_rows();
    let n = rows.len();
    let bad = rows
        .into_iter()
        .filter_map(|r| {
            let got = run_cell(&r);
            (got != r.expected).then_some((r, got))
        })
        .collect();
    (n, bad)
}

pub mod hashing {
    use apnft_core::scenario::{Action, InitStepSpec, PolicySpec, Runner};
    use apnft_core::{Account, AssetId, ChainId, Content, ContractCall, MetadataRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use serde_json::{json, Value};
    use sha2::{Digest, Sha256};
    use unicode_normalization::UnicodeNormalization;

    /// Mixes precomposed and decomposed spellings on purpose.
    const STATES: [&str; 9] = [
        "inspected",
        "in storage",
        "on loan",
        "restored",
        "cafe\u{301} display",
        "caf\u{e9} display",
        "Zu\u{308}rich vault",
        "\u{1F4E6} shipped",
        "",
    ];
    const USERS: [&str; 3] = ["alice", "bob", "carol"];

    pub struct Observation {
        pub on_chain: String,
        pub independent: String,
        pub record: MetadataRecord,
    }

    fn nfc(v: &Value) -> Value {
        match v {
            Value::String(s) => Value::String(s.nfc().collect()),
            Value::Array(a) => Value::Array(a.iter().map(nfc).collect()),
            Value::Object(m) => {
                Value::Object(m.iter().map(|(k, v)| (k.nfc().collect(), nfc(v))).collect())
            }
            other => other.clone(),
        }
    }

    /// SHA-256 over serde_json's own compact, key-sorted output.
    pub fn independent_hash(record: &MetadataRecord) -> String {
        let v = nfc(&serde_json::to_value(record).unwrap());
        hex::encode(Sha256::digest(serde_json::to_vec(&v).unwrap()))
    }

    fn run(runner: &mut Runner, n: &mut usize, actor: &str, action: Action) {
        let step = action.to_step(&Account::new(actor));
        let e = runner.execute(*n, &step, None);
        assert_eq!(
            e.outcome,
            apnft_core::scenario::runner::Outcome::Ok,
            "{e:?}"
        );
        *n += 1;
    }

    /// One randomized hidden-pattern sequence; an observation after every
    /// custody change.
    pub fn sequence(case: u64) -> Vec<Observation> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x4a5b);
        rng.set_stream(case);
        let asset: AssetId = format!("maker:case-{case}").parse().unwrap();
        let chain = ChainId::new("sim:a").unwrap();
        let mut r = Runner::new(case, false);
        let mut n = 0;
        run(
            &mut r,
            &mut n,
            "engine",
            Action::CreateChain {
                chain: chain.clone(),
            },
        );
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
        run(
            &mut r,
            &mut n,
            "maker",
            Action::PlaceCustody {
                asset: asset.clone(),
                custodian: Some("vault".into()),
            },
        );
        let mut content = Content::new();
        content.insert("name".into(), json!(format!("Item {case}")));
        for k in 0..rng.gen_range(0..4) {
            content.insert(format!("f{k}"), json!(rng.gen_range(0..1000u32)));
        }
        run(
            &mut r,
            &mut n,
            "maker",
            Action::DeployAsset {
                asset: asset.clone(),
                chain: chain.clone(),
                policy: PolicySpec::Preset("hidden".into()),
                content,
            },
        );

        let mut out = Vec::new();
        let mut owner = Account::new("maker");
        let steps = rng.gen_range(1..9);
        for i in 0..steps {
            let engine = r.engine_mut().unwrap();
            let nft = engine
                .world()
                .sync
                .live_correlation(&asset)
                .unwrap()
                .nft_id
                .clone();
            if rng.gen_bool(0.3) {
                let to = Account::new(USERS[rng.gen_range(0..USERS.len())]);
                let call = ContractCall::Transfer {
                    token_id: nft.token_id.clone(),
                    from: owner.clone(),
                    to: to.clone(),
                };
                let env = engine
                    .submit_call(&nft.chain_id, &owner, &nft.contract_addr, &call)
                    .unwrap();
                if env.result.is_accepted() {
                    owner = to;
                }
                engine.pump().unwrap();
            }
            let mut state = STATES[rng.gen_range(0..STATES.len())];
            // The pinned sample ends on the non-ASCII spellings.
            if case < 10 && i + 1 == steps {
                state = STATES[4 + case as usize % 4];
            }
            engine
                .update_asset_state(&asset, state, &Account::new("vault"))
                .unwrap();
            engine.pump().unwrap();
            let w = engine.world();
            let record = w.repo.current(&asset).unwrap().clone();
            let token = w.ledger.token(&nft).unwrap();
            assert!(token.attributes.token_uri.is_none());
            out.push(Observation {
                on_chain: token
                    .attributes
                    .metadata_hash
                    .as_ref()
                    .unwrap()
                    .hex()
                    .to_owned(),
                independent: independent_hash(&record),
                record,
            });
        }
        out
    }

    /// Final-record hashes of cases 0..10, computed by an external tool
    /// from the records' JSON.
    pub const PINNED: [&str; 10] = [
        "8f5f9203b10196eb81e43f874dc3f71f06840f7c1ca7e38545078334594bdc0b",
        "2721e02c5193603da9371e4b58f589f4fad50a83260eae2151e92674e70dc5cd",
        "6aaba8fdc646925b1101f2f19a7065206ff8627721818ea2c4c159893d33c58e",
        "390c3681602ea7f27ca163ac0ad2891b62c7d8f5f70bcf6504bf56de2a041b36",
        "8866ddd29a92fe9172bebcf8a32865c7529278c57b5de2956cb4a1b81e643a4d",
        "6b673ddf7a3f2b0d75731e521a1dc40752040a8bdaa34ebd92b26143523e0d4f",
        "9e362bf6d78ffddefe7a6ac6b00c761961dbb98dfb3d2a74c91be78c4a0120d5",
        "5234ca1f818b946eeac9e5f66354fdd5923f9920d65bdcf4d98b8f373a23da42",
        "a822fa68ad9faaa64152e4ee3400d064977a6976b9d907510322b5f9d818ff7d",
        "c03fc786dd230d857ac42a25eeb980260cbb6bf4591ac9a08fffe646c620f1ce",
    ];
}
