mod common;

use apnft_core::contract::{EventKind, MintStatus, ResolutionConfig};
use apnft_core::{
    sha256, Account, AttributeSet, ChainId, ContractAddr, ContractCall, NftContract, NftId,
    Pattern, RejectCode, TokenId, TokenStatus,
};
use proptest::prelude::*;

#[test]
fn policy_matrix_matches_fixture() {
    let (n, bad) = common::matrix_mismatches();
    assert_eq!(n, 240);
    for (row, got) in &bad {
        eprintln!("{row:?} got {got}");
    }
    assert!(bad.is_empty(), "{} mismatches", bad.len());
}

#[test]
fn matrix_covers_every_combination_once() {
    let rows = common::matrix_rows();
    let mut keys: Vec<_> = rows
        .iter()
        .map(|r| {
            (
                r.preset.clone(),
                r.op.clone(),
                r.caller.clone(),
                r.status.clone(),
            )
        })
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 4 * 5 * 3 * 4);
}

fn contract(pattern: Pattern) -> NftContract {
    NftContract::new(
        ContractAddr::new("0x00000000000000000000000000000000000000aa").unwrap(),
        pattern.policy(),
        ResolutionConfig::at_deploy("https://repo.test"),
        Account::new("engine"),
    )
}

#[test]
fn hidden_mint_with_uri_is_rejected() {
    let mut c = contract(Pattern::Hidden);
    let call = ContractCall::Mint {
        token_id: TokenId::one(),
        owner: "alice".into(),
        attributes: AttributeSet::uri("https://repo.test/1"),
        status: MintStatus::Active,
    };
    let err = c.apply(&"engine".into(), &call, 1).unwrap_err();
    assert_eq!(err.code, RejectCode::PolicyViolation);
    assert_eq!(err.reason, "hidden pattern forbids token_uri");
}

#[test]
fn trade_with_zero_payment_is_accepted() {
    let mut c = contract(Pattern::TradeOnly);
    let mint = ContractCall::Mint {
        token_id: TokenId::one(),
        owner: "alice".into(),
        attributes: AttributeSet::uri("https://repo.test/1"),
        status: MintStatus::Active,
    };
    c.apply(&"engine".into(), &mint, 1).unwrap();
    let trade = ContractCall::Trade {
        token_id: TokenId::one(),
        from: "alice".into(),
        to: "bob".into(),
        payment: 0,
    };
    let ev = c.apply(&"alice".into(), &trade, 2).unwrap();
    assert_eq!(ev[0].kind, EventKind::Transferred);
    assert_eq!(c.get_token(&TokenId::one()).unwrap().owner.as_str(), "bob");
}

#[derive(Debug, Clone)]
enum Op {
    Mint(u8, bool),
    Transfer(u8, u8),
    Trade(u8, u8),
    Burn(u8, u8, bool),
    Lock(u8, u8),
    Unlock(u8, u8),
    Activate(u8, u8),
    SetAttr(u8, u8),
}

const WHO: [&str; 3] = ["alice", "bob", "engine"];

fn op() -> impl Strategy<Value = Op> {
    let t = 1u8..4;
    let w = 0u8..3;
    prop_oneof![
        (t.clone(), any::<bool>()).prop_map(|(t, p)| Op::Mint(t, p)),
        (t.clone(), w.clone()).prop_map(|(t, w)| Op::Transfer(t, w)),
        (t.clone(), w.clone()).prop_map(|(t, w)| Op::Trade(t, w)),
        (t.clone(), w.clone(), any::<bool>()).prop_map(|(t, w, f)| Op::Burn(t, w, f)),
        (t.clone(), w.clone()).prop_map(|(t, w)| Op::Lock(t, w)),
        (t.clone(), w.clone()).prop_map(|(t, w)| Op::Unlock(t, w)),
        (t.clone(), w.clone()).prop_map(|(t, w)| Op::Activate(t, w)),
        (t, w).prop_map(|(t, w)| Op::SetAttr(t, w)),
    ]
}

fn pattern() -> impl Strategy<Value = Pattern> {
    prop_oneof![
        Just(Pattern::TradeOnly),
        Just(Pattern::CrossChain),
        Just(Pattern::Hidden),
        Just(Pattern::ZeroValue),
    ]
}

fn attrs(c: &NftContract, n: u8) -> AttributeSet {
    if c.policy.hidden_metadata {
        AttributeSet::hashed(sha256(&[n]))
    } else {
        AttributeSet::uri(format!("https://repo.test/{n}"))
    }
}

fn to_call(c: &NftContract, op: &Op) -> (Account, ContractCall) {
    let owner_of = |t: u8| {
        c.tokens
            .get(&TokenId::from(t as u64))
            .map(|s| s.owner.clone())
            .unwrap_or_else(|| "alice".into())
    };
    let dest = NftId::new(
        ChainId::new("sim:b").unwrap(),
        ContractAddr::new("0x00000000000000000000000000000000000000bb").unwrap(),
        TokenId::one(),
    );
    let tid = |t: u8| TokenId::from(t as u64);
    match *op {
        Op::Mint(t, pending) => (
            "engine".into(),
            ContractCall::Mint {
                token_id: tid(t),
                owner: "alice".into(),
                attributes: attrs(c, t),
                status: if pending {
                    MintStatus::Pending
                } else {
                    MintStatus::Active
                },
            },
        ),
        Op::Transfer(t, w) => (
            WHO[w as usize].into(),
            ContractCall::Transfer {
                token_id: tid(t),
                from: owner_of(t),
                to: WHO[(w as usize + 1) % 2].into(),
            },
        ),
        Op::Trade(t, w) => (
            WHO[w as usize].into(),
            ContractCall::Trade {
                token_id: tid(t),
                from: owner_of(t),
                to: WHO[(w as usize + 1) % 2].into(),
                payment: 5,
            },
        ),
        Op::Burn(t, w, f) => (
            WHO[w as usize].into(),
            ContractCall::Burn {
                token_id: tid(t),
                forward_ref: f.then_some(dest),
            },
        ),
        Op::Lock(t, w) => (
            WHO[w as usize].into(),
            ContractCall::Lock { token_id: tid(t) },
        ),
        Op::Unlock(t, w) => (
            WHO[w as usize].into(),
            ContractCall::Unlock { token_id: tid(t) },
        ),
        Op::Activate(t, w) => (
            WHO[w as usize].into(),
            ContractCall::Activate { token_id: tid(t) },
        ),
        Op::SetAttr(t, w) => (
            WHO[w as usize].into(),
            ContractCall::SetAttribute {
                token_id: tid(t),
                attributes: attrs(c, t.wrapping_add(100)),
            },
        ),
    }
}

fn token_of(call: &ContractCall) -> Option<TokenId> {
    match call {
        ContractCall::Mint { token_id, .. }
        | ContractCall::Transfer { token_id, .. }
        | ContractCall::Trade { token_id, .. }
        | ContractCall::Burn { token_id, .. }
        | ContractCall::Lock { token_id }
        | ContractCall::Unlock { token_id }
        | ContractCall::Activate { token_id }
        | ContractCall::SetAttribute { token_id, .. } => Some(token_id.clone()),
        _ => None,
    }
}

proptest! {
    #[test]
    fn random_op_sequences_respect_the_state_machine(
        pattern in pattern(),
        ops in prop::collection::vec(op(), 1..60),
    ) {
        use TokenStatus::*;
        let allowed = [(Pending, Active), (Active, Locked), (Locked, Active), (Active, Burned), (Locked, Burned)];
        let mut c = contract(pattern);
        let policy = c.policy;
        for (seq, op) in ops.iter().enumerate() {
            let (caller, call) = to_call(&c, op);
            let tid = token_of(&call).unwrap();
            let before = c.tokens.get(&tid).cloned();
            let result = c.apply(&caller, &call, seq as u64);
            let after = c.tokens.get(&tid).cloned();
            match (&before, &after) {
                (Some(b), Some(a)) if b.status != a.status => {
                    prop_assert!(allowed.contains(&(b.status, a.status)), "{:?} -> {:?}", b.status, a.status);
                }
                (Some(b), Some(a)) if b.status == Burned => prop_assert_eq!(b, a),
                _ => {}
            }
            if let Some(b) = &before {
                let owner_op = matches!(call, ContractCall::Transfer { .. } | ContractCall::Trade { .. })
                    || (matches!(call, ContractCall::Burn { .. }) && caller == b.owner && caller.as_str() != "engine");
                if b.status == Locked && owner_op {
                    prop_assert!(result.is_err());
                }
                if b.status == Burned {
                    prop_assert!(result.is_err());
                }
            }
            if let Ok(events) = &result {
                for e in events {
                    if e.kind == EventKind::Transferred {
                        prop_assert!(policy.transferable);
                        if e.detail.contains_key("payment") {
                            prop_assert!(policy.tradeable);
                        }
                    }
                    if policy.hidden_metadata {
                        prop_assert!(!e.detail.contains_key("token_uri"));
                    }
                }
            }
            if let Some(a) = &after {
                prop_assert!(a.forward_ref.is_none() || a.status == Burned);
                if policy.hidden_metadata {
                    prop_assert!(a.attributes.token_uri.is_none() && a.attributes.metadata_hash.is_some());
                } else {
                    prop_assert!(a.attributes.token_uri.is_some());
                }
            }
        }
    }
}
