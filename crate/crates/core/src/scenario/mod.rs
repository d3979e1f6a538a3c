//! Scripted multi-party scenarios, their runner, traces and the fuzzer.

pub mod fuzz;
pub mod runner;
pub mod trace;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::canon::to_canonical_bytes;
use crate::contract::{ContractPolicy, Pattern};
use crate::ids::{Account, AssetId, ChainId, ContractAddr};
use crate::repo::{Content, CredentialScope};
use crate::sync::{CrashPoint, InitStep};

pub use runner::{run_scenario, RunOptions, RunOutcome, Runner};
pub use trace::{replay, ReplayOutcome, Trace, TraceEntry};

pub const SCENARIO_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("step {step}: {reason}")]
    BadStep { step: usize, reason: String },
    #[error("trace parse error at line {line}: {reason}")]
    TraceParse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub format_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub injections: Vec<Injection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub actor: Account,
    pub action: String,
    #[serde(default = "empty_params")]
    pub params: Value,
}

fn empty_params() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Injection {
    pub step: usize,
    pub point: CrashPoint,
}

/// Preset name (`trade_only`, `cross_chain`, `hidden`, `zero_value`) or an
/// explicit flag set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicySpec {
    Preset(String),
    Flags(ContractPolicy),
}

impl PolicySpec {
    pub fn resolve(&self) -> Result<ContractPolicy, String> {
        match self {
            PolicySpec::Flags(p) => Ok(*p),
            PolicySpec::Preset(name) => Pattern::from_name(name)
                .map(Pattern::policy)
                .ok_or_else(|| format!("unknown policy preset {name:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "service", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitStepSpec {
    Custody {
        endpoint: String,
    },
    Repo {
        endpoint: String,
    },
    Contract {
        chain: ChainId,
        policy: PolicySpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        endpoint: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        address: Option<ContractAddr>,
    },
}

impl InitStepSpec {
    pub fn resolve(&self) -> Result<InitStep, String> {
        Ok(match self {
            InitStepSpec::Custody { endpoint } => InitStep::Custody {
                endpoint: endpoint.clone(),
            },
            InitStepSpec::Repo { endpoint } => InitStep::Repo {
                endpoint: endpoint.clone(),
            },
            InitStepSpec::Contract {
                chain,
                policy,
                endpoint,
                address,
            } => InitStep::Contract {
                chain: chain.clone(),
                policy: policy.resolve()?,
                endpoint: endpoint.clone(),
                address: address.clone(),
            },
        })
    }
}

/// Typed form of a step's `action` + `params`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "action",
    content = "params",
    rename_all = "snake_case",
    deny_unknown_fields
)]
pub enum Action {
    CreateChain {
        chain: ChainId,
    },
    InitServices {
        #[serde(default)]
        authority: Option<Account>,
        steps: Vec<InitStepSpec>,
    },
    PlaceCustody {
        asset: AssetId,
        #[serde(default)]
        custodian: Option<Account>,
    },
    DeployAsset {
        asset: AssetId,
        chain: ChainId,
        policy: PolicySpec,
        #[serde(default)]
        content: Content,
    },
    UpdateState {
        asset: AssetId,
        state: String,
    },
    Transfer {
        asset: AssetId,
        to: Account,
    },
    Trade {
        asset: AssetId,
        to: Account,
        payment: u64,
    },
    Burn {
        asset: AssetId,
    },
    XchainTransfer {
        asset: AssetId,
        dest_chain: ChainId,
    },
    IssueCredential {
        label: String,
        scope: CredentialScope,
    },
    /// Reads a record by asset id, by NFT id, or by following the asset's
    /// live `token_uri`.
    GetMetadata {
        #[serde(default)]
        asset: Option<AssetId>,
        #[serde(default)]
        nft: Option<String>,
        #[serde(default)]
        via_token_uri: Option<AssetId>,
        #[serde(default)]
        credential: Option<String>,
    },
    /// Changes the resolution endpoint of the asset's live contract.
    Reconfigure {
        asset: AssetId,
        endpoint: String,
    },
    Audit {},
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CreateChain { .. } => "create_chain",
            Action::InitServices { .. } => "init_services",
            Action::PlaceCustody { .. } => "place_custody",
            Action::DeployAsset { .. } => "deploy_asset",
            Action::UpdateState { .. } => "update_state",
            Action::Transfer { .. } => "transfer",
            Action::Trade { .. } => "trade",
            Action::Burn { .. } => "burn",
            Action::XchainTransfer { .. } => "xchain_transfer",
            Action::IssueCredential { .. } => "issue_credential",
            Action::GetMetadata { .. } => "get_metadata",
            Action::Reconfigure { .. } => "reconfigure",
            Action::Audit {} => "audit",
        }
    }

    pub fn to_step(&self, actor: &Account) -> Step {
        let v = serde_json::to_value(self).expect("actions serialize");
        Step {
            actor: actor.clone(),
            action: v["action"].as_str().expect("tagged").to_owned(),
            params: v.get("params").cloned().unwrap_or_else(empty_params),
        }
    }
}

impl Step {
    pub fn action(&self) -> Result<Action, String> {
        let v = serde_json::json!({"action": self.action, "params": self.params});
        serde_json::from_value(v).map_err(|e| format!("{}: {e}", self.action))
    }
}

impl Scenario {
    /// Parses and validates every step's params.
    pub fn parse(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
        let s: Scenario =
            serde_json::from_slice(bytes).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        if s.format_version != SCENARIO_FORMAT_VERSION {
            return Err(ScenarioError::Parse(format!(
                "unsupported format_version {}",
                s.format_version
            )));
        }
        for (i, step) in s.steps.iter().enumerate() {
            step.action()
                .map_err(|reason| ScenarioError::BadStep { step: i, reason })?;
        }
        for inj in &s.injections {
            if inj.step >= s.steps.len() {
                return Err(ScenarioError::BadStep {
                    step: inj.step,
                    reason: "injection beyond last step".into(),
                });
            }
        }
        Ok(s)
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        to_canonical_bytes(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_round_trip() {
        let a = Action::Trade {
            asset: "acme:1".parse().unwrap(),
            to: "bob".into(),
            payment: 5,
        };
        let step = a.to_step(&"alice".into());
        assert_eq!(step.action, "trade");
        assert_eq!(step.action().unwrap(), a);
        let audit = Action::Audit {}.to_step(&"x".into());
        assert_eq!(audit.action().unwrap(), Action::Audit {});
    }

    #[test]
    fn policy_spec_forms() {
        let p: PolicySpec = serde_json::from_str("\"hidden\"").unwrap();
        assert!(p.resolve().unwrap().hidden_metadata);
        let f: PolicySpec = serde_json::from_str(
            r#"{"tradeable":false,"transferable":true,"hidden_metadata":false,"cross_chain":false}"#,
        )
        .unwrap();
        assert_eq!(f.resolve().unwrap(), ContractPolicy::zero_value(true));
        assert!(PolicySpec::Preset("nope".into()).resolve().is_err());
    }

    #[test]
    fn parse_rejects_bad_params_and_injections() {
        let bad = br#"{"format_version":1,"name":"x","steps":[{"actor":"a","action":"burn","params":{}}]}"#;
        assert!(matches!(
            Scenario::parse(bad),
            Err(ScenarioError::BadStep { step: 0, .. })
        ));
        let unknown = br#"{"format_version":1,"name":"x","steps":[{"actor":"a","action":"fly"}]}"#;
        assert!(Scenario::parse(unknown).is_err());
        let inj = br#"{"format_version":1,"name":"x","steps":[],"injections":[{"step":0,"point":"deploy.after_mint"}]}"#;
        assert!(Scenario::parse(inj).is_err());
        let version = br#"{"format_version":2,"name":"x","steps":[]}"#;
        assert!(Scenario::parse(version).is_err());
    }
}
