//! Asset proxy NFTs: chains, pattern-parameterized NFT contracts, an
//! off-chain metadata repository, asset custody and the engine that keeps
//! them consistent, plus an auditor and a scenario runner.

pub mod audit;
pub mod canon;
pub mod contract;
pub mod custody;
pub mod faults;
pub mod ids;
pub mod ledger;
pub mod repo;
pub mod scenario;
pub mod sync;
pub mod world;

pub use audit::{audit_snapshot, audit_world, AuditReport, CheckId, Violation};
pub use canon::{canonicalize, sha256, to_canonical_bytes};
pub use contract::{
    AttributeSet, ContractCall, ContractPolicy, NftContract, Pattern, RejectCode, Rejection,
    TokenState, TokenStatus,
};
pub use custody::{Custody, CustodyError};
pub use ids::{
    make_nft_id, parse_nft_id, Account, AssetId, ChainId, ContractAddr, HashDigest,
    MalformedIdentifier, NftId, TokenId,
};
pub use ledger::{ChainEvent, Ledger, LedgerError, TxEnvelope};
pub use repo::{
    canonical_serialize, init_repo, metadata_hash, Content, MetadataRecord, MetadataRepo,
    RecordRef, RepoError, Visibility,
};
pub use scenario::{run_scenario, RunOptions, RunOutcome, Scenario, ScenarioError};
pub use sync::{initialize_services, CrashPoint, InitStep, ServicesConfig, SyncEngine, SyncError};
pub use world::World;
