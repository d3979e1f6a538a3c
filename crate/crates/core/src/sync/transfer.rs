//! Cross-chain transfer sessions.

use crate::contract::status_name;
use crate::contract::{ContractCall, MintStatus, TokenStatus};
use crate::ids::{Account, ChainId, NftId};
use crate::repo::HistoryReason;

use super::journal::{JournalRecord, TransferPhase, TransferSession, TransferStep};
use super::{CrashPoint, SyncEngine, SyncError};

impl SyncEngine {
    /// Moves the NFT bound to an asset to `dest_chain`. The owner requests;
    /// the engine executes every leg under its own authority.
    pub fn cross_chain_transfer(
        &mut self,
        nft: &NftId,
        dest_chain: &ChainId,
        requester: &Account,
    ) -> Result<NftId, SyncError> {
        let token = self
            .world
            .ledger
            .token(nft)
            .ok_or_else(|| SyncError::UnknownToken(nft.clone()))?
            .clone();
        let asset = self
            .world
            .sync
            .live_for_nft(nft)
            .map(|c| c.asset_id.clone())
            .ok_or_else(|| SyncError::Unmanaged(nft.clone()))?;
        if &token.owner != requester {
            return Err(SyncError::NotAuthorized(requester.clone()));
        }
        let policy = self
            .world
            .ledger
            .contract(&nft.chain_id, &nft.contract_addr)?
            .policy;
        if !policy.cross_chain {
            return Err(SyncError::PolicyViolation(
                "cross-chain transfer disabled".into(),
            ));
        }
        if token.status != TokenStatus::Active {
            return Err(SyncError::NotActive {
                nft: nft.clone(),
                status: status_name(token.status).into(),
            });
        }
        if self
            .world
            .folded()?
            .open_sessions()
            .any(|s| s.asset_id == asset)
        {
            return Err(SyncError::TransferInProgress(asset));
        }
        if dest_chain == &nft.chain_id {
            return Err(SyncError::PolicyViolation(
                "destination is the origin chain".into(),
            ));
        }
        self.world.ledger.chain(dest_chain)?;
        let dest_contract = self.ensure_contract(dest_chain, policy)?;

        let session_id = self.world.sync.next_session;
        self.world.sync.next_session += 1;
        let mut session = TransferSession {
            session_id,
            asset_id: asset.clone(),
            source: nft.clone(),
            dest_chain: dest_chain.clone(),
            requester: requester.clone(),
            dest: None,
            phase: TransferPhase::Started,
            journal: Vec::new(),
        };
        self.journal_step(
            &mut session,
            TransferStep::Started {
                asset_id: asset,
                source: nft.clone(),
                dest_chain: dest_chain.clone(),
                requester: requester.clone(),
            },
        );
        self.checkpoint(CrashPoint::XchainAfterStarted)?;

        self.journal_step(&mut session, TransferStep::SourceLocked);
        if let Err(e) = self.act_lock_source(&session) {
            return self.abort(&session, e);
        }
        self.checkpoint(CrashPoint::XchainAfterSourceLocked)?;

        let dest_token = self
            .world
            .ledger
            .contract(dest_chain, &dest_contract.addr)?
            .next_token_id
            .clone();
        let dest = NftId::new(dest_chain.clone(), dest_contract.addr, dest_token);
        self.journal_step(
            &mut session,
            TransferStep::DestPending { dest: dest.clone() },
        );
        if let Err(e) = self.act_mint_pending(&session) {
            return self.abort(&session, e);
        }
        self.checkpoint(CrashPoint::XchainAfterDestPending)?;

        self.journal_step(&mut session, TransferStep::SourceBurned);
        self.act_burn_source(&session)?;
        self.checkpoint(CrashPoint::XchainAfterSourceBurned)?;

        self.journal_step(&mut session, TransferStep::DestActivated);
        self.act_activate_dest(&session)?;
        self.checkpoint(CrashPoint::XchainAfterDestActivated)?;

        self.journal_step(&mut session, TransferStep::Committed);
        Ok(dest)
    }

    fn journal_step(&mut self, session: &mut TransferSession, step: TransferStep) {
        session.phase = step.phase();
        if let TransferStep::DestPending { dest } = &step {
            session.dest = Some(dest.clone());
        }
        self.journal(JournalRecord::Transfer {
            session: session.session_id,
            step,
        });
    }

    fn abort<T>(&mut self, session: &TransferSession, cause: SyncError) -> Result<T, SyncError> {
        self.revert_session(session)?;
        Err(SyncError::TransferReverted {
            session: session.session_id,
            reason: cause.to_string(),
        })
    }

    fn act_lock_source(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        if self
            .world
            .ledger
            .token(&s.source)
            .is_some_and(|t| t.status == TokenStatus::Active)
        {
            self.authority_call(
                &s.source,
                ContractCall::Lock {
                    token_id: s.source.token_id.clone(),
                },
            )?;
        }
        Ok(())
    }

    fn act_mint_pending(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        let dest = s.dest.clone().expect("dest journaled");
        if self.world.ledger.token(&dest).is_some() {
            return Ok(());
        }
        let owner = self
            .world
            .ledger
            .token(&s.source)
            .ok_or_else(|| SyncError::UnknownToken(s.source.clone()))?
            .owner
            .clone();
        let attributes = self.derive_attributes(&s.asset_id, &dest)?;
        self.authority_call(
            &dest,
            ContractCall::Mint {
                token_id: dest.token_id.clone(),
                owner,
                attributes,
                status: MintStatus::Pending,
            },
        )?;
        Ok(())
    }

    fn act_burn_source(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        if self
            .world
            .ledger
            .token(&s.source)
            .is_some_and(|t| t.status != TokenStatus::Burned)
        {
            self.authority_call(
                &s.source,
                ContractCall::Burn {
                    token_id: s.source.token_id.clone(),
                    forward_ref: s.dest.clone(),
                },
            )?;
        }
        Ok(())
    }

    fn act_activate_dest(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        let dest = s.dest.clone().expect("dest journaled");
        if self
            .world
            .ledger
            .token(&dest)
            .is_some_and(|t| t.status == TokenStatus::Pending)
        {
            self.authority_call(
                &dest,
                ContractCall::Activate {
                    token_id: dest.token_id.clone(),
                },
            )?;
        }
        let authority = self.world.sync.authority.clone();
        if self
            .world
            .repo
            .current(&s.asset_id)
            .is_some_and(|r| r.nft_id != dest)
        {
            self.world.repo.append_history(
                &s.asset_id,
                &dest,
                HistoryReason::CrossChainMoved,
                &authority,
            )?;
        }
        self.correlate(&s.asset_id, &dest)?;
        self.sync_attributes(&s.asset_id)?;
        Ok(())
    }

    /// Compensates whatever the session did, then journals `Reverted`.
    pub(super) fn revert_session(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        if let Some(dest) = &s.dest {
            if self
                .world
                .ledger
                .token(dest)
                .is_some_and(|t| t.status == TokenStatus::Pending)
            {
                self.authority_call(
                    dest,
                    ContractCall::Discard {
                        token_id: dest.token_id.clone(),
                    },
                )?;
            }
        }
        if self
            .world
            .ledger
            .token(&s.source)
            .is_some_and(|t| t.status == TokenStatus::Locked)
        {
            self.authority_call(
                &s.source,
                ContractCall::Unlock {
                    token_id: s.source.token_id.clone(),
                },
            )?;
        }
        self.journal(JournalRecord::Transfer {
            session: s.session_id,
            step: TransferStep::Reverted,
        });
        Ok(())
    }

    /// Finishes a session that passed `SourceBurned`.
    pub(super) fn complete_forward(&mut self, s: &TransferSession) -> Result<(), SyncError> {
        let mut s = s.clone();
        if s.phase == TransferPhase::SourceBurned {
            self.act_burn_source(&s)?;
            self.journal_step(&mut s, TransferStep::DestActivated);
        }
        self.act_activate_dest(&s)?;
        self.journal_step(&mut s, TransferStep::Committed);
        Ok(())
    }
}
