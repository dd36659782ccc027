//! Reference-counted demand bookkeeping.
//!
//! Every Request adds one count per requester and per counted config item;
//! the mirrored Release removes them again. The support sets (keys with a
//! positive count) are the current demand. Plain sets are not enough: a
//! requester that appears in several overlapping demands must survive the
//! release of any single one of them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{ConfigItem, EntityId};
use crate::store::{DemandAction, DemandDelta};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DemandLedger {
    pub requester_counts: BTreeMap<EntityId, u32>,
    pub config_counts: BTreeMap<ConfigItem, u32>,
    /// Fixed items (placement, outputs) taken from the first request.
    pub base_config: Vec<ConfigItem>,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum LedgerError {
    #[error("release names requester {0} which holds no demand")]
    UnknownRequesterRelease(EntityId),
    #[error("release names config item {0} which holds no demand")]
    UnknownConfigRelease(ConfigItem),
}

impl DemandLedger {
    pub fn support(&self) -> Vec<EntityId> {
        self.requester_counts.keys().cloned().collect()
    }

    pub fn is_unsupported(&self) -> bool {
        self.requester_counts.is_empty()
    }

    /// Base items followed by the support of the counted items.
    pub fn effective_config(&self) -> Vec<ConfigItem> {
        let mut items = self.base_config.clone();
        items.extend(self.config_counts.keys().cloned());
        items
    }

    /// Applies one delta, returning the new ledger. On a Release that would
    /// drive any count below zero the original ledger comes back unchanged
    /// together with the error.
    pub fn apply_demand(&self, delta: &DemandDelta) -> (DemandLedger, Option<LedgerError>) {
        let mut next = self.clone();
        next.version = delta.app_version.clone();
        let counted = delta.config_items.iter().filter(|c| c.key.is_counted());
        match delta.action {
            DemandAction::Upgrade => {}
            DemandAction::Request => {
                if next.base_config.is_empty() {
                    next.base_config = delta.config_items.iter().filter(|c| !c.key.is_counted()).cloned().collect();
                }
                for r in &delta.requesters {
                    *next.requester_counts.entry(r.clone()).or_default() += 1;
                }
                for c in counted {
                    *next.config_counts.entry(c.clone()).or_default() += 1;
                }
            }
            DemandAction::Release => {
                for r in &delta.requesters {
                    if let Err(e) = decrement(&mut next.requester_counts, r) {
                        return (self.clone(), Some(LedgerError::UnknownRequesterRelease(e)));
                    }
                }
                for c in counted {
                    if let Err(e) = decrement(&mut next.config_counts, c) {
                        return (self.clone(), Some(LedgerError::UnknownConfigRelease(e)));
                    }
                }
                if next.is_unsupported() {
                    next.base_config.clear();
                }
            }
        }
        (next, None)
    }
}

fn decrement<K: Ord + Clone>(counts: &mut BTreeMap<K, u32>, key: &K) -> Result<(), K> {
    match counts.get_mut(key) {
        Some(n) if *n > 1 => {
            *n -= 1;
            Ok(())
        }
        Some(_) => {
            counts.remove(key);
            Ok(())
        }
        None => Err(key.clone()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionAction {
    Deploy,
    Reconfigure,
    Shutdown,
    NoOp,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileDecision {
    pub action: DecisionAction,
    pub effective_config: Vec<ConfigItem>,
    pub target_version: String,
    pub support_changed: bool,
}

/// What the operator currently runs for one resource.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceView {
    pub version: String,
    pub config: Vec<ConfigItem>,
}

pub fn decide(before: &DemandLedger, after: &DemandLedger, instance: Option<&InstanceView>) -> ReconcileDecision {
    let effective_config = after.effective_config();
    let action = match instance {
        None if after.is_unsupported() => DecisionAction::NoOp,
        None => DecisionAction::Deploy,
        Some(_) if after.is_unsupported() => DecisionAction::Shutdown,
        Some(inst) if inst.version != after.version => DecisionAction::Replace,
        Some(inst) if inst.config != effective_config => DecisionAction::Reconfigure,
        Some(_) => DecisionAction::NoOp,
    };
    ReconcileDecision {
        action,
        effective_config,
        target_version: after.version.clone(),
        support_changed: before.requester_counts.keys().ne(after.requester_counts.keys()),
    }
}
