//! Custom operators, one per resource kind.
//!
//! An operator consumes the demand deltas of its kind, folds them into a
//! per-resource [`DemandLedger`], decides what the part should look like and
//! drives the cluster towards it. Ledger application is keyed by generation,
//! so a retried event re-runs only the decision and cluster actions.

mod ledger;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use ledger::{decide, DecisionAction, DemandLedger, InstanceView, LedgerError, ReconcileDecision};

use crate::cluster::{ClusterError, ClusterSim, DeploySpec, InstanceId};
use crate::model::{ConfigItem, ConfigKey, EntityId, NodeId, ServiceKind};
use crate::store::{Change, Phase, ResourceKind, ResourceStatus, ResourceStore, StoreError, WatchEvent, WatchId};

/// Attempts per event before the failure is reported instead of re-queued.
pub const MAX_ATTEMPTS: u32 = 3;
/// Drain rounds allowed before the control plane is declared non-quiescent.
pub const MAX_DRAIN_ROUNDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum ClusterAction {
    Deploy { cr_name: String, instances: Vec<InstanceId>, nodes: Vec<NodeId>, version: String },
    Reconfigure { cr_name: String, instances: Vec<InstanceId>, config: Vec<ConfigItem> },
    Replace { cr_name: String, old: Vec<InstanceId>, new: Vec<InstanceId>, version: String },
    Terminate { cr_name: String, instances: Vec<InstanceId> },
}

impl ClusterAction {
    pub fn cr_name(&self) -> &str {
        match self {
            ClusterAction::Deploy { cr_name, .. }
            | ClusterAction::Reconfigure { cr_name, .. }
            | ClusterAction::Replace { cr_name, .. }
            | ClusterAction::Terminate { cr_name, .. } => cr_name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub cr_name: String,
    pub support: Vec<EntityId>,
    pub effective_config: Vec<ConfigItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileOutcome {
    pub kind: ResourceKind,
    pub cr_name: String,
    pub generation: u64,
    pub ledger_error: Option<LedgerError>,
    pub decision: Option<ReconcileDecision>,
    pub actions: Vec<ClusterAction>,
    /// Ledger state after the event; `None` when the event was ignored.
    pub ledger: Option<LedgerSnapshot>,
    pub deleted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OperatorError {
    #[error("{operator} operator cannot reconcile {kind}/{name}")]
    WrongKind { operator: ResourceKind, kind: ResourceKind, name: String },
    #[error("event for {0} carries no spec")]
    MissingSpec(String),
    #[error("resource {cr_name} lacks config item `{key}`")]
    MissingConfig { cr_name: String, key: &'static str },
    #[error("cluster action on {cr_name} failed: {source}")]
    Cluster { cr_name: String, source: ClusterError },
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Deployed {
    Service { id: InstanceId, version: String, config: Vec<ConfigItem> },
    Pair { sender: InstanceId, receiver: InstanceId, version: String, config: Vec<ConfigItem> },
}

impl Deployed {
    fn view(&self) -> InstanceView {
        match self {
            Deployed::Service { version, config, .. } | Deployed::Pair { version, config, .. } => {
                InstanceView { version: version.clone(), config: config.clone() }
            }
        }
    }

    fn ids(&self) -> Vec<InstanceId> {
        match self {
            Deployed::Service { id, .. } => vec![id.clone()],
            Deployed::Pair { sender, receiver, .. } => vec![sender.clone(), receiver.clone()],
        }
    }
}

#[derive(Debug)]
pub struct Operator {
    kind: ResourceKind,
    watch: WatchId,
    ledgers: BTreeMap<String, DemandLedger>,
    applied_generation: BTreeMap<String, u64>,
    deployed: BTreeMap<String, Deployed>,
    replacements: BTreeMap<String, u32>,
}

impl Operator {
    pub fn new(kind: ResourceKind, store: &mut ResourceStore) -> Self {
        Self {
            kind,
            watch: store.watch(kind),
            ledgers: BTreeMap::new(),
            applied_generation: BTreeMap::new(),
            deployed: BTreeMap::new(),
            replacements: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> ResourceKind {
        self.kind
    }

    pub fn next_event(&self, store: &mut ResourceStore) -> Option<WatchEvent> {
        store.next_event(self.watch).ok().flatten()
    }

    pub fn ledger(&self, cr_name: &str) -> Option<&DemandLedger> {
        self.ledgers.get(cr_name)
    }

    pub fn ledgers(&self) -> &BTreeMap<String, DemandLedger> {
        &self.ledgers
    }

    pub fn instances_of(&self, cr_name: &str) -> Vec<InstanceId> {
        self.deployed.get(cr_name).map(Deployed::ids).unwrap_or_default()
    }

    pub fn replacement_count(&self, cr_name: &str) -> u32 {
        self.replacements.get(cr_name).copied().unwrap_or(0)
    }

    pub fn reconcile_service(
        &mut self,
        event: &WatchEvent,
        store: &mut ResourceStore,
        sim: &mut ClusterSim,
    ) -> Result<ReconcileOutcome, OperatorError> {
        self.check_kind(event, ResourceKind::ManagedService)?;
        self.reconcile(event, store, sim)
    }

    pub fn reconcile_connection(
        &mut self,
        event: &WatchEvent,
        store: &mut ResourceStore,
        sim: &mut ClusterSim,
    ) -> Result<ReconcileOutcome, OperatorError> {
        self.check_kind(event, ResourceKind::ManagedConnection)?;
        self.reconcile(event, store, sim)
    }

    fn check_kind(&self, event: &WatchEvent, expected: ResourceKind) -> Result<(), OperatorError> {
        if event.kind != expected || self.kind != expected {
            return Err(OperatorError::WrongKind { operator: self.kind, kind: event.kind, name: event.name.clone() });
        }
        Ok(())
    }

    pub fn reconcile(
        &mut self,
        event: &WatchEvent,
        store: &mut ResourceStore,
        sim: &mut ClusterSim,
    ) -> Result<ReconcileOutcome, OperatorError> {
        if event.kind != self.kind {
            return Err(OperatorError::WrongKind { operator: self.kind, kind: event.kind, name: event.name.clone() });
        }
        let name = event.name.as_str();
        let mut outcome = ReconcileOutcome {
            kind: self.kind,
            cr_name: name.to_owned(),
            generation: event.generation,
            ledger_error: None,
            decision: None,
            actions: Vec::new(),
            ledger: None,
            deleted: false,
        };

        if event.change == Change::Deleted {
            if store.get_cr(self.kind, name).is_ok() {
                // Already recreated under the same name.
                return Ok(outcome);
            }
            self.ledgers.remove(name);
            self.applied_generation.remove(name);
            if let Some(dep) = self.deployed.remove(name) {
                let ids = dep.ids();
                for id in &ids {
                    sim.terminate_instance(id).map_err(|source| cluster_err(name, source))?;
                }
                outcome.actions.push(ClusterAction::Terminate { cr_name: name.to_owned(), instances: ids });
            }
            return Ok(outcome);
        }

        let spec = event.spec.as_ref().ok_or_else(|| OperatorError::MissingSpec(name.to_owned()))?;
        let before = self.ledgers.get(name).cloned().unwrap_or_default();
        let fresh = self.applied_generation.get(name).is_none_or(|g| event.generation > *g);
        let after = if fresh {
            let (next, err) = before.apply_demand(spec);
            if let Some(e) = &err {
                log::warn!("{name}: {e}");
            }
            outcome.ledger_error = err;
            self.applied_generation.insert(name.to_owned(), event.generation);
            self.ledgers.insert(name.to_owned(), next.clone());
            next
        } else {
            before.clone()
        };

        let decision = decide(&before, &after, self.deployed.get(name).map(Deployed::view).as_ref());
        outcome.ledger = Some(LedgerSnapshot {
            cr_name: name.to_owned(),
            support: after.support(),
            effective_config: after.effective_config(),
        });

        if let Err(e) = self.act(name, &decision, sim, &mut outcome.actions) {
            let status = ResourceStatus {
                phase: Phase::Pending,
                support: after.support(),
                instance_ids: self.instances_of(name),
                observed_generation: event.generation,
            };
            let _ = store.update_status(self.kind, name, status);
            outcome.decision = Some(decision);
            return Err(e);
        }
        outcome.decision = Some(decision);

        if after.is_unsupported() && !self.deployed.contains_key(name) {
            self.ledgers.remove(name);
            let current = store.get_cr(self.kind, name).map(|cr| cr.generation).ok();
            if current == Some(event.generation) {
                store.delete_cr(self.kind, name)?;
                self.applied_generation.remove(name);
                outcome.deleted = true;
                return Ok(outcome);
            }
        }

        let phase = if self.deployed.contains_key(name) { Phase::Running } else { Phase::Terminated };
        let status = ResourceStatus {
            phase,
            support: after.support(),
            instance_ids: self.instances_of(name),
            observed_generation: event.generation,
        };
        match store.update_status(self.kind, name, status) {
            Ok(()) | Err(StoreError::NotFound { .. }) => {}
            Err(e) => return Err(e.into()),
        }
        Ok(outcome)
    }

    fn act(
        &mut self,
        name: &str,
        decision: &ReconcileDecision,
        sim: &mut ClusterSim,
        actions: &mut Vec<ClusterAction>,
    ) -> Result<(), OperatorError> {
        let config = &decision.effective_config;
        let version = &decision.target_version;
        match decision.action {
            DecisionAction::NoOp => {}
            DecisionAction::Deploy => {
                let dep = self.deploy(name, config, version, sim)?;
                actions.push(ClusterAction::Deploy {
                    cr_name: name.to_owned(),
                    instances: dep.ids(),
                    nodes: nodes_of(&dep, sim),
                    version: version.clone(),
                });
                self.deployed.insert(name.to_owned(), dep);
            }
            DecisionAction::Reconfigure => {
                let dep = self.deployed.get_mut(name).expect("decided on a running instance");
                let ids = dep.ids();
                for id in &ids {
                    sim.reconfigure_instance(id, config.clone()).map_err(|source| cluster_err(name, source))?;
                }
                match dep {
                    Deployed::Service { config: c, .. } | Deployed::Pair { config: c, .. } => *c = config.clone(),
                }
                actions.push(ClusterAction::Reconfigure {
                    cr_name: name.to_owned(),
                    instances: ids,
                    config: config.clone(),
                });
            }
            DecisionAction::Replace => {
                let new = self.deploy(name, config, version, sim)?;
                let old = self.deployed.insert(name.to_owned(), new.clone()).expect("decided on a running instance");
                if let (Deployed::Pair { receiver: from, .. }, Deployed::Pair { receiver: to, .. }) = (&old, &new) {
                    sim.hand_over(from, to).map_err(|source| cluster_err(name, source))?;
                }
                for id in old.ids() {
                    sim.terminate_instance(&id).map_err(|source| cluster_err(name, source))?;
                }
                *self.replacements.entry(name.to_owned()).or_default() += 1;
                actions.push(ClusterAction::Replace {
                    cr_name: name.to_owned(),
                    old: old.ids(),
                    new: new.ids(),
                    version: version.clone(),
                });
            }
            DecisionAction::Shutdown => {
                let dep = self.deployed.remove(name).expect("decided on a running instance");
                let ids = dep.ids();
                for id in &ids {
                    sim.terminate_instance(id).map_err(|source| cluster_err(name, source))?;
                }
                actions.push(ClusterAction::Terminate { cr_name: name.to_owned(), instances: ids });
            }
        }
        Ok(())
    }

    fn deploy(
        &self,
        name: &str,
        config: &[ConfigItem],
        version: &str,
        sim: &mut ClusterSim,
    ) -> Result<Deployed, OperatorError> {
        let spec = |kind: ServiceKind, node: NodeId, peer: Option<InstanceId>| DeploySpec {
            cr_name: name.to_owned(),
            service_kind: kind,
            node,
            config: config.to_vec(),
            version: version.to_owned(),
            peer,
        };
        match self.kind {
            ResourceKind::ManagedService => {
                let node = config_value(name, config, ConfigKey::Node)?;
                let kind: ServiceKind = config_value(name, config, ConfigKey::Kind)?
                    .as_str()
                    .parse()
                    .unwrap_or_else(|e: std::convert::Infallible| match e {});
                let id = sim.deploy_instance(spec(kind, node.into(), None)).map_err(|source| cluster_err(name, source))?;
                Ok(Deployed::Service { id, version: version.to_owned(), config: config.to_vec() })
            }
            ResourceKind::ManagedConnection => {
                let src = config_value(name, config, ConfigKey::SrcNode)?;
                let dst = config_value(name, config, ConfigKey::DstNode)?;
                let receiver = sim
                    .deploy_instance(spec(ServiceKind::CommReceiver, dst.into(), None))
                    .map_err(|source| cluster_err(name, source))?;
                let sender = match sim.deploy_instance(spec(ServiceKind::CommSender, src.into(), Some(receiver.clone())))
                {
                    Ok(id) => id,
                    Err(source) => {
                        // Never leave half a pair behind.
                        let _ = sim.terminate_instance(&receiver);
                        return Err(cluster_err(name, source));
                    }
                };
                Ok(Deployed::Pair { sender, receiver, version: version.to_owned(), config: config.to_vec() })
            }
        }
    }
}

fn config_value(cr_name: &str, config: &[ConfigItem], key: ConfigKey) -> Result<String, OperatorError> {
    config
        .iter()
        .find(|c| c.key == key)
        .map(|c| c.value.clone())
        .ok_or(OperatorError::MissingConfig { cr_name: cr_name.to_owned(), key: key.as_str() })
}

fn nodes_of(dep: &Deployed, sim: &ClusterSim) -> Vec<NodeId> {
    dep.ids().iter().filter_map(|id| sim.instance(id)).map(|i| i.node_id.clone()).collect()
}

fn cluster_err(cr_name: &str, source: ClusterError) -> OperatorError {
    OperatorError::Cluster { cr_name: cr_name.to_owned(), source }
}

/// Failure that exhausted its retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconcileFailure {
    pub kind: ResourceKind,
    pub cr_name: String,
    pub generation: u64,
    pub attempts: u32,
    pub error: OperatorError,
}

#[derive(Debug, Default)]
pub struct DrainReport {
    pub outcomes: Vec<ReconcileOutcome>,
    pub failures: Vec<ReconcileFailure>,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("control plane did not settle after {rounds} rounds ({pending} events pending)")]
pub struct NonQuiescence {
    pub rounds: usize,
    pub pending: usize,
}

/// The service and connection operators, drained together.
#[derive(Debug)]
pub struct OperatorSet {
    pub services: Operator,
    pub connections: Operator,
}

impl OperatorSet {
    pub fn new(store: &mut ResourceStore) -> Self {
        Self {
            services: Operator::new(ResourceKind::ManagedService, store),
            connections: Operator::new(ResourceKind::ManagedConnection, store),
        }
    }

    pub fn operator(&self, kind: ResourceKind) -> &Operator {
        match kind {
            ResourceKind::ManagedService => &self.services,
            ResourceKind::ManagedConnection => &self.connections,
        }
    }

    /// Processes watch events until both streams are empty and no retry is
    /// pending. Each round handles every event queued at its start, services
    /// before connections.
    pub fn drain(&mut self, store: &mut ResourceStore, sim: &mut ClusterSim) -> Result<DrainReport, NonQuiescence> {
        let mut report = DrainReport::default();
        let mut retries: Vec<(WatchEvent, u32)> = Vec::new();
        loop {
            let mut batch: Vec<(WatchEvent, u32)> = std::mem::take(&mut retries);
            for op in [&self.services, &self.connections] {
                while let Some(ev) = op.next_event(store) {
                    batch.push((ev, 1));
                }
            }
            if batch.is_empty() {
                return Ok(report);
            }
            report.rounds += 1;
            if report.rounds > MAX_DRAIN_ROUNDS {
                return Err(NonQuiescence { rounds: MAX_DRAIN_ROUNDS, pending: batch.len() });
            }
            for (ev, attempt) in batch {
                let op = match ev.kind {
                    ResourceKind::ManagedService => &mut self.services,
                    ResourceKind::ManagedConnection => &mut self.connections,
                };
                match op.reconcile(&ev, store, sim) {
                    Ok(outcome) => report.outcomes.push(outcome),
                    Err(error) if attempt < MAX_ATTEMPTS => {
                        log::debug!("{}/{} attempt {attempt} failed: {error}", ev.kind, ev.name);
                        retries.push((ev, attempt + 1));
                    }
                    Err(error) => report.failures.push(ReconcileFailure {
                        kind: ev.kind,
                        cr_name: ev.name.clone(),
                        generation: ev.generation,
                        attempts: attempt,
                        error,
                    }),
                }
            }
        }
    }
}
