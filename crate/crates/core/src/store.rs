//! Versioned custom-resource store with per-kind watch streams.
//!
//! This plays the role of the API server: the application manager writes
//! demand deltas into named resources and the operators consume the
//! resulting change events. All mutations go through `&mut self`, which
//! gives a single total order of store mutations.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{ConfigItem, EntityId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ResourceKind {
    ManagedService,
    ManagedConnection,
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResourceKind::ManagedService => "ManagedService",
            ResourceKind::ManagedConnection => "ManagedConnection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemandAction {
    Request,
    Release,
    /// Version change only; carries no requesters and no configuration.
    Upgrade,
}

/// The latest demand change on one application part.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandDelta {
    pub demand_id: String,
    pub action: DemandAction,
    pub app_name: String,
    pub requesters: Vec<EntityId>,
    pub config_items: Vec<ConfigItem>,
    pub app_version: String,
}

impl DemandDelta {
    pub fn validate(&self) -> Result<(), StoreError> {
        if self.demand_id.is_empty() {
            return Err(StoreError::MalformedSpec("empty demand_id".into()));
        }
        match self.action {
            DemandAction::Request | DemandAction::Release if self.requesters.is_empty() => {
                Err(StoreError::MalformedSpec(format!("demand {} has no requesters", self.demand_id)))
            }
            DemandAction::Upgrade if !self.requesters.is_empty() || !self.config_items.is_empty() => {
                Err(StoreError::MalformedSpec(format!(
                    "upgrade demand {} must not carry requesters or config",
                    self.demand_id
                )))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    Pending,
    Running,
    Reconfiguring,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResourceStatus {
    pub phase: Phase,
    pub support: Vec<EntityId>,
    pub instance_ids: Vec<String>,
    pub observed_generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CustomResource {
    pub kind: ResourceKind,
    pub name: String,
    pub spec: DemandDelta,
    pub status: ResourceStatus,
    pub generation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Change {
    Created,
    SpecUpdated,
    Deleted,
}

/// Change notification. `spec` is the delta written at `generation` so a
/// consumer sees every delta even when several are queued for one name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub kind: ResourceKind,
    pub name: String,
    pub generation: u64,
    pub change: Change,
    pub spec: Option<DemandDelta>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StoreError {
    #[error("{kind}/{name} not found")]
    NotFound { kind: ResourceKind, name: String },
    #[error("demand {demand_id} already applied to {kind}/{name}")]
    DuplicateDemandId { kind: ResourceKind, name: String, demand_id: String },
    #[error("status of {kind}/{name} observes generation {observed} beyond {generation}")]
    StaleStatus { kind: ResourceKind, name: String, observed: u64, generation: u64 },
    #[error("malformed spec: {0}")]
    MalformedSpec(String),
    #[error("unknown watch handle {0}")]
    UnknownWatch(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WatchId(usize);

#[derive(Debug)]
struct Subscriber {
    kind: ResourceKind,
    queue: VecDeque<WatchEvent>,
}

type Key = (ResourceKind, String);

#[derive(Debug, Default)]
pub struct ResourceStore {
    resources: BTreeMap<Key, CustomResource>,
    // Survives deletion so that late duplicate deliveries stay no-ops.
    seen_demands: BTreeMap<Key, BTreeSet<String>>,
    subscribers: Vec<Subscriber>,
    log: Vec<WatchEvent>,
}

impl ResourceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply_cr(&mut self, kind: ResourceKind, name: &str, spec: DemandDelta) -> Result<u64, StoreError> {
        spec.validate()?;
        let key = (kind, name.to_owned());
        let seen = self.seen_demands.entry(key.clone()).or_default();
        if seen.contains(&spec.demand_id) {
            return Err(StoreError::DuplicateDemandId {
                kind,
                name: name.to_owned(),
                demand_id: spec.demand_id,
            });
        }
        seen.insert(spec.demand_id.clone());

        let (generation, change) = match self.resources.get_mut(&key) {
            Some(cr) => {
                cr.generation += 1;
                cr.spec = spec.clone();
                (cr.generation, Change::SpecUpdated)
            }
            None => {
                self.resources.insert(
                    key,
                    CustomResource {
                        kind,
                        name: name.to_owned(),
                        spec: spec.clone(),
                        status: ResourceStatus::default(),
                        generation: 1,
                    },
                );
                (1, Change::Created)
            }
        };
        self.emit(WatchEvent { kind, name: name.to_owned(), generation, change, spec: Some(spec) });
        Ok(generation)
    }

    pub fn get_cr(&self, kind: ResourceKind, name: &str) -> Result<&CustomResource, StoreError> {
        self.resources
            .get(&(kind, name.to_owned()))
            .ok_or_else(|| StoreError::NotFound { kind, name: name.to_owned() })
    }

    pub fn delete_cr(&mut self, kind: ResourceKind, name: &str) -> Result<(), StoreError> {
        let cr = self
            .resources
            .remove(&(kind, name.to_owned()))
            .ok_or_else(|| StoreError::NotFound { kind, name: name.to_owned() })?;
        self.emit(WatchEvent {
            kind,
            name: name.to_owned(),
            generation: cr.generation,
            change: Change::Deleted,
            spec: None,
        });
        Ok(())
    }

    pub fn update_status(&mut self, kind: ResourceKind, name: &str, status: ResourceStatus) -> Result<(), StoreError> {
        let cr = self
            .resources
            .get_mut(&(kind, name.to_owned()))
            .ok_or_else(|| StoreError::NotFound { kind, name: name.to_owned() })?;
        if status.observed_generation > cr.generation {
            return Err(StoreError::StaleStatus {
                kind,
                name: name.to_owned(),
                observed: status.observed_generation,
                generation: cr.generation,
            });
        }
        cr.status = status;
        Ok(())
    }

    /// Subscribes to `kind`. The new queue is seeded with a synthetic
    /// `Created` event per existing resource, carrying its latest generation.
    pub fn watch(&mut self, kind: ResourceKind) -> WatchId {
        let queue = self
            .resources
            .values()
            .filter(|cr| cr.kind == kind)
            .map(|cr| WatchEvent {
                kind,
                name: cr.name.clone(),
                generation: cr.generation,
                change: Change::Created,
                spec: Some(cr.spec.clone()),
            })
            .collect();
        self.subscribers.push(Subscriber { kind, queue });
        WatchId(self.subscribers.len() - 1)
    }

    pub fn next_event(&mut self, watch: WatchId) -> Result<Option<WatchEvent>, StoreError> {
        let sub = self.subscribers.get_mut(watch.0).ok_or(StoreError::UnknownWatch(watch.0))?;
        Ok(sub.queue.pop_front())
    }

    pub fn pending_events(&self, watch: WatchId) -> usize {
        self.subscribers.get(watch.0).map_or(0, |s| s.queue.len())
    }

    pub fn list(&self, kind: ResourceKind) -> impl Iterator<Item = &CustomResource> {
        self.resources.values().filter(move |cr| cr.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.resources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.resources.is_empty()
    }

    /// Every event ever emitted, in mutation order.
    pub fn event_log(&self) -> &[WatchEvent] {
        &self.log
    }

    /// Rebuilds a store by replaying an event log. Statuses are not part of
    /// the log and come back as defaults.
    pub fn replay(log: &[WatchEvent]) -> Result<Self, StoreError> {
        let mut store = Self::new();
        for ev in log {
            match ev.change {
                Change::Created | Change::SpecUpdated => {
                    let spec = ev
                        .spec
                        .clone()
                        .ok_or_else(|| StoreError::MalformedSpec(format!("event for {} lacks spec", ev.name)))?;
                    store.apply_cr(ev.kind, &ev.name, spec)?;
                }
                Change::Deleted => store.delete_cr(ev.kind, &ev.name)?,
            }
        }
        Ok(store)
    }

    fn emit(&mut self, event: WatchEvent) {
        for sub in self.subscribers.iter_mut().filter(|s| s.kind == event.kind) {
            sub.queue.push_back(event.clone());
        }
        self.log.push(event);
    }
}
