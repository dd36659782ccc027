//! Simulated multi-node cluster with a node-local pub/sub data plane.
//!
//! Time advances in logical ticks. A message published on a node is on that
//! node's bus during the next `tick()`. Running sender clients copy matching
//! messages to their paired receiver, which sees them one tick later.
//! Detection and fusion instances run stub behaviors that only exercise
//! subscriptions and topic plumbing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::ServicePartSpec;
use crate::model::{ConfigItem, ConfigKey, EntityId, NodeId, NodeRole, ServiceKind};

pub type InstanceId = String;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstanceState {
    Pending,
    Running,
    Terminated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceInstance {
    pub instance_id: InstanceId,
    pub cr_name: String,
    pub service_kind: ServiceKind,
    pub node_id: NodeId,
    pub config: Vec<ConfigItem>,
    pub version: String,
    pub restart_count: u32,
    pub config_version: u32,
    pub state: InstanceState,
    /// Receiver a sender client forwards to.
    pub peer: Option<InstanceId>,
}

impl ServiceInstance {
    fn values(&self, key: ConfigKey) -> impl Iterator<Item = &str> {
        self.config.iter().filter(move |c| c.key == key).map(|c| c.value.as_str())
    }

    pub fn subscriptions(&self) -> BTreeSet<&str> {
        match self.service_kind {
            ServiceKind::CommSender => self.values(ConfigKey::Topic).collect(),
            _ => self.values(ConfigKey::Input).collect(),
        }
    }

    pub fn is_running(&self) -> bool {
        self.state == InstanceState::Running
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeploySpec {
    pub cr_name: String,
    pub service_kind: ServiceKind,
    pub node: NodeId,
    pub config: Vec<ConfigItem>,
    pub version: String,
    pub peer: Option<InstanceId>,
}

impl From<&ServicePartSpec> for DeploySpec {
    fn from(p: &ServicePartSpec) -> Self {
        Self {
            cr_name: p.cr_name.clone(),
            service_kind: p.service_kind.clone(),
            node: p.target_node.clone(),
            config: p.config_items.clone(),
            version: p.version.clone(),
            peer: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PayloadKind {
    Ego,
    PointCloud,
    ObjectList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Ego,
    PointCloud,
    /// Detection output: source entity and running count of processed clouds.
    Objects { source: EntityId, count: u64 },
    /// Fusion output: sorted origins that contributed this tick.
    Fused { origins: Vec<EntityId> },
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Ego => PayloadKind::Ego,
            Payload::PointCloud => PayloadKind::PointCloud,
            Payload::Objects { .. } | Payload::Fused { .. } => PayloadKind::ObjectList,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicMessage {
    pub topic: String,
    pub payload_kind: PayloadKind,
    pub origin: EntityId,
    pub seq: u64,
    pub stamp: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub visible: BTreeMap<NodeId, BTreeSet<String>>,
    /// Messages produced by instances this tick, with the producing instance.
    pub produced: Vec<(InstanceId, TopicMessage)>,
    pub forwarded: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ClusterError {
    #[error("node {0} already exists")]
    Duplicate(NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("instance {0} not found")]
    NotFound(InstanceId),
    #[error("instance {0} is not running")]
    NotRunning(InstanceId),
    #[error("sequence {seq} on {topic} from {origin} does not advance")]
    SeqRegression { origin: EntityId, topic: String, seq: u64 },
    #[error("injected failure deploying {0}")]
    Injected(String),
}

#[derive(Debug)]
struct Node {
    role: NodeRole,
    pending: Vec<TopicMessage>,
    visible: BTreeSet<String>,
}

#[derive(Debug, Default)]
pub struct ClusterSim {
    now: u64,
    nodes: BTreeMap<NodeId, Node>,
    instances: BTreeMap<InstanceId, ServiceInstance>,
    next_instance: u64,
    in_flight: Vec<(InstanceId, TopicMessage)>,
    seqs: BTreeMap<(EntityId, String), u64>,
    processed: BTreeMap<InstanceId, u64>,
    terminations: BTreeMap<(String, ServiceKind), u32>,
    failures_to_inject: u32,
}

impl ClusterSim {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn add_node(&mut self, node: NodeId, role: NodeRole) -> Result<(), ClusterError> {
        if self.nodes.contains_key(&node) {
            return Err(ClusterError::Duplicate(node));
        }
        self.nodes.insert(node, Node { role, pending: Vec::new(), visible: BTreeSet::new() });
        Ok(())
    }

    pub fn node_role(&self, node: &NodeId) -> Option<NodeRole> {
        self.nodes.get(node).map(|n| n.role)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    /// Makes the next `count` deployments fail.
    pub fn inject_deploy_failures(&mut self, count: u32) {
        self.failures_to_inject = count;
    }

    pub fn deploy_instance(&mut self, spec: DeploySpec) -> Result<InstanceId, ClusterError> {
        if !self.nodes.contains_key(&spec.node) {
            return Err(ClusterError::UnknownNode(spec.node));
        }
        if self.failures_to_inject > 0 {
            self.failures_to_inject -= 1;
            return Err(ClusterError::Injected(spec.cr_name));
        }
        self.next_instance += 1;
        let id = format!("inst-{:06}", self.next_instance);
        let restart_count =
            self.terminations.get(&(spec.cr_name.clone(), spec.service_kind.clone())).copied().unwrap_or(0);
        self.instances.insert(
            id.clone(),
            ServiceInstance {
                instance_id: id.clone(),
                cr_name: spec.cr_name,
                service_kind: spec.service_kind,
                node_id: spec.node,
                config: spec.config,
                version: spec.version,
                restart_count,
                config_version: 0,
                state: InstanceState::Running,
                peer: spec.peer,
            },
        );
        Ok(id)
    }

    /// Replaces the configuration of a running instance in place.
    pub fn reconfigure_instance(&mut self, id: &str, config: Vec<ConfigItem>) -> Result<(), ClusterError> {
        let inst = self.instances.get_mut(id).ok_or_else(|| ClusterError::NotFound(id.to_owned()))?;
        if !inst.is_running() {
            return Err(ClusterError::NotRunning(id.to_owned()));
        }
        inst.config = config;
        inst.config_version += 1;
        Ok(())
    }

    pub fn terminate_instance(&mut self, id: &str) -> Result<(), ClusterError> {
        let inst = match self.instances.get_mut(id) {
            Some(i) if i.state != InstanceState::Terminated => i,
            _ => return Err(ClusterError::NotFound(id.to_owned())),
        };
        inst.state = InstanceState::Terminated;
        *self.terminations.entry((inst.cr_name.clone(), inst.service_kind.clone())).or_default() += 1;
        self.in_flight.retain(|(receiver, _)| receiver != id);
        Ok(())
    }

    /// Redirects messages in flight to `from` so they arrive at `to`.
    pub fn hand_over(&mut self, from: &str, to: &str) -> Result<usize, ClusterError> {
        match self.instances.get(to) {
            Some(i) if i.is_running() => {}
            Some(_) => return Err(ClusterError::NotRunning(to.to_owned())),
            None => return Err(ClusterError::NotFound(to.to_owned())),
        }
        let mut moved = 0;
        for (receiver, _) in self.in_flight.iter_mut().filter(|(r, _)| r == from) {
            *receiver = to.to_owned();
            moved += 1;
        }
        Ok(moved)
    }

    pub fn instance(&self, id: &str) -> Option<&ServiceInstance> {
        self.instances.get(id)
    }

    pub fn running_instances(&self) -> impl Iterator<Item = &ServiceInstance> {
        self.instances.values().filter(|i| i.is_running())
    }

    pub fn all_instances(&self) -> impl Iterator<Item = &ServiceInstance> {
        self.instances.values()
    }

    pub fn publish(&mut self, node: &NodeId, msg: TopicMessage) -> Result<(), ClusterError> {
        let n = self.nodes.get_mut(node).ok_or_else(|| ClusterError::UnknownNode(node.clone()))?;
        let key = (msg.origin.clone(), msg.topic.clone());
        if let Some(&last) = self.seqs.get(&key) {
            if msg.seq <= last {
                return Err(ClusterError::SeqRegression { origin: msg.origin, topic: msg.topic, seq: msg.seq });
            }
        }
        self.seqs.insert(key, msg.seq);
        n.pending.push(msg);
        Ok(())
    }

    /// Builds a message with the next sequence number for (origin, topic).
    pub fn message(&self, origin: &EntityId, topic: &str, payload: Payload) -> TopicMessage {
        let seq = self.seqs.get(&(origin.clone(), topic.to_owned())).map_or(1, |s| s + 1);
        TopicMessage {
            topic: topic.to_owned(),
            payload_kind: payload.kind(),
            origin: origin.clone(),
            seq,
            stamp: self.now,
            payload,
        }
    }

    pub fn topics_visible_at(&self, node: &NodeId) -> Result<&BTreeSet<String>, ClusterError> {
        self.nodes.get(node).map(|n| &n.visible).ok_or_else(|| ClusterError::UnknownNode(node.clone()))
    }

    pub fn tick(&mut self) -> TickReport {
        self.now += 1;
        let now = self.now;

        let mut buses: BTreeMap<NodeId, Vec<TopicMessage>> =
            self.nodes.iter_mut().map(|(id, n)| (id.clone(), std::mem::take(&mut n.pending))).collect();
        for (receiver, msg) in std::mem::take(&mut self.in_flight) {
            if let Some(inst) = self.instances.get(&receiver).filter(|i| i.is_running()) {
                buses.get_mut(&inst.node_id).expect("instance node exists").push(msg);
            }
        }

        let mut order: Vec<(u8, InstanceId)> = self
            .running_instances()
            .filter_map(|i| match i.service_kind {
                ServiceKind::ObjectDetection => Some((0, i.instance_id.clone())),
                ServiceKind::ObjectFusion => Some((1, i.instance_id.clone())),
                _ => None,
            })
            .collect();
        order.sort();

        let mut produced = Vec::new();
        for (_, id) in order {
            let inst = &self.instances[&id];
            let bus = buses.get_mut(&inst.node_id).expect("instance node exists");
            let subs = inst.subscriptions();
            let outputs: Vec<String> = inst.values(ConfigKey::Output).map(str::to_owned).collect();
            match inst.service_kind {
                ServiceKind::ObjectDetection => {
                    let mut sources = BTreeSet::new();
                    let clouds: Vec<EntityId> = bus
                        .iter()
                        .filter(|m| m.payload_kind == PayloadKind::PointCloud && subs.contains(m.topic.as_str()))
                        .filter(|m| sources.insert(m.origin.clone()))
                        .map(|m| m.origin.clone())
                        .collect();
                    for source in clouds {
                        let count = self.processed.entry(id.clone()).or_default();
                        *count += 1;
                        let payload = Payload::Objects { source: source.clone(), count: *count };
                        for topic in &outputs {
                            let msg = next_message(&mut self.seqs, &source, topic, payload.clone(), now);
                            bus.push(msg.clone());
                            produced.push((id.clone(), msg));
                        }
                    }
                }
                ServiceKind::ObjectFusion => {
                    let origins: BTreeSet<EntityId> = bus
                        .iter()
                        .filter(|m| subs.contains(m.topic.as_str()))
                        .map(|m| match &m.payload {
                            Payload::Objects { source, .. } => source.clone(),
                            _ => m.origin.clone(),
                        })
                        .collect();
                    if !origins.is_empty() {
                        let payload = Payload::Fused { origins: origins.into_iter().collect() };
                        let origin = inst.node_id.clone();
                        for topic in &outputs {
                            let msg = next_message(&mut self.seqs, &origin, topic, payload.clone(), now);
                            bus.push(msg.clone());
                            produced.push((id.clone(), msg));
                        }
                    }
                }
                _ => {}
            }
        }

        let mut forwarded = 0;
        for sender in self.instances.values().filter(|i| i.is_running() && i.service_kind == ServiceKind::CommSender) {
            let Some(peer) = sender.peer.as_ref().filter(|p| self.instances.get(*p).is_some_and(|r| r.is_running()))
            else {
                continue;
            };
            let topics = sender.subscriptions();
            for msg in buses[&sender.node_id].iter().filter(|m| topics.contains(m.topic.as_str())) {
                self.in_flight.push((peer.clone(), msg.clone()));
                forwarded += 1;
            }
        }

        let mut visible = BTreeMap::new();
        for (id, node) in self.nodes.iter_mut() {
            node.visible = buses[id].iter().map(|m| m.topic.clone()).collect();
            visible.insert(id.clone(), node.visible.clone());
        }
        TickReport { tick: now, visible, produced, forwarded }
    }
}

fn next_message(
    seqs: &mut BTreeMap<(EntityId, String), u64>,
    origin: &EntityId,
    topic: &str,
    payload: Payload,
    now: u64,
) -> TopicMessage {
    let seq = seqs.entry((origin.clone(), topic.to_owned())).or_default();
    *seq += 1;
    TopicMessage {
        topic: topic.to_owned(),
        payload_kind: payload.kind(),
        origin: origin.clone(),
        seq: *seq,
        stamp: now,
        payload,
    }
}
