//! Shared domain vocabulary: entity ids, node roles, topic naming and
//! configuration items.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Identifier of a C-ITS entity (vehicle, roadside unit, server). Nodes use
/// the same id space.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub String);

impl EntityId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for EntityId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for EntityId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

pub type NodeId = EntityId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Cv,
    Risu,
    Edge,
    Cloud,
}

/// Kind of raw data an entity can provide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopicKind {
    Ego,
    #[serde(alias = "pointcloud")]
    Points,
}

impl TopicKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TopicKind::Ego => "ego",
            TopicKind::Points => "points",
        }
    }
}

impl fmt::Display for TopicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Topic names used across the data plane.
pub mod topics {
    use super::{EntityId, TopicKind};

    pub const FUSION_OUTPUT: &str = "/fusion/objects";

    pub fn source(entity: &EntityId, kind: TopicKind) -> String {
        format!("/{}/{}", entity, kind.as_str())
    }

    pub fn detections(source: &EntityId) -> String {
        format!("/detections/{}/objects", source)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ServiceKind {
    ObjectDetection,
    ObjectFusion,
    CommSender,
    CommReceiver,
    Other(String),
}

impl ServiceKind {
    /// Short slug used inside CR names.
    pub fn slug(&self) -> &str {
        match self {
            ServiceKind::ObjectDetection => "objdet",
            ServiceKind::ObjectFusion => "fusion",
            ServiceKind::CommSender => "sender",
            ServiceKind::CommReceiver => "receiver",
            ServiceKind::Other(s) => s,
        }
    }
}

impl fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for ServiceKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "objdet" | "object-detection" => ServiceKind::ObjectDetection,
            "fusion" | "object-fusion" => ServiceKind::ObjectFusion,
            "sender" => ServiceKind::CommSender,
            "receiver" => ServiceKind::CommReceiver,
            other => ServiceKind::Other(other.to_owned()),
        })
    }
}

impl Serialize for ServiceKind {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.slug())
    }
}

impl<'de> Deserialize<'de> for ServiceKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap_or_else(|e: std::convert::Infallible| match e {}))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConfigKey {
    /// Subscribed input topic (reference counted).
    Input,
    /// Forwarded topic of a connection (reference counted).
    Topic,
    Output,
    Node,
    Kind,
    SrcNode,
    DstNode,
}

impl ConfigKey {
    pub fn as_str(self) -> &'static str {
        match self {
            ConfigKey::Input => "input",
            ConfigKey::Topic => "topic",
            ConfigKey::Output => "output",
            ConfigKey::Node => "node",
            ConfigKey::Kind => "kind",
            ConfigKey::SrcNode => "src",
            ConfigKey::DstNode => "dst",
        }
    }

    /// Counted keys follow the demand; the rest are fixed at creation.
    pub fn is_counted(self) -> bool {
        matches!(self, ConfigKey::Input | ConfigKey::Topic)
    }
}

/// Typed key/value configuration entry. Serialized as `key:value`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConfigItem {
    pub key: ConfigKey,
    pub value: String,
}

impl ConfigItem {
    pub fn new(key: ConfigKey, value: impl Into<String>) -> Self {
        Self { key, value: value.into() }
    }

    pub fn input(topic: impl Into<String>) -> Self {
        Self::new(ConfigKey::Input, topic)
    }

    pub fn topic(topic: impl Into<String>) -> Self {
        Self::new(ConfigKey::Topic, topic)
    }

    pub fn output(topic: impl Into<String>) -> Self {
        Self::new(ConfigKey::Output, topic)
    }
}

impl fmt::Display for ConfigItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.key.as_str(), self.value)
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("malformed config item `{0}`")]
pub struct ConfigItemParseError(pub String);

impl FromStr for ConfigItem {
    type Err = ConfigItemParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (key, value) = s.split_once(':').ok_or_else(|| ConfigItemParseError(s.to_owned()))?;
        let key = match key {
            "input" => ConfigKey::Input,
            "topic" => ConfigKey::Topic,
            "output" => ConfigKey::Output,
            "node" => ConfigKey::Node,
            "kind" => ConfigKey::Kind,
            "src" => ConfigKey::SrcNode,
            "dst" => ConfigKey::DstNode,
            _ => return Err(ConfigItemParseError(s.to_owned())),
        };
        Ok(ConfigItem::new(key, value))
    }
}

impl Serialize for ConfigItem {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ConfigItem {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Static description of one entity in the cluster model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityInfo {
    pub role: NodeRole,
    /// Node hosting the entity's workloads; equal to the entity id unless mapped.
    pub node: NodeId,
    pub capabilities: BTreeSet<TopicKind>,
}

/// Entities and the nodes they map onto.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    entities: BTreeMap<EntityId, EntityInfo>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: EntityId, info: EntityInfo) -> Option<EntityInfo> {
        self.entities.insert(id, info)
    }

    /// Adds an entity that is its own node.
    pub fn add_entity(&mut self, id: &str, role: NodeRole, capabilities: &[TopicKind]) {
        self.entities.insert(
            EntityId::from(id),
            EntityInfo { role, node: EntityId::from(id), capabilities: capabilities.iter().copied().collect() },
        );
    }

    pub fn get(&self, id: &EntityId) -> Option<&EntityInfo> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &EntityId) -> bool {
        self.entities.contains_key(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = (&EntityId, &EntityInfo)> {
        self.entities.iter()
    }

    pub fn node_of(&self, id: &EntityId) -> Option<&NodeId> {
        self.entities.get(id).map(|e| &e.node)
    }

    /// Distinct node ids with their role. A node takes the role of the
    /// entity sharing its id, else of the first entity mapped onto it.
    pub fn nodes(&self) -> BTreeMap<NodeId, NodeRole> {
        let mut nodes = BTreeMap::new();
        for (id, info) in &self.entities {
            if *id == info.node {
                nodes.insert(info.node.clone(), info.role);
            } else {
                nodes.entry(info.node.clone()).or_insert(info.role);
            }
        }
        nodes
    }

    pub fn has_node(&self, node: &NodeId) -> bool {
        self.entities.values().any(|e| &e.node == node)
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> Vec<NodeId> {
        self.nodes().into_iter().filter(|(_, r)| *r == role).map(|(n, _)| n).collect()
    }
}
