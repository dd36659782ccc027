//! Application registry. Resolves an application name plus a demand into
//! concrete service parts, connection parts, placement and topic names.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{topics, ConfigItem, ConfigKey, EntityId, NodeId, NodeRole, ServiceKind, TopicKind, Topology};

/// How many parts a rule produces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Keying {
    /// One part per distinct entity demanding this input kind.
    PerSource(TopicKind),
    Singleton,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputRule {
    /// The keyed source's own topic of the keyed kind.
    SourceTopic,
    /// Every demanded input of the given kind.
    Demanded(TopicKind),
    /// Outputs of the parts resolved earlier for the given service kind.
    OutputsOf(ServiceKind),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartRule {
    pub service_kind: ServiceKind,
    pub keying: Keying,
    #[serde(default)]
    pub inputs: Vec<InputRule>,
    /// Output topic; `{source}` is replaced with the keyed source.
    #[serde(default)]
    pub output: Option<String>,
    /// Node role hosting this part.
    pub placement: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApplicationTemplate {
    pub app_name: String,
    pub version: String,
    pub parts: Vec<PartRule>,
}

impl ApplicationTemplate {
    /// The object detection fusion application: one detection part per
    /// point-cloud source and a fusion singleton, all on the edge node.
    pub fn object_detection_fusion(version: &str) -> Self {
        Self {
            app_name: "object-detection-fusion".into(),
            version: version.into(),
            parts: vec![
                PartRule {
                    service_kind: ServiceKind::ObjectDetection,
                    keying: Keying::PerSource(TopicKind::Points),
                    inputs: vec![InputRule::SourceTopic],
                    output: Some("/detections/{source}/objects".into()),
                    placement: NodeRole::Edge,
                },
                PartRule {
                    service_kind: ServiceKind::ObjectFusion,
                    keying: Keying::Singleton,
                    inputs: vec![
                        InputRule::Demanded(TopicKind::Ego),
                        InputRule::OutputsOf(ServiceKind::ObjectDetection),
                    ],
                    output: Some(topics::FUSION_OUTPUT.into()),
                    placement: NodeRole::Edge,
                },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct InputDemand {
    pub entity: EntityId,
    pub kind: TopicKind,
}

impl InputDemand {
    pub fn new(entity: &str, kind: TopicKind) -> Self {
        Self { entity: entity.into(), kind }
    }

    pub fn topic(&self) -> String {
        topics::source(&self.entity, self.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemandDescription {
    pub requesters: Vec<EntityId>,
    pub inputs: Vec<InputDemand>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServicePartSpec {
    pub cr_name: String,
    pub service_kind: ServiceKind,
    pub target_node: NodeId,
    pub config_items: Vec<ConfigItem>,
    pub version: String,
}

impl ServicePartSpec {
    pub fn outputs(&self) -> impl Iterator<Item = &str> {
        self.config_items.iter().filter(|c| c.key == ConfigKey::Output).map(|c| c.value.as_str())
    }

    pub fn inputs(&self) -> impl Iterator<Item = &str> {
        self.config_items.iter().filter(|c| c.key == ConfigKey::Input).map(|c| c.value.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionPartSpec {
    pub cr_name: String,
    pub src_node: NodeId,
    pub dst_node: NodeId,
    pub topics: Vec<String>,
}

impl ConnectionPartSpec {
    pub fn config_items(&self) -> Vec<ConfigItem> {
        let mut items = vec![
            ConfigItem::new(ConfigKey::SrcNode, self.src_node.as_str()),
            ConfigItem::new(ConfigKey::DstNode, self.dst_node.as_str()),
        ];
        items.extend(self.topics.iter().map(ConfigItem::topic));
        items
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ResolvedParts {
    pub services: Vec<ServicePartSpec>,
    pub connections: Vec<ConnectionPartSpec>,
}

pub fn service_cr_name(app: &str, kind: &ServiceKind, key: Option<&EntityId>) -> String {
    match key {
        Some(src) => format!("svc-{}-{}-{}", app, kind.slug(), src),
        None => format!("svc-{}-{}-singleton", app, kind.slug()),
    }
}

pub fn connection_cr_name(src: &NodeId, dst: &NodeId) -> String {
    format!("conn-{}-{}", src, dst)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("application {app} version {version} already registered")]
    AlreadyRegistered { app: String, version: String },
    #[error("unknown application {0}")]
    UnknownApplication(String),
    #[error("application {app} has no version {version}")]
    UnknownVersion { app: String, version: String },
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("no node with role {role:?} to place {kind}")]
    NoPlacementTarget { kind: ServiceKind, role: NodeRole },
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    // Versions in registration order; the first one is the default rollout.
    apps: BTreeMap<String, Vec<ApplicationTemplate>>,
}

impl Catalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_application(&mut self, template: ApplicationTemplate) -> Result<(), CatalogError> {
        let versions = self.apps.entry(template.app_name.clone()).or_default();
        if versions.iter().any(|t| t.version == template.version) {
            return Err(CatalogError::AlreadyRegistered { app: template.app_name, version: template.version });
        }
        versions.push(template);
        Ok(())
    }

    pub fn template(&self, app: &str, version: &str) -> Result<&ApplicationTemplate, CatalogError> {
        let versions = self.apps.get(app).ok_or_else(|| CatalogError::UnknownApplication(app.to_owned()))?;
        versions
            .iter()
            .find(|t| t.version == version)
            .ok_or_else(|| CatalogError::UnknownVersion { app: app.to_owned(), version: version.to_owned() })
    }

    pub fn default_version(&self, app: &str) -> Result<&str, CatalogError> {
        self.apps
            .get(app)
            .and_then(|v| v.first())
            .map(|t| t.version.as_str())
            .ok_or_else(|| CatalogError::UnknownApplication(app.to_owned()))
    }

    pub fn contains(&self, app: &str) -> bool {
        self.apps.contains_key(app)
    }

    /// Resolves a demand into parts. Pure: identical inputs give identical
    /// output, including order. Detection parts come sorted by source,
    /// connections in order of first appearance of their source in the
    /// demanded inputs.
    pub fn resolve(
        &self,
        app: &str,
        version: &str,
        demand: &DemandDescription,
        topology: &Topology,
    ) -> Result<ResolvedParts, CatalogError> {
        let template = self.template(app, version)?;
        for id in demand.requesters.iter().chain(demand.inputs.iter().map(|i| &i.entity)) {
            if !topology.contains(id) {
                return Err(CatalogError::UnknownEntity(id.clone()));
            }
        }

        let mut inputs: Vec<&InputDemand> = Vec::new();
        for input in &demand.inputs {
            if !inputs.contains(&input) {
                inputs.push(input);
            }
        }

        let mut services: Vec<ServicePartSpec> = Vec::new();
        // (source entity, consumer node, topic) for every raw input a part consumes.
        let mut consumed: Vec<(EntityId, NodeId, String)> = Vec::new();

        for rule in &template.parts {
            let node = place(topology, rule)?;
            let keys: Vec<Option<(EntityId, TopicKind)>> = match &rule.keying {
                Keying::Singleton => vec![None],
                Keying::PerSource(kind) => {
                    let mut sources: Vec<EntityId> =
                        inputs.iter().filter(|i| i.kind == *kind).map(|i| i.entity.clone()).collect();
                    sources.sort();
                    sources.dedup();
                    sources.into_iter().map(|s| Some((s, *kind))).collect()
                }
            };
            for key in keys {
                let mut items = Vec::new();
                for input_rule in &rule.inputs {
                    match input_rule {
                        InputRule::SourceTopic => {
                            if let Some((src, kind)) = &key {
                                let topic = topics::source(src, *kind);
                                consumed.push((src.clone(), node.clone(), topic.clone()));
                                items.push(ConfigItem::input(topic));
                            }
                        }
                        InputRule::Demanded(kind) => {
                            for i in inputs.iter().filter(|i| i.kind == *kind) {
                                consumed.push((i.entity.clone(), node.clone(), i.topic()));
                                items.push(ConfigItem::input(i.topic()));
                            }
                        }
                        InputRule::OutputsOf(kind) => {
                            for part in services.iter().filter(|p| p.service_kind == *kind) {
                                items.extend(part.outputs().map(ConfigItem::input));
                            }
                        }
                    }
                }
                let source = key.as_ref().map(|(s, _)| s);
                if let Some(pattern) = &rule.output {
                    let topic = match source {
                        Some(s) => pattern.replace("{source}", s.as_str()),
                        None => pattern.clone(),
                    };
                    items.push(ConfigItem::output(topic));
                }
                items.push(ConfigItem::new(ConfigKey::Kind, rule.service_kind.slug()));
                items.push(ConfigItem::new(ConfigKey::Node, node.as_str()));
                services.push(ServicePartSpec {
                    cr_name: service_cr_name(app, &rule.service_kind, source),
                    service_kind: rule.service_kind.clone(),
                    target_node: node.clone(),
                    config_items: items,
                    version: template.version.clone(),
                });
            }
        }

        let mut connections: Vec<ConnectionPartSpec> = Vec::new();
        for input in &inputs {
            let src_node = topology.node_of(&input.entity).expect("validated above");
            let topic = input.topic();
            let mut sinks: Vec<&NodeId> =
                consumed.iter().filter(|(e, _, t)| e == &input.entity && *t == topic).map(|(_, n, _)| n).collect();
            sinks.sort();
            sinks.dedup();
            for dst in sinks.into_iter().filter(|d| *d != src_node) {
                let name = connection_cr_name(src_node, dst);
                match connections.iter_mut().find(|c| c.cr_name == name) {
                    Some(conn) => {
                        if !conn.topics.contains(&topic) {
                            conn.topics.push(topic.clone());
                        }
                    }
                    None => connections.push(ConnectionPartSpec {
                        cr_name: name,
                        src_node: src_node.clone(),
                        dst_node: dst.clone(),
                        topics: vec![topic.clone()],
                    }),
                }
            }
        }

        Ok(ResolvedParts { services, connections })
    }
}

fn place(topology: &Topology, rule: &PartRule) -> Result<NodeId, CatalogError> {
    topology
        .nodes_with_role(rule.placement)
        .into_iter()
        .next()
        .ok_or_else(|| CatalogError::NoPlacementTarget { kind: rule.service_kind.clone(), role: rule.placement })
}
