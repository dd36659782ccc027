//! Scenario files.
//!
//! A scenario is TOML: entities, one geofence rule, optional application
//! templates and access policy, and a timeline made of scripted events,
//! waypoint routes, or both.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::catalog::ApplicationTemplate;
use crate::detector::{GeofenceRule, Position};
use crate::manager::AccessDomainPolicy;
use crate::model::{EntityId, EntityInfo, NodeRole, TopicKind, Topology};

pub const DEFAULT_SETTLE_TICKS: u64 = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimelineAction {
    Enter(EntityId),
    Leave(EntityId),
    Upgrade { app: String, version: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedEvent {
    pub at: u64,
    pub action: TimelineAction,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: u64,
    pub position: Position,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    pub events: Vec<TimedEvent>,
    pub routes: BTreeMap<EntityId, Vec<Waypoint>>,
}

impl Timeline {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty() && self.routes.is_empty()
    }

    /// Last tick at which the timeline can still change anything.
    pub fn last_tick(&self) -> u64 {
        let events = self.events.iter().map(|e| e.at).max().unwrap_or(0);
        let routes = self.routes.values().filter_map(|w| w.last()).map(|w| w.t).max().unwrap_or(0);
        events.max(routes)
    }

    /// Interpolated position at `t`; `None` before the first waypoint.
    pub fn position_at(&self, cv: &EntityId, t: u64) -> Option<Position> {
        let route = self.routes.get(cv)?;
        let first = route.first()?;
        if t < first.t {
            return None;
        }
        let Some(i) = route.iter().position(|w| w.t >= t) else {
            return route.last().map(|w| w.position);
        };
        let b = route[i];
        if b.t == t || i == 0 {
            return Some(b.position);
        }
        let a = route[i - 1];
        let f = (t - a.t) as f64 / (b.t - a.t) as f64;
        Some(Position::new(
            a.position.x + f * (b.position.x - a.position.x),
            a.position.y + f * (b.position.y - a.position.y),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub tick_budget: u64,
    pub settle_ticks: u64,
    pub topology: Topology,
    pub rule: GeofenceRule,
    pub templates: Vec<ApplicationTemplate>,
    pub access: AccessDomainPolicy,
    pub timeline: Timeline,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(default)]
    name: String,
    tick_budget: u64,
    #[serde(default)]
    settle_ticks: Option<u64>,
    #[serde(default, rename = "entity")]
    entities: Vec<RawEntity>,
    rule: GeofenceRule,
    #[serde(default, rename = "template")]
    templates: Vec<ApplicationTemplate>,
    #[serde(default)]
    access: AccessDomainPolicy,
    #[serde(default, rename = "event")]
    events: Vec<RawEvent>,
    #[serde(default, rename = "route")]
    routes: Vec<RawRoute>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntity {
    id: EntityId,
    role: NodeRole,
    #[serde(default)]
    capabilities: BTreeSet<TopicKind>,
    #[serde(default)]
    node: Option<EntityId>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    at: u64,
    #[serde(default)]
    enter: Option<EntityId>,
    #[serde(default)]
    leave: Option<EntityId>,
    #[serde(default)]
    upgrade: Option<String>,
    #[serde(default)]
    app: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoute {
    entity: EntityId,
    /// `[t, x, y]` triples.
    waypoints: Vec<(u64, f64, f64)>,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ScenarioError::Parse { line, column, message: e.message().to_owned() }
    })?;
    validate(raw)
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation(msg.into())
}

fn validate(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    let mut topology = Topology::new();
    for e in &raw.entities {
        let info = EntityInfo {
            role: e.role,
            node: e.node.clone().unwrap_or_else(|| e.id.clone()),
            capabilities: e.capabilities.clone(),
        };
        if topology.insert(e.id.clone(), info).is_some() {
            return Err(invalid(format!("entity {} declared twice", e.id)));
        }
    }
    let role_of = |id: &EntityId| topology.get(id).map(|i| i.role);
    let require_cv = |id: &EntityId, context: &str| match role_of(id) {
        None => Err(invalid(format!("{context}: undeclared entity {id}"))),
        Some(NodeRole::Cv) => Ok(()),
        Some(_) => Err(invalid(format!("{context}: {id} is not a connected vehicle"))),
    };

    let rule = raw.rule;
    if role_of(&rule.risu_id) != Some(NodeRole::Risu) {
        return Err(invalid(format!("rule: {} is not a declared roadside unit", rule.risu_id)));
    }
    if !rule.thresholds_valid() {
        return Err(invalid(format!("rule: d_stop {} below d_start {}", rule.d_stop, rule.d_start)));
    }

    let templates =
        if raw.templates.is_empty() { vec![ApplicationTemplate::object_detection_fusion("1")] } else { raw.templates };
    if !templates.iter().any(|t| t.app_name == rule.app_name) {
        return Err(invalid(format!("rule: no template for application {}", rule.app_name)));
    }

    let mut events = Vec::new();
    let mut inside: BTreeMap<EntityId, bool> = BTreeMap::new();
    let mut last_at = 0;
    for (i, e) in raw.events.into_iter().enumerate() {
        let context = format!("event {} (at {})", i + 1, e.at);
        if e.at < last_at {
            return Err(invalid(format!("{context}: events are not time-ordered")));
        }
        if e.at == 0 {
            return Err(invalid(format!("{context}: ticks start at 1")));
        }
        if e.at > raw.tick_budget {
            return Err(invalid(format!("{context}: beyond tick budget {}", raw.tick_budget)));
        }
        last_at = e.at;
        let action = match (e.enter, e.leave, e.upgrade) {
            (Some(cv), None, None) => TimelineAction::Enter(cv),
            (None, Some(cv), None) => TimelineAction::Leave(cv),
            (None, None, Some(version)) => {
                let app = e.app.unwrap_or_else(|| rule.app_name.clone());
                if !templates.iter().any(|t| t.app_name == app && t.version == version) {
                    return Err(invalid(format!("{context}: no template {app} version {version}")));
                }
                TimelineAction::Upgrade { app, version }
            }
            _ => return Err(invalid(format!("{context}: needs exactly one of enter, leave, upgrade"))),
        };
        if let TimelineAction::Enter(cv) | TimelineAction::Leave(cv) = &action {
            require_cv(cv, &context)?;
            let entering = matches!(action, TimelineAction::Enter(_));
            let was = inside.insert(cv.clone(), entering).unwrap_or(false);
            if was == entering {
                let what = if entering { "enters twice" } else { "leaves without entering" };
                return Err(invalid(format!("{context}: {cv} {what}")));
            }
        }
        events.push(TimedEvent { at: e.at, action });
    }

    let mut routes = BTreeMap::new();
    for r in raw.routes {
        let context = format!("route of {}", r.entity);
        require_cv(&r.entity, &context)?;
        if r.waypoints.is_empty() {
            return Err(invalid(format!("{context}: no waypoints")));
        }
        if r.waypoints.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid(format!("{context}: waypoints are not strictly time-ordered")));
        }
        let wps = r.waypoints.into_iter().map(|(t, x, y)| Waypoint { t, position: Position::new(x, y) }).collect();
        if routes.insert(r.entity.clone(), wps).is_some() {
            return Err(invalid(format!("{context}: declared twice")));
        }
    }

    for node in raw.access.allow.keys() {
        if !topology.has_node(node) {
            return Err(invalid(format!("access: unknown node {node}")));
        }
    }

    Ok(Scenario {
        name: raw.name,
        tick_budget: raw.tick_budget,
        settle_ticks: raw.settle_ticks.unwrap_or(DEFAULT_SETTLE_TICKS),
        topology,
        rule,
        templates,
        access: raw.access,
        timeline: Timeline { events, routes },
    })
}

/// Scenario text for `n` vehicles that each enter and later leave, with
/// overlapping presence. Every fourth vehicle carries a lidar.
pub fn crowd_scenario_text(n: usize) -> String {
    let mut s = String::new();
    let gap = 2;
    let stay = 20;
    let budget = gap * n + stay + 20;
    let _ = writeln!(s, "name = \"crowd-{n}\"\ntick_budget = {budget}\n");
    let _ = writeln!(s, "[rule]\napp_name = \"object-detection-fusion\"\nrisu_id = \"S\"\n");
    for (id, role, caps) in [("S", "risu", "[\"points\"]"), ("E", "edge", "[]"), ("C", "cloud", "[]")] {
        let _ = writeln!(s, "[[entity]]\nid = \"{id}\"\nrole = \"{role}\"\ncapabilities = {caps}\n");
    }
    for i in 0..n {
        let caps = if i % 4 == 0 { "[\"ego\", \"points\"]" } else { "[\"ego\"]" };
        let _ = writeln!(s, "[[entity]]\nid = \"V{i:03}\"\nrole = \"cv\"\ncapabilities = {caps}\n");
    }
    let mut events: Vec<(usize, &str, usize)> = Vec::new();
    for i in 0..n {
        events.push((1 + gap * i, "enter", i));
        events.push((1 + gap * i + stay, "leave", i));
    }
    events.sort();
    for (at, what, i) in events {
        let _ = writeln!(s, "[[event]]\nat = {at}\n{what} = \"V{i:03}\"\n");
    }
    s
}
