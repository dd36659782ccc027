//! Geofence event detector.
//!
//! Watches CV poses around one intersection and turns zone transitions into
//! deployment requests. It holds inside/outside flags only; what is deployed
//! is never visible from here, so a Release is built from the same inputs as
//! the Request it mirrors.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::InputDemand;
use crate::manager::{ConnectionDemand, DeploymentRequest, RequestAction};
use crate::model::{topics, EntityId, NodeId, NodeRole, TopicKind, Topology};

pub const DEFAULT_D_START: f64 = 150.0;
pub const DEFAULT_D_STOP: f64 = 170.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeofenceRule {
    #[serde(default)]
    pub center: Position,
    #[serde(default = "default_d_start")]
    pub d_start: f64,
    #[serde(default = "default_d_stop")]
    pub d_stop: f64,
    pub app_name: String,
    /// Topic kinds each entity provides. Filled from the topology when empty.
    #[serde(default)]
    pub capability_map: BTreeMap<EntityId, BTreeSet<TopicKind>>,
    pub risu_id: EntityId,
}

fn default_d_start() -> f64 {
    DEFAULT_D_START
}

fn default_d_stop() -> f64 {
    DEFAULT_D_STOP
}

impl GeofenceRule {
    /// False for NaN thresholds or `d_stop < d_start`.
    pub fn thresholds_valid(&self) -> bool {
        self.d_stop.partial_cmp(&self.d_start).is_some_and(|o| o.is_ge())
    }

    pub fn new(app_name: &str, risu_id: &str) -> Self {
        Self {
            center: Position::default(),
            d_start: DEFAULT_D_START,
            d_stop: DEFAULT_D_STOP,
            app_name: app_name.to_owned(),
            capability_map: BTreeMap::new(),
            risu_id: risu_id.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transition {
    Enter,
    Leave,
}

impl Transition {
    pub fn as_str(self) -> &'static str {
        match self {
            Transition::Enter => "enter",
            Transition::Leave => "leave",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DetectorError {
    #[error("{0} is not a registered connected vehicle")]
    UnknownEntity(EntityId),
    #[error("rule names {0} as roadside unit but it is not one")]
    NotARisu(EntityId),
    #[error("d_stop {d_stop} is below d_start {d_start}")]
    InvalidThresholds { d_start: f64, d_stop: f64 },
    #[error("{cv} cannot {} while {}", .transition.as_str(), if *.inside { "inside" } else { "outside" })]
    NoTransition { cv: EntityId, transition: Transition, inside: bool },
}

#[derive(Debug, Clone)]
pub struct EventDetector {
    rule: GeofenceRule,
    sink: Option<NodeId>,
    cvs: BTreeSet<EntityId>,
    poses: BTreeMap<EntityId, Position>,
    inside: BTreeMap<EntityId, bool>,
}

impl EventDetector {
    pub fn new(mut rule: GeofenceRule, topology: &Topology) -> Result<Self, DetectorError> {
        if !rule.thresholds_valid() {
            return Err(DetectorError::InvalidThresholds { d_start: rule.d_start, d_stop: rule.d_stop });
        }
        match topology.get(&rule.risu_id) {
            Some(info) if info.role == NodeRole::Risu => {}
            _ => return Err(DetectorError::NotARisu(rule.risu_id.clone())),
        }
        for (id, info) in topology.entities() {
            rule.capability_map.entry(id.clone()).or_insert_with(|| info.capabilities.clone());
        }
        let cvs = topology.entities().filter(|(_, i)| i.role == NodeRole::Cv).map(|(id, _)| id.clone()).collect();
        let sink = topology.nodes_with_role(NodeRole::Edge).into_iter().next();
        Ok(Self { rule, sink, cvs, poses: BTreeMap::new(), inside: BTreeMap::new() })
    }

    pub fn rule(&self) -> &GeofenceRule {
        &self.rule
    }

    pub fn is_inside(&self, cv: &EntityId) -> bool {
        self.inside.get(cv).copied().unwrap_or(false)
    }

    /// CVs currently inside the zone, in id order.
    pub fn inside(&self) -> impl Iterator<Item = &EntityId> {
        self.inside.iter().filter(|(_, v)| **v).map(|(k, _)| k)
    }

    pub fn observe_pose(&mut self, cv: &EntityId, position: Position, _t: u64) -> Result<(), DetectorError> {
        if !self.cvs.contains(cv) {
            return Err(DetectorError::UnknownEntity(cv.clone()));
        }
        self.poses.insert(cv.clone(), position);
        Ok(())
    }

    /// Compares every CV's latest pose with its zone flag and emits one
    /// request per transition, in entity-id order.
    pub fn evaluate(&mut self, t: u64) -> Vec<DeploymentRequest> {
        let mut out = Vec::new();
        for (cv, pose) in &self.poses {
            let d = pose.distance(&self.rule.center);
            let was_inside = self.inside.get(cv).copied().unwrap_or(false);
            let transition = if !was_inside && d <= self.rule.d_start {
                Transition::Enter
            } else if was_inside && d > self.rule.d_stop {
                Transition::Leave
            } else {
                continue;
            };
            out.push((cv.clone(), transition));
        }
        out.into_iter()
            .map(|(cv, tr)| {
                self.inside.insert(cv.clone(), tr == Transition::Enter);
                self.request_for(&cv, tr, t)
            })
            .collect()
    }

    /// Forces a transition without geometry, for scripted timelines.
    pub fn scripted_transition(
        &mut self,
        cv: &EntityId,
        transition: Transition,
        t: u64,
    ) -> Result<DeploymentRequest, DetectorError> {
        if !self.cvs.contains(cv) {
            return Err(DetectorError::UnknownEntity(cv.clone()));
        }
        let inside = self.is_inside(cv);
        if inside == (transition == Transition::Enter) {
            return Err(DetectorError::NoTransition { cv: cv.clone(), transition, inside });
        }
        self.inside.insert(cv.clone(), transition == Transition::Enter);
        Ok(self.request_for(cv, transition, t))
    }

    fn provides(&self, id: &EntityId, kind: TopicKind) -> bool {
        self.rule.capability_map.get(id).is_some_and(|c| c.contains(&kind))
    }

    fn request_for(&self, cv: &EntityId, transition: Transition, t: u64) -> DeploymentRequest {
        let risu = &self.rule.risu_id;
        let mut requesters = vec![cv.clone(), risu.clone()];
        requesters.sort();

        let mut cv_kinds = vec![TopicKind::Ego];
        if self.provides(cv, TopicKind::Points) {
            cv_kinds.push(TopicKind::Points);
        }
        let mut inputs: Vec<InputDemand> =
            cv_kinds.iter().map(|k| InputDemand { entity: cv.clone(), kind: *k }).collect();
        inputs.push(InputDemand { entity: risu.clone(), kind: TopicKind::Points });

        let connections = match &self.sink {
            Some(sink) => vec![
                ConnectionDemand {
                    src: cv.clone(),
                    dst: sink.clone(),
                    topics: cv_kinds.iter().map(|k| topics::source(cv, *k)).collect(),
                },
                ConnectionDemand {
                    src: risu.clone(),
                    dst: sink.clone(),
                    topics: vec![topics::source(risu, TopicKind::Points)],
                },
            ],
            None => Vec::new(),
        };

        DeploymentRequest {
            request_id: format!("ed-{t}-{cv}-{}", transition.as_str()),
            action: match transition {
                Transition::Enter => RequestAction::Request,
                Transition::Leave => RequestAction::Release,
            },
            app_name: self.rule.app_name.clone(),
            requesters,
            inputs,
            connections,
            issued_at: t,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const APP: &str = "object-detection-fusion";

    fn topology() -> Topology {
        let mut t = Topology::new();
        t.add_entity("V0", NodeRole::Cv, &[TopicKind::Ego, TopicKind::Points]);
        t.add_entity("V1", NodeRole::Cv, &[TopicKind::Ego]);
        t.add_entity("S", NodeRole::Risu, &[TopicKind::Points]);
        t.add_entity("E", NodeRole::Edge, &[]);
        t.add_entity("C", NodeRole::Cloud, &[]);
        t
    }

    fn detector() -> EventDetector {
        EventDetector::new(GeofenceRule::new(APP, "S"), &topology()).unwrap()
    }

    fn at(x: f64) -> Position {
        Position::new(x, 0.0)
    }

    #[test]
    fn lidar_cv_demands_both_point_clouds() {
        let mut ed = detector();
        ed.observe_pose(&"V0".into(), at(100.0), 1).unwrap();
        let reqs = ed.evaluate(1);
        assert_eq!(reqs.len(), 1);
        let r = &reqs[0];
        assert_eq!(r.action, RequestAction::Request);
        assert_eq!(r.requesters, vec![EntityId::from("S"), EntityId::from("V0")]);
        assert_eq!(
            r.inputs,
            vec![
                InputDemand::new("V0", TopicKind::Ego),
                InputDemand::new("V0", TopicKind::Points),
                InputDemand::new("S", TopicKind::Points)
            ]
        );
        assert_eq!(r.connections[0].topics, ["/V0/ego", "/V0/points"]);
        assert_eq!(r.connections[1].topics, ["/S/points"]);
        assert_eq!(r.request_id, "ed-1-V0-enter");
    }

    #[test]
    fn ego_only_cv() {
        let mut ed = detector();
        let r = ed.scripted_transition(&"V1".into(), Transition::Enter, 5).unwrap();
        assert_eq!(r.inputs, vec![InputDemand::new("V1", TopicKind::Ego), InputDemand::new("S", TopicKind::Points)]);
    }

    #[test]
    fn poses_from_non_cvs_are_rejected() {
        let mut ed = detector();
        assert_eq!(ed.observe_pose(&"S".into(), at(0.0), 0), Err(DetectorError::UnknownEntity("S".into())));
        assert!(ed.observe_pose(&"V7".into(), at(0.0), 0).is_err());
    }

    #[test]
    fn last_pose_wins() {
        let mut ed = detector();
        ed.observe_pose(&"V0".into(), at(100.0), 3).unwrap();
        ed.observe_pose(&"V0".into(), at(500.0), 3).unwrap();
        assert!(ed.evaluate(3).is_empty());
    }

    #[test]
    fn boundary_and_hysteresis() {
        let mut ed = detector();
        let v0 = EntityId::from("V0");
        ed.observe_pose(&v0, at(150.0 + 1e-9), 0).unwrap();
        assert!(ed.evaluate(0).is_empty());
        ed.observe_pose(&v0, at(150.0), 1).unwrap();
        assert_eq!(ed.evaluate(1).len(), 1);
        for (t, x) in [(2, 150.5), (3, 169.0), (4, 170.0)] {
            ed.observe_pose(&v0, at(x), t).unwrap();
            assert!(ed.evaluate(t).is_empty(), "left early at {x}");
        }
        ed.observe_pose(&v0, at(170.001), 5).unwrap();
        let out = ed.evaluate(5);
        assert_eq!(out[0].action, RequestAction::Release);
        // Back inside the hysteresis band is not enough to re-enter.
        ed.observe_pose(&v0, at(160.0), 6).unwrap();
        assert!(ed.evaluate(6).is_empty());
    }

    #[test]
    fn release_mirrors_request() {
        let mut ed = detector();
        let v0 = EntityId::from("V0");
        let enter = ed.scripted_transition(&v0, Transition::Enter, 1).unwrap();
        let leave = ed.scripted_transition(&v0, Transition::Leave, 9).unwrap();
        assert_eq!((enter.requesters, enter.inputs, enter.connections), (leave.requesters, leave.inputs, leave.connections));
        assert!(ed.scripted_transition(&v0, Transition::Leave, 10).is_err());
    }

    #[test]
    fn simultaneous_transitions_in_id_order() {
        let mut ed = detector();
        ed.observe_pose(&"V1".into(), at(10.0), 0).unwrap();
        ed.observe_pose(&"V0".into(), at(20.0), 0).unwrap();
        let ids: Vec<String> = ed.evaluate(0).into_iter().map(|r| r.request_id).collect();
        assert_eq!(ids, ["ed-0-V0-enter", "ed-0-V1-enter"]);
    }

    #[test]
    fn thresholds_are_validated() {
        let mut rule = GeofenceRule::new(APP, "S");
        rule.d_stop = 100.0;
        assert!(matches!(EventDetector::new(rule, &topology()), Err(DetectorError::InvalidThresholds { .. })));
        assert!(matches!(
            EventDetector::new(GeofenceRule::new(APP, "V0"), &topology()),
            Err(DetectorError::NotARisu(_))
        ));
    }
}
