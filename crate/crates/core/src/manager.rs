//! Application manager: turns deployment requests into demand-delta
//! resources. It never looks at running instances; the operators own all
//! bookkeeping.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, CatalogError, DemandDescription, InputDemand, ResolvedParts};
use crate::model::{EntityId, NodeId, Topology};
use crate::store::{DemandAction, DemandDelta, ResourceKind, ResourceStore, StoreError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestAction {
    Request,
    Release,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectionDemand {
    pub src: EntityId,
    pub dst: NodeId,
    pub topics: Vec<String>,
}

/// A demand as formulated by the event detector. Carries no knowledge of
/// what is already running.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentRequest {
    pub request_id: String,
    pub action: RequestAction,
    pub app_name: String,
    pub requesters: Vec<EntityId>,
    pub inputs: Vec<InputDemand>,
    #[serde(default)]
    pub connections: Vec<ConnectionDemand>,
    #[serde(default)]
    pub issued_at: u64,
}

impl DeploymentRequest {
    pub fn demand(&self) -> DemandDescription {
        DemandDescription { requesters: self.requesters.clone(), inputs: self.inputs.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedCr {
    pub kind: ResourceKind,
    pub name: String,
    pub generation: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestResult {
    pub request_id: String,
    pub outcome: Outcome,
    pub applied_crs: Vec<AppliedCr>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ManagerError {
    #[error("application {app} may not act on node {node}")]
    AccessDenied { app: String, node: NodeId },
    #[error("unknown application {0}")]
    UnknownApplication(String),
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("application {app} has no version {version}")]
    UnknownVersion { app: String, version: String },
    #[error("no live resources of application {0}")]
    NothingRunning(String),
    #[error("request {} already processed", .0.request_id)]
    DuplicateRequest(Box<RequestResult>),
    #[error("requested connections do not match resolution: {0}")]
    InconsistentConnections(String),
    #[error(transparent)]
    Catalog(CatalogError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl From<CatalogError> for ManagerError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::UnknownApplication(a) => ManagerError::UnknownApplication(a),
            CatalogError::UnknownEntity(e) => ManagerError::UnknownEntity(e),
            CatalogError::UnknownVersion { app, version } => ManagerError::UnknownVersion { app, version },
            other => ManagerError::Catalog(other),
        }
    }
}

/// Per-node allowlist of application names. Nodes without an entry accept
/// every application.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccessDomainPolicy {
    pub allow: BTreeMap<NodeId, BTreeSet<String>>,
}

impl AccessDomainPolicy {
    pub fn permissive() -> Self {
        Self::default()
    }

    pub fn restrict(&mut self, node: &str, apps: &[&str]) {
        self.allow.insert(node.into(), apps.iter().map(|a| a.to_string()).collect());
    }

    fn allows(&self, app: &str, node: &NodeId) -> bool {
        self.allow.get(node).is_none_or(|apps| apps.contains(app))
    }
}

#[derive(Debug, Default)]
pub struct AppManager {
    policy: AccessDomainPolicy,
    // Version new deltas are written with; set by upgrades.
    rollout: BTreeMap<String, String>,
    processed: BTreeMap<String, RequestResult>,
}

impl AppManager {
    pub fn new(policy: AccessDomainPolicy) -> Self {
        Self { policy, ..Default::default() }
    }

    pub fn policy(&self) -> &AccessDomainPolicy {
        &self.policy
    }

    pub fn has_processed(&self, request_id: &str) -> bool {
        self.processed.contains_key(request_id)
    }

    pub fn check_access(&self, topology: &Topology, app: &str, node: &NodeId) -> Result<bool, ManagerError> {
        if !topology.has_node(node) {
            return Err(ManagerError::UnknownEntity(node.clone()));
        }
        Ok(self.policy.allows(app, node))
    }

    pub fn active_version<'a>(&'a self, catalog: &'a Catalog, app: &str) -> Result<&'a str, ManagerError> {
        match self.rollout.get(app) {
            Some(v) => Ok(v),
            None => Ok(catalog.default_version(app)?),
        }
    }

    /// Handles a request, folding validation failures into a `Rejected`
    /// result and duplicates into the originally returned result.
    pub fn handle_request(
        &mut self,
        catalog: &Catalog,
        topology: &Topology,
        store: &mut ResourceStore,
        req: &DeploymentRequest,
    ) -> RequestResult {
        match self.try_handle_request(catalog, topology, store, req) {
            Ok(result) => result,
            Err(ManagerError::DuplicateRequest(original)) => *original,
            Err(e) => {
                let result = RequestResult {
                    request_id: req.request_id.clone(),
                    outcome: Outcome::Rejected,
                    applied_crs: Vec::new(),
                    reason: Some(e.to_string()),
                };
                self.processed.insert(req.request_id.clone(), result.clone());
                result
            }
        }
    }

    pub fn try_handle_request(
        &mut self,
        catalog: &Catalog,
        topology: &Topology,
        store: &mut ResourceStore,
        req: &DeploymentRequest,
    ) -> Result<RequestResult, ManagerError> {
        if let Some(original) = self.processed.get(&req.request_id) {
            return Err(ManagerError::DuplicateRequest(Box::new(original.clone())));
        }
        let version = self.active_version(catalog, &req.app_name)?.to_owned();
        let parts = catalog.resolve(&req.app_name, &version, &req.demand(), topology)?;
        self.validate(topology, req, &parts)?;

        let action = match req.action {
            RequestAction::Request => DemandAction::Request,
            RequestAction::Release => DemandAction::Release,
        };
        let delta = |name: &str, config_items| DemandDelta {
            demand_id: format!("{}/{}", req.request_id, name),
            action,
            app_name: req.app_name.clone(),
            requesters: req.requesters.clone(),
            config_items,
            app_version: version.clone(),
        };

        let mut applied = Vec::new();
        for part in &parts.services {
            let d = delta(&part.cr_name, part.config_items.clone());
            apply(store, ResourceKind::ManagedService, &part.cr_name, d, &mut applied)?;
        }
        for conn in &parts.connections {
            let d = delta(&conn.cr_name, conn.config_items());
            apply(store, ResourceKind::ManagedConnection, &conn.cr_name, d, &mut applied)?;
        }

        let result = RequestResult {
            request_id: req.request_id.clone(),
            outcome: Outcome::Accepted,
            applied_crs: applied,
            reason: None,
        };
        self.processed.insert(req.request_id.clone(), result.clone());
        Ok(result)
    }

    /// Writes a version-only delta to every live resource of `app`.
    pub fn upgrade_application(
        &mut self,
        catalog: &Catalog,
        store: &mut ResourceStore,
        app: &str,
        new_version: &str,
    ) -> Result<RequestResult, ManagerError> {
        catalog.template(app, new_version)?;
        let live: Vec<(ResourceKind, String)> = [ResourceKind::ManagedService, ResourceKind::ManagedConnection]
            .into_iter()
            .flat_map(|kind| store.list(kind).filter(|cr| cr.spec.app_name == app).map(|cr| (cr.kind, cr.name.clone())))
            .collect::<Vec<_>>();
        if live.is_empty() {
            return Err(ManagerError::NothingRunning(app.to_owned()));
        }
        let request_id = format!("upgrade-{}-{}", app, new_version);
        let mut applied = Vec::new();
        for (kind, name) in live {
            let d = DemandDelta {
                demand_id: format!("{}/{}", request_id, name),
                action: DemandAction::Upgrade,
                app_name: app.to_owned(),
                requesters: Vec::new(),
                config_items: Vec::new(),
                app_version: new_version.to_owned(),
            };
            apply(store, kind, &name, d, &mut applied)?;
        }
        self.rollout.insert(app.to_owned(), new_version.to_owned());
        Ok(RequestResult { request_id, outcome: Outcome::Accepted, applied_crs: applied, reason: None })
    }

    fn validate(&self, topology: &Topology, req: &DeploymentRequest, parts: &ResolvedParts) -> Result<(), ManagerError> {
        let mut nodes: Vec<&NodeId> = parts.services.iter().map(|s| &s.target_node).collect();
        for c in &parts.connections {
            nodes.push(&c.src_node);
            nodes.push(&c.dst_node);
        }
        for node in nodes {
            if !self.check_access(topology, &req.app_name, node)? {
                return Err(ManagerError::AccessDenied { app: req.app_name.clone(), node: node.clone() });
            }
        }

        if !req.connections.is_empty() {
            let mut wanted = BTreeSet::new();
            for c in &req.connections {
                let src = topology.node_of(&c.src).ok_or_else(|| ManagerError::UnknownEntity(c.src.clone()))?;
                wanted.insert((src.clone(), c.dst.clone(), c.topics.iter().cloned().collect::<BTreeSet<_>>()));
            }
            let resolved: BTreeSet<_> = parts
                .connections
                .iter()
                .map(|c| (c.src_node.clone(), c.dst_node.clone(), c.topics.iter().cloned().collect::<BTreeSet<_>>()))
                .collect();
            if wanted != resolved {
                return Err(ManagerError::InconsistentConnections(format!(
                    "request {} names {} connection(s), resolution yields {}",
                    req.request_id,
                    wanted.len(),
                    resolved.len()
                )));
            }
        }
        Ok(())
    }
}

fn apply(
    store: &mut ResourceStore,
    kind: ResourceKind,
    name: &str,
    delta: DemandDelta,
    applied: &mut Vec<AppliedCr>,
) -> Result<(), ManagerError> {
    match store.apply_cr(kind, name, delta) {
        Ok(generation) => {
            applied.push(AppliedCr { kind, name: name.to_owned(), generation });
            Ok(())
        }
        Err(StoreError::DuplicateDemandId { demand_id, .. }) => {
            log::debug!("demand {demand_id} already delivered to {kind}/{name}");
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::ApplicationTemplate;
    use crate::model::NodeRole::*;
    use crate::model::TopicKind::{Ego, Points};
    use crate::store::Change;

    const APP: &str = "object-detection-fusion";

    fn topology() -> Topology {
        let mut t = Topology::new();
        t.add_entity("V0", Cv, &[Ego, Points]);
        t.add_entity("V1", Cv, &[Ego]);
        t.add_entity("S", Risu, &[Points]);
        t.add_entity("E", Edge, &[]);
        t.add_entity("C", Cloud, &[]);
        t
    }

    fn catalog() -> Catalog {
        let mut c = Catalog::new();
        c.register_application(ApplicationTemplate::object_detection_fusion("1")).unwrap();
        c.register_application(ApplicationTemplate::object_detection_fusion("2")).unwrap();
        c
    }

    fn step1(action: RequestAction, id: &str) -> DeploymentRequest {
        DeploymentRequest {
            request_id: id.into(),
            action,
            app_name: APP.into(),
            requesters: vec!["S".into(), "V0".into()],
            inputs: vec![InputDemand::new("V0", Ego), InputDemand::new("V0", Points), InputDemand::new("S", Points)],
            connections: Vec::new(),
            issued_at: 1,
        }
    }

    fn names(r: &RequestResult) -> Vec<(ResourceKind, &str, u64)> {
        r.applied_crs.iter().map(|a| (a.kind, a.name.as_str(), a.generation)).collect()
    }

    #[test]
    fn step_one_request_applies_five_resources() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        let r = mgr.handle_request(&cat, &topo, &mut store, &step1(RequestAction::Request, "r1"));
        assert_eq!(r.outcome, Outcome::Accepted);
        use ResourceKind::*;
        assert_eq!(
            names(&r),
            [
                (ManagedService, "svc-object-detection-fusion-objdet-S", 1),
                (ManagedService, "svc-object-detection-fusion-objdet-V0", 1),
                (ManagedService, "svc-object-detection-fusion-fusion-singleton", 1),
                (ManagedConnection, "conn-V0-E", 1),
                (ManagedConnection, "conn-S-E", 1),
            ]
        );
        let cr = store.get_cr(ManagedService, "svc-object-detection-fusion-objdet-S").unwrap();
        assert_eq!(cr.spec.requesters, vec![EntityId::from("S"), EntityId::from("V0")]);
        assert_eq!(cr.spec.demand_id, "r1/svc-object-detection-fusion-objdet-S");
    }

    #[test]
    fn release_mirrors_request() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        mgr.handle_request(&cat, &topo, &mut store, &step1(RequestAction::Request, "r1"));
        let r = mgr.handle_request(&cat, &topo, &mut store, &step1(RequestAction::Release, "r2"));
        assert_eq!(r.applied_crs.len(), 5);
        assert!(r.applied_crs.iter().all(|a| a.generation == 2));
        let cr = store.get_cr(ResourceKind::ManagedConnection, "conn-S-E").unwrap();
        assert_eq!(cr.spec.action, DemandAction::Release);
    }

    #[test]
    fn unknown_application_mutates_nothing() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        let mut req = step1(RequestAction::Request, "r1");
        req.app_name = "platooning".into();
        let err = mgr.try_handle_request(&cat, &topo, &mut store, &req).unwrap_err();
        assert_eq!(err, ManagerError::UnknownApplication("platooning".into()));
        assert!(store.event_log().is_empty());
        let r = mgr.handle_request(&cat, &topo, &mut store, &{
            let mut r = req.clone();
            r.request_id = "r2".into();
            r
        });
        assert_eq!(r.outcome, Outcome::Rejected);
    }

    #[test]
    fn duplicate_request_returns_original() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        let req = step1(RequestAction::Request, "r1");
        let first = mgr.handle_request(&cat, &topo, &mut store, &req);
        let log_len = store.event_log().len();
        let err = mgr.try_handle_request(&cat, &topo, &mut store, &req).unwrap_err();
        assert!(matches!(err, ManagerError::DuplicateRequest(ref r) if **r == first));
        assert_eq!(mgr.handle_request(&cat, &topo, &mut store, &req), first);
        assert_eq!(store.event_log().len(), log_len);
    }

    #[test]
    fn access_denied_is_atomic() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut policy = AccessDomainPolicy::permissive();
        policy.restrict("S", &["something-else"]);
        let mut mgr = AppManager::new(policy);
        let err = mgr.try_handle_request(&cat, &topo, &mut store, &step1(RequestAction::Request, "r1")).unwrap_err();
        assert_eq!(err, ManagerError::AccessDenied { app: APP.into(), node: "S".into() });
        assert!(store.is_empty());
        assert!(store.event_log().is_empty());
    }

    #[test]
    fn check_access_lookup() {
        let topo = topology();
        let mgr = AppManager::default();
        assert!(mgr.check_access(&topo, APP, &"E".into()).unwrap());
        let mut policy = AccessDomainPolicy::permissive();
        policy.restrict("C", &[]);
        let mgr = AppManager::new(policy);
        assert!(!mgr.check_access(&topo, APP, &"C".into()).unwrap());
        assert!(mgr.check_access(&topo, APP, &"E".into()).unwrap());
        assert_eq!(mgr.check_access(&topo, APP, &"Q".into()), Err(ManagerError::UnknownEntity("Q".into())));
    }

    #[test]
    fn inconsistent_connections_rejected() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        let mut req = step1(RequestAction::Request, "r1");
        req.connections = vec![ConnectionDemand { src: "S".into(), dst: "E".into(), topics: vec!["/S/points".into()] }];
        let err = mgr.try_handle_request(&cat, &topo, &mut store, &req).unwrap_err();
        assert!(matches!(err, ManagerError::InconsistentConnections(_)));
        req.request_id = "r2".into();
        req.connections.push(ConnectionDemand {
            src: "V0".into(),
            dst: "E".into(),
            topics: vec!["/V0/points".into(), "/V0/ego".into()],
        });
        assert!(mgr.try_handle_request(&cat, &topo, &mut store, &req).is_ok());
    }

    #[test]
    fn same_delta_contents_regardless_of_existing_resources() {
        let (cat, topo) = (catalog(), topology());
        let mut fresh = ResourceStore::new();
        let mut busy = ResourceStore::new();
        let mut m1 = AppManager::default();
        let mut m2 = AppManager::default();
        m2.handle_request(&cat, &topo, &mut busy, &step1(RequestAction::Request, "warmup"));
        let req = step1(RequestAction::Request, "r1");
        m1.handle_request(&cat, &topo, &mut fresh, &req);
        m2.handle_request(&cat, &topo, &mut busy, &req);
        for cr in fresh.list(ResourceKind::ManagedService) {
            assert_eq!(busy.get_cr(cr.kind, &cr.name).unwrap().spec, cr.spec);
        }
    }

    #[test]
    fn upgrade_paths() {
        let (cat, topo, mut store) = (catalog(), topology(), ResourceStore::new());
        let mut mgr = AppManager::default();
        assert_eq!(
            mgr.upgrade_application(&cat, &mut store, APP, "2").unwrap_err(),
            ManagerError::NothingRunning(APP.into())
        );
        mgr.handle_request(&cat, &topo, &mut store, &step1(RequestAction::Request, "r1"));
        assert!(matches!(
            mgr.upgrade_application(&cat, &mut store, APP, "9"),
            Err(ManagerError::UnknownVersion { .. })
        ));
        let w = store.watch(ResourceKind::ManagedService);
        while store.next_event(w).unwrap().is_some() {}
        let r = mgr.upgrade_application(&cat, &mut store, APP, "2").unwrap();
        assert_eq!(r.applied_crs.len(), 5);
        let mut updates = 0;
        while let Some(ev) = store.next_event(w).unwrap() {
            assert_eq!(ev.change, Change::SpecUpdated);
            assert_eq!(ev.spec.unwrap().app_version, "2");
            updates += 1;
        }
        assert_eq!(updates, 3);
        assert_eq!(mgr.active_version(&cat, APP).unwrap(), "2");
    }
}
