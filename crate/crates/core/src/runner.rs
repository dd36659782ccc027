//! Deterministic end-to-end runner.
//!
//! One logical loop per tick: timeline, detector, manager, operators until
//! quiescent, then one data-plane tick. Every step is appended to a trace.

use std::collections::{BTreeMap, BTreeSet};

use crate::catalog::{Catalog, CatalogError};
use crate::cluster::{ClusterError, ClusterSim, Payload};
use crate::detector::{DetectorError, EventDetector, Transition};
use crate::manager::{AppManager, DeploymentRequest, Outcome, RequestAction, RequestResult};
use crate::model::{topics, NodeId, TopicKind};
use crate::operators::{DrainReport, NonQuiescence, OperatorSet};
use crate::scenario::{Scenario, TimelineAction};
use crate::store::ResourceStore;
use crate::trace::{RecordBody, Trace};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Hand every request to the manager twice.
    pub duplicate_delivery: bool,
    /// Overrides the scenario's tick budget.
    pub tick_budget: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("at tick {t}: {source}")]
    NonQuiescence { t: u64, source: NonQuiescence, trace: Box<Trace> },
}

pub struct Runner {
    scenario: Scenario,
    options: RunOptions,
    catalog: Catalog,
    manager: AppManager,
    store: ResourceStore,
    operators: OperatorSet,
    detector: EventDetector,
    sim: ClusterSim,
    trace: Trace,
    t: u64,
    step: u32,
    next_event: usize,
    last_activity: u64,
    visible: BTreeMap<NodeId, BTreeSet<String>>,
    sources: Vec<(NodeId, crate::model::EntityId, TopicKind)>,
}

impl Runner {
    pub fn new(scenario: Scenario, options: RunOptions) -> Result<Self, RunError> {
        let mut catalog = Catalog::new();
        for t in &scenario.templates {
            catalog.register_application(t.clone())?;
        }
        let mut sim = ClusterSim::new();
        for (node, role) in scenario.topology.nodes() {
            sim.add_node(node, role)?;
        }
        let detector = EventDetector::new(scenario.rule.clone(), &scenario.topology)?;
        let mut store = ResourceStore::new();
        let operators = OperatorSet::new(&mut store);
        let sources = scenario
            .topology
            .entities()
            .flat_map(|(id, info)| info.capabilities.iter().map(move |k| (info.node.clone(), id.clone(), *k)))
            .collect();
        Ok(Self {
            manager: AppManager::new(scenario.access.clone()),
            scenario,
            options,
            catalog,
            store,
            operators,
            detector,
            sim,
            trace: Trace::default(),
            t: 0,
            step: 0,
            next_event: 0,
            last_activity: 0,
            visible: BTreeMap::new(),
            sources,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn now(&self) -> u64 {
        self.t
    }

    pub fn step_index(&self) -> u32 {
        self.step
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn store(&self) -> &ResourceStore {
        &self.store
    }

    pub fn sim(&self) -> &ClusterSim {
        &self.sim
    }

    pub fn sim_mut(&mut self) -> &mut ClusterSim {
        &mut self.sim
    }

    pub fn operators(&self) -> &OperatorSet {
        &self.operators
    }

    pub fn detector(&self) -> &EventDetector {
        &self.detector
    }

    pub fn budget(&self) -> u64 {
        self.options.tick_budget.unwrap_or(self.scenario.tick_budget)
    }

    /// True once the timeline is exhausted and nothing happened for the
    /// settle period, or the budget is spent.
    pub fn is_finished(&self) -> bool {
        if self.t >= self.budget() {
            return true;
        }
        let timeline_done = self.t >= self.scenario.timeline.last_tick();
        timeline_done && self.t >= self.last_activity + self.scenario.settle_ticks
    }

    /// Runs until [`is_finished`](Self::is_finished) and returns the trace.
    pub fn run(mut self) -> Result<Trace, RunError> {
        while !self.is_finished() {
            self.tick()?;
        }
        Ok(self.trace)
    }

    /// Runs whole ticks until the clock reaches `t`.
    pub fn run_until(&mut self, t: u64) -> Result<(), RunError> {
        while self.t < t {
            self.tick()?;
        }
        Ok(())
    }

    /// Advances the loop by one tick.
    pub fn tick(&mut self) -> Result<(), RunError> {
        self.t += 1;
        let t = self.t;

        let mut requests = Vec::new();
        let mut upgrades = Vec::new();
        while let Some(ev) = self.scenario.timeline.events.get(self.next_event).filter(|e| e.at == t) {
            match &ev.action {
                TimelineAction::Enter(cv) => requests.push(self.detector.scripted_transition(cv, Transition::Enter, t)?),
                TimelineAction::Leave(cv) => requests.push(self.detector.scripted_transition(cv, Transition::Leave, t)?),
                TimelineAction::Upgrade { app, version } => upgrades.push((app.clone(), version.clone())),
            }
            self.next_event += 1;
        }
        let cvs: Vec<_> = self.scenario.timeline.routes.keys().cloned().collect();
        for cv in cvs {
            if let Some(p) = self.scenario.timeline.position_at(&cv, t) {
                self.detector.observe_pose(&cv, p, t)?;
            }
        }
        if !self.scenario.timeline.routes.is_empty() {
            requests.extend(self.detector.evaluate(t));
        }

        if !requests.is_empty() {
            self.step += 1;
        }
        if !requests.is_empty() || !upgrades.is_empty() {
            self.last_activity = t;
        }
        for (app, version) in upgrades {
            self.upgrade(&app, &version)?;
        }
        for req in requests {
            self.submit(&req)?;
            if self.options.duplicate_delivery {
                self.submit(&req)?;
            }
        }

        for (node, entity, kind) in &self.sources {
            let topic = topics::source(entity, *kind);
            let payload = match kind {
                TopicKind::Ego => Payload::Ego,
                TopicKind::Points => Payload::PointCloud,
            };
            let msg = self.sim.message(entity, &topic, payload);
            self.sim.publish(node, msg)?;
        }
        let report = self.sim.tick();
        for (node, topics) in report.visible {
            if self.visible.get(&node) != Some(&topics) {
                let body = RecordBody::TopicsAtNode { node: node.clone(), topics: topics.iter().cloned().collect() };
                self.trace.push(t, self.step, body);
                self.visible.insert(node, topics);
            }
        }
        Ok(())
    }

    /// Hands one request to the manager and reconciles its effects.
    pub fn submit(&mut self, req: &DeploymentRequest) -> Result<RequestResult, RunError> {
        let action = match req.action {
            RequestAction::Request => "request",
            RequestAction::Release => "release",
        };
        self.trace.push(
            self.t,
            self.step,
            RecordBody::RequestIssued {
                request_id: req.request_id.clone(),
                action: action.into(),
                app_name: req.app_name.clone(),
                requesters: req.requesters.clone(),
            },
        );
        let fresh = !self.manager.has_processed(&req.request_id);
        let result = self.manager.handle_request(&self.catalog, &self.scenario.topology, &mut self.store, req);
        if fresh {
            self.record_result(&result);
        }
        self.drain()?;
        Ok(result)
    }

    /// Rolls `app` out at `version` across every live resource.
    pub fn upgrade(&mut self, app: &str, version: &str) -> Result<Option<RequestResult>, RunError> {
        self.trace.push(
            self.t,
            self.step,
            RecordBody::RequestIssued {
                request_id: format!("upgrade-{app}-{version}"),
                action: "upgrade".into(),
                app_name: app.to_owned(),
                requesters: Vec::new(),
            },
        );
        let result = match self.manager.upgrade_application(&self.catalog, &mut self.store, app, version) {
            Ok(r) => r,
            Err(e) => {
                self.error("manager", e.to_string());
                return Ok(None);
            }
        };
        self.record_result(&result);
        self.drain()?;
        Ok(Some(result))
    }

    fn record_result(&mut self, result: &RequestResult) {
        if result.outcome == Outcome::Rejected {
            let reason = result.reason.clone().unwrap_or_default();
            self.error("manager", format!("request {} rejected: {reason}", result.request_id));
        }
        for cr in &result.applied_crs {
            let body = RecordBody::CRApplied { kind: cr.kind, name: cr.name.clone(), generation: cr.generation };
            self.trace.push(self.t, self.step, body);
        }
    }

    fn error(&mut self, source: &str, message: String) {
        log::warn!("{source}: {message}");
        self.trace.push(self.t, self.step, RecordBody::ErrorRecord { source: source.to_owned(), message });
    }

    fn drain(&mut self) -> Result<(), RunError> {
        match self.operators.drain(&mut self.store, &mut self.sim) {
            Ok(report) => {
                self.record_drain(report);
                Ok(())
            }
            Err(source) => {
                self.error("operators", source.to_string());
                Err(RunError::NonQuiescence { t: self.t, source, trace: Box::new(self.trace.clone()) })
            }
        }
    }

    fn record_drain(&mut self, report: DrainReport) {
        let (t, step) = (self.t, self.step);
        for o in report.outcomes {
            if let Some(e) = &o.ledger_error {
                self.error("operators", format!("{}: {e}", o.cr_name));
            }
            if let Some(l) = o.ledger {
                let body = RecordBody::LedgerState {
                    kind: o.kind,
                    cr: l.cr_name,
                    support: l.support,
                    effective_config: l.effective_config,
                };
                self.trace.push(t, step, body);
            }
            for a in o.actions {
                self.trace.push(t, step, RecordBody::InstanceAction(a));
            }
        }
        for f in report.failures {
            self.error(
                "operators",
                format!("{}/{} generation {} gave up after {} attempts: {}", f.kind, f.cr_name, f.generation, f.attempts, f.error),
            );
        }
    }
}
