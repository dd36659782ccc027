//! Demand-driven orchestration of shared perception services.
//!
//! Entities that enter an area of interest issue deployment requests. The
//! [`manager::AppManager`] resolves them into per-part demand deltas, the
//! [`store::ResourceStore`] versions them, and the [`operators`] fold the
//! deltas into reference-counted ledgers and drive the [`cluster::ClusterSim`].

pub mod catalog;
pub mod cluster;
pub mod detector;
pub mod manager;
pub mod model;
pub mod operators;
pub mod runner;
pub mod scenario;
pub mod store;
pub mod trace;

pub use catalog::{ApplicationTemplate, Catalog, CatalogError};
pub use cluster::{ClusterError, ClusterSim};
pub use manager::{AppManager, DeploymentRequest, ManagerError, Outcome, RequestResult};
pub use model::{ConfigItem, ConfigKey, EntityId, NodeId, NodeRole, ServiceKind, TopicKind, Topology};
pub use operators::{DemandLedger, OperatorSet};
pub use store::{DemandAction, DemandDelta, ResourceKind, ResourceStore, StoreError};
pub use runner::{RunError, RunOptions, Runner};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
pub use trace::{Trace, TraceRecord};
