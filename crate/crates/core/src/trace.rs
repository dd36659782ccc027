//! Run traces: one JSON object per line, fields in fixed order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{ConfigItem, EntityId, NodeId};
use crate::operators::ClusterAction;
use crate::store::ResourceKind;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "record")]
pub enum RecordBody {
    RequestIssued { request_id: String, action: String, app_name: String, requesters: Vec<EntityId> },
    CRApplied { kind: ResourceKind, name: String, generation: u64 },
    LedgerState { kind: ResourceKind, cr: String, support: Vec<EntityId>, effective_config: Vec<ConfigItem> },
    InstanceAction(ClusterAction),
    TopicsAtNode { node: NodeId, topics: Vec<String> },
    ErrorRecord { source: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: u64,
    pub step: u32,
    #[serde(flatten)]
    pub body: RecordBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RecordClass {
    LedgerState,
    InstanceAction,
    TopicsAtNode,
}

impl RecordClass {
    pub const ASSERTED: [RecordClass; 3] = [RecordClass::LedgerState, RecordClass::InstanceAction, RecordClass::TopicsAtNode];

    fn matches(self, body: &RecordBody) -> bool {
        matches!(
            (self, body),
            (RecordClass::LedgerState, RecordBody::LedgerState { .. })
                | (RecordClass::InstanceAction, RecordBody::InstanceAction(_))
                | (RecordClass::TopicsAtNode, RecordBody::TopicsAtNode { .. })
        )
    }
}

impl fmt::Display for RecordClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Trace {
    pub fn push(&mut self, t: u64, step: u32, body: RecordBody) {
        self.records.push(TraceRecord { t, step, body });
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let r = serde_json::from_str(line).map_err(|e| TraceError::Parse { line: i + 1, message: e.to_string() })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| TraceError::Io { path: path.display().to_string(), source })?;
        Self::from_jsonl(&text)
    }

    pub fn of_class(&self, class: RecordClass) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| class.matches(&r.body))
    }

    pub fn last_step(&self) -> u32 {
        self.records.iter().map(|r| r.step).max().unwrap_or(0)
    }

    /// Support of every live ledger once `step` has completed. Ledgers whose
    /// support dropped to empty are left out.
    pub fn bookkeeping_at(&self, step: u32) -> BTreeMap<String, BTreeSet<EntityId>> {
        let mut state = BTreeMap::new();
        for r in self.records.iter().take_while(|r| r.step <= step) {
            if let RecordBody::LedgerState { cr, support, .. } = &r.body {
                if support.is_empty() {
                    state.remove(cr);
                } else {
                    state.insert(cr.clone(), support.iter().cloned().collect());
                }
            }
        }
        state
    }

    /// Last recorded visible topic set of `node` once `step` has completed.
    pub fn topics_at(&self, node: &NodeId, step: u32) -> BTreeSet<String> {
        self.records
            .iter()
            .take_while(|r| r.step <= step)
            .filter_map(|r| match &r.body {
                RecordBody::TopicsAtNode { node: n, topics } if n == node => Some(topics),
                _ => None,
            })
            .last()
            .map(|t| t.iter().cloned().collect())
            .unwrap_or_default()
    }

    pub fn instance_actions(&self) -> impl Iterator<Item = (&TraceRecord, &ClusterAction)> {
        self.records.iter().filter_map(|r| match &r.body {
            RecordBody::InstanceAction(a) => Some((r, a)),
            _ => None,
        })
    }

    pub fn errors(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| matches!(r.body, RecordBody::ErrorRecord { .. }))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DiffKind {
    Mismatch { expected: String, actual: String },
    LengthMismatch { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceDiff {
    pub class: RecordClass,
    /// Position within the records of this class.
    pub index: usize,
    pub step: u32,
    pub kind: DiffKind,
}

impl fmt::Display for TraceDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            DiffKind::Mismatch { expected, actual } => write!(
                f,
                "{} #{} (step {}): expected {expected}, got {actual}",
                self.class, self.index, self.step
            ),
            DiffKind::LengthMismatch { expected, actual } => {
                write!(f, "{}: expected {expected} records, got {actual}", self.class)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Report {
    pub diffs: Vec<TraceDiff>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.diffs.is_empty() {
            return writeln!(f, "trace matches golden");
        }
        for d in &self.diffs {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Compares the asserted record classes and reports the first divergence
/// of each.
pub fn compare(actual: &Trace, golden: &Trace) -> Report {
    let mut report = Report::default();
    for class in RecordClass::ASSERTED {
        let a: Vec<&TraceRecord> = actual.of_class(class).collect();
        let g: Vec<&TraceRecord> = golden.of_class(class).collect();
        let first = a.iter().zip(&g).position(|(x, y)| x != y);
        let kind_at = |i: usize| DiffKind::Mismatch {
            expected: serde_json::to_string(g[i]).expect("serializable"),
            actual: serde_json::to_string(a[i]).expect("serializable"),
        };
        let diff = match first {
            Some(i) => Some(TraceDiff { class, index: i, step: g[i].step, kind: kind_at(i) }),
            None if a.len() != g.len() => {
                let i = a.len().min(g.len());
                let step = g.get(i).or(a.get(i)).map_or(0, |r| r.step);
                Some(TraceDiff { class, index: i, step, kind: DiffKind::LengthMismatch { expected: g.len(), actual: a.len() } })
            }
            None => None,
        };
        report.diffs.extend(diff);
    }
    report
}

pub fn assert_trace(actual: &Trace, golden_path: impl AsRef<Path>) -> Result<Report, TraceError> {
    Ok(compare(actual, &Trace::load(golden_path)?))
}
