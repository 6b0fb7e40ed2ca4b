//! Per-node version history.
//!
//! Versions form a DAG rooted at [`VersionId::root`]. Every edge carries the
//! diff that turns the source state into the destination state, so the state
//! of any version is the fold of edge diffs along any path from the root.
//!
//! Reception of a remote update is split into the same steps the debugger
//! gates individually: [`VersionGraph::receive_data`] materializes the
//! incoming version, [`VersionGraph::plan_merge`] detects conflicts,
//! [`PendingMerge::resolve`] runs the merge function and
//! [`VersionGraph::complete_merge`] extends the graph with the merge version.
//! [`VersionGraph::receive_update`] runs them back to back.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::conflict::{conflict_triples, detect_conflicts, Conflict, ConflictReport};
use crate::error::{Error, Result};
use crate::schema::Registry;
use crate::state::{apply_diff, compose_diffs, diff_states, Diff, State};

/// Globally unique version identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VersionId(String);

impl VersionId {
    pub const ROOT: &'static str = "ROOT";

    pub fn root() -> VersionId {
        VersionId(Self::ROOT.to_string())
    }

    /// Fresh random 128-bit id, hex encoded.
    pub fn fresh() -> VersionId {
        let mut bytes = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut bytes);
        VersionId(hex::encode(bytes))
    }

    pub fn is_root(&self) -> bool {
        self.0 == Self::ROOT
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// First four hex digits, the way the debugger labels versions.
    pub fn short(&self) -> &str {
        if self.is_root() {
            &self.0
        } else {
            &self.0[..self.0.len().min(4)]
        }
    }
}

impl fmt::Display for VersionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for VersionId {
    fn from(s: &str) -> Self {
        VersionId(s.to_string())
    }
}

impl From<String> for VersionId {
    fn from(s: String) -> Self {
        VersionId(s)
    }
}

/// Ref name tracking the version the local snapshot is based on.
pub const SNAPSHOT_REF: &str = "SNAPSHOT";

/// Inputs to a three-way merge function.
pub struct MergeInput<'a> {
    pub conflicts: Vec<Conflict>,
    pub orig: &'a State,
    pub yours: &'a State,
    pub theirs: &'a State,
    pub report: &'a ConflictReport,
}

impl MergeInput<'_> {
    /// `yours` with every non-conflicting incoming change applied.
    pub fn update_not_conflicting(&self) -> Result<State> {
        apply_diff(self.yours, &self.report.nonconflicting_theirs)
    }
}

/// Programmer-supplied three-way merge function.
pub trait Resolver: Send + Sync {
    fn merge(&self, input: &MergeInput<'_>) -> Result<State>;
}

impl<F> Resolver for F
where
    F: Fn(&MergeInput<'_>) -> Result<State> + Send + Sync,
{
    fn merge(&self, input: &MergeInput<'_>) -> Result<State> {
        self(input)
    }
}

/// Used when an application registers no merge function: accept every
/// non-conflicting change and take `theirs` for conflicting objects.
#[derive(Debug, Clone, Copy, Default)]
pub struct PreferTheirs;

impl Resolver for PreferTheirs {
    fn merge(&self, input: &MergeInput<'_>) -> Result<State> {
        let mut merged = input.update_not_conflicting()?;
        for c in &input.conflicts {
            match &c.theirs {
                Some(obj) => merged.put(obj.clone()),
                None => {
                    merged.remove(&c.key.type_name, &c.key.pkey);
                }
            }
        }
        Ok(merged)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeReport {
    pub merged_version: VersionId,
    pub conflicted: bool,
    pub resolver_invoked: bool,
}

/// Outcome of materializing an incoming version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reception {
    pub start: VersionId,
    pub end: VersionId,
    /// The incoming version was already present.
    pub known: bool,
}

/// What has to happen to fold an incoming version into head.
#[derive(Debug, Clone)]
pub enum MergePlan {
    /// Incoming version is already an ancestor of head.
    UpToDate,
    /// Head is an ancestor of the incoming version.
    FastForward(VersionId),
    Merge(Box<PendingMerge>),
}

impl MergePlan {
    pub fn needs_merge(&self) -> bool {
        matches!(self, MergePlan::Merge(_))
    }
}

/// A detected fork awaiting resolution.
#[derive(Debug, Clone)]
pub struct PendingMerge {
    pub orig_version: VersionId,
    pub yours_version: VersionId,
    pub theirs_version: VersionId,
    pub orig: State,
    pub yours: State,
    pub theirs: State,
    pub report: ConflictReport,
}

impl PendingMerge {
    pub fn conflicted(&self) -> bool {
        self.report.has_conflicts()
    }

    pub fn conflicts(&self) -> Vec<Conflict> {
        conflict_triples(&self.report, &self.orig, &self.yours, &self.theirs)
    }

    /// Runs the merge function and checks its output against the registry.
    /// Without conflicts the incoming changes are applied to `yours` and the
    /// merge function is not called.
    pub fn resolve(&self, resolver: &dyn Resolver, registry: &Registry) -> Result<State> {
        if !self.conflicted() {
            return apply_diff(&self.yours, &self.report.nonconflicting_theirs);
        }
        let input = MergeInput {
            conflicts: self.conflicts(),
            orig: &self.orig,
            yours: &self.yours,
            theirs: &self.theirs,
            report: &self.report,
        };
        let merged = resolver.merge(&input)?;
        merged.check(registry)?;
        Ok(merged)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeExport {
    pub src: VersionId,
    pub dst: VersionId,
    pub diff: Diff,
}

/// JSON document describing a whole graph, as sent to the debugger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub vertices: Vec<VersionId>,
    pub edges: Vec<EdgeExport>,
    pub head: VersionId,
    pub refs: BTreeMap<String, VersionId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VersionGraph {
    vertices: BTreeSet<VersionId>,
    parents: BTreeMap<VersionId, BTreeSet<VersionId>>,
    children: BTreeMap<VersionId, BTreeSet<VersionId>>,
    edges: BTreeMap<(VersionId, VersionId), Diff>,
    head: VersionId,
    refs: BTreeMap<String, VersionId>,
}

impl Default for VersionGraph {
    fn default() -> Self {
        Self::new()
    }
}

impl VersionGraph {
    pub fn new() -> VersionGraph {
        let root = VersionId::root();
        VersionGraph {
            vertices: [root.clone()].into_iter().collect(),
            parents: BTreeMap::new(),
            children: BTreeMap::new(),
            edges: BTreeMap::new(),
            head: root,
            refs: BTreeMap::new(),
        }
    }

    pub fn head(&self) -> &VersionId {
        &self.head
    }

    pub fn contains(&self, v: &VersionId) -> bool {
        self.vertices.contains(v)
    }

    pub fn vertices(&self) -> impl Iterator<Item = &VersionId> {
        self.vertices.iter()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> impl Iterator<Item = (&VersionId, &VersionId, &Diff)> {
        self.edges.iter().map(|((s, d), diff)| (s, d, diff))
    }

    pub fn edge(&self, src: &VersionId, dst: &VersionId) -> Option<&Diff> {
        self.edges.get(&(src.clone(), dst.clone()))
    }

    pub fn parents(&self, v: &VersionId) -> impl Iterator<Item = &VersionId> {
        self.parents.get(v).into_iter().flatten()
    }

    pub fn children(&self, v: &VersionId) -> impl Iterator<Item = &VersionId> {
        self.children.get(v).into_iter().flatten()
    }

    fn in_degree(&self, v: &VersionId) -> usize {
        self.parents.get(v).map_or(0, BTreeSet::len)
    }

    fn out_degree(&self, v: &VersionId) -> usize {
        self.children.get(v).map_or(0, BTreeSet::len)
    }

    pub fn refs(&self) -> &BTreeMap<String, VersionId> {
        &self.refs
    }

    pub fn get_ref(&self, name: &str) -> Option<&VersionId> {
        self.refs.get(name)
    }

    fn require(&self, v: &VersionId) -> Result<()> {
        if self.contains(v) {
            Ok(())
        } else {
            Err(Error::UnknownVersion(v.to_string()))
        }
    }

    fn add_edge(&mut self, src: VersionId, dst: VersionId, diff: Diff) {
        self.parents.entry(dst.clone()).or_default().insert(src.clone());
        self.children.entry(src.clone()).or_default().insert(dst.clone());
        self.edges.insert((src, dst), diff);
    }

    fn remove_edge(&mut self, src: &VersionId, dst: &VersionId) -> Option<Diff> {
        if let Some(p) = self.parents.get_mut(dst) {
            p.remove(src);
            if p.is_empty() {
                self.parents.remove(dst);
            }
        }
        if let Some(c) = self.children.get_mut(src) {
            c.remove(dst);
            if c.is_empty() {
                self.children.remove(src);
            }
        }
        self.edges.remove(&(src.clone(), dst.clone()))
    }

    fn remove_vertex(&mut self, v: &VersionId) {
        let ps: Vec<_> = self.parents(v).cloned().collect();
        for p in ps {
            self.remove_edge(&p, v);
        }
        let cs: Vec<_> = self.children(v).cloned().collect();
        for c in cs {
            self.remove_edge(v, &c);
        }
        self.vertices.remove(v);
    }

    /// State at `v`, folding edge diffs along the first-parent path from the
    /// root. The edge invariant makes every path agree.
    pub fn state_at(&self, v: &VersionId) -> Result<State> {
        self.require(v)?;
        let mut path = Vec::new();
        let mut cur = v.clone();
        while !cur.is_root() {
            let parent = self
                .parents(&cur)
                .next()
                .cloned()
                .ok_or_else(|| Error::UnknownVersion(format!("{cur} is detached from ROOT")))?;
            path.push((parent.clone(), cur));
            cur = parent;
        }
        let mut state = State::new();
        for (src, dst) in path.iter().rev() {
            state = apply_diff(&state, &self.edges[&(src.clone(), dst.clone())])?;
        }
        Ok(state)
    }

    pub fn head_state(&self) -> Result<State> {
        self.state_at(&self.head.clone())
    }

    /// Ancestors of `v`, including `v` itself.
    pub fn ancestors(&self, v: &VersionId) -> BTreeSet<VersionId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<VersionId> = [v.clone()].into_iter().collect();
        while let Some(cur) = queue.pop_front() {
            if seen.insert(cur.clone()) {
                queue.extend(self.parents(&cur).cloned());
            }
        }
        seen
    }

    /// Descendants of `v`, including `v` itself.
    pub fn descendants(&self, v: &VersionId) -> BTreeSet<VersionId> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<VersionId> = [v.clone()].into_iter().collect();
        while let Some(cur) = queue.pop_front() {
            if seen.insert(cur.clone()) {
                queue.extend(self.children(&cur).cloned());
            }
        }
        seen
    }

    /// Whether `a` is `b` or one of its ancestors.
    pub fn is_ancestor(&self, a: &VersionId, b: &VersionId) -> bool {
        self.contains(a) && self.contains(b) && self.ancestors(b).contains(a)
    }

    /// Lowest common ancestor; ties between equally low candidates go to the
    /// lexicographically smallest id.
    pub fn lca(&self, a: &VersionId, b: &VersionId) -> Result<VersionId> {
        self.require(a)?;
        self.require(b)?;
        let anc_b = self.ancestors(b);
        let common: BTreeSet<VersionId> = self.ancestors(a).intersection(&anc_b).cloned().collect();
        let mut dominated = BTreeSet::new();
        for c in &common {
            for p in self.ancestors(c) {
                if &p != c {
                    dominated.insert(p);
                }
            }
        }
        common
            .difference(&dominated)
            .next()
            .cloned()
            .ok_or_else(|| Error::UnknownVersion(format!("no common ancestor of {a} and {b}")))
    }

    /// Adds a fresh version off `start`. Head follows only when `start` was
    /// the head; otherwise the new version is a fork awaiting a merge.
    pub fn extend(&mut self, start: &VersionId, diff: Diff) -> Result<VersionId> {
        let v = VersionId::fresh();
        self.extend_with_id(start, v.clone(), diff)?;
        Ok(v)
    }

    pub fn extend_with_id(&mut self, start: &VersionId, v: VersionId, diff: Diff) -> Result<()> {
        self.require(start)?;
        if self.contains(&v) {
            return Err(Error::DuplicateVersion(v.to_string()));
        }
        // the diff must be applicable at `start`
        apply_diff(&self.state_at(start)?, &diff)?;
        self.vertices.insert(v.clone());
        self.add_edge(start.clone(), v.clone(), diff);
        if start == &self.head {
            self.head = v;
        }
        Ok(())
    }

    /// Materializes an incoming version `end` off `start` without moving head.
    pub fn receive_data(&mut self, start: &VersionId, end: &VersionId, diff: Diff) -> Result<Reception> {
        self.require(start)?;
        if self.contains(end) {
            return Ok(Reception {
                start: start.clone(),
                end: end.clone(),
                known: true,
            });
        }
        apply_diff(&self.state_at(start)?, &diff)?;
        self.vertices.insert(end.clone());
        self.add_edge(start.clone(), end.clone(), diff);
        Ok(Reception {
            start: start.clone(),
            end: end.clone(),
            known: false,
        })
    }

    /// Decides how to fold `theirs` into head and, for a fork, detects
    /// conflicts against the fork point.
    pub fn plan_merge(&self, theirs: &VersionId) -> Result<MergePlan> {
        self.require(theirs)?;
        if self.is_ancestor(theirs, &self.head) {
            return Ok(MergePlan::UpToDate);
        }
        if self.is_ancestor(&self.head, theirs) {
            return Ok(MergePlan::FastForward(theirs.clone()));
        }
        let orig_version = self.lca(&self.head, theirs)?;
        let orig = self.state_at(&orig_version)?;
        let yours = self.head_state()?;
        let their_state = self.state_at(theirs)?;
        let report = detect_conflicts(&orig, &diff_states(&orig, &yours), &diff_states(&orig, &their_state));
        Ok(MergePlan::Merge(Box::new(PendingMerge {
            orig_version,
            yours_version: self.head.clone(),
            theirs_version: theirs.clone(),
            orig,
            yours,
            theirs: their_state,
            report,
        })))
    }

    pub fn fast_forward(&mut self, to: &VersionId) -> Result<()> {
        if !self.is_ancestor(&self.head, to) {
            return Err(Error::NotAncestor {
                version: self.head.to_string(),
                head: to.to_string(),
            });
        }
        self.head = to.clone();
        Ok(())
    }

    /// Adds the merge version with in-edges from both tips and moves head.
    pub fn complete_merge(&mut self, pending: &PendingMerge, merged: &State) -> Result<VersionId> {
        if self.head != pending.yours_version {
            return Err(Error::Protocol(format!(
                "head moved from {} to {} during merge",
                pending.yours_version, self.head
            )));
        }
        self.require(&pending.theirs_version)?;
        let m = VersionId::fresh();
        self.vertices.insert(m.clone());
        self.add_edge(pending.yours_version.clone(), m.clone(), diff_states(&pending.yours, merged));
        self.add_edge(pending.theirs_version.clone(), m.clone(), diff_states(&pending.theirs, merged));
        self.head = m.clone();
        Ok(m)
    }

    /// Receives `diff` taking `start` to the remote version `end`, merging
    /// with head through `resolver` when the update forks.
    pub fn receive_update(
        &mut self,
        start: &VersionId,
        end: &VersionId,
        diff: Diff,
        resolver: &dyn Resolver,
        registry: &Registry,
    ) -> Result<MergeReport> {
        let reception = self.receive_data(start, end, diff)?;
        self.fold_in(&reception.end, resolver, registry)
    }

    /// Folds an already present version into head.
    pub fn fold_in(&mut self, theirs: &VersionId, resolver: &dyn Resolver, registry: &Registry) -> Result<MergeReport> {
        match self.plan_merge(theirs)? {
            MergePlan::UpToDate => Ok(MergeReport {
                merged_version: self.head.clone(),
                conflicted: false,
                resolver_invoked: false,
            }),
            MergePlan::FastForward(to) => {
                self.fast_forward(&to)?;
                Ok(MergeReport {
                    merged_version: to,
                    conflicted: false,
                    resolver_invoked: false,
                })
            }
            MergePlan::Merge(pending) => {
                let merged = pending.resolve(resolver, registry)?;
                let m = self.complete_merge(&pending, &merged)?;
                Ok(MergeReport {
                    merged_version: m,
                    conflicted: pending.conflicted(),
                    resolver_invoked: pending.conflicted(),
                })
            }
        }
    }

    /// Diff taking `from` to head, plus the head it leads to. Composes edge
    /// diffs along a linear path, or falls back to state differencing when
    /// the path passes through forks or merges.
    pub fn delta_between(&self, from: &VersionId) -> Result<(Diff, VersionId)> {
        self.require(from)?;
        if from == &self.head {
            return Ok((Diff::new(), self.head.clone()));
        }
        let mut chain = Vec::new();
        let mut cur = self.head.clone();
        while &cur != from {
            if self.in_degree(&cur) != 1 {
                chain.clear();
                break;
            }
            let parent = self.parents(&cur).next().cloned().expect("in-degree is one");
            chain.push((parent.clone(), cur));
            cur = parent;
        }
        if !chain.is_empty() {
            let mut diff = Diff::new();
            for (src, dst) in chain.iter().rev() {
                diff = compose_diffs(&diff, &self.edges[&(src.clone(), dst.clone())])?;
            }
            return Ok((diff, self.head.clone()));
        }
        Ok((diff_states(&self.state_at(from)?, &self.head_state()?), self.head.clone()))
    }

    pub fn update_ref(&mut self, name: &str, v: &VersionId) -> Result<()> {
        self.require(v)?;
        self.refs.insert(name.to_string(), v.clone());
        Ok(())
    }

    fn anchors(&self) -> BTreeSet<VersionId> {
        let mut anchors: BTreeSet<VersionId> = self.refs.values().cloned().collect();
        anchors.insert(VersionId::root());
        anchors.insert(self.head.clone());
        anchors
    }

    /// Removes obsolete versions: anything that is not an ancestor of head or
    /// of a ref, and every interior vertex of a linear chain between retained
    /// versions (its two edges are squashed into one composed edge).
    pub fn garbage_collect(&mut self) -> Result<BTreeSet<VersionId>> {
        let anchors = self.anchors();
        let mut live = BTreeSet::new();
        for a in &anchors {
            live.extend(self.ancestors(a));
        }
        let mut removed: BTreeSet<VersionId> = self.vertices.difference(&live).cloned().collect();
        for v in &removed {
            self.remove_vertex(v);
        }
        loop {
            let interior = self
                .vertices
                .iter()
                .find(|v| !anchors.contains(*v) && self.in_degree(v) == 1 && self.out_degree(v) == 1)
                .cloned();
            let Some(v) = interior else { break };
            let p = self.parents(&v).next().cloned().expect("in-degree is one");
            let c = self.children(&v).next().cloned().expect("out-degree is one");
            let first = self.remove_edge(&p, &v).expect("edge exists");
            let second = self.remove_edge(&v, &c).expect("edge exists");
            self.vertices.remove(&v);
            if self.edge(&p, &c).is_none() {
                self.add_edge(p, c, compose_diffs(&first, &second)?);
            }
            removed.insert(v);
        }
        Ok(removed)
    }

    /// Resets head to the ancestor `v`, dropping every strict descendant of
    /// `v`. Refs left dangling are moved to `v`.
    pub fn rollback(&mut self, v: &VersionId) -> Result<BTreeSet<VersionId>> {
        self.require(v)?;
        if !self.is_ancestor(v, &self.head) {
            return Err(Error::NotAncestor {
                version: v.to_string(),
                head: self.head.to_string(),
            });
        }
        let mut doomed = self.descendants(v);
        doomed.remove(v);
        for d in &doomed {
            self.remove_vertex(d);
        }
        for target in self.refs.values_mut() {
            if doomed.contains(target) {
                *target = v.clone();
            }
        }
        self.head = v.clone();
        Ok(doomed)
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            vertices: self.vertices.iter().cloned().collect(),
            edges: self
                .edges
                .iter()
                .map(|((src, dst), diff)| EdgeExport {
                    src: src.clone(),
                    dst: dst.clone(),
                    diff: diff.clone(),
                })
                .collect(),
            head: self.head.clone(),
            refs: self.refs.clone(),
        }
    }

    pub fn from_export(export: &GraphExport) -> Result<VersionGraph> {
        let mut g = VersionGraph::new();
        g.vertices.extend(export.vertices.iter().cloned());
        for e in &export.edges {
            g.require(&e.src)?;
            g.require(&e.dst)?;
            g.add_edge(e.src.clone(), e.dst.clone(), e.diff.clone());
        }
        g.require(&export.head)?;
        g.head = export.head.clone();
        for (name, v) in &export.refs {
            g.update_ref(name, v)?;
        }
        g.check_invariants()?;
        Ok(g)
    }

    /// Structural invariants: head and refs exist, every vertex is reachable
    /// from the root, and there are no cycles.
    pub fn check_invariants(&self) -> Result<()> {
        self.require(&self.head)?;
        for v in self.refs.values() {
            self.require(v)?;
        }
        let reachable = self.descendants(&VersionId::root());
        if let Some(v) = self.vertices.difference(&reachable).next() {
            return Err(Error::UnknownVersion(format!("{v} is unreachable from ROOT")));
        }
        // Kahn's algorithm: every vertex must be consumed
        let mut indeg: BTreeMap<&VersionId, usize> = self.vertices.iter().map(|v| (v, self.in_degree(v))).collect();
        let mut ready: Vec<&VersionId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(v, _)| *v).collect();
        let mut seen = 0;
        while let Some(v) = ready.pop() {
            seen += 1;
            for c in self.children(v) {
                let d = indeg.get_mut(c).expect("child is a vertex");
                *d -= 1;
                if *d == 0 {
                    ready.push(c);
                }
            }
        }
        if seen != self.vertices.len() {
            return Err(Error::Protocol("version graph has a cycle".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ObjectState;
    use crate::state::{ObjectDelta, ObjectKey};
    use crate::value::{Value, ValueKind};

    fn registry() -> Registry {
        let mut r = Registry::new();
        r.register_schema("Line", "line_num", &[("line_num", ValueKind::Int), ("line", ValueKind::Str)])
            .unwrap();
        r.register_schema("WordCount", "word", &[("word", ValueKind::Str), ("count", ValueKind::Int)])
            .unwrap();
        r
    }

    fn add_line(n: i64, text: &str) -> Diff {
        Diff::new_object(&ObjectState::new(
            "Line",
            Value::Int(n),
            [("line_num".to_string(), Value::Int(n)), ("line".to_string(), Value::from(text))]
                .into_iter()
                .collect(),
        ))
    }

    fn word(w: &str, c: i64) -> ObjectState {
        ObjectState::new(
            "WordCount",
            Value::from(w),
            [("word".to_string(), Value::from(w)), ("count".to_string(), Value::Int(c))]
                .into_iter()
                .collect(),
        )
    }

    fn set_count(w: &str, c: i64) -> Diff {
        let mut d = Diff::new();
        d.insert(
            ObjectKey::new("WordCount", w),
            ObjectDelta::Modified([("count".to_string(), Value::Int(c))].into_iter().collect()),
        );
        d
    }

    #[test]
    fn root_state_is_empty() {
        let g = VersionGraph::new();
        assert!(g.state_at(&VersionId::root()).unwrap().is_empty());
        assert!(g.state_at(&"nope".into()).is_err());
    }

    #[test]
    fn six_commits_then_gc_collapse() {
        let mut g = VersionGraph::new();
        let mut prev = VersionId::root();
        for (i, text) in ["foo", "bar", "bar", "baz", "bar", "bar"].iter().enumerate() {
            prev = g.extend(&g.head().clone(), add_line(i as i64, text)).unwrap();
        }
        assert_eq!(g.head(), &prev);
        assert_eq!(g.head_state().unwrap().objects("Line").count(), 6);
        g.update_ref(SNAPSHOT_REF, &prev).unwrap();
        let before = g.head_state().unwrap();
        let removed = g.garbage_collect().unwrap();
        assert_eq!(removed.len(), 5);
        assert_eq!(g.len(), 2);
        assert_eq!(g.head_state().unwrap(), before);
        let composed = g.edge(&VersionId::root(), &prev).unwrap();
        assert_eq!(composed.len(), 6);
    }

    #[test]
    fn extend_from_non_head_forks() {
        let mut g = VersionGraph::new();
        let base = g.extend(&VersionId::root(), add_line(0, "foo")).unwrap();
        let head = g.extend(&base, add_line(1, "bar")).unwrap();
        let sibling = g.extend(&base, add_line(2, "baz")).unwrap();
        assert_eq!(g.head(), &head);
        assert_eq!(g.children(&base).count(), 2);
        assert_eq!(g.lca(&head, &sibling).unwrap(), base);
        let same = g.extend(&head, Diff::new()).unwrap();
        assert_eq!(g.state_at(&same).unwrap(), g.state_at(&head).unwrap());
        assert!(g.extend(&"missing".into(), Diff::new()).is_err());
    }

    fn counting_merge(fixed: bool) -> impl Resolver {
        move |input: &MergeInput<'_>| {
            let mut merged = input.update_not_conflicting()?;
            for c in &input.conflicts {
                let mut yours = c.yours.clone().unwrap();
                let mut count = yours.dims["count"].as_int().unwrap() + c.theirs.as_ref().unwrap().dims["count"].as_int().unwrap();
                if fixed {
                    if let Some(o) = &c.orig {
                        count -= o.dims["count"].as_int().unwrap();
                    }
                }
                yours.dims.insert("count".into(), Value::Int(count));
                merged.put(yours);
            }
            Ok(merged)
        }
    }

    fn bar_merge(fixed: bool) -> (VersionGraph, MergeReport) {
        let (g, report, _) = bar_merge_with_tips(fixed);
        (g, report)
    }

    fn bar_merge_with_tips(fixed: bool) -> (VersionGraph, MergeReport, (VersionId, VersionId)) {
        let reg = registry();
        let mut g = VersionGraph::new();
        let fork = g.extend(&VersionId::root(), Diff::new_object(&word("bar", 2))).unwrap();
        let yours = g.extend(&fork, set_count("bar", 3)).unwrap();
        let theirs = VersionId::fresh();
        let report = g
            .receive_update(&fork, &theirs, set_count("bar", 3), &counting_merge(fixed), &reg)
            .unwrap();
        (g, report, (yours, theirs))
    }

    #[test]
    fn buggy_merge_doubles_count() {
        let (g, report) = bar_merge(false);
        assert!(report.conflicted && report.resolver_invoked);
        assert_eq!(g.head(), &report.merged_version);
        assert_eq!(g.parents(g.head()).count(), 2);
        let s = g.head_state().unwrap();
        assert_eq!(s.get("WordCount", &Value::from("bar")).unwrap().dims["count"], Value::Int(6));
        g.check_invariants().unwrap();
    }

    #[test]
    fn fixed_merge_counts_correctly() {
        let (g, _) = bar_merge(true);
        let s = g.head_state().unwrap();
        assert_eq!(s.get("WordCount", &Value::from("bar")).unwrap().dims["count"], Value::Int(4));
        // both in-edges are sound
        for p in g.parents(g.head()) {
            let via = apply_diff(&g.state_at(p).unwrap(), g.edge(p, g.head()).unwrap()).unwrap();
            assert_eq!(via, s);
        }
    }

    #[test]
    fn fast_forward_skips_resolver() {
        let reg = registry();
        let mut g = VersionGraph::new();
        let v = VersionId::fresh();
        let never = |_: &MergeInput<'_>| -> Result<State> { panic!("resolver must not run") };
        let report = g.receive_update(&VersionId::root(), &v, add_line(0, "foo"), &never, &reg).unwrap();
        assert_eq!(report.merged_version, v);
        assert!(!report.conflicted && !report.resolver_invoked);
        assert_eq!(g.head(), &v);
    }

    #[test]
    fn nonconforming_merge_output_is_rejected() {
        let reg = registry();
        let mut g = VersionGraph::new();
        let fork = g.extend(&VersionId::root(), Diff::new_object(&word("bar", 2))).unwrap();
        g.extend(&fork, set_count("bar", 3)).unwrap();
        let bad = |_: &MergeInput<'_>| -> Result<State> {
            Ok(State::from_objects([ObjectState::new("Nope", Value::Int(1), Default::default())]))
        };
        let err = g.receive_update(&fork, &VersionId::fresh(), set_count("bar", 4), &bad, &reg);
        assert!(matches!(err, Err(Error::UnknownType(_))));
    }

    #[test]
    fn delta_between_linear_and_identity() {
        let mut g = VersionGraph::new();
        let a = g.extend(&VersionId::root(), add_line(4, "bar")).unwrap();
        let b = g.extend(&a, add_line(5, "bar")).unwrap();
        let (d, head) = g.delta_between(&a).unwrap();
        assert_eq!(head, b);
        assert_eq!(d, add_line(5, "bar"));
        let (d, head) = g.delta_between(&b).unwrap();
        assert!(d.is_empty());
        assert_eq!(head, b);
    }

    #[test]
    fn refs_survive_gc_and_reject_unknown() {
        let mut g = VersionGraph::new();
        let a = g.extend(&VersionId::root(), add_line(0, "foo")).unwrap();
        let b = g.extend(&a, add_line(1, "bar")).unwrap();
        let _c = g.extend(&b, add_line(2, "bar")).unwrap();
        g.update_ref("WordCounter1", &a).unwrap();
        assert!(g.update_ref("x", &"zzzz".into()).is_err());
        let removed = g.garbage_collect().unwrap();
        assert!(g.contains(&a));
        assert_eq!(removed, [b].into_iter().collect());
    }

    #[test]
    fn rollback_rules() {
        let (mut g, report, (yours, other)) = bar_merge_with_tips(false);
        g.update_ref("peer", &report.merged_version).unwrap();
        // a sibling branch tip is not an ancestor after rolling back to `yours`
        g.rollback(&yours).unwrap();
        assert_eq!(g.head(), &yours);
        assert!(!g.contains(&report.merged_version));
        assert_eq!(g.get_ref("peer"), Some(&yours));
        assert!(matches!(g.rollback(&other), Err(Error::NotAncestor { .. })));
        g.rollback(&VersionId::root()).unwrap();
        assert!(g.head_state().unwrap().is_empty());
        g.check_invariants().unwrap();
    }

    #[test]
    fn export_round_trip() {
        let (g, _) = bar_merge(true);
        let json = serde_json::to_value(g.export()).unwrap();
        assert!(json["vertices"].as_array().unwrap().iter().any(|v| v == "ROOT"));
        let back: GraphExport = serde_json::from_value(json).unwrap();
        assert_eq!(VersionGraph::from_export(&back).unwrap(), g);
    }
}
