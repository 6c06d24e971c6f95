//! The multiverse DAG: slices, design transitions, partial multiverses and
//! composite slices.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coevolution::CrossLink;
use crate::delta::{Correspondence, Delta, DeltaError, DeltaHints, EvolutionLink};
use crate::model::{is_identifier, Metamodel, ModelInstance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("invalid version label `{0}`")]
    InvalidLabel(String),
    #[error("invalid multiverse name `{0}`")]
    InvalidName(String),
    #[error("version `{0}` already exists")]
    DuplicateVersion(String),
    #[error("unknown version `{0}`")]
    UnknownVersion(String),
    #[error("unknown parent `{0}`")]
    UnknownParent(String),
    #[error("transition {from} -> {to} would create a cycle")]
    Cycle { from: String, to: String },
    #[error("`{0}` and `{1}` have no common ancestor")]
    NoCommonAncestor(String, String),
    #[error("`{a}` and `{b}` have several lowest common ancestors: {}", .candidates.join(", "))]
    AmbiguousAncestry {
        a: String,
        b: String,
        candidates: Vec<String>,
    },
    #[error("no directed path from `{from}` to `{to}`")]
    NoPath { from: String, to: String },
    #[error("several directed paths from `{from}` to `{to}`; pin one explicitly")]
    MultiplePaths { from: String, to: String },
    #[error("unknown multiverse `{0}`")]
    UnknownMultiverse(String),
    #[error("multiverse `{0}` selected more than once")]
    DuplicateMultiverse(String),
    #[error("unknown artifact `{0}`")]
    UnknownArtifact(String),
    #[error("artifact `{0}` is not a metamodel")]
    NotAMetamodel(String),
    #[error("internal reference {0} names an artifact outside the slice")]
    InvalidInternalRef(String),
    #[error("malformed reference `{0}`")]
    MalformedRef(String),
    #[error(transparent)]
    Delta(#[from] DeltaError),
}

pub(crate) fn is_label(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && !s.contains("..")
        && s.chars().all(|c| {
            !c.is_whitespace()
                && !c.is_control()
                && !matches!(c, '/' | '\\' | ':' | '@' | ',' | '(' | ')')
        })
}

/// Opaque artifact stored verbatim, optionally described by an export list
/// written in the metamodel format.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    pub file_name: String,
    pub bytes: Vec<u8>,
    pub exports: Option<Metamodel>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Artifact {
    Metamodel(Metamodel),
    Model(ModelInstance),
    Blob(Blob),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArtifactKind {
    Metamodel,
    Model,
    Blob,
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArtifactKind::Metamodel => "metamodel",
            ArtifactKind::Model => "model",
            ArtifactKind::Blob => "blob",
        })
    }
}

impl Artifact {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Artifact::Metamodel(_) => ArtifactKind::Metamodel,
            Artifact::Model(_) => ArtifactKind::Model,
            Artifact::Blob(_) => ArtifactKind::Blob,
        }
    }

    pub fn as_metamodel(&self) -> Option<&Metamodel> {
        match self {
            Artifact::Metamodel(mm) => Some(mm),
            _ => None,
        }
    }

    pub fn as_model(&self) -> Option<&ModelInstance> {
        match self {
            Artifact::Model(m) => Some(m),
            _ => None,
        }
    }

    /// The element signatures this artifact exposes to `use` links: a
    /// metamodel itself, or a blob's export list.
    pub fn exported_signatures(&self) -> Option<&Metamodel> {
        match self {
            Artifact::Metamodel(mm) => Some(mm),
            Artifact::Blob(b) => b.exports.as_ref(),
            Artifact::Model(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct InternalRef {
    pub source_artifact: String,
    pub target_artifact: String,
    pub ref_kind: String,
}

/// An immutable, versioned set of artifacts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slice {
    version: String,
    artifacts: BTreeMap<String, Arc<Artifact>>,
    internal_refs: Vec<InternalRef>,
}

impl Slice {
    pub fn new(
        version: &str,
        artifacts: BTreeMap<String, Artifact>,
        internal_refs: Vec<InternalRef>,
    ) -> Result<Self, GraphError> {
        if !is_label(version) {
            return Err(GraphError::InvalidLabel(version.to_string()));
        }
        for name in artifacts.keys() {
            if !is_identifier(name) {
                return Err(GraphError::InvalidName(name.clone()));
            }
        }
        for r in &internal_refs {
            if !artifacts.contains_key(&r.source_artifact)
                || !artifacts.contains_key(&r.target_artifact)
            {
                return Err(GraphError::InvalidInternalRef(format!(
                    "{} -> {} ({})",
                    r.source_artifact, r.target_artifact, r.ref_kind
                )));
            }
        }
        Ok(Slice {
            version: version.to_string(),
            artifacts: artifacts
                .into_iter()
                .map(|(k, v)| (k, Arc::new(v)))
                .collect(),
            internal_refs,
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn artifacts(&self) -> &BTreeMap<String, Arc<Artifact>> {
        &self.artifacts
    }

    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.get(name).map(Arc::as_ref)
    }

    pub fn internal_refs(&self) -> &[InternalRef] {
        &self.internal_refs
    }

    /// The only metamodel artifact of the slice, if there is exactly one.
    pub fn sole_metamodel(&self) -> Option<(&str, &Metamodel)> {
        let mut mms = self
            .artifacts
            .iter()
            .filter_map(|(n, a)| a.as_metamodel().map(|m| (n.as_str(), m)));
        let first = mms.next()?;
        mms.next().is_none().then_some(first)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DesignTransition {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub rationale: String,
    #[serde(default)]
    pub evolution_links: Vec<EvolutionLink>,
}

impl DesignTransition {
    pub fn link_for(&self, artifact: &str) -> Option<&EvolutionLink> {
        self.evolution_links.iter().find(|l| l.artifact == artifact)
    }
}

/// A DAG of slices connected by design transitions. Values are immutable
/// snapshots; [`Multiverse::add_slice`] returns a new one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Multiverse {
    name: String,
    slices: BTreeMap<String, Slice>,
    transitions: Vec<DesignTransition>,
}

impl Multiverse {
    pub fn new(name: &str) -> Result<Self, GraphError> {
        if !is_identifier(name) {
            return Err(GraphError::InvalidName(name.to_string()));
        }
        Ok(Multiverse {
            name: name.to_string(),
            slices: BTreeMap::new(),
            transitions: Vec::new(),
        })
    }

    /// Rebuilds a multiverse from stored parts, checking every invariant.
    pub fn from_parts(
        name: &str,
        slices: Vec<Slice>,
        transitions: Vec<DesignTransition>,
    ) -> Result<Self, GraphError> {
        let mut mv = Multiverse::new(name)?;
        for s in slices {
            if mv.slices.contains_key(&s.version) {
                return Err(GraphError::DuplicateVersion(s.version));
            }
            mv.slices.insert(s.version.clone(), s);
        }
        for t in &transitions {
            for end in [&t.from, &t.to] {
                if !mv.slices.contains_key(end) {
                    return Err(GraphError::UnknownVersion(end.clone()));
                }
            }
            if t.from == t.to {
                return Err(GraphError::Cycle {
                    from: t.from.clone(),
                    to: t.to.clone(),
                });
            }
        }
        mv.transitions = transitions;
        if mv.topological_order().len() != mv.slices.len() {
            let t = &mv.transitions[0];
            return Err(GraphError::Cycle {
                from: t.from.clone(),
                to: t.to.clone(),
            });
        }
        Ok(mv)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn slices(&self) -> impl Iterator<Item = &Slice> {
        self.slices.values()
    }

    pub fn slice(&self, version: &str) -> Result<&Slice, GraphError> {
        self.slices
            .get(version)
            .ok_or_else(|| GraphError::UnknownVersion(version.to_string()))
    }

    pub fn contains(&self, version: &str) -> bool {
        self.slices.contains_key(version)
    }

    pub fn transitions(&self) -> &[DesignTransition] {
        &self.transitions
    }

    pub fn transition(&self, from: &str, to: &str) -> Option<&DesignTransition> {
        self.transitions
            .iter()
            .find(|t| t.from == from && t.to == to)
    }

    pub fn parents(&self, version: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .transitions
            .iter()
            .filter(|t| t.to == version)
            .map(|t| t.from.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn children(&self, version: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .transitions
            .iter()
            .filter(|t| t.from == version)
            .map(|t| t.to.as_str())
            .collect();
        out.sort_unstable();
        out
    }

    /// Adds a slice below `parents`, one transition per parent. Evolution
    /// links record identity for unchanged artifacts; changed metamodels get a
    /// recorded delta when `hints` are given, else are computed on demand.
    pub fn add_slice(
        &self,
        slice: Slice,
        parents: &[String],
        rationale: &str,
        hints: Option<&DeltaHints>,
    ) -> Result<Multiverse, GraphError> {
        if self.slices.contains_key(&slice.version) {
            return Err(GraphError::DuplicateVersion(slice.version.clone()));
        }
        let mut seen = BTreeSet::new();
        for p in parents {
            if !self.slices.contains_key(p) {
                return Err(GraphError::UnknownParent(p.clone()));
            }
            if !seen.insert(p) {
                return Err(GraphError::UnknownParent(format!("{p} (listed twice)")));
            }
        }
        let mut next = self.clone();
        for p in parents {
            let parent = &self.slices[p];
            let evolution_links = evolution_links(parent, &slice, hints)?;
            next.transitions.push(DesignTransition {
                from: p.clone(),
                to: slice.version.clone(),
                rationale: rationale.to_string(),
                evolution_links,
            });
        }
        next.slices.insert(slice.version.clone(), slice);
        debug_assert_eq!(next.topological_order().len(), next.slices.len());
        Ok(next)
    }

    /// Kahn's algorithm with lexicographic tie-break. Shorter than the slice
    /// count only if the graph has a cycle.
    pub fn topological_order(&self) -> Vec<&str> {
        let mut indegree: BTreeMap<&str, usize> =
            self.slices.keys().map(|k| (k.as_str(), 0)).collect();
        for t in &self.transitions {
            *indegree.entry(t.to.as_str()).or_default() += 1;
        }
        let mut ready: BTreeSet<&str> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(k, _)| *k)
            .collect();
        let mut out = Vec::new();
        while let Some(next) = ready.pop_first() {
            out.push(next);
            for t in self.transitions.iter().filter(|t| t.from == next) {
                let d = indegree.get_mut(t.to.as_str()).expect("endpoint exists");
                *d -= 1;
                if *d == 0 {
                    ready.insert(t.to.as_str());
                }
            }
        }
        out
    }

    /// Reflexive ancestor set.
    pub fn ancestors(&self, version: &str) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        let mut queue = VecDeque::from([version]);
        while let Some(v) = queue.pop_front() {
            if let Some((k, _)) = self.slices.get_key_value(v) {
                if out.insert(k.as_str()) {
                    queue.extend(self.parents(v));
                }
            }
        }
        out
    }

    /// Length of the longest path from a root.
    fn depths(&self) -> BTreeMap<&str, usize> {
        let mut depth = BTreeMap::new();
        for v in self.topological_order() {
            let d = self
                .parents(v)
                .iter()
                .map(|p| depth.get(p).copied().unwrap_or(0) + 1)
                .max()
                .unwrap_or(0);
            depth.insert(v, d);
        }
        depth
    }

    /// Common ancestors of `a` and `b` that are not proper ancestors of
    /// another common ancestor.
    pub fn lowest_common_ancestors(&self, a: &str, b: &str) -> Result<Vec<&str>, GraphError> {
        self.slice(a)?;
        self.slice(b)?;
        let common: BTreeSet<&str> = self
            .ancestors(a)
            .intersection(&self.ancestors(b))
            .copied()
            .collect();
        Ok(common
            .iter()
            .filter(|c| {
                !common
                    .iter()
                    .any(|other| other != *c && self.ancestors(other).contains(*c))
            })
            .copied()
            .collect())
    }

    /// Deepest lowest common ancestor, ties broken by the smallest label.
    pub fn lca(&self, a: &str, b: &str) -> Result<&str, GraphError> {
        let candidates = self.lowest_common_ancestors(a, b)?;
        let depth = self.depths();
        candidates
            .into_iter()
            .max_by(|x, y| depth[x].cmp(&depth[y]).then_with(|| y.cmp(x)))
            .ok_or_else(|| GraphError::NoCommonAncestor(a.to_string(), b.to_string()))
    }

    /// The unique directed path `from ->* to`, both ends included.
    pub fn path(&self, from: &str, to: &str) -> Result<Vec<&str>, GraphError> {
        let from = self.slice(from)?.version();
        self.slice(to)?;
        let on_path: BTreeSet<&str> = self
            .ancestors(to)
            .into_iter()
            .filter(|v| self.ancestors(v).contains(from))
            .collect();
        if !on_path.contains(from) {
            return Err(GraphError::NoPath {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        let mut path = vec![from];
        let mut cur = from;
        while cur != to {
            let next: Vec<&str> = self
                .children(cur)
                .into_iter()
                .filter(|c| on_path.contains(c))
                .collect();
            if next.len() != 1 {
                return Err(GraphError::MultiplePaths {
                    from: from.to_string(),
                    to: to.to_string(),
                });
            }
            cur = next[0];
            path.push(cur);
        }
        if path.len() != on_path.len() {
            return Err(GraphError::MultiplePaths {
                from: from.to_string(),
                to: to.to_string(),
            });
        }
        Ok(path)
    }

    /// Minimal spanning subtree containing `explicit`: the union, over all
    /// pairs, of the paths from the pair's lowest common ancestor to each
    /// member. Returned in topological order.
    pub fn partial_multiverse(&self, explicit: &[String]) -> Result<Vec<&Slice>, GraphError> {
        for v in explicit {
            self.slice(v)?;
        }
        let explicit: BTreeSet<&str> = explicit.iter().map(String::as_str).collect();
        let mut nodes: BTreeSet<&str> = explicit.clone();
        let list: Vec<&str> = explicit.iter().copied().collect();
        for (i, a) in list.iter().enumerate() {
            for b in &list[i + 1..] {
                let lcas = self.lowest_common_ancestors(a, b)?;
                let top = match lcas.as_slice() {
                    [] => return Err(GraphError::NoCommonAncestor(a.to_string(), b.to_string())),
                    [one] => *one,
                    many => {
                        return Err(GraphError::AmbiguousAncestry {
                            a: a.to_string(),
                            b: b.to_string(),
                            candidates: many.iter().map(|s| s.to_string()).collect(),
                        })
                    }
                };
                nodes.extend(self.path(top, a)?);
                nodes.extend(self.path(top, b)?);
            }
        }
        let order = self.topological_order();
        for v in order.iter().rev() {
            if explicit.contains(v) || !nodes.contains(v) {
                continue;
            }
            nodes.remove(v);
            if !self.induces_connected(&nodes) {
                nodes.insert(v);
            }
        }
        Ok(self
            .topological_order()
            .into_iter()
            .filter(|v| nodes.contains(v))
            .map(|v| &self.slices[v])
            .collect())
    }

    fn induces_connected(&self, nodes: &BTreeSet<&str>) -> bool {
        let Some(&start) = nodes.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for w in self.parents(v).into_iter().chain(self.children(v)) {
                if nodes.contains(w) && seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        seen.len() == nodes.len()
    }

    /// Delta of metamodel `artifact` along the unique path `from ->* to`,
    /// composed from the recorded evolution links (diffed on demand where
    /// none was recorded).
    pub fn delta_along(&self, from: &str, to: &str, artifact: &str) -> Result<Delta, GraphError> {
        let path = self.path(from, to)?;
        let mut parts = Vec::new();
        for pair in path.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let mm_a = self.metamodel(a, artifact)?;
            let mm_b = self.metamodel(b, artifact)?;
            let recorded = self
                .transition(a, b)
                .and_then(|t| t.link_for(artifact))
                .map(|l| &l.correspondence);
            let step = match recorded {
                Some(Correspondence::Identity) => Delta::new(a, b, vec![]),
                Some(Correspondence::Delta(d)) => d.clone(),
                _ => Delta::between(a, b, mm_a, mm_b, None)?,
            };
            parts.push(step);
        }
        Ok(Delta::compose(&parts).unwrap_or_else(|| Delta::new(from, to, vec![])))
    }

    pub fn metamodel(&self, version: &str, artifact: &str) -> Result<&Metamodel, GraphError> {
        let slice = self.slice(version)?;
        let a = slice.artifact(artifact).ok_or_else(|| {
            GraphError::UnknownArtifact(format!("{}@{version}:{artifact}", self.name))
        })?;
        a.as_metamodel()
            .ok_or_else(|| GraphError::NotAMetamodel(format!("{}@{version}:{artifact}", self.name)))
    }
}

fn evolution_links(
    parent: &Slice,
    child: &Slice,
    hints: Option<&DeltaHints>,
) -> Result<Vec<EvolutionLink>, GraphError> {
    let mut out = Vec::new();
    for (name, new) in &child.artifacts {
        let Some(old) = parent.artifacts.get(name) else {
            continue;
        };
        let correspondence = if old == new {
            Correspondence::Identity
        } else {
            match (old.as_ref(), new.as_ref(), hints) {
                (Artifact::Metamodel(a), Artifact::Metamodel(b), Some(h)) => Correspondence::Delta(
                    Delta::between(&parent.version, &child.version, a, b, Some(h))?,
                ),
                _ => Correspondence::Changed,
            }
        };
        out.push(EvolutionLink {
            artifact: name.clone(),
            correspondence,
        });
    }
    Ok(out)
}

/// `multiverse@version`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRef {
    pub multiverse: String,
    pub version: String,
}

impl SliceRef {
    pub fn new(multiverse: &str, version: &str) -> Self {
        SliceRef {
            multiverse: multiverse.to_string(),
            version: version.to_string(),
        }
    }

    pub fn artifact(&self, name: &str) -> ArtifactRef {
        ArtifactRef {
            multiverse: self.multiverse.clone(),
            version: self.version.clone(),
            artifact: name.to_string(),
        }
    }
}

impl fmt::Display for SliceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.multiverse, self.version)
    }
}

impl FromStr for SliceRef {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, GraphError> {
        let (mv, v) = s
            .split_once('@')
            .ok_or_else(|| GraphError::MalformedRef(s.to_string()))?;
        if !is_identifier(mv) || !is_label(v) {
            return Err(GraphError::MalformedRef(s.to_string()));
        }
        Ok(SliceRef::new(mv, v))
    }
}

/// `multiverse@version:artifact`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactRef {
    pub multiverse: String,
    pub version: String,
    pub artifact: String,
}

impl ArtifactRef {
    pub fn slice(&self) -> SliceRef {
        SliceRef::new(&self.multiverse, &self.version)
    }

    pub fn with_version(&self, version: &str) -> ArtifactRef {
        ArtifactRef {
            version: version.to_string(),
            ..self.clone()
        }
    }
}

impl fmt::Display for ArtifactRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}:{}", self.multiverse, self.version, self.artifact)
    }
}

impl FromStr for ArtifactRef {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, GraphError> {
        let (slice, artifact) = s
            .rsplit_once(':')
            .ok_or_else(|| GraphError::MalformedRef(s.to_string()))?;
        let slice: SliceRef = slice
            .parse()
            .map_err(|_| GraphError::MalformedRef(s.to_string()))?;
        if !is_identifier(artifact) {
            return Err(GraphError::MalformedRef(s.to_string()));
        }
        Ok(slice.artifact(artifact))
    }
}

/// Multiverses by name.
pub type Universe = BTreeMap<String, Multiverse>;

/// A workspace combining at most one slice per multiverse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositeSlice {
    members: Vec<SliceRef>,
    artifacts: BTreeMap<String, Arc<Artifact>>,
}

impl CompositeSlice {
    pub fn members(&self) -> &[SliceRef] {
        &self.members
    }

    pub fn contains(&self, slice: &SliceRef) -> bool {
        self.members.contains(slice)
    }

    /// The selected version of `multiverse`, if any.
    pub fn version_of(&self, multiverse: &str) -> Option<&str> {
        self.members
            .iter()
            .find(|m| m.multiverse == multiverse)
            .map(|m| m.version.as_str())
    }

    /// Artifact index keyed `Multiverse:artifact`.
    pub fn artifacts(&self) -> &BTreeMap<String, Arc<Artifact>> {
        &self.artifacts
    }

    /// Looks up an artifact, requiring its slice to be a member.
    pub fn artifact(&self, r: &ArtifactRef) -> Option<&Artifact> {
        if !self.contains(&r.slice()) {
            return None;
        }
        self.artifacts
            .get(&format!("{}:{}", r.multiverse, r.artifact))
            .map(Arc::as_ref)
    }

    /// Artifacts of the member slice of `multiverse`.
    pub fn artifacts_of<'a>(
        &'a self,
        multiverse: &'a str,
    ) -> impl Iterator<Item = (&'a str, &'a Artifact)> + 'a {
        let prefix = format!("{multiverse}:");
        self.artifacts
            .iter()
            .filter(move |(k, _)| k.starts_with(&prefix))
            .map(move |(k, v)| (&k[multiverse.len() + 1..], v.as_ref()))
    }
}

/// Selects one slice per multiverse into a composite.
pub fn compose(universe: &Universe, selection: &[SliceRef]) -> Result<CompositeSlice, GraphError> {
    let mut members: Vec<SliceRef> = Vec::new();
    let mut artifacts = BTreeMap::new();
    for r in selection {
        if members.iter().any(|m| m.multiverse == r.multiverse) {
            return Err(GraphError::DuplicateMultiverse(r.multiverse.clone()));
        }
        let mv = universe
            .get(&r.multiverse)
            .ok_or_else(|| GraphError::UnknownMultiverse(r.multiverse.clone()))?;
        let slice = mv.slice(&r.version)?;
        for (name, a) in slice.artifacts() {
            artifacts.insert(format!("{}:{name}", r.multiverse), Arc::clone(a));
        }
        members.push(r.clone());
    }
    members.sort();
    Ok(CompositeSlice { members, artifacts })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosednessReport {
    pub closed: bool,
    /// Ids of links leaving the composite.
    pub unresolved: Vec<String>,
    /// The same links grouped by `source slice -> target slice`.
    pub by_slice: BTreeMap<String, Vec<String>>,
}

/// A composite is closed when every link out of a member lands on a member.
pub fn check_closed(composite: &CompositeSlice, links: &[CrossLink]) -> ClosednessReport {
    let mut unresolved: Vec<&CrossLink> = links
        .iter()
        .filter(|l| composite.contains(&l.source.slice()) && !composite.contains(&l.target.slice()))
        .collect();
    unresolved.sort_by(|a, b| a.id.cmp(&b.id));
    let mut by_slice: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for l in &unresolved {
        by_slice
            .entry(format!("{} -> {}", l.source.slice(), l.target.slice()))
            .or_default()
            .push(l.id.clone());
    }
    ClosednessReport {
        closed: unresolved.is_empty(),
        unresolved: unresolved.iter().map(|l| l.id.clone()).collect(),
        by_slice,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coevolution::LinkType;
    use crate::fixtures;

    fn mm_slice(version: &str, mm: Metamodel) -> Slice {
        Slice::new(
            version,
            [("mm".to_string(), Artifact::Metamodel(mm))].into(),
            vec![],
        )
        .unwrap()
    }

    fn labels(slices: &[&Slice]) -> Vec<String> {
        slices.iter().map(|s| s.version().to_string()).collect()
    }

    /// 1.0 -> 2.0 -> {2.1, 3.0}
    fn mm_history() -> Multiverse {
        let mv = Multiverse::new("MM").unwrap();
        let mv = mv
            .add_slice(mm_slice("1.0", fixtures::mm_v1()), &[], "", None)
            .unwrap();
        let mv = mv
            .add_slice(
                mm_slice("2.0", fixtures::mm_v2()),
                &["1.0".into()],
                "merge ports",
                Some(&fixtures::merge_hints()),
            )
            .unwrap();
        let mv = mv
            .add_slice(
                mm_slice("2.1", fixtures::mm_v21()),
                &["2.0".into()],
                "monitoring",
                None,
            )
            .unwrap();
        mv.add_slice(
            mm_slice("3.0", fixtures::mm_v2()),
            &["2.0".into()],
            "branch",
            None,
        )
        .unwrap()
    }

    #[test]
    fn add_slice_records_transitions() {
        let mv = mm_history();
        assert_eq!(mv.parents("2.0"), ["1.0"]);
        assert_eq!(mv.children("2.0"), ["2.1", "3.0"]);
        let t = mv.transition("1.0", "2.0").unwrap();
        assert!(matches!(
            t.evolution_links[0].correspondence,
            Correspondence::Delta(_)
        ));
        let t = mv.transition("2.0", "3.0").unwrap();
        assert_eq!(
            t.evolution_links[0].correspondence,
            Correspondence::Identity
        );
        let t = mv.transition("2.0", "2.1").unwrap();
        assert_eq!(t.evolution_links[0].correspondence, Correspondence::Changed);
    }

    #[test]
    fn add_slice_errors() {
        let mv = mm_history();
        assert_eq!(
            mv.add_slice(
                mm_slice("2.0", fixtures::mm_v2()),
                &["1.0".into()],
                "",
                None
            ),
            Err(GraphError::DuplicateVersion("2.0".into()))
        );
        assert_eq!(
            mv.add_slice(
                mm_slice("4.0", fixtures::mm_v2()),
                &["9.9".into()],
                "",
                None
            ),
            Err(GraphError::UnknownParent("9.9".into()))
        );
        assert!(Slice::new("a/b", BTreeMap::new(), vec![]).is_err());
    }

    #[test]
    fn partial_multiverse_examples() {
        let mv = mm_history();
        let p = mv
            .partial_multiverse(&["1.0".into(), "2.0".into()])
            .unwrap();
        assert_eq!(labels(&p), ["1.0", "2.0"]);
        let p = mv
            .partial_multiverse(&["1.0".into(), "2.1".into()])
            .unwrap();
        assert_eq!(labels(&p), ["1.0", "2.0", "2.1"]);
        let p = mv.partial_multiverse(&["1.0".into()]).unwrap();
        assert_eq!(labels(&p), ["1.0"]);
        let p = mv
            .partial_multiverse(&["2.1".into(), "3.0".into()])
            .unwrap();
        assert_eq!(labels(&p), ["2.0", "2.1", "3.0"]);
        assert!(mv.partial_multiverse(&["7".into()]).is_err());
    }

    #[test]
    fn lca_examples() {
        let mv = mm_history();
        assert_eq!(mv.lca("2.1", "3.0").unwrap(), "2.0");
        assert_eq!(mv.lca("1.0", "2.1").unwrap(), "1.0");
        let two_roots = Multiverse::new("X")
            .unwrap()
            .add_slice(mm_slice("a", fixtures::mm_v1()), &[], "", None)
            .unwrap()
            .add_slice(mm_slice("b", fixtures::mm_v1()), &[], "", None)
            .unwrap();
        assert!(matches!(
            two_roots.lca("a", "b"),
            Err(GraphError::NoCommonAncestor(..))
        ));
        assert!(two_roots
            .partial_multiverse(&["a".into(), "b".into()])
            .is_err());
    }

    #[test]
    fn merge_ancestry_is_ambiguous_for_partial() {
        // a -> {b, c}; {b, c} -> d and {b, c} -> e: lca(d, e) is {b, c}
        let s = |v: &str| mm_slice(v, fixtures::mm_v1());
        let mv = Multiverse::new("X").unwrap();
        let mv = mv.add_slice(s("a"), &[], "", None).unwrap();
        let mv = mv.add_slice(s("b"), &["a".into()], "", None).unwrap();
        let mv = mv.add_slice(s("c"), &["a".into()], "", None).unwrap();
        let mv = mv
            .add_slice(s("d"), &["b".into(), "c".into()], "", None)
            .unwrap();
        let mv = mv
            .add_slice(s("e"), &["b".into(), "c".into()], "", None)
            .unwrap();
        assert_eq!(mv.lca("d", "e").unwrap(), "b");
        assert!(matches!(
            mv.partial_multiverse(&["d".into(), "e".into()]),
            Err(GraphError::AmbiguousAncestry { .. })
        ));
        assert!(matches!(
            mv.path("a", "d"),
            Err(GraphError::MultiplePaths { .. })
        ));
        assert_eq!(mv.path("b", "d").unwrap(), ["b", "d"]);
    }

    #[test]
    fn delta_along_composes_path() {
        let mv = mm_history();
        let d = mv.delta_along("1.0", "2.1", "mm").unwrap();
        assert_eq!(d.from, "1.0");
        assert_eq!(d.to, "2.1");
        assert_eq!(d.ops.len(), 2);
        assert!(matches!(
            mv.delta_along("2.1", "1.0", "mm"),
            Err(GraphError::NoPath { .. })
        ));
    }

    #[test]
    fn refs_parse() {
        let r: ArtifactRef = "MyModel@7.2:model".parse().unwrap();
        assert_eq!(r.multiverse, "MyModel");
        assert_eq!(r.version, "7.2");
        assert_eq!(r.artifact, "model");
        assert_eq!(r.to_string(), "MyModel@7.2:model");
        assert!("MyModel:model".parse::<ArtifactRef>().is_err());
        let s: SliceRef = "MM@2.0".parse().unwrap();
        assert_eq!(s, SliceRef::new("MM", "2.0"));
    }

    fn universe() -> Universe {
        let model = Slice::new(
            "7.2",
            [(
                "model".to_string(),
                Artifact::Model(fixtures::event_logger()),
            )]
            .into(),
            vec![],
        )
        .unwrap();
        let my = Multiverse::new("MyModel")
            .unwrap()
            .add_slice(model, &[], "", None)
            .unwrap();
        [
            ("MM".to_string(), mm_history()),
            ("MyModel".to_string(), my),
        ]
        .into()
    }

    fn chi() -> CrossLink {
        CrossLink {
            id: "chi".into(),
            link_type: LinkType::Conformance,
            source: "MyModel@7.2:model".parse().unwrap(),
            target: "MM@1.0:mm".parse().unwrap(),
            payload: None,
        }
    }

    #[test]
    fn compose_and_close() {
        let u = universe();
        let sel = [SliceRef::new("MyModel", "7.2"), SliceRef::new("MM", "1.0")];
        let c = compose(&u, &sel).unwrap();
        assert_eq!(c.members().len(), 2);
        assert!(c.artifacts().contains_key("MM:mm"));
        assert!(check_closed(&c, &[chi()]).closed);

        let only_model = compose(&u, &sel[..1]).unwrap();
        let report = check_closed(&only_model, &[chi()]);
        assert!(!report.closed);
        assert_eq!(report.unresolved, ["chi"]);

        assert!(check_closed(&c, &[]).closed);
        assert!(compose(&u, &[]).unwrap().members().is_empty());
        assert_eq!(
            compose(
                &u,
                &[SliceRef::new("MM", "1.0"), SliceRef::new("MM", "2.0")]
            ),
            Err(GraphError::DuplicateMultiverse("MM".into()))
        );
        assert!(compose(&u, &[SliceRef::new("MM", "9.9")]).is_err());

        let reversed: Vec<_> = sel.iter().rev().cloned().collect();
        assert_eq!(compose(&u, &reversed).unwrap(), c);
    }
}
