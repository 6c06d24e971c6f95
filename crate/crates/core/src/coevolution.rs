//! Cross-multiverse links, the consistency predicate over a pair of slices,
//! and co-evolution trigger detection.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delta::{classify_delta, Delta, DeltaError, DeltaOp, ImpactClass};
use crate::graph::{
    compose, Artifact, ArtifactRef, CompositeSlice, GraphError, SliceRef, Universe,
};
use crate::model::{check_conformance, Metamodel, ModelError};

pub use crate::migration::{
    migrate, plan_migration, plan_migration_with, AutoStep, Decision, DecisionFile,
    DecisionRequest, Migration, MigrationError, MigrationPlan,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoevolutionError {
    #[error("link type `{0}` has no evaluator")]
    NoEvaluator(LinkType),
    #[error("unknown link type `{0}`")]
    UnknownLinkType(String),
    #[error("link `{link}` refers to `{artifact}`, which is not in the composite")]
    DanglingArtifact { link: String, artifact: String },
    #[error("link `{link}`: {reason}")]
    IllTypedLink { link: String, reason: String },
    #[error("link `{link}`: invalid payload: {reason}")]
    InvalidPayload { link: String, reason: String },
    #[error("link `{0}` connects artifacts of the same multiverse")]
    SameMultiverse(String),
    #[error("link id `{0}` is used twice")]
    DuplicateLinkId(String),
    #[error("`{0}` and `{1}` must be slices of the same multiverse")]
    NotSameMultiverse(String, String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The kinds of relation a cross-link can express. Only conformance and use
/// can be evaluated; the others are recorded but not checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkType {
    Conformance,
    Use,
    Implementation,
    Refinement,
    Binding,
}

impl LinkType {
    pub const ALL: [LinkType; 5] = [
        LinkType::Conformance,
        LinkType::Use,
        LinkType::Implementation,
        LinkType::Refinement,
        LinkType::Binding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LinkType::Conformance => "conformance",
            LinkType::Use => "use",
            LinkType::Implementation => "implementation",
            LinkType::Refinement => "refinement",
            LinkType::Binding => "binding",
        }
    }

    /// Built-in evaluator id, or `None` for declared-only types.
    pub fn evaluator(self) -> Option<&'static str> {
        match self {
            LinkType::Conformance => Some("check_conformance"),
            LinkType::Use => Some("exported_signatures"),
            _ => None,
        }
    }
}

impl fmt::Display for LinkType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkType {
    type Err = CoevolutionError;

    fn from_str(s: &str) -> Result<Self, CoevolutionError> {
        LinkType::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| CoevolutionError::UnknownLinkType(s.to_string()))
    }
}

/// A typed relation `L(source, target)` between artifacts of two multiverses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossLink {
    pub id: String,
    #[serde(rename = "type")]
    pub link_type: LinkType,
    pub source: ArtifactRef,
    pub target: ArtifactRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<serde_json::Value>,
}

impl CrossLink {
    pub fn validate(&self) -> Result<(), CoevolutionError> {
        if self.source.multiverse == self.target.multiverse {
            return Err(CoevolutionError::SameMultiverse(self.id.clone()));
        }
        if self.link_type == LinkType::Use {
            self.use_payload()?;
        }
        Ok(())
    }

    /// Whether the link connects `a` and `b`, in either direction.
    pub fn connects(&self, a: &SliceRef, b: &SliceRef) -> bool {
        let (s, t) = (self.source.slice(), self.target.slice());
        (&s == a && &t == b) || (&s == b && &t == a)
    }

    /// A copy bound to new versions, with id `<id>@<source version>`.
    pub fn rebind(&self, source_version: &str, target_version: &str) -> CrossLink {
        let base = self.id.split('@').next().unwrap_or(&self.id);
        CrossLink {
            id: format!("{base}@{source_version}"),
            link_type: self.link_type,
            source: self.source.with_version(source_version),
            target: self.target.with_version(target_version),
            payload: self.payload.clone(),
        }
    }

    pub fn use_payload(&self) -> Result<UsePayload, CoevolutionError> {
        let invalid = |reason: String| CoevolutionError::InvalidPayload {
            link: self.id.clone(),
            reason,
        };
        let value = self
            .payload
            .clone()
            .ok_or_else(|| invalid("missing `uses` list".into()))?;
        let payload: UsePayload =
            serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
        for u in &payload.uses {
            if UsedElement::split(&u.element).is_none() {
                return Err(invalid(format!(
                    "`{}` is neither `Class` nor `Class.feature`",
                    u.element
                )));
            }
        }
        Ok(payload)
    }
}

/// The links registry file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinksRegistry {
    pub links: Vec<CrossLink>,
}

impl LinksRegistry {
    pub fn new(links: Vec<CrossLink>) -> Result<Self, CoevolutionError> {
        let mut ids = BTreeSet::new();
        for l in &links {
            l.validate()?;
            if !ids.insert(l.id.as_str()) {
                return Err(CoevolutionError::DuplicateLinkId(l.id.clone()));
            }
        }
        Ok(LinksRegistry { links })
    }

    pub fn from_json(text: &str) -> Result<Self, CoevolutionError> {
        let raw: LinksRegistry = serde_json::from_str(text).map_err(ModelError::from_json)?;
        LinksRegistry::new(raw.links)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("links serialize")
    }

    pub fn get(&self, id: &str) -> Option<&CrossLink> {
        self.links.iter().find(|l| l.id == id)
    }

    pub fn add(&mut self, link: CrossLink) -> Result<(), CoevolutionError> {
        link.validate()?;
        if self.get(&link.id).is_some() {
            return Err(CoevolutionError::DuplicateLinkId(link.id));
        }
        self.links.push(link);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsePayload {
    pub uses: Vec<UsedElement>,
}

/// `Class` or `Class.feature`, with the signature seen when the link was made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsedElement {
    pub element: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
}

impl UsedElement {
    fn split(element: &str) -> Option<(&str, Option<&str>)> {
        let (class, feature) = match element.split_once('.') {
            Some((c, f)) => (c, Some(f)),
            None => (element, None),
        };
        let ok =
            crate::model::is_identifier(class) && feature.is_none_or(crate::model::is_identifier);
        ok.then_some((class, feature))
    }
}

impl UsePayload {
    /// Records the current signature of each element in `exports`.
    pub fn capture(elements: &[String], exports: &Metamodel) -> Result<UsePayload, String> {
        let uses = elements
            .iter()
            .map(|e| {
                let signature = element_signature(exports, e)
                    .ok_or_else(|| format!("`{e}` is not exported"))?;
                Ok(UsedElement {
                    element: e.clone(),
                    signature: Some(signature),
                })
            })
            .collect::<Result<_, String>>()?;
        Ok(UsePayload { uses })
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("payload serializes")
    }
}

/// Signature of a class (`abstract class C <: A, B`) or of a flattened
/// feature (`f: T[l..u]`).
pub fn element_signature(mm: &Metamodel, element: &str) -> Option<String> {
    let (class, feature) = UsedElement::split(element)?;
    let c = mm.class(class)?;
    match feature {
        None => {
            let mut sig = String::new();
            if c.is_abstract {
                sig.push_str("abstract ");
            }
            sig.push_str("class ");
            sig.push_str(&c.name);
            if !c.supertypes.is_empty() {
                sig.push_str(" <: ");
                sig.push_str(&c.supertypes.join(", "));
            }
            Some(sig)
        }
        Some(f) => mm.feature(class, f).map(|f| f.signature()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkViolation {
    /// Object id (`id` or `id.feature`) or used element name.
    pub subject: String,
    pub kind: String,
    pub detail: String,
}

impl fmt::Display for LinkViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.subject, self.kind, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkResult {
    pub link_id: String,
    pub holds: bool,
    pub violations: Vec<LinkViolation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ConsistencyResult {
    pub holds: bool,
    pub per_link: Vec<LinkResult>,
}

impl ConsistencyResult {
    fn from_results(mut per_link: Vec<LinkResult>) -> Self {
        per_link.sort_by(|a, b| a.link_id.cmp(&b.link_id));
        ConsistencyResult {
            holds: per_link.iter().all(|r| r.holds),
            per_link,
        }
    }
}

fn lookup<'c>(
    ctx: &'c CompositeSlice,
    link: &CrossLink,
    r: &ArtifactRef,
) -> Result<&'c Artifact, CoevolutionError> {
    ctx.artifact(r)
        .ok_or_else(|| CoevolutionError::DanglingArtifact {
            link: link.id.clone(),
            artifact: r.to_string(),
        })
}

/// Evaluates one link inside `ctx`.
pub fn evaluate_link(
    ctx: &CompositeSlice,
    link: &CrossLink,
) -> Result<LinkResult, CoevolutionError> {
    if link.link_type.evaluator().is_none() {
        return Err(CoevolutionError::NoEvaluator(link.link_type));
    }
    let source = lookup(ctx, link, &link.source)?;
    let target = lookup(ctx, link, &link.target)?;
    let violations = match link.link_type {
        LinkType::Conformance => {
            let (Artifact::Model(model), Artifact::Metamodel(mm)) = (source, target) else {
                return Err(CoevolutionError::IllTypedLink {
                    link: link.id.clone(),
                    reason: format!(
                        "conformance needs model -> metamodel, found {} -> {}",
                        source.kind(),
                        target.kind()
                    ),
                });
            };
            check_conformance(model, mm)
                .violations
                .into_iter()
                .map(|v| LinkViolation {
                    subject: match &v.feature {
                        Some(f) => format!("{}.{f}", v.object_id),
                        None => v.object_id.clone(),
                    },
                    kind: v.kind.to_string(),
                    detail: v.detail,
                })
                .collect()
        }
        LinkType::Use => {
            let payload = link.use_payload()?;
            match target.exported_signatures() {
                None => vec![LinkViolation {
                    subject: link.target.to_string(),
                    kind: "no_exports".into(),
                    detail: format!("{} artifact exports nothing", target.kind()),
                }],
                Some(exports) => payload
                    .uses
                    .iter()
                    .filter_map(
                        |u| match (element_signature(exports, &u.element), &u.signature) {
                            (None, _) => Some(LinkViolation {
                                subject: u.element.clone(),
                                kind: "missing_element".into(),
                                detail: format!("not exported by {}", link.target),
                            }),
                            (Some(now), Some(then)) if &now != then => Some(LinkViolation {
                                subject: u.element.clone(),
                                kind: "signature_changed".into(),
                                detail: format!("`{then}` became `{now}`"),
                            }),
                            _ => None,
                        },
                    )
                    .collect(),
            }
        }
        _ => unreachable!("declared-only types rejected above"),
    };
    Ok(LinkResult {
        link_id: link.id.clone(),
        holds: violations.is_empty(),
        violations,
    })
}

/// Whether every `link_type` link between `s1` and `s2` holds in `ctx`.
pub fn consistency(
    ctx: &CompositeSlice,
    s1: &SliceRef,
    s2: &SliceRef,
    link_type: LinkType,
    links: &[CrossLink],
) -> Result<ConsistencyResult, CoevolutionError> {
    if link_type.evaluator().is_none() {
        return Err(CoevolutionError::NoEvaluator(link_type));
    }
    let results = links
        .iter()
        .filter(|l| l.link_type == link_type && l.connects(s1, s2))
        .map(|l| evaluate_link(ctx, l))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ConsistencyResult::from_results(results))
}

fn consistency_in(
    universe: &Universe,
    s1: &SliceRef,
    s2: &SliceRef,
    link_type: LinkType,
    links: &[CrossLink],
) -> Result<ConsistencyResult, CoevolutionError> {
    let ctx = compose(universe, &[s1.clone(), s2.clone()])?;
    consistency(&ctx, s1, s2, link_type, links)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TransitionPath {
    pub from: String,
    pub to: String,
    pub path: Vec<String>,
}

/// One op of the target's evolution, judged against the link's source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerCause {
    pub link_id: String,
    pub op_index: usize,
    pub op: DeltaOp,
    pub impact: ImpactClass,
    pub affected: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TriggerReport {
    pub link_type: LinkType,
    pub links: Vec<String>,
    pub source: SliceRef,
    pub target_before: SliceRef,
    pub target_after: SliceRef,
    pub transition: TransitionPath,
    pub consistent_before: bool,
    pub consistent_after: bool,
    pub triggered: bool,
    pub causes: Vec<TriggerCause>,
    pub after: ConsistencyResult,
}

impl TriggerReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for TriggerReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} links [{}] between {} and {}",
            self.link_type,
            self.links.join(", "),
            self.source,
            self.target_before
        )?;
        writeln!(
            f,
            "transition {} -> {} via {}",
            self.transition.from,
            self.transition.to,
            self.transition.path.join(" -> ")
        )?;
        writeln!(
            f,
            "consistent before: {}, after: {}",
            self.consistent_before, self.consistent_after
        )?;
        if self.triggered {
            writeln!(f, "TRIGGERED: {} must co-evolve", self.source)?;
        } else {
            writeln!(f, "not triggered")?;
        }
        for r in self.after.per_link.iter().filter(|r| !r.holds) {
            for v in &r.violations {
                writeln!(f, "  [{}] {v}", r.link_id)?;
            }
        }
        for c in &self.causes {
            write!(
                f,
                "  cause [{}] #{} {} ({})",
                c.link_id, c.op_index, c.op, c.impact
            )?;
            if !c.affected.is_empty() {
                write!(f, " affects {}", c.affected.join(", "))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Evolution of a link target along `before ->* after`, as a delta over the
/// exported elements.
fn target_delta(
    universe: &Universe,
    target: &ArtifactRef,
    after: &SliceRef,
) -> Result<Option<(Metamodel, Delta)>, CoevolutionError> {
    let mv = universe
        .get(&target.multiverse)
        .ok_or_else(|| GraphError::UnknownMultiverse(target.multiverse.clone()))?;
    let old = mv.slice(&target.version)?.artifact(&target.artifact);
    let new = mv.slice(&after.version)?.artifact(&target.artifact);
    match (old, new) {
        (Some(Artifact::Metamodel(a)), Some(Artifact::Metamodel(_))) => Ok(Some((
            a.clone(),
            mv.delta_along(&target.version, &after.version, &target.artifact)?,
        ))),
        (Some(a), Some(b)) => match (a.exported_signatures(), b.exported_signatures()) {
            (Some(x), Some(y)) => Ok(Some((
                x.clone(),
                Delta::between(&target.version, &after.version, x, y, None)?,
            ))),
            _ => Ok(None),
        },
        _ => Ok(None),
    }
}

/// Checks whether evolving the target slice `s2 ->* s2_after` breaks
/// previously consistent links from `s1`.
pub fn detect_trigger(
    universe: &Universe,
    links: &[CrossLink],
    link_type: LinkType,
    s1: &SliceRef,
    s2: &SliceRef,
    s2_after: &SliceRef,
) -> Result<TriggerReport, CoevolutionError> {
    if s2.multiverse != s2_after.multiverse {
        return Err(CoevolutionError::NotSameMultiverse(
            s2.to_string(),
            s2_after.to_string(),
        ));
    }
    let mv = universe
        .get(&s2.multiverse)
        .ok_or_else(|| GraphError::UnknownMultiverse(s2.multiverse.clone()))?;
    let path: Vec<String> = mv
        .path(&s2.version, &s2_after.version)?
        .into_iter()
        .map(str::to_string)
        .collect();

    let selected: Vec<&CrossLink> = links
        .iter()
        .filter(|l| l.link_type == link_type && l.connects(s1, s2))
        .collect();
    let rebound: Vec<CrossLink> = selected
        .iter()
        .map(|l| {
            let mut r = (*l).clone();
            for end in [&mut r.source, &mut r.target] {
                if end.slice() == *s2 {
                    end.version = s2_after.version.clone();
                }
            }
            r
        })
        .collect();

    let before = consistency_in(universe, s1, s2, link_type, links)?;
    let after = consistency_in(universe, s1, s2_after, link_type, &rebound)?;

    let before_ctx = compose(universe, &[s1.clone(), s2.clone()])?;
    let mut causes = Vec::new();
    for link in &selected {
        let (dependent, target) = if link.target.slice() == *s2 {
            (&link.source, &link.target)
        } else {
            (&link.target, &link.source)
        };
        let Some((mm, delta)) = target_delta(universe, target, s2_after)? else {
            continue;
        };
        let instances = before_ctx
            .artifact(dependent)
            .and_then(Artifact::as_model)
            .filter(|m| check_conformance(m, &mm).holds);
        let judged: Vec<(ImpactClass, Vec<String>)> = match instances {
            Some(model) => crate::migration::impact_sequence(model, &mm, &delta)?,
            None => classify_delta(&mm, &delta, None)?
                .into_iter()
                .map(|i| (i, Vec::new()))
                .collect(),
        };
        for (op_index, (op, (impact, affected))) in delta.ops.iter().zip(judged).enumerate() {
            causes.push(TriggerCause {
                link_id: link.id.clone(),
                op_index,
                op: op.clone(),
                impact,
                affected,
            });
        }
    }

    let mut ids: Vec<String> = selected.iter().map(|l| l.id.clone()).collect();
    ids.sort();
    Ok(TriggerReport {
        link_type,
        links: ids,
        source: s1.clone(),
        target_before: s2.clone(),
        target_after: s2_after.clone(),
        transition: TransitionPath {
            from: s2.version.clone(),
            to: s2_after.version.clone(),
            path,
        },
        consistent_before: before.holds,
        consistent_after: after.holds,
        triggered: before.holds && !after.holds,
        causes,
        after,
    })
}

/// Rebinds `links` of `link_type` running from `s1_after`'s multiverse to
/// `s2_after`'s multiverse onto those two slices and checks them. Each
/// original link id is rebound once.
pub fn restore_consistency_check(
    universe: &Universe,
    links: &[CrossLink],
    link_type: LinkType,
    s1_after: &SliceRef,
    s2_after: &SliceRef,
) -> Result<ConsistencyResult, CoevolutionError> {
    let mut seen = BTreeMap::new();
    for l in links.iter().filter(|l| {
        l.link_type == link_type
            && l.source.multiverse == s1_after.multiverse
            && l.target.multiverse == s2_after.multiverse
    }) {
        let base = l.id.split('@').next().unwrap_or(&l.id).to_string();
        seen.entry(base)
            .or_insert_with(|| l.rebind(&s1_after.version, &s2_after.version));
    }
    let rebound: Vec<CrossLink> = seen.into_values().collect();
    consistency_in(universe, s1_after, s2_after, link_type, &rebound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::graph::{Blob, Multiverse, Slice};

    fn slice(version: &str, name: &str, a: Artifact) -> Slice {
        Slice::new(version, [(name.to_string(), a)].into(), vec![]).unwrap()
    }

    fn universe() -> Universe {
        let mm = Multiverse::new("MM").unwrap();
        let mm = mm
            .add_slice(
                slice("1.0", "mm", Artifact::Metamodel(fixtures::mm_v1())),
                &[],
                "",
                None,
            )
            .unwrap();
        let mut only_add = fixtures::mm_v1().classes().cloned().collect::<Vec<_>>();
        only_add.push(crate::model::MetaClass::new("Extra"));
        let v1p = Metamodel::new("MM", only_add).unwrap();
        let mm = mm
            .add_slice(
                slice("1.1", "mm", Artifact::Metamodel(v1p)),
                &["1.0".into()],
                "",
                None,
            )
            .unwrap();
        let mm = mm
            .add_slice(
                slice("2.0", "mm", Artifact::Metamodel(fixtures::mm_v2())),
                &["1.0".into()],
                "",
                Some(&fixtures::merge_hints()),
            )
            .unwrap();
        let my = Multiverse::new("MyModel").unwrap();
        let my = my
            .add_slice(
                slice("7.2", "model", Artifact::Model(fixtures::converter())),
                &[],
                "",
                None,
            )
            .unwrap();
        [("MM".into(), mm), ("MyModel".into(), my)].into()
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

    fn s(r: &str) -> SliceRef {
        r.parse().unwrap()
    }

    #[test]
    fn conformance_consistency() {
        let u = universe();
        let ok = consistency_in(
            &u,
            &s("MyModel@7.2"),
            &s("MM@1.0"),
            LinkType::Conformance,
            &[chi()],
        )
        .unwrap();
        assert!(ok.holds);
        let rebound = chi().rebind("7.2", "2.0");
        let bad = consistency_in(
            &u,
            &s("MyModel@7.2"),
            &s("MM@2.0"),
            LinkType::Conformance,
            &[rebound],
        )
        .unwrap();
        assert!(!bad.holds);
        assert!(bad.per_link[0]
            .violations
            .iter()
            .any(|v| v.kind == "unknown_feature" && v.subject == "converter.inPorts"));
        let empty = consistency_in(
            &u,
            &s("MyModel@7.2"),
            &s("MM@2.0"),
            LinkType::Conformance,
            &[],
        )
        .unwrap();
        assert!(empty.holds);
    }

    #[test]
    fn declared_only_types_have_no_evaluator() {
        let u = universe();
        for t in [
            LinkType::Implementation,
            LinkType::Refinement,
            LinkType::Binding,
        ] {
            let err = consistency_in(&u, &s("MyModel@7.2"), &s("MM@1.0"), t, &[]).unwrap_err();
            assert!(err.to_string().contains("no evaluator"));
        }
    }

    #[test]
    fn dangling_artifact_is_an_error() {
        let u = universe();
        let mut l = chi();
        l.target.artifact = "nope".into();
        let err = consistency_in(
            &u,
            &s("MyModel@7.2"),
            &s("MM@1.0"),
            LinkType::Conformance,
            &[l],
        )
        .unwrap_err();
        assert!(matches!(err, CoevolutionError::DanglingArtifact { .. }));
    }

    #[test]
    fn trigger_on_merge() {
        let u = universe();
        let r = detect_trigger(
            &u,
            &[chi()],
            LinkType::Conformance,
            &s("MyModel@7.2"),
            &s("MM@1.0"),
            &s("MM@2.0"),
        )
        .unwrap();
        assert!(r.consistent_before);
        assert!(!r.consistent_after);
        assert!(r.triggered);
        assert_eq!(r.causes.len(), 1);
        assert_eq!(r.causes[0].op.variant(), "MergeFeatures");
        assert_eq!(r.causes[0].impact, ImpactClass::BreakingUnresolvable);
        assert_eq!(r.causes[0].affected, ["converter"]);
        assert!(r.to_string().contains("TRIGGERED"));
    }

    #[test]
    fn no_trigger_on_added_class() {
        let u = universe();
        let r = detect_trigger(
            &u,
            &[chi()],
            LinkType::Conformance,
            &s("MyModel@7.2"),
            &s("MM@1.0"),
            &s("MM@1.1"),
        )
        .unwrap();
        assert!(r.consistent_after);
        assert!(!r.triggered);
        assert_eq!(r.causes[0].impact, ImpactClass::NonBreaking);
    }

    #[test]
    fn no_trigger_when_already_inconsistent() {
        let u = universe();
        let mut l = chi();
        l.target.version = "2.0".into();
        let r = detect_trigger(
            &u,
            &[l],
            LinkType::Conformance,
            &s("MyModel@7.2"),
            &s("MM@2.0"),
            &s("MM@2.0"),
        )
        .unwrap();
        assert!(!r.consistent_before);
        assert!(!r.triggered);
        assert!(matches!(
            detect_trigger(
                &u,
                &[chi()],
                LinkType::Conformance,
                &s("MyModel@7.2"),
                &s("MM@2.0"),
                &s("MM@1.0")
            ),
            Err(CoevolutionError::Graph(GraphError::NoPath { .. }))
        ));
    }

    #[test]
    fn restore_after_migration() {
        let mut u = universe();
        let decisions = DecisionFile::from_json(
            r#"{"decisions":[{"kind":"select_links","objectId":"converter","feature":"ports","keep":["in1","out1"]}]}"#,
        )
        .unwrap();
        let m = migrate(
            &fixtures::converter(),
            &fixtures::mm_v1(),
            &fixtures::delta_v1_v2(),
            &decisions,
        )
        .unwrap();
        let my = u["MyModel"]
            .add_slice(
                slice("8.0", "model", Artifact::Model(m.migrated)),
                &["7.2".into()],
                "",
                None,
            )
            .unwrap();
        u.insert("MyModel".into(), my);
        let ok = restore_consistency_check(
            &u,
            &[chi()],
            LinkType::Conformance,
            &s("MyModel@8.0"),
            &s("MM@2.0"),
        )
        .unwrap();
        assert!(ok.holds);
        assert_eq!(ok.per_link[0].link_id, "chi@8.0");
        let skipped = restore_consistency_check(
            &u,
            &[chi()],
            LinkType::Conformance,
            &s("MyModel@7.2"),
            &s("MM@2.0"),
        )
        .unwrap();
        assert!(!skipped.holds);
        let none = restore_consistency_check(
            &u,
            &[],
            LinkType::Conformance,
            &s("MyModel@8.0"),
            &s("MM@2.0"),
        )
        .unwrap();
        assert!(none.holds);
    }

    fn exports(names: &[&str]) -> Metamodel {
        Metamodel::new(
            "Lib",
            names
                .iter()
                .map(|n| crate::model::MetaClass::new(n))
                .collect(),
        )
        .unwrap()
    }

    fn lib_blob(names: &[&str]) -> Artifact {
        Artifact::Blob(Blob {
            file_name: "lib.jar".into(),
            bytes: b"opaque".to_vec(),
            exports: Some(exports(names)),
        })
    }

    #[test]
    fn use_link_cots() {
        let lib = Multiverse::new("Lib").unwrap();
        let lib = lib
            .add_slice(slice("1", "lib", lib_blob(&["A", "B", "C"])), &[], "", None)
            .unwrap();
        let lib = lib
            .add_slice(
                slice("2", "lib", lib_blob(&["A", "B", "C", "D"])),
                &["1".into()],
                "",
                None,
            )
            .unwrap();
        let lib = lib
            .add_slice(
                slice("3", "lib", lib_blob(&["A", "B", "Z"])),
                &["2".into()],
                "",
                None,
            )
            .unwrap();
        let app = Multiverse::new("App").unwrap();
        let app = app
            .add_slice(
                slice("1", "code", Artifact::Model(fixtures::event_logger())),
                &[],
                "",
                None,
            )
            .unwrap();
        let u: Universe = [("Lib".into(), lib), ("App".into(), app)].into();
        let payload = UsePayload::capture(
            &["A".into(), "B".into(), "C".into()],
            &exports(&["A", "B", "C"]),
        )
        .unwrap();
        let link = CrossLink {
            id: "uses".into(),
            link_type: LinkType::Use,
            source: "App@1:code".parse().unwrap(),
            target: "Lib@1:lib".parse().unwrap(),
            payload: Some(payload.to_value()),
        };
        link.validate().unwrap();
        let r = detect_trigger(
            &u,
            std::slice::from_ref(&link),
            LinkType::Use,
            &s("App@1"),
            &s("Lib@1"),
            &s("Lib@2"),
        )
        .unwrap();
        assert!(r.consistent_before && r.consistent_after && !r.triggered);
        let r = detect_trigger(
            &u,
            &[link],
            LinkType::Use,
            &s("App@1"),
            &s("Lib@1"),
            &s("Lib@3"),
        )
        .unwrap();
        assert!(r.triggered);
        assert_eq!(r.after.per_link[0].violations[0].subject, "C");
        assert!(!r.causes.is_empty());
    }

    #[test]
    fn use_signature_change_is_detected() {
        let before = fixtures::mm_v1();
        let payload =
            UsePayload::capture(&["Service.name".into(), "Port".into()], &before).unwrap();
        let after = crate::delta::apply_delta(
            &before,
            &Delta::new(
                "a",
                "b",
                vec![DeltaOp::ChangeMultiplicity {
                    class: "Port".into(),
                    feature: "name".into(),
                    lower: 0,
                    upper: crate::model::Upper::Bounded(1),
                }],
            ),
        )
        .unwrap();
        let sig = element_signature(&after, "Port.name").unwrap();
        assert_ne!(Some(sig), element_signature(&before, "Port.name"));
        assert_eq!(
            payload.uses[1].signature.as_deref(),
            Some("abstract class Port")
        );
    }

    #[test]
    fn link_validation_and_registry_json() {
        let mut bad = chi();
        bad.target.multiverse = "MyModel".into();
        assert!(matches!(
            bad.validate(),
            Err(CoevolutionError::SameMultiverse(_))
        ));
        let reg = LinksRegistry::new(vec![chi()]).unwrap();
        let text = reg.to_json();
        assert!(text.contains("\"type\": \"conformance\""));
        assert_eq!(LinksRegistry::from_json(&text).unwrap(), reg);
        assert!(LinksRegistry::new(vec![chi(), chi()]).is_err());
        assert_eq!("use".parse::<LinkType>().unwrap(), LinkType::Use);
    }
}
