//! Model migration across a metamodel delta.
//!
//! The engine replays a [`Delta`] op by op on both the metamodel and a working
//! copy of the model. Ops that cannot be migrated mechanically raise a
//! [`DecisionRequest`]; planning answers those provisionally, migration reads
//! the answers from a [`DecisionFile`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delta::{apply_op, classify_static, Delta, DeltaError, DeltaOp, ImpactClass};
use crate::model::{
    check_conformance, ConformanceReport, ConformsTo, FeatureKind, MetaClass, Metamodel,
    ModelInstance, Primitive, Upper, Value,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MigrationError {
    #[error("input model does not conform to the source metamodel ({} violation(s))", .0.violations.len())]
    NonConformingInput(ConformanceReport),
    #[error(transparent)]
    Delta(#[from] DeltaError),
    #[error("missing decision: {0}")]
    MissingDecision(String),
    #[error("decision answers no request: {0}")]
    ExtraDecision(String),
    #[error("invalid decision for {request}: {reason}")]
    InvalidDecision { request: String, reason: String },
    #[error("unresolvable: {0}")]
    Unresolvable(String),
    #[error("migrated model does not conform to the target metamodel ({} violation(s))", .0.violations.len())]
    NonConformingResult(ConformanceReport),
    #[error("malformed decision file at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

/// Something a human has to settle before migration can proceed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionRequest {
    /// Choose which links of a slot survive.
    SelectLinks {
        #[serde(rename = "opIndex")]
        op_index: usize,
        #[serde(rename = "objectId")]
        object_id: String,
        feature: String,
        candidates: Vec<String>,
        min: u32,
        max: Upper,
    },
    /// Supply a value for a newly required attribute.
    DefaultValue {
        #[serde(rename = "opIndex")]
        op_index: usize,
        #[serde(rename = "className")]
        class_name: String,
        feature: String,
        #[serde(rename = "valueType")]
        value_type: String,
        affected: Vec<String>,
    },
    /// No decision kind can fix this; the model has to be edited by hand.
    Blocked {
        #[serde(rename = "opIndex")]
        op_index: usize,
        #[serde(rename = "objectId")]
        object_id: String,
        feature: String,
        reason: String,
    },
}

impl DecisionRequest {
    pub fn op_index(&self) -> usize {
        match self {
            DecisionRequest::SelectLinks { op_index, .. }
            | DecisionRequest::DefaultValue { op_index, .. }
            | DecisionRequest::Blocked { op_index, .. } => *op_index,
        }
    }

    /// Human-readable constraint, e.g. `select ≤ 2`.
    pub fn constraint(&self) -> String {
        match self {
            DecisionRequest::SelectLinks { min, max, .. } => match (min, max) {
                (0, Upper::Bounded(u)) => format!("select ≤ {u}"),
                (l, Upper::Bounded(u)) => format!("select {l}..{u}"),
                (l, Upper::Unbounded) => format!("select ≥ {l}"),
            },
            DecisionRequest::DefaultValue { value_type, .. } => format!("provide a {value_type}"),
            DecisionRequest::Blocked { .. } => "manual model edit".to_string(),
        }
    }

    fn key(&self) -> DecisionKey {
        match self {
            DecisionRequest::SelectLinks {
                object_id, feature, ..
            }
            | DecisionRequest::Blocked {
                object_id, feature, ..
            } => DecisionKey::Select(object_id.clone(), feature.clone()),
            DecisionRequest::DefaultValue {
                class_name,
                feature,
                ..
            } => DecisionKey::Default(class_name.clone(), feature.clone()),
        }
    }
}

impl fmt::Display for DecisionRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecisionRequest::SelectLinks {
                object_id,
                feature,
                candidates,
                ..
            } => write!(
                f,
                "{object_id}.{feature}: {} from [{}]",
                self.constraint(),
                candidates.join(", ")
            ),
            DecisionRequest::DefaultValue {
                class_name,
                feature,
                affected,
                ..
            } => write!(
                f,
                "{class_name}.{feature}: {} for [{}]",
                self.constraint(),
                affected.join(", ")
            ),
            DecisionRequest::Blocked {
                object_id,
                feature,
                reason,
                ..
            } => write!(f, "{object_id}.{feature}: blocked, {reason}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum DecisionKey {
    Select(String, String),
    Default(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Decision {
    SelectLinks {
        #[serde(rename = "objectId")]
        object_id: String,
        feature: String,
        keep: Vec<String>,
    },
    DefaultValue {
        #[serde(rename = "className")]
        class_name: String,
        feature: String,
        value: Value,
    },
}

impl Decision {
    fn key(&self) -> DecisionKey {
        match self {
            Decision::SelectLinks {
                object_id, feature, ..
            } => DecisionKey::Select(object_id.clone(), feature.clone()),
            Decision::DefaultValue {
                class_name,
                feature,
                ..
            } => DecisionKey::Default(class_name.clone(), feature.clone()),
        }
    }

    fn describe(&self) -> String {
        match self {
            Decision::SelectLinks {
                object_id, feature, ..
            } => format!("select_links {object_id}.{feature}"),
            Decision::DefaultValue {
                class_name,
                feature,
                ..
            } => format!("default_value {class_name}.{feature}"),
        }
    }
}

/// Declarative answers to a plan's decision requests.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionFile {
    #[serde(default)]
    pub decisions: Vec<Decision>,
}

impl DecisionFile {
    pub fn from_json(text: &str) -> Result<Self, MigrationError> {
        serde_json::from_str(text).map_err(|e| MigrationError::Json {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Whether some decision answers `request`.
    pub fn answers(&self, request: &DecisionRequest) -> bool {
        self.decisions.iter().any(|d| d.key() == request.key())
    }

    /// Answers every request the way planning does: keep the first candidates,
    /// use zero values. Blocked requests get no answer.
    pub fn provisional(plan: &MigrationPlan) -> DecisionFile {
        let decisions = plan
            .required_decisions
            .iter()
            .filter_map(|r| match r {
                DecisionRequest::SelectLinks {
                    object_id,
                    feature,
                    candidates,
                    max,
                    ..
                } => Some(Decision::SelectLinks {
                    object_id: object_id.clone(),
                    feature: feature.clone(),
                    keep: first_candidates(candidates, *max),
                }),
                DecisionRequest::DefaultValue {
                    class_name,
                    feature,
                    value_type,
                    ..
                } => Some(Decision::DefaultValue {
                    class_name: class_name.clone(),
                    feature: feature.clone(),
                    value: zero_value(value_type.parse().unwrap_or(Primitive::String)),
                }),
                DecisionRequest::Blocked { .. } => None,
            })
            .collect();
        DecisionFile { decisions }
    }
}

fn first_candidates(candidates: &[String], max: Upper) -> Vec<String> {
    match max {
        Upper::Bounded(u) => candidates.iter().take(u as usize).cloned().collect(),
        Upper::Unbounded => candidates.to_vec(),
    }
}

fn zero_value(p: Primitive) -> Value {
    match p {
        Primitive::String => Value::Str(String::new()),
        Primitive::Int => Value::Int(0),
        Primitive::Bool => Value::Bool(false),
    }
}

/// A mechanically migrated op.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AutoStep {
    pub op_index: usize,
    pub op: DeltaOp,
    pub impact: ImpactClass,
    pub affected: Vec<String>,
    pub resolution: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MigrationPlan {
    pub auto_steps: Vec<AutoStep>,
    pub required_decisions: Vec<DecisionRequest>,
}

impl MigrationPlan {
    pub fn is_automatic(&self) -> bool {
        self.required_decisions.is_empty()
    }

    pub fn is_blocked(&self) -> bool {
        self.required_decisions
            .iter()
            .any(|r| matches!(r, DecisionRequest::Blocked { .. }))
    }
}

/// Result of a successful migration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Migration {
    pub migrated: ModelInstance,
    /// old object id -> new object id, total on surviving objects.
    pub correspondence: BTreeMap<String, String>,
    /// Objects an op rewrote or that lost links to removed objects.
    pub touched: BTreeSet<String>,
}

impl Migration {
    /// The migrated counterpart of `old_id`, if it survived.
    pub fn migrated(&self, old_id: &str) -> Option<&str> {
        self.correspondence.get(old_id).map(String::as_str)
    }
}

trait Resolver {
    fn select(&mut self, request: &DecisionRequest) -> Result<Vec<String>, MigrationError>;
    fn default_value(&mut self, request: &DecisionRequest) -> Result<Value, MigrationError>;
    fn blocked(&mut self, request: &DecisionRequest) -> Result<(), MigrationError>;
}

struct Provisional;

impl Resolver for Provisional {
    fn select(&mut self, request: &DecisionRequest) -> Result<Vec<String>, MigrationError> {
        match request {
            DecisionRequest::SelectLinks {
                candidates, max, ..
            } => Ok(first_candidates(candidates, *max)),
            _ => unreachable!("select on a non-select request"),
        }
    }

    fn default_value(&mut self, request: &DecisionRequest) -> Result<Value, MigrationError> {
        match request {
            DecisionRequest::DefaultValue { value_type, .. } => {
                Ok(zero_value(value_type.parse().unwrap_or(Primitive::String)))
            }
            _ => unreachable!("default on a non-default request"),
        }
    }

    fn blocked(&mut self, _: &DecisionRequest) -> Result<(), MigrationError> {
        Ok(())
    }
}

struct FromFile {
    decisions: BTreeMap<DecisionKey, Decision>,
    used: BTreeSet<DecisionKey>,
}

impl FromFile {
    fn new(file: &DecisionFile) -> Result<Self, MigrationError> {
        let mut decisions = BTreeMap::new();
        for d in &file.decisions {
            if decisions.insert(d.key(), d.clone()).is_some() {
                return Err(MigrationError::InvalidDecision {
                    request: d.describe(),
                    reason: "answered more than once".into(),
                });
            }
        }
        Ok(FromFile {
            decisions,
            used: BTreeSet::new(),
        })
    }

    fn take(&mut self, request: &DecisionRequest) -> Result<Decision, MigrationError> {
        let key = request.key();
        let d = self
            .decisions
            .get(&key)
            .cloned()
            .ok_or_else(|| MigrationError::MissingDecision(request.to_string()))?;
        self.used.insert(key);
        Ok(d)
    }

    fn unused(&self) -> Option<&Decision> {
        self.decisions
            .iter()
            .find(|(k, _)| !self.used.contains(k))
            .map(|(_, d)| d)
    }
}

impl Resolver for FromFile {
    fn select(&mut self, request: &DecisionRequest) -> Result<Vec<String>, MigrationError> {
        let DecisionRequest::SelectLinks {
            candidates,
            min,
            max,
            ..
        } = request
        else {
            unreachable!("select on a non-select request")
        };
        let invalid = |reason: String| MigrationError::InvalidDecision {
            request: request.to_string(),
            reason,
        };
        let keep = match self.take(request)? {
            Decision::SelectLinks { keep, .. } => keep,
            Decision::DefaultValue { .. } => unreachable!("keyed by object and feature"),
        };
        let distinct: BTreeSet<_> = keep.iter().collect();
        if distinct.len() != keep.len() {
            return Err(invalid("keep list repeats an id".into()));
        }
        if let Some(stray) = keep.iter().find(|k| !candidates.contains(k)) {
            return Err(invalid(format!("`{stray}` is not a candidate")));
        }
        if keep.len() < *min as usize || !max.admits(keep.len()) {
            return Err(invalid(format!(
                "keeps {} link(s), {} required",
                keep.len(),
                request.constraint()
            )));
        }
        // keep-set semantics: candidate order is preserved
        Ok(candidates
            .iter()
            .filter(|c| keep.contains(c))
            .cloned()
            .collect())
    }

    fn default_value(&mut self, request: &DecisionRequest) -> Result<Value, MigrationError> {
        let DecisionRequest::DefaultValue { value_type, .. } = request else {
            unreachable!("default on a non-default request")
        };
        let value = match self.take(request)? {
            Decision::DefaultValue { value, .. } => value,
            Decision::SelectLinks { .. } => unreachable!("keyed by class and feature"),
        };
        let ty: Primitive = value_type.parse().unwrap_or(Primitive::String);
        if !ty.admits(&value) {
            return Err(MigrationError::InvalidDecision {
                request: request.to_string(),
                reason: format!("{value} is not a {value_type}"),
            });
        }
        Ok(value)
    }

    fn blocked(&mut self, request: &DecisionRequest) -> Result<(), MigrationError> {
        Err(MigrationError::Unresolvable(request.to_string()))
    }
}

/// File answers where present, provisional ones elsewhere.
struct Guided(FromFile);

impl Resolver for Guided {
    fn select(&mut self, request: &DecisionRequest) -> Result<Vec<String>, MigrationError> {
        if self.0.decisions.contains_key(&request.key()) {
            self.0.select(request)
        } else {
            Provisional.select(request)
        }
    }

    fn default_value(&mut self, request: &DecisionRequest) -> Result<Value, MigrationError> {
        if self.0.decisions.contains_key(&request.key()) {
            self.0.default_value(request)
        } else {
            Provisional.default_value(request)
        }
    }

    fn blocked(&mut self, _: &DecisionRequest) -> Result<(), MigrationError> {
        Ok(())
    }
}

struct Engine<'r> {
    classes: BTreeMap<String, MetaClass>,
    model: ModelInstance,
    resolver: &'r mut dyn Resolver,
    requests: Vec<DecisionRequest>,
    steps: Vec<AutoStep>,
    impacts: Vec<(ImpactClass, Vec<String>)>,
    touched: BTreeSet<String>,
}

impl<'r> Engine<'r> {
    fn new(mm: &Metamodel, model: &ModelInstance, resolver: &'r mut dyn Resolver) -> Self {
        Engine {
            classes: mm.classes().map(|c| (c.name.clone(), c.clone())).collect(),
            model: model.clone(),
            resolver,
            requests: Vec::new(),
            steps: Vec::new(),
            impacts: Vec::new(),
            touched: BTreeSet::new(),
        }
    }

    fn view(&self) -> Metamodel {
        Metamodel::from_parts_unchecked(String::new(), self.classes.clone())
    }

    fn request(&mut self, request: DecisionRequest) {
        self.requests.push(request);
    }

    /// Objects of `class` or any of its subclasses under `mm`.
    fn instances_of(&self, mm: &Metamodel, class: &str) -> Vec<String> {
        self.model
            .objects()
            .filter(|o| mm.is_subclass(&o.class_name, class))
            .map(|o| o.id.clone())
            .collect()
    }

    /// Removes objects (with their containment subtrees) and checks the lower
    /// bounds of every slot that lost a link as a result.
    fn remove(
        &mut self,
        op_index: usize,
        ids: Vec<String>,
        mm_for_containment: &Metamodel,
    ) -> Result<(), MigrationError> {
        if ids.is_empty() {
            return Ok(());
        }
        let before: BTreeMap<String, BTreeMap<String, usize>> = self
            .model
            .objects()
            .map(|o| {
                let counts = o.links.iter().map(|(k, v)| (k.clone(), v.len())).collect();
                (o.id.clone(), counts)
            })
            .collect();
        let removed = self.model.remove_cascading(mm_for_containment, ids);
        let after = self.view();
        let mut lost = Vec::new();
        for obj in self.model.objects() {
            for (feature, targets) in &obj.links {
                if before[&obj.id].get(feature).copied().unwrap_or(0) != targets.len() {
                    lost.push((
                        obj.id.clone(),
                        obj.class_name.clone(),
                        feature.clone(),
                        targets.len(),
                    ));
                }
            }
        }
        for (id, class, feature, count) in lost {
            self.touched.insert(id.clone());
            if let Some(f) = after.feature(&class, &feature) {
                if count < f.lower as usize {
                    let req = DecisionRequest::Blocked {
                        op_index,
                        object_id: id,
                        feature,
                        reason: format!(
                            "{count} link(s) left after removing {} object(s), at least {} required",
                            removed.len(),
                            f.lower
                        ),
                    };
                    self.request(req.clone());
                    self.resolver.blocked(&req)?;
                }
            }
        }
        self.touched.retain(|id| !removed.contains(id));
        Ok(())
    }

    fn run(&mut self, delta: &Delta) -> Result<(), MigrationError> {
        for (index, op) in delta.ops.iter().enumerate() {
            let before = self.view();
            let requests_before = self.requests.len();
            apply_op(&mut self.classes, index, op)?;
            let after = self.view();
            let affected = self.migrate_op(index, op, &before, &after)?;
            let needs_decision = self.requests.len() > requests_before;
            let base = classify_static(op, &before);
            let impact = match base {
                ImpactClass::NonBreaking => ImpactClass::NonBreaking,
                _ if needs_decision => ImpactClass::BreakingUnresolvable,
                _ => ImpactClass::BreakingResolvable,
            };
            let mut involved = affected.clone();
            for r in &self.requests[requests_before..] {
                match r {
                    DecisionRequest::SelectLinks { object_id, .. }
                    | DecisionRequest::Blocked { object_id, .. } => {
                        involved.push(object_id.clone())
                    }
                    DecisionRequest::DefaultValue { affected, .. } => {
                        involved.extend(affected.iter().cloned())
                    }
                }
            }
            involved.sort();
            involved.dedup();
            self.impacts.push((impact, involved));
            if !needs_decision {
                self.steps.push(AutoStep {
                    op_index: index,
                    op: op.clone(),
                    impact,
                    affected,
                    resolution: resolution_text(op),
                });
            }
        }
        Ok(())
    }

    /// Rewrites the working model for one op and returns the affected ids.
    fn migrate_op(
        &mut self,
        index: usize,
        op: &DeltaOp,
        before: &Metamodel,
        after: &Metamodel,
    ) -> Result<Vec<String>, MigrationError> {
        let affected = match op {
            DeltaOp::AddClass { .. } => Vec::new(),
            DeltaOp::DeleteClass { class } => {
                let ids: Vec<String> = self
                    .model
                    .objects()
                    .filter(|o| &o.class_name == class)
                    .map(|o| o.id.clone())
                    .collect();
                self.remove(index, ids.clone(), before)?;
                ids
            }
            DeltaOp::RenameClass { from, to } => {
                let mut ids = Vec::new();
                for obj in self.model.objects_mut().values_mut() {
                    if &obj.class_name == from {
                        obj.class_name = to.clone();
                        ids.push(obj.id.clone());
                    }
                }
                self.touched.extend(ids.iter().cloned());
                ids
            }
            DeltaOp::AddFeature {
                class,
                feature,
                default_value,
            } => {
                let ids = self.instances_of(after, class);
                if feature.lower == 0 || ids.is_empty() {
                    return Ok(Vec::new());
                }
                self.touched.extend(ids.iter().cloned());
                match feature.kind {
                    FeatureKind::Attribute => {
                        let value = match default_value {
                            Some(v) => v.clone(),
                            None => {
                                let req = DecisionRequest::DefaultValue {
                                    op_index: index,
                                    class_name: class.clone(),
                                    feature: feature.name.clone(),
                                    value_type: feature.value_type.clone(),
                                    affected: ids.clone(),
                                };
                                self.request(req.clone());
                                self.resolver.default_value(&req)?
                            }
                        };
                        for id in &ids {
                            let obj = self.model.objects_mut().get_mut(id).expect("listed above");
                            obj.attribute_values.insert(
                                feature.name.clone(),
                                vec![value.clone(); feature.lower as usize],
                            );
                        }
                    }
                    FeatureKind::Reference => {
                        for id in &ids {
                            let req = DecisionRequest::Blocked {
                                op_index: index,
                                object_id: id.clone(),
                                feature: feature.name.clone(),
                                reason: format!(
                                    "new required reference needs {} target(s)",
                                    feature.lower
                                ),
                            };
                            self.request(req.clone());
                            self.resolver.blocked(&req)?;
                        }
                    }
                }
                ids
            }
            DeltaOp::DeleteFeature { class, feature } => {
                let was_containment = before
                    .class(class)
                    .and_then(|c| c.own_feature(feature))
                    .is_some_and(|f| f.containment);
                let mut ids = Vec::new();
                let mut orphans = Vec::new();
                for id in self.instances_of(before, class) {
                    let obj = self.model.objects_mut().get_mut(&id).expect("listed above");
                    let had_attr = obj.attribute_values.remove(feature).is_some();
                    let links = obj.links.remove(feature);
                    if had_attr || links.is_some() {
                        ids.push(id);
                    }
                    if was_containment {
                        orphans.extend(links.into_iter().flatten());
                    }
                }
                self.touched.extend(ids.iter().cloned());
                self.remove(index, orphans, before)?;
                ids
            }
            DeltaOp::RenameFeature { class, from, to } => {
                let mut ids = Vec::new();
                for id in self.instances_of(before, class) {
                    let obj = self.model.objects_mut().get_mut(&id).expect("listed above");
                    let mut hit = false;
                    if let Some(v) = obj.attribute_values.remove(from) {
                        obj.attribute_values.insert(to.clone(), v);
                        hit = true;
                    }
                    if let Some(v) = obj.links.remove(from) {
                        obj.links.insert(to.clone(), v);
                        hit = true;
                    }
                    if hit {
                        ids.push(id);
                    }
                }
                self.touched.extend(ids.iter().cloned());
                ids
            }
            DeltaOp::ChangeMultiplicity { class, feature, .. } => {
                let f = after
                    .feature(class, feature)
                    .expect("applied above")
                    .clone();
                let mut ids = Vec::new();
                for id in self.instances_of(after, class) {
                    // an earlier selection may have removed it
                    let Some(obj) = self.model.object(&id) else {
                        continue;
                    };
                    let count = obj.slot_len(feature);
                    if f.admits_count(count) {
                        continue;
                    }
                    ids.push(id.clone());
                    self.touched.insert(id.clone());
                    match f.kind {
                        FeatureKind::Reference if count > f.lower as usize => {
                            let candidates = obj.links.get(feature).cloned().unwrap_or_default();
                            self.select(
                                index,
                                &id,
                                feature,
                                candidates,
                                f.lower,
                                f.upper,
                                f.containment,
                                after,
                            )?;
                        }
                        FeatureKind::Attribute if count < f.lower as usize => {
                            self.fill_default(
                                index,
                                class,
                                &f.name,
                                &f.value_type,
                                f.lower,
                                after,
                            )?;
                        }
                        _ => {
                            let req = DecisionRequest::Blocked {
                                op_index: index,
                                object_id: id.clone(),
                                feature: feature.clone(),
                                reason: format!(
                                    "{count} value(s) cannot fit [{}..{}]",
                                    f.lower, f.upper
                                ),
                            };
                            self.request(req.clone());
                            self.resolver.blocked(&req)?;
                        }
                    }
                }
                ids
            }
            DeltaOp::ChangeFeatureType { class, feature, .. } => {
                let f = after
                    .feature(class, feature)
                    .expect("applied above")
                    .clone();
                let mut ids = Vec::new();
                for id in self.instances_of(after, class) {
                    let obj = self.model.object(&id).expect("listed above");
                    let misfits = match f.kind {
                        FeatureKind::Attribute => {
                            let p = f.primitive();
                            obj.attribute_values
                                .get(feature)
                                .into_iter()
                                .flatten()
                                .filter(|v| !p.is_some_and(|p| p.admits(v)))
                                .count()
                        }
                        FeatureKind::Reference => obj
                            .links
                            .get(feature)
                            .into_iter()
                            .flatten()
                            .filter(|t| {
                                !self.model.object(t).is_some_and(|t| {
                                    after.is_subclass(&t.class_name, &f.value_type)
                                })
                            })
                            .count(),
                    };
                    if misfits > 0 {
                        ids.push(id.clone());
                        let req = DecisionRequest::Blocked {
                            op_index: index,
                            object_id: id.clone(),
                            feature: feature.clone(),
                            reason: format!(
                                "{misfits} value(s) do not fit type `{}`",
                                f.value_type
                            ),
                        };
                        self.request(req.clone());
                        self.resolver.blocked(&req)?;
                    }
                }
                ids
            }
            DeltaOp::MergeFeatures {
                class,
                sources,
                target,
            } => {
                let mut ids = Vec::new();
                for id in self.instances_of(before, class) {
                    let Some(obj) = self.model.objects_mut().get_mut(&id) else {
                        continue;
                    };
                    let mut merged = Vec::new();
                    let mut hit = false;
                    for s in sources {
                        if let Some(links) = obj.links.remove(s) {
                            for l in links {
                                if !merged.contains(&l) {
                                    merged.push(l);
                                }
                            }
                            hit = true;
                        }
                    }
                    if !merged.is_empty() {
                        obj.links.insert(target.name.clone(), merged.clone());
                    }
                    if hit {
                        ids.push(id.clone());
                        self.touched.insert(id.clone());
                    }
                    let count = merged.len();
                    if count > target.lower as usize && !target.upper.admits(count) {
                        self.select(
                            index,
                            &id,
                            &target.name,
                            merged,
                            target.lower,
                            target.upper,
                            target.containment,
                            after,
                        )?;
                    } else if count < target.lower as usize {
                        let req = DecisionRequest::Blocked {
                            op_index: index,
                            object_id: id.clone(),
                            feature: target.name.clone(),
                            reason: format!(
                                "{count} merged link(s), at least {} required",
                                target.lower
                            ),
                        };
                        self.request(req.clone());
                        self.resolver.blocked(&req)?;
                    }
                }
                ids
            }
        };
        Ok(affected)
    }

    #[allow(clippy::too_many_arguments)]
    fn select(
        &mut self,
        index: usize,
        object: &str,
        feature: &str,
        candidates: Vec<String>,
        min: u32,
        max: Upper,
        containment: bool,
        mm: &Metamodel,
    ) -> Result<(), MigrationError> {
        let req = DecisionRequest::SelectLinks {
            op_index: index,
            object_id: object.to_string(),
            feature: feature.to_string(),
            candidates: candidates.clone(),
            min,
            max,
        };
        self.request(req.clone());
        let keep = self.resolver.select(&req)?;
        let dropped: Vec<String> = candidates
            .into_iter()
            .filter(|c| !keep.contains(c))
            .collect();
        let obj = self
            .model
            .objects_mut()
            .get_mut(object)
            .expect("selecting on a live object");
        if keep.is_empty() {
            obj.links.remove(feature);
        } else {
            obj.links.insert(feature.to_string(), keep);
        }
        if containment {
            self.remove(index, dropped, mm)?;
        }
        Ok(())
    }

    fn fill_default(
        &mut self,
        index: usize,
        class: &str,
        feature: &str,
        value_type: &str,
        lower: u32,
        mm: &Metamodel,
    ) -> Result<(), MigrationError> {
        let short: Vec<String> = self
            .instances_of(mm, class)
            .into_iter()
            .filter(|id| {
                self.model
                    .object(id)
                    .is_some_and(|o| o.slot_len(feature) < lower as usize)
            })
            .collect();
        // one request per (class, feature); later objects reuse the answer
        if self.requests.iter().any(|r| {
            matches!(r, DecisionRequest::DefaultValue { op_index, class_name, feature: f, .. }
                if *op_index == index && class_name == class && f == feature)
        }) {
            return Ok(());
        }
        let req = DecisionRequest::DefaultValue {
            op_index: index,
            class_name: class.to_string(),
            feature: feature.to_string(),
            value_type: value_type.to_string(),
            affected: short.clone(),
        };
        self.request(req.clone());
        let value = self.resolver.default_value(&req)?;
        for id in short {
            let obj = self.model.objects_mut().get_mut(&id).expect("listed above");
            let slot = obj.attribute_values.entry(feature.to_string()).or_default();
            while slot.len() < lower as usize {
                slot.push(value.clone());
            }
        }
        Ok(())
    }
}

fn resolution_text(op: &DeltaOp) -> String {
    match op {
        DeltaOp::AddClass { .. } => "no instance changes".into(),
        DeltaOp::DeleteClass { class } => format!("remove `{class}` instances and links to them"),
        DeltaOp::RenameClass { from, to } => format!("retag `{from}` instances as `{to}`"),
        DeltaOp::AddFeature { feature, .. } if feature.lower == 0 => "no instance changes".into(),
        DeltaOp::AddFeature { feature, .. } => {
            format!("populate `{}` with the default", feature.name)
        }
        DeltaOp::DeleteFeature { feature, .. } => format!("drop `{feature}` slots"),
        DeltaOp::RenameFeature { from, to, .. } => format!("rename `{from}` slots to `{to}`"),
        DeltaOp::ChangeMultiplicity { .. } => "all slots already within the new bounds".into(),
        DeltaOp::ChangeFeatureType { .. } => "all values already fit the new type".into(),
        DeltaOp::MergeFeatures {
            sources, target, ..
        } => {
            format!(
                "concatenate [{}] into `{}`",
                sources.join(", "),
                target.name
            )
        }
    }
}

fn check_input(model: &ModelInstance, mm: &Metamodel) -> Result<(), MigrationError> {
    let report = check_conformance(model, mm);
    if report.holds {
        Ok(())
    } else {
        Err(MigrationError::NonConformingInput(report))
    }
}

/// Works out which ops migrate automatically and which need a decision.
pub fn plan_migration(
    model: &ModelInstance,
    mm: &Metamodel,
    delta: &Delta,
) -> Result<MigrationPlan, MigrationError> {
    check_input(model, mm)?;
    let mut resolver = Provisional;
    let mut engine = Engine::new(mm, model, &mut resolver);
    engine.run(delta)?;
    Ok(MigrationPlan {
        auto_steps: engine.steps,
        required_decisions: engine.requests,
    })
}

/// Like [`plan_migration`], but requests already answered in `answers` are
/// resolved with those answers. Later requests can depend on earlier answers,
/// so a decision file is best built by answering the first open request and
/// planning again.
pub fn plan_migration_with(
    model: &ModelInstance,
    mm: &Metamodel,
    delta: &Delta,
    answers: &DecisionFile,
) -> Result<MigrationPlan, MigrationError> {
    check_input(model, mm)?;
    let mut resolver = Guided(FromFile::new(answers)?);
    let mut engine = Engine::new(mm, model, &mut resolver);
    engine.run(delta)?;
    Ok(MigrationPlan {
        auto_steps: engine.steps,
        required_decisions: engine.requests,
    })
}

/// Migrates `model` across `delta`, consuming exactly the decisions the
/// migration asks for.
pub fn migrate(
    model: &ModelInstance,
    mm: &Metamodel,
    delta: &Delta,
    decisions: &DecisionFile,
) -> Result<Migration, MigrationError> {
    check_input(model, mm)?;
    let mut resolver = FromFile::new(decisions)?;
    let mut engine = Engine::new(mm, model, &mut resolver);
    engine.run(delta)?;
    let Engine {
        classes,
        model: mut migrated,
        touched,
        ..
    } = engine;
    if let Some(extra) = resolver.unused() {
        return Err(MigrationError::ExtraDecision(extra.describe()));
    }
    migrated.set_conforms_to(ConformsTo {
        multiverse: model.conforms_to().multiverse.clone(),
        version: delta.to.clone(),
    });
    let target = Metamodel::from_parts_unchecked(mm.name().to_string(), classes);
    target.validate().map_err(DeltaError::InvalidResult)?;
    let report = check_conformance(&migrated, &target);
    if !report.holds {
        return Err(MigrationError::NonConformingResult(report));
    }
    let correspondence = migrated
        .objects()
        .map(|o| (o.id.clone(), o.id.clone()))
        .collect();
    Ok(Migration {
        migrated,
        correspondence,
        touched,
    })
}

/// Whether migrating `model` across `op` alone raises any decision request.
pub(crate) fn op_needs_decision(model: &ModelInstance, before: &Metamodel, op: &DeltaOp) -> bool {
    let mut resolver = Provisional;
    let mut engine = Engine::new(before, model, &mut resolver);
    let delta = Delta::new("", "", vec![op.clone()]);
    match engine.run(&delta) {
        Ok(()) => !engine.requests.is_empty(),
        Err(_) => true,
    }
}

pub(crate) fn classify_sequence(
    model: &ModelInstance,
    mm: &Metamodel,
    delta: &Delta,
) -> Result<Vec<ImpactClass>, DeltaError> {
    Ok(impact_sequence(model, mm, delta)?
        .into_iter()
        .map(|(i, _)| i)
        .collect())
}

/// Per-op impact with the objects each op touches or asks about.
pub(crate) fn impact_sequence(
    model: &ModelInstance,
    mm: &Metamodel,
    delta: &Delta,
) -> Result<Vec<(ImpactClass, Vec<String>)>, DeltaError> {
    let mut resolver = Provisional;
    let mut engine = Engine::new(mm, model, &mut resolver);
    match engine.run(delta) {
        Ok(()) => Ok(engine.impacts),
        Err(MigrationError::Delta(e)) => Err(e),
        Err(other) => unreachable!("provisional resolution never fails: {other}"),
    }
}
