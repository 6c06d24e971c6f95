//! Operation-based deltas between metamodel versions.
//!
//! A [`Delta`] is an ordered list of [`DeltaOp`]s. [`diff_metamodel`] computes
//! one from two metamodels (optionally guided by rename/merge hints),
//! [`apply_delta`] replays it, and [`classify`] rates each op's impact on
//! existing models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Feature, FeatureKind, MetaClass, Metamodel, ModelError, ModelInstance, Upper, Value,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DeltaError {
    #[error("op {index} ({op}): {reason}")]
    Op {
        index: usize,
        op: String,
        reason: String,
    },
    #[error("delta result is not a valid metamodel: {0}")]
    InvalidResult(ModelError),
    #[error("inconsistent hints: {0}")]
    InconsistentHints(String),
    #[error("malformed delta JSON at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
}

impl DeltaError {
    fn json(err: serde_json::Error) -> Self {
        DeltaError::Json {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

/// One edit operation on a metamodel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "op", deny_unknown_fields)]
pub enum DeltaOp {
    AddClass {
        class: MetaClass,
    },
    DeleteClass {
        class: String,
    },
    RenameClass {
        from: String,
        to: String,
    },
    AddFeature {
        class: String,
        feature: Feature,
        #[serde(
            rename = "defaultValue",
            default,
            skip_serializing_if = "Option::is_none"
        )]
        default_value: Option<Value>,
    },
    DeleteFeature {
        class: String,
        feature: String,
    },
    RenameFeature {
        class: String,
        from: String,
        to: String,
    },
    ChangeMultiplicity {
        class: String,
        feature: String,
        lower: u32,
        upper: Upper,
    },
    ChangeFeatureType {
        class: String,
        feature: String,
        #[serde(rename = "valueType")]
        value_type: String,
    },
    MergeFeatures {
        class: String,
        sources: Vec<String>,
        target: Feature,
    },
}

impl DeltaOp {
    pub fn variant(&self) -> &'static str {
        match self {
            DeltaOp::AddClass { .. } => "AddClass",
            DeltaOp::DeleteClass { .. } => "DeleteClass",
            DeltaOp::RenameClass { .. } => "RenameClass",
            DeltaOp::AddFeature { .. } => "AddFeature",
            DeltaOp::DeleteFeature { .. } => "DeleteFeature",
            DeltaOp::RenameFeature { .. } => "RenameFeature",
            DeltaOp::ChangeMultiplicity { .. } => "ChangeMultiplicity",
            DeltaOp::ChangeFeatureType { .. } => "ChangeFeatureType",
            DeltaOp::MergeFeatures { .. } => "MergeFeatures",
        }
    }

    /// The class the op acts on (the old name for renames).
    pub fn class(&self) -> &str {
        match self {
            DeltaOp::AddClass { class } => &class.name,
            DeltaOp::DeleteClass { class } => class,
            DeltaOp::RenameClass { from, .. } => from,
            DeltaOp::AddFeature { class, .. }
            | DeltaOp::DeleteFeature { class, .. }
            | DeltaOp::RenameFeature { class, .. }
            | DeltaOp::ChangeMultiplicity { class, .. }
            | DeltaOp::ChangeFeatureType { class, .. }
            | DeltaOp::MergeFeatures { class, .. } => class,
        }
    }

    /// Canonical position: class ops before feature ops, then by variant, then by name.
    fn sort_key(&self) -> (u8, String, String) {
        let (rank, feature) = match self {
            DeltaOp::DeleteClass { .. } => (0, String::new()),
            DeltaOp::RenameClass { .. } => (1, String::new()),
            DeltaOp::AddClass { .. } => (2, String::new()),
            DeltaOp::MergeFeatures { target, .. } => (3, target.name.clone()),
            DeltaOp::DeleteFeature { feature, .. } => (4, feature.clone()),
            DeltaOp::RenameFeature { from, .. } => (5, from.clone()),
            DeltaOp::AddFeature { feature, .. } => (6, feature.name.clone()),
            DeltaOp::ChangeMultiplicity { feature, .. } => (7, feature.clone()),
            DeltaOp::ChangeFeatureType { feature, .. } => (8, feature.clone()),
        };
        (rank, self.class().to_string(), feature)
    }
}

impl fmt::Display for DeltaOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeltaOp::AddClass { class } => write!(f, "AddClass({})", class.name),
            DeltaOp::DeleteClass { class } => write!(f, "DeleteClass({class})"),
            DeltaOp::RenameClass { from, to } => write!(f, "RenameClass({from} -> {to})"),
            DeltaOp::AddFeature {
                class,
                feature,
                default_value,
            } => match default_value {
                Some(v) => write!(f, "AddFeature({class}.{feature} = {v})"),
                None => write!(f, "AddFeature({class}.{feature})"),
            },
            DeltaOp::DeleteFeature { class, feature } => {
                write!(f, "DeleteFeature({class}.{feature})")
            }
            DeltaOp::RenameFeature { class, from, to } => {
                write!(f, "RenameFeature({class}.{from} -> {to})")
            }
            DeltaOp::ChangeMultiplicity {
                class,
                feature,
                lower,
                upper,
            } => write!(
                f,
                "ChangeMultiplicity({class}.{feature} -> [{lower}..{upper}])"
            ),
            DeltaOp::ChangeFeatureType {
                class,
                feature,
                value_type,
            } => write!(f, "ChangeFeatureType({class}.{feature} -> {value_type})"),
            DeltaOp::MergeFeatures {
                class,
                sources,
                target,
            } => write!(
                f,
                "MergeFeatures({class}, [{}] -> {target})",
                sources.join(", ")
            ),
        }
    }
}

/// Ordered edit script from one version label to another.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Delta {
    pub from: String,
    pub to: String,
    pub ops: Vec<DeltaOp>,
}

impl Delta {
    pub fn new(from: &str, to: &str, ops: Vec<DeltaOp>) -> Self {
        Delta {
            from: from.to_string(),
            to: to.to_string(),
            ops,
        }
    }

    /// Diffs `a` against `b` and labels the result `from..to`.
    pub fn between(
        from: &str,
        to: &str,
        a: &Metamodel,
        b: &Metamodel,
        hints: Option<&DeltaHints>,
    ) -> Result<Self, DeltaError> {
        Ok(Delta::new(from, to, diff_metamodel(a, b, hints)?))
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Concatenates deltas along a path. Labels come from the first and last.
    pub fn compose(parts: &[Delta]) -> Option<Delta> {
        let first = parts.first()?;
        let last = parts.last()?;
        Some(Delta {
            from: first.from.clone(),
            to: last.to.clone(),
            ops: parts.iter().flat_map(|d| d.ops.iter().cloned()).collect(),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, DeltaError> {
        serde_json::from_str(text).map_err(DeltaError::json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("delta serializes")
    }
}

/// Binding between two successive versions of one artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EvolutionLink {
    pub artifact: String,
    pub correspondence: Correspondence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "delta")]
pub enum Correspondence {
    /// The artifact is unchanged.
    Identity,
    /// Recorded delta for a changed metamodel.
    Delta(Delta),
    /// Changed, delta computed on demand.
    Changed,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeHint {
    /// Class name in the new metamodel.
    pub class: String,
    /// Feature names in the old metamodel, in declaration order.
    pub sources: Vec<String>,
    /// Feature name in the new metamodel.
    pub target: String,
}

/// Rename and merge declarations guiding [`diff_metamodel`].
///
/// `renames` maps `OldClass` to `NewClass`, or `OldClass.oldFeature` to
/// `newFeature`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaHints {
    #[serde(default)]
    pub renames: BTreeMap<String, String>,
    #[serde(default)]
    pub merges: Vec<MergeHint>,
}

impl DeltaHints {
    pub fn from_json(text: &str) -> Result<Self, DeltaError> {
        serde_json::from_str(text).map_err(DeltaError::json)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("hints serialize")
    }

    pub fn is_empty(&self) -> bool {
        self.renames.is_empty() && self.merges.is_empty()
    }
}

fn op_error(index: usize, op: &DeltaOp, reason: impl Into<String>) -> DeltaError {
    DeltaError::Op {
        index,
        op: op.to_string(),
        reason: reason.into(),
    }
}

/// Applies one op in place. Only the op's own preconditions are checked;
/// whole-metamodel invariants are checked once at the end of [`apply_delta`].
pub(crate) fn apply_op(
    classes: &mut BTreeMap<String, MetaClass>,
    index: usize,
    op: &DeltaOp,
) -> Result<(), DeltaError> {
    let err = |reason: String| op_error(index, op, reason);
    fn class_mut<'a>(
        classes: &'a mut BTreeMap<String, MetaClass>,
        name: &str,
    ) -> Result<&'a mut MetaClass, String> {
        classes
            .get_mut(name)
            .ok_or_else(|| format!("class `{name}` does not exist"))
    }
    fn own_index(class: &MetaClass, feature: &str) -> Result<usize, String> {
        class
            .features
            .iter()
            .position(|f| f.name == feature)
            .ok_or_else(|| format!("`{}` has no own feature `{feature}`", class.name))
    }

    match op {
        DeltaOp::AddClass { class } => {
            if classes.contains_key(&class.name) {
                return Err(err(format!("class `{}` already exists", class.name)));
            }
            classes.insert(class.name.clone(), class.clone());
        }
        DeltaOp::DeleteClass { class } => {
            if classes.remove(class).is_none() {
                return Err(err(format!("class `{class}` does not exist")));
            }
        }
        DeltaOp::RenameClass { from, to } => {
            if classes.contains_key(to) {
                return Err(err(format!("class `{to}` already exists")));
            }
            let mut c = classes
                .remove(from)
                .ok_or_else(|| err(format!("class `{from}` does not exist")))?;
            c.name = to.clone();
            classes.insert(to.clone(), c);
            for c in classes.values_mut() {
                for s in c.supertypes.iter_mut().filter(|s| *s == from) {
                    *s = to.clone();
                }
                for f in c
                    .features
                    .iter_mut()
                    .filter(|f| f.kind == FeatureKind::Reference && &f.value_type == from)
                {
                    f.value_type = to.clone();
                }
            }
        }
        DeltaOp::AddFeature {
            class,
            feature,
            default_value,
        } => {
            let c = class_mut(classes, class).map_err(err)?;
            if c.own_feature(&feature.name).is_some() {
                return Err(err(format!(
                    "`{class}` already has feature `{}`",
                    feature.name
                )));
            }
            if let Some(v) = default_value {
                match feature.primitive() {
                    Some(p) if p.admits(v) => {}
                    Some(p) => {
                        return Err(err(format!("default {v} is not a {}", p.as_str())));
                    }
                    None => return Err(err("defaults are only allowed on attributes".into())),
                }
            }
            c.features.push(feature.clone());
        }
        DeltaOp::DeleteFeature { class, feature } => {
            let c = class_mut(classes, class).map_err(err)?;
            let i = own_index(c, feature).map_err(err)?;
            c.features.remove(i);
        }
        DeltaOp::RenameFeature { class, from, to } => {
            let c = class_mut(classes, class).map_err(err)?;
            if c.own_feature(to).is_some() {
                return Err(err(format!("`{class}` already has feature `{to}`")));
            }
            let i = own_index(c, from).map_err(err)?;
            c.features[i].name = to.clone();
        }
        DeltaOp::ChangeMultiplicity {
            class,
            feature,
            lower,
            upper,
        } => {
            if let Upper::Bounded(u) = upper {
                if lower > u {
                    return Err(err("lower bound exceeds upper bound".into()));
                }
            }
            let c = class_mut(classes, class).map_err(err)?;
            let i = own_index(c, feature).map_err(err)?;
            c.features[i].lower = *lower;
            c.features[i].upper = *upper;
        }
        DeltaOp::ChangeFeatureType {
            class,
            feature,
            value_type,
        } => {
            let c = class_mut(classes, class).map_err(err)?;
            let i = own_index(c, feature).map_err(err)?;
            c.features[i].value_type = value_type.clone();
        }
        DeltaOp::MergeFeatures {
            class,
            sources,
            target,
        } => {
            if sources.len() < 2 {
                return Err(err("a merge needs at least two source features".into()));
            }
            let distinct: BTreeSet<_> = sources.iter().collect();
            if distinct.len() != sources.len() {
                return Err(err("duplicate source feature".into()));
            }
            if target.kind != FeatureKind::Reference {
                return Err(err("merge target must be a reference".into()));
            }
            let view = Metamodel::from_parts_unchecked(String::new(), classes.clone());
            let c = class_mut(classes, class).map_err(err)?;
            for s in sources {
                let i = own_index(c, s).map_err(err)?;
                let f = &c.features[i];
                if f.kind != FeatureKind::Reference {
                    return Err(err(format!("source `{s}` is not a reference")));
                }
                if f.containment != target.containment {
                    return Err(err(format!(
                        "source `{s}` differs from target in containment"
                    )));
                }
                if !view.is_subclass(&f.value_type, &target.value_type) {
                    return Err(err(format!(
                        "`{}` is not a supertype of source `{s}: {}`",
                        target.value_type, f.value_type
                    )));
                }
            }
            c.features.retain(|f| !sources.contains(&f.name));
            if c.own_feature(&target.name).is_some() {
                return Err(err(format!(
                    "`{class}` already has feature `{}`",
                    target.name
                )));
            }
            c.features.push(target.clone());
        }
    }
    Ok(())
}

/// Replays `delta` on `mm`. Fails with the index of the first op whose
/// preconditions do not hold, or if the final metamodel is invalid.
pub fn apply_delta(mm: &Metamodel, delta: &Delta) -> Result<Metamodel, DeltaError> {
    let mut classes: BTreeMap<String, MetaClass> =
        mm.classes().map(|c| (c.name.clone(), c.clone())).collect();
    for (i, op) in delta.ops.iter().enumerate() {
        apply_op(&mut classes, i, op)?;
    }
    let out = Metamodel::from_parts_unchecked(mm.name().to_string(), classes);
    out.validate().map_err(DeltaError::InvalidResult)?;
    Ok(out)
}

struct ResolvedHints {
    /// old class -> new class
    class_renames: BTreeMap<String, String>,
    /// (new class, old feature) -> new feature
    feature_renames: BTreeMap<(String, String), String>,
    /// new class -> merges on it
    merges: BTreeMap<String, Vec<MergeHint>>,
}

fn resolve_hints(
    a: &Metamodel,
    b: &Metamodel,
    hints: &DeltaHints,
) -> Result<ResolvedHints, DeltaError> {
    let bad = |m: String| DeltaError::InconsistentHints(m);
    let mut class_renames = BTreeMap::new();
    let mut feature_hints = Vec::new();
    for (old, new) in &hints.renames {
        match old.split_once('.') {
            None => {
                if !a.contains_class(old) {
                    return Err(bad(format!(
                        "renamed class `{old}` is absent from the old metamodel"
                    )));
                }
                if !b.contains_class(new) {
                    return Err(bad(format!(
                        "rename target `{new}` is absent from the new metamodel"
                    )));
                }
                if b.contains_class(old) || a.contains_class(new) {
                    return Err(bad(format!(
                        "rename `{old}` -> `{new}` must map a removed class onto an added one"
                    )));
                }
                class_renames.insert(old.clone(), new.clone());
            }
            Some((class, feature)) => {
                let new_feature = new.rsplit('.').next().unwrap_or(new).to_string();
                feature_hints.push((class.to_string(), feature.to_string(), new_feature));
            }
        }
    }
    let targets: BTreeSet<_> = class_renames.values().collect();
    if targets.len() != class_renames.len() {
        return Err(bad("two classes renamed onto the same name".into()));
    }
    let map_class = |old: &str| {
        class_renames
            .get(old)
            .cloned()
            .unwrap_or_else(|| old.to_string())
    };

    let mut feature_renames = BTreeMap::new();
    for (old_class, old_feature, new_feature) in feature_hints {
        let ca = a.class(&old_class).ok_or_else(|| {
            bad(format!(
                "class `{old_class}` is absent from the old metamodel"
            ))
        })?;
        let new_class = map_class(&old_class);
        let cb = b.class(&new_class).ok_or_else(|| {
            bad(format!(
                "class `{new_class}` is absent from the new metamodel"
            ))
        })?;
        let fa = ca.own_feature(&old_feature).ok_or_else(|| {
            bad(format!(
                "renamed feature `{old_class}.{old_feature}` is absent"
            ))
        })?;
        let fb = cb.own_feature(&new_feature).ok_or_else(|| {
            bad(format!(
                "rename target `{new_class}.{new_feature}` is absent"
            ))
        })?;
        if cb.own_feature(&old_feature).is_some() || ca.own_feature(&new_feature).is_some() {
            return Err(bad(format!(
                "rename `{old_class}.{old_feature}` -> `{new_feature}` must map a removed feature onto an added one"
            )));
        }
        if fa.kind != fb.kind || fa.containment != fb.containment {
            return Err(bad(format!(
                "rename `{old_class}.{old_feature}` -> `{new_feature}` changes kind or containment"
            )));
        }
        feature_renames.insert((new_class, old_feature), new_feature);
    }

    let mut merges: BTreeMap<String, Vec<MergeHint>> = BTreeMap::new();
    for m in &hints.merges {
        let old_class = class_renames
            .iter()
            .find(|(_, n)| **n == m.class)
            .map(|(o, _)| o.clone())
            .unwrap_or_else(|| m.class.clone());
        let ca = a.class(&old_class).ok_or_else(|| {
            bad(format!(
                "merge class `{}` is absent from the old metamodel",
                m.class
            ))
        })?;
        let cb = b.class(&m.class).ok_or_else(|| {
            bad(format!(
                "merge class `{}` is absent from the new metamodel",
                m.class
            ))
        })?;
        if m.sources.len() < 2 {
            return Err(bad(format!(
                "merge into `{}` needs at least two sources",
                m.target
            )));
        }
        for s in &m.sources {
            if ca.own_feature(s).is_none() {
                return Err(bad(format!("merge source `{}.{s}` is absent", old_class)));
            }
            if cb.own_feature(s).is_some() {
                return Err(bad(format!(
                    "merge source `{}.{s}` still exists after the change",
                    m.class
                )));
            }
            if feature_renames.contains_key(&(m.class.clone(), s.clone())) {
                return Err(bad(format!("merge source `{s}` is also renamed")));
            }
        }
        if cb.own_feature(&m.target).is_none() {
            return Err(bad(format!(
                "merge target `{}.{}` is absent",
                m.class, m.target
            )));
        }
        if ca.own_feature(&m.target).is_some() {
            return Err(bad(format!(
                "merge target `{}.{}` already existed",
                m.class, m.target
            )));
        }
        merges.entry(m.class.clone()).or_default().push(m.clone());
    }

    Ok(ResolvedHints {
        class_renames,
        feature_renames,
        merges,
    })
}

/// Computes the op list turning `a` into `b`, in canonical order.
///
/// Without hints, classes and features are matched by name, so renames show
/// up as delete + add. A class whose supertypes or abstractness change is
/// replaced (delete + add).
pub fn diff_metamodel(
    a: &Metamodel,
    b: &Metamodel,
    hints: Option<&DeltaHints>,
) -> Result<Vec<DeltaOp>, DeltaError> {
    let empty = DeltaHints::default();
    let resolved = resolve_hints(a, b, hints.unwrap_or(&empty))?;

    // Classes whose abstractness or supertypes change are replaced, which
    // cancels any rename hint on them; that in turn can change how other
    // classes' supertype lists map, so iterate to a fixpoint.
    let mut renames = resolved.class_renames.clone();
    let mut replaced: BTreeSet<String> = BTreeSet::new();
    loop {
        let map_class = |old: &str| renames.get(old).cloned().unwrap_or_else(|| old.to_string());
        let mut changed = false;
        for ca in a.classes() {
            let new_name = map_class(&ca.name);
            let Some(cb) = b.class(&new_name) else {
                continue;
            };
            let supers: Vec<String> = ca.supertypes.iter().map(|s| map_class(s)).collect();
            if (ca.is_abstract != cb.is_abstract || supers != cb.supertypes)
                && replaced.insert(ca.name.clone())
            {
                changed = true;
            }
        }
        let before = renames.len();
        renames.retain(|old, _| !replaced.contains(old));
        if !changed && renames.len() == before {
            break;
        }
    }
    let map_class = |old: &str| renames.get(old).cloned().unwrap_or_else(|| old.to_string());

    let mut ops = Vec::new();
    let mut matched_b = BTreeSet::new();
    for ca in a.classes() {
        let new_name = map_class(&ca.name);
        let Some(cb) = b.class(&new_name) else {
            ops.push(DeltaOp::DeleteClass {
                class: ca.name.clone(),
            });
            continue;
        };
        matched_b.insert(new_name.clone());
        if replaced.contains(&ca.name) {
            ops.push(DeltaOp::DeleteClass {
                class: ca.name.clone(),
            });
            ops.push(DeltaOp::AddClass { class: cb.clone() });
            continue;
        }
        if ca.name != new_name {
            ops.push(DeltaOp::RenameClass {
                from: ca.name.clone(),
                to: new_name.clone(),
            });
        }
        diff_features(ca, cb, &resolved, &map_class, &mut ops);
    }
    for cb in b.classes() {
        if !matched_b.contains(&cb.name) {
            ops.push(DeltaOp::AddClass { class: cb.clone() });
        }
    }

    ops.sort_by_key(DeltaOp::sort_key);

    // Postcondition: replaying the script reproduces `b`.
    let delta = Delta::new("", "", ops);
    match apply_delta(a, &delta) {
        Ok(out) if out.structurally_eq(b) => Ok(delta.ops),
        Ok(_) => Err(DeltaError::InconsistentHints(
            "hints do not describe the change between the two metamodels".into(),
        )),
        Err(e) => Err(DeltaError::InconsistentHints(format!(
            "hinted script does not apply: {e}"
        ))),
    }
}

fn diff_features(
    ca: &MetaClass,
    cb: &MetaClass,
    hints: &ResolvedHints,
    map_class: &dyn Fn(&str) -> String,
    ops: &mut Vec<DeltaOp>,
) {
    let class = cb.name.clone();
    let mut consumed_a = BTreeSet::new();
    let mut consumed_b = BTreeSet::new();

    for m in hints.merges.get(&class).into_iter().flatten() {
        let target = cb.own_feature(&m.target).expect("checked by resolve_hints");
        ops.push(DeltaOp::MergeFeatures {
            class: class.clone(),
            sources: m.sources.clone(),
            target: target.clone(),
        });
        consumed_a.extend(m.sources.iter().cloned());
        consumed_b.insert(m.target.clone());
    }

    for fa in &ca.features {
        if consumed_a.contains(&fa.name) {
            continue;
        }
        let renamed = hints
            .feature_renames
            .get(&(class.clone(), fa.name.clone()))
            .cloned();
        let new_name = renamed.clone().unwrap_or_else(|| fa.name.clone());
        let Some(fb) = cb
            .own_feature(&new_name)
            .filter(|_| !consumed_b.contains(&new_name))
        else {
            ops.push(DeltaOp::DeleteFeature {
                class: class.clone(),
                feature: fa.name.clone(),
            });
            continue;
        };
        consumed_b.insert(new_name.clone());
        if fa.kind != fb.kind || fa.containment != fb.containment {
            ops.push(DeltaOp::DeleteFeature {
                class: class.clone(),
                feature: fa.name.clone(),
            });
            ops.push(DeltaOp::AddFeature {
                class: class.clone(),
                feature: fb.clone(),
                default_value: None,
            });
            continue;
        }
        if renamed.is_some() {
            ops.push(DeltaOp::RenameFeature {
                class: class.clone(),
                from: fa.name.clone(),
                to: new_name.clone(),
            });
        }
        if fa.lower != fb.lower || fa.upper != fb.upper {
            ops.push(DeltaOp::ChangeMultiplicity {
                class: class.clone(),
                feature: new_name.clone(),
                lower: fb.lower,
                upper: fb.upper,
            });
        }
        let mapped_type = match fa.kind {
            FeatureKind::Reference => map_class(&fa.value_type),
            FeatureKind::Attribute => fa.value_type.clone(),
        };
        if mapped_type != fb.value_type {
            ops.push(DeltaOp::ChangeFeatureType {
                class: class.clone(),
                feature: new_name.clone(),
                value_type: fb.value_type.clone(),
            });
        }
    }

    for fb in &cb.features {
        if !consumed_b.contains(&fb.name) {
            ops.push(DeltaOp::AddFeature {
                class: class.clone(),
                feature: fb.clone(),
                default_value: None,
            });
        }
    }
}

/// Impact of one delta op on models conforming to the metamodel it applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImpactClass {
    NonBreaking,
    BreakingResolvable,
    BreakingUnresolvable,
}

impl fmt::Display for ImpactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ImpactClass::NonBreaking => "non_breaking",
            ImpactClass::BreakingResolvable => "breaking_resolvable",
            ImpactClass::BreakingUnresolvable => "breaking_unresolvable",
        })
    }
}

/// Impact judged from the op and the metamodel alone. Conditional cases
/// (narrowing, merges) are rated unresolvable.
pub fn classify_static(op: &DeltaOp, before: &Metamodel) -> ImpactClass {
    use ImpactClass::*;
    match op {
        DeltaOp::AddClass { .. } => NonBreaking,
        DeltaOp::AddFeature {
            feature,
            default_value,
            ..
        } => {
            if feature.lower == 0 {
                NonBreaking
            } else if default_value.is_some() {
                BreakingResolvable
            } else {
                BreakingUnresolvable
            }
        }
        DeltaOp::RenameClass { .. }
        | DeltaOp::RenameFeature { .. }
        | DeltaOp::DeleteClass { .. }
        | DeltaOp::DeleteFeature { .. } => BreakingResolvable,
        DeltaOp::ChangeMultiplicity {
            class,
            feature,
            lower,
            upper,
        } => match before.class(class).and_then(|c| c.own_feature(feature)) {
            Some(old) if *lower <= old.lower && *upper >= old.upper => BreakingResolvable,
            _ => BreakingUnresolvable,
        },
        DeltaOp::ChangeFeatureType {
            class,
            feature,
            value_type,
        } => match before.class(class).and_then(|c| c.own_feature(feature)) {
            Some(old)
                if old.kind == FeatureKind::Reference
                    && before.is_subclass(&old.value_type, value_type) =>
            {
                BreakingResolvable
            }
            _ => BreakingUnresolvable,
        },
        DeltaOp::MergeFeatures { .. } => BreakingUnresolvable,
    }
}

/// Impact of `op` applied to `before`. With instance data, an op that would
/// otherwise be breaking is resolvable exactly when migrating `instances`
/// across it needs no human decision.
pub fn classify(
    op: &DeltaOp,
    before: &Metamodel,
    instances: Option<&ModelInstance>,
) -> ImpactClass {
    let base = classify_static(op, before);
    match (base, instances) {
        (ImpactClass::NonBreaking, _) | (_, None) => base,
        (_, Some(model)) => {
            if crate::migration::op_needs_decision(model, before, op) {
                ImpactClass::BreakingUnresolvable
            } else {
                ImpactClass::BreakingResolvable
            }
        }
    }
}

/// Classifies every op of `delta` in sequence, threading the metamodel (and
/// the provisionally migrated instances) through the ops.
pub fn classify_delta(
    mm: &Metamodel,
    delta: &Delta,
    instances: Option<&ModelInstance>,
) -> Result<Vec<ImpactClass>, DeltaError> {
    match instances {
        Some(model) => crate::migration::classify_sequence(model, mm, delta),
        None => {
            let mut classes: BTreeMap<String, MetaClass> =
                mm.classes().map(|c| (c.name.clone(), c.clone())).collect();
            let mut out = Vec::new();
            for (i, op) in delta.ops.iter().enumerate() {
                let view = Metamodel::from_parts_unchecked(mm.name().to_string(), classes.clone());
                out.push(classify_static(op, &view));
                apply_op(&mut classes, i, op)?;
            }
            Ok(out)
        }
    }
}
